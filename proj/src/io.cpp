#include "elastireg/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace elastireg {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct RvolHeader {
    std::vector<int> dims;
    std::vector<double> spacing;
    std::string dtype;
    int components = 1;
    std::string data_path;  // resolved payload path
};

void write_rvol(const std::string& path, const std::vector<int>& dims,
                const std::vector<double>& spacing, const std::string& dtype, int components,
                const void* payload, std::size_t bytes) {
    std::ofstream header(path);
    if (!header) throw std::runtime_error("rvol: cannot open " + path + " for writing");
    header << "RVOL1\n";
    header << "dims=";
    for (std::size_t i = 0; i < dims.size(); ++i) header << (i ? "," : "") << dims[i];
    header << "\nspacing=";
    for (std::size_t i = 0; i < spacing.size(); ++i) {
        header << (i ? "," : "") << fmt_double(spacing[i]);
    }
    header << "\ndtype=" << dtype << "\n";
    header << "order=x-fastest\n";
    header << "components=" << components << "\n";
    header << "endian=little\n";
    if (!header) throw std::runtime_error("rvol: write failed for " + path);
    header.close();

    const std::string raw_path = path + ".raw";
    std::ofstream raw(raw_path, std::ios::binary);
    if (!raw) throw std::runtime_error("rvol: cannot open " + raw_path + " for writing");
    raw.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
    if (!raw) throw std::runtime_error("rvol: write failed for " + raw_path);
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, sep)) parts.push_back(item);
    return parts;
}

RvolHeader read_rvol_header(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("rvol: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "RVOL1") {
        throw std::runtime_error("rvol: missing RVOL1 magic in " + path);
    }

    RvolHeader h;
    std::string data_key;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("rvol: malformed header line '" + line + "' in " + path);
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "dims") {
            for (const std::string& p : split(value, ',')) h.dims.push_back(std::stoi(p));
        } else if (key == "spacing") {
            for (const std::string& p : split(value, ',')) h.spacing.push_back(std::stod(p));
        } else if (key == "dtype") {
            h.dtype = value;
        } else if (key == "order") {
            if (value != "x-fastest") {
                throw std::runtime_error("rvol: unsupported order '" + value + "'");
            }
        } else if (key == "components") {
            h.components = std::stoi(value);
        } else if (key == "endian") {
            if (value != "little") {
                throw std::runtime_error("rvol: unsupported endianness '" + value + "'");
            }
        } else if (key == "data") {
            data_key = value;
        } else {
            throw std::runtime_error("rvol: unknown header key '" + key + "' in " + path);
        }
    }

    if (h.dims.size() != 2 && h.dims.size() != 3) {
        throw std::runtime_error("rvol: dims must list 2 or 3 axes in " + path);
    }
    if (h.spacing.size() != h.dims.size()) {
        throw std::runtime_error("rvol: spacing axis count does not match dims in " + path);
    }
    if (h.dtype != "float32" && h.dtype != "int32") {
        throw std::runtime_error("rvol: unknown dtype '" + h.dtype + "' in " + path);
    }

    if (data_key.empty()) {
        h.data_path = path + ".raw";
    } else {
        const std::filesystem::path base = std::filesystem::path(path).parent_path();
        h.data_path = (base / data_key).string();
    }
    return h;
}

std::vector<char> read_payload(const RvolHeader& h, std::size_t value_size) {
    std::size_t count = static_cast<std::size_t>(h.components);
    for (int dim : h.dims) count *= static_cast<std::size_t>(dim);
    const std::size_t expected = count * value_size;

    std::ifstream raw(h.data_path, std::ios::binary | std::ios::ate);
    if (!raw) throw std::runtime_error("rvol: cannot open payload " + h.data_path);
    const std::size_t actual = static_cast<std::size_t>(raw.tellg());
    if (actual != expected) {
        throw std::runtime_error("rvol: payload " + h.data_path + " holds " +
                                 std::to_string(actual) + " bytes, expected " +
                                 std::to_string(expected));
    }
    raw.seekg(0);
    std::vector<char> bytes(expected);
    raw.read(bytes.data(), static_cast<std::streamsize>(expected));
    if (!raw) throw std::runtime_error("rvol: short read from " + h.data_path);
    return bytes;
}

GridDomain domain_from_header(const RvolHeader& h) {
    std::array<int, 3> dims{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    for (std::size_t a = 0; a < h.dims.size(); ++a) {
        dims[a] = h.dims[a];
        spacing[a] = h.spacing[a];
    }
    return GridDomain(static_cast<int>(h.dims.size()), dims, spacing);
}

std::vector<int> header_dims(const GridDomain& d) {
    std::vector<int> dims(static_cast<std::size_t>(d.dim));
    for (int a = 0; a < d.dim; ++a) dims[static_cast<std::size_t>(a)] = d.dims[a];
    return dims;
}

std::vector<double> header_spacing(const GridDomain& d) {
    std::vector<double> spacing(static_cast<std::size_t>(d.dim));
    for (int a = 0; a < d.dim; ++a) spacing[static_cast<std::size_t>(a)] = d.spacing[a];
    return spacing;
}

}  // namespace

void save_volume(const std::string& path, const ScalarGrid& grid) {
    std::vector<float> payload(grid.values.begin(), grid.values.end());
    write_rvol(path, header_dims(grid.domain), header_spacing(grid.domain), "float32", 1,
               payload.data(), payload.size() * sizeof(float));
}

ScalarGrid load_volume(const std::string& path) {
    const RvolHeader h = read_rvol_header(path);
    if (h.dtype != "float32" || h.components != 1) {
        throw std::runtime_error("rvol: " + path + " is not a scalar float32 volume");
    }
    const std::vector<char> bytes = read_payload(h, sizeof(float));
    const float* data = reinterpret_cast<const float*>(bytes.data());
    const GridDomain d = domain_from_header(h);
    std::vector<double> values(d.voxel_count());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = data[i];
    ScalarGrid grid(d, std::move(values));
    require_finite(grid.values, "load_volume");
    return grid;
}

void save_field(const std::string& path, const DisplacementField& field) {
    std::vector<float> payload(field.vectors.begin(), field.vectors.end());
    write_rvol(path, header_dims(field.domain), header_spacing(field.domain), "float32",
               field.domain.dim, payload.data(), payload.size() * sizeof(float));
}

DisplacementField load_field(const std::string& path) {
    const RvolHeader h = read_rvol_header(path);
    const GridDomain d = domain_from_header(h);
    if (h.dtype != "float32" || h.components != d.dim) {
        throw std::runtime_error("rvol: " + path + " is not a float32 field with D components");
    }
    const std::vector<char> bytes = read_payload(h, sizeof(float));
    const float* data = reinterpret_cast<const float*>(bytes.data());
    std::vector<double> values(static_cast<std::size_t>(d.dim) * d.voxel_count());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = data[i];
    DisplacementField field(d, std::move(values));
    require_finite(field.vectors, "load_field");
    return field;
}

void save_labels(const std::string& path, const LabelGrid& labels) {
    write_rvol(path, header_dims(labels.domain), header_spacing(labels.domain), "int32", 1,
               labels.labels.data(), labels.labels.size() * sizeof(std::int32_t));
}

LabelGrid load_labels(const std::string& path) {
    const RvolHeader h = read_rvol_header(path);
    if (h.dtype != "int32" || h.components != 1) {
        throw std::runtime_error("rvol: " + path + " is not an int32 label volume");
    }
    const std::vector<char> bytes = read_payload(h, sizeof(std::int32_t));
    const std::int32_t* data = reinterpret_cast<const std::int32_t*>(bytes.data());
    const GridDomain d = domain_from_header(h);
    std::vector<std::int32_t> labels(data, data + d.voxel_count());
    return LabelGrid(d, std::move(labels));
}

void save_keypoints(const std::string& path, const KeypointSet& points) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("keypoints: cannot open " + path + " for writing");
    out << "x_mm,y_mm,z_mm\n";
    for (const auto& p : points.points_mm) {
        out << fmt_double(p[0]) << "," << fmt_double(p[1]) << "," << fmt_double(p[2]) << "\n";
    }
    if (!out) throw std::runtime_error("keypoints: write failed for " + path);
}

KeypointSet load_keypoints(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("keypoints: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "x_mm,y_mm,z_mm") {
        throw std::runtime_error("keypoints: missing 'x_mm,y_mm,z_mm' header in " + path);
    }
    KeypointSet set;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const std::vector<std::string> parts = split(line, ',');
        if (parts.size() != 3) {
            throw std::runtime_error("keypoints: row " + std::to_string(row) + " in " + path +
                                     " does not have 3 columns");
        }
        std::array<double, 3> p{};
        for (int a = 0; a < 3; ++a) {
            p[static_cast<std::size_t>(a)] = std::stod(parts[static_cast<std::size_t>(a)]);
            if (!std::isfinite(p[static_cast<std::size_t>(a)])) {
                throw std::runtime_error("keypoints: non-finite coordinate at row " +
                                         std::to_string(row) + " in " + path);
            }
        }
        set.points_mm.push_back(p);
    }
    if (set.points_mm.empty()) {
        throw std::runtime_error("keypoints: " + path + " holds no points");
    }
    return set;
}

ScalarGrid preprocess(const ScalarGrid& grid, double clip_low, double clip_high) {
    if (!(clip_low < clip_high)) {
        throw std::invalid_argument("preprocess: clip range is degenerate");
    }
    ScalarGrid out(grid.domain);
    const double range = clip_high - clip_low;
    for (std::size_t i = 0; i < grid.values.size(); ++i) {
        const double clipped = std::clamp(grid.values[i], clip_low, clip_high);
        out.values[i] = (clipped - clip_low) / range;
    }
    return out;
}

nlohmann::json metrics_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["dice_mean"] = report.dice_mean ? nlohmann::json(*report.dice_mean) : nlohmann::json();
    j["tre_mean_mm"] =
        report.tre_mean_mm ? nlohmann::json(*report.tre_mean_mm) : nlohmann::json();
    j["tre_std_mm"] = report.tre_std_mm ? nlohmann::json(*report.tre_std_mm) : nlohmann::json();
    j["neg_jac_fraction"] = report.neg_jac_fraction;
    nlohmann::json per_label = nlohmann::json::object();
    for (const auto& [label, value] : report.dice_per_label) {
        per_label[std::to_string(label)] = value;
    }
    j["dice_per_label"] = per_label;
    return j;
}

nlohmann::json error_json(const std::string& message, const std::string& context) {
    nlohmann::json j;
    j["error"]["message"] = message;
    if (!context.empty()) j["error"]["context"] = context;
    return j;
}

}  // namespace elastireg
