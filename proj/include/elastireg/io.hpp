#pragma once

#include <string>

#include "elastireg/grid.hpp"
#include "elastireg/metrics.hpp"

#include "json.hpp"

namespace elastireg {

// RVOL volume format: a text header (key=value lines) plus a raw
// little-endian payload in a sibling file, `<header>.raw` by default.
// See docs/formats.md for the exact layout.

void save_volume(const std::string& path, const ScalarGrid& grid);
ScalarGrid load_volume(const std::string& path);

void save_field(const std::string& path, const DisplacementField& field);
DisplacementField load_field(const std::string& path);

void save_labels(const std::string& path, const LabelGrid& labels);
LabelGrid load_labels(const std::string& path);

// Keypoint CSV with header "x_mm,y_mm,z_mm"; 2-D sets store z_mm = 0.
void save_keypoints(const std::string& path, const KeypointSet& points);
KeypointSet load_keypoints(const std::string& path);

// Clip to [clip_low, clip_high], then min-max scale so the clip bounds map
// to exactly 0 and 1.
ScalarGrid preprocess(const ScalarGrid& grid, double clip_low = -1100.0,
                      double clip_high = 1518.0);

nlohmann::json metrics_to_json(const MetricsReport& report);

// {"error": {"message": ..., "context": ...}} for machine-parsable stderr.
nlohmann::json error_json(const std::string& message, const std::string& context = "");

}  // namespace elastireg
