// elastireg command line: phantom generation, registration, amortizer
// training, parameter sweeps, and metric evaluation over RVOL volumes.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "elastireg/amortizer.hpp"
#include "elastireg/energy.hpp"
#include "elastireg/grid_ops.hpp"
#include "elastireg/io.hpp"
#include "elastireg/metrics.hpp"
#include "elastireg/parallel.hpp"
#include "elastireg/phantom.hpp"
#include "elastireg/registration.hpp"
#include "elastireg/rng.hpp"
#include "elastireg/sweep.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CaseFlags {
    std::string case_dir;
    std::string fixed, moving;
    std::string fixed_labels, moving_labels;
    std::string fixed_keypoints, moving_keypoints;
};

void add_case_flags(CLI::App* cmd, CaseFlags& flags) {
    cmd->add_option("--case", flags.case_dir,
                    "Case directory with fixed.rvol, moving.rvol and optional "
                    "labels/keypoints (as written by `phantom`)");
    cmd->add_option("--fixed", flags.fixed, "Fixed volume (RVOL header path)");
    cmd->add_option("--moving", flags.moving, "Moving volume (RVOL header path)");
    cmd->add_option("--fixed-labels", flags.fixed_labels, "Fixed label volume (int32 RVOL)");
    cmd->add_option("--moving-labels", flags.moving_labels, "Moving label volume (int32 RVOL)");
    cmd->add_option("--fixed-keypoints", flags.fixed_keypoints, "Fixed keypoint CSV");
    cmd->add_option("--moving-keypoints", flags.moving_keypoints, "Moving keypoint CSV");
}

elastireg::SweepCase load_case(const CaseFlags& flags) {
    CaseFlags f = flags;
    if (!f.case_dir.empty()) {
        const fs::path dir(f.case_dir);
        auto fill = [&](std::string& slot, const char* name, bool required) {
            if (!slot.empty()) return;
            const fs::path p = dir / name;
            if (fs::exists(p)) {
                slot = p.string();
            } else if (required) {
                throw std::runtime_error("case directory " + f.case_dir + " is missing " + name);
            }
        };
        fill(f.fixed, "fixed.rvol", true);
        fill(f.moving, "moving.rvol", true);
        fill(f.fixed_labels, "fixed_labels.rvol", false);
        fill(f.moving_labels, "moving_labels.rvol", false);
        fill(f.fixed_keypoints, "fixed_keypoints.csv", false);
        fill(f.moving_keypoints, "moving_keypoints.csv", false);
    }
    if (f.fixed.empty() || f.moving.empty()) {
        throw std::runtime_error("a fixed and a moving volume are required "
                                 "(--fixed/--moving or --case)");
    }

    elastireg::SweepCase c;
    c.fixed = elastireg::load_volume(f.fixed);
    c.moving = elastireg::load_volume(f.moving);
    if (!f.fixed_labels.empty()) c.fixed_labels = elastireg::load_labels(f.fixed_labels);
    if (!f.moving_labels.empty()) c.moving_labels = elastireg::load_labels(f.moving_labels);
    if (!f.fixed_keypoints.empty()) {
        c.fixed_keypoints = elastireg::load_keypoints(f.fixed_keypoints);
    }
    if (!f.moving_keypoints.empty()) {
        c.moving_keypoints = elastireg::load_keypoints(f.moving_keypoints);
    }
    return c;
}

elastireg::MetricsReport case_metrics(const elastireg::SweepCase& c,
                                      const elastireg::DisplacementField& field) {
    return elastireg::evaluate_metrics(
        field, c.fixed_labels ? &*c.fixed_labels : nullptr,
        c.moving_labels ? &*c.moving_labels : nullptr,
        c.fixed_keypoints ? &*c.fixed_keypoints : nullptr,
        c.moving_keypoints ? &*c.moving_keypoints : nullptr);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<int> parse_dims(const std::string& text) {
    std::vector<int> dims;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) dims.push_back(std::stoi(item));
    if (dims.size() != 2 && dims.size() != 3) {
        throw std::runtime_error("--dims must list 2 or 3 comma-separated sizes");
    }
    return dims;
}

int resolve_jobs(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("ELASTIREG_JOBS")) {
        const int j = std::atoi(env);
        if (j > 0) return j;
    }
    return 1;
}

// Flat key=value config mirroring the subcommand's flags; values already
// given on the command line win.
void apply_flat_config(CLI::App* sub, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config: line " + std::to_string(row) + " in " + path +
                                     " is not key=value");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        CLI::Option* op = sub->get_option_no_throw("--" + key);
        if (op == nullptr) {
            throw std::runtime_error("config: unknown key '" + key + "' for subcommand " +
                                     sub->get_name());
        }
        if (op->count() > 0) continue;  // command line wins
        op->add_result(value);
        op->run_callback();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"elastireg: deformable registration with learned elastic regularization"};
    app.require_subcommand(1);

    int jobs = 0;
    app.add_option("--jobs", jobs, "Worker threads (default: ELASTIREG_JOBS or 1)");

    // ---- phantom ----------------------------------------------------------
    auto* cmd_phantom = app.add_subcommand("phantom", "Generate a synthetic ground-truth case");
    std::string ph_out, ph_dims = "64,64", ph_spacing, ph_pattern = "gaussian-blobs";
    std::string ph_family = "gaussian-bump";
    elastireg::PhantomSpec ph_spec;
    bool ph_allow_folding = false;
    cmd_phantom->add_option("--out", ph_out, "Output case directory")->required();
    cmd_phantom->add_option("--dims", ph_dims, "Grid size, e.g. 64,64 or 32,32,24");
    cmd_phantom->add_option("--spacing", ph_spacing, "Voxel spacing in mm, e.g. 1.5,1.5");
    cmd_phantom->add_option("--pattern", ph_pattern, "gaussian-blobs | checker-smooth");
    cmd_phantom->add_option("--field", ph_family, "affine | gaussian-bump | rotation");
    cmd_phantom->add_option("--amplitude", ph_spec.amplitude, "Bump peak displacement (voxels)");
    cmd_phantom->add_option("--sigma", ph_spec.bump_sigma, "Bump width (voxels, 0 = auto)");
    cmd_phantom->add_option("--angle", ph_spec.angle_deg, "Rotation angle (degrees)");
    cmd_phantom->add_option("--blobs", ph_spec.blob_count, "Number of blobs");
    cmd_phantom->add_option("--period", ph_spec.checker_period,
                            "Checker period (voxels, 0 = auto)");
    cmd_phantom->add_option("--seed", ph_spec.seed, "Phantom seed");
    cmd_phantom->add_option("--field-seed", ph_spec.field_seed,
                            "Separate seed for the field geometry (0 = use --seed)");
    cmd_phantom->add_flag("--allow-folding", ph_allow_folding,
                          "Skip the invertibility check of the true field");

    // ---- register ---------------------------------------------------------
    auto* cmd_register = app.add_subcommand("register", "Instance-optimize one pair (eq. 5)");
    CaseFlags reg_case;
    add_case_flags(cmd_register, reg_case);
    double reg_lambda = 0.1, reg_mu = 0.1;
    elastireg::OptimizerConfig reg_config;
    std::string reg_out_field, reg_out_report, reg_regularizer = "elastic";
    cmd_register->add_option("--lambda", reg_lambda, "lambda_a weight");
    cmd_register->add_option("--mu", reg_mu, "mu_a weight");
    cmd_register->add_option("--lr", reg_config.learning_rate, "Adam learning rate");
    cmd_register->add_option("--steps", reg_config.steps, "Optimization steps");
    cmd_register->add_option("--window", reg_config.ncc_window, "NCC window (odd)");
    cmd_register->add_option("--levels", reg_config.pyramid_levels, "Pyramid levels");
    cmd_register->add_option("--tol", reg_config.convergence_tol,
                             "Relative loss-change early-stop tolerance (0 = off)");
    cmd_register->add_option("--regularizer", reg_regularizer, "elastic | diffusion");
    cmd_register->add_option("--seed", reg_config.seed, "Run seed");
    cmd_register->add_option("--out-field", reg_out_field, "Write the field (RVOL)");
    cmd_register->add_option("--out-report", reg_out_report,
                             "Write loss trace and terms (JSON)");

    // ---- train ------------------------------------------------------------
    auto* cmd_train = app.add_subcommand("train", "Train the amortized hypernetwork");
    std::vector<std::string> train_cases;
    std::vector<std::string> train_pairs;
    elastireg::OptimizerConfig train_config;
    train_config.learning_rate = 1e-3;
    train_config.steps = 2000;
    std::uint64_t train_seed = 7;
    int train_hidden = 32;
    double train_scale = 5.0;
    std::string train_out;
    cmd_train->add_option("--train-case", train_cases, "Case directory (repeatable)");
    cmd_train->add_option("--pair", train_pairs,
                          "fixed.rvol:moving.rvol volume pair (repeatable)");
    cmd_train->add_option("--steps", train_config.steps, "Training steps");
    cmd_train->add_option("--lr", train_config.learning_rate, "Adam learning rate");
    cmd_train->add_option("--lr-decay", train_config.lr_decay,
                          "Final/initial learning-rate ratio, linear schedule (1 = constant)");
    cmd_train->add_option("--window", train_config.ncc_window, "NCC window (odd)");
    cmd_train->add_option("--hidden", train_hidden, "Hidden width of both networks");
    cmd_train->add_option("--scale", train_scale, "Max-displacement factor (voxels)");
    cmd_train->add_option("--seed", train_seed, "Init and sampling seed");
    cmd_train->add_option("--out", train_out, "Checkpoint path")->required();

    // ---- sweep ------------------------------------------------------------
    auto* cmd_sweep = app.add_subcommand("sweep", "Grid search over (lambda_a, mu_a)");
    std::vector<std::string> sweep_case_dirs;
    CaseFlags sweep_single;
    add_case_flags(cmd_sweep, sweep_single);
    cmd_sweep->add_option("--cases", sweep_case_dirs, "Additional case directories (repeatable)");
    double sweep_resolution = 0.1;
    std::string sweep_engine = "amortized", sweep_model;
    std::vector<std::string> sweep_heuristics;
    bool sweep_refine = false;
    elastireg::OptimizerConfig sweep_config;
    std::string sweep_out_csv, sweep_out_json;
    cmd_sweep->add_option("--resolution", sweep_resolution, "Grid resolution (1/res integral)");
    cmd_sweep->add_option("--engine", sweep_engine, "amortized | instance");
    cmd_sweep->add_option("--model", sweep_model, "Checkpoint for the amortized engine");
    cmd_sweep->add_option("--heuristic", sweep_heuristics,
                          "dice | tre | weighted:<wd>,<wt>,<wn> (repeatable; default dice, tre)");
    cmd_sweep->add_flag("--refine", sweep_refine,
                        "Second pass at resolution/5 around the first optimum");
    cmd_sweep->add_option("--lr", sweep_config.learning_rate, "Instance-engine learning rate");
    cmd_sweep->add_option("--steps", sweep_config.steps, "Instance-engine steps");
    cmd_sweep->add_option("--window", sweep_config.ncc_window, "NCC window (odd)");
    cmd_sweep->add_option("--out-csv", sweep_out_csv, "Sweep table CSV path");
    cmd_sweep->add_option("--out-json", sweep_out_json, "Sweep report JSON path");

    // ---- evaluate ---------------------------------------------------------
    auto* cmd_evaluate = app.add_subcommand("evaluate", "Metrics for a saved field");
    CaseFlags eval_case;
    add_case_flags(cmd_evaluate, eval_case);
    std::string eval_field;
    cmd_evaluate->add_option("--field", eval_field, "Displacement field (RVOL)")->required();

    // Flat key=value config files mirroring the flags; the command line wins.
    std::map<const CLI::App*, std::string> config_paths;
    for (CLI::App* sub : {cmd_phantom, cmd_register, cmd_train, cmd_sweep, cmd_evaluate}) {
        sub->add_option("--config", config_paths[sub],
                        "Flat key=value config file; command line overrides it");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\nRun with --help for usage.\n";
        return 2;
    }

    try {
        for (CLI::App* sub : {cmd_phantom, cmd_register, cmd_train, cmd_sweep, cmd_evaluate}) {
            if (*sub && !config_paths[sub].empty()) apply_flat_config(sub, config_paths[sub]);
        }
        elastireg::set_threads(resolve_jobs(jobs));

        if (*cmd_phantom) {
            if (ph_pattern == "gaussian-blobs") {
                ph_spec.pattern = elastireg::PhantomSpec::Pattern::GaussianBlobs;
            } else if (ph_pattern == "checker-smooth") {
                ph_spec.pattern = elastireg::PhantomSpec::Pattern::CheckerSmooth;
            } else {
                throw std::runtime_error("unknown pattern '" + ph_pattern + "'");
            }
            if (ph_family == "affine") {
                ph_spec.family = elastireg::PhantomSpec::FieldFamily::Affine;
            } else if (ph_family == "gaussian-bump") {
                ph_spec.family = elastireg::PhantomSpec::FieldFamily::GaussianBump;
            } else if (ph_family == "rotation") {
                ph_spec.family = elastireg::PhantomSpec::FieldFamily::Rotation;
            } else {
                throw std::runtime_error("unknown field family '" + ph_family + "'");
            }
            ph_spec.allow_folding = ph_allow_folding;

            const std::vector<int> dims = parse_dims(ph_dims);
            std::vector<double> spacing(dims.size(), 1.0);
            if (!ph_spacing.empty()) {
                std::istringstream is(ph_spacing);
                std::string item;
                spacing.clear();
                while (std::getline(is, item, ',')) spacing.push_back(std::stod(item));
                if (spacing.size() != dims.size()) {
                    throw std::runtime_error("--spacing must match --dims axis count");
                }
            }
            std::array<int, 3> d3{1, 1, 1};
            std::array<double, 3> s3{1.0, 1.0, 1.0};
            for (std::size_t a = 0; a < dims.size(); ++a) {
                d3[a] = dims[a];
                s3[a] = spacing[a];
            }
            ph_spec.domain = elastireg::GridDomain(static_cast<int>(dims.size()), d3, s3);

            const elastireg::Phantom phantom = elastireg::make_phantom(ph_spec);
            fs::create_directories(ph_out);
            const fs::path dir(ph_out);
            elastireg::save_volume((dir / "fixed.rvol").string(), phantom.fixed);
            elastireg::save_volume((dir / "moving.rvol").string(), phantom.moving);
            elastireg::save_field((dir / "true_field.rvol").string(), phantom.true_field);
            elastireg::save_labels((dir / "fixed_labels.rvol").string(), phantom.fixed_labels);
            elastireg::save_labels((dir / "moving_labels.rvol").string(), phantom.moving_labels);
            elastireg::save_keypoints((dir / "fixed_keypoints.csv").string(),
                                      phantom.fixed_keypoints);
            elastireg::save_keypoints((dir / "moving_keypoints.csv").string(),
                                      phantom.moving_keypoints);
            json j;
            j["pattern"] = ph_pattern;
            j["field"] = ph_family;
            j["seed"] = ph_spec.seed;
            j["keypoints"] = phantom.fixed_keypoints.size();
            write_text((dir / "phantom.json").string(), j.dump(2) + "\n");
            std::cout << j.dump() << "\n";
            return 0;
        }

        if (*cmd_register) {
            const elastireg::SweepCase c = load_case(reg_case);
            if (reg_regularizer == "diffusion") {
                reg_config.regularizer = elastireg::RegularizerKind::Diffusion;
            } else if (reg_regularizer != "elastic") {
                throw std::runtime_error("unknown regularizer '" + reg_regularizer + "'");
            }
            const elastireg::ElasticityParams params(reg_lambda, reg_mu);
            const elastireg::RegistrationResult result =
                elastireg::register_pair(c.fixed, c.moving, params, reg_config);

            if (!reg_out_field.empty()) elastireg::save_field(reg_out_field, result.field);
            const elastireg::MetricsReport metrics = case_metrics(c, result.field);
            json mj = elastireg::metrics_to_json(metrics);
            if (!reg_out_report.empty()) {
                json rj;
                rj["lambda"] = result.lambda_a;
                rj["mu"] = result.mu_a;
                rj["loss_trace"] = result.loss_trace;
                rj["final"]["loss_eq5"] = result.final_terms.loss;
                rj["final"]["ncc"] = result.final_terms.ncc;
                rj["final"]["dissimilarity"] = result.final_terms.dissimilarity;
                rj["final"]["regularizer"] = result.final_terms.regularizer;
                rj["final"]["similarity_weight"] = result.final_terms.similarity_weight;
                rj["metrics"] = mj;
                write_text(reg_out_report, rj.dump(2) + "\n");
            }
            std::cout << mj.dump() << "\n";
            return 0;
        }

        if (*cmd_train) {
            std::vector<std::pair<elastireg::ScalarGrid, elastireg::ScalarGrid>> pairs;
            for (const std::string& dir : train_cases) {
                CaseFlags f;
                f.case_dir = dir;
                elastireg::SweepCase c = load_case(f);
                pairs.emplace_back(std::move(c.fixed), std::move(c.moving));
            }
            for (const std::string& spec : train_pairs) {
                const auto colon = spec.find(':');
                if (colon == std::string::npos) {
                    throw std::runtime_error("--pair expects fixed.rvol:moving.rvol");
                }
                pairs.emplace_back(elastireg::load_volume(spec.substr(0, colon)),
                                   elastireg::load_volume(spec.substr(colon + 1)));
            }
            if (pairs.empty()) throw std::runtime_error("train: no pairs given");

            elastireg::HyperNet hyper =
                elastireg::make_hypernet(pairs.front().first.domain.dim, train_seed,
                                         train_hidden, train_hidden, train_scale);
            elastireg::Rng rng(train_seed);
            elastireg::TrainResult result =
                elastireg::train_amortized(pairs, std::move(hyper), train_config, rng);
            elastireg::save_checkpoint(train_out, result.model);

            json j;
            j["steps"] = result.loss_trace.size();
            j["initial_loss"] = result.loss_trace.front();
            j["final_loss"] = result.loss_trace.back();
            j["checkpoint"] = train_out;
            std::cout << j.dump() << "\n";
            return 0;
        }

        if (*cmd_sweep) {
            std::vector<elastireg::SweepCase> cases;
            if (!sweep_single.case_dir.empty() || !sweep_single.fixed.empty()) {
                cases.push_back(load_case(sweep_single));
            }
            for (const std::string& dir : sweep_case_dirs) {
                CaseFlags f;
                f.case_dir = dir;
                cases.push_back(load_case(f));
            }
            if (cases.empty()) throw std::runtime_error("sweep: no cases given");

            elastireg::SweepEngine engine;
            std::optional<elastireg::HyperNet> model;
            if (sweep_engine == "amortized") {
                if (sweep_model.empty()) {
                    throw std::runtime_error("sweep --engine amortized requires --model");
                }
                model = elastireg::load_checkpoint(sweep_model);
                engine = elastireg::SweepEngine::amortized(*model);
            } else if (sweep_engine == "instance") {
                engine = elastireg::SweepEngine::instance_optimizer(sweep_config);
            } else {
                throw std::runtime_error("unknown engine '" + sweep_engine + "'");
            }

            elastireg::SweepOptions options;
            options.jobs = resolve_jobs(jobs);
            options.ncc_window = sweep_config.ncc_window;

            const elastireg::ParamGrid grid = elastireg::enumerate_grid(sweep_resolution);
            elastireg::SweepReport report = elastireg::run_sweep(cases, grid, engine, options);

            std::vector<elastireg::Heuristic> heuristics;
            if (sweep_heuristics.empty()) {
                heuristics.push_back(elastireg::Heuristic::parse("dice"));
                heuristics.push_back(elastireg::Heuristic::parse("tre"));
            } else {
                for (const std::string& name : sweep_heuristics) {
                    heuristics.push_back(elastireg::Heuristic::parse(name));
                }
            }
            for (const elastireg::Heuristic& h : heuristics) {
                report.selected[h.name] = elastireg::select_optimum(report, h);
            }

            json out = elastireg::sweep_to_json(report);
            if (sweep_refine) {
                const elastireg::Heuristic& lead = heuristics.front();
                const std::size_t around = report.selected.at(lead.name);
                const elastireg::ParamGrid fine = elastireg::refinement_grid(report, around);
                elastireg::SweepReport refined =
                    elastireg::run_sweep(cases, fine, engine, options);
                refined.selected[lead.name] = elastireg::select_optimum(refined, lead);
                out["refined"] = elastireg::sweep_to_json(refined);
            }

            if (!sweep_out_csv.empty()) write_text(sweep_out_csv, elastireg::sweep_to_csv(report));
            if (!sweep_out_json.empty()) write_text(sweep_out_json, out.dump(2) + "\n");

            json summary;
            summary["combos"] = report.records.size();
            for (const auto& [name, index] : report.selected) {
                summary["selected"][name]["lambda"] = report.records[index].params.lambda_a;
                summary["selected"][name]["mu"] = report.records[index].params.mu_a;
            }
            std::cout << summary.dump() << "\n";
            return 0;
        }

        if (*cmd_evaluate) {
            const elastireg::SweepCase c = load_case(eval_case);
            const elastireg::DisplacementField field = elastireg::load_field(eval_field);
            elastireg::require_same_domain(c.fixed.domain, field.domain, "evaluate");
            const elastireg::MetricsReport metrics = case_metrics(c, field);
            std::cout << elastireg::metrics_to_json(metrics).dump() << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::string context;
        for (const CLI::App* sub : app.get_subcommands()) context = sub->get_name();
        std::cerr << elastireg::error_json(e.what(), context).dump() << "\n";
        return 1;
    }

    return 0;
}
