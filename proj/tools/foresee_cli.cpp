#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "foresee/experiment.hpp"
#include "foresee/parallel.hpp"
#include "foresee/reports.hpp"

namespace {

// Exit codes: 0 success, 1 failed check or runtime fault, 2 usage or
// configuration error, 3 I/O error.
enum ExitCode { kOk = 0, kCheckFailed = 1, kUsage = 2, kIo = 3 };

fse::ExperimentConfig base_profile(const std::string& name) {
    if (name == "default") return fse::ExperimentConfig{};
    if (name == "small") return fse::ExperimentConfig::small_profile();
    if (name == "tiny") return fse::ExperimentConfig::tiny_profile();
    throw fse::ConfigError("unknown profile '" + name + "'");
}

fse::ExperimentConfig load_config(const std::string& profile, const std::string& config_path) {
    fse::ExperimentConfig exp = base_profile(profile);
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw fse::IoError("cannot open config '" + config_path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        nlohmann::json overlay;
        try {
            overlay = nlohmann::json::parse(ss.str());
        } catch (const nlohmann::json::exception& e) {
            throw fse::ConfigError("config '" + config_path + "' is not valid JSON: " + e.what());
        }
        nlohmann::json merged = exp.to_json();
        merged.merge_patch(overlay);
        exp = fse::ExperimentConfig::from_json(merged);
    }
    return exp;
}

struct ModelFlags {
    std::string variant = "lstm-bayesian";
    std::string streams = "two";
    int past = 0;       // 0 keeps the profile value
    int horizon = 0;    // 0 keeps the profile value
    int mc_samples = 0; // 0 keeps the profile value
};

void apply_model_flags(fse::ExperimentConfig& exp, const ModelFlags& flags) {
    exp.bbox.variant = fse::parse_variant(flags.variant);
    exp.bbox.streams = fse::parse_streams(flags.streams);
    if (flags.past != 0) {
        if (flags.past != 4 && flags.past != 6 && flags.past != 8)
            throw fse::ConfigError("--past must be 4, 6 or 8");
        exp.bbox.past_steps = flags.past;
    }
    if (flags.horizon != 0) {
        exp.bbox.horizon = flags.horizon;
        exp.odo.horizon = flags.horizon;
        if (!exp.train.curriculum.empty() && exp.train.curriculum.back() != flags.horizon)
            exp.train.curriculum = {flags.horizon};
        if (!exp.odo_train.curriculum.empty() && exp.odo_train.curriculum.back() != flags.horizon)
            exp.odo_train.curriculum = {flags.horizon};
    }
    if (flags.mc_samples != 0) exp.bbox.mc_samples = flags.mc_samples;
}

std::vector<const fse::Track*> split_or_throw(const fse::Dataset& ds, const std::string& split) {
    auto tracks = ds.split(split);
    if (tracks.empty()) throw fse::ContractError("dataset split '" + split + "' is empty");
    return tracks;
}

void write_per_step_csv(const std::string& path, const std::vector<double>& steps) {
    fse::CsvTable table;
    table.header = {"step", "mse_px"};
    for (std::size_t j = 0; j < steps.size(); ++j)
        table.rows.push_back({std::to_string(j + 1), fse::format_metric(steps[j])});
    fse::write_csv(path, table);
}

void print_bbox_eval(const fse::BboxEvalResult& eval) {
    std::printf("tasks %d\n", eval.tasks);
    std::printf("mse_px %s\n", fse::format_metric(eval.mse_px).c_str());
    std::printf("nll %s\n", fse::format_metric(eval.nll).c_str());
    std::printf("epistemic_px2 %s\n", fse::format_metric(eval.mean_epistemic_px).c_str());
    std::printf("aleatoric_px2 %s\n", fse::format_metric(eval.mean_aleatoric_px).c_str());
    std::printf("spearman %s\n", fse::format_metric(eval.spearman_rho).c_str());
}

int run(int argc, char** argv) {
    CLI::App app{"Two-stream sequence model for pedestrian box forecasting on synthetic scenes"};
    app.require_subcommand(1);

    std::string profile = "default";
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool verbose = false;
    app.add_option("--profile", profile, "Config base: default, small or tiny")
        ->check(CLI::IsMember({"default", "small", "tiny"}));
    app.add_option("--config", config_path, "JSON overrides merged onto the profile");
    app.add_option("--seed", seed, "Master seed override")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_flag("--verbose", verbose, "Progress to stderr");

    auto* simulate = app.add_subcommand("simulate", "Generate the synthetic dataset");
    std::string sim_out = "out/dataset";
    int sim_scale = -1;
    simulate->add_option("--out", sim_out, "Dataset directory");
    simulate->add_option("--scale", sim_scale, "Split scale divisor override");

    auto* train = app.add_subcommand("train", "Train one model and write a checkpoint");
    std::string train_model = "bbox";
    std::string train_dataset = "out/dataset";
    std::string train_out;
    std::string train_odo_ckpt;
    bool train_no_visual = false;
    ModelFlags train_flags;
    train->add_option("--model", train_model, "bbox or odometry")
        ->check(CLI::IsMember({"bbox", "odometry"}));
    train->add_option("--dataset", train_dataset, "Dataset directory");
    train->add_option("--out", train_out, "Checkpoint path")->required();
    train->add_option("--odo-checkpoint", train_odo_ckpt,
                      "Trained odometry checkpoint (two-stream box training)");
    train->add_flag("--no-visual", train_no_visual, "Drop the raster pathway (odometry model)");
    train->add_option("--variant", train_flags.variant, "lstm, lstm-aleatoric or lstm-bayesian");
    train->add_option("--streams", train_flags.streams, "one, two or oracle-odometry");
    train->add_option("--past", train_flags.past, "Conditioning steps: 4, 6 or 8");
    train->add_option("--horizon", train_flags.horizon, "Future steps");
    train->add_option("--mc-samples", train_flags.mc_samples, "Monte-Carlo samples at evaluation");

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint or baseline on a dataset split");
    std::string eval_ckpt;
    std::string eval_variant;
    std::string eval_dataset = "out/dataset";
    std::string eval_split = "test";
    std::string eval_odo_ckpt;
    std::string eval_report;
    std::string eval_per_step;
    int eval_mc = 0;
    evaluate->add_option("--checkpoint", eval_ckpt, "Box-model checkpoint");
    evaluate->add_option("--variant", eval_variant,
                         "Standalone baseline instead of a checkpoint: kalman or constant");
    evaluate->add_option("--dataset", eval_dataset, "Dataset directory");
    evaluate->add_option("--split", eval_split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    evaluate->add_option("--odo-checkpoint", eval_odo_ckpt, "Odometry checkpoint (two-stream models)");
    evaluate->add_option("--report", eval_report, "Write a one-row metrics CSV here");
    evaluate->add_option("--per-step", eval_per_step, "Write a per-future-step MSE CSV here");
    evaluate->add_option("--mc-samples", eval_mc, "Monte-Carlo samples override");

    auto* calibration = app.add_subcommand("calibration", "Uncertainty-error calibration table");
    std::string cal_ckpt;
    std::string cal_dataset = "out/dataset";
    std::string cal_split = "test";
    std::string cal_odo_ckpt;
    std::string cal_out = "out/reports/fig3.csv";
    int cal_bins = 10;
    calibration->add_option("--checkpoint", cal_ckpt, "Box-model checkpoint")->required();
    calibration->add_option("--dataset", cal_dataset, "Dataset directory");
    calibration->add_option("--split", cal_split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    calibration->add_option("--odo-checkpoint", cal_odo_ckpt, "Odometry checkpoint (two-stream models)");
    calibration->add_option("--out", cal_out, "Calibration CSV path");
    std::string cal_pairs;
    calibration->add_option("--pairs", cal_pairs,
                            "Raw (uncertainty, sq_error) pairs CSV with per-horizon splits");
    calibration->add_option("--bins", cal_bins, "Equal-count bins")->check(CLI::PositiveNumber);

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of both loss graphs");

    auto* make_all = app.add_subcommand("make-all", "Dataset, both streams, full grid, reports");
    std::string all_out = "out";
    make_all->add_option("--out", all_out, "Working directory");

    // Global flags remain valid after a subcommand name.
    for (CLI::App* sub : {simulate, train, evaluate, calibration, gradcheck, make_all})
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    fse::ExperimentConfig exp = load_config(profile, config_path);
    if (seed_set) {
        exp.seed = seed;
        exp.train.seed = seed;
        exp.odo_train.seed = seed;
    }

    if (simulate->parsed()) {
        if (sim_scale >= 0) exp.sim.scale_divisor = sim_scale;
        exp.sim.validate();
        const fse::DatasetSummary summary = fse::emit_dataset(exp.sim, exp.seed, sim_out);
        std::printf("train %ld\nval %ld\ntest %ld\ndropped_short %ld\n", summary.train_tracks,
                    summary.val_tracks, summary.test_tracks, summary.dropped_short);
        return kOk;
    }

    if (train->parsed()) {
        const fse::Dataset ds = fse::load_dataset(train_dataset);
        const auto train_tracks = split_or_throw(ds, "train");
        const auto val_tracks = split_or_throw(ds, "val");
        exp.train.verbose = exp.train.verbose || verbose;
        exp.odo_train.verbose = exp.odo_train.verbose || verbose;
        if (train_model == "odometry") {
            fse::OdoConfig cfg = exp.odo;
            cfg.use_visual = !train_no_visual;
            fse::Rng init_rng(exp.seed);
            fse::OdoWeights w = fse::odo_init(cfg, init_rng);
            const fse::TrainReport report =
                fse::train_odometry_model(w, cfg, train_tracks, val_tracks, exp.odo_train);
            nlohmann::json metrics = {{"final_val", report.final_val}, {"adam_steps", report.adam_steps}};
            fse::save_odo_checkpoint(train_out, w, cfg, static_cast<int>(report.stages.size()), metrics);
            std::printf("final_val %s\ncheckpoint %s\n", fse::format_metric(report.final_val).c_str(),
                        train_out.c_str());
            return kOk;
        }
        apply_model_flags(exp, train_flags);
        exp.validate();
        fse::LoadedOdo odo;
        fse::OdoPredictorRef odo_ref;
        const fse::OdoPredictorRef* ref = nullptr;
        if (exp.bbox.streams == fse::Streams::two) {
            if (train_odo_ckpt.empty())
                throw fse::ConfigError("two-stream training needs --odo-checkpoint");
            odo = fse::load_odo_checkpoint(train_odo_ckpt);
            odo_ref = {&odo.weights, &odo.cfg};
            ref = &odo_ref;
        }
        fse::Rng init_rng(exp.seed);
        fse::BboxWeights w = fse::bbox_init(exp.bbox, init_rng);
        const fse::TrainReport report =
            fse::train_bbox_model(w, exp.bbox, train_tracks, val_tracks, exp.train, ref);
        nlohmann::json metrics = {{"final_val", report.final_val}, {"adam_steps", report.adam_steps}};
        fse::save_bbox_checkpoint(train_out, w, exp.bbox, static_cast<int>(report.stages.size()),
                                  metrics);
        std::printf("final_val %s\ncheckpoint %s\n", fse::format_metric(report.final_val).c_str(),
                    train_out.c_str());
        return kOk;
    }

    if (evaluate->parsed() && !eval_variant.empty()) {
        if (eval_variant != "kalman" && eval_variant != "constant")
            throw fse::ConfigError("unknown baseline variant '" + eval_variant +
                                   "' (kalman|constant); model checkpoints pass --checkpoint");
        if (!eval_ckpt.empty())
            throw fse::ConfigError("--variant evaluates a standalone baseline; drop --checkpoint");
        const fse::Dataset ds = fse::load_dataset(eval_dataset);
        const auto tracks = split_or_throw(ds, eval_split);
        const int past = exp.bbox.past_steps;
        const int horizon = exp.bbox.horizon;
        fse::BaselineEvalResult result;
        if (eval_variant == "kalman") {
            const auto val_tracks = split_or_throw(ds, "val");
            const fse::KalmanFit fit =
                fse::fit_kalman_boxes(fse::bbox_baseline_pairs(val_tracks, past, horizon));
            result = fse::evaluate_bbox_kalman(tracks, past, horizon, fit.q, fit.r);
        } else {
            result = fse::evaluate_bbox_constant(tracks, past, horizon);
        }
        std::printf("tasks %d\nmse_px %s\n", result.tasks, fse::format_metric(result.mse_px).c_str());
        if (!eval_report.empty()) {
            fse::CsvTable table;
            table.header = {"variant", "streams", "past", "mse_mean", "nll", "epistemic", "aleatoric",
                            "spearman", "tasks", "config_hash"};
            table.rows.push_back({eval_variant, "", std::to_string(past),
                                  fse::format_metric(result.mse_px), "", "", "", "",
                                  std::to_string(result.tasks), exp.config_hash()});
            fse::write_csv(eval_report, table);
        }
        if (!eval_per_step.empty()) write_per_step_csv(eval_per_step, result.mse_steps);
        return kOk;
    }

    if (evaluate->parsed() || calibration->parsed()) {
        const bool cal = calibration->parsed();
        const std::string ckpt_path = cal ? cal_ckpt : eval_ckpt;
        const std::string dataset_dir = cal ? cal_dataset : eval_dataset;
        const std::string split = cal ? cal_split : eval_split;
        const std::string odo_path = cal ? cal_odo_ckpt : eval_odo_ckpt;
        if (ckpt_path.empty())
            throw fse::ConfigError("evaluation needs --checkpoint (or a baseline --variant)");

        const fse::Dataset ds = fse::load_dataset(dataset_dir);
        const auto tracks = split_or_throw(ds, split);
        fse::LoadedBbox model = fse::load_bbox_checkpoint(ckpt_path);
        if (!cal && eval_mc > 0) model.cfg.mc_samples = eval_mc;
        fse::LoadedOdo odo;
        fse::OdoPredictorRef odo_ref;
        const fse::OdoPredictorRef* ref = nullptr;
        if (model.cfg.streams == fse::Streams::two) {
            if (odo_path.empty())
                throw fse::ConfigError("two-stream evaluation needs --odo-checkpoint");
            odo = fse::load_odo_checkpoint(odo_path);
            odo_ref = {&odo.weights, &odo.cfg};
            ref = &odo_ref;
        }
        const fse::BboxEvalResult eval =
            fse::evaluate_bbox_model(model.weights, model.cfg, tracks, ref, exp.seed);
        if (cal) {
            const fse::CalibrationReport report = fse::calibration_report(eval.calibration.pairs, cal_bins);
            fse::CsvTable fig;
            fig.header = {"bin", "mean_total_uncertainty_px2", "max_log_sq_error"};
            for (std::size_t b = 0; b < report.bin_mean_uncertainty.size(); ++b)
                fig.rows.push_back({std::to_string(b), fse::format_metric(report.bin_mean_uncertainty[b]),
                                    fse::format_metric(report.bin_max_log_se[b])});
            fse::write_csv(cal_out, fig);
            if (!cal_pairs.empty()) {
                fse::CsvTable raw;
                raw.header = {"uncertainty", "sq_error", "split"};
                for (const auto& p : eval.calibration.pairs)
                    raw.rows.push_back(
                        {fse::format_metric(p.uncertainty), fse::format_metric(p.sq_error), "all"});
                for (const int s : {5, 10, 15}) {
                    if (static_cast<std::size_t>(s) > eval.step_pairs.size()) continue;
                    for (const auto& p : eval.step_pairs[static_cast<std::size_t>(s - 1)])
                        raw.rows.push_back({fse::format_metric(p.uncertainty),
                                            fse::format_metric(p.sq_error),
                                            "t+" + std::to_string(s)});
                }
                fse::write_csv(cal_pairs, raw);
            }
            std::printf("spearman %s\nbins %zu\nreport %s\n",
                        fse::format_metric(report.spearman_rho).c_str(),
                        report.bin_mean_uncertainty.size(), cal_out.c_str());
            return kOk;
        }
        print_bbox_eval(eval);
        if (!eval_report.empty()) {
            fse::CsvTable table;
            table.header = {"variant", "streams", "past", "mse_mean", "nll", "epistemic", "aleatoric",
                            "spearman", "tasks", "config_hash"};
            table.rows.push_back({fse::to_string(model.cfg.variant), fse::to_string(model.cfg.streams),
                                  std::to_string(model.cfg.past_steps), fse::format_metric(eval.mse_px),
                                  fse::format_metric(eval.nll), fse::format_metric(eval.mean_epistemic_px),
                                  fse::format_metric(eval.mean_aleatoric_px),
                                  fse::format_metric(eval.spearman_rho), std::to_string(eval.tasks),
                                  model.manifest.config_hash});
            fse::write_csv(eval_report, table);
        }
        if (!eval_per_step.empty()) write_per_step_csv(eval_per_step, eval.mse_steps);
        return kOk;
    }

    if (gradcheck->parsed()) {
        const fse::GradcheckOutcome outcome = fse::run_gradcheck(seed_set ? seed : exp.seed);
        const auto print_stream = [](const char* stream, const fse::GradCheckReport& r) {
            std::printf("%s max_rel_err %s (%ld checked, worst %s[%zu])\n", stream,
                        fse::format_metric(r.max_rel_err).c_str(), r.checked, r.worst_param.c_str(),
                        r.worst_index);
            for (const fse::GradCheckGroup& g : r.groups) {
                std::printf("  %-10s max_rel_err %s\n", g.name.c_str(),
                            fse::format_metric(g.max_rel_err).c_str());
            }
        };
        print_stream("bbox", outcome.bbox);
        print_stream("odometry", outcome.odo);
        std::printf("%s\n", outcome.pass() ? "PASS" : "FAIL");
        return outcome.pass() ? kOk : kCheckFailed;
    }

    if (make_all->parsed()) {
        const fse::MakeAllOutcome outcome = fse::run_make_all(exp, all_out, verbose);
        std::printf("dataset %s\n", outcome.dataset_dir.c_str());
        for (const auto& p : outcome.checkpoints) std::printf("checkpoint %s\n", p.c_str());
        for (const auto& p : outcome.reports) std::printf("report %s\n", p.c_str());
        return kOk;
    }

    return kUsage;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const fse::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const fse::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kCheckFailed;
    }
}
