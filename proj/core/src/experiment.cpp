#include "foresee/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "foresee/hash.hpp"
#include "foresee/reports.hpp"

namespace fse {

namespace {

constexpr std::size_t kEvalChunk = 64;
constexpr int kCalibrationBins = 10;

} // namespace

nlohmann::json bbox_config_to_json(const BboxConfig& cfg) {
    nlohmann::json j;
    j["past_steps"] = cfg.past_steps;
    j["horizon"] = cfg.horizon;
    j["embed_dim"] = cfg.embed_dim;
    j["hidden_dim"] = cfg.hidden_dim;
    j["odo_dim"] = cfg.odo_dim;
    j["keep_prob"] = cfg.keep_prob;
    j["lambda"] = cfg.lambda;
    j["mc_samples"] = cfg.mc_samples;
    j["variant"] = to_string(cfg.variant);
    j["streams"] = to_string(cfg.streams);
    j["autoregressive"] = cfg.autoregressive;
    j["image_width"] = cfg.image_width;
    j["image_height"] = cfg.image_height;
    return j;
}

BboxConfig bbox_config_from_json(const nlohmann::json& j) {
    BboxConfig cfg;
    cfg.past_steps = j.value("past_steps", cfg.past_steps);
    cfg.horizon = j.value("horizon", cfg.horizon);
    cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
    cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
    cfg.odo_dim = j.value("odo_dim", cfg.odo_dim);
    cfg.keep_prob = j.value("keep_prob", cfg.keep_prob);
    cfg.lambda = j.value("lambda", cfg.lambda);
    cfg.mc_samples = j.value("mc_samples", cfg.mc_samples);
    if (j.contains("variant")) cfg.variant = parse_variant(j["variant"].get<std::string>());
    if (j.contains("streams")) cfg.streams = parse_streams(j["streams"].get<std::string>());
    cfg.autoregressive = j.value("autoregressive", cfg.autoregressive);
    cfg.image_width = j.value("image_width", cfg.image_width);
    cfg.image_height = j.value("image_height", cfg.image_height);
    return cfg;
}

nlohmann::json odo_config_to_json(const OdoConfig& cfg) {
    nlohmann::json j;
    j["past_steps"] = cfg.past_steps;
    j["horizon"] = cfg.horizon;
    j["hidden_dim"] = cfg.hidden_dim;
    j["use_visual"] = cfg.use_visual;
    j["raster_size"] = cfg.raster_size;
    j["conv_channels"] = cfg.conv_channels;
    j["dense_sizes"] = cfg.dense_sizes;
    j["v_vis_dim"] = cfg.v_vis_dim;
    return j;
}

OdoConfig odo_config_from_json(const nlohmann::json& j) {
    OdoConfig cfg;
    cfg.past_steps = j.value("past_steps", cfg.past_steps);
    cfg.horizon = j.value("horizon", cfg.horizon);
    cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
    cfg.use_visual = j.value("use_visual", cfg.use_visual);
    cfg.raster_size = j.value("raster_size", cfg.raster_size);
    cfg.conv_channels = j.value("conv_channels", cfg.conv_channels);
    cfg.dense_sizes = j.value("dense_sizes", cfg.dense_sizes);
    cfg.v_vis_dim = j.value("v_vis_dim", cfg.v_vis_dim);
    return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["lr"] = cfg.adam.lr;
    j["beta1"] = cfg.adam.beta1;
    j["beta2"] = cfg.adam.beta2;
    j["eps"] = cfg.adam.eps;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["patience"] = cfg.patience;
    j["curriculum"] = cfg.curriculum;
    j["seed"] = cfg.seed;
    j["flip_augment"] = cfg.flip_augment;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.adam.lr = j.value("lr", cfg.adam.lr);
    cfg.adam.beta1 = j.value("beta1", cfg.adam.beta1);
    cfg.adam.beta2 = j.value("beta2", cfg.adam.beta2);
    cfg.adam.eps = j.value("eps", cfg.adam.eps);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.patience = j.value("patience", cfg.patience);
    cfg.curriculum = j.value("curriculum", cfg.curriculum);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.flip_augment = j.value("flip_augment", cfg.flip_augment);
    return cfg;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["sim"] = sim.to_json();
    j["bbox"] = bbox_config_to_json(bbox);
    j["odo"] = odo_config_to_json(odo);
    j["train"] = train_config_to_json(train);
    j["odo_train"] = train_config_to_json(odo_train);
    j["seed"] = seed;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig exp;
    if (j.contains("sim")) exp.sim = SimConfig::from_json(j["sim"]);
    if (j.contains("bbox")) exp.bbox = bbox_config_from_json(j["bbox"]);
    if (j.contains("odo")) exp.odo = odo_config_from_json(j["odo"]);
    if (j.contains("train")) exp.train = train_config_from_json(j["train"]);
    if (j.contains("odo_train")) exp.odo_train = train_config_from_json(j["odo_train"]);
    exp.seed = j.value("seed", exp.seed);
    return exp;
}

std::string ExperimentConfig::config_hash() const { return fnv1a64_hex(to_json().dump()); }

void ExperimentConfig::validate() const {
    sim.validate();
    bbox.validate();
    odo.validate();
    train.validate(bbox.horizon);
    odo_train.validate(odo.horizon);
    if (bbox.image_width != sim.image_width || bbox.image_height != sim.image_height)
        throw ConfigError("ExperimentConfig: box model image extent differs from the simulator's");
    if (odo.raster_size != sim.raster_size)
        throw ConfigError("ExperimentConfig: odometry raster size differs from the simulator's");
    if (bbox.past_steps > kAlignFrame || odo.past_steps > kAlignFrame)
        throw ConfigError("ExperimentConfig: past windows cannot exceed the alignment frame");
}

ExperimentConfig ExperimentConfig::small_profile() {
    ExperimentConfig exp;
    exp.bbox.embed_dim = 16;
    exp.bbox.hidden_dim = 32;
    exp.odo.hidden_dim = 32;
    exp.odo.conv_channels = {4, 4, 8, 8};
    exp.odo.dense_sizes = {32};
    exp.odo.v_vis_dim = 8;
    exp.train.epochs = 30;
    exp.odo_train.epochs = 25;
    exp.odo_train.curriculum = {15};
    return exp;
}

ExperimentConfig ExperimentConfig::tiny_profile() {
    ExperimentConfig exp;
    exp.sim.scale_divisor = 500;
    exp.sim.raster_size = 8;
    exp.bbox.past_steps = 3;
    exp.bbox.horizon = 3;
    exp.bbox.embed_dim = 8;
    exp.bbox.hidden_dim = 12;
    exp.bbox.mc_samples = 5;
    exp.odo.past_steps = 3;
    exp.odo.horizon = 3;
    exp.odo.hidden_dim = 12;
    exp.odo.raster_size = 8;
    exp.odo.conv_channels = {2, 2};
    exp.odo.dense_sizes = {8};
    exp.odo.v_vis_dim = 4;
    exp.train.epochs = 3;
    exp.train.curriculum = {3};
    exp.odo_train.epochs = 3;
    exp.odo_train.curriculum = {3};
    return exp;
}

namespace {

std::vector<PredictionTask> eval_tasks(const std::vector<const Track*>& tracks, const BboxConfig& cfg,
                                       const OdoPredictorRef* odo) {
    const auto windows = aligned_windows(tracks, cfg.past_steps, cfg.horizon);
    if (windows.empty()) throw ContractError("evaluation has no usable windows");
    std::vector<PredictionTask> tasks;
    tasks.reserve(windows.size());
    for (const auto& win : windows)
        tasks.push_back(make_bbox_task(*win.track, win.cond_start, cfg.past_steps, cfg.horizon, false));
    if (cfg.streams == Streams::two) {
        if (odo == nullptr)
            throw ContractError("two-stream evaluation needs the odometry model");
        std::vector<OdoBatchTask> odo_tasks;
        odo_tasks.reserve(windows.size());
        const int odo_start = kAlignFrame - odo->config->past_steps;
        for (const auto& win : windows) {
            OdoBatchTask ot;
            for (int i = odo_start; i < kAlignFrame; ++i)
                ot.past.push_back(win.track->frames[static_cast<std::size_t>(i)].odo);
            ot.raster = &win.track->raster;
            odo_tasks.push_back(std::move(ot));
        }
        for (std::size_t begin = 0; begin < odo_tasks.size(); begin += kEvalChunk) {
            const std::size_t end = std::min(odo_tasks.size(), begin + kEvalChunk);
            const std::vector<OdoBatchTask> chunk(odo_tasks.begin() + static_cast<std::ptrdiff_t>(begin),
                                                  odo_tasks.begin() + static_cast<std::ptrdiff_t>(end));
            const auto preds = predict_odometry_batch(chunk, *odo->weights, *odo->config, cfg.horizon);
            for (std::size_t i = 0; i < preds.size(); ++i) tasks[begin + i].future_odo = preds[i];
        }
    }
    return tasks;
}

PredictiveSampleSet single_pass_sample_set(const std::vector<GaussianStepParams>& params,
                                           const BoxScale& scale) {
    PredictiveTrajectory traj;
    traj.params = params;
    traj.sampled_px.reserve(params.size());
    for (const auto& p : params) traj.sampled_px.push_back(scale.denormalize(p.mean));
    PredictiveSampleSet set;
    set.trajectories.push_back(std::move(traj));
    set.scale = scale;
    return set;
}

} // namespace

BboxEvalResult evaluate_bbox_model(const BboxWeights& w, const BboxConfig& cfg,
                                   const std::vector<const Track*>& tracks, const OdoPredictorRef* odo,
                                   std::uint64_t seed) {
    cfg.validate();
    const std::vector<PredictionTask> tasks = eval_tasks(tracks, cfg, odo);
    const BoxScale scale = cfg.box_scale();
    const bool mc = cfg.variant == Variant::bayesian;

    BboxEvalResult result;
    result.tasks = static_cast<int>(tasks.size());
    result.mse_steps.assign(static_cast<std::size_t>(cfg.horizon), 0.0);
    result.step_pairs.assign(static_cast<std::size_t>(cfg.horizon), {});
    std::vector<CalibrationPair> pairs;
    pairs.reserve(tasks.size());

    Rng rng(seed);
    for (std::size_t begin = 0; begin < tasks.size(); begin += kEvalChunk) {
        const std::size_t end = std::min(tasks.size(), begin + kEvalChunk);
        const std::vector<PredictionTask> chunk(tasks.begin() + static_cast<std::ptrdiff_t>(begin),
                                                tasks.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<PredictiveSampleSet> sets;
        if (mc) {
            sets = sample_predictive_batch(chunk, w, cfg, cfg.mc_samples, cfg.keep_prob, rng);
        } else {
            const auto params =
                forward_params_batch(chunk, w, cfg, ones_bbox_masks(cfg, static_cast<int>(chunk.size())));
            sets.reserve(chunk.size());
            for (const auto& p : params) sets.push_back(single_pass_sample_set(p, scale));
        }
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const auto mean_px = predictive_mean_px(sets[i]);
            const auto se_steps = mse_per_step(mean_px, chunk[i].target_boxes);
            for (std::size_t j = 0; j < se_steps.size(); ++j) result.mse_steps[j] += se_steps[j];
            const double task_mse = mse(mean_px, chunk[i].target_boxes);
            result.mse_px += task_mse;
            result.nll += nll(sets[i], chunk[i].target_boxes);
            const UncertaintyEstimate unc = moment_match(sets[i]);
            result.mean_epistemic_px += unc.mean_epistemic;
            result.mean_aleatoric_px += unc.mean_aleatoric;
            pairs.push_back({unc.mean_total, task_mse});
            for (std::size_t j = 0; j < se_steps.size(); ++j)
                result.step_pairs[j].push_back({unc.total[j], se_steps[j]});
        }
    }

    const double n = static_cast<double>(tasks.size());
    result.mse_px /= n;
    for (auto& v : result.mse_steps) v /= n;
    result.nll /= n;
    result.mean_epistemic_px /= n;
    result.mean_aleatoric_px /= n;
    result.calibration = calibration_report(std::move(pairs), kCalibrationBins);
    result.spearman_rho = result.calibration.spearman_rho;
    return result;
}

std::vector<std::pair<std::vector<BoundingBox>, std::vector<BoundingBox>>> bbox_baseline_pairs(
    const std::vector<const Track*>& tracks, int past, int horizon) {
    std::vector<std::pair<std::vector<BoundingBox>, std::vector<BoundingBox>>> pairs;
    for (const auto& win : aligned_windows(tracks, past, horizon)) {
        const PredictionTask task = make_bbox_task(*win.track, win.cond_start, past, horizon, false);
        pairs.emplace_back(task.past_boxes, task.target_boxes);
    }
    return pairs;
}

namespace {

BaselineEvalResult eval_box_predictions(
    const std::vector<std::pair<std::vector<BoundingBox>, std::vector<BoundingBox>>>& pairs,
    const std::function<std::vector<BoundingBox>(const std::vector<BoundingBox>&)>& predict,
    int horizon) {
    if (pairs.empty()) throw ContractError("baseline evaluation has no usable windows");
    BaselineEvalResult result;
    result.tasks = static_cast<int>(pairs.size());
    result.mse_steps.assign(static_cast<std::size_t>(horizon), 0.0);
    for (const auto& [past, target] : pairs) {
        const auto pred = predict(past);
        const auto se = mse_per_step(pred, target);
        for (std::size_t j = 0; j < se.size(); ++j) result.mse_steps[j] += se[j];
        result.mse_px += mse(pred, target);
    }
    const double n = static_cast<double>(pairs.size());
    result.mse_px /= n;
    for (auto& v : result.mse_steps) v /= n;
    return result;
}

} // namespace

BaselineEvalResult evaluate_bbox_kalman(const std::vector<const Track*>& tracks, int past, int horizon,
                                        double q, double r) {
    return eval_box_predictions(
        bbox_baseline_pairs(tracks, past, horizon),
        [&](const std::vector<BoundingBox>& obs) { return kalman_predict(obs, horizon, q, r); }, horizon);
}

BaselineEvalResult evaluate_bbox_constant(const std::vector<const Track*>& tracks, int past, int horizon) {
    return eval_box_predictions(
        bbox_baseline_pairs(tracks, past, horizon),
        [&](const std::vector<BoundingBox>& obs) {
            return std::vector<BoundingBox>(static_cast<std::size_t>(horizon), obs.back());
        },
        horizon);
}

std::vector<std::pair<std::vector<OdometryState>, std::vector<OdometryState>>> odo_baseline_pairs(
    const std::vector<const Track*>& tracks, int past, int horizon) {
    std::vector<std::pair<std::vector<OdometryState>, std::vector<OdometryState>>> pairs;
    for (const auto& win : aligned_windows(tracks, past, horizon)) {
        std::vector<OdometryState> obs;
        std::vector<OdometryState> target;
        for (int i = win.cond_start; i < win.cond_start + past; ++i)
            obs.push_back(win.track->frames[static_cast<std::size_t>(i)].odo);
        for (int j = kAlignFrame; j < kAlignFrame + horizon; ++j)
            target.push_back(win.track->frames[static_cast<std::size_t>(j)].odo);
        pairs.emplace_back(std::move(obs), std::move(target));
    }
    return pairs;
}

namespace {

OdoEvalResult eval_odo_predictions(
    const std::vector<std::pair<std::vector<OdometryState>, std::vector<OdometryState>>>& pairs,
    const std::function<std::vector<OdometryState>(const std::vector<OdometryState>&)>& predict) {
    if (pairs.empty()) throw ContractError("odometry evaluation has no usable windows");
    OdoEvalResult result;
    result.tasks = static_cast<int>(pairs.size());
    for (const auto& [past, target] : pairs) {
        const OdoLoss loss = odometry_loss(predict(past), target);
        result.speed_mse += loss.speed_mse;
        result.angle_mse += loss.angle_mse;
    }
    result.speed_mse /= static_cast<double>(pairs.size());
    result.angle_mse /= static_cast<double>(pairs.size());
    return result;
}

} // namespace

OdoEvalResult evaluate_odometry_model(const OdoWeights& w, const OdoConfig& cfg,
                                      const std::vector<const Track*>& tracks) {
    cfg.validate();
    const auto windows = aligned_windows(tracks, cfg.past_steps, cfg.horizon);
    if (windows.empty()) throw ContractError("odometry evaluation has no usable windows");
    std::vector<OdoBatchTask> tasks;
    tasks.reserve(windows.size());
    for (const auto& win : windows) {
        OdoBatchTask task;
        task.raster = &win.track->raster;
        for (int i = win.cond_start; i < win.cond_start + cfg.past_steps; ++i)
            task.past.push_back(win.track->frames[static_cast<std::size_t>(i)].odo);
        for (int j = kAlignFrame; j < kAlignFrame + cfg.horizon; ++j)
            task.target.push_back(win.track->frames[static_cast<std::size_t>(j)].odo);
        tasks.push_back(std::move(task));
    }
    OdoEvalResult result;
    result.tasks = static_cast<int>(tasks.size());
    for (std::size_t begin = 0; begin < tasks.size(); begin += kEvalChunk) {
        const std::size_t end = std::min(tasks.size(), begin + kEvalChunk);
        const std::vector<OdoBatchTask> chunk(tasks.begin() + static_cast<std::ptrdiff_t>(begin),
                                              tasks.begin() + static_cast<std::ptrdiff_t>(end));
        const auto preds = predict_odometry_batch(chunk, w, cfg, cfg.horizon);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const OdoLoss loss = odometry_loss(preds[i], chunk[i].target);
            result.speed_mse += loss.speed_mse;
            result.angle_mse += loss.angle_mse;
        }
    }
    result.speed_mse /= static_cast<double>(tasks.size());
    result.angle_mse /= static_cast<double>(tasks.size());
    return result;
}

OdoEvalResult evaluate_odometry_constant(const std::vector<const Track*>& tracks, int past, int horizon) {
    return eval_odo_predictions(odo_baseline_pairs(tracks, past, horizon),
                                [&](const std::vector<OdometryState>& obs) {
                                    return constant_odometry(obs, horizon);
                                });
}

OdoEvalResult evaluate_odometry_kalman(const std::vector<const Track*>& tracks, int past, int horizon,
                                       double q, double r) {
    return eval_odo_predictions(odo_baseline_pairs(tracks, past, horizon),
                                [&](const std::vector<OdometryState>& obs) {
                                    return kalman_predict(obs, horizon, q, r);
                                });
}

namespace {

// Finite differences measure noise, not derivatives, wherever the loss is
// nearly flat (f64 roundoff floor) or piecewise boundaries sit within the
// probe step (relu, maxpool). Positive weights sized to keep every layer's
// output O(1) avoid both: activation margins stay far above the probe step,
// no tanh saturates to exactly 1, and no gate product collapses a
// coordinate's gradient toward zero. Sign coverage of the backward rules is
// the per-op tests' job; this check verifies whole-graph assembly.
void fd_check_point(std::vector<std::pair<std::string, Array*>> named, Rng& rng) {
    for (auto& [name, arr] : named) {
        if (arr->rows() == 1) { // bias row
            for (std::size_t i = 0; i < arr->size(); ++i) arr->data()[i] = rng.uniform(0.05, 0.15);
            continue;
        }
        // Conv kernels are {out_ch, in_ch*9}; everything else is {fan_in, out}.
        const bool conv = name.rfind("conv_w", 0) == 0;
        const double fan = static_cast<double>(conv ? arr->cols() : arr->rows());
        for (std::size_t i = 0; i < arr->size(); ++i) arr->data()[i] = rng.uniform(0.2, 1.4) / fan;
    }
}

constexpr double kFdStep = 3e-4;

} // namespace

GradcheckOutcome run_gradcheck(std::uint64_t seed) {
    const ExperimentConfig tiny = ExperimentConfig::tiny_profile();
    GradcheckOutcome outcome;
    Rng rng(seed);

    {
        const BboxConfig& cfg = tiny.bbox;
        BboxWeights w = bbox_init(cfg, rng);
        fd_check_point(w.named(), rng);
        // Targets sit above the model's reachable output range at this check
        // point, so every residual keeps one sign and no coordinate's
        // gradient can cancel toward the finite-difference noise floor.
        std::vector<PredictionTask> tasks;
        for (int t = 0; t < 2; ++t) {
            PredictionTask task;
            for (int i = 0; i < cfg.past_steps; ++i) {
                const double x = rng.uniform(20.0, 420.0);
                const double y = rng.uniform(20.0, 180.0);
                task.past_boxes.push_back({x, y, x + rng.uniform(5.0, 60.0), y + rng.uniform(10.0, 70.0)});
                task.past_odo.push_back({rng.uniform(1.0, 12.0), rng.uniform(1.0, 15.0)});
            }
            for (int j = 0; j < cfg.horizon; ++j) {
                const double x = rng.uniform(350.0, 470.0);
                const double y = rng.uniform(180.0, 235.0);
                task.target_boxes.push_back({x, y, x + rng.uniform(5.0, 40.0), y + rng.uniform(5.0, 20.0)});
                task.future_odo.push_back({rng.uniform(1.0, 12.0), rng.uniform(1.0, 15.0)});
            }
            tasks.push_back(std::move(task));
        }
        const BboxMaskSet masks = sample_bbox_masks(cfg, 2, cfg.keep_prob, rng);
        BboxLossGraph graph = build_loss_graph(tasks, w, cfg, masks);
        outcome.bbox = finite_difference_check(graph.tape, graph.loss, graph.weight_vars, kFdStep);
    }

    {
        const OdoConfig& cfg = tiny.odo;
        OdoWeights w = odo_init(cfg, rng);
        fd_check_point(w.named(), rng);
        std::vector<OdoBatchTask> tasks(2);
        std::vector<Array> rasters;
        rasters.reserve(tasks.size());
        for (auto& task : tasks) {
            // Positive inputs bounded away from zero: with one-signed deltas
            // this keeps every x*delta contribution same-signed.
            for (int i = 0; i < cfg.past_steps; ++i)
                task.past.push_back({rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.5)});
            // One-sided targets, same rationale as the box stream above.
            for (int j = 0; j < cfg.horizon; ++j)
                task.target.push_back({rng.uniform(2.5, 4.0), rng.uniform(2.0, 3.5)});
            Array raster = Array::zeros({cfg.raster_size, cfg.raster_size});
            for (std::size_t i = 0; i < raster.size(); ++i) raster.data()[i] = rng.uniform01();
            rasters.push_back(std::move(raster));
        }
        for (std::size_t i = 0; i < tasks.size(); ++i) tasks[i].raster = &rasters[i];
        OdoLossGraph graph = build_odo_loss_graph(tasks, w, cfg);
        outcome.odo = finite_difference_check(graph.tape, graph.loss, graph.weight_vars, kFdStep);
    }
    return outcome;
}

void save_bbox_checkpoint(const std::string& path, const BboxWeights& w, const BboxConfig& cfg,
                          int stage, const nlohmann::json& metrics) {
    CheckpointManifest manifest;
    manifest.model_kind = "bbox";
    manifest.config = bbox_config_to_json(cfg);
    manifest.stage = stage;
    manifest.metrics = metrics;
    save_checkpoint(path, manifest, w.named());
}

void save_odo_checkpoint(const std::string& path, const OdoWeights& w, const OdoConfig& cfg, int stage,
                         const nlohmann::json& metrics) {
    CheckpointManifest manifest;
    manifest.model_kind = "odometry";
    manifest.config = odo_config_to_json(cfg);
    manifest.stage = stage;
    manifest.metrics = metrics;
    save_checkpoint(path, manifest, w.named());
}

LoadedBbox load_bbox_checkpoint(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    require_kind(ckpt, "bbox");
    LoadedBbox loaded;
    loaded.cfg = bbox_config_from_json(ckpt.manifest.config);
    loaded.cfg.validate();
    Rng scratch(0);
    loaded.weights = bbox_init(loaded.cfg, scratch);
    assign_arrays(ckpt, loaded.weights.named());
    loaded.manifest = ckpt.manifest;
    return loaded;
}

LoadedOdo load_odo_checkpoint(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    require_kind(ckpt, "odometry");
    LoadedOdo loaded;
    loaded.cfg = odo_config_from_json(ckpt.manifest.config);
    loaded.cfg.validate();
    Rng scratch(0);
    loaded.weights = odo_init(loaded.cfg, scratch);
    assign_arrays(ckpt, loaded.weights.named());
    loaded.manifest = ckpt.manifest;
    return loaded;
}

namespace {

nlohmann::json report_metrics(const TrainReport& report) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : report.stages)
        stages.push_back({{"horizon", s.horizon}, {"epochs", s.epochs_run}, {"best_val", s.best_val}});
    return {{"final_val", report.final_val}, {"adam_steps", report.adam_steps}, {"stages", stages}};
}

std::string mse_at_cell(const std::vector<double>& steps, int at) {
    if (static_cast<int>(steps.size()) < at) return "";
    return format_metric(steps[static_cast<std::size_t>(at - 1)]);
}

} // namespace

MakeAllOutcome run_make_all(const ExperimentConfig& exp, const std::string& out_dir, bool verbose) {
    exp.validate();
    MakeAllOutcome outcome;
    outcome.dataset_dir = out_dir + "/dataset";

    bool reuse = false;
    const std::string sim_hash = fnv1a64_hex(exp.sim.to_json().dump());
    try {
        const nlohmann::json manifest = read_manifest(outcome.dataset_dir + "/manifest.json");
        reuse = manifest.value("seed", std::uint64_t{0}) == exp.seed &&
                manifest.value("config_hash", std::string()) == sim_hash;
    } catch (const std::exception&) {
        reuse = false;
    }
    if (!reuse) {
        if (verbose) std::fprintf(stderr, "[make-all] generating dataset\n");
        emit_dataset(exp.sim, exp.seed, outcome.dataset_dir);
    } else if (verbose) {
        std::fprintf(stderr, "[make-all] reusing dataset\n");
    }

    const Dataset ds = load_dataset(outcome.dataset_dir);
    const auto train_tracks = ds.split("train");
    const auto val_tracks = ds.split("val");
    const auto test_tracks = ds.split("test");

    const std::string models_dir = out_dir + "/models";
    const std::string reports_dir = out_dir + "/reports";

    // Odometry stream first; the box grid conditions on its predictions.
    OdoConfig vis_cfg = exp.odo;
    vis_cfg.use_visual = true;
    OdoConfig novis_cfg = exp.odo;
    novis_cfg.use_visual = false;

    const auto train_odo = [&](const OdoConfig& cfg, const std::string& name) {
        Rng init_rng(exp.seed ^ fnv1a64(name));
        OdoWeights w = odo_init(cfg, init_rng);
        if (verbose) std::fprintf(stderr, "[make-all] training %s\n", name.c_str());
        const TrainReport report = train_odometry_model(w, cfg, train_tracks, val_tracks, exp.odo_train);
        const std::string path = models_dir + "/" + name + ".fse";
        save_odo_checkpoint(path, w, cfg, static_cast<int>(report.stages.size()), report_metrics(report));
        outcome.checkpoints.push_back(path);
        return w;
    };
    const OdoWeights vis_w = train_odo(vis_cfg, "odometry_visual");
    const OdoWeights novis_w = train_odo(novis_cfg, "odometry_blind");
    const OdoPredictorRef odo_ref{&vis_w, &vis_cfg};

    // Odometry table: overall and the curved-road subset.
    std::vector<const Track*> curved_test;
    for (const Track* t : test_tracks)
        if (is_curved_track(*t)) curved_test.push_back(t);
    const KalmanFit odo_fit =
        fit_kalman_odometry(odo_baseline_pairs(val_tracks, exp.odo.past_steps, exp.odo.horizon));

    CsvTable table3;
    table3.header = {"variant", "subset", "speed_mse", "angle_mse", "tasks"};
    const auto odo_rows = [&](const std::vector<const Track*>& subset, const std::string& label) {
        if (aligned_windows(subset, exp.odo.past_steps, exp.odo.horizon).empty()) return;
        const auto constant = evaluate_odometry_constant(subset, exp.odo.past_steps, exp.odo.horizon);
        const auto kalman =
            evaluate_odometry_kalman(subset, exp.odo.past_steps, exp.odo.horizon, odo_fit.q, odo_fit.r);
        const auto blind = evaluate_odometry_model(novis_w, novis_cfg, subset);
        const auto vis = evaluate_odometry_model(vis_w, vis_cfg, subset);
        const auto row = [&](const char* variant, const OdoEvalResult& r) {
            table3.rows.push_back({variant, label, format_metric(r.speed_mse), format_metric(r.angle_mse),
                                   std::to_string(r.tasks)});
        };
        row("constant", constant);
        row("kalman", kalman);
        row("lstm", blind);
        row("lstm-raster", vis);
    };
    odo_rows(test_tracks, "all");
    odo_rows(curved_test, "curved");

    // Box-model grid.
    struct GridEntry {
        const char* name;
        Variant variant;
        Streams streams;
        int past;
        bool in_table1;
        bool in_table4;
    };
    const GridEntry grid[] = {
        {"lstm", Variant::homoscedastic, Streams::two, 8, true, false},
        {"lstm-aleatoric", Variant::aleatoric, Streams::two, 8, true, false},
        {"lstm-bayesian", Variant::bayesian, Streams::two, 8, true, true},
        {"lstm-bayesian-one", Variant::bayesian, Streams::one, 8, false, true},
        {"lstm-bayesian-oracle", Variant::bayesian, Streams::oracle_odometry, 8, false, true},
        {"lstm-bayesian-m4", Variant::bayesian, Streams::two, 4, false, true},
    };

    CsvTable table1;
    table1.header = {"variant", "streams", "past", "mse_at_5", "mse_at_10", "mse_at_15", "mse_mean", "nll"};
    CsvTable table4;
    table4.header = {"variant", "streams", "past", "mse_mean", "nll", "epistemic", "aleatoric",
                     "spearman"};

    const KalmanFit box_fit =
        fit_kalman_boxes(bbox_baseline_pairs(val_tracks, exp.bbox.past_steps, exp.bbox.horizon));
    const auto kalman_eval =
        evaluate_bbox_kalman(test_tracks, exp.bbox.past_steps, exp.bbox.horizon, box_fit.q, box_fit.r);
    const auto constant_eval = evaluate_bbox_constant(test_tracks, exp.bbox.past_steps, exp.bbox.horizon);
    const auto baseline_row = [&](const char* name, const BaselineEvalResult& r) {
        table1.rows.push_back({name, "", std::to_string(exp.bbox.past_steps), mse_at_cell(r.mse_steps, 5),
                               mse_at_cell(r.mse_steps, 10), mse_at_cell(r.mse_steps, 15),
                               format_metric(r.mse_px), ""});
    };
    baseline_row("kalman", kalman_eval);
    baseline_row("constant", constant_eval);

    CalibrationReport fig3;
    bool have_fig3 = false;
    for (const GridEntry& entry : grid) {
        BboxConfig cfg = exp.bbox;
        cfg.variant = entry.variant;
        cfg.streams = entry.streams;
        cfg.past_steps = entry.past;
        Rng init_rng(exp.seed ^ fnv1a64(entry.name));
        BboxWeights w = bbox_init(cfg, init_rng);
        if (verbose) std::fprintf(stderr, "[make-all] training %s\n", entry.name);
        const OdoPredictorRef* ref = cfg.streams == Streams::two ? &odo_ref : nullptr;
        const TrainReport report = train_bbox_model(w, cfg, train_tracks, val_tracks, exp.train, ref);
        const std::string path = models_dir + "/" + std::string(entry.name) + ".fse";
        save_bbox_checkpoint(path, w, cfg, static_cast<int>(report.stages.size()),
                             report_metrics(report));
        outcome.checkpoints.push_back(path);

        const BboxEvalResult eval =
            evaluate_bbox_model(w, cfg, test_tracks, ref, exp.seed ^ fnv1a64(entry.name) ^ 0x9e37ULL);
        if (entry.in_table1)
            table1.rows.push_back({entry.name, to_string(cfg.streams), std::to_string(cfg.past_steps),
                                   mse_at_cell(eval.mse_steps, 5), mse_at_cell(eval.mse_steps, 10),
                                   mse_at_cell(eval.mse_steps, 15), format_metric(eval.mse_px),
                                   format_metric(eval.nll)});
        if (entry.in_table4)
            table4.rows.push_back({entry.name, to_string(cfg.streams), std::to_string(cfg.past_steps),
                                   format_metric(eval.mse_px), format_metric(eval.nll),
                                   format_metric(eval.mean_epistemic_px),
                                   format_metric(eval.mean_aleatoric_px),
                                   format_metric(eval.spearman_rho)});
        if (entry.variant == Variant::bayesian && entry.streams == Streams::two && entry.past == 8) {
            fig3 = eval.calibration;
            have_fig3 = true;
        }
    }

    const auto emit_table = [&](const char* name, const CsvTable& table) {
        const std::string path = reports_dir + "/" + name;
        write_csv(path, table);
        outcome.reports.push_back(path);
    };
    emit_table("table1.csv", table1);
    emit_table("table3.csv", table3);
    emit_table("table4.csv", table4);
    if (have_fig3) {
        CsvTable fig;
        fig.header = {"bin", "mean_total_uncertainty_px2", "max_log_sq_error"};
        for (std::size_t b = 0; b < fig3.bin_mean_uncertainty.size(); ++b)
            fig.rows.push_back({std::to_string(b), format_metric(fig3.bin_mean_uncertainty[b]),
                                format_metric(fig3.bin_max_log_se[b])});
        emit_table("fig3.csv", fig);
    }
    return outcome;
}

} // namespace fse
