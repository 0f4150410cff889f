#include "foresee/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "foresee/error.hpp"

namespace fse {

namespace {

constexpr std::size_t kEvalChunk = 64;

void shuffle_indices(std::vector<std::size_t>& order, Rng& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(order[i - 1], order[j]);
    }
}

std::vector<Array> snapshot_weights(const std::vector<Array*>& params) {
    std::vector<Array> copy;
    copy.reserve(params.size());
    for (const Array* p : params) copy.push_back(*p);
    return copy;
}

void restore_weights(const std::vector<Array*>& params, const std::vector<Array>& snapshot) {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = snapshot[i];
}

bool has_nonzero_steering(const Track& t) {
    for (const auto& f : t.frames)
        if (f.odo.steering != 0.0) return true;
    return false;
}

std::vector<BoundingBox> normalized_targets(const PredictionTask& task, const BoxScale& scale) {
    std::vector<BoundingBox> out;
    out.reserve(task.target_boxes.size());
    for (const auto& b : task.target_boxes) out.push_back(scale.normalize(b));
    return out;
}

/// Shared stage loop: step() runs one optimizer pass over shuffled batches,
/// validate() returns the early-stopping metric.
template <typename StepFn, typename ValFn>
StageReport run_stage(int horizon, std::size_t train_count, const TrainConfig& tc,
                      const std::vector<Array*>& params, Rng& rng, StepFn&& step, ValFn&& validate,
                      const char* tag) {
    StageReport report;
    report.horizon = horizon;
    report.best_val = std::numeric_limits<double>::infinity();
    std::vector<Array> best = snapshot_weights(params);
    std::vector<std::size_t> order(train_count);
    for (std::size_t i = 0; i < train_count; ++i) order[i] = i;

    int since_best = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        shuffle_indices(order, rng);
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(tc.batch_size));
            step(order, begin, end);
        }
        const double val = validate();
        report.val_history.push_back(val);
        ++report.epochs_run;
        if (tc.verbose)
            std::fprintf(stderr, "[%s] horizon %d epoch %d val %.6f\n", tag, horizon, epoch, val);
        if (val < report.best_val) {
            report.best_val = val;
            best = snapshot_weights(params);
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= tc.patience) break;
        }
    }
    restore_weights(params, best);
    return report;
}

} // namespace

void AdamConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("AdamConfig: lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("AdamConfig: beta1 must lie in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("AdamConfig: beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("AdamConfig: eps must be positive");
}

AdamState::AdamState(const std::vector<Array*>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Array* p : params) {
        m_.push_back(Array::zeros(p->shape()));
        v_.push_back(Array::zeros(p->shape()));
    }
}

void AdamState::step(const std::vector<Array*>& params, const std::vector<const Array*>& grads,
                     const AdamConfig& cfg) {
    cfg.validate();
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ContractError("AdamState::step: parameter list does not match state");
    ++t_;
    beta1_pow_ *= cfg.beta1;
    beta2_pow_ *= cfg.beta2;
    const double m_corr = 1.0 / (1.0 - beta1_pow_);
    const double v_corr = 1.0 / (1.0 - beta2_pow_);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Array& theta = *params[k];
        const Array& g = *grads[k];
        if (g.shape() != theta.shape())
            throw DimensionError("AdamState::step: gradient shape mismatch for parameter " +
                                 std::to_string(k));
        Array& m = m_[k];
        Array& v = v_[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = g.data()[i];
            m.data()[i] = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            v.data()[i] = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            const double m_hat = m.data()[i] * m_corr;
            const double v_hat = v.data()[i] * v_corr;
            theta.data()[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

std::vector<int> sliding_windows(int track_len, int past, int horizon) {
    if (past < 1 || horizon < 1) throw ContractError("sliding_windows: past and horizon must be positive");
    std::vector<int> starts;
    const int count = std::max(0, track_len - (past + horizon) + 1);
    starts.reserve(static_cast<std::size_t>(count));
    for (int s = 0; s < count; ++s) starts.push_back(s);
    return starts;
}

std::vector<WindowRef> aligned_windows(const std::vector<const Track*>& tracks, int past, int horizon) {
    if (past < 1 || past > kAlignFrame)
        throw ContractError("aligned_windows: past must lie in [1, " + std::to_string(kAlignFrame) + "]");
    if (horizon < 1) throw ContractError("aligned_windows: horizon must be positive");
    std::vector<WindowRef> windows;
    for (const Track* t : tracks) {
        if (static_cast<int>(t->frames.size()) < kAlignFrame + horizon) continue;
        windows.push_back({t, kAlignFrame - past});
    }
    return windows;
}

void TrainConfig::validate(int final_horizon) const {
    adam.validate();
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be positive");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be positive");
    if (patience < 1) throw ConfigError("TrainConfig: patience must be positive");
    if (curriculum.empty()) throw ConfigError("TrainConfig: curriculum must not be empty");
    for (std::size_t i = 0; i < curriculum.size(); ++i) {
        if (curriculum[i] < 1) throw ConfigError("TrainConfig: curriculum horizons must be positive");
        if (i > 0 && curriculum[i] <= curriculum[i - 1])
            throw ConfigError("TrainConfig: curriculum must be strictly increasing");
    }
    if (curriculum.back() != final_horizon)
        throw ConfigError("TrainConfig: curriculum must end at the model horizon");
}

PredictionTask make_bbox_task(const Track& track, int cond_start, int past, int horizon,
                              bool noisy_targets) {
    if (cond_start < 0 || cond_start + past + horizon > static_cast<int>(track.frames.size()))
        throw ContractError("make_bbox_task: window exceeds track");
    PredictionTask task;
    task.past_boxes.reserve(static_cast<std::size_t>(past));
    task.past_odo.reserve(static_cast<std::size_t>(past));
    for (int i = cond_start; i < cond_start + past; ++i) {
        task.past_boxes.push_back(track.frames[static_cast<std::size_t>(i)].box_noisy);
        task.past_odo.push_back(track.frames[static_cast<std::size_t>(i)].odo);
    }
    task.future_odo.reserve(static_cast<std::size_t>(horizon));
    task.target_boxes.reserve(static_cast<std::size_t>(horizon));
    for (int j = cond_start + past; j < cond_start + past + horizon; ++j) {
        const FrameObs& f = track.frames[static_cast<std::size_t>(j)];
        task.future_odo.push_back(f.odo);
        task.target_boxes.push_back(noisy_targets ? f.box_noisy : f.box_clean);
    }
    return task;
}

double eval_bbox_loss(const std::vector<PredictionTask>& tasks, const BboxWeights& w,
                      const BboxConfig& cfg) {
    if (tasks.empty()) throw ContractError("eval_bbox_loss: empty task list");
    const BoxScale scale = cfg.box_scale();
    double total = 0.0;
    for (std::size_t begin = 0; begin < tasks.size(); begin += kEvalChunk) {
        const std::size_t end = std::min(tasks.size(), begin + kEvalChunk);
        const std::vector<PredictionTask> chunk(tasks.begin() + static_cast<std::ptrdiff_t>(begin),
                                                tasks.begin() + static_cast<std::ptrdiff_t>(end));
        const BboxMaskSet masks = ones_bbox_masks(cfg, static_cast<int>(chunk.size()));
        const auto params = forward_params_batch(chunk, w, cfg, masks);
        std::vector<std::vector<BoundingBox>> targets;
        targets.reserve(chunk.size());
        for (const auto& t : chunk) targets.push_back(normalized_targets(t, scale));
        total += training_loss(params, targets, w, 0.0) * static_cast<double>(chunk.size());
    }
    return total / static_cast<double>(tasks.size());
}

double eval_odo_loss(const std::vector<OdoBatchTask>& tasks, const OdoWeights& w, const OdoConfig& cfg) {
    if (tasks.empty()) throw ContractError("eval_odo_loss: empty task list");
    double total = 0.0;
    for (std::size_t begin = 0; begin < tasks.size(); begin += kEvalChunk) {
        const std::size_t end = std::min(tasks.size(), begin + kEvalChunk);
        const std::vector<OdoBatchTask> chunk(tasks.begin() + static_cast<std::ptrdiff_t>(begin),
                                              tasks.begin() + static_cast<std::ptrdiff_t>(end));
        const auto preds = predict_odometry_batch(chunk, w, cfg, cfg.horizon);
        for (std::size_t i = 0; i < chunk.size(); ++i)
            total += odometry_loss(preds[i], chunk[i].target).mean();
    }
    return total / static_cast<double>(tasks.size());
}

TrainReport train_bbox_model(BboxWeights& w, const BboxConfig& cfg,
                             const std::vector<const Track*>& train_tracks,
                             const std::vector<const Track*>& val_tracks, const TrainConfig& tc,
                             const OdoPredictorRef* odo) {
    cfg.validate();
    tc.validate(cfg.horizon);
    if (odo != nullptr && (odo->weights == nullptr || odo->config == nullptr))
        throw ContractError("train_bbox_model: odometry reference missing weights or config");
    const bool predicted_odo = cfg.streams == Streams::two && odo != nullptr;

    std::vector<Array*> params;
    for (auto& [name, array] : w.named()) params.push_back(array);

    Rng rng(tc.seed);
    TrainReport report;
    for (const int horizon : tc.curriculum) {
        BboxConfig stage_cfg = cfg;
        stage_cfg.horizon = horizon;

        const auto build_tasks = [&](const std::vector<const Track*>& tracks, bool noisy) {
            std::vector<PredictionTask> tasks;
            const auto windows = aligned_windows(tracks, cfg.past_steps, horizon);
            tasks.reserve(windows.size());
            for (const auto& win : windows)
                tasks.push_back(make_bbox_task(*win.track, win.cond_start, cfg.past_steps, horizon, noisy));
            if (predicted_odo) {
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
                    const std::vector<OdoBatchTask> chunk(
                        odo_tasks.begin() + static_cast<std::ptrdiff_t>(begin),
                        odo_tasks.begin() + static_cast<std::ptrdiff_t>(end));
                    const auto preds = predict_odometry_batch(chunk, *odo->weights, *odo->config, horizon);
                    for (std::size_t i = 0; i < preds.size(); ++i) tasks[begin + i].future_odo = preds[i];
                }
            }
            return tasks;
        };

        const std::vector<PredictionTask> train_tasks = build_tasks(train_tracks, true);
        const std::vector<PredictionTask> val_tasks = build_tasks(val_tracks, false);
        if (train_tasks.empty() || val_tasks.empty())
            throw ContractError("train_bbox_model: no usable windows at horizon " + std::to_string(horizon));

        AdamState adam(params);
        const auto step = [&](const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
            std::vector<PredictionTask> batch;
            batch.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) batch.push_back(train_tasks[order[i]]);
            const int rows = static_cast<int>(batch.size());
            const BboxMaskSet masks = stage_cfg.variant == Variant::bayesian
                                          ? sample_bbox_masks(stage_cfg, rows, stage_cfg.keep_prob, rng)
                                          : ones_bbox_masks(stage_cfg, rows);
            BboxLossGraph graph = build_loss_graph(batch, w, stage_cfg, masks);
            graph.tape.backward(graph.loss);
            std::vector<const Array*> grads;
            grads.reserve(graph.weight_vars.size());
            for (const Var v : graph.weight_vars) grads.push_back(&graph.tape.grad(v));
            adam.step(params, grads, tc.adam);
            ++report.adam_steps;
        };
        const auto validate = [&] { return eval_bbox_loss(val_tasks, w, stage_cfg); };

        report.stages.push_back(
            run_stage(horizon, train_tasks.size(), tc, params, rng, step, validate, "bbox"));
    }
    report.final_val = report.stages.back().best_val;
    return report;
}

TrainReport train_odometry_model(OdoWeights& w, const OdoConfig& cfg,
                                 const std::vector<const Track*>& train_tracks,
                                 const std::vector<const Track*>& val_tracks, const TrainConfig& tc) {
    cfg.validate();
    tc.validate(cfg.horizon);

    std::vector<Array*> params;
    for (auto& [name, array] : w.named()) params.push_back(array);

    // Flipped copies must outlive the tasks that point at their rasters.
    std::vector<Track> flipped;
    std::vector<const Track*> train_aug = train_tracks;
    if (tc.flip_augment) {
        for (const Track* t : train_tracks)
            if (has_nonzero_steering(*t)) flipped.push_back(augment_flip(*t));
        for (const Track& t : flipped) train_aug.push_back(&t);
    }

    Rng rng(tc.seed);
    TrainReport report;
    for (const int horizon : tc.curriculum) {
        OdoConfig stage_cfg = cfg;
        stage_cfg.horizon = horizon;

        const auto build_tasks = [&](const std::vector<const Track*>& tracks) {
            std::vector<OdoBatchTask> tasks;
            const auto windows = aligned_windows(tracks, cfg.past_steps, horizon);
            tasks.reserve(windows.size());
            for (const auto& win : windows) {
                OdoBatchTask task;
                task.raster = &win.track->raster;
                for (int i = win.cond_start; i < win.cond_start + cfg.past_steps; ++i)
                    task.past.push_back(win.track->frames[static_cast<std::size_t>(i)].odo);
                for (int j = kAlignFrame; j < kAlignFrame + horizon; ++j)
                    task.target.push_back(win.track->frames[static_cast<std::size_t>(j)].odo);
                tasks.push_back(std::move(task));
            }
            return tasks;
        };

        const std::vector<OdoBatchTask> train_tasks = build_tasks(train_aug);
        const std::vector<OdoBatchTask> val_tasks = build_tasks(val_tracks);
        if (train_tasks.empty() || val_tasks.empty())
            throw ContractError("train_odometry_model: no usable windows at horizon " +
                                std::to_string(horizon));

        AdamState adam(params);
        const auto step = [&](const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
            std::vector<OdoBatchTask> batch;
            batch.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) batch.push_back(train_tasks[order[i]]);
            OdoLossGraph graph = build_odo_loss_graph(batch, w, stage_cfg);
            graph.tape.backward(graph.loss);
            std::vector<const Array*> grads;
            grads.reserve(graph.weight_vars.size());
            for (const Var v : graph.weight_vars) grads.push_back(&graph.tape.grad(v));
            adam.step(params, grads, tc.adam);
            ++report.adam_steps;
        };
        const auto validate = [&] { return eval_odo_loss(val_tasks, w, stage_cfg); };

        report.stages.push_back(
            run_stage(horizon, train_tasks.size(), tc, params, rng, step, validate, "odometry"));
    }
    report.final_val = report.stages.back().best_val;
    return report;
}

} // namespace fse
