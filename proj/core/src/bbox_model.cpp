#include "foresee/bbox_model.hpp"

#include <cmath>

namespace fse {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::homoscedastic: return "homoscedastic";
        case Variant::aleatoric: return "aleatoric";
        case Variant::bayesian: return "bayesian";
    }
    return "?";
}

std::string to_string(Streams s) {
    switch (s) {
        case Streams::one: return "one";
        case Streams::two: return "two";
        case Streams::oracle_odometry: return "oracle-odometry";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    if (s == "homoscedastic" || s == "lstm") return Variant::homoscedastic;
    if (s == "aleatoric" || s == "lstm-aleatoric") return Variant::aleatoric;
    if (s == "bayesian" || s == "lstm-bayesian") return Variant::bayesian;
    throw ConfigError("unknown variant '" + s + "' (homoscedastic|aleatoric|bayesian)");
}

Streams parse_streams(const std::string& s) {
    if (s == "one") return Streams::one;
    if (s == "two") return Streams::two;
    if (s == "oracle-odometry" || s == "oracle") return Streams::oracle_odometry;
    throw ConfigError("unknown streams mode '" + s + "' (one|two|oracle-odometry)");
}

void BboxConfig::validate() const {
    if (past_steps < 1 || horizon < 1) throw ConfigError("past_steps and horizon must be >= 1");
    if (embed_dim < 1 || hidden_dim < 1) throw ConfigError("embed_dim and hidden_dim must be >= 1");
    if (keep_prob <= 0.0 || keep_prob > 1.0) throw ConfigError("keep_prob must be in (0,1]");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
    if (image_width < 1 || image_height < 1) throw ConfigError("image size must be positive");
}

std::vector<std::pair<std::string, Array*>> BboxWeights::named() {
    return {{"w_emi", &w_emi},   {"w_ems", &w_ems},   {"enc_w", &enc.w},   {"enc_b", &enc.bias},
            {"dec_w", &dec.w},   {"dec_b", &dec.bias}, {"w_head", &w_head}, {"b_head", &b_head}};
}

std::vector<std::pair<std::string, const Array*>> BboxWeights::named() const {
    auto mut = const_cast<BboxWeights*>(this)->named();
    std::vector<std::pair<std::string, const Array*>> out;
    out.reserve(mut.size());
    for (auto& [name, arr] : mut) out.emplace_back(name, arr);
    return out;
}

std::vector<const Array*> BboxWeights::regularized() const {
    return {&w_emi, &w_ems, &enc.w, &dec.w};
}

BboxWeights bbox_init(const BboxConfig& cfg, Rng& rng) {
    cfg.validate();
    BboxWeights w;
    w.w_emi = dense_init(cfg.encoder_in(), cfg.embed_dim, rng);
    w.w_ems = dense_init(cfg.decoder_in(), cfg.embed_dim, rng);
    w.enc = lstm_init(cfg.embed_dim, cfg.hidden_dim, rng);
    w.dec = lstm_init(cfg.embed_dim, cfg.hidden_dim, rng);
    w.w_head = dense_init(cfg.hidden_dim, 6, rng);
    w.b_head = Array({1, 6});
    return w;
}

BboxMaskSet sample_bbox_masks(const BboxConfig& cfg, int rows, double keep_prob, Rng& rng) {
    BboxMaskSet m;
    m.z_emi = sample_mask(rng, rows, cfg.embed_dim, keep_prob);
    m.z_ems = sample_mask(rng, rows, cfg.embed_dim, keep_prob);
    m.enc_x = sample_mask(rng, rows, cfg.embed_dim, keep_prob);
    m.enc_h = sample_mask(rng, rows, cfg.hidden_dim, keep_prob);
    m.dec_x = sample_mask(rng, rows, cfg.embed_dim, keep_prob);
    m.dec_h = sample_mask(rng, rows, cfg.hidden_dim, keep_prob);
    return m;
}

BboxMaskSet ones_bbox_masks(const BboxConfig& cfg, int rows) {
    BboxMaskSet m;
    m.z_emi = Array::full({rows, cfg.embed_dim}, 1.0);
    m.z_ems = Array::full({rows, cfg.embed_dim}, 1.0);
    m.enc_x = Array::full({rows, cfg.embed_dim}, 1.0);
    m.enc_h = Array::full({rows, cfg.hidden_dim}, 1.0);
    m.dec_x = Array::full({rows, cfg.embed_dim}, 1.0);
    m.dec_h = Array::full({rows, cfg.hidden_dim}, 1.0);
    return m;
}

namespace {

struct BatchSteps {
    int batch = 0;
    int n = 0;
    std::vector<Array> enc_in;  // m arrays {B, encoder_in}
    std::vector<Array> odo_f;   // n arrays {B, odo_dim} (empty when unused)
    Array last_box;             // {B, 4} normalized, autoregressive seed
};

BatchSteps build_steps(const std::vector<PredictionTask>& tasks, const BboxConfig& cfg) {
    if (tasks.empty()) throw ContractError("empty task batch");
    const int m = cfg.past_steps;
    const std::size_t n = tasks.front().future_odo.size();
    if (n == 0) throw ContractError("prediction horizon must be >= 1");
    const BoxScale scale = cfg.box_scale();

    BatchSteps bs;
    bs.batch = static_cast<int>(tasks.size());
    bs.n = static_cast<int>(n);
    for (const PredictionTask& t : tasks) {
        if (static_cast<int>(t.past_boxes.size()) != m || t.past_odo.size() != t.past_boxes.size()) {
            throw DimensionError("task conditioning length != configured past_steps");
        }
        if (t.future_odo.size() != n) throw DimensionError("uneven horizons within a batch");
    }
    const int din = cfg.encoder_in();
    for (int t = 0; t < m; ++t) {
        Array x({bs.batch, din});
        for (int b = 0; b < bs.batch; ++b) {
            const BoundingBox nb = scale.normalize(tasks[b].past_boxes[t]);
            double* row = x.data() + static_cast<std::size_t>(b) * din;
            row[0] = nb.x_tl;
            row[1] = nb.y_tl;
            row[2] = nb.x_br;
            row[3] = nb.y_br;
            if (cfg.uses_odometry()) {
                row[4] = scaled_speed(tasks[b].past_odo[t].speed);
                row[5] = scaled_steering(tasks[b].past_odo[t].steering);
            }
        }
        bs.enc_in.push_back(std::move(x));
    }
    if (cfg.uses_odometry()) {
        for (int j = 0; j < bs.n; ++j) {
            Array o({bs.batch, cfg.odo_dim});
            for (int b = 0; b < bs.batch; ++b) {
                o.at(b, 0) = scaled_speed(tasks[b].future_odo[j].speed);
                o.at(b, 1) = scaled_steering(tasks[b].future_odo[j].steering);
            }
            bs.odo_f.push_back(std::move(o));
        }
    }
    bs.last_box = Array({bs.batch, 4});
    for (int b = 0; b < bs.batch; ++b) {
        const BoundingBox nb = scale.normalize(tasks[b].past_boxes[m - 1]);
        bs.last_box.at(b, 0) = nb.x_tl;
        bs.last_box.at(b, 1) = nb.y_tl;
        bs.last_box.at(b, 2) = nb.x_br;
        bs.last_box.at(b, 3) = nb.y_br;
    }
    return bs;
}

} // namespace

std::vector<std::vector<GaussianStepParams>> forward_params_batch(
    const std::vector<PredictionTask>& tasks, const BboxWeights& w, const BboxConfig& cfg,
    const BboxMaskSet& masks) {
    const BatchSteps bs = build_steps(tasks, cfg);
    const int B = bs.batch;

    LstmState enc{Array({B, cfg.hidden_dim}), Array({B, cfg.hidden_dim})};
    for (const Array& x : bs.enc_in) {
        const Array e = embed(x, w.w_emi, &masks.z_emi);
        enc = lstm_step(w.enc, e, enc, &masks.enc_x, &masks.enc_h);
    }
    const Array summary = enc.h;

    std::vector<std::vector<GaussianStepParams>> out(
        static_cast<std::size_t>(B), std::vector<GaussianStepParams>(static_cast<std::size_t>(bs.n)));
    LstmState dec{Array({B, cfg.hidden_dim}), Array({B, cfg.hidden_dim})};
    Array prev_box = bs.last_box;
    for (int j = 0; j < bs.n; ++j) {
        Array d = summary;
        if (cfg.uses_odometry()) d = concat_cols(d, bs.odo_f[static_cast<std::size_t>(j)]);
        if (cfg.autoregressive) d = concat_cols(d, prev_box);
        const Array e = embed(d, w.w_ems, &masks.z_ems);
        dec = lstm_step(w.dec, e, dec, &masks.dec_x, &masks.dec_h);
        const Array head = add(matmul(dec.h, w.w_head), w.b_head);
        if (!head.all_finite()) {
            throw NumericalError("non-finite head output at step " + std::to_string(j));
        }
        for (int b = 0; b < B; ++b) {
            const double* row = head.data() + static_cast<std::size_t>(b) * 6;
            GaussianStepParams p;
            p.mean = box_from_ptr(row);
            if (cfg.variant == Variant::homoscedastic) {
                p.sigma_x = 1.0;
                p.sigma_y = 1.0;
            } else {
                p.sigma_x = std::exp(0.5 * row[4]);
                p.sigma_y = std::exp(0.5 * row[5]);
            }
            out[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)] = p;
        }
        if (cfg.autoregressive) {
            prev_box = Array({B, 4});
            for (int b = 0; b < B; ++b) {
                for (int c = 0; c < 4; ++c) prev_box.at(b, c) = head[static_cast<std::size_t>(b) * 6 + c];
            }
        }
    }
    return out;
}

std::vector<GaussianStepParams> forward_params(const PredictionTask& task, const BboxWeights& w,
                                               const BboxConfig& cfg, const BboxMaskSet& masks) {
    return forward_params_batch({task}, w, cfg, masks).front();
}

namespace {

BoundingBox draw_box(const GaussianStepParams& p, Rng& rng) {
    BoundingBox b;
    b.x_tl = p.mean.x_tl + p.sigma_x * rng.normal();
    b.y_tl = p.mean.y_tl + p.sigma_y * rng.normal();
    b.x_br = p.mean.x_br + p.sigma_x * rng.normal();
    b.y_br = p.mean.y_br + p.sigma_y * rng.normal();
    return b;
}

} // namespace

std::vector<PredictiveSampleSet> sample_predictive_batch(const std::vector<PredictionTask>& tasks,
                                                         const BboxWeights& w, const BboxConfig& cfg,
                                                         int samples, double keep_prob, Rng& rng) {
    if (samples < 1) throw ContractError("sample count must be >= 1");
    const int B = static_cast<int>(tasks.size());
    const BoxScale scale = cfg.box_scale();
    std::vector<PredictiveSampleSet> out(tasks.size());
    for (PredictiveSampleSet& s : out) s.scale = scale;

    for (int t = 0; t < samples; ++t) {
        const BboxMaskSet masks = sample_bbox_masks(cfg, B, keep_prob, rng);
        std::vector<std::vector<GaussianStepParams>> params;
        try {
            params = forward_params_batch(tasks, w, cfg, masks);
        } catch (const NumericalError& e) {
            throw NumericalError("sample " + std::to_string(t) + ": " + e.what());
        }
        for (int b = 0; b < B; ++b) {
            PredictiveTrajectory traj;
            traj.params = std::move(params[static_cast<std::size_t>(b)]);
            traj.sampled_px.reserve(traj.params.size());
            for (const GaussianStepParams& p : traj.params) {
                traj.sampled_px.push_back(scale.denormalize(draw_box(p, rng)));
            }
            out[static_cast<std::size_t>(b)].trajectories.push_back(std::move(traj));
            out[static_cast<std::size_t>(b)].mask_sets.push_back(masks);
        }
    }
    return out;
}

PredictiveSampleSet sample_predictive(const PredictionTask& task, const BboxWeights& w,
                                      const BboxConfig& cfg, int samples, double keep_prob, Rng& rng) {
    return sample_predictive_batch({task}, w, cfg, samples, keep_prob, rng).front();
}

double training_loss(const std::vector<std::vector<GaussianStepParams>>& params,
                     const std::vector<std::vector<BoundingBox>>& targets_norm, const BboxWeights& w,
                     double lambda) {
    if (lambda < 0.0) throw ContractError("lambda must be >= 0");
    if (params.size() != targets_norm.size() || params.empty()) {
        throw DimensionError("loss batch sizes differ or are empty");
    }
    const double N = static_cast<double>(params.size());
    double data = 0.0, logterm = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != targets_norm[i].size()) {
            throw DimensionError("params/target length mismatch in loss");
        }
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            const GaussianStepParams& p = params[i][j];
            const BoundingBox& t = targets_norm[i][j];
            const double vx = p.sigma_x * p.sigma_x;
            const double vy = p.sigma_y * p.sigma_y;
            const double rx1 = p.mean.x_tl - t.x_tl;
            const double ry1 = p.mean.y_tl - t.y_tl;
            const double rx2 = p.mean.x_br - t.x_br;
            const double ry2 = p.mean.y_br - t.y_br;
            data += (rx1 * rx1 + rx2 * rx2) / vx + (ry1 * ry1 + ry2 * ry2) / vy;
            logterm += std::log(vx) + std::log(vy);
        }
    }
    double reg = 0.0;
    for (const Array* m : w.regularized()) {
        for (std::size_t i = 0; i < m->size(); ++i) reg += (*m)[i] * (*m)[i];
    }
    const double loss = data / (4.0 * N) + lambda * reg + logterm / N;
    if (!std::isfinite(loss)) throw NumericalError("non-finite training loss");
    return loss;
}

BboxLossGraph build_loss_graph(const std::vector<PredictionTask>& tasks, const BboxWeights& w,
                               const BboxConfig& cfg, const BboxMaskSet& masks) {
    const BatchSteps bs = build_steps(tasks, cfg);
    const int B = bs.batch;
    const BoxScale scale = cfg.box_scale();
    for (const PredictionTask& t : tasks) {
        if (static_cast<int>(t.target_boxes.size()) != bs.n) {
            throw DimensionError("training task lacks targets for the horizon");
        }
    }

    BboxLossGraph g;
    Tape& tp = g.tape;
    const Var w_emi = tp.input(w.w_emi, "w_emi");
    const Var w_ems = tp.input(w.w_ems, "w_ems");
    const LstmVars enc{tp.input(w.enc.w, "enc_w"), tp.input(w.enc.bias, "enc_b")};
    const LstmVars dec{tp.input(w.dec.w, "dec_w"), tp.input(w.dec.bias, "dec_b")};
    const Var w_head = tp.input(w.w_head, "w_head");
    const Var b_head = tp.input(w.b_head, "b_head");
    g.weight_vars = {w_emi, w_ems, enc.w, enc.bias, dec.w, dec.bias, w_head, b_head};

    const Var z_emi = tp.input(masks.z_emi);
    const Var z_ems = tp.input(masks.z_ems);
    const Var enc_x = tp.input(masks.enc_x);
    const Var enc_h = tp.input(masks.enc_h);
    const Var dec_x = tp.input(masks.dec_x);
    const Var dec_h = tp.input(masks.dec_h);

    LstmStateVars es{tp.input(Array({B, cfg.hidden_dim})), tp.input(Array({B, cfg.hidden_dim}))};
    for (const Array& x : bs.enc_in) {
        const Var e = embed(tp, tp.input(x), w_emi, z_emi);
        es = lstm_step(tp, enc, e, es, enc_x, enc_h);
    }
    const Var summary = es.h;

    Var data_sum;  // invalid until first step
    Var log_sum;
    LstmStateVars ds{tp.input(Array({B, cfg.hidden_dim})), tp.input(Array({B, cfg.hidden_dim}))};
    Var prev_box = tp.input(bs.last_box);
    for (int j = 0; j < bs.n; ++j) {
        Var d = summary;
        if (cfg.uses_odometry()) d = tp.concat_cols(d, tp.input(bs.odo_f[static_cast<std::size_t>(j)]));
        if (cfg.autoregressive) d = tp.concat_cols(d, prev_box);
        const Var e = embed(tp, d, w_ems, z_ems);
        ds = lstm_step(tp, dec, e, ds, dec_x, dec_h);
        const Var head = tp.add(tp.matmul(ds.h, w_head), b_head);
        const Var mean = tp.slice_cols(head, 0, 4);

        Array target({B, 4});
        for (int b = 0; b < B; ++b) {
            const BoundingBox nb = scale.normalize(tasks[static_cast<std::size_t>(b)].target_boxes[static_cast<std::size_t>(j)]);
            target.at(b, 0) = nb.x_tl;
            target.at(b, 1) = nb.y_tl;
            target.at(b, 2) = nb.x_br;
            target.at(b, 3) = nb.y_br;
        }
        const Var res = tp.sub(mean, tp.input(std::move(target)));
        const Var res2 = tp.hadamard(res, res);

        Var data_j;
        if (cfg.variant == Variant::homoscedastic) {
            data_j = tp.reduce_sum(res2);
        } else {
            const Var logv = tp.slice_cols(head, 4, 2);
            const Var inv_var = tp.exp(tp.scale(logv, -1.0));
            const Var inv_var4 = tp.concat_cols(inv_var, inv_var); // columns (vx, vy, vx, vy)
            data_j = tp.reduce_sum(tp.hadamard(res2, inv_var4));
            const Var log_j = tp.reduce_sum(logv);
            log_sum = log_sum.valid() ? tp.add(log_sum, log_j) : log_j;
        }
        data_sum = data_sum.valid() ? tp.add(data_sum, data_j) : data_j;
        if (cfg.autoregressive) prev_box = mean;
    }

    Var loss = tp.scale(data_sum, 1.0 / (4.0 * B));
    if (log_sum.valid()) loss = tp.add(loss, tp.scale(log_sum, 1.0 / B));
    if (cfg.lambda > 0.0) {
        Var reg;
        for (Var m : {w_emi, w_ems, enc.w, dec.w}) {
            const Var term = tp.reduce_sum(tp.hadamard(m, m));
            reg = reg.valid() ? tp.add(reg, term) : term;
        }
        loss = tp.add(loss, tp.scale(reg, cfg.lambda));
    }
    if (!tp.value(loss).all_finite()) throw NumericalError("non-finite training loss");
    g.loss = loss;
    return g;
}

} // namespace fse
