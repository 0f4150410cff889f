#include "foresee/odometry_model.hpp"

#include <cmath>
#include <memory>

namespace fse {

int OdoConfig::flat_dim() const {
    int side = raster_size;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
        if (i % 2 == 1) side /= 2;
    }
    const int ch = conv_channels.empty() ? 1 : conv_channels.back();
    return ch * side * side;
}

void OdoConfig::validate() const {
    if (past_steps < 1 || horizon < 1) throw ConfigError("past_steps and horizon must be >= 1");
    if (hidden_dim < 1 || v_vis_dim < 1) throw ConfigError("hidden_dim and v_vis_dim must be >= 1");
    if (raster_size < 1) throw ConfigError("raster_size must be >= 1");
    int side = raster_size;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
        if (conv_channels[i] < 1) throw ConfigError("conv channel counts must be >= 1");
        if (i % 2 == 1) {
            if (side % 2 != 0) throw ConfigError("raster side not divisible by pooling schedule");
            side /= 2;
        }
    }
    for (int d : dense_sizes) {
        if (d < 1) throw ConfigError("dense sizes must be >= 1");
    }
}

OdoConfig OdoConfig::paper_scale() {
    OdoConfig cfg;
    cfg.conv_channels = {32, 32, 64, 64, 128, 128, 256, 256, 512, 512};
    cfg.dense_sizes = {1024, 256};
    cfg.v_vis_dim = 128;
    return cfg;
}

std::vector<std::pair<std::string, Array*>> OdoWeights::named() {
    std::vector<std::pair<std::string, Array*>> out;
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
        out.emplace_back("conv_w" + std::to_string(i), &conv_w[i]);
        out.emplace_back("conv_b" + std::to_string(i), &conv_b[i]);
    }
    for (std::size_t i = 0; i < fc_w.size(); ++i) {
        out.emplace_back("fc_w" + std::to_string(i), &fc_w[i]);
        out.emplace_back("fc_b" + std::to_string(i), &fc_b[i]);
    }
    out.emplace_back("enc_w", &enc.w);
    out.emplace_back("enc_b", &enc.bias);
    out.emplace_back("dec_w", &dec.w);
    out.emplace_back("dec_b", &dec.bias);
    out.emplace_back("w_head", &w_head);
    out.emplace_back("b_head", &b_head);
    return out;
}

std::vector<std::pair<std::string, const Array*>> OdoWeights::named() const {
    auto mut = const_cast<OdoWeights*>(this)->named();
    std::vector<std::pair<std::string, const Array*>> out;
    out.reserve(mut.size());
    for (auto& [name, arr] : mut) out.emplace_back(name, arr);
    return out;
}

OdoWeights odo_init(const OdoConfig& cfg, Rng& rng) {
    cfg.validate();
    OdoWeights w;
    if (cfg.use_visual) {
        int in_ch = 1;
        for (int out_ch : cfg.conv_channels) {
            w.conv_w.push_back(dense_init(in_ch * 9, out_ch, rng)); // rows transposed below
            // Kernel layout is {out_ch, in_ch*9}; dense_init gives {in_ch*9, out_ch}.
            Array& k = w.conv_w.back();
            Array kt({out_ch, in_ch * 9});
            for (int r = 0; r < k.rows(); ++r) {
                for (int c = 0; c < k.cols(); ++c) kt.at(c, r) = k.at(r, c);
            }
            k = std::move(kt);
            w.conv_b.push_back(Array({1, out_ch}));
            in_ch = out_ch;
        }
        int in = cfg.flat_dim();
        for (int d : cfg.dense_sizes) {
            w.fc_w.push_back(dense_init(in, d, rng));
            w.fc_b.push_back(Array({1, d}));
            in = d;
        }
        w.fc_w.push_back(dense_init(in, cfg.v_vis_dim, rng));
        w.fc_b.push_back(Array({1, cfg.v_vis_dim}));
    }
    w.enc = lstm_init(2, cfg.hidden_dim, rng);
    w.dec = lstm_init(cfg.decoder_in(), cfg.hidden_dim, rng);
    w.w_head = dense_init(cfg.hidden_dim, 2, rng);
    w.b_head = Array({1, 2});
    return w;
}

Array conv3x3_same(const Array& x, const Array& k, const Array& bias, int in_ch, int height, int width) {
    if (x.ndim() != 2 || x.cols() != in_ch * height * width) {
        throw DimensionError("conv input shape " + x.shape_string() + " does not match " +
                             std::to_string(in_ch) + "x" + std::to_string(height) + "x" + std::to_string(width));
    }
    const int out_ch = k.rows();
    if (k.cols() != in_ch * 9 || bias.cols() != out_ch) throw DimensionError("conv kernel/bias shape mismatch");
    const int batch = x.rows();
    const int hw = height * width;
    Array out({batch, out_ch * hw});
    for (int b = 0; b < batch; ++b) {
        const double* xin = x.data() + static_cast<std::size_t>(b) * in_ch * hw;
        double* row = out.data() + static_cast<std::size_t>(b) * out_ch * hw;
        for (int oc = 0; oc < out_ch; ++oc) {
            const double* kw = k.data() + static_cast<std::size_t>(oc) * in_ch * 9;
            const double bv = bias[static_cast<std::size_t>(oc)];
            for (int y = 0; y < height; ++y) {
                for (int xx = 0; xx < width; ++xx) {
                    double s = bv;
                    for (int ic = 0; ic < in_ch; ++ic) {
                        const double* plane = xin + static_cast<std::size_t>(ic) * hw;
                        const double* kk = kw + ic * 9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int sy = y + ky - 1;
                            if (sy < 0 || sy >= height) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int sx = xx + kx - 1;
                                if (sx < 0 || sx >= width) continue;
                                s += plane[sy * width + sx] * kk[ky * 3 + kx];
                            }
                        }
                    }
                    row[(oc * height + y) * width + xx] = s;
                }
            }
        }
    }
    return out;
}

Array maxpool2x2(const Array& x, int ch, int height, int width) {
    if (x.ndim() != 2 || x.cols() != ch * height * width || height % 2 || width % 2) {
        throw DimensionError("maxpool input shape " + x.shape_string() + " incompatible with " +
                             std::to_string(ch) + "x" + std::to_string(height) + "x" + std::to_string(width));
    }
    const int batch = x.rows();
    const int oh = height / 2, ow = width / 2;
    Array out({batch, ch * oh * ow});
    for (int b = 0; b < batch; ++b) {
        const double* xin = x.data() + static_cast<std::size_t>(b) * ch * height * width;
        double* row = out.data() + static_cast<std::size_t>(b) * ch * oh * ow;
        for (int c = 0; c < ch; ++c) {
            const double* plane = xin + static_cast<std::size_t>(c) * height * width;
            for (int y = 0; y < oh; ++y) {
                for (int xx = 0; xx < ow; ++xx) {
                    const double a = plane[(2 * y) * width + 2 * xx];
                    const double b2 = plane[(2 * y) * width + 2 * xx + 1];
                    const double c2 = plane[(2 * y + 1) * width + 2 * xx];
                    const double d = plane[(2 * y + 1) * width + 2 * xx + 1];
                    row[(c * oh + y) * ow + xx] = std::max(std::max(a, b2), std::max(c2, d));
                }
            }
        }
    }
    return out;
}

namespace {

/// 3x3 same-padding convolution over channel-major rows.
class Conv3x3Op final : public CustomOp {
public:
    Conv3x3Op(int in_ch, int height, int width) : in_ch_(in_ch), height_(height), width_(width) {}

    std::string name() const override { return "conv3x3_same"; }

    Array forward(const std::vector<const Array*>& in) const override {
        return conv3x3_same(*in[0], *in[1], *in[2], in_ch_, height_, width_);
    }

    void backward(const std::vector<const Array*>& in, const Array&, const Array& g,
                  const std::vector<Array*>& gin) const override {
        const Array& x = *in[0];
        const Array& k = *in[1];
        Array& gx = *gin[0];
        Array& gk = *gin[1];
        Array& gb = *gin[2];
        const int batch = x.rows();
        const int out_ch = k.rows();
        const int hw = height_ * width_;
        for (int b = 0; b < batch; ++b) {
            const double* xin = x.data() + static_cast<std::size_t>(b) * in_ch_ * hw;
            const double* grow = g.data() + static_cast<std::size_t>(b) * out_ch * hw;
            double* gxrow = gx.data() + static_cast<std::size_t>(b) * in_ch_ * hw;
            for (int oc = 0; oc < out_ch; ++oc) {
                const double* kw = k.data() + static_cast<std::size_t>(oc) * in_ch_ * 9;
                double* gkw = gk.data() + static_cast<std::size_t>(oc) * in_ch_ * 9;
                const double* gplane = grow + static_cast<std::size_t>(oc) * hw;
                for (int y = 0; y < height_; ++y) {
                    for (int xx = 0; xx < width_; ++xx) {
                        const double gv = gplane[y * width_ + xx];
                        if (gv == 0.0) continue;
                        gb[static_cast<std::size_t>(oc)] += gv;
                        for (int ic = 0; ic < in_ch_; ++ic) {
                            const double* plane = xin + static_cast<std::size_t>(ic) * hw;
                            double* gxplane = gxrow + static_cast<std::size_t>(ic) * hw;
                            for (int ky = 0; ky < 3; ++ky) {
                                const int sy = y + ky - 1;
                                if (sy < 0 || sy >= height_) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int sx = xx + kx - 1;
                                    if (sx < 0 || sx >= width_) continue;
                                    gkw[ic * 9 + ky * 3 + kx] += gv * plane[sy * width_ + sx];
                                    gxplane[sy * width_ + sx] += gv * kw[ic * 9 + ky * 3 + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

private:
    int in_ch_, height_, width_;
};

/// 2x2 max pool; gradient routes to the first maximum in scan order.
class MaxPool2x2Op final : public CustomOp {
public:
    MaxPool2x2Op(int ch, int height, int width) : ch_(ch), height_(height), width_(width) {}

    std::string name() const override { return "maxpool2x2"; }

    Array forward(const std::vector<const Array*>& in) const override {
        return maxpool2x2(*in[0], ch_, height_, width_);
    }

    void backward(const std::vector<const Array*>& in, const Array&, const Array& g,
                  const std::vector<Array*>& gin) const override {
        const Array& x = *in[0];
        Array& gx = *gin[0];
        const int batch = x.rows();
        const int oh = height_ / 2, ow = width_ / 2;
        for (int b = 0; b < batch; ++b) {
            const double* xin = x.data() + static_cast<std::size_t>(b) * ch_ * height_ * width_;
            const double* grow = g.data() + static_cast<std::size_t>(b) * ch_ * oh * ow;
            double* gxrow = gx.data() + static_cast<std::size_t>(b) * ch_ * height_ * width_;
            for (int c = 0; c < ch_; ++c) {
                const double* plane = xin + static_cast<std::size_t>(c) * height_ * width_;
                double* gplane = gxrow + static_cast<std::size_t>(c) * height_ * width_;
                for (int y = 0; y < oh; ++y) {
                    for (int xx = 0; xx < ow; ++xx) {
                        int best_y = 2 * y, best_x = 2 * xx;
                        double best = plane[best_y * width_ + best_x];
                        for (int dy = 0; dy < 2; ++dy) {
                            for (int dx = 0; dx < 2; ++dx) {
                                const int sy = 2 * y + dy, sx = 2 * xx + dx;
                                if (plane[sy * width_ + sx] > best) {
                                    best = plane[sy * width_ + sx];
                                    best_y = sy;
                                    best_x = sx;
                                }
                            }
                        }
                        gplane[best_y * width_ + best_x] += grow[(c * oh + y) * ow + xx];
                    }
                }
            }
        }
    }

private:
    int ch_, height_, width_;
};

} // namespace

Array encode_visual(const Array& raster_rows, const OdoWeights& w, const OdoConfig& cfg) {
    if (!cfg.use_visual) throw ContractError("visual pathway disabled in config");
    if (raster_rows.ndim() != 2 || raster_rows.cols() != cfg.raster_size * cfg.raster_size) {
        throw DimensionError("raster rows shape " + raster_rows.shape_string() + " does not match size " +
                             std::to_string(cfg.raster_size));
    }
    Array h = raster_rows;
    int side = cfg.raster_size;
    int in_ch = 1;
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
        h = relu(conv3x3_same(h, w.conv_w[i], w.conv_b[i], in_ch, side, side));
        in_ch = cfg.conv_channels[i];
        if (i % 2 == 1) {
            h = maxpool2x2(h, in_ch, side, side);
            side /= 2;
        }
    }
    for (std::size_t i = 0; i + 1 < w.fc_w.size(); ++i) {
        h = relu(add(matmul(h, w.fc_w[i]), w.fc_b[i]));
    }
    return tanh_(add(matmul(h, w.fc_w.back()), w.fc_b.back()));
}

Var encode_visual(Tape& tp, Var raster_rows, const std::vector<Var>& conv_w,
                  const std::vector<Var>& conv_b, const std::vector<Var>& fc_w,
                  const std::vector<Var>& fc_b, const OdoConfig& cfg) {
    Var h = raster_rows;
    int side = cfg.raster_size;
    int in_ch = 1;
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
        auto conv = std::make_shared<Conv3x3Op>(in_ch, side, side);
        h = tp.relu(tp.custom(conv, {h, conv_w[i], conv_b[i]}));
        in_ch = cfg.conv_channels[i];
        if (i % 2 == 1) {
            auto pool = std::make_shared<MaxPool2x2Op>(in_ch, side, side);
            h = tp.custom(pool, {h});
            side /= 2;
        }
    }
    for (std::size_t i = 0; i + 1 < fc_w.size(); ++i) {
        h = tp.relu(tp.add(tp.matmul(h, fc_w[i]), fc_b[i]));
    }
    return tp.tanh(tp.add(tp.matmul(h, fc_w.back()), fc_b.back()));
}

namespace {

Array stack_past(const std::vector<OdoBatchTask>& tasks, int step) {
    Array x({static_cast<int>(tasks.size()), 2});
    for (std::size_t b = 0; b < tasks.size(); ++b) {
        x.at(static_cast<int>(b), 0) = scaled_speed(tasks[b].past[static_cast<std::size_t>(step)].speed);
        x.at(static_cast<int>(b), 1) = scaled_steering(tasks[b].past[static_cast<std::size_t>(step)].steering);
    }
    return x;
}

Array stack_rasters(const std::vector<OdoBatchTask>& tasks, const OdoConfig& cfg) {
    const int cells = cfg.raster_size * cfg.raster_size;
    Array r({static_cast<int>(tasks.size()), cells});
    for (std::size_t b = 0; b < tasks.size(); ++b) {
        if (tasks[b].raster == nullptr) throw ContractError("visual config requires a raster per task");
        if (static_cast<int>(tasks[b].raster->size()) != cells) {
            throw DimensionError("raster does not match configured resolution");
        }
        for (int i = 0; i < cells; ++i) r.at(static_cast<int>(b), i) = (*tasks[b].raster)[static_cast<std::size_t>(i)];
    }
    return r;
}

void check_tasks(const std::vector<OdoBatchTask>& tasks, const OdoConfig& cfg) {
    if (tasks.empty()) throw ContractError("empty odometry batch");
    for (const OdoBatchTask& t : tasks) {
        if (t.past.empty()) throw ContractError("past odometry must be non-empty");
        if (t.past.size() != tasks.front().past.size()) throw DimensionError("uneven past lengths in batch");
    }
    if (static_cast<int>(tasks.front().past.size()) != cfg.past_steps) {
        throw DimensionError("past length != configured past_steps");
    }
}

} // namespace

std::vector<std::vector<OdometryState>> predict_odometry_batch(const std::vector<OdoBatchTask>& tasks,
                                                               const OdoWeights& w, const OdoConfig& cfg,
                                                               int n) {
    check_tasks(tasks, cfg);
    if (n < 1) throw ContractError("horizon must be >= 1");
    const int B = static_cast<int>(tasks.size());

    LstmState enc{Array({B, cfg.hidden_dim}), Array({B, cfg.hidden_dim})};
    for (int t = 0; t < cfg.past_steps; ++t) enc = lstm_step(w.enc, stack_past(tasks, t), enc);
    Array d = enc.h;
    if (cfg.use_visual) d = concat_cols(d, encode_visual(stack_rasters(tasks, cfg), w, cfg));

    std::vector<std::vector<OdometryState>> out(tasks.size());
    LstmState dec{Array({B, cfg.hidden_dim}), Array({B, cfg.hidden_dim})};
    for (int j = 0; j < n; ++j) {
        dec = lstm_step(w.dec, d, dec);
        const Array head = add(matmul(dec.h, w.w_head), w.b_head);
        if (!head.all_finite()) throw NumericalError("non-finite odometry head at step " + std::to_string(j));
        for (int b = 0; b < B; ++b) {
            out[static_cast<std::size_t>(b)].push_back(
                {head[static_cast<std::size_t>(b) * 2], head[static_cast<std::size_t>(b) * 2 + 1]});
        }
    }
    return out;
}

std::vector<OdometryState> predict_odometry(const std::vector<OdometryState>& past, const Array* raster,
                                            const OdoWeights& w, const OdoConfig& cfg, int n) {
    OdoBatchTask task;
    task.past = past;
    task.raster = raster;
    return predict_odometry_batch({task}, w, cfg, n).front();
}

OdoLoss odometry_loss(const std::vector<OdometryState>& pred, const std::vector<OdometryState>& target) {
    if (pred.size() != target.size()) throw DimensionError("odometry loss length mismatch");
    if (pred.empty()) throw ContractError("odometry loss over empty sequence");
    OdoLoss l;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double ds = pred[i].speed - target[i].speed;
        const double dd = pred[i].steering - target[i].steering;
        l.speed_mse += ds * ds;
        l.angle_mse += dd * dd;
    }
    l.speed_mse /= static_cast<double>(pred.size());
    l.angle_mse /= static_cast<double>(pred.size());
    return l;
}

OdoLossGraph build_odo_loss_graph(const std::vector<OdoBatchTask>& tasks, const OdoWeights& w,
                                  const OdoConfig& cfg) {
    check_tasks(tasks, cfg);
    const int B = static_cast<int>(tasks.size());
    const std::size_t n = tasks.front().target.size();
    if (n == 0) throw ContractError("training tasks need targets");
    for (const OdoBatchTask& t : tasks) {
        if (t.target.size() != n) throw DimensionError("uneven target lengths in batch");
    }

    OdoLossGraph g;
    Tape& tp = g.tape;
    std::vector<Var> conv_w, conv_b, fc_w, fc_b;
    for (std::size_t i = 0; i < w.conv_w.size(); ++i) {
        conv_w.push_back(tp.input(w.conv_w[i], "conv_w" + std::to_string(i)));
        conv_b.push_back(tp.input(w.conv_b[i], "conv_b" + std::to_string(i)));
    }
    for (std::size_t i = 0; i < w.fc_w.size(); ++i) {
        fc_w.push_back(tp.input(w.fc_w[i], "fc_w" + std::to_string(i)));
        fc_b.push_back(tp.input(w.fc_b[i], "fc_b" + std::to_string(i)));
    }
    const LstmVars enc{tp.input(w.enc.w, "enc_w"), tp.input(w.enc.bias, "enc_b")};
    const LstmVars dec{tp.input(w.dec.w, "dec_w"), tp.input(w.dec.bias, "dec_b")};
    const Var w_head = tp.input(w.w_head, "w_head");
    const Var b_head = tp.input(w.b_head, "b_head");
    // Same interleaving as OdoWeights::named(): trainers pair these with it.
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
        g.weight_vars.push_back(conv_w[i]);
        g.weight_vars.push_back(conv_b[i]);
    }
    for (std::size_t i = 0; i < fc_w.size(); ++i) {
        g.weight_vars.push_back(fc_w[i]);
        g.weight_vars.push_back(fc_b[i]);
    }
    g.weight_vars.push_back(enc.w);
    g.weight_vars.push_back(enc.bias);
    g.weight_vars.push_back(dec.w);
    g.weight_vars.push_back(dec.bias);
    g.weight_vars.push_back(w_head);
    g.weight_vars.push_back(b_head);

    LstmStateVars es{tp.input(Array({B, cfg.hidden_dim})), tp.input(Array({B, cfg.hidden_dim}))};
    for (int t = 0; t < cfg.past_steps; ++t) {
        es = lstm_step(tp, enc, tp.input(stack_past(tasks, t)), es);
    }
    Var d = es.h;
    if (cfg.use_visual) {
        d = tp.concat_cols(d, encode_visual(tp, tp.input(stack_rasters(tasks, cfg)), conv_w, conv_b, fc_w, fc_b, cfg));
    }

    Var sum;
    LstmStateVars ds{tp.input(Array({B, cfg.hidden_dim})), tp.input(Array({B, cfg.hidden_dim}))};
    for (std::size_t j = 0; j < n; ++j) {
        ds = lstm_step(tp, dec, d, ds);
        const Var head = tp.add(tp.matmul(ds.h, w_head), b_head);
        Array target({B, 2});
        for (int b = 0; b < B; ++b) {
            target.at(b, 0) = tasks[static_cast<std::size_t>(b)].target[j].speed;
            target.at(b, 1) = tasks[static_cast<std::size_t>(b)].target[j].steering;
        }
        const Var res = tp.sub(head, tp.input(std::move(target)));
        const Var term = tp.reduce_sum(tp.hadamard(res, res));
        sum = sum.valid() ? tp.add(sum, term) : term;
    }
    g.loss = tp.scale(sum, 1.0 / (2.0 * B * static_cast<double>(n)));
    if (!tp.value(g.loss).all_finite()) throw NumericalError("non-finite odometry loss");
    return g;
}

Track augment_flip(const Track& track) {
    Track out = track;
    for (FrameObs& f : out.frames) f.odo.steering = -f.odo.steering;
    if (!out.raster.empty()) {
        const int rows = out.raster.rows(), cols = out.raster.cols();
        for (int y = 0; y < rows; ++y) {
            for (int x = 0; x < cols / 2; ++x) {
                std::swap(out.raster.at(y, x), out.raster.at(y, cols - 1 - x));
            }
        }
    }
    return out;
}

} // namespace fse
