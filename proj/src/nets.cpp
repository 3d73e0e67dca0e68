#include "sparsegrasp/nets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace sg {

namespace {

int scaled(int channels, double scale) {
    return std::max(4, static_cast<int>(std::lround(channels * scale)));
}

StageSpec conv_stage(int out_ch, int k, int stride, int pad) {
    StageSpec s;
    s.kind = StageSpec::Kind::Conv;
    s.out_channels = out_ch;
    s.kernel = k;
    s.stride = stride;
    s.padding = pad;
    return s;
}

StageSpec convt_stage(int out_ch, int k, int stride, int pad, int out_pad = 0) {
    StageSpec s = conv_stage(out_ch, k, stride, pad);
    s.kind = StageSpec::Kind::ConvTransposed;
    s.output_padding = out_pad;
    return s;
}

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

ArchitectureSpec ArchitectureSpec::grconvnet(int input_channels, int input_size, double scale) {
    ArchitectureSpec a;
    a.name = scale >= 1.0 ? "sparse-grconvnet" : "desk-grconvnet";
    a.input_channels = input_channels;
    a.input_size = input_size;
    a.scale_factor = scale;
    a.width_scale = 150.0 * input_size / 224.0;
    const int c1 = scaled(32, scale), c2 = scaled(64, scale), c3 = scaled(128, scale);
    const int fk = scale >= 1.0 ? 9 : 5;  // desk variant uses a lighter stem/exit kernel
    a.stages.push_back(conv_stage(c1, fk, 1, fk / 2));
    a.stages.push_back(conv_stage(c2, 4, 2, 1));
    a.stages.push_back(conv_stage(c3, 4, 2, 1));
    for (int i = 0; i < 5; ++i) {
        StageSpec r;
        r.kind = StageSpec::Kind::Residual;
        r.out_channels = c3;
        r.kernel = 3;
        r.padding = 1;
        a.stages.push_back(r);
    }
    a.stages.push_back(convt_stage(c2, 4, 2, 1));
    a.stages.push_back(convt_stage(c1, 4, 2, 1));
    a.stages.push_back(convt_stage(c1, fk, 1, fk / 2));
    StageSpec heads;
    heads.kind = StageSpec::Kind::Heads;
    heads.kernel = 3;
    heads.padding = 1;
    heads.batchnorm = false;
    heads.activation = false;
    a.stages.push_back(heads);
    return a;
}

ArchitectureSpec ArchitectureSpec::ginnet(int input_channels, int input_size, double scale) {
    ArchitectureSpec a = grconvnet(input_channels, input_size, scale);
    a.name = scale >= 1.0 ? "sparse-ginnet" : "desk-ginnet";
    const int c3 = scaled(128, scale);
    // Replace the five residual blocks with five inception blocks.
    for (auto& s : a.stages) {
        if (s.kind != StageSpec::Kind::Residual) continue;
        s.kind = StageSpec::Kind::Inception;
        s.out_channels = c3;
        s.branches = {
            {0, scaled(48, scale), 1},
            {scaled(24, scale), scaled(48, scale), 3},
            {scaled(16, scale), scaled(32, scale), 5},
        };
    }
    return a;
}

ArchitectureSpec ArchitectureSpec::by_name(const std::string& name) {
    if (name == "sparse-grconvnet") return grconvnet(4, 224, 1.0);
    if (name == "sparse-ginnet") return ginnet(4, 224, 1.0);
    if (name == "desk-grconvnet") return grconvnet(4, 96, 0.25);
    if (name == "desk-ginnet") return ginnet(4, 96, 0.25);
    throw std::invalid_argument("unknown architecture: " + name);
}

std::string ArchitectureSpec::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["input_channels"] = input_channels;
    j["input_size"] = input_size;
    j["scale_factor"] = scale_factor;
    j["width_scale"] = width_scale;
    for (const auto& s : stages) {
        nlohmann::json js;
        js["kind"] = static_cast<int>(s.kind);
        js["out_channels"] = s.out_channels;
        js["kernel"] = s.kernel;
        js["stride"] = s.stride;
        js["padding"] = s.padding;
        js["output_padding"] = s.output_padding;
        js["batchnorm"] = s.batchnorm;
        js["activation"] = s.activation;
        for (const auto& b : s.branches)
            js["branches"].push_back({b.reduce_channels, b.out_channels, b.kernel});
        j["stages"].push_back(js);
    }
    return j.dump();
}

ArchitectureSpec ArchitectureSpec::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ArchitectureSpec a;
    a.name = j.at("name").get<std::string>();
    a.input_channels = j.at("input_channels").get<int>();
    a.input_size = j.at("input_size").get<int>();
    a.scale_factor = j.at("scale_factor").get<double>();
    a.width_scale = j.at("width_scale").get<double>();
    for (const auto& js : j.at("stages")) {
        StageSpec s;
        s.kind = static_cast<StageSpec::Kind>(js.at("kind").get<int>());
        s.out_channels = js.at("out_channels").get<int>();
        s.kernel = js.at("kernel").get<int>();
        s.stride = js.at("stride").get<int>();
        s.padding = js.at("padding").get<int>();
        s.output_padding = js.at("output_padding").get<int>();
        s.batchnorm = js.at("batchnorm").get<bool>();
        s.activation = js.at("activation").get<bool>();
        if (js.contains("branches"))
            for (const auto& jb : js.at("branches"))
                s.branches.push_back({jb[0].get<int>(), jb[1].get<int>(), jb[2].get<int>()});
        a.stages.push_back(s);
    }
    return a;
}

Model::Model(const ArchitectureSpec& arch, const SparsityConfig& sparsity)
    : arch_(arch), sparsity_(sparsity) {
    std::mt19937 rng(sparsity.seed);
    int channels = arch.input_channels;
    int size = arch.input_size;

    auto add_conv = [&](const std::string& name, int in_ch, int out_ch, int k, int stride,
                        int pad, int out_pad, bool transposed, bool bn, bool act, bool masked) {
        BuiltConv c;
        c.name = name;
        std::vector<int> wshape = transposed ? std::vector<int>{in_ch, out_ch, k, k}
                                             : std::vector<int>{out_ch, in_ch, k, k};
        c.st = ScoredTensor(wshape, sparsity_, rng, masked);
        c.bias = make_tensor({out_ch});
        const float bound = kaiming_bound(wshape);
        fill_uniform(*c.bias, rng, -bound, bound);
        c.transposed = transposed;
        c.stride = stride;
        c.padding = pad;
        c.output_padding = out_pad;
        if (bn) c.bn.emplace(out_ch);
        c.activation = act;
        convs_.push_back(std::move(c));
        return static_cast<int>(convs_.size() - 1);
    };

    auto conv_out = [](int s, int k, int stride, int pad) {
        return (s + 2 * pad - k) / stride + 1;
    };
    auto convt_out = [](int s, int k, int stride, int pad, int out_pad) {
        return (s - 1) * stride - 2 * pad + k + out_pad;
    };

    for (size_t si = 0; si < arch.stages.size(); ++si) {
        const auto& s = arch.stages[si];
        const std::string base = "stage" + std::to_string(si);
        std::vector<int> ids;
        switch (s.kind) {
            case StageSpec::Kind::Conv:
                ids.push_back(add_conv(base + ".conv", channels, s.out_channels, s.kernel,
                                       s.stride, s.padding, 0, false, s.batchnorm, s.activation,
                                       true));
                channels = s.out_channels;
                size = conv_out(size, s.kernel, s.stride, s.padding);
                break;
            case StageSpec::Kind::ConvTransposed:
                ids.push_back(add_conv(base + ".convt", channels, s.out_channels, s.kernel,
                                       s.stride, s.padding, s.output_padding, true, s.batchnorm,
                                       s.activation, true));
                channels = s.out_channels;
                size = convt_out(size, s.kernel, s.stride, s.padding, s.output_padding);
                break;
            case StageSpec::Kind::Residual: {
                if (s.out_channels != channels)
                    throw std::invalid_argument("stage " + std::to_string(si) +
                                                ": residual block must preserve channels");
                const int pad = s.kernel / 2;
                ids.push_back(add_conv(base + ".conv1", channels, channels, s.kernel, 1, pad, 0,
                                       false, true, true, true));
                ids.push_back(add_conv(base + ".conv2", channels, channels, s.kernel, 1, pad, 0,
                                       false, true, false, true));
                break;
            }
            case StageSpec::Kind::Inception: {
                int out_sum = 0;
                for (size_t bi = 0; bi < s.branches.size(); ++bi) {
                    const auto& b = s.branches[bi];
                    const std::string bname = base + ".b" + std::to_string(bi);
                    if (b.reduce_channels > 0)
                        ids.push_back(add_conv(bname + ".reduce", channels, b.reduce_channels, 1,
                                               1, 0, 0, false, true, true, true));
                    else
                        ids.push_back(-1);
                    const int in_b = b.reduce_channels > 0 ? b.reduce_channels : channels;
                    ids.push_back(add_conv(bname + ".conv", in_b, b.out_channels, b.kernel, 1,
                                           b.kernel / 2, 0, false, true, true, true));
                    out_sum += b.out_channels;
                }
                if (out_sum != s.out_channels)
                    throw std::invalid_argument(
                        "stage " + std::to_string(si) +
                        ": inception branches sum to " + std::to_string(out_sum) +
                        ", declared " + std::to_string(s.out_channels));
                channels = s.out_channels;
                break;
            }
            case StageSpec::Kind::Heads: {
                const char* head_names[4] = {"quality", "cos2theta", "sin2theta", "width"};
                for (const char* hn : head_names)
                    ids.push_back(add_conv(base + "." + hn, channels, 1, s.kernel, 1, s.padding,
                                           0, false, false, false,
                                           sparsity_.mask_output_heads));
                size = conv_out(size, s.kernel, 1, s.padding);
                break;
            }
        }
        stage_convs_.push_back(std::move(ids));
    }

    if (size != arch.input_size)
        throw std::invalid_argument("architecture does not return to input size: got " +
                                    std::to_string(size) + " after stage " +
                                    std::to_string(arch.stages.size() - 1));
}

TensorPtr Model::run_conv(Tape& tape, BuiltConv& c, const TensorPtr& x, bool training) {
    auto eff = c.st.effective_weights();
    if (!training) eff->requires_grad = false;
    TensorPtr y = c.transposed
                      ? conv2d_transposed(tape, x, eff, c.bias, c.stride, c.padding,
                                          c.output_padding)
                      : conv2d(tape, x, eff, c.bias, c.stride, c.padding);
    if (c.bn) y = batchnorm_nonaffine(tape, y, *c.bn, training);
    if (c.activation) y = relu(tape, y);
    return y;
}

GraspMaps Model::forward(Tape& tape, const TensorPtr& input, bool training) {
    if (input->shape.size() != 4 || input->dim(1) != arch_.input_channels)
        throw std::invalid_argument("forward: expected " +
                                    std::to_string(arch_.input_channels) + "-channel input, got " +
                                    shape_str(input->shape));
    if (input->dim(2) != arch_.input_size || input->dim(3) != arch_.input_size)
        throw std::invalid_argument("forward: expected spatial size " +
                                    std::to_string(arch_.input_size) + ", got " +
                                    shape_str(input->shape));

    TensorPtr x = input;
    GraspMaps maps;
    for (size_t si = 0; si < arch_.stages.size(); ++si) {
        const auto& s = arch_.stages[si];
        const auto& ids = stage_convs_[si];
        switch (s.kind) {
            case StageSpec::Kind::Conv:
            case StageSpec::Kind::ConvTransposed:
                x = run_conv(tape, convs_[static_cast<size_t>(ids[0])], x, training);
                break;
            case StageSpec::Kind::Residual: {
                TensorPtr h = run_conv(tape, convs_[static_cast<size_t>(ids[0])], x, training);
                h = run_conv(tape, convs_[static_cast<size_t>(ids[1])], h, training);
                x = residual_add(tape, h, x);
                break;
            }
            case StageSpec::Kind::Inception: {
                std::vector<TensorPtr> parts;
                for (size_t i = 0; i < ids.size(); i += 2) {
                    TensorPtr h = x;
                    if (ids[i] >= 0)
                        h = run_conv(tape, convs_[static_cast<size_t>(ids[i])], h, training);
                    h = run_conv(tape, convs_[static_cast<size_t>(ids[i + 1])], h, training);
                    parts.push_back(h);
                }
                x = concat_channels(tape, parts);
                break;
            }
            case StageSpec::Kind::Heads:
                maps.quality = run_conv(tape, convs_[static_cast<size_t>(ids[0])], x, training);
                maps.cos2theta = run_conv(tape, convs_[static_cast<size_t>(ids[1])], x, training);
                maps.sin2theta = run_conv(tape, convs_[static_cast<size_t>(ids[2])], x, training);
                maps.width = run_conv(tape, convs_[static_cast<size_t>(ids[3])], x, training);
                break;
        }
    }
    if (!maps.quality) throw std::logic_error("architecture has no heads stage");
    return maps;
}

std::vector<TensorPtr> Model::score_params() {
    std::vector<TensorPtr> out;
    for (auto& c : convs_) out.push_back(c.st.scores());
    return out;
}

void Model::accumulate_score_grads() {
    for (auto& c : convs_) c.st.accumulate_score_grad();
}

ParamReport Model::param_report() const {
    ParamReport r;
    for (const auto& c : convs_) {
        LayerParamRow row;
        row.name = c.name;
        row.total = c.st.total_count();
        row.active = c.st.active_count();
        r.layers.push_back(row);
        r.maskable_total += row.total;
        r.maskable_active += row.active;
        r.unmasked += c.bias->numel();
    }
    return r;
}

uint64_t Model::weight_hash() const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& c : convs_) {
        const auto& w = c.st;
        h = fnv1a(h, const_cast<ScoredTensor&>(w).weights()->v.data(),
                  const_cast<ScoredTensor&>(w).weights()->v.size() * sizeof(float));
        h = fnv1a(h, c.bias->v.data(), c.bias->v.size() * sizeof(float));
    }
    return h;
}

std::vector<Model::NamedArray> Model::named_arrays() {
    std::vector<NamedArray> out;
    for (auto& c : convs_) {
        out.push_back({c.name + ".weights", c.st.weights()});
        out.push_back({c.name + ".scores", c.st.scores()});
        out.push_back({c.name + ".bias", c.bias});
        if (c.bn) {
            auto mean = make_tensor({c.bn->channels});
            auto var = make_tensor({c.bn->channels});
            mean->v = c.bn->running_mean;
            var->v = c.bn->running_var;
            out.push_back({c.name + ".bn_mean", mean});
            out.push_back({c.name + ".bn_var", var});
        }
    }
    return out;
}

std::vector<std::pair<std::string, BatchNormState*>> Model::bn_accessors() {
    std::vector<std::pair<std::string, BatchNormState*>> out;
    for (auto& c : convs_)
        if (c.bn) out.emplace_back(c.name, &*c.bn);
    return out;
}

void Model::set_k_fraction(float k) {
    sparsity_.k_fraction = k;
    for (auto& c : convs_) {
        c.st.set_k_fraction(k);
        c.st.select_topk();
    }
}

namespace {

void gaussian_smooth(const float* src, float* dst, int H, int W, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
    std::vector<float> kern(static_cast<size_t>(2 * radius + 1));
    float ksum = 0.0f;
    for (int i = -radius; i <= radius; ++i) {
        const float k = std::exp(static_cast<float>(-0.5 * i * i / (sigma * sigma)));
        kern[static_cast<size_t>(i + radius)] = k;
        ksum += k;
    }
    for (auto& k : kern) k /= ksum;
    std::vector<float> tmp(static_cast<size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float s = 0.0f;
            for (int i = -radius; i <= radius; ++i) {
                const int xx = std::clamp(x + i, 0, W - 1);
                s += kern[static_cast<size_t>(i + radius)] * src[y * W + xx];
            }
            tmp[static_cast<size_t>(y) * W + x] = s;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float s = 0.0f;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = std::clamp(y + i, 0, H - 1);
                s += kern[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(yy) * W + x];
            }
            dst[y * W + x] = s;
        }
}

GraspPoseImage decode_at(const GraspMaps& maps, int batch_index, int py, int px,
                         double width_scale, double q) {
    const int H = maps.quality->dim(2), W = maps.quality->dim(3);
    const int64_t off = static_cast<int64_t>(batch_index) * H * W;
    GraspPoseImage pose;
    pose.x = px;
    pose.y = py;
    const double c = std::clamp(
        static_cast<double>(maps.cos2theta->v[static_cast<size_t>(off + py * W + px)]), -1.0, 1.0);
    const double s = std::clamp(
        static_cast<double>(maps.sin2theta->v[static_cast<size_t>(off + py * W + px)]), -1.0, 1.0);
    double theta = 0.5 * std::atan2(s, c);
    pose.theta = fold_half_pi(theta);
    const double wv = std::clamp(
        static_cast<double>(maps.width->v[static_cast<size_t>(off + py * W + px)]), 0.0, 1.0);
    pose.width = wv * width_scale;
    pose.quality = std::clamp(q, 0.0, 1.0);
    return pose;
}

// Returns the (optionally smoothed) clamped quality plane for one batch item.
std::vector<float> prep_quality(const GraspMaps& maps, int batch_index, double sigma) {
    const int H = maps.quality->dim(2), W = maps.quality->dim(3);
    const int64_t off = static_cast<int64_t>(batch_index) * H * W;
    std::vector<float> q(static_cast<size_t>(H) * W);
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
        q[static_cast<size_t>(i)] =
            std::clamp(maps.quality->v[static_cast<size_t>(off + i)], 0.0f, 1.0f);
    if (sigma > 0.0) {
        std::vector<float> sm(q.size());
        gaussian_smooth(q.data(), sm.data(), H, W, sigma);
        return sm;
    }
    return q;
}

}  // namespace

GraspPoseImage decode_best_grasp(const GraspMaps& maps, double smoothing_sigma,
                                 double width_scale, int batch_index) {
    const int H = maps.quality->dim(2), W = maps.quality->dim(3);
    const auto q = prep_quality(maps, batch_index, smoothing_sigma);
    float best_q = q[0];
    for (int64_t i = 1; i < static_cast<int64_t>(H) * W; ++i)
        best_q = std::max(best_q, q[static_cast<size_t>(i)]);
    if (best_q <= 0.0f) {
        GraspPoseImage pose = decode_at(maps, batch_index, H / 2, W / 2, width_scale, 0.0);
        pose.degenerate = true;
        return pose;
    }
    // A near-flat ridge of maximal quality (smoothed painted strips) would
    // make a raw argmax land anywhere along it. Take the quality-weighted
    // centroid of the near-max band and snap to the band pixel nearest it.
    const float band = 0.95f * best_q;
    double sum_y = 0.0, sum_x = 0.0, sum_q = 0.0;
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
        if (q[static_cast<size_t>(i)] >= band) {
            const double qi = q[static_cast<size_t>(i)];
            sum_y += qi * static_cast<double>(i / W);
            sum_x += qi * static_cast<double>(i % W);
            sum_q += qi;
        }
    const double cy = sum_y / sum_q;
    const double cx = sum_x / sum_q;
    int best = -1;
    double best_d2 = 0.0;
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
        if (q[static_cast<size_t>(i)] >= band) {
            const double dy = static_cast<double>(i / W) - cy;
            const double dx = static_cast<double>(i % W) - cx;
            const double d2 = dy * dy + dx * dx;
            if (best < 0 || d2 < best_d2) {
                best = static_cast<int>(i);
                best_d2 = d2;
            }
        }
    return decode_at(maps, batch_index, best / W, best % W, width_scale, best_q);
}

std::vector<GraspPoseImage> decode_topn_grasps(const GraspMaps& maps, int n, double nms_radius,
                                               double smoothing_sigma, double width_scale,
                                               int batch_index) {
    if (n < 1) throw std::invalid_argument("decode_topn_grasps: n must be >= 1");
    const int H = maps.quality->dim(2), W = maps.quality->dim(3);
    auto q = prep_quality(maps, batch_index, smoothing_sigma);
    std::vector<GraspPoseImage> out;
    const double r2 = nms_radius * nms_radius;
    while (static_cast<int>(out.size()) < n) {
        int best = -1;
        float best_q = 0.0f;
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
            if (q[static_cast<size_t>(i)] > best_q) {
                best_q = q[static_cast<size_t>(i)];
                best = static_cast<int>(i);
            }
        if (best < 0) break;
        const int py = best / W, px = best % W;
        out.push_back(decode_at(maps, batch_index, py, px, width_scale, best_q));
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if ((y - py) * static_cast<double>(y - py) + (x - px) * static_cast<double>(x - px) <=
                    r2)
                    q[static_cast<size_t>(y) * W + x] = 0.0f;
    }
    return out;
}

}  // namespace sg
