#include "qpose/ca_model.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>
#include <string>

#include "qpose/error.hpp"
#include "qpose/graph_exec.hpp"
#include "qpose/ops.hpp"

namespace qpose {
namespace {

using Rng = std::mt19937_64;

ConvParams he_conv(Rng& rng, std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride, bool bias) {
    // Odd kernels keep the extent ("same" padding); the 2x2 stride-2 kernel halves it exactly.
    const std::size_t pad = k % 2 == 1 ? k / 2 : 0;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(c_in * k * k));
    std::normal_distribution<double> normal(0.0, std_dev);
    Tensor w({c_out, c_in, k, k});
    for (double& v : w.data()) v = normal(rng);
    std::optional<std::vector<double>> b;
    if (bias) b = std::vector<double>(c_out, 0.0);
    return ConvParams(std::move(w), std::move(b), stride, pad);
}

BnParams random_bn(Rng& rng, std::size_t channels) {
    std::uniform_real_distribution<double> gamma(0.8, 1.2);
    std::uniform_real_distribution<double> var(0.8, 1.2);
    std::normal_distribution<double> shift(0.0, 0.05);
    BnParams p = BnParams::identity(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        p.mu[c] = shift(rng);
        p.sigma_sq[c] = var(rng);
        p.gamma[c] = gamma(rng);
        p.beta[c] = shift(rng);
    }
    return p;
}

std::size_t conv_bn(NetGraph& g, Rng& rng, const std::string& name, std::size_t input, std::size_t c_in,
                    std::size_t c_out, std::size_t k, std::size_t stride, bool with_relu, Region region,
                    const std::string& origin) {
    std::size_t x = g.add_conv(name + ".conv", input, he_conv(rng, c_in, c_out, k, stride, false), region, origin);
    x = g.add_batchnorm(name + ".bn", x, random_bn(rng, c_out), region, origin);
    if (with_relu) x = g.add_relu(name + ".relu", x, region, origin);
    return x;
}

Tensor scene_check_mask(const MaskedScene& scene) {
    const Dims& id = scene.image.dims();
    const Dims& md = scene.mask.dims();
    if (md.n != id.n || md.c != 1 || md.h != id.h || md.w != id.w) {
        throw ShapeError("erase_target: mask " + to_string(md) + " does not match image " + to_string(id));
    }
    for (double v : scene.mask.data()) {
        if (v != 0.0 && v != 1.0) throw NumericError("erase_target: mask values must be 0 or 1");
    }
    return scene.mask;
}

void require_levels(const FeatureSet& a, const FeatureSet& b, const char* op) {
    if (a.size() != b.size()) throw ShapeError(std::string(op) + ": level counts differ");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].dims() != b[i].dims()) {
            throw ShapeError(std::string(op) + ": level " + std::to_string(i) + " extents " + to_string(a[i].dims()) +
                             " vs " + to_string(b[i].dims()));
        }
    }
}

}  // namespace

NetGraph build_backbone(const ToyModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    NetGraph g;
    std::size_t x = g.add_input("image", "backbone");
    std::size_t c_in = cfg.image_channels;
    for (std::size_t block = 1; block <= 6; ++block) {
        const std::size_t c_out = cfg.stage_channels[(block - 1) / 2];
        const bool down = block % 2 == 0;
        x = conv_bn(g, rng, "block" + std::to_string(block), x, c_in, c_out, down ? 2 : 3, down ? 2 : 1, true,
                    Region::Backbone,
                    "backbone");
        if (block == 1) g.mutable_layer(x - 2).keep_float = true;  // network input layer
        if (block % 2 == 0) g.add_tap("c" + std::to_string(block / 2), x);
        c_in = c_out;
    }
    g.set_frozen(true);
    return g;
}

NetGraph build_fpn(const ToyModelConfig& cfg, const std::string& origin, std::uint64_t seed) {
    Rng rng(seed);
    NetGraph g;
    std::size_t in[kPyramidLevels];
    for (std::size_t l = 0; l < kPyramidLevels; ++l) in[l] = g.add_input("c" + std::to_string(l + 1), origin);

    const std::size_t F = cfg.fpn_channels;
    std::size_t merged[kPyramidLevels];
    // Top-down: coarsest level first.
    for (std::size_t l = kPyramidLevels; l-- > 0;) {
        const std::string lvl = std::to_string(l + 1);
        const std::size_t lateral =
            conv_bn(g, rng, "lateral" + lvl, in[l], cfg.stage_channels[l], F, 1, 1, false, Region::Fpn, origin);
        if (l + 1 == kPyramidLevels) {
            merged[l] = lateral;
        } else {
            const std::size_t up = g.add_upsample("topdown" + lvl + ".up", merged[l + 1], Region::Fpn, origin);
            merged[l] = g.add_add("topdown" + lvl + ".add", lateral, up, Region::Fpn, origin);
        }
    }
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
        const std::string lvl = std::to_string(l + 1);
        const std::size_t out = conv_bn(g, rng, "smooth" + lvl, merged[l], F, F, 3, 1, false, Region::Fpn, origin);
        g.add_tap("p" + lvl, out);
    }
    return g;
}

NetGraph build_head(const ToyModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    NetGraph g;
    std::size_t in[kPyramidLevels];
    for (std::size_t l = 0; l < kPyramidLevels; ++l) in[l] = g.add_input("t" + std::to_string(l + 1), "head");
    const std::size_t F = cfg.fpn_channels;
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
        const std::string lvl = std::to_string(l + 1);
        const std::size_t x = conv_bn(g, rng, "head" + lvl, in[l], F, F, 3, 1, true, Region::Head, "head");
        const std::size_t out = g.add_conv("head" + lvl + ".out", x, he_conv(rng, F, 3 * cfg.keypoints, 1, 1, true),
                                           Region::Head, "head");
        g.add_tap("h" + lvl, out);
    }
    return g;
}

CaModel build_toy_model(const ToyModelConfig& cfg, std::uint64_t seed) {
    CaModel m;
    m.config = cfg;
    m.backbone = build_backbone(cfg, seed * 8 + 1);
    m.fpn_f = build_fpn(cfg, "fpn_f", seed * 8 + 2);
    m.fpn_pc = build_fpn(cfg, "fpn_pc", seed * 8 + 3);
    m.fpn_c = build_fpn(cfg, "fpn_c", seed * 8 + 4);
    m.head = build_head(cfg, seed * 8 + 5);
    m.validate();
    return m;
}

bool same_topology(const NetGraph& a, const NetGraph& b) {
    if (a.size() != b.size() || a.taps() != b.taps()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const LayerSpec& x = a.layer(i);
        const LayerSpec& y = b.layer(i);
        if (x.name != y.name || x.kind != y.kind || x.inputs != y.inputs || x.region != y.region || x.conv != y.conv ||
            x.has_bias != y.has_bias || x.channels != y.channels || x.keep_float != y.keep_float) {
            return false;
        }
    }
    return true;
}

void CaModel::validate() const {
    for (const NetGraph* g : {&backbone, &fpn_f, &fpn_pc, &fpn_c, &head}) g->validate();
    if (!same_topology(fpn_f, fpn_pc) || !same_topology(fpn_f, fpn_c)) {
        throw GraphError("CaModel: the three FPNs must share one topology");
    }
    if (!backbone.frozen()) throw GraphError("CaModel: backbone must be frozen");
    if (backbone.taps().size() != n_levels || fpn_f.taps().size() != n_levels || head.taps().size() != n_levels) {
        throw GraphError("CaModel: every stage must expose one tap per pyramid level");
    }
}

Tensor erase_target(const MaskedScene& scene, double fill) {
    const Tensor mask = scene_check_mask(scene);
    const Dims& d = scene.image.dims();
    Tensor out(d);
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t y = 0; y < d.h; ++y) {
                for (std::size_t x = 0; x < d.w; ++x) {
                    const double m = mask.at(n, 0, y, x);
                    out.at(n, c, y, x) = scene.image.at(n, c, y, x) * (1.0 - m) + fill * m;
                }
            }
        }
    }
    return out;
}

Tensor stack_batch(std::span<const Tensor> items) {
    if (items.empty()) throw ShapeError("stack_batch: no tensors");
    const Dims first = items.front().dims();
    Dims d = first;
    d.n = 0;
    for (const auto& t : items) {
        const Dims& td = t.dims();
        if (td.c != first.c || td.h != first.h || td.w != first.w) throw ShapeError("stack_batch: extents differ");
        d.n += td.n;
    }
    std::vector<double> data;
    data.reserve(d.numel());
    for (const auto& t : items) data.insert(data.end(), t.data().begin(), t.data().end());
    return Tensor(d, std::move(data));
}

FeatureSet backbone_features(const CaModel& m, const Tensor& image) {
    const Tensor in[] = {image};
    return evaluate(m.backbone, in);
}

FeatureSet forward_factual(const CaModel& m, const Tensor& image) { return evaluate(m.fpn_f, backbone_features(m, image)); }

FeatureSet forward_counterfactual(const CaModel& m, const Tensor& erased_image) {
    return evaluate(m.fpn_c, backbone_features(m, erased_image));
}

FeatureSet forward_pseudo(const CaModel& m, const Tensor& image) {
    return evaluate(m.fpn_pc, backbone_features(m, image));
}

FeatureSet tde_ideal(const FeatureSet& factual, const FeatureSet& counterfactual) {
    require_levels(factual, counterfactual, "tde_ideal");
    FeatureSet out;
    for (std::size_t i = 0; i < factual.size(); ++i) out.push_back(sub(factual[i], counterfactual[i]));
    return out;
}

FeatureSet tde_approx(const FeatureSet& factual, const FeatureSet& pseudo) {
    require_levels(factual, pseudo, "tde_approx");
    FeatureSet out;
    for (std::size_t i = 0; i < factual.size(); ++i) out.push_back(sub(factual[i], pseudo[i]));
    return out;
}

SimLoss sim_loss(const FeatureSet& pseudo, const FeatureSet& counterfactual) {
    require_levels(pseudo, counterfactual, "sim_loss");
    constexpr double beta = 1.0;
    SimLoss r;
    for (std::size_t l = 0; l < pseudo.size(); ++l) {
        const Tensor& p = pseudo[l];
        const Tensor& c = counterfactual[l];
        const double inv_n = 1.0 / static_cast<double>(p.numel());
        Tensor g(p.dims());
        double level = 0.0;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double d = p[i] - c[i];
            const double ad = std::abs(d);
            if (ad < beta) {
                level += 0.5 * d * d / beta;
                g[i] = d / beta * inv_n;
            } else {
                level += ad - 0.5 * beta;
                g[i] = (d > 0 ? 1.0 : -1.0) * inv_n;
            }
        }
        r.loss += level * inv_n;
        r.grad.push_back(std::move(g));
    }
    return r;
}

double total_loss(double l3d, double lcls, double lsim) {
    if (!std::isfinite(l3d) || !std::isfinite(lcls) || !std::isfinite(lsim)) {
        throw NumericError("total_loss: non-finite term");
    }
    return kLambda3d * l3d + kLambdaCls * lcls + kLambdaSim * lsim;
}

DistillTrace distill_pseudo_path(CaModel& m, std::span<const MaskedScene> scenes, const DistillConfig& cfg) {
    if (scenes.empty()) throw ShapeError("distill_pseudo_path: no scenes");
    std::vector<Tensor> images;
    std::vector<Tensor> erased;
    for (const auto& s : scenes) {
        images.push_back(s.image);
        erased.push_back(erase_target(s));
    }
    // Everything upstream of fpn_pc is frozen, so its outputs are computed once.
    const FeatureSet feats = backbone_features(m, stack_batch(images));
    const FeatureSet teacher = evaluate(m.fpn_c, backbone_features(m, stack_batch(erased)));

    struct Slot {
        std::size_t layer;
        int which;  // 0 weight, 1 bias, 2 gamma, 3 beta
        std::vector<double> velocity;
    };
    std::vector<Slot> slots;
    for (std::size_t i = 0; i < m.fpn_pc.size(); ++i) {
        const LayerSpec& l = m.fpn_pc.layer(i);
        if (l.conv_params) {
            slots.push_back({i, 0, std::vector<double>(l.conv_params->weight.numel(), 0.0)});
            if (l.conv_params->bias) slots.push_back({i, 1, std::vector<double>(l.conv_params->bias->size(), 0.0)});
        }
        if (l.bn_params) {
            slots.push_back({i, 2, std::vector<double>(l.channels, 0.0)});
            slots.push_back({i, 3, std::vector<double>(l.channels, 0.0)});
        }
    }

    DistillTrace trace;
    for (std::size_t step = 0;; ++step) {
        const ForwardCache cache = forward_cached(m.fpn_pc, feats);
        const SimLoss loss = sim_loss(tap_values(m.fpn_pc, cache), teacher);
        if (!std::isfinite(loss.loss)) {
            throw NumericError("distill_pseudo_path: non-finite L_sim at step " + std::to_string(step));
        }
        trace.losses.push_back(loss.loss);
        if (step == cfg.steps) break;

        const GraphGrads grads = backward(m.fpn_pc, cache, loss.grad);
        for (Slot& s : slots) {
            LayerSpec& l = m.fpn_pc.mutable_layer(s.layer);
            const LayerGrads& lg = grads.layers[s.layer];
            std::span<double> param;
            std::span<const double> grad;
            switch (s.which) {
                case 0: param = l.conv_params->weight.data(); grad = lg.conv->weight.data(); break;
                case 1: param = *l.conv_params->bias; grad = *lg.conv->bias; break;
                case 2: param = l.bn_params->gamma; grad = lg.bn->gamma; break;
                default: param = l.bn_params->beta; grad = lg.bn->beta; break;
            }
            for (std::size_t k = 0; k < param.size(); ++k) {
                s.velocity[k] = cfg.momentum * s.velocity[k] + grad[k];
                param[k] -= cfg.lr * s.velocity[k];
            }
        }
    }
    return trace;
}

double mean_pseudo_gap(const CaModel& m, std::span<const MaskedScene> scenes) {
    double total = 0.0;
    std::size_t terms = 0;
    for (const auto& s : scenes) {
        const FeatureSet fc = forward_counterfactual(m, erase_target(s));
        const FeatureSet fpc = forward_pseudo(m, s.image);
        for (std::size_t l = 0; l < fc.size(); ++l) {
            total += sum_abs(sub(fc[l], fpc[l])) / static_cast<double>(fc[l].numel());
            ++terms;
        }
    }
    return terms ? total / static_cast<double>(terms) : 0.0;
}

NetGraph inference_graph(const CaModel& m) {
    m.validate();
    NetGraph g;
    const std::size_t image = g.add_input("image", "input");
    const std::size_t in[] = {image};
    const auto c = append_graph(g, m.backbone, in, "backbone/");
    const auto f = append_graph(g, m.fpn_f, c, "fpn_f/");
    const auto pc = append_graph(g, m.fpn_pc, c, "fpn_pc/");
    std::vector<std::size_t> tde;
    for (std::size_t l = 0; l < m.n_levels; ++l) {
        tde.push_back(g.add_sub("tde" + std::to_string(l + 1), f[l], pc[l], Region::Fpn, "tde"));
    }
    const auto h = append_graph(g, m.head, tde, "head/");
    for (std::size_t l = 0; l < h.size(); ++l) g.add_tap(m.head.taps()[l].first, h[l]);
    return g;
}

std::string param_digest(const NetGraph& g) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw StateError("sha256 unavailable");
    for_each_param(g, [&](const std::string& name, std::span<const double> values) {
        EVP_DigestUpdate(ctx.get(), name.data(), name.size());
        for (double v : values) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            unsigned char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
            EVP_DigestUpdate(ctx.get(), b, 8);
        }
    });
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

}  // namespace qpose
