#include "qpose/commands.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>

#include "qpose/acceptance.hpp"
#include "qpose/ca_model.hpp"
#include "qpose/checkpoint.hpp"
#include "qpose/error.hpp"
#include "qpose/fusion_graph.hpp"
#include "qpose/graph_exec.hpp"
#include "qpose/keypoints.hpp"
#include "qpose/pim.hpp"
#include "qpose/scene.hpp"

namespace qpose {
namespace {

ToyModelConfig toy_config(const RunConfig& cfg) {
    ToyModelConfig t;
    t.fpn_channels = cfg.fpn_channels;
    t.keypoints = cfg.keypoints;
    return t;
}

SceneConfig scene_config(const RunConfig& cfg) {
    SceneConfig s;
    s.keypoints = cfg.keypoints;
    s.raster_size = ToyModelConfig{}.image_size;
    return s;
}

std::optional<DepthBin> bin_of(const RunConfig& cfg) {
    if (cfg.scene_bin == "mixed") return std::nullopt;
    return parse_depth_bin(cfg.scene_bin);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os || !(os << text) || !os.flush()) throw FormatError("cannot write " + path.string());
}

std::vector<Scene> load_scenes(const RunConfig& cfg, std::size_t limit = std::numeric_limits<std::size_t>::max()) {
    std::vector<Scene> out;
    for (const auto& f : list_scene_files(cfg.scene_dir)) {
        if (out.size() == limit) break;
        out.push_back(load_scene(f));
    }
    return out;
}

std::vector<MaskedScene> views_checked(const std::vector<Scene>& scenes, const ToyModelConfig& tc) {
    std::vector<MaskedScene> out;
    for (const auto& s : scenes) {
        const Dims& d = s.view.image.dims();
        if (d.c != tc.image_channels || d.h != tc.image_size || d.w != tc.image_size) {
            throw ConfigError(fmt::format("scene image {} does not match the model input (1, {}, {}, {})", to_string(d),
                                          tc.image_channels, tc.image_size, tc.image_size));
        }
        out.push_back(s.view);
    }
    return out;
}

std::string g6(double v) { return fmt::format("{:.6g}", v); }

Tensor calibration_batch(const std::vector<Scene>& scenes) {
    std::vector<Tensor> images;
    for (const auto& s : scenes) images.push_back(s.view.image);
    return stack_batch(images);
}

}  // namespace

int cmd_gen_scenes(const RunConfig& cfg, std::ostream& out) {
    out << cfg.header("gen-scenes");
    const auto scenes = gen_scenes(cfg.seed, cfg.scene_count, bin_of(cfg), cfg.noise_px, scene_config(cfg));
    std::map<std::string_view, std::size_t> per_bin;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const Scene& s = scenes[i];
        const std::string stem = fmt::format("scene_{:05d}", i);
        save_scene(cfg.scene_dir, stem, s);
        const std::string_view bin = name(depth_bin_of(s.gt.t.z()));
        ++per_bin[bin];
        out << fmt::format("{} bin={} depth={:.4f} m\n", stem, bin, s.gt.t.z());
    }
    out << fmt::format("wrote {} scenes to {} (near {}, medium {}, far {})\n", scenes.size(), cfg.scene_dir,
                       per_bin["near"], per_bin["medium"], per_bin["far"]);
    return kExitOk;
}

int cmd_distill(const RunConfig& cfg, std::ostream& out) {
    out << cfg.header("distill");
    const ToyModelConfig tc = toy_config(cfg);
    const auto scenes = load_scenes(cfg);
    const auto train = views_checked(scenes, tc);
    const auto held = gen_scenes(scene_seed(cfg.seed, 0xde1d0000ULL), cfg.heldout_count, std::nullopt, 0.0,
                                 scene_config(cfg));
    const auto heldout = views_checked(held, tc);

    CaModel m = build_toy_model(tc, cfg.seed);
    const std::string frozen_before = param_digest(m.backbone) + param_digest(m.fpn_c);
    const double gap0 = mean_pseudo_gap(m, heldout);
    const DistillTrace trace = distill_pseudo_path(m, train, DistillConfig{cfg.distill_steps, cfg.lr, cfg.momentum});
    const double gap1 = mean_pseudo_gap(m, heldout);
    if (param_digest(m.backbone) + param_digest(m.fpn_c) != frozen_before) {
        throw StateError("distillation modified a frozen sub-graph");
    }

    std::string log = "step,loss\n";
    for (std::size_t i = 0; i < trace.losses.size(); ++i) log += fmt::format("{},{:.17g}\n", i, trace.losses[i]);
    write_text(cfg.resolve(cfg.loss_log), log);
    save_checkpoint(cfg.resolve(cfg.checkpoint), m);

    const double ratio = trace.losses.back() / trace.losses.front();
    out << fmt::format("train scenes {}, held-out scenes {}, steps {}\n", train.size(), heldout.size(), cfg.distill_steps);
    out << fmt::format("L_sim {} -> {} (ratio {})\n", g6(trace.losses.front()), g6(trace.losses.back()), g6(ratio));
    out << fmt::format("held-out mean |F^c - F^pc| {} -> {}\n", g6(gap0), g6(gap1));
    out << fmt::format("backbone sha256 {}\n", param_digest(m.backbone));
    out << fmt::format("fpn_pc sha256 {}\n", param_digest(m.fpn_pc));
    out << fmt::format("wrote {} and {}\n", cfg.resolve(cfg.checkpoint).string(), cfg.resolve(cfg.loss_log).string());
    return kExitOk;
}

int cmd_infer(const RunConfig& cfg, std::ostream& out) {
    out << cfg.header("infer");
    const auto scenes = load_scenes(cfg);
    const bool network = cfg.keypoint_source == "network";
    std::optional<NetGraph> graph;
    if (network) {
        const CaModel m = load_checkpoint(cfg.resolve(cfg.checkpoint));
        views_checked(scenes, m.config);
        graph = inference_graph(m);
    }

    struct Acc {
        std::size_t scenes = 0, solved = 0, hits = 0;
        double e_q = 0.0, e_t = 0.0, total = 0.0;
    };
    Acc bins[3];
    Acc all;
    for (const Scene& s : scenes) {
        KeypointSet kp = s.keypoints;
        if (graph) {
            const Tensor image[] = {s.view.image};
            const FeatureSet head = evaluate(*graph, image);
            const auto model_points = s.cuboid.keypoints(s.keypoints.size());
            kp = decode_keypoints(head, GridMeta{s.width, s.height}, model_points);
        }
        Acc& b = bins[static_cast<int>(depth_bin_of(s.gt.t.z()))];
        ++b.scenes;
        ++all.scenes;
        PnpResult p;
        try {
            p = solve_pnp(kp, s.camera);
        } catch (const SolverError&) {
            continue;
        }
        const SpeedError e = speed_error(p.pose, s.gt);
        const bool hit = adi_01d(p.pose, s.gt, s.cuboid).hit;
        for (Acc* a : {&b, &all}) {
            ++a->solved;
            a->hits += hit;
            a->e_q += e.e_q;
            a->e_t += e.e_t;
            a->total += e.total;
        }
    }

    std::string table = fmt::format("{:<8}{:>8}{:>8}{:>10}{:>14}{:>14}{:>14}\n", "bin", "scenes", "solved", "ADI-0.1d",
                                    "mean_e_q", "mean_e_t", "mean_e_q+e_t");
    auto row = [&](std::string_view label, const Acc& a) {
        if (a.scenes == 0) return;
        const double n = a.solved == 0 ? 1.0 : static_cast<double>(a.solved);
        table += fmt::format("{:<8}{:>8}{:>8}{:>10}{:>14.6g}{:>14.6g}{:>14.6g}\n", label, a.scenes, a.solved,
                             format_fixed(100.0 * a.hits / a.scenes, 1), a.e_q / n, a.e_t / n, a.total / n);
    };
    row("near", bins[0]);
    row("medium", bins[1]);
    row("far", bins[2]);
    row("all", all);
    write_text(cfg.resolve(cfg.metrics), table);
    out << fmt::format("keypoints from {}\n", cfg.keypoint_source) << table;
    return kExitOk;
}

int cmd_quantize(const RunConfig& cfg, std::ostream& out) {
    out << cfg.header("quantize");
    const QuantMode mode = parse_quant_mode(cfg.mode);
    CaModel m = load_checkpoint(cfg.resolve(cfg.checkpoint));
    const auto scenes = load_scenes(cfg, 8);
    views_checked(scenes, m.config);
    const Tensor batch = calibration_batch(scenes);

    const FeatureSet c = backbone_features(m, batch);
    const FeatureSet tde = tde_approx(forward_factual(m, batch), forward_pseudo(m, batch));
    const Tensor image[] = {batch};
    m.backbone = annotate_quant(m.backbone, mode, cfg.bits, image);
    m.fpn_f = annotate_quant(m.fpn_f, mode, cfg.bits, c);
    m.fpn_pc = annotate_quant(m.fpn_pc, mode, cfg.bits, c);
    m.fpn_c = annotate_quant(m.fpn_c, mode, cfg.bits, c);
    m.head = annotate_quant(m.head, mode, cfg.bits, tde);
    m.validate();
    save_checkpoint(cfg.resolve(cfg.quant_checkpoint), m);

    out << fmt::format("mode {}, {} bits, calibrated on {} scenes\n", name(mode), cfg.bits, scenes.size());
    out << fmt::format("{:<28}{:>6}{:>14}{:>10}{:>14}\n", "layer", "bits", "s_w", "act", "s_a");
    std::size_t quantized = 0;
    const std::pair<const char*, const NetGraph*> graphs[] = {
        {"backbone", &m.backbone}, {"fpn_f", &m.fpn_f}, {"fpn_pc", &m.fpn_pc}, {"fpn_c", &m.fpn_c}, {"head", &m.head}};
    for (const auto& [gname, g] : graphs) {
        for (const auto& l : g->layers()) {
            if (l.kind != LayerKind::Conv) continue;
            const std::string label = fmt::format("{}/{}", gname, l.name);
            if (!l.quant) {
                out << fmt::format("{:<28}{:>6}\n", label, "float");
                continue;
            }
            ++quantized;
            out << fmt::format("{:<28}{:>6}{:>14.6g}{:>10}{:>14.6g}\n", label, l.quant->weight_spec.bit_width,
                               l.quant->weight_spec.scale, l.quant->act_spec.is_signed ? "signed" : "unsigned",
                               l.quant->act_spec.scale);
        }
    }
    out << fmt::format("{} convolutions quantized, wrote {}\n", quantized, cfg.resolve(cfg.quant_checkpoint).string());
    return kExitOk;
}

int cmd_fuse_report(const RunConfig& cfg, std::ostream& out) {
    out << cfg.header("fuse-report");
    const CaModel m = load_checkpoint(cfg.resolve(cfg.quant_checkpoint));
    const auto scenes = load_scenes(cfg, 8);
    views_checked(scenes, m.config);
    const NetGraph g = inference_graph(m);
    const NetGraph f = fuse_graph(g);

    std::string report = fmt::format("{:<28}{:>6}{:>6}{:>6}{:>6}{:>8}{:>26}{:>26}{:>10}\n", "layer", "c_out", "w", "a",
                                     "relu", "requant", "alpha", "delta", "w_bytes");
    std::size_t fused = 0;
    for (const auto& l : f.layers()) {
        if (l.kind != LayerKind::Fused) continue;
        ++fused;
        const FusedLayer& fl = *l.fused;
        const auto [amin, amax] = std::minmax_element(fl.alpha.begin(), fl.alpha.end());
        const auto [dmin, dmax] = std::minmax_element(fl.delta.begin(), fl.delta.end());
        report += fmt::format("{:<28}{:>6}{:>6}{:>6}{:>6}{:>8}{:>26}{:>26}{:>10}\n", l.name, fl.out_channels(),
                              fl.conv.weight.spec().bit_width, fl.conv.input_spec.bit_width, fl.relu ? "yes" : "no",
                              fl.next_act_spec ? "yes" : "no", fmt::format("[{:.4g}, {:.4g}]", *amin, *amax),
                              fmt::format("[{:.4g}, {:.4g}]", *dmin, *dmax),
                              packed_bytes(fl.conv.weight.numel(), fl.conv.weight.spec().bit_width));
    }

    double max_dev = 0.0;
    double max_pre = 0.0;
    std::size_t code_mismatch = 0;
    std::size_t codes = 0;
    for (const Scene& s : scenes) {
        const Tensor image[] = {s.view.image};
        CodeTrace tu;
        CodeTrace tf;
        const auto yu = evaluate(g, image, &tu);
        const auto yf = evaluate(f, image, &tf);
        for (std::size_t i = 0; i < yu.size(); ++i) max_dev = std::max(max_dev, max_abs_diff(yu[i], yf[i]));
        for (const auto& bf : tf.boundaries) {
            const auto it = std::find_if(tu.boundaries.begin(), tu.boundaries.end(),
                                         [&](const QuantBoundary& b) { return b.layer == bf.layer; });
            if (it == tu.boundaries.end()) throw StateError("fused boundary '" + bf.layer + "' missing from unfused trace");
            max_pre = std::max(max_pre, max_abs_diff(it->pre_quant, bf.pre_quant));
            for (std::size_t k = 0; k < bf.codes.numel(); ++k) code_mismatch += bf.codes.values()[k] != it->codes.values()[k];
            codes += bf.codes.numel();
        }
    }
    report += fmt::format("fused layers {}, layers before fusion {}, after {}\n", fused, g.size(), f.size());
    report += fmt::format("scenes {}, activation codes compared {}, mismatched {}\n", scenes.size(), codes, code_mismatch);
    report += fmt::format("max pre-quantization deviation {}\n", g6(max_pre));
    report += fmt::format("max output deviation {}\n", g6(max_dev));
    write_text(cfg.resolve(cfg.fuse_report), report);
    out << report;
    return kExitOk;
}

int cmd_count(const RunConfig& cfg, std::ostream& out) {
    out << cfg.header("count-report");
    const ToyModelConfig tc = toy_config(cfg);
    const NetGraph g = inference_graph(build_toy_model(tc, cfg.seed));
    const Dims in[] = {{1, tc.image_channels, tc.image_size, tc.image_size}};
    const QuantMode mode = parse_quant_mode(cfg.mode);
    const std::string csv = ops_csv(count_ops_per_layer(g, in, mode, cfg.bits));
    write_text(cfg.resolve(cfg.ops_csv), csv);
    out << csv;
    for (QuantMode m : {QuantMode::I, QuantMode::II, QuantMode::III}) {
        const OpCount c = count_ops(g, in, m);
        out << fmt::format("# mode {}: int_ops {}, float_flops {}, total {}, integer share {}%\n", name(m), c.int_ops(),
                           c.float_flops(), c.total_ops(), format_fixed(100.0 * c.percentage(), 2));
    }
    for (int bits : {32, cfg.bits}) {
        const StorageReport s = storage_footprint(g, bits);
        out << fmt::format("# storage {}-bit: {} params in {} tensors, {} bytes packed + {} header bytes, saving {}%\n", bits,
                           s.param_count, s.tensor_count, s.packed_bytes, s.header_bytes, format_fixed(s.saving_pct, 2));
    }
    return kExitOk;
}

int cmd_bench_pim(const RunConfig& cfg, std::ostream& out) {
    out << cfg.header("bench-pim");
    PimConfig base;
    base.units = cfg.units;
    base.macs_per_unit_per_cycle = cfg.lanes;
    base.clock_hz = cfg.clock_hz;
    const NetGraph g = deployment_conv_graph();
    const Dims in[] = {kDeploymentInput};
    const std::uint64_t macs = count_ops(g, in, QuantMode::III).int_macs;
    const PimConfig fitted = calibrate(base, cfg.observed_latency_ms * 1e-3, macs);

    std::string report;
    report += fmt::format("deployment conv: input {}, 3x3 kernel 64->128, {} MACs\n", to_string(kDeploymentInput), macs);
    report += fmt::format("calibrated: units {}, lanes {}, clock {} Hz, efficiency {:.6f} (observed {} ms)\n", fitted.units,
                          fitted.macs_per_unit_per_cycle, fitted.clock_hz, fitted.efficiency,
                          format_fixed(cfg.observed_latency_ms, 3));
    report += fmt::format("{:>8}{:>12}{:>14}{:>14}{:>14}{:>14}\n", "units", "efficiency", "ideal_cycles", "ideal_ms",
                          "cycles", "latency_ms");
    for (std::uint64_t units : {16ULL, 32ULL, 64ULL, 128ULL, 256ULL}) {
        PimConfig ideal = base;
        ideal.units = units;
        PimConfig cal = fitted;
        cal.units = units;
        const Latency li = latency(g, in, QuantMode::III, ideal);
        const Latency lc = latency(g, in, QuantMode::III, cal);
        report += fmt::format("{:>8}{:>12.6f}{:>14}{:>14}{:>14}{:>14}\n", units, cal.efficiency, li.cycles,
                              format_fixed(li.seconds * 1e3, 4), lc.cycles, format_fixed(lc.seconds * 1e3, 4));
    }
    write_text(cfg.resolve(cfg.pim_report), report);
    out << report;
    return kExitOk;
}

int cmd_acceptance(const RunConfig& cfg, std::ostream& out) {
    out << cfg.header("acceptance");
    const AcceptanceRun run = run_acceptance(cfg.seed);
    write_text(cfg.resolve(cfg.acceptance_report), run.report);
    out << run.report;
    return run.pass() ? kExitOk : kExitAcceptanceFailure;
}

}  // namespace qpose
