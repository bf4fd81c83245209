#include "qpose/checkpoint.hpp"

#include <fmt/format.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "qpose/error.hpp"
#include "qpose/quant.hpp"
#include "qpose/tensor_io.hpp"

namespace qpose {
namespace {

constexpr const char* kGraphNames[] = {"backbone", "fpn_f", "fpn_pc", "fpn_c", "head"};

std::vector<NetGraph*> graphs_of(CaModel& m) { return {&m.backbone, &m.fpn_f, &m.fpn_pc, &m.fpn_c, &m.head}; }
std::vector<const NetGraph*> graphs_of(const CaModel& m) {
    return {&m.backbone, &m.fpn_f, &m.fpn_pc, &m.fpn_c, &m.head};
}

std::string token(const std::string& s) {
    if (s.empty()) return "-";
    for (char c : s) {
        if (c == ' ' || c == '=' || c == '\n' || c == ',') throw FormatError("checkpoint: name '" + s + "' is not storable");
    }
    return s;
}

std::string untoken(const std::string& s) { return s == "-" ? std::string() : s; }

std::string hex(double v) { return fmt::format("{:a}", v); }

double parse_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw FormatError("checkpoint: bad number '" + s + "'");
    return v;
}

std::size_t parse_size(const std::string& s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0') throw FormatError("checkpoint: bad integer '" + s + "'");
    return static_cast<std::size_t>(v);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

/// Parses "tag k=v k=v ..." into its tag and key map.
std::pair<std::string, std::map<std::string, std::string>> parse_line(const std::string& line) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    std::map<std::string, std::string> kv;
    std::string item;
    while (ls >> item) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw FormatError("checkpoint: malformed field '" + item + "'");
        kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return {tag, kv};
}

const std::string& field(const std::map<std::string, std::string>& kv, const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("checkpoint: missing field '" + key + "'");
    return it->second;
}

std::string spec_text(const QuantSpec& s) { return fmt::format("{},{},{}", s.bit_width, s.is_signed ? 1 : 0, hex(s.scale)); }

QuantSpec parse_spec(const std::vector<std::string>& f, std::size_t at) {
    return QuantSpec::make(static_cast<int>(parse_size(f.at(at))), f.at(at + 1) == "1", parse_double(f.at(at + 2)));
}

std::string layer_line(const LayerSpec& l) {
    if (l.kind == LayerKind::Fused) throw FormatError("checkpoint: fused layer '" + l.name + "' cannot be stored");
    std::string inputs;
    for (std::size_t i = 0; i < l.inputs.size(); ++i) inputs += (i ? "," : "") + std::to_string(l.inputs[i]);
    std::string line = fmt::format("layer name={} kind={} inputs={} region={} origin={} keep_float={}", token(l.name),
                                   name(l.kind), inputs.empty() ? "-" : inputs, name(l.region), token(l.origin),
                                   l.keep_float ? 1 : 0);
    if (l.kind == LayerKind::Conv) {
        if (!l.conv_params) throw FormatError("checkpoint: conv '" + l.name + "' has no weights");
        const ConvGeometry& c = l.conv;
        line += fmt::format(" conv={},{},{},{},{},{} bias={}", c.c_in, c.c_out, c.k_h, c.k_w, c.stride, c.pad,
                            l.has_bias ? 1 : 0);
        if (l.quant) line += " quant=" + spec_text(l.quant->weight_spec) + "," + spec_text(l.quant->act_spec);
    }
    if (l.kind == LayerKind::BatchNorm) {
        if (!l.bn_params) throw FormatError("checkpoint: batchnorm '" + l.name + "' has no parameters");
        line += fmt::format(" channels={} eps={}", l.channels, hex(l.bn_params->epsilon));
    }
    return line;
}

Tensor vector_tensor(const std::vector<double>& v) { return Tensor({1, v.size(), 1, 1}, v); }

std::vector<double> tensor_vector(const Tensor& t, std::size_t expected, const std::string& what) {
    if (t.numel() != expected) throw FormatError("checkpoint: " + what + " has " + std::to_string(t.numel()) + " values");
    return std::vector<double>(t.data().begin(), t.data().end());
}

}  // namespace

std::string describe_topology(const CaModel& m) {
    const auto& c = m.config;
    std::string text = fmt::format("model image_channels={} image_size={} stages={},{},{} fpn_channels={} keypoints={} levels={}\n",
                                   c.image_channels, c.image_size, c.stage_channels[0], c.stage_channels[1],
                                   c.stage_channels[2], c.fpn_channels, c.keypoints, m.n_levels);
    const auto graphs = graphs_of(m);
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const NetGraph& g = *graphs[gi];
        text += fmt::format("graph name={} frozen={} layers={} taps={}\n", kGraphNames[gi], g.frozen() ? 1 : 0, g.size(),
                            g.taps().size());
        for (const auto& l : g.layers()) text += layer_line(l) + "\n";
        for (const auto& [tap, node] : g.taps()) text += fmt::format("tap name={} node={}\n", token(tap), node);
    }
    return text;
}

void write_checkpoint(std::ostream& os, const CaModel& m) {
    m.validate();
    const std::string text = describe_topology(m);
    io::write_magic(os, "QPC1");
    io::write_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const NetGraph* g : graphs_of(m)) {
        for (const auto& l : g->layers()) {
            if (l.kind == LayerKind::Conv) {
                if (l.quant) {
                    write_qpw(os, quantize(l.conv_params->weight, l.quant->weight_spec));
                } else {
                    write_qpt(os, l.conv_params->weight);
                }
                if (l.conv_params->bias) write_qpt(os, vector_tensor(*l.conv_params->bias));
            } else if (l.kind == LayerKind::BatchNorm) {
                const BnParams& bn = *l.bn_params;
                for (const auto* v : {&bn.mu, &bn.sigma_sq, &bn.gamma, &bn.beta}) write_qpt(os, vector_tensor(*v));
            }
        }
    }
    if (!os) throw FormatError("checkpoint: write failed");
}

namespace {

CaModel read_model(std::istream& is) {
    io::expect_magic(is, "QPC1");
    const std::uint32_t len = io::read_u32(is);
    std::string text(len, '\0');
    is.read(text.data(), len);
    if (static_cast<std::uint32_t>(is.gcount()) != len) throw FormatError("checkpoint: truncated topology block");

    CaModel m;
    std::istringstream ts(text);
    std::string line;
    if (!std::getline(ts, line)) throw FormatError("checkpoint: empty topology block");
    {
        const auto [tag, kv] = parse_line(line);
        if (tag != "model") throw FormatError("checkpoint: expected model line");
        m.config.image_channels = parse_size(field(kv, "image_channels"));
        m.config.image_size = parse_size(field(kv, "image_size"));
        const auto stages = split(field(kv, "stages"), ',');
        if (stages.size() != 3) throw FormatError("checkpoint: expected three stage widths");
        for (std::size_t i = 0; i < 3; ++i) m.config.stage_channels[i] = parse_size(stages[i]);
        m.config.fpn_channels = parse_size(field(kv, "fpn_channels"));
        m.config.keypoints = parse_size(field(kv, "keypoints"));
        m.n_levels = parse_size(field(kv, "levels"));
    }

    for (std::size_t gi = 0; gi < std::size(kGraphNames); ++gi) {
        if (!std::getline(ts, line)) throw FormatError("checkpoint: missing graph block");
        const auto [tag, kv] = parse_line(line);
        if (tag != "graph" || field(kv, "name") != kGraphNames[gi]) {
            throw FormatError(std::string("checkpoint: expected graph ") + kGraphNames[gi]);
        }
        NetGraph& g = *graphs_of(m)[gi];
        g.set_frozen(field(kv, "frozen") == "1");
        const std::size_t n_layers = parse_size(field(kv, "layers"));
        const std::size_t n_taps = parse_size(field(kv, "taps"));
        for (std::size_t i = 0; i < n_layers; ++i) {
            if (!std::getline(ts, line)) throw FormatError("checkpoint: truncated layer list");
            const auto [ltag, lkv] = parse_line(line);
            if (ltag != "layer") throw FormatError("checkpoint: expected layer line");
            LayerSpec l;
            l.name = untoken(field(lkv, "name"));
            l.kind = parse_layer_kind(field(lkv, "kind"));
            if (field(lkv, "inputs") != "-") {
                for (const auto& s : split(field(lkv, "inputs"), ',')) l.inputs.push_back(parse_size(s));
            }
            l.region = parse_region(field(lkv, "region"));
            l.origin = untoken(field(lkv, "origin"));
            l.keep_float = field(lkv, "keep_float") == "1";
            if (l.kind == LayerKind::Conv) {
                const auto c = split(field(lkv, "conv"), ',');
                if (c.size() != 6) throw FormatError("checkpoint: conv geometry needs six fields");
                l.conv = {parse_size(c[0]), parse_size(c[1]), parse_size(c[2]), parse_size(c[3]), parse_size(c[4]),
                          parse_size(c[5])};
                l.has_bias = field(lkv, "bias") == "1";
                if (lkv.count("quant")) {
                    const auto q = split(field(lkv, "quant"), ',');
                    if (q.size() != 6) throw FormatError("checkpoint: quant annotation needs six fields");
                    l.quant = LayerQuant{parse_spec(q, 0), parse_spec(q, 3)};
                }
                Tensor w;
                if (l.quant) {
                    const QTensor qw = read_qpw(is);
                    if (!(qw.spec() == l.quant->weight_spec)) {
                        throw FormatError("checkpoint: weight quantizer of '" + l.name + "' disagrees with topology");
                    }
                    w = dequantize(qw);
                } else {
                    w = read_qpt(is);
                }
                std::optional<std::vector<double>> bias;
                if (l.has_bias) bias = tensor_vector(read_qpt(is), l.conv.c_out, l.name + " bias");
                l.conv_params = ConvParams(std::move(w), std::move(bias), l.conv.stride, l.conv.pad);
                if (!(l.conv_params->geometry() == l.conv)) {
                    throw FormatError("checkpoint: weight extents of '" + l.name + "' disagree with topology");
                }
            } else if (l.kind == LayerKind::BatchNorm) {
                l.channels = parse_size(field(lkv, "channels"));
                std::vector<double> v[4];
                for (auto& x : v) x = tensor_vector(read_qpt(is), l.channels, l.name);
                l.bn_params = BnParams(v[0], v[1], v[2], v[3], parse_double(field(lkv, "eps")));
            } else if (l.kind == LayerKind::Fused) {
                throw FormatError("checkpoint: fused layers are not storable");
            }
            g.add_layer(std::move(l));
        }
        for (std::size_t t = 0; t < n_taps; ++t) {
            if (!std::getline(ts, line)) throw FormatError("checkpoint: truncated tap list");
            const auto [ttag, tkv] = parse_line(line);
            if (ttag != "tap") throw FormatError("checkpoint: expected tap line");
            g.add_tap(untoken(field(tkv, "name")), parse_size(field(tkv, "node")));
        }
    }
    m.validate();
    return m;
}

}  // namespace

CaModel read_checkpoint(std::istream& is) {
    try {
        return read_model(is);
    } catch (const GraphError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    } catch (const ShapeError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const CaModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write checkpoint " + path.string());
    write_checkpoint(os, m);
}

CaModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint " + path.string());
    return read_checkpoint(is);
}

}  // namespace qpose
