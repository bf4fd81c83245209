#include "qpose/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <functional>

#include "qpose/error.hpp"
#include "qpose/graph.hpp"
#include "qpose/scene.hpp"

namespace qpose {
namespace {

template <class T>
T parse_unsigned(std::string_view key, std::string_view v) {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, v));
    }
    return out;
}

double parse_double(std::string_view key, std::string_view v) {
    const std::string s(v);
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(out)) {
        throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, v));
    }
    return out;
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

struct Field {
    const char* key;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

Field size_field(const char* key, std::size_t RunConfig::*m, std::size_t min_value) {
    return {key,
            [=](RunConfig& c, std::string_view v) {
                const auto x = parse_unsigned<std::size_t>(key, v);
                if (x < min_value) throw ConfigError(fmt::format("{}: must be >= {}, got {}", key, min_value, x));
                c.*m = x;
            },
            [=](const RunConfig& c) { return std::to_string(c.*m); }};
}

Field u64_field(const char* key, std::uint64_t RunConfig::*m, std::uint64_t min_value) {
    return {key,
            [=](RunConfig& c, std::string_view v) {
                const auto x = parse_unsigned<std::uint64_t>(key, v);
                if (x < min_value) throw ConfigError(fmt::format("{}: must be >= {}, got {}", key, min_value, x));
                c.*m = x;
            },
            [=](const RunConfig& c) { return std::to_string(c.*m); }};
}

Field double_field(const char* key, double RunConfig::*m, bool positive) {
    return {key,
            [=](RunConfig& c, std::string_view v) {
                const double x = parse_double(key, v);
                if (positive ? !(x > 0.0) : x < 0.0) {
                    throw ConfigError(fmt::format("{}: must be {}, got {}", key, positive ? "> 0" : ">= 0", v));
                }
                c.*m = x;
            },
            [=](const RunConfig& c) { return fmt_double(c.*m); }};
}

Field string_field(const char* key, std::string RunConfig::*m, std::function<void(std::string_view)> check = {}) {
    return {key,
            [=](RunConfig& c, std::string_view v) {
                if (v.empty()) throw ConfigError(fmt::format("{}: must not be empty", key));
                if (check) check(v);
                c.*m = std::string(v);
            },
            [=](const RunConfig& c) { return c.*m; }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(u64_field("run.seed", &RunConfig::seed, 0));
        f.push_back(string_field("run.out", &RunConfig::out_dir));
        f.push_back(size_field("model.fpn_channels", &RunConfig::fpn_channels, 1));
        f.push_back({"model.keypoints",
                     [](RunConfig& c, std::string_view v) {
                         const auto k = parse_unsigned<std::size_t>("model.keypoints", v);
                         if (k != 8 && k != 11) throw ConfigError("model.keypoints: must be 8 or 11");
                         c.keypoints = k;
                     },
                     [](const RunConfig& c) { return std::to_string(c.keypoints); }});
        f.push_back(string_field("scenes.dir", &RunConfig::scene_dir));
        f.push_back(size_field("scenes.count", &RunConfig::scene_count, 1));
        f.push_back(string_field("scenes.bin", &RunConfig::scene_bin, [](std::string_view v) {
            if (v != "mixed") {
                try {
                    (void)parse_depth_bin(v);
                } catch (const ConfigError&) {
                    throw ConfigError(fmt::format("scenes.bin: expected near, medium, far or mixed, got '{}'", v));
                }
            }
        }));
        f.push_back(double_field("scenes.noise", &RunConfig::noise_px, false));
        f.push_back(size_field("distill.steps", &RunConfig::distill_steps, 0));
        f.push_back(double_field("distill.lr", &RunConfig::lr, true));
        f.push_back({"distill.momentum",
                     [](RunConfig& c, std::string_view v) {
                         const double m = parse_double("distill.momentum", v);
                         if (m < 0.0 || m >= 1.0) throw ConfigError("distill.momentum: must be in [0, 1)");
                         c.momentum = m;
                     },
                     [](const RunConfig& c) { return fmt_double(c.momentum); }});
        f.push_back(size_field("distill.heldout", &RunConfig::heldout_count, 1));
        f.push_back(string_field("distill.checkpoint", &RunConfig::checkpoint));
        f.push_back(string_field("distill.loss_log", &RunConfig::loss_log));
        f.push_back(string_field("infer.keypoints", &RunConfig::keypoint_source, [](std::string_view v) {
            if (v != "scene" && v != "network") {
                throw ConfigError(fmt::format("infer.keypoints: expected scene or network, got '{}'", v));
            }
        }));
        f.push_back(string_field("infer.metrics", &RunConfig::metrics));
        f.push_back(string_field("quant.mode", &RunConfig::mode, [](std::string_view v) {
            try {
                (void)parse_quant_mode(v);
            } catch (const Error&) {
                throw ConfigError(fmt::format("quant.mode: expected I, II or III, got '{}'", v));
            }
        }));
        f.push_back({"quant.bits",
                     [](RunConfig& c, std::string_view v) {
                         const auto b = parse_unsigned<int>("quant.bits", v);
                         if (b < 2 || b > 8) throw ConfigError(fmt::format("quant.bits: must be in [2, 8], got {}", b));
                         c.bits = b;
                     },
                     [](const RunConfig& c) { return std::to_string(c.bits); }});
        f.push_back(string_field("quant.checkpoint", &RunConfig::quant_checkpoint));
        f.push_back(string_field("report.fuse", &RunConfig::fuse_report));
        f.push_back(string_field("report.ops", &RunConfig::ops_csv));
        f.push_back(string_field("report.pim", &RunConfig::pim_report));
        f.push_back(u64_field("pim.units", &RunConfig::units, 1));
        f.push_back(u64_field("pim.lanes", &RunConfig::lanes, 1));
        f.push_back(double_field("pim.clock_hz", &RunConfig::clock_hz, true));
        f.push_back(double_field("pim.observed_latency_ms", &RunConfig::observed_latency_ms, true));
        f.push_back(string_field("acceptance.report", &RunConfig::acceptance_report));
        return f;
    }();
    return table;
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(*this, trim(value));
            return;
        }
    }
    throw ConfigError(fmt::format("unknown config key '{}'", key));
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
    return out;
}

std::string RunConfig::header(std::string_view command) const {
    std::string out = fmt::format("# command: {}\n", command);
    for (const auto& [k, v] : entries()) out += fmt::format("# {} = {}\n", k, v);
    return out;
}

std::filesystem::path RunConfig::resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : std::filesystem::path(out_dir) / path;
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.message()));
    }
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw ConfigError(fmt::format("{}: key '{}' is outside any [section]", path.string(), section));
        }
        for (const auto& [key, value] : body) {
            cfg.set(section + "." + key, value.data());
        }
    }
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError(fmt::format("override '{}' is not of the form section.key=value", assignment));
    }
    cfg.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

}  // namespace qpose
