#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qpose {

/// Every knob of the command-line tool. Values come from an INI file
/// (`[section]` headers, `key = value` lines) and `section.key=value` overrides.
struct RunConfig {
    // [run]
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    // [model]
    std::size_t fpn_channels = 16;
    std::size_t keypoints = 8;

    // [scenes]
    std::string scene_dir = "out/scenes";  // used as given, not relative to out_dir
    std::size_t scene_count = 64;
    std::string scene_bin = "mixed";  // near, medium, far or mixed (cycles through the three)
    double noise_px = 0.0;

    // [distill]
    std::size_t distill_steps = 200;
    double lr = 1e-3;
    double momentum = 0.9;
    std::size_t heldout_count = 16;
    std::string checkpoint = "model.qpc";
    std::string loss_log = "distill_loss.csv";

    // [infer]
    std::string keypoint_source = "scene";  // scene or network
    std::string metrics = "infer_metrics.txt";

    // [quant]
    std::string mode = "III";
    int bits = 8;
    std::string quant_checkpoint = "model_q.qpc";

    // [report]
    std::string fuse_report = "fuse_report.txt";
    std::string ops_csv = "ops.csv";
    std::string pim_report = "pim_report.txt";

    // [pim]
    std::uint64_t units = 64;
    std::uint64_t lanes = 32;
    double clock_hz = 100e6;
    double observed_latency_ms = 5.99;

    // [acceptance]
    std::string acceptance_report = "acceptance_report.txt";

    /// Sets one `section.key`. Throws ConfigError for unknown keys or bad values.
    void set(std::string_view key, std::string_view value);
    /// All keys with their resolved values, in declaration order.
    [[nodiscard]] std::vector<std::pair<std::string, std::string>> entries() const;
    /// One `# key = value` line per entry, preceded by `# command: <name>`.
    [[nodiscard]] std::string header(std::string_view command) const;
    /// Output file location: `p` if absolute, else out_dir / p.
    [[nodiscard]] std::filesystem::path resolve(const std::string& p) const;
};

/// Applies an INI file on top of `cfg`. Throws ConfigError on unknown keys,
/// keys outside a section, unparsable values, or an unreadable file.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Applies a `section.key=value` override.
void apply_override(RunConfig& cfg, std::string_view assignment);

}  // namespace qpose
