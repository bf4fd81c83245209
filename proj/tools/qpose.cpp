#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "qpose/commands.hpp"
#include "qpose/config.hpp"
#include "qpose/error.hpp"

namespace {

using Command = int (*)(const qpose::RunConfig&, std::ostream&);

struct Subcommand {
    const char* name;
    const char* help;
    Command run;
    std::vector<std::pair<const char*, const char*>> flags;  // --flag -> section.key
};

const std::vector<Subcommand>& subcommands() {
    static const std::vector<Subcommand> table = {
        {"gen-scenes",
         "Generate synthetic cuboid scenes",
         qpose::cmd_gen_scenes,
         {{"--bin", "scenes.bin"}, {"--count", "scenes.count"}, {"--noise", "scenes.noise"}, {"--out", "scenes.dir"}}},
        {"distill",
         "Distill the pseudo-counterfactual FPN and write a checkpoint",
         qpose::cmd_distill,
         {{"--scenes", "scenes.dir"}, {"--steps", "distill.steps"}, {"--lr", "distill.lr"},
          {"--momentum", "distill.momentum"}, {"--checkpoint", "distill.checkpoint"}}},
        {"infer",
         "Pose metrics per depth bin",
         qpose::cmd_infer,
         {{"--scenes", "scenes.dir"}, {"--keypoints", "infer.keypoints"}, {"--checkpoint", "distill.checkpoint"}}},
        {"quantize",
         "Quantize a checkpoint",
         qpose::cmd_quantize,
         {{"--scenes", "scenes.dir"}, {"--mode", "quant.mode"}, {"--bits", "quant.bits"},
          {"--checkpoint", "distill.checkpoint"}}},
        {"fuse-report",
         "Fuse the quantized graph and report equivalence",
         qpose::cmd_fuse_report,
         {{"--scenes", "scenes.dir"}}},
        {"count-report", "Per-layer op counts as CSV", qpose::cmd_count, {{"--mode", "quant.mode"}, {"--bits", "quant.bits"}}},
        {"bench-pim",
         "Calibrated PIM latency table",
         qpose::cmd_bench_pim,
         {{"--units", "pim.units"}, {"--lanes", "pim.lanes"}, {"--clock", "pim.clock_hz"},
          {"--observed-ms", "pim.observed_latency_ms"}}},
        {"acceptance", "Run the acceptance suite", qpose::cmd_acceptance, {}},
    };
    return table;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qpose: quantized counterfactual pose estimation toolkit"};
    app.require_subcommand(1);

    std::string config_file;
    std::vector<std::string> overrides;
    std::string seed;
    std::string out_dir;
    app.add_option("--config", config_file, "INI config file")->check(CLI::ExistingFile);
    app.add_option("--set", overrides, "Override a config key, e.g. --set distill.steps=50");
    app.add_option("--seed", seed, "Seed for all randomness (run.seed)");
    app.add_option("--out-dir", out_dir, "Directory for output files (run.out)");
    app.fallthrough();

    const auto& table = subcommands();
    std::vector<std::vector<std::string>> values(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        CLI::App* sub = app.add_subcommand(table[i].name, table[i].help);
        values[i].resize(table[i].flags.size());
        for (std::size_t f = 0; f < table[i].flags.size(); ++f) {
            sub->add_option(table[i].flags[f].first, values[i][f], std::string("Sets ") + table[i].flags[f].second);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? qpose::kExitOk : qpose::kExitUsage;
    }

    try {
        qpose::RunConfig cfg;
        if (!config_file.empty()) qpose::apply_config_file(cfg, config_file);
        for (const auto& o : overrides) qpose::apply_override(cfg, o);
        if (!seed.empty()) cfg.set("run.seed", seed);
        if (!out_dir.empty()) cfg.set("run.out", out_dir);
        for (std::size_t i = 0; i < table.size(); ++i) {
            const CLI::App* sub = app.get_subcommand(table[i].name);
            if (!sub->parsed()) continue;
            for (std::size_t f = 0; f < table[i].flags.size(); ++f) {
                if (sub->count(table[i].flags[f].first) > 0) cfg.set(table[i].flags[f].second, values[i][f]);
            }
            return table[i].run(cfg, std::cout);
        }
        return qpose::kExitUsage;
    } catch (const qpose::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return qpose::kExitUsage;
    } catch (const qpose::FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return qpose::kExitUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return qpose::kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return qpose::kExitInvariant;
    }
}
