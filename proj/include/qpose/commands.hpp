#pragma once

#include <iosfwd>

#include "qpose/config.hpp"

namespace qpose {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitAcceptanceFailure = 1,
    kExitUsage = 2,      // bad flags, config, missing or malformed files
    kExitInvariant = 3,  // internal invariant violated
};

// Every command prints `cfg.header(...)` first and writes only deterministic
// text, so identical configs give byte-identical output.

/// Writes scenes.count scenes into scenes.dir.
int cmd_gen_scenes(const RunConfig& cfg, std::ostream& out);
/// Builds the toy model, distills fpn_pc on the scenes in scenes.dir and writes
/// the checkpoint plus a `step,loss` log.
int cmd_distill(const RunConfig& cfg, std::ostream& out);
/// Pose metrics per depth bin for the scenes in scenes.dir.
int cmd_infer(const RunConfig& cfg, std::ostream& out);
/// Quantizes the distilled checkpoint for quant.mode / quant.bits.
int cmd_quantize(const RunConfig& cfg, std::ostream& out);
/// Fuses the quantized inference graph and compares it with the unfused graph.
int cmd_fuse_report(const RunConfig& cfg, std::ostream& out);
/// Per-layer op counts (CSV) of the inference graph for quant.mode.
int cmd_count(const RunConfig& cfg, std::ostream& out);
/// Calibrated PIM configuration and a latency table for the deployment conv.
int cmd_bench_pim(const RunConfig& cfg, std::ostream& out);
/// Runs every acceptance criterion; returns kExitAcceptanceFailure if any fails.
int cmd_acceptance(const RunConfig& cfg, std::ostream& out);

}  // namespace qpose
