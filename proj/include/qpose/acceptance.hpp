#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace qpose {

struct CriterionResult {
    int id = 0;
    std::string title;
    bool pass = false;
    std::string detail;    // deterministic numbers only, no timings
    double seconds = 0.0;  // wall time, reported outside the report file
    double budget_seconds = 0.0;
};

struct AcceptanceRun {
    std::vector<CriterionResult> results;  // criteria 1..11 in order
    std::string report;                    // byte-stable text, one line per criterion
    [[nodiscard]] bool pass() const;
};

using CriterionCallback = std::function<void(const CriterionResult&)>;

/// Criteria 1..10 with every random draw derived from `seed`.
std::vector<CriterionResult> run_criteria(std::uint64_t seed, const CriterionCallback& on_done = {});

/// `[PASS] N title: detail` lines plus a summary line.
std::string render_report(std::uint64_t seed, std::span<const CriterionResult> results);

/// Runs criteria 1..10 twice and adds criterion 11, which passes when both
/// renderings are byte-identical.
AcceptanceRun run_acceptance(std::uint64_t seed, const CriterionCallback& on_done = {});

}  // namespace qpose
