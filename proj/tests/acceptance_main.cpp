// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exits 1 if any criterion fails or overruns its time budget.
#include <cstdio>
#include <cstdlib>
#include <string>

#include "qpose/acceptance.hpp"

int main(int argc, char** argv) {
    const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;
    bool all_ok = true;
    const qpose::AcceptanceRun run = qpose::run_acceptance(seed, [&](const qpose::CriterionResult& r) {
        const bool in_budget = r.seconds <= r.budget_seconds;
        const bool ok = r.pass && in_budget;
        all_ok = all_ok && ok;
        std::printf("[%s] criterion %d (%s): %s [%.1f s of %.0f s budget%s]\n", ok ? "PASS" : "FAIL", r.id,
                    r.title.c_str(), r.detail.c_str(), r.seconds, r.budget_seconds, in_budget ? "" : ", OVER BUDGET");
        std::fflush(stdout);
    });
    std::printf("%s", run.report.c_str());
    return all_ok && run.pass() ? 0 : 1;
}
