#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revsnn/network.hpp"

namespace revsnn {

struct SuiteResult {
    bool pass = true;
    std::string report;  // one line per check, "PASS/FAIL name: measured vs bound"
};

struct VerifyOptions {
    std::uint64_t seed = 1;
    int inversion_trials = 500;
    int policy_nets = 50;
};

SuiteResult verify_inversion(const VerifyOptions& opt);
SuiteResult verify_gradcheck(const VerifyOptions& opt);
SuiteResult verify_policy_equiv(const VerifyOptions& opt);
SuiteResult verify_memory_scaling(const VerifyOptions& opt);
SuiteResult verify_critical_path();
SuiteResult verify_fused_equiv(const VerifyOptions& opt);

// Dispatch by suite name; throws std::invalid_argument on unknown names.
SuiteResult run_suite(const std::string& name, const VerifyOptions& opt);
const std::vector<std::string>& suite_names();

struct BenchRow {
    std::string flavor;
    int workers = 1;
    double fwd_ms = 0.0;
    double bwd_ms = 0.0;
    double step_ms = 0.0;
    std::size_t peak_activation_bytes = 0;
    double speedup_vs_baseline = 1.0;  // baseline step_ms / this step_ms, same worker count
};

// Times one training step (forward + backward on a synthetic batch, recompute
// policy) of `arch` rebuilt per flavor, median over `repeat` runs per worker
// count. Baseline is always measured as the speedup reference even when not
// listed in `flavors`; the same init seed and inputs make baseline and
// pararev runs parameter-identical.
std::vector<BenchRow> run_bench(const ArchSpec& arch, const std::vector<Flavor>& flavors,
                                const std::vector<int>& workers, int repeat, std::uint64_t seed);

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace revsnn
