#pragma once

#include <string>
#include <vector>

#include "posemine/gradcheck.hpp"

namespace posemine {

struct SuiteResult {
    std::string name;
    bool pass = false;
    std::string detail;  // worst case, max error, or failing property
};

// Verification suites, each independent and deterministic. They double as the
// property/oracle halves of the acceptance checks, so both the verify command
// and the acceptance binary run the same code.
SuiteResult verify_op_gradients();         // every tensor op + losses, rel < 1e-4
SuiteResult verify_attention_gradients();  // bilinear, heads, miner, pooling, backbone
SuiteResult verify_end_to_end_gradient();  // micro model, full loss, rel < 1e-3
SuiteResult verify_attention_oracle(int trials);   // brute-force agreement < 1e-10
SuiteResult verify_padding_properties(int graphs); // invariants over random graphs
SuiteResult verify_mixup_distribution();   // KS test of lambda against Uniform(0,1)
SuiteResult verify_metric_correctness();   // PCK fixed points and monotonicity

// All suites in a fixed order. fault_op, when non-empty, arms the tape-level
// gradient corruption for the whole run (the op's suite must then fail).
std::vector<SuiteResult> run_verify_suites(const std::string& fault_op = "");

bool all_pass(const std::vector<SuiteResult>& results);

}  // namespace posemine
