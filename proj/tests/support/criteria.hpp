// SPDX-License-Identifier: Apache-2.0
//
// Acceptance criteria as callable checks. The acceptance binary runs all of
// them; unit tests reuse the fast ones.
#pragma once

#include <functional>
#include <string>
#include <vector>

namespace ocg::testing {

enum class Outcome { kPass, kFail, kWarn };

struct CriterionResult {
  std::string name;
  Outcome outcome = Outcome::kFail;
  std::string detail;
  double seconds = 0.0;
  double time_limit = 0.0;  // 0 = none
};

CriterionResult gkt_suite(int configs = 1000);
CriterionResult attention_algebra(int shapes = 200);
CriterionResult gradient_checks();
CriterionResult iou_oracle(int pairs = 1000);
CriterionResult shape_contract();
CriterionResult decode_encode_identity(int boxes = 10000);
CriterionResult overfit_sanity();
CriterionResult parameter_budget();
CriterionResult protocol_defaults();
CriterionResult determinism();

struct Criterion {
  std::string key;
  std::function<CriterionResult()> run;
};

std::vector<Criterion> all_criteria();

/// Stamps elapsed time, downgrades a pass to a fail when over the limit.
CriterionResult timed(const std::function<CriterionResult()>& body);

}  // namespace ocg::testing
