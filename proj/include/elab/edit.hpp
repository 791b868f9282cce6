#pragma once

#include "elab/common.hpp"

namespace elab {

// One remapping constraint: W * input should equal desired_output.
struct EditPair {
    Vec input;
    Vec desired_output;
};

struct LinearEditOptions {
    double ridge = 1e-6;      // deviation penalty weight on the fallback path
    double cond_limit = 1e10; // Gram condition number that triggers the fallback
};

struct LinearEditResult {
    Mat W;
    bool used_ridge = false;
    double gram_cond = 0.0;
};

// Exact minimizer of
//   sum_pairs ||W c_in - d||^2 + sum_reg ||W c_r - W* c_r||^2
// via the normal equations. When the Gram matrix is near-singular the
// objective gains ridge * ||W - W*||_F^2, which pins unconstrained directions
// to the original matrix. An empty edit set returns W* unchanged.
LinearEditResult solve_linear_edit(const Mat& W_star, const std::vector<EditPair>& pairs,
                                   const std::vector<Vec>& regularizers,
                                   const LinearEditOptions& opts = {});

// Pairs in source-vector form: desired output is W* * output_source.
std::vector<EditPair> pairs_from_sources(const Mat& W_star,
                                         const std::vector<std::pair<Vec, Vec>>& in_out_sources);

// Ridge solution c = (W^T W + lambda I)^{-1} W^T (W* c_e); lambda == 0
// requires W^T W to be invertible.
Vec rece_adversarial(const Mat& W, const Mat& W_star, const Vec& c_e, double lambda);

// Gradient of the (optionally ridged) edit objective at W; used by tests and
// the exactness checks.
Mat edit_objective_gradient(const Mat& W, const Mat& W_star, const std::vector<EditPair>& pairs,
                            const std::vector<Vec>& regularizers, double ridge = 0.0);

} // namespace elab
