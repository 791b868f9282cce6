#include "elab/edit.hpp"

#include <Eigen/Eigenvalues>

namespace elab {

LinearEditResult solve_linear_edit(const Mat& W_star, const std::vector<EditPair>& pairs,
                                   const std::vector<Vec>& regularizers,
                                   const LinearEditOptions& opts) {
    LinearEditResult res;
    if (pairs.empty()) { // identity edit
        res.W = W_star;
        return res;
    }
    const int in = int(W_star.cols());
    for (const auto& p : pairs) {
        if (p.input.size() != in || p.desired_output.size() != W_star.rows())
            throw std::invalid_argument("solve_linear_edit: pair shape mismatch");
        if (p.input.norm() == 0.0)
            throw std::invalid_argument("solve_linear_edit: input vectors must be nonzero");
    }
    Mat gram = Mat::Zero(in, in);
    Mat num = Mat::Zero(W_star.rows(), in);
    for (const auto& p : pairs) {
        gram.noalias() += p.input * p.input.transpose();
        num.noalias() += p.desired_output * p.input.transpose();
    }
    for (const auto& r : regularizers) {
        if (r.size() != in) throw std::invalid_argument("solve_linear_edit: regularizer shape mismatch");
        gram.noalias() += r * r.transpose();
        num.noalias() += (W_star * r) * r.transpose();
    }

    Eigen::SelfAdjointEigenSolver<Mat> es(gram);
    double lmin = es.eigenvalues().minCoeff();
    double lmax = es.eigenvalues().maxCoeff();
    res.gram_cond = (lmin <= 0.0) ? std::numeric_limits<double>::infinity() : lmax / lmin;
    if (!(res.gram_cond <= opts.cond_limit)) {
        res.used_ridge = true;
        gram.diagonal().array() += opts.ridge;
        num.noalias() += opts.ridge * W_star;
    }
    // W = num * gram^{-1}; solve gram * X = num^T for X = W^T
    Mat Wt = gram.ldlt().solve(num.transpose());
    res.W = Wt.transpose();
    return res;
}

std::vector<EditPair> pairs_from_sources(const Mat& W_star,
                                         const std::vector<std::pair<Vec, Vec>>& in_out_sources) {
    std::vector<EditPair> out;
    out.reserve(in_out_sources.size());
    for (const auto& [cin, cout] : in_out_sources) out.push_back({cin, W_star * cout});
    return out;
}

Vec rece_adversarial(const Mat& W, const Mat& W_star, const Vec& c_e, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("rece_adversarial: lambda >= 0 required");
    Mat A = W.transpose() * W;
    A.diagonal().array() += lambda;
    if (lambda == 0.0) {
        Eigen::SelfAdjointEigenSolver<Mat> es(A);
        if (es.eigenvalues().minCoeff() <= 1e-12 * es.eigenvalues().maxCoeff())
            throw std::invalid_argument("rece_adversarial: singular W^T W with lambda = 0");
    }
    Vec rhs = W.transpose() * (W_star * c_e);
    return A.ldlt().solve(rhs);
}

Mat edit_objective_gradient(const Mat& W, const Mat& W_star, const std::vector<EditPair>& pairs,
                            const std::vector<Vec>& regularizers, double ridge) {
    Mat g = Mat::Zero(W.rows(), W.cols());
    for (const auto& p : pairs)
        g.noalias() += 2.0 * (W * p.input - p.desired_output) * p.input.transpose();
    for (const auto& r : regularizers)
        g.noalias() += 2.0 * (W * r - W_star * r) * r.transpose();
    if (ridge != 0.0) g.noalias() += 2.0 * ridge * (W - W_star);
    return g;
}

} // namespace elab
