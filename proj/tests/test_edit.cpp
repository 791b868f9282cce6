#include "elab/edit.hpp"
#include "elab/rng.hpp"

#include <doctest.h>

using namespace elab;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

Vec random_vec(int n, Rng& rng) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

// independent oracle: per-output-row least squares on the stacked system,
// solved by column-pivoted QR
Mat stacked_ls_oracle(const Mat& W_star, const std::vector<EditPair>& pairs,
                      const std::vector<Vec>& regs) {
    const int in = int(W_star.cols());
    const int out = int(W_star.rows());
    const int n = int(pairs.size() + regs.size());
    Mat X(n, in);
    Mat Y(n, out);
    int r = 0;
    for (const auto& p : pairs) {
        X.row(r) = p.input.transpose();
        Y.row(r) = p.desired_output.transpose();
        ++r;
    }
    for (const auto& v : regs) {
        X.row(r) = v.transpose();
        Y.row(r) = (W_star * v).transpose();
        ++r;
    }
    Mat Wt = X.colPivHouseholderQr().solve(Y); // in x out
    return Wt.transpose();
}

} // namespace

TEST_CASE("empty edit set returns W* exactly") {
    Rng rng(1);
    Mat W_star = random_mat(6, 5, rng);
    std::vector<Vec> regs = {random_vec(5, rng), random_vec(5, rng)};
    auto res = solve_linear_edit(W_star, {}, regs);
    CHECK((res.W - W_star).norm() == 0.0);
}

TEST_CASE("gradient of the objective vanishes at the solution") {
    Rng rng(2);
    const int in = 8, out = 6;
    Mat W_star = random_mat(out, in, rng);
    std::vector<EditPair> pairs = {{random_vec(in, rng), random_vec(out, rng)}};
    std::vector<Vec> regs;
    for (int i = 0; i < in; ++i) regs.push_back(random_vec(in, rng)); // spanning set
    auto res = solve_linear_edit(W_star, pairs, regs);
    REQUIRE_FALSE(res.used_ridge);
    Mat g = edit_objective_gradient(res.W, W_star, pairs, regs);
    CHECK(g.norm() <= 1e-8);
}

TEST_CASE("matches the stacked least-squares oracle on random problems") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        int in = 4 + rng.uniform_int(8);
        int out = 3 + rng.uniform_int(8);
        Mat W_star = random_mat(out, in, rng);
        std::vector<EditPair> pairs;
        int n_pairs = 1 + rng.uniform_int(3);
        for (int i = 0; i < n_pairs; ++i)
            pairs.push_back({random_vec(in, rng), random_vec(out, rng)});
        std::vector<Vec> regs;
        for (int i = 0; i < in + 2; ++i) regs.push_back(random_vec(in, rng));
        auto res = solve_linear_edit(W_star, pairs, regs);
        REQUIRE_FALSE(res.used_ridge);
        Mat oracle = stacked_ls_oracle(W_star, pairs, regs);
        CHECK((res.W - oracle).norm() / oracle.norm() <= 1e-6);
    }
}

TEST_CASE("perturbing the solution never improves the objective") {
    Rng rng(4);
    const int in = 6, out = 5;
    Mat W_star = random_mat(out, in, rng);
    std::vector<EditPair> pairs = {{random_vec(in, rng), random_vec(out, rng)},
                                   {random_vec(in, rng), random_vec(out, rng)}};
    std::vector<Vec> regs;
    for (int i = 0; i < in + 1; ++i) regs.push_back(random_vec(in, rng));
    auto res = solve_linear_edit(W_star, pairs, regs);

    auto objective = [&](const Mat& W) {
        double v = 0.0;
        for (const auto& p : pairs) v += (W * p.input - p.desired_output).squaredNorm();
        for (const auto& r : regs) v += (W * r - W_star * r).squaredNorm();
        return v;
    };
    double base = objective(res.W);
    for (int d = 0; d < 100; ++d) {
        Mat dir = random_mat(out, in, rng);
        dir /= dir.norm();
        CHECK(objective(res.W + 1e-3 * dir) >= base - 1e-9);
    }
}

TEST_CASE("ridge fallback pins unconstrained directions to W*") {
    Rng rng(5);
    const int in = 10, out = 7;
    Mat W_star = random_mat(out, in, rng);
    Vec c_in = random_vec(in, rng);
    Vec desired = random_vec(out, rng);
    // no regularizers: Gram is rank-1, fallback must engage
    auto res = solve_linear_edit(W_star, {{c_in, desired}}, {});
    CHECK(res.used_ridge);
    // the constrained direction is honored almost exactly
    CHECK((res.W * c_in - desired).norm() / desired.norm() <= 1e-5);
    // orthogonal directions behave like W*
    Vec v = random_vec(in, rng);
    v -= v.dot(c_in) / c_in.squaredNorm() * c_in;
    CHECK((res.W * v - W_star * v).norm() / (W_star * v).norm() <= 1e-6);
}

TEST_CASE("near-singular Gram is reported") {
    Rng rng(6);
    Mat W_star = random_mat(4, 6, rng);
    Vec c = random_vec(6, rng);
    std::vector<EditPair> pairs = {{c, random_vec(4, rng)}};
    std::vector<Vec> regs = {Vec(1e-9 * random_vec(6, rng))};
    auto res = solve_linear_edit(W_star, pairs, regs);
    CHECK(res.used_ridge);
    CHECK(res.gram_cond > 1e10);
}

TEST_CASE("zero input vector rejected") {
    Rng rng(7);
    Mat W_star = random_mat(4, 4, rng);
    std::vector<EditPair> pairs = {{Vec::Zero(4), random_vec(4, rng)}};
    CHECK_THROWS_AS(solve_linear_edit(W_star, pairs, {}), std::invalid_argument);
}

TEST_CASE("rece adversarial solution") {
    Rng rng(8);

    SUBCASE("square invertible W with lambda = 0") {
        Mat W = random_mat(6, 6, rng);
        W += 6.0 * Mat::Identity(6, 6); // well-conditioned
        Mat W_star = random_mat(6, 6, rng);
        Vec c_e = random_vec(6, rng);
        Vec c_adv = rece_adversarial(W, W_star, c_e, 0.0);
        Vec direct = W.inverse() * (W_star * c_e);
        CHECK((c_adv - direct).norm() / direct.norm() <= 1e-10);
    }
    SUBCASE("lambda = 0 with singular W^T W throws") {
        Mat W = Mat::Zero(4, 4);
        Mat W_star = random_mat(4, 4, rng);
        CHECK_THROWS(rece_adversarial(W, W_star, random_vec(4, rng), 0.0));
    }
    SUBCASE("huge lambda collapses the solution") {
        Mat W = random_mat(5, 5, rng);
        Mat W_star = random_mat(5, 5, rng);
        Vec c_e = random_vec(5, rng);
        Vec c_adv = rece_adversarial(W, W_star, c_e, 1e9);
        CHECK(c_adv.norm() <= 1e-6);
    }
    SUBCASE("matches a gradient-descent oracle on the convex objective") {
        for (int trial = 0; trial < 20; ++trial) {
            int in = 4 + rng.uniform_int(6);
            int out = 4 + rng.uniform_int(6);
            Mat W = random_mat(out, in, rng);
            Mat W_star = random_mat(out, in, rng);
            Vec c_e = random_vec(in, rng);
            double lambda = 0.05 + rng.uniform();
            Vec c_adv = rece_adversarial(W, W_star, c_e, lambda);

            // gradient descent with exact line search on
            // ||W c - W* c_e||^2 + lambda ||c||^2
            Mat A = W.transpose() * W + lambda * Mat::Identity(in, in);
            Vec b = W.transpose() * (W_star * c_e);
            Vec c = Vec::Zero(in);
            for (int it = 0; it < 200000; ++it) {
                Vec g = A * c - b;
                double gn = g.squaredNorm();
                if (gn <= 1e-26) break;
                double step = gn / (g.dot(A * g));
                c -= step * g;
            }
            CHECK((c_adv - c).norm() <= 1e-8 * std::max(1.0, c.norm()));
        }
    }
}
