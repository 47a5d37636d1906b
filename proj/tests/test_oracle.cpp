#include <doctest.h>

#include "oracle.hpp"

using oracle::Mat;
using oracle::Vec;

TEST_CASE("constrained least squares edge cases") {
    Mat h(2, 2);
    h << 2, 1, 1, 2;
    const Vec w = Vec::Ones(2);
    CHECK(oracle::constrained_ls(w, h, {}) == w);
    CHECK(oracle::constrained_ls(w, h, {0, 1}).isZero(0.0));
    const Vec r = oracle::constrained_ls(w, h, {0});
    CHECK(r(0) == 0.0);
    CHECK(r(1) == doctest::Approx(1.5));
    CHECK(oracle::quad_error(r, w, h) == doctest::Approx(0.75));
}

TEST_CASE("exhaustive search") {
    Mat h = Mat::Identity(4, 4);
    Vec w(4);
    w << 0.3, -2.0, 0.1, 1.0;
    const auto all = oracle::exhaustive_best_mask(w, h, 4);
    CHECK(all.error == 0.0);
    for (bool k : all.keep) CHECK(k);

    // diagonal H: the cost of dropping j is h_jj w_j^2 / 2, so keep the largest
    Vec d(4);
    d << 1.0, 0.01, 4.0, 1.0;
    const auto best = oracle::exhaustive_best_mask(w, Mat(d.asDiagonal()), 2);
    // weighted magnitudes: 0.09, 0.04, 0.04, 1.0
    CHECK(best.keep == std::vector<bool>{true, false, false, true});
    CHECK(best.error == doctest::Approx(0.5 * (0.04 + 0.04)));

    CHECK_THROWS(oracle::exhaustive_best_mask(Vec::Ones(13), Mat::Identity(13, 13), 6));
    CHECK_THROWS(oracle::exhaustive_best_mask(w, h, 5));
}

TEST_CASE("inverse and factor") {
    Mat a(3, 3);
    a << 4, 1, 0, 1, 3, 1, 0, 1, 2;
    CHECK((oracle::small_inverse(a) * a - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-14);
    const Mat l = oracle::cholesky_lower(a);
    CHECK((l * l.transpose() - a).cwiseAbs().maxCoeff() < 1e-14);
    CHECK_THROWS(oracle::small_inverse(Mat::Zero(2, 2)));
    CHECK_THROWS(oracle::cholesky_lower(-Mat::Identity(2, 2)));
}

TEST_CASE("outlier ratio reference") {
    Mat m(2, 2);
    m << 1, 1, 1, 5;
    CHECK(oracle::outlier_ratio(m) == 0.25);
    CHECK(oracle::outlier_ratio(Mat::Constant(5, 3, 0.1)) == 0.0);
}

TEST_CASE("reference forward of a head-only model") {
    oracle::RefModel m;
    m.n_heads = 1;
    m.tok_embed = Mat::Identity(2, 2);
    m.pos_embed = Mat::Zero(4, 2);
    m.lnf_gain = Vec::Ones(2);
    m.lnf_bias = Vec::Zero(2);
    m.lm_head = Mat::Identity(2, 2);
    const Mat logits = oracle::reference_logits(m, {0, 1});
    // LayerNorm of (1, 0) is (1, -1) up to the epsilon
    CHECK(logits(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(logits(1, 0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(logits(0, 1) == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("reference sweep keeps the quota") {
    Mat w(3, 8);
    for (int i = 0; i < w.size(); ++i) w.data()[i] = std::sin(1.0 + i);
    Mat x(8, 20);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = std::cos(0.3 * i * i);
    const auto r = oracle::reference_sparsegpt(w, x * x.transpose(), 0.5, 4, 0.01);
    for (int i = 0; i < 3; ++i) CHECK(r.keep.row(i).cast<int>().sum() == 4);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 8; ++j)
            if (!r.keep(i, j)) CHECK(r.weight(i, j) == 0.0);
}
