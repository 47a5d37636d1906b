#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "d2prune/scoring.hpp"
#include "oracle.hpp"

using namespace d2p;

namespace {

std::vector<int> row_order(const Matrix& s, Eigen::Index r) {
    std::vector<int> idx(s.cols());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s(r, a) > s(r, b); });
    return idx;
}

struct Fixture {
    Matrix w;
    LayerStats stats;
    Matrix hinv;
};

Fixture random_fixture(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Fixture f;
    f.w = Matrix(rows, cols);
    for (auto& v : f.w.reshaped()) v = g(rng);
    Matrix x(cols, 3 * cols);
    for (auto& v : x.reshaped()) v = g(rng) * 4.0;
    f.stats.hessian = x * x.transpose();
    f.stats.in_norms = l2_norm_cols(Matrix(x.transpose()));
    f.stats.out_norms = l2_norm_cols(Matrix((f.w * x).transpose()));
    f.stats.n_tokens = static_cast<std::size_t>(x.cols());
    f.hinv = damped_inverse(f.stats.hessian, kDefaultDamping);
    return f;
}

}  // namespace

TEST_CASE("magnitude") {
    Matrix w(1, 2);
    w << -3, 1;
    const auto s = score_magnitude(w);
    CHECK(s.scores(0, 0) == 3.0);
    CHECK(s.scores(0, 1) == 1.0);
    CHECK(score_magnitude(Matrix::Zero(2, 3)).scores.isZero(0.0));
    CHECK(s.method == ScoreMethod::magnitude);
}

TEST_CASE("wanda") {
    Matrix w(1, 3);
    w << 3, -1, 5;
    LayerStats st;
    st.in_norms = Vector(3);
    st.in_norms << 2, 1, 0;
    st.out_norms = Vector::Ones(1);
    st.n_tokens = 1;
    const auto s = score_wanda(w, st);
    CHECK(s.scores(0, 0) == 6.0);
    CHECK(s.scores(0, 1) == 1.0);
    CHECK(s.scores(0, 2) == 0.0);

    st.in_norms = Vector::Ones(3);
    CHECK(score_wanda(w, st).scores == score_magnitude(w).scores);
    st.in_norms = Vector::Ones(2);
    CHECK_THROWS(score_wanda(w, st));
}

TEST_CASE("sparsegpt") {
    Matrix w(1, 2);
    w << 1, 2;
    Matrix h = Vector(Eigen::Vector2d(1, 4)).asDiagonal();
    const auto s = score_sparsegpt(w, damped_inverse(h, 0.0));
    CHECK(s.scores(0, 0) == doctest::Approx(0.5));
    CHECK(s.scores(0, 1) == doctest::Approx(8.0));

    CHECK(score_sparsegpt(w, Matrix::Identity(2, 2)).scores(0, 1) == 2.0);

    Matrix bad = Matrix::Identity(2, 2);
    bad(1, 1) = 0.0;
    try {
        score_sparsegpt(w, bad);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
}

TEST_CASE("sparsegpt rankings are invariant to Hessian scale") {
    auto f = random_fixture(5, 8, 1);
    const auto a = score_sparsegpt(f.w, damped_inverse(f.stats.hessian, 0.01));
    const auto b = score_sparsegpt(f.w, damped_inverse(Matrix(f.stats.hessian * 7.0), 0.01));
    CHECK((b.scores - 7.0 * a.scores).cwiseAbs().maxCoeff() < 1e-9 * b.scores.maxCoeff());
    for (int r = 0; r < 5; ++r) CHECK(row_order(a.scores, r) == row_order(b.scores, r));
}

TEST_CASE("d2 with zero coefficients reduces to the base methods") {
    auto f = random_fixture(6, 10, 2);
    DualParams zero{0.0, 0.0, ScaleSpec{}};
    const auto upd = score_d2(f.w, f.stats, zero, D2Variant::update, &f.hinv);
    CHECK(upd.scores == score_sparsegpt(f.w, f.hinv).scores);

    const auto nou = score_d2(f.w, f.stats, zero, D2Variant::noupdate);
    const auto wanda = score_wanda(f.w, f.stats);
    for (int r = 0; r < 6; ++r) CHECK(row_order(nou.scores, r) == row_order(wanda.scores, r));
}

TEST_CASE("d2 against the straight-line expression") {
    Matrix w(1, 2);
    w << 1, 2;
    LayerStats st;
    st.in_norms = Vector::Ones(2);
    st.out_norms = Vector::Constant(1, 2.0);
    st.n_tokens = 1;
    DualParams p{1.0, 0.0, ScaleSpec{1.0, ScaleMode::fixed}};
    const auto s = score_d2(w, st, p, D2Variant::noupdate);
    const oracle::Mat ref = oracle::reference_score(w, st.in_norms, st.out_norms, 1.0, 0.0, 1.0, false, Matrix());
    CHECK((s.scores - ref).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(s.scores(0, 0) == doctest::Approx(2.0 / 1.5 + 1.0));
    CHECK(s.scores(0, 1) == doctest::Approx(2.0 * 2.0 / 1.5 + 4.0));
}

TEST_CASE("d2 on random layers matches the reference in both variants") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto f = random_fixture(7, 12, 10 + seed);
        DualParams p{0.7, -0.3, ScaleSpec{1500.0, ScaleMode::fixed}};
        for (bool update : {true, false}) {
            const auto s = score_d2(f.w, f.stats, p, update ? D2Variant::update : D2Variant::noupdate, &f.hinv);
            const oracle::Mat ref =
                oracle::reference_score(f.w, f.stats.in_norms, f.stats.out_norms, 0.7, -0.3, 1500.0, update, f.hinv);
            CHECK((s.scores - ref).cwiseAbs().maxCoeff() <= 1e-12 * ref.cwiseAbs().maxCoeff());
        }
        // seqlen mode is the fixed mode with s = n_tokens
        DualParams seq{0.7, -0.3, ScaleSpec{1500.0, ScaleMode::seqlen}};
        DualParams fixed{0.7, -0.3, ScaleSpec{double(f.stats.n_tokens), ScaleMode::fixed}};
        CHECK(score_d2(f.w, f.stats, seq, D2Variant::noupdate).scores ==
              score_d2(f.w, f.stats, fixed, D2Variant::noupdate).scores);
    }
}

TEST_CASE("update variant needs the inverse Hessian") {
    auto f = random_fixture(2, 3, 4);
    CHECK_THROWS(score_d2(f.w, f.stats, DualParams{}, D2Variant::update, nullptr));
}

TEST_CASE("row permutation equivariance") {
    auto f = random_fixture(5, 6, 5);
    std::vector<int> perm{3, 0, 4, 1, 2};
    Matrix pw(5, 6);
    LayerStats ps = f.stats;
    for (int r = 0; r < 5; ++r) {
        pw.row(r) = f.w.row(perm[r]);
        ps.out_norms(r) = f.stats.out_norms(perm[r]);
    }
    const DualParams p{1.0, 0.5, ScaleSpec{}};
    for (ScoreMethod m : {ScoreMethod::magnitude, ScoreMethod::wanda, ScoreMethod::sparsegpt, ScoreMethod::d2_update,
                          ScoreMethod::d2_noupdate}) {
        const Matrix a = score(m, f.w, f.stats, p, &f.hinv).scores;
        const Matrix b = score(m, pw, ps, p, &f.hinv).scores;
        for (int r = 0; r < 5; ++r) CHECK(b.row(r) == a.row(perm[r]));
        CHECK(all_finite(a));
    }
}

TEST_CASE("presets and the coupled helper") {
    const auto p13 = DualParams::preset("paper-13b-80");
    CHECK(p13.lambda1 == 1.0);
    CHECK(p13.lambda2 == 0.0);
    const auto def = DualParams::preset("default");
    CHECK(def.lambda1 == 1.0);
    CHECK(def.lambda2 == 0.0);
    CHECK(def.scale.s == 1500.0);
    const auto task = DualParams::preset("task-shift");
    CHECK(task.lambda1 == 0.5);
    CHECK(task.lambda2 == -0.5);
    CHECK_THROWS_AS(DualParams::preset("nope"), ConfigError);

    const auto c = DualParams::from_shift(0.5);
    CHECK(c.lambda1 == 0.5);
    CHECK(c.lambda2 == 0.125 - 0.5);
}

TEST_CASE("saliency export") {
    const auto s = score_magnitude(Matrix::Ones(2, 3));
    const auto f = saliency_to_file(s, "layers.0.w_q");
    REQUIRE(f.tensors.size() == 1);
    CHECK(f.tensors[0].value.rows() == 2);
    CHECK(score_method_name(ScoreMethod::d2_update) == "d2-update");
}
