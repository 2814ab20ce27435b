#include "ccpool/calib.hpp"
#include "ccpool/error.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <random>

using namespace ccpool;

namespace {

CalibrationFit fit_of(std::vector<CalibrationPair> pairs) { return fit_calibration(pairs, "s"); }

} // namespace

TEST_CASE("fit_calibration: exact linear data") {
    const auto f = fit_of({{0, 1}, {1, 2}, {2, 3}});
    CHECK(f.a_hat == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(f.b_hat == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(f.resid_var) < 1e-28);
    CHECK(f.n_cal == 3);
}

TEST_CASE("fit_calibration: closed-form slope example") {
    // slope = sum (w - wbar)(x - xbar) / sum (w - wbar)^2 with wbar = 1, xbar = 7/3
    const double sxy = (-1.0) * (1.0 - 7.0 / 3) + 0.0 + 1.0 * (4.0 - 7.0 / 3);
    const double sxx = 2.0;
    const auto f = fit_of({{0, 1}, {1, 2}, {2, 4}});
    CHECK(f.b_hat == doctest::Approx(sxy / sxx).epsilon(1e-13));
    CHECK(f.b_hat == doctest::Approx(1.5).epsilon(1e-13));
    CHECK(f.a_hat == doctest::Approx(5.0 / 6.0).epsilon(1e-13));
    // residuals 1/6, -1/3, 1/6 -> RSS = 1/6, resid_var = RSS / 1
    CHECK(f.resid_var == doctest::Approx(1.0 / 6.0).epsilon(1e-13));
}

TEST_CASE("fit_calibration: errors") {
    CHECK_THROWS_AS(fit_of({{1, 1}, {1, 2}, {1, 3}}), Error);
    try {
        fit_of({{1, 1}, {1, 2}, {1, 3}});
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::SingularDesign);
    }
    try {
        fit_of({{0, 1}, {1, 2}});
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::InsufficientData);
    }
    try {
        fit_of({{0, 1}, {1, 1}, {2, 1}});
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::DivisionDegeneracy);
    }
}

TEST_CASE("fit_calibration matches a normal-equations oracle") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + trial;
        std::vector<CalibrationPair> pairs;
        Eigen::MatrixXd X(n, 2);
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            const double w = 5.0 * normal(rng) + 10.0;
            const double x = -2.0 + 0.7 * w + normal(rng);
            pairs.push_back({w, x});
            X(i, 0) = 1.0;
            X(i, 1) = w;
            y(i) = x;
        }
        const Eigen::Matrix2d xtx = X.transpose() * X;
        const Eigen::Vector2d coef = xtx.inverse() * (X.transpose() * y);
        const double rss = (y - X * coef).squaredNorm();
        const Eigen::Matrix2d cov = rss / (n - 2) * xtx.inverse();

        const auto f = fit_of(pairs);
        CHECK(f.a_hat == doctest::Approx(coef(0)).epsilon(1e-9));
        CHECK(f.b_hat == doctest::Approx(coef(1)).epsilon(1e-9));
        if (n > 3) {
            CHECK(f.resid_var == doctest::Approx(rss / (n - 2)).epsilon(1e-8));
            CHECK((f.cov - cov).cwiseAbs().maxCoeff() < 1e-8 * cov.cwiseAbs().maxCoeff());
        }
        CHECK(f.cov(0, 1) == f.cov(1, 0));
    }
}

TEST_CASE("fit_calibration recovers noiseless parameters") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> unif(-50.0, 50.0);
    const double a = 4.25, b = -0.375;
    std::vector<CalibrationPair> pairs;
    for (int i = 0; i < 50; ++i) {
        const double w = unif(rng);
        pairs.push_back({w, a + b * w});
    }
    const auto f = fit_of(pairs);
    CHECK(std::abs(f.a_hat - a) < 1e-10);
    CHECK(std::abs(f.b_hat - b) < 1e-10);
}

namespace {

Study one_stratum_study() {
    Study s;
    s.study_id = "L";
    Subject c;
    c.subject_id = "case";
    c.is_case = true;
    c.local_w = 4.0;
    Subject k;
    k.subject_id = "cal";
    k.local_w = 10.0;
    k.ref_x = 6.9;
    k.in_calibration_subset = true;
    Subject u;
    u.subject_id = "plain";
    u.local_w = 10.0;
    s.strata.push_back({"st", {c, k, u}});
    return s;
}

CalibrationFit fixed_fit(double a, double b) {
    CalibrationFit f;
    f.study_id = "L";
    f.a_hat = a;
    f.b_hat = b;
    return f;
}

} // namespace

TEST_CASE("apply_full_calibration uses the calibration line for everyone") {
    const auto out = apply_full_calibration(one_stratum_study(), fixed_fit(2.0, 0.5));
    REQUIRE(out.size() == 3);
    CHECK(out[0].x_tilde == 4.0);
    CHECK(out[1].x_tilde == 7.0);
    CHECK(out[2].x_tilde == 7.0);
    for (const auto &e : out)
        CHECK(e.source == ExposureSource::Calibrated);

    const auto identity = apply_full_calibration(one_stratum_study(), fixed_fit(0.0, 1.0));
    CHECK(identity[0].x_tilde == 4.0);
    CHECK(identity[1].x_tilde == 10.0);
}

TEST_CASE("apply_internalized keeps reference values") {
    const auto out = apply_internalized(one_stratum_study(), fixed_fit(2.0, 0.5));
    REQUIRE(out.size() == 3);
    CHECK(out[1].x_tilde == 6.9);
    CHECK(out[1].source == ExposureSource::Reference);
    CHECK(out[2].x_tilde == 7.0);
    CHECK(out[2].source == ExposureSource::Calibrated);
}

TEST_CASE("apply_* reject reference-lab studies; apply_reference passes through") {
    Study s = one_stratum_study();
    s.lab_kind = LabKind::Reference;
    for (auto &m : s.strata[0].members) {
        m.ref_x = 1.5;
        m.in_calibration_subset = false;
    }
    try {
        apply_full_calibration(s, fixed_fit(2.0, 0.5));
        FAIL("expected precondition error");
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::Precondition);
    }
    CHECK_THROWS_AS(apply_internalized(s, fixed_fit(2.0, 0.5)), Error);
    const auto out = apply_reference(s);
    CHECK(out[0].x_tilde == 1.5);
    CHECK(out[0].source == ExposureSource::Reference);
}

TEST_CASE("apply_full_calibration: missing local_w") {
    Study s = one_stratum_study();
    s.strata[0].members[2].local_w.reset();
    try {
        apply_full_calibration(s, fixed_fit(2.0, 0.5));
        FAIL("expected missing exposure");
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::MissingExposure);
    }
}

TEST_CASE("full-calibration differences ignore the intercept") {
    std::mt19937_64 rng(21);
    const Study s = fixtures::toy_study({.id = "L", .n_controls = 3, .modifier = true}, rng);
    DesignSpec main;
    for (const auto &st : s.strata) {
        const auto r1 = full_calibration_differences(st, fixed_fit(2.0, 0.5), main);
        const auto r2 = full_calibration_differences(st, fixed_fit(102.0, 0.5), main);
        CHECK((r1 - r2).cwiseAbs().maxCoeff() == 0.0);
        // equal (up to rounding) to differencing calibrated values
        const auto r3 = stratum_differences(
            st, calibrated_accessor(fixed_fit(2.0, 0.5), CalibrationRule::FullCalibration), main);
        CHECK((r1 - r3).cwiseAbs().maxCoeff() < 1e-12);
    }
    DesignSpec inter;
    inter.include_interaction = true;
    for (const auto &st : s.strata) {
        const auto r1 = full_calibration_differences(st, fixed_fit(2.0, 0.5), inter);
        const auto r3 = stratum_differences(
            st, calibrated_accessor(fixed_fit(2.0, 0.5), CalibrationRule::FullCalibration), inter);
        CHECK((r1 - r3).cwiseAbs().maxCoeff() < 1e-12);
    }
}
