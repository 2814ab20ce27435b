// Acceptance run: one PASS/FAIL line per criterion, detail lines indented.
// Usage: acceptance [output_dir] [--replicates R]

#include "ccpool/aggregate.hpp"
#include "ccpool/calib.hpp"
#include "ccpool/cli.hpp"
#include "ccpool/clogit.hpp"
#include "ccpool/io.hpp"
#include "ccpool/simharness.hpp"
#include "ccpool/twostage.hpp"
#include "fixtures.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace ccpool;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 20240101;
int g_replicates = 1000;
fs::path g_out = "acceptance_out";

// Measurement-error variance used for the interaction scenario (see README).
constexpr double kInteractionSigma2e = 0.125;

struct Criterion {
    bool pass = true;
    std::vector<std::string> details;

    void check(bool ok, const std::string &what) {
        pass = pass && ok;
        details.push_back(fmt::format("{} {}", ok ? "ok  " : "FAIL", what));
    }
    void note(const std::string &what) { details.push_back("info " + what); }
};

void report(int id, const char *title, const Criterion &c) {
    std::cout << fmt::format("criterion {}: {} - {}\n", id, c.pass ? "PASS" : "FAIL", title);
    for (const auto &d : c.details)
        std::cout << "    " << d << '\n';
    std::cout.flush();
}

void save(const std::string &name, const std::string &body) {
    fs::create_directories(g_out);
    std::ofstream(g_out / name, std::ios::binary) << body;
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunOptions options() {
    RunOptions o;
    o.replicates = g_replicates;
    o.seed = kSeed;
    return o;
}

void check_failures(Criterion &c, const std::string &label, const SimulationResult &r) {
    for (const auto &mm : r.metrics.methods)
        c.check(static_cast<double>(mm.n_failed) < 0.01 * g_replicates,
                fmt::format("{} {}: {} failed replicates (< 1%)", label, to_string(mm.method),
                            mm.n_failed));
}

// ---------------------------------------------------------------- published reference values

struct MainRow {
    double rr;
    double bias[4];     // N, IN, FC, TS
    double coverage[4]; // N, IN, FC, TS
};

const MainRow kMainRows[] = {
    {1.25, {-29.4, -3.1, 0.1, -0.8}, {0.37, 0.96, 0.95, 0.96}},
    {1.50, {-29.0, -3.2, 0.0, -0.9}, {0.05, 0.95, 0.94, 0.95}},
    {1.75, {-28.6, -3.5, -0.1, -1.0}, {0.01, 0.93, 0.94, 0.95}},
    {2.00, {-28.2, -3.5, 0.0, -1.0}, {0.00, 0.91, 0.93, 0.93}},
    {2.25, {-28.0, -3.6, -0.1, -1.1}, {0.00, 0.90, 0.94, 0.94}},
    {2.50, {-27.9, -3.9, -0.3, -1.3}, {0.00, 0.90, 0.96, 0.94}},
};

struct InteractionRow {
    double rr;
    double bias_x[4]; // N, IN, FC, TS
};

const InteractionRow kInteractionRows[] = {
    {0.5, {-25.8, -2.9, 0.9, 0.4}},   {0.8, {-29.4, -2.7, 0.6, 0.2}},
    {1.2, {-28.6, -2.8, 0.3, -0.1}},  {1.5, {-27.6, -2.8, 0.4, -0.2}},
    {2.0, {-25.7, -2.6, 0.9, 0.8}},   {2.5, {-23.4, -2.5, 1.4, 1.1}},
};

const SimMethod kMethods[] = {SimMethod::Naive, SimMethod::Internalized,
                              SimMethod::FullCalibration, SimMethod::TwoStage};

// ---------------------------------------------------------------- criteria 1 and 6

std::vector<SimulationRow> run_main_grid(double sigma2_e, int replicates) {
    std::vector<SimulationRow> rows;
    for (const MainRow &ref : kMainRows) {
        ScenarioMain s;
        s.sigma2_e = sigma2_e;
        s.beta_x = std::log(ref.rr);
        RunOptions o = options();
        o.replicates = replicates;
        rows.push_back({fmt::format("log({:.2f})", ref.rr), run_replicates(s, o)});
    }
    return rows;
}

void criteria_main(const std::vector<SimulationRow> &rows, Criterion &c1, Criterion &c6) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const MainRow &ref = kMainRows[r];
        const auto &metrics = rows[r].result.metrics;
        for (int k = 0; k < 4; ++k) {
            const CoefficientMetrics &m = metrics.of(kMethods[k]).coefficients[0];
            c1.check(std::abs(m.mean_percent_bias - ref.bias[k]) <= 2.0,
                     fmt::format("{} {:<15} bias {:7.2f} vs {:5.1f} (+-2.0)", rows[r].label,
                                 to_string(kMethods[k]), m.mean_percent_bias, ref.bias[k]));
            c1.check(std::abs(m.coverage - ref.coverage[k]) <= 0.03,
                     fmt::format("{} {:<15} coverage {:.3f} vs {:.2f} (+-0.03)", rows[r].label,
                                 to_string(kMethods[k]), m.coverage, ref.coverage[k]));
        }
        check_failures(c1, rows[r].label, rows[r].result);
        const double fc = metrics.of(SimMethod::FullCalibration).coefficients[0].mean_percent_bias;
        const double ts = metrics.of(SimMethod::TwoStage).coefficients[0].mean_percent_bias;
        c6.check(std::abs(fc - ts) <= 2.0,
                 fmt::format("{} |FC - TS| = {:.2f}pp (<= 2)", rows[r].label, std::abs(fc - ts)));
    }
}

// ---------------------------------------------------------------- criterion 2

void criterion_interaction(Criterion &c) {
    std::vector<SimulationRow> rows;
    for (const InteractionRow &ref : kInteractionRows) {
        ScenarioInteraction s;
        s.sigma2_e = kInteractionSigma2e;
        s.beta_x = std::log(ref.rr);
        rows.push_back({fmt::format("log({:.2f})", ref.rr), run_replicates(s, options())});
    }
    save("interaction_metrics.txt", render_metrics_table(rows));
    save("interaction_metrics.csv", render_metrics_csv(rows));
    c.note(fmt::format("sigma2_e = {}", kInteractionSigma2e));

    double v_low = NAN, v_high = NAN;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const InteractionRow &ref = kInteractionRows[r];
        const auto &metrics = rows[r].result.metrics;
        for (int k = 0; k < 4; ++k) {
            const auto &coefs = metrics.of(kMethods[k]).coefficients;
            c.check(std::abs(coefs[0].mean_percent_bias - ref.bias_x[k]) <= 2.0,
                    fmt::format("{} {:<15} beta_x bias {:7.2f} vs {:5.1f} (+-2.0)", rows[r].label,
                                to_string(kMethods[k]), coefs[0].mean_percent_bias, ref.bias_x[k]));
            const double xv = coefs[2].mean_percent_bias;
            if (kMethods[k] == SimMethod::Naive)
                c.check(xv <= -80.0,
                        fmt::format("{} Naive beta_xv bias {:.2f} (<= -80)", rows[r].label, xv));
            else
                c.check(xv > -6.9 && xv < 5.9,
                        fmt::format("{} {:<15} beta_xv bias {:.2f} in (-6.9, 5.9)", rows[r].label,
                                    to_string(kMethods[k]), xv));
        }
        check_failures(c, rows[r].label, rows[r].result);
        const double v = metrics.of(SimMethod::Internalized).coefficients[1].mean_percent_bias;
        if (ref.rr == 1.2)
            v_low = v;
        if (ref.rr == 2.5)
            v_high = v;
    }
    c.check(std::abs(v_low - 1.5) <= 2.5,
            fmt::format("Internalized beta_v bias at log(1.2) {:.2f} vs 1.5 (+-2.5)", v_low));
    c.check(std::abs(v_high - 7.6) <= 2.5,
            fmt::format("Internalized beta_v bias at log(2.5) {:.2f} vs 7.6 (+-2.5)", v_high));
    c.check(v_high > v_low, "Internalized beta_v bias grows from log(1.2) to log(2.5)");
}

// ---------------------------------------------------------------- criterion 3

void criterion_fig1(Criterion &c) {
    Fig1Config cfg;
    cfg.replicates = g_replicates;
    cfg.seed = kSeed;
    const auto points = fig1_experiment(cfg);
    save("fig1.csv", render_fig1_csv(points));
    save("fig1.txt", render_fig1_table(points));
    c.note(fmt::format("(a, b) = ({}, {}), sigma2_e = {}", cfg.a, cfg.b, cfg.base.sigma2_e));

    for (std::size_t i = 1; i < points.size(); ++i)
        c.check(points[i].controls_slope_bias < points[i - 1].controls_slope_bias,
                fmt::format("controls-only slope bias decreases: RR {:.2f} {:.2f} < RR {:.2f} {:.2f}",
                            points[i].rr, points[i].controls_slope_bias, points[i - 1].rr,
                            points[i - 1].controls_slope_bias));
    const Fig1Point &last = points.back();
    const double mag = std::abs(last.controls_slope_bias);
    c.check(mag >= 5.0 && mag <= 15.0,
            fmt::format("controls-only slope |bias| at RR {:.2f} = {:.2f} in [5, 15]", last.rr, mag));
    for (const auto &p : points) {
        c.check(std::abs(p.pooled_intercept_bias) <= 1.0,
                fmt::format("RR {:.2f} case+control intercept bias {:.2f} (+-1)", p.rr,
                            p.pooled_intercept_bias));
        c.check(std::abs(p.pooled_slope_bias) <= 1.0,
                fmt::format("RR {:.2f} case+control slope bias {:.2f} (+-1)", p.rr,
                            p.pooled_slope_bias));
        if (p.rr > 1.0)
            c.check(std::abs(p.controls_intercept_bias) > std::abs(p.controls_slope_bias),
                    fmt::format("RR {:.2f} controls-only |intercept bias| {:.2f} > |slope bias| {:.2f}",
                                p.rr, std::abs(p.controls_intercept_bias),
                                std::abs(p.controls_slope_bias)));
    }
}

// ---------------------------------------------------------------- criterion 4

void criterion_fig2(Criterion &c) {
    Fig2Config cfg;
    cfg.replicates = g_replicates;
    cfg.seed = kSeed;
    const auto points = fig2_experiment(cfg);
    save("fig2.csv", render_fig2_csv(points));
    save("fig2.txt", render_fig2_table(points));
    c.note(fmt::format("RR = {:.2f}", std::exp(cfg.base.beta_x)));
    auto bias = [&](std::size_t i, SimMethod m) {
        return std::abs(points[i].metrics.of(m).coefficients[0].mean_percent_bias);
    };
    for (std::size_t i = 1; i < points.size(); ++i) {
        c.check(bias(i, SimMethod::Internalized) > bias(i - 1, SimMethod::Internalized),
                fmt::format("IN |bias| increases: n_cal {} {:.2f} > n_cal {} {:.2f}",
                            points[i].n_cal, bias(i, SimMethod::Internalized), points[i - 1].n_cal,
                            bias(i - 1, SimMethod::Internalized)));
        c.check(bias(i, SimMethod::TwoStage) < bias(i - 1, SimMethod::TwoStage),
                fmt::format("TS |bias| decreases: n_cal {} {:.2f} < n_cal {} {:.2f}",
                            points[i].n_cal, bias(i, SimMethod::TwoStage), points[i - 1].n_cal,
                            bias(i - 1, SimMethod::TwoStage)));
    }
    for (std::size_t i = 0; i < points.size(); ++i)
        c.check(bias(i, SimMethod::FullCalibration) <= 1.5,
                fmt::format("n_cal {} FC |bias| {:.2f} (<= 1.5)", points[i].n_cal,
                            bias(i, SimMethod::FullCalibration)));
}

// ---------------------------------------------------------------- criterion 5

ClogitProblem random_problem(std::mt19937_64 &rng, int n_strata, int p) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> m_dist(1, 4);
    ClogitProblem problem(p);
    for (int j = 0; j < n_strata; ++j) {
        Eigen::MatrixXd rows(m_dist(rng), p);
        for (Eigen::Index i = 0; i < rows.rows(); ++i)
            for (int k = 0; k < p; ++k)
                rows(i, k) = normal(rng) - 0.2;
        problem.add_stratum(rows);
    }
    return problem;
}

// Direct product of conditional probabilities.
double direct_loglik(const ClogitProblem &problem, double beta) {
    double total = 0.0;
    for (std::size_t j = 0; j < problem.n_strata(); ++j) {
        const auto rows = problem.stratum(j);
        double denom = 1.0;
        for (Eigen::Index i = 0; i < rows.rows(); ++i)
            denom += std::exp(rows(i, 0) * beta);
        total -= std::log(denom);
    }
    return total;
}

bool bit_equal(const Eigen::VectorXd &a, const Eigen::VectorXd &b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

void criterion_properties(Criterion &c) {
    std::mt19937_64 rng(kSeed);

    { // score and information against central differences
        bool ok = true;
        std::normal_distribution<double> normal(0.0, 0.5);
        for (int trial = 0; trial < 10; ++trial) {
            const int p = 1 + trial % 4;
            const auto problem = random_problem(rng, 30, p);
            Eigen::VectorXd beta(p);
            for (int k = 0; k < p; ++k)
                beta(k) = normal(rng);
            const Eigen::VectorXd s = score(problem, beta);
            const Eigen::MatrixXd info = information(problem, beta);
            const double h = 1e-5;
            for (int k = 0; k < p; ++k) {
                Eigen::VectorXd up = beta, down = beta;
                up(k) += h;
                down(k) -= h;
                const double fd = (loglik(problem, up) - loglik(problem, down)) / (2 * h);
                ok = ok && std::abs(fd - s(k)) <= 1e-6 * std::max(1.0, std::abs(s(k)));
                const Eigen::VectorXd fd_info = -(score(problem, up) - score(problem, down)) / (2 * h);
                for (int l = 0; l < p; ++l)
                    ok = ok && std::abs(fd_info(l) - info(l, k)) <=
                                   1e-5 * std::max(1.0, std::abs(info(l, k)));
            }
        }
        c.check(ok, "clogit score / information match finite differences (1e-6 / 1e-5)");
    }

    { // grid-search oracle
        const auto problem = random_problem(rng, 12, 1);
        double best = 0.0, lo = -10.0, hi = 10.0;
        for (int level = 0; level < 6; ++level) {
            double best_ll = -INFINITY;
            const double step = (hi - lo) / 200.0;
            for (int k = 0; k <= 200; ++k) {
                const double b = lo + step * k;
                const double ll = direct_loglik(problem, b);
                if (ll > best_ll) {
                    best_ll = ll;
                    best = b;
                }
            }
            lo = best - 2 * step;
            hi = best + 2 * step;
        }
        const auto f = fit(problem);
        c.check(f.converged && std::abs(f.beta(0) - best) < 1e-4,
                fmt::format("clogit beta {:.8f} matches grid search {:.8f} (1e-4)", f.beta(0), best));
    }

    { // full-calibration intercept invariance
        PooledDataset d;
        d.studies.push_back(fixtures::toy_study(
            {.id = "L1", .n_strata = 60, .n_controls = 2, .n_cal = 20, .a = 1.0, .b = 0.8}, rng));
        d.studies.push_back(fixtures::toy_study(
            {.id = "L2", .n_strata = 50, .n_cal = 18, .a = -2.0, .b = 1.3, .shift_w = 1.5}, rng));
        d.studies.push_back(fixtures::toy_study({.id = "R1", .lab = LabKind::Reference}, rng));
        const auto fits = fit_all_calibrations(d, Method::FullCalibration);
        std::vector<CalibrationFit> shifted = fits;
        for (auto &f : shifted)
            f = with_parameters(f, f.a_hat + 100.0, f.b_hat);
        const auto f1 = fit(build_problem(d, Method::FullCalibration, d.design, fits));
        const auto f2 = fit(build_problem(d, Method::FullCalibration, d.design, shifted));
        c.check(f1.converged && bit_equal(f1.beta, f2.beta),
                "full-calibration beta bit-identical under intercept shift of +100");
    }

    { // identity calibration
        PooledDataset d;
        for (int q = 0; q < 3; ++q)
            d.studies.push_back(fixtures::toy_study({.id = fmt::format("L{}", q),
                                                     .n_strata = 60,
                                                     .n_cal = 20,
                                                     .a = 0.0,
                                                     .b = 1.0,
                                                     .noise_sd = 0.0},
                                                    rng));
        const auto naive = estimate(d, Method::Naive);
        const auto in = estimate(d, Method::Internalized);
        const auto fc = estimate(d, Method::FullCalibration);
        const MetaResult ts = estimate_twostage(d, d.design);
        std::vector<StudyEstimate> unadjusted;
        for (const auto &s : d.studies)
            unadjusted.push_back(fit_study(s, d.design));
        const MetaResult ts_naive = meta_fixed(unadjusted);
        const double d_in = std::abs(in.beta(0) - naive.beta(0));
        const double d_fc = std::abs(fc.beta(0) - naive.beta(0));
        const double d_ts = std::abs(ts.coef(0) - ts_naive.coef(0));
        c.check(d_in < 1e-9 && d_fc < 1e-9 && d_ts < 1e-9,
                fmt::format("identity calibration: |IN-N| {:.1e}, |FC-N| {:.1e}, "
                            "|TS - unadjusted two-stage| {:.1e} (< 1e-9)",
                            d_in, d_fc, d_ts));
    }

    { // no local studies: sandwich equals inverse information
        PooledDataset d;
        d.studies.push_back(
            fixtures::toy_study({.id = "R1", .lab = LabKind::Reference, .n_controls = 2}, rng));
        d.studies.push_back(fixtures::toy_study({.id = "R2", .lab = LabKind::Reference}, rng));
        bool ok = true;
        for (Method m : {Method::FullCalibration, Method::Internalized}) {
            const auto est = estimate(d, m);
            const Eigen::MatrixXd inv =
                est.fit_meta.info.ldlt().solve(Eigen::MatrixXd::Identity(1, 1));
            ok = ok && std::abs(est.sandwich_cov(0, 0) - inv(0, 0)) <= 1e-14 * inv(0, 0);
        }
        c.check(ok, "reference-only data: sandwich beta block equals inverse information");
    }

    { // delta method against a numerical Jacobian
        Eigen::MatrixXd cov(4, 4);
        cov << 0.040, 0.004, -0.003, 0.001, 0.004, 0.030, 0.002, 0.000, -0.003, 0.002, 0.050,
            -0.002, 0.001, 0.000, -0.002, 0.020;
        StudyEstimate naive;
        naive.study_id = "s";
        naive.names = {"exposure", "modifier", "interaction", "z1"};
        naive.coef = Eigen::Vector4d(0.3, 0.2, 0.1, -0.4);
        naive.cov = cov;
        CalibrationFit cal;
        cal.a_hat = 2.0;
        cal.b_hat = 0.5;
        cal.cov << 0.09, -0.012, -0.012, 0.0025;
        const StudyEstimate adj = adjust_interaction(naive, cal, CalibrationCovariance::Full);
        auto g = [](const Eigen::VectorXd &phi) {
            Eigen::VectorXd out(4);
            out << phi(0) / phi(5), phi(1) - phi(4) * phi(2) / phi(5), phi(2) / phi(5), phi(3);
            return out;
        };
        Eigen::VectorXd phi(6);
        phi << 0.3, 0.2, 0.1, -0.4, 2.0, 0.5;
        Eigen::MatrixXd jac(4, 6);
        for (int k = 0; k < 6; ++k) {
            const double h = 1e-6 * std::max(1.0, std::abs(phi(k)));
            Eigen::VectorXd up = phi, down = phi;
            up(k) += h;
            down(k) -= h;
            jac.col(k) = (g(up) - g(down)) / (2 * h);
        }
        Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(6, 6);
        sigma.topLeftCorner(4, 4) = cov;
        sigma.bottomRightCorner(2, 2) = cal.cov;
        const double err = (adj.cov - jac * sigma * jac.transpose()).cwiseAbs().maxCoeff();
        c.check(err < 1e-8, fmt::format("delta-method covariance vs numerical Jacobian: {:.1e} (< 1e-8)", err));
    }

    { // meta-analysis hand arithmetic
        auto one = [](const char *id, double b, double v) {
            StudyEstimate e;
            e.study_id = id;
            e.names = {"exposure"};
            e.coef = Eigen::VectorXd::Constant(1, b);
            e.cov = Eigen::MatrixXd::Constant(1, 1, v);
            return e;
        };
        const MetaResult m1 = meta_fixed({one("a", 0.4, 0.04), one("b", 0.6, 0.04)});
        const MetaResult m2 = meta_fixed({one("a", 0.0, 0.01), one("b", 1.0, 1.0)});
        const bool ok = std::abs(m1.coef(0) - 0.5) < 1e-15 && std::abs(m1.se(0) - std::sqrt(0.02)) < 1e-15 &&
                        std::abs(m2.coef(0) - 1.0 / 101.0) < 1e-15 &&
                        std::abs(m2.se(0) * m2.se(0) - 1.0 / 101.0) < 1e-15;
        c.check(ok, "fixed-effects meta-analysis hand arithmetic (0.5 / 0.02; 1/101 / 1/101)");
    }

    { // generator moments at n = 1e6
        const ScenarioInteraction s;
        const StudyPopulation pop = population(s, 0);
        SubjectSampler sampler(pop, kSeed, 0);
        const double n = 1e6;
        double sx = 0, sxx = 0, sw = 0, sww = 0, se = 0, see = 0, sv = 0, svv = 0, sxv = 0;
        for (int i = 0; i < 1000000; ++i) {
            const PopulationDraw d = sampler.draw();
            sx += d.x, sxx += d.x * d.x, sw += d.w, sww += d.w * d.w;
            se += d.e, see += d.e * d.e, sv += d.v, svv += d.v * d.v, sxv += d.x * d.v;
        }
        auto var = [&](double s1, double s2) { return (s2 - s1 * s1 / n) / (n - 1); };
        const double vx = var(sx, sxx), vw = var(sw, sww), ve = var(se, see), vv = var(sv, svv);
        const double corr = (sxv / n - sx / n * sv / n) / std::sqrt(vx * vv);
        const double ws2 = pop.sd_w * pop.sd_w;
        const bool ok =
            std::abs(sx / n - s.mu_x) < 4 * std::sqrt(s.sigma2_x / n) &&
            std::abs(vx - s.sigma2_x) < 4 * std::sqrt(2 / n) * s.sigma2_x &&
            std::abs(sw / n - pop.mu_w) < 4 * std::sqrt(ws2 / n) &&
            std::abs(vw - ws2) < 4 * std::sqrt(2 / n) * ws2 &&
            std::abs(ve - s.sigma2_e) < 4 * std::sqrt(2 / n) * s.sigma2_e &&
            std::abs(vv - s.sigma2_v) < 4 * std::sqrt(2 / n) * s.sigma2_v &&
            std::abs(corr - s.corr_xv) < 4 * (1 - s.corr_xv * s.corr_xv) / std::sqrt(n);
        c.check(ok, fmt::format("generator moments at n = 1e6 within 4 MC SEs (var X {:.4f}, "
                                "var e {:.4f}, corr XV {:.4f})",
                                vx, ve, corr));
    }
}

// ---------------------------------------------------------------- criterion 7

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "ccpool");
    std::vector<const char *> argv;
    for (const auto &a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

void criterion_determinism(Criterion &c) {
    const fs::path root = g_out / "determinism";
    fs::remove_all(root);
    const std::string demo = (fs::path(CCPOOL_SOURCE_DIR) / "data" / "demo.csv").string();
    struct Run {
        std::string name;
        std::vector<std::string> args;
    };
    const std::vector<Run> runs{
        {"simulate", {"simulate", "--rr", "1.5", "--rr", "2.5", "--replicates", "50", "--seed", "11"}},
        {"simulate_interaction",
         {"simulate", "--interaction", "--rr", "2", "--replicates", "20", "--seed", "11"}},
        {"analyze", {"analyze", "--input", demo, "--exposure-scale", "20", "--interaction"}},
        {"fig1", {"fig1", "--replicates", "50", "--seed", "11"}},
    };
    for (const Run &run : runs) {
        std::vector<fs::path> dirs;
        for (int rep = 0; rep < 2; ++rep) {
            dirs.push_back(root / fmt::format("{}_{}", run.name, rep));
            auto args = run.args;
            args.insert(args.end(), {"--out", dirs.back().string()});
            if (rep == 1 && run.name != "analyze")
                args.insert(args.end(), {"--threads", "3"});
            const int code = cli(args);
            c.check(code == 0, fmt::format("{} run {} exit code {}", run.name, rep + 1, code));
        }
        std::size_t files = 0;
        bool same = true;
        for (const auto &entry : fs::directory_iterator(dirs[0])) {
            ++files;
            same = same && slurp(entry.path()) == slurp(dirs[1] / entry.path().filename());
        }
        c.check(same && files >= 3,
                fmt::format("{}: {} report files byte-identical across reruns", run.name, files));
    }
}

} // namespace

int main(int argc, char **argv) {
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--replicates") == 0 && i + 1 < argc)
            g_replicates = std::atoi(argv[++i]);
        else
            g_out = argv[i];
    }
    std::cout << fmt::format("acceptance run: seed {}, {} replicates, outputs in {}\n", kSeed,
                             g_replicates, g_out.string());

    bool all = true;
    try {
        Criterion c1, c6;
        const auto main_rows = run_main_grid(ScenarioMain{}.sigma2_e, g_replicates);
        save("main_metrics.txt", render_metrics_table(main_rows));
        save("main_metrics.csv", render_metrics_csv(main_rows));
        c1.note(fmt::format("sigma2_e = {}", ScenarioMain{}.sigma2_e));
        criteria_main(main_rows, c1, c6);
        // Sensitivity to the measurement-error variance, reported only.
        for (double s2e : {0.1, 0.4}) {
            const auto rows = run_main_grid(s2e, std::min(g_replicates, 200));
            save(fmt::format("main_metrics_sigma2e_{}.txt", s2e), render_metrics_table(rows));
            std::string line = fmt::format("sensitivity sigma2_e = {} (R = {}): ", s2e,
                                           std::min(g_replicates, 200));
            for (const auto &r : rows) {
                const auto &m = r.result.metrics;
                line += fmt::format("{} IN {:.1f} FC {:.1f}; ", r.label,
                                    m.of(SimMethod::Internalized).coefficients[0].mean_percent_bias,
                                    m.of(SimMethod::FullCalibration).coefficients[0].mean_percent_bias);
            }
            c1.note(line);
        }
        report(1, "main-effect operating characteristics", c1);

        Criterion c2;
        criterion_interaction(c2);
        report(2, "interaction-model operating characteristics", c2);

        Criterion c3;
        criterion_fig1(c3);
        report(3, "calibration parameter bias by relative risk", c3);

        Criterion c4;
        criterion_fig2(c4);
        report(4, "exposure bias by calibration subset size", c4);

        Criterion c5;
        criterion_properties(c5);
        report(5, "property suite", c5);

        report(6, "two-stage vs full-calibration agreement", c6);

        Criterion c7;
        criterion_determinism(c7);
        report(7, "byte-identical reruns", c7);

        all = c1.pass && c2.pass && c3.pass && c4.pass && c5.pass && c6.pass && c7.pass;
    } catch (const std::exception &e) {
        std::cout << "acceptance run aborted: " << e.what() << '\n';
        return 1;
    }
    std::cout << (all ? "all criteria passed\n" : "some criteria failed\n");
    return all ? 0 : 1;
}
