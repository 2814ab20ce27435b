#include "ccpool/simharness.hpp"
#include "ccpool/aggregate.hpp"
#include "ccpool/calib.hpp"
#include "ccpool/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <mutex>
#include <numeric>
#include <thread>

namespace ccpool {

namespace {

[[noreturn]] void scenario_error(const std::string &msg) {
    throw Error(ErrorCode::InvalidScenario, msg);
}

void check_common(const ScenarioMain &s) {
    if (s.n_studies < 1)
        scenario_error("n_studies must be at least 1");
    if (static_cast<int>(s.a.size()) != s.n_studies || static_cast<int>(s.b.size()) != s.n_studies)
        scenario_error(fmt::format("a and b need {} entries each", s.n_studies));
    if (s.pairs_per_study < 1)
        scenario_error("pairs_per_study must be at least 1");
    if (s.n_cal < 3 || s.n_cal > s.pairs_per_study)
        scenario_error(fmt::format("n_cal must lie in [3, {}] (one control per pair)",
                                   s.pairs_per_study));
    if (s.pool_size_per_stratum < 2)
        scenario_error("pool_size_per_stratum must be at least 2");
    if (!(s.sigma2_x > 0.0))
        scenario_error("sigma2_x must be positive");
    if (!(s.sigma2_e >= 0.0) || !(s.sigma2_e < s.sigma2_x))
        scenario_error("sigma2_e must lie in [0, sigma2_x) so that sigma2_ws > 0");
    if (!(s.sigma2_beta0 >= 0.0))
        scenario_error("sigma2_beta0 must be non-negative");
    for (double b : s.b)
        if (!std::isfinite(b) || std::abs(b) < kMinAbsSlope)
            scenario_error("calibration slopes must be finite and nonzero");
    for (double a : s.a)
        if (!std::isfinite(a))
            scenario_error("calibration intercepts must be finite");
    for (double v : {s.mu_x, s.mu_beta0, s.beta_x})
        if (!std::isfinite(v))
            scenario_error("scenario parameters must be finite");
}

} // namespace

void check_scenario(const ScenarioMain &scenario) { check_common(scenario); }

void check_scenario(const ScenarioInteraction &s) {
    check_common(s);
    if (!(s.sigma2_v > 0.0))
        scenario_error("sigma2_v must be positive");
    if (!(std::abs(s.corr_xv) < 1.0))
        scenario_error("corr_xv must lie strictly inside (-1, 1)");
    // Var(V | W) > 0  <=>  corr^2 sigma2_x < sigma2_x - sigma2_e
    if (!(s.corr_xv * s.corr_xv * s.sigma2_x < s.sigma2_x - s.sigma2_e))
        scenario_error("corr_xv is infeasible: (W, V) covariance would not be positive definite");
    for (double v : {s.mu_v, s.beta_v, s.beta_xv})
        if (!std::isfinite(v))
            scenario_error("scenario parameters must be finite");
}

StudyPopulation population(const ScenarioMain &s, int study) {
    const auto k = static_cast<std::size_t>(study);
    StudyPopulation pop;
    pop.a = s.a.at(k);
    pop.b = s.b.at(k);
    pop.mu_w = (s.mu_x - pop.a) / pop.b;
    pop.sd_w = std::sqrt((s.sigma2_x - s.sigma2_e) / (pop.b * pop.b));
    pop.sd_e = std::sqrt(s.sigma2_e);
    return pop;
}

StudyPopulation population(const ScenarioInteraction &s, int study) {
    StudyPopulation pop = population(static_cast<const ScenarioMain &>(s), study);
    // Cholesky factor of Cov(W, V): V = mu_v + l21 z1 + l22 z2
    const double cov_wv = s.corr_xv * std::sqrt(s.sigma2_x * s.sigma2_v) / pop.b;
    pop.with_modifier = true;
    pop.mu_v = s.mu_v;
    pop.v_on_z1 = cov_wv / pop.sd_w;
    pop.v_resid_sd = std::sqrt(std::max(0.0, s.sigma2_v - pop.v_on_z1 * pop.v_on_z1));
    return pop;
}

SubjectSampler::SubjectSampler(const StudyPopulation &pop, std::uint64_t seed,
                               std::uint64_t stream)
    : pop_(pop) {
    const auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v); };
    const auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
    std::seed_seq main_seq{lo(seed), hi(seed), lo(stream), hi(stream), 0u};
    std::seed_seq mod_seq{lo(seed), hi(seed), lo(stream), hi(stream), 1u};
    main_.seed(main_seq);
    modifier_.seed(mod_seq);
}

PopulationDraw SubjectSampler::draw() {
    const double z1 = normal_(main_);
    const double z3 = normal_(main_);
    PopulationDraw d;
    d.w = pop_.mu_w + pop_.sd_w * z1;
    d.e = pop_.sd_e * z3;
    d.x = pop_.a + pop_.b * d.w + d.e;
    if (pop_.with_modifier)
        d.v = pop_.mu_v + pop_.v_on_z1 * z1 + pop_.v_resid_sd * modifier_normal_(modifier_);
    return d;
}

namespace {

struct RiskModel {
    double beta_x = 0.0;
    double beta_v = 0.0;
    double beta_xv = 0.0;
    double eta(const PopulationDraw &d) const {
        return beta_x * d.x + beta_v * d.v + beta_xv * d.x * d.v;
    }
};

Subject make_subject(const std::string &id, bool is_case, const PopulationDraw &d,
                     bool with_modifier) {
    Subject m;
    m.subject_id = id;
    m.is_case = is_case;
    m.local_w = d.w;
    if (with_modifier)
        m.effect_modifier = d.v;
    return m;
}

SimulatedData generate(const ScenarioMain &s, const std::vector<StudyPopulation> &pops,
                       const RiskModel &risk, std::uint64_t seed) {
    SimulatedData out;
    const double sd_beta0 = std::sqrt(s.sigma2_beta0);
    std::vector<PopulationDraw> pool(static_cast<std::size_t>(s.pool_size_per_stratum));
    std::vector<int> cases, controls;

    for (int q = 0; q < s.n_studies; ++q) {
        const StudyPopulation &pop = pops[static_cast<std::size_t>(q)];
        SubjectSampler sampler(pop, seed, static_cast<std::uint64_t>(q));
        auto &rng = sampler.engine();
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> unif(0.0, 1.0);

        Study study;
        study.study_id = fmt::format("S{}", q + 1);
        study.lab_kind = LabKind::Local;
        std::vector<double> hidden;
        for (int j = 0; j < s.pairs_per_study; ++j) {
            PopulationDraw case_draw, control_draw;
            for (;;) {
                const double beta0 = s.mu_beta0 + sd_beta0 * normal(rng);
                cases.clear();
                controls.clear();
                for (std::size_t i = 0; i < pool.size(); ++i) {
                    pool[i] = sampler.draw();
                    const double p = 1.0 / (1.0 + std::exp(-(beta0 + risk.eta(pool[i]))));
                    (unif(rng) < p ? cases : controls).push_back(static_cast<int>(i));
                }
                if (cases.empty() || controls.empty())
                    continue;
                std::uniform_int_distribution<std::size_t> pick_case(0, cases.size() - 1);
                std::uniform_int_distribution<std::size_t> pick_control(0, controls.size() - 1);
                case_draw = pool[static_cast<std::size_t>(cases[pick_case(rng)])];
                control_draw = pool[static_cast<std::size_t>(controls[pick_control(rng)])];
                break;
            }
            Stratum st;
            st.stratum_id = fmt::format("{}-{}", study.study_id, j + 1);
            st.members.push_back(
                make_subject(st.stratum_id + "-case", true, case_draw, pop.with_modifier));
            st.members.push_back(
                make_subject(st.stratum_id + "-ctl", false, control_draw, pop.with_modifier));
            hidden.push_back(case_draw.x);
            hidden.push_back(control_draw.x);
            study.strata.push_back(std::move(st));
        }

        // Calibration subset: n_cal controls drawn without replacement.
        std::vector<int> order(static_cast<std::size_t>(s.pairs_per_study));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (int k = 0; k < s.n_cal; ++k) {
            const auto j = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
            Subject &control = study.strata[j].members[1];
            control.in_calibration_subset = true;
            control.ref_x = hidden[2 * j + 1];
        }
        out.dataset.studies.push_back(std::move(study));
        out.hidden_x.push_back(std::move(hidden));
    }
    return out;
}

} // namespace

SimulatedData gen_main(const ScenarioMain &scenario, std::uint64_t seed) {
    check_scenario(scenario);
    std::vector<StudyPopulation> pops;
    for (int q = 0; q < scenario.n_studies; ++q)
        pops.push_back(population(scenario, q));
    return generate(scenario, pops, RiskModel{scenario.beta_x, 0.0, 0.0}, seed);
}

SimulatedData gen_interaction(const ScenarioInteraction &scenario, std::uint64_t seed) {
    check_scenario(scenario);
    std::vector<StudyPopulation> pops;
    for (int q = 0; q < scenario.n_studies; ++q)
        pops.push_back(population(scenario, q));
    SimulatedData out = generate(scenario, pops,
                                 RiskModel{scenario.beta_x, scenario.beta_v, scenario.beta_xv}, seed);
    out.dataset.design.include_interaction = true;
    return out;
}

std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t replicate) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(replicate),
                      static_cast<std::uint32_t>(replicate >> 32)};
    std::mt19937_64 engine(seq);
    return engine();
}

const char *to_string(SimMethod method) {
    switch (method) {
    case SimMethod::Naive:
        return "Naive";
    case SimMethod::Internalized:
        return "Internalized";
    case SimMethod::FullCalibration:
        return "FullCalibration";
    case SimMethod::TwoStage:
        return "TwoStage";
    }
    return "?";
}

const std::vector<SimMethod> &all_sim_methods() {
    static const std::vector<SimMethod> all{SimMethod::Naive, SimMethod::Internalized,
                                            SimMethod::FullCalibration, SimMethod::TwoStage};
    return all;
}

const MethodMetrics &OperatingCharacteristics::of(SimMethod method) const {
    for (const auto &m : methods)
        if (m.method == method)
            return m;
    throw Error(ErrorCode::Precondition, fmt::format("no metrics for method {}", to_string(method)));
}

std::vector<MethodOutcome> run_methods(const PooledDataset &dataset,
                                       const std::vector<SimMethod> &methods,
                                       CalibrationCovariance calib_cov) {
    std::vector<MethodOutcome> out;
    for (SimMethod m : methods) {
        MethodOutcome o;
        try {
            if (m == SimMethod::TwoStage) {
                const MetaResult r = estimate_twostage(dataset, dataset.design, calib_cov);
                o.coef = r.coef;
                o.se = r.se;
            } else {
                const Method am = m == SimMethod::Naive          ? Method::Naive
                                  : m == SimMethod::Internalized ? Method::Internalized
                                                                 : Method::FullCalibration;
                const AggregatedEstimate r = estimate(dataset, am);
                o.coef = r.beta;
                o.se = r.sandwich_cov.diagonal().cwiseSqrt();
            }
            o.ok = o.coef.allFinite() && o.se.allFinite();
            if (!o.ok)
                o.error = "non-finite estimate";
        } catch (const Error &e) {
            o.ok = false;
            o.error = e.what();
        }
        out.push_back(std::move(o));
    }
    return out;
}

OperatingCharacteristics summarize(const std::vector<SimMethod> &methods,
                                   const std::vector<std::string> &names,
                                   const Eigen::VectorXd &truth,
                                   const std::vector<ReplicateRecord> &records) {
    if (records.empty())
        throw Error(ErrorCode::Precondition, "no replicate records to summarize");
    OperatingCharacteristics oc;
    oc.names = names;
    oc.truth = truth;
    const auto p = static_cast<Eigen::Index>(names.size());
    for (std::size_t k = 0; k < methods.size(); ++k) {
        MethodMetrics mm;
        mm.method = methods[k];
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(p), sum_pb = sum, sum_se = sum, sum_sq = sum,
                        covered = sum;
        std::vector<Eigen::VectorXd> kept;
        for (const auto &r : records) {
            const MethodOutcome &o = r.outcomes.at(k);
            if (!o.ok) {
                ++mm.n_failed;
                continue;
            }
            kept.push_back(o.coef);
            sum += o.coef;
            for (Eigen::Index c = 0; c < p; ++c) {
                sum_pb(c) += (o.coef(c) - truth(c)) / truth(c) * 100.0;
                sum_se(c) += o.se(c);
                sum_sq(c) += (o.coef(c) - truth(c)) * (o.coef(c) - truth(c));
                covered(c) += std::abs(o.coef(c) - truth(c)) <= 1.96 * o.se(c) ? 1.0 : 0.0;
            }
        }
        mm.n_replicates = kept.size();
        if (mm.n_failed > 0)
            oc.warnings.push_back(fmt::format("{}: {} of {} replicates failed and were excluded",
                                              to_string(mm.method), mm.n_failed, records.size()));
        const double n = static_cast<double>(kept.size());
        for (Eigen::Index c = 0; c < p; ++c) {
            CoefficientMetrics cm;
            cm.name = names[static_cast<std::size_t>(c)];
            cm.truth = truth(c);
            if (kept.empty()) {
                cm.mean_percent_bias = cm.empirical_se = cm.mean_model_se = cm.mse = cm.coverage =
                    std::nan("");
            } else {
                const double mean = sum(c) / n;
                double ss = 0.0;
                for (const auto &b : kept)
                    ss += (b(c) - mean) * (b(c) - mean);
                cm.mean_percent_bias = sum_pb(c) / n;
                cm.empirical_se = kept.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
                cm.mean_model_se = sum_se(c) / n;
                cm.mse = sum_sq(c) / n;
                cm.coverage = covered(c) / n;
            }
            mm.coefficients.push_back(cm);
        }
        oc.methods.push_back(std::move(mm));
    }
    return oc;
}

namespace {

template <class Body>
void parallel_for(std::size_t n, unsigned threads, const Body &body) {
    if (threads == 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        });
    for (auto &t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

template <class Scenario, class Generator>
SimulationResult run_generic(const Scenario &scenario, const RunOptions &options,
                             const Generator &generate_data, std::vector<std::string> names,
                             Eigen::VectorXd truth) {
    check_scenario(scenario);
    if (options.replicates < 1)
        throw Error(ErrorCode::InvalidConfig, "replicates must be at least 1");
    if (options.methods.empty())
        throw Error(ErrorCode::InvalidConfig, "no methods selected");

    SimulationResult result;
    result.methods = options.methods;
    result.records.resize(static_cast<std::size_t>(options.replicates));
    parallel_for(result.records.size(), options.threads, [&](std::size_t r) {
        ReplicateRecord &rec = result.records[r];
        rec.index = r;
        rec.seed = replicate_seed(options.seed, r);
        const SimulatedData data = generate_data(scenario, rec.seed);
        rec.outcomes = run_methods(data.dataset, options.methods, options.calib_cov);
    });
    result.metrics = summarize(options.methods, names, truth, result.records);
    return result;
}

} // namespace

SimulationResult run_replicates(const ScenarioMain &scenario, const RunOptions &options) {
    return run_generic(scenario, options, gen_main, {"exposure"},
                       Eigen::VectorXd::Constant(1, scenario.beta_x));
}

SimulationResult run_replicates(const ScenarioInteraction &scenario, const RunOptions &options) {
    Eigen::VectorXd truth(3);
    truth << scenario.beta_x, scenario.beta_v, scenario.beta_xv;
    return run_generic(scenario, options, gen_interaction, {"exposure", "modifier", "interaction"},
                       truth);
}

ScenarioMain Fig1Config::fig1_base() {
    ScenarioMain s;
    s.n_studies = 1;
    s.a = {3.0};
    s.b = {0.8};
    s.sigma2_e = 0.4;
    return s;
}

std::vector<Fig1Point> fig1_experiment(const Fig1Config &config) {
    if (config.rr_grid.empty())
        throw Error(ErrorCode::InvalidConfig, "rr_grid is empty");
    if (config.replicates < 1)
        throw Error(ErrorCode::InvalidConfig, "replicates must be at least 1");
    ScenarioMain base = config.base;
    base.n_studies = 1;
    base.a = {config.a};
    base.b = {config.b};
    check_scenario(base);

    std::vector<Fig1Point> out;
    const auto reps = static_cast<std::size_t>(config.replicates);
    for (double rr : config.rr_grid) {
        if (!(rr > 0.0))
            throw Error(ErrorCode::InvalidConfig, "relative risks must be positive");
        ScenarioMain s = base;
        s.beta_x = std::log(rr);
        // columns: controls a, controls b, pooled a, pooled b
        Eigen::MatrixXd bias(static_cast<Eigen::Index>(reps), 4);
        // Common random numbers: replicate r uses the same seed at every RR.
        parallel_for(reps, config.threads, [&](std::size_t r) {
            const SimulatedData data = gen_main(s, replicate_seed(config.seed, r));
            std::vector<CalibrationPair> controls_only, pooled;
            const Study &study = data.dataset.studies[0];
            const auto &hidden = data.hidden_x[0];
            std::size_t k = 0;
            for (const auto &st : study.strata)
                for (const auto &m : st.members) {
                    const CalibrationPair pair{*m.local_w, hidden[k++]};
                    pooled.push_back(pair);
                    if (!m.is_case)
                        controls_only.push_back(pair);
                }
            const CalibrationFit co = fit_calibration(controls_only, study.study_id);
            const CalibrationFit all = fit_calibration(pooled, study.study_id);
            const auto i = static_cast<Eigen::Index>(r);
            bias(i, 0) = (co.a_hat - config.a) / config.a * 100.0;
            bias(i, 1) = (co.b_hat - config.b) / config.b * 100.0;
            bias(i, 2) = (all.a_hat - config.a) / config.a * 100.0;
            bias(i, 3) = (all.b_hat - config.b) / config.b * 100.0;
        });
        const Eigen::RowVectorXd mean = bias.colwise().mean();
        Eigen::RowVectorXd se = Eigen::RowVectorXd::Zero(4);
        if (reps > 1)
            se = ((bias.rowwise() - mean).array().square().colwise().sum() /
                  static_cast<double>(reps - 1) / static_cast<double>(reps))
                     .sqrt();
        Fig1Point p;
        p.rr = rr;
        p.controls_intercept_bias = mean(0);
        p.controls_slope_bias = mean(1);
        p.pooled_intercept_bias = mean(2);
        p.pooled_slope_bias = mean(3);
        p.controls_intercept_se = se(0);
        p.controls_slope_se = se(1);
        p.pooled_intercept_se = se(2);
        p.pooled_slope_se = se(3);
        p.replicates = config.replicates;
        out.push_back(p);
    }
    return out;
}

ScenarioMain Fig2Config::fig2_base() {
    ScenarioMain s;
    s.beta_x = std::log(2.0);
    return s;
}

std::vector<Fig2Point> fig2_experiment(const Fig2Config &config) {
    if (config.n_cal_grid.empty())
        throw Error(ErrorCode::InvalidConfig, "n_cal grid is empty");
    std::vector<Fig2Point> out;
    for (int n_cal : config.n_cal_grid) {
        ScenarioMain s = config.base;
        s.n_cal = n_cal;
        RunOptions opt;
        opt.replicates = config.replicates;
        opt.seed = config.seed;
        opt.threads = config.threads;
        out.push_back({n_cal, run_replicates(s, opt).metrics});
    }
    return out;
}

} // namespace ccpool
