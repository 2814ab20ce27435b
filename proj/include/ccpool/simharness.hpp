#pragma once

#include "ccpool/datamodel.hpp"
#include "ccpool/twostage.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ccpool {

/// Simulation scenario for the main-effect model. Every subject has
/// X = a_s + b_s W + e with W ~ N((mu_x - a_s)/b_s, sigma2_ws), e ~ N(0, sigma2_e)
/// independent of W, and sigma2_ws = (sigma2_x - sigma2_e) / b_s^2.
struct ScenarioMain {
    int n_studies = 4;
    int pairs_per_study = 500;
    int n_cal = 100;
    std::vector<double> a{-3.0, 1.0, -1.0, 3.0};
    std::vector<double> b{0.5, 0.75, 1.25, 1.5};
    double mu_x = 0.0;
    double sigma2_x = 1.0;
    double mu_beta0 = -1.0;
    double sigma2_beta0 = 0.01;
    double beta_x = std::log(1.5);
    double sigma2_e = 0.2;
    int pool_size_per_stratum = 20;
};

/// Adds an effect modifier V with (W, V, e) jointly normal, e independent of
/// (W, V), and Cov(W, V) chosen so that Corr(X, V) = corr_xv.
struct ScenarioInteraction : ScenarioMain {
    double mu_v = 0.0;
    double sigma2_v = 1.0;
    double corr_xv = 0.2;
    double beta_v = std::log(1.2);
    double beta_xv = std::log(1.2);
};

/// Throws InvalidScenario when the scenario cannot be generated.
void check_scenario(const ScenarioMain &scenario);
void check_scenario(const ScenarioInteraction &scenario);

/// Population parameters of one study.
struct StudyPopulation {
    double a = 0.0;
    double b = 1.0;
    double mu_w = 0.0;
    double sd_w = 1.0;
    double sd_e = 0.0;
    bool with_modifier = false;
    double mu_v = 0.0;
    double v_on_z1 = 0.0;   // loading of V on W's standard normal
    double v_resid_sd = 0.0; // remaining standard deviation of V
};

StudyPopulation population(const ScenarioMain &scenario, int study);
StudyPopulation population(const ScenarioInteraction &scenario, int study);

struct PopulationDraw {
    double x = 0.0;
    double w = 0.0;
    double v = 0.0;
    double e = 0.0;
};

/// Draws subjects from one study's population. The modifier uses its own
/// engine, so W, e, and later outcome draws are identical with and without a
/// modifier for a given seed.
class SubjectSampler {
public:
    SubjectSampler(const StudyPopulation &pop, std::uint64_t seed, std::uint64_t stream = 0);

    PopulationDraw draw();
    std::mt19937_64 &engine() { return main_; }

private:
    StudyPopulation pop_;
    std::mt19937_64 main_;
    std::mt19937_64 modifier_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::normal_distribution<double> modifier_normal_{0.0, 1.0};
};

/// Generated dataset plus the reference-lab values hidden from estimation.
/// hidden_x[s] lists X for every member of study s, strata in order, members
/// in order (case first).
struct SimulatedData {
    PooledDataset dataset;
    std::vector<std::vector<double>> hidden_x;
};

SimulatedData gen_main(const ScenarioMain &scenario, std::uint64_t seed);
SimulatedData gen_interaction(const ScenarioInteraction &scenario, std::uint64_t seed);

/// Seed of replicate r: the first output of mt19937_64 seeded with
/// seed_seq{seed low, seed high, r low, r high} (32-bit halves).
std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t replicate);

enum class SimMethod { Naive, Internalized, FullCalibration, TwoStage };

const char *to_string(SimMethod method);
const std::vector<SimMethod> &all_sim_methods();

struct MethodOutcome {
    bool ok = false;
    std::string error;
    Eigen::VectorXd coef;
    Eigen::VectorXd se;
};

struct ReplicateRecord {
    std::uint64_t index = 0;
    std::uint64_t seed = 0;
    std::vector<MethodOutcome> outcomes; // aligned with RunOptions::methods
};

struct CoefficientMetrics {
    std::string name;
    double truth = 0.0;
    double mean_percent_bias = 0.0;
    double empirical_se = 0.0; // SD of the estimates across replicates
    double mean_model_se = 0.0;
    double mse = 0.0;
    double coverage = 0.0;
};

struct MethodMetrics {
    SimMethod method = SimMethod::FullCalibration;
    std::vector<CoefficientMetrics> coefficients;
    std::size_t n_replicates = 0; // successful
    std::size_t n_failed = 0;
};

struct OperatingCharacteristics {
    std::vector<std::string> names;
    Eigen::VectorXd truth;
    std::vector<MethodMetrics> methods;
    std::vector<std::string> warnings;

    const MethodMetrics &of(SimMethod method) const;
};

struct RunOptions {
    std::vector<SimMethod> methods = all_sim_methods();
    int replicates = 1000;
    std::uint64_t seed = 1;
    unsigned threads = 0; // 0: hardware concurrency
    CalibrationCovariance calib_cov = CalibrationCovariance::Full;
};

struct SimulationResult {
    std::vector<SimMethod> methods;
    OperatingCharacteristics metrics;
    std::vector<ReplicateRecord> records;
};

/// Percent bias (b - truth)/truth * 100, MSE mean((b - truth)^2), Wald 95%
/// coverage with 1.96, over successful replicates only.
OperatingCharacteristics summarize(const std::vector<SimMethod> &methods,
                                   const std::vector<std::string> &names,
                                   const Eigen::VectorXd &truth,
                                   const std::vector<ReplicateRecord> &records);

SimulationResult run_replicates(const ScenarioMain &scenario, const RunOptions &options);
SimulationResult run_replicates(const ScenarioInteraction &scenario, const RunOptions &options);

/// Runs every method on one generated dataset.
std::vector<MethodOutcome> run_methods(const PooledDataset &dataset,
                                       const std::vector<SimMethod> &methods,
                                       CalibrationCovariance calib_cov);

struct Fig1Config {
    double a = 3.0;
    double b = 0.8;
    std::vector<double> rr_grid{1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5};
    int replicates = 1000;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    ScenarioMain base = fig1_base();

    static ScenarioMain fig1_base();
};

/// Mean percent bias of the calibration intercept and slope at one RR, fit
/// (i) by controls only and (ii) over all matched subjects, cases included.
struct Fig1Point {
    double rr = 1.0;
    double controls_intercept_bias = 0.0;
    double controls_slope_bias = 0.0;
    double pooled_intercept_bias = 0.0;
    double pooled_slope_bias = 0.0;
    double controls_intercept_se = 0.0; // Monte Carlo SE of the mean percent bias
    double controls_slope_se = 0.0;
    double pooled_intercept_se = 0.0;
    double pooled_slope_se = 0.0;
    int replicates = 0;
};

std::vector<Fig1Point> fig1_experiment(const Fig1Config &config);

struct Fig2Config {
    std::vector<int> n_cal_grid{30, 50, 150};
    int replicates = 1000;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    ScenarioMain base = fig2_base();

    static ScenarioMain fig2_base();
};

struct Fig2Point {
    int n_cal = 0;
    OperatingCharacteristics metrics;
};

std::vector<Fig2Point> fig2_experiment(const Fig2Config &config);

} // namespace ccpool
