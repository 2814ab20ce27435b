#pragma once

#include "ccpool/calib.hpp"
#include "ccpool/clogit.hpp"
#include "ccpool/datamodel.hpp"

#include <Eigen/Dense>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace ccpool {

enum class Method { Naive, Internalized, FullCalibration };

const char *to_string(Method method);

/// Pooled estimate from one conditional likelihood over all studies.
struct AggregatedEstimate {
    Method method = Method::FullCalibration;
    std::vector<std::string> names;
    Eigen::VectorXd beta;
    Eigen::MatrixXd sandwich_cov;
    Eigen::MatrixXd model_cov; // inverse observed information
    std::vector<CalibrationFit> calibration_fits;
    ClogitFit fit_meta;
    std::vector<std::string> warnings;

    double se(Eigen::Index k) const;
};

/// Stacked estimating equations for theta = (a_1..a_Q, b_1..b_Q, beta).
///
/// The independent unit is the matched stratum. A stratum's contribution
/// holds its conditional score plus the OLS normal-equation terms (r, r*w)
/// of any calibration-subset members it contains. Calibration-only subjects
/// form units of their own.
///
/// A = -d(sum psi)/d(theta). The meat B collects sum(psi psi') over units,
/// except for the beta block, which is the observed information of the
/// conditional likelihood.
struct StackedSystem {
    std::vector<std::string> calibrated_studies; // slot order of a and b
    Eigen::VectorXd theta;
    Eigen::MatrixXd units; // one row per independent unit
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;

    Eigen::Index n_calibration_parameters() const {
        return static_cast<Eigen::Index>(2 * calibrated_studies.size());
    }
};

/// Fits the calibration models (unless Naive) and returns them in study order.
std::vector<CalibrationFit> fit_all_calibrations(const PooledDataset &dataset, Method method);

/// Difference rows for every stratum with at least one control, with local-lab
/// exposures materialized per `method`.
ClogitProblem build_problem(const PooledDataset &dataset, Method method, const DesignSpec &design,
                            std::span<const CalibrationFit> fits);

AggregatedEstimate estimate(const PooledDataset &dataset, Method method, const DesignSpec &design);
AggregatedEstimate estimate(const PooledDataset &dataset, Method method);

/// Per-study method selection. All local-lab studies must share one method.
AggregatedEstimate estimate(const PooledDataset &dataset,
                            const std::map<std::string, Method> &per_study,
                            const DesignSpec &design);

StackedSystem build_stacked_system(const PooledDataset &dataset, const DesignSpec &design,
                                   std::span<const CalibrationFit> fits,
                                   const ClogitFit &clogit_fit, Method method);

/// Beta block of A^-1 B A^-T.
Eigen::MatrixXd stacked_sandwich(const PooledDataset &dataset, const DesignSpec &design,
                                 std::span<const CalibrationFit> fits,
                                 const ClogitFit &clogit_fit, Method method);

/// d(total score)/d(a_1..a_Q, b_1..b_Q), p x 2Q, by the chain rule through the
/// calibrated exposures.
Eigen::MatrixXd score_calibration_derivative(const PooledDataset &dataset,
                                             const DesignSpec &design,
                                             std::span<const CalibrationFit> fits,
                                             const Eigen::VectorXd &beta, Method method);

/// Central-difference version of score_calibration_derivative. The step for
/// each parameter is rel_step * max(1, |parameter|).
Eigen::MatrixXd score_calibration_derivative_numeric(const PooledDataset &dataset,
                                                     const DesignSpec &design,
                                                     std::span<const CalibrationFit> fits,
                                                     const Eigen::VectorXd &beta, Method method,
                                                     double rel_step = 1e-5);

} // namespace ccpool
