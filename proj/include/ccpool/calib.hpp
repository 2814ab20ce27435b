#pragma once

#include "ccpool/datamodel.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace ccpool {

struct CalibrationPair {
    double w = 0.0; // local laboratory
    double x = 0.0; // reference laboratory
};

/// Controls-only linear calibration x = a + b*w for one local-lab study.
struct CalibrationFit {
    std::string study_id;
    double a_hat = 0.0;
    double b_hat = 1.0;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero(); // (a_hat, b_hat)
    double resid_var = 0.0;                        // RSS / (n - 2)
    std::size_t n_cal = 0;

    double predict(double w) const { return a_hat + b_hat * w; }
};

enum class ExposureSource { Reference, Calibrated };

struct CalibratedExposure {
    std::string subject_id;
    double x_tilde = 0.0;
    ExposureSource source = ExposureSource::Calibrated;
};

/// How a local-lab study's exposures are materialized for estimation.
enum class CalibrationRule { FullCalibration, Internalized };

inline constexpr double kMinAbsSlope = 1e-8;

/// Ordinary least squares of x on w with the model-based covariance
/// resid_var * (X'X)^-1.
CalibrationFit fit_calibration(std::span<const CalibrationPair> pairs, std::string study_id = {});

/// Calibration-subset pairs of a study, strata first, then calibration-only subjects.
std::vector<CalibrationPair> calibration_pairs(const Study &study);

/// Reassembles a fit from explicit parameters, e.g. for perturbation studies.
CalibrationFit with_parameters(CalibrationFit fit, double a_hat, double b_hat);

// Per-subject calibrated value under a rule. Returns nullopt when the value
// needed by the rule is absent.
std::optional<double> calibrated_value(const Subject &subject, const CalibrationFit &fit,
                                       CalibrationRule rule);
ExposureSource calibrated_source(const Subject &subject, CalibrationRule rule);

std::vector<CalibratedExposure> apply_full_calibration(const Study &study,
                                                       const CalibrationFit &fit);
std::vector<CalibratedExposure> apply_internalized(const Study &study, const CalibrationFit &fit);

/// Reference-lab studies carry ref_x through unchanged.
std::vector<CalibratedExposure> apply_reference(const Study &study);

ExposureAccessor calibrated_accessor(const CalibrationFit &fit, CalibrationRule rule);

/// Full-calibration difference rows built from local differences: the
/// exposure column is b_hat * (W_i - W_case), so the intercept cancels exactly.
/// With an interaction the product column is a_hat * dV + b_hat * d(WV).
Eigen::MatrixXd full_calibration_differences(const Stratum &stratum, const CalibrationFit &fit,
                                             const DesignSpec &design);

} // namespace ccpool
