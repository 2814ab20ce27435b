#pragma once

#include "ccpool/calib.hpp"
#include "ccpool/datamodel.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace ccpool {

/// Coefficients of one study's conditional logistic fit, named by role
/// ("exposure", "modifier", "interaction", then covariate names).
struct StudyEstimate {
    std::string study_id;
    std::vector<std::string> names;
    Eigen::VectorXd coef;
    Eigen::MatrixXd cov;
    bool adjusted = false;

    Eigen::Index index_of(const std::string &name) const; // -1 if absent
};

struct MetaResult {
    std::vector<std::string> names;
    Eigen::VectorXd coef;
    Eigen::VectorXd se;
    Eigen::MatrixXd weights; // coefficient x study, rows sum to one
    Eigen::VectorXd q_statistic;
    std::vector<std::string> study_ids;
};

/// Whether the delta method for the interaction adjustment uses the full
/// (a, b) covariance or only its diagonal.
enum class CalibrationCovariance { Full, VarianceOnly };

/// Regression-calibration correction of the exposure coefficient:
///   beta_x = beta_w / b,  Var = Var(beta_w)/b^2 + beta_w^2 Var(b)/b^4.
/// Other coefficients pass through; their covariances with the exposure are
/// scaled by 1/b.
StudyEstimate adjust_main(const StudyEstimate &naive, const CalibrationFit &fit);

/// Correction for an exposure-by-modifier model:
///   beta_x = beta_w/b,  beta_v = beta_v* - a beta_wv/b,  beta_xv = beta_wv/b,
/// with delta-method covariance treating the naive coefficients and (a, b)
/// as independent blocks.
StudyEstimate adjust_interaction(const StudyEstimate &naive, const CalibrationFit &fit,
                                 CalibrationCovariance calib_cov = CalibrationCovariance::Full);

/// Inverse-variance fixed-effects pooling, coefficient by coefficient.
MetaResult meta_fixed(const std::vector<StudyEstimate> &estimates);

/// Conditional logistic fit of one study on its own measurements: ref_x for
/// reference-lab studies, local_w otherwise.
StudyEstimate fit_study(const Study &study, const DesignSpec &design);

/// First stage: per-study fits, calibrated when the study used a local lab.
std::vector<StudyEstimate> first_stage(const PooledDataset &dataset, const DesignSpec &design,
                                       CalibrationCovariance calib_cov = CalibrationCovariance::Full);

MetaResult estimate_twostage(const PooledDataset &dataset, const DesignSpec &design,
                             CalibrationCovariance calib_cov = CalibrationCovariance::Full);

} // namespace ccpool
