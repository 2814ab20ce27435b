#include "ccpool/calib.hpp"
#include "ccpool/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ccpool {

CalibrationFit fit_calibration(std::span<const CalibrationPair> pairs, std::string study_id) {
    const std::size_t n = pairs.size();
    if (n < 3)
        throw Error(ErrorCode::InsufficientData,
                    fmt::format("calibration for study '{}' needs at least 3 pairs, got {}",
                                study_id, n));

    // Centered sums keep the normal equations well conditioned on raw assay scales.
    double w_mean = 0.0, x_mean = 0.0;
    for (const auto &p : pairs) {
        w_mean += p.w;
        x_mean += p.x;
    }
    w_mean /= static_cast<double>(n);
    x_mean /= static_cast<double>(n);

    double sww = 0.0, swx = 0.0;
    for (const auto &p : pairs) {
        sww += (p.w - w_mean) * (p.w - w_mean);
        swx += (p.w - w_mean) * (p.x - x_mean);
    }
    if (!(sww > 0.0) || sww <= 1e-14 * (1.0 + w_mean * w_mean) * static_cast<double>(n))
        throw Error(ErrorCode::SingularDesign,
                    fmt::format("calibration for study '{}': local measurements have no variance",
                                study_id));

    CalibrationFit fit;
    fit.study_id = std::move(study_id);
    fit.n_cal = n;
    fit.b_hat = swx / sww;
    fit.a_hat = x_mean - fit.b_hat * w_mean;
    if (!std::isfinite(fit.b_hat) || std::abs(fit.b_hat) < kMinAbsSlope)
        throw Error(ErrorCode::DivisionDegeneracy,
                    fmt::format("calibration slope for study '{}' is zero", fit.study_id));

    double rss = 0.0;
    for (const auto &p : pairs) {
        const double r = p.x - fit.predict(p.w);
        rss += r * r;
    }
    fit.resid_var = rss / static_cast<double>(n - 2);

    // resid_var * (X'X)^-1 written in centered form.
    const double nn = static_cast<double>(n);
    fit.cov(1, 1) = fit.resid_var / sww;
    fit.cov(0, 1) = fit.cov(1, 0) = -w_mean * fit.resid_var / sww;
    fit.cov(0, 0) = fit.resid_var * (1.0 / nn + w_mean * w_mean / sww);
    return fit;
}

std::vector<CalibrationPair> calibration_pairs(const Study &study) {
    std::vector<CalibrationPair> pairs;
    auto take = [&](const Subject &m) {
        if (m.in_calibration_subset && m.local_w && m.ref_x)
            pairs.push_back({*m.local_w, *m.ref_x});
    };
    for (const auto &stratum : study.strata)
        for (const auto &m : stratum.members)
            take(m);
    for (const auto &m : study.calibration_only)
        take(m);
    return pairs;
}

CalibrationFit with_parameters(CalibrationFit fit, double a_hat, double b_hat) {
    fit.a_hat = a_hat;
    fit.b_hat = b_hat;
    return fit;
}

ExposureSource calibrated_source(const Subject &subject, CalibrationRule rule) {
    if (rule == CalibrationRule::Internalized && subject.ref_x)
        return ExposureSource::Reference;
    return ExposureSource::Calibrated;
}

std::optional<double> calibrated_value(const Subject &subject, const CalibrationFit &fit,
                                       CalibrationRule rule) {
    if (calibrated_source(subject, rule) == ExposureSource::Reference)
        return subject.ref_x;
    if (!subject.local_w)
        return std::nullopt;
    return fit.predict(*subject.local_w);
}

namespace {

std::vector<CalibratedExposure> apply_rule(const Study &study, const CalibrationFit &fit,
                                           CalibrationRule rule) {
    if (study.lab_kind != LabKind::Local)
        throw Error(ErrorCode::Precondition,
                    fmt::format("study '{}' uses the reference laboratory; calibration does not "
                                "apply",
                                study.study_id));
    std::vector<CalibratedExposure> out;
    for (const auto &stratum : study.strata) {
        for (const auto &m : stratum.members) {
            const auto value = calibrated_value(m, fit, rule);
            if (!value)
                throw Error(ErrorCode::MissingExposure,
                            fmt::format("subject '{}' in study '{}' has no local_w", m.subject_id,
                                        study.study_id));
            out.push_back({m.subject_id, *value, calibrated_source(m, rule)});
        }
    }
    return out;
}

} // namespace

std::vector<CalibratedExposure> apply_full_calibration(const Study &study,
                                                       const CalibrationFit &fit) {
    return apply_rule(study, fit, CalibrationRule::FullCalibration);
}

std::vector<CalibratedExposure> apply_internalized(const Study &study, const CalibrationFit &fit) {
    return apply_rule(study, fit, CalibrationRule::Internalized);
}

std::vector<CalibratedExposure> apply_reference(const Study &study) {
    if (study.lab_kind != LabKind::Reference)
        throw Error(ErrorCode::Precondition,
                    fmt::format("study '{}' is not a reference-lab study", study.study_id));
    std::vector<CalibratedExposure> out;
    for (const auto &stratum : study.strata) {
        for (const auto &m : stratum.members) {
            if (!m.ref_x)
                throw Error(ErrorCode::MissingExposure,
                            fmt::format("subject '{}' in study '{}' has no ref_x", m.subject_id,
                                        study.study_id));
            out.push_back({m.subject_id, *m.ref_x, ExposureSource::Reference});
        }
    }
    return out;
}

ExposureAccessor calibrated_accessor(const CalibrationFit &fit, CalibrationRule rule) {
    return [fit, rule](const Subject &m) { return calibrated_value(m, fit, rule); };
}

Eigen::MatrixXd full_calibration_differences(const Stratum &stratum, const CalibrationFit &fit,
                                             const DesignSpec &design) {
    Eigen::MatrixXd rows = stratum_differences(stratum, local_exposure, design);
    if (design.include_interaction)
        rows.col(2) = fit.a_hat * rows.col(1) + fit.b_hat * rows.col(2);
    rows.col(0) *= fit.b_hat;
    return rows;
}

} // namespace ccpool
