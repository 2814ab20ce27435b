#include "ccpool/twostage.hpp"
#include "ccpool/clogit.hpp"
#include "ccpool/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ccpool {

Eigen::Index StudyEstimate::index_of(const std::string &name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
        if (names[k] == name)
            return static_cast<Eigen::Index>(k);
    return -1;
}

namespace {

void require_slope(const CalibrationFit &fit, const std::string &study_id) {
    if (!std::isfinite(fit.b_hat) || std::abs(fit.b_hat) < kMinAbsSlope)
        throw Error(ErrorCode::DivisionDegeneracy,
                    fmt::format("calibration slope for study '{}' is too close to zero", study_id));
}

Eigen::Index require_index(const StudyEstimate &est, const char *name) {
    const Eigen::Index k = est.index_of(name);
    if (k < 0)
        throw Error(ErrorCode::Precondition,
                    fmt::format("study '{}' estimate has no '{}' coefficient", est.study_id, name));
    return k;
}

void require_shapes(const StudyEstimate &est) {
    const auto p = static_cast<Eigen::Index>(est.names.size());
    if (est.coef.size() != p || est.cov.rows() != p || est.cov.cols() != p)
        throw Error(ErrorCode::Precondition,
                    fmt::format("study '{}' estimate has inconsistent dimensions", est.study_id));
}

} // namespace

StudyEstimate adjust_main(const StudyEstimate &naive, const CalibrationFit &fit) {
    require_shapes(naive);
    require_slope(fit, naive.study_id);
    const Eigen::Index x = require_index(naive, "exposure");
    const Eigen::Index p = naive.coef.size();
    const double b = fit.b_hat;

    // Delta method on (beta*, b), independent blocks.
    Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(p, p + 1);
    jac(x, x) = 1.0 / b;
    jac(x, p) = -naive.coef(x) / (b * b);
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(p + 1, p + 1);
    sigma.topLeftCorner(p, p) = naive.cov;
    sigma(p, p) = fit.cov(1, 1);

    StudyEstimate out = naive;
    out.coef(x) = naive.coef(x) / b;
    out.cov = jac * sigma * jac.transpose();
    out.adjusted = true;
    return out;
}

StudyEstimate adjust_interaction(const StudyEstimate &naive, const CalibrationFit &fit,
                                 CalibrationCovariance calib_cov) {
    require_shapes(naive);
    if (naive.index_of("interaction") < 0)
        return adjust_main(naive, fit);
    require_slope(fit, naive.study_id);
    const Eigen::Index x = require_index(naive, "exposure");
    const Eigen::Index v = require_index(naive, "modifier");
    const Eigen::Index xv = require_index(naive, "interaction");
    const Eigen::Index p = naive.coef.size();
    const Eigen::Index ia = p, ib = p + 1;
    const double a = fit.a_hat, b = fit.b_hat;
    const double bw = naive.coef(x), bwv = naive.coef(xv);

    Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(p, p + 2);
    jac(x, x) = 1.0 / b;
    jac(x, ib) = -bw / (b * b);
    jac(v, xv) = -a / b;
    jac(v, ia) = -bwv / b;
    jac(v, ib) = a * bwv / (b * b);
    jac(xv, xv) = 1.0 / b;
    jac(xv, ib) = -bwv / (b * b);

    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(p + 2, p + 2);
    sigma.topLeftCorner(p, p) = naive.cov;
    sigma.bottomRightCorner(2, 2) = fit.cov;
    if (calib_cov == CalibrationCovariance::VarianceOnly)
        sigma(ia, ib) = sigma(ib, ia) = 0.0;

    StudyEstimate out = naive;
    out.coef(x) = bw / b;
    out.coef(v) = naive.coef(v) - a * bwv / b;
    out.coef(xv) = bwv / b;
    out.cov = jac * sigma * jac.transpose();
    out.adjusted = true;
    return out;
}

MetaResult meta_fixed(const std::vector<StudyEstimate> &estimates) {
    if (estimates.empty())
        throw Error(ErrorCode::Precondition, "meta-analysis needs at least one study estimate");
    MetaResult out;
    out.names = estimates.front().names;
    const auto p = static_cast<Eigen::Index>(out.names.size());
    const auto n = static_cast<Eigen::Index>(estimates.size());
    for (const auto &e : estimates) {
        require_shapes(e);
        if (e.names != out.names)
            throw Error(ErrorCode::Precondition,
                        fmt::format("study '{}' has different coefficient names", e.study_id));
        out.study_ids.push_back(e.study_id);
    }

    out.coef.resize(p);
    out.se.resize(p);
    out.q_statistic.resize(p);
    out.weights.resize(p, n);
    for (Eigen::Index c = 0; c < p; ++c) {
        double total = 0.0, weighted = 0.0;
        for (Eigen::Index s = 0; s < n; ++s) {
            const auto &e = estimates[static_cast<std::size_t>(s)];
            const double var = e.cov(c, c);
            if (!(var > 0.0) || !std::isfinite(var))
                throw Error(ErrorCode::DomainError,
                            fmt::format("study '{}' has non-positive variance for '{}'",
                                        e.study_id, out.names[static_cast<std::size_t>(c)]));
            out.weights(c, s) = 1.0 / var;
            total += 1.0 / var;
            weighted += e.coef(c) / var;
        }
        out.coef(c) = weighted / total;
        out.se(c) = std::sqrt(1.0 / total);
        double q = 0.0;
        for (Eigen::Index s = 0; s < n; ++s) {
            const double d = estimates[static_cast<std::size_t>(s)].coef(c) - out.coef(c);
            q += out.weights(c, s) * d * d;
        }
        out.q_statistic(c) = q;
        out.weights.row(c) /= total;
    }
    return out;
}

StudyEstimate fit_study(const Study &study, const DesignSpec &design) {
    const ExposureAccessor accessor =
        study.lab_kind == LabKind::Reference ? ExposureAccessor(reference_exposure)
                                             : ExposureAccessor(local_exposure);
    std::size_t n_cov = 0;
    for (const auto &stratum : study.strata)
        if (!stratum.members.empty()) {
            n_cov = stratum.members.front().covariates.size();
            break;
        }

    ClogitProblem problem(design.n_columns(n_cov));
    for (const auto &stratum : study.strata)
        if (stratum.n_controls() > 0)
            problem.add_stratum(stratum_differences(stratum, accessor, design));

    const ClogitFit f = fit(problem);
    if (!f.converged)
        throw Error(ErrorCode::NonConvergence,
                    fmt::format("study '{}' first-stage fit did not converge{}", study.study_id,
                                f.separation_suspected ? " (separation suspected)" : ""));

    StudyEstimate out;
    out.study_id = study.study_id;
    out.names = design.column_names(n_cov);
    out.coef = f.beta;
    out.cov = f.info.ldlt().solve(Eigen::MatrixXd::Identity(f.beta.size(), f.beta.size()));
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    return out;
}

std::vector<StudyEstimate> first_stage(const PooledDataset &dataset, const DesignSpec &design,
                                       CalibrationCovariance calib_cov) {
    std::vector<StudyEstimate> out;
    for (const auto &study : dataset.studies) {
        StudyEstimate est = fit_study(study, design);
        if (study.lab_kind == LabKind::Local) {
            const auto pairs = calibration_pairs(study);
            const CalibrationFit cal = fit_calibration(pairs, study.study_id);
            est = design.include_interaction ? adjust_interaction(est, cal, calib_cov)
                                             : adjust_main(est, cal);
        }
        out.push_back(std::move(est));
    }
    return out;
}

MetaResult estimate_twostage(const PooledDataset &dataset, const DesignSpec &design,
                             CalibrationCovariance calib_cov) {
    const auto report = validate(dataset);
    if (!is_ready(report)) {
        for (const auto &v : report)
            if (v.severity == Severity::Error)
                throw Error(ErrorCode::InvalidDataset,
                            "dataset failed validation: " + describe(v));
    }
    return meta_fixed(first_stage(dataset, design, calib_cov));
}

} // namespace ccpool
