#include "ccpool/aggregate.hpp"
#include "ccpool/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ccpool {

const char *to_string(Method method) {
    switch (method) {
    case Method::Naive:
        return "Naive";
    case Method::Internalized:
        return "Internalized";
    case Method::FullCalibration:
        return "FullCalibration";
    }
    return "?";
}

double AggregatedEstimate::se(Eigen::Index k) const { return std::sqrt(sandwich_cov(k, k)); }

namespace {

bool calibrates(Method method) { return method != Method::Naive; }

const CalibrationFit &fit_for(std::span<const CalibrationFit> fits, const std::string &study_id) {
    for (const auto &f : fits)
        if (f.study_id == study_id)
            return f;
    throw Error(ErrorCode::Precondition,
                fmt::format("no calibration fit supplied for study '{}'", study_id));
}

Eigen::MatrixXd method_rows(const Study &study, const Stratum &stratum, Method method,
                            const DesignSpec &design, std::span<const CalibrationFit> fits) {
    if (study.lab_kind == LabKind::Reference)
        return stratum_differences(stratum, reference_exposure, design);
    switch (method) {
    case Method::Naive:
        return stratum_differences(stratum, local_exposure, design);
    case Method::FullCalibration:
        return full_calibration_differences(stratum, fit_for(fits, study.study_id), design);
    case Method::Internalized:
        return stratum_differences(
            stratum, calibrated_accessor(fit_for(fits, study.study_id), CalibrationRule::Internalized),
            design);
    }
    throw Error(ErrorCode::Precondition, "unknown method");
}

// Local studies that carry calibration parameters, in slot order.
std::vector<const Study *> calibrated_studies(const PooledDataset &dataset, Method method) {
    std::vector<const Study *> out;
    if (!calibrates(method))
        return out;
    for (const auto &s : dataset.studies)
        if (s.lab_kind == LabKind::Local)
            out.push_back(&s);
    return out;
}

int slot_of(const std::vector<const Study *> &slots, const Study &study) {
    for (std::size_t q = 0; q < slots.size(); ++q)
        if (slots[q] == &study)
            return static_cast<int>(q);
    return -1;
}

Eigen::Index problem_dimension(const PooledDataset &dataset, const DesignSpec &design) {
    return design.n_columns(dataset.covariate_dimension());
}

// d(x_tilde)/d(a) and d(x_tilde)/d(b) of one subject.
std::pair<double, double> exposure_sensitivity(const Subject &m, Method method) {
    const auto rule = method == Method::Internalized ? CalibrationRule::Internalized
                                                     : CalibrationRule::FullCalibration;
    if (calibrated_source(m, rule) == ExposureSource::Reference)
        return {0.0, 0.0};
    return {1.0, m.local_w.value_or(0.0)};
}

// d(row)/d(x_tilde): the exposure column and, with an interaction, V in the product column.
Eigen::VectorXd row_gradient(const Subject &m, Eigen::Index p, const DesignSpec &design) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
    g(0) = 1.0;
    if (design.include_interaction)
        g(2) = m.effect_modifier.value_or(0.0);
    return g;
}

void check_ready(const PooledDataset &dataset) {
    const auto report = validate(dataset);
    if (is_ready(report))
        return;
    std::string msg = "dataset failed validation:";
    int shown = 0;
    for (const auto &v : report) {
        if (v.severity != Severity::Error)
            continue;
        if (shown++ == 5) {
            msg += "\n  ...";
            break;
        }
        msg += "\n  " + describe(v);
    }
    throw Error(ErrorCode::InvalidDataset, msg);
}

} // namespace

std::vector<CalibrationFit> fit_all_calibrations(const PooledDataset &dataset, Method method) {
    std::vector<CalibrationFit> fits;
    for (const Study *s : calibrated_studies(dataset, method)) {
        const auto pairs = calibration_pairs(*s);
        fits.push_back(fit_calibration(pairs, s->study_id));
    }
    return fits;
}

ClogitProblem build_problem(const PooledDataset &dataset, Method method, const DesignSpec &design,
                            std::span<const CalibrationFit> fits) {
    ClogitProblem problem(problem_dimension(dataset, design));
    for (const auto &study : dataset.studies)
        for (const auto &stratum : study.strata)
            if (stratum.n_controls() > 0)
                problem.add_stratum(method_rows(study, stratum, method, design, fits));
    return problem;
}

Eigen::MatrixXd score_calibration_derivative(const PooledDataset &dataset,
                                             const DesignSpec &design,
                                             std::span<const CalibrationFit> fits,
                                             const Eigen::VectorXd &beta, Method method) {
    const auto slots = calibrated_studies(dataset, method);
    const Eigen::Index q_count = static_cast<Eigen::Index>(slots.size());
    const Eigen::Index p = problem_dimension(dataset, design);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p, 2 * q_count);

    Eigen::VectorXd eta, pi, s, dd_a(p), dd_b(p), term(p);
    for (Eigen::Index q = 0; q < q_count; ++q) {
        const Study &study = *slots[static_cast<std::size_t>(q)];
        for (const auto &stratum : study.strata) {
            if (stratum.n_controls() == 0)
                continue;
            const Eigen::MatrixXd rows = method_rows(study, stratum, method, design, fits);
            eta.noalias() = rows * beta;
            const double top = std::max(0.0, eta.maxCoeff());
            const double lse = top + std::log(std::exp(-top) + (eta.array() - top).exp().sum());
            pi = (eta.array() - lse).exp().matrix();
            s.noalias() = rows.transpose() * pi;

            const Subject &index_case = *stratum.find_case();
            const auto [ca_case, cb_case] = exposure_sensitivity(index_case, method);
            const Eigen::VectorXd g_case = row_gradient(index_case, p, design);

            Eigen::Index i = 0;
            for (const auto &m : stratum.members) {
                if (m.is_case)
                    continue;
                const auto [ca, cb] = exposure_sensitivity(m, method);
                const Eigen::VectorXd g = row_gradient(m, p, design);
                dd_a = g * ca - g_case * ca_case;
                dd_b = g * cb - g_case * cb_case;
                const Eigen::VectorXd centered = rows.row(i).transpose() - s;
                // dU/dc = -sum_i pi_i (I + (d_i - s) beta') dd_i/dc
                term = dd_a + centered * beta.dot(dd_a);
                out.col(q) -= pi(i) * term;
                term = dd_b + centered * beta.dot(dd_b);
                out.col(q_count + q) -= pi(i) * term;
                ++i;
            }
        }
    }
    return out;
}

Eigen::MatrixXd score_calibration_derivative_numeric(const PooledDataset &dataset,
                                                     const DesignSpec &design,
                                                     std::span<const CalibrationFit> fits,
                                                     const Eigen::VectorXd &beta, Method method,
                                                     double rel_step) {
    const auto slots = calibrated_studies(dataset, method);
    const Eigen::Index q_count = static_cast<Eigen::Index>(slots.size());
    const Eigen::Index p = problem_dimension(dataset, design);
    Eigen::MatrixXd out(p, 2 * q_count);
    std::vector<CalibrationFit> work(fits.begin(), fits.end());

    for (Eigen::Index q = 0; q < q_count; ++q) {
        const std::string &id = slots[static_cast<std::size_t>(q)]->study_id;
        std::size_t k = 0;
        while (k < work.size() && work[k].study_id != id)
            ++k;
        if (k == work.size())
            throw Error(ErrorCode::Precondition,
                        fmt::format("no calibration fit supplied for study '{}'", id));
        for (int which = 0; which < 2; ++which) {
            double &param = which == 0 ? work[k].a_hat : work[k].b_hat;
            const double saved = param;
            const double h = rel_step * std::max(1.0, std::abs(saved));
            param = saved + h;
            const Eigen::VectorXd up = score(build_problem(dataset, method, design, work), beta);
            param = saved - h;
            const Eigen::VectorXd down = score(build_problem(dataset, method, design, work), beta);
            param = saved;
            out.col(which * q_count + q) = (up - down) / (2.0 * h);
        }
    }
    return out;
}

StackedSystem build_stacked_system(const PooledDataset &dataset, const DesignSpec &design,
                                   std::span<const CalibrationFit> fits,
                                   const ClogitFit &clogit_fit, Method method) {
    const auto slots = calibrated_studies(dataset, method);
    const Eigen::Index q_count = static_cast<Eigen::Index>(slots.size());
    const Eigen::Index p = problem_dimension(dataset, design);
    const Eigen::Index dim = 2 * q_count + p;
    const Eigen::VectorXd &beta = clogit_fit.beta;
    if (beta.size() != p)
        throw Error(ErrorCode::Precondition, "clogit fit dimension does not match the design");

    StackedSystem sys;
    sys.theta.resize(dim);
    for (Eigen::Index q = 0; q < q_count; ++q) {
        const auto &f = fit_for(fits, slots[static_cast<std::size_t>(q)]->study_id);
        sys.calibrated_studies.push_back(f.study_id);
        sys.theta(q) = f.a_hat;
        sys.theta(q_count + q) = f.b_hat;
    }
    sys.theta.tail(p) = beta;

    // Units: strata with controls, then calibration-only subjects of calibrated studies.
    std::size_t n_units = 0;
    for (const auto &study : dataset.studies) {
        for (const auto &stratum : study.strata)
            n_units += stratum.n_controls() > 0 ? 1 : 0;
        if (slot_of(slots, study) >= 0)
            n_units += study.calibration_only.size();
    }
    sys.units = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_units), dim);
    sys.A = Eigen::MatrixXd::Zero(dim, dim);

    const ClogitProblem problem = build_problem(dataset, method, design, fits);
    const ClogitEvaluation at_beta = evaluate(problem, beta);
    const Eigen::MatrixXd scores = stratum_scores(problem, beta);

    auto add_calibration_term = [&](Eigen::Index unit, int q, const CalibrationFit &f,
                                    const Subject &m) {
        if (!m.in_calibration_subset || !m.local_w || !m.ref_x)
            return;
        const double w = *m.local_w;
        const double r = *m.ref_x - f.predict(w);
        sys.units(unit, q) += r;
        sys.units(unit, q_count + q) += r * w;
        sys.A(q, q) += 1.0;
        sys.A(q, q_count + q) += w;
        sys.A(q_count + q, q) += w;
        sys.A(q_count + q, q_count + q) += w * w;
    };

    Eigen::Index unit = 0;
    std::size_t j = 0;
    for (const auto &study : dataset.studies) {
        const int q = slot_of(slots, study);
        const CalibrationFit *f = q >= 0 ? &fit_for(fits, study.study_id) : nullptr;
        for (const auto &stratum : study.strata) {
            if (stratum.n_controls() == 0)
                continue;
            sys.units.row(unit).tail(p) = scores.row(static_cast<Eigen::Index>(j++));
            if (f)
                for (const auto &m : stratum.members)
                    add_calibration_term(unit, q, *f, m);
            ++unit;
        }
        if (f)
            for (const auto &m : study.calibration_only)
                add_calibration_term(unit++, q, *f, m);
    }

    for (Eigen::Index q = 0; q < q_count; ++q) {
        Eigen::Matrix2d block;
        block << sys.A(q, q), sys.A(q, q_count + q), sys.A(q_count + q, q),
            sys.A(q_count + q, q_count + q);
        const double det = block.determinant();
        if (!(det > 1e-12 * block.squaredNorm()))
            throw Error(ErrorCode::SingularDesign,
                        fmt::format("stacked system is singular in the calibration block of study "
                                    "'{}' (calibration subset too small or constant)",
                                    sys.calibrated_studies[static_cast<std::size_t>(q)]));
    }

    if (q_count > 0)
        sys.A.bottomLeftCorner(p, 2 * q_count) =
            -score_calibration_derivative(dataset, design, fits, beta, method);
    sys.A.bottomRightCorner(p, p) = at_beta.info;

    sys.B = sys.units.transpose() * sys.units;
    sys.B.bottomRightCorner(p, p) = at_beta.info;
    return sys;
}

Eigen::MatrixXd stacked_sandwich(const PooledDataset &dataset, const DesignSpec &design,
                                 std::span<const CalibrationFit> fits,
                                 const ClogitFit &clogit_fit, Method method) {
    if (!clogit_fit.converged)
        throw Error(ErrorCode::Precondition, "sandwich variance needs a converged clogit fit");
    const StackedSystem sys = build_stacked_system(dataset, design, fits, clogit_fit, method);
    const Eigen::Index p = clogit_fit.beta.size();
    const Eigen::Index c = sys.n_calibration_parameters();

    const Eigen::MatrixXd info = sys.A.bottomRightCorner(p, p);
    Eigen::LDLT<Eigen::MatrixXd> info_solver(info);
    if (info_solver.info() != Eigen::Success || inverse_condition(info) < 1e-14)
        throw Error(ErrorCode::SingularInformation, "information matrix is singular at beta-hat");
    Eigen::MatrixXd info_inv = info_solver.solve(Eigen::MatrixXd::Identity(p, p));
    info_inv = 0.5 * (info_inv + info_inv.transpose()).eval();
    if (c == 0)
        return info_inv;

    // A is block lower-triangular, so the beta block of A^-1 B A^-T is
    //   I^-1 + I^-1 (G Bcc G' - G Bcb - Bbc G') I^-1,  G = A_bc A_cc^-1.
    const Eigen::MatrixXd a_cc = sys.A.topLeftCorner(c, c);
    const Eigen::MatrixXd a_bc = sys.A.bottomLeftCorner(p, c);
    const Eigen::MatrixXd g = a_cc.transpose().partialPivLu().solve(a_bc.transpose()).transpose();
    const Eigen::MatrixXd b_cc = sys.B.topLeftCorner(c, c);
    const Eigen::MatrixXd b_bc = sys.B.bottomLeftCorner(p, c);
    const Eigen::MatrixXd cross = g * b_bc.transpose();
    const Eigen::MatrixXd middle = g * b_cc * g.transpose() - cross - cross.transpose();
    Eigen::MatrixXd v = info_inv + info_inv * middle * info_inv;
    return 0.5 * (v + v.transpose());
}

AggregatedEstimate estimate(const PooledDataset &dataset, Method method, const DesignSpec &design) {
    check_ready(dataset);

    AggregatedEstimate out;
    out.method = method;
    out.names = design.column_names(dataset.covariate_dimension());
    for (const auto &study : dataset.studies)
        for (const auto &stratum : study.strata)
            if (stratum.n_controls() == 0)
                out.warnings.push_back(fmt::format(
                    "stratum '{}' in study '{}' has no controls; dropped", stratum.stratum_id,
                    study.study_id));

    out.calibration_fits = fit_all_calibrations(dataset, method);
    const ClogitProblem problem = build_problem(dataset, method, design, out.calibration_fits);
    out.fit_meta = fit(problem);
    if (!out.fit_meta.converged)
        throw Error(ErrorCode::NonConvergence,
                    fmt::format("{} fit did not converge after {} iterations{}", to_string(method),
                                out.fit_meta.iterations,
                                out.fit_meta.separation_suspected ? " (separation suspected)" : ""));
    out.beta = out.fit_meta.beta;
    out.model_cov = out.fit_meta.info.ldlt().solve(
        Eigen::MatrixXd::Identity(out.beta.size(), out.beta.size()));
    out.sandwich_cov =
        stacked_sandwich(dataset, design, out.calibration_fits, out.fit_meta, method);
    return out;
}

AggregatedEstimate estimate(const PooledDataset &dataset, Method method) {
    return estimate(dataset, method, dataset.design);
}

AggregatedEstimate estimate(const PooledDataset &dataset,
                            const std::map<std::string, Method> &per_study,
                            const DesignSpec &design) {
    std::optional<Method> chosen;
    for (const auto &study : dataset.studies) {
        if (study.lab_kind != LabKind::Local)
            continue;
        const auto it = per_study.find(study.study_id);
        if (it == per_study.end())
            throw Error(ErrorCode::Precondition,
                        fmt::format("no method selected for study '{}'", study.study_id));
        if (chosen && *chosen != it->second)
            throw Error(ErrorCode::Precondition,
                        "one method must be applied uniformly to every local-lab study");
        chosen = it->second;
    }
    return estimate(dataset, chosen.value_or(Method::FullCalibration), design);
}

} // namespace ccpool
