#include "ccpool/clogit.hpp"
#include "ccpool/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace ccpool {

ClogitProblem::ClogitProblem(Eigen::Index dimension) : p_(dimension) {
    if (dimension < 1)
        throw Error(ErrorCode::Precondition, "clogit problem needs at least one coefficient");
}

void ClogitProblem::add_stratum(const Eigen::Ref<const Eigen::MatrixXd> &rows) {
    if (rows.rows() == 0)
        throw Error(ErrorCode::Precondition, "clogit stratum block is empty");
    if (rows.cols() != p_)
        throw Error(ErrorCode::Precondition,
                    fmt::format("clogit stratum has {} columns, expected {}", rows.cols(), p_));
    if (!rows.allFinite())
        throw Error(ErrorCode::DomainError, "clogit stratum contains non-finite values");
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        for (Eigen::Index c = 0; c < p_; ++c)
            data_.push_back(rows(i, c));
    offsets_.push_back(offsets_.back() + rows.rows());
}

ClogitProblem::ConstBlock ClogitProblem::stratum(std::size_t j) const {
    const Eigen::Index begin = offsets_[j];
    return ConstBlock(data_.data() + begin * p_, offsets_[j + 1] - begin, p_);
}

ClogitProblem::ConstBlock ClogitProblem::all_rows() const {
    return ConstBlock(data_.data(), n_rows(), p_);
}

Eigen::VectorXd ClogitProblem::column_scale() const {
    if (n_rows() == 0)
        return Eigen::VectorXd::Ones(p_);
    const auto rows = all_rows();
    return (rows.array().square().colwise().sum() / static_cast<double>(n_rows()))
        .sqrt()
        .transpose();
}

namespace {

void require_finite(const ClogitProblem &problem, const Eigen::VectorXd &beta) {
    if (beta.size() != problem.dimension())
        throw Error(ErrorCode::Precondition,
                    fmt::format("coefficient vector has length {}, expected {}", beta.size(),
                                problem.dimension()));
    if (!beta.allFinite())
        throw Error(ErrorCode::DomainError, "coefficient vector contains non-finite values");
}

// log(1 + sum exp(eta)) with the case's zero linear predictor included in the max.
double log_normalizer(const Eigen::VectorXd &eta) {
    const double top = std::max(0.0, eta.maxCoeff());
    return top + std::log(std::exp(-top) + (eta.array() - top).exp().sum());
}

} // namespace

ClogitEvaluation evaluate(const ClogitProblem &problem, const Eigen::VectorXd &beta,
                          bool with_information) {
    require_finite(problem, beta);
    const Eigen::Index p = problem.dimension();
    ClogitEvaluation out;
    out.score = Eigen::VectorXd::Zero(p);
    if (with_information)
        out.info = Eigen::MatrixXd::Zero(p, p);

    Eigen::VectorXd eta, pi, s(p);
    for (std::size_t j = 0; j < problem.n_strata(); ++j) {
        const auto rows = problem.stratum(j);
        eta.noalias() = rows * beta;
        const double lse = log_normalizer(eta);
        out.loglik -= lse;
        pi = (eta.array() - lse).exp().matrix();
        s.noalias() = rows.transpose() * pi;
        out.score -= s;
        if (with_information) {
            out.info.noalias() += rows.transpose() * pi.asDiagonal() * rows;
            out.info.noalias() -= s * s.transpose();
        }
    }
    if (with_information)
        out.info = 0.5 * (out.info + out.info.transpose()).eval();
    return out;
}

double loglik(const ClogitProblem &problem, const Eigen::VectorXd &beta) {
    require_finite(problem, beta);
    double total = 0.0;
    Eigen::VectorXd eta;
    for (std::size_t j = 0; j < problem.n_strata(); ++j) {
        eta.noalias() = problem.stratum(j) * beta;
        total -= log_normalizer(eta);
    }
    return total;
}

Eigen::VectorXd score(const ClogitProblem &problem, const Eigen::VectorXd &beta) {
    return evaluate(problem, beta, false).score;
}

Eigen::MatrixXd information(const ClogitProblem &problem, const Eigen::VectorXd &beta) {
    return evaluate(problem, beta, true).info;
}

Eigen::VectorXd stratum_weights(const ClogitProblem &problem, std::size_t j,
                                const Eigen::VectorXd &beta) {
    require_finite(problem, beta);
    const Eigen::VectorXd eta = problem.stratum(j) * beta;
    return (eta.array() - log_normalizer(eta)).exp().matrix();
}

Eigen::MatrixXd stratum_scores(const ClogitProblem &problem, const Eigen::VectorXd &beta) {
    require_finite(problem, beta);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(problem.n_strata()), problem.dimension());
    Eigen::VectorXd eta, pi;
    for (std::size_t j = 0; j < problem.n_strata(); ++j) {
        const auto rows = problem.stratum(j);
        eta.noalias() = rows * beta;
        pi = (eta.array() - log_normalizer(eta)).exp().matrix();
        out.row(static_cast<Eigen::Index>(j)).noalias() = -(rows.transpose() * pi).transpose();
    }
    return out;
}

double inverse_condition(const Eigen::MatrixXd &symmetric) {
    if (symmetric.size() == 0)
        return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetric, Eigen::EigenvaluesOnly);
    const double hi = eig.eigenvalues().maxCoeff();
    const double lo = eig.eigenvalues().minCoeff();
    if (!(hi > 0.0))
        return 0.0;
    return std::max(lo, 0.0) / hi;
}

ClogitFit fit(const ClogitProblem &problem, const ClogitOptions &options) {
    const Eigen::Index p = problem.dimension();
    if (problem.n_strata() == 0)
        throw Error(ErrorCode::InsufficientData, "clogit problem has no strata");

    ClogitFit out;
    out.beta = options.init.size() == 0 ? Eigen::VectorXd::Zero(p) : options.init;
    const Eigen::VectorXd scale = problem.column_scale();

    ClogitEvaluation current = evaluate(problem, out.beta);
    if (inverse_condition(current.info) < 1.0 / options.max_condition)
        throw Error(ErrorCode::SingularInformation,
                    "information matrix is singular: no exposure contrast or collinear columns");

    Eigen::LDLT<Eigen::MatrixXd> solver;
    for (;;) {
        solver.compute(current.info);
        const Eigen::VectorXd step = solver.solve(current.score);
        const bool small_score = current.score.cwiseAbs().maxCoeff() < options.grad_tol;
        const bool small_step =
            (step.cwiseProduct(scale)).cwiseAbs().maxCoeff() < 1e-6 || !step.allFinite();
        if (small_score && small_step) {
            out.converged = true;
            break;
        }
        if (out.iterations >= options.max_iter)
            break;

        double t = 1.0;
        Eigen::VectorXd trial;
        ClogitEvaluation next;
        bool accepted = false;
        for (int h = 0; h <= options.step_halving_max; ++h, t *= 0.5) {
            trial = out.beta + t * step;
            const double ll = loglik(problem, trial);
            if (std::isfinite(ll) && ll >= current.loglik - 1e-12 * std::abs(current.loglik)) {
                accepted = true;
                break;
            }
        }
        if (!accepted)
            break;

        out.beta = trial;
        ++out.iterations;
        current = evaluate(problem, out.beta);

        const double standardized = out.beta.cwiseProduct(scale).cwiseAbs().maxCoeff();
        if (standardized > options.max_standardized_beta ||
            inverse_condition(current.info) < 1.0 / options.max_condition) {
            out.separation_suspected = true;
            break;
        }
    }

    out.info = current.info;
    out.loglik = current.loglik;
    return out;
}

} // namespace ccpool
