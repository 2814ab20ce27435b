#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace ccpool {

/// Difference rows (control minus case) grouped by matched stratum. Rows are
/// stored contiguously in row-major order.
class ClogitProblem {
public:
    using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using ConstBlock = Eigen::Map<const RowMajorMatrix>;

    explicit ClogitProblem(Eigen::Index dimension);

    /// Appends one stratum; `rows` must be non-empty with `dimension()` columns
    /// and finite entries.
    void add_stratum(const Eigen::Ref<const Eigen::MatrixXd> &rows);

    Eigen::Index dimension() const noexcept { return p_; }
    std::size_t n_strata() const noexcept { return offsets_.size() - 1; }
    Eigen::Index n_rows() const noexcept { return offsets_.back(); }

    ConstBlock stratum(std::size_t j) const;
    ConstBlock all_rows() const;

    /// Root-mean-square of each column; used to put coefficients on a common scale.
    Eigen::VectorXd column_scale() const;

private:
    Eigen::Index p_;
    std::vector<double> data_;
    std::vector<Eigen::Index> offsets_{0};
};

struct ClogitFit {
    Eigen::VectorXd beta;
    Eigen::MatrixXd info; // observed information at beta
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
    bool separation_suspected = false;
};

struct ClogitOptions {
    Eigen::VectorXd init; // empty means zero
    double grad_tol = 1e-8;
    int max_iter = 50;
    int step_halving_max = 20;
    // Separation heuristics: |beta| on the standardized scale, and the
    // information condition number.
    double max_standardized_beta = 50.0;
    double max_condition = 1e12;
};

double loglik(const ClogitProblem &problem, const Eigen::VectorXd &beta);
Eigen::VectorXd score(const ClogitProblem &problem, const Eigen::VectorXd &beta);
Eigen::MatrixXd information(const ClogitProblem &problem, const Eigen::VectorXd &beta);

/// Score contribution of every stratum, one row per stratum.
Eigen::MatrixXd stratum_scores(const ClogitProblem &problem, const Eigen::VectorXd &beta);

/// Conditional probabilities of each control row within stratum j at beta; the
/// case carries the remaining mass 1 - sum.
Eigen::VectorXd stratum_weights(const ClogitProblem &problem, std::size_t j,
                                const Eigen::VectorXd &beta);

struct ClogitEvaluation {
    double loglik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd info;
};

ClogitEvaluation evaluate(const ClogitProblem &problem, const Eigen::VectorXd &beta,
                          bool with_information = true);

/// Newton-Raphson with step halving. Throws on a singular information matrix
/// at the starting point; separation or iteration exhaustion is reported
/// through `converged` and `separation_suspected`.
ClogitFit fit(const ClogitProblem &problem, const ClogitOptions &options = {});

/// Ratio of smallest to largest eigenvalue of a symmetric matrix (0 if the
/// largest is not positive).
double inverse_condition(const Eigen::MatrixXd &symmetric);

} // namespace ccpool
