#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppiv/core.hpp"

namespace ppiv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double expit(double x)
{
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// log(1 + exp(x)) without overflow.
inline double log1pexp(double x)
{
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

class RankDeficiencyError : public Error {
public:
    RankDeficiencyError(std::size_t column, const std::string& name)
        : Error("design matrix is rank deficient: column " + std::to_string(column) +
                (name.empty() ? std::string() : " ('" + name + "')") +
                " is linearly dependent on the preceding columns"),
          column_(column)
    {
    }
    /// Same column, message prefixed with `context`.
    RankDeficiencyError(const RankDeficiencyError& inner, const std::string& context)
        : Error(context + ": " + inner.what()), column_(inner.column_)
    {
    }
    [[nodiscard]] std::size_t column() const { return column_; }

private:
    std::size_t column_;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, VectorXd last_iterate)
        : Error(what), last_(std::move(last_iterate))
    {
    }
    [[nodiscard]] const VectorXd& last_iterate() const { return last_; }

private:
    VectorXd last_;
};

struct OlsFit {
    VectorXd coef;
    MatrixXd coef_cov;  // sigma^2 (X'X)^-1
    VectorXd residuals;
    double rss = 0.0;
    int df_resid = 0;

    [[nodiscard]] double sigma2() const { return rss / df_resid; }
    [[nodiscard]] double se(Eigen::Index k) const { return std::sqrt(coef_cov(k, k)); }
};

namespace detail {

// Index of the first column that lies (numerically) in the span of the
// columns before it, or -1.
inline Eigen::Index first_dependent_column(const MatrixXd& design, double tol)
{
    const Eigen::Index k = design.cols();
    MatrixXd basis(design.rows(), 0);
    for (Eigen::Index j = 0; j < k; ++j) {
        VectorXd v = design.col(j);
        const double norm0 = v.norm();
        if (norm0 == 0.0) return j;
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index b = 0; b < basis.cols(); ++b) v -= basis.col(b).dot(v) * basis.col(b);
        }
        const double norm1 = v.norm();
        if (norm1 <= tol * norm0) return j;
        basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
        basis.col(basis.cols() - 1) = v / norm1;
    }
    return -1;
}

} // namespace detail

/// Least squares via column-pivoted QR. Throws RankDeficiencyError naming the
/// first column that depends on earlier ones.
inline OlsFit fit_ols(const MatrixXd& design, const VectorXd& y, std::span<const std::string> column_names = {})
{
    const Eigen::Index n = design.rows();
    const Eigen::Index k = design.cols();
    if (y.size() != n) {
        throw DimensionError("fit_ols: design has " + std::to_string(n) + " rows but y has " + std::to_string(y.size()));
    }
    if (k == 0 || n <= k) {
        throw DimensionError("fit_ols: need more rows than columns (rows=" + std::to_string(n) +
                             ", cols=" + std::to_string(k) + ")");
    }
    constexpr double rank_tol = 1e-10;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
    qr.setThreshold(rank_tol);
    if (qr.rank() < k) {
        Eigen::Index bad = detail::first_dependent_column(design, 1e-8);
        if (bad < 0) bad = qr.colsPermutation().indices()(qr.rank());
        const auto col = static_cast<std::size_t>(bad);
        throw RankDeficiencyError(col, col < column_names.size() ? column_names[col] : std::string());
    }

    OlsFit fit;
    fit.coef = qr.solve(y);
    fit.residuals = y - design * fit.coef;
    fit.rss = fit.residuals.squaredNorm();
    fit.df_resid = static_cast<int>(n - k);

    // (X'X)^-1 = P R^-1 R^-T P'
    const MatrixXd r = qr.matrixR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
    const MatrixXd r_inv = r.template triangularView<Eigen::Upper>().solve(MatrixXd::Identity(k, k));
    const MatrixXd xtx_inv_perm = r_inv * r_inv.transpose();
    const auto& perm = qr.colsPermutation();
    fit.coef_cov = perm * xtx_inv_perm * perm.transpose();
    fit.coef_cov = 0.5 * (fit.coef_cov + fit.coef_cov.transpose()).eval();
    fit.coef_cov *= fit.sigma2();
    return fit;
}

/// Partial F statistic for dropping q columns from `full` to get `restricted`.
inline double partial_f(const OlsFit& full, const OlsFit& restricted, int q)
{
    if (q < 1) throw PreconditionError("partial_f: q must be >= 1");
    const double tol = 1e-9 * std::max(1.0, restricted.rss);
    if (restricted.rss < full.rss - tol) {
        throw PreconditionError("partial_f: restricted model has smaller RSS than the full model; not nested");
    }
    if (full.rss <= 0.0) return std::numeric_limits<double>::infinity();
    const double f = ((restricted.rss - full.rss) / q) / (full.rss / full.df_resid);
    return std::max(0.0, f);
}

struct LogisticOptions {
    int max_iter = 50;
    double tol = 1e-8;               // on max |score|
    double separation_bound = 15.0;  // max |coef| before the fit is flagged as separated
};

struct LogisticFit {
    VectorXd coef;
    double loglik = 0.0;
    double deviance = 0.0;
    double max_abs_score = 0.0;
    bool converged = false;
    bool separated = false;
    int n_iter = 0;
    std::vector<double> deviance_trace;  // after each accepted iteration
};

namespace detail {

inline double bernoulli_loglik(const VectorXd& eta, const VectorXd& y)
{
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - log1pexp(eta(i));
    return ll;
}

} // namespace detail

/// Logistic regression by Newton-Raphson / IRLS with step halving, so the
/// deviance never increases between accepted iterations.
///
/// Perfect or quasi separation is not an error: once any |coef| exceeds
/// `separation_bound` the current iterate is returned with `separated` set.
inline LogisticFit fit_logistic(const MatrixXd& design, const VectorXd& y, const LogisticOptions& opt = {},
                                const VectorXd* start = nullptr)
{
    const Eigen::Index n = design.rows();
    const Eigen::Index k = design.cols();
    if (y.size() != n) throw DimensionError("fit_logistic: design/response size mismatch");
    if (n <= k) throw DimensionError("fit_logistic: need more rows than columns");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (y(i) != 0.0 && y(i) != 1.0) throw PreconditionError("fit_logistic: response must be binary");
    }

    LogisticFit fit;
    fit.coef = (start && start->size() == k) ? *start : VectorXd::Zero(k);
    VectorXd eta = design * fit.coef;
    double ll = detail::bernoulli_loglik(eta, y);
    VectorXd mu(n), w(n);

    for (int iter = 1; iter <= opt.max_iter; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i) {
            mu(i) = expit(eta(i));
            w(i) = mu(i) * (1.0 - mu(i));
        }
        const VectorXd score = design.transpose() * (y - mu);
        fit.max_abs_score = score.cwiseAbs().maxCoeff();
        if (fit.max_abs_score <= opt.tol) {
            fit.converged = true;
            break;
        }
        fit.n_iter = iter;
        const MatrixXd info = design.transpose() * w.asDiagonal() * design;
        Eigen::LDLT<MatrixXd> ldlt(info);
        VectorXd step = ldlt.solve(score);
        if (ldlt.info() != Eigen::Success || !step.allFinite()) {
            // Singular information (all fitted probabilities at 0/1): fall back to a gradient step.
            step = score / std::max(1.0, score.norm());
        }

        double t = 1.0;
        VectorXd next;
        VectorXd next_eta;
        double next_ll = -std::numeric_limits<double>::infinity();
        for (int half = 0; half < 40; ++half) {
            next = fit.coef + t * step;
            next_eta = design * next;
            next_ll = detail::bernoulli_loglik(next_eta, y);
            if (next_ll >= ll - 1e-12 * std::abs(ll)) break;
            t *= 0.5;
        }
        if (!(next_ll >= ll - 1e-12 * std::abs(ll))) {
            // No ascent direction left at machine precision.
            fit.converged = fit.max_abs_score <= std::sqrt(opt.tol);
            break;
        }
        fit.coef = next;
        eta = next_eta;
        ll = next_ll;
        fit.deviance_trace.push_back(-2.0 * ll);

        if (fit.coef.cwiseAbs().maxCoeff() > opt.separation_bound) {
            fit.separated = true;
            for (Eigen::Index i = 0; i < n; ++i) mu(i) = expit(eta(i));
            fit.max_abs_score = (design.transpose() * (y - mu)).cwiseAbs().maxCoeff();
            break;
        }
    }
    if (!fit.converged && !fit.separated) {
        for (Eigen::Index i = 0; i < n; ++i) mu(i) = expit(eta(i));
        fit.max_abs_score = (design.transpose() * (y - mu)).cwiseAbs().maxCoeff();
        if (fit.max_abs_score <= opt.tol) fit.converged = true;
    }
    fit.loglik = ll;
    fit.deviance = -2.0 * ll;
    if (!fit.converged && !fit.separated) {
        throw ConvergenceError("fit_logistic: no convergence after " + std::to_string(opt.max_iter) +
                                   " iterations (max |score| = " + std::to_string(fit.max_abs_score) + ")",
                               fit.coef);
    }
    return fit;
}

} // namespace ppiv
