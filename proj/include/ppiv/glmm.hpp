#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppiv/numerics.hpp"

namespace ppiv {

enum class RandomEffects { intercept, intercept_and_slope };

struct GlmmSpec {
    RandomEffects effects = RandomEffects::intercept;
    /// Column of the fixed-effects design carrying the random slope variable
    /// (only used with intercept_and_slope).
    Eigen::Index slope_column = -1;

    [[nodiscard]] int n_random() const { return effects == RandomEffects::intercept ? 1 : 2; }
};

struct GlmmOptions {
    int max_iter = 300;
    double gtol = 1e-5;          // max |gradient| of the Laplace log-likelihood
    double boundary = 1e-8;      // variance below this is reported as a boundary fit
    double min_log_sd = -20.0;   // floor for log-Cholesky diagonal entries
};

struct GlmmFit {
    VectorXd fixed_coef;
    MatrixXd var_components;  // q x q covariance of the random effects
    MatrixXd ranef;           // J x q posterior modes (intercept, then slope)
    VectorXd params;          // optimizer scale: fixed coefs then log-Cholesky entries
    double laplace_loglik = 0.0;
    double max_abs_gradient = 0.0;
    int n_iter = 0;
    bool converged = false;
    bool boundary = false;
    bool identifiable = true;
    std::vector<std::string> warnings;
};

/// Laplace-approximated marginal log-likelihood of a logistic model with
/// cluster-level Gaussian random effects b_j = L u_j, u_j ~ N(0, I).
///
/// Parameters are packed as [fixed coefficients, theta], where theta holds
/// the lower-triangular Cholesky factor L of the random-effect covariance on
/// log scale for the diagonal: q = 1 -> [log L00]; q = 2 -> [log L00, L10, log L11].
///
/// Evaluations cache the per-cluster modes and warm-start from them, so the
/// object is stateful but every evaluation solves the inner problem to full
/// precision.
class LaplaceObjective {
public:
    LaplaceObjective(const MatrixXd& design, std::span<const int> cluster, int n_clusters, const GlmmSpec& spec,
                     const VectorXd& y)
        : spec_(spec), q_(spec.n_random()), n_clusters_(n_clusters)
    {
        const Eigen::Index n = design.rows();
        if (static_cast<Eigen::Index>(cluster.size()) != n || y.size() != n) {
            throw DimensionError("LaplaceObjective: design, cluster and y lengths differ");
        }
        if (q_ == 2 && (spec.slope_column < 0 || spec.slope_column >= design.cols())) {
            throw PreconditionError("LaplaceObjective: random slope needs a valid slope_column");
        }
        // Regroup rows so each cluster is contiguous.
        std::vector<int> count(static_cast<std::size_t>(n_clusters), 0);
        for (int c : cluster) {
            if (c < 0 || c >= n_clusters) throw PreconditionError("LaplaceObjective: cluster id out of range");
            ++count[static_cast<std::size_t>(c)];
        }
        offset_.assign(static_cast<std::size_t>(n_clusters) + 1, 0);
        for (int j = 0; j < n_clusters; ++j) offset_[j + 1] = offset_[j] + count[j];
        std::vector<int> fill(offset_.begin(), offset_.end() - 1);
        order_.resize(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) order_[fill[cluster[i]]++] = static_cast<int>(i);

        x_.resize(n, design.cols());
        y_.resize(n);
        t_.setZero(n);
        for (Eigen::Index r = 0; r < n; ++r) {
            x_.row(r) = design.row(order_[r]);
            y_(r) = y(order_[r]);
            if (q_ == 2) t_(r) = design(order_[r], spec.slope_column);
        }
        modes_.setZero(n_clusters, q_);
    }

    [[nodiscard]] int n_fixed() const { return static_cast<int>(x_.cols()); }
    [[nodiscard]] int n_theta() const { return q_ == 1 ? 1 : 3; }
    [[nodiscard]] int n_params() const { return n_fixed() + n_theta(); }
    [[nodiscard]] int n_random() const { return q_; }
    [[nodiscard]] int n_clusters() const { return n_clusters_; }
    [[nodiscard]] const MatrixXd& modes() const { return modes_; }
    [[nodiscard]] int cluster_size(int j) const { return offset_[j + 1] - offset_[j]; }
    [[nodiscard]] const MatrixXd& grouped_design() const { return x_; }
    [[nodiscard]] const VectorXd& grouped_slope() const { return t_; }

    [[nodiscard]] MatrixXd cholesky_factor(const VectorXd& params) const
    {
        const int p = n_fixed();
        MatrixXd l = MatrixXd::Zero(q_, q_);
        l(0, 0) = std::exp(params(p));
        if (q_ == 2) {
            l(1, 0) = params(p + 1);
            l(1, 1) = std::exp(params(p + 2));
        }
        return l;
    }

    double value(const VectorXd& params) { return evaluate(params, nullptr); }
    double value_and_gradient(const VectorXd& params, VectorXd& grad)
    {
        grad.setZero(n_params());
        return evaluate(params, &grad);
    }

    /// Drops cached modes so the next evaluation starts from u = 0.
    void reset_modes() { modes_.setZero(); }

private:
    template <int Q>
    double evaluate_q(const VectorXd& params, VectorXd* grad)
    {
        using VecQ = Eigen::Matrix<double, Q, 1>;
        using MatQ = Eigen::Matrix<double, Q, Q>;
        using MatQP = Eigen::Matrix<double, Q, Eigen::Dynamic>;

        const int p = n_fixed();
        const VectorXd beta = params.head(p);
        const MatrixXd lfull = cholesky_factor(params);
        const MatQ l = lfull;
        const VectorXd eta0 = x_ * beta;

        double total = 0.0;
        VectorXd grad_beta = VectorXd::Zero(p);
        MatQ grad_l = MatQ::Zero();

        auto a_of = [&](Eigen::Index r) -> VecQ {
            VecQ z;
            z(0) = 1.0;
            if constexpr (Q == 2) z(1) = t_(r);
            return l.transpose() * z;
        };
        auto z_of = [&](Eigen::Index r) -> VecQ {
            VecQ z;
            z(0) = 1.0;
            if constexpr (Q == 2) z(1) = t_(r);
            return z;
        };

        for (int j = 0; j < n_clusters_; ++j) {
            const int lo = offset_[j];
            const int hi = offset_[j + 1];
            VecQ u = modes_.row(j).transpose();

            // Objective, gradient and Hessian of the cluster's posterior at uu.
            auto pass = [&](const VecQ& uu, double& g, VecQ& gu, MatQ& h) {
                g = -0.5 * uu.squaredNorm();
                gu = -uu;
                h.setIdentity();
                for (int r = lo; r < hi; ++r) {
                    const VecQ a = a_of(r);
                    const double eta = eta0(r) + a.dot(uu);
                    const double mu = expit(eta);
                    g += y_(r) * eta - log1pexp(eta);
                    gu += (y_(r) - mu) * a;
                    h.noalias() += mu * (1.0 - mu) * a * a.transpose();
                }
            };

            // Inner Newton with step halving for the posterior mode of u.
            double g_cur;
            VecQ gu;
            MatQ h;
            pass(u, g_cur, gu, h);
            for (int it = 0; it < 100 && gu.cwiseAbs().maxCoeff() >= 1e-10; ++it) {
                const VecQ step = h.ldlt().solve(gu);
                double t = 1.0;
                VecQ next;
                double g_next;
                VecQ gu_next;
                MatQ h_next;
                bool moved = false;
                for (int half = 0; half < 50; ++half) {
                    next = u + t * step;
                    pass(next, g_next, gu_next, h_next);
                    if (g_next >= g_cur - 1e-14 * std::abs(g_cur)) {
                        moved = true;
                        break;
                    }
                    t *= 0.5;
                }
                if (!moved || (next - u).cwiseAbs().maxCoeff() < 1e-15) break;
                u = next;
                g_cur = g_next;
                gu = gu_next;
                h = h_next;
            }
            modes_.row(j) = u.transpose();

            Eigen::LLT<MatQ> llt(h);
            const MatQ lh = llt.matrixL();
            double logdet = 0.0;
            for (int d = 0; d < Q; ++d) logdet += 2.0 * std::log(lh(d, d));
            total += g_cur - 0.5 * logdet;

            if (!grad) continue;

            const MatQ hinv = llt.solve(MatQ::Identity());
            MatQP g_ubeta = MatQP::Zero(Q, p);  // d(grad_u)/d beta
            VecQ s_a = VecQ::Zero();            // sum w' h_i a_i
            VecQ res_z = VecQ::Zero();          // sum r_i z_i
            VecQ wph_z = VecQ::Zero();          // sum w' h_i z_i
            MatQ w_z_a = MatQ::Zero();          // row r: sum w_i z_ir a_i'
            MatQ w_z_c = MatQ::Zero();          // (r, s): sum w_i z_ir c_is
            for (int row = lo; row < hi; ++row) {
                const VecQ a = a_of(row);
                const VecQ z = z_of(row);
                const double mu = expit(eta0(row) + a.dot(u));
                const double w = mu * (1.0 - mu);
                const double wp = w * (1.0 - 2.0 * mu);
                const double res = y_(row) - mu;
                const VecQ c = hinv * a;
                const double lev = a.dot(c);
                const auto xr = x_.row(row);

                grad_beta.noalias() += res * xr.transpose() - 0.5 * wp * lev * xr.transpose();
                g_ubeta.noalias() -= w * a * xr;
                s_a += wp * lev * a;
                res_z += res * z;
                wph_z += wp * lev * z;
                w_z_a.noalias() += w * z * a.transpose();
                w_z_c.noalias() += w * z * c.transpose();
            }
            // Implicit dependence of the mode on beta.
            const MatQP du_beta = hinv * g_ubeta;
            grad_beta.noalias() -= 0.5 * du_beta.transpose() * s_a;

            for (int rr = 0; rr < Q; ++rr) {
                for (int ss = 0; ss <= rr; ++ss) {
                    VecQ g_ul = -u(ss) * w_z_a.row(rr).transpose();
                    g_ul(ss) += res_z(rr);
                    const VecQ du = hinv * g_ul;
                    grad_l(rr, ss) += u(ss) * res_z(rr) -
                                      0.5 * (u(ss) * wph_z(rr) + s_a.dot(du) + 2.0 * w_z_c(rr, ss));
                }
            }
        }

        if (grad) {
            grad->head(p) = grad_beta;
            (*grad)(p) = grad_l(0, 0) * l(0, 0);
            if constexpr (Q == 2) {
                (*grad)(p + 1) = grad_l(1, 0);
                (*grad)(p + 2) = grad_l(1, 1) * l(1, 1);
            }
        }
        return total;
    }

    double evaluate(const VectorXd& params, VectorXd* grad)
    {
        if (params.size() != n_params()) throw DimensionError("LaplaceObjective: wrong parameter count");
        return q_ == 1 ? evaluate_q<1>(params, grad) : evaluate_q<2>(params, grad);
    }

    GlmmSpec spec_;
    int q_;
    int n_clusters_;
    std::vector<int> offset_;
    std::vector<int> order_;
    MatrixXd x_;
    VectorXd y_;
    VectorXd t_;
    MatrixXd modes_;
};

namespace detail {

inline bool glmm_identifiable(const LaplaceObjective& obj)
{
    const VectorXd& t = obj.grouped_slope();
    int lo = 0;
    for (int j = 0; j < obj.n_clusters(); ++j) {
        const int hi = lo + obj.cluster_size(j);
        if (obj.n_random() == 1 && hi - lo >= 2) return true;
        // A random slope needs some cluster with two distinct slope values.
        for (int r = lo + 1; obj.n_random() == 2 && r < hi; ++r) {
            if (t(r) != t(lo)) return true;
        }
        lo = hi;
    }
    return false;
}

} // namespace detail

/// Fits a random-intercept (optionally random-slope) logistic mixed model by
/// maximizing the Laplace approximation with BFGS on the analytic gradient.
///
/// `cluster` holds ids in [0, J). Fixed effects must include the intercept
/// column explicitly.
inline GlmmFit fit_glmm_logistic(const MatrixXd& design, std::span<const int> cluster, const GlmmSpec& spec,
                                 const VectorXd& y, const GlmmOptions& opt = {})
{
    int n_clusters = 0;
    for (int c : cluster) n_clusters = std::max(n_clusters, c + 1);
    if (n_clusters < 2) throw PreconditionError("fit_glmm_logistic: need at least 2 clusters");

    LaplaceObjective obj(design, cluster, n_clusters, spec, y);
    const int p = obj.n_fixed();
    const int q = obj.n_random();
    const int np = obj.n_params();

    LogisticOptions lopt;
    lopt.max_iter = 100;
    const LogisticFit start = fit_logistic(design, y, lopt);

    GlmmFit fit;
    if (!detail::glmm_identifiable(obj)) {
        fit.fixed_coef = start.coef;
        fit.var_components = MatrixXd::Zero(q, q);
        fit.ranef = MatrixXd::Zero(n_clusters, q);
        fit.params = VectorXd::Constant(np, opt.min_log_sd);
        fit.params.head(p) = start.coef;
        if (q == 2) fit.params(p + 1) = 0.0;
        fit.laplace_loglik = start.loglik;
        fit.converged = true;
        fit.boundary = true;
        fit.identifiable = false;
        fit.warnings.emplace_back("random-effect variance not identifiable from this design; returning the "
                                  "ordinary logistic fit with zero variance");
        return fit;
    }

    VectorXd x(np);
    x.head(p) = start.coef;
    x(p) = std::log(0.5);
    if (q == 2) {
        x(p + 1) = 0.0;
        x(p + 2) = std::log(0.05);
    }

    // Inverse-Hessian seed: Fisher information for the fixed part.
    MatrixXd hinv = MatrixXd::Zero(np, np);
    {
        const MatrixXd& xd = obj.grouped_design();
        VectorXd w(xd.rows());
        const VectorXd eta = xd * start.coef;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double m = expit(eta(i));
            w(i) = std::max(m * (1.0 - m), 1e-6);
        }
        const MatrixXd info = xd.transpose() * w.asDiagonal() * xd;
        hinv.topLeftCorner(p, p) = info.ldlt().solve(MatrixXd::Identity(p, p));
        for (int k = p; k < np; ++k) hinv(k, k) = 1.0 / n_clusters;
    }

    auto is_log_diag = [&](int k) { return k == p || (q == 2 && k == p + 2); };
    auto project = [&](VectorXd& v) {
        for (int k = p; k < np; ++k) {
            if (is_log_diag(k)) v(k) = std::clamp(v(k), opt.min_log_sd, 5.0);
        }
    };
    // Gradient with components pinned at the floor zeroed when they push outward.
    auto projected = [&](const VectorXd& v, const VectorXd& g) {
        VectorXd pg = g;
        for (int k = p; k < np; ++k) {
            if (is_log_diag(k) && v(k) <= opt.min_log_sd + 1e-12 && g(k) < 0) pg(k) = 0.0;
        }
        return pg;
    };

    VectorXd grad(np);
    double ll = obj.value_and_gradient(x, grad);
    int iter = 0;
    bool converged = false;
    bool fresh_metric = false;
    for (; iter < opt.max_iter; ++iter) {
        const VectorXd pg = projected(x, grad);
        if (pg.cwiseAbs().maxCoeff() <= opt.gtol) {
            converged = true;
            break;
        }
        // Minimizing f = -ll, gradient -grad.
        VectorXd dir = hinv * grad;
        if (dir.dot(grad) <= 0) {
            hinv = MatrixXd::Identity(np, np) * (1.0 / std::max(1.0, grad.norm()));
            dir = hinv * grad;
        }
        double t = 1.0;
        VectorXd xn;
        VectorXd gn(np);
        double lln = -std::numeric_limits<double>::infinity();
        bool accepted = false;
        const double slope = grad.dot(dir);
        for (int half = 0; half < 40; ++half) {
            xn = x + t * dir;
            project(xn);
            lln = obj.value_and_gradient(xn, gn);
            if (std::isfinite(lln) && lln >= ll + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted || lln < ll) {
            obj.value_and_gradient(x, grad);  // restore cached modes at x
            if (!fresh_metric) {
                hinv = MatrixXd::Identity(np, np) * (1.0 / std::max(1.0, grad.norm()));
                fresh_metric = true;
                continue;
            }
            // The inner-mode solve limits attainable precision on large data.
            const double stall_tol = std::max({opt.gtol, 1e-3, 1e-7 * std::abs(ll)});
            converged = projected(x, grad).cwiseAbs().maxCoeff() <= stall_tol;
            break;
        }
        fresh_metric = false;
        const VectorXd s = xn - x;
        const VectorXd yv = grad - gn;  // gradient change of f = -ll
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            const double rho = 1.0 / sy;
            const MatrixXd id = MatrixXd::Identity(np, np);
            hinv = (id - rho * s * yv.transpose()) * hinv * (id - rho * yv * s.transpose()) + rho * s * s.transpose();
        }
        const double gain = lln - ll;
        x = xn;
        grad = gn;
        ll = lln;
        if (gain >= 0 && gain <= 1e-14 * std::max(1.0, std::abs(ll)) &&
            projected(x, grad).cwiseAbs().maxCoeff() <= 1e-3) {
            converged = true;
            break;
        }
    }

    // Snap vanishing variance components onto the boundary when that does
    // not lower the likelihood.
    for (int k = p; k < np; ++k) {
        if (!is_log_diag(k) || x(k) <= opt.min_log_sd || x(k) > std::log(1e-2)) continue;
        VectorXd xb = x;
        xb(k) = opt.min_log_sd;
        VectorXd gb(np);
        const double llb = obj.value_and_gradient(xb, gb);
        if (llb >= ll - 1e-9 * std::max(1.0, std::abs(ll))) {
            x = xb;
            ll = llb;
            grad = gb;
        } else {
            obj.value_and_gradient(x, grad);
        }
    }

    fit.fixed_coef = x.head(p);
    const MatrixXd l = obj.cholesky_factor(x);
    fit.var_components = l * l.transpose();
    fit.ranef = obj.modes() * l.transpose();
    fit.params = x;
    fit.laplace_loglik = ll;
    fit.max_abs_gradient = projected(x, grad).cwiseAbs().maxCoeff();
    fit.n_iter = iter;
    fit.converged = converged;
    for (int d = 0; d < q; ++d) {
        if (fit.var_components(d, d) < opt.boundary) fit.boundary = true;
    }
    if (fit.boundary) {
        fit.warnings.emplace_back("random-effect variance at the boundary (< " + std::to_string(opt.boundary) +
                                  "); fit degrades to ordinary logistic regression for that component");
    }
    if (!converged) {
        throw ConvergenceError("fit_glmm_logistic: no convergence after " + std::to_string(iter) +
                                   " iterations (max |gradient| = " + std::to_string(fit.max_abs_gradient) + ")",
                               x);
    }
    return fit;
}

} // namespace ppiv
