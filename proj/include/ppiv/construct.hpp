#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppiv/core.hpp"
#include "ppiv/glmm.hpp"
#include "ppiv/numerics.hpp"

namespace ppiv {

namespace detail {

inline InstrumentSeries empty_series(const PanelDataset& data, MethodId method, InstrumentLevel level)
{
    InstrumentSeries s;
    s.method = method;
    s.level = level;
    s.values.resize(data.providers.size());
    for (std::size_t p = 0; p < data.providers.size(); ++p) s.values[p].assign(data.providers[p].size(), std::nullopt);
    return s;
}

inline double median_of(std::vector<double> v)
{
    if (v.empty()) throw PreconditionError("median of an empty set");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

/// Running mean of all earlier entries in [lo, hi); the first entry gets none.
inline void running_prev_mean(std::span<const int> x, std::size_t lo, std::size_t hi,
                              std::vector<std::optional<double>>& out)
{
    double sum = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        if (i > lo) out[i] = sum / static_cast<double>(i - lo);
        sum += x[i];
    }
}

inline std::vector<int> treatments(const Provider& prov)
{
    std::vector<int> x(prov.size());
    for (std::size_t i = 0; i < prov.size(); ++i) x[i] = prov.records[i].x;
    return x;
}

} // namespace detail

/// Proportion of treatment B among the previous b patients of the provider.
/// Absent for the first b patients.
inline InstrumentSeries z_prev_b(const PanelDataset& data, int b)
{
    auto out = detail::empty_series(data, MethodId::prev(b), InstrumentLevel::per_patient);
    const auto window = static_cast<std::size_t>(b);
    for (std::size_t p = 0; p < data.providers.size(); ++p) {
        const auto& recs = data.providers[p].records;
        int sum = 0;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (i >= window) {
                out.values[p][i] = static_cast<double>(sum) / b;
                sum -= recs[i - window].x;
            }
            sum += recs[i].x;
        }
    }
    return out;
}

/// Proportion of treatment B among all previous patients; absent for the first.
inline InstrumentSeries z_all_prev_prop(const PanelDataset& data)
{
    auto out = detail::empty_series(data, MethodId(MethodId::Kind::allprevprop), InstrumentLevel::per_patient);
    for (std::size_t p = 0; p < data.providers.size(); ++p) {
        const auto x = detail::treatments(data.providers[p]);
        detail::running_prev_mean(x, 0, x.size(), out.values[p]);
    }
    return out;
}

/// Provider-level proportion of treatment B, shared by all its patients.
inline InstrumentSeries z_all_prop(const PanelDataset& data)
{
    auto out = detail::empty_series(data, MethodId(MethodId::Kind::allprop), InstrumentLevel::per_provider);
    for (std::size_t p = 0; p < data.providers.size(); ++p) {
        const auto& recs = data.providers[p].records;
        if (recs.empty()) continue;
        double sum = 0.0;
        for (const auto& r : recs) sum += r.x;
        const double z = sum / static_cast<double>(recs.size());
        for (auto& v : out.values[p]) v = z;
    }
    return out;
}

enum class DichCenter { mean, median };

/// Dichotomized provider proportion: 0 if the proportion is <= the center
/// (mean or median over providers), 1 otherwise.
inline InstrumentSeries z_all_dich(const PanelDataset& data, DichCenter center)
{
    if (data.providers.size() < 2) throw PreconditionError("dichotomized instruments need at least 2 providers");
    const MethodId id(center == DichCenter::mean ? MethodId::Kind::alldichmean : MethodId::Kind::alldichmedian);
    auto out = detail::empty_series(data, id, InstrumentLevel::per_provider);
    std::vector<double> props;
    props.reserve(data.providers.size());
    for (const auto& prov : data.providers) {
        double sum = 0.0;
        for (const auto& r : prov.records) sum += r.x;
        props.push_back(sum / static_cast<double>(prov.size()));
    }
    const double c = center == DichCenter::mean
                         ? std::accumulate(props.begin(), props.end(), 0.0) / static_cast<double>(props.size())
                         : detail::median_of(props);
    const bool all_equal = std::all_of(props.begin(), props.end(), [&](double v) { return v == props.front(); });
    if (all_equal) out.warnings.emplace_back("all provider proportions are equal; instrument is constant 0");
    for (std::size_t p = 0; p < props.size(); ++p) {
        const double z = props[p] <= c ? 0.0 : 1.0;
        for (auto& v : out.values[p]) v = z;
    }
    return out;
}

struct ChangeDetectionOptions {
    double screen_threshold = 0.2;
    double aic_margin = 4.0;  // deviance + 2 per extra parameter (eta and i*)
    LogisticOptions logistic;
};

struct ModelConstructionOptions {
    GlmmOptions glmm;
    ChangeDetectionOptions change;
};

namespace detail {

struct CompleteCaseDesign {
    MatrixXd design;
    VectorXd x;
    std::vector<int> cluster;
    std::vector<int> provider_of_cluster;  // cluster id -> provider index
    std::vector<int> cluster_of_provider;  // provider index -> cluster id or -1
    std::vector<int> cluster_sizes;
};

// Rows with every covariate present; columns [1, (T), w_obs..., w_miss...].
inline CompleteCaseDesign complete_case_design(const PanelDataset& data, bool with_time)
{
    const std::size_t n_obs = data.schema.n_observed();
    const std::size_t n_miss = data.schema.n_partial();
    const std::size_t k = 1 + (with_time ? 1 : 0) + n_obs + n_miss;
    CompleteCaseDesign d;
    d.cluster_of_provider.assign(data.providers.size(), -1);
    std::size_t rows = 0;
    for (const auto& prov : data.providers)
        for (const auto& r : prov.records)
            if (r.covariates_complete()) ++rows;
    d.design.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
    d.x.resize(static_cast<Eigen::Index>(rows));
    d.cluster.reserve(rows);
    Eigen::Index row = 0;
    for (std::size_t p = 0; p < data.providers.size(); ++p) {
        int count = 0;
        for (const auto& r : data.providers[p].records) {
            if (!r.covariates_complete()) continue;
            if (count == 0) {
                d.cluster_of_provider[p] = static_cast<int>(d.provider_of_cluster.size());
                d.provider_of_cluster.push_back(static_cast<int>(p));
            }
            ++count;
            Eigen::Index c = 0;
            d.design(row, c++) = 1.0;
            if (with_time) d.design(row, c++) = r.time_index;
            for (double w : r.w_obs) d.design(row, c++) = w;
            for (const auto& w : r.w_miss) d.design(row, c++) = *w;
            d.x(row) = r.x;
            d.cluster.push_back(d.cluster_of_provider[p]);
            ++row;
        }
        if (count > 0) d.cluster_sizes.push_back(count);
    }
    return d;
}

inline void small_sample_warnings(const CompleteCaseDesign& d, std::vector<std::string>& warnings)
{
    const auto j = d.provider_of_cluster.size();
    const int smallest = d.cluster_sizes.empty() ? 0 : *std::min_element(d.cluster_sizes.begin(), d.cluster_sizes.end());
    if (j < 30 || smallest < 30) {
        warnings.push_back("mixed model fitted with " + std::to_string(j) + " providers and smallest provider size " +
                           std::to_string(smallest) + " (below the 30/30 rule of thumb)");
    }
}

} // namespace detail

/// Ertefaie construction: random-intercept logistic model of treatment on all
/// covariates, fitted on covariate-complete records; a provider gets Z = 1 iff
/// its predicted intercept lies above the median intercept. Emitted for every
/// record of a provider with at least one complete record.
inline InstrumentSeries construct_epp(const PanelDataset& data, const ModelConstructionOptions& opt = {})
{
    auto out = detail::empty_series(data, MethodId(MethodId::Kind::epp), InstrumentLevel::per_provider);
    const auto d = detail::complete_case_design(data, false);
    if (d.provider_of_cluster.size() < 2) {
        throw PreconditionError("epp: need at least 2 providers with a covariate-complete record");
    }
    detail::small_sample_warnings(d, out.warnings);
    const GlmmFit fit = fit_glmm_logistic(d.design, d.cluster, GlmmSpec{RandomEffects::intercept, -1}, d.x, opt.glmm);
    out.warnings.insert(out.warnings.end(), fit.warnings.begin(), fit.warnings.end());

    std::vector<double> intercepts(static_cast<std::size_t>(fit.ranef.rows()));
    for (Eigen::Index c = 0; c < fit.ranef.rows(); ++c) intercepts[static_cast<std::size_t>(c)] = fit.ranef(c, 0);
    const double threshold = expit(detail::median_of(intercepts));
    for (std::size_t c = 0; c < intercepts.size(); ++c) {
        const double z = expit(intercepts[c]) > threshold ? 1.0 : 0.0;
        for (auto& v : out.values[static_cast<std::size_t>(d.provider_of_cluster[c])]) v = z;
    }
    return out;
}

/// Per-patient fitted preference on the logit scale from a random intercept +
/// random slope (on time_index) model; absent for providers without a
/// covariate-complete record.
struct RirsPreference {
    std::vector<std::vector<std::optional<double>>> theta;
    GlmmFit fit;
};

inline RirsPreference fit_rirs_preference(const PanelDataset& data, const ModelConstructionOptions& opt = {},
                                          std::vector<std::string>* warnings = nullptr)
{
    const auto d = detail::complete_case_design(data, true);
    if (d.provider_of_cluster.size() < 2) {
        throw PreconditionError("epp_rirs: need at least 2 providers with a covariate-complete record");
    }
    if (warnings) detail::small_sample_warnings(d, *warnings);
    RirsPreference res;
    res.fit = fit_glmm_logistic(d.design, d.cluster, GlmmSpec{RandomEffects::intercept_and_slope, 1}, d.x, opt.glmm);
    res.theta.resize(data.providers.size());
    const double g0 = res.fit.fixed_coef(0);
    const double gt = res.fit.fixed_coef(1);
    for (std::size_t p = 0; p < data.providers.size(); ++p) {
        res.theta[p].assign(data.providers[p].size(), std::nullopt);
        const int c = d.cluster_of_provider[p];
        if (c < 0) continue;
        const double b0 = res.fit.ranef(c, 0);
        const double bt = res.fit.ranef(c, 1);
        for (std::size_t i = 0; i < data.providers[p].size(); ++i) {
            res.theta[p][i] = g0 + b0 + (gt + bt) * data.providers[p].records[i].time_index;
        }
    }
    return res;
}

/// Extended Ertefaie construction: Z = 1 iff the patient's fitted preference
/// exceeds the median fitted preference pooled over all patients.
inline InstrumentSeries construct_epp_rirs(const PanelDataset& data, const ModelConstructionOptions& opt = {})
{
    auto out = detail::empty_series(data, MethodId(MethodId::Kind::epp_rirs), InstrumentLevel::per_patient);
    const RirsPreference pref = fit_rirs_preference(data, opt, &out.warnings);
    out.warnings.insert(out.warnings.end(), pref.fit.warnings.begin(), pref.fit.warnings.end());
    std::vector<double> pooled;
    for (const auto& v : pref.theta)
        for (const auto& t : v)
            if (t) pooled.push_back(*t);
    const double threshold = expit(detail::median_of(pooled));
    for (std::size_t p = 0; p < pref.theta.size(); ++p) {
        for (std::size_t i = 0; i < pref.theta[p].size(); ++i) {
            if (pref.theta[p][i]) out.values[p][i] = expit(*pref.theta[p][i]) > threshold ? 1.0 : 0.0;
        }
    }
    return out;
}

struct ChangeDecision {
    bool changed = false;
    std::optional<int> i_star;              // 1-based position within the provider block
    std::optional<int> i_star_order_index;  // the record's order_index at that position
    double deviance_no_change = 0.0;
    double deviance_best_change = 0.0;
    double screen_max_abs_d = 0.0;
    int n_candidates = 0;
};

namespace detail {

inline double tolerant_deviance(const MatrixXd& design, const VectorXd& y, const LogisticOptions& opt,
                                const VectorXd* start, VectorXd* coef_out = nullptr)
{
    try {
        const LogisticFit fit = fit_logistic(design, y, opt, start);
        if (coef_out) *coef_out = fit.coef;
        return fit.deviance;
    } catch (const ConvergenceError& e) {
        const VectorXd& b = e.last_iterate();
        if (coef_out) *coef_out = b;
        const VectorXd eta = design * b;
        return -2.0 * bernoulli_loglik(eta, y);
    }
}

} // namespace detail

/// Change-in-preference test for one provider: treatments `x` in treatment
/// order and `covariates` (n x P, may have zero columns).
inline ChangeDecision abrahamowicz_detect(std::span<const int> x, const MatrixXd& covariates,
                                          const ChangeDetectionOptions& opt = {})
{
    const auto n = static_cast<Eigen::Index>(x.size());
    if (n < 5) throw PreconditionError("change detection needs at least 5 patients, got " + std::to_string(n));
    if (covariates.rows() != n) throw DimensionError("change detection: covariate rows differ from treatments");
    const Eigen::Index p = covariates.cols();

    MatrixXd design(n, p + 2);
    design.col(0).setOnes();
    design.block(0, 1, n, p) = covariates;
    design.col(p + 1).setZero();
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = x[static_cast<std::size_t>(i)];

    ChangeDecision dec;
    VectorXd coef0;
    const MatrixXd base = design.leftCols(p + 1);
    dec.deviance_no_change = detail::tolerant_deviance(base, y, opt.logistic, nullptr, &coef0);
    dec.deviance_best_change = dec.deviance_no_change;

    // Screen: difference between earlier (k <= i) and later (k > i) proportions.
    std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + y(i);
    std::vector<Eigen::Index> candidates;
    for (Eigen::Index i = 3; i <= n - 3; ++i) {
        const double early = prefix[i] / static_cast<double>(i);
        const double late = (prefix[n] - prefix[i]) / static_cast<double>(n - i);
        const double d = early - late;
        dec.screen_max_abs_d = std::max(dec.screen_max_abs_d, std::abs(d));
        if (std::abs(d) >= opt.screen_threshold) candidates.push_back(i);
    }
    dec.n_candidates = static_cast<int>(candidates.size());
    if (candidates.empty()) return dec;

    VectorXd start(p + 2);
    start.head(p + 1) = coef0;
    start(p + 1) = 0.0;
    if (!start.allFinite()) start.setZero();
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_i = -1;
    for (Eigen::Index i : candidates) {
        for (Eigen::Index k = 0; k < n; ++k) design(k, p + 1) = k >= i ? 1.0 : 0.0;  // 1(k > i), 1-based
        // Neighbouring candidates differ in one row: warm-start from the last fit.
        VectorXd coef;
        const double dev = detail::tolerant_deviance(design, y, opt.logistic, &start, &coef);
        if (coef.allFinite() && coef.cwiseAbs().maxCoeff() < opt.logistic.separation_bound) start = coef;
        if (best_i < 0 || dev < best - 1e-9 * std::max(1.0, std::abs(best))) {
            best = dev;
            best_i = i;
        }
    }
    dec.deviance_best_change = best;
    dec.i_star = static_cast<int>(best_i);
    dec.changed = dec.deviance_no_change >= best + opt.aic_margin;
    if (!dec.changed) dec.i_star.reset();
    return dec;
}

struct StarConstruction {
    InstrumentSeries series;
    std::vector<ChangeDecision> decisions;  // one per provider
};

/// Abrahamowicz construction: all-previous-proportion within each provider,
/// restarted after a detected change in preference.
inline StarConstruction construct_star_detailed(const PanelDataset& data, const ChangeDetectionOptions& opt = {})
{
    StarConstruction res;
    res.series = detail::empty_series(data, MethodId(MethodId::Kind::star), InstrumentLevel::per_patient);
    const std::size_t n_obs = data.schema.n_observed();
    const std::size_t n_miss = data.schema.n_partial();
    for (std::size_t p = 0; p < data.providers.size(); ++p) {
        const auto& prov = data.providers[p];
        const auto n = static_cast<Eigen::Index>(prov.size());
        MatrixXd cov(n, static_cast<Eigen::Index>(n_obs + n_miss));
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& r = prov.records[static_cast<std::size_t>(i)];
            Eigen::Index c = 0;
            for (double w : r.w_obs) cov(i, c++) = w;
            for (const auto& w : r.w_miss) {
                if (!w) throw PreconditionError("star: provider '" + prov.id + "' has incomplete covariates");
                cov(i, c++) = *w;
            }
        }
        const auto x = detail::treatments(prov);
        ChangeDecision dec;
        try {
            dec = abrahamowicz_detect(x, cov, opt);
        } catch (const PreconditionError& e) {
            throw PreconditionError("star: provider '" + prov.id + "': " + e.what());
        }
        if (dec.changed) {
            const auto cut = static_cast<std::size_t>(*dec.i_star);
            dec.i_star_order_index = prov.records[cut - 1].order_index;
            detail::running_prev_mean(x, 0, cut, res.series.values[p]);
            detail::running_prev_mean(x, cut, x.size(), res.series.values[p]);
        } else {
            detail::running_prev_mean(x, 0, x.size(), res.series.values[p]);
        }
        res.decisions.push_back(dec);
    }
    return res;
}

inline InstrumentSeries construct_star(const PanelDataset& data, const ChangeDetectionOptions& opt = {})
{
    return construct_star_detailed(data, opt).series;
}

/// Simulation benchmark: the generating preference itself.
inline InstrumentSeries z_true_pp(const PanelDataset& data)
{
    auto out = detail::empty_series(data, MethodId(MethodId::Kind::true_pp), InstrumentLevel::per_patient);
    bool any = false;
    for (std::size_t p = 0; p < data.providers.size(); ++p) {
        for (std::size_t i = 0; i < data.providers[p].size(); ++i) {
            const auto& v = data.providers[p].records[i].true_pp;
            out.values[p][i] = v;
            any = any || v.has_value();
        }
    }
    if (!any) throw PreconditionError("dataset carries no true preference (only simulated data do)");
    return out;
}

inline InstrumentSeries construct(const PanelDataset& data, MethodId method, const ModelConstructionOptions& opt = {})
{
    using K = MethodId::Kind;
    switch (method.kind()) {
    case K::prev_b: return z_prev_b(data, method.window());
    case K::allprevprop: return z_all_prev_prop(data);
    case K::allprop: return z_all_prop(data);
    case K::alldichmean: return z_all_dich(data, DichCenter::mean);
    case K::alldichmedian: return z_all_dich(data, DichCenter::median);
    case K::epp: return construct_epp(data, opt);
    case K::epp_rirs: return construct_epp_rirs(data, opt);
    case K::star: return construct_star(data, opt.change);
    case K::true_pp: return z_true_pp(data);
    }
    throw PreconditionError("unknown construction method");
}

} // namespace ppiv
