#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "ppiv/construct.hpp"
#include "ppiv/core.hpp"
#include "ppiv/numerics.hpp"

namespace ppiv {

enum class OutcomeCovariates { all, obs_only };

/// Data preparation a construction method needs before estimation.
struct MethodRequirements {
    MethodId method;
    int n_j_min = 2;
    CompleteCaseMode cc_mode = CompleteCaseMode::outcome_and_covariates;
    OutcomeCovariates outcome_covariates = OutcomeCovariates::all;
};

inline MethodRequirements requirements_for(MethodId method)
{
    using K = MethodId::Kind;
    MethodRequirements r{method, 2, CompleteCaseMode::outcome_and_covariates, OutcomeCovariates::all};
    switch (method.kind()) {
    case K::epp:
    case K::epp_rirs:
        r.cc_mode = CompleteCaseMode::outcome_only;
        r.outcome_covariates = OutcomeCovariates::obs_only;
        break;
    case K::star: r.n_j_min = 5; break;
    case K::prev_b: r.n_j_min = method.window() + 1; break;
    case K::true_pp:
        r.n_j_min = 1;
        r.cc_mode = CompleteCaseMode::outcome_only;
        r.outcome_covariates = OutcomeCovariates::obs_only;
        break;
    default: break;
    }
    return r;
}

enum class SeKind { naive, corrected };

inline const char* to_string(SeKind s) { return s == SeKind::naive ? "naive" : "corrected"; }

struct PipelineOptions {
    /// naive: second-stage OLS standard error (first-stage uncertainty
    /// ignored). corrected: classical 2SLS standard error with residuals
    /// formed from the observed treatment.
    SeKind se = SeKind::naive;
    ModelConstructionOptions model;
};

/// Record and provider counts through each preparation step of one method.
struct PreparationLedger {
    std::string method;
    int n_j_min = 0;
    CompleteCaseMode cc_mode = CompleteCaseMode::outcome_and_covariates;
    std::size_t records_in = 0;
    std::size_t providers_in = 0;
    std::size_t records_after_cc = 0;
    std::size_t providers_after_cc = 0;
    std::size_t providers_dropped_min_size = 0;
    std::size_t records_dropped_min_size = 0;
    std::size_t records_without_z = 0;
    std::size_t n_used = 0;
    std::size_t j_used = 0;
    std::vector<std::string> covariates_used;
    std::vector<std::string> dropped_provider_ids;
};

struct MethodRun {
    EstimateResult estimate;
    PreparationLedger ledger;
};

namespace detail {

struct AnalysisRows {
    VectorXd x;
    VectorXd y;
    VectorXd z;
    MatrixXd w;  // chosen covariates
    std::size_t n_providers = 0;
};

inline std::vector<std::string> prefixed(const std::string& first, const std::string& second,
                                         const std::vector<std::string>& rest)
{
    std::vector<std::string> out{first};
    if (!second.empty()) out.push_back(second);
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

inline MatrixXd with_intercept(const VectorXd* lead, const MatrixXd& w)
{
    const Eigen::Index n = w.rows();
    const Eigen::Index extra = lead ? 1 : 0;
    MatrixXd d(n, 1 + extra + w.cols());
    d.col(0).setOnes();
    if (lead) d.col(1) = *lead;
    d.rightCols(w.cols()) = w;
    return d;
}

} // namespace detail

/// Two-stage least squares with instrument column `z`, treatment `x`, outcome
/// `y` and exogenous covariates `w` (no intercept; one is added).
inline EstimateResult two_stage_least_squares(const VectorXd& x, const VectorXd& y, const VectorXd& z,
                                              const MatrixXd& w, const std::vector<std::string>& w_names,
                                              SeKind se_kind = SeKind::naive)
{
    const MatrixXd first_full = detail::with_intercept(&z, w);
    const MatrixXd first_restricted = detail::with_intercept(nullptr, w);
    const auto names_full = detail::prefixed("intercept", "Z", w_names);
    const auto names_restricted = detail::prefixed("intercept", "", w_names);

    const OlsFit full = fit_ols(first_full, x, names_full);
    const OlsFit restricted = fit_ols(first_restricted, x, names_restricted);
    const VectorXd x_hat = x - full.residuals;

    const MatrixXd second = detail::with_intercept(&x_hat, w);
    const OlsFit outcome = fit_ols(second, y, detail::prefixed("intercept", "X_hat", w_names));

    EstimateResult res;
    res.beta_hat = outcome.coef(1);
    res.se = outcome.se(1);
    if (se_kind == SeKind::corrected) {
        const MatrixXd structural = detail::with_intercept(&x, w);
        const VectorXd resid = y - structural * outcome.coef;
        const double sigma2 = resid.squaredNorm() / outcome.df_resid;
        res.se = std::sqrt(outcome.coef_cov(1, 1) / outcome.sigma2() * sigma2);
    }
    res.ci_low = res.beta_hat - 1.96 * res.se;
    res.ci_high = res.beta_hat + 1.96 * res.se;
    res.f_statistic = partial_f(full, restricted, 1);
    res.n_used = static_cast<std::size_t>(y.size());
    return res;
}

namespace detail {

// Covariate columns for the outcome and first-stage models. obs_only keeps
// the fully observed covariates plus any partially observed covariate that
// happens to be complete in the analysis rows.
inline std::vector<int> resolve_covariates(const PanelDataset& data, const InstrumentSeries& z,
                                           OutcomeCovariates which, std::vector<std::string>& names)
{
    const auto n_obs = static_cast<int>(data.schema.n_observed());
    const auto n_miss = static_cast<int>(data.schema.n_partial());
    std::vector<int> cols;  // >= 0: w_obs index; < 0: -(w_miss index + 1)
    for (int c = 0; c < n_obs; ++c) {
        cols.push_back(c);
        names.push_back(data.schema.observed[static_cast<std::size_t>(c)]);
    }
    for (int m = 0; m < n_miss; ++m) {
        bool complete = true;
        if (which == OutcomeCovariates::obs_only) {
            for (std::size_t p = 0; p < data.providers.size() && complete; ++p) {
                for (std::size_t i = 0; i < data.providers[p].size(); ++i) {
                    if (z.values[p][i] && !data.providers[p].records[i].w_miss[static_cast<std::size_t>(m)]) {
                        complete = false;
                        break;
                    }
                }
            }
        }
        if (complete) {
            cols.push_back(-(m + 1));
            names.push_back(data.schema.partial[static_cast<std::size_t>(m)]);
        }
    }
    return cols;
}

inline AnalysisRows gather_rows(const PanelDataset& data, const InstrumentSeries& z, const std::vector<int>& cols)
{
    std::size_t n = 0;
    for (std::size_t p = 0; p < data.providers.size(); ++p)
        for (std::size_t i = 0; i < data.providers[p].size(); ++i)
            if (z.values[p][i]) ++n;
    AnalysisRows rows;
    const auto rn = static_cast<Eigen::Index>(n);
    rows.x.resize(rn);
    rows.y.resize(rn);
    rows.z.resize(rn);
    rows.w.resize(rn, static_cast<Eigen::Index>(cols.size()));
    Eigen::Index r = 0;
    for (std::size_t p = 0; p < data.providers.size(); ++p) {
        bool used = false;
        for (std::size_t i = 0; i < data.providers[p].size(); ++i) {
            if (!z.values[p][i]) continue;
            const auto& rec = data.providers[p].records[i];
            if (!rec.y) throw PreconditionError("analysis record without outcome");
            rows.x(r) = rec.x;
            rows.y(r) = *rec.y;
            rows.z(r) = *z.values[p][i];
            for (std::size_t c = 0; c < cols.size(); ++c) {
                const int col = cols[c];
                rows.w(r, static_cast<Eigen::Index>(c)) =
                    col >= 0 ? rec.w_obs[static_cast<std::size_t>(col)] : *rec.w_miss[static_cast<std::size_t>(-col - 1)];
            }
            used = true;
            ++r;
        }
        if (used) ++rows.n_providers;
    }
    return rows;
}

} // namespace detail

/// Runs one construction method end to end: preparation filters, instrument
/// construction, exclusion of non-calculable instruments, first and second
/// stage regressions.
inline MethodRun run_method_detailed(const PanelDataset& data, const MethodRequirements& req,
                                     const PipelineOptions& opt = {})
{
    const std::string name = req.method.name();
    MethodRun run;
    auto& led = run.ledger;
    led.method = name;
    led.n_j_min = req.n_j_min;
    led.cc_mode = req.cc_mode;
    led.records_in = data.n_records();
    led.providers_in = data.n_providers();
    try {
        const PanelDataset cc = complete_case(data, req.cc_mode);
        led.records_after_cc = cc.n_records();
        led.providers_after_cc = cc.n_providers();
        for (const auto& prov : cc.providers)
            if (prov.size() < static_cast<std::size_t>(req.n_j_min)) led.dropped_provider_ids.push_back(prov.id);
        FilterResult filtered = filter_min_provider_size(cc, req.n_j_min);
        led.providers_dropped_min_size = filtered.dropped_providers;
        led.records_dropped_min_size = filtered.dropped_records;
        const PanelDataset& analysis = filtered.data;

        const InstrumentSeries z = construct(analysis, req.method, opt.model);
        led.records_without_z = analysis.n_records() - z.n_present();
        if (z.n_present() == 0) throw EmptyResultError("no record has a calculable instrument");

        std::vector<std::string> w_names;
        const auto cols = detail::resolve_covariates(analysis, z, req.outcome_covariates, w_names);
        const auto rows = detail::gather_rows(analysis, z, cols);
        run.estimate = two_stage_least_squares(rows.x, rows.y, rows.z, rows.w, w_names, opt.se);
        run.estimate.method = req.method;
        run.estimate.label = name;
        run.estimate.j_used = rows.n_providers;
        run.estimate.warnings = z.warnings;
        led.covariates_used = w_names;
        led.n_used = run.estimate.n_used;
        led.j_used = run.estimate.j_used;
        if (run.estimate.weak_instrument()) {
            run.estimate.warnings.push_back("first-stage F = " + std::to_string(run.estimate.f_statistic) +
                                            " < 10: weak instrument");
        }
    } catch (const EmptyResultError& e) {
        throw EmptyResultError(name + ": " + e.what());
    } catch (const RankDeficiencyError& e) {
        throw RankDeficiencyError(e, name);
    } catch (const ConvergenceError& e) {
        throw ConvergenceError(name + ": " + e.what(), e.last_iterate());
    } catch (const PreconditionError& e) {
        throw PreconditionError(name + ": " + e.what());
    }
    return run;
}

inline EstimateResult run_method(const PanelDataset& data, MethodId method, const PipelineOptions& opt = {})
{
    return run_method_detailed(data, requirements_for(method), opt).estimate;
}

/// "As treated" regression of the outcome on observed treatment and all
/// covariates over covariate-complete records. f_statistic is 0.
inline EstimateResult run_observational(const PanelDataset& data)
{
    const PanelDataset cc = complete_case(data, CompleteCaseMode::outcome_and_covariates);
    const std::size_t n = cc.n_records();
    const std::size_t n_obs = cc.schema.n_observed();
    const std::size_t n_miss = cc.schema.n_partial();
    MatrixXd design(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(2 + n_obs + n_miss));
    VectorXd y(static_cast<Eigen::Index>(n));
    Eigen::Index r = 0;
    for (const auto& prov : cc.providers) {
        for (const auto& rec : prov.records) {
            Eigen::Index c = 0;
            design(r, c++) = 1.0;
            design(r, c++) = rec.x;
            for (double w : rec.w_obs) design(r, c++) = w;
            for (const auto& w : rec.w_miss) design(r, c++) = *w;
            y(r) = *rec.y;
            ++r;
        }
    }
    std::vector<std::string> names{"intercept", "X"};
    names.insert(names.end(), cc.schema.observed.begin(), cc.schema.observed.end());
    names.insert(names.end(), cc.schema.partial.begin(), cc.schema.partial.end());
    const OlsFit fit = fit_ols(design, y, names);
    EstimateResult res;
    res.beta_hat = fit.coef(1);
    res.se = fit.se(1);
    res.ci_low = res.beta_hat - 1.96 * res.se;
    res.ci_high = res.beta_hat + 1.96 * res.se;
    res.label = "observational";
    res.f_statistic = 0.0;
    res.n_used = n;
    res.j_used = cc.n_providers();
    return res;
}

struct PpBenchmarks {
    EstimateResult full;           // IV(PP): true preference, all outcome-complete records
    EstimateResult complete_case;  // IV(PP) cc: covariate-complete records only
};

inline PpBenchmarks run_pp_benchmarks(const PanelDataset& sim_data, const PipelineOptions& opt = {})
{
    const MethodId id(MethodId::Kind::true_pp);
    MethodRequirements full_req = requirements_for(id);
    MethodRequirements cc_req = full_req;
    cc_req.cc_mode = CompleteCaseMode::outcome_and_covariates;
    cc_req.outcome_covariates = OutcomeCovariates::all;
    PpBenchmarks out{run_method_detailed(sim_data, full_req, opt).estimate,
                     run_method_detailed(sim_data, cc_req, opt).estimate};
    out.full.label = "iv_pp";
    out.complete_case.label = "iv_pp_cc";
    return out;
}

} // namespace ppiv
