#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ppiv/core.hpp"
#include "ppiv/numerics.hpp"
#include "ppiv/pipeline.hpp"

namespace ppiv {

enum class Generator { A, B };
enum class Missingness { none, mcar, mnar };
enum class Link { logit, linear };

inline const char* to_string(Generator g) { return g == Generator::A ? "A" : "B"; }
inline const char* to_string(Missingness m)
{
    switch (m) {
    case Missingness::none: return "none";
    case Missingness::mcar: return "mcar";
    case Missingness::mnar: return "mnar";
    }
    return "?";
}
inline const char* to_string(Link l) { return l == Link::logit ? "logit" : "linear"; }

/// Y = intercept + beta X + w1 W1 + w2 W2 + u U + sigma eps
struct OutcomeModel {
    double intercept = 0.0;
    double beta = 1.0;
    double w1 = 0.0;
    double w2 = 0.0;
    double u = 0.0;
    double sigma = 1.0;
};

/// Treatment driven by a binary, possibly switching, provider preference.
struct TreatmentModelA {
    double intercept = 0.0;
    double beta_pp = 0.7;
    double u = 0.0;
    double w1 = 0.0;
    double w2 = 0.0;
};

/// Treatment driven by provider-specific intercepts and time slopes drawn
/// from N(0, omega).
struct TreatmentModelB {
    double intercept = 0.0;
    double time = 0.0;
    double u = 0.0;
    double w1 = 0.0;
    double w2 = 0.0;
    Eigen::Matrix2d omega = Eigen::Matrix2d::Zero();
};

struct PreferenceProcess {
    double p_initial_b = 0.6;
    double p_switch_a_to_b = 0.7;
    double p_switch_b_to_a = 0.4;
    double window_low = 0.4;   // change rank drawn from [ceil(low n), floor(high n)]
    double window_high = 0.7;
};

/// pi_R = expit(a + w1 W1 + w2 W2 + u U + ystar Y*) * expit(a + v V + v_w1 V W1 + v_w2 V W2)
struct MnarModel {
    double intercept = 0.0;
    double w1 = 0.0;
    double w2 = 0.0;
    double u = 0.0;
    double ystar = 0.0;
    double v = 0.0;
    double v_w1 = 0.0;
    double v_w2 = 0.0;
};

struct CovariateModel {
    double provider_mean_sd = 0.5;
    double sd = 2.0;
};

struct GenCoefficients {
    OutcomeModel y;
    TreatmentModelA x_a;
    TreatmentModelB x_b;
    PreferenceProcess pp;
    MnarModel mnar;
    CovariateModel w;
};

/// Calibrated default coefficients; see docs/calibration.md for the audit.
inline GenCoefficients default_coefficients(Generator g)
{
    GenCoefficients c;
    c.mnar = {0.0, 0.3, 0.0, 3.0, 8.0, 0.3, 0.2, 0.0};
    if (g == Generator::A) {
        c.mnar.intercept = 1.10591;
        c.y = {0.0, 1.0, 0.05, 1.224, 0.155, 0.825430};
        c.x_a = {-0.889634, 0.7, 1.5, 0.0, 0.1};
    } else {
        c.mnar.intercept = 1.07056;
        c.y = {0.0, 1.0, 0.05, 1.1, 0.42, 0.965426};
        c.x_b.intercept = 0.394422;
        c.x_b.time = 0.0;
        c.x_b.u = 1.55;
        c.x_b.w1 = 0.0;
        c.x_b.w2 = 0.1;
        c.x_b.omega << 2.64, -0.406, -0.406, 0.0625;
    }
    return c;
}

struct ScenarioConfig {
    Generator generator = Generator::A;
    int n_providers = 100;
    int n_per_provider = 408;
    Missingness missingness = Missingness::none;
    double target_missing_rate = 0.40;
    int n_reps = 200;
    std::uint64_t seed = 1;
    Link link = Link::logit;
    GenCoefficients coefficients = default_coefficients(Generator::A);
};

// ---------------------------------------------------------------------------
// Random streams

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for stream `stream` of replication `rep`: a pure function of its
/// inputs, so the execution order of replications cannot change any draw.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t rep, std::uint64_t stream = 0)
{
    return splitmix64(splitmix64(splitmix64(master) ^ (rep + 1)) ^ (stream + 0x51ed27));
}

using Rng = std::mt19937_64;

namespace detail {

inline double draw_normal(Rng& rng, double mean, double sd)
{
    return std::normal_distribution<double>(mean, sd)(rng);
}

inline double draw_unit(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double treatment_probability(double lin, Link link)
{
    const double p = link == Link::logit ? expit(lin) : std::clamp(lin, 0.001, 0.999);
    if (!std::isfinite(p)) throw PreconditionError("treatment probability is not finite (linear predictor " +
                                                   std::to_string(lin) + ")");
    return p;
}

inline std::string provider_id(int j)
{
    std::string s = std::to_string(j + 1);
    return "p" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

inline int time_index(int i, int n) { return (12 * i + n - 1) / n; }

inline void fill_outcome(PatientRecord& r, double w1, double w2, double u, const OutcomeModel& y, Rng& rng)
{
    const double eps = draw_normal(rng, 0.0, 1.0);
    r.y = y.intercept + y.beta * r.x + y.w1 * w1 + y.w2 * w2 + y.u * u + y.sigma * eps;
}

inline CovariateSchema simulation_schema() { return {{"w2"}, {"w1"}}; }

inline void check_config(const ScenarioConfig& cfg)
{
    if (cfg.n_providers < 1) throw PreconditionError("n_providers must be >= 1");
    if (cfg.n_per_provider < 1) throw PreconditionError("n_per_provider must be >= 1");
    const auto& pp = cfg.coefficients.pp;
    for (double p : {pp.p_initial_b, pp.p_switch_a_to_b, pp.p_switch_b_to_a}) {
        if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("preference probabilities must lie in [0,1]");
    }
    if (!(pp.window_low >= 0.0 && pp.window_low <= pp.window_high && pp.window_high <= 1.0)) {
        throw PreconditionError("change window must satisfy 0 <= low <= high <= 1");
    }
    if (cfg.coefficients.y.sigma < 0.0 || cfg.coefficients.w.sd < 0.0 || cfg.coefficients.w.provider_mean_sd < 0.0) {
        throw PreconditionError("standard deviations must be non-negative");
    }
}

} // namespace detail

/// Generator A: binary provider preference with one optional switch.
/// Patients i > i* of a switching provider carry the flipped preference.
inline PanelDataset gen_population_A(const ScenarioConfig& cfg, std::uint64_t seed)
{
    detail::check_config(cfg);
    const auto& c = cfg.coefficients;
    Rng rng(seed);
    PanelDataset data;
    data.schema = detail::simulation_schema();
    const int n = cfg.n_per_provider;
    const int lo = std::max(1, static_cast<int>(std::ceil(c.pp.window_low * n)));
    const int hi = std::max(lo, static_cast<int>(std::floor(c.pp.window_high * n)));
    for (int j = 0; j < cfg.n_providers; ++j) {
        Provider prov{detail::provider_id(j), {}};
        prov.records.reserve(static_cast<std::size_t>(n));
        const double mu1 = detail::draw_normal(rng, 0.0, c.w.provider_mean_sd);
        const double mu2 = detail::draw_normal(rng, 0.0, c.w.provider_mean_sd);
        const int initial = detail::draw_unit(rng) < c.pp.p_initial_b ? 1 : 0;
        const double p_switch = initial == 1 ? c.pp.p_switch_b_to_a : c.pp.p_switch_a_to_b;
        const bool switches = detail::draw_unit(rng) < p_switch;
        const int i_star = std::uniform_int_distribution<int>(lo, hi)(rng);
        for (int i = 1; i <= n; ++i) {
            PatientRecord r;
            r.order_index = i;
            r.time_index = detail::time_index(i, n);
            const double w1 = detail::draw_normal(rng, mu1, c.w.sd);
            const double w2 = detail::draw_normal(rng, mu2, c.w.sd);
            const double u = detail::draw_normal(rng, 0.0, 1.0);
            const int pp = (switches && i > i_star) ? 1 - initial : initial;
            const double theta = c.x_a.intercept + c.x_a.beta_pp * pp;
            const double lin = theta + c.x_a.u * u + c.x_a.w1 * w1 + c.x_a.w2 * w2;
            r.x = detail::draw_unit(rng) < detail::treatment_probability(lin, cfg.link) ? 1 : 0;
            detail::fill_outcome(r, w1, w2, u, c.y, rng);
            r.w_obs = {w2};
            r.w_miss = {w1};
            r.true_pp = pp;
            r.true_theta = theta;
            r.latent_u = u;
            prov.records.push_back(std::move(r));
        }
        data.providers.push_back(std::move(prov));
    }
    return data;
}

/// Square root of a PSD 2x2 matrix (throws if not PSD).
inline Eigen::Matrix2d psd_sqrt(const Eigen::Matrix2d& omega)
{
    if (std::abs(omega(0, 1) - omega(1, 0)) > 1e-12 * (1.0 + omega.cwiseAbs().maxCoeff())) {
        throw PreconditionError("omega must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(omega);
    const Eigen::Vector2d ev = es.eigenvalues();
    if (ev.minCoeff() < -1e-12 * (1.0 + ev.cwiseAbs().maxCoeff())) throw PreconditionError("omega must be PSD");
    return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

/// Generator B: random intercept and random time slope per provider. The
/// true preference is 1 where the provider-time linear predictor exceeds its
/// population median.
inline PanelDataset gen_population_B(const ScenarioConfig& cfg, std::uint64_t seed)
{
    detail::check_config(cfg);
    const auto& c = cfg.coefficients;
    const Eigen::Matrix2d root = psd_sqrt(c.x_b.omega);
    Rng rng(seed);
    PanelDataset data;
    data.schema = detail::simulation_schema();
    const int n = cfg.n_per_provider;
    std::vector<double> thetas;
    thetas.reserve(static_cast<std::size_t>(cfg.n_providers) * static_cast<std::size_t>(n));
    for (int j = 0; j < cfg.n_providers; ++j) {
        Provider prov{detail::provider_id(j), {}};
        prov.records.reserve(static_cast<std::size_t>(n));
        const double mu1 = detail::draw_normal(rng, 0.0, c.w.provider_mean_sd);
        const double mu2 = detail::draw_normal(rng, 0.0, c.w.provider_mean_sd);
        Eigen::Vector2d z(detail::draw_normal(rng, 0.0, 1.0), detail::draw_normal(rng, 0.0, 1.0));
        const Eigen::Vector2d re = root * z;
        for (int i = 1; i <= n; ++i) {
            PatientRecord r;
            r.order_index = i;
            r.time_index = detail::time_index(i, n);
            const double w1 = detail::draw_normal(rng, mu1, c.w.sd);
            const double w2 = detail::draw_normal(rng, mu2, c.w.sd);
            const double u = detail::draw_normal(rng, 0.0, 1.0);
            const double theta = c.x_b.intercept + re(0) + (c.x_b.time + re(1)) * r.time_index;
            const double lin = theta + c.x_b.u * u + c.x_b.w1 * w1 + c.x_b.w2 * w2;
            r.x = detail::draw_unit(rng) < detail::treatment_probability(lin, cfg.link) ? 1 : 0;
            detail::fill_outcome(r, w1, w2, u, c.y, rng);
            r.w_obs = {w2};
            r.w_miss = {w1};
            r.true_theta = theta;
            r.latent_u = u;
            thetas.push_back(theta);
            prov.records.push_back(std::move(r));
        }
        data.providers.push_back(std::move(prov));
    }
    const double med = detail::median_of(thetas);
    for (auto& prov : data.providers)
        for (auto& r : prov.records) r.true_pp = *r.true_theta > med ? 1.0 : 0.0;
    return data;
}

inline PanelDataset gen_population(const ScenarioConfig& cfg, std::uint64_t seed)
{
    return cfg.generator == Generator::A ? gen_population_A(cfg, seed) : gen_population_B(cfg, seed);
}

/// Masks every partially observed covariate entry independently with
/// probability `rate`.
inline PanelDataset apply_mcar(PanelDataset data, double rate, std::uint64_t seed)
{
    if (!(rate >= 0.0 && rate <= 1.0)) throw PreconditionError("missing rate must lie in [0,1]");
    Rng rng(seed);
    for (auto& prov : data.providers)
        for (auto& r : prov.records)
            for (auto& w : r.w_miss)
                if (detail::draw_unit(rng) < rate) w.reset();
    return data;
}

/// Non-ignorable missingness of W1 depending on W1, W2, U, the standardized
/// outcome and a provider-level factor V ~ U(-2, 2).
inline PanelDataset apply_mnar(PanelDataset data, const MnarModel& m, std::uint64_t seed)
{
    if (data.schema.n_partial() != 1 || data.schema.n_observed() != 1) {
        throw PreconditionError("apply_mnar expects the simulation schema (one observed, one partial covariate)");
    }
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (const auto& prov : data.providers) {
        for (const auto& r : prov.records) {
            if (!r.y || !r.latent_u || !r.w_miss[0]) {
                throw PreconditionError("apply_mnar needs complete simulated records (y, W1, latent U)");
            }
            sum += *r.y;
            sum2 += *r.y * *r.y;
            ++n;
        }
    }
    if (n < 2) throw PreconditionError("apply_mnar needs at least two records");
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(std::max(0.0, (sum2 - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1)));
    if (sd <= 0.0) throw PreconditionError("apply_mnar: outcome has zero variance");

    Rng rng(seed);
    for (auto& prov : data.providers) {
        const double v = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
        for (auto& r : prov.records) {
            const double w1 = *r.w_miss[0];
            const double w2 = r.w_obs[0];
            const double ystar = (*r.y - mean) / sd;
            const double pi = expit(m.intercept + m.w1 * w1 + m.w2 * w2 + m.u * *r.latent_u + m.ystar * ystar) *
                              expit(m.intercept + m.v * v + m.v_w1 * v * w1 + m.v_w2 * v * w2);
            if (detail::draw_unit(rng) < pi) r.w_miss[0].reset();
        }
    }
    return data;
}

inline double missing_fraction(const PanelDataset& data)
{
    std::size_t miss = 0, total = 0;
    for (const auto& prov : data.providers)
        for (const auto& r : prov.records)
            for (const auto& w : r.w_miss) {
                ++total;
                if (!w) ++miss;
            }
    return total == 0 ? 0.0 : static_cast<double>(miss) / static_cast<double>(total);
}

/// Population with the scenario's missingness applied; streams 0 and 1 of
/// the given replication seed drive generation and masking.
inline PanelDataset simulate_dataset(const ScenarioConfig& cfg, std::uint64_t rep_seed)
{
    PanelDataset data = gen_population(cfg, splitmix64(rep_seed ^ 0x1));
    switch (cfg.missingness) {
    case Missingness::none: break;
    case Missingness::mcar: data = apply_mcar(std::move(data), cfg.target_missing_rate, splitmix64(rep_seed ^ 0x2)); break;
    case Missingness::mnar: data = apply_mnar(std::move(data), cfg.coefficients.mnar, splitmix64(rep_seed ^ 0x2)); break;
    }
    return data;
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationTargets {
    std::optional<double> p_treated;
    std::optional<double> var_y;
    std::optional<double> missing_rate;  // MNAR intercept; ignored unless missingness == mnar
    int min_records = 100000;
    std::uint64_t seed = 20240901;
};

inline CalibrationTargets default_targets(Generator g)
{
    CalibrationTargets t;
    t.p_treated = g == Generator::A ? 0.42 : 0.56;
    t.var_y = g == Generator::A ? 7.7 : 6.9;
    t.missing_rate = 0.40;
    return t;
}

struct CalibrationStep {
    std::string parameter;
    double target = 0.0;
    double achieved = 0.0;
    double value = 0.0;
    int iterations = 0;
};

struct CalibrationResult {
    GenCoefficients coefficients;
    std::vector<CalibrationStep> steps;
    std::size_t n_records = 0;

    [[nodiscard]] std::string report() const
    {
        std::ostringstream os;
        os.precision(6);
        os << "calibration on " << n_records << " simulated records\n";
        for (const auto& s : steps) {
            os << "  " << s.parameter << " = " << s.value << "  (target " << s.target << ", achieved " << s.achieved
               << ", " << s.iterations << " bisection steps)\n";
        }
        return os.str();
    }
};

namespace detail {

inline double treated_fraction(const PanelDataset& d)
{
    std::size_t n = 0, t = 0;
    for (const auto& p : d.providers)
        for (const auto& r : p.records) {
            ++n;
            t += static_cast<std::size_t>(r.x);
        }
    return static_cast<double>(t) / static_cast<double>(n);
}

inline double outcome_variance(const PanelDataset& d)
{
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const auto& p : d.providers)
        for (const auto& r : p.records) {
            s += *r.y;
            s2 += *r.y * *r.y;
            ++n;
        }
    const double m = s / static_cast<double>(n);
    return (s2 - static_cast<double>(n) * m * m) / static_cast<double>(n - 1);
}

// Bisection on an increasing function f over [lo, hi] for f(x) = target.
inline std::pair<double, int> bisect(const std::function<double(double)>& f, double target, double lo, double hi,
                                     const std::string& what, double xtol = 1e-6)
{
    double flo = f(lo), fhi = f(hi);
    if (!(flo <= target && target <= fhi)) {
        throw PreconditionError("calibration of " + what + ": target " + std::to_string(target) +
                                " not bracketed by [" + std::to_string(flo) + ", " + std::to_string(fhi) + "]");
    }
    int it = 0;
    while (hi - lo > xtol && it < 100) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) < target) lo = mid;
        else hi = mid;
        ++it;
    }
    return {0.5 * (lo + hi), it};
}

} // namespace detail

/// Adjusts the treatment intercept, the outcome noise scale and (for MNAR
/// configurations) the missingness intercept by bisection against
/// large-sample Monte-Carlo estimates. The same random numbers are reused at
/// every bisection point, so each estimated quantity is monotone in its
/// parameter.
inline CalibrationResult calibrate(const ScenarioConfig& config, const CalibrationTargets& targets)
{
    ScenarioConfig cfg = config;
    const int per = std::max(1, cfg.n_per_provider);
    cfg.n_providers = std::max(cfg.n_providers, (targets.min_records + per - 1) / per);
    CalibrationResult res;
    res.n_records = static_cast<std::size_t>(cfg.n_providers) * static_cast<std::size_t>(per);
    auto& coef = cfg.coefficients;
    const std::uint64_t seed = targets.seed;

    if (targets.p_treated) {
        double& knob = cfg.generator == Generator::A ? coef.x_a.intercept : coef.x_b.intercept;
        auto f = [&](double v) {
            knob = v;
            return detail::treated_fraction(gen_population(cfg, seed));
        };
        auto [v, it] = detail::bisect(f, *targets.p_treated, -10.0, 10.0, "treatment intercept");
        knob = v;
        res.steps.push_back({cfg.generator == Generator::A ? "x_a.intercept" : "x_b.intercept", *targets.p_treated,
                             detail::treated_fraction(gen_population(cfg, seed)), v, it});
    }
    if (targets.var_y) {
        auto f = [&](double s) {
            coef.y.sigma = s;
            return detail::outcome_variance(gen_population(cfg, seed));
        };
        auto [s, it] = detail::bisect(f, *targets.var_y, 0.0, 50.0, "outcome noise sd");
        coef.y.sigma = s;
        res.steps.push_back({"y.sigma", *targets.var_y, detail::outcome_variance(gen_population(cfg, seed)), s, it});
    }
    if (targets.missing_rate && cfg.missingness == Missingness::mnar) {
        const PanelDataset base = gen_population(cfg, seed);
        auto f = [&](double a) {
            coef.mnar.intercept = a;
            return missing_fraction(apply_mnar(base, coef.mnar, splitmix64(seed)));
        };
        auto [a, it] = detail::bisect(f, *targets.missing_rate, -15.0, 15.0, "missingness intercept");
        coef.mnar.intercept = a;
        res.steps.push_back({"mnar.intercept", *targets.missing_rate,
                             missing_fraction(apply_mnar(base, coef.mnar, splitmix64(seed))), a, it});
    }
    res.coefficients = coef;
    return res;
}

// ---------------------------------------------------------------------------
// Scenario runs

struct MetricsRow {
    std::string method;
    std::size_t n_reps = 0;    // successful replications
    std::size_t n_failed = 0;
    double bias = 0.0;
    double mcse = 0.0;         // sd of estimates / sqrt(n_reps)
    double coverage = 0.0;     // percent
    double rmse = 0.0;
    double mean_f = 0.0;
};

/// Aggregates replication estimates against the true effect `beta`.
inline MetricsRow compute_metrics(const std::string& method, const std::vector<EstimateResult>& estimates, double beta,
                                  std::size_t n_failed = 0)
{
    MetricsRow row;
    row.method = method;
    row.n_reps = estimates.size();
    row.n_failed = n_failed;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (estimates.empty()) {
        row.bias = row.mcse = row.coverage = row.rmse = row.mean_f = nan;
        return row;
    }
    const auto n = static_cast<double>(estimates.size());
    double sum = 0.0, sum_f = 0.0, sq_err = 0.0;
    std::size_t covered = 0;
    for (const auto& e : estimates) {
        sum += e.beta_hat;
        sum_f += e.f_statistic;
        sq_err += (e.beta_hat - beta) * (e.beta_hat - beta);
        if (e.covers(beta)) ++covered;
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& e : estimates) ss += (e.beta_hat - mean) * (e.beta_hat - mean);
    row.bias = mean - beta;
    row.mcse = estimates.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : nan;
    row.coverage = 100.0 * static_cast<double>(covered) / n;
    row.rmse = std::sqrt(sq_err / n);
    row.mean_f = sum_f / n;
    return row;
}

struct ReplicationEstimate {
    std::string label;
    bool ok = false;
    EstimateResult estimate;
    std::string error;
};

struct Replication {
    int index = 0;
    std::uint64_t seed = 0;
    double missing_fraction = 0.0;
    std::vector<ReplicationEstimate> estimates;
};

struct RunOptions {
    std::vector<MethodId> methods = all_construction_methods();
    bool benchmarks = true;  // observational, iv_pp, iv_pp_cc
    int workers = 1;
    PipelineOptions pipeline;
    /// Invoked after each finished replication (possibly from a worker thread).
    std::function<void(int done, int total)> progress;
};

struct ScenarioResult {
    ScenarioConfig config;
    std::vector<std::string> labels;
    std::vector<Replication> replications;
    std::vector<MetricsRow> metrics;

    [[nodiscard]] const MetricsRow& row(const std::string& label) const
    {
        for (const auto& r : metrics)
            if (r.method == label) return r;
        throw PreconditionError("no metrics row for '" + label + "'");
    }
};

inline std::vector<std::string> result_labels(const RunOptions& opt)
{
    std::vector<std::string> labels;
    if (opt.benchmarks) labels = {"observational", "iv_pp", "iv_pp_cc"};
    for (const auto& m : opt.methods) labels.push_back(m.name());
    return labels;
}

/// A replication failed outside any estimation method (e.g. data generation).
class ReplicationError : public Error {
public:
    ReplicationError(int index, std::uint64_t seed, const std::string& what)
        : Error("replication " + std::to_string(index) + " (seed " + std::to_string(seed) + "): " + what),
          index(index), seed(seed)
    {
    }
    int index;
    std::uint64_t seed;
};

/// All estimates for one replication. Method failures are recorded, never
/// propagated, so one degenerate draw cannot abort a scenario.
inline Replication run_replication(const ScenarioConfig& cfg, int index, const RunOptions& opt)
{
    Replication rep;
    rep.index = index;
    rep.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(index));
    const PanelDataset data = simulate_dataset(cfg, rep.seed);
    rep.missing_fraction = missing_fraction(data);

    auto attempt = [&](const std::string& label, const std::function<EstimateResult()>& fn) {
        ReplicationEstimate re;
        re.label = label;
        try {
            re.estimate = fn();
            re.estimate.label = label;
            re.ok = std::isfinite(re.estimate.beta_hat) && std::isfinite(re.estimate.se);
            if (!re.ok) re.error = "non-finite estimate";
        } catch (const std::exception& e) {
            re.error = e.what();
        }
        rep.estimates.push_back(std::move(re));
    };
    if (opt.benchmarks) {
        attempt("observational", [&] { return run_observational(data); });
        std::optional<PpBenchmarks> pp;
        std::string pp_error;
        try {
            pp = run_pp_benchmarks(data, opt.pipeline);
        } catch (const std::exception& e) {
            pp_error = e.what();
        }
        auto from_pp = [&](bool full) -> EstimateResult {
            if (!pp) throw Error(pp_error);
            return full ? pp->full : pp->complete_case;
        };
        attempt("iv_pp", [&] { return from_pp(true); });
        attempt("iv_pp_cc", [&] { return from_pp(false); });
    }
    for (const auto& m : opt.methods) attempt(m.name(), [&] { return run_method(data, m, opt.pipeline); });
    return rep;
}

/// Runs every replication of a scenario. Replications are independent and
/// may run on several worker threads; results are stored by replication
/// index, so the output does not depend on the worker count.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg, const RunOptions& opt = {})
{
    if (cfg.n_reps < 1) throw PreconditionError("n_reps must be >= 1");
    ScenarioResult res;
    res.config = cfg;
    res.labels = result_labels(opt);
    res.replications.resize(static_cast<std::size_t>(cfg.n_reps));

    std::atomic<int> next{0};
    std::atomic<int> done{0};
    std::mutex fail_mutex;
    std::optional<ReplicationError> failure;
    auto work = [&] {
        for (int i = next++; i < cfg.n_reps; i = next++) {
            try {
                res.replications[static_cast<std::size_t>(i)] = run_replication(cfg, i, opt);
            } catch (const std::exception& e) {
                const std::lock_guard lock(fail_mutex);
                if (!failure || failure->index > i)
                    failure.emplace(i, derive_seed(cfg.seed, static_cast<std::uint64_t>(i)), e.what());
                continue;
            }
            const int d = ++done;
            if (opt.progress) opt.progress(d, cfg.n_reps);
        }
    };
    const int workers = std::clamp(opt.workers, 1, cfg.n_reps);
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failure) throw *failure;

    const double beta = cfg.coefficients.y.beta;
    for (std::size_t k = 0; k < res.labels.size(); ++k) {
        std::vector<EstimateResult> ok;
        std::size_t failed = 0;
        for (const auto& rep : res.replications) {
            const auto& e = rep.estimates[k];
            if (e.ok) ok.push_back(e.estimate);
            else ++failed;
        }
        res.metrics.push_back(compute_metrics(res.labels[k], ok, beta, failed));
    }
    return res;
}

/// One cell of the scenario grid.
struct ScenarioCell {
    std::string name;
    int n_per_provider = 408;
    Missingness missingness = Missingness::none;
};

/// Scenario 1 varies provider size without missing data; scenario 2 varies the
/// missingness mechanism at n_j = 408.
inline std::vector<ScenarioCell> standard_cells()
{
    return {{"s1_n24", 24, Missingness::none},
            {"s1_n108", 108, Missingness::none},
            {"s1_n408", 408, Missingness::none},
            {"s2_mcar", 408, Missingness::mcar},
            {"s2_mnar", 408, Missingness::mnar}};
}

struct FTable {
    std::vector<std::string> columns;
    std::vector<std::string> rows;
    std::vector<std::vector<double>> mean_f;  // [row][column]
};

/// Mean first-stage F per method (rows) and scenario cell (columns).
inline FTable f_stat_table(const std::vector<std::pair<std::string, ScenarioResult>>& cells)
{
    FTable t;
    for (const auto& [name, res] : cells) {
        t.columns.push_back(name);
        for (const auto& m : res.metrics) {
            if (m.method == "observational") continue;
            if (std::find(t.rows.begin(), t.rows.end(), m.method) == t.rows.end()) t.rows.push_back(m.method);
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    t.mean_f.assign(t.rows.size(), std::vector<double>(t.columns.size(), nan));
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (const auto& m : cells[c].second.metrics) {
            const auto it = std::find(t.rows.begin(), t.rows.end(), m.method);
            if (it != t.rows.end()) t.mean_f[static_cast<std::size_t>(it - t.rows.begin())][c] = m.mean_f;
        }
    }
    return t;
}

} // namespace ppiv
