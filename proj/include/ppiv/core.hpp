#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppiv/method.hpp"

namespace ppiv {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A filtering step or analysis left no records to work with.
class EmptyResultError : public Error {
public:
    using Error::Error;
};

/// An operation was called outside its documented domain.
class PreconditionError : public Error {
public:
    using Error::Error;
};

struct PatientRecord {
    int order_index = 1;  // 1-based rank within provider
    int time_index = 1;   // prescription period, >= 1
    int x = 0;            // 0 = treatment A, 1 = treatment B
    std::optional<double> y;
    std::vector<double> w_obs;
    std::vector<std::optional<double>> w_miss;  // nullopt <=> R = 1

    // Simulation-only truth.
    std::optional<double> true_pp;
    std::optional<double> true_theta;
    std::optional<double> latent_u;

    [[nodiscard]] bool covariates_complete() const
    {
        return std::all_of(w_miss.begin(), w_miss.end(), [](const auto& v) { return v.has_value(); });
    }
};

struct Provider {
    std::string id;
    std::vector<PatientRecord> records;

    [[nodiscard]] std::size_t size() const { return records.size(); }
};

struct CovariateSchema {
    std::vector<std::string> observed;
    std::vector<std::string> partial;

    [[nodiscard]] std::size_t n_observed() const { return observed.size(); }
    [[nodiscard]] std::size_t n_partial() const { return partial.size(); }
    friend bool operator==(const CovariateSchema&, const CovariateSchema&) = default;
};

struct PanelDataset {
    CovariateSchema schema;
    std::vector<Provider> providers;

    [[nodiscard]] std::size_t n_records() const
    {
        std::size_t n = 0;
        for (const auto& p : providers) n += p.size();
        return n;
    }
    [[nodiscard]] std::size_t n_providers() const { return providers.size(); }
};

enum class InstrumentLevel { per_patient, per_provider };

/// Instrument values aligned with a dataset: values[p][r] belongs to
/// providers[p].records[r]. Absent values mark non-calculable patients.
struct InstrumentSeries {
    MethodId method;
    InstrumentLevel level = InstrumentLevel::per_patient;
    std::vector<std::vector<std::optional<double>>> values;
    std::vector<std::string> warnings;

    [[nodiscard]] std::size_t n_present() const
    {
        std::size_t n = 0;
        for (const auto& v : values)
            n += static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](const auto& z) { return z.has_value(); }));
        return n;
    }
};

struct EstimateResult {
    MethodId method;
    std::string label;  // method name, or "observational" / "iv_pp" / "iv_pp_cc"
    double beta_hat = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double f_statistic = 0.0;
    std::size_t n_used = 0;
    std::size_t j_used = 0;
    std::vector<std::string> warnings;

    /// First-stage F below 10 is the conventional weak-instrument signal.
    [[nodiscard]] bool weak_instrument() const { return f_statistic < 10.0; }
    [[nodiscard]] bool covers(double beta) const { return ci_low <= beta && beta <= ci_high; }
};

struct Violation {
    std::string provider_id;
    int order_index = 0;  // 0 for provider- or dataset-level problems
    std::string message;
};

/// Reports every structural problem; an empty result means the dataset is
/// well-formed.
inline std::vector<Violation> validate(const PanelDataset& data)
{
    std::vector<Violation> out;
    const std::size_t n_obs = data.schema.n_observed();
    const std::size_t n_miss = data.schema.n_partial();
    std::set<std::string> seen_ids;
    for (const auto& prov : data.providers) {
        if (!seen_ids.insert(prov.id).second) {
            out.push_back({prov.id, 0, "duplicate provider id"});
        }
        if (prov.records.empty()) {
            out.push_back({prov.id, 0, "provider has no records"});
            continue;
        }
        std::set<int> orders;
        int prev_order = 0;
        int prev_time = 0;
        for (const auto& r : prov.records) {
            if (r.x != 0 && r.x != 1) {
                out.push_back({prov.id, r.order_index, "treatment x=" + std::to_string(r.x) + " not in {0,1}"});
            }
            if (r.order_index < 1) {
                out.push_back({prov.id, r.order_index, "order_index must be >= 1"});
            }
            if (!orders.insert(r.order_index).second) {
                out.push_back({prov.id, r.order_index, "duplicated order_index"});
            } else if (r.order_index < prev_order) {
                out.push_back({prov.id, r.order_index, "records not sorted by order_index"});
            }
            if (r.time_index < 1) {
                out.push_back({prov.id, r.order_index, "time_index must be >= 1"});
            }
            if (r.time_index < prev_time) {
                out.push_back({prov.id, r.order_index, "time_index decreases along order_index"});
            }
            if (r.w_obs.size() != n_obs || r.w_miss.size() != n_miss) {
                out.push_back({prov.id, r.order_index, "covariate count does not match schema"});
            }
            if (r.true_pp && (*r.true_pp < 0.0 || *r.true_pp > 1.0)) {
                out.push_back({prov.id, r.order_index, "true_pp outside [0,1]"});
            }
            prev_order = std::max(prev_order, r.order_index);
            prev_time = std::max(prev_time, r.time_index);
        }
        // Source data ranks run 1..n_j. Filtered views (complete_case) keep
        // their original ranks and are not expected to pass this check.
        if (!orders.empty() && (*orders.begin() != 1 || static_cast<std::size_t>(*orders.rbegin()) != orders.size())) {
            out.push_back({prov.id, 0, "order_index not contiguous from 1"});
        }
    }
    return out;
}

enum class CompleteCaseMode { outcome_only, outcome_and_covariates };

inline const char* to_string(CompleteCaseMode m)
{
    return m == CompleteCaseMode::outcome_only ? "outcome_only" : "outcome_and_covariates";
}

/// Keeps records with an observed outcome (and, in outcome_and_covariates
/// mode, every partially observed covariate present). Original order_index
/// values are retained; providers left empty are dropped.
inline PanelDataset complete_case(const PanelDataset& data, CompleteCaseMode mode)
{
    PanelDataset out;
    out.schema = data.schema;
    for (const auto& prov : data.providers) {
        Provider kept{prov.id, {}};
        for (const auto& r : prov.records) {
            if (!r.y) continue;
            if (mode == CompleteCaseMode::outcome_and_covariates && !r.covariates_complete()) continue;
            kept.records.push_back(r);
        }
        if (!kept.records.empty()) out.providers.push_back(std::move(kept));
    }
    if (out.providers.empty()) {
        throw EmptyResultError(std::string("complete_case(") + to_string(mode) + ") left no records");
    }
    return out;
}

struct FilterResult {
    PanelDataset data;
    std::size_t dropped_providers = 0;
    std::size_t dropped_records = 0;
};

inline FilterResult filter_min_provider_size(const PanelDataset& data, int n_min)
{
    if (n_min < 1) throw PreconditionError("n_min must be >= 1");
    FilterResult res;
    res.data.schema = data.schema;
    for (const auto& prov : data.providers) {
        if (prov.size() >= static_cast<std::size_t>(n_min)) {
            res.data.providers.push_back(prov);
        } else {
            ++res.dropped_providers;
            res.dropped_records += prov.size();
        }
    }
    if (res.data.providers.empty()) {
        throw EmptyResultError("no provider has at least " + std::to_string(n_min) + " records");
    }
    return res;
}

} // namespace ppiv
