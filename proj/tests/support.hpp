#pragma once

#include <random>
#include <string>

#include "ppiv/core.hpp"

namespace ppiv::test {

/// Random panel with `n_obs` always-observed and `n_miss` partially observed
/// covariates; order_index runs 1..n_j and time_index is ceil(12 i / n_j).
inline PanelDataset random_panel(std::mt19937_64& rng, int j_max, int n_max, int n_obs = 1, int n_miss = 1,
                                 double p_missing = 0.0, double p_y_missing = 0.0)
{
    std::uniform_int_distribution<int> j_dist(1, j_max);
    std::uniform_int_distribution<int> n_dist(1, n_max);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    PanelDataset d;
    for (int k = 0; k < n_obs; ++k) d.schema.observed.push_back("o" + std::to_string(k + 1));
    for (int k = 0; k < n_miss; ++k) d.schema.partial.push_back("m" + std::to_string(k + 1));
    const int j = j_dist(rng);
    for (int p = 0; p < j; ++p) {
        Provider prov{"p" + std::to_string(p + 1), {}};
        const int n = n_dist(rng);
        const double pref = unit(rng);
        for (int i = 1; i <= n; ++i) {
            PatientRecord r;
            r.order_index = i;
            r.time_index = (12 * i + n - 1) / n;
            r.x = unit(rng) < pref ? 1 : 0;
            r.y = normal(rng) + r.x;
            if (unit(rng) < p_y_missing) r.y.reset();
            for (int k = 0; k < n_obs; ++k) r.w_obs.push_back(normal(rng));
            for (int k = 0; k < n_miss; ++k) {
                const double w = normal(rng);
                r.w_miss.push_back(unit(rng) < p_missing ? std::nullopt : std::optional<double>(w));
            }
            prov.records.push_back(std::move(r));
        }
        d.providers.push_back(std::move(prov));
    }
    return d;
}

} // namespace ppiv::test
