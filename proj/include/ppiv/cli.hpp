#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ppiv/io.hpp"

namespace ppiv::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { ok = 0, config_error = 2, runtime_error = 3, no_data = 4 };

namespace detail {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

inline void ensure_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory '" + dir + "': " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline ordered_json requirements_json(const std::vector<MethodRequirements>& reqs)
{
    ordered_json arr = ordered_json::array();
    for (const auto& r : reqs) {
        arr.push_back({{"method", r.method.name()},
                       {"n_j_min", r.n_j_min},
                       {"complete_case", to_string(r.cc_mode)},
                       {"outcome_covariates", r.outcome_covariates == OutcomeCovariates::all ? "all" : "obs_only"}});
    }
    return arr;
}

inline ordered_json coefficients_json(const GenCoefficients& c)
{
    ordered_json j;
    j["y"] = {{"intercept", c.y.intercept}, {"beta", c.y.beta}, {"w1", c.y.w1},
              {"w2", c.y.w2},               {"u", c.y.u},       {"sigma", c.y.sigma}};
    j["x_a"] = {{"intercept", c.x_a.intercept}, {"beta_pp", c.x_a.beta_pp}, {"u", c.x_a.u},
                {"w1", c.x_a.w1},               {"w2", c.x_a.w2}};
    j["x_b"] = {{"intercept", c.x_b.intercept},
                {"time", c.x_b.time},
                {"u", c.x_b.u},
                {"w1", c.x_b.w1},
                {"w2", c.x_b.w2},
                {"omega", {c.x_b.omega(0, 0), c.x_b.omega(0, 1), c.x_b.omega(1, 0), c.x_b.omega(1, 1)}}};
    j["pp"] = {{"p_initial_b", c.pp.p_initial_b},
               {"p_switch_a_to_b", c.pp.p_switch_a_to_b},
               {"p_switch_b_to_a", c.pp.p_switch_b_to_a},
               {"window_low", c.pp.window_low},
               {"window_high", c.pp.window_high}};
    j["mnar"] = {{"intercept", c.mnar.intercept}, {"w1", c.mnar.w1}, {"w2", c.mnar.w2}, {"u", c.mnar.u},
                 {"ystar", c.mnar.ystar},         {"v", c.mnar.v},   {"v_w1", c.mnar.v_w1}, {"v_w2", c.mnar.v_w2}};
    j["covariates"] = {{"provider_mean_sd", c.w.provider_mean_sd}, {"sd", c.w.sd}};
    return j;
}

inline std::string json_text(const ordered_json& j) { return j.dump(2) + "\n"; }

} // namespace detail

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::optional<int> reps;
    std::optional<std::string> methods;  // comma list, "all" or "none"
    std::optional<std::string> link;
    std::optional<std::string> se;
    std::optional<int> workers;  // does not affect any output byte
    bool calibrate = false;
    bool quiet = false;
};

/// Runs every cell of a simulation configuration and writes metrics.csv,
/// fstats.csv, replications.csv, manifest.json (deterministic) and
/// timing.json (wall-clock, not deterministic).
inline int cmd_simulate(const SimulateOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    namespace fs = std::filesystem;
    using detail::ordered_json;
    io::SimulationConfig sc;
    std::string digest;
    std::vector<io::SimulationCell> cells;
    try {
        const std::string bytes = io::read_file(opt.config_path);
        sc = io::parse_simulation_config(bytes, opt.config_path);
        // Command-line overrides are folded into the digest so that distinct
        // runs never share one; worker count is excluded because it cannot
        // change any output.
        std::string overrides;
        if (opt.seed) { sc.base.seed = *opt.seed; overrides += "seed=" + std::to_string(*opt.seed) + "\n"; }
        if (opt.reps) {
            if (*opt.reps < 1) throw io::ConfigError("--reps", 0, "must be >= 1");
            sc.base.n_reps = *opt.reps;
            overrides += "reps=" + std::to_string(*opt.reps) + "\n";
        }
        auto flag = [](const std::string& name, const auto& fn) {
            try {
                fn();
            } catch (const io::ConfigError&) {
                throw;
            } catch (const std::exception& e) {
                throw io::ConfigError(name, 0, e.what());
            }
        };
        if (opt.methods) {
            flag("--methods", [&] { sc.methods = io::detail::parse_methods(*opt.methods); });
            overrides += "methods=" + *opt.methods + "\n";
        }
        if (opt.link) {
            flag("--link", [&] { sc.base.link = io::detail::parse_link(*opt.link); });
            overrides += "link=" + *opt.link + "\n";
        }
        if (opt.se) {
            flag("--se", [&] { sc.se = io::detail::parse_se(*opt.se); });
            overrides += "se=" + *opt.se + "\n";
        }
        if (opt.calibrate && !sc.calibrate) {
            sc.calibrate = true;
            overrides += "calibrate=true\n";
        }
        if (opt.workers) {
            if (*opt.workers < 1) throw io::ConfigError("--workers", 0, "must be >= 1");
            sc.workers = *opt.workers;
        }
        digest = io::sha256_hex(overrides.empty() ? bytes : bytes + "\n# overrides\n" + overrides);
        cells = io::expand_cells(sc);
    } catch (const io::ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const std::exception& e) {
        err << "config error: " << e.what() << "\n";
        return config_error;
    }

    try {
        detail::ensure_dir(opt.out_dir);
        RunOptions ro;
        ro.methods = sc.methods;
        ro.benchmarks = sc.benchmarks;
        ro.workers = sc.workers;
        ro.pipeline.se = sc.se;

        std::ostringstream metrics, reps, calib;
        io::write_digest_line(metrics, digest);
        io::write_csv_row(metrics, {"cell", "generator", "n_per_provider", "missingness", "method", "n_ok", "n_failed",
                                    "bias", "mcse", "coverage", "rmse", "mean_f"});
        io::write_digest_line(reps, digest);
        io::write_csv_row(reps, {"cell", "rep", "seed", "method", "ok", "beta_hat", "se", "ci_low", "ci_high",
                                 "f_statistic", "n_used", "j_used", "missing_fraction", "error"});

        ordered_json manifest;
        manifest["command"] = "simulate";
        manifest["manifest_digest"] = digest;
        manifest["config"] = fs::path(opt.config_path).filename().string();
        manifest["software_version"] = kVersion;
        manifest["seed"] = sc.base.seed;
        manifest["reps"] = sc.base.n_reps;
        manifest["providers"] = sc.base.n_providers;
        manifest["generator"] = to_string(sc.base.generator);
        manifest["link"] = to_string(sc.base.link);
        manifest["se"] = to_string(sc.se);
        std::vector<MethodRequirements> reqs;
        if (sc.benchmarks) {
            MethodRequirements pp = requirements_for(MethodId(MethodId::Kind::true_pp));
            reqs.push_back(pp);
        }
        for (const auto& m : sc.methods) reqs.push_back(requirements_for(m));
        manifest["requirements"] = detail::requirements_json(reqs);
        manifest["cells"] = ordered_json::array();

        ordered_json timing;
        timing["workers"] = sc.workers;
        timing["cells"] = ordered_json::object();
        const auto t_all = std::chrono::steady_clock::now();

        std::vector<std::pair<std::string, ScenarioResult>> results;
        for (auto& cell : cells) {
            if (sc.calibrate) {
                const auto cr = calibrate(cell.config, default_targets(cell.config.generator));
                cell.config.coefficients = cr.coefficients;
                calib << "[" << cell.name << "]\n" << cr.report();
            }
            if (!opt.quiet) err << "cell " << cell.name << ": " << cell.config.n_reps << " replications\n";
            const auto t0 = std::chrono::steady_clock::now();
            ScenarioResult res = run_scenario(cell.config, ro);
            timing["cells"][cell.name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

            for (const auto& m : res.metrics) {
                io::write_csv_row(metrics, {cell.name, to_string(cell.config.generator),
                                            std::to_string(cell.config.n_per_provider),
                                            to_string(cell.config.missingness), m.method, std::to_string(m.n_reps),
                                            std::to_string(m.n_failed), io::format_number(m.bias),
                                            io::format_number(m.mcse), io::format_number(m.coverage),
                                            io::format_number(m.rmse), io::format_number(m.mean_f)});
            }
            for (const auto& rep : res.replications) {
                for (const auto& e : rep.estimates) {
                    const auto& r = e.estimate;
                    io::write_csv_row(
                        reps, {cell.name, std::to_string(rep.index), std::to_string(rep.seed), e.label,
                               e.ok ? "1" : "0", e.ok ? io::format_roundtrip(r.beta_hat) : "",
                               e.ok ? io::format_roundtrip(r.se) : "", e.ok ? io::format_roundtrip(r.ci_low) : "",
                               e.ok ? io::format_roundtrip(r.ci_high) : "",
                               e.ok ? io::format_roundtrip(r.f_statistic) : "",
                               e.ok ? std::to_string(r.n_used) : "", e.ok ? std::to_string(r.j_used) : "",
                               io::format_roundtrip(rep.missing_fraction), e.error});
                }
            }
            manifest["cells"].push_back({{"name", cell.name},
                                         {"n_per_provider", cell.config.n_per_provider},
                                         {"missingness", to_string(cell.config.missingness)},
                                         {"coefficients", detail::coefficients_json(cell.config.coefficients)}});
            results.emplace_back(cell.name, std::move(res));
        }
        timing["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_all).count();

        const FTable ft = f_stat_table(results);
        std::ostringstream fstats;
        io::write_digest_line(fstats, digest);
        std::vector<std::string> head{"method"};
        head.insert(head.end(), ft.columns.begin(), ft.columns.end());
        io::write_csv_row(fstats, head);
        for (std::size_t r = 0; r < ft.rows.size(); ++r) {
            std::vector<std::string> row{ft.rows[r]};
            for (double v : ft.mean_f[r]) row.push_back(io::format_number(v));
            io::write_csv_row(fstats, row);
        }

        const fs::path dir(opt.out_dir);
        detail::write_text(dir / "metrics.csv", metrics.str());
        detail::write_text(dir / "fstats.csv", fstats.str());
        detail::write_text(dir / "replications.csv", reps.str());
        detail::write_text(dir / "manifest.json", detail::json_text(manifest));
        detail::write_text(dir / "timing.json", detail::json_text(timing));
        if (sc.calibrate) detail::write_text(dir / "calibration.txt", "# manifest_digest: " + digest + "\n" + calib.str());
        if (!opt.quiet) out << "wrote " << results.size() << " cell(s) to " << opt.out_dir << "\n";
        return ok;
    } catch (const ReplicationError& e) {
        err << "runtime error in " << e.what() << "\n";
        return runtime_error;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return runtime_error;
    }
}

// ---------------------------------------------------------------------------
// generate: export one simulated replication as CSV

struct GenerateOptions {
    std::string config_path;
    std::string out_csv;
    int rep = 0;
    std::optional<int> n_per_provider;
    std::optional<std::string> missingness;
    std::optional<std::uint64_t> seed;
};

/// Writes the dataset replication `rep` of the first configured cell would
/// analyse (the same draw cmd_simulate uses).
inline int cmd_generate(const GenerateOptions& opt, std::ostream& err = std::cerr)
{
    ScenarioConfig cfg;
    std::string digest;
    try {
        const std::string bytes = io::read_file(opt.config_path);
        auto sc = io::parse_simulation_config(bytes, opt.config_path);
        cfg = io::expand_cells(sc).front().config;
        std::string overrides = "rep=" + std::to_string(opt.rep) + "\n";
        if (opt.seed) { cfg.seed = *opt.seed; overrides += "seed=" + std::to_string(*opt.seed) + "\n"; }
        if (opt.n_per_provider) {
            if (*opt.n_per_provider < 1) throw io::ConfigError("--n", 0, "must be >= 1");
            cfg.n_per_provider = *opt.n_per_provider;
            overrides += "n=" + std::to_string(*opt.n_per_provider) + "\n";
        }
        if (opt.missingness) {
            try {
                cfg.missingness = io::detail::parse_missingness(*opt.missingness);
            } catch (const std::exception& e) {
                throw io::ConfigError("--missingness", 0, e.what());
            }
            overrides += "missingness=" + *opt.missingness + "\n";
        }
        if (opt.rep < 0) throw io::ConfigError("--rep", 0, "must be >= 0");
        if (sc.calibrate) cfg.coefficients = calibrate(cfg, default_targets(cfg.generator)).coefficients;
        digest = io::sha256_hex(bytes + "\n# overrides\n" + overrides);
    } catch (const std::exception& e) {
        err << "config error: " << e.what() << "\n";
        return config_error;
    }
    try {
        const PanelDataset data = simulate_dataset(cfg, derive_seed(cfg.seed, static_cast<std::uint64_t>(opt.rep)));
        std::ostringstream os;
        io::write_dataset_csv(os, data, digest);
        const auto parent = std::filesystem::path(opt.out_csv).parent_path();
        if (!parent.empty()) detail::ensure_dir(parent.string());
        detail::write_text(opt.out_csv, os.str());
        return ok;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return runtime_error;
    }
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
    std::string csv_path;
    std::optional<std::string> spec_path;  // default: the layout written by `generate`
    std::string methods = "all";
    std::string out_dir = "out";
    std::string se = "naive";
    bool quiet = false;
};

/// Analysis spec used when no spec file is given: the export layout, with
/// every remaining column a covariate, partial if any entry is empty.
inline io::AnalysisSpec infer_spec(const io::CsvTable& t)
{
    io::AnalysisSpec s;
    const std::set<std::string> reserved{"provider_id", "order_index", "time_index", "date", "x", "y", "true_pp"};
    if (!t.column("order_index") && t.column("date")) {
        s.order.reset();
        s.date = "date";
    }
    if (t.column("time_index")) s.time = "time_index";
    if (t.column("true_pp")) s.true_pp = "true_pp";
    for (std::size_t c = 0; c < t.header.size(); ++c) {
        if (reserved.count(t.header[c])) continue;
        bool any_empty = false;
        for (const auto& row : t.rows) any_empty = any_empty || io::trim(row[c]).empty();
        (any_empty ? s.partial : s.observed).push_back(t.header[c]);
    }
    return s;
}

/// Applies each method's data requirements and estimates the treatment
/// effect. Writes estimates.csv, ledger.csv and manifest.json. Methods that
/// are left without data are reported (exit 4) while the others complete.
inline int cmd_analyze(const AnalyzeOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    namespace fs = std::filesystem;
    using detail::ordered_json;
    PanelDataset data;
    std::vector<MethodId> methods;
    PipelineOptions po;
    std::string digest;
    try {
        methods = io::detail::parse_methods(opt.methods);
        po.se = io::detail::parse_se(opt.se);
    } catch (const std::exception& e) {
        err << "config error: " << e.what() << "\n";
        return config_error;
    }
    try {
        std::string spec_bytes;
        io::AnalysisSpec spec;
        std::ifstream in(opt.csv_path, std::ios::binary);
        if (!in) throw io::SchemaError("cannot open '" + opt.csv_path + "'");
        std::ostringstream raw;
        raw << in.rdbuf();
        std::istringstream csv_in(raw.str());
        const io::CsvTable table = io::read_csv(csv_in);
        if (opt.spec_path) {
            spec_bytes = io::read_file(*opt.spec_path);
            spec = io::parse_analysis_spec(spec_bytes, *opt.spec_path);
        } else {
            spec = infer_spec(table);
        }
        data = io::dataset_from_csv(table, spec);
        digest = io::sha256_hex(raw.str() + "\n# spec\n" + spec_bytes + "\n# methods=" + opt.methods +
                                "\n# se=" + opt.se + "\n");
    } catch (const std::exception& e) {
        err << "schema error: " << e.what() << "\n";
        return config_error;
    }

    try {
        detail::ensure_dir(opt.out_dir);
        std::ostringstream est, led;
        io::write_digest_line(est, digest);
        io::write_csv_row(est, {"label", "status", "beta_hat", "se", "ci_low", "ci_high", "f_statistic", "n_used",
                                "j_used", "message"});
        io::write_digest_line(led, digest);
        io::write_csv_row(led, {"method", "n_j_min", "complete_case", "covariates", "records_in", "providers_in",
                                "records_after_cc", "providers_after_cc", "providers_dropped_min_size",
                                "records_dropped_min_size", "records_without_z", "n_used", "j_used",
                                "dropped_provider_ids"});
        bool any_empty = false;
        bool any_failure = false;
        auto estimate_row = [&](const std::string& label, const EstimateResult& r, const std::string& msg) {
            io::write_csv_row(est, {label, "ok", io::format_roundtrip(r.beta_hat), io::format_roundtrip(r.se),
                                    io::format_roundtrip(r.ci_low), io::format_roundtrip(r.ci_high),
                                    io::format_roundtrip(r.f_statistic), std::to_string(r.n_used),
                                    std::to_string(r.j_used), msg});
        };
        auto failure_row = [&](const std::string& label, const std::string& status, const std::string& msg) {
            io::write_csv_row(est, {label, status, "", "", "", "", "", "", "", msg});
        };
        auto join = [](const std::vector<std::string>& v, const char* sep) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
            return s;
        };
        auto ledger_row = [&](const PreparationLedger& l) {
            io::write_csv_row(led, {l.method, std::to_string(l.n_j_min), to_string(l.cc_mode),
                                    join(l.covariates_used, ";"), std::to_string(l.records_in),
                                    std::to_string(l.providers_in), std::to_string(l.records_after_cc),
                                    std::to_string(l.providers_after_cc), std::to_string(l.providers_dropped_min_size),
                                    std::to_string(l.records_dropped_min_size), std::to_string(l.records_without_z),
                                    std::to_string(l.n_used), std::to_string(l.j_used),
                                    join(l.dropped_provider_ids, ";")});
        };

        try {
            estimate_row("observational", run_observational(data), "");
        } catch (const EmptyResultError& e) {
            any_empty = true;
            failure_row("observational", "no_data", e.what());
        } catch (const std::exception& e) {
            any_failure = true;
            failure_row("observational", "error", e.what());
        }

        bool has_pp = data.n_records() > 0;
        for (const auto& p : data.providers)
            for (const auto& r : p.records) has_pp = has_pp && r.true_pp.has_value();
        std::vector<MethodRequirements> reqs;
        if (has_pp) {
            MethodRequirements full = requirements_for(MethodId(MethodId::Kind::true_pp));
            MethodRequirements cc = full;
            cc.cc_mode = CompleteCaseMode::outcome_and_covariates;
            cc.outcome_covariates = OutcomeCovariates::all;
            reqs.push_back(full);
            reqs.push_back(cc);
        }
        for (const auto& m : methods) reqs.push_back(requirements_for(m));

        for (std::size_t k = 0; k < reqs.size(); ++k) {
            const auto& req = reqs[k];
            std::string label = req.method.name();
            if (req.method.kind() == MethodId::Kind::true_pp) label = k == 0 ? "iv_pp" : "iv_pp_cc";
            try {
                MethodRun run = run_method_detailed(data, req, po);
                run.ledger.method = label;
                ledger_row(run.ledger);
                std::string msg = join(run.estimate.warnings, "; ");
                estimate_row(label, run.estimate, msg);
            } catch (const EmptyResultError& e) {
                any_empty = true;
                failure_row(label, "no_data", e.what());
                if (!opt.quiet) err << label << ": " << e.what() << "\n";
            } catch (const std::exception& e) {
                any_failure = true;
                failure_row(label, "error", e.what());
                if (!opt.quiet) err << label << ": " << e.what() << "\n";
            }
        }

        ordered_json manifest;
        manifest["command"] = "analyze";
        manifest["manifest_digest"] = digest;
        manifest["input"] = fs::path(opt.csv_path).filename().string();
        manifest["software_version"] = kVersion;
        manifest["se"] = to_string(po.se);
        manifest["records"] = data.n_records();
        manifest["providers"] = data.n_providers();
        manifest["covariates_observed"] = data.schema.observed;
        manifest["covariates_partial"] = data.schema.partial;
        manifest["requirements"] = detail::requirements_json(reqs);

        const fs::path dir(opt.out_dir);
        detail::write_text(dir / "estimates.csv", est.str());
        detail::write_text(dir / "ledger.csv", led.str());
        detail::write_text(dir / "manifest.json", detail::json_text(manifest));
        if (!opt.quiet) out << "wrote estimates for " << reqs.size() + 1 << " analyses to " << opt.out_dir << "\n";
        if (any_failure) return runtime_error;
        return any_empty ? no_data : ok;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return runtime_error;
    }
}

// ---------------------------------------------------------------------------
// describe

struct DescribeOptions {
    std::string csv_path;
    std::optional<std::string> spec_path;
};

struct Quantiles {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Type-7 sample quantiles (linear interpolation between order statistics).
inline Quantiles quantiles(std::vector<double> v)
{
    if (v.empty()) throw EmptyResultError("quantiles of an empty sample");
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        const double h = p * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

struct Description {
    std::vector<std::pair<int, std::pair<std::size_t, std::size_t>>> per_period;  // T -> (records, treated)
    Quantiles provider_share;
    std::size_t n_records = 0;
    std::size_t n_providers = 0;
    std::vector<std::pair<std::string, std::size_t>> missing;  // column -> missing count
};

inline Description describe(const PanelDataset& data)
{
    Description d;
    d.n_records = data.n_records();
    d.n_providers = data.n_providers();
    std::map<int, std::pair<std::size_t, std::size_t>> periods;
    std::vector<double> shares;
    std::size_t y_missing = 0;
    std::vector<std::size_t> w_missing(data.schema.n_partial(), 0);
    for (const auto& p : data.providers) {
        std::size_t treated = 0;
        for (const auto& r : p.records) {
            auto& slot = periods[r.time_index];
            ++slot.first;
            slot.second += static_cast<std::size_t>(r.x);
            treated += static_cast<std::size_t>(r.x);
            if (!r.y) ++y_missing;
            for (std::size_t k = 0; k < r.w_miss.size(); ++k)
                if (!r.w_miss[k]) ++w_missing[k];
        }
        shares.push_back(static_cast<double>(treated) / static_cast<double>(p.size()));
    }
    d.per_period.assign(periods.begin(), periods.end());
    d.provider_share = quantiles(shares);
    d.missing.emplace_back("y", y_missing);
    for (const auto& name : data.schema.observed) d.missing.emplace_back(name, 0);
    for (std::size_t k = 0; k < w_missing.size(); ++k) d.missing.emplace_back(data.schema.partial[k], w_missing[k]);
    return d;
}

inline int cmd_describe(const DescribeOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    PanelDataset data;
    try {
        const io::CsvTable table = io::read_csv_file(opt.csv_path);
        const io::AnalysisSpec spec =
            opt.spec_path ? io::parse_analysis_spec(io::read_file(*opt.spec_path), *opt.spec_path) : infer_spec(table);
        data = io::dataset_from_csv(table, spec);
    } catch (const std::exception& e) {
        err << "schema error: " << e.what() << "\n";
        return config_error;
    }
    const Description d = describe(data);
    const double n = static_cast<double>(d.n_records);
    out << "records: " << d.n_records << ", providers: " << d.n_providers << "\n\n";
    out << "treatment B share by period\n";
    io::write_csv_row(out, {"period", "records", "treated", "share"});
    for (const auto& [t, c] : d.per_period) {
        io::write_csv_row(out, {std::to_string(t), std::to_string(c.first), std::to_string(c.second),
                                io::format_number(static_cast<double>(c.second) / static_cast<double>(c.first))});
    }
    out << "\nper-provider treatment B proportion\n";
    io::write_csv_row(out, {"min", "q1", "median", "q3", "max"});
    const auto& q = d.provider_share;
    io::write_csv_row(out, {io::format_number(q.min), io::format_number(q.q1), io::format_number(q.median),
                            io::format_number(q.q3), io::format_number(q.max)});
    out << "\nmissing values\n";
    io::write_csv_row(out, {"column", "missing", "percent"});
    for (const auto& [name, m] : d.missing) {
        io::write_csv_row(out, {name, std::to_string(m), io::format_number(100.0 * static_cast<double>(m) / n)});
    }
    return ok;
}

} // namespace ppiv::cli
