#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "ppiv/core.hpp"
#include "ppiv/pipeline.hpp"
#include "ppiv/simulation.hpp"

namespace ppiv::io {

/// Malformed configuration or analysis-spec file; `line` is 1-based (0 when
/// the problem is not tied to a line).
class ConfigError : public Error {
public:
    ConfigError(const std::string& source, int line, const std::string& what)
        : Error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what), line(line)
    {
    }
    int line;
};

/// Input CSV does not match the declared schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Text helpers

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',')
{
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto e = s.find(sep, pos);
        const auto item = trim(s.substr(pos, e == std::string_view::npos ? std::string_view::npos : e - pos));
        if (!item.empty()) out.push_back(item);
        if (e == std::string_view::npos) break;
        pos = e + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s)
{
    const std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::optional<long long> parse_integer(std::string_view s)
{
    const std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
    return v;
}

/// Six significant digits; empty for non-finite values.
inline std::string format_number(double v)
{
    if (!std::isfinite(v)) return {};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// Shortest text that parses back to exactly `v`; empty for non-finite values.
inline std::string format_roundtrip(double v)
{
    if (!std::isfinite(v)) return {};
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline std::string sha256_hex(std::string_view bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path, 0, "cannot open file");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// ---------------------------------------------------------------------------
// Key-value files: `key = value` per line, `#` starts a comment, dotted keys
// name sections (e.g. `y.sigma`).

struct KeyValue {
    std::string key;
    std::string value;
    int line = 0;
};

inline std::vector<KeyValue> parse_key_values(std::string_view text, const std::string& source)
{
    std::vector<KeyValue> out;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string body = trim(std::string_view(raw).substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(source, line, "expected 'key = value'");
        KeyValue kv{trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)), line};
        if (kv.key.empty()) throw ConfigError(source, line, "empty key");
        const bool key_ok = std::all_of(kv.key.begin(), kv.key.end(), [](char c) {
            return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
        });
        if (!key_ok) throw ConfigError(source, line, "invalid key '" + kv.key + "'");
        if (!seen.insert(kv.key).second) throw ConfigError(source, line, "duplicate key '" + kv.key + "'");
        out.push_back(std::move(kv));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Simulation configuration

struct SimulationConfig {
    ScenarioConfig base;                 // coefficients, generator, J, reps, seed, link
    std::vector<int> sizes{408};         // n_j per cell
    std::vector<Missingness> missingness{Missingness::none};
    std::vector<MethodId> methods = all_construction_methods();
    bool benchmarks = true;
    int workers = 1;
    SeKind se = SeKind::naive;
    bool calibrate = false;
};

struct SimulationCell {
    std::string name;
    ScenarioConfig config;
};

/// Cartesian product of provider sizes and missingness mechanisms.
inline std::vector<SimulationCell> expand_cells(const SimulationConfig& sc)
{
    std::vector<SimulationCell> cells;
    for (int n : sc.sizes) {
        for (Missingness m : sc.missingness) {
            ScenarioConfig cfg = sc.base;
            cfg.n_per_provider = n;
            cfg.missingness = m;
            cells.push_back({"n" + std::to_string(n) + "_" + to_string(m), cfg});
        }
    }
    return cells;
}

namespace detail {

inline Missingness parse_missingness(const std::string& s)
{
    if (s == "none") return Missingness::none;
    if (s == "mcar") return Missingness::mcar;
    if (s == "mnar") return Missingness::mnar;
    throw std::invalid_argument("unknown missingness '" + s + "' (expected one of: none, mcar, mnar)");
}

inline Generator parse_generator(const std::string& s)
{
    if (s == "A" || s == "a") return Generator::A;
    if (s == "B" || s == "b") return Generator::B;
    throw std::invalid_argument("unknown generator '" + s + "' (expected A or B)");
}

inline Link parse_link(const std::string& s)
{
    if (s == "logit") return Link::logit;
    if (s == "linear") return Link::linear;
    throw std::invalid_argument("unknown link '" + s + "' (expected logit or linear)");
}

inline SeKind parse_se(const std::string& s)
{
    if (s == "naive") return SeKind::naive;
    if (s == "corrected") return SeKind::corrected;
    throw std::invalid_argument("unknown standard error '" + s + "' (expected naive or corrected)");
}

inline bool parse_bool(const std::string& s)
{
    if (s == "true" || s == "yes" || s == "1") return true;
    if (s == "false" || s == "no" || s == "0") return false;
    throw std::invalid_argument("expected a boolean (true/false), got '" + s + "'");
}

inline std::vector<MethodId> parse_methods(const std::string& s)
{
    if (s == "all") return all_construction_methods();
    if (s == "none") return {};
    std::vector<MethodId> out;
    for (const auto& item : split_list(s)) out.push_back(MethodId::parse(item));
    return out;
}

inline double to_double(const std::string& s)
{
    const auto v = parse_double(s);
    if (!v) throw std::invalid_argument("expected a number, got '" + s + "'");
    return *v;
}

inline int to_int(const std::string& s)
{
    const auto v = parse_integer(s);
    if (!v || *v < std::numeric_limits<int>::min() || *v > std::numeric_limits<int>::max()) {
        throw std::invalid_argument("expected an integer, got '" + s + "'");
    }
    return static_cast<int>(*v);
}

inline std::uint64_t to_u64(const std::string& s)
{
    const std::string t = trim(s);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
        throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
    }
    return v;
}

} // namespace detail

/// Parses a simulation configuration. Every key is optional; unknown keys
/// are errors. The generator is resolved first because it selects the
/// default coefficient set that coefficient keys then override.
inline SimulationConfig parse_simulation_config(std::string_view text, const std::string& source = "config")
{
    const auto entries = parse_key_values(text, source);
    SimulationConfig sc;
    for (const auto& kv : entries) {
        if (kv.key != "generator") continue;
        try {
            sc.base.generator = detail::parse_generator(kv.value);
        } catch (const std::exception& e) {
            throw ConfigError(source, kv.line, "generator: " + std::string(e.what()));
        }
    }
    sc.base.coefficients = default_coefficients(sc.base.generator);
    auto& c = sc.base.coefficients;

    using Setter = std::function<void(const std::string&)>;
    auto num = [](double& field) -> Setter { return [&field](const std::string& v) { field = detail::to_double(v); }; };
    const std::map<std::string, Setter> setters{
        {"generator", [](const std::string&) {}},
        {"coefficients",
         [](const std::string& v) {
             if (v != "default") throw std::invalid_argument("unknown coefficient set '" + v + "' (expected default)");
         }},
        {"providers", [&](const std::string& v) { sc.base.n_providers = detail::to_int(v); }},
        {"n_per_provider",
         [&](const std::string& v) {
             sc.sizes.clear();
             for (const auto& s : split_list(v)) sc.sizes.push_back(detail::to_int(s));
             if (sc.sizes.empty()) throw std::invalid_argument("empty list");
         }},
        {"missingness",
         [&](const std::string& v) {
             sc.missingness.clear();
             for (const auto& s : split_list(v)) sc.missingness.push_back(detail::parse_missingness(s));
             if (sc.missingness.empty()) throw std::invalid_argument("empty list");
         }},
        {"target_missing_rate", num(sc.base.target_missing_rate)},
        {"reps", [&](const std::string& v) { sc.base.n_reps = detail::to_int(v); }},
        {"seed", [&](const std::string& v) { sc.base.seed = detail::to_u64(v); }},
        {"link", [&](const std::string& v) { sc.base.link = detail::parse_link(v); }},
        {"se", [&](const std::string& v) { sc.se = detail::parse_se(v); }},
        {"methods", [&](const std::string& v) { sc.methods = detail::parse_methods(v); }},
        {"benchmarks", [&](const std::string& v) { sc.benchmarks = detail::parse_bool(v); }},
        {"workers", [&](const std::string& v) { sc.workers = detail::to_int(v); }},
        {"calibrate", [&](const std::string& v) { sc.calibrate = detail::parse_bool(v); }},
        {"y.intercept", num(c.y.intercept)},
        {"y.w1", num(c.y.w1)},
        {"y.w2", num(c.y.w2)},
        {"y.u", num(c.y.u)},
        {"y.sigma", num(c.y.sigma)},
        {"x_a.intercept", num(c.x_a.intercept)},
        {"x_a.u", num(c.x_a.u)},
        {"x_a.w1", num(c.x_a.w1)},
        {"x_a.w2", num(c.x_a.w2)},
        {"x_b.intercept", num(c.x_b.intercept)},
        {"x_b.time", num(c.x_b.time)},
        {"x_b.u", num(c.x_b.u)},
        {"x_b.w1", num(c.x_b.w1)},
        {"x_b.w2", num(c.x_b.w2)},
        {"x_b.omega",
         [&](const std::string& v) {
             const auto parts = split_list(v);
             if (parts.size() != 4) throw std::invalid_argument("expected four numbers (row-major 2x2)");
             c.x_b.omega << detail::to_double(parts[0]), detail::to_double(parts[1]), detail::to_double(parts[2]),
                 detail::to_double(parts[3]);
             (void)psd_sqrt(c.x_b.omega);
         }},
        {"pp.p_initial_b", num(c.pp.p_initial_b)},
        {"pp.p_switch_a_to_b", num(c.pp.p_switch_a_to_b)},
        {"pp.p_switch_b_to_a", num(c.pp.p_switch_b_to_a)},
        {"pp.window_low", num(c.pp.window_low)},
        {"pp.window_high", num(c.pp.window_high)},
        {"mnar.intercept", num(c.mnar.intercept)},
        {"mnar.w1", num(c.mnar.w1)},
        {"mnar.w2", num(c.mnar.w2)},
        {"mnar.u", num(c.mnar.u)},
        {"mnar.ystar", num(c.mnar.ystar)},
        {"mnar.v", num(c.mnar.v)},
        {"mnar.v_w1", num(c.mnar.v_w1)},
        {"mnar.v_w2", num(c.mnar.v_w2)},
        {"covariates.provider_mean_sd", num(c.w.provider_mean_sd)},
        {"covariates.sd", num(c.w.sd)},
    };
    for (const auto& kv : entries) {
        const auto it = setters.find(kv.key);
        if (it == setters.end()) throw ConfigError(source, kv.line, "unknown key '" + kv.key + "'");
        try {
            it->second(kv.value);
        } catch (const std::exception& e) {
            throw ConfigError(source, kv.line, kv.key + ": " + e.what());
        }
    }
    if (sc.base.n_providers < 1) throw ConfigError(source, 0, "providers must be >= 1");
    if (sc.base.n_reps < 1) throw ConfigError(source, 0, "reps must be >= 1");
    if (sc.workers < 1) throw ConfigError(source, 0, "workers must be >= 1");
    for (int n : sc.sizes)
        if (n < 1) throw ConfigError(source, 0, "n_per_provider entries must be >= 1");
    if (!(sc.base.target_missing_rate >= 0.0 && sc.base.target_missing_rate <= 1.0)) {
        throw ConfigError(source, 0, "target_missing_rate must lie in [0,1]");
    }
    return sc;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> lines;  // source line of each row
    std::vector<std::string> comments;  // leading `#` lines, without the marker

    [[nodiscard]] std::optional<std::size_t> column(const std::string& name) const
    {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line, int line_no)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    if (quoted) throw SchemaError("line " + std::to_string(line_no) + ": unterminated quoted field");
    out.push_back(std::move(cur));
    return out;
}

/// Reads a header-first CSV. Lines starting with `#` before the header are
/// kept as comments; blank lines are skipped.
inline CsvTable read_csv(std::istream& in)
{
    CsvTable t;
    std::string line;
    int line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (!have_header && line.starts_with("#")) {
            t.comments.push_back(trim(std::string_view(line).substr(1)));
            continue;
        }
        auto fields = split_csv_line(line, line_no);
        if (!have_header) {
            for (auto& f : fields) f = trim(f);
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size()) {
            throw SchemaError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                              " fields, found " + std::to_string(fields.size()));
        }
        t.rows.push_back(std::move(fields));
        t.lines.push_back(line_no);
    }
    if (!have_header) throw SchemaError("CSV has no header row");
    return t;
}

inline CsvTable read_csv_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot open '" + path + "'");
    return read_csv(in);
}

inline std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields)
{
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << csv_escape(fields[i]);
    }
    out << '\n';
}

inline void write_digest_line(std::ostream& out, const std::string& digest)
{
    out << "# manifest_digest: " << digest << '\n';
}

// ---------------------------------------------------------------------------
// Panel datasets as CSV

/// Column roles of an applied-analysis CSV.
struct AnalysisSpec {
    std::string provider = "provider_id";
    std::optional<std::string> order = "order_index";
    std::optional<std::string> date;      // ISO-8601 YYYY-MM-DD; used when `order` is unset
    std::optional<std::string> time;      // explicit prescription period
    std::string treatment = "x";
    std::string outcome = "y";
    std::vector<std::string> observed;
    std::vector<std::string> partial;
    std::optional<std::string> true_pp;
};

inline AnalysisSpec parse_analysis_spec(std::string_view text, const std::string& source = "spec")
{
    AnalysisSpec s;
    bool order_set = false;
    for (const auto& kv : parse_key_values(text, source)) {
        auto need = [&] {
            if (kv.value.empty()) throw ConfigError(source, kv.line, kv.key + ": empty value");
        };
        if (kv.key == "provider") { need(); s.provider = kv.value; }
        else if (kv.key == "order") { need(); s.order = kv.value; order_set = true; }
        else if (kv.key == "date") { need(); s.date = kv.value; }
        else if (kv.key == "time") { need(); s.time = kv.value; }
        else if (kv.key == "treatment") { need(); s.treatment = kv.value; }
        else if (kv.key == "outcome") { need(); s.outcome = kv.value; }
        else if (kv.key == "covariates.observed") s.observed = split_list(kv.value);
        else if (kv.key == "covariates.partial") s.partial = split_list(kv.value);
        else if (kv.key == "true_pp") { need(); s.true_pp = kv.value; }
        else throw ConfigError(source, kv.line, "unknown key '" + kv.key + "'");
    }
    if (s.date && order_set) throw ConfigError(source, 0, "give either 'order' or 'date', not both");
    if (s.date) s.order.reset();
    return s;
}

/// Spec matching the layout written by write_dataset_csv.
inline AnalysisSpec simulation_spec(const CovariateSchema& schema)
{
    AnalysisSpec s;
    s.time = "time_index";
    s.observed = schema.observed;
    s.partial = schema.partial;
    s.true_pp = "true_pp";
    return s;
}

/// Writes a dataset with full-precision numbers; missing values are empty.
inline void write_dataset_csv(std::ostream& out, const PanelDataset& data, const std::string& digest = {})
{
    if (!digest.empty()) write_digest_line(out, digest);
    bool has_pp = true;
    for (const auto& p : data.providers)
        for (const auto& r : p.records) has_pp = has_pp && r.true_pp.has_value();
    std::vector<std::string> header{"provider_id", "order_index", "time_index", "x", "y"};
    header.insert(header.end(), data.schema.observed.begin(), data.schema.observed.end());
    header.insert(header.end(), data.schema.partial.begin(), data.schema.partial.end());
    if (has_pp) header.emplace_back("true_pp");
    write_csv_row(out, header);
    for (const auto& p : data.providers) {
        for (const auto& r : p.records) {
            std::vector<std::string> f{p.id, std::to_string(r.order_index), std::to_string(r.time_index),
                                       std::to_string(r.x), r.y ? format_roundtrip(*r.y) : std::string()};
            for (double w : r.w_obs) f.push_back(format_roundtrip(w));
            for (const auto& w : r.w_miss) f.push_back(w ? format_roundtrip(*w) : std::string());
            if (has_pp) f.push_back(format_roundtrip(*r.true_pp));
            write_csv_row(out, f);
        }
    }
}

namespace detail {

/// Days since 1970-01-01 for an ISO-8601 calendar date (YYYY-MM-DD).
inline std::optional<std::pair<long, int>> parse_iso_date(std::string_view s)
{
    const std::string t = trim(s);
    if (t.size() < 10 || t[4] != '-' || t[7] != '-') return std::nullopt;
    const auto y = parse_integer(std::string_view(t).substr(0, 4));
    const auto m = parse_integer(std::string_view(t).substr(5, 2));
    const auto d = parse_integer(std::string_view(t).substr(8, 2));
    if (!y || !m || !d || *m < 1 || *m > 12 || *d < 1 || *d > 31) return std::nullopt;
    if (t.size() > 10 && t[10] != 'T' && t[10] != ' ') return std::nullopt;
    // Civil-from-days inverse (proleptic Gregorian).
    const long yy = *y - (*m <= 2 ? 1 : 0);
    const long era = (yy >= 0 ? yy : yy - 399) / 400;
    const long yoe = yy - era * 400;
    const long mp = (*m + 9) % 12;
    const long doy = (153 * mp + 2) / 5 + *d - 1;
    const long doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    const long days = era * 146097 + doe - 719468;
    return std::make_pair(days, static_cast<int>(*y * 12 + *m - 1));
}

} // namespace detail

/// Builds a panel from a CSV table. Records are ordered within provider by
/// `order` (or by `date`, ties broken by file order); providers appear in
/// order of first occurrence. Without a time column, dated data use calendar
/// months counted from the earliest month, and undated data use
/// ceil(12 i / n_j).
inline PanelDataset dataset_from_csv(const CsvTable& t, const AnalysisSpec& spec)
{
    auto col = [&](const std::string& name) {
        const auto c = t.column(name);
        if (!c) throw SchemaError("missing column '" + name + "'");
        return *c;
    };
    const std::size_t c_prov = col(spec.provider);
    const std::size_t c_x = col(spec.treatment);
    const std::size_t c_y = col(spec.outcome);
    const std::optional<std::size_t> c_order = spec.order ? std::optional(col(*spec.order)) : std::nullopt;
    const std::optional<std::size_t> c_date = spec.date ? std::optional(col(*spec.date)) : std::nullopt;
    if (!c_order && !c_date) throw SchemaError("an order or date column is required");
    const std::optional<std::size_t> c_time = spec.time ? std::optional(col(*spec.time)) : std::nullopt;
    const std::optional<std::size_t> c_pp = spec.true_pp ? std::optional(col(*spec.true_pp)) : std::nullopt;
    std::vector<std::size_t> c_obs, c_part;
    for (const auto& n : spec.observed) c_obs.push_back(col(n));
    for (const auto& n : spec.partial) c_part.push_back(col(n));

    struct Row {
        long key = 0;
        int month = 0;
        std::size_t file_pos = 0;
        PatientRecord rec;
    };
    std::vector<std::string> order_of_providers;
    std::map<std::string, std::vector<Row>> by_provider;
    int min_month = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& f = t.rows[i];
        const std::string where = "line " + std::to_string(t.lines[i]) + ": ";
        const std::string pid = trim(f[c_prov]);
        if (pid.empty()) throw SchemaError(where + "empty provider id");
        Row row;
        row.file_pos = i;
        const auto x = parse_integer(f[c_x]);
        if (!x || (*x != 0 && *x != 1)) throw SchemaError(where + "treatment must be 0 or 1, got '" + f[c_x] + "'");
        row.rec.x = static_cast<int>(*x);
        if (!trim(f[c_y]).empty()) {
            const auto y = parse_double(f[c_y]);
            if (!y) throw SchemaError(where + "outcome is not a number: '" + f[c_y] + "'");
            row.rec.y = *y;
        }
        if (c_order) {
            const auto o = parse_integer(f[*c_order]);
            if (!o || *o < 1) throw SchemaError(where + "order index must be an integer >= 1, got '" + f[*c_order] + "'");
            row.key = static_cast<long>(*o);
        } else {
            const auto d = detail::parse_iso_date(f[*c_date]);
            if (!d) throw SchemaError(where + "date must be ISO-8601 YYYY-MM-DD, got '" + f[*c_date] + "'");
            row.key = d->first;
            row.month = d->second;
            min_month = std::min(min_month, row.month);
        }
        if (c_time) {
            const auto tv = parse_integer(f[*c_time]);
            if (!tv || *tv < 1) throw SchemaError(where + "time index must be an integer >= 1, got '" + f[*c_time] + "'");
            row.rec.time_index = static_cast<int>(*tv);
        }
        for (std::size_t k = 0; k < c_obs.size(); ++k) {
            const auto v = parse_double(f[c_obs[k]]);
            if (!v) {
                throw SchemaError(where + "fully observed covariate '" + spec.observed[k] + "' must be numeric, got '" +
                                  f[c_obs[k]] + "'");
            }
            row.rec.w_obs.push_back(*v);
        }
        for (std::size_t k = 0; k < c_part.size(); ++k) {
            if (trim(f[c_part[k]]).empty()) {
                row.rec.w_miss.emplace_back(std::nullopt);
                continue;
            }
            const auto v = parse_double(f[c_part[k]]);
            if (!v) {
                throw SchemaError(where + "covariate '" + spec.partial[k] + "' must be numeric or empty, got '" +
                                  f[c_part[k]] + "'");
            }
            row.rec.w_miss.emplace_back(*v);
        }
        if (c_pp && !trim(f[*c_pp]).empty()) {
            const auto v = parse_double(f[*c_pp]);
            if (!v) throw SchemaError(where + "true_pp must be numeric, got '" + f[*c_pp] + "'");
            row.rec.true_pp = *v;
        }
        auto [it, inserted] = by_provider.try_emplace(pid);
        if (inserted) order_of_providers.push_back(pid);
        it->second.push_back(std::move(row));
    }
    if (order_of_providers.empty()) throw SchemaError("CSV has no data rows");

    PanelDataset data;
    data.schema = {spec.observed, spec.partial};
    for (const auto& pid : order_of_providers) {
        auto& rows = by_provider[pid];
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.key < b.key; });
        Provider prov{pid, {}};
        const int n = static_cast<int>(rows.size());
        for (int i = 0; i < n; ++i) {
            PatientRecord rec = std::move(rows[static_cast<std::size_t>(i)].rec);
            if (c_order) {
                rec.order_index = static_cast<int>(rows[static_cast<std::size_t>(i)].key);
            } else {
                rec.order_index = i + 1;
            }
            if (!c_time) {
                rec.time_index = c_date ? rows[static_cast<std::size_t>(i)].month - min_month + 1
                                        : ppiv::detail::time_index(i + 1, n);
            }
            prov.records.push_back(std::move(rec));
        }
        data.providers.push_back(std::move(prov));
    }
    const auto violations = validate(data);
    if (!violations.empty()) {
        const auto& v = violations.front();
        throw SchemaError("invalid panel (" + std::to_string(violations.size()) + " problem(s)); first: provider '" +
                          v.provider_id + "'" +
                          (v.order_index > 0 ? " order " + std::to_string(v.order_index) : std::string()) + ": " +
                          v.message);
    }
    return data;
}

} // namespace ppiv::io
