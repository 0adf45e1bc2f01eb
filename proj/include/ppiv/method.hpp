#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ppiv {

/// Identifies an instrument construction method.
///
/// `prev_b` is parameterized by the window length; the fixed names
/// prevpatient / prev2patient / prev5patient / prev10patient are aliases for
/// b = 1, 2, 5, 10. `true_pp` is the simulation-only benchmark that uses the
/// generating preference directly.
class MethodId {
public:
    enum class Kind {
        prev_b,
        allprevprop,
        allprop,
        alldichmean,
        alldichmedian,
        epp,
        epp_rirs,
        star,
        true_pp,
    };

    constexpr MethodId() = default;
    constexpr explicit MethodId(Kind kind) : kind_(kind) {}

    static MethodId prev(int b)
    {
        if (b < 1) {
            throw std::invalid_argument("prev_b window must be >= 1, got " + std::to_string(b));
        }
        MethodId id(Kind::prev_b);
        id.b_ = b;
        return id;
    }

    [[nodiscard]] constexpr Kind kind() const { return kind_; }
    [[nodiscard]] constexpr int window() const { return b_; }

    [[nodiscard]] std::string name() const
    {
        switch (kind_) {
        case Kind::prev_b:
            return b_ == 1 ? "prevpatient" : "prev" + std::to_string(b_) + "patient";
        case Kind::allprevprop: return "allprevprop";
        case Kind::allprop: return "allprop";
        case Kind::alldichmean: return "alldichmean";
        case Kind::alldichmedian: return "alldichmedian";
        case Kind::epp: return "epp";
        case Kind::epp_rirs: return "epp_rirs";
        case Kind::star: return "star";
        case Kind::true_pp: return "true_pp";
        }
        return "unknown";
    }

    /// Accepts every name produced by name() plus "prev_b(<b>)".
    static MethodId parse(std::string_view text)
    {
        const std::string s(text);
        if (s == "prevpatient") return prev(1);
        if (s == "allprevprop") return MethodId(Kind::allprevprop);
        if (s == "allprop") return MethodId(Kind::allprop);
        if (s == "alldichmean") return MethodId(Kind::alldichmean);
        if (s == "alldichmedian") return MethodId(Kind::alldichmedian);
        if (s == "epp") return MethodId(Kind::epp);
        if (s == "epp_rirs") return MethodId(Kind::epp_rirs);
        if (s == "star") return MethodId(Kind::star);
        if (s == "true_pp") return MethodId(Kind::true_pp);

        auto parse_window = [&](std::string_view digits) -> int {
            if (digits.empty() || digits.size() > 6) return -1;
            int b = 0;
            for (char c : digits) {
                if (c < '0' || c > '9') return -1;
                b = b * 10 + (c - '0');
            }
            return b;
        };
        const std::string_view sv(s);
        if (sv.starts_with("prev") && sv.ends_with("patient")) {
            const int b = parse_window(sv.substr(4, sv.size() - 4 - 7));
            if (b >= 1) return prev(b);
        }
        if (sv.starts_with("prev_b(") && sv.ends_with(")")) {
            const int b = parse_window(sv.substr(7, sv.size() - 8));
            if (b >= 1) return prev(b);
        }
        throw std::invalid_argument("unknown method '" + s +
                                    "' (expected one of: prevpatient, prev2patient, prev5patient, "
                                    "prev10patient, prev_b(<b>), allprevprop, allprop, alldichmean, "
                                    "alldichmedian, epp, epp_rirs, star)");
    }

    friend constexpr bool operator==(const MethodId& a, const MethodId& b)
    {
        return a.kind_ == b.kind_ && (a.kind_ != Kind::prev_b || a.b_ == b.b_);
    }

private:
    Kind kind_ = Kind::allprevprop;
    int b_ = 1;
};

/// The eleven named construction methods, in reporting order.
inline std::vector<MethodId> all_construction_methods()
{
    using K = MethodId::Kind;
    return {MethodId(K::allprop),      MethodId(K::alldichmean), MethodId(K::alldichmedian),
            MethodId::prev(1),         MethodId::prev(2),        MethodId::prev(5),
            MethodId::prev(10),        MethodId(K::allprevprop), MethodId(K::epp),
            MethodId(K::epp_rirs),     MethodId(K::star)};
}

} // namespace ppiv
