#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "edgelab/ensemble.hpp"
#include "edgelab/errors.hpp"
#include "edgelab/stats.hpp"
#include "edgelab/summation.hpp"

namespace edgelab {

// ---------------------------------------------------------------------------
// Index patterns
//
// A pattern describes k index pairs (i_l, j_l). Each i_l is either a fresh
// name or merged with an earlier i_{l'}; likewise for j_l. Exclusions
// ("j2!=j1") add hard inequality constraints between names. Text form:
//
//     k=2; i2=i1; j2!=j1; s=1,1
//
// Pair numbers in the text are 1-based.

enum class IndexClass : char { I = 'i', J = 'j' };

struct IndexRef {
    IndexClass cls = IndexClass::I;
    int pair = 0;  // 0-based
    bool operator==(const IndexRef&) const = default;
};

struct IndexPattern {
    int k = 1;
    std::vector<std::optional<int>> i_merge;  // i_l == i_{target}, target < l
    std::vector<std::optional<int>> j_merge;
    std::vector<std::pair<IndexRef, IndexRef>> exclusions;
    std::vector<int> s;

    /// n = (s_1 + ... + s_k + k) / 2
    int order() const {
        return (std::accumulate(s.begin(), s.end(), 0) + k) / 2;
    }

    /// Name id of every index, i-names and j-names numbered in order of first
    /// appearance. i_name()[l], j_name()[l].
    std::vector<int> i_name() const { return names().first; }
    std::vector<int> j_name() const { return names().second; }

    int distinct_names() const {
        const auto [in, jn] = names();
        int mx = -1;
        for (int v : in) mx = std::max(mx, v);
        for (int v : jn) mx = std::max(mx, v);
        return mx + 1;
    }

    /// Number of pairs sharing no index with an earlier pair.
    int theta() const {
        int t = 0;
        for (int l = 0; l < k; ++l) {
            if (!i_merge[l] && !j_merge[l]) ++t;
        }
        return t;
    }

    int name_of(IndexRef r) const {
        const auto [in, jn] = names();
        return r.cls == IndexClass::I ? in[r.pair] : jn[r.pair];
    }

    std::string to_string() const;

private:
    std::pair<std::vector<int>, std::vector<int>> names() const {
        std::vector<int> in(k), jn(k);
        int next = 0;
        for (int l = 0; l < k; ++l) {
            in[l] = i_merge[l] ? in[*i_merge[l]] : next++;
            jn[l] = j_merge[l] ? jn[*j_merge[l]] : next++;
        }
        return {in, jn};
    }
};

inline std::string IndexPattern::to_string() const {
    std::ostringstream os;
    os << "k=" << k;
    for (int l = 0; l < k; ++l) {
        if (i_merge[l]) os << "; i" << l + 1 << "=i" << *i_merge[l] + 1;
        if (j_merge[l]) os << "; j" << l + 1 << "=j" << *j_merge[l] + 1;
    }
    for (const auto& [a, b] : exclusions) {
        os << "; " << static_cast<char>(a.cls) << a.pair + 1 << "!=" << static_cast<char>(b.cls) << b.pair + 1;
    }
    os << "; s=";
    for (int l = 0; l < k; ++l) os << (l ? "," : "") << s[l];
    return os.str();
}

/// Checks the index-set rules; throws ValidationError naming the violated rule.
inline void validate(const IndexPattern& p) {
    if (p.k < 1) throw ValidationError("pattern: k must be a positive integer");
    const auto k = static_cast<std::size_t>(p.k);
    if (p.i_merge.size() != k || p.j_merge.size() != k) {
        throw ValidationError("pattern: merge tables must have k entries");
    }
    if (p.s.size() != k) {
        throw ValidationError("pattern: s must list exactly k values");
    }
    for (int v : p.s) {
        if (v < 1 || v % 2 == 0) throw ValidationError("pattern: every s_l must be a positive odd integer");
    }
    for (int l = 0; l < p.k; ++l) {
        for (const auto& m : {p.i_merge[l], p.j_merge[l]}) {
            if (m && (*m < 0 || *m >= l)) {
                throw ValidationError("pattern rule 2 violated: pair " + std::to_string(l + 1) +
                                      " may only be merged with an earlier pair");
            }
        }
    }
    // Rule 3: two pairs never share both their i-name and their j-name.
    const auto in = p.i_name();
    const auto jn = p.j_name();
    for (int l = 0; l < p.k; ++l) {
        for (int r = 0; r < l; ++r) {
            if (in[l] == in[r] && jn[l] == jn[r]) {
                throw ValidationError("pattern rule 3 violated: pair " + std::to_string(l + 1) +
                                      " repeats the index pair of pair " + std::to_string(r + 1));
            }
        }
    }
    for (const auto& [a, b] : p.exclusions) {
        if (a.pair < 0 || a.pair >= p.k || b.pair < 0 || b.pair >= p.k) {
            throw ValidationError("pattern: exclusion refers to a pair outside 1..k");
        }
        if (p.name_of(a) == p.name_of(b)) {
            throw ValidationError("pattern: exclusion between two merged (identical) indices is unsatisfiable");
        }
    }
}

namespace detail {

inline IndexRef parse_ref(std::string_view tok, int k) {
    if (tok.size() < 2 || (tok[0] != 'i' && tok[0] != 'j')) {
        throw ValidationError("pattern: bad index reference '" + std::string(tok) + "'");
    }
    int pair = 0;
    try {
        std::size_t used = 0;
        pair = std::stoi(std::string(tok.substr(1)), &used);
        if (used != tok.size() - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw ValidationError("pattern: bad index reference '" + std::string(tok) + "'");
    }
    if (pair < 1 || pair > k) {
        throw ValidationError("pattern: index reference '" + std::string(tok) + "' outside 1..k");
    }
    return {tok[0] == 'i' ? IndexClass::I : IndexClass::J, pair - 1};
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace detail

inline IndexPattern parse_pattern(std::string_view text) {
    const auto parts = detail::split(text, ';');
    std::optional<int> k;
    std::optional<std::vector<int>> s;
    std::vector<std::pair<std::string, std::string>> merges, excl;
    for (const auto& part : parts) {
        if (part.empty()) continue;
        if (auto ne = part.find("!="); ne != std::string::npos) {
            excl.emplace_back(detail::trim(part.substr(0, ne)), detail::trim(part.substr(ne + 2)));
            continue;
        }
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw ValidationError("pattern: cannot parse '" + part + "'");
        const std::string lhs = detail::trim(part.substr(0, eq));
        const std::string rhs = detail::trim(part.substr(eq + 1));
        if (lhs == "k") {
            try {
                k = std::stoi(rhs);
            } catch (const std::exception&) {
                throw ValidationError("pattern: k must be an integer");
            }
        } else if (lhs == "s") {
            std::vector<int> vals;
            for (const auto& v : detail::split(rhs, ',')) {
                try {
                    vals.push_back(std::stoi(v));
                } catch (const std::exception&) {
                    throw ValidationError("pattern: bad s value '" + v + "'");
                }
            }
            s = vals;
        } else {
            merges.emplace_back(lhs, rhs);
        }
    }
    if (!k) throw ValidationError("pattern: missing k");
    if (*k < 1) throw ValidationError("pattern: k must be a positive integer");
    IndexPattern p;
    p.k = *k;
    p.i_merge.assign(static_cast<std::size_t>(p.k), std::nullopt);
    p.j_merge.assign(static_cast<std::size_t>(p.k), std::nullopt);
    p.s = s.value_or(std::vector<int>{});
    for (const auto& [lhs, rhs] : merges) {
        const IndexRef a = detail::parse_ref(lhs, p.k);
        const IndexRef b = detail::parse_ref(rhs, p.k);
        if (a.cls != b.cls) {
            throw ValidationError("pattern rule 1 violated: i_l and j_l' are always distinct ('" + lhs + "=" + rhs +
                                  "')");
        }
        auto& table = a.cls == IndexClass::I ? p.i_merge : p.j_merge;
        if (table[a.pair]) throw ValidationError("pattern: '" + lhs + "' merged twice");
        if (b.pair >= a.pair) {
            throw ValidationError("pattern rule 2 violated: '" + lhs + "' may only be merged with an earlier pair");
        }
        table[a.pair] = b.pair;
    }
    for (const auto& [lhs, rhs] : excl) {
        p.exclusions.emplace_back(detail::parse_ref(lhs, p.k), detail::parse_ref(rhs, p.k));
    }
    validate(p);
    return p;
}

// ---------------------------------------------------------------------------
// Term evaluation by variable elimination on the bipartite index graph.

namespace detail {

struct Factor {
    std::vector<int> vars;      // at most two
    std::vector<double> data;   // row-major over vars, size N^{vars.size()}
};

// f_l(h) = h^2 - 1/N when l > 0 and s_l = 1, otherwise h^{s_l + 1}.
inline double building_block(double h, int l, int s, double inv_n) {
    if (l > 0 && s == 1) return h * h - inv_n;
    double r = 1.0;
    for (int e = 0; e < s + 1; ++e) r *= h;
    return r;
}

inline double contract(std::vector<Factor> factors, int num_vars, std::size_t n) {
    std::vector<bool> alive(static_cast<std::size_t>(num_vars), true);
    double free_factor = 1.0;
    for (int v = 0; v < num_vars; ++v) {
        const bool used = std::any_of(factors.begin(), factors.end(), [v](const Factor& f) {
            return std::find(f.vars.begin(), f.vars.end(), v) != f.vars.end();
        });
        if (!used) {
            free_factor *= static_cast<double>(n);
            alive[static_cast<std::size_t>(v)] = false;
        }
    }

    for (;;) {
        // Pick the live variable whose elimination creates the smallest factor.
        int best = -1;
        std::vector<int> best_other;
        for (int v = 0; v < num_vars; ++v) {
            if (!alive[static_cast<std::size_t>(v)]) continue;
            std::vector<int> other;
            for (const auto& f : factors) {
                if (std::find(f.vars.begin(), f.vars.end(), v) == f.vars.end()) continue;
                for (int u : f.vars) {
                    if (u != v && std::find(other.begin(), other.end(), u) == other.end()) other.push_back(u);
                }
            }
            if (best < 0 || other.size() < best_other.size()) {
                best = v;
                best_other = other;
            }
        }
        if (best < 0) break;
        if (best_other.size() > 2) {
            throw UnsupportedOrder("pattern requires an intermediate tensor of arity > 2");
        }
        std::sort(best_other.begin(), best_other.end());

        // Local variable order: best_other..., best. Strides per factor.
        std::vector<Factor> touching, rest;
        for (auto& f : factors) {
            (std::find(f.vars.begin(), f.vars.end(), best) != f.vars.end() ? touching : rest).push_back(std::move(f));
        }
        std::vector<int> local = best_other;
        local.push_back(best);
        std::vector<std::vector<std::size_t>> strides;
        for (const auto& f : touching) {
            std::vector<std::size_t> st(local.size(), 0);
            for (std::size_t a = 0; a < f.vars.size(); ++a) {
                const auto pos = static_cast<std::size_t>(std::find(local.begin(), local.end(), f.vars[a]) - local.begin());
                st[pos] += (a + 1 == f.vars.size()) ? 1 : n;
            }
            strides.push_back(std::move(st));
        }

        Factor out;
        out.vars = best_other;
        const std::size_t outer = best_other.empty() ? 1 : (best_other.size() == 1 ? n : n * n);
        out.data.assign(outer, 0.0);
        const std::size_t d = best_other.size();
        for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t u0 = d >= 1 ? (d == 2 ? o / n : o) : 0;
            const std::size_t u1 = d == 2 ? o % n : 0;
            CompensatedSum acc;
            for (std::size_t x = 0; x < n; ++x) {
                double prod = 1.0;
                for (std::size_t t = 0; t < touching.size(); ++t) {
                    const auto& st = strides[t];
                    std::size_t idx = st[d] * x;
                    if (d >= 1) idx += st[0] * u0;
                    if (d == 2) idx += st[1] * u1;
                    prod *= touching[t].data[idx];
                }
                acc += prod;
            }
            out.data[o] = acc.value();
        }
        rest.push_back(std::move(out));
        factors = std::move(rest);
        alive[static_cast<std::size_t>(best)] = false;
    }

    double result = free_factor;
    for (const auto& f : factors) result *= f.data.at(0);
    return result;
}

// Unconstrained sum over all assignments, with names in the same union-find
// class forced equal.
inline double unconstrained_sum(const DenseMatrix& h, const IndexPattern& p, const std::vector<int>& cls_of_name,
                                int num_classes) {
    const std::size_t n = h.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const auto in = p.i_name();
    const auto jn = p.j_name();
    std::vector<Factor> factors;
    for (int l = 0; l < p.k; ++l) {
        const int a = cls_of_name[static_cast<std::size_t>(in[l])];
        const int b = cls_of_name[static_cast<std::size_t>(jn[l])];
        Factor f;
        if (a == b) {
            f.vars = {a};
            f.data.resize(n);
            for (std::size_t x = 0; x < n; ++x) f.data[x] = building_block(h(x, x), l, p.s[l], inv_n);
        } else {
            f.vars = {a, b};
            f.data.resize(n * n);
            for (std::size_t x = 0; x < n; ++x) {
                for (std::size_t y = 0; y < n; ++y) f.data[x * n + y] = building_block(h(x, y), l, p.s[l], inv_n);
            }
        }
        factors.push_back(std::move(f));
    }
    return contract(std::move(factors), num_classes, n);
}

}  // namespace detail

/// (1 / N^theta) * sum over all assignments of the pattern's names to
/// {1..N} of prod_l A_l(s_l), honoring the pattern's exclusions.
inline double evaluate_term(const DenseMatrix& h, const IndexPattern& p) {
    validate(p);
    const int names = p.distinct_names();
    if (h.size() < static_cast<std::size_t>(names)) {
        throw ValidationError("evaluate_term: N = " + std::to_string(h.size()) + " is smaller than the " +
                              std::to_string(names) + " distinct indices of the pattern");
    }
    std::vector<std::pair<int, int>> excl;
    for (const auto& [a, b] : p.exclusions) {
        std::pair<int, int> e{std::min(p.name_of(a), p.name_of(b)), std::max(p.name_of(a), p.name_of(b))};
        if (std::find(excl.begin(), excl.end(), e) == excl.end()) excl.push_back(e);
    }
    if (excl.size() > 16) throw ValidationError("pattern: too many exclusions");

    // Inclusion-exclusion over the inequality constraints.
    CompensatedSum total;
    for (std::uint32_t mask = 0; mask < (1u << excl.size()); ++mask) {
        std::vector<int> parent(static_cast<std::size_t>(names));
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int x) {
            while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
            return x;
        };
        int bits = 0;
        for (std::size_t e = 0; e < excl.size(); ++e) {
            if (!(mask >> e & 1u)) continue;
            ++bits;
            const int ra = find(excl[e].first);
            const int rb = find(excl[e].second);
            if (ra != rb) parent[static_cast<std::size_t>(std::max(ra, rb))] = std::min(ra, rb);
        }
        std::vector<int> cls(static_cast<std::size_t>(names));
        std::map<int, int> relabel;
        for (int v = 0; v < names; ++v) {
            const int r = find(v);
            auto [it, inserted] = relabel.try_emplace(r, static_cast<int>(relabel.size()));
            cls[static_cast<std::size_t>(v)] = it->second;
        }
        const double term = detail::unconstrained_sum(h, p, cls, static_cast<int>(relabel.size()));
        total += (bits % 2 ? -term : term);
    }
    return total.value() / std::pow(static_cast<double>(h.size()), p.theta());
}

inline double evaluate_term(const MatrixSample& sample, const IndexPattern& p) {
    return evaluate_term(sample.entries, p);
}

// ---------------------------------------------------------------------------
// Correction sets

struct CorrectionSet {
    int ell = 0;
    std::vector<double> Z;  // Z[0] = Z_1
    double X = 0.0;         // Z_1 - 1
    std::size_t N = 0;

    double z(int n) const { return Z.at(static_cast<std::size_t>(n - 1)); }
};

struct CoefficientEntry {
    IndexPattern pattern;
    long long numerator = 1;
    long long denominator = 1;
};

using CoefficientTable = std::vector<CoefficientEntry>;

/// The order-1 and order-2 combinations written out explicitly: Z_1 is one
/// term, Z_2 four.
inline CoefficientTable default_coefficient_table() {
    return {
        {parse_pattern("k=1; s=1"), 1, 1},
        {parse_pattern("k=1; s=3"), 1, 1},
        {parse_pattern("k=2; s=1,1"), -2, 1},
        {parse_pattern("k=2; i2=i1; j2!=j1; s=1,1"), 1, 1},
        {parse_pattern("k=2; j2=j1; i2!=i1; s=1,1"), 1, 1},
    };
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

}  // namespace detail

/// CSV rows `pattern,numerator,denominator`; the pattern is quoted because
/// its s-list contains commas. A header row starting with "pattern" is skipped.
inline CoefficientTable parse_coefficient_table(std::string_view csv) {
    CoefficientTable table;
    std::istringstream in{std::string(csv)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto cells = detail::split_csv_line(t);
        if (cells.size() == 3 && cells[0] == "pattern") continue;
        if (cells.size() != 3) {
            throw ValidationError("coefficient table line " + std::to_string(line_no) + ": expected 3 columns");
        }
        CoefficientEntry e;
        try {
            e.pattern = parse_pattern(cells[0]);
            e.numerator = std::stoll(cells[1]);
            e.denominator = std::stoll(cells[2]);
        } catch (const ValidationError& err) {
            throw ValidationError("coefficient table line " + std::to_string(line_no) + ": " + err.what());
        } catch (const std::exception&) {
            throw ValidationError("coefficient table line " + std::to_string(line_no) + ": bad integer");
        }
        if (e.denominator == 0) {
            throw ValidationError("coefficient table line " + std::to_string(line_no) + ": zero denominator");
        }
        table.push_back(std::move(e));
    }
    return table;
}

inline std::string to_csv(const CoefficientTable& table) {
    std::ostringstream os;
    os << "pattern,numerator,denominator\n";
    for (const auto& e : table) os << '"' << e.pattern.to_string() << "\"," << e.numerator << ',' << e.denominator << '\n';
    return os.str();
}

/// Z_1 = (1/N) sum h^2 by one pass.
inline double closed_form_z1(const DenseMatrix& h) {
    CompensatedSum s;
    for (double v : h.data()) s += v * v;
    return s.value() / static_cast<double>(h.size());
}

/// Z_2 from row/column power sums in O(N^2):
///   (1/N) S4 - (2/N^2) S1 D + (1/N)(sum_i r_i Dr_i - AD) + (1/N)(sum_j c_j Dc_j - AD)
/// with a = h^2, d = a - 1/N, S1 = sum a, S4 = sum a^2, D = sum d,
/// r/Dr row sums of a/d, c/Dc column sums, AD = sum a d. The subtracted AD
/// removes the excluded diagonal j2 = j1 (resp. i2 = i1).
inline double closed_form_z2(const DenseMatrix& h) {
    const std::size_t n = h.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    CompensatedSum s1, s4, dsum, ad, row_term;
    std::vector<CompensatedSum> col_a(n), col_d(n);
    for (std::size_t i = 0; i < n; ++i) {
        CompensatedSum ra, rd;
        const auto row = h.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const double a = row[j] * row[j];
            const double d = a - inv_n;
            s1 += a;
            s4 += a * a;
            dsum += d;
            ad += a * d;
            ra += a;
            rd += d;
            col_a[j] += a;
            col_d[j] += d;
        }
        row_term += ra.value() * rd.value();
    }
    CompensatedSum col_term;
    for (std::size_t j = 0; j < n; ++j) col_term += col_a[j].value() * col_d[j].value();

    const double nd = static_cast<double>(n);
    const double t1 = s4.value() / nd;
    const double t2 = -2.0 * s1.value() * dsum.value() / (nd * nd);
    const double t3 = (row_term.value() - ad.value()) / nd;
    const double t4 = (col_term.value() - ad.value()) / nd;
    return t1 + t2 + t3 + t4;
}

/// Z_1..Z_ell. Orders 1 and 2 use the closed forms unless `table` supplies
/// terms of that order; orders >= 3 must come from `table`.
inline CorrectionSet compute_Z(const DenseMatrix& h, int ell, const CoefficientTable* table = nullptr) {
    if (ell < 1) throw ValidationError("compute_Z: ell must be >= 1");
    CorrectionSet out;
    out.ell = ell;
    out.N = h.size();
    out.Z.assign(static_cast<std::size_t>(ell), 0.0);
    for (int n = 1; n <= ell; ++n) {
        bool from_table = false;
        if (table) {
            CompensatedSum acc;
            for (const auto& e : *table) {
                if (e.pattern.order() != n) continue;
                from_table = true;
                acc += static_cast<double>(e.numerator) / static_cast<double>(e.denominator) *
                       evaluate_term(h, e.pattern);
            }
            if (from_table) out.Z[static_cast<std::size_t>(n - 1)] = acc.value();
        }
        if (from_table) continue;
        if (n == 1) {
            out.Z[0] = closed_form_z1(h);
        } else if (n == 2) {
            out.Z[1] = closed_form_z2(h);
        } else {
            throw UnsupportedOrder("Z_" + std::to_string(n) +
                                   " has no built-in closed form; supply a coefficient table with order-" +
                                   std::to_string(n) + " terms");
        }
    }
    out.X = out.Z[0] - 1.0;
    return out;
}

inline CorrectionSet compute_Z(const MatrixSample& s, int ell, const CoefficientTable* table = nullptr) {
    return compute_Z(s.entries, ell, table);
}

// ---------------------------------------------------------------------------
// Scaling study

using Sampler = std::function<MatrixSample(const EnsembleSpec&, std::uint64_t)>;

struct ScalingPoint {
    std::size_t N = 0;
    double q = 0.0;
    double spread = 0.0;    // median |Z_n - median Z_n|
    double spread_x = 0.0;  // same for X = Z_1 - 1
    double median = 0.0;
    double mean = 0.0;
    double standard_error = 0.0;
};

struct ScalingResult {
    int order = 1;
    std::vector<ScalingPoint> points;
    double q_exponent = 0.0;  // slope of log spread against log q
    double q_exponent_lo = 0.0;
    double q_exponent_hi = 0.0;
    double n_exponent = 0.0;  // slope of log spread against log N
    double n_exponent_lo = 0.0;
    double n_exponent_hi = 0.0;
    double x_n_exponent = 0.0;         // slope of log spread(X) against log N
    double x_predicted_n_exponent = 0.0;  // -(1/2 + b): spread(X) ~ 1/(sqrt(N) q)
    bool degenerate = false;           // some spread was exactly zero
};

struct ScalingOptions {
    int samples = 200;
    int bootstrap = 1000;
    std::uint64_t bootstrap_seed = 0x5EED;
    Sampler sampler = [](const EnsembleSpec& s, std::uint64_t i) { return sample(s, i); };
};

/// Fits how the spread of Z_n decays across the supplied specs (which
/// differ in N). The 95% intervals come from a seeded bootstrap over samples.
inline ScalingResult scaling_study(const std::vector<EnsembleSpec>& specs, int order, const ScalingOptions& opt) {
    if (order != 1 && order != 2) throw ValidationError("scaling_study: order must be 1 or 2");
    if (specs.size() < 2) throw ValidationError("scaling_study: need at least two values of N");
    if (opt.samples < 50) throw InsufficientSamples("scaling_study: M must be >= 50");

    ScalingResult out;
    out.order = order;
    std::vector<std::vector<double>> zs, xs;
    for (const auto& spec : specs) {
        std::vector<double> z, x;
        for (int m = 0; m < opt.samples; ++m) {
            const auto smp = opt.sampler(spec, static_cast<std::uint64_t>(m));
            const auto cs = compute_Z(smp, order);
            z.push_back(cs.z(order));
            x.push_back(cs.X);
        }
        ScalingPoint pt;
        pt.N = spec.N;
        pt.q = spec.q();
        pt.spread = stats::mad(z);
        pt.spread_x = stats::mad(x);
        pt.median = stats::median(z);
        pt.mean = stats::mean(z);
        pt.standard_error = stats::standard_error(z);
        if (pt.spread == 0.0 || pt.spread_x == 0.0) out.degenerate = true;
        out.points.push_back(pt);
        zs.push_back(std::move(z));
        xs.push_back(std::move(x));
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (out.degenerate) {
        out.q_exponent = out.q_exponent_lo = out.q_exponent_hi = nan;
        out.n_exponent = out.n_exponent_lo = out.n_exponent_hi = nan;
        out.x_n_exponent = nan;
        out.x_predicted_n_exponent = -(0.5 + specs.front().b);
        return out;
    }

    std::vector<double> lq, ln, ls, lx;
    for (const auto& pt : out.points) {
        lq.push_back(std::log(pt.q));
        ln.push_back(std::log(static_cast<double>(pt.N)));
        ls.push_back(std::log(pt.spread));
        lx.push_back(std::log(pt.spread_x));
    }
    out.q_exponent = stats::fit_line(lq, ls).slope;
    out.n_exponent = stats::fit_line(ln, ls).slope;
    out.x_n_exponent = stats::fit_line(ln, lx).slope;
    out.x_predicted_n_exponent = -(0.5 + specs.front().b);

    std::mt19937_64 rng(opt.bootstrap_seed);
    std::vector<double> bq, bn;
    std::vector<double> resample(static_cast<std::size_t>(opt.samples));
    for (int r = 0; r < opt.bootstrap; ++r) {
        std::vector<double> lsb;
        for (const auto& z : zs) {
            std::uniform_int_distribution<std::size_t> pick(0, z.size() - 1);
            for (double& v : resample) v = z[pick(rng)];
            lsb.push_back(std::log(std::max(stats::mad(resample), std::numeric_limits<double>::min())));
        }
        bq.push_back(stats::fit_line(lq, lsb).slope);
        bn.push_back(stats::fit_line(ln, lsb).slope);
    }
    out.q_exponent_lo = stats::quantile(bq, 0.025);
    out.q_exponent_hi = stats::quantile(bq, 0.975);
    out.n_exponent_lo = stats::quantile(bn, 0.025);
    out.n_exponent_hi = stats::quantile(bn, 0.975);
    return out;
}

}  // namespace edgelab
