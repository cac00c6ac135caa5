#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgelab/corrections.hpp"
#include "edgelab/ensemble.hpp"
#include "edgelab/errors.hpp"
#include "edgelab/parallel.hpp"
#include "edgelab/random.hpp"
#include "edgelab/scm.hpp"
#include "edgelab/spectral.hpp"
#include "edgelab/stats.hpp"

namespace edgelab {

using Json = nlohmann::ordered_json;

enum class ExperimentKind { Rigidity, LocalLaw, Fluctuation, Stability, Goe };

inline std::string_view to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::Rigidity: return "rigidity";
        case ExperimentKind::LocalLaw: return "locallaw";
        case ExperimentKind::Fluctuation: return "fluct";
        case ExperimentKind::Stability: return "stability";
        case ExperimentKind::Goe: return "goe";
    }
    return "?";
}

inline ExperimentKind parse_kind(std::string_view s) {
    for (auto k : {ExperimentKind::Rigidity, ExperimentKind::LocalLaw, ExperimentKind::Fluctuation,
                   ExperimentKind::Stability, ExperimentKind::Goe}) {
        if (s == to_string(k)) return k;
    }
    throw ValidationError("unknown experiment '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Local-law grid. Values are plain numbers or multiples of N^{-2/3},
// written "c*edge".

struct GridValue {
    double value = 0.0;
    bool edge_units = false;

    double at(std::size_t N) const {
        return edge_units ? value * std::pow(static_cast<double>(N), -2.0 / 3.0) : value;
    }
    bool operator==(const GridValue&) const = default;
};

struct GridPoint {
    double E = 0.0;
    double eta = 1.0;
    bool edge_point = false;  // E = +-N^{-2/3} and eta = N^{-2/3}
};

struct GridSpec {
    std::vector<GridValue> E{{0, false}, {-1, true}, {1, true}, {-0.04, false}, {0.04, false}, {-0.5, false}, {0.5, false}};
    std::vector<GridValue> eta{{1, true}};
    // Extra eta values log-spaced over [N^{-0.95}, 1].
    int eta_log_points = 8;

    std::vector<double> eta_values(std::size_t N) const {
        std::vector<double> out;
        const double lo = std::pow(static_cast<double>(N), -0.95);
        for (int i = 0; i < eta_log_points; ++i) {
            const double t = eta_log_points == 1 ? 1.0 : static_cast<double>(i) / (eta_log_points - 1);
            out.push_back(std::exp(std::log(lo) * (1.0 - t)));
        }
        for (const auto& v : eta) out.push_back(v.at(N));
        return out;
    }

    std::vector<GridPoint> points(std::size_t N) const {
        const double n = static_cast<double>(N);
        const double eta_min = std::pow(n, -0.99);
        std::vector<GridPoint> out;
        const auto etas = eta_values(N);
        for (const auto& e : E) {
            const double ev = e.at(N);
            if (std::fabs(ev) > 1.0) throw ValidationError("grid: |E| must be <= 1");
            for (std::size_t j = 0; j < etas.size(); ++j) {
                const double h = etas[j];
                if (h < eta_min || h > 1.0) throw ValidationError("grid: eta must lie in [N^-0.99, 1]");
                const bool eta_edge = j >= static_cast<std::size_t>(eta_log_points) &&
                                      eta[j - static_cast<std::size_t>(eta_log_points)] == GridValue{1, true};
                const bool edge = eta_edge && e.edge_units && std::fabs(e.value) == 1.0;
                out.push_back({ev, h, edge});
            }
        }
        return out;
    }

    bool operator==(const GridSpec&) const = default;
};

inline std::string to_string(const std::vector<GridValue>& vals) {
    std::string s;
    char buf[64];
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const auto r = std::to_chars(buf, buf + sizeof buf, vals[i].value);
        if (i) s += ",";
        s.append(buf, r.ptr);
        if (vals[i].edge_units) s += "*edge";
    }
    return s;
}

inline std::vector<GridValue> parse_grid_values(std::string_view text) {
    std::vector<GridValue> out;
    if (detail::trim(text).empty()) return out;
    for (const auto& raw : detail::split(text, ',')) {
        std::string tok = detail::trim(raw);
        GridValue v;
        const std::string suffix = "*edge";
        if (tok.size() >= suffix.size() && tok.compare(tok.size() - suffix.size(), suffix.size(), suffix) == 0) {
            v.edge_units = true;
            tok = detail::trim(tok.substr(0, tok.size() - suffix.size()));
        }
        std::size_t pos = 0;
        try {
            v.value = std::stod(tok, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (tok.empty() || pos != tok.size() || !std::isfinite(v.value)) {
            throw ValidationError("bad grid value '" + std::string(detail::trim(raw)) + "'");
        }
        out.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Options

struct ExperimentOptions {
    int k = 1;    // top eigenvalues recorded
    int ell = 2;  // correction order
    ModelOptions model;
    bool force_semicircle = false;  // model built from Z = (1, 0, ...)
    unsigned workers = 1;
    EigenBackend backend = EigenBackend::Auto;
    GridSpec grid;
    int ks_resamples = 10000;
    std::uint64_t stat_seed = 0x5EED;
    double c_stab = 2.0;
    double local_law_bound = 10.0;  // on the 0.99-quantile of N^{1/3} Lambda at edge points
    double trend_slope_max = 0.1;   // log-log slope of the median Lambda/rhs against N
    double s_ratio_lo = 0.5, s_ratio_hi = 2.0;
    double u_growth_min = 1.05;     // per doubling of N
    double max_degenerate_fraction = 0.01;
    // Fluctuation contract; NaN leaves a check off.
    double corr_floor = std::numeric_limits<double>::quiet_NaN();
    double corr_ceiling = std::numeric_limits<double>::quiet_NaN();
    double var_ratio_max = std::numeric_limits<double>::quiet_NaN();
    std::function<void(const std::string&)> log;
};

// ---------------------------------------------------------------------------
// Per-sample pipeline

struct LocalRecord {
    double lambda = 0.0;  // |m - m~| at z~
    double rhs = 0.0;
    double p_abs = 0.0;   // |P(z~, m)|
};

struct SampleRecord {
    std::uint64_t index = 0;
    std::uint64_t seed = 0;
    bool degenerate = false;
    std::string error;
    std::vector<double> top;
    std::vector<double> Z;
    double edge_root = 0.0;
    double edge_series = 0.0;
    std::vector<LocalRecord> local;
};

namespace detail {

inline std::vector<double> model_input(const CorrectionSet& cs, const ExperimentOptions& opt) {
    if (!opt.force_semicircle) return cs.Z;
    std::vector<double> z(cs.Z.size(), 0.0);
    z[0] = 1.0;
    return z;
}

inline void progress(const ExperimentOptions& opt, std::atomic<std::size_t>& done, std::size_t total,
                     const std::string& what) {
    const std::size_t d = ++done;
    const std::size_t step = std::max<std::size_t>(1, total / 10);
    if (opt.log && (d % step == 0 || d == total)) {
        opt.log(what + ": " + std::to_string(d) + "/" + std::to_string(total));
    }
}

}  // namespace detail

/// sample -> spectrum -> Z -> model -> statistics, for sample indices 0..M-1.
/// With `grid` non-empty, also the local-law quantities at z~ = L^ + E + i eta.
inline std::vector<SampleRecord> collect(const EnsembleSpec& spec, std::size_t M, const ExperimentOptions& opt,
                                         const std::vector<GridPoint>& grid = {}) {
    validate(spec);
    if (opt.k < 1 || static_cast<std::size_t>(opt.k) > spec.N) throw ValidationError("k must lie in [1, N]");
    std::atomic<std::size_t> done{0};
    const double n = static_cast<double>(spec.N);
    const std::string label = "N=" + std::to_string(spec.N);
    return parallel_map(M, opt.workers, [&](std::size_t i) {
        SampleRecord r;
        const auto smp = sample(spec, i);
        r.index = i;
        r.seed = smp.seed;
        const auto sp = eigen(smp, false, opt.backend);
        r.top.assign(sp.eigenvalues.begin(), sp.eigenvalues.begin() + opt.k);
        const auto cs = compute_Z(smp, opt.ell);
        r.Z = cs.Z;
        try {
            const auto model = build(detail::model_input(cs, opt), opt.model);
            r.edge_root = model.edge_root();
            r.edge_series = model.edge_series();
            for (const auto& g : grid) {
                const cplx zz(r.edge_series + g.E, g.eta);
                const cplx m = empirical_stieltjes(sp, zz);
                const cplx mt = stieltjes(model, zz).w;
                r.local.push_back({std::abs(m - mt), local_law_rhs(model, zz, n), std::abs(model.P(zz, m))});
            }
        } catch (const DegenerateModel& e) {
            r.degenerate = true;
            r.error = e.what();
        } catch (const BranchTrackingError& e) {
            r.degenerate = true;
            r.error = e.what();
        }
        if (r.degenerate) {
            r.local.clear();
            r.edge_root = r.edge_series = std::numeric_limits<double>::quiet_NaN();
        }
        detail::progress(opt, done, M, label);
        return r;
    });
}

/// Real symmetric Gaussian matrix: off-diagonal variance 1/N, diagonal 2/N.
inline DenseMatrix goe_sample(std::size_t N, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double sd = 1.0 / std::sqrt(static_cast<double>(N));
    auto gauss = [&] {
        // Box-Muller on the stream's own uniforms, so draws are identical across standard libraries.
        const double u1 = 1.0 - uniform01(rng);
        const double u2 = uniform01(rng);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    };
    DenseMatrix a(N);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = i; j < N; ++j) {
            const double v = gauss() * sd * (i == j ? std::sqrt(2.0) : 1.0);
            a(i, j) = a(j, i) = v;
        }
    }
    return a;
}

inline constexpr std::uint64_t kGoeStreamSalt = 0x60E5A3D1C2B4F687ULL;

/// N^{2/3}(mu_1 - 2) over M GOE draws.
inline std::vector<double> goe_top_statistics(std::size_t N, std::size_t M, std::uint64_t master_seed,
                                              unsigned workers = 1, EigenBackend backend = EigenBackend::Auto) {
    const double n23 = std::pow(static_cast<double>(N), 2.0 / 3.0);
    return parallel_map(M, workers, [&](std::size_t i) {
        const auto a = goe_sample(N, stream_seed(master_seed ^ kGoeStreamSalt, i));
        return n23 * (eigen(a, false, backend).eigenvalues.front() - 2.0);
    });
}

/// SignedSparse with s = q / sqrt(N): every entry is +-1/sqrt(N), the dense
/// (Wigner) end of the family.
inline EnsembleSpec dense_control(EnsembleSpec spec) {
    spec.family = EntryFamily::SignedSparse;
    spec.scale = spec.q() / std::sqrt(static_cast<double>(spec.N));
    return spec;
}

// ---------------------------------------------------------------------------
// Per-sample tables

struct Table {
    std::vector<std::string> columns;  // after index and seed
    std::vector<std::uint64_t> index;
    std::vector<std::uint64_t> seed;
    std::vector<std::vector<double>> rows;

    std::size_t col(std::string_view name) const {
        for (std::size_t c = 0; c < columns.size(); ++c) {
            if (columns[c] == name) return c;
        }
        throw ValidationError("table has no column '" + std::string(name) + "'");
    }
    std::vector<double> column(std::string_view name) const {
        const std::size_t c = col(name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r[c]);
        return out;
    }
    void add(std::uint64_t idx, std::uint64_t sd, std::vector<double> row) {
        index.push_back(idx);
        seed.push_back(sd);
        rows.push_back(std::move(row));
    }
    bool operator==(const Table& o) const {
        if (columns != o.columns || index != o.index || seed != o.seed || rows.size() != o.rows.size()) return false;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < rows[r].size(); ++c) {
                const double a = rows[r][c], b = o.rows[r][c];
                if (!(a == b || (std::isnan(a) && std::isnan(b)))) return false;
            }
        }
        return true;
    }
};

inline std::string to_csv(const Table& t) {
    std::string out = "schema_version,1\nindex,seed";
    for (const auto& c : t.columns) out += "," + c;
    out += "\n";
    char buf[64];
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        out += std::to_string(t.index[r]) + "," + std::to_string(t.seed[r]);
        for (double v : t.rows[r]) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

inline Table parse_table(std::string_view csv) {
    std::istringstream in{std::string(csv)};
    std::string line;
    auto bad = [](int ln, const std::string& what) {
        return ValidationError("per-sample csv line " + std::to_string(ln) + ": " + what);
    };
    if (!std::getline(in, line) || line != "schema_version,1") throw bad(1, "expected 'schema_version,1'");
    if (!std::getline(in, line)) throw bad(2, "missing header");
    auto head = detail::split(line, ',');
    if (head.size() < 2 || head[0] != "index" || head[1] != "seed") throw bad(2, "header must start with index,seed");
    Table t;
    t.columns.assign(head.begin() + 2, head.end());
    int ln = 2;
    while (std::getline(in, line)) {
        ++ln;
        if (line.empty()) continue;
        const auto cells = detail::split(line, ',');
        if (cells.size() != head.size()) throw bad(ln, "expected " + std::to_string(head.size()) + " cells");
        try {
            std::vector<double> row;
            for (std::size_t c = 2; c < cells.size(); ++c) row.push_back(std::strtod(cells[c].c_str(), nullptr));
            t.add(std::stoull(cells[0]), std::stoull(cells[1]), std::move(row));
        } catch (const std::exception&) {
            throw bad(ln, "unparsable value");
        }
    }
    return t;
}

namespace detail {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline double n23(std::size_t N) { return std::pow(static_cast<double>(N), 2.0 / 3.0); }

inline double zn(const SampleRecord& r, int n) {
    return static_cast<std::size_t>(n) <= r.Z.size() ? r.Z[static_cast<std::size_t>(n - 1)] : 0.0;
}

inline Table rigidity_table(const std::vector<SampleRecord>& recs, std::size_t N, int k) {
    Table t;
    t.columns = {"degenerate", "z1", "z2", "x", "edge_root", "edge_series"};
    for (const char* p : {"lambda_", "S_", "U_", "St_"}) {
        for (int i = 1; i <= k; ++i) t.columns.push_back(p + std::to_string(i));
    }
    const double s = n23(N);
    for (const auto& r : recs) {
        std::vector<double> row{r.degenerate ? 1.0 : 0.0, zn(r, 1), zn(r, 2), zn(r, 1) - 1.0, r.edge_root,
                                r.edge_series};
        for (int i = 0; i < k; ++i) row.push_back(r.top[static_cast<std::size_t>(i)]);
        for (int i = 0; i < k; ++i) row.push_back(s * std::fabs(r.top[static_cast<std::size_t>(i)] - r.edge_series));
        for (int i = 0; i < k; ++i) row.push_back(s * std::fabs(r.top[static_cast<std::size_t>(i)] - 2.0));
        for (int i = 0; i < k; ++i) row.push_back(s * std::fabs(r.top[static_cast<std::size_t>(i)] - r.edge_root));
        t.add(r.index, r.seed, std::move(row));
    }
    return t;
}

inline Table fluctuation_table(const std::vector<SampleRecord>& recs, std::size_t N) {
    Table t;
    t.columns = {"degenerate", "z1", "z2", "edge_root", "edge_series", "lambda_1", "u", "c", "c_root", "x23"};
    const double s = n23(N);
    for (const auto& r : recs) {
        const double l = r.top.front();
        t.add(r.index, r.seed,
              {r.degenerate ? 1.0 : 0.0, zn(r, 1), zn(r, 2), r.edge_root, r.edge_series, l, s * (l - 2.0),
               s * (l - r.edge_series), s * (l - r.edge_root), s * (zn(r, 1) - 1.0)});
    }
    return t;
}

inline Table local_table(const std::vector<SampleRecord>& recs, std::size_t N, const std::vector<GridPoint>& grid) {
    Table t;
    t.columns = {"degenerate", "point", "edge_point", "E", "eta", "edge_root", "edge_series", "lambda", "rhs", "ratio",
                 "n13_lambda", "p_abs", "stab_ratio"};
    const double n13 = std::cbrt(static_cast<double>(N));
    for (const auto& r : recs) {
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const auto& gp = grid[g];
            std::vector<double> row{r.degenerate ? 1.0 : 0.0, static_cast<double>(g), gp.edge_point ? 1.0 : 0.0,
                                    gp.E, gp.eta, r.edge_root, r.edge_series};
            if (r.degenerate) {
                row.insert(row.end(), 6, kNaN);
            } else {
                const auto& lr = r.local[g];
                const double stab = lr.lambda < 1e-12 ? kNaN : lr.lambda / std::sqrt(lr.p_abs);
                row.insert(row.end(), {lr.lambda, lr.rhs, lr.lambda / lr.rhs, n13 * lr.lambda, lr.p_abs, stab});
            }
            t.add(r.index, r.seed, std::move(row));
        }
    }
    return t;
}

// Rows with degenerate == 0 and a finite value in `col`.
inline std::vector<double> valid(const Table& t, std::string_view col, const std::function<bool(std::size_t)>& keep = {}) {
    const std::size_t d = t.col("degenerate"), c = t.col(col);
    std::vector<double> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.rows[r][d] != 0.0) continue;
        if (keep && !keep(r)) continue;
        if (std::isfinite(t.rows[r][c])) out.push_back(t.rows[r][c]);
    }
    return out;
}

inline double q_or_nan(const std::vector<double>& x, double p) { return x.empty() ? kNaN : stats::quantile(x, p); }
inline double mean_or_nan(const std::vector<double>& x) { return x.empty() ? kNaN : stats::mean(x); }

inline double degenerate_fraction(const Table& t, std::size_t samples) {
    std::size_t bad = 0;
    const std::size_t d = t.col("degenerate");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.rows[r][d] != 0.0 && (r == 0 || t.index[r] != t.index[r - 1])) ++bad;
    }
    return samples ? static_cast<double>(bad) / static_cast<double>(samples) : 0.0;
}

inline std::size_t distinct_samples(const Table& t) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < t.index.size(); ++r) {
        if (r == 0 || t.index[r] != t.index[r - 1]) ++n;
    }
    return n;
}

inline Json edge_aggregates(const Table& t) {
    const auto ls = valid(t, "edge_series");
    const auto lr = valid(t, "edge_root");
    std::vector<double> gap;
    for (std::size_t i = 0; i < ls.size() && i < lr.size(); ++i) gap.push_back(std::fabs(lr[i] - ls[i]));
    Json j;
    j["mean_edge_series"] = mean_or_nan(ls);
    j["mean_edge_root"] = mean_or_nan(lr);
    j["mean_abs_edge_gap"] = mean_or_nan(gap);
    j["max_abs_edge_gap"] = gap.empty() ? kNaN : *std::max_element(gap.begin(), gap.end());
    return j;
}

inline Json rigidity_aggregates(const Table& t, const Json& cfg) {
    const int k = cfg.at("k").get<int>();
    Json a;
    a["samples"] = distinct_samples(t);
    a["degenerate_fraction"] = degenerate_fraction(t, distinct_samples(t));
    for (const char* p : {"S_", "U_", "St_"}) {
        for (int i = 1; i <= k; ++i) {
            const std::string name = p + std::to_string(i);
            const auto v = valid(t, name);
            a[name] = {{"median", q_or_nan(v, 0.5)}, {"q90", q_or_nan(v, 0.9)}, {"mean", mean_or_nan(v)}};
        }
    }
    a.update(edge_aggregates(t));
    return a;
}

inline Json fluctuation_aggregates(const Table& t, const Json& cfg) {
    Json a;
    const std::size_t m = distinct_samples(t);
    a["samples"] = m;
    a["degenerate_fraction"] = degenerate_fraction(t, m);
    a["distributional"] = m >= 500;
    const auto u = valid(t, "u"), c = valid(t, "c"), cr = valid(t, "c_root"), x = valid(t, "x23");
    const int resamples = cfg.at("ks_resamples").get<int>();
    const auto seed = cfg.at("stat_seed").get<std::uint64_t>();
    if (u.size() < 3) {
        a["insufficient"] = true;
        return a;
    }
    a["corr_u_x"] = stats::correlation(u, x);
    a["var_u"] = stats::variance(u);
    a["var_c"] = stats::variance(c);
    a["var_c_root"] = stats::variance(cr);
    a["var_x"] = stats::variance(x);
    a["var_ratio"] = stats::variance(c) / stats::variance(u);
    a["var_ratio_root"] = stats::variance(cr) / stats::variance(u);
    a["mean_u"] = stats::mean(u);
    a["mean_c"] = stats::mean(c);
    for (const auto& [name, v] : {std::pair<const char*, const std::vector<double>*>{"u", &u}, {"c", &c}, {"x23", &x}}) {
        const auto ks = stats::ks_normality(*v, resamples, seed);
        a["ks_" + std::string(name)] = {{"distance", ks.distance}, {"critical_95", ks.critical_95}, {"p_value", ks.p_value}};
    }
    a.update(edge_aggregates(t));
    return a;
}

inline Json local_aggregates(const Table& t, const Json& cfg) {
    const std::size_t N = cfg.at("N").get<std::size_t>();
    const double eta_edge = std::pow(static_cast<double>(N), -2.0 / 3.0);
    const std::size_t m = distinct_samples(t);
    const std::size_t pc = t.col("point"), ec = t.col("edge_point"), hc = t.col("eta");
    Json a;
    a["samples"] = m;
    a["degenerate_fraction"] = degenerate_fraction(t, m);

    std::size_t points = 0;
    for (const auto& r : t.rows) points = std::max(points, static_cast<std::size_t>(r[pc]) + 1);
    Json per = Json::array();
    for (std::size_t g = 0; g < points; ++g) {
        auto at = [&](std::size_t r) { return static_cast<std::size_t>(t.rows[r][pc]) == g; };
        const auto ratio = valid(t, "ratio", at);
        const auto l13 = valid(t, "n13_lambda", at);
        const auto stab = valid(t, "stab_ratio", at);
        const auto lam = valid(t, "lambda", at);
        double E = kNaN, eta = kNaN;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            if (at(r)) {
                E = t.rows[r][t.col("E")];
                eta = t.rows[r][hc];
                break;
            }
        }
        per.push_back({{"point", g},
                       {"E", E},
                       {"eta", eta},
                       {"median_lambda", q_or_nan(lam, 0.5)},
                       {"median_ratio", q_or_nan(ratio, 0.5)},
                       {"q99_ratio", q_or_nan(ratio, 0.99)},
                       {"q99_n13_lambda", q_or_nan(l13, 0.99)},
                       {"q99_stab_ratio", q_or_nan(stab, 0.99)},
                       {"stab_points", stab.size()}});
    }
    a["points"] = per;

    auto edge = [&](std::size_t r) { return t.rows[r][ec] != 0.0; };
    a["edge_q99_n13_lambda"] = q_or_nan(valid(t, "n13_lambda", edge), 0.99);
    a["edge_median_ratio"] = q_or_nan(valid(t, "ratio", edge), 0.5);
    // Stability pool: eta >= N^{-2/3}; a relative slack absorbs the rounding of the grid.
    auto wide = [&](std::size_t r) { return t.rows[r][hc] >= eta_edge * (1.0 - 1e-12); };
    const auto stab = valid(t, "stab_ratio", wide);
    a["stab_q99"] = q_or_nan(stab, 0.99);
    a["stab_points"] = stab.size();
    a.update(edge_aggregates(t));
    return a;
}

inline Json goe_aggregates(const Table& t, const Json&) {
    Json a;
    const std::size_t m = distinct_samples(t);
    a["samples"] = m;
    a["degenerate_fraction"] = degenerate_fraction(t, m);
    const auto c = valid(t, "c"), g = valid(t, "goe");
    if (c.empty() || g.empty()) return a;
    const auto ks = stats::ks_two_sample(c, g);
    a["ks_distance"] = ks.distance;
    a["ks_p_value"] = ks.p_value;
    a["expected_fluctuation_95"] = 1.36 * std::sqrt(2.0 / static_cast<double>(m));
    a["median_c"] = stats::median(c);
    a["median_goe"] = stats::median(g);
    a["mean_c"] = stats::mean(c);
    a["mean_goe"] = stats::mean(g);
    a.update(edge_aggregates(t));
    return a;
}

inline std::string histogram_csv(const Table& t, const std::vector<std::string>& series, int bins = 30) {
    std::string out = "schema_version,1\nseries,bin_lo,bin_hi,count\n";
    char buf[160];
    for (const auto& s : series) {
        const auto v = valid(t, s);
        if (v.empty()) continue;
        const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
        const double lo = *lo_it, hi = *hi_it > lo ? *hi_it : lo + 1.0;
        std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
        for (double x : v) {
            const auto b = std::min<std::size_t>(static_cast<std::size_t>((x - lo) / (hi - lo) * bins),
                                                 static_cast<std::size_t>(bins - 1));
            ++count[b];
        }
        for (int b = 0; b < bins; ++b) {
            std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%zu\n", s.c_str(), lo + (hi - lo) * b / bins,
                          lo + (hi - lo) * (b + 1) / bins, count[static_cast<std::size_t>(b)]);
            out += buf;
        }
    }
    return out;
}

inline std::string local_plot_csv(const Json& agg) {
    std::string out = "schema_version,1\npoint,E,eta,median_lambda,median_ratio,q99_ratio,q99_n13_lambda,q99_stab_ratio\n";
    char buf[320];
    auto num = [](const Json& j) { return j.is_number() ? j.get<double>() : kNaN; };
    for (const auto& p : agg.at("points")) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.at("point").get<std::size_t>(),
                      num(p.at("E")), num(p.at("eta")), num(p.at("median_lambda")), num(p.at("median_ratio")),
                      num(p.at("q99_ratio")), num(p.at("q99_n13_lambda")), num(p.at("q99_stab_ratio")));
        out += buf;
    }
    return out;
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reports

struct ExperimentReport {
    ExperimentKind kind = ExperimentKind::Rigidity;
    Json config;  // everything the payload depends on; workers excluded
    std::string config_hash;
    Table per_sample;
    Json aggregates;
    std::string plot_csv;

    std::size_t N() const { return config.at("N").get<std::size_t>(); }
};

inline Json to_json(const EnsembleSpec& s) {
    return {{"N", s.N},           {"b", s.b},         {"family", std::string(to_string(s.family))},
            {"scale", s.scale},   {"master_seed", s.master_seed}, {"c_min", s.c_min},
            {"c_max", s.c_max}};
}

inline Json report_config(ExperimentKind kind, const EnsembleSpec& spec, std::size_t M, const ExperimentOptions& opt) {
    Json c = to_json(spec);
    c["experiment"] = std::string(to_string(kind));
    c["M"] = M;
    c["k"] = opt.k;
    c["ell"] = opt.ell;
    c["series_depth"] = opt.model.series_depth;
    c["force_semicircle"] = opt.force_semicircle;
    c["ks_resamples"] = opt.ks_resamples;
    c["stat_seed"] = opt.stat_seed;
    if (kind == ExperimentKind::LocalLaw || kind == ExperimentKind::Stability) {
        c["grid_E"] = to_string(opt.grid.E);
        c["grid_eta"] = to_string(opt.grid.eta);
        c["grid_eta_log_points"] = opt.grid.eta_log_points;
    }
    return c;
}

inline std::string config_hash(const Json& config) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(config.dump())));
    return buf;
}

/// Aggregates as a pure function of the per-sample rows and the config.
inline Json aggregate(ExperimentKind kind, const Table& t, const Json& config) {
    switch (kind) {
        case ExperimentKind::Rigidity: return detail::rigidity_aggregates(t, config);
        case ExperimentKind::Fluctuation: return detail::fluctuation_aggregates(t, config);
        case ExperimentKind::LocalLaw:
        case ExperimentKind::Stability: return detail::local_aggregates(t, config);
        case ExperimentKind::Goe: return detail::goe_aggregates(t, config);
    }
    return {};
}

inline std::string plot_csv(ExperimentKind kind, const Table& t, const Json& config, const Json& agg) {
    switch (kind) {
        case ExperimentKind::Rigidity: {
            std::vector<std::string> s;
            for (const char* p : {"S_", "U_"}) {
                for (int i = 1; i <= config.at("k").get<int>(); ++i) s.push_back(p + std::to_string(i));
            }
            return detail::histogram_csv(t, s);
        }
        case ExperimentKind::Fluctuation: return detail::histogram_csv(t, {"u", "c", "x23"});
        case ExperimentKind::LocalLaw:
        case ExperimentKind::Stability: return detail::local_plot_csv(agg);
        case ExperimentKind::Goe: return detail::histogram_csv(t, {"c", "goe"});
    }
    return {};
}

/// Builds one report from already collected samples. Rigidity, local-law
/// and stability reports can share a single `collect` pass.
inline ExperimentReport make_report(ExperimentKind kind, const EnsembleSpec& spec, const std::vector<SampleRecord>& recs,
                                    const ExperimentOptions& opt, const std::vector<double>& goe = {}) {
    ExperimentReport rep;
    rep.kind = kind;
    rep.config = report_config(kind, spec, recs.size(), opt);
    rep.config_hash = config_hash(rep.config);
    switch (kind) {
        case ExperimentKind::Rigidity: rep.per_sample = detail::rigidity_table(recs, spec.N, opt.k); break;
        case ExperimentKind::Fluctuation: rep.per_sample = detail::fluctuation_table(recs, spec.N); break;
        case ExperimentKind::LocalLaw:
        case ExperimentKind::Stability:
            rep.per_sample = detail::local_table(recs, spec.N, opt.grid.points(spec.N));
            break;
        case ExperimentKind::Goe: {
            if (goe.size() != recs.size()) throw ValidationError("goe comparison needs one GOE draw per sample");
            Table& t = rep.per_sample;
            t.columns = {"degenerate", "edge_root", "edge_series", "lambda_1", "c", "goe"};
            const double s = detail::n23(spec.N);
            for (std::size_t i = 0; i < recs.size(); ++i) {
                const auto& r = recs[i];
                const double l = r.top.front();
                t.add(r.index, r.seed,
                      {r.degenerate ? 1.0 : 0.0, r.edge_root, r.edge_series, l, s * (l - r.edge_series), goe[i]});
            }
            break;
        }
    }
    rep.aggregates = aggregate(kind, rep.per_sample, rep.config);
    rep.plot_csv = plot_csv(kind, rep.per_sample, rep.config, rep.aggregates);
    return rep;
}

inline Json to_json(const ExperimentReport& r, const std::string& stem) {
    Json j;
    j["schema_version"] = 1;
    j["experiment"] = std::string(to_string(r.kind));
    j["config"] = r.config;
    j["config_hash"] = r.config_hash;
    j["per_sample_file"] = stem + "_samples.csv";
    j["plot_file"] = stem + "_plot.csv";
    j["aggregates"] = r.aggregates;
    return j;
}

// ---------------------------------------------------------------------------
// Runs over several N

struct ContractCheck {
    std::string name;
    double value = 0.0;
    std::string bound;
    bool pass = true;
};

struct RunResult {
    ExperimentKind kind = ExperimentKind::Rigidity;
    std::vector<ExperimentReport> reports;  // one per N, in the order supplied
    Json summary;
    std::vector<ContractCheck> checks;

    bool pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const ContractCheck& c) { return c.pass; });
    }
};

namespace detail {

inline double num(const Json& j) { return j.is_number() ? j.get<double>() : kNaN; }

inline void check_le(std::vector<ContractCheck>& out, std::string name, double v, double bound) {
    char b[64];
    std::snprintf(b, sizeof b, "<= %.6g", bound);
    out.push_back({std::move(name), v, b, v <= bound});
}

inline void check_ge(std::vector<ContractCheck>& out, std::string name, double v, double bound) {
    char b[64];
    std::snprintf(b, sizeof b, ">= %.6g", bound);
    out.push_back({std::move(name), v, b, v >= bound});
}

}  // namespace detail

/// Cross-N trends and the contract, recomputed from the per-N aggregates.
inline void summarize(RunResult& run, const ExperimentOptions& opt) {
    using detail::num;
    auto& checks = run.checks;
    checks.clear();
    Json s;
    s["experiment"] = std::string(to_string(run.kind));
    Json per = Json::array();
    std::vector<double> logn;
    for (const auto& r : run.reports) {
        const std::string tag = "N=" + std::to_string(r.N());
        logn.push_back(std::log(static_cast<double>(r.N())));
        detail::check_le(checks, tag + " degenerate_fraction", num(r.aggregates.at("degenerate_fraction")),
                         opt.max_degenerate_fraction);
        per.push_back({{"N", r.N()}, {"config_hash", r.config_hash}});
    }
    s["runs"] = per;

    switch (run.kind) {
        case ExperimentKind::Rigidity: {
            Json tr = Json::array();
            for (std::size_t i = 1; i < run.reports.size(); ++i) {
                const auto& a = run.reports[i - 1].aggregates;
                const auto& b = run.reports[i].aggregates;
                const double doublings = std::log2(static_cast<double>(run.reports[i].N()) / run.reports[i - 1].N());
                const double s_ratio = num(b["S_1"]["median"]) / num(a["S_1"]["median"]);
                const double u_growth = std::pow(num(b["U_1"]["median"]) / num(a["U_1"]["median"]), 1.0 / doublings);
                const std::string tag = std::to_string(run.reports[i - 1].N()) + "->" + std::to_string(run.reports[i].N());
                tr.push_back({{"from", run.reports[i - 1].N()}, {"to", run.reports[i].N()},
                              {"S_1_median_ratio", s_ratio}, {"U_1_growth_per_doubling", u_growth}});
                detail::check_ge(checks, tag + " S_1 median ratio", s_ratio, opt.s_ratio_lo);
                detail::check_le(checks, tag + " S_1 median ratio", s_ratio, opt.s_ratio_hi);
                detail::check_ge(checks, tag + " U_1 growth per doubling", u_growth, opt.u_growth_min);
            }
            s["trend"] = tr;
            if (run.reports.size() >= 2) {
                std::vector<double> ls, lu;
                for (const auto& r : run.reports) {
                    ls.push_back(std::log(num(r.aggregates["S_1"]["median"])));
                    lu.push_back(std::log(num(r.aggregates["U_1"]["median"])));
                }
                s["S_1_median_slope"] = stats::fit_line(logn, ls).slope;
                s["U_1_median_slope"] = stats::fit_line(logn, lu).slope;
            }
            break;
        }
        case ExperimentKind::LocalLaw: {
            std::vector<double> lr;
            for (const auto& r : run.reports) {
                detail::check_le(checks, "N=" + std::to_string(r.N()) + " q99 N^{1/3} Lambda at edge points",
                                 num(r.aggregates.at("edge_q99_n13_lambda")), opt.local_law_bound);
                lr.push_back(std::log(num(r.aggregates.at("edge_median_ratio"))));
            }
            if (run.reports.size() >= 2) {
                const double slope = stats::fit_line(logn, lr).slope;
                s["edge_median_ratio_slope"] = slope;
                detail::check_le(checks, "slope of log median Lambda/rhs against log N", slope, opt.trend_slope_max);
            }
            break;
        }
        case ExperimentKind::Stability:
            for (const auto& r : run.reports) {
                detail::check_le(checks, "N=" + std::to_string(r.N()) + " q99 Lambda/sqrt|P|, eta >= N^{-2/3}",
                                 num(r.aggregates.at("stab_q99")), opt.c_stab);
            }
            break;
        case ExperimentKind::Fluctuation:
            for (const auto& r : run.reports) {
                const std::string tag = "N=" + std::to_string(r.N()) + " ";
                const auto& a = r.aggregates;
                if (!std::isnan(opt.corr_floor)) detail::check_ge(checks, tag + "corr(u, X)", num(a["corr_u_x"]), opt.corr_floor);
                if (!std::isnan(opt.corr_ceiling)) detail::check_le(checks, tag + "corr(u, X)", num(a["corr_u_x"]), opt.corr_ceiling);
                if (!std::isnan(opt.var_ratio_max)) {
                    detail::check_le(checks, tag + "Var(c)/Var(u)", num(a["var_ratio"]), opt.var_ratio_max);
                }
            }
            break;
        case ExperimentKind::Goe: break;
    }
    Json cj = Json::array();
    for (const auto& c : checks) cj.push_back({{"name", c.name}, {"value", c.value}, {"bound", c.bound}, {"pass", c.pass}});
    s["contract"] = cj;
    s["pass"] = run.pass();
    run.summary = std::move(s);
}

inline void require_samples(ExperimentKind kind, std::size_t M, const ExperimentOptions& opt) {
    if (kind == ExperimentKind::Goe && M < 500) throw InsufficientSamples("goe comparison needs M >= 500");
    if (M < 50) throw InsufficientSamples(std::string(to_string(kind)) + " needs M >= 50");
    if (kind == ExperimentKind::Rigidity && (opt.k < 1 || opt.k > 5)) throw ValidationError("rigidity needs 1 <= k <= 5");
}

/// One experiment across the supplied specs (normally differing only in N).
inline RunResult run_experiment(ExperimentKind kind, const std::vector<EnsembleSpec>& specs, std::size_t M,
                                const ExperimentOptions& opt) {
    require_samples(kind, M, opt);
    if (specs.empty()) throw ValidationError("no N values given");
    RunResult run;
    run.kind = kind;
    const bool local = kind == ExperimentKind::LocalLaw || kind == ExperimentKind::Stability;
    for (const auto& spec : specs) {
        ExperimentOptions o = opt;
        if (kind == ExperimentKind::Fluctuation || kind == ExperimentKind::Goe) o.k = 1;
        const auto grid = local ? o.grid.points(spec.N) : std::vector<GridPoint>{};
        const auto recs = collect(spec, M, o, grid);
        std::vector<double> goe;
        if (kind == ExperimentKind::Goe) goe = goe_top_statistics(spec.N, M, spec.master_seed, o.workers, o.backend);
        run.reports.push_back(make_report(kind, spec, recs, o, goe));
    }
    summarize(run, opt);
    return run;
}

inline std::string file_stem(const ExperimentReport& r) {
    return std::string(to_string(r.kind)) + "_N" + std::to_string(r.N());
}

/// Writes, per N, <kind>_N<N>.json, _samples.csv and _plot.csv, then
/// <kind>_summary.json. Every payload is rendered before the first file is
/// opened. Returns the paths written.
inline std::vector<std::string> write_run(const RunResult& run, const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ValidationError("output directory '" + dir + "' does not exist");
    std::vector<std::pair<fs::path, std::string>> files;
    for (const auto& r : run.reports) {
        const auto stem = file_stem(r);
        files.emplace_back(fs::path(dir) / (stem + ".json"), to_json(r, stem).dump(2) + "\n");
        files.emplace_back(fs::path(dir) / (stem + "_samples.csv"), to_csv(r.per_sample));
        files.emplace_back(fs::path(dir) / (stem + "_plot.csv"), r.plot_csv);
    }
    files.emplace_back(fs::path(dir) / (std::string(to_string(run.kind)) + "_summary.json"), run.summary.dump(2) + "\n");
    std::vector<std::string> written;
    for (const auto& [path, text] : files) {
        std::ofstream f(path, std::ios::binary);
        f << text;
        if (!f) throw Error("cannot write " + path.string());
        written.push_back(path.string());
    }
    return written;
}

/// Reads a report and its per-sample CSV and checks that recomputing the
/// aggregates from the rows reproduces the stored ones exactly.
inline ExperimentReport load_report(const std::string& json_path) {
    namespace fs = std::filesystem;
    auto slurp = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        if (!f) throw ValidationError("cannot read " + p.string());
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    const Json j = Json::parse(slurp(json_path));
    ExperimentReport r;
    r.kind = parse_kind(j.at("experiment").get<std::string>());
    r.config = j.at("config");
    r.config_hash = j.at("config_hash").get<std::string>();
    if (config_hash(r.config) != r.config_hash) throw ValidationError(json_path + ": config_hash does not match config");
    const fs::path base = fs::path(json_path).parent_path();
    r.per_sample = parse_table(slurp(base / j.at("per_sample_file").get<std::string>()));
    r.aggregates = j.at("aggregates");
    const Json again = Json::parse(aggregate(r.kind, r.per_sample, r.config).dump());
    if (again != r.aggregates) throw ValidationError(json_path + ": aggregates do not match the per-sample rows");
    r.plot_csv = slurp(base / j.at("plot_file").get<std::string>());
    return r;
}

}  // namespace edgelab
