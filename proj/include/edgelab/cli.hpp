#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "edgelab/corrections.hpp"
#include "edgelab/ensemble.hpp"
#include "edgelab/experiments.hpp"
#include "edgelab/scm.hpp"
#include "edgelab/spectral.hpp"

namespace edgelab {

enum class Command { Sample, Spectrum, Corrections, Model, Density, Rigidity, LocalLaw, Fluct, Stability, Goe };

inline constexpr std::pair<Command, std::string_view> kCommandNames[] = {
    {Command::Sample, "sample"},       {Command::Spectrum, "spectrum"}, {Command::Corrections, "corrections"},
    {Command::Model, "model"},         {Command::Density, "density"},   {Command::Rigidity, "rigidity"},
    {Command::LocalLaw, "locallaw"},   {Command::Fluct, "fluct"},       {Command::Stability, "stability"},
    {Command::Goe, "goe"},
};

inline std::string_view to_string(Command c) {
    for (const auto& [k, name] : kCommandNames) {
        if (k == c) return name;
    }
    return "?";
}

struct RunConfig {
    std::optional<Command> command;
    std::vector<std::size_t> N{1000};
    EnsembleSpec ensemble;  // N ignored; taken from the list above
    std::size_t M = 200;
    int k = 1;
    int ell = 2;
    int series_depth = 2;
    bool force_semicircle = false;
    GridSpec grid;
    std::string output = ".";
    unsigned workers = 1;
    std::uint64_t index = 0;
    std::vector<double> Z;  // model/density from given corrections instead of a sample
    double x_min = -2.5, x_max = 2.5;
    std::size_t x_points = 501;
    double eta = kDefaultEtaFloor;
    EigenBackend backend = EigenBackend::Auto;
    std::string coefficient_table;
    int ks_resamples = 10000;
    std::uint64_t stat_seed = 0x5EED;
    double c_stab = 2.0;
    double local_law_bound = 10.0;
    double trend_slope_max = 0.1;
    double s_ratio_lo = 0.5, s_ratio_hi = 2.0;
    double u_growth_min = 1.05;
    double max_degenerate_fraction = 0.01;
    double corr_floor = std::numeric_limits<double>::quiet_NaN();
    double corr_ceiling = std::numeric_limits<double>::quiet_NaN();
    double var_ratio_max = std::numeric_limits<double>::quiet_NaN();

    EnsembleSpec spec(std::size_t n) const {
        EnsembleSpec s = ensemble;
        s.N = n;
        return s;
    }

    ExperimentOptions experiment_options() const {
        ExperimentOptions o;
        o.k = k;
        o.ell = ell;
        o.model.series_depth = series_depth;
        o.force_semicircle = force_semicircle;
        o.workers = workers;
        o.backend = backend;
        o.grid = grid;
        o.ks_resamples = ks_resamples;
        o.stat_seed = stat_seed;
        o.c_stab = c_stab;
        o.local_law_bound = local_law_bound;
        o.trend_slope_max = trend_slope_max;
        o.s_ratio_lo = s_ratio_lo;
        o.s_ratio_hi = s_ratio_hi;
        o.u_growth_min = u_growth_min;
        o.max_degenerate_fraction = max_degenerate_fraction;
        o.corr_floor = corr_floor;
        o.corr_ceiling = corr_ceiling;
        o.var_ratio_max = var_ratio_max;
        return o;
    }
};

namespace detail {

inline double parse_double(const std::string& v) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (v.empty() || pos != v.size() || !std::isfinite(x)) throw ValidationError("'" + v + "' is not a finite number");
    return x;
}

inline double parse_optional_bound(const std::string& v) {
    return v == "none" ? std::numeric_limits<double>::quiet_NaN() : parse_double(v);
}

inline std::uint64_t parse_unsigned(const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        throw ValidationError("'" + v + "' is not a non-negative integer");
    }
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ValidationError("'" + v + "' is out of range");
    }
}

inline std::uint64_t parse_positive(const std::string& v) {
    const auto x = parse_unsigned(v);
    if (x == 0) throw ValidationError("must be >= 1");
    return x;
}

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("'" + v + "' is not a boolean (true/false)");
}

inline std::string format_double(double x) {
    if (std::isnan(x)) return "none";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

struct KeyHandler {
    std::string_view name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<KeyHandler>& key_handlers() {
    using C = RunConfig;
    static const std::vector<KeyHandler> keys = {
        {"command",
         [](C& c, const std::string& v) {
             for (const auto& [k, name] : kCommandNames) {
                 if (v == name) {
                     c.command = k;
                     return;
                 }
             }
             throw ValidationError("unknown command '" + v + "'");
         },
         [](const C& c) { return c.command ? std::string(to_string(*c.command)) : std::string(); }},
        {"N",
         [](C& c, const std::string& v) {
             c.N.clear();
             for (const auto& t : split(v, ',')) c.N.push_back(parse_positive(t));
         },
         [](const C& c) {
             std::string s;
             for (std::size_t i = 0; i < c.N.size(); ++i) s += (i ? "," : "") + std::to_string(c.N[i]);
             return s;
         }},
        {"b",
         [](C& c, const std::string& v) {
             const double b = parse_double(v);
             if (!(b > 0.0 && b < 0.5)) throw ValidationError("b must lie in (0, 0.5): q = N^b with 0 < b < 1/2");
             c.ensemble.b = b;
         },
         [](const C& c) { return format_double(c.ensemble.b); }},
        {"family", [](C& c, const std::string& v) { c.ensemble.family = parse_family(v); },
         [](const C& c) { return std::string(to_string(c.ensemble.family)); }},
        {"scale",
         [](C& c, const std::string& v) {
             const double s = parse_double(v);
             if (!(s > 0.0)) throw ValidationError("scale must be positive");
             c.ensemble.scale = s;
         },
         [](const C& c) { return format_double(c.ensemble.scale); }},
        {"master_seed", [](C& c, const std::string& v) { c.ensemble.master_seed = parse_unsigned(v); },
         [](const C& c) { return std::to_string(c.ensemble.master_seed); }},
        {"c_min", [](C& c, const std::string& v) { c.ensemble.c_min = parse_double(v); },
         [](const C& c) { return format_double(c.ensemble.c_min); }},
        {"c_max", [](C& c, const std::string& v) { c.ensemble.c_max = parse_double(v); },
         [](const C& c) { return format_double(c.ensemble.c_max); }},
        {"M", [](C& c, const std::string& v) { c.M = parse_positive(v); },
         [](const C& c) { return std::to_string(c.M); }},
        {"k",
         [](C& c, const std::string& v) {
             const auto k = parse_positive(v);
             if (k > 5) throw ValidationError("k must be <= 5");
             c.k = static_cast<int>(k);
         },
         [](const C& c) { return std::to_string(c.k); }},
        {"ell",
         [](C& c, const std::string& v) {
             const auto l = parse_positive(v);
             if (l > 8) throw ValidationError("ell must be <= 8");
             c.ell = static_cast<int>(l);
         },
         [](const C& c) { return std::to_string(c.ell); }},
        {"series_depth",
         [](C& c, const std::string& v) {
             const auto d = parse_positive(v);
             if (d > 10000) throw ValidationError("series_depth must be <= 10000");
             c.series_depth = static_cast<int>(d);
         },
         [](const C& c) { return std::to_string(c.series_depth); }},
        {"force_semicircle", [](C& c, const std::string& v) { c.force_semicircle = parse_bool(v); },
         [](const C& c) { return std::string(c.force_semicircle ? "true" : "false"); }},
        {"grid_E", [](C& c, const std::string& v) { c.grid.E = parse_grid_values(v); },
         [](const C& c) { return to_string(c.grid.E); }},
        {"grid_eta", [](C& c, const std::string& v) { c.grid.eta = parse_grid_values(v); },
         [](const C& c) { return to_string(c.grid.eta); }},
        {"grid_eta_log_points",
         [](C& c, const std::string& v) {
             const auto n = parse_unsigned(v);
             if (n > 1000) throw ValidationError("grid_eta_log_points must be <= 1000");
             c.grid.eta_log_points = static_cast<int>(n);
         },
         [](const C& c) { return std::to_string(c.grid.eta_log_points); }},
        {"output",
         [](C& c, const std::string& v) {
             if (v.empty()) throw ValidationError("output must not be empty");
             c.output = v;
         },
         [](const C& c) { return c.output; }},
        {"workers",
         [](C& c, const std::string& v) {
             const auto w = parse_positive(v);
             if (w > 1024) throw ValidationError("workers must be <= 1024");
             c.workers = static_cast<unsigned>(w);
         },
         [](const C& c) { return std::to_string(c.workers); }},
        {"index", [](C& c, const std::string& v) { c.index = parse_unsigned(v); },
         [](const C& c) { return std::to_string(c.index); }},
        {"Z",
         [](C& c, const std::string& v) {
             c.Z.clear();
             if (trim(v).empty()) return;
             for (const auto& t : split(v, ',')) c.Z.push_back(parse_double(t));
         },
         [](const C& c) {
             std::string s;
             for (std::size_t i = 0; i < c.Z.size(); ++i) s += (i ? "," : "") + format_double(c.Z[i]);
             return s;
         }},
        {"x_min", [](C& c, const std::string& v) { c.x_min = parse_double(v); },
         [](const C& c) { return format_double(c.x_min); }},
        {"x_max", [](C& c, const std::string& v) { c.x_max = parse_double(v); },
         [](const C& c) { return format_double(c.x_max); }},
        {"x_points",
         [](C& c, const std::string& v) {
             const auto n = parse_positive(v);
             if (n > 1000000) throw ValidationError("x_points must be <= 1000000");
             c.x_points = n;
         },
         [](const C& c) { return std::to_string(c.x_points); }},
        {"eta",
         [](C& c, const std::string& v) {
             const double e = parse_double(v);
             if (!(e >= 1e-9 && e <= 1e-3)) throw ValidationError("eta must lie in [1e-9, 1e-3]");
             c.eta = e;
         },
         [](const C& c) { return format_double(c.eta); }},
        {"backend",
         [](C& c, const std::string& v) {
             if (v == "auto") c.backend = EigenBackend::Auto;
             else if (v == "native") c.backend = EigenBackend::Native;
             else if (v == "lapack") c.backend = EigenBackend::Lapack;
             else throw ValidationError("backend must be auto, native or lapack");
         },
         [](const C& c) {
             return std::string(c.backend == EigenBackend::Auto ? "auto"
                                : c.backend == EigenBackend::Native ? "native" : "lapack");
         }},
        {"coefficient_table", [](C& c, const std::string& v) { c.coefficient_table = v; },
         [](const C& c) { return c.coefficient_table; }},
        {"ks_resamples",
         [](C& c, const std::string& v) {
             const auto n = parse_positive(v);
             if (n > 1000000) throw ValidationError("ks_resamples must be <= 1000000");
             c.ks_resamples = static_cast<int>(n);
         },
         [](const C& c) { return std::to_string(c.ks_resamples); }},
        {"stat_seed", [](C& c, const std::string& v) { c.stat_seed = parse_unsigned(v); },
         [](const C& c) { return std::to_string(c.stat_seed); }},
        {"c_stab", [](C& c, const std::string& v) { c.c_stab = parse_double(v); },
         [](const C& c) { return format_double(c.c_stab); }},
        {"local_law_bound", [](C& c, const std::string& v) { c.local_law_bound = parse_double(v); },
         [](const C& c) { return format_double(c.local_law_bound); }},
        {"trend_slope_max", [](C& c, const std::string& v) { c.trend_slope_max = parse_double(v); },
         [](const C& c) { return format_double(c.trend_slope_max); }},
        {"s_ratio_lo", [](C& c, const std::string& v) { c.s_ratio_lo = parse_double(v); },
         [](const C& c) { return format_double(c.s_ratio_lo); }},
        {"s_ratio_hi", [](C& c, const std::string& v) { c.s_ratio_hi = parse_double(v); },
         [](const C& c) { return format_double(c.s_ratio_hi); }},
        {"u_growth_min", [](C& c, const std::string& v) { c.u_growth_min = parse_double(v); },
         [](const C& c) { return format_double(c.u_growth_min); }},
        {"max_degenerate_fraction", [](C& c, const std::string& v) { c.max_degenerate_fraction = parse_double(v); },
         [](const C& c) { return format_double(c.max_degenerate_fraction); }},
        {"corr_floor", [](C& c, const std::string& v) { c.corr_floor = parse_optional_bound(v); },
         [](const C& c) { return format_double(c.corr_floor); }},
        {"corr_ceiling", [](C& c, const std::string& v) { c.corr_ceiling = parse_optional_bound(v); },
         [](const C& c) { return format_double(c.corr_ceiling); }},
        {"var_ratio_max", [](C& c, const std::string& v) { c.var_ratio_max = parse_optional_bound(v); },
         [](const C& c) { return format_double(c.var_ratio_max); }},
    };
    return keys;
}

inline const KeyHandler* find_key(std::string_view name) {
    for (const auto& h : key_handlers()) {
        if (h.name == name) return &h;
    }
    return nullptr;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& h : detail::key_handlers()) out.emplace_back(h.name);
    return out;
}

/// Sets one key; `where` prefixes error messages ("line 3", "--b").
inline void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
    const auto* h = detail::find_key(key);
    if (!h) throw ValidationError(where + ": unknown key '" + key + "'");
    try {
        h->set(cfg, detail::trim(value));
    } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + key + ": " + e.what());
    }
}

/// Checks that need several keys at once.
inline void validate(const RunConfig& cfg) {
    if (!cfg.command) throw ValidationError("command is required");
    if (cfg.N.empty()) throw ValidationError("N: at least one value is required");
    for (std::size_t n : cfg.N) {
        if (n > kMaxDenseN) throw ValidationError("N: " + std::to_string(n) + " exceeds " + std::to_string(kMaxDenseN));
        edgelab::validate(cfg.spec(n));
    }
    if (!(cfg.x_max > cfg.x_min)) throw ValidationError("x_max must exceed x_min");
    if (cfg.ell > 2 && cfg.coefficient_table.empty()) {
        throw ValidationError("ell: orders above 2 need a coefficient_table");
    }
}

/// `key = value` per line, `#` starts a comment, list values are
/// comma-separated. Unknown and repeated keys are errors.
inline RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::map<std::string, int> seen;
    int ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (detail::trim(line).empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "line " + std::to_string(ln);
        if (eq == std::string::npos) throw ValidationError(where + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        if (auto it = seen.find(key); it != seen.end()) {
            throw ValidationError(where + ": " + key + " already set on line " + std::to_string(it->second));
        }
        seen[key] = ln;
        set_config_key(cfg, key, line.substr(eq + 1), where);
    }
    return cfg;
}

/// Every key with its resolved value, in a form parse_config accepts.
inline std::string to_config_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& h : detail::key_handlers()) {
        out += std::string(h.name) + " = " + h.get(cfg) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dispatch

struct RunOutcome {
    int exit_status = 0;  // 0 pass, 2 contract violation
    std::vector<std::string> files;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text, std::vector<std::string>& files) {
    std::ofstream f(p, std::ios::binary);
    f << text;
    if (!f) throw Error("cannot write " + p.string());
    files.push_back(p.string());
}

inline std::string iso_time(std::chrono::system_clock::time_point t) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline Json model_json(const SelfConsistentModel& m) {
    return {{"Z", m.Z()},
            {"tau", m.tau()},
            {"edge_root", m.edge_root()},
            {"tau_series", m.tau_series()},
            {"edge_series", m.edge_series()},
            {"series_depth", m.series_depth()}};
}

inline std::string suffix(std::size_t n, std::uint64_t index) {
    return "_N" + std::to_string(n) + "_i" + std::to_string(index);
}

}  // namespace detail

/// Runs the configured command, writing into cfg.output (which must exist).
/// Throws on errors; the return value distinguishes pass from contract
/// violation.
inline RunOutcome run(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    validate(cfg);
    if (!fs::is_directory(cfg.output)) throw ValidationError("output directory '" + cfg.output + "' does not exist");
    const auto started = std::chrono::system_clock::now();
    const fs::path out(cfg.output);
    RunOutcome res;
    const Command cmd = *cfg.command;

    CoefficientTable table;
    const CoefficientTable* table_ptr = nullptr;
    if (!cfg.coefficient_table.empty()) {
        std::ifstream f(cfg.coefficient_table, std::ios::binary);
        if (!f) throw ValidationError("cannot read coefficient_table '" + cfg.coefficient_table + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        table = parse_coefficient_table(ss.str());
        table_ptr = &table;
    }
    ModelOptions mopt;
    mopt.series_depth = cfg.series_depth;

    // Payloads are rendered in full before anything is written.
    std::vector<std::pair<fs::path, std::string>> payloads;
    std::optional<RunResult> experiment;

    switch (cmd) {
        case Command::Sample:
        case Command::Spectrum:
        case Command::Corrections:
            for (std::size_t n : cfg.N) {
                const auto smp = sample(cfg.spec(n), cfg.index);
                const auto sfx = detail::suffix(n, cfg.index);
                if (cmd == Command::Sample) {
                    const auto path = out / ("sample" + sfx + ".bin");
                    payloads.emplace_back(out / ("sample" + sfx + ".json"),
                                          Json{{"spec", to_json(smp.spec)}, {"index", smp.index}, {"seed", smp.seed},
                                               {"binary", path.filename().string()}}
                                                  .dump(2) + "\n");
                    write_binary(path.string(), smp.entries);
                    res.files.push_back(path.string());
                } else if (cmd == Command::Spectrum) {
                    payloads.emplace_back(out / ("spectrum" + sfx + ".csv"), spectrum_csv(eigen(smp, false, cfg.backend)));
                } else {
                    const auto cs = compute_Z(smp, cfg.ell, table_ptr);
                    payloads.emplace_back(out / ("corrections" + sfx + ".json"),
                                          Json{{"N", n}, {"index", cfg.index}, {"seed", smp.seed}, {"ell", cs.ell},
                                               {"Z", cs.Z}, {"X", cs.X}}
                                                  .dump(2) + "\n");
                }
            }
            break;
        case Command::Model:
        case Command::Density: {
            std::vector<double> Z = cfg.Z;
            std::string sfx;
            if (Z.empty()) {
                const auto smp = sample(cfg.spec(cfg.N.front()), cfg.index);
                Z = compute_Z(smp, cfg.ell, table_ptr).Z;
                sfx = detail::suffix(cfg.N.front(), cfg.index);
            }
            const auto model = build(Z, mopt);
            if (cmd == Command::Model) {
                payloads.emplace_back(out / ("model" + sfx + ".json"), detail::model_json(model).dump(2) + "\n");
            } else {
                std::vector<double> xs(cfg.x_points);
                for (std::size_t i = 0; i < cfg.x_points; ++i) {
                    xs[i] = cfg.x_points == 1 ? cfg.x_min
                                              : cfg.x_min + static_cast<double>(i) * (cfg.x_max - cfg.x_min) /
                                                                static_cast<double>(cfg.x_points - 1);
                }
                payloads.emplace_back(out / ("density" + sfx + ".csv"),
                                      grid_csv(model, xs, cfg.eta, static_cast<double>(cfg.N.front())));
            }
            break;
        }
        default: {
            const ExperimentKind kind = cmd == Command::Rigidity   ? ExperimentKind::Rigidity
                                        : cmd == Command::LocalLaw ? ExperimentKind::LocalLaw
                                        : cmd == Command::Fluct    ? ExperimentKind::Fluctuation
                                        : cmd == Command::Stability ? ExperimentKind::Stability
                                                                    : ExperimentKind::Goe;
            std::vector<EnsembleSpec> specs;
            for (std::size_t n : cfg.N) specs.push_back(cfg.spec(n));
            auto opt = cfg.experiment_options();
            opt.log = [&log](const std::string& s) { log << s << std::endl; };
            experiment = run_experiment(kind, specs, cfg.M, opt);
            break;
        }
    }

    for (const auto& [p, text] : payloads) detail::write_text(p, text, res.files);
    if (experiment) {
        const auto written = write_run(*experiment, cfg.output);
        res.files.insert(res.files.end(), written.begin(), written.end());
        for (const auto& c : experiment->checks) {
            log << (c.pass ? "PASS " : "FAIL ") << c.name << " = " << detail::format_double(c.value) << " (" << c.bound
                << ")\n";
        }
        res.exit_status = experiment->pass() ? 0 : 2;
    }
    const std::string cmd_name(to_string(cmd));
    detail::write_text(out / (cmd_name + "_config.cfg"), to_config_text(cfg), res.files);

    Json meta;
    meta["command"] = cmd_name;
    meta["started"] = detail::iso_time(started);
    meta["finished"] = detail::iso_time(std::chrono::system_clock::now());
    meta["workers"] = cfg.workers;
    meta["lapack"] = lapack_available();
    meta["exit_status"] = res.exit_status;
    meta["files"] = res.files;
    detail::write_text(out / (cmd_name + "_metadata.json"), meta.dump(2) + "\n", res.files);
    return res;
}

}  // namespace edgelab
