#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>

#include "edgelab/errors.hpp"
#include "edgelab/matrix.hpp"
#include "edgelab/random.hpp"

namespace edgelab {

enum class EntryFamily {
    // h = B * xi, B ~ Bernoulli(q^2 / (s^2 N)), xi uniform on {-s/q, +s/q}
    SignedSparse,
    // h = (chi - p) / sqrt(N p (1 - p)), chi ~ Bernoulli(p), p = q^2 / N
    CenteredBernoulli,
};

inline std::string_view to_string(EntryFamily f) {
    return f == EntryFamily::SignedSparse ? "SignedSparse" : "CenteredBernoulli";
}

inline EntryFamily parse_family(std::string_view s) {
    if (s == "SignedSparse") return EntryFamily::SignedSparse;
    if (s == "CenteredBernoulli") return EntryFamily::CenteredBernoulli;
    throw ValidationError("unknown family '" + std::string(s) +
                          "' (expected SignedSparse or CenteredBernoulli)");
}

/// Law of one matrix entry: dimension N, sparsity exponent b (q = N^b),
/// entry family, and the master seed of the sample streams.
struct EnsembleSpec {
    std::size_t N = 1000;
    double b = 0.2;
    EntryFamily family = EntryFamily::SignedSparse;
    double scale = 1.0;  // s, SignedSparse only
    std::uint64_t master_seed = 0;
    double c_min = 0.1;  // lower bound on the normalized fourth cumulant
    double c_max = 10.0; // bound on |c_p|, p <= 8

    double q() const { return std::pow(static_cast<double>(N), b); }

    /// Probability that an entry is nonzero (SignedSparse) or that chi = 1.
    double activation_probability() const {
        const double q2 = q() * q();
        const double n = static_cast<double>(N);
        return family == EntryFamily::SignedSparse ? q2 / (scale * scale * n) : q2 / n;
    }

    bool operator==(const EnsembleSpec&) const = default;
};

/// Two-point support plus probability of the nonzero atom; every entry law
/// here is a mixture of at most three atoms.
struct EntryLaw {
    double p_hi = 0.0;   // probability of `hi` (and of `-hi` for SignedSparse)
    double hi = 0.0;
    double lo = 0.0;     // the value taken with the remaining probability
    bool symmetric = false;
};

inline void validate(const EnsembleSpec& spec) {
    if (spec.N < 1) throw ValidationError("N must be >= 1");
    if (!(spec.b > 0.0 && spec.b < 0.5)) {
        throw ValidationError("b must lie in (0, 0.5): q = N^b with 0 < b < 1/2");
    }
    if (spec.family == EntryFamily::SignedSparse && !(spec.scale > 0.0 && std::isfinite(spec.scale))) {
        throw ValidationError("scale must be positive");
    }
    const double p = spec.activation_probability();
    if (!(p > 0.0)) throw ValidationError("activation probability must be positive");
    // Rounding slack so that s = q / sqrt(N) (every entry active) is accepted.
    if (p > 1.0 + 1e-12) {
        throw ValidationError("activation probability " + std::to_string(p) + " exceeds 1");
    }
    if (spec.family == EntryFamily::CenteredBernoulli && p >= 1.0) {
        throw ValidationError("CenteredBernoulli needs q^2 < N (activation probability < 1)");
    }
}

inline EntryLaw entry_law(const EnsembleSpec& spec) {
    const double n = static_cast<double>(spec.N);
    const double p = spec.activation_probability();
    EntryLaw law;
    if (spec.family == EntryFamily::SignedSparse) {
        law.p_hi = std::min(p, 1.0);
        law.hi = spec.scale / spec.q();
        law.lo = 0.0;
        law.symmetric = true;
    } else {
        const double sd = std::sqrt(n * p * (1.0 - p));
        law.p_hi = p;
        law.hi = (1.0 - p) / sd;
        law.lo = -p / sd;
        law.symmetric = false;
    }
    return law;
}

/// Exact raw moment E h^order (order <= 16) of the entry law.
inline double entry_moment(const EnsembleSpec& spec, int order) {
    if (order == 0) return 1.0;
    if (order == 1) return 0.0;
    if (order == 2) return 1.0 / static_cast<double>(spec.N);
    const EntryLaw law = entry_law(spec);
    if (law.symmetric) {
        if (order % 2 == 1) return 0.0;
        return law.p_hi * std::pow(law.hi, order);
    }
    return law.p_hi * std::pow(law.hi, order) + (1.0 - law.p_hi) * std::pow(law.lo, order);
}

inline constexpr int kMaxCumulantOrder = 8;

/// Cumulants C_2..C_8 and normalized cumulants c_p = C_p N q^{p-2} / (p-1)!.
struct CumulantProfile {
    std::array<double, kMaxCumulantOrder + 1> C{};  // index p, entries 0 and 1 unused
    std::array<double, kMaxCumulantOrder + 1> c{};
};

inline CumulantProfile cumulants(const EnsembleSpec& spec) {
    validate(spec);
    // kappa_n = m_n - sum_{k=1}^{n-1} binom(n-1, k-1) kappa_k m_{n-k}
    std::array<long double, kMaxCumulantOrder + 1> m{};
    std::array<long double, kMaxCumulantOrder + 1> kappa{};
    for (int p = 0; p <= kMaxCumulantOrder; ++p) m[p] = entry_moment(spec, p);
    for (int n = 1; n <= kMaxCumulantOrder; ++n) {
        long double acc = m[n];
        long double binom = 1.0L;  // binom(n-1, k-1), starting at k = 1
        for (int k = 1; k < n; ++k) {
            acc -= binom * kappa[k] * m[n - k];
            binom = binom * static_cast<long double>(n - k) / static_cast<long double>(k);
        }
        kappa[n] = acc;
    }

    CumulantProfile prof;
    const long double n = static_cast<long double>(spec.N);
    const long double q = spec.q();
    long double factorial = 1.0L;  // (p-1)!
    for (int p = 2; p <= kMaxCumulantOrder; ++p) {
        factorial *= static_cast<long double>(p - 1);
        prof.C[p] = static_cast<double>(kappa[p]);
        prof.c[p] = static_cast<double>(kappa[p] * n * std::pow(q, static_cast<long double>(p - 2)) / factorial);
    }
    prof.C[2] = 1.0 / static_cast<double>(spec.N);

    if (prof.c[4] < spec.c_min) {
        std::ostringstream os;
        os << "normalized fourth cumulant c_4 = " << prof.c[4] << " is below c_min = " << spec.c_min;
        throw ValidationError(os.str());
    }
    for (int p = 2; p <= kMaxCumulantOrder; ++p) {
        if (std::fabs(prof.c[p]) > spec.c_max) {
            throw ValidationError("|c_" + std::to_string(p) + "| exceeds c_max");
        }
    }
    return prof;
}

/// One symmetric realization. `seed` is the stream seed derived from
/// (spec.master_seed, index).
struct MatrixSample {
    DenseMatrix entries;
    std::uint64_t seed = 0;
    std::uint64_t index = 0;
    EnsembleSpec spec;

    std::size_t size() const noexcept { return entries.size(); }
};

/// Deterministic in (spec.master_seed, index). The upper triangle including
/// the diagonal is drawn row by row and mirrored.
inline MatrixSample sample(const EnsembleSpec& spec, std::uint64_t index) {
    validate(spec);
    const EntryLaw law = entry_law(spec);
    const std::size_t n = spec.N;

    MatrixSample out;
    out.spec = spec;
    out.index = index;
    out.seed = stream_seed(spec.master_seed, index);
    out.entries = DenseMatrix(n);
    std::mt19937_64 rng(out.seed);

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const bool active = uniform01(rng) < law.p_hi;
            double v;
            if (law.symmetric) {
                v = active ? ((rng() >> 63) ? -law.hi : law.hi) : 0.0;
            } else {
                v = active ? law.hi : law.lo;
            }
            out.entries(i, j) = v;
            out.entries(j, i) = v;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Plain-text spec: one `key = value` per line, keys N, b, family, scale,
// master_seed.

inline std::string to_config_text(const EnsembleSpec& spec) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "N = " << spec.N << '\n'
       << "b = " << spec.b << '\n'
       << "family = " << to_string(spec.family) << '\n'
       << "scale = " << spec.scale << '\n'
       << "master_seed = " << spec.master_seed << '\n';
    return os.str();
}

namespace detail {
inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}
}  // namespace detail

inline EnsembleSpec parse_spec_text(std::string_view text) {
    EnsembleSpec spec;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = detail::trim(std::string_view(t).substr(0, eq));
        const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        try {
            if (key == "N") {
                spec.N = std::stoull(value);
            } else if (key == "b") {
                spec.b = std::stod(value);
            } else if (key == "family") {
                spec.family = parse_family(value);
            } else if (key == "scale") {
                spec.scale = std::stod(value);
            } else if (key == "master_seed") {
                spec.master_seed = std::stoull(value);
            } else {
                throw ValidationError("unknown key");
            }
        } catch (const std::exception& e) {
            throw ValidationError("line " + std::to_string(line_no) + ", key '" + key + "': " + e.what());
        }
    }
    validate(spec);
    return spec;
}

// ---------------------------------------------------------------------------
// Binary dump: 8-byte little-endian N, then N*N little-endian float64, row-major.

inline void write_binary(const std::string& path, const DenseMatrix& m) {
    static_assert(std::endian::native == std::endian::little, "binary dumps assume a little-endian host");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    const std::uint64_t n = m.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(m.data().data()),
              static_cast<std::streamsize>(m.data().size() * sizeof(double)));
    if (!out) throw Error("short write to " + path);
}

inline DenseMatrix read_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || n > (1u << 16)) throw Error("bad header in " + path);
    DenseMatrix m(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(m.data().data()), static_cast<std::streamsize>(n * n * sizeof(double)));
    if (!in) throw Error("truncated matrix in " + path);
    return m;
}

}  // namespace edgelab
