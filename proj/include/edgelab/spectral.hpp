#pragma once

#include <algorithm>
#include <bit>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "edgelab/ensemble.hpp"
#include "edgelab/errors.hpp"
#include "edgelab/matrix.hpp"
#include "edgelab/polynomial.hpp"
#include "edgelab/random.hpp"
#include "edgelab/summation.hpp"
#include "edgelab/tridiagonal.hpp"

#ifdef EDGELAB_HAVE_LAPACK
extern "C" void dsyevd_(const char* jobz, const char* uplo, const int* n, double* a, const int* lda, double* w,
                        double* work, const int* lwork, int* iwork, const int* liwork, int* info, std::size_t,
                        std::size_t);
#endif

namespace edgelab {

enum class EigenBackend { Auto, Native, Lapack };

inline constexpr bool lapack_available() {
#ifdef EDGELAB_HAVE_LAPACK
    return true;
#else
    return false;
#endif
}

inline constexpr std::size_t kMaxDenseN = 8192;

struct SpectrumResult {
    std::vector<double> eigenvalues;       // descending
    std::optional<DenseMatrix> vectors;    // column j belongs to eigenvalues[j]

    std::size_t size() const noexcept { return eigenvalues.size(); }
};

namespace detail {

[[noreturn]] inline void fail_with_dump(const DenseMatrix& a, const std::string& what) {
    std::uint64_t hash = 0x9E3779B97F4A7C15ull;
    for (double v : a.data()) hash = splitmix64(hash ^ std::bit_cast<std::uint64_t>(v));
    char name[64];
    std::snprintf(name, sizeof name, "edgelab_failed_%016llx.bin", static_cast<unsigned long long>(hash));
    std::string path = (std::filesystem::temp_directory_path() / name).string();
    try {
        write_binary(path, a);
    } catch (const std::exception&) {
        path = "(dump failed)";
    }
    throw NumericError(what + "; matrix dumped to " + path);
}

inline SpectrumResult sort_descending(std::vector<double> vals, std::optional<DenseMatrix> vecs) {
    const std::size_t n = vals.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });
    SpectrumResult out;
    out.eigenvalues.resize(n);
    for (std::size_t j = 0; j < n; ++j) out.eigenvalues[j] = vals[order[j]];
    if (vecs) {
        DenseMatrix v(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) v(i, j) = (*vecs)(i, order[j]);
        }
        out.vectors = std::move(v);
    }
    return out;
}

inline SpectrumResult eigen_native(const DenseMatrix& a, bool want_vectors) {
    DenseMatrix v = a;
    std::vector<double> d, e;
    detail::tred2(v, d, e, want_vectors);
    try {
        detail::tql2(d, e, want_vectors ? &v : nullptr);
    } catch (const NumericError& err) {
        fail_with_dump(a, err.what());
    }
    return sort_descending(std::move(d), want_vectors ? std::optional<DenseMatrix>(std::move(v)) : std::nullopt);
}

#ifdef EDGELAB_HAVE_LAPACK
inline SpectrumResult eigen_lapack(const DenseMatrix& a, bool want_vectors) {
    const int n = static_cast<int>(a.size());
    // Symmetric, so the row-major buffer is also its column-major self.
    std::vector<double> buf(a.data().begin(), a.data().end());
    std::vector<double> w(static_cast<std::size_t>(n));
    const char jobz = want_vectors ? 'V' : 'N';
    const char uplo = 'U';
    int info = 0;
    int lwork = -1, liwork = -1;
    double wq = 0.0;
    int iwq = 0;
    dsyevd_(&jobz, &uplo, &n, buf.data(), &n, w.data(), &wq, &lwork, &iwq, &liwork, &info, 1, 1);
    lwork = static_cast<int>(wq);
    liwork = std::max(iwq, 1);
    std::vector<double> work(static_cast<std::size_t>(std::max(lwork, 1)));
    std::vector<int> iwork(static_cast<std::size_t>(liwork));
    dsyevd_(&jobz, &uplo, &n, buf.data(), &n, w.data(), work.data(), &lwork, iwork.data(), &liwork, &info, 1, 1);
    if (info != 0) fail_with_dump(a, "dsyevd failed with info = " + std::to_string(info));

    std::optional<DenseMatrix> vecs;
    if (want_vectors) {
        // Column-major output: eigenvector j occupies buf[j*n .. j*n+n).
        DenseMatrix v(a.size());
        for (std::size_t j = 0; j < a.size(); ++j) {
            for (std::size_t i = 0; i < a.size(); ++i) v(i, j) = buf[j * a.size() + i];
        }
        vecs = std::move(v);
    }
    return sort_descending(std::move(w), std::move(vecs));
}
#endif

}  // namespace detail

/// Full spectrum, descending. Auto uses LAPACK when the build found it.
inline SpectrumResult eigen(const DenseMatrix& a, bool want_vectors, EigenBackend backend = EigenBackend::Auto) {
    if (a.size() > kMaxDenseN) throw ValidationError("eigen: dense path supports N <= 8192");
    if (a.size() == 0) return {};
    if (backend == EigenBackend::Lapack && !lapack_available()) {
        throw ValidationError("eigen: LAPACK backend not compiled in");
    }
#ifdef EDGELAB_HAVE_LAPACK
    if (backend != EigenBackend::Native) return detail::eigen_lapack(a, want_vectors);
#endif
    return detail::eigen_native(a, want_vectors);
}

inline SpectrumResult eigen(const MatrixSample& s, bool want_vectors, EigenBackend backend = EigenBackend::Auto) {
    return eigen(s.entries, want_vectors, backend);
}

/// (1/N) sum_i 1 / (lambda_i - z)
inline cplx empirical_stieltjes(const SpectrumResult& sp, cplx z) {
    ComplexCompensatedSum s;
    for (double l : sp.eigenvalues) s += 1.0 / (l - z);
    return s.value() / static_cast<double>(sp.size());
}

inline cplx empirical_stieltjes(std::span<const double> eigenvalues, cplx z) {
    ComplexCompensatedSum s;
    for (double l : eigenvalues) s += 1.0 / (l - z);
    return s.value() / static_cast<double>(eigenvalues.size());
}

namespace detail {

inline const DenseMatrix& need_vectors(const SpectrumResult& sp) {
    if (!sp.vectors) throw ValidationError("resolvent needs eigenvectors");
    return *sp.vectors;
}

}  // namespace detail

/// Row `row` of G(z) = V diag(1/(lambda - z)) V^T.
inline std::vector<cplx> resolvent_row(const SpectrumResult& sp, cplx z, std::size_t row) {
    const DenseMatrix& v = detail::need_vectors(sp);
    const std::size_t n = sp.size();
    std::vector<cplx> inv(n);
    for (std::size_t k = 0; k < n; ++k) inv[k] = 1.0 / (sp.eigenvalues[k] - z);
    std::vector<cplx> g(n);
    for (std::size_t l = 0; l < n; ++l) {
        ComplexCompensatedSum s;
        for (std::size_t k = 0; k < n; ++k) s += v(row, k) * v(l, k) * inv[k];
        g[l] = s.value();
    }
    return g;
}

/// |sum_l |G_{row,l}|^2 - Im G_{row,row} / eta|
inline double check_ward(const SpectrumResult& sp, cplx z, std::size_t row) {
    if (!(z.imag() > 0.0)) throw ValidationError("check_ward: Im z must be positive");
    const auto g = resolvent_row(sp, z, row);
    CompensatedSum s;
    for (const auto& x : g) s += std::norm(x);
    return std::fabs(s.value() - g[row].imag() / z.imag());
}

inline double check_ward(const MatrixSample& smp, cplx z, std::size_t row) {
    return check_ward(eigen(smp, true), z, row);
}

/// |G_ii - (m + (G_ii/N) sum_{x,y} h_xy G_yx - m sum_x h_ix G_xi)|
inline double check_resolvent_identity(const DenseMatrix& h, const SpectrumResult& sp, cplx z, std::size_t i) {
    if (!(z.imag() > 0.0)) throw ValidationError("check_resolvent_identity: Im z must be positive");
    const std::size_t n = h.size();
    std::vector<std::vector<cplx>> g(n);
    for (std::size_t r = 0; r < n; ++r) g[r] = resolvent_row(sp, z, r);

    ComplexCompensatedSum tr_g, tr_hg, row_hg;
    for (std::size_t x = 0; x < n; ++x) {
        tr_g += g[x][x];
        for (std::size_t y = 0; y < n; ++y) tr_hg += h(x, y) * g[y][x];
        row_hg += h(i, x) * g[x][i];
    }
    const double nd = static_cast<double>(n);
    const cplx m = tr_g.value() / nd;
    const cplx gii = g[i][i];
    const cplx rhs = m + gii / nd * tr_hg.value() - m * row_hg.value();
    return std::abs(gii - rhs);
}

inline double check_resolvent_identity(const MatrixSample& smp, cplx z, std::size_t i) {
    return check_resolvent_identity(smp.entries, eigen(smp, true), z, i);
}

/// CSV rows index, eigenvalue (1-based, descending).
inline std::string spectrum_csv(const SpectrumResult& sp) {
    std::ostringstream os;
    os << "schema_version,1\nindex,eigenvalue\n";
    char buf[64];
    for (std::size_t j = 0; j < sp.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", j + 1, sp.eigenvalues[j]);
        os << buf;
    }
    return os.str();
}

}  // namespace edgelab
