#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <gsl/gsl_multimin.h>

#include "constants.hpp"
#include "grid.hpp"

namespace tsl {

using PointFn = std::function<double(const std::vector<double>&)>;

inline GridField sample_function(const PointFn& f, int dim, int N, double L) {
    GridField g = GridField::cubic(dim, N, L, std::vector<double>(std::size_t(std::pow(N, dim)), 0.0));
    std::vector<double> v(g.size());
    std::vector<int> idx;
    std::vector<double> x(dim);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.unravel(i, idx);
        for (int a = 0; a < dim; ++a) x[a] = g.coord(a, idx[a]);
        v[i] = f(x);
        if (!std::isfinite(v[i])) {
            std::string where;
            for (int a = 0; a < dim; ++a) where += (a ? "," : "") + std::to_string(x[a]);
            throw error(errc::input, "non-finite sample at node (" + where + ")");
        }
    }
    return g.with_values(std::move(v));
}

inline double dalpha_inner(const GridField& f, const GridField& g, double alpha) {
    if (alpha < 0) throw error(errc::parameter, "D_alpha order must be >= 0");
    if (f.shape() != g.shape() || f.spacing() != g.spacing()) throw error(errc::parameter, "grid mismatch");
    const auto& a = f.spectrum();
    const auto& b = g.spectrum();
    const auto k2 = f.k_squared();
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (alpha > 0 && k2[i] == 0) continue;
        const double w = alpha == 0 ? 1.0 : std::pow(4 * pi * pi * k2[i], alpha);
        s += w * (a[i].real() * b[i].real() + a[i].imag() * b[i].imag());
    }
    return s * f.dual_cell();
}

inline double dalpha_norm(const GridField& f, double alpha) { return std::sqrt(std::max(0.0, dalpha_inner(f, f, alpha))); }

struct LqNorms {
    double strong;
    double weak;
};

// strong and weak (Marcinkiewicz) L^q norms; with a mask only the marked nodes count
inline LqNorms lq_norms(const GridField& f, double q, const std::vector<bool>* mask = nullptr) {
    if (!(q > 0)) throw error(errc::parameter, "q must be positive");
    std::vector<double> a;
    a.reserve(f.size());
    for (std::size_t i = 0; i < f.size(); ++i)
        if (!mask || (*mask)[i]) a.push_back(std::abs(f[i]));
    const double cell = f.cell();
    double strong = 0;
    for (double v : a) strong += std::pow(v, q);
    strong = std::pow(strong * cell, 1 / q);
    // sup_t t |{|u| > t}|^{1/q}: the sup over t just below each sample value v is v (#{|u| >= v} cell)^{1/q}
    std::sort(a.begin(), a.end(), std::greater<>());
    double weak = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (k + 1 < a.size() && a[k + 1] == a[k]) continue;
        weak = std::max(weak, a[k] * std::pow(double(k + 1) * cell, 1 / q));
    }
    return {strong, weak};
}

inline GridField trace_restrict(const GridField& f, int m) {
    if (m < 0 || m >= f.dim()) throw error(errc::parameter, "trace codimension must satisfy 0 <= m < dim");
    if (m == 0) return f;
    // axes have an even sample count, so node N/2 sits at 0
    std::vector<int> shape(f.shape().begin(), f.shape().end() - m);
    std::size_t tail_stride = 1, offset = 0;
    for (int a = f.dim() - 1; a >= f.dim() - m; --a) {
        offset += std::size_t(f.samples(a) / 2) * tail_stride;
        tail_stride *= f.samples(a);
    }
    std::size_t count = 1;
    for (int n : shape) count *= n;
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = f[i * tail_stride + offset];
    return GridField(shape, f.spacing(), std::move(v));
}

namespace detail {

// per-trace-mode lattice normalization C1^(k1) = dual_cell_extra sum_{k2} (|k1|^2 + |k2|^2)^{-alpha}
inline std::vector<double> lattice_c1(const GridField& trace, int m, int N_extra, double h, double alpha) {
    std::vector<double> k2x;
    const double Lx = 0.5 * N_extra * h;
    for (int j = 0; j < N_extra; ++j) {
        const double f = double(j < N_extra / 2 ? j : j - N_extra) / (2 * Lx);
        k2x.push_back(f * f);
    }
    // all |k2|^2 values over the m extra axes
    std::vector<double> k2sum{0.0};
    for (int a = 0; a < m; ++a) {
        std::vector<double> next;
        next.reserve(k2sum.size() * k2x.size());
        for (double s : k2sum)
            for (double t : k2x) next.push_back(s + t);
        k2sum.swap(next);
    }
    const double dual_extra = std::pow(1 / (2 * Lx), m);
    const auto k1 = trace.k_squared();
    std::vector<double> out(k1.size());
    for (std::size_t i = 0; i < k1.size(); ++i) {
        double s = 0;
        for (double t : k2sum) {
            const double kk = k1[i] + t;
            if (kk > 0) s += std::pow(kk, -alpha);
        }
        out[i] = dual_extra * s;
    }
    return out;
}

inline void require_mean_zero(const GridField& f, const char* what) {
    const auto& s = f.spectrum();
    double l1 = 0;
    for (double v : f.values()) l1 += std::abs(v);
    l1 *= f.cell();
    if (std::abs(s[0]) > 1e-10 * std::max(l1, 1e-300))
        throw error(errc::dc_mode, std::string(what) + ": zero Fourier mode is " + std::to_string(std::abs(s[0])) +
                                       " (mean-zero convention on the torus)");
}

}  // namespace detail

// Minimal-norm extension with the given trace: g^(k1,k2) = trace^(k1) / (C1^(k1) |k|^{2 alpha}).
inline GridField reduction_extension(const GridField& trace, const TraceParams& prm, int N_extra, double L_extra) {
    prm.validate_reduction();
    if (trace.dim() != prm.n - prm.m) throw error(errc::parameter, "trace dimension must be n - m");
    if (!detail::is_pow2(N_extra)) throw error(errc::parameter, "N_extra must be a power of two");
    const double h = trace.spacing();
    if (std::abs(2 * L_extra / N_extra - h) > 1e-12 * h)
        throw error(errc::parameter, "extension axes must share the trace grid spacing");
    detail::require_mean_zero(trace, "reduction_extension");
    const int m = prm.m;
    if (m == 0) return trace;
    const auto c1 = detail::lattice_c1(trace, m, N_extra, h, prm.alpha);
    const auto& ts = trace.spectrum();
    const auto k1 = trace.k_squared();

    std::vector<int> shape = trace.shape();
    for (int a = 0; a < m; ++a) shape.push_back(N_extra);
    std::size_t tail = 1;
    for (int a = 0; a < m; ++a) tail *= N_extra;
    std::vector<cplx> spec(ts.size() * tail);
    std::vector<double> fx(N_extra);
    for (int j = 0; j < N_extra; ++j) fx[j] = double(j < N_extra / 2 ? j : j - N_extra) / (2 * L_extra);
    for (std::size_t t = 0; t < tail; ++t) {
        // extra multi-index; (-1)^{sum j} moves the origin of the extra axes to node N_extra/2
        double kk2 = 0;
        int parity = 0;
        std::size_t r = t;
        for (int a = 0; a < m; ++a) {
            const int j = int(r % N_extra);
            r /= N_extra;
            kk2 += fx[j] * fx[j];
            parity += j;
        }
        const double sign = parity % 2 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const double kk = k1[i] + kk2;
            if (kk == 0) continue;
            spec[i * tail + t] = sign * ts[i] / (c1[i] * std::pow(kk, prm.alpha));
        }
    }
    return GridField::from_spectrum(shape, h, std::move(spec));
}

struct DeficitResult {
    double deficit;
    double trace_norm_s;
    double tolerance;  // discretization allowance for the sign check
};

inline DeficitResult trace_deficit(const GridField& f, const TraceParams& prm) {
    prm.validate();
    if (f.dim() != prm.n) throw error(errc::parameter, "field dimension must equal n");
    const double norm2 = std::pow(dalpha_norm(f, prm.alpha), 2);
    const auto tr = trace_restrict(f, prm.m);
    const double ls = lq_norms(tr, prm.s()).strong;
    return {norm2 - sharp_trace_constant(prm) * ls * ls, ls, 1e-6 * norm2};
}

// ---- distance to the extremal manifold ----

struct ExtremalParams {
    double amplitude = 0;
    double gamma = 1;
    std::vector<double> center;
};

struct ManifoldDistance {
    double distance;
    ExtremalParams best;
    bool converged;
    int starts;
};

namespace detail {

// (gamma^2 + |x - a|^2)^{-(N - 2 beta)/2} on the grid of g
inline GridField extremal_sample(const GridField& like, double beta, double gamma, const std::vector<double>& a) {
    const int N = like.dim();
    std::vector<double> v(like.size());
    std::vector<int> idx;
    const double e = -0.5 * (N - 2 * beta);
    for (std::size_t i = 0; i < like.size(); ++i) {
        like.unravel(i, idx);
        double r2 = gamma * gamma;
        for (int d = 0; d < N; ++d) {
            const double x = like.coord(d, idx[d]) - a[d];
            r2 += x * x;
        }
        v[i] = std::pow(r2, e);
    }
    return like.with_values(std::move(v));
}

// weighted spectral inner product on the trace grid
inline double weighted_inner(const std::vector<cplx>& a, const std::vector<cplx>& b, const std::vector<double>& w) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * (a[i].real() * b[i].real() + a[i].imag() * b[i].imag());
    return s;
}

struct NmProblem {
    const GridField* trace;
    const std::vector<double>* w;
    double beta;
    double ff;
};

inline double nm_objective(const gsl_vector* x, void* params) {
    auto* P = static_cast<NmProblem*>(params);
    const int N = P->trace->dim();
    const double gamma = std::exp(gsl_vector_get(x, 0));
    std::vector<double> a(N);
    for (int d = 0; d < N; ++d) a[d] = gsl_vector_get(x, 1 + d);
    const auto phi = extremal_sample(*P->trace, P->beta, gamma, a);
    const auto& ps = phi.spectrum();
    const double fp = weighted_inner(P->trace->spectrum(), ps, *P->w);
    const double pp = weighted_inner(ps, ps, *P->w);
    return P->ff - (pp > 0 ? fp * fp / pp : 0.0);
}

}  // namespace detail

// dist(f, M_{n,m,alpha}) in the discrete D_alpha metric. For m > 0 the distance splits as
// ||f - g||^2 + min ||ext(trace f - phi)||^2 with g the minimal extension; both terms use the lattice
// normalization of reduction_extension.
inline ManifoldDistance manifold_distance(const GridField& f, const TraceParams& prm, std::uint64_t seed = 1,
                                          int starts = 8) {
    prm.validate();
    if (f.dim() != prm.n) throw error(errc::parameter, "field dimension must equal n");
    const auto tr = trace_restrict(f, prm.m);
    const int N = tr.dim();
    const double beta = prm.beta();
    const auto k1 = tr.k_squared();
    std::vector<double> w(k1.size(), 0.0);
    double base = 0;
    if (prm.m == 0) {
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] = k1[i] > 0 ? std::pow(4 * pi * pi * k1[i], prm.alpha) * tr.dual_cell() : 0.0;
    } else {
        const int Nx = f.samples(f.dim() - 1);
        const auto c1 = detail::lattice_c1(tr, prm.m, Nx, f.spacing(), prm.alpha);
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] = k1[i] > 0 ? tr.dual_cell() * std::pow(2 * pi, 2 * prm.alpha) / c1[i] : 0.0;
        // ||f - g||^2 = ||f||^2 - ||g||^2 with ||g||^2 the weighted trace norm
        base = std::pow(dalpha_norm(f, prm.alpha), 2) - detail::weighted_inner(tr.spectrum(), tr.spectrum(), w);
    }
    const double ff = detail::weighted_inner(tr.spectrum(), tr.spectrum(), w);

    // seeds from the peak of |trace| and its half-maximum width
    std::size_t ipk = 0;
    for (std::size_t i = 0; i < tr.size(); ++i)
        if (std::abs(tr[i]) > std::abs(tr[ipk])) ipk = i;
    std::vector<int> idx;
    tr.unravel(ipk, idx);
    std::vector<double> a0(N);
    for (int d = 0; d < N; ++d) a0[d] = tr.coord(d, idx[d]);
    std::size_t above = 0;
    for (double v : tr.values())
        if (std::abs(v) >= 0.5 * std::abs(tr[ipk])) ++above;
    const double r_half = std::pow(above * tr.cell() / ball_volume(N), 1.0 / N);
    // (gamma^2 + r^2)^{-e} halves at r^2 = gamma^2 (2^{1/e} - 1)
    const double e = 0.5 * (N - 2 * beta);
    const double g0 = std::max(tr.spacing(), r_half / std::sqrt(std::pow(2.0, 1 / e) - 1));

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> jitter(0.0, 1.0);
    detail::NmProblem P{&tr, &w, beta, ff};
    gsl_multimin_function F{&detail::nm_objective, std::size_t(N + 1), &P};

    ManifoldDistance best{std::sqrt(std::max(0.0, base + ff)), {0, g0, a0}, false, starts};
    double best_val = ff;
    bool any_converged = false;
    for (int s = 0; s < starts; ++s) {
        gsl_vector* x = gsl_vector_alloc(N + 1);
        gsl_vector* step = gsl_vector_alloc(N + 1);
        const double gs = s == 0 ? g0 : g0 * std::exp(0.5 * jitter(rng));
        gsl_vector_set(x, 0, std::log(gs));
        gsl_vector_set(step, 0, 0.3);
        for (int d = 0; d < N; ++d) {
            gsl_vector_set(x, 1 + d, a0[d] + (s == 0 ? 0.0 : 0.3 * gs * jitter(rng)));
            gsl_vector_set(step, 1 + d, 0.3 * gs);
        }
        gsl_multimin_fminimizer* M = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, N + 1);
        gsl_multimin_fminimizer_set(M, &F, x, step);
        int status = GSL_CONTINUE;
        for (int it = 0; it < 4000 && status == GSL_CONTINUE; ++it) {
            if (gsl_multimin_fminimizer_iterate(M)) break;
            status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(M), 1e-10);
        }
        const double val = M->fval;
        if (status == GSL_SUCCESS) any_converged = true;
        if (val < best_val) {
            best_val = val;
            const gsl_vector* xb = gsl_multimin_fminimizer_x(M);
            ExtremalParams ep;
            ep.gamma = std::exp(gsl_vector_get(xb, 0));
            for (int d = 0; d < N; ++d) ep.center.push_back(gsl_vector_get(xb, 1 + d));
            const auto phi = detail::extremal_sample(tr, beta, ep.gamma, ep.center);
            const double pp = detail::weighted_inner(phi.spectrum(), phi.spectrum(), w);
            ep.amplitude = detail::weighted_inner(tr.spectrum(), phi.spectrum(), w) / pp;
            best.best = ep;
        }
        gsl_multimin_fminimizer_free(M);
        gsl_vector_free(x);
        gsl_vector_free(step);
    }
    best.distance = std::sqrt(std::max(0.0, base + best_val));
    best.converged = any_converged;
    return best;
}

// ---- refined embeddings ----

struct RefinedEmbeddingSpec {
    std::vector<bool> omega_mask;  // on the trace grid
    double q1;
    double q2;

    static RefinedEmbeddingSpec from_params(const TraceParams& p, std::vector<bool> mask) {
        const double n = p.n, m = p.m, a = p.alpha;
        return {std::move(mask), (n - m) / (n - 2 * a), (n - m) / (n - a - m / 2)};
    }
};

struct RefinedEmbeddingReport {
    double deficit;
    double omega_measure;
    double weak_trace;                       // ||tau_m u||_{L^{q1}_w(Omega)}
    std::optional<double> weak_derivative;   // ||Delta^{(2 alpha - m)/4} tau_m u||_{L^{q2}_w(Omega)}
    double implied_c1;
    std::optional<double> implied_c2;
    // the measure condition names H^m of Omega in R^m while the trace lives in R^{n-m};
    // Omega is measured in the trace hyperplane and this flag records the mismatch
    bool measure_index_flag = true;
};

inline RefinedEmbeddingReport refined_embedding_report(const GridField& f, const RefinedEmbeddingSpec& spec,
                                                       const TraceParams& prm) {
    prm.validate();
    if (!(spec.q1 > spec.q2 && spec.q2 > 1)) throw error(errc::parameter, "need q1 > q2 > 1");
    const auto tr = trace_restrict(f, prm.m);
    if (spec.omega_mask.size() != tr.size()) throw error(errc::parameter, "Omega mask does not match the trace grid");
    double peak = 0, outside = 0;
    std::size_t cells = 0;
    for (std::size_t i = 0; i < tr.size(); ++i) {
        peak = std::max(peak, std::abs(tr[i]));
        if (spec.omega_mask[i])
            ++cells;
        else
            outside = std::max(outside, std::abs(tr[i]));
    }
    if (outside > 1e-10 * std::max(peak, 1e-300))
        throw error(errc::precondition, "trace does not vanish outside Omega (max " + std::to_string(outside) + ")");
    RefinedEmbeddingReport rep{};
    rep.deficit = trace_deficit(f, prm).deficit;
    rep.omega_measure = cells * tr.cell();
    rep.weak_trace = lq_norms(tr, spec.q1, &spec.omega_mask).weak;
    const double scale = std::pow(rep.omega_measure, -1 / spec.q1);
    rep.implied_c1 = rep.deficit / (scale * rep.weak_trace * rep.weak_trace);
    const double b = prm.beta();
    if (std::abs(b - std::round(b)) < 1e-12 && b >= 1) {
        // Delta^{b/2} as the spectral multiplier |2 pi k|^b
        auto s = tr.spectrum();
        const auto k2 = tr.k_squared();
        for (std::size_t i = 0; i < s.size(); ++i) s[i] *= std::pow(4 * pi * pi * k2[i], 0.5 * b);
        const auto d = GridField::from_spectrum(tr.shape(), tr.spacing(), std::move(s));
        rep.weak_derivative = lq_norms(d, spec.q2, &spec.omega_mask).weak;
        rep.implied_c2 = rep.deficit / (scale * *rep.weak_derivative * *rep.weak_derivative);
    }
    return rep;
}

struct StripEmbeddingReport {
    double deficit;
    double weak_norm;
    double implied_c;
};

// strip version: u supported in [-1,1] x R^{n-1}, order m with n/4 <= m < n/2
inline StripEmbeddingReport strip_embedding_report(const GridField& u, int order) {
    const int n = u.dim();
    if (!(4 * order >= n && 2 * order < n)) throw error(errc::parameter, "strip estimate needs n/4 <= m < n/2");
    std::vector<bool> strip(u.size());
    std::vector<int> idx;
    double peak = 0, outside = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        u.unravel(i, idx);
        strip[i] = std::abs(u.coord(0, idx[0])) <= 1 + 1e-12;
        peak = std::max(peak, std::abs(u[i]));
        if (!strip[i]) outside = std::max(outside, std::abs(u[i]));
    }
    if (outside > 1e-10 * std::max(peak, 1e-300)) throw error(errc::precondition, "support leaves the strip |x_1| <= 1");
    const double q = double(n) / (n - 2 * order);
    const TraceParams prm{n, 0, double(order)};
    StripEmbeddingReport r{};
    r.deficit = trace_deficit(u, prm).deficit;
    r.weak_norm = lq_norms(u, q, &strip).weak;
    r.implied_c = r.deficit / (r.weak_norm * r.weak_norm);
    return r;
}

}  // namespace tsl
