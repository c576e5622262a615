#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "bubbles.hpp"
#include "conformal_steklov.hpp"
#include "grid.hpp"
#include "poly.hpp"

namespace tsl {

// Harmonic function on R^n_+ given by exact bubble profiles plus a periodized boundary remainder whose
// interior values are the torus harmonic extension (Fourier decay e^{-2 pi |xi| t}).
struct HarmonicField {
    int n = 3;
    std::vector<std::pair<double, Bubble>> profiles;
    std::optional<GridField> remainder;

    static HarmonicField bubble(const Bubble& b, double coef = 1) { return {b.n, {{coef, b}}, {}}; }
    static HarmonicField from_trace(int n, GridField g) {
        if (g.dim() != n - 1) throw error(errc::parameter, "boundary trace must have dimension n - 1");
        return {n, {}, std::move(g)};
    }

    bool has_profiles() const { return !profiles.empty(); }

    // boundary or slab values on a grid of dimension n - 1
    GridField values_at(const GridField& like, double t) const {
        std::vector<double> v(like.size(), 0.0);
        std::vector<int> idx;
        std::vector<double> x(n - 1);
        for (const auto& [c, b] : profiles)
            for (std::size_t i = 0; i < like.size(); ++i) {
                like.unravel(i, idx);
                for (int a = 0; a < n - 1; ++a) x[a] = like.coord(a, idx[a]);
                v[i] += c * bubble_value<double>(n, b.z, b.lambda, x, t);
            }
        if (remainder) {
            if (remainder->shape() != like.shape() || remainder->spacing() != like.spacing())
                throw error(errc::parameter, "remainder lives on a different grid");
            const auto r = t == 0 ? *remainder : harmonic_slab(*remainder, t);
            for (std::size_t i = 0; i < v.size(); ++i) v[i] += r[i];
        }
        return like.with_values(std::move(v));
    }

    // every profile replaced by its samples: the raw representation on the given grid
    HarmonicField sampled(const GridField& like) const { return {n, {}, values_at(like, 0)}; }

    static GridField harmonic_slab(const GridField& g, double t) {
        auto s = g.spectrum();
        const auto k2 = g.k_squared();
        for (std::size_t i = 0; i < s.size(); ++i) s[i] *= std::exp(-2 * pi * std::sqrt(k2[i]) * t);
        return GridField::from_spectrum(g.shape(), g.spacing(), std::move(s));
    }
};

namespace detail {

inline double mean_ratio(const GridField& g) {
    double l1 = 0;
    for (double v : g.values()) l1 += std::abs(v);
    return l1 > 0 ? std::abs(g.spectrum()[0]) / (l1 * g.cell()) : 0.0;
}

// boundary trace of the torus Neumann solution: g^ / (2 pi |xi|), zero mode dropped
inline GridField torus_neumann_trace(const GridField& g, double t = 0) {
    auto s = g.spectrum();
    const auto k2 = g.k_squared();
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double k = std::sqrt(k2[i]);
        s[i] = k > 0 ? s[i] * std::exp(-2 * pi * k * t) / (2 * pi * k) : 0.0;
    }
    return GridField::from_spectrum(g.shape(), g.spacing(), std::move(s));
}

inline GridField bubble_boundary_power(const Bubble& b, const GridField& like, double power) {
    std::vector<double> v(like.size());
    std::vector<int> idx;
    std::vector<double> x(b.n - 1);
    for (std::size_t i = 0; i < like.size(); ++i) {
        like.unravel(i, idx);
        for (int a = 0; a < b.n - 1; ++a) x[a] = like.coord(a, idx[a]);
        v[i] = std::pow(bubble_value<double>(b.n, b.z, b.lambda, x, 0.0), power);
    }
    return like.with_values(std::move(v));
}

inline double torus_energy(const GridField& a, const GridField& b) {
    const auto& sa = a.spectrum();
    const auto& sb = b.spectrum();
    const auto k2 = a.k_squared();
    double s = 0;
    for (std::size_t i = 0; i < sa.size(); ++i)
        s += 2 * pi * std::sqrt(k2[i]) * (sa[i].real() * sb[i].real() + sa[i].imag() * sb[i].imag());
    return s * a.dual_cell();
}

inline void require_mean_zero_remainder(const HarmonicField& u) {
    if (u.remainder && mean_ratio(*u.remainder) > 1e-10)
        throw error(errc::mean_zero, "remainder next to exact profiles must be mean-zero (ratio " +
                                         std::to_string(mean_ratio(*u.remainder)) + ")");
}

}  // namespace detail

// Neumann extension of mean-zero boundary data: slab values g^ e^{-2 pi |xi| t} / (2 pi |xi|)
inline std::vector<GridField> neumann_extend(const GridField& g, const std::vector<double>& heights) {
    if (detail::mean_ratio(g) > 1e-12)
        throw error(errc::mean_zero, "Neumann data must be mean-zero on the torus (ratio " +
                                         std::to_string(detail::mean_ratio(g)) + ")");
    std::vector<GridField> out;
    for (double t : heights) {
        if (t < 0) throw error(errc::domain, "slab height must be >= 0");
        out.push_back(detail::torus_neumann_trace(g, t));
    }
    return out;
}

// Neumann extension of decaying data with nonzero mass. The mass is carried by the exact solution
// U_ref = U[center, lambda_ref] of -d_t U_ref = U_ref^p; the rest is mean-zero and solved on the torus.
struct DecayingNeumann {
    std::vector<GridField> slabs;
    double reference_mass;          // coefficient m of U_ref
    double moved_mass;              // m * int U_ref^p over the box = int g
    double moved_fraction;          // |moved_mass| / int |g|
    double edge_ratio;              // max |torus part| on the box faces / max |g|: the periodization indicator
    Bubble reference;
    GridField torus_trace;          // boundary trace of the torus part
};

inline DecayingNeumann neumann_extend_decaying(const GridField& g, const std::vector<double>& heights, int n,
                                               std::optional<std::vector<double>> center = {}, double lambda_ref = 0.5) {
    if (g.dim() != n - 1) throw error(errc::parameter, "Neumann data must have dimension n - 1");
    std::vector<double> z(n - 1, 0.0);
    if (center)
        z = *center;
    else {
        std::size_t ipk = 0;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (std::abs(g[i]) > std::abs(g[ipk])) ipk = i;
        std::vector<int> idx;
        g.unravel(ipk, idx);
        for (int a = 0; a < n - 1; ++a) z[a] = g.coord(a, idx[a]);
    }
    const Bubble ref(z, lambda_ref, n);
    const auto rp = detail::bubble_boundary_power(ref, g, EscobarParams(n).p());
    double sg = 0, sr = 0, l1 = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        sg += g[i];
        sr += rp[i];
        l1 += std::abs(g[i]);
    }
    // periodic mean-zero data needs no reference profile
    const double m = detail::mean_ratio(g) <= 1e-12 ? 0.0 : sg / sr;
    auto rest = g.values();
    for (std::size_t i = 0; i < rest.size(); ++i) rest[i] -= m * rp[i];
    double edge = 0, peak = 0;
    std::vector<int> idx;
    for (std::size_t i = 0; i < g.size() && m != 0; ++i) {
        peak = std::max(peak, std::abs(g[i]));
        g.unravel(i, idx);
        if (std::find(idx.begin(), idx.end(), 0) != idx.end()) edge = std::max(edge, std::abs(rest[i]));
    }
    const auto gt = g.with_values(std::move(rest));
    DecayingNeumann out{{},  m, m * sr * g.cell(), l1 > 0 ? std::abs(m) * sr / l1 : 0.0,
                        peak > 0 ? edge / peak : 0.0, ref, detail::torus_neumann_trace(gt)};
    const HarmonicField refield = HarmonicField::bubble(ref, m);
    for (double t : heights) {
        if (t < 0) throw error(errc::domain, "slab height must be >= 0");
        auto v = refield.values_at(g, t).values();
        const auto tor = detail::torus_neumann_trace(gt, t);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += tor[i];
        out.slabs.push_back(g.with_values(std::move(v)));
    }
    return out;
}

// int u P[v] on the torus for mean-zero u, v; symmetric by construction of the multiplier
inline double neumann_pairing(const GridField& u, const GridField& v) {
    const auto& a = u.spectrum();
    const auto& b = v.spectrum();
    const auto k2 = u.k_squared();
    double s = 0;
    for (std::size_t i = 1; i < a.size(); ++i)
        s += (a[i].real() * b[i].real() + a[i].imag() * b[i].imag()) / (2 * pi * std::sqrt(k2[i]));
    return s * u.dual_cell();
}

// H^1(R^n_+) inner product. Exact profile pairings; profile x remainder via int U_i^p r;
// remainder x remainder via the symbol 2 pi |xi|. Fields without profiles use the torus metric alone.
inline double h1_inner(const HarmonicField& u, const HarmonicField& v) {
    if (u.n != v.n) throw error(errc::parameter, "fields in different dimensions");
    const int n = u.n;
    const double p = EscobarParams(n).p();
    if (u.has_profiles() || v.has_profiles()) {
        detail::require_mean_zero_remainder(u);
        detail::require_mean_zero_remainder(v);
    }
    if (u.remainder && v.remainder &&
        (u.remainder->shape() != v.remainder->shape() || u.remainder->spacing() != v.remainder->spacing()))
        throw error(errc::parameter, "remainders live on different grids");
    double s = 0;
    for (const auto& [a, ba] : u.profiles)
        for (const auto& [b, bb] : v.profiles) s += a * b * bubble_pairing<double>(n, ba.z, ba.lambda, bb.z, bb.lambda);
    auto cross = [&](const HarmonicField& P, const GridField& r) {
        double c = 0;
        for (const auto& [a, b] : P.profiles) {
            const auto up = detail::bubble_boundary_power(b, r, p);
            double t = 0;
            for (std::size_t i = 0; i < r.size(); ++i) t += up[i] * r[i];
            c += a * t * r.cell();
        }
        return c;
    };
    if (v.remainder) s += cross(u, *v.remainder);
    if (u.remainder) s += cross(v, *u.remainder);
    if (u.remainder && v.remainder) s += detail::torus_energy(*u.remainder, *v.remainder);
    return s;
}

inline double h1_norm(const HarmonicField& u) { return std::sqrt(std::max(0.0, h1_inner(u, u))); }

struct DualResidual {
    double norm;
    double moved_fraction;  // share of the nonlinear term carried by the reference profile
    double edge_ratio;      // torus part of the nonlinear term on the box faces, relative to its peak
    bool exact_profiles;    // true when the exact profile metric was used
};

// ||u - P[|u|^{p-1} u]||_{H^1}, the H^{-1} norm of Delta u + |u|^{p-1} u for harmonic u. Profiles with
// coefficient a contribute sign(a)|a|^p U^p to the nonlinearity; what is left is solved with the
// decaying Neumann extension. Raw fields (no profiles) are measured in the torus metric.
inline DualResidual dual_residual(const HarmonicField& u, const GridField& grid, double max_edge_ratio = 0.01) {
    const int n = u.n;
    const double p = EscobarParams(n).p();
    if (grid.dim() != n - 1) throw error(errc::parameter, "grid must have dimension n - 1");
    if (u.has_profiles()) detail::require_mean_zero_remainder(u);
    const auto ub = u.values_at(grid, 0);
    std::vector<double> nl(grid.size());
    for (std::size_t i = 0; i < nl.size(); ++i) nl[i] = std::copysign(std::pow(std::abs(ub[i]), p), ub[i]);
    HarmonicField R{n, {}, {}};
    for (const auto& [a, b] : u.profiles) {
        const double ap = std::copysign(std::pow(std::abs(a), p), a);
        const auto up = detail::bubble_boundary_power(b, grid, p);
        for (std::size_t i = 0; i < nl.size(); ++i) nl[i] -= ap * up[i];
        if (a != ap) R.profiles.push_back({a - ap, b});
    }
    const auto dn = neumann_extend_decaying(grid.with_values(nl), {}, n);
    if (dn.edge_ratio > max_edge_ratio)
        throw error(errc::truncation, "nonlinear term reaches the box faces at " + std::to_string(dn.edge_ratio) +
                                          " of its peak (box too small)");
    auto rem = u.remainder ? u.remainder->values() : std::vector<double>(grid.size(), 0.0);
    for (std::size_t i = 0; i < rem.size(); ++i) rem[i] -= dn.torus_trace[i];
    if (u.has_profiles()) {
        if (dn.reference_mass != 0) R.profiles.push_back({-dn.reference_mass, dn.reference});
        R.remainder = grid.with_values(std::move(rem));
        return {h1_norm(R), dn.moved_fraction, dn.edge_ratio, true};
    }
    // raw field: every term sampled, torus metric
    const auto refv = HarmonicField::bubble(dn.reference, dn.reference_mass).values_at(grid, 0);
    for (std::size_t i = 0; i < rem.size(); ++i) rem[i] -= refv[i];
    const auto r = grid.with_values(std::move(rem));
    return {std::sqrt(std::max(0.0, detail::torus_energy(r, r))), dn.moved_fraction, dn.edge_ratio, false};
}

inline double dual_residual_norm(const HarmonicField& u, const GridField& grid) { return dual_residual(u, grid).norm; }

// ---- ball representation: u = F^{-1}[Phi] with polynomial boundary values Phi ----

struct BallField {
    int n = 3;
    Poly phi;  // boundary values on the sphere; the field is the harmonic extension
};

namespace detail {

inline std::map<int, double> degree_l2(const Poly& f) {
    std::map<int, double> out;
    for (const auto& [k, h] : sphere_harmonic_parts(f)) out[k] = sphere_inner(h, h);
    return out;
}

inline Poly ball_nonlinearity(const BallField& u) {
    const int n = u.n;
    const double p = EscobarParams(n).p();
    if (std::abs(p - std::round(p)) > 1e-12)
        throw error(errc::parameter, "ball calculus needs an integer exponent p (n = 3 or 4)");
    const int ip = int(std::round(p));
    if (ip % 2 == 0) {
        // |Phi|^{p-1} Phi = Phi^p needs Phi > 0 on the sphere
        const auto R = sphere_rule(n, 2 * std::max(u.phi.degree(), 1) + 8);
        for (const auto& y : R.nodes)
            if (u.phi(y) <= 0) throw error(errc::domain, "boundary values must stay positive for even p");
    }
    return u.phi.pow(ip);
}

}  // namespace detail

inline double ball_h1_norm_sq(const BallField& u) {
    const EscobarParams E(u.n);
    const double c = 0.5 * (u.n - 2);
    double s = 0;
    for (const auto& [k, l2] : detail::degree_l2(u.phi)) s += E.kappa(k) * l2;
    return std::pow(c, u.n - 1) * s;
}

// exact dual residual: P[U^p Phi^p] = F^{-1}[sum_k gamma_k / kappa_k] with gamma = Phi^p on the sphere
inline double ball_dual_residual_sq(const BallField& u) {
    const EscobarParams E(u.n);
    const double c = 0.5 * (u.n - 2);
    const auto pp = sphere_harmonic_parts(u.phi);
    const auto gp = sphere_harmonic_parts(detail::ball_nonlinearity(u));
    std::map<int, Poly> diff;
    for (const auto& [k, h] : pp) diff.try_emplace(k, Poly(u.n)).first->second += h;
    for (const auto& [k, g] : gp) diff.try_emplace(k, Poly(u.n)).first->second -= g * (1 / E.kappa(k));
    double s = 0;
    for (const auto& [k, d] : diff) s += E.kappa(k) * sphere_inner(d, d);
    return std::pow(c, u.n - 1) * s;
}

struct ExpansionReport {
    double beta;
    std::vector<double> component_norms;  // H^1 norm per degree 0..K
    double w_norm_sq;                     // degrees >= 2 (and any above K)
    double predicted_residual_sq;
    double measured_residual_sq;
    double distance_sq;
    double quotient;
    bool far_from_bubble;  // expansion not meaningful beyond 0.1 ||U||
};

inline ExpansionReport expansion_terms(const BallField& u, int K) {
    const int n = u.n;
    const EscobarParams E(n);
    const double c = 0.5 * (n - 2), p = E.p();
    const double cn = std::pow(c, n - 1);
    const double area = sphere_area(n);
    const double U2 = cn * area;  // ||U||^2
    const auto l2 = detail::degree_l2(u.phi);
    ExpansionReport r{};
    const auto parts = sphere_harmonic_parts(u.phi);
    r.beta = parts.count(0) ? sphere_integral(parts.at(0)) / area : 0.0;
    r.component_norms.assign(K + 1, 0.0);
    double w2 = 0, pred = std::pow(r.beta - std::pow(r.beta, p), 2) * U2, tangent2 = 0;
    for (const auto& [k, v] : l2) {
        const double e = cn * E.kappa(k) * v;
        if (k <= K) r.component_norms[k] = std::sqrt(e);
        if (k == 1) tangent2 += e;
        if (k >= 2) {
            w2 += e;
            pred += std::pow(1 - p / E.kappa(k), 2) * e;
        }
    }
    r.w_norm_sq = w2;
    r.predicted_residual_sq = pred;
    r.measured_residual_sq = ball_dual_residual_sq(u);
    r.distance_sq = std::pow(1 - r.beta, 2) * U2 + w2;
    r.quotient = std::sqrt(r.measured_residual_sq / r.distance_sq);
    r.far_from_bubble = std::sqrt(r.distance_sq + tangent2) > 0.1 * std::sqrt(U2);
    return r;
}

}  // namespace tsl
