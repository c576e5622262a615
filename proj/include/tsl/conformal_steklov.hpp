#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <gsl/gsl_integration.h>
#include <json.hpp>

#include "bubbles.hpp"
#include "constants.hpp"
#include "poly.hpp"

namespace tsl {

// ---- the conformal map between the unit ball and the half-space ----
// points are (y_1..y_n) in the ball and (x_1..x_{n-1}, t) in the half-space

enum class MapDirection { ball_to_half, half_to_ball };

template <class T>
std::vector<T> ball_to_half(const std::vector<T>& y) {
    const int n = int(y.size());
    T r2(0.0);
    for (int i = 0; i < n - 1; ++i) r2 = r2 + y[i] * y[i];
    const T yn = y[n - 1];
    const T den = (1.0 + yn) * (1.0 + yn) + r2;
    std::vector<T> out(n);
    for (int i = 0; i < n - 1; ++i) out[i] = 2.0 * y[i] / den;
    out[n - 1] = (1.0 - r2 - yn * yn) / den;
    return out;
}

template <class T>
std::vector<T> half_to_ball(const std::vector<T>& xt) {
    const int n = int(xt.size());
    T r2(0.0);
    for (int i = 0; i < n - 1; ++i) r2 = r2 + xt[i] * xt[i];
    const T t = xt[n - 1];
    const T den = (1.0 + t) * (1.0 + t) + r2;
    std::vector<T> out(n);
    for (int i = 0; i < n - 1; ++i) out[i] = 2.0 * xt[i] / den;
    out[n - 1] = (1.0 - t * t - r2) / den;
    return out;
}

inline std::vector<std::vector<double>> map_points(MapDirection dir, const std::vector<std::vector<double>>& pts) {
    std::vector<std::vector<double>> out;
    out.reserve(pts.size());
    for (const auto& p : pts) {
        if (p.size() < 3) throw error(errc::parameter, "conformal map needs n >= 3");
        if (dir == MapDirection::ball_to_half) {
            double r2 = 0;
            for (double v : p) r2 += v * v;
            if (r2 > 1 + 1e-12) throw error(errc::domain, "point outside the closed unit ball");
            if (p.back() == -1 && r2 == 1) throw error(errc::domain, "the south pole maps to infinity");
            out.push_back(ball_to_half(p));
        } else {
            if (p.back() < 0) throw error(errc::domain, "point below the half-space boundary");
            out.push_back(half_to_ball(p));
        }
    }
    return out;
}

using PointFunction = std::function<double(const std::vector<double>&)>;

// F[phi] = (U[0,1]^{-1} phi) o F on the ball, and its inverse
inline PointFunction transport_to_ball(int n, PointFunction phi) {
    return [n, phi = std::move(phi)](const std::vector<double>& y) {
        auto xt = ball_to_half(y);
        // boundary points may land a rounding error below t = 0
        if (xt.back() < 0 && xt.back() > -1e-12) xt.back() = 0;
        const std::vector<double> x(xt.begin(), xt.end() - 1);
        const std::vector<double> zero(n - 1, 0.0);
        return phi(xt) / bubble_value<double>(n, zero, 1.0, x, xt.back());
    };
}

inline PointFunction transport_to_half(int n, PointFunction psi) {
    return [n, psi = std::move(psi)](const std::vector<double>& xt) {
        const std::vector<double> x(xt.begin(), xt.end() - 1);
        const std::vector<double> zero(n - 1, 0.0);
        return bubble_value<double>(n, zero, 1.0, x, xt.back()) * psi(half_to_ball(xt));
    };
}

// second-difference Laplacian at an interior point
inline double laplacian_probe(const PointFunction& f, const std::vector<double>& p, double h = 1e-4) {
    const double f0 = f(p);
    double s = 0;
    auto q = p;
    for (std::size_t i = 0; i < p.size(); ++i) {
        q[i] = p[i] + h;
        const double a = f(q);
        q[i] = p[i] - h;
        const double b = f(q);
        q[i] = p[i];
        s += (a + b - 2 * f0) / (h * h);
    }
    return s;
}

// ---- sphere quadrature ----

// product rule on S^{n-1}: Gauss-Jacobi in cos(theta_j) for the polar angles, trapezoid in the azimuth;
// exact for polynomials of degree <= deg
struct SphereRule {
    std::vector<std::vector<double>> nodes;
    std::vector<double> weights;
};

inline SphereRule sphere_rule(int n, int deg) {
    if (n < 2) throw error(errc::parameter, "sphere rule needs n >= 2");
    const int q = deg / 2 + 2, M = deg + 2;
    // polar angle j (1-based) carries the weight sin^{n-1-j}
    std::vector<std::vector<double>> cx(n - 2), cw(n - 2);
    for (int j = 1; j <= n - 2; ++j) {
        const double a = 0.5 * (n - 1 - j - 1);
        gsl_integration_fixed_workspace* w = gsl_integration_fixed_alloc(gsl_integration_fixed_jacobi, q, -1, 1, a, a);
        const double* x = gsl_integration_fixed_nodes(w);
        const double* wt = gsl_integration_fixed_weights(w);
        cx[j - 1].assign(x, x + q);
        cw[j - 1].assign(wt, wt + q);
        gsl_integration_fixed_free(w);
    }
    SphereRule R;
    std::vector<int> idx(n - 2, 0);
    std::vector<double> y(n);
    while (true) {
        double wprod = 1, s = 1;
        for (int j = 0; j < n - 2; ++j) {
            const double c = cx[j][idx[j]];
            y[j] = s * c;
            s *= std::sqrt(std::max(0.0, 1 - c * c));
            wprod *= cw[j][idx[j]];
        }
        for (int k = 0; k < M; ++k) {
            const double ph = 2 * pi * (k + 0.5) / M;
            y[n - 2] = s * std::cos(ph);
            y[n - 1] = s * std::sin(ph);
            R.nodes.push_back(y);
            R.weights.push_back(wprod * 2 * pi / M);
        }
        int j = n - 3;
        while (j >= 0 && ++idx[j] == q) idx[j--] = 0;
        if (j < 0) break;
    }
    return R;
}

// ---- solid harmonic bases ----

struct SolidHarmonicBasis {
    int n = 3;
    int max_degree = 0;
    std::vector<std::vector<Poly>> degrees;  // sphere-orthonormal harmonic homogeneous polynomials
};

inline std::vector<std::vector<int>> monomial_exponents(int n, int k) {
    std::vector<std::vector<int>> out;
    std::vector<int> e(n, 0);
    std::function<void(int, int)> rec = [&](int i, int left) {
        if (i == n - 1) {
            e[i] = left;
            out.push_back(e);
            return;
        }
        for (int a = left; a >= 0; --a) {
            e[i] = a;
            rec(i + 1, left - a);
        }
    };
    rec(0, k);
    return out;
}

inline SolidHarmonicBasis build_basis(int n, int K) {
    if (n < 3) throw error(errc::parameter, "build_basis needs n >= 3");
    if (K < 0 || K > 8) throw error(errc::parameter, "build_basis supports degrees 0..8");
    SolidHarmonicBasis B{n, K, {}};
    for (int k = 0; k <= K; ++k) {
        std::vector<Poly> ortho;
        for (const auto& e : monomial_exponents(n, k)) {
            Poly h = harmonic_projection(Poly::monomial(e));
            // two passes of modified Gram-Schmidt
            for (int pass = 0; pass < 2; ++pass)
                for (const auto& b : ortho) h -= b * sphere_inner(h, b);
            const double nn = std::sqrt(std::max(0.0, sphere_inner(h, h)));
            if (nn < 1e-8) continue;
            ortho.push_back(h * (1 / nn));
        }
        const auto mult = harmonic_multiplicity(n, k);
        if (double(ortho.size()) != mult)
            throw error(errc::construction, "degree " + std::to_string(k) + " basis has " + std::to_string(ortho.size()) +
                                                " elements, expected " + std::to_string(mult));
        B.degrees.push_back(std::move(ortho));
    }
    return B;
}

inline nlohmann::json to_json(const SolidHarmonicBasis& B) {
    nlohmann::json j;
    j["n"] = B.n;
    j["max_degree"] = B.max_degree;
    j["degrees"] = nlohmann::json::array();
    for (const auto& deg : B.degrees) {
        auto list = nlohmann::json::array();
        for (const auto& p : deg) {
            auto terms = nlohmann::json::array();
            for (const auto& [e, c] : p.terms) terms.push_back({{"exponents", e}, {"coefficient", c}});
            list.push_back(terms);
        }
        j["degrees"].push_back(list);
    }
    return j;
}

// ---- Steklov decomposition ----

// H^1(R^n_+) energy per unit boundary L^2 mass of a degree-k harmonic: ((n-2)/2)^{n-2} (k + (n-2)/2)
inline double steklov_energy_weight(int n, int k) {
    const double c = 0.5 * (n - 2);
    return std::pow(c, n - 2) * (k + c);
}

struct SteklovDecomposition {
    int n = 3;
    std::vector<std::vector<double>> components;  // coefficients in the E_k basis
    std::vector<double> component_h1_sq;          // H^1(R^n_+) energy of each degree
    double boundary_l2_sq = 0;                    // ||input||^2 on the sphere
    double residual_l2 = 0;                       // sphere L^2 norm of the part above max degree
    double truncation_residual = 0;               // lower bound of its H^1 energy, square-rooted
    std::optional<double> interior_norm;          // E_{-1} part when an H^1 probe is supplied
    bool truncation_warning = false;

    double captured_h1_sq() const {
        double s = 0;
        for (double v : component_h1_sq) s += v;
        return s;
    }
};

namespace detail {

inline SteklovDecomposition finish_decomposition(int n, std::vector<std::vector<double>> comps, double total_l2,
                                                 std::optional<double> h1_probe) {
    SteklovDecomposition D;
    D.n = n;
    D.boundary_l2_sq = total_l2;
    double captured_l2 = 0;
    for (std::size_t k = 0; k < comps.size(); ++k) {
        double s = 0;
        for (double c : comps[k]) s += c * c;
        captured_l2 += s;
        D.component_h1_sq.push_back(steklov_energy_weight(n, int(k)) * s);
    }
    const int K = int(comps.size()) - 1;
    D.components = std::move(comps);
    D.residual_l2 = std::sqrt(std::max(0.0, total_l2 - captured_l2));
    D.truncation_residual = std::sqrt(steklov_energy_weight(n, K + 1)) * D.residual_l2;
    const double norm_sq = h1_probe ? *h1_probe : D.captured_h1_sq() + std::pow(D.truncation_residual, 2);
    D.truncation_warning = D.truncation_residual > 0.1 * std::sqrt(std::max(norm_sq, 0.0));
    if (h1_probe)
        D.interior_norm = std::sqrt(std::max(0.0, *h1_probe - D.captured_h1_sq() - std::pow(D.truncation_residual, 2)));
    return D;
}

}  // namespace detail

// exact decomposition of a polynomial boundary function
inline SteklovDecomposition steklov_decompose(const Poly& f, const SolidHarmonicBasis& B,
                                              std::optional<double> h1_probe = {}) {
    if (f.n != B.n) throw error(errc::parameter, "boundary polynomial and basis dimensions differ");
    std::vector<std::vector<double>> comps;
    for (const auto& deg : B.degrees) {
        std::vector<double> c;
        for (const auto& Y : deg) c.push_back(sphere_inner(f, Y));
        comps.push_back(std::move(c));
    }
    return detail::finish_decomposition(B.n, std::move(comps), sphere_inner(f, f), h1_probe);
}

// decomposition of a sampled boundary function with a product rule of the given polynomial degree
inline SteklovDecomposition steklov_decompose(const PointFunction& f, const SolidHarmonicBasis& B,
                                              std::optional<double> h1_probe = {}, int rule_degree = 0) {
    const auto R = sphere_rule(B.n, rule_degree > 0 ? rule_degree : 2 * B.max_degree + 24);
    std::vector<double> fv(R.nodes.size());
    double total = 0;
    for (std::size_t i = 0; i < fv.size(); ++i) {
        fv[i] = f(R.nodes[i]);
        if (!std::isfinite(fv[i])) throw error(errc::input, "non-finite boundary sample");
        total += R.weights[i] * fv[i] * fv[i];
    }
    std::vector<std::vector<double>> comps;
    for (const auto& deg : B.degrees) {
        std::vector<double> c;
        for (const auto& Y : deg) {
            double s = 0;
            for (std::size_t i = 0; i < fv.size(); ++i) s += R.weights[i] * fv[i] * Y(R.nodes[i]);
            c.push_back(s);
        }
        comps.push_back(std::move(c));
    }
    return detail::finish_decomposition(B.n, std::move(comps), total, h1_probe);
}

// ---- spectral-gap quotient ----

namespace detail {

inline double gap_quotient_from_parts(int n, const std::vector<double>& l2_by_degree) {
    const EscobarParams E(n);
    double total = 0, low = 0, num = 0;
    for (std::size_t k = 0; k < l2_by_degree.size(); ++k) {
        total += l2_by_degree[k];
        if (k < 2) low += l2_by_degree[k];
        num += E.kappa(int(k)) * l2_by_degree[k];
    }
    if (!(total > 0)) throw error(errc::input, "zero direction");
    if (std::sqrt(low) > 1e-10 * std::sqrt(total))
        throw error(errc::precondition, "direction is not orthogonal to T_U: degree 0/1 components have sphere norm " +
                                            std::to_string(std::sqrt(low)) + " of " + std::to_string(std::sqrt(total)));
    return num / total;
}

}  // namespace detail

// ||rho||^2_{H^1(R^n_+)} / int U^{p-1} rho^2 for the harmonic rho whose transported boundary values are f
inline double spectral_gap_quotient(const Poly& f) {
    if (f.n < 3) throw error(errc::parameter, "spectral_gap_quotient needs n >= 3");
    const auto parts = sphere_harmonic_parts(f);
    std::vector<double> l2;
    for (const auto& [k, h] : parts) {
        if (int(l2.size()) <= k) l2.resize(k + 1, 0.0);
        l2[k] = sphere_inner(h, h);
    }
    return detail::gap_quotient_from_parts(f.n, l2);
}

// same, for a half-space harmonic function, through its transported boundary trace
inline double spectral_gap_quotient(const PointFunction& rho, const SolidHarmonicBasis& B) {
    const auto D = steklov_decompose(transport_to_ball(B.n, rho), B);
    if (D.truncation_warning) throw error(errc::truncation, "basis degree too small for this direction");
    std::vector<double> l2;
    for (const auto& c : D.components) {
        double s = 0;
        for (double v : c) s += v * v;
        l2.push_back(s);
    }
    return detail::gap_quotient_from_parts(B.n, l2);
}

}  // namespace tsl
