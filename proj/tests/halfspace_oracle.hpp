#pragma once

// Independent quadrature on R^n_+ used as a test oracle: polar coordinates about (0,-1) with
// rho = 1 / (omega_n v), which turns the algebraic tails of bubble-like integrands into smooth
// integrands on a compact box handled by product Gauss-Legendre rules.

#include <cmath>
#include <vector>

#include <gsl/gsl_integration.h>

#include "tsl/dual.hpp"

namespace oracle {

struct Rule {
    std::vector<double> x, w;
};

inline Rule legendre(int q, double a, double b) {
    gsl_integration_fixed_workspace* ws = gsl_integration_fixed_alloc(gsl_integration_fixed_legendre, q, a, b, 0, 0);
    Rule r;
    r.x.assign(gsl_integration_fixed_nodes(ws), gsl_integration_fixed_nodes(ws) + q);
    r.w.assign(gsl_integration_fixed_weights(ws), gsl_integration_fixed_weights(ws) + q);
    gsl_integration_fixed_free(ws);
    return r;
}

// directions on S^{d-1} (d = 2 or 3) with weights
inline std::vector<std::pair<std::vector<double>, double>> sphere_dirs(int d, int q) {
    std::vector<std::pair<std::vector<double>, double>> out;
    if (d == 1) {
        out.push_back({{1.0}, 1.0});
        out.push_back({{-1.0}, 1.0});
    } else if (d == 2) {
        for (int k = 0; k < 2 * q; ++k) {
            const double a = M_PI * (k + 0.5) / q;
            out.push_back({{std::cos(a), std::sin(a)}, M_PI / q});
        }
    } else {
        const auto th = legendre(q, -1, 1);
        for (int i = 0; i < q; ++i)
            for (int k = 0; k < 2 * q; ++k) {
                const double a = M_PI * (k + 0.5) / q, c = th.x[i], s = std::sqrt(1 - c * c);
                out.push_back({{s * std::cos(a), s * std::sin(a), c}, th.w[i] * M_PI / q});
            }
    }
    return out;
}

// int_{R^n_+} g(x,t) dx dt for g smooth with |x,t|^{-2(n-1)}-type decay; n = 3 or 4
template <class G>
double halfspace_integral(int n, G g, int q = 48) {
    const auto th = legendre(q, 0, M_PI / 2);
    const auto vv = legendre(q, 0, 1);
    const auto dirs = sphere_dirs(n - 1, q / 2);
    double s = 0;
    std::vector<double> p(n);
    for (int i = 0; i < q; ++i) {
        const double c = std::cos(th.x[i]), sn = std::sin(th.x[i]);
        for (const auto& [eta, we] : dirs)
            for (int j = 0; j < q; ++j) {
                const double v = vv.x[j];
                const double rho = 1 / (c * v);
                for (int a = 0; a < n - 1; ++a) p[a] = rho * sn * eta[a];
                p[n - 1] = -1 + rho * c;
                const double jac = std::pow(rho, n - 1) * std::pow(sn, n - 2) / (c * v * v);
                s += th.w[i] * we * vv.w[j] * jac * g(p);
            }
    }
    return s;
}

// int_{R^{n-1}} g(x) dx with r = tan(psi / 2), psi in (0, pi)
template <class G>
double boundary_integral(int n, G g, int q = 64) {
    const auto ps = legendre(q, 0, M_PI);
    const auto dirs = sphere_dirs(n - 1, q / 2);
    double s = 0;
    std::vector<double> x(n - 1);
    for (int i = 0; i < q; ++i) {
        const double r = std::tan(0.5 * ps.x[i]);
        const double jac = std::pow(r, n - 2) * 0.5 / std::pow(std::cos(0.5 * ps.x[i]), 2);
        for (const auto& [eta, we] : dirs) {
            for (int a = 0; a < n - 1; ++a) x[a] = r * eta[a];
            s += ps.w[i] * we * jac * g(x);
        }
    }
    return s;
}

// |grad phi|^2 at a point by forward-mode differentiation of a generic callable
template <class Phi>
double grad_squared(const Phi& phi, const std::vector<double>& p) {
    using D = tsl::Dual<double>;
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        std::vector<D> q(p.size());
        for (std::size_t k = 0; k < p.size(); ++k) q[k] = D(p[k], k == i ? 1.0 : 0.0);
        const double d = phi(q).d;
        s += d * d;
    }
    return s;
}

}  // namespace oracle
