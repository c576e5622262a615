#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <json.hpp>

#include "constants.hpp"
#include "dual.hpp"
#include "error.hpp"

namespace tsl {

struct Bubble {
    std::vector<double> z;  // center in R^{n-1}
    double lambda = 1.0;
    int n = 3;

    Bubble() = default;
    Bubble(std::vector<double> center, double lam, int dim) : z(std::move(center)), lambda(lam), n(dim) {
        validate();
    }
    static Bubble standard(int dim) { return Bubble(std::vector<double>(dim - 1, 0.0), 1.0, dim); }

    void validate() const {
        if (n < 3) throw error(errc::parameter, "bubble needs n >= 3");
        if (int(z.size()) != n - 1) throw error(errc::parameter, "bubble center must have n-1 coordinates");
        if (!(lambda > 0) || !std::isfinite(lambda)) throw error(errc::parameter, "bubble scale must be positive");
    }
};

struct BubbleFamily {
    std::vector<Bubble> bubbles;
    std::vector<double> coefficients;

    void validate() const {
        if (bubbles.empty()) throw error(errc::parameter, "bubble family is empty");
        if (coefficients.size() != bubbles.size())
            throw error(errc::parameter, "one coefficient per bubble required");
        for (double a : coefficients)
            if (!(a > 0)) throw error(errc::parameter, "family coefficients must be positive");
        for (const auto& b : bubbles) {
            b.validate();
            if (b.n != bubbles.front().n) throw error(errc::parameter, "mixed dimensions in family");
        }
    }
};

inline double bubble_amplitude(int n) { return std::pow(n - 2.0, 0.5 * (n - 2)); }

// U[z,lambda](x,t); T may be double or a (nested) Dual
template <class T, class Z, class X>
T bubble_value(int n, const Z& z, const T& lam, const X& x, const T& t) {
    using std::pow;
    T r2(0.0);
    for (int i = 0; i < n - 1; ++i) {
        const T d = T(x[i]) - T(z[i]);
        r2 = r2 + d * d;
    }
    const T a = 1.0 + lam * t;
    const T den = a * a + lam * lam * r2;
    return bubble_amplitude(n) * pow(lam / den, 0.5 * (n - 2));
}

// <U[a], U[b]>_{H^1(R^n_+)} in closed form; symmetric in (a, b)
template <class T, class Za, class Zb>
T bubble_pairing(int n, const Za& za, const T& la, const Zb& zb, const T& lb) {
    using std::pow;
    T d2(0.0);
    for (int i = 0; i < n - 1; ++i) {
        const T d = T(za[i]) - T(zb[i]);
        d2 = d2 + d * d;
    }
    const T s = la + lb;
    const T q = la * lb / (s * s + la * la * lb * lb * d2);
    const double c0 = bubble_amplitude(n);
    const double kn = std::pow(n - 2.0, 0.5 * n) * std::pow(pi, 0.5 * n) / std::tgamma(0.5 * n);
    return kn * c0 * pow(q, 0.5 * (n - 2));
}

// int_{R^{n-1}} U[z,lambda]^p w(x,0) dx = K_n lambda^{(2-n)/2} w(z, 1/lambda) for harmonic decaying w
inline double point_evaluation_constant(int n) {
    return std::pow(n - 2.0, 0.5 * n) * std::pow(pi, 0.5 * n) / std::tgamma(0.5 * n);
}

struct BubbleEval {
    double value;
    std::vector<double> gradient;  // (d/dx_1..d/dx_{n-1}, d/dt)
    double dlambda;
    std::vector<double> dz;
};

inline BubbleEval eval_bubble(const Bubble& b, const std::vector<double>& x, double t) {
    if (t < 0) throw error(errc::domain, "bubble evaluated below the boundary (t < 0)");
    if (int(x.size()) != b.n - 1) throw error(errc::parameter, "point must have n-1 tangential coordinates");
    const int n = b.n;
    const double lam = b.lambda;
    double r2 = 0;
    for (int i = 0; i < n - 1; ++i) r2 += (x[i] - b.z[i]) * (x[i] - b.z[i]);
    const double a = 1 + lam * t;
    const double den = a * a + lam * lam * r2;
    const double u = bubble_amplitude(n) * std::pow(lam / den, 0.5 * (n - 2));
    BubbleEval e{u, std::vector<double>(n), 0.0, std::vector<double>(n - 1)};
    const double c = -(n - 2.0) * u / den;
    for (int i = 0; i < n - 1; ++i) {
        e.gradient[i] = c * lam * lam * (x[i] - b.z[i]);
        e.dz[i] = -e.gradient[i];
    }
    e.gradient[n - 1] = c * lam * a;
    e.dlambda = (n - 2.0) / (2 * lam) * u * (1 - lam * lam * t * t - lam * lam * r2) / den;
    return e;
}

struct BubbleEnergy {
    double h1_norm_sq;
    double boundary_mass;
};

namespace detail {

template <class F>
double gk(F f, double a, double b, double tol = 1e-13, double* err = nullptr) {
    double e = 0;
    const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 15, tol, &e);
    if (err) *err = e;
    return v;
}

}  // namespace detail

inline BubbleEnergy bubble_energy(const Bubble& b) {
    b.validate();
    const int n = b.n;
    const double lam = b.lambda;
    const double s_tan = sphere_area(n - 1);  // |S^{n-2}|
    const double c0 = bubble_amplitude(n);
    const double w = 1 / lam;
    const double inf = std::numeric_limits<double>::infinity();
    double e1 = 0, e2 = 0;

    // |grad U|^2 = (n-2)^2 lambda^2 U^2 / D in polar coordinates about z
    auto grad_sq = [&](double r, double t) {
        const double a = 1 + lam * t;
        const double den = a * a + lam * lam * r * r;
        const double u = c0 * std::pow(lam / den, 0.5 * (n - 2));
        return (n - 2.0) * (n - 2.0) * lam * lam * u * u / den;
    };
    auto inner = [&](double t) {
        auto f = [&](double r) { return s_tan * std::pow(r, n - 2) * grad_sq(r, t); };
        const double scale = w + t;
        return detail::gk(f, 0, scale) + detail::gk(f, scale, inf);
    };
    const double h1 = detail::gk(inner, 0, w, 1e-12, &e1) + detail::gk(inner, w, inf, 1e-12, &e2);

    const double q = 2.0 * (n - 1) / (n - 2);
    auto fm = [&](double r) {
        return s_tan * std::pow(r, n - 2) * std::pow(c0 * std::pow(lam / (1 + lam * lam * r * r), 0.5 * (n - 2)), q);
    };
    const double mass = detail::gk(fm, 0, w) + detail::gk(fm, w, inf);
    if (!(e1 + e2 < 1e-8 * h1))
        throw error(errc::accuracy, "bubble_energy quadrature reached only " + std::to_string(e1 + e2));
    return {h1, mass};
}

inline double interaction_mu(const Bubble& b1, const Bubble& b2) {
    double d2 = 0;
    for (std::size_t i = 0; i < b1.z.size(); ++i) d2 += (b1.z[i] - b2.z[i]) * (b1.z[i] - b2.z[i]);
    const double r = b1.lambda / b2.lambda;
    double mu = std::min(r, 1 / r);
    if (d2 > 0) mu = std::min(mu, 1 / (b1.lambda * b2.lambda * d2));
    return mu;
}

// int_{R^{n-1}} U1^g1 U2^g2 with g1 + g2 = 2(n-1)/(n-2). If restrict_radius > 0 the domain is cut to
// the ball B(z1, restrict_radius / lambda1).
inline double interaction_integral(const Bubble& b1, const Bubble& b2, double g1, double g2,
                                   double restrict_radius = 0) {
    b1.validate();
    b2.validate();
    if (b1.n != b2.n) throw error(errc::parameter, "interaction of bubbles in different dimensions");
    const int n = b1.n;
    const double crit = 2.0 * (n - 1) / (n - 2);
    if (!(g1 > 0 && g2 > 0) || std::abs(g1 + g2 - crit) > 1e-12)
        throw error(errc::parameter, "interaction exponents must be positive and sum to 2(n-1)/(n-2)");

    // reduce to U[0,1] against U[lambda1 (z2 - z1), lambda2 / lambda1]
    double d = 0;
    for (int i = 0; i < n - 1; ++i) d += std::pow(b1.lambda * (b2.z[i] - b1.z[i]), 2);
    d = std::sqrt(d);
    const double lam = b2.lambda / b1.lambda;
    const double w = 1 / lam;
    const double c0 = bubble_amplitude(n);
    const double h = 0.5 * (n - 2);

    auto u0 = [&](double r2) { return c0 * std::pow(1 / (1 + r2), h); };
    auto u1 = [&](double s2) { return c0 * std::pow(lam / (1 + lam * lam * s2), h); };
    auto f = [&](double r2, double s2) { return std::pow(u0(r2), g1) * std::pow(u1(s2), g2); };

    const double inf = std::numeric_limits<double>::infinity();
    const double rmax = restrict_radius > 0 ? restrict_radius : inf;
    const double tol = 1e-11;

    // axisymmetric measure about the line through 0 and z': |S^{n-3}| sin^{n-3} on [0, pi]
    const double ang_area = n == 3 ? 2.0 : sphere_area(n - 2);
    auto jac = [n](double phi) { return n == 3 ? 1.0 : std::pow(std::sin(phi), n - 3); };

    auto integrate_pieces = [&](const std::function<double(double)>& g, std::vector<double> cuts, double hi) {
        std::sort(cuts.begin(), cuts.end());
        std::vector<double> pts{0.0};
        for (double c : cuts)
            if (c > pts.back() * (1 + 1e-12) && c < hi) pts.push_back(c);
        double total = 0;
        for (std::size_t k = 0; k + 1 < pts.size(); ++k) total += detail::gk(g, pts[k], pts[k + 1], tol);
        return total + detail::gk(g, pts.back(), hi, tol);
    };

    if (d == 0) {
        const double area = sphere_area(n - 1);
        auto radial = [&](double r) { return area * std::pow(r, n - 2) * f(r * r, r * r); };
        return integrate_pieces(radial, {1.0, w, 4.0, 4 * w}, rmax);
    }

    if (d <= 2 * w) {
        // the second profile is wide compared with the offset: polar coordinates about 0 suffice
        auto radial = [&](double r) {
            auto ang = [&](double phi) {
                const double s2 = std::max(0.0, r * r + d * d - 2 * r * d * std::cos(phi));
                return jac(phi) * f(r * r, s2);
            };
            return ang_area * std::pow(r, n - 2) * detail::gk(ang, 0, pi, tol);
        };
        return integrate_pieces(radial, {1.0, w, d, 2 * d, 4 * (1 + w)}, rmax);
    }

    // smooth partition of unity: chi = 1 near z' (s < rho/2), 0 for s > rho, rho = d/2
    const double rho = 0.5 * d;
    auto chi = [rho](double s) {
        const double a = 0.5 * rho, b = rho;
        if (s <= a) return 1.0;
        if (s >= b) return 0.0;
        auto e = [](double x) { return std::exp(-1 / x); };
        const double x = (s - a) / (b - a);
        return e(1 - x) / (e(1 - x) + e(x));
    };
    auto inside = [&](double r2) { return restrict_radius > 0 ? (r2 <= rmax * rmax ? 1.0 : 0.0) : 1.0; };

    // piece near z', polar about z' with phi measured from the direction towards the origin
    auto near = [&](double s) {
        auto ang = [&](double phi) {
            const double r2 = std::max(0.0, d * d + s * s - 2 * d * s * std::cos(phi));
            return jac(phi) * f(r2, s * s) * inside(r2);
        };
        return ang_area * std::pow(s, n - 2) * chi(s) * detail::gk(ang, 0, pi, tol);
    };
    double total = 0;
    if (restrict_radius <= 0 || d - rho < rmax)
        total += integrate_pieces(near, {w, 8 * w, 0.5 * rho}, rho);

    // remainder, polar about the origin
    auto far = [&](double r) {
        auto ang = [&](double phi) {
            const double s2 = std::max(0.0, r * r + d * d - 2 * r * d * std::cos(phi));
            return jac(phi) * f(r * r, s2) * (1 - chi(std::sqrt(s2)));
        };
        double inner;
        if (std::abs(r - d) < rho) {
            const double phi_edge = std::min(pi, 2 * std::asin(std::min(1.0, rho / (2 * std::max(r, 1e-300)))) * 2);
            inner = detail::gk(ang, 0, phi_edge, tol) + (phi_edge < pi ? detail::gk(ang, phi_edge, pi, tol) : 0.0);
        } else {
            inner = detail::gk(ang, 0, pi, tol);
        }
        return ang_area * std::pow(r, n - 2) * inner;
    };
    total += integrate_pieces(far, {1.0, d - rho, d - 0.5 * rho, d, d + 0.5 * rho, d + rho, 2 * d, 4 * d}, rmax);
    return total;
}

struct FamilyCheck {
    bool is_delta_interacting;
    std::string worst;  // description of the worst offending pair or coefficient
    double worst_value;
    double energy_sum;
};

inline FamilyCheck family_check(const BubbleFamily& fam, double delta) {
    fam.validate();
    if (!(delta > 0)) throw error(errc::parameter, "delta must be positive");
    const int n = fam.bubbles.front().n;
    FamilyCheck out{true, "", 0.0, 0.0};
    double worst_ratio = -1;
    auto consider = [&](double value, const std::string& what) {
        const double ratio = value / delta;
        if (ratio > worst_ratio) {
            worst_ratio = ratio;
            out.worst = what;
            out.worst_value = value;
        }
        if (value > delta) out.is_delta_interacting = false;
    };
    for (std::size_t i = 0; i < fam.bubbles.size(); ++i) {
        consider(std::abs(fam.coefficients[i] - 1), "coefficient " + std::to_string(i));
        for (std::size_t j = i + 1; j < fam.bubbles.size(); ++j)
            consider(interaction_mu(fam.bubbles[i], fam.bubbles[j]),
                     "pair (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
    const double se = std::pow(escobar_constant(n), n - 1);
    for (double a : fam.coefficients) out.energy_sum += a * a * se;
    return out;
}

// ---- localization cut-offs ----

// phi_{x0,r,R}: 1 inside r, logarithmic ramp, 0 outside R
struct LogCutoff {
    std::vector<double> center;  // in R^n (boundary centers have last coordinate 0)
    double r;
    double R;

    double operator()(const std::vector<double>& p) const {
        double s = 0;
        for (std::size_t i = 0; i < center.size(); ++i) s += (p[i] - center[i]) * (p[i] - center[i]);
        const double rho = std::sqrt(s);
        if (rho <= r) return 1;
        if (rho >= R) return 0;
        return (std::log(R) - std::log(rho)) / (std::log(R) - std::log(r));
    }
    // ||grad phi||_{L^n} over the half-space, centers on the boundary
    double gradient_ln_norm(int n) const {
        const double ln = std::log(R / r);
        return std::pow(0.5 * sphere_area(n) * std::pow(ln, 1 - n), 1.0 / n);
    }
};

struct CutoffSpec {
    std::vector<double> x0;
    double inner;
    double outer;
    std::vector<int> J;
    std::vector<double> Rj;
};

struct LocalizedCutoff {
    int index;      // bubble index i
    CutoffSpec spec;  // in coordinates where U_i = U[0,1]
    LogCutoff main;
    std::vector<LogCutoff> holes;
    double lambda_i;
    std::vector<double> z_i;

    // Phi_i at a point of R^n_+ in the original coordinates
    double operator()(const std::vector<double>& p) const {
        std::vector<double> q(p.size());
        for (std::size_t k = 0; k + 1 < p.size(); ++k) q[k] = lambda_i * (p[k] - z_i[k]);
        q.back() = lambda_i * p.back();
        double v = main(q);
        for (const auto& h : holes) v *= 1 - h(q);
        return v;
    }
};

struct CutoffReport {
    std::vector<LocalizedCutoff> cutoffs;
    // per cutoff: mass fraction lower bound, worst U_j/U_i on support, gradient L^n bound, oscillation
    std::vector<double> mass_fraction;
    std::vector<double> domination;
    std::vector<double> gradient_norm;
    std::vector<double> oscillation;
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

namespace detail {

// mass of U[0,1]^{2+} outside the boundary ball of radius rho
inline double bubble_tail_mass(int n, double rho) {
    const double q = 2.0 * (n - 1) / (n - 2);
    const double c0 = bubble_amplitude(n);
    auto f = [&](double r) {
        return sphere_area(n - 1) * std::pow(r, n - 2) * std::pow(c0, q) * std::pow(1 + r * r, -(n - 1.0));
    };
    return gk(f, rho, std::numeric_limits<double>::infinity(), 1e-13);
}

inline double u_standard(int n, double dist) {
    return bubble_amplitude(n) * std::pow(1 / (1 + dist * dist), 0.5 * (n - 2));
}

}  // namespace detail

inline CutoffReport localization_cutoffs(const BubbleFamily& fam, double eps) {
    fam.validate();
    if (!(eps > 0 && eps < 1)) throw error(errc::parameter, "localization epsilon must lie in (0,1)");
    const int n = fam.bubbles.front().n;
    const std::size_t nu = fam.bubbles.size();
    double mu_max = 0;
    for (std::size_t i = 0; i < nu; ++i)
        for (std::size_t j = i + 1; j < nu; ++j)
            mu_max = std::max(mu_max, interaction_mu(fam.bubbles[i], fam.bubbles[j]));
    if (nu > 1 && mu_max > eps)
        throw error(errc::precondition,
                    "family interaction " + std::to_string(mu_max) + " is not small relative to epsilon");

    const double se = std::pow(escobar_constant(n), n - 1);
    CutoffReport rep;
    for (std::size_t i = 0; i < nu; ++i) {
        const Bubble& bi = fam.bubbles[i];
        // other bubbles in the frame where U_i = U[0,1]
        std::vector<std::vector<double>> zs;
        std::vector<double> ls;
        for (std::size_t j = 0; j < nu; ++j) {
            std::vector<double> zj(n - 1);
            for (int k = 0; k < n - 1; ++k) zj[k] = bi.lambda * (fam.bubbles[j].z[k] - bi.z[k]);
            zs.push_back(zj);
            ls.push_back(fam.bubbles[j].lambda / bi.lambda);
        }
        // every cut-off factor gets an equal share of the gradient budget eps
        // radius ratio from ||grad phi||_{L^n} = (|S^{n-1}|/2)^{1/n} ln(ratio)^{(1-n)/n}
        auto log_ratio_for = [&](double budget) {
            return std::pow(std::pow(0.5 * sphere_area(n), 1.0 / n) / budget, double(n) / (n - 1));
        };
        // inner radius with tail mass <= eps/2 of the total (margin 2)
        double inner = 1;
        while (detail::bubble_tail_mass(n, inner) > 0.5 * eps * se) inner *= 1.25;

        std::vector<int> J;
        // provisional R to decide J; J depends on R only through |z_j| < 2R
        const double lr_guess = log_ratio_for(eps / nu);
        const double R = inner * std::exp(lr_guess);
        for (std::size_t j = 0; j < nu; ++j) {
            if (j == i) continue;
            double dz = 0;
            for (double c : zs[j]) dz += c * c;
            if (ls[j] > 1 && std::sqrt(dz) < 2 * R) J.push_back(int(j));
        }
        const double budget = eps / (1 + J.size());
        const double lr = log_ratio_for(budget);
        const double Rm = inner * std::exp(lr);

        LocalizedCutoff lc;
        lc.index = int(i);
        lc.lambda_i = bi.lambda;
        lc.z_i = bi.z;
        std::vector<double> origin(n, 0.0);
        lc.main = LogCutoff{origin, inner, Rm};
        // U_j <= (eps/2) min U_i on supp, outside the hole of radius R_j around z_j
        const double umin = detail::u_standard(n, Rm);
        std::vector<double> Rjs;
        for (int j : J) {
            const double target = std::pow(0.5 * eps * umin / bubble_amplitude(n), 2.0 / (n - 2));
            // lambda / (1 + lambda^2 s^2) <= target
            const double l = ls[j];
            const double s2 = std::max(0.0, (l / target - 1) / (l * l));
            const double Rj = std::max(std::sqrt(s2), 1e-300);
            std::vector<double> c(n, 0.0);
            for (int k = 0; k < n - 1; ++k) c[k] = zs[j][k];
            lc.holes.push_back(LogCutoff{c, Rj, Rj * std::exp(lr)});
            Rjs.push_back(Rj);
        }
        lc.spec = CutoffSpec{origin, inner, Rm, J, Rjs};

        // (1) mass on {Phi = 1}: inner ball minus the outer balls of the holes
        double lost = detail::bubble_tail_mass(n, inner);
        const double q = 2.0 * (n - 1) / (n - 2);
        for (const auto& h : lc.holes) {
            double dz = 0;
            for (int k = 0; k < n - 1; ++k) dz += h.center[k] * h.center[k];
            const double near = std::max(0.0, std::sqrt(dz) - h.R);
            lost += ball_volume(n - 1) * std::pow(h.R, n - 1) * std::pow(detail::u_standard(n, near), q);
        }
        const double frac = std::max(0.0, 1 - lost / se);
        // (2) max over the support of U_j / U_i; U_i is smallest at |x| = Rm, U_j largest nearest z_j
        double dom = 0;
        double osc = 1;
        for (std::size_t j = 0; j < nu; ++j) {
            if (j == i) continue;
            double dz = 0;
            for (double c : zs[j]) dz += c * c;
            dz = std::sqrt(dz);
            double nearest = std::max(0.0, dz - Rm);
            for (std::size_t h = 0; h < J.size(); ++h)
                if (J[h] == int(j)) nearest = Rjs[h];
            const double uj_max = bubble_amplitude(n) * std::pow(ls[j] / (1 + ls[j] * ls[j] * nearest * nearest), 0.5 * (n - 2));
            dom = std::max(dom, uj_max / umin);
            // (4) for lambda_j <= lambda_i the oscillation of U_j over the support
            if (ls[j] <= 1) {
                const double far = dz + Rm;
                const double uj_min = bubble_amplitude(n) * std::pow(ls[j] / (1 + ls[j] * ls[j] * far * far), 0.5 * (n - 2));
                osc = std::max(osc, uj_max / uj_min);
            }
        }
        // (3) ||grad Phi||_{L^n} <= sum of factor norms since all factors lie in [0,1]
        double gnorm = lc.main.gradient_ln_norm(n);
        for (const auto& h : lc.holes) gnorm += h.gradient_ln_norm(n);

        rep.mass_fraction.push_back(frac);
        rep.domination.push_back(dom);
        rep.gradient_norm.push_back(gnorm);
        rep.oscillation.push_back(osc);
        const std::string tag = "cutoff " + std::to_string(i) + ": ";
        if (frac < 1 - eps) rep.violations.push_back(tag + "property (1) mass fraction " + std::to_string(frac));
        if (!(eps > dom)) rep.violations.push_back(tag + "property (2) domination ratio " + std::to_string(dom));
        if (gnorm > eps * (1 + 1e-12))
            rep.violations.push_back(tag + "property (3) gradient norm " + std::to_string(gnorm));
        if (!(osc < 1 + eps)) rep.violations.push_back(tag + "property (4) oscillation " + std::to_string(osc));
        rep.cutoffs.push_back(std::move(lc));
    }
    return rep;
}

// ---- JSON ----

inline nlohmann::json to_json(const BubbleFamily& fam) {
    nlohmann::json j;
    j["n"] = fam.bubbles.empty() ? 0 : fam.bubbles.front().n;
    j["bubbles"] = nlohmann::json::array();
    for (const auto& b : fam.bubbles) j["bubbles"].push_back({{"z", b.z}, {"lambda", b.lambda}});
    j["coefficients"] = fam.coefficients;
    return j;
}

inline BubbleFamily family_from_json(const nlohmann::json& j) {
    BubbleFamily fam;
    const int n = j.at("n").get<int>();
    for (const auto& b : j.at("bubbles")) fam.bubbles.emplace_back(b.at("z").get<std::vector<double>>(), b.at("lambda").get<double>(), n);
    fam.coefficients = j.at("coefficients").get<std::vector<double>>();
    fam.validate();
    return fam;
}

}  // namespace tsl
