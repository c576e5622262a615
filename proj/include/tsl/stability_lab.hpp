#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gsl/gsl_integration.h>

#include "bubbles.hpp"
#include "conformal_steklov.hpp"
#include "neumann_dual.hpp"

namespace tsl {

// ---- multi-bubble fitting ----

struct FitResult {
    int n = 3;
    std::vector<double> coefficients;
    std::vector<Bubble> bubbles;
    double distance = 0;  // ||u - sigma||_{H^1}
    // per bubble: <rho, U_i>, <rho, d_lambda U_i>, <rho, d_{z_j} U_i>, each divided by the norm of the direction
    std::vector<std::vector<double>> orthogonality;
    std::vector<std::vector<double>> interactions;  // int U_i^p U_j
    bool converged = false;
    int iterations = 0;
    int starts = 0;

    double max_orthogonality() const {
        double m = 0;
        for (const auto& row : orthogonality)
            for (double v : row) m = std::max(m, std::abs(v));
        return m;
    }
};

struct Peak {
    std::vector<double> x;
    double height;
};

// strict local maxima of |g| away from the box faces, strongest first; heights below rel_floor * max are dropped
inline std::vector<Peak> boundary_peaks(const GridField& g, double rel_floor = 0.05) {
    const int d = g.dim();
    std::vector<std::size_t> stride(d, 1);
    for (int a = d - 2; a >= 0; --a) stride[a] = stride[a + 1] * std::size_t(g.samples(a + 1));
    std::vector<std::vector<int>> offsets{{}};
    for (int a = 0; a < d; ++a) {
        std::vector<std::vector<int>> next;
        for (const auto& o : offsets)
            for (int s : {-1, 0, 1}) {
                auto e = o;
                e.push_back(s);
                next.push_back(std::move(e));
            }
        offsets = std::move(next);
    }
    double top = 0;
    for (double v : g.values()) top = std::max(top, std::abs(v));
    std::vector<Peak> out;
    if (top == 0) return out;
    std::vector<int> idx;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = std::abs(g[i]);
        if (v < rel_floor * top) continue;
        g.unravel(i, idx);
        bool face = false;
        for (int a = 0; a < d; ++a) face = face || idx[a] == 0 || idx[a] == g.samples(a) - 1;
        if (face) continue;
        bool is_max = true;
        for (const auto& o : offsets) {
            long long off = 0;
            bool zero = true;
            for (int a = 0; a < d; ++a) {
                off += o[a] * (long long)stride[a];
                zero = zero && o[a] == 0;
            }
            if (zero) continue;
            const double w = std::abs(g[std::size_t((long long)i + off)]);
            // ties go to the lower flat index
            if (w > v || (w == v && off < 0)) {
                is_max = false;
                break;
            }
        }
        if (!is_max) continue;
        Peak p{std::vector<double>(d), g[i]};
        for (int a = 0; a < d; ++a) p.x[a] = g.coord(a, idx[a]);
        out.push_back(std::move(p));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Peak& a, const Peak& b) { return std::abs(a.height) > std::abs(b.height); });
    return out;
}

struct FitOptions {
    int max_iterations = 200;
    std::vector<double> lambda_factors{1.0, 0.6, 1.6};  // multi-start: seeded scale times each factor
    // explicit starting point; replaces peak seeding
    std::optional<std::pair<std::vector<double>, std::vector<Bubble>>> start;
    double rel_floor = 0.05;
};

namespace detail {

struct FitState {
    std::vector<double> alpha;
    std::vector<Bubble> b;
};

struct FitEval {
    double J = 0;           // ||u - sigma||^2
    double u_norm = 0;
    Eigen::VectorXd grad;   // <T_k, rho>
    Eigen::MatrixXd gram;   // <T_k, T_l>
    Eigen::VectorXd ortho;  // <B_k, rho> / ||B_k||
};

using FitModel = std::function<FitEval(const FitState&)>;

// d_a^k d_b^l <U[a], U[b]> for k, l in {none, lambda d_lambda, d_{z_1}, ..., d_{z_{n-1}}}
inline Eigen::MatrixXd pairing_block(const Bubble& a, const Bubble& b) {
    using D = Dual<double>;
    using DD = Dual<D>;
    const int n = a.n;
    auto seed = [](int k, int slot) { return k == slot ? 1.0 : 0.0; };
    Eigen::MatrixXd M(n + 1, n + 1);
    for (int k = 0; k <= n; ++k)
        for (int l = 0; l <= n; ++l) {
            // outer dual carries the a-derivative, inner dual the b-derivative
            std::vector<DD> za(n - 1), zb(n - 1);
            for (int i = 0; i < n - 1; ++i) {
                za[i] = DD(D(a.z[i]), D(seed(k, i + 2)));
                zb[i] = DD(D(b.z[i], seed(l, i + 2)), D(0.0));
            }
            const DD la(D(a.lambda), D(a.lambda * seed(k, 1)));
            const DD lb(D(b.lambda, b.lambda * seed(l, 1)), D(0.0));
            const DD r = bubble_pairing<DD>(n, za, la, zb, lb);
            M(k, l) = k && l ? r.d.d : k ? r.d.v : l ? r.v.d : r.v.v;
        }
    return M;
}

// jet of w -> <u, U[w]> in the same slots as pairing_block
using PairJet = std::function<Eigen::VectorXd(const Bubble&)>;

// model for fields whose pairing with any bubble is known exactly
inline FitModel exact_model(int n, double u_norm_sq, PairJet jet) {
    return [=](const FitState& s) {
        const int nu = int(s.b.size()), m = n + 1;
        std::vector<Eigen::VectorXd> J(nu);
        for (int i = 0; i < nu; ++i) J[i] = jet(s.b[i]);
        std::vector<std::vector<Eigen::MatrixXd>> M(nu, std::vector<Eigen::MatrixXd>(nu));
        for (int i = 0; i < nu; ++i)
            for (int j = i; j < nu; ++j) {
                M[i][j] = pairing_block(s.b[i], s.b[j]);
                if (j != i) M[j][i] = M[i][j].transpose();
            }
        FitEval e;
        e.u_norm = std::sqrt(std::max(0.0, u_norm_sq));
        e.grad.resize(nu * m);
        e.gram.resize(nu * m, nu * m);
        e.ortho.resize(nu * m);
        double J2 = u_norm_sq;
        for (int i = 0; i < nu; ++i) {
            J2 -= 2 * s.alpha[i] * J[i](0);
            for (int j = 0; j < nu; ++j) J2 += s.alpha[i] * s.alpha[j] * M[i][j](0, 0);
        }
        e.J = J2;
        auto scale = [&](int i, int k) { return k == 0 ? 1.0 : s.alpha[i]; };
        for (int j = 0; j < nu; ++j)
            for (int l = 0; l < m; ++l) {
                double sig = 0;
                for (int i = 0; i < nu; ++i) sig += s.alpha[i] * M[i][j](0, l);
                const double g = J[j](l) - sig;
                e.grad(j * m + l) = scale(j, l) * g;
                e.ortho(j * m + l) = g / std::sqrt(std::max(M[j][j](l, l), 1e-300));
                for (int i = 0; i < nu; ++i)
                    for (int k = 0; k < m; ++k) e.gram(i * m + k, j * m + l) = scale(i, k) * scale(j, l) * M[i][j](k, l);
            }
        return e;
    };
}

inline std::vector<GridField> bubble_directions(const Bubble& b, const GridField& like) {
    const int n = b.n;
    std::vector<std::vector<double>> v(n + 1, std::vector<double>(like.size()));
    std::vector<int> idx;
    std::vector<double> x(n - 1);
    for (std::size_t i = 0; i < like.size(); ++i) {
        like.unravel(i, idx);
        for (int a = 0; a < n - 1; ++a) x[a] = like.coord(a, idx[a]);
        const auto e = eval_bubble(b, x, 0.0);
        v[0][i] = e.value;
        v[1][i] = b.lambda * e.dlambda;
        for (int a = 0; a < n - 1; ++a) v[2 + a][i] = e.dz[a];
    }
    std::vector<GridField> out;
    for (auto& f : v) out.push_back(like.with_values(std::move(f)));
    return out;
}

// raw samples: everything measured in the torus metric on the sample grid
inline FitModel raw_model(int n, const GridField& g) {
    const double uu = torus_energy(g, g);
    return [=](const FitState& s) {
        const int nu = int(s.b.size()), m = n + 1;
        std::vector<std::vector<GridField>> B(nu);
        auto r = g.values();
        for (int i = 0; i < nu; ++i) {
            B[i] = bubble_directions(s.b[i], g);
            for (std::size_t q = 0; q < r.size(); ++q) r[q] -= s.alpha[i] * B[i][0][q];
        }
        const auto rf = g.with_values(std::move(r));
        FitEval e;
        e.u_norm = std::sqrt(std::max(0.0, uu));
        e.J = torus_energy(rf, rf);
        e.grad.resize(nu * m);
        e.gram.resize(nu * m, nu * m);
        e.ortho.resize(nu * m);
        auto scale = [&](int i, int k) { return k == 0 ? 1.0 : s.alpha[i]; };
        for (int j = 0; j < nu; ++j)
            for (int l = 0; l < m; ++l) {
                const double g1 = torus_energy(B[j][l], rf);
                e.grad(j * m + l) = scale(j, l) * g1;
                e.ortho(j * m + l) = g1 / std::sqrt(std::max(torus_energy(B[j][l], B[j][l]), 1e-300));
                for (int i = 0; i <= j; ++i)
                    for (int k = 0; k < m; ++k) {
                        if (i == j && k > l) continue;
                        const double v = scale(i, k) * scale(j, l) * torus_energy(B[i][k], B[j][l]);
                        e.gram(i * m + k, j * m + l) = v;
                        e.gram(j * m + l, i * m + k) = v;
                    }
            }
        return e;
    };
}

inline FitState apply_step(const FitState& s, const Eigen::VectorXd& d) {
    FitState t = s;
    const int m = s.b.front().n + 1;
    for (std::size_t i = 0; i < s.b.size(); ++i) {
        t.alpha[i] += d(i * m);
        t.b[i].lambda *= std::exp(std::clamp(d(i * m + 1), -1.0, 1.0));
        for (int a = 0; a + 2 < m; ++a) t.b[i].z[a] += d(i * m + 2 + a);
    }
    return t;
}

struct GnOutcome {
    FitState state;
    FitEval eval;
    bool converged;
    int iterations;
};

inline bool stationary(const FitEval& e) {
    const double rho = std::sqrt(std::max(0.0, e.J));
    return e.ortho.cwiseAbs().maxCoeff() <= 1e-8 * rho + 1e-11 * e.u_norm;
}

// Levenberg-damped Gauss-Newton on (alpha_i, log lambda_i, z_i)
inline GnOutcome gauss_newton(const FitModel& model, FitState s, int max_iter) {
    FitEval e = model(s);
    double mu = 1e-4;
    int it = 0;
    bool conv = stationary(e);
    while (!conv && it < max_iter) {
        ++it;
        Eigen::MatrixXd A = e.gram;
        for (int k = 0; k < A.rows(); ++k) A(k, k) *= 1 + mu;
        const Eigen::VectorXd d = A.ldlt().solve(e.grad);
        if (!d.allFinite()) break;
        const FitState t = apply_step(s, d);
        const FitEval et = model(t);
        if (et.J <= e.J + 1e-15 * e.u_norm * e.u_norm) {
            const double shrink = e.J - et.J;
            s = t;
            e = et;
            mu = std::max(mu * 0.1, 1e-12);
            conv = stationary(e);
            // no measurable progress on a tiny step: rounding floor reached
            if (!conv && std::abs(shrink) <= 1e-15 * e.u_norm * e.u_norm && d.norm() < 1e-10) break;
        } else {
            mu *= 10;
            if (mu > 1e12) break;
        }
    }
    return {s, e, conv, it};
}

inline FitResult finish_fit(int n, const GnOutcome& g, int starts) {
    FitResult r;
    r.n = n;
    r.coefficients = g.state.alpha;
    r.bubbles = g.state.b;
    r.distance = std::sqrt(std::max(0.0, g.eval.J));
    const int nu = int(g.state.b.size()), m = n + 1;
    r.orthogonality.assign(nu, std::vector<double>(m));
    r.interactions.assign(nu, std::vector<double>(nu));
    for (int i = 0; i < nu; ++i) {
        for (int k = 0; k < m; ++k) r.orthogonality[i][k] = g.eval.ortho(i * m + k);
        for (int j = 0; j < nu; ++j)
            r.interactions[i][j] =
                bubble_pairing<double>(n, r.bubbles[i].z, r.bubbles[i].lambda, r.bubbles[j].z, r.bubbles[j].lambda);
    }
    r.converged = g.converged;
    r.iterations = g.iterations;
    r.starts = starts;
    return r;
}

inline std::vector<FitState> seed_states(int n, int nu, const std::vector<Peak>& peaks, const FitOptions& opt) {
    if (opt.start) {
        if (int(opt.start->second.size()) != nu || opt.start->first.size() != opt.start->second.size())
            throw error(errc::parameter, "explicit start must hold nu coefficients and bubbles");
        return {FitState{opt.start->first, opt.start->second}};
    }
    std::vector<Peak> chosen;
    for (const auto& p : peaks) {
        bool apart = true;
        for (const auto& c : chosen) {
            double d2 = 0;
            for (std::size_t a = 0; a < p.x.size(); ++a) d2 += (p.x[a] - c.x[a]) * (p.x[a] - c.x[a]);
            // inside the half-height radius of a stronger peak
            const double lam = std::pow(std::abs(c.height) / bubble_amplitude(n), 2.0 / (n - 2));
            apart = apart && std::sqrt(d2) * lam > 0.5;
        }
        if (apart) chosen.push_back(p);
        if (int(chosen.size()) == nu) break;
    }
    if (int(chosen.size()) < nu) {
        std::ostringstream os;
        os << "found " << chosen.size() << " separated peaks for " << nu << " bubbles:";
        for (const auto& c : chosen) {
            os << " (";
            for (std::size_t a = 0; a < c.x.size(); ++a) os << (a ? "," : "") << c.x[a];
            os << ") height " << c.height << ";";
        }
        throw error(errc::seeding, os.str());
    }
    std::vector<FitState> out;
    for (double f : opt.lambda_factors) {
        FitState s;
        for (const auto& c : chosen) {
            const double lam = std::pow(std::abs(c.height) / bubble_amplitude(n), 2.0 / (n - 2));
            s.alpha.push_back(c.height > 0 ? 1.0 : -1.0);
            s.b.emplace_back(c.x, lam * f, n);
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline FitResult run_fit(int n, int nu, const FitModel& model, const std::vector<Peak>& peaks, const FitOptions& opt) {
    if (nu < 1) throw error(errc::parameter, "nu must be >= 1");
    const auto seeds = seed_states(n, nu, peaks, opt);
    std::optional<GnOutcome> best;
    for (const auto& s : seeds) {
        auto g = gauss_newton(model, s, opt.max_iterations);
        if (!best || (g.converged && !best->converged) ||
            (g.converged == best->converged && g.eval.J < best->eval.J))
            best = std::move(g);
    }
    return finish_fit(n, *best, int(seeds.size()));
}

// sample grid covering the profiles, resolving the narrowest one
inline GridField profile_grid(const HarmonicField& u) {
    const int d = u.n - 1;
    double reach = 0, lmax = 0, lmin = std::numeric_limits<double>::infinity();
    for (const auto& [c, b] : u.profiles) {
        for (double zi : b.z) reach = std::max(reach, std::abs(zi));
        lmax = std::max(lmax, b.lambda);
        lmin = std::min(lmin, b.lambda);
    }
    const double L = reach + 4 / lmin;
    const int cap = d <= 2 ? 1024 : 128;
    int N = 16;
    while (N < cap && 2 * L / N > 0.25 / lmax) N *= 2;
    return GridField::cubic(d, N, L, std::vector<double>(std::size_t(std::pow(N, d)), 0.0));
}

}  // namespace detail

// H^1 pairing of a harmonic field with U[w] and its derivatives (slots as in pairing_block)
inline Eigen::VectorXd field_pairing_jet(const HarmonicField& u, const Bubble& w) {
    const int n = u.n;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n + 1);
    for (const auto& [c, b] : u.profiles) {
        const auto M = detail::pairing_block(b, w);
        out += c * M.row(0).transpose();
    }
    if (u.remainder) {
        const auto& r = *u.remainder;
        const double p = EscobarParams(n).p();
        std::vector<int> idx;
        std::vector<double> x(n - 1);
        Eigen::VectorXd s = Eigen::VectorXd::Zero(n + 1);
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (r[i] == 0) continue;
            r.unravel(i, idx);
            for (int a = 0; a < n - 1; ++a) x[a] = r.coord(a, idx[a]);
            const auto e = eval_bubble(w, x, 0.0);
            const double up1 = std::pow(e.value, p - 1);
            s(0) += up1 * e.value * r[i];
            s(1) += p * up1 * w.lambda * e.dlambda * r[i];
            for (int a = 0; a < n - 1; ++a) s(2 + a) += p * up1 * e.dz[a] * r[i];
        }
        out += s * r.cell();
    }
    return out;
}

// ball fields: <u, U[z,lambda]> = K_n lambda^{(2-n)/2} u(z, 1/lambda)
inline Eigen::VectorXd ball_pairing_jet(const BallField& u, const Poly& extension, const Bubble& w) {
    using D = Dual<double>;
    const int n = u.n;
    const double kn = point_evaluation_constant(n);
    Eigen::VectorXd out(n + 1);
    const std::vector<D> zero(n - 1, D(0.0));
    for (int k = 0; k <= n; ++k) {
        const D lam(w.lambda, k == 1 ? w.lambda : 0.0);
        std::vector<D> xt(n);
        for (int a = 0; a < n - 1; ++a) xt[a] = D(w.z[a], k == a + 2 ? 1.0 : 0.0);
        xt[n - 1] = 1.0 / lam;
        std::vector<D> x(xt.begin(), xt.end() - 1);
        const D u0 = bubble_value<D>(n, zero, D(1.0), x, xt[n - 1]);
        const D val = kn * pow(lam, 0.5 * (2 - n)) * u0 * extension.eval(half_to_ball(xt));
        out(k) = k == 0 ? val.v : val.d;
    }
    return out;
}

// harmonic extension of the boundary polynomial into the ball
inline Poly ball_extension(const BallField& u) {
    Poly e(u.n);
    for (const auto& [k, h] : sphere_harmonic_parts(u.phi)) e += h;
    return e;
}

inline double ball_field_value(const BallField& u, const Poly& extension, const std::vector<double>& x, double t) {
    std::vector<double> xt(x);
    xt.push_back(t);
    const std::vector<double> zero(u.n - 1, 0.0);
    return bubble_value<double>(u.n, zero, 1.0, x, t) * extension.eval(half_to_ball(xt));
}

inline FitResult fit_bubbles(const GridField& trace, int nu, int n, const FitOptions& opt = {}) {
    if (trace.dim() != n - 1) throw error(errc::parameter, "trace must have dimension n - 1");
    if (nu < 1) throw error(errc::parameter, "nu must be >= 1");
    double top = 0;
    for (double v : trace.values()) top = std::max(top, std::abs(v));
    if (top == 0) throw error(errc::parameter, "cannot fit bubbles to the zero field");
    return detail::run_fit(n, nu, detail::raw_model(n, trace), boundary_peaks(trace, opt.rel_floor), opt);
}

inline FitResult fit_bubbles(const HarmonicField& u, int nu, const FitOptions& opt = {}) {
    if (nu < 1) throw error(errc::parameter, "nu must be >= 1");
    if (!u.has_profiles()) {
        if (!u.remainder) throw error(errc::parameter, "cannot fit bubbles to the zero field");
        return fit_bubbles(*u.remainder, nu, u.n, opt);
    }
    detail::require_mean_zero_remainder(u);
    const double uu = h1_inner(u, u);
    if (!(uu > 0)) throw error(errc::parameter, "cannot fit bubbles to the zero field");
    const GridField grid = u.remainder ? *u.remainder : detail::profile_grid(u);
    const auto peaks = boundary_peaks(u.values_at(grid, 0), opt.rel_floor);
    auto jet = [u](const Bubble& w) { return field_pairing_jet(u, w); };
    return detail::run_fit(u.n, nu, detail::exact_model(u.n, uu, jet), peaks, opt);
}

inline FitResult fit_bubbles(const BallField& u, int nu, const FitOptions& opt = {}) {
    if (nu < 1) throw error(errc::parameter, "nu must be >= 1");
    const double uu = ball_h1_norm_sq(u);
    if (!(uu > 0)) throw error(errc::parameter, "cannot fit bubbles to the zero field");
    const Poly ext = ball_extension(u);
    const int d = u.n - 1, N = d <= 2 ? 64 : 32;
    const double L = 8;
    auto g = GridField::cubic(d, N, L, std::vector<double>(std::size_t(std::pow(N, d)), 0.0));
    std::vector<double> v(g.size());
    std::vector<int> idx;
    std::vector<double> x(d);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.unravel(i, idx);
        for (int a = 0; a < d; ++a) x[a] = g.coord(a, idx[a]);
        v[i] = ball_field_value(u, ext, x, 0.0);
    }
    const auto peaks = boundary_peaks(g.with_values(std::move(v)), opt.rel_floor);
    auto jet = [u, ext](const Bubble& w) { return ball_pairing_jet(u, ext, w); };
    return detail::run_fit(u.n, nu, detail::exact_model(u.n, uu, jet), peaks, opt);
}

// ---- quantitative stability report ----

struct StabilityOptions {
    double ratio_floor = 0;  // required lower bound for r/d
    double delta = 0.1;      // interaction threshold for the fitted family
    double degenerate_distance = 1e-6;
};

struct StabilityReport {
    FitResult fit;
    double distance = 0;
    double residual = 0;
    double interaction_sum = 0;  // sum_{i != j} int U_i^p U_j
    double ratio_rd = std::numeric_limits<double>::quiet_NaN();
    double ratio_ir = std::numeric_limits<double>::quiet_NaN();
    bool degenerate = false;  // u sits on the manifold: ratios undefined
    bool floor_ok = true;
    bool delta_interacting = false;
    double interaction_constant = std::numeric_limits<double>::quiet_NaN();  // C with interaction <= C r
    bool interaction_bound_ok = true;
};

namespace detail {

inline StabilityReport finish_stability(FitResult fit, double r, const StabilityOptions& opt) {
    if (!fit.converged) throw error(errc::precondition, "bubble fit did not converge");
    StabilityReport s;
    s.distance = fit.distance;
    s.residual = r;
    for (std::size_t i = 0; i < fit.bubbles.size(); ++i)
        for (std::size_t j = 0; j < fit.bubbles.size(); ++j)
            if (i != j) s.interaction_sum += fit.interactions[i][j];
    s.degenerate = fit.distance <= opt.degenerate_distance;
    if (!s.degenerate) {
        s.ratio_rd = r / fit.distance;
        s.floor_ok = s.ratio_rd >= opt.ratio_floor;
    }
    if (r > 0) {
        s.ratio_ir = s.interaction_sum / r;
        s.interaction_constant = s.ratio_ir;
    } else {
        s.interaction_bound_ok = s.interaction_sum == 0;
    }
    bool positive = true;
    for (double a : fit.coefficients) positive = positive && a > 0;
    if (positive) s.delta_interacting = family_check({fit.bubbles, fit.coefficients}, opt.delta).is_delta_interacting;
    s.fit = std::move(fit);
    return s;
}

}  // namespace detail

inline StabilityReport quantitative_stability_report(const HarmonicField& u, int nu, const GridField& grid,
                                                     const StabilityOptions& opt = {}) {
    auto fit = fit_bubbles(u, nu);
    const double r = dual_residual(u, grid).norm;
    return detail::finish_stability(std::move(fit), r, opt);
}

inline StabilityReport quantitative_stability_report(const BallField& u, const StabilityOptions& opt = {}) {
    auto fit = fit_bubbles(u, 1);
    const double r = std::sqrt(std::max(0.0, ball_dual_residual_sq(u)));
    return detail::finish_stability(std::move(fit), r, opt);
}

// ---- one-bubble quotient scan ----

inline std::string poly_to_string(const Poly& q) {
    std::ostringstream os;
    os.precision(6);
    bool first = true;
    for (auto it = q.terms.rbegin(); it != q.terms.rend(); ++it) {
        const auto& [e, c] = *it;
        os << (c < 0 ? (first ? "-" : " - ") : (first ? "" : " + "));
        const double a = std::abs(c);
        bool mono = false;
        for (int v : e) mono = mono || v > 0;
        if (a != 1 || !mono) os << a;
        bool star = a != 1;
        for (std::size_t i = 0; i < e.size(); ++i)
            if (e[i] > 0) {
                os << (star ? "*" : "") << "y" << i + 1;
                if (e[i] > 1) os << "^" << e[i];
                star = true;
            }
        first = false;
    }
    return first ? "0" : os.str();
}

// -(sum_{i<j} y_i y_j): harmonic, degree 2, negative cubic moment on the sphere
inline Poly standard_direction(int n) {
    Poly q(n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) q -= Poly::variable(n, i) * Poly::variable(n, j);
    return q;
}

// ||F^{-1}[q]||_{H^1} for a harmonic homogeneous q of degree k: c^{n-1} kappa_k ||q||^2_{S}
inline double direction_norm(const Poly& q) {
    const int n = q.n, k = q.degree();
    return std::sqrt(std::pow(0.5 * (n - 2), n - 1) * EscobarParams(n).kappa(k) * sphere_inner(q, q));
}

struct QuotientReport {
    int n = 3;
    std::string direction;
    std::vector<double> epsilons;  // signed, in scan order
    std::vector<double> quotients;
    std::vector<double> residuals;
    std::vector<double> distances;
    double extrapolated_limit = 0;
    double limit_stderr = 0;
    double fitted_slope = 0;  // d(quotient^2)/d eps at 0
    double slope_stderr = 0;
    double analytic_slope = 0;
    double secondary_slope = 0;  // same expansion with (p(p-1)/3)(1/kappa_2 - 1) as the cubic coefficient
    double cubic_integral = 0;   // int_{R^{n-1}} U^{p-2} rho^3 = c^{n-1} int_{dB} q^3
    double theoretical_limit = 0;
    bool inconclusive = false;
    bool certified_below = false;  // some scanned quotient lies below 2/(n+2)
    double min_quotient = 0;
    double min_epsilon = 0;
};

struct ScanOptions {
    int threads = 1;
    double certify_margin = 1e-9;
};

inline QuotientReport one_bubble_quotient_scan(int n, const Poly& q, const std::vector<double>& epsilons,
                                               const ScanOptions& opt = {}) {
    if (n != 3 && n != 4) throw error(errc::parameter, "quotient scan needs n = 3 or 4 (integer exponent)");
    if (q.n != n) throw error(errc::parameter, "direction polynomial has the wrong number of variables");
    const double scale = std::max(q.max_abs_coefficient(), 1e-300);
    if (q.is_zero() || !(q - q.homogeneous_part(2)).is_zero() || q.laplacian().max_abs_coefficient() > 1e-12 * scale)
        throw error(errc::precondition, "direction must be a harmonic homogeneous polynomial of degree 2");
    if (epsilons.size() < 3) throw error(errc::parameter, "the scan needs at least 3 epsilons");
    for (double e : epsilons)
        if (!(e > 0 && e <= 0.1)) throw error(errc::parameter, "epsilons must lie in (0, 0.1]");

    const EscobarParams E(n);
    const double p = E.p(), k2 = E.kappa(2), c = 0.5 * (n - 2);
    const Poly qh = q * (1 / direction_norm(q));

    QuotientReport R;
    R.n = n;
    R.direction = poly_to_string(qh);
    R.theoretical_limit = 1 - p / k2;
    R.cubic_integral = std::pow(c, n - 1) * sphere_integral(qh.pow(3));
    R.analytic_slope = -p * (p - 1) * (1 - p / k2) * R.cubic_integral;
    R.secondary_slope = (p * (p - 1) / 3) * (1 / k2 - 1) * R.cubic_integral;
    for (double s : {-1.0, 1.0})
        for (double e : epsilons) R.epsilons.push_back(s * e);

    const std::size_t m = R.epsilons.size();
    R.quotients.resize(m);
    R.residuals.resize(m);
    R.distances.resize(m);
    auto task = [&](std::size_t i) {
        const BallField u{n, Poly::constant(n, 1) + qh * R.epsilons[i]};
        const double r = std::sqrt(std::max(0.0, ball_dual_residual_sq(u)));
        const auto fit = fit_bubbles(u, 1);
        if (!fit.converged) throw error(errc::accuracy, "bubble fit did not converge in the quotient scan");
        R.residuals[i] = r;
        R.distances[i] = fit.distance;
        R.quotients[i] = r / fit.distance;
    };
    const int threads = std::max(1, opt.threads);
    for (std::size_t lo = 0; lo < m; lo += threads) {
        std::vector<std::future<void>> jobs;
        for (std::size_t i = lo; i < std::min(m, lo + threads); ++i)
            jobs.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred, task, i));
        for (auto& j : jobs) j.get();
    }

    // quotient^2 = a + b eps + c eps^2
    Eigen::MatrixXd A(m, 3);
    Eigen::VectorXd y(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double e = R.epsilons[i];
        A.row(i) << 1, e, e * e;
        y(i) = R.quotients[i] * R.quotients[i];
    }
    const Eigen::MatrixXd AtA = A.transpose() * A;
    const Eigen::VectorXd beta = AtA.ldlt().solve(A.transpose() * y);
    const double ssr = (A * beta - y).squaredNorm();
    const Eigen::MatrixXd cov = AtA.inverse() * (ssr / std::max<double>(1, double(m) - 3));
    R.extrapolated_limit = std::sqrt(std::max(0.0, beta(0)));
    R.limit_stderr = std::sqrt(std::max(0.0, cov(0, 0))) / (2 * std::max(R.extrapolated_limit, 1e-300));
    R.fitted_slope = beta(1);
    R.slope_stderr = std::sqrt(std::max(0.0, cov(1, 1)));
    // rounding floor of the slope: quotients are exact to about 1e-12
    const double floor = 1e-10 / *std::max_element(epsilons.begin(), epsilons.end());
    R.inconclusive = std::abs(R.fitted_slope) < std::max(3 * R.slope_stderr, floor);

    const auto it = std::min_element(R.quotients.begin(), R.quotients.end());
    R.min_quotient = *it;
    R.min_epsilon = R.epsilons[std::size_t(it - R.quotients.begin())];
    R.certified_below = !R.inconclusive && R.min_quotient < 2.0 / (n + 2) - opt.certify_margin;
    return R;
}

// ---- linear-decay sharpness construction ----

// ||(sum U_i)^p - sum U_i^p||_{L^{2(n-1)/n}(R^{n-1})}; polar rule about every center with a
// partition of unity w_i = U_i^2 / sum U_j^2
inline double coupling_norm(const std::vector<Bubble>& bs, int radial_nodes = 256, int angular_degree = 160) {
    const int n = bs.front().n, d = n - 1;
    const double p = EscobarParams(n).p(), q = 2.0 * (n - 1) / n;
    gsl_integration_fixed_workspace* w =
        gsl_integration_fixed_alloc(gsl_integration_fixed_legendre, radial_nodes, 0, 0.5 * pi, 0, 0);
    const std::vector<double> psi(gsl_integration_fixed_nodes(w), gsl_integration_fixed_nodes(w) + radial_nodes);
    const std::vector<double> pw(gsl_integration_fixed_weights(w), gsl_integration_fixed_weights(w) + radial_nodes);
    gsl_integration_fixed_free(w);
    const auto S = sphere_rule(d, angular_degree);
    std::vector<double> u(bs.size()), x(d);
    double total = 0;
    for (const auto& c : bs)
        for (int k = 0; k < radial_nodes; ++k) {
            const double r = std::tan(psi[k]) / c.lambda;
            const double jac = std::pow(r, d - 1) / (c.lambda * std::pow(std::cos(psi[k]), 2));
            for (std::size_t a = 0; a < S.nodes.size(); ++a) {
                for (int j = 0; j < d; ++j) x[j] = c.z[j] + r * S.nodes[a][j];
                double sum = 0, sump = 0, s2 = 0, own = 0;
                for (std::size_t i = 0; i < bs.size(); ++i) {
                    u[i] = bubble_value<double>(n, bs[i].z, bs[i].lambda, x, 0.0);
                    sum += u[i];
                    sump += std::pow(u[i], p);
                    s2 += u[i] * u[i];
                    if (&bs[i] == &c) own = u[i] * u[i];
                }
                total += pw[k] * S.weights[a] * jac * (own / s2) * std::pow(std::abs(std::pow(sum, p) - sump), q);
            }
        }
    return std::pow(total, 1 / q);
}

struct SharpnessReport {
    int n = 3, nu = 1;
    double delta = 0;
    double epsilon = 0;        // spike radius
    double cone_constant = 0;  // ||grad rho_eps|| = cone_constant eps^{(n-2)/2}
    double spike_norm = 0;     // ||grad rho_eps||_{L^2}
    double radius = 0;         // R
    int doublings = 0;
    std::vector<Bubble> bubbles;
    double max_mu = 0;
    bool delta_interacting = false;
    // dual norm bound r <= sum ||Delta U_i + U_i^p|| + ||Delta rho|| + S^{-1/2} ||(sum U_i)^p - sum U_i^p||
    double bubble_terms = 0;
    double spike_term = 0;
    double coupling = 0;
    double coupling_term = 0;
    double dual_bound = 0;
    double distance = 0;  // inf over families = ||grad rho_eps||
    bool first_holds = false;   // ||grad(u - sum U_i)|| <= 2 inf <= delta
    double first_margin = 0;    // delta - 2 inf
    bool second_holds = false;  // dual_bound <= (5/4) delta, i.e. C = 5
    double second_margin = 0;
    double constant = 0;  // dual_bound / ||grad(u - sum U_i)||
};

inline SharpnessReport sharpness_construction(int n, int nu, double delta, double R0 = 2) {
    if (n < 3) throw error(errc::parameter, "sharpness construction needs n >= 3");
    if (nu < 1) throw error(errc::parameter, "nu must be >= 1");
    if (!(delta > 0 && delta < 1)) throw error(errc::parameter, "delta must lie in (0, 1)");
    SharpnessReport s;
    s.n = n;
    s.nu = nu;
    s.delta = delta;
    s.cone_constant = std::sqrt(ball_volume(n));
    s.epsilon = std::pow(delta / (4 * s.cone_constant), 2.0 / (n - 2));
    s.spike_norm = s.cone_constant * std::pow(s.epsilon, 0.5 * (n - 2));
    // the spike sits in B_eps(0,1) away from the boundary, so it is H^1-orthogonal to every harmonic
    // field: the best family is the unperturbed one and the distance is the spike norm
    if (!(s.epsilon < 1)) throw error(errc::construction, "spike radius reaches the boundary");
    s.distance = s.spike_norm;
    s.spike_term = s.spike_norm;
    const double sinv = 1 / std::sqrt(escobar_constant(n));
    for (double R = R0;; R *= 2, ++s.doublings) {
        if (R > 1e6) throw error(errc::construction, "no radius up to 1e6 satisfies the construction");
        s.radius = R;
        s.bubbles.clear();
        for (int i = 0; i < nu; ++i) {
            std::vector<double> z(n - 1, 0.0);
            const double th = 2 * pi * i / nu;
            z[0] = R * std::cos(th);
            if (n - 1 >= 2) z[1] = R * std::sin(th);
            s.bubbles.emplace_back(z, 1.0, n);
        }
        s.max_mu = 0;
        for (int i = 0; i < nu; ++i)
            for (int j = i + 1; j < nu; ++j) s.max_mu = std::max(s.max_mu, interaction_mu(s.bubbles[i], s.bubbles[j]));
        s.delta_interacting = s.max_mu <= delta;
        s.coupling = nu > 1 ? coupling_norm(s.bubbles) : 0.0;
        s.coupling_term = sinv * s.coupling;
        s.dual_bound = s.bubble_terms + s.spike_term + s.coupling_term;
        s.first_holds = s.spike_norm <= 2 * s.distance && 2 * s.distance <= delta;
        s.first_margin = delta - 2 * s.distance;
        s.second_holds = s.dual_bound <= 1.25 * delta;
        s.second_margin = 1.25 * delta - s.dual_bound;
        s.constant = s.dual_bound / s.spike_norm;
        if (s.delta_interacting && s.first_holds && s.second_holds) break;
    }
    return s;
}

// ---- elementary inequalities ----

inline double signed_power(double a, double p) { return std::copysign(std::pow(std::abs(a), p), a); }

// |(a+b)|a+b|^{p-1} - a|a|^{p-1} - p|a|^{p-1} b| = |a|^p |f(1+t) - 1 - p t| with t = b/a; the binomial
// series replaces the cancelling difference for small t
inline double first_estimate_lhs(int n, double a, double b) {
    const double p = EscobarParams(n).p();
    if (a == 0) return std::pow(std::abs(b), p);
    const double t = b / a;
    double g = 0;
    if (std::abs(t) < 1e-3) {
        double c = 1, tk = 1;
        for (int k = 1; k <= 6; ++k) {
            c *= (p - k + 1) / k;
            tk *= t;
            if (k >= 2) g += c * tk;
        }
    } else {
        g = signed_power(1 + t, p) - 1 - p * t;
    }
    return std::pow(std::abs(a), p) * std::abs(g);
}

// right side without the constant: |a|^{p-2} b^2 + |b|^p for n = 3, |b|^p for n >= 4
inline double first_estimate_rhs(int n, double a, double b) {
    const double p = EscobarParams(n).p();
    const double bp = std::pow(std::abs(b), p);
    return n == 3 ? std::pow(std::abs(a), p - 2) * b * b + bp : bp;
}

inline double second_estimate_lhs(int n, const std::vector<double>& a) {
    const double p = EscobarParams(n).p();
    double s = 0, t = 0;
    for (double x : a) {
        s += x;
        t += signed_power(x, p);
    }
    return std::abs(signed_power(s, p) - t);
}

inline double second_estimate_rhs(int n, const std::vector<double>& a) {
    const double p = EscobarParams(n).p();
    double r = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j)
            if (i != j) r += std::pow(std::abs(a[i]), p - 1) * std::abs(a[j]);
    return r;
}

struct ElementaryReport {
    int n = 3;
    double p = 3;
    double first_constant = 0;        // smallest admissible C_n on the grid
    double bp_only_constant = 0;      // same with |b|^p alone on the right
    bool branch_split_ok = false;     // |b|^p alone fails for n = 3 and suffices for n >= 4
    std::vector<double> second_constants;  // nu = 2, 3
    long long samples = 0;
};

inline ElementaryReport elementary_inequality_check(int n, double decades = 12, int per_decade = 10) {
    if (n < 3) throw error(errc::parameter, "elementary inequalities need n >= 3");
    ElementaryReport R;
    R.n = n;
    R.p = EscobarParams(n).p();
    std::vector<double> mags;
    const int K = int(std::round(decades * per_decade));
    for (int k = 0; k <= K; ++k) mags.push_back(std::pow(10.0, -0.5 * decades + double(k) / per_decade));
    std::vector<double> vals{0.0};
    for (double m : mags) {
        vals.push_back(m);
        vals.push_back(-m);
    }
    for (double a : vals)
        for (double b : vals) {
            ++R.samples;
            const double l = first_estimate_lhs(n, a, b);
            const double r = first_estimate_rhs(n, a, b);
            const double bp = std::pow(std::abs(b), R.p);
            if (r > 0) R.first_constant = std::max(R.first_constant, l / r);
            if (bp > 0) R.bp_only_constant = std::max(R.bp_only_constant, l / bp);
        }
    // the |b|^p-only ratio grows like |a|/|b| for n = 3: over the grid it is astronomically large
    R.branch_split_ok = n == 3 ? R.bp_only_constant > 1e6 : R.bp_only_constant < 1e3;
    std::vector<double> coarse{0.0};
    for (int k = 0; k <= int(decades) * 2; ++k) {
        const double m = std::pow(10.0, -0.5 * decades + 0.5 * k);
        coarse.push_back(m);
        coarse.push_back(-m);
    }
    double c2 = 0, c3 = 0;
    for (double a : vals)
        for (double b : vals) {
            const std::vector<double> v{a, b};
            const double r = second_estimate_rhs(n, v);
            if (r > 0) c2 = std::max(c2, second_estimate_lhs(n, v) / r);
        }
    for (double a : coarse)
        for (double b : coarse)
            for (double c : coarse) {
                const std::vector<double> v{a, b, c};
                const double r = second_estimate_rhs(n, v);
                ++R.samples;
                if (r > 0) c3 = std::max(c3, second_estimate_lhs(n, v) / r);
            }
    R.second_constants = {c2, c3};
    return R;
}

}  // namespace tsl
