#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "constants.hpp"
#include "error.hpp"

namespace tsl {

// Sparse real polynomial in n variables, exponent vector -> coefficient.
struct Poly {
    int n = 0;
    std::map<std::vector<int>, double> terms;

    Poly() = default;
    explicit Poly(int nvars) : n(nvars) {}

    static Poly constant(int nvars, double c) {
        Poly p(nvars);
        if (c != 0) p.terms[std::vector<int>(nvars, 0)] = c;
        return p;
    }
    static Poly variable(int nvars, int i, double c = 1) {
        Poly p(nvars);
        std::vector<int> e(nvars, 0);
        e[i] = 1;
        p.terms[e] = c;
        return p;
    }
    static Poly monomial(std::vector<int> e, double c = 1) {
        Poly p(int(e.size()));
        if (c != 0) p.terms[std::move(e)] = c;
        return p;
    }
    // |y|^{2j}
    static Poly norm_squared_power(int nvars, int j) {
        Poly r2(nvars);
        for (int i = 0; i < nvars; ++i) {
            std::vector<int> e(nvars, 0);
            e[i] = 2;
            r2.terms[e] = 1;
        }
        Poly out = constant(nvars, 1);
        for (int k = 0; k < j; ++k) out = out * r2;
        return out;
    }

    bool is_zero() const { return terms.empty(); }

    int degree() const {
        int d = -1;
        for (const auto& [e, c] : terms) d = std::max(d, total(e));
        return d;
    }
    static int total(const std::vector<int>& e) {
        int s = 0;
        for (int a : e) s += a;
        return s;
    }

    Poly homogeneous_part(int d) const {
        Poly p(n);
        for (const auto& [e, c] : terms)
            if (total(e) == d) p.terms[e] = c;
        return p;
    }

    Poly& operator+=(const Poly& o) {
        check(o);
        for (const auto& [e, c] : o.terms) add_term(e, c);
        return *this;
    }
    Poly& operator-=(const Poly& o) {
        check(o);
        for (const auto& [e, c] : o.terms) add_term(e, -c);
        return *this;
    }
    Poly& operator*=(double s) {
        if (s == 0) terms.clear();
        for (auto& [e, c] : terms) c *= s;
        return *this;
    }
    friend Poly operator+(Poly a, const Poly& b) { return a += b; }
    friend Poly operator-(Poly a, const Poly& b) { return a -= b; }
    friend Poly operator*(Poly a, double s) { return a *= s; }
    friend Poly operator*(double s, Poly a) { return a *= s; }
    friend Poly operator*(const Poly& a, const Poly& b) {
        a.check(b);
        Poly r(a.n);
        std::vector<int> e(a.n);
        for (const auto& [ea, ca] : a.terms)
            for (const auto& [eb, cb] : b.terms) {
                for (int i = 0; i < a.n; ++i) e[i] = ea[i] + eb[i];
                r.add_term(e, ca * cb);
            }
        return r;
    }

    Poly pow(int k) const {
        if (k < 0) throw error(errc::parameter, "negative polynomial power");
        Poly out = constant(n, 1), base = *this;
        for (; k; k >>= 1) {
            if (k & 1) out = out * base;
            if (k > 1) base = base * base;
        }
        return out;
    }

    Poly derivative(int i) const {
        Poly r(n);
        for (const auto& [e, c] : terms) {
            if (e[i] == 0) continue;
            auto f = e;
            f[i] -= 1;
            r.add_term(f, c * e[i]);
        }
        return r;
    }

    Poly laplacian() const {
        Poly r(n);
        for (const auto& [e, c] : terms)
            for (int i = 0; i < n; ++i) {
                if (e[i] < 2) continue;
                auto f = e;
                f[i] -= 2;
                r.add_term(f, c * e[i] * (e[i] - 1));
            }
        return r;
    }

    template <class T>
    T eval(const std::vector<T>& y) const {
        T s(0.0);
        for (const auto& [e, c] : terms) {
            T m(c);
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < e[i]; ++k) m = m * y[i];
            s = s + m;
        }
        return s;
    }
    double operator()(const std::vector<double>& y) const { return eval(y); }

    double max_abs_coefficient() const {
        double m = 0;
        for (const auto& [e, c] : terms) m = std::max(m, std::abs(c));
        return m;
    }

private:
    void check(const Poly& o) const {
        if (o.n != n) throw error(errc::parameter, "polynomials in different numbers of variables");
    }
    void add_term(const std::vector<int>& e, double c) {
        auto [it, fresh] = terms.try_emplace(e, c);
        if (!fresh) {
            it->second += c;
            if (it->second == 0) terms.erase(it);
        } else if (c == 0) {
            terms.erase(it);
        }
    }
};

// int_{S^{n-1}} y^a dsigma = 2 prod Gamma((a_i+1)/2) / Gamma((|a|+n)/2), zero if any a_i is odd
inline double sphere_monomial_integral(const std::vector<int>& a) {
    double lg = 0;
    int tot = 0;
    for (int ai : a) {
        if (ai % 2) return 0;
        lg += std::lgamma(0.5 * (ai + 1));
        tot += ai;
    }
    return 2 * std::exp(lg - std::lgamma(0.5 * (tot + int(a.size()))));
}

inline double sphere_integral(const Poly& p) {
    double s = 0;
    for (const auto& [e, c] : p.terms) s += c * sphere_monomial_integral(e);
    return s;
}

inline double sphere_inner(const Poly& a, const Poly& b) { return sphere_integral(a * b); }

// int over the unit ball
inline double ball_integral(const Poly& p) {
    double s = 0;
    for (const auto& [e, c] : p.terms) s += c * sphere_monomial_integral(e) / (Poly::total(e) + p.n);
    return s;
}

// harmonic part of a homogeneous polynomial of degree k:
// sum_j (-1)^j |y|^{2j} Delta^j p / (2^j j! prod_{i=1}^j (n + 2k - 2 - 2i))
inline Poly harmonic_projection(const Poly& p) {
    const int k = p.degree();
    if (k < 0) return p;
    if (!(p - p.homogeneous_part(k)).is_zero()) throw error(errc::parameter, "harmonic_projection needs a homogeneous polynomial");
    Poly out = p, lap = p;
    double denom = 1;
    for (int j = 1; 2 * j <= k; ++j) {
        lap = lap.laplacian();
        if (lap.is_zero()) break;
        denom *= -2.0 * j * (p.n + 2 * k - 2 - 2 * j);
        out += Poly::norm_squared_power(p.n, j) * lap * (1 / denom);
    }
    return out;
}

// exact quotient q / |y|^2 for q divisible by |y|^2 (lex division with leading term y_1^2);
// terms below tol * scale are treated as rounding noise
inline Poly divide_by_norm_squared(Poly q, double scale = 0, double tol = 1e-11) {
    const int n = q.n;
    const Poly r2 = Poly::norm_squared_power(n, 1);
    if (scale <= 0) scale = std::max(q.max_abs_coefficient(), 1e-300);
    Poly out(n);
    while (!q.is_zero()) {
        auto lead = q.terms.rbegin();
        if (std::abs(lead->second) <= tol * scale) {
            q.terms.erase(std::prev(q.terms.end()));
            continue;
        }
        auto e = lead->first;
        // the lex-largest exponent of a multiple of |y|^2 has e_1 >= 2
        if (e[0] < 2) throw error(errc::precondition, "polynomial is not divisible by |y|^2");
        e[0] -= 2;
        const Poly t = Poly::monomial(e, lead->second);
        out += t;
        q -= t * r2;
    }
    return out;
}

// restriction to the sphere split into solid harmonics: p|_S = sum_k h_k|_S with h_k harmonic homogeneous of degree k
inline std::map<int, Poly> sphere_harmonic_parts(const Poly& p) {
    std::map<int, Poly> parts;
    for (int d = p.degree(); d >= 0; --d) {
        Poly q = p.homogeneous_part(d);
        for (int k = d; k >= 0 && !q.is_zero(); k -= 2) {
            const Poly h = harmonic_projection(q);
            auto [it, fresh] = parts.try_emplace(k, Poly(p.n));
            it->second += h;
            if (k < 2) break;
            q = divide_by_norm_squared(q - h, q.max_abs_coefficient());
        }
    }
    for (auto it = parts.begin(); it != parts.end();)
        it = it->second.is_zero() ? parts.erase(it) : std::next(it);
    return parts;
}

}  // namespace tsl
