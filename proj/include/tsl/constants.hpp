#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "error.hpp"

namespace tsl {

inline constexpr double pi = 3.14159265358979323846;

struct TraceParams {
    int n = 3;
    int m = 1;
    double alpha = 1.0;

    int N() const { return n - m; }
    double beta() const { return alpha - 0.5 * m; }
    double s() const { return 2.0 * (n - m) / (n - 2.0 * alpha); }

    void validate() const { check(true); }
    // the reduction principle itself only needs alpha > m/2; the sharp constant also needs alpha < n/2
    void validate_reduction() const { check(false); }

private:
    void check(bool sobolev) const {
        std::ostringstream msg;
        if (n < 1) msg << "n = " << n << " must be >= 1; ";
        if (m < 0 || m >= n) msg << "need 0 <= m < n, got m = " << m << ", n = " << n << "; ";
        if (sobolev && !(alpha > 0.5 * m && alpha < 0.5 * n))
            msg << "need m/2 < alpha < n/2, got " << 0.5 * m << " < " << alpha << " < " << 0.5 * n
                << " violated; ";
        if (!sobolev && !(alpha > 0.5 * m)) msg << "need alpha > m/2, got alpha = " << alpha << "; ";
        const auto text = msg.str();
        if (!text.empty()) throw error(errc::parameter, text.substr(0, text.size() - 2));
    }
};

struct EscobarParams {
    int n = 3;

    explicit EscobarParams(int dim) : n(dim) {
        if (n < 3) throw error(errc::parameter, "Escobar exponents need n >= 3");
    }
    double p() const { return double(n) / (n - 2); }
    double two_dagger() const { return 2.0 * (n - 1) / (n - 2); }
    double kappa(int k) const { return 1.0 + 2.0 * k / (n - 2); }
};

namespace detail {
// every Gamma argument below is positive on the valid parameter domain
inline double lg(double x) { return std::lgamma(x); }
}  // namespace detail

inline double sharp_trace_constant(const TraceParams& prm) {
    prm.validate();
    const double n = prm.n, m = prm.m, a = prm.alpha;
    using detail::lg;
    const double log_front = 2 * a * std::log(2.0) + a * std::log(pi) + lg(a) + lg(n / 2 + a - m) -
                             lg(n / 2 - a) - lg(a - m / 2);
    const double log_base = lg(n - m) - lg((n - m) / 2);
    return std::exp(log_front + (m - 2 * a) / (n - m) * log_base);
}

inline double reduction_constant(const TraceParams& prm) {
    prm.validate_reduction();
    if (prm.m == 0) return 1.0;
    const double m = prm.m, a = prm.alpha;
    return std::exp(m * std::log(2.0) + 0.5 * m * std::log(pi) + std::lgamma(a) -
                    std::lgamma((2 * a - m) / 2));
}

// C1(m, alpha) = int_{R^m} (1+|x|^2)^{-alpha} dx
inline double c1_constant(int m, double alpha) {
    if (m < 0) throw error(errc::parameter, "c1_constant: m must be >= 0");
    if (!(alpha > 0.5 * m))
        throw error(errc::domain, "c1_constant: integral diverges unless alpha > m/2");
    if (m == 0) return 1.0;
    return std::exp(0.5 * m * std::log(pi) + std::lgamma(alpha - 0.5 * m) - std::lgamma(alpha));
}

inline double escobar_constant(int n) {
    if (n < 3) throw error(errc::parameter, "escobar_constant needs n >= 3");
    return 0.5 * sharp_trace_constant({n, 1, 1.0});
}

struct BeBounds {
    double lower;
    double upper;
};

inline BeBounds be_bounds(const TraceParams& prm, std::optional<double> k_external = {}) {
    prm.validate();
    const double n = prm.n, m = prm.m, a = prm.alpha;
    double lo = std::min(1.0, std::pow(2.0, (n + 2 * a - 2 * m) / (n - m)) - 2.0);
    if (k_external) {
        if (!(*k_external > 0)) throw error(errc::parameter, "be_bounds: K must be positive");
        lo = std::min(lo, *k_external);
    }
    double up;
    if (prm.N() >= 2)
        up = std::min((4 * a - 2 * m) / (n + 2 * a + 2 - 2 * m), 2.0 - std::pow(2.0, (n - 2 * a) / (n - m)));
    else
        up = (4 * a - 2 * m) / (4 + 2 * a);
    return {lo / 4, up};
}

inline long long binom_or_zero(long long a, long long b) {
    if (b < 0 || a < b) return 0;
    long long r = 1;
    for (long long i = 1; i <= b; ++i) r = r * (a - b + i) / i;
    return r;
}

struct SpectralConstants {
    double kappa_k;
    long long multiplicity;
    double cp_upper;
};

inline long long harmonic_multiplicity(int n, int k) {
    return binom_or_zero(n + k - 1, n - 1) - binom_or_zero(n + k - 3, n - 1);
}

inline SpectralConstants spectral_constants(int n, int k) {
    if (n < 3 || k < 0) throw error(errc::parameter, "spectral_constants needs n >= 3, k >= 0");
    return {EscobarParams(n).kappa(k), harmonic_multiplicity(n, k), 2.0 / (n + 2)};
}

// surface area of the unit sphere S^{d-1} in R^d
inline double sphere_area(int d) { return 2 * std::pow(pi, 0.5 * d) / std::tgamma(0.5 * d); }

inline double ball_volume(int d) { return std::pow(pi, 0.5 * d) / std::tgamma(0.5 * d + 1); }

}  // namespace tsl
