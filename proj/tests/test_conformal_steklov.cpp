#include <gtest/gtest.h>

#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "halfspace_oracle.hpp"
#include "tsl/conformal_steklov.hpp"

using namespace tsl;

namespace {

std::vector<double> random_ball_point(std::mt19937_64& rng, int n, double rmax = 0.95) {
    std::normal_distribution<double> G;
    std::uniform_real_distribution<double> U(0, 1);
    std::vector<double> y(n);
    double r = 0;
    for (auto& v : y) {
        v = G(rng);
        r += v * v;
    }
    const double s = rmax * std::pow(U(rng), 1.0 / n) / std::sqrt(r);
    for (auto& v : y) v *= s;
    return y;
}

std::vector<double> random_sphere_point(std::mt19937_64& rng, int n) {
    auto y = random_ball_point(rng, n);
    double r = 0;
    for (double v : y) r += v * v;
    for (auto& v : y) v /= std::sqrt(r);
    return y;
}

Poly random_poly(std::mt19937_64& rng, int n, int deg) {
    std::normal_distribution<double> G;
    Poly p(n);
    for (int k = 0; k <= deg; ++k)
        for (const auto& e : monomial_exponents(n, k)) p += Poly::monomial(e, G(rng));
    return p;
}

// generic U[0,1](x,t) for forward-mode oracles
template <class T>
T U01(int n, const std::vector<T>& xt) {
    const std::vector<double> z(n - 1, 0.0);
    return bubble_value<T>(n, z, T(1.0), std::vector<T>(xt.begin(), xt.end() - 1), xt.back());
}

}  // namespace

TEST(Poly, Algebra) {
    const Poly y0 = Poly::variable(3, 0), y1 = Poly::variable(3, 1), y2 = Poly::variable(3, 2);
    const Poly p = y0 * y0 - y1 * y1 + 3.0 * y0 * y2;
    EXPECT_TRUE(p.laplacian().is_zero());
    EXPECT_EQ((y0 + y1).pow(3).degree(), 3);
    EXPECT_DOUBLE_EQ((y0 + y1).pow(3)({1, 2, 0}), 27);
    EXPECT_DOUBLE_EQ(p.derivative(2)({1, 5, 7}), 3);
    const Poly r2 = Poly::norm_squared_power(3, 1);
    const Poly q = r2 * p + 2.0 * r2 * r2;
    const Poly back = divide_by_norm_squared(q);
    EXPECT_LT((back - p - 2.0 * r2).max_abs_coefficient(), 1e-14);
    EXPECT_THROW(divide_by_norm_squared(y0), tsl::error);
}

TEST(Poly, HarmonicProjectionAndSphereParts) {
    std::mt19937_64 rng(3);
    for (int n : {3, 4, 5}) {
        for (int trial = 0; trial < 5; ++trial) {
            const Poly p = random_poly(rng, n, 6);
            for (int d = 0; d <= 6; ++d)
                EXPECT_LT(harmonic_projection(p.homogeneous_part(d)).laplacian().max_abs_coefficient(), 1e-11);
            const auto parts = sphere_harmonic_parts(p);
            for (const auto& [k, h] : parts) {
                EXPECT_EQ(h.degree(), k);
                EXPECT_LT(h.laplacian().max_abs_coefficient(), 1e-10);
            }
            for (int s = 0; s < 10; ++s) {
                const auto y = random_sphere_point(rng, n);
                double sum = 0;
                for (const auto& [k, h] : parts) sum += h(y);
                EXPECT_NEAR(sum, p(y), 1e-11 * (1 + std::abs(p(y))));
            }
        }
    }
}

TEST(Poly, SphereIntegralsAgainstNestedQuadrature) {
    using boost::math::quadrature::gauss_kronrod;
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> E(0, 4);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> a{2 * E(rng), 2 * E(rng), E(rng)};
        // spherical coordinates on S^2
        const double q = gauss_kronrod<double, 31>::integrate(
            [&](double th) {
                return gauss_kronrod<double, 31>::integrate(
                    [&](double ph) {
                        const double y[3] = {std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)};
                        return std::pow(y[0], a[0]) * std::pow(y[1], a[1]) * std::pow(y[2], a[2]) * std::sin(th);
                    },
                    0, 2 * pi, 5, 1e-14);
            },
            0, pi, 5, 1e-14);
        EXPECT_NEAR(sphere_monomial_integral(a), q, 1e-12);
    }
    EXPECT_NEAR(sphere_monomial_integral({0, 0, 0, 0}), 2 * pi * pi, 1e-13);
    EXPECT_NEAR(ball_integral(Poly::constant(3, 1)), 4 * pi / 3, 1e-14);
}

TEST(Conformal, SphereRuleIsExact) {
    std::mt19937_64 rng(5);
    for (int n : {3, 4, 5}) {
        const int deg = n == 5 ? 6 : 10;
        const auto R = sphere_rule(n, deg);
        for (int trial = 0; trial < 5; ++trial) {
            const Poly p = random_poly(rng, n, deg);
            double s = 0;
            for (std::size_t i = 0; i < R.nodes.size(); ++i) s += R.weights[i] * p(R.nodes[i]);
            EXPECT_NEAR(s, sphere_integral(p), 1e-11 * (1 + std::abs(s)));
        }
    }
}

TEST(Conformal, MapPoints) {
    const auto a = map_points(MapDirection::ball_to_half, {{0, 0, 0}, {0, 0, 1}});
    EXPECT_NEAR(a[0][2], 1, 1e-15);
    EXPECT_NEAR(a[0][0], 0, 1e-15);
    EXPECT_NEAR(a[1][2], 0, 1e-15);
    std::mt19937_64 rng(1);
    double worst = 0;
    for (int n : {3, 4}) {
        for (int i = 0; i < 1000; ++i) {
            const auto y = random_ball_point(rng, n, 1.0);
            const auto back = map_points(MapDirection::half_to_ball, map_points(MapDirection::ball_to_half, {y}))[0];
            for (int k = 0; k < n; ++k) worst = std::max(worst, std::abs(back[k] - y[k]));
        }
        for (int i = 0; i < 50; ++i) {
            const auto s = random_sphere_point(rng, n);
            EXPECT_NEAR(ball_to_half(s).back(), 0, 1e-14);
        }
    }
    EXPECT_LE(worst, 1e-12);
    EXPECT_THROW(map_points(MapDirection::ball_to_half, {{0.8, 0.8, 0}}), tsl::error);
    EXPECT_THROW(map_points(MapDirection::half_to_ball, {{0, 0, -0.1}}), tsl::error);
    EXPECT_THROW(map_points(MapDirection::ball_to_half, {{0, 0, -1}}), tsl::error);
}

TEST(Conformal, TransportIdentities) {
    std::mt19937_64 rng(2);
    for (int n : {3, 4}) {
        const double c = 0.5 * (n - 2);
        const std::vector<double> z0(n - 1, 0.0);
        const auto FU = transport_to_ball(n, [&](const std::vector<double>& xt) {
            return bubble_value<double>(n, z0, 1.0, std::vector<double>(xt.begin(), xt.end() - 1), xt.back());
        });
        const auto Fdl = transport_to_ball(n, [&](const std::vector<double>& xt) {
            return eval_bubble(Bubble(z0, 1.0, n), std::vector<double>(xt.begin(), xt.end() - 1), xt.back()).dlambda;
        });
        const auto Fdz = transport_to_ball(n, [&](const std::vector<double>& xt) {
            return eval_bubble(Bubble(z0, 1.0, n), std::vector<double>(xt.begin(), xt.end() - 1), xt.back()).dz[0];
        });
        for (int i = 0; i < 20; ++i) {
            const auto y = random_ball_point(rng, n);
            EXPECT_NEAR(FU(y), 1, 1e-12);
            // direct differentiation gives +(n-2)/2 y; only the span {y_i} matters downstream
            EXPECT_NEAR(Fdl(y), c * y[n - 1], 1e-10);
            EXPECT_NEAR(Fdz(y), c * y[0], 1e-10);
        }
    }
    // int_{R^2} U^4 = ((n-2)/2)^{n-1} |S^2| = pi
    EXPECT_NEAR(std::pow(0.5, 2) * sphere_area(3), pi, 1e-14);
    const double direct = oracle::boundary_integral(3, [](const std::vector<double>& x) {
        return std::pow(1 + x[0] * x[0] + x[1] * x[1], -2.0);
    });
    EXPECT_NEAR(direct, pi, 1e-10);
}

TEST(Conformal, TransportPreservesHarmonicity) {
    std::mt19937_64 rng(4);
    const int n = 3;
    const Poly Y = Poly::variable(3, 0) * Poly::variable(3, 1) * Poly::variable(3, 2);
    const auto rho = transport_to_half(n, [&](const std::vector<double>& y) { return Y(y); });
    const auto notharm = transport_to_half(n, [](const std::vector<double>& y) { return y[0] * y[0]; });
    const Bubble b({0.3, -0.2}, 1.7, n);
    const auto Fb = transport_to_ball(n, [&](const std::vector<double>& xt) {
        return eval_bubble(b, std::vector<double>(xt.begin(), xt.end() - 1), xt.back()).value;
    });
    double worst = 0, smallest_bad = 1e300;
    for (int i = 0; i < 20; ++i) {
        std::uniform_real_distribution<double> X(-1.5, 1.5), T(0.2, 2);
        const std::vector<double> p{X(rng), X(rng), T(rng)};
        worst = std::max(worst, std::abs(laplacian_probe(rho, p)));
        smallest_bad = std::min(smallest_bad, std::abs(laplacian_probe(notharm, p)));
        worst = std::max(worst, std::abs(laplacian_probe(Fb, random_ball_point(rng, n, 0.9))));
    }
    EXPECT_LT(worst, 1e-6 * 100);
    EXPECT_GT(smallest_bad, 1e-3);
}

TEST(Conformal, IsometryAndWeightIdentities) {
    // H^1 energy on the half-space against the ball energy of the transported function
    std::mt19937_64 rng(8);
    for (int n : {3, 4}) {
        const double c = 0.5 * (n - 2), p = double(n) / (n - 2);
        const int cases = n == 3 ? 10 : 3;
        for (int trial = 0; trial < cases; ++trial) {
            const Poly P = random_poly(rng, n, 2 + trial % 2);
            const auto parts = sphere_harmonic_parts(P);
            Poly H(n);  // harmonic extension of P|_S
            for (const auto& [k, h] : parts) H += h;
            auto phi = [&](const auto& xt) {
                using T = std::decay_t<decltype(xt[0])>;
                return U01<T>(n, xt) * H.eval(half_to_ball(xt));
            };
            const double lhs = oracle::halfspace_integral(n, [&](const std::vector<double>& q) { return oracle::grad_squared(phi, q); },
                                                          n == 3 ? 64 : 40);
            Poly grad2(n);
            for (int i = 0; i < n; ++i) grad2 += H.derivative(i) * H.derivative(i);
            const double rhs = std::pow(c, n - 2) * (ball_integral(grad2) + c * sphere_inner(H, H));
            EXPECT_NEAR(lhs, rhs, 1e-8 * rhs) << "n = " << n << " trial " << trial;

            const double w_lhs = oracle::boundary_integral(n, [&](const std::vector<double>& x) {
                std::vector<double> xt(x);
                xt.push_back(0);
                const double u = U01<double>(n, xt);
                const double f = phi(xt);
                return std::pow(u, p - 1) * f * f;
            }, n == 3 ? 96 : 48);
            EXPECT_NEAR(w_lhs, std::pow(c, n - 1) * sphere_inner(H, H), 1e-8 * w_lhs);
        }
    }
}

TEST(Steklov, BasisInvariants) {
    for (int n : {3, 4, 5}) {
        const int K = n == 3 ? 8 : (n == 4 ? 5 : 3);
        const auto B = build_basis(n, K);
        const auto R = sphere_rule(n, 2 * K + 2);
        for (int k = 0; k <= K; ++k) {
            ASSERT_EQ(double(B.degrees[k].size()), double(harmonic_multiplicity(n, k)));
            for (std::size_t i = 0; i < B.degrees[k].size(); ++i) {
                const auto& Yi = B.degrees[k][i];
                EXPECT_LE(Yi.laplacian().max_abs_coefficient(), 1e-12 * 1000);
                EXPECT_EQ(Yi.degree(), k);
                for (std::size_t j = 0; j <= i; ++j) {
                    // Gram matrix by the product rule, independent of the monomial formula
                    double g = 0;
                    for (std::size_t q = 0; q < R.nodes.size(); ++q) g += R.weights[q] * Yi(R.nodes[q]) * B.degrees[k][j](R.nodes[q]);
                    EXPECT_NEAR(g, i == j ? 1.0 : 0.0, 1e-10);
                }
            }
        }
    }
    const auto B = build_basis(3, 2);
    EXPECT_EQ(B.degrees[0].size(), 1u);
    EXPECT_EQ(B.degrees[1].size(), 3u);
    EXPECT_EQ(B.degrees[2].size(), 5u);
    // degree one spans the coordinate functions
    for (int i = 0; i < 3; ++i) {
        const Poly yi = Poly::variable(3, i);
        double s = 0;
        for (const auto& Y : B.degrees[1]) s += std::pow(sphere_inner(yi, Y), 2);
        EXPECT_NEAR(s, sphere_inner(yi, yi), 1e-13);
    }
    const auto j = to_json(B);
    EXPECT_EQ(j["degrees"].size(), 3u);
    EXPECT_EQ(j["degrees"][2].size(), 5u);
    EXPECT_THROW(build_basis(2, 2), tsl::error);
    EXPECT_THROW(build_basis(3, 9), tsl::error);
}

TEST(Steklov, Decomposition) {
    const auto B = build_basis(3, 4);
    const Poly y0 = Poly::variable(3, 0), y1 = Poly::variable(3, 1), y2 = Poly::variable(3, 2);
    const Poly f = Poly::constant(3, 1) + y2 + y0 * y1;
    const auto D = steklov_decompose(f, B);
    EXPECT_NEAR(D.residual_l2, 0, 1e-7);
    double l2[5] = {};
    for (int k = 0; k <= 4; ++k)
        for (double c : D.components[k]) l2[k] += c * c;
    EXPECT_NEAR(l2[0], 4 * pi, 1e-12);
    EXPECT_NEAR(l2[1], 4 * pi / 3, 1e-12);
    EXPECT_NEAR(l2[2], 4 * pi / 15, 1e-12);
    EXPECT_LT(l2[3] + l2[4], 1e-24);
    EXPECT_FALSE(D.truncation_warning);

    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const Poly p = random_poly(rng, 3, 3);
        const auto d = steklov_decompose(p, B);
        double worst = 0;
        for (int s = 0; s < 20; ++s) {
            const auto y = random_sphere_point(rng, 3);
            double rec = 0;
            for (int k = 0; k <= 4; ++k)
                for (std::size_t i = 0; i < B.degrees[k].size(); ++i) rec += d.components[k][i] * B.degrees[k][i](y);
            worst = std::max(worst, std::abs(rec - p(y)));
        }
        EXPECT_LE(worst, 1e-10);
        // Parseval with the exact H^1 energy of the harmonic extension as probe
        const auto parts = sphere_harmonic_parts(p);
        double energy = 0;
        for (const auto& [k, h] : parts) energy += steklov_energy_weight(3, k) * sphere_inner(h, h);
        const auto dp = steklov_decompose(p, B, energy);
        EXPECT_NEAR(dp.captured_h1_sq() + std::pow(*dp.interior_norm, 2) + std::pow(dp.truncation_residual, 2), energy, 1e-8 * energy);
        EXPECT_NEAR(*dp.interior_norm, 0, 1e-6 * std::sqrt(energy));
    }

    // truncation warning when the basis is too short
    const auto B1 = build_basis(3, 1);
    EXPECT_TRUE(steklov_decompose(y0 * y1 * y2, B1).truncation_warning);
}

TEST(Steklov, TangentDirectionsStayInLowDegrees) {
    const int n = 3;
    const auto B = build_basis(n, 4);
    const std::vector<double> z0(n - 1, 0.0);
    const double eps = 0.3;
    const auto f = [&](const std::vector<double>& xt) {
        const auto e = eval_bubble(Bubble(z0, 1.0, n), std::vector<double>(xt.begin(), xt.end() - 1), xt.back());
        return e.value + eps * (e.dlambda + e.dz[0] - 0.5 * e.dz[1]);
    };
    const auto D = steklov_decompose(transport_to_ball(n, f), B);
    double high = 0, low = 0;
    for (int k = 0; k <= 4; ++k)
        for (double c : D.components[k]) (k < 2 ? low : high) += c * c;
    EXPECT_LT(std::sqrt(high), 1e-10 * std::sqrt(low));
    EXPECT_LT(D.residual_l2, 1e-6);
}

TEST(Steklov, SpectralGapQuotient) {
    const auto B = build_basis(3, 3);
    for (const auto& Y : B.degrees[2]) EXPECT_NEAR(spectral_gap_quotient(Y), 5, 1e-9);
    for (const auto& Y : B.degrees[3]) EXPECT_NEAR(spectral_gap_quotient(Y), 7, 1e-9);
    const double mixed = spectral_gap_quotient(B.degrees[2][1] + B.degrees[3][2]);
    EXPECT_GT(mixed, 5 + 1e-3);
    EXPECT_LT(mixed, 7 - 1e-3);
    EXPECT_NEAR(mixed, 6, 1e-12);
    EXPECT_THROW(spectral_gap_quotient(B.degrees[2][0] + B.degrees[1][0] * 1e-3), tsl::error);

    // independent: half-space quadrature of both sides for rho = F^{-1}[y1 y2]
    const int n = 3;
    auto rho = [&](const auto& xt) {
        using T = std::decay_t<decltype(xt[0])>;
        const auto y = half_to_ball(xt);
        return U01<T>(n, xt) * y[0] * y[1];
    };
    const double num = oracle::halfspace_integral(n, [&](const std::vector<double>& q) { return oracle::grad_squared(rho, q); }, 64);
    const double den = oracle::boundary_integral(n, [&](const std::vector<double>& x) {
        const std::vector<double> xt{x[0], x[1], 0.0};
        const double u = U01<double>(n, xt), r = rho(xt);
        return u * u * r * r;
    }, 96);
    EXPECT_NEAR(num / den, 5, 1e-9);

    // the half-space entry point
    const PointFunction rh = [&](const std::vector<double>& xt) { return rho(xt); };
    EXPECT_NEAR(spectral_gap_quotient(rh, B), 5, 1e-9);
}

TEST(Steklov, GapHoldsOnRandomOrthogonalDirections) {
    std::mt19937_64 rng(2024);
    const auto B = build_basis(3, 1);
    double worst = 1e300;
    for (int trial = 0; trial < 10000; ++trial) {
        Poly p = random_poly(rng, 3, 2 + trial % 3);
        for (int k = 0; k <= 1; ++k)
            for (const auto& Y : B.degrees[k]) p -= Y * sphere_inner(p, Y);
        worst = std::min(worst, spectral_gap_quotient(p));
    }
    EXPECT_GE(worst, 5 - 1e-9);
}
