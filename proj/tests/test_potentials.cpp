#include <catch_amalgamated.hpp>

#include <zerores/potentials.hpp>

using namespace zerores;
using Catch::Approx;

namespace {

EigenPotential reference(DecayClass c) { return build_eigenpair(standard_point_sources(c)); }

double psi_exponent(DecayClass c, int n) {
    return c == DecayClass::generic ? 2.0 - n : (c == DecayClass::first ? 1.0 - n : -1.0 * n);
}

} // namespace

TEST_CASE("weights satisfy the requested moment conditions", "[potentials]") {
    for (auto c : {DecayClass::first, DecayClass::second}) {
        const auto spec = standard_point_sources(c);
        const auto mu = solve_weights(spec);
        double s0 = 0.0, big = 0.0;
        Eigen::VectorXd s1 = Eigen::VectorXd::Zero(spec.dim);
        for (std::size_t i = 0; i < mu.size(); ++i) {
            s0 += mu[i];
            s1 += mu[i] * spec.points[i];
            big = std::max(big, std::abs(mu[i]));
        }
        CHECK(big == Approx(1.0));
        CHECK(std::abs(s0) < 1e-14);
        if (c == DecayClass::second) CHECK(s1.cwiseAbs().maxCoeff() < 1e-14);
        else CHECK(s1.cwiseAbs().maxCoeff() > 0.1);
    }
    CHECK(solve_weights(standard_point_sources(DecayClass::generic)) == std::vector<double>{1.0});
}

TEST_CASE("eigenfunction solves the equation with its potential", "[potentials]") {
    for (auto c : {DecayClass::generic, DecayClass::first, DecayClass::second}) {
        const auto ep = reference(c);
        CHECK(eigen_identity_residual(ep) <= 1e-10);
        // V vanishes off the support and psi is C^1 across each sphere.
        const Eigen::VectorXd far = Eigen::VectorXd::Constant(ep.dim, 3.0);
        CHECK(ep.potential(far) == 0.0);
        for (std::size_t i = 0; i < ep.centers.size(); ++i) {
            const double r = ep.radii[i];
            CHECK(ep.profile(i, r * (1 - 1e-12)) == Approx(ep.profile(i, r)).epsilon(1e-9));
            CHECK(ep.profile_derivative(i, r * (1 - 1e-12)) == Approx(ep.profile_derivative(i, r)).epsilon(1e-9));
        }
    }
}

TEST_CASE("moment ladder separates the classes", "[potentials]") {
    const auto g = moment_integrals(reference(DecayClass::generic));
    const auto f = moment_integrals(reference(DecayClass::first));
    const auto s = moment_integrals(reference(DecayClass::second));
    CHECK(std::abs(g.zeroth) > 1e3 * g.quadrature_error);
    CHECK(std::abs(f.zeroth) <= f.quadrature_error);
    CHECK(f.first.cwiseAbs().maxCoeff() > 1e3 * f.quadrature_error);
    CHECK(std::abs(s.zeroth) <= s.quadrature_error);
    CHECK(s.first.cwiseAbs().maxCoeff() <= s.quadrature_error);
}

TEST_CASE("eigenfunction decay follows the class", "[potentials]") {
    for (auto c : {DecayClass::generic, DecayClass::first, DecayClass::second}) {
        const auto ep = reference(c);
        const double d = ep.support_diameter();
        const auto fit = decay_slope(ep, log_spaced(4 * d, 40 * d, 8));
        CHECK(fit.slope == Approx(psi_exponent(c, 5)).margin(0.1));
    }
    const auto ep = reference(DecayClass::generic);
    CHECK_THROWS_AS(decay_slope(ep, {0.1, 1.0}), DomainError);
}

TEST_CASE("L2 norm: closed form for one ball", "[potentials]") {
    // psi = -c0 p(r): ||psi||^2 = c0^2 |S^4| (int_0^rho p^2 r^4 dr + rho^{-1}) at n = 5.
    const auto ep = reference(DecayClass::generic);
    const double rho = ep.radii[0], c0 = green_constant(5);
    const auto& k = ep.cont[0];
    auto mono = [rho](int p) { return std::pow(rho, p + 5) / (p + 5); };
    const double inner = k.a * k.a * mono(0) + 2 * k.a * k.b * mono(2) + (k.b * k.b + 2 * k.a * k.c) * mono(4) +
                         2 * k.b * k.c * mono(6) + k.c * k.c * mono(8);
    const double expect = c0 * c0 * unit_sphere_area(5) * (inner + 1.0 / rho);
    CHECK(l2_norm_squared(ep) == Approx(expect).epsilon(1e-9));
}

TEST_CASE("scaling a geometry", "[potentials]") {
    const auto base = standard_point_sources(DecayClass::first);
    const auto small = scaled(base, 1e-3);
    const auto a = build_eigenpair(base), b = build_eigenpair(small);
    CHECK(b.support_diameter() == Approx(1e-3 * a.support_diameter()));
    REQUIRE(b.mu.size() == a.mu.size());
    for (std::size_t i = 0; i < a.mu.size(); ++i) CHECK(b.mu[i] == Approx(a.mu[i]).margin(1e-12));
    CHECK_THROWS_AS(scaled(base, 0.0), InvalidGeometry);
    CHECK_THROWS_AS(scaled(base, -1.0), InvalidGeometry);
}

TEST_CASE("mirror groups and class names", "[potentials]") {
    CHECK(parity_mirror_group(DecayClass::generic).order() == 1);
    CHECK(parity_mirror_group(DecayClass::first).axes == std::vector<int>{0});
    CHECK(parity_mirror_group(DecayClass::second).axes == std::vector<int>{0, 1});
    CHECK(full_mirror_group(5).order() == 32);
    CHECK(decay_class_from_string("first") == DecayClass::first);
    CHECK(to_string(DecayClass::second) == "second");
    CHECK_THROWS_AS(decay_class_from_string("third"), ConfigError);
}

TEST_CASE("invalid source geometries", "[potentials]") {
    PointSourceSpec s;
    s.dim = 5;
    CHECK_THROWS_AS(build_eigenpair(s), InvalidGeometry);
    // A single source cannot have a vanishing zeroth moment.
    s.points = {Eigen::VectorXd::Zero(5)};
    s.radii = {0.2};
    s.moment_order = 0;
    CHECK_THROWS_AS(build_eigenpair(s), InvalidGeometry);
}
