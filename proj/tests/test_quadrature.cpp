#include <catch_amalgamated.hpp>

#include <zerores/quadrature.hpp>

#include <numbers>

using namespace zerores;
using Catch::Approx;

TEST_CASE("cutoff profile", "[quadrature]") {
    const CutoffSpec spec{0.25};
    CHECK(cutoff_eval(spec, 0.0) == 1.0);
    CHECK(cutoff_eval(spec, 0.125) == 1.0);
    CHECK(cutoff_eval(spec, 0.25) == 0.0);
    CHECK(cutoff_eval(spec, 0.3) == 0.0);
    CHECK(cutoff_eval(spec, 0.1875) == Approx(0.5));
    double prev = 1.0;
    for (double l = 0.125; l <= 0.25; l += 0.005) {
        const double c = cutoff_eval(spec, l);
        CHECK(c <= prev);
        prev = c;
    }
}

TEST_CASE("Gauss-Legendre integrates polynomials exactly", "[quadrature]") {
    const auto g = gauss_legendre(8);
    for (int p = 0; p <= 15; ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < g.nodes.size(); ++k) s += g.weights[k] * std::pow(g.nodes[k], p);
        CHECK(s == Approx(p % 2 ? 0.0 : 2.0 / (p + 1)).margin(1e-14));
    }
}

TEST_CASE("at t = 0 the rule reproduces ordinary quadrature", "[quadrature]") {
    const CutoffSpec spec{1.0};
    const cplx a = oscillatory_integrate(0.0, [](double l) { return cplx(l * l, 0.0); }, spec);
    // Reference: a fine composite Simpson rule of lambda^2 chi.
    const int N = 20000;
    double ref = 0.0;
    for (int i = 0; i <= N; ++i) {
        const double l = static_cast<double>(i) / N;
        const double w = (i == 0 || i == N) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        ref += w * l * l * cutoff_eval(spec, l);
    }
    ref /= 3.0 * N;
    CHECK(a.real() == Approx(ref).epsilon(1e-10));
    CHECK(std::abs(a.imag()) < 1e-15);
}

TEST_CASE("finer phase panels change values by less than 1e-6", "[quadrature]") {
    const CutoffSpec spec{1.0};
    OscillatoryOptions coarse, fine;
    fine.max_phase = 0.5 * coarse.max_phase;
    for (double t : {10.0, 1e3, 1e5}) {
        auto f = [](double l) { return cplx(l * l * l, 0.5 * l); };
        const cplx a = oscillatory_integrate(t, f, spec, coarse);
        const cplx b = oscillatory_integrate(t, f, spec, fine);
        CHECK(std::abs(a - b) <= 1e-6 * std::abs(b));
    }
}

TEST_CASE("integration by parts decay rates", "[quadrature]") {
    const auto ts = [] {
        std::vector<double> t;
        for (int i = 0; i < 10; ++i) t.push_back(1e2 * std::pow(1e3, i / 9.0));
        return t;
    }();
    for (int k = 0; k <= 4; ++k) {
        const auto fit = ibp_decay_probe(k, ts, CutoffSpec{1.0});
        CHECK(fit.slope == Approx(-0.5 * (k + 1)).margin(0.05));
    }
    CHECK_THROWS_AS(ibp_decay_probe(-1, ts), DomainError);
    CHECK_THROWS_AS(ibp_decay_probe(0, {1.0, 2.0}), DegenerateFit);
}

TEST_CASE("Fresnel value of the plain cutoff integral", "[quadrature]") {
    // int_0^inf e^{it l^2} dl = (1/2) sqrt(pi/t) e^{i pi/4}; the cutoff only adds O(t^-N).
    const double t = 1e4;
    const cplx v = oscillatory_integrate(t, [](double) { return cplx(1.0, 0.0); }, CutoffSpec{1.0});
    const cplx exact = 0.5 * std::sqrt(std::numbers::pi / t) * std::polar(1.0, std::numbers::pi / 4);
    CHECK(std::abs(v - exact) <= 1e-8 * std::abs(exact));
}

TEST_CASE("non-finite integrand is reported with its lambda", "[quadrature]") {
    auto f = [](double l) { return l > 0.5 ? cplx(std::nan(""), 0.0) : cplx(1.0, 0.0); };
    try {
        oscillatory_integrate(10.0, f, CutoffSpec{1.0});
        FAIL("expected NonFiniteSample");
    } catch (const NonFiniteSample& e) {
        CHECK(e.lambda > 0.5);
    }
    CHECK_THROWS_AS(oscillatory_rule(1.0, CutoffSpec{0.0}), DomainError);
}

TEST_CASE("node sets: weights, containment and mirror invariance", "[quadrature]") {
    const int n = 5;
    Eigen::VectorXd c1 = Eigen::VectorXd::Zero(n), c2 = Eigen::VectorXd::Zero(n);
    c1[0] = 0.4;
    c2[0] = -0.4;
    const std::vector<Ball> balls = {{c1, 0.2}, {c2, 0.2}};
    MirrorGroup g;
    g.axes = {0, 2};
    const auto nodes = build_nodes(balls, 400, 11, g);
    CHECK(nodes.group_order() == 4);
    CHECK(nodes.size() % 4 == 0);
    CHECK(nodes.weights.sum() == Approx(balls[0].volume() + balls[1].volume()).epsilon(1e-12));
    for (int i = 0; i < nodes.size(); ++i)
        CHECK((nodes.point(i) - balls[nodes.ball_of[i]].center).norm() < 0.2);
    for (int a = 0; a < nodes.orbit_count(); ++a)
        for (unsigned e = 0; e < 4; ++e)
            CHECK((nodes.point(a * 4 + e) - g.apply(e, nodes.point(a * 4))).norm() == 0.0);
    CHECK(nodes.support_diameter() == Approx(1.2));

    // Same seed, same nodes.
    CHECK(build_nodes(balls, 400, 11, g).points == nodes.points);
    CHECK_THROWS_AS(build_nodes({{c1, 0.5}, {c2, 0.5}}, 400, 1), InvalidGeometry);
    CHECK_THROWS_AS(build_nodes({{c1, 0.2}}, 400, 1, g), InvalidGeometry);
}

TEST_CASE("node quadrature integrates smooth functions", "[quadrature]") {
    const int n = 5;
    const std::vector<Ball> balls = {{Eigen::VectorXd::Zero(n), 1.0}};
    const auto nodes = build_nodes(balls, 20000, 3);
    double s = 0.0;
    for (int i = 0; i < nodes.size(); ++i) s += nodes.weights[i] * nodes.point(i).squaredNorm();
    // int_{|x|<1} |x|^2 = |S^4| / (n + 2)
    CHECK(s == Approx(unit_sphere_area(n) / (n + 2)).epsilon(5e-3));
}

TEST_CASE("convolution bound probe stays bounded", "[quadrature]") {
    const int n = 5;
    std::vector<double> ratios;
    for (double d : {0.1, 1.0, 10.0}) {
        Eigen::VectorXd u1 = Eigen::VectorXd::Zero(n), u2 = Eigen::VectorXd::Zero(n);
        u2[0] = d;
        const auto p = convolution_bound_probe(3.0, 3.0, 2.0, u1, u2, 200000, 5);
        CHECK(p.std_error < 0.1 * p.integral);
        ratios.push_back(p.ratio);
    }
    const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
    CHECK(*hi / *lo < 50.0);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    CHECK_THROWS_AS(convolution_bound_probe(3.0, 2.0, 1.0, z, z, 10000, 1), DomainError);
}
