#include <catch_amalgamated.hpp>

#include <zerores/fit.hpp>
#include <zerores/kernels.hpp>

#include <boost/math/special_functions/hankel.hpp>

#include <numbers>

using namespace zerores;
using Catch::Approx;

TEST_CASE("n = 3 kernel is the spherical wave", "[kernels]") {
    for (double l : {0.0, 0.3, 2.0})
        for (double r : {0.1, 1.0, 7.5}) {
            const cplx expect = std::exp(cplx(0.0, l * r)) / (4.0 * std::numbers::pi * r);
            CHECK(std::abs(resolvent_kernel(3, l, r) - expect) <= 1e-14 * std::abs(expect));
        }
}

TEST_CASE("kernels agree with the Hankel representation", "[kernels]") {
    for (int n : {5, 7, 9}) {
        const double nu = 0.5 * (n - 2);
        for (double l : {0.05, 0.5, 3.0})
            for (double r : {0.2, 2.0, 20.0}) {
                const cplx oracle = cplx(0.0, 0.25) * std::pow(l / (2.0 * std::numbers::pi * r), nu) *
                                    boost::math::cyl_hankel_1(nu, l * r);
                CHECK(std::abs(resolvent_kernel(n, l, r) - oracle) <= 1e-10 * std::abs(oracle));
            }
    }
}

TEST_CASE("incoming kernel is the conjugate of the outgoing one", "[kernels]") {
    for (int n : {3, 5, 7})
        for (double l : {0.01, 0.7})
            for (double r : {0.5, 4.0})
                CHECK(resolvent_kernel(n, l, r, Side::minus) == std::conj(resolvent_kernel(n, l, r, Side::plus)));
}

TEST_CASE("series coefficients are real and start at the Green constant", "[kernels]") {
    for (int n : {5, 7}) {
        const auto s = make_kernel_series(n);
        REQUIRE(s.coefficients.size() == static_cast<std::size_t>(n + 3));
        CHECK(s.coefficients[0] == Approx(green_constant(n)));
        const double c0 = std::tgamma(0.5 * n - 1.0) / (4.0 * std::pow(std::numbers::pi, 0.5 * n));
        CHECK(green_constant(n) == Approx(c0).epsilon(1e-14));
        for (int j = 0; j <= n + 2; ++j) {
            const cplx f = s.term_factor(j, Side::plus);
            if (j % 2 == 0) CHECK(f.imag() == 0.0);
            else CHECK(f.real() == 0.0);
            CHECK(s.term_factor(j, Side::minus) == std::conj(f));
        }
        // Odd orders below n - 2 vanish: the kernel is smooth in lambda there.
        for (int j = 1; j < n - 2; j += 2) CHECK(s.coefficients[j] == 0.0);
        CHECK(s.coefficients[n - 2] != 0.0);
    }
}

TEST_CASE("truncation error shrinks at the next order", "[kernels]") {
    const int n = 5;
    for (int order : {n - 2, n - 1, n}) {
        std::vector<double> ls, es;
        for (double l : log_spaced(1e-3, 1e-1, 10)) {
            ls.push_back(l);
            es.push_back(std::abs(expansion_error(n, l, 1.0, order)));
        }
        CHECK(fit_power_law(ls, es).slope >= order + 1 - 0.05);
    }
}

TEST_CASE("lambda derivative recurrence", "[kernels]") {
    for (int n : {5, 7, 9}) {
        const cplx k = recurrence_constant(n);
        CHECK(std::abs(k.imag()) <= 1e-12 * std::abs(k));
        for (double l : {0.01, 0.3, 2.0})
            for (double r : {0.5, 3.0}) {
                const double scale = std::abs(kernel_lambda_derivative_over_lambda(n, l, r));
                CHECK(recurrence_residual(n, l, r) <= 1e-10 * scale);
            }
    }
    // Against a centred difference of the kernel itself.
    const int n = 5;
    const double l = 0.4, r = 1.3, h = 1e-5;
    const cplx fd = (resolvent_kernel(n, l + h, r) - resolvent_kernel(n, l - h, r)) / (2.0 * h * l);
    CHECK(std::abs(fd - recurrence_constant(n) * resolvent_kernel(n - 2, l, r)) <= 1e-6 * std::abs(fd));
}

TEST_CASE("imaginary part keeps relative accuracy at small lambda r", "[kernels]") {
    const int n = 5;
    for (double z : {1e-6, 1e-3, 0.1}) {
        const double im = resolvent_kernel_imag(n, z, 1.0);
        const double leading = series_coefficient(n, n - 2) * std::pow(z, n - 2);
        CHECK(im == Approx(leading).epsilon(z * z));
    }
    CHECK(resolvent_kernel_imag(n, 0.2, 0.0) == Approx(series_coefficient(n, n - 2) * std::pow(0.2, n - 2)));
}

TEST_CASE("kernel argument checks", "[kernels]") {
    CHECK_THROWS_AS(resolvent_kernel(4, 1.0, 1.0), UnsupportedDimension);
    CHECK_THROWS_AS(resolvent_kernel(11, 1.0, 1.0), UnsupportedDimension);
    CHECK_THROWS_AS(resolvent_kernel(5, 1.0, 0.0), DomainError);
    CHECK_THROWS_AS(resolvent_kernel(5, -1.0, 1.0), DomainError);
    CHECK_THROWS_AS(series_coefficient(5, 8), DomainError);
    CHECK_THROWS_AS(recurrence_constant(3), UnsupportedDimension);
}
