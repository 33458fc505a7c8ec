#include <catch_amalgamated.hpp>

#include <zerores/evolution.hpp>

#include <random>

using namespace zerores;
using Catch::Approx;

namespace {

struct Setup {
    EigenPotential ep;
    DiscretePotential dp;
    Calibration cal;
    SpectralObjects so;
};

Setup setup(DecayClass c, int per_ball = 400) {
    Setup s;
    s.ep = build_eigenpair(standard_point_sources(c));
    const auto nodes = build_nodes(s.ep.balls(), per_ball, 1, parity_mirror_group(c));
    const auto raw = discretize(s.ep, nodes);
    s.cal = calibrate_coupling(raw, s.ep);
    s.dp = with_coupling(raw, s.cal.coupling);
    s.so = compute_spectral_chain(s.dp);
    return s;
}

Mat<cplx> random_matrix(int m, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Mat<cplx> A(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) A(i, j) = cplx(g(rng), g(rng));
    return A;
}

} // namespace

TEST_CASE("regularised inverse matches the plain inverse", "[operators]") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 12;
        const Mat<cplx> A = random_matrix(m, rng);
        const Mat<cplx> Q = Eigen::HouseholderQR<Mat<cplx>>(random_matrix(m, rng)).householderQ() *
                            Mat<cplx>::Identity(m, 2);
        const Mat<cplx> X = jn_inverse_range<cplx>(A, Q);
        CHECK((X - A.inverse()).norm() <= 1e-10 * A.inverse().norm());
        const Mat<cplx> P = Q * Q.adjoint();
        CHECK((jn_inverse<cplx>(A, P) - X).norm() <= 1e-10 * X.norm());
    }
}

TEST_CASE("regularised inverse refuses a singular operator", "[operators]") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 10;
        Mat<cplx> A = random_matrix(m, rng);
        Vec<cplx> z = random_matrix(m, rng).col(0).normalized();
        A = A - (A * z) * z.adjoint(); // A z = 0
        const Mat<cplx> Q = z;
        CHECK_THROWS_AS(jn_inverse_range<cplx>(A, Q), SingularOperator);
    }
    CHECK_THROWS_AS(jn_inverse<double>(Mat<double>::Identity(3, 3), Mat<double>::Identity(2, 2)), DomainError);
}

TEST_CASE("sector transform is orthogonal and round-trips", "[operators]") {
    Vec<double> f = Vec<double>::LinSpaced(24, -1.0, 2.0);
    const Mat<double> sec = to_sectors<double>(f, 4);
    CHECK(sec.rows() == 6);
    CHECK(sec.cols() == 4);
    CHECK(sec.norm() == Approx(f.norm()));
    CHECK((from_sectors<double>(sec) - f).norm() < 1e-14);
}

TEST_CASE("generic reference potential: S1, calibration and the chain", "[operators]") {
    const auto s = setup(DecayClass::generic);
    CHECK(s.cal.coupling == Approx(1.0).margin(0.05));
    CHECK(s.cal.alignment > 0.99);
    CHECK(s.so.s1.rank == 1);
    CHECK_FALSE(s.so.s1.rank_warning);
    CHECK(s.so.s1.gap_ratio >= 10.0);

    std::vector<Eigen::VectorXd> probes;
    for (double r : {1.0, 2.0, 4.0}) {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(5);
        x[0] = r;
        x[2] = 0.5 * r;
        probes.push_back(x);
    }
    const auto c = spectral_checks(s.so, s.dp, s.ep, probes);
    // Algebraic identities of the discrete chain hold to rounding.
    CHECK(c.s1_left <= 1e-8);
    CHECK(c.s1_right <= 1e-8);
    CHECK(c.d1_support <= 1e-10);
    CHECK(c.pe_idempotence <= 1e-8);
    CHECK(c.pe_symmetry <= 1e-10);
    // Continuum identities hold to discretisation accuracy.
    CHECK(c.pe_psi <= 0.05);
    CHECK(c.quadratic_form <= 0.05);
}

TEST_CASE("parity sectors carry the null vector of the odd classes", "[operators]") {
    for (auto cls : {DecayClass::first, DecayClass::second}) {
        const auto s = setup(cls, 300);
        CHECK(s.so.s1.rank == 1);
        CHECK(s.cal.sector != 0);
        CHECK(s.so.s1.basis[0].cols() == 0);
    }
}

TEST_CASE("Born series converges for a weak coupling", "[operators]") {
    auto s = setup(DecayClass::generic, 300);
    const auto weak = with_coupling(s.dp, 0.01);
    const auto so = compute_spectral_chain(weak);
    CHECK(so.s1.rank == 0);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(5), y = Eigen::VectorXd::Zero(5);
    x[0] = 1.5;
    y[1] = -2.0;
    for (Side side : {Side::plus, Side::minus}) {
        const cplx exact = perturbed_resolvent_kernel(so, weak, x, y, 0.3, side);
        const cplx free = resolvent_kernel(5, 0.3, (x - y).norm(), side);
        double prev = std::abs(free - exact);
        for (int k = 1; k <= 4; ++k) {
            const double err = std::abs(born_series_kernel(weak, x, y, 0.3, side, k) - exact);
            CHECK(err < 0.1 * prev);
            prev = err;
        }
        CHECK(prev <= 1e-9 * std::abs(exact));
    }
    CHECK_THROWS_AS(born_series_kernel(weak, x, y, 0.3, Side::plus, 7), DomainError);
}

TEST_CASE("zero potential gives the free resolvent", "[operators]") {
    const auto ep = build_eigenpair(standard_point_sources(DecayClass::generic));
    const auto nodes = build_nodes(ep.balls(), 200, 1);
    const auto dp = discretize([](const Eigen::VectorXd&) { return 0.0; }, nodes);
    const auto so = compute_spectral_chain(dp);
    CHECK(so.s1.rank == 0);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(5), y = Eigen::VectorXd::Zero(5);
    x[0] = 1.0;
    y[0] = -3.0;
    const cplx r = perturbed_resolvent_kernel(so, dp, x, y, 0.2, Side::plus);
    CHECK(r == resolvent_kernel(5, 0.2, 4.0));
}

TEST_CASE("inverse of M+ has a lambda^-2 pole on the null direction", "[operators]") {
    const auto s = setup(DecayClass::generic, 300);
    const double l1 = 2e-3, l2 = 4e-3;
    const double n1 = inverse_sample(s.so, s.dp, l1).plus.norm();
    const double n2 = inverse_sample(s.so, s.dp, l2).plus.norm();
    CHECK(std::log(n2 / n1) / std::log(l2 / l1) == Approx(-2.0).margin(0.05));
    // M+^{-1} - M-^{-1} is O(lambda^{n-6}) = O(1/lambda) for the generic class at n = 5.
    const auto fit = m_diff_slope(s.so, s.dp, log_spaced(1e-3, 3e-2, 6));
    CHECK(fit.slope == Approx(-1.0).margin(0.15));
}
