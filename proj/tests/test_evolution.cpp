#include <catch_amalgamated.hpp>

#include <zerores/evolution.hpp>

using namespace zerores;
using Catch::Approx;

namespace {

struct Setup {
    EigenPotential ep;
    DiscretePotential dp;
    SpectralObjects so;
};

Setup setup(DecayClass c, int per_ball) {
    Setup s;
    s.ep = build_eigenpair(standard_point_sources(c));
    const auto nodes = build_nodes(s.ep.balls(), per_ball, 1, parity_mirror_group(c));
    const auto raw = discretize(s.ep, nodes);
    s.dp = with_coupling(raw, calibrate_coupling(raw, s.ep).coupling);
    s.so = compute_spectral_chain(s.dp);
    return s;
}

// Generic setup shared by the slower cases below.
const Setup& generic() {
    static const Setup s = setup(DecayClass::generic, 500);
    return s;
}

const CutoffSpec kCutoff{1.0};

} // namespace

TEST_CASE("probe pairs are reproducible and lie in the requested shell", "[evolution]") {
    const auto a = probe_pairs(5, 0.5, 6, 7), b = probe_pairs(5, 0.5, 6, 7);
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].x == b[k].x);
        CHECK(a[k].y == b[k].y);
        for (const auto* p : {&a[k].x, &a[k].y}) {
            CHECK(p->norm() >= 1.0 - 1e-12);
            CHECK(p->norm() <= 3.0 + 1e-12);
        }
    }
    CHECK(probe_pairs(5, 0.5, 6, 8)[0].x != a[0].x);
    CHECK_THROWS_AS(probe_pairs(5, 0.5, 0, 1), DomainError);
}

TEST_CASE("free propagator decays like t^(-n/2)", "[evolution]") {
    const auto pairs = probe_pairs(5, 0.5, 6, 7);
    StoneOptions opt;
    const StoneEvaluator ev(nullptr, nullptr, pairs, kCutoff, opt, 5);
    const auto scan = decay_scan(ev, log_spaced(1e2, 1e5, 10));
    CHECK(scan.fit.slope == Approx(-2.5).margin(0.1));
    for (const auto& row : scan.samples)
        for (const auto& s : row) CHECK(s.tail == cplx(0.0));
}

TEST_CASE("resolvent difference splits into free part and tail", "[evolution]") {
    const auto& s = generic();
    const auto pairs = probe_pairs(5, s.dp.support.support_diameter(), 2, 3);
    const double l = 0.01;
    const auto d = resolvent_difference_kernel(s.so, s.dp, pairs[0].x, pairs[0].y, l);
    CHECK(d.value == d.free + d.tail);
    const cplx naive = perturbed_resolvent_kernel(s.so, s.dp, pairs[0].x, pairs[0].y, l, Side::plus) -
                       perturbed_resolvent_kernel(s.so, s.dp, pairs[0].x, pairs[0].y, l, Side::minus);
    CHECK(std::abs(d.value - naive) <= 1e-6 * std::abs(d.value));
    CHECK_THROWS_AS(resolvent_difference_kernel(s.so, s.dp, Eigen::VectorXd::Zero(5), pairs[0].y, l), DomainError);
    CHECK_THROWS_AS(resolvent_difference_kernel(s.so, s.dp, pairs[0].x, pairs[0].y, 0.0), DomainError);
}

TEST_CASE("time reversal conjugates the kernel", "[evolution]") {
    const auto& s = generic();
    const auto pairs = probe_pairs(5, s.dp.support.support_diameter(), 3, 7);
    StoneOptions opt;
    const StoneEvaluator ev(&s.so, &s.dp, pairs, kCutoff, opt, 5);
    for (double t : {50.0, 3e3}) {
        const auto fwd = ev.evaluate(t), bwd = ev.evaluate(-t);
        for (std::size_t p = 0; p < pairs.size(); ++p)
            CHECK(std::abs(bwd[p].value - std::conj(fwd[p].value)) <= 1e-10 * std::abs(fwd[p].value));
    }
}

TEST_CASE("generic class: slope, rank-one leading term and remainder", "[evolution]") {
    const auto& s = generic();
    const auto pairs = probe_pairs(5, s.dp.support.support_diameter(), 12, 7);
    StoneOptions opt;
    const StoneEvaluator ev(&s.so, &s.dp, pairs, kCutoff, opt, 5);
    CHECK(ev.chebyshev_tail() < 1e-8);
    const auto scan = decay_scan(ev, log_spaced(1e2, 1e5, 10));
    CHECK(scan.fit.slope == Approx(-0.5).margin(0.15));
    const auto pred = rank_one_predictor(s.so, s.dp, pairs);
    const auto lt = leading_term_compare(ev.evaluate(1e4), pred, 5);
    CHECK(lt.correlation >= 0.99);
    const auto rem = leading_term_remainder(scan, pred, 5);
    CHECK(rem.fit.slope <= -1.3);
}

TEST_CASE("predictor is refused where the leading term is absent", "[evolution]") {
    const auto f = setup(DecayClass::first, 300);
    const auto pairs = probe_pairs(5, f.dp.support.support_diameter(), 4, 7);
    CHECK_THROWS_AS(rank_one_predictor(f.so, f.dp, pairs), DegenerateFit);

    const auto nodes = build_nodes(f.ep.balls(), 200, 1);
    const auto zero = discretize([](const Eigen::VectorXd&) { return 0.0; }, nodes);
    const auto so0 = compute_spectral_chain(zero);
    CHECK_THROWS_AS(rank_one_predictor(so0, zero, pairs), DegenerateFit);
    // Without a potential the evolution is the free one.
    const StoneEvaluator ev(&so0, &zero, pairs, kCutoff, StoneOptions{}, 5);
    const StoneEvaluator fr(nullptr, nullptr, pairs, kCutoff, StoneOptions{}, 5);
    const auto a = ev.evaluate(1e3), b = fr.evaluate(1e3);
    for (std::size_t p = 0; p < pairs.size(); ++p) CHECK(a[p].value == b[p].value);
}

TEST_CASE("evaluator argument checks", "[evolution]") {
    const auto pairs = probe_pairs(5, 0.5, 2, 7);
    StoneOptions opt;
    opt.chebyshev_nodes = 3;
    CHECK_THROWS_AS(StoneEvaluator(nullptr, nullptr, pairs, kCutoff, opt, 5), DomainError);
    CHECK_THROWS_AS(StoneEvaluator(nullptr, nullptr, pairs, kCutoff, StoneOptions{}, 4), UnsupportedDimension);
    const StoneEvaluator fr(nullptr, nullptr, pairs, kCutoff, StoneOptions{}, 5);
    CHECK_THROWS_AS(decay_scan(fr, {1.0, 2.0, 3.0}), DegenerateFit);
}
