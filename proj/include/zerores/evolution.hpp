#pragma once
// Low-energy propagator kernel through the Stone formula
//   e^{itH} chi(H) P_ac (x, y) = (1 / (pi i)) int_0^lambda1 e^{i t lambda^2} lambda chi(lambda)
//                                 [R_V^+ - R_V^-](lambda^2)(x, y) dlambda,
// with R_V from the symmetric resolvent identity, plus decay scans and the
// rank-one leading term of the generic class.
//
// The normalisation 1/(pi i) comes from substituting E = lambda^2 into the
// spectral measure (R^+ - R^-)(E) dE / (2 pi i).

#include <zerores/errors.hpp>
#include <zerores/fit.hpp>
#include <zerores/kernels.hpp>
#include <zerores/operators.hpp>
#include <zerores/parallel.hpp>
#include <zerores/quadrature.hpp>
#include <zerores/sectors.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace zerores {

struct ProbePair {
    Eigen::VectorXd x, y;
};

// count pairs with |x|, |y| uniform in [r_lo, r_hi] * diameter, directions
// uniform on the sphere; deterministic in the seed.
inline std::vector<ProbePair> probe_pairs(int n, double diameter, int count, std::uint64_t seed, double r_lo = 2.0,
                                          double r_hi = 6.0) {
    if (count < 1 || !(diameter > 0.0) || !(r_hi >= r_lo) || !(r_lo > 0.0))
        throw DomainError("probe_pairs: bad parameters");
    std::mt19937_64 rng(seed);
    auto point = [&] {
        Eigen::VectorXd x(n);
        // Box-Muller on raw 53-bit uniforms keeps the stream platform independent.
        for (int d = 0; d < n; ++d) {
            const double u1 = 1.0 - detail::unit_double(rng), u2 = detail::unit_double(rng);
            x[d] = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        }
        const double r = diameter * (r_lo + (r_hi - r_lo) * detail::unit_double(rng));
        return Eigen::VectorXd(x * (r / x.norm()));
    };
    std::vector<ProbePair> out;
    for (int k = 0; k < count; ++k) {
        ProbePair p;
        p.x = point();
        p.y = point();
        out.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------- resolvent difference

struct ResolventDifference {
    cplx value; // [R_V^+ - R_V^-](lambda^2)(x, y)
    cplx free;  // [R_0^+ - R_0^-](lambda^2)(x, y) = 2i Im G(lambda, |x - y|)
    cplx tail;  // value - free
    bool below_floor = false; // lambda < 1e-3: plus/minus cancellation costs digits
};

namespace detail {

// Pair-independent part at one lambda: M+(lambda) factorised per sector and
// Im M+(lambda). The tail for a pair is then
//   -da_x^T u_y - conj(u_x)^T da_y + conj(u_x)^T dM u_y,   u = M+^{-1} a+,
// which equals a+^T M+^{-1} a+ - a-^T M-^{-1} a- without forming either
// lambda^{-2}-sized term separately.
struct TailSlice {
    std::vector<JnSolver<cplx>> solvers;
    BlockOperator<double> imag_M;
};

inline TailSlice tail_slice(const SpectralObjects& so, const DiscretePotential& dp, double lambda, int threads) {
    TailSlice sl;
    const auto M = assemble_M(dp, lambda, Side::plus, threads);
    for (int s = 0; s < M.sectors(); ++s) sl.solvers.emplace_back(M.blocks[s], so.s1.basis[s].cast<cplx>());
    sl.imag_M = assemble_imag_M(dp, lambda, threads);
    return sl;
}

struct PointData {
    Mat<cplx> u;  // M+^{-1} a+
    Mat<cplx> da; // a+ - a-
};

inline PointData point_data(const TailSlice& sl, const DiscretePotential& dp, const Eigen::VectorXd& x, double lambda) {
    const ProbeVector pv = probe_vector(dp, x, lambda);
    PointData d;
    d.da = pv.delta;
    d.u.resize(pv.value.rows(), pv.value.cols());
    for (int s = 0; s < pv.value.cols(); ++s) d.u.col(s) = sl.solvers[s].solve(pv.value.col(s));
    return d;
}

inline cplx tail_value(const TailSlice& sl, const PointData& x, const PointData& y) {
    cplx out = 0.0;
    for (int s = 0; s < x.u.cols(); ++s) {
        const Vec<cplx> ux = x.u.col(s).conjugate();
        out -= x.da.col(s).cwiseProduct(y.u.col(s)).sum();
        out -= ux.cwiseProduct(y.da.col(s)).sum();
        out += cplx(0.0, 2.0) * ux.cwiseProduct(sl.imag_M.blocks[s].cast<cplx>() * y.u.col(s)).sum();
    }
    return out;
}

inline bool has_potential(const DiscretePotential& dp) { return dp.size() > 0 && dp.v.cwiseAbs().maxCoeff() > 0.0; }

} // namespace detail

// Tail (value minus free part) for each pair at one lambda.
inline std::vector<cplx> resolvent_difference_tails(const SpectralObjects& so, const DiscretePotential& dp,
                                                    const std::vector<ProbePair>& pairs, double lambda,
                                                    int threads = 1) {
    std::vector<cplx> out(pairs.size(), cplx(0.0));
    if (!detail::has_potential(dp)) return out;
    const auto sl = detail::tail_slice(so, dp, lambda, threads);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto px = detail::point_data(sl, dp, pairs[k].x, lambda);
        const auto py = detail::point_data(sl, dp, pairs[k].y, lambda);
        out[k] = detail::tail_value(sl, px, py);
    }
    return out;
}

inline void require_off_support(const DiscretePotential& dp, const Eigen::VectorXd& x) {
    for (const auto& b : dp.support.balls)
        if ((x - b.center).norm() <= b.radius) throw DomainError("probe point lies in the support of V");
}

inline ResolventDifference resolvent_difference_kernel(const SpectralObjects& so, const DiscretePotential& dp,
                                                       const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                                       double lambda, int threads = 1) {
    if (!(lambda > 0.0)) throw DomainError("resolvent_difference_kernel needs lambda > 0");
    require_off_support(dp, x);
    require_off_support(dp, y);
    ResolventDifference r;
    r.free = cplx(0.0, 2.0 * resolvent_kernel_imag(dp.dim(), lambda, (x - y).norm()));
    r.tail = resolvent_difference_tails(so, dp, {ProbePair{x, y}}, lambda, threads).front();
    r.value = r.free + r.tail;
    r.below_floor = lambda < 1e-3;
    return r;
}

// ---------------------------------------------------------------- Stone formula

struct PropagatorSample {
    double t = 0.0;
    int pair = 0;
    cplx value; // free + tail
    cplx free;
    cplx tail;
};

struct StoneOptions {
    int chebyshev_nodes = 64; // interpolation nodes for the tail in mu = lambda^2
    OscillatoryOptions quadrature{};
    int threads = 1;
};

// lambda * tail(lambda) is even and analytic in lambda, hence a smooth function
// of mu = lambda^2 on [0, lambda1^2]. It is interpolated at Chebyshev points
// (each needing one factorisation of M+, shared by all pairs), and the
// oscillatory integral is taken against Chebyshev moments computed once per t.
// The free part is integrated directly from its closed form.
class StoneEvaluator {
public:
    // so and dp may be null for the free evolution.
    StoneEvaluator(const SpectralObjects* so, const DiscretePotential* dp, std::vector<ProbePair> pairs,
                   CutoffSpec spec, StoneOptions opt, int dim)
        : pairs_(std::move(pairs)), spec_(spec), opt_(opt), dim_(dim) {
        require_odd_dimension(dim, 3);
        if (dp) {
            for (const auto& p : pairs_) {
                require_off_support(*dp, p.x);
                require_off_support(*dp, p.y);
            }
        }
        const int K = opt_.chebyshev_nodes;
        if (K < 4) throw DomainError("StoneEvaluator needs at least 4 Chebyshev nodes");
        coef_.assign(pairs_.size(), std::vector<cplx>(static_cast<std::size_t>(K), cplx(0.0)));
        if (!so || !dp || !detail::has_potential(*dp)) return;
        const double L2 = spec_.lambda1 * spec_.lambda1;
        std::vector<std::vector<cplx>> values(static_cast<std::size_t>(K));
        // Nodes in parallel, one dense factorisation each; results land in
        // their own slots, so the reduction order is fixed.
        parallel_for(static_cast<std::size_t>(K), opt_.threads, [&](std::size_t j) {
            const double mu = 0.5 * L2 * (1.0 + std::cos(std::numbers::pi * (j + 0.5) / K));
            const double lambda = std::sqrt(mu);
            auto tails = resolvent_difference_tails(*so, *dp, pairs_, lambda, 1);
            for (auto& v : tails) v *= lambda;
            values[j] = std::move(tails);
        });
        for (std::size_t p = 0; p < pairs_.size(); ++p)
            for (int k = 0; k < K; ++k) {
                cplx c = 0.0;
                for (int j = 0; j < K; ++j) c += values[j][p] * std::cos(std::numbers::pi * k * (j + 0.5) / K);
                coef_[p][k] = c * (k == 0 ? 1.0 : 2.0) / static_cast<double>(K);
            }
    }

    const std::vector<ProbePair>& pairs() const { return pairs_; }
    const CutoffSpec& cutoff() const { return spec_; }

    // Largest of the last four Chebyshev coefficients relative to the largest
    // one, over all pairs: the interpolation error indicator.
    double chebyshev_tail() const {
        double worst = 0.0;
        for (const auto& c : coef_) {
            double big = 0.0, last = 0.0;
            for (std::size_t k = 0; k < c.size(); ++k) {
                big = std::max(big, std::abs(c[k]));
                if (k + 4 >= c.size()) last = std::max(last, std::abs(c[k]));
            }
            if (big > 0.0) worst = std::max(worst, last / big);
        }
        return worst;
    }

    // Tail interpolant at mu = 0, i.e. lim lambda * tail(lambda) as lambda -> 0.
    cplx tail_at_threshold(int pair) const {
        cplx s = 0.0;
        for (std::size_t k = 0; k < coef_[pair].size(); ++k) s += (k % 2 == 0 ? 1.0 : -1.0) * coef_[pair][k];
        return s;
    }

    std::vector<PropagatorSample> evaluate(double t) const {
        const auto rule = oscillatory_rule(t, spec_, opt_.quadrature);
        const int K = opt_.chebyshev_nodes;
        const double L2 = spec_.lambda1 * spec_.lambda1;
        // Chebyshev moments int e^{it lambda^2} chi T_k(2 lambda^2 / lambda1^2 - 1) dlambda.
        std::vector<long double> mr(static_cast<std::size_t>(K), 0.0L), mi(static_cast<std::size_t>(K), 0.0L);
        std::vector<double> T(static_cast<std::size_t>(K));
        for (std::size_t q = 0; q < rule.lambda.size(); ++q) {
            const double l = rule.lambda[q];
            const double x = 2.0 * l * l / L2 - 1.0;
            T[0] = 1.0;
            T[1] = x;
            for (int k = 2; k < K; ++k) T[k] = 2.0 * x * T[k - 1] - T[k - 2];
            const long double wr = rule.weight[q].real(), wi = rule.weight[q].imag();
            for (int k = 0; k < K; ++k) {
                mr[k] += wr * T[k];
                mi[k] += wi * T[k];
            }
        }
        const cplx inv_pi_i = cplx(0.0, -1.0 / std::numbers::pi);
        std::vector<PropagatorSample> out;
        std::vector<cplx> vals(rule.lambda.size());
        for (std::size_t p = 0; p < pairs_.size(); ++p) {
            PropagatorSample s;
            s.t = t;
            s.pair = static_cast<int>(p);
            const double r = (pairs_[p].x - pairs_[p].y).norm();
            for (std::size_t q = 0; q < rule.lambda.size(); ++q) {
                const double l = rule.lambda[q];
                vals[q] = cplx(0.0, 2.0 * l * resolvent_kernel_imag(dim_, l, r));
            }
            s.free = inv_pi_i * rule.apply(vals);
            long double tr = 0.0L, ti = 0.0L;
            for (int k = 0; k < K; ++k) {
                const long double cr = coef_[p][k].real(), ci = coef_[p][k].imag();
                tr += cr * mr[k] - ci * mi[k];
                ti += cr * mi[k] + ci * mr[k];
            }
            s.tail = inv_pi_i * cplx(static_cast<double>(tr), static_cast<double>(ti));
            s.value = s.free + s.tail;
            out.push_back(s);
        }
        return out;
    }

private:
    std::vector<ProbePair> pairs_;
    CutoffSpec spec_;
    StoneOptions opt_;
    int dim_;
    std::vector<std::vector<cplx>> coef_;
};

// Single-pair convenience wrapper.
inline PropagatorSample stone_kernel(const SpectralObjects& so, const DiscretePotential& dp, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& y, double t, const CutoffSpec& spec,
                                     const StoneOptions& opt = {}) {
    if (!(std::abs(t) >= 1.0)) throw DomainError("stone_kernel is meant for |t| >= 1");
    StoneEvaluator ev(&so, &dp, {ProbePair{x, y}}, spec, opt, dp.dim());
    return ev.evaluate(t).front();
}

// ---------------------------------------------------------------- decay scans

struct DecayScan {
    std::vector<double> t;
    std::vector<std::vector<PropagatorSample>> samples; // [t index][pair]
    std::vector<double> sup;                            // max over pairs |value|
    DecayFitResult fit;
};

inline DecayScan decay_scan(const StoneEvaluator& ev, const std::vector<double>& t_grid, int threads = 1) {
    if (t_grid.size() < 8) throw DegenerateFit("decay_scan needs at least 8 times");
    DecayScan scan;
    scan.t = t_grid;
    scan.samples.resize(t_grid.size());
    parallel_for(t_grid.size(), threads, [&](std::size_t i) { scan.samples[i] = ev.evaluate(t_grid[i]); });
    const std::size_t P = ev.pairs().size();
    std::vector<std::vector<double>> per_pair(P, std::vector<double>(t_grid.size()));
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        double m = 0.0;
        for (std::size_t p = 0; p < P; ++p) {
            const double a = std::abs(scan.samples[i][p].value);
            per_pair[p][i] = a;
            m = std::max(m, a);
        }
        scan.sup.push_back(m);
    }
    scan.fit = fit_power_law(t_grid, scan.sup);
    for (const auto& y : per_pair) scan.fit.per_pair_slopes.push_back(fit_power_law(t_grid, y).slope);
    return scan;
}

// ---------------------------------------------------------------- leading term

struct LeadingTermFit {
    double t = 0.0;
    cplx constant;                // C in value ~ C t^{2 - n/2} (P_e V 1)(x) (P_e V 1)(y)
    double correlation = 0.0;     // |<pred, value>| / (|pred| |value|) over pairs
    std::vector<double> predictor; // (P_e V 1)(x) (P_e V 1)(y) per pair
};

// (P_e V 1)(x) (P_e V 1)(y) for each pair; throws when the amplitude <V1, P_e V1>
// is negligible against |V|^2, i.e. the potential is not of the generic class.
inline std::vector<double> rank_one_predictor(const SpectralObjects& so, const DiscretePotential& dp,
                                              const std::vector<ProbePair>& pairs) {
    double v2 = 0.0;
    for (int i = 0; i < dp.size(); ++i) v2 += dp.support.weights[i] * dp.V[i] * dp.V[i];
    double amp = 0.0;
    if (v2 > 0.0 && so.s1.rank > 0) {
        Vec<double> u(dp.size());
        for (int i = 0; i < dp.size(); ++i) u[i] = dp.U[i] * dp.v[i] * std::sqrt(dp.support.weights[i]);
        const Mat<double> k0u = so.K0.apply(to_sectors<double>(u, dp.group_order()));
        amp = bilinear<double>(k0u, so.D1.apply(k0u));
    }
    if (!(std::abs(amp) > 1e-12 * v2) || v2 == 0.0)
        throw DegenerateFit("near-zero predictor: <V1, P_e V1> vanishes, the leading term is absent");
    std::vector<double> pred;
    for (const auto& p : pairs) pred.push_back(so.pe_v1(dp, p.x) * so.pe_v1(dp, p.y));
    return pred;
}

inline LeadingTermFit leading_term_compare(const std::vector<PropagatorSample>& samples,
                                           const std::vector<double>& predictor, int n) {
    if (samples.size() != predictor.size() || samples.empty()) throw DomainError("leading_term_compare: size mismatch");
    LeadingTermFit f;
    f.t = samples.front().t;
    f.predictor = predictor;
    const double tp = std::pow(std::abs(f.t), 2.0 - 0.5 * n);
    cplx num = 0.0;
    double pp = 0.0, vv = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        num += predictor[k] * samples[k].value;
        pp += predictor[k] * predictor[k];
        vv += std::norm(samples[k].value);
    }
    f.constant = num / (pp * tp);
    f.correlation = std::abs(num) / std::sqrt(pp * vv);
    return f;
}

// Remainder after removing a fixed rank-one term C t^{2-n/2} pred. C is taken
// from per-pair fits sqrt-scaled values = A + B / t over the scan, so it is the
// t -> infinity constant rather than a value biased by the next order.
struct LeadingRemainder {
    cplx constant;
    std::vector<double> sup; // max over pairs of |value - C t^{2-n/2} pred|
    DecayFitResult fit;
};

inline LeadingRemainder leading_term_remainder(const DecayScan& scan, const std::vector<double>& predictor, int n) {
    const std::size_t T = scan.t.size(), P = predictor.size();
    const double e = 2.0 - 0.5 * n;
    Mat<double> X(static_cast<Eigen::Index>(T), 2);
    for (std::size_t i = 0; i < T; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = 1.0 / scan.t[i];
    }
    const Eigen::ColPivHouseholderQR<Mat<double>> qr(X);
    cplx num = 0.0;
    double pp = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
        Vec<double> yr(static_cast<Eigen::Index>(T)), yi(static_cast<Eigen::Index>(T));
        for (std::size_t i = 0; i < T; ++i) {
            const cplx v = scan.samples[i][p].value * std::pow(scan.t[i], -e);
            yr[i] = v.real();
            yi[i] = v.imag();
        }
        const cplx a(qr.solve(yr)[0], qr.solve(yi)[0]);
        num += predictor[p] * a;
        pp += predictor[p] * predictor[p];
    }
    LeadingRemainder r;
    r.constant = num / pp;
    for (std::size_t i = 0; i < T; ++i) {
        double m = 0.0;
        for (std::size_t p = 0; p < P; ++p)
            m = std::max(m, std::abs(scan.samples[i][p].value - r.constant * std::pow(scan.t[i], e) * predictor[p]));
        r.sup.push_back(m);
    }
    r.fit = fit_power_law(scan.t, r.sup);
    return r;
}

// ---------------------------------------------------------------- Born series

// sum_{k=0}^{k_max} (-1)^k [R0 (V R0)^k](lambda^2)(x, y) with node contractions.
// A diagnostic: the series need not converge for the potentials of interest.
inline cplx born_series_kernel(const DiscretePotential& dp, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                               double lambda, Side side, int k_max, int threads = 1) {
    if (k_max < 0 || k_max > 6) throw DomainError("born_series_kernel supports 0 <= k_max <= 6");
    const int n = dp.dim();
    const double r = (x - y).norm();
    cplx sum = lambda == 0.0 ? cplx(green_constant(n) / std::pow(r, n - 2)) : resolvent_kernel(n, lambda, r, side);
    if (k_max == 0) return sum;
    auto M = assemble_M(dp, lambda, side, threads);
    Mat<cplx> ax = probe_vector(dp, x, lambda).value, ay = probe_vector(dp, y, lambda).value;
    if (side == Side::minus) {
        ax = ax.conjugate().eval();
        ay = ay.conjugate().eval();
    }
    const Vec<cplx> U = dp.orbit_U.cast<cplx>();
    Mat<cplx> z = U.asDiagonal() * ay; // U a_y
    for (int k = 1; k <= k_max; ++k) {
        sum += (k % 2 == 0 ? 1.0 : -1.0) * (ax.array() * z.array()).sum();
        // z <- U K z with K = M - U.
        Mat<cplx> next(z.rows(), z.cols());
        for (int s = 0; s < z.cols(); ++s) {
            Mat<cplx> Kb = M.blocks[s];
            Kb.diagonal() -= U;
            next.col(s) = U.asDiagonal() * (Kb * z.col(s));
        }
        z = next;
    }
    return sum;
}

// R_V(x, y) from the symmetric identity R0 - a_x^T M^{-1} a_y (oracle for the Born series).
inline cplx perturbed_resolvent_kernel(const SpectralObjects& so, const DiscretePotential& dp, const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& y, double lambda, Side side, int threads = 1) {
    const int n = dp.dim();
    auto M = assemble_M(dp, lambda, side, threads);
    Mat<cplx> ax = probe_vector(dp, x, lambda).value, ay = probe_vector(dp, y, lambda).value;
    if (side == Side::minus) {
        ax = ax.conjugate().eval();
        ay = ay.conjugate().eval();
    }
    cplx tail = 0.0;
    for (int s = 0; s < M.sectors(); ++s) {
        JnSolver<cplx> sol(M.blocks[s], so.s1.basis[s].cast<cplx>());
        tail += (ax.col(s).transpose() * sol.solve(ay.col(s)))(0, 0);
    }
    return resolvent_kernel(n, lambda, (x - y).norm(), side) - tail;
}

} // namespace zerores
