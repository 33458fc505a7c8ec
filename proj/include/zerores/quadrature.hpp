#pragma once
// Support nodes (quasi-Monte-Carlo over balls, optionally mirror-symmetric),
// the smooth spectral cutoff, and a phase-adaptive integrator for
// int_0^lambda1 e^{i t lambda^2} f(lambda) chi(lambda) dlambda.

#include <zerores/errors.hpp>
#include <zerores/fit.hpp>
#include <zerores/kernels.hpp>
#include <zerores/parallel.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace zerores {

inline double unit_ball_volume(int n) { return std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n + 1.0); }
inline double unit_sphere_area(int n) { return n * unit_ball_volume(n); }

struct Ball {
    Eigen::VectorXd center;
    double radius = 0.0;
    double volume() const { return unit_ball_volume(static_cast<int>(center.size())) * std::pow(radius, center.size()); }
};

// Reflections x_a -> -x_a for a subset of axes; element g is a bitmask over `axes`.
struct MirrorGroup {
    std::vector<int> axes;

    int order() const { return 1 << axes.size(); }

    Eigen::VectorXd apply(unsigned g, const Eigen::VectorXd& x) const {
        Eigen::VectorXd y = x;
        for (std::size_t b = 0; b < axes.size(); ++b)
            if (g & (1u << b)) y[axes[b]] = -y[axes[b]];
        return y;
    }

    // Character of sector s at element g.
    static double character(unsigned s, unsigned g) { return (std::popcount(s & g) % 2 == 0) ? 1.0 : -1.0; }
};

// Nodes are stored orbit-major: column a*|G| + g holds g applied to orbit
// representative a. Without mirrors |G| = 1 and this is a plain list.
struct SupportNodes {
    int dim = 0;
    std::vector<Ball> balls;
    MirrorGroup group;
    Eigen::MatrixXd points; // dim x N
    Eigen::VectorXd weights;
    std::vector<int> ball_of;

    int size() const { return static_cast<int>(points.cols()); }
    int group_order() const { return group.order(); }
    int orbit_count() const { return size() / group_order(); }
    Eigen::VectorXd point(int i) const { return points.col(i); }

    // Diameter of the union of balls.
    double support_diameter() const {
        double d = 0.0;
        for (const auto& a : balls) {
            d = std::max(d, 2.0 * a.radius);
            for (const auto& b : balls) d = std::max(d, (a.center - b.center).norm() + a.radius + b.radius);
        }
        return d;
    }
};

namespace detail {

inline double radical_inverse(std::uint64_t i, unsigned base) {
    double inv = 1.0 / base, f = inv, r = 0.0;
    while (i > 0) {
        r += f * static_cast<double>(i % base);
        i /= base;
        f *= inv;
    }
    return r;
}

inline constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23};

inline double unit_double(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline void validate_balls(const std::vector<Ball>& balls) {
    if (balls.empty()) throw InvalidGeometry("no balls given");
    const auto n = balls.front().center.size();
    for (const auto& b : balls) {
        if (b.center.size() != n) throw InvalidGeometry("balls of different dimension");
        if (!(b.radius > 0.0)) throw InvalidGeometry("ball radius must be positive");
    }
    for (std::size_t i = 0; i < balls.size(); ++i)
        for (std::size_t j = i + 1; j < balls.size(); ++j)
            if ((balls[i].center - balls[j].center).norm() <= balls[i].radius + balls[j].radius)
                throw InvalidGeometry("balls " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
}

inline int find_ball(const std::vector<Ball>& balls, const Eigen::VectorXd& c, double tol) {
    for (std::size_t i = 0; i < balls.size(); ++i)
        if ((balls[i].center - c).norm() <= tol) return static_cast<int>(i);
    return -1;
}

} // namespace detail

// Halton points (Cranley-Patterson shifted by `seed`) filtered to each ball with
// equal weights vol(B)/count. With mirrors, points are drawn in the fundamental
// chamber of each representative ball and reflected, so the node set is exactly
// invariant; each ball must be mapped onto a ball of the set and a center
// coordinate on a mirror axis must be 0 or at least the radius.
inline SupportNodes build_nodes(const std::vector<Ball>& balls, int per_ball_count, std::uint64_t seed,
                                const MirrorGroup& mirrors = {}) {
    detail::validate_balls(balls);
    if (per_ball_count < 64) throw InvalidGeometry("per_ball_count must be at least 64");
    const int n = static_cast<int>(balls.front().center.size());
    require_odd_dimension(n);
    for (int a : mirrors.axes)
        if (a < 0 || a >= n) throw InvalidGeometry("mirror axis out of range");

    const double tol = 1e-12;
    std::vector<int> rep_balls;
    std::vector<int> stab_size;
    for (std::size_t i = 0; i < balls.size(); ++i) {
        const auto& b = balls[i];
        bool rep = true;
        int fixed = 0;
        for (int a : mirrors.axes) {
            const double c = b.center[a];
            if (std::abs(c) <= tol) {
                ++fixed;
            } else if (std::abs(c) < b.radius) {
                throw InvalidGeometry("ball straddles a mirror plane off its center");
            } else if (c < 0.0) {
                rep = false;
            }
        }
        for (unsigned g = 0; g < static_cast<unsigned>(mirrors.order()); ++g) {
            const int img = detail::find_ball(balls, mirrors.apply(g, b.center), 1e-10);
            if (img < 0 || std::abs(balls[img].radius - b.radius) > 1e-12)
                throw InvalidGeometry("ball set is not invariant under the mirror group");
        }
        if (rep) {
            rep_balls.push_back(static_cast<int>(i));
            stab_size.push_back(1 << fixed);
        }
    }

    std::vector<Eigen::VectorXd> reps;
    std::vector<double> rep_weight;
    for (std::size_t k = 0; k < rep_balls.size(); ++k) {
        const auto& b = balls[rep_balls[k]];
        const int stab = stab_size[k];
        const int count = (per_ball_count + stab - 1) / stab;
        std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(rep_balls[k] + 1)));
        Eigen::VectorXd shift(n), lo(n), width(n);
        for (int d = 0; d < n; ++d) {
            shift[d] = detail::unit_double(rng);
            lo[d] = b.center[d] - b.radius;
            width[d] = 2.0 * b.radius;
        }
        for (int a : mirrors.axes)
            if (std::abs(b.center[a]) <= tol) {
                lo[a] = 0.0;
                width[a] = b.radius;
            }
        int got = 0;
        for (std::uint64_t idx = 1; got < count; ++idx) {
            Eigen::VectorXd p(n);
            for (int d = 0; d < n; ++d) {
                double u = detail::radical_inverse(idx, detail::kPrimes[d]) + shift[d];
                u -= std::floor(u);
                p[d] = lo[d] + width[d] * u;
            }
            if ((p - b.center).norm() >= b.radius) continue;
            bool inside_chamber = true;
            for (int a : mirrors.axes)
                if (std::abs(b.center[a]) <= tol && !(p[a] > 0.0)) inside_chamber = false;
            if (!inside_chamber) continue;
            reps.push_back(p);
            rep_weight.push_back(b.volume() / (static_cast<double>(stab) * count));
            ++got;
        }
    }

    SupportNodes out;
    out.dim = n;
    out.balls = balls;
    out.group = mirrors;
    const int G = mirrors.order();
    const int N = static_cast<int>(reps.size()) * G;
    out.points.resize(n, N);
    out.weights.resize(N);
    out.ball_of.resize(static_cast<std::size_t>(N));
    for (std::size_t a = 0; a < reps.size(); ++a)
        for (int g = 0; g < G; ++g) {
            const int col = static_cast<int>(a) * G + g;
            out.points.col(col) = mirrors.apply(static_cast<unsigned>(g), reps[a]);
            out.weights[col] = rep_weight[a];
            int owner = -1;
            for (std::size_t i = 0; i < balls.size(); ++i)
                if ((out.points.col(col) - balls[i].center).norm() < balls[i].radius) owner = static_cast<int>(i);
            if (owner < 0) throw InvalidGeometry("reflected node left the support");
            out.ball_of[static_cast<std::size_t>(col)] = owner;
        }
    return out;
}

// ---------------------------------------------------------------- cutoff

struct CutoffSpec {
    double lambda1 = 0.25;
};

namespace detail {
inline double bump_h(double s) { return s > 0.0 ? std::exp(-1.0 / s) : 0.0; }
inline double smooth_step(double s) {
    if (s >= 1.0) return 1.0;
    if (s <= 0.0) return 0.0;
    const double a = bump_h(s), b = bump_h(1.0 - s);
    return a / (a + b);
}
} // namespace detail

// 1 below lambda1/2, 0 above lambda1, C-infinity in between.
inline double cutoff_eval(const CutoffSpec& spec, double lambda) {
    return detail::smooth_step((spec.lambda1 - lambda) / (0.5 * spec.lambda1));
}

// ---------------------------------------------------------------- Gauss rules

struct GaussRule {
    std::vector<double> nodes;   // on [-1, 1]
    std::vector<double> offsets; // 1 + node, without cancellation near -1
    std::vector<double> weights;
};

// Golub-Welsch: eigen-decomposition of the Legendre Jacobi matrix.
inline GaussRule gauss_legendre(int order) {
    if (order < 1) throw DomainError("gauss_legendre: order must be positive");
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
    for (int k = 1; k < order; ++k) {
        const double b = k / std::sqrt(4.0 * k * k - 1.0);
        J(k, k - 1) = J(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    GaussRule rule;
    for (int k = 0; k < order; ++k) {
        const double x = es.eigenvalues()[k];
        const double v = es.eigenvectors()(0, k);
        rule.nodes.push_back(x);
        rule.offsets.push_back(1.0 + x);
        rule.weights.push_back(2.0 * v * v);
    }
    return rule;
}

// ---------------------------------------------------------------- oscillatory integral

struct OscillatoryOptions {
    int gauss_order = 15;
    double max_phase = std::numbers::pi / 2.0;
    int base_panels = 32; // resolves chi and the amplitude when t is small
    int threads = 1;
};

// Panel breakpoints on [0, lambda1]: uniform in lambda^2 so the phase change
// per panel is at most max_phase, merged with a uniform grid in lambda.
inline std::vector<double> oscillatory_panels(double t, const CutoffSpec& spec, const OscillatoryOptions& opt) {
    const double L = spec.lambda1;
    const auto phase_panels = static_cast<long>(std::ceil(std::abs(t) * L * L / opt.max_phase));
    std::vector<double> b;
    for (long k = 0; k <= phase_panels; ++k) b.push_back(L * std::sqrt(static_cast<double>(k) / std::max(phase_panels, 1L)));
    for (int k = 0; k <= opt.base_panels; ++k) b.push_back(L * k / opt.base_panels);
    b.push_back(0.5 * L);
    std::sort(b.begin(), b.end());
    std::vector<double> out;
    for (double x : b)
        if (out.empty() || x - out.back() > 1e-15 * L) out.push_back(x);
    out.back() = L;
    return out;
}

// e^{i t (a + u)^2} for a panel edge a and a small offset u. The large part
// t a^2 is formed in double-double; the rest, t u (2a + u), is small. This keeps
// the phase of the ideal Gauss node accurate even when t lambda^2 ~ 1e5, which
// rounding of the node position itself would not.
inline cplx phase_factor(double t, double a, double u) {
    const double p = a * a;
    const double pe = std::fma(a, a, -p);
    const double q = t * p;
    const double qe = std::fma(t, p, -q);
    const double small = qe + t * pe + t * u * (2.0 * a + u);
    return std::polar(1.0, q) * cplx(std::cos(small), std::sin(small));
}

// Quadrature nodes and weights (chi already folded into the weights) for the
// panel layout at time t; shared by many amplitudes with the same t.
struct OscillatoryRule {
    std::vector<double> lambda;
    std::vector<cplx> weight; // e^{i t lambda^2} chi(lambda) w

    // Weighted sum with extended-precision accumulation: the result can be
    // ten orders of magnitude below the sum of |terms| at large t.
    cplx apply(const std::vector<cplx>& values) const {
        long double re = 0.0L, im = 0.0L;
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i].real()) || !std::isfinite(values[i].imag()))
                throw NonFiniteSample("non-finite integrand sample", lambda[i]);
            const long double wr = weight[i].real(), wi = weight[i].imag();
            const long double vr = values[i].real(), vi = values[i].imag();
            re += wr * vr - wi * vi;
            im += wr * vi + wi * vr;
        }
        return {static_cast<double>(re), static_cast<double>(im)};
    }
};

inline OscillatoryRule oscillatory_rule(double t, const CutoffSpec& spec, const OscillatoryOptions& opt = {}) {
    if (!(spec.lambda1 > 0.0)) throw DomainError("cutoff lambda1 must be positive");
    const auto panels = oscillatory_panels(t, spec, opt);
    const auto gl = gauss_legendre(opt.gauss_order);
    OscillatoryRule rule;
    for (std::size_t p = 0; p + 1 < panels.size(); ++p) {
        const double a = panels[p], b = panels[p + 1];
        const double half = 0.5 * (b - a);
        for (int k = 0; k < opt.gauss_order; ++k) {
            const double u = half * gl.offsets[k];
            const double l = a + u;
            const double chi = cutoff_eval(spec, l);
            if (chi == 0.0) continue;
            rule.lambda.push_back(l);
            rule.weight.push_back(phase_factor(t, a, u) * (chi * half * gl.weights[k]));
        }
    }
    return rule;
}

// int_0^lambda1 e^{i t lambda^2} f(lambda) chi(lambda) dlambda
inline cplx oscillatory_integrate(double t, const std::function<cplx(double)>& f, const CutoffSpec& spec,
                                  const OscillatoryOptions& opt = {}) {
    const auto rule = oscillatory_rule(t, spec, opt);
    std::vector<cplx> values(rule.lambda.size());
    parallel_for(values.size(), opt.threads, [&](std::size_t i) { values[i] = f(rule.lambda[i]); });
    return rule.apply(values);
}

// Decay of |int e^{i t lambda^2} lambda^k chi dlambda| in t.
inline DecayFitResult ibp_decay_probe(int k, const std::vector<double>& t_grid, const CutoffSpec& spec = {},
                                      const OscillatoryOptions& opt = {}) {
    if (k < 0) throw DomainError("ibp_decay_probe: k must be nonnegative");
    if (t_grid.size() < 8) throw DegenerateFit("ibp_decay_probe: need at least 8 times");
    std::vector<double> mag;
    for (double t : t_grid)
        mag.push_back(std::abs(oscillatory_integrate(t, [k](double l) { return cplx(std::pow(l, k), 0.0); }, spec, opt)));
    return fit_power_law(t_grid, mag);
}

// ---------------------------------------------------------------- convolution bound

struct ConvolutionProbe {
    double integral = 0.0;
    double std_error = 0.0;
    double bound = 0.0;
    double ratio = 0.0;
    double beta_used = 0.0;
};

// Importance-sampled estimate of int <z>^{-beta-eps} |z-u1|^{-k} |z-u2|^{-l} dz
// divided by the claimed power of |u1-u2|. The proposal mixes three heavy-tailed
// radial laws centred at u1, u2 and the origin, each matching the local
// singularity or the far-field decay.
inline ConvolutionProbe convolution_bound_probe(double k, double l, double beta, const Eigen::VectorXd& u1,
                                                const Eigen::VectorXd& u2, long sample_count, std::uint64_t seed,
                                                double beta_epsilon = 0.01) {
    const int n = static_cast<int>(u1.size());
    if (u2.size() != n) throw DomainError("convolution_bound_probe: dimension mismatch");
    if (k < 0 || l < 0 || k >= n || l >= n) throw DomainError("convolution_bound_probe: need 0 <= k, l < n");
    if (k + l + beta < n) throw DomainError("convolution_bound_probe: need k + l + beta >= n");
    if (k + l == n) throw DomainError("convolution_bound_probe: k + l = n is excluded");
    if (sample_count < 1000) throw DomainError("convolution_bound_probe: too few samples");
    const double d = (u1 - u2).norm();
    if (d == 0.0 && k + l > n) throw DomainError("convolution_bound_probe: coincident centres with k + l > n diverge");

    const double b = beta + beta_epsilon;
    const bool merged = d < 1e-300;
    struct Component {
        Eigen::VectorXd c;
        double a, s;
    };
    const double s_sing = merged ? 1.0 : std::min(1.0, d);
    std::vector<Component> comps = {
        {u1, n - (merged ? k + l : k), s_sing},
        {u2, n - (merged ? k + l : l), s_sing},
        {Eigen::VectorXd::Zero(n), std::min(1.0, k + l + b - n), std::max(1.0, std::max(u1.norm(), u2.norm()))},
    };
    const double area = unit_sphere_area(n);
    auto radial_pdf = [&](const Component& c, double r) {
        // law of r: P(R <= r) = x^a / (1 + x^a), x = r / s
        const double x = r / c.s;
        const double xa = std::pow(x, c.a);
        return c.a * xa / (r * (1.0 + xa) * (1.0 + xa));
    };
    auto density = [&](const Eigen::VectorXd& z) {
        double p = 0.0;
        for (const auto& c : comps) {
            const double r = (z - c.c).norm();
            p += radial_pdf(c, r) / (area * std::pow(r, n - 1));
        }
        return p / static_cast<double>(comps.size());
    };

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double mean = 0.0, m2 = 0.0;
    for (long i = 0; i < sample_count; ++i) {
        const auto& c = comps[static_cast<std::size_t>(i % 3)];
        double u = detail::unit_double(rng);
        while (u == 0.0) u = detail::unit_double(rng);
        const double r = c.s * std::pow(u / (1.0 - u), 1.0 / c.a);
        Eigen::VectorXd w(n);
        for (int j = 0; j < n; ++j) w[j] = gauss(rng);
        const Eigen::VectorXd z = c.c + r * w / w.norm();
        const double f = std::pow(1.0 + z.squaredNorm(), -0.5 * b) * std::pow((z - u1).norm(), -k) *
                         std::pow((z - u2).norm(), -l);
        const double val = f / density(z);
        const double delta = val - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (val - mean);
    }
    ConvolutionProbe out;
    out.integral = mean;
    out.std_error = std::sqrt(m2 / static_cast<double>(sample_count - 1) / static_cast<double>(sample_count));
    if (d <= 1.0)
        out.bound = (k + l > n) ? std::pow(d, -(k + l - n)) : 1.0;
    else
        out.bound = std::pow(d, -std::min({k, l, k + l + beta - n}));
    out.ratio = out.integral / out.bound;
    out.beta_used = b;
    return out;
}

} // namespace zerores
