#pragma once
// Compactly supported potentials with an explicit zero-energy eigenfunction:
// psi = -c0 sum_i mu_i |x - x_i|^{2-n}, each singular summand replaced inside
// its ball by a C^2 radial polynomial with nonpositive Laplacian, and
// V = Delta psi / psi (supported in the balls).

#include <zerores/errors.hpp>
#include <zerores/fit.hpp>
#include <zerores/kernels.hpp>
#include <zerores/quadrature.hpp>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace zerores {

enum class DecayClass { generic, first, second };

inline std::string to_string(DecayClass c) {
    switch (c) {
    case DecayClass::generic: return "generic";
    case DecayClass::first: return "first";
    case DecayClass::second: return "second";
    }
    return "?";
}

inline DecayClass decay_class_from_string(const std::string& s) {
    if (s == "generic" || s == "none") return DecayClass::generic;
    if (s == "first" || s == "0") return DecayClass::first;
    if (s == "second" || s == "1") return DecayClass::second;
    throw ConfigError("unknown decay class '" + s + "'");
}

struct PointSourceSpec {
    int dim = 5;
    std::vector<Eigen::VectorXd> points;
    std::vector<double> radii;
    // Highest order of vanishing moments of the weights: none, 0 or 1.
    std::optional<int> moment_order;
};

// Weights mu with sum mu_i x_i^alpha = 0 for |alpha| <= k, normalised to
// max |mu| = 1 with the largest entry positive. When the null space has more
// than one dimension the projection of the first unit vector is used, which
// keeps any symmetry of the point set.
inline std::vector<double> solve_weights(const PointSourceSpec& spec) {
    const std::size_t m = spec.points.size();
    if (m == 0) throw InvalidGeometry("no source points");
    if (!spec.moment_order) return std::vector<double>(m, 1.0);
    const int k = *spec.moment_order;
    if (k < 0 || k > 1) throw InvalidGeometry("moment order must be 0 or 1");
    const int rows = (k == 0) ? 1 : 1 + spec.dim;
    Eigen::MatrixXd A(rows, static_cast<int>(m));
    for (std::size_t j = 0; j < m; ++j) {
        A(0, static_cast<int>(j)) = 1.0;
        if (k == 1)
            for (int d = 0; d < spec.dim; ++d) A(1 + d, static_cast<int>(j)) = spec.points[j][d];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double tol = 1e-10 * std::max(1.0, sv.size() ? sv[0] : 1.0);
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv[i] > tol) ++rank;
    const int nullity = static_cast<int>(m) - rank;
    if (nullity == 0)
        throw InvalidGeometry("moment conditions of order " + std::to_string(k) +
                              " have only the trivial solution; add source points");
    const Eigen::MatrixXd Nsp = svd.matrixV().rightCols(nullity);
    Eigen::VectorXd e0 = Eigen::VectorXd::Zero(static_cast<int>(m));
    e0[0] = 1.0;
    Eigen::VectorXd mu = Nsp * (Nsp.transpose() * e0);
    if (mu.norm() < 1e-12) mu = Nsp.col(0);
    Eigen::Index imax = 0;
    mu.cwiseAbs().maxCoeff(&imax);
    mu /= mu[imax];
    for (Eigen::Index i = 0; i < mu.size(); ++i)
        if (std::abs(mu[i]) < 1e-14) mu[i] = 0.0;
    return {mu.data(), mu.data() + mu.size()};
}

// p(r) = a + b r^2 + c r^4 matching rho^{2-n} to second order at r = rho.
struct Continuation {
    double a = 0, b = 0, c = 0;
};

inline Continuation continuation_for(int n, double rho) {
    // Value, slope and curvature matching at r = rho, solved as a 3x3 system.
    Eigen::Matrix3d M;
    M << 1, rho * rho, std::pow(rho, 4), 0, 2 * rho, 4 * std::pow(rho, 3), 0, 2, 12 * rho * rho;
    Eigen::Vector3d rhs(std::pow(rho, 2 - n), (2 - n) * std::pow(rho, 1 - n), (2 - n) * (1 - n) * std::pow(rho, -n));
    const Eigen::Vector3d x = M.fullPivLu().solve(rhs);
    return {x[0], x[1], x[2]};
}

struct EigenPotential {
    int dim = 0;
    std::vector<Eigen::VectorXd> centers;
    std::vector<double> radii;
    std::vector<double> mu;
    std::vector<Continuation> cont;
    std::optional<int> moment_order;
    int shrink_steps = 0;

    // Index of the ball containing x, or -1.
    int ball_at(const Eigen::VectorXd& x) const {
        for (std::size_t i = 0; i < centers.size(); ++i)
            if ((x - centers[i]).norm() < radii[i]) return static_cast<int>(i);
        return -1;
    }

    std::vector<Ball> balls() const {
        std::vector<Ball> b;
        for (std::size_t i = 0; i < centers.size(); ++i) b.push_back({centers[i], radii[i]});
        return b;
    }

    double support_diameter() const {
        double d = 0.0;
        for (std::size_t i = 0; i < centers.size(); ++i) {
            d = std::max(d, 2 * radii[i]);
            for (std::size_t j = 0; j < centers.size(); ++j)
                d = std::max(d, (centers[i] - centers[j]).norm() + radii[i] + radii[j]);
        }
        return d;
    }

    // Radial profile of summand i: r^{2-n} outside, p_i(r) inside.
    double profile(std::size_t i, double r) const {
        if (r < radii[i]) return cont[i].a + r * r * (cont[i].b + r * r * cont[i].c);
        return std::pow(r, 2 - dim);
    }
    double profile_derivative(std::size_t i, double r) const {
        if (r < radii[i]) return r * (2 * cont[i].b + 4 * cont[i].c * r * r);
        return (2 - dim) * std::pow(r, 1 - dim);
    }
    double profile_laplacian(std::size_t i, double r) const {
        if (r < radii[i]) return 2 * dim * cont[i].b + (4 * dim + 8) * cont[i].c * r * r;
        return 0.0;
    }

    double psi(const Eigen::VectorXd& x) const {
        const double c0 = green_constant(dim);
        double s = 0.0;
        for (std::size_t i = 0; i < centers.size(); ++i) s += mu[i] * profile(i, (x - centers[i]).norm());
        return -c0 * s;
    }

    Eigen::VectorXd grad_psi(const Eigen::VectorXd& x) const {
        const double c0 = green_constant(dim);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
        for (std::size_t i = 0; i < centers.size(); ++i) {
            const Eigen::VectorXd d = x - centers[i];
            const double r = d.norm();
            if (r == 0.0) continue;
            g += mu[i] * profile_derivative(i, r) / r * d;
        }
        return -c0 * g;
    }

    double laplacian_psi(const Eigen::VectorXd& x) const {
        const double c0 = green_constant(dim);
        double s = 0.0;
        for (std::size_t i = 0; i < centers.size(); ++i) s += mu[i] * profile_laplacian(i, (x - centers[i]).norm());
        return -c0 * s;
    }

    // V = Delta psi / psi inside the balls, exactly 0 outside.
    double potential(const Eigen::VectorXd& x) const {
        if (ball_at(x) < 0) return 0.0;
        return laplacian_psi(x) / psi(x);
    }
};

namespace detail {

inline Eigen::VectorXd halton_in_ball(const Eigen::VectorXd& c, double rho, std::uint64_t& idx) {
    const int n = static_cast<int>(c.size());
    for (;; ++idx) {
        Eigen::VectorXd p(n);
        for (int d = 0; d < n; ++d) p[d] = c[d] + rho * (2.0 * radical_inverse(idx, kPrimes[d]) - 1.0);
        if ((p - c).norm() < rho) {
            ++idx;
            return p;
        }
    }
}

// Sign of psi on ball i is constant and |psi| stays away from zero.
inline bool ball_is_clean(const EigenPotential& ep, std::size_t i, int samples) {
    std::uint64_t idx = 1;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    int sign = 0;
    for (int s = 0; s < samples; ++s) {
        const double v = ep.psi(halton_in_ball(ep.centers[i], ep.radii[i], idx));
        const int sg = v > 0 ? 1 : (v < 0 ? -1 : 0);
        if (sg == 0 || (sign != 0 && sg != sign)) return false;
        sign = sg;
        lo = std::min(lo, std::abs(v));
        hi = std::max(hi, std::abs(v));
    }
    return lo >= 1e-3 * hi;
}

} // namespace detail

// Builds (psi, V). If psi comes close to vanishing on a ball, that ball's radius
// is shrunk by 0.8 (at most five times).
inline EigenPotential build_eigenpair(const PointSourceSpec& spec, int check_samples = 1000) {
    require_odd_dimension(spec.dim, 5);
    if (spec.points.size() != spec.radii.size()) throw InvalidGeometry("points and radii differ in length");
    for (const auto& p : spec.points)
        if (p.size() != spec.dim) throw InvalidGeometry("source point of wrong dimension");
    EigenPotential ep;
    ep.dim = spec.dim;
    ep.centers = spec.points;
    ep.radii = spec.radii;
    ep.moment_order = spec.moment_order;
    ep.mu = solve_weights(spec);
    std::vector<Ball> balls;
    for (std::size_t i = 0; i < ep.centers.size(); ++i) balls.push_back({ep.centers[i], ep.radii[i]});
    detail::validate_balls(balls);

    for (int attempt = 0;; ++attempt) {
        ep.cont.clear();
        for (double r : ep.radii) ep.cont.push_back(continuation_for(spec.dim, r));
        bool ok = true;
        for (std::size_t i = 0; i < ep.centers.size(); ++i) {
            if (ep.mu[i] == 0.0) throw InvalidGeometry("source with zero weight");
            if (!detail::ball_is_clean(ep, i, check_samples)) {
                ok = false;
                ep.radii[i] *= 0.8;
            }
        }
        if (ok) {
            ep.shrink_steps = attempt;
            return ep;
        }
        if (attempt == 5) throw InvalidGeometry("eigenfunction vanishes on a ball after 5 radius reductions");
    }
}

// Residual of Delta psi = V psi, computed without profile_laplacian: the
// relative value/slope/curvature mismatch of each continuation at its ball
// boundary (which makes psi C^2, so no surface terms appear), and at sample
// points the radial form p'' + (n-1) p'/r summed over sources against V psi.
inline double eigen_identity_residual(const EigenPotential& ep, int samples_per_ball = 200, std::uint64_t seed = 3) {
    const int n = ep.dim;
    double worst = 0.0;
    for (std::size_t i = 0; i < ep.centers.size(); ++i) {
        const auto& c = ep.cont[i];
        const double r = ep.radii[i];
        const double p0 = c.a + c.b * r * r + c.c * std::pow(r, 4);
        const double p1 = 2 * c.b * r + 4 * c.c * std::pow(r, 3);
        const double p2 = 2 * c.b + 12 * c.c * r * r;
        worst = std::max(worst, std::abs(p0 - std::pow(r, 2 - n)) / std::pow(r, 2 - n));
        worst = std::max(worst, std::abs(p1 - (2 - n) * std::pow(r, 1 - n)) / std::abs((2 - n) * std::pow(r, 1 - n)));
        worst = std::max(worst, std::abs(p2 - (2 - n) * (1 - n) * std::pow(r, -n)) / ((n - 2) * (n - 1) * std::pow(r, -n)));
    }
    auto radial_laplacian = [&](const Eigen::VectorXd& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < ep.centers.size(); ++i) {
            const double r = (x - ep.centers[i]).norm();
            double d1, d2;
            if (r < ep.radii[i]) {
                const auto& c = ep.cont[i];
                d1 = 2 * c.b * r + 4 * c.c * r * r * r;
                d2 = 2 * c.b + 12 * c.c * r * r;
            } else {
                d1 = (2 - n) * std::pow(r, 1 - n);
                d2 = (2 - n) * (1 - n) * std::pow(r, -n);
            }
            // p'/r is regular at the centre: 2b + 4c r^2 inside.
            const double d1r = r < ep.radii[i] ? 2 * ep.cont[i].b + 4 * ep.cont[i].c * r * r : d1 / r;
            s += ep.mu[i] * (d2 + (n - 1) * d1r);
        }
        return -green_constant(n) * s;
    };
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::pair<double, double>> pts; // (radial Laplacian, V psi)
    std::uint64_t idx = 1;
    for (std::size_t i = 0; i < ep.centers.size(); ++i)
        for (int k = 0; k < samples_per_ball; ++k) {
            const Eigen::VectorXd x = detail::halton_in_ball(ep.centers[i], ep.radii[i], idx);
            pts.emplace_back(radial_laplacian(x), ep.potential(x) * ep.psi(x));
            Eigen::VectorXd w(n);
            for (int d = 0; d < n; ++d) w[d] = g(rng);
            const Eigen::VectorXd y = ep.centers[i] + ep.radii[i] * (1.0 + 2.0 * (k + 0.5) / samples_per_ball) * w / w.norm();
            if (ep.ball_at(y) < 0) pts.emplace_back(radial_laplacian(y), 0.0);
        }
    double scale = 0.0;
    for (const auto& [lap, vpsi] : pts) scale = std::max(scale, std::abs(vpsi));
    for (const auto& [lap, vpsi] : pts) worst = std::max(worst, std::abs(lap - vpsi) / scale);
    return worst;
}

// Reference geometries at n = 5 (any odd n >= 5 works) for the three classes.
// All are symmetric under every coordinate reflection.
inline PointSourceSpec standard_point_sources(DecayClass c, int n = 5) {
    PointSourceSpec s;
    s.dim = n;
    auto e = [n](double x0, double x1) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
        v[0] = x0;
        v[1] = x1;
        return v;
    };
    switch (c) {
    case DecayClass::generic:
        s.points = {e(0, 0)};
        s.radii = {0.25};
        break;
    case DecayClass::first:
        s.points = {e(0.4, 0), e(-0.4, 0)};
        s.radii = {0.2, 0.2};
        s.moment_order = 0;
        break;
    case DecayClass::second:
        s.points = {e(0.3, 0.3), e(-0.3, 0.3), e(0.3, -0.3), e(-0.3, -0.3)};
        s.radii = {0.15, 0.15, 0.15, 0.15};
        s.moment_order = 1;
        break;
    }
    return s;
}

// Same configuration with every length multiplied by s. Time scales as s^2,
// so shrinking the support moves the long-time regime to earlier t.
inline PointSourceSpec scaled(PointSourceSpec spec, double s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidGeometry("length scale must be positive");
    for (auto& p : spec.points) p *= s;
    for (auto& r : spec.radii) r *= s;
    return spec;
}

inline MirrorGroup full_mirror_group(int n) {
    MirrorGroup g;
    for (int a = 0; a < n; ++a) g.axes.push_back(a);
    return g;
}

// The reflections under which the standard eigenfunction of each class is odd.
// Discretising with exactly these mirrors makes the vanishing moments vanish
// to rounding, while every reflection added beyond them only thins the
// quadrature seen by even integrands.
inline MirrorGroup parity_mirror_group(DecayClass c) {
    MirrorGroup g;
    if (c == DecayClass::first) g.axes = {0};
    if (c == DecayClass::second) g.axes = {0, 1};
    return g;
}

struct MomentReport {
    double zeroth = 0.0;                 // int V psi
    Eigen::VectorXd first;               // int x_j V psi
    Eigen::MatrixXd second;              // int x_j x_k V psi
    double quadrature_error = 0.0;       // estimated absolute error
    std::vector<double> per_ball_zeroth; // flux through each ball
};

namespace detail {

inline MomentReport moments_with(const EigenPotential& ep, int radial_order) {
    const int n = ep.dim;
    const auto gl = gauss_legendre(radial_order);
    const double area = unit_sphere_area(n);
    MomentReport m;
    m.first = Eigen::VectorXd::Zero(n);
    m.second = Eigen::MatrixXd::Zero(n, n);
    // Cross-polytope directions integrate polynomials of degree <= 3 on the sphere.
    std::vector<Eigen::VectorXd> dirs;
    for (int d = 0; d < n; ++d)
        for (double s : {1.0, -1.0}) {
            Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
            w[d] = s;
            dirs.push_back(w);
        }
    for (std::size_t i = 0; i < ep.centers.size(); ++i) {
        const double rho = ep.radii[i];
        double flux = 0.0;
        for (int k = 0; k < radial_order; ++k) {
            const double r = 0.5 * rho * (1.0 + gl.nodes[k]);
            const double wr = 0.5 * rho * gl.weights[k] * std::pow(r, n - 1) * area / dirs.size();
            for (const auto& w : dirs) {
                const Eigen::VectorXd x = ep.centers[i] + r * w;
                const double f = ep.laplacian_psi(x) * wr;
                flux += f;
                m.first += f * x;
                m.second += f * x * x.transpose();
            }
        }
        m.zeroth += flux;
        m.per_ball_zeroth.push_back(flux);
    }
    return m;
}

} // namespace detail

// int x^alpha V psi over the support for |alpha| <= 2. V psi = Delta psi is a
// radial polynomial on each ball, so a Gauss radial rule times a cross-polytope
// direction set is exact; the error estimate compares two radial orders and
// adds a rounding floor.
inline MomentReport moment_integrals(const EigenPotential& ep) {
    auto a = detail::moments_with(ep, 8);
    const auto b = detail::moments_with(ep, 16);
    double scale = 0.0;
    for (double x : ep.mu) scale += std::abs(x);
    a.quadrature_error = std::abs(a.zeroth - b.zeroth) + (a.first - b.first).cwiseAbs().maxCoeff() +
                         (a.second - b.second).cwiseAbs().maxCoeff() + 1e-13 * scale;
    return a;
}

// max over seeded random directions of |psi(R w)| for each radius, fitted in log-log.
inline DecayFitResult decay_slope(const EigenPotential& ep, const std::vector<double>& radii, int directions = 64,
                                  std::uint64_t seed = 1) {
    const double diam = ep.support_diameter();
    for (double R : radii)
        if (R < 4.0 * diam) throw DomainError("decay_slope radii must be at least 4x the support diameter");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Eigen::VectorXd> dirs;
    for (int k = 0; k < directions; ++k) {
        Eigen::VectorXd w(ep.dim);
        for (int d = 0; d < ep.dim; ++d) w[d] = g(rng);
        dirs.push_back(w / w.norm());
    }
    std::vector<double> mags;
    for (double R : radii) {
        double m = 0.0;
        for (const auto& w : dirs) m = std::max(m, std::abs(ep.psi(R * w)));
        mags.push_back(m);
    }
    return fit_power_law(radii, mags);
}

// ||psi||^2 over R^n, independent of any discretisation: psi is a combination
// of radial profiles, so the norm reduces to one-centre radial integrals and
// two-centre integrals in polar coordinates about one of the centres.
inline double l2_norm_squared(const EigenPotential& ep) {
    using boost::math::quadrature::gauss_kronrod;
    const int n = ep.dim;
    const double c0 = green_constant(n);
    const double tol = 1e-11;
    const double area_n = unit_sphere_area(n);
    const double area_n1 = unit_sphere_area(n - 1);
    const std::size_t m = ep.centers.size();
    Eigen::MatrixXd I(static_cast<int>(m), static_cast<int>(m));
    for (std::size_t i = 0; i < m; ++i) {
        const double rho = ep.radii[i];
        auto inner = [&](double r) {
            const double p = ep.profile(i, r);
            return std::pow(r, n - 1) * p * p;
        };
        const double core = gauss_kronrod<double, 31>::integrate(inner, 0.0, rho, 10, tol);
        I(static_cast<int>(i), static_cast<int>(i)) = area_n * (core + std::pow(rho, 4 - n) / (n - 4));
        for (std::size_t j = i + 1; j < m; ++j) {
            const double D = (ep.centers[i] - ep.centers[j]).norm();
            const double rj = ep.radii[j];
            auto radial = [&](double theta) {
                const double ct = std::cos(theta);
                auto f = [&](double s) {
                    const double r2 = std::sqrt(std::max(0.0, s * s + D * D - 2 * s * D * ct));
                    return std::pow(s, n - 1) * ep.profile(i, s) * ep.profile(j, r2);
                };
                // breakpoints at the own ball and around the other one
                const double b1 = rho, b2 = std::max(rho, D - rj), b3 = D + rj;
                double v = gauss_kronrod<double, 31>::integrate(f, 0.0, b1, 12, tol);
                if (b2 > b1) v += gauss_kronrod<double, 31>::integrate(f, b1, b2, 12, tol);
                v += gauss_kronrod<double, 31>::integrate(f, b2, b3, 12, tol);
                v += gauss_kronrod<double, 31>::integrate(f, b3, std::numeric_limits<double>::infinity(), 12, tol);
                return v * std::pow(std::sin(theta), n - 2);
            };
            const double split = std::min(std::numbers::pi, 2.0 * std::asin(std::min(1.0, rj / D)));
            const double v = gauss_kronrod<double, 31>::integrate(radial, 0.0, split, 12, tol) +
                             gauss_kronrod<double, 31>::integrate(radial, split, std::numbers::pi, 12, tol);
            I(static_cast<int>(i), static_cast<int>(j)) = I(static_cast<int>(j), static_cast<int>(i)) = area_n1 * v;
        }
    }
    Eigen::VectorXd mu(static_cast<int>(m));
    for (std::size_t i = 0; i < m; ++i) mu[static_cast<int>(i)] = ep.mu[i];
    return c0 * c0 * mu.dot(I * mu);
}

} // namespace zerores
