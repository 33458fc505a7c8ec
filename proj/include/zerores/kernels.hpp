#pragma once
// Outgoing/incoming free resolvent kernels of -Delta in odd dimension n,
// their small-(lambda r) Taylor data and the remainder of truncations.

#include <zerores/errors.hpp>

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace zerores {

using cplx = std::complex<double>;

inline constexpr int kMaxDimension = 9;

// Which side of the spectrum the resolvent is taken from: R(lambda^2 +- i0).
enum class Side { plus = 1, minus = -1 };

inline double side_sign(Side s) { return s == Side::plus ? 1.0 : -1.0; }

inline void require_odd_dimension(int n, int lowest = 3) {
    if (n % 2 == 0)
        throw UnsupportedDimension("even dimension " + std::to_string(n) + " is not supported");
    if (n < lowest || n > kMaxDimension)
        throw UnsupportedDimension("dimension " + std::to_string(n) + " outside [" +
                                   std::to_string(lowest) + ", " + std::to_string(kMaxDimension) + "]");
}

namespace detail {

inline double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

// Integer coefficients of the polynomial factor: sum_l a_l (-2iz)^l, l <= (n-3)/2.
inline std::int64_t poly_coefficient(int n, int l) {
    const int m = (n - 3) / 2;
    if (l < 0 || l > m) return 0;
    std::int64_t num = 1;
    for (int i = 2; i <= 2 * m - l; ++i) num *= i;
    std::int64_t den = 1;
    for (int i = 2; i <= l; ++i) den *= i;
    for (int i = 2; i <= m - l; ++i) den *= i;
    return num / den;
}

// Overall constant: matching (i/4)(lambda/(2 pi r))^nu H^(1)_nu(lambda r) for
// half-integer nu gives (4 pi)^{-(n-1)/2}.
inline double prefactor(int n) { return std::pow(4.0 * std::numbers::pi, -0.5 * (n - 1)); }

// Taylor data of F(z) = C e^{iz} P(z): F = sum_j C tau_j z^j with tau_j = i^j S_j and
// S_j j! = sum_l a_l (-2)^l j!/(j-l)!, an exact integer. Returns the real number
// c_j with C tau_j = i^{[j odd]} c_j.
inline double taylor_coefficient(int n, int j) {
    const int m = (n - 3) / 2;
    std::int64_t num = 0;
    std::int64_t pow2 = 1;
    for (int l = 0; l <= std::min(j, m); ++l) {
        std::int64_t falling = 1;
        for (int i = 0; i < l; ++i) falling *= (j - i);
        num += poly_coefficient(n, l) * pow2 * falling;
        pow2 *= -2;
    }
    const double sgn = ((j / 2) % 2 == 0) ? 1.0 : -1.0;
    return prefactor(n) * sgn * static_cast<double>(num) / factorial(j);
}

inline constexpr int kTailTerms = 96;

struct CoefficientTable {
    std::array<double, kTailTerms> c{};
};

inline const CoefficientTable& coefficient_table(int n) {
    static const auto tables = [] {
        std::array<CoefficientTable, kMaxDimension + 1> t{};
        for (int d = 3; d <= kMaxDimension; d += 2)
            for (int j = 0; j < kTailTerms; ++j) t[d].c[j] = taylor_coefficient(d, j);
        return t;
    }();
    return tables[n];
}

// Scaled kernel G_n(1, z) = C e^{iz} P(z) / z^{n-2}, evaluated directly.
inline cplx scaled_kernel_direct(int n, double z, double s) {
    const int m = (n - 3) / 2;
    cplx poly = 0.0;
    const cplx step(0.0, -2.0 * z * s);
    cplx p = 1.0;
    for (int l = 0; l <= m; ++l) {
        poly += static_cast<double>(poly_coefficient(n, l)) * p;
        p *= step;
    }
    return prefactor(n) * std::exp(cplx(0.0, s * z)) * poly / std::pow(z, n - 2);
}

// Im G_n(1, z) for the outgoing side, accurate in relative terms down to z -> 0.
inline double scaled_kernel_imag(int n, double z) {
    if (z > 2.0) return scaled_kernel_direct(n, z, 1.0).imag();
    const auto& c = coefficient_table(n).c;
    double sum = 0.0;
    double zp = std::pow(z, n - 2);
    const double z2 = z * z;
    for (int j = n - 2; j < kTailTerms; j += 2) {
        const double term = c[j] * zp;
        sum += term;
        if (std::abs(term) <= 1e-18 * std::abs(sum)) break;
        zp *= z2;
    }
    return sum / std::pow(z, n - 2);
}

} // namespace detail

// G_n(+-lambda, r): outgoing (plus) or incoming (minus) free resolvent kernel.
// The imaginary part is evaluated from its series when lambda r is small, so it
// keeps full relative accuracy there.
inline cplx resolvent_kernel(int n, double lambda, double r, Side side = Side::plus) {
    require_odd_dimension(n);
    if (!(r > 0.0) || !std::isfinite(r)) throw DomainError("resolvent_kernel needs r > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("resolvent_kernel needs lambda >= 0");
    const double scale = std::pow(lambda, n - 2);
    if (lambda == 0.0) return detail::coefficient_table(n).c[0] / std::pow(r, n - 2);
    const double z = lambda * r;
    const cplx direct = detail::scaled_kernel_direct(n, z, 1.0);
    const double im = detail::scaled_kernel_imag(n, z);
    const cplx value = scale * cplx(direct.real(), im);
    return side == Side::plus ? value : std::conj(value);
}

// Im G_n(lambda, r) for the outgoing side; used for differences R+ - R-.
// r = 0 is allowed and returns the constant c_{n-2} lambda^{n-2}.
inline double resolvent_kernel_imag(int n, double lambda, double r) {
    if (r == 0.0 || lambda == 0.0)
        return lambda == 0.0 ? 0.0 : detail::coefficient_table(n).c[n - 2] * std::pow(lambda, n - 2);
    return std::pow(lambda, n - 2) * detail::scaled_kernel_imag(n, lambda * r);
}

// Free Green constant c_0 of G_0(x, y) = c_0 |x - y|^{2-n}.
inline double green_constant(int n) {
    require_odd_dimension(n);
    return detail::coefficient_table(n).c[0];
}

// Real coefficient c_j of lambda^j |x-y|^{2+j-n} in the expansion; odd orders
// carry an extra factor +-i supplied by the caller.
inline double series_coefficient(int n, int j) {
    require_odd_dimension(n);
    if (j < 0 || j > n + 2)
        throw DomainError("series_coefficient: order " + std::to_string(j) + " out of range [0, n+2]");
    return detail::coefficient_table(n).c[j];
}

struct KernelSeries {
    int dim = 0;
    std::vector<double> coefficients; // c_0 .. c_{n+2}

    // Coefficient of lambda^j r^{2+j-n} including the +-i of odd orders.
    cplx term_factor(int j, Side side) const {
        const double c = coefficients.at(static_cast<std::size_t>(j));
        if (j % 2 == 0) return c;
        return cplx(0.0, side_sign(side) * c);
    }
};

inline KernelSeries make_kernel_series(int n) {
    require_odd_dimension(n);
    KernelSeries s;
    s.dim = n;
    for (int j = 0; j <= n + 2; ++j) s.coefficients.push_back(detail::coefficient_table(n).c[j]);
    return s;
}

// sum_{j <= order} (+-i)^{[j odd]} c_j lambda^j r^{2+j-n}
inline cplx truncated_series(int n, double lambda, double r, int order, Side side = Side::plus) {
    require_odd_dimension(n);
    if (!(r > 0.0)) throw DomainError("truncated_series needs r > 0");
    if (order < 0 || order > n + 2) throw DomainError("truncated_series: order out of range");
    const auto& c = detail::coefficient_table(n).c;
    cplx sum = 0.0;
    for (int j = 0; j <= order; ++j) {
        const double mag = c[j] * std::pow(lambda, j) * std::pow(r, 2 + j - n);
        sum += (j % 2 == 0) ? cplx(mag, 0.0) : cplx(0.0, side_sign(side) * mag);
    }
    return sum;
}

namespace detail {

// G_n(1, z) - truncation through `order`, as a function of z = lambda r alone.
inline cplx scaled_remainder(int n, double z, int order, Side side) {
    const auto& c = coefficient_table(n).c;
    const double s = side_sign(side);
    cplx sum = 0.0;
    if (z <= 2.0) {
        for (int j = order + 1; j < kTailTerms; ++j) {
            const double mag = c[j] * std::pow(z, 2 + j - n);
            const cplx term = (j % 2 == 0) ? cplx(mag, 0.0) : cplx(0.0, s * mag);
            sum += term;
            if (j > order + 4 && std::abs(term) <= 1e-18 * std::abs(sum)) break;
        }
        return sum;
    }
    sum = scaled_kernel_direct(n, z, s);
    for (int j = 0; j <= order; ++j) {
        const double mag = c[j] * std::pow(z, 2 + j - n);
        sum -= (j % 2 == 0) ? cplx(mag, 0.0) : cplx(0.0, s * mag);
    }
    return sum;
}

} // namespace detail

// G_n(+-lambda, r) minus its truncation through `order` (order >= n-2).
// Small lambda r uses the tail series so there is no cancellation.
inline cplx expansion_error(int n, double lambda, double r, int order, Side side = Side::plus) {
    require_odd_dimension(n);
    if (!(r > 0.0)) throw DomainError("expansion_error needs r > 0");
    if (order < n - 2 || order > n + 2) throw DomainError("expansion_error: order must lie in [n-2, n+2]");
    if (lambda == 0.0) return 0.0;
    return std::pow(lambda, n - 2) * detail::scaled_remainder(n, lambda * r, order, side);
}

// K(z) = lambda^{2-n} (G - truncation through n-1) as a function of z = lambda r.
// Bounded by C z^2 on [0, 1].
inline cplx remainder_profile(int n, double z, Side side = Side::plus) {
    require_odd_dimension(n);
    if (z < 0.0) throw DomainError("remainder_profile needs z >= 0");
    if (z == 0.0) return 0.0;
    return detail::scaled_remainder(n, z, n - 1, side);
}

// (1/lambda) d/dlambda G_n(lambda, r) in closed form. The polynomial i P + P'
// has vanishing constant term, which is divided out exactly.
inline cplx kernel_lambda_derivative_over_lambda(int n, double lambda, double r) {
    require_odd_dimension(n);
    if (!(r > 0.0)) throw DomainError("derivative needs r > 0");
    const int m = (n - 3) / 2;
    const double z = lambda * r;
    // q_k = i^{k+1} (-2)^k [a_k - 2 (k+1) a_{k+1}] for k >= 1; q_0 = 0.
    cplx poly = 0.0;
    cplx zp = 1.0;
    for (int k = 1; k <= m + 1; ++k) {
        const double bracket = static_cast<double>(detail::poly_coefficient(n, k)) -
                               2.0 * (k + 1) * static_cast<double>(detail::poly_coefficient(n, k + 1));
        const cplx ipow = std::pow(cplx(0.0, 1.0), k + 1);
        poly += ipow * std::pow(-2.0, k) * bracket * zp;
        zp *= z;
    }
    return detail::prefactor(n) * std::pow(r, 4 - n) * std::exp(cplx(0.0, z)) * poly;
}

// Constant kappa_n in (1/lambda) d_lambda G_n = kappa_n G_{n-2}, measured at a
// fixed reference point instead of being assumed.
inline cplx recurrence_constant(int n) {
    require_odd_dimension(n, 5);
    const double lambda = 0.1, r = 1.0;
    return kernel_lambda_derivative_over_lambda(n, lambda, r) / resolvent_kernel(n - 2, lambda, r);
}

// |(1/lambda) d_lambda G_n - kappa_n G_{n-2}| at (lambda, r); n >= 5.
inline double recurrence_residual(int n, double lambda, double r) {
    require_odd_dimension(n, 5);
    if (!(r > 0.0)) throw DomainError("recurrence_residual needs r > 0");
    if (!(lambda > 0.0)) throw DomainError("recurrence_residual needs lambda > 0");
    const cplx lhs = kernel_lambda_derivative_over_lambda(n, lambda, r);
    return std::abs(lhs - recurrence_constant(n) * resolvent_kernel(n - 2, lambda, r));
}

} // namespace zerores
