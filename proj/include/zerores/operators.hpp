#pragma once
// V-sandwiched discretisations of the free resolvent and its Taylor kernels,
// projection-regularised inversion, and the threshold spectral chain
// S1 -> D0 -> D1 -> P_e together with Laurent fits of M(lambda)^{-1}.
//
// Storage: symmetric form. Entry (i, j) of vKv is sqrt(w_i) v_i k(z_i, z_j)
// v_j sqrt(w_j) with w the quadrature weights, so adjoints are transposes and
// the sector blocks of sectors.hpp apply directly.

#include <zerores/errors.hpp>
#include <zerores/fit.hpp>
#include <zerores/kernels.hpp>
#include <zerores/parallel.hpp>
#include <zerores/potentials.hpp>
#include <zerores/quadrature.hpp>
#include <zerores/sectors.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace zerores {

struct DiscretePotential {
    SupportNodes support;
    Eigen::VectorXd V; // per node, including the coupling factor
    Eigen::VectorXd v; // |V|^{1/2}
    Eigen::VectorXd U; // sign of V (+1 where V = 0)
    double coupling = 1.0;

    // Orbit representatives: sqrt(weight) * v, sign, and the radius of the
    // ball whose volume equals the node weight (used on the diagonal).
    Eigen::VectorXd orbit_sv, orbit_U, orbit_h;

    int dim() const { return support.dim; }
    int size() const { return support.size(); }
    int group_order() const { return support.group_order(); }
    int orbit_count() const { return support.orbit_count(); }
    bool empty() const { return size() == 0; }
};

namespace detail {
inline void refresh_orbit_data(DiscretePotential& dp) {
    const int G = dp.group_order(), m = dp.orbit_count(), n = dp.dim();
    dp.orbit_sv.resize(m);
    dp.orbit_U.resize(m);
    dp.orbit_h.resize(m);
    for (int a = 0; a < m; ++a) {
        const int i = a * G;
        dp.orbit_sv[a] = std::sqrt(dp.support.weights[i]) * dp.v[i];
        dp.orbit_U[a] = dp.U[i];
        dp.orbit_h[a] = std::pow(dp.support.weights[i] / unit_ball_volume(n), 1.0 / n);
    }
}
} // namespace detail

// Samples V at orbit representatives and copies the value to every image, so
// the discrete potential is exactly invariant under the node symmetry.
inline DiscretePotential discretize(const std::function<double(const Eigen::VectorXd&)>& potential,
                                    const SupportNodes& nodes, double scale = 1.0) {
    DiscretePotential dp;
    dp.support = nodes;
    const int N = nodes.size(), G = nodes.group_order();
    dp.V.resize(N);
    dp.v.resize(N);
    dp.U.resize(N);
    for (int a = 0; a < nodes.orbit_count(); ++a) {
        const double val = scale * potential(nodes.point(a * G));
        if (!std::isfinite(val)) throw DomainError("potential is not finite at a node");
        for (int g = 0; g < G; ++g) {
            dp.V[a * G + g] = val;
            dp.v[a * G + g] = std::sqrt(std::abs(val));
            dp.U[a * G + g] = val < 0.0 ? -1.0 : 1.0;
        }
    }
    // Invariance is required for the block structure; check a few images.
    for (int a = 0; a < std::min(nodes.orbit_count(), 8); ++a)
        for (int g = 1; g < G; ++g) {
            const double vi = scale * potential(nodes.point(a * G + g));
            if (std::abs(vi - dp.V[a * G]) > 1e-9 * (1.0 + std::abs(vi)))
                throw InvalidGeometry("potential is not invariant under the node mirror group");
        }
    detail::refresh_orbit_data(dp);
    return dp;
}

inline DiscretePotential discretize(const EigenPotential& ep, const SupportNodes& nodes, double scale = 1.0) {
    return discretize([&ep](const Eigen::VectorXd& x) { return ep.potential(x); }, nodes, scale);
}

// V -> g V.
inline DiscretePotential with_coupling(const DiscretePotential& dp, double g) {
    DiscretePotential out = dp;
    out.V *= g;
    out.v *= std::sqrt(g);
    out.coupling *= g;
    detail::refresh_orbit_data(out);
    return out;
}

// ---------------------------------------------------------------- kernels on nodes

// Fast G_n(lambda, r) at fixed (n, lambda): Taylor series for lambda r <= 1
// (both parts, no cancellation in the imaginary part), closed form beyond.
struct ResolventEvaluator {
    int n;
    double lambda;
    double scale; // lambda^{n-2}

    ResolventEvaluator(int dim, double lam) : n(dim), lambda(lam), scale(std::pow(lam, dim - 2)) {}

    cplx operator()(double r) const {
        const double z = lambda * r;
        if (z > 1.0) return scale * detail::scaled_kernel_direct(n, z, 1.0);
        const auto& c = detail::coefficient_table(n).c;
        double re = 0.0, im = 0.0, zp = 1.0;
        for (int j = 0; j < detail::kTailTerms; ++j) {
            const double term = c[j] * zp;
            if (j % 2 == 0) re += term;
            else im += term;
            if (j > n && std::abs(term) <= 1e-17 * std::min(std::abs(re), std::abs(im))) break;
            zp *= z;
        }
        return cplx(re, im) / std::pow(r, n - 2);
    }

    double imag(double r) const { return resolvent_kernel_imag(n, lambda, r); }
};

// Average of |z|^p over a ball of radius h (p > -n).
inline double ball_average_power(int n, double p, double h) { return n / (n + p) * std::pow(h, p); }

// Mean of |x - y|^{2-n} over y in a ball of radius h at distance r from x:
// the point value when r >= h (mean-value property), the uniform-ball
// potential inside. Node pairs closer than their own size (mirror images of
// points near a symmetry plane, for instance) see this smoothed value.
inline double newton_ball_mean(int n, double r, double h) {
    if (r >= h) return std::pow(r, 2 - n);
    return 0.5 * n * std::pow(h, 2 - n) - 0.5 * (n - 2) * r * r * std::pow(h, -n);
}

namespace detail {

// Blocks of the G-invariant symmetric operator with off-diagonal entries
// sv_i sv_j k(|z_i - z_j|, h_ij) and diagonal entries sv_a^2 d(a); h_ij is the
// larger of the two node radii.
template <class S, class Off, class Diag>
BlockOperator<S> assemble_blocks(const DiscretePotential& dp, Off&& k, Diag&& d, int threads = 1) {
    const int G = dp.group_order(), m = dp.orbit_count();
    BlockOperator<S> out;
    out.blocks.assign(static_cast<std::size_t>(G), Mat<S>::Zero(m, m));
    const auto& P = dp.support.points;
    parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t ai) {
        const int a = static_cast<int>(ai);
        std::vector<S> vals(static_cast<std::size_t>(G));
        const auto pa = P.col(a * G);
        for (int b = a; b < m; ++b) {
            const double svab = dp.orbit_sv[a] * dp.orbit_sv[b];
            for (int g = 0; g < G; ++g) {
                if (a == b && g == 0) {
                    vals[0] = dp.orbit_sv[a] * dp.orbit_sv[a] * d(a);
                    continue;
                }
                const double r = (pa - P.col(b * G + g)).norm();
                if (r == 0.0) throw InvalidGeometry("coincident nodes");
                vals[static_cast<std::size_t>(g)] = svab * k(r, std::max(dp.orbit_h[a], dp.orbit_h[b]));
            }
            walsh_hadamard(vals.data(), G);
            for (int s = 0; s < G; ++s) {
                out.blocks[s](a, b) = vals[static_cast<std::size_t>(s)];
                out.blocks[s](b, a) = vals[static_cast<std::size_t>(s)];
            }
        }
    });
    return out;
}

} // namespace detail

// v G_j v: kernel c_j |x - y|^{2+j-n}. Diagonal: the kernel averaged over a
// ball of the node's own volume when it is singular, its limit otherwise.
// The Newtonian kernel (j = 0) is also ball-averaged for close pairs.
inline BlockOperator<double> assemble_G(const DiscretePotential& dp, int j, int threads = 1) {
    const int n = dp.dim();
    const double cj = series_coefficient(n, j);
    const int p = 2 + j - n;
    auto off = [&](double r, double h) { return j == 0 ? cj * newton_ball_mean(n, r, h) : cj * std::pow(r, p); };
    auto diag = [&](int a) {
        if (p < 0) return cj * ball_average_power(n, p, dp.orbit_h[a]);
        return p == 0 ? cj : 0.0;
    };
    return detail::assemble_blocks<double>(dp, off, diag, threads);
}

// M(+-lambda) = U + v R0(+-lambda) v. The diagonal follows the same rule
// term by term through the series, so M(lambda) - sum lambda^j vG_jv has no
// diagonal defect.
inline BlockOperator<cplx> assemble_M(const DiscretePotential& dp, double lambda, Side side = Side::plus,
                                      int threads = 1) {
    const int n = dp.dim();
    if (!(lambda >= 0.0)) throw DomainError("assemble_M needs lambda >= 0");
    BlockOperator<cplx> M;
    if (lambda == 0.0) {
        M = assemble_G(dp, 0, threads).complexified();
    } else {
        const ResolventEvaluator ev(n, lambda);
        const double c0 = green_constant(n);
        auto off = [&](double r, double h) {
            const cplx val = ev(r);
            if (r >= h) return val;
            return val + c0 * (newton_ball_mean(n, r, h) - std::pow(r, 2 - n));
        };
        auto diag = [&](int a) {
            double re = 0.0;
            for (int j = 0; j <= n - 3; j += 2)
                re += std::pow(lambda, j) * series_coefficient(n, j) * ball_average_power(n, 2 + j - n, dp.orbit_h[a]);
            return cplx(re, series_coefficient(n, n - 2) * std::pow(lambda, n - 2));
        };
        M = detail::assemble_blocks<cplx>(dp, off, diag, threads);
    }
    for (auto& b : M.blocks) {
        for (int a = 0; a < b.rows(); ++a) b(a, a) += dp.orbit_U[a];
        if (side == Side::minus) b = b.conjugate().eval();
    }
    return M;
}

// Im G_n(lambda, r) = lambda^{n-2} (c_{n-2} + c_n (lambda r)^2) + remainder. The two
// polynomial terms have exact sector transforms (a constant lives in the
// trivial sector and r^2 = |p|^2 + |q|^2 - 2 p.q in at most one more), so only
// the O((lambda r)^4) remainder goes through a cancelling Walsh sum. Without
// this split, sectors whose leading parts vanish by symmetry would inherit
// rounding noise of size eps * lambda^{n-2}.
inline double imag_kernel_remainder(int n, double lambda, double r) {
    const double z = lambda * r;
    const double scale = std::pow(lambda, n - 2);
    const auto& c = detail::coefficient_table(n).c;
    if (z > 1.0) return resolvent_kernel_imag(n, lambda, r) - scale * (c[n - 2] + c[n] * z * z);
    double sum = 0.0, zp = z * z * z * z;
    for (int j = n + 2; j < detail::kTailTerms; j += 2) {
        const double term = c[j] * zp;
        sum += term;
        if (std::abs(term) <= 1e-18 * std::abs(sum)) break;
        zp *= z * z;
    }
    return scale * sum;
}

namespace detail {

// Walsh sum over g of chi_s(g) p.(g q): |G| p_i q_i on the sector of the single
// mirror flipping axis i, and the unflipped axes on the trivial sector.
inline void add_dot_sectors(const MirrorGroup& grp, const Eigen::VectorXd& p, const Eigen::VectorXd& q, double coef,
                            double* out) {
    const double G = grp.order();
    std::vector<bool> mirrored(static_cast<std::size_t>(p.size()), false);
    for (std::size_t k = 0; k < grp.axes.size(); ++k) {
        mirrored[static_cast<std::size_t>(grp.axes[k])] = true;
        out[1u << k] += coef * G * p[grp.axes[k]] * q[grp.axes[k]];
    }
    for (int i = 0; i < p.size(); ++i)
        if (!mirrored[static_cast<std::size_t>(i)]) out[0] += coef * G * p[i] * q[i];
}

} // namespace detail

// Blocks of v Im G(lambda) v, i.e. Im M+(lambda), with the split above.
inline BlockOperator<double> assemble_imag_M(const DiscretePotential& dp, double lambda, int threads = 1) {
    const int n = dp.dim(), G = dp.group_order(), m = dp.orbit_count();
    const double scale = std::pow(lambda, n - 2);
    const auto& c = detail::coefficient_table(n).c;
    const double d0 = scale * c[n - 2], d1 = scale * c[n] * lambda * lambda;
    const auto& P = dp.support.points;
    BlockOperator<double> out;
    out.blocks.assign(static_cast<std::size_t>(G), Mat<double>::Zero(m, m));
    parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t ai) {
        const int a = static_cast<int>(ai);
        std::vector<double> vals(static_cast<std::size_t>(G));
        const Eigen::VectorXd pa = P.col(a * G);
        for (int b = a; b < m; ++b) {
            const Eigen::VectorXd pb = P.col(b * G);
            for (int g = 0; g < G; ++g) {
                const double r = (pa - P.col(b * G + g)).norm();
                vals[static_cast<std::size_t>(g)] = r == 0.0 ? 0.0 : imag_kernel_remainder(n, lambda, r);
            }
            walsh_hadamard(vals.data(), G);
            vals[0] += G * (d0 + d1 * (pa.squaredNorm() + pb.squaredNorm()));
            detail::add_dot_sectors(dp.support.group, pa, pb, -2.0 * d1, vals.data());
            const double svab = dp.orbit_sv[a] * dp.orbit_sv[b];
            for (int s = 0; s < G; ++s) {
                out.blocks[s](a, b) = svab * vals[static_cast<std::size_t>(s)];
                out.blocks[s](b, a) = svab * vals[static_cast<std::size_t>(s)];
            }
        }
    });
    return out;
}

// Sector components of sqrt(w_i) v_i Im G(lambda, |z_i - y|), split as above.
inline Mat<double> imag_probe_vector(const DiscretePotential& dp, const Eigen::VectorXd& y, double lambda) {
    const int n = dp.dim(), G = dp.group_order(), m = dp.orbit_count();
    const double scale = std::pow(lambda, n - 2);
    const auto& c = detail::coefficient_table(n).c;
    const double d0 = scale * c[n - 2], d1 = scale * c[n] * lambda * lambda;
    const auto& P = dp.support.points;
    const double norm = 1.0 / std::sqrt(static_cast<double>(G));
    Mat<double> out(m, G);
    std::vector<double> vals(static_cast<std::size_t>(G));
    for (int a = 0; a < m; ++a) {
        for (int g = 0; g < G; ++g) {
            const double r = (P.col(a * G + g) - y).norm();
            if (r == 0.0) throw DomainError("probe point coincides with a node");
            vals[static_cast<std::size_t>(g)] = imag_kernel_remainder(n, lambda, r);
        }
        walsh_hadamard(vals.data(), G);
        const Eigen::VectorXd pa = P.col(a * G);
        vals[0] += G * (d0 + d1 * (pa.squaredNorm() + y.squaredNorm()));
        detail::add_dot_sectors(dp.support.group, pa, y, -2.0 * d1, vals.data());
        for (int s = 0; s < G; ++s) out(a, s) = norm * dp.orbit_sv[a] * vals[static_cast<std::size_t>(s)];
    }
    return out;
}

// Sector components of the vector sqrt(w_i) v_i G(z_i, y), and of 2i Im of it.
struct ProbeVector {
    Mat<cplx> value; // m x G
    Mat<cplx> delta; // m x G, the plus-minus difference
};

inline ProbeVector probe_vector(const DiscretePotential& dp, const Eigen::VectorXd& y, double lambda) {
    const int N = dp.size(), n = dp.dim();
    Vec<cplx> full(N);
    const ResolventEvaluator ev(n, lambda);
    for (int i = 0; i < N; ++i) {
        const double r = (dp.support.points.col(i) - y).norm();
        if (r == 0.0) throw DomainError("probe point coincides with a node");
        const double sv = std::sqrt(dp.support.weights[i]) * dp.v[i];
        full[i] = sv * (lambda == 0.0 ? cplx(green_constant(n) / std::pow(r, n - 2), 0.0) : ev(r));
    }
    const Mat<double> im = imag_probe_vector(dp, y, lambda);
    return {to_sectors<cplx>(full, dp.group_order()), cplx(0.0, 2.0) * im.cast<cplx>()};
}

// Sector components of sqrt(w_i) v_i c_j |z_i - y|^{2+j-n}.
inline Mat<double> static_probe_vector(const DiscretePotential& dp, const Eigen::VectorXd& y, int j) {
    const int N = dp.size(), n = dp.dim();
    const double cj = series_coefficient(n, j);
    Vec<double> full(N);
    for (int i = 0; i < N; ++i) {
        const double r = (dp.support.points.col(i) - y).norm();
        if (r == 0.0) throw DomainError("probe point coincides with a node");
        full[i] = std::sqrt(dp.support.weights[i]) * dp.v[i] * cj * std::pow(r, 2 + j - n);
    }
    return to_sectors<double>(full, dp.group_order());
}

// ---------------------------------------------------------------- inversion

struct InversionOptions {
    double condition_cap = 1e10;
    double singular_tolerance = 1e-13;
};

// A^{-1} through (A+S)^{-1} + (A+S)^{-1} S B^{-1} S (A+S)^{-1}, with
// B = S - S(A+S)^{-1}S inverted on range(S) = span(Q), Q orthonormal.
// Factorises once; solve() applies A^{-1} to any number of right-hand sides.
template <class S>
class JnSolver {
public:
    JnSolver(const Mat<S>& A, const Mat<S>& Q, const InversionOptions& opt = {}) : Q_(Q) {
        const Mat<S> AS = A + Q * Q.adjoint();
        lu_.compute(AS);
        if (AS.size() > 0 && !(lu_.rcond() * opt.condition_cap >= 1.0))
            throw SingularOperator("A + S is numerically singular (condition above cap)");
        if (Q.cols() == 0) return;
        FQ_ = lu_.solve(Q);
        // Q^* F = Q^* U^{-1} L^{-1} P from PA = LU, by transposed triangular solves.
        const Mat<S>& LU = lu_.matrixLU();
        Mat<S> Z = LU.template triangularView<Eigen::Upper>().transpose().solve(Q.conjugate().eval());
        Z = LU.template triangularView<Eigen::UnitLower>().transpose().solve(Z);
        QF_ = Z.transpose() * lu_.permutationP();
        const Mat<S> QFQ = Q.adjoint() * FQ_;
        const Mat<S> B = Mat<S>::Identity(Q.cols(), Q.cols()) - QFQ;
        Eigen::JacobiSVD<Mat<S>> svd(B);
        // Rounding in (A+S)^{-1} leaves B with singular values near eps cond(A+S)
        // even when A is exactly singular, so the floor grows with the condition.
        const double scale = std::max(1.0, QFQ.norm());
        const double floor =
            scale * std::max(opt.singular_tolerance, 64.0 * std::numeric_limits<double>::epsilon() / lu_.rcond());
        if (svd.singularValues().minCoeff() <= floor)
            throw SingularOperator("A not invertible: B vanishes on a direction of range(S)");
        Binv_ = B.inverse();
    }

    Mat<S> solve(const Mat<S>& b) const {
        Mat<S> x = lu_.solve(b);
        if (Q_.cols() > 0) x += FQ_ * (Binv_ * (QF_ * b));
        return x;
    }

    Mat<S> inverse() const { return solve(Mat<S>::Identity(lu_.rows(), lu_.cols())); }

private:
    Mat<S> Q_, FQ_, QF_, Binv_;
    Eigen::PartialPivLU<Mat<S>> lu_;
};

template <class S>
Mat<S> jn_inverse_range(const Mat<S>& A, const Mat<S>& Q, const InversionOptions& opt = {}) {
    return JnSolver<S>(A, Q, opt).inverse();
}

// Same with S given as an orthogonal projection matrix.
template <class S>
Mat<S> jn_inverse(const Mat<S>& A, const Mat<S>& proj, const InversionOptions& opt = {}) {
    if (A.rows() != A.cols() || proj.rows() != A.rows() || proj.cols() != A.cols())
        throw DomainError("jn_inverse: shape mismatch");
    const Mat<S> herm = 0.5 * (proj + proj.adjoint());
    Eigen::SelfAdjointEigenSolver<Mat<S>> es(herm);
    int r = 0;
    for (int i = 0; i < es.eigenvalues().size(); ++i)
        if (es.eigenvalues()[i] > 0.5) ++r;
    const Mat<S> Q = es.eigenvectors().rightCols(r);
    return jn_inverse_range<S>(A, Q, opt);
}

// ---------------------------------------------------------------- S1 and calibration

struct S1Result {
    int rank = 0;
    std::vector<Mat<double>> basis;     // per sector, m x r_s, orthonormal
    std::vector<double> singular_values; // all blocks, ascending
    double threshold = 1e-6;
    double gap_ratio = 0.0; // smallest kept-out / largest kernel value
    bool rank_warning = false;
};

// Kernel of U + vG0v: eigenvectors of each symmetric block whose |eigenvalue|
// is below threshold * largest. A 10x gap must separate kernel and range.
inline S1Result compute_S1(const BlockOperator<double>& A0, double threshold = 1e-6) {
    S1Result res;
    res.threshold = threshold;
    std::vector<Eigen::SelfAdjointEigenSolver<Mat<double>>> solvers;
    double smax = 0.0;
    for (const auto& b : A0.blocks) {
        solvers.emplace_back(b);
        if (b.size()) smax = std::max(smax, solvers.back().eigenvalues().cwiseAbs().maxCoeff());
    }
    double kept_max = 0.0, out_min = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < solvers.size(); ++s) {
        const auto& ev = solvers[s].eigenvalues();
        std::vector<int> cols;
        for (int i = 0; i < ev.size(); ++i) {
            const double sv = std::abs(ev[i]);
            res.singular_values.push_back(sv);
            if (sv < threshold * smax) {
                cols.push_back(i);
                kept_max = std::max(kept_max, sv);
            } else {
                out_min = std::min(out_min, sv);
            }
        }
        Mat<double> Q(A0.blocks[s].rows(), static_cast<int>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) Q.col(static_cast<int>(c)) = solvers[s].eigenvectors().col(cols[c]);
        res.basis.push_back(Q);
        res.rank += static_cast<int>(cols.size());
    }
    std::sort(res.singular_values.begin(), res.singular_values.end());
    if (res.rank > 0) {
        res.gap_ratio = out_min / std::max(kept_max, 1e-300);
        if (res.gap_ratio < 10.0)
            throw AmbiguousKernel("no 10x gap between kernel and range of U + vG0v", kept_max, out_min);
    } else {
        res.gap_ratio = out_min / (threshold * smax);
        if (out_min < 10.0 * threshold * smax)
            throw AmbiguousKernel("smallest singular value of U + vG0v lies within 10x of the threshold", 0.0, out_min);
    }
    res.rank_warning = res.rank > 1;
    return res;
}

inline S1Result compute_S1(const DiscretePotential& dp, double threshold = 1e-6, int threads = 1) {
    BlockOperator<double> A0 = assemble_G(dp, 0, threads);
    for (auto& b : A0.blocks)
        for (int a = 0; a < b.rows(); ++a) b(a, a) += dp.orbit_U[a];
    return compute_S1(A0, threshold);
}

// Sector components of the sampled w psi sqrt(weight) (w = U v).
inline Mat<double> sampled_eigenvector(const DiscretePotential& dp, const EigenPotential& ep) {
    Vec<double> f(dp.size());
    for (int i = 0; i < dp.size(); ++i)
        f[i] = dp.U[i] * dp.v[i] * std::sqrt(dp.support.weights[i]) * ep.psi(dp.support.points.col(i));
    return to_sectors<double>(f, dp.group_order());
}

struct Calibration {
    double coupling = 1.0;  // factor g applied to V
    double alignment = 0.0; // |cos| between discrete null vector and sampled w psi
    int sector = 0;
    double raw_defect = 0.0; // |x^T (U + vG0v) x| / |x|^2 at g = 1 for the final x
    int iterations = 0;
};

// Quadrature leaves U + vG0v a little away from singular. Find the coupling g
// for which U + g vG0v has a null vector near the sampled w psi: alternate the
// Rayleigh functional g(x) = -x^T U x / x^T K x with inverse iteration at zero
// shift, starting from w psi itself.
inline Calibration calibrate_coupling(const DiscretePotential& dp, const EigenPotential& ep, int threads = 1,
                                      double max_defect = 0.25) {
    const auto K0 = assemble_G(dp, 0, threads);
    const Mat<double> target = sampled_eigenvector(dp, ep);
    Calibration cal;
    Eigen::Index sector = 0;
    target.colwise().norm().maxCoeff(&sector);
    cal.sector = static_cast<int>(sector);
    const Mat<double>& K = K0.blocks[sector];
    const Vec<double>& U = dp.orbit_U;
    const Vec<double> f = target.col(sector).normalized();
    Vec<double> x = f;
    double g = 1.0;
    for (int it = 0; it < 60; ++it) {
        cal.iterations = it + 1;
        const double xkx = x.dot(K * x);
        if (!(xkx > 0.0)) throw SingularOperator("calibration: vG0v is not positive on the iterate");
        g = -x.dot(U.cwiseProduct(x)) / xkx;
        Mat<double> A = g * K;
        A.diagonal() += U;
        Vec<double> y = Eigen::PartialPivLU<Mat<double>>(A).solve(x);
        y.normalize();
        if (y.dot(x) < 0.0) y = -y;
        const double change = (y - x).norm();
        x = y;
        if (change < 1e-13) break;
    }
    g = -x.dot(U.cwiseProduct(x)) / x.dot(K * x);
    cal.coupling = g;
    cal.alignment = std::abs(x.dot(f));
    cal.raw_defect = std::abs(x.dot(K * x) + x.dot(U.cwiseProduct(x)));
    if (!(g > 0.0)) throw SingularOperator("no admissible coupling: the null branch needs g <= 0");
    if (std::abs(g - 1.0) > max_defect)
        throw SingularOperator("coupling calibration moved V by more than the allowed defect; refine the nodes");
    return cal;
}

// ---------------------------------------------------------------- spectral chain

struct SpectralObjects {
    int dim = 0;
    S1Result s1;
    BlockOperator<double> K0, A0, D0, K2, Kodd; // Kodd = vG_{n-2}v
    BlockOperator<double> D1;
    std::vector<Mat<double>> D1_core; // (Q^T K2 Q)^{-1} per sector

    // P_e(x, y) = G0 v D1 v G0 evaluated at two points off the support.
    double pe_kernel(const DiscretePotential& dp, const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
        const Mat<double> gx = static_probe_vector(dp, x, 0), gy = static_probe_vector(dp, y, 0);
        return bilinear<double>(gx, D1.apply(gy));
    }

    // (P_e V 1)(x): the rank-one amplitude of the generic class.
    double pe_v1(const DiscretePotential& dp, const Eigen::VectorXd& x) const {
        Vec<double> u(dp.size());
        for (int i = 0; i < dp.size(); ++i) u[i] = dp.U[i] * dp.v[i] * std::sqrt(dp.support.weights[i]);
        const Mat<double> us = to_sectors<double>(u, dp.group_order());
        return bilinear<double>(static_probe_vector(dp, x, 0), D1.apply(K0.apply(us)));
    }

    // Discrete eigenfunction -G0 v f for each kernel vector f (unnormalised).
    std::vector<double> eigenfunctions(const DiscretePotential& dp, const Eigen::VectorXd& x) const {
        const Mat<double> gx = static_probe_vector(dp, x, 0);
        std::vector<double> out;
        for (int s = 0; s < static_cast<int>(s1.basis.size()); ++s)
            for (int k = 0; k < s1.basis[s].cols(); ++k) out.push_back(-gx.col(s).dot(s1.basis[s].col(k)));
        return out;
    }

    BlockOperator<double> projection() const {
        BlockOperator<double> S;
        for (const auto& Q : s1.basis) S.blocks.push_back(Q * Q.transpose());
        return S;
    }
};

inline SpectralObjects compute_spectral_chain(const DiscretePotential& dp, double threshold = 1e-6, int threads = 1) {
    const int n = dp.dim();
    require_odd_dimension(n, 5);
    SpectralObjects so;
    so.dim = n;
    so.K0 = assemble_G(dp, 0, threads);
    so.A0 = so.K0;
    for (auto& b : so.A0.blocks)
        for (int a = 0; a < b.rows(); ++a) b(a, a) += dp.orbit_U[a];
    so.s1 = compute_S1(so.A0, threshold);
    so.K2 = assemble_G(dp, 2, threads);
    so.Kodd = assemble_G(dp, n - 2, threads);
    const InversionOptions opt;
    for (int s = 0; s < so.A0.sectors(); ++s) {
        const auto& Q = so.s1.basis[s];
        Mat<double> AS = so.A0.blocks[s] + Q * Q.transpose();
        Eigen::PartialPivLU<Mat<double>> lu(AS);
        if (!(lu.rcond() * opt.condition_cap >= 1.0))
            throw SingularOperator("U + vG0v + S1 is numerically singular");
        so.D0.blocks.push_back(lu.inverse());
        const int m = static_cast<int>(AS.rows());
        if (Q.cols() == 0) {
            so.D1.blocks.push_back(Mat<double>::Zero(m, m));
            so.D1_core.emplace_back(0, 0);
            continue;
        }
        const Mat<double> core = Q.transpose() * so.K2.blocks[s] * Q;
        Eigen::SelfAdjointEigenSolver<Mat<double>> es(core);
        const auto& ev = es.eigenvalues();
        if (!(ev.minCoeff() > 1e-10 * ev.cwiseAbs().maxCoeff()))
            throw SingularOperator("S1 vG2v S1 is singular on range(S1)");
        const Mat<double> inv = core.inverse();
        so.D1_core.push_back(inv);
        so.D1.blocks.push_back(Q * inv * Q.transpose());
    }
    return so;
}

// Identity residuals of the chain for a potential with known eigenfunction.
// The discrete V may carry a calibration factor g (dp.coupling); psi belongs to
// g = 1, hence the factors of g below.
struct SpectralChecks {
    double s1_left = 0.0;        // ||S1 + S1 vG0w|| / ||S1||
    double s1_right = 0.0;       // ||S1 + wG0v S1|| / ||S1||
    double d1_support = 0.0;     // ||D1 - S1 D1 S1|| / ||D1||
    double pe_idempotence = 0.0; // ||D1 vG2v D1 - D1|| / ||D1||, i.e. P_e^2 - P_e
    double pe_symmetry = 0.0;    // max |P_e(x,y) - P_e(y,x)| / max |P_e|
    double pe_psi = 0.0;         // max |P_e psi - psi| / max |psi| at probes
    double quadratic_form = 0.0; // |<G2 v f, v f> - ||G0 v f||^2| / ||G0 v f||^2, f = w psi
    double d0_max_imag = 0.0;    // D0 is stored real, so this is 0 by type
};

inline SpectralChecks spectral_checks(const SpectralObjects& so, const DiscretePotential& dp, const EigenPotential& ep,
                                      const std::vector<Eigen::VectorXd>& probes) {
    SpectralChecks c;
    const auto S = so.projection();
    const double s1n = std::max(S.norm(), 1e-300), d1n = std::max(so.D1.norm(), 1e-300);
    double l2 = 0.0, r2 = 0.0, sup2 = 0.0, idem2 = 0.0;
    for (int s = 0; s < S.sectors(); ++s) {
        const Mat<double> KU = so.K0.blocks[s] * dp.orbit_U.asDiagonal();
        const Mat<double> UK = dp.orbit_U.asDiagonal() * so.K0.blocks[s];
        l2 += (S.blocks[s] + S.blocks[s] * KU).squaredNorm();
        r2 += (S.blocks[s] + UK * S.blocks[s]).squaredNorm();
        sup2 += (so.D1.blocks[s] - S.blocks[s] * so.D1.blocks[s] * S.blocks[s]).squaredNorm();
        idem2 += (so.D1.blocks[s] * so.K2.blocks[s] * so.D1.blocks[s] - so.D1.blocks[s]).squaredNorm();
    }
    c.s1_left = std::sqrt(l2) / s1n;
    c.s1_right = std::sqrt(r2) / s1n;
    c.d1_support = std::sqrt(sup2) / d1n;
    c.pe_idempotence = std::sqrt(idem2) / d1n;

    const double g = dp.coupling;
    const Mat<double> f = sampled_eigenvector(dp, ep);
    // v G0 psi = -v G0 G0 V psi = -v G2 V psi, and G0 G0 = G2.
    const Mat<double> vg0psi = -so.D1.apply(so.K2.apply(f)) / g;
    double err = 0.0, scale = 0.0, pe_max = 0.0, asym = 0.0;
    std::vector<Mat<double>> gx;
    for (const auto& x : probes) gx.push_back(static_probe_vector(dp, x, 0));
    for (std::size_t i = 0; i < probes.size(); ++i) {
        const double psi = ep.psi(probes[i]);
        err = std::max(err, std::abs(bilinear<double>(gx[i], vg0psi) - psi));
        scale = std::max(scale, std::abs(psi));
        for (std::size_t j = 0; j < probes.size(); ++j) {
            const double a = bilinear<double>(gx[i], so.D1.apply(gx[j]));
            const double b = bilinear<double>(gx[j], so.D1.apply(gx[i]));
            pe_max = std::max(pe_max, std::abs(a));
            asym = std::max(asym, std::abs(a - b));
        }
    }
    c.pe_psi = err / std::max(scale, 1e-300);
    c.pe_symmetry = asym / std::max(pe_max, 1e-300);
    const double lhs = bilinear<double>(f, so.K2.apply(f)) / (g * g);
    const double rhs = l2_norm_squared(ep);
    c.quadratic_form = std::abs(lhs - rhs) / rhs;
    return c;
}

// ---------------------------------------------------------------- resolvent inverse

// P = M+(lambda)^{-1} per sector, S1-regularised on the sectors that carry it.
inline BlockOperator<cplx> inverse_M(const SpectralObjects& so, const BlockOperator<cplx>& M) {
    BlockOperator<cplx> P;
    for (int s = 0; s < M.sectors(); ++s)
        P.blocks.push_back(jn_inverse_range<cplx>(M.blocks[s], so.s1.basis[s].cast<cplx>()));
    return P;
}

struct InverseSample {
    BlockOperator<cplx> plus;  // M+(lambda)^{-1}
    BlockOperator<cplx> delta; // M+^{-1} - M-^{-1} = -conj(P) (2i Im M+) P
    BlockOperator<cplx> M;     // M+(lambda)
    BlockOperator<double> imag_M;
};

inline InverseSample inverse_sample(const SpectralObjects& so, const DiscretePotential& dp, double lambda,
                                    int threads = 1) {
    InverseSample out;
    out.M = assemble_M(dp, lambda, Side::plus, threads);
    out.plus = inverse_M(so, out.M);
    out.imag_M = assemble_imag_M(dp, lambda, threads);
    for (int s = 0; s < out.M.sectors(); ++s) {
        const Mat<cplx> dK = cplx(0.0, 2.0) * out.imag_M.blocks[s].cast<cplx>();
        out.delta.blocks.push_back(-(out.plus.blocks[s].conjugate() * dK * out.plus.blocks[s]));
    }
    return out;
}

// ---------------------------------------------------------------- Laurent fits

enum class LaurentMode { plus, minus, difference };

inline std::string to_string(LaurentMode m) {
    switch (m) {
    case LaurentMode::plus: return "plus";
    case LaurentMode::minus: return "minus";
    case LaurentMode::difference: return "difference";
    }
    return "?";
}

struct LaurentFit {
    LaurentMode mode = LaurentMode::plus;
    std::vector<int> powers;
    std::vector<BlockOperator<cplx>> coefficients;
    std::vector<double> lambdas;
    double residual = 0.0;  // relative weighted RMS misfit
    double condition = 0.0; // of the scaled, weighted design matrix

    const BlockOperator<cplx>& coefficient(int power) const {
        for (std::size_t i = 0; i < powers.size(); ++i)
            if (powers[i] == power) return coefficients[i];
        throw DomainError("power " + std::to_string(power) + " not fitted");
    }
};

// Default power sets: every power from -2 for M+-^{-1}; only the odd powers from
// n-6 for the difference, which is odd in lambda.
inline std::vector<int> default_laurent_powers(int n, LaurentMode mode) {
    std::vector<int> p;
    if (mode == LaurentMode::difference)
        for (int k = n - 6; k <= n + 4; k += 2) p.push_back(k);
    else
        for (int k = -2; k <= n + 2; ++k) p.push_back(k);
    return p;
}

inline LaurentFit laurent_fit(const SpectralObjects& so, const DiscretePotential& dp, LaurentMode mode,
                              const std::vector<double>& lambdas, std::vector<int> powers = {}, int threads = 1) {
    if (powers.empty()) powers = default_laurent_powers(dp.dim(), mode);
    const int K = static_cast<int>(lambdas.size()), P = static_cast<int>(powers.size());
    if (K < P + 2) throw DegenerateFit("laurent_fit needs at least (number of powers + 2) samples");
    const double lmax = *std::max_element(lambdas.begin(), lambdas.end());
    const int pmin = *std::min_element(powers.begin(), powers.end());
    // Rows weighted by lambda^{-pmin} (relative misfit), columns by lmax^p.
    Mat<double> X(K, P);
    Vec<double> w(K);
    for (int k = 0; k < K; ++k) {
        w[k] = std::pow(lambdas[k], -pmin);
        for (int p = 0; p < P; ++p) X(k, p) = w[k] * std::pow(lambdas[k] / lmax, powers[p]);
    }
    Eigen::JacobiSVD<Mat<double>> svd(X);
    const auto& sv = svd.singularValues();
    LaurentFit fit;
    fit.mode = mode;
    fit.powers = powers;
    fit.lambdas = lambdas;
    fit.condition = sv[0] / sv[sv.size() - 1];
    if (!(fit.condition <= 1e12)) throw DegenerateFit("Laurent design matrix is ill-conditioned; widen the lambda range");

    std::vector<InverseSample> samples(static_cast<std::size_t>(K));
    parallel_for(static_cast<std::size_t>(K), threads,
                 [&](std::size_t k) { samples[k] = inverse_sample(so, dp, lambdas[k]); });
    const int G = dp.group_order(), m = dp.orbit_count();
    fit.coefficients.assign(static_cast<std::size_t>(P), BlockOperator<cplx>{});
    for (auto& c : fit.coefficients) c.blocks.assign(static_cast<std::size_t>(G), Mat<cplx>::Zero(m, m));
    const Eigen::ColPivHouseholderQR<Mat<double>> qr(X);
    double res2 = 0.0, norm2 = 0.0;
    for (int s = 0; s < G; ++s) {
        Mat<cplx> Y(K, static_cast<Eigen::Index>(m) * m);
        for (int k = 0; k < K; ++k) {
            Mat<cplx> data;
            switch (mode) {
            case LaurentMode::plus: data = samples[k].plus.blocks[s]; break;
            case LaurentMode::minus: data = samples[k].plus.blocks[s].conjugate(); break;
            case LaurentMode::difference: data = samples[k].delta.blocks[s]; break;
            }
            Y.row(k) = w[k] * Eigen::Map<const Vec<cplx>>(data.data(), data.size()).transpose();
        }
        const Mat<double> Yr = Y.real(), Yi = Y.imag();
        const Mat<double> Cr = qr.solve(Yr), Ci = qr.solve(Yi);
        res2 += (X * Cr - Yr).squaredNorm() + (X * Ci - Yi).squaredNorm();
        norm2 += Y.squaredNorm();
        for (int p = 0; p < P; ++p) {
            const double unscale = std::pow(lmax, -powers[p]);
            Vec<cplx> row(static_cast<Eigen::Index>(m) * m);
            for (Eigen::Index e = 0; e < row.size(); ++e) row[e] = cplx(Cr(p, e), Ci(p, e)) * unscale;
            fit.coefficients[p].blocks[s] = Eigen::Map<const Mat<cplx>>(row.data(), m, m);
        }
    }
    fit.residual = std::sqrt(res2 / std::max(norm2, 1e-300));
    return fit;
}

// Slope of log ||M+^{-1} - M-^{-1}|| against log lambda.
inline DecayFitResult m_diff_slope(const SpectralObjects& so, const DiscretePotential& dp,
                                   const std::vector<double>& lambdas, int threads = 1) {
    std::vector<double> norms(lambdas.size());
    parallel_for(lambdas.size(), threads,
                 [&](std::size_t k) { norms[k] = inverse_sample(so, dp, lambdas[k]).delta.norm(); });
    return fit_power_law(lambdas, norms);
}

} // namespace zerores
