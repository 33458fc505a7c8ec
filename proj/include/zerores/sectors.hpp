#pragma once
// Block-diagonalisation by reflection symmetry. For nodes stored orbit-major
// (column a*|G| + g), a G-invariant kernel A splits into |G| blocks
//   A_s(a, b) = sum_g chi_s(g) A(p_a, g p_b),
// and vectors transform by f_s(a) = |G|^{-1/2} sum_g chi_s(g) f(g p_a).

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <vector>

namespace zerores {

// In-place unnormalised Walsh-Hadamard transform of length 2^k.
template <class T>
void walsh_hadamard(T* x, int len) {
    for (int h = 1; h < len; h <<= 1)
        for (int i = 0; i < len; i += h << 1)
            for (int j = i; j < i + h; ++j) {
                const T u = x[j], v = x[j + h];
                x[j] = u + v;
                x[j + h] = u - v;
            }
}

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Full vector (length m*G) -> m x G matrix whose column s is the sector-s part.
template <class S>
Mat<S> to_sectors(const Vec<S>& full, int group_order) {
    const int G = group_order;
    const int m = static_cast<int>(full.size()) / G;
    Mat<S> X = Eigen::Map<const Mat<S>>(full.data(), G, m);
    const double scale = 1.0 / std::sqrt(static_cast<double>(G));
    for (int a = 0; a < m; ++a) walsh_hadamard(X.col(a).data(), G);
    return (X * scale).transpose();
}

template <class S>
Vec<S> from_sectors(const Mat<S>& sec) {
    const int G = static_cast<int>(sec.cols());
    const int m = static_cast<int>(sec.rows());
    Mat<S> X = sec.transpose();
    const double scale = 1.0 / std::sqrt(static_cast<double>(G));
    for (int a = 0; a < m; ++a) walsh_hadamard(X.col(a).data(), G);
    X *= scale;
    return Eigen::Map<const Vec<S>>(X.data(), static_cast<Eigen::Index>(m) * G);
}

// Block-diagonal operator in sector form; one block when there is no symmetry.
template <class S>
struct BlockOperator {
    std::vector<Mat<S>> blocks;

    int sectors() const { return static_cast<int>(blocks.size()); }
    int block_size() const { return blocks.empty() ? 0 : static_cast<int>(blocks.front().rows()); }

    Mat<S> apply(const Mat<S>& sec) const {
        Mat<S> out(sec.rows(), sec.cols());
        for (int s = 0; s < sectors(); ++s) out.col(s) = blocks[s] * sec.col(s);
        return out;
    }

    // Frobenius norm of the full operator (the sector transform is orthogonal).
    double norm() const {
        double s2 = 0.0;
        for (const auto& b : blocks) s2 += b.squaredNorm();
        return std::sqrt(s2);
    }

    BlockOperator<std::complex<double>> complexified() const {
        BlockOperator<std::complex<double>> c;
        for (const auto& b : blocks) c.blocks.push_back(b.template cast<std::complex<double>>());
        return c;
    }
};

template <class S>
double distance(const BlockOperator<S>& a, const BlockOperator<S>& b) {
    double s2 = 0.0;
    for (int s = 0; s < a.sectors(); ++s) s2 += (a.blocks[s] - b.blocks[s]).squaredNorm();
    return std::sqrt(s2);
}

// Bilinear pairing sum_s f_s^T g_s (no conjugation) of two sector vectors.
template <class S>
S bilinear(const Mat<S>& f, const Mat<S>& g) {
    return (f.array() * g.array()).sum();
}

} // namespace zerores
