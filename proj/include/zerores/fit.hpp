#pragma once

#include <zerores/errors.hpp>

#include <cmath>
#include <vector>

namespace zerores {

struct DecayFitResult {
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0; // RMS of log-space residuals
    std::vector<double> per_pair_slopes;
};

// Least-squares line through (log x, log y). Points with y below 1e-300 are
// dropped; fewer than two usable points is a degenerate fit.
inline DecayFitResult fit_power_law(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DegenerateFit("fit_power_law: size mismatch");
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(y[i]) || !std::isfinite(x[i]) || x[i] <= 0.0)
            throw DegenerateFit("fit_power_law: non-finite or non-positive sample");
        if (std::abs(y[i]) < 1e-300) continue;
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(std::abs(y[i])));
    }
    if (lx.size() < 2) throw DegenerateFit("fit_power_law: fewer than two samples above 1e-300");
    const double k = static_cast<double>(lx.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= k;
    my /= k;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (sxx <= 0.0) throw DegenerateFit("fit_power_law: abscissae coincide");
    DecayFitResult r;
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    double ss = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double e = ly[i] - (r.intercept + r.slope * lx[i]);
        ss += e * e;
    }
    r.residual = std::sqrt(ss / k);
    return r;
}

inline std::vector<double> log_spaced(double lo, double hi, int count) {
    if (count < 2 || !(lo > 0.0) || !(hi > lo)) throw DegenerateFit("log_spaced: bad range");
    std::vector<double> g(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        g[static_cast<std::size_t>(i)] = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (count - 1));
    return g;
}

} // namespace zerores
