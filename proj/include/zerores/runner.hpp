#pragma once
// The experiment driver behind the command line: each subcommand turns a
// RunConfig into a Report of gated numbers, a JSON summary and CSV tables.

#include <zerores/config.hpp>
#include <zerores/evolution.hpp>
#include <zerores/kernels.hpp>
#include <zerores/operators.hpp>
#include <zerores/potentials.hpp>
#include <zerores/quadrature.hpp>
#include <zerores/report.hpp>

#include <boost/math/special_functions/hankel.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace zerores::run {

using json = nlohmann::ordered_json;

inline json to_json(const DecayFitResult& f) {
    json j;
    j["slope"] = f.slope;
    j["intercept"] = f.intercept;
    j["residual"] = f.residual;
    if (!f.per_pair_slopes.empty()) j["per_pair_slopes"] = f.per_pair_slopes;
    return j;
}

inline std::vector<double> grid(const GridSpec& g) { return log_spaced(g.lo, g.hi, g.count); }

inline std::string fmt(double x) {
    std::ostringstream s;
    s << x;
    return s.str();
}

// ---------------------------------------------------------------- potentials

struct ResolvedPotential {
    PointSourceSpec spec;
    EigenPotential ep;
    DecayClass decay_class = DecayClass::generic;
    std::string source; // "reference", "explicit" or the artifact path
};

inline DecayClass class_of(const std::optional<int>& moment_order) {
    if (!moment_order) return DecayClass::generic;
    return *moment_order == 0 ? DecayClass::first : DecayClass::second;
}

inline json potential_artifact(const ResolvedPotential& p) {
    json j;
    j["dimension"] = p.ep.dim;
    j["decay_class"] = to_string(p.decay_class);
    j["moment_order"] = p.ep.moment_order ? *p.ep.moment_order : -1;
    json centers = json::array();
    for (const auto& c : p.ep.centers) centers.push_back(std::vector<double>(c.data(), c.data() + c.size()));
    j["centers"] = centers;
    j["radii"] = p.ep.radii;
    j["weights"] = p.ep.mu;
    json cont = json::array();
    for (const auto& c : p.ep.cont) cont.push_back({c.a, c.b, c.c});
    j["continuations"] = cont;
    j["support_diameter"] = p.ep.support_diameter();
    return j;
}

namespace detail {

inline Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline ResolvedPotential from_artifact(const std::string& path, int dimension) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read potential artifact " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad potential artifact " + path + ": " + e.what());
    }
    ResolvedPotential r;
    r.spec.dim = j.at("dimension").get<int>();
    if (r.spec.dim != dimension) throw ConfigError("artifact dimension differs from the configured dimension");
    for (const auto& c : j.at("centers")) r.spec.points.push_back(to_vector(c.get<std::vector<double>>()));
    r.spec.radii = j.at("radii").get<std::vector<double>>();
    const int k = j.at("moment_order").get<int>();
    if (k >= 0) r.spec.moment_order = k;
    r.ep = build_eigenpair(r.spec);
    const auto mu = j.at("weights").get<std::vector<double>>();
    if (mu.size() != r.ep.mu.size()) throw ConfigError("artifact weights do not match its geometry");
    for (std::size_t i = 0; i < mu.size(); ++i)
        if (std::abs(mu[i] - r.ep.mu[i]) > 1e-12) throw ConfigError("artifact weights do not match its geometry");
    r.decay_class = class_of(r.spec.moment_order);
    r.source = path;
    return r;
}

} // namespace detail

inline ResolvedPotential resolve_potential(const RunConfig& cfg) {
    const auto& pc = cfg.potential;
    if (!pc.artifact.empty()) return detail::from_artifact(pc.artifact, cfg.dimension);
    ResolvedPotential r;
    if (pc.points.empty()) {
        r.spec = standard_point_sources(decay_class_from_string(pc.decay_class), cfg.dimension);
        r.source = "reference";
    } else {
        r.spec.dim = cfg.dimension;
        for (const auto& p : pc.points) {
            if (static_cast<int>(p.size()) != cfg.dimension) throw ConfigError("potential point of wrong dimension");
            r.spec.points.push_back(detail::to_vector(p));
        }
        r.spec.radii = pc.radii;
        if (pc.moment_order >= 0) r.spec.moment_order = pc.moment_order;
        r.source = "explicit";
    }
    if (pc.length_scale != 1.0) r.spec = scaled(r.spec, pc.length_scale);
    r.ep = build_eigenpair(r.spec);
    r.decay_class = class_of(r.spec.moment_order);
    return r;
}

// Decay exponents of psi, of the propagator and of ||M+^{-1} - M-^{-1}||.
inline double psi_exponent(DecayClass c, int n) {
    return c == DecayClass::generic ? 2.0 - n : (c == DecayClass::first ? 1.0 - n : -1.0 * n);
}
inline double time_exponent(DecayClass c, int n) {
    return c == DecayClass::generic ? 2.0 - 0.5 * n : (c == DecayClass::first ? 1.0 - 0.5 * n : -0.5 * n);
}
inline double mdiff_exponent(DecayClass c, int n) {
    return c == DecayClass::generic ? n - 6.0 : (c == DecayClass::first ? n - 4.0 : n - 2.0);
}
inline double time_tolerance(DecayClass c, const Tolerances& t) {
    return c == DecayClass::generic ? t.generic_slope : (c == DecayClass::first ? t.first_slope : t.second_slope);
}

// ---------------------------------------------------------------- discretisation

struct Discretised {
    SupportNodes nodes;
    DiscretePotential dp;
    Calibration calibration;
    SpectralObjects so;
};

inline Discretised discretise(const ResolvedPotential& pot, const RunConfig& cfg, int per_ball) {
    Discretised d;
    const MirrorGroup grp = cfg.nodes.symmetry == "parity" ? parity_mirror_group(pot.decay_class) : MirrorGroup{};
    d.nodes = build_nodes(pot.ep.balls(), per_ball, cfg.seed, grp);
    const auto raw = discretize(pot.ep, d.nodes);
    d.calibration = calibrate_coupling(raw, pot.ep, cfg.threads);
    d.dp = with_coupling(raw, d.calibration.coupling);
    d.so = compute_spectral_chain(d.dp, 1e-6, cfg.threads);
    return d;
}

inline json to_json(const Calibration& c) {
    json j;
    j["coupling"] = c.coupling;
    j["alignment"] = c.alignment;
    j["sector"] = c.sector;
    j["raw_defect"] = c.raw_defect;
    j["iterations"] = c.iterations;
    return j;
}

// ---------------------------------------------------------------- self-tests

// Closed forms against (i/4) (lambda / (2 pi r))^nu H^(1)_nu(lambda r), nu = (n-2)/2.
inline void check_kernel_closed_forms(const RunConfig& cfg, Report& rep) {
    CsvTable tab({"n", "lambda", "r", "relative_error"});
    const auto lams = log_spaced(0.01, 1.0, 20), rs = log_spaced(0.1, 10.0, 20);
    double worst = 0.0;
    for (int n : {3, 5}) {
        const double nu = 0.5 * (n - 2);
        for (double l : lams)
            for (double r : rs) {
                const cplx oracle = cplx(0.0, 0.25) * std::pow(l / (2.0 * std::numbers::pi * r), nu) *
                                    boost::math::cyl_hankel_1(nu, l * r);
                const double e = std::abs(resolvent_kernel(n, l, r) - oracle) / std::abs(oracle);
                worst = std::max(worst, e);
                tab.row(n, l, r, e);
            }
    }
    rep.summary()["closed_form_max_relative_error"] = worst;
    rep.at_most("kernel.closed_form", worst, cfg.tolerances.kernel_relative,
                "outgoing kernels for n = 3, 5 equal the Hankel representation on a 20x20 grid");
    rep.table("kernel_closed_form.csv", tab);
}

inline void check_recurrence(const RunConfig& cfg, Report& rep) {
    CsvTable tab({"n", "lambda", "r", "residual", "scaled_residual", "finite_difference_error"});
    const auto lams = log_spaced(0.01, 1.0, 20), rs = log_spaced(0.1, 10.0, 20);
    double worst = 0.0, fd_worst = 0.0;
    json kappa;
    for (int n : {5, 7}) {
        for (double l : lams)
            for (double r : rs) {
                const double res = recurrence_residual(n, l, r);
                const double scaled = res / (std::abs(resolvent_kernel(n - 2, l, r)) + 1.0);
                // independent check of the closed-form derivative
                const double h = 1e-5 * std::max(l, 1.0);
                const cplx fd = (resolvent_kernel(n, l + h, r) - resolvent_kernel(n, l - h, r)) / (2.0 * h * l);
                const cplx exact = kernel_lambda_derivative_over_lambda(n, l, r);
                const double fde = std::abs(fd - exact) / std::max(std::abs(exact), 1e-300);
                worst = std::max(worst, scaled);
                fd_worst = std::max(fd_worst, fde);
                tab.row(n, l, r, res, scaled, fde);
            }
        const cplx k = recurrence_constant(n);
        kappa[std::to_string(n)] = {k.real(), k.imag()};
    }
    rep.summary()["recurrence_constant"] = kappa;
    rep.summary()["recurrence_max_scaled_residual"] = worst;
    rep.at_most("kernel.recurrence", worst, cfg.tolerances.recurrence,
                "(1/lambda) d/dlambda of the n-kernel is a fixed multiple of the (n-2)-kernel, n = 5, 7");
    rep.at_most("kernel.derivative_vs_finite_difference", fd_worst, 1e-6,
                "closed-form lambda derivative agrees with central differences");
    rep.table("recurrence.csv", tab);
}

inline void check_expansion_orders(const RunConfig& cfg, Report& rep) {
    const int n = cfg.dimension;
    const double r = 1.0;
    const auto lams = log_spaced(1e-3, 0.1, 12);
    CsvTable tab({"order", "lambda", "abs_error"});
    json slopes;
    for (int order : {n - 2, n - 1, n, n + 2}) {
        std::vector<double> err;
        for (double l : lams) {
            err.push_back(std::abs(expansion_error(n, l, r, order)));
            tab.row(order, l, err.back());
        }
        const auto f = fit_power_law(lams, err);
        slopes[std::to_string(order)] = f.slope;
        rep.at_least("kernel.expansion_order_" + std::to_string(order), f.slope, order - cfg.tolerances.order_slack,
                     "remainder of the truncation through order " + std::to_string(order) +
                         " vanishes at least like lambda^" + std::to_string(order));
    }
    rep.summary()["expansion_remainder_slopes"] = slopes;
    rep.table("expansion_orders.csv", tab);
}

inline void check_integrator(const RunConfig& cfg, Report& rep) {
    const auto tg = grid(cfg.evolution.times);
    const CutoffSpec spec{cfg.evolution.cutoff};
    json slopes;
    CsvTable tab({"k", "t", "abs_integral"});
    for (int k = 0; k <= 4; ++k) {
        const auto f = ibp_decay_probe(k, tg, spec);
        slopes[std::to_string(k)] = f.slope;
        for (double t : tg)
            tab.row(k, t, std::abs(oscillatory_integrate(t, [k](double l) { return cplx(std::pow(l, k), 0.0); }, spec)));
        rep.within("integrator.ibp_slope_k" + std::to_string(k), f.slope, -0.5 * (k + 1), cfg.tolerances.ibp_slope,
                   "int e^{it lambda^2} lambda^k chi dlambda decays like t^{-(k+1)/2}");
    }
    rep.summary()["ibp_slopes"] = slopes;
    rep.summary()["ibp_cutoff"] = cfg.evolution.cutoff;
    rep.table("ibp_decay.csv", tab);
}

// Regularised inversion against direct inversion on random complex matrices,
// and the singular case: A singular <=> the reduced operator B is singular.
inline void check_jn_inversion(const RunConfig& cfg, Report& rep) {
    std::mt19937_64 rng(cfg.seed + 17);
    std::normal_distribution<double> g(0.0, 1.0);
    auto rnd = [&](int r, int c) {
        Mat<cplx> m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = cplx(g(rng), g(rng));
        return m;
    };
    double worst = 0.0;
    int singular_detected = 0, singular_cases = 0, false_alarms = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const int m = 4 + static_cast<int>(rng() % 27), k = 1 + static_cast<int>(rng() % 3);
        const Mat<cplx> A = rnd(m, m);
        const Eigen::HouseholderQR<Mat<cplx>> qr(rnd(m, k));
        const Mat<cplx> Q = qr.householderQ() * Mat<cplx>::Identity(m, k);
        try {
            const Mat<cplx> J = jn_inverse_range<cplx>(A, Q);
            const Mat<cplx> D = A.inverse();
            worst = std::max(worst, (J - D).norm() / D.norm());
        } catch (const SingularOperator&) {
            ++false_alarms;
        }
        // Rank-deficient A whose kernel is seen by Q: A + QQ* stays invertible.
        Mat<cplx> As = A;
        const Vec<cplx> z = rnd(m, 1);
        As -= (As * z) * z.adjoint() / z.squaredNorm();
        ++singular_cases;
        try {
            (void)jn_inverse_range<cplx>(As, Q);
        } catch (const SingularOperator&) {
            ++singular_detected;
        }
    }
    rep.summary()["jn_max_relative_error"] = worst;
    rep.summary()["jn_singular_detected"] = singular_detected;
    rep.summary()["jn_singular_cases"] = singular_cases;
    rep.at_most("jn.relative_error", worst, 1e-8, "regularised inverse equals the direct inverse (200 instances)");
    rep.at_most("jn.false_singular", false_alarms, 0, "invertible A is never reported singular");
    rep.at_least("jn.singular_detected", singular_detected, singular_cases,
                 "singular A is reported singular through the reduced operator");
}

inline Report kernels_selftest(const RunConfig& cfg) {
    Report rep("kernels-selftest");
    check_kernel_closed_forms(cfg, rep);
    check_recurrence(cfg, rep);
    check_expansion_orders(cfg, rep);
    check_integrator(cfg, rep);
    check_jn_inversion(cfg, rep);
    return rep;
}

// ---------------------------------------------------------------- make-potential

inline void check_potential(const ResolvedPotential& pot, const RunConfig& cfg, Report& rep, const std::string& tag) {
    const int n = pot.ep.dim;
    const double diam = pot.ep.support_diameter();
    const auto radii = log_spaced(4.0 * diam, 40.0 * diam, 8);
    const auto slope = decay_slope(pot.ep, radii, 64, cfg.seed);
    const double target = psi_exponent(pot.decay_class, n);
    const double ident = eigen_identity_residual(pot.ep);
    const auto mom = moment_integrals(pot.ep);
    const double first = mom.first.cwiseAbs().maxCoeff();
    const double tol = mom.quadrature_error;
    json j;
    j["decay_class"] = to_string(pot.decay_class);
    j["source"] = pot.source;
    j["support_diameter"] = diam;
    j["psi_decay"] = to_json(slope);
    j["eigen_identity_residual"] = ident;
    j["moment_zeroth"] = mom.zeroth;
    j["moment_first_max"] = first;
    j["moment_quadrature_error"] = tol;
    j["shrink_steps"] = pot.ep.shrink_steps;
    rep.summary()[tag] = j;

    const std::string cls = to_string(pot.decay_class);
    rep.within(tag + ".psi_decay_slope", slope.slope, target, cfg.tolerances.psi_decay_slope,
               "the " + cls + " eigenfunction decays like |x|^" + fmt(target));
    rep.at_most(tag + ".eigen_identity", ident, cfg.tolerances.eigen_identity, "Delta psi = V psi with psi in C^2");
    // Class ladder: a vanishing moment sits at quadrature level, a present one well above it.
    const bool zeroth_vanishes = pot.decay_class != DecayClass::generic;
    const bool first_vanishes = pot.decay_class == DecayClass::second;
    if (zeroth_vanishes)
        rep.at_most(tag + ".moment_zeroth", std::abs(mom.zeroth), tol, "int V psi vanishes for the " + cls + " class");
    else
        rep.at_least(tag + ".moment_zeroth", std::abs(mom.zeroth), 1e3 * tol, "int V psi is nonzero for the generic class");
    if (first_vanishes)
        rep.at_most(tag + ".moment_first", first, tol, "int x_j V psi vanishes for the second class");
    else if (zeroth_vanishes)
        rep.at_least(tag + ".moment_first", first, 1e3 * tol, "some int x_j V psi is nonzero for the first class");

    // Same direction set as decay_slope, so the table is the fitted data.
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Eigen::VectorXd> dirs;
    for (int k = 0; k < 64; ++k) {
        Eigen::VectorXd w(n);
        for (int q = 0; q < n; ++q) w[q] = g(rng);
        dirs.push_back(w / w.norm());
    }
    CsvTable tab({"radius", "max_abs_psi"});
    for (double R : radii) {
        double m = 0.0;
        for (const auto& w : dirs) m = std::max(m, std::abs(pot.ep.psi(R * w)));
        tab.row(R, m);
    }
    rep.table(tag + "_decay.csv", tab);
}

inline Report make_potential(const RunConfig& cfg) {
    Report rep("make-potential");
    const auto pot = resolve_potential(cfg);
    check_potential(pot, cfg, rep, "potential");
    rep.artifact("potential.json", potential_artifact(pot));
    return rep;
}

// ---------------------------------------------------------------- spectral-report

struct ChainSummary {
    double tau = 0.0;
    SpectralChecks checks;
    json j;
};

inline ChainSummary chain_summary(const ResolvedPotential& pot, const Discretised& d, const RunConfig& cfg) {
    ChainSummary s;
    std::mt19937_64 rng(cfg.seed + 101);
    std::normal_distribution<double> g(0.0, 1.0);
    const double diam = d.nodes.support_diameter();
    std::vector<Eigen::VectorXd> probes;
    for (int i = 0; i < 12; ++i) {
        Eigen::VectorXd x(pot.ep.dim);
        for (int k = 0; k < pot.ep.dim; ++k) x[k] = g(rng);
        probes.push_back(x * ((2.0 + 4.0 * i / 11.0) * diam / x.norm()));
    }
    s.checks = spectral_checks(d.so, d.dp, pot.ep, probes);
    const auto& c = s.checks;
    // Discretisation level: how far the discrete problem is from the continuum
    // one, seen through the calibration and the two identities involving psi.
    s.tau = std::max({std::abs(d.calibration.coupling - 1.0), 1.0 - d.calibration.alignment, c.pe_psi, c.quadratic_form});
    double pe_max = 0.0;
    for (const auto& x : probes) pe_max = std::max(pe_max, std::abs(d.so.pe_kernel(d.dp, x, x)));
    auto& j = s.j;
    j["nodes"] = d.dp.size();
    j["sectors"] = d.dp.group_order();
    j["calibration"] = to_json(d.calibration);
    j["S1_rank"] = d.so.s1.rank;
    j["S1_rank_warning"] = d.so.s1.rank_warning;
    j["singular_value_gap"] = d.so.s1.gap_ratio;
    const auto& sv = d.so.s1.singular_values;
    j["singular_values_smallest"] = std::vector<double>(sv.begin(), sv.begin() + std::min<std::size_t>(8, sv.size()));
    j["tau_disc"] = s.tau;
    j["s1_left"] = c.s1_left;
    j["s1_right"] = c.s1_right;
    j["d1_support"] = c.d1_support;
    j["pe_idempotence"] = c.pe_idempotence;
    j["pe_symmetry"] = c.pe_symmetry;
    j["pe_psi"] = c.pe_psi;
    j["quadratic_form"] = c.quadratic_form;
    j["pe_diagonal_max_at_probes"] = pe_max;
    return s;
}

inline void check_chain(const ResolvedPotential& pot, const RunConfig& cfg, Report& rep, const std::string& tag,
                        const Discretised& d) {
    auto base = chain_summary(pot, d, cfg);
    const auto& c = base.checks;
    const double tau = base.tau;
    rep.within(tag + ".S1_rank", d.so.s1.rank, 1, 0.0, "the threshold kernel of U + vG0v is one-dimensional");
    rep.at_least(tag + ".singular_gap", d.so.s1.gap_ratio, cfg.tolerances.singular_gap,
                 "kernel and range of U + vG0v are separated by a clear singular-value gap");
    rep.at_most(tag + ".s1_identity", std::max(c.s1_left, c.s1_right), tau, "S1 + S1 vG0w = 0 at discretisation level");
    rep.at_most(tag + ".pe_idempotence", c.pe_idempotence, tau, "P_e is idempotent at discretisation level");
    rep.at_most(tag + ".pe_symmetry", c.pe_symmetry, tau, "P_e is self-adjoint at discretisation level");
    rep.at_most(tag + ".d1_support", c.d1_support, tau, "D1 lives on range(S1)");
    rep.at_most(tag + ".pe_psi", c.pe_psi, tau, "P_e psi = psi at probe points");
    rep.at_most(tag + ".quadratic_form", c.quadratic_form, tau, "<vG2v f, f> reproduces ||psi||^2 (D1 normalisation)");
    json j = base.j;
    if (cfg.nodes.refinement_factor > 1) {
        const auto fine = discretise(pot, cfg, cfg.nodes.per_ball * cfg.nodes.refinement_factor);
        const auto fs = chain_summary(pot, fine, cfg);
        j["refined"] = fs.j;
        rep.at_most(tag + ".tau_refinement", fs.tau, tau,
                    "the discretisation level shrinks under " + std::to_string(cfg.nodes.refinement_factor) +
                        "x node refinement");
    }
    rep.summary()[tag] = j;
}

inline BlockOperator<cplx> times(const BlockOperator<double>& a, cplx s) {
    BlockOperator<cplx> out;
    for (const auto& b : a.blocks) out.blocks.push_back(s * b.cast<cplx>());
    return out;
}

inline void check_laurent(const ResolvedPotential& pot, const RunConfig& cfg, Report& rep, const std::string& tag,
                          const Discretised& d) {
    const int n = pot.ep.dim;
    const auto& so = d.so;
    const auto lams = grid(cfg.laurent);
    json j;
    const auto plus = laurent_fit(so, d.dp, LaurentMode::plus, lams, {}, cfg.threads);
    const auto& lead = plus.coefficient(-2);
    const double d1n = so.D1.norm();
    const double to_minus = distance(lead, times(so.D1, -1.0)) / d1n;
    const double to_plus = distance(lead, times(so.D1, 1.0)) / d1n;
    j["plus_fit_residual"] = plus.residual;
    j["plus_fit_condition"] = plus.condition;
    j["leading_distance_to_minus_D1"] = to_minus;
    j["leading_distance_to_plus_D1"] = to_plus;
    rep.at_most(tag + ".leading_is_minus_D1", to_minus, cfg.tolerances.laurent_leading,
                "the lambda^-2 coefficient of M+^{-1} equals -D1 (as stated); compare leading_distance_to_plus_D1");

    const auto diff = laurent_fit(so, d.dp, LaurentMode::difference, lams, {}, cfg.threads);
    const auto& odd = diff.coefficient(n - 6);
    BlockOperator<double> dkd;
    for (int s = 0; s < so.D1.sectors(); ++s) dkd.blocks.push_back(so.D1.blocks[s] * so.Kodd.blocks[s] * so.D1.blocks[s]);
    const double ref = dkd.norm();
    const double natural = d1n * d1n * so.Kodd.norm(); // size of D1 K D1 without cancellation
    j["difference_fit_residual"] = diff.residual;
    j["odd_coefficient_norm"] = odd.norm();
    j["odd_reference_norm"] = ref;
    j["odd_natural_scale"] = natural;
    if (pot.decay_class == DecayClass::generic) {
        const double to_plus_2i = distance(odd, times(dkd, cplx(0.0, 2.0))) / (2.0 * ref);
        const double to_minus_2i = distance(odd, times(dkd, cplx(0.0, -2.0))) / (2.0 * ref);
        j["odd_distance_to_plus_2i_D1KD1"] = to_plus_2i;
        j["odd_distance_to_minus_2i_D1KD1"] = to_minus_2i;
        rep.at_most(tag + ".odd_is_plus_2i_D1KD1", to_plus_2i, cfg.tolerances.laurent_odd,
                    "the lambda^{n-6} difference coefficient equals 2i D1 vG_{n-2}v D1 (as stated); compare "
                    "odd_distance_to_minus_2i_D1KD1");
    } else {
        const double rel = odd.norm() / natural;
        j["odd_relative_size"] = rel;
        rep.at_most(tag + ".odd_vanishes", rel, cfg.tolerances.laurent_vanishing,
                    "the lambda^{n-6} difference coefficient vanishes when int V psi = 0");
    }
    rep.summary()[tag] = j;
}

inline void check_mdiff(const ResolvedPotential& pot, const RunConfig& cfg, Report& rep, const std::string& tag,
                        const Discretised& d, bool with_table) {
    const int n = pot.ep.dim;
    const auto lams = grid(cfg.mdiff);
    std::vector<double> norms(lams.size());
    parallel_for(lams.size(), cfg.threads,
                 [&](std::size_t k) { norms[k] = inverse_sample(d.so, d.dp, lams[k]).delta.norm(); });
    const auto f = fit_power_law(lams, norms);
    const double target = mdiff_exponent(pot.decay_class, n);
    json j;
    j["fit"] = to_json(f);
    j["target"] = target;
    rep.within(tag + ".mdiff_slope", f.slope, target, cfg.tolerances.mdiff_slope,
               "||M+^{-1} - M-^{-1}|| scales like lambda^" + fmt(target) + " for the " + to_string(pot.decay_class) +
                   " class");
    if (with_table) {
        CsvTable tab({"lambda", "norm"});
        for (std::size_t k = 0; k < lams.size(); ++k) tab.row(lams[k], norms[k]);
        rep.table("mdiff.csv", tab);
    }
    rep.summary()[tag] = j;
}

// Pointwise tail of R_V^+ - R_V^- at probe pairs; gated for the generic class.
inline void check_difference_probe(const ResolvedPotential& pot, const RunConfig& cfg, Report& rep,
                                   const std::string& tag, const Discretised& d) {
    const int n = pot.ep.dim;
    const auto pairs = probe_pairs(n, d.nodes.support_diameter(), cfg.evolution.pairs, cfg.evolution.probe_seed,
                                   cfg.evolution.probe_min, cfg.evolution.probe_max);
    const auto lams = grid(cfg.difference_probe);
    std::vector<double> sup(lams.size());
    parallel_for(lams.size(), cfg.threads, [&](std::size_t k) {
        double m = 0.0;
        for (const auto& v : resolvent_difference_tails(d.so, d.dp, pairs, lams[k])) m = std::max(m, std::abs(v));
        sup[k] = m;
    });
    const auto f = fit_power_law(lams, sup);
    json j;
    j["fit"] = to_json(f);
    CsvTable tab({"lambda", "max_abs_tail"});
    for (std::size_t k = 0; k < lams.size(); ++k) tab.row(lams[k], sup[k]);
    rep.table("resolvent_difference.csv", tab);
    if (pot.decay_class == DecayClass::generic)
        rep.within(tag + ".tail_slope", f.slope, n - 6.0, 0.15,
                   "the pointwise tail of R_V^+ - R_V^- scales like lambda^{n-6} for the generic class");
    rep.summary()[tag] = j;
}

inline Report spectral_report(const RunConfig& cfg) {
    Report rep("spectral-report");
    const auto pot = resolve_potential(cfg);
    const auto d = discretise(pot, cfg, cfg.nodes.per_ball);
    rep.summary()["decay_class"] = to_string(pot.decay_class);
    const auto& st = cfg.spectral_stages;
    auto want = [&](const char* s) { return std::find(st.begin(), st.end(), s) != st.end(); };
    if (want("chain")) check_chain(pot, cfg, rep, "chain", d);
    if (want("laurent")) {
        check_laurent(pot, cfg, rep, "laurent", d);
        check_mdiff(pot, cfg, rep, "mdiff", d, false);
    }
    CsvTable sv({"index", "singular_value"});
    for (std::size_t i = 0; i < d.so.s1.singular_values.size(); ++i) sv.row(i, d.so.s1.singular_values[i]);
    rep.table("singular_values.csv", sv);
    return rep;
}

inline Report mdiff_scan(const RunConfig& cfg) {
    Report rep("mdiff-scan");
    const auto pot = resolve_potential(cfg);
    const auto d = discretise(pot, cfg, cfg.nodes.per_ball);
    rep.summary()["decay_class"] = to_string(pot.decay_class);
    check_mdiff(pot, cfg, rep, "mdiff", d, true);
    check_difference_probe(pot, cfg, rep, "difference_probe", d);
    return rep;
}

// ---------------------------------------------------------------- decay-scan

inline Report decay_scan_report(const RunConfig& cfg) {
    Report rep("decay-scan");
    const auto pot = resolve_potential(cfg);
    const int n = pot.ep.dim;
    const auto d = discretise(pot, cfg, cfg.nodes.per_ball);
    const auto& ec = cfg.evolution;
    const double diam = d.nodes.support_diameter();
    const auto tg = grid(ec.times);
    const CutoffSpec spec{ec.cutoff};
    StoneOptions opt;
    opt.chebyshev_nodes = ec.chebyshev_nodes;
    opt.threads = cfg.threads;
    const auto pairs = probe_pairs(n, diam, ec.pairs, ec.probe_seed, ec.probe_min, ec.probe_max);
    const StoneEvaluator ev(&d.so, &d.dp, pairs, spec, opt, n);
    const auto scan = decay_scan(ev, tg, cfg.threads);

    json& s = rep.summary();
    s["decay_class"] = to_string(pot.decay_class);
    s["support_diameter"] = diam;
    s["nodes"] = d.dp.size();
    s["calibration"] = to_json(d.calibration);
    s["chebyshev_tail"] = ev.chebyshev_tail();
    s["fit"] = to_json(scan.fit);
    std::vector<double> tail_sup;
    for (const auto& row : scan.samples) {
        double m = 0.0;
        for (const auto& x : row) m = std::max(m, std::abs(x.tail));
        tail_sup.push_back(m);
    }
    s["tail_only_fit"] = to_json(fit_power_law(tg, tail_sup));
    const double target = time_exponent(pot.decay_class, n);
    s["target"] = target;
    rep.within("decay.class_slope", scan.fit.slope, target, time_tolerance(pot.decay_class, cfg.tolerances),
               "sup over probe pairs of the propagator kernel decays like t^" + fmt(target) + " for the " +
                   to_string(pot.decay_class) + " class");

    CsvTable tab({"t", "pair", "abs_value", "re_value", "im_value", "re_free", "im_free", "re_tail", "im_tail"});
    for (const auto& row : scan.samples)
        for (const auto& x : row)
            tab.row(x.t, x.pair, std::abs(x.value), x.value.real(), x.value.imag(), x.free.real(), x.free.imag(),
                    x.tail.real(), x.tail.imag());
    rep.table("decay_samples.csv", tab);

    if (ec.free_anchor) {
        const StoneEvaluator fr(nullptr, nullptr, pairs, spec, opt, n);
        const auto fs = decay_scan(fr, tg, cfg.threads);
        s["free_fit"] = to_json(fs.fit);
        rep.within("decay.free_slope", fs.fit.slope, -0.5 * n, cfg.tolerances.free_slope,
                   "the free low-energy propagator kernel decays like t^{-n/2}");
    }

    if (pot.decay_class == DecayClass::generic) {
        const auto pred = rank_one_predictor(d.so, d.dp, pairs);
        const auto samples = ev.evaluate(ec.leading_time);
        const auto lt = leading_term_compare(samples, pred, n);
        json j;
        j["t"] = lt.t;
        j["constant"] = {lt.constant.real(), lt.constant.imag()};
        j["correlation"] = lt.correlation;
        // value / (psi(x) psi(y) (int V psi)^2) across pairs, relative spread
        const auto mom = moment_integrals(pot.ep);
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const double q = std::abs(samples[k].value) /
                             std::abs(pot.ep.psi(pairs[k].x) * pot.ep.psi(pairs[k].y) * mom.zeroth * mom.zeroth);
            lo = std::min(lo, q);
            hi = std::max(hi, q);
        }
        j["psi_ratio_spread"] = hi / lo - 1.0;
        const auto rem = leading_term_remainder(scan, pred, n);
        j["remainder_fit"] = to_json(rem.fit);
        s["leading_term"] = j;
        rep.at_least("decay.rank_one_correlation", lt.correlation, cfg.tolerances.rank_one_correlation,
                     "at large t the generic kernel is proportional to (P_e V 1)(x) (P_e V 1)(y)");
    }

    if (ec.wide_probe_max > ec.probe_max) {
        const auto wide = probe_pairs(n, diam, ec.pairs, ec.probe_seed + 1, ec.probe_min, ec.wide_probe_max);
        const StoneEvaluator wv(&d.so, &d.dp, wide, spec, opt, n);
        s["wide_probe_fit"] = to_json(decay_scan(wv, tg, cfg.threads).fit);
    }
    return rep;
}

// ---------------------------------------------------------------- dispatch

inline const std::vector<std::string>& commands() {
    static const std::vector<std::string> c = {"kernels-selftest", "make-potential", "spectral-report", "mdiff-scan",
                                               "decay-scan"};
    return c;
}

inline Report run_command(const std::string& cmd, const RunConfig& cfg) {
    validate(cfg);
    if (cmd == "kernels-selftest") return kernels_selftest(cfg);
    if (cmd == "make-potential") return make_potential(cfg);
    if (cmd == "spectral-report") return spectral_report(cfg);
    if (cmd == "mdiff-scan") return mdiff_scan(cfg);
    if (cmd == "decay-scan") return decay_scan_report(cfg);
    throw ConfigError("unknown subcommand '" + cmd + "'");
}

} // namespace zerores::run
