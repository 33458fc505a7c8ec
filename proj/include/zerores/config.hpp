#pragma once
// Run configuration for the experiment driver, serialised as JSON.

#include <zerores/errors.hpp>
#include <zerores/potentials.hpp>

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace zerores {

struct GridSpec {
    double lo = 0.0;
    double hi = 0.0;
    int count = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GridSpec, lo, hi, count)

// Either a reference geometry by class name, an explicit point set, or a saved
// potential artifact (which takes precedence).
struct PotentialConfig {
    std::string decay_class = "generic";
    std::vector<std::vector<double>> points; // empty: reference geometry of decay_class
    std::vector<double> radii;
    int moment_order = -1; // -1: no moment constraints
    double length_scale = 1.0;
    std::string artifact;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PotentialConfig, decay_class, points, radii, moment_order,
                                                length_scale, artifact)

struct NodeConfig {
    int per_ball = 1500;
    std::string symmetry = "parity"; // parity | none
    int refinement_factor = 2;       // spectral-report repeats the chain at this many times the nodes; 1 skips it
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NodeConfig, per_ball, symmetry, refinement_factor)

struct EvolutionConfig {
    double cutoff = 1.0; // lambda1 used in the time domain and by the integrator probes
    GridSpec times{1e2, 1e5, 10};
    int pairs = 12;
    std::uint64_t probe_seed = 7;
    double probe_min = 2.0; // probe radii in units of the support diameter
    double probe_max = 6.0;
    double wide_probe_max = 30.0; // second, ungated sweep; 0 disables it
    int chebyshev_nodes = 32;
    double leading_time = 1e4;
    bool free_anchor = true;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvolutionConfig, cutoff, times, pairs, probe_seed, probe_min, probe_max,
                                                wide_probe_max, chebyshev_nodes, leading_time, free_anchor)

struct Tolerances {
    double kernel_relative = 1e-10;
    double recurrence = 1e-10;
    double order_slack = 0.05;
    double ibp_slope = 0.05;
    double eigen_identity = 1e-10;
    double psi_decay_slope = 0.1;
    double singular_gap = 10.0;
    double laurent_leading = 0.01;
    double laurent_odd = 0.05;
    double laurent_vanishing = 1e-6;
    double mdiff_slope = 0.15;
    double free_slope = 0.1;
    double generic_slope = 0.15;
    double first_slope = 0.15;
    double second_slope = 0.2;
    double rank_one_correlation = 0.99;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Tolerances, kernel_relative, recurrence, order_slack, ibp_slope,
                                                eigen_identity, psi_decay_slope, singular_gap, laurent_leading,
                                                laurent_odd, laurent_vanishing, mdiff_slope, free_slope,
                                                generic_slope, first_slope, second_slope, rank_one_correlation)

struct RunConfig {
    int dimension = 5;
    double cutoff = 0.25; // lambda1 bounding the low-energy lambda windows
    std::uint64_t seed = 1;
    int threads = 1;
    PotentialConfig potential;
    NodeConfig nodes;
    std::vector<std::string> spectral_stages = {"chain", "laurent"};
    GridSpec laurent{1e-3, 0.0625, 20};
    GridSpec mdiff{1e-3, 0.0625, 12};
    GridSpec difference_probe{3e-3, 3e-2, 8};
    EvolutionConfig evolution;
    Tolerances tolerances;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, dimension, cutoff, seed, threads, potential, nodes,
                                                spectral_stages, laurent,
                                                mdiff, difference_probe, evolution, tolerances)

inline void validate(const RunConfig& c) {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (c.dimension < 5 || c.dimension > kMaxDimension || c.dimension % 2 == 0)
        fail("dimension must be odd and in [5, " + std::to_string(kMaxDimension) + "]");
    if (!(c.cutoff > 0.0) || !(c.evolution.cutoff > 0.0)) fail("cutoffs must be positive");
    if (c.threads < 1) fail("threads must be at least 1");
    if (c.nodes.per_ball < 10) fail("nodes.per_ball must be at least 10");
    if (c.nodes.symmetry != "parity" && c.nodes.symmetry != "none") fail("nodes.symmetry must be parity or none");
    if (c.nodes.refinement_factor < 1) fail("nodes.refinement_factor must be at least 1");
    for (const auto* g : {&c.laurent, &c.mdiff, &c.difference_probe, &c.evolution.times})
        if (!(g->lo > 0.0) || !(g->hi > g->lo) || g->count < 2) fail("grids need 0 < lo < hi and count >= 2");
    if (c.evolution.times.count < 8) fail("evolution.times needs at least 8 points");
    if (c.evolution.pairs < 1) fail("evolution.pairs must be positive");
    if (!(c.evolution.probe_min >= 1.0) || !(c.evolution.probe_max > c.evolution.probe_min))
        fail("probe radii must satisfy 1 <= probe_min < probe_max");
    for (const auto& st : c.spectral_stages)
        if (st != "chain" && st != "laurent") fail("spectral_stages entries must be chain or laurent");
    if (c.evolution.chebyshev_nodes < 4) fail("evolution.chebyshev_nodes must be at least 4");
    if (!(c.potential.length_scale > 0.0)) fail("potential.length_scale must be positive");
    if (c.potential.artifact.empty()) {
        if (c.potential.points.empty()) {
            try {
                (void)decay_class_from_string(c.potential.decay_class);
            } catch (const Error&) {
                fail("unknown decay_class '" + c.potential.decay_class + "'");
            }
        } else if (c.potential.points.size() != c.potential.radii.size()) {
            fail("potential.points and potential.radii differ in length");
        }
    }
}

inline RunConfig parse_config(const std::string& text) {
    RunConfig c;
    try {
        c = nlohmann::json::parse(text).get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    validate(c);
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::json j = c;
    return nlohmann::ordered_json::parse(j.dump());
}

} // namespace zerores
