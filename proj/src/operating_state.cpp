#include <string>

#include "nkscreen/errors.hpp"
#include "nkscreen/grid_model.hpp"
#include "nkscreen/powerflow.hpp"
#include "nkscreen/rng.hpp"

namespace nkscreen {

std::size_t feature_length(const NetworkCase& net) {
    return 2 * static_cast<std::size_t>(net.bus_count()) + 2 * static_cast<std::size_t>(net.gen_count());
}

namespace {

std::vector<double> features_of(const NetworkCase& applied) {
    const int nb = applied.bus_count();
    const int ng = applied.gen_count();
    std::vector<double> x(feature_length(applied));
    const double base = applied.base_mva;
    for (int i = 0; i < nb; ++i) {
        x[i] = applied.buses[i].p_load_mw / base;
        x[nb + i] = applied.buses[i].q_load_mvar / base;
    }
    for (int g = 0; g < ng; ++g) {
        x[2 * nb + g] = applied.generators[g].p_mw / base;
        x[2 * nb + ng + g] = applied.generators[g].v_set;
    }
    return x;
}

}  // namespace

NetworkCase apply_state(const NetworkCase& net, const OperatingState& state) {
    if (state.load_scale.size() != net.buses.size() || state.gen_scale.size() != net.generators.size())
        throw ValidationError("operating state does not match the case dimensions");
    NetworkCase out = net;
    for (std::size_t i = 0; i < out.buses.size(); ++i) {
        out.buses[i].p_load_mw *= state.load_scale[i].first;
        out.buses[i].q_load_mvar *= state.load_scale[i].second;
    }
    for (std::size_t g = 0; g < out.generators.size(); ++g) out.generators[g].p_mw *= state.gen_scale[g];
    return out;
}

OperatingState make_state(const NetworkCase& net, std::string state_id,
                          std::vector<std::pair<double, double>> load_scale, std::vector<double> gen_scale) {
    for (const auto& [p, q] : load_scale)
        if (!(p > 0.0) || !(q > 0.0)) throw ValidationError("load multipliers must be strictly positive");
    for (double g : gen_scale)
        if (!(g > 0.0)) throw ValidationError("generator multipliers must be strictly positive");
    OperatingState s;
    s.state_id = std::move(state_id);
    s.load_scale = std::move(load_scale);
    s.gen_scale = std::move(gen_scale);
    s.feature_vector = features_of(apply_state(net, s));
    return s;
}

OperatingState nominal_state(const NetworkCase& net) {
    return make_state(net, "nominal", std::vector<std::pair<double, double>>(net.buses.size(), {1.0, 1.0}),
                      std::vector<double>(net.generators.size(), 1.0));
}

OperatingState perturb_state(const NetworkCase& net, std::uint64_t seed, Interval load_range, Interval gen_range,
                             const SolverOptions& solver, int retries, int* attempts) {
    for (const auto& r : {load_range, gen_range})
        if (!(r.lo > 0.0) || r.lo > 1.0 || r.hi < 1.0)
            throw ValidationError("perturbation intervals must be positive and contain 1.0");

    const ContingencyVector base(net.branch_count());
    for (int attempt = 0; attempt <= retries; ++attempt) {
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(attempt)});
        std::vector<std::pair<double, double>> loads(net.buses.size());
        for (auto& [p, q] : loads) {
            p = uniform(rng, load_range.lo, load_range.hi);
            q = uniform(rng, load_range.lo, load_range.hi);
        }
        std::vector<double> gens(net.generators.size());
        for (auto& g : gens) g = uniform(rng, gen_range.lo, gen_range.hi);
        auto state = make_state(net, "state-" + std::to_string(seed), std::move(loads), std::move(gens));
        if (solve_acpf(net, state, base, solver).converged) {
            if (attempts) *attempts = attempt + 1;
            return state;
        }
    }
    if (attempts) *attempts = retries + 1;
    throw InfeasibleError("no converged base case after " + std::to_string(retries) + " resamples");
}

}  // namespace nkscreen
