#include "nkscreen/powerflow.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "nkscreen/errors.hpp"

namespace nkscreen {

using cplx = std::complex<double>;

PreparedNetwork::PreparedNetwork(const NetworkCase& applied_case) : net_(applied_case), graph_(net_) {
    const int nb = net_.bus_count();
    const double base = net_.base_mva;
    types_.resize(nb);
    v_set_.assign(nb, 1.0);
    q_max_.assign(nb, 0.0);
    q_min_.assign(nb, 0.0);
    q_load_.assign(nb, 0.0);
    shunt_.assign(nb, cplx{});
    s_spec_.assign(nb, cplx{});
    std::vector<int> gens_at(nb, 0);

    for (int i = 0; i < nb; ++i) {
        const auto& b = net_.buses[i];
        types_[i] = b.type;
        v_set_[i] = b.vm;
        q_load_[i] = b.q_load_mvar / base;
        shunt_[i] = cplx(b.gs_mw, b.bs_mvar) / base;
        s_spec_[i] = -cplx(b.p_load_mw, b.q_load_mvar) / base;
    }
    for (const auto& g : net_.generators) {
        if (!g.in_service) continue;
        const int i = net_.bus_index(g.bus_id);
        if (gens_at[i]++ == 0) v_set_[i] = g.v_set;
        q_max_[i] += g.q_max / base;
        q_min_[i] += g.q_min / base;
        s_spec_[i] += cplx(g.p_mw, g.q_mvar) / base;
    }
    for (int i = 0; i < nb; ++i)
        if (types_[i] == BusType::pv && gens_at[i] == 0) types_[i] = BusType::pq;

    slack_ = net_.slack_index();
    slack_angle_ = net_.buses[slack_].va_deg * std::numbers::pi / 180.0;

    branches_.reserve(net_.branch_count());
    for (int e = 0; e < net_.branch_count(); ++e) {
        const auto& br = net_.branches[e];
        const cplx ys = 1.0 / cplx(br.r, br.x);
        const double ratio = br.ratio == 0.0 ? 1.0 : br.ratio;
        const cplx tap = std::polar(ratio, br.shift_deg * std::numbers::pi / 180.0);
        const cplx ytt = ys + cplx(0.0, br.b / 2.0);
        BranchAdmittance a;
        a.from = graph_.endpoints()[e].first;
        a.to = graph_.endpoints()[e].second;
        a.yff = ytt / (tap * std::conj(tap));
        a.yft = -ys / std::conj(tap);
        a.ytf = -ys / tap;
        a.ytt = ytt;
        branches_.push_back(a);
    }
}

PreparedNetwork::PreparedNetwork(const NetworkCase& net, const OperatingState& state)
    : PreparedNetwork(apply_state(net, state)) {}

namespace {

// Row-compressed bus admittance matrix.
struct Ybus {
    std::vector<cplx> diag;
    std::vector<std::vector<std::pair<int, cplx>>> off;
};

Ybus build_ybus(const PreparedNetwork& net, const std::vector<std::uint8_t>& active) {
    const int nb = net.bus_count();
    Ybus y;
    y.diag = net.shunts();
    y.off.resize(nb);
    const auto& br = net.branches();
    for (std::size_t e = 0; e < br.size(); ++e) {
        if (!active[e]) continue;
        const auto& a = br[e];
        y.diag[a.from] += a.yff;
        y.diag[a.to] += a.ytt;
        y.off[a.from].emplace_back(a.to, a.yft);
        y.off[a.to].emplace_back(a.from, a.ytf);
    }
    for (auto& row : y.off) {
        std::sort(row.begin(), row.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
        std::vector<std::pair<int, cplx>> merged;
        for (const auto& entry : row) {
            if (!merged.empty() && merged.back().first == entry.first) merged.back().second += entry.second;
            else merged.push_back(entry);
        }
        row = std::move(merged);
    }
    return y;
}

void injections(const Ybus& y, const std::vector<double>& vm, const std::vector<double>& va, std::vector<double>& p,
                std::vector<double>& q) {
    const int nb = static_cast<int>(vm.size());
    p.assign(nb, 0.0);
    q.assign(nb, 0.0);
    for (int i = 0; i < nb; ++i) {
        double pi = vm[i] * vm[i] * y.diag[i].real();
        double qi = -vm[i] * vm[i] * y.diag[i].imag();
        for (const auto& [j, yij] : y.off[i]) {
            const double th = va[i] - va[j];
            const double c = std::cos(th), s = std::sin(th);
            pi += vm[i] * vm[j] * (yij.real() * c + yij.imag() * s);
            qi += vm[i] * vm[j] * (yij.real() * s - yij.imag() * c);
        }
        p[i] = pi;
        q[i] = qi;
    }
}

struct NewtonResult {
    bool converged = false;
    int passes = 0;
    double mismatch = std::numeric_limits<double>::infinity();
};

NewtonResult newton(const Ybus& y, const std::vector<BusType>& types, const std::vector<double>& p_spec,
                    const std::vector<double>& q_spec, std::vector<double>& vm, std::vector<double>& va,
                    const SolverOptions& opts) {
    const int nb = static_cast<int>(vm.size());
    std::vector<int> ang_idx(nb, -1), mag_idx(nb, -1);
    int nvar = 0;
    for (int i = 0; i < nb; ++i)
        if (types[i] != BusType::slack) ang_idx[i] = nvar++;
    for (int i = 0; i < nb; ++i)
        if (types[i] == BusType::pq) mag_idx[i] = nvar++;

    NewtonResult res;
    std::vector<double> p, q;
    Eigen::VectorXd f(nvar);
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
    bool analyzed = false;
    std::vector<Eigen::Triplet<double>> trip;

    for (int pass = 0; pass <= opts.max_iterations; ++pass) {
        injections(y, vm, va, p, q);
        double norm = 0.0;
        for (int i = 0; i < nb; ++i) {
            if (ang_idx[i] >= 0) f[ang_idx[i]] = p_spec[i] - p[i];
            if (mag_idx[i] >= 0) f[mag_idx[i]] = q_spec[i] - q[i];
        }
        for (int r = 0; r < nvar; ++r) {
            if (!std::isfinite(f[r])) {
                norm = std::numeric_limits<double>::infinity();
                break;
            }
            norm = std::max(norm, std::abs(f[r]));
        }
        res.passes = pass + 1;
        res.mismatch = norm;
        if (norm <= opts.tolerance) {
            res.converged = true;
            return res;
        }
        if (!std::isfinite(norm) || norm > 1e10 || pass == opts.max_iterations) return res;

        trip.clear();
        for (int i = 0; i < nb; ++i) {
            const int ri = ang_idx[i];
            if (ri < 0) continue;
            const int qi = mag_idx[i];
            const double gii = y.diag[i].real(), bii = y.diag[i].imag();
            // diagonal blocks
            trip.emplace_back(ri, ri, -q[i] - bii * vm[i] * vm[i]);
            if (qi >= 0) {
                trip.emplace_back(ri, qi, p[i] / vm[i] + gii * vm[i]);
                trip.emplace_back(qi, ri, p[i] - gii * vm[i] * vm[i]);
                trip.emplace_back(qi, qi, q[i] / vm[i] - bii * vm[i]);
            }
            for (const auto& [j, yij] : y.off[i]) {
                const double th = va[i] - va[j];
                const double c = std::cos(th), s = std::sin(th);
                const double g = yij.real(), b = yij.imag();
                const double a1 = g * s - b * c;  // dP/dth_j / (Vi Vj), dQ/dV_j / Vi
                const double a2 = g * c + b * s;  // dP/dV_j / Vi, -dQ/dth_j / (Vi Vj)
                const int cj = ang_idx[j];
                const int mj = mag_idx[j];
                if (cj >= 0) trip.emplace_back(ri, cj, vm[i] * vm[j] * a1);
                if (mj >= 0) trip.emplace_back(ri, mj, vm[i] * a2);
                if (qi >= 0) {
                    if (cj >= 0) trip.emplace_back(qi, cj, -vm[i] * vm[j] * a2);
                    if (mj >= 0) trip.emplace_back(qi, mj, vm[i] * a1);
                }
            }
        }
        Eigen::SparseMatrix<double> jac(nvar, nvar);
        jac.setFromTriplets(trip.begin(), trip.end());
        jac.makeCompressed();
        if (!analyzed) {
            lu.analyzePattern(jac);
            analyzed = true;
        }
        lu.factorize(jac);
        if (lu.info() != Eigen::Success) return res;
        const Eigen::VectorXd dx = lu.solve(f);
        if (lu.info() != Eigen::Success || !dx.allFinite()) return res;
        for (int i = 0; i < nb; ++i) {
            if (ang_idx[i] >= 0) va[i] += dx[ang_idx[i]];
            if (mag_idx[i] >= 0) vm[i] += dx[mag_idx[i]];
        }
    }
    return res;
}

}  // namespace

PowerFlowSolution solve_acpf(const PreparedNetwork& net, const ContingencyVector& c, const SolverOptions& opts) {
    if (c.n() != net.branch_count()) throw ValidationError("contingency length does not match branch count");
    if (!net.graph().is_connected(c)) throw PreconditionError("outage pattern islands the network");

    const int nb = net.bus_count();
    const auto active = net.graph().active_mask(c);
    const Ybus y = build_ybus(net, active);

    std::vector<BusType> types = net.bus_types();
    std::vector<double> p_spec(nb), q_spec(nb);
    for (int i = 0; i < nb; ++i) {
        p_spec[i] = net.injection()[i].real();
        q_spec[i] = net.injection()[i].imag();
    }
    std::vector<double> vm(nb, 1.0), va(nb, net.slack_angle());
    for (int i = 0; i < nb; ++i)
        if (types[i] != BusType::pq) vm[i] = net.v_set()[i];

    // +1 pinned at Qmax, -1 pinned at Qmin, 0 regulating
    std::vector<int> pinned(nb, 0);
    PowerFlowSolution sol;
    NewtonResult nr;
    for (int round = 0; round <= std::max(0, opts.max_q_rounds); ++round) {
        nr = newton(y, types, p_spec, q_spec, vm, va, opts);
        sol.iterations += nr.passes;
        if (!nr.converged || !opts.enforce_q_limits) break;

        std::vector<double> p, q;
        injections(y, vm, va, p, q);
        bool changed = false;
        for (int i = 0; i < nb; ++i) {
            const double qg = q[i] + net.q_load()[i];
            if (types[i] == BusType::pv) {
                if (qg > net.q_max()[i] + opts.tolerance) {
                    types[i] = BusType::pq;
                    pinned[i] = 1;
                    q_spec[i] = net.q_max()[i] - net.q_load()[i];
                    changed = true;
                } else if (qg < net.q_min()[i] - opts.tolerance) {
                    types[i] = BusType::pq;
                    pinned[i] = -1;
                    q_spec[i] = net.q_min()[i] - net.q_load()[i];
                    changed = true;
                }
            } else if (pinned[i] != 0) {
                const bool release = (pinned[i] > 0 && vm[i] > net.v_set()[i] + 1e-9) ||
                                     (pinned[i] < 0 && vm[i] < net.v_set()[i] - 1e-9);
                if (release) {
                    types[i] = BusType::pv;
                    pinned[i] = 0;
                    vm[i] = net.v_set()[i];
                    changed = true;
                }
            }
        }
        if (!changed) break;
        if (round == opts.max_q_rounds) break;
    }

    sol.converged = nr.converged;
    sol.max_mismatch = nr.mismatch;
    sol.v_mag = vm;
    sol.v_ang = va;
    sol.branch_p_mw.assign(net.branch_count(), 0.0);
    sol.q_gen_mvar.assign(nb, 0.0);
    if (sol.converged) {
        const double base = net.network().base_mva;
        for (int e = 0; e < net.branch_count(); ++e) {
            if (!active[e]) continue;
            const auto& a = net.branches()[e];
            const cplx vf = std::polar(vm[a.from], va[a.from]);
            const cplx vt = std::polar(vm[a.to], va[a.to]);
            const cplx sf = vf * std::conj(a.yff * vf + a.yft * vt);
            sol.branch_p_mw[e] = sf.real() * base;
        }
        std::vector<double> p, q;
        injections(y, vm, va, p, q);
        for (int i = 0; i < nb; ++i) sol.q_gen_mvar[i] = (q[i] + net.q_load()[i]) * base;
    }
    return sol;
}

PowerFlowSolution solve_acpf(const NetworkCase& net, const OperatingState& state, const ContingencyVector& c,
                             const SolverOptions& opts) {
    return solve_acpf(PreparedNetwork(net, state), c, opts);
}

std::vector<cplx> bus_injections(const PreparedNetwork& net, const ContingencyVector& c, const PowerFlowSolution& sol) {
    const Ybus y = build_ybus(net, net.graph().active_mask(c));
    std::vector<double> p, q;
    injections(y, sol.v_mag, sol.v_ang, p, q);
    std::vector<cplx> s(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) s[i] = cplx(p[i], q[i]);
    return s;
}

// --- severity -----------------------------------------------------------------

void SeverityConfig::validate() const {
    if (!(tau > 0.0 && tau < s_fail)) throw ValidationError("severity config requires 0 < tau < s_fail");
    if (!(band_lo >= 0.0 && band_lo <= band_hi && band_hi <= s_fail))
        throw ValidationError("severity band must lie inside [0, s_fail]");
}

SeverityConfig SeverityConfig::with_tau(double tau, double s_fail) {
    SeverityConfig cfg{tau, s_fail, tau, s_fail};
    cfg.validate();
    return cfg;
}

double severity(const PowerFlowSolution& base, const PowerFlowSolution& post, const SeverityConfig& cfg) {
    if (!base.converged) throw PreconditionError("base-case power flow did not converge");
    if (!post.converged) return cfg.s_fail;
    if (base.branch_p_mw.size() != post.branch_p_mw.size() || post.v_mag.size() != base.v_mag.size())
        throw ValidationError("solution dimensions do not match");
    double flow = 0.0;
    for (std::size_t e = 0; e < post.branch_p_mw.size(); ++e)
        flow = std::max(flow, std::abs(post.branch_p_mw[e] - base.branch_p_mw[e]));
    double volt = 0.0;
    for (double v : post.v_mag) volt = std::max(volt, std::abs(v - 1.0));
    // Finite severities stay below the sentinel so nonconvergence is never confused with a solved case.
    return std::min(flow + volt, std::nextafter(cfg.s_fail, 0.0));
}

Outcome classify(double s, const SeverityConfig& cfg) {
    if (s == cfg.s_fail) return Outcome::nonconvergent;
    if (s >= cfg.band_lo && s <= cfg.band_hi) return Outcome::convergent_in_band;
    return Outcome::convergent_out_of_band;
}

const char* outcome_name(Outcome o) {
    switch (o) {
        case Outcome::convergent_in_band: return "convergent_in_band";
        case Outcome::convergent_out_of_band: return "convergent_out_of_band";
        case Outcome::nonconvergent: return "nonconvergent";
    }
    return "unknown";
}

InteractionTerms interaction_decomposition(const PreparedNetwork& net, int i, int j, const SeverityConfig& cfg,
                                           const SolverOptions& opts) {
    const int n = net.branch_count();
    const auto base = solve_acpf(net, ContingencyVector(n), opts);
    InteractionTerms t;
    t.r_i = severity(base, solve_acpf(net, ContingencyVector::single(n, i), opts), cfg);
    t.r_j = severity(base, solve_acpf(net, ContingencyVector::single(n, j), opts), cfg);
    t.pair = severity(base, solve_acpf(net, ContingencyVector::from_indices(n, {i, j}), opts), cfg);
    t.interaction = t.pair - t.r_i - t.r_j;
    return t;
}

}  // namespace nkscreen
