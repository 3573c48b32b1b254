#pragma once

// The quadratic-convex relaxation of the ACOPF feasible set, emitted as
// rows of a standard-form conic program. One "block" holds the full
// system configuration for a single uncertainty realization: voltages,
// angles, flows, trigonometric lifts, McCormick envelopes, valid
// inequalities, balance equations, and (in robust mode) the recourse
// adjustments. Blocks share the first-stage injection columns.
//
// Every x^2 <= y and x^2 <= yz relation is written in the second-order
// cone standard forms used for the dual development, e.g.
// ||(v_i, vhat_i - 1/4)|| <= vhat_i + 1/4, so row duals line up with the
// named multipliers.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ropf/case_io.hpp"
#include "ropf/conic_program.hpp"
#include "ropf/scenario.hpp"

namespace ropf {

struct TrigBounds {
    double cs_lo, cs_hi, ss_lo, ss_hi;
};

// Cosine/sine ranges of the angle difference on [d_lo, d_hi].
inline TrigBounds trig_envelope_bounds(double d_lo, double d_hi) {
    if (d_lo > d_hi) throw std::invalid_argument("inverted angle interval");
    if (d_lo < -kMaxAngleDiff - 1e-9 || d_hi > kMaxAngleDiff + 1e-9)
        throw std::invalid_argument("angle interval outside +-pi/6");
    TrigBounds tb;
    if (d_hi <= 0.0) {
        tb.cs_hi = std::cos(d_hi);
        tb.cs_lo = std::cos(d_lo);
    } else if (d_lo >= 0.0) {
        tb.cs_hi = std::cos(d_lo);
        tb.cs_lo = std::cos(d_hi);
    } else {
        tb.cs_hi = 1.0;
        tb.cs_lo = std::min(std::cos(d_lo), std::cos(d_hi));
    }
    tb.ss_lo = std::sin(d_lo);
    tb.ss_hi = std::sin(d_hi);
    return tb;
}

struct Bounds {
    std::vector<double> v_lo, v_hi;  // per bus
    std::vector<double> d_lo, d_hi;  // per oriented branch

    static Bounds of(const Network& net) {
        Bounds b;
        for (const Bus& bus : net.buses) {
            b.v_lo.push_back(bus.vmin);
            b.v_hi.push_back(bus.vmax);
        }
        for (const Branch& br : net.branches) {
            b.d_lo.push_back(br.dmin);
            b.d_hi.push_back(br.dmax);
        }
        return b;
    }

    double theta_u(int k) const { return std::max(std::abs(d_hi[k]), std::abs(d_lo[k])); }
    double v_delta(int i) const { return v_hi[i] + v_lo[i]; }
    double theta_phi(int k) const { return 0.5 * (d_hi[k] + d_lo[k]); }
    double theta_delta(int k) const { return 0.5 * (d_hi[k] - d_lo[k]); }
    TrigBounds trig(int k) const { return trig_envelope_bounds(d_lo[k], d_hi[k]); }

    void check() const {
        for (size_t i = 0; i < v_lo.size(); ++i)
            if (v_lo[i] > v_hi[i]) throw std::invalid_argument("v bounds inverted");
        for (size_t k = 0; k < d_lo.size(); ++k)
            if (d_lo[k] > d_hi[k]) throw std::invalid_argument("angle bounds inverted");
    }
};

// Column handles for the shared first-stage injections.
struct SharedVars {
    std::vector<int> sp, sq;  // per generator
};

// Column handles for one scenario block.
struct ScenarioVars {
    std::string tag;
    std::vector<int> v, vhat, theta;                 // per bus
    std::vector<int> thd, P, Q, cs, ss, vv, wc, ws;  // per oriented branch
    std::vector<int> opp, opm, oqp, oqm;             // recourse, per bus
    std::vector<int> lpp, lpm, lqp, lqm;             // balance slacks, per bus
    std::vector<int> up, uq;                         // injection variables, per bus
};

struct QcBlockOptions {
    bool recourse = true;
    bool balance_slacks = false;   // subproblem artificial variables
    bool u_variables = false;      // injections as box variables (tightening)
    bool lifted_cuts = true;       // lifted nonlinear cuts
    const Vertex* vertex = nullptr;            // nullptr = nominal realization
    const std::vector<double>* sp_fixed = nullptr;  // fixed set point
    const std::vector<double>* sq_fixed = nullptr;
};

namespace detail {

inline void check_finite(double v, const std::string& label) {
    if (!std::isfinite(v))
        throw std::runtime_error("non-finite coefficient in row " + label);
}

}  // namespace detail

// Emits one scenario block into `prog`. When `shared` is null the set
// point must be fixed through opts.sp_fixed / sq_fixed.
inline ScenarioVars build_qc_block(ConicProgram& prog, const Network& net,
                                   const Bounds& bounds, const UncertaintyModel& um,
                                   const SharedVars* shared, const std::string& tag,
                                   const QcBlockOptions& opts = {}) {
    bounds.check();
    const int n = static_cast<int>(net.buses.size());
    const int nbr = static_cast<int>(net.branches.size());
    if (!shared && (!opts.sp_fixed || !opts.sq_fixed))
        throw std::invalid_argument("block needs shared injections or a fixed set point");

    ScenarioVars sv;
    sv.tag = tag;
    auto col = [&](const std::string& name, int idx) {
        return prog.add_col(name + "[" + std::to_string(idx) + "]@" + tag);
    };
    for (int i = 0; i < n; ++i) {
        sv.v.push_back(col("v", i));
        sv.vhat.push_back(col("vhat", i));
        sv.theta.push_back(col("theta", i));
    }
    for (int k = 0; k < nbr; ++k) {
        sv.thd.push_back(col("thd", k));
        sv.P.push_back(col("P", k));
        sv.Q.push_back(col("Q", k));
        sv.cs.push_back(col("cs", k));
        sv.ss.push_back(col("ss", k));
        sv.vv.push_back(col("vv", k));
        sv.wc.push_back(col("wc", k));
        sv.ws.push_back(col("ws", k));
    }
    // Recourse columns only exist where their cap can be positive; a
    // variable pinned into [0,0] would leave the cone without interior.
    auto recourse_heads = [&](int i, double* head_p, double* head_q) {
        if (opts.u_variables) {
            *head_p = (1.0 + um.alpha_h_plus) * um.hp[i];
            *head_q = (1.0 + um.alpha_h_plus) * um.hq[i];
        } else {
            double upv = opts.vertex ? opts.vertex->up_plus[i] : 0.0;
            double umv = opts.vertex ? opts.vertex->up_minus[i] : 0.0;
            double uqv = opts.vertex ? opts.vertex->uq_plus[i] : 0.0;
            double uqm = opts.vertex ? opts.vertex->uq_minus[i] : 0.0;
            *head_p = um.hp[i] + um.zeta_plus[i] * upv - um.zeta_minus[i] * umv;
            *head_q = um.hq[i] + um.zeta_plus[i] * uqv - um.zeta_minus[i] * uqm;
        }
    };
    if (opts.recourse)
        for (int i = 0; i < n; ++i) {
            double head_p, head_q;
            recourse_heads(i, &head_p, &head_q);
            sv.opp.push_back(um.obar_p[i] + head_p > 1e-12 ? col("opp", i) : -1);
            sv.opm.push_back(um.obar_p[i] > 1e-12 ? col("opm", i) : -1);
            sv.oqp.push_back(um.obar_q[i] + head_q > 1e-12 ? col("oqp", i) : -1);
            sv.oqm.push_back(um.obar_q[i] > 1e-12 ? col("oqm", i) : -1);
        }
    if (opts.balance_slacks)
        for (int i = 0; i < n; ++i) {
            sv.lpp.push_back(prog.add_col("lpp[" + std::to_string(i) + "]@" + tag, 1.0));
            sv.lpm.push_back(prog.add_col("lpm[" + std::to_string(i) + "]@" + tag, 1.0));
            sv.lqp.push_back(prog.add_col("lqp[" + std::to_string(i) + "]@" + tag, 1.0));
            sv.lqm.push_back(prog.add_col("lqm[" + std::to_string(i) + "]@" + tag, 1.0));
        }
    if (opts.u_variables)
        for (int i = 0; i < n; ++i) {
            sv.up.push_back(col("up", i));
            sv.uq.push_back(col("uq", i));
        }

    auto lbl = [&](const std::string& family, int idx) {
        return family + ":" + tag + ":" + std::to_string(idx);
    };

    // Simple bounds on voltage and phase angle; the reference bus is pinned.
    for (int i = 0; i < n; ++i) {
        prog.add_le(lbl("v_ub", i), {{sv.v[i], 1.0}}, bounds.v_hi[i]);
        prog.add_le(lbl("v_lb", i), {{sv.v[i], -1.0}}, -bounds.v_lo[i]);
        if (net.buses[i].bus_type == BusType::REF) {
            prog.add_eq(lbl("theta_ref", i), {{sv.theta[i], 1.0}}, 0.0);
        } else {
            prog.add_le(lbl("theta_ub", i), {{sv.theta[i], 1.0}}, net.buses[i].theta_max);
            prog.add_le(lbl("theta_lb", i), {{sv.theta[i], -1.0}}, -net.buses[i].theta_min);
        }
    }

    for (int k = 0; k < nbr; ++k) {
        const Branch& br = net.branches[k];
        const int fi = net.bus_index(br.from), ti = net.bus_index(br.to);
        const TrigBounds tb = bounds.trig(k);
        const double t1 = br.tau1, t2 = br.tau2;

        // Angle-difference column and window (sigma-shifted).
        prog.add_eq(lbl("thd_def", k),
                    {{sv.thd[k], 1.0}, {sv.theta[fi], -1.0}, {sv.theta[ti], 1.0}}, 0.0);
        prog.add_le(lbl("ang_ub", k), {{sv.thd[k], 1.0}}, bounds.d_hi[k] + br.sigma);
        prog.add_le(lbl("ang_lb", k), {{sv.thd[k], -1.0}}, -(bounds.d_lo[k] + br.sigma));
        prog.add_le(lbl("cs_ub", k), {{sv.cs[k], 1.0}}, tb.cs_hi);
        prog.add_le(lbl("cs_lb", k), {{sv.cs[k], -1.0}}, -tb.cs_lo);
        prog.add_le(lbl("ss_ub", k), {{sv.ss[k], 1.0}}, tb.ss_hi);
        prog.add_le(lbl("ss_lb", k), {{sv.ss[k], -1.0}}, -tb.ss_lo);

        // Linearized flow definitions. wc and ws already carry the tap
        // scaling (they lift v_i v_j / (tau1 tau2) times cos/sin), so they
        // enter the flows unscaled.
        prog.add_eq(lbl("flow_p", k),
                    {{sv.P[k], 1.0},
                     {sv.vhat[fi], -br.g / (t1 * t1)},
                     {sv.wc[k], br.g},
                     {sv.ws[k], br.b}},
                    0.0);
        prog.add_eq(lbl("flow_q", k),
                    {{sv.Q[k], 1.0},
                     {sv.vhat[fi], (br.b + 0.5 * br.b_charge) / (t1 * t1)},
                     {sv.wc[k], -br.b},
                     {sv.ws[k], br.g}},
                    0.0);

        // Thermal limit ||(P,Q)|| <= W.
        prog.add_soc(lbl("thermal", k),
                     {{{}, br.rate}, {{{sv.P[k], 1.0}}, 0.0}, {{{sv.Q[k], 1.0}}, 0.0}});

        // vv^2 <= (vhat_i / t1^2)(vhat_j / t2^2), rotated cone in standard form.
        const double rt2 = std::sqrt(2.0);
        prog.add_soc(lbl("vv_cone", k),
                     {{{{sv.vhat[fi], 1.0 / (t1 * t1 * rt2)}, {sv.vhat[ti], 1.0 / (t2 * t2 * rt2)}}, 0.0},
                      {{{sv.vv[k], 1.0}}, 0.0},
                      {{{sv.vhat[fi], 1.0 / (t1 * t1 * rt2)}}, 0.0},
                      {{{sv.vhat[ti], 1.0 / (t2 * t2 * rt2)}}, 0.0}});

        // Complex-product cone wc^2 + ws^2 <= (vhat_i/t1^2)(vhat_j/t2^2);
        // this is what makes the QC relaxation at least as tight as the
        // plain SOC relaxation.
        prog.add_soc(lbl("jabr", k),
                     {{{{sv.vhat[fi], 1.0 / (t1 * t1 * rt2)}, {sv.vhat[ti], 1.0 / (t2 * t2 * rt2)}}, 0.0},
                      {{{sv.wc[k], 1.0}}, 0.0},
                      {{{sv.ws[k], 1.0}}, 0.0},
                      {{{sv.vhat[fi], 1.0 / (t1 * t1 * rt2)}}, 0.0},
                      {{{sv.vhat[ti], 1.0 / (t2 * t2 * rt2)}}, 0.0}});

        // Cosine envelope: quadratic upper bound as a cone, secant below.
        const double thu = bounds.theta_u(k);
        const double kappa = thu > 1e-8 ? (1.0 - std::cos(thu)) / (thu * thu) : 0.5;
        const double sqk = std::sqrt(kappa);
        detail::check_finite(sqk, lbl("cs_soc", k));
        prog.add_soc(lbl("cs_soc", k),
                     {{{{sv.cs[k], -1.0}}, 1.25},
                      {{{sv.thd[k], sqk}}, -sqk * br.sigma},
                      {{{sv.cs[k], 1.0}}, -0.75}});
        const double width = bounds.d_hi[k] - bounds.d_lo[k];
        const double slope = width > 1e-12
                                 ? (std::cos(bounds.d_hi[k]) - std::cos(bounds.d_lo[k])) / width
                                 : -std::sin(bounds.d_lo[k]);
        detail::check_finite(slope, lbl("cs_sec", k));
        // cs >= slope (thd - sigma - d_lo) + cos(d_lo)
        prog.add_le(lbl("cs_sec", k), {{sv.cs[k], -1.0}, {sv.thd[k], slope}},
                    slope * (br.sigma + bounds.d_lo[k]) - std::cos(bounds.d_lo[k]));

        // Sine tangent envelopes.
        const double ch = std::cos(0.5 * thu), sh = std::sin(0.5 * thu);
        const double srhs = sh - 0.5 * thu * ch;
        prog.add_le(lbl("ss_t1", k), {{sv.ss[k], 1.0}, {sv.thd[k], -ch}}, srhs - ch * br.sigma);
        prog.add_le(lbl("ss_t2", k), {{sv.ss[k], -1.0}, {sv.thd[k], ch}}, srhs + ch * br.sigma);

        // McCormick envelopes for vv over the tap-scaled voltage box.
        const double vli = bounds.v_lo[fi] / t1, vhi_ = bounds.v_hi[fi] / t1;
        const double vlj = bounds.v_lo[ti] / t2, vhj = bounds.v_hi[ti] / t2;
        prog.add_le(lbl("vv_mc1", k),
                    {{sv.vv[k], -1.0}, {sv.v[ti], vli / t2}, {sv.v[fi], vlj / t1}}, vli * vlj);
        prog.add_le(lbl("vv_mc2", k),
                    {{sv.vv[k], -1.0}, {sv.v[ti], vhi_ / t2}, {sv.v[fi], vhj / t1}}, vhi_ * vhj);
        prog.add_le(lbl("vv_mc3", k),
                    {{sv.vv[k], 1.0}, {sv.v[ti], -vli / t2}, {sv.v[fi], -vhj / t1}}, -vli * vhj);
        prog.add_le(lbl("vv_mc4", k),
                    {{sv.vv[k], 1.0}, {sv.v[ti], -vhi_ / t2}, {sv.v[fi], -vlj / t1}}, -vhi_ * vlj);

        // McCormick envelopes for wc = vv * cs and ws = vv * ss.
        const double vvl = vli * vlj, vvh = vhi_ * vhj;
        auto mccormick = [&](const char* fam, int prod, int lift, double bl, double bh) {
            // prod >= vvl * lift + bl * vv - vvl*bl ; prod >= vvh*lift + bh*vv - vvh*bh
            prog.add_le(lbl(std::string(fam) + "_mc1", k),
                        {{prod, -1.0}, {lift, vvl}, {sv.vv[k], bl}}, vvl * bl);
            prog.add_le(lbl(std::string(fam) + "_mc2", k),
                        {{prod, -1.0}, {lift, vvh}, {sv.vv[k], bh}}, vvh * bh);
            // prod <= vvl*lift + bh*vv - vvl*bh ; prod <= vvh*lift + bl*vv - vvh*bl
            prog.add_le(lbl(std::string(fam) + "_mc3", k),
                        {{prod, 1.0}, {lift, -vvl}, {sv.vv[k], -bh}}, -vvl * bh);
            prog.add_le(lbl(std::string(fam) + "_mc4", k),
                        {{prod, 1.0}, {lift, -vvh}, {sv.vv[k], -bl}}, -vvh * bl);
        };
        mccormick("wc", sv.wc[k], sv.cs[k], tb.cs_lo, tb.cs_hi);
        mccormick("ws", sv.ws[k], sv.ss[k], tb.ss_lo, tb.ss_hi);

        // Tangent valid inequalities (wc >= 0 on the +-pi/6 window).
        prog.add_le(lbl("tan1", k), {{sv.ws[k], 1.0}, {sv.wc[k], -std::tan(bounds.d_hi[k])}},
                    0.0);
        prog.add_le(lbl("tan2", k), {{sv.ws[k], -1.0}, {sv.wc[k], std::tan(bounds.d_lo[k])}},
                    0.0);

        // Lifted nonlinear cuts.
        if (opts.lifted_cuts) {
            const double vdi = bounds.v_delta(fi) / t1, vdj = bounds.v_delta(ti) / t2;
            const double cphi = std::cos(bounds.theta_phi(k)), sphi = std::sin(bounds.theta_phi(k));
            const double cdel = std::cos(bounds.theta_delta(k));
            const double gap = vvl - vvh;
            // vdi vdj (wc cphi + ws sphi) - vhj cdel vdj vhat_i/t1^2
            //   - vhi cdel vdi vhat_j/t2^2 >= vvh cdel (vvl - vvh)
            prog.add_le(lbl("lnc1", k),
                        {{sv.wc[k], -vdi * vdj * cphi},
                         {sv.ws[k], -vdi * vdj * sphi},
                         {sv.vhat[fi], vhj * cdel * vdj / (t1 * t1)},
                         {sv.vhat[ti], vhi_ * cdel * vdi / (t2 * t2)}},
                        -vvh * cdel * gap);
            prog.add_le(lbl("lnc2", k),
                        {{sv.wc[k], -vdi * vdj * cphi},
                         {sv.ws[k], -vdi * vdj * sphi},
                         {sv.vhat[fi], vlj * cdel * vdj / (t1 * t1)},
                         {sv.vhat[ti], vli * cdel * vdi / (t2 * t2)}},
                        vvl * cdel * gap);
        }
    }

    // Square relaxation of voltage magnitude.
    for (int i = 0; i < n; ++i) {
        prog.add_soc(lbl("vsq", i), {{{{sv.vhat[i], 1.0}}, 0.25},
                                     {{{sv.v[i], 1.0}}, 0.0},
                                     {{{sv.vhat[i], 1.0}}, -0.25}});
        prog.add_le(lbl("vhat_ub", i), {{sv.vhat[i], 1.0}, {sv.v[i], -bounds.v_delta(i)}},
                    -bounds.v_hi[i] * bounds.v_lo[i]);
    }

    // Forward/backward orientation consistency, once per undirected line.
    for (int k = 0; k < nbr; ++k) {
        const int rk = net.branches[k].reverse;
        if (rk < k) continue;
        prog.add_eq(lbl("eq_cs", k), {{sv.cs[k], 1.0}, {sv.cs[rk], -1.0}}, 0.0);
        prog.add_eq(lbl("eq_ss", k), {{sv.ss[k], 1.0}, {sv.ss[rk], 1.0}}, 0.0);
        prog.add_eq(lbl("eq_wc", k), {{sv.wc[k], 1.0}, {sv.wc[rk], -1.0}}, 0.0);
        prog.add_eq(lbl("eq_ws", k), {{sv.ws[k], 1.0}, {sv.ws[rk], 1.0}}, 0.0);
        prog.add_eq(lbl("eq_vv", k), {{sv.vv[k], 1.0}, {sv.vv[rk], -1.0}}, 0.0);
    }

    // Power balance. All configuration terms on the left; injections and
    // the realized uncertainty on the right.
    for (int i = 0; i < n; ++i) {
        std::vector<Coef> rowp, rowq;
        for (int k : net.branches_from(i)) {
            rowp.push_back({sv.P[k], 1.0});
            rowq.push_back({sv.Q[k], 1.0});
        }
        rowp.push_back({sv.vhat[i], net.buses[i].gs});
        rowq.push_back({sv.vhat[i], -net.buses[i].bs});
        if (opts.recourse) {
            if (sv.opm[i] >= 0) rowp.push_back({sv.opm[i], 1.0});
            if (sv.opp[i] >= 0) rowp.push_back({sv.opp[i], -1.0});
            if (sv.oqm[i] >= 0) rowq.push_back({sv.oqm[i], 1.0});
            if (sv.oqp[i] >= 0) rowq.push_back({sv.oqp[i], -1.0});
        }
        if (opts.balance_slacks) {
            rowp.push_back({sv.lpp[i], 1.0});
            rowp.push_back({sv.lpm[i], -1.0});
            rowq.push_back({sv.lqp[i], 1.0});
            rowq.push_back({sv.lqm[i], -1.0});
        }
        double rhs_p = 0.0, rhs_q = 0.0;
        if (opts.u_variables) {
            rowp.push_back({sv.up[i], -1.0});
            rowq.push_back({sv.uq[i], -1.0});
        } else {
            rhs_p = um.u0p[i];
            rhs_q = um.u0q[i];
            if (opts.vertex) {
                rhs_p += opts.vertex->up_plus[i] - opts.vertex->up_minus[i];
                rhs_q += opts.vertex->uq_plus[i] - opts.vertex->uq_minus[i];
            }
        }
        if (shared) {
            for (int g : net.gen_map[i]) {
                rowp.push_back({shared->sp[g], -1.0});
                rowq.push_back({shared->sq[g], -1.0});
            }
        } else {
            for (int g : net.gen_map[i]) {
                rhs_p += (*opts.sp_fixed)[g];
                rhs_q += (*opts.sq_fixed)[g];
            }
        }
        prog.add_eq(lbl("balance_p", i), rowp, rhs_p);
        prog.add_eq(lbl("balance_q", i), rowq, rhs_q);
    }

    // Recourse caps. Under tightening the curtailment headroom is taken at
    // the largest renewable realization.
    if (opts.recourse) {
        for (int i = 0; i < n; ++i) {
            double head_p, head_q;
            recourse_heads(i, &head_p, &head_q);
            if (sv.opp[i] >= 0) {
                prog.add_le(lbl("opp_cap", i), {{sv.opp[i], 1.0}}, um.obar_p[i] + head_p);
                prog.add_le(lbl("opp_nn", i), {{sv.opp[i], -1.0}}, 0.0);
            }
            if (sv.oqp[i] >= 0) {
                prog.add_le(lbl("oqp_cap", i), {{sv.oqp[i], 1.0}}, um.obar_q[i] + head_q);
                prog.add_le(lbl("oqp_nn", i), {{sv.oqp[i], -1.0}}, 0.0);
            }
            if (sv.opm[i] >= 0) {
                prog.add_le(lbl("opm_cap", i), {{sv.opm[i], 1.0}}, um.obar_p[i]);
                prog.add_le(lbl("opm_nn", i), {{sv.opm[i], -1.0}}, 0.0);
            }
            if (sv.oqm[i] >= 0) {
                prog.add_le(lbl("oqm_cap", i), {{sv.oqm[i], 1.0}}, um.obar_q[i]);
                prog.add_le(lbl("oqm_nn", i), {{sv.oqm[i], -1.0}}, 0.0);
            }
        }
    }
    if (opts.balance_slacks)
        for (int i = 0; i < n; ++i) {
            prog.add_le(lbl("lpp_nn", i), {{sv.lpp[i], -1.0}}, 0.0);
            prog.add_le(lbl("lpm_nn", i), {{sv.lpm[i], -1.0}}, 0.0);
            prog.add_le(lbl("lqp_nn", i), {{sv.lqp[i], -1.0}}, 0.0);
            prog.add_le(lbl("lqm_nn", i), {{sv.lqm[i], -1.0}}, 0.0);
        }
    if (opts.u_variables)
        for (int i = 0; i < n; ++i) {
            // Zero-width boxes become equalities so the cone keeps an
            // interior.
            if (um.up_hi[i] - um.up_lo[i] > 1e-12) {
                prog.add_le(lbl("up_ub", i), {{sv.up[i], 1.0}}, um.up_hi[i]);
                prog.add_le(lbl("up_lb", i), {{sv.up[i], -1.0}}, -um.up_lo[i]);
            } else {
                prog.add_eq(lbl("up_fix", i), {{sv.up[i], 1.0}},
                            0.5 * (um.up_hi[i] + um.up_lo[i]));
            }
            if (um.uq_hi[i] - um.uq_lo[i] > 1e-12) {
                prog.add_le(lbl("uq_ub", i), {{sv.uq[i], 1.0}}, um.uq_hi[i]);
                prog.add_le(lbl("uq_lb", i), {{sv.uq[i], -1.0}}, -um.uq_lo[i]);
            } else {
                prog.add_eq(lbl("uq_fix", i), {{sv.uq[i], 1.0}},
                            0.5 * (um.uq_hi[i] + um.uq_lo[i]));
            }
        }

    return sv;
}

// First-stage injection columns with their box rows.
inline SharedVars add_injection_vars(ConicProgram& prog, const Network& net) {
    SharedVars s;
    for (size_t g = 0; g < net.generators.size(); ++g) {
        s.sp.push_back(prog.add_col("sp[" + std::to_string(g) + "]"));
        s.sq.push_back(prog.add_col("sq[" + std::to_string(g) + "]"));
    }
    for (size_t g = 0; g < net.generators.size(); ++g) {
        const Generator& gen = net.generators[g];
        prog.add_le("sp_ub:" + std::to_string(g), {{s.sp[g], 1.0}}, gen.pmax);
        prog.add_le("sp_lb:" + std::to_string(g), {{s.sp[g], -1.0}}, -gen.pmin);
        prog.add_le("sq_ub:" + std::to_string(g), {{s.sq[g], 1.0}}, gen.qmax);
        prog.add_le("sq_lb:" + std::to_string(g), {{s.sq[g], -1.0}}, -gen.qmin);
    }
    return s;
}

// Quadratic dispatch cost as a linear objective plus one epigraph cone per
// quadratic term. Constant coefficients land in the objective offset.
inline void add_dispatch_cost(ConicProgram& prog, const Network& net, const SharedVars& s) {
    for (size_t g = 0; g < net.generators.size(); ++g) {
        const Generator& gen = net.generators[g];
        prog.add_obj(s.sp[g], gen.cp1);
        prog.add_obj(s.sq[g], gen.cq1);
        prog.add_obj_offset(gen.cp0);
        if (gen.cp2 > 0.0) {
            int t = prog.add_col("tp[" + std::to_string(g) + "]", gen.cp2);
            prog.add_soc("cost_p:" + std::to_string(g),
                         {{{{t, 1.0}}, 0.25}, {{{s.sp[g], 1.0}}, 0.0}, {{{t, 1.0}}, -0.25}});
        }
        if (gen.cq2 > 0.0) {
            int t = prog.add_col("tq[" + std::to_string(g) + "]", gen.cq2);
            prog.add_soc("cost_q:" + std::to_string(g),
                         {{{{t, 1.0}}, 0.25}, {{{s.sq[g], 1.0}}, 0.0}, {{{t, 1.0}}, -0.25}});
        }
    }
}

// Degenerate uncertainty model for the plain deterministic relaxation:
// no renewables, no deviations, injections fixed at minus demand.
inline UncertaintyModel deterministic_uncertainty(const Network& net) {
    UncertaintyParams p;
    p.n_clusters = 1;
    p.alpha_h_plus = p.alpha_h_minus = p.alpha_d_plus = p.alpha_d_minus = 0.0;
    p.beta = 0.0;
    p.gamma_budget = 0;
    Clustering c;
    const int n = static_cast<int>(net.buses.size());
    c.facilities = {0};
    c.assignment.assign(n, 0);
    c.distances.assign(n, std::vector<int>(n, 0));
    return build_uncertainty(net, {}, p, c);
}

// Deterministic QC relaxation of the case itself: minimize dispatch cost
// over one nominal block without recourse.
struct NominalModel {
    ConicProgram prog;
    SharedVars shared;
    ScenarioVars block;
};

inline NominalModel build_nominal(const Network& net, const Bounds& bounds,
                                  bool lifted_cuts = true) {
    NominalModel m;
    m.shared = add_injection_vars(m.prog, net);
    add_dispatch_cost(m.prog, net, m.shared);
    UncertaintyModel um = deterministic_uncertainty(net);
    QcBlockOptions opts;
    opts.recourse = false;
    opts.lifted_cuts = lifted_cuts;
    m.block = build_qc_block(m.prog, net, bounds, um, &m.shared, "nom", opts);
    return m;
}

}  // namespace ropf
