#pragma once

// Primal-dual interior-point method for the standard-form conic programs
// of conic_program.hpp, on the homogeneous self-dual embedding with
// Nesterov-Todd scaling and Mehrotra predictor-corrector steps.
//
// Internally the rows are split into an equality block (zero cones) and a
// cone block (nonnegative + second-order):
//     min c'x   s.t.  Aeq x = beq,   G x + s = h,   s in K.
// Duals are reported in the original row order with the convention
//     Aeq' y + G' z + c = 0,   z in K*,
// so that the sensitivity of the optimal value to rhs entry b_i is -y_i.
// This is the sign under which subproblem balance duals produce valid
// affine minorants of the recourse value function.

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "ropf/conic_program.hpp"
#include "ropf/ldl.hpp"

namespace ropf {

enum class SolveStatus { Optimal, PrimalInfeasible, DualInfeasible, IterLimit, Numerical };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "Optimal";
        case SolveStatus::PrimalInfeasible: return "PrimalInfeasible";
        case SolveStatus::DualInfeasible: return "DualInfeasible";
        case SolveStatus::IterLimit: return "IterLimit";
        default: return "Numerical";
    }
}

struct SolveOptions {
    double feas_tol = 1e-8;
    double gap_tol = 1e-8;
    int max_iter = 200;
    uint64_t seed = 0;         // reserved; the method is deterministic
    double static_reg = 1e-8;  // KKT diagonal regularization
    int refine_passes = 4;
    bool log = false;
};

struct Solution {
    SolveStatus status = SolveStatus::Numerical;
    std::vector<double> x;   // primal point
    std::vector<double> y;   // dual multiplier per original row
    std::vector<double> s;   // slack per original row (0 on equality rows)
    double obj = std::numeric_limits<double>::quiet_NaN();
    double gap = std::numeric_limits<double>::quiet_NaN();       // relative duality gap
    double primal_res = std::numeric_limits<double>::quiet_NaN();
    double dual_res = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    std::string log;

    double dual_value(const ConicProgram& prog, const std::string& label) const {
        return y[prog.row_by_label(label)];
    }
};

// Cached symbolic analysis for a family of programs with identical sparsity
// structure (e.g. thousands of Monte Carlo subproblems differing only in the
// right-hand side). One cache may not be shared across threads.
struct KktCache {
    QdLdl ldl;
};

// Cache pool keyed by program structure, for program families whose column
// layout varies (scenario blocks omit pinned recourse columns).
class KktCachePool {
  public:
    KktCache* get(const ConicProgram& prog) {
        size_t h = static_cast<size_t>(prog.num_cols()) * 1000003u +
                   static_cast<size_t>(prog.num_rows());
        for (const auto& label : prog.col_labels())
            h = h * 131 + std::hash<std::string>{}(label);
        return &pool_[h];
    }

  private:
    std::map<size_t, KktCache> pool_;
};

namespace detail {

struct SocScaling {
    int start;  // offset in the cone block
    int dim;
    double eta2 = 1.0;                 // eta^2
    Eigen::VectorXd wbar;              // NT point, wbar0^2 - |wbar_tail|^2 = 1
    Eigen::VectorXd q;                 // wbar tail
    double a = 1.0;                    // wbar head
};

}  // namespace detail

class ConicSolver {
  public:
    explicit ConicSolver(const ConicProgram& prog, const SolveOptions& opts = {},
                         KktCache* cache = nullptr)
        : prog_(prog), opts_(opts), cache_(cache) {
        prog.check();
        split_rows();
        equilibrate();
        build_kkt_pattern();
    }

    Solution solve() {
        Solution sol;
        if (!init_point(sol)) {
            sol.status = SolveStatus::Numerical;
            return sol;
        }

        for (iter_ = 0; iter_ < opts_.max_iter; ++iter_) {
            compute_residuals();
            if (opts_.log) append_log(sol);

            if (check_termination(sol)) return finish(sol);
            remember_best();

            if (!update_scalings()) {
                // Scaling point left the cone: restore the best iterate and
                // accept it if it is close enough, otherwise report the
                // breakdown.
                return finish_from_best(sol);
            }
            update_kkt_values();
            factorize_kkt();

            // Static direction for the tau column.
            kkt_solve(rhs_static_, dx1_, dy1_, dz1_);
            const double dtau_denom =
                kap_ / tau_ - c_.dot(dx1_) - beq_.dot(dy1_) - h_.dot(dz1_);
            if (!(std::abs(dtau_denom) > 0) || !std::isfinite(dtau_denom)) {
                return finish_from_best(sol);
            }

            // Affine (predictor) direction.
            rhs_x_ = rx_;
            rhs_y_ = -ry_;
            rhs_z_ = s_ - rz_;
            kkt_solve_xyz(dx2_, dy2_, dz2_);
            const double dtau_aff =
                (rt_ - kap_ + c_.dot(dx2_) + beq_.dot(dy2_) + h_.dot(dz2_)) / dtau_denom;
            dz2_ += dtau_aff * dz1_;
            scale_w(dz2_, w_dz_);                    // W dz_aff
            ds_by_w_ = -w_dz_ - lambda_;             // W^{-T} ds_aff
            const double dkap_aff = -kap_ - kap_ / tau_ * dtau_aff;
            const double alpha_aff =
                line_search(ds_by_w_, w_dz_, tau_, dtau_aff, kap_, dkap_aff);

            double sigma = std::pow(1.0 - alpha_aff, 3);
            sigma = std::min(std::max(sigma, 1e-4), 0.99);

            // Combined (corrector) direction.
            // ds_comb = lambda o lambda + (W^{-T} ds_aff) o (W dz_aff) - sigma mu e
            conic_product(lambda_, lambda_, tmp1_);
            conic_product(ds_by_w_, w_dz_, tmp2_);
            tmp1_ += tmp2_;
            add_neg_identity(tmp1_, sigma * mu_);
            conic_division(lambda_, tmp1_, ds_by_w_);  // lambda \ ds_comb
            scale_w(ds_by_w_, tmp2_);                  // W (lambda \ ds_comb)
            const double oms = 1.0 - sigma;
            rhs_x_ = oms * rx_;
            rhs_y_ = -oms * ry_;
            rhs_z_ = tmp2_ - oms * rz_;
            kkt_solve_xyz(dx2_, dy2_, dz2_);
            const double bkap = kap_ * tau_ + dkap_aff * dtau_aff - sigma * mu_;
            const double dtau = (oms * rt_ - bkap / tau_ + c_.dot(dx2_) + beq_.dot(dy2_) +
                                 h_.dot(dz2_)) /
                                dtau_denom;
            dx2_ += dtau * dx1_;
            dy2_ += dtau * dy1_;
            dz2_ += dtau * dz1_;
            scale_w(dz2_, w_dz_);
            ds_by_w_ = -(ds_by_w_ + w_dz_);
            const double dkap = -(bkap + kap_ * dtau) / tau_;

            double alpha = 0.99 * line_search(ds_by_w_, w_dz_, tau_, dtau, kap_, dkap);
            scale_w(ds_by_w_, tmp1_);  // unscaled ds = W (W^{-T} ds)

            x_ += alpha * dx2_;
            y_ += alpha * dy2_;
            z_ += alpha * dz2_;
            s_ += alpha * tmp1_;
            tau_ += alpha * dtau;
            kap_ += alpha * dkap;

            if (!(tau_ > 0) || !std::isfinite(tau_) || !x_.allFinite() || !s_.allFinite()) {
                return finish_from_best(sol);
            }
        }
        compute_residuals();
        if (check_termination(sol)) return finish(sol);
        remember_best();
        restore_best();
        compute_residuals();
        if (check_termination(sol)) return finish(sol);
        if (accept_relaxed()) {
            sol.status = SolveStatus::Optimal;
            return finish(sol);
        }
        sol.status = SolveStatus::IterLimit;
        return finish(sol);
    }

  private:
    const ConicProgram& prog_;
    SolveOptions opts_;
    KktCache* cache_;
    KktCache own_cache_;

    // Split data
    Eigen::SparseMatrix<double> Aeq_, G_, Aeq_t_, G_t_;
    Eigen::VectorXd beq_, h_, c_;
    double c0_ = 0.0;
    int n_ = 0, p_ = 0, m_ = 0;      // cols, eq rows, cone rows
    int n_lp_ = 0;                   // leading nonneg rows in the cone block
    std::vector<detail::SocScaling> socs_;
    std::vector<int> row_to_slot_;   // original row -> eq slot (>=0) or ~cone slot
    // Equilibration scalings
    Eigen::VectorXd col_scale_, eq_scale_, cone_scale_;

    // KKT
    Eigen::SparseMatrix<double> K_;
    std::vector<int> kkt_lp_idx_;                 // value index of each LP diagonal
    std::vector<std::vector<int>> kkt_soc_idx_;   // value indices of SOC lower blocks
    Eigen::VectorXd rhs_static_, rhs_x_, rhs_y_, rhs_z_;

    // Iterates
    Eigen::VectorXd x_, y_, z_, s_, lambda_, lp_w2_;
    double tau_ = 1.0, kap_ = 1.0;
    int iter_ = 0;

    // Work vectors
    Eigen::VectorXd rx_, ry_, rz_, dx1_, dy1_, dz1_, dx2_, dy2_, dz2_;
    Eigen::VectorXd w_dz_, ds_by_w_, tmp1_, tmp2_;
    double rt_ = 0, mu_ = 0, cx_ = 0, by_ = 0, hz_ = 0;
    bool have_best_ = false;
    double best_merit_ = 0.0, best_tau_ = 1.0, best_kap_ = 1.0;
    Eigen::VectorXd best_x_, best_y_, best_z_, best_s_;
    double pres_ = 0, dres_ = 0, gap_ = 0, relgap_ = 0, pcost_ = 0, dcost_ = 0;
    double resx0_ = 1, resy0_ = 1, resz0_ = 1;
    double hresx_ = 0, hresy_ = 0, hresz_ = 0;
    std::optional<double> pinfres_, dinfres_;
    std::ostringstream log_;

    QdLdl& ldl() { return (cache_ ? *cache_ : own_cache_).ldl; }

    void factorize_kkt() {
        ldl().factorize(K_, 1e-13, std::max(opts_.static_reg, 1e-8));
    }

    void split_rows() {
        n_ = prog_.num_cols();
        row_to_slot_.assign(prog_.num_rows(), 0);
        std::vector<Eigen::Triplet<double>> eq_trip, g_trip;
        std::vector<double> beq, h;
        // First pass: nonneg rows lead the cone block, then SOC segments.
        int row = 0;
        for (const ConeSeg& seg : prog_.cones()) {
            if (seg.kind == ConeKind::NonNeg) n_lp_ += seg.dim;
            row += seg.dim;
        }
        int eq_slot = 0, lp_slot = 0, soc_slot = n_lp_;
        row = 0;
        for (const ConeSeg& seg : prog_.cones()) {
            for (int i = 0; i < seg.dim; ++i, ++row) {
                int slot;
                if (seg.kind == ConeKind::Zero) {
                    slot = eq_slot++;
                    row_to_slot_[row] = slot;
                    for (const Coef& cf : prog_.rows()[row])
                        eq_trip.emplace_back(slot, cf.col, cf.value);
                    beq.push_back(prog_.rhs()[row]);
                } else {
                    slot = (seg.kind == ConeKind::NonNeg) ? lp_slot++ : soc_slot++;
                    row_to_slot_[row] = ~slot;
                    for (const Coef& cf : prog_.rows()[row])
                        g_trip.emplace_back(slot, cf.col, cf.value);
                    if (static_cast<int>(h.size()) <= slot) h.resize(slot + 1);
                    h[slot] = prog_.rhs()[row];
                }
            }
            if (seg.kind == ConeKind::Soc)
                socs_.push_back({soc_slot - seg.dim, seg.dim});
        }
        p_ = eq_slot;
        m_ = n_lp_;
        for (const auto& sc : socs_) m_ += sc.dim;
        Aeq_.resize(p_, n_);
        Aeq_.setFromTriplets(eq_trip.begin(), eq_trip.end());
        G_.resize(m_, n_);
        G_.setFromTriplets(g_trip.begin(), g_trip.end());
        beq_ = Eigen::Map<Eigen::VectorXd>(beq.data(), p_);
        h_.resize(m_);
        for (int i = 0; i < m_; ++i) h_[i] = i < static_cast<int>(h.size()) ? h[i] : 0.0;
        c_ = Eigen::Map<const Eigen::VectorXd>(prog_.obj().data(), n_);
        c0_ = prog_.obj_offset();
    }

    // Ruiz-style equilibration; SOC row blocks share one scalar so cone
    // membership is preserved.
    void equilibrate() {
        col_scale_ = Eigen::VectorXd::Ones(n_);
        eq_scale_ = Eigen::VectorXd::Ones(p_);
        cone_scale_ = Eigen::VectorXd::Ones(m_);
        for (int pass = 0; pass < 3; ++pass) {
            Eigen::VectorXd cmax = Eigen::VectorXd::Zero(n_);
            Eigen::VectorXd rmax_eq = Eigen::VectorXd::Zero(p_);
            Eigen::VectorXd rmax_g = Eigen::VectorXd::Zero(m_);
            for (int k = 0; k < Aeq_.outerSize(); ++k)
                for (Eigen::SparseMatrix<double>::InnerIterator it(Aeq_, k); it; ++it) {
                    double a = std::abs(it.value());
                    cmax[it.col()] = std::max(cmax[it.col()], a);
                    rmax_eq[it.row()] = std::max(rmax_eq[it.row()], a);
                }
            for (int k = 0; k < G_.outerSize(); ++k)
                for (Eigen::SparseMatrix<double>::InnerIterator it(G_, k); it; ++it) {
                    double a = std::abs(it.value());
                    cmax[it.col()] = std::max(cmax[it.col()], a);
                    rmax_g[it.row()] = std::max(rmax_g[it.row()], a);
                }
            for (const auto& sc : socs_) {
                double blockmax = 0.0;
                for (int i = 0; i < sc.dim; ++i)
                    blockmax = std::max(blockmax, rmax_g[sc.start + i]);
                for (int i = 0; i < sc.dim; ++i) rmax_g[sc.start + i] = blockmax;
            }
            auto inv_sqrt = [](double v) { return v > 0 ? 1.0 / std::sqrt(v) : 1.0; };
            Eigen::VectorXd dc = cmax.unaryExpr(inv_sqrt);
            Eigen::VectorXd de = rmax_eq.unaryExpr(inv_sqrt);
            Eigen::VectorXd dg = rmax_g.unaryExpr(inv_sqrt);
            Aeq_ = de.asDiagonal() * Aeq_ * dc.asDiagonal();
            G_ = dg.asDiagonal() * G_ * dc.asDiagonal();
            col_scale_ = col_scale_.cwiseProduct(dc);
            eq_scale_ = eq_scale_.cwiseProduct(de);
            cone_scale_ = cone_scale_.cwiseProduct(dg);
        }
        beq_ = beq_.cwiseProduct(eq_scale_);
        h_ = h_.cwiseProduct(cone_scale_);
        c_ = c_.cwiseProduct(col_scale_);
        Aeq_t_ = Aeq_.transpose();
        G_t_ = G_.transpose();
        resx0_ = std::max(1.0, c_.norm());
        resy0_ = std::max(1.0, beq_.norm());
        resz0_ = std::max(1.0, h_.norm());
    }

    void build_kkt_pattern() {
        // KKT = [ dI  Aeq'  G' ; Aeq  -dI  0 ; G  0  -W^2-dI ], lower half stored.
        std::vector<Eigen::Triplet<double>> trip;
        const double d = opts_.static_reg;
        for (int j = 0; j < n_; ++j) trip.emplace_back(j, j, d);
        // Build from the untransposed matrices: rows below the diagonal.
        for (int k = 0; k < Aeq_.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(Aeq_, k); it; ++it)
                trip.emplace_back(n_ + it.row(), it.col(), it.value());
        for (int j = 0; j < p_; ++j) trip.emplace_back(n_ + j, n_ + j, -d);
        for (int k = 0; k < G_.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(G_, k); it; ++it)
                trip.emplace_back(n_ + p_ + it.row(), it.col(), it.value());
        for (int i = 0; i < n_lp_; ++i)
            trip.emplace_back(n_ + p_ + i, n_ + p_ + i, -1.0 - d);
        for (const auto& sc : socs_)
            for (int i = 0; i < sc.dim; ++i)
                for (int j = 0; j <= i; ++j)
                    trip.emplace_back(n_ + p_ + sc.start + i, n_ + p_ + sc.start + j,
                                      (i == j) ? -1.0 - d : 1e-300);
        const int N = n_ + p_ + m_;
        K_.resize(N, N);
        K_.setFromTriplets(trip.begin(), trip.end());
        K_.makeCompressed();

        // Record value-array positions of the mutable W^2 entries.
        kkt_lp_idx_.resize(n_lp_);
        for (int i = 0; i < n_lp_; ++i)
            kkt_lp_idx_[i] = value_index(n_ + p_ + i, n_ + p_ + i);
        kkt_soc_idx_.resize(socs_.size());
        for (size_t sidx = 0; sidx < socs_.size(); ++sidx) {
            const auto& sc = socs_[sidx];
            auto& idx = kkt_soc_idx_[sidx];
            for (int i = 0; i < sc.dim; ++i)
                for (int j = 0; j <= i; ++j)
                    idx.push_back(value_index(n_ + p_ + sc.start + i, n_ + p_ + sc.start + j));
        }
        rhs_static_.resize(N);
    }

    int value_index(int row, int col) const {
        for (int idx = K_.outerIndexPtr()[col]; idx < K_.outerIndexPtr()[col + 1]; ++idx)
            if (K_.innerIndexPtr()[idx] == row) return idx;
        throw std::runtime_error("KKT pattern entry missing");
    }

    void set_identity_scaling() {
        lp_w2_ = Eigen::VectorXd::Ones(std::max(n_lp_, 1));
        double* vals = K_.valuePtr();
        for (int i = 0; i < n_lp_; ++i) vals[kkt_lp_idx_[i]] = -1.0 - opts_.static_reg;
        for (size_t sidx = 0; sidx < socs_.size(); ++sidx) {
            auto& sc = socs_[sidx];
            sc.eta2 = 1.0;
            sc.a = 1.0;
            sc.wbar = Eigen::VectorXd::Zero(sc.dim);
            sc.wbar[0] = 1.0;
            sc.q = Eigen::VectorXd::Zero(sc.dim - 1);
            int k = 0;
            for (int i = 0; i < sc.dim; ++i)
                for (int j = 0; j <= i; ++j, ++k)
                    vals[kkt_soc_idx_[sidx][k]] = (i == j) ? -1.0 - opts_.static_reg : 0.0;
        }
    }

    bool init_point(Solution& sol) {
        (void)sol;
        const int N = n_ + p_ + m_;
        x_.resize(n_); y_.resize(p_); z_.resize(m_); s_.resize(m_);
        lambda_.resize(m_);
        rx_.resize(n_); ry_.resize(p_); rz_.resize(m_);
        dx1_.resize(n_); dy1_.resize(p_); dz1_.resize(m_);
        dx2_.resize(n_); dy2_.resize(p_); dz2_.resize(m_);
        w_dz_.resize(m_); ds_by_w_.resize(m_); tmp1_.resize(m_); tmp2_.resize(m_);
        rhs_x_.resize(n_); rhs_y_.resize(p_); rhs_z_.resize(m_);

        set_identity_scaling();
        if (!ldl().analyzed()) {
            std::vector<int8_t> signs(n_ + p_ + m_, -1);
            for (int j = 0; j < n_; ++j) signs[j] = 1;
            ldl().analyze(K_, signs);
        }
        factorize_kkt();

        // Primal start: argmin ||Gx - h|| s.t. Aeq x = b, brought into the cone.
        rhs_x_.setZero(); rhs_y_ = beq_; rhs_z_ = h_;
        kkt_solve_xyz(x_, y_, dz1_);
        bring_to_cone(Eigen::VectorXd(-dz1_), s_);
        // Dual start.
        rhs_x_ = -c_; rhs_y_.setZero(); rhs_z_.setZero();
        kkt_solve_xyz(dx2_, y_, dz2_);
        bring_to_cone(dz2_, z_);
        tau_ = 1.0;
        kap_ = 1.0;

        rhs_static_.head(n_) = -c_;
        rhs_static_.segment(n_, p_) = beq_;
        rhs_static_.tail(m_) = h_;
        return true;
    }

    void compute_residuals() {
        rx_ = -Aeq_t_ * y_ - G_t_ * z_ - tau_ * c_;
        hresx_ = rx_.norm();
        ry_ = Aeq_ * x_;
        hresy_ = ry_.norm();
        ry_ -= tau_ * beq_;
        rz_ = s_ + G_ * x_;
        hresz_ = rz_.norm();
        rz_ -= tau_ * h_;
        cx_ = c_.dot(x_);
        by_ = beq_.dot(y_);
        hz_ = h_.dot(z_);
        rt_ = kap_ + cx_ + by_ + hz_;

        gap_ = s_.dot(z_);
        const double deg = n_lp_ + static_cast<double>(socs_.size()) + 1.0;
        mu_ = (gap_ + tau_ * kap_) / deg;
        pcost_ = cx_ / tau_;
        dcost_ = -(hz_ + by_) / tau_;
        if (pcost_ < 0) relgap_ = gap_ / (-pcost_);
        else if (dcost_ > 0) relgap_ = gap_ / dcost_;
        else relgap_ = std::numeric_limits<double>::infinity();

        const double nx = x_.norm(), ny = y_.norm(), nz = z_.norm(), ns = s_.norm();
        const double nry = p_ > 0 ? ry_.norm() / std::max(resy0_ + nx, 1.0) : 0.0;
        const double nrz = rz_.norm() / std::max(resz0_ + nx + ns, 1.0);
        pres_ = std::max(nry, nrz) / tau_;
        dres_ = hresx_ / std::max(resx0_ + ny + nz, 1.0) / tau_;

        pinfres_.reset();
        dinfres_.reset();
        // Certificate residuals are measured on the normalized rays, i.e.
        // relative to |b'y + h'z| (resp. |c'x|), so a declared certificate
        // is accurate after rescaling.
        if ((hz_ + by_) < -1e-12 * std::max(ny + nz, 1.0)) {
            const double cert_res = (rx_ + tau_ * c_).norm();
            pinfres_ = cert_res / (-(hz_ + by_));
        }
        if (cx_ < -1e-12 * std::max(nx, 1.0))
            dinfres_ = std::max(hresy_, hresz_) / (-cx_);
    }

    bool check_termination(Solution& sol) {
        const double ft = opts_.feas_tol, gt = opts_.gap_tol;
        if (pres_ < ft && dres_ < ft && (gap_ < gt || relgap_ < gt)) {
            sol.status = SolveStatus::Optimal;
            return true;
        }
        if (pinfres_ && *pinfres_ < ft && tau_ < kap_) {
            sol.status = SolveStatus::PrimalInfeasible;
            return true;
        }
        if (dinfres_ && *dinfres_ < ft && tau_ < kap_) {
            sol.status = SolveStatus::DualInfeasible;
            return true;
        }
        return false;
    }

    // Quality metric for best-iterate tracking; lower is better.
    double iterate_merit() const {
        return std::max({pres_, dres_, std::min(gap_, relgap_)});
    }

    void remember_best() {
        const double merit = iterate_merit();
        if (!have_best_ || merit < best_merit_) {
            have_best_ = true;
            best_merit_ = merit;
            best_x_ = x_;
            best_y_ = y_;
            best_z_ = z_;
            best_s_ = s_;
            best_tau_ = tau_;
            best_kap_ = kap_;
        }
    }

    void restore_best() {
        if (!have_best_) return;
        x_ = best_x_;
        y_ = best_y_;
        z_ = best_z_;
        s_ = best_s_;
        tau_ = best_tau_;
        kap_ = best_kap_;
    }

    // Close-to-optimal acceptance once the numerics cannot improve the
    // iterate further. The residual level is far below anything the cutting-plane
    // layer can distinguish, and two orders stricter than the usual
    // "inaccurate optimal" convention.
    bool accept_relaxed() const {
        return pres_ < std::max(opts_.feas_tol, 1e-6) &&
               dres_ < std::max(opts_.feas_tol, 1e-6) &&
               (relgap_ < std::max(1e4 * opts_.gap_tol, 1e-6) ||
                gap_ < std::max(1e4 * opts_.gap_tol, 1e-6));
    }

    Solution finish_from_best(Solution& sol) {
        restore_best();
        compute_residuals();
        if (check_termination(sol)) return finish(sol);
        if (accept_relaxed()) {
            sol.status = SolveStatus::Optimal;
            return finish(sol);
        }
        sol.status = SolveStatus::Numerical;
        return finish(sol);
    }

    bool update_scalings() {
        for (int i = 0; i < n_lp_; ++i) {
            if (!(s_[i] > 0) || !(z_[i] > 0)) return false;
            lp_w2_[i] = s_[i] / z_[i];
            lambda_[i] = std::sqrt(s_[i] * z_[i]);
        }
        for (auto& sc : socs_) {
            const auto sseg = s_.segment(sc.start, sc.dim);
            const auto zseg = z_.segment(sc.start, sc.dim);
            const double sres = sseg[0] * sseg[0] - sseg.tail(sc.dim - 1).squaredNorm();
            const double zres = zseg[0] * zseg[0] - zseg.tail(sc.dim - 1).squaredNorm();
            if (!(sres > 0) || !(zres > 0)) return false;
            const double snorm = std::sqrt(sres), znorm = std::sqrt(zres);
            Eigen::VectorXd skbar = sseg / snorm, zkbar = zseg / znorm;
            sc.eta2 = snorm / znorm;
            double gamma = std::sqrt(0.5 * (1.0 + skbar.dot(zkbar)));
            sc.wbar.resize(sc.dim);
            sc.wbar[0] = (0.5 / gamma) * (skbar[0] + zkbar[0]);
            sc.wbar.tail(sc.dim - 1) =
                (0.5 / gamma) * (skbar.tail(sc.dim - 1) - zkbar.tail(sc.dim - 1));
            sc.a = sc.wbar[0];
            sc.q = sc.wbar.tail(sc.dim - 1);
        }
        scale_w(z_, lambda_);
        return true;
    }

    void update_kkt_values() {
        double* vals = K_.valuePtr();
        const double d = opts_.static_reg;
        for (int i = 0; i < n_lp_; ++i) vals[kkt_lp_idx_[i]] = -lp_w2_[i] - d;
        for (size_t sidx = 0; sidx < socs_.size(); ++sidx) {
            const auto& sc = socs_[sidx];
            // W^2 = eta^2 (2 wbar wbar' - J)
            int k = 0;
            for (int i = 0; i < sc.dim; ++i) {
                for (int j = 0; j <= i; ++j, ++k) {
                    double w2 = 2.0 * sc.wbar[i] * sc.wbar[j];
                    if (i == j) w2 -= (i == 0) ? 1.0 : -1.0;
                    vals[kkt_soc_idx_[sidx][k]] = -sc.eta2 * w2 - ((i == j) ? d : 0.0);
                }
            }
        }
    }

    // lambda = W z etc.  W = diag(sqrt(w2)) on LP part; NT form on SOCs.
    void scale_w(const Eigen::VectorXd& u, Eigen::VectorXd& out) const {
        out.head(n_lp_) = lp_w2_.head(n_lp_).cwiseSqrt().cwiseProduct(u.head(n_lp_));
        for (const auto& sc : socs_) {
            const auto useg = u.segment(sc.start, sc.dim);
            const double eta = std::sqrt(sc.eta2);
            const double zeta = sc.q.dot(useg.tail(sc.dim - 1));
            out[sc.start] = eta * (sc.a * useg[0] + zeta);
            out.segment(sc.start + 1, sc.dim - 1) =
                eta * (useg.tail(sc.dim - 1) + (useg[0] + zeta / (1.0 + sc.a)) * sc.q);
        }
    }

    // W^2 u, used in refinement residuals.
    void apply_w2(const Eigen::VectorXd& u, Eigen::VectorXd& out) const {
        out.head(n_lp_) = lp_w2_.head(n_lp_).cwiseProduct(u.head(n_lp_));
        for (const auto& sc : socs_) {
            const auto useg = u.segment(sc.start, sc.dim);
            Eigen::VectorXd Ju = useg;
            Ju.tail(sc.dim - 1) *= -1.0;
            // W^2 u = eta^2 (2 wbar (wbar'u) - J u)
            const double wdotu = sc.wbar[0] * useg[0] + sc.q.dot(useg.tail(sc.dim - 1));
            out.segment(sc.start, sc.dim) = sc.eta2 * (2.0 * wdotu * sc.wbar - Ju);
        }
    }

    void conic_product(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                       Eigen::VectorXd& w) const {
        w.head(n_lp_) = u.head(n_lp_).cwiseProduct(v.head(n_lp_));
        for (const auto& sc : socs_) {
            const auto useg = u.segment(sc.start, sc.dim);
            const auto vseg = v.segment(sc.start, sc.dim);
            w[sc.start] = useg.dot(vseg);
            w.segment(sc.start + 1, sc.dim - 1) =
                useg[0] * vseg.tail(sc.dim - 1) + vseg[0] * useg.tail(sc.dim - 1);
        }
    }

    // v = u \ w in the Jordan algebra.
    void conic_division(const Eigen::VectorXd& u, const Eigen::VectorXd& w,
                        Eigen::VectorXd& v) const {
        v.head(n_lp_) = w.head(n_lp_).cwiseQuotient(u.head(n_lp_));
        for (const auto& sc : socs_) {
            const auto useg = u.segment(sc.start, sc.dim);
            const auto wseg = w.segment(sc.start, sc.dim);
            const double u0 = useg[0], w0 = wseg[0];
            const double rho = u0 * u0 - useg.tail(sc.dim - 1).squaredNorm();
            const double zeta = useg.tail(sc.dim - 1).dot(wseg.tail(sc.dim - 1));
            const double factor = (zeta / u0 - w0) / rho;
            v[sc.start] = (u0 * w0 - zeta) / rho;
            v.segment(sc.start + 1, sc.dim - 1) =
                factor * useg.tail(sc.dim - 1) + wseg.tail(sc.dim - 1) / u0;
        }
    }

    // w -= sigma_mu * e per cone (e = ones on LP, (1,0,..) on SOC).
    void add_neg_identity(Eigen::VectorXd& w, double sigma_mu) const {
        w.head(n_lp_).array() -= sigma_mu;
        for (const auto& sc : socs_) w[sc.start] -= sigma_mu;
    }

    void bring_to_cone(const Eigen::VectorXd& r, Eigen::VectorXd& out) const {
        double alpha = -0.99;
        for (int i = 0; i < n_lp_; ++i)
            if (r[i] <= 0 && -r[i] > alpha) alpha = -r[i];
        for (const auto& sc : socs_) {
            const double cres = r[sc.start] - r.segment(sc.start + 1, sc.dim - 1).norm();
            if (cres <= 0 && -cres > alpha) alpha = -cres;
        }
        alpha += 1.0;
        out = r;
        out.head(n_lp_).array() += alpha;
        for (const auto& sc : socs_) out[sc.start] += alpha;
    }

    double line_search(const Eigen::VectorXd& ds, const Eigen::VectorXd& dz, double tau,
                       double dtau, double kap, double dkap) const {
        double alpha = 10.0;
        if (n_lp_ > 0) {
            const double rhomin =
                (ds.head(n_lp_).cwiseQuotient(lambda_.head(n_lp_))).minCoeff();
            const double sigmin =
                (dz.head(n_lp_).cwiseQuotient(lambda_.head(n_lp_))).minCoeff();
            const double worst = std::min(rhomin, sigmin);
            alpha = worst < 0 ? 1.0 / (-worst) : 1e13;
        }
        if (dtau < 0) alpha = std::min(alpha, -tau / dtau);
        if (dkap < 0) alpha = std::min(alpha, -kap / dkap);
        for (const auto& sc : socs_) {
            const auto lk = lambda_.segment(sc.start, sc.dim);
            const double lknorm2 = lk[0] * lk[0] - lk.tail(sc.dim - 1).squaredNorm();
            if (lknorm2 <= 0) continue;
            const double lknorm = std::sqrt(lknorm2);
            Eigen::VectorXd lkbar = lk / lknorm;
            const double inv = 1.0 / lknorm;
            auto decompose = [&](const Eigen::VectorXd& d, double& normval) {
                const auto dseg = d.segment(sc.start, sc.dim);
                const double lbar_d =
                    lkbar[0] * dseg[0] - lkbar.tail(sc.dim - 1).dot(dseg.tail(sc.dim - 1));
                const double f = (lbar_d + dseg[0]) / (lkbar[0] + 1.0);
                Eigen::VectorXd r(sc.dim);
                r[0] = inv * lbar_d;
                r.tail(sc.dim - 1) =
                    inv * (dseg.tail(sc.dim - 1) - f * lkbar.tail(sc.dim - 1));
                normval = r.tail(sc.dim - 1).norm() - r[0];
            };
            double rhonorm = 0, signorm = 0;
            decompose(ds, rhonorm);
            decompose(dz, signorm);
            const double step = std::max(rhonorm, signorm);
            if (step > 0) alpha = std::min(alpha, 1.0 / step);
        }
        return std::min(alpha, 1.0);
    }

    void kkt_solve_xyz(Eigen::VectorXd& dx, Eigen::VectorXd& dy, Eigen::VectorXd& dz) {
        Eigen::VectorXd rhs(n_ + p_ + m_);
        rhs.head(n_) = rhs_x_;
        rhs.segment(n_, p_) = rhs_y_;
        rhs.tail(m_) = rhs_z_;
        kkt_solve(rhs, dx, dy, dz);
    }

    void kkt_solve(const Eigen::VectorXd& rhs, Eigen::VectorXd& dx, Eigen::VectorXd& dy,
                   Eigen::VectorXd& dz) {
        Eigen::VectorXd sol = ldl().solve(rhs);
        Eigen::VectorXd w2dz(m_), correction;
        double prev_err = std::numeric_limits<double>::max();
        // Refine against the unregularized operator; undo a correction
        // that makes the residual worse.
        for (int pass = 0; pass <= opts_.refine_passes; ++pass) {
            dx = sol.head(n_);
            dy = sol.segment(n_, p_);
            dz = sol.tail(m_);
            Eigen::VectorXd ex = rhs.head(n_) - Aeq_t_ * dy - G_t_ * dz;
            Eigen::VectorXd ey = rhs.segment(n_, p_) - Aeq_ * dx;
            apply_w2(dz, w2dz);
            Eigen::VectorXd ez = rhs.tail(m_) - G_ * dx + w2dz;
            const double err = std::max({ex.lpNorm<Eigen::Infinity>(),
                                         p_ ? ey.lpNorm<Eigen::Infinity>() : 0.0,
                                         ez.lpNorm<Eigen::Infinity>()});
            if (pass > 0 && err > prev_err) {
                sol -= correction;
                break;
            }
            prev_err = err;
            if (pass == opts_.refine_passes ||
                err < 1e-14 * (1.0 + rhs.lpNorm<Eigen::Infinity>()))
                break;
            Eigen::VectorXd e(n_ + p_ + m_);
            e.head(n_) = ex;
            e.segment(n_, p_) = ey;
            e.tail(m_) = ez;
            correction = ldl().solve(e);
            sol += correction;
        }
        dx = sol.head(n_);
        dy = sol.segment(n_, p_);
        dz = sol.tail(m_);
    }

    void append_log(Solution& sol) {
        (void)sol;
        log_ << iter_ << " mu " << mu_ << " pres " << pres_ << " dres " << dres_
             << " gap " << relgap_ << " tau " << tau_ << " kap " << kap_ << "\n";
    }

    Solution finish(Solution& sol) {
        sol.iterations = iter_;
        sol.log = log_.str();
        // Infeasibility certificates are normalized so b'y + h'z = -1
        // (primal) or c'x = -1 (dual).
        double scale = tau_;
        if (sol.status == SolveStatus::PrimalInfeasible)
            scale = -(by_ + hz_) > 0 ? -(by_ + hz_) : 1.0;
        else if (sol.status == SolveStatus::DualInfeasible)
            scale = -cx_ > 0 ? -cx_ : 1.0;
        // Undo equilibration; x = E x', y = D y', z = D z', s = D^{-1} s'.
        sol.x.resize(n_);
        for (int j = 0; j < n_; ++j) sol.x[j] = col_scale_[j] * x_[j] / scale;
        sol.y.assign(prog_.num_rows(), 0.0);
        sol.s.assign(prog_.num_rows(), 0.0);
        for (int r = 0; r < prog_.num_rows(); ++r) {
            int slot = row_to_slot_[r];
            if (slot >= 0) sol.y[r] = eq_scale_[slot] * y_[slot] / scale;
            else {
                int cslot = ~slot;
                sol.y[r] = cone_scale_[cslot] * z_[cslot] / scale;
                sol.s[r] = s_[cslot] / (cone_scale_[cslot] * scale);
            }
        }
        sol.obj = sol.status == SolveStatus::Optimal || sol.status == SolveStatus::IterLimit
                      ? pcost_ + c0_
                      : std::numeric_limits<double>::quiet_NaN();
        sol.gap = relgap_;
        sol.primal_res = pres_;
        sol.dual_res = dres_;
        return sol;
    }
};

inline Solution solve(const ConicProgram& prog, const SolveOptions& opts = {},
                      KktCache* cache = nullptr) {
    ConicSolver solver(prog, opts, cache);
    return solver.solve();
}

// Solve with one heavier-regularization retry on numerical breakdown.
// Same sparsity pattern, so a shared cache stays valid.
inline Solution solve_with_fallback(const ConicProgram& prog, const SolveOptions& opts = {},
                                    KktCache* cache = nullptr) {
    Solution sol = solve(prog, opts, cache);
    if (sol.status == SolveStatus::Numerical || sol.status == SolveStatus::IterLimit) {
        SolveOptions retry = opts;
        retry.static_reg = std::max(1e-7, opts.static_reg * 10.0);
        retry.refine_passes = std::max(6, opts.refine_passes);
        retry.max_iter = std::max(300, opts.max_iter);
        Solution again = solve(prog, retry, cache);
        if (again.status == SolveStatus::Optimal ||
            again.status == SolveStatus::PrimalInfeasible ||
            again.status == SolveStatus::DualInfeasible)
            return again;
    }
    return sol;
}

// Duals keyed by row-label prefix: returns the multiplier for every row whose
// label is exactly `prefix:i` for i in [0, count).
inline std::vector<double> extract_row_duals(const ConicProgram& prog, const Solution& sol,
                                             const std::string& prefix, int count) {
    if (sol.status != SolveStatus::Optimal)
        throw std::runtime_error("duals requested from a non-optimal solution");
    std::vector<double> out(count, 0.0);
    for (int i = 0; i < count; ++i)
        out[i] = sol.y[prog.row_by_label(prefix + ":" + std::to_string(i))];
    return out;
}

}  // namespace ropf
