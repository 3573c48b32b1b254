#pragma once

// Sparse LDL' factorization for quasi-definite KKT systems, with AMD
// fill-reducing ordering and sign-aware dynamic pivot regularization:
// a pivot whose magnitude collapses is replaced by +-delta according to
// the block it belongs to, which keeps search directions usable at the
// extreme ends of the central path. Symbolic analysis is done once per
// sparsity pattern and reused across numeric refactorizations.

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

namespace ropf {

class QdLdl {
  public:
    // mat: lower-triangular part of the symmetric KKT (column compressed);
    // pivot_sign[i]: +1 for rows of the positive block, -1 otherwise.
    void analyze(const Eigen::SparseMatrix<double>& mat,
                 const std::vector<int8_t>& pivot_sign) {
        n_ = static_cast<int>(mat.rows());
        sign_orig_ = pivot_sign;

        Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm;
        Eigen::AMDOrdering<int> amd;
        Eigen::SparseMatrix<double> full = mat.selfadjointView<Eigen::Lower>();
        amd(full, perm);
        perm_ = std::vector<int>(perm.indices().data(), perm.indices().data() + n_);
        // Eigen convention: twisted = mat.twistedBy(perm) is P M P^T with
        // new index perm(old). We need old->new.
        inv_perm_.assign(n_, 0);
        for (int i = 0; i < n_; ++i) inv_perm_[perm_[i]] = i;

        // Permuted upper-triangular pattern in CSC with a value-gather map
        // from the source storage order.
        const int* outer = mat.outerIndexPtr();
        const int* inner = mat.innerIndexPtr();
        const int nnz = static_cast<int>(mat.nonZeros());
        up_col_.assign(n_ + 1, 0);
        up_row_.assign(nnz, 0);
        gather_.assign(nnz, 0);
        std::vector<int> count(n_, 0);
        for (int c = 0; c < n_; ++c)
            for (int p = outer[c]; p < outer[c + 1]; ++p) {
                int r = inner[p];
                int pr = inv_perm_[r], pc = inv_perm_[c];
                ++count[std::max(pr, pc)];
            }
        for (int j = 0; j < n_; ++j) up_col_[j + 1] = up_col_[j] + count[j];
        std::vector<int> next(up_col_.begin(), up_col_.end() - 1);
        for (int c = 0; c < n_; ++c)
            for (int p = outer[c]; p < outer[c + 1]; ++p) {
                int r = inner[p];
                int pr = inv_perm_[r], pc = inv_perm_[c];
                int col = std::max(pr, pc), row = std::min(pr, pc);
                up_row_[next[col]] = row;
                gather_[next[col]] = p;
                ++next[col];
            }

        // Elimination tree and column counts (LDL symbolic pass).
        parent_.assign(n_, -1);
        std::vector<int> flag(n_, -1), lnz(n_, 0);
        for (int j = 0; j < n_; ++j) {
            flag[j] = j;
            for (int p = up_col_[j]; p < up_col_[j + 1]; ++p) {
                int i = up_row_[p];
                while (i != j && flag[i] != j) {
                    if (parent_[i] == -1) parent_[i] = j;
                    ++lnz[i];
                    flag[i] = j;
                    i = parent_[i];
                }
            }
        }
        lp_.assign(n_ + 1, 0);
        for (int j = 0; j < n_; ++j) lp_[j + 1] = lp_[j] + lnz[j];
        li_.assign(lp_[n_], 0);
        lx_.assign(lp_[n_], 0.0);
        d_.assign(n_, 0.0);
        sign_perm_.assign(n_, 1);
        for (int j = 0; j < n_; ++j) sign_perm_[j] = sign_orig_[perm_[j]];
        y_.assign(n_, 0.0);
        pattern_.assign(n_, 0);
        lnz_work_.assign(n_, 0);
        flag_.assign(n_, -1);
        analyzed_ = true;
    }

    bool analyzed() const { return analyzed_; }

    // Numeric factorization from the same matrix object (values may have
    // changed, pattern must not). Returns the number of dynamically
    // regularized pivots.
    int factorize(const Eigen::SparseMatrix<double>& mat, double dyn_eps = 1e-13,
                  double dyn_reg = 1e-8) {
        const double* vals = mat.valuePtr();
        int bumped = 0;
        std::fill(lnz_work_.begin(), lnz_work_.end(), 0);
        for (int j = 0; j < n_; ++j) {
            y_[j] = 0.0;
            int top = n_;
            flag_[j] = j;
            for (int p = up_col_[j]; p < up_col_[j + 1]; ++p) {
                int i = up_row_[p];
                y_[i] += vals[gather_[p]];
                int len = 0;
                while (flag_[i] != j) {
                    pattern_[len++] = i;
                    flag_[i] = j;
                    i = parent_[i];
                }
                while (len > 0) pattern_[--top] = pattern_[--len];
            }
            double dj = y_[j];
            y_[j] = 0.0;
            for (; top < n_; ++top) {
                int i = pattern_[top];
                double yi = y_[i];
                y_[i] = 0.0;
                const int pend = lp_[i] + lnz_work_[i];
                for (int p = lp_[i]; p < pend; ++p) y_[li_[p]] -= lx_[p] * yi;
                double lji = yi / d_[i];
                dj -= lji * yi;
                li_[pend] = j;
                lx_[pend] = lji;
                ++lnz_work_[i];
            }
            if (sign_perm_[j] > 0 ? dj < dyn_eps : dj > -dyn_eps) {
                dj = sign_perm_[j] > 0 ? dyn_reg : -dyn_reg;
                ++bumped;
            }
            d_[j] = dj;
        }
        return bumped;
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
        Eigen::VectorXd x(n_);
        for (int j = 0; j < n_; ++j) x[j] = b[perm_[j]];
        for (int j = 0; j < n_; ++j) {
            const double xj = x[j];
            for (int p = lp_[j]; p < lp_[j + 1]; ++p) x[li_[p]] -= lx_[p] * xj;
        }
        for (int j = 0; j < n_; ++j) x[j] /= d_[j];
        for (int j = n_ - 1; j >= 0; --j) {
            double xj = x[j];
            for (int p = lp_[j]; p < lp_[j + 1]; ++p) xj -= lx_[p] * x[li_[p]];
            x[j] = xj;
        }
        Eigen::VectorXd out(n_);
        for (int j = 0; j < n_; ++j) out[perm_[j]] = x[j];
        return out;
    }

  private:
    int n_ = 0;
    bool analyzed_ = false;
    std::vector<int> perm_, inv_perm_;
    std::vector<int> up_col_, up_row_, gather_;
    std::vector<int> parent_, lp_, li_;
    std::vector<double> lx_, d_;
    std::vector<int8_t> sign_orig_, sign_perm_;
    // workspaces
    std::vector<double> y_;
    std::vector<int> pattern_, lnz_work_, flag_;
};

}  // namespace ropf
