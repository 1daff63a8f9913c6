#pragma once

#include "dkf/channel.hpp"
#include "dkf/local_filter.hpp"
#include "dkf/model.hpp"

#include <deque>
#include <iosfwd>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dkf {

// Per-node constants of the mean-form CSE error recursion.
struct NodeConstants {
    int d = 0;
    Mat Ad;    // A^d
    Mat Hd;    // A^d Hbar
    Mat HAd;   // A^d (I - Hbar) A
    Mat HbAd;  // A^d (I - Hbar)
    Mat Lam, V, W;
};

enum class Quantity { P, Gamma, Psi, Upsilon, Xi };

// Time-indexed store of P_ij, Gamma_ij, Psi_ij, Upsilon_ij, Xi_ij with the
// correlation kernels computed on demand.
//
// Start-up: x_hat_i(0) = x_hat^c_i(0) share the initial mean, every error at
// t = 0 equals e0 ~ N(0, P0) and for 0 < t <= d_i the CSE is a pure
// prediction, so x~^c_i(t) = A^t e0 + F_w(t, t).
class CovarianceEngine {
public:
    CovarianceEngine(const SystemModel& model, const std::vector<SelectionScheme>& schemes,
                     const std::vector<int>& delays, const Mat& P0);

    // Advances filters and ledger to now()+1.
    void advance();
    long now() const { return now_; }
    int nodes() const { return L_; }
    int n() const { return n_; }
    long window() const { return window_; }
    long tau(int i, int j) const;
    long tau_max() const { return tau_max_; }
    const NodeConstants& node(int i) const { return nc_[i]; }
    const SystemModel& model() const { return model_; }

    const Mat& P(int i, int j, long t) const;
    const Mat& Gamma(int i, int j, long t) const;
    const Mat& Psi(int i, int j, long t) const;
    const Mat& Upsilon(int i, int j, long t) const;
    const Mat& UpsilonHat(int i, int j, long t) const;
    const Mat& Xi(int i, int j, long t) const;
    bool has(Quantity q, int i, int j, long t) const;
    const Mat& PhiK(int i, long t) const;
    const Mat& GK(int i, long t) const;
    const Mat& K(int i, long t) const;

    // Assembled nL x nL matrix, symmetrized.
    Mat assemble_xi(long t) const;

    // Kernels. Negative noise times denote noise that does not exist (zero).
    Mat phi_w(int i, long t1, long t2);               // E{x~_i(t1) w(t2)^T}
    Mat phi_x(int i, int j, long t1, long t2);        // E{x~_i(t1) x~_j(t2)^T}
    Mat phi_F(int i, long t1, int g, long t2);        // E{x~_i(t1) F_w(g,t2)^T}
    Mat phi_wF(int g, long t1, long t2) const;        // E{F_w(g,t1) w(t2)^T}
    Mat noise_FF(int g1, long t1, int g2, long t2) const;  // E{F_w(g1,t1) F_w(g2,t2)^T}
    Mat theta_w(int i, long t1, long t2);             // E{x~^c_i(t1) w(t2)^T}
    Mat theta_F(int i, long t1, int g, long t2);      // E{x~^c_i(t1) F_w(g,t2)^T}
    Mat loc_cse(int i, long a, int j, long b);        // E{x~_i(a) x~^c_j(b)^T}
    Mat cse_cross(int i, long a, int j, long b);      // E{x~^c_i(a) x~^c_j(b)^T}, i != j
    // Product Phi_K(hi) ... Phi_K(lo+1); identity when hi <= lo.
    Mat phi_prod(int i, long hi, long lo);

    // chi_i(t1,t2): number of f_i steps until f^chi(t1) <= t2 (capped at 1e6).
    long chi(int i, long t1, long t2) const;
    // eta_ij: smallest eta >= 1 with eta (d_j + 1) - d_i >= 0.
    long eta(int i, int j) const;

    // CSV rows (t,i,j,block-row,block-col,value), 1-based node indices.
    void dump_csv(std::ostream& os, Quantity q, long t_from, long t_to, bool header = true) const;

private:
    struct Tick {
        std::vector<Mat> PhiK, GK, K;
        std::vector<Mat> P, Gamma, Psi, Ups, UpsHat, Xi;  // L*L, empty Mat = undefined
    };
    struct Key {
        int kind, i, j, g;
        long t1, t2;
        bool operator==(const Key& o) const {
            return kind == o.kind && i == o.i && j == o.j && g == o.g && t1 == o.t1 && t2 == o.t2;
        }
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const;
    };

    const Tick& tick(long t) const;
    Tick& tick_mut(long t);
    const Mat& get(Quantity q, int i, int j, long t) const;
    std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i * L_ + j); }
    const Mat& Apow(int k) const;

    void compute_gamma(long t);
    void compute_psi(long t);
    void compute_xi_diag(int i, long t);
    void compute_xi_offdiag(int i, int j, long t);
    std::pair<Mat, Mat> upsilon_lemma6(int i, int j, long t);

    // Atoms of the pairwise cross-covariance expansion: local error, process noise, or accumulated noise.
    enum class AtomKind { Loc, W, F };
    struct Atom {
        AtomKind kind;
        long s;
        int g;
    };
    Mat atom_corr(int i, const Atom& a, int j, const Atom& b);
    Mat atom_cse_corr(int i, const Atom& a, int j, long b);

    void evict();

    SystemModel model_;
    int L_, n_;
    Mat P0_;
    std::vector<NodeConstants> nc_;
    std::vector<Mat> apow_;
    std::vector<LocalFilterState> filters_;
    std::deque<Tick> hist_;
    long t0_ = 0;  // time of hist_.front()
    long now_ = 0;
    long tau_max_ = 1;
    long window_ = 0;
    std::unordered_map<Key, Mat, KeyHash> cache_;
};

}  // namespace dkf
