#include "dkf/covariance.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <ostream>

namespace dkf {

namespace {
enum KernelKind { kPhiW, kPhiX, kPhiF, kThetaW, kThetaF, kLocCse, kCseCross, kProd };
constexpr long kChiCap = 1000000;
}  // namespace

std::size_t CovarianceEngine::KeyHash::operator()(const Key& k) const {
    std::size_t h = static_cast<std::size_t>(k.kind);
    auto mix = [&h](std::size_t v) { h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2); };
    mix(static_cast<std::size_t>(k.i));
    mix(static_cast<std::size_t>(k.j));
    mix(static_cast<std::size_t>(k.g));
    mix(static_cast<std::size_t>(k.t1));
    mix(static_cast<std::size_t>(k.t2));
    return h;
}

CovarianceEngine::CovarianceEngine(const SystemModel& model, const std::vector<SelectionScheme>& schemes,
                                   const std::vector<int>& delays, const Mat& P0)
    : model_(model), L_(model.nodes()), n_(model.n()), P0_(P0) {
    require(static_cast<int>(schemes.size()) == L_, "one selection scheme per node required");
    require(static_cast<int>(delays.size()) == L_, "one delay per node required");
    require(P0.rows() == n_ && P0.cols() == n_, "P0 dimension mismatch");
    const Mat I = Mat::Identity(n_, n_);
    int dmax = 0;
    for (int i = 0; i < L_; ++i) {
        require(delays[i] >= 0, "delays must be nonnegative");
        require(schemes[i].n == n_, "scheme dimension mismatch");
        dmax = std::max(dmax, delays[i]);
    }
    apow_.push_back(I);
    for (int k = 1; k <= dmax + 2; ++k) apow_.push_back(apow_.back() * model.A);
    for (int i = 0; i < L_; ++i) {
        NodeConstants c;
        c.d = delays[i];
        c.Ad = apow_[c.d];
        c.Hd = c.Ad * schemes[i].Hbar;
        c.HbAd = c.Ad * (I - schemes[i].Hbar);
        c.HAd = c.HbAd * model.A;
        c.Lam = schemes[i].Lam;
        c.V = schemes[i].V;
        c.W = schemes[i].W;
        nc_.push_back(c);
    }
    for (int i = 0; i < L_; ++i)
        for (int j = 0; j < L_; ++j) tau_max_ = std::max(tau_max_, tau(i, j));
    window_ = tau_max_ + dmax + 2;

    for (int i = 0; i < L_; ++i) filters_.push_back(initial_filter(model_, i, Vec::Zero(n_), P0_));
    Tick t0;
    t0.PhiK.assign(L_, Mat());
    t0.GK.assign(L_, Mat());
    t0.K.assign(L_, Mat());
    const std::size_t LL = static_cast<std::size_t>(L_ * L_);
    t0.P.assign(LL, P0_);
    t0.Gamma.assign(LL, P0_);
    t0.Xi.assign(LL, P0_);
    t0.Psi.assign(LL, Mat());
    t0.Ups.assign(LL, Mat());
    t0.UpsHat.assign(LL, Mat());
    hist_.push_back(std::move(t0));
}

long CovarianceEngine::tau(int i, int j) const { return lcm(nc_[i].d + 1, nc_[j].d + 1); }

const Mat& CovarianceEngine::Apow(int k) const {
    require(k >= 0, "negative power of A requested");
    if (k >= static_cast<int>(apow_.size())) {
        auto& ap = const_cast<std::vector<Mat>&>(apow_);
        while (static_cast<int>(ap.size()) <= k) ap.push_back(ap.back() * model_.A);
    }
    return apow_[k];
}

const CovarianceEngine::Tick& CovarianceEngine::tick(long t) const {
    if (t < t0_)
        throw DependencyError(fmt::format("ledger entry at t={} evicted (window starts at {})", t, t0_), t);
    if (t > now_) throw DependencyError(fmt::format("ledger entry at t={} not yet computed (now={})", t, now_), t);
    return hist_[static_cast<std::size_t>(t - t0_)];
}

CovarianceEngine::Tick& CovarianceEngine::tick_mut(long t) { return const_cast<Tick&>(tick(t)); }

const Mat& CovarianceEngine::get(Quantity q, int i, int j, long t) const {
    const Tick& tk = tick(t);
    const Mat* m = nullptr;
    switch (q) {
        case Quantity::P: m = &tk.P[idx(i, j)]; break;
        case Quantity::Gamma: m = &tk.Gamma[idx(i, j)]; break;
        case Quantity::Psi: m = &tk.Psi[idx(i, j)]; break;
        case Quantity::Upsilon: m = &tk.Ups[idx(i, j)]; break;
        case Quantity::Xi: m = &tk.Xi[idx(i, j)]; break;
    }
    if (m->size() == 0)
        throw DependencyError(fmt::format("ledger quantity undefined for pair ({},{}) at t={}", i + 1, j + 1, t), t);
    return *m;
}

bool CovarianceEngine::has(Quantity q, int i, int j, long t) const {
    if (t < t0_ || t > now_) return false;
    const Tick& tk = hist_[static_cast<std::size_t>(t - t0_)];
    switch (q) {
        case Quantity::P: return tk.P[idx(i, j)].size() > 0;
        case Quantity::Gamma: return tk.Gamma[idx(i, j)].size() > 0;
        case Quantity::Psi: return tk.Psi[idx(i, j)].size() > 0;
        case Quantity::Upsilon: return tk.Ups[idx(i, j)].size() > 0;
        case Quantity::Xi: return tk.Xi[idx(i, j)].size() > 0;
    }
    return false;
}

const Mat& CovarianceEngine::P(int i, int j, long t) const { return get(Quantity::P, i, j, t); }
const Mat& CovarianceEngine::Gamma(int i, int j, long t) const { return get(Quantity::Gamma, i, j, t); }
const Mat& CovarianceEngine::Psi(int i, int j, long t) const { return get(Quantity::Psi, i, j, t); }
const Mat& CovarianceEngine::Upsilon(int i, int j, long t) const { return get(Quantity::Upsilon, i, j, t); }
const Mat& CovarianceEngine::Xi(int i, int j, long t) const { return get(Quantity::Xi, i, j, t); }
const Mat& CovarianceEngine::UpsilonHat(int i, int j, long t) const {
    const Mat& m = tick(t).UpsHat[idx(i, j)];
    if (m.size() == 0) throw DependencyError(fmt::format("Upsilon-hat undefined at t={}", t), t);
    return m;
}

const Mat& CovarianceEngine::PhiK(int i, long t) const {
    require(t >= 1, "filter gains exist for t >= 1");
    return tick(t).PhiK[i];
}
const Mat& CovarianceEngine::GK(int i, long t) const {
    require(t >= 1, "filter gains exist for t >= 1");
    return tick(t).GK[i];
}
const Mat& CovarianceEngine::K(int i, long t) const {
    require(t >= 1, "filter gains exist for t >= 1");
    return tick(t).K[i];
}

Mat CovarianceEngine::assemble_xi(long t) const {
    Mat X(n_ * L_, n_ * L_);
    for (int i = 0; i < L_; ++i)
        for (int j = 0; j < L_; ++j) X.block(i * n_, j * n_, n_, n_) = Xi(i, j, t);
    return sym(X);
}

// ---------------------------------------------------------------- kernels

Mat CovarianceEngine::phi_prod(int i, long hi, long lo) {
    if (hi <= lo) return Mat::Identity(n_, n_);
    Key k{kProd, i, 0, 0, hi, lo};
    if (auto it = cache_.find(k); it != cache_.end()) return it->second;
    Mat r = PhiK(i, hi) * phi_prod(i, hi - 1, lo);
    cache_.emplace(k, r);
    return r;
}

Mat CovarianceEngine::phi_w(int i, long t1, long t2) {
    if (t2 < 0 || t1 <= t2) return Mat::Zero(n_, n_);
    Key k{kPhiW, i, 0, 0, t1, t2};
    if (auto it = cache_.find(k); it != cache_.end()) return it->second;
    Mat r = phi_prod(i, t1, t2 + 1) * GK(i, t2 + 1) * model_.Qw;
    cache_.emplace(k, r);
    return r;
}

Mat CovarianceEngine::phi_x(int i, int j, long t1, long t2) {
    if (t1 < t2) return phi_x(j, i, t2, t1).transpose();
    Key k{kPhiX, i, j, 0, t1, t2};
    if (auto it = cache_.find(k); it != cache_.end()) return it->second;
    Mat r = phi_prod(i, t1, t2) * P(i, j, t2);
    cache_.emplace(k, r);
    return r;
}

Mat CovarianceEngine::phi_F(int i, long t1, int g, long t2) {
    Mat r = Mat::Zero(n_, n_);
    for (int th = 1; th <= g; ++th) {
        if (t2 - th < 0 || t1 <= t2 - th) continue;
        r += phi_w(i, t1, t2 - th) * Apow(th - 1).transpose();
    }
    return r;
}

Mat CovarianceEngine::phi_wF(int g, long t1, long t2) const {
    if (t2 < 0 || t2 < t1 - g || t2 > t1 - 1) return Mat::Zero(n_, n_);
    return Apow(static_cast<int>(t1 - t2 - 1)) * model_.Qw;
}

Mat CovarianceEngine::noise_FF(int g1, long t1, int g2, long t2) const {
    Mat r = Mat::Zero(n_, n_);
    for (int th1 = 1; th1 <= g1; ++th1) {
        long s = t1 - th1;
        long th2 = t2 - s;
        if (s < 0 || th2 < 1 || th2 > g2) continue;
        r += Apow(th1 - 1) * model_.Qw * Apow(static_cast<int>(th2 - 1)).transpose();
    }
    return r;
}

long CovarianceEngine::chi(int i, long t1, long t2) const {
    long c = 0;
    long s = t1;
    while (s > t2) {
        s -= nc_[i].d + 1;
        if (++c > kChiCap) throw NumericError("chi iteration exceeded 1e6 steps");
    }
    return c;
}

long CovarianceEngine::eta(int i, int j) const {
    long e = 1;
    while (e * (nc_[j].d + 1) - nc_[i].d < 0) {
        if (++e > kChiCap) throw NumericError("eta iteration exceeded 1e6 steps");
    }
    return e;
}

// Unrolled sum over hbar < chi_i(t1,t2); every bracketed term carries H_Ad^hbar.
Mat CovarianceEngine::theta_w(int i, long t1, long t2) {
    if (t2 < 0 || t2 >= t1) return Mat::Zero(n_, n_);
    Key k{kThetaW, i, 0, 0, t1, t2};
    if (auto it = cache_.find(k); it != cache_.end()) return it->second;
    const NodeConstants& c = nc_[i];
    Mat acc = Mat::Zero(n_, n_);
    Mat M = Mat::Identity(n_, n_);
    long s = t1;
    const long steps = chi(i, t1, t2);
    for (long h = 0; h < steps; ++h) {
        if (s <= c.d) {
            acc += M * phi_wF(static_cast<int>(s), s, t2);
            break;
        }
        Mat term = c.Hd * phi_w(i, s - c.d, t2) + phi_wF(c.d, s, t2);
        if (s - c.d - 1 == t2) term += c.HbAd * model_.Qw;
        acc += M * term;
        M = M * c.HAd;
        s -= c.d + 1;
    }
    cache_.emplace(k, acc);
    return acc;
}

Mat CovarianceEngine::theta_F(int i, long t1, int g, long t2) {
    Mat r = Mat::Zero(n_, n_);
    for (int th = 1; th <= g; ++th) {
        if (t2 - th < 0 || t2 - th >= t1) continue;
        r += theta_w(i, t1, t2 - th) * Apow(th - 1).transpose();
    }
    return r;
}

// Recursive unrolling of node j's CSE until its time is at or below a.
Mat CovarianceEngine::loc_cse(int i, long a, int j, long b) {
    Key k{kLocCse, i, j, 0, a, b};
    if (auto it = cache_.find(k); it != cache_.end()) return it->second;
    const NodeConstants& c = nc_[j];
    Mat r;
    if (b <= c.d) {
        r = phi_x(i, j, a, 0) * Apow(static_cast<int>(b)).transpose() + phi_F(i, a, static_cast<int>(b), b);
    } else if (a >= b) {
        r = phi_prod(i, a, b) * Gamma(i, j, b);
    } else {
        r = phi_x(i, j, a, b - c.d) * c.Hd.transpose() + loc_cse(i, a, j, b - c.d - 1) * c.HAd.transpose() +
            phi_w(i, a, b - c.d - 1) * c.HbAd.transpose() + phi_F(i, a, c.d, b);
    }
    cache_.emplace(k, r);
    return r;
}

Mat CovarianceEngine::cse_cross(int i, long a, int j, long b) {
    require(i != j, "cse_cross expects distinct nodes");
    if (a == b) return Xi(i, j, a);
    if (a < b) return cse_cross(j, b, i, a).transpose();
    Key k{kCseCross, i, j, 0, a, b};
    if (auto it = cache_.find(k); it != cache_.end()) return it->second;
    const NodeConstants& c = nc_[i];
    Mat r;
    if (a <= c.d) {
        r = Apow(static_cast<int>(a)) * loc_cse(i, 0, j, b) + theta_F(j, b, static_cast<int>(a), a).transpose();
    } else {
        r = c.Hd * loc_cse(i, a - c.d, j, b) + c.HAd * cse_cross(i, a - c.d - 1, j, b) +
            c.HbAd * theta_w(j, b, a - c.d - 1).transpose() + theta_F(j, b, c.d, a).transpose();
    }
    cache_.emplace(k, r);
    return r;
}

// ---------------------------------------------------------------- ledger steps

void CovarianceEngine::compute_gamma(long t) {
    Tick& tk = tick_mut(t);
    for (int i = 0; i < L_; ++i)
        for (int j = 0; j < L_; ++j) {
            const NodeConstants& c = nc_[j];
            Mat g;
            if (t <= c.d) {
                g = phi_x(i, j, t, 0) * Apow(static_cast<int>(t)).transpose() + phi_F(i, t, static_cast<int>(t), t);
            } else {
                g = phi_x(i, j, t, t - c.d) * c.Hd.transpose() +
                    phi_prod(i, t, t - c.d - 1) * Gamma(i, j, t - c.d - 1) * c.HAd.transpose() +
                    phi_F(i, t, c.d, t) + phi_w(i, t, t - c.d - 1) * c.HbAd.transpose();
            }
            tk.Gamma[idx(i, j)] = g;
        }
}

void CovarianceEngine::compute_psi(long t) {
    Tick& tk = tick_mut(t);
    for (int i = 0; i < L_; ++i)
        for (int j = 0; j < L_; ++j) {
            const long a = t - nc_[i].d;
            const long b = t - nc_[j].d - 1;
            if (a < 0 || b < 0) continue;
            if (i == j) {
                tk.Psi[idx(i, j)] = PhiK(i, a) * Gamma(i, i, b);
                continue;
            }
            // eta_ij - 1 unrolling steps of node j's CSE (empty when d_i <= d_j + 1).
            tk.Psi[idx(i, j)] = loc_cse(i, a, j, b);
        }
}

std::pair<Mat, Mat> CovarianceEngine::upsilon_lemma6(int i, int j, long t) {
    const long tij = tau(i, j);
    require(t >= tij, "pairwise expansion requires t >= tau_ij");
    const NodeConstants& ci = nc_[i];
    const NodeConstants& cj = nc_[j];
    const long Ti = tij / (ci.d + 1);
    const long Tj = tij / (cj.d + 1);

    auto expand = [&](const NodeConstants& c, long T, std::vector<Atom>& atoms, std::vector<Mat>& coef) {
        Mat M = Mat::Identity(n_, n_);
        for (long kap = 1; kap <= T - 1; ++kap) {
            const long s = t - kap * (c.d + 1);
            atoms.push_back({AtomKind::Loc, s - c.d, 0});
            coef.push_back(M * c.Hd);
            atoms.push_back({AtomKind::W, s - c.d - 1, 0});
            coef.push_back(M * c.HbAd);
            atoms.push_back({AtomKind::F, s, c.d});
            coef.push_back(M);
            M = M * c.HAd;
        }
        return M;  // H_Ad^{T-1}
    };
    std::vector<Atom> ai, aj;
    std::vector<Mat> Si, Sj;
    const Mat Ri = expand(ci, Ti, ai, Si);
    const Mat Rj = expand(cj, Tj, aj, Sj);
    const long tb = t - tij;

    // Stacked Sigma blocks and correlation matrices.
    const Eigen::Index wi = static_cast<Eigen::Index>(ai.size()) * n_;
    const Eigen::Index wj = static_cast<Eigen::Index>(aj.size()) * n_;
    Mat SigI(n_, wi), SigJ(n_, wj), UpsX(wi, wj), UpsCij(wi, n_), UpsCji(wj, n_);
    for (std::size_t a = 0; a < ai.size(); ++a) {
        SigI.middleCols(a * n_, n_) = Si[a];
        UpsCij.middleRows(a * n_, n_) = atom_cse_corr(i, ai[a], j, tb);
        for (std::size_t b = 0; b < aj.size(); ++b) UpsX.block(a * n_, b * n_, n_, n_) = atom_corr(i, ai[a], j, aj[b]);
    }
    for (std::size_t b = 0; b < aj.size(); ++b) {
        SigJ.middleCols(b * n_, n_) = Sj[b];
        UpsCji.middleRows(b * n_, n_) = atom_cse_corr(j, aj[b], i, tb);
    }
    Mat hat = Mat::Zero(n_, n_);
    if (wi > 0 && wj > 0) hat += SigI * UpsX * SigJ.transpose();
    if (wi > 0) hat += SigI * UpsCij * Rj.transpose();
    if (wj > 0) hat += Ri * UpsCji.transpose() * SigJ.transpose();
    Mat ups = Ri * Xi(i, j, tb) * Rj.transpose() + hat;
    return {ups, hat};
}

Mat CovarianceEngine::atom_corr(int i, const Atom& a, int j, const Atom& b) {
    auto wcov = [&](long s1, long s2) -> Mat {
        return (s1 == s2 && s1 >= 0) ? model_.Qw : Mat::Zero(n_, n_);
    };
    switch (a.kind) {
        case AtomKind::Loc:
            switch (b.kind) {
                case AtomKind::Loc: return phi_x(i, j, a.s, b.s);
                case AtomKind::W: return phi_w(i, a.s, b.s);
                case AtomKind::F: return phi_F(i, a.s, b.g, b.s);
            }
            break;
        case AtomKind::W:
            switch (b.kind) {
                case AtomKind::Loc: return phi_w(j, b.s, a.s).transpose();
                case AtomKind::W: return wcov(a.s, b.s);
                case AtomKind::F: return phi_wF(b.g, b.s, a.s).transpose();
            }
            break;
        case AtomKind::F:
            switch (b.kind) {
                case AtomKind::Loc: return phi_F(j, b.s, a.g, a.s).transpose();
                case AtomKind::W: return phi_wF(a.g, a.s, b.s);
                case AtomKind::F: return noise_FF(a.g, a.s, b.g, b.s);
            }
            break;
    }
    throw ContractError("unknown atom kind");
}

Mat CovarianceEngine::atom_cse_corr(int i, const Atom& a, int j, long b) {
    switch (a.kind) {
        case AtomKind::Loc: return loc_cse(i, a.s, j, b);
        case AtomKind::W: return theta_w(j, b, a.s).transpose();
        case AtomKind::F: return theta_F(j, b, a.g, a.s).transpose();
    }
    throw ContractError("unknown atom kind");
}

void CovarianceEngine::compute_xi_diag(int i, long t) {
    Tick& tk = tick_mut(t);
    const NodeConstants& c = nc_[i];
    const Mat& A = model_.A;
    const Mat& Qw = model_.Qw;
    Mat tail = Mat::Zero(n_, n_);
    if (t <= c.d) {
        for (long th = 1; th <= t; ++th) tail += Apow(th - 1) * Qw * Apow(th - 1).transpose();
        tk.Xi[idx(i, i)] = sym(Apow(t) * P0_ * Apow(t).transpose() + tail);
        return;
    }
    for (int th = 1; th <= c.d; ++th) tail += Apow(th - 1) * Qw * Apow(th - 1).transpose();
    const long s = t - c.d;
    Mat cross = PhiK(i, s) * Gamma(i, i, s - 1) * A.transpose() + GK(i, s) * Qw;
    Mat inner = hadamard(c.W, A * Xi(i, i, s - 1) * A.transpose()) + hadamard(c.Lam, P(i, i, s)) + hadamard(c.W, Qw) +
                hadamard(c.V, cross) + hadamard(c.V.transpose(), cross.transpose());
    tk.Xi[idx(i, i)] = sym(c.Ad * inner * c.Ad.transpose() + tail);
    tk.Ups[idx(i, i)] = Xi(i, i, s - 1);
    tk.UpsHat[idx(i, i)] = Mat::Zero(n_, n_);
}

void CovarianceEngine::compute_xi_offdiag(int i, int j, long t) {
    Tick& tk = tick_mut(t);
    const NodeConstants& ci = nc_[i];
    const NodeConstants& cj = nc_[j];
    const int di = ci.d, dj = cj.d;
    if (t <= di) {
        tk.Xi[idx(i, j)] = Apow(static_cast<int>(t)) * loc_cse(i, 0, j, t) + theta_F(j, t, static_cast<int>(t), t).transpose();
        return;
    }
    if (t <= dj) {
        tk.Xi[idx(i, j)] =
            (Apow(static_cast<int>(t)) * loc_cse(j, 0, i, t) + theta_F(i, t, static_cast<int>(t), t).transpose()).transpose();
        return;
    }
    Mat ups, hat;
    if (t >= tau(i, j)) {
        std::tie(ups, hat) = upsilon_lemma6(i, j, t);
    } else {
        ups = cse_cross(i, t - di - 1, j, t - dj - 1);
        hat = Mat();
    }
    tk.Ups[idx(i, j)] = ups;
    tk.UpsHat[idx(i, j)] = hat;

    const Mat& Qw = model_.Qw;
    Mat x = ci.Hd * phi_x(i, j, t - di, t - dj) * cj.Hd.transpose();
    x += ci.Hd * Psi(i, j, t) * cj.HAd.transpose();
    x += ci.Hd * phi_w(i, t - di, t - dj - 1) * cj.HbAd.transpose();
    x += ci.Hd * phi_F(i, t - di, dj, t);
    x += ci.HAd * Psi(j, i, t).transpose() * cj.Hd.transpose();
    x += ci.HAd * ups * cj.HAd.transpose();
    x += ci.HAd * theta_w(i, t - di - 1, t - dj - 1) * cj.HbAd.transpose();
    x += ci.HAd * theta_F(i, t - di - 1, dj, t);
    x += ci.HbAd * phi_w(j, t - dj, t - di - 1).transpose() * cj.Hd.transpose();
    x += ci.HbAd * theta_w(j, t - dj - 1, t - di - 1).transpose() * cj.HAd.transpose();
    if (di == dj) x += ci.HbAd * Qw * cj.HbAd.transpose();
    x += ci.HbAd * phi_wF(dj, t, t - di - 1).transpose();
    x += phi_F(j, t - dj, di, t).transpose() * cj.Hd.transpose();
    x += theta_F(j, t - dj - 1, di, t).transpose() * cj.HAd.transpose();
    x += phi_wF(di, t, t - dj - 1) * cj.HbAd.transpose();
    x += noise_FF(di, t, dj, t);
    tk.Xi[idx(i, j)] = x;
}

void CovarianceEngine::advance() {
    const long t = now_ + 1;
    Tick tk;
    tk.PhiK.resize(L_);
    tk.GK.resize(L_);
    tk.K.resize(L_);
    const std::size_t LL = static_cast<std::size_t>(L_ * L_);
    tk.P.assign(LL, Mat());
    tk.Gamma.assign(LL, Mat());
    tk.Psi.assign(LL, Mat());
    tk.Ups.assign(LL, Mat());
    tk.UpsHat.assign(LL, Mat());
    tk.Xi.assign(LL, Mat());

    for (int i = 0; i < L_; ++i) {
        filters_[i] = kalman_predict_gain(filters_[i], model_);
        tk.PhiK[i] = filters_[i].PhiK;
        tk.GK[i] = filters_[i].GK;
        tk.K[i] = filters_[i].K;
    }
    const Tick& prev = hist_.back();
    for (int i = 0; i < L_; ++i)
        for (int j = 0; j < L_; ++j) {
            if (i == j) {
                tk.P[idx(i, i)] = filters_[i].Pii;
            } else {
                tk.P[idx(i, j)] = filters_[i].GK * (model_.Qw + model_.A * prev.P[idx(i, j)] * model_.A.transpose()) *
                                  filters_[j].GK.transpose();
            }
        }
    hist_.push_back(std::move(tk));
    now_ = t;

    compute_gamma(t);
    compute_psi(t);
    for (int i = 0; i < L_; ++i) compute_xi_diag(i, t);
    for (int i = 0; i < L_; ++i)
        for (int j = i + 1; j < L_; ++j) {
            compute_xi_offdiag(i, j, t);
            Tick& cur = tick_mut(t);
            cur.Xi[idx(j, i)] = cur.Xi[idx(i, j)].transpose();
            if (cur.Ups[idx(i, j)].size()) cur.Ups[idx(j, i)] = cur.Ups[idx(i, j)].transpose();
            if (cur.UpsHat[idx(i, j)].size()) cur.UpsHat[idx(j, i)] = cur.UpsHat[idx(i, j)].transpose();
        }
    evict();
}

void CovarianceEngine::evict() {
    const long floor = now_ - window_;
    while (t0_ < floor) {
        hist_.pop_front();
        ++t0_;
    }
    for (auto it = cache_.begin(); it != cache_.end();) {
        if (std::max(it->first.t1, it->first.t2) < floor)
            it = cache_.erase(it);
        else
            ++it;
    }
}

void CovarianceEngine::dump_csv(std::ostream& os, Quantity q, long t_from, long t_to, bool header) const {
    if (header) os << "t,i,j,block_row,block_col,value\n";
    for (long t = std::max(t_from, t0_); t <= std::min(t_to, now_); ++t)
        for (int i = 0; i < L_; ++i)
            for (int j = 0; j < L_; ++j) {
                if (!has(q, i, j, t)) continue;
                const Mat& m = get(q, i, j, t);
                for (int r = 0; r < n_; ++r)
                    for (int c = 0; c < n_; ++c)
                        os << fmt::format("{},{},{},{},{},{:.17g}\n", t, i + 1, j + 1, r + 1, c + 1, m(r, c));
            }
}

}  // namespace dkf
