// Independent reference computations used only by the tests.
#pragma once

#include "dkf/harness.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace dkf::test {

inline double max_abs(const Mat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

inline Scenario toy(std::vector<int> delays, std::vector<Vec> probs, long horizon = 8, std::uint64_t seed = 3) {
    std::string yaml = R"(
name: toy
A: [[0.9, 0.3], [-0.2, 1.05]]
Qw: [[0.5, 0.1], [0.1, 0.3]]
nodes:
)";
    const char* sensors[] = {"C: [[1.0, 0.5]]\n    Qv: [[0.4]]", "C: [[0.2, 1.0]]\n    Qv: [[0.7]]",
                             "C: [[1.0, -0.3]]\n    Qv: [[0.9]]"};
    for (std::size_t i = 0; i < delays.size(); ++i) {
        yaml += "  - " + std::string(sensors[i % 3]) + "\n";
        yaml += "    r: " + std::to_string(probs[i].size() == 1 ? 2 : 1) + "\n";
        yaml += "    probs: [";
        for (Eigen::Index k = 0; k < probs[i].size(); ++k) yaml += (k ? ", " : "") + std::to_string(probs[i](k));
        yaml += "]\n    delay: " + std::to_string(delays[i]) + "\n";
    }
    yaml += "initial:\n  x0: [0.0, 0.0]\n  P0: [[1.5, 0.2], [0.2, 0.8]]\n";
    yaml += "horizon: " + std::to_string(horizon) + "\nseed: " + std::to_string(seed) + "\n";
    yaml += "outputs: {steady: false}\n";
    return parse_scenario(yaml, "toy");
}

inline Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

// Random stable-ish model with n states and scalar sensors.
inline Scenario random_toy(std::mt19937_64& rng, int n, int L, int dmax, long horizon) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> dd(0, dmax);
    Scenario sc;
    sc.name = "random";
    sc.model.A = Mat(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) sc.model.A(r, c) = 0.5 * u(rng) + (r == c ? 0.6 : 0.0);
    Mat G(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) G(r, c) = u(rng);
    sc.model.Qw = G * G.transpose() + 0.1 * Mat::Identity(n, n);
    for (int i = 0; i < L; ++i) {
        SensorModel s;
        s.id = i;
        s.C = Mat(1, n);
        for (int c = 0; c < n; ++c) s.C(0, c) = u(rng);
        s.C(0, i % n) += 1.0;
        s.Qv = Mat::Constant(1, 1, 0.2 + std::abs(u(rng)));
        sc.model.sensors.push_back(s);
        const int r = 1;
        const long cnt = binomial(n, r);
        Vec p(cnt);
        for (long k = 0; k < cnt; ++k) p(k) = 0.2 + std::abs(u(rng));
        p /= p.sum();
        sc.schemes.push_back(build_scheme(n, r, p, i));
        sc.delays.push_back(dd(rng));
        sc.modes.push_back(DelayMode::Constant);
    }
    sc.x0 = Vec::Zero(n);
    sc.P0 = Mat::Identity(n, n);
    sc.horizon = horizon;
    return sc;
}

// Every random quantity written as a linear map of the primitive noises
// z = (e0, w(0..T), v_i(1..T)); CSE coefficients averaged over the
// mask histories of one node at a time.
class NoiseExpansion {
public:
    NoiseExpansion(const Scenario& sc, long T) : sc_(sc), T_(T), n_(sc.model.n()), L_(sc.nodes()) {
        const SystemModel& m = sc.model;
        const int n = n_;
        long nz = n + (T + 1) * n;
        std::vector<long> voff;
        for (int i = 0; i < L_; ++i) {
            voff.push_back(nz);
            nz += T * m.sensors[i].C.rows();
        }
        Sigma_ = Mat::Zero(nz, nz);
        Sigma_.topLeftCorner(n, n) = sc.P0;
        for (long s = 0; s <= T; ++s) Sigma_.block(n + s * n, n + s * n, n, n) = m.Qw;
        for (int i = 0; i < L_; ++i) {
            const long q = m.sensors[i].C.rows();
            for (long s = 0; s < T; ++s) Sigma_.block(voff[i] + s * q, voff[i] + s * q, q, q) = m.sensors[i].Qv;
        }
        X_.push_back(Mat::Zero(n, nz));
        X_[0].leftCols(n) = Mat::Identity(n, n);
        for (long t = 1; t <= T; ++t) X_.push_back(m.A * X_[t - 1] + w(t - 1));
        for (int i = 0; i < L_; ++i) {
            const long q = m.sensors[i].C.rows();
            std::vector<Mat> est{Mat::Zero(n, nz)};
            Mat P = sc.P0;
            for (long t = 1; t <= T; ++t) {
                const Mat& C = m.sensors[i].C;
                const Mat Ps = m.A * P * m.A.transpose() + m.Qw;
                const Mat K = Ps * C.transpose() * (C * Ps * C.transpose() + m.sensors[i].Qv).inverse();
                P = (Mat::Identity(n, n) - K * C) * Ps;
                Mat y = C * X_[t];
                y.middleCols(voff[i] + (t - 1) * q, q) += Mat::Identity(q, q);
                // x_hat(t) = A x_hat(t-1) + K (y - C A x_hat(t-1))
                est.push_back(m.A * est[t - 1] + K * (y - C * m.A * est[t - 1]));
            }
            xhat_.push_back(est);
        }
        for (int i = 0; i < L_; ++i) enumerate_node(i);
    }

    Mat w(long s) const {
        Mat E = Mat::Zero(n_, Sigma_.cols());
        if (s >= 0 && s <= T_) E.middleCols(n_ + s * n_, n_) = Mat::Identity(n_, n_);
        return E;
    }
    Mat F(int g, long t) const {
        Mat r = Mat::Zero(n_, Sigma_.cols());
        for (int th = 1; th <= g; ++th) r += mat_power(sc_.model.A, th - 1) * w(t - th);
        return r;
    }
    Mat loc(int i, long t) const { return X_[t] - xhat_[i][t]; }
    Mat cse_mean(int i, long t) const { return cmean_[i][t]; }
    Mat cov(const Mat& a, const Mat& b) const { return a * Sigma_ * b.transpose(); }
    // E{x~^c_i(a) x~^c_j(b)^T}; independent mask streams for i != j.
    Mat cse_cse(int i, long a, int j, long b) const {
        if (i != j) return cov(cmean_[i][a], cmean_[j][b]);
        return csec_[i][a * (T_ + 1) + b];
    }
    long T() const { return T_; }

private:
    void enumerate_node(int i) {
        const int d = sc_.delays[i];
        const int n = n_;
        const long nz = Sigma_.cols();
        const long sends = std::max<long>(0, T_ - d);
        const SelectionScheme& sch = sc_.schemes[i];
        std::vector<int> val(sends, 0);
        std::vector<Mat> mean(T_ + 1, Mat::Zero(n, nz));
        std::vector<Mat> second((T_ + 1) * (T_ + 1), Mat::Zero(n, n));
        const Mat Ad = mat_power(sc_.model.A, d);
        const Mat I = Mat::Identity(n, n);
        for (;;) {
            double p = 1.0;
            for (long k = 0; k < sends; ++k) p *= sch.probs(val[k]);
            std::vector<Mat> est(T_ + 1), err(T_ + 1);
            for (long t = 0; t <= T_; ++t) {
                if (t <= d) {
                    est[t] = Mat::Zero(n, nz);
                } else {
                    const Mat& H = sch.masks[val[t - d - 1]];
                    est[t] = Ad * (H * xhat_[i][t - d] + (I - H) * sc_.model.A * est[t - d - 1]);
                }
                err[t] = X_[t] - est[t];
                mean[t] += p * err[t];
            }
            for (long a = 0; a <= T_; ++a)
                for (long b = 0; b <= T_; ++b) second[a * (T_ + 1) + b] += p * cov(err[a], err[b]);
            long k = 0;
            for (; k < sends; ++k) {
                if (++val[k] < sch.delta()) break;
                val[k] = 0;
            }
            if (k == sends) break;
        }
        cmean_.push_back(mean);
        csec_.push_back(second);
    }

    const Scenario& sc_;
    long T_;
    int n_, L_;
    Mat Sigma_;
    std::vector<Mat> X_;
    std::vector<std::vector<Mat>> xhat_, cmean_, csec_;
};

// Batch linear-MMSE estimate of x(t) from y(1..t) by joint-Gaussian conditioning.
inline Vec batch_estimate(const SystemModel& m, int node, const Vec& x0, const Mat& P0, const std::vector<Vec>& ys) {
    const int n = m.n();
    const long T = static_cast<long>(ys.size());
    const Mat& C = m.sensors[node].C;
    const long q = C.rows();
    // Stacked state x(0..T) covariance.
    const long N = (T + 1) * n;
    Mat Sxx = Mat::Zero(N, N);
    std::vector<Mat> Ap(T + 1);
    Ap[0] = Mat::Identity(n, n);
    for (long k = 1; k <= T; ++k) Ap[k] = m.A * Ap[k - 1];
    for (long a = 0; a <= T; ++a)
        for (long b = 0; b <= T; ++b) {
            Mat c = Ap[a] * P0 * Ap[b].transpose();
            for (long s = 0; s < std::min(a, b); ++s) c += Ap[a - 1 - s] * m.Qw * Ap[b - 1 - s].transpose();
            Sxx.block(a * n, b * n, n, n) = c;
        }
    Mat Hy = Mat::Zero(T * q, N);
    Vec y(T * q), my(T * q);
    for (long k = 1; k <= T; ++k) {
        Hy.block((k - 1) * q, k * n, q, n) = C;
        y.segment((k - 1) * q, q) = ys[k - 1];
        my.segment((k - 1) * q, q) = C * Ap[k] * x0;
    }
    Mat Syy = Hy * Sxx * Hy.transpose();
    for (long k = 0; k < T; ++k) Syy.block(k * q, k * q, q, q) += m.sensors[node].Qv;
    const Mat Sxy = Sxx.middleRows(T * n, n) * Hy.transpose();
    return Ap[T] * x0 + Sxy * Syy.ldlt().solve(y - my);
}

}  // namespace dkf::test
