#include "dkf/local_filter.hpp"

#include <fmt/format.h>

#include <cmath>

namespace dkf {

LocalFilterState initial_filter(const SystemModel& model, int node, const Vec& x0, const Mat& P0) {
    require(node >= 0 && node < model.nodes(), "sensor index out of range");
    const int n = model.n();
    require(x0.size() == n && P0.rows() == n && P0.cols() == n, "initial state dimension mismatch");
    LocalFilterState s;
    s.node = node;
    s.xhat = x0;
    s.Pii = P0;
    s.Pstar = P0;
    s.K = Mat::Zero(n, model.sensors[node].C.rows());
    s.GK = Mat::Identity(n, n);
    s.PhiK = model.A;
    s.t = 0;
    return s;
}

LocalFilterState kalman_predict_gain(const LocalFilterState& s, const SystemModel& model) {
    const Mat& A = model.A;
    const auto& sen = model.sensors[s.node];
    const int n = model.n();
    LocalFilterState o = s;
    o.t = s.t + 1;
    o.Pstar = A * s.Pii * A.transpose() + model.Qw;
    Mat S = sen.C * o.Pstar * sen.C.transpose() + sen.Qv;
    Eigen::LDLT<Mat> ldlt(sym(S));
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw NumericError(fmt::format("innovation covariance singular at node {} t={}", s.node + 1, o.t));
    // K = P* C^T S^-1
    o.K = ldlt.solve(sen.C * o.Pstar.transpose()).transpose();
    o.GK = Mat::Identity(n, n) - o.K * sen.C;
    o.PhiK = o.GK * A;
    o.Pii = sym(o.GK * o.Pstar);
    return o;
}

LocalFilterState kalman_step(const LocalFilterState& s, const Vec& y, const SystemModel& model) {
    require(s.t >= 0, "filter time must be nonnegative");
    require(y.size() == model.sensors[s.node].C.rows(), "measurement dimension mismatch");
    LocalFilterState o = kalman_predict_gain(s, model);
    o.xhat = o.PhiK * s.xhat + o.K * y;
    return o;
}

CrossCovariance cross_covariance_step(const CrossCovariance& prev, const LocalFilterState& fi,
                                      const LocalFilterState& fj, const SystemModel& model) {
    require(prev.i != prev.j, "cross-covariance pair must have distinct nodes");
    require(fi.t == prev.t + 1 && fj.t == prev.t + 1, "filters must be one tick ahead of the cross-covariance");
    CrossCovariance o = prev;
    o.t = prev.t + 1;
    o.Pij = fi.GK * (model.Qw + model.A * prev.Pij * model.A.transpose()) * fj.GK.transpose();
    return o;
}

SteadyFilter steady_state(const SystemModel& model, int node, double tol, long max_iter, const Mat& P0) {
    const int n = model.n();
    LocalFilterState s = initial_filter(model, node, Vec::Zero(n), P0.size() ? P0 : Mat::Identity(n, n));
    for (long it = 1; it <= max_iter; ++it) {
        LocalFilterState nx = kalman_predict_gain(s, model);
        double diff = norm2(nx.Pii - s.Pii);
        if (!std::isfinite(diff)) break;
        s = nx;
        if (diff < tol) {
            SteadyFilter r{s.Pii, s.K, s.GK, s.PhiK, it};
            if (spectral_radius(r.PhiK) >= 1.0)
                throw DivergenceError(fmt::format("steady closed-loop matrix of node {} is not Schur stable", node + 1));
            return r;
        }
    }
    throw DivergenceError(fmt::format("Riccati iteration of node {} did not converge within {} steps", node + 1, max_iter));
}

}  // namespace dkf
