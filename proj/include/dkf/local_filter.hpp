#pragma once

#include "dkf/model.hpp"

namespace dkf {

struct LocalFilterState {
    int node = 0;  // 0-based
    Vec xhat;
    Mat K;
    Mat GK;
    Mat PhiK;
    Mat Pii;
    Mat Pstar;
    long t = 0;
};

struct CrossCovariance {
    int i = 0;
    int j = 1;
    Mat Pij;
    long t = 0;
};

struct SteadyFilter {
    Mat Pii;
    Mat K;
    Mat GK;
    Mat PhiK;
    long iterations = 0;
};

LocalFilterState initial_filter(const SystemModel& model, int node, const Vec& x0, const Mat& P0);

// Gain/covariance part of one Kalman step (no measurement needed).
LocalFilterState kalman_predict_gain(const LocalFilterState& s, const SystemModel& model);

// Full step to t+1 with measurement y = y_i(t+1).
LocalFilterState kalman_step(const LocalFilterState& s, const Vec& y, const SystemModel& model);

// P_ij(t) = G_Ki(t)[Qw + A P_ij(t-1) A^T] G_Kj(t)^T. Filters must be at prev.t + 1.
CrossCovariance cross_covariance_step(const CrossCovariance& prev, const LocalFilterState& fi,
                                      const LocalFilterState& fj, const SystemModel& model);

// Iterates the Riccati recursion from P0 until ||P(t) - P(t-1)||_2 < tol.
SteadyFilter steady_state(const SystemModel& model, int node, double tol = 1e-10, long max_iter = 100000,
                          const Mat& P0 = Mat());

}  // namespace dkf
