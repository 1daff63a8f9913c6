#pragma once

#include "dkf/core.hpp"

#include <string>
#include <vector>

namespace dkf {

struct SensorModel {
    Mat C;   // q_i x n
    Mat Qv;  // q_i x q_i, symmetric PD
    int id = 0;
};

struct SystemModel {
    Mat A;
    Mat Qw;
    std::vector<SensorModel> sensors;

    int n() const { return static_cast<int>(A.rows()); }
    int nodes() const { return static_cast<int>(sensors.size()); }
};

struct ValidationIssue {
    std::string what;
    double value = 0.0;  // offending eigenvalue or dimension
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
    std::string summary() const;
};

ValidationReport validate_model(const SystemModel& model);

// Symmetric PSD square root, negative eigenvalues clamped to zero.
Mat psd_sqrt(const Mat& m);

// Numerical rank with singular values below rel_tol * sigma_max treated as zero.
int numerical_rank(const Mat& m, double rel_tol = 1e-8);

// (A, sqrt(Qw)) stabilizable and (A, C_i) detectable via full n-power
// controllability/observability rank tests. node is 0-based.
bool check_condition_78(const SystemModel& model, int node);

}  // namespace dkf
