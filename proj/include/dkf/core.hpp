#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dkf {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Error taxonomy. The CLI maps ValidationError/ContractError to exit 2 and
// NumericError (and subclasses) to exit 3.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : NumericError {
    using NumericError::NumericError;
};
struct DependencyError : NumericError {
    explicit DependencyError(const std::string& what, long earliest_missing)
        : NumericError(what), earliest_missing_time(earliest_missing) {}
    long earliest_missing_time;
};
struct DegeneracyError : NumericError {
    DegeneracyError(const std::string& what, double min_eig)
        : NumericError(what), smallest_eigenvalue(min_eig) {}
    double smallest_eigenvalue;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

inline Mat sym(const Mat& m) { return 0.5 * (m + m.transpose()); }

double spectral_radius(const Mat& m);
double lambda_max_sym(const Mat& m);
double lambda_min_sym(const Mat& m);
double norm2(const Mat& m);
Mat mat_power(const Mat& m, int k);
long lcm(long a, long b);

}  // namespace dkf
