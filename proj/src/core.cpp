#include "dkf/core.hpp"

#include <numeric>

namespace dkf {

double spectral_radius(const Mat& m) {
    if (m.size() == 0) return 0.0;
    Eigen::EigenSolver<Mat> es(m, false);
    if (es.info() != Eigen::Success) throw NumericError("eigenvalue solver failed");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

double lambda_max_sym(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(sym(m), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericError("symmetric eigenvalue solver failed");
    return es.eigenvalues().maxCoeff();
}

double lambda_min_sym(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(sym(m), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericError("symmetric eigenvalue solver failed");
    return es.eigenvalues().minCoeff();
}

double norm2(const Mat& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues()(0);
}

Mat mat_power(const Mat& m, int k) {
    require(k >= 0, "negative matrix power");
    Mat r = Mat::Identity(m.rows(), m.cols());
    for (int i = 0; i < k; ++i) r = r * m;
    return r;
}

long lcm(long a, long b) { return std::lcm(a, b); }

}  // namespace dkf
