#include "dkf/model.hpp"

#include <fmt/format.h>

namespace dkf {

std::string ValidationReport::summary() const {
    if (ok()) return "model valid";
    std::string s;
    for (const auto& i : issues) s += fmt::format("{} (value {:.6g})\n", i.what, i.value);
    return s;
}

ValidationReport validate_model(const SystemModel& m) {
    ValidationReport r;
    const long n = m.A.rows();
    if (m.A.rows() != m.A.cols()) {
        r.issues.push_back({"A is not square", static_cast<double>(m.A.cols())});
        return r;
    }
    if (n <= 1) r.issues.push_back({"state dimension must exceed 1", static_cast<double>(n)});
    if (m.Qw.rows() != n || m.Qw.cols() != n) {
        r.issues.push_back({"Qw dimension mismatch", static_cast<double>(m.Qw.rows())});
    } else {
        if ((m.Qw - m.Qw.transpose()).cwiseAbs().maxCoeff() > 1e-10)
            r.issues.push_back({"Qw not symmetric", (m.Qw - m.Qw.transpose()).cwiseAbs().maxCoeff()});
        if (n > 0) {
            double lmin = lambda_min_sym(m.Qw);
            if (lmin < -1e-10) r.issues.push_back({"Qw not positive semidefinite", lmin});
        }
    }
    if (m.sensors.empty()) r.issues.push_back({"no sensors", 0.0});
    for (std::size_t i = 0; i < m.sensors.size(); ++i) {
        const auto& s = m.sensors[i];
        if (s.C.cols() != n) {
            r.issues.push_back({fmt::format("sensor {}: C has {} columns, expected {}", i + 1, s.C.cols(), n),
                                static_cast<double>(s.C.cols())});
            continue;
        }
        if (s.Qv.rows() != s.C.rows() || s.Qv.cols() != s.C.rows()) {
            r.issues.push_back({fmt::format("sensor {}: Qv dimension mismatch", i + 1), static_cast<double>(s.Qv.rows())});
            continue;
        }
        if ((s.Qv - s.Qv.transpose()).cwiseAbs().maxCoeff() > 1e-10)
            r.issues.push_back({fmt::format("sensor {}: Qv not symmetric", i + 1), 0.0});
        double lmin = lambda_min_sym(s.Qv);
        if (lmin <= 0.0) r.issues.push_back({fmt::format("sensor {}: Qv not positive definite", i + 1), lmin});
    }
    return r;
}

Mat psd_sqrt(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(sym(m));
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed in psd_sqrt");
    Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

int numerical_rank(const Mat& m, double rel_tol) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Mat> svd(m);
    const Vec& s = svd.singularValues();
    if (!s.allFinite()) throw NumericError("singular value decomposition produced non-finite values");
    if (s(0) == 0.0) return 0;
    int r = 0;
    for (int i = 0; i < s.size(); ++i)
        if (s(i) > rel_tol * s(0)) ++r;
    return r;
}

bool check_condition_78(const SystemModel& model, int node) {
    require(node >= 0 && node < model.nodes(), "sensor index out of range");
    const int n = model.n();
    const Mat& A = model.A;
    const Mat& C = model.sensors[node].C;
    Mat sq = psd_sqrt(model.Qw);

    Mat ctrb(n, n * n);
    Mat blk = sq;
    for (int k = 0; k < n; ++k) {
        ctrb.middleCols(k * n, n) = blk;
        blk = A * blk;
    }
    Mat obsv(C.rows() * n, n);
    Mat row = C;
    for (int k = 0; k < n; ++k) {
        obsv.middleRows(k * C.rows(), C.rows()) = row;
        row = row * A;
    }
    return numerical_rank(ctrb) == n && numerical_rank(obsv) == n;
}

}  // namespace dkf
