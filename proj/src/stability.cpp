#include "dkf/stability.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace dkf {

Mat AugmentedSystem::realization(int mask) const {
    require(mask >= 0 && mask < static_cast<int>(masks.size()), "mask index out of range");
    const Mat I = Mat::Identity(n, n);
    const Mat& H = masks[mask];
    Mat R = Mat::Zero(2 * n, 2 * n);
    R.topLeftCorner(n, n) = Ad * (I - H) * A;
    R.topRightCorner(n, n) = Ad * H * PhiK;
    R.bottomRightCorner(n, n) = mat_power(PhiK, d + 1);
    return R;
}

AugmentedSystem make_augmented(const Mat& A, const SelectionScheme& scheme, int d, const SteadyFilter& filt) {
    require(d >= 0, "delay must be non-negative");
    require(scheme.n == A.rows(), "scheme dimension does not match A");
    AugmentedSystem s;
    s.node = scheme.node;
    s.d = d;
    s.n = static_cast<int>(A.rows());
    s.A = A;
    s.Ad = mat_power(A, d);
    s.Hbar = scheme.Hbar;
    s.Lam = scheme.Lam;
    s.V = scheme.V;
    s.W = scheme.W;
    s.PhiK = filt.PhiK;
    s.GK = filt.GK;
    s.K = filt.K;
    s.masks = scheme.masks;
    s.probs = scheme.probs;
    const Mat I = Mat::Identity(s.n, s.n);
    s.Abar = Mat::Zero(2 * s.n, 2 * s.n);
    s.Abar.topLeftCorner(s.n, s.n) = s.Ad * (I - s.Hbar) * A;
    s.Abar.topRightCorner(s.n, s.n) = s.Ad * s.Hbar * s.PhiK;
    s.Abar.bottomRightCorner(s.n, s.n) = mat_power(s.PhiK, d + 1);
    return s;
}

AugmentedSystem make_augmented(const SystemModel& model, const SelectionScheme& scheme, int d) {
    return make_augmented(model.A, scheme, d, steady_state(model, scheme.node));
}

Mat f_operator(const AugmentedSystem& s, const Mat& B) {
    const int n = s.n;
    require(B.rows() == 2 * n && B.cols() == 2 * n, "f: B must be 2n x 2n");
    const Mat I = Mat::Identity(n, n);
    const Mat B11 = B.topLeftCorner(n, n), B12 = B.topRightCorner(n, n);
    const Mat B21 = B.bottomLeftCorner(n, n), B22 = B.bottomRightCorner(n, n);
    const Mat T = s.Ad.transpose() * B11 * s.Ad;
    const Mat Pd = mat_power(s.PhiK, s.d + 1);
    const Mat& A = s.A;
    const Mat& Phi = s.PhiK;
    Mat R(2 * n, 2 * n);
    R.topLeftCorner(n, n) = A.transpose() * s.W.cwiseProduct(T) * A;
    R.topRightCorner(n, n) = A.transpose() * s.V.transpose().cwiseProduct(T) * Phi +
                             A.transpose() * (I - s.Hbar) * s.Ad.transpose() * B12 * Pd;
    R.bottomLeftCorner(n, n) =
        Phi.transpose() * s.V.cwiseProduct(T) * A + Pd.transpose() * B21 * s.Ad * (I - s.Hbar) * A;
    R.bottomRightCorner(n, n) = Phi.transpose() * s.Lam.cwiseProduct(T) * Phi +
                                Pd.transpose() * B21 * s.Ad * s.Hbar * Phi + Pd.transpose() * B22 * Pd +
                                Phi.transpose() * s.Hbar * s.Ad.transpose() * B12 * Pd;
    return R;
}

Mat f_adjoint(const AugmentedSystem& s, const Mat& X) {
    Mat out = Mat::Zero(2 * s.n, 2 * s.n);
    for (std::size_t l = 0; l < s.masks.size(); ++l) {
        if (s.probs(l) == 0.0) continue;
        const Mat R = s.realization(static_cast<int>(l));
        out += s.probs(l) * R * X * R.transpose();
    }
    return out;
}

namespace {

// Matrix of a linear map on column-major vec((2n)x(2n)).
template <class F>
Mat operator_matrix(int m, F&& f) {
    Mat G(m * m, m * m);
    for (int k = 0; k < m * m; ++k) {
        Mat E = Mat::Zero(m, m);
        E(k % m, k / m) = 1.0;
        G.col(k) = f(E).reshaped();
    }
    return G;
}

Mat f_matrix(const AugmentedSystem& s) {
    return operator_matrix(2 * s.n, [&](const Mat& E) { return f_operator(s, E); });
}

}  // namespace

double f_radius(const AugmentedSystem& s) { return spectral_radius(f_matrix(s)); }

double exact_ms_test(const AugmentedSystem& s) {
    const int m = 2 * s.n;
    const Mat G = operator_matrix(m, [&](const Mat& E) { return f_adjoint(s, E); });
    const long blk = static_cast<long>(m) * m;
    const long size = blk * (s.d + 1);
    if (size > 1500) {
        // Companion eigenvalues satisfy lambda^(d+1) = mu for each eigenvalue mu of G.
        return std::pow(spectral_radius(G), 1.0 / (s.d + 1));
    }
    Mat C = Mat::Zero(size, size);
    C.block(0, blk * s.d, blk, blk) = G;
    for (int k = 1; k <= s.d; ++k) C.block(blk * k, blk * (k - 1), blk, blk) = Mat::Identity(blk, blk);
    Eigen::EigenSolver<Mat> es(C, false);
    if (es.info() != Eigen::Success) throw NumericError("eigen-solver failed in exact mean-square test");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

std::string to_string(LmiVerdict v) {
    switch (v) {
        case LmiVerdict::Feasible: return "feasible";
        case LmiVerdict::Infeasible: return "infeasible";
        case LmiVerdict::Unknown: return "unknown";
    }
    return "unknown";
}

Mat lmi_matrix(const AugmentedSystem& s, const Mat& D, const Mat& X, const Mat& Y, const Mat& Z, const Mat& S) {
    const int m = 2 * s.n;
    const double d = s.d;
    Mat M(2 * m, 2 * m);
    M.topLeftCorner(m, m) = -D + X + Y.transpose() + Y + d * Z + S;
    M.topRightCorner(m, m) = -Y - d * Z * s.Abar;
    M.bottomLeftCorner(m, m) = -Y.transpose() - d * s.Abar.transpose() * Z;
    M.bottomRightCorner(m, m) = f_operator(s, D) + d * f_operator(s, Z) - S;
    return sym(M);
}

CertificateCheck verify_certificate(const AugmentedSystem& s, const LmiCertificate& c) {
    const int m = 2 * s.n;
    CertificateCheck r;
    r.lambda_max_M = lambda_max_sym(lmi_matrix(s, c.D, c.X, c.Y, c.Z, c.S));
    Mat J(2 * m, 2 * m);
    J << c.X, c.Y, c.Y.transpose(), c.Z;
    r.lambda_min_J = lambda_min_sym(sym(J));
    r.lambda_min_D = lambda_min_sym(sym(c.D));
    r.lambda_min_S = lambda_min_sym(sym(c.S));
    return r;
}

namespace {

struct EigTop {
    double value;
    Vec vector;
};

EigTop top_eig(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(sym(m));
    const Eigen::Index k = es.eigenvalues().size() - 1;
    return {es.eigenvalues()(k), es.eigenvectors().col(k)};
}

Mat project_psd(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(sym(m));
    Vec ev = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Mat random_sym(std::mt19937_64& rng, int m, double scale) {
    std::normal_distribution<double> nd;
    Mat R(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) R(i, j) = nd(rng);
    return scale * sym(R);
}

// D with D = I + f(D) (vectorized Stein equation); empty when rho(f) >= 1.
Mat stein_candidate(const AugmentedSystem& s) {
    const int m = 2 * s.n;
    const Mat F = f_matrix(s);
    if (spectral_radius(F) >= 1.0) return Mat();
    const Mat lhs = Mat::Identity(m * m, m * m) - F;
    const Vec rhs = Mat::Identity(m, m).reshaped();
    Vec x = lhs.partialPivLu().solve(rhs);
    Mat D = sym(x.reshaped(m, m));
    if (lambda_min_sym(D) <= 0.0) return Mat();
    return D;
}

struct Vars {
    Mat D, S, J;  // J = [X Y; Y^T Z]
};

double scale_of(const Vars& v) {
    return std::sqrt(v.D.squaredNorm() + v.S.squaredNorm() + v.J.squaredNorm());
}

void normalize(Vars& v) {
    const double s = scale_of(v);
    if (s > 0.0) {
        v.D /= s;
        v.S /= s;
        v.J /= s;
    }
}

LmiCertificate to_cert(const AugmentedSystem& s, const Vars& v) {
    const int m = 2 * s.n;
    LmiCertificate c;
    c.node = s.node;
    c.D = v.D;
    c.S = v.S;
    c.X = v.J.topLeftCorner(m, m);
    c.Y = v.J.topRightCorner(m, m);
    c.Z = v.J.bottomRightCorner(m, m);
    return c;
}

// Largest eigenvalue of blockdiag(M, -D, -S) and its subgradient.
double objective(const AugmentedSystem& s, const Vars& v, Vars* grad) {
    const int m = 2 * s.n;
    const double d = s.d;
    const Mat X = v.J.topLeftCorner(m, m), Y = v.J.topRightCorner(m, m), Z = v.J.bottomRightCorner(m, m);
    const EigTop eM = top_eig(lmi_matrix(s, v.D, X, Y, Z, v.S));
    const EigTop eD = top_eig(-v.D);
    const EigTop eS = top_eig(-v.S);
    const double best = std::max({eM.value, eD.value, eS.value});
    if (!grad) return best;
    grad->D = Mat::Zero(m, m);
    grad->S = Mat::Zero(m, m);
    grad->J = Mat::Zero(2 * m, 2 * m);
    if (best == eM.value) {
        const Mat U = eM.vector * eM.vector.transpose();
        const Mat U11 = U.topLeftCorner(m, m), U12 = U.topRightCorner(m, m), U22 = U.bottomRightCorner(m, m);
        const Mat fs = f_adjoint(s, U22);
        grad->D = -U11 + fs;
        grad->S = U11 - U22;
        Mat gX = U11;
        Mat gY = 2.0 * U11 - 2.0 * U12;
        Mat gZ = d * U11 - d * (U12 * s.Abar.transpose() + s.Abar * U12.transpose()) + d * fs;
        grad->J.topLeftCorner(m, m) = gX;
        grad->J.topRightCorner(m, m) = 0.5 * gY;
        grad->J.bottomLeftCorner(m, m) = 0.5 * gY.transpose();
        grad->J.bottomRightCorner(m, m) = sym(gZ);
    } else if (best == eD.value) {
        grad->D = -eD.vector * eD.vector.transpose();
    } else {
        grad->S = -eS.vector * eS.vector.transpose();
    }
    return best;
}

struct SearchResult {
    Vars best;
    double value = std::numeric_limits<double>::infinity();
    long iterations = 0;
};

// Projected subgradient descent with restarts on the scale-free objective.
template <class Obj>
SearchResult subgradient_search(Vars start, const LmiOptions& opt, double target, Obj&& obj, bool has_J) {
    std::mt19937_64 rng(opt.seed);
    SearchResult out;
    const int m = static_cast<int>(start.D.rows());
    const long per = std::max<long>(1, opt.iterations / std::max(1, opt.restarts));
    for (int r = 0; r < opt.restarts && out.iterations < opt.iterations; ++r) {
        Vars v = start;
        if (r > 0) {
            v.D = Mat::Identity(m, m) + random_sym(rng, m, 0.5);
            v.S = Mat::Identity(m, m) + random_sym(rng, m, 0.5);
            if (has_J) v.J = project_psd(random_sym(rng, 2 * m, 0.3));
        }
        normalize(v);
        double step0 = 0.2;
        for (long k = 0; k < per && out.iterations < opt.iterations; ++k, ++out.iterations) {
            Vars g;
            const double val = obj(v, &g);
            if (val < out.value) {
                out.value = val;
                out.best = v;
            }
            if (val < target) return out;
            const double gn = scale_of(g);
            if (gn == 0.0) break;
            const double step = step0 / std::sqrt(static_cast<double>(k + 1)) / gn;
            v.D = sym(v.D - step * g.D);
            v.S = sym(v.S - step * g.S);
            if (has_J) v.J = project_psd(v.J - step * g.J);
            normalize(v);
        }
    }
    return out;
}

}  // namespace

LmiCertificate lmi_feasibility(const AugmentedSystem& s, const LmiOptions& opt) {
    const int m = 2 * s.n;
    if (opt.warm_start) {
        Mat D = stein_candidate(s);
        if (D.size() > 0) {
            Vars v{D, 0.5 * (D + f_operator(s, D)), Mat::Zero(2 * m, 2 * m)};
            normalize(v);
            const double val = objective(s, v, nullptr);
            if (val < opt.feasible_below) {
                LmiCertificate c = to_cert(s, v);
                c.verdict = LmiVerdict::Feasible;
                c.margin = -val;
                c.from_warm_start = true;
                return c;
            }
        }
    }
    Vars start{Mat::Identity(m, m), Mat::Identity(m, m), Mat::Zero(2 * m, 2 * m)};
    SearchResult res = subgradient_search(
        start, opt, opt.feasible_below, [&](const Vars& v, Vars* g) { return objective(s, v, g); }, true);
    LmiCertificate c = to_cert(s, res.best);
    c.iterations_used = res.iterations;
    c.margin = -res.value;
    if (res.value < opt.feasible_below) {
        c.verdict = LmiVerdict::Feasible;
    } else {
        // A feasible point would certify rho(f) < 1, so rho(f) >= 1 proves infeasibility.
        c.verdict = f_radius(s) >= 1.0 ? LmiVerdict::Infeasible : LmiVerdict::Unknown;
    }
    return c;
}

A105Result lmi_a105(const AugmentedSystem& s0, const LmiOptions& opt) {
    AugmentedSystem s = s0;
    if (s.d != 0) {
        s.d = 0;
        s.Ad = Mat::Identity(s.n, s.n);
        const Mat I = Mat::Identity(s.n, s.n);
        s.Abar.topLeftCorner(s.n, s.n) = (I - s.Hbar) * s.A;
        s.Abar.topRightCorner(s.n, s.n) = s.Hbar * s.PhiK;
        s.Abar.bottomRightCorner(s.n, s.n) = s.PhiK;
    }
    const int m = 2 * s.n;
    auto obj = [&](const Vars& v, Vars* g) {
        const EigTop e1 = top_eig(f_operator(s, v.D) - v.D);
        const EigTop e2 = top_eig(-v.D);
        const double best = std::max(e1.value, e2.value);
        if (g) {
            g->S = Mat::Zero(m, m);
            g->J = Mat::Zero(0, 0);
            if (best == e1.value) {
                const Mat U = e1.vector * e1.vector.transpose();
                g->D = f_adjoint(s, U) - U;
            } else {
                g->D = -e2.vector * e2.vector.transpose();
            }
        }
        return best;
    };
    A105Result r;
    if (opt.warm_start) {
        Mat D = stein_candidate(s);
        if (D.size() > 0) {
            D /= D.norm();
            const double val = obj(Vars{D, Mat::Zero(m, m), Mat()}, nullptr);
            if (val < opt.feasible_below) {
                r.verdict = LmiVerdict::Feasible;
                r.D = D;
                r.lambda_max = lambda_max_sym(f_operator(s, D) - D);
                return r;
            }
        }
    }
    Vars start{Mat::Identity(m, m), Mat::Zero(m, m), Mat()};
    auto normalized_obj = [&](const Vars& v, Vars* g) { return obj(v, g); };
    SearchResult res = subgradient_search(start, opt, opt.feasible_below, normalized_obj, false);
    r.D = res.best.D;
    r.lambda_max = lambda_max_sym(f_operator(s, r.D) - r.D);
    if (res.value < opt.feasible_below)
        r.verdict = LmiVerdict::Feasible;
    else
        r.verdict = f_radius(s) >= 1.0 ? LmiVerdict::Infeasible : LmiVerdict::Unknown;
    return r;
}

A105B105 check_a105_b105(const SystemModel& model, const SelectionScheme& scheme, const LmiOptions& opt) {
    A105B105 r;
    AugmentedSystem s = make_augmented(model, scheme, 0);
    r.detail = lmi_a105(s, opt);
    r.a105 = r.detail.verdict == LmiVerdict::Feasible;
    const int n = model.n();
    r.b105_lambda = lambda_max_sym(model.A.transpose() * (Mat::Identity(n, n) - scheme.Hbar) * model.A);
    r.b105 = r.b105_lambda < 1.0;
    return r;
}

StabilityReport check_theorem3(const SystemModel& model, const std::vector<SelectionScheme>& schemes,
                               const std::vector<int>& delays, const LmiOptions& opt) {
    require(static_cast<int>(schemes.size()) == model.nodes() && static_cast<int>(delays.size()) == model.nodes(),
            "one scheme and one delay per node required");
    StabilityReport rep;
    rep.overall_theorem3 = true;
    const int n = model.n();
    for (int i = 0; i < model.nodes(); ++i) {
        if (!check_condition_78(model, i))
            throw ValidationError(fmt::format("node {}: (A, C) not observable or (A, Qw^1/2) not controllable", i + 1));
        NodeStability ns;
        ns.node = i;
        ns.d = delays[i];
        AugmentedSystem s = make_augmented(model, schemes[i], delays[i]);
        ns.lmi = lmi_feasibility(s, opt);
        ns.exact_ms_radius = exact_ms_test(s);
        if (delays[i] == 0) {
            ns.has_a105_b105 = true;
            ns.ab = check_a105_b105(model, schemes[i], opt);
        }
        ns.rho106 = spectral_radius(s.Ad * (Mat::Identity(n, n) - schemes[i].Hbar) * model.A);
        ns.cond106 = ns.rho106 < 1.0;
        rep.overall_theorem3 = rep.overall_theorem3 && ns.lmi.feasible() && ns.cond106;
        rep.nodes.push_back(std::move(ns));
    }
    return rep;
}

std::string StabilityReport::text() const {
    std::ostringstream os;
    for (const auto& ns : nodes) {
        os << fmt::format("node {} (d = {})\n", ns.node + 1, ns.d);
        os << fmt::format("  LMI: {} (margin {:.3e}{})\n", to_string(ns.lmi.verdict), ns.lmi.margin,
                          ns.lmi.from_warm_start ? ", Stein warm start" : "");
        os << fmt::format("  exact mean-square radius: {:.6f}\n", ns.exact_ms_radius);
        if (ns.has_a105_b105)
            os << fmt::format("  a105: {}  b105: {} (lambda_max = {:.5f})\n", ns.ab.a105, ns.ab.b105,
                              ns.ab.b105_lambda);
        os << fmt::format("  rho(A^d (I - H) A) = {:.6f} ({})\n", ns.rho106, ns.cond106 ? "< 1" : ">= 1");
    }
    os << "overall: " << (overall_theorem3 ? "stable" : "not certified") << "\n";
    return os.str();
}

void StabilityReport::write_csv(std::ostream& os) const {
    os << "node,d,lmi_verdict,lmi_margin,exact_ms_radius,a105,b105,b105_lambda,rho_open_loop,rho_open_loop_lt_1\n";
    for (const auto& ns : nodes) {
        os << fmt::format("{},{},{},{:.9g},{:.9g},{},{},{},{:.9g},{}\n", ns.node + 1, ns.d, to_string(ns.lmi.verdict),
                          ns.lmi.margin, ns.exact_ms_radius, ns.has_a105_b105 ? (ns.ab.a105 ? "true" : "false") : "",
                          ns.has_a105_b105 ? (ns.ab.b105 ? "true" : "false") : "",
                          ns.has_a105_b105 ? fmt::format("{:.9g}", ns.ab.b105_lambda) : "", ns.rho106,
                          ns.cond106 ? "true" : "false");
    }
}

std::vector<Vec> simplex_grid(int delta, double step) {
    require(delta >= 1, "simplex dimension must be >= 1");
    require(step > 0.0 && step <= 1.0, "grid step must lie in (0, 1]");
    const int N = static_cast<int>(std::lround(1.0 / step));
    require(std::abs(N * step - 1.0) < 1e-9, "grid step must divide 1");
    std::vector<Vec> out;
    std::vector<int> c(delta, 0);
    // Compositions of N into delta parts, lexicographic in the leading entries.
    auto rec = [&](auto&& self, int pos, int left) -> void {
        if (pos == delta - 1) {
            c[pos] = left;
            Vec v(delta);
            for (int k = 0; k < delta; ++k) v(k) = static_cast<double>(c[k]) / N;
            out.push_back(v);
            return;
        }
        for (int a = left; a >= 0; --a) {
            c[pos] = a;
            self(self, pos + 1, left - a);
        }
    };
    rec(rec, 0, N);
    return out;
}

namespace {

struct Eval {
    bool ok = false;
    ProbCandidate cand;
};

Eval evaluate(const Mat& A, const SelectionScheme& base, int d, const SteadyFilter& filt, const Vec& probs,
              ProbCriterion crit, const LmiOptions& lopt) {
    Eval e;
    SelectionScheme sch = build_scheme(base.n, base.r, probs, base.node, base.r == base.n);
    AugmentedSystem s = make_augmented(A, sch, d, filt);
    const double fr = f_radius(s);
    e.cand.node = base.node;
    e.cand.probs = probs;
    e.cand.radius = std::pow(fr, 1.0 / (d + 1));
    e.cand.rho106 = spectral_radius(s.Ad * (Mat::Identity(s.n, s.n) - sch.Hbar) * A);
    e.cand.margin = 1.0 - e.cand.radius;
    if (crit == ProbCriterion::C2) e.cand.margin = std::min(e.cand.margin, 1.0 - e.cand.rho106);
    if (fr >= 1.0) return e;  // LMI infeasible, see lmi_feasibility
    if (crit == ProbCriterion::C2 && e.cand.rho106 >= 1.0) return e;
    e.ok = lmi_feasibility(s, lopt).feasible();
    return e;
}

Vec softmax(const Vec& z) {
    Vec e = (z.array() - z.maxCoeff()).exp();
    return e / e.sum();
}

// Minimal Nelder-Mead on R^k.
template <class F>
Vec nelder_mead(F&& f, Vec x0, int iters, double scale) {
    const int k = static_cast<int>(x0.size());
    std::vector<Vec> p(k + 1, x0);
    std::vector<double> fv(k + 1);
    for (int j = 0; j < k; ++j) p[j + 1](j) += scale;
    for (int j = 0; j <= k; ++j) fv[j] = f(p[j]);
    for (int it = 0; it < iters; ++it) {
        std::vector<int> ord(k + 1);
        std::iota(ord.begin(), ord.end(), 0);
        std::sort(ord.begin(), ord.end(), [&](int a, int b) { return fv[a] < fv[b]; });
        std::vector<Vec> q;
        std::vector<double> qv;
        for (int o : ord) {
            q.push_back(p[o]);
            qv.push_back(fv[o]);
        }
        p = q;
        fv = qv;
        Vec c = Vec::Zero(k);
        for (int j = 0; j < k; ++j) c += p[j];
        c /= k;
        const Vec xr = c + (c - p[k]);
        const double fr = f(xr);
        if (fr < fv[0]) {
            const Vec xe = c + 2.0 * (c - p[k]);
            const double fe = f(xe);
            if (fe < fr) {
                p[k] = xe;
                fv[k] = fe;
            } else {
                p[k] = xr;
                fv[k] = fr;
            }
        } else if (fr < fv[k - 1]) {
            p[k] = xr;
            fv[k] = fr;
        } else {
            const Vec xc = c + 0.5 * (p[k] - c);
            const double fc = f(xc);
            if (fc < fv[k]) {
                p[k] = xc;
                fv[k] = fc;
            } else {
                for (int j = 1; j <= k; ++j) {
                    p[j] = p[0] + 0.5 * (p[j] - p[0]);
                    fv[j] = f(p[j]);
                }
            }
        }
    }
    return p[std::min_element(fv.begin(), fv.end()) - fv.begin()];
}

}  // namespace

std::vector<ProbCandidate> select_probabilities(const SystemModel& model, const SelectionScheme& scheme, int d,
                                                ProbCriterion criterion, const SelectOptions& opt) {
    const SteadyFilter filt = steady_state(model, scheme.node);
    std::vector<ProbCandidate> found;
    for (const Vec& p : simplex_grid(scheme.delta(), opt.grid_step)) {
        Eval e = evaluate(model.A, scheme, d, filt, p, criterion, opt.lmi);
        if (e.ok) found.push_back(e.cand);
    }
    std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.margin > b.margin; });
    const int delta = scheme.delta();
    if (delta >= 2) {
        const int top = std::min<int>(opt.refine_top, static_cast<int>(found.size()));
        std::vector<ProbCandidate> refined;
        for (int k = 0; k < top; ++k) {
            Vec z0 = found[k].probs.array().max(1e-3).log();
            auto cost = [&](const Vec& z) {
                Eval e = evaluate(model.A, scheme, d, filt, softmax(z), criterion, opt.lmi);
                return e.ok ? -e.cand.margin : 1.0;
            };
            const Vec z = nelder_mead(cost, z0, opt.refine_iterations, 0.3);
            Eval e = evaluate(model.A, scheme, d, filt, softmax(z), criterion, opt.lmi);
            if (e.ok && e.cand.margin > found[k].margin) {
                e.cand.refined = true;
                refined.push_back(e.cand);
            }
        }
        found.insert(found.end(), refined.begin(), refined.end());
        std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.margin > b.margin; });
    }
    return found;
}

}  // namespace dkf
