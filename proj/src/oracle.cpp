#include "dkf/harness.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <ostream>
#include <sstream>

namespace dkf {

EnumerationOracle::EnumerationOracle(const Scenario& sc, long horizon, long max_histories)
    : L_(sc.nodes()), n_(sc.model.n()), T_(horizon) {
    require(T_ >= 1, "oracle horizon must be >= 1");
    const SystemModel& m = sc.model;
    const int n = n_;

    // Joint history count: masks at send times 1 .. T - d_i (time-0 packets carry no information).
    double count = 1.0;
    for (int i = 0; i < L_; ++i)
        count *= std::pow(static_cast<double>(sc.schemes[i].delta()), static_cast<double>(std::max<long>(0, T_ - sc.delays[i])));
    if (count > static_cast<double>(max_histories))
        throw ValidationError(fmt::format("enumeration needs {:.3g} mask histories (cap {}); use monte-carlo mode",
                                          count, max_histories));

    // Primitive noises: e0, w(0..T-1), v_i(1..T).
    const long nw0 = n;
    const long nv0 = nw0 + T_ * n;
    std::vector<long> voff(L_);
    long nz = nv0;
    for (int i = 0; i < L_; ++i) {
        voff[i] = nz;
        nz += T_ * m.sensors[i].C.rows();
    }
    nz_ = static_cast<std::size_t>(nz);
    Sigma_ = Mat::Zero(nz, nz);
    Sroot_ = Mat::Zero(nz, nz);
    Sigma_.topLeftCorner(n, n) = sc.P0;
    Sroot_.topLeftCorner(n, n) = psd_sqrt(sc.P0);
    const Mat sqQw = psd_sqrt(m.Qw);
    for (long s = 0; s < T_; ++s) {
        Sigma_.block(nw0 + s * n, nw0 + s * n, n, n) = m.Qw;
        Sroot_.block(nw0 + s * n, nw0 + s * n, n, n) = sqQw;
    }
    for (int i = 0; i < L_; ++i) {
        const long q = m.sensors[i].C.rows();
        const Mat sq = psd_sqrt(m.sensors[i].Qv);
        for (long s = 0; s < T_; ++s) {
            Sigma_.block(voff[i] + s * q, voff[i] + s * q, q, q) = m.sensors[i].Qv;
            Sroot_.block(voff[i] + s * q, voff[i] + s * q, q, q) = sq;
        }
    }
    auto wsel = [&](long s) {
        Mat E = Mat::Zero(n, nz);
        E.middleCols(nw0 + s * n, n) = Mat::Identity(n, n);
        return E;
    };

    // State coefficients: x(t) - A^t x0_mean.
    std::vector<Mat> X(T_ + 1);
    X[0] = Mat::Zero(n, nz);
    X[0].leftCols(n) = Mat::Identity(n, n);
    for (long t = 1; t <= T_; ++t) X[t] = m.A * X[t - 1] + wsel(t - 1);

    // Local estimates (deterministic gains), as coefficients of x_hat - A^t x0_mean.
    std::vector<std::vector<Mat>> xhat(L_, std::vector<Mat>(T_ + 1));
    loc_.assign(L_, std::vector<Mat>(T_ + 1));
    for (int i = 0; i < L_; ++i) {
        const long q = m.sensors[i].C.rows();
        LocalFilterState f = initial_filter(m, i, sc.x0, sc.P0);
        xhat[i][0] = Mat::Zero(n, nz);
        for (long t = 1; t <= T_; ++t) {
            f = kalman_predict_gain(f, m);
            Mat y = m.sensors[i].C * X[t];
            y.middleCols(voff[i] + (t - 1) * q, q) += Mat::Identity(q, q);
            xhat[i][t] = f.PhiK * xhat[i][t - 1] + f.K * y;
        }
        for (long t = 0; t <= T_; ++t) loc_[i][t] = (X[t] - xhat[i][t]) * Sroot_;
    }

    // Digits of the joint history: (node, send time) pairs.
    struct Digit {
        int node;
        long s;
    };
    std::vector<Digit> digits;
    for (int i = 0; i < L_; ++i)
        for (long s = 1; s <= T_ - sc.delays[i]; ++s) digits.push_back({i, s});
    std::vector<int> val(digits.size(), 0);

    const long rows = static_cast<long>(L_) * (T_ + 1) * n;
    Mcc_ = Mat::Zero(rows, rows);
    Cmean_ = Mat::Zero(rows, nz);
    Mat C(rows, nz);
    std::vector<std::vector<Mat>> chat(L_, std::vector<Mat>(T_ + 1));
    std::vector<Mat> Adp(L_);
    for (int i = 0; i < L_; ++i) Adp[i] = mat_power(m.A, sc.delays[i]);
    const Mat I = Mat::Identity(n, n);

    for (;;) {
        double prob = 1.0;
        for (std::size_t k = 0; k < digits.size(); ++k) prob *= sc.schemes[digits[k].node].probs(val[k]);
        if (prob > 0.0) {
            std::size_t k = 0;
            for (int i = 0; i < L_; ++i) {
                const int d = sc.delays[i];
                for (long t = 0; t <= T_; ++t) {
                    if (t <= d) {
                        chat[i][t] = Mat::Zero(n, nz);
                    } else {
                        const long s = t - d;
                        const Mat& H = sc.schemes[i].masks[val[k++]];
                        chat[i][t] = Adp[i] * (H * xhat[i][s] + (I - H) * m.A * chat[i][s - 1]);
                    }
                    C.middleRows(row(i, t), n) = (X[t] - chat[i][t]) * Sroot_;
                }
            }
            Mcc_.selfadjointView<Eigen::Lower>().rankUpdate(C, prob);
            Cmean_ += prob * C;
        }
        ++histories_;
        std::size_t k = 0;
        for (; k < digits.size(); ++k) {
            if (++val[k] < sc.schemes[digits[k].node].delta()) break;
            val[k] = 0;
        }
        if (k == digits.size()) break;
    }
    Mcc_ = Mcc_.selfadjointView<Eigen::Lower>();
}

Mat EnumerationOracle::moment(Err ea, int i, long t1, Err eb, int j, long t2) const {
    require(i >= 0 && i < L_ && j >= 0 && j < L_, "node out of range");
    require(t1 >= 0 && t1 <= T_ && t2 >= 0 && t2 <= T_, "time outside oracle horizon");
    if (ea == Err::Cse && eb == Err::Cse) return Mcc_.block(row(i, t1), row(j, t2), n_, n_);
    if (ea == Err::Local && eb == Err::Local) return loc_[i][t1] * loc_[j][t2].transpose();
    if (ea == Err::Local) return loc_[i][t1] * Cmean_.middleRows(row(j, t2), n_).transpose();
    return Cmean_.middleRows(row(i, t1), n_) * loc_[j][t2].transpose();
}

bool OracleReport::pass() const {
    for (const auto& r : rows)
        if (r.violations > 0) return false;
    return true;
}

std::string OracleReport::text() const {
    std::ostringstream os;
    os << fmt::format("oracle mode: {}, horizon {}, {} {}\n",
                      mode == OracleMode::Enumeration ? "mask-enumeration" : "monte-carlo", horizon, samples,
                      mode == OracleMode::Enumeration ? "histories" : "replicas");
    for (const auto& r : rows) {
        if (mode == OracleMode::Enumeration)
            os << fmt::format("  {:<8} entries {:>6}  max|dev| {:.3e}  violations {}\n", r.quantity, r.entries,
                              r.max_abs, r.violations);
        else
            os << fmt::format("  {:<8} entries {:>6}  max|dev| {:.3e}  max z {:.2f}  violations {}\n", r.quantity,
                              r.entries, r.max_abs, r.max_z, r.violations);
    }
    os << (pass() ? "PASS\n" : "FAIL\n");
    return os.str();
}

void OracleReport::write_csv(std::ostream& os) const {
    os << "quantity,entries,max_abs_dev,max_z,violations\n";
    for (const auto& r : rows)
        os << fmt::format("{},{},{:.9g},{:.9g},{}\n", r.quantity, r.entries, r.max_abs, r.max_z, r.violations);
}

namespace {

using Err = EnumerationOracle::Err;

// One compared matrix: ledger value against E{a(t1) b(t2)^T}.
struct Probe {
    int q;  // index into kNames
    Err ea;
    int i;
    long t1;
    Err eb;
    int j;
    long t2;
    bool symmetric;  // compare the upper triangle only
    Mat ledger;
};

const char* const kNames[] = {"P", "Gamma", "Psi", "Upsilon", "Xi", "fused"};

// Ledger values at the current engine tick, with the moment each one stands for.
void collect_probes(const CovarianceEngine& eng, const Scenario& sc, long t, std::vector<Probe>& out) {
    const int L = sc.nodes();
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j) {
            const int di = sc.delays[i], dj = sc.delays[j];
            if (j >= i && eng.has(Quantity::P, i, j, t))
                out.push_back({0, Err::Local, i, t, Err::Local, j, t, i == j, eng.P(i, j, t)});
            if (eng.has(Quantity::Gamma, i, j, t))
                out.push_back({1, Err::Local, i, t, Err::Cse, j, t, false, eng.Gamma(i, j, t)});
            if (eng.has(Quantity::Psi, i, j, t))
                out.push_back({2, Err::Local, i, t - di, Err::Cse, j, t - dj - 1, false, eng.Psi(i, j, t)});
            if (j >= i && eng.has(Quantity::Upsilon, i, j, t))
                out.push_back({3, Err::Cse, i, t - di - 1, Err::Cse, j, t - dj - 1, i == j, eng.Upsilon(i, j, t)});
            if (j >= i && eng.has(Quantity::Xi, i, j, t))
                out.push_back({4, Err::Cse, i, t, Err::Cse, j, t, i == j, eng.Xi(i, j, t)});
        }
}

template <class F>
void for_entries(const Probe& p, F&& f) {
    for (Eigen::Index r = 0; r < p.ledger.rows(); ++r)
        for (Eigen::Index c = p.symmetric ? r : 0; c < p.ledger.cols(); ++c) f(r, c);
}

}  // namespace

OracleReport run_oracle(const Scenario& sc, const OracleConfig& cfg) {
    const long T = cfg.horizon >= 0 ? cfg.horizon : sc.horizon;
    if (T < 1) throw ValidationError("oracle horizon must be >= 1");
    OracleReport rep;
    rep.mode = cfg.mode;
    rep.horizon = T;
    for (const char* nm : kNames) rep.rows.push_back({nm, 0, 0.0, 0.0, 0});

    auto wanted = [&](long t) {
        if (cfg.times.empty()) return true;
        return std::find(cfg.times.begin(), cfg.times.end(), t) != cfg.times.end();
    };

    if (cfg.mode == OracleMode::Enumeration) {
        EnumerationOracle orc(sc, T, cfg.max_histories);
        rep.samples = orc.histories();
        CovarianceEngine eng(sc.model, sc.schemes, sc.delays, sc.P0);
        std::vector<Probe> probes;
        for (long t = 0; t <= T; ++t) {
            if (t > 0) eng.advance();
            probes.clear();
            if (!wanted(t)) continue;
            collect_probes(eng, sc, t, probes);
            for (const Probe& p : probes) {
                const Mat ex = orc.moment(p.ea, p.i, p.t1, p.eb, p.j, p.t2);
                QuantityDeviation& row = rep.rows[p.q];
                for_entries(p, [&](Eigen::Index r, Eigen::Index c) {
                    const double dev = std::abs(ex(r, c) - p.ledger(r, c));
                    ++row.entries;
                    row.max_abs = std::max(row.max_abs, dev);
                    if (!(dev <= cfg.tolerance)) ++row.violations;
                });
            }
        }
        rep.rows.pop_back();  // the fused covariance is a function of Xi; nothing to enumerate
        return rep;
    }

    // Monte-Carlo: ledger values first, then sampled products.
    require(cfg.replicas >= 2, "monte-carlo needs at least two replicas");
    CovarianceEngine eng(sc.model, sc.schemes, sc.delays, sc.P0);
    std::vector<Probe> probes;
    std::vector<std::vector<Mat>> fusedW(T + 1);
    for (long t = 0; t <= T; ++t) {
        if (t > 0) eng.advance();
        if (!wanted(t)) continue;
        collect_probes(eng, sc, t, probes);
        if (cfg.include_fused) {
            FusionResult fr = fusion_weights(eng.assemble_xi(t), sc.model.n());
            fusedW[t] = fr.weights;
            probes.push_back({5, Err::Local, -1, t, Err::Local, -1, t, true, fr.P});
        }
    }
    std::size_t nent = 0;
    for (const Probe& p : probes) for_entries(p, [&](Eigen::Index, Eigen::Index) { ++nent; });
    std::vector<double> sum(nent, 0.0), sumsq(nent, 0.0);

    const int L = sc.nodes();
    const int n = sc.model.n();
    std::vector<std::vector<Vec>> el(L, std::vector<Vec>(T + 1)), ec(L, std::vector<Vec>(T + 1));
    std::vector<Vec> ef(T + 1);
    for (long rpl = 0; rpl < cfg.replicas; ++rpl) {
        Simulator sim(sc, cfg.seed, static_cast<std::uint64_t>(rpl));
        for (long t = 0; t <= T; ++t) {
            if (t > 0) sim.step();
            for (int i = 0; i < L; ++i) {
                el[i][t] = sim.x() - sim.xhat(i);
                ec[i][t] = sim.x() - sim.xc(i);
            }
            if (cfg.include_fused && !fusedW[t].empty()) {
                Vec xf = Vec::Zero(n);
                for (int i = 0; i < L; ++i) xf += fusedW[t][i] * sim.xc(i);
                ef[t] = sim.x() - xf;
            }
        }
        std::size_t k = 0;
        for (const Probe& p : probes) {
            const Vec& a = p.q == 5 ? ef[p.t1] : (p.ea == Err::Local ? el[p.i][p.t1] : ec[p.i][p.t1]);
            const Vec& b = p.q == 5 ? ef[p.t2] : (p.eb == Err::Local ? el[p.j][p.t2] : ec[p.j][p.t2]);
            for_entries(p, [&](Eigen::Index r, Eigen::Index c) {
                const double v = a(r) * b(c);
                sum[k] += v;
                sumsq[k] += v * v;
                ++k;
            });
        }
    }
    rep.samples = cfg.replicas;
    const double N = static_cast<double>(cfg.replicas);
    std::size_t k = 0;
    for (const Probe& p : probes) {
        QuantityDeviation& row = rep.rows[p.q];
        for_entries(p, [&](Eigen::Index r, Eigen::Index c) {
            const double mean = sum[k] / N;
            const double var = std::max(0.0, (sumsq[k] / N - mean * mean) * N / (N - 1.0));
            const double se = std::sqrt(var / N);
            const double dev = std::abs(mean - p.ledger(r, c));
            ++row.entries;
            row.max_abs = std::max(row.max_abs, dev);
            if (se > 0.0) {
                const double z = dev / se;
                row.max_z = std::max(row.max_z, z);
                if (z > cfg.sigmas) ++row.violations;
            } else if (dev > 1e-9) {
                ++row.violations;
            }
            ++k;
        });
    }
    if (!cfg.include_fused) rep.rows.pop_back();
    return rep;
}

}  // namespace dkf
