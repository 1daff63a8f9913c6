#include "dkf/fusion.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>
#include <sstream>

namespace dkf {

CseState initial_cse(int node, int d, const Vec& x0) {
    CseState s;
    s.node = node;
    s.d = d;
    s.xc = x0;
    s.xc0 = x0;
    s.t = 0;
    return s;
}

CseState cse_step(const CseState& st, const std::optional<CompressedPacket>& delivered, const SystemModel& model,
                  const SelectionScheme& scheme) {
    CseState o = st;
    const long t = st.t + 1;
    o.t = t;
    o.history.push_front(st.xc);
    while (static_cast<int>(o.history.size()) > st.d + 1) o.history.pop_back();
    if (t < st.d) {
        if (delivered) throw ContractError(fmt::format("node {}: unexpected packet during start-up at t={}", st.node + 1, t));
        o.xc = model.A * st.xc;
        return o;
    }
    if (!delivered) throw ContractError(fmt::format("node {}: missing packet at t={}", st.node + 1, t));
    const long s = t - st.d;
    if (static_cast<long>(delivered->t_sent) != s)
        throw ContractError(fmt::format("node {}: packet t_sent={} but expected {}", st.node + 1, delivered->t_sent, s));
    const Mat& H = scheme.masks[delivered->mask_index];
    const Mat I = Mat::Identity(model.n(), model.n());
    // Unreceived components: prediction from x^c(s-1); at s = 0 the initial CSE itself.
    Vec prior = (s == 0) ? st.xc0 : Vec(model.A * o.history.back());
    if (s > 0 && static_cast<int>(o.history.size()) < st.d + 1)
        throw ContractError("CSE history not warmed up");
    Vec inner = expand_packet(scheme, *delivered) + (I - H) * prior;
    o.xc = mat_power(model.A, st.d) * inner;
    return o;
}

FusionResult fusion_weights(const Mat& Xi_in, int n, bool allow_pinv) {
    require(Xi_in.rows() == Xi_in.cols() && Xi_in.rows() % n == 0, "Xi must be square with n-multiple size");
    const int L = static_cast<int>(Xi_in.rows() / n);
    Mat Xi = sym(Xi_in);
    Mat Ia(n * L, n);
    for (int i = 0; i < L; ++i) Ia.middleRows(i * n, n) = Mat::Identity(n, n);
    FusionResult r;
    Mat XiInvIa;
    Eigen::LLT<Mat> llt(Xi);
    if (llt.info() != Eigen::Success) {
        Eigen::LLT<Mat> llt2(Xi + 1e-10 * Mat::Identity(Xi.rows(), Xi.cols()));
        if (llt2.info() == Eigen::Success) {
            spdlog::debug("Xi not positive definite, ridge 1e-10 applied");
            r.ridge_used = true;
            XiInvIa = llt2.solve(Ia);
        } else {
            const double lmin = lambda_min_sym(Xi);
            if (!allow_pinv) throw DegeneracyError(fmt::format("Xi is not positive definite (min eigenvalue {:.3e})", lmin), lmin);
            spdlog::warn("Xi degenerate (min eigenvalue {:.3e}), pseudo-inverse used", lmin);
            r.pinv_used = true;
            Eigen::CompleteOrthogonalDecomposition<Mat> cod(Xi);
            XiInvIa = cod.pseudoInverse() * Ia;
        }
    } else {
        XiInvIa = llt.solve(Ia);
    }
    Mat info = sym(Ia.transpose() * XiInvIa);
    r.P = sym(info.inverse());
    Mat Om = r.P * XiInvIa.transpose();  // n x nL
    for (int i = 0; i < L; ++i) r.weights.push_back(Om.middleCols(i * n, n));
    return r;
}

FusionResult fuse(const std::vector<Vec>& xcs, const Mat& Xi, bool allow_pinv) {
    require(!xcs.empty(), "no CSEs to fuse");
    const int n = static_cast<int>(xcs[0].size());
    require(Xi.rows() == n * static_cast<int>(xcs.size()), "Xi size does not match CSE count");
    FusionResult r = fusion_weights(Xi, n, allow_pinv);
    r.xhat = Vec::Zero(n);
    for (std::size_t i = 0; i < xcs.size(); ++i) r.xhat += r.weights[i] * xcs[i];
    return r;
}

SteadyWeights compute_steady_weights(const Scenario& sc, double tol, long max_iter) {
    CovarianceEngine eng(sc.model, sc.schemes, sc.delays, sc.P0);
    const long tau = sc.tau_all();
    std::deque<Mat> hist;
    hist.push_back(eng.assemble_xi(0));
    double res = std::numeric_limits<double>::infinity();
    for (long it = 1; it <= max_iter; ++it) {
        eng.advance();
        Mat X = eng.assemble_xi(eng.now());
        if (!X.allFinite()) throw DivergenceError(fmt::format("Xi became non-finite at t={}", eng.now()));
        hist.push_back(X);
        if (static_cast<long>(hist.size()) > tau + 1) hist.pop_front();
        if (static_cast<long>(hist.size()) == tau + 1) {
            res = norm2(hist.back() - hist.front());
            if (res < tol) {
                SteadyWeights w;
                FusionResult f = fusion_weights(X, sc.model.n());
                w.weights = f.weights;
                w.P = f.P;
                w.Xi = X;
                w.iterations = it;
                w.residual = res;
                return w;
            }
        }
    }
    throw DivergenceError(fmt::format("steady-state Xi not reached within {} ticks (last period residual {:.3e})",
                                      max_iter, res));
}

namespace {
void write_mm(std::ostream& os, const std::string& label, const Mat& m) {
    os << "%%MatrixMarket matrix array real general\n";
    os << "% " << label << "\n";
    os << m.rows() << " " << m.cols() << "\n";
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) os << fmt::format("{:.17g}\n", m(r, c));
}
}  // namespace

void write_weights(const std::string& path, const SteadyWeights& w) {
    std::ofstream os(path);
    if (!os) throw ValidationError(fmt::format("cannot open {} for writing", path));
    for (std::size_t i = 0; i < w.weights.size(); ++i) write_mm(os, fmt::format("omega {}", i + 1), w.weights[i]);
    write_mm(os, "P", w.P);
}

SteadyWeights read_weights(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError(fmt::format("cannot open weights file {}", path));
    SteadyWeights w;
    std::string line;
    int lineno = 0;
    std::string label;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.rfind("%%MatrixMarket", 0) == 0) continue;
        if (line.rfind("%", 0) == 0) {
            label = line.size() > 2 ? line.substr(2) : "";
            continue;
        }
        if (line.empty()) continue;
        std::istringstream hs(line);
        long rows = 0, cols = 0;
        if (!(hs >> rows >> cols) || rows <= 0 || cols <= 0)
            throw ValidationError(fmt::format("{}:{}: bad matrix header", path, lineno));
        Mat m(rows, cols);
        for (long c = 0; c < cols; ++c)
            for (long r = 0; r < rows; ++r) {
                if (!std::getline(is, line)) throw ValidationError(fmt::format("{}:{}: truncated matrix", path, lineno));
                ++lineno;
                try {
                    m(r, c) = std::stod(line);
                } catch (const std::exception&) {
                    throw ValidationError(fmt::format("{}:{}: bad number '{}'", path, lineno, line));
                }
            }
        if (label == "P")
            w.P = m;
        else
            w.weights.push_back(m);
    }
    if (w.weights.empty()) throw ValidationError(fmt::format("{}: no weight matrices found", path));
    return w;
}

// ---------------------------------------------------------------- simulation

namespace {
constexpr int kNoiseStream = 1000;
constexpr int kDelayStream = 3000;
constexpr int kPlantStream = 2000;

Vec gaussian(NodeRng& rng, const Mat& sq) {
    Vec z(sq.cols());
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rng.normal();
    return sq * z;
}
}  // namespace

Simulator::Simulator(const Scenario& sc, std::uint64_t seed, std::uint64_t replica)
    : sc_(sc), plant_(seed, kPlantStream, replica) {
    const int L = sc.nodes();
    sqQw_ = psd_sqrt(sc.model.Qw);
    x_ = sc.x0 + gaussian(plant_, psd_sqrt(sc.P0));
    for (int i = 0; i < L; ++i) {
        mask_rng_.emplace_back(seed, i, replica);
        noise_rng_.emplace_back(seed, kNoiseStream + i, replica);
        delay_rng_.emplace_back(seed, kDelayStream + i, replica);
        sqQv_.push_back(psd_sqrt(sc.model.sensors[i].Qv));
        filters_.push_back(initial_filter(sc.model, i, sc.x0, sc.P0));
        links_.emplace_back(i, sc.delays[i], sc.modes[i]);
        cse_.push_back(initial_cse(i, sc.delays[i], sc.x0));
        delivered_.push_back(std::nullopt);
        masks_.push_back(0);
    }
    for (int i = 0; i < L; ++i) send(i);
    xcs_.resize(L);
    for (int i = 0; i < L; ++i) xcs_[i] = cse_[i].xc;
}

void Simulator::send(int i) {
    const SelectionScheme& sch = sc_.schemes[i];
    masks_[i] = sample_mask(sch, mask_rng_[i]);
    CompressedPacket p = make_packet(sch, masks_[i], filters_[i].xhat, static_cast<std::uint64_t>(t_));
    int raw = -1;
    if (sc_.modes[i] == DelayMode::Bounded)
        raw = static_cast<int>(delay_rng_[i].uniform() * (sc_.delays[i] + 1));
    delivered_[i] = links_[i].send_and_deliver(p, t_, raw);
}

void Simulator::step() {
    const int L = sc_.nodes();
    x_ = sc_.model.A * x_ + gaussian(plant_, sqQw_);
    ++t_;
    for (int i = 0; i < L; ++i) {
        const auto& sen = sc_.model.sensors[i];
        Vec y = sen.C * x_ + gaussian(noise_rng_[i], sqQv_[i]);
        filters_[i] = kalman_step(filters_[i], y, sc_.model);
    }
    for (int i = 0; i < L; ++i) {
        send(i);
        cse_[i] = cse_step(cse_[i], delivered_[i], sc_.model, sc_.schemes[i]);
        xcs_[i] = cse_[i].xc;
    }
}

Trace run_dkfe(const Scenario& sc, const RunOptions& opt) {
    const long horizon = opt.horizon >= 0 ? opt.horizon : sc.horizon;
    Simulator sim(sc, opt.seed, opt.replica);
    CovarianceEngine eng(sc.model, sc.schemes, sc.delays, sc.P0);
    Trace tr;
    auto record = [&]() {
        FusionResult f = fuse(sim.xcs(), eng.assemble_xi(eng.now()));
        if (f.ridge_used) ++tr.ridge_events;
        if (!opt.keep_rows) return;
        TraceRow row;
        row.t = sim.t();
        row.x = sim.x();
        row.xhat = f.xhat;
        row.P = f.P;
        row.xc = sim.xcs();
        row.weights = f.weights;
        for (int i = 0; i < sc.nodes(); ++i) row.trXi.push_back(eng.Xi(i, i, eng.now()).trace());
        tr.rows.push_back(std::move(row));
    };
    record();
    auto t0 = std::chrono::steady_clock::now();
    for (long t = 1; t <= horizon; ++t) {
        sim.step();
        eng.advance();
        record();
    }
    auto t1 = std::chrono::steady_clock::now();
    if (horizon > 0) tr.seconds_per_tick = std::chrono::duration<double>(t1 - t0).count() / horizon;
    return tr;
}

Trace run_sdkfe(const Scenario& sc, const SteadyWeights& steady, const RunOptions& opt) {
    if (static_cast<int>(steady.weights.size()) != sc.nodes())
        throw ContractError("steady weights not computed for this scenario");
    const long horizon = opt.horizon >= 0 ? opt.horizon : sc.horizon;
    Simulator sim(sc, opt.seed, opt.replica);
    Trace tr;
    auto record = [&]() {
        Vec xs = Vec::Zero(sc.model.n());
        for (int i = 0; i < sc.nodes(); ++i) xs += steady.weights[i] * sim.xc(i);
        if (!opt.keep_rows) return;
        TraceRow row;
        row.t = sim.t();
        row.x = sim.x();
        row.xhat = xs;
        row.P = steady.P;
        row.xc = sim.xcs();
        row.weights = steady.weights;
        tr.rows.push_back(std::move(row));
    };
    record();
    auto t0 = std::chrono::steady_clock::now();
    for (long t = 1; t <= horizon; ++t) {
        sim.step();
        record();
    }
    auto t1 = std::chrono::steady_clock::now();
    if (horizon > 0) tr.seconds_per_tick = std::chrono::duration<double>(t1 - t0).count() / horizon;
    return tr;
}

void write_trace_csv(const std::string& path, const Trace& dkfe, const Trace* sdkfe, int nodes) {
    std::ofstream os(path);
    if (!os) throw ValidationError(fmt::format("cannot open {} for writing", path));
    os << "t,comp,x,xhat_dkfe";
    if (sdkfe) os << ",xhat_sdkfe";
    os << ",sqerr_dkfe,tracP";
    for (int i = 0; i < nodes; ++i) os << ",tracXi_" << (i + 1);
    os << "\n";
    for (std::size_t k = 0; k < dkfe.rows.size(); ++k) {
        const TraceRow& r = dkfe.rows[k];
        const double sq = (r.x - r.xhat).squaredNorm();
        for (Eigen::Index c = 0; c < r.x.size(); ++c) {
            os << fmt::format("{},{},{:.12g},{:.12g}", r.t, c + 1, r.x(c), r.xhat(c));
            if (sdkfe) os << fmt::format(",{:.12g}", sdkfe->rows.at(k).xhat(c));
            os << fmt::format(",{:.12g},{:.12g}", sq, r.P.trace());
            for (double v : r.trXi) os << fmt::format(",{:.12g}", v);
            os << "\n";
        }
    }
}

}  // namespace dkf
