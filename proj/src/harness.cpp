#include "dkf/harness.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace dkf {

namespace {

// Analytic Tr P(t) and Tr Xi_ii(t) for t = 0..T; also the weight norms.
struct LedgerSeries {
    std::vector<double> trP;
    std::vector<std::vector<double>> trXi;   // [t][i]
    std::vector<std::vector<double>> wnorm;  // [t][i]
};

LedgerSeries ledger_series(const Scenario& sc, long T, std::map<Quantity, std::string>* dumps) {
    CovarianceEngine eng(sc.model, sc.schemes, sc.delays, sc.P0);
    LedgerSeries s;
    std::map<Quantity, std::ostringstream> os;
    for (long t = 0; t <= T; ++t) {
        if (t > 0) eng.advance();
        FusionResult f = fusion_weights(eng.assemble_xi(t), sc.model.n());
        s.trP.push_back(f.P.trace());
        std::vector<double> xi, wn;
        for (int i = 0; i < sc.nodes(); ++i) {
            xi.push_back(eng.Xi(i, i, t).trace());
            wn.push_back(f.weights[i].norm());
        }
        s.trXi.push_back(xi);
        s.wnorm.push_back(wn);
        if (dumps)
            for (Quantity q : {Quantity::P, Quantity::Gamma, Quantity::Psi, Quantity::Upsilon, Quantity::Xi})
                eng.dump_csv(os[q], q, t, t, t == 0);
    }
    if (dumps)
        for (auto& [q, o] : os) (*dumps)[q] = o.str();
    return s;
}

const char* quantity_name(Quantity q) {
    switch (q) {
        case Quantity::P: return "P";
        case Quantity::Gamma: return "Gamma";
        case Quantity::Psi: return "Psi";
        case Quantity::Upsilon: return "Upsilon";
        case Quantity::Xi: return "Xi";
    }
    return "?";
}

std::string weights_text(const SteadyWeights& w) {
    std::ostringstream os;
    for (std::size_t i = 0; i < w.weights.size(); ++i) {
        os << "%%MatrixMarket matrix array real general\n% omega " << (i + 1) << "\n";
        os << w.weights[i].rows() << " " << w.weights[i].cols() << "\n";
        for (Eigen::Index c = 0; c < w.weights[i].cols(); ++c)
            for (Eigen::Index r = 0; r < w.weights[i].rows(); ++r) os << fmt::format("{:.17g}\n", w.weights[i](r, c));
    }
    os << "%%MatrixMarket matrix array real general\n% P\n" << w.P.rows() << " " << w.P.cols() << "\n";
    for (Eigen::Index c = 0; c < w.P.cols(); ++c)
        for (Eigen::Index r = 0; r < w.P.rows(); ++r) os << fmt::format("{:.17g}\n", w.P(r, c));
    return os.str();
}

}  // namespace

ArtifactBundle run_scenario(const Scenario& sc_in, const RunScenarioOptions& opt) {
    Scenario sc = sc_in;
    if (opt.seed) sc.seed = *opt.seed;
    if (opt.replicas) sc.replicas = *opt.replicas;
    if (opt.horizon) sc.horizon = *opt.horizon;
    if (sc.horizon < 1) throw ValidationError(fmt::format("{}: horizon must be >= 1 (got {})", sc.source, sc.horizon));
    if (sc.replicas < 1) throw ValidationError("replicas must be >= 1");
    if (opt.out_dir.empty()) throw ValidationError("output directory not given");
    const long T = sc.horizon;
    const int L = sc.nodes();
    const int n = sc.model.n();

    // Everything is computed before the first file is written.
    std::map<std::string, std::string> files;
    std::ostringstream summary;

    StabilityReport stab = check_theorem3(sc.model, sc.schemes, sc.delays);
    {
        std::ostringstream csv;
        stab.write_csv(csv);
        files["stability.csv"] = csv.str();
        files["stability.txt"] = stab.text();
    }
    summary << stab.text();

    std::optional<SteadyWeights> steady;
    if (sc.emit_steady) {
        if (stab.overall_theorem3) {
            steady = compute_steady_weights(sc);
            files["weights.mtx"] = weights_text(*steady);
            summary << fmt::format("steady weights after {} ticks, Tr P = {:.6f}\n", steady->iterations,
                                   steady->P.trace());
        } else {
            summary << "steady weights skipped: stability not certified\n";
        }
    }

    std::map<Quantity, std::string> dumps;
    LedgerSeries led = ledger_series(sc, T, sc.emit_ledger ? &dumps : nullptr);
    for (auto& [q, text] : dumps) files[fmt::format("ledger_{}.csv", quantity_name(q))] = text;

    Scenario nodelay = sc;
    std::fill(nodelay.delays.begin(), nodelay.delays.end(), 0);
    LedgerSeries led0 = ledger_series(nodelay, T, nullptr);

    // Empirical mean-square errors over replicas.
    std::vector<double> mse_d(T + 1, 0.0), mse_s(T + 1, 0.0);
    std::vector<std::vector<double>> mse_c(T + 1, std::vector<double>(L, 0.0));
    Trace first_d, first_s;
    double spt_d = 0.0, spt_s = 0.0;
    for (long r = 0; r < sc.replicas; ++r) {
        RunOptions ro;
        ro.seed = sc.seed;
        ro.replica = static_cast<std::uint64_t>(r);
        ro.horizon = T;
        Trace td = run_dkfe(sc, ro);
        spt_d += td.seconds_per_tick;
        Trace ts;
        if (steady) {
            ts = run_sdkfe(sc, *steady, ro);
            spt_s += ts.seconds_per_tick;
        }
        for (long t = 0; t <= T; ++t) {
            const TraceRow& rd = td.rows[t];
            mse_d[t] += (rd.x - rd.xhat).squaredNorm();
            if (steady) mse_s[t] += (ts.rows[t].x - ts.rows[t].xhat).squaredNorm();
            for (int i = 0; i < L; ++i) mse_c[t][i] += (rd.x - rd.xc[i]).squaredNorm();
        }
        if (r == 0) {
            first_d = std::move(td);
            first_s = std::move(ts);
        }
    }
    const double R = static_cast<double>(sc.replicas);

    if (sc.emit_trace) {
        std::ostringstream os;
        os << "t,comp,x,xhat_dkfe";
        if (steady) os << ",xhat_sdkfe,er";
        for (int i = 0; i < L; ++i) os << ",xc_" << (i + 1);
        os << "\n";
        for (long t = 0; t <= T; ++t) {
            const TraceRow& rd = first_d.rows[t];
            for (int c = 0; c < n; ++c) {
                os << fmt::format("{},{},{:.12g},{:.12g}", t, c + 1, rd.x(c), rd.xhat(c));
                if (steady) {
                    const double xs = first_s.rows[t].xhat(c);
                    os << fmt::format(",{:.12g},{:.12g}", xs, rd.xhat(c) - xs);
                }
                for (int i = 0; i < L; ++i) os << fmt::format(",{:.12g}", rd.xc[i](c));
                os << "\n";
            }
        }
        files["trace.csv"] = os.str();
    }
    {
        std::ostringstream os;
        os << "t,trP,trP_nodelay";
        for (int i = 0; i < L; ++i) os << ",trXi_" << (i + 1);
        os << ",mse_dkfe";
        if (steady) os << ",mse_sdkfe";
        for (int i = 0; i < L; ++i) os << ",mse_cse_" << (i + 1);
        os << "\n";
        for (long t = 0; t <= T; ++t) {
            os << fmt::format("{},{:.12g},{:.12g}", t, led.trP[t], led0.trP[t]);
            for (int i = 0; i < L; ++i) os << fmt::format(",{:.12g}", led.trXi[t][i]);
            os << fmt::format(",{:.12g}", mse_d[t] / R);
            if (steady) os << fmt::format(",{:.12g}", mse_s[t] / R);
            for (int i = 0; i < L; ++i) os << fmt::format(",{:.12g}", mse_c[t][i] / R);
            os << "\n";
        }
        files["mse.csv"] = os.str();
    }
    {
        std::ostringstream os;
        os << "t";
        for (int i = 0; i < L; ++i) os << ",weight_norm_" << (i + 1);
        os << "\n";
        for (long t = 0; t <= T; ++t) {
            os << t;
            for (int i = 0; i < L; ++i) os << fmt::format(",{:.12g}", led.wnorm[t][i]);
            os << "\n";
        }
        files["weights.csv"] = os.str();
    }
    if (sc.sweep) {
        std::ostringstream os;
        os << "gamma,t,trXi\n";
        const int node = sc.sweep->node;
        for (double g : sc.sweep->gammas) {
            Vec p(2);
            p << g, 1.0 - g;
            Scenario s2 = with_probs(sc, node, p);
            CovarianceEngine eng(s2.model, s2.schemes, s2.delays, s2.P0);
            for (long t = 0; t <= T; ++t) {
                if (t > 0) eng.advance();
                os << fmt::format("{:.2f},{},{:.12g}\n", g, t, eng.Xi(node, node, t).trace());
            }
        }
        files["sweep.csv"] = os.str();
    }

    summary << fmt::format("horizon {}, {} replica(s), final Tr P = {:.6f}\n", T, sc.replicas, led.trP[T]);
    summary << fmt::format("per-tick cost: DKFE {:.3e} s", spt_d / R);
    if (steady) summary << fmt::format(", SDKFE {:.3e} s", spt_s / R);
    summary << "\n";

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(opt.out_dir, ec);
    if (ec) throw ValidationError(fmt::format("cannot create output directory {}: {}", opt.out_dir, ec.message()));
    ArtifactBundle bundle;
    for (const auto& [name, text] : files) {
        const fs::path p = fs::path(opt.out_dir) / name;
        std::ofstream f(p, std::ios::binary);
        if (!f) throw ValidationError(fmt::format("cannot write {}", p.string()));
        f << text;
        bundle.files.push_back(p.string());
    }
    bundle.summary = summary.str();
    return bundle;
}

std::vector<Table1Row> reproduce_table1(const LmiOptions& opt) {
    const Scenario base = bundled_scenario("example1");
    const SteadyFilter filt = steady_state(base.model, 0);
    std::vector<Table1Row> rows;
    for (int k = 0; k <= 10; ++k) {
        Table1Row r;
        r.gamma = k / 10.0;
        Vec p(2);
        p << r.gamma, 1.0 - r.gamma;
        const Scenario sc = with_probs(base, 0, p);
        const AugmentedSystem s = make_augmented(sc.model.A, sc.schemes[0], 0, filt);
        const A105Result a = lmi_a105(s, opt);
        r.a105 = a.verdict == LmiVerdict::Feasible;
        const int n = sc.model.n();
        r.b105_lambda =
            lambda_max_sym(sc.model.A.transpose() * (Mat::Identity(n, n) - sc.schemes[0].Hbar) * sc.model.A);
        r.b105 = r.b105_lambda < 1.0;
        r.radius = exact_ms_test(s);
        rows.push_back(r);
    }
    return rows;
}

void write_table1_csv(std::ostream& os, const std::vector<Table1Row>& rows) {
    os << "gamma,a105,b105,b105_lambda_max,exact_ms_radius\n";
    for (const auto& r : rows)
        os << fmt::format("{:.1f},{},{},{:.6f},{:.6f}\n", r.gamma, r.a105 ? "true" : "false",
                          r.b105 ? "true" : "false", r.b105_lambda, r.radius);
}

}  // namespace dkf
