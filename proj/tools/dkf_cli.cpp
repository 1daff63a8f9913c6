// Command-line front end: simulate, steady, stability, oracle, table1, select-probs.
#include "dkf/harness.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

constexpr int kValidation = 2;
constexpr int kNumeric = 3;

dkf::Scenario load(const std::string& arg) {
    // Bare names resolve to the bundled scenarios.
    if (!std::filesystem::exists(arg) && (arg == "example1" || arg == "example2")) return dkf::bundled_scenario(arg);
    return dkf::load_scenario(arg);
}

struct Common {
    std::optional<std::uint64_t> seed;
    std::optional<long> replicas;
    std::optional<long> horizon;
    std::string out;
};

void add_common(CLI::App* app, Common& c, bool with_out = true) {
    app->add_option("--seed", c.seed, "master seed");
    app->add_option("--replicas", c.replicas, "Monte-Carlo replicas");
    app->add_option("--horizon", c.horizon, "number of ticks");
    if (with_out) app->add_option("--out", c.out, "output path");
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(path);
    if (!f) throw dkf::ValidationError(fmt::format("cannot write {}", path));
    f << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributed Kalman fusion with dimensionality reduction and delays"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "debug logging");

    std::string scenario;
    Common sim_c, st_c, stab_c, orc_c, t1_c, sel_c;

    auto* sim = app.add_subcommand("simulate", "run DKFE/SDKFE and write the artifact bundle");
    sim->add_option("scenario", scenario, "scenario file or bundled name")->required();
    add_common(sim, sim_c);

    auto* steady = app.add_subcommand("steady", "compute steady-state fusion weights");
    steady->add_option("scenario", scenario)->required();
    add_common(steady, st_c);

    auto* stab = app.add_subcommand("stability", "LMI, exact mean-square and spectral-radius checks");
    stab->add_option("scenario", scenario)->required();
    add_common(stab, stab_c);
    bool stab_csv = false;
    stab->add_flag("--csv", stab_csv, "CSV instead of text");

    auto* orc = app.add_subcommand("oracle", "compare the covariance ledger with an independent oracle");
    orc->add_option("scenario", scenario)->required();
    add_common(orc, orc_c);
    std::string mode = "enumeration";
    orc->add_option("--mode", mode, "enumeration | mc")->check(CLI::IsMember({"enumeration", "mc", "monte-carlo"}));

    auto* t1 = app.add_subcommand("table1", "a105/b105 verdicts over gamma = 0, 0.1, ..., 1");
    add_common(t1, t1_c);

    auto* sel = app.add_subcommand("select-probs", "search selection probabilities satisfying C1 or C2");
    sel->add_option("scenario", scenario)->required();
    add_common(sel, sel_c);
    std::string crit = "c1";
    sel->add_option("--criterion", crit, "c1 | c2")->check(CLI::IsMember({"c1", "c2"}));
    double step = 0.1;
    sel->add_option("--grid-step", step, "simplex grid resolution");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kValidation;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

    try {
        if (*sim) {
            dkf::Scenario sc = load(scenario);
            dkf::RunScenarioOptions o;
            o.out_dir = sim_c.out.empty() ? "out_" + sc.name : sim_c.out;
            o.seed = sim_c.seed;
            o.replicas = sim_c.replicas;
            o.horizon = sim_c.horizon;
            dkf::ArtifactBundle b = dkf::run_scenario(sc, o);
            std::cout << b.summary;
            for (const auto& f : b.files) std::cout << "wrote " << f << "\n";
        } else if (*steady) {
            dkf::Scenario sc = load(scenario);
            dkf::StabilityReport rep = dkf::check_theorem3(sc.model, sc.schemes, sc.delays);
            if (!rep.overall_theorem3) {
                std::cerr << rep.text();
                throw dkf::DivergenceError("stability not certified; steady weights are not defined");
            }
            dkf::SteadyWeights w = dkf::compute_steady_weights(sc);
            if (!st_c.out.empty()) dkf::write_weights(st_c.out, w);
            Eigen::IOFormat fmt4(6, 0, " ", "\n", "  ", "");
            std::cout << fmt::format("converged after {} ticks (period residual {:.2e})\n", w.iterations, w.residual);
            for (std::size_t i = 0; i < w.weights.size(); ++i)
                std::cout << "Omega_" << (i + 1) << " =\n" << w.weights[i].format(fmt4) << "\n";
            std::cout << "P =\n" << w.P.format(fmt4) << "\n";
        } else if (*stab) {
            dkf::Scenario sc = load(scenario);
            dkf::LmiOptions lo;
            if (stab_c.seed) lo.seed = *stab_c.seed;
            dkf::StabilityReport rep = dkf::check_theorem3(sc.model, sc.schemes, sc.delays, lo);
            std::ostringstream csv;
            rep.write_csv(csv);
            write_or_print(stab_c.out, stab_csv ? csv.str() : rep.text());
            return 0;
        } else if (*orc) {
            dkf::Scenario sc = load(scenario);
            dkf::OracleConfig cfg;
            cfg.mode = mode == "enumeration" ? dkf::OracleMode::Enumeration : dkf::OracleMode::MonteCarlo;
            if (orc_c.seed) cfg.seed = *orc_c.seed;
            if (orc_c.replicas) cfg.replicas = *orc_c.replicas;
            if (orc_c.horizon) cfg.horizon = *orc_c.horizon;
            dkf::OracleReport rep = dkf::run_oracle(sc, cfg);
            std::cout << rep.text();
            if (!orc_c.out.empty()) {
                std::ofstream f(orc_c.out);
                rep.write_csv(f);
            }
            return rep.pass() ? 0 : kNumeric;
        } else if (*t1) {
            dkf::LmiOptions lo;
            if (t1_c.seed) lo.seed = *t1_c.seed;
            std::ostringstream os;
            dkf::write_table1_csv(os, dkf::reproduce_table1(lo));
            write_or_print(t1_c.out, os.str());
        } else if (*sel) {
            dkf::Scenario sc = load(scenario);
            dkf::SelectOptions so;
            so.grid_step = step;
            if (sel_c.seed) so.lmi.seed = *sel_c.seed;
            const auto c = crit == "c1" ? dkf::ProbCriterion::C1 : dkf::ProbCriterion::C2;
            std::ostringstream os;
            os << "node,rank,margin,exact_ms_radius,rho_open_loop,refined,probs\n";
            for (int i = 0; i < sc.nodes(); ++i) {
                auto found = dkf::select_probabilities(sc.model, sc.schemes[i], sc.delays[i], c, so);
                if (found.empty()) spdlog::warn("node {}: no feasible probabilities found", i + 1);
                for (std::size_t k = 0; k < found.size(); ++k) {
                    const auto& f = found[k];
                    std::string probs;
                    for (Eigen::Index q = 0; q < f.probs.size(); ++q)
                        probs += fmt::format("{}{:.4f}", q ? " " : "", f.probs(q));
                    os << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{},{}\n", i + 1, k + 1, f.margin, f.radius, f.rho106,
                                      f.refined ? "true" : "false", probs);
                }
            }
            write_or_print(sel_c.out, os.str());
        }
    } catch (const dkf::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kValidation;
    } catch (const dkf::ContractError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kValidation;
    } catch (const dkf::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    }
    return 0;
}
