#include "oracles.hpp"

#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace dkf;
using dkf::test::max_abs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("dkf_harness_" + name);
    fs::remove_all(p);
    return p;
}

// Column-keyed rows of a simple CSV file.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
    std::ifstream f(p);
    std::string line;
    std::getline(f, line);
    std::vector<std::string> head;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) head.push_back(c);
    }
    std::vector<std::map<std::string, std::string>> rows;
    while (std::getline(f, line)) {
        std::stringstream ss(line);
        std::string c;
        std::map<std::string, std::string> row;
        for (std::size_t k = 0; std::getline(ss, c, ','); ++k) row[head.at(k)] = c;
        rows.push_back(row);
    }
    return rows;
}

double num(const std::map<std::string, std::string>& row, const std::string& key) { return std::stod(row.at(key)); }

}  // namespace

TEST_SUITE("harness") {
    TEST_CASE("simulate writes the artifact bundle") {
        const fs::path out = scratch("ex2");
        RunScenarioOptions o;
        o.out_dir = out.string();
        o.horizon = 40;
        o.replicas = 20;
        ArtifactBundle b = run_scenario(bundled_scenario("example2"), o);
        for (const char* f : {"stability.csv", "stability.txt", "weights.mtx", "trace.csv", "mse.csv", "weights.csv"})
            CHECK(fs::exists(out / f));
        CHECK_FALSE(fs::exists(out / "ledger_Xi.csv"));
        CHECK(b.summary.find("per-tick cost") != std::string::npos);

        auto mse = read_csv(out / "mse.csv");
        REQUIRE(mse.size() == 41);
        for (const auto& r : mse) {
            // Fused covariance below every CSE, delayed fusion above the undelayed one.
            CHECK(num(r, "trP") <= num(r, "trXi_1") + 1e-9);
            CHECK(num(r, "trP") <= num(r, "trXi_2") + 1e-9);
            CHECK(num(r, "trP") >= num(r, "trP_nodelay") - 1e-9);
        }
        auto trace = read_csv(out / "trace.csv");
        CHECK(trace.size() == 41 * 4);
        CHECK(trace.front().count("xhat_sdkfe") == 1);
        SteadyWeights w = read_weights((out / "weights.mtx").string());
        CHECK(max_abs(w.weights[0] + w.weights[1] - Mat::Identity(4, 4)) < 1e-10);
        fs::remove_all(out);
    }

    TEST_CASE("probability sweep converges only for stable gammas") {
        const fs::path out = scratch("ex1");
        RunScenarioOptions o;
        o.out_dir = out.string();
        o.horizon = 120;
        run_scenario(bundled_scenario("example1"), o);
        std::map<std::string, std::vector<double>> series;
        for (const auto& r : read_csv(out / "sweep.csv")) series[r.at("gamma")].push_back(num(r, "trXi"));
        REQUIRE(series.size() == 9);
        auto settled = [](const std::vector<double>& v) {
            return std::abs(v.back() - v[v.size() - 2]) < 1e-6 * v.back();
        };
        CHECK(settled(series["0.50"]));
        CHECK(settled(series["0.60"]));
        CHECK_FALSE(settled(series["0.10"]));
        CHECK(series["0.90"].back() > 1e3 * series["0.50"].back());
        fs::remove_all(out);
    }

    TEST_CASE("ledger dump is emitted on request") {
        Scenario sc = test::toy({0, 1}, {test::vec2(0.6, 0.4), test::vec2(0.25, 0.75)}, 6);
        sc.emit_ledger = true;
        const fs::path out = scratch("ledger");
        RunScenarioOptions o;
        o.out_dir = out.string();
        run_scenario(sc, o);
        for (const char* q : {"P", "Gamma", "Psi", "Upsilon", "Xi"}) CHECK(fs::exists(out / fmt::format("ledger_{}.csv", q)));
        fs::remove_all(out);
    }

    TEST_CASE("invalid run options leave no output") {
        const fs::path out = scratch("bad");
        RunScenarioOptions o;
        o.out_dir = out.string();
        o.horizon = 0;
        CHECK_THROWS_AS(run_scenario(bundled_scenario("example2"), o), ValidationError);
        o.horizon = 5;
        o.replicas = 0;
        CHECK_THROWS_AS(run_scenario(bundled_scenario("example2"), o), ValidationError);
        CHECK_FALSE(fs::exists(out));
    }

    TEST_CASE("enumeration oracle agrees with the noise expansion") {
        const Scenario sc = test::toy({1, 2}, {test::vec2(0.6, 0.4), test::vec2(0.25, 0.75)}, 6);
        const test::NoiseExpansion ox(sc, 6);
        const EnumerationOracle eo(sc, 6);
        using E = EnumerationOracle::Err;
        for (long a = 0; a <= 6; ++a)
            for (long b = 0; b <= 6; ++b)
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j) {
                        CHECK(max_abs(eo.moment(E::Local, i, a, E::Local, j, b) - ox.cov(ox.loc(i, a), ox.loc(j, b))) < 1e-10);
                        CHECK(max_abs(eo.moment(E::Local, i, a, E::Cse, j, b) - ox.cov(ox.loc(i, a), ox.cse_mean(j, b))) <
                              1e-10);
                        CHECK(max_abs(eo.moment(E::Cse, i, a, E::Cse, j, b) - ox.cse_cse(i, a, j, b)) < 1e-10);
                    }
    }

    TEST_CASE("oracle run on a toy") {
        const Scenario sc = test::toy({2, 1}, {test::vec2(0.6, 0.4), test::vec2(0.25, 0.75)}, 8);
        OracleReport r = run_oracle(sc, {});
        CHECK(r.pass());
        CHECK(r.rows.size() == 5);
        for (const auto& q : r.rows) CHECK(q.max_abs < 1e-9);
        CHECK(r.text().find("mask-enumeration") != std::string::npos);

        OracleConfig cap;
        cap.max_histories = 10;
        CHECK_THROWS_AS(run_oracle(sc, cap), ValidationError);
        CHECK_THROWS_AS(EnumerationOracle(bundled_scenario("example2"), 30), ValidationError);
    }

    TEST_CASE("Monte-Carlo oracle on a toy") {
        const Scenario sc = test::toy({1, 0}, {test::vec2(0.6, 0.4), test::vec2(0.25, 0.75)}, 10);
        OracleConfig c;
        c.mode = OracleMode::MonteCarlo;
        c.replicas = 4000;
        c.times = {10};
        c.sigmas = 4.0;
        OracleReport r = run_oracle(sc, c);
        CHECK(r.pass());
        CHECK(r.samples == 4000);
        std::ostringstream os;
        r.write_csv(os);
        CHECK(os.str().rfind("quantity,entries", 0) == 0);
    }

    TEST_CASE("table rows") {
        auto rows = reproduce_table1();
        REQUIRE(rows.size() == 11);
        for (const auto& r : rows) {
            const bool stable = r.gamma > 0.35 && r.gamma < 0.85;
            CHECK(r.a105 == stable);
            CHECK(r.b105 == false);
            CHECK((r.radius < 1.0) == stable);
        }
        CHECK(rows[5].b105_lambda == doctest::Approx(1.5887).epsilon(1e-4));
        std::ostringstream os;
        write_table1_csv(os, rows);
        CHECK(os.str().find("0.5,true,false,1.588") != std::string::npos);
    }

    TEST_CASE("scenario files") {
        const Scenario a = load_scenario(std::string(DKF_SOURCE_DIR) + "/scenarios/example2.scenario");
        const Scenario b = bundled_scenario("example2");
        CHECK(max_abs(a.model.A - b.model.A) == 0.0);
        CHECK(a.delays == b.delays);
        CHECK(a.tau_all() == 6);
        CHECK_THROWS_AS(load_scenario(std::string(DKF_SOURCE_DIR) + "/tests/data/bad_matrix.scenario"), ValidationError);
        CHECK_THROWS_AS(load_scenario("/nonexistent.scenario"), ValidationError);
        CHECK_THROWS_AS(bundled_scenario("example9"), ValidationError);
        try {
            parse_scenario("A: [[1, 0], [0, 1]]\nQw: identity\nnodes:\n  - C: [[1, 0]]\n    Qv: [[1]]\n    r: 1\n"
                           "    probs: [0.5, 0.6]\n",
                           "inline");
            FAIL("expected a validation error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("inline:") != std::string::npos);
        } catch (const ContractError& e) {
            CHECK(std::string(e.what()).find("probabilities") != std::string::npos);
        }
    }
}
