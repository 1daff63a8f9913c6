#pragma once

#include "dkf/covariance.hpp"
#include "dkf/fusion.hpp"
#include "dkf/scenario.hpp"
#include "dkf/stability.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dkf {

enum class OracleMode { Enumeration, MonteCarlo };

struct OracleConfig {
    OracleMode mode = OracleMode::Enumeration;
    long replicas = 100000;           // Monte-Carlo
    long max_histories = 1000000;     // enumeration cap on joint mask histories
    long horizon = -1;                // < 0: scenario horizon
    std::uint64_t seed = 1;
    double tolerance = 1e-9;          // enumeration, absolute
    double sigmas = 3.0;              // Monte-Carlo, per entry
    std::vector<long> times;          // Monte-Carlo comparison times; empty = all
    bool include_fused = true;        // Monte-Carlo: also the fused error covariance P(t)
};

struct QuantityDeviation {
    std::string quantity;
    long entries = 0;
    double max_abs = 0.0;
    double max_z = 0.0;      // Monte-Carlo only
    long violations = 0;
};

struct OracleReport {
    OracleMode mode = OracleMode::Enumeration;
    long horizon = 0;
    long samples = 0;  // histories enumerated or replicas drawn
    std::vector<QuantityDeviation> rows;

    bool pass() const;
    std::string text() const;
    void write_csv(std::ostream& os) const;
};

// Exact (enumeration) or sampled (Monte-Carlo) second moments compared with the ledger.
// Enumeration refuses instances whose joint history count exceeds the cap.
OracleReport run_oracle(const Scenario& sc, const OracleConfig& cfg);

// Exact moments by enumeration, exposed for tests: E{a(t1) b(t2)^T} for
// a, b in {local error, CSE error} of nodes i, j.
class EnumerationOracle {
public:
    EnumerationOracle(const Scenario& sc, long horizon, long max_histories = 1000000);
    enum class Err { Local, Cse };
    Mat moment(Err ea, int i, long t1, Err eb, int j, long t2) const;
    long histories() const { return histories_; }
    long horizon() const { return T_; }

private:
    int L_, n_;
    long T_;
    long histories_ = 0;
    std::size_t nz_ = 0;
    Mat Sigma_;                              // covariance of primitive noises
    Mat Sroot_;                              // Sigma = Sroot Sroot^T
    std::vector<std::vector<Mat>> loc_;      // [i][t] coefficient of x~_i(t)
    Mat Mcc_;    // E{C C^T}, C = stacked CSE error coefficients times Sroot
    Mat Cmean_;  // E{C}
    long row(int i, long t) const { return (static_cast<long>(i) * (T_ + 1) + t) * n_; }
};

struct RunScenarioOptions {
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<long> replicas;
    std::optional<long> horizon;
};

struct ArtifactBundle {
    std::vector<std::string> files;
    std::string summary;
};

ArtifactBundle run_scenario(const Scenario& sc, const RunScenarioOptions& opt);

struct Table1Row {
    double gamma = 0.0;
    bool a105 = false;
    bool b105 = false;
    double b105_lambda = 0.0;
    double radius = 0.0;
};
std::vector<Table1Row> reproduce_table1(const LmiOptions& opt = {});
void write_table1_csv(std::ostream& os, const std::vector<Table1Row>& rows);

}  // namespace dkf
