#pragma once

#include "dkf/channel.hpp"
#include "dkf/covariance.hpp"
#include "dkf/scenario.hpp"

#include <deque>
#include <optional>
#include <string>
#include <vector>

namespace dkf {

struct CseState {
    int node = 0;
    int d = 0;
    Vec xc;
    Vec xc0;                // initial CSE value
    std::deque<Vec> history;  // x^c(t-1) ... x^c(t-d-1), most recent first
    long t = 0;
};

CseState initial_cse(int node, int d, const Vec& x0);

// Advances to state.t + 1 using the packet sent at t + 1 - d (required once t + 1 >= d).
CseState cse_step(const CseState& state, const std::optional<CompressedPacket>& delivered, const SystemModel& model,
                  const SelectionScheme& scheme);

struct FusionResult {
    std::vector<Mat> weights;
    Vec xhat;
    Mat P;
    bool ridge_used = false;
    bool pinv_used = false;
};

// Weights from Xi alone (xhat left empty).
FusionResult fusion_weights(const Mat& Xi, int n, bool allow_pinv = false);
FusionResult fuse(const std::vector<Vec>& xcs, const Mat& Xi, bool allow_pinv = false);

struct SteadyWeights {
    std::vector<Mat> weights;
    Mat P;
    Mat Xi;
    long iterations = 0;
    double residual = 0.0;
};

SteadyWeights compute_steady_weights(const Scenario& sc, double tol = 1e-9, long max_iter = 100000);
void write_weights(const std::string& path, const SteadyWeights& w);
SteadyWeights read_weights(const std::string& path);

// Plant, sink filters, channels and CSEs driven by seeded per-node streams.
// Identical (scenario, seed, replica) gives identical sample paths.
class Simulator {
public:
    Simulator(const Scenario& sc, std::uint64_t seed, std::uint64_t replica = 0);
    void step();
    long t() const { return t_; }
    const Vec& x() const { return x_; }
    const Vec& xhat(int i) const { return filters_[i].xhat; }
    const Vec& xc(int i) const { return cse_[i].xc; }
    const std::vector<Vec>& xcs() const { return xcs_; }
    int last_mask(int i) const { return masks_[i]; }

private:
    void send(int i);

    const Scenario& sc_;
    NodeRng plant_;
    std::vector<NodeRng> mask_rng_, noise_rng_, delay_rng_;
    std::vector<LocalFilterState> filters_;
    std::vector<DelayedLink> links_;
    std::vector<CseState> cse_;
    std::vector<std::optional<CompressedPacket>> delivered_;
    std::vector<Vec> xcs_;
    std::vector<int> masks_;
    Mat sqQw_;
    std::vector<Mat> sqQv_;
    Vec x_;
    long t_ = 0;
};

struct TraceRow {
    long t = 0;
    Vec x;
    Vec xhat;                 // DKFE (or SDKFE in steady mode)
    Mat P;                    // analytic fused covariance
    std::vector<double> trXi;
    std::vector<Vec> xc;
    std::vector<Mat> weights;
};

struct Trace {
    std::vector<TraceRow> rows;
    double seconds_per_tick = 0.0;
    long ridge_events = 0;
};

struct RunOptions {
    std::uint64_t seed = 1;
    std::uint64_t replica = 0;
    long horizon = -1;  // < 0: scenario horizon
    bool keep_rows = true;
};

// Algorithm 1: time-varying optimal weights from the covariance ledger.
Trace run_dkfe(const Scenario& sc, const RunOptions& opt);
// Algorithm 2: fixed steady weights, no ledger at runtime.
Trace run_sdkfe(const Scenario& sc, const SteadyWeights& steady, const RunOptions& opt);

void write_trace_csv(const std::string& path, const Trace& dkfe, const Trace* sdkfe, int nodes);

}  // namespace dkf
