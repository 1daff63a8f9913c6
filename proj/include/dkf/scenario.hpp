#pragma once

#include "dkf/channel.hpp"
#include "dkf/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dkf {

// Probability sweep over a 2-mask node: probs = (gamma, 1 - gamma).
struct Sweep {
    int node = 0;
    std::vector<double> gammas;
};

struct Scenario {
    std::string name;
    SystemModel model;
    std::vector<SelectionScheme> schemes;
    std::vector<int> delays;  // d_i, or the bound d_i^u in bounded mode
    std::vector<DelayMode> modes;
    Vec x0;
    Mat P0;
    long horizon = 100;
    std::uint64_t seed = 1;
    long replicas = 1;
    bool emit_trace = true;
    bool emit_ledger = false;
    bool emit_steady = true;
    std::optional<Sweep> sweep;
    std::string source;  // file path, for messages

    int nodes() const { return model.nodes(); }
    long tau_all() const;  // lcm of all (d_i + 1)
};

// Loads a YAML scenario; ValidationError messages carry file:line context.
Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& text, const std::string& origin = "<string>");

// Bundled example scenarios (same text as the files under scenarios/).
std::string bundled_scenario_text(const std::string& name);
Scenario bundled_scenario(const std::string& name);

// Scenario with node probabilities replaced (same masks).
Scenario with_probs(const Scenario& sc, int node, const Vec& probs);

}  // namespace dkf
