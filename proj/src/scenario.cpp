#include "dkf/scenario.hpp"

#include "bundled_scenarios.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <sstream>

namespace dkf {

long Scenario::tau_all() const {
    long t = 1;
    for (int d : delays) t = lcm(t, d + 1);
    return t;
}

namespace {

class Parser {
public:
    explicit Parser(std::string origin) : origin_(std::move(origin)) {}

    [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
        const auto m = at.Mark();
        if (m.is_null()) throw ValidationError(fmt::format("{}: {}", origin_, msg));
        throw ValidationError(fmt::format("{}:{}: {}", origin_, m.line + 1, msg));
    }

    YAML::Node need(const YAML::Node& parent, const std::string& key) const {
        YAML::Node n = parent[key];
        if (!n) fail(parent, fmt::format("missing key '{}'", key));
        return n;
    }

    double scalar(const YAML::Node& n, const std::string& what) const {
        if (!n.IsScalar()) fail(n, fmt::format("{}: expected a number", what));
        try {
            return n.as<double>();
        } catch (const YAML::Exception&) {
            fail(n, fmt::format("{}: '{}' is not a number", what, n.Scalar()));
        }
    }

    long integer(const YAML::Node& n, const std::string& what) const {
        if (!n.IsScalar()) fail(n, fmt::format("{}: expected an integer", what));
        try {
            return n.as<long>();
        } catch (const YAML::Exception&) {
            fail(n, fmt::format("{}: '{}' is not an integer", what, n.Scalar()));
        }
    }

    bool boolean(const YAML::Node& n, const std::string& what) const {
        try {
            return n.as<bool>();
        } catch (const YAML::Exception&) {
            fail(n, fmt::format("{}: expected true/false", what));
        }
    }

    Vec vector(const YAML::Node& n, const std::string& what) const {
        if (!n.IsSequence()) fail(n, fmt::format("{}: expected a list", what));
        Vec v(n.size());
        for (std::size_t k = 0; k < n.size(); ++k) v(k) = scalar(n[k], what);
        return v;
    }

    Mat matrix(const YAML::Node& n, const std::string& what) const {
        if (!n.IsSequence() || n.size() == 0) fail(n, fmt::format("{}: expected a list of rows", what));
        const std::size_t rows = n.size();
        if (!n[0].IsSequence()) fail(n, fmt::format("{}: rows must be lists", what));
        const std::size_t cols = n[0].size();
        Mat m(rows, cols);
        for (std::size_t r = 0; r < rows; ++r) {
            if (!n[r].IsSequence() || n[r].size() != cols)
                fail(n[r], fmt::format("{}: row {} has {} entries, expected {}", what, r + 1,
                                       n[r].IsSequence() ? n[r].size() : 0, cols));
            for (std::size_t c = 0; c < cols; ++c) m(r, c) = scalar(n[r][c], what);
        }
        return m;
    }

    // Square matrix, or "identity", or a scalar multiple of identity.
    Mat square(const YAML::Node& n, int dim, const std::string& what) const {
        if (n.IsScalar()) {
            if (n.Scalar() == "identity") return Mat::Identity(dim, dim);
            return scalar(n, what) * Mat::Identity(dim, dim);
        }
        Mat m = matrix(n, what);
        if (m.rows() != dim || m.cols() != dim) fail(n, fmt::format("{}: expected {}x{}", what, dim, dim));
        return m;
    }

    Scenario parse(const std::string& text) const {
        YAML::Node root;
        try {
            root = YAML::Load(text);
        } catch (const YAML::ParserException& e) {
            throw ValidationError(fmt::format("{}:{}: {}", origin_, e.mark.line + 1, e.msg));
        }
        if (!root.IsMap()) throw ValidationError(fmt::format("{}: scenario must be a mapping", origin_));

        Scenario sc;
        sc.source = origin_;
        sc.name = root["name"] ? root["name"].as<std::string>() : std::string("scenario");
        sc.model.A = matrix(need(root, "A"), "A");
        const int n = static_cast<int>(sc.model.A.rows());
        if (sc.model.A.cols() != n) fail(root["A"], "A must be square");
        sc.model.Qw = square(need(root, "Qw"), n, "Qw");

        YAML::Node nodes = need(root, "nodes");
        if (!nodes.IsSequence() || nodes.size() == 0) fail(nodes, "nodes: expected a non-empty list");
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            const YAML::Node nd = nodes[k];
            const std::string tag = fmt::format("node {}", k + 1);
            SensorModel s;
            s.id = static_cast<int>(k);
            s.C = matrix(need(nd, "C"), tag + " C");
            if (s.C.cols() != n) fail(nd["C"], fmt::format("{} C: expected {} columns", tag, n));
            s.Qv = square(need(nd, "Qv"), static_cast<int>(s.C.rows()), tag + " Qv");
            sc.model.sensors.push_back(s);

            const long r = integer(need(nd, "r"), tag + " r");
            if (r < 1 || r > n) fail(nd["r"], fmt::format("{} r: must be in [1, {}]", tag, n));
            Vec probs;
            if (nd["probs"]) {
                probs = vector(nd["probs"], tag + " probs");
            } else {
                const long cnt = binomial(n, static_cast<int>(r));
                probs = Vec::Constant(cnt, 1.0 / static_cast<double>(cnt));
            }
            try {
                sc.schemes.push_back(build_scheme(n, static_cast<int>(r), probs, static_cast<int>(k), r == n));
            } catch (const ContractError& e) {
                fail(nd["probs"] ? nd["probs"] : nd, fmt::format("{}: {}", tag, e.what()));
            }
            const long d = nd["delay"] ? integer(nd["delay"], tag + " delay") : 0;
            if (d < 0) fail(nd["delay"], fmt::format("{} delay: must be >= 0", tag));
            sc.delays.push_back(static_cast<int>(d));
            DelayMode mode = DelayMode::Constant;
            if (nd["delay_mode"]) {
                const std::string m = nd["delay_mode"].as<std::string>();
                if (m == "bounded")
                    mode = DelayMode::Bounded;
                else if (m != "constant")
                    fail(nd["delay_mode"], fmt::format("{} delay_mode: '{}' (expected constant|bounded)", tag, m));
            }
            sc.modes.push_back(mode);
        }

        sc.x0 = Vec::Zero(n);
        sc.P0 = Mat::Identity(n, n);
        if (YAML::Node init = root["initial"]) {
            if (init["x0"]) {
                sc.x0 = vector(init["x0"], "initial x0");
                if (sc.x0.size() != n) fail(init["x0"], fmt::format("initial x0: expected {} entries", n));
            }
            if (init["P0"]) sc.P0 = square(init["P0"], n, "initial P0");
        }
        if (root["horizon"]) {
            sc.horizon = integer(root["horizon"], "horizon");
            if (sc.horizon < 1) fail(root["horizon"], "horizon: must be >= 1");
        }
        if (root["seed"]) sc.seed = static_cast<std::uint64_t>(integer(root["seed"], "seed"));
        if (root["replicas"]) {
            sc.replicas = integer(root["replicas"], "replicas");
            if (sc.replicas < 1) fail(root["replicas"], "replicas: must be >= 1");
        }
        if (YAML::Node out = root["outputs"]) {
            if (out["trace"]) sc.emit_trace = boolean(out["trace"], "outputs trace");
            if (out["ledger"]) sc.emit_ledger = boolean(out["ledger"], "outputs ledger");
            if (out["steady"]) sc.emit_steady = boolean(out["steady"], "outputs steady");
        }
        if (YAML::Node sw = root["sweep"]) {
            Sweep s;
            s.node = static_cast<int>(integer(need(sw, "node"), "sweep node")) - 1;
            if (s.node < 0 || s.node >= sc.nodes()) fail(sw["node"], "sweep node: out of range");
            if (sc.schemes[s.node].delta() != 2) fail(sw, "sweep: node must have exactly two masks");
            Vec g = vector(need(sw, "gammas"), "sweep gammas");
            for (Eigen::Index k = 0; k < g.size(); ++k) {
                if (g(k) < 0.0 || g(k) > 1.0) fail(sw["gammas"], "sweep gammas: must lie in [0, 1]");
                s.gammas.push_back(g(k));
            }
            sc.sweep = s;
        }

        ValidationReport rep = validate_model(sc.model);
        if (!rep.ok()) throw ValidationError(fmt::format("{}: {}", origin_, rep.summary()));
        if (lambda_min_sym(sc.P0) < 0.0 || norm2(sc.P0 - sc.P0.transpose()) > 1e-12)
            throw ValidationError(fmt::format("{}: initial P0 must be symmetric positive semidefinite", origin_));
        if (sc.emit_steady) {
            long tmax = 1;
            for (int i = 0; i < sc.nodes(); ++i)
                for (int j = 0; j < sc.nodes(); ++j) tmax = std::max(tmax, lcm(sc.delays[i] + 1, sc.delays[j] + 1));
            if (sc.horizon < tmax + 2)
                fail(root["horizon"] ? root["horizon"] : root,
                     fmt::format("horizon {} shorter than max tau + 2 = {}", sc.horizon, tmax + 2));
        }
        return sc;
    }

private:
    std::string origin_;
};

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& origin) { return Parser(origin).parse(text); }

Scenario load_scenario(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError(fmt::format("cannot open scenario file {}", path));
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_scenario(ss.str(), path);
}

std::string bundled_scenario_text(const std::string& name) {
    if (name == "example1") return bundled::kExample1;
    if (name == "example2") return bundled::kExample2;
    throw ValidationError(fmt::format("unknown bundled scenario '{}'", name));
}

Scenario bundled_scenario(const std::string& name) {
    return parse_scenario(bundled_scenario_text(name), name + ".scenario");
}

Scenario with_probs(const Scenario& sc, int node, const Vec& probs) {
    require(node >= 0 && node < sc.nodes(), "node out of range");
    Scenario o = sc;
    const SelectionScheme& s = sc.schemes[node];
    o.schemes[node] = build_scheme(s.n, s.r, probs, node, s.r == s.n);
    return o;
}

}  // namespace dkf
