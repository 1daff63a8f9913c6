#pragma once

#include "dkf/channel.hpp"
#include "dkf/local_filter.hpp"
#include "dkf/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace dkf {

// Error dynamics of one CSE stacked with the delayed local error:
// xi(t+1) = A(t) xi(t-d) + noise, A(t) = [A^d (I-H(t)) A, A^d H(t) Phi_K; 0, Phi_K^(d+1)].
struct AugmentedSystem {
    int node = 0;
    int d = 0;
    int n = 0;
    Mat A, Ad, Hbar, Lam, V, W;
    Mat PhiK, GK, K;
    std::vector<Mat> masks;
    Vec probs;
    Mat Abar;  // E{A(t)}

    Mat realization(int mask) const;  // A(t) for a given mask
};

AugmentedSystem make_augmented(const SystemModel& model, const SelectionScheme& scheme, int d);
// Variant with explicit steady filter matrices (tests, probability sweeps).
AugmentedSystem make_augmented(const Mat& A, const SelectionScheme& scheme, int d, const SteadyFilter& filt);

// f(B) = E{A(t)^T B A(t)} from the closed-form blocks.
Mat f_operator(const AugmentedSystem& sys, const Mat& B);
// Dual map X -> E{A(t) X A(t)^T}, by summation over masks.
Mat f_adjoint(const AugmentedSystem& sys, const Mat& X);

// Spectral radius of the delay-lifted second-moment operator.
double exact_ms_test(const AugmentedSystem& sys);
// rho(f) on the full (2n)^2 space.
double f_radius(const AugmentedSystem& sys);

enum class LmiVerdict { Feasible, Infeasible, Unknown };
std::string to_string(LmiVerdict v);

struct LmiOptions {
    bool warm_start = true;     // Stein-equation candidate before the search
    int restarts = 32;
    long iterations = 50000;    // shared by all restarts
    double feasible_below = -1e-6;
    std::uint64_t seed = 7;
};

struct LmiCertificate {
    int node = 0;
    Mat D, X, Y, Z, S;
    LmiVerdict verdict = LmiVerdict::Unknown;
    double margin = 0.0;       // -lambda_max(M) for the normalized certificate
    long iterations_used = 0;
    bool from_warm_start = false;

    bool feasible() const { return verdict == LmiVerdict::Feasible; }
};

struct CertificateCheck {
    double lambda_max_M = 0.0;
    double lambda_min_J = 0.0;
    double lambda_min_D = 0.0;
    double lambda_min_S = 0.0;
    bool valid(double floor = 1e-6) const {
        return lambda_max_M < -floor && lambda_min_J >= -1e-9 && lambda_min_D > 0.0 && lambda_min_S > 0.0;
    }
};

// M as printed, symmetrized.
Mat lmi_matrix(const AugmentedSystem& sys, const Mat& D, const Mat& X, const Mat& Y, const Mat& Z, const Mat& S);
CertificateCheck verify_certificate(const AugmentedSystem& sys, const LmiCertificate& c);
LmiCertificate lmi_feasibility(const AugmentedSystem& sys, const LmiOptions& opt = {});

// d = 0 condition with D only: f(D) - D < 0, D > 0.
struct A105Result {
    LmiVerdict verdict = LmiVerdict::Unknown;
    Mat D;
    double lambda_max = 0.0;  // of f(D) - D for the normalized D
};
A105Result lmi_a105(const AugmentedSystem& sys, const LmiOptions& opt = {});

struct A105B105 {
    bool a105 = false;
    bool b105 = false;
    double b105_lambda = 0.0;  // lambda_max(A^T (I - H) A)
    A105Result detail;
};
A105B105 check_a105_b105(const SystemModel& model, const SelectionScheme& scheme, const LmiOptions& opt = {});

struct NodeStability {
    int node = 0;
    int d = 0;
    LmiCertificate lmi;
    double exact_ms_radius = 0.0;
    bool has_a105_b105 = false;  // d = 0 only
    A105B105 ab;
    double rho106 = 0.0;  // rho(A^d (I - Hbar) A)
    bool cond106 = false;
};

struct StabilityReport {
    std::vector<NodeStability> nodes;
    bool overall_theorem3 = false;

    std::string text() const;
    void write_csv(std::ostream& os) const;
};

StabilityReport check_theorem3(const SystemModel& model, const std::vector<SelectionScheme>& schemes,
                               const std::vector<int>& delays, const LmiOptions& opt = {});

enum class ProbCriterion { C1, C2 };

struct ProbCandidate {
    int node = 0;
    Vec probs;
    double radius = 0.0;   // exact mean-square radius
    double rho106 = 0.0;
    double margin = 0.0;   // 1 - radius, and for C2 also min with 1 - rho106
    bool refined = false;  // produced by local refinement rather than the grid
};

struct SelectOptions {
    double grid_step = 0.1;
    int refine_top = 3;
    int refine_iterations = 200;
    LmiOptions lmi;
};

// Feasible probability vectors for one node, best margin first.
std::vector<ProbCandidate> select_probabilities(const SystemModel& model, const SelectionScheme& scheme, int d,
                                                ProbCriterion criterion, const SelectOptions& opt = {});

// All points of the probability simplex of dimension `delta` on a grid of the given step.
std::vector<Vec> simplex_grid(int delta, double step);

}  // namespace dkf
