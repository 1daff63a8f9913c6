#pragma once

#include "dkf/core.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <vector>

namespace dkf {

struct SelectionScheme {
    int node = 0;
    int n = 0;
    int r = 0;
    std::vector<std::vector<int>> index_sets;  // selected components per mask, ascending
    std::vector<Mat> masks;                    // diagonal 0/1 matrices H_l
    Vec probs;
    Mat Hbar;  // E{H(t)}
    Mat Lam;   // sum p h h^T
    Mat V;     // sum p h (1-h)^T
    Mat W;     // sum p (1-h)(1-h)^T
    Mat U;     // n x Delta incidence, diag(Hbar) = U * probs

    int delta() const { return static_cast<int>(masks.size()); }
};

long binomial(int n, int r);

// Index sets of all r-of-n subsets in lexicographic order.
std::vector<std::vector<int>> enumerate_index_sets(int n, int r);
std::vector<Mat> enumerate_masks(int n, int r);

// allow_full permits r == n (single identity mask); used only by degenerate-limit tests.
SelectionScheme build_scheme(int n, int r, const Vec& probs, int node = 0, bool allow_full = false);

// (U ⊙ B)_kl = u_k b_l for diagonal U, B.
Mat odot(const Mat& U, const Mat& B);
// Entrywise (Hadamard) product.
Mat hadamard(const Mat& G1, const Mat& G2);

// One seeded stream per node derived from the master seed.
class NodeRng {
public:
    NodeRng(std::uint64_t master_seed, int node, std::uint64_t replica = 0);
    double uniform();  // [0,1)
    double normal();
    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> nd_;
};

int sample_mask(const SelectionScheme& scheme, NodeRng& rng);

struct CompressedPacket {
    int node = 0;
    std::uint64_t t_sent = 0;
    std::uint32_t mask_index = 0;
    Vec values;  // r entries, ascending component order

    std::vector<std::uint8_t> serialize() const;
    static CompressedPacket deserialize(const std::uint8_t* data, std::size_t len);
};

CompressedPacket make_packet(const SelectionScheme& scheme, int mask_index, const Vec& xhat, std::uint64_t t);
// Expands a packet to H x (zeros at unselected components).
Vec expand_packet(const SelectionScheme& scheme, const CompressedPacket& p);

enum class DelayMode { Constant, Bounded };

class DelayedLink {
public:
    DelayedLink(int node, int delay, DelayMode mode = DelayMode::Constant);

    // Enqueues packet (raw_delay is informational in bounded mode and must be <= bound).
    // Returns the packet sent at now - d, if any.
    std::optional<CompressedPacket> send_and_deliver(const CompressedPacket& packet, long now, int raw_delay = -1);

    int delay() const { return d_; }
    DelayMode mode() const { return mode_; }
    int node() const { return node_; }
    std::size_t in_flight() const { return buf_.size(); }

private:
    int node_;
    int d_;
    DelayMode mode_;
    std::deque<CompressedPacket> buf_;
    long last_sent_ = -1;
};

}  // namespace dkf
