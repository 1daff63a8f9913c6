#include "dkf/channel.hpp"

#include <fmt/format.h>

#include <bit>
#include <cmath>
#include <cstring>

namespace dkf {

long binomial(int n, int r) {
    if (r < 0 || r > n) return 0;
    long num = 1, den = 1;
    for (int l = 0; l < r; ++l) {
        num *= (n - l);
        den *= (l + 1);
    }
    return num / den;
}

std::vector<std::vector<int>> enumerate_index_sets(int n, int r) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(r);
    for (int k = 0; k < r; ++k) cur[k] = k;
    while (true) {
        out.push_back(cur);
        int k = r - 1;
        while (k >= 0 && cur[k] == n - r + k) --k;
        if (k < 0) break;
        ++cur[k];
        for (int m = k + 1; m < r; ++m) cur[m] = cur[m - 1] + 1;
    }
    return out;
}

std::vector<Mat> enumerate_masks(int n, int r) {
    require(r >= 1 && r < n, fmt::format("mask size r={} must satisfy 1 <= r < n={}", r, n));
    std::vector<Mat> out;
    for (const auto& set : enumerate_index_sets(n, r)) {
        Mat H = Mat::Zero(n, n);
        for (int k : set) H(k, k) = 1.0;
        out.push_back(H);
    }
    return out;
}

Mat odot(const Mat& U, const Mat& B) {
    require(U.rows() == U.cols() && B.rows() == B.cols(), "odot needs square diagonal inputs");
    require(U.isDiagonal(0.0) && B.isDiagonal(0.0), "odot needs diagonal inputs");
    return U.diagonal() * B.diagonal().transpose();
}

Mat hadamard(const Mat& G1, const Mat& G2) {
    require(G1.rows() == G2.rows() && G1.cols() == G2.cols(), "hadamard needs equal shapes");
    return G1.cwiseProduct(G2);
}

SelectionScheme build_scheme(int n, int r, const Vec& probs, int node, bool allow_full) {
    SelectionScheme s;
    s.node = node;
    s.n = n;
    s.r = r;
    if (allow_full && r == n) {
        s.index_sets = enumerate_index_sets(n, n);
        s.masks = {Mat::Identity(n, n)};
    } else {
        s.masks = enumerate_masks(n, r);
        s.index_sets = enumerate_index_sets(n, r);
    }
    require(probs.size() == s.delta(),
            fmt::format("node {}: {} probabilities given, {} masks expected", node + 1, probs.size(), s.delta()));
    require((probs.array() >= -1e-12).all(), fmt::format("node {}: negative selection probability", node + 1));
    require(std::abs(probs.sum() - 1.0) <= 1e-12, fmt::format("node {}: probabilities sum to {:.15g}", node + 1, probs.sum()));
    s.probs = probs.cwiseMax(0.0);

    const Mat I = Mat::Identity(n, n);
    s.Hbar = Mat::Zero(n, n);
    s.Lam = Mat::Zero(n, n);
    s.V = Mat::Zero(n, n);
    s.W = Mat::Zero(n, n);
    s.U = Mat::Zero(n, s.delta());
    for (int l = 0; l < s.delta(); ++l) {
        const Mat& H = s.masks[l];
        const double p = s.probs(l);
        s.Hbar += p * H;
        s.Lam += p * odot(H, H);
        s.V += p * odot(H, I - H);
        s.W += p * odot(I - H, I - H);
        s.U.col(l) = H.diagonal();
    }
    return s;
}

NodeRng::NodeRng(std::uint64_t master_seed, int node, std::uint64_t replica) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed & 0xffffffffu), static_cast<std::uint32_t>(master_seed >> 32),
                      static_cast<std::uint32_t>(node), static_cast<std::uint32_t>(replica & 0xffffffffu),
                      static_cast<std::uint32_t>(replica >> 32), 0x5eedu};
    eng_.seed(seq);
}

double NodeRng::uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

double NodeRng::normal() { return nd_(eng_); }

int sample_mask(const SelectionScheme& scheme, NodeRng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    int last_nonzero = 0;
    for (int l = 0; l < scheme.delta(); ++l) {
        if (scheme.probs(l) <= 0.0) continue;
        last_nonzero = l;
        acc += scheme.probs(l);
        if (u < acc) return l;
    }
    return last_nonzero;
}

namespace {
static_assert(std::endian::native == std::endian::little, "packet serialization assumes a little-endian host");

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.insert(out.end(), b, b + sizeof(T));
}

template <class T>
T get(const std::uint8_t*& p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
}
constexpr std::size_t kHeader = 2 + 8 + 4;
}  // namespace

std::vector<std::uint8_t> CompressedPacket::serialize() const {
    require(node >= 0 && node <= 0xffff, "node index does not fit in u16");
    std::vector<std::uint8_t> out;
    out.reserve(kHeader + 8 * values.size());
    put<std::uint16_t>(out, static_cast<std::uint16_t>(node));
    put<std::uint64_t>(out, t_sent);
    put<std::uint32_t>(out, mask_index);
    for (Eigen::Index k = 0; k < values.size(); ++k) put<double>(out, values(k));
    return out;
}

CompressedPacket CompressedPacket::deserialize(const std::uint8_t* data, std::size_t len) {
    require(len >= kHeader && (len - kHeader) % 8 == 0, "malformed packet record");
    CompressedPacket p;
    const std::uint8_t* cur = data;
    p.node = get<std::uint16_t>(cur);
    p.t_sent = get<std::uint64_t>(cur);
    p.mask_index = get<std::uint32_t>(cur);
    const std::size_t r = (len - kHeader) / 8;
    p.values.resize(static_cast<Eigen::Index>(r));
    for (std::size_t k = 0; k < r; ++k) p.values(static_cast<Eigen::Index>(k)) = get<double>(cur);
    return p;
}

CompressedPacket make_packet(const SelectionScheme& scheme, int mask_index, const Vec& xhat, std::uint64_t t) {
    require(mask_index >= 0 && mask_index < scheme.delta(), "mask index out of range");
    CompressedPacket p;
    p.node = scheme.node;
    p.t_sent = t;
    p.mask_index = static_cast<std::uint32_t>(mask_index);
    const auto& set = scheme.index_sets[mask_index];
    p.values.resize(static_cast<Eigen::Index>(set.size()));
    for (std::size_t k = 0; k < set.size(); ++k) p.values(static_cast<Eigen::Index>(k)) = xhat(set[k]);
    return p;
}

Vec expand_packet(const SelectionScheme& scheme, const CompressedPacket& p) {
    require(p.mask_index < static_cast<std::uint32_t>(scheme.delta()), "packet mask index out of range");
    const auto& set = scheme.index_sets[p.mask_index];
    require(static_cast<std::size_t>(p.values.size()) == set.size(), "packet payload size mismatch");
    Vec x = Vec::Zero(scheme.n);
    for (std::size_t k = 0; k < set.size(); ++k) x(set[k]) = p.values(static_cast<Eigen::Index>(k));
    return x;
}

DelayedLink::DelayedLink(int node, int delay, DelayMode mode) : node_(node), d_(delay), mode_(mode) {
    require(delay >= 0, "delay must be nonnegative");
}

std::optional<CompressedPacket> DelayedLink::send_and_deliver(const CompressedPacket& packet, long now, int raw_delay) {
    require(static_cast<long>(packet.t_sent) > last_sent_, "packets must be enqueued with increasing t_sent");
    require(static_cast<long>(packet.t_sent) == now, "packet must be sent at the current tick");
    if (mode_ == DelayMode::Bounded)
        require(raw_delay <= d_, fmt::format("raw delay {} exceeds bound {}", raw_delay, d_));
    last_sent_ = static_cast<long>(packet.t_sent);
    buf_.push_back(packet);
    // Bounded mode prolongs every packet to the bound, so both modes release at t_sent + d.
    if (!buf_.empty() && static_cast<long>(buf_.front().t_sent) + d_ == now) {
        CompressedPacket out = buf_.front();
        buf_.pop_front();
        return out;
    }
    return std::nullopt;
}

}  // namespace dkf
