#include "oracles.hpp"

using namespace dkf;
using dkf::test::max_abs;

namespace {
Vec ex2_probs(int node) {
    Vec p(6);
    if (node == 0)
        p << 0.3, 0.2, 0.1, 0.1, 0.1, 0.2;
    else
        p << 0.2, 0.1, 0.2, 0.1, 0.3, 0.1;
    return p;
}
}  // namespace

TEST_SUITE("channel") {
    TEST_CASE("masks are the lexicographic r-subsets") {
        CHECK(binomial(4, 2) == 6);
        CHECK(binomial(5, 0) == 1);
        CHECK(binomial(3, 4) == 0);
        auto sets = enumerate_index_sets(4, 2);
        REQUIRE(sets.size() == 6);
        CHECK(sets[0] == std::vector<int>{0, 1});
        CHECK(sets[2] == std::vector<int>{0, 3});
        CHECK(sets[5] == std::vector<int>{2, 3});
        auto masks = enumerate_masks(4, 2);
        for (const auto& H : masks) CHECK(H.trace() == doctest::Approx(2.0));
        CHECK_THROWS_AS(enumerate_masks(3, 3), ContractError);
        CHECK_THROWS_AS(enumerate_masks(3, 0), ContractError);
    }

    TEST_CASE("mean masks of the four-state example") {
        const SelectionScheme s1 = build_scheme(4, 2, ex2_probs(0), 0);
        const SelectionScheme s2 = build_scheme(4, 2, ex2_probs(1), 1);
        Vec h1(4), h2(4);
        h1 << 0.6, 0.5, 0.5, 0.4;
        h2 << 0.5, 0.6, 0.3, 0.6;
        CHECK((s1.Hbar.diagonal() - h1).cwiseAbs().maxCoeff() < 1e-15);
        CHECK((s2.Hbar.diagonal() - h2).cwiseAbs().maxCoeff() < 1e-15);
        CHECK((s1.U * s1.probs - h1).cwiseAbs().maxCoeff() < 1e-15);
    }

    TEST_CASE("second moments partition the ones matrix") {
        for (int node = 0; node < 2; ++node) {
            const SelectionScheme s = build_scheme(4, 2, ex2_probs(node), node);
            CHECK(max_abs(s.Lam + s.V + s.V.transpose() + s.W - Mat::Ones(4, 4)) < 1e-14);
            // Diagonal of Lam is Hbar; diagonal of V is zero.
            CHECK((s.Lam.diagonal() - s.Hbar.diagonal()).norm() < 1e-15);
            CHECK(s.V.diagonal().norm() < 1e-15);
            // E{H G H} = Lam ⊗ G.
            Mat G = Mat::Random(4, 4);
            Mat direct = Mat::Zero(4, 4);
            for (int l = 0; l < s.delta(); ++l) direct += s.probs(l) * s.masks[l] * G * s.masks[l];
            CHECK(max_abs(direct - hadamard(s.Lam, G)) < 1e-14);
        }
    }

    TEST_CASE("two-mask scheme moments") {
        Vec p(2);
        p << 0.5, 0.5;
        const SelectionScheme s = build_scheme(2, 1, p);
        Mat Lam(2, 2), V(2, 2);
        Lam << 0.5, 0, 0, 0.5;
        V << 0, 0.5, 0.5, 0;
        CHECK(max_abs(s.Lam - Lam) < 1e-15);
        CHECK(max_abs(s.V - V) < 1e-15);
        CHECK(max_abs(s.W - Lam) < 1e-15);
    }

    TEST_CASE("scheme contracts") {
        Vec bad(6);
        bad << 0.3, 0.2, 0.1, 0.1, 0.1, 0.3;
        CHECK_THROWS_AS(build_scheme(4, 2, bad), ContractError);
        CHECK_THROWS_AS(build_scheme(4, 2, Vec::Constant(5, 0.2)), ContractError);
        Vec neg(2);
        neg << 1.5, -0.5;
        CHECK_THROWS_AS(build_scheme(2, 1, neg), ContractError);
        CHECK(build_scheme(3, 3, Vec::Ones(1), 0, true).delta() == 1);
    }

    TEST_CASE("sampled mask frequencies follow the probabilities") {
        const SelectionScheme s = build_scheme(4, 2, ex2_probs(0), 0);
        NodeRng rng(42, 0);
        const int N = 200000;
        std::vector<int> count(6, 0);
        for (int k = 0; k < N; ++k) ++count[sample_mask(s, rng)];
        for (int l = 0; l < 6; ++l) {
            const double p = s.probs(l);
            const double se = std::sqrt(p * (1 - p) / N);
            CHECK(std::abs(count[l] / double(N) - p) < 4 * se);
        }
    }

    TEST_CASE("zero-probability masks are never drawn") {
        Vec p(3);
        p << 0.0, 1.0, 0.0;
        const SelectionScheme s = build_scheme(3, 1, p);
        NodeRng rng(5, 0);
        for (int k = 0; k < 1000; ++k) CHECK(sample_mask(s, rng) == 1);
    }

    TEST_CASE("node streams are independent") {
        const SelectionScheme s1 = build_scheme(4, 2, ex2_probs(0), 0);
        const SelectionScheme s2 = build_scheme(4, 2, ex2_probs(1), 1);
        NodeRng r1(9, 0), r2(9, 1);
        const int N = 100000;
        Mat tab = Mat::Zero(6, 6);
        for (int k = 0; k < N; ++k) tab(sample_mask(s1, r1), sample_mask(s2, r2)) += 1.0;
        double chi2 = 0.0;
        for (int a = 0; a < 6; ++a)
            for (int b = 0; b < 6; ++b) {
                const double e = tab.row(a).sum() * tab.col(b).sum() / N;
                chi2 += (tab(a, b) - e) * (tab(a, b) - e) / e;
            }
        CHECK(chi2 < 52.62);  // chi-square, 25 dof, 0.999 quantile
    }

    TEST_CASE("streams are reproducible and replica-distinct") {
        NodeRng a(3, 1, 4), b(3, 1, 4), c(3, 1, 5), d(3, 2, 4);
        const double ua = a.uniform();
        CHECK(ua == b.uniform());
        CHECK(ua != c.uniform());
        CHECK(ua != d.uniform());
    }

    TEST_CASE("packet round trip") {
        const SelectionScheme s = build_scheme(4, 2, ex2_probs(1), 1);
        Vec x(4);
        x << 1.5, -2.25, 3.125, 1e-300;
        CompressedPacket p = make_packet(s, 4, x, 77);  // components {2,4}
        CHECK(p.values.size() == 2);
        auto bytes = p.serialize();
        CHECK(bytes.size() == 14 + 16);
        CompressedPacket q = CompressedPacket::deserialize(bytes.data(), bytes.size());
        CHECK(q.node == 1);
        CHECK(q.t_sent == 77);
        CHECK(q.mask_index == 4);
        CHECK(q.values == p.values);
        Vec e = expand_packet(s, q);
        CHECK(e == s.masks[4] * x);
        CHECK_THROWS_AS(CompressedPacket::deserialize(bytes.data(), bytes.size() - 3), ContractError);
        CHECK_THROWS_AS(make_packet(s, 6, x, 0), ContractError);
    }

    TEST_CASE("constant delay releases packets after d ticks") {
        const SelectionScheme s = build_scheme(2, 1, test::vec2(0.5, 0.5));
        for (int d : {0, 1, 3}) {
            DelayedLink link(0, d);
            for (long t = 0; t < 10; ++t) {
                auto out = link.send_and_deliver(make_packet(s, 0, Vec::Constant(2, double(t)), t), t);
                if (t < d) {
                    CHECK_FALSE(out.has_value());
                } else {
                    REQUIRE(out.has_value());
                    CHECK(static_cast<long>(out->t_sent) == t - d);
                    CHECK(out->values(0) == double(t - d));
                }
            }
            CHECK(link.in_flight() == static_cast<std::size_t>(d));
        }
        CHECK_THROWS_AS(DelayedLink(0, -1), ContractError);
    }

    TEST_CASE("bounded delay holds packets until the bound") {
        const SelectionScheme s = build_scheme(2, 1, test::vec2(0.5, 0.5));
        DelayedLink link(0, 2, DelayMode::Bounded);
        for (long t = 0; t < 6; ++t) {
            auto out = link.send_and_deliver(make_packet(s, 1, Vec::Zero(2), t), t, static_cast<int>(t % 3));
            CHECK(out.has_value() == (t >= 2));
        }
        CHECK_THROWS_AS(link.send_and_deliver(make_packet(s, 1, Vec::Zero(2), 6), 6, 3), ContractError);
        CHECK_THROWS_AS(link.send_and_deliver(make_packet(s, 1, Vec::Zero(2), 5), 7, 0), ContractError);
    }
}
