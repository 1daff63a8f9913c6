#include "oracles.hpp"

using namespace dkf;
using dkf::test::max_abs;

TEST_SUITE("local_filter") {
    TEST_CASE("recursive estimate equals batch conditioning") {
        const Scenario sc = test::toy({0, 0}, {test::vec2(0.5, 0.5), test::vec2(0.3, 0.7)});
        const SystemModel& m = sc.model;
        Vec x0(2);
        x0 << 0.4, -1.0;
        std::mt19937_64 rng(11);
        std::normal_distribution<double> nd;
        for (int node = 0; node < 2; ++node) {
            LocalFilterState f = initial_filter(m, node, x0, sc.P0);
            std::vector<Vec> ys;
            Vec x = x0;
            for (int t = 1; t <= 12; ++t) {
                Vec w(2);
                w << nd(rng), nd(rng);
                x = m.A * x + psd_sqrt(m.Qw) * w;
                Vec y = m.sensors[node].C * x + Vec::Constant(1, nd(rng) * std::sqrt(m.sensors[node].Qv(0, 0)));
                ys.push_back(y);
                f = kalman_step(f, y, m);
                CHECK((f.xhat - test::batch_estimate(m, node, x0, sc.P0, ys)).cwiseAbs().maxCoeff() < 1e-10);
            }
        }
    }

    TEST_CASE("error covariance matches the noise expansion") {
        const Scenario sc = test::toy({0, 0}, {test::vec2(0.5, 0.5), test::vec2(0.3, 0.7)});
        test::NoiseExpansion ox(sc, 6);
        std::vector<LocalFilterState> f{initial_filter(sc.model, 0, sc.x0, sc.P0),
                                        initial_filter(sc.model, 1, sc.x0, sc.P0)};
        CrossCovariance c{0, 1, sc.P0, 0};
        for (long t = 1; t <= 6; ++t) {
            f[0] = kalman_predict_gain(f[0], sc.model);
            f[1] = kalman_predict_gain(f[1], sc.model);
            c = cross_covariance_step(c, f[0], f[1], sc.model);
            CHECK(max_abs(f[0].Pii - ox.cov(ox.loc(0, t), ox.loc(0, t))) < 1e-10);
            CHECK(max_abs(c.Pij - ox.cov(ox.loc(0, t), ox.loc(1, t))) < 1e-10);
            CHECK(max_abs(f[0].PhiK - f[0].GK * sc.model.A) < 1e-14);
        }
    }

    TEST_CASE("perfect measurement drives the estimate onto the state") {
        SystemModel m;
        m.A = Mat(2, 2);
        m.A << 0.9, 0.2, 0.0, 0.8;
        m.Qw = Mat::Identity(2, 2);
        m.sensors.push_back({Mat::Identity(2, 2), 1e-12 * Mat::Identity(2, 2), 0});
        LocalFilterState f = initial_filter(m, 0, Vec::Zero(2), Mat::Identity(2, 2));
        Vec y(2);
        y << 3.0, -2.0;
        f = kalman_step(f, y, m);
        CHECK((f.xhat - y).norm() < 1e-9);
        CHECK(f.Pii.norm() < 1e-9);
    }

    TEST_CASE("steady state is independent of the initial covariance") {
        const Scenario sc = bundled_scenario("example2");
        for (int i = 0; i < 2; ++i) {
            SteadyFilter a = steady_state(sc.model, i, 1e-12);
            SteadyFilter b = steady_state(sc.model, i, 1e-12, 100000, 100.0 * Mat::Identity(4, 4));
            CHECK(max_abs(a.Pii - b.Pii) < 1e-9);
            CHECK(max_abs(a.PhiK - b.PhiK) < 1e-9);
            CHECK(spectral_radius(a.PhiK) < 1.0);
            // Fixed point of the Riccati map.
            const Mat Ps = sc.model.A * a.Pii * sc.model.A.transpose() + sc.model.Qw;
            CHECK(max_abs(a.GK * Ps - a.Pii) < 1e-9);
        }
    }

    TEST_CASE("unobservable sensor does not converge") {
        SystemModel m;
        m.A = Mat(2, 2);
        m.A << 1.25, 0, 1, 1.1;
        m.Qw = 20.0 * Mat::Identity(2, 2);
        Mat C(1, 2);
        C << 1, 0;
        m.sensors.push_back({C, Mat::Constant(1, 1, 2.5), 0});
        CHECK_THROWS_AS(steady_state(m, 0, 1e-10, 2000), DivergenceError);
    }

    TEST_CASE("cross covariance symmetry and contracts") {
        const Scenario sc = test::toy({0, 0}, {test::vec2(0.5, 0.5), test::vec2(0.3, 0.7)});
        auto f0 = kalman_predict_gain(initial_filter(sc.model, 0, sc.x0, sc.P0), sc.model);
        auto f1 = kalman_predict_gain(initial_filter(sc.model, 1, sc.x0, sc.P0), sc.model);
        CrossCovariance c01 = cross_covariance_step({0, 1, sc.P0, 0}, f0, f1, sc.model);
        CrossCovariance c10 = cross_covariance_step({1, 0, sc.P0, 0}, f1, f0, sc.model);
        CHECK(max_abs(c01.Pij - c10.Pij.transpose()) < 1e-14);
        CHECK_THROWS_AS(cross_covariance_step({0, 0, sc.P0, 0}, f0, f0, sc.model), ContractError);
        CHECK_THROWS_AS(cross_covariance_step({0, 1, sc.P0, 1}, f0, f1, sc.model), ContractError);
        CHECK_THROWS_AS(kalman_step(f0, Vec::Zero(2), sc.model), ContractError);
    }
}
