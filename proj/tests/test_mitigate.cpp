#include <doctest.h>

#include <cmath>
#include <random>

#include "fairtune/mitigate.hpp"

using namespace fairtune;
using namespace fairtune::mitigate;

TEST_SUITE("mitigate") {

TEST_CASE("method names parse both ways") {
    for (auto k : {MitigationKind::Unbalanced, MitigationKind::IF, MitigationKind::GroupDRO, MitigationKind::ADV}) {
        CHECK(parse_kind(kind_name(k)) == k);
        CHECK(parse_kind(kind_label(k)) == k);
    }
    CHECK_THROWS_AS(parse_kind("boost"), Error);
    MitigationConfig c;
    c.kind = MitigationKind::GroupDRO;
    c.eta = 2.5;
    const auto back = mitigation_from_json(to_json(c));
    CHECK(back.kind == MitigationKind::GroupDRO);
    CHECK(back.eta == 2.5);
}

TEST_CASE("inverse-frequency weights equalize expected group mass") {
    const GroupCounts counts{750, 250};
    const auto w = if_weights(counts);
    CHECK(w[0] == doctest::Approx(1.0 / 1.5));
    CHECK(w[1] == doctest::Approx(2.0));
    CHECK(w[0] * 750 == doctest::Approx(w[1] * 250));
    CHECK_THROWS_AS(if_weights(GroupCounts{10, 0}), Error);
}

TEST_CASE("weighted sampler empirical frequencies match the weights") {
    std::vector<Gender> g(1000, Gender::Female);
    for (int i = 0; i < 200; ++i) g[i] = Gender::Male;
    const auto w = per_sample_weights(g, if_weights(count_groups(g)));
    const auto draws = weighted_sampler(w, 200000, 3);
    std::size_t male = 0;
    for (auto i : draws) male += g[i] == Gender::Male;
    CHECK(static_cast<double>(male) / draws.size() == doctest::Approx(0.5).epsilon(0.01));
    CHECK(weighted_sampler(w, 50, 3) == weighted_sampler(w, 50, 3));
    CHECK_THROWS_AS(weighted_sampler(std::vector<double>{1.0, 0.0}, 5, 1), Error);
}

TEST_CASE("GroupDRO normalization, weights and degenerate case") {
    const std::vector<double> loss{0.2, 0.5, 0.35};
    const std::vector<std::size_t> sizes{10, 20, 40};
    const auto w = dro_weights(loss, sizes, 2.0);
    CHECK(w.normalized_loss[0] == 0.0);
    CHECK(w.normalized_loss[1] == 1.0);
    CHECK(w.normalized_loss[2] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(w.group_weight[1] == doctest::Approx(3.0));
    CHECK(w.group_weight[2] == doctest::Approx(2.0));
    CHECK(w.sample_weight[2] == doctest::Approx(2.0 / 40));
    const auto flat = dro_weights(std::vector<double>{0.4, 0.4}, std::vector<std::size_t>{3, 5}, 1.0);
    CHECK(flat.normalized_loss == std::vector<double>{0.0, 0.0});
    CHECK(flat.group_weight == std::vector<double>{1.0, 1.0});
}

TEST_CASE("GroupDRO running losses use an exponential moving average") {
    auto st = make_group_state(GroupCounts{30, 10});
    dro_update(st, GroupValues{0.5, 0.3}, 1.0, 0.9);
    CHECK(st.running_loss[0] == 0.5);
    CHECK(st.group_weight[0] == doctest::Approx(2.0));
    CHECK(st.group_weight[1] == doctest::Approx(1.0));
    dro_update(st, GroupValues{0.1, 0.9}, 1.0, 0.9);
    CHECK(st.running_loss[0] == doctest::Approx(0.46));
    CHECK(st.running_loss[1] == doctest::Approx(0.36));
    CHECK(st.sample_weight[0] == doctest::Approx(2.0 / 30));
    dro_update(st, GroupValues{std::nan(""), 1.0}, 1.0, 0.9);
    CHECK(st.running_loss[0] == doctest::Approx(0.46));
}

TEST_CASE("entropy closed forms") {
    Mat uniform(3, 2);
    uniform.setConstant(0.5);
    CHECK(adversary_entropy(uniform) == doctest::Approx(std::log(2.0)));
    Mat onehot(2, 2);
    onehot << 1, 0, 0, 1;
    CHECK(adversary_entropy(onehot) == doctest::Approx(0.0));
}

TEST_CASE("entropy gradient matches finite differences") {
    const auto adv = make_adversary(6, AdversaryConfig{}, 4);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> N(0.0, 1.0);
    Mat z(5, 6);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = N(rng);
    const auto g = adversary_entropy_grad(adv, z);
    CHECK(g.entropy == doctest::Approx(adversary_entropy(adversary_forward(adv, z).probs)));
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        Mat up = z, dn = z;
        up.data()[i] += h;
        dn.data()[i] -= h;
        const double fd = (adversary_entropy(adversary_forward(adv, up).probs) -
                           adversary_entropy(adversary_forward(adv, dn).probs)) / (2 * h);
        CHECK(g.d_features.data()[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
    }
}

TEST_CASE("adversary learns a linearly separable gender signal") {
    auto adv = make_adversary(4, AdversaryConfig{16, 1e-2, 1}, 9);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> N(0.0, 1.0);
    Mat z(64, 4);
    std::vector<Gender> y(64);
    for (int i = 0; i < 64; ++i) {
        y[i] = i % 2 ? Gender::Male : Gender::Female;
        for (int j = 0; j < 4; ++j) z(i, j) = N(rng) * 0.3 + (j == 0 ? (i % 2 ? 1.0 : -1.0) : 0.0);
    }
    const double before = adversary_loss(adv, z, y);
    for (int s = 0; s < 300; ++s) adversary_train_step(adv, z, y);
    CHECK(adversary_loss(adv, z, y) < 0.5 * before);
    CHECK(adversary_accuracy(adv, z, y) > 0.9);
}

}  // TEST_SUITE
