#include <doctest.h>

#include <sstream>

#include "fairtune/train.hpp"

using namespace fairtune;
using namespace fairtune::nnet;

namespace {

const std::vector<synthpg::PpgRecord>& corpus() {
    static const auto recs = synthpg::generate_records(synthpg::preset_profile("dalia"), 20, 5, 3);
    return recs;
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("log has one row per optimizer step") {
    auto net = init_net(NetConfig::for_size(SizeClass::XS), 1);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 16;
    const auto r = train(net, corpus(), mitigate::MitigationConfig{}, tc);
    CHECK(r.steps_per_epoch == 7);  // ceil(100 / 16)
    CHECK(r.log.size() == 21);
    CHECK(count_lines(train_log_csv(r)) == 22);
    CHECK(train_log_csv(r).rfind("epoch,step,lr,loss_total,loss_l1,loss_ll,loss_group_F,loss_group_M\n", 0) == 0);
    CHECK(r.epochs.size() == 3);
}

TEST_CASE("zero epochs leaves the initialization untouched") {
    const auto init = init_net(NetConfig::for_size(SizeClass::XS), 5);
    auto net = init;
    TrainConfig tc;
    tc.epochs = 0;
    const auto r = train(net, corpus(), mitigate::MitigationConfig{}, tc);
    CHECK(r.log.empty());
    CHECK(bitwise_equal(net.params, init.params));
}

TEST_CASE("training is deterministic for every method") {
    for (auto k : {mitigate::MitigationKind::Unbalanced, mitigate::MitigationKind::IF,
                   mitigate::MitigationKind::GroupDRO, mitigate::MitigationKind::ADV}) {
        mitigate::MitigationConfig mc;
        mc.kind = k;
        TrainConfig tc;
        tc.epochs = 2;
        tc.seed = 4;
        auto a = init_net(NetConfig::for_size(SizeClass::XS), 2);
        auto b = a;
        train(a, corpus(), mc, tc);
        train(b, corpus(), mc, tc);
        CHECK(bitwise_equal(a.params, b.params));
    }
}

TEST_CASE("adversarial training with lambda = 0 reproduces unbalanced training") {
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 6;
    auto a = init_net(NetConfig::for_size(SizeClass::XS), 3);
    auto b = a;
    train(a, corpus(), mitigate::MitigationConfig{}, tc);
    mitigate::MitigationConfig adv;
    adv.kind = mitigate::MitigationKind::ADV;
    adv.lambda = 0.0;
    train(b, corpus(), adv, tc);
    CHECK(bitwise_equal(a.params, b.params));
}

TEST_CASE("training reduces the loss") {
    auto net = init_net(NetConfig::for_size(SizeClass::XS), 7);
    TrainConfig tc;
    tc.epochs = 15;
    const auto r = train(net, corpus(), mitigate::MitigationConfig{}, tc);
    CHECK(r.epochs.back().mae_bpm < r.epochs.front().mae_bpm);
}

TEST_CASE("divergence raises a numerical error") {
    auto net = init_net(NetConfig::for_size(SizeClass::XS), 1);
    TrainConfig tc;
    tc.epochs = 2;
    tc.schedule.lr_start = tc.schedule.lr_peak = tc.schedule.lr_end = 1e305;
    try {
        train(net, corpus(), mitigate::MitigationConfig{}, tc);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Numerical);
    }
}

TEST_CASE("group-aware methods need both genders") {
    std::vector<synthpg::PpgRecord> women;
    for (const auto& r : corpus())
        if (r.gender == Gender::Female) women.push_back(r);
    auto net = init_net(NetConfig::for_size(SizeClass::XS), 1);
    mitigate::MitigationConfig mc;
    mc.kind = mitigate::MitigationKind::IF;
    CHECK_THROWS_AS(train(net, women, mc, TrainConfig{}), Error);
    mc.kind = mitigate::MitigationKind::Unbalanced;
    TrainConfig tc;
    tc.epochs = 1;
    CHECK_NOTHROW(train(net, women, mc, tc));
    tc.epochs = 51;
    CHECK_THROWS_AS(train(net, women, mc, tc), Error);
}

}  // TEST_SUITE
