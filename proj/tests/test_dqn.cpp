#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "semlink/dqn.hpp"

using namespace semlink;
using sim::Action;

namespace {

dqn::Transition make_transition(float tag) {
    dqn::Transition t;
    t.s = {tag, 0, 0, 0, 0};
    t.s_next = {tag + 0.5f, 0, 0, 0, 0};
    t.action = static_cast<int>(tag) % 2;
    t.reward = tag;
    return t;
}

} // namespace

TEST_CASE("replay buffer: FIFO eviction at capacity") {
    dqn::ReplayBuffer buf(3);
    for (int i = 0; i < 4; ++i) buf.push(make_transition(static_cast<float>(i)));
    CHECK(buf.size() == 3);
    CHECK(buf.capacity() == 3);
    // transition 0 was evicted; oldest is now 1
    CHECK(buf.at(0).reward == 1.0f);
    CHECK(buf.at(1).reward == 2.0f);
    CHECK(buf.at(2).reward == 3.0f);
}

TEST_CASE("replay buffer: full-size sample is a permutation") {
    dqn::ReplayBuffer buf(8);
    for (int i = 0; i < 8; ++i) buf.push(make_transition(static_cast<float>(i)));
    Rng rng(3);
    auto batch = buf.sample(8, rng);
    REQUIRE(batch.size() == 8);
    std::vector<float> rewards;
    for (const auto& t : batch) rewards.push_back(t.reward);
    std::sort(rewards.begin(), rewards.end());
    for (int i = 0; i < 8; ++i) CHECK(rewards[i] == static_cast<float>(i));

    CHECK_THROWS_AS(buf.sample(9, rng), ContractError);
}

TEST_CASE("replay buffer: sampling is roughly uniform") {
    dqn::ReplayBuffer buf(10);
    for (int i = 0; i < 10; ++i) buf.push(make_transition(static_cast<float>(i)));
    Rng rng(11);
    std::map<int, int> counts;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        for (const auto& t : buf.sample(3, rng)) counts[static_cast<int>(t.reward)]++;
    }
    // each item should appear ~3000 times out of 30000 draws
    for (int i = 0; i < 10; ++i) {
        CHECK(counts[i] > 2700);
        CHECK(counts[i] < 3300);
    }
}

TEST_CASE("normalize_state maps into [0,1]") {
    sim::HighwayConfig cfg;
    sim::TrafficState s{100, 50, 5, 0, 1};
    auto n = dqn::normalize_state(s, cfg);
    CHECK(n[0] == doctest::Approx(1.0f));
    CHECK(n[1] == doctest::Approx(0.5f));
    CHECK(n[2] == doctest::Approx(1.0f));
    CHECK(n[3] == doctest::Approx(0.0f));
    CHECK(n[4] == doctest::Approx(0.5f));

    sim::TrafficState wild{500, -3, 9, 400, 2};
    auto w = dqn::normalize_state(wild, cfg);
    for (float v : w) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("greedy and epsilon-greedy action selection") {
    dqn::AgentConfig cfg;
    auto qnet = dqn::make_qnetwork(cfg, 4);
    CHECK(qnet.model.input_dim() == 5);
    CHECK(qnet.model.output_dim() == 2);
    CHECK(qnet.model.layers.back().activation == nn::Activation::Linear);

    // force known Q-values with a zero-weight net and a bias
    dqn::QNetwork fixed;
    fixed.model.layers.push_back({nn::Matrix(2, 5), {1.0f, 3.0f}, nn::Activation::Linear});
    std::array<float, 5> s{0.1f, 0.2f, 0.3f, 0.4f, 0.5f};
    CHECK(dqn::greedy_action(fixed.model.layers[0].bias[1] > 0 ? fixed : fixed, s) ==
          Action::LaneChange);

    // exact tie resolves to LaneKeep
    dqn::QNetwork tie;
    tie.model.layers.push_back({nn::Matrix(2, 5), {2.0f, 2.0f}, nn::Activation::Linear});
    CHECK(dqn::greedy_action(tie, s) == Action::LaneKeep);

    // epsilon = 0 is greedy
    Rng rng(5);
    for (int i = 0; i < 20; ++i) CHECK(dqn::select_action(fixed, s, 0.0, rng) == Action::LaneChange);

    // epsilon = 1 explores uniformly
    int changes = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        if (dqn::select_action(fixed, s, 1.0, rng) == Action::LaneChange) ++changes;
    }
    double frac = static_cast<double>(changes) / trials;
    CHECK(frac > 0.48);
    CHECK(frac < 0.52);
}

TEST_CASE("td_targets: terminal, myopic, and bootstrapped cases") {
    // target net: Q = [1, 3] everywhere; online net: Q = [10, 20] everywhere
    dqn::QNetwork target;
    target.model.layers.push_back({nn::Matrix(2, 5), {1.0f, 3.0f}, nn::Activation::Linear});
    dqn::QNetwork online;
    online.model.layers.push_back({nn::Matrix(2, 5), {10.0f, 20.0f}, nn::Activation::Linear});

    dqn::Transition done_t;
    done_t.action = 0;
    done_t.reward = -10.0f;
    done_t.done = true;

    dqn::Transition boot_t;
    boot_t.action = 1;
    boot_t.reward = 2.0f;
    boot_t.done = false;

    std::vector<dqn::Transition> batch{done_t, boot_t};
    auto targets = dqn::td_targets(target, online, batch, 0.95);
    REQUIRE(targets.size() == 2);

    // terminal: taken slot = r, other slot = online prediction (zero error)
    CHECK(targets[0][0] == doctest::Approx(-10.0f));
    CHECK(targets[0][1] == doctest::Approx(20.0f));

    // bootstrapped: r + gamma * max_a targetQ = 2 + 0.95 * 3
    CHECK(targets[1][1] == doctest::Approx(2.0f + 0.95f * 3.0f));
    CHECK(targets[1][0] == doctest::Approx(10.0f));

    // gamma = 0 is purely myopic
    auto myopic = dqn::td_targets(target, online, batch, 0.0);
    CHECK(myopic[1][1] == doctest::Approx(2.0f));
}

TEST_CASE("agent config validation") {
    dqn::AgentConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    dqn::AgentConfig bad = cfg;
    bad.gamma = 1.5;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = cfg;
    bad.batch = 0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = cfg;
    bad.epsilon_decay = 0.0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("training is deterministic under a fixed seed") {
    dqn::AgentConfig acfg;
    acfg.episodes = 15;
    acfg.batch = 8;
    acfg.replay_capacity = 512;
    acfg.hidden_sizes = {8};

    sim::HighwayConfig scfg;
    scfg.length = 40;
    scfg.t_max = 20;
    std::vector<sim::Roadblock> rbs{{0, 20}, {1, 25}};

    dqn::TrainHistory h1, h2;
    auto a = dqn::train_agent(acfg, scfg, rbs, 42, &h1);
    auto b = dqn::train_agent(acfg, scfg, rbs, 42, &h2);
    CHECK(nn::bitwise_equal(a.model, b.model));
    REQUIRE(h1.episodes.size() == 15);
    REQUIRE(h2.episodes.size() == 15);
    for (std::size_t i = 0; i < 15; ++i) {
        CHECK(h1.episodes[i].episode_return == h2.episodes[i].episode_return);
        CHECK(h1.episodes[i].epsilon == h2.episodes[i].epsilon);
    }
    // epsilon decays monotonically from its starting value
    CHECK(h1.episodes.front().epsilon <= acfg.epsilon_start);
    CHECK(h1.episodes.back().epsilon < h1.episodes.front().epsilon);

    auto c = dqn::train_agent(acfg, scfg, rbs, 43);
    CHECK_FALSE(nn::bitwise_equal(a.model, c.model));
}

TEST_CASE("agent save/load round trip; classifier files are rejected") {
    namespace fs = std::filesystem;
    dqn::AgentConfig cfg;
    auto qnet = dqn::make_qnetwork(cfg, 21);
    fs::path path = fs::temp_directory_path() / "semlink_agent.swf";
    dqn::save_agent(qnet, path);
    auto back = dqn::load_agent(path);
    CHECK(nn::bitwise_equal(qnet.model, back.model));

    // a softmax classifier is not a valid Q-network
    auto classifier = nn::init_weights({5, 4, 2},
                                       {nn::Activation::ReLU, nn::Activation::Softmax}, 1, 0.1f);
    nn::save_weights(classifier, path);
    CHECK_THROWS_AS(dqn::load_agent(path), ContractError);
    fs::remove(path);
}

TEST_CASE("DQN learns the toy roadblock MDP") {
    // noise-free toy instance: empty road, short horizon
    sim::HighwayConfig scfg;
    scfg.length = 10;
    scfg.speed_limit = 2;
    scfg.n_background = 0;
    scfg.safety_gap = 1;
    scfg.t_max = 8;
    std::vector<sim::Roadblock> rbs{{0, 5}};

    dqn::AgentConfig acfg;
    acfg.episodes = 500;
    acfg.batch = 16;
    acfg.hidden_sizes = {16};
    acfg.alpha = 0.01f;
    acfg.epsilon_decay = 0.99;

    auto qnet = dqn::train_agent(acfg, scfg, rbs, 7);

    // walk every reachable (t, state) pair and compare against the oracle
    sim::OracleTable oracle(scfg, rbs[0], scfg.t_max, 7);
    std::size_t total = 0;
    std::size_t matched = 0;
    std::vector<sim::Episode> frontier{sim::Episode(scfg, rbs[0], 7, false)};
    while (!frontier.empty()) {
        std::vector<sim::Episode> next;
        for (const sim::Episode& ep : frontier) {
            // score only states where the choice matters
            sim::Action best = oracle.action(ep.t(), ep.state());
            auto norm = dqn::normalize_state(ep.state(), scfg);
            ++total;
            if (dqn::greedy_action(qnet, norm) == best) ++matched;
            for (sim::Action a : {sim::Action::LaneKeep, sim::Action::LaneChange}) {
                sim::Episode copy = ep;
                if (!copy.step(a).done) next.push_back(copy);
            }
        }
        frontier = std::move(next);
    }
    REQUIRE(total > 0);
    double agreement = static_cast<double>(matched) / static_cast<double>(total);
    CHECK(agreement >= 0.95);
}
