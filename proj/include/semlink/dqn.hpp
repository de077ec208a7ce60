#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "semlink/nn.hpp"
#include "semlink/sim.hpp"

namespace semlink::dqn {

struct Transition {
    std::array<float, 5> s{};
    std::array<float, 5> s_next{};
    int action = 0; // index into {LaneKeep, LaneChange}
    float reward = 0.0f;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 10000);

    void push(const Transition& t);
    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    bool ready(std::size_t batch) const { return size_ >= batch; }

    // uniform sample without replacement; throws if underfilled
    std::vector<Transition> sample(std::size_t batch, Rng& rng) const;

    const Transition& at(std::size_t logical_index) const; // 0 = oldest

private:
    std::size_t capacity_;
    std::size_t size_ = 0;
    std::size_t head_ = 0; // next write slot
    std::vector<Transition> storage_;
};

struct AgentConfig {
    double gamma = 0.95;
    double epsilon_start = 1.0;
    double epsilon_min = 0.05;
    double epsilon_decay = 0.995; // per episode
    std::size_t batch = 32;
    std::size_t target_sync_every = 100; // updates
    std::vector<std::size_t> hidden_sizes = {32, 32};
    float alpha = 0.001f;
    std::size_t episodes = 2000;
    std::size_t replay_capacity = 10000;

    void validate() const;
};

struct QNetwork {
    nn::ModelWeights model; // 5 -> hidden -> 2, ReLU hidden, linear output
};

QNetwork make_qnetwork(const AgentConfig& cfg, std::uint64_t seed);

std::array<float, 5> normalize_state(const sim::TrafficState& s, const sim::HighwayConfig& cfg);

sim::Action select_action(const QNetwork& qnet, std::span<const float> state_vec,
                          double epsilon, Rng& rng);

// Per-transition 2-vector targets: the taken action's slot gets
// r (+ gamma * max target-Q when non-terminal); the other slot gets the online
// network's own prediction so its error, and gradient, is zero.
std::vector<std::array<float, 2>> td_targets(const QNetwork& target, const QNetwork& online,
                                             std::span<const Transition> minibatch,
                                             double gamma);

struct EpisodeRecord {
    double episode_return = 0.0;
    double epsilon = 0.0;
    sim::Outcome outcome = sim::Outcome::None;
};

struct TrainHistory {
    std::vector<EpisodeRecord> episodes;
};

QNetwork train_agent(const AgentConfig& agent_cfg, const sim::HighwayConfig& sim_cfg,
                     const std::vector<sim::Roadblock>& roadblocks, std::uint64_t seed,
                     TrainHistory* history = nullptr);

sim::Action greedy_action(const QNetwork& qnet, std::span<const float> state_vec);

void save_agent(const QNetwork& qnet, const std::filesystem::path& path);
QNetwork load_agent(const std::filesystem::path& path);

} // namespace semlink::dqn
