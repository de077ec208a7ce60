#include "semlink/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace semlink::dqn {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ContractError("replay capacity must be >= 1");
    storage_.reserve(capacity);
}

void ReplayBuffer::push(const Transition& t) {
    if (size_ < capacity_) {
        storage_.push_back(t);
        ++size_;
    } else {
        storage_[head_] = t; // FIFO eviction
    }
    head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t logical_index) const {
    if (logical_index >= size_) throw ContractError("replay index out of range");
    if (size_ < capacity_) return storage_[logical_index];
    return storage_[(head_ + logical_index) % capacity_];
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
    if (batch > size_) throw ContractError("replay buffer underfilled");
    // partial Fisher-Yates over logical indices
    std::vector<std::size_t> idx(size_);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<Transition> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(size_ - i));
        std::swap(idx[i], idx[j]);
        out.push_back(at(idx[i]));
    }
    return out;
}

void AgentConfig::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ContractError("gamma must be in (0,1)");
    if (!(epsilon_min >= 0.0 && epsilon_min <= epsilon_start && epsilon_start <= 1.0)) {
        throw ContractError("need 0 <= epsilon_min <= epsilon_start <= 1");
    }
    if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) {
        throw ContractError("epsilon_decay must be in (0,1]");
    }
    if (batch == 0) throw ContractError("batch must be >= 1");
    if (target_sync_every == 0) throw ContractError("target_sync_every must be >= 1");
    if (hidden_sizes.empty()) throw ContractError("need at least one hidden layer");
    if (alpha <= 0.0f) throw ContractError("alpha must be positive");
}

QNetwork make_qnetwork(const AgentConfig& cfg, std::uint64_t seed) {
    std::vector<std::size_t> shape{5};
    shape.insert(shape.end(), cfg.hidden_sizes.begin(), cfg.hidden_sizes.end());
    shape.push_back(2);
    std::vector<nn::Activation> acts(cfg.hidden_sizes.size(), nn::Activation::ReLU);
    acts.push_back(nn::Activation::Linear);
    return {nn::init_weights(shape, acts, seed, cfg.alpha)};
}

std::array<float, 5> normalize_state(const sim::TrafficState& s,
                                     const sim::HighwayConfig& cfg) {
    auto unit = [](double v) {
        return static_cast<float>(std::clamp(v, 0.0, 1.0));
    };
    return {unit(static_cast<double>(s.d1) / cfg.length),
            unit(static_cast<double>(s.d2) / cfg.length),
            unit(static_cast<double>(s.v) / cfg.speed_limit),
            unit(static_cast<double>(s.x) / cfg.length),
            unit(static_cast<double>(s.y) / 2.0)};
}

sim::Action greedy_action(const QNetwork& qnet, std::span<const float> state_vec) {
    std::vector<float> q = nn::forward(qnet.model, state_vec);
    // tie goes to LaneKeep
    return q[1] > q[0] ? sim::Action::LaneChange : sim::Action::LaneKeep;
}

sim::Action select_action(const QNetwork& qnet, std::span<const float> state_vec,
                          double epsilon, Rng& rng) {
    if (epsilon < 0.0 || epsilon > 1.0) throw ContractError("epsilon must be in [0,1]");
    if (epsilon > 0.0 && rng.next_double() < epsilon) {
        return rng.below(2) == 0 ? sim::Action::LaneKeep : sim::Action::LaneChange;
    }
    return greedy_action(qnet, state_vec);
}

std::vector<std::array<float, 2>> td_targets(const QNetwork& target, const QNetwork& online,
                                             std::span<const Transition> minibatch,
                                             double gamma) {
    if (minibatch.empty()) throw ContractError("td_targets: empty minibatch");
    std::vector<std::array<float, 2>> out;
    out.reserve(minibatch.size());
    for (const Transition& t : minibatch) {
        std::vector<float> q_online = nn::forward(online.model, t.s);
        double y = t.reward;
        if (!t.done) {
            std::vector<float> q_next = nn::forward(target.model, t.s_next);
            y += gamma * std::max(q_next[0], q_next[1]);
        }
        std::array<float, 2> tv{q_online[0], q_online[1]};
        tv[static_cast<std::size_t>(t.action)] = static_cast<float>(y);
        out.push_back(tv);
    }
    return out;
}

QNetwork train_agent(const AgentConfig& agent_cfg, const sim::HighwayConfig& sim_cfg,
                     const std::vector<sim::Roadblock>& roadblocks, std::uint64_t seed,
                     TrainHistory* history) {
    agent_cfg.validate();
    sim_cfg.validate();
    if (roadblocks.empty()) throw ContractError("need at least one roadblock");
    for (const sim::Roadblock& rb : roadblocks) sim::validate_roadblock(sim_cfg, rb);

    QNetwork online = make_qnetwork(agent_cfg, seed);
    QNetwork target = online;
    ReplayBuffer buffer(agent_cfg.replay_capacity);
    Rng rng(seed ^ 0xA5A5A5A5DEADBEEFull);
    double epsilon = agent_cfg.epsilon_start;
    std::size_t updates = 0;

    for (std::size_t episode = 0; episode < agent_cfg.episodes; ++episode) {
        const sim::Roadblock& rb = roadblocks[rng.below(roadblocks.size())];
        sim::Episode ep(sim_cfg, rb, rng.next_u64(), true);
        double ep_return = 0.0;
        sim::Outcome outcome = sim::Outcome::None;

        while (!ep.done()) {
            std::array<float, 5> s = normalize_state(ep.state(), sim_cfg);
            sim::Action a = select_action(online, s, epsilon, rng);
            sim::StepResult sr = ep.step(a);
            ep_return += sr.reward;
            outcome = sr.outcome;

            Transition tr;
            tr.s = s;
            tr.s_next = normalize_state(sr.next, sim_cfg);
            tr.action = static_cast<int>(a);
            tr.reward = static_cast<float>(sr.reward);
            tr.done = sr.done;
            buffer.push(tr);

            if (!buffer.ready(agent_cfg.batch)) continue;
            std::vector<Transition> batch = buffer.sample(agent_cfg.batch, rng);
            std::vector<std::array<float, 2>> targets =
                td_targets(target, online, batch, agent_cfg.gamma);

            nn::Gradients grads = nn::zero_gradients(online.model);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                nn::ForwardTrace trace;
                nn::forward(online.model, batch[i].s, &trace);
                nn::accumulate(grads, nn::backward(online.model, trace, targets[i],
                                                   nn::Loss::SquaredError));
            }
            nn::scale(grads, 1.0f / static_cast<float>(batch.size()));
            nn::sgd_update(online.model, grads);
            ++updates;
            if (updates % agent_cfg.target_sync_every == 0) target = online;
        }

        if (history) history->episodes.push_back({ep_return, epsilon, outcome});
        epsilon = std::max(agent_cfg.epsilon_min, epsilon * agent_cfg.epsilon_decay);
    }
    return online;
}

void save_agent(const QNetwork& qnet, const std::filesystem::path& path) {
    nn::save_weights(qnet.model, path);
}

QNetwork load_agent(const std::filesystem::path& path) {
    QNetwork q{nn::load_weights(path)};
    if (q.model.layers.back().activation != nn::Activation::Linear) {
        throw ContractError("agent file must have a linear output layer");
    }
    if (q.model.output_dim() != 2) {
        throw ContractError("agent file must have exactly 2 outputs");
    }
    return q;
}

} // namespace semlink::dqn
