#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "semlink/common.hpp"

namespace semlink::sim {

struct HighwayConfig {
    int lanes = 3;
    int length = 100;      // cells
    int speed_limit = 5;   // cells per step
    int n_background = 6;
    int safety_gap = 2;    // min clearance for a lane change
    int t_max = 60;        // step budget
    double r1 = 10.0;      // merged at speed
    double r2 = -10.0;     // blocked at the roadblock
    double r3 = 5.0;       // merged at minimum speed
    double step_penalty = -0.1;
    double flow_penalty = -1.0;
    std::uint64_t seed = 0;

    double flow_threshold() const { return speed_limit / 5.0; }
    // roadblock positions must keep this margin from both ends; 20 cells on
    // full-size highways, proportionally less on toy instances
    int roadblock_margin() const { return std::min(20, length / 5); }
    void validate() const;
};

struct Roadblock {
    int lane = 0;
    int position = 0;
};

struct TrafficState {
    int d1 = 0; // gap to lead vehicle in own lane, capped at length
    int d2 = 0; // distance to roadblock along own lane; == length when unblocked
    int v = 0;
    int x = 0;
    int y = 0;
};

enum class Action : std::uint8_t { LaneKeep = 0, LaneChange = 1 };

enum class Outcome : std::uint8_t {
    None = 0,
    MergedAtSpeed, // R1
    Blocked,       // R2
    MergedSlow,    // R3
    MergedMid,     // between the R1 and R3 speed bands, (R1+R3)/2
    TimedOut
};

const char* outcome_name(Outcome o);

struct Vehicle {
    int lane = 0;
    int x = 0;
    int v = 1;
};

// Background traffic. Vehicles interact with each other and the roadblock but
// never with the target vehicle, so their trajectory is a pure function of
// (placement, jitter stream) — this is what makes the oracle exact.
class Background {
public:
    std::vector<Vehicle> vehicles;

    static Background place(const HighwayConfig& cfg, const Roadblock& rb, Rng& rng);
    void advance(const HighwayConfig& cfg, const Roadblock& rb, Rng* jitter_rng);

    double mean_speed() const;
    // gap to the nearest vehicle strictly ahead in `lane`, capped at length
    int gap_ahead(int lane, int x, int length) const;
    // distance to the nearest vehicle in `lane` measured from cell x
    int min_abs_gap(int lane, int x, int length) const;
    bool occupied(int lane, int x) const;
};

struct StepResult {
    TrafficState next;
    double reward = 0.0;
    bool done = false;
    Outcome outcome = Outcome::None;
};

// One episode, value semantics (copyable so rollouts can branch).
class Episode {
public:
    Episode(const HighwayConfig& cfg, const Roadblock& rb, std::uint64_t seed,
            bool noise = true);

    const TrafficState& state() const { return state_; }
    const Background& background() const { return bg_; }
    const HighwayConfig& config() const { return cfg_; }
    const Roadblock& roadblock() const { return rb_; }
    int t() const { return t_; }
    bool done() const { return done_; }

    StepResult step(Action action);

private:
    HighwayConfig cfg_;
    Roadblock rb_;
    Background bg_;
    Rng rng_;
    TrafficState state_;
    int t_ = 0;
    bool done_ = false;
    bool noise_ = true;

    void refresh_distances();
};

// Finite-horizon backward induction over (t, x, v) for the noise-free MDP with
// the target pinned to the blocked lane (any other lane is a merged terminal).
class OracleTable {
public:
    OracleTable(const HighwayConfig& cfg, const Roadblock& rb, int horizon,
                std::optional<std::uint64_t> seed = std::nullopt);

    Action action(int t, const TrafficState& s) const;
    double value(int t, int x, int v) const;
    double start_value() const;
    int horizon() const { return horizon_; }

private:
    HighwayConfig cfg_;
    Roadblock rb_;
    int horizon_;
    int x_count_;
    std::vector<double> values_;
    std::vector<std::uint8_t> actions_;

    std::size_t index(int t, int x, int v) const;
};

using Policy = std::function<Action(const TrafficState& state, int t)>;

struct EvalReport {
    double mean_return = 0.0;
    double oracle_mean_return = 0.0;
    double decision_accuracy = 0.0;
    std::size_t decisions = 0;
    std::size_t episodes = 0;
    std::array<std::size_t, 6> outcome_counts{}; // indexed by Outcome
};

// Noisy rollouts of `policy`; per-step decisions are scored against a
// per-episode noise-free oracle. Runs at least n_episodes episodes and keeps
// going until min_decisions decisions have been scored.
EvalReport evaluate_policy(const Policy& policy, const HighwayConfig& cfg,
                           const std::vector<Roadblock>& roadblocks,
                           std::size_t n_episodes, std::uint64_t seed,
                           std::size_t min_decisions = 0);

// key=value config file; unknown keys are rejected
HighwayConfig load_config(const std::filesystem::path& path);
void save_config(const HighwayConfig& cfg, const std::filesystem::path& path);

void validate_roadblock(const HighwayConfig& cfg, const Roadblock& rb);

} // namespace semlink::sim
