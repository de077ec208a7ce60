#include "semlink/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace semlink::sim {

namespace {

long long cell_key(int lane, int x) {
    return static_cast<long long>(lane) * (1ll << 32) + x;
}

struct TargetEval {
    int x = 0;
    int y = 0;
    int v = 0;
    double reward = 0.0;
    bool done = false;
    Outcome outcome = Outcome::None;
};

// Advances the target vehicle and scores the step. `bg_post` is the background
// after this step's advance; timeout is handled by the caller.
TargetEval eval_target(const HighwayConfig& cfg, const Roadblock& rb, int x, int y, int v,
                       int d1, Action action, const Background& bg_post) {
    TargetEval te;
    te.y = y;

    bool changed = false;
    if (action == Action::LaneChange) {
        // candidate adjacent lanes, skipping the blocked one
        int best_lane = -1;
        int best_gap = -1;
        for (int cand : {y - 1, y + 1}) {
            if (cand < 0 || cand >= cfg.lanes || cand == rb.lane) continue;
            int gap = bg_post.min_abs_gap(cand, x + v, cfg.length);
            if (gap > best_gap || (gap == best_gap && cand < best_lane)) {
                best_gap = gap;
                best_lane = cand;
            }
        }
        if (best_lane >= 0 && best_gap >= cfg.safety_gap) {
            te.y = best_lane;
            te.v = v; // the change consumes the step
            te.x = x + v;
            changed = true;
        }
    }
    if (!changed) {
        int v_next = action == Action::LaneChange
                         ? std::max(0, v - 1) // blocked merge degrades to a slowing keep
                         : std::min({cfg.speed_limit, d1 - 1, v + 1});
        v_next = std::max(0, std::min(v_next, d1 - 1)); // never enter the lead's cell
        te.v = v_next;
        te.x = x + v_next;
    }

    const double mean_bg =
        bg_post.vehicles.empty() ? cfg.speed_limit : bg_post.mean_speed();
    if (te.y != rb.lane) {
        te.done = true;
        if (te.v >= mean_bg) {
            te.reward = cfg.r1;
            te.outcome = Outcome::MergedAtSpeed;
        } else if (te.v <= std::max(1.0, cfg.flow_threshold())) {
            te.reward = cfg.r3;
            te.outcome = Outcome::MergedSlow;
        } else {
            te.reward = (cfg.r1 + cfg.r3) / 2.0;
            te.outcome = Outcome::MergedMid;
        }
    } else if (te.x >= rb.position) {
        te.done = true;
        te.reward = cfg.r2;
        te.outcome = Outcome::Blocked;
    } else {
        double speed_sum = te.v;
        for (const Vehicle& veh : bg_post.vehicles) speed_sum += veh.v;
        double mean_all = speed_sum / static_cast<double>(bg_post.vehicles.size() + 1);
        te.reward = cfg.step_penalty +
                    (mean_all < cfg.flow_threshold() ? cfg.flow_penalty : 0.0);
    }
    return te;
}

} // namespace

void HighwayConfig::validate() const {
    if (lanes != 3) throw ContractError("lanes must be 3");
    if (length < 10) throw ContractError("length must be >= 10");
    if (speed_limit < 1) throw ContractError("speed_limit must be >= 1");
    if (n_background < 0) throw ContractError("n_background must be >= 0");
    if (safety_gap < 1) throw ContractError("safety_gap must be >= 1");
    if (t_max < 1) throw ContractError("t_max must be >= 1");
    if (!(r1 > r3 && r3 > 0.0 && 0.0 > r2)) {
        throw ContractError("rewards must satisfy r1 > r3 > 0 > r2");
    }
}

void validate_roadblock(const HighwayConfig& cfg, const Roadblock& rb) {
    if (rb.lane < 0 || rb.lane >= cfg.lanes) throw ContractError("roadblock lane out of range");
    int margin = cfg.roadblock_margin();
    if (rb.position < margin || rb.position > cfg.length - margin) {
        throw ContractError("roadblock position " + std::to_string(rb.position) +
                            " outside [" + std::to_string(margin) + ", " +
                            std::to_string(cfg.length - margin) + "]");
    }
}

const char* outcome_name(Outcome o) {
    switch (o) {
    case Outcome::None: return "none";
    case Outcome::MergedAtSpeed: return "merged_at_speed";
    case Outcome::Blocked: return "blocked";
    case Outcome::MergedSlow: return "merged_slow";
    case Outcome::MergedMid: return "merged_mid";
    case Outcome::TimedOut: return "timed_out";
    }
    return "?";
}

Background Background::place(const HighwayConfig& cfg, const Roadblock& rb, Rng& rng) {
    Background bg;
    std::unordered_set<long long> taken;
    taken.insert(cell_key(rb.lane, rb.position));
    for (int i = 0; i < cfg.n_background; ++i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 10000) throw ContractError("cannot place background vehicles");
            int lane = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.lanes)));
            int x = static_cast<int>(rng.range(1, cfg.length - 1));
            if (taken.count(cell_key(lane, x))) continue;
            taken.insert(cell_key(lane, x));
            Vehicle v;
            v.lane = lane;
            v.x = x;
            v.v = static_cast<int>(rng.range(1, cfg.speed_limit));
            bg.vehicles.push_back(v);
            break;
        }
    }
    return bg;
}

void Background::advance(const HighwayConfig& cfg, const Roadblock& rb, Rng* jitter_rng) {
    std::vector<std::size_t> order(vehicles.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
        if (vehicles[a].x != vehicles[b].x) return vehicles[a].x > vehicles[b].x;
        if (vehicles[a].lane != vehicles[b].lane) return vehicles[a].lane < vehicles[b].lane;
        return a < b;
    });

    std::unordered_set<long long> occupied;
    occupied.insert(cell_key(rb.lane, rb.position));
    for (const Vehicle& v : vehicles) occupied.insert(cell_key(v.lane, v.x));

    for (std::size_t idx : order) {
        Vehicle& v = vehicles[idx];
        int jitter = jitter_rng ? static_cast<int>(jitter_rng->range(-1, 1)) : 0;
        v.v = std::clamp(v.v + jitter, 1, cfg.speed_limit);
        occupied.erase(cell_key(v.lane, v.x));
        int moved = 0;
        while (moved < v.v && !occupied.count(cell_key(v.lane, v.x + 1))) {
            ++v.x;
            ++moved;
        }
        occupied.insert(cell_key(v.lane, v.x));
    }
}

double Background::mean_speed() const {
    if (vehicles.empty()) return 0.0;
    double sum = 0.0;
    for (const Vehicle& v : vehicles) sum += v.v;
    return sum / static_cast<double>(vehicles.size());
}

int Background::gap_ahead(int lane, int x, int length) const {
    int best = length;
    for (const Vehicle& v : vehicles) {
        if (v.lane == lane && v.x > x) best = std::min(best, v.x - x);
    }
    return best;
}

int Background::min_abs_gap(int lane, int x, int length) const {
    int best = length;
    for (const Vehicle& v : vehicles) {
        if (v.lane == lane) best = std::min(best, std::abs(v.x - x));
    }
    return best;
}

bool Background::occupied(int lane, int x) const {
    for (const Vehicle& v : vehicles) {
        if (v.lane == lane && v.x == x) return true;
    }
    return false;
}

Episode::Episode(const HighwayConfig& cfg, const Roadblock& rb, std::uint64_t seed, bool noise)
    : cfg_(cfg), rb_(rb), rng_(seed), noise_(noise) {
    cfg_.validate();
    validate_roadblock(cfg_, rb_);
    bg_ = Background::place(cfg_, rb_, rng_);
    state_.x = 0;
    state_.y = rb_.lane;
    state_.v = cfg_.speed_limit;
    refresh_distances();
}

void Episode::refresh_distances() {
    state_.d1 = bg_.gap_ahead(state_.y, state_.x, cfg_.length);
    state_.d2 = state_.y == rb_.lane ? std::max(0, rb_.position - state_.x) : cfg_.length;
}

StepResult Episode::step(Action action) {
    if (done_) throw ContractError("step on a terminal episode");

    bg_.advance(cfg_, rb_, noise_ ? &rng_ : nullptr);
    TargetEval te = eval_target(cfg_, rb_, state_.x, state_.y, state_.v, state_.d1, action, bg_);
    ++t_;
    if (!te.done && t_ >= cfg_.t_max) {
        te.done = true;
        te.outcome = Outcome::TimedOut; // terminal reward 0, the step keeps its penalty
    }

    state_.x = std::clamp(te.x, 0, cfg_.length);
    state_.y = te.y;
    state_.v = te.v;
    refresh_distances();
    done_ = te.done;
    return {state_, te.reward, te.done, te.outcome};
}

std::size_t OracleTable::index(int t, int x, int v) const {
    return (static_cast<std::size_t>(t) * x_count_ + x) * (cfg_.speed_limit + 1) + v;
}

OracleTable::OracleTable(const HighwayConfig& cfg, const Roadblock& rb, int horizon,
                         std::optional<std::uint64_t> seed)
    : cfg_(cfg), rb_(rb), horizon_(horizon) {
    if (horizon < 1) throw ContractError("oracle horizon must be >= 1");
    cfg_.validate();
    validate_roadblock(cfg_, rb_);
    x_count_ = rb_.position + cfg_.speed_limit + 1;

    // noise-free background snapshots for t = 0..horizon
    Rng rng(seed.value_or(cfg_.seed));
    std::vector<Background> snapshots;
    snapshots.reserve(static_cast<std::size_t>(horizon) + 1);
    snapshots.push_back(Background::place(cfg_, rb_, rng));
    for (int t = 0; t < horizon; ++t) {
        Background next = snapshots.back();
        next.advance(cfg_, rb_, nullptr);
        snapshots.push_back(std::move(next));
    }

    const int v_count = cfg_.speed_limit + 1;
    values_.assign(static_cast<std::size_t>(horizon + 1) * x_count_ * v_count, 0.0);
    actions_.assign(values_.size(), static_cast<std::uint8_t>(Action::LaneKeep));

    for (int t = horizon - 1; t >= 0; --t) {
        for (int x = 0; x < std::min(x_count_, rb_.position); ++x) {
            int d1 = snapshots[t].gap_ahead(rb_.lane, x, cfg_.length);
            for (int v = 0; v < v_count; ++v) {
                double best = 0.0;
                Action best_a = Action::LaneKeep;
                bool first = true;
                for (Action a : {Action::LaneKeep, Action::LaneChange}) {
                    TargetEval te =
                        eval_target(cfg_, rb_, x, rb_.lane, v, d1, a, snapshots[t + 1]);
                    double q = te.reward;
                    if (!te.done) q += values_[index(t + 1, te.x, te.v)];
                    if (first || q > best) { // strict >: ties keep LaneKeep
                        best = q;
                        best_a = a;
                        first = false;
                    }
                }
                values_[index(t, x, v)] = best;
                actions_[index(t, x, v)] = static_cast<std::uint8_t>(best_a);
            }
        }
        // x >= rb.position in the blocked lane is already terminal: value 0
    }
}

Action OracleTable::action(int t, const TrafficState& s) const {
    if (s.y != rb_.lane) return Action::LaneKeep; // merged, absorbing
    int tc = std::clamp(t, 0, horizon_ - 1);
    int xc = std::clamp(s.x, 0, x_count_ - 1);
    int vc = std::clamp(s.v, 0, cfg_.speed_limit);
    return static_cast<Action>(actions_[index(tc, xc, vc)]);
}

double OracleTable::value(int t, int x, int v) const {
    return values_[index(std::clamp(t, 0, horizon_),
                         std::clamp(x, 0, x_count_ - 1),
                         std::clamp(v, 0, cfg_.speed_limit))];
}

double OracleTable::start_value() const { return value(0, 0, cfg_.speed_limit); }

EvalReport evaluate_policy(const Policy& policy, const HighwayConfig& cfg,
                           const std::vector<Roadblock>& roadblocks,
                           std::size_t n_episodes, std::uint64_t seed,
                           std::size_t min_decisions) {
    if (n_episodes == 0) throw ContractError("n_episodes must be >= 1");
    if (roadblocks.empty()) throw ContractError("need at least one roadblock");

    Rng master(seed);
    EvalReport rep;
    double return_sum = 0.0;
    double oracle_return_sum = 0.0;
    std::size_t matched = 0;

    while (rep.episodes < n_episodes ||
           (min_decisions > 0 && rep.decisions < min_decisions)) {
        const Roadblock& rb = roadblocks[master.below(roadblocks.size())];
        std::uint64_t ep_seed = master.next_u64();
        OracleTable oracle(cfg, rb, cfg.t_max, ep_seed);

        Episode ep(cfg, rb, ep_seed, true);
        double ep_return = 0.0;
        while (!ep.done()) {
            Action a = policy(ep.state(), ep.t());
            if (a == oracle.action(ep.t(), ep.state())) ++matched;
            ++rep.decisions;
            StepResult sr = ep.step(a);
            ep_return += sr.reward;
            if (sr.done) ++rep.outcome_counts[static_cast<std::size_t>(sr.outcome)];
        }
        return_sum += ep_return;

        // oracle return over the same noisy episode seed
        Episode oep(cfg, rb, ep_seed, true);
        double oracle_return = 0.0;
        while (!oep.done()) {
            oracle_return += oep.step(oracle.action(oep.t(), oep.state())).reward;
        }
        oracle_return_sum += oracle_return;
        ++rep.episodes;
    }

    rep.mean_return = return_sum / static_cast<double>(rep.episodes);
    rep.oracle_mean_return = oracle_return_sum / static_cast<double>(rep.episodes);
    rep.decision_accuracy =
        rep.decisions ? static_cast<double>(matched) / static_cast<double>(rep.decisions) : 0.0;
    return rep;
}

HighwayConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path.string());
    HighwayConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("config line " + std::to_string(line_no) + " has no '='", 0);
        }
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        if (key == "lanes") cfg.lanes = std::stoi(val);
        else if (key == "length") cfg.length = std::stoi(val);
        else if (key == "speed_limit") cfg.speed_limit = std::stoi(val);
        else if (key == "n_background") cfg.n_background = std::stoi(val);
        else if (key == "safety_gap") cfg.safety_gap = std::stoi(val);
        else if (key == "t_max") cfg.t_max = std::stoi(val);
        else if (key == "r1") cfg.r1 = std::stod(val);
        else if (key == "r2") cfg.r2 = std::stod(val);
        else if (key == "r3") cfg.r3 = std::stod(val);
        else if (key == "step_penalty") cfg.step_penalty = std::stod(val);
        else if (key == "flow_penalty") cfg.flow_penalty = std::stod(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else throw ContractError("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
}

void save_config(const HighwayConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "lanes=" << cfg.lanes << "\nlength=" << cfg.length
        << "\nspeed_limit=" << cfg.speed_limit << "\nn_background=" << cfg.n_background
        << "\nsafety_gap=" << cfg.safety_gap << "\nt_max=" << cfg.t_max << "\nr1=" << cfg.r1
        << "\nr2=" << cfg.r2 << "\nr3=" << cfg.r3 << "\nstep_penalty=" << cfg.step_penalty
        << "\nflow_penalty=" << cfg.flow_penalty << "\nseed=" << cfg.seed << "\n";
}

} // namespace semlink::sim
