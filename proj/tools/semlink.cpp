#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "semlink/codec.hpp"
#include "semlink/dataset.hpp"
#include "semlink/dqn.hpp"
#include "semlink/nn.hpp"
#include "semlink/sim.hpp"
#include "semlink/wire.hpp"

namespace fs = std::filesystem;
using namespace semlink;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitFormat = 2;
constexpr int kExitRuntime = 3;

struct DatasetSpec {
    std::string dir;      // directory with a manifest.tsv, or "synth"
    std::string manifest; // optional explicit manifest path
    int synth_classes = 10;
    int synth_per_class = 50;
    float synth_sigma = 0.1f;
};

dataset::Dataset load_from_spec(const DatasetSpec& spec, std::uint64_t seed) {
    if (spec.dir == "synth") {
        return dataset::synth_generate(spec.synth_classes, spec.synth_per_class,
                                       spec.synth_sigma, seed);
    }
    fs::path dir(spec.dir);
    fs::path manifest = spec.manifest.empty() ? dir / "manifest.tsv" : fs::path(spec.manifest);
    return dataset::load_dataset(dir, manifest);
}

void add_dataset_flags(CLI::App* cmd, DatasetSpec& spec) {
    cmd->add_option("--dataset", spec.dir, "dataset directory, or 'synth'")->required();
    cmd->add_option("--manifest", spec.manifest, "manifest path (default DIR/manifest.tsv)");
    cmd->add_option("--synth-classes", spec.synth_classes, "synthetic class count");
    cmd->add_option("--synth-per-class", spec.synth_per_class, "synthetic samples per class");
    cmd->add_option("--synth-sigma", spec.synth_sigma, "synthetic noise sigma");
}

std::vector<std::size_t> parse_shape(const std::string& text) {
    std::vector<std::size_t> shape;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        shape.push_back(std::stoul(text.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return shape;
}

sim::HighwayConfig sim_config_from(const std::string& path, std::uint64_t seed) {
    sim::HighwayConfig cfg;
    if (!path.empty()) cfg = sim::load_config(path);
    if (seed != 0) cfg.seed = seed;
    return cfg;
}

std::vector<sim::Roadblock> roadblocks_from_map(const codec::ClassMap& map) {
    std::vector<sim::Roadblock> out;
    for (const codec::ClassMapEntry& e : map.entries) out.push_back({e.lane, e.position});
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"semlink: split-classifier semantic link with a DQN lane-change agent"};
    app.require_subcommand(1);

    std::string global_config;
    std::uint64_t seed = 42;
    bool verbose = false;
    app.add_option("--config", global_config, "simulator key=value config file");
    app.add_option("--seed", seed, "global seed");
    app.add_flag("--verbose", verbose, "chatty progress output");

    // --- train-classifier ---
    auto* train_cmd = app.add_subcommand("train-classifier", "train the traffic-sign classifier");
    DatasetSpec train_spec;
    add_dataset_flags(train_cmd, train_spec);
    std::string shape_text = "1024,10,10";
    std::size_t epochs = 500, batch = 64;
    float alpha = 0.1f;
    double holdout = 0.2;
    int restarts = 1;
    std::string model_out = "model.swf", metrics_out;
    train_cmd->add_option("--shape", shape_text, "layer sizes, comma separated");
    train_cmd->add_option("--epochs", epochs, "training epochs");
    train_cmd->add_option("--batch", batch, "minibatch size");
    train_cmd->add_option("--alpha", alpha, "learning rate");
    train_cmd->add_option("--holdout", holdout, "held-out fraction for the accuracy report");
    train_cmd->add_option("--restarts", restarts,
                          "re-initialize this many times and keep the best run");
    train_cmd->add_option("--out", model_out, "output SWF1 file");
    train_cmd->add_option("--metrics", metrics_out, "per-epoch loss/accuracy CSV");

    // --- split ---
    auto* split_cmd = app.add_subcommand("split", "split a classifier into encoder/decoder");
    std::string split_model_path, encoder_out = "encoder.swf", decoder_out = "decoder.swf";
    std::string classmap_out = "classmap.tsv";
    std::size_t split_index = 1;
    int highway_length = 100;
    split_cmd->add_option("--model", split_model_path, "trained SWF1 model")->required();
    split_cmd->add_option("--split-index", split_index, "layer index to split after");
    split_cmd->add_option("--encoder-out", encoder_out, "encoder half output");
    split_cmd->add_option("--decoder-out", decoder_out, "decoder half output");
    split_cmd->add_option("--classmap-out", classmap_out, "class-map template output");
    split_cmd->add_option("--highway-length", highway_length, "length for the default map");

    // --- encode ---
    auto* encode_cmd = app.add_subcommand("encode", "encode images into SFF feature files");
    DatasetSpec encode_spec;
    add_dataset_flags(encode_cmd, encode_spec);
    std::string encoder_path, encode_out_dir = ".";
    bool deflate = false;
    encode_cmd->add_option("--encoder", encoder_path, "encoder SWF1 file")->required();
    encode_cmd->add_option("--out", encode_out_dir, "output directory");
    encode_cmd->add_flag("--deflate", deflate, "DEFLATE-compress payloads");

    // --- serve ---
    auto* serve_cmd = app.add_subcommand("serve", "run the decoder-side server");
    std::string bind_addr = "127.0.0.1:7600";
    std::string serve_decoder_path, serve_model_path, serve_classmap, serve_agent;
    serve_cmd->add_option("--bind", bind_addr, "bind address host:port");
    serve_cmd->add_option("--decoder", serve_decoder_path, "decoder SWF1")->required();
    serve_cmd->add_option("--model", serve_model_path, "full model SWF1 (raw baseline)")
        ->required();
    serve_cmd->add_option("--classmap", serve_classmap, "class map tsv");
    serve_cmd->add_option("--agent", serve_agent, "DQN agent SWF1");

    // --- bench ---
    auto* bench_cmd = app.add_subcommand("bench", "benchmark raw vs semantic transfer");
    DatasetSpec bench_spec;
    add_dataset_flags(bench_cmd, bench_spec);
    std::string connect_addr = "127.0.0.1:7600";
    std::string scenario_text = "single", mode_text = "semantic";
    std::string bench_encoder_path, report_out = "report.csv", plot_out;
    int pipeline = 1;
    bench_cmd->add_option("--connect", connect_addr, "server address host:port");
    bench_cmd->add_option("--scenario", scenario_text, "single | 30s | 60s");
    bench_cmd->add_option("--mode", mode_text, "raw | semantic | both");
    bench_cmd->add_option("--encoder", bench_encoder_path, "encoder SWF1 (semantic mode)");
    bench_cmd->add_option("--pipeline", pipeline, "frames in flight");
    bench_cmd->add_option("--out", report_out, "report CSV path");
    bench_cmd->add_option("--plot-data", plot_out, "gnuplot-compatible summary data file");

    // --- train-dqn ---
    auto* dqn_cmd = app.add_subcommand("train-dqn", "train the lane-change DQN agent");
    std::string agent_out = "agent.swf", history_out, dqn_classmap;
    dqn::AgentConfig agent_cfg;
    dqn_cmd->add_option("--episodes", agent_cfg.episodes, "training episodes");
    dqn_cmd->add_option("--gamma", agent_cfg.gamma, "discount factor");
    dqn_cmd->add_option("--alpha", agent_cfg.alpha, "Q-network learning rate");
    dqn_cmd->add_option("--batch", agent_cfg.batch, "minibatch size");
    dqn_cmd->add_option("--agent-out", agent_out, "output agent SWF1");
    dqn_cmd->add_option("--history", history_out, "per-episode return/epsilon CSV");
    dqn_cmd->add_option("--classmap", dqn_classmap,
                        "class map supplying the roadblock distribution");

    // --- eval ---
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a policy against the oracle");
    std::string eval_agent, eval_policy = "agent", eval_classmap, trajectory_out;
    std::size_t eval_episodes = 100, min_decisions = 0;
    eval_cmd->add_option("--agent", eval_agent, "agent SWF1 (policy=agent)");
    eval_cmd->add_option("--policy", eval_policy, "agent | oracle | random");
    eval_cmd->add_option("--episodes", eval_episodes, "evaluation episodes");
    eval_cmd->add_option("--min-decisions", min_decisions, "keep running until this many");
    eval_cmd->add_option("--classmap", eval_classmap, "class map for roadblock positions");
    eval_cmd->add_option("--trajectory", trajectory_out, "dump one episode trajectory CSV");

    // --- inspect ---
    auto* inspect_cmd = app.add_subcommand("inspect", "dump SWF1/SFF1 file headers");
    std::string inspect_path;
    inspect_cmd->add_option("file", inspect_path, "file to inspect")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) {
            dataset::Dataset full = load_from_spec(train_spec, seed);
            auto [train_set, test_set] = dataset::shuffle_split(full, holdout, seed);
            nn::TrainSet ts = dataset::to_trainset(train_set);
            std::vector<std::size_t> shape = parse_shape(shape_text);
            if (shape.size() < 2) throw ContractError("shape needs at least 2 sizes");
            shape.back() = full.class_count;
            std::vector<nn::Activation> acts(shape.size() - 2, nn::Activation::ReLU);
            acts.push_back(nn::Activation::Softmax);

            nn::ModelWeights best;
            std::vector<nn::EpochStats> best_history;
            double best_acc = -1.0;
            for (int r = 0; r < std::max(1, restarts); ++r) {
                nn::ModelWeights model = nn::init_weights(shape, acts, seed + r, alpha);
                std::vector<nn::EpochStats> history = nn::train(model, ts, epochs, batch);
                double acc = test_set.size() > 0
                                 ? nn::evaluate_accuracy(model, dataset::to_trainset(test_set))
                                 : history.back().accuracy;
                if (verbose) std::cerr << "restart " << r << ": accuracy " << acc << "\n";
                if (acc > best_acc) {
                    best_acc = acc;
                    best = std::move(model);
                    best_history = std::move(history);
                }
            }
            std::size_t bytes = nn::save_weights(best, model_out);
            if (!metrics_out.empty()) {
                std::ofstream csv(metrics_out, std::ios::trunc);
                csv << "epoch,loss,accuracy\n";
                for (std::size_t e = 0; e < best_history.size(); ++e) {
                    csv << e << ',' << best_history[e].loss << ','
                        << best_history[e].accuracy << '\n';
                }
                csv << "final_holdout_accuracy,," << best_acc << '\n';
            }
            std::cout << "wrote " << model_out << " (" << bytes << " bytes), holdout accuracy "
                      << best_acc << "\n";
        } else if (*split_cmd) {
            nn::ModelWeights model = nn::load_weights(split_model_path);
            auto [enc, dec] = codec::split_model(model, split_index);
            nn::save_weights(enc.model, encoder_out);
            nn::save_weights(dec.model, decoder_out);
            codec::ClassMap map =
                codec::default_class_map(model.output_dim(), highway_length);
            codec::save_class_map(map, classmap_out);
            std::cout << "encoder " << encoder_out << " (out dim " << enc.model.output_dim()
                      << "), decoder " << decoder_out << ", class map " << classmap_out
                      << "\n";
        } else if (*encode_cmd) {
            codec::EncoderHalf encoder{nn::load_weights(encoder_path)};
            dataset::Dataset data = load_from_spec(encode_spec, seed);
            fs::create_directories(encode_out_dir);
            std::size_t failures = 0;
            for (std::size_t i = 0; i < data.size(); ++i) {
                try {
                    codec::FeatureVector fv = codec::encode_features(
                        encoder, data.samples[i].pixels, static_cast<std::uint32_t>(i));
                    std::vector<std::uint8_t> bytes =
                        codec::write_sff(fv, deflate ? codec::kSffFlagDeflate : 0);
                    fs::path out = fs::path(encode_out_dir) / (std::to_string(i) + ".sff");
                    std::ofstream f(out, std::ios::binary | std::ios::trunc);
                    f.write(reinterpret_cast<const char*>(bytes.data()),
                            static_cast<std::streamsize>(bytes.size()));
                } catch (const std::exception& e) {
                    std::cerr << "warning: frame " << i << " skipped: " << e.what() << "\n";
                    ++failures;
                }
            }
            std::cout << "encoded " << (data.size() - failures) << " frames, " << failures
                      << " failures\n";
            if (failures) return kExitRuntime;
        } else if (*serve_cmd) {
            auto [host, port] = wire::parse_addr(bind_addr);
            wire::ServerContext ctx;
            ctx.full_model = nn::load_weights(serve_model_path);
            ctx.decoder.model = nn::load_weights(serve_decoder_path);
            ctx.decoder.class_map =
                serve_classmap.empty()
                    ? codec::default_class_map(ctx.decoder.model.output_dim(), 100)
                    : codec::load_class_map(serve_classmap);
            ctx.sim_cfg = sim_config_from(global_config, seed);
            if (!serve_agent.empty()) ctx.agent = dqn::load_agent(serve_agent);
            wire::DecoderServer server(std::move(ctx), host, port);
            std::cout << "listening on " << host << ":" << server.port() << "\n";
            server.wait();
        } else if (*bench_cmd) {
            auto [host, port] = wire::parse_addr(connect_addr);
            dataset::Dataset data = load_from_spec(bench_spec, seed);
            wire::Scenario scenario = scenario_text == "single" ? wire::Scenario::Single
                                      : scenario_text == "30s"  ? wire::Scenario::Video30s
                                      : scenario_text == "60s"
                                          ? wire::Scenario::Video60s
                                          : throw ContractError("bad scenario: " + scenario_text);
            std::optional<codec::EncoderHalf> encoder;
            if (!bench_encoder_path.empty()) {
                encoder = codec::EncoderHalf{nn::load_weights(bench_encoder_path)};
            }
            auto run_mode = [&](wire::Mode mode) {
                if (mode == wire::Mode::Semantic && !encoder) {
                    throw ContractError("--encoder required for semantic mode");
                }
                wire::BenchReport rep = wire::run_bench(
                    host, port, data, scenario, mode,
                    encoder ? &*encoder : nullptr, pipeline);
                std::cout << wire::mode_name(mode) << ": " << rep.total_bytes << " bytes, "
                          << rep.wall_time << " s transfer+classify"
                          << (rep.partial ? " (PARTIAL)" : "") << "\n";
                return rep;
            };
            if (mode_text == "both") {
                wire::BenchReport raw = run_mode(wire::Mode::Raw);
                wire::BenchReport sem = run_mode(wire::Mode::Semantic);
                wire::emit_report(sem, report_out);
                fs::path raw_out = fs::path(report_out).replace_extension(".raw.csv");
                wire::emit_report(raw, raw_out);
                std::cout << "mode      bytes        time_s\n"
                          << "raw       " << raw.total_bytes << "  " << raw.wall_time << "\n"
                          << "semantic  " << sem.total_bytes << "  " << sem.wall_time << "\n";
                if (!plot_out.empty()) {
                    std::ofstream plot(plot_out, std::ios::trunc);
                    plot << "# mode bytes time_s\nraw " << raw.total_bytes << ' '
                         << raw.wall_time << "\nsemantic " << sem.total_bytes << ' '
                         << sem.wall_time << "\n";
                }
            } else {
                wire::Mode mode = mode_text == "raw"        ? wire::Mode::Raw
                                  : mode_text == "semantic" ? wire::Mode::Semantic
                                                            : throw ContractError(
                                                                  "bad mode: " + mode_text);
                wire::emit_report(run_mode(mode), report_out);
            }
        } else if (*dqn_cmd) {
            sim::HighwayConfig cfg = sim_config_from(global_config, seed);
            codec::ClassMap map = dqn_classmap.empty()
                                      ? codec::default_class_map(10, cfg.length)
                                      : codec::load_class_map(dqn_classmap);
            dqn::TrainHistory history;
            dqn::QNetwork agent =
                dqn::train_agent(agent_cfg, cfg, roadblocks_from_map(map), seed, &history);
            dqn::save_agent(agent, agent_out);
            if (!history_out.empty()) {
                std::ofstream csv(history_out, std::ios::trunc);
                csv << "episode,return,epsilon,outcome\n";
                for (std::size_t e = 0; e < history.episodes.size(); ++e) {
                    const dqn::EpisodeRecord& rec = history.episodes[e];
                    csv << e << ',' << rec.episode_return << ',' << rec.epsilon << ','
                        << sim::outcome_name(rec.outcome) << '\n';
                }
            }
            std::cout << "wrote " << agent_out << " after " << agent_cfg.episodes
                      << " episodes\n";
        } else if (*eval_cmd) {
            sim::HighwayConfig cfg = sim_config_from(global_config, seed);
            codec::ClassMap map = eval_classmap.empty()
                                      ? codec::default_class_map(10, cfg.length)
                                      : codec::load_class_map(eval_classmap);
            std::vector<sim::Roadblock> roadblocks = roadblocks_from_map(map);

            std::optional<dqn::QNetwork> agent;
            if (eval_policy == "agent") {
                if (eval_agent.empty()) throw ContractError("--agent required for policy=agent");
                agent = dqn::load_agent(eval_agent);
            }
            // oracle policy needs per-episode tables; emulate with a per-call cache
            sim::Policy policy;
            Rng random_rng(seed);
            std::optional<sim::OracleTable> oracle_table;
            sim::Roadblock oracle_rb{};
            if (eval_policy == "agent") {
                policy = [&](const sim::TrafficState& s, int) {
                    return dqn::greedy_action(*agent, dqn::normalize_state(s, cfg));
                };
            } else if (eval_policy == "random") {
                policy = [&](const sim::TrafficState&, int) {
                    return random_rng.below(2) == 0 ? sim::Action::LaneKeep
                                                    : sim::Action::LaneChange;
                };
            } else if (eval_policy == "oracle") {
                policy = [&](const sim::TrafficState& s, int t) {
                    // states carry d2/y; recover the roadblock from them
                    sim::Roadblock rb{s.y, s.x + s.d2};
                    if (!oracle_table || oracle_rb.lane != rb.lane ||
                        oracle_rb.position != rb.position) {
                        oracle_table.emplace(cfg, rb, cfg.t_max);
                        oracle_rb = rb;
                    }
                    return oracle_table->action(t, s);
                };
            } else {
                throw ContractError("bad policy: " + eval_policy);
            }

            sim::EvalReport report =
                sim::evaluate_policy(policy, cfg, roadblocks, eval_episodes, seed,
                                     min_decisions);
            std::cout << "episodes " << report.episodes << ", decisions " << report.decisions
                      << "\ndecision accuracy vs oracle: " << report.decision_accuracy
                      << "\nmean return: " << report.mean_return
                      << " (oracle " << report.oracle_mean_return << ")\n";
            for (std::size_t o = 1; o < report.outcome_counts.size(); ++o) {
                std::cout << sim::outcome_name(static_cast<sim::Outcome>(o)) << ": "
                          << report.outcome_counts[o] << "\n";
            }
            if (!trajectory_out.empty()) {
                std::ofstream csv(trajectory_out, std::ios::trunc);
                csv << "step,x,y,v,d1,d2,action,reward\n";
                sim::Episode ep(cfg, roadblocks.front(), seed, true);
                while (!ep.done()) {
                    sim::TrafficState s = ep.state();
                    sim::Action a = policy(s, ep.t());
                    sim::StepResult sr = ep.step(a);
                    csv << ep.t() - 1 << ',' << s.x << ',' << s.y << ',' << s.v << ','
                        << s.d1 << ',' << s.d2 << ','
                        << (a == sim::Action::LaneKeep ? "keep" : "change") << ','
                        << sr.reward << '\n';
                }
            }
        } else if (*inspect_cmd) {
            std::ifstream in(inspect_path, std::ios::binary);
            if (!in) throw std::runtime_error("cannot open: " + inspect_path);
            char magic[4] = {};
            in.read(magic, 4);
            if (std::string(magic, 4) == "SWF1") {
                nn::ModelWeights m = nn::load_weights(inspect_path);
                std::cout << "SWF1 v1, alpha " << m.alpha << ", seed " << m.seed << ", "
                          << m.layers.size() << " layers\n";
                for (std::size_t k = 0; k < m.layers.size(); ++k) {
                    const nn::DenseLayer& l = m.layers[k];
                    const char* act = l.activation == nn::Activation::ReLU      ? "relu"
                                      : l.activation == nn::Activation::Softmax ? "softmax"
                                                                                : "linear";
                    std::cout << "  layer " << k << ": " << l.in_dim() << " -> " << l.out_dim()
                              << " (" << act << ")\n";
                }
            } else if (std::string(magic, 4) == "SFF1") {
                in.seekg(0);
                std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                                std::istreambuf_iterator<char>());
                codec::FeatureVector fv = codec::read_sff(bytes);
                std::cout << "SFF1 v1, frame " << fv.frame_id << ", dim " << fv.values.size()
                          << ", flags " << (bytes[5] & 1 ? "deflate" : "none") << ", "
                          << bytes.size() << " bytes\n";
            } else {
                throw FormatError("unknown magic", 0);
            }
        }
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitFormat;
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const ContractError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
