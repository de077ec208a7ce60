// Python bindings for the main pipeline operations: train, split,
// encode/decode features, simulate, train/evaluate the agent, serve, bench.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "semlink/codec.hpp"
#include "semlink/dataset.hpp"
#include "semlink/dqn.hpp"
#include "semlink/nn.hpp"
#include "semlink/sim.hpp"
#include "semlink/wire.hpp"

namespace py = pybind11;
using namespace semlink;

PYBIND11_MODULE(_semlink, m) {
    m.doc() = "split-codec traffic pipeline: nn, dataset, codec, sim, dqn, wire";

    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_RuntimeError);

    // ------------------------------------------------------------------- nn
    py::enum_<nn::Activation>(m, "Activation")
        .value("RELU", nn::Activation::ReLU)
        .value("SOFTMAX", nn::Activation::Softmax)
        .value("LINEAR", nn::Activation::Linear);

    py::class_<nn::ModelWeights>(m, "ModelWeights")
        .def_readonly("alpha", &nn::ModelWeights::alpha)
        .def_readonly("seed", &nn::ModelWeights::seed)
        .def_property_readonly("layer_count",
                               [](const nn::ModelWeights& w) { return w.layers.size(); })
        .def_property_readonly("input_dim", &nn::ModelWeights::input_dim)
        .def_property_readonly("output_dim", &nn::ModelWeights::output_dim);

    py::class_<nn::EpochStats>(m, "EpochStats")
        .def_readonly("loss", &nn::EpochStats::loss)
        .def_readonly("accuracy", &nn::EpochStats::accuracy);

    m.def("init_weights", &nn::init_weights, py::arg("shape"), py::arg("activations"),
          py::arg("seed"), py::arg("alpha"));
    m.def("forward",
          [](const nn::ModelWeights& model, const std::vector<float>& input) {
              return nn::forward(model, input);
          },
          py::arg("model"), py::arg("input"));
    m.def("train",
          [](nn::ModelWeights& model, const dataset::Dataset& data, std::size_t epochs,
             std::size_t batch) {
              return nn::train(model, dataset::to_trainset(data), epochs, batch);
          },
          py::arg("model"), py::arg("data"), py::arg("epochs"), py::arg("batch"));
    m.def("predict",
          [](const nn::ModelWeights& model, const std::vector<float>& input) {
              nn::Prediction p = nn::predict(model, input);
              return py::make_tuple(p.class_index, p.confidence);
          },
          py::arg("model"), py::arg("input"));
    m.def("evaluate_accuracy",
          [](const nn::ModelWeights& model, const dataset::Dataset& data) {
              return nn::evaluate_accuracy(model, dataset::to_trainset(data));
          },
          py::arg("model"), py::arg("data"));
    m.def("save_weights", &nn::save_weights, py::arg("model"), py::arg("path"));
    m.def("load_weights", &nn::load_weights, py::arg("path"));
    m.def("weights_equal", &nn::bitwise_equal, py::arg("a"), py::arg("b"));

    // -------------------------------------------------------------- dataset
    py::class_<dataset::Sample>(m, "Sample")
        .def_readonly("pixels", &dataset::Sample::pixels)
        .def_readonly("label", &dataset::Sample::label);

    py::class_<dataset::Dataset>(m, "Dataset")
        .def_readonly("samples", &dataset::Dataset::samples)
        .def_readonly("class_count", &dataset::Dataset::class_count)
        .def("__len__", &dataset::Dataset::size);

    m.def("synth_generate", &dataset::synth_generate, py::arg("class_count"),
          py::arg("per_class"), py::arg("noise_sigma"), py::arg("seed"));
    m.def("synth_prototype", &dataset::synth_prototype, py::arg("class_index"));
    m.def("shuffle_split", &dataset::shuffle_split, py::arg("data"),
          py::arg("holdout_frac"), py::arg("seed"));
    m.def("load_dataset", &dataset::load_dataset, py::arg("dir"), py::arg("manifest"));

    // ---------------------------------------------------------------- codec
    py::class_<codec::ClassMapEntry>(m, "ClassMapEntry")
        .def_readonly("lane", &codec::ClassMapEntry::lane)
        .def_readonly("position", &codec::ClassMapEntry::position);

    py::class_<codec::ClassMap>(m, "ClassMap")
        .def_readonly("entries", &codec::ClassMap::entries)
        .def("lookup", &codec::ClassMap::lookup, py::return_value_policy::copy);

    py::class_<codec::EncoderHalf>(m, "EncoderHalf")
        .def_readonly("model", &codec::EncoderHalf::model);
    py::class_<codec::DecoderHalf>(m, "DecoderHalf")
        .def_readonly("model", &codec::DecoderHalf::model)
        .def_readwrite("class_map", &codec::DecoderHalf::class_map);

    py::class_<codec::FeatureVector>(m, "FeatureVector")
        .def_readonly("values", &codec::FeatureVector::values)
        .def_readonly("frame_id", &codec::FeatureVector::frame_id);

    m.def("split_model", &codec::split_model, py::arg("model"), py::arg("split_index"));
    m.def("encode_features",
          [](const codec::EncoderHalf& enc, const std::vector<float>& pixels,
             std::uint32_t frame_id) { return codec::encode_features(enc, pixels, frame_id); },
          py::arg("encoder"), py::arg("pixels"), py::arg("frame_id") = 0);
    m.def("classify_features",
          [](const codec::DecoderHalf& dec, const codec::FeatureVector& fv) {
              codec::Classification c = codec::classify_features(dec, fv);
              return py::make_tuple(c.class_index, c.confidence, c.roadblock);
          },
          py::arg("decoder"), py::arg("features"));
    m.def("write_sff",
          [](const codec::FeatureVector& fv, bool deflate) {
              auto bytes = codec::write_sff(fv, deflate ? codec::kSffFlagDeflate : 0);
              return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
          },
          py::arg("features"), py::arg("deflate") = false);
    m.def("read_sff",
          [](py::bytes blob) {
              std::string_view view = std::string_view(blob);
              return codec::read_sff(std::span<const std::uint8_t>(
                  reinterpret_cast<const std::uint8_t*>(view.data()), view.size()));
          },
          py::arg("blob"));
    m.def("default_class_map", &codec::default_class_map, py::arg("class_count"),
          py::arg("highway_length"));

    // ------------------------------------------------------------------ sim
    py::class_<sim::HighwayConfig>(m, "HighwayConfig")
        .def(py::init<>())
        .def_readwrite("lanes", &sim::HighwayConfig::lanes)
        .def_readwrite("length", &sim::HighwayConfig::length)
        .def_readwrite("speed_limit", &sim::HighwayConfig::speed_limit)
        .def_readwrite("n_background", &sim::HighwayConfig::n_background)
        .def_readwrite("safety_gap", &sim::HighwayConfig::safety_gap)
        .def_readwrite("t_max", &sim::HighwayConfig::t_max)
        .def_readwrite("seed", &sim::HighwayConfig::seed);

    py::class_<sim::Roadblock>(m, "Roadblock")
        .def(py::init([](int lane, int position) {
                 return sim::Roadblock{lane, position};
             }),
             py::arg("lane"), py::arg("position"))
        .def_readwrite("lane", &sim::Roadblock::lane)
        .def_readwrite("position", &sim::Roadblock::position);

    py::class_<sim::TrafficState>(m, "TrafficState")
        .def_readonly("d1", &sim::TrafficState::d1)
        .def_readonly("d2", &sim::TrafficState::d2)
        .def_readonly("v", &sim::TrafficState::v)
        .def_readonly("x", &sim::TrafficState::x)
        .def_readonly("y", &sim::TrafficState::y);

    py::enum_<sim::Action>(m, "Action")
        .value("LANE_KEEP", sim::Action::LaneKeep)
        .value("LANE_CHANGE", sim::Action::LaneChange);

    py::class_<sim::Episode>(m, "Episode")
        .def(py::init<const sim::HighwayConfig&, const sim::Roadblock&, std::uint64_t, bool>(),
             py::arg("config"), py::arg("roadblock"), py::arg("seed"),
             py::arg("noise") = true)
        .def_property_readonly("state", &sim::Episode::state)
        .def_property_readonly("t", &sim::Episode::t)
        .def_property_readonly("done", &sim::Episode::done)
        .def("step", [](sim::Episode& ep, sim::Action a) {
            sim::StepResult r = ep.step(a);
            return py::make_tuple(r.next, r.reward, r.done, sim::outcome_name(r.outcome));
        });

    py::class_<sim::OracleTable>(m, "OracleTable")
        .def(py::init<const sim::HighwayConfig&, const sim::Roadblock&, int,
                      std::optional<std::uint64_t>>(),
             py::arg("config"), py::arg("roadblock"), py::arg("horizon"),
             py::arg("seed") = std::nullopt)
        .def("action", &sim::OracleTable::action, py::arg("t"), py::arg("state"))
        .def("start_value", &sim::OracleTable::start_value);

    py::class_<sim::EvalReport>(m, "EvalReport")
        .def_readonly("mean_return", &sim::EvalReport::mean_return)
        .def_readonly("oracle_mean_return", &sim::EvalReport::oracle_mean_return)
        .def_readonly("decision_accuracy", &sim::EvalReport::decision_accuracy)
        .def_readonly("decisions", &sim::EvalReport::decisions)
        .def_readonly("episodes", &sim::EvalReport::episodes);

    // ------------------------------------------------------------------ dqn
    py::class_<dqn::AgentConfig>(m, "AgentConfig")
        .def(py::init<>())
        .def_readwrite("gamma", &dqn::AgentConfig::gamma)
        .def_readwrite("epsilon_start", &dqn::AgentConfig::epsilon_start)
        .def_readwrite("epsilon_min", &dqn::AgentConfig::epsilon_min)
        .def_readwrite("epsilon_decay", &dqn::AgentConfig::epsilon_decay)
        .def_readwrite("batch", &dqn::AgentConfig::batch)
        .def_readwrite("hidden_sizes", &dqn::AgentConfig::hidden_sizes)
        .def_readwrite("alpha", &dqn::AgentConfig::alpha)
        .def_readwrite("episodes", &dqn::AgentConfig::episodes);

    py::class_<dqn::QNetwork>(m, "QNetwork")
        .def_readonly("model", &dqn::QNetwork::model);

    m.def("train_agent",
          [](const dqn::AgentConfig& acfg, const sim::HighwayConfig& scfg,
             const std::vector<sim::Roadblock>& rbs, std::uint64_t seed) {
              return dqn::train_agent(acfg, scfg, rbs, seed);
          },
          py::arg("agent_config"), py::arg("sim_config"), py::arg("roadblocks"),
          py::arg("seed"));
    m.def("greedy_action",
          [](const dqn::QNetwork& qnet, const sim::TrafficState& s,
             const sim::HighwayConfig& cfg) {
              return dqn::greedy_action(qnet, dqn::normalize_state(s, cfg));
          },
          py::arg("agent"), py::arg("state"), py::arg("config"));
    m.def("save_agent", &dqn::save_agent, py::arg("agent"), py::arg("path"));
    m.def("load_agent", &dqn::load_agent, py::arg("path"));
    m.def("evaluate_agent",
          [](const dqn::QNetwork& qnet, const sim::HighwayConfig& cfg,
             const std::vector<sim::Roadblock>& rbs, std::size_t episodes,
             std::uint64_t seed, std::size_t min_decisions) {
              return sim::evaluate_policy(
                  [&](const sim::TrafficState& s, int) {
                      return dqn::greedy_action(qnet, dqn::normalize_state(s, cfg));
                  },
                  cfg, rbs, episodes, seed, min_decisions);
          },
          py::arg("agent"), py::arg("config"), py::arg("roadblocks"), py::arg("episodes"),
          py::arg("seed"), py::arg("min_decisions") = 0);

    // ----------------------------------------------------------------- wire
    py::class_<wire::ResultPayload>(m, "ResultPayload")
        .def_readonly("frame_id", &wire::ResultPayload::frame_id)
        .def_readonly("class_index", &wire::ResultPayload::class_index)
        .def_readonly("confidence", &wire::ResultPayload::confidence)
        .def_readonly("lane", &wire::ResultPayload::lane)
        .def_readonly("position", &wire::ResultPayload::position)
        .def_readonly("decision", &wire::ResultPayload::decision);

    py::class_<wire::BenchReport>(m, "BenchReport")
        .def_readonly("total_bytes", &wire::BenchReport::total_bytes)
        .def_readonly("wall_time", &wire::BenchReport::wall_time)
        .def_readonly("results", &wire::BenchReport::results)
        .def_readonly("partial", &wire::BenchReport::partial);

    py::class_<wire::DecoderServer>(m, "DecoderServer")
        .def(py::init([](const codec::DecoderHalf& decoder, const nn::ModelWeights& full,
                         std::optional<dqn::QNetwork> agent, const sim::HighwayConfig& cfg,
                         const std::string& host, std::uint16_t port) {
                 wire::ServerContext ctx;
                 ctx.decoder = decoder;
                 ctx.full_model = full;
                 ctx.agent = std::move(agent);
                 ctx.sim_cfg = cfg;
                 return new wire::DecoderServer(std::move(ctx), host, port);
             }),
             py::arg("decoder"), py::arg("full_model"), py::arg("agent") = std::nullopt,
             py::arg("sim_config") = sim::HighwayConfig{},
             py::arg("host") = std::string("127.0.0.1"), py::arg("port") = 0)
        .def_property_readonly("port", &wire::DecoderServer::port)
        .def("stop", &wire::DecoderServer::stop,
             py::call_guard<py::gil_scoped_release>());

    py::enum_<wire::Scenario>(m, "Scenario")
        .value("SINGLE", wire::Scenario::Single)
        .value("VIDEO_30S", wire::Scenario::Video30s)
        .value("VIDEO_60S", wire::Scenario::Video60s);
    py::enum_<wire::Mode>(m, "Mode")
        .value("RAW", wire::Mode::Raw)
        .value("SEMANTIC", wire::Mode::Semantic);

    m.def("run_bench",
          [](const std::string& host, std::uint16_t port, const dataset::Dataset& data,
             wire::Scenario scenario, wire::Mode mode, const codec::EncoderHalf* encoder,
             int pipeline_depth) {
              py::gil_scoped_release release;
              return wire::run_bench(host, port, data, scenario, mode, encoder,
                                     pipeline_depth);
          },
          py::arg("host"), py::arg("port"), py::arg("data"), py::arg("scenario"),
          py::arg("mode"), py::arg("encoder") = nullptr, py::arg("pipeline_depth") = 1);
    m.def("report_csv", &wire::report_csv, py::arg("report"));
}
