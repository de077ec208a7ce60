#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/socket.h>

#include <cstring>
#include <sstream>
#include <thread>

#include "semlink/wire.hpp"

using namespace semlink;

namespace {

// connected AF_UNIX pair for exercising the framing layer without a server
std::pair<wire::TcpStream, wire::TcpStream> stream_pair() {
    int fds[2];
    REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);
    return {wire::TcpStream(fds[0]), wire::TcpStream(fds[1])};
}

wire::ServerContext make_context(std::uint64_t seed) {
    auto model = nn::init_weights({1024, 10, 4},
                                  {nn::Activation::ReLU, nn::Activation::Softmax}, seed, 0.1f);
    auto [enc, dec] = codec::split_model(model, 1);
    dec.class_map = codec::default_class_map(4, 100);
    wire::ServerContext ctx;
    ctx.decoder = dec;
    ctx.full_model = model;
    ctx.sim_cfg = sim::HighwayConfig{};
    return ctx;
}

codec::EncoderHalf make_encoder(std::uint64_t seed) {
    auto model = nn::init_weights({1024, 10, 4},
                                  {nn::Activation::ReLU, nn::Activation::Softmax}, seed, 0.1f);
    return codec::split_model(model, 1).first;
}

wire::Frame hello_frame() {
    return {wire::FrameType::Hello, {wire::kProtocolVersion, 1}};
}

} // namespace

TEST_CASE("frame_serialize: BYE is exactly five bytes") {
    auto bytes = wire::frame_serialize({wire::FrameType::Bye, {}});
    REQUIRE(bytes.size() == 5);
    CHECK(bytes[0] == 7);
    CHECK(bytes[1] == 0);
    CHECK(bytes[2] == 0);
    CHECK(bytes[3] == 0);
    CHECK(bytes[4] == 0);
}

TEST_CASE("result payload encodes to 18 bytes and round trips") {
    wire::ResultPayload r;
    r.frame_id = 77;
    r.class_index = 3;
    r.confidence = 0.875f;
    r.lane = 2;
    r.position = 61;
    r.decision = 1;
    auto bytes = wire::encode_result(r);
    REQUIRE(bytes.size() == 18);
    auto back = wire::decode_result(bytes);
    CHECK(back.frame_id == 77);
    CHECK(back.class_index == 3);
    CHECK(back.confidence == 0.875f);
    CHECK(back.lane == 2);
    CHECK(back.position == 61);
    CHECK(back.decision == 1);

    bytes.pop_back();
    CHECK_THROWS_AS(wire::decode_result(bytes), ProtocolError);
}

TEST_CASE("raw image payload is 1028 bytes with quantized pixels") {
    std::vector<float> px(1024, 0.0f);
    px[0] = 1.0f;
    px[1] = 0.5f;
    auto payload = wire::encode_raw_image(px, 9);
    REQUIRE(payload.size() == 1028);
    CHECK(payload[0] == 255);
    CHECK(payload[1] == 128); // round(0.5 * 255)
    std::uint32_t frame_id;
    std::memcpy(&frame_id, payload.data() + 1024, 4);
    CHECK(frame_id == 9);
}

TEST_CASE("frames round trip over a socket pair") {
    auto [a, b] = stream_pair();
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        wire::Frame f;
        f.type = static_cast<wire::FrameType>(1 + rng.below(7));
        f.payload.resize(rng.below(2048));
        for (auto& byte : f.payload) byte = static_cast<std::uint8_t>(rng.below(256));
        wire::frame_write(a, f);
        auto got = wire::frame_read(b);
        REQUIRE(got.has_value());
        CHECK(got->type == f.type);
        CHECK(got->payload == f.payload);
    }
    a.close();
    CHECK_FALSE(wire::frame_read(b).has_value()); // clean EOF
}

TEST_CASE("oversize and malformed headers are rejected before allocation") {
    {
        auto [a, b] = stream_pair();
        // declare a 17 MiB payload; reader must bail on the header alone
        std::uint8_t header[5] = {2, 0, 0, 0x10, 0x01}; // length = 0x01100000
        a.write_all(header, 5);
        CHECK_THROWS_AS(wire::frame_read(b), ProtocolError);
    }
    {
        auto [a, b] = stream_pair();
        std::uint8_t header[5] = {0, 4, 0, 0, 0}; // frame type 0 is invalid
        a.write_all(header, 5);
        CHECK_THROWS_AS(wire::frame_read(b), ProtocolError);
    }
    {
        auto [a, b] = stream_pair();
        std::uint8_t partial[3] = {4, 10, 0}; // truncated mid-header
        a.write_all(partial, 3);
        a.close();
        CHECK_THROWS_AS(wire::frame_read(b), ProtocolError);
    }
}

TEST_CASE("server answers HELLO and classifies features and raw images") {
    wire::DecoderServer server(make_context(5), "127.0.0.1", 0);
    auto enc = make_encoder(5); // same seed: matches the server's model

    auto stream = wire::TcpStream::connect("127.0.0.1", server.port());
    stream.set_receive_timeout(10.0);
    wire::frame_write(stream, hello_frame());
    auto hello = wire::frame_read(stream);
    REQUIRE(hello.has_value());
    CHECK(hello->type == wire::FrameType::Hello);
    REQUIRE(hello->payload.size() == 2);
    CHECK(hello->payload[0] == wire::kProtocolVersion);
    CHECK(hello->payload[1] == 1);

    Rng rng(88);
    std::vector<float> px(1024);
    for (float& v : px) v = rng.next_float();
    auto expected = nn::predict(make_context(5).full_model, px);

    // semantic path
    auto fv = codec::encode_features(enc, px, 42);
    wire::frame_write(stream, {wire::FrameType::Features, codec::write_sff(fv)});
    auto res = wire::frame_read(stream);
    REQUIRE(res.has_value());
    REQUIRE(res->type == wire::FrameType::Result);
    auto payload = wire::decode_result(res->payload);
    CHECK(payload.frame_id == 42);
    CHECK(payload.class_index == expected.class_index);
    CHECK(payload.confidence == doctest::Approx(expected.confidence).epsilon(1e-5));
    CHECK(payload.decision == wire::kNoAgentDecision); // no agent loaded

    // raw path must agree on the class (pixels go through u8 quantization)
    wire::frame_write(stream, {wire::FrameType::RawImage, wire::encode_raw_image(px, 43)});
    auto res2 = wire::frame_read(stream);
    REQUIRE(res2.has_value());
    auto payload2 = wire::decode_result(res2->payload);
    CHECK(payload2.frame_id == 43);
    CHECK(payload2.class_index == expected.class_index);

    // metrics report covers both frames
    wire::frame_write(stream, {wire::FrameType::MetricsReq, {}});
    auto metrics = wire::frame_read(stream);
    REQUIRE(metrics.has_value());
    CHECK(metrics->type == wire::FrameType::MetricsResp);
    std::string csv(metrics->payload.begin(), metrics->payload.end());
    int lines = 0;
    for (char c : csv) {
        if (c == '\n') ++lines;
    }
    CHECK(lines >= 3); // header + 2 data rows
    CHECK(csv.find("semantic") != std::string::npos);
    CHECK(csv.find("raw") != std::string::npos);

    wire::frame_write(stream, {wire::FrameType::Bye, {}});
    server.stop();
}

TEST_CASE("server replies with the error sentinel on malformed features") {
    wire::DecoderServer server(make_context(2), "127.0.0.1", 0);
    auto stream = wire::TcpStream::connect("127.0.0.1", server.port());
    stream.set_receive_timeout(10.0);
    wire::frame_write(stream, hello_frame());
    REQUIRE(wire::frame_read(stream).has_value());

    wire::frame_write(stream, {wire::FrameType::Features, {0xDE, 0xAD, 0xBE, 0xEF}});
    auto res = wire::frame_read(stream);
    REQUIRE(res.has_value());
    REQUIRE(res->type == wire::FrameType::Result);
    CHECK(wire::decode_result(res->payload).class_index == wire::kErrorClass);

    // the connection still works afterwards
    wire::frame_write(stream, {wire::FrameType::MetricsReq, {}});
    CHECK(wire::frame_read(stream).has_value());
    server.stop();
}

TEST_CASE("server survives garbage connections and keeps listening") {
    wire::DecoderServer server(make_context(3), "127.0.0.1", 0);
    Rng rng(404);
    for (int trial = 0; trial < 20; ++trial) {
        auto junk = wire::TcpStream::connect("127.0.0.1", server.port());
        std::vector<std::uint8_t> noise(1 + rng.below(64));
        for (auto& b : noise) b = static_cast<std::uint8_t>(rng.below(256));
        try {
            junk.write_all(noise.data(), noise.size());
        } catch (const ProtocolError&) {
            // server may reset the connection mid-write; that's fine
        }
        junk.close();
    }
    // a well-formed session still works
    auto stream = wire::TcpStream::connect("127.0.0.1", server.port());
    stream.set_receive_timeout(10.0);
    wire::frame_write(stream, hello_frame());
    auto hello = wire::frame_read(stream);
    CHECK(hello.has_value());
    server.stop();
}

TEST_CASE("bench: byte accounting and result ordering") {
    wire::DecoderServer server(make_context(8), "127.0.0.1", 0);
    auto enc = make_encoder(8);
    auto data = dataset::synth_generate(4, 1, 0.1f, 9);
    REQUIRE(data.size() == 4);
    data.samples.resize(1);

    auto raw = wire::run_bench("127.0.0.1", server.port(), data, wire::Scenario::Single,
                               wire::Mode::Raw);
    CHECK_FALSE(raw.partial);
    CHECK(raw.total_bytes == 1033); // 5-byte frame header + 1028 payload
    REQUIRE(raw.results.size() == 1);
    REQUIRE(raw.per_frame_times.size() == 1);
    CHECK(raw.classify_times.size() == 1);

    auto sem = wire::run_bench("127.0.0.1", server.port(), data, wire::Scenario::Single,
                               wire::Mode::Semantic, &enc);
    CHECK_FALSE(sem.partial);
    CHECK(sem.total_bytes == 64); // 5-byte frame header + 59-byte SFF1
    REQUIRE(sem.results.size() == 1);
    CHECK(sem.results[0].class_index == raw.results[0].class_index);

    // multi-frame run: results come back in frame order
    auto video = dataset::synth_generate(4, 8, 0.1f, 10);
    auto multi = wire::run_bench("127.0.0.1", server.port(), video, wire::Scenario::Single,
                                 wire::Mode::Semantic, &enc, 4);
    REQUIRE(multi.results.size() == 1);

    server.stop();

    CHECK_THROWS_AS(wire::run_bench("127.0.0.1", 1, data, wire::Scenario::Single,
                                    wire::Mode::Semantic, nullptr),
                    ContractError); // Semantic mode requires an encoder
}

TEST_CASE("report_csv layout") {
    wire::BenchReport rep;
    rep.mode = wire::Mode::Semantic;
    rep.scenario = wire::Scenario::Single;
    CHECK(wire::report_csv(rep) ==
          "frame_id,mode,bytes,send_time_s,classify_time_s,class\n");

    rep.results.push_back({1, 2, 0.5f, 0, 40, wire::kNoAgentDecision});
    rep.per_frame_times = {0.001};
    rep.classify_times = {0.0005};
    rep.total_bytes = 64;
    std::string csv = wire::report_csv(rep);
    CHECK(csv.find("1,semantic,64,") != std::string::npos);
    CHECK(csv.find("summary,semantic,64,") != std::string::npos);
}

TEST_CASE("parse_addr") {
    auto [host, port] = wire::parse_addr("localhost:9000");
    CHECK(host == "127.0.0.1");
    CHECK(port == 9000);
    auto [h2, p2] = wire::parse_addr("10.0.0.5:80");
    CHECK(h2 == "10.0.0.5");
    CHECK(p2 == 80);
    CHECK_THROWS_AS(wire::parse_addr("nocolon"), ContractError);
    CHECK_THROWS_AS(wire::parse_addr("host:99999"), ContractError);
}
