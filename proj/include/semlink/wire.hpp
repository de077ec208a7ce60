#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "semlink/codec.hpp"
#include "semlink/dataset.hpp"
#include "semlink/dqn.hpp"
#include "semlink/nn.hpp"
#include "semlink/sim.hpp"

namespace semlink::wire {

enum class FrameType : std::uint8_t {
    Hello = 1,
    RawImage = 2,
    Features = 3,
    Result = 4,
    MetricsReq = 5,
    MetricsResp = 6,
    Bye = 7,
};

inline constexpr std::size_t kMaxFrameBytes = 16ull * 1024 * 1024;
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint32_t kErrorClass = 0xFFFFFFFFu;
inline constexpr std::uint8_t kNoAgentDecision = 255;

struct Frame {
    FrameType type = FrameType::Bye;
    std::vector<std::uint8_t> payload;
};

// wire layout: type u8 | length u32 LE | payload
std::vector<std::uint8_t> frame_serialize(const Frame& frame);

// Blocking TCP stream, RAII over the fd. TCP_NODELAY is always set.
class TcpStream {
public:
    TcpStream() = default;
    explicit TcpStream(int fd);
    ~TcpStream();
    TcpStream(TcpStream&& other) noexcept;
    TcpStream& operator=(TcpStream&& other) noexcept;
    TcpStream(const TcpStream&) = delete;
    TcpStream& operator=(const TcpStream&) = delete;

    static TcpStream connect(const std::string& host, std::uint16_t port);
    void set_receive_timeout(double seconds);
    void write_all(const std::uint8_t* data, std::size_t n);
    // returns false on clean EOF at offset 0, throws on partial reads
    bool read_all(std::uint8_t* data, std::size_t n);
    void close();
    bool valid() const { return fd_ >= 0; }
    int native_handle() const { return fd_; }

private:
    int fd_ = -1;
};

class TcpListener {
public:
    TcpListener(const std::string& host, std::uint16_t port); // port 0 = ephemeral
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const { return port_; }
    std::optional<TcpStream> accept(); // nullopt once closed
    void close();

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

void frame_write(TcpStream& stream, const Frame& frame);
std::optional<Frame> frame_read(TcpStream& stream); // nullopt on clean EOF

struct ResultPayload {
    std::uint32_t frame_id = 0;
    std::uint32_t class_index = 0;
    float confidence = 0.0f;
    std::uint8_t lane = 0;
    std::uint32_t position = 0;
    std::uint8_t decision = kNoAgentDecision; // 0 keep, 1 change, 255 no agent
};

std::vector<std::uint8_t> encode_result(const ResultPayload& r);
ResultPayload decode_result(std::span<const std::uint8_t> payload);

std::vector<std::uint8_t> encode_raw_image(std::span<const float> pixels,
                                           std::uint32_t frame_id);

struct ServerContext {
    codec::DecoderHalf decoder;
    nn::ModelWeights full_model; // raw-mode baseline
    std::optional<dqn::QNetwork> agent;
    sim::HighwayConfig sim_cfg;
};

// Accepts connections until stopped; one thread per connection, frames on a
// connection handled strictly in order.
class DecoderServer {
public:
    DecoderServer(ServerContext ctx, const std::string& host, std::uint16_t port);
    ~DecoderServer();

    std::uint16_t port() const;
    void stop();
    void wait(); // blocks until stop() is called

private:
    ServerContext ctx_;
    TcpListener listener_;
    std::thread accept_thread_;
    std::vector<std::thread> conn_threads_;
    std::vector<int> conn_fds_; // live connections, so stop() can unblock them
    std::mutex threads_mutex_;
    std::atomic<bool> stopping_{false};

    void accept_loop();
    void handle_connection(TcpStream& stream);
};

enum class Scenario { Single = 1, Video30s = 900, Video60s = 1800 };
enum class Mode { Raw, Semantic };

const char* mode_name(Mode m);
const char* scenario_name(Scenario s);
std::size_t scenario_frames(Scenario s);

struct BenchReport {
    Scenario scenario = Scenario::Single;
    Mode mode = Mode::Raw;
    std::size_t total_bytes = 0;                 // bytes framed client->server
    double wall_time = 0.0;                      // sum of per-frame round trips
    std::vector<double> per_frame_times;         // send -> RESULT read, seconds
    std::vector<double> classify_times;          // server-reported, joined by frame_id
    std::vector<std::pair<std::uint32_t, std::uint32_t>> classifications;
    std::vector<ResultPayload> results;
    bool partial = false;
};

// SEMLINK_TIMEOUT_S overrides the 5 s per-frame timeout.
double frame_timeout_seconds();

BenchReport run_bench(const std::string& host, std::uint16_t port,
                      const dataset::Dataset& data, Scenario scenario, Mode mode,
                      const codec::EncoderHalf* encoder = nullptr, // required for Semantic
                      int pipeline_depth = 1);

std::string report_csv(const BenchReport& report);
void emit_report(const BenchReport& report, const std::filesystem::path& path);

std::pair<std::string, std::uint16_t> parse_addr(const std::string& addr);

} // namespace semlink::wire
