#include "semlink/wire.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

namespace semlink::wire {

namespace {

double monotonic_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32_le(std::vector<std::uint8_t>& v, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

struct MetricsRow {
    std::uint32_t frame_id = 0;
    Mode mode = Mode::Raw;
    std::size_t bytes = 0;
    double classify_time = 0.0;
    std::uint32_t class_index = 0;
};

} // namespace

std::vector<std::uint8_t> frame_serialize(const Frame& frame) {
    if (frame.payload.size() > kMaxFrameBytes) throw ProtocolError("frame payload oversize");
    std::vector<std::uint8_t> out;
    out.reserve(5 + frame.payload.size());
    out.push_back(static_cast<std::uint8_t>(frame.type));
    put_u32_le(out, static_cast<std::uint32_t>(frame.payload.size()));
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    return out;
}

TcpStream::TcpStream(int fd) : fd_(fd) {
    if (fd_ >= 0) set_nodelay(fd_);
}

TcpStream::~TcpStream() { close(); }

TcpStream::TcpStream(TcpStream&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

TcpStream& TcpStream::operator=(TcpStream&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

TcpStream TcpStream::connect(const std::string& host, std::uint16_t port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw ProtocolError("bad address: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw ProtocolError("connect to " + host + ":" + std::to_string(port) + " failed: " +
                            std::strerror(errno));
    }
    return TcpStream(fd);
}

void TcpStream::set_receive_timeout(double seconds) {
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(seconds);
    tv.tv_usec = static_cast<suseconds_t>((seconds - std::floor(seconds)) * 1e6);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

void TcpStream::write_all(const std::uint8_t* data, std::size_t n) {
    std::size_t sent = 0;
    while (sent < n) {
        ssize_t rc = ::send(fd_, data + sent, n - sent, MSG_NOSIGNAL);
        if (rc <= 0) throw ProtocolError(std::string("send failed: ") + std::strerror(errno));
        sent += static_cast<std::size_t>(rc);
    }
}

bool TcpStream::read_all(std::uint8_t* data, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        ssize_t rc = ::recv(fd_, data + got, n - got, 0);
        if (rc == 0) {
            if (got == 0) return false; // clean disconnect
            throw ProtocolError("stream truncated mid-frame");
        }
        if (rc < 0) throw ProtocolError(std::string("recv failed: ") + std::strerror(errno));
        got += static_cast<std::size_t>(rc);
    }
    return true;
}

void TcpStream::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ProtocolError("socket() failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        fd_ = -1;
        throw ProtocolError("bad bind address: " + host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(fd_, 16) != 0) {
        int err = errno;
        ::close(fd_);
        fd_ = -1;
        throw ProtocolError("bind/listen on " + host + ":" + std::to_string(port) +
                            " failed: " + std::strerror(err));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() { close(); }

std::optional<TcpStream> TcpListener::accept() {
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) return std::nullopt;
    return TcpStream(fd);
}

void TcpListener::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

void frame_write(TcpStream& stream, const Frame& frame) {
    std::vector<std::uint8_t> bytes = frame_serialize(frame);
    stream.write_all(bytes.data(), bytes.size());
}

std::optional<Frame> frame_read(TcpStream& stream) {
    std::uint8_t header[5];
    if (!stream.read_all(header, 1)) return std::nullopt;
    if (!stream.read_all(header + 1, 4)) throw ProtocolError("stream truncated in header");
    if (header[0] < 1 || header[0] > 7) {
        throw ProtocolError("unknown frame type " + std::to_string(header[0]));
    }
    std::uint32_t length = get_u32_le(header + 1);
    if (length > kMaxFrameBytes) { // reject before allocating
        throw ProtocolError("declared frame length " + std::to_string(length) +
                            " exceeds 16 MiB cap");
    }
    Frame frame;
    frame.type = static_cast<FrameType>(header[0]);
    frame.payload.resize(length);
    if (length > 0 && !stream.read_all(frame.payload.data(), length)) {
        throw ProtocolError("stream truncated in payload");
    }
    return frame;
}

std::vector<std::uint8_t> encode_result(const ResultPayload& r) {
    std::vector<std::uint8_t> out;
    out.reserve(18);
    put_u32_le(out, r.frame_id);
    put_u32_le(out, r.class_index);
    std::uint32_t conf_bits;
    std::memcpy(&conf_bits, &r.confidence, 4);
    put_u32_le(out, conf_bits);
    out.push_back(r.lane);
    put_u32_le(out, r.position);
    out.push_back(r.decision);
    return out;
}

ResultPayload decode_result(std::span<const std::uint8_t> payload) {
    if (payload.size() != 18) {
        throw ProtocolError("RESULT payload must be 18 bytes, got " +
                            std::to_string(payload.size()));
    }
    ResultPayload r;
    r.frame_id = get_u32_le(&payload[0]);
    r.class_index = get_u32_le(&payload[4]);
    std::uint32_t conf_bits = get_u32_le(&payload[8]);
    std::memcpy(&r.confidence, &conf_bits, 4);
    r.lane = payload[12];
    r.position = get_u32_le(&payload[13]);
    r.decision = payload[17];
    return r;
}

std::vector<std::uint8_t> encode_raw_image(std::span<const float> pixels,
                                           std::uint32_t frame_id) {
    if (pixels.size() != dataset::kPixelCount) {
        throw ContractError("raw image payload needs exactly 1024 pixels");
    }
    std::vector<std::uint8_t> out;
    out.reserve(pixels.size() + 4);
    for (float p : pixels) {
        out.push_back(static_cast<std::uint8_t>(
            std::clamp(std::lround(p * 255.0f), 0l, 255l)));
    }
    put_u32_le(out, frame_id);
    return out;
}

DecoderServer::DecoderServer(ServerContext ctx, const std::string& host, std::uint16_t port)
    : ctx_(std::move(ctx)), listener_(host, port) {
    accept_thread_ = std::thread([this] { accept_loop(); });
}

DecoderServer::~DecoderServer() {
    stop();
}

std::uint16_t DecoderServer::port() const { return listener_.port(); }

void DecoderServer::stop() {
    bool was_stopping = stopping_.exchange(true);
    listener_.close();
    if (!was_stopping) {
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> threads;
        {
            // force pending reads on live connections to return EOF; join
            // outside the lock so handlers can unregister themselves
            std::lock_guard<std::mutex> lock(threads_mutex_);
            for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
            threads.swap(conn_threads_);
        }
        for (std::thread& t : threads) {
            if (t.joinable()) t.join();
        }
        std::lock_guard<std::mutex> lock(threads_mutex_);
        conn_fds_.clear();
    }
}

void DecoderServer::wait() {
    if (accept_thread_.joinable()) accept_thread_.join();
}

void DecoderServer::accept_loop() {
    while (!stopping_) {
        std::optional<TcpStream> stream = listener_.accept();
        if (!stream) break;
        std::lock_guard<std::mutex> lock(threads_mutex_);
        conn_fds_.push_back(stream->native_handle());
        conn_threads_.emplace_back([this, s = std::move(*stream)]() mutable {
            int fd = s.native_handle();
            handle_connection(s);
            {
                // unregister before closing so stop() never shutdowns a reused fd
                std::lock_guard<std::mutex> guard(threads_mutex_);
                conn_fds_.erase(std::remove(conn_fds_.begin(), conn_fds_.end(), fd),
                                conn_fds_.end());
            }
            s.close();
        });
    }
}

void DecoderServer::handle_connection(TcpStream& stream) {
    std::vector<MetricsRow> metrics;
    try {
        for (;;) {
            std::optional<Frame> frame = frame_read(stream);
            if (!frame || frame->type == FrameType::Bye) break;

            switch (frame->type) {
            case FrameType::Hello: {
                std::uint8_t requested = frame->payload.size() >= 2 ? frame->payload[1] : 1;
                Frame reply{FrameType::Hello,
                            {kProtocolVersion, std::max<std::uint8_t>(1, requested)}};
                frame_write(stream, reply);
                break;
            }
            case FrameType::RawImage:
            case FrameType::Features: {
                const bool raw = frame->type == FrameType::RawImage;
                ResultPayload result;
                double t0 = monotonic_seconds();
                try {
                    std::size_t class_index;
                    float confidence;
                    if (raw) {
                        if (frame->payload.size() != dataset::kPixelCount + 4) {
                            throw ProtocolError("RAW_IMAGE payload must be 1028 bytes");
                        }
                        result.frame_id = get_u32_le(&frame->payload[dataset::kPixelCount]);
                        std::vector<float> pixels(dataset::kPixelCount);
                        for (std::size_t i = 0; i < dataset::kPixelCount; ++i) {
                            pixels[i] = frame->payload[i] / 255.0f;
                        }
                        nn::Prediction p = nn::predict(ctx_.full_model, pixels);
                        class_index = p.class_index;
                        confidence = p.confidence;
                    } else {
                        codec::FeatureVector fv = codec::read_sff(frame->payload);
                        result.frame_id = fv.frame_id;
                        codec::Classification c = codec::classify_features(ctx_.decoder, fv);
                        class_index = c.class_index;
                        confidence = c.confidence;
                    }
                    const codec::ClassMapEntry& rb_entry =
                        ctx_.decoder.class_map.lookup(class_index);
                    result.class_index = static_cast<std::uint32_t>(class_index);
                    result.confidence = confidence;
                    result.lane = static_cast<std::uint8_t>(rb_entry.lane);
                    result.position = static_cast<std::uint32_t>(rb_entry.position);
                    if (ctx_.agent) {
                        sim::Roadblock rb{rb_entry.lane, rb_entry.position};
                        sim::Episode ep(ctx_.sim_cfg, rb, ctx_.sim_cfg.seed, true);
                        std::array<float, 5> s =
                            dqn::normalize_state(ep.state(), ctx_.sim_cfg);
                        result.decision = static_cast<std::uint8_t>(
                            dqn::greedy_action(*ctx_.agent, s));
                    }
                } catch (const std::exception&) {
                    result.class_index = kErrorClass;
                    result.confidence = 0.0f;
                    result.lane = 0;
                    result.position = 0;
                    result.decision = kNoAgentDecision;
                }
                double elapsed = monotonic_seconds() - t0;
                metrics.push_back({result.frame_id, raw ? Mode::Raw : Mode::Semantic,
                                   5 + frame->payload.size(), elapsed, result.class_index});
                frame_write(stream, Frame{FrameType::Result, encode_result(result)});
                break;
            }
            case FrameType::MetricsReq: {
                std::ostringstream csv;
                csv << "frame_id,mode,bytes,classify_time_s,class\n";
                for (const MetricsRow& row : metrics) {
                    csv << row.frame_id << ',' << mode_name(row.mode) << ',' << row.bytes
                        << ',' << row.classify_time << ',' << row.class_index << '\n';
                }
                std::string text = csv.str();
                Frame reply{FrameType::MetricsResp,
                            std::vector<std::uint8_t>(text.begin(), text.end())};
                frame_write(stream, reply);
                break;
            }
            default:
                throw ProtocolError("unexpected frame type on server");
            }
        }
    } catch (const std::exception& e) {
        // log and keep serving other connections
        std::cerr << "semlink serve: connection error: " << e.what() << "\n";
        try {
            frame_write(stream, Frame{FrameType::Bye, {}});
        } catch (...) {
        }
    }
}

const char* mode_name(Mode m) { return m == Mode::Raw ? "raw" : "semantic"; }

const char* scenario_name(Scenario s) {
    switch (s) {
    case Scenario::Single: return "single";
    case Scenario::Video30s: return "30s";
    case Scenario::Video60s: return "60s";
    }
    return "?";
}

std::size_t scenario_frames(Scenario s) { return static_cast<std::size_t>(s); }

double frame_timeout_seconds() {
    if (const char* env = std::getenv("SEMLINK_TIMEOUT_S")) {
        double v = std::atof(env);
        if (v > 0.0) return v;
    }
    return 5.0;
}

BenchReport run_bench(const std::string& host, std::uint16_t port,
                      const dataset::Dataset& data, Scenario scenario, Mode mode,
                      const codec::EncoderHalf* encoder, int pipeline_depth) {
    if (data.size() == 0) throw ContractError("bench needs a non-empty dataset");
    if (mode == Mode::Semantic && encoder == nullptr) {
        throw ContractError("semantic mode requires an encoder");
    }
    if (pipeline_depth < 1) throw ContractError("pipeline depth must be >= 1");

    TcpStream stream = TcpStream::connect(host, port);
    stream.set_receive_timeout(frame_timeout_seconds());

    frame_write(stream, Frame{FrameType::Hello,
                              {kProtocolVersion, static_cast<std::uint8_t>(
                                                     std::min(pipeline_depth, 255))}});
    std::optional<Frame> hello = frame_read(stream);
    if (!hello || hello->type != FrameType::Hello || hello->payload.size() < 2 ||
        hello->payload[0] != kProtocolVersion) {
        throw ProtocolError("handshake failed");
    }
    int depth = std::max<int>(1, std::min<int>(pipeline_depth, hello->payload[1]));

    const std::size_t n_frames = scenario_frames(scenario);
    BenchReport report;
    report.scenario = scenario;
    report.mode = mode;
    report.per_frame_times.resize(n_frames, 0.0);

    // pre-encode all frames so only wire + server compute land in the window
    std::vector<std::vector<std::uint8_t>> frames(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i) {
        const dataset::Sample& sample = data.samples[i % data.size()];
        Frame f;
        if (mode == Mode::Raw) {
            f.type = FrameType::RawImage;
            f.payload = encode_raw_image(sample.pixels, static_cast<std::uint32_t>(i));
        } else {
            f.type = FrameType::Features;
            codec::FeatureVector fv =
                codec::encode_features(*encoder, sample.pixels, static_cast<std::uint32_t>(i));
            f.payload = codec::write_sff(fv);
        }
        frames[i] = frame_serialize(f);
    }

    std::vector<double> send_times(n_frames, 0.0);
    std::size_t sent = 0, received = 0;
    try {
        while (received < n_frames) {
            while (sent < n_frames &&
                   sent - received < static_cast<std::size_t>(depth)) {
                send_times[sent] = monotonic_seconds();
                stream.write_all(frames[sent].data(), frames[sent].size());
                report.total_bytes += frames[sent].size();
                ++sent;
            }
            std::optional<Frame> reply = frame_read(stream);
            if (!reply || reply->type != FrameType::Result) {
                throw ProtocolError("expected RESULT frame");
            }
            report.per_frame_times[received] = monotonic_seconds() - send_times[received];
            ResultPayload r = decode_result(reply->payload);
            report.results.push_back(r);
            report.classifications.emplace_back(r.frame_id, r.class_index);
            ++received;
        }
    } catch (const std::exception& e) {
        report.partial = true;
        report.per_frame_times.resize(received);
        std::cerr << "semlink bench: aborted after " << received << " frames: " << e.what()
                  << "\n";
    }

    if (!report.partial) {
        // join server-side classify times by frame_id
        frame_write(stream, Frame{FrameType::MetricsReq, {}});
        std::optional<Frame> resp = frame_read(stream);
        report.classify_times.assign(n_frames, 0.0);
        if (resp && resp->type == FrameType::MetricsResp) {
            std::istringstream csv(
                std::string(resp->payload.begin(), resp->payload.end()));
            std::string line;
            std::getline(csv, line); // header
            while (std::getline(csv, line)) {
                std::istringstream row(line);
                std::string fid, m, bytes, ctime;
                if (std::getline(row, fid, ',') && std::getline(row, m, ',') &&
                    std::getline(row, bytes, ',') && std::getline(row, ctime, ',')) {
                    std::size_t id = std::stoul(fid);
                    if (id < n_frames) report.classify_times[id] = std::stod(ctime);
                }
            }
        }
        frame_write(stream, Frame{FrameType::Bye, {}});
    }

    for (double t : report.per_frame_times) report.wall_time += t;
    return report;
}

std::string report_csv(const BenchReport& report) {
    std::ostringstream out;
    out << "frame_id,mode,bytes,send_time_s,classify_time_s,class\n";
    const std::size_t per_frame_bytes =
        report.results.empty() ? 0 : report.total_bytes / std::max<std::size_t>(1, report.results.size());
    std::vector<std::size_t> order(report.results.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return report.results[a].frame_id < report.results[b].frame_id;
    });
    double send_sum = 0.0, classify_sum = 0.0;
    for (std::size_t i : order) {
        const ResultPayload& r = report.results[i];
        double send_t = i < report.per_frame_times.size() ? report.per_frame_times[i] : 0.0;
        double cls_t = r.frame_id < report.classify_times.size()
                           ? report.classify_times[r.frame_id]
                           : 0.0;
        send_sum += send_t;
        classify_sum += cls_t;
        out << r.frame_id << ',' << mode_name(report.mode) << ',' << per_frame_bytes << ','
            << send_t << ',' << cls_t << ',' << r.class_index << '\n';
    }
    if (!report.results.empty()) {
        out << "summary," << mode_name(report.mode) << ',' << report.total_bytes << ','
            << send_sum << ',' << classify_sum << ',' << report.results.size();
        if (report.partial) out << " (partial)";
        out << '\n';
    }
    return out.str();
}

void emit_report(const BenchReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << report_csv(report);
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::pair<std::string, std::uint16_t> parse_addr(const std::string& addr) {
    std::size_t colon = addr.rfind(':');
    if (colon == std::string::npos) {
        throw ContractError("address must be host:port, got " + addr);
    }
    std::string host = addr.substr(0, colon);
    if (host.empty() || host == "localhost") host = "127.0.0.1";
    int port = std::stoi(addr.substr(colon + 1));
    if (port < 0 || port > 65535) throw ContractError("port out of range in " + addr);
    return {host, static_cast<std::uint16_t>(port)};
}

} // namespace semlink::wire
