#include "semlink/codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

namespace semlink::codec {

namespace {

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

// raw DEFLATE (RFC 1951), no zlib wrapper
std::vector<std::uint8_t> deflate_raw(std::span<const std::uint8_t> in) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, -15, 8,
                     Z_DEFAULT_STRATEGY) != Z_OK) {
        throw std::runtime_error("deflateInit2 failed");
    }
    std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())));
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    int rc = deflate(&zs, Z_FINISH);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw std::runtime_error("deflate failed");
    out.resize(zs.total_out);
    return out;
}

std::vector<std::uint8_t> inflate_raw(std::span<const std::uint8_t> in,
                                      std::size_t expected_size) {
    z_stream zs{};
    if (inflateInit2(&zs, -15) != Z_OK) throw std::runtime_error("inflateInit2 failed");
    std::vector<std::uint8_t> out(expected_size);
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    int rc = inflate(&zs, Z_FINISH);
    std::size_t produced = zs.total_out;
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || produced != expected_size) {
        throw FormatError("DEFLATE payload does not decompress to declared size",
                          kSffHeaderBytes);
    }
    return out;
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32_le(std::vector<std::uint8_t>& v, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

} // namespace

const ClassMapEntry& ClassMap::lookup(std::size_t class_index) const {
    if (class_index >= entries.size()) {
        throw ContractError("class " + std::to_string(class_index) + " missing from class map");
    }
    return entries[class_index];
}

std::pair<EncoderHalf, DecoderHalf> split_model(const nn::ModelWeights& model,
                                                std::size_t split_index) {
    if (split_index < 1 || split_index >= model.layers.size()) {
        throw ContractError("split_index must be in [1, layer_count)");
    }
    if (model.layers[split_index - 1].activation != nn::Activation::ReLU) {
        throw ContractError("split point must sit after a ReLU layer");
    }
    if (model.layers.back().activation != nn::Activation::Softmax) {
        throw ContractError("split_model requires a softmax classifier");
    }
    EncoderHalf enc;
    enc.model.alpha = model.alpha;
    enc.model.seed = model.seed;
    enc.model.layers.assign(model.layers.begin(),
                            model.layers.begin() + static_cast<std::ptrdiff_t>(split_index));
    DecoderHalf dec;
    dec.model.alpha = model.alpha;
    dec.model.seed = model.seed;
    dec.model.layers.assign(model.layers.begin() + static_cast<std::ptrdiff_t>(split_index),
                            model.layers.end());
    return {std::move(enc), std::move(dec)};
}

FeatureVector encode_features(const EncoderHalf& encoder, std::span<const float> pixels,
                              std::uint32_t frame_id) {
    FeatureVector fv;
    fv.values = nn::forward(encoder.model, pixels);
    fv.frame_id = frame_id;
    return fv;
}

Classification classify_features(const DecoderHalf& decoder, const FeatureVector& fv) {
    nn::Prediction p = nn::predict(decoder.model, fv.values);
    Classification c;
    c.class_index = p.class_index;
    c.confidence = p.confidence;
    c.roadblock = decoder.class_map.lookup(p.class_index);
    return c;
}

std::vector<std::uint8_t> write_sff(const FeatureVector& fv, std::uint8_t flags) {
    if (fv.values.empty()) throw ContractError("empty feature vector");
    std::vector<std::uint8_t> payload(fv.values.size() * 4);
    static_assert(sizeof(float) == 4);
    std::memcpy(payload.data(), fv.values.data(), payload.size());
    std::uint32_t crc = crc32_of(payload);
    if (flags & kSffFlagDeflate) payload = deflate_raw(payload);

    std::vector<std::uint8_t> out;
    out.reserve(kSffHeaderBytes + payload.size());
    out.insert(out.end(), {'S', 'F', 'F', '1'});
    out.push_back(1);     // version
    out.push_back(flags); // bit0 = DEFLATE
    out.push_back(0);     // dtype f32
    put_u32_le(out, static_cast<std::uint32_t>(fv.values.size()));
    put_u32_le(out, fv.frame_id);
    put_u32_le(out, crc);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

FeatureVector read_sff(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "SFF1", 4) != 0) {
        throw FormatError("bad magic, expected SFF1", 0);
    }
    if (bytes.size() < kSffHeaderBytes) {
        throw FormatError("truncated SFF1 header", bytes.size());
    }
    if (bytes[4] != 1) throw FormatError("unsupported SFF1 version", 4);
    std::uint8_t flags = bytes[5];
    if (flags & ~kSffFlagDeflate) throw FormatError("unknown flag bits set", 5);
    if (bytes[6] != 0) throw FormatError("unsupported dtype, expected f32 (0)", 6);
    std::uint32_t dim0 = get_u32_le(&bytes[7]);
    std::uint32_t frame_id = get_u32_le(&bytes[11]);
    std::uint32_t crc = get_u32_le(&bytes[15]);
    if (dim0 == 0 || dim0 > (1u << 24)) throw FormatError("dim0 out of range", 7);

    std::span<const std::uint8_t> body = bytes.subspan(kSffHeaderBytes);
    std::vector<std::uint8_t> payload;
    if (flags & kSffFlagDeflate) {
        payload = inflate_raw(body, static_cast<std::size_t>(dim0) * 4);
    } else {
        if (body.size() != static_cast<std::size_t>(dim0) * 4) {
            throw FormatError("payload length mismatch: expected " +
                                  std::to_string(static_cast<std::size_t>(dim0) * 4) +
                                  " bytes, got " + std::to_string(body.size()),
                              kSffHeaderBytes);
        }
        payload.assign(body.begin(), body.end());
    }
    if (crc32_of(payload) != crc) throw FormatError("payload crc32 mismatch", 15);

    FeatureVector fv;
    fv.frame_id = frame_id;
    fv.values.resize(dim0);
    std::memcpy(fv.values.data(), payload.data(), payload.size());
    return fv;
}

ClassMap default_class_map(std::size_t class_count, int highway_length) {
    if (class_count < 1) throw ContractError("class_count must be >= 1");
    ClassMap map;
    const int lo = 20;
    const int hi = std::max(lo, highway_length - 20);
    const std::size_t rows = (class_count + 2) / 3; // ceil(count/3)
    const double spacing =
        rows > 1 ? static_cast<double>(highway_length - 40) / static_cast<double>(rows - 1)
                 : 0.0;
    for (std::size_t k = 0; k < class_count; ++k) {
        ClassMapEntry e;
        e.lane = static_cast<int>(k % 3);
        e.position = std::clamp(
            20 + static_cast<int>(std::floor(static_cast<double>(k / 3) * spacing)), lo, hi);
        map.entries.push_back(e);
    }
    return map;
}

void save_class_map(const ClassMap& map, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    for (std::size_t k = 0; k < map.entries.size(); ++k) {
        out << k << '\t' << map.entries[k].lane << '\t' << map.entries[k].position << '\n';
    }
}

ClassMap load_class_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    ClassMap map;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::size_t cls;
        ClassMapEntry e;
        if (!(ss >> cls >> e.lane >> e.position)) {
            throw FormatError("bad class-map line " + std::to_string(line_no), 0);
        }
        if (cls != map.entries.size()) {
            throw FormatError("class indices must be dense and in order (line " +
                                  std::to_string(line_no) + ")",
                              0);
        }
        if (e.lane < 0 || e.lane > 2) {
            throw FormatError("lane out of range on line " + std::to_string(line_no), 0);
        }
        map.entries.push_back(e);
    }
    if (map.entries.empty()) throw FormatError("empty class map", 0);
    return map;
}

} // namespace semlink::codec
