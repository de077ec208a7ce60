#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "semlink/nn.hpp"

namespace semlink::codec {

struct ClassMapEntry {
    int lane = 0;     // 0..2
    int position = 0; // cell index
};

struct ClassMap {
    std::vector<ClassMapEntry> entries; // indexed by class

    const ClassMapEntry& lookup(std::size_t class_index) const;
};

struct EncoderHalf {
    nn::ModelWeights model; // layer prefix, last activation ReLU
};

struct DecoderHalf {
    nn::ModelWeights model; // layer suffix, final activation Softmax
    ClassMap class_map;
};

struct FeatureVector {
    std::vector<float> values; // post-ReLU hidden activations, all >= 0
    std::uint32_t frame_id = 0;
};

struct Classification {
    std::size_t class_index = 0;
    float confidence = 0.0f;
    ClassMapEntry roadblock;
};

std::pair<EncoderHalf, DecoderHalf> split_model(const nn::ModelWeights& model,
                                                std::size_t split_index);

FeatureVector encode_features(const EncoderHalf& encoder, std::span<const float> pixels,
                              std::uint32_t frame_id);

Classification classify_features(const DecoderHalf& decoder, const FeatureVector& fv);

// SFF1 container, little-endian. 19-byte header:
//   "SFF1" | version u8=1 | flags u8 (bit0 = DEFLATE payload) | dtype u8=0 (f32) |
//   dim0 u32 | frame_id u32 | crc32 u32 (over uncompressed payload) | payload
inline constexpr std::uint8_t kSffFlagDeflate = 0x01;
inline constexpr std::size_t kSffHeaderBytes = 19;

std::vector<std::uint8_t> write_sff(const FeatureVector& fv, std::uint8_t flags = 0);
FeatureVector read_sff(std::span<const std::uint8_t> bytes);

ClassMap default_class_map(std::size_t class_count, int highway_length);

// Text config: one "class<TAB>lane<TAB>position" per line.
void save_class_map(const ClassMap& map, const std::filesystem::path& path);
ClassMap load_class_map(const std::filesystem::path& path);

} // namespace semlink::codec
