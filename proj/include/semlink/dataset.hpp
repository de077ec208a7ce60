#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semlink/nn.hpp"

namespace semlink::dataset {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kPixelCount = kImageSide * kImageSide;

struct Sample {
    std::vector<float> pixels; // 1024 values in [0,1], row-major
    std::uint16_t label = 0;
};

struct Dataset {
    std::vector<Sample> samples;
    std::uint16_t class_count = 0;
    std::string name;

    std::size_t size() const { return samples.size(); }
};

// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<std::uint8_t> data;
};

// Grayscale (ITU-R 601 luminance), box-filter resize to 32x32, scale to [0,1].
std::vector<float> preprocess_image(const Image& raw);

// 1025-element record: 1024 pixels then the label as a float.
std::vector<float> encode_record(const Sample& sample);
Sample decode_record(std::span<const float> record);

// Binary PGM (P5) / PPM (P6), maxval <= 255.
Image read_pnm(const std::filesystem::path& path);

// Manifest: one "relative/path<TAB>label" per line, UTF-8, LF.
Dataset load_dataset(const std::filesystem::path& dir, const std::filesystem::path& manifest);

Dataset synth_generate(int class_count, int per_class, float noise_sigma, std::uint64_t seed);

// The noise-free class prototype used by synth_generate.
std::vector<float> synth_prototype(int class_index);

// Seeded shuffle + split; second element holds holdout_frac of the samples.
std::pair<Dataset, Dataset> shuffle_split(const Dataset& data, double holdout_frac,
                                          std::uint64_t seed);

// SDS1 binary cache: "SDS1" | u32 sample count | u16 class_count |
// per sample 1024 f32 + u16 label, little-endian.
void save_cache(const Dataset& data, const std::filesystem::path& path);
Dataset load_cache(const std::filesystem::path& path);

nn::TrainSet to_trainset(const Dataset& data);

} // namespace semlink::dataset
