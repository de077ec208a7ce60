#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "semlink/common.hpp"

namespace semlink::nn {

enum class Activation : std::uint8_t { ReLU = 0, Softmax = 1, Linear = 2 };
enum class Loss { CrossEntropy, SquaredError };

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data; // row-major, rows*cols

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct DenseLayer {
    Matrix weights;          // out x in
    std::vector<float> bias; // out
    Activation activation = Activation::ReLU;

    std::size_t in_dim() const { return weights.cols; }
    std::size_t out_dim() const { return weights.rows; }
};

struct ModelWeights {
    std::vector<DenseLayer> layers;
    float alpha = 0.1f;
    std::uint64_t seed = 0;

    std::size_t input_dim() const { return layers.front().in_dim(); }
    std::size_t output_dim() const { return layers.back().out_dim(); }
};

// z and a per layer; post[0] is the input vector, so post has layers+1 entries.
struct ForwardTrace {
    std::vector<std::vector<float>> pre;
    std::vector<std::vector<float>> post;
};

struct LayerGradients {
    Matrix d_weights;
    std::vector<float> d_bias;
};

struct Gradients {
    std::vector<LayerGradients> layers;
};

struct TrainSet {
    std::size_t input_dim = 0;
    std::size_t class_count = 0;
    std::vector<float> inputs; // n * input_dim, row-major
    std::vector<std::uint16_t> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const float> input(std::size_t i) const {
        return std::span<const float>(inputs).subspan(i * input_dim, input_dim);
    }
};

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

struct Prediction {
    std::size_t class_index = 0;
    float confidence = 0.0f;
};

ModelWeights init_weights(const std::vector<std::size_t>& shape,
                          const std::vector<Activation>& activations,
                          std::uint64_t seed, float alpha);

std::vector<float> forward(const ModelWeights& model, std::span<const float> input,
                           ForwardTrace* trace = nullptr);

Gradients backward(const ModelWeights& model, const ForwardTrace& trace,
                   std::span<const float> target, Loss loss);

// Loss value for a single sample, accumulated in double.
double loss_value(std::span<const float> output, std::span<const float> target, Loss loss);

void sgd_update(ModelWeights& model, const Gradients& grads);

// In-place helpers used by minibatch training.
void accumulate(Gradients& sum, const Gradients& g);
void scale(Gradients& g, float factor);
Gradients zero_gradients(const ModelWeights& model);

std::vector<EpochStats> train(ModelWeights& model, const TrainSet& data,
                              std::size_t epochs, std::size_t batch_size);

Prediction predict(const ModelWeights& model, std::span<const float> input);

double evaluate_accuracy(const ModelWeights& model, const TrainSet& data);

// SWF1 container, little-endian:
//   "SWF1" | version u8=1 | alpha f32 | seed u64 | layer_count u8 |
//   per layer: activation u8 | rows u32 | cols u32 | rows*cols f32 | rows f32 (bias)
std::size_t save_weights(const ModelWeights& model, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_weights(const ModelWeights& model);
ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes);

bool bitwise_equal(const ModelWeights& a, const ModelWeights& b);

} // namespace semlink::nn
