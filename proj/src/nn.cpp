#include "semlink/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace semlink::nn {

namespace {

void check_finite(std::span<const float> v, const char* what) {
    for (float x : v) {
        if (!std::isfinite(x)) {
            throw ContractError(std::string("non-finite value produced in ") + what);
        }
    }
}

std::vector<float> apply_activation(Activation act, const std::vector<float>& z) {
    std::vector<float> a(z.size());
    switch (act) {
    case Activation::ReLU:
        for (std::size_t i = 0; i < z.size(); ++i) a[i] = z[i] > 0.0f ? z[i] : 0.0f;
        break;
    case Activation::Softmax: {
        float m = *std::max_element(z.begin(), z.end());
        float sum = 0.0f;
        for (std::size_t i = 0; i < z.size(); ++i) {
            a[i] = std::exp(z[i] - m);
            sum += a[i];
        }
        for (std::size_t i = 0; i < z.size(); ++i) a[i] /= sum;
        break;
    }
    case Activation::Linear:
        a = z;
        break;
    }
    return a;
}

// little-endian byte writer/reader for SWF1
struct Writer {
    std::vector<std::uint8_t> bytes;
    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
};

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > bytes.size()) {
            throw FormatError(std::string("truncated file reading ") + what, pos);
        }
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return bytes[pos++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32(const char* what) {
        std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

} // namespace

ModelWeights init_weights(const std::vector<std::size_t>& shape,
                          const std::vector<Activation>& activations,
                          std::uint64_t seed, float alpha) {
    if (shape.size() < 2) {
        throw ContractError("invalid shape: need at least 2 layer sizes");
    }
    for (std::size_t s : shape) {
        if (s == 0) throw ContractError("invalid shape: zero-size layer");
    }
    if (activations.size() != shape.size() - 1) {
        throw ContractError("activation count must equal layer count");
    }
    if (alpha <= 0.0f) {
        throw ContractError("alpha must be positive");
    }
    for (std::size_t i = 0; i + 1 < activations.size(); ++i) {
        if (activations[i] != Activation::ReLU) {
            throw ContractError("hidden layers must use ReLU");
        }
    }

    ModelWeights model;
    model.alpha = alpha;
    model.seed = seed;
    Rng rng(seed);
    for (std::size_t k = 0; k + 1 < shape.size(); ++k) {
        DenseLayer layer;
        layer.activation = activations[k];
        layer.weights = Matrix(shape[k + 1], shape[k]);
        for (float& w : layer.weights.data) w = rng.next_float() - 0.5f;
        layer.bias.resize(shape[k + 1]);
        for (float& b : layer.bias) b = rng.next_float() - 0.5f;
        model.layers.push_back(std::move(layer));
    }
    return model;
}

std::vector<float> forward(const ModelWeights& model, std::span<const float> input,
                           ForwardTrace* trace) {
    if (input.size() != model.input_dim()) {
        throw ContractError("forward: input length " + std::to_string(input.size()) +
                            " != model input dim " + std::to_string(model.input_dim()));
    }
    std::vector<float> a(input.begin(), input.end());
    if (trace) {
        trace->pre.clear();
        trace->post.clear();
        trace->post.push_back(a);
    }
    for (const DenseLayer& layer : model.layers) {
        std::vector<float> z(layer.out_dim());
        for (std::size_t r = 0; r < layer.out_dim(); ++r) {
            const float* wrow = &layer.weights.data[r * layer.in_dim()];
            float acc = layer.bias[r];
            for (std::size_t c = 0; c < layer.in_dim(); ++c) acc += wrow[c] * a[c];
            z[r] = acc;
        }
        a = apply_activation(layer.activation, z);
        check_finite(a, "forward");
        if (trace) {
            trace->pre.push_back(std::move(z));
            trace->post.push_back(a);
        }
    }
    return a;
}

Gradients backward(const ModelWeights& model, const ForwardTrace& trace,
                   std::span<const float> target, Loss loss) {
    const std::size_t n_layers = model.layers.size();
    if (trace.pre.size() != n_layers || trace.post.size() != n_layers + 1) {
        throw ContractError("backward: trace does not match model");
    }
    if (target.size() != model.output_dim()) {
        throw ContractError("backward: target length mismatch");
    }
    Activation out_act = model.layers.back().activation;
    if (loss == Loss::CrossEntropy && out_act != Activation::Softmax) {
        throw ContractError("cross-entropy requires a softmax output layer");
    }
    if (loss == Loss::SquaredError && out_act != Activation::Linear) {
        throw ContractError("squared error requires a linear output layer");
    }

    Gradients grads = zero_gradients(model);

    // output delta is a - t for both softmax+CE and linear+SE
    std::vector<float> delta(model.output_dim());
    const std::vector<float>& out = trace.post.back();
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = out[i] - target[i];

    for (std::size_t k = n_layers; k-- > 0;) {
        const DenseLayer& layer = model.layers[k];
        const std::vector<float>& a_prev = trace.post[k];
        LayerGradients& lg = grads.layers[k];
        for (std::size_t r = 0; r < layer.out_dim(); ++r) {
            lg.d_bias[r] = delta[r];
            float* grow = &lg.d_weights.data[r * layer.in_dim()];
            for (std::size_t c = 0; c < layer.in_dim(); ++c) grow[c] = delta[r] * a_prev[c];
        }
        if (k == 0) break;
        // delta_prev = W^T * delta, then ReLU' of the previous pre-activation
        const DenseLayer& prev = model.layers[k - 1];
        if (prev.activation != Activation::ReLU) {
            throw ContractError("backward: hidden layers must be ReLU");
        }
        std::vector<float> delta_prev(layer.in_dim(), 0.0f);
        for (std::size_t r = 0; r < layer.out_dim(); ++r) {
            const float* wrow = &layer.weights.data[r * layer.in_dim()];
            for (std::size_t c = 0; c < layer.in_dim(); ++c) delta_prev[c] += wrow[c] * delta[r];
        }
        const std::vector<float>& z_prev = trace.pre[k - 1];
        for (std::size_t c = 0; c < delta_prev.size(); ++c) {
            if (z_prev[c] <= 0.0f) delta_prev[c] = 0.0f;
        }
        delta = std::move(delta_prev);
    }
    return grads;
}

double loss_value(std::span<const float> output, std::span<const float> target, Loss loss) {
    if (output.size() != target.size()) throw ContractError("loss: length mismatch");
    double acc = 0.0;
    if (loss == Loss::CrossEntropy) {
        for (std::size_t i = 0; i < output.size(); ++i) {
            if (target[i] != 0.0f) {
                double p = std::max(static_cast<double>(output[i]), 1e-12);
                acc -= static_cast<double>(target[i]) * std::log(p);
            }
        }
    } else {
        for (std::size_t i = 0; i < output.size(); ++i) {
            double d = static_cast<double>(output[i]) - static_cast<double>(target[i]);
            acc += 0.5 * d * d;
        }
    }
    return acc;
}

Gradients zero_gradients(const ModelWeights& model) {
    Gradients g;
    g.layers.resize(model.layers.size());
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        g.layers[k].d_weights = Matrix(model.layers[k].out_dim(), model.layers[k].in_dim());
        g.layers[k].d_bias.assign(model.layers[k].out_dim(), 0.0f);
    }
    return g;
}

void accumulate(Gradients& sum, const Gradients& g) {
    if (sum.layers.size() != g.layers.size()) throw ContractError("gradient layer count mismatch");
    for (std::size_t k = 0; k < sum.layers.size(); ++k) {
        auto& s = sum.layers[k];
        const auto& x = g.layers[k];
        if (s.d_weights.data.size() != x.d_weights.data.size() ||
            s.d_bias.size() != x.d_bias.size()) {
            throw ContractError("gradient shape mismatch");
        }
        for (std::size_t i = 0; i < s.d_weights.data.size(); ++i) s.d_weights.data[i] += x.d_weights.data[i];
        for (std::size_t i = 0; i < s.d_bias.size(); ++i) s.d_bias[i] += x.d_bias[i];
    }
}

void scale(Gradients& g, float factor) {
    for (auto& lg : g.layers) {
        for (float& v : lg.d_weights.data) v *= factor;
        for (float& v : lg.d_bias) v *= factor;
    }
}

void sgd_update(ModelWeights& model, const Gradients& grads) {
    if (grads.layers.size() != model.layers.size()) {
        throw ContractError("sgd_update: gradient layer count mismatch");
    }
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        DenseLayer& layer = model.layers[k];
        const LayerGradients& lg = grads.layers[k];
        if (lg.d_weights.rows != layer.weights.rows || lg.d_weights.cols != layer.weights.cols ||
            lg.d_bias.size() != layer.bias.size()) {
            throw ContractError("sgd_update: gradient shape mismatch");
        }
        for (std::size_t i = 0; i < layer.weights.data.size(); ++i) {
            layer.weights.data[i] -= model.alpha * lg.d_weights.data[i];
        }
        for (std::size_t i = 0; i < layer.bias.size(); ++i) {
            layer.bias[i] -= model.alpha * lg.d_bias[i];
        }
    }
}

std::vector<EpochStats> train(ModelWeights& model, const TrainSet& data,
                              std::size_t epochs, std::size_t batch_size) {
    if (data.size() == 0) throw ContractError("train: empty dataset");
    if (batch_size == 0) throw ContractError("train: batch_size must be >= 1");
    if (data.input_dim != model.input_dim()) throw ContractError("train: input dim mismatch");
    if (data.class_count != model.output_dim()) throw ContractError("train: class count mismatch");

    Loss loss = model.layers.back().activation == Activation::Softmax ? Loss::CrossEntropy
                                                                      : Loss::SquaredError;
    std::vector<EpochStats> history;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<float> target(data.class_count);

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        // per-epoch shuffle keyed off the model seed
        Rng rng(model.seed + 0x5DEECE66Dull * (epoch + 1));
        for (std::size_t i = data.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(rng.below(i));
            std::swap(order[i - 1], order[j]);
        }

        double epoch_loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < data.size(); start += batch_size) {
            std::size_t end = std::min(start + batch_size, data.size());
            Gradients batch_grads = zero_gradients(model);
            for (std::size_t i = start; i < end; ++i) {
                std::size_t idx = order[i];
                ForwardTrace trace;
                std::vector<float> out = forward(model, data.input(idx), &trace);
                std::fill(target.begin(), target.end(), 0.0f);
                target[data.labels[idx]] = 1.0f;
                epoch_loss += loss_value(out, target, loss);
                std::size_t pred = static_cast<std::size_t>(
                    std::max_element(out.begin(), out.end()) - out.begin());
                if (pred == data.labels[idx]) ++correct;
                accumulate(batch_grads, backward(model, trace, target, loss));
            }
            scale(batch_grads, 1.0f / static_cast<float>(end - start));
            sgd_update(model, batch_grads);
        }
        history.push_back({epoch_loss / static_cast<double>(data.size()),
                           static_cast<double>(correct) / static_cast<double>(data.size())});
    }
    return history;
}

Prediction predict(const ModelWeights& model, std::span<const float> input) {
    if (model.layers.back().activation != Activation::Softmax) {
        throw ContractError("predict requires a softmax output layer");
    }
    std::vector<float> out = forward(model, input);
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.size(); ++i) {
        if (out[i] > out[best]) best = i; // ties keep the lowest index
    }
    return {best, out[best]};
}

double evaluate_accuracy(const ModelWeights& model, const TrainSet& data) {
    if (data.size() == 0) throw ContractError("evaluate_accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (predict(model, data.input(i)).class_index == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<std::uint8_t> serialize_weights(const ModelWeights& model) {
    if (model.layers.empty() || model.layers.size() > 255) {
        throw ContractError("serialize: layer count out of range");
    }
    Writer w;
    w.bytes.insert(w.bytes.end(), {'S', 'W', 'F', '1'});
    w.u8(1);
    w.f32(model.alpha);
    w.u64(model.seed);
    w.u8(static_cast<std::uint8_t>(model.layers.size()));
    for (const DenseLayer& layer : model.layers) {
        w.u8(static_cast<std::uint8_t>(layer.activation));
        w.u32(static_cast<std::uint32_t>(layer.weights.rows));
        w.u32(static_cast<std::uint32_t>(layer.weights.cols));
        for (float v : layer.weights.data) w.f32(v);
        for (float v : layer.bias) w.f32(v);
    }
    return w.bytes;
}

ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "SWF1", 4) != 0) {
        throw FormatError("bad magic, expected SWF1", 0);
    }
    r.pos = 4;
    std::uint8_t version = r.u8("version");
    if (version != 1) throw FormatError("unsupported SWF1 version", 4);

    ModelWeights model;
    model.alpha = r.f32("alpha");
    model.seed = r.u64("seed");
    std::uint8_t layer_count = r.u8("layer count");
    if (layer_count == 0) throw FormatError("layer count must be >= 1", r.pos - 1);

    for (std::uint8_t k = 0; k < layer_count; ++k) {
        DenseLayer layer;
        std::uint8_t act = r.u8("activation");
        if (act > 2) throw FormatError("unknown activation code", r.pos - 1);
        layer.activation = static_cast<Activation>(act);
        std::size_t dims_at = r.pos;
        std::uint32_t rows = r.u32("rows");
        std::uint32_t cols = r.u32("cols");
        if (rows == 0 || cols == 0 ||
            static_cast<std::uint64_t>(rows) * cols > (1ull << 28)) {
            throw FormatError("layer dimensions out of range", dims_at);
        }
        layer.weights = Matrix(rows, cols);
        for (float& v : layer.weights.data) v = r.f32("weights");
        layer.bias.resize(rows);
        for (float& v : layer.bias) v = r.f32("bias");
        if (!model.layers.empty() && model.layers.back().out_dim() != layer.in_dim()) {
            throw FormatError("adjacent layer dimensions incompatible", dims_at);
        }
        model.layers.push_back(std::move(layer));
    }
    if (r.pos != bytes.size()) {
        throw FormatError("trailing bytes after last layer", r.pos);
    }
    return model;
}

std::size_t save_weights(const ModelWeights& model, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = serialize_weights(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
    return bytes.size();
}

ModelWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_weights(bytes);
}

bool bitwise_equal(const ModelWeights& a, const ModelWeights& b) {
    auto fbits = [](float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        return bits;
    };
    if (a.layers.size() != b.layers.size() || fbits(a.alpha) != fbits(b.alpha) ||
        a.seed != b.seed) {
        return false;
    }
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        const DenseLayer& x = a.layers[k];
        const DenseLayer& y = b.layers[k];
        if (x.activation != y.activation || x.weights.rows != y.weights.rows ||
            x.weights.cols != y.weights.cols || x.bias.size() != y.bias.size()) {
            return false;
        }
        for (std::size_t i = 0; i < x.weights.data.size(); ++i) {
            if (fbits(x.weights.data[i]) != fbits(y.weights.data[i])) return false;
        }
        for (std::size_t i = 0; i < x.bias.size(); ++i) {
            if (fbits(x.bias[i]) != fbits(y.bias[i])) return false;
        }
    }
    return true;
}

} // namespace semlink::nn
