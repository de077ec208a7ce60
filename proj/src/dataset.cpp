#include "semlink/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace semlink::dataset {

namespace {

void validate_sample(const Sample& s) {
    if (s.pixels.size() != kPixelCount) {
        throw ContractError("sample must have exactly 1024 pixels");
    }
    for (float p : s.pixels) {
        if (!(p >= 0.0f && p <= 1.0f)) throw ContractError("pixel outside [0,1]");
    }
}

std::uint16_t read_u16_le(std::istream& in) {
    std::uint8_t b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32_le(std::istream& in) {
    std::uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u16_le(std::ostream& out, std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
    out.write(b, 2);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}

} // namespace

std::vector<float> preprocess_image(const Image& raw) {
    if (raw.width == 0 || raw.height == 0) throw ContractError("empty image");
    if (raw.channels != 1 && raw.channels != 3) throw ContractError("channels must be 1 or 3");
    if (raw.data.size() != raw.width * raw.height * raw.channels) {
        throw ContractError("image data size mismatch");
    }

    // grayscale plane, intensities 0..255
    std::vector<double> gray(raw.width * raw.height);
    if (raw.channels == 1) {
        for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = raw.data[i];
    } else {
        for (std::size_t i = 0; i < gray.size(); ++i) {
            const std::uint8_t* px = &raw.data[i * 3];
            gray[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        }
    }

    // exact area-weighted box filter to 32x32 (handles non-multiple sizes)
    std::vector<float> out(kPixelCount);
    const double sx = static_cast<double>(raw.width) / kImageSide;
    const double sy = static_cast<double>(raw.height) / kImageSide;
    for (std::size_t oy = 0; oy < kImageSide; ++oy) {
        const double y0 = oy * sy, y1 = (oy + 1) * sy;
        for (std::size_t ox = 0; ox < kImageSide; ++ox) {
            const double x0 = ox * sx, x1 = (ox + 1) * sx;
            double sum = 0.0;
            for (std::size_t iy = static_cast<std::size_t>(y0);
                 iy < raw.height && iy < y1; ++iy) {
                const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
                if (wy <= 0.0) continue;
                for (std::size_t ix = static_cast<std::size_t>(x0);
                     ix < raw.width && ix < x1; ++ix) {
                    const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
                    if (wx <= 0.0) continue;
                    sum += wx * wy * gray[iy * raw.width + ix];
                }
            }
            double v = sum / (sx * sy) / 255.0;
            out[oy * kImageSide + ox] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

std::vector<float> encode_record(const Sample& sample) {
    validate_sample(sample);
    std::vector<float> rec(sample.pixels);
    rec.push_back(static_cast<float>(sample.label));
    return rec;
}

Sample decode_record(std::span<const float> record) {
    if (record.size() != kPixelCount + 1) {
        throw FormatError("record must have exactly 1025 elements, got " +
                              std::to_string(record.size()),
                          0);
    }
    float label_f = record[kPixelCount];
    if (label_f < 0.0f || label_f != std::floor(label_f) || label_f > 65535.0f) {
        throw FormatError("label element is not a non-negative integer", kPixelCount * 4);
    }
    Sample s;
    s.pixels.assign(record.begin(), record.begin() + kPixelCount);
    s.label = static_cast<std::uint16_t>(label_f);
    validate_sample(s);
    return s;
}

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image: " + path.string());

    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P6") {
        throw FormatError("unsupported image format (need binary PGM P5 or PPM P6): " +
                              path.string(),
                          0);
    }
    auto next_token = [&in]() {
        std::string tok;
        // skip whitespace and '#' comment lines
        for (;;) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        in >> tok;
        return tok;
    };
    std::size_t width = std::stoul(next_token());
    std::size_t height = std::stoul(next_token());
    std::size_t maxval = std::stoul(next_token());
    if (width == 0 || height == 0) throw FormatError("zero image dimension", 2);
    if (maxval == 0 || maxval > 255) throw FormatError("maxval must be 1..255", 2);
    in.get(); // single whitespace before pixel data

    Image img;
    img.width = width;
    img.height = height;
    img.channels = magic == "P6" ? 3 : 1;
    img.data.resize(width * height * img.channels);
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.data.size()) {
        throw FormatError("truncated pixel data in " + path.string(),
                          static_cast<std::size_t>(in.gcount()));
    }
    if (maxval != 255) {
        for (std::uint8_t& v : img.data) {
            v = static_cast<std::uint8_t>(v * 255u / maxval);
        }
    }
    return img;
}

Dataset load_dataset(const std::filesystem::path& dir, const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw std::runtime_error("cannot open manifest: " + manifest.string());

    Dataset ds;
    ds.name = dir.filename().string();
    std::string line;
    std::size_t line_no = 0;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw FormatError("manifest line " + std::to_string(line_no) + " has no tab", 0);
        }
        std::string rel = line.substr(0, tab);
        int label = std::stoi(line.substr(tab + 1));
        if (label < 0 || label > 65535) {
            throw FormatError("label out of range on line " + std::to_string(line_no), 0);
        }
        Sample s;
        s.pixels = preprocess_image(read_pnm(dir / rel));
        s.label = static_cast<std::uint16_t>(label);
        max_label = std::max(max_label, label);
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw ContractError("manifest is empty: " + manifest.string());
    ds.class_count = static_cast<std::uint16_t>(max_label + 1);

    // warn about label gaps; training still works, the class just never appears
    std::vector<bool> seen(ds.class_count, false);
    for (const Sample& s : ds.samples) seen[s.label] = true;
    for (std::uint16_t k = 0; k < ds.class_count; ++k) {
        if (!seen[k]) std::cerr << "warning: no samples for label " << k << "\n";
    }
    return ds;
}

std::vector<float> synth_prototype(int class_index) {
    if (class_index < 0 || class_index >= 16) throw ContractError("class index out of range");
    // quadrant code 1..15: bit q of (k+1) lights quadrant q, so any two codes
    // differ in at least one full 16x16 quadrant (256 pixels). Code 16 gets a
    // centered square; its symmetric difference to any quadrant pattern is
    // >= 384 pixels.
    const int code = class_index + 1;
    std::vector<float> px(kPixelCount, 0.15f);
    auto light = [&px](std::size_t row0, std::size_t col0) {
        for (std::size_t r = row0; r < row0 + 16; ++r) {
            for (std::size_t c = col0; c < col0 + 16; ++c) {
                px[r * kImageSide + c] = 0.85f;
            }
        }
    };
    if (code == 16) {
        light(8, 8);
        return px;
    }
    for (int q = 0; q < 4; ++q) {
        if (code & (1 << q)) light((q / 2) * 16, (q % 2) * 16);
    }
    return px;
}

Dataset synth_generate(int class_count, int per_class, float noise_sigma, std::uint64_t seed) {
    if (class_count < 2 || class_count > 16) {
        throw ContractError("synth class_count must be in 2..16");
    }
    if (per_class < 1) throw ContractError("per_class must be >= 1");
    if (noise_sigma < 0.0f) throw ContractError("noise_sigma must be >= 0");

    Dataset ds;
    ds.name = "synth";
    ds.class_count = static_cast<std::uint16_t>(class_count);
    Rng rng(seed);
    for (int k = 0; k < class_count; ++k) {
        std::vector<float> proto = synth_prototype(k);
        for (int i = 0; i < per_class; ++i) {
            Sample s;
            s.label = static_cast<std::uint16_t>(k);
            s.pixels.resize(kPixelCount);
            for (std::size_t p = 0; p < kPixelCount; ++p) {
                float v = proto[p];
                if (noise_sigma > 0.0f) v += noise_sigma * rng.gaussian();
                s.pixels[p] = std::clamp(v, 0.0f, 1.0f);
            }
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

std::pair<Dataset, Dataset> shuffle_split(const Dataset& data, double holdout_frac,
                                          std::uint64_t seed) {
    if (holdout_frac < 0.0 || holdout_frac >= 1.0) {
        throw ContractError("holdout_frac must be in [0,1)");
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
    std::size_t holdout = static_cast<std::size_t>(
        std::llround(holdout_frac * static_cast<double>(data.size())));
    Dataset train, test;
    train.class_count = test.class_count = data.class_count;
    train.name = data.name + "/train";
    test.name = data.name + "/test";
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < order.size() - holdout ? train : test).samples.push_back(data.samples[order[i]]);
    }
    return {std::move(train), std::move(test)};
}

void save_cache(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out.write("SDS1", 4);
    write_u32_le(out, static_cast<std::uint32_t>(data.size()));
    write_u16_le(out, data.class_count);
    for (const Sample& s : data.samples) {
        static_assert(sizeof(float) == 4);
        out.write(reinterpret_cast<const char*>(s.pixels.data()), kPixelCount * 4);
        write_u16_le(out, s.label);
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset load_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "SDS1", 4) != 0) {
        throw FormatError("bad magic, expected SDS1", 0);
    }
    Dataset ds;
    std::uint32_t count = read_u32_le(in);
    ds.class_count = read_u16_le(in);
    if (!in) throw FormatError("truncated header", 4);
    ds.name = path.stem().string();
    ds.samples.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Sample& s = ds.samples[i];
        s.pixels.resize(kPixelCount);
        in.read(reinterpret_cast<char*>(s.pixels.data()), kPixelCount * 4);
        s.label = read_u16_le(in);
        if (!in) {
            throw FormatError("truncated sample " + std::to_string(i),
                              10 + static_cast<std::size_t>(i) * (kPixelCount * 4 + 2));
        }
        if (s.label >= ds.class_count) throw FormatError("label exceeds class count", 10);
    }
    return ds;
}

nn::TrainSet to_trainset(const Dataset& data) {
    nn::TrainSet ts;
    ts.input_dim = kPixelCount;
    ts.class_count = data.class_count;
    ts.inputs.reserve(data.size() * kPixelCount);
    ts.labels.reserve(data.size());
    for (const Sample& s : data.samples) {
        ts.inputs.insert(ts.inputs.end(), s.pixels.begin(), s.pixels.end());
        ts.labels.push_back(s.label);
    }
    return ts;
}

} // namespace semlink::dataset
