#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "semlink/dataset.hpp"

using namespace semlink;
namespace fs = std::filesystem;

namespace {

dataset::Image solid(std::size_t w, std::size_t h, std::size_t ch, std::uint8_t value) {
    dataset::Image img;
    img.width = w;
    img.height = h;
    img.channels = ch;
    img.data.assign(w * h * ch, value);
    return img;
}

fs::path make_temp_dir(const char* name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_pgm(const fs::path& path, std::size_t w, std::size_t h, std::uint8_t value) {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<char> row(w, static_cast<char>(value));
    for (std::size_t y = 0; y < h; ++y) out.write(row.data(), static_cast<std::streamsize>(w));
}

int nearest_prototype(std::span<const float> pixels, int class_count) {
    int best = -1;
    double best_d = 1e300;
    for (int k = 0; k < class_count; ++k) {
        auto proto = dataset::synth_prototype(k);
        double d = 0.0;
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            double diff = pixels[i] - proto[i];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

} // namespace

TEST_CASE("preprocess: solid white maps to 1.0, any size") {
    for (auto [w, h] : {std::pair<std::size_t, std::size_t>{32, 32}, {64, 64}, {100, 37}}) {
        auto px = dataset::preprocess_image(solid(w, h, 1, 255));
        REQUIRE(px.size() == dataset::kPixelCount);
        for (float v : px) CHECK(v == doctest::Approx(1.0f).epsilon(1e-6));
    }
}

TEST_CASE("preprocess: 64x64 pixel checkerboard averages to 0.5") {
    dataset::Image img = solid(64, 64, 1, 0);
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x)
            if ((x + y) % 2 == 0) img.data[y * 64 + x] = 255;
    auto px = dataset::preprocess_image(img);
    for (float v : px) CHECK(v == doctest::Approx(0.5f).epsilon(1e-3));
}

TEST_CASE("preprocess: RGB red uses the 0.299 luminance weight") {
    dataset::Image img = solid(32, 32, 3, 0);
    for (std::size_t i = 0; i < img.data.size(); i += 3) img.data[i] = 255;
    auto px = dataset::preprocess_image(img);
    for (float v : px) CHECK(std::abs(v - 0.299f) <= 1.0f / 255.0f);
}

TEST_CASE("preprocess: output always 1024 values in [0,1]") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        dataset::Image img;
        img.width = 1 + rng.below(80);
        img.height = 1 + rng.below(80);
        img.channels = (trial % 2 == 0) ? 1 : 3;
        img.data.resize(img.width * img.height * img.channels);
        for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.below(256));
        auto px = dataset::preprocess_image(img);
        REQUIRE(px.size() == dataset::kPixelCount);
        for (float v : px) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("record encoding round trips and validates") {
    dataset::Sample s;
    s.pixels.assign(dataset::kPixelCount, 0.0f);
    Rng rng(8);
    for (float& v : s.pixels) v = rng.next_float();
    s.label = 7;

    auto record = dataset::encode_record(s);
    REQUIRE(record.size() == 1025);
    CHECK(record.back() == 7.0f);
    auto back = dataset::decode_record(record);
    CHECK(back.label == 7);
    CHECK(back.pixels == s.pixels);

    record.pop_back();
    CHECK_THROWS_AS(dataset::decode_record(record), FormatError);
    record.push_back(3.5f); // non-integer label
    CHECK_THROWS_AS(dataset::decode_record(record), FormatError);
}

TEST_CASE("manifest loading from PGM files") {
    fs::path dir = make_temp_dir("semlink_ds_test");
    write_pgm(dir / "a.pgm", 32, 32, 255);
    write_pgm(dir / "b.pgm", 16, 16, 0);
    {
        std::ofstream m(dir / "manifest.tsv");
        m << "a.pgm\t0\nb.pgm\t1\n";
    }
    auto data = dataset::load_dataset(dir, dir / "manifest.tsv");
    REQUIRE(data.size() == 2);
    CHECK(data.class_count == 2);
    CHECK(data.samples[0].pixels[0] == doctest::Approx(1.0f));
    CHECK(data.samples[1].pixels[0] == doctest::Approx(0.0f));

    {
        std::ofstream m(dir / "empty.tsv");
    }
    CHECK_THROWS_AS(dataset::load_dataset(dir, dir / "empty.tsv"), ContractError);
    fs::remove_all(dir);
}

TEST_CASE("synth: counts, determinism, prototype recovery") {
    auto data = dataset::synth_generate(10, 50, 0.1f, 42);
    CHECK(data.size() == 500);
    CHECK(data.class_count == 10);
    for (const auto& s : data.samples) {
        for (float v : s.pixels) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }

    auto again = dataset::synth_generate(10, 50, 0.1f, 42);
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(data.samples[i].label == again.samples[i].label);
        CHECK(data.samples[i].pixels == again.samples[i].pixels);
    }

    // sigma 0 reproduces the prototypes exactly
    auto clean = dataset::synth_generate(4, 1, 0.0f, 1);
    for (const auto& s : clean.samples) {
        auto proto = dataset::synth_prototype(s.label);
        for (std::size_t i = 0; i < proto.size(); ++i)
            CHECK(s.pixels[i] == doctest::Approx(proto[i]));
    }

    // at sigma 0.05 every sample is closest to its own prototype
    auto easy = dataset::synth_generate(16, 10, 0.05f, 3);
    for (const auto& s : easy.samples)
        CHECK(nearest_prototype(s.pixels, 16) == s.label);
}

TEST_CASE("synth: prototypes are pairwise far apart") {
    for (int a = 0; a < 16; ++a) {
        auto pa = dataset::synth_prototype(a);
        for (int b = a + 1; b < 16; ++b) {
            auto pb = dataset::synth_prototype(b);
            int differing = 0;
            for (std::size_t i = 0; i < pa.size(); ++i)
                if (pa[i] != pb[i]) ++differing;
            CHECK(differing >= 256);
        }
    }
    CHECK_THROWS_AS(dataset::synth_generate(1, 10, 0.1f, 0), ContractError);
    CHECK_THROWS_AS(dataset::synth_generate(17, 10, 0.1f, 0), ContractError);
}

TEST_CASE("shuffle_split: sizes, disjointness, determinism") {
    auto data = dataset::synth_generate(4, 25, 0.1f, 5);
    auto [train, holdout] = dataset::shuffle_split(data, 0.2, 99);
    CHECK(train.size() == 80);
    CHECK(holdout.size() == 20);
    CHECK(train.class_count == 4);

    auto [train2, holdout2] = dataset::shuffle_split(data, 0.2, 99);
    for (std::size_t i = 0; i < train.size(); ++i)
        CHECK(train.samples[i].pixels == train2.samples[i].pixels);
    for (std::size_t i = 0; i < holdout.size(); ++i)
        CHECK(holdout.samples[i].pixels == holdout2.samples[i].pixels);
}

TEST_CASE("SDS1 cache round trip") {
    auto data = dataset::synth_generate(3, 7, 0.2f, 12);
    fs::path path = fs::temp_directory_path() / "semlink_cache.sds";
    dataset::save_cache(data, path);
    auto back = dataset::load_cache(path);
    CHECK(back.class_count == data.class_count);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(back.samples[i].label == data.samples[i].label);
        CHECK(back.samples[i].pixels == data.samples[i].pixels);
    }

    // corrupt magic
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.put('Z');
    }
    CHECK_THROWS_AS(dataset::load_cache(path), FormatError);
    fs::remove(path);
}

TEST_CASE("to_trainset flattens in order") {
    auto data = dataset::synth_generate(3, 2, 0.1f, 4);
    auto ts = dataset::to_trainset(data);
    CHECK(ts.input_dim == dataset::kPixelCount);
    CHECK(ts.class_count == 3);
    REQUIRE(ts.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(ts.labels[i] == data.samples[i].label);
        auto row = ts.input(i);
        CHECK(std::equal(row.begin(), row.end(), data.samples[i].pixels.begin()));
    }
}
