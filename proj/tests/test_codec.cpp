#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "semlink/codec.hpp"
#include "semlink/dataset.hpp"

using namespace semlink;
using nn::Activation;

namespace {

nn::ModelWeights classifier(std::size_t in, std::size_t hidden, std::size_t classes,
                            std::uint64_t seed) {
    return nn::init_weights({in, hidden, classes}, {Activation::ReLU, Activation::Softmax},
                            seed, 0.1f);
}

} // namespace

TEST_CASE("split_model: shapes and exact rejoin equivalence") {
    auto model = classifier(1024, 10, 10, 21);
    auto [enc, dec] = codec::split_model(model, 1);
    CHECK(enc.model.layers.size() == 1);
    CHECK(dec.model.layers.size() == 1);
    CHECK(enc.model.input_dim() == 1024);
    CHECK(enc.model.output_dim() == 10);
    CHECK(dec.model.input_dim() == 10);
    CHECK(dec.model.output_dim() == 10);
    CHECK(enc.model.layers.back().activation == Activation::ReLU);
    CHECK(dec.model.layers.back().activation == Activation::Softmax);

    // split halves carry the exact weight bits, so decoder(encoder(x)) is
    // bit-identical to the full forward pass
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<float> px(1024);
        for (float& v : px) v = rng.next_float();
        auto fv = codec::encode_features(enc, px, 0);
        for (float v : fv.values) CHECK(v >= 0.0f);
        auto split_out = nn::forward(dec.model, fv.values);
        auto full_out = nn::forward(model, px);
        REQUIRE(split_out.size() == full_out.size());
        for (std::size_t i = 0; i < full_out.size(); ++i)
            CHECK(split_out[i] == full_out[i]);
    }
}

TEST_CASE("split_model rejects bad indices") {
    auto model = classifier(8, 4, 3, 1);
    CHECK_THROWS_AS(codec::split_model(model, 0), ContractError);
    CHECK_THROWS_AS(codec::split_model(model, 2), ContractError);

    // no ReLU boundary at the split point
    nn::ModelWeights linear_mid = nn::init_weights(
        {8, 4, 3}, {Activation::ReLU, Activation::Softmax}, 1, 0.1f);
    linear_mid.layers[0].activation = Activation::Linear;
    CHECK_THROWS_AS(codec::split_model(linear_mid, 1), ContractError);
}

TEST_CASE("classify_features agrees with the decoder's predict") {
    auto model = classifier(16, 6, 4, 9);
    auto [enc, dec] = codec::split_model(model, 1);
    dec.class_map = codec::default_class_map(4, 100);

    Rng rng(17);
    std::vector<float> px(16);
    for (float& v : px) v = rng.next_float();
    auto fv = codec::encode_features(enc, px, 33);
    auto cls = codec::classify_features(dec, fv);
    auto pred = nn::predict(dec.model, fv.values);
    CHECK(cls.class_index == pred.class_index);
    CHECK(cls.confidence == pred.confidence);
    CHECK(cls.roadblock.lane == dec.class_map.lookup(cls.class_index).lane);
}

TEST_CASE("SFF1: size and round trips") {
    codec::FeatureVector fv;
    fv.frame_id = 1234;
    Rng rng(6);
    fv.values.resize(10);
    for (float& v : fv.values) v = rng.uniform(0.0f, 4.0f);

    auto plain = codec::write_sff(fv);
    CHECK(plain.size() == codec::kSffHeaderBytes + 10 * 4); // 59 bytes for H=10
    auto back = codec::read_sff(plain);
    CHECK(back.frame_id == 1234);
    CHECK(back.values == fv.values);

    auto packed = codec::write_sff(fv, codec::kSffFlagDeflate);
    auto back2 = codec::read_sff(packed);
    CHECK(back2.frame_id == 1234);
    CHECK(back2.values == fv.values);

    // sparse post-ReLU vectors (many zeros) should compress below the raw size
    codec::FeatureVector sparse;
    sparse.values.assign(256, 0.0f);
    sparse.values[3] = 1.5f;
    auto sp = codec::write_sff(sparse, codec::kSffFlagDeflate);
    CHECK(sp.size() < codec::write_sff(sparse).size());
    CHECK(codec::read_sff(sp).values == sparse.values);
}

TEST_CASE("SFF1: corruption is detected with offsets") {
    codec::FeatureVector fv;
    fv.values = {1.0f, 2.0f, 3.0f};
    auto bytes = codec::write_sff(fv);

    auto bad_magic = bytes;
    bad_magic[0] = 'Q';
    try {
        codec::read_sff(bad_magic);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 0);
    }

    auto truncated = bytes;
    truncated.resize(codec::kSffHeaderBytes + 5);
    CHECK_THROWS_AS(codec::read_sff(truncated), FormatError);

    auto flipped = bytes;
    flipped[codec::kSffHeaderBytes] ^= 0x40; // payload bit flip -> crc mismatch
    CHECK_THROWS_AS(codec::read_sff(flipped), FormatError);

    std::vector<std::uint8_t> tiny{'S', 'F', 'F', '1', 1};
    CHECK_THROWS_AS(codec::read_sff(tiny), FormatError);
}

TEST_CASE("SFF1: random byte soup never crashes the reader") {
    Rng rng(123);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<std::uint8_t> junk(rng.below(128));
        for (auto& b : junk) b = static_cast<std::uint8_t>(rng.below(256));
        try {
            codec::read_sff(junk);
        } catch (const FormatError&) {
            // expected on essentially every trial
        }
    }
    CHECK(true);
}

TEST_CASE("default_class_map layout") {
    auto map3 = codec::default_class_map(3, 100);
    REQUIRE(map3.entries.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(map3.entries[k].lane == static_cast<int>(k));
        CHECK(map3.entries[k].position == 20);
    }

    auto map9 = codec::default_class_map(9, 100);
    for (std::size_t k = 0; k < 9; ++k) {
        CHECK(map9.entries[k].lane == static_cast<int>(k % 3));
        CHECK(map9.entries[k].position >= 20);
        CHECK(map9.entries[k].position <= 80);
    }
    // rows at increasing positions
    CHECK(map9.entries[0].position < map9.entries[3].position);
    CHECK(map9.entries[3].position < map9.entries[6].position);
}

TEST_CASE("class map file round trip and lookup contract") {
    auto map = codec::default_class_map(10, 100);
    auto path = std::filesystem::temp_directory_path() / "semlink_classmap.tsv";
    codec::save_class_map(map, path);
    auto back = codec::load_class_map(path);
    REQUIRE(back.entries.size() == map.entries.size());
    for (std::size_t k = 0; k < map.entries.size(); ++k) {
        CHECK(back.entries[k].lane == map.entries[k].lane);
        CHECK(back.entries[k].position == map.entries[k].position);
    }
    CHECK_THROWS_AS(back.lookup(10), ContractError);
    std::filesystem::remove(path);
}
