#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "bodyadapt/checkpoint.hpp"
#include "bodyadapt/model.hpp"
#include "reference_forward.hpp"

using namespace bodyadapt;

namespace {

Tensor random_batch(int n, int window_len, int channels, std::uint64_t seed) {
    Rng rng(seed);
    return Tensor::uniform({n, window_len, channels}, rng, -1.0f, 1.0f);
}

bool tensors_bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.numel())) == 0;
}

bool models_bitwise_equal(const ModelParams& a, const ModelParams& b) {
    for (int l = 0; l < kConvLayers; ++l) {
        if (!tensors_bitwise_equal(a.embedder.conv[l].w, b.embedder.conv[l].w)) return false;
        if (!tensors_bitwise_equal(a.embedder.conv[l].b, b.embedder.conv[l].b)) return false;
    }
    for (int l = 0; l < kLstmLayers; ++l) {
        if (!tensors_bitwise_equal(a.embedder.lstm[l].wx, b.embedder.lstm[l].wx)) return false;
        if (!tensors_bitwise_equal(a.embedder.lstm[l].wh, b.embedder.lstm[l].wh)) return false;
        if (!tensors_bitwise_equal(a.embedder.lstm[l].b, b.embedder.lstm[l].b)) return false;
    }
    return tensors_bitwise_equal(a.classifier.w, b.classifier.w) &&
           tensors_bitwise_equal(a.classifier.b, b.classifier.b);
}

}  // namespace

TEST_CASE("zero-parameter model embeds everything to zero") {
    ModelParams m = init_model({3, kWindowLen, 4, Domain::Source}, 1);
    for (auto& c : m.embedder.conv) {
        c.w = Tensor::zeros(c.w.shape());
        c.b = Tensor::zeros(c.b.shape());
    }
    for (auto& s : m.embedder.lstm) {
        s.wx = Tensor::zeros(s.wx.shape());
        s.wh = Tensor::zeros(s.wh.shape());
        s.b = Tensor::zeros(s.b.shape());
    }
    Tensor e = embed(m, random_batch(2, kWindowLen, 3, 5));
    CHECK(e.shape() == Shape{2, kEmbeddingDim});
    for (std::int64_t i = 0; i < e.numel(); ++i) CHECK(e[i] == 0.0f);
}

TEST_CASE("embedding is 128-dim regardless of channel count") {
    for (int channels : {3, 9}) {
        ModelParams m = init_model({channels, kWindowLen, 5, Domain::Source}, 7);
        Tensor e = embed(m, random_batch(3, kWindowLen, channels, 11));
        CHECK(e.shape() == Shape{3, kEmbeddingDim});
    }
    CHECK(conv_output_len(kWindowLen) == 84);
}

TEST_CASE("embed rejects mismatched windows") {
    ModelParams m = init_model({9, kWindowLen, 5, Domain::Source}, 3);
    CHECK_THROWS_AS(embed(m, random_batch(1, kWindowLen, 3, 1)), ShapeError);
    CHECK_THROWS_AS(embed(m, random_batch(1, 50, 9, 1)), ShapeError);
}

TEST_CASE("forward pass matches the straight-line reference") {
    ModelParams m = init_model({5, kWindowLen, 4, Domain::Source}, 123);
    Tensor batch = random_batch(2, kWindowLen, 5, 99);
    Tensor e = embed(m, batch);
    Tensor p = classify(m, batch);
    for (int n = 0; n < 2; ++n) {
        Tensor window({kWindowLen, 5});
        std::memcpy(window.data(), batch.data() + static_cast<std::ptrdiff_t>(n) * kWindowLen * 5,
                    sizeof(float) * kWindowLen * 5);
        auto ref_e = testutil::reference_embed(m, window);
        auto ref_p = testutil::reference_classify(m, window);
        REQUIRE(static_cast<int>(ref_e.size()) == kEmbeddingDim);
        for (int j = 0; j < kEmbeddingDim; ++j)
            CHECK(e[static_cast<std::ptrdiff_t>(n) * kEmbeddingDim + j] ==
                  doctest::Approx(ref_e[static_cast<std::size_t>(j)]).epsilon(2e-4));
        for (int k = 0; k < 4; ++k)
            CHECK(p[static_cast<std::ptrdiff_t>(n) * 4 + k] ==
                  doctest::Approx(ref_p[static_cast<std::size_t>(k)]).epsilon(2e-4));
    }
}

TEST_CASE("classify is softmax over the classifier head, exactly") {
    ModelParams m = init_model({4, kWindowLen, 6, Domain::Source}, 55);
    Tensor batch = random_batch(3, kWindowLen, 4, 2);
    Tensor probs = classify(m, batch);
    // composition law: run the same split pipeline manually
    Tensor e = embed(m, batch);
    GradientTape tape;
    ModelVars v = stage_model(tape, m, false, false);
    Var probs2 = tape.softmax(logits_on_tape(tape, v, tape.input(e)));
    CHECK(tensors_bitwise_equal(probs, tape.val(probs2)));
    // softmax outputs are a distribution and preserve the argmax of logits
    Tensor logits = tape.val(tape.add_row_bias(tape.matmul(tape.input(e), v.cls_w), v.cls_b));
    for (int i = 0; i < 3; ++i) {
        double sum = 0.0;
        for (int k = 0; k < 6; ++k) {
            float pv = probs[static_cast<std::ptrdiff_t>(i) * 6 + k];
            CHECK(pv >= 0.0f);
            CHECK(pv <= 1.0f);
            sum += pv;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK(argmax_rows(probs) == argmax_rows(logits));
}

TEST_CASE("zero classifier gives the uniform distribution") {
    ModelParams m = init_model({3, kWindowLen, 5, Domain::Source}, 8);
    m.classifier.w = Tensor::zeros(m.classifier.w.shape());
    m.classifier.b = Tensor::zeros(m.classifier.b.shape());
    Tensor probs = classify(m, random_batch(2, kWindowLen, 3, 4));
    for (std::int64_t i = 0; i < probs.numel(); ++i)
        CHECK(probs[i] == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("classifier transplant") {
    ModelParams src = init_model({9, kWindowLen, 5, Domain::Source}, 21);
    ModelParams tgt = init_model({9, kWindowLen, 5, Domain::Target}, 22);
    tgt.meta.domain = Domain::Target;

    ModelParams out = transplant_classifier(src, tgt);
    CHECK(tensors_bitwise_equal(out.classifier.w, src.classifier.w));
    CHECK(tensors_bitwise_equal(out.classifier.b, src.classifier.b));
    CHECK(tensors_bitwise_equal(out.embedder.conv[0].w, tgt.embedder.conv[0].w));

    SUBCASE("idempotent") {
        ModelParams twice = transplant_classifier(src, out);
        CHECK(models_bitwise_equal(twice, out));
    }

    SUBCASE("equal embedders give bitwise-equal predictions") {
        ModelParams cloned = src;
        cloned.meta.domain = Domain::Target;
        ModelParams merged = transplant_classifier(src, cloned);
        Tensor batch = random_batch(4, kWindowLen, 9, 77);
        CHECK(tensors_bitwise_equal(classify(src, batch), classify(merged, batch)));
    }

    SUBCASE("class count mismatch is rejected") {
        ModelParams other = init_model({9, kWindowLen, 7, Domain::Target}, 5);
        CHECK_THROWS_AS(transplant_classifier(src, other), ShapeError);
    }
}

TEST_CASE("checkpoint round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "bodyadapt_ckpt_test";
    fs::create_directories(dir);
    std::string path = (dir / "model.ckpt").string();

    ModelParams m = init_model({9, kWindowLen, 5, Domain::Target}, 77);
    m.meta.domain = Domain::Target;
    save_checkpoint(m, path);
    ModelParams loaded = load_checkpoint(path);
    CHECK(models_bitwise_equal(m, loaded));
    CHECK(loaded.meta.channels == 9);
    CHECK(loaded.meta.num_classes == 5);
    CHECK(loaded.meta.domain == Domain::Target);

    SUBCASE("truncated file is rejected") {
        auto size = fs::file_size(path);
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes(static_cast<std::size_t>(size) / 2);
        in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        in.close();
        std::string trunc = (dir / "trunc.ckpt").string();
        std::ofstream out(trunc, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(trunc), IoError);
    }

    SUBCASE("bad magic is rejected") {
        std::string bad = (dir / "bad.ckpt").string();
        std::ofstream out(bad, std::ios::binary);
        out.write("NOPE", 4);
        out.close();
        CHECK_THROWS_AS(load_checkpoint(bad), IoError);
    }

    SUBCASE("trailing bytes are rejected") {
        std::string padded = (dir / "padded.ckpt").string();
        fs::copy_file(path, padded, fs::copy_options::overwrite_existing);
        std::ofstream out(padded, std::ios::binary | std::ios::app);
        out.write("x", 1);
        out.close();
        CHECK_THROWS_AS(load_checkpoint(padded), IoError);
    }

    SUBCASE("channel mismatch surfaces at use") {
        ModelParams nine = load_checkpoint(path);
        CHECK_THROWS_AS(embed(nine, random_batch(1, kWindowLen, 3, 1)), ShapeError);
    }
}

TEST_CASE("seeded init is reproducible") {
    ModelParams a = init_model({9, kWindowLen, 5, Domain::Source}, 42);
    ModelParams b = init_model({9, kWindowLen, 5, Domain::Source}, 42);
    ModelParams c = init_model({9, kWindowLen, 5, Domain::Source}, 43);
    CHECK(models_bitwise_equal(a, b));
    CHECK_FALSE(models_bitwise_equal(a, c));
    // forget-gate bias block starts at +1
    for (int j = kLstmHidden; j < 2 * kLstmHidden; ++j)
        CHECK(a.embedder.lstm[0].b[j] == 1.0f);
}
