#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "shefu/embedder.hpp"
#include "shefu/model.hpp"
#include "test_helpers.hpp"

using namespace shefu;
using shefu::testing::tiny_config;
using shefu::testing::tiny_vocab;
using shefu::testing::toy_region;
using shefu::testing::toy_sample;

TEST_CASE("positional_encode") {
    BBox full{0, 0, 640, 480, 640, 480};
    auto v = positional_encode(full);
    std::array<double, 7> want{0, 0, 1, 1, 1, 1, 1};
    for (size_t i = 0; i < 7; ++i) CHECK(v[i] == doctest::Approx(want[i]).epsilon(1e-12));

    BBox b{64, 48, 320, 240, 640, 480};
    auto v2 = positional_encode(b);
    std::array<double, 7> want2{0.1, 0.1, 0.5, 0.5, 0.4, 0.4, 0.16};
    for (size_t i = 0; i < 7; ++i) CHECK(v2[i] == doctest::Approx(want2[i]).epsilon(1e-12));

    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        double x1 = rng.uniform(0, 500), y1 = rng.uniform(0, 380);
        BBox r{x1, y1, x1 + rng.uniform(5, 100), y1 + rng.uniform(5, 80), 640, 480};
        auto p = positional_encode(r);
        CHECK(p[6] == doctest::Approx(p[4] * p[5]).epsilon(1e-12));
    }
}

TEST_CASE("tokenize") {
    Vocabulary v = Vocabulary::from_tokens({"<unk>", "<pad>", "the", "red", "cup"});
    auto seq = tokenize("the red cup", v, 6);
    CHECK(seq.ids == std::vector<size_t>{2, 3, 4, Vocabulary::kPad, Vocabulary::kPad,
                                         Vocabulary::kPad});
    CHECK(seq.mask == std::vector<uint8_t>{1, 1, 1, 0, 0, 0});
    CHECK(seq.positions == std::vector<size_t>{0, 1, 2, 3, 4, 5});

    auto empty = tokenize("", v, 4);
    CHECK(empty.ids == std::vector<size_t>(4, Vocabulary::kPad));
    CHECK(empty.mask == std::vector<uint8_t>{0, 0, 0, 0});

    auto oov = tokenize("the purple cup", v, 4);
    CHECK(oov.ids[1] == Vocabulary::kUnk);

    // punctuation stripped, case folded, truncation applied
    auto messy = tokenize("The RED, cup!", v, 2);
    CHECK(messy.ids == std::vector<size_t>{2, 3});

    // id-level round trip for in-vocab text
    auto rt = tokenize(detokenize(seq, v), v, 6);
    CHECK(rt.ids == seq.ids);
}

TEST_CASE("switching_head cases") {
    EncodedRegion a, b;
    a.values = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};  // d_f=3 plus 7 positional
    b.values = {9, 8, 7, 6, 5, 4, 3, 2, 1, 0};
    auto [t1, d1] = switching_head(a, b, Mode::target);
    CHECK(t1.values == a.values);
    CHECK(d1.values == std::vector<double>(10, 0.0));

    auto [t2, d2] = switching_head(a, b, Mode::destination);
    CHECK(t2.values == std::vector<double>(10, 0.0));
    CHECK(d2.values == b.values);

    EncodedRegion z = EncodedRegion::zeros(3);
    auto [t3, d3] = switching_head(z, z, Mode::target);
    CHECK(t3.values == z.values);
    CHECK(d3.values == z.values);
}

TEST_CASE("embed: sequence layout and masking") {
    ModelConfig mc = tiny_config();
    ModelT<double> model(mc, 7);
    Vocabulary vocab = tiny_vocab();
    Sample s = toy_sample(mc.d_f);
    ModelInput in = make_input(s, vocab, mc.d_l);

    TapeT<double> tape;
    auto seq = embed(tape, mc.embedder(), model.emb, in.targ, in.dest, in.targ_ctx, in.tokens);
    CHECK(seq.h.shape()[0] == mc.k + mc.d_l + 2);
    CHECK(seq.h.shape()[1] == mc.d_model);

    // sample has 2 target-context regions; slot 2+2 is padded and masked
    CHECK(seq.mask[0] == 1);
    CHECK(seq.mask[1] == 1);
    CHECK(seq.mask[2] == 1);
    CHECK(seq.mask[3] == 1);
    CHECK(seq.mask[4] == 0);
    // instruction "move the red cup to the blue table" is 8 words, d_l=6 keeps 6
    for (size_t t = 0; t < mc.d_l; ++t) CHECK(seq.mask[mc.k + 2 + t] == 1);
    // padded region row is zeroed
    for (size_t j = 0; j < mc.d_model; ++j) CHECK(seq.h.value().at(4, j) == 0.0);
}

TEST_CASE("embed: zero-filled dest slot is identical across samples in target mode") {
    ModelConfig mc = tiny_config();
    ModelT<double> model(mc, 7);
    Vocabulary vocab = tiny_vocab();
    Sample s1 = toy_sample(mc.d_f, 10);
    Sample s2 = toy_sample(mc.d_f, 20);  // entirely different features
    ModelInput in1 = make_input(s1, vocab, mc.d_l);
    ModelInput in2 = make_input(s2, vocab, mc.d_l);

    auto row_of = [&](const ModelInput& in) {
        auto [t, d] = switching_head(in.targ, in.dest, Mode::target);
        TapeT<double> tape;
        auto seq = embed(tape, mc.embedder(), model.emb, t, d, in.targ_ctx, in.tokens);
        std::vector<double> row(mc.d_model);
        for (size_t j = 0; j < mc.d_model; ++j) row[j] = seq.h.value().at(1, j);
        return row;
    };
    CHECK(row_of(in1) == row_of(in2));  // bitwise
}

TEST_CASE("embed: permutation of context regions permutes their rows") {
    ModelConfig mc = tiny_config();
    ModelT<double> model(mc, 7);
    Vocabulary vocab = tiny_vocab();
    Sample s = toy_sample(mc.d_f);
    s.target_context.push_back(toy_region(13, 30, 300, 130, 420, mc.d_f, 77));
    ModelInput in = make_input(s, vocab, mc.d_l);

    TapeT<double> t1;
    auto seq1 = embed(t1, mc.embedder(), model.emb, in.targ, in.dest, in.targ_ctx, in.tokens);

    std::vector<EncodedRegion> perm{in.targ_ctx[2], in.targ_ctx[0], in.targ_ctx[1]};
    TapeT<double> t2;
    auto seq2 = embed(t2, mc.embedder(), model.emb, in.targ, in.dest, perm, in.tokens);

    size_t map[3] = {2, 0, 1};  // perm[i] == original[map[i]]
    for (size_t i = 0; i < 3; ++i)
        for (size_t j = 0; j < mc.d_model; ++j)
            CHECK(seq2.h.value().at(2 + i, j) == seq1.h.value().at(2 + map[i], j));
}

TEST_CASE("target-mode probability is bitwise invariant to the destination candidate") {
    ModelConfig mc = tiny_config();
    ModelT<double> model(mc, 3);
    Vocabulary vocab = tiny_vocab();
    Sample s = toy_sample(mc.d_f);
    ModelInput in = make_input(s, vocab, mc.d_l);
    double p0 = model.predict_prob(in, Mode::target);

    Rng rng(123);
    for (int trial = 0; trial < 25; ++trial) {
        Sample mod = s;
        mod.dest_candidate = toy_region(20, rng.uniform(0, 300), rng.uniform(0, 200),
                                        rng.uniform(310, 630), rng.uniform(210, 470), mc.d_f,
                                        rng.next_u64());
        ModelInput min = make_input(mod, vocab, mc.d_l);
        CHECK(model.predict_prob(min, Mode::target) == p0);
        // and symmetrically the destination mode ignores the target candidate
        Sample mod2 = s;
        mod2.target_candidate = toy_region(10, rng.uniform(0, 300), rng.uniform(0, 200),
                                           rng.uniform(310, 630), rng.uniform(210, 470), mc.d_f,
                                           rng.next_u64());
        ModelInput min2 = make_input(mod2, vocab, mc.d_l);
        CHECK(model.predict_prob(min2, Mode::destination) ==
              model.predict_prob(make_input(s, vocab, mc.d_l), Mode::destination));
    }
}
