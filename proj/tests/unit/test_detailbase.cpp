#include <doctest.h>

#include <numeric>

#include "dres/detailbase.hpp"
#include "dres/error.hpp"
#include "dres/rng.hpp"
#include "support.hpp"

using namespace dres;

namespace {

Matrix random_matrix(Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

ModelConfig small_config(int layers = 2) {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.e = 6;
  cfg.c = 5;
  cfg.num_layers = layers;
  cfg.heads = 2;
  cfg.ffn_hidden = 16;
  return cfg;
}

AnnotatedDescription one_phrase(int length, int head) {
  AnnotatedDescription d;
  d.description_id = "d";
  d.scene_id = "s";
  d.tokens.assign(static_cast<std::size_t>(length), "w");
  PhraseTarget p;
  p.start = p.end = p.head_index = head;
  p.target_ids = {0};
  d.phrases.push_back(p);
  return d;
}

ForwardTrace constant_trace(int rows, int ns, double value) {
  ForwardTrace t;
  t.logits.push_back(Matrix::Constant(rows, ns, value));
  return t;
}

}  // namespace

TEST_SUITE("detailbase") {
  TEST_CASE("init_queries") {
    Matrix e(1, 2);
    e << 1, 2;
    Matrix w3(2, 2);
    w3 << 0, 1, 1, 0;
    Matrix expect(1, 2);
    expect << 2, 1;
    CHECK(init_queries(e, w3) == expect);
    CHECK(init_queries(e, Matrix::Identity(2, 2)) == e);
    CHECK(init_queries(Matrix::Zero(3, 2), w3).isZero());
  }

  TEST_CASE("parameters follow the declared layout") {
    const auto cfg = small_config(2);
    const auto state = init_model(cfg, 1);
    const auto names = parameter_names(cfg);
    CHECK(names.size() == state.params.size());
    CHECK(state.at("proj.w1").rows() == cfg.c);
    CHECK(state.at("proj.w1").cols() == cfg.d);
    CHECK(state.at("query.w3").rows() == cfg.e);
    CHECK(state.at("layers.1.ffn.w1").cols() == cfg.ffn_hidden);
    CHECK(state.at("score.w2").cols() == 1);
    CHECK(state.at("layers.0.cross.bq").isZero());
    CHECK(state.at("layers.0.self.norm.gamma").isOnes());
    CHECK_THROWS_AS(state.at("nope"), Error);
    CHECK(init_model(cfg, 1).params == state.params);
    CHECK(init_model(cfg, 2).at("proj.w1") != state.at("proj.w1"));
  }

  TEST_CASE("config validation") {
    auto cfg = small_config();
    cfg.heads = 3;  // 8 not divisible by 3
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config();
    cfg.num_layers = -1;
    CHECK_THROWS_AS(cfg.validate(), Error);
  }

  TEST_CASE("a single superpoint forces cross-attention weights of one") {
    Rng rng(1);
    const auto cfg = small_config(1);
    const auto state = init_model(cfg, 3);
    std::vector<AttentionRecord> attn;
    decoder_layer(random_matrix(rng, 4, cfg.d), random_matrix(rng, 1, cfg.d), state, 0, cfg, &attn);
    for (const auto& a : attn) {
      if (a.cross) CHECK(a.weights.isOnes());
    }
  }

  TEST_CASE("a single query makes self-attention trivial") {
    Rng rng(2);
    const auto cfg = small_config(1);
    const auto state = init_model(cfg, 3);
    std::vector<AttentionRecord> attn;
    decoder_layer(random_matrix(rng, 1, cfg.d), random_matrix(rng, 5, cfg.d), state, 0, cfg, &attn);
    int self_records = 0;
    for (const auto& a : attn) {
      if (!a.cross) {
        ++self_records;
        CHECK(a.weights.rows() == 1);
        CHECK(a.weights(0, 0) == 1.0);
      }
    }
    CHECK(self_records == cfg.heads);
  }

  TEST_CASE("permuting visual rows leaves the layer output unchanged") {
    Rng rng(3);
    const auto cfg = small_config(1);
    const auto state = init_model(cfg, 4);
    const Matrix q = random_matrix(rng, 5, cfg.d);
    const Matrix v = random_matrix(rng, 7, cfg.d);
    Matrix pv = v;
    pv.row(0) = v.row(6);
    pv.row(6) = v.row(0);
    pv.row(2) = v.row(3);
    pv.row(3) = v.row(2);
    const Matrix a = decoder_layer(q, v, state, 0, cfg);
    const Matrix b = decoder_layer(q, pv, state, 0, cfg);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("forward shapes, snapshots and zero affinity") {
    Rng rng(4);
    const auto cfg = small_config(1);
    const auto state = init_model(cfg, 5);
    const int ns = 6, length = 3;
    const auto trace =
        forward(random_matrix(rng, ns, cfg.d), random_matrix(rng, ns, cfg.d), random_matrix(rng, length + 2, cfg.e), cfg,
                state);
    CHECK(trace.queries.size() == 2);
    CHECK(trace.logits.size() == 2);
    for (std::size_t l = 0; l < trace.logits.size(); ++l) {
      CHECK(trace.queries[l].rows() == length + 2);
      CHECK(trace.queries[l].cols() == cfg.d);
      CHECK(trace.logits[l].rows() == length + 2);
      CHECK(trace.logits[l].cols() == ns);
      CHECK(trace.scores[l].minCoeff() >= 0.0);
      CHECK(trace.scores[l].maxCoeff() <= 1.0);
    }
    const auto zero = forward(random_matrix(rng, ns, cfg.d), Matrix::Zero(ns, cfg.d),
                              random_matrix(rng, length + 2, cfg.e), cfg, state);
    for (const auto& l : zero.logits) CHECK(l.isZero());
  }

  TEST_CASE("forward is deterministic and matches the pooled route") {
    Rng rng(5);
    const auto cfg = small_config(2);
    const auto state = init_model(cfg, 6);
    const Matrix pooled = random_matrix(rng, 5, cfg.c);
    const Matrix tokens = random_matrix(rng, 4, cfg.e);
    const auto a = forward_pooled(pooled, tokens, cfg, state);
    const auto b = forward_pooled(pooled, tokens, cfg, state);
    CHECK(a.logits.back() == b.logits.back());
    const auto c = forward(pooled * state.at("proj.w1"), pooled * state.at("proj.w2"), tokens, cfg, state);
    CHECK((a.logits.back() - c.logits.back()).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("forward rejects mismatched widths") {
    const auto cfg = small_config(1);
    const auto state = init_model(cfg, 1);
    CHECK_THROWS_AS(forward(Matrix::Zero(3, cfg.d), Matrix::Zero(4, cfg.d), Matrix::Zero(3, cfg.e), cfg, state),
                    Error);
    CHECK_THROWS_AS(forward(Matrix::Zero(3, cfg.d), Matrix::Zero(3, cfg.d), Matrix::Zero(3, cfg.e + 1), cfg, state),
                    Error);
  }

  TEST_CASE("predict_masks thresholds and broadcasts") {
    const auto desc = one_phrase(2, 1);
    const auto part = SuperpointPartition::identity("s", 3);
    CHECK(predict_masks(constant_trace(4, 3, 10.0), desc, part).masks[0].count() == 3);
    CHECK(predict_masks(constant_trace(4, 3, -10.0), desc, part).masks[0].count() == 0);

    ForwardTrace t;
    t.logits.push_back(Matrix::Zero(4, 2));
    t.logits[0](2, 0) = 2.0;  // phrase head 1 sits at query row 2
    t.logits[0](2, 1) = -1.0;
    SuperpointPartition p;
    p.scene_id = "s";
    p.assignment = {0, 0, 1};
    p.num_superpoints = 2;
    const auto m = predict_masks(t, desc, p);
    CHECK(m.masks[0].to_bools() == std::vector<bool>{1, 1, 0});
    REQUIRE(m.sentence_mask);
    CHECK(m.sentence_mask->count() == 0);  // row 0 is all zeros, and 0 is not > 0

    auto with_sentence = desc;
    with_sentence.sentence_target = make_sentence_target(2, {0});
    t.logits[0](0, 1) = 1.0;
    const auto ms = predict_masks(t, with_sentence, p);
    REQUIRE(ms.sentence_mask);
    CHECK(ms.sentence_mask->to_bools() == std::vector<bool>{0, 0, 1});
    CHECK_THROWS_AS(predict_masks(constant_trace(2, 3, 1.0), desc, part), Error);
  }

  TEST_CASE("checkpoints round trip bit for bit") {
    const auto cfg = small_config(2);
    const auto state = init_model(cfg, 9);
    const auto bytes = checkpoint_bytes(cfg, state);
    const auto [cfg2, state2] = parse_checkpoint(bytes);
    CHECK(cfg2 == cfg);
    CHECK(state2.params == state.params);
    CHECK(checkpoint_bytes(cfg2, state2) == bytes);

    const auto dir = testing::scratch_dir("ckpt");
    save_checkpoint(dir / "m.ckpt", cfg, state);
    CHECK(load_checkpoint(dir / "m.ckpt").second.params == state.params);

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(parse_checkpoint(bad), Error);
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  }
}
