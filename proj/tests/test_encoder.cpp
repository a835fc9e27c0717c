#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "cspn/encoder.hpp"
#include "testutil.hpp"

using namespace cspn;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int r, int c) {
  Matrix m(r, c);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& x : m.data) x = dist(rng);
  return m;
}

EncoderConfig tiny_encoder_config() {
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.d_k = 8;
  cfg.d_v = 8;
  cfg.num_heads = 2;
  cfg.num_layers = 1;
  cfg.d_ff = 8;
  cfg.max_len = 8;
  return cfg;
}

/// Dense-loop attention oracle, no tape involved.
Matrix oracle_single_head(const Matrix& x, const Matrix& wq, const Matrix& wk,
                          const Matrix& wv, int d_k_head) {
  auto mm = [](const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
      for (int j = 0; j < b.cols; ++j) {
        double s = 0.0;
        for (int k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
        c(i, j) = s;
      }
    return c;
  };
  Matrix q = mm(x, wq), k = mm(x, wk), v = mm(x, wv);
  Matrix att(x.rows, x.rows);
  for (int i = 0; i < x.rows; ++i) {
    double mx = -1e300;
    std::vector<double> row(size_t(x.rows));
    for (int j = 0; j < x.rows; ++j) {
      double dot = 0.0;
      for (int c = 0; c < q.cols; ++c) dot += q(i, c) * k(j, c);
      row[size_t(j)] = dot / std::sqrt(double(d_k_head));
      mx = std::max(mx, row[size_t(j)]);
    }
    double sum = 0.0;
    for (int j = 0; j < x.rows; ++j) {
      row[size_t(j)] = std::exp(row[size_t(j)] - mx);
      sum += row[size_t(j)];
    }
    for (int j = 0; j < x.rows; ++j) att(i, j) = row[size_t(j)] / sum;
  }
  return mm(att, v);
}

}  // namespace

TEST_CASE("embedding shape and content") {
  ParamStore store;
  std::mt19937_64 rng(21);
  EncoderParams p = make_encoder_params(store, tiny_encoder_config(), 5, 0, rng);

  SECTION("one word gives three rows") {
    Tape tape;
    Var e = embed_sentence(tape, {1}, p);
    REQUIRE(tape.value(e).rows == 3);
    REQUIRE(tape.value(e).cols == 8);
  }

  SECTION("identical words at different positions embed differently") {
    Tape tape;
    Var e = embed_sentence(tape, {2, 2}, p);
    const Matrix& m = tape.value(e);
    bool differ = false;
    for (int c = 0; c < m.cols; ++c)
      if (m(1, c) != m(2, c)) differ = true;
    REQUIRE(differ);
  }

  SECTION("zero word table leaves exactly the positional rows") {
    init_const(p.word_emb->value, 0.0);
    Tape tape;
    Var e = embed_sentence(tape, {1, 3, 2}, p);
    const Matrix& m = tape.value(e);
    for (int t = 1; t <= 3; ++t)
      for (int c = 0; c < m.cols; ++c) REQUIRE(m(t, c) == p.pos_emb->value(t, c));
  }

  SECTION("length guard") {
    std::vector<int> too_long(9, 1);
    Tape tape;
    REQUIRE_THROWS_AS(embed_sentence(tape, too_long, p), SentenceTooLong);
  }
}

TEST_CASE("single head attention") {
  ParamStore store;
  std::mt19937_64 rng(22);
  EncoderConfig cfg = tiny_encoder_config();
  EncoderParams p = make_encoder_params(store, cfg, 5, 0, rng);
  const HeadParams& h = p.layers[0].heads[0];

  SECTION("one position attends to itself with weight one") {
    Matrix x = random_matrix(rng, 1, 8);
    Tape tape;
    Var out = single_head(tape, tape.constant(x), h, cfg.d_k_head());
    Matrix v = matmul(x, h.wv->value);
    REQUIRE(max_abs_diff(tape.value(out), v) < 1e-12);
  }

  SECTION("zero queries give uniform attention") {
    init_const(h.wq->value, 0.0);
    Matrix x = random_matrix(rng, 4, 8);
    Tape tape;
    Var out = single_head(tape, tape.constant(x), h, cfg.d_k_head());
    Matrix v = matmul(x, h.wv->value);
    Matrix mean(1, v.cols);
    for (int j = 0; j < v.cols; ++j) {
      for (int i = 0; i < v.rows; ++i) mean(0, j) += v(i, j);
      mean(0, j) /= v.rows;
    }
    const Matrix& o = tape.value(out);
    for (int i = 0; i < o.rows; ++i)
      for (int j = 0; j < o.cols; ++j)
        REQUIRE(o(i, j) == Catch::Approx(mean(0, j)).margin(1e-12));
  }

  SECTION("matches the dense-loop oracle") {
    Matrix x = random_matrix(rng, 4, 8);
    Tape tape;
    Var out = single_head(tape, tape.constant(x), h, cfg.d_k_head());
    Matrix want = oracle_single_head(x, h.wq->value, h.wk->value, h.wv->value, cfg.d_k_head());
    REQUIRE(max_abs_diff(tape.value(out), want) < 1e-12);
  }
}

TEST_CASE("multi head attention") {
  std::mt19937_64 rng(23);

  SECTION("one head reduces to single head plus projection") {
    ParamStore store;
    EncoderConfig cfg = tiny_encoder_config();
    cfg.num_heads = 1;
    EncoderParams p = make_encoder_params(store, cfg, 5, 0, rng);
    Matrix x = random_matrix(rng, 3, 8);
    Tape tape;
    Var mh = multi_head(tape, tape.constant(x), p.layers[0], cfg.d_k_head());
    Var sh = tape.matmul(single_head(tape, tape.constant(x), p.layers[0].heads[0],
                                     cfg.d_k_head()),
                         tape.leaf(*p.layers[0].heads[0].wo));
    REQUIRE(max_abs_diff(tape.value(mh), tape.value(sh)) == 0.0);
  }

  SECTION("identical heads sum to h times one head") {
    ParamStore store;
    EncoderConfig cfg = tiny_encoder_config();
    EncoderParams p = make_encoder_params(store, cfg, 5, 0, rng);
    for (int i = 1; i < cfg.num_heads; ++i) {
      p.layers[0].heads[size_t(i)].wq->value = p.layers[0].heads[0].wq->value;
      p.layers[0].heads[size_t(i)].wk->value = p.layers[0].heads[0].wk->value;
      p.layers[0].heads[size_t(i)].wv->value = p.layers[0].heads[0].wv->value;
      p.layers[0].heads[size_t(i)].wo->value = p.layers[0].heads[0].wo->value;
    }
    Matrix x = random_matrix(rng, 4, 8);
    Tape tape;
    Var mh = multi_head(tape, tape.constant(x), p.layers[0], cfg.d_k_head());
    Var one = tape.matmul(single_head(tape, tape.constant(x), p.layers[0].heads[0],
                                      cfg.d_k_head()),
                          tape.leaf(*p.layers[0].heads[0].wo));
    REQUIRE(max_abs_diff(tape.value(mh), scale(tape.value(one), double(cfg.num_heads))) <
            1e-12);
  }

  SECTION("sum of projected heads equals concat then stacked block projection") {
    ParamStore store;
    EncoderConfig cfg = tiny_encoder_config();
    EncoderParams p = make_encoder_params(store, cfg, 5, 0, rng);
    Matrix x = random_matrix(rng, 5, 8);
    Tape tape;
    Var mh = multi_head(tape, tape.constant(x), p.layers[0], cfg.d_k_head());
    // Oracle: concatenate raw head outputs, multiply once by the stacked
    // projection [W_O^(1); W_O^(2); ...].
    Matrix concat(5, 0);
    Matrix stacked(0, 8);
    for (const HeadParams& h : p.layers[0].heads) {
      Matrix head = oracle_single_head(x, h.wq->value, h.wk->value, h.wv->value,
                                       cfg.d_k_head());
      concat = concat.cols == 0 ? head : concat_cols(concat, head);
      stacked = stacked.rows == 0 ? h.wo->value : concat_rows(stacked, h.wo->value);
    }
    Matrix want = matmul(concat, stacked);
    REQUIRE(max_abs_diff(tape.value(mh), want) < 1e-10);
  }

  SECTION("without positions multi_head is equivariant to row permutation") {
    ParamStore store;
    EncoderConfig cfg = tiny_encoder_config();
    EncoderParams p = make_encoder_params(store, cfg, 5, 0, rng);
    Matrix x = random_matrix(rng, 4, 8);
    Matrix xp(4, 8);  // rows reversed
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 8; ++j) xp(i, j) = x(3 - i, j);
    Tape tape;
    Var a = multi_head(tape, tape.constant(x), p.layers[0], cfg.d_k_head());
    Var b = multi_head(tape, tape.constant(xp), p.layers[0], cfg.d_k_head());
    const Matrix& ma = tape.value(a);
    const Matrix& mb = tape.value(b);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 8; ++j) REQUIRE(ma(i, j) == Catch::Approx(mb(3 - i, j)).margin(1e-12));
  }
}

TEST_CASE("feed forward") {
  std::mt19937_64 rng(24);
  ParamStore store;
  EncoderConfig cfg = tiny_encoder_config();
  EncoderParams p = make_encoder_params(store, cfg, 5, 0, rng);
  const EncoderLayerParams& layer = p.layers[0];

  SECTION("zero weights broadcast the output bias") {
    init_const(layer.w1->value, 0.0);
    init_const(layer.w2->value, 0.0);
    init_uniform(layer.b2->value, rng);
    Matrix x = random_matrix(rng, 3, 8);
    Tape tape;
    Var out = feed_forward(tape, tape.constant(x), layer);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 8; ++j) REQUIRE(tape.value(out)(i, j) == layer.b2->value(0, j));
  }

  SECTION("position-wise: permuting rows permutes outputs") {
    Matrix x = random_matrix(rng, 4, 8);
    Matrix xp(4, 8);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 8; ++j) xp(i, j) = x(3 - i, j);
    Tape tape;
    Var va = feed_forward(tape, tape.constant(x), layer);
    Var vb = feed_forward(tape, tape.constant(xp), layer);
    const Matrix& a = tape.value(va);
    const Matrix& b = tape.value(vb);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 8; ++j) REQUIRE(a(i, j) == b(3 - i, j));
  }

  SECTION("matches a dense-loop oracle") {
    Matrix x = random_matrix(rng, 3, 8);
    Tape tape;
    const Matrix& got = tape.value(feed_forward(tape, tape.constant(x), layer));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 8; ++j) {
        double want = layer.b2->value(0, j);
        for (int k = 0; k < cfg.d_ff; ++k) {
          double pre = layer.b1->value(0, k);
          for (int c = 0; c < 8; ++c) pre += x(i, c) * layer.w1->value(c, k);
          want += std::max(0.0, pre) * layer.w2->value(k, j);
        }
        REQUIRE(got(i, j) == Catch::Approx(want).margin(1e-12));
      }
  }
}

TEST_CASE("full encoder") {
  std::mt19937_64 rng(25);

  SECTION("zero layers reduce to the embedding") {
    ParamStore store;
    EncoderConfig cfg = tiny_encoder_config();
    cfg.num_layers = 0;
    EncoderParams p = make_encoder_params(store, cfg, 5, 0, rng);
    Tape tape;
    Var e = embed_sentence(tape, {1, 2, 3}, p);
    Var enc = encode(tape, {1, 2, 3}, p);
    REQUIRE(tape.value(e) == tape.value(enc));
  }

  SECTION("deterministic outputs") {
    ParamStore store;
    EncoderParams p = make_encoder_params(store, tiny_encoder_config(), 5, 0, rng);
    Matrix a = encode_values({1, 4, 2}, p);
    Matrix b = encode_values({1, 4, 2}, p);
    REQUIRE(a == b);
    REQUIRE(a.rows == 5);
    REQUIRE(a.cols == 8);
  }

  SECTION("gradient of a scalar readout matches finite differences") {
    ParamStore store;
    EncoderParams p = make_encoder_params(store, tiny_encoder_config(), 5, 0, rng);
    Matrix mix_left = random_matrix(rng, 2, 5);
    Matrix mix_right = random_matrix(rng, 8, 2);
    std::vector<int> sentence = {1, 3, 2};
    auto loss = [&](bool accumulate) {
      Tape tape;
      Var out = encode(tape, sentence, p);
      Var l = tape.sum_all(
          tape.matmul(tape.matmul(tape.constant(mix_left), out), tape.constant(mix_right)));
      double v = tape.value(l)(0, 0);
      if (accumulate) tape.backward(l);
      return v;
    };
    testutil::GradCheck r = testutil::check_gradients(store, loss);
    INFO(r.failures << "/" << r.checked << " failures, worst " << r.worst);
    REQUIRE(r.failures == 0);
  }
}

TEST_CASE("external vector projection") {
  std::mt19937_64 rng(26);
  ParamStore store;
  EncoderParams p = make_encoder_params(store, tiny_encoder_config(), 5, 3, rng);
  Matrix ext = random_matrix(rng, 2, 3);

  SECTION("adds the projected vectors to the token rows") {
    Tape tape;
    Var with = embed_sentence(tape, {1, 2}, p, &ext);
    ParamStore store2;
    std::mt19937_64 rng2(26);
    EncoderParams p2 = make_encoder_params(store2, tiny_encoder_config(), 5, 3, rng2);
    Matrix zero_ext(2, 3);
    Tape tape2;
    Var without = embed_sentence(tape2, {1, 2}, p2, &zero_ext);
    Matrix proj = matmul(ext, p.ext_proj->value);
    const Matrix& a = tape.value(with);
    const Matrix& b = tape2.value(without);
    for (int j = 0; j < 8; ++j) {
      REQUIRE(a(0, j) == b(0, j));  // START row untouched
      REQUIRE(a(1, j) == Catch::Approx(b(1, j) + proj(0, j)).margin(1e-12));
      REQUIRE(a(2, j) == Catch::Approx(b(2, j) + proj(1, j)).margin(1e-12));
      REQUIRE(a(3, j) == b(3, j));  // STOP row untouched
    }
  }

  SECTION("shape errors") {
    Matrix bad(2, 4);
    Tape tape;
    REQUIRE_THROWS_AS(embed_sentence(tape, {1, 2}, p, &bad), ExternalShapeMismatch);
    REQUIRE_THROWS_AS(embed_sentence(tape, {1, 2}, p, nullptr), ExternalShapeMismatch);
  }
}

TEST_CASE("encoder config validation") {
  EncoderConfig cfg = tiny_encoder_config();
  cfg.d_k = 7;  // not divisible by 2 heads
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_encoder_config();
  cfg.d_model = 9;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_encoder_config();
  cfg.d_ff = 0;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
}
