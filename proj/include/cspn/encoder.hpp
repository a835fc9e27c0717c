#pragma once

#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cspn/errors.hpp"
#include "cspn/matrix.hpp"
#include "cspn/params.hpp"
#include "cspn/tape.hpp"

namespace cspn {

struct EncoderConfig {
  int d_model = 128;
  int d_k = 128;
  int d_v = 128;
  int num_heads = 8;
  int num_layers = 2;
  int d_ff = 256;
  int max_len = 300;
  double ln_eps = 1e-6;

  int d_k_head() const { return d_k / num_heads; }
  int d_v_head() const { return d_v / num_heads; }

  void validate() const {
    if (d_model <= 0 || d_k <= 0 || d_v <= 0 || num_heads <= 0 || num_layers < 0 ||
        d_ff <= 0 || max_len <= 0)
      throw ConfigError("encoder dimensions must be positive");
    if (d_k % num_heads != 0 || d_v % num_heads != 0)
      throw ConfigError("d_k and d_v must be divisible by the head count");
    if (d_model % 2 != 0)
      throw ConfigError("d_model must be even (span vectors split it in half)");
  }
};

struct HeadParams {
  Parameter* wq = nullptr;  // d_model x d_k/h
  Parameter* wk = nullptr;  // d_model x d_k/h
  Parameter* wv = nullptr;  // d_model x d_v/h
  Parameter* wo = nullptr;  // d_v/h x d_model
};

struct EncoderLayerParams {
  std::vector<HeadParams> heads;
  Parameter* w1 = nullptr;  // d_model x d_ff
  Parameter* b1 = nullptr;  // 1 x d_ff
  Parameter* w2 = nullptr;  // d_ff x d_model
  Parameter* b2 = nullptr;  // 1 x d_model
  Parameter* ln1_gain = nullptr;
  Parameter* ln1_bias = nullptr;
  Parameter* ln2_gain = nullptr;
  Parameter* ln2_bias = nullptr;
};

struct EncoderParams {
  EncoderConfig config;
  Parameter* word_emb = nullptr;   // vocab x d_model (row 0 = UNK)
  Parameter* start_emb = nullptr;  // 1 x d_model
  Parameter* stop_emb = nullptr;   // 1 x d_model
  Parameter* pos_emb = nullptr;    // (max_len + 2) x d_model
  Parameter* ext_proj = nullptr;   // d_ext x d_model, only with external vectors
  std::vector<EncoderLayerParams> layers;
};

/// Creates and initializes all encoder parameters in `store`. d_ext = 0 means
/// no external context-vector projection.
inline EncoderParams make_encoder_params(ParamStore& store, const EncoderConfig& cfg,
                                         int word_vocab_size, int d_ext,
                                         std::mt19937_64& rng) {
  cfg.validate();
  EncoderParams p;
  p.config = cfg;
  p.word_emb = &store.create("emb.word", word_vocab_size, cfg.d_model);
  init_uniform(p.word_emb->value, rng);
  p.start_emb = &store.create("emb.start", 1, cfg.d_model);
  init_uniform(p.start_emb->value, rng);
  p.stop_emb = &store.create("emb.stop", 1, cfg.d_model);
  init_uniform(p.stop_emb->value, rng);
  p.pos_emb = &store.create("emb.pos", cfg.max_len + 2, cfg.d_model);
  init_uniform(p.pos_emb->value, rng);
  if (d_ext > 0) {
    p.ext_proj = &store.create("emb.ext_proj", d_ext, cfg.d_model);
    init_glorot(p.ext_proj->value, rng);
  }
  for (int k = 0; k < cfg.num_layers; ++k) {
    EncoderLayerParams layer;
    std::string base = "enc.layer" + std::to_string(k) + ".";
    for (int i = 0; i < cfg.num_heads; ++i) {
      std::string hbase = base + "head" + std::to_string(i) + ".";
      HeadParams h;
      h.wq = &store.create(hbase + "wq", cfg.d_model, cfg.d_k_head());
      h.wk = &store.create(hbase + "wk", cfg.d_model, cfg.d_k_head());
      h.wv = &store.create(hbase + "wv", cfg.d_model, cfg.d_v_head());
      h.wo = &store.create(hbase + "wo", cfg.d_v_head(), cfg.d_model);
      init_glorot(h.wq->value, rng);
      init_glorot(h.wk->value, rng);
      init_glorot(h.wv->value, rng);
      init_glorot(h.wo->value, rng);
      layer.heads.push_back(h);
    }
    layer.w1 = &store.create(base + "ff.w1", cfg.d_model, cfg.d_ff);
    layer.b1 = &store.create(base + "ff.b1", 1, cfg.d_ff);
    layer.w2 = &store.create(base + "ff.w2", cfg.d_ff, cfg.d_model);
    layer.b2 = &store.create(base + "ff.b2", 1, cfg.d_model);
    init_glorot(layer.w1->value, rng);
    init_glorot(layer.w2->value, rng);
    layer.ln1_gain = &store.create(base + "ln1.gain", 1, cfg.d_model);
    layer.ln1_bias = &store.create(base + "ln1.bias", 1, cfg.d_model);
    layer.ln2_gain = &store.create(base + "ln2.gain", 1, cfg.d_model);
    layer.ln2_bias = &store.create(base + "ln2.bias", 1, cfg.d_model);
    init_const(layer.ln1_gain->value, 1.0);
    init_const(layer.ln2_gain->value, 1.0);
    p.layers.push_back(layer);
  }
  return p;
}

/// Looks up encoder layer/head handles in a store that already holds them
/// (after loading a checkpoint).
inline EncoderParams bind_encoder_params(ParamStore& store, const EncoderConfig& cfg,
                                         bool has_external) {
  EncoderParams p;
  p.config = cfg;
  p.word_emb = &store.at("emb.word");
  p.start_emb = &store.at("emb.start");
  p.stop_emb = &store.at("emb.stop");
  p.pos_emb = &store.at("emb.pos");
  if (has_external) p.ext_proj = &store.at("emb.ext_proj");
  for (int k = 0; k < cfg.num_layers; ++k) {
    EncoderLayerParams layer;
    std::string base = "enc.layer" + std::to_string(k) + ".";
    for (int i = 0; i < cfg.num_heads; ++i) {
      std::string hbase = base + "head" + std::to_string(i) + ".";
      layer.heads.push_back({&store.at(hbase + "wq"), &store.at(hbase + "wk"),
                             &store.at(hbase + "wv"), &store.at(hbase + "wo")});
    }
    layer.w1 = &store.at(base + "ff.w1");
    layer.b1 = &store.at(base + "ff.b1");
    layer.w2 = &store.at(base + "ff.w2");
    layer.b2 = &store.at(base + "ff.b2");
    layer.ln1_gain = &store.at(base + "ln1.gain");
    layer.ln1_bias = &store.at(base + "ln1.bias");
    layer.ln2_gain = &store.at(base + "ln2.gain");
    layer.ln2_bias = &store.at(base + "ln2.bias");
    p.layers.push_back(layer);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes (tape-based; inference simply never calls backward)
// ---------------------------------------------------------------------------

/// Word + positional embedding, wrapped in START/STOP rows: (L+2) x d_model.
/// Row t is content(t) + p_t, where content is the START embedding, the word
/// embeddings (plus projected external vectors when present), then STOP.
inline Var embed_sentence(Tape& tape, const std::vector<int>& word_ids,
                          const EncoderParams& p, const Matrix* external = nullptr) {
  const int L = int(word_ids.size());
  if (L < 1) throw ConfigError("cannot embed an empty sentence");
  if (L > p.config.max_len) throw SentenceTooLong(size_t(L), size_t(p.config.max_len));
  Var tokens = tape.gather_rows(*p.word_emb, word_ids);
  if (external) {
    if (!p.ext_proj)
      throw ExternalShapeMismatch("model has no external-vector projection");
    if (external->rows != L || external->cols != p.ext_proj->value.rows)
      throw ExternalShapeMismatch("got " + external->shape_str() + ", want " +
                                  std::to_string(L) + "x" +
                                  std::to_string(p.ext_proj->value.rows));
    tokens = tape.add(tokens, tape.matmul(tape.constant(*external), tape.leaf(*p.ext_proj)));
  } else if (p.ext_proj) {
    throw ExternalShapeMismatch("model expects external vectors for every sentence");
  }
  Var content =
      tape.concat_rows(tape.concat_rows(tape.leaf(*p.start_emb), tokens), tape.leaf(*p.stop_emb));
  std::vector<int> positions(size_t(L) + 2);
  std::iota(positions.begin(), positions.end(), 0);
  return tape.add(content, tape.gather_rows(*p.pos_emb, positions));
}

/// Scaled dot-product attention for one head: softmax(Q K^T / sqrt(d_k/h)) V.
/// Output is L x d_v/h; the per-head output projection lives in multi_head.
inline Var single_head(Tape& tape, Var x, const HeadParams& h, int d_k_head) {
  Var q = tape.matmul(x, tape.leaf(*h.wq));
  Var k = tape.matmul(x, tape.leaf(*h.wk));
  Var v = tape.matmul(x, tape.leaf(*h.wv));
  Var logits = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(double(d_k_head)));
  return tape.matmul(tape.softmax_rows(logits), v);
}

/// Sum over heads of SingleHead^(i) W_O^(i): L x d_model.
inline Var multi_head(Tape& tape, Var x, const EncoderLayerParams& layer, int d_k_head) {
  Var out{-1};
  for (const HeadParams& h : layer.heads) {
    Var head = tape.matmul(single_head(tape, x, h, d_k_head), tape.leaf(*h.wo));
    out = out.id < 0 ? head : tape.add(out, head);
  }
  return out;
}

/// Position-wise W_2 relu(W_1 x + b_1) + b_2.
inline Var feed_forward(Tape& tape, Var x, const EncoderLayerParams& layer) {
  Var h = tape.relu(tape.add_rowvec(tape.matmul(x, tape.leaf(*layer.w1)), tape.leaf(*layer.b1)));
  return tape.add_rowvec(tape.matmul(h, tape.leaf(*layer.w2)), tape.leaf(*layer.b2));
}

/// Full encoder: embedding followed by num_layers blocks of
/// LayerNorm(x + MultiHead(x)) and LayerNorm(x + FeedForward(x)).
inline Var encode(Tape& tape, const std::vector<int>& word_ids, const EncoderParams& p,
                  const Matrix* external = nullptr) {
  Var x = embed_sentence(tape, word_ids, p, external);
  for (const EncoderLayerParams& layer : p.layers) {
    Var attn = multi_head(tape, x, layer, p.config.d_k_head());
    x = tape.layer_norm(tape.add(x, attn), tape.leaf(*layer.ln1_gain),
                        tape.leaf(*layer.ln1_bias), p.config.ln_eps);
    Var ff = feed_forward(tape, x, layer);
    x = tape.layer_norm(tape.add(x, ff), tape.leaf(*layer.ln2_gain),
                        tape.leaf(*layer.ln2_bias), p.config.ln_eps);
  }
  return x;
}

/// Convenience value-only encode on a private tape.
inline Matrix encode_values(const std::vector<int>& word_ids, const EncoderParams& p,
                            const Matrix* external = nullptr) {
  Tape tape;
  return tape.value(encode(tape, word_ids, p, external));
}

}  // namespace cspn
