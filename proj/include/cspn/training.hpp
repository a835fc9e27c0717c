#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cspn/chart.hpp"
#include "cspn/errors.hpp"
#include "cspn/eval.hpp"
#include "cspn/model.hpp"
#include "cspn/span_model.hpp"
#include "cspn/tape.hpp"
#include "cspn/treebank.hpp"

namespace cspn {

struct TrainConfig {
  int max_epochs = 150;
  int batch_size = 150;              // sentences per optimizer step
  int sub_batch_max_tokens = 1500;   // token budget per sub-batch (words + START/STOP)
  double learning_rate = 1e-3;
  double pos_loss_weight = 1.0;      // lambda for the auxiliary POS loss
  uint64_t seed = 42;
  int patience = 10;                 // epochs without dev-F1 improvement
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.998;
  double adam_eps = 1e-9;

  void validate() const {
    if (max_epochs <= 0 || batch_size <= 0 || sub_batch_max_tokens <= 0 ||
        learning_rate <= 0 || patience <= 0 || pos_loss_weight < 0)
      throw ConfigError("training hyperparameters must be positive");
  }
};

// ---------------------------------------------------------------------------
// Adaptive-moment optimizer
// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.998, double eps = 1e-9)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update from the accumulated gradients. Does not zero them.
  void step(ParamStore& store) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t p = 0; p < store.size(); ++p) {
      Parameter& param = store[p];
      if (param.adam_m.size() == 0) {
        param.adam_m = Matrix(param.value.rows, param.value.cols);
        param.adam_v = Matrix(param.value.rows, param.value.cols);
      }
      for (size_t i = 0; i < param.value.size(); ++i) {
        const double g = param.grad.data[i];
        double& mm = param.adam_m.data[i];
        double& vv = param.adam_v.data[i];
        mm = beta1_ * mm + (1.0 - beta1_) * g;
        vv = beta2_ * vv + (1.0 - beta2_) * g * g;
        param.value.data[i] -= lr_ * (mm / bc1) / (std::sqrt(vv / bc2) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossBreakdown {
  double total = 0.0;
  double hinge = 0.0;
  double pos_ce = 0.0;
};

/// L = L_c + lambda * L_pos for one sentence. When accumulate is true the
/// gradient flows into the model's parameter gradients; the structured argmax
/// is held constant, so a satisfied margin contributes no gradient. Sentences
/// without gold tags drop the POS term (lambda forced to 0) with a warning.
inline LossBreakdown total_loss(Model& m, const ParseTree& gold_tree, double lambda,
                                bool accumulate, const Matrix* external = nullptr,
                                std::ostream* warn = &std::cerr) {
  Sentence sent = sentence_of(gold_tree);
  bool have_tags = !sent.pos_tags.empty();
  for (const std::string& t : sent.pos_tags)
    if (t.empty()) have_tags = false;
  if (lambda > 0 && !have_tags) {
    if (warn) *warn << "warning: sentence lacks gold POS tags, dropping POS loss\n";
    lambda = 0.0;
  }

  Tape tape;
  ChartComputation cc = score_chart(tape, m.word_ids(sent.words), m.encoder, m.scorer,
                                    m.pos_head, m.labels, external);
  HingeLoss h = hinge_loss_detailed(cc.chart, gold_tree, sent);

  LossBreakdown out;
  out.hinge = h.value;
  auto to_cells = [&](const std::vector<LabeledCell>& cells) {
    std::vector<std::pair<int, int>> rc;
    rc.reserve(cells.size());
    for (const LabeledCell& c : cells) rc.push_back({span_row(c.i, c.j, cc.n), c.label});
    return rc;
  };

  Var loss{-1};
  if (h.value > 0.0) {
    Var pred_sum = tape.gather_sum(cc.span_scores, to_cells(h.violator.pred_cells));
    Var gold_sum = tape.gather_sum(cc.span_scores, to_cells(h.gold_cells));
    loss = tape.add_scalar(tape.sub(pred_sum, gold_sum), double(h.violator.delta));
  }
  if (lambda > 0.0) {
    std::vector<int> targets;
    targets.reserve(sent.pos_tags.size());
    for (const std::string& t : sent.pos_tags) targets.push_back(m.pos_tags.id_or_reserved(t));
    Var ce = tape.cross_entropy_mean(cc.pos_logits, std::move(targets));
    out.pos_ce = tape.value(ce)(0, 0);
    Var weighted = tape.scale(ce, lambda);
    loss = loss.id < 0 ? weighted : tape.add(loss, weighted);
  }
  out.total = out.hinge + lambda * out.pos_ce;
  if (accumulate && loss.id >= 0) tape.backward(loss);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "CSPNCKPT";
inline constexpr unsigned char kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Model& m, int epoch,
                            double dev_f1) {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["dev_f1"] = dev_f1;
  j["config"] = {{"d_model", m.config.encoder.d_model},
                 {"d_k", m.config.encoder.d_k},
                 {"d_v", m.config.encoder.d_v},
                 {"num_heads", m.config.encoder.num_heads},
                 {"num_layers", m.config.encoder.num_layers},
                 {"d_ff", m.config.encoder.d_ff},
                 {"max_len", m.config.encoder.max_len},
                 {"ln_eps", m.config.encoder.ln_eps},
                 {"d_hidden", m.config.d_hidden},
                 {"d_ext", m.config.d_ext}};
  j["words"] = m.words.names();
  j["pos_tags"] = m.pos_tags.names();
  j["labels"] = m.labels.names();
  std::string header = j.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write(kCheckpointMagic, 8);
  os.put(char(kCheckpointVersion));
  detail::write_u32_le(os, uint32_t(header.size()));
  os.write(header.data(), std::streamsize(header.size()));
  save_params(os, m.store);
  if (!os) throw IoError("writing " + path + " failed");
}

struct LoadedCheckpoint {
  Model model;
  int epoch = 0;
  double dev_f1 = 0.0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != kCheckpointMagic)
    throw VersionError(path + " is not a checkpoint");
  int version = is.get();
  if (version != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  uint32_t header_len = detail::read_u32_le(is);
  std::string header(header_len, '\0');
  is.read(header.data(), header_len);
  if (!is) throw IoError("truncated checkpoint header");
  nlohmann::json j = nlohmann::json::parse(header);

  LoadedCheckpoint ck;
  ck.epoch = j.at("epoch").get<int>();
  ck.dev_f1 = j.at("dev_f1").get<double>();
  Model& m = ck.model;
  const auto& c = j.at("config");
  m.config.encoder.d_model = c.at("d_model").get<int>();
  m.config.encoder.d_k = c.at("d_k").get<int>();
  m.config.encoder.d_v = c.at("d_v").get<int>();
  m.config.encoder.num_heads = c.at("num_heads").get<int>();
  m.config.encoder.num_layers = c.at("num_layers").get<int>();
  m.config.encoder.d_ff = c.at("d_ff").get<int>();
  m.config.encoder.max_len = c.at("max_len").get<int>();
  m.config.encoder.ln_eps = c.at("ln_eps").get<double>();
  m.config.d_hidden = c.at("d_hidden").get<int>();
  m.config.d_ext = c.at("d_ext").get<int>();

  auto load_vocab = [](const nlohmann::json& names) {
    auto it = names.begin();
    Vocab v(it->get<std::string>());
    for (++it; it != names.end(); ++it) v.add(it->get<std::string>());
    return v;
  };
  m.words = load_vocab(j.at("words"));
  m.pos_tags = load_vocab(j.at("pos_tags"));
  m.labels = load_vocab(j.at("labels"));

  // Recreate parameters in the canonical order, then overwrite every value.
  std::mt19937_64 rng(0);
  m.encoder = make_encoder_params(m.store, m.config.encoder, m.words.size(), m.config.d_ext, rng);
  m.scorer = make_span_scorer_params(m.store, m.config.encoder.d_model, m.config.d_hidden,
                                     m.labels.size(), rng, m.config.encoder.ln_eps);
  m.pos_head = make_pos_head_params(m.store, m.config.encoder.d_model, m.pos_tags.size(), rng);
  size_t declared = m.store.size();
  size_t loaded = load_params_strict(is, m.store);
  if (loaded != declared)
    throw VersionError("checkpoint holds " + std::to_string(loaded) + " parameters, model has " +
                       std::to_string(declared));
  return ck;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_f1 = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  int best_epoch = 0;
  double best_dev_f1 = 0.0;
  std::vector<EpochLog> log;
};

/// Margin training with the auxiliary POS loss. Epochs shuffle (seeded),
/// batches of batch_size sentences split into sub-batches under the token
/// budget, gradients accumulate over the batch, one optimizer step per batch.
/// After every epoch dev F1 decides the best parameters, which are restored
/// into the model on return. Dev may be empty, in which case the final epoch
/// wins. Sentences over the token budget are skipped with a warning.
inline TrainResult train(Model& m, const Corpus& train_corpus, const Corpus& dev_corpus,
                         const TrainConfig& cfg,
                         const std::vector<Matrix>* train_vecs = nullptr,
                         const std::vector<Matrix>* dev_vecs = nullptr,
                         std::ostream* progress = &std::cout,
                         std::ostream* warn = &std::cerr) {
  cfg.validate();
  if (train_corpus.empty()) throw EmptyCorpus();

  std::vector<size_t> usable;
  for (size_t i = 0; i < train_corpus.size(); ++i) {
    int tokens = count_leaves(train_corpus[i]) + 2;
    if (tokens > cfg.sub_batch_max_tokens) {
      if (warn)
        *warn << "warning: skipping training sentence " << (i + 1) << " (" << tokens
              << " tokens exceed the sub-batch budget)\n";
      continue;
    }
    usable.push_back(i);
  }
  if (usable.empty()) throw EmptyCorpus();

  Adam adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  std::vector<Matrix> best_values;
  int stale = 0;

  auto snapshot = [&]() {
    best_values.clear();
    for (size_t p = 0; p < m.store.size(); ++p) best_values.push_back(m.store[p].value);
  };
  auto parse_dev = [&]() {
    Corpus pred;
    pred.reserve(dev_corpus.size());
    for (size_t i = 0; i < dev_corpus.size(); ++i) {
      Sentence s = sentence_of(dev_corpus[i]);
      const Matrix* ext = dev_vecs ? &(*dev_vecs)[i] : nullptr;
      pred.push_back(parse_sentence(m, s.words, ext).tree);
    }
    return evaluate_corpus(pred, dev_corpus).scores.f1;
  };

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<size_t> order = usable;
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    size_t loss_count = 0;
    for (size_t batch_start = 0; batch_start < order.size();
         batch_start += size_t(cfg.batch_size)) {
      size_t batch_end = std::min(order.size(), batch_start + size_t(cfg.batch_size));
      m.store.zero_grads();
      // Sub-batches bound the token total; losses still accumulate over the
      // whole batch before the single optimizer step.
      size_t s = batch_start;
      while (s < batch_end) {
        int budget = cfg.sub_batch_max_tokens;
        size_t sub_end = s;
        while (sub_end < batch_end) {
          int tokens = count_leaves(train_corpus[order[sub_end]]) + 2;
          if (tokens > budget && sub_end > s) break;
          budget -= tokens;
          ++sub_end;
        }
        for (size_t k = s; k < sub_end; ++k) {
          const size_t idx = order[k];
          const Matrix* ext = train_vecs ? &(*train_vecs)[idx] : nullptr;
          LossBreakdown lb =
              total_loss(m, train_corpus[idx], cfg.pos_loss_weight, true, ext, warn);
          if (!std::isfinite(lb.total))
            throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
          loss_sum += lb.total;
          ++loss_count;
        }
        s = sub_end;
      }
      const double inv = 1.0 / double(batch_end - batch_start);
      for (size_t p = 0; p < m.store.size(); ++p)
        for (double& g : m.store[p].grad.data) g *= inv;
      adam.step(m.store);
    }

    double dev_f1 = dev_corpus.empty() ? 0.0 : parse_dev();
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochLog el{epoch, loss_sum / double(loss_count), dev_f1, seconds};
    result.log.push_back(el);
    if (progress) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch=%d train_loss=%.6f dev_f1=%.2f seconds=%.2f\n",
                    el.epoch, el.train_loss, el.dev_f1, el.seconds);
      *progress << line << std::flush;
    }

    // Ties go to the newer snapshot (same F1, more optimization behind it,
    // e.g. a still-improving POS head); patience counts strict improvements.
    const bool first = result.log.size() == 1;
    const bool strictly_better = first || dev_f1 > result.best_dev_f1;
    if (dev_corpus.empty() || first || dev_f1 >= result.best_dev_f1) {
      result.best_dev_f1 = dev_f1;
      result.best_epoch = epoch;
      snapshot();
    }
    if (strictly_better)
      stale = 0;
    else if (++stale >= cfg.patience)
      break;
  }

  for (size_t p = 0; p < m.store.size(); ++p) m.store[p].value = best_values[p];
  return result;
}

inline std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,dev_f1,seconds\n";
  char buf[160];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.2f,%.2f\n", e.epoch, e.train_loss, e.dev_f1,
                  e.seconds);
    out += buf;
  }
  return out;
}

}  // namespace cspn
