// Command-line front end: train, parse, eval, stats, split, config.

#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "cspn/cspn.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw cspn::IoError("cannot read " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw cspn::IoError("cannot write " + path);
  os << text;
  if (!os) throw cspn::IoError("writing " + path + " failed");
}

cspn::Corpus read_corpus_file(const std::string& path) {
  return cspn::read_corpus_text(slurp(path));
}

void write_corpus_file(const std::string& path, const cspn::Corpus& corpus) {
  std::string out;
  for (const cspn::ParseTree& t : corpus) {
    cspn::write_bracketed(t, out);
    out += '\n';
  }
  spill(path, out);
}

/// Order-preserving parallel loop; worker exceptions rethrow on the caller.
template <class F>
void parallel_for(size_t count, int threads, F f) {
  if (threads <= 0) threads = int(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, int(count)));
  if (threads <= 1) {
    for (size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&]() {
      for (size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

struct TrainArgs {
  std::string train_path, dev_path, vectors_path, dev_vectors_path, config_path, out_path;
};

int cmd_train(const TrainArgs& a, const cspn::RunConfig& cfg) {
  cspn::Corpus train = read_corpus_file(a.train_path);
  cspn::Corpus dev = a.dev_path.empty() ? cspn::Corpus{} : read_corpus_file(a.dev_path);

  std::vector<cspn::Matrix> train_vecs, dev_vecs;
  cspn::ModelConfig model_cfg = cfg.model;
  if (!a.vectors_path.empty()) {
    train_vecs = cspn::read_external_vectors_file(a.vectors_path);
    cspn::check_vectors_alignment(train_vecs, train, a.vectors_path);
    model_cfg.d_ext = train_vecs.empty() ? 0 : train_vecs[0].cols;
    if (!dev.empty()) {
      if (a.dev_vectors_path.empty())
        throw cspn::ConfigError("--vectors given but --dev-vectors missing for the dev set");
      dev_vecs = cspn::read_external_vectors_file(a.dev_vectors_path);
      cspn::check_vectors_alignment(dev_vecs, dev, a.dev_vectors_path);
    }
  }

  cspn::Model model = cspn::init_model(train, model_cfg, cfg.training.seed);
  cspn::TrainResult result =
      cspn::train(model, train, dev, cfg.training, train_vecs.empty() ? nullptr : &train_vecs,
                  dev_vecs.empty() ? nullptr : &dev_vecs);
  cspn::save_checkpoint(a.out_path, model, result.best_epoch, result.best_dev_f1);
  spill(a.out_path + ".log.csv", cspn::epoch_log_csv(result.log));
  std::cerr << "best epoch " << result.best_epoch << " dev_f1 " << result.best_dev_f1
            << ", checkpoint written to " << a.out_path << "\n";
  return 0;
}

struct ParseArgs {
  std::string model_path, input_path = "-", vectors_path;
  bool dump_charts = false;
};

int cmd_parse(const ParseArgs& a, int threads) {
  cspn::LoadedCheckpoint ck = cspn::load_checkpoint(a.model_path);

  std::string input;
  if (a.input_path == "-") {
    std::stringstream buf;
    buf << std::cin.rdbuf();
    input = buf.str();
  } else {
    input = slurp(a.input_path);
  }
  std::vector<std::vector<std::string>> sentences;
  {
    std::istringstream is(input);
    std::string line;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      std::vector<std::string> words;
      std::string w;
      while (ls >> w) words.push_back(w);
      if (!words.empty()) sentences.push_back(std::move(words));
    }
  }

  std::vector<cspn::Matrix> vecs;
  if (!a.vectors_path.empty()) {
    vecs = cspn::read_external_vectors_file(a.vectors_path);
    if (vecs.size() != sentences.size())
      throw cspn::ExternalShapeMismatch(std::to_string(vecs.size()) + " vector blocks for " +
                                        std::to_string(sentences.size()) + " sentences");
  } else if (ck.model.config.d_ext > 0) {
    throw cspn::ConfigError("model was trained with external vectors; pass --vectors");
  }

  std::vector<std::string> out(sentences.size());
  std::vector<std::string> dumps(a.dump_charts ? sentences.size() : 0);
  parallel_for(sentences.size(), threads, [&](size_t i) {
    const cspn::Matrix* ext = vecs.empty() ? nullptr : &vecs[i];
    cspn::ParseResult r = cspn::parse_sentence(ck.model, sentences[i], ext,
                                               a.dump_charts ? &dumps[i] : nullptr);
    out[i] = cspn::write_bracketed(r.tree);
  });
  for (size_t i = 0; i < out.size(); ++i) {
    std::cout << out[i] << "\n";
    if (a.dump_charts) std::cerr << "# chart " << (i + 1) << "\n" << dumps[i];
  }
  return 0;
}

struct EvalArgs {
  std::string gold_path, pred_path, per_label_csv;
  bool ignore_root = false;
  bool delete_punct = false;
};

int cmd_eval(const EvalArgs& a) {
  cspn::Corpus gold = read_corpus_file(a.gold_path);
  cspn::Corpus pred = read_corpus_file(a.pred_path);
  cspn::EvalOptions opt{a.ignore_root, a.delete_punct};
  cspn::EvalReport rep = cspn::evaluate_corpus(pred, gold, opt);
  std::cout << cspn::format_report(rep);
  if (!a.per_label_csv.empty()) spill(a.per_label_csv, cspn::report_to_csv(rep));
  return 0;
}

int cmd_stats(const std::string& input_path) {
  std::string text = slurp(input_path);
  cspn::TreebankStats s = cspn::compute_stats(cspn::read_corpus_text(text));
  std::cout << "sentences " << s.sentences << "\n";
  std::cout << "tokens " << s.tokens << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", s.mean_length);
  std::cout << "mean_length " << buf << "\n";
  std::cout << "max_length " << s.max_length << "\n";
  std::cout << "constituents\n";
  for (const auto& [label, count] : s.label_counts)
    std::cout << "  " << label << " " << count << "\n";
  std::cout << "preterminals\n";
  for (const auto& [tag, count] : s.pos_counts) std::cout << "  " << tag << " " << count << "\n";
  return 0;
}

struct SplitArgs {
  std::string input_path, out_train, out_dev;
  size_t train_count = 0, dev_count = 0;
  uint64_t seed = 0;
  bool shuffle = false;
};

int cmd_split(const SplitArgs& a) {
  cspn::Corpus corpus = read_corpus_file(a.input_path);
  auto [train, dev] = cspn::split_corpus(corpus, a.train_count, a.dev_count, a.seed, a.shuffle);
  std::string out_train = a.out_train.empty() ? a.input_path + ".train" : a.out_train;
  std::string out_dev = a.out_dev.empty() ? a.input_path + ".dev" : a.out_dev;
  write_corpus_file(out_train, train);
  write_corpus_file(out_dev, dev);
  std::cerr << "wrote " << train.size() << " trees to " << out_train << ", " << dev.size()
            << " to " << out_dev << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"span-based constituency parser with a self-attention encoder"};
  app.require_subcommand(1);

  cspn::RunConfig cfg;
  TrainArgs train_args;
  ParseArgs parse_args;
  EvalArgs eval_args;
  SplitArgs split_args;
  std::string stats_input;
  bool dump_defaults = false;

  // Encoder/training overrides shared by train; flag beats config file.
  int d_model = 0, d_k = 0, d_v = 0, num_heads = 0, num_layers = -1, d_ff = 0, max_len = 0,
      d_hidden = 0, max_epochs = 0, batch_size = 0, sub_batch_max_tokens = 0, patience = 0,
      threads = 0;
  double learning_rate = 0, pos_loss_weight = -1;
  int64_t seed = -1;

  CLI::App* train_cmd = app.add_subcommand("train", "train a parser from a treebank");
  train_cmd->add_option("--train", train_args.train_path, "training treebank")->required();
  train_cmd->add_option("--dev", train_args.dev_path, "development treebank");
  train_cmd->add_option("--vectors", train_args.vectors_path, "external vectors for --train");
  train_cmd->add_option("--dev-vectors", train_args.dev_vectors_path,
                        "external vectors for --dev");
  train_cmd->add_option("--config", train_args.config_path, "key = value config file");
  train_cmd->add_option("--out", train_args.out_path, "checkpoint output path")->required();
  train_cmd->add_option("--d-model", d_model);
  train_cmd->add_option("--d-k", d_k);
  train_cmd->add_option("--d-v", d_v);
  train_cmd->add_option("--num-heads", num_heads);
  train_cmd->add_option("--num-layers", num_layers);
  train_cmd->add_option("--d-ff", d_ff);
  train_cmd->add_option("--max-len", max_len);
  train_cmd->add_option("--d-hidden", d_hidden);
  train_cmd->add_option("--max-epochs", max_epochs);
  train_cmd->add_option("--batch-size", batch_size);
  train_cmd->add_option("--sub-batch-max-tokens", sub_batch_max_tokens);
  train_cmd->add_option("--learning-rate", learning_rate);
  train_cmd->add_option("--pos-loss-weight", pos_loss_weight);
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--patience", patience);

  CLI::App* parse_cmd = app.add_subcommand("parse", "parse tokenized sentences, one per line");
  parse_cmd->add_option("--model", parse_args.model_path, "checkpoint")->required();
  parse_cmd->add_option("--input", parse_args.input_path, "sentence file, - for stdin");
  parse_cmd->add_option("--vectors", parse_args.vectors_path, "external vectors");
  parse_cmd->add_flag("--dump-charts", parse_args.dump_charts, "write chart cells to stderr");
  parse_cmd->add_option("--threads", threads, "worker threads, 1 forces sequential");

  CLI::App* eval_cmd = app.add_subcommand("eval", "score predicted trees against gold");
  eval_cmd->add_option("--gold", eval_args.gold_path, "gold treebank")->required();
  eval_cmd->add_option("--pred", eval_args.pred_path, "predicted treebank")->required();
  eval_cmd->add_option("--per-label", eval_args.per_label_csv, "per-label CSV output");
  eval_cmd->add_flag("--ignore-root", eval_args.ignore_root, "skip the root bracket");
  eval_cmd->add_flag("--delete-punct", eval_args.delete_punct,
                     "remove punctuation tokens before matching");

  CLI::App* stats_cmd = app.add_subcommand("stats", "corpus label statistics");
  stats_cmd->add_option("--input", stats_input, "treebank file")->required();

  CLI::App* split_cmd = app.add_subcommand("split", "cut a corpus into train/dev");
  split_cmd->add_option("--input", split_args.input_path, "treebank file")->required();
  split_cmd->add_option("--train", split_args.train_count, "train tree count")->required();
  split_cmd->add_option("--dev", split_args.dev_count, "dev tree count")->required();
  split_cmd->add_option("--seed", split_args.seed, "shuffle seed");
  split_cmd->add_flag("--shuffle", split_args.shuffle, "shuffle before cutting");
  split_cmd->add_option("--out-train", split_args.out_train, "default INPUT.train");
  split_cmd->add_option("--out-dev", split_args.out_dev, "default INPUT.dev");

  CLI::App* config_cmd = app.add_subcommand("config", "configuration helpers");
  config_cmd->add_flag("--dump-defaults", dump_defaults, "print every key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (train_cmd->parsed()) {
      if (!train_args.config_path.empty()) cspn::apply_config_file(train_args.config_path, cfg);
      if (train_cmd->count("--d-model")) cfg.model.encoder.d_model = d_model;
      if (train_cmd->count("--d-k")) cfg.model.encoder.d_k = d_k;
      if (train_cmd->count("--d-v")) cfg.model.encoder.d_v = d_v;
      if (train_cmd->count("--num-heads")) cfg.model.encoder.num_heads = num_heads;
      if (train_cmd->count("--num-layers")) cfg.model.encoder.num_layers = num_layers;
      if (train_cmd->count("--d-ff")) cfg.model.encoder.d_ff = d_ff;
      if (train_cmd->count("--max-len")) cfg.model.encoder.max_len = max_len;
      if (train_cmd->count("--d-hidden")) cfg.model.d_hidden = d_hidden;
      if (train_cmd->count("--max-epochs")) cfg.training.max_epochs = max_epochs;
      if (train_cmd->count("--batch-size")) cfg.training.batch_size = batch_size;
      if (train_cmd->count("--sub-batch-max-tokens"))
        cfg.training.sub_batch_max_tokens = sub_batch_max_tokens;
      if (train_cmd->count("--learning-rate")) cfg.training.learning_rate = learning_rate;
      if (train_cmd->count("--pos-loss-weight")) cfg.training.pos_loss_weight = pos_loss_weight;
      if (train_cmd->count("--seed")) cfg.training.seed = uint64_t(seed);
      if (train_cmd->count("--patience")) cfg.training.patience = patience;
      return cmd_train(train_args, cfg);
    }
    if (parse_cmd->parsed()) return cmd_parse(parse_args, threads ? threads : cfg.threads);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (stats_cmd->parsed()) return cmd_stats(stats_input);
    if (split_cmd->parsed()) return cmd_split(split_args);
    if (config_cmd->parsed()) {
      if (dump_defaults) std::cout << cspn::dump_default_config();
      return 0;
    }
  } catch (const cspn::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
