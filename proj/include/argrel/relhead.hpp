// Pairwise relation classifier on top of the encoder:
//   P(y | head j, tail i) = softmax(tanh([H_j; H_i] W1 + b1) W2 + b2)
// plus the supervised training loop, document-level prediction and
// checkpoint persistence.
#pragma once

#include <array>
#include <cmath>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "argrel/checkpoint_io.hpp"
#include "argrel/encoder.hpp"
#include "argrel/pairs.hpp"

namespace argrel {

using LabelDistribution = std::array<double, kNumLabels>;

inline Label argmax_label(const LabelDistribution& d) {
  int best = 0;
  for (int c = 1; c < kNumLabels; ++c)
    if (d[static_cast<std::size_t>(c)] > d[static_cast<std::size_t>(best)]) best = c;
  return static_cast<Label>(best);
}

struct RelationHead {
  ParamSet p;
  static constexpr std::size_t kW1 = 0, kB1 = 1, kW2 = 2, kB2 = 3;
  int input_dim() const { return static_cast<int>(p[kW1].rows() / 2); }
  int hidden() const { return static_cast<int>(p[kW1].cols()); }
};

inline RelationHead init_relation_head(int dim, int hidden, std::uint64_t seed) {
  require(dim >= 1 && hidden >= 1, ErrorCode::config, "relation head sizes must be positive");
  RelationHead h;
  Rng rng(derive_seed(seed, "head-init"));
  init_normal(h.p[h.p.add("w1", 2 * dim, hidden)], 1.0 / std::sqrt(2.0 * dim), rng);
  h.p.add("b1", 1, hidden);
  init_normal(h.p[h.p.add("w2", hidden, kNumLabels)], 1.0 / std::sqrt(hidden), rng);
  h.p.add("b2", 1, kNumLabels);
  return h;
}

struct HeadCache {
  RowVec x, drop_in, a, drop_hidden;
  RowVec probs;
};

// Dropout is applied to the concatenated input and to the hidden layer when
// `rng` is non-null and p > 0.
inline RowVec head_forward(const RelationHead& h, const RowVec& hj, const RowVec& hi, double p, Rng* rng,
                           HeadCache* cache) {
  const int d = h.input_dim();
  if (hj.size() != d || hi.size() != d)
    fail(ErrorCode::shape, "relation head expects width " + std::to_string(d) + ", got " +
                               std::to_string(hj.size()) + " and " + std::to_string(hi.size()));
  RowVec x(2 * d);
  x << hj, hi;
  const bool drop = rng && p > 0.0;
  RowVec drop_in, drop_hidden;
  if (drop) {
    drop_in = dropout_mask(1, 2 * d, p, *rng).row(0);
    x = x.cwiseProduct(drop_in);
  }
  RowVec a = (x * h.p[RelationHead::kW1] + h.p[RelationHead::kB1]).array().tanh().matrix();
  RowVec a_used = a;
  if (drop) {
    drop_hidden = dropout_mask(1, a.size(), p, *rng).row(0);
    a_used = a.cwiseProduct(drop_hidden);
  }
  RowVec logits = a_used * h.p[RelationHead::kW2] + h.p[RelationHead::kB2];
  RowVec probs = softmax(logits);
  if (cache) {
    cache->x = std::move(x);
    cache->drop_in = std::move(drop_in);
    cache->a = std::move(a);
    cache->drop_hidden = std::move(drop_hidden);
    cache->probs = probs;
  }
  return probs;
}

// Accumulates parameter gradients; returns d/d[H_j; H_i].
inline RowVec head_backward(const RelationHead& h, const HeadCache& c, const RowVec& dlogits,
                            ParamSet& grads) {
  RowVec a_used = c.drop_hidden.size() ? RowVec(c.a.cwiseProduct(c.drop_hidden)) : c.a;
  grads[RelationHead::kW2] += a_used.transpose() * dlogits;
  grads[RelationHead::kB2] += dlogits;
  RowVec da = dlogits * h.p[RelationHead::kW2].transpose();
  if (c.drop_hidden.size()) da = da.cwiseProduct(c.drop_hidden);
  RowVec dz = da.cwiseProduct((1.0 - c.a.array().square()).matrix());
  grads[RelationHead::kW1] += c.x.transpose() * dz;
  grads[RelationHead::kB1] += dz;
  RowVec dx = dz * h.p[RelationHead::kW1].transpose();
  if (c.drop_in.size()) dx = dx.cwiseProduct(c.drop_in);
  return dx;
}

inline LabelDistribution to_distribution(const RowVec& probs) {
  return {probs(0), probs(1), probs(2)};
}

inline LabelDistribution predict_pair(const RowVec& hj, const RowVec& hi, const RelationHead& head) {
  return to_distribution(head_forward(head, hj, hi, 0.0, nullptr, nullptr));
}

// ---------------------------------------------------------------------------

inline constexpr int kCheckpointFormat = 1;

struct Checkpoint {
  Vocab vocab;
  EncoderParams encoder;
  RelationHead head;
  bool has_head = true;
  long steps = 0;
  std::string source_tag;
  nlohmann::json metadata = nlohmann::json::object();

  const EncoderConfig& config() const { return encoder.config; }
  bool same_parameters(const Checkpoint& o) const {
    return vocab == o.vocab && encoder.p == o.encoder.p && has_head == o.has_head &&
           (!has_head || head.p == o.head.p);
  }
};

struct TrainConfig {
  double lr = 1e-3;
  long warmup = 100;
  Schedule schedule = Schedule::constant;
  int epochs = 15;
  int batch_size = 16;  // windows per step
  std::uint64_t seed = 0;
  bool class_weighting = false;
  long max_steps = 0;   // 0 = no cap
  int min_count = 1;    // vocabulary threshold when no init checkpoint
  int hidden = 0;       // relation head width; 0 = encoder dim
  EncoderConfig encoder;

  void check() const {
    require(lr >= 0.0 && std::isfinite(lr), ErrorCode::config, "learning rate must be finite and >= 0");
    require(epochs >= 0 && batch_size >= 1 && warmup >= 0 && max_steps >= 0, ErrorCode::config,
            "invalid train config counts");
    encoder.check();
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"warmup", c.warmup},
          {"schedule", to_string(c.schedule)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"class_weighting", c.class_weighting},
          {"max_steps", c.max_steps},
          {"min_count", c.min_count},
          {"hidden", c.hidden},
          {"encoder", to_json(c.encoder)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.warmup = j.value("warmup", c.warmup);
  c.schedule = schedule_from_string(j.value("schedule", std::string("constant")));
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.class_weighting = j.value("class_weighting", c.class_weighting);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.min_count = j.value("min_count", c.min_count);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
  return c;
}

inline Checkpoint init_checkpoint(const Vocab& vocab, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.vocab = vocab;
  ck.encoder = init_encoder(cfg.encoder, vocab.size());
  ck.head = init_relation_head(cfg.encoder.dim, cfg.hidden > 0 ? cfg.hidden : cfg.encoder.dim,
                               derive_seed(cfg.encoder.seed, "relation-head"));
  return ck;
}

// Token ids per document per proposition.
using TokenizedCorpus = std::vector<std::vector<std::vector<int>>>;

inline TokenizedCorpus tokenize_corpus(const Corpus& corpus, const Vocab& vocab) {
  TokenizedCorpus out;
  out.reserve(corpus.documents.size());
  for (const auto& d : corpus.documents) {
    std::vector<std::vector<int>> props;
    for (const auto& p : d.propositions) props.push_back(vocab.encode(p.text));
    out.push_back(std::move(props));
  }
  return out;
}

// Token lists for a window context, trimmed from the longest proposition
// until the separator-inclusive length fits max_positions.
inline std::vector<std::vector<int>> window_tokens(const std::vector<std::vector<int>>& doc_ids,
                                                   const std::vector<int>& context, int max_positions) {
  std::vector<std::vector<int>> props;
  std::size_t total = 0;
  for (int c : context) {
    props.push_back(doc_ids[static_cast<std::size_t>(c)]);
    total += props.back().size() + 1;
  }
  require(context.size() <= static_cast<std::size_t>(max_positions), ErrorCode::precondition,
          "window has more propositions than encoder positions");
  while (total > static_cast<std::size_t>(max_positions)) {
    auto it = std::max_element(props.begin(), props.end(),
                               [](const auto& a, const auto& b) { return a.size() < b.size(); });
    it->pop_back();
    --total;
  }
  return props;
}

struct PairPrediction {
  int head = 0;
  int tail = 0;
  Label predicted = Label::no_rel;
  LabelDistribution dist{};
};

// Scores every (head, tail) pair of one window.
inline std::vector<PairPrediction> score_window(const Checkpoint& ck,
                                                const std::vector<std::vector<int>>& doc_ids,
                                                const std::vector<int>& context, int head,
                                                EncodeMode mode, std::uint64_t seed) {
  const auto props = window_tokens(doc_ids, context, ck.encoder.config.max_positions);
  const auto enc = encode_window_full(props, ck.encoder, mode, seed);
  const auto hpos = static_cast<std::size_t>(std::find(context.begin(), context.end(), head) - context.begin());
  require(hpos < context.size(), ErrorCode::precondition, "head not in window context");
  const RowVec hj = enc.rep(hpos);
  Rng rng(derive_seed(seed, "head-dropout"));
  const bool stochastic = mode != EncodeMode::eval;
  std::vector<PairPrediction> out;
  for (std::size_t k = 0; k < context.size(); ++k) {
    if (k == hpos) continue;
    const RowVec probs = head_forward(ck.head, hj, enc.rep(k), ck.encoder.config.dropout_p,
                                      stochastic ? &rng : nullptr, nullptr);
    PairPrediction p;
    p.head = head;
    p.tail = context[k];
    p.dist = to_distribution(probs);
    p.predicted = argmax_label(p.dist);
    out.push_back(p);
  }
  return out;
}

inline std::vector<PairPrediction> predict_document(const Document& doc, const Checkpoint& ck,
                                                    const WindowConfig& cfg) {
  require(ck.has_head, ErrorCode::config, "checkpoint carries no trained relation head");
  std::vector<std::vector<int>> ids;
  for (const auto& p : doc.propositions) ids.push_back(ck.vocab.encode(p.text));
  const auto windows = group_windows(build_examples(doc, cfg), 0);
  std::vector<PairPrediction> out;
  for (const auto& w : windows) {
    auto s = score_window(ck, ids, w.context, w.head, EncodeMode::eval, 0);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training.

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  long steps = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> epochs;
};

inline std::vector<Window> corpus_windows(const Corpus& corpus, const WindowConfig& cfg) {
  std::vector<Window> all;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    auto w = group_windows(build_examples(corpus.documents[d], cfg), d);
    all.insert(all.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return all;
}

inline std::array<double, kNumLabels> class_weights(const std::vector<Window>& windows, bool enabled) {
  std::array<double, kNumLabels> w{1.0, 1.0, 1.0};
  if (!enabled) return w;
  std::array<double, kNumLabels> count{};
  double total = 0;
  for (const auto& win : windows)
    for (const auto& [_, l] : win.targets) {
      count[static_cast<std::size_t>(l)] += 1;
      total += 1;
    }
  for (int c = 0; c < kNumLabels; ++c)
    w[static_cast<std::size_t>(c)] =
        count[static_cast<std::size_t>(c)] > 0 ? total / (kNumLabels * count[static_cast<std::size_t>(c)]) : 0.0;
  return w;
}

// Forward + backward over one window. Returns (weighted loss sum, correct).
inline std::pair<double, int> window_step(const Checkpoint& ck, const std::vector<std::vector<int>>& doc_ids,
                                          const Window& w, const std::array<double, kNumLabels>& weights,
                                          double norm, std::uint64_t seed, ParamSet& genc, ParamSet& ghead) {
  const auto props = window_tokens(doc_ids, w.context, ck.encoder.config.max_positions);
  const auto enc = encode_window_full(props, ck.encoder, EncodeMode::train, seed);
  auto pos_of = [&](int id) {
    return static_cast<std::size_t>(std::find(w.context.begin(), w.context.end(), id) - w.context.begin());
  };
  const std::size_t hpos = pos_of(w.head);
  std::vector<RowVec> drep(w.context.size());
  Rng rng(derive_seed(seed, "head-dropout"));
  double loss = 0.0;
  int correct = 0;
  const RowVec hj = enc.rep(hpos);
  for (const auto& [tail, label] : w.targets) {
    const std::size_t tpos = pos_of(tail);
    HeadCache cache;
    const RowVec probs = head_forward(ck.head, hj, enc.rep(tpos), ck.encoder.config.dropout_p, &rng, &cache);
    const auto y = static_cast<Eigen::Index>(label);
    const double wy = weights[static_cast<std::size_t>(y)];
    loss += -wy * std::log(std::max(probs(y), 1e-300));
    if (argmax_label(to_distribution(probs)) == label) ++correct;
    RowVec dlogits = probs;
    dlogits(y) -= 1.0;
    dlogits *= wy / norm;
    const RowVec dx = head_backward(ck.head, cache, dlogits, ghead);
    const auto d = static_cast<Eigen::Index>(ck.encoder.config.dim);
    if (drep[hpos].size() == 0) drep[hpos] = RowVec::Zero(d);
    if (drep[tpos].size() == 0) drep[tpos] = RowVec::Zero(d);
    drep[hpos] += dx.head(d);
    drep[tpos] += dx.tail(d);
  }
  encoder_backward(ck.encoder, enc.tape, hidden_grad_from_reps(enc, drep), genc);
  return {loss, correct};
}

// Trains on explicit windows over `corpus`. With `init`, fine-tunes from it
// (reusing its vocabulary); otherwise builds a vocabulary from `corpus`.
inline TrainResult train_windows(const Corpus& corpus, const std::vector<Window>& windows,
                                 const TrainConfig& cfg, const Checkpoint* init) {
  cfg.check();
  std::size_t n_targets = 0;
  for (const auto& w : windows) n_targets += w.targets.size();
  require(n_targets > 0, ErrorCode::empty_training, "no pair examples to train on");

  TrainResult result;
  if (init) {
    if (!init->config().compatible(cfg.encoder))
      fail(ErrorCode::incompatible, "init checkpoint encoder config does not match the train config");
    result.checkpoint = *init;
    if (!result.checkpoint.has_head) {
      result.checkpoint.head = init_relation_head(cfg.encoder.dim, cfg.hidden > 0 ? cfg.hidden : cfg.encoder.dim,
                                                  derive_seed(cfg.encoder.seed, "relation-head"));
      result.checkpoint.has_head = true;
    }
    result.checkpoint.encoder.config.dropout_p = cfg.encoder.dropout_p;
  } else {
    result.checkpoint = init_checkpoint(build_vocab(corpus, cfg.min_count), cfg);
  }
  Checkpoint& ck = result.checkpoint;
  const auto ids = tokenize_corpus(corpus, ck.vocab);
  const auto weights = class_weights(windows, cfg.class_weighting);

  AdamState adam_enc(ck.encoder.p), adam_head(ck.head.p);
  ParamSet genc = ck.encoder.p.zeros_like(), ghead = ck.head.p.zeros_like();
  const long per_epoch = static_cast<long>((windows.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                           static_cast<std::size_t>(cfg.batch_size));
  long total = per_epoch * cfg.epochs;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);

  std::vector<std::size_t> order(windows.size());
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs && step < total; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order);
    double loss_sum = 0.0;
    long seen = 0, correct = 0;
    for (std::size_t b = 0; b < order.size() && step < total; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::size_t batch_targets = 0;
      for (std::size_t k = b; k < e; ++k) batch_targets += windows[order[k]].targets.size();
      if (batch_targets == 0) continue;
      genc.set_zero();
      ghead.set_zero();
      for (std::size_t k = b; k < e; ++k) {
        const Window& w = windows[order[k]];
        if (w.targets.empty()) continue;
        const auto seed = derive_seed(cfg.seed, "dropout", static_cast<std::uint64_t>(step) * 1000003ULL + k);
        const auto [l, c] = window_step(ck, ids[w.doc], w, weights, static_cast<double>(batch_targets), seed,
                                        genc, ghead);
        loss_sum += l;
        correct += c;
      }
      seen += static_cast<long>(batch_targets);
      const double lr = scheduled_lr(cfg.lr, step, cfg.warmup, total, cfg.schedule);
      adam_enc.update(ck.encoder.p, genc, lr);
      adam_head.update(ck.head.p, ghead, lr);
      ++step;
    }
    if (seen > 0)
      result.epochs.push_back({epoch, loss_sum / static_cast<double>(seen),
                               static_cast<double>(correct) / static_cast<double>(seen), step});
  }
  ck.steps += step;
  return result;
}

inline TrainResult train(const Corpus& corpus, const WindowConfig& wcfg, const TrainConfig& cfg,
                         const Checkpoint* init = nullptr) {
  return train_windows(corpus, corpus_windows(corpus, wcfg), cfg, init);
}

// ---------------------------------------------------------------------------
// Persistence.

inline std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json header;
  header["kind"] = "relation-model";
  header["format"] = kCheckpointFormat;
  header["encoder_config"] = to_json(ck.encoder.config);
  header["vocab"] = ck.vocab.words();
  header["vocab_size"] = ck.vocab.size();
  header["has_head"] = ck.has_head;
  header["steps"] = ck.steps;
  header["source_tag"] = ck.source_tag;
  header["metadata"] = ck.metadata;
  std::vector<std::pair<std::string, const ParamSet*>> groups{{"encoder", &ck.encoder.p}};
  if (ck.has_head) groups.emplace_back("head", &ck.head.p);
  return encode_container(header, groups);
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  write_file(path, encode_checkpoint(ck));
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const EncoderConfig* expected = nullptr) {
  auto data = decode_container(bytes);
  const auto& h = data.header;
  if (h.value("kind", std::string()) != "relation-model")
    fail(ErrorCode::incompatible, "container does not hold a relation model");
  if (h.value("format", 0) != kCheckpointFormat)
    fail(ErrorCode::incompatible, "unsupported checkpoint format");
  Checkpoint ck;
  const auto cfg = encoder_config_from_json(h.at("encoder_config"));
  if (expected && !expected->compatible(cfg))
    fail(ErrorCode::incompatible, "checkpoint encoder config does not match the requested config");
  ck.vocab = Vocab(h.at("vocab").get<std::vector<std::string>>());
  ck.has_head = h.value("has_head", true);
  ck.steps = h.value("steps", 0L);
  ck.source_tag = h.value("source_tag", std::string());
  ck.metadata = h.value("metadata", nlohmann::json::object());
  const EncoderParams shape = init_encoder(cfg, ck.vocab.size());
  ck.encoder.config = cfg;
  ck.encoder.vocab_size = ck.vocab.size();
  ck.encoder.p = std::move(data.groups["encoder"]);
  if (!ck.encoder.p.same_shape(shape.p))
    fail(ErrorCode::integrity, "checkpoint encoder tensors do not match its config");
  if (ck.has_head) {
    ck.head.p = std::move(data.groups["head"]);
    if (ck.head.p.size() != 4 || ck.head.p[RelationHead::kW1].rows() != 2 * cfg.dim ||
        ck.head.p[RelationHead::kW2].cols() != kNumLabels)
      fail(ErrorCode::integrity, "checkpoint relation head has inconsistent shapes");
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path, const EncoderConfig* expected = nullptr) {
  return decode_checkpoint(read_file(path), expected);
}

}  // namespace argrel
