// Self-supervised encoder pretraining on unlabeled documents:
//  * masked-token prediction over 15% of the non-special positions;
//  * context-aware perturbation: 20% of propositions replaced by ones from
//    other documents, another 20% shuffled in place, and a per-proposition
//    3-way classifier on the separator states.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "argrel/relhead.hpp"

namespace argrel {

enum class MaskAction { mask, random, keep };

struct MaskPlan {
  std::vector<int> positions;  // ascending
  std::vector<MaskAction> actions;
  std::vector<int> original;
  std::vector<int> replacement;  // token placed at the position
};

// ceil(15% of n), at least one when n > 0.
inline std::size_t mask_count(std::size_t maskable) {
  if (maskable == 0) return 0;
  return std::max<std::size_t>(1, (15 * maskable + 99) / 100);
}

inline MaskPlan make_mask_plan(const std::vector<int>& ids, std::uint64_t seed, int vocab_size) {
  require(!ids.empty(), ErrorCode::precondition, "make_mask_plan: empty sequence");
  std::vector<int> candidates;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!Vocab::is_special(ids[i])) candidates.push_back(static_cast<int>(i));
  MaskPlan plan;
  const std::size_t k = mask_count(candidates.size());
  if (k == 0) return plan;
  Rng rng(derive_seed(seed, "mask"));
  for (std::size_t i = 0; i < k; ++i)
    std::swap(candidates[i], candidates[i + rng.index(candidates.size() - i)]);
  plan.positions.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(plan.positions.begin(), plan.positions.end());
  const int regular = vocab_size - Vocab::kNumSpecial;
  for (int pos : plan.positions) {
    const int orig = ids[static_cast<std::size_t>(pos)];
    const double u = rng.uniform();
    MaskAction a = u < 0.8 ? MaskAction::mask : (u < 0.9 ? MaskAction::random : MaskAction::keep);
    int repl = orig;
    if (a == MaskAction::mask) repl = Vocab::kMask;
    if (a == MaskAction::random)
      repl = regular > 0 ? Vocab::kNumSpecial + static_cast<int>(rng.index(static_cast<std::size_t>(regular))) : orig;
    plan.actions.push_back(a);
    plan.original.push_back(orig);
    plan.replacement.push_back(repl);
  }
  return plan;
}

inline std::vector<int> apply_mask_plan(std::vector<int> ids, const MaskPlan& plan) {
  for (std::size_t i = 0; i < plan.positions.size(); ++i)
    ids[static_cast<std::size_t>(plan.positions[i])] = plan.replacement[i];
  return ids;
}

enum class Perturbation { replaced = 0, shuffled = 1, unchanged = 2 };

inline std::string_view to_string(Perturbation p) {
  switch (p) {
    case Perturbation::replaced: return "replaced";
    case Perturbation::shuffled: return "shuffled";
    case Perturbation::unchanged: return "unchanged";
  }
  return "unchanged";
}

struct PerturbedDocument {
  std::vector<std::string> texts;
  std::vector<Perturbation> labels;  // aligned with `texts`
};

// 20% of n rounded half-up, at least one.
inline std::size_t perturb_count(std::size_t n) { return std::max<std::size_t>(1, (n * 20 + 50) / 100); }

// `pool` holds proposition texts drawn from other documents.
inline PerturbedDocument perturb_document(const Document& doc, const std::vector<std::string>& pool,
                                          std::uint64_t seed) {
  const std::size_t n = doc.propositions.size();
  require(n >= 5, ErrorCode::precondition, "perturb_document needs at least 5 propositions");
  require(!pool.empty(), ErrorCode::config, "perturb_document: replacement pool is empty");
  Rng rng(derive_seed(seed, "perturb"));
  const std::size_t k = perturb_count(n);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);

  PerturbedDocument out;
  for (const auto& p : doc.propositions) out.texts.push_back(p.text);
  out.labels.assign(n, Perturbation::unchanged);
  for (std::size_t i = 0; i < k; ++i) {
    out.texts[idx[i]] = pool[rng.index(pool.size())];
    out.labels[idx[i]] = Perturbation::replaced;
  }
  // The shuffled set is permuted uniformly among itself and every member is
  // labelled shuffled, including fixed points.
  std::vector<std::size_t> slots(idx.begin() + static_cast<std::ptrdiff_t>(k),
                                 idx.begin() + static_cast<std::ptrdiff_t>(2 * k));
  std::sort(slots.begin(), slots.end());
  std::vector<std::string> moved;
  for (auto s : slots) moved.push_back(out.texts[s]);
  rng.shuffle(moved);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    out.texts[slots[i]] = moved[i];
    out.labels[slots[i]] = Perturbation::shuffled;
  }
  return out;
}

enum class Objective { mlm, context_pert };

inline std::string_view to_string(Objective o) { return o == Objective::mlm ? "mlm" : "context_pert"; }
inline Objective objective_from_string(std::string_view s) {
  if (s == "mlm") return Objective::mlm;
  if (s == "context_pert" || s == "context-pert") return Objective::context_pert;
  fail(ErrorCode::parse, "unknown pretraining objective '" + std::string(s) + "'");
}

struct PretrainResult {
  Checkpoint checkpoint;  // encoder + vocab; no relation head
  ParamSet objective_head;  // projection used by the objective (w, b)
  std::vector<EpochRecord> epochs;
};

// Splits a document into consecutive proposition runs that fit the encoder.
inline std::vector<std::vector<std::vector<int>>> chunk_propositions(
    const std::vector<std::vector<int>>& props, int max_positions) {
  std::vector<std::vector<std::vector<int>>> chunks;
  std::vector<std::vector<int>> cur;
  std::size_t total = 0;
  for (auto p : props) {
    if (p.size() + 1 > static_cast<std::size_t>(max_positions)) p.resize(static_cast<std::size_t>(max_positions - 1));
    if (!cur.empty() && total + p.size() + 1 > static_cast<std::size_t>(max_positions)) {
      chunks.push_back(std::move(cur));
      cur.clear();
      total = 0;
    }
    total += p.size() + 1;
    cur.push_back(std::move(p));
  }
  if (!cur.empty()) chunks.push_back(std::move(cur));
  return chunks;
}

namespace detail {

struct PretrainUnit {
  std::size_t doc = 0;
  std::vector<std::vector<int>> props;  // MLM: tokens; Context-Pert: perturbed tokens
  std::vector<int> labels;              // Context-Pert labels per proposition
};

inline std::vector<std::string> other_texts(const Corpus& corpus, std::size_t except) {
  std::vector<std::string> out;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d)
    if (d != except)
      for (const auto& p : corpus.documents[d].propositions) out.push_back(p.text);
  return out;
}

// Context-Pert units for one epoch (fresh perturbations each epoch).
inline std::vector<PretrainUnit> context_pert_units(const Corpus& corpus, const Vocab& vocab,
                                                    const std::vector<std::string>& replacement_pool,
                                                    int max_positions, std::uint64_t seed) {
  std::vector<PretrainUnit> units;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    const auto& doc = corpus.documents[d];
    if (doc.propositions.size() < 5) continue;
    const auto pool = replacement_pool.empty() ? other_texts(corpus, d) : replacement_pool;
    if (pool.empty()) continue;
    const auto pert = perturb_document(doc, pool, derive_seed(seed, "doc", d));
    std::vector<std::vector<int>> ids;
    for (const auto& t : pert.texts) ids.push_back(vocab.encode(t));
    std::size_t offset = 0;
    for (auto& chunk : chunk_propositions(ids, max_positions)) {
      PretrainUnit u;
      u.doc = d;
      for (std::size_t i = 0; i < chunk.size(); ++i)
        u.labels.push_back(static_cast<int>(pert.labels[offset + i]));
      offset += chunk.size();
      u.props = std::move(chunk);
      units.push_back(std::move(u));
    }
  }
  return units;
}

}  // namespace detail

// Forward/backward for one unit; returns (loss sum, correct, targets).
inline std::tuple<double, long, long> pretrain_step(const EncoderParams& enc, const ParamSet& head,
                                                    const detail::PretrainUnit& unit, Objective obj,
                                                    std::uint64_t seed, double norm, ParamSet* genc,
                                                    ParamSet* ghead) {
  const bool training = genc != nullptr;
  WindowInput input = layout_window(unit.props);
  std::vector<int> targets_pos, targets_cls;
  std::vector<int> ids = input.ids;
  if (obj == Objective::mlm) {
    const auto plan = make_mask_plan(input.ids, derive_seed(seed, "mask"), enc.vocab_size);
    ids = apply_mask_plan(input.ids, plan);
    targets_pos = plan.positions;
    targets_cls = plan.original;
  } else {
    targets_pos = input.sep_positions;
    targets_cls = unit.labels;
  }
  if (targets_pos.empty()) return {0.0, 0, 0};
  EncodeTape tape;
  const Mat hidden = encoder_forward(enc, ids, training ? EncodeMode::train : EncodeMode::eval, seed,
                                     training ? &tape : nullptr);
  Mat dh = Mat::Zero(hidden.rows(), hidden.cols());
  double loss = 0.0;
  long correct = 0;
  for (std::size_t i = 0; i < targets_pos.size(); ++i) {
    const RowVec h = hidden.row(targets_pos[i]);
    const RowVec probs = softmax(h * head[0] + head[1]);
    const Eigen::Index y = targets_cls[i];
    loss += -std::log(std::max(probs(y), 1e-300));
    Eigen::Index best;
    probs.maxCoeff(&best);
    if (best == y) ++correct;
    if (training) {
      RowVec dl = probs;
      dl(y) -= 1.0;
      dl /= norm;
      (*ghead)[0] += h.transpose() * dl;
      (*ghead)[1] += dl;
      dh.row(targets_pos[i]) += dl * head[0].transpose();
    }
  }
  if (training) encoder_backward(enc, tape, dh, *genc);
  return {loss, correct, static_cast<long>(targets_pos.size())};
}

// `replacement_pool` overrides where Context-Pert replacements come from;
// empty means other documents of `unlabeled`.
inline PretrainResult pretrain(const Corpus& unlabeled, Objective objective, const TrainConfig& cfg,
                               const std::vector<std::string>& replacement_pool = {}) {
  cfg.check();
  require(!unlabeled.documents.empty(), ErrorCode::precondition, "pretrain: corpus is empty");
  PretrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck.vocab = build_vocab(unlabeled, cfg.min_count);
  ck.encoder = init_encoder(cfg.encoder, ck.vocab.size());
  ck.has_head = false;
  ck.source_tag = std::string("pretrain:") + std::string(to_string(objective));
  const int out_dim = objective == Objective::mlm ? ck.vocab.size() : 3;
  {
    Rng rng(derive_seed(cfg.encoder.seed, "objective-head"));
    init_normal(result.objective_head[result.objective_head.add("w", cfg.encoder.dim, out_dim)],
                1.0 / std::sqrt(cfg.encoder.dim), rng);
    result.objective_head.add("b", 1, out_dim);
  }
  if (cfg.epochs == 0) return result;

  const int maxpos = cfg.encoder.max_positions;
  std::vector<detail::PretrainUnit> mlm_units;
  if (objective == Objective::mlm) {
    for (std::size_t d = 0; d < unlabeled.documents.size(); ++d) {
      std::vector<std::vector<int>> ids;
      for (const auto& p : unlabeled.documents[d].propositions) ids.push_back(ck.vocab.encode(p.text));
      for (auto& chunk : chunk_propositions(ids, maxpos)) mlm_units.push_back({d, std::move(chunk), {}});
    }
  }
  const std::size_t n_units =
      objective == Objective::mlm ? mlm_units.size()
                                  : detail::context_pert_units(unlabeled, ck.vocab, replacement_pool, maxpos,
                                                               derive_seed(cfg.seed, "perturb", 0))
                                        .size();
  require(n_units > 0, ErrorCode::empty_training, "pretrain: no usable documents");

  AdamState adam_enc(ck.encoder.p), adam_head(result.objective_head);
  ParamSet genc = ck.encoder.p.zeros_like(), ghead = result.objective_head.zeros_like();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  long total = static_cast<long>((n_units + bs - 1) / bs) * cfg.epochs;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs && step < total; ++epoch) {
    std::vector<detail::PretrainUnit> units =
        objective == Objective::mlm
            ? mlm_units
            : detail::context_pert_units(unlabeled, ck.vocab, replacement_pool, maxpos,
                                         derive_seed(cfg.seed, "perturb", static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(units.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order);
    double loss_sum = 0.0;
    long correct = 0, seen = 0;
    for (std::size_t b = 0; b < order.size() && step < total; b += bs) {
      const std::size_t e = std::min(order.size(), b + bs);
      // Target counts are known only after masking; normalise by units and
      // rescale afterwards.
      genc.set_zero();
      ghead.set_zero();
      long batch_targets = 0;
      for (std::size_t k = b; k < e; ++k) {
        const auto seed = derive_seed(cfg.seed, "unit", static_cast<std::uint64_t>(epoch) * 1000003ULL + order[k]);
        const auto [l, c, n] = pretrain_step(ck.encoder, result.objective_head, units[order[k]], objective, seed,
                                             1.0, &genc, &ghead);
        loss_sum += l;
        correct += c;
        batch_targets += n;
      }
      if (batch_targets == 0) continue;
      seen += batch_targets;
      genc.scale(1.0 / static_cast<double>(batch_targets));
      ghead.scale(1.0 / static_cast<double>(batch_targets));
      const double lr = scheduled_lr(cfg.lr, step, cfg.warmup, total, cfg.schedule);
      adam_enc.update(ck.encoder.p, genc, lr);
      adam_head.update(result.objective_head, ghead, lr);
      ++step;
    }
    if (seen > 0)
      result.epochs.push_back({epoch, loss_sum / static_cast<double>(seen),
                               static_cast<double>(correct) / static_cast<double>(seen), step});
  }
  ck.steps = step;
  ck.metadata["objective"] = to_string(objective);
  return result;
}

// Perturbation-classification accuracy of a Context-Pert model on `docs`.
inline double context_pert_accuracy(const PretrainResult& model, const Corpus& docs,
                                    const std::vector<std::string>& replacement_pool, std::uint64_t seed) {
  const auto units = detail::context_pert_units(docs, model.checkpoint.vocab, replacement_pool,
                                                model.checkpoint.encoder.config.max_positions, seed);
  long correct = 0, total = 0;
  for (const auto& u : units) {
    const auto [l, c, n] = pretrain_step(model.checkpoint.encoder, model.objective_head, u,
                                         Objective::context_pert, 0, 1.0, nullptr, nullptr);
    correct += c;
    total += n;
  }
  require(total > 0, ErrorCode::undefined_input, "context_pert_accuracy: no evaluable documents");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace argrel
