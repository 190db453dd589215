// Vocabulary and a small pre-LN transformer encoder. A window of
// propositions is laid out as [SEP] tokens [SEP] tokens ...; the final-layer
// state at each separator represents the proposition that follows it.
// Backpropagation is written out by hand.
#pragma once

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "argrel/corpus.hpp"
#include "argrel/tensor.hpp"
#include "argrel/text.hpp"

namespace argrel {

class Vocab {
 public:
  static constexpr int kSep = 0;
  static constexpr int kPad = 1;
  static constexpr int kUnk = 2;
  static constexpr int kMask = 3;
  static constexpr int kNumSpecial = 4;

  Vocab() : Vocab(std::vector<std::string>{}) {}

  // `words` excludes the special tokens.
  explicit Vocab(const std::vector<std::string>& words) {
    tokens_ = {"[SEP]", "[PAD]", "[UNK]", "[MASK]"};
    for (const auto& w : words) {
      if (index_.count(w)) fail(ErrorCode::conflict, "duplicate vocabulary entry '" + w + "'");
      index_[w] = static_cast<int>(tokens_.size());
      tokens_.push_back(w);
    }
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::vector<std::string> words() const { return {tokens_.begin() + kNumSpecial, tokens_.end()}; }

  int id(const std::string& tok) const {
    const auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }
  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& t : tokenize(text)) ids.push_back(id(t));
    return ids;
  }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Tokens with frequency >= min_count, ordered by descending frequency, then
// lexicographically.
inline Vocab build_vocab(const Corpus& corpus, int min_count = 1) {
  std::map<std::string, long> freq;
  for (const auto& d : corpus.documents)
    for (const auto& p : d.propositions)
      for (const auto& t : tokenize(p.text)) ++freq[t];
  std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (const auto& [w, c] : items)
    if (c >= min_count) words.push_back(w);
  return Vocab(words);
}

struct EncoderConfig {
  int dim = 64;
  int layers = 2;
  int heads = 2;
  int ffn_mult = 4;
  double dropout_p = 0.1;
  int max_positions = 512;
  std::uint64_t seed = 0;

  void check() const {
    require(dim >= 1 && layers >= 1 && heads >= 1 && ffn_mult >= 1 && max_positions >= 1,
            ErrorCode::config, "encoder config: sizes must be positive");
    require(dim % heads == 0, ErrorCode::config, "encoder config: dim must be divisible by heads");
    require(dropout_p >= 0.0 && dropout_p < 1.0, ErrorCode::config,
            "encoder config: dropout_p must lie in [0,1)");
  }
  // Architecture equality; the init seed does not affect compatibility.
  bool compatible(const EncoderConfig& o) const {
    return dim == o.dim && layers == o.layers && heads == o.heads && ffn_mult == o.ffn_mult &&
           max_positions == o.max_positions;
  }
  bool operator==(const EncoderConfig&) const = default;
};

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
  return {{"dim", c.dim},           {"layers", c.layers},
          {"heads", c.heads},       {"ffn_mult", c.ffn_mult},
          {"dropout_p", c.dropout_p}, {"max_positions", c.max_positions},
          {"seed", c.seed}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.dim = j.value("dim", c.dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.seed = j.value("seed", c.seed);
  return c;
}

// Parameter layout: token embeddings, positional embeddings, 16 tensors per
// layer, final layer norm.
struct EncoderParams {
  EncoderConfig config;
  int vocab_size = 0;
  ParamSet p;

  static constexpr std::size_t kTokEmb = 0;
  static constexpr std::size_t kPosEmb = 1;
  static constexpr std::size_t kPerLayer = 16;
  enum LayerSlot : std::size_t {
    ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2
  };

  std::size_t layer(int l, LayerSlot s) const { return 2 + static_cast<std::size_t>(l) * kPerLayer + s; }
  std::size_t final_gain() const { return 2 + static_cast<std::size_t>(config.layers) * kPerLayer; }
  std::size_t final_bias() const { return final_gain() + 1; }
};

inline EncoderParams init_encoder(const EncoderConfig& cfg, int vocab_size) {
  cfg.check();
  require(vocab_size > Vocab::kNumSpecial, ErrorCode::config, "encoder needs a non-empty vocabulary");
  EncoderParams e;
  e.config = cfg;
  e.vocab_size = vocab_size;
  Rng rng(derive_seed(cfg.seed, "encoder-init"));
  const int d = cfg.dim, f = cfg.dim * cfg.ffn_mult;
  init_normal(e.p[e.p.add("tok_emb", vocab_size, d)], 0.1, rng);
  {
    // Sinusoidal start so attention can pick up relative offsets early.
    Mat& pe = e.p[e.p.add("pos_emb", cfg.max_positions, d)];
    for (int pos = 0; pos < cfg.max_positions; ++pos)
      for (int i = 0; i < d; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / d);
        pe(pos, i) = (i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq));
      }
  }
  const double out_scale = 1.0 / std::sqrt(2.0 * cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    e.p[e.p.add(pre + "ln1_g", 1, d)].setOnes();
    e.p.add(pre + "ln1_b", 1, d);
    for (const char* name : {"q", "k", "v"}) {
      init_normal(e.p[e.p.add(pre + "w" + name, d, d)], 1.0 / std::sqrt(d), rng);
      e.p.add(pre + "b" + name, 1, d);
    }
    init_normal(e.p[e.p.add(pre + "wo", d, d)], out_scale / std::sqrt(d), rng);
    e.p.add(pre + "bo", 1, d);
    e.p[e.p.add(pre + "ln2_g", 1, d)].setOnes();
    e.p.add(pre + "ln2_b", 1, d);
    init_normal(e.p[e.p.add(pre + "w1", d, f)], 1.0 / std::sqrt(d), rng);
    e.p.add(pre + "b1", 1, f);
    init_normal(e.p[e.p.add(pre + "w2", f, d)], out_scale / std::sqrt(f), rng);
    e.p.add(pre + "b2", 1, d);
  }
  e.p[e.p.add("lnf_g", 1, d)].setOnes();
  e.p.add("lnf_b", 1, d);
  return e;
}

enum class EncodeMode { train, eval, mc_dropout };

struct LayerTape {
  Mat x_in;
  LayerNormCache ln1;
  Mat a, q, k, v;
  std::vector<Mat> attn;
  Mat o, drop1;
  LayerNormCache ln2;
  Mat a2, u, g, drop2;
};

struct EncodeTape {
  bool valid = false;
  std::vector<int> ids;
  Mat drop0;
  std::vector<LayerTape> layers;
  LayerNormCache lnf;
};

inline Mat add_row(Mat m, const Mat& bias) {
  m.rowwise() += bias.row(0);
  return m;
}

// Final hidden states (T x dim) for a token sequence.
inline Mat encoder_forward(const EncoderParams& e, std::span<const int> ids, EncodeMode mode,
                           std::uint64_t seed, EncodeTape* tape) {
  const auto& cfg = e.config;
  const auto T = static_cast<Eigen::Index>(ids.size());
  require(T >= 1, ErrorCode::precondition, "encoder input is empty");
  require(T <= cfg.max_positions, ErrorCode::precondition,
          "encoder input of " + std::to_string(T) + " tokens exceeds max_positions " +
              std::to_string(cfg.max_positions));
  const bool drop = mode != EncodeMode::eval && cfg.dropout_p > 0.0;
  Rng rng(derive_seed(seed, "dropout"));
  const int d = cfg.dim, dh = cfg.dim / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    require(id >= 0 && id < e.vocab_size, ErrorCode::precondition, "token id out of vocabulary range");
    x.row(t) = e.p[EncoderParams::kTokEmb].row(id) + e.p[EncoderParams::kPosEmb].row(t);
  }
  if (tape) {
    tape->valid = false;
    tape->ids.assign(ids.begin(), ids.end());
    tape->layers.assign(static_cast<std::size_t>(cfg.layers), LayerTape{});
    tape->drop0 = Mat();
  }
  if (drop) {
    Mat m = dropout_mask(T, d, cfg.dropout_p, rng);
    x = x.cwiseProduct(m);
    if (tape) tape->drop0 = std::move(m);
  }

  for (int l = 0; l < cfg.layers; ++l) {
    using S = EncoderParams::LayerSlot;
    auto P = [&](S s) -> const Mat& { return e.p[e.layer(l, s)]; };
    LayerTape local;
    LayerTape& lt = tape ? tape->layers[static_cast<std::size_t>(l)] : local;
    lt.x_in = x;
    lt.a = layer_norm(x, P(S::ln1_g), P(S::ln1_b), &lt.ln1);
    lt.q = add_row(lt.a * P(S::wq), P(S::bq));
    lt.k = add_row(lt.a * P(S::wk), P(S::bk));
    lt.v = add_row(lt.a * P(S::wv), P(S::bv));
    lt.o = Mat(T, d);
    lt.attn.resize(static_cast<std::size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
      Mat s = lt.q.middleCols(h * dh, dh) * lt.k.middleCols(h * dh, dh).transpose() * scale;
      softmax_rows_inplace(s);
      lt.o.middleCols(h * dh, dh) = s * lt.v.middleCols(h * dh, dh);
      lt.attn[static_cast<std::size_t>(h)] = std::move(s);
    }
    Mat y = add_row(lt.o * P(S::wo), P(S::bo));
    if (drop) {
      lt.drop1 = dropout_mask(T, d, cfg.dropout_p, rng);
      y = y.cwiseProduct(lt.drop1);
    }
    x += y;
    lt.a2 = layer_norm(x, P(S::ln2_g), P(S::ln2_b), &lt.ln2);
    lt.u = add_row(lt.a2 * P(S::w1), P(S::b1));
    lt.g = gelu(lt.u);
    Mat z = add_row(lt.g * P(S::w2), P(S::b2));
    if (drop) {
      lt.drop2 = dropout_mask(T, d, cfg.dropout_p, rng);
      z = z.cwiseProduct(lt.drop2);
    }
    x += z;
  }
  Mat out = layer_norm(x, e.p[e.final_gain()], e.p[e.final_bias()], tape ? &tape->lnf : nullptr);
  if (tape) tape->valid = true;
  return out;
}

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(hidden).
inline void encoder_backward(const EncoderParams& e, const EncodeTape& tape, const Mat& dhidden,
                             ParamSet& grads) {
  require(tape.valid, ErrorCode::state, "encoder_backward called without a recorded forward pass");
  require(grads.same_shape(e.p), ErrorCode::shape, "gradient buffer does not match encoder params");
  const auto& cfg = e.config;
  const auto T = static_cast<Eigen::Index>(tape.ids.size());
  require(dhidden.rows() == T && dhidden.cols() == cfg.dim, ErrorCode::shape,
          "hidden-state gradient has the wrong shape");
  const int dh = cfg.dim / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dx = layer_norm_backward(dhidden, e.p[e.final_gain()], tape.lnf, grads[e.final_gain()],
                               grads[e.final_bias()]);
  for (int l = cfg.layers - 1; l >= 0; --l) {
    using S = EncoderParams::LayerSlot;
    auto P = [&](S s) -> const Mat& { return e.p[e.layer(l, s)]; };
    auto G = [&](S s) -> Mat& { return grads[e.layer(l, s)]; };
    const LayerTape& lt = tape.layers[static_cast<std::size_t>(l)];

    // Feed-forward block.
    Mat dz = lt.drop2.size() ? Mat(dx.cwiseProduct(lt.drop2)) : dx;
    G(S::w2) += lt.g.transpose() * dz;
    G(S::b2).row(0) += dz.colwise().sum();
    Mat du = gelu_backward(dz * P(S::w2).transpose(), lt.u);
    G(S::w1) += lt.a2.transpose() * du;
    G(S::b1).row(0) += du.colwise().sum();
    Mat da2 = du * P(S::w1).transpose();
    dx += layer_norm_backward(da2, P(S::ln2_g), lt.ln2, G(S::ln2_g), G(S::ln2_b));

    // Attention block.
    Mat dy = lt.drop1.size() ? Mat(dx.cwiseProduct(lt.drop1)) : dx;
    G(S::wo) += lt.o.transpose() * dy;
    G(S::bo).row(0) += dy.colwise().sum();
    Mat dout = dy * P(S::wo).transpose();
    Mat dq(T, cfg.dim), dk(T, cfg.dim), dv(T, cfg.dim);
    for (int h = 0; h < cfg.heads; ++h) {
      const Mat& A = lt.attn[static_cast<std::size_t>(h)];
      const Mat doh = dout.middleCols(h * dh, dh);
      Mat dA = doh * lt.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = A.transpose() * doh;
      Mat dS = A.cwiseProduct(dA);
      const Eigen::VectorXd rs = dS.rowwise().sum();
      dS -= (A.array().colwise() * rs.array()).matrix();
      dS *= scale;
      dq.middleCols(h * dh, dh) = dS * lt.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = dS.transpose() * lt.q.middleCols(h * dh, dh);
    }
    G(S::wq) += lt.a.transpose() * dq;
    G(S::bq).row(0) += dq.colwise().sum();
    G(S::wk) += lt.a.transpose() * dk;
    G(S::bk).row(0) += dk.colwise().sum();
    G(S::wv) += lt.a.transpose() * dv;
    G(S::bv).row(0) += dv.colwise().sum();
    Mat da = dq * P(S::wq).transpose() + dk * P(S::wk).transpose() + dv * P(S::wv).transpose();
    dx += layer_norm_backward(da, P(S::ln1_g), lt.ln1, G(S::ln1_g), G(S::ln1_b));
  }
  if (tape.drop0.size()) dx = dx.cwiseProduct(tape.drop0);
  for (Eigen::Index t = 0; t < T; ++t) {
    grads[EncoderParams::kTokEmb].row(tape.ids[static_cast<std::size_t>(t)]) += dx.row(t);
    grads[EncoderParams::kPosEmb].row(t) += dx.row(t);
  }
}

// A window laid out for the encoder.
struct WindowInput {
  std::vector<int> ids;
  std::vector<int> sep_positions;  // one per proposition, in input order
};

inline WindowInput layout_window(const std::vector<std::vector<int>>& props) {
  WindowInput w;
  for (const auto& p : props) {
    w.sep_positions.push_back(static_cast<int>(w.ids.size()));
    w.ids.push_back(Vocab::kSep);
    w.ids.insert(w.ids.end(), p.begin(), p.end());
  }
  return w;
}

// Result of encoding one window; `tape` is populated in train mode.
struct WindowEncoding {
  WindowInput input;
  Mat hidden;
  EncodeTape tape;

  RowVec rep(std::size_t k) const { return hidden.row(input.sep_positions[k]); }
  std::vector<RowVec> reps() const {
    std::vector<RowVec> out;
    for (std::size_t k = 0; k < input.sep_positions.size(); ++k) out.push_back(rep(k));
    return out;
  }
};

inline WindowEncoding encode_window_full(const std::vector<std::vector<int>>& props,
                                         const EncoderParams& params, EncodeMode mode,
                                         std::uint64_t seed) {
  require(!props.empty(), ErrorCode::precondition, "encode_window: no propositions");
  WindowEncoding enc;
  enc.input = layout_window(props);
  enc.hidden = encoder_forward(params, enc.input.ids, mode, seed,
                               mode == EncodeMode::train ? &enc.tape : nullptr);
  return enc;
}

// One representation per proposition (its separator state).
inline std::vector<RowVec> encode_window(const std::vector<std::vector<int>>& props, int head_index,
                                         const EncoderParams& params, EncodeMode mode,
                                         std::uint64_t seed) {
  require(head_index >= 0 && head_index < static_cast<int>(props.size()), ErrorCode::precondition,
          "encode_window: head index outside the window");
  return encode_window_full(props, params, mode, seed).reps();
}

// Scatters per-proposition representation gradients back to hidden rows.
inline Mat hidden_grad_from_reps(const WindowEncoding& enc, const std::vector<RowVec>& drep) {
  Mat dh = Mat::Zero(enc.hidden.rows(), enc.hidden.cols());
  for (std::size_t k = 0; k < drep.size(); ++k)
    if (drep[k].size()) dh.row(enc.input.sep_positions[k]) += drep[k];
  return dh;
}

}  // namespace argrel
