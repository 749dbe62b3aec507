#pragma once

// Dual-branch MOS predictor.
//
//   audio [T, d_audio] -> temporal block -> pool -> MLP -> MI head
//   temporal output (or raw audio, decoupled) -> projection -+
//   text [T', d_text] -> projection -> cross-attention query -+-> pool -> MLP -> TA head
//
// The model is defined per clip. All layers are composed from the autodiff
// primitives, so the same code path serves inference and training.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "doramos/autodiff.hpp"
#include "doramos/error.hpp"
#include "doramos/labels.hpp"
#include "doramos/params.hpp"
#include "doramos/rng.hpp"
#include "doramos/tensor.hpp"

namespace doramos {

enum class Variant { Dora, Coral, Decoupled };
enum class Temporal { Transformer, BiLstm };
enum class Pooling { Mean, Attention };

NLOHMANN_JSON_SERIALIZE_ENUM(Variant, {{Variant::Dora, "dora"}, {Variant::Coral, "coral"}, {Variant::Decoupled, "decoupled"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Temporal, {{Temporal::Transformer, "transformer"}, {Temporal::BiLstm, "bilstm"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Pooling, {{Pooling::Mean, "mean"}, {Pooling::Attention, "attention"}})

inline std::string to_string(Variant v) { return nlohmann::json(v).get<std::string>(); }
inline std::string to_string(Temporal v) { return nlohmann::json(v).get<std::string>(); }
inline std::string to_string(Pooling v) { return nlohmann::json(v).get<std::string>(); }

template <typename Enum>
Enum parse_enum(const std::string& text) {
  const nlohmann::json j = text;
  const Enum e = j.get<Enum>();
  // The serializer falls back to the first enumerator on unknown strings.
  if (nlohmann::json(e).get<std::string>() != text) throw UsageError("unknown option value: " + text);
  return e;
}

struct ModelConfig {
  Variant variant = Variant::Dora;
  Temporal temporal = Temporal::Transformer;
  Pooling pooling = Pooling::Attention;
  std::size_t d_audio = 32;
  std::size_t d_text = 16;
  std::size_t d_common = 256;
  std::size_t n_heads = 4;
  std::size_t d_hidden = 128;
  std::size_t lstm_hidden = 128;
  std::size_t K = 20;
  std::size_t n_layers = 1;
  bool positional_encoding = false;
  double dropout = 0.0;
  double score_lo = 1.0;
  double score_hi = 5.0;

  bool cumulative() const { return variant == Variant::Coral; }
  std::size_t head_width() const { return cumulative() ? K - 1 : K; }
  std::size_t temporal_width() const {
    return temporal == Temporal::Transformer ? d_audio : 2 * lstm_hidden;
  }

  void validate() const {
    if (n_heads < 1) throw UsageError("n_heads must be >= 1");
    if (K < 2) throw UsageError("K must be >= 2");
    if (d_audio == 0 || d_text == 0 || d_common == 0 || d_hidden == 0) {
      throw UsageError("model widths must be positive");
    }
    if (d_common % n_heads != 0) {
      throw UsageError("d_common (" + std::to_string(d_common) + ") not divisible by n_heads (" +
                       std::to_string(n_heads) + ")");
    }
    if (temporal == Temporal::Transformer && d_audio % n_heads != 0) {
      throw UsageError("d_audio (" + std::to_string(d_audio) + ") not divisible by n_heads (" +
                       std::to_string(n_heads) + ")");
    }
    if (temporal == Temporal::BiLstm && lstm_hidden == 0) throw UsageError("lstm_hidden must be positive");
    if (n_layers < 1) throw UsageError("n_layers must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw UsageError("dropout must lie in [0, 1)");
  }

  ScoreBins bins() const { return make_bins(K, score_lo, score_hi); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", c.variant},
                     {"temporal", c.temporal},
                     {"pooling", c.pooling},
                     {"d_audio", c.d_audio},
                     {"d_text", c.d_text},
                     {"d_common", c.d_common},
                     {"n_heads", c.n_heads},
                     {"d_hidden", c.d_hidden},
                     {"lstm_hidden", c.lstm_hidden},
                     {"K", c.K},
                     {"n_layers", c.n_layers},
                     {"positional_encoding", c.positional_encoding},
                     {"dropout", c.dropout},
                     {"score_lo", c.score_lo},
                     {"score_hi", c.score_hi}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.variant = parse_enum<Variant>(j.at("variant").get<std::string>());
  c.temporal = parse_enum<Temporal>(j.at("temporal").get<std::string>());
  c.pooling = parse_enum<Pooling>(j.at("pooling").get<std::string>());
  j.at("d_audio").get_to(c.d_audio);
  j.at("d_text").get_to(c.d_text);
  j.at("d_common").get_to(c.d_common);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_hidden").get_to(c.d_hidden);
  j.at("lstm_hidden").get_to(c.lstm_hidden);
  j.at("K").get_to(c.K);
  j.at("n_layers").get_to(c.n_layers);
  j.at("positional_encoding").get_to(c.positional_encoding);
  j.at("dropout").get_to(c.dropout);
  j.at("score_lo").get_to(c.score_lo);
  j.at("score_hi").get_to(c.score_hi);
}

namespace nn {

inline std::string layer_prefix(std::size_t l) { return "temporal.l" + std::to_string(l) + "."; }

inline void add_linear(ParamStore& p, Rng& rng, const std::string& name, std::size_t in, std::size_t out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor w = Tensor::matrix(in, out);
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  p.add(name + ".w", std::move(w));
  p.add(name + ".b", Tensor::matrix(1, out));
}

inline void add_layernorm(ParamStore& p, const std::string& name, std::size_t d) {
  p.add(name + ".gamma", Tensor::matrix(1, d, 1.0));
  p.add(name + ".beta", Tensor::matrix(1, d));
}

inline void add_attention(ParamStore& p, Rng& rng, const std::string& name, std::size_t d) {
  add_linear(p, rng, name + ".q", d, d);
  add_linear(p, rng, name + ".k", d, d);
  add_linear(p, rng, name + ".v", d, d);
  add_linear(p, rng, name + ".o", d, d);
}

inline void add_lstm_direction(ParamStore& p, Rng& rng, const std::string& name, std::size_t in,
                               std::size_t hidden) {
  const double bi = 1.0 / std::sqrt(static_cast<double>(in));
  const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
  Tensor w_ih = Tensor::matrix(in, 4 * hidden);
  for (double& v : w_ih.data()) v = rng.uniform(-bi, bi);
  Tensor w_hh = Tensor::matrix(hidden, 4 * hidden);
  for (double& v : w_hh.data()) v = rng.uniform(-bh, bh);
  p.add(name + ".w_ih", std::move(w_ih));
  p.add(name + ".w_hh", std::move(w_hh));
  p.add(name + ".b", Tensor::matrix(1, 4 * hidden));
}

inline void add_pool_query(ParamStore& p, Rng& rng, const std::string& name, std::size_t d) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor q = Tensor::matrix(d, 1);
  for (double& v : q.data()) v = rng.uniform(-bound, bound);
  p.add(name + ".query", std::move(q));
}

inline void add_mlp(ParamStore& p, Rng& rng, const std::string& name, std::size_t in, std::size_t hidden,
                    std::size_t out) {
  add_linear(p, rng, name + ".fc1", in, hidden);
  add_linear(p, rng, name + ".fc2", hidden, out);
}

}  // namespace nn

// Seeded initialization: linear weights uniform in +-1/sqrt(fan_in), biases
// zero, layer-norm gain one.
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore p;
  Rng rng(derive_seed(seed, "init"));
  if (cfg.temporal == Temporal::Transformer) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string pre = nn::layer_prefix(l);
      nn::add_layernorm(p, pre + "ln1", cfg.d_audio);
      nn::add_attention(p, rng, pre + "attn", cfg.d_audio);
      nn::add_layernorm(p, pre + "ln2", cfg.d_audio);
      nn::add_linear(p, rng, pre + "ffn1", cfg.d_audio, 4 * cfg.d_audio);
      nn::add_linear(p, rng, pre + "ffn2", 4 * cfg.d_audio, cfg.d_audio);
    }
  } else {
    std::size_t in = cfg.d_audio;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string pre = nn::layer_prefix(l);
      nn::add_lstm_direction(p, rng, pre + "lstm_fwd", in, cfg.lstm_hidden);
      nn::add_lstm_direction(p, rng, pre + "lstm_bwd", in, cfg.lstm_hidden);
      in = 2 * cfg.lstm_hidden;
    }
  }
  const std::size_t dt = cfg.temporal_width();
  if (cfg.pooling == Pooling::Attention) nn::add_pool_query(p, rng, "mi_pool", dt);
  nn::add_mlp(p, rng, "mi_head", dt, cfg.d_hidden, cfg.head_width());

  const std::size_t audio_src = cfg.variant == Variant::Decoupled ? cfg.d_audio : dt;
  nn::add_linear(p, rng, "ta.audio_proj", audio_src, cfg.d_common);
  nn::add_linear(p, rng, "ta.text_proj", cfg.d_text, cfg.d_common);
  nn::add_attention(p, rng, "ta.xattn", cfg.d_common);
  if (cfg.pooling == Pooling::Attention) nn::add_pool_query(p, rng, "ta_pool", cfg.d_common);
  nn::add_mlp(p, rng, "ta_head", cfg.d_common, cfg.d_hidden, cfg.head_width());
  return p;
}

// Names of the parameters belonging to the temporal block.
inline std::vector<std::string> temporal_param_names(const ParamStore& p) {
  std::vector<std::string> out;
  for (const auto& name : p.names()) {
    if (name.rfind("temporal.", 0) == 0) out.push_back(name);
  }
  return out;
}

// Per-forward context: the tape, the parameters, and an optional dropout RNG
// (absent at inference).
struct Graph {
  Tape& tape;
  const ParamStore& params;
  double dropout = 0.0;
  Rng* rng = nullptr;

  Var p(const std::string& name) const { return tape.param(params, name); }

  Var drop(Var x) const {
    if (rng == nullptr || dropout <= 0.0) return x;
    return ad::dropout(x, dropout, *rng);
  }
};

namespace nn {

inline Var linear(const Graph& g, const std::string& name, Var x) {
  return ad::add(ad::matmul(x, g.p(name + ".w")), g.p(name + ".b"));
}

inline Var layernorm(const Graph& g, const std::string& name, Var x) {
  return ad::add(ad::mul(ad::layernorm(x), g.p(name + ".gamma")), g.p(name + ".beta"));
}

// Scaled dot-product attention with n_heads heads; queries from q_in,
// keys and values from kv_in. Output has q_in's row count.
inline Var multi_head_attention(const Graph& g, const std::string& name, Var q_in, Var kv_in,
                                std::size_t n_heads) {
  const std::size_t d = q_in.cols();
  if (kv_in.cols() != d) {
    throw ShapeError(name + ": query width " + std::to_string(d) + " != key/value width " +
                     std::to_string(kv_in.cols()));
  }
  if (d % n_heads != 0) {
    throw ShapeError(name + ": width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                     " heads");
  }
  const std::size_t dh = d / n_heads;
  const Var q = linear(g, name + ".q", q_in);
  const Var k = linear(g, name + ".k", kv_in);
  const Var v = linear(g, name + ".v", kv_in);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Var qh = ad::slice_cols(q, h * dh, dh);
    const Var kh = ad::slice_cols(k, h * dh, dh);
    const Var vh = ad::slice_cols(v, h * dh, dh);
    const Var weights = ad::softmax(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt), 1);
    heads.push_back(ad::matmul(weights, vh));
  }
  const Var merged = n_heads == 1 ? heads.front() : ad::concat_cols(heads);
  return linear(g, name + ".o", merged);
}

// Pre-norm encoder layer: x + MHA(LN(x)), then + FFN(LN(.)) with a d -> 4d -> d ReLU MLP.
inline Var transformer_layer(const Graph& g, const std::string& prefix, Var x, std::size_t n_heads) {
  const Var normed = layernorm(g, prefix + "ln1", x);
  const Var attn = multi_head_attention(g, prefix + "attn", normed, normed, n_heads);
  const Var h = ad::add(x, g.drop(attn));
  const Var ff = linear(g, prefix + "ffn2", ad::relu(linear(g, prefix + "ffn1", layernorm(g, prefix + "ln2", h))));
  return ad::add(h, g.drop(ff));
}

// One LSTM direction; gates packed as [input, forget, cell, output].
inline Var lstm_direction(const Graph& g, const std::string& name, Var x, std::size_t hidden, bool reverse) {
  const std::size_t T = x.rows();
  const Var projected = ad::add(ad::matmul(x, g.p(name + ".w_ih")), g.p(name + ".b"));
  const Var w_hh = g.p(name + ".w_hh");
  std::vector<Var> outputs(T);
  std::optional<Var> h, c;
  for (std::size_t step = 0; step < T; ++step) {
    const std::size_t t = reverse ? T - 1 - step : step;
    Var gates = ad::slice_rows(projected, t, 1);
    if (h) gates = ad::add(gates, ad::matmul(*h, w_hh));
    const Var in = ad::sigmoid(ad::slice_cols(gates, 0, hidden));
    const Var cell = ad::tanh(ad::slice_cols(gates, 2 * hidden, hidden));
    const Var out = ad::sigmoid(ad::slice_cols(gates, 3 * hidden, hidden));
    Var c_new = ad::mul(in, cell);
    if (c) c_new = ad::add(ad::mul(ad::sigmoid(ad::slice_cols(gates, hidden, hidden)), *c), c_new);
    c = c_new;
    h = ad::mul(out, ad::tanh(c_new));
    outputs[t] = *h;
  }
  return ad::concat_rows(outputs);
}

// Forward and backward recurrences concatenated along features: [T, 2*hidden].
inline Var bilstm_layer(const Graph& g, const std::string& prefix, Var x, std::size_t hidden) {
  return ad::concat_cols({lstm_direction(g, prefix + "lstm_fwd", x, hidden, false),
                          lstm_direction(g, prefix + "lstm_bwd", x, hidden, true)});
}

inline Var mean_pool(Var seq) { return ad::mean(seq, 0); }

// softmax(seq . query) over time, then the weighted sum of rows: [1, d].
inline Var attention_pool(const Graph& g, const std::string& name, Var seq) {
  const Var weights = ad::softmax(ad::matmul(seq, g.p(name + ".query")), 0);
  return ad::matmul(ad::transpose(weights), seq);
}

inline Var pool(const Graph& g, Pooling kind, const std::string& name, Var seq) {
  return kind == Pooling::Attention ? attention_pool(g, name, seq) : mean_pool(seq);
}

// linear -> ReLU -> linear, raw logits.
inline Var mlp_head(const Graph& g, const std::string& name, Var v) {
  return linear(g, name + ".fc2", g.drop(ad::relu(linear(g, name + ".fc1", v))));
}

inline Tensor sinusoidal_positions(std::size_t T, std::size_t d) {
  Tensor pe = Tensor::matrix(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe(t, i) = i % 2 == 0 ? std::sin(static_cast<double>(t) * freq) : std::cos(static_cast<double>(t) * freq);
    }
  }
  return pe;
}

inline Var temporal_block(const Graph& g, const ModelConfig& cfg, Var audio) {
  Var x = audio;
  if (cfg.temporal == Temporal::Transformer) {
    if (cfg.positional_encoding) x = ad::add(x, g.tape.constant(sinusoidal_positions(x.rows(), x.cols())));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) x = transformer_layer(g, layer_prefix(l), x, cfg.n_heads);
  } else {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) x = bilstm_layer(g, layer_prefix(l), x, cfg.lstm_hidden);
  }
  return x;
}

}  // namespace nn

// Raw head outputs of one forward pass, as [1, head_width] tape values.
struct HeadOutputs {
  Var mi;
  Var ta;
};

inline HeadOutputs forward_graph(const ModelConfig& cfg, const Graph& g, const Tensor& audio, const Tensor& text) {
  if (audio.rank() != 2 || audio.cols() != cfg.d_audio || audio.rows() == 0) {
    throw ShapeError("audio embedding shape " + shape_str(audio.shape()) + " incompatible with d_audio " +
                     std::to_string(cfg.d_audio));
  }
  if (text.rank() != 2 || text.cols() != cfg.d_text || text.rows() == 0) {
    throw ShapeError("text embedding shape " + shape_str(text.shape()) + " incompatible with d_text " +
                     std::to_string(cfg.d_text));
  }
  const Var audio_in = g.tape.constant(audio);
  const Var text_in = g.tape.constant(text);

  const Var context = nn::temporal_block(g, cfg, audio_in);
  const Var mi = nn::mlp_head(g, "mi_head", nn::pool(g, cfg.pooling, "mi_pool", context));

  // Decoupled: the TA branch never sees the temporal block, so that block
  // trains on MI gradients only.
  const Var audio_src = cfg.variant == Variant::Decoupled ? audio_in : context;
  const Var audio_proj = nn::linear(g, "ta.audio_proj", audio_src);
  const Var text_proj = nn::linear(g, "ta.text_proj", text_in);
  const Var fused = nn::multi_head_attention(g, "ta.xattn", text_proj, audio_proj, cfg.n_heads);
  const Var ta = nn::mlp_head(g, "ta_head", nn::pool(g, cfg.pooling, "ta_pool", fused));
  return {mi, ta};
}

struct Prediction {
  bool cumulative = false;
  std::vector<double> mi_logits;
  std::vector<double> ta_output;
  // softmax of the logits, or per-threshold sigmoids for cumulative heads.
  std::vector<double> mi_probs;
  std::vector<double> ta_probs;
  double mi_score = 0.0;
  double ta_score = 0.0;
};

namespace detail {

inline std::vector<double> softmax_values(const std::vector<double>& x) {
  double mx = x.front();
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> y(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (y[i] = std::exp(x[i] - mx));
  for (double& v : y) v /= z;
  return y;
}

inline std::vector<double> sigmoid_values(const std::vector<double>& x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
  }
  return y;
}

}  // namespace detail

// Converts raw head outputs into probabilities and decoded scores.
inline Prediction make_prediction(const ModelConfig& cfg, const ScoreBins& bins, std::vector<double> mi_logits,
                                  std::vector<double> ta_output) {
  Prediction p;
  p.cumulative = cfg.cumulative();
  p.mi_logits = std::move(mi_logits);
  p.ta_output = std::move(ta_output);
  if (p.cumulative) {
    p.mi_probs = detail::sigmoid_values(p.mi_logits);
    p.ta_probs = detail::sigmoid_values(p.ta_output);
    p.mi_score = decode_coral(p.mi_probs, bins);
    p.ta_score = decode_coral(p.ta_probs, bins);
  } else {
    p.mi_probs = detail::softmax_values(p.mi_logits);
    p.ta_probs = detail::softmax_values(p.ta_output);
    p.mi_score = decode_expected(p.mi_probs, bins);
    p.ta_score = decode_expected(p.ta_probs, bins);
  }
  return p;
}

inline Prediction predict(const ModelConfig& cfg, const ParamStore& params, const Tensor& audio, const Tensor& text) {
  Tape tape;
  const Graph g{tape, params};
  const HeadOutputs out = forward_graph(cfg, g, audio, text);
  return make_prediction(cfg, cfg.bins(), out.mi.value().data(), out.ta.value().data());
}

}  // namespace doramos
