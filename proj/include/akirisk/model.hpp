#pragma once

// Four-head causal transformer: token + type + position + time-bucket embeddings, a
// pre-norm self-attention encoder, mean pooling over real tokens, a projection of the
// scalar features, and outcome / propensity / y0 / y1 heads.

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "akirisk/autodiff.hpp"
#include "akirisk/cohort.hpp"
#include "akirisk/losses.hpp"
#include "akirisk/rng.hpp"
#include "akirisk/vocab.hpp"

namespace akirisk {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t hidden_dim = 128;
  std::size_t n_heads = 4;
  std::size_t ffn_mult = 2;
  double dropout = 0.1;
  std::size_t max_len = 64;
  std::size_t feature_dim = kFeatureDim;
  int obs_days = 90;                  // sizes the time-bucket table and anchors recency
  double alpha = 1.0;                 // propensity loss weight
  double lambda = 1e-5;               // L2 weight over all parameters
  LossKind loss_kind = LossKind::weighted_bce;
  LossHyper loss;
  std::optional<double> recency_tau;  // days; off by default
  bool joint = true;                  // false: outcome-only (y0/y1/propensity heads unused)
  double outcome_weight = 1.0;        // joint mode: weight of the outcome-head loss term
  std::vector<int> ignored_types;     // type ids treated as padding

  void validate() const {
    if (n_layers == 0 || hidden_dim == 0 || n_heads == 0 || max_len == 0 || ffn_mult == 0)
      fail(Errc::invalid_config, "model dimensions must be positive");
    if (hidden_dim % n_heads != 0) fail(Errc::invalid_config, "hidden_dim must be divisible by n_heads");
    if (!(alpha >= 0) || !(lambda >= 0) || !(outcome_weight >= 0)) fail(Errc::invalid_hyper, "alpha, lambda and outcome_weight must be >= 0");
    if (!(dropout >= 0 && dropout < 1)) fail(Errc::invalid_hyper, "dropout must lie in [0,1)");
    if (obs_days <= 0) fail(Errc::invalid_config, "obs_days must be positive");
    if (recency_tau && !(*recency_tau > 0)) fail(Errc::invalid_hyper, "recency_tau must be positive");
    if (feature_dim != kFeatureDim) fail(Errc::invalid_config, "feature_dim must be " + std::to_string(kFeatureDim));
    loss.validate();
  }

  std::size_t time_buckets() const { return static_cast<std::size_t>((obs_days + 6) / 7); }

  /// Small configuration used for desk-scale runs and tests.
  static ModelConfig desk() {
    ModelConfig c;
    c.n_layers = 2;
    c.hidden_dim = 32;
    c.n_heads = 2;
    c.max_len = 48;
    return c;
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j{{"n_layers", c.n_layers},
                   {"hidden_dim", c.hidden_dim},
                   {"n_heads", c.n_heads},
                   {"ffn_mult", c.ffn_mult},
                   {"dropout", c.dropout},
                   {"max_len", c.max_len},
                   {"feature_dim", c.feature_dim},
                   {"obs_days", c.obs_days},
                   {"alpha", c.alpha},
                   {"lambda", c.lambda},
                   {"loss_kind", loss_kind_name(c.loss_kind)},
                   {"pos_weight", c.loss.pos_weight},
                   {"focal_alpha", c.loss.focal_alpha},
                   {"focal_gamma", c.loss.focal_gamma},
                   {"cb_beta", c.loss.cb_beta},
                   {"cb_weight_neg", c.loss.cb_weight_neg},
                   {"cb_weight_pos", c.loss.cb_weight_pos},
                   {"joint", c.joint},
                   {"outcome_weight", c.outcome_weight},
                   {"ignored_types", c.ignored_types}};
  j["recency_tau"] = c.recency_tau ? nlohmann::json(*c.recency_tau) : nlohmann::json(nullptr);
  return j;
}

/// Reads the keys present in `j` over `base`; unknown keys are an error.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_layers") c.n_layers = v.get<std::size_t>();
      else if (key == "hidden_dim") c.hidden_dim = v.get<std::size_t>();
      else if (key == "n_heads") c.n_heads = v.get<std::size_t>();
      else if (key == "ffn_mult") c.ffn_mult = v.get<std::size_t>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "max_len") c.max_len = v.get<std::size_t>();
      else if (key == "feature_dim") c.feature_dim = v.get<std::size_t>();
      else if (key == "obs_days") c.obs_days = v.get<int>();
      else if (key == "alpha") c.alpha = v.get<double>();
      else if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "loss_kind") c.loss_kind = parse_loss_kind(v.get<std::string>());
      else if (key == "pos_weight") c.loss.pos_weight = v.get<double>();
      else if (key == "focal_alpha") c.loss.focal_alpha = v.get<double>();
      else if (key == "focal_gamma") c.loss.focal_gamma = v.get<double>();
      else if (key == "cb_beta") c.loss.cb_beta = v.get<double>();
      else if (key == "cb_weight_neg") c.loss.cb_weight_neg = v.get<double>();
      else if (key == "cb_weight_pos") c.loss.cb_weight_pos = v.get<double>();
      else if (key == "joint") c.joint = v.get<bool>();
      else if (key == "outcome_weight") c.outcome_weight = v.get<double>();
      else if (key == "ignored_types") c.ignored_types = v.get<std::vector<int>>();
      else if (key == "recency_tau") c.recency_tau = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else fail(Errc::schema_error, "unknown model config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema_error, std::string("model config: ") + e.what());
  }
  return c;
}

/// Standardization of the scalar features, fitted on the training split. Lab features
/// of absent markers map to 0 (the training mean).
struct FeatureScaler {
  std::array<double, kFeatureDim> mean{};
  std::array<double, kFeatureDim> sd{};

  static FeatureScaler fit(const std::vector<CohortRow>& rows) {
    FeatureScaler s;
    std::array<double, kFeatureDim> n{}, sum{}, sq{};
    for (const auto& r : rows) {
      const auto f = r.features();
      for (std::size_t k = 0; k < kFeatureDim; ++k) {
        if (k < 9 && !r.labs[k / 3].present) continue;
        n[k] += 1;
        sum[k] += f[k];
      }
    }
    for (std::size_t k = 0; k < kFeatureDim; ++k) s.mean[k] = n[k] > 0 ? sum[k] / n[k] : 0.0;
    for (const auto& r : rows) {
      const auto f = r.features();
      for (std::size_t k = 0; k < kFeatureDim; ++k) {
        if (k < 9 && !r.labs[k / 3].present) continue;
        sq[k] += (f[k] - s.mean[k]) * (f[k] - s.mean[k]);
      }
    }
    for (std::size_t k = 0; k < kFeatureDim; ++k) {
      const double var = n[k] > 1 ? sq[k] / n[k] : 0.0;
      s.sd[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  static FeatureScaler identity() {
    FeatureScaler s;
    s.sd.fill(1.0);
    return s;
  }

  std::array<double, kFeatureDim> transform(const CohortRow& r) const {
    auto f = r.features();
    for (std::size_t k = 0; k < kFeatureDim; ++k) {
      if (k < 9 && !r.labs[k / 3].present) f[k] = 0.0;
      else f[k] = (f[k] - mean[k]) / sd[k];
    }
    return f;
  }
};

/// Learnable tensors plus everything needed to reproduce a forward pass.
struct ModelParams {
  ModelConfig config;
  std::size_t vocab_size = 0;
  FeatureScaler scaler = FeatureScaler::identity();
  std::map<std::string, Tensor> tensors;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }
};

namespace detail {

inline std::string layer_key(std::size_t l, const std::string& name) { return "enc" + std::to_string(l) + "." + name; }

inline Tensor normal_tensor(Rng& rng, Shape shape, double sd) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, sd);
  for (double& v : t.values()) v = n(rng);
  return t;
}

inline const char* const kHeads[] = {"y", "t", "y0", "y1"};

}  // namespace detail

inline ModelParams init_params(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
  cfg.validate();
  if (vocab_size < 2) fail(Errc::invalid_config, "vocab_size must include the reserved ids");
  ModelParams p;
  p.config = cfg;
  p.vocab_size = vocab_size;
  Rng rng = substream(seed, "init");
  const std::size_t H = cfg.hidden_dim, dh = H / cfg.n_heads, F = cfg.ffn_mult * H;
  auto& t = p.tensors;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    t[name + ".w"] = detail::normal_tensor(rng, {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    t[name + ".b"] = Tensor({1, out}, 0.0);
  };
  t["emb.token"] = detail::normal_tensor(rng, {vocab_size, H}, 0.1);
  t["emb.type"] = detail::normal_tensor(rng, {kNumTypes, H}, 0.1);
  t["emb.position"] = detail::normal_tensor(rng, {cfg.max_len, H}, 0.1);
  t["emb.time"] = detail::normal_tensor(rng, {cfg.time_buckets(), H}, 0.1);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    t[detail::layer_key(l, "ln1.gain")] = Tensor({1, H}, 1.0);
    t[detail::layer_key(l, "ln1.bias")] = Tensor({1, H}, 0.0);
    for (std::size_t h = 0; h < cfg.n_heads; ++h)
      for (const char* w : {"q", "k", "v"})
        t[detail::layer_key(l, "attn." + std::string(w) + std::to_string(h))] =
            detail::normal_tensor(rng, {H, dh}, 1.0 / std::sqrt(static_cast<double>(H)));
    linear(detail::layer_key(l, "attn.out"), H, H);
    t[detail::layer_key(l, "ln2.gain")] = Tensor({1, H}, 1.0);
    t[detail::layer_key(l, "ln2.bias")] = Tensor({1, H}, 0.0);
    linear(detail::layer_key(l, "ffn1"), H, F);
    linear(detail::layer_key(l, "ffn2"), F, H);
  }
  t["final_ln.gain"] = Tensor({1, H}, 1.0);
  t["final_ln.bias"] = Tensor({1, H}, 0.0);
  linear("feat", cfg.feature_dim, H);
  for (const char* head : detail::kHeads) {
    linear(std::string("head.") + head + ".l1", 2 * H, H);
    linear(std::string("head.") + head + ".l2", H, 1);
  }
  return p;
}

/// Inputs for one forward pass.
struct Batch {
  std::vector<const EncodedSequence*> seqs;
  std::vector<std::array<double, kFeatureDim>> features;  // already standardized
  std::size_t size() const noexcept { return seqs.size(); }
};

/// Pre-sigmoid head outputs, each B x 1.
struct HeadLogits {
  Var y, t, y0, y1;
};

struct HeadOutputs {
  std::vector<double> y_hat, t_hat, y0_hat, y1_hat;
};

/// Parameters bound to a graph, as trainable leaves or constants.
using BoundParams = std::map<std::string, Var>;

inline BoundParams bind(Graph& g, const ModelParams& p, bool trainable) {
  BoundParams b;
  for (const auto& [name, t] : p.tensors) b.emplace(name, trainable ? g.parameter(t) : g.constant(t));
  return b;
}

namespace detail {

inline Var linear(Graph&, const BoundParams& p, const std::string& name, Var x) {
  return add(matmul(x, p.at(name + ".w")), p.at(name + ".b"));
}

inline Tensor dropout_mask(Rng& rng, const Shape& shape, double rate) {
  Tensor m(shape);
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : m.values()) v = uniform01(rng) < rate ? 0.0 : keep;
  return m;
}

}  // namespace detail

/// `rng` is only used (and required) when train is true and dropout > 0.
inline HeadLogits forward(Graph& g, const BoundParams& p, const ModelParams& mp, const Batch& batch, bool train,
                          Rng* rng = nullptr) {
  const ModelConfig& cfg = mp.config;
  const std::size_t B = batch.size();
  if (B == 0) fail(Errc::shape_mismatch, "forward: empty batch");
  if (batch.features.size() != B) fail(Errc::shape_mismatch, "forward: feature rows differ from batch size");
  const bool use_dropout = train && cfg.dropout > 0;
  if (use_dropout && !rng) fail(Errc::invalid_config, "forward: dropout in train mode needs an rng");
  const std::size_t H = cfg.hidden_dim, nh = cfg.n_heads, dh = H / nh;

  // Live tokens (real and not of an ignored type) are packed into one row space, so
  // padding never enters a matmul and attention only ever sees live keys.
  std::vector<std::vector<std::size_t>> rows(B);
  std::vector<std::size_t> tok, typ, pos, bucket;
  std::vector<double> decay;
  const std::size_t nb = cfg.time_buckets();
  for (std::size_t b = 0; b < B; ++b) {
    const auto& s = *batch.seqs[b];
    if (s.max_len() != cfg.max_len) fail(Errc::shape_mismatch, "forward: sequence length differs from max_len");
    for (std::size_t i = 0; i < s.max_len(); ++i) {
      bool on = s.mask[i] != 0;
      for (int ty : cfg.ignored_types) on = on && s.type_ids[i] != ty;
      if (!on) continue;
      if (s.token_ids[i] < 0 || static_cast<std::size_t>(s.token_ids[i]) >= mp.vocab_size)
        fail(Errc::shape_mismatch, "forward: token id outside the vocabulary");
      if (s.type_ids[i] <= 0 || s.type_ids[i] >= kNumTypes) fail(Errc::shape_mismatch, "forward: bad type id");
      rows[b].push_back(tok.size());
      tok.push_back(static_cast<std::size_t>(s.token_ids[i]));
      typ.push_back(static_cast<std::size_t>(s.type_ids[i]));
      pos.push_back(static_cast<std::size_t>(s.position_ids[i]));
      const int before_end = cfg.obs_days - 1 - s.days[i];
      bucket.push_back(std::min<std::size_t>(nb - 1, static_cast<std::size_t>(std::max(0, before_end)) / 7));
      if (cfg.recency_tau) decay.push_back(std::exp(-(cfg.obs_days - s.days[i]) / *cfg.recency_tau));
    }
  }
  const std::size_t N = tok.size();

  Var pooled;
  if (N == 0) {
    pooled = g.constant(Tensor({B, H}, 0.0));
  } else {
    Var x = add(add(gather_rows(p.at("emb.token"), tok), gather_rows(p.at("emb.type"), typ)),
                add(gather_rows(p.at("emb.position"), pos), gather_rows(p.at("emb.time"), bucket)));
    if (cfg.recency_tau) {
      Tensor r({N, H});
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t c = 0; c < H; ++c) r.at(i, c) = decay[i];
      x = multiply(x, g.constant(std::move(r)));
    }
    if (use_dropout) x = dropout_apply(x, detail::dropout_mask(*rng, x.value().shape(), cfg.dropout));

    std::vector<std::size_t> order;  // sequences with at least one live token
    for (std::size_t b = 0; b < B; ++b)
      if (!rows[b].empty()) order.push_back(b);
    // Per-sequence outputs are concatenated in `order`, which keeps the packed row order.
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      auto key = [l](const std::string& n) { return detail::layer_key(l, n); };
      Var h = layer_norm(x, p.at(key("ln1.gain")), p.at(key("ln1.bias")));
      std::vector<Var> heads;
      for (std::size_t hd = 0; hd < nh; ++hd) {
        const std::string s = std::to_string(hd);
        Var q = matmul(h, p.at(key("attn.q" + s)));
        Var k = matmul(h, p.at(key("attn.k" + s)));
        Var v = matmul(h, p.at(key("attn.v" + s)));
        std::vector<Var> outs;
        outs.reserve(order.size());
        for (std::size_t b : order) {
          Var qb = gather_rows(q, rows[b]), kb = gather_rows(k, rows[b]), vb = gather_rows(v, rows[b]);
          outs.push_back(matmul(softmax_rows(scale(matmul(qb, kb, true), inv_sqrt)), vb));
        }
        heads.push_back(outs.size() == 1 ? outs[0] : concat(outs, 0));
      }
      Var attn = detail::linear(g, p, key("attn.out"), nh == 1 ? heads[0] : concat(heads, 1));
      if (use_dropout) attn = dropout_apply(attn, detail::dropout_mask(*rng, attn.value().shape(), cfg.dropout));
      x = add(x, attn);
      Var h2 = layer_norm(x, p.at(key("ln2.gain")), p.at(key("ln2.bias")));
      Var f = detail::linear(g, p, key("ffn2"), gelu(detail::linear(g, p, key("ffn1"), h2)));
      if (use_dropout) f = dropout_apply(f, detail::dropout_mask(*rng, f.value().shape(), cfg.dropout));
      x = add(x, f);
    }
    x = layer_norm(x, p.at("final_ln.gain"), p.at("final_ln.bias"));

    // Mean over live positions; an all-padding sequence pools to the zero vector.
    Tensor pool({B, N}, 0.0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t r : rows[b]) pool.at(b, r) = 1.0 / static_cast<double>(rows[b].size());
    pooled = matmul(g.constant(std::move(pool)), x);
  }

  Tensor feats({B, cfg.feature_dim});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < cfg.feature_dim; ++k) feats.at(b, k) = batch.features[b][k];
  Var fproj = gelu(detail::linear(g, p, "feat", g.constant(std::move(feats))));
  Var z = concat({pooled, fproj}, 1);

  auto head = [&](const char* name) {
    const std::string base = std::string("head.") + name;
    return detail::linear(g, p, base + ".l2", gelu(detail::linear(g, p, base + ".l1", z)));
  };
  HeadLogits out;
  out.y = head("y");
  if (cfg.joint) {
    out.t = head("t");
    out.y0 = head("y0");
    out.y1 = head("y1");
  }
  return out;
}

/// Training objective built in the graph:
///   joint:        L_y(factual(t), y) + outcome_weight * L_y(y_hat, y) + alpha * BCE(t_hat, t) + lambda * sum(theta^2)
///   outcome-only: L_y(y_hat, y) + lambda * sum(theta^2)
/// `sample_weights` (optional) scales each example's outcome-loss terms.
inline Var combined_loss_graph(const HeadLogits& h, const BoundParams& p, const ModelConfig& cfg, std::span<const int> y,
                               std::span<const int> t, std::span<const double> sample_weights = {}) {
  Graph& g = *h.y.graph;
  const std::size_t B = h.y.value().size();
  Var loss;
  if (cfg.joint) {
    if (t.size() != B) fail(Errc::shape_mismatch, "combined_loss: treatment vector length");
    Tensor tt({B, 1}), ut({B, 1});
    for (std::size_t i = 0; i < B; ++i) {
      if (t[i] != 0 && t[i] != 1) fail(Errc::invalid_config, "treatment indicators must be 0/1");
      tt[i] = t[i];
      ut[i] = 1 - t[i];
    }
    // Selecting logits row-wise is identical to t*y1 + (1-t)*y0 in probability space for binary t.
    Var fact = add(multiply(g.constant(std::move(tt)), h.y1), multiply(g.constant(std::move(ut)), h.y0));
    loss = binary_loss(fact, y, cfg.loss_kind, cfg.loss, sample_weights);
    if (cfg.outcome_weight > 0)
      loss = add(loss, scale(binary_loss(h.y, y, cfg.loss_kind, cfg.loss, sample_weights), cfg.outcome_weight));
    if (cfg.alpha > 0) loss = add(loss, scale(binary_loss(h.t, t, LossKind::weighted_bce, LossHyper{}), cfg.alpha));
  } else {
    loss = binary_loss(h.y, y, cfg.loss_kind, cfg.loss, sample_weights);
  }
  if (cfg.lambda > 0) {
    for (const auto& [_, v] : p) loss = add(loss, scale(sum_squares(v), cfg.lambda));
  }
  return loss;
}

/// Probability-space reference of the same objective with probabilities clipped to
/// [1e-7, 1 - 1e-7]; `l2` is sum(theta^2).
inline double combined_loss(const HeadOutputs& o, std::span<const int> y, std::span<const int> t, const ModelConfig& cfg,
                            double l2, std::span<const double> sample_weights = {}) {
  const std::size_t n = y.size();
  if (o.y_hat.size() != n) fail(Errc::shape_mismatch, "combined_loss: output length");
  auto w = [&](std::size_t i) { return sample_weights.empty() ? 1.0 : sample_weights[i]; };
  double ly = 0, ly_aux = 0, lt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (cfg.joint) {
      ly += w(i) * loss_fn(cfg.loss_kind, clip_prob(factual(t[i], o.y1_hat[i], o.y0_hat[i])), y[i], cfg.loss);
      ly_aux += w(i) * loss_fn(cfg.loss_kind, clip_prob(o.y_hat[i]), y[i], cfg.loss);
      lt += bce(o.t_hat[i], t[i]);
    } else {
      ly += w(i) * loss_fn(cfg.loss_kind, clip_prob(o.y_hat[i]), y[i], cfg.loss);
    }
  }
  const double nn = static_cast<double>(n);
  double L = ly / nn + cfg.lambda * l2;
  if (cfg.joint) L += cfg.outcome_weight * ly_aux / nn + cfg.alpha * lt / nn;
  if (!std::isfinite(L)) fail(Errc::non_finite, "combined_loss is not finite");
  return L;
}

inline double l2_norm_sq(const ModelParams& p) {
  double s = 0;
  for (const auto& [_, t] : p.tensors)
    for (double v : t.values()) s += v * v;
  return s;
}

inline std::vector<double> sigmoid_column(const Tensor& logits) {
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(logits[i]);
  return out;
}

/// Inference over encoded sequences in chunks; heads of an outcome-only model are
/// reported as copies of y_hat.
inline HeadOutputs predict(const ModelParams& mp, const std::vector<const EncodedSequence*>& seqs,
                           const std::vector<std::array<double, kFeatureDim>>& features, std::size_t chunk = 256) {
  HeadOutputs out;
  for (std::size_t start = 0; start < seqs.size(); start += chunk) {
    const std::size_t end = std::min(seqs.size(), start + chunk);
    Batch b;
    b.seqs.assign(seqs.begin() + start, seqs.begin() + end);
    b.features.assign(features.begin() + start, features.begin() + end);
    Graph g;
    const auto bound = bind(g, mp, false);
    const HeadLogits h = forward(g, bound, mp, b, false);
    const auto y = sigmoid_column(h.y.value());
    out.y_hat.insert(out.y_hat.end(), y.begin(), y.end());
    if (mp.config.joint) {
      for (auto [src, dst] : {std::pair{h.t, &out.t_hat}, std::pair{h.y0, &out.y0_hat}, std::pair{h.y1, &out.y1_hat}}) {
        const auto v = sigmoid_column(src.value());
        dst->insert(dst->end(), v.begin(), v.end());
      }
    } else {
      out.t_hat.insert(out.t_hat.end(), y.begin(), y.end());
      out.y0_hat.insert(out.y0_hat.end(), y.begin(), y.end());
      out.y1_hat.insert(out.y1_hat.end(), y.begin(), y.end());
    }
  }
  return out;
}

inline nlohmann::json checkpoint_to_json(const ModelParams& p) {
  nlohmann::json j;
  j["format"] = "akirisk-model";
  j["version"] = 1;
  j["config"] = to_json(p.config);
  j["vocab_size"] = p.vocab_size;
  j["scaler"] = {{"mean", p.scaler.mean}, {"sd", p.scaler.sd}};
  nlohmann::json tensors;
  for (const auto& [name, t] : p.tensors) tensors[name] = {{"shape", t.shape()}, {"values", t.data()}};
  j["params"] = std::move(tensors);
  return j;
}

/// Rejects a checkpoint whose config differs from `expected` when one is given.
inline ModelParams checkpoint_from_json(const nlohmann::json& j, const ModelConfig* expected = nullptr) {
  try {
    if (j.at("format").get<std::string>() != "akirisk-model" || j.at("version").get<int>() != 1)
      fail(Errc::schema_error, "not a version-1 model checkpoint");
    ModelParams p;
    p.config = model_config_from_json(j.at("config"));
    if (expected && to_json(*expected) != to_json(p.config))
      fail(Errc::invalid_config, "checkpoint config does not match the requested model config");
    p.vocab_size = j.at("vocab_size").get<std::size_t>();
    p.scaler.mean = j.at("scaler").at("mean").get<std::array<double, kFeatureDim>>();
    p.scaler.sd = j.at("scaler").at("sd").get<std::array<double, kFeatureDim>>();
    const ModelParams ref = init_params(p.config, p.vocab_size, 0);
    for (const auto& [name, t] : j.at("params").items()) {
      auto it = ref.tensors.find(name);
      if (it == ref.tensors.end()) fail(Errc::schema_error, "unexpected parameter '" + name + "'");
      Tensor value(t.at("shape").get<Shape>(), t.at("values").get<std::vector<double>>());
      if (value.shape() != it->second.shape()) fail(Errc::schema_error, "parameter '" + name + "' has the wrong shape");
      p.tensors.emplace(name, std::move(value));
    }
    if (p.tensors.size() != ref.tensors.size()) fail(Errc::schema_error, "checkpoint is missing parameters");
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema_error, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace akirisk
