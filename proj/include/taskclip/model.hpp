#pragma once

// Trainable model: vision/text adapters, global cross-attention over image
// tokens, the m-layer vision/text aligner, and the score function that turns
// affinity rows into per-box suitability scores.

#include <string>
#include <utility>
#include <vector>

#include "taskclip/attention.hpp"
#include "taskclip/rng.hpp"
#include "taskclip/tensor.hpp"

namespace taskclip {

struct ModelConfig {
  int d = 0;                 // embedding dim, fixed by the input data
  int d_hidden_adapter = 0;  // adapter bottleneck; 0 resolves to d/4
  int aligner_layers = 8;    // m
  int heads = 4;
  int d_prime = 256;         // score-function encoding dim
  double alpha = 0.3;        // vision adapter blend
  double beta_adapter = 0.3; // text adapter blend
  int ffn_dim = 0;           // aligner feed-forward width; 0 resolves to 4*d
  int n_word = 20;

  ModelConfig resolved() const {
    ModelConfig c = *this;
    if (c.d <= 0) throw ConfigError("model: embedding dim must be positive");
    if (c.d_hidden_adapter == 0) c.d_hidden_adapter = std::max(1, c.d / 4);
    if (c.ffn_dim == 0) c.ffn_dim = 4 * c.d;
    if (c.aligner_layers < 1) throw ConfigError("model: aligner needs >= 1 layer");
    if (c.heads < 1 || c.d % c.heads != 0) {
      throw ConfigError("model: d=" + std::to_string(c.d) +
                        " not divisible by heads=" + std::to_string(c.heads));
    }
    if (c.d_prime < 2 || c.d_prime % c.heads != 0) {
      throw ConfigError("model: d_prime=" + std::to_string(c.d_prime) +
                        " not divisible by heads=" + std::to_string(c.heads));
    }
    if (c.alpha < 0.0 || c.alpha > 1.0 || c.beta_adapter < 0.0 ||
        c.beta_adapter > 1.0) {
      throw ConfigError("model: adapter blends must lie in [0,1]");
    }
    if (c.n_word < 1) throw ConfigError("model: n_word must be >= 1");
    return c;
  }
};

template <class S>
struct LayerNormParams {
  Tensor<S> gain, bias;  // [1xN]
};

template <class S>
struct LinearParams {
  Tensor<S> w;  // [in x out]
  Tensor<S> b;  // [1 x out]
};

template <class S>
struct AdapterParams {
  Tensor<S> w1;  // [d x d_hidden]
  Tensor<S> w2;  // [d_hidden x d]
};

template <class S>
struct GlobalAttentionParams {
  AttentionParams<S> attn;
  LayerNormParams<S> ln_query, ln_memory;
};

template <class S>
struct AlignerLayerParams {
  AttentionParams<S> v_self, t_self, cross;
  LayerNormParams<S> ln_v, ln_t, ln_cross_q, ln_cross_m, ln_ffn;
  LinearParams<S> ffn1, ffn2;
};

template <class S>
struct ScoreFunctionParams {
  LinearParams<S> encoder;  // n_word -> d_prime
  AttentionParams<S> self_attn;
  LayerNormParams<S> ln_attn;
  LinearParams<S> head1;  // d_prime -> d_prime/2
  LinearParams<S> head2;  // d_prime/2 -> 1
};

template <class S>
struct ModelParams {
  ModelConfig config;
  AdapterParams<S> vision_adapter, text_adapter;
  GlobalAttentionParams<S> global_attn;
  std::vector<AlignerLayerParams<S>> aligner;
  ScoreFunctionParams<S> score_fn;
};

namespace detail {

// Residual-branch output weights start 10x smaller than the base scheme, so
// every residual block is near-identity at initialization and the embedding
// signal reaches the score function before training has shaped the blocks.
constexpr double kResidualScale = 0.1;

// Scaled-uniform init, gain 1/sqrt(fan_in); layer norms start as identity.
template <class S>
class ParamInit {
 public:
  explicit ParamInit(uint64_t seed) : rng_(seed) {}

  Tensor<S> weight(int in, int out, double gain = 1.0) {
    Tensor<S> t(in, out, true);
    double limit = gain / std::sqrt(static_cast<double>(in));
    for (auto& v : t.values()) {
      v = static_cast<S>(rng_.uniform(-limit, limit));
    }
    return t;
  }

  Tensor<S> zeros_row(int n) { return Tensor<S>(1, n, true); }

  AttentionParams<S> attention(int d) {
    return {weight(d, d), weight(d, d), weight(d, d),
            weight(d, d, kResidualScale)};
  }

  LayerNormParams<S> norm(int n) {
    LayerNormParams<S> p{Tensor<S>::filled(1, n, S(1)), Tensor<S>(1, n)};
    p.gain.set_requires_grad(true);
    p.bias.set_requires_grad(true);
    return p;
  }

  LinearParams<S> linear(int in, int out, double gain = 1.0) {
    return {weight(in, out, gain), zeros_row(out)};
  }

 private:
  Rng rng_;
};

}  // namespace detail

template <class S>
ModelParams<S> init_params(const ModelConfig& config, uint64_t seed) {
  ModelConfig cfg = config.resolved();
  detail::ParamInit<S> init(seed);
  ModelParams<S> p;
  p.config = cfg;
  p.vision_adapter = {init.weight(cfg.d, cfg.d_hidden_adapter),
                      init.weight(cfg.d_hidden_adapter, cfg.d)};
  p.text_adapter = {init.weight(cfg.d, cfg.d_hidden_adapter),
                    init.weight(cfg.d_hidden_adapter, cfg.d)};
  p.global_attn = {init.attention(cfg.d), init.norm(cfg.d), init.norm(cfg.d)};
  p.aligner.reserve(static_cast<size_t>(cfg.aligner_layers));
  for (int i = 0; i < cfg.aligner_layers; ++i) {
    AlignerLayerParams<S> layer;
    layer.v_self = init.attention(cfg.d);
    layer.t_self = init.attention(cfg.d);
    layer.cross = init.attention(cfg.d);
    layer.ln_v = init.norm(cfg.d);
    layer.ln_t = init.norm(cfg.d);
    layer.ln_cross_q = init.norm(cfg.d);
    layer.ln_cross_m = init.norm(cfg.d);
    layer.ln_ffn = init.norm(cfg.d);
    layer.ffn1 = init.linear(cfg.d, cfg.ffn_dim);
    layer.ffn2 = init.linear(cfg.ffn_dim, cfg.d);
    p.aligner.push_back(std::move(layer));
  }
  p.score_fn.encoder = init.linear(cfg.n_word, cfg.d_prime);
  p.score_fn.self_attn = init.attention(cfg.d_prime);
  p.score_fn.ln_attn = init.norm(cfg.d_prime);
  p.score_fn.head1 = init.linear(cfg.d_prime, cfg.d_prime / 2);
  p.score_fn.head2 = init.linear(cfg.d_prime / 2, 1);
  return p;
}

// Enumerates every trainable tensor under a stable name. Checkpoint layout
// and optimizer state both key off this order.
template <class S, class F>
void visit_params(ModelParams<S>& p, F&& f) {
  auto attn = [&](const std::string& prefix, AttentionParams<S>& a) {
    f(prefix + ".wq", a.wq);
    f(prefix + ".wk", a.wk);
    f(prefix + ".wv", a.wv);
    f(prefix + ".wo", a.wo);
  };
  auto norm = [&](const std::string& prefix, LayerNormParams<S>& n) {
    f(prefix + ".gain", n.gain);
    f(prefix + ".bias", n.bias);
  };
  auto linear = [&](const std::string& prefix, LinearParams<S>& l) {
    f(prefix + ".w", l.w);
    f(prefix + ".b", l.b);
  };
  f("adapter.vision.w1", p.vision_adapter.w1);
  f("adapter.vision.w2", p.vision_adapter.w2);
  f("adapter.text.w1", p.text_adapter.w1);
  f("adapter.text.w2", p.text_adapter.w2);
  attn("global_attn", p.global_attn.attn);
  norm("global_attn.ln_query", p.global_attn.ln_query);
  norm("global_attn.ln_memory", p.global_attn.ln_memory);
  for (size_t i = 0; i < p.aligner.size(); ++i) {
    std::string base = "aligner." + std::to_string(i);
    auto& layer = p.aligner[i];
    attn(base + ".v_self", layer.v_self);
    attn(base + ".t_self", layer.t_self);
    attn(base + ".cross", layer.cross);
    norm(base + ".ln_v", layer.ln_v);
    norm(base + ".ln_t", layer.ln_t);
    norm(base + ".ln_cross_q", layer.ln_cross_q);
    norm(base + ".ln_cross_m", layer.ln_cross_m);
    norm(base + ".ln_ffn", layer.ln_ffn);
    linear(base + ".ffn1", layer.ffn1);
    linear(base + ".ffn2", layer.ffn2);
  }
  linear("score.encoder", p.score_fn.encoder);
  attn("score.self_attn", p.score_fn.self_attn);
  norm("score.ln_attn", p.score_fn.ln_attn);
  linear("score.head1", p.score_fn.head1);
  linear("score.head2", p.score_fn.head2);
}

template <class S>
std::vector<std::pair<std::string, Tensor<S>>> named_params(ModelParams<S>& p) {
  std::vector<std::pair<std::string, Tensor<S>>> out;
  visit_params(p, [&](const std::string& name, Tensor<S>& t) {
    out.emplace_back(name, t);
  });
  return out;
}

template <class S>
void zero_grads(ModelParams<S>& p) {
  visit_params(p, [](const std::string&, Tensor<S>& t) { t.zero_grad(); });
}

// out = (1 - blend) * E + ReLU(E W1) W2
template <class S>
Tensor<S> adapter_forward(const Tensor<S>& e, const AdapterParams<S>& p,
                          double blend) {
  Tensor<S> hidden = relu(matmul(e, p.w1));
  return add(scale(e, 1.0 - blend), matmul(hidden, p.w2));
}

// Boxes attend to the image-level tokens; residual, pre-norm.
template <class S>
Tensor<S> global_attention(const Tensor<S>& boxes,
                           const Tensor<S>& global_tokens,
                           const GlobalAttentionParams<S>& p, int heads,
                           std::vector<Tensor<S>>* probs_out = nullptr) {
  Tensor<S> q = layer_norm(boxes, p.ln_query.gain, p.ln_query.bias);
  Tensor<S> m = layer_norm(global_tokens, p.ln_memory.gain, p.ln_memory.bias);
  return add(boxes, multi_head_attention(q, m, p.attn, heads, probs_out));
}

// One aligner layer: both streams self-attend, text cross-attends to vision
// and passes through the feed-forward; vision carries its self-attention
// result forward. Residual + pre-norm on every sublayer.
template <class S>
std::pair<Tensor<S>, Tensor<S>> aligner_layer(const Tensor<S>& v_in,
                                              const Tensor<S>& t_in,
                                              const AlignerLayerParams<S>& p,
                                              int heads) {
  Tensor<S> vn = layer_norm(v_in, p.ln_v.gain, p.ln_v.bias);
  Tensor<S> v = add(v_in, multi_head_attention(vn, vn, p.v_self, heads));

  Tensor<S> tn = layer_norm(t_in, p.ln_t.gain, p.ln_t.bias);
  Tensor<S> t = add(t_in, multi_head_attention(tn, tn, p.t_self, heads));

  Tensor<S> tq = layer_norm(t, p.ln_cross_q.gain, p.ln_cross_q.bias);
  Tensor<S> vm = layer_norm(v, p.ln_cross_m.gain, p.ln_cross_m.bias);
  t = add(t, multi_head_attention(tq, vm, p.cross, heads));

  Tensor<S> tf = layer_norm(t, p.ln_ffn.gain, p.ln_ffn.bias);
  Tensor<S> h = relu(add_bias(matmul(tf, p.ffn1.w), p.ffn1.b));
  t = add(t, add_bias(matmul(h, p.ffn2.w), p.ffn2.b));
  return {v, t};
}

// Cosine affinity: rows L2-normalized, A[i][j] = <v_i, t_j>. Values are
// clamped to [-1,1] against rounding spill; the clamp passes gradient
// straight through.
template <class S>
Tensor<S> compute_affinity(const Tensor<S>& v, const Tensor<S>& t) {
  Tensor<S> a =
      matmul(l2_normalize_rows(v), transpose(l2_normalize_rows(t)));
  for (auto& x : a.values()) x = std::clamp(x, S(-1), S(1));
  return a;
}

// Adapters -> global attention (vision only) -> m aligner layers -> affinity.
template <class S>
Tensor<S> recalibrate(const Tensor<S>& box_embeddings,
                      const Tensor<S>& word_embeddings,
                      const Tensor<S>& global_tokens,
                      const ModelParams<S>& params) {
  const ModelConfig& cfg = params.config;
  Tensor<S> v = adapter_forward(box_embeddings, params.vision_adapter, cfg.alpha);
  Tensor<S> t = adapter_forward(word_embeddings, params.text_adapter, cfg.beta_adapter);
  v = global_attention(v, global_tokens, params.global_attn, cfg.heads);
  for (const auto& layer : params.aligner) {
    std::tie(v, t) = aligner_layer(v, t, layer, cfg.heads);
  }
  return compute_affinity(v, t);
}

// Affinity rows -> encoded box tokens -> self-attention over boxes ->
// two-layer regression head -> sigmoid. Returns a [1 x N_bbox] row.
template <class S>
Tensor<S> score_forward(const Tensor<S>& affinity,
                        const ScoreFunctionParams<S>& p, int heads) {
  Tensor<S> h =
      relu(add_bias(matmul(affinity, p.encoder.w), p.encoder.b));
  Tensor<S> hn = layer_norm(h, p.ln_attn.gain, p.ln_attn.bias);
  h = add(h, multi_head_attention(hn, hn, p.self_attn, heads));
  Tensor<S> r = relu(add_bias(matmul(h, p.head1.w), p.head1.b));
  Tensor<S> s = sigmoid(add_bias(matmul(r, p.head2.w), p.head2.b));
  return transpose(s);
}

}  // namespace taskclip
