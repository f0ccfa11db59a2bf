#pragma once

// Finite-difference verification of every trainable block and of the full
// pipeline loss, in 64-bit. Shared between the CLI and the acceptance suite.

#include <string>
#include <vector>

#include "taskclip/model.hpp"
#include "taskclip/rng.hpp"

namespace taskclip {

struct BlockCheck {
  std::string name;
  double rel_err = 0.0;
  double tolerance = 0.0;
  bool passed() const { return rel_err <= tolerance; }
};

namespace detail {

template <class F>
Tensor<double> random_matrix(int rows, int cols, Rng& rng, F&& gen) {
  Tensor<double> t(rows, cols);
  for (auto& v : t.values()) v = gen(rng);
  return t;
}

inline Tensor<double> random_input(int rows, int cols, Rng& rng) {
  return random_matrix(rows, cols, rng,
                       [](Rng& r) { return r.uniform(-1.0, 1.0); });
}

template <class P>
std::vector<Tensor<double>> collect(P& params) {
  std::vector<Tensor<double>> out;
  visit_params(params, [&](const std::string&, Tensor<double>& t) {
    out.push_back(t);
  });
  return out;
}

}  // namespace detail

// Per-block checks at tolerance `block_tol`, full pipeline at `e2e_tol`.
inline std::vector<BlockCheck> run_gradcheck_suite(int d = 16, int heads = 2,
                                                   int n_word = 20,
                                                   uint64_t seed = 11,
                                                   double block_tol = 1e-5,
                                                   double e2e_tol = 1e-4) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.heads = heads;
  cfg.n_word = n_word;
  cfg.aligner_layers = 2;
  cfg.d_prime = d;
  cfg.ffn_dim = 2 * d;
  cfg = cfg.resolved();

  Rng rng(seed);
  std::vector<BlockCheck> checks;
  const int n_box = 5, n_global = 3;

  {
    ModelParams<double> p = init_params<double>(cfg, seed + 1);
    Tensor<double> e = detail::random_input(n_box, cfg.d, rng);
    auto f = [&] {
      return sum_all(adapter_forward(e, p.vision_adapter, cfg.alpha));
    };
    double err = grad_check(f, {p.vision_adapter.w1, p.vision_adapter.w2});
    checks.push_back({"adapter", err, block_tol});
  }
  {
    ModelParams<double> p = init_params<double>(cfg, seed + 2);
    Tensor<double> boxes = detail::random_input(n_box, cfg.d, rng);
    Tensor<double> tokens = detail::random_input(n_global, cfg.d, rng);
    auto f = [&] {
      return sum_all(global_attention(boxes, tokens, p.global_attn, cfg.heads));
    };
    auto& ga = p.global_attn;
    double err = grad_check(
        f, {ga.attn.wq, ga.attn.wk, ga.attn.wv, ga.attn.wo, ga.ln_query.gain,
            ga.ln_query.bias, ga.ln_memory.gain, ga.ln_memory.bias});
    checks.push_back({"global_attention", err, block_tol});
  }
  {
    ModelParams<double> p = init_params<double>(cfg, seed + 3);
    Tensor<double> v = detail::random_input(n_box, cfg.d, rng);
    Tensor<double> t = detail::random_input(cfg.n_word, cfg.d, rng);
    auto f = [&] {
      auto [vo, to] = aligner_layer(v, t, p.aligner[0], cfg.heads);
      return sum_all(concat_rows(vo, to));
    };
    std::vector<Tensor<double>> params;
    auto push_attn = [&](AttentionParams<double>& a) {
      params.insert(params.end(), {a.wq, a.wk, a.wv, a.wo});
    };
    auto push_norm = [&](LayerNormParams<double>& n) {
      params.insert(params.end(), {n.gain, n.bias});
    };
    auto& layer = p.aligner[0];
    push_attn(layer.v_self);
    push_attn(layer.t_self);
    push_attn(layer.cross);
    push_norm(layer.ln_v);
    push_norm(layer.ln_t);
    push_norm(layer.ln_cross_q);
    push_norm(layer.ln_cross_m);
    push_norm(layer.ln_ffn);
    params.insert(params.end(),
                  {layer.ffn1.w, layer.ffn1.b, layer.ffn2.w, layer.ffn2.b});
    double err = grad_check(f, params);
    checks.push_back({"aligner_layer", err, block_tol});
  }
  {
    ModelParams<double> p = init_params<double>(cfg, seed + 4);
    Tensor<double> a = detail::random_input(n_box, cfg.n_word, rng);
    auto f = [&] {
      return sum_all(score_forward(a, p.score_fn, cfg.heads));
    };
    auto& sf = p.score_fn;
    double err = grad_check(
        f, {sf.encoder.w, sf.encoder.b, sf.self_attn.wq, sf.self_attn.wk,
            sf.self_attn.wv, sf.self_attn.wo, sf.ln_attn.gain, sf.ln_attn.bias,
            sf.head1.w, sf.head1.b, sf.head2.w, sf.head2.b});
    checks.push_back({"score_head", err, block_tol});
  }
  {
    ModelParams<double> p = init_params<double>(cfg, seed + 5);
    Tensor<double> boxes = detail::random_input(n_box, cfg.d, rng);
    Tensor<double> words = detail::random_input(cfg.n_word, cfg.d, rng);
    Tensor<double> tokens = detail::random_input(n_global, cfg.d, rng);
    Tensor<double> target = detail::random_matrix(
        1, n_box, rng, [](Rng& r) { return r.uniform() < 0.5 ? 0.0 : 1.0; });
    auto f = [&] {
      Tensor<double> affinity = recalibrate(boxes, words, tokens, p);
      Tensor<double> scores = score_forward(affinity, p.score_fn, cfg.heads);
      return mse_loss(scores, target);
    };
    double err = grad_check(f, detail::collect(p));
    checks.push_back({"full_pipeline", err, e2e_tol});
  }
  return checks;
}

}  // namespace taskclip
