#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "keap/data.hpp"
#include "keap/errors.hpp"
#include "keap/masking.hpp"
#include "keap/rng.hpp"
#include "keap/tensor.hpp"
#include "keap/vocab.hpp"

namespace keap {

// Knowledge-exploitation strategies: cascaded cross-attention (relation then
// attribute), the parallel ablation, and the plain auto-encoder ablation.
enum class Variant { kCascaded, kParallel, kNoPik };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kCascaded: return "cascaded";
    case Variant::kParallel: return "parallel";
    case Variant::kNoPik: return "no_pik";
  }
  throw ConfigError("unknown variant enum");
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "cascaded") return Variant::kCascaded;
  if (s == "parallel") return Variant::kParallel;
  if (s == "no_pik") return Variant::kNoPik;
  throw ConfigError("unknown variant '" + s + "' (expected cascaded|parallel|no_pik)");
}

struct ModelConfig {
  std::size_t hidden_dim = 64;
  std::size_t encoder_layers = 2;
  std::size_t pik_blocks = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t knowledge_layers = 2;
  std::size_t residue_vocab = Vocabulary::size();
  std::size_t text_vocab = 64;
  std::size_t max_protein_len = 128;
  std::size_t max_relation_len = 16;
  std::size_t max_attribute_len = 64;
  Variant variant = Variant::kCascaded;
  bool triplet_match = false;
  double mask_ratio = 0.2;
  double match_lambda = 1.0;
  double match_swap_fraction = 0.5;

  std::size_t max_knowledge_len() const { return std::max(max_relation_len, max_attribute_len); }

  void validate() const {
    if (hidden_dim == 0 || heads == 0 || hidden_dim % heads != 0)
      throw ConfigError("hidden dim " + std::to_string(hidden_dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
    if (variant != Variant::kNoPik && pik_blocks < 1)
      throw ConfigError("decoder needs at least one block");
    if (residue_vocab < Vocabulary::size()) throw ConfigError("residue vocab too small");
    if (text_vocab < special::kCount) throw ConfigError("text vocab too small");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask ratio outside (0,1)");
  }
};

// Named weights. "encoder." / "decoder." prefixes are the trainable groups;
// "knowledge." is the frozen language encoder and never receives gradients.
template <typename T>
struct Parameters {
  std::map<std::string, Tensor<T>> named;

  Tensor<T>& at(const std::string& name) {
    auto it = named.find(name);
    if (it == named.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    return const_cast<Parameters*>(this)->at(name);
  }

  std::vector<std::string> learnable_names() const {
    std::vector<std::string> out;
    for (const auto& [name, t] : named)
      if (t.requires_grad()) out.push_back(name);
    return out;
  }

  void zero_grad() {
    for (auto& [name, t] : named) t.zero_grad();
  }

  std::size_t total_learnable() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named)
      if (t.requires_grad()) n += t.numel();
    return n;
  }

  template <typename U>
  Parameters<U> cast() const {
    Parameters<U> out;
    for (const auto& [name, t] : named) {
      std::vector<U> data(t.data().size());
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<U>(t.data()[i]);
      out.named.emplace(name, Tensor<U>::from_data(t.shape(), std::move(data), t.requires_grad()));
    }
    return out;
  }
};

namespace detail {

template <typename T>
void add_weight(Parameters<T>& p, const std::string& name, Shape shape, std::uint64_t seed,
                bool learnable) {
  Rng rng(derive_seed(seed, "init/" + name));
  Tensor<T> t = Tensor<T>::zeros(std::move(shape), learnable);
  for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.02));
  p.named.emplace(name, std::move(t));
}

template <typename T>
void add_norm(Parameters<T>& p, const std::string& prefix, std::size_t d, bool learnable) {
  p.named.emplace(prefix + ".gamma", Tensor<T>::full({d}, T(1), learnable));
  p.named.emplace(prefix + ".beta", Tensor<T>::zeros({d}, learnable));
}

template <typename T>
void add_zeros(Parameters<T>& p, const std::string& name, Shape shape, bool learnable) {
  p.named.emplace(name, Tensor<T>::zeros(std::move(shape), learnable));
}

// pre-norm self-attention layer: ln1, q/k/v/out projections, ln2, mlp
template <typename T>
void add_transformer_layer(Parameters<T>& p, const std::string& prefix, const ModelConfig& cfg,
                           std::uint64_t seed, bool learnable) {
  const std::size_t d = cfg.hidden_dim;
  add_norm(p, prefix + ".ln1", d, learnable);
  for (const char* w : {"wq", "wk", "wv", "wo"})
    add_weight(p, prefix + ".attn." + std::string(w), {d, d}, seed, learnable);
  add_norm(p, prefix + ".ln2", d, learnable);
  add_weight(p, prefix + ".mlp.w1", {d, cfg.ffn_dim}, seed, learnable);
  add_zeros(p, prefix + ".mlp.b1", {cfg.ffn_dim}, learnable);
  add_weight(p, prefix + ".mlp.w2", {cfg.ffn_dim, d}, seed, learnable);
  add_zeros(p, prefix + ".mlp.b2", {d}, learnable);
}

}  // namespace detail

template <typename T>
Parameters<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = cfg.hidden_dim;
  Parameters<T> p;

  detail::add_weight(p, "encoder.tok_emb", {cfg.residue_vocab, d}, seed, true);
  detail::add_weight(p, "encoder.pos_emb", {cfg.max_protein_len, d}, seed, true);
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i)
    detail::add_transformer_layer(p, "encoder.layer" + std::to_string(i), cfg, seed, true);

  detail::add_weight(p, "knowledge.tok_emb", {cfg.text_vocab, d}, seed, false);
  detail::add_weight(p, "knowledge.pos_emb", {cfg.max_knowledge_len(), d}, seed, false);
  for (std::size_t i = 0; i < cfg.knowledge_layers; ++i)
    detail::add_transformer_layer(p, "knowledge.layer" + std::to_string(i), cfg, seed, false);

  for (std::size_t i = 0; i < cfg.pik_blocks; ++i) {
    const std::string prefix = "decoder.block" + std::to_string(i);
    if (cfg.variant == Variant::kNoPik) {
      detail::add_transformer_layer(p, prefix, cfg, seed, true);
      continue;
    }
    detail::add_norm(p, prefix + ".ln1", d, true);
    detail::add_norm(p, prefix + ".ln2", d, true);
    detail::add_norm(p, prefix + ".ln3", d, true);
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      detail::add_weight(p, prefix + ".rel." + std::string(w), {d, d}, seed, true);
      detail::add_weight(p, prefix + ".attr." + std::string(w), {d, d}, seed, true);
    }
    detail::add_weight(p, prefix + ".mlp.w1", {d, cfg.ffn_dim}, seed, true);
    detail::add_zeros(p, prefix + ".mlp.b1", {cfg.ffn_dim}, true);
    detail::add_weight(p, prefix + ".mlp.w2", {cfg.ffn_dim, d}, seed, true);
    detail::add_zeros(p, prefix + ".mlp.b2", {d}, true);
  }

  detail::add_weight(p, "decoder.mlm.w", {d, Vocabulary::kNumResidues}, seed, true);
  detail::add_zeros(p, "decoder.mlm.b", {Vocabulary::kNumResidues}, true);
  if (cfg.triplet_match) {
    detail::add_weight(p, "decoder.match.w", {d, 1}, seed, true);
    detail::add_zeros(p, "decoder.match.b", {1}, true);
  }
  return p;
}

// ---------------------------------------------------------------------------
// forward pieces
// ---------------------------------------------------------------------------

namespace detail {

// Parameter-free standardization for the frozen knowledge streams; the
// learnable affine would be absorbed by the K/V projections anyway.
template <typename T>
Tensor<T> plain_norm(const Tensor<T>& x) {
  const std::size_t d = x.shape().back();
  return layer_norm(x, Tensor<T>::full({d}, T(1)), Tensor<T>::zeros({d}));
}

template <typename T>
Tensor<T> norm_with(const Parameters<T>& p, const std::string& prefix, const Tensor<T>& x) {
  return layer_norm(x, p.at(prefix + ".gamma"), p.at(prefix + ".beta"));
}

template <typename T>
Tensor<T> mlp_with(const Parameters<T>& p, const std::string& prefix, const Tensor<T>& x) {
  Tensor<T> h = gelu(add_rowwise(matmul(x, p.at(prefix + ".w1")), p.at(prefix + ".b1")));
  return add_rowwise(matmul(h, p.at(prefix + ".w2")), p.at(prefix + ".b2"));
}

template <typename T>
Tensor<T> self_attention_with(const Parameters<T>& p, const std::string& prefix, const Tensor<T>& x,
                              const BoolMat& valid, std::size_t heads) {
  Tensor<T> q = matmul(x, p.at(prefix + ".wq"));
  Tensor<T> k = matmul(x, p.at(prefix + ".wk"));
  Tensor<T> v = matmul(x, p.at(prefix + ".wv"));
  return multi_head_attention(q, k, v, valid, heads, p.at(prefix + ".wo"));
}

template <typename T>
Tensor<T> transformer_layer(const Parameters<T>& p, const std::string& prefix, const Tensor<T>& x,
                            const BoolMat& valid, std::size_t heads) {
  Tensor<T> y = add(x, self_attention_with(p, prefix + ".attn", norm_with(p, prefix + ".ln1", x),
                                           valid, heads));
  return add(y, mlp_with(p, prefix + ".mlp", norm_with(p, prefix + ".ln2", y)));
}

template <typename T>
Tensor<T> embed_with_positions(const Parameters<T>& p, const std::string& tok_name,
                               const std::string& pos_name, const IdMat& ids) {
  const Tensor<T>& pos_table = p.at(pos_name);
  if (ids.cols > pos_table.shape()[0])
    throw ContractError("sequence length " + std::to_string(ids.cols) +
                        " exceeds configured maximum " + std::to_string(pos_table.shape()[0]));
  IdMat pos(ids.rows, ids.cols);
  for (std::size_t r = 0; r < ids.rows; ++r)
    for (std::size_t c = 0; c < ids.cols; ++c) pos.at(r, c) = static_cast<std::int32_t>(c);
  return add(embedding(p.at(tok_name), ids), embedding(pos_table, pos));
}

}  // namespace detail

// Token + positional embedding followed by pre-norm self-attention layers.
template <typename T>
Tensor<T> encode_protein(const Parameters<T>& p, const ModelConfig& cfg, const IdMat& ids,
                         const BoolMat& pad_mask) {
  Tensor<T> x = detail::embed_with_positions(p, "encoder.tok_emb", "encoder.pos_emb", ids);
  const BoolMat valid = TokenBatch::invert(pad_mask);
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i)
    x = detail::transformer_layer(p, "encoder.layer" + std::to_string(i), x, valid, cfg.heads);
  return x;
}

// Frozen language encoder shared by the relation and attribute streams.
template <typename T>
Tensor<T> encode_knowledge(const Parameters<T>& p, const ModelConfig& cfg, const IdMat& ids,
                           const BoolMat& pad_mask) {
  Tensor<T> x = detail::embed_with_positions(p, "knowledge.tok_emb", "knowledge.pos_emb", ids);
  const BoolMat valid = TokenBatch::invert(pad_mask);
  for (std::size_t i = 0; i < cfg.knowledge_layers; ++i)
    x = detail::transformer_layer(p, "knowledge.layer" + std::to_string(i), x, valid, cfg.heads);
  return x;
}

// One cascaded protein-knowledge block: cross-attend the relation stream,
// fold it in, cross-attend the attribute stream from the result, then a
// residual MLP. Attention outputs add onto the normalized inputs.
template <typename T>
Tensor<T> pik_block(const Parameters<T>& p, const ModelConfig& cfg, const std::string& prefix,
                    const Tensor<T>& f_p, const Tensor<T>& f_r, const Tensor<T>& f_a,
                    const BoolMat& rel_valid, const BoolMat& attr_valid) {
  Tensor<T> np = detail::norm_with(p, prefix + ".ln1", f_p);
  Tensor<T> nr = detail::plain_norm(f_r);
  Tensor<T> s = multi_head_attention(
      matmul(np, p.at(prefix + ".rel.wq")), matmul(nr, p.at(prefix + ".rel.wk")),
      matmul(nr, p.at(prefix + ".rel.wv")), rel_valid, cfg.heads, p.at(prefix + ".rel.wo"));
  Tensor<T> f_hat = add(np, s);

  Tensor<T> nph = detail::norm_with(p, prefix + ".ln2", f_hat);
  Tensor<T> na = detail::plain_norm(f_a);
  Tensor<T> s_hat = multi_head_attention(
      matmul(nph, p.at(prefix + ".attr.wq")), matmul(na, p.at(prefix + ".attr.wk")),
      matmul(na, p.at(prefix + ".attr.wv")), attr_valid, cfg.heads, p.at(prefix + ".attr.wo"));
  Tensor<T> f_bar = add(nph, s_hat);

  return add(f_bar, detail::mlp_with(p, prefix + ".mlp",
                                     detail::norm_with(p, prefix + ".ln3", f_bar)));
}

// Parallel ablation: both attention streams query the normalized protein
// representation directly and their outputs are summed.
template <typename T>
Tensor<T> pik_block_parallel(const Parameters<T>& p, const ModelConfig& cfg,
                             const std::string& prefix, const Tensor<T>& f_p, const Tensor<T>& f_r,
                             const Tensor<T>& f_a, const BoolMat& rel_valid,
                             const BoolMat& attr_valid) {
  Tensor<T> np = detail::norm_with(p, prefix + ".ln1", f_p);
  Tensor<T> nr = detail::plain_norm(f_r);
  Tensor<T> s_r = multi_head_attention(
      matmul(np, p.at(prefix + ".rel.wq")), matmul(nr, p.at(prefix + ".rel.wk")),
      matmul(nr, p.at(prefix + ".rel.wv")), rel_valid, cfg.heads, p.at(prefix + ".rel.wo"));

  Tensor<T> np2 = detail::norm_with(p, prefix + ".ln2", f_p);
  Tensor<T> na = detail::plain_norm(f_a);
  Tensor<T> s_a = multi_head_attention(
      matmul(np2, p.at(prefix + ".attr.wq")), matmul(na, p.at(prefix + ".attr.wk")),
      matmul(na, p.at(prefix + ".attr.wv")), attr_valid, cfg.heads, p.at(prefix + ".attr.wo"));

  Tensor<T> f_bar = add(add(np, s_r), s_a);
  return add(f_bar, detail::mlp_with(p, prefix + ".mlp",
                                     detail::norm_with(p, prefix + ".ln3", f_bar)));
}

// N decoder blocks over the encoder output. no_pik ignores the knowledge
// streams entirely and runs plain self-attention blocks.
template <typename T>
Tensor<T> decode(const Parameters<T>& p, const ModelConfig& cfg, const Tensor<T>& f_p0,
                 const Tensor<T>& f_r, const Tensor<T>& f_a, const BoolMat& protein_valid,
                 const BoolMat& rel_valid, const BoolMat& attr_valid) {
  Tensor<T> x = f_p0;
  for (std::size_t i = 0; i < cfg.pik_blocks; ++i) {
    const std::string prefix = "decoder.block" + std::to_string(i);
    switch (cfg.variant) {
      case Variant::kCascaded:
        x = pik_block(p, cfg, prefix, x, f_r, f_a, rel_valid, attr_valid);
        break;
      case Variant::kParallel:
        x = pik_block_parallel(p, cfg, prefix, x, f_r, f_a, rel_valid, attr_valid);
        break;
      case Variant::kNoPik:
        x = detail::transformer_layer(p, prefix, x, protein_valid, cfg.heads);
        break;
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// heads
// ---------------------------------------------------------------------------

// [B,Lp,D] -> [B*Lp, residue classes]
template <typename T>
Tensor<T> mlm_logits(const Parameters<T>& p, const Tensor<T>& f_pn) {
  if (f_pn.dim() != 3) throw ShapeError("mlm_logits: need [B,L,D], got " + shape_str(f_pn.shape()));
  const std::size_t b = f_pn.shape()[0], l = f_pn.shape()[1], d = f_pn.shape()[2];
  Tensor<T> flat = reshape(f_pn, {b * l, d});
  return add_rowwise(matmul(flat, p.at("decoder.mlm.w")), p.at("decoder.mlm.b"));
}

// Mean cross-entropy over the selected positions; labels hold original token
// ids (or -1), mapped to residue classes here.
template <typename T>
Tensor<T> mlm_loss(const Parameters<T>& p, const Tensor<T>& f_pn, const IdMat& labels) {
  Tensor<T> logits = mlm_logits(p, f_pn);
  std::vector<std::int32_t> classes(labels.v.size(), MaskedBatch::kIgnoreLabel);
  for (std::size_t i = 0; i < labels.v.size(); ++i)
    if (labels.v[i] != MaskedBatch::kIgnoreLabel) classes[i] = Vocabulary::residue_class(labels.v[i]);
  return cross_entropy_ignore(logits, classes, MaskedBatch::kIgnoreLabel);
}

// Fraction of selected positions whose argmax logit matches the label.
template <typename T>
double masked_accuracy(const Parameters<T>& p, const Tensor<T>& f_pn, const IdMat& labels) {
  Tensor<T> logits = mlm_logits(p, f_pn);
  const std::size_t c = logits.shape()[1];
  std::size_t hits = 0, total = 0;
  for (std::size_t r = 0; r < labels.v.size(); ++r) {
    if (labels.v[r] == MaskedBatch::kIgnoreLabel) continue;
    const T* row = logits.data().data() + r * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    ++total;
    if (static_cast<std::int32_t>(best) == Vocabulary::residue_class(labels.v[r])) ++hits;
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

template <typename T>
Tensor<T> triplet_match_logits(const Parameters<T>& p, const Tensor<T>& pooled) {
  return add_rowwise(matmul(pooled, p.at("decoder.match.w")), p.at("decoder.match.b"));
}

// Binary cross-entropy of the match head over mean-pooled decoder outputs.
template <typename T>
Tensor<T> triplet_match_loss(const Parameters<T>& p, const Tensor<T>& pooled,
                             const std::vector<std::uint8_t>& match_labels) {
  Tensor<T> logits = triplet_match_logits(p, pooled);
  std::vector<T> targets(match_labels.size());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = match_labels[i] ? T(1) : T(0);
  return bce_with_logits(reshape(logits, {logits.numel()}), targets);
}

}  // namespace keap
