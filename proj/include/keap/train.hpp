#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "keap/data.hpp"
#include "keap/masking.hpp"
#include "keap/model.hpp"
#include "keap/rng.hpp"
#include "keap/tensor.hpp"

namespace keap {

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  double peak_lr = 1e-4;
  double warmup_ratio = 0.08;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 0;  // 0 = only the final checkpoint
  std::size_t eval_interval = 0;        // 0 = never evaluate during training
  std::size_t eval_triplets = 256;
  double stop_at_accuracy = 0.0;        // 0 = no early stop

  void validate() const {
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0))
      throw ConfigError("warmup ratio outside [0,1)");
    if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (steps < 1) throw ConfigError("steps must be >= 1");
  }
};

// Linear ramp from 0 to peak over the warmup steps, then linear decay to 0.
inline double lr_at(std::size_t step, std::size_t total_steps, double warmup_ratio, double peak) {
  if (step > total_steps) throw ContractError("lr_at: step beyond total steps");
  const auto warmup = static_cast<std::size_t>(warmup_ratio * static_cast<double>(total_steps));
  if (warmup > 0 && step <= warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return peak;
  return peak * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

template <typename T>
struct AdamSlots {
  std::vector<T> m;
  std::vector<T> v;
};

template <typename T>
struct TrainState {
  std::size_t step = 0;
  ModelConfig model_config;
  Parameters<T> params;
  std::map<std::string, AdamSlots<T>> moments;  // learnable tensors only
  Rng loop_rng;

  static TrainState init(const ModelConfig& cfg, std::uint64_t seed) {
    TrainState s;
    s.model_config = cfg;
    s.params = init_parameters<T>(cfg, seed);
    s.loop_rng = Rng(derive_seed(seed, "train-loop"));
    for (const auto& name : s.params.learnable_names()) {
      AdamSlots<T> slots;
      slots.m.assign(s.params.at(name).numel(), T(0));
      slots.v.assign(s.params.at(name).numel(), T(0));
      s.moments.emplace(name, std::move(slots));
    }
    return s;
  }
};

// Scales all learnable gradients so the global norm is at most clip_norm;
// returns the pre-clip norm.
template <typename T>
double clip_gradients(Parameters<T>& params, double clip_norm) {
  double sq = 0.0;
  for (const auto& name : params.learnable_names())
    for (const T g : params.at(name).grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > clip_norm && norm > 0.0) {
    const T factor = static_cast<T>(clip_norm / norm);
    for (const auto& name : params.learnable_names())
      for (T& g : params.at(name).grad()) g *= factor;
  }
  return norm;
}

// Decoupled-weight-decay Adam with bias correction; step_t is 1-based.
// Frozen tensors have no slots and are never touched.
template <typename T>
void adamw_step(TrainState<T>& state, std::size_t step_t, double lr, double beta1, double beta2,
                double eps, double weight_decay) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_t));
  for (auto& [name, slots] : state.moments) {
    Tensor<T>& param = state.params.at(name);
    const std::vector<T>& grad = param.grad();
    if (grad.size() != param.numel())
      throw ContractError("adamw: gradient/parameter size mismatch for '" + name + "'");
    auto& data = param.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      const double m = beta1 * static_cast<double>(slots.m[i]) + (1.0 - beta1) * g;
      const double v = beta2 * static_cast<double>(slots.v[i]) + (1.0 - beta2) * g * g;
      slots.m[i] = static_cast<T>(m);
      slots.v[i] = static_cast<T>(v);
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      double p = static_cast<double>(data[i]);
      p -= lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * p);
      data[i] = static_cast<T>(p);
    }
  }
}

struct TraceRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> match_loss;
  std::optional<double> accuracy;   // over MASK-corrupted eval positions
  std::optional<double> eval_loss;  // ditto
};

template <typename T>
struct TrainResult {
  TrainState<T> state;
  std::vector<TraceRow> trace;
  bool stopped_early = false;
};

// Full pretraining forward for one masked batch: encode, decode, MLM loss,
// plus the optional triplet-match term.
template <typename T>
struct PretrainLosses {
  Tensor<T> total;
  double mlm = 0.0;
  std::optional<double> match;
};

template <typename T>
PretrainLosses<T> pretrain_losses(const Parameters<T>& params, const ModelConfig& cfg,
                                  const MaskedBatch& mb,
                                  const std::vector<std::uint8_t>* match_labels = nullptr) {
  const BoolMat protein_valid = TokenBatch::invert(mb.protein_pad);
  const BoolMat rel_valid = TokenBatch::invert(mb.relation_pad);
  const BoolMat attr_valid = TokenBatch::invert(mb.attribute_pad);
  Tensor<T> f_p0 = encode_protein(params, cfg, mb.corrupted_protein, mb.protein_pad);
  // no_pik ignores the knowledge streams entirely, so skip encoding them
  Tensor<T> f_r, f_a;
  if (cfg.variant != Variant::kNoPik) {
    f_r = encode_knowledge(params, cfg, mb.relation, mb.relation_pad);
    f_a = encode_knowledge(params, cfg, mb.attribute, mb.attribute_pad);
  }
  Tensor<T> f_pn = decode(params, cfg, f_p0, f_r, f_a, protein_valid, rel_valid, attr_valid);
  PretrainLosses<T> out;
  Tensor<T> mlm = mlm_loss(params, f_pn, mb.labels);
  out.mlm = static_cast<double>(mlm.item());
  if (match_labels) {
    Tensor<T> pooled = mean_over_valid(f_pn, protein_valid);
    Tensor<T> match = triplet_match_loss(params, pooled, *match_labels);
    out.match = static_cast<double>(match.item());
    out.total = add(mlm, scale(match, static_cast<T>(cfg.match_lambda)));
  } else {
    out.total = mlm;
  }
  return out;
}

// Forward-only evaluation over MASK-corrupted positions. Positions kept or
// randomly replaced by the corruption scheme still carry the original token
// and would leak label information into the metric, so only tokens that the
// model actually sees as MASK count here; without knowledge they are
// unpredictable on i.i.d. sequences (chance 1/20, loss ln 20).
struct MaskedEval {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t positions = 0;
};

template <typename T>
MaskedEval eval_masked_positions(const Parameters<T>& params, const ModelConfig& cfg,
                                 const KnowledgeGraph& kg, const TextVocabulary& text_vocab,
                                 const TokenizerConfig& tok_cfg, std::size_t n_triplets,
                                 std::size_t batch_size, std::uint64_t seed) {
  MaskedEval out;
  std::size_t hits = 0;
  double nll = 0.0;
  const std::size_t n = std::min(n_triplets, kg.size());
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(start + batch_size, n); ++i) idx.push_back(i);
    TokenBatch batch = make_token_batch(kg, idx, text_vocab, tok_cfg);
    MaskedBatch mb = apply_masking(batch, cfg.mask_ratio, derive_seed(seed, "eval-mask", start));
    const BoolMat protein_valid = TokenBatch::invert(mb.protein_pad);
    Tensor<T> f_p0 = encode_protein(params, cfg, mb.corrupted_protein, mb.protein_pad);
    Tensor<T> f_r, f_a;
    if (cfg.variant != Variant::kNoPik) {
      f_r = encode_knowledge(params, cfg, mb.relation, mb.relation_pad);
      f_a = encode_knowledge(params, cfg, mb.attribute, mb.attribute_pad);
    }
    Tensor<T> f_pn = decode(params, cfg, f_p0, f_r, f_a, protein_valid,
                            TokenBatch::invert(mb.relation_pad),
                            TokenBatch::invert(mb.attribute_pad));
    Tensor<T> logits = mlm_logits(params, f_pn);
    const std::size_t c = logits.shape()[1];
    for (std::size_t r = 0; r < mb.labels.v.size(); ++r) {
      if (mb.labels.v[r] == MaskedBatch::kIgnoreLabel) continue;
      if (mb.corrupted_protein.v[r] != special::kMask) continue;
      const T* row = logits.data().data() + r * c;
      std::size_t best = 0;
      double mx = static_cast<double>(row[0]);
      for (std::size_t j = 1; j < c; ++j)
        if (row[j] > row[best]) {
          best = j;
          mx = static_cast<double>(row[j]);
        }
      double denom = 0.0;
      for (std::size_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
      const auto label = static_cast<std::size_t>(Vocabulary::residue_class(mb.labels.v[r]));
      nll -= static_cast<double>(row[label]) - mx - std::log(denom);
      ++out.positions;
      if (best == label) ++hits;
    }
  }
  if (out.positions > 0) {
    out.accuracy = static_cast<double>(hits) / static_cast<double>(out.positions);
    out.loss = nll / static_cast<double>(out.positions);
  }
  return out;
}

// Runs the optimization loop. All randomness is derived from the seed with
// labeled streams, so a checkpoint resumed at step k replays the identical
// remainder of the run. on_checkpoint fires at the configured interval and
// once more after the final step.
template <typename T>
TrainResult<T> train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                     const KnowledgeGraph& kg, const TextVocabulary& text_vocab,
                     const TokenizerConfig& tok_cfg,
                     const std::function<void(const TrainState<T>&)>& on_checkpoint = {},
                     TrainState<T>* resume_from = nullptr) {
  model_cfg.validate();
  train_cfg.validate();
  if (kg.empty()) throw ContractError("train: empty knowledge graph");

  TrainResult<T> result;
  result.state = resume_from ? std::move(*resume_from)
                             : TrainState<T>::init(model_cfg, train_cfg.seed);

  const std::size_t batches_per_epoch = (kg.size() + train_cfg.batch_size - 1) / train_cfg.batch_size;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<TokenBatch> epoch_batches;

  for (std::size_t step = result.state.step + 1; step <= train_cfg.steps; ++step) {
    const std::size_t epoch = (step - 1) / batches_per_epoch;
    const std::size_t batch_idx = (step - 1) % batches_per_epoch;
    if (epoch != cached_epoch) {
      epoch_batches = make_batches(kg, train_cfg.batch_size,
                                   derive_seed(train_cfg.seed, "shuffle", epoch), text_vocab,
                                   tok_cfg);
      cached_epoch = epoch;
    }

    const TokenBatch* batch = &epoch_batches[batch_idx];
    std::vector<std::uint8_t> match_labels;
    TokenBatch swapped;
    if (model_cfg.triplet_match) {
      MatchBatch mb = make_match_batch(kg, batch->triplet_indices, text_vocab, tok_cfg,
                                       model_cfg.match_swap_fraction,
                                       derive_seed(train_cfg.seed, "swap", step));
      swapped = std::move(mb.batch);
      match_labels = std::move(mb.match_labels);
      batch = &swapped;
    }
    MaskedBatch mb = apply_masking(*batch, model_cfg.mask_ratio,
                                   derive_seed(train_cfg.seed, "mask", step));

    result.state.params.zero_grad();
    Graph<T> graph;
    PretrainLosses<T> losses;
    {
      GraphScope<T> scope(graph);
      losses = pretrain_losses(result.state.params, model_cfg, mb,
                               model_cfg.triplet_match ? &match_labels : nullptr);
      const double loss_val = static_cast<double>(losses.total.item());
      if (!std::isfinite(loss_val))
        throw NumericError("non-finite loss at step " + std::to_string(step));
      graph.backward(losses.total);
    }
    clip_gradients(result.state.params, train_cfg.clip_norm);
    const double lr = lr_at(step, train_cfg.steps, train_cfg.warmup_ratio, train_cfg.peak_lr);
    adamw_step(result.state, step, lr, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps,
               train_cfg.weight_decay);
    result.state.step = step;

    TraceRow row;
    row.step = step;
    row.lr = lr;
    row.loss = static_cast<double>(losses.total.item());
    row.match_loss = losses.match;
    if (train_cfg.eval_interval > 0 &&
        (step % train_cfg.eval_interval == 0 || step == train_cfg.steps)) {
      const MaskedEval eval = eval_masked_positions(result.state.params, model_cfg, kg,
                                                    text_vocab, tok_cfg, train_cfg.eval_triplets,
                                                    train_cfg.batch_size, train_cfg.seed);
      row.accuracy = eval.accuracy;
      row.eval_loss = eval.loss;
    }
    result.trace.push_back(row);

    if (train_cfg.checkpoint_interval > 0 && step % train_cfg.checkpoint_interval == 0 &&
        on_checkpoint)
      on_checkpoint(result.state);

    if (row.accuracy && train_cfg.stop_at_accuracy > 0.0 &&
        *row.accuracy >= train_cfg.stop_at_accuracy) {
      result.stopped_early = true;
      break;
    }
  }
  if (on_checkpoint) on_checkpoint(result.state);
  return result;
}

}  // namespace keap
