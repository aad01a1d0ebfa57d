#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "keap/data.hpp"
#include "keap/masking.hpp"
#include "keap/model.hpp"
#include "keap/rng.hpp"
#include "keap/train.hpp"

namespace keap {

struct GradCheckSample {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckSample> samples;
  double max_rel_err = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  bool pass = false;
};

struct GradCheckConfig {
  std::size_t min_samples = 100;
  double tolerance = 1e-3;
  double fd_step = 1e-4;
  std::size_t batch = 2;
  std::uint64_t seed = 7;
  std::size_t param_cap = 300000;  // learnable scalars; keeps the replay fast
  std::string corrupt_name;       // test hook: perturbs one analytic gradient
};

// Tiny architecture used by cmd_gradcheck.
inline ModelConfig gradcheck_tiny_config() {
  ModelConfig cfg;
  cfg.hidden_dim = 16;
  cfg.encoder_layers = 1;
  cfg.pik_blocks = 2;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.knowledge_layers = 1;
  cfg.text_vocab = 40;
  cfg.max_protein_len = 8;
  cfg.max_relation_len = 4;
  cfg.max_attribute_len = 8;
  return cfg;
}

// Central-difference verification of the full pretraining gradient. The model
// is built directly in 64-bit so the tolerance is limited by the scheme, not
// the arithmetic. Every learnable tensor receives at least one probe.
inline GradCheckReport gradient_check(const ModelConfig& model_cfg, const GradCheckConfig& gc) {
  model_cfg.validate();
  Parameters<double> params = init_parameters<double>(model_cfg, gc.seed);
  if (params.total_learnable() > gc.param_cap)
    throw ConfigError("gradient_check: " + std::to_string(params.total_learnable()) +
                      " learnable scalars exceed the cap of " + std::to_string(gc.param_cap));

  // fixed synthetic batch
  const std::size_t seq_len = model_cfg.max_protein_len - 2;
  KnowledgeGraph kg = generate_synthetic_kg(gc.batch, seq_len, SynthMode::kKnowledgeDependent,
                                            derive_seed(gc.seed, "gradcheck-data"));
  TokenizerConfig tok_cfg{model_cfg.max_protein_len, model_cfg.max_relation_len,
                          model_cfg.max_attribute_len};
  TextVocabulary text_vocab = build_text_vocab(kg);
  std::vector<std::size_t> idx(kg.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  TokenBatch batch = make_token_batch(kg, idx, text_vocab, tok_cfg);
  MaskedBatch mb =
      apply_masking(batch, model_cfg.mask_ratio, derive_seed(gc.seed, "gradcheck-mask"));
  std::vector<std::uint8_t> match_labels;
  if (model_cfg.triplet_match) {
    MatchBatch match = make_match_batch(kg, idx, text_vocab, tok_cfg,
                                        model_cfg.match_swap_fraction,
                                        derive_seed(gc.seed, "gradcheck-swap"));
    MaskedBatch masked = apply_masking(match.batch, model_cfg.mask_ratio,
                                       derive_seed(gc.seed, "gradcheck-mask"));
    mb = std::move(masked);
    match_labels = std::move(match.match_labels);
  }
  const std::vector<std::uint8_t>* labels_ptr = model_cfg.triplet_match ? &match_labels : nullptr;

  auto loss_value = [&]() {
    return pretrain_losses(params, model_cfg, mb, labels_ptr).total.item();
  };

  // analytic gradients, one backward pass
  params.zero_grad();
  {
    Graph<double> graph;
    GraphScope<double> scope(graph);
    PretrainLosses<double> losses = pretrain_losses(params, model_cfg, mb, labels_ptr);
    graph.backward(losses.total);
  }
  std::map<std::string, std::vector<double>> analytic;
  for (const auto& name : params.learnable_names()) analytic[name] = params.at(name).grad();
  if (!gc.corrupt_name.empty()) {
    auto it = analytic.find(gc.corrupt_name);
    if (it == analytic.end())
      throw ConfigError("gradient_check: unknown tensor '" + gc.corrupt_name + "' to corrupt");
    for (auto& g : it->second) g += 1.0;
  }

  const std::vector<std::string> names = params.learnable_names();
  const std::size_t per_tensor = (gc.min_samples + names.size() - 1) / names.size();
  Rng rng(derive_seed(gc.seed, "gradcheck-sample"));

  GradCheckReport report;
  for (const auto& name : names) {
    Tensor<double>& tensor = params.at(name);
    for (std::size_t s = 0; s < per_tensor; ++s) {
      const std::size_t i = static_cast<std::size_t>(rng.uniform_int(tensor.numel()));
      const double saved = tensor.data()[i];
      tensor.data()[i] = saved + gc.fd_step;
      const double up = loss_value();
      tensor.data()[i] = saved - gc.fd_step;
      const double down = loss_value();
      tensor.data()[i] = saved;
      GradCheckSample sample;
      sample.name = name;
      sample.index = i;
      sample.numeric = (up - down) / (2.0 * gc.fd_step);
      sample.analytic = analytic[name][i];
      const double denom =
          std::max({std::abs(sample.analytic), std::abs(sample.numeric), 1e-4});
      sample.rel_err = std::abs(sample.analytic - sample.numeric) / denom;
      if (sample.rel_err > report.max_rel_err) {
        report.max_rel_err = sample.rel_err;
        report.worst_name = sample.name;
        report.worst_index = sample.index;
      }
      report.samples.push_back(std::move(sample));
    }
  }
  report.pass = report.max_rel_err < gc.tolerance;
  return report;
}

}  // namespace keap
