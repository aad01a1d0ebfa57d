// keap: pretraining, ablation, gradient checking, and evaluation for the
// knowledge-enhanced masked protein model.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "keap/keap.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void apply_model_defaults(keap::RunConfig& rc) {
  const keap::ModelConfig d;
  auto def = [&](const std::string& key, const std::string& value) {
    if (!rc.has(key)) rc.set(key, value);
  };
  def("hidden_dim", std::to_string(d.hidden_dim));
  def("encoder_layers", std::to_string(d.encoder_layers));
  def("pik_blocks", std::to_string(d.pik_blocks));
  def("heads", std::to_string(d.heads));
  def("ffn_dim", std::to_string(d.ffn_dim));
  def("knowledge_layers", std::to_string(d.knowledge_layers));
  def("max_protein_len", std::to_string(d.max_protein_len));
  def("max_relation_len", std::to_string(d.max_relation_len));
  def("max_attribute_len", std::to_string(d.max_attribute_len));
  def("variant", variant_name(d.variant));
  def("triplet_match", d.triplet_match ? "true" : "false");
  def("mask_ratio", fmt_double(d.mask_ratio));
  def("match_lambda", fmt_double(d.match_lambda));
  def("match_swap_fraction", fmt_double(d.match_swap_fraction));
  def("text_vocab_floor", "1");
}

void apply_train_defaults(keap::RunConfig& rc) {
  const keap::TrainConfig d;
  auto def = [&](const std::string& key, const std::string& value) {
    if (!rc.has(key)) rc.set(key, value);
  };
  def("steps", std::to_string(d.steps));
  def("batch_size", std::to_string(d.batch_size));
  def("peak_lr", fmt_double(d.peak_lr));
  def("warmup_ratio", fmt_double(d.warmup_ratio));
  def("beta1", fmt_double(d.beta1));
  def("beta2", fmt_double(d.beta2));
  def("adam_eps", fmt_double(d.adam_eps));
  def("weight_decay", fmt_double(d.weight_decay));
  def("clip_norm", fmt_double(d.clip_norm));
  def("seed", std::to_string(d.seed));
  def("checkpoint_interval", std::to_string(d.checkpoint_interval));
  def("eval_interval", std::to_string(d.eval_interval));
  def("eval_triplets", std::to_string(d.eval_triplets));
  def("stop_at_accuracy", fmt_double(d.stop_at_accuracy));
}

keap::ModelConfig model_config_from(const keap::RunConfig& rc) {
  keap::ModelConfig cfg;
  cfg.hidden_dim = rc.get_size("hidden_dim", cfg.hidden_dim);
  cfg.encoder_layers = rc.get_size("encoder_layers", cfg.encoder_layers);
  cfg.pik_blocks = rc.get_size("pik_blocks", cfg.pik_blocks);
  cfg.heads = rc.get_size("heads", cfg.heads);
  cfg.ffn_dim = rc.get_size("ffn_dim", cfg.ffn_dim);
  cfg.knowledge_layers = rc.get_size("knowledge_layers", cfg.knowledge_layers);
  cfg.max_protein_len = rc.get_size("max_protein_len", cfg.max_protein_len);
  cfg.max_relation_len = rc.get_size("max_relation_len", cfg.max_relation_len);
  cfg.max_attribute_len = rc.get_size("max_attribute_len", cfg.max_attribute_len);
  cfg.variant = keap::variant_from_name(rc.get_str("variant", variant_name(cfg.variant)));
  cfg.triplet_match = rc.get_bool("triplet_match", cfg.triplet_match);
  cfg.mask_ratio = rc.get_double("mask_ratio", cfg.mask_ratio);
  cfg.match_lambda = rc.get_double("match_lambda", cfg.match_lambda);
  cfg.match_swap_fraction = rc.get_double("match_swap_fraction", cfg.match_swap_fraction);
  return cfg;
}

keap::TrainConfig train_config_from(const keap::RunConfig& rc) {
  keap::TrainConfig cfg;
  cfg.steps = rc.get_size("steps", cfg.steps);
  cfg.batch_size = rc.get_size("batch_size", cfg.batch_size);
  cfg.peak_lr = rc.get_double("peak_lr", cfg.peak_lr);
  cfg.warmup_ratio = rc.get_double("warmup_ratio", cfg.warmup_ratio);
  cfg.beta1 = rc.get_double("beta1", cfg.beta1);
  cfg.beta2 = rc.get_double("beta2", cfg.beta2);
  cfg.adam_eps = rc.get_double("adam_eps", cfg.adam_eps);
  cfg.weight_decay = rc.get_double("weight_decay", cfg.weight_decay);
  cfg.clip_norm = rc.get_double("clip_norm", cfg.clip_norm);
  cfg.seed = rc.get_u64("seed", cfg.seed);
  cfg.checkpoint_interval = rc.get_size("checkpoint_interval", cfg.checkpoint_interval);
  cfg.eval_interval = rc.get_size("eval_interval", cfg.eval_interval);
  cfg.eval_triplets = rc.get_size("eval_triplets", cfg.eval_triplets);
  cfg.stop_at_accuracy = rc.get_double("stop_at_accuracy", cfg.stop_at_accuracy);
  return cfg;
}

fs::path resolve_run_dir(const keap::RunConfig& rc) {
  std::string root = rc.get_str("run_dir");
  if (root.empty()) {
    if (const char* env = std::getenv("KEAP_RUN_DIR")) root = env;
  }
  if (root.empty()) root = "runs";
  fs::path dir = fs::path(root) / rc.get_str("run_name", "run");
  fs::create_directories(dir);
  return dir;
}

void write_resolved_config(const keap::RunConfig& rc, const fs::path& dir) {
  std::ofstream out(dir / "config.resolved");
  out << rc.echo();
}

void write_loss_csv(const std::vector<keap::TraceRow>& trace, const fs::path& path,
                    bool with_match) {
  std::ofstream out(path);
  out << "step,lr,loss" << (with_match ? ",match_loss" : "") << '\n';
  for (const auto& row : trace) {
    out << row.step << ',' << fmt_double(row.lr) << ',' << fmt_double(row.loss);
    if (with_match) out << ',' << fmt_double(row.match_loss.value_or(0.0));
    out << '\n';
  }
}

json removal_report_json(const keap::RemovalReport& report) {
  return json{{"removed_triplets", report.removed_triplets},
              {"retained_triplets", report.retained_triplets},
              {"retained_fraction", report.retained_fraction}};
}

keap::ResiduePolicy policy_from(const keap::RunConfig& rc) {
  const std::string p = rc.get_str("residue_policy", "reject");
  if (p == "reject") return keap::ResiduePolicy::kReject;
  if (p == "map_to_x") return keap::ResiduePolicy::kMapToX;
  throw keap::ConfigError("residue_policy must be reject or map_to_x, got '" + p + "'");
}

void print_load_report(const keap::LoadReport& report) {
  if (report.empty_file) std::cerr << "warning: triplet file is empty\n";
  if (!report.rejected_lines.empty()) {
    std::cerr << "rejected " << report.rejected_lines.size() << " line(s):";
    for (const std::size_t line : report.rejected_lines) std::cerr << ' ' << line;
    std::cerr << '\n';
  }
}

keap::KnowledgeGraph load_kg_or_synthetic(const keap::RunConfig& rc) {
  if (rc.has("triplets")) {
    keap::LoadReport report;
    keap::KnowledgeGraph kg =
        keap::load_triplets_file(rc.require_str("triplets"), policy_from(rc), &report);
    print_load_report(report);
    return kg;
  }
  const auto n = rc.get_size("synth_n", 2000);
  const auto len = rc.get_size("synth_len", 32);
  const auto mode = rc.get_str("synth_mode", "knowledge_dependent") == "random"
                        ? keap::SynthMode::kRandom
                        : keap::SynthMode::kKnowledgeDependent;
  return keap::generate_synthetic_kg(n, len, mode, rc.get_u64("seed", 0));
}

// Fraction of correct match-head decisions over the leading eval slice.
double eval_match_accuracy(const keap::Parameters<float>& params, const keap::ModelConfig& cfg,
                           const keap::KnowledgeGraph& kg, const keap::TextVocabulary& vocab,
                           const keap::TokenizerConfig& tok_cfg, std::size_t n_triplets,
                           std::size_t batch_size, std::uint64_t seed) {
  std::size_t hits = 0, total = 0;
  const std::size_t n = std::min(n_triplets, kg.size());
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(start + batch_size, n); ++i) idx.push_back(i);
    keap::MatchBatch mb = keap::make_match_batch(kg, idx, vocab, tok_cfg,
                                                 cfg.match_swap_fraction,
                                                 keap::derive_seed(seed, "eval-swap", start));
    keap::MaskedBatch masked = keap::apply_masking(mb.batch, cfg.mask_ratio,
                                                   keap::derive_seed(seed, "eval-mask", start));
    const keap::BoolMat protein_valid = keap::TokenBatch::invert(masked.protein_pad);
    auto f_p0 = keap::encode_protein(params, cfg, masked.corrupted_protein, masked.protein_pad);
    auto f_r = keap::encode_knowledge(params, cfg, masked.relation, masked.relation_pad);
    auto f_a = keap::encode_knowledge(params, cfg, masked.attribute, masked.attribute_pad);
    auto f_pn = keap::decode(params, cfg, f_p0, f_r, f_a, protein_valid,
                             keap::TokenBatch::invert(masked.relation_pad),
                             keap::TokenBatch::invert(masked.attribute_pad));
    auto pooled = keap::mean_over_valid(f_pn, protein_valid);
    auto logits = keap::triplet_match_logits(params, pooled);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const bool predicted = logits.data()[i] > 0.0f;
      ++total;
      if (predicted == (mb.match_labels[i] != 0)) ++hits;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_pretrain(keap::RunConfig& rc) {
  apply_model_defaults(rc);
  apply_train_defaults(rc);
  const fs::path dir = resolve_run_dir(rc);

  keap::LoadReport load_report;
  keap::KnowledgeGraph kg =
      keap::load_triplets_file(rc.require_str("triplets"), policy_from(rc), &load_report);
  print_load_report(load_report);
  if (rc.has("holdout")) {
    const auto holdout = keap::load_holdout_file(rc.require_str("holdout"));
    auto [filtered, report] = keap::filter_leakage(kg, holdout);
    kg = std::move(filtered);
    const json j = removal_report_json(report);
    std::cout << j.dump() << '\n';
    std::ofstream(dir / "removal_report.json") << j.dump() << '\n';
  }
  if (kg.empty()) throw keap::ContractError("no triplets left to train on");

  keap::ModelConfig model_cfg = model_config_from(rc);
  const keap::TextVocabulary text_vocab =
      keap::build_text_vocab(kg, rc.get_size("text_vocab_floor", 1));
  model_cfg.text_vocab = std::max<std::size_t>(text_vocab.size(), keap::special::kCount + 1);
  const keap::TokenizerConfig tok_cfg{model_cfg.max_protein_len, model_cfg.max_relation_len,
                                      model_cfg.max_attribute_len};
  const keap::TrainConfig train_cfg = train_config_from(rc);
  write_resolved_config(rc, dir);

  auto on_checkpoint = [&](const keap::TrainState<float>& state) {
    keap::save_checkpoint(state, (dir / ("ckpt_" + std::to_string(state.step) + ".keap")).string());
    keap::save_checkpoint(state, (dir / "final.keap").string());
  };
  keap::TrainResult<float> result =
      keap::train<float>(model_cfg, train_cfg, kg, text_vocab, tok_cfg, on_checkpoint);
  write_loss_csv(result.trace, dir / "loss.csv", model_cfg.triplet_match);
  std::cout << "run directory: " << dir.string() << '\n';
  std::cout << "final step " << result.state.step << ", final loss "
            << fmt_double(result.trace.empty() ? 0.0 : result.trace.back().loss) << '\n';
  return 0;
}

int cmd_gradcheck(keap::RunConfig& rc) {
  keap::ModelConfig cfg = keap::gradcheck_tiny_config();
  cfg.hidden_dim = rc.get_size("hidden_dim", cfg.hidden_dim);
  cfg.encoder_layers = rc.get_size("encoder_layers", cfg.encoder_layers);
  cfg.pik_blocks = rc.get_size("pik_blocks", cfg.pik_blocks);
  cfg.heads = rc.get_size("heads", cfg.heads);
  cfg.ffn_dim = rc.get_size("ffn_dim", cfg.ffn_dim);
  cfg.max_protein_len = rc.get_size("max_protein_len", cfg.max_protein_len);
  cfg.max_relation_len = rc.get_size("max_relation_len", cfg.max_relation_len);
  cfg.max_attribute_len = rc.get_size("max_attribute_len", cfg.max_attribute_len);
  cfg.variant = keap::variant_from_name(rc.get_str("variant", variant_name(cfg.variant)));
  cfg.triplet_match = rc.get_bool("triplet_match", cfg.triplet_match);

  keap::GradCheckConfig gc;
  gc.min_samples = rc.get_size("gc_samples", gc.min_samples);
  gc.tolerance = rc.get_double("gc_tolerance", gc.tolerance);
  gc.fd_step = rc.get_double("gc_fd_step", gc.fd_step);
  gc.param_cap = rc.get_size("gc_param_cap", gc.param_cap);
  gc.seed = rc.get_u64("seed", gc.seed);
  gc.corrupt_name = rc.get_str("corrupt_grad", "");

  const keap::GradCheckReport report = keap::gradient_check(cfg, gc);
  for (const auto& s : report.samples) {
    std::cout << (s.rel_err < gc.tolerance ? "ok   " : "FAIL ") << s.name << '[' << s.index
              << "] analytic " << fmt_double(s.analytic) << " numeric " << fmt_double(s.numeric)
              << " rel_err " << fmt_double(s.rel_err) << '\n';
  }
  std::cout << "sampled " << report.samples.size() << " parameters, max rel err "
            << fmt_double(report.max_rel_err) << " at " << report.worst_name << '['
            << report.worst_index << "]\n";
  if (!report.pass) {
    std::cout << "gradient check FAILED: " << report.worst_name << '\n';
    return 1;
  }
  std::cout << "gradient check passed\n";
  return 0;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string item = s.substr(start, comma == std::string::npos ? comma : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

int cmd_ablate(keap::RunConfig& rc) {
  apply_model_defaults(rc);
  apply_train_defaults(rc);
  const fs::path dir = resolve_run_dir(rc);
  const keap::KnowledgeGraph kg = load_kg_or_synthetic(rc);
  if (kg.empty()) throw keap::ContractError("no triplets to ablate on");

  const std::vector<std::string> variants =
      split_csv(rc.get_str("variants", "cascaded,parallel,no_pik,cascaded+match"));
  const std::vector<std::string> ratios = split_csv(rc.get_str("ratios", "0.15,0.2,0.25"));
  const keap::TextVocabulary text_vocab =
      keap::build_text_vocab(kg, rc.get_size("text_vocab_floor", 1));
  write_resolved_config(rc, dir);

  std::ofstream csv(dir / "ablation.csv");
  csv << "variant,mask_ratio,final_loss,masked_accuracy,masked_eval_loss,match_accuracy\n";
  for (const std::string& variant_spec : variants) {
    for (const std::string& ratio_str : ratios) {
      keap::ModelConfig model_cfg = model_config_from(rc);
      model_cfg.triplet_match = variant_spec.ends_with("+match");
      model_cfg.variant = keap::variant_from_name(
          model_cfg.triplet_match ? variant_spec.substr(0, variant_spec.size() - 6)
                                  : variant_spec);
      model_cfg.mask_ratio = std::stod(ratio_str);
      model_cfg.text_vocab = std::max<std::size_t>(text_vocab.size(), keap::special::kCount + 1);
      const keap::TokenizerConfig tok_cfg{model_cfg.max_protein_len, model_cfg.max_relation_len,
                                          model_cfg.max_attribute_len};
      keap::TrainConfig train_cfg = train_config_from(rc);
      if (train_cfg.eval_interval == 0) train_cfg.eval_interval = train_cfg.steps;

      keap::TrainResult<float> result =
          keap::train<float>(model_cfg, train_cfg, kg, text_vocab, tok_cfg);
      double accuracy = 0.0, eval_loss = 0.0;
      for (auto it = result.trace.rbegin(); it != result.trace.rend(); ++it)
        if (it->accuracy) {
          accuracy = *it->accuracy;
          eval_loss = it->eval_loss.value_or(0.0);
          break;
        }
      csv << variant_spec << ',' << ratio_str << ','
          << fmt_double(result.trace.empty() ? 0.0 : result.trace.back().loss) << ','
          << fmt_double(accuracy) << ',' << fmt_double(eval_loss) << ',';
      if (model_cfg.triplet_match) {
        csv << fmt_double(eval_match_accuracy(result.state.params, model_cfg, kg, text_vocab,
                                              tok_cfg, train_cfg.eval_triplets,
                                              train_cfg.batch_size, train_cfg.seed));
      }
      csv << '\n';
      std::cout << "ablate " << variant_spec << " ratio " << ratio_str << ": final loss "
                << fmt_double(result.trace.empty() ? 0.0 : result.trace.back().loss)
                << ", masked accuracy " << fmt_double(accuracy) << '\n';
    }
  }
  std::cout << "ablation report: " << (dir / "ablation.csv").string() << '\n';
  return 0;
}

int cmd_eval(keap::RunConfig& rc) {
  const fs::path dir = resolve_run_dir(rc);
  const std::string checkpoint_path = rc.require_str("checkpoint");
  const std::string task = rc.require_str("task");
  const std::string data_path = rc.require_str("data");

  keap::TrainState<float> state = keap::load_checkpoint(checkpoint_path);
  const keap::ModelConfig& cfg = state.model_config;
  // explicit architecture flags must agree with the checkpoint
  for (const auto& [key, actual] :
       std::vector<std::pair<std::string, std::size_t>>{{"hidden_dim", cfg.hidden_dim},
                                                        {"encoder_layers", cfg.encoder_layers},
                                                        {"pik_blocks", cfg.pik_blocks},
                                                        {"heads", cfg.heads}}) {
    if (rc.has(key) && rc.get_size(key, actual) != actual)
      throw keap::VersionError("--" + key + "=" + rc.get_str(key) +
                               " conflicts with checkpoint value " + std::to_string(actual));
  }

  std::ifstream raw(data_path, std::ios::binary);
  if (!raw) throw keap::ParseError("cannot open task data: " + data_path);
  const std::string bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
  const std::string fingerprint = keap::fingerprint_hex(bytes);

  std::vector<keap::MetricReport> reports;
  if (task == "contact") {
    keap::ContactProbeConfig probe_cfg;
    probe_cfg.epochs = rc.get_size("probe_epochs", probe_cfg.epochs);
    probe_cfg.lr = rc.get_double("probe_lr", probe_cfg.lr);
    probe_cfg.seed = rc.get_u64("seed", probe_cfg.seed);
    probe_cfg.heldout_fraction = rc.get_double("heldout_fraction", probe_cfg.heldout_fraction);
    rc.set("probe_epochs", std::to_string(probe_cfg.epochs));
    rc.set("probe_lr", fmt_double(probe_cfg.lr));
    rc.set("heldout_fraction", fmt_double(probe_cfg.heldout_fraction));
    reports = keap::contact_eval(state.params, cfg, keap::load_contact_jsonl(data_path), probe_cfg,
                                 fingerprint);
  } else if (task == "ppi") {
    keap::PpiProbeConfig probe_cfg;
    probe_cfg.epochs = rc.get_size("probe_epochs", probe_cfg.epochs);
    probe_cfg.lr = rc.get_double("probe_lr", probe_cfg.lr);
    probe_cfg.seed = rc.get_u64("seed", probe_cfg.seed);
    probe_cfg.heldout_fraction = rc.get_double("heldout_fraction", probe_cfg.heldout_fraction);
    rc.set("probe_epochs", std::to_string(probe_cfg.epochs));
    rc.set("probe_lr", fmt_double(probe_cfg.lr));
    rc.set("heldout_fraction", fmt_double(probe_cfg.heldout_fraction));
    reports = keap::ppi_eval(state.params, cfg, keap::load_ppi_jsonl(data_path), probe_cfg,
                             fingerprint);
  } else if (task == "similarity") {
    reports = keap::similarity_eval(state.params, cfg, keap::load_similarity_tsv(data_path),
                                    fingerprint);
  } else if (task == "affinity") {
    rc.set("folds", std::to_string(rc.get_size("folds", 10)));
    reports = keap::affinity_eval(state.params, cfg, keap::load_affinity_tsv(data_path),
                                  rc.get_size("folds", 10), rc.get_u64("seed", 0), fingerprint);
  } else {
    throw keap::ConfigError("unknown task '" + task + "' (contact|ppi|similarity|affinity)");
  }

  const std::string out_path = rc.get_str("out", (dir / ("reports_" + task + ".jsonl")).string());
  rc.set("seed", std::to_string(rc.get_u64("seed", 0)));
  rc.set("out", out_path);
  write_resolved_config(rc, dir);
  std::ofstream out(out_path);
  for (const auto& r : reports) {
    const std::string line = keap::metric_report_to_json(r).dump();
    out << line << '\n';
    std::cout << line << '\n';
  }
  return 0;
}

int cmd_filter_kg(keap::RunConfig& rc) {
  const std::string in_path = rc.require_str("in");
  const std::string holdout_path = rc.require_str("holdout");
  const std::string out_path = rc.require_str("out");
  keap::LoadReport load_report;
  keap::KnowledgeGraph kg = keap::load_triplets_file(in_path, policy_from(rc), &load_report);
  print_load_report(load_report);
  const auto holdout = keap::load_holdout_file(holdout_path);
  auto [filtered, report] = keap::filter_leakage(kg, holdout);
  keap::write_triplets_file(filtered, out_path);
  std::cout << removal_report_json(report).dump() << '\n';
  return 0;
}

int cmd_gen_synth(keap::RunConfig& rc) {
  const auto mode = rc.get_str("mode", "knowledge_dependent") == "random"
                        ? keap::SynthMode::kRandom
                        : keap::SynthMode::kKnowledgeDependent;
  const keap::KnowledgeGraph kg =
      keap::generate_synthetic_kg(rc.get_size("n", 2000), rc.get_size("len", 32), mode,
                                  rc.get_u64("seed", 0));
  keap::write_triplets_file(kg, rc.require_str("out"));
  std::cout << "wrote " << kg.size() << " triplets\n";
  return 0;
}

int usage() {
  std::cerr
      << "usage: keap <command> [--key value ...]\n"
         "\n"
         "commands:\n"
         "  pretrain   --triplets FILE [--holdout FILE] plus model/training options\n"
         "  gradcheck  [--gc_samples N] [--gc_tolerance X] [--corrupt_grad TENSOR]\n"
         "  ablate     [--triplets FILE | --synth_n N --synth_len L] --variants a,b --ratios x,y\n"
         "  eval       --checkpoint FILE --task contact|ppi|similarity|affinity --data FILE\n"
         "  filter-kg  --in FILE --holdout FILE --out FILE\n"
         "  gen-synth  --n N --len L [--mode knowledge_dependent|random] --out FILE\n"
         "\n"
         "--config FILE loads key = value lines (# comments); later flags override.\n"
         "Run directories live under --run_dir, $KEAP_RUN_DIR, or ./runs.\n"
         "See README.md for the full option list and file formats.\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) return usage();
  const std::string command = argv[1];
  std::vector<std::string> args(argv + 2, argv + argc);
  try {
    keap::RunConfig rc;
    rc.apply_args(args);
    if (command == "pretrain") return cmd_pretrain(rc);
    if (command == "gradcheck") return cmd_gradcheck(rc);
    if (command == "ablate") return cmd_ablate(rc);
    if (command == "eval") return cmd_eval(rc);
    if (command == "filter-kg") return cmd_filter_kg(rc);
    if (command == "gen-synth") return cmd_gen_synth(rc);
    std::cerr << "unknown command '" << command << "'\n";
    return usage();
  } catch (const keap::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
