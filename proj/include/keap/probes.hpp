#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "keap/data.hpp"
#include "keap/metrics.hpp"
#include "keap/model.hpp"
#include "keap/train.hpp"

namespace keap {

inline std::string fingerprint_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

inline nlohmann::json metric_report_to_json(const MetricReport& r) {
  if (!std::isfinite(r.value))
    throw NumericError("metric '" + r.metric + "' produced a non-finite value");
  return nlohmann::json{
      {"metric", r.metric}, {"value", r.value}, {"params", r.params}, {"fingerprint", r.fingerprint}};
}

// ---------------------------------------------------------------------------
// frozen-encoder representations
// ---------------------------------------------------------------------------

// Residue-level rows (CLS/SEP dropped) of the encoder output for one protein.
// The sequence must fit the model's configured maximum untruncated, or
// downstream pair indices would silently go stale.
template <typename T>
std::vector<std::vector<double>> residue_embeddings(const Parameters<T>& params,
                                                    const ModelConfig& cfg,
                                                    const std::string& sequence) {
  if (sequence.size() + 2 > cfg.max_protein_len)
    throw ContractError("sequence of length " + std::to_string(sequence.size()) +
                        " exceeds the model maximum of " +
                        std::to_string(cfg.max_protein_len - 2) + " residues");
  const std::vector<std::int32_t> ids = tokenize_protein(sequence, cfg.max_protein_len);
  IdMat mat(1, ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) mat.at(0, i) = ids[i];
  BoolMat pad(1, ids.size(), false);
  Tensor<T> h = encode_protein(params, cfg, mat, pad);
  const std::size_t d = cfg.hidden_dim;
  std::vector<std::vector<double>> rows;
  rows.reserve(ids.size() - 2);
  for (std::size_t p = 1; p + 1 < ids.size(); ++p) {
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<double>(h.data()[p * d + j]);
    rows.push_back(std::move(row));
  }
  return rows;
}

// Mean over non-pad positions of the encoder output.
template <typename T>
std::vector<double> pooled_embedding(const Parameters<T>& params, const ModelConfig& cfg,
                                     const std::string& sequence) {
  const std::vector<std::int32_t> ids = tokenize_protein(sequence, cfg.max_protein_len);
  IdMat mat(1, ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) mat.at(0, i) = ids[i];
  BoolMat pad(1, ids.size(), false);
  Tensor<T> h = encode_protein(params, cfg, mat, pad);
  const std::size_t d = cfg.hidden_dim;
  std::vector<double> pooled(d, 0.0);
  for (std::size_t p = 0; p < ids.size(); ++p)
    for (std::size_t j = 0; j < d; ++j) pooled[j] += static_cast<double>(h.data()[p * d + j]);
  for (auto& v : pooled) v /= static_cast<double>(ids.size());
  return pooled;
}

// ---------------------------------------------------------------------------
// toy contact dataset
// ---------------------------------------------------------------------------

struct ContactExample {
  std::string sequence;
  std::vector<std::pair<std::size_t, std::size_t>> contacts;
};

// Contacts planted between equal residues at separation >= 6, so they are
// decodable from token embeddings alone.
inline std::vector<ContactExample> generate_toy_contacts(std::size_t n, std::size_t len,
                                                         std::uint64_t seed) {
  constexpr std::string_view canonical = "ACDEFGHIKLMNPQRSTVWY";
  Rng rng(seed);
  std::vector<ContactExample> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    ContactExample ex;
    ex.sequence.resize(len);
    for (auto& c : ex.sequence) c = canonical[rng.uniform_int(canonical.size())];
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = i + 6; j < len; ++j)
        if (ex.sequence[i] == ex.sequence[j]) ex.contacts.emplace_back(i, j);
    out.push_back(std::move(ex));
  }
  return out;
}

inline void write_contact_jsonl(const std::vector<ContactExample>& examples,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open contact file for writing: " + path);
  for (const auto& ex : examples) {
    nlohmann::json j;
    j["sequence"] = ex.sequence;
    auto arr = nlohmann::json::array();
    for (const auto& [i, k] : ex.contacts) arr.push_back({i, k});
    j["contacts"] = std::move(arr);
    out << j.dump() << '\n';
  }
}

inline std::vector<ContactExample> load_contact_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open contact file: " + path);
  std::vector<ContactExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
    ContactExample ex;
    ex.sequence = j.at("sequence").get<std::string>();
    for (const auto& pair : j.at("contacts"))
      ex.contacts.emplace_back(pair.at(0).get<std::size_t>(), pair.at(1).get<std::size_t>());
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// contact probe
// ---------------------------------------------------------------------------

struct ContactProbeConfig {
  std::size_t epochs = 20;
  double lr = 2e-2;
  double weight_decay = 5e-2;
  std::uint64_t seed = 0;
  double heldout_fraction = 0.2;
};

// Bilinear pair scorer over standardized residue embeddings. The feature
// mean/scale come from the training set.
struct ContactProbe {
  Tensor<float> w;  // [D, D] bilinear form
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
};

namespace detail {

inline Tensor<float> embedding_tensor(const std::vector<std::vector<double>>& rows,
                                      const std::vector<double>& mean,
                                      const std::vector<double>& stddev) {
  const std::size_t l = rows.size();
  const std::size_t d = rows.empty() ? 0 : rows[0].size();
  std::vector<float> data(l * d);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < d; ++j)
      data[i * d + j] = static_cast<float>((rows[i][j] - mean[j]) / stddev[j]);
  return Tensor<float>::from_data({l, d}, std::move(data));
}

// Symmetric bilinear logits (H W H^T + transpose) / 2 over residue rows.
inline Tensor<float> probe_logits(const ContactProbe& probe, const Tensor<float>& h) {
  Tensor<float> s = matmul(matmul(h, probe.w), transpose(h, 0, 1));
  return scale(add(s, transpose(s, 0, 1)), 0.5f);
}

inline void contact_targets(const ContactExample& ex, std::size_t len, std::vector<float>& targets,
                            std::vector<std::uint8_t>& eligible) {
  targets.assign(len * len, 0.0f);
  eligible.assign(len * len, 0);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j)
      if ((i > j ? i - j : j - i) >= 6) eligible[i * len + j] = 1;
  for (const auto& [i, j] : ex.contacts) {
    targets[i * len + j] = 1.0f;
    targets[j * len + i] = 1.0f;
  }
}

}  // namespace detail

// Fits the bilinear pair scorer with BCE over separation >= 6 cells.
template <typename T>
ContactProbe contact_probe_train(const Parameters<T>& params, const ModelConfig& cfg,
                                 const std::vector<ContactExample>& train_set,
                                 const ContactProbeConfig& probe_cfg) {
  ContactProbe probe;
  {
    Rng rng(derive_seed(probe_cfg.seed, "contact-probe"));
    probe.w = Tensor<float>::zeros({cfg.hidden_dim, cfg.hidden_dim}, true);
    for (auto& v : probe.w.data()) v = static_cast<float>(rng.truncated_normal(0.02));
  }
  std::vector<std::vector<std::vector<double>>> raw;
  raw.reserve(train_set.size());
  for (const auto& ex : train_set) raw.push_back(residue_embeddings(params, cfg, ex.sequence));

  probe.feature_mean.assign(cfg.hidden_dim, 0.0);
  probe.feature_std.assign(cfg.hidden_dim, 0.0);
  std::size_t rows = 0;
  for (const auto& ex : raw)
    for (const auto& row : ex) {
      ++rows;
      for (std::size_t j = 0; j < row.size(); ++j) probe.feature_mean[j] += row[j];
    }
  for (auto& v : probe.feature_mean) v /= static_cast<double>(rows);
  for (const auto& ex : raw)
    for (const auto& row : ex)
      for (std::size_t j = 0; j < row.size(); ++j) {
        const double c = row[j] - probe.feature_mean[j];
        probe.feature_std[j] += c * c;
      }
  for (auto& v : probe.feature_std) v = std::max(std::sqrt(v / static_cast<double>(rows)), 1e-8);

  std::vector<Tensor<float>> embeddings;
  embeddings.reserve(raw.size());
  for (const auto& ex : raw)
    embeddings.push_back(detail::embedding_tensor(ex, probe.feature_mean, probe.feature_std));

  AdamSlots<float> slots;
  slots.m.assign(probe.w.numel(), 0.0f);
  slots.v.assign(probe.w.numel(), 0.0f);
  Rng order_rng(derive_seed(probe_cfg.seed, "contact-probe-order"));
  std::size_t t = 0;
  std::vector<float> targets;
  std::vector<std::uint8_t> eligible;
  for (std::size_t epoch = 0; epoch < probe_cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    for (const std::size_t idx : order) {
      const std::size_t len = train_set[idx].sequence.size();
      detail::contact_targets(train_set[idx], len, targets, eligible);
      probe.w.zero_grad();
      Graph<float> graph;
      {
        GraphScope<float> scope(graph);
        Tensor<float> logits = detail::probe_logits(probe, embeddings[idx]);
        Tensor<float> loss =
            bce_with_logits(reshape(logits, {len * len}), targets, &eligible);
        graph.backward(loss);
      }
      ++t;
      const auto& g = probe.w.grad();
      auto& w = probe.w.data();
      const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t));
      for (std::size_t i = 0; i < w.size(); ++i) {
        slots.m[i] = static_cast<float>(0.9 * slots.m[i] + 0.1 * g[i]);
        slots.v[i] = static_cast<float>(0.999 * slots.v[i] + 0.001 * g[i] * g[i]);
        w[i] -= static_cast<float>(probe_cfg.lr * ((slots.m[i] / bc1) /
                                                       (std::sqrt(slots.v[i] / bc2) + 1e-8) +
                                                   probe_cfg.weight_decay * w[i]));
      }
    }
  }
  return probe;
}

// Symmetric probability contact map for one example.
template <typename T>
ContactMap contact_probe_predict(const ContactProbe& probe, const Parameters<T>& params,
                                 const ModelConfig& cfg, const ContactExample& ex) {
  Tensor<float> h = detail::embedding_tensor(residue_embeddings(params, cfg, ex.sequence),
                                             probe.feature_mean, probe.feature_std);
  Tensor<float> logits = detail::probe_logits(probe, h);
  const std::size_t len = ex.sequence.size();
  ContactMap map(len);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j)
      map.prob[i * len + j] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data()[i * len + j])));
  for (const auto& [i, j] : ex.contacts) map.set_contact(i, j);
  return map;
}

// Trains on the leading split and reports mean precision per bucket/divisor
// on the held-out remainder: the 3x3 contact grid.
template <typename T>
std::vector<MetricReport> contact_eval(const Parameters<T>& params, const ModelConfig& cfg,
                                       const std::vector<ContactExample>& examples,
                                       const ContactProbeConfig& probe_cfg,
                                       const std::string& fingerprint) {
  if (examples.size() < 2) throw ContractError("contact_eval: need at least 2 examples");
  const std::size_t n_train = std::max<std::size_t>(
      1, examples.size() - static_cast<std::size_t>(
             probe_cfg.heldout_fraction * static_cast<double>(examples.size())));
  const std::vector<ContactExample> train_set(examples.begin(), examples.begin() + n_train);
  const std::vector<ContactExample> held(examples.begin() + n_train, examples.end());
  ContactProbe probe = contact_probe_train(params, cfg, train_set, probe_cfg);

  std::vector<MetricReport> reports;
  for (const RangeBucket bucket : {RangeBucket::kShort, RangeBucket::kMedium, RangeBucket::kLong}) {
    for (const std::size_t divisor : {std::size_t{1}, std::size_t{2}, std::size_t{5}}) {
      double sum = 0.0;
      std::size_t counted = 0;
      for (const auto& ex : held) {
        ContactMap map = contact_probe_predict(probe, params, cfg, ex);
        if (const auto p = precision_at_k(map, bucket, divisor)) {
          sum += *p;
          ++counted;
        }
      }
      MetricReport r;
      r.metric = "contact_precision";
      r.value = counted == 0 ? 0.0 : sum / static_cast<double>(counted);
      r.params["bucket"] = bucket_name(bucket);
      r.params["divisor"] = std::to_string(divisor);
      r.params["heldout_examples"] = std::to_string(held.size());
      r.fingerprint = fingerprint;
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

// ---------------------------------------------------------------------------
// ppi / similarity / affinity pipelines
// ---------------------------------------------------------------------------

struct PpiExample {
  std::string sequence_a;
  std::string sequence_b;
  std::vector<bool> labels;  // 7 interaction types
};

inline constexpr std::size_t kPpiTypes = 7;

inline std::vector<PpiExample> load_ppi_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open ppi file: " + path);
  std::vector<PpiExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
    PpiExample ex;
    ex.sequence_a = j.at("sequence_a").get<std::string>();
    ex.sequence_b = j.at("sequence_b").get<std::string>();
    for (const auto& v : j.at("labels")) ex.labels.push_back(v.get<int>() != 0);
    if (ex.labels.size() != kPpiTypes)
      throw ParseError("line " + std::to_string(lineno) + ": expected " +
                       std::to_string(kPpiTypes) + " labels");
    out.push_back(std::move(ex));
  }
  return out;
}

inline void write_ppi_jsonl(const std::vector<PpiExample>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open ppi file for writing: " + path);
  for (const auto& ex : examples) {
    nlohmann::json j;
    j["sequence_a"] = ex.sequence_a;
    j["sequence_b"] = ex.sequence_b;
    auto arr = nlohmann::json::array();
    for (const bool b : ex.labels) arr.push_back(b ? 1 : 0);
    j["labels"] = std::move(arr);
    out << j.dump() << '\n';
  }
}

struct PpiProbeConfig {
  std::size_t epochs = 40;
  double lr = 5e-2;
  std::uint64_t seed = 0;
  double heldout_fraction = 0.2;
};

// Logistic heads on the element-wise product of pooled embeddings; micro and
// macro F1 on the held-out split.
template <typename T>
std::vector<MetricReport> ppi_eval(const Parameters<T>& params, const ModelConfig& cfg,
                                   const std::vector<PpiExample>& examples,
                                   const PpiProbeConfig& probe_cfg, const std::string& fingerprint) {
  if (examples.size() < 2) throw ContractError("ppi_eval: need at least 2 examples");
  const std::size_t d = cfg.hidden_dim;
  std::vector<std::vector<float>> feats;
  feats.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto ha = pooled_embedding(params, cfg, ex.sequence_a);
    const auto hb = pooled_embedding(params, cfg, ex.sequence_b);
    std::vector<float> z(d);
    for (std::size_t j = 0; j < d; ++j) z[j] = static_cast<float>(ha[j] * hb[j]);
    feats.push_back(std::move(z));
  }
  const std::size_t n_train = std::max<std::size_t>(
      1, examples.size() - static_cast<std::size_t>(
             probe_cfg.heldout_fraction * static_cast<double>(examples.size())));

  Tensor<float> w = Tensor<float>::zeros({d, kPpiTypes}, true);
  Tensor<float> b = Tensor<float>::zeros({kPpiTypes}, true);
  {
    Rng rng(derive_seed(probe_cfg.seed, "ppi-probe"));
    for (auto& v : w.data()) v = static_cast<float>(rng.truncated_normal(0.02));
  }
  AdamSlots<float> mw, mb;
  mw.m.assign(w.numel(), 0.0f);
  mw.v.assign(w.numel(), 0.0f);
  mb.m.assign(b.numel(), 0.0f);
  mb.v.assign(b.numel(), 0.0f);

  std::vector<float> x_train, y_train;
  for (std::size_t i = 0; i < n_train; ++i) {
    for (const float v : feats[i]) x_train.push_back(v);
    for (std::size_t c = 0; c < kPpiTypes; ++c)
      y_train.push_back(examples[i].labels[c] ? 1.0f : 0.0f);
  }
  Tensor<float> x = Tensor<float>::from_data({n_train, d}, std::move(x_train));

  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < probe_cfg.epochs; ++epoch) {
    w.zero_grad();
    b.zero_grad();
    Graph<float> graph;
    {
      GraphScope<float> scope(graph);
      Tensor<float> logits = add_rowwise(matmul(x, w), b);
      Tensor<float> loss = bce_with_logits(reshape(logits, {n_train * kPpiTypes}), y_train);
      graph.backward(loss);
    }
    ++t;
    const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t));
    auto update = [&](Tensor<float>& param, AdamSlots<float>& slots) {
      const auto& g = param.grad();
      auto& data = param.data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        slots.m[i] = static_cast<float>(0.9 * slots.m[i] + 0.1 * g[i]);
        slots.v[i] = static_cast<float>(0.999 * slots.v[i] + 0.001 * g[i] * g[i]);
        data[i] -= static_cast<float>(probe_cfg.lr * (slots.m[i] / bc1) /
                                      (std::sqrt(slots.v[i] / bc2) + 1e-8));
      }
    };
    update(w, mw);
    update(b, mb);
  }

  const std::size_t n_held = examples.size() - n_train;
  BoolMat pred(n_held, kPpiTypes), truth(n_held, kPpiTypes);
  for (std::size_t i = 0; i < n_held; ++i) {
    const auto& z = feats[n_train + i];
    for (std::size_t c = 0; c < kPpiTypes; ++c) {
      double logit = b.data()[c];
      for (std::size_t j = 0; j < d; ++j) logit += z[j] * w.data()[j * kPpiTypes + c];
      pred.set(i, c, logit > 0.0);
      truth.set(i, c, examples[n_train + i].labels[c]);
    }
  }
  std::vector<MetricReport> reports;
  for (const bool micro : {true, false}) {
    MetricReport r;
    r.metric = micro ? "ppi_micro_f1" : "ppi_macro_f1";
    r.value = multilabel_f1(pred, truth, micro);
    r.params["heldout_examples"] = std::to_string(n_held);
    r.fingerprint = fingerprint;
    reports.push_back(std::move(r));
  }
  return reports;
}

// similarity input: protein_a TAB protein_b TAB ground_truth [TAB group]
struct SimilarityPair {
  std::string protein_a;
  std::string protein_b;
  double ground_truth = 0.0;
  std::string group = "all";
};

inline std::vector<SimilarityPair> load_similarity_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open similarity file: " + path);
  std::vector<SimilarityPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 3 && cols.size() != 4)
      throw ParseError("line " + std::to_string(lineno) + ": expected 3 or 4 columns");
    SimilarityPair p;
    p.protein_a = normalize_protein(cols[0]);
    p.protein_b = normalize_protein(cols[1]);
    try {
      p.ground_truth = std::stod(cols[2]);
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) + ": bad similarity value");
    }
    if (cols.size() == 4 && !cols[3].empty()) p.group = cols[3];
    out.push_back(std::move(p));
  }
  return out;
}

// Manhattan-similarity predictions (normalized by the max pairwise distance
// in the evaluated set) correlated against the ground truth per group.
template <typename T>
std::vector<MetricReport> similarity_eval(const Parameters<T>& params, const ModelConfig& cfg,
                                          const std::vector<SimilarityPair>& pairs,
                                          const std::string& fingerprint) {
  if (pairs.size() < 2) throw ContractError("similarity_eval: need at least 2 pairs");
  std::map<std::string, std::vector<double>> rep_cache;
  auto rep_of = [&](const std::string& seq) -> const std::vector<double>& {
    auto it = rep_cache.find(seq);
    if (it == rep_cache.end())
      it = rep_cache.emplace(seq, pooled_embedding(params, cfg, seq)).first;
    return it->second;
  };
  std::vector<double> distances(pairs.size());
  double normalizer = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    distances[i] = manhattan_distance(rep_of(pairs[i].protein_a), rep_of(pairs[i].protein_b));
    normalizer = std::max(normalizer, distances[i]);
  }
  if (normalizer <= 0.0) normalizer = 1.0;  // all representations identical

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    groups[pairs[i].group].first.push_back(1.0 - distances[i] / normalizer);
    groups[pairs[i].group].second.push_back(pairs[i].ground_truth);
  }
  std::vector<MetricReport> reports;
  for (const auto& [group, xy] : groups) {
    MetricReport r;
    r.metric = "similarity_spearman";
    const auto rho =
        xy.first.size() >= 2 ? spearman(xy.first, xy.second) : std::optional<double>{};
    r.value = rho.value_or(0.0);
    r.params["group"] = group;
    r.params["pairs"] = std::to_string(xy.first.size());
    r.params["normalizer"] = std::to_string(normalizer);
    if (!rho) r.params["undefined"] = "true";
    r.fingerprint = fingerprint;
    reports.push_back(std::move(r));
  }
  return reports;
}

// affinity input: protein_a TAB protein_b TAB value
struct AffinityPair {
  std::string protein_a;
  std::string protein_b;
  double value = 0.0;
};

inline std::vector<AffinityPair> load_affinity_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open affinity file: " + path);
  std::vector<AffinityPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw ParseError("line " + std::to_string(lineno) + ": expected 3 tab-separated columns");
    AffinityPair p;
    p.protein_a = normalize_protein(line.substr(0, t1));
    p.protein_b = normalize_protein(line.substr(t1 + 1, t2 - t1 - 1));
    try {
      p.value = std::stod(line.substr(t2 + 1));
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) + ": bad affinity value");
    }
    out.push_back(std::move(p));
  }
  return out;
}

// Ridge regression on the element-wise product of pooled embeddings,
// evaluated with deterministic k-fold MSE.
template <typename T>
std::vector<MetricReport> affinity_eval(const Parameters<T>& params, const ModelConfig& cfg,
                                        const std::vector<AffinityPair>& pairs, std::size_t folds,
                                        std::uint64_t seed, const std::string& fingerprint) {
  std::map<std::string, std::vector<double>> rep_cache;
  auto rep_of = [&](const std::string& seq) -> const std::vector<double>& {
    auto it = rep_cache.find(seq);
    if (it == rep_cache.end())
      it = rep_cache.emplace(seq, pooled_embedding(params, cfg, seq)).first;
    return it->second;
  };
  std::vector<std::vector<double>> features;
  std::vector<double> targets;
  for (const auto& p : pairs) {
    const auto& ha = rep_of(p.protein_a);
    const auto& hb = rep_of(p.protein_b);
    std::vector<double> z(ha.size());
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = ha[j] * hb[j];
    features.push_back(std::move(z));
    targets.push_back(p.value);
  }
  const KFoldResult result = kfold_mse(features, targets, folds, seed);
  std::vector<MetricReport> reports;
  MetricReport mean;
  mean.metric = "affinity_kfold_mse";
  mean.value = result.mean_mse;
  mean.params["folds"] = std::to_string(folds);
  mean.fingerprint = fingerprint;
  reports.push_back(std::move(mean));
  for (std::size_t f = 0; f < result.fold_mse.size(); ++f) {
    MetricReport r;
    r.metric = "affinity_fold_mse";
    r.value = result.fold_mse[f];
    r.params["fold"] = std::to_string(f);
    r.fingerprint = fingerprint;
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace keap
