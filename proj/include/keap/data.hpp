#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "keap/errors.hpp"
#include "keap/rng.hpp"
#include "keap/tensor.hpp"
#include "keap/vocab.hpp"

namespace keap {

// One (protein sequence, relation text, attribute text) record.
struct Triplet {
  std::string protein;
  std::string relation;
  std::string attribute;
};

// Ordered triplet collection with a protein -> positions index.
class KnowledgeGraph {
 public:
  void add(Triplet t) {
    protein_index_[t.protein].push_back(triplets_.size());
    triplets_.push_back(std::move(t));
  }

  const std::vector<Triplet>& triplets() const { return triplets_; }
  std::size_t size() const { return triplets_.size(); }
  bool empty() const { return triplets_.empty(); }
  const Triplet& operator[](std::size_t i) const { return triplets_[i]; }

  const std::vector<std::size_t>* positions_of(const std::string& protein) const {
    auto it = protein_index_.find(protein);
    return it == protein_index_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, std::vector<std::size_t>>& protein_index() const {
    return protein_index_;
  }

 private:
  std::vector<Triplet> triplets_;
  std::map<std::string, std::vector<std::size_t>> protein_index_;
};

enum class ResiduePolicy { kReject, kMapToX };

struct LoadReport {
  std::size_t loaded = 0;
  std::vector<std::size_t> rejected_lines;  // 1-based line numbers
  bool empty_file = false;
};

inline std::string normalize_protein(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

// Parses UTF-8 TSV with columns protein<TAB>relation<TAB>attribute.
// A line with the wrong column count is a hard parse error; invalid residues
// follow the policy (skip the line or map the residue to X).
inline KnowledgeGraph load_triplets(std::istream& in, ResiduePolicy policy,
                                    LoadReport* report = nullptr) {
  KnowledgeGraph kg;
  LoadReport local;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    const auto t3 = t2 == std::string::npos ? std::string::npos : line.find('\t', t2 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos || t3 != std::string::npos)
      throw ParseError("line " + std::to_string(lineno) + ": expected 3 tab-separated columns");
    std::string protein = normalize_protein(line.substr(0, t1));
    std::string relation = line.substr(t1 + 1, t2 - t1 - 1);
    std::string attribute = line.substr(t2 + 1);

    bool bad = protein.empty();
    for (char& c : protein) {
      if (Vocabulary::is_residue_char(c)) continue;
      if (policy == ResiduePolicy::kMapToX) {
        c = 'X';
      } else {
        bad = true;
        break;
      }
    }
    if (bad) {
      local.rejected_lines.push_back(lineno);
      continue;
    }
    kg.add({std::move(protein), std::move(relation), std::move(attribute)});
    ++local.loaded;
  }
  local.empty_file = (kg.empty() && local.rejected_lines.empty());
  if (report) *report = local;
  return kg;
}

inline KnowledgeGraph load_triplets_file(const std::string& path, ResiduePolicy policy,
                                         LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open triplet file: " + path);
  return load_triplets(in, policy, report);
}

struct RemovalReport {
  std::size_t removed_triplets = 0;
  std::size_t retained_triplets = 0;
  double retained_fraction = 1.0;
};

// Drops every triplet whose protein appears in the holdout set.
inline std::pair<KnowledgeGraph, RemovalReport> filter_leakage(
    const KnowledgeGraph& kg, const std::set<std::string>& holdout) {
  KnowledgeGraph out;
  RemovalReport report;
  for (const auto& t : kg.triplets()) {
    if (holdout.contains(t.protein)) {
      ++report.removed_triplets;
    } else {
      out.add(t);
    }
  }
  report.retained_triplets = out.size();
  report.retained_fraction =
      kg.empty() ? 1.0 : static_cast<double>(out.size()) / static_cast<double>(kg.size());
  return {std::move(out), report};
}

inline std::set<std::string> load_holdout_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open holdout file: " + path);
  std::set<std::string> holdout;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string seq = normalize_protein(line);
    if (!seq.empty()) holdout.insert(seq);
  }
  return holdout;
}

// ---------------------------------------------------------------------------
// tokenization
// ---------------------------------------------------------------------------

struct TokenizerConfig {
  std::size_t max_protein_len = 128;
  std::size_t max_relation_len = 16;
  std::size_t max_attribute_len = 64;
};

// CLS + residues + SEP, truncated to max_len with the SEP kept.
inline std::vector<std::int32_t> tokenize_protein(std::string_view seq, std::size_t max_len) {
  if (seq.empty()) throw ContractError("tokenize_protein: empty sequence");
  if (max_len < 3) throw ConfigError("tokenize_protein: max length must be >= 3");
  std::vector<std::int32_t> ids;
  ids.reserve(std::min(seq.size() + 2, max_len));
  ids.push_back(special::kCls);
  for (char c : seq) {
    if (ids.size() == max_len - 1) break;
    ids.push_back(Vocabulary::encode_residue(c));
  }
  ids.push_back(special::kSep);
  return ids;
}

inline std::vector<std::int32_t> tokenize_text(std::string_view text, const TextVocabulary& vocab,
                                               std::size_t max_len) {
  if (text.empty()) throw ContractError("tokenize_text: empty text");
  if (max_len < 3) throw ConfigError("tokenize_text: max length must be >= 3");
  std::vector<std::int32_t> ids;
  ids.push_back(special::kCls);
  for (const auto& w : TextVocabulary::split_words(text)) {
    if (ids.size() == max_len - 1) break;
    ids.push_back(vocab.encode_word(w));
  }
  ids.push_back(special::kSep);
  return ids;
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

// Padded id matrices for one batch. Pad masks are true exactly where the id
// is PAD; valid_* helpers give the inverted masks attention expects.
struct TokenBatch {
  IdMat protein;
  IdMat relation;
  IdMat attribute;
  BoolMat protein_pad;
  BoolMat relation_pad;
  BoolMat attribute_pad;
  std::vector<std::size_t> triplet_indices;  // positions into the source graph

  std::size_t size() const { return protein.rows; }

  static BoolMat invert(const BoolMat& m) {
    BoolMat out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.v.size(); ++i) out.v[i] = m.v[i] ? 0 : 1;
    return out;
  }
  BoolMat protein_valid() const { return invert(protein_pad); }
  BoolMat relation_valid() const { return invert(relation_pad); }
  BoolMat attribute_valid() const { return invert(attribute_pad); }
};

namespace detail {

inline void fill_padded(IdMat& mat, BoolMat& pad, const std::vector<std::vector<std::int32_t>>& rows) {
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.size());
  mat = IdMat(rows.size(), width, special::kPad);
  pad = BoolMat(rows.size(), width, true);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      mat.at(i, j) = rows[i][j];
      pad.set(i, j, false);
    }
}

}  // namespace detail

inline TokenBatch make_token_batch(const KnowledgeGraph& kg,
                                   const std::vector<std::size_t>& indices,
                                   const TextVocabulary& text_vocab, const TokenizerConfig& cfg) {
  std::vector<std::vector<std::int32_t>> prot, rel, attr;
  prot.reserve(indices.size());
  for (const std::size_t idx : indices) {
    const Triplet& t = kg[idx];
    prot.push_back(tokenize_protein(t.protein, cfg.max_protein_len));
    rel.push_back(tokenize_text(t.relation, text_vocab, cfg.max_relation_len));
    attr.push_back(tokenize_text(t.attribute, text_vocab, cfg.max_attribute_len));
  }
  TokenBatch b;
  detail::fill_padded(b.protein, b.protein_pad, prot);
  detail::fill_padded(b.relation, b.relation_pad, rel);
  detail::fill_padded(b.attribute, b.attribute_pad, attr);
  b.triplet_indices = indices;
  return b;
}

// One epoch of batches in an order fixed by the seed; the final partial batch
// is emitted.
inline std::vector<TokenBatch> make_batches(const KnowledgeGraph& kg, std::size_t batch_size,
                                            std::uint64_t shuffle_seed,
                                            const TextVocabulary& text_vocab,
                                            const TokenizerConfig& cfg) {
  if (batch_size < 1) throw ConfigError("make_batches: batch size must be >= 1");
  std::vector<std::size_t> order(kg.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(shuffle_seed);
  rng.shuffle(order);
  std::vector<TokenBatch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, order.size());
    batches.push_back(make_token_batch(
        kg, std::vector<std::size_t>(order.begin() + start, order.begin() + end), text_vocab, cfg));
  }
  return batches;
}

// Batch for the triplet-matching objective: a configured fraction of rows has
// its attribute replaced by a uniformly random different one from the graph.
struct MatchBatch {
  TokenBatch batch;
  std::vector<std::uint8_t> match_labels;  // 1 = genuine triplet, 0 = swapped
};

inline MatchBatch make_match_batch(const KnowledgeGraph& kg,
                                   const std::vector<std::size_t>& indices,
                                   const TextVocabulary& text_vocab, const TokenizerConfig& cfg,
                                   double swap_fraction, std::uint64_t seed) {
  if (kg.size() < 2)
    throw ContractError("make_match_batch: a single-triplet graph cannot produce a mismatch");
  if (!(swap_fraction >= 0.0 && swap_fraction <= 1.0))
    throw ConfigError("make_match_batch: swap fraction outside [0,1]");
  Rng rng(seed);
  std::vector<std::size_t> order(indices.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_swap = static_cast<std::size_t>(
      std::min<double>(std::floor(swap_fraction * static_cast<double>(indices.size()) + 0.5),
                       static_cast<double>(indices.size())));

  MatchBatch out;
  out.match_labels.assign(indices.size(), 1);
  std::vector<std::vector<std::int32_t>> prot, rel, attr;
  std::vector<const Triplet*> rows(indices.size());
  std::vector<std::string> swapped_attr(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) rows[i] = &kg[indices[i]];
  for (std::size_t s = 0; s < n_swap; ++s) {
    const std::size_t row = order[s];
    std::size_t other = static_cast<std::size_t>(rng.uniform_int(kg.size() - 1));
    if (other >= indices[row]) ++other;  // uniform over all triplets except this one
    swapped_attr[row] = kg[other].attribute;
    out.match_labels[row] = 0;
  }
  for (std::size_t i = 0; i < indices.size(); ++i) {
    prot.push_back(tokenize_protein(rows[i]->protein, cfg.max_protein_len));
    rel.push_back(tokenize_text(rows[i]->relation, text_vocab, cfg.max_relation_len));
    attr.push_back(tokenize_text(out.match_labels[i] ? rows[i]->attribute : swapped_attr[i],
                                 text_vocab, cfg.max_attribute_len));
  }
  detail::fill_padded(out.batch.protein, out.batch.protein_pad, prot);
  detail::fill_padded(out.batch.relation, out.batch.relation_pad, rel);
  detail::fill_padded(out.batch.attribute, out.batch.attribute_pad, attr);
  out.batch.triplet_indices = indices;
  return out;
}

inline TextVocabulary build_text_vocab(const KnowledgeGraph& kg, std::size_t min_count = 1) {
  std::vector<std::string> corpus;
  corpus.reserve(kg.size() * 2);
  for (const auto& t : kg.triplets()) {
    corpus.push_back(t.relation);
    corpus.push_back(t.attribute);
  }
  return TextVocabulary::build(corpus, min_count);
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

enum class SynthMode { kKnowledgeDependent, kRandom };

inline constexpr std::string_view kSynthRelation = "has residue sequence";

// knowledge_dependent: the attribute spells the protein sequence as
// space-separated lowercase residue letters; random: the attribute spells an
// unrelated sequence of the same length.
inline KnowledgeGraph generate_synthetic_kg(std::size_t n, std::size_t seq_len, SynthMode mode,
                                            std::uint64_t seed) {
  if (n < 1) throw ConfigError("generate_synthetic_kg: n must be >= 1");
  if (seq_len < 1) throw ConfigError("generate_synthetic_kg: seq_len must be >= 1");
  constexpr std::string_view canonical = "ACDEFGHIKLMNPQRSTVWY";
  Rng rng(seed);
  KnowledgeGraph kg;
  auto draw_seq = [&]() {
    std::string s(seq_len, 'A');
    for (auto& c : s) c = canonical[rng.uniform_int(canonical.size())];
    return s;
  };
  auto spell = [](const std::string& s) {
    std::string out;
    out.reserve(s.size() * 2);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out.push_back(' ');
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i]))));
    }
    return out;
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::string protein = draw_seq();
    std::string attribute =
        mode == SynthMode::kKnowledgeDependent ? spell(protein) : spell(draw_seq());
    kg.add({std::move(protein), std::string(kSynthRelation), std::move(attribute)});
  }
  return kg;
}

inline void write_triplets_file(const KnowledgeGraph& kg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open output file: " + path);
  for (const auto& t : kg.triplets()) out << t.protein << '\t' << t.relation << '\t' << t.attribute << '\n';
}

}  // namespace keap
