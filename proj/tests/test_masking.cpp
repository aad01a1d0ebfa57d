#include <catch2/catch_amalgamated.hpp>

#include "keap/data.hpp"
#include "keap/masking.hpp"

using namespace keap;
using Catch::Approx;

namespace {

TokenBatch batch_of(const std::vector<std::string>& proteins) {
  KnowledgeGraph kg;
  for (const auto& p : proteins) kg.add({p, "relation", "attribute"});
  TextVocabulary vocab = build_text_vocab(kg);
  std::vector<std::size_t> idx(proteins.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_token_batch(kg, idx, vocab, TokenizerConfig{});
}

}  // namespace

TEST_CASE("apply_masking selects the rounded ratio per sequence") {
  TokenBatch batch = batch_of({std::string(100, 'A')});
  MaskedBatch mb = apply_masking(batch, 0.2, 1);
  std::size_t selected = 0;
  for (const auto flag : mb.selection.v)
    if (flag) ++selected;
  CHECK(selected == 20);
}

TEST_CASE("apply_masking floors the selection at one") {
  TokenBatch batch = batch_of({"A"});
  MaskedBatch mb = apply_masking(batch, 0.2, 1);
  std::size_t selected = 0;
  for (const auto flag : mb.selection.v)
    if (flag) ++selected;
  CHECK(selected == 1);
}

TEST_CASE("labels, selection, and specials are consistent") {
  TokenBatch batch = batch_of({"ACDEFGHIKLMNPQRS", "WY"});
  MaskedBatch mb = apply_masking(batch, 0.25, 3);
  for (std::size_t r = 0; r < mb.labels.rows; ++r)
    for (std::size_t c = 0; c < mb.labels.cols; ++c) {
      const bool selected = mb.selection.at(r, c);
      CHECK((mb.labels.at(r, c) != MaskedBatch::kIgnoreLabel) == selected);
      const std::int32_t original = batch.protein.at(r, c);
      if (!Vocabulary::is_residue_id(original)) CHECK_FALSE(selected);
      if (selected) CHECK(mb.labels.at(r, c) == original);
      if (!selected) CHECK(mb.corrupted_protein.at(r, c) == original);
    }
}

TEST_CASE("fixed seed reproduces the masked batch exactly") {
  TokenBatch batch = batch_of({"ACDEFGHIKLMNPQRSTVWY", "MKTAYIAKQR"});
  MaskedBatch a = apply_masking(batch, 0.2, 99);
  MaskedBatch b = apply_masking(batch, 0.2, 99);
  CHECK(a.corrupted_protein.v == b.corrupted_protein.v);
  CHECK(a.labels.v == b.labels.v);
  CHECK(a.selection.v == b.selection.v);
}

TEST_CASE("random replacement only draws residue ids") {
  TokenBatch batch = batch_of({std::string(500, 'A')});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MaskedBatch mb = apply_masking(batch, 0.5, seed);
    for (std::size_t c = 0; c < mb.corrupted_protein.cols; ++c) {
      const std::int32_t id = mb.corrupted_protein.at(0, c);
      const bool ok = Vocabulary::is_residue_id(id) || id == special::kMask ||
                      id == special::kCls || id == special::kSep || id == special::kPad;
      CHECK(ok);
      if (mb.selection.at(0, c))
        CHECK((Vocabulary::is_residue_id(id) || id == special::kMask));
    }
  }
}

TEST_CASE("corruption proportions approach 80/10/10 and the ratio holds") {
  // ~2000 sequences x 64 residues > 1e5 eligible tokens
  std::vector<std::string> proteins(2000, std::string(64, 'C'));
  TokenBatch batch = batch_of(proteins);
  MaskedBatch mb = apply_masking(batch, 0.2, 12345);

  std::size_t eligible = 0, selected = 0, masked = 0, kept = 0, randomized = 0;
  for (std::size_t r = 0; r < mb.labels.rows; ++r)
    for (std::size_t c = 0; c < mb.labels.cols; ++c) {
      if (Vocabulary::is_residue_id(batch.protein.at(r, c))) ++eligible;
      if (!mb.selection.at(r, c)) continue;
      ++selected;
      const std::int32_t corrupted = mb.corrupted_protein.at(r, c);
      if (corrupted == special::kMask) ++masked;
      else if (corrupted == batch.protein.at(r, c)) ++kept;
      else ++randomized;
    }
  REQUIRE(eligible >= 100000);
  const double sel_frac = static_cast<double>(selected) / static_cast<double>(eligible);
  CHECK(sel_frac == Approx(0.2).margin(0.01));
  const double n = static_cast<double>(selected);
  CHECK(static_cast<double>(masked) / n == Approx(0.8).margin(0.02));
  // "random residue" draws can coincide with the original and then count as
  // kept; with 25 residues that shifts mass 0.1/25 = 0.004, inside the margin.
  CHECK(static_cast<double>(randomized) / n == Approx(0.1).margin(0.02));
  CHECK(static_cast<double>(kept) / n == Approx(0.1).margin(0.02));
}

TEST_CASE("ratio bounds are enforced") {
  TokenBatch batch = batch_of({"ACD"});
  CHECK_THROWS_AS(apply_masking(batch, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(apply_masking(batch, 1.0, 1), ConfigError);
}

TEST_CASE("sequences with zero eligible residues contribute no selections") {
  // construct a batch row of only specials by tokenizing then blanking
  TokenBatch batch = batch_of({"ACD"});
  for (std::size_t c = 0; c < batch.protein.cols; ++c) {
    if (Vocabulary::is_residue_id(batch.protein.at(0, c))) {
      batch.protein.at(0, c) = special::kPad;
      batch.protein_pad.set(0, c, true);
    }
  }
  MaskedBatch mb = apply_masking(batch, 0.2, 1);
  for (const auto flag : mb.selection.v) CHECK_FALSE(flag);
}
