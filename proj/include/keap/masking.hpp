#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "keap/data.hpp"
#include "keap/rng.hpp"
#include "keap/vocab.hpp"

namespace keap {

// MLM corruption of the protein stream. Labels hold the original id at
// selected positions and kIgnoreLabel elsewhere; knowledge streams pass
// through untouched.
struct MaskedBatch {
  static constexpr std::int32_t kIgnoreLabel = -1;

  IdMat corrupted_protein;
  IdMat labels;
  BoolMat selection;
  IdMat relation;
  IdMat attribute;
  BoolMat protein_pad;
  BoolMat relation_pad;
  BoolMat attribute_pad;
};

// Per sequence: round-half-up(mask_ratio * eligible) positions, at least one
// when any residue is eligible, drawn without replacement. Each selected
// position becomes MASK with p=0.8, a uniformly random residue with p=0.1,
// or stays unchanged with p=0.1.
inline MaskedBatch apply_masking(const TokenBatch& batch, double mask_ratio, std::uint64_t seed) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
    throw ConfigError("apply_masking: mask ratio must be in (0,1), got " +
                      std::to_string(mask_ratio));
  MaskedBatch out;
  out.corrupted_protein = batch.protein;
  out.labels = IdMat(batch.protein.rows, batch.protein.cols, MaskedBatch::kIgnoreLabel);
  out.selection = BoolMat(batch.protein.rows, batch.protein.cols, false);
  out.relation = batch.relation;
  out.attribute = batch.attribute;
  out.protein_pad = batch.protein_pad;
  out.relation_pad = batch.relation_pad;
  out.attribute_pad = batch.attribute_pad;

  Rng rng(seed);
  for (std::size_t r = 0; r < batch.protein.rows; ++r) {
    std::vector<std::size_t> eligible;
    for (std::size_t c = 0; c < batch.protein.cols; ++c)
      if (Vocabulary::is_residue_id(batch.protein.at(r, c))) eligible.push_back(c);
    if (eligible.empty()) continue;
    std::size_t m = static_cast<std::size_t>(
        std::floor(mask_ratio * static_cast<double>(eligible.size()) + 0.5));
    m = std::max<std::size_t>(m, 1);
    m = std::min(m, eligible.size());
    // partial Fisher-Yates: the first m entries are the selection
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(eligible.size() - i));
      std::swap(eligible[i], eligible[j]);
    }
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t c = eligible[i];
      out.selection.set(r, c, true);
      out.labels.at(r, c) = batch.protein.at(r, c);
      const double u = rng.uniform();
      if (u < 0.8) {
        out.corrupted_protein.at(r, c) = special::kMask;
      } else if (u < 0.9) {
        out.corrupted_protein.at(r, c) =
            Vocabulary::kFirstResidue +
            static_cast<std::int32_t>(rng.uniform_int(Vocabulary::kNumResidues));
      }
      // else: keep the original id
    }
  }
  return out;
}

}  // namespace keap
