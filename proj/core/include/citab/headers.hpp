// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "citab/tensor.hpp"

namespace citab {

class Rng;

struct HeaderEmbedding {
  std::string column_name;
  std::vector<double> vector;  // dimension D_h
};

/// Deterministic hashed bag-of-tokens embedding for a column header: the
/// name is lowercased and split on non-alphanumerics, each token is hashed
/// to a pseudo-random unit vector, and the token vectors are averaged and
/// L2-renormalized. Stands in for a frozen language model; names sharing
/// tokens land near each other, names sharing none are near-orthogonal.
HeaderEmbedding embed_header_hashed(const std::string& name, int d_h, uint64_t seed);

/// Pluggable source of frozen header embeddings.
class HeaderEmbedder {
 public:
  virtual ~HeaderEmbedder() = default;
  virtual HeaderEmbedding embed(const std::string& name) const = 0;
  virtual int dimension() const = 0;
};

class HashedHeaderEmbedder final : public HeaderEmbedder {
 public:
  HashedHeaderEmbedder(int d_h, uint64_t seed) : d_h_(d_h), seed_(seed) {}
  HeaderEmbedding embed(const std::string& name) const override {
    return embed_header_hashed(name, d_h_, seed_);
  }
  int dimension() const override { return d_h_; }

 private:
  int d_h_;
  uint64_t seed_;
};

/// File-backed embedding table (one record per line, tab-separated:
/// name, then D_h decimal floats; '#' lines are comments). Lookups of
/// absent names fall back to the hashed embedder and are counted.
class HeaderEmbeddingTable final : public HeaderEmbedder {
 public:
  HeaderEmbeddingTable(const std::string& path, int d_h, uint64_t fallback_seed);

  HeaderEmbedding embed(const std::string& name) const override;
  int dimension() const override { return d_h_; }

  size_t size() const { return table_.size(); }
  int fallback_count() const { return fallback_count_; }
  const std::vector<std::string>& fallback_names() const { return fallback_names_; }

 private:
  int d_h_;
  uint64_t fallback_seed_;
  std::unordered_map<std::string, std::vector<double>> table_;
  mutable int fallback_count_ = 0;
  mutable std::vector<std::string> fallback_names_;
};

/// Writes embeddings in the table file format with 17 significant digits,
/// enough for an exact decimal round trip.
void save_header_embeddings(const std::string& path, const std::vector<HeaderEmbedding>& embeddings);

/// Trainable linear adapter aligning header space D_h to model space D.
struct HeaderAdapter {
  Tensor weight;  // D_h x D
  Tensor bias;    // 1 x D

  static HeaderAdapter init(int d_h, int d, Rng& rng);
};

/// Stacks per-column embeddings into a constant C_t x D_h tensor (base
/// embeddings are frozen; only the adapter trains).
Tensor stack_header_embeddings(const std::vector<HeaderEmbedding>& embeddings);

/// h -> h * W + b, differentiable through the adapter.
Tensor adapt(const Tensor& stacked_headers, const HeaderAdapter& adapter);

/// Mean cosine similarity over all unordered distinct pairs.
double mean_pairwise_cosine(const std::vector<std::vector<double>>& vectors);

}  // namespace citab
