// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "citab/tensor.hpp"

namespace citab {

class Rng;

struct ExpertFFN {
  Tensor w1;  // D x H
  Tensor b1;  // 1 x H
  Tensor w2;  // H x D
  Tensor b2;  // 1 x D
};

/// Prototype-guided mixture-of-linear layer: E learnable prototype rows
/// route every token through E feed-forward experts with dense softmax
/// weights. All experts run on all tokens; the routing path itself is
/// differentiable through the prototypes.
struct PMoLinParams {
  Tensor prototypes;  // E x D
  std::vector<ExpertFFN> experts;

  int expert_count() const { return static_cast<int>(experts.size()); }
  static PMoLinParams init(int d, int hidden, int experts, Rng& rng);
};

/// Routing weights W = softmax_rows(f_in * P^T). Raw dot products, no
/// sqrt(D) scaling.
Tensor routing_weights(const Tensor& f_in, const Tensor& prototypes);

/// Snapshot of one layer's routing decisions for the valid tokens of one
/// sample (class token first). Rows sum to 1; argmax ties break to the
/// lowest expert index.
struct RoutingRecord {
  int layer = 0;
  int tokens = 0;
  int experts = 0;
  std::vector<double> weights;  // tokens x experts, row-major
  std::vector<int> argmax;      // per token
};

class RoutingCollector {
 public:
  void add(RoutingRecord rec) { records_.push_back(std::move(rec)); }
  const std::vector<RoutingRecord>& records() const { return records_; }
  void clear() { records_.clear(); }
  bool empty() const { return records_.empty(); }

 private:
  std::vector<RoutingRecord> records_;
};

/// Dense soft mixture per Eq-style routing: every expert FFN
/// (linear -> GELU -> linear) is evaluated on all tokens and combined per
/// token with the routing weights. When a collector is given, the routing
/// rows of the first `valid_tokens` tokens are recorded (-1 = all).
Tensor pmolin_forward(const Tensor& f_in, const PMoLinParams& params,
                      RoutingCollector* collector = nullptr, int layer = 0,
                      int valid_tokens = -1);

/// Argmax-expert usage accumulated over routing records, grouped by column
/// name. Token 0 of each record is the class token and is skipped; token
/// j >= 1 maps to column_names[j - 1].
class ExpertUsage {
 public:
  void add(const RoutingRecord& rec, const std::vector<std::string>& column_names);

  /// Per column: fraction of tokens whose argmax picked each expert.
  /// Ratios per column sum to 1. Throws StateError when nothing was added.
  std::map<std::string, std::vector<double>> ratios() const;

  /// Lines of `column,expert_index,ratio`.
  void write_csv(const std::string& path) const;
  static std::map<std::string, std::vector<double>> read_csv(const std::string& path);

  bool empty() const { return counts_.empty(); }

 private:
  int experts_ = 0;
  std::map<std::string, std::vector<long>> counts_;
};

}  // namespace citab
