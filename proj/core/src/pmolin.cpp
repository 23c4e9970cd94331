// SPDX-License-Identifier: Apache-2.0
#include "citab/pmolin.hpp"

#include <cstdio>
#include <fstream>

#include "citab/errors.hpp"
#include "citab/rng.hpp"

namespace citab {

PMoLinParams PMoLinParams::init(int d, int hidden, int experts, Rng& rng) {
  if (experts < 1) throw ConfigError("pmolin: expert count must be >= 1");
  if (d < 1 || hidden < 1) throw ConfigError("pmolin: dimensions must be >= 1");
  PMoLinParams p;
  p.prototypes = Tensor::gaussian({experts, d}, rng, 0.02, true);
  p.experts.reserve(experts);
  for (int e = 0; e < experts; ++e) {
    p.experts.push_back({Tensor::gaussian({d, hidden}, rng, 0.02, true),
                         Tensor::zeros({1, hidden}, true),
                         Tensor::gaussian({hidden, d}, rng, 0.02, true),
                         Tensor::zeros({1, d}, true)});
  }
  return p;
}

Tensor routing_weights(const Tensor& f_in, const Tensor& prototypes) {
  return softmax_rows(matmul(f_in, transpose(prototypes)));
}

Tensor pmolin_forward(const Tensor& f_in, const PMoLinParams& params, RoutingCollector* collector,
                      int layer, int valid_tokens) {
  const int e_count = params.expert_count();
  if (e_count < 1) throw ConfigError("pmolin_forward: no experts");
  const Tensor weights = routing_weights(f_in, params.prototypes);

  if (collector) {
    const int tokens = valid_tokens < 0 ? f_in.rows() : valid_tokens;
    RoutingRecord rec;
    rec.layer = layer;
    rec.tokens = tokens;
    rec.experts = e_count;
    rec.weights.assign(weights.values().begin(),
                       weights.values().begin() + static_cast<size_t>(tokens) * e_count);
    rec.argmax.resize(tokens);
    for (int t = 0; t < tokens; ++t) {
      int best = 0;
      for (int e = 1; e < e_count; ++e) {
        if (rec.weights[static_cast<size_t>(t) * e_count + e] >
            rec.weights[static_cast<size_t>(t) * e_count + best]) {
          best = e;
        }
      }
      rec.argmax[t] = best;
    }
    collector->add(std::move(rec));
  }

  Tensor out;
  for (int e = 0; e < e_count; ++e) {
    const ExpertFFN& ffn = params.experts[e];
    const Tensor expert_out = linear(gelu(linear(f_in, ffn.w1, ffn.b1)), ffn.w2, ffn.b2);
    const Tensor weighted = scale_rows(expert_out, slice_cols(weights, e, e + 1));
    out = e == 0 ? weighted : add(out, weighted);
  }
  return out;
}

void ExpertUsage::add(const RoutingRecord& rec, const std::vector<std::string>& column_names) {
  if (rec.tokens > static_cast<int>(column_names.size()) + 1) {
    throw DimensionError("expert usage: record has " + std::to_string(rec.tokens) +
                         " tokens but only " + std::to_string(column_names.size()) +
                         " column names");
  }
  if (experts_ == 0) experts_ = rec.experts;
  if (experts_ != rec.experts) throw DimensionError("expert usage: mixed expert counts");
  for (int t = 1; t < rec.tokens; ++t) {  // token 0 is the class token
    auto& row = counts_[column_names[t - 1]];
    if (row.empty()) row.assign(experts_, 0);
    row[rec.argmax[t]] += 1;
  }
}

std::map<std::string, std::vector<double>> ExpertUsage::ratios() const {
  if (counts_.empty()) throw StateError("expert usage: no routing records collected");
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, row] : counts_) {
    long total = 0;
    for (long c : row) total += c;
    std::vector<double> r(row.size());
    for (size_t e = 0; e < row.size(); ++e) r[e] = static_cast<double>(row[e]) / total;
    out.emplace(name, std::move(r));
  }
  return out;
}

void ExpertUsage::write_csv(const std::string& path) const {
  const auto r = ratios();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write expert histogram: " + path);
  out << "column,expert_index,ratio\n";
  char buf[40];
  for (const auto& [name, row] : r) {
    for (size_t e = 0; e < row.size(); ++e) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[e]);
      out << name << ',' << e << ',' << buf << '\n';
    }
  }
}

std::map<std::string, std::vector<double>> ExpertUsage::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open expert histogram: " + path);
  std::string line;
  std::getline(in, line);  // header
  std::map<std::string, std::vector<double>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t c1 = line.rfind(',');
    const size_t c0 = line.rfind(',', c1 - 1);
    if (c0 == std::string::npos || c1 == std::string::npos) {
      throw IoError("malformed histogram line: " + line);
    }
    const std::string name = line.substr(0, c0);
    const int expert = std::stoi(line.substr(c0 + 1, c1 - c0 - 1));
    const double ratio = std::stod(line.substr(c1 + 1));
    auto& row = out[name];
    if (static_cast<int>(row.size()) <= expert) row.resize(expert + 1, 0.0);
    row[expert] = ratio;
  }
  return out;
}

}  // namespace citab
