// SPDX-License-Identifier: Apache-2.0
#include "citab/headers.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "citab/errors.hpp"
#include "citab/rng.hpp"

namespace citab {

namespace {

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> tokenize_lower(const std::string& name) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char raw : name) {
    const unsigned char c = static_cast<unsigned char>(raw);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

std::vector<double> token_unit_vector(const std::string& token, int d_h, uint64_t seed) {
  Rng rng(Rng::mix(seed, fnv1a64(token)));
  std::vector<double> v = rng.normal_vector(static_cast<size_t>(d_h));
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

HeaderEmbedding embed_header_hashed(const std::string& name, int d_h, uint64_t seed) {
  if (d_h < 1) throw ConfigError("embed_header_hashed: dimension must be >= 1");
  const std::vector<std::string> tokens = tokenize_lower(name);
  if (tokens.empty()) {
    throw ValueError("embed_header_hashed: header name '" + name + "' has no tokens");
  }
  std::vector<double> sum(static_cast<size_t>(d_h), 0.0);
  for (const auto& tok : tokens) {
    const std::vector<double> tv = token_unit_vector(tok, d_h, seed);
    for (int i = 0; i < d_h; ++i) sum[i] += tv[i];
  }
  for (double& x : sum) x /= static_cast<double>(tokens.size());
  double norm = l2_norm(sum);
  if (norm < 1e-12) {
    // vanishingly unlikely cancellation; hash the joined tokens instead
    std::string joined;
    for (const auto& t : tokens) joined += t + " ";
    sum = token_unit_vector(joined, d_h, seed);
    norm = l2_norm(sum);
  }
  for (double& x : sum) x /= norm;
  return {name, std::move(sum)};
}

HeaderEmbeddingTable::HeaderEmbeddingTable(const std::string& path, int d_h,
                                           uint64_t fallback_seed)
    : d_h_(d_h), fallback_seed_(fallback_seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open header embedding file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    {
      std::string cur;
      for (char c : line) {
        if (c == '\t') {
          fields.push_back(cur);
          cur.clear();
        } else {
          cur += c;
        }
      }
      fields.push_back(cur);
    }
    if (static_cast<int>(fields.size()) != d_h + 1) {
      throw IoError("header embedding file line " + std::to_string(line_no) + ": expected name + " +
                    std::to_string(d_h) + " values, got " + std::to_string(fields.size() - 1));
    }
    const std::string& name = fields[0];
    if (table_.count(name)) {
      throw IoError("header embedding file line " + std::to_string(line_no) + ": duplicate name '" +
                    name + "'");
    }
    std::vector<double> vec(static_cast<size_t>(d_h));
    for (int i = 0; i < d_h; ++i) {
      size_t used = 0;
      try {
        vec[i] = std::stod(fields[i + 1], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != fields[i + 1].size() || !std::isfinite(vec[i])) {
        throw IoError("header embedding file line " + std::to_string(line_no) +
                      ": cannot parse value '" + fields[i + 1] + "'");
      }
    }
    table_.emplace(name, std::move(vec));
  }
}

HeaderEmbedding HeaderEmbeddingTable::embed(const std::string& name) const {
  const auto it = table_.find(name);
  if (it != table_.end()) return {name, it->second};
  ++fallback_count_;
  fallback_names_.push_back(name);
  std::clog << "header embedding table: no entry for '" << name << "', using hashed fallback\n";
  return embed_header_hashed(name, d_h_, fallback_seed_);
}

void save_header_embeddings(const std::string& path,
                            const std::vector<HeaderEmbedding>& embeddings) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write header embedding file: " + path);
  char buf[40];
  for (const auto& e : embeddings) {
    out << e.column_name;
    for (double v : e.vector) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << '\t' << buf;
    }
    out << '\n';
  }
}

HeaderAdapter HeaderAdapter::init(int d_h, int d, Rng& rng) {
  return {Tensor::gaussian({d_h, d}, rng, 0.02, true), Tensor::zeros({1, d}, true)};
}

Tensor stack_header_embeddings(const std::vector<HeaderEmbedding>& embeddings) {
  if (embeddings.empty()) throw DimensionError("stack_header_embeddings: empty list");
  const int d_h = static_cast<int>(embeddings[0].vector.size());
  std::vector<double> data;
  data.reserve(embeddings.size() * static_cast<size_t>(d_h));
  for (const auto& e : embeddings) {
    if (static_cast<int>(e.vector.size()) != d_h) {
      throw DimensionError("stack_header_embeddings: inconsistent dimensions");
    }
    data.insert(data.end(), e.vector.begin(), e.vector.end());
  }
  return Tensor({static_cast<int>(embeddings.size()), d_h}, std::move(data));
}

Tensor adapt(const Tensor& stacked_headers, const HeaderAdapter& adapter) {
  return linear(stacked_headers, adapter.weight, adapter.bias);
}

double mean_pairwise_cosine(const std::vector<std::vector<double>>& vectors) {
  if (vectors.size() < 2) {
    throw ValueError("mean_pairwise_cosine: need at least 2 vectors");
  }
  std::vector<double> norms(vectors.size());
  for (size_t i = 0; i < vectors.size(); ++i) {
    norms[i] = l2_norm(vectors[i]);
    if (norms[i] < 1e-15) throw ValueError("mean_pairwise_cosine: zero vector at index " +
                                           std::to_string(i));
  }
  double sum = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < vectors.size(); ++i) {
    for (size_t j = i + 1; j < vectors.size(); ++j) {
      double dot = 0.0;
      for (size_t k = 0; k < vectors[i].size(); ++k) dot += vectors[i][k] * vectors[j][k];
      sum += dot / (norms[i] * norms[j]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

}  // namespace citab
