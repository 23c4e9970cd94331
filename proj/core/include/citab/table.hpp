// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace citab {

enum class ColumnKind { kContinuous, kCategorical };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kContinuous;
  std::vector<std::string> categories;  // categorical only, >= 2 entries
};

struct CohortSchema {
  std::string cohort_id;
  std::vector<ColumnSpec> columns;

  int column_count() const { return static_cast<int>(columns.size()); }
  void validate() const;

  static CohortSchema from_json(const nlohmann::json& doc);
  static CohortSchema load(const std::string& path);  // TOML document
  std::string to_toml() const;
};

struct NormStats {
  double mean = 0.0;
  double stddev = 1.0;
};

/// One heterogeneous table: raw or normalized cell values in schema column
/// order plus a presence mask (false = missing, stored value 0). Immutable
/// after construction by convention; normalize() returns a new Cohort.
struct Cohort {
  CohortSchema schema;
  int n_rows = 0;
  std::vector<double> values;    // n_rows x C_t, row-major
  std::vector<bool> presence;    // same layout
  std::vector<int> labels;       // empty when unlabeled
  std::vector<NormStats> norm_stats;  // per column; identity for categorical
  bool normalized = false;

  double value(int row, int col) const;
  bool present(int row, int col) const;
};

/// Parse a comma-separated file against the schema. The header row may list
/// the schema's columns in any order; cells are reordered to schema order.
/// Empty cells become (presence=false, value=0); categorical strings map to
/// their 0-based index in the spec's category order.
Cohort load_cohort(const std::string& path, const CohortSchema& schema);

/// Per continuous column: observed cells -> (x - mean) / std using the
/// population std over observed cells. Missing cells stay 0, categorical
/// columns are untouched. Columns with no observed cells keep stats (0, 1);
/// columns with std < 1e-12 are treated as constant (values -> 0, std
/// recorded as 1).
Cohort normalize(const Cohort& cohort);

/// Normalized values and presence mask for one row, in schema order.
std::pair<std::vector<double>, std::vector<bool>> encode_row(const Cohort& cohort, int row);

}  // namespace citab
