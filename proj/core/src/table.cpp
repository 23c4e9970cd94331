// SPDX-License-Identifier: Apache-2.0
#include "citab/table.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "citab/config.hpp"
#include "citab/errors.hpp"

namespace citab {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

std::string toml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

}  // namespace

void CohortSchema::validate() const {
  if (columns.empty()) throw ConfigError("schema '" + cohort_id + "' has no columns");
  std::unordered_set<std::string> seen;
  for (const auto& col : columns) {
    if (col.name.empty()) throw ConfigError("schema '" + cohort_id + "' has an unnamed column");
    if (!seen.insert(col.name).second) {
      throw ConfigError("schema '" + cohort_id + "' repeats column '" + col.name + "'");
    }
    if (col.kind == ColumnKind::kCategorical) {
      if (col.categories.size() < 2) {
        throw ConfigError("categorical column '" + col.name + "' needs >= 2 categories");
      }
      std::unordered_set<std::string> cats(col.categories.begin(), col.categories.end());
      if (cats.size() != col.categories.size()) {
        throw ConfigError("categorical column '" + col.name + "' repeats a category");
      }
    }
  }
}

CohortSchema CohortSchema::from_json(const nlohmann::json& doc) {
  CohortSchema schema;
  if (!doc.contains("cohort_id") || !doc["cohort_id"].is_string()) {
    throw ConfigError("schema document needs a string 'cohort_id'");
  }
  schema.cohort_id = doc["cohort_id"].get<std::string>();
  if (!doc.contains("column") || !doc["column"].is_array()) {
    throw ConfigError("schema document needs a [[column]] list");
  }
  for (const auto& c : doc["column"]) {
    ColumnSpec spec;
    spec.name = c.value("name", std::string());
    const std::string kind = c.value("kind", std::string("continuous"));
    if (kind == "continuous") {
      spec.kind = ColumnKind::kContinuous;
    } else if (kind == "categorical") {
      spec.kind = ColumnKind::kCategorical;
      if (c.contains("categories"))
        for (const auto& cat : c["categories"]) spec.categories.push_back(cat.get<std::string>());
    } else {
      throw ConfigError("column '" + spec.name + "': unknown kind '" + kind + "'");
    }
    schema.columns.push_back(std::move(spec));
  }
  schema.validate();
  return schema;
}

CohortSchema CohortSchema::load(const std::string& path) {
  return from_json(load_toml_file(path));
}

std::string CohortSchema::to_toml() const {
  std::ostringstream out;
  out << "cohort_id = \"" << toml_escape(cohort_id) << "\"\n";
  for (const auto& col : columns) {
    out << "\n[[column]]\n";
    out << "name = \"" << toml_escape(col.name) << "\"\n";
    out << "kind = \"" << (col.kind == ColumnKind::kCategorical ? "categorical" : "continuous")
        << "\"\n";
    if (col.kind == ColumnKind::kCategorical) {
      out << "categories = [";
      for (size_t i = 0; i < col.categories.size(); ++i) {
        if (i) out << ", ";
        out << "\"" << toml_escape(col.categories[i]) << "\"";
      }
      out << "]\n";
    }
  }
  return out.str();
}

double Cohort::value(int row, int col) const {
  return values[static_cast<size_t>(row) * schema.column_count() + col];
}

bool Cohort::present(int row, int col) const {
  return presence[static_cast<size_t>(row) * schema.column_count() + col];
}

Cohort load_cohort(const std::string& path, const CohortSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open cohort file: " + path);

  std::string header_line;
  if (!std::getline(in, header_line)) throw IoError("cohort file is empty: " + path);
  const std::vector<std::string> header = split_csv_line(header_line);

  std::unordered_map<std::string, int> schema_index;
  for (int c = 0; c < schema.column_count(); ++c) schema_index[schema.columns[c].name] = c;

  // file column -> schema column
  std::vector<int> remap(header.size(), -1);
  std::unordered_set<std::string> seen;
  for (size_t f = 0; f < header.size(); ++f) {
    const auto it = schema_index.find(header[f]);
    if (it == schema_index.end()) {
      throw ConfigError("cohort '" + schema.cohort_id + "': header '" + header[f] +
                        "' is not in the schema");
    }
    if (!seen.insert(header[f]).second) {
      throw ConfigError("cohort '" + schema.cohort_id + "': duplicate header '" + header[f] + "'");
    }
    remap[f] = it->second;
  }
  if (static_cast<int>(header.size()) != schema.column_count()) {
    for (const auto& col : schema.columns) {
      if (!seen.count(col.name)) {
        throw ConfigError("cohort '" + schema.cohort_id + "': schema column '" + col.name +
                          "' is missing from the file");
      }
    }
  }

  const int ct = schema.column_count();
  Cohort cohort;
  cohort.schema = schema;
  cohort.norm_stats.assign(ct, NormStats{});

  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ValueError("row " + std::to_string(row) + ": expected " +
                       std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    }
    std::vector<double> vals(ct, 0.0);
    std::vector<bool> pres(ct, false);
    for (size_t f = 0; f < cells.size(); ++f) {
      const int c = remap[f];
      const std::string& cell = cells[f];
      if (cell.empty()) continue;  // missing -> presence false, value 0
      const ColumnSpec& spec = schema.columns[c];
      if (spec.kind == ColumnKind::kCategorical) {
        const auto it = std::find(spec.categories.begin(), spec.categories.end(), cell);
        if (it == spec.categories.end()) {
          throw ValueError("row " + std::to_string(row) + ", column '" + spec.name +
                           "': category '" + cell + "' is not in the schema");
        }
        vals[c] = static_cast<double>(it - spec.categories.begin());
      } else {
        size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(cell, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != cell.size() || !std::isfinite(v)) {
          throw ValueError("row " + std::to_string(row) + ", column '" + spec.name +
                           "': cannot parse numeric value '" + cell + "'");
        }
        vals[c] = v;
      }
      pres[c] = true;
    }
    cohort.values.insert(cohort.values.end(), vals.begin(), vals.end());
    cohort.presence.insert(cohort.presence.end(), pres.begin(), pres.end());
    ++row;
  }
  cohort.n_rows = row;
  return cohort;
}

Cohort normalize(const Cohort& cohort) {
  if (cohort.normalized) throw StateError("cohort is already normalized");
  Cohort out = cohort;
  const int ct = cohort.schema.column_count();
  for (int c = 0; c < ct; ++c) {
    if (cohort.schema.columns[c].kind != ColumnKind::kContinuous) continue;
    double sum = 0.0;
    int n_obs = 0;
    for (int r = 0; r < cohort.n_rows; ++r) {
      if (cohort.present(r, c)) {
        sum += cohort.value(r, c);
        ++n_obs;
      }
    }
    if (n_obs == 0) {
      out.norm_stats[c] = {0.0, 1.0};
      continue;
    }
    const double mean = sum / n_obs;
    double var = 0.0;
    for (int r = 0; r < cohort.n_rows; ++r) {
      if (cohort.present(r, c)) {
        const double d = cohort.value(r, c) - mean;
        var += d * d;
      }
    }
    const double stddev = std::sqrt(var / n_obs);
    if (stddev < 1e-12) {
      // constant column: zero it out, record std as 1 so the mapping stays invertible
      out.norm_stats[c] = {mean, 1.0};
      for (int r = 0; r < cohort.n_rows; ++r)
        out.values[static_cast<size_t>(r) * ct + c] = 0.0;
      continue;
    }
    out.norm_stats[c] = {mean, stddev};
    for (int r = 0; r < cohort.n_rows; ++r) {
      const size_t idx = static_cast<size_t>(r) * ct + c;
      out.values[idx] = cohort.present(r, c) ? (cohort.value(r, c) - mean) / stddev : 0.0;
    }
  }
  out.normalized = true;
  return out;
}

std::pair<std::vector<double>, std::vector<bool>> encode_row(const Cohort& cohort, int row) {
  if (row < 0 || row >= cohort.n_rows) {
    throw DimensionError("encode_row: row " + std::to_string(row) + " out of range for " +
                         std::to_string(cohort.n_rows) + " rows");
  }
  const int ct = cohort.schema.column_count();
  std::vector<double> vals(ct);
  std::vector<bool> pres(ct);
  for (int c = 0; c < ct; ++c) {
    vals[c] = cohort.value(row, c);
    pres[c] = cohort.present(row, c);
  }
  return {std::move(vals), std::move(pres)};
}

}  // namespace citab
