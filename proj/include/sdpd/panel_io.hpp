#pragma once

#include "sdpd/panel.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace sdpd {

// Column roles for long-form panel files. The first five columns are fixed:
// unit_id, year, lat, lon, country. The manifest names the dependent column
// and the covariate columns that follow.
struct PanelSchema {
  std::string dependent = "y";
  std::vector<std::string> covariates;
  // Optional signed SPEI column, replaced by non-negative `dry` and `wet`.
  std::string spei_column;
  char delimiter = ',';
  std::vector<std::string> missing_tokens = {"", "NA", "NaN", "nan", "."};
};

PanelSchema read_schema(const std::filesystem::path& path);
void write_schema(const PanelSchema& schema, const std::filesystem::path& path);

// Parses long-form text (one row per unit-period). Rejects missing tokens,
// non-numeric cells, inconsistent centroids and unbalanced panels.
PanelDataset read_panel(std::istream& in, const PanelSchema& schema,
                        const std::string& source_name = "<stream>");
PanelDataset read_panel(const std::filesystem::path& data, const PanelSchema& schema);

// Writes y under the schema's dependent name and every covariate, sorted by
// unit then year, at full double precision.
void write_panel(const PanelDataset& panel, const std::filesystem::path& path);

}  // namespace sdpd
