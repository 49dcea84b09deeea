#include "sdpd/panel_io.hpp"

#include "sdpd/errors.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace sdpd {
namespace {

using json = nlohmann::json;

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) {
    auto b = cell.find_first_not_of(" \t\r");
    auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw ValidationError(fmt::format("cannot parse '{}' as a number ({})", s, where));
  return v;
}

int parse_int(const std::string& s, const std::string& where) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ValidationError(fmt::format("cannot parse '{}' as a year ({})", s, where));
  return v;
}

struct Row {
  int year;
  std::vector<double> values;
};

}  // namespace

PanelSchema read_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open schema manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("malformed schema manifest " + path.string() + ": " + e.what());
  }
  PanelSchema s;
  try {
    s.dependent = j.at("dependent").get<std::string>();
    s.covariates = j.value("covariates", std::vector<std::string>{});
    s.spei_column = j.value("spei", std::string{});
    auto delim = j.value("delimiter", std::string(","));
    if (delim.size() != 1) throw ValidationError("delimiter must be one character");
    s.delimiter = delim[0];
    if (j.contains("missing_tokens"))
      s.missing_tokens = j["missing_tokens"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError("invalid schema manifest " + path.string() + ": " + e.what());
  }
  return s;
}

void write_schema(const PanelSchema& schema, const std::filesystem::path& path) {
  json j;
  j["dependent"] = schema.dependent;
  j["covariates"] = schema.covariates;
  if (!schema.spei_column.empty()) j["spei"] = schema.spei_column;
  j["delimiter"] = std::string(1, schema.delimiter);
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

PanelDataset read_panel(std::istream& in, const PanelSchema& schema,
                        const std::string& source_name) {
  static const std::vector<std::string> fixed = {"unit_id", "year", "lat", "lon", "country"};

  std::string line;
  if (!std::getline(in, line)) throw ValidationError(source_name + ": missing header");
  auto header = split_line(line, schema.delimiter);
  if (header.size() < fixed.size() + 1 ||
      !std::equal(fixed.begin(), fixed.end(), header.begin()))
    throw ValidationError(source_name +
                          ": header must start with unit_id, year, lat, lon, country");

  std::map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) column[header[c]] = c;

  std::vector<std::string> value_names = {schema.dependent};
  for (const auto& c : schema.covariates) value_names.push_back(c);
  std::vector<std::size_t> value_cols;
  for (const auto& name : value_names) {
    auto it = column.find(name);
    if (it == column.end())
      throw ValidationError(fmt::format("{}: column '{}' named in the schema is absent",
                                        source_name, name));
    value_cols.push_back(it->second);
  }
  if (!schema.spei_column.empty() &&
      std::find(schema.covariates.begin(), schema.covariates.end(), schema.spei_column) ==
          schema.covariates.end())
    throw ValidationError("spei column '" + schema.spei_column +
                          "' must be listed among the covariates");

  std::set<std::string> missing(schema.missing_tokens.begin(), schema.missing_tokens.end());

  std::vector<std::string> unit_order;
  std::unordered_map<std::string, std::size_t> unit_index;
  std::vector<Coordinate> centroids;
  std::vector<std::string> countries;
  std::vector<std::map<int, std::vector<double>>> cells;
  std::set<int> years;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells_in = split_line(line, schema.delimiter);
    const auto where = fmt::format("{} line {}", source_name, line_no);
    if (cells_in.size() != header.size())
      throw ValidationError(fmt::format("{}: expected {} fields, found {}", where,
                                        header.size(), cells_in.size()));
    for (std::size_t c = 0; c < cells_in.size(); ++c)
      if (missing.count(cells_in[c]) &&
          (c < 4 || std::find(value_cols.begin(), value_cols.end(), c) != value_cols.end()))
        throw ValidationError(fmt::format("{}: missing value in column '{}'", where, header[c]));

    const auto& uid = cells_in[0];
    int year = parse_int(cells_in[1], where);
    Coordinate xy{parse_double(cells_in[3], where), parse_double(cells_in[2], where)};

    auto [it, inserted] = unit_index.emplace(uid, unit_order.size());
    if (inserted) {
      unit_order.push_back(uid);
      centroids.push_back(xy);
      countries.push_back(cells_in[4]);
      cells.emplace_back();
    } else {
      const auto& c0 = centroids[it->second];
      if (c0.lon != xy.lon || c0.lat != xy.lat)
        throw ValidationError(fmt::format("{}: centroid of unit {} changes over time", where, uid));
    }
    std::vector<double> vals;
    vals.reserve(value_cols.size());
    for (auto c : value_cols) vals.push_back(parse_double(cells_in[c], where));
    if (!cells[it->second].emplace(year, std::move(vals)).second)
      throw ValidationError(fmt::format("{}: duplicate row for unit {} year {}", where, uid, year));
    years.insert(year);
  }
  if (unit_order.empty()) throw ValidationError(source_name + ": no data rows");

  const auto n = static_cast<Eigen::Index>(unit_order.size());
  const auto T = static_cast<Eigen::Index>(years.size());
  std::vector<int> period_ids(years.begin(), years.end());

  PanelDataset p;
  p.dependent_name = schema.dependent;
  p.unit_ids = unit_order;
  p.centroids = centroids;
  p.country_of_unit = countries;
  p.period_ids = period_ids;

  std::vector<Eigen::MatrixXd> mats(value_names.size(), Eigen::MatrixXd(n, T));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& unit_cells = cells[i];
    if (static_cast<Eigen::Index>(unit_cells.size()) != T) {
      int absent = 0;
      for (int yr : period_ids)
        if (!unit_cells.count(yr)) {
          absent = yr;
          break;
        }
      throw ValidationError(fmt::format(
          "unbalanced panel: unit {} has no observation for year {}", unit_order[i], absent));
    }
    Eigen::Index t = 0;
    for (const auto& [yr, vals] : unit_cells) {
      for (std::size_t v = 0; v < vals.size(); ++v) mats[v](i, t) = vals[v];
      ++t;
    }
  }
  p.y = std::move(mats[0]);
  for (std::size_t v = 1; v < mats.size(); ++v) {
    const auto& name = value_names[v];
    if (name == schema.spei_column) {
      auto split = split_spei(mats[v], p.unit_ids, p.period_ids);
      p.covariates["dry"] = std::move(split.dry);
      p.covariates["wet"] = std::move(split.wet);
    } else {
      p.covariates[name] = std::move(mats[v]);
    }
  }
  validate_panel(p);
  return p;
}

PanelDataset read_panel(const std::filesystem::path& data, const PanelSchema& schema) {
  std::ifstream in(data);
  if (!in) throw ValidationError("cannot open data file " + data.string());
  return read_panel(in, schema, data.filename().string());
}

void write_panel(const PanelDataset& panel, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "unit_id,year,lat,lon,country," << panel.dependent_name;
  for (const auto& [name, x] : panel.covariates) out << ',' << name;
  out << '\n';
  for (Eigen::Index i = 0; i < panel.n(); ++i)
    for (Eigen::Index t = 0; t < panel.T(); ++t) {
      const auto& c = panel.centroids[i];
      out << fmt::format("{},{},{:.17g},{:.17g},{},{:.17g}", panel.unit_ids[i],
                         panel.period_ids[t], c.lat, c.lon,
                         panel.country_of_unit.empty() ? "NA" : panel.country_of_unit[i],
                         panel.y(i, t));
      for (const auto& [name, x] : panel.covariates) out << fmt::format(",{:.17g}", x(i, t));
      out << '\n';
    }
}

}  // namespace sdpd
