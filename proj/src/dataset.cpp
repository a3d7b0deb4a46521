#include "ivselect/dataset.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>

#include "ivselect/linalg.hpp"

namespace ivsel {

void Dataset::validate_structure() const {
  const int rows = n();
  if (X.rows() != rows || Z.rows() != rows || (W.cols() > 0 && W.rows() != rows))
    throw ValidationError("dataset: row count mismatch between y, X, Z, W");
  if (kx() < 1) throw ValidationError("dataset: at least one exposure required");
  if (kz() < kx())
    throw ValidationError("dataset: fewer instruments than exposures");
  if (static_cast<int>(exposure_labels.size()) != kx())
    throw ValidationError("dataset: exposure label count mismatch");
  if (static_cast<int>(instrument_labels.size()) != kz())
    throw ValidationError("dataset: instrument label count mismatch");
  std::set<std::string> seen;
  for (const auto& lbl : exposure_labels)
    if (!seen.insert(lbl).second) throw ValidationError("dataset: duplicate label " + lbl);
  for (const auto& lbl : instrument_labels)
    if (!seen.insert(lbl).second) throw ValidationError("dataset: duplicate label " + lbl);
  auto finite = [](const Eigen::MatrixXd& m) { return m.allFinite(); };
  if (!y.allFinite() || !finite(X) || !finite(Z) || (W.size() > 0 && !finite(W)))
    throw ValidationError("dataset: non-finite values present");
}

void Dataset::validate() const {
  validate_structure();
  if (n() <= kx() + kz() + kw())
    throw ValidationError("dataset: need n > kx + kz + kw");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& raw, std::size_t row, const std::string& col) {
  std::string s = trim(raw);
  std::ostringstream where;
  where << "(" << row << ", " << col << ")";
  if (s.empty()) throw ValidationError("empty cell at " + where.str());
  const char* begin = s.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end != begin + s.size())
    throw ValidationError("non-numeric cell at " + where.str() + ": '" + s + "'");
  if (!std::isfinite(v))
    throw ValidationError("non-finite cell at " + where.str() + ": '" + s + "'");
  return v;
}

}  // namespace

Dataset load_csv(const std::string& path, const ColumnRoles& roles) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open data file: " + path);

  std::string header_line;
  if (!std::getline(in, header_line)) throw ValidationError("empty data file: " + path);
  std::vector<std::string> header = split_line(header_line);
  for (auto& h : header) h = trim(h);

  std::unordered_map<std::string, int> col_index;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].empty()) throw ValidationError("blank column name in header");
    if (!col_index.emplace(header[i], static_cast<int>(i)).second)
      throw ValidationError("duplicate column name in header: " + header[i]);
  }

  if (roles.outcome.empty()) throw ValidationError("outcome column required");
  if (roles.exposures.empty()) throw ValidationError("no exposure columns specified");
  if (roles.instruments.empty()) throw ValidationError("no instrument columns specified");

  std::unordered_map<std::string, std::string> role_of;
  auto assign = [&](const std::string& name, const std::string& role) {
    if (!col_index.count(name))
      throw ValidationError("column '" + name + "' (role: " + role + ") not found in " + path);
    auto [it, fresh] = role_of.emplace(name, role);
    if (!fresh)
      throw ValidationError("column '" + name + "' assigned to both " + it->second + " and " + role);
  };
  assign(roles.outcome, "outcome");
  for (const auto& c : roles.exposures) assign(c, "exposure");
  for (const auto& c : roles.instruments) assign(c, "instrument");
  for (const auto& c : roles.covariates) assign(c, "covariate");

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size()) {
      std::ostringstream msg;
      msg << "row " << lineno - 1 << " has " << cells.size() << " cells, expected "
          << header.size();
      throw ValidationError(msg.str());
    }
    std::vector<double> parsed(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i)
      parsed[i] = parse_cell(cells[i], lineno - 1, header[i]);
    rows.push_back(std::move(parsed));
  }
  if (rows.empty()) throw ValidationError("no data rows in " + path);

  const int n = static_cast<int>(rows.size());
  Dataset d;
  d.y.resize(n);
  d.X.resize(n, static_cast<int>(roles.exposures.size()));
  d.Z.resize(n, static_cast<int>(roles.instruments.size()));
  d.W.resize(n, static_cast<int>(roles.covariates.size()));
  int yc = col_index.at(roles.outcome);
  for (int i = 0; i < n; ++i) d.y(i) = rows[i][yc];
  for (std::size_t j = 0; j < roles.exposures.size(); ++j) {
    int c = col_index.at(roles.exposures[j]);
    for (int i = 0; i < n; ++i) d.X(i, static_cast<int>(j)) = rows[i][c];
  }
  for (std::size_t j = 0; j < roles.instruments.size(); ++j) {
    int c = col_index.at(roles.instruments[j]);
    for (int i = 0; i < n; ++i) d.Z(i, static_cast<int>(j)) = rows[i][c];
  }
  for (std::size_t j = 0; j < roles.covariates.size(); ++j) {
    int c = col_index.at(roles.covariates[j]);
    for (int i = 0; i < n; ++i) d.W(i, static_cast<int>(j)) = rows[i][c];
  }
  d.exposure_labels = roles.exposures;
  d.instrument_labels = roles.instruments;
  d.validate_structure();
  return d;
}

Dataset partial_out_covariates(const Dataset& data) {
  data.validate_structure();
  const int n = data.n();
  Eigen::MatrixXd design(n, data.kw() + 1);
  if (data.kw() > 0) design.leftCols(data.kw()) = data.W;
  design.col(data.kw()).setOnes();

  // Identify collinear columns up front so the error can name them.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> cpqr(design);
  cpqr.setThreshold(kRankTol);
  if (cpqr.rank() < design.cols()) {
    std::ostringstream msg;
    msg << "collinear covariate design; dependent columns:";
    for (Eigen::Index k = cpqr.rank(); k < design.cols(); ++k) {
      Eigen::Index col = cpqr.colsPermutation().indices()(k);
      if (col == data.kw())
        msg << " intercept";
      else
        msg << " covariate" << (col + 1);
    }
    throw ValidationError(msg.str());
  }

  Dataset out = data;
  Eigen::MatrixXd coef_y = lstsq(design, data.y);
  out.y = data.y - design * coef_y;
  out.X = annihilate(data.X, design);
  out.Z = annihilate(data.Z, design);
  out.W.resize(n, 0);
  return out;
}

bool BlockStructure::relevant_for(int instrument, int exposure) const {
  const auto& r = relevance.at(static_cast<std::size_t>(instrument));
  return std::binary_search(r.begin(), r.end(), exposure);
}

bool BlockStructure::pair_covers_all(int j, int l, int kx) const {
  for (int q = 0; q < kx; ++q)
    if (!relevant_for(j, q) && !relevant_for(l, q)) return false;
  return true;
}

void BlockStructure::validate(int kx, int kz) const {
  if (static_cast<int>(relevance.size()) != kz)
    throw ValidationError("block structure: expected one entry per instrument");
  std::vector<bool> covered(static_cast<std::size_t>(kx), false);
  for (std::size_t j = 0; j < relevance.size(); ++j) {
    const auto& r = relevance[j];
    if (r.empty())
      throw ValidationError("block structure: instrument " + std::to_string(j + 1) +
                            " relevant for no exposure");
    for (std::size_t t = 0; t < r.size(); ++t) {
      if (r[t] < 0 || r[t] >= kx)
        throw ValidationError("block structure: exposure index out of range");
      if (t > 0 && r[t] <= r[t - 1])
        throw ValidationError("block structure: relevance lists must be sorted and unique");
      covered[static_cast<std::size_t>(r[t])] = true;
    }
  }
  for (int q = 0; q < kx; ++q)
    if (!covered[static_cast<std::size_t>(q)])
      throw ValidationError("block structure: exposure " + std::to_string(q + 1) +
                            " has no relevant instrument");
}

BlockStructure BlockStructure::all_relevant(int kx, int kz) {
  BlockStructure b;
  std::vector<int> all(static_cast<std::size_t>(kx));
  for (int q = 0; q < kx; ++q) all[static_cast<std::size_t>(q)] = q;
  b.relevance.assign(static_cast<std::size_t>(kz), all);
  return b;
}

BlockStructure BlockStructure::from_json_file(const std::string& path,
                                              const std::vector<std::string>& instrument_labels,
                                              const std::vector<std::string>& exposure_labels) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open block structure file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("block structure file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("block structure: top level must be an object");

  std::unordered_map<std::string, int> exposure_index;
  for (std::size_t q = 0; q < exposure_labels.size(); ++q)
    exposure_index[exposure_labels[q]] = static_cast<int>(q);

  BlockStructure b;
  b.relevance.resize(instrument_labels.size());
  std::set<std::string> named;
  for (auto it = doc.begin(); it != doc.end(); ++it) named.insert(it.key());
  for (std::size_t j = 0; j < instrument_labels.size(); ++j) {
    const std::string& zlbl = instrument_labels[j];
    if (!doc.contains(zlbl))
      throw ValidationError("block structure: no entry for instrument '" + zlbl + "'");
    named.erase(zlbl);
    const auto& arr = doc.at(zlbl);
    if (!arr.is_array())
      throw ValidationError("block structure: entry for '" + zlbl + "' must be a list");
    std::vector<int> rel;
    for (const auto& e : arr) {
      if (!e.is_string())
        throw ValidationError("block structure: exposure names must be strings");
      auto f = exposure_index.find(e.get<std::string>());
      if (f == exposure_index.end())
        throw ValidationError("block structure: unknown exposure '" + e.get<std::string>() + "'");
      rel.push_back(f->second);
    }
    std::sort(rel.begin(), rel.end());
    rel.erase(std::unique(rel.begin(), rel.end()), rel.end());
    b.relevance[j] = std::move(rel);
  }
  if (!named.empty())
    throw ValidationError("block structure: unknown instrument '" + *named.begin() + "'");
  b.validate(static_cast<int>(exposure_labels.size()), static_cast<int>(instrument_labels.size()));
  return b;
}

TruthInfo TruthInfo::from_coefficients(const Eigen::VectorXd& beta, const Eigen::VectorXd& alpha) {
  TruthInfo t;
  t.beta_true = beta;
  t.alpha_true = alpha;
  for (int j = 0; j < alpha.size(); ++j) {
    if (alpha(j) == 0.0)
      t.valid_set.push_back(j);
    else
      t.invalid_set.push_back(j);
  }
  return t;
}

}  // namespace ivsel
