#ifndef DYNATE_DATA_HPP
#define DYNATE_DATA_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dynate/errors.hpp"
#include "dynate/rng.hpp"

// Observational data for two-stage studies: outcome Y, binary treatments
// A1, A2 and stage covariates S1, S2. Also the derived design matrices,
// treatment-path subgroup masks and the cross-fitting fold plan.

namespace dynate {

struct Observation {
  double y = 0.0;
  int a1 = 0;
  int a2 = 0;
  std::vector<double> s1;
  std::vector<double> s2;
};

// A fixed two-stage assignment (a1, a2). The contrast of interest is
// treated() = (1,1) versus control() = (0,0).
struct TreatmentPath {
  int a1 = 1;
  int a2 = 1;
  static constexpr TreatmentPath treated() { return {1, 1}; }
  static constexpr TreatmentPath control() { return {0, 0}; }
  friend bool operator==(const TreatmentPath&, const TreatmentPath&) = default;
};

class Dataset {
 public:
  // Column-wise construction. Throws schema_error on any invariant breach.
  Dataset(Eigen::VectorXd y, Eigen::VectorXi a1, Eigen::VectorXi a2,
          Eigen::MatrixXd s1, Eigen::MatrixXd s2)
      : y_(std::move(y)), a1_(std::move(a1)), a2_(std::move(a2)),
        s1_(std::move(s1)), s2_(std::move(s2)) {
    const Eigen::Index n = y_.size();
    if (n < 1) throw schema_error("dataset must contain at least one observation");
    if (a1_.size() != n || a2_.size() != n || s1_.rows() != n || s2_.rows() != n)
      throw schema_error("dataset columns disagree on the number of observations");
    if (s1_.cols() < 1 || s2_.cols() < 1)
      throw schema_error("dataset requires at least one covariate per stage (d1 >= 1, d2 >= 1)");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (a1_[i] != 0 && a1_[i] != 1)
        throw schema_error("a1 must be 0 or 1 at row " + std::to_string(i));
      if (a2_[i] != 0 && a2_[i] != 1)
        throw schema_error("a2 must be 0 or 1 at row " + std::to_string(i));
      if (!std::isfinite(y_[i]))
        throw schema_error("non-finite outcome at row " + std::to_string(i));
    }
    if (!s1_.allFinite() || !s2_.allFinite())
      throw schema_error("non-finite covariate value in dataset");
  }

  explicit Dataset(const std::vector<Observation>& obs) : Dataset(from_rows(obs)) {}

  Eigen::Index n() const { return y_.size(); }
  Eigen::Index d1() const { return s1_.cols(); }
  Eigen::Index d2() const { return s2_.cols(); }

  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::VectorXi& a1() const { return a1_; }
  const Eigen::VectorXi& a2() const { return a2_; }
  const Eigen::MatrixXd& s1() const { return s1_; }
  const Eigen::MatrixXd& s2() const { return s2_; }

 private:
  static Dataset from_rows(const std::vector<Observation>& obs) {
    if (obs.empty()) throw schema_error("dataset must contain at least one observation");
    const Eigen::Index n = static_cast<Eigen::Index>(obs.size());
    const Eigen::Index d1 = static_cast<Eigen::Index>(obs.front().s1.size());
    const Eigen::Index d2 = static_cast<Eigen::Index>(obs.front().s2.size());
    Eigen::VectorXd y(n);
    Eigen::VectorXi a1(n), a2(n);
    Eigen::MatrixXd s1(n, d1), s2(n, d2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Observation& o = obs[static_cast<std::size_t>(i)];
      if (static_cast<Eigen::Index>(o.s1.size()) != d1 ||
          static_cast<Eigen::Index>(o.s2.size()) != d2)
        throw schema_error("ragged covariate row at index " + std::to_string(i));
      y[i] = o.y;
      a1[i] = o.a1;
      a2[i] = o.a2;
      for (Eigen::Index j = 0; j < d1; ++j) s1(i, j) = o.s1[static_cast<std::size_t>(j)];
      for (Eigen::Index j = 0; j < d2; ++j) s2(i, j) = o.s2[static_cast<std::size_t>(j)];
    }
    return Dataset(std::move(y), std::move(a1), std::move(a2), std::move(s1), std::move(s2));
  }

  Eigen::VectorXd y_;
  Eigen::VectorXi a1_, a2_;
  Eigen::MatrixXd s1_, s2_;
};

// U = (1, S1, S2) rowwise and V = (1, S1) rowwise; v always equals the
// leading d1+1 columns of u.
struct DesignMatrices {
  Eigen::MatrixXd u;  // n x (d1+d2+1)
  Eigen::MatrixXd v;  // n x (d1+1)
};

inline DesignMatrices build_design_matrices(const Dataset& ds) {
  const Eigen::Index n = ds.n(), d1 = ds.d1(), d2 = ds.d2();
  DesignMatrices dm;
  dm.u.resize(n, d1 + d2 + 1);
  dm.u.col(0).setOnes();
  dm.u.middleCols(1, d1) = ds.s1();
  dm.u.middleCols(1 + d1, d2) = ds.s2();
  dm.v = dm.u.leftCols(d1 + 1);
  return dm;
}

// Subgroup selection by treatment path: everyone, a first-stage arm, or an
// exact two-stage path.
struct SubgroupFilter {
  enum class Kind { Full, Arm, Path } kind = Kind::Full;
  int a1 = 0;
  int a2 = 0;
  static SubgroupFilter full() { return {Kind::Full, 0, 0}; }
  static SubgroupFilter arm(int a1) { return {Kind::Arm, a1, 0}; }
  static SubgroupFilter path(int a1, int a2) { return {Kind::Path, a1, a2}; }
  static SubgroupFilter path(TreatmentPath p) { return {Kind::Path, p.a1, p.a2}; }
};

inline std::vector<int> subgroup_indices(const Dataset& ds, const SubgroupFilter& f) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(ds.n()));
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    const bool keep =
        f.kind == SubgroupFilter::Kind::Full ||
        (f.kind == SubgroupFilter::Kind::Arm && ds.a1()[i] == f.a1) ||
        (f.kind == SubgroupFilter::Kind::Path && ds.a1()[i] == f.a1 && ds.a2()[i] == f.a2);
    if (keep) out.push_back(static_cast<int>(i));
  }
  return out;
}

// Random near-equal partition of {0,...,n-1} into k folds, a pure function
// of (n, k, seed).
struct FoldPlan {
  int k = 0;
  std::vector<int> assignment;  // fold index per observation
  std::uint64_t seed = 0;

  std::vector<int> fold(int f) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == f) out.push_back(static_cast<int>(i));
    return out;
  }
  std::vector<int> complement(int f) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != f) out.push_back(static_cast<int>(i));
    return out;
  }
};

inline FoldPlan make_folds(int n, int k, std::uint64_t seed) {
  if (k < 2 || k > n)
    throw config_error("fold count must satisfy 2 <= k <= n (k=" + std::to_string(k) +
                       ", n=" + std::to_string(n) + ")");
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform01() * (i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  // first n % k folds absorb the remainder, sizes differ by at most one
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignment.assign(static_cast<std::size_t>(n), -1);
  const int base = n / k, extra = n % k;
  int pos = 0;
  for (int f = 0; f < k; ++f) {
    const int size = base + (f < extra ? 1 : 0);
    for (int s = 0; s < size; ++s)
      plan.assignment[static_cast<std::size_t>(perm[static_cast<std::size_t>(pos++)])] = f;
  }
  return plan;
}

// Row/element extraction by index set; index sets come from subgroup_indices
// or FoldPlan and are always ascending.
inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

inline Eigen::VectorXd take_elems(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

inline Eigen::VectorXd take_elems(const Eigen::VectorXi& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

inline std::vector<int> intersect_sorted(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion. Header row required, '.' decimal separator, no quoting.

struct CsvSchema {
  std::string y_col, a1_col, a2_col;
  std::vector<std::string> s1_cols, s2_cols;
};

struct TabularData {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

inline TabularData read_csv(std::istream& in) {
  TabularData t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(s);
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      std::size_t b = 0;
      while (b < cell.size() && cell[b] == ' ') ++b;
      cells.push_back(cell.substr(b));
    }
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  bool have_header = false;
  std::size_t row_index = 0;
  while (std::getline(in, line)) {
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    if (!have_header) {
      t.columns = split(line);
      have_header = true;
      continue;
    }
    auto cells = split(line);
    if (cells.size() != t.columns.size())
      throw schema_error("ragged row " + std::to_string(row_index) + ": expected " +
                         std::to_string(t.columns.size()) + " cells, got " +
                         std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    ++row_index;
  }
  if (!have_header) throw schema_error("input has no header row");
  return t;
}

inline Dataset load_dataset(const TabularData& table, const CsvSchema& schema) {
  auto col_index = [&](const std::string& name) {
    auto it = std::find(table.columns.begin(), table.columns.end(), name);
    if (it == table.columns.end())
      throw schema_error("column '" + name + "' not found in input");
    return static_cast<std::size_t>(it - table.columns.begin());
  };
  const std::size_t yi = col_index(schema.y_col);
  const std::size_t a1i = col_index(schema.a1_col);
  const std::size_t a2i = col_index(schema.a2_col);
  std::vector<std::size_t> s1i, s2i;
  for (const auto& c : schema.s1_cols) s1i.push_back(col_index(c));
  for (const auto& c : schema.s2_cols) s2i.push_back(col_index(c));
  if (s1i.empty() || s2i.empty())
    throw schema_error("schema requires at least one covariate column per stage");
  if (table.rows.empty()) throw schema_error("dataset must contain at least one observation");

  auto parse_num = [](const std::string& cell, std::size_t row, const std::string& col) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      throw schema_error("cannot parse value '" + cell + "' at row " + std::to_string(row) +
                         ", column '" + col + "'");
    }
    if (used != cell.size())
      throw schema_error("cannot parse value '" + cell + "' at row " + std::to_string(row) +
                         ", column '" + col + "'");
    if (!std::isfinite(v))
      throw schema_error("non-finite value at row " + std::to_string(row) + ", column '" +
                         col + "'");
    return v;
  };
  auto parse_binary = [&](const std::string& cell, std::size_t row, const std::string& col) {
    const double v = parse_num(cell, row, col);
    if (v != 0.0 && v != 1.0)
      throw schema_error("treatment value must be 0 or 1 at row " + std::to_string(row) +
                         ", column '" + col + "' (got " + cell + ")");
    return static_cast<int>(v);
  };

  const Eigen::Index n = static_cast<Eigen::Index>(table.rows.size());
  Eigen::VectorXd y(n);
  Eigen::VectorXi a1(n), a2(n);
  Eigen::MatrixXd s1(n, static_cast<Eigen::Index>(s1i.size()));
  Eigen::MatrixXd s2(n, static_cast<Eigen::Index>(s2i.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = table.rows[static_cast<std::size_t>(i)];
    const std::size_t ri = static_cast<std::size_t>(i);
    y[i] = parse_num(r[yi], ri, schema.y_col);
    a1[i] = parse_binary(r[a1i], ri, schema.a1_col);
    a2[i] = parse_binary(r[a2i], ri, schema.a2_col);
    for (std::size_t j = 0; j < s1i.size(); ++j)
      s1(i, static_cast<Eigen::Index>(j)) = parse_num(r[s1i[j]], ri, schema.s1_cols[j]);
    for (std::size_t j = 0; j < s2i.size(); ++j)
      s2(i, static_cast<Eigen::Index>(j)) = parse_num(r[s2i[j]], ri, schema.s2_cols[j]);
  }
  return Dataset(std::move(y), std::move(a1), std::move(a2), std::move(s1), std::move(s2));
}

}  // namespace dynate

#endif  // DYNATE_DATA_HPP
