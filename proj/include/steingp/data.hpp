#ifndef STEINGP_DATA_HPP
#define STEINGP_DATA_HPP

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "steingp/errors.hpp"

namespace steingp {

enum class Task { Regression, Classification };

/// Per-column affine map applied by standardize(); identity by default.
struct Standardization {
  Eigen::RowVectorXd x_mean;
  Eigen::RowVectorXd x_std;
  double y_mean = 0.0;
  double y_std = 1.0;
  std::vector<Eigen::Index> constant_columns;
  bool applied = false;
};

struct Dataset {
  Eigen::MatrixXd x; // N x d, one row per observation
  Eigen::VectorXd y;
  Task task = Task::Regression;
  std::vector<std::string> feature_names;
  std::string target_name = "y";
  Standardization standardization;

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
};

/// Checks the Dataset invariants; throws DataError.
inline void validate(const Dataset &d) {
  if (d.x.rows() < 1) {
    throw DataError("dataset is empty");
  }
  if (d.y.size() != d.x.rows()) {
    throw DataError("dataset has " + std::to_string(d.x.rows()) + " inputs but " +
                    std::to_string(d.y.size()) + " targets");
  }
  if (!d.x.allFinite() || !d.y.allFinite()) {
    throw DataError("dataset contains non-finite values");
  }
  if (d.task == Task::Classification) {
    for (Eigen::Index i = 0; i < d.y.size(); ++i) {
      if (d.y(i) != 0.0 && d.y(i) != 1.0) {
        throw DataError("classification target at row " + std::to_string(i) +
                        " is not 0 or 1");
      }
    }
  }
}

inline Dataset select_rows(const Dataset &d, const std::vector<Eigen::Index> &rows) {
  Dataset out;
  out.task = d.task;
  out.feature_names = d.feature_names;
  out.target_name = d.target_name;
  out.standardization = d.standardization;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), d.x.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = d.x.row(rows[i]);
    out.y(static_cast<Eigen::Index>(i)) = d.y(rows[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::vector<std::string> split_fields(const std::string &line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    out.push_back(trim(field));
  }
  if (!line.empty() && line.back() == ',') {
    out.emplace_back();
  }
  return out;
}

inline bool parse_double(const std::string &s, double &out) {
  if (s.empty()) {
    return false;
  }
  const char *begin = s.data();
  if (*begin == '+') {
    ++begin;
  }
  const char *end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

} // namespace detail

/// Target column by header name or zero-based index.
using ColumnRef = std::variant<std::string, std::size_t>;

/// Reads a comma-separated numeric file. X holds the non-target columns in
/// file order. Row numbers in errors are 1-based file lines.
inline Dataset load_csv(const std::filesystem::path &path, const ColumnRef &target,
                        bool has_header, Task task = Task::Regression) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open data file '" + path.string() + "'");
  }
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (detail::trim(line).empty()) {
      continue;
    }
    auto fields = detail::split_fields(line);
    if (has_header && header.empty()) {
      header = std::move(fields);
      width = header.size();
      continue;
    }
    if (width == 0) {
      width = fields.size();
    }
    if (fields.size() != width) {
      throw DataError(path.string() + ": row " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " columns, expected " +
                      std::to_string(width));
    }
    std::vector<double> values(width);
    for (std::size_t c = 0; c < width; ++c) {
      if (!detail::parse_double(fields[c], values[c])) {
        throw DataError(path.string() + ": cannot parse '" + fields[c] +
                        "' at row " + std::to_string(line_no) + ", column " +
                        std::to_string(c + 1));
      }
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) {
    throw DataError(path.string() + ": no data rows");
  }

  std::size_t target_col = 0;
  if (const auto *name = std::get_if<std::string>(&target)) {
    if (!has_header) {
      throw DataError("target column given by name but the file has no header");
    }
    auto it = std::find(header.begin(), header.end(), *name);
    if (it == header.end()) {
      throw DataError(path.string() + ": no column named '" + *name + "'");
    }
    target_col = static_cast<std::size_t>(it - header.begin());
  } else {
    target_col = std::get<std::size_t>(target);
    if (target_col >= width) {
      throw DataError(path.string() + ": target column index " +
                      std::to_string(target_col) + " out of range");
    }
  }

  Dataset d;
  d.task = task;
  const auto n = static_cast<Eigen::Index>(rows.size());
  d.x.resize(n, static_cast<Eigen::Index>(width - 1));
  d.y.resize(n);
  for (std::size_t c = 0; c < width; ++c) {
    const std::string name =
        has_header ? header[c] : "x" + std::to_string(c);
    if (c == target_col) {
      d.target_name = has_header ? header[c] : "y";
    } else {
      d.feature_names.push_back(name);
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index col = 0;
    for (std::size_t c = 0; c < width; ++c) {
      const double v = rows[static_cast<std::size_t>(i)][c];
      if (c == target_col) {
        d.y(i) = v;
      } else {
        d.x(i, col++) = v;
      }
    }
  }
  if (task == Task::Classification) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (d.y(i) != 0.0 && d.y(i) != 1.0) {
        throw DataError(path.string() + ": classification target at row " +
                        std::to_string(i + (has_header ? 2 : 1)) +
                        " is not 0 or 1");
      }
    }
  }
  return d;
}

/// Writes features then the target column, full double precision.
inline void write_csv(const std::filesystem::path &path, const Dataset &d) {
  std::ofstream out(path);
  if (!out) {
    throw DataError("cannot write '" + path.string() + "'");
  }
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index c = 0; c < d.dim(); ++c) {
    out << (static_cast<std::size_t>(c) < d.feature_names.size()
                ? d.feature_names[static_cast<std::size_t>(c)]
                : "x" + std::to_string(c))
        << ',';
  }
  out << d.target_name << '\n';
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    for (Eigen::Index c = 0; c < d.dim(); ++c) {
      out << d.x(i, c) << ',';
    }
    out << d.y(i) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Standardization (population standard deviation)

inline Dataset apply_standardization(Dataset d, const Standardization &s) {
  for (Eigen::Index c = 0; c < d.dim(); ++c) {
    d.x.col(c) = (d.x.col(c).array() - s.x_mean(c)) / s.x_std(c);
  }
  if (d.task == Task::Regression) {
    d.y = (d.y.array() - s.y_mean) / s.y_std;
  }
  d.standardization = s;
  return d;
}

/// Per-column (v - mean) / std on inputs and regression targets. Columns with
/// zero variance are centred but left unscaled and listed in the record.
inline std::pair<Dataset, Standardization> standardize(const Dataset &d) {
  if (d.size() < 2) {
    throw InvalidArgument("standardize: need at least 2 rows");
  }
  Standardization s;
  s.applied = true;
  const double n = static_cast<double>(d.size());
  s.x_mean = d.x.colwise().mean();
  s.x_std.resize(d.dim());
  for (Eigen::Index c = 0; c < d.dim(); ++c) {
    const double var = (d.x.col(c).array() - s.x_mean(c)).square().sum() / n;
    if (var > 0.0) {
      s.x_std(c) = std::sqrt(var);
    } else {
      s.x_std(c) = 1.0;
      s.constant_columns.push_back(c);
    }
  }
  if (d.task == Task::Regression) {
    s.y_mean = d.y.mean();
    const double var = (d.y.array() - s.y_mean).square().sum() / n;
    s.y_std = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return {apply_standardization(d, s), s};
}

inline Dataset destandardize(Dataset d) {
  const Standardization &s = d.standardization;
  if (!s.applied) {
    return d;
  }
  for (Eigen::Index c = 0; c < d.dim(); ++c) {
    d.x.col(c) = d.x.col(c).array() * s.x_std(c) + s.x_mean(c);
  }
  if (d.task == Task::Regression) {
    d.y = d.y.array() * s.y_std + s.y_mean;
  }
  d.standardization = Standardization{};
  return d;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
  bool shuffle = true;
  bool allow_empty_test = false;
  bool standardize = true;
};

/// Seeded shuffle then prefix split. When `standardize` is set, statistics
/// come from the training rows only and are applied to both halves.
inline std::pair<Dataset, Dataset> split(const Dataset &d, const SplitSpec &spec) {
  if (!(spec.train_fraction > 0.0) || spec.train_fraction > 1.0) {
    throw InvalidArgument("split: train fraction must lie in (0, 1]");
  }
  const Eigen::Index n = d.size();
  const auto n_train = static_cast<Eigen::Index>(
      std::llround(spec.train_fraction * static_cast<double>(n)));
  if (n_train < 1) {
    throw InvalidArgument("split: training set would be empty");
  }
  if (n_train == n && !spec.allow_empty_test) {
    throw InvalidArgument("split: test set would be empty (set allow_empty_test)");
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  if (spec.shuffle) {
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Eigen::Index> train_rows(order.begin(), order.begin() + n_train);
  std::vector<Eigen::Index> test_rows(order.begin() + n_train, order.end());
  Dataset train = select_rows(d, train_rows);
  Dataset test = select_rows(d, test_rows);
  if (spec.standardize && train.size() >= 2) {
    auto [std_train, record] = standardize(train);
    train = std::move(std_train);
    if (test.size() > 0) {
      test = apply_standardization(std::move(test), record);
    } else {
      test.standardization = record;
    }
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Synthetic generators

/// Noiseless mean of the contaminated 1-D regression benchmark.
inline double neal_mean(double x) {
  return 0.3 + 0.3 * x + 0.5 * std::sin(2.7 * x) + 1.1 / (1.0 + x * x);
}

/// x ~ N(0, 1); y = neal_mean(x) + eps, eps ~ N(0, s^2) with s = 1 w.p. 0.05
/// and s = 0.1 otherwise. Draw order per row: x, contamination flag, noise.
/// The flags are copied to `contaminated` when given.
inline Dataset generate_neal(std::size_t n, std::uint64_t seed,
                             std::vector<bool> *contaminated = nullptr) {
  if (n < 1) {
    throw InvalidArgument("generate_neal: n must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution outlier(0.05);
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(n), 1);
  d.y.resize(static_cast<Eigen::Index>(n));
  d.feature_names = {"x"};
  d.target_name = "y";
  if (contaminated != nullptr) {
    contaminated->assign(n, false);
  }
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    const double x = normal(rng);
    const bool flagged = outlier(rng);
    const double s = flagged ? 1.0 : 0.1;
    if (contaminated != nullptr) {
      (*contaminated)[static_cast<std::size_t>(i)] = flagged;
    }
    d.x(i, 0) = x;
    d.y(i) = neal_mean(x) + s * normal(rng);
  }
  return d;
}

/// Generation-order halves: first floor(n/2) rows train, the rest test.
inline std::pair<Dataset, Dataset> split_halves(const Dataset &d) {
  const Eigen::Index half = d.size() / 2;
  std::vector<Eigen::Index> a(static_cast<std::size_t>(half));
  std::vector<Eigen::Index> b(static_cast<std::size_t>(d.size() - half));
  std::iota(a.begin(), a.end(), Eigen::Index{0});
  std::iota(b.begin(), b.end(), half);
  return {select_rows(d, a), select_rows(d, b)};
}

/// 1-D two-class data: x ~ U(-3, 3), y = 1{x > 0} with labels flipped
/// independently w.p. `flip`.
inline Dataset generate_step(std::size_t n, double flip, std::uint64_t seed) {
  if (n < 1) {
    throw InvalidArgument("generate_step: n must be >= 1");
  }
  if (!(flip >= 0.0 && flip <= 1.0)) {
    throw InvalidArgument("generate_step: flip probability outside [0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  std::bernoulli_distribution flipper(flip);
  Dataset d;
  d.task = Task::Classification;
  d.x.resize(static_cast<Eigen::Index>(n), 1);
  d.y.resize(static_cast<Eigen::Index>(n));
  d.feature_names = {"x"};
  d.target_name = "y";
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    const double x = unif(rng);
    bool label = x > 0.0;
    if (flipper(rng)) {
      label = !label;
    }
    d.x(i, 0) = x;
    d.y(i) = label ? 1.0 : 0.0;
  }
  return d;
}

} // namespace steingp

#endif // STEINGP_DATA_HPP
