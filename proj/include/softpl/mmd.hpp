#ifndef SOFTPL_MMD_HPP
#define SOFTPL_MMD_HPP

// Kernel two-sample Maximum Mean Discrepancy between two sets of feature vectors.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "softpl/atomic_file.hpp"
#include "softpl/errors.hpp"
#include "softpl/parallel.hpp"
#include "softpl/random.hpp"

namespace softpl {

/// Row-major matrix of feature vectors.
class FeatureMatrix {
public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t dim, std::vector<double> data) : dim_(dim), data_(std::move(data)) {
    if (dim_ == 0) throw DimensionMismatchError("feature dimension must be >= 1");
    if (data_.size() % dim_ != 0)
      throw DimensionMismatchError("feature data is not a whole number of rows");
    for (double v : data_)
      if (!std::isfinite(v)) throw RangeError("feature entries must be finite");
  }

  static FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw EmptySampleError("no feature rows");
    const std::size_t dim = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != dim)
        throw DimensionMismatchError("row " + std::to_string(i) + " has dimension " +
                                     std::to_string(rows[i].size()) + ", expected " + std::to_string(dim));
      data.insert(data.end(), rows[i].begin(), rows[i].end());
    }
    return FeatureMatrix(dim, std::move(data));
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t rows() const noexcept { return dim_ ? data_.size() / dim_ : 0; }
  bool empty() const noexcept { return data_.empty(); }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  const std::vector<double>& data() const noexcept { return data_; }

  FeatureMatrix select(std::span<const std::size_t> idx) const {
    std::vector<double> out;
    out.reserve(idx.size() * dim_);
    for (auto i : idx) {
      auto r = row(i);
      out.insert(out.end(), r.begin(), r.end());
    }
    return FeatureMatrix(dim_, std::move(out));
  }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) comp_ += (sum_ - t) + v;
    else comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Median of all pairwise Euclidean distances over the pooled sample.
inline double median_heuristic_bandwidth(const FeatureMatrix& x, const FeatureMatrix& y) {
  std::vector<std::span<const double>> pooled;
  for (std::size_t i = 0; i < x.rows(); ++i) pooled.push_back(x.row(i));
  for (std::size_t i = 0; i < y.rows(); ++i) pooled.push_back(y.row(i));
  std::vector<double> d;
  d.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = i + 1; j < pooled.size(); ++j)
      d.push_back(std::sqrt(squared_distance(pooled[i], pooled[j])));
  if (d.empty()) return 1.0;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double med = d[mid];
  if (d.size() % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  // All points coincide: any bandwidth gives the same (zero) statistic.
  return med > 0.0 ? med : 1.0;
}

namespace detail {

/// Mean of exp(-|a_i - b_j|^2 / (2 sigma^2)) over all pairs. Each row sum is
/// compensated and rows are combined in index order, so the result does not
/// depend on how rows are split across threads.
inline double mean_rbf(const FeatureMatrix& a, const FeatureMatrix& b, double sigma, unsigned threads) {
  const double scale = -1.0 / (2.0 * sigma * sigma);
  std::vector<double> row_sums(a.rows());
  parallel_for(a.rows(), threads, [&](std::size_t i) {
    CompensatedSum s;
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) s.add(std::exp(scale * squared_distance(ai, b.row(j))));
    row_sums[i] = s.value();
  });
  CompensatedSum total;
  for (double v : row_sums) total.add(v);
  return total.value() / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

} // namespace detail

struct MmdOptions {
  /// nullopt selects the median heuristic.
  std::optional<double> bandwidth;
  unsigned threads = 1;
};

/// Biased (V-statistic) MMD with an RBF kernel; returns the square root of MMD^2.
inline double mmd_rbf(const FeatureMatrix& x, const FeatureMatrix& y, const MmdOptions& options = {}) {
  if (x.empty() || y.empty()) throw EmptySampleError("MMD needs two non-empty samples");
  if (x.dim() != y.dim())
    throw DimensionMismatchError("feature dimensions differ: " + std::to_string(x.dim()) + " vs " +
                                 std::to_string(y.dim()));
  const double sigma = options.bandwidth ? *options.bandwidth : median_heuristic_bandwidth(x, y);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("bandwidth must be positive");
  const double kxx = detail::mean_rbf(x, x, sigma, options.threads);
  const double kyy = detail::mean_rbf(y, y, sigma, options.threads);
  // Both orientations of the cross term, so swapping x and y is bit-exact.
  const double kxy =
      0.5 * (detail::mean_rbf(x, y, sigma, options.threads) + detail::mean_rbf(y, x, sigma, options.threads));
  double sq = kxx + kyy - 2.0 * kxy;
  if (sq < 0.0) {
    if (sq < -1e-12) throw Error("MMD^2 is significantly negative: " + std::to_string(sq));
    sq = 0.0;
  }
  return std::sqrt(sq);
}

struct MmdSummary {
  std::vector<double> runs;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation (divides by n)
};

/// Draws `k` of `n` indices without replacement (partial Fisher-Yates), sorted.
inline std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(n - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Repeats the estimate on random subsamples (fraction of each side, at least one
/// row) and reports mean and spread.
inline MmdSummary mmd_repeated(const FeatureMatrix& x, const FeatureMatrix& y, int repeats,
                               double fraction, std::uint64_t seed, const MmdOptions& options = {}) {
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample fraction must lie in (0,1]");
  if (x.empty() || y.empty()) throw EmptySampleError("MMD needs two non-empty samples");
  MmdSummary s;
  Rng rng(seed);
  auto take = [&](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));
  };
  for (int r = 0; r < repeats; ++r) {
    const auto ix = subsample_indices(x.rows(), take(x.rows()), rng);
    const auto iy = subsample_indices(y.rows(), take(y.rows()), rng);
    s.runs.push_back(mmd_rbf(x.select(ix), y.select(iy), options));
  }
  CompensatedSum sum;
  for (double v : s.runs) sum.add(v);
  s.mean = sum.value() / static_cast<double>(s.runs.size());
  if (s.runs.size() > 1) {
    CompensatedSum ss;
    for (double v : s.runs) ss.add((v - s.mean) * (v - s.mean));
    s.stddev = std::sqrt(ss.value() / static_cast<double>(s.runs.size()));
  }
  return s;
}

// Feature files.
//
// CSV: one row per line, comma separated; blank lines and lines starting with '#'
// are skipped; the first data row fixes the dimension.
// Binary: an ASCII header line "F32 <dim>\n" followed by little-endian float32 rows.

namespace detail {

inline bool is_binary_features(const std::string& data) { return data.rfind("F32 ", 0) == 0; }

inline FeatureMatrix parse_features_csv(const std::string& text, const std::string& origin) {
  std::vector<double> data;
  std::size_t dim = 0, row = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::size_t count = 0, pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      if (b == std::string::npos)
        throw ParseError(origin + ": row " + std::to_string(row) + ": empty cell");
      cell = cell.substr(b, e - b + 1);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end != cell.c_str() + cell.size() || !std::isfinite(v))
        throw ParseError(origin + ": row " + std::to_string(row) + ": bad number \"" + cell + "\"");
      data.push_back(v);
      ++count;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (row == 0) dim = count;
    else if (count != dim)
      throw ParseError(origin + ": row " + std::to_string(row) + " has " + std::to_string(count) +
                       " values, expected " + std::to_string(dim));
    ++row;
  }
  if (row == 0) throw EmptySampleError(origin + ": no feature rows");
  return FeatureMatrix(dim, std::move(data));
}

inline FeatureMatrix parse_features_binary(const std::string& data, const std::string& origin) {
  const auto nl = data.find('\n');
  if (nl == std::string::npos) throw ParseError(origin + ": missing header line");
  const std::string header = data.substr(4, nl - 4);
  std::size_t dim = 0;
  const auto [ptr, ec] = std::from_chars(header.data(), header.data() + header.size(), dim);
  if (ec != std::errc() || ptr != header.data() + header.size() || dim == 0)
    throw ParseError(origin + ": bad header \"F32 " + header + "\"");
  const std::size_t bytes = data.size() - nl - 1;
  const std::size_t row_bytes = dim * 4;
  if (bytes % row_bytes != 0)
    throw ParseError(origin + ": row " + std::to_string(bytes / row_bytes) + " is truncated");
  std::vector<double> out;
  out.reserve(bytes / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + nl + 1);
  for (std::size_t i = 0; i < bytes / 4; ++i) {
    const std::uint32_t bits = std::uint32_t(p[4 * i]) | std::uint32_t(p[4 * i + 1]) << 8 |
                               std::uint32_t(p[4 * i + 2]) << 16 | std::uint32_t(p[4 * i + 3]) << 24;
    float f;
    std::memcpy(&f, &bits, sizeof f);
    if (!std::isfinite(f))
      throw ParseError(origin + ": row " + std::to_string(i / dim) + ": non-finite value");
    out.push_back(f);
  }
  if (out.empty()) throw EmptySampleError(origin + ": no feature rows");
  return FeatureMatrix(dim, std::move(out));
}

} // namespace detail

inline FeatureMatrix load_features(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  if (detail::is_binary_features(data)) return detail::parse_features_binary(data, path.string());
  return detail::parse_features_csv(data, path.string());
}

inline void write_features_csv(const FeatureMatrix& m, const std::filesystem::path& path) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) os << (k ? "," : "") << r[k];
    os << "\n";
  }
  write_file_atomic(path, os.str());
}

/// Values are narrowed to float32.
inline void write_features_binary(const FeatureMatrix& m, const std::filesystem::path& path) {
  std::string out = "F32 " + std::to_string(m.dim()) + "\n";
  for (double v : m.data()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
  write_file_atomic(path, out);
}

} // namespace softpl

#endif // SOFTPL_MMD_HPP
