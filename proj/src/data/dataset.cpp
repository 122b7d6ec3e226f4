#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "fedrane/data.hpp"
#include "fedrane/rng.hpp"

namespace fedrane::data {

Dataset::Dataset(Matrix features, std::vector<int> labels, int num_classes)
    : features_(std::move(features)), labels_(std::move(labels)), num_classes_(num_classes) {
  if (features_.rows() != labels_.size())
    throw DataError("dataset has " + std::to_string(features_.rows()) + " rows but " +
                    std::to_string(labels_.size()) + " labels");
  if (labels_.empty()) throw DataError("dataset is empty");
  if (!features_.all_finite()) throw DataError("dataset features contain non-finite values");
  const int max_label = *std::max_element(labels_.begin(), labels_.end());
  if (num_classes_ == 0) num_classes_ = max_label + 1;
  std::vector<bool> seen(static_cast<std::size_t>(num_classes_), false);
  for (int y : labels_) {
    if (y < 0 || y >= num_classes_)
      throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes_) + ")");
    seen[static_cast<std::size_t>(y)] = true;
  }
  for (int c = 0; c < num_classes_; ++c)
    if (!seen[static_cast<std::size_t>(c)]) throw DataError("class " + std::to_string(c) + " has no samples");
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b{Matrix(indices.size(), ds.dim()), std::vector<int>(indices.size())};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = ds.features().row(indices[r]);
    std::copy(src.begin(), src.end(), b.x.row(r).begin());
    b.y[r] = ds.labels()[indices[r]];
  }
  return b;
}

Dataset generate_synthetic(int classes, std::size_t dim, std::size_t per_class, double spread,
                           std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("generate_synthetic: classes must be >= 2");
  if (dim < 2) throw std::invalid_argument("generate_synthetic: dim must be >= 2");
  if (per_class < 8) throw std::invalid_argument("generate_synthetic: per_class must be >= 8");
  if (!(spread >= 0.0) || !std::isfinite(spread))
    throw std::invalid_argument("generate_synthetic: spread must be finite and >= 0");

  const auto c_count = static_cast<std::size_t>(classes);
  Matrix means(c_count, dim);
  for (std::size_t c = 0; c < c_count; ++c) {
    if (dim >= c_count) {
      means(c, c) = 1.0;
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(c_count);
      means(c, 0) = std::cos(angle);
      means(c, 1) = std::sin(angle);
    }
  }

  Rng rng(seed);
  Matrix x(c_count * per_class, dim);
  std::vector<int> y(c_count * per_class);
  for (std::size_t c = 0; c < c_count; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t r = c * per_class + i;
      for (std::size_t j = 0; j < dim; ++j) x(r, j) = means(c, j) + spread * rng.normal();
      y[r] = static_cast<int>(c);
    }
  }
  return Dataset(std::move(x), std::move(y), classes);
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    const auto fail = [&](const std::string& why) {
      throw DataError(path.string() + ": row " + std::to_string(row) + ": " + why);
    };
    if (cells.size() < 2) fail("expected at least one feature and a label");
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      fail("expected " + std::to_string(width) + " columns, found " + std::to_string(cells.size()));
    for (std::size_t j = 0; j + 1 < cells.size(); ++j) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[j], &used);
      } catch (const std::exception&) {
        fail("cannot parse feature '" + cells[j] + "'");
      }
      if (used != cells[j].size() && cells[j].find_first_not_of(" \t", used) != std::string::npos)
        fail("cannot parse feature '" + cells[j] + "'");
      if (!std::isfinite(v)) fail("non-finite feature");
      values.push_back(v);
    }
    const std::string& lab = cells.back();
    std::size_t used = 0;
    long label = -1;
    try {
      label = std::stol(lab, &used);
    } catch (const std::exception&) {
      fail("cannot parse label '" + lab + "'");
    }
    if (used != lab.size() && lab.find_first_not_of(" \t", used) != std::string::npos)
      fail("cannot parse label '" + lab + "'");
    if (label < 0) fail("negative label");
    labels.push_back(static_cast<int>(label));
  }
  if (labels.empty()) throw DataError(path.string() + ": file contains no rows");
  Matrix x(labels.size(), width - 1, std::move(values));
  return Dataset(std::move(x), std::move(labels));
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (double v : ds.features().row(r)) out << v << ',';
    out << ds.labels()[r] << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<std::size_t> label_histogram(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<std::size_t> h(static_cast<std::size_t>(ds.num_classes()), 0);
  for (std::size_t i : indices) ++h[static_cast<std::size_t>(ds.labels().at(i))];
  return h;
}

double label_entropy(std::span<const std::size_t> histogram) {
  double total = 0.0;
  for (std::size_t c : histogram) total += static_cast<double>(c);
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (std::size_t c : histogram) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace fedrane::data
