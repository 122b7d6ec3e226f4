#ifndef FEDRANE_DATA_HPP_
#define FEDRANE_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrane/matrix.hpp"

namespace fedrane::data {

/// Malformed input file or invalid dataset contents.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Labelled feature matrix; every class in [0, num_classes) occurs at least once.
class Dataset {
 public:
  Dataset() = default;
  /// Validates labels, class coverage and finiteness. num_classes = 0 infers
  /// it as max(label) + 1.
  Dataset(Matrix features, std::vector<int> labels, int num_classes = 0);

  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return features_.cols(); }
  int num_classes() const { return num_classes_; }

 private:
  Matrix features_;
  std::vector<int> labels_;
  int num_classes_ = 0;
};

/// Rows of a dataset picked by index; no class-coverage requirement.
struct Batch {
  Matrix x;
  std::vector<int> y;
};

Batch gather(const Dataset& ds, std::span<const std::size_t> indices);

/// Gaussian mixture with one isotropic component per class. Means sit on the
/// unit simplex vertices e_c when dim >= classes, else on the unit circle in
/// the first two coordinates. Samples are stored class by class.
Dataset generate_synthetic(int classes, std::size_t dim, std::size_t per_class, double spread,
                           std::uint64_t seed);

/// Comma-separated rows, features first, integer label last. No header.
Dataset load_csv(const std::filesystem::path& path);
void save_csv(const Dataset& ds, const std::filesystem::path& path);

/// One client's share of the master dataset.
struct Partition {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

/// Per-class Dirichlet(alpha) allocation across k clients with
/// largest-remainder rounding. The whole draw is repeated on a fresh stream
/// until every client holds at least `min_samples` samples (100 attempts).
std::vector<Partition> dirichlet_partition(const Dataset& ds, std::size_t k, double alpha,
                                           std::uint64_t seed, std::size_t min_samples = 1);

/// Largest-remainder apportionment of `total` items by `proportions`.
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> proportions);

/// Uniform random train/test split; |train| = round(ratio * |indices|).
Partition split_local(const Partition& p, std::uint64_t seed, double ratio = 0.75);

/// Partition document with (k, alpha, seed) provenance.
struct PartitionSet {
  std::size_t k = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::vector<Partition> clients;
};

std::string partitions_to_json(const PartitionSet& set);
PartitionSet partitions_from_json(const std::string& text);
PartitionSet load_partitions(const std::filesystem::path& path);

/// Per-class sample counts of the given subset.
std::vector<std::size_t> label_histogram(const Dataset& ds, std::span<const std::size_t> indices);
/// Shannon entropy (nats) of a count histogram; 0 for an empty histogram.
double label_entropy(std::span<const std::size_t> histogram);

}  // namespace fedrane::data

#endif  // FEDRANE_DATA_HPP_
