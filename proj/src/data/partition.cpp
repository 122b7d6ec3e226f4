#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedrane/data.hpp"
#include "fedrane/rng.hpp"
#include "json.hpp"

namespace fedrane::data {

namespace {
constexpr std::size_t kMaxPartitionAttempts = 100;
}

std::vector<std::size_t> apportion(std::size_t total, std::span<const double> proportions) {
  std::vector<std::size_t> counts(proportions.size(), 0);
  std::vector<double> remainder(proportions.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < proportions.size(); ++k) {
    const double exact = proportions[k] * static_cast<double>(total);
    const double floor_v = std::floor(exact);
    counts[k] = static_cast<std::size_t>(floor_v);
    remainder[k] = exact - floor_v;
    assigned += counts[k];
  }
  // Rounding of the proportions can overshoot by a unit in pathological
  // cases; trim from the smallest remainders first.
  while (assigned > total) {
    std::size_t pick = proportions.size();
    for (std::size_t k = 0; k < proportions.size(); ++k)
      if (counts[k] > 0 && (pick == proportions.size() || remainder[k] < remainder[pick])) pick = k;
    --counts[pick];
    --assigned;
  }
  std::vector<std::size_t> order(proportions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size()) {
    ++counts[order[i]];
    ++assigned;
  }
  return counts;
}

std::vector<Partition> dirichlet_partition(const Dataset& ds, std::size_t k, double alpha,
                                           std::uint64_t seed, std::size_t min_samples) {
  if (k < 1) throw std::invalid_argument("dirichlet_partition: k must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("dirichlet_partition: alpha must be positive and finite");

  const auto classes = static_cast<std::size_t>(ds.num_classes());
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels()[i])].push_back(i);

  for (std::size_t attempt = 0; attempt < kMaxPartitionAttempts; ++attempt) {
    Rng rng(derive_seed(seed, {attempt}));
    std::vector<Partition> parts(k);
    for (std::size_t c = 0; c < k; ++c) parts[c].client_id = c;
    for (std::size_t j = 0; j < classes; ++j) {
      const std::vector<double> share = rng.dirichlet(k, alpha);
      const std::vector<std::size_t> counts = apportion(by_class[j].size(), share);
      std::vector<std::size_t> members = by_class[j];
      rng.shuffle(std::span<std::size_t>(members));
      std::size_t cursor = 0;
      for (std::size_t c = 0; c < k; ++c) {
        parts[c].indices.insert(parts[c].indices.end(), members.begin() + static_cast<std::ptrdiff_t>(cursor),
                                members.begin() + static_cast<std::ptrdiff_t>(cursor + counts[c]));
        cursor += counts[c];
      }
    }
    const bool ok = std::all_of(parts.begin(), parts.end(),
                                [&](const Partition& p) { return p.indices.size() >= std::max<std::size_t>(min_samples, 1); });
    if (!ok) continue;

    std::vector<int> owner(ds.size(), -1);
    for (auto& p : parts) {
      std::sort(p.indices.begin(), p.indices.end());
      for (std::size_t i : p.indices) {
        if (owner[i] != -1) throw std::logic_error("dirichlet_partition: index assigned twice");
        owner[i] = static_cast<int>(p.client_id);
      }
    }
    if (std::find(owner.begin(), owner.end(), -1) != owner.end())
      throw std::logic_error("dirichlet_partition: index left unassigned");
    return parts;
  }
  throw DataError("dirichlet_partition: could not give every client " + std::to_string(min_samples) +
                  " sample(s) in " + std::to_string(kMaxPartitionAttempts) + " attempts");
}

Partition split_local(const Partition& p, std::uint64_t seed, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split_local: ratio must lie in (0, 1)");
  if (p.indices.size() < 4)
    throw DataError("split_local: client " + std::to_string(p.client_id) + " has only " +
                    std::to_string(p.indices.size()) + " samples (need 4)");
  std::vector<std::size_t> shuffled = p.indices;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(shuffled));
  const auto n_train = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(shuffled.size())));
  Partition out = p;
  out.train_indices.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test_indices.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  return out;
}

std::string partitions_to_json(const PartitionSet& set) {
  nlohmann::json doc;
  doc["k"] = set.k;
  doc["alpha"] = set.alpha;
  doc["seed"] = set.seed;
  doc["clients"] = nlohmann::json::array();
  for (const auto& p : set.clients) {
    doc["clients"].push_back({{"client_id", p.client_id},
                              {"indices", p.indices},
                              {"train_indices", p.train_indices},
                              {"test_indices", p.test_indices}});
  }
  return doc.dump(1);
}

PartitionSet partitions_from_json(const std::string& text) {
  PartitionSet set;
  try {
    const auto doc = nlohmann::json::parse(text);
    set.k = doc.at("k").get<std::size_t>();
    set.alpha = doc.at("alpha").get<double>();
    set.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& c : doc.at("clients")) {
      Partition p;
      p.client_id = c.at("client_id").get<std::size_t>();
      p.indices = c.at("indices").get<std::vector<std::size_t>>();
      p.train_indices = c.at("train_indices").get<std::vector<std::size_t>>();
      p.test_indices = c.at("test_indices").get<std::vector<std::size_t>>();
      set.clients.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed partition document: ") + e.what());
  }
  if (set.clients.size() != set.k)
    throw DataError("partition document lists " + std::to_string(set.clients.size()) +
                    " clients but k = " + std::to_string(set.k));
  return set;
}

PartitionSet load_partitions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return partitions_from_json(ss.str());
}

}  // namespace fedrane::data
