#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cea/degradation.hpp"
#include "cea/tensor.hpp"

namespace cea {

/// The 11 compositional categories: four single, five double, two triple.
const std::vector<std::string>& cdd11_categories();

struct DatasetConfig {
  std::size_t n_train = 88;
  std::size_t n_test = 44;
  std::size_t height = 32;
  std::size_t width = 32;
  /// Category tags such as "L", "H+R"; items cycle through them in order.
  std::vector<std::string> categories = cdd11_categories();
  std::size_t threads = 1;

  void validate() const;
};

struct DatasetItem {
  std::string id;
  std::string split;
  std::string category;
  DegradationSpec spec;
  Tensor clean;
  Tensor degraded;
};

struct ToyDataset {
  DatasetConfig config;
  std::uint64_t seed = 0;
  std::vector<DatasetItem> items;

  std::vector<const DatasetItem*> split(const std::string& name) const;
};

/// Procedural clean image [H x W x 3] in [0, 1]: gradients, checkerboards,
/// smooth random fields and geometric shapes, chosen by the seed.
Tensor procedural_image(std::size_t h, std::size_t w, std::uint64_t seed);

/// Degradation chain for a category tag, with severities drawn from `seed`.
DegradationSpec sample_spec(const std::string& category, std::uint64_t seed);

/// Builds the dataset in memory. Per-item seeds are derive_seed(seed, id).
ToyDataset build_dataset(const DatasetConfig& cfg, std::uint64_t seed);

/// Writes manifest.json, clean/<id>.ceat and degraded/<id>.ceat under `dir`.
void write_dataset(const ToyDataset& ds, const std::filesystem::path& dir);
ToyDataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed,
                            const std::filesystem::path& dir);
ToyDataset load_dataset(const std::filesystem::path& dir);

}  // namespace cea
