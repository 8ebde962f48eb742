#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ftk/augment.hpp"
#include "ftk/tensor.hpp"

namespace ftk {

// Binary PPM (P6, maxval 255) to a channel-planar f32 image [3 x H x W] in [0, 1].
Tensor decode_ppm(std::span<const std::uint8_t> bytes);
// Canonical header "P6\n<w> <h>\n255\n"; values are rounded and clamped to bytes.
std::vector<std::uint8_t> encode_ppm(const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

struct DatasetItem {
    // Relative to the dataset root, '/'-separated ("Forest/img_001.ppm").
    std::string path;
    std::size_t label = 0;
};

/// A labeled image tree: root/<ClassName>/<image>.ppm.
///
/// Classes are sorted lexicographically and numbered from 0; items are
/// grouped by class and sorted by path within each class.
struct Dataset {
    std::filesystem::path root;
    std::vector<std::string> classes;
    std::vector<DatasetItem> items;

    std::size_t size() const { return items.size(); }
    std::size_t num_classes() const { return classes.size(); }
    std::vector<std::size_t> class_counts() const;
    Tensor load_image(std::size_t i) const;
};

// Walks and validates (decodes) every file under root.
Dataset load_dataset(const std::filesystem::path& root);

struct SplitSpec {
    double train_fraction = 0.75;
    std::uint64_t seed = 0;
    bool stratified = true;
};

// Per class (or globally when !stratified): seeded shuffle, then the first
// round(train_fraction * n) items go to train. Both outputs keep dataset order.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, const SplitSpec& spec);

/// A list of dataset-relative paths, tagged with the digest of the config
/// that produced it.
struct Manifest {
    std::string config_digest;
    std::vector<std::string> paths;
};

// Header line "# config_digest: <digest>", then one path per line.
void write_manifest(const std::filesystem::path& path, const Dataset& ds, const std::string& config_digest);
Manifest read_manifest(const std::filesystem::path& path);
// Subset of ds listed by the manifest, in manifest order.
Dataset select(const Dataset& ds, const Manifest& manifest);

struct Batch {
    Tensor images;  // [N x 3 x H x W], f32
    std::vector<std::size_t> labels;
    std::vector<std::size_t> indices;  // dataset item indices
};

// Seeded Fisher-Yates permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t shuffle_seed, std::uint64_t epoch);

struct BatchOptions {
    std::size_t batch_size = 64;
    bool shuffle = true;
    std::uint64_t shuffle_seed = 0;
    std::uint64_t epoch = 0;
};

/// Streams mini-batches in a deterministic order. The last batch may be
/// short. Every sample passes through the pipeline (if any) keyed by
/// (epoch, dataset index).
class BatchStream {
  public:
    BatchStream(const Dataset& ds, BatchOptions opts, const AugmentPipeline* pipeline = nullptr);

    std::optional<Batch> next();
    std::size_t num_batches() const;
    const std::vector<std::size_t>& order() const { return order_; }

  private:
    const Dataset* ds_;
    BatchOptions opts_;
    const AugmentPipeline* pipeline_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

// Stacks equally shaped [C x H x W] images into [N x C x H x W].
Tensor stack_images(std::span<const Tensor> images);

} // namespace ftk
