#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ftk/rng.hpp"
#include "ftk/tensor.hpp"

namespace ftk::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag = "ftk");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

// Rendering styles of the synthetic shape classes. plain: bright shape on a
// dark flat background. textured: different palette, gradient background
// with stripes, heavier noise. Geometry is drawn the same way in both.
enum class ShapeStyle { plain, textured };

inline constexpr std::size_t kShapeClasses = 10;

// [3 x size x size] image of class cls (0..9), quantized to 8-bit levels.
Tensor render_shape(std::size_t cls, std::size_t size, SplitMix64& rng, ShapeStyle style);

struct Samples {
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
};

// per_class images of each of num_classes classes, class-major order.
Samples make_shape_samples(std::size_t num_classes, std::size_t per_class, std::size_t size, std::uint64_t seed,
                           ShapeStyle style);

std::string class_dir_name(std::size_t cls);

// root/class_00/img_000.ppm ...
void write_shape_dataset(const std::filesystem::path& root, std::size_t num_classes, std::size_t per_class,
                         std::size_t size, std::uint64_t seed, ShapeStyle style = ShapeStyle::plain);

// Minimal config JSON for a mini_vgg run on root, written to path.
void write_config(const std::filesystem::path& path, const std::filesystem::path& data_root,
                  const std::filesystem::path& output_dir, std::size_t max_epochs, const std::string& extra = "");

} // namespace ftk::testing
