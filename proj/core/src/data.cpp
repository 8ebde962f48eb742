#include "ftk/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "ftk/rng.hpp"

namespace fs = std::filesystem;

namespace ftk {

// ---------------------------------------------------------------- PPM

namespace {

bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

struct HeaderReader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void skip_space_and_comments() {
        while (pos < bytes.size()) {
            if (is_space(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        std::size_t value = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            value = value * 10 + (bytes[pos] - '0');
            ++pos;
            if (++digits > 9) {
                throw DataError(std::string("PPM ") + what + " is too large");
            }
        }
        if (digits == 0) {
            throw DataError(std::string("PPM header: missing ") + what);
        }
        return value;
    }
};

} // namespace

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        std::string found;
        for (std::size_t i = 0; i < std::min<std::size_t>(2, bytes.size()); ++i) {
            found += static_cast<char>(bytes[i]);
        }
        throw DataError("not a binary PPM: expected magic 'P6', found '" + found + "'");
    }
    HeaderReader r{bytes, 2};
    const std::size_t width = r.number("width");
    const std::size_t height = r.number("height");
    const std::size_t maxval = r.number("maxval");
    if (maxval != 255) {
        throw DataError("unsupported PPM maxval " + std::to_string(maxval) + " (only 255)");
    }
    if (width == 0 || height == 0) {
        throw DataError("PPM has zero extent");
    }
    if (r.pos >= bytes.size() || !is_space(bytes[r.pos])) {
        throw DataError("PPM header must end with a single whitespace byte");
    }
    ++r.pos;
    const std::size_t expected = 3 * width * height;
    const std::size_t actual = bytes.size() - r.pos;
    if (actual < expected) {
        throw DataError("truncated PPM payload: expected " + std::to_string(expected) + " bytes, got " +
                        std::to_string(actual));
    }
    Tensor img({3, height, width}, DType::f32);
    auto d = img.span<float>();
    const std::uint8_t* px = bytes.data() + r.pos;
    const std::size_t plane = width * height;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            d[c * plane + i] = static_cast<float>(px[3 * i + c]) / 255.0f;
        }
    }
    return img;
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("encode_ppm expects [3,H,W], got " + shape_str(image.shape()));
    }
    const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
    const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + 3 * plane);
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = std::clamp(image.item(c * plane + i), 0.0, 1.0);
            out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
        }
    }
    return out;
}

Tensor read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_ppm(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_ppm(const fs::path& path, const Tensor& image) {
    const auto bytes = encode_ppm(image);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

// ---------------------------------------------------------------- Dataset

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(classes.size(), 0);
    for (const auto& item : items) {
        ++counts.at(item.label);
    }
    return counts;
}

Tensor Dataset::load_image(std::size_t i) const {
    return read_ppm(root / fs::path(items.at(i).path));
}

Dataset load_dataset(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        throw DataError("dataset root is not a directory: " + root.string());
    }
    Dataset ds;
    ds.root = root;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) {
            ds.classes.push_back(entry.path().filename().string());
        }
    }
    if (ds.classes.empty()) {
        throw DataError("dataset root has no class directories: " + root.string());
    }
    std::sort(ds.classes.begin(), ds.classes.end());
    for (std::size_t label = 0; label < ds.classes.size(); ++label) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(root / ds.classes[label])) {
            if (entry.is_regular_file()) {
                files.push_back(ds.classes[label] + "/" + entry.path().filename().string());
            }
        }
        if (files.empty()) {
            throw DataError("class directory has no images: " + (root / ds.classes[label]).string());
        }
        std::sort(files.begin(), files.end());
        for (auto& f : files) {
            read_ppm(root / fs::path(f));
            ds.items.push_back({std::move(f), label});
        }
    }
    return ds;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, const SplitSpec& spec) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
        throw ConfigError("train fraction must be in (0, 1)");
    }
    // Groups of dataset indices that are split independently.
    std::vector<std::vector<std::size_t>> groups;
    if (spec.stratified) {
        groups.resize(ds.num_classes());
        for (std::size_t i = 0; i < ds.items.size(); ++i) {
            groups[ds.items[i].label].push_back(i);
        }
        for (std::size_t c = 0; c < groups.size(); ++c) {
            if (groups[c].size() < 2) {
                throw DataError("class '" + ds.classes[c] + "' has " + std::to_string(groups[c].size()) +
                                " items; a split needs at least 2");
            }
        }
    } else {
        groups.emplace_back(ds.items.size());
        for (std::size_t i = 0; i < ds.items.size(); ++i) {
            groups[0][i] = i;
        }
    }
    std::vector<bool> in_train(ds.items.size(), false);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        auto& idx = groups[g];
        SplitMix64 rng(stream_seed(spec.seed, g, idx.size()));
        for (std::size_t i = idx.size(); i > 1; --i) {
            std::swap(idx[i - 1], idx[rng.below(i)]);
        }
        const auto cut = static_cast<std::size_t>(std::lround(spec.train_fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < cut; ++i) {
            in_train[idx[i]] = true;
        }
    }
    Dataset train{ds.root, ds.classes, {}};
    Dataset val{ds.root, ds.classes, {}};
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        (in_train[i] ? train : val).items.push_back(ds.items[i]);
    }
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------- manifests

namespace {
constexpr std::string_view kDigestTag = "# config_digest: ";
}

void write_manifest(const fs::path& path, const Dataset& ds, const std::string& config_digest) {
    std::ofstream out(path, std::ios::binary);
    out << kDigestTag << config_digest << '\n';
    for (const auto& item : ds.items) {
        out << item.path << '\n';
    }
    if (!out) {
        throw IoError("failed writing manifest " + path.string());
    }
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open manifest " + path.string());
    }
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.starts_with(kDigestTag)) {
            m.config_digest = line.substr(kDigestTag.size());
        } else if (!line.empty() && line[0] != '#') {
            m.paths.push_back(line);
        }
    }
    return m;
}

Dataset select(const Dataset& ds, const Manifest& manifest) {
    std::unordered_map<std::string, std::size_t> by_path;
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        by_path.emplace(ds.items[i].path, i);
    }
    Dataset out{ds.root, ds.classes, {}};
    for (const auto& p : manifest.paths) {
        auto it = by_path.find(p);
        if (it == by_path.end()) {
            throw DataError("manifest entry not in dataset: " + p);
        }
        out.items.push_back(ds.items[it->second]);
    }
    return out;
}

// ---------------------------------------------------------------- batching

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t shuffle_seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    SplitMix64 rng(stream_seed(shuffle_seed, epoch, 0));
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    return order;
}

BatchStream::BatchStream(const Dataset& ds, BatchOptions opts, const AugmentPipeline* pipeline)
    : ds_(&ds), opts_(opts), pipeline_(pipeline) {
    if (opts_.batch_size == 0) {
        throw ConfigError("batch size must be >= 1");
    }
    if (opts_.shuffle) {
        order_ = epoch_order(ds.size(), opts_.shuffle_seed, opts_.epoch);
    } else {
        order_.resize(ds.size());
        for (std::size_t i = 0; i < order_.size(); ++i) {
            order_[i] = i;
        }
    }
}

std::size_t BatchStream::num_batches() const {
    return (order_.size() + opts_.batch_size - 1) / opts_.batch_size;
}

std::optional<Batch> BatchStream::next() {
    if (cursor_ >= order_.size()) {
        return std::nullopt;
    }
    const std::size_t end = std::min(cursor_ + opts_.batch_size, order_.size());
    std::vector<Tensor> images;
    Batch batch;
    for (; cursor_ < end; ++cursor_) {
        const std::size_t idx = order_[cursor_];
        Tensor img = ds_->load_image(idx);
        if (pipeline_) {
            img = augment(img, *pipeline_, opts_.epoch, idx);
        }
        images.push_back(std::move(img));
        batch.labels.push_back(ds_->items[idx].label);
        batch.indices.push_back(idx);
    }
    batch.images = stack_images(images);
    return batch;
}

Tensor stack_images(std::span<const Tensor> images) {
    if (images.empty()) {
        throw ValueError("cannot stack an empty image list");
    }
    const Shape& s = images[0].shape();
    if (s.size() != 3) {
        throw ShapeError("expected [C,H,W] images, got " + shape_str(s));
    }
    Tensor out({images.size(), s[0], s[1], s[2]}, DType::f32);
    auto dst = out.span<float>();
    const std::size_t per = shape_numel(s);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].shape() != s) {
            throw ShapeError("batch images differ in shape: " + shape_str(s) + " vs " + shape_str(images[i].shape()));
        }
        const Tensor img = images[i].to(DType::f32);
        auto src = img.cspan<float>();
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
}

} // namespace ftk
