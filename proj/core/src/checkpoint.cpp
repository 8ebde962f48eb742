#include "ftk/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unistd.h>
#include <unordered_set>

#include <json.hpp>

#include "ftk/optim.hpp"

namespace ftk {

static_assert(std::endian::native == std::endian::little, "FTK1 payloads are written from little-endian hosts");

namespace {

constexpr char kMagic[4] = {'F', 'T', 'K', '1'};
constexpr std::size_t kPrefix = 8;

std::uint64_t align_up(std::uint64_t v) {
    return (v + kCheckpointAlign - 1) / kCheckpointAlign * kCheckpointAlign;
}

std::string printable(std::span<const std::uint8_t> bytes) {
    std::string out;
    for (auto b : bytes) {
        if (b >= 0x20 && b < 0x7f) {
            out += static_cast<char>(b);
        } else {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\x%02x", b);
            out += buf;
        }
    }
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string header_json(const std::vector<TensorEntry>& entries, const Meta& meta) {
    nlohmann::ordered_json doc;
    doc["format_version"] = 1;
    doc["dtype"] = "f32";
    doc["tensors"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        doc["tensors"].push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"nbytes", e.nbytes}});
    }
    doc["meta"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : meta) {
        doc["meta"][k] = v;
    }
    return doc.dump();
}

CheckpointHeader parse_header(std::span<const std::uint8_t> bytes, const std::string& origin,
                              std::size_t& payload_start) {
    if (bytes.size() < kPrefix) {
        if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
            throw BadMagicError(origin + ": bad magic, expected \"FTK1\", found \"" + printable(bytes.first(4)) + "\"");
        }
        throw TruncatedError(origin + ": file is " + std::to_string(bytes.size()) + " bytes, too short for a header");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw BadMagicError(origin + ": bad magic, expected \"FTK1\", found \"" + printable(bytes.first(4)) + "\"");
    }
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + 4, 4);
    if (bytes.size() - kPrefix < len) {
        throw TruncatedError(origin + ": header declares " + std::to_string(len) + " bytes, only " +
                             std::to_string(bytes.size() - kPrefix) + " present");
    }
    payload_start = kPrefix + len;

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(bytes.begin() + kPrefix, bytes.begin() + static_cast<std::ptrdiff_t>(payload_start),
                                    nullptr, true, false);
    } catch (const nlohmann::json::exception& e) {
        throw HeaderError(origin + ": header is not valid JSON: " + e.what());
    }

    CheckpointHeader h;
    try {
        h.format_version = doc.at("format_version").get<int>();
        if (h.format_version != 1) {
            throw HeaderError(origin + ": unsupported format_version " + std::to_string(h.format_version));
        }
        const auto dtype = doc.at("dtype").get<std::string>();
        if (dtype != "f32") {
            throw HeaderError(origin + ": unsupported dtype '" + dtype + "'");
        }
        for (const auto& t : doc.at("tensors")) {
            TensorEntry e;
            e.name = t.at("name").get<std::string>();
            e.shape = t.at("shape").get<Shape>();
            e.offset = t.at("offset").get<std::uint64_t>();
            e.nbytes = t.at("nbytes").get<std::uint64_t>();
            h.tensors.push_back(std::move(e));
        }
        if (doc.contains("meta")) {
            for (const auto& [k, v] : doc.at("meta").items()) {
                h.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw HeaderError(origin + ": malformed header: " + e.what());
    }
    return h;
}

// Offsets ascending, aligned, non-overlapping; sizes consistent; names unique.
void check_layout(CheckpointHeader& h, const std::string& origin) {
    std::unordered_set<std::string> seen;
    std::uint64_t end = 0;
    for (auto& e : h.tensors) {
        if (!seen.insert(e.name).second) {
            throw LayoutError(origin + ": duplicate tensor name '" + e.name + "'");
        }
        if (e.shape.empty()) {
            e.shape = {1};
        }
        for (auto d : e.shape) {
            if (d == 0) {
                throw LayoutError(origin + ": tensor '" + e.name + "' has a zero extent");
            }
        }
        const std::uint64_t expect = 4 * shape_numel(e.shape);
        if (e.nbytes != expect) {
            throw LayoutError(origin + ": tensor '" + e.name + "' declares nbytes " + std::to_string(e.nbytes) +
                              ", shape " + shape_str(e.shape) + " needs " + std::to_string(expect));
        }
        if (e.offset % kCheckpointAlign != 0) {
            throw LayoutError(origin + ": tensor '" + e.name + "' offset " + std::to_string(e.offset) +
                              " is not 64-byte aligned");
        }
        if (e.offset < end) {
            throw LayoutError(origin + ": tensor '" + e.name + "' offset " + std::to_string(e.offset) +
                              " overlaps or precedes the previous tensor (ends at " + std::to_string(end) + ")");
        }
        end = e.offset + e.nbytes;
    }
}

std::uint64_t payload_end(const CheckpointHeader& h) {
    return h.tensors.empty() ? 0 : h.tensors.back().offset + h.tensors.back().nbytes;
}

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const Snapshot& tensors, const Meta& meta) {
    if (tensors.empty()) {
        throw ValueError("refusing to save an empty checkpoint");
    }
    std::vector<TensorEntry> entries;
    std::unordered_set<std::string> seen;
    std::uint64_t offset = 0;
    for (const auto& nt : tensors) {
        if (nt.tensor.dtype() != DType::f32) {
            throw DTypeError("checkpoint tensor '" + nt.name + "' is " + dtype_name(nt.tensor.dtype()) +
                             "; only f32 trees can be saved");
        }
        if (!seen.insert(nt.name).second) {
            throw ValueError("duplicate checkpoint tensor name '" + nt.name + "'");
        }
        const std::uint64_t nbytes = 4 * nt.tensor.numel();
        entries.push_back({nt.name, nt.tensor.shape(), offset, nbytes});
        offset = align_up(offset + nbytes);
    }

    std::string header = header_json(entries, meta);
    header.resize(align_up(kPrefix + header.size()) - kPrefix, ' ');
    if (header.size() > UINT32_MAX) {
        throw ValueError("checkpoint header too large");
    }
    const auto len = static_cast<std::uint32_t>(header.size());

    const std::uint64_t end = entries.back().offset + entries.back().nbytes;
    std::vector<std::uint8_t> out(kPrefix + header.size() + end, 0);
    std::memcpy(out.data(), kMagic, 4);
    std::memcpy(out.data() + 4, &len, 4);
    std::memcpy(out.data() + kPrefix, header.data(), header.size());
    std::uint8_t* payload = out.data() + kPrefix + header.size();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto raw = tensors[i].tensor.bytes();
        std::memcpy(payload + entries[i].offset, raw.data(), raw.size());
    }
    return out;
}

void save_tensors(const Snapshot& tensors, const Meta& meta, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(tensors, meta);
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open for writing: " + tmp.string());
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
    }
}

void save_checkpoint(const ParamTree& tree, const Meta& meta, const std::filesystem::path& path) {
    save_tensors(tree.snapshot(), meta, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::size_t start = 0;
    auto h = parse_header(bytes, path.string(), start);
    check_layout(h, path.string());
    return h;
}

LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin) {
    std::size_t start = 0;
    auto h = parse_header(bytes, origin, start);
    check_layout(h, origin);
    const std::uint64_t end = payload_end(h);
    const std::uint64_t have = bytes.size() - start;
    if (have < end) {
        throw TruncatedError(origin + ": payload is " + std::to_string(have) + " bytes, tensors need " +
                             std::to_string(end));
    }
    if (have > end) {
        throw LayoutError(origin + ": " + std::to_string(have - end) + " trailing bytes after the last tensor");
    }
    LoadedCheckpoint out;
    out.meta = std::move(h.meta);
    const std::uint8_t* payload = bytes.data() + start;
    for (const auto& e : h.tensors) {
        std::vector<float> data(shape_numel(e.shape));
        std::memcpy(data.data(), payload + e.offset, e.nbytes);
        out.tensors.push_back({e.name, Tensor(e.shape, std::move(data))});
    }
    return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ParamTree* expected) {
    auto loaded = decode_checkpoint(read_file(path), path.string());
    if (expected == nullptr) {
        return loaded;
    }
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < loaded.tensors.size(); ++i) {
        index.emplace(loaded.tensors[i].name, i);
    }
    LoadedCheckpoint out;
    out.meta = std::move(loaded.meta);
    std::vector<bool> used(loaded.tensors.size(), false);
    for (const auto& p : *expected) {
        auto it = index.find(p.name);
        if (it == index.end()) {
            throw MissingTensorError(path.string() + ": tensor '" + p.name + "' is missing");
        }
        auto& nt = loaded.tensors[it->second];
        if (nt.tensor.shape() != p.var.shape()) {
            throw ShapeMismatchError(path.string() + ": shape mismatch for '" + p.name + "': expected " +
                                     shape_str(p.var.shape()) + ", file has " + shape_str(nt.tensor.shape()));
        }
        used[it->second] = true;
        out.tensors.push_back(std::move(nt));
    }
    for (std::size_t i = 0; i < loaded.tensors.size(); ++i) {
        if (!used[i]) {
            out.warnings.push_back("unexpected tensor '" + loaded.tensors[i].name + "' in " + path.string() +
                                   " ignored");
        }
    }
    return out;
}

std::vector<std::string> load_into(ParamTree& tree, const std::filesystem::path& path) {
    auto loaded = load_checkpoint(path, &tree);
    for (auto& nt : loaded.tensors) {
        Param& p = tree.at(nt.name);
        p.var.mutable_value() = nt.tensor.to(p.var.dtype());
    }
    return std::move(loaded.warnings);
}

std::filesystem::path optimizer_state_path(const std::filesystem::path& weights_path) {
    auto out = weights_path;
    out.replace_extension();
    out += ".adam";
    out += weights_path.extension();
    return out;
}

void save_adam_state(const Adam& adam, const Meta& meta, const std::filesystem::path& path) {
    Snapshot state = adam.state();
    if (state.empty()) {
        throw StateError("optimizer has no state to save");
    }
    for (auto& nt : state) {
        nt.name = "adam." + nt.name;
    }
    Meta m = meta;
    m["adam.steps"] = std::to_string(adam.steps());
    save_tensors(state, m, path);
}

void load_adam_state(Adam& adam, const std::filesystem::path& path) {
    auto loaded = load_checkpoint(path);
    auto it = loaded.meta.find("adam.steps");
    if (it == loaded.meta.end()) {
        throw HeaderError(path.string() + ": missing adam.steps in meta");
    }
    for (auto& nt : loaded.tensors) {
        if (!nt.name.starts_with("adam.")) {
            throw LayoutError(path.string() + ": unexpected tensor '" + nt.name + "' in optimizer state");
        }
        nt.name.erase(0, 5);
    }
    std::uint64_t steps = 0;
    try {
        steps = std::stoull(it->second);
    } catch (const std::exception&) {
        throw HeaderError(path.string() + ": bad adam.steps '" + it->second + "'");
    }
    adam.load_state(loaded.tensors, steps);
}

} // namespace ftk
