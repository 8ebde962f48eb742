#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <json.hpp>

#include "fixtures.hpp"
#include "ftk/checkpoint.hpp"
#include "ftk/models.hpp"
#include "ftk/optim.hpp"
#include "generators.hpp"

namespace ftk {
namespace {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()),
                                             static_cast<std::streamsize>(b.size()));
}

std::uint32_t header_len(const std::vector<std::uint8_t>& b) {
    return b[4] | (b[5] << 8) | (b[6] << 16) | (static_cast<std::uint32_t>(b[7]) << 24);
}

// Independent FTK1 writer: compact header, no padding, tensors at 64-byte
// aligned offsets with zero fill between them.
std::vector<std::uint8_t> reference_encode(const Snapshot& tensors, const nlohmann::json& meta) {
    nlohmann::json h{{"format_version", 1}, {"dtype", "f32"}, {"tensors", nlohmann::json::array()}, {"meta", meta}};
    std::vector<std::uint8_t> payload;
    for (const auto& nt : tensors) {
        while (payload.size() % 64) payload.push_back(0);
        h["tensors"].push_back({{"name", nt.name},
                                {"shape", nt.tensor.shape()},
                                {"offset", payload.size()},
                                {"nbytes", 4 * nt.tensor.numel()}});
        for (float f : nt.tensor.span<float>()) {
            const auto u = std::bit_cast<std::uint32_t>(f);
            for (int k = 0; k < 4; ++k) payload.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
        }
    }
    const std::string text = h.dump();
    std::vector<std::uint8_t> out{'F', 'T', 'K', '1'};
    const auto len = static_cast<std::uint32_t>(text.size());
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(len >> (8 * k)));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

TEST(Checkpoint, RoundTripBitwiseOverRandomTrees) {
    testing::TempDir dir;
    for (std::uint64_t c = 0; c < 100; ++c) {
        auto rng = testing::case_rng(60, c);
        const Snapshot snap = testing::gen_snapshot(rng);
        const Meta meta{{"arch", "x"}, {"case", std::to_string(c)}};
        save_tensors(snap, meta, dir / "t.ftk1");
        const auto back = load_checkpoint(dir / "t.ftk1");
        ASSERT_EQ(back.tensors.size(), snap.size());
        for (std::size_t i = 0; i < snap.size(); ++i) {
            ASSERT_EQ(back.tensors[i].name, snap[i].name);
            ASSERT_TRUE(back.tensors[i].tensor.bitwise_equal(snap[i].tensor)) << snap[i].name;
        }
        ASSERT_EQ(back.meta, meta);
    }
}

TEST(Checkpoint, LayoutMatchesContainerDefinition) {
    auto rng = testing::case_rng(61, 0);
    const Snapshot snap = testing::gen_snapshot(rng);
    const auto bytes = encode_checkpoint(snap, {{"k", "v"}});
    ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FTK1");
    const std::uint32_t len = header_len(bytes);
    EXPECT_EQ((8 + len) % kCheckpointAlign, 0u);
    const auto h = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
    EXPECT_EQ(h["format_version"], 1);
    EXPECT_EQ(h["dtype"], "f32");
    std::uint64_t prev_end = 0;
    for (std::size_t i = 0; i < snap.size(); ++i) {
        const auto& e = h["tensors"][i];
        const std::uint64_t off = e["offset"], nb = e["nbytes"];
        EXPECT_EQ(off % 64, 0u);
        EXPECT_GE(off, prev_end);
        EXPECT_EQ(nb, 4 * snap[i].tensor.numel());
        EXPECT_EQ(0, std::memcmp(bytes.data() + 8 + len + off, snap[i].tensor.span<float>().data(), nb));
        prev_end = off + nb;
    }
    EXPECT_EQ(bytes.size(), 8 + len + prev_end);
}

TEST(Checkpoint, ReadsIndependentlyWrittenFile) {
    testing::TempDir dir;
    auto rng = testing::case_rng(62, 0);
    BuiltModel m = build_model({.arch = Arch::mini_vgg}, 3);
    Snapshot snap = m.params.snapshot();
    for (auto& e : snap) {
        for (auto& v : e.tensor.span<float>()) v = static_cast<float>(rng.uniform(-1, 1));
    }
    write_bytes(dir / "ref.ftk1", reference_encode(snap, {{"source", "reference"}}));
    EXPECT_TRUE(load_into(m.params, dir / "ref.ftk1").empty());
    for (const auto& e : snap) ASSERT_TRUE(m.params.at(e.name).var.value().bitwise_equal(e.tensor)) << e.name;
}

TEST(Checkpoint, DeterministicBytes) {
    testing::TempDir dir;
    const BuiltModel m = build_model({.arch = Arch::mini_wide_resnet}, 3);
    save_checkpoint(m.params, {{"arch", "mini_wide_resnet"}}, dir / "a.ftk1");
    save_checkpoint(m.params, {{"arch", "mini_wide_resnet"}}, dir / "b.ftk1");
    EXPECT_EQ(read_bytes(dir / "a.ftk1"), read_bytes(dir / "b.ftk1"));
}

TEST(Checkpoint, SaveGuards) {
    testing::TempDir dir;
    EXPECT_THROW(save_tensors({}, {}, dir / "e.ftk1"), ValueError);
    EXPECT_THROW(save_tensors({{"w", Tensor({2}, DType::f64)}}, {}, dir / "d.ftk1"), DTypeError);
    EXPECT_THROW(save_tensors({{"w", Tensor({2})}, {"w", Tensor({2})}}, {}, dir / "u.ftk1"), ValueError);
    EXPECT_FALSE(fs::exists(dir / "e.ftk1"));
    EXPECT_FALSE(fs::exists(dir / "d.ftk1"));
}

TEST(Checkpoint, AtomicWriteLeavesNoTempFiles) {
    testing::TempDir dir;
    save_tensors({{"w", Tensor::ones({3})}}, {}, dir / "w.ftk1");
    save_tensors({{"w", Tensor::full({3}, 2.0)}}, {}, dir / "w.ftk1");
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path())) ++files;
    EXPECT_EQ(files, 1u);
    EXPECT_EQ(load_checkpoint(dir / "w.ftk1").tensors[0].tensor.item(0), 2.0);
}

class CheckpointErrors : public ::testing::Test {
  protected:
    void SetUp() override {
        good_ = encode_checkpoint({{"a", Tensor::ones({2, 3})}, {"b", Tensor::ones({5})}}, {});
        len_ = header_len(good_);
    }
    nlohmann::json header() const { return nlohmann::json::parse(good_.begin() + 8, good_.begin() + 8 + len_); }
    std::vector<std::uint8_t> with_header(const nlohmann::json& h) const {
        std::string text = h.dump();
        text.resize(len_, ' ');
        std::vector<std::uint8_t> out = good_;
        std::copy(text.begin(), text.end(), out.begin() + 8);
        return out;
    }
    std::vector<std::uint8_t> good_;
    std::uint32_t len_ = 0;
};

TEST_F(CheckpointErrors, BadMagicNamesFoundBytes) {
    auto b = good_;
    std::memcpy(b.data(), "XXXX", 4);
    EXPECT_THROW(decode_checkpoint(b), BadMagicError);
    EXPECT_NE(message_of([&] { decode_checkpoint(b); }).find("XXXX"), std::string::npos);
}

TEST_F(CheckpointErrors, HeaderNotJson) {
    auto b = good_;
    b[8] = '#';
    EXPECT_THROW(decode_checkpoint(b), HeaderError);
}

TEST_F(CheckpointErrors, WrongVersionOrDtype) {
    auto h = header();
    h["format_version"] = 2;
    EXPECT_THROW(decode_checkpoint(with_header(h)), HeaderError);
    h = header();
    h["dtype"] = "f16";
    EXPECT_THROW(decode_checkpoint(with_header(h)), HeaderError);
}

TEST_F(CheckpointErrors, TruncatedPayloadAndHeader) {
    auto b = good_;
    b.resize(b.size() - 1);
    EXPECT_THROW(decode_checkpoint(b), TruncatedError);
    b.resize(8 + len_ / 2);
    EXPECT_THROW(decode_checkpoint(b), TruncatedError);
    b.resize(3);
    EXPECT_THROW(decode_checkpoint(b), CheckpointError);
}

TEST_F(CheckpointErrors, LayoutViolations) {
    auto h = header();
    h["tensors"][1]["offset"] = 8;
    EXPECT_THROW(decode_checkpoint(with_header(h)), LayoutError);
    h = header();
    h["tensors"][1]["offset"] = 0;
    EXPECT_THROW(decode_checkpoint(with_header(h)), LayoutError);
    h = header();
    h["tensors"][0]["nbytes"] = 20;
    EXPECT_THROW(decode_checkpoint(with_header(h)), LayoutError);
    h = header();
    h["tensors"][1]["name"] = "a";
    EXPECT_THROW(decode_checkpoint(with_header(h)), LayoutError);
    auto b = good_;
    b.push_back(0);
    EXPECT_THROW(decode_checkpoint(b), LayoutError);
}

TEST(Checkpoint, ArchitectureMismatchNamesFirstOffender) {
    testing::TempDir dir;
    const BuiltModel vgg = build_model({.arch = Arch::mini_vgg}, 1);
    save_checkpoint(vgg.params, {}, dir / "vgg.ftk1");
    BuiltModel wrn = build_model({.arch = Arch::mini_wide_resnet}, 1);
    const std::string msg = message_of([&] { load_into(wrn.params, dir / "vgg.ftk1"); });
    EXPECT_NE(msg.find("features.0.weight"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[16x3x3x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[32x3x3x3]"), std::string::npos) << msg;
    EXPECT_THROW(load_into(wrn.params, dir / "vgg.ftk1"), ShapeMismatchError);
}

TEST(Checkpoint, MissingAndExtraNames) {
    testing::TempDir dir;
    ParamTree tree;
    tree.add("a", Tensor({2}));
    tree.add("b", Tensor({2}));
    save_tensors({{"a", Tensor::ones({2})}, {"zzz", Tensor({1})}}, {}, dir / "x.ftk1");
    EXPECT_THROW(load_into(tree, dir / "x.ftk1"), MissingTensorError);
    save_tensors({{"b", Tensor::ones({2})}, {"a", Tensor::ones({2})}, {"zzz", Tensor({1})}}, {}, dir / "y.ftk1");
    const auto warnings = load_into(tree, dir / "y.ftk1");
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("zzz"), std::string::npos);
    const auto loaded = load_checkpoint(dir / "y.ftk1", &tree);
    EXPECT_EQ(loaded.tensors[0].name, "a");
}

TEST(Checkpoint, MissingFileIsIoError) {
    testing::TempDir dir;
    EXPECT_THROW(load_checkpoint(dir / "absent.ftk1"), IoError);
}

TEST(Checkpoint, AdamStateRoundTrip) {
    testing::TempDir dir;
    EXPECT_EQ(optimizer_state_path("out/best.ftk1"), fs::path("out/best.adam.ftk1"));
    ParamTree tree;
    auto rng = testing::case_rng(63, 0);
    tree.add("w", testing::gen_tensor(rng, {3, 2}));
    tree.at("w").var.mutable_grad() = testing::gen_tensor(rng, {3, 2});
    Adam adam;
    adam.step(tree);
    adam.step(tree);
    save_adam_state(adam, {}, dir / "s.adam.ftk1");
    for (const auto& e : load_checkpoint(dir / "s.adam.ftk1").tensors) EXPECT_TRUE(e.name.starts_with("adam."));
    Adam other;
    load_adam_state(other, dir / "s.adam.ftk1");
    EXPECT_EQ(other.steps(), 2u);
    ParamTree t2 = tree.clone();
    t2.at("w").var.mutable_grad() = *tree.at("w").var.grad();
    adam.step(tree);
    other.step(t2);
    EXPECT_TRUE(tree.at("w").var.value().bitwise_equal(t2.at("w").var.value()));
}

} // namespace
} // namespace ftk
