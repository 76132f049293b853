// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "vidgan/checkpoint.hpp"
#include "vidgan/image_io.hpp"

namespace vidgan {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("vidgan_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

Archive sample_archive() {
  Archive a;
  a.meta["iteration"] = 42;
  a.meta["note"] = "x";
  a.put("w", Tensor<float>({2, 3}, {1, -2, 3.5f, 0, 1e-30f, -7}));
  a.put("stats/mean", Tensor<double>({3}, {0.1, 0.2, 1e300}));
  a.put("empty", Tensor<float>({0}));
  return a;
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = scratch_dir("roundtrip");
  sample_archive().save(dir / "a.vgck");
  EXPECT_FALSE(fs::exists(dir / "a.vgck.tmp"));
  const Archive b = Archive::load(dir / "a.vgck");
  EXPECT_EQ(b.meta["iteration"], 42);
  EXPECT_EQ(b.tensor_count(), 3u);
  EXPECT_EQ(b.f32("w"), sample_archive().f32("w"));
  EXPECT_EQ(b.get<double>("stats/mean"), sample_archive().f64("stats/mean"));
  EXPECT_EQ(b.f32("empty").size(), 0);
  EXPECT_TRUE(b.has("w"));
  EXPECT_FALSE(b.has("v"));
  EXPECT_THROW(b.f64("w"), CheckpointError);
}

TEST(Checkpoint, DuplicateNamesRejected) {
  Archive a;
  a.put("x", Tensor<float>({1}));
  EXPECT_THROW(a.put("x", Tensor<double>({1})), CheckpointError);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto dir = scratch_dir("corrupt");
  sample_archive().save(dir / "a.vgck");
  const std::string good = slurp(dir / "a.vgck");
  for (std::size_t at : {std::size_t{20}, good.size() / 2, good.size() - 6}) {
    std::string bad = good;
    bad[at] = static_cast<char>(bad[at] ^ 0x40);
    spit(dir / "b.vgck", bad);
    EXPECT_THROW(Archive::load(dir / "b.vgck"), CheckpointError) << "byte " << at;
  }
  spit(dir / "b.vgck", good.substr(0, good.size() - 10));
  EXPECT_THROW(Archive::load(dir / "b.vgck"), CheckpointError);
  spit(dir / "b.vgck", "PNG.....");
  EXPECT_THROW(Archive::load(dir / "b.vgck"), CheckpointError);
  EXPECT_THROW(Archive::load(dir / "none.vgck"), CheckpointError);
}

TEST(Checkpoint, VersionMismatchIsReported) {
  const auto dir = scratch_dir("version");
  sample_archive().save(dir / "a.vgck");
  std::string blob = slurp(dir / "a.vgck");
  blob[4] = 9;
  spit(dir / "a.vgck", blob);
  try {
    Archive::load(dir / "a.vgck");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 9"), std::string::npos) << e.what();
  }
}

TEST(Png, RoundTripGrayAndRgb) {
  const auto dir = scratch_dir("png");
  for (int c : {1, 3}) {
    Image img{5, 3, c, {}};
    for (std::size_t i = 0; i < 15u * c; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 17));
    write_png(dir / "x.png", img);
    const Image back = read_png(dir / "x.png");
    EXPECT_EQ(back.width, 5);
    EXPECT_EQ(back.height, 3);
    EXPECT_EQ(back.channels, c);
    EXPECT_EQ(back.pixels, img.pixels);
  }
  EXPECT_THROW(write_png(dir / "y.png", Image{1, 1, 2, {0, 0}}), ImageError);
  spit(dir / "z.png", "garbage!");
  EXPECT_THROW(read_png(dir / "z.png"), ImageError);
}

TEST(Png, ByteMapping) {
  EXPECT_EQ(to_byte(-1.0), 0);
  EXPECT_EQ(to_byte(1.0), 255);
  EXPECT_EQ(to_byte(0.0), 128);
  EXPECT_EQ(to_byte(-7.0), 0);
  EXPECT_EQ(to_byte(3.0), 255);
}

TEST(Png, FrameGridLayout) {
  Tensor<float> v({2, 1, 5, 2, 3}, -1.0f);
  for (Index t = 0; t < 5; ++t) v.at(1, 0, t, 1, 2) = 1.0f;
  const Image g = frame_grid(v, 2, 1);
  EXPECT_EQ(g.width, 3 * 3 + 4);
  EXPECT_EQ(g.height, 2 * 2 + 3);
  EXPECT_EQ(g.at(0, 0, 0), 255);
  EXPECT_EQ(g.at(1, 1, 0), 0);
  // Clip 1, column 2 (frame 4), pixel (1, 2).
  EXPECT_EQ(g.at(1 + 3 + 1, 1 + 2 * 4 + 2, 0), 255);
  EXPECT_EQ(g.at(1 + 3 + 1, 1 + 2 * 4 + 1, 0), 0);
  EXPECT_THROW(frame_grid(v, 0), std::invalid_argument);
}

}  // namespace
}  // namespace vidgan
