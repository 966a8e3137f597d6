#include "laduree/checkpoint.hpp"

#include "laduree/errors.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

namespace laduree {
namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.metadata["format"] = "test";
  c.metadata["beta"] = "0.25";
  c.tensors.push_back({"b.weight", {2, 3}, {1, 2, 3, 4, 5, 6}});
  c.tensors.push_back({"a.bias", {3}, {-1.5F, 0.0F, 7.25F}});
  c.tensors.push_back({"c.scalar", {}, {42.0F}});
  return c;
}

TEST(CheckpointTest, RoundTripSortsTensors) {
  const Checkpoint c = sample_checkpoint();
  const Checkpoint back = parse_checkpoint(serialize_checkpoint(c));
  EXPECT_EQ(back.metadata, c.metadata);
  ASSERT_EQ(back.tensors.size(), 3u);
  EXPECT_EQ(back.tensors[0].name, "a.bias");
  EXPECT_EQ(back.tensors[1].name, "b.weight");
  EXPECT_EQ(back.tensors[1].shape, (std::vector<std::int64_t>{2, 3}));
  EXPECT_EQ(back.tensors[1].data, c.tensors[0].data);
  EXPECT_EQ(back.tensors[2].data, std::vector<float>{42.0F});
}

TEST(CheckpointTest, LayoutStartsWithMagicAndVersion) {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  ASSERT_GE(bytes.size(), 6u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LDCK");
  EXPECT_EQ(bytes[4] | (bytes[5] << 8), kCheckpointVersion);
}

TEST(CheckpointTest, FileRoundTrip) {
  testing::TempDir dir("ckpt");
  write_checkpoint(dir / "m.ldck", sample_checkpoint());
  EXPECT_EQ(read_checkpoint(dir / "m.ldck").tensors.size(), 3u);
  EXPECT_THROW((void)read_checkpoint(dir / "missing.ldck"), RuntimeError);
}

TEST(CheckpointTest, RejectsCorruptInput) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW((void)parse_checkpoint(bad_magic), CorruptInputError);
  for (std::size_t cut : {std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW((void)parse_checkpoint(truncated), CorruptInputError) << cut;
  }
  bytes.push_back(0);
  EXPECT_THROW((void)parse_checkpoint(bytes), CorruptInputError);
}

TEST(CheckpointTest, RejectsDuplicateNames) {
  Checkpoint c;
  c.tensors.push_back({"x", {1}, {1}});
  c.tensors.push_back({"x", {1}, {2}});
  EXPECT_THROW((void)serialize_checkpoint(c), ValidationError);
}

TEST(CheckpointTest, ByteReaderBounds) {
  ByteWriter w;
  w.put<std::uint32_t>(0x01020304);
  w.put_string16("hi");
  ByteReader r(w.bytes());
  EXPECT_EQ(w.bytes()[0], 0x04);
  EXPECT_EQ(r.get<std::uint32_t>(), 0x01020304u);
  EXPECT_EQ(r.get_string16(), "hi");
  EXPECT_EQ(r.remaining(), 0u);
  EXPECT_THROW((void)r.get<std::uint8_t>(), CorruptInputError);
}

}  // namespace
}  // namespace laduree
