#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "laso/bank_io.hpp"
#include "laso/checkpoint.hpp"
#include "laso/synth.hpp"

namespace laso {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("laso_persistence_" + name);
}

FeatureBank small_bank() {
  GeneratorSpec spec;
  spec.feature_dim = 24;
  spec.label_count = 6;
  spec.seen_count = 4;
  return generate_bank(spec, SplitSizes{.train = 20, .test = 10, .reserve = 5}, 4);
}

TEST(BankIo, RoundTripIsBitExact) {
  auto bank = small_bank();
  const auto bytes = encode_bank(bank);
  EXPECT_TRUE(decode_bank(bytes) == bank);
  const auto path = temp_path("bank.lbnk");
  save_bank(bank, path);
  EXPECT_TRUE(load_bank(path) == bank);
  fs::remove(path);
}

TEST(BankIo, CorruptionIsTyped) {
  const auto bytes = encode_bank(small_bank());
  auto bad_magic = bytes;
  bad_magic[0] ^= 0xff;
  EXPECT_THROW(decode_bank(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_bank(bad_version), VersionError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + cut);
    EXPECT_THROW(decode_bank(t), TruncationError) << cut;
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_bank(trailing), FormatError);
  EXPECT_THROW(load_bank(temp_path("does_not_exist")), IoError);
}

TEST(BankIo, HugeHeaderDoesNotAllocate) {
  auto bytes = encode_bank(small_bank());
  // N field follows magic + version.
  for (int i = 0; i < 8; ++i) bytes[8 + i] = 0xff;
  EXPECT_THROW(decode_bank(bytes), Error);
}

TEST(BankIo, CsvImport) {
  std::istringstream in("0.5,1,0,1,0\n\n2,0,1,0,1\n");
  auto bank = import_csv(in, 2, 3);
  ASSERT_EQ(bank.size(), 2u);
  EXPECT_EQ(bank.feature(0)[1], 1.0f);
  EXPECT_EQ(bank.labels(1), LabelVec::of(3, {0, 2}));
  EXPECT_EQ(bank.seen_mask(), LabelVec::of(3, {0, 1}));
  std::istringstream bad("1,2,3\n");
  EXPECT_THROW(import_csv(bad, 2, 3), FormatError);
  std::istringstream bad_label("1,2,0,2,0\n");
  EXPECT_THROW(import_csv(bad_label, 2, 3), FormatError);
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
  Rng rng(5);
  NetConfig cfg;
  cfg.feature_dim = 8;
  auto model = LasoModel::create(cfg, 5, rng);
  model.uni.blocks()[0].running_mean[1] = 0.25;
  const auto bytes = encode_model(model);
  auto back = decode_model(bytes);
  EXPECT_EQ(encode_model(back), bytes);
  Tensor fx = Tensor::matrix(3, 8, 0.5), fy = Tensor::matrix(3, 8, 0.1);
  for (auto op : kAllSetOps) EXPECT_EQ(model.net(op).apply(fx, fy), back.net(op).apply(fx, fy));
  EXPECT_EQ(model.classifier.scores(fx), back.classifier.scores(fx));

  const auto path = temp_path("model.laso");
  save_model(model, path);
  EXPECT_EQ(encode_model(load_model(path)), bytes);
  fs::remove(path);
}

TEST(Checkpoint, FourBlockNetsRoundTrip) {
  Rng rng(5);
  NetConfig cfg;
  cfg.feature_dim = 4;
  cfg.blocks = 4;
  auto model = LasoModel::create(cfg, 3, rng);
  auto back = decode_model(encode_model(model));
  EXPECT_EQ(back.inter.blocks().size(), 4u);
}

TEST(Checkpoint, CorruptionIsTyped) {
  Rng rng(5);
  NetConfig cfg;
  cfg.feature_dim = 4;
  const auto bytes = encode_model(LasoModel::create(cfg, 3, rng));
  auto bad_magic = bytes;
  bad_magic[1] ^= 0x20;
  EXPECT_THROW(decode_model(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_model(bad_version), VersionError);
  for (std::size_t cut : {std::size_t{2}, std::size_t{20}, bytes.size() / 3, bytes.size() - 1}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + cut);
    EXPECT_THROW(decode_model(t), TruncationError) << cut;
  }
  auto trailing = bytes;
  trailing.push_back(1);
  EXPECT_THROW(decode_model(trailing), FormatError);
}

}  // namespace
}  // namespace laso
