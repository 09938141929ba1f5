#pragma once

// `LBNK` feature-bank files and the CSV importer.
//
// Layout (little-endian):
//   "LBNK" | version u32 | N u64 | d u64 | L u64 |
//   seen mask: L bytes | split tags: N bytes |
//   features: N×d float32, row-major | labels: N×L u8, row-major

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "laso/binary_io.hpp"
#include "laso/errors.hpp"
#include "laso/synth.hpp"

namespace laso {

inline constexpr std::uint32_t kBankVersion = 1;

inline std::vector<std::uint8_t> encode_bank(const FeatureBank& bank) {
  io::ByteWriter w;
  w.magic("LBNK");
  w.u32(kBankVersion);
  w.u64(bank.size());
  w.u64(bank.feature_dim());
  w.u64(bank.label_count());
  w.bytes(bank.seen_mask().bits());
  for (auto s : bank.raw_splits()) w.u8(static_cast<std::uint8_t>(s));
  for (float f : bank.raw_features()) w.f32(f);
  w.bytes(bank.raw_labels());
  return w.buffer();
}

inline FeatureBank decode_bank(std::span<const std::uint8_t> data) {
  io::ByteReader r(data);
  if (data.size() < 4) throw TruncationError("LBNK: file shorter than its magic");
  if (r.magic(4) != "LBNK") throw FormatError("LBNK: bad magic, not a feature bank file");
  const auto version = r.u32("version");
  if (version != kBankVersion) {
    throw VersionError("LBNK: unsupported version " + std::to_string(version) + " (expected " +
                       std::to_string(kBankVersion) + ")");
  }
  const auto n = r.u64("N");
  const auto d = r.u64("d");
  const auto L = r.u64("L");
  if (d == 0 || L == 0) throw FormatError("LBNK: zero feature or label dimension");
  // Size check before any allocation.
  const std::uint64_t per_sample =
      1 + io::checked_mul(d, 4, "feature row") + L;
  const std::uint64_t body = L + io::checked_mul(n, per_sample, "bank body");
  r.require(body, "bank body");
  if (r.remaining() != body) throw FormatError("LBNK: trailing bytes after bank body");

  std::vector<std::uint8_t> seen_bits(L);
  for (auto& b : seen_bits) {
    b = r.u8("seen mask");
    if (b > 1) throw FormatError("LBNK: seen mask entry not 0/1");
  }
  std::vector<Split> splits(n);
  for (auto& s : splits) {
    const auto tag = r.u8("split tags");
    if (tag > 2) throw FormatError("LBNK: unknown split tag " + std::to_string(tag));
    s = static_cast<Split>(tag);
  }
  std::vector<float> features(n * d);
  for (auto& f : features) f = r.f32("features");
  auto label_bytes = r.bytes(n * L, "labels");

  FeatureBank bank(d, L, LabelVec(std::move(seen_bits)));
  for (std::uint64_t i = 0; i < n; ++i) {
    std::vector<std::uint8_t> lb(label_bytes.begin() + i * L, label_bytes.begin() + (i + 1) * L);
    for (auto b : lb) {
      if (b > 1) throw FormatError("LBNK: label entry not 0/1 in sample " + std::to_string(i));
    }
    bank.add(std::span<const float>(features).subspan(i * d, d), LabelVec(std::move(lb)),
             splits[i]);
  }
  return bank;
}

inline void save_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  io::write_file(path, encode_bank(bank));
}

inline FeatureBank load_bank(const std::filesystem::path& path) {
  return decode_bank(io::read_file(path));
}

/// Imports externally computed features. Each non-empty line holds d
/// floats followed by L 0/1 labels, comma-separated. All rows get `split`;
/// `seen_mask` defaults to every label seen except the last.
inline FeatureBank import_csv(std::istream& in, std::size_t feature_dim, std::size_t label_count,
                              Split split = Split::kTrain, LabelVec seen_mask = {}) {
  if (seen_mask.size() == 0) {
    seen_mask = LabelVec(label_count);
    for (std::size_t k = 0; k + 1 < label_count; ++k) seen_mask.set(k);
  }
  FeatureBank bank(feature_dim, label_count, std::move(seen_mask));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != feature_dim + label_count) {
      throw FormatError("csv line " + std::to_string(lineno) + ": expected " +
                        std::to_string(feature_dim + label_count) + " columns, got " +
                        std::to_string(cells.size()));
    }
    std::vector<float> f(feature_dim);
    LabelVec labels(label_count);
    try {
      for (std::size_t j = 0; j < feature_dim; ++j) f[j] = std::stof(cells[j]);
      for (std::size_t k = 0; k < label_count; ++k) {
        const int b = std::stoi(cells[feature_dim + k]);
        if (b != 0 && b != 1) throw FormatError("label not 0/1");
        labels.set(k, b == 1);
      }
    } catch (const std::logic_error&) {
      throw FormatError("csv line " + std::to_string(lineno) + ": unparsable number");
    } catch (const FormatError&) {
      throw FormatError("csv line " + std::to_string(lineno) + ": label entries must be 0 or 1");
    }
    bank.add(f, labels, split);
  }
  return bank;
}

}  // namespace laso
