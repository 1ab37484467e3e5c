#pragma once

// Binary tensor container and CSV emission.
//
// Tensor file layout, all integers little-endian:
//   offset 0   4 bytes   magic "NFT1"
//   offset 4   u32       element type (1 = IEEE-754 binary64)
//   offset 8   u32       rank r
//   offset 12  r x u64   dimensions
//   then       8 x prod(dims) bytes of little-endian binary64 payload
// A rank-0 file holds exactly one value.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "noiseadapt/error.hpp"
#include "noiseadapt/records.hpp"
#include "noiseadapt/tensor.hpp"

namespace noiseadapt {

inline constexpr std::array<char, 4> kTensorMagic{'N', 'F', 'T', '1'};
inline constexpr std::uint32_t kFloat64Code = 1;

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  detail::put_le<std::uint32_t>(out, kFloat64Code);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + 8 * t.size());
  for (double v : t.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Tensor decode_tensor(const std::string& bytes, const std::string& origin = "buffer") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  require(n >= 4 && std::memcmp(p, kTensorMagic.data(), 4) == 0, ErrorKind::BadMagic, origin + ": not a tensor file");
  require(n >= 12, ErrorKind::IoError, origin + ": truncated header");
  const auto type = detail::get_le<std::uint32_t>(p + 4);
  require(type == kFloat64Code, ErrorKind::BadMagic, origin + ": unsupported element type " + std::to_string(type));
  const auto rank = detail::get_le<std::uint32_t>(p + 8);
  require((n - 12) / 8 >= rank, ErrorKind::IoError, origin + ": truncated shape");
  Shape shape(rank);
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = detail::get_le<std::uint64_t>(p + 12 + 8 * i);
    require(d > 0, ErrorKind::ShapeOverflow, origin + ": zero dimension");
    require(count <= std::numeric_limits<std::uint64_t>::max() / 8 / d, ErrorKind::ShapeOverflow,
            origin + ": element count overflows");
    count *= d;
    shape[i] = static_cast<std::size_t>(d);
  }
  const std::size_t header = 12 + 8 * static_cast<std::size_t>(rank);
  require(n - header == 8 * count, ErrorKind::IoError,
          origin + ": payload has " + std::to_string(n - header) + " bytes, shape needs " + std::to_string(8 * count));
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i)
    values[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(p + header + 8 * i));
  return Tensor(std::move(shape), std::move(values));
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  require(static_cast<bool>(out), ErrorKind::IoError, "write to " + path.string() + " failed");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(!in.bad(), ErrorKind::IoError, "read from " + path.string() + " failed");
  return bytes;
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

inline Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// CSV

/// %g with 9 significant digits.
inline std::string format_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline const std::vector<std::string>& step_csv_columns() {
  static const std::vector<std::string> cols{"step",         "ssim",        "psnr",         "boundary",
                                             "loss_pixel",   "loss_feature", "loss_latent", "loss_total",
                                             "predict_seconds", "adapt_seconds", "adapted",   "inner_repeats"};
  return cols;
}

inline std::string join_csv(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  return line;
}

/// Header plus one row per record, columns as in step_csv_columns().
inline void write_csv(const std::vector<StepRecord>& records, const std::filesystem::path& path) {
  require(!records.empty(), ErrorKind::PreconditionViolation, "refusing to write an empty CSV");
  std::string out = join_csv(step_csv_columns()) + "\n";
  for (const auto& r : records) {
    out += join_csv({std::to_string(r.step), format_g9(r.ssim), format_g9(r.psnr), format_g9(r.boundary),
                     format_g9(r.loss.pixel), format_g9(r.loss.feature), format_g9(r.loss.latent),
                     format_g9(r.loss.total), format_g9(r.predict_seconds), format_g9(r.adapt_seconds),
                     r.adapted ? "1" : "0", std::to_string(r.inner_repeats)});
    out += '\n';
  }
  write_file(path, out);
}

/// Generic table: header row then rows of pre-formatted cells.
inline void write_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                        const std::filesystem::path& path) {
  require(!rows.empty(), ErrorKind::PreconditionViolation, "refusing to write an empty CSV");
  std::string out = join_csv(header) + "\n";
  for (const auto& row : rows) {
    require(row.size() == header.size(), ErrorKind::PreconditionViolation, "row width differs from header");
    out += join_csv(row) + "\n";
  }
  write_file(path, out);
}

/// Parses a CSV written by write_table/write_csv: header names and numeric rows.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    return cells;
  };
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::IoError, path.string() + ": empty CSV");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& c : split(line)) row.push_back(std::stod(c));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace noiseadapt
