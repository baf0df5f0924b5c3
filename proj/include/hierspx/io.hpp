#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hierspx/error.hpp"
#include "hierspx/grid.hpp"

namespace hierspx {

using Json = nlohmann::ordered_json;

// Writes through a sibling temp file and renames it over `path`.
inline void write_atomically(const std::filesystem::path& path,
                             const std::function<void(std::ostream&)>& body) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    body(os);
    os.flush();
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() +
                  ": " + ec.message());
  }
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

namespace detail {

class NetpbmHeader {
 public:
  explicit NetpbmHeader(const std::vector<std::uint8_t>& bytes) : b_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }

  std::string magic() {
    if (b_.size() < 2) throw ParseError("netpbm: file shorter than magic", 0);
    pos_ = 2;
    return std::string(b_.begin(), b_.begin() + 2);
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      value = value * 10 + (b_[pos_] - '0');
      if (value > (1u << 24))
        throw ParseError(std::string("netpbm: ") + what + " too large at byte " +
                             std::to_string(start),
                         start);
      ++pos_;
    }
    if (pos_ == start)
      throw ParseError(std::string("netpbm: expected ") + what + " at byte " +
                           std::to_string(start),
                       start);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the payload.
  void end_of_header() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_]))
      throw ParseError("netpbm: missing whitespace after maxval at byte " +
                           std::to_string(pos_),
                       pos_);
    ++pos_;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

inline std::uint8_t quantize(double v) noexcept {
  double q = std::floor(v * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

}  // namespace detail

// Binary P6 (3 channels) or P5 (1 channel), maxval 255; values scaled to [0,1].
inline FeatureMap decode_netpbm(const std::vector<std::uint8_t>& bytes) {
  detail::NetpbmHeader hdr(bytes);
  std::string magic = hdr.magic();
  std::size_t channels;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw ParseError("netpbm: unsupported magic '" + magic +
                         "' at byte 0 (only P5/P6)",
                     0);
  }
  std::size_t width = hdr.number("width");
  std::size_t height = hdr.number("height");
  std::size_t maxval_at = hdr.offset();
  std::size_t maxval = hdr.number("maxval");
  if (maxval != 255)
    throw ParseError("netpbm: maxval " + std::to_string(maxval) +
                         " unsupported (only 255) near byte " +
                         std::to_string(maxval_at),
                     maxval_at);
  hdr.end_of_header();
  std::size_t need = width * height * channels;
  std::size_t start = hdr.offset();
  if (bytes.size() - start < need)
    throw ParseError("netpbm: truncated payload, expected " +
                         std::to_string(need) + " bytes at byte " +
                         std::to_string(start) + ", found " +
                         std::to_string(bytes.size() - start),
                     bytes.size());
  FeatureMap map(height, width, channels);
  for (std::size_t i = 0; i < need; ++i)
    map.data()[i] = static_cast<double>(bytes[start + i]) / 255.0;
  return map;
}

inline std::vector<std::uint8_t> encode_netpbm(const FeatureMap& map) {
  if (map.channels() != 1 && map.channels() != 3)
    throw InvalidInput("write_image: need 1 or 3 channels, got " +
                       std::to_string(map.channels()));
  std::string header = (map.channels() == 3 ? "P6\n" : "P5\n") +
                       std::to_string(map.width()) + " " +
                       std::to_string(map.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + map.size());
  for (double v : map.data()) out.push_back(detail::quantize(v));
  return out;
}

inline FeatureMap read_image(const std::filesystem::path& path) {
  try {
    return decode_netpbm(read_file_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.position());
  }
}

inline void write_image(const FeatureMap& map, const std::filesystem::path& path) {
  auto bytes = encode_netpbm(map);
  write_atomically(path, [&](std::ostream& os) {
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  });
}

// CSV label map: one line per row, comma-separated non-negative integers.
inline LabelMap parse_labels(std::istream& is) {
  std::vector<std::uint32_t> labels;
  std::size_t width = 0, height = 0, line_no = 0;
  std::string line;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t fields = 0, pos = 0;
    while (true) {
      std::size_t comma = line.find(',', pos);
      std::string cell = line.substr(pos, comma == std::string::npos
                                              ? std::string::npos
                                              : comma - pos);
      auto first = cell.find_first_not_of(" \t");
      auto last = cell.find_last_not_of(" \t");
      if (first == std::string::npos)
        throw ParseError("labels: empty field on line " + std::to_string(line_no),
                         line_no);
      cell = cell.substr(first, last - first + 1);
      if (!std::all_of(cell.begin(), cell.end(),
                       [](unsigned char c) { return std::isdigit(c); }))
        throw ParseError("labels: invalid value '" + cell + "' on line " +
                             std::to_string(line_no),
                         line_no);
      unsigned long long v = std::stoull(cell);
      if (v > UINT32_MAX)
        throw ParseError("labels: value out of range on line " +
                             std::to_string(line_no),
                         line_no);
      labels.push_back(static_cast<std::uint32_t>(v));
      ++fields;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (height == 0) {
      width = fields;
    } else if (fields != width) {
      throw ParseError("labels: ragged row on line " + std::to_string(line_no) +
                           " (" + std::to_string(fields) + " fields, expected " +
                           std::to_string(width) + ")",
                       line_no);
    }
    ++height;
  }
  if (height == 0) throw ParseError("labels: no rows", line_no + 1);
  return LabelMap(height, width, std::move(labels));
}

inline std::string format_labels(const LabelMap& labels) {
  std::string out;
  for (std::size_t h = 0; h < labels.height(); ++h) {
    for (std::size_t w = 0; w < labels.width(); ++w) {
      if (w) out += ',';
      out += std::to_string(labels.at(h, w));
    }
    out += '\n';
  }
  return out;
}

inline LabelMap read_labels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return parse_labels(is);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.position());
  }
}

inline void write_labels(const LabelMap& labels, const std::filesystem::path& path) {
  std::string text = format_labels(labels);
  write_atomically(path, [&](std::ostream& os) { os << text; });
}

inline void write_report(const Json& report, const std::filesystem::path& path) {
  std::string text = report.dump(2) + "\n";
  write_atomically(path, [&](std::ostream& os) { os << text; });
}

}  // namespace hierspx
