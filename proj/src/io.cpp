#include "phyvid/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "phyvid/error.hpp"

namespace phyvid {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::SimulationDiverged: return "simulation diverged";
    case ErrorKind::OutOfFrame: return "out of frame";
    case ErrorKind::InitializationFailed: return "initialization failed";
    case ErrorKind::LowConfidence: return "low confidence";
    case ErrorKind::TooShort: return "series too short";
    case ErrorKind::ShapeMismatch: return "shape mismatch";
    case ErrorKind::EmptyEquation: return "empty equation";
    case ErrorKind::RankDeficient: return "rank deficient";
    case ErrorKind::DegenerateSeries: return "degenerate series";
    case ErrorKind::InexpressibleTruth: return "inexpressible truth";
    case ErrorKind::NumericalFailure: return "numerical failure";
  }
  return "error";
}

namespace io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const fs::path& path, const char* mode) {
  if (mode[0] == 'w' && path.has_parent_path()) fs::create_directories(path.parent_path());
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return f;
}

}  // namespace

double quantize8(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

void write_png(const fs::path& path, const Image& img) {
  auto f = open_or_throw(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Io, "png encode failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.cols, img.rows, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // No timestamps or text chunks: output bytes depend on pixels only.
  png_write_info(png, info);
  std::vector<png_byte> row(img.cols);
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < img.cols; ++c)
      row[c] = static_cast<png_byte>(std::lround(std::clamp(img(r, c), 0.0, 1.0) * 255.0));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const fs::path& path) {
  auto f = open_or_throw(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::Io, "png decode failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA) png_set_rgb_to_gray(png, 1, -1, -1);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  Image img(h, w);
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  for (int r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < w; ++c) img(r, c) = row[c] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_f32(const fs::path& path, const std::vector<double>& values) {
  static_assert(std::endian::native == std::endian::little, "f32 blobs are little-endian");
  auto f = open_or_throw(path, "wb");
  std::vector<float> buf(values.begin(), values.end());
  if (std::fwrite(buf.data(), sizeof(float), buf.size(), f.get()) != buf.size())
    throw Error(ErrorKind::Io, "short write to " + path.string());
}

std::vector<double> read_f32(const fs::path& path) {
  auto f = open_or_throw(path, "rb");
  std::fseek(f.get(), 0, SEEK_END);
  const long bytes = std::ftell(f.get());
  std::fseek(f.get(), 0, SEEK_SET);
  std::vector<float> buf(static_cast<std::size_t>(bytes) / sizeof(float));
  if (std::fread(buf.data(), sizeof(float), buf.size(), f.get()) != buf.size())
    throw Error(ErrorKind::Io, "short read from " + path.string());
  return {buf.begin(), buf.end()};
}

int CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

std::vector<double> CsvTable::values(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw Error(ErrorKind::Validation, "csv has no column '" + name + "'");
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

void write_csv(const fs::path& path, const CsvTable& table) {
  std::ostringstream os;
  for (std::size_t i = 0; i < table.header.size(); ++i) os << (i ? "," : "") << table.header[i];
  os << '\n';
  for (const auto& r : table.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << fmt_double(r[i]);
    os << '\n';
  }
  write_text(path, os.str());
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Io, "empty csv " + path.string());
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.header.push_back(cell);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(t.header.size());
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw Error(ErrorKind::Io, "bad number in " + path.string());
      row.push_back(v);
      p = next;
      if (p < end && *p == ',') ++p;
    }
    if (row.size() != t.header.size())
      throw Error(ErrorKind::Io, "ragged row in " + path.string());
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Validation, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  auto f = open_or_throw(path, "wb");
  if (std::fwrite(text.data(), 1, text.size(), f.get()) != text.size())
    throw Error(ErrorKind::Io, "short write to " + path.string());
}

}  // namespace io
}  // namespace phyvid
