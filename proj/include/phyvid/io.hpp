#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "phyvid/image.hpp"

namespace phyvid::io {

namespace fs = std::filesystem;

// 8-bit grayscale PNG; values are clamped to [0,1] and rounded to k/255.
void write_png(const fs::path& path, const Image& img);
Image read_png(const fs::path& path);

// Raw little-endian float32, row-major, no header.
void write_f32(const fs::path& path, const std::vector<double>& values);
std::vector<double> read_f32(const fs::path& path);

double quantize8(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const;  // -1 when absent
  std::vector<double> values(const std::string& name) const;
};

void write_csv(const fs::path& path, const CsvTable& table);
CsvTable read_csv(const fs::path& path);

void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

void write_text(const fs::path& path, const std::string& text);

// Shortest decimal that round-trips, for byte-stable text outputs.
std::string fmt_double(double v);

}  // namespace phyvid::io
