#pragma once

// CSV serialization of series and grids. Header `t,c0,...,c{C-1},observed`,
// one row per time step, floats written with 17 significant digits so every
// double survives a write/read cycle unchanged.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "koopman/dynamics.hpp"
#include "koopman/error.hpp"

namespace koopman {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_series_csv(std::ostream& os, const TimeSeries& s) {
  os << 't';
  for (Eigen::Index c = 0; c < s.channels(); ++c) os << ",c" << c;
  os << ",observed\n";
  for (Eigen::Index t = 0; t < s.length(); ++t) {
    os << format_double(s.times[static_cast<std::size_t>(t)]);
    for (Eigen::Index c = 0; c < s.channels(); ++c) os << ',' << format_double(s.values(t, c));
    os << ',' << (s.mask[static_cast<std::size_t>(t)] ? 1 : 0) << '\n';
  }
}

inline void write_series_csv(const std::filesystem::path& path, const TimeSeries& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) fail(ErrorKind::InvalidArgument, "cannot open " + path.string() + " for writing");
  write_series_csv(os, s);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& cell, const std::string& where) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') fail(ErrorKind::Corrupt, where + ": cannot parse '" + cell + "'");
  return v;
}

inline TimeSeries read_series_csv(std::istream& is, const std::string& name = "series") {
  std::string line;
  if (!std::getline(is, line)) fail(ErrorKind::Corrupt, name + ": missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header.front() != "t" || header.back() != "observed") {
    fail(ErrorKind::Corrupt, name + ": header must be t,c0,...,observed");
  }
  const std::size_t channels = header.size() - 2;
  std::vector<std::vector<double>> rows;
  TimeSeries s;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) fail(ErrorKind::Corrupt, name + ": ragged row " + std::to_string(rows.size()));
    s.times.push_back(parse_double(cells.front(), name));
    std::vector<double> row;
    for (std::size_t c = 0; c < channels; ++c) row.push_back(parse_double(cells[c + 1], name));
    rows.push_back(std::move(row));
    const std::string& flag = cells.back();
    if (flag != "0" && flag != "1") fail(ErrorKind::Corrupt, name + ": observed flag must be 0 or 1");
    s.mask.push_back(flag == "1");
  }
  if (rows.empty()) fail(ErrorKind::Corrupt, name + ": no data rows");
  s.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(channels));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t c = 0; c < channels; ++c) s.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = rows[t][c];
  }
  s.validate();
  return s;
}

inline TimeSeries read_series_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::InvalidArgument, "cannot open " + path.string());
  return read_series_csv(is, path.string());
}

inline std::string grid_pixel_filename(int row, int col) {
  return std::to_string(row) + "_" + std::to_string(col) + ".csv";
}

/// Writes `dir/{row}_{col}.csv` for every pixel.
inline void write_grid(const std::filesystem::path& dir, const PixelGrid& grid) {
  std::filesystem::create_directories(dir);
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) write_series_csv(dir / grid_pixel_filename(r, c), grid.at(r, c));
  }
}

/// Reads a grid directory; dimensions come from the largest row/col indices present.
inline PixelGrid read_grid(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::InvalidArgument, dir.string() + " is not a directory");
  int height = 0;
  int width = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string stem = entry.path().stem().string();
    const auto sep = stem.find('_');
    if (entry.path().extension() != ".csv" || sep == std::string::npos) continue;
    try {
      height = std::max(height, std::stoi(stem.substr(0, sep)) + 1);
      width = std::max(width, std::stoi(stem.substr(sep + 1)) + 1);
    } catch (const std::exception&) {
      continue;
    }
  }
  if (height == 0) fail(ErrorKind::EmptySeries, dir.string() + " holds no pixel files");
  PixelGrid grid;
  grid.height = height;
  grid.width = width;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) grid.pixels.push_back(read_series_csv(dir / grid_pixel_filename(r, c)));
  }
  grid.channels = static_cast<int>(grid.pixels.front().channels());
  grid.validate();
  return grid;
}

}  // namespace koopman
