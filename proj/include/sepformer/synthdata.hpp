#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <opencv2/core.hpp>

#include "sepformer/geometry.hpp"
#include "sepformer/matching.hpp"

namespace sepformer {

enum class TableStyle { Wired, Wireless, PartialBorders };

std::string_view table_style_name(TableStyle s);
TableStyle parse_table_style(std::string_view name);

/// Inclusive logical cell extent on the grid. Ordered row-major by top-left slot.
struct CellSpan {
  std::size_t r0 = 0, r1 = 0, c0 = 0, c1 = 0;

  friend bool operator==(const CellSpan&, const CellSpan&) = default;
  friend auto operator<=>(const CellSpan& a, const CellSpan& b) {
    return std::tie(a.r0, a.c0, a.r1, a.c1) <=> std::tie(b.r0, b.c0, b.r1, b.c1);
  }
};

/// Rotation about the image centre followed by a sinusoidal displacement:
/// x += A * W * sin(2 pi k y / H + phase_x), y += A * H * sin(2 pi k x / W + phase_y).
struct Distortion {
  double rotation_deg = 0.0;
  double warp_amplitude = 0.0;  // A, normalized
  double warp_periods = 1.0;    // k
  double phase_x = 0.0;
  double phase_y = 0.0;

  bool is_identity() const { return rotation_deg == 0.0 && warp_amplitude == 0.0; }
  void validate() const;
};

struct TableSpec {
  std::size_t n_rows = 2;
  std::size_t n_cols = 2;
  std::vector<CellSpan> spans;
  TableStyle style = TableStyle::Wired;
  Distortion distortion;
  std::size_t width = 256;
  std::size_t height = 256;
  std::size_t points = 16;  // P of every ground-truth strip
  std::uint64_t seed = 0;

  void validate() const;
};

struct TableGroundTruth {
  cv::Mat image;       // 8-bit BGR, height x width
  cv::Mat ruling_mask; // 8-bit, non-zero where ruling lines were drawn
  std::vector<LabeledSeparator> rows;
  std::vector<LabeledSeparator> cols;
  std::vector<CellSpan> cells;  // row-major by (r0, c0)
  std::size_t n_rows = 0;       // logical grid after dropping lines no cell needs
  std::size_t n_cols = 0;

  std::size_t width() const { return static_cast<std::size_t>(image.cols); }
  std::size_t height() const { return static_cast<std::size_t>(image.rows); }
  const std::vector<LabeledSeparator>& axis(Axis a) const { return a == Axis::Row ? rows : cols; }
};

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Maps a normalized point through the distortion of a width x height image.
Point warp_point(Point p, const Distortion& d, std::size_t width, std::size_t height);
/// Inverse of warp_point (fixed-point iteration on the displacement).
Point unwarp_point(Point p, const Distortion& d, std::size_t width, std::size_t height);
LineStrip warp_labels(const LineStrip& strip, const Distortion& d, std::size_t width, std::size_t height);

TableGroundTruth generate(const TableSpec& spec);

struct SpecDistribution {
  std::size_t min_rows = 1, max_rows = 8;
  std::size_t min_cols = 1, max_cols = 8;
  double spans_prob = 0.3;  // chance that a table gets merged regions
  std::vector<TableStyle> styles{TableStyle::Wired, TableStyle::Wireless, TableStyle::PartialBorders};
  double max_rotation_deg = 0.0;
  double max_warp = 0.0;
  std::size_t min_width = 256, max_width = 256;
  std::size_t min_height = 256, max_height = 256;
  std::size_t points = 16;

  void validate() const;
};

TableSpec sample_spec(std::uint64_t seed, const SpecDistribution& dist);

/// Every tenth sample (index % 10 == 9) is held out.
bool is_held_out(std::size_t index);

struct ManifestEntry {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool held_out = false;
  TableSpec spec;
  std::string stem;  // file name without extension
};

struct Dataset {
  std::vector<TableGroundTruth> samples;
  std::vector<ManifestEntry> manifest;
};

Dataset make_dataset(std::uint64_t seed, std::size_t n, const SpecDistribution& dist);

/// Writes <stem>.png and <stem>.json per sample plus manifest.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& data, const SpecDistribution& dist,
                   std::uint64_t seed);
void write_ground_truth(const std::filesystem::path& json_path, const std::string& image_name,
                        const TableGroundTruth& gt);
/// Reads a ground-truth document and its image; the image path is relative
/// to the document.
TableGroundTruth read_ground_truth(const std::filesystem::path& json_path, std::size_t points);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

}  // namespace sepformer
