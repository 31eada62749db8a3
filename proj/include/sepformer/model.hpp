#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sepformer/geometry.hpp"
#include "sepformer/layers.hpp"
#include "sepformer/ops.hpp"

namespace sepformer {

enum class DecoderStages {
  TwoStage3Layer,  // coarse single-line decoder, then fine line-strip decoder
  OneStage3Layer,  // one decoder regressing lines and strips together
  OneStage6Layer,
};

std::string_view decoder_stages_name(DecoderStages s);
DecoderStages parse_decoder_stages(std::string_view name);

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::size_t channels = 64;
  std::size_t heads = 4;
  std::size_t deform_points = 4;
  std::size_t encoder_layers = 1;
  std::size_t coarse_layers = 3;
  std::size_t fine_layers = 3;
  std::size_t k_row = 40;
  std::size_t k_col = 40;
  std::size_t points = 16;
  double tau_row = 0.95;
  double tau_col = 0.95;
  std::vector<std::size_t> strides{8, 16, 32};
  // stem, then the three stages producing C2, C3, C4
  std::vector<std::size_t> backbone_widths{16, 32, 64, 128};
  DecoderStages decoder_stages = DecoderStages::TwoStage3Layer;
  double proposal_base_scale = 0.05;
  std::size_t ffn_multiplier = 2;
  // smallest extent used to scale sampling offsets around a line's endpoints
  double min_line_extent = 0.05;
  // stop gradients through the geometry handed from one layer to the next
  bool detach_references = true;
  double class_prior = 0.01;
  std::uint64_t init_seed = 1;

  void validate() const;
  std::size_t queries(Axis axis) const { return axis == Axis::Row ? k_row : k_col; }
  double tau(Axis axis) const { return axis == Axis::Row ? tau_row : tau_col; }
  bool two_stage() const { return decoder_stages == DecoderStages::TwoStage3Layer; }
  /// Decoder depth of the one-stage variants.
  std::size_t one_stage_layers() const { return decoder_stages == DecoderStages::OneStage6Layer ? 6 : 3; }
};

template <typename T>
struct EncoderMemory {
  BasicTensor<T> sequence;         // M, [S, C]
  std::vector<LevelShape> levels;  // strides 8, 16, 32 in that order
};

/// Geometry and scores produced by one decoding step. logits is [K] (absent
/// for fine layers), lines [K, 4], strips [K, 2P] when the step emits them.
/// deltas holds the coordinate update the step added in logit space.
template <typename T>
struct StageOutput {
  BasicTensor<T> logits;
  BasicTensor<T> lines;
  BasicTensor<T> strips;
  BasicTensor<T> deltas;
};

template <typename T>
struct QuerySelection {
  StageOutput<T> proposals;           // the K selected encoder proposals
  BasicTensor<T> reference_logits;    // inverse-sigmoid line coordinates [K, 4]
  BasicTensor<T> content;             // [K, C]
  std::vector<std::size_t> positions; // rows of M that were selected
};

template <typename T>
struct CoarseResult {
  QuerySelection<T> selection;
  std::vector<StageOutput<T>> layers;
  BasicTensor<T> embeddings;  // final decoder embeddings [K, C]
};

template <typename T>
struct FineResult {
  std::vector<std::size_t> queries;    // coarse query index of each row
  std::vector<StageOutput<T>> layers;  // strips [n, 2P] per layer
};

struct AxisPrediction {
  std::vector<ScoredSeparator> separators;
};

struct Prediction {
  AxisPrediction rows;
  AxisPrediction cols;
};

/// Indices of the k largest scores, ties broken towards the lower index.
template <typename T>
std::vector<std::size_t> top_k_indices(std::span<const T> scores, std::size_t k);

/// [n, 4] lines to [n, 2P] strips of P evenly spaced points, point t at
/// (1 - t/P) p1 + (t/P) p2 for t = 1..P.
template <typename T>
BasicTensor<T> sample_strips(const BasicTensor<T>& lines, std::size_t points);

/// Anchors for every position of every level, [S, 4].
template <typename T>
BasicTensor<T> proposal_anchors(std::span<const LevelShape> levels, Axis axis, double base_scale);

template <typename T>
class SepFormer {
 public:
  explicit SepFormer(ModelConfig cfg);
  ~SepFormer();
  SepFormer(SepFormer&&) noexcept;
  SepFormer& operator=(SepFormer&&) noexcept;

  const ModelConfig& config() const { return cfg_; }
  const ParamSet<T>& params() const { return params_; }
  ParamSet<T>& params() { return params_; }

  /// image [3, H, W], H and W multiples of 32 -> C2, C3, C4
  std::array<BasicTensor<T>, 3> backbone_forward(const BasicTensor<T>& image) const;
  EncoderMemory<T> encoder_forward(const std::array<BasicTensor<T>, 3>& features) const;
  EncoderMemory<T> encode(const BasicTensor<T>& image) const;

  QuerySelection<T> query_select(const EncoderMemory<T>& memory, Axis axis) const;
  /// Coarse decoding; for the one-stage variants the layers carry strips too.
  CoarseResult<T> coarse_forward(const EncoderMemory<T>& memory, Axis axis) const;
  /// Fine decoding of the given coarse queries (two-stage only).
  FineResult<T> fine_forward(const EncoderMemory<T>& memory, Axis axis, const CoarseResult<T>& coarse,
                             std::span<const std::size_t> queries) const;

  /// Final-layer separators of both axes. With threshold the fine stage runs
  /// only on queries scoring at least tau and only those are returned;
  /// otherwise every query is refined and returned.
  Prediction forward(const BasicTensor<T>& image, bool threshold = true) const;

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  struct Impl;
  ModelConfig cfg_;
  ParamSet<T> params_;
  std::unique_ptr<Impl> impl_;
};

extern template class SepFormer<float>;
extern template class SepFormer<double>;

/// The checkpoint for `path` keeps its config next to it at path + ".json".
std::filesystem::path config_path_for(const std::filesystem::path& checkpoint);

}  // namespace sepformer
