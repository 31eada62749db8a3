#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "sepformer/losses.hpp"
#include "sepformer/matching.hpp"
#include "sepformer/metrics.hpp"
#include "sepformer/model.hpp"
#include "sepformer/optim.hpp"
#include "sepformer/reconstruct.hpp"
#include "sepformer/synthdata.hpp"
#include "sepformer/training.hpp"

namespace sepformer {

/// Aspect-preserving resize of the longer side, then mid-gray padding on the
/// right and bottom up to a multiple of 32.
struct Letterbox {
  std::size_t src_width = 0, src_height = 0;
  std::size_t resized_width = 0, resized_height = 0;
  std::size_t width = 0, height = 0;  // padded frame

  static Letterbox fit(std::size_t src_width, std::size_t src_height, std::size_t longer_side);

  cv::Mat apply(const cv::Mat& bgr) const;
  /// Normalized source coordinates to normalized padded-frame coordinates.
  Point to_frame(Point p) const;
  Point from_frame(Point p) const;
  LabeledSeparator to_frame(const LabeledSeparator& s, Axis axis) const;
  ScoredSeparator from_frame(const ScoredSeparator& s) const;
};

inline constexpr unsigned char kPadGray = 128;

/// 8-bit BGR to [3, H, W] RGB scaled to [-1, 1].
template <typename T>
BasicTensor<T> image_to_tensor(const cv::Mat& bgr);

/// Reads SEPFORMER_THREADS; at least 1, at most the hardware concurrency.
std::size_t worker_count();
/// Runs fn(i) for i in [0, n) on worker_count() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

struct TrainSample {
  std::string stem;
  cv::Mat image;
  SeparatorTargets targets;
};

/// Samples of the given split ("train", "eval" or "all") listed in the manifest.
std::vector<TrainSample> load_split(const std::filesystem::path& dir, const std::string& split, std::size_t points);

struct TrainConfig {
  std::size_t epochs = 60;
  double lr = 3e-5;
  std::vector<std::size_t> resize_set{224, 256, 288};
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 10;  // epochs; 0 keeps only the final checkpoint
  AdamConfig adam;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t steps = 0;
  double lr = 0.0;        // at the epoch's last step
  LossBreakdown row;      // averages over the epoch
  LossBreakdown col;
  double total = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Adam with a per-step cosine-annealed rate, one sample per step, shuffled
/// per epoch. Writes config.json, loss_log.csv, periodic checkpoints and
/// final.ckpt under out_dir. A non-finite loss or gradient aborts.
std::vector<EpochRecord> train(SepFormer<float>& model, std::span<const TrainSample> data, const TrainConfig& cfg,
                               const LossConfig& loss_cfg, const MatchConfig& match_cfg,
                               const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

std::string loss_log_header();
std::string loss_log_row(const EpochRecord& r);

/// Model built from the config stored next to the checkpoint.
SepFormer<float> load_model(const std::filesystem::path& checkpoint);

struct InferResult {
  Prediction separators;  // normalized source-image coordinates, thresholded
  std::optional<CellGrid> grid;
  std::string error;      // set when reconstruction failed
};

InferResult infer_image(const SepFormer<float>& model, const cv::Mat& bgr, std::size_t resize,
                        const ReconstructConfig& rc = {});

nlohmann::json prediction_to_json(const Prediction& p, const std::string& image_name, std::size_t width,
                                  std::size_t height);
Prediction prediction_from_json(const nlohmann::json& j);

struct SampleScores {
  std::string stem;
  PRF separators;  // rows and cols pooled
  PRF adjacency;
  double teds = 0.0;
  std::string error;
};

struct EvalReport {
  std::vector<SampleScores> samples;
  PRF separators;  // means over samples
  PRF adjacency;
  double teds = 0.0;
};

struct EvalConfig {
  double iou = 0.5;
  double endpoint_tol = 0.02;
  ReconstructConfig reconstruct;
};

SampleScores score_sample(const Prediction& pred, const TableGroundTruth& gt, const EvalConfig& cfg,
                          const std::string& stem = "");
EvalReport aggregate(std::vector<SampleScores> samples);
nlohmann::json to_json(const EvalReport& r);

/// Svg overlay: the raster embedded as a data URI, rows in red, cols in blue.
std::string render_svg(const cv::Mat& bgr, const Prediction& p);

}  // namespace sepformer
