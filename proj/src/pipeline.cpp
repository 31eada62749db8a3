#include "sepformer/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sepformer/config.hpp"
#include "sepformer/rng.hpp"

namespace sepformer {

using nlohmann::json;

Letterbox Letterbox::fit(std::size_t src_width, std::size_t src_height, std::size_t longer_side) {
  if (src_width == 0 || src_height == 0 || longer_side == 0) throw std::invalid_argument("empty image or target size");
  Letterbox lb;
  lb.src_width = src_width;
  lb.src_height = src_height;
  const double s = double(longer_side) / double(std::max(src_width, src_height));
  lb.resized_width = std::max<std::size_t>(1, std::lround(src_width * s));
  lb.resized_height = std::max<std::size_t>(1, std::lround(src_height * s));
  lb.width = (lb.resized_width + 31) / 32 * 32;
  lb.height = (lb.resized_height + 31) / 32 * 32;
  return lb;
}

cv::Mat Letterbox::apply(const cv::Mat& bgr) const {
  cv::Mat resized;
  if (std::size_t(bgr.cols) == resized_width && std::size_t(bgr.rows) == resized_height) {
    resized = bgr;
  } else {
    cv::resize(bgr, resized, cv::Size(int(resized_width), int(resized_height)), 0, 0, cv::INTER_AREA);
  }
  cv::Mat out(int(height), int(width), CV_8UC3, cv::Scalar(kPadGray, kPadGray, kPadGray));
  resized.copyTo(out(cv::Rect(0, 0, int(resized_width), int(resized_height))));
  return out;
}

Point Letterbox::to_frame(Point p) const {
  return {p.x * double(resized_width) / double(width), p.y * double(resized_height) / double(height)};
}

Point Letterbox::from_frame(Point p) const {
  return {p.x * double(width) / double(resized_width), p.y * double(height) / double(resized_height)};
}

LabeledSeparator Letterbox::to_frame(const LabeledSeparator& s, Axis axis) const {
  LabeledSeparator out;
  out.line = canonicalize({to_frame(s.line.p1), to_frame(s.line.p2)}, axis);
  for (const auto& p : s.strip.points) out.strip.points.push_back(to_frame(p));
  return out;
}

ScoredSeparator Letterbox::from_frame(const ScoredSeparator& s) const {
  ScoredSeparator out = s;
  out.line = {from_frame(s.line.p1), from_frame(s.line.p2)};
  if (s.strip) {
    for (auto& p : out.strip->points) p = from_frame(p);
  }
  return out;
}

template <typename T>
BasicTensor<T> image_to_tensor(const cv::Mat& bgr) {
  if (bgr.type() != CV_8UC3) throw std::invalid_argument("expected an 8-bit 3-channel image");
  const std::size_t h = bgr.rows, w = bgr.cols;
  std::vector<T> v(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(int(y));
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        v[c * h * w + y * w + x] = T(row[x][2 - c]) / T(127.5) - T(1);
      }
    }
  }
  return BasicTensor<T>({3, h, w}, std::move(v));
}

template BasicTensor<float> image_to_tensor<float>(const cv::Mat&);
template BasicTensor<double> image_to_tensor<double>(const cv::Mat&);

std::size_t worker_count() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SEPFORMER_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return std::min<std::size_t>(std::size_t(v), hw);
  }
  return hw;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<TrainSample> load_split(const std::filesystem::path& dir, const std::string& split, std::size_t points) {
  if (split != "train" && split != "eval" && split != "all") throw std::invalid_argument("unknown split " + split);
  std::vector<ManifestEntry> chosen;
  for (const auto& e : read_manifest(dir)) {
    if (split == "all" || (split == "eval") == e.held_out) chosen.push_back(e);
  }
  std::vector<TrainSample> out(chosen.size());
  parallel_for(chosen.size(), [&](std::size_t i) {
    auto gt = read_ground_truth(dir / (chosen[i].stem + ".json"), points);
    out[i] = {chosen[i].stem, gt.image, {gt.rows, gt.cols}};
  });
  return out;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  if (resize_set.empty()) throw std::invalid_argument("resize set is empty");
  for (auto s : resize_set)
    if (s < 32) throw std::invalid_argument("resize sizes must be at least 32");
}

json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"lr", cfg.lr},
          {"schedule", "cosine"},
          {"resize_set", cfg.resize_set},
          {"seed", cfg.seed},
          {"checkpoint_every", cfg.checkpoint_every},
          {"adam",
           {{"beta1", cfg.adam.beta1},
            {"beta2", cfg.adam.beta2},
            {"eps", cfg.adam.eps},
            {"weight_decay", cfg.adam.weight_decay},
            {"clip_norm", cfg.adam.clip_norm}}}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "epochs") c.epochs = v;
    else if (k == "lr") c.lr = v;
    else if (k == "schedule") {
      if (v != "cosine") throw std::invalid_argument("only the cosine schedule is supported");
    } else if (k == "resize_set") c.resize_set = v.get<std::vector<std::size_t>>();
    else if (k == "seed") c.seed = v;
    else if (k == "checkpoint_every") c.checkpoint_every = v;
    else if (k == "adam") {
      for (const auto& [ak, av] : v.items()) {
        if (ak == "beta1") c.adam.beta1 = av;
        else if (ak == "beta2") c.adam.beta2 = av;
        else if (ak == "eps") c.adam.eps = av;
        else if (ak == "weight_decay") c.adam.weight_decay = av;
        else if (ak == "clip_norm") c.adam.clip_norm = av;
        else throw std::invalid_argument("unknown adam key " + ak);
      }
    } else throw std::invalid_argument("unknown train key " + k);
  }
  c.validate();
  return c;
}

namespace {

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.cls += b.cls;
  acc.angle += b.angle;
  acc.line += b.line;
  acc.linestrip += b.linestrip;
  acc.axis_total += b.axis_total;
  acc.grand_total += b.grand_total;
}

void divide(LossBreakdown& acc, double n) {
  acc.cls /= n;
  acc.angle /= n;
  acc.line /= n;
  acc.linestrip /= n;
  acc.axis_total /= n;
  acc.grand_total /= n;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

}  // namespace

std::string loss_log_header() {
  return "epoch,steps,lr,row_cls,row_angle,row_line,row_linestrip,row_total,"
         "col_cls,col_angle,col_line,col_linestrip,col_total,total";
}

std::string loss_log_row(const EpochRecord& r) {
  std::ostringstream s;
  s << r.epoch << ',' << r.steps << ',' << fmt(r.lr);
  for (const auto* b : {&r.row, &r.col}) {
    s << ',' << fmt(b->cls) << ',' << fmt(b->angle) << ',' << fmt(b->line) << ',' << fmt(b->linestrip) << ','
      << fmt(b->axis_total);
  }
  s << ',' << fmt(r.total);
  return s.str();
}

std::vector<EpochRecord> train(SepFormer<float>& model, std::span<const TrainSample> data, const TrainConfig& cfg,
                               const LossConfig& loss_cfg, const MatchConfig& match_cfg,
                               const std::filesystem::path& out_dir, std::ostream* progress) {
  cfg.validate();
  loss_cfg.validate();
  match_cfg.validate();
  if (data.empty()) throw TrainingError("no training samples");
  std::filesystem::create_directories(out_dir);
  write_file(out_dir / "config.json", json{{"model", to_json(model.config())},
                                           {"loss", to_json(loss_cfg)},
                                           {"match", to_json(match_cfg)},
                                           {"train", to_json(cfg)},
                                           {"samples", data.size()}}
                                              .dump(2) +
                                          "\n");
  std::ofstream log(out_dir / "loss_log.csv", std::ios::binary);
  if (!log) throw TrainingError("cannot write " + (out_dir / "loss_log.csv").string());
  log << loss_log_header() << "\n";

  Adam<float> adam(model.params().tensors(), cfg.adam);
  const std::uint64_t total_steps = cfg.epochs * data.size();
  std::uint64_t step = 0;
  Rng root(cfg.seed);
  std::vector<EpochRecord> records;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng = root.fork(epoch);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t idx : order) {
      const auto& s = data[idx];
      const std::size_t side = cfg.resize_set[rng.index(cfg.resize_set.size())];
      const auto lb = Letterbox::fit(s.image.cols, s.image.rows, side);
      SeparatorTargets targets;
      for (const auto& r : s.targets.rows) targets.rows.push_back(lb.to_frame(r, Axis::Row));
      for (const auto& c : s.targets.cols) targets.cols.push_back(lb.to_frame(c, Axis::Col));
      const auto image = image_to_tensor<float>(lb.apply(s.image));

      adam.zero_grad();
      auto loss = sample_loss(model, image, targets, loss_cfg, match_cfg);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << " step " << step << " sample " << s.stem << " (row "
            << loss.row.cls << "/" << loss.row.angle << "/" << loss.row.line << "/" << loss.row.linestrip << ", col "
            << loss.col.cls << "/" << loss.col.angle << "/" << loss.col.line << "/" << loss.col.linestrip << ")";
        throw TrainingError(msg.str());
      }
      loss.total.backward();
      rec.lr = cosine_lr(cfg.lr, step, total_steps);
      try {
        adam.step(rec.lr);
      } catch (const std::exception& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + " sample " +
                            s.stem + ": " + e.what());
      }
      accumulate(rec.row, loss.row);
      accumulate(rec.col, loss.col);
      rec.total += value;
      ++rec.steps;
      ++step;
    }
    divide(rec.row, double(rec.steps));
    divide(rec.col, double(rec.steps));
    rec.total /= double(rec.steps);
    log << loss_log_row(rec) << "\n" << std::flush;
    if (progress) {
      *progress << "epoch " << epoch << "/" << cfg.epochs << " loss " << fmt(rec.total) << " lr " << fmt(rec.lr)
                << std::endl;
    }
    if (cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) {
      model.save(out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"));
    }
    records.push_back(rec);
  }
  model.save(out_dir / "final.ckpt");
  return records;
}

SepFormer<float> load_model(const std::filesystem::path& checkpoint) {
  std::ifstream f(config_path_for(checkpoint));
  if (!f) throw CheckpointError("missing config " + config_path_for(checkpoint).string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw CheckpointError("bad config next to " + checkpoint.string() + ": " + e.what());
  }
  SepFormer<float> model(model_config_from_json(j));
  model.load(checkpoint);
  return model;
}

InferResult infer_image(const SepFormer<float>& model, const cv::Mat& bgr, std::size_t resize,
                        const ReconstructConfig& rc) {
  const auto lb = Letterbox::fit(bgr.cols, bgr.rows, resize);
  const auto raw = model.forward(image_to_tensor<float>(lb.apply(bgr)), true);
  InferResult out;
  for (const auto& s : raw.rows.separators) out.separators.rows.separators.push_back(lb.from_frame(s));
  for (const auto& s : raw.cols.separators) out.separators.cols.separators.push_back(lb.from_frame(s));
  try {
    out.grid = separators_to_grid(std::span<const ScoredSeparator>(out.separators.rows.separators),
                                  std::span<const ScoredSeparator>(out.separators.cols.separators), rc);
  } catch (const DegenerateTableError& e) {
    out.error = e.what();
  }
  return out;
}

namespace {

json scored_json(const std::vector<ScoredSeparator>& seps) {
  json out = json::array();
  for (const auto& s : seps) {
    json e = {{"score", s.score}, {"line", {s.line.p1.x, s.line.p1.y, s.line.p2.x, s.line.p2.y}}};
    if (s.strip) {
      json strip = json::array();
      for (const auto& p : s.strip->points) strip.push_back({p.x, p.y});
      e["strip"] = strip;
    }
    out.push_back(e);
  }
  return out;
}

std::vector<ScoredSeparator> scored_from_json(const json& arr, Axis axis) {
  std::vector<ScoredSeparator> out;
  for (const auto& e : arr) {
    ScoredSeparator s;
    s.axis = axis;
    s.score = e.value("score", 1.0);
    const auto& l = e.at("line");
    s.line = {{l.at(0), l.at(1)}, {l.at(2), l.at(3)}};
    if (e.contains("strip")) {
      LineStrip strip;
      for (const auto& p : e.at("strip")) strip.points.push_back({p.at(0), p.at(1)});
      s.strip = std::move(strip);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

json prediction_to_json(const Prediction& p, const std::string& image_name, std::size_t width, std::size_t height) {
  return {{"image", image_name},
          {"width", width},
          {"height", height},
          {"rows", scored_json(p.rows.separators)},
          {"cols", scored_json(p.cols.separators)}};
}

Prediction prediction_from_json(const json& j) {
  Prediction p;
  p.rows.separators = scored_from_json(j.at("rows"), Axis::Row);
  p.cols.separators = scored_from_json(j.at("cols"), Axis::Col);
  return p;
}

SampleScores score_sample(const Prediction& pred, const TableGroundTruth& gt, const EvalConfig& cfg,
                          const std::string& stem) {
  SampleScores s;
  s.stem = stem;
  // rows and cols pooled, a row can only hit a row
  const std::size_t hits = separator_hits(pred.rows.separators, gt.rows, cfg.endpoint_tol) +
                           separator_hits(pred.cols.separators, gt.cols, cfg.endpoint_tol);
  s.separators = prf_from_counts(hits, pred.rows.separators.size() + pred.cols.separators.size(),
                                 gt.rows.size() + gt.cols.size());

  const auto gt_grid = separators_to_grid(std::span<const LabeledSeparator>(gt.rows),
                                          std::span<const LabeledSeparator>(gt.cols), cfg.reconstruct);
  const auto gt_tree = cells_to_html_structure(gt.cells, gt.n_rows);
  try {
    const auto grid = separators_to_grid(std::span<const ScoredSeparator>(pred.rows.separators),
                                         std::span<const ScoredSeparator>(pred.cols.separators), cfg.reconstruct);
    s.adjacency = adjacency_prf(grid, gt_grid, cfg.iou);
    s.teds = teds_struct(grid_to_html_structure(grid), gt_tree);
  } catch (const DegenerateTableError& e) {
    s.error = e.what();
    s.adjacency = {};
    s.teds = teds_struct(StructureNode{"table", 1, 1, {}}, gt_tree);
  }
  return s;
}

EvalReport aggregate(std::vector<SampleScores> samples) {
  EvalReport r;
  r.samples = std::move(samples);
  const double n = double(r.samples.size());
  if (n == 0) return r;
  for (const auto& s : r.samples) {
    for (auto [acc, v] : {std::pair{&r.separators, &s.separators}, std::pair{&r.adjacency, &s.adjacency}}) {
      acc->precision += v->precision / n;
      acc->recall += v->recall / n;
      acc->f1 += v->f1 / n;
    }
    r.teds += s.teds / n;
  }
  return r;
}

json to_json(const EvalReport& r) {
  auto prf = [](const PRF& p) { return json{{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}}; };
  json samples = json::array();
  std::size_t failures = 0;
  for (const auto& s : r.samples) {
    json e = {{"stem", s.stem}, {"separators", prf(s.separators)}, {"adjacency", prf(s.adjacency)}, {"teds_struct", s.teds}};
    if (!s.error.empty()) {
      e["error"] = s.error;
      ++failures;
    }
    samples.push_back(e);
  }
  return {{"count", r.samples.size()},
          {"reconstruction_failures", failures},
          {"corpus", {{"separators", prf(r.separators)}, {"adjacency", prf(r.adjacency)}, {"teds_struct", r.teds}}},
          {"samples", samples}};
}

namespace {

std::string base64(const std::vector<unsigned char>& bytes) {
  static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += {tbl[v >> 18], tbl[(v >> 12) & 63], tbl[(v >> 6) & 63], tbl[v & 63]};
  }
  if (i + 1 == bytes.size()) {
    unsigned v = bytes[i] << 16;
    out += {tbl[v >> 18], tbl[(v >> 12) & 63], '=', '='};
  } else if (i + 2 == bytes.size()) {
    unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += {tbl[v >> 18], tbl[(v >> 12) & 63], tbl[(v >> 6) & 63], '='};
  }
  return out;
}

}  // namespace

std::string render_svg(const cv::Mat& bgr, const Prediction& p) {
  std::vector<unsigned char> png;
  cv::imencode(".png", bgr, png);
  const int w = bgr.cols, h = bgr.rows;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\">\n";
  s << "<image width=\"" << w << "\" height=\"" << h << "\" href=\"data:image/png;base64," << base64(png) << "\"/>\n";
  for (const auto& [seps, color] : {std::pair{&p.rows.separators, "red"}, std::pair{&p.cols.separators, "blue"}}) {
    for (const auto& sep : *seps) {
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      const auto path = separator_path(sep);
      for (std::size_t i = 0; i < path.points.size(); ++i) {
        s << (i ? " " : "") << fmt(path.points[i].x * w) << ',' << fmt(path.points[i].y * h);
      }
      s << "\"/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace sepformer
