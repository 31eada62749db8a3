#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "sepformer/config.hpp"
#include "sepformer/pipeline.hpp"

using namespace sepformer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Per-item failures, reported as JSON on stderr and through the exit status.
struct ErrorList {
  json items = json::array();

  void add(const std::string& item, const std::string& message) { items.push_back({{"item", item}, {"error", message}}); }
  int finish() const {
    if (items.empty()) return 0;
    std::cerr << json{{"errors", items}}.dump(1) << "\n";
    return 1;
  }
};

json read_json_file(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  json j;
  f >> j;
  return j;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
  if (!f) throw std::runtime_error("failed writing " + p.string());
}

std::vector<fs::path> images_in(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool on_off(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw CLI::ValidationError("--ablation", "expected on or off, got " + v);
}

// Tokens: two-stage | one-stage-3 | one-stage-6 | angle on|off | ls-match on|off
void apply_ablation(const std::vector<std::string>& tokens, ModelConfig& model, LossConfig& loss, MatchConfig& match) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (t == "two-stage" || t == "one-stage-3" || t == "one-stage-6") {
      model.decoder_stages = parse_decoder_stages(t);
    } else if (t == "angle" || t == "ls-match") {
      if (i + 1 >= tokens.size()) throw CLI::ValidationError("--ablation", t + " needs on or off");
      const bool v = on_off(tokens[++i]);
      if (t == "angle") loss.angle_loss_enabled = v;
      else match.use_strip = v;
    } else {
      throw CLI::ValidationError("--ablation", "unknown token " + t);
    }
  }
}

void paper_scale(ModelConfig& m) {
  m.channels = 256;
  m.heads = 8;
  m.k_row = m.k_col = 300;
  m.backbone_widths = {64, 128, 256, 512};
}

struct GenerateArgs {
  std::uint64_t seed = 0;
  std::size_t count = 10;
  fs::path out;
  double spans_prob = 0.3;
  std::string distortion = "none";
  std::size_t min_rows = 1, max_rows = 8, min_cols = 1, max_cols = 8;
  std::vector<std::string> styles{"wired", "wireless", "partial"};
  std::size_t size = 256;
  std::size_t points = 16;
};

int cmd_generate(const GenerateArgs& a) {
  SpecDistribution dist;
  dist.spans_prob = a.spans_prob;
  dist.min_rows = a.min_rows;
  dist.max_rows = a.max_rows;
  dist.min_cols = a.min_cols;
  dist.max_cols = a.max_cols;
  dist.styles.clear();
  for (const auto& s : a.styles) dist.styles.push_back(parse_table_style(s));
  if (a.distortion == "mild") {
    dist.max_rotation_deg = 2.0;
    dist.max_warp = 0.005;
  } else if (a.distortion == "strong") {
    dist.max_rotation_deg = 10.0;
    dist.max_warp = 0.02;
  } else if (a.distortion != "none") {
    throw CLI::ValidationError("--distortion", "expected none, mild or strong");
  }
  dist.min_width = dist.max_width = dist.min_height = dist.max_height = a.size;
  dist.points = a.points;
  dist.validate();
  write_dataset(a.out, make_dataset(a.seed, a.count, dist), dist, a.seed);
  std::cout << "wrote " << a.count << " samples to " << a.out.string() << "\n";
  return 0;
}

struct TrainArgs {
  fs::path data, out, config;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::string schedule = "cosine";
  std::vector<std::size_t> resize_set;
  std::vector<std::string> ablation;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> channels, queries, checkpoint_every;
  bool paper = false;
};

int cmd_train(const TrainArgs& a) {
  ModelConfig model;
  LossConfig loss;
  MatchConfig match;
  TrainConfig train_cfg;
  if (a.paper) {
    paper_scale(model);
    train_cfg.resize_set = {864, 896, 928, 960};
    train_cfg.epochs = 100;
  }
  if (!a.config.empty()) {
    const auto j = read_json_file(a.config);
    for (const auto& [k, v] : j.items()) {
      if (k == "model") model = model_config_from_json(v);
      else if (k == "loss") loss = loss_config_from_json(v);
      else if (k == "match") match = match_config_from_json(v);
      else if (k == "train") train_cfg = train_config_from_json(v);
      else throw std::invalid_argument("unknown config block " + k);
    }
  }
  if (a.schedule != "cosine") throw CLI::ValidationError("--schedule", "only cosine is supported");
  if (a.epochs) train_cfg.epochs = *a.epochs;
  if (a.lr) train_cfg.lr = *a.lr;
  if (!a.resize_set.empty()) train_cfg.resize_set = a.resize_set;
  if (a.seed) train_cfg.seed = *a.seed;
  if (a.checkpoint_every) train_cfg.checkpoint_every = *a.checkpoint_every;
  if (a.channels) model.channels = *a.channels;
  if (a.queries) model.k_row = model.k_col = *a.queries;
  apply_ablation(a.ablation, model, loss, match);
  model.validate();

  const auto data = load_split(a.data, "train", model.points);
  SepFormer<float> net(model);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    train(net, data, train_cfg, loss, match, a.out, &std::cout);
  } catch (const TrainingError& e) {
    std::cerr << json{{"errors", {{{"item", "train"}, {"error", e.what()}}}}}.dump(1) << "\n";
    return 2;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "trained " << data.size() << " samples for " << train_cfg.epochs << " epochs in " << secs << " s\n";
  return 0;
}

struct InferArgs {
  fs::path checkpoint, image, dir, out;
  std::optional<double> tau_row, tau_col;
  std::size_t resize = 256;
  bool paper = false;
};

int cmd_infer(const InferArgs& a) {
  auto cfg = model_config_from_json(read_json_file(config_path_for(a.checkpoint)));
  if (a.tau_row) cfg.tau_row = *a.tau_row;
  if (a.tau_col) cfg.tau_col = *a.tau_col;
  SepFormer<float> model(cfg);
  model.load(a.checkpoint);
  const std::size_t resize = a.paper ? 896 : a.resize;

  std::vector<fs::path> images = a.dir.empty() ? std::vector<fs::path>{a.image} : images_in(a.dir);
  fs::create_directories(a.out);
  write_text(a.out / "infer_config.json", json{{"checkpoint", a.checkpoint.string()},
                                               {"model", to_json(cfg)},
                                               {"resize", resize},
                                               {"images", images.size()}}
                                                  .dump(2) +
                                              "\n");
  std::vector<std::string> errors(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    const auto& path = images[i];
    const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
      errors[i] = "cannot read image";
      return;
    }
    const auto r = infer_image(model, bgr, resize);
    const auto stem = path.stem().string();
    write_text(a.out / (stem + ".json"),
               prediction_to_json(r.separators, path.filename().string(), bgr.cols, bgr.rows).dump(1) + "\n");
    if (r.grid) {
      write_text(a.out / (stem + ".html"), to_html(grid_to_html_structure(*r.grid)) + "\n");
    } else {
      errors[i] = r.error;
    }
  });
  ErrorList list;
  for (std::size_t i = 0; i < images.size(); ++i)
    if (!errors[i].empty()) list.add(images[i].filename().string(), errors[i]);
  std::cout << "inferred " << images.size() << " images, " << list.items.size() << " failed\n";
  return list.finish();
}

struct EvalArgs {
  fs::path pred, gt, out;
  double iou = 0.5;
  double tol = 0.02;
  std::string split = "all";
  std::size_t points = 16;
};

int cmd_eval(const EvalArgs& a) {
  std::vector<ManifestEntry> entries;
  for (const auto& e : read_manifest(a.gt)) {
    if (a.split == "all" || (a.split == "eval") == e.held_out) entries.push_back(e);
  }
  ErrorList list;
  for (const auto& e : entries)
    if (!fs::exists(a.pred / (e.stem + ".json"))) list.add(e.stem, "no prediction");
  if (!list.items.empty()) {
    std::cerr << "pred/gt count mismatch\n";
    return list.finish();
  }
  EvalConfig cfg;
  cfg.iou = a.iou;
  cfg.endpoint_tol = a.tol;
  std::vector<SampleScores> scores(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    const auto gt = read_ground_truth(a.gt / (entries[i].stem + ".json"), a.points);
    const auto pred = prediction_from_json(read_json_file(a.pred / (entries[i].stem + ".json")));
    scores[i] = score_sample(pred, gt, cfg, entries[i].stem);
  });
  auto report = to_json(aggregate(std::move(scores)));
  report["config"] = {{"iou", a.iou}, {"endpoint_tol", a.tol}, {"split", a.split}};
  const std::string text = report.dump(1) + "\n";
  if (a.out.empty()) std::cout << text;
  else write_text(a.out, text);
  const auto& c = report["corpus"];
  std::cerr << "separator F1 " << c["separators"]["f1"] << ", adjacency F1 " << c["adjacency"]["f1"]
            << ", TEDS-Struct " << c["teds_struct"] << "\n";
  return 0;
}

int cmd_render(const fs::path& image, const fs::path& separators, const fs::path& out) {
  const cv::Mat bgr = cv::imread(image.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read " + image.string());
  write_text(out, render_svg(bgr, prediction_from_json(read_json_file(separators))));
  return 0;
}

int cmd_bench(const fs::path& checkpoint, const fs::path& dir, std::size_t repeat, std::size_t resize) {
  const auto model = load_model(checkpoint);
  const auto paths = images_in(dir);
  if (paths.empty()) throw std::runtime_error("no images in " + dir.string());
  std::vector<cv::Mat> images;
  for (const auto& p : paths) images.push_back(cv::imread(p.string(), cv::IMREAD_COLOR));
  for (const auto& im : images) infer_image(model, im, resize);  // warm-up
  std::vector<double> fps;
  for (std::size_t r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& im : images) infer_image(model, im, resize);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fps.push_back(double(images.size()) / s);
  }
  std::vector<double> sorted = fps;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                          : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  json report = json::object();
  report["images"] = images.size();
  report["repeat"] = repeat;
  report["resize"] = resize;
  report["fps_per_pass"] = fps;
  report["mean_fps"] = std::accumulate(fps.begin(), fps.end(), 0.0) / double(fps.size());
  report["median_fps"] = median;
  std::cout << report.dump(1) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SepFormer table separator regression"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic table corpus");
  g->add_option("--seed", gen.seed);
  g->add_option("--count", gen.count)->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out)->required();
  g->add_option("--spans-prob", gen.spans_prob)->check(CLI::Range(0.0, 1.0));
  g->add_option("--distortion", gen.distortion, "none, mild or strong");
  g->add_option("--min-rows", gen.min_rows);
  g->add_option("--max-rows", gen.max_rows);
  g->add_option("--min-cols", gen.min_cols);
  g->add_option("--max-cols", gen.max_cols);
  g->add_option("--styles", gen.styles)->delimiter(',');
  g->add_option("--size", gen.size);
  g->add_option("--points", gen.points);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train on a generated corpus");
  t->add_option("--data", tr.data)->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out)->required();
  t->add_option("--config", tr.config)->check(CLI::ExistingFile);
  t->add_option("--epochs", tr.epochs);
  t->add_option("--lr", tr.lr);
  t->add_option("--schedule", tr.schedule);
  t->add_option("--resize-set", tr.resize_set)->delimiter(',');
  t->add_option("--ablation", tr.ablation, "two-stage | one-stage-3 | one-stage-6 | angle on|off | ls-match on|off");
  t->add_option("--seed", tr.seed);
  t->add_option("--channels", tr.channels);
  t->add_option("--queries", tr.queries);
  t->add_option("--checkpoint-every", tr.checkpoint_every);
  t->add_flag("--paper-scale", tr.paper);

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "predict separators and structure");
  i->add_option("--checkpoint", inf.checkpoint)->required()->check(CLI::ExistingFile);
  auto* img = i->add_option("--image", inf.image)->check(CLI::ExistingFile);
  auto* dir = i->add_option("--dir", inf.dir)->check(CLI::ExistingDirectory);
  img->excludes(dir);
  i->add_option("--tau-row", inf.tau_row);
  i->add_option("--tau-col", inf.tau_col);
  i->add_option("--resize", inf.resize);
  i->add_option("--out", inf.out)->required();
  i->add_flag("--paper-scale", inf.paper);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score predictions against ground truth");
  e->add_option("--pred", ev.pred)->required()->check(CLI::ExistingDirectory);
  e->add_option("--gt", ev.gt)->required()->check(CLI::ExistingDirectory);
  e->add_option("--iou", ev.iou);
  e->add_option("--tol", ev.tol, "separator endpoint tolerance");
  e->add_option("--split", ev.split)->check(CLI::IsMember({"all", "train", "eval"}));
  e->add_option("--points", ev.points);
  e->add_option("--out", ev.out);

  fs::path r_image, r_seps, r_out;
  auto* r = app.add_subcommand("render", "svg overlay of separators");
  r->add_option("--image", r_image)->required()->check(CLI::ExistingFile);
  r->add_option("--separators", r_seps)->required()->check(CLI::ExistingFile);
  r->add_option("--out", r_out)->required();

  fs::path b_ckpt, b_dir;
  std::size_t b_repeat = 3, b_resize = 256;
  auto* b = app.add_subcommand("bench", "inference throughput");
  b->add_option("--checkpoint", b_ckpt)->required()->check(CLI::ExistingFile);
  b->add_option("--dir", b_dir)->required()->check(CLI::ExistingDirectory);
  b->add_option("--repeat", b_repeat)->check(CLI::PositiveNumber);
  b->add_option("--resize", b_resize);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*i) {
      if (inf.image.empty() && inf.dir.empty()) throw CLI::ValidationError("infer", "--image or --dir is required");
      return cmd_infer(inf);
    }
    if (*e) return cmd_eval(ev);
    if (*r) return cmd_render(r_image, r_seps, r_out);
    if (*b) return cmd_bench(b_ckpt, b_dir, b_repeat, b_resize);
  } catch (const CLI::Error& err) {
    return app.exit(err);
  } catch (const std::exception& err) {
    std::cerr << json{{"errors", {{{"item", "command"}, {"error", err.what()}}}}}.dump(1) << "\n";
    return 2;
  }
  return 0;
}
