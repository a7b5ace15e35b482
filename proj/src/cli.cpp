#include "signdet/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <optional>
#include <ostream>
#include <set>

#include "CLI11.hpp"

#include "signdet/annoserve.hpp"
#include "signdet/dataset.hpp"
#include "signdet/io.hpp"
#include "signdet/labelfmt.hpp"
#include "signdet/modelcfg.hpp"
#include "signdet/report.hpp"
#include "signdet/yolo_loss.hpp"

#include "text_util.hpp"

namespace signdet::cli {

namespace fs = std::filesystem;

namespace {

/// Raised for bad flag combinations found after CLI11 has parsed.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::vector<Annotation> read_labels(const fs::path &file) {
  try {
    return labelfmt::parse_label_file(io::read_text(file));
  } catch (const labelfmt::LabelError &e) {
    throw std::runtime_error(file.string() + ": " + e.what());
  }
}

std::vector<Detection> read_predictions(const fs::path &file) {
  try {
    return labelfmt::parse_prediction_file(io::read_text(file));
  } catch (const labelfmt::LabelError &e) {
    throw std::runtime_error(file.string() + ": " + e.what());
  }
}

std::map<std::string, fs::path> label_files(const fs::path &dir) {
  std::map<std::string, fs::path> out;
  for (const auto &p : io::list_files(dir, {".txt"}))
    if (p.stem() != "classes")
      out[p.stem().string()] = p;
  return out;
}

std::string resolve_descriptor(const std::string &given) {
  if (!given.empty())
    return given;
  if (const char *env = std::getenv(config_env); env && *env)
    return env;
  return {};
}

/// Annotations of every image in the descriptor's splits (train and val).
std::map<std::string, std::vector<Annotation>> descriptor_samples(
    const labelfmt::DatasetDescriptor &d) {
  std::map<std::string, std::vector<Annotation>> samples;
  std::vector<std::pair<std::string, std::string>> splits{{"train", d.train_dir}};
  if (d.val_dir != d.train_dir)
    splits.emplace_back("val", d.val_dir);
  for (const auto &[name, dir] : splits) {
    fs::path label_dir = io::label_dir_for(dir);
    std::error_code ec;
    bool has_labels = fs::is_directory(label_dir, ec);
    for (const auto &id : dataset::image_ids(dir)) {
      fs::path file = label_dir / (id + ".txt");
      auto &anns = samples[name + "/" + id];
      if (has_labels && fs::exists(file, ec))
        anns = read_labels(file);
    }
  }
  return samples;
}

std::map<std::string, std::vector<Annotation>> dir_samples(const fs::path &label_dir) {
  std::map<std::string, std::vector<Annotation>> samples;
  for (const auto &[id, file] : label_files(label_dir))
    samples[id] = read_labels(file);
  return samples;
}

/// Shared output plumbing: `--format` and `--output`.
struct Output {
  std::string format = "text";
  std::string file;

  void add(CLI::App *cmd, std::vector<std::string> formats = {"text", "json", "csv"}) {
    cmd->add_option("--format", format, "Output format")
        ->check(CLI::IsMember(formats))
        ->capture_default_str();
    cmd->add_option("-o,--output", file, "Write to this file instead of stdout");
  }

  void emit(std::ostream &out, const std::string &text) const {
    if (file.empty())
      out << text;
    else
      io::write_atomic(file, text);
  }
};

template <typename T> std::string render(const Output &o, const T &value) {
  if (o.format == "json")
    return to_json(value);
  if (o.format == "csv")
    return to_csv(value);
  return to_text(value);
}

struct DataInput {
  std::string descriptor;
  std::string labels;
  int nc = 0;

  void add(CLI::App *cmd) {
    cmd->add_option("--data", descriptor,
                    std::string("Dataset descriptor (default: $") + config_env + ")");
    cmd->add_option("--labels", labels, "Label directory, instead of a descriptor");
    cmd->add_option("--nc", nc, "Class count when --labels is used")->check(CLI::PositiveNumber);
  }

  struct Loaded {
    std::map<std::string, std::vector<Annotation>> samples;
    int nc = 0;
    std::vector<std::string> names;
  };

  Loaded load() const {
    Loaded l;
    if (!labels.empty()) {
      l.samples = dir_samples(labels);
      l.nc = nc;
      if (!descriptor.empty()) {
        auto d = labelfmt::load_descriptor(descriptor);
        l.names = d.class_names;
        if (l.nc == 0)
          l.nc = d.class_count;
      }
      if (l.nc == 0)
        throw UsageError("--labels needs --nc or --data");
      return l;
    }
    std::string path = resolve_descriptor(descriptor);
    if (path.empty())
      throw UsageError(std::string("no dataset given: pass --data, --labels or set ") + config_env);
    auto d = labelfmt::load_descriptor(path);
    l.samples = descriptor_samples(d);
    l.nc = d.class_count;
    l.names = d.class_names;
    return l;
  }
};

struct EvalInput {
  std::string truth;
  std::string pred;
  std::string descriptor;
  unsigned jobs = 1;

  void add(CLI::App *cmd) {
    cmd->add_option("--truth", truth, "Ground-truth label directory")->required();
    cmd->add_option("--pred", pred, "Prediction directory (class cx cy w h conf)")->required();
    cmd->add_option("--data", descriptor, "Dataset descriptor for class names");
    cmd->add_option("-j,--jobs", jobs, "Worker threads")->check(CLI::Range(1u, 256u))->capture_default_str();
  }

  std::vector<std::string> names() const {
    if (descriptor.empty())
      return {};
    return labelfmt::load_descriptor(descriptor).class_names;
  }
};

std::vector<std::string> read_id_list(const fs::path &file) {
  std::vector<std::string> ids;
  std::string text = io::read_text(file);
  for (auto line : detail::split_lines(text)) {
    auto id = detail::trim(line);
    if (!id.empty())
      ids.emplace_back(id);
  }
  return ids;
}

std::vector<modelcfg::ResultRow> read_result_rows(const fs::path &file) {
  std::string text = io::read_text(file);
  auto lines = detail::split_lines(text);
  if (lines.empty())
    throw std::runtime_error(file.string() + ": empty results table");
  auto header = detail::split_csv_line(lines[0]);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i)
    col[header[i]] = i;
  for (const char *need : {"variant", "epochs", "map"})
    if (!col.count(need))
      throw std::runtime_error(file.string() + ": missing column " + need);
  std::vector<modelcfg::ResultRow> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (detail::trim(lines[li]).empty())
      continue;
    auto cells = detail::split_csv_line(lines[li]);
    auto cell = [&](const char *name) -> const std::string & {
      std::size_t c = col.at(name);
      if (c >= cells.size())
        throw std::runtime_error(file.string() + ":" + std::to_string(li + 1) + ": short row");
      return cells[c];
    };
    modelcfg::ResultRow row;
    try {
      row.variant = cell("variant");
      row.epochs = std::stoi(cell("epochs"));
      row.map = std::stod(cell("map"));
      if (col.count("params"))
        row.params = std::stoll(cell("params"));
    } catch (const std::logic_error &) {
      throw std::runtime_error(file.string() + ":" + std::to_string(li + 1) + ": not a number");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string rank_text(const std::vector<modelcfg::ResultRow> &rows) {
  std::vector<std::vector<std::string>> cells;
  for (std::size_t i = 0; i < rows.size(); ++i)
    cells.push_back({std::to_string(i + 1), rows[i].variant, std::to_string(rows[i].epochs),
                     detail::fixed(rows[i].map, 3), std::to_string(rows[i].params)});
  return detail::render_table({"rank", "variant", "epochs", "mAP@0.5", "params"}, cells);
}

std::string rank_csv(const std::vector<modelcfg::ResultRow> &rows) {
  std::string out = "rank,variant,epochs,map,params\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    out += std::to_string(i + 1) + "," + rows[i].variant + "," + std::to_string(rows[i].epochs) +
           "," + detail::fixed(rows[i].map, 6) + "," + std::to_string(rows[i].params) + "\n";
  return out;
}

std::string rank_json(const std::vector<modelcfg::ResultRow> &rows) {
  std::string out = "[\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    out += "  {\"rank\": " + std::to_string(i + 1) + ", \"variant\": \"" + rows[i].variant +
           "\", \"epochs\": " + std::to_string(rows[i].epochs) + ", \"map\": " +
           detail::fixed(rows[i].map, 6) + ", \"params\": " + std::to_string(rows[i].params) +
           "}" + (i + 1 < rows.size() ? "," : "") + "\n";
  return out + "]\n";
}

std::string run_name(const fs::path &file) {
  std::string stem = file.stem().string();
  if (stem == "results" && file.has_parent_path() && !file.parent_path().filename().empty())
    return file.parent_path().filename().string();
  return stem;
}

} // namespace

detmetrics::EvalSet load_eval_set(const fs::path &truth_dir, const fs::path &pred_dir) {
  auto truths = label_files(truth_dir);
  auto preds = label_files(pred_dir);
  std::set<std::string> ids;
  for (const auto &[id, _] : truths)
    ids.insert(id);
  for (const auto &[id, _] : preds)
    ids.insert(id);
  detmetrics::EvalSet set;
  for (const auto &id : ids) {
    detmetrics::ImageSample s;
    s.id = id;
    if (auto it = truths.find(id); it != truths.end())
      s.truths = read_labels(it->second);
    if (auto it = preds.find(id); it != preds.end())
      s.detections = read_predictions(it->second);
    set.push_back(std::move(s));
  }
  return set;
}

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Dataset, evaluation and reporting tools for YOLO-format sign detection",
               "signdet"};
  app.require_subcommand(1);
  app.fallthrough(false);
  int status = exit_ok;

  // validate -------------------------------------------------------------
  auto *validate = app.add_subcommand("validate", "Check a dataset for label problems");
  std::string v_data;
  Output v_out;
  validate->add_option("data", v_data, std::string("Dataset descriptor (default: $") + config_env + ")");
  v_out.add(validate);
  validate->callback([&] {
    std::string path = resolve_descriptor(v_data);
    if (path.empty())
      throw UsageError(std::string("no descriptor given and ") + config_env + " is unset");
    auto report = dataset::validate_dataset(labelfmt::load_descriptor(path));
    v_out.emit(out, render(v_out, report));
    if (!report.clean())
      status = exit_findings;
  });

  // split ----------------------------------------------------------------
  auto *split = app.add_subcommand("split", "Seeded train/test split of image ids");
  std::string s_images, s_ids, s_labels, s_outdir;
  double s_fraction = 0.8;
  std::uint64_t s_seed = 0;
  bool s_stratify = false;
  Output s_out;
  auto *s_src = split->add_option("--images", s_images, "Image directory supplying the ids");
  split->add_option("--ids", s_ids, "File with one id per line")->excludes(s_src);
  split->add_option("--fraction", s_fraction, "Training fraction")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  split->add_option("--seed", s_seed, "Shuffle seed")->required();
  split->add_flag("--stratify", s_stratify, "Keep class proportions (needs --labels)");
  split->add_option("--labels", s_labels, "Label directory for --stratify");
  split->add_option("--out-dir", s_outdir, "Write train.txt and test.txt here");
  s_out.add(split);
  split->callback([&] {
    std::vector<std::string> ids;
    if (!s_images.empty())
      ids = dataset::image_ids(s_images);
    else if (!s_ids.empty())
      ids = read_id_list(s_ids);
    else
      throw UsageError("split needs --images or --ids");
    dataset::SplitPlan plan;
    if (s_stratify) {
      if (s_labels.empty())
        throw UsageError("--stratify needs --labels");
      std::vector<int> strata;
      for (const auto &id : ids) {
        fs::path file = fs::path(s_labels) / (id + ".txt");
        std::error_code ec;
        auto anns = fs::exists(file, ec) ? read_labels(file) : std::vector<Annotation>{};
        strata.push_back(anns.empty() ? -1 : anns.front().class_id);
      }
      plan = dataset::split_stratified(ids, strata, s_fraction, s_seed);
    } else {
      plan = dataset::split(ids, s_fraction, s_seed);
    }
    if (!s_outdir.empty()) {
      io::write_atomic(fs::path(s_outdir) / "train.txt", dataset::manifest_text(plan.train_ids));
      io::write_atomic(fs::path(s_outdir) / "test.txt", dataset::manifest_text(plan.test_ids));
    }
    std::string text;
    if (s_out.format == "json") {
      auto list = [](const std::vector<std::string> &v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i)
          s += (i ? ", \"" : "\"") + v[i] + "\"";
        return s + "]";
      };
      text = "{\n  \"seed\": " + std::to_string(plan.seed) + ",\n  \"train_fraction\": " +
             detail::fixed(plan.train_fraction, 6) + ",\n  \"train\": " + list(plan.train_ids) +
             ",\n  \"test\": " + list(plan.test_ids) + "\n}\n";
    } else if (s_out.format == "csv") {
      text = "id,split\n";
      for (const auto &id : plan.train_ids)
        text += id + ",train\n";
      for (const auto &id : plan.test_ids)
        text += id + ",test\n";
    } else {
      text = "seed " + std::to_string(plan.seed) + ", fraction " +
             detail::fixed(plan.train_fraction, 3) + "\ntrain " +
             std::to_string(plan.train_ids.size()) + "\ntest  " +
             std::to_string(plan.test_ids.size()) + "\n";
    }
    s_out.emit(out, text);
  });

  // stats ----------------------------------------------------------------
  auto *stats = app.add_subcommand("stats", "Class balance and box size statistics");
  DataInput st_in;
  std::size_t st_bins = 10;
  Output st_out;
  st_in.add(stats);
  stats->add_option("--bins", st_bins, "Histogram bins")->check(CLI::Range(1, 1000))->capture_default_str();
  st_out.add(stats);
  stats->callback([&] {
    auto l = st_in.load();
    auto s = dataset::dataset_stats(l.samples, l.nc, st_bins);
    std::string text = st_out.format == "json" ? dataset::to_json(s, l.names)
                       : st_out.format == "csv" ? dataset::to_csv(s, l.names)
                                                : dataset::to_text(s, l.names);
    st_out.emit(out, text);
  });

  // anchors --------------------------------------------------------------
  auto *anchors = app.add_subcommand("anchors", "k-means anchor boxes from label sizes");
  DataInput an_in;
  dataset::KMeansOptions an_opt;
  double an_img = 640.0;
  Output an_out;
  an_in.add(anchors);
  anchors->add_option("-k", an_opt.k, "Anchor count")->check(CLI::Range(1, 64))->capture_default_str();
  anchors->add_option("--seed", an_opt.seed, "Seeding RNG")->capture_default_str();
  anchors->add_option("--img-size", an_img, "Reference image size in pixels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  anchors->add_option("--max-iterations", an_opt.max_iterations)->capture_default_str();
  an_out.add(anchors, {"text", "json", "yaml"});
  anchors->callback([&] {
    auto l = an_in.load();
    std::vector<NormBox> boxes;
    for (const auto &[id, anns] : l.samples)
      for (const auto &a : anns)
        boxes.push_back(a.box);
    an_opt.reference_width = an_opt.reference_height = an_img;
    auto result = dataset::kmeans_anchors(boxes, an_opt);
    std::string text = an_out.format == "json"   ? dataset::to_json(result)
                       : an_out.format == "yaml" ? dataset::to_yaml(result.anchors)
                                                 : dataset::to_text(result);
    an_out.emit(out, text);
  });

  // eval -----------------------------------------------------------------
  auto *eval = app.add_subcommand("eval", "mAP, precision, recall and F1 of predictions");
  EvalInput ev_in;
  detmetrics::EvaluationOptions ev_opt;
  std::string ev_ap = "all";
  Output ev_out;
  ev_in.add(eval);
  eval->add_option("--iou", ev_opt.iou_threshold, "IoU match threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  eval->add_option("--steps", ev_opt.f1_steps, "Confidence steps of the F1 sweep")
      ->check(CLI::Range(1, 1000000))
      ->capture_default_str();
  eval->add_option("--ap", ev_ap, "AP interpolation")
      ->check(CLI::IsMember({"all", "11"}))
      ->capture_default_str();
  ev_out.add(eval);
  eval->callback([&] {
    ev_opt.jobs = ev_in.jobs;
    ev_opt.class_names = ev_in.names();
    ev_opt.ap_method = ev_ap == "11" ? detmetrics::ApMethod::ElevenPoint : detmetrics::ApMethod::AllPoint;
    auto report = detmetrics::evaluate(load_eval_set(ev_in.truth, ev_in.pred), ev_opt);
    ev_out.emit(out, render(ev_out, report));
  });

  // f1curve --------------------------------------------------------------
  auto *f1c = app.add_subcommand("f1curve", "F1 against confidence threshold");
  EvalInput f1_in;
  double f1_iou = 0.5;
  std::size_t f1_steps = 1000;
  std::string f1_svg;
  Output f1_out;
  f1_in.add(f1c);
  f1c->add_option("--iou", f1_iou)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  f1c->add_option("--steps", f1_steps)->check(CLI::Range(1, 1000000))->capture_default_str();
  f1c->add_option("--svg", f1_svg, "Also write the plot here");
  f1_out.add(f1c);
  f1c->callback([&] {
    auto curve = detmetrics::f1_confidence_curve(load_eval_set(f1_in.truth, f1_in.pred), f1_iou,
                                                 f1_steps, f1_in.jobs);
    if (!f1_svg.empty())
      io::write_atomic(f1_svg, report::render_f1_curve_svg(curve, f1_in.names()));
    f1_out.emit(out, render(f1_out, curve));
  });

  // confusion ------------------------------------------------------------
  auto *conf = app.add_subcommand("confusion", "Confusion matrix with a background class");
  EvalInput cm_in;
  int cm_nc = 0;
  double cm_conf = 0.25, cm_iou = 0.45;
  Output cm_out;
  cm_in.add(conf);
  conf->add_option("--nc", cm_nc, "Class count (default: from --data)")->check(CLI::PositiveNumber);
  conf->add_option("--conf", cm_conf)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  conf->add_option("--iou", cm_iou)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  cm_out.add(conf);
  conf->callback([&] {
    auto names = cm_in.names();
    int nc = cm_nc ? cm_nc : static_cast<int>(names.size());
    if (nc == 0)
      throw UsageError("confusion needs --nc or --data");
    auto m = detmetrics::confusion_matrix(load_eval_set(cm_in.truth, cm_in.pred), nc, cm_conf, cm_iou);
    std::string text = cm_out.format == "json"  ? detmetrics::to_json(m, names)
                       : cm_out.format == "csv" ? detmetrics::to_csv(m, names)
                                                : detmetrics::to_text(m, names);
    cm_out.emit(out, text);
  });

  // loss-check -----------------------------------------------------------
  auto *lc = app.add_subcommand("loss-check", "Finite-difference check of the grid loss gradient");
  yolo::LossConfig lc_cfg;
  std::size_t lc_instances = 100;
  std::uint64_t lc_seed = 0;
  double lc_step = 1e-4, lc_tol = 1e-5;
  std::string lc_scope = "object";
  Output lc_out;
  lc->add_option("--grid", lc_cfg.grid)->check(CLI::Range(1, 64))->capture_default_str();
  lc->add_option("--boxes", lc_cfg.boxes)->check(CLI::Range(1, 16))->capture_default_str();
  lc->add_option("--classes", lc_cfg.classes)->check(CLI::Range(1, 1000))->capture_default_str();
  lc->add_option("--instances", lc_instances)->check(CLI::Range(1, 100000))->capture_default_str();
  lc->add_option("--seed", lc_seed)->capture_default_str();
  lc->add_option("--step", lc_step, "Central difference step")->check(CLI::PositiveNumber)->capture_default_str();
  lc->add_option("--tolerance", lc_tol, "Largest accepted relative error")->capture_default_str();
  lc->add_option("--class-scope", lc_scope)->check(CLI::IsMember({"object", "all"}))->capture_default_str();
  lc_out.add(lc, {"text", "json"});
  lc->callback([&] {
    lc_cfg.class_scope =
        lc_scope == "all" ? yolo::ClassLossScope::AllCells : yolo::ClassLossScope::ObjectCells;
    lc_cfg.validate();
    double worst = 0.0, worst_abs = 0.0;
    std::size_t worst_instance = 0, params = 0;
    yolo::LossBreakdown mean;
    for (std::size_t i = 0; i < lc_instances; ++i) {
      auto inst = yolo::random_instance(lc_cfg, lc_seed + i);
      auto terms = yolo::loss(inst.prediction, inst.target, lc_cfg);
      double n = static_cast<double>(lc_instances);
      mean.coord_xy += terms.coord_xy / n;
      mean.coord_wh += terms.coord_wh / n;
      mean.obj_conf += terms.obj_conf / n;
      mean.noobj_conf += terms.noobj_conf / n;
      mean.class_term += terms.class_term / n;
      mean.total += terms.total / n;
      auto check = yolo::check_gradient(inst.prediction, inst.target, lc_cfg, lc_step);
      params += check.parameters;
      worst_abs = std::max(worst_abs, check.max_abs_error);
      if (check.max_rel_error > worst) {
        worst = check.max_rel_error;
        worst_instance = i;
      }
    }
    bool pass = worst <= lc_tol;
    std::string text;
    if (lc_out.format == "json") {
      char buf[1024];
      std::snprintf(buf, sizeof buf,
                    "{\n  \"instances\": %zu,\n  \"parameters\": %zu,\n"
                    "  \"mean_loss\": {\"coord_xy\": %.9g, \"coord_wh\": %.9g, \"obj_conf\": %.9g, "
                    "\"noobj_conf\": %.9g, \"class\": %.9g, \"total\": %.9g},\n"
                    "  \"max_rel_error\": %.6e,\n"
                    "  \"max_abs_error\": %.6e,\n  \"worst_seed\": %llu,\n  \"pass\": %s\n}\n",
                    lc_instances, params, mean.coord_xy, mean.coord_wh, mean.obj_conf,
                    mean.noobj_conf, mean.class_term, mean.total, worst, worst_abs,
                    static_cast<unsigned long long>(lc_seed + worst_instance), pass ? "true" : "false");
      text = buf;
    } else {
      char buf[1024];
      std::snprintf(buf, sizeof buf,
                    "instances %zu (S=%d, B=%d, C=%d), %zu values checked\n"
                    "mean loss terms:\n"
                    "  coord xy    %.6f\n  coord wh    %.6f\n  obj conf    %.6f\n"
                    "  noobj conf  %.6f\n  class       %.6f\n  total       %.6f\n"
                    "max relative error %.3e (seed %llu), max absolute error %.3e\n%s\n",
                    lc_instances, lc_cfg.grid, lc_cfg.boxes, lc_cfg.classes, params, mean.coord_xy,
                    mean.coord_wh, mean.obj_conf, mean.noobj_conf, mean.class_term, mean.total, worst,
                    static_cast<unsigned long long>(lc_seed + worst_instance), worst_abs,
                    pass ? "PASS" : "FAIL");
      text = buf;
    }
    lc_out.emit(out, text);
    if (!pass)
      status = exit_findings;
  });

  // model-info -----------------------------------------------------------
  auto *mi = app.add_subcommand("model-info", "Per-layer parameter estimate of a model spec");
  std::string mi_model, mi_variant;
  std::optional<double> mi_depth, mi_width;
  Output mi_out;
  mi->add_option("--model", mi_model, "Model spec file")->required();
  mi->add_option("--variant", mi_variant, "Preset: s, m or l");
  mi->add_option("--depth", mi_depth, "Depth multiple override");
  mi->add_option("--width", mi_width, "Width multiple override");
  mi_out.add(mi);
  mi->callback([&] {
    auto spec = modelcfg::parse_model_spec(io::read_text(mi_model));
    modelcfg::Variant v{"spec", spec.depth_multiple, spec.width_multiple};
    if (!mi_variant.empty())
      v = modelcfg::variant_preset(mi_variant);
    if (mi_depth)
      v.depth_multiple = *mi_depth;
    if (mi_width)
      v.width_multiple = *mi_width;
    mi_out.emit(out, render(mi_out, modelcfg::estimate_params(spec, v)));
  });

  // rank -----------------------------------------------------------------
  auto *rk = app.add_subcommand("rank", "Order variant results by mAP");
  std::string rk_results, rk_model, rk_policy = "max_map";
  std::optional<std::int64_t> rk_budget;
  Output rk_out;
  rk->add_option("--results", rk_results, "CSV with variant,epochs,map[,params]")->required();
  rk->add_option("--model", rk_model, "Model spec used to fill missing parameter counts");
  rk->add_option("--policy", rk_policy)->check(CLI::IsMember({"max_map", "efficiency"}))->capture_default_str();
  rk->add_option("--budget", rk_budget, "Parameter budget for the efficiency policy");
  rk_out.add(rk);
  rk->callback([&] {
    auto rows = read_result_rows(rk_results);
    if (!rk_model.empty()) {
      auto spec = modelcfg::parse_model_spec(io::read_text(rk_model));
      for (auto &r : rows)
        if (r.params == 0)
          r.params = modelcfg::estimate_params(spec, modelcfg::variant_preset(r.variant)).total;
    }
    auto policy = rk_policy == "efficiency" ? modelcfg::RankPolicy::Efficiency : modelcfg::RankPolicy::MaxMap;
    if (policy == modelcfg::RankPolicy::Efficiency && !rk_budget)
      throw UsageError("--policy efficiency needs --budget");
    auto ranked = modelcfg::rank_variants(rows, policy, rk_budget);
    std::string text = rk_out.format == "json"  ? rank_json(ranked)
                       : rk_out.format == "csv" ? rank_csv(ranked)
                                                : rank_text(ranked);
    rk_out.emit(out, text);
  });

  // report ---------------------------------------------------------------
  auto *rp = app.add_subcommand("report", "Training dashboards and comparison tables");
  rp->require_subcommand(1);
  auto *rp_table = rp->add_subcommand("table", "Comparison table with an F1 consistency audit");
  std::string rt_file;
  Output rt_out;
  rp_table->add_option("table", rt_file, "CSV: model,epochs,precision,recall,f1,map")->required();
  rt_out.add(rp_table);
  rp_table->callback([&] {
    auto c = report::comparison_table(report::parse_comparison_csv(io::read_text(rt_file)));
    rt_out.emit(out, render(rt_out, c));
    if (!c.flags.empty())
      status = exit_findings;
  });
  auto *rp_dash = rp->add_subcommand("dashboard", "Metric panels for one or more results.csv logs");
  std::vector<std::string> rd_runs;
  std::string rd_outdir, rd_criterion = "map";
  rp_dash->add_option("runs", rd_runs, "results.csv files")->required();
  rp_dash->add_option("--out-dir", rd_outdir, "Directory for dashboard.svg and summary.csv")->required();
  rp_dash->add_option("--criterion", rd_criterion, "Best-epoch criterion")
      ->check(CLI::IsMember({"map", "map50-95", "precision", "recall", "f1", "val-loss"}))
      ->capture_default_str();
  rp_dash->callback([&] {
    std::vector<report::RunLog> logs;
    for (const auto &f : rd_runs)
      logs.push_back(report::parse_run_log(io::read_text(f), run_name(f)));
    auto dash = report::render_dashboard(logs);
    io::write_atomic(fs::path(rd_outdir) / "dashboard.svg", dash.svg);
    io::write_atomic(fs::path(rd_outdir) / "summary.csv", dash.csv);
    auto criterion = report::parse_criterion(rd_criterion);
    for (const auto &log : logs)
      out << log.name << ": " << log.rows.size() << " epochs, best epoch "
          << report::best_epoch(log, criterion) << " by " << rd_criterion << "\n";
  });

  // serve ----------------------------------------------------------------
  auto *sv = app.add_subcommand("serve", "HTTP API for the annotation UI");
  std::string sv_root, sv_data, sv_host = "127.0.0.1", sv_ui;
  int sv_port = 8080;
  sv->add_option("--root", sv_root, "Dataset root holding images/ and labels/")->required();
  sv->add_option("--data", sv_data, std::string("Descriptor for class names (default: $") + config_env + ")");
  sv->add_option("--host", sv_host)->capture_default_str();
  sv->add_option("--port", sv_port)->check(CLI::Range(0, 65535))->capture_default_str();
  sv->add_option("--ui", sv_ui, "Static UI directory mounted at /");
  sv->callback([&] {
    std::string path = resolve_descriptor(sv_data);
    auto classes = path.empty()
                       ? labelfmt::default_class_table()
                       : labelfmt::ClassTable::from_names(labelfmt::load_descriptor(path).class_names);
    annoserve::AnnotationStore store(sv_root, std::move(classes));
    std::optional<fs::path> ui;
    if (!sv_ui.empty())
      ui = sv_ui;
    annoserve::Service service(store, sv_host, sv_port, ui);
    out << "serving " << store.images().size() << " images on http://" << sv_host << ":"
        << service.port() << "\n"
        << std::flush;
    service.wait();
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    if (args.empty())
      throw CLI::CallForHelp();
    app.parse(reversed);
  } catch (const CLI::CallForHelp &e) {
    if (args.empty()) {
      err << app.help();
      return exit_usage;
    }
    app.exit(e, out, err);
    return exit_ok;
  } catch (const CLI::CallForAllHelp &e) {
    app.exit(e, out, err);
    return exit_ok;
  } catch (const CLI::ParseError &e) {
    app.exit(e, out, err);
    return exit_usage;
  } catch (const UsageError &e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return exit_findings;
  }
  return status;
}

} // namespace signdet::cli
