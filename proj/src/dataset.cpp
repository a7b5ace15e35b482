#include "signdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "signdet/geometry.hpp"
#include "signdet/io.hpp"
#include "signdet/rng.hpp"
#include "text_util.hpp"

namespace signdet::dataset {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Splitting

namespace {

void check_split_args(const std::vector<std::string> &ids, double fraction) {
  if (ids.empty())
    throw std::invalid_argument("split: empty id list");
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("split: train fraction must lie in (0, 1)");
  std::set<std::string> seen;
  for (const auto &id : ids)
    if (!seen.insert(id).second)
      throw std::invalid_argument("split: duplicate id '" + id + "'");
}

} // namespace

std::size_t train_count(std::size_t total, double fraction) {
  // The epsilon keeps decimal fractions such as 0.29 * 100 from flooring
  // one below the exact product.
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 1e-9));
}

SplitPlan split(const std::vector<std::string> &ids, double train_fraction,
                std::uint64_t seed) {
  check_split_args(ids, train_fraction);
  std::vector<std::string> order = ids;
  SeededRng rng(seed);
  rng.shuffle(std::span<std::string>(order));

  SplitPlan plan;
  plan.seed = seed;
  plan.train_fraction = train_fraction;
  auto n_train = static_cast<std::ptrdiff_t>(train_count(ids.size(), train_fraction));
  plan.train_ids.assign(order.begin(), order.begin() + n_train);
  plan.test_ids.assign(order.begin() + n_train, order.end());
  return plan;
}

SplitPlan split_stratified(const std::vector<std::string> &ids,
                           const std::vector<int> &strata, double train_fraction,
                           std::uint64_t seed) {
  check_split_args(ids, train_fraction);
  if (strata.size() != ids.size())
    throw std::invalid_argument("split: one stratum per id required");

  std::map<int, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < ids.size(); ++i)
    groups[strata[i]].push_back(ids[i]);

  struct Quota {
    int stratum;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto &[stratum, members] : groups) {
    double exact = train_fraction * static_cast<double>(members.size());
    auto take = static_cast<std::size_t>(std::floor(exact + 1e-9));
    quotas.push_back({stratum, take, exact - static_cast<double>(take)});
    assigned += take;
  }
  std::size_t target = train_count(ids.size(), train_fraction);
  std::vector<std::size_t> by_remainder(quotas.size());
  std::iota(by_remainder.begin(), by_remainder.end(), std::size_t{0});
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) {
                     return quotas[a].remainder > quotas[b].remainder;
                   });
  for (std::size_t i = 0; assigned < target && i < by_remainder.size(); ++i) {
    auto &q = quotas[by_remainder[i]];
    if (q.take < groups[q.stratum].size()) {
      ++q.take;
      ++assigned;
    }
  }

  SplitPlan plan;
  plan.seed = seed;
  plan.train_fraction = train_fraction;
  SeededRng rng(seed);
  for (const auto &q : quotas) {
    auto members = groups[q.stratum];
    rng.shuffle(std::span<std::string>(members));
    auto take = static_cast<std::ptrdiff_t>(q.take);
    plan.train_ids.insert(plan.train_ids.end(), members.begin(), members.begin() + take);
    plan.test_ids.insert(plan.test_ids.end(), members.begin() + take, members.end());
  }
  return plan;
}

std::string manifest_text(const std::vector<std::string> &ids) {
  std::string out;
  for (const auto &id : ids)
    out += id + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Validation

const char *to_string(IssueKind kind) {
  switch (kind) {
  case IssueKind::OrphanLabel:
    return "orphan-label";
  case IssueKind::MissingLabel:
    return "missing-label";
  case IssueKind::ClassOutOfRange:
    return "class-out-of-range";
  case IssueKind::MalformedLine:
    return "malformed-line";
  case IssueKind::DuplicateBox:
    return "duplicate-box";
  }
  return "unknown";
}

ValidationReport validate_dataset(int class_count,
                                  const std::vector<std::string> &image_ids,
                                  const LabelTexts &labels) {
  ValidationReport report;
  report.images = image_ids.size();
  report.labels = labels.size();
  std::set<std::string> images(image_ids.begin(), image_ids.end());

  for (const auto &id : images)
    if (!labels.contains(id))
      report.issues.push_back({IssueKind::MissingLabel, id, 0, "image has no label file"});

  for (const auto &[stem, text] : labels) {
    if (!images.contains(stem)) {
      report.issues.push_back({IssueKind::OrphanLabel, stem, 0, "label file has no image"});
      continue;
    }
    std::vector<Annotation> seen;
    auto lines = detail::split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (detail::trim(lines[i]).empty())
        continue;
      std::size_t line_no = i + 1;
      Annotation a;
      try {
        a = labelfmt::parse_label_line(lines[i]);
      } catch (const labelfmt::LabelError &e) {
        report.issues.push_back({IssueKind::MalformedLine, stem, line_no,
                                 std::string(labelfmt::to_string(e.kind())) + ": " + e.what()});
        continue;
      }
      if (a.class_id >= class_count)
        report.issues.push_back({IssueKind::ClassOutOfRange, stem, line_no,
                                 "class " + std::to_string(a.class_id) +
                                     " not below nc=" + std::to_string(class_count)});
      if (std::find(seen.begin(), seen.end(), a) != seen.end())
        report.issues.push_back({IssueKind::DuplicateBox, stem, line_no,
                                 "identical class and box repeated"});
      else
        seen.push_back(a);
    }
  }
  return report;
}

std::vector<std::string> image_ids(const fs::path &image_dir) {
  std::vector<std::string> ids;
  for (const auto &p : io::list_files(image_dir, io::image_extensions()))
    ids.push_back(p.stem().string());
  return ids;
}

LabelTexts read_label_dir(const fs::path &label_dir) {
  LabelTexts out;
  for (const auto &p : io::list_files(label_dir, {".txt"}))
    out[p.stem().string()] = io::read_text(p);
  return out;
}

ValidationReport validate_dataset(const labelfmt::DatasetDescriptor &descriptor) {
  ValidationReport total;
  std::vector<std::pair<std::string, std::string>> splits{{"train", descriptor.train_dir}};
  if (descriptor.val_dir != descriptor.train_dir)
    splits.emplace_back("val", descriptor.val_dir);
  for (const auto &[name, dir] : splits) {
    auto ids = image_ids(dir);
    fs::path label_dir = io::label_dir_for(dir);
    LabelTexts labels;
    std::error_code ec;
    if (fs::is_directory(label_dir, ec))
      labels = read_label_dir(label_dir);
    // labelImg drops a classes.txt next to the labels.
    if (labels.contains("classes") &&
        std::find(ids.begin(), ids.end(), "classes") == ids.end())
      labels.erase("classes");
    auto report = validate_dataset(descriptor.class_count, ids, labels);
    total.images += report.images;
    total.labels += report.labels;
    for (auto &issue : report.issues) {
      issue.sample = name + "/" + issue.sample;
      total.issues.push_back(std::move(issue));
    }
  }
  return total;
}

std::string to_text(const ValidationReport &report) {
  std::string out;
  for (const auto &i : report.issues) {
    out += std::string(to_string(i.kind)) + " " + i.sample;
    if (i.line)
      out += ":" + std::to_string(i.line);
    out += " " + i.message + "\n";
  }
  out += std::to_string(report.images) + " images, " + std::to_string(report.labels) +
         " label files, " + std::to_string(report.issues.size()) + " issues\n";
  return out;
}

std::string to_json(const ValidationReport &report) {
  nlohmann::ordered_json j;
  j["images"] = report.images;
  j["labels"] = report.labels;
  auto issues = nlohmann::ordered_json::array();
  for (const auto &i : report.issues)
    issues.push_back({{"kind", to_string(i.kind)},
                      {"sample", i.sample},
                      {"line", i.line},
                      {"message", i.message}});
  j["issues"] = std::move(issues);
  return j.dump(2) + "\n";
}

std::string to_csv(const ValidationReport &report) {
  std::string out = "kind,sample,line,message\n";
  for (const auto &i : report.issues) {
    std::string msg = i.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    out += std::string(to_string(i.kind)) + "," + i.sample + "," +
           std::to_string(i.line) + "," + msg + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

namespace {

struct SizeAccumulator {
  std::vector<double> values;

  SizeSummary summarize(std::size_t bins) const {
    SizeSummary s;
    s.histogram.assign(bins, 0);
    if (values.empty())
      return s;
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) /
             static_cast<double>(values.size());
    for (double v : values) {
      auto bin = static_cast<std::size_t>(std::floor(v * static_cast<double>(bins)));
      ++s.histogram[std::min(bin, bins - 1)];
    }
    return s;
  }
};

std::string label(const std::vector<std::string> &names, std::size_t i) {
  return i < names.size() ? names[i] : std::to_string(i);
}

nlohmann::ordered_json summary_json(const SizeSummary &s) {
  return {{"min", s.min}, {"mean", s.mean}, {"max", s.max}, {"histogram", s.histogram}};
}

} // namespace

DatasetStats dataset_stats(const std::map<std::string, std::vector<Annotation>> &samples,
                           int class_count, std::size_t bins) {
  if (class_count < 0)
    throw std::invalid_argument("class count must be non-negative");
  if (bins == 0)
    throw std::invalid_argument("histogram needs at least one bin");
  DatasetStats stats;
  auto nc = static_cast<std::size_t>(class_count);
  stats.boxes_per_class.assign(nc, 0);
  stats.images_per_class.assign(nc, 0);
  SizeAccumulator widths, heights, areas;
  for (const auto &[id, annotations] : samples) {
    ++stats.images;
    ++stats.boxes_per_image[annotations.size()];
    std::set<int> present;
    for (const auto &a : annotations) {
      if (a.class_id < 0 || a.class_id >= class_count)
        throw std::invalid_argument("sample '" + id + "' has class " +
                                    std::to_string(a.class_id) + " outside nc");
      ++stats.boxes;
      ++stats.boxes_per_class[static_cast<std::size_t>(a.class_id)];
      present.insert(a.class_id);
      widths.values.push_back(a.box.w);
      heights.values.push_back(a.box.h);
      areas.values.push_back(a.box.area());
    }
    for (int c : present)
      ++stats.images_per_class[static_cast<std::size_t>(c)];
  }
  stats.width = widths.summarize(bins);
  stats.height = heights.summarize(bins);
  stats.area = areas.summarize(bins);
  return stats;
}

std::string to_text(const DatasetStats &stats, const std::vector<std::string> &names) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t c = 0; c < stats.boxes_per_class.size(); ++c)
    rows.push_back({label(names, c), std::to_string(stats.images_per_class[c]),
                    std::to_string(stats.boxes_per_class[c])});
  std::string out = detail::render_table({"class", "images", "boxes"}, rows);
  out += std::to_string(stats.images) + " images, " + std::to_string(stats.boxes) +
         " boxes\nboxes per image:";
  for (const auto &[count, images] : stats.boxes_per_image)
    out += " " + std::to_string(count) + ":" + std::to_string(images);
  out += "\n";
  auto line = [&](const char *name, const SizeSummary &s) {
    out += std::string(name) + " min " + detail::fixed(s.min, 4) + " mean " +
           detail::fixed(s.mean, 4) + " max " + detail::fixed(s.max, 4) + "\n";
  };
  line("width ", stats.width);
  line("height", stats.height);
  line("area  ", stats.area);
  return out;
}

std::string to_csv(const DatasetStats &stats, const std::vector<std::string> &names) {
  std::string out = "class,name,images,boxes\n";
  for (std::size_t c = 0; c < stats.boxes_per_class.size(); ++c)
    out += std::to_string(c) + "," + label(names, c) + "," +
           std::to_string(stats.images_per_class[c]) + "," +
           std::to_string(stats.boxes_per_class[c]) + "\n";
  return out;
}

std::string to_json(const DatasetStats &stats, const std::vector<std::string> &names) {
  nlohmann::ordered_json j;
  j["images"] = stats.images;
  j["boxes"] = stats.boxes;
  auto classes = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < stats.boxes_per_class.size(); ++c)
    classes.push_back({{"class", c},
                       {"name", label(names, c)},
                       {"images", stats.images_per_class[c]},
                       {"boxes", stats.boxes_per_class[c]}});
  j["classes"] = std::move(classes);
  nlohmann::ordered_json hist = nlohmann::ordered_json::object();
  for (const auto &[count, images] : stats.boxes_per_image)
    hist[std::to_string(count)] = images;
  j["boxes_per_image"] = std::move(hist);
  j["width"] = summary_json(stats.width);
  j["height"] = summary_json(stats.height);
  j["area"] = summary_json(stats.area);
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Anchors

std::size_t AnchorSet::size() const {
  std::size_t n = 0;
  for (const auto &g : groups)
    n += g.anchors.size();
  return n;
}

std::vector<AnchorSize> AnchorSet::flatten() const {
  std::vector<AnchorSize> out;
  for (const auto &g : groups)
    out.insert(out.end(), g.anchors.begin(), g.anchors.end());
  return out;
}

AnchorSet group_by_stride(std::vector<AnchorSize> anchors,
                          const std::vector<int> &strides) {
  if (strides.empty())
    throw std::invalid_argument("at least one stride required");
  std::stable_sort(anchors.begin(), anchors.end(),
                   [](const AnchorSize &a, const AnchorSize &b) {
                     if (a.area() != b.area())
                       return a.area() < b.area();
                     return a.width < b.width;
                   });
  AnchorSet set;
  std::size_t base = anchors.size() / strides.size();
  std::size_t extra = anchors.size() % strides.size();
  std::size_t pos = 0;
  for (std::size_t s = 0; s < strides.size(); ++s) {
    std::size_t n = base + (s < extra ? 1 : 0);
    if (n == 0)
      continue;
    StrideGroup g{strides[s], {}};
    g.anchors.assign(anchors.begin() + static_cast<std::ptrdiff_t>(pos),
                     anchors.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    set.groups.push_back(std::move(g));
  }
  return set;
}

double mean_best_iou(std::span<const AnchorSize> boxes,
                     std::span<const AnchorSize> anchors) {
  if (boxes.empty())
    return 0.0;
  double sum = 0.0;
  for (const auto &b : boxes) {
    double best = 0.0;
    for (const auto &a : anchors)
      best = std::max(best, geometry::iou_wh(b.width, b.height, a.width, a.height));
    sum += best;
  }
  return sum / static_cast<double>(boxes.size());
}

namespace {

std::size_t nearest(const AnchorSize &p, const std::vector<AnchorSize> &centroids) {
  std::size_t best = 0;
  double best_iou = -1.0;
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    double v = geometry::iou_wh(p.width, p.height, centroids[j].width, centroids[j].height);
    if (v > best_iou) {
      best_iou = v;
      best = j;
    }
  }
  return best;
}

std::vector<AnchorSize> seed_plus_plus(const std::vector<AnchorSize> &points,
                                       std::size_t k, SeededRng &rng) {
  std::vector<AnchorSize> centroids;
  centroids.push_back(points[rng.below(points.size())]);
  std::vector<double> weight(points.size());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = 0.0;
      for (const auto &c : centroids)
        best = std::max(best, geometry::iou_wh(points[i].width, points[i].height,
                                               c.width, c.height));
      double d = 1.0 - best;
      weight[i] = d * d;
      total += weight[i];
    }
    if (!(total > 0.0))
      throw std::invalid_argument("k-means++: not enough distinct boxes");
    double r = rng.unit() * total;
    std::size_t pick = points.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (weight[i] <= 0.0)
        continue;
      acc += weight[i];
      pick = i;
      if (acc > r)
        break;
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

} // namespace

KMeansResult kmeans_anchors(std::span<const NormBox> boxes, const KMeansOptions &options) {
  if (boxes.empty())
    throw std::invalid_argument("k-means: no boxes");
  if (options.k == 0)
    throw std::invalid_argument("k-means: k must be positive");
  if (!(options.reference_width > 0.0 && options.reference_height > 0.0))
    throw std::invalid_argument("k-means: reference resolution must be positive");

  std::vector<AnchorSize> points;
  points.reserve(boxes.size());
  std::set<std::pair<double, double>> distinct;
  for (const auto &b : boxes) {
    if (!(b.w > 0.0 && b.h > 0.0))
      throw std::invalid_argument("k-means: box with non-positive size");
    AnchorSize p{b.w * options.reference_width, b.h * options.reference_height};
    points.push_back(p);
    distinct.emplace(p.width, p.height);
  }
  if (options.k > distinct.size())
    throw std::invalid_argument("k-means: k=" + std::to_string(options.k) +
                                " exceeds the " + std::to_string(distinct.size()) +
                                " distinct box sizes");

  SeededRng rng(options.seed);
  auto centroids = seed_plus_plus(points, options.k, rng);

  KMeansResult result;
  result.history.push_back(mean_best_iou(points, centroids));
  std::vector<std::size_t> assign(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    assign[i] = nearest(points[i], centroids);

  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    for (std::size_t j = 0; j < centroids.size(); ++j) {
      double sw = 0.0, sh = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < points.size(); ++i)
        if (assign[i] == j) {
          sw += points[i].width;
          sh += points[i].height;
          ++n;
        }
      if (n == 0)
        continue;
      AnchorSize mean{sw / static_cast<double>(n), sh / static_cast<double>(n)};
      double old_sum = 0.0, new_sum = 0.0;
      for (std::size_t i = 0; i < points.size(); ++i)
        if (assign[i] == j) {
          old_sum += geometry::iou_wh(points[i].width, points[i].height,
                                      centroids[j].width, centroids[j].height);
          new_sum += geometry::iou_wh(points[i].width, points[i].height, mean.width,
                                      mean.height);
        }
      if (new_sum >= old_sum)
        centroids[j] = mean;
    }
    std::vector<std::size_t> next(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
      next[i] = nearest(points[i], centroids);
    result.iterations = it + 1;
    result.history.push_back(mean_best_iou(points, centroids));
    bool stable = next == assign;
    assign = std::move(next);
    if (stable)
      break;
  }

  result.mean_best_iou = result.history.back();
  result.anchors = group_by_stride(centroids, options.strides);
  return result;
}

std::string to_yaml(const AnchorSet &anchors) {
  std::string out = "anchors:\n";
  for (const auto &g : anchors.groups) {
    out += "  - [";
    for (std::size_t i = 0; i < g.anchors.size(); ++i) {
      if (i)
        out += ", ";
      auto w = std::max(1.0, std::round(g.anchors[i].width));
      auto h = std::max(1.0, std::round(g.anchors[i].height));
      out += detail::fixed(w, 0) + "," + detail::fixed(h, 0);
    }
    out += "]  # P" + std::to_string(static_cast<int>(std::log2(g.stride))) + "/" +
           std::to_string(g.stride) + "\n";
  }
  return out;
}

std::string to_json(const KMeansResult &result) {
  nlohmann::ordered_json j;
  j["mean_best_iou"] = result.mean_best_iou;
  j["iterations"] = result.iterations;
  auto groups = nlohmann::ordered_json::array();
  for (const auto &g : result.anchors.groups) {
    auto pairs = nlohmann::ordered_json::array();
    for (const auto &a : g.anchors)
      pairs.push_back({a.width, a.height});
    groups.push_back({{"stride", g.stride}, {"anchors", pairs}});
  }
  j["groups"] = std::move(groups);
  return j.dump(2) + "\n";
}

std::string to_text(const KMeansResult &result) {
  std::string out = to_yaml(result.anchors);
  out += "# mean best IoU " + detail::fixed(result.mean_best_iou, 4) + " after " +
         std::to_string(result.iterations) + " iterations\n";
  return out;
}

} // namespace signdet::dataset
