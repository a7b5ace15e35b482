#include "signdet/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "json.hpp"

#include "text_util.hpp"

namespace signdet::report {

namespace {

constexpr Series all_series[series_count] = {
    Series::TrainBoxLoss, Series::TrainObjLoss, Series::TrainClsLoss, Series::Precision,
    Series::Recall,       Series::ValBoxLoss,   Series::ValObjLoss,   Series::ValClsLoss,
    Series::Map50,        Series::Map50To95,
};

constexpr std::string_view series_titles[series_count] = {
    "train/box_loss", "train/obj_loss", "train/cls_loss", "metrics/precision",
    "metrics/recall", "val/box_loss",   "val/obj_loss",   "val/cls_loss",
    "metrics/mAP_0.5", "metrics/mAP_0.5:0.95",
};

const char *const palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

const char *color(std::size_t i) { return palette[i % std::size(palette)]; }

std::optional<double> parse_number(std::string_view text) {
  text = detail::trim(text);
  if (text.empty())
    return std::nullopt;
  if (text.front() == '+')
    text.remove_prefix(1);
  double v = 0.0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

std::string num(double v) { return detail::fixed(v, 2); }

// Axis-aligned plot area mapping data coordinates to SVG pixels.
struct Frame {
  double left, top, width, height;
  double x0, x1, y0, y1;

  double px(double x) const { return left + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * width; }
  double py(double y) const {
    return top + height - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * height;
  }

  std::string axes(const std::string &title, int x_decimals, int y_decimals) const {
    std::string out;
    out += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(width) +
           "\" height=\"" + num(height) + "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + num(left + width / 2) + "\" y=\"" + num(top - 8) +
           "\" text-anchor=\"middle\" font-size=\"13\">" + xml_escape(title) + "</text>\n";
    auto label = [&](double x, double y, const std::string &text, const char *anchor) {
      out += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor +
             "\" font-size=\"10\">" + text + "</text>\n";
    };
    label(left - 4, top + height, detail::fixed(y0, y_decimals), "end");
    label(left - 4, top + 8, detail::fixed(y1, y_decimals), "end");
    label(left, top + height + 14, detail::fixed(x0, x_decimals), "start");
    label(left + width, top + height + 14, detail::fixed(x1, x_decimals), "end");
    return out;
  }

  std::string polyline(const std::vector<std::pair<double, double>> &pts, const char *stroke,
                       double stroke_width) const {
    std::string out = "<polyline fill=\"none\" stroke=\"" + std::string(stroke) +
                      "\" stroke-width=\"" + num(stroke_width) + "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i)
        out += ' ';
      out += num(px(pts[i].first)) + "," + num(py(pts[i].second));
    }
    return out + "\"/>\n";
  }
};

std::string svg_open(double width, double height) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
         num(height) + "\" viewBox=\"0 0 " + num(width) + " " + num(height) +
         "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string legend_entry(double x, double y, const char *stroke, const std::string &text) {
  return "<line x1=\"" + num(x) + "\" y1=\"" + num(y - 4) + "\" x2=\"" + num(x + 18) +
         "\" y2=\"" + num(y - 4) + "\" stroke=\"" + stroke + "\" stroke-width=\"2\"/>\n" +
         "<text x=\"" + num(x + 24) + "\" y=\"" + num(y) + "\" font-size=\"11\">" +
         xml_escape(text) + "</text>\n";
}

std::string class_label(const std::vector<std::string> &names, int id) {
  if (id >= 0 && static_cast<std::size_t>(id) < names.size())
    return names[static_cast<std::size_t>(id)];
  return std::to_string(id);
}

} // namespace

std::string_view column_name(Series series) {
  return series_titles[static_cast<std::size_t>(series)];
}

bool is_loss(Series series) {
  switch (series) {
  case Series::TrainBoxLoss:
  case Series::TrainObjLoss:
  case Series::TrainClsLoss:
  case Series::ValBoxLoss:
  case Series::ValObjLoss:
  case Series::ValClsLoss:
    return true;
  default:
    return false;
  }
}

std::optional<double> EpochRow::val_loss() const {
  const auto &b = get(Series::ValBoxLoss), &o = get(Series::ValObjLoss),
             &c = get(Series::ValClsLoss);
  if (!b || !o || !c)
    return std::nullopt;
  return *b + *o + *c;
}

bool RunLog::has(Series s) const {
  return !rows.empty() && rows.front().get(s).has_value();
}

// ---------------------------------------------------------------------------
// Parsing

RunLog parse_run_log(std::string_view csv_text, std::string name) {
  auto lines = detail::split_lines(csv_text);
  std::size_t li = 0;
  while (li < lines.size() && detail::trim(lines[li]).empty())
    ++li;
  if (li == lines.size())
    throw RunLogError("run log is empty");
  auto header = detail::split_csv_line(lines[li++]);

  std::optional<std::size_t> epoch_col, f1_col;
  std::optional<std::size_t> series_col[series_count];
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string &h = header[c];
    if (h == "epoch")
      epoch_col = c;
    else if (h == "metrics/F1" || h == "metrics/f1")
      f1_col = c;
    for (std::size_t s = 0; s < series_count; ++s)
      if (h == series_titles[s])
        series_col[s] = c;
  }
  std::vector<std::string> missing;
  if (!epoch_col)
    missing.emplace_back("epoch");
  for (Series s : {Series::Precision, Series::Recall, Series::Map50})
    if (!series_col[static_cast<std::size_t>(s)])
      missing.emplace_back(column_name(s));
  if (!missing.empty()) {
    std::string msg = "run log is missing mandatory column";
    msg += missing.size() > 1 ? "s: " : ": ";
    for (std::size_t i = 0; i < missing.size(); ++i)
      msg += (i ? ", " : "") + missing[i];
    throw RunLogError(msg);
  }

  RunLog log;
  log.name = std::move(name);
  for (; li < lines.size(); ++li) {
    if (detail::trim(lines[li]).empty())
      continue;
    auto cells = detail::split_csv_line(lines[li]);
    std::string where = "run log line " + std::to_string(li + 1);
    auto cell = [&](std::size_t col, std::string_view what) -> double {
      if (col >= cells.size())
        throw RunLogError(where + ": missing value for " + std::string(what));
      auto v = parse_number(cells[col]);
      if (!v)
        throw RunLogError(where + ": " + std::string(what) + " is not a number: '" +
                          cells[col] + "'");
      return *v;
    };
    EpochRow row;
    double e = cell(*epoch_col, "epoch");
    if (e != std::floor(e) || e < 0 || e > 1e9)
      throw RunLogError(where + ": epoch must be a non-negative integer");
    row.epoch = static_cast<int>(e);
    if (!log.rows.empty() && row.epoch <= log.rows.back().epoch)
      throw RunLogError(where + ": epochs must strictly increase (" +
                        std::to_string(log.rows.back().epoch) + " then " +
                        std::to_string(row.epoch) + ")");
    for (std::size_t s = 0; s < series_count; ++s)
      if (series_col[s])
        row.values[s] = cell(*series_col[s], series_titles[s]);
    if (f1_col)
      row.logged_f1 = cell(*f1_col, "metrics/F1");
    log.rows.push_back(std::move(row));
  }

  // Percent detection per rate column, then range checks.
  auto rescale = [&](auto getter, std::string_view what) {
    bool percent = false;
    for (auto &row : log.rows)
      if (auto *v = getter(row); v && **v > 1.0)
        percent = true;
    for (auto &row : log.rows) {
      auto *v = getter(row);
      if (!v || !*v)
        continue;
      if (percent)
        **v /= 100.0;
      if (**v < 0.0 || **v > 1.0)
        throw RunLogError("run log: " + std::string(what) + " at epoch " +
                          std::to_string(row.epoch) + " is outside [0, 1]");
    }
  };
  for (std::size_t s = 0; s < series_count; ++s) {
    if (is_loss(all_series[s])) {
      for (const auto &row : log.rows)
        if (row.values[s] && *row.values[s] < 0.0)
          throw RunLogError("run log: " + std::string(series_titles[s]) + " at epoch " +
                            std::to_string(row.epoch) + " is negative");
    } else {
      rescale([s](EpochRow &r) { return &r.values[s]; }, series_titles[s]);
    }
  }
  rescale([](EpochRow &r) { return &r.logged_f1; }, "metrics/F1");

  for (auto &row : log.rows) {
    double p = row.precision(), r = row.recall();
    row.f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return log;
}

Criterion parse_criterion(std::string_view text) {
  static const std::map<std::string, Criterion, std::less<>> names{
      {"map", Criterion::Map50},           {"map50", Criterion::Map50},
      {"mAP_0.5", Criterion::Map50},       {"map50-95", Criterion::Map50To95},
      {"precision", Criterion::Precision}, {"recall", Criterion::Recall},
      {"f1", Criterion::F1},               {"val-loss", Criterion::MinValLoss},
  };
  auto it = names.find(text);
  if (it == names.end())
    throw std::invalid_argument("unknown criterion '" + std::string(text) + "'");
  return it->second;
}

int best_epoch(const RunLog &log, Criterion criterion) {
  if (log.rows.empty())
    throw RunLogError("run log '" + log.name + "' has no epochs");
  auto value = [&](const EpochRow &row) -> std::optional<double> {
    switch (criterion) {
    case Criterion::Map50: return row.map50();
    case Criterion::Map50To95: return row.get(Series::Map50To95);
    case Criterion::Precision: return row.precision();
    case Criterion::Recall: return row.recall();
    case Criterion::F1: return row.f1;
    case Criterion::MinValLoss: {
      auto v = row.val_loss();
      if (v)
        return -*v;
      return std::nullopt;
    }
    }
    return std::nullopt;
  };
  std::optional<double> best;
  int epoch = 0;
  for (const auto &row : log.rows) {
    auto v = value(row);
    if (!v)
      throw RunLogError("run log '" + log.name + "' lacks the column for this criterion");
    if (!best || *v > *best) {
      best = v;
      epoch = row.epoch;
    }
  }
  return epoch;
}

// ---------------------------------------------------------------------------
// Rendering

Dashboard render_dashboard(std::span<const RunLog> runs) {
  if (runs.empty())
    throw RunLogError("no runs to render");
  for (const auto &run : runs)
    if (run.rows.empty())
      throw RunLogError("run log '" + run.name + "' has no epochs");

  std::vector<Series> panels;
  for (Series s : all_series)
    if (std::any_of(runs.begin(), runs.end(), [s](const RunLog &r) { return r.has(s); }))
      panels.push_back(s);

  double e0 = runs.front().rows.front().epoch, e1 = e0;
  for (const auto &run : runs) {
    e0 = std::min<double>(e0, run.rows.front().epoch);
    e1 = std::max<double>(e1, run.rows.back().epoch);
  }

  const double pw = 260, ph = 200, cols = std::min<double>(5, panels.size());
  const double rows = std::ceil(panels.size() / cols);
  const double legend_h = 20.0 * runs.size() + 10;
  const double width = cols * pw, height = rows * ph + legend_h;

  std::string svg = svg_open(width, height);
  for (std::size_t i = 0; i < panels.size(); ++i) {
    Series s = panels[i];
    double ox = (i % static_cast<std::size_t>(cols)) * pw;
    double oy = std::floor(i / cols) * ph;
    double y0 = 0, y1 = 0;
    bool first = true;
    for (const auto &run : runs)
      for (const auto &row : run.rows)
        if (auto v = row.get(s)) {
          y0 = first ? *v : std::min(y0, *v);
          y1 = first ? *v : std::max(y1, *v);
          first = false;
        }
    if (y1 <= y0) {
      y0 -= 0.5;
      y1 += 0.5;
    }
    Frame frame{ox + 50, oy + 30, pw - 65, ph - 60, e0, e1, y0, y1};
    svg += "<g id=\"panel-" + std::to_string(i) + "\">\n";
    svg += frame.axes(std::string(column_name(s)), 0, 3);
    for (std::size_t r = 0; r < runs.size(); ++r) {
      if (!runs[r].has(s))
        continue;
      std::vector<std::pair<double, double>> pts;
      for (const auto &row : runs[r].rows)
        pts.emplace_back(row.epoch, *row.get(s));
      svg += frame.polyline(pts, color(r), 1.5);
    }
    svg += "</g>\n";
  }
  for (std::size_t r = 0; r < runs.size(); ++r)
    svg += legend_entry(20, rows * ph + 20 + 20.0 * r, color(r), runs[r].name);
  svg += "</svg>\n";

  std::string csv = "run,epochs,best_epoch,precision,recall,f1,map50\n";
  for (const auto &run : runs) {
    int best = best_epoch(run, Criterion::Map50);
    const auto &row = *std::find_if(run.rows.begin(), run.rows.end(),
                                    [best](const EpochRow &e) { return e.epoch == best; });
    csv += run.name + "," + std::to_string(run.rows.size()) + "," + std::to_string(best) + "," +
           detail::fixed(row.precision(), 6) + "," + detail::fixed(row.recall(), 6) + "," +
           detail::fixed(row.f1, 6) + "," + detail::fixed(row.map50(), 6) + "\n";
  }
  return {std::move(svg), std::move(csv)};
}

std::string render_f1_curve_svg(const detmetrics::F1Curve &curve,
                                const std::vector<std::string> &class_names) {
  if (curve.thresholds.empty())
    throw std::invalid_argument("F1 curve has no thresholds");
  const double width = 640, height = 480;
  Frame frame{60, 40, 400, 380, 0.0, 1.0, 0.0, 1.0};
  std::string svg = svg_open(width, height);
  svg += frame.axes("F1 against confidence", 1, 1);
  for (std::size_t c = 0; c < curve.classes.size(); ++c) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t t = 0; t < curve.thresholds.size(); ++t)
      pts.emplace_back(curve.thresholds[t], curve.class_f1[c][t]);
    svg += frame.polyline(pts, color(c), 1.0);
    svg += legend_entry(480, 60 + 16.0 * c, color(c), class_label(class_names, curve.classes[c]));
  }
  std::vector<std::pair<double, double>> mean;
  for (std::size_t t = 0; t < curve.thresholds.size(); ++t)
    mean.emplace_back(curve.thresholds[t], curve.mean_f1[t]);
  svg += frame.polyline(mean, "#000000", 3.0);
  svg += legend_entry(480, 60 + 16.0 * curve.classes.size() + 8, "#000000",
                      "all " + detail::fixed(curve.best_f1(), 2) + " at " +
                          detail::fixed(curve.best_threshold(), 3));
  svg += "</svg>\n";
  return svg;
}

std::string render_pr_curve_svg(const std::vector<detmetrics::PRCurve> &curves,
                                const std::vector<std::string> &class_names) {
  const double width = 640, height = 480;
  Frame frame{60, 40, 400, 380, 0.0, 1.0, 0.0, 1.0};
  std::string svg = svg_open(width, height);
  svg += frame.axes("precision against recall", 1, 1);
  for (std::size_t c = 0; c < curves.size(); ++c) {
    std::vector<std::pair<double, double>> pts{{0.0, 1.0}};
    for (const auto &p : curves[c].points)
      pts.emplace_back(p.recall, p.precision);
    svg += frame.polyline(pts, color(c), 1.5);
    double ap = detmetrics::average_precision(curves[c]);
    svg += legend_entry(480, 60 + 16.0 * c, color(c),
                        class_label(class_names, curves[c].class_id) + " " +
                            detail::fixed(ap, 3));
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Comparison tables

double derived_f1_percent(double precision, double recall) {
  double p = precision * 100.0, r = recall * 100.0;
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

Comparison comparison_table(std::vector<ComparisonRow> rows, double tolerance) {
  Comparison out;
  std::vector<std::vector<std::string>> cells;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto &r = rows[i];
    double printed = r.f1 * 100.0;
    double derived = derived_f1_percent(r.precision, r.recall);
    double diff = printed - derived;
    bool flagged = std::abs(diff) > tolerance + 1e-9;
    if (flagged)
      out.flags.push_back({i, printed, derived, diff});
    cells.push_back({r.model, std::to_string(r.epochs), detail::fixed(r.precision * 100, 1),
                     detail::fixed(r.recall * 100, 1), detail::fixed(printed, 1),
                     detail::fixed(derived, 2), detail::fixed(r.map * 100, 1),
                     flagged ? "FLAG" : "ok"});
  }
  const std::vector<std::string> header{"Model",       "Epochs",     "Precision(%)",
                                        "Recall(%)",   "F1score(%)", "F1 derived(%)",
                                        "mAP(%)",      "Audit"};
  auto md_row = [](const std::vector<std::string> &c) {
    std::string s = "|";
    for (const auto &v : c)
      s += " " + v + " |";
    return s + "\n";
  };
  out.table = md_row(header);
  out.table += "|---|---:|---:|---:|---:|---:|---:|---|\n";
  for (const auto &c : cells)
    out.table += md_row(c);
  out.rows = std::move(rows);
  return out;
}

std::vector<ComparisonRow> parse_comparison_csv(std::string_view csv_text) {
  auto lines = detail::split_lines(csv_text);
  std::size_t li = 0;
  while (li < lines.size() && detail::trim(lines[li]).empty())
    ++li;
  if (li == lines.size())
    throw RunLogError("comparison table is empty");
  auto header = detail::split_csv_line(lines[li++]);
  std::map<std::string, std::size_t> col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    std::string h = header[c];
    std::transform(h.begin(), h.end(), h.begin(), [](unsigned char ch) { return std::tolower(ch); });
    col[h] = c;
  }
  for (const char *need : {"model", "epochs", "precision", "recall", "f1", "map"})
    if (!col.count(need))
      throw RunLogError(std::string("comparison table is missing column: ") + need);

  std::vector<ComparisonRow> rows;
  bool percent = false;
  for (; li < lines.size(); ++li) {
    if (detail::trim(lines[li]).empty())
      continue;
    auto cells = detail::split_csv_line(lines[li]);
    std::string where = "comparison line " + std::to_string(li + 1);
    auto number = [&](const char *name) {
      std::size_t c = col[name];
      auto v = c < cells.size() ? parse_number(cells[c]) : std::nullopt;
      if (!v || *v < 0)
        throw RunLogError(where + ": " + name + " must be a non-negative number");
      return *v;
    };
    ComparisonRow row;
    row.model = col["model"] < cells.size() ? cells[col["model"]] : "";
    double e = number("epochs");
    if (e != std::floor(e))
      throw RunLogError(where + ": epochs must be an integer");
    row.epochs = static_cast<int>(e);
    row.precision = number("precision");
    row.recall = number("recall");
    row.f1 = number("f1");
    row.map = number("map");
    for (double v : {row.precision, row.recall, row.f1, row.map})
      percent = percent || v > 1.0;
    rows.push_back(std::move(row));
  }
  for (auto &r : rows) {
    if (percent) {
      r.precision /= 100.0;
      r.recall /= 100.0;
      r.f1 /= 100.0;
      r.map /= 100.0;
    }
    for (double v : {r.precision, r.recall, r.f1, r.map})
      if (v > 1.0)
        throw RunLogError("comparison table: rate above 100%");
  }
  return rows;
}

std::string to_text(const Comparison &c) {
  std::string out = c.table;
  if (c.flags.empty()) {
    out += "\nF1 audit: all " + std::to_string(c.rows.size()) + " rows consistent\n";
  } else {
    out += "\nF1 audit: " + std::to_string(c.flags.size()) + " flagged\n";
    for (const auto &f : c.flags)
      out += "  row " + std::to_string(f.row + 1) + " (" + c.rows[f.row].model + "@" +
             std::to_string(c.rows[f.row].epochs) + "): printed " + detail::fixed(f.printed_f1, 2) +
             ", derived " + detail::fixed(f.derived_f1, 2) + "\n";
  }
  return out;
}

std::string to_json(const Comparison &c) {
  nlohmann::ordered_json j;
  auto rows = nlohmann::ordered_json::array();
  for (const auto &r : c.rows)
    rows.push_back({{"model", r.model},
                    {"epochs", r.epochs},
                    {"precision", r.precision},
                    {"recall", r.recall},
                    {"f1", r.f1},
                    {"f1_derived", derived_f1_percent(r.precision, r.recall) / 100.0},
                    {"map", r.map}});
  auto flags = nlohmann::ordered_json::array();
  for (const auto &f : c.flags)
    flags.push_back({{"row", f.row},
                     {"printed_f1", f.printed_f1},
                     {"derived_f1", f.derived_f1},
                     {"difference", f.difference}});
  j["rows"] = std::move(rows);
  j["flags"] = std::move(flags);
  return j.dump(2) + "\n";
}

std::string to_csv(const Comparison &c) {
  std::string out = "model,epochs,precision,recall,f1,f1_derived,map,flagged\n";
  for (std::size_t i = 0; i < c.rows.size(); ++i) {
    const auto &r = c.rows[i];
    bool flagged = std::any_of(c.flags.begin(), c.flags.end(),
                               [i](const AuditFlag &f) { return f.row == i; });
    out += r.model + "," + std::to_string(r.epochs) + "," + detail::fixed(r.precision * 100, 2) +
           "," + detail::fixed(r.recall * 100, 2) + "," + detail::fixed(r.f1 * 100, 2) + "," +
           detail::fixed(derived_f1_percent(r.precision, r.recall), 4) + "," +
           detail::fixed(r.map * 100, 2) + "," + (flagged ? "true" : "false") + "\n";
  }
  return out;
}

} // namespace signdet::report
