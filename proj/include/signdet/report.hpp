#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "signdet/detmetrics.hpp"

namespace signdet::report {

class RunLogError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Metric series of a YOLOv5-style results.csv, in dashboard order.
enum class Series {
  TrainBoxLoss,
  TrainObjLoss,
  TrainClsLoss,
  Precision,
  Recall,
  ValBoxLoss,
  ValObjLoss,
  ValClsLoss,
  Map50,
  Map50To95,
};

inline constexpr std::size_t series_count = 10;

/// Column header as written by YOLOv5, e.g. "metrics/mAP_0.5".
std::string_view column_name(Series series);
bool is_loss(Series series);

/// One epoch row. Rates are fractions. Series missing from the log are unset.
struct EpochRow {
  int epoch = 0;
  std::optional<double> values[series_count];
  double f1 = 0.0;                  // always 2PR/(P+R), 0 when P+R = 0
  std::optional<double> logged_f1;  // an F1 column from the log, if any

  const std::optional<double> &get(Series s) const {
    return values[static_cast<std::size_t>(s)];
  }
  double precision() const { return *get(Series::Precision); }
  double recall() const { return *get(Series::Recall); }
  double map50() const { return *get(Series::Map50); }
  /// Sum of the three validation losses; unset unless all three are present.
  std::optional<double> val_loss() const;
};

struct RunLog {
  std::string name;
  std::vector<EpochRow> rows;

  bool has(Series s) const;
};

/// Header-driven parse. Headers are trimmed and unknown columns ignored.
/// Mandatory: epoch, metrics/precision, metrics/recall, metrics/mAP_0.5.
/// A rate column with any value above 1 is read as percent. Throws
/// RunLogError on missing mandatory columns, non-numeric cells, negative
/// losses, rates outside [0, 1] and epochs that do not strictly increase.
RunLog parse_run_log(std::string_view csv_text, std::string name = "run");

enum class Criterion { Map50, Map50To95, Precision, Recall, F1, MinValLoss };

Criterion parse_criterion(std::string_view text);

/// Epoch maximizing the criterion (minimizing for MinValLoss); the earliest
/// epoch wins ties. Throws when the log is empty or lacks the column.
int best_epoch(const RunLog &log, Criterion criterion = Criterion::Map50);

struct Dashboard {
  std::string svg;
  std::string csv; // one summary row per run
};

/// One panel per series present in any run and one polyline per run and
/// panel. Throws RunLogError when no runs are given or a run has no rows.
Dashboard render_dashboard(std::span<const RunLog> runs);

/// Per-class F1 against confidence with the mean curve drawn on top.
std::string render_f1_curve_svg(const detmetrics::F1Curve &curve,
                                const std::vector<std::string> &class_names = {});

/// Precision against recall, one polyline per class.
std::string render_pr_curve_svg(const std::vector<detmetrics::PRCurve> &curves,
                                const std::vector<std::string> &class_names = {});

/// Rates are fractions; printed F1 is the value read from the table.
struct ComparisonRow {
  std::string model;
  int epochs = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double map = 0.0;
};

struct AuditFlag {
  std::size_t row = 0;
  double printed_f1 = 0.0; // percent
  double derived_f1 = 0.0; // percent
  double difference = 0.0; // percentage points
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  std::vector<AuditFlag> flags;
  std::string table; // markdown, values in percent
};

/// Percentage points a printed F1 may differ from 2PR/(P+R).
inline constexpr double f1_audit_tolerance = 0.05;

/// Derived F1 in percent from rates given as fractions.
double derived_f1_percent(double precision, double recall);

Comparison comparison_table(std::vector<ComparisonRow> rows,
                            double tolerance = f1_audit_tolerance);

/// CSV with columns model, epochs, precision, recall, f1, map. Percent
/// input (any value above 1) is converted to fractions.
std::vector<ComparisonRow> parse_comparison_csv(std::string_view csv_text);

std::string to_text(const Comparison &comparison);
std::string to_json(const Comparison &comparison);
std::string to_csv(const Comparison &comparison);

} // namespace signdet::report
