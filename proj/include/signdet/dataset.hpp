#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "signdet/box.hpp"
#include "signdet/labelfmt.hpp"

namespace signdet::dataset {

// ---------------------------------------------------------------------------
// Splitting

struct SplitPlan {
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

/// Number of training samples for `total` ids: floor(fraction * total).
std::size_t train_count(std::size_t total, double fraction);

/// Shuffles `ids` with SeededRng(seed) and cuts the first train_count() of
/// them into the training side. Throws std::invalid_argument on an empty or
/// duplicated id list, or a fraction outside (0, 1).
SplitPlan split(const std::vector<std::string> &ids, double train_fraction,
                std::uint64_t seed);

/// Per-stratum variant: `strata[i]` names the group of `ids[i]`. Quotas are
/// floor(fraction * n_group) topped up by largest remainder, so the total
/// still equals train_count(). Each group is shuffled independently.
SplitPlan split_stratified(const std::vector<std::string> &ids,
                           const std::vector<int> &strata, double train_fraction,
                           std::uint64_t seed);

/// One id per line, LF-terminated.
std::string manifest_text(const std::vector<std::string> &ids);

// ---------------------------------------------------------------------------
// Validation

enum class IssueKind {
  OrphanLabel,
  MissingLabel,
  ClassOutOfRange,
  MalformedLine,
  DuplicateBox,
};

const char *to_string(IssueKind kind);

struct Issue {
  IssueKind kind;
  std::string sample; // image or label stem
  std::size_t line = 0;
  std::string message;
};

struct ValidationReport {
  std::size_t images = 0;
  std::size_t labels = 0;
  std::vector<Issue> issues;

  bool clean() const { return issues.empty(); }
};

/// Label file contents keyed by stem.
using LabelTexts = std::map<std::string, std::string>;

/// Checks one split: `image_ids` are image stems, `labels` the label texts.
ValidationReport validate_dataset(int class_count,
                                  const std::vector<std::string> &image_ids,
                                  const LabelTexts &labels);

/// Reads the train and val splits named by the descriptor (labels located by
/// io::label_dir_for) and validates each. Unreadable directories throw.
ValidationReport validate_dataset(const labelfmt::DatasetDescriptor &descriptor);

/// Image stems of a directory.
std::vector<std::string> image_ids(const std::filesystem::path &image_dir);

/// Every *.txt file of a directory, keyed by stem.
LabelTexts read_label_dir(const std::filesystem::path &label_dir);

std::string to_text(const ValidationReport &report);
std::string to_json(const ValidationReport &report);
std::string to_csv(const ValidationReport &report);

// ---------------------------------------------------------------------------
// Statistics

struct SizeSummary {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::vector<std::size_t> histogram; // bins of width 1/bins over [0, 1]
};

struct DatasetStats {
  std::size_t images = 0;
  std::size_t boxes = 0;
  std::vector<std::size_t> boxes_per_class;
  std::vector<std::size_t> images_per_class;
  std::map<std::size_t, std::size_t> boxes_per_image; // box count -> images
  SizeSummary width;
  SizeSummary height;
  SizeSummary area;
};

/// Class ids outside [0, class_count) throw std::invalid_argument.
DatasetStats dataset_stats(const std::map<std::string, std::vector<Annotation>> &samples,
                           int class_count, std::size_t bins = 10);

std::string to_text(const DatasetStats &stats, const std::vector<std::string> &names = {});
std::string to_csv(const DatasetStats &stats, const std::vector<std::string> &names = {});
std::string to_json(const DatasetStats &stats, const std::vector<std::string> &names = {});

// ---------------------------------------------------------------------------
// Anchors

struct AnchorSize {
  double width = 0.0;
  double height = 0.0;

  double area() const { return width * height; }
  bool operator==(const AnchorSize &) const = default;
};

struct StrideGroup {
  int stride = 0;
  std::vector<AnchorSize> anchors;

  bool operator==(const StrideGroup &) const = default;
};

/// Anchor pairs in pixels, grouped by feature-map stride, smallest first.
struct AnchorSet {
  std::vector<StrideGroup> groups;

  std::size_t size() const;
  std::vector<AnchorSize> flatten() const;
  bool operator==(const AnchorSet &) const = default;
};

/// Splits anchors sorted by ascending area into consecutive groups, one per
/// stride. Group sizes differ by at most one, larger groups first; empty
/// groups are omitted.
AnchorSet group_by_stride(std::vector<AnchorSize> anchors,
                          const std::vector<int> &strides = {8, 16, 32});

struct KMeansOptions {
  std::size_t k = 9;
  std::uint64_t seed = 0;
  double reference_width = 640.0;
  double reference_height = 640.0;
  std::size_t max_iterations = 300;
  std::vector<int> strides{8, 16, 32};
};

struct KMeansResult {
  AnchorSet anchors;
  double mean_best_iou = 0.0;
  std::size_t iterations = 0;
  std::vector<double> history; // mean best IoU after seeding and each iteration
};

/// Mean over boxes of the best centered IoU against any anchor.
double mean_best_iou(std::span<const AnchorSize> boxes,
                     std::span<const AnchorSize> anchors);

/// k-means over box (w, h) in pixels with distance 1 - IoU_wh, seeded by
/// k-means++. Each update moves a centroid to its cluster mean only when
/// that does not lower the cluster's summed IoU, so mean best IoU never
/// decreases. Stops when assignments are stable or after max_iterations.
/// Throws std::invalid_argument for empty input or k above the number of
/// distinct (w, h) pairs.
KMeansResult kmeans_anchors(std::span<const NormBox> boxes,
                            const KMeansOptions &options = {});

std::string to_yaml(const AnchorSet &anchors);
std::string to_json(const KMeansResult &result);
std::string to_text(const KMeansResult &result);

} // namespace signdet::dataset
