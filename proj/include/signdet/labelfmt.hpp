#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "signdet/box.hpp"

namespace signdet::labelfmt {

enum class ErrorKind {
  FieldCount,
  NonNumeric,
  NegativeClassId,
  NonIntegerClassId,
  OutOfRange,
};

const char *to_string(ErrorKind kind);

/// Raised for any malformed label or prediction line. `line()` is 1-based
/// when the error came out of a whole-file parse and 0 for a single line.
class LabelError : public std::runtime_error {
public:
  LabelError(ErrorKind kind, std::string field, const std::string &message,
             std::size_t line = 0);

  ErrorKind kind() const { return kind_; }
  const std::string &field() const { return field_; }
  std::size_t line() const { return line_; }

  LabelError at_line(std::size_t line) const;

private:
  ErrorKind kind_;
  std::string field_;
  std::string detail_;
  std::size_t line_;
};

enum class ParseMode { Strict, Lenient };

struct ParseOptions {
  ParseMode mode = ParseMode::Strict;
  // Strict mode: how far the expanded corners may leave [0,1].
  double corner_tolerance = 0.0;
  // Lenient mode: overflow up to this much is clamped back into the image.
  double clamp_limit = 1e-3;
};

struct FieldIssue {
  std::string field;
  std::string reason;

  bool operator==(const FieldIssue &) const = default;
};

/// Every strict-rule violation of `box`, keyed by field name
/// ("cx", "cy", "w", "h"). Empty means the box is valid.
std::vector<FieldIssue> check_box(const NormBox &box,
                                  double corner_tolerance = 0.0);

Annotation parse_label_line(std::string_view line,
                            const ParseOptions &options = {},
                            std::vector<std::string> *warnings = nullptr);

/// Blank lines are skipped; an empty text is a valid negative sample.
std::vector<Annotation> parse_label_file(std::string_view text,
                                         const ParseOptions &options = {},
                                         std::vector<std::string> *warnings = nullptr);

std::string emit_label_line(const Annotation &annotation);
std::string emit_label_file(std::span<const Annotation> annotations);

/// Prediction files use the label layout plus a trailing confidence.
Detection parse_prediction_line(std::string_view line,
                                const ParseOptions &options = {});
std::vector<Detection> parse_prediction_file(std::string_view text,
                                             const ParseOptions &options = {});
std::string emit_prediction_file(std::span<const Detection> detections);

struct ClassEntry {
  int index = 0;
  std::string gloss;
  std::string name;

  bool operator==(const ClassEntry &) const = default;
};

class ClassTable {
public:
  ClassTable() = default;
  /// Throws std::invalid_argument unless indices run 0..n-1 and names are unique.
  explicit ClassTable(std::vector<ClassEntry> entries);

  static ClassTable from_names(const std::vector<std::string> &names);

  std::size_t size() const { return entries_.size(); }
  bool contains(int class_id) const {
    return class_id >= 0 && static_cast<std::size_t>(class_id) < entries_.size();
  }
  const ClassEntry &at(int class_id) const;
  const std::vector<ClassEntry> &entries() const { return entries_; }
  std::vector<std::string> names() const;

private:
  std::vector<ClassEntry> entries_;
};

/// The twelve gestures in their canonical order, glossed in English with the
/// Telugu romanization as the class name.
ClassTable default_class_table();

/// The `train` / `val` / `nc` / `names` dataset file.
struct DatasetDescriptor {
  std::string root;  // optional `path:` key
  std::string train_dir;
  std::string val_dir;
  int class_count = 0;
  std::vector<std::string> class_names;

  bool operator==(const DatasetDescriptor &) const = default;
};

DatasetDescriptor parse_descriptor(std::string_view yaml_text);
std::string emit_descriptor(const DatasetDescriptor &descriptor);

/// Reads a descriptor file and resolves relative split directories against
/// `path:` (if given) or else the descriptor's own directory.
DatasetDescriptor load_descriptor(const std::filesystem::path &file);

} // namespace signdet::labelfmt
