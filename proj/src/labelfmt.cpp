#include "signdet/labelfmt.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include <yaml-cpp/yaml.h>

#include "signdet/io.hpp"

namespace signdet::labelfmt {

namespace {

// Absorbs the rounding of cx - w/2 for boxes printed at 6 decimals.
constexpr double kCornerSlack = 1e-9;

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  };
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i]))
      ++i;
    std::size_t start = i;
    while (i < line.size() && !is_space(line[i]))
      ++i;
    if (i > start)
      out.push_back(line.substr(start, i - start));
  }
  return out;
}

bool parse_double(std::string_view token, double &value) {
  const char *first = token.data();
  const char *last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc() && ptr == last;
}

double parse_number(std::string_view token, const char *field) {
  double value = 0.0;
  if (!parse_double(token, value))
    throw LabelError(ErrorKind::NonNumeric, field,
                     "non-numeric token '" + std::string(token) + "'");
  if (!std::isfinite(value))
    throw LabelError(ErrorKind::OutOfRange, field, "value is not finite");
  return value;
}

int parse_class_id(std::string_view token) {
  long long as_int = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), as_int);
  if (ec == std::errc() && ptr == token.data() + token.size()) {
    if (as_int < 0)
      throw LabelError(ErrorKind::NegativeClassId, "class",
                       "class id " + std::string(token) + " is negative");
    if (as_int > 1'000'000)
      throw LabelError(ErrorKind::OutOfRange, "class", "class id too large");
    return static_cast<int>(as_int);
  }
  double as_double = 0.0;
  if (!parse_double(token, as_double))
    throw LabelError(ErrorKind::NonNumeric, "class",
                     "non-numeric token '" + std::string(token) + "'");
  if (!std::isfinite(as_double) || std::floor(as_double) != as_double)
    throw LabelError(ErrorKind::NonIntegerClassId, "class",
                     "class id '" + std::string(token) + "' is not an integer");
  if (as_double < 0)
    throw LabelError(ErrorKind::NegativeClassId, "class",
                     "class id " + std::string(token) + " is negative");
  if (as_double > 1'000'000)
    throw LabelError(ErrorKind::OutOfRange, "class", "class id too large");
  return static_cast<int>(as_double);
}

void check_axis(std::vector<FieldIssue> &issues, const char *center_name,
                const char *size_name, double center, double size,
                double tolerance) {
  bool center_ok = std::isfinite(center) && center >= 0.0 && center <= 1.0;
  bool size_ok = std::isfinite(size) && size > 0.0 && size <= 1.0;
  if (!center_ok)
    issues.push_back({center_name, "must lie in [0, 1]"});
  if (!size_ok)
    issues.push_back({size_name, "must lie in (0, 1]"});
  if (center_ok && size_ok) {
    double lo = center - size / 2.0;
    double hi = center + size / 2.0;
    if (lo < -tolerance - kCornerSlack || hi > 1.0 + tolerance + kCornerSlack)
      issues.push_back({size_name, "box extends outside the image"});
  }
}

// Lenient mode: tolerate overflow up to `limit`, clamp the corners and warn.
NormBox clamp_lenient(const NormBox &box, double limit,
                      std::vector<std::string> *warnings) {
  auto clamp_axis = [&](double center, double size, const char *center_name,
                        const char *size_name, bool &changed) {
    if (!(center >= -limit && center <= 1.0 + limit))
      throw LabelError(ErrorKind::OutOfRange, center_name,
                       std::string(center_name) + " outside [0, 1]");
    if (!(size > 0.0 && size <= 1.0 + limit))
      throw LabelError(ErrorKind::OutOfRange, size_name,
                       std::string(size_name) + " outside (0, 1]");
    double lo = center - size / 2.0;
    double hi = center + size / 2.0;
    if (lo < -limit - kCornerSlack || hi > 1.0 + limit + kCornerSlack)
      throw LabelError(ErrorKind::OutOfRange, size_name,
                       "box extends outside the image beyond the clamp limit");
    double clo = std::clamp(lo, 0.0, 1.0);
    double chi = std::clamp(hi, 0.0, 1.0);
    if (clo != lo || chi != hi || center < 0.0 || center > 1.0 || size > 1.0)
      changed = true;
    if (chi <= clo)
      throw LabelError(ErrorKind::OutOfRange, size_name, "box collapses when clamped");
    return std::pair{(clo + chi) / 2.0, chi - clo};
  };
  bool changed = false;
  auto [cx, w] = clamp_axis(box.cx, box.w, "cx", "w", changed);
  auto [cy, h] = clamp_axis(box.cy, box.h, "cy", "h", changed);
  if (!changed)
    return box;
  if (warnings)
    warnings->push_back("box clamped to the image bounds");
  return NormBox{cx, cy, w, h};
}

NormBox parse_box(const std::vector<std::string_view> &fields,
                  const ParseOptions &options,
                  std::vector<std::string> *warnings) {
  NormBox box{parse_number(fields[1], "cx"), parse_number(fields[2], "cy"),
              parse_number(fields[3], "w"), parse_number(fields[4], "h")};
  if (options.mode == ParseMode::Lenient)
    return clamp_lenient(box, options.clamp_limit, warnings);
  auto issues = check_box(box, options.corner_tolerance);
  if (!issues.empty())
    throw LabelError(ErrorKind::OutOfRange, issues.front().field,
                     "coordinate out of range: " + issues.front().field + " " +
                         issues.front().reason);
  return box;
}

template <typename Item, typename LineParser>
std::vector<Item> parse_lines(std::string_view text, LineParser parse_line) {
  std::vector<Item> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos)
      end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    if (!split_fields(line).empty()) {
      try {
        out.push_back(parse_line(line));
      } catch (const LabelError &e) {
        throw e.at_line(line_no);
      }
    }
    if (end == text.size())
      break;
    pos = end + 1;
  }
  return out;
}

void append_fixed6(std::string &out, double value) {
  char buf[64];
  int n = std::snprintf(buf, sizeof buf, " %.6f", value);
  out.append(buf, static_cast<std::size_t>(n));
}

void require_valid(const Annotation &a) {
  if (a.class_id < 0)
    throw LabelError(ErrorKind::NegativeClassId, "class", "class id is negative");
  // Field domains only; the corner rule is a parse-time policy.
  auto issues = check_box(a.box, std::numeric_limits<double>::infinity());
  if (!issues.empty())
    throw LabelError(ErrorKind::OutOfRange, issues.front().field,
                     "cannot emit invalid box: " + issues.front().field + " " +
                         issues.front().reason);
}

} // namespace

const char *to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::FieldCount:
    return "field-count";
  case ErrorKind::NonNumeric:
    return "non-numeric";
  case ErrorKind::NegativeClassId:
    return "negative-class-id";
  case ErrorKind::NonIntegerClassId:
    return "non-integer-class-id";
  case ErrorKind::OutOfRange:
    return "out-of-range";
  }
  return "unknown";
}

LabelError::LabelError(ErrorKind kind, std::string field,
                       const std::string &message, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message
                              : message),
      kind_(kind), field_(std::move(field)), detail_(message), line_(line) {}

LabelError LabelError::at_line(std::size_t line) const {
  return LabelError(kind_, field_, detail_, line);
}

std::vector<FieldIssue> check_box(const NormBox &box, double corner_tolerance) {
  std::vector<FieldIssue> issues;
  check_axis(issues, "cx", "w", box.cx, box.w, corner_tolerance);
  check_axis(issues, "cy", "h", box.cy, box.h, corner_tolerance);
  return issues;
}

Annotation parse_label_line(std::string_view line, const ParseOptions &options,
                            std::vector<std::string> *warnings) {
  auto fields = split_fields(line);
  if (fields.size() != 5)
    throw LabelError(ErrorKind::FieldCount, "",
                     "expected 5 fields (class cx cy w h), got " +
                         std::to_string(fields.size()));
  Annotation a;
  a.class_id = parse_class_id(fields[0]);
  a.box = parse_box(fields, options, warnings);
  return a;
}

std::vector<Annotation> parse_label_file(std::string_view text,
                                         const ParseOptions &options,
                                         std::vector<std::string> *warnings) {
  return parse_lines<Annotation>(text, [&](std::string_view line) {
    return parse_label_line(line, options, warnings);
  });
}

std::string emit_label_line(const Annotation &annotation) {
  require_valid(annotation);
  std::string out = std::to_string(annotation.class_id);
  append_fixed6(out, annotation.box.cx);
  append_fixed6(out, annotation.box.cy);
  append_fixed6(out, annotation.box.w);
  append_fixed6(out, annotation.box.h);
  out.push_back('\n');
  return out;
}

std::string emit_label_file(std::span<const Annotation> annotations) {
  std::string out;
  for (const auto &a : annotations)
    out += emit_label_line(a);
  return out;
}

Detection parse_prediction_line(std::string_view line,
                                const ParseOptions &options) {
  auto fields = split_fields(line);
  if (fields.size() != 6)
    throw LabelError(ErrorKind::FieldCount, "",
                     "expected 6 fields (class cx cy w h conf), got " +
                         std::to_string(fields.size()));
  Detection d;
  d.class_id = parse_class_id(fields[0]);
  d.box = parse_box(fields, options, nullptr);
  d.confidence = parse_number(fields[5], "conf");
  if (d.confidence < 0.0 || d.confidence > 1.0)
    throw LabelError(ErrorKind::OutOfRange, "conf", "confidence outside [0, 1]");
  return d;
}

std::vector<Detection> parse_prediction_file(std::string_view text,
                                             const ParseOptions &options) {
  return parse_lines<Detection>(text, [&](std::string_view line) {
    return parse_prediction_line(line, options);
  });
}

std::string emit_prediction_file(std::span<const Detection> detections) {
  std::string out;
  for (const auto &d : detections) {
    Annotation a{d.class_id, d.box};
    require_valid(a);
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0))
      throw LabelError(ErrorKind::OutOfRange, "conf", "confidence outside [0, 1]");
    out += std::to_string(d.class_id);
    append_fixed6(out, d.box.cx);
    append_fixed6(out, d.box.cy);
    append_fixed6(out, d.box.w);
    append_fixed6(out, d.box.h);
    append_fixed6(out, d.confidence);
    out.push_back('\n');
  }
  return out;
}

ClassTable::ClassTable(std::vector<ClassEntry> entries)
    : entries_(std::move(entries)) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].index != static_cast<int>(i))
      throw std::invalid_argument("class indices must be contiguous from 0");
    if (entries_[i].name.empty())
      throw std::invalid_argument("class name must not be empty");
    if (!seen.insert(entries_[i].name).second)
      throw std::invalid_argument("duplicate class name '" + entries_[i].name + "'");
  }
}

ClassTable ClassTable::from_names(const std::vector<std::string> &names) {
  std::vector<ClassEntry> entries;
  entries.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i)
    entries.push_back({static_cast<int>(i), names[i], names[i]});
  return ClassTable(std::move(entries));
}

const ClassEntry &ClassTable::at(int class_id) const {
  if (!contains(class_id))
    throw std::out_of_range("class id " + std::to_string(class_id) +
                            " not in class table");
  return entries_[static_cast<std::size_t>(class_id)];
}

std::vector<std::string> ClassTable::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto &e : entries_)
    out.push_back(e.name);
  return out;
}

ClassTable default_class_table() {
  return ClassTable({
      {0, "Home", "illu"},
      {1, "Love", "prema"},
      {2, "Money", "dabbulu"},
      {3, "No", "kadhu"},
      {4, "One", "okati"},
      {5, "Yes", "avunu"},
      {6, "Fine", "bagunna"},
      {7, "Family", "kutumbam"},
      {8, "Pray", "Namasthe"},
      {9, "Help", "sahayam"},
      {10, "Why", "enduku"},
      {11, "Where", "ekkada"},
  });
}

DatasetDescriptor parse_descriptor(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception &e) {
    throw std::invalid_argument(std::string("dataset descriptor: ") + e.what());
  }
  if (!root.IsMap())
    throw std::invalid_argument("dataset descriptor must be a mapping");

  DatasetDescriptor d;
  auto scalar = [&](const char *key, bool required) -> std::string {
    auto node = root[key];
    if (!node || node.IsNull()) {
      if (required)
        throw std::invalid_argument(std::string("dataset descriptor: missing key '") +
                                    key + "'");
      return {};
    }
    if (!node.IsScalar())
      throw std::invalid_argument(std::string("dataset descriptor: '") + key +
                                  "' must be a scalar");
    return node.as<std::string>();
  };
  d.root = scalar("path", false);
  d.train_dir = scalar("train", true);
  d.val_dir = scalar("val", true);

  auto names = root["names"];
  if (!names)
    throw std::invalid_argument("dataset descriptor: missing key 'names'");
  if (names.IsSequence()) {
    for (const auto &n : names)
      d.class_names.push_back(n.as<std::string>());
  } else if (names.IsMap()) {
    std::vector<std::pair<int, std::string>> indexed;
    for (const auto &kv : names)
      indexed.emplace_back(kv.first.as<int>(), kv.second.as<std::string>());
    std::sort(indexed.begin(), indexed.end());
    for (std::size_t i = 0; i < indexed.size(); ++i) {
      if (indexed[i].first != static_cast<int>(i))
        throw std::invalid_argument("dataset descriptor: names indices must be 0..nc-1");
      d.class_names.push_back(indexed[i].second);
    }
  } else {
    throw std::invalid_argument("dataset descriptor: 'names' must be a list or mapping");
  }

  if (auto nc = root["nc"]; nc && !nc.IsNull()) {
    d.class_count = nc.as<int>();
    if (d.class_count != static_cast<int>(d.class_names.size()))
      throw std::invalid_argument("dataset descriptor: nc (" +
                                  std::to_string(d.class_count) +
                                  ") does not match the number of names (" +
                                  std::to_string(d.class_names.size()) + ")");
  } else {
    d.class_count = static_cast<int>(d.class_names.size());
  }
  ClassTable::from_names(d.class_names); // uniqueness check
  return d;
}

std::string emit_descriptor(const DatasetDescriptor &d) {
  if (d.class_count != static_cast<int>(d.class_names.size()))
    throw std::invalid_argument("descriptor nc does not match names");
  auto quote = [](const std::string &s) {
    std::string out = "'";
    for (char c : s) {
      if (c == '\'')
        out += "''";
      else
        out.push_back(c);
    }
    out.push_back('\'');
    return out;
  };
  std::string out;
  if (!d.root.empty())
    out += "path: " + quote(d.root) + "\n";
  out += "train: " + quote(d.train_dir) + "\n";
  out += "val: " + quote(d.val_dir) + "\n";
  out += "nc: " + std::to_string(d.class_count) + "\n";
  out += "names: [";
  for (std::size_t i = 0; i < d.class_names.size(); ++i) {
    if (i)
      out += ", ";
    out += quote(d.class_names[i]);
  }
  out += "]\n";
  return out;
}

DatasetDescriptor load_descriptor(const std::filesystem::path &file) {
  auto d = parse_descriptor(io::read_text(file));
  std::filesystem::path base = file.parent_path();
  if (!d.root.empty()) {
    std::filesystem::path r(d.root);
    base = r.is_absolute() ? r : base / r;
  }
  auto resolve = [&](const std::string &p) {
    std::filesystem::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal().string();
  };
  d.train_dir = resolve(d.train_dir);
  d.val_dir = resolve(d.val_dir);
  return d;
}

} // namespace signdet::labelfmt
