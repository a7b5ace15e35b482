#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "signdet/dataset.hpp"

namespace signdet::modelcfg {

class ModelSpecError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A module argument: integer, real, bare or quoted symbol, or nested list.
struct Arg {
  std::variant<std::int64_t, double, std::string, std::vector<Arg>> value;

  bool operator==(const Arg &) const = default;
};

using ArgList = std::vector<Arg>;

/// One `[from, number, module, args]` row.
struct Layer {
  std::vector<int> from; // -1 is the previous layer; other negatives are relative
  bool multi_input = false;
  int number = 1;
  std::string module;
  ArgList args;

  bool operator==(const Layer &) const = default;
};

struct ModelSpec {
  int nc = 0;
  double depth_multiple = 1.0;
  double width_multiple = 1.0;
  dataset::AnchorSet anchors;
  std::vector<Layer> backbone;
  std::vector<Layer> head;

  /// Backbone rows followed by head rows; indices in `from` refer to this list.
  std::vector<Layer> layers() const;
  bool operator==(const ModelSpec &) const = default;
};

/// Parses the YAML model file (`nc`, `depth_multiple`, `width_multiple`,
/// `anchors`, `backbone`, `head`). Anchor rows map to strides 8, 16, 32, ...
/// Unknown modules are kept as-is. Throws ModelSpecError on malformed rows,
/// repeat counts below 1 and `from` references that do not point backwards.
ModelSpec parse_model_spec(std::string_view yaml_text);

std::string emit_model_spec(const ModelSpec &spec);

struct Variant {
  std::string name;
  double depth_multiple = 1.0;
  double width_multiple = 1.0;
};

/// Throws std::invalid_argument unless both multiples lie in (0, 1.5].
void validate(const Variant &variant);

/// "s"/"small"/"yolov5s" (0.33, 0.50), "m" (0.67, 0.75), "l" (1.0, 1.0).
Variant variant_preset(std::string_view name);
std::vector<Variant> variant_presets();

/// max(round(n * multiple), 1), rounding half to even.
int scale_depth(int repeats, double depth_multiple);

/// channels * multiple rounded up to a multiple of `divisor` (at least divisor).
int scale_width(int channels, double width_multiple, int divisor = 8);

struct LayerParams {
  std::size_t index = 0;
  std::vector<int> from; // resolved absolute indices, -1 = network input
  int repeats = 1;       // after depth scaling
  std::string module;
  int in_channels = 0;
  int out_channels = 0;
  std::int64_t params = 0;
  bool counted = true; // false for modules we cannot size
};

struct ParamEstimate {
  std::vector<LayerParams> layers;
  std::int64_t total = 0;
  std::vector<std::string> uncounted_modules;
};

/// Parameter count after applying the variant's multiples. Convolutions
/// count k*k*c_in*c_out weights plus c_out biases; Upsample and Concat
/// count zero; unknown modules count zero and are listed.
ParamEstimate estimate_params(const ModelSpec &spec, const Variant &variant,
                              int input_channels = 3);

std::string to_text(const ParamEstimate &estimate);
std::string to_json(const ParamEstimate &estimate);
std::string to_csv(const ParamEstimate &estimate);

struct ResultRow {
  std::string variant;
  int epochs = 0;
  double map = 0.0;
  std::int64_t params = 0;

  bool operator==(const ResultRow &) const = default;
};

enum class RankPolicy { MaxMap, Efficiency };

/// Orders rows by mAP, descending; ties go to fewer parameters, then fewer
/// epochs. Efficiency first drops rows whose params exceed `param_budget`.
std::vector<ResultRow> rank_variants(std::vector<ResultRow> rows, RankPolicy policy,
                                     std::optional<std::int64_t> param_budget = std::nullopt);

} // namespace signdet::modelcfg
