#include "signdet/modelcfg.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>

#include "json.hpp"
#include <yaml-cpp/yaml.h>

#include "text_util.hpp"

namespace signdet::modelcfg {

std::vector<Layer> ModelSpec::layers() const {
  std::vector<Layer> out = backbone;
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

Arg parse_arg(const YAML::Node &node, const std::string &where) {
  if (node.IsSequence()) {
    ArgList list;
    for (const auto &item : node)
      list.push_back(parse_arg(item, where));
    return Arg{std::move(list)};
  }
  if (node.IsNull())
    return Arg{std::string("None")};
  if (!node.IsScalar())
    throw ModelSpecError(where + ": module arguments must be scalars or lists");
  const std::string &text = node.Scalar();
  if (node.Tag() != "!") { // plain scalar: may be numeric
    std::int64_t i = 0;
    auto [pi, ei] = std::from_chars(text.data(), text.data() + text.size(), i);
    if (ei == std::errc() && pi == text.data() + text.size())
      return Arg{i};
    double d = 0.0;
    auto [pd, ed] = std::from_chars(text.data(), text.data() + text.size(), d);
    if (ed == std::errc() && pd == text.data() + text.size() && std::isfinite(d))
      return Arg{d};
  }
  return Arg{text};
}

int parse_int(const YAML::Node &node, const std::string &where, const char *what) {
  if (!node || !node.IsScalar())
    throw ModelSpecError(where + ": " + what + " must be an integer");
  const std::string &text = node.Scalar();
  int v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size())
    throw ModelSpecError(where + ": " + what + " must be an integer, got '" + text + "'");
  return v;
}

double parse_real(const YAML::Node &node, const char *what) {
  if (!node.IsScalar())
    throw ModelSpecError(std::string(what) + " must be a number");
  const std::string &text = node.Scalar();
  double v = 0.0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size() || !std::isfinite(v))
    throw ModelSpecError(std::string(what) + " must be a number, got '" + text + "'");
  return v;
}

Layer parse_layer(const YAML::Node &row, std::size_t index) {
  std::string where = "layer " + std::to_string(index);
  if (!row.IsSequence() || row.size() != 4)
    throw ModelSpecError(where + ": expected [from, number, module, args]");
  Layer layer;
  if (row[0].IsSequence()) {
    layer.multi_input = true;
    for (const auto &f : row[0])
      layer.from.push_back(parse_int(f, where, "from"));
    if (layer.from.empty())
      throw ModelSpecError(where + ": empty from list");
  } else {
    layer.from.push_back(parse_int(row[0], where, "from"));
  }
  layer.number = parse_int(row[1], where, "number");
  if (layer.number < 1)
    throw ModelSpecError(where + ": repeat count must be at least 1");
  if (!row[2].IsScalar() || row[2].Scalar().empty())
    throw ModelSpecError(where + ": module must be a name");
  layer.module = row[2].Scalar();
  if (!row[3].IsSequence())
    throw ModelSpecError(where + ": args must be a list");
  for (const auto &a : row[3])
    layer.args.push_back(parse_arg(a, where));
  return layer;
}

std::vector<Layer> parse_section(const YAML::Node &node, const char *name,
                                 std::size_t first_index) {
  if (!node || !node.IsSequence())
    throw ModelSpecError(std::string("missing or malformed '") + name + "' section");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < node.size(); ++i)
    layers.push_back(parse_layer(node[i], first_index + i));
  return layers;
}

int resolve_from(int from, std::size_t index) {
  return from < 0 ? static_cast<int>(index) + from : from;
}

void check_references(const std::vector<Layer> &layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (int f : layers[i].from) {
      int target = resolve_from(f, i);
      // -1 resolves to the network input for the first layer.
      if (target < -1 || target >= static_cast<int>(i) || (target == -1 && f != -1))
        throw ModelSpecError("layer " + std::to_string(i) + ": dangling from reference " +
                             std::to_string(f));
    }
  }
}

bool is_plain_symbol(const std::string &s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_'))
    return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
  });
}

std::string emit_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, p);
  if (s.find_first_of(".e") == std::string::npos)
    s += ".0";
  return s;
}

std::string emit_arg(const Arg &arg) {
  struct Visitor {
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const { return emit_real(d); }
    std::string operator()(const std::string &s) const {
      if (is_plain_symbol(s))
        return s;
      std::string out = "'";
      for (char c : s)
        out += c == '\'' ? std::string("''") : std::string(1, c);
      return out + "'";
    }
    std::string operator()(const ArgList &list) const {
      std::string out = "[";
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (i)
          out += ", ";
        out += emit_arg(list[i]);
      }
      return out + "]";
    }
  };
  return std::visit(Visitor{}, arg.value);
}

std::string emit_layer(const Layer &layer) {
  std::string from;
  if (layer.multi_input) {
    from = "[";
    for (std::size_t i = 0; i < layer.from.size(); ++i)
      from += (i ? ", " : "") + std::to_string(layer.from[i]);
    from += "]";
  } else {
    from = std::to_string(layer.from.front());
  }
  return "[" + from + ", " + std::to_string(layer.number) + ", " + layer.module + ", " +
         emit_arg(Arg{layer.args}) + "]";
}

} // namespace

ModelSpec parse_model_spec(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception &e) {
    throw ModelSpecError(std::string("model spec: ") + e.what());
  }
  if (!root.IsMap())
    throw ModelSpecError("model spec must be a mapping");

  ModelSpec spec;
  spec.nc = parse_int(root["nc"], "model spec", "nc");
  if (spec.nc < 1)
    throw ModelSpecError("model spec: nc must be positive");
  if (auto d = root["depth_multiple"])
    spec.depth_multiple = parse_real(d, "depth_multiple");
  if (auto w = root["width_multiple"])
    spec.width_multiple = parse_real(w, "width_multiple");

  if (auto anchors = root["anchors"]; anchors && !anchors.IsNull()) {
    if (!anchors.IsSequence())
      throw ModelSpecError("anchors must be a list of per-stride rows");
    int stride = 8;
    for (const auto &row : anchors) {
      if (!row.IsSequence() || row.size() == 0 || row.size() % 2 != 0)
        throw ModelSpecError("each anchor row needs an even number of values");
      dataset::StrideGroup group{stride, {}};
      for (std::size_t i = 0; i < row.size(); i += 2)
        group.anchors.push_back({parse_real(row[i], "anchor"), parse_real(row[i + 1], "anchor")});
      spec.anchors.groups.push_back(std::move(group));
      stride *= 2;
    }
  }

  spec.backbone = parse_section(root["backbone"], "backbone", 0);
  spec.head = parse_section(root["head"], "head", spec.backbone.size());
  check_references(spec.layers());
  return spec;
}

std::string emit_model_spec(const ModelSpec &spec) {
  std::string out;
  out += "nc: " + std::to_string(spec.nc) + "\n";
  out += "depth_multiple: " + emit_real(spec.depth_multiple) + "\n";
  out += "width_multiple: " + emit_real(spec.width_multiple) + "\n";
  out += "anchors:\n";
  for (const auto &g : spec.anchors.groups) {
    out += "  - [";
    for (std::size_t i = 0; i < g.anchors.size(); ++i) {
      if (i)
        out += ", ";
      out += emit_real(g.anchors[i].width) + ", " + emit_real(g.anchors[i].height);
    }
    out += "]  # P" + std::to_string(static_cast<int>(std::log2(g.stride))) + "/" +
           std::to_string(g.stride) + "\n";
  }
  std::size_t index = 0;
  auto section = [&](const char *name, const std::vector<Layer> &layers) {
    out += std::string(name) + ":\n  # [from, number, module, args]\n";
    for (const auto &layer : layers)
      out += "  - " + emit_layer(layer) + "  # " + std::to_string(index++) + "\n";
  };
  section("backbone", spec.backbone);
  section("head", spec.head);
  return out;
}

// ---------------------------------------------------------------------------
// Variants and scaling

void validate(const Variant &v) {
  auto ok = [](double m) { return m > 0.0 && m <= 1.5; };
  if (!ok(v.depth_multiple) || !ok(v.width_multiple))
    throw std::invalid_argument("variant '" + v.name + "': multiples must lie in (0, 1.5]");
}

std::vector<Variant> variant_presets() {
  return {{"yolov5s", 0.33, 0.50}, {"yolov5m", 0.67, 0.75}, {"yolov5l", 1.0, 1.0}};
}

Variant variant_preset(std::string_view name) {
  static const std::map<std::string, std::string, std::less<>> aliases{
      {"s", "yolov5s"},     {"small", "yolov5s"},  {"yolov5s", "yolov5s"},
      {"m", "yolov5m"},     {"medium", "yolov5m"}, {"yolov5m", "yolov5m"},
      {"l", "yolov5l"},     {"large", "yolov5l"},  {"yolov5l", "yolov5l"},
  };
  auto it = aliases.find(name);
  if (it == aliases.end())
    throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
  for (const auto &v : variant_presets())
    if (v.name == it->second)
      return v;
  throw std::logic_error("preset table out of sync");
}

int scale_depth(int repeats, double depth_multiple) {
  if (repeats < 1)
    throw std::invalid_argument("repeat count must be at least 1");
  if (!(depth_multiple > 0.0))
    throw std::invalid_argument("depth multiple must be positive");
  double scaled = std::nearbyint(static_cast<double>(repeats) * depth_multiple);
  return std::max(static_cast<int>(scaled), 1);
}

int scale_width(int channels, double width_multiple, int divisor) {
  if (channels < 1 || divisor < 1)
    throw std::invalid_argument("channels and divisor must be positive");
  if (!(width_multiple > 0.0))
    throw std::invalid_argument("width multiple must be positive");
  double target = static_cast<double>(channels) * width_multiple;
  // Guard against 48.000000000000004-style products rounding up a step.
  auto steps = static_cast<int>(std::ceil(target / divisor - 1e-9));
  return std::max(steps, 1) * divisor;
}

// ---------------------------------------------------------------------------
// Parameter estimate

namespace {

std::int64_t conv(std::int64_t k, std::int64_t cin, std::int64_t cout) {
  return k * k * cin * cout + cout;
}

std::int64_t bottleneck(std::int64_t c) { return conv(1, c, c) + conv(3, c, c); }

std::optional<std::int64_t> int_arg(const ArgList &args, std::size_t i) {
  if (i >= args.size())
    return std::nullopt;
  if (auto v = std::get_if<std::int64_t>(&args[i].value))
    return *v;
  return std::nullopt;
}

std::string base_module(const std::string &module) {
  auto dot = module.rfind('.');
  return dot == std::string::npos ? module : module.substr(dot + 1);
}

} // namespace

ParamEstimate estimate_params(const ModelSpec &spec, const Variant &variant,
                              int input_channels) {
  validate(variant);
  if (input_channels < 1)
    throw std::invalid_argument("input channels must be positive");
  auto layers = spec.layers();
  check_references(layers);

  ParamEstimate est;
  std::vector<int> out_ch;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer &layer = layers[i];
    LayerParams lp;
    lp.index = i;
    lp.module = layer.module;
    for (int f : layer.from)
      lp.from.push_back(resolve_from(f, i));
    auto channels_of = [&](int idx) { return idx < 0 ? input_channels : out_ch[static_cast<std::size_t>(idx)]; };
    const std::int64_t c1 = channels_of(lp.from.front());
    lp.in_channels = static_cast<int>(c1);
    lp.repeats = scale_depth(layer.number, variant.depth_multiple);
    const std::string m = base_module(layer.module);

    auto scaled_c2 = [&]() -> std::int64_t {
      auto c2 = int_arg(layer.args, 0);
      if (!c2 || *c2 < 1)
        throw ModelSpecError("layer " + std::to_string(i) + ": " + layer.module +
                             " needs an output channel count");
      return scale_width(static_cast<int>(*c2), variant.width_multiple);
    };

    std::int64_t c2 = c1;
    std::int64_t params = 0;
    if (m == "Conv" || m == "DWConv") {
      c2 = scaled_c2();
      std::int64_t k = int_arg(layer.args, 1).value_or(1);
      params = conv(k, c1, c2) * lp.repeats;
    } else if (m == "Focus") {
      c2 = scaled_c2();
      std::int64_t k = int_arg(layer.args, 1).value_or(1);
      params = conv(k, 4 * c1, c2) * lp.repeats;
    } else if (m == "Bottleneck") {
      c2 = scaled_c2();
      params = (conv(1, c1, c2 / 2) + conv(3, c2 / 2, c2)) * lp.repeats;
    } else if (m == "BottleneckCSP") {
      c2 = scaled_c2();
      std::int64_t h = c2 / 2;
      params = conv(1, c1, h) + c1 * h + h * h + conv(1, 2 * h, c2) + 2 * (2 * h) +
               lp.repeats * bottleneck(h);
    } else if (m == "C3") {
      c2 = scaled_c2();
      std::int64_t h = c2 / 2;
      params = 2 * conv(1, c1, h) + conv(1, 2 * h, c2) + lp.repeats * bottleneck(h);
    } else if (m == "SPP") {
      c2 = scaled_c2();
      std::int64_t h = c1 / 2;
      std::int64_t pools = 3;
      if (layer.args.size() > 1)
        if (auto list = std::get_if<ArgList>(&layer.args[1].value))
          pools = static_cast<std::int64_t>(list->size());
      params = conv(1, c1, h) + conv(1, h * (pools + 1), c2);
    } else if (m == "SPPF") {
      c2 = scaled_c2();
      std::int64_t h = c1 / 2;
      params = conv(1, c1, h) + conv(1, 4 * h, c2);
    } else if (m == "Concat") {
      c2 = 0;
      for (int f : lp.from)
        c2 += channels_of(f);
    } else if (m == "Upsample") {
      c2 = c1;
    } else if (m == "Detect") {
      std::int64_t per_level = 3;
      if (!spec.anchors.groups.empty())
        per_level = static_cast<std::int64_t>(spec.anchors.groups.front().anchors.size());
      std::int64_t nc = spec.nc;
      if (auto n = int_arg(layer.args, 0))
        nc = *n;
      std::int64_t outputs = per_level * (nc + 5);
      for (int f : lp.from)
        params += conv(1, channels_of(f), outputs);
      c2 = outputs;
    } else {
      lp.counted = false;
      if (std::find(est.uncounted_modules.begin(), est.uncounted_modules.end(),
                    layer.module) == est.uncounted_modules.end())
        est.uncounted_modules.push_back(layer.module);
    }
    lp.out_channels = static_cast<int>(c2);
    lp.params = params;
    est.total += params;
    out_ch.push_back(static_cast<int>(c2));
    est.layers.push_back(std::move(lp));
  }
  return est;
}

std::string to_text(const ParamEstimate &est) {
  std::vector<std::vector<std::string>> rows;
  for (const auto &l : est.layers) {
    std::string from;
    for (std::size_t i = 0; i < l.from.size(); ++i)
      from += (i ? "," : "") + std::to_string(l.from[i]);
    rows.push_back({std::to_string(l.index), from, std::to_string(l.repeats), l.module,
                    std::to_string(l.in_channels), std::to_string(l.out_channels),
                    l.counted ? std::to_string(l.params) : "?"});
  }
  std::string out =
      detail::render_table({"layer", "from", "n", "module", "c_in", "c_out", "params"}, rows);
  out += "total parameters: " + std::to_string(est.total) + "\n";
  if (!est.uncounted_modules.empty()) {
    out += "not counted:";
    for (const auto &m : est.uncounted_modules)
      out += " " + m;
    out += "\n";
  }
  return out;
}

std::string to_json(const ParamEstimate &est) {
  nlohmann::ordered_json j;
  j["total"] = est.total;
  j["uncounted_modules"] = est.uncounted_modules;
  auto layers = nlohmann::ordered_json::array();
  for (const auto &l : est.layers)
    layers.push_back({{"index", l.index},
                      {"from", l.from},
                      {"repeats", l.repeats},
                      {"module", l.module},
                      {"in_channels", l.in_channels},
                      {"out_channels", l.out_channels},
                      {"params", l.params},
                      {"counted", l.counted}});
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

std::string to_csv(const ParamEstimate &est) {
  std::string out = "layer,from,repeats,module,in_channels,out_channels,params,counted\n";
  for (const auto &l : est.layers) {
    std::string from;
    for (std::size_t i = 0; i < l.from.size(); ++i)
      from += (i ? " " : "") + std::to_string(l.from[i]);
    out += std::to_string(l.index) + "," + from + "," + std::to_string(l.repeats) + "," +
           l.module + "," + std::to_string(l.in_channels) + "," +
           std::to_string(l.out_channels) + "," + std::to_string(l.params) + "," +
           (l.counted ? "true" : "false") + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ranking

std::vector<ResultRow> rank_variants(std::vector<ResultRow> rows, RankPolicy policy,
                                     std::optional<std::int64_t> param_budget) {
  if (policy == RankPolicy::Efficiency) {
    if (!param_budget)
      throw std::invalid_argument("efficiency ranking needs a parameter budget");
    std::erase_if(rows, [&](const ResultRow &r) { return r.params > *param_budget; });
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow &a, const ResultRow &b) {
    if (a.map != b.map)
      return a.map > b.map;
    if (a.params != b.params)
      return a.params < b.params;
    return a.epochs < b.epochs;
  });
  return rows;
}

} // namespace signdet::modelcfg
