#include "signdet/annoserve.hpp"

#include <algorithm>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

#include "signdet/io.hpp"

namespace signdet::annoserve {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Image headers

namespace {

unsigned byte_at(std::string_view b, std::size_t i) { return static_cast<unsigned char>(b[i]); }

std::uint32_t be16(std::string_view b, std::size_t i) { return byte_at(b, i) << 8 | byte_at(b, i + 1); }
std::uint32_t be32(std::string_view b, std::size_t i) { return be16(b, i) << 16 | be16(b, i + 2); }
std::uint32_t le16(std::string_view b, std::size_t i) { return byte_at(b, i) | byte_at(b, i + 1) << 8; }
std::uint32_t le32(std::string_view b, std::size_t i) { return le16(b, i) | le16(b, i + 2) << 16; }

std::optional<ImageSize> jpeg_size(std::string_view b) {
  std::size_t pos = 2;
  while (pos + 4 <= b.size()) {
    if (byte_at(b, pos) != 0xFF)
      return std::nullopt;
    unsigned marker = byte_at(b, pos + 1);
    if (marker == 0xFF) { // fill byte
      ++pos;
      continue;
    }
    if (marker == 0x01 || (marker >= 0xD0 && marker <= 0xD9)) {
      pos += 2;
      continue;
    }
    std::size_t length = be16(b, pos + 2);
    bool sof = marker >= 0xC0 && marker <= 0xCF && marker != 0xC4 && marker != 0xC8 &&
               marker != 0xCC;
    if (sof) {
      if (pos + 9 > b.size())
        return std::nullopt;
      return ImageSize{static_cast<int>(be16(b, pos + 7)), static_cast<int>(be16(b, pos + 5))};
    }
    pos += 2 + length;
  }
  return std::nullopt;
}

} // namespace

std::optional<ImageSize> read_image_size(std::string_view b) {
  if (b.size() >= 24 && b.substr(0, 8) == std::string_view("\x89PNG\r\n\x1a\n", 8) &&
      b.substr(12, 4) == "IHDR")
    return ImageSize{static_cast<int>(be32(b, 16)), static_cast<int>(be32(b, 20))};
  if (b.size() >= 4 && byte_at(b, 0) == 0xFF && byte_at(b, 1) == 0xD8)
    return jpeg_size(b);
  if (b.size() >= 10 && (b.substr(0, 6) == "GIF87a" || b.substr(0, 6) == "GIF89a"))
    return ImageSize{static_cast<int>(le16(b, 6)), static_cast<int>(le16(b, 8))};
  if (b.size() >= 26 && b.substr(0, 2) == "BM") {
    auto w = static_cast<std::int32_t>(le32(b, 18));
    auto h = static_cast<std::int32_t>(le32(b, 22));
    return ImageSize{std::abs(w), std::abs(h)}; // negative height = top-down rows
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Store

AnnotationStore::AnnotationStore(fs::path root, labelfmt::ClassTable classes)
    : classes_(std::move(classes)) {
  std::error_code ec;
  if (!fs::is_directory(root, ec))
    throw std::runtime_error("dataset root is not a directory: '" + root.string() + "'");
  image_dir_ = fs::is_directory(root / "images", ec) ? root / "images" : root;
  label_dir_ = io::label_dir_for(image_dir_);
  if (label_dir_ == image_dir_ && image_dir_ != root)
    label_dir_ = root / "labels";

  for (const auto &file : io::list_files(image_dir_, io::image_extensions())) {
    ImageInfo info;
    info.id = file.stem().string();
    info.file = file;
    std::string bytes = io::read_text(file);
    info.size = read_image_size(bytes);
    if (index_.count(info.id))
      throw std::runtime_error("two images share the id '" + info.id + "'");
    index_[info.id] = images_.size();
    images_.push_back(std::move(info));
    slots_.push_back(std::make_unique<Slot>());
  }
}

const ImageInfo *AnnotationStore::find(const std::string &id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &images_[it->second];
}

fs::path AnnotationStore::label_path(const std::string &id) const {
  return label_dir_ / (id + ".txt");
}

std::optional<LabelDocument> AnnotationStore::get(const std::string &id) const {
  auto it = index_.find(id);
  if (it == index_.end())
    return std::nullopt;
  LabelDocument doc;
  doc.image_id = id;
  {
    // Reading under the slot lock keeps revision and content consistent.
    std::lock_guard lock(slots_[it->second]->mutex);
    doc.revision = slots_[it->second]->revision;
    std::error_code ec;
    fs::path file = label_path(id);
    if (fs::exists(file, ec))
      doc.annotations = labelfmt::parse_label_file(io::read_text(file));
  }
  return doc;
}

PutResult AnnotationStore::put(const std::string &id, const std::vector<Annotation> &annotations,
                               std::optional<std::uint64_t> expected_revision) {
  PutResult result;
  auto it = index_.find(id);
  if (it == index_.end()) {
    result.status = PutStatus::NotFound;
    return result;
  }
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    std::string prefix = "annotations[" + std::to_string(i) + "].";
    if (!classes_.contains(annotations[i].class_id))
      result.issues.push_back({prefix + "class_id", "not a known class index"});
    for (auto &issue : labelfmt::check_box(annotations[i].box))
      result.issues.push_back({prefix + issue.field, issue.reason});
  }
  if (!result.issues.empty()) {
    result.status = PutStatus::Invalid;
    return result;
  }
  Slot &slot = *slots_[it->second];
  std::lock_guard lock(slot.mutex);
  if (expected_revision && *expected_revision != slot.revision) {
    result.status = PutStatus::Conflict;
    result.revision = slot.revision;
    return result;
  }
  io::write_atomic(label_path(id), labelfmt::emit_label_file(annotations));
  result.revision = ++slot.revision;
  return result;
}

Progress AnnotationStore::progress() const {
  Progress p;
  p.images = images_.size();
  for (const auto &img : images_) {
    std::error_code ec;
    if (fs::exists(label_path(img.id), ec))
      ++p.labeled;
  }
  p.unlabeled = p.images - p.labeled;
  return p;
}

// ---------------------------------------------------------------------------
// Request bodies

std::variant<PutRequest, std::vector<labelfmt::FieldIssue>>
parse_put_body(std::string_view body, const labelfmt::ClassTable &classes) {
  std::vector<labelfmt::FieldIssue> issues;
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded())
    return std::vector<labelfmt::FieldIssue>{{"", "body is not valid JSON"}};
  if (!j.is_object())
    return std::vector<labelfmt::FieldIssue>{{"", "body must be a JSON object"}};

  PutRequest req;
  if (auto it = j.find("revision"); it != j.end() && !it->is_null()) {
    if (it->is_number_unsigned())
      req.revision = it->get<std::uint64_t>();
    else
      issues.push_back({"revision", "must be a non-negative integer"});
  }
  auto anns = j.find("annotations");
  if (anns == j.end() || !anns->is_array()) {
    issues.push_back({"annotations", "must be an array"});
    return issues;
  }
  for (std::size_t i = 0; i < anns->size(); ++i) {
    const auto &a = (*anns)[i];
    std::string prefix = "annotations[" + std::to_string(i) + "]";
    if (!a.is_object()) {
      issues.push_back({prefix, "must be an object"});
      continue;
    }
    Annotation ann;
    bool complete = true;
    auto cid = a.find("class_id");
    if (cid == a.end() || !cid->is_number_integer()) {
      issues.push_back({prefix + ".class_id", "must be an integer"});
      complete = false;
    } else {
      auto v = cid->get<std::int64_t>();
      if (v < 0 || v >= static_cast<std::int64_t>(classes.size())) {
        issues.push_back({prefix + ".class_id", "not a known class index"});
        complete = false;
      } else {
        ann.class_id = static_cast<int>(v);
      }
    }
    std::pair<const char *, double *> fields[] = {
        {"cx", &ann.box.cx}, {"cy", &ann.box.cy}, {"w", &ann.box.w}, {"h", &ann.box.h}};
    bool numeric = true;
    for (auto &[name, dst] : fields) {
      auto f = a.find(name);
      if (f == a.end() || !f->is_number()) {
        issues.push_back({prefix + "." + name, "must be a number"});
        numeric = false;
      } else {
        *dst = f->get<double>();
      }
    }
    if (numeric)
      for (auto &issue : labelfmt::check_box(ann.box))
        issues.push_back({prefix + "." + issue.field, issue.reason});
    else
      complete = false;
    if (complete)
      req.annotations.push_back(ann);
  }
  if (!issues.empty())
    return issues;
  return req;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

ordered_json document_json(const LabelDocument &doc) {
  ordered_json anns = ordered_json::array();
  for (const auto &a : doc.annotations)
    anns.push_back({{"class_id", a.class_id},
                    {"cx", a.box.cx},
                    {"cy", a.box.cy},
                    {"w", a.box.w},
                    {"h", a.box.h}});
  return {{"image_id", doc.image_id}, {"revision", doc.revision}, {"annotations", anns}};
}

void send_json(httplib::Response &res, int status, const ordered_json &body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response &res, int status, const std::string &message,
                const std::vector<labelfmt::FieldIssue> &issues = {}) {
  ordered_json body{{"error", message}};
  if (!issues.empty()) {
    ordered_json list = ordered_json::array();
    for (const auto &i : issues)
      list.push_back({{"field", i.field}, {"reason", i.reason}});
    body["issues"] = list;
  }
  send_json(res, status, body);
}

const char *content_type(const fs::path &file) {
  std::string ext = file.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".webp") return "image/webp";
  if (ext == ".tif" || ext == ".tiff") return "image/tiff";
  return "application/octet-stream";
}

} // namespace

void install_routes(httplib::Server &server, AnnotationStore &store,
                    const std::optional<fs::path> &ui_dir) {
  server.Get("/api/classes", [&store](const httplib::Request &, httplib::Response &res) {
    ordered_json out = ordered_json::array();
    for (const auto &e : store.classes().entries())
      out.push_back({{"index", e.index}, {"gloss", e.gloss}, {"name", e.name}});
    send_json(res, 200, out);
  });

  server.Get("/api/images", [&store](const httplib::Request &, httplib::Response &res) {
    ordered_json out = ordered_json::array();
    for (const auto &img : store.images()) {
      ordered_json item{{"id", img.id}, {"file", img.file.filename().string()}};
      item["width"] = img.size ? ordered_json(img.size->width) : ordered_json(nullptr);
      item["height"] = img.size ? ordered_json(img.size->height) : ordered_json(nullptr);
      std::error_code ec;
      item["labeled"] = fs::exists(store.label_path(img.id), ec);
      out.push_back(std::move(item));
    }
    send_json(res, 200, out);
  });

  server.Get(R"(/api/images/([^/]+))", [&store](const httplib::Request &req, httplib::Response &res) {
    const ImageInfo *img = store.find(req.matches[1]);
    if (!img)
      return send_error(res, 404, "unknown image id");
    try {
      res.set_content(io::read_text(img->file), content_type(img->file));
    } catch (const std::exception &e) {
      send_error(res, 500, e.what());
    }
  });

  server.Get(R"(/api/labels/([^/]+))", [&store](const httplib::Request &req, httplib::Response &res) {
    try {
      auto doc = store.get(req.matches[1]);
      if (!doc)
        return send_error(res, 404, "unknown image id");
      send_json(res, 200, document_json(*doc));
    } catch (const std::exception &e) {
      send_error(res, 500, e.what());
    }
  });

  server.Put(R"(/api/labels/([^/]+))", [&store](const httplib::Request &req, httplib::Response &res) {
    std::string id = req.matches[1];
    if (!store.find(id))
      return send_error(res, 404, "unknown image id");
    auto parsed = parse_put_body(req.body, store.classes());
    if (auto *issues = std::get_if<std::vector<labelfmt::FieldIssue>>(&parsed))
      return send_error(res, 422, "invalid annotation body", *issues);
    auto &body = std::get<PutRequest>(parsed);
    try {
      PutResult result = store.put(id, body.annotations, body.revision);
      switch (result.status) {
      case PutStatus::Ok:
        send_json(res, 200, document_json({id, body.annotations, result.revision}));
        break;
      case PutStatus::NotFound:
        send_error(res, 404, "unknown image id");
        break;
      case PutStatus::Invalid:
        send_error(res, 422, "invalid annotation body", result.issues);
        break;
      case PutStatus::Conflict: {
        ordered_json out{{"error", "stale revision"}, {"revision", result.revision}};
        send_json(res, 409, out);
        break;
      }
      }
    } catch (const std::exception &e) {
      send_error(res, 500, e.what());
    }
  });

  server.Get("/api/progress", [&store](const httplib::Request &, httplib::Response &res) {
    Progress p = store.progress();
    send_json(res, 200, {{"images", p.images}, {"labeled", p.labeled}, {"unlabeled", p.unlabeled}});
  });

  if (ui_dir && !server.set_mount_point("/", ui_dir->string()))
    throw std::runtime_error("cannot serve UI from '" + ui_dir->string() + "'");
}

Service::Service(AnnotationStore &store, const std::string &host, int port,
                 std::optional<fs::path> ui_dir)
    : server_(std::make_unique<httplib::Server>()) {
  install_routes(*server_, store, ui_dir);
  if (port == 0)
    port_ = server_->bind_to_any_port(host);
  else
    port_ = server_->bind_to_port(host, port) ? port : -1;
  if (port_ <= 0)
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

Service::~Service() {
  stop();
  wait();
}

void Service::stop() { server_->stop(); }

void Service::wait() {
  if (thread_.joinable())
    thread_.join();
}

} // namespace signdet::annoserve
