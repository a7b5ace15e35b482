#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "signdet/box.hpp"
#include "signdet/labelfmt.hpp"

namespace httplib {
class Server;
}

namespace signdet::annoserve {

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// Pixel size from the PNG, JPEG, BMP or GIF header; nullopt for anything else.
std::optional<ImageSize> read_image_size(std::string_view bytes);

struct ImageInfo {
  std::string id; // file stem
  std::filesystem::path file;
  std::optional<ImageSize> size;
};

struct LabelDocument {
  std::string image_id;
  std::vector<Annotation> annotations;
  std::uint64_t revision = 0;
};

struct Progress {
  std::size_t images = 0;
  std::size_t labeled = 0;   // a label file exists, possibly empty
  std::size_t unlabeled = 0;
};

enum class PutStatus { Ok, NotFound, Invalid, Conflict };

struct PutResult {
  PutStatus status = PutStatus::Ok;
  std::uint64_t revision = 0; // new revision on Ok, current one on Conflict
  std::vector<labelfmt::FieldIssue> issues; // field paths like "annotations[0].cx"
};

/// Images under `<root>/images` (or `root` itself when that is absent) and
/// labels in the sibling `labels` directory. Image sizes are read once; label
/// files are read on every request so edits made on disk show up.
///
/// Revisions live in memory, start at 0 for every image and go up by one per
/// successful put. Writes to one image are serialized.
class AnnotationStore {
public:
  AnnotationStore(std::filesystem::path root, labelfmt::ClassTable classes);

  const labelfmt::ClassTable &classes() const { return classes_; }
  const std::vector<ImageInfo> &images() const { return images_; }
  const ImageInfo *find(const std::string &id) const;

  std::filesystem::path label_path(const std::string &id) const;

  /// nullopt for an unknown id. Throws labelfmt::LabelError if the file on
  /// disk does not parse.
  std::optional<LabelDocument> get(const std::string &id) const;

  /// Replaces the image's labels. With `expected_revision` set the write only
  /// happens if it matches the current revision.
  PutResult put(const std::string &id, const std::vector<Annotation> &annotations,
                std::optional<std::uint64_t> expected_revision = std::nullopt);

  Progress progress() const;

private:
  struct Slot {
    std::mutex mutex;
    std::uint64_t revision = 0;
  };

  std::filesystem::path image_dir_;
  std::filesystem::path label_dir_;
  labelfmt::ClassTable classes_;
  std::vector<ImageInfo> images_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::unique_ptr<Slot>> slots_;
};

/// Validates a PUT body: {"revision"?: int, "annotations": [{class_id, cx, cy, w, h}]}.
struct PutRequest {
  std::optional<std::uint64_t> revision;
  std::vector<Annotation> annotations;
};

/// Parses and checks the JSON body against the class table and the strict
/// label rules. Problems are returned as field issues; nothing is thrown.
std::variant<PutRequest, std::vector<labelfmt::FieldIssue>>
parse_put_body(std::string_view body, const labelfmt::ClassTable &classes);

/// Installs the /api routes, plus a static mount at "/" when `ui_dir` is set.
void install_routes(httplib::Server &server, AnnotationStore &store,
                    const std::optional<std::filesystem::path> &ui_dir = std::nullopt);

/// An HTTP server running on a background thread.
class Service {
public:
  /// Port 0 picks a free port.
  Service(AnnotationStore &store, const std::string &host, int port,
          std::optional<std::filesystem::path> ui_dir = std::nullopt);
  ~Service();
  Service(const Service &) = delete;
  Service &operator=(const Service &) = delete;

  int port() const { return port_; }
  void stop();
  /// Blocks until the server stops.
  void wait();

private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

} // namespace signdet::annoserve
