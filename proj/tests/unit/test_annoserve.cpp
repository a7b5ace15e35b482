#include <atomic>
#include <thread>

#include <gtest/gtest.h>

#include "httplib.h"
#include "json.hpp"

#include "signdet/annoserve.hpp"
#include "signdet/io.hpp"
#include "signdet/labelfmt.hpp"

#include "../support/temp_dir.hpp"

using namespace signdet;
using namespace signdet::annoserve;
using nlohmann::json;

namespace {

std::string be32(std::uint32_t v) {
  return {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
}

std::string le(std::uint32_t v, int bytes) {
  std::string s;
  for (int i = 0; i < bytes; ++i)
    s += char(v >> (8 * i));
  return s;
}

std::string png(std::uint32_t w, std::uint32_t h) {
  return std::string("\x89PNG\r\n\x1a\n", 8) + be32(13) + "IHDR" + be32(w) + be32(h) +
         std::string("\x08\x02\x00\x00\x00", 5);
}

std::string jpeg(int w, int h) {
  std::string s("\xFF\xD8", 2);
  s += std::string("\xFF\xE0\x00\x04\x00\x00", 6); // APP0 with 2 payload bytes
  s += std::string("\xFF\xC0\x00\x0B\x08", 5);
  s += char(h >> 8);
  s += char(h);
  s += char(w >> 8);
  s += char(w);
  s += std::string("\x01\x01\x11\x00", 4);
  return s;
}

// Dataset with three images and one pre-existing label file.
struct Fixture {
  test::TempDir dir;
  Fixture() {
    dir.write("images/a.png", png(640, 480));
    dir.write("images/b.jpg", jpeg(320, 200));
    dir.write("images/c.png", png(10, 10));
    dir.write("labels/a.txt", "3 0.500000 0.500000 0.200000 0.300000\n");
  }
};

json box(int cls, double cx, double cy, double w, double h) {
  return {{"class_id", cls}, {"cx", cx}, {"cy", cy}, {"w", w}, {"h", h}};
}

} // namespace

TEST(ImageHeaders, Formats) {
  auto p = read_image_size(png(640, 480));
  ASSERT_TRUE(p);
  EXPECT_EQ(p->width, 640);
  EXPECT_EQ(p->height, 480);
  auto j = read_image_size(jpeg(320, 200));
  ASSERT_TRUE(j);
  EXPECT_EQ(j->width, 320);
  EXPECT_EQ(j->height, 200);
  auto g = read_image_size("GIF89a" + le(7, 2) + le(9, 2));
  ASSERT_TRUE(g);
  EXPECT_EQ(g->width, 7);
  EXPECT_EQ(g->height, 9);
  std::string bmp = "BM" + std::string(16, '\0') + le(12, 4) + le(static_cast<std::uint32_t>(-34), 4);
  auto b = read_image_size(bmp);
  ASSERT_TRUE(b);
  EXPECT_EQ(b->width, 12);
  EXPECT_EQ(b->height, 34);
  EXPECT_FALSE(read_image_size("not an image"));
}

TEST(Store, ListsImagesAndProgress) {
  Fixture f;
  AnnotationStore store(f.dir.path(), labelfmt::default_class_table());
  ASSERT_EQ(store.images().size(), 3u);
  EXPECT_EQ(store.images()[0].id, "a");
  EXPECT_EQ(store.images()[1].size->width, 320);
  auto pr = store.progress();
  EXPECT_EQ(pr.images, 3u);
  EXPECT_EQ(pr.labeled, 1u);
  EXPECT_EQ(pr.unlabeled, 2u);
}

TEST(Store, PutThenGet) {
  Fixture f;
  AnnotationStore store(f.dir.path(), labelfmt::default_class_table());
  auto before = store.get("b");
  ASSERT_TRUE(before);
  EXPECT_TRUE(before->annotations.empty());
  EXPECT_EQ(before->revision, 0u);

  std::vector<Annotation> boxes{{1, {0.25, 0.5, 0.1, 0.2}}, {11, {0.75, 0.5, 0.3, 0.3}}};
  auto r = store.put("b", boxes);
  EXPECT_EQ(r.status, PutStatus::Ok);
  EXPECT_EQ(r.revision, 1u);
  auto after = store.get("b");
  EXPECT_EQ(after->annotations, boxes);
  EXPECT_EQ(after->revision, 1u);

  // The file on disk re-parses under the strict rules to the same values.
  auto text = io::read_text(f.dir / "labels/b.txt");
  EXPECT_EQ(labelfmt::parse_label_file(text), boxes);
  EXPECT_EQ(store.progress().labeled, 2u);
}

TEST(Store, RejectsInvalidAndStale) {
  Fixture f;
  AnnotationStore store(f.dir.path(), labelfmt::default_class_table());
  EXPECT_EQ(store.put("zzz", {}).status, PutStatus::NotFound);

  auto bad = store.put("a", {{0, {1.2, 0.5, 0.1, 0.1}}});
  EXPECT_EQ(bad.status, PutStatus::Invalid);
  ASSERT_FALSE(bad.issues.empty());
  EXPECT_EQ(bad.issues[0].field, "annotations[0].cx");
  EXPECT_EQ(store.put("a", {{12, {0.5, 0.5, 0.1, 0.1}}}).status, PutStatus::Invalid);

  EXPECT_EQ(store.put("a", {}, 0).status, PutStatus::Ok);
  auto stale = store.put("a", {}, 0);
  EXPECT_EQ(stale.status, PutStatus::Conflict);
  EXPECT_EQ(stale.revision, 1u);
}

TEST(PutBody, ParsesAndReportsFields) {
  auto classes = labelfmt::default_class_table();
  json ok = {{"revision", 4}, {"annotations", {box(2, 0.5, 0.5, 0.2, 0.2)}}};
  auto r = parse_put_body(ok.dump(), classes);
  ASSERT_TRUE(std::holds_alternative<PutRequest>(r));
  EXPECT_EQ(*std::get<PutRequest>(r).revision, 4u);

  auto broken = parse_put_body("{", classes);
  ASSERT_TRUE(std::holds_alternative<std::vector<labelfmt::FieldIssue>>(broken));

  json missing = {{"annotations", {{{"class_id", 0}, {"cx", 0.5}}}}};
  auto m = parse_put_body(missing.dump(), classes);
  ASSERT_TRUE(std::holds_alternative<std::vector<labelfmt::FieldIssue>>(m));
  EXPECT_EQ(std::get<std::vector<labelfmt::FieldIssue>>(m)[0].field.rfind("annotations[0].", 0), 0u);
}

class Http : public ::testing::Test {
protected:
  Fixture fixture;
  AnnotationStore store{fixture.dir.path(), labelfmt::default_class_table()};
  Service service{store, "127.0.0.1", 0};

  httplib::Client client() { return httplib::Client("127.0.0.1", service.port()); }
};

TEST_F(Http, ClassesImagesProgress) {
  auto c = client();
  auto classes = c.Get("/api/classes");
  ASSERT_TRUE(classes);
  EXPECT_EQ(classes->status, 200);
  EXPECT_EQ(json::parse(classes->body).size(), 12u);

  auto images = json::parse(c.Get("/api/images")->body);
  ASSERT_EQ(images.size(), 3u);
  EXPECT_EQ(images[0]["id"], "a");
  EXPECT_EQ(images[0]["width"], 640);
  EXPECT_EQ(images[0]["labeled"], true);
  EXPECT_EQ(images[1]["labeled"], false);

  auto bytes = c.Get("/api/images/a");
  EXPECT_EQ(bytes->status, 200);
  EXPECT_EQ(bytes->body, png(640, 480));

  auto progress = json::parse(c.Get("/api/progress")->body);
  EXPECT_EQ(progress["labeled"], 1);
  EXPECT_EQ(progress["images"], 3);
}

TEST_F(Http, PutGetRoundTrip) {
  auto c = client();
  auto before = json::parse(c.Get("/api/labels/b")->body);
  EXPECT_EQ(before["revision"], 0);

  json body = {{"revision", 0}, {"annotations", {box(4, 0.123456, 0.5, 0.2, 0.3)}}};
  auto put = c.Put("/api/labels/b", body.dump(), "application/json");
  ASSERT_TRUE(put);
  EXPECT_EQ(put->status, 200);

  auto after = json::parse(c.Get("/api/labels/b")->body);
  EXPECT_EQ(after["revision"], 1);
  ASSERT_EQ(after["annotations"].size(), 1u);
  EXPECT_EQ(after["annotations"][0]["class_id"], 4);
  EXPECT_EQ(after["annotations"][0]["cx"].get<double>(), 0.123456);

  auto strict = labelfmt::parse_label_file(io::read_text(fixture.dir / "labels/b.txt"));
  ASSERT_EQ(strict.size(), 1u);
  EXPECT_EQ(strict[0].box.cx, 0.123456);
}

TEST_F(Http, ValidationErrorsAre422) {
  auto c = client();
  json body = {{"annotations", {box(0, 1.2, 0.5, 0.1, 0.1)}}};
  auto r = c.Put("/api/labels/a", body.dump(), "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 422);
  auto j = json::parse(r->body);
  EXPECT_EQ(j["issues"][0]["field"], "annotations[0].cx");
  // Nothing written.
  EXPECT_EQ(json::parse(c.Get("/api/labels/a")->body)["annotations"][0]["class_id"], 3);

  EXPECT_EQ(c.Put("/api/labels/a", "not json", "application/json")->status, 422);
}

TEST_F(Http, UnknownImageIs404) {
  auto c = client();
  EXPECT_EQ(c.Get("/api/labels/nope")->status, 404);
  EXPECT_EQ(c.Get("/api/images/nope")->status, 404);
  EXPECT_EQ(c.Put("/api/labels/nope", R"({"annotations":[]})", "application/json")->status, 404);
}

TEST_F(Http, ConcurrentStalePutsYieldOneConflict) {
  for (int round = 0; round < 10; ++round) {
    std::uint64_t rev = json::parse(client().Get("/api/labels/c")->body)["revision"];
    std::atomic<int> ok{0}, conflict{0};
    auto worker = [&](int cls) {
      json body = {{"revision", rev}, {"annotations", {box(cls, 0.5, 0.5, 0.2, 0.2)}}};
      auto r = client().Put("/api/labels/c", body.dump(), "application/json");
      if (r && r->status == 200)
        ++ok;
      else if (r && r->status == 409)
        ++conflict;
    };
    std::thread t1(worker, 1), t2(worker, 2);
    t1.join();
    t2.join();
    EXPECT_EQ(ok.load(), 1);
    EXPECT_EQ(conflict.load(), 1);
  }
  EXPECT_EQ(json::parse(client().Get("/api/labels/c")->body)["revision"], 10);
}
