#include <gtest/gtest.h>

#include <cstdlib>

#include "annotrack/project.hpp"
#include "test_util.hpp"

using namespace annotrack;
namespace fs = std::filesystem;

namespace {

synth::SceneSpec small_scene() {
  synth::SceneSpec s;
  s.name = "small";
  s.width = 96;
  s.height = 72;
  s.frame_count = 12;
  s.seed = 5;
  s.blobs = {{"blob_0", synth::Shape::Ellipse, 8, 6, {255, 85, 0}, 30, 30, 2, 1, synth::Motion::Bounce, 0, true, {}},
             {"blob_1", synth::Shape::Rectangle, 6, 6, {85, 170, 255}, 70, 45, -1, 0, synth::Motion::Bounce, 0, true, {}}};
  return s;
}

// Bitwise CRC-32 (IEEE, reflected), independent of zlib.
std::uint32_t crc32_bitwise(const std::string& s) {
  std::uint32_t c = 0xffffffffu;
  for (unsigned char b : s) {
    c ^= b;
    for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xedb88320u & (0u - (c & 1u)));
  }
  return ~c;
}

std::uint32_t rd16(const std::string& s, std::size_t at) {
  return static_cast<unsigned char>(s[at]) | (static_cast<unsigned char>(s[at + 1]) << 8);
}
std::uint32_t rd32(const std::string& s, std::size_t at) { return rd16(s, at) | (rd16(s, at + 2) << 16); }

// Walks the central directory and returns name -> stored bytes.
std::map<std::string, std::string> read_zip(const std::string& z) {
  std::map<std::string, std::string> out;
  const std::size_t eocd = z.size() - 22;
  EXPECT_EQ(rd32(z, eocd), 0x06054b50u);
  const auto entries = rd16(z, eocd + 10);
  std::size_t at = rd32(z, eocd + 16);
  for (std::uint32_t i = 0; i < entries; ++i) {
    EXPECT_EQ(rd32(z, at), 0x02014b50u);
    const auto method = rd16(z, at + 10), crc = rd32(z, at + 16), size = rd32(z, at + 24);
    const auto name_len = rd16(z, at + 28), local = rd32(z, at + 42);
    EXPECT_EQ(method, 0u);
    const auto name = z.substr(at + 46, name_len);
    EXPECT_EQ(rd32(z, local), 0x04034b50u);
    const auto local_name_len = rd16(z, local + 26), extra = rd16(z, local + 28);
    EXPECT_EQ(z.substr(local + 30, local_name_len), name);
    const auto data = z.substr(local + 30 + local_name_len + extra, size);
    EXPECT_EQ(crc32_bitwise(data), crc) << name;
    out[name] = data;
    at += 46 + name_len;
  }
  return out;
}

std::string slurp(const fs::path& p) { return io::read_text(p); }

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST(Params, JsonRoundtrip) {
  AdvancedParams p;
  p.epsilon = 3.5;
  p.mem_every = 2;
  p.auto_pause = false;
  p.search_radius = 20;
  const auto q = project::params_from_json(project::to_json(p));
  EXPECT_EQ(project::to_json(q), project::to_json(p));
}

TEST(Params, PartialJsonKeepsBase) {
  AdvancedParams base;
  base.t_max = 9;
  const auto p = project::params_from_json({{"epsilon", 4.0}}, base);
  EXPECT_DOUBLE_EQ(p.epsilon, 4.0);
  EXPECT_EQ(p.t_max, 9);
}

TEST(Params, JsonErrors) {
  auto kind = [](const nlohmann::json& j) {
    try {
      project::params_from_json(j);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  EXPECT_EQ(kind({{"bogus", 1}}), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind({{"epsilon", "wide"}}), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind({{"mem_every", 0}}), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind(nlohmann::json::array()), ErrorKind::InvalidArgument);
}

TEST(Export, FormatNames) {
  EXPECT_EQ(project::parse_format("tracking_csv"), project::ExportFormat::TrackingCsv);
  EXPECT_EQ(project::parse_format("tracked_csv"), project::ExportFormat::TrackedCsv);
  EXPECT_EQ(project::parse_format("labelme_zip"), project::ExportFormat::LabelMeZip);
  EXPECT_THROW(project::parse_format("coco"), Error);
  EXPECT_EQ(project::export_file_name("mouse", project::ExportFormat::TrackingCsv), "mouse_tracking.csv");
  EXPECT_EQ(project::export_file_name("mouse", project::ExportFormat::TrackedCsv), "mouse_tracked.csv");
  EXPECT_EQ(project::export_file_name("mouse", project::ExportFormat::LabelMeZip), "mouse_labelme.zip");
}

TEST(Zip, StructureAndCrc) {
  const std::vector<std::pair<std::string, std::string>> entries = {
      {"a.json", "{\"x\": 1}\n"}, {"empty.txt", ""}, {"b.bin", std::string("\0\xff\x10z", 4)}};
  const auto z = project::zip_store(entries);
  const auto files = read_zip(z);
  ASSERT_EQ(files.size(), 3u);
  for (const auto& [name, data] : entries) EXPECT_EQ(files.at(name), data);
  EXPECT_EQ(crc32_bitwise("123456789"), 0xcbf43926u);
  EXPECT_EQ(project::zip_store(entries), z);
}

TEST(Zip, EmptyArchive) {
  const auto z = project::zip_store({});
  EXPECT_EQ(z.size(), 22u);
  EXPECT_TRUE(read_zip(z).empty());
}

TEST(Zip, PythonReadsArchive) {
  if (std::system("python3 -c 'import zipfile' > /dev/null 2>&1") != 0) GTEST_SKIP() << "no python3";
  const auto dir = testutil::temp_dir("zip_py");
  io::write_text(dir / "t.zip", project::zip_store({{"one.json", "[1]"}, {"two.json", "[2]"}}));
  const auto cmd = "python3 -c \"import zipfile,sys; z=zipfile.ZipFile(sys.argv[1]); "
                   "sys.exit(z.testzip() is not None or z.read('two.json') != b'[2]')\" " +
                   (dir / "t.zip").string();
  EXPECT_EQ(std::system(cmd.c_str()), 0);
}

TEST(SceneDir, Layout) {
  const auto dir = testutil::temp_dir("scene_layout");
  const auto scene = small_scene();
  project::write_scene(scene, dir);
  EXPECT_TRUE(fs::exists(dir / "video.json"));
  EXPECT_TRUE(fs::exists(dir / "scene.json"));
  EXPECT_TRUE(fs::exists(dir / "truth" / "small_tracking.csv"));
  EXPECT_TRUE(fs::exists(dir / "init" / "small_000000000.json"));
  const auto video = open_video(dir);
  EXPECT_EQ(video->frame_count(), 12);
  EXPECT_EQ(video->width(), 96);
  // Decoded PNG frames equal the rendered ones.
  const auto [frame, masks] = synth::render(scene, 7);
  EXPECT_EQ(video->frame(7)->pixels, frame.pixels);
  EXPECT_EQ(synth::scene_from_json(nlohmann::json::parse(slurp(dir / "scene.json"))).name, "small");
}

TEST(SceneDir, TruthEvaluatesPerfectly) {
  const auto dir = testutil::temp_dir("scene_self");
  project::write_scene(small_scene(), dir);
  const auto masks = project::load_masks(dir);
  ASSERT_EQ(masks.frames.size(), 12u);
  EXPECT_EQ(masks.frames[3].size(), 2u);
  const auto rep = project::evaluate_dirs(dir, dir);
  EXPECT_EQ(rep.identity_switches, 0);
  EXPECT_EQ(rep.missed_frames, 0);
  for (const auto& [label, iou] : rep.mean_iou) EXPECT_DOUBLE_EQ(iou, 1.0) << label;
}

TEST(SessionDir, MissingRecord) {
  const auto dir = testutil::temp_dir("no_record");
  try {
    project::read_session_record(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotFound);
  }
  EXPECT_THROW(project::load_masks(dir), Error);
}

TEST(SessionDir, ExportsMatchLiveSession) {
  const auto scene_dir = testutil::temp_dir("export_scene");
  project::write_scene(small_scene(), scene_dir);
  auto video = open_video(scene_dir);
  const auto doc = io::read_labelme(scene_dir / "init" / "small_000000000.json");
  Session session(video, AdvancedParams{});
  session.set_annotation(0, doc.frame);
  session.start_prediction(0);
  session.wait_until_settled();
  ASSERT_EQ(session.state().status, SessionStatus::Completed);

  const auto out = testutil::temp_dir("export_session");
  project::write_session_dir(session, scene_dir.string(), out);
  for (auto f : {project::ExportFormat::TrackingCsv, project::ExportFormat::TrackedCsv,
                 project::ExportFormat::LabelMeZip})
    EXPECT_EQ(project::export_from_dir(out, f), project::export_bytes(session, f)) << static_cast<int>(f);

  const auto rec = project::read_session_record(out);
  EXPECT_EQ(rec.video_name, "small");
  EXPECT_EQ(rec.frame_count, 12);
  EXPECT_EQ(rec.ground_truth, (std::vector<std::int64_t>{0}));
  EXPECT_TRUE(rec.corrected.empty());

  const auto zip = read_zip(project::export_bytes(session, project::ExportFormat::LabelMeZip));
  EXPECT_EQ(zip.size(), 12u);
  EXPECT_TRUE(zip.count("small_000000011.json"));
}

TEST(Track, CompletesAndIsDeterministic) {
  const auto scene_dir = testutil::temp_dir("track_scene");
  project::write_scene(small_scene(), scene_dir);
  const auto init = scene_dir / "init" / "small_000000000.json";
  const auto out_a = testutil::temp_dir("track_a"), out_b = testutil::temp_dir("track_b");
  const auto a = project::track(scene_dir.string(), init, AdvancedParams{}, out_a);
  const auto b = project::track(scene_dir.string(), init, AdvancedParams{}, out_b);
  EXPECT_EQ(a.state.status, SessionStatus::Completed);
  EXPECT_EQ(a.dir, out_a / "small");
  EXPECT_EQ(dir_contents(a.dir), dir_contents(b.dir));
  EXPECT_EQ(a.events.back().kind, EventKind::Completed);

  const auto rep = project::evaluate_dirs(a.dir, scene_dir);
  EXPECT_EQ(rep.identity_switches, 0);
  EXPECT_EQ(rep.missed_frames, 0);
  EXPECT_EQ(rep.paused_events, 0);
  for (const auto& [label, iou] : rep.mean_iou) EXPECT_GE(iou, 0.9) << label;
}

TEST(Track, RejectsMismatchedInit) {
  const auto scene_dir = testutil::temp_dir("track_mismatch");
  project::write_scene(small_scene(), scene_dir);
  LabeledFrame f;
  f.annotations[parse_label("blob_0")].mask = testutil::rect(40, 40, 5, 5, 10, 10);
  io::write_text(scene_dir / "bad.json", project::labelme_text(f, 40, 40));
  EXPECT_THROW(project::track(scene_dir.string(), scene_dir / "bad.json", AdvancedParams{},
                              testutil::temp_dir("track_mismatch_out")),
               Error);
  EXPECT_THROW(project::track((scene_dir / "nope").string(), scene_dir / "bad.json", AdvancedParams{},
                              testutil::temp_dir("track_mismatch_out")),
               Error);
}
