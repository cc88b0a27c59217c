#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sketchkp/dataset.hpp"
#include "sketchkp/errors.hpp"
#include "support/testutil.hpp"

using namespace sketchkp;
using doctest::Approx;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json base_index() {
  json j;
  j["keypoint_names"] = {"head", "tail", "wing"};
  j["base_keypoints"] = {0, 1};
  j["novel_keypoints"] = {2};
  j["aux_pairs"] = {{0, 1}};
  j["images"] = json::array();
  j["images"].push_back({{"path", "img/a_000.png"},
                         {"class", "ant"},
                         {"bbox", {4.0, 4.0, 90.0, 90.0}},
                         {"keypoints",
                          {{{"x", 48.0}, {"y", 48.0}, {"v", 1}},
                           {{"x", 24.0}, {"y", 72.0}, {"v", 1}},
                           {{"v", 0}}}}});
  j["images"].push_back({{"path", "img/b_000.png"},
                         {"class", "bee"},
                         {"bbox", {10.0, 10.0, 60.0, 80.0}},
                         {"keypoints",
                          {{{"x", 30.0}, {"y", 30.0}, {"v", 1}},
                           {{"v", 0}},
                           {{"x", 50.0}, {"y", 70.0}, {"v", 1}}}}});
  return j;
}

std::string write_index(const std::string& dir, const json& j) {
  const std::string path = dir + "/index.json";
  std::ofstream out(path);
  out << j.dump(2);
  return path;
}

DatasetIndex load(const std::string& path) {
  return load_annotations(path, 96, "", {0.5});
}

SaliencyMask full_mask(int size) {
  SaliencyMask m;
  m.mask = cv::Mat(size, size, CV_8U, cv::Scalar(255));
  return m;
}

}  // namespace

TEST_CASE("annotation loading normalizes coordinates and groups classes") {
  const std::string dir = testsupport::fresh_scratch("ds_load");
  DatasetIndex idx = load(write_index(dir, base_index()));

  CHECK(idx.num_keypoints() == 3);
  CHECK(idx.base_keypoints == std::vector<int>{0, 1});
  CHECK(idx.novel_keypoints == std::vector<int>{2});
  REQUIRE(idx.images.size() == 2);
  CHECK(idx.classes == std::vector<std::string>{"ant", "bee"});
  CHECK(idx.by_class.at("ant") == std::vector<int>{0});
  CHECK(idx.by_class.at("bee") == std::vector<int>{1});

  const AnnotatedImage& a = idx.images[0];
  CHECK(a.stem == "a_000");
  CHECK(fs::path(a.path).is_absolute() == fs::path(dir).is_absolute());
  CHECK(a.path == (fs::path(dir) / "img/a_000.png").string());
  CHECK(a.keypoints[0].ux == Approx(0.0).scale(1.0));
  CHECK(a.keypoints[0].uy == Approx(0.0).scale(1.0));
  CHECK(a.keypoints[1].ux == Approx(-0.5));
  CHECK(a.keypoints[1].uy == Approx(0.5));
  CHECK_FALSE(a.keypoints[2].visible());
  CHECK(a.bbox[2] == Approx(90.0));

  // one aux pair x one t value, midpoint of (48,48)-(24,72) = pixel (36,60),
  // inside the bbox-fill mask
  REQUIRE(a.aux.size() == 1);
  CHECK(a.aux[0].visible());
  CHECK(a.aux[0].ux == Approx(-0.25));
  CHECK(a.aux[0].uy == Approx(0.25));

  // image b has an invisible endpoint for pair (0, 1): aux exists but is hidden
  REQUIRE(idx.images[1].aux.size() == 1);
  CHECK_FALSE(idx.images[1].aux[0].visible());
}

TEST_CASE("annotation loading rejects malformed indexes") {
  const std::string dir = testsupport::fresh_scratch("ds_reject");
  auto expect_invalid = [&](json j) {
    CHECK_THROWS_AS(load(write_index(dir, j)), ValidationError);
  };

  CHECK_THROWS_AS(load(dir + "/absent.json"), IoError);

  {  // not JSON at all
    const std::string path = dir + "/broken.json";
    std::ofstream(path) << "{not json";
    CHECK_THROWS_AS(load_annotations(path, 96, "", {0.5}), ParseError);
  }

  json j = base_index();
  j.erase("keypoint_names");
  expect_invalid(j);

  j = base_index();
  j["keypoint_names"] = json::array();
  expect_invalid(j);

  j = base_index();
  j["base_keypoints"] = {0, 7};
  expect_invalid(j);

  j = base_index();
  j["novel_keypoints"] = {1};  // already base
  expect_invalid(j);

  j = base_index();
  j["aux_pairs"] = {{0, 0}};
  expect_invalid(j);

  j = base_index();
  j["aux_pairs"] = {{0, 9}};
  expect_invalid(j);

  j = base_index();
  j["images"][1]["path"] = "elsewhere/a_000.png";  // same stem as image 0
  try {
    load(write_index(dir, j));
    FAIL("duplicate stems must be rejected");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
  }

  j = base_index();
  j["images"][0].erase("class");
  expect_invalid(j);

  j = base_index();
  j["images"][0]["bbox"] = {4.0, 4.0, 90.0};
  expect_invalid(j);

  j = base_index();
  j["images"][0]["bbox"] = {90.0, 4.0, 4.0, 90.0};  // x1 < x0
  expect_invalid(j);

  j = base_index();
  j["images"][0]["keypoints"].erase(2);
  expect_invalid(j);

  j = base_index();
  j["images"][0]["keypoints"][0] = {{"v", 1}};  // visible without coordinates
  expect_invalid(j);

  j = base_index();
  j["images"] = json::array();
  expect_invalid(j);
}

TEST_CASE("pixel/unit conversion fixtures") {
  const auto fx = testsupport::load_fixture("metric_cases.json");
  for (const auto& e : fx.at("pixel_to_unit")) {
    const int size = e.at("image_size");
    for (int d = 0; d < 2; ++d) {
      const double px = e.at("pixel")[static_cast<size_t>(d)];
      const double u = e.at("u")[static_cast<size_t>(d)];
      CHECK(pixel_to_unit(px, size) == Approx(u).scale(1.0).epsilon(1e-12));
      CHECK(unit_to_pixel(u, size) == Approx(px).scale(1.0).epsilon(1e-12));
    }
  }
  // the two maps invert each other
  for (double px : {0.0, 17.5, 191.25, 384.0})
    CHECK(unit_to_pixel(pixel_to_unit(px, 384), 384) == Approx(px).epsilon(1e-12));
}

TEST_CASE("auxiliary keypoint synthesis") {
  const auto fx = testsupport::load_fixture("metric_cases.json");
  const int size = 96;

  SUBCASE("interpolation fixtures with an all-on mask") {
    for (const auto& e : fx.at("aux_interpolation")) {
      std::vector<Keypoint> kps(2);
      kps[0] = {e.at("a")[0], e.at("a")[1], 1};
      kps[1] = {e.at("b")[0], e.at("b")[1], 1};
      auto aux = generate_auxiliary_keypoints(kps, {{0, 1}}, {e.at("t")}, full_mask(size), size);
      REQUIRE(aux.size() == 1);
      CHECK(aux[0].visible());
      CHECK(aux[0].ux == Approx(e.at("expected")[0].get<double>()).scale(1.0).epsilon(1e-12));
      CHECK(aux[0].uy == Approx(e.at("expected")[1].get<double>()).scale(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("every aux point is collinear with its endpoints") {
    std::vector<Keypoint> kps{{-0.7, 0.2, 1}, {0.5, -0.9, 1}, {0.1, 0.8, 1}};
    std::vector<std::pair<int, int>> pairs{{0, 1}, {1, 2}, {0, 2}};
    std::vector<double> ts{0.25, 0.5, 0.75};
    auto aux = generate_auxiliary_keypoints(kps, pairs, ts, full_mask(size), size);
    REQUIRE(aux.size() == pairs.size() * ts.size());
    size_t i = 0;
    for (const auto& [a, b] : pairs) {
      for (double t : ts) {
        const Keypoint& p = aux[i++];
        CHECK(p.visible());
        const double cross = (kps[b].ux - kps[a].ux) * (p.uy - kps[a].uy) -
                             (kps[b].uy - kps[a].uy) * (p.ux - kps[a].ux);
        CHECK(std::abs(cross) < 1e-12);
        (void)t;
      }
    }
  }

  SUBCASE("an invisible endpoint hides the whole segment") {
    std::vector<Keypoint> kps{{-0.5, -0.5, 1}, {0.5, 0.5, 0}};
    auto aux = generate_auxiliary_keypoints(kps, {{0, 1}}, {0.25, 0.5}, full_mask(size), size);
    REQUIRE(aux.size() == 2);
    CHECK_FALSE(aux[0].visible());
    CHECK_FALSE(aux[1].visible());
  }

  SUBCASE("points falling off the saliency mask are hidden") {
    AnnotatedImage img;
    img.bbox = {10.0, 10.0, 50.0, 50.0};
    SaliencyMask mask = load_saliency_mask(img, "", size);
    CHECK(mask.source == SaliencyMask::Source::bbox_fill);

    // endpoints at pixels (20,20) and (90,90): midpoint (55,55) is outside the
    // box, the quarter point (37.5, 37.5) is inside
    std::vector<Keypoint> kps{{pixel_to_unit(20, size), pixel_to_unit(20, size), 1},
                              {pixel_to_unit(90, size), pixel_to_unit(90, size), 1}};
    auto aux = generate_auxiliary_keypoints(kps, {{0, 1}}, {0.25, 0.5}, mask, size);
    REQUIRE(aux.size() == 2);
    CHECK(aux[0].visible());
    CHECK_FALSE(aux[1].visible());
  }
}

TEST_CASE("saliency masks") {
  const int size = 64;
  AnnotatedImage img;
  img.stem = "m_001";
  img.bbox = {8.0, 8.0, 32.0, 32.0};

  SUBCASE("bounding-box fallback fills exactly the box") {
    SaliencyMask m = load_saliency_mask(img, "", size);
    CHECK(m.source == SaliencyMask::Source::bbox_fill);
    CHECK(m.contains(pixel_to_unit(16, size), pixel_to_unit(16, size), size));
    CHECK_FALSE(m.contains(pixel_to_unit(50, size), pixel_to_unit(50, size), size));
  }

  SUBCASE("a precomputed mask file wins over the box") {
    const std::string dir = testsupport::fresh_scratch("ds_mask");
    cv::Mat disk = cv::Mat::zeros(size, size, CV_8U);
    cv::circle(disk, cv::Point(48, 48), 8, cv::Scalar(255), cv::FILLED);
    cv::imwrite(dir + "/m_001.mask.png", disk);

    SaliencyMask m = load_saliency_mask(img, dir, size);
    CHECK(m.source == SaliencyMask::Source::precomputed);
    CHECK(m.contains(pixel_to_unit(48, size), pixel_to_unit(48, size), size));
    CHECK_FALSE(m.contains(pixel_to_unit(16, size), pixel_to_unit(16, size), size));
  }
}

TEST_CASE("edge detector parsing") {
  CHECK(parse_edge_detector("canny_builtin") == EdgeDetector::canny_builtin);
  CHECK(parse_edge_detector("canny") == EdgeDetector::canny_builtin);
  CHECK(parse_edge_detector("external_s") == EdgeDetector::external_s);
  CHECK(parse_edge_detector("external_s1") == EdgeDetector::external_s1);
  CHECK(parse_edge_detector("external_s2") == EdgeDetector::external_s2);
  CHECK_THROWS_AS(parse_edge_detector("sobel"), ConfigError);
}

TEST_CASE("builtin edge extraction marks only true boundaries") {
  SUBCASE("a constant image has no edges") {
    cv::Mat flat(64, 64, CV_8UC3, cv::Scalar(128, 128, 128));
    cv::Mat edges = canny_edgemap(flat, 100, 200);
    CHECK(cv::countNonZero(edges) == 0);
  }

  SUBCASE("a white square yields edges hugging the square's border") {
    const int lo = 16, hi = 47;
    cv::Mat img = cv::Mat::zeros(64, 64, CV_8UC3);
    cv::rectangle(img, cv::Point(lo, lo), cv::Point(hi, hi), cv::Scalar(255, 255, 255),
                  cv::FILLED);
    cv::Mat edges = canny_edgemap(img, 100, 200);
    REQUIRE(cv::countNonZero(edges) > 20);
    for (int y = 0; y < edges.rows; ++y) {
      for (int x = 0; x < edges.cols; ++x) {
        if (!edges.at<unsigned char>(y, x)) continue;
        // distance from (x, y) to the boundary of the square
        const double dx = std::max({lo - x, x - hi, 0});
        const double dy = std::max({lo - y, y - hi, 0});
        double d;
        if (dx > 0 || dy > 0) {
          d = std::sqrt(dx * dx + dy * dy);  // outside
        } else {
          d = std::min({x - lo, hi - x, y - lo, hi - y});  // inside: depth from border
        }
        CHECK(d <= 2.0);
      }
    }
  }

  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(canny_edgemap(cv::Mat(), 100, 200), ValidationError);
  }
}

TEST_CASE("edgemap synthesis honors the cache") {
  const std::string dir = testsupport::fresh_scratch("ds_cache");
  cv::Mat img = cv::Mat::zeros(64, 64, CV_8UC3);
  cv::rectangle(img, cv::Point(20, 20), cv::Point(44, 44), cv::Scalar(255, 255, 255),
                cv::FILLED);

  SUBCASE("builtin detector computes once, then reads the cached file") {
    cv::Mat first = synthesize_edgemap(img, EdgeDetector::canny_builtin, dir, "sq", 100, 200);
    CHECK(fs::exists(dir + "/sq.S.png"));

    // A different input image is ignored on the second call: the cache wins.
    cv::Mat other(64, 64, CV_8UC3, cv::Scalar(200, 200, 200));
    cv::Mat second = synthesize_edgemap(other, EdgeDetector::canny_builtin, dir, "sq", 100, 200);
    REQUIRE(first.size() == second.size());
    CHECK(cv::countNonZero(first != second) == 0);
  }

  SUBCASE("external slots never compute") {
    CHECK_THROWS_AS(synthesize_edgemap(img, EdgeDetector::external_s1, dir, "sq", 100, 200),
                    CacheMissError);
    cv::Mat drawn = cv::Mat::zeros(64, 64, CV_8U);
    cv::rectangle(drawn, cv::Point(20, 20), cv::Point(44, 44), cv::Scalar(255), 1);
    cv::imwrite(dir + "/sq.S1.png", drawn);
    cv::Mat got = synthesize_edgemap(cv::Mat(), EdgeDetector::external_s1, dir, "sq", 100, 200);
    CHECK(cv::countNonZero(got != drawn) == 0);
  }

  SUBCASE("a cache directory is required") {
    CHECK_THROWS_AS(synthesize_edgemap(img, EdgeDetector::canny_builtin, "", "sq", 100, 200),
                    ConfigError);
  }
}

TEST_CASE("raster loading by modality") {
  const std::string dir = testsupport::fresh_scratch("ds_raster");
  fs::create_directories(dir + "/img");
  cv::Mat photo(128, 128, CV_8UC3, cv::Scalar(30, 60, 90));
  cv::rectangle(photo, cv::Point(40, 40), cv::Point(88, 88), cv::Scalar(250, 250, 250),
                cv::FILLED);
  cv::imwrite(dir + "/img/r_000.png", photo);

  RunConfig cfg;
  cfg.image_size = 96;
  cfg.cache_dir = dir + "/edgemaps";
  DatasetIndex idx;  // unused by load_raster

  AnnotatedImage img;
  img.path = dir + "/img/r_000.png";
  img.stem = "r_000";

  SUBCASE("photos load in color at the configured size") {
    img.modality = Modality::photo;
    cv::Mat m = load_raster(idx, img, cfg);
    CHECK(m.rows == 96);
    CHECK(m.cols == 96);
    CHECK(m.type() == CV_8UC3);
  }

  SUBCASE("primary edgemaps synthesize, cache, and convert to 3 channels") {
    img.modality = Modality::edge_s;
    cv::Mat m = load_raster(idx, img, cfg);
    CHECK(m.rows == 96);
    CHECK(m.type() == CV_8UC3);
    CHECK(fs::exists(cfg.cache_dir + "/r_000.S.png"));
    std::vector<cv::Mat> ch;
    cv::split(m, ch);
    CHECK(cv::countNonZero(ch[0] != ch[1]) == 0);
    CHECK(cv::countNonZero(ch[0] != ch[2]) == 0);
    CHECK(cv::countNonZero(ch[0]) > 0);
  }

  SUBCASE("style-variant slots require precomputed files") {
    img.modality = Modality::edge_s1;
    CHECK_THROWS_AS(load_raster(idx, img, cfg), CacheMissError);
  }

  SUBCASE("a missing photo is an i/o error") {
    img.path = dir + "/img/absent.png";
    img.modality = Modality::photo;
    CHECK_THROWS_AS(load_raster(idx, img, cfg), IoError);
  }
}

TEST_CASE("modality cache suffixes") {
  CHECK(std::string(modality_suffix(Modality::edge_s)) == "S");
  CHECK(std::string(modality_suffix(Modality::edge_s1)) == "S1");
  CHECK(std::string(modality_suffix(Modality::edge_s2)) == "S2");
  CHECK_THROWS_AS(modality_suffix(Modality::photo), ValidationError);
}

namespace {

// index with three classes x twelve instances each, all keypoints visible
json grid_index(int per_class) {
  json j;
  j["keypoint_names"] = {"p0", "p1"};
  j["base_keypoints"] = {0, 1};
  j["novel_keypoints"] = json::array();
  j["aux_pairs"] = json::array();
  j["images"] = json::array();
  for (const std::string cls : {"ant", "bee", "cat"}) {
    for (int i = 0; i < per_class; ++i) {
      char stem[64];
      std::snprintf(stem, sizeof(stem), "%s_%03d", cls.c_str(), i);
      j["images"].push_back({{"path", "img/" + std::string(stem) + ".png"},
                             {"class", cls},
                             {"bbox", {4.0, 4.0, 90.0, 90.0}},
                             {"keypoints",
                              {{{"x", 20.0}, {"y", 20.0}, {"v", 1}},
                               {{"x", 70.0}, {"y", 60.0}, {"v", 1}}}}});
    }
  }
  return j;
}

}  // namespace

TEST_CASE("training class resolution") {
  const std::string dir = testsupport::fresh_scratch("ds_classes");
  DatasetIndex idx = load(write_index(dir, grid_index(3)));
  RunConfig cfg;

  cfg.train_classes = {"bee"};
  CHECK(resolve_train_classes(idx, cfg) == std::vector<std::string>{"bee"});

  cfg.train_classes = {"wasp"};
  CHECK_THROWS_AS(resolve_train_classes(idx, cfg), ConfigError);

  cfg.train_classes.clear();
  cfg.eval_classes = {"cat"};
  CHECK(resolve_train_classes(idx, cfg) == std::vector<std::string>{"ant", "bee"});

  cfg.eval_classes = {"wasp"};
  CHECK_THROWS_AS(resolve_train_classes(idx, cfg), ConfigError);

  cfg.eval_classes = {"ant", "bee", "cat"};
  CHECK_THROWS_AS(resolve_train_classes(idx, cfg), ConfigError);
}

TEST_CASE("instance splits are deterministic, disjoint, and complete") {
  const std::string dir = testsupport::fresh_scratch("ds_split");
  DatasetIndex idx = load(write_index(dir, grid_index(10)));
  RunConfig cfg;
  cfg.eval_classes = {"cat"};
  cfg.split_seed = 5;
  cfg.split_train_fraction = 0.7;

  InstanceSplit s1 = split_instances(idx, cfg);
  InstanceSplit s2 = split_instances(idx, cfg);
  CHECK(s1.train == s2.train);
  CHECK(s1.eval == s2.eval);

  // held-out class: everything on the eval side
  CHECK(s1.train.count("cat") == 0);
  CHECK(s1.eval.at("cat").size() == 10);

  for (const std::string cls : {"ant", "bee"}) {
    const auto& tr = s1.train.at(cls);
    const auto& ev = s1.eval.at(cls);
    CHECK(tr.size() == 7);
    CHECK(ev.size() == 3);
    std::set<int> all(tr.begin(), tr.end());
    for (int e : ev) CHECK(all.insert(e).second);  // disjoint
    CHECK(all.size() == 10);
    for (int i : all) CHECK(idx.images[static_cast<size_t>(i)].class_label == cls);
  }

  // a different seed shuffles differently (empirically for these sizes)
  cfg.split_seed = 6;
  InstanceSplit s3 = split_instances(idx, cfg);
  CHECK(s3.train != s1.train);
}

TEST_CASE("episode sampling") {
  const std::string dir = testsupport::fresh_scratch("ds_episode");
  DatasetIndex idx = load(write_index(dir, grid_index(6)));

  EpisodeSpec spec;
  spec.k = 2;
  spec.m = 3;
  spec.keypoint_ids = {0, 1};
  spec.classes = {"ant", "bee", "cat"};
  spec.support_modality = Modality::edge_s;

  SUBCASE("shape, modality, and support/query disjointness") {
    Episode ep = sample_episode(idx, spec, 99);
    CHECK(ep.support.size() == 2);
    CHECK(ep.query.size() == 3);
    CHECK(ep.keypoint_ids == spec.keypoint_ids);
    std::set<std::string> stems;
    for (const auto& s : ep.support) {
      CHECK(s.primary.modality == Modality::edge_s);
      CHECK(s.primary.class_label == ep.class_label);
      CHECK(stems.insert(s.primary.stem).second);
    }
    for (const auto& q : ep.query) {
      CHECK(q.modality == Modality::photo);
      CHECK(q.class_label == ep.class_label);
      CHECK(stems.insert(q.stem).second);
    }
  }

  SUBCASE("the same seed reproduces the episode; different seeds vary") {
    Episode a = sample_episode(idx, spec, 4242);
    Episode b = sample_episode(idx, spec, 4242);
    CHECK(a.class_label == b.class_label);
    for (size_t i = 0; i < a.support.size(); ++i)
      CHECK(a.support[i].primary.stem == b.support[i].primary.stem);
    for (size_t i = 0; i < a.query.size(); ++i) CHECK(a.query[i].stem == b.query[i].stem);

    bool any_difference = false;
    for (unsigned long long s = 0; s < 8 && !any_difference; ++s) {
      Episode c = sample_episode(idx, spec, s);
      any_difference = c.class_label != a.class_label ||
                       c.support[0].primary.stem != a.support[0].primary.stem;
    }
    CHECK(any_difference);
  }

  SUBCASE("classes below k+m instances are rejected by name") {
    EpisodeSpec small = spec;
    small.k = 3;
    small.m = 4;  // needs 7 > 6 available
    small.classes = {"bee"};
    try {
      sample_episode(idx, small, 1);
      FAIL("undersized class must be rejected");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("bee") != std::string::npos);
    }
  }

  SUBCASE("an instance pool restricts the draw") {
    std::map<std::string, std::vector<int>> pool;
    // only the first five ant images are eligible
    pool["ant"] = {0, 1, 2, 3, 4};
    EpisodeSpec pooled = spec;
    pooled.classes = {"ant"};
    pooled.instance_pool = &pool;
    for (unsigned long long s = 0; s < 10; ++s) {
      Episode ep = sample_episode(idx, pooled, s);
      for (const auto& sup : ep.support)
        CHECK(sup.primary.stem != "ant_005");
      for (const auto& q : ep.query) CHECK(q.stem != "ant_005");
    }

    pool["ant"] = {0, 1};  // fewer than k+m
    CHECK_THROWS_AS(sample_episode(idx, pooled, 1), ValidationError);
  }

  SUBCASE("style companions attach only when their cache files exist") {
    const std::string cache = dir + "/edgemaps";
    fs::create_directories(cache);
    EpisodeSpec styled = spec;
    styled.k = 1;
    styled.m = 1;
    styled.classes = {"ant"};
    styled.want_style_variants = true;
    styled.cache_dir = cache;

    Episode bare = sample_episode(idx, styled, 7);
    CHECK_FALSE(bare.support[0].s1.has_value());
    CHECK_FALSE(bare.support[0].s2.has_value());

    // write an S1 file for every ant stem; S2 stays absent
    cv::Mat strokes = cv::Mat::zeros(96, 96, CV_8U);
    for (int i = 0; i < 6; ++i) {
      char stem[64];
      std::snprintf(stem, sizeof(stem), "ant_%03d", i);
      cv::imwrite(cache + "/" + stem + ".S1.png", strokes);
    }
    Episode styled_ep = sample_episode(idx, styled, 7);
    REQUIRE(styled_ep.support[0].s1.has_value());
    CHECK(styled_ep.support[0].s1->modality == Modality::edge_s1);
    CHECK(styled_ep.support[0].s1->stem == styled_ep.support[0].primary.stem);
    CHECK_FALSE(styled_ep.support[0].s2.has_value());

    // photo supports never pick up edge-style companions
    EpisodeSpec photo_spec = styled;
    photo_spec.support_modality = Modality::photo;
    Episode photo_ep = sample_episode(idx, photo_spec, 7);
    CHECK_FALSE(photo_ep.support[0].s1.has_value());
  }

  SUBCASE("empty class or keypoint lists are rejected") {
    EpisodeSpec bad = spec;
    bad.classes.clear();
    CHECK_THROWS_AS(sample_episode(idx, bad, 1), ValidationError);
    bad = spec;
    bad.keypoint_ids.clear();
    CHECK_THROWS_AS(sample_episode(idx, bad, 1), ValidationError);
  }
}
