#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sketchkp/checkpoint.hpp"
#include "sketchkp/errors.hpp"
#include "sketchkp/rng.hpp"
#include "support/testutil.hpp"

using namespace sketchkp;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::int64_t j = 0; j < t.size(); ++j) t[j] = rng.gaussian();
  return t;
}

Checkpoint sample_checkpoint(Rng& rng) {
  Checkpoint ck;
  ck.iteration = 1234;
  ck.config_text = "encoder.backbone = \"tiny\"\ntrainer.seed = 7\n";
  ck.tensors.emplace_back("encoder.c1.W", random_tensor({4, 3, 3, 3}, rng));
  ck.tensors.emplace_back("encoder.c1.b", random_tensor({4}, rng));
  ck.tensors.emplace_back("locator.s8.cls.W", random_tensor({64, 16}, rng));
  ck.has_optimizer = true;
  ck.adam_t = 77;
  ck.adam_m.push_back(random_tensor({4, 3, 3, 3}, rng));
  ck.adam_m.push_back(random_tensor({4}, rng));
  ck.adam_v.push_back(random_tensor({4, 3, 3, 3}, rng));
  ck.adam_v.push_back(random_tensor({4}, rng));
  return ck;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void expect_tensors_equal(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  CHECK(std::memcmp(a.data(), b.data(), static_cast<size_t>(a.size()) * sizeof(double)) == 0);
}

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly") {
  const std::string dir = testsupport::fresh_scratch("ckpt_roundtrip");
  Rng rng(901);
  Checkpoint ck = sample_checkpoint(rng);

  const std::string p1 = dir + "/a.skkp";
  save_checkpoint(p1, ck);
  Checkpoint back = load_checkpoint(p1);

  CHECK(back.iteration == ck.iteration);
  CHECK(back.config_text == ck.config_text);
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (size_t i = 0; i < ck.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == ck.tensors[i].first);
    expect_tensors_equal(back.tensors[i].second, ck.tensors[i].second);
  }
  CHECK(back.has_optimizer);
  CHECK(back.adam_t == 77);
  REQUIRE(back.adam_m.size() == 2);
  REQUIRE(back.adam_v.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    expect_tensors_equal(back.adam_m[i], ck.adam_m[i]);
    expect_tensors_equal(back.adam_v[i], ck.adam_v[i]);
  }

  // save(load(save(x))) writes the same bytes as save(x)
  const std::string p2 = dir + "/b.skkp";
  save_checkpoint(p2, back);
  CHECK(read_bytes(p1) == read_bytes(p2));

  // no stray temp file remains after the atomic rename
  CHECK_FALSE(fs::exists(p1 + ".tmp"));
}

TEST_CASE("checkpoints without optimizer state round-trip too") {
  const std::string dir = testsupport::fresh_scratch("ckpt_noopt");
  Rng rng(902);
  Checkpoint ck;
  ck.iteration = 5;
  ck.config_text = "x";
  ck.tensors.emplace_back("w", random_tensor({2, 2}, rng));
  ck.has_optimizer = false;

  save_checkpoint(dir + "/c.skkp", ck);
  Checkpoint back = load_checkpoint(dir + "/c.skkp");
  CHECK_FALSE(back.has_optimizer);
  CHECK(back.adam_m.empty());
  CHECK(back.adam_v.empty());
  expect_tensors_equal(back.tensors[0].second, ck.tensors[0].second);
}

TEST_CASE("corrupt or foreign files are rejected with clear errors") {
  const std::string dir = testsupport::fresh_scratch("ckpt_corrupt");
  Rng rng(903);
  Checkpoint ck = sample_checkpoint(rng);
  const std::string good = dir + "/good.skkp";
  save_checkpoint(good, ck);

  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(dir + "/nope.skkp"), IoError); }

  SUBCASE("bad magic") {
    std::ofstream(dir + "/magic.skkp", std::ios::binary) << "XXXXsomething longer than a header";
    CHECK_THROWS_AS(load_checkpoint(dir + "/magic.skkp"), ParseError);
  }

  SUBCASE("empty file") {
    std::ofstream(dir + "/empty.skkp", std::ios::binary);
    CHECK_THROWS_AS(load_checkpoint(dir + "/empty.skkp"), ParseError);
  }

  SUBCASE("unsupported version") {
    std::string bytes = read_bytes(good);
    bytes[4] = 99;  // version field follows the 4-byte magic
    std::ofstream(dir + "/vers.skkp", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir + "/vers.skkp"), ParseError);
  }

  SUBCASE("truncation at every prefix length is caught") {
    const std::string bytes = read_bytes(good);
    for (size_t cut : {5ul, 16ul, 40ul, bytes.size() / 2, bytes.size() - 9}) {
      const std::string path = dir + "/cut.skkp";
      std::ofstream(path, std::ios::binary | std::ios::trunc)
          << bytes.substr(0, cut);
      CHECK_THROWS_AS(load_checkpoint(path), IoError);
    }
  }

  SUBCASE("misaligned optimizer state cannot be written") {
    Checkpoint bad = sample_checkpoint(rng);
    bad.adam_v.pop_back();
    CHECK_THROWS_AS(save_checkpoint(dir + "/bad.skkp", bad), ValidationError);
  }
}

TEST_CASE("saving creates missing parent directories") {
  const std::string dir = testsupport::fresh_scratch("ckpt_mkdir");
  Rng rng(904);
  Checkpoint ck;
  ck.tensors.emplace_back("w", random_tensor({1}, rng));
  const std::string nested = dir + "/deep/run/checkpoint.skkp";
  save_checkpoint(nested, ck);
  CHECK(fs::exists(nested));
}
