#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "skelnoise/dataset.hpp"
#include "test_util.hpp"

using namespace skelnoise;

TEST_CASE("synthetic generator shape, balance and ordering") {
  SyntheticSpec spec;
  spec.class_count = 5;
  spec.samples_per_class = 12;
  spec.frames = 7;
  const Dataset d = make_synthetic_dataset(spec, 3);
  CHECK(d.class_count == 5);
  CHECK(d.joint_count == 9);
  CHECK(d.topology == "toy9");
  REQUIRE(d.samples.size() == 60);
  std::map<int, int> per_class;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    CHECK(s.frames.frames() == 7);
    CHECK(s.frames.joints() == 9);
    CHECK(s.frames.channels() == 3);
    CHECK(s.subject_id >= 0);
    CHECK(s.subject_id < spec.subjects);
    CHECK(s.camera_id >= 0);
    CHECK(s.camera_id < spec.cameras);
    if (i > 0) CHECK(d.samples[i - 1].sample_id < s.sample_id);
    ++per_class[s.label];
    ids.insert(s.sample_id);
    for (float x : s.frames.data()) CHECK(std::isfinite(x));
  }
  CHECK(ids.size() == 60);
  for (int k = 0; k < 5; ++k) CHECK(per_class[k] == 12);
}

TEST_CASE("synthetic generator is a function of spec and seed") {
  SyntheticSpec spec;
  spec.samples_per_class = 6;
  spec.frames = 5;
  CHECK(make_synthetic_dataset(spec, 9) == make_synthetic_dataset(spec, 9));
  CHECK_FALSE(make_synthetic_dataset(spec, 9) == make_synthetic_dataset(spec, 10));
  SyntheticSpec styled = spec;
  styled.style_strength = 1.0;
  CHECK_FALSE(make_synthetic_dataset(styled, 9) == make_synthetic_dataset(spec, 9));

  spec.class_count = 1;
  CHECK_THROWS_AS_KIND(make_synthetic_dataset(spec, 1), ErrorKind::InvalidArgument);
  spec.class_count = 3;
  spec.frames = 1;
  CHECK_THROWS_AS_KIND(make_synthetic_dataset(spec, 1), ErrorKind::InvalidArgument);
}

TEST_CASE("array container round-trips bit for bit") {
  SyntheticSpec spec;
  spec.class_count = 3;
  spec.samples_per_class = 4;
  spec.frames = 6;
  spec.topology = "ntu25";
  const Dataset d = make_synthetic_dataset(spec, 4);
  const auto dir = test::temp_dir("dataset_rt");
  save_dataset(d, dir);
  CHECK(load_dataset(dir, DatasetFormat::ArrayContainer) == d);
  CHECK(load_dataset(dir / "manifest.json", DatasetFormat::ArrayContainer) == d);
}

TEST_CASE("loader sorts by sample id and checks joint counts") {
  SyntheticSpec spec;
  spec.class_count = 2;
  spec.samples_per_class = 3;
  spec.frames = 4;
  const Dataset d = make_synthetic_dataset(spec, 5);
  const auto dir = test::temp_dir("dataset_sort");
  save_dataset(d, dir);

  nlohmann::json m;
  std::ifstream(dir / "manifest.json") >> m;
  std::reverse(m["samples"].begin(), m["samples"].end());
  std::ofstream(dir / "manifest.json") << m.dump();
  CHECK(load_dataset(dir, DatasetFormat::ArrayContainer) == d);

  m["joint_count"] = 25;
  std::ofstream(dir / "manifest.json") << m.dump();
  CHECK_THROWS_AS_KIND(load_dataset(dir, DatasetFormat::ArrayContainer), ErrorKind::ShapeMismatch);

  m["joint_count"] = 9;
  m["samples"][0]["label"] = 7;
  std::ofstream(dir / "manifest.json") << m.dump();
  CHECK_THROWS(load_dataset(dir, DatasetFormat::ArrayContainer));

  std::ofstream(dir / "manifest.json") << "{not json";
  CHECK_THROWS_AS_KIND(load_dataset(dir, DatasetFormat::ArrayContainer), ErrorKind::Format);
  CHECK_THROWS_AS_KIND(load_dataset(dir / "nope", DatasetFormat::ArrayContainer), ErrorKind::Io);
}

TEST_CASE("tensor files reject damage") {
  Rng rng(6);
  const auto seq = test::random_sequence(rng, 5, 4);
  const auto dir = test::temp_dir("tensor_file");
  write_tensor_file(seq.frames, dir / "a.skt");
  CHECK(read_tensor_file(dir / "a.skt") == seq.frames);

  const auto size = std::filesystem::file_size(dir / "a.skt");
  std::filesystem::resize_file(dir / "a.skt", size - 4);
  CHECK_THROWS_AS_KIND(read_tensor_file(dir / "a.skt"), ErrorKind::Format);

  std::ofstream(dir / "b.skt", std::ios::binary) << "JUNKJUNKJUNKJUNKJUNK";
  CHECK_THROWS_AS_KIND(read_tensor_file(dir / "b.skt"), ErrorKind::Format);
  CHECK_THROWS_AS_KIND(read_tensor_file(dir / "missing.skt"), ErrorKind::Io);
}

TEST_CASE("synthetic manifest format regenerates the dataset") {
  SyntheticSpec spec;
  spec.class_count = 3;
  spec.samples_per_class = 2;
  spec.frames = 4;
  spec.style_strength = 0.5;
  const auto dir = test::temp_dir("synth_manifest");
  std::ofstream(dir / "s.json") << nlohmann::json{{"spec", spec}, {"seed", 21}}.dump();
  CHECK(load_dataset(dir / "s.json", DatasetFormat::SyntheticManifest) == make_synthetic_dataset(spec, 21));
  CHECK(dataset_format_from_string("array") == DatasetFormat::ArrayContainer);
  CHECK_THROWS_AS_KIND(dataset_format_from_string("hdf5"), ErrorKind::InvalidArgument);
}
