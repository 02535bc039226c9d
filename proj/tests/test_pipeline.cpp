#include <doctest.h>

#include <fstream>
#include <set>

#include "skelnoise/config.hpp"
#include "skelnoise/hash.hpp"
#include "skelnoise/pipeline.hpp"
#include "test_util.hpp"

using namespace skelnoise;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig tiny_config(const fs::path& dir) {
  ExperimentConfig c = toy_config();
  c.synthetic.class_count = 3;
  c.synthetic.samples_per_class = 30;
  c.synthetic.frames = 6;
  c.backbone.widths = {4};
  c.train.epochs = 2;
  c.warmup_epochs = 1;
  c.fusion.epochs = 1;
  c.gate_widths = {4};
  c.output_dir = dir.string();
  return c;
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  return json::parse(in);
}

}  // namespace

TEST_CASE("config round-trips and rejects unknown keys") {
  const auto dir = test::temp_dir("config_rt");
  ExperimentConfig c = tiny_config(dir);
  c.select_fraction = 0.55;
  save_config(c, dir / "c.json");
  const ExperimentConfig back = load_config(dir / "c.json");
  CHECK(config_fingerprint(back) == config_fingerprint(c));
  CHECK(back.effective_select_fraction() == 0.55);
  c.select_fraction.reset();
  CHECK(c.effective_select_fraction() == doctest::Approx(0.6));

  json j = c;
  j["noise_rate"] = 0.3;
  CHECK_THROWS_AS_KIND(j.get<ExperimentConfig>(), ErrorKind::InvalidConfiguration);

  ExperimentConfig bad = c;
  bad.noise_ratio = 1.0;
  CHECK_THROWS(validate(bad));
  bad = c;
  bad.train.epochs = 0;
  CHECK_THROWS_AS_KIND(validate(bad), ErrorKind::InvalidConfiguration);
}

TEST_CASE("stage seeds differ by tag and follow the master seed") {
  ExperimentConfig a = toy_config(), b = toy_config();
  CHECK(a.stage_seed("inject") != a.stage_seed("plain"));
  CHECK(a.stage_seed("inject") == b.stage_seed("inject"));
  b.seed = 2;
  CHECK(a.stage_seed("inject") != b.stage_seed("inject"));
}

TEST_CASE("cross-subject split keeps subjects on one side") {
  ExperimentConfig c = toy_config();
  const Dataset d = load_experiment_data(c);
  const SplitData s = split_dataset(d, c.split, c.stage_seed("split"));
  CHECK(s.train.samples.size() == 600);
  CHECK(s.test.samples.size() == 300);
  std::set<int> train_subjects, test_subjects;
  for (const auto& x : s.train.samples) train_subjects.insert(x.subject_id);
  for (const auto& x : s.test.samples) test_subjects.insert(x.subject_id);
  for (int t : test_subjects) CHECK(train_subjects.count(t) == 0);
}

TEST_CASE("pipeline is deterministic, resumable and keeps the test split clean") {
  const auto a = test::temp_dir("pipe_a");
  const auto b = test::temp_dir("pipe_b");
  const RunResult ra = run_pipeline(tiny_config(a));
  const RunResult rb = run_pipeline(tiny_config(b));
  REQUIRE(!ra.report.is_null());
  CHECK(ra.report_sha256 == rb.report_sha256);
  CHECK(ra.report_sha256 == sha256_file(a / "run_report.json"));
  for (const char* m : {"plain", "expert_joint", "expert_bone", "expert_motion", "ensemble", "cm_moe"}) {
    const double acc = ra.report.at("accuracy").at(m);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }

  // nothing in the noise manifest may name a test sample
  const json split = read_json(a / "split.json");
  const std::set<std::string> test_ids(split.at("test").begin(), split.at("test").end());
  REQUIRE(!test_ids.empty());
  for (const json& r : read_json(a / "noise_manifest.json").at("records"))
    CHECK(test_ids.count(r.at("sample_id").get<std::string>()) == 0);
  CHECK(ra.report.at("stages").at("evaluate").at("test_labels_verified") == true);

  const json bundle = read_json(a / "checkpoints/fusion.json");
  CHECK(bundle.at("freeze_experts") == true);
  CHECK(bundle.at("clean_set_manifest_sha256") == sha256_file(a / "selection.json"));

  // second run over the same directory reuses every heavy stage
  const RunResult again = run_pipeline(tiny_config(a));
  CHECK(again.report_sha256 == ra.report_sha256);
  const std::set<std::string> resumed(again.resumed.begin(), again.resumed.end());
  for (const char* s : {"plain", "cross-train:joint", "cross-train:bone", "cross-train:motion", "fuse"})
    CHECK(resumed.count(s) == 1);

  // a damaged artifact forces that stage to run again, with the same outcome
  { std::ofstream(a / "checkpoints/expert_bone.bin", std::ios::app) << 'x'; }
  const RunResult repaired = run_pipeline(tiny_config(a));
  CHECK(std::find(repaired.executed.begin(), repaired.executed.end(), "cross-train:bone") != repaired.executed.end());
  CHECK(repaired.report_sha256 == ra.report_sha256);
}

TEST_CASE("changing the seed changes the report") {
  const auto a = test::temp_dir("pipe_seed_a");
  const auto b = test::temp_dir("pipe_seed_b");
  ExperimentConfig ca = tiny_config(a), cb = tiny_config(b);
  cb.seed = 9;
  PipelineOptions stop;
  stop.stop_after = "inject";
  CHECK(run_pipeline(ca, stop).report.is_null());
  run_pipeline(cb, stop);
  CHECK(sha256_file(a / "noise_manifest.json") != sha256_file(b / "noise_manifest.json"));
}

TEST_CASE("ablation gives four arms per ratio sharing one manifest") {
  const auto dir = test::temp_dir("ablation");
  ExperimentConfig c = tiny_config(dir);
  c.ablation_ratios = {0.2, 0.4, 0.5, 0.8};
  const json table = run_ablation_suite(c);
  REQUIRE(table.at("rows").size() == 16);
  for (std::size_t i = 0; i < 16; i += 4) {
    const auto& rows = table.at("rows");
    CHECK(rows[i].at("arm") == "plain");
    CHECK(rows[i + 1].at("arm") == "cross-training");
    CHECK(rows[i + 2].at("arm") == "cross-training+ensemble");
    CHECK(rows[i + 3].at("arm") == "full");
    for (std::size_t k = 1; k < 4; ++k) {
      CHECK(rows[i + k].at("manifest_sha256") == rows[i].at("manifest_sha256"));
      CHECK(rows[i + k].at("noise_ratio") == rows[i].at("noise_ratio"));
    }
  }
  CHECK(fs::exists(dir / "ablation.csv"));

  std::ifstream svg(dir / "plots/accuracy_vs_noise.svg");
  const std::string text((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
  for (const char* tick : {">0.2<", ">0.4<", ">0.5<", ">0.8<"}) CHECK(text.find(tick) != std::string::npos);
  std::size_t series = 0;
  for (auto p = text.find("class=\"series\""); p != std::string::npos; p = text.find("class=\"series\"", p + 1))
    ++series;
  CHECK(series == 4);
}

TEST_CASE("plots need something to draw") {
  const auto dir = test::temp_dir("plots_empty");
  CHECK_THROWS_AS_KIND(emit_plots(json::object(), dir), ErrorKind::NothingToPlot);
  CHECK_THROWS_AS_KIND(emit_plots(json{{"format", "skelnoise-ablation"}, {"rows", json::array()}}, dir),
                       ErrorKind::NothingToPlot);
}

TEST_CASE("gate weight chart comes from the fuse stage") {
  const auto dir = test::temp_dir("plots_run");
  const RunResult run = run_pipeline(tiny_config(dir));
  for (const json& e : run.report.at("stages").at("fuse").at("epochs")) {
    const auto& w = e.at("mean_weights");
    CHECK(w[0].get<double>() + w[1].get<double>() + w[2].get<double>() == doctest::Approx(1.0).epsilon(1e-9));
  }
  const auto files = emit_plots(run.report, dir / "again");
  CHECK(files.size() == 2);
  for (const auto& f : files) CHECK(fs::exists(f));
}
