#include <cstdio>
#include <fstream>

#include "skelnoise/error.hpp"
#include "skelnoise/pipeline.hpp"

namespace skelnoise {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string ratio_tag(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "r%.2f", r);
  return buf;
}

}  // namespace

json run_ablation_suite(const ExperimentConfig& config, const PipelineOptions& options) {
  validate(config);
  if (config.ablation_ratios.empty()) fail(ErrorKind::InvalidConfiguration, "ablation_ratios is empty");
  json rows = json::array();
  for (double r : config.ablation_ratios) {
    ExperimentConfig c = config;
    c.noise_ratio = r;
    c.output_dir = (fs::path(config.output_dir) / ratio_tag(r)).string();
    if (options.log) options.log("ablation: noise ratio " + ratio_tag(r));
    const RunResult run = run_pipeline(c, options);
    if (run.report.is_null()) fail(ErrorKind::StageFailed, "ablation run at " + ratio_tag(r) + " did not finish");
    const json& test = run.report.at("stages").at("evaluate").at("test");
    const std::string manifest = run.report.at("stages").at("inject").at("manifest_sha256");
    auto row = [&](const std::string& arm, const std::string& model) {
      return json{{"arm", arm},
                  {"noise_ratio", r},
                  {"split", c.split.protocol},
                  {"model", model},
                  {"top1", test.at(model).at("top1")},
                  {"top5", test.at(model).at("top5")},
                  {"manifest_sha256", manifest},
                  {"report_sha256", run.report_sha256}};
    };
    rows.push_back(row("plain", "plain"));
    json cross = row("cross-training", "expert_joint");
    for (const char* m : {"joint", "bone", "motion"})
      cross["per_modality"][m] = test.at(std::string("expert_") + m).at("top1");
    rows.push_back(cross);
    rows.push_back(row("cross-training+ensemble", "ensemble"));
    rows.push_back(row("full", "cm_moe"));
  }
  json table{{"format", "skelnoise-ablation"},
             {"split", config.split.protocol},
             {"ratios", config.ablation_ratios},
             {"ensemble_weights", config.ensemble_weights},
             {"rows", rows}};
  write_ablation_outputs(table, config.output_dir);
  return table;
}

void write_ablation_outputs(const json& table, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "ablation.json", std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + (dir / "ablation.json").string());
    out << table.dump(2) << '\n';
  }
  std::ofstream csv(dir / "ablation.csv", std::ios::trunc);
  if (!csv) fail(ErrorKind::Io, "cannot write " + (dir / "ablation.csv").string());
  csv.precision(17);
  csv << "arm,noise_ratio,split,model,top1,top5,manifest_sha256\n";
  for (const json& r : table.at("rows"))
    csv << r.at("arm").get<std::string>() << ',' << r.at("noise_ratio").get<double>() << ','
        << r.at("split").get<std::string>() << ',' << r.at("model").get<std::string>() << ','
        << r.at("top1").get<double>() << ',' << r.at("top5").get<double>() << ','
        << r.at("manifest_sha256").get<std::string>() << '\n';
  csv.close();
  emit_plots(table, dir / "plots");
}

}  // namespace skelnoise
