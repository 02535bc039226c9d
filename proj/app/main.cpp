#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "skelnoise/config.hpp"
#include "skelnoise/cross_training.hpp"
#include "skelnoise/dataset.hpp"
#include "skelnoise/error.hpp"
#include "skelnoise/evaluate.hpp"
#include "skelnoise/noise.hpp"
#include "skelnoise/pipeline.hpp"

using namespace skelnoise;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by every pipeline subcommand; each one overrides the field
// of the same name in the config file.
struct RunFlags {
  std::string config_file;
  bool toy = false;
  std::optional<std::string> output;
  std::optional<double> ratio;
  std::optional<std::uint64_t> seed;
  std::optional<double> p;
  std::optional<int> warmup;
  std::optional<int> epochs;
  std::optional<int> fusion_epochs;
  std::optional<std::string> backend;
  std::optional<int> threads;
  std::optional<std::string> dataset;
  bool no_resume = false;
  bool quiet = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_file, "experiment config (JSON)")->check(CLI::ExistingFile);
    app->add_flag("--toy", toy, "start from the built-in toy config");
    app->add_option("-o,--output", output, "output directory");
    app->add_option("--noise-ratio", ratio, "label noise ratio r in [0, 1)");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--select-fraction", p, "global selection fraction p (default 1 - r)");
    app->add_option("--warmup-epochs", warmup, "T_in of the keep-ratio schedule");
    app->add_option("--epochs", epochs, "training epochs for plain and cross-training");
    app->add_option("--fusion-epochs", fusion_epochs, "gate fine-tuning epochs");
    app->add_option("--backend", backend, "kernel backend: serial or openmp");
    app->add_option("--threads", threads, "OpenMP threads (0 = default)");
    app->add_option("--dataset", dataset, "array-container dataset directory (default: synthetic)");
    app->add_flag("--no-resume", no_resume, "recompute every stage");
    app->add_flag("-q,--quiet", quiet, "no progress output");
  }

  ExperimentConfig config() const {
    ExperimentConfig c = toy ? toy_config() : ExperimentConfig{};
    if (!config_file.empty()) c = load_config(config_file);
    if (output) c.output_dir = *output;
    if (ratio) c.noise_ratio = *ratio;
    if (seed) c.seed = *seed;
    if (p) c.select_fraction = *p;
    if (warmup) c.warmup_epochs = *warmup;
    if (epochs) c.train.epochs = *epochs;
    if (fusion_epochs) c.fusion.epochs = *fusion_epochs;
    if (backend) c.backend = *backend;
    if (threads) c.threads = *threads;
    if (dataset) c.dataset_path = *dataset;
    validate(c);
    return c;
  }

  PipelineOptions options() const {
    PipelineOptions o;
    o.resume = !no_resume;
    if (!quiet) o.log = [](const std::string& m) { std::cerr << "[skelnoise] " << m << '\n'; };
    return o;
  }
};

void print_report(const json& report, std::ostream& os) {
  if (report.value("format", "") == "skelnoise-ablation") {
    os << "arm                        r      top-1   top-5\n";
    for (const json& r : report.at("rows")) {
      char line[128];
      std::snprintf(line, sizeof line, "%-26s %.2f   %.4f  %.4f\n", r.at("arm").get<std::string>().c_str(),
                    r.at("noise_ratio").get<double>(), r.at("top1").get<double>(), r.at("top5").get<double>());
      os << line;
    }
    return;
  }
  os << "run " << report.at("name").get<std::string>() << "  noise ratio "
     << report.at("config").at("noise_ratio").get<double>() << '\n';
  for (const auto& [model, m] : report.at("stages").at("evaluate").at("test").items()) {
    char line[128];
    std::snprintf(line, sizeof line, "  %-14s top-1 %.4f  top-5 %.4f\n", model.c_str(), m.at("top1").get<double>(),
                  m.at("top5").get<double>());
    os << line;
  }
  if (report.at("stages").contains("select") && report.at("stages").at("select").contains("quality")) {
    const json& q = report.at("stages").at("select").at("quality").at("union");
    os << "  clean set size " << report.at("stages").at("select").at("sizes").at("union") << ", precision "
       << q.at("precision") << ", recall " << q.at("recall") << '\n';
  }
}

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorKind::Io, "missing " + file.string());
  return json::parse(in);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-robust skeleton action recognition: data, training, selection and fusion."};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic skeleton dataset");
  SyntheticSpec spec;
  std::uint64_t synth_seed = 1;
  std::string synth_out, synth_spec_file;
  synth->add_option("--spec", synth_spec_file, "JSON file with generator settings")->check(CLI::ExistingFile);
  synth->add_option("--classes", spec.class_count, "number of classes");
  synth->add_option("--per-class", spec.samples_per_class, "samples per class");
  synth->add_option("--frames", spec.frames, "frames per sequence");
  synth->add_option("--topology", spec.topology, "toy9, ntu25 or chainN");
  synth->add_option("--subjects", spec.subjects, "number of subjects");
  synth->add_option("--separation", spec.class_separation, "class separation");
  synth->add_option("--style", spec.style_strength, "per-sample style strength");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("-o,--out", synth_out, "output directory")->required();

  // inject
  auto* inject = app.add_subcommand("inject", "flip a fraction of training labels and write the noise manifest");
  std::string inject_data, inject_out, inject_noisy;
  double inject_ratio = 0.0;
  std::uint64_t inject_seed = 1;
  inject->add_option("--data", inject_data, "array-container dataset")->required();
  inject->add_option("--noise-ratio", inject_ratio, "noise ratio r in [0, 1)")->required();
  inject->add_option("--seed", inject_seed, "injection seed");
  inject->add_option("-o,--out", inject_out, "manifest file")->required();
  inject->add_option("--noisy-out", inject_noisy, "also write the relabelled dataset here");

  // derive
  auto* derive_cmd = app.add_subcommand("derive", "write joint, bone or motion tensors for a dataset");
  std::string derive_data, derive_out, derive_modality = "all";
  derive_cmd->add_option("--data", derive_data, "array-container dataset")->required();
  derive_cmd->add_option("--modality", derive_modality, "joint, bone, motion or all");
  derive_cmd->add_option("-o,--out", derive_out, "output directory")->required();

  // pipeline stages
  RunFlags flags;
  auto* cross = app.add_subcommand("cross-train", "co-teach one expert per modality (checkpointed)");
  std::string cross_modality = "all";
  cross->add_option("--modality", cross_modality, "joint, bone, motion or all");
  auto* select = app.add_subcommand("select", "rank training samples by expert loss and build the clean set");
  auto* fuse_cmd = app.add_subcommand("fuse", "fine-tune the gate network on the clean set");
  auto* eval_cmd = app.add_subcommand("evaluate", "run the pipeline through evaluation, or score one checkpoint");
  std::string eval_checkpoint, eval_data, eval_modality = "joint";
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint stem to score instead of running the pipeline");
  eval_cmd->add_option("--data", eval_data, "array-container dataset for --checkpoint");
  eval_cmd->add_option("--modality", eval_modality, "modality the checkpoint was trained on");
  auto* run_cmd = app.add_subcommand("run", "run every stage and write the run report");
  auto* ablation = app.add_subcommand("ablation", "plain / cross-training / ensemble / full at every noise ratio");
  std::vector<double> ablation_ratios;
  ablation->add_option("--ratios", ablation_ratios, "noise ratios")->delimiter(',');
  for (auto* sub : {cross, select, fuse_cmd, eval_cmd, run_cmd, ablation}) flags.attach(sub);

  auto* report = app.add_subcommand("report", "summarise a run or ablation directory and redraw its plots");
  std::string report_dir;
  report->add_option("dir", report_dir, "run or ablation output directory")->required()->check(CLI::ExistingDirectory);

  auto* config_cmd = app.add_subcommand("config", "print a config template");
  bool config_toy = false;
  config_cmd->add_flag("--toy", config_toy, "the toy benchmark config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (!synth_spec_file.empty()) spec = read_json_file(synth_spec_file).get<SyntheticSpec>();
      const Dataset d = make_synthetic_dataset(spec, synth_seed);
      save_dataset(d, synth_out);
      std::cout << "wrote " << d.samples.size() << " sequences (K=" << d.class_count << ", V=" << d.joint_count
                << ") to " << synth_out << '\n';
    } else if (inject->parsed()) {
      const Dataset d = load_dataset(inject_data, DatasetFormat::ArrayContainer);
      const NoisyDataset noisy = inject_symmetric_noise(d, inject_ratio, inject_seed);
      std::ofstream(inject_out) << json(make_manifest(noisy)).dump(2) << '\n';
      if (!inject_noisy.empty()) {
        Dataset relabelled = d;
        relabelled.samples = noisy.samples;
        save_dataset(relabelled, inject_noisy);
      }
      std::cout << noisy.corrupted_count() << " of " << noisy.size() << " labels flipped; manifest " << inject_out
                << '\n';
    } else if (derive_cmd->parsed()) {
      const Dataset d = load_dataset(derive_data, DatasetFormat::ArrayContainer);
      const auto topo = SkeletonTopology::by_name(d.topology);
      std::vector<Modality> mods;
      if (derive_modality == "all") mods.assign(kModalities.begin(), kModalities.end());
      else mods.push_back(modality_from_string(derive_modality));
      std::vector<SkeletonSequence> centred;
      for (const auto& s : d.samples) centred.push_back(center_on_root(s, topo));
      for (Modality m : mods) {
        Dataset out = d;
        const auto tensors = derive_all(m, centred, topo);
        for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i].frames = tensors[i].data;
        save_dataset(out, fs::path(derive_out) / std::string(to_string(m)));
      }
      std::cout << "derived " << mods.size() << " modality set(s) for " << d.samples.size() << " sequences into "
                << derive_out << '\n';
    } else if (cross->parsed() || select->parsed() || fuse_cmd->parsed() || run_cmd->parsed() ||
               (eval_cmd->parsed() && eval_checkpoint.empty())) {
      const ExperimentConfig cfg = flags.config();
      PipelineOptions opt = flags.options();
      if (cross->parsed()) {
        if (cross_modality == "all") opt.only = {"cross-train:joint", "cross-train:bone", "cross-train:motion"};
        else opt.only = {"cross-train:" + std::string(to_string(modality_from_string(cross_modality)))};
      } else if (select->parsed()) {
        opt.stop_after = "select";
      } else if (fuse_cmd->parsed()) {
        opt.stop_after = "fuse";
      }
      const RunResult res = run_pipeline(cfg, opt);
      if (!res.report.is_null()) {
        print_report(res.report, std::cout);
        std::cout << "report " << res.report_path.string() << " sha256 " << res.report_sha256 << '\n';
      } else {
        std::cout << "stages done: ";
        for (const auto& s : res.executed) std::cout << s << ' ';
        for (const auto& s : res.resumed) std::cout << s << "(resumed) ";
        std::cout << "\noutputs in " << cfg.output_dir << '\n';
      }
    } else if (eval_cmd->parsed()) {
      if (eval_data.empty()) fail(ErrorKind::InvalidArgument, "--checkpoint needs --data");
      const ReferenceSTGCN model(load_checkpoint(eval_checkpoint));
      const Dataset d = load_dataset(eval_data, DatasetFormat::ArrayContainer);
      const auto topo = SkeletonTopology::by_name(d.topology);
      std::vector<SkeletonSequence> centred;
      for (const auto& s : d.samples) centred.push_back(center_on_root(s, topo));
      const auto stream = make_stream(modality_from_string(eval_modality), centred, topo);
      std::cout << json(evaluate(model, stream.tensors, stream.labels)).dump(2) << '\n';
    } else if (ablation->parsed()) {
      ExperimentConfig cfg = flags.config();
      if (!ablation_ratios.empty()) cfg.ablation_ratios = ablation_ratios;
      const json table = run_ablation_suite(cfg, flags.options());
      print_report(table, std::cout);
      std::cout << "table " << (fs::path(cfg.output_dir) / "ablation.json").string() << '\n';
    } else if (report->parsed()) {
      const fs::path dir(report_dir);
      const json doc = fs::exists(dir / "ablation.json") ? read_json_file(dir / "ablation.json")
                                                         : read_json_file(dir / "run_report.json");
      print_report(doc, std::cout);
      for (const auto& f : emit_plots(doc, dir / "plots")) std::cout << "plot " << f.string() << '\n';
    } else if (config_cmd->parsed()) {
      std::cout << json(config_toy ? toy_config() : ExperimentConfig{}).dump(2) << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
