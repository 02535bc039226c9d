#include "skelnoise/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "skelnoise/cm_moe.hpp"
#include "skelnoise/cross_training.hpp"
#include "skelnoise/error.hpp"
#include "skelnoise/evaluate.hpp"
#include "skelnoise/global_select.hpp"
#include "skelnoise/hash.hpp"
#include "skelnoise/kernels.hpp"
#include "skelnoise/rng.hpp"

namespace skelnoise {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset load_experiment_data(const ExperimentConfig& config) {
  Dataset d = config.dataset_path.empty()
                  ? make_synthetic_dataset(config.synthetic, config.data_seed)
                  : load_dataset(config.dataset_path, dataset_format_from_string(config.dataset_format));
  if (d.samples.empty()) fail(ErrorKind::InvalidConfiguration, "dataset has no samples");
  if (d.topology.empty()) fail(ErrorKind::InvalidConfiguration, "dataset does not name its skeleton topology");
  return d;
}

SplitData split_dataset(const Dataset& data, const SplitSpec& split, std::uint64_t seed) {
  const std::size_t n = data.samples.size();
  std::vector<char> is_test(n, 0);
  auto by_key = [&](const std::vector<int>& listed, auto key) {
    std::set<int> chosen(listed.begin(), listed.end());
    if (chosen.empty()) {
      std::set<int> all;
      for (const auto& s : data.samples) all.insert(key(s));
      const std::size_t m = keep_count(split.test_fraction, all.size());
      auto it = all.end();
      for (std::size_t i = 0; i < m; ++i) chosen.insert(*--it);
    }
    for (std::size_t i = 0; i < n; ++i) is_test[i] = chosen.count(key(data.samples[i])) ? 1 : 0;
  };
  if (split.protocol == "cross-subject") {
    by_key(split.test_subjects, [](const SkeletonSequence& s) { return s.subject_id; });
  } else if (split.protocol == "cross-view") {
    by_key(split.test_cameras, [](const SkeletonSequence& s) { return s.camera_id; });
  } else if (split.protocol == "random") {
    const auto order = epoch_order(n, seed, 0);
    const std::size_t m = keep_count(split.test_fraction, n);
    for (std::size_t i = 0; i < m; ++i) is_test[order[i]] = 1;
  } else {
    fail(ErrorKind::InvalidConfiguration, "unknown split protocol '" + split.protocol + "'");
  }

  SplitData out;
  for (Dataset* d : {&out.train, &out.test}) {
    d->class_count = data.class_count;
    d->joint_count = data.joint_count;
    d->topology = data.topology;
  }
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? out.test : out.train).samples.push_back(data.samples[i]);
  if (out.train.samples.empty() || out.test.samples.empty())
    fail(ErrorKind::InvalidConfiguration, "split '" + split.protocol + "' leaves an empty train or test side");
  return out;
}

namespace {

void write_json(const fs::path& file, const json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + file.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorKind::Io, "missing " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, file.string() + ": " + e.what());
  }
}

void write_epoch_metrics(const fs::path& stem, const std::vector<EpochMetrics>& epochs) {
  write_json(fs::path(stem).concat(".json"), json(epochs));
  std::ofstream csv(fs::path(stem).concat(".csv"), std::ios::trunc);
  if (!csv) fail(ErrorKind::Io, "cannot write " + stem.string() + ".csv");
  csv << "epoch,keep_ratio,learning_rate,loss_net1,loss_net2,precision_net1,recall_net1,precision_net2,"
         "recall_net2,holdout_acc_net1,holdout_acc_net2\n";
  csv.precision(17);
  for (const auto& e : epochs)
    csv << e.epoch << ',' << e.keep_ratio << ',' << e.learning_rate << ',' << e.loss_net1 << ',' << e.loss_net2 << ','
        << e.precision_net1 << ',' << e.recall_net1 << ',' << e.precision_net2 << ',' << e.recall_net2 << ','
        << e.holdout_acc_net1 << ',' << e.holdout_acc_net2 << '\n';
}

std::string tensor_hash(const std::vector<ModalityTensor>& tensors) {
  std::vector<unsigned char> bytes;
  for (const auto& t : tensors) {
    const auto d = t.data.data();
    const auto* p = reinterpret_cast<const unsigned char*>(d.data());
    bytes.insert(bytes.end(), p, p + d.size() * sizeof(float));
  }
  return sha256_hex(bytes);
}

ModalityStream subset(const ModalityStream& s, const std::vector<std::size_t>& idx) {
  ModalityStream out;
  out.modality = s.modality;
  for (std::size_t i : idx) {
    out.tensors.push_back(s.tensors[i]);
    out.labels.push_back(s.labels[i]);
    out.sample_ids.push_back(s.sample_ids[i]);
  }
  return out;
}

std::string stage_file_name(std::string_view stage) {
  std::string s(stage);
  std::replace(s.begin(), s.end(), ':', '_');
  return s;
}

bool is_checkpointed(std::string_view stage) {
  return stage == "plain" || stage.starts_with("cross-train:") || stage == "fuse";
}

/// Config fields a stage's result depends on (besides upstream stages).
json stage_inputs(const ExperimentConfig& c, std::string_view stage) {
  if (stage == "data")
    return {{"dataset_path", c.dataset_path}, {"dataset_format", c.dataset_format}, {"synthetic", c.synthetic},
            {"data_seed", c.data_seed},       {"split", c.split}};
  if (stage == "inject") return {{"noise_ratio", c.noise_ratio}, {"seed", c.seed}};
  if (stage == "derive") return {{"holdout_fraction", c.holdout_fraction}};
  if (stage == "plain") return {{"backbone", c.backbone}, {"train", c.train}};
  if (stage.starts_with("cross-train:"))
    return {{"backbone", c.backbone}, {"train", c.train}, {"warmup_epochs", c.warmup_epochs}};
  if (stage == "select") return {{"select_fraction", c.effective_select_fraction()}};
  if (stage == "fuse") return {{"gate_widths", c.gate_widths}, {"fusion", c.fusion}};
  return {{"ensemble_weights", c.ensemble_weights}};
}

/// The report's view of the config: everything that can change a result.
json report_config(const ExperimentConfig& c) {
  json j = c;
  j.erase("output_dir");
  j.erase("backend");
  j.erase("threads");
  return j;
}

Modality modality_of_stage(std::string_view stage) {
  return modality_from_string(stage.substr(std::string_view("cross-train:").size()));
}

struct StageOutput {
  json summary = json::object();
  std::vector<std::string> artifacts;  // relative to the output dir
};

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& cfg, const PipelineOptions& opt)
      : cfg_(cfg), opt_(opt), out_(cfg.output_dir) {}

  RunResult run();

 private:
  void log(const std::string& msg) const {
    if (opt_.log) opt_.log(msg);
  }
  fs::path stage_record(std::string_view stage) const { return out_ / "stages" / (stage_file_name(stage) + ".json"); }
  bool resumable(std::string_view stage, const std::string& key, json* record) const;
  void write_record(std::string_view stage, const std::string& key, const StageOutput& out) const;

  StageOutput execute(std::string_view stage);
  void restore(std::string_view stage);

  StageOutput stage_data();
  StageOutput stage_inject();
  StageOutput stage_derive();
  StageOutput stage_plain();
  StageOutput stage_cross(Modality m);
  StageOutput stage_select();
  StageOutput stage_fuse();
  StageOutput stage_evaluate();

  ModalityStreams view(const std::array<ModalityStream, 3>& s) const { return {{&s[0], &s[1], &s[2]}}; }
  int class_count() const { return split_.train.class_count; }
  const ReferenceSTGCN& expert(int m) const;
  json build_report() const;

  const ExperimentConfig& cfg_;
  const PipelineOptions& opt_;
  fs::path out_;

  std::optional<SkeletonTopology> topo_;
  Dataset data_;
  SplitData split_;
  NoisyDataset noisy_;
  NoisyDataset noisy_fit_;  // aligned with fit_
  std::array<ModalityStream, 3> train_all_, fit_, holdout_, test_;
  std::unique_ptr<ReferenceSTGCN> plain_;
  std::array<std::unique_ptr<ReferenceSTGCN>, 3> experts_;
  std::optional<GlobalSelection> selection_;
  std::unique_ptr<FusionModel> fusion_;
  json summaries_ = json::object();
  std::map<std::string, std::string> artifacts_;
};

bool Pipeline::resumable(std::string_view stage, const std::string& key, json* record) const {
  if (!opt_.resume || !fs::exists(stage_record(stage))) return false;
  try {
    json r = read_json(stage_record(stage));
    if (r.at("key").get<std::string>() != key) return false;
    for (const auto& [file, hash] : r.at("artifacts").items())
      if (!fs::exists(out_ / file) || sha256_file(out_ / file) != hash.get<std::string>()) return false;
    *record = std::move(r);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

void Pipeline::write_record(std::string_view stage, const std::string& key, const StageOutput& out) const {
  json artifacts = json::object();
  for (const auto& file : out.artifacts) artifacts[file] = sha256_file(out_ / file);
  write_json(stage_record(stage), {{"stage", stage}, {"key", key}, {"summary", out.summary}, {"artifacts", artifacts}});
}

const ReferenceSTGCN& Pipeline::expert(int m) const {
  if (!experts_[m])
    fail(ErrorKind::InvalidConfiguration,
         "stage needs the " + std::string(to_string(kModalities[m])) + " expert; run cross-train first");
  return *experts_[m];
}

StageOutput Pipeline::execute(std::string_view stage) {
  if (stage == "data") return stage_data();
  if (stage == "inject") return stage_inject();
  if (stage == "derive") return stage_derive();
  if (stage == "plain") return stage_plain();
  if (stage.starts_with("cross-train:")) return stage_cross(modality_of_stage(stage));
  if (stage == "select") return stage_select();
  if (stage == "fuse") return stage_fuse();
  return stage_evaluate();
}

void Pipeline::restore(std::string_view stage) {
  if (stage == "plain") {
    plain_ = std::make_unique<ReferenceSTGCN>(load_checkpoint(out_ / "checkpoints/plain_joint"));
  } else if (stage.starts_with("cross-train:")) {
    const Modality m = modality_of_stage(stage);
    experts_[static_cast<int>(m)] = std::make_unique<ReferenceSTGCN>(
        load_checkpoint(out_ / "checkpoints" / ("expert_" + std::string(to_string(m)))));
  } else if (stage == "fuse") {
    std::array<std::unique_ptr<Classifier>, 3> experts;
    for (int m = 0; m < 3; ++m) {
      const fs::path stem = out_ / "checkpoints" / ("fused_expert_" + std::string(to_string(kModalities[m])));
      experts[m] = cfg_.fusion.freeze_experts ? expert(m).clone()
                                              : std::make_unique<ReferenceSTGCN>(load_checkpoint(stem));
    }
    fusion_ = std::make_unique<FusionModel>(std::move(experts), GateNetwork(load_checkpoint(out_ / "checkpoints/gate")));
    fusion_->frozen = {cfg_.fusion.freeze_experts, cfg_.fusion.freeze_experts, cfg_.fusion.freeze_experts};
  }
}

StageOutput Pipeline::stage_data() {
  data_ = load_experiment_data(cfg_);
  topo_ = SkeletonTopology::by_name(data_.topology);
  if (topo_->joint_count() != data_.joint_count)
    fail(ErrorKind::ShapeMismatch, "topology " + data_.topology + " does not have " +
                                       std::to_string(data_.joint_count) + " joints");
  const int frames = data_.samples.front().frames.frames();
  for (const auto& s : data_.samples)
    if (s.frames.frames() != frames)
      fail(ErrorKind::ShapeMismatch, s.sample_id + ": sequences must share one frame count");
  split_ = split_dataset(data_, cfg_.split, cfg_.stage_seed("split"));
  for (Dataset* d : {&split_.train, &split_.test})
    for (auto& s : d->samples) s = center_on_root(std::move(s), *topo_);

  json ids{{"protocol", cfg_.split.protocol}, {"train", json::array()}, {"test", json::array()}};
  for (const auto& s : split_.train.samples) ids["train"].push_back(s.sample_id);
  for (const auto& s : split_.test.samples) ids["test"].push_back(s.sample_id);
  write_json(out_ / "split.json", ids);
  log("data: " + std::to_string(split_.train.samples.size()) + " train / " +
      std::to_string(split_.test.samples.size()) + " test, K=" + std::to_string(data_.class_count));
  return {{{"class_count", data_.class_count},
           {"joint_count", data_.joint_count},
           {"frames", frames},
           {"topology", data_.topology},
           {"protocol", cfg_.split.protocol},
           {"train_size", split_.train.samples.size()},
           {"test_size", split_.test.samples.size()}},
          {"split.json"}};
}

StageOutput Pipeline::stage_inject() {
  noisy_ = inject_symmetric_noise(split_.train, cfg_.noise_ratio, cfg_.stage_seed("inject"));
  const NoiseManifest manifest = make_manifest(noisy_);
  std::set<std::string> flipped;
  for (const auto& r : manifest.records) flipped.insert(r.sample_id);
  for (const auto& s : split_.test.samples)
    if (flipped.count(s.sample_id))
      fail(ErrorKind::Inconsistent, "noise manifest touches test sample " + s.sample_id);
  write_json(out_ / "noise_manifest.json", manifest);
  log("inject: " + std::to_string(noisy_.corrupted_count()) + " of " + std::to_string(noisy_.size()) +
      " labels flipped");
  return {{{"noise_ratio", cfg_.noise_ratio},
           {"seed", noisy_.seed},
           {"corrupted", noisy_.corrupted_count()},
           {"train_size", noisy_.size()},
           {"manifest_sha256", sha256_file(out_ / "noise_manifest.json")}},
          {"noise_manifest.json"}};
}

StageOutput Pipeline::stage_derive() {
  const std::size_t n = noisy_.size();
  const std::size_t held = keep_count(cfg_.holdout_fraction, n);
  if (held >= n) fail(ErrorKind::InvalidConfiguration, "holdout would leave no samples to train on");
  const auto order = epoch_order(n, cfg_.stage_seed("holdout"), 0);
  std::vector<char> in_holdout(n, 0);
  for (std::size_t i = 0; i < held; ++i) in_holdout[order[i]] = 1;
  std::vector<std::size_t> fit_idx, hold_idx;
  for (std::size_t i = 0; i < n; ++i) (in_holdout[i] ? hold_idx : fit_idx).push_back(i);

  noisy_fit_ = NoisyDataset{};
  noisy_fit_.noise_ratio = noisy_.noise_ratio;
  noisy_fit_.seed = noisy_.seed;
  noisy_fit_.class_count = noisy_.class_count;
  for (std::size_t i : fit_idx) {
    noisy_fit_.samples.push_back(noisy_.samples[i]);
    noisy_fit_.true_labels.push_back(noisy_.true_labels[i]);
    noisy_fit_.corrupted.push_back(noisy_.corrupted[i]);
  }

  json hashes = json::object();
  for (int m = 0; m < 3; ++m) {
    train_all_[m] = make_stream(kModalities[m], noisy_.samples, *topo_);
    fit_[m] = subset(train_all_[m], fit_idx);
    holdout_[m] = subset(train_all_[m], hold_idx);
    test_[m] = make_stream(kModalities[m], split_.test.samples, *topo_);
    hashes[std::string(to_string(kModalities[m]))] = {{"train", tensor_hash(train_all_[m].tensors)},
                                                       {"test", tensor_hash(test_[m].tensors)}};
  }
  json holdout_ids = json::array();
  for (std::size_t i : hold_idx) holdout_ids.push_back(noisy_.samples[i].sample_id);
  write_json(out_ / "derive.json", {{"holdout", holdout_ids}, {"tensor_sha256", hashes}});
  return {{{"fit_size", fit_idx.size()}, {"holdout_size", hold_idx.size()}, {"tensor_sha256", hashes}},
          {"derive.json"}};
}

StageOutput Pipeline::stage_plain() {
  auto res = train_plain(train_all_[0], cfg_.train, cfg_.backbone, class_count(), cfg_.stage_seed("plain"));
  plain_ = std::move(res.model);
  save_checkpoint(plain_->net(), {"plain", "joint", "eval", cfg_.train.epochs}, out_ / "checkpoints/plain_joint");
  write_epoch_metrics(out_ / "metrics/plain_joint", res.epochs);
  log("plain: final loss " + std::to_string(res.epochs.back().loss_net1));
  return {{{"modality", "joint"}, {"epochs", res.epochs.size()}, {"final_loss", res.epochs.back().loss_net1}},
          {"checkpoints/plain_joint.json", "checkpoints/plain_joint.bin", "metrics/plain_joint.json",
           "metrics/plain_joint.csv"}};
}

StageOutput Pipeline::stage_cross(Modality mod) {
  const int m = static_cast<int>(mod);
  const std::string name(to_string(mod));
  const std::string stage = "cross-train:" + name;
  auto res = cross_train(fit_[m], holdout_[m], noisy_fit_.corrupted, {cfg_.noise_ratio, cfg_.warmup_epochs},
                         cfg_.train, cfg_.backbone, class_count(), cfg_.stage_seed(stage));
  experts_[m] = std::move(res.model);
  CheckpointMeta meta{"expert", name, "eval", cfg_.train.epochs,
                      {{"chosen_net", res.chosen_net},
                       {"holdout_acc_net1", res.holdout_acc_net1},
                       {"holdout_acc_net2", res.holdout_acc_net2}}};
  save_checkpoint(experts_[m]->net(), meta, out_ / "checkpoints" / ("expert_" + name));
  write_epoch_metrics(out_ / "metrics" / ("cross_" + name), res.epochs);
  write_selection_log_csv(res.selection_log, fit_[m].sample_ids, out_ / "metrics" / ("selection_log_" + name + ".csv"));
  const EpochMetrics& last = res.epochs.back();
  log(stage + ": kept net" + std::to_string(res.chosen_net) + ", holdout " + std::to_string(res.holdout_acc_net1) +
      " / " + std::to_string(res.holdout_acc_net2) + ", selector precision " + std::to_string(last.precision_net1));
  return {{{"chosen_net", res.chosen_net},
           {"holdout_acc_net1", res.holdout_acc_net1},
           {"holdout_acc_net2", res.holdout_acc_net2},
           {"final_epoch", last}},
          {"checkpoints/expert_" + name + ".json", "checkpoints/expert_" + name + ".bin",
           "metrics/cross_" + name + ".json", "metrics/cross_" + name + ".csv",
           "metrics/selection_log_" + name + ".csv"}};
}

StageOutput Pipeline::stage_select() {
  std::array<LossTable, 3> tables;
  for (int m = 0; m < 3; ++m) tables[m] = rank_by_loss(expert(m), fit_[m]);
  selection_ = select_clean(tables, cfg_.effective_select_fraction());
  const json manifest = selection_manifest(*selection_, &noisy_fit_);
  write_json(out_ / "selection.json", manifest);
  json summary{{"p", manifest.at("p")}, {"sizes", manifest.at("sizes")}, {"sample_count", manifest.at("sample_count")}};
  if (manifest.contains("quality")) summary["quality"] = manifest.at("quality");
  log("select: |D_c| = " + std::to_string(selection_->clean_set.size()) + " of " +
      std::to_string(selection_->sample_ids.size()));
  return {summary, {"selection.json"}};
}

StageOutput Pipeline::stage_fuse() {
  if (!selection_) fail(ErrorKind::InvalidConfiguration, "fusion needs the select stage");
  const auto& shape = fit_[0].tensors.front().data;
  GateNetwork gate(shape.frames(), shape.joints(), data_.topology, cfg_.stage_seed("gate"), cfg_.gate_widths,
                   cfg_.backbone.temporal_kernel);
  std::vector<std::size_t> all(fit_[0].size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  gate.net().fit_input_normalization(make_concat_batch(fit_[0].tensors, fit_[1].tensors, fit_[2].tensors, all));
  std::array<std::unique_ptr<Classifier>, 3> experts;
  for (int m = 0; m < 3; ++m) experts[m] = expert(m).clone();
  fusion_ = std::make_unique<FusionModel>(std::move(experts), std::move(gate));
  const auto stats = finetune_gate(*fusion_, view(fit_), selection_->clean_set, cfg_.fusion, cfg_.stage_seed("fuse"));

  StageOutput out;
  save_checkpoint(fusion_->gate.net(), {"gate", "joint+bone+motion", "eval", cfg_.fusion.epochs},
                  out_ / "checkpoints/gate");
  out.artifacts = {"checkpoints/gate.json", "checkpoints/gate.bin"};
  if (!cfg_.fusion.freeze_experts)
    for (int m = 0; m < 3; ++m) {
      const std::string name(to_string(kModalities[m]));
      const auto& net = static_cast<const ReferenceSTGCN&>(*fusion_->experts[m]).net();
      save_checkpoint(net, {"fused-expert", name, "eval", cfg_.fusion.epochs},
                      out_ / "checkpoints" / ("fused_expert_" + name));
      out.artifacts.push_back("checkpoints/fused_expert_" + name + ".json");
      out.artifacts.push_back("checkpoints/fused_expert_" + name + ".bin");
    }

  // bundle header tying the gate to the experts and clean set it was tuned on
  json bundle{{"format", "skelnoise-fusion"},
              {"gate", {{"checkpoint", "checkpoints/gate"}, {"sha256", sha256_file(out_ / "checkpoints/gate.bin")}}},
              {"freeze_experts", cfg_.fusion.freeze_experts},
              {"clean_set_manifest_sha256", sha256_file(out_ / "selection.json")},
              {"clean_set_size", selection_->clean_set.size()},
              {"gate_widths", cfg_.gate_widths},
              {"hyperparameters", cfg_.fusion}};
  for (int m = 0; m < 3; ++m) {
    const std::string name(to_string(kModalities[m]));
    const std::string stem = (cfg_.fusion.freeze_experts ? "checkpoints/expert_" : "checkpoints/fused_expert_") + name;
    bundle["experts"][name] = {{"checkpoint", stem}, {"sha256", sha256_file(out_ / (stem + ".bin"))}};
  }
  write_json(out_ / "checkpoints/fusion.json", bundle);
  out.artifacts.push_back("checkpoints/fusion.json");

  write_json(out_ / "metrics/gate.json", json(stats));
  {
    std::ofstream csv(out_ / "metrics/gate.csv", std::ios::trunc);
    csv.precision(17);
    csv << "epoch,loss,weight_joint,weight_bone,weight_motion\n";
    for (const auto& s : stats)
      csv << s.epoch << ',' << s.loss << ',' << s.mean_weights[0] << ',' << s.mean_weights[1] << ','
          << s.mean_weights[2] << '\n';
  }
  out.artifacts.push_back("metrics/gate.json");
  out.artifacts.push_back("metrics/gate.csv");
  out.summary = {{"clean_set_size", selection_->clean_set.size()}, {"epochs", stats}};
  if (!stats.empty()) log("fuse: final gate loss " + std::to_string(stats.back().loss));
  return out;
}

StageOutput Pipeline::stage_evaluate() {
  for (int m = 0; m < 3; ++m) (void)expert(m);
  if (!plain_) fail(ErrorKind::InvalidConfiguration, "evaluation needs the plain stage");
  if (!fusion_) fail(ErrorKind::InvalidConfiguration, "evaluation needs the fuse stage");

  // The test split must carry the labels the dataset shipped with.
  std::unordered_map<std::string, int> original;
  for (const auto& s : data_.samples) original.emplace(s.sample_id, s.label);
  for (std::size_t i = 0; i < test_[0].size(); ++i)
    if (original.at(test_[0].sample_ids[i]) != test_[0].labels[i])
      fail(ErrorKind::Inconsistent, "test label of " + test_[0].sample_ids[i] + " differs from the dataset");

  const std::vector<int>& labels = test_[0].labels;
  json test = json::object();
  std::vector<std::pair<std::string, AccuracyMetrics>> rows;
  rows.emplace_back("plain", evaluate(*plain_, test_[0].tensors, labels));
  std::array<Matrix, 3> probs;
  for (int m = 0; m < 3; ++m) {
    probs[m] = softmax_rows(predict_logits(expert(m), test_[m].tensors));
    rows.emplace_back("expert_" + std::string(to_string(kModalities[m])), accuracy_from_scores(probs[m], labels));
  }
  rows.emplace_back("ensemble", accuracy_from_scores(fixed_weight_scores(probs, cfg_.ensemble_weights), labels));
  rows.emplace_back("cm_moe", accuracy_from_scores(fused_scores(*fusion_, view(test_)), labels));

  const Matrix w = gate_weights(fusion_->gate, view(test_));
  std::array<double, 3> mean_w{};
  for (std::size_t r = 0; r < w.rows; ++r)
    for (int m = 0; m < 3; ++m) mean_w[m] += w.at(r, m);
  for (double& v : mean_w) v /= static_cast<double>(w.rows);

  std::ofstream csv(out_ / "metrics.csv", std::ios::trunc);
  csv.precision(17);
  csv << "model,top1,top5,samples\n";
  for (const auto& [name, metrics] : rows) {
    test[name] = metrics;
    csv << name << ',' << metrics.top1 << ',' << metrics.top5 << ',' << metrics.samples << '\n';
    log("evaluate: " + name + " top-1 " + std::to_string(metrics.top1));
  }
  csv.close();
  return {{{"test", test}, {"gate_mean_weights_test", mean_w}, {"test_labels_verified", true}}, {"metrics.csv"}};
}

json Pipeline::build_report() const {
  json seeds{{"data_seed", cfg_.data_seed}, {"seed", cfg_.seed}};
  for (std::string_view s : {"split", "inject", "holdout", "plain", "cross-train:joint", "cross-train:bone",
                             "cross-train:motion", "gate", "fuse"})
    seeds[std::string(s)] = cfg_.stage_seed(s);
  json accuracy = json::object();
  for (const auto& [name, m] : summaries_.at("evaluate").at("test").items()) accuracy[name] = m.at("top1");
  return {{"format", "skelnoise-run-report"},
          {"version", 1},
          {"name", cfg_.name},
          {"config", report_config(cfg_)},
          {"config_sha256", sha256_hex(report_config(cfg_).dump())},
          {"seeds", seeds},
          {"accuracy", accuracy},
          {"stages", summaries_},
          {"artifacts", artifacts_}};
}

RunResult Pipeline::run() {
  validate(cfg_);
  kernels::set_default_backend(kernels::backend_from_string(cfg_.backend));
  if (cfg_.threads > 0) omp_set_num_threads(cfg_.threads);
  fs::create_directories(out_);
  save_config(cfg_, out_ / "config.json");

  if (!opt_.stop_after.empty() &&
      std::find(kStages.begin(), kStages.end(), opt_.stop_after) == kStages.end())
    fail(ErrorKind::InvalidArgument, "unknown stage '" + opt_.stop_after + "'");
  for (const auto& s : opt_.only)
    if (!is_checkpointed(s)) fail(ErrorKind::InvalidArgument, "'" + s + "' is not a checkpointed stage");

  RunResult result;
  json timings = json::object();
  std::string key;
  for (std::string_view stage : kStages) {
    key = sha256_hex(key + std::string(stage) + stage_inputs(cfg_, stage).dump());
    const std::string name(stage);
    const bool heavy = is_checkpointed(stage);
    const bool wanted = opt_.only.empty() || !heavy ||
                        std::find(opt_.only.begin(), opt_.only.end(), name) != opt_.only.end();
    if (!opt_.only.empty() && !heavy && stage != "data" && stage != "inject" && stage != "derive") break;

    json record;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (heavy && resumable(stage, key, &record)) {
        restore(stage);
        summaries_[name] = record.at("summary");
        for (const auto& [file, hash] : record.at("artifacts").items()) artifacts_[file] = hash.get<std::string>();
        result.resumed.push_back(name);
        log(name + ": resumed from checkpoint");
      } else if (wanted) {
        StageOutput out = execute(stage);
        write_record(stage, key, out);
        summaries_[name] = out.summary;
        for (const auto& file : out.artifacts) artifacts_[file] = sha256_file(out_ / file);
        result.executed.push_back(name);
      }
    } catch (const Error& e) {
      fail(ErrorKind::StageFailed, "stage '" + name + "' failed (" + std::string(to_string(e.kind())) +
                                       "): " + e.what() + "; completed stages are kept in " +
                                       (out_ / "stages").string() + " and resume on the next run");
    }
    timings[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (name == opt_.stop_after) break;
  }

  if (summaries_.contains("evaluate")) {
    result.report = build_report();
    result.report_path = out_ / "run_report.json";
    write_json(result.report_path, result.report);
    result.report_sha256 = sha256_file(result.report_path);
    emit_plots(result.report, out_ / "plots");
  }
  result.timings = timings;
  write_json(out_ / "timings.json", {{"seconds", timings}, {"executed", result.executed}, {"resumed", result.resumed}});
  return result;
}

}  // namespace

RunResult run_pipeline(const ExperimentConfig& config, const PipelineOptions& options) {
  return Pipeline(config, options).run();
}

}  // namespace skelnoise
