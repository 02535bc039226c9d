#include "skelnoise/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "skelnoise/error.hpp"
#include "skelnoise/json_io.hpp"
#include "skelnoise/rng.hpp"

namespace skelnoise {

namespace fs = std::filesystem;
using nlohmann::json;

SKELNOISE_JSON_DEFINE(SyntheticSpec, class_count, samples_per_class,
                                                frames, topology, subjects, cameras,
                                                camera_yaw_deg, amplitude, class_separation,
                                                amplitude_jitter, tempo_jitter, coordinate_noise,
                                                style_strength)

namespace {

constexpr std::array<char, 4> kMagic{'S', 'K', 'L', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t to_le(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::little) return x;
  return (x >> 24) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
}

void write_u32(std::ostream& out, std::uint32_t x) {
  x = to_le(x);
  out.write(reinterpret_cast<const char*>(&x), sizeof x);
}

std::uint32_t read_u32(std::istream& in, const fs::path& file) {
  std::uint32_t x = 0;
  if (!in.read(reinterpret_cast<char*>(&x), sizeof x))
    fail(ErrorKind::Format, file.string() + ": truncated header");
  return to_le(x);
}

std::vector<std::array<double, 3>> rest_pose(const SkeletonTopology& topo) {
  std::vector<std::array<double, 3>> pose(topo.joint_count());
  if (topo.name() == "toy9") {
    pose = {{0.0, 0.0, 0.0},   {0.0, 0.5, 0.0},  {0.0, 0.8, 0.0},
            {-0.3, 0.4, 0.0},  {-0.55, 0.2, 0.0}, {0.3, 0.4, 0.0},
            {0.55, 0.2, 0.0},  {-0.15, -0.8, 0.0}, {0.15, -0.8, 0.0}};
    return pose;
  }
  // Generic layout: each joint sits at a random offset from its parent.
  Rng rng(derive_seed(0x5eedULL, topo.name()));
  std::vector<bool> placed(topo.joint_count(), false);
  placed[topo.root()] = true;
  bool progress = true;
  std::vector<std::array<double, 3>> offsets(topo.joint_count());
  for (auto& o : offsets) o = {0.15 * rng.normal(), 0.15 * rng.normal(), 0.05 * rng.normal()};
  while (progress) {
    progress = false;
    for (int v = 0; v < topo.joint_count(); ++v) {
      const int p = topo.parent(v);
      if (placed[v] || !placed[p]) continue;
      for (int c = 0; c < 3; ++c) pose[v][c] = pose[p][c] + offsets[v][c];
      placed[v] = true;
      progress = true;
    }
  }
  return pose;
}

struct JointWave {
  std::array<double, 3> direction{};
  double amplitude = 0.0;
  double frequency = 1.0;
  double phase = 0.0;
};

std::vector<JointWave> random_waves(Rng& rng, int joints, int root, double amplitude) {
  std::vector<JointWave> waves(joints);
  for (int v = 0; v < joints; ++v) {
    JointWave& w = waves[v];
    if (v == root) continue;
    double norm = 0.0;
    for (double& d : w.direction) {
      d = rng.normal();
      norm += d * d;
    }
    norm = std::sqrt(norm);
    for (double& d : w.direction) d /= norm;
    w.amplitude = amplitude * rng.uniform(0.3, 1.0);
    w.frequency = rng.uniform(0.5, 2.0);
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return waves;
}

}  // namespace

DatasetFormat dataset_format_from_string(const std::string& name) {
  if (name == "array") return DatasetFormat::ArrayContainer;
  if (name == "synthetic") return DatasetFormat::SyntheticManifest;
  fail(ErrorKind::InvalidArgument, "unknown dataset format '" + name + "'");
}

std::vector<SkeletonSequence> generate_synthetic_dataset(const SyntheticSpec& spec,
                                                         std::uint64_t seed) {
  if (spec.class_count < 2) fail(ErrorKind::InvalidArgument, "synthetic spec needs K >= 2");
  if (spec.frames < 2) fail(ErrorKind::InvalidArgument, "synthetic spec needs T >= 2");
  if (spec.samples_per_class < 1 || spec.subjects < 1 || spec.cameras < 1)
    fail(ErrorKind::InvalidArgument, "synthetic spec needs positive sample/subject/camera counts");

  const SkeletonTopology topo = SkeletonTopology::by_name(spec.topology);
  const int V = topo.joint_count();
  const int T = spec.frames;
  const auto pose = rest_pose(topo);

  Rng template_rng(derive_seed(seed, "templates"));
  const auto shared = random_waves(template_rng, V, topo.root(), spec.amplitude);
  std::vector<std::vector<JointWave>> classes;
  for (int k = 0; k < spec.class_count; ++k)
    classes.push_back(random_waves(template_rng, V, topo.root(), spec.amplitude));

  Rng subject_rng(derive_seed(seed, "subjects"));
  std::vector<double> subject_scale(spec.subjects);
  for (double& s : subject_scale) s = subject_rng.uniform(0.9, 1.1);

  const int total = spec.class_count * spec.samples_per_class;
  std::vector<SkeletonSequence> out(total);
  for (int k = 0; k < spec.class_count; ++k) {
    for (int i = 0; i < spec.samples_per_class; ++i) {
      const int index = k * spec.samples_per_class + i;
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
      SkeletonSequence& seq = out[index];
      char id[32];
      std::snprintf(id, sizeof id, "syn_%06d", index);
      seq.sample_id = id;
      seq.label = k;
      seq.subject_id = i % spec.subjects;
      seq.camera_id = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.cameras)));
      seq.frames = Tensor3f(T, V, kCoordinates);

      const double scale = subject_scale[seq.subject_id];
      const double gain = 1.0 + spec.amplitude_jitter * rng.normal();
      const double tempo = 1.0 + spec.tempo_jitter * rng.uniform(-1.0, 1.0);
      const double shift = rng.uniform(-0.5, 0.5);
      const double yaw = (seq.camera_id - 0.5 * (spec.cameras - 1)) * spec.camera_yaw_deg *
                         std::numbers::pi / 180.0;
      const double cy = std::cos(yaw), sy = std::sin(yaw);
      const std::array<double, 3> offset{rng.uniform(-0.5, 0.5), rng.uniform(-0.1, 0.1),
                                         rng.uniform(-0.5, 0.5)};
      const auto style = random_waves(rng, V, topo.root(), spec.amplitude * spec.style_strength);

      for (int t = 0; t < T; ++t) {
        const double phase_t = 2.0 * std::numbers::pi * tempo * t / T + shift;
        for (int v = 0; v < V; ++v) {
          std::array<double, 3> p{scale * pose[v][0], scale * pose[v][1], scale * pose[v][2]};
          for (int part = 0; part < 3; ++part) {
            const JointWave& w = part == 0 ? shared[v] : part == 1 ? classes[k][v] : style[v];
            const double weight = part == 1 ? spec.class_separation : 1.0;
            const double s =
                weight * gain * w.amplitude * std::sin(w.frequency * phase_t + w.phase);
            for (int c = 0; c < 3; ++c) p[c] += s * w.direction[c];
          }
          for (double& x : p) x += spec.coordinate_noise * rng.normal();
          const double x = cy * p[0] + sy * p[2];
          const double z = -sy * p[0] + cy * p[2];
          seq.frames.at(t, v, 0) = static_cast<float>(x + offset[0]);
          seq.frames.at(t, v, 1) = static_cast<float>(p[1] + offset[1]);
          seq.frames.at(t, v, 2) = static_cast<float>(z + offset[2]);
        }
      }
    }
  }
  return out;
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  Dataset d;
  d.class_count = spec.class_count;
  d.topology = spec.topology;
  d.joint_count = SkeletonTopology::by_name(spec.topology).joint_count();
  d.samples = generate_synthetic_dataset(spec, seed);
  return d;
}

void write_tensor_file(const Tensor3f& tensor, const fs::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + file.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(tensor.frames()));
  write_u32(out, static_cast<std::uint32_t>(tensor.joints()));
  write_u32(out, static_cast<std::uint32_t>(tensor.channels()));
  for (float x : tensor.data()) write_u32(out, std::bit_cast<std::uint32_t>(x));
  if (!out) fail(ErrorKind::Io, "write failed for " + file.string());
}

Tensor3f read_tensor_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "missing tensor file " + file.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    fail(ErrorKind::Format, file.string() + ": bad magic");
  if (read_u32(in, file) != kVersion) fail(ErrorKind::Format, file.string() + ": unsupported version");
  const auto T = read_u32(in, file), V = read_u32(in, file), C = read_u32(in, file);
  if (T > (1u << 20) || V > (1u << 12) || C > 64)
    fail(ErrorKind::Format, file.string() + ": implausible shape");
  Tensor3f t(static_cast<int>(T), static_cast<int>(V), static_cast<int>(C));
  std::vector<std::uint32_t> raw(t.size());
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4)))
    fail(ErrorKind::Format, file.string() + ": truncated payload");
  auto dst = t.data();
  for (std::size_t i = 0; i < raw.size(); ++i) dst[i] = std::bit_cast<float>(to_le(raw[i]));
  return t;
}

void save_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir / "samples");
  json manifest;
  manifest["format"] = "skelnoise-array";
  manifest["version"] = kVersion;
  manifest["class_count"] = data.class_count;
  manifest["joint_count"] = data.joint_count;
  manifest["topology"] = data.topology;
  json samples = json::array();
  for (const SkeletonSequence& s : data.samples) {
    const std::string rel = "samples/" + s.sample_id + ".skt";
    write_tensor_file(s.frames, dir / rel);
    samples.push_back({{"sample_id", s.sample_id},
                       {"label", s.label},
                       {"subject_id", s.subject_id},
                       {"camera_id", s.camera_id},
                       {"file", rel}});
  }
  manifest["samples"] = std::move(samples);
  std::ofstream out(dir / "manifest.json");
  if (!out) fail(ErrorKind::Io, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

namespace {

Dataset load_array_container(const fs::path& path) {
  const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
  const fs::path root = manifest_path.parent_path();
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorKind::Io, "missing manifest " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, manifest_path.string() + ": " + e.what());
  }

  Dataset d;
  std::vector<json> records;
  try {
    d.class_count = manifest.at("class_count").get<int>();
    d.joint_count = manifest.at("joint_count").get<int>();
    d.topology = manifest.value("topology", std::string{});
    for (const json& r : manifest.at("samples")) records.push_back(r);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, manifest_path.string() + ": malformed header: " + e.what());
  }
  std::sort(records.begin(), records.end(), [](const json& a, const json& b) {
    return a.at("sample_id").get<std::string>() < b.at("sample_id").get<std::string>();
  });

  d.samples.resize(records.size());
  std::exception_ptr error;
  const auto n = static_cast<std::int64_t>(records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      const json& r = records[i];
      SkeletonSequence& s = d.samples[i];
      s.sample_id = r.at("sample_id").get<std::string>();
      s.label = r.at("label").get<int>();
      s.subject_id = r.value("subject_id", 0);
      s.camera_id = r.value("camera_id", 0);
      s.frames = read_tensor_file(root / r.at("file").get<std::string>());
      if (s.frames.joints() != d.joint_count)
        fail(ErrorKind::ShapeMismatch, s.sample_id + ": manifest declares V=" +
                                           std::to_string(d.joint_count) + ", file has V=" +
                                           std::to_string(s.frames.joints()));
      validate(s, d.class_count);
    } catch (const json::exception& e) {
#pragma omp critical
      if (!error) error = std::make_exception_ptr(Error(ErrorKind::Format, e.what()));
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return d;
}

}  // namespace

Dataset load_dataset(const fs::path& path, DatasetFormat format) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "missing path " + path.string());
  if (format == DatasetFormat::ArrayContainer) return load_array_container(path);

  std::ifstream in(path);
  json doc;
  try {
    doc = json::parse(in);
    return make_synthetic_dataset(doc.at("spec").get<SyntheticSpec>(),
                                  doc.value("seed", std::uint64_t{0}));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, path.string() + ": " + e.what());
  }
}


}  // namespace skelnoise
