// mas: dataset generation, training, sampling, evaluation and ablation sweeps.

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mas/checkpoint.hpp"
#include "mas/eval.hpp"
#include "mas/mas.hpp"
#include "mas/motion_io.hpp"
#include "mas/parallel.hpp"
#include "mas/sds.hpp"
#include "mas/synthdata.hpp"
#include "mas/train.hpp"

namespace fs = std::filesystem;
using namespace mas;

namespace {

constexpr const char* kToolVersion = "1.0.0";
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitErrorBase = 10;

// ---------------------------------------------------------------------------
// Configuration

struct Config {
  std::uint64_t seed = 0;

  struct Data {
    std::size_t count = 1000;
    std::string skeleton = "human16";
    std::string family = "mixed";
    int length_min = 32;
    int length_max = 128;
    double fps = 20.0;
    double amplitude_min = 0.7, amplitude_max = 1.3;
    double frequency_min = 0.6, frequency_max = 1.4;
    double noise_sigma = 0.0;
    double dropout = 0.0;
    CameraDistribution camera;
  } data;

  struct Model {
    int diffusion_steps = 100;
    int hidden = 128;
    int mixing_layers = 4;
    int context_radius = 4;
    int time_embed_dim = 64;
  } model;

  struct Train {
    int steps = 6000;
    int batch_size = 32;
    double learning_rate = 4e-3;
    int crop_frames = 64;
    bool cosine_decay = true;
    double ema_decay = 0.0;
  } train;

  struct Sample {
    std::string method = "mas";
    int count = 10;
    int frames = 64;
    int views = 5;
    double elevation = 0.2;
    double camera_distance = 7.0;
    double focal = 7.0;
    bool consistent_noise = true;
    int jobs = 1;
    int sds_iterations = 200;
    double sds_step_size = 0.05;
    double sds_init_scale = 0.3;
    double x0_clip = 4.0;
  } sample;

  struct Eval {
    int repeats = 10;
    int k = 3;
    int diversity_pairs = 300;
    bool side_view = false;
  } eval;

  struct Ablate {
    std::vector<int> views;
    std::vector<double> distances;
    std::vector<int> steps;
  } ablate;
};

std::string mark_text(const YAML::Mark& m) {
  if (m.is_null()) return "";
  return "line " + std::to_string(m.line + 1) + ", column " + std::to_string(m.column + 1) + ": ";
}

[[noreturn]] void bad_config(const std::string& source, const YAML::Mark& mark, const std::string& field,
                             const std::string& what) {
  const std::string where = source == "command line" ? "" : mark_text(mark);
  fail(ErrorKind::BadConfig, source + ": " + where + "field '" + field + "': " + what);
}

template <class T>
T scalar_as(const YAML::Node& n, const std::string& source, const std::string& field, const char* expected) {
  if (!n.IsScalar()) bad_config(source, n.Mark(), field, std::string("expected ") + expected);
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    bad_config(source, n.Mark(), field, std::string("expected ") + expected + ", got '" + n.Scalar() + "'");
  }
}

/// One configurable field: how to read it from YAML and how to write it back.
struct Binding {
  std::function<void(const YAML::Node&, const std::string& source, const std::string& field)> set;
  std::function<YAML::Node()> get;
};

template <class T>
Binding bind_number(T& ref, const char* expected) {
  return {[&ref, expected](const YAML::Node& n, const std::string& src, const std::string& f) {
            ref = scalar_as<T>(n, src, f, expected);
          },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) return YAML::Node(format_double(ref));
            else return YAML::Node(ref);
          }};
}

Binding bind(int& r) { return bind_number(r, "integer"); }
template <class T>
  requires std::is_unsigned_v<T> && (!std::is_same_v<T, bool>)
Binding bind(T& r) { return bind_number(r, "non-negative integer"); }
Binding bind(double& r) { return bind_number(r, "number"); }
Binding bind(bool& r) { return bind_number(r, "boolean"); }

Binding bind(std::string& r, std::vector<std::string> allowed) {
  return {[&r, allowed](const YAML::Node& n, const std::string& src, const std::string& f) {
            const auto v = scalar_as<std::string>(n, src, f, "string");
            if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
              std::string list;
              for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
              bad_config(src, n.Mark(), f, "'" + v + "' is not one of " + list);
            }
            r = v;
          },
          [&r] { return YAML::Node(r); }};
}

template <class T>
Binding bind_list(std::vector<T>& r, const char* expected) {
  return {[&r, expected](const YAML::Node& n, const std::string& src, const std::string& f) {
            r.clear();
            if (n.IsScalar()) {
              // Comma-separated scalar, as given on the command line.
              std::stringstream ss(n.Scalar());
              std::string item;
              while (std::getline(ss, item, ',')) {
                YAML::Node v = YAML::Load(item);
                r.push_back(scalar_as<T>(v, src, f, expected));
              }
              return;
            }
            if (!n.IsSequence()) bad_config(src, n.Mark(), f, std::string("expected a list of ") + expected);
            for (const auto& v : n) r.push_back(scalar_as<T>(v, src, f, expected));
          },
          [&r] {
            YAML::Node seq(YAML::NodeType::Sequence);
            for (const auto& v : r) {
              if constexpr (std::is_floating_point_v<T>) seq.push_back(format_double(v));
              else seq.push_back(v);
            }
            return seq;
          }};
}

/// Dotted path -> binding, in emission order.
std::vector<std::pair<std::string, Binding>> bindings(Config& c) {
  return {
      {"seed", bind(c.seed)},
      {"data.count", bind(c.data.count)},
      {"data.skeleton", bind(c.data.skeleton, {"human16", "human16_with_ball"})},
      {"data.family", bind(c.data.family, {"walk", "swing", "jump", "orbit", "mixed"})},
      {"data.length_min", bind(c.data.length_min)},
      {"data.length_max", bind(c.data.length_max)},
      {"data.fps", bind(c.data.fps)},
      {"data.amplitude_min", bind(c.data.amplitude_min)},
      {"data.amplitude_max", bind(c.data.amplitude_max)},
      {"data.frequency_min", bind(c.data.frequency_min)},
      {"data.frequency_max", bind(c.data.frequency_max)},
      {"data.noise_sigma", bind(c.data.noise_sigma)},
      {"data.dropout", bind(c.data.dropout)},
      {"data.camera.yaw_min", bind(c.data.camera.yaw_min)},
      {"data.camera.yaw_max", bind(c.data.camera.yaw_max)},
      {"data.camera.pitch", bind(c.data.camera.pitch)},
      {"data.camera.distance", bind(c.data.camera.distance)},
      {"data.camera.focal", bind(c.data.camera.focal)},
      {"model.diffusion_steps", bind(c.model.diffusion_steps)},
      {"model.hidden", bind(c.model.hidden)},
      {"model.mixing_layers", bind(c.model.mixing_layers)},
      {"model.context_radius", bind(c.model.context_radius)},
      {"model.time_embed_dim", bind(c.model.time_embed_dim)},
      {"train.steps", bind(c.train.steps)},
      {"train.batch_size", bind(c.train.batch_size)},
      {"train.learning_rate", bind(c.train.learning_rate)},
      {"train.crop_frames", bind(c.train.crop_frames)},
      {"train.cosine_decay", bind(c.train.cosine_decay)},
      {"train.ema_decay", bind(c.train.ema_decay)},
      {"sample.method", bind(c.sample.method, {"mas", "sds", "ancestral2d"})},
      {"sample.count", bind(c.sample.count)},
      {"sample.frames", bind(c.sample.frames)},
      {"sample.views", bind(c.sample.views)},
      {"sample.elevation", bind(c.sample.elevation)},
      {"sample.camera_distance", bind(c.sample.camera_distance)},
      {"sample.focal", bind(c.sample.focal)},
      {"sample.consistent_noise", bind(c.sample.consistent_noise)},
      {"sample.jobs", bind(c.sample.jobs)},
      {"sample.sds_iterations", bind(c.sample.sds_iterations)},
      {"sample.sds_step_size", bind(c.sample.sds_step_size)},
      {"sample.sds_init_scale", bind(c.sample.sds_init_scale)},
      {"sample.x0_clip", bind(c.sample.x0_clip)},
      {"eval.repeats", bind(c.eval.repeats)},
      {"eval.k", bind(c.eval.k)},
      {"eval.diversity_pairs", bind(c.eval.diversity_pairs)},
      {"eval.side_view", bind(c.eval.side_view)},
      {"ablate.views", bind_list(c.ablate.views, "integers")},
      {"ablate.distances", bind_list(c.ablate.distances, "numbers")},
      {"ablate.steps", bind_list(c.ablate.steps, "integers")},
  };
}

void apply_node(Config& cfg, const YAML::Node& node, const std::string& source, const std::string& prefix = "") {
  if (!node.IsDefined() || node.IsNull()) return;
  if (!node.IsMap()) bad_config(source, node.Mark(), prefix.empty() ? "<root>" : prefix, "expected a mapping");
  auto table = bindings(cfg);
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& b) { return b.first == path; });
    if (it != table.end()) {
      it->second.set(kv.second, source, path);
      continue;
    }
    const bool is_section = std::any_of(table.begin(), table.end(),
                                        [&](const auto& b) { return b.first.rfind(path + ".", 0) == 0; });
    if (is_section && kv.second.IsMap()) {
      apply_node(cfg, kv.second, source, path);
      continue;
    }
    bad_config(source, kv.first.Mark(), path, is_section ? "expected a mapping" : "unknown field");
  }
}

void apply_file(Config& cfg, const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "config file not found: " + path.string());
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::ParserException& e) {
    fail(ErrorKind::BadConfig, path.string() + ": " + mark_text(e.mark) + e.msg);
  } catch (const YAML::BadFile&) {
    fail(ErrorKind::Io, "cannot read config file " + path.string());
  }
  // A run manifest can be fed back as a config.
  if (root.IsMap() && root["resolved_config"]) root = root["resolved_config"];
  apply_node(cfg, root, path.string());
}

void apply_override(Config& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorKind::BadConfig, "command line: override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::BadConfig, "command line: field '" + key + "': " + e.msg);
  }
  // Build {a: {b: value}} from "a.b".
  YAML::Node root(YAML::NodeType::Map);
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  YAML::Node leaf = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    YAML::Node m(YAML::NodeType::Map);
    m[*it] = leaf;
    leaf = m;
  }
  apply_node(cfg, leaf, "command line");
}

YAML::Node config_to_yaml(Config& cfg) {
  YAML::Node root(YAML::NodeType::Map);
  for (auto& [path, b] : bindings(cfg)) {
    std::vector<std::string> parts;
    std::stringstream ss(path);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    YAML::Node cur = root;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!cur[parts[i]]) cur[parts[i]] = YAML::Node(YAML::NodeType::Map);
      cur.reset(cur[parts[i]]);
    }
    cur[parts.back()] = b.get();
  }
  return root;
}

// ---------------------------------------------------------------------------
// Run manifest

std::string git_blob_sha1(const fs::path& path) {
  const std::vector<char> bytes = io::read_file(path);
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

struct RunManifest {
  RunManifest(std::string cmd, std::vector<std::string> args) : command(std::move(cmd)), argv(std::move(args)) {}

  std::string command;
  std::vector<std::string> argv;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const fs::path& path, Config& cfg) const {
    YAML::Node root(YAML::NodeType::Map);
    root["command"] = command;
    YAML::Node args(YAML::NodeType::Sequence);
    for (const auto& a : argv) args.push_back(a);
    root["argv"] = args;
    root["tool_version"] = kToolVersion;
    YAML::Node formats(YAML::NodeType::Map);
    formats["motion"] = kMotionFormatVersion;
    formats["checkpoint"] = kCheckpointVersion;
    formats["dataset"] = DatasetManifest::kFormatVersion;
    formats["features"] = kFeatureVersion;
    root["format_versions"] = formats;
    root["seed"] = cfg.seed;
    root["resolved_config"] = config_to_yaml(cfg);
    auto files = [](const std::vector<fs::path>& list) {
      YAML::Node seq(YAML::NodeType::Sequence);
      for (const auto& p : list) {
        YAML::Node e(YAML::NodeType::Map);
        e["path"] = p.string();
        e["sha1"] = git_blob_sha1(p);
        seq.push_back(e);
      }
      return seq;
    };
    root["inputs"] = files(inputs);
    root["outputs"] = files(outputs);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    root["wall_time_seconds"] = format_double(wall);
    YAML::Emitter out;
    out << root;
    io::write_text(path, std::string(out.c_str()) + "\n");
  }
};

// ---------------------------------------------------------------------------
// Shared helpers

fs::path default_data_dir() {
  if (const char* env = std::getenv("MAS_DATA_DIR"); env && *env) return env;
  return "mas_data";
}

Skeleton skeleton_for(const std::string& name) {
  return name == "human16_with_ball" ? Skeleton::human16_with_ball() : Skeleton::human16();
}

MotionFamilyParams family_params(const Config& c) {
  MotionFamilyParams p;
  p.family = motion_family_from_string(c.data.family);
  p.length_min = c.data.length_min;
  p.length_max = c.data.length_max;
  p.fps = c.data.fps;
  p.amplitude_min = c.data.amplitude_min;
  p.amplitude_max = c.data.amplitude_max;
  p.frequency_min = c.data.frequency_min;
  p.frequency_max = c.data.frequency_max;
  return p;
}

MasConfig mas_config(const Config& c, int steps, std::uint64_t seed) {
  MasConfig m;
  m.views = c.sample.views;
  m.elevation = c.sample.elevation;
  m.camera_distance = c.sample.camera_distance;
  m.focal = c.sample.focal;
  m.consistent_noise = c.sample.consistent_noise;
  m.x0_clip = c.sample.x0_clip;
  m.steps = steps;
  m.seed = seed;
  return m;
}

SdsConfig sds_config(const Config& c, int steps, std::uint64_t seed) {
  SdsConfig s;
  s.iterations = c.sample.sds_iterations;
  s.step_size = c.sample.sds_step_size;
  s.init_scale = c.sample.sds_init_scale;
  s.elevation = c.sample.elevation;
  s.camera_distance = c.sample.camera_distance;
  s.focal = c.sample.focal;
  s.x0_clip = c.sample.x0_clip;
  s.steps = steps;
  s.seed = seed;
  return s;
}

EvalConfig eval_config(const Config& c) {
  EvalConfig e;
  e.repeats = c.eval.repeats;
  e.k = c.eval.k;
  e.diversity_pairs = c.eval.diversity_pairs;
  e.seed = c.seed;
  e.cameras = c.data.camera;
  if (c.eval.side_view) e.cameras = side_view(e.cameras);
  return e;
}

std::string sample_name(std::size_t i) {
  std::ostringstream os;
  os << "sample_" << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

void write_json(const fs::path& path, const nlohmann::json& j) { io::write_text(path, j.dump(1) + "\n"); }

std::string trace_tsv(const MasTrace& trace) {
  std::ostringstream os;
  os << "t";
  for (std::size_t v = 0; v < trace.views.size(); ++v) os << "\tresidual_rms_" << v;
  os << "\ttriangulation_max_iterations\ttriangulation_mean_iterations\tdegenerate_points\n";
  os << std::setprecision(9);
  for (const auto& s : trace.steps) {
    os << s.t;
    for (double r : s.residual_rms) os << '\t' << r;
    os << '\t' << s.triangulation_iterations << '\t' << s.triangulation_mean_iterations << '\t'
       << s.degenerate_points << '\n';
  }
  return os.str();
}

fs::path records_path(const fs::path& dataset) { return dataset / "records.mmot"; }

/// Reads dimension field of a motion file without decoding records.
std::uint32_t motion_file_dims(const fs::path& path) {
  const std::vector<char> bytes = io::read_file(path);
  if (bytes.size() < 16 || std::string_view(bytes.data(), 8) != kMotionMagic)
    fail(ErrorKind::CorruptChecksum, path.string() + " is not a motion file");
  std::uint32_t dims = 0;
  std::memcpy(&dims, bytes.data() + 12, sizeof dims);
  return dims;
}

/// Generated motion files: a single file or every sample_*.mmot in a directory.
std::vector<fs::path> generated_files(const fs::path& p) {
  if (!fs::exists(p)) fail(ErrorKind::Io, "generated path not found: " + p.string());
  if (fs::is_regular_file(p)) return {p};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(p)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("sample_", 0) == 0 && e.path().extension() == ".mmot") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) fail(ErrorKind::InsufficientSamples, "no sample_*.mmot files in " + p.string());
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::vector<std::string> argv;
};

Config resolve(const Common& common, const std::vector<std::string>& flag_overrides) {
  Config cfg;
  if (!common.config_file.empty()) apply_file(cfg, common.config_file);
  for (const auto& o : common.overrides) apply_override(cfg, o);
  for (const auto& o : flag_overrides) apply_override(cfg, o);
  return cfg;
}

struct GenDataArgs {
  std::string out;
  bool json = false;
};

int cmd_gen_data(const Common& common, const std::vector<std::string>& flags, const GenDataArgs& a) {
  Config cfg = resolve(common, flags);
  RunManifest run{"gen-data", common.argv};
  const fs::path out = a.out.empty() ? default_data_dir() / "dataset" : fs::path(a.out);
  fs::create_directories(out);

  const Dataset ds = build_dataset(skeleton_for(cfg.data.skeleton), family_params(cfg), cfg.data.count,
                                   cfg.data.camera, cfg.seed, cfg.data.noise_sigma, cfg.data.dropout);
  const MotionSet<2> records = records_as_motion_set(ds);
  const MotionSet<3> truth = ground_truth_as_motion_set(ds);
  write_motion_set(records_path(out), records);
  write_motion_set(out / "ground_truth.mmot", truth);
  io::write_text(out / "manifest.txt", manifest_text(ds.manifest));
  run.outputs = {records_path(out), out / "ground_truth.mmot", out / "manifest.txt"};
  if (a.json) {
    write_json(out / "records.json", to_json(records));
    write_json(out / "ground_truth.json", to_json(truth));
    run.outputs.push_back(out / "records.json");
    run.outputs.push_back(out / "ground_truth.json");
  }

  // Audit: the stored file must reproduce the manifest statistics.
  const MotionSet<2> back = read_motion_set<2>(records_path(out));
  std::vector<DatasetRecord> recs;
  for (const auto& m : back.motions) recs.push_back({m, Eigen::VectorXd::Ones(m.size()), 0.0});
  const Normalizer n = compute_normalization(recs);
  const Normalizer& want = ds.manifest.normalization;
  const double tol = 1e-6 * want.scale;
  if (back.motions.size() != ds.manifest.count || back.joints != ds.manifest.joints ||
      std::abs(n.mean_u - want.mean_u) > tol || std::abs(n.mean_v - want.mean_v) > tol ||
      std::abs(n.scale - want.scale) > tol)
    fail(ErrorKind::CorruptChecksum, "dataset audit failed: stored records disagree with the manifest");

  run.write(out / "run_manifest.yaml", cfg);
  std::cout << "records: " << ds.records.size() << "\njoints: " << ds.manifest.joints
            << "\naudit: pass\noutput: " << out.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string resume;
};

int cmd_train(const Common& common, const std::vector<std::string>& flags, const TrainArgs& a) {
  Config cfg = resolve(common, flags);
  RunManifest run{"train", common.argv};
  const fs::path data = a.data.empty() ? default_data_dir() / "dataset" : fs::path(a.data);
  const fs::path out = a.out.empty() ? default_data_dir() / "model" : fs::path(a.out);
  const MotionSet<2> set = read_motion_set<2>(records_path(data));
  run.inputs.push_back(records_path(data));
  require(!set.motions.empty(), ErrorKind::DataEmpty, "dataset has no records");

  const NoiseSchedule sched = NoiseSchedule::cosine(cfg.model.diffusion_steps);
  Denoiser d;
  if (!a.resume.empty()) {
    d = load_checkpoint(a.resume, &sched);
    run.inputs.push_back(a.resume);
    require(d.joints() == set.joints, ErrorKind::ShapeMismatch, "checkpoint joint count differs from dataset");
  } else {
    Architecture arch;
    arch.joints = set.joints;
    arch.hidden = cfg.model.hidden;
    arch.mixing_layers = cfg.model.mixing_layers;
    arch.context_radius = cfg.model.context_radius;
    arch.time_embed_dim = cfg.model.time_embed_dim;
    d = build_denoiser(arch, sched, derive_seed(cfg.seed, {0x1A17u}));
    d.normalizer = set.normalization;
  }

  TrainingBatch batch;
  for (std::size_t i = 0; i < set.motions.size(); ++i) {
    batch.motions.push_back(d.normalizer.normalize(set.motions[i]));
    batch.confidences.push_back(set.confidences[i]);
  }
  TrainConfig tc;
  tc.steps = cfg.train.steps;
  tc.batch_size = cfg.train.batch_size;
  tc.learning_rate = cfg.train.learning_rate;
  tc.crop_frames = cfg.train.crop_frames;
  tc.cosine_decay = cfg.train.cosine_decay;
  tc.ema_decay = cfg.train.ema_decay;
  tc.seed = cfg.seed;
  const std::uint64_t first_step = d.train_step;
  const TrainResult r = train(std::move(d), batch, tc, sched, [&](std::uint64_t step, double loss) {
    if (step % 100 == 0) std::cerr << "progress step=" << step << " loss=" << loss << "\n";
  });

  fs::create_directories(out);
  save_checkpoint(r.denoiser, out / "checkpoint.ckpt");
  const std::vector<double> smooth = smooth_curve(r.loss_curve);
  std::ostringstream curve;
  curve << "step\tloss\tsmoothed\n" << std::setprecision(9);
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i)
    curve << first_step + i + 1 << '\t' << r.loss_curve[i] << '\t' << smooth[i] << '\n';
  io::write_text(out / "loss_curve.tsv", curve.str());
  run.outputs = {out / "checkpoint.ckpt", out / "loss_curve.tsv"};
  run.write(out / "run_manifest.yaml", cfg);
  std::cout << "train_step: " << r.denoiser.train_step << "\nparameters: " << r.denoiser.parameters().size()
            << "\nfinal_smoothed_loss: " << smooth.back() << "\ncheckpoint: " << (out / "checkpoint.ckpt").string()
            << "\n";
  return 0;
}

struct SampleArgs {
  std::string checkpoint;
  std::string out;
  bool json = false;
};

int cmd_sample(const Common& common, const std::vector<std::string>& flags, const SampleArgs& a) {
  Config cfg = resolve(common, flags);
  RunManifest run{"sample", common.argv};
  require(!a.checkpoint.empty(), ErrorKind::InvalidArgument, "--checkpoint is required");
  const Denoiser d = load_checkpoint(a.checkpoint);
  run.inputs.push_back(a.checkpoint);
  const fs::path out = a.out.empty() ? default_data_dir() / ("samples_" + cfg.sample.method) : fs::path(a.out);
  fs::create_directories(out);
  require(cfg.sample.count >= 1, ErrorKind::InvalidArgument, "sample count must be >= 1");
  require(cfg.sample.frames >= 1, ErrorKind::InvalidArgument, "frame count must be >= 1");
  const int T = d.diffusion_steps();
  const std::string method = cfg.sample.method;
  const auto n = static_cast<std::size_t>(cfg.sample.count);
  std::vector<std::vector<fs::path>> written(n);

  parallel_for(n, cfg.sample.jobs, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(cfg.seed, {i});
    const fs::path base = out / sample_name(i);
    auto& files = written[i];
    if (method == "ancestral2d") {
      MotionSet<2> s{d.joints(), 20.0, d.normalizer, {}, {}};
      s.motions.push_back(d.normalizer.denormalize(
          ancestral_sample_2d(d, cfg.sample.frames, d.joints(), NoiseSchedule::cosine(T), seed,
                              cfg.sample.x0_clip)));
      write_motion_set(base.string() + ".mmot", s);
      files.push_back(base.string() + ".mmot");
      if (a.json) {
        write_json(base.string() + ".json", to_json(s));
        files.push_back(base.string() + ".json");
      }
      return;
    }
    MotionSet<3> s{d.joints(), 20.0, d.normalizer, {}, {}};
    if (method == "sds") {
      s.motions.push_back(sds_generate(d, cfg.sample.frames, sds_config(cfg, T, seed)));
    } else {
      MasResult r = mas_sample(d, cfg.sample.frames, mas_config(cfg, T, seed));
      io::write_text(base.string() + ".trace.tsv", trace_tsv(r.trace));
      files.push_back(base.string() + ".trace.tsv");
      s.motions.push_back(std::move(r.motion));
    }
    write_motion_set(base.string() + ".mmot", s);
    files.insert(files.begin(), base.string() + ".mmot");
    if (a.json) {
      write_json(base.string() + ".json", to_json(s));
      files.push_back(base.string() + ".json");
    }
  });

  for (const auto& f : written) run.outputs.insert(run.outputs.end(), f.begin(), f.end());
  run.write(out / "run_manifest.yaml", cfg);
  std::cout << "method: " << method << "\nsamples: " << n << "\noutput: " << out.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string generated;
  std::string data;
  std::string out;
};

MetricsReport evaluate_files(const std::vector<fs::path>& files, const ReferenceFeatures& ref, const EvalConfig& ec) {
  const std::uint32_t dims = motion_file_dims(files.front());
  if (dims == 3) {
    std::vector<Motion3D> gen;
    for (const auto& f : files)
      for (auto& m : read_motion_set<3>(f).motions) gen.push_back(std::move(m));
    return evaluate_motions3d(gen, ref, ec);
  }
  std::vector<Motion2D> gen;
  for (const auto& f : files)
    for (auto& m : read_motion_set<2>(f).motions) gen.push_back(std::move(m));
  return evaluate_motions2d(gen, ref, ec);
}

int cmd_eval(const Common& common, const std::vector<std::string>& flags, const EvalArgs& a) {
  Config cfg = resolve(common, flags);
  RunManifest run{"eval", common.argv};
  const fs::path data = a.data.empty() ? default_data_dir() / "dataset" : fs::path(a.data);
  const MotionSet<2> ref_set = read_motion_set<2>(records_path(data));
  run.inputs.push_back(records_path(data));
  require(!a.generated.empty(), ErrorKind::InvalidArgument, "--generated is required");
  const std::vector<fs::path> files = generated_files(a.generated);
  run.inputs.insert(run.inputs.end(), files.begin(), files.end());

  const ReferenceFeatures ref = ReferenceFeatures::build(ref_set.motions, ref_set.normalization);
  const EvalConfig ec = eval_config(cfg);
  const MetricsReport rep = evaluate_files(files, ref, ec);
  const MetricStat floor = self_noise_floor(ref, ec);

  std::ostringstream text;
  text << rep.to_text() << "self_noise_floor_fid: " << floor.mean << "\nself_noise_floor_fid_ci95: " << floor.ci
       << "\nside_view: " << (cfg.eval.side_view ? "true" : "false") << "\n";
  const fs::path out = a.out.empty() ? (fs::is_directory(a.generated) ? fs::path(a.generated) : fs::path(a.generated).parent_path()) / "metrics.txt"
                                     : fs::path(a.out);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  io::write_text(out, text.str());
  run.outputs.push_back(out);
  run.write(out.parent_path() / (out.stem().string() + ".run_manifest.yaml"), cfg);
  std::cout << text.str() << MetricsReport::table_header() << "\n" << rep.table_row() << "\n";
  return 0;
}

struct AblateArgs {
  std::vector<std::string> checkpoints;
  std::string data;
  std::string out;
};

int cmd_ablate(const Common& common, const std::vector<std::string>& flags, const AblateArgs& a) {
  Config cfg = resolve(common, flags);
  RunManifest run{"ablate", common.argv};
  require(!a.checkpoints.empty(), ErrorKind::InvalidArgument, "at least one --checkpoint is required");
  std::map<int, Denoiser> by_steps;
  for (const auto& c : a.checkpoints) {
    Denoiser d = load_checkpoint(c);
    run.inputs.push_back(c);
    by_steps.emplace(d.diffusion_steps(), std::move(d));
  }
  const fs::path data = a.data.empty() ? default_data_dir() / "dataset" : fs::path(a.data);
  const MotionSet<2> ref_set = read_motion_set<2>(records_path(data));
  run.inputs.push_back(records_path(data));
  const ReferenceFeatures ref = ReferenceFeatures::build(ref_set.motions, ref_set.normalization);
  const EvalConfig ec = eval_config(cfg);

  struct Row {
    std::string param;
    std::string value;
    Config variant;
    int steps;
  };
  std::vector<Row> rows;
  const int base_steps = by_steps.count(cfg.model.diffusion_steps) ? cfg.model.diffusion_steps : by_steps.begin()->first;
  for (int v : cfg.ablate.views) {
    Config c = cfg;
    c.sample.views = v;
    rows.push_back({"views", std::to_string(v), c, base_steps});
  }
  for (double dist : cfg.ablate.distances) {
    Config c = cfg;
    c.sample.camera_distance = dist;
    // Focal scales with distance so the subject keeps its image size.
    c.sample.focal = cfg.sample.focal * dist / cfg.sample.camera_distance;
    rows.push_back({"camera_distance", format_double(dist), c, base_steps});
  }
  for (int s : cfg.ablate.steps) {
    if (!by_steps.count(s))
      fail(ErrorKind::VersionMismatch, "steps sweep value " + std::to_string(s) + " has no matching checkpoint");
    rows.push_back({"diffusion_steps", std::to_string(s), cfg, s});
  }
  require(!rows.empty(), ErrorKind::BadConfig, "ablation sweep is empty (set ablate.views/distances/steps)");

  std::ostringstream table;
  table << "param\tvalue\t" << MetricsReport::table_header() << "\n";
  for (const auto& row : rows) {
    const Denoiser& d = by_steps.at(row.steps);
    const auto n = static_cast<std::size_t>(row.variant.sample.count);
    std::vector<Motion3D> gen(n);
    parallel_for(n, row.variant.sample.jobs, [&](std::size_t i) {
      gen[i] = mas_sample(d, row.variant.sample.frames, mas_config(row.variant, row.steps, derive_seed(cfg.seed, {i})))
                   .motion;
    });
    const MetricsReport rep = evaluate_motions3d(gen, ref, ec);
    table << row.param << '\t' << row.value << '\t' << rep.table_row() << "\n";
    std::cerr << "progress " << row.param << "=" << row.value << " fid=" << rep.fid.mean << "\n";
  }
  const fs::path out = a.out.empty() ? default_data_dir() / "ablation.tsv" : fs::path(a.out);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  io::write_text(out, table.str());
  run.outputs.push_back(out);
  run.write(out.parent_path() / (out.stem().string() + ".run_manifest.yaml"), cfg);
  std::cout << table.str();
  return 0;
}

int report_error(ErrorKind kind, const std::string& message) {
  const int code = kExitErrorBase + static_cast<int>(kind);
  std::string escaped;
  for (char c : message) escaped += (c == '"' || c == '\\') ? std::string("\\") + c : (c == '\n' ? std::string(" ") : std::string(1, c));
  std::cerr << "mas: error kind=" << to_string(kind) << " code=" << code << " message=\"" << escaped << "\"\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view ancestral sampling of 3D motion from 2D data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common common;
  for (int i = 0; i < argc; ++i) common.argv.emplace_back(argv[i]);
  std::vector<std::string> flags;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_file, "YAML config file (or a run manifest)");
    sub->add_option("--set", common.overrides, "Override a config field: key.path=value")->take_all();
  };
  // Flag shortcuts become overrides applied after --set.
  auto shortcut = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags.push_back(key + "=" + v); }, help);
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic 2D dataset with its 3D sidecar");
  GenDataArgs gen_args;
  add_common(gen);
  gen->add_option("-o,--out", gen_args.out, "Output directory (default $MAS_DATA_DIR/dataset)");
  gen->add_flag("--json", gen_args.json, "Also write lossless JSON copies");
  shortcut(gen, "--seed", "seed", "Master seed");
  shortcut(gen, "-n,--count", "data.count", "Record count");

  auto* tr = app.add_subcommand("train", "Train the 2D motion denoiser");
  TrainArgs train_args;
  add_common(tr);
  tr->add_option("-d,--data", train_args.data, "Dataset directory (default $MAS_DATA_DIR/dataset)");
  tr->add_option("-o,--out", train_args.out, "Output directory (default $MAS_DATA_DIR/model)");
  tr->add_option("--resume", train_args.resume, "Continue from this checkpoint");
  shortcut(tr, "--seed", "seed", "Master seed");
  shortcut(tr, "--steps", "train.steps", "Optimizer steps");
  shortcut(tr, "--lr", "train.learning_rate", "Learning rate");
  shortcut(tr, "--batch-size", "train.batch_size", "Batch size");

  auto* sa = app.add_subcommand("sample", "Generate motions with mas, sds or ancestral2d");
  SampleArgs sample_args;
  add_common(sa);
  sa->add_option("--checkpoint", sample_args.checkpoint, "Denoiser checkpoint")->required();
  sa->add_option("-o,--out", sample_args.out, "Output directory");
  sa->add_flag("--json", sample_args.json, "Also write lossless JSON copies");
  sa->add_flag_callback("--no-3d-noise", [&] { flags.push_back("sample.consistent_noise=false"); },
                        "Independent per-view noise instead of projected 3D noise");
  shortcut(sa, "--seed", "seed", "Master seed");
  shortcut(sa, "--method", "sample.method", "mas, sds or ancestral2d");
  shortcut(sa, "-n,--count", "sample.count", "Number of samples");
  shortcut(sa, "--frames", "sample.frames", "Frames per sample");
  shortcut(sa, "--views", "sample.views", "Views in the MAS ring");
  shortcut(sa, "--jobs", "sample.jobs", "Parallel sample jobs");

  auto* ev = app.add_subcommand("eval", "Score generated motions against a dataset");
  EvalArgs eval_args;
  add_common(ev);
  ev->add_option("-g,--generated", eval_args.generated, "Sample directory or motion file")->required();
  ev->add_option("-d,--data", eval_args.data, "Reference dataset directory");
  ev->add_option("-o,--out", eval_args.out, "Metrics report path");
  ev->add_flag_callback("--side-view", [&] { flags.push_back("eval.side_view=true"); },
                        "Yaw ~ U(pi/4, 3pi/4) instead of U(0, 2pi)");
  shortcut(ev, "--seed", "seed", "Master seed");
  shortcut(ev, "--repeats", "eval.repeats", "Metric repeats");

  auto* ab = app.add_subcommand("ablate", "Sweep MAS settings and tabulate metrics");
  AblateArgs ablate_args;
  add_common(ab);
  ab->add_option("--checkpoint", ablate_args.checkpoints, "Checkpoint(s); one per diffusion step count")->required();
  ab->add_option("-d,--data", ablate_args.data, "Reference dataset directory");
  ab->add_option("-o,--out", ablate_args.out, "Table path");
  shortcut(ab, "--seed", "seed", "Master seed");
  shortcut(ab, "-n,--count", "sample.count", "Samples per configuration");
  shortcut(ab, "--jobs", "sample.jobs", "Parallel sample jobs");
  shortcut(ab, "--views", "ablate.views", "Comma-separated view counts");
  shortcut(ab, "--distances", "ablate.distances", "Comma-separated camera distances");
  shortcut(ab, "--steps", "ablate.steps", "Comma-separated diffusion step counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common, flags, gen_args);
    if (tr->parsed()) return cmd_train(common, flags, train_args);
    if (sa->parsed()) return cmd_sample(common, flags, sample_args);
    if (ev->parsed()) return cmd_eval(common, flags, eval_args);
    if (ab->parsed()) return cmd_ablate(common, flags, ablate_args);
  } catch (const Error& e) {
    std::string msg = e.what();
    const std::string prefix = std::string(to_string(e.kind())) + ": ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    return report_error(e.kind(), msg);
  } catch (const fs::filesystem_error& e) {
    return report_error(ErrorKind::Io, e.what());
  } catch (const std::exception& e) {
    std::cerr << "mas: error kind=Internal code=" << kExitInternal << " message=\"" << e.what() << "\"\n";
    return kExitInternal;
  }
  return kExitUsage;
}
