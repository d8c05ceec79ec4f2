#include "geoedit/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include <Eigen/Core>
#include <json.hpp>

#include "geoedit/errors.hpp"
#include "geoedit/eval_metrics.hpp"
#include "geoedit/flow_match.hpp"
#include "geoedit/pose_estimator.hpp"
#include "geoedit/scene_synth.hpp"
#include "json_fields.hpp"

namespace geoedit {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t root, const std::string& stream) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : stream) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(root), static_cast<std::uint32_t>(root >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

fs::path resolve_out_root(const std::string& explicit_out) {
  if (!explicit_out.empty()) return explicit_out;
  if (const char* env = std::getenv("GEOEDIT_OUT"); env && *env) return env;
  return "geoedit_out";
}

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  int threads = 1;
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
  return j;
}

std::uint64_t root_seed(const Globals& g, const json& cfg) {
  std::uint64_t seed = 0;
  detail::read_optional(cfg, "seed", seed, "config");
  return g.seed_set ? g.seed : seed;
}

template <class T>
T sub_config(const json& cfg, const char* key, T value) {
  if (!cfg.contains(key)) return value;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

void echo_config(const fs::path& dir, const std::string& command, const json& effective) {
  fs::create_directories(dir);
  const fs::path path = dir / (command + ".config.json");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << effective.dump(2) << "\n";
}

fs::path manifest_root(const fs::path& manifest) {
  return manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
}

int stride_of(const NetConfig& cfg) {
  const int s = static_cast<int>(std::lround(std::sqrt(cfg.latent_channels / 3.0)));
  if (3 * s * s != cfg.latent_channels || s * s != cfg.mask_channels)
    throw IncompatibleCheckpoint("network channels do not match any encoder stride");
  return s;
}

// ---------------------------------------------------------------------------

struct GenFlags {
  int n = -1;
};

int cmd_gen_data(const Globals& g, const GenFlags& flags, std::ostream& out, std::ostream& err) {
  const json raw = read_config(g.config);
  GenConfig cfg;
  try {
    cfg = raw.get<GenConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("gen-data config: ") + e.what());
  }
  if (flags.n >= 0) cfg.n_pairs = flags.n;
  const std::uint64_t root = g.seed_set ? g.seed : cfg.seed;
  cfg.seed = root;
  cfg.validate();
  const fs::path dir = resolve_out_root(g.out);
  echo_config(dir, "gen-data",
              {{"root_seed", root}, {"stream_seeds", {{"data", derive_seed(root, "data")}}}, {"config", cfg}});
  GenConfig run = cfg;
  run.seed = derive_seed(root, "data");
  const fs::path manifest = build_dataset(run, dir);
  err << "generated " << run.n_pairs << " pairs\n";
  out << json{{"manifest", manifest.string()}, {"pairs", run.n_pairs}}.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string manifest, init_checkpoint;
  int steps = -1;
  int stage = 0;
};

int cmd_train(const Globals& g, const TrainFlags& flags, std::ostream& out, std::ostream& err) {
  const json raw = read_config(g.config);
  detail::reject_unknown_keys(raw, {"manifest", "init_checkpoint", "stride", "net", "train", "seed"},
                              "train config");
  std::string manifest, init;
  int stride = 4;
  detail::read_optional(raw, "manifest", manifest, "train config");
  detail::read_optional(raw, "init_checkpoint", init, "train config");
  detail::read_optional(raw, "stride", stride, "train config");
  if (stride != 2 && stride != 4) throw ConfigError("stride must be 2 or 4");
  TrainConfig tc = sub_config(raw, "train", TrainConfig{});
  NetConfig nc = sub_config(raw, "net", NetConfig::for_stride(stride));
  if (!flags.manifest.empty()) manifest = flags.manifest;
  if (!flags.init_checkpoint.empty()) init = flags.init_checkpoint;
  if (flags.steps >= 0) tc.steps = flags.steps;
  if (flags.stage != 0) tc.stage = flags.stage;
  const std::uint64_t root = root_seed(g, raw);
  tc.seed = derive_seed(root, "train");
  tc.validate();
  if (manifest.empty()) throw ConfigError("train: manifest is required");
  if (tc.stage == 2 && init.empty()) {
    err << "error: stage 2 training needs --init-checkpoint from a stage 1 run\n";
    return kExitMissingInit;
  }

  VelocityNet<float> net = init.empty() ? VelocityNet<float>::init(nc, derive_seed(root, "init"))
                                        : load_checkpoint(init);
  nc = net.config();
  stride = stride_of(nc);

  const fs::path dir = resolve_out_root(g.out);
  echo_config(dir, "train",
              {{"root_seed", root},
               {"manifest", manifest},
               {"init_checkpoint", init},
               {"stride", stride},
               {"net", nc},
               {"train", tc}});
  const std::vector<ManifestRecord> records = load_manifest(manifest);
  const std::vector<CompactPair> data = load_training_set(records, manifest_root(manifest));
  err << "training stage " << tc.stage << " on " << data.size() << " pairs for " << tc.steps << " steps\n";
  TrainResult result;
  if (tc.steps > 0)
    result = train(net, data, tc, stride, [&](int step, double loss) {
      if ((step + 1) % 1000 == 0) err << "step " << step + 1 << " loss " << loss << "\n";
    });
  const fs::path ckpt = dir / "checkpoint.bin";
  save_checkpoint(ckpt, net, {{"stage", tc.stage}, {"steps", tc.steps}, {"root_seed", root}});
  write_trace_csv(dir / "loss.csv", result);
  out << json{{"checkpoint", ckpt.string()}, {"loss_trace", (dir / "loss.csv").string()}}.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SampleFlags {
  std::string checkpoint, manifest, task;
  int steps = -1;
  int limit = -1;
  double guidance = -1.0;
};

struct SampleJob {
  std::string id;
  std::uint64_t index = 0;
  SamplePair pair;
};

std::vector<SampleJob> explicit_inputs(const json& inputs) {
  std::vector<SampleJob> jobs;
  std::uint64_t index = 0;
  for (const auto& in : inputs) {
    detail::reject_unknown_keys(in, {"id", "x_src", "m_src", "i_ref", "x_bg", "s_src", "s_tgt"},
                                "sample input");
    SampleJob job;
    try {
      job.id = in.at("id").get<std::string>();
      job.pair.x_src = read_ppm(in.at("x_src").get<std::string>());
      job.pair.m_src = read_mask_pgm(in.at("m_src").get<std::string>());
      job.pair.i_ref = read_ppm(in.at("i_ref").get<std::string>());
      if (in.contains("x_bg")) job.pair.x_bg = read_ppm(in.at("x_bg").get<std::string>());
      job.pair.s_src = in.at("s_src").get<EulerCamera>();
      job.pair.s_tgt = in.at("s_tgt").get<EulerCamera>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("sample input: ") + e.what());
    } catch (const BadParams& e) {
      throw ConfigError(std::string("sample input camera: ") + e.what());
    }
    job.pair.f = build_descriptor(job.pair.s_src, job.pair.s_tgt);
    job.index = index++;
    jobs.push_back(std::move(job));
  }
  return jobs;
}

int cmd_sample(const Globals& g, const SampleFlags& flags, std::ostream& out, std::ostream& err) {
  const json raw = read_config(g.config);
  const char* what = "sample config";
  detail::reject_unknown_keys(
      raw, {"checkpoint", "manifest", "ids", "limit", "task", "steps", "guidance", "inputs", "seed"}, what);
  std::string checkpoint, manifest, task_name = "manipulate";
  std::vector<std::string> ids;
  int limit = 0, steps = 32;
  double guidance = 1.5;
  detail::read_optional(raw, "checkpoint", checkpoint, what);
  detail::read_optional(raw, "manifest", manifest, what);
  detail::read_optional(raw, "ids", ids, what);
  detail::read_optional(raw, "limit", limit, what);
  detail::read_optional(raw, "task", task_name, what);
  detail::read_optional(raw, "steps", steps, what);
  detail::read_optional(raw, "guidance", guidance, what);
  if (!flags.checkpoint.empty()) checkpoint = flags.checkpoint;
  if (!flags.manifest.empty()) manifest = flags.manifest;
  if (!flags.task.empty()) task_name = flags.task;
  if (flags.steps >= 0) steps = flags.steps;
  if (flags.limit >= 0) limit = flags.limit;
  if (flags.guidance >= 0.0) guidance = flags.guidance;
  const Task task = task_from_string(task_name);
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (limit < 0) throw ConfigError("limit must be >= 0");
  if (!std::isfinite(guidance)) throw ConfigError("guidance must be finite");
  if (checkpoint.empty()) throw ConfigError("sample: checkpoint is required");
  const bool has_inputs = raw.contains("inputs");
  if (manifest.empty() == !has_inputs)
    throw ConfigError("sample: give exactly one of manifest or inputs");
  const std::uint64_t root = root_seed(g, raw);

  json meta;
  const VelocityNet<float> net = load_checkpoint(checkpoint, &meta);
  const int stride = stride_of(net.config());

  std::vector<SampleJob> jobs;
  if (has_inputs) {
    jobs = explicit_inputs(raw.at("inputs"));
  } else {
    std::vector<ManifestRecord> records = load_manifest(manifest);
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    if (!ids.empty()) {
      std::vector<ManifestRecord> chosen;
      for (const auto& id : ids) {
        auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.id == id; });
        if (it == records.end()) throw ConfigError("sample: unknown id " + id);
        chosen.push_back(*it);
      }
      records = std::move(chosen);
    }
    if (limit > 0 && static_cast<std::size_t>(limit) < records.size()) records.resize(limit);
    for (const auto& r : records) jobs.push_back({r.id, r.index, load_pair(r, manifest_root(manifest))});
  }

  const fs::path dir = resolve_out_root(g.out);
  const std::uint64_t sample_seed = derive_seed(root, "sample");
  echo_config(dir, "sample",
              {{"root_seed", root},
               {"checkpoint", checkpoint},
               {"checkpoint_meta", meta},
               {"manifest", manifest},
               {"ids", ids},
               {"limit", limit},
               {"task", to_string(task)},
               {"steps", steps},
               {"guidance", guidance},
               {"stream_seeds", {{"sample", sample_seed}}}});
  const PoseEncoder encoder = net.pose_encoder();
  json written = json::array();
  for (const auto& job : jobs) {
    const ConditioningTuple cond = assemble_conditioning(job.pair, task, encoder, stride);
    std::mt19937_64 rng = sample_rng(sample_seed, job.index);
    const RgbImage img = toy_decode(euler_sample(net, cond, steps, rng, guidance));
    const fs::path path = dir / (job.id + ".ppm");
    write_ppm(path, img);
    std::ofstream side(dir / (job.id + ".json"));
    side << json{{"id", job.id},
                 {"task", to_string(task)},
                 {"descriptor", cond.descriptor.flatten()},
                 {"pose_dropped", cond.pose_dropped},
                 {"target_mask_pixels", pixel_shuffle_inverse(cond.tgt_mask_code).count_ones()},
                 {"source_mask_pixels", pixel_shuffle_inverse(cond.src_mask_code).count_ones()},
                 {"steps", steps},
                 {"guidance", guidance},
                 {"index", job.index}}
                .dump(2)
         << "\n";
    if (!side) throw IoError("cannot write sidecar for " + job.id);
    written.push_back(path.string());
  }
  err << "wrote " << written.size() << " samples\n";
  out << json{{"outputs", written}}.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PoseFlags {
  std::string mesh, mask, primitive;
  std::vector<double> params;
  int subdivisions = -1;
};

int cmd_estimate_pose(const Globals& g, const PoseFlags& flags, std::ostream& out, std::ostream& err) {
  const json raw = read_config(g.config);
  const char* what = "estimate-pose config";
  detail::reject_unknown_keys(raw, {"mesh", "primitive", "mask", "estimator", "seed"}, what);
  std::string mesh_path, mask_path;
  detail::read_optional(raw, "mesh", mesh_path, what);
  detail::read_optional(raw, "mask", mask_path, what);
  const EstimatorConfig ec = sub_config(raw, "estimator", EstimatorConfig{});
  try {
    ec.validate();
  } catch (const BadParams& e) {
    throw ConfigError(std::string("estimator: ") + e.what());
  }
  std::optional<ObjectSpec> prim;
  if (raw.contains("primitive")) {
    const json& p = raw.at("primitive");
    detail::reject_unknown_keys(p, {"kind", "params", "subdivisions"}, "primitive");
    ObjectSpec spec;
    spec.kind = primitive_from_string(p.value("kind", std::string("box")));
    detail::read_optional(p, "params", spec.params, "primitive");
    detail::read_optional(p, "subdivisions", spec.subdivisions, "primitive");
    prim = spec;
  }
  if (!flags.mesh.empty()) mesh_path = flags.mesh, prim.reset();
  if (!flags.primitive.empty()) {
    ObjectSpec spec;
    spec.kind = primitive_from_string(flags.primitive);
    prim = spec;
    mesh_path.clear();
  }
  if (prim && !flags.params.empty()) prim->params = flags.params;
  if (prim && flags.subdivisions >= 0) prim->subdivisions = flags.subdivisions;
  if (!flags.mask.empty()) mask_path = flags.mask;
  if (mask_path.empty()) throw ConfigError("estimate-pose: mask is required");
  if (mesh_path.empty() == !prim.has_value())
    throw ConfigError("estimate-pose: give exactly one of mesh or primitive");

  TriangleMesh mesh;
  try {
    mesh = prim ? prim->build() : load_obj(mesh_path);
  } catch (const BadParams& e) {
    throw ConfigError(std::string("primitive: ") + e.what());
  }
  const SilhouetteImage target = read_silhouette_pgm(mask_path);
  const fs::path dir = resolve_out_root(g.out);
  json echoed = {{"mask", mask_path}, {"estimator", ec}};
  if (prim)
    echoed["primitive"] = {{"kind", to_string(prim->kind)}, {"params", prim->params}, {"subdivisions", prim->subdivisions}};
  else
    echoed["mesh"] = mesh_path;
  echo_config(dir, "estimate-pose", echoed);

  const PoseEstimate est = estimate_camera(mesh, target, ec);
  const json result = est;
  std::ofstream(dir / "pose.json") << result.dump(2) << "\n";
  out << result.dump() << "\n";
  if (!est.converged) {
    err << "best hard IoU " << est.iou << " is below the acceptance threshold " << ec.accept_iou << "\n";
    return kExitBelowThreshold;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalFlags {
  std::string manifest, outputs;
};

int cmd_eval(const Globals& g, const EvalFlags& flags, std::ostream& out, std::ostream& err) {
  const json raw = read_config(g.config);
  const char* what = "eval config";
  detail::reject_unknown_keys(raw, {"manifest", "outputs", "eval", "seed"}, what);
  std::string manifest, outputs;
  detail::read_optional(raw, "manifest", manifest, what);
  detail::read_optional(raw, "outputs", outputs, what);
  const EvalConfig ec = sub_config(raw, "eval", EvalConfig{});
  if (!flags.manifest.empty()) manifest = flags.manifest;
  if (!flags.outputs.empty()) outputs = flags.outputs;
  if (manifest.empty() || outputs.empty()) throw ConfigError("eval: manifest and outputs are required");
  ec.validate();

  const fs::path dir = resolve_out_root(g.out);
  echo_config(dir, "eval", {{"manifest", manifest}, {"outputs", outputs}, {"eval", ec}});
  const std::vector<ManifestRecord> records = load_manifest(manifest);
  if (records.empty()) err << "warning: manifest " << manifest << " has no records\n";
  const EvalReport report = eval_report(records, manifest_root(manifest), outputs, ec);
  const fs::path path = write_report(report, dir);
  out << json{{"report", path.string()}, {"csv", (dir / "report.csv").string()}}.dump() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Toy geometry-aware object editing pipeline", "geoedit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON config file for the subcommand");
  auto* seed_opt = app.add_option("--seed", g.seed, "Root seed (overrides the config)");
  app.add_option("--out", g.out, "Output root (default $GEOEDIT_OUT or ./geoedit_out)");
  app.add_option("--threads", g.threads, "Thread cap for internal parallelism")->check(CLI::PositiveNumber);

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render a synthetic pair dataset");
  gen_cmd->add_option("--n", gen.n, "Number of pairs")->check(CLI::NonNegativeNumber);

  TrainFlags tr;
  auto* train_cmd = app.add_subcommand("train", "Train the toy velocity network");
  train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest");
  train_cmd->add_option("--init-checkpoint", tr.init_checkpoint, "Checkpoint to start from");
  train_cmd->add_option("--steps", tr.steps, "Optimizer steps")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--stage", tr.stage, "1 = full, 2 = backbone frozen")->check(CLI::Range(1, 2));

  SampleFlags sa;
  auto* sample_cmd = app.add_subcommand("sample", "Generate edited images");
  sample_cmd->add_option("--checkpoint", sa.checkpoint, "Trained checkpoint");
  sample_cmd->add_option("--manifest", sa.manifest, "Dataset manifest");
  sample_cmd->add_option("--task", sa.task, "manipulate | removal | inpaint");
  sample_cmd->add_option("--steps", sa.steps, "Euler steps")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--limit", sa.limit, "Sample only the first N ids (0 = all)")
      ->check(CLI::NonNegativeNumber);
  sample_cmd->add_option("--guidance", sa.guidance, "Classifier-free guidance scale")
      ->check(CLI::NonNegativeNumber);

  PoseFlags po;
  auto* pose_cmd = app.add_subcommand("estimate-pose", "Fit a camera to a silhouette");
  pose_cmd->add_option("--mesh", po.mesh, "OBJ mesh");
  pose_cmd->add_option("--primitive", po.primitive, "box | cylinder | icosphere | capsule");
  pose_cmd->add_option("--params", po.params, "Primitive parameters")->delimiter(',');
  pose_cmd->add_option("--subdivisions", po.subdivisions, "Primitive subdivisions");
  pose_cmd->add_option("--mask", po.mask, "Target mask (PGM)");

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score generated outputs");
  eval_cmd->add_option("--manifest", ev.manifest, "Dataset manifest");
  eval_cmd->add_option("--outputs", ev.outputs, "Directory with <id>.ppm outputs");

  std::vector<std::string> argv_store{"geoedit"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  g.seed_set = seed_opt->count() > 0;
  Eigen::setNbThreads(g.threads);

  try {
    if (*gen_cmd) return cmd_gen_data(g, gen, out, err);
    if (*train_cmd) return cmd_train(g, tr, out, err);
    if (*sample_cmd) return cmd_sample(g, sa, out, err);
    if (*pose_cmd) return cmd_estimate_pose(g, po, out, err);
    if (*eval_cmd) return cmd_eval(g, ev, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const BadRanges& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IncompatibleCheckpoint& e) {
    err << "error: " << e.what() << "\n";
    return kExitIncompatibleCheckpoint;
  } catch (const EmptyTarget& e) {
    err << "error: " << e.what() << "\n";
    return kExitEmptyTarget;
  } catch (const MissingOutput& e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingOutput;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NonFinite& e) {
    err << "error: " << e.what() << "\n";
    return kExitNonFinite;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitConfig;
}

}  // namespace geoedit
