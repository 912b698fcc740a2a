#include "unif/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "unif/dataio.hpp"
#include "unif/metrics.hpp"
#include "unif/model_io.hpp"
#include "unif/objective.hpp"
#include "unif/surface.hpp"
#include "unif/trainer.hpp"

namespace unif {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<double> parse_radii(const std::string& spec, int parts) {
  std::vector<double> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  if (out.size() == 1) out.assign(parts, out[0]);
  if (int(out.size()) != parts)
    throw InvalidInput("expected 1 or " + std::to_string(parts) + " radii, got " +
                       std::to_string(out.size()));
  return out;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string skeleton = "arm2";
  std::string schedule = "sweep:elbow:0:90";
  std::string out;
  int frames = 40;
  int points = 5000;
  uint64_t seed = 0;
  std::string radius = "0.05";
  double bulge = 0.0;
};

int cmd_generate(const GenerateArgs& a) {
  Dataset ds{make_skeleton(a.skeleton)};
  const int N = ds.skel.part_count();
  ds.body.radii = parse_radii(a.radius, N);
  ds.body.bulge.assign(N, a.bulge);
  ds.seed = a.seed;
  ds.points_per_frame = a.points;
  const PoseSchedule sched = PoseSchedule::parse(a.schedule);
  ds.schedule = sched.str();
  ds.frames = generate_sequence(ds.skel, ds.body, sched, a.frames, a.points, a.seed);
  ds.splits = make_splits(a.frames);
  save_dataset(ds, a.out);
  std::printf("dataset: %d frames x %d points, %d bones, schedule %s\n", a.frames,
              a.points, N, ds.schedule.c_str());
  std::printf("splits: train %zu, interp %zu, extrap %zu\n", ds.splits.train.size(),
              ds.splits.interp.size(), ds.splits.extrap.size());
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset;
  std::string out;
  std::string resume;
  TrainConfig cfg;
  std::string union_mode = "smooth";
  std::string q_ratio = "self";
  bool no_aps = false, no_unit = false, no_lim = false, no_sec = false,
       no_perim = false;
  bool rest_rigidness = false;
  bool all_frames = false;
  double init_radius = 0.01;
};

std::string config_echo(const TrainArgs& a) {
  json j;
  j["dataset"] = a.dataset;
  j["epochs"] = a.cfg.epochs;
  j["seed"] = a.cfg.seed;
  j["lr"] = a.cfg.lr;
  j["counts"] = {a.cfg.counts.surface, a.cfg.counts.local, a.cfg.counts.global};
  j["union"] = a.union_mode;
  j["q_ratio"] = a.q_ratio;
  j["no_aps"] = a.no_aps;
  j["no_unit"] = a.no_unit;
  j["no_lim"] = a.no_lim;
  j["no_sec"] = a.no_sec;
  j["no_perim"] = a.no_perim;
  return j.dump();
}

int cmd_train(TrainArgs& a) {
  Dataset ds = load_dataset(a.dataset);
  std::vector<ScanFrame> frames;
  if (a.all_frames || ds.splits.train.empty()) {
    frames = ds.frames;
  } else {
    for (int i : ds.splits.train) frames.push_back(ds.frames[i]);
  }
  std::printf("training on %zu frames (%s)\n", frames.size(),
              a.all_frames ? "all" : "train split");

  a.cfg.model.deform.aps = !a.no_aps;
  a.cfg.model.deform.q_ratio_self_over_neighbor = (a.q_ratio == "self");
  a.cfg.model.deform.rigidness_rest_geometry = a.rest_rigidness;
  a.cfg.model.train_union =
      a.union_mode == "min" ? UnionMode::kMin : UnionMode::kSmooth;
  a.cfg.model.init_radius = a.init_radius;
  if (a.no_unit) a.cfg.weights.unit = 0.0;
  if (a.no_lim) a.cfg.weights.lim = 0.0;
  if (a.no_sec) a.cfg.weights.sec = 0.0;
  if (a.no_perim) a.cfg.weights.perim = 0.0;
  a.cfg.out_dir = a.out;

  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "train_log.csv");
  if (!log) throw IoError("cannot write log in " + a.out);

  UnifModel model = [&] {
    if (!a.resume.empty()) {
      Checkpoint ck = load_checkpoint(a.resume);
      std::printf("resuming from %s at epoch %d\n", a.resume.c_str(), ck.epoch);
      run_training(a.cfg, ck.model, ck.adam, ck.epoch, frames, &log);
      return std::move(ck.model);
    }
    log << "epoch,recon,unit,lim,sec,perim,total,lr\n";
    UnifModel m(ds.skel, a.cfg.model, a.cfg.width, a.cfg.seed);
    AdamState adam(m.param_count());
    run_training(a.cfg, m, adam, 0, frames, &log);
    return m;
  }();

  const std::string model_path = (fs::path(a.out) / "model.unif").string();
  save_model(model, model_path, config_echo(a));
  std::printf("wrote %s and train_log.csv\n", model_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// reconstruct / animate
// ---------------------------------------------------------------------------

struct ReconstructArgs {
  std::string model;
  std::string pose_file;  // empty = rest pose
  int pose_index = 0;
  std::string out = ".";
  std::string prefix = "mesh";
  int res = 64;
  double margin = 0.25;
  std::string format = "obj";
  bool parts = false;
  bool no_aps = false;
  std::string union_mode = "min";
  bool dump_grid = false;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  UnifModel model = load_model(a.model);
  if (a.no_aps) model.config().deform.aps = false;
  const Pose pose = [&] {
    if (a.pose_file.empty()) return model.rest();
    const auto poses = load_poses(a.pose_file, model.skeleton());
    if (a.pose_index < 0 || a.pose_index >= int(poses.size()))
      throw InvalidInput("pose index out of range");
    return poses[a.pose_index];
  }();

  fs::create_directories(a.out);
  const Box box = pose_bounds(model.skeleton(), pose, a.margin);
  PoseEval pe(model, pose);
  const GridField grid = eval_grid(pe, box, a.res);
  if (a.dump_grid) save_grid(grid, (fs::path(a.out) / (a.prefix + "_grid.bin")).string());
  const Mesh uni = [&] {
    if (a.union_mode == "smooth") {
      GridField g2 = eval_fn_grid(
          [&](const Vec3& x) { return pe.eval(x, UnionMode::kSmooth, false).d; }, box,
          a.res);
      return marching_cubes(g2);
    }
    return marching_cubes(grid);
  }();
  Mesh labeled = uni;
  if (labeled.vertex_count() > 0) {
    MatX d;
    pe.eval_parts(labeled.vertices, false, d, nullptr);
    labeled.part_id.resize(labeled.vertex_count());
    for (int v = 0; v < labeled.vertex_count(); ++v) {
      int arg = 0;
      for (int n = 1; n < d.rows(); ++n)
        if (d(n, v) < d(arg, v)) arg = n;
      labeled.part_id[v] = arg;
    }
  }
  const bool obj = a.format == "obj";
  const std::string ext = obj ? ".obj" : ".ply";
  const std::string union_path = (fs::path(a.out) / (a.prefix + ext)).string();
  export_mesh(obj ? uni : labeled, union_path, obj ? MeshFormat::kObj : MeshFormat::kPly);
  std::printf("union mesh: %s (%d vertices, %d triangles)\n", union_path.c_str(),
              uni.vertex_count(), uni.triangle_count());
  if (a.parts) {
    for (int n = 0; n < model.part_count(); ++n) {
      const Mesh part = extract_part(model, pose, n, box, a.res);
      const std::string path =
          (fs::path(a.out) / (a.prefix + "_part" + std::to_string(n) + ".ply")).string();
      export_mesh(part, path, MeshFormat::kPly);
      std::printf("part %d mesh: %s (%d vertices)\n", n, path.c_str(),
                  part.vertex_count());
    }
  }
  return 0;
}

struct AnimateArgs {
  std::string model;
  std::string poses;
  std::string out = ".";
  std::string prefix = "frame";
  int res = 64;
  double margin = 0.25;
  std::string format = "obj";
  bool no_aps = false;
};

int cmd_animate(const AnimateArgs& a) {
  UnifModel model = load_model(a.model);
  if (a.no_aps) model.config().deform.aps = false;
  const auto poses = load_poses(a.poses, model.skeleton());
  fs::create_directories(a.out);
  const bool obj = a.format == "obj";
  for (size_t i = 0; i < poses.size(); ++i) {
    const Box box = pose_bounds(model.skeleton(), poses[i], a.margin);
    const Mesh mesh = extract_union(model, poses[i], box, a.res);
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%04zu%s", a.prefix.c_str(), i,
                  obj ? ".obj" : ".ply");
    export_mesh(mesh, (fs::path(a.out) / name).string(),
                obj ? MeshFormat::kObj : MeshFormat::kPly);
  }
  std::printf("wrote %zu meshes to %s\n", poses.size(), a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> pairs;  // mesh,scan[,split]
  std::string skeleton;
  int points = 100000;
  double threshold_mm = 1.0;
  uint64_t seed = 0;
  std::string csv;
};

int cmd_eval(const EvalArgs& a) {
  if (a.pairs.empty()) throw InvalidInput("eval: no --pair given");
  if (a.skeleton.empty()) throw InvalidInput("eval: --skeleton is required");
  const Skeleton skel = make_skeleton(a.skeleton);

  std::ostream* csv = &std::cout;
  std::ofstream csv_file;
  if (!a.csv.empty()) {
    csv_file.open(a.csv);
    if (!csv_file) throw IoError("cannot write " + a.csv);
    csv = &csv_file;
  }
  *csv << "mesh,scan,split,p2s_mm,chamfer_mm,recall_pct,precision_pct,f1_pct\n";

  struct Agg {
    MetricReport sum;
    int count = 0;
  };
  std::map<std::string, Agg> by_split;
  for (const std::string& spec : a.pairs) {
    std::vector<std::string> tok;
    std::stringstream ss(spec);
    std::string t;
    while (std::getline(ss, t, ',')) tok.push_back(t);
    if (tok.size() < 2 || tok.size() > 3)
      throw InvalidInput("eval: --pair must be mesh,scan[,split]");
    const std::string split = tok.size() == 3 ? tok[2] : "";
    const Mesh mesh = load_mesh(tok[0]);
    const ScanFrame scan = load_frame(skel, tok[1]);
    const MetricReport r =
        chamfer_and_f1(scan.points, mesh, a.threshold_mm, a.points, a.seed);
    char row[256];
    std::snprintf(row, sizeof(row), "%s,%s,%s,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                  tok[0].c_str(), tok[1].c_str(), split.c_str(), r.p2s_mm,
                  r.chamfer_mm, r.recall_pct, r.precision_pct, r.f1_pct);
    *csv << row;
    std::printf("%-40s p2s %.3f mm  chamfer %.3f mm  recall %.2f%%  precision %.2f%%  f1 %.2f%%\n",
                fs::path(tok[0]).filename().c_str(), r.p2s_mm, r.chamfer_mm,
                r.recall_pct, r.precision_pct, r.f1_pct);
    if (!split.empty()) {
      Agg& agg = by_split[split];
      agg.sum.p2s_mm += r.p2s_mm;
      agg.sum.chamfer_mm += r.chamfer_mm;
      agg.sum.recall_pct += r.recall_pct;
      agg.sum.precision_pct += r.precision_pct;
      agg.sum.f1_pct += r.f1_pct;
      agg.count++;
    }
  }
  for (const auto& [split, agg] : by_split) {
    char row[256];
    std::snprintf(row, sizeof(row), "mean,,%s,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                  split.c_str(), agg.sum.p2s_mm / agg.count,
                  agg.sum.chamfer_mm / agg.count, agg.sum.recall_pct / agg.count,
                  agg.sum.precision_pct / agg.count, agg.sum.f1_pct / agg.count);
    *csv << row;
    std::printf("split %s over %d frames: chamfer %.3f mm, f1 %.2f%%\n", split.c_str(),
                agg.count, agg.sum.chamfer_mm / agg.count, agg.sum.f1_pct / agg.count);
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"unif: a union of per-bone neural signed distance functions"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* cgen = app.add_subcommand("generate", "Generate a synthetic capsule-body scan dataset");
  cgen->add_option("--skeleton", gen.skeleton, "Built-in skeleton (arm2, chain3, star3) or a skeleton.json path")->capture_default_str();
  cgen->add_option("--schedule", gen.schedule, "Pose schedule: static | sweep:<joint>:<deg0>:<deg1>[:axis] | walk:<maxdeg>:<stepdeg>[:axis]")->capture_default_str();
  cgen->add_option("--frames", gen.frames, "Number of frames")->capture_default_str();
  cgen->add_option("--points", gen.points, "Scan points per frame")->capture_default_str();
  cgen->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  cgen->add_option("--radius", gen.radius, "Capsule radius in meters (one value or per-bone list)")->capture_default_str();
  cgen->add_option("--bulge", gen.bulge, "Radial bulge amplitude simulating clothing")->capture_default_str();
  cgen->add_option("--out", gen.out, "Output dataset directory")->required();

  TrainArgs tr;
  CLI::App* ctr = app.add_subcommand("train", "Train a model on a dataset");
  ctr->set_config("--config", "", "Read options from a key=value config file");
  ctr->add_option("--dataset", tr.dataset, "Dataset directory")->required();
  ctr->add_option("--out", tr.out, "Output directory (model, log, checkpoints)")->required();
  ctr->add_option("--epochs", tr.cfg.epochs, "Training epochs (one batch step each)")->capture_default_str();
  ctr->add_option("--lr", tr.cfg.lr, "Adam learning rate")->capture_default_str();
  ctr->add_option("--lr-decay", tr.cfg.lr_decay, "Decay factor at each milestone")->capture_default_str();
  ctr->add_option("--decay-epochs", tr.cfg.decay_epochs, "Decay milestones")->capture_default_str();
  ctr->add_option("--frames-per-batch", tr.cfg.frames_per_batch, "Scans per step")->capture_default_str();
  ctr->add_option("--seed", tr.cfg.seed, "Random seed")->capture_default_str();
  ctr->add_option("--surface-points", tr.cfg.counts.surface, "Surface samples per frame")->capture_default_str();
  ctr->add_option("--local-points", tr.cfg.counts.local, "Near-surface samples per frame")->capture_default_str();
  ctr->add_option("--global-points", tr.cfg.counts.global, "Bounding-box samples per frame")->capture_default_str();
  ctr->add_option("--sigma-local", tr.cfg.sigma_local, "Stddev of the near-surface disturbance")->capture_default_str();
  ctr->add_option("--box-scale", tr.cfg.box_scale, "Bounding box enlargement")->capture_default_str();
  ctr->add_option("--width", tr.cfg.width, "Hidden width of each part network")->capture_default_str();
  ctr->add_option("--init-radius", tr.init_radius, "Geometric init sphere radius")->capture_default_str();
  ctr->add_option("--lambda-normal", tr.cfg.weights.normal, "Normal term weight inside recon")->capture_default_str();
  ctr->add_option("--lambda-unit", tr.cfg.weights.unit, "Unit gradient loss weight")->capture_default_str();
  ctr->add_option("--lambda-lim", tr.cfg.weights.lim, "Bone limit loss weight")->capture_default_str();
  ctr->add_option("--lambda-sec", tr.cfg.weights.sec, "Section normal loss weight")->capture_default_str();
  ctr->add_option("--lambda-perim", tr.cfg.weights.perim, "Minimal perimeter loss weight")->capture_default_str();
  ctr->add_option("--union", tr.union_mode, "Union during training: smooth | min")->capture_default_str();
  ctr->add_option("--q-ratio", tr.q_ratio, "Split-point ratio orientation: self | neighbor")->capture_default_str();
  ctr->add_flag("--rest-rigidness", tr.rest_rigidness, "Rigidness geometry from rest endpoints");
  ctr->add_flag("--no-aps", tr.no_aps, "Disable adjacent part seaming");
  ctr->add_flag("--no-unit", tr.no_unit, "Drop the unit gradient term from the total");
  ctr->add_flag("--no-lim", tr.no_lim, "Drop the bone limit term from the total");
  ctr->add_flag("--no-sec", tr.no_sec, "Drop the section normal term from the total");
  ctr->add_flag("--no-perim", tr.no_perim, "Drop the minimal perimeter term from the total");
  ctr->add_flag("--all-frames", tr.all_frames, "Train on every frame instead of the train split");
  ctr->add_option("--checkpoint-every", tr.cfg.checkpoint_every, "Checkpoint period in epochs (0 = off)")->capture_default_str();
  ctr->add_option("--resume", tr.resume, "Resume from a checkpoint file");
  ctr->add_option("--threads", tr.cfg.threads, "Worker threads across batch frames")->capture_default_str();

  ReconstructArgs rc;
  CLI::App* crc = app.add_subcommand("reconstruct", "Extract meshes from a trained model at one pose");
  crc->add_option("--model", rc.model, "Model file")->required();
  crc->add_option("--pose-file", rc.pose_file, "Pose json (defaults to the rest pose)");
  crc->add_option("--pose-index", rc.pose_index, "Frame index inside the pose file")->capture_default_str();
  crc->add_option("--out", rc.out, "Output directory")->capture_default_str();
  crc->add_option("--prefix", rc.prefix, "Output name prefix")->capture_default_str();
  crc->add_option("--res", rc.res, "Marching cubes resolution")->capture_default_str();
  crc->add_option("--margin", rc.margin, "Bounding box margin around the posed skeleton")->capture_default_str();
  crc->add_option("--format", rc.format, "Union mesh format: obj | ply")->capture_default_str();
  crc->add_flag("--parts", rc.parts, "Also export per-part meshes with part_id labels");
  crc->add_flag("--no-aps", rc.no_aps, "Disable adjacent part seaming");
  crc->add_option("--union", rc.union_mode, "Union at extraction: min | smooth")->capture_default_str();
  crc->add_flag("--dump-grid", rc.dump_grid, "Dump the sampled grid as float32");

  AnimateArgs an;
  CLI::App* can = app.add_subcommand("animate", "Extract one mesh per pose of a sequence");
  can->add_option("--model", an.model, "Model file")->required();
  can->add_option("--poses", an.poses, "Pose sequence json")->required();
  can->add_option("--out", an.out, "Output directory")->capture_default_str();
  can->add_option("--prefix", an.prefix, "Output name prefix")->capture_default_str();
  can->add_option("--res", an.res, "Marching cubes resolution")->capture_default_str();
  can->add_option("--margin", an.margin, "Bounding box margin")->capture_default_str();
  can->add_option("--format", an.format, "Mesh format: obj | ply")->capture_default_str();
  can->add_flag("--no-aps", an.no_aps, "Disable adjacent part seaming");

  EvalArgs ev;
  CLI::App* cev = app.add_subcommand("eval", "Metrics between extracted meshes and scan frames");
  cev->add_option("--pair", ev.pairs, "mesh,scan[,split] (repeatable)")->required();
  cev->add_option("--skeleton", ev.skeleton, "Skeleton (for reading scan pose sidecars)")->required();
  cev->add_option("--points", ev.points, "Surface sample count")->capture_default_str();
  cev->add_option("--threshold-mm", ev.threshold_mm, "Recall/precision threshold")->capture_default_str();
  cev->add_option("--seed", ev.seed, "Sampling seed")->capture_default_str();
  cev->add_option("--csv", ev.csv, "Write rows to a csv file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // user error
  }

  try {
    if (cgen->parsed()) return cmd_generate(gen);
    if (ctr->parsed()) return cmd_train(tr);
    if (crc->parsed()) return cmd_reconstruct(rc);
    if (can->parsed()) return cmd_animate(an);
    if (cev->parsed()) return cmd_eval(ev);
  } catch (const InvalidInput& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
  return 2;
}

}  // namespace unif
