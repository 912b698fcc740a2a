#include "unif/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace unif {

namespace fs = std::filesystem;
using nlohmann::json;

double capsule_sdf(const Vec3& x, const Vec3& p, const Vec3& q, double r) {
  const Vec3 pq = q - p;
  const double t = std::clamp((x - p).dot(pq) / pq.squaredNorm(), 0.0, 1.0);
  return (x - (p + t * pq)).norm() - r;
}

namespace {

/// One analytic primitive of the body: a capsule or a bulge sphere.
struct Primitive {
  int bone = -1;
  bool is_capsule = true;
  Vec3 p, q;     // capsule segment
  Vec3 center;   // sphere center
  double radius = 0.0;
  double area = 0.0;
};

std::vector<Primitive> body_primitives(const Skeleton& skel, const CapsuleBody& body,
                                       const Pose& pose) {
  if (int(body.radii.size()) != skel.part_count())
    throw InvalidInput("capsule body has wrong radius count");
  std::vector<Primitive> prims;
  for (int n = 0; n < skel.part_count(); ++n) {
    const Vec3 p = posed_head(skel, pose, n);
    const Vec3 q = posed_tail(skel, pose, n);
    const double r = body.radii[n];
    if (r <= 0.0) throw InvalidInput("capsule radius must be positive");
    Primitive cap;
    cap.bone = n;
    cap.is_capsule = true;
    cap.p = p;
    cap.q = q;
    cap.radius = r;
    cap.area = 2.0 * M_PI * r * (q - p).norm() + 4.0 * M_PI * r * r;
    prims.push_back(cap);
    const double amp = n < int(body.bulge.size()) ? body.bulge[n] : 0.0;
    if (amp > 0.0) {
      for (int k = 0; k < body.bulge_spheres; ++k) {
        const double t = (k + 0.5) / body.bulge_spheres;
        Primitive s;
        s.bone = n;
        s.is_capsule = false;
        s.center = p + t * (q - p);
        s.radius = r * (1.0 + amp * std::sin(M_PI * t));
        s.area = 4.0 * M_PI * s.radius * s.radius;
        prims.push_back(s);
      }
    }
  }
  return prims;
}

double primitive_sdf(const Primitive& pr, const Vec3& x) {
  if (pr.is_capsule) return capsule_sdf(x, pr.p, pr.q, pr.radius);
  return (x - pr.center).norm() - pr.radius;
}

Vec3 primitive_grad(const Primitive& pr, const Vec3& x) {
  if (pr.is_capsule) {
    const Vec3 pq = pr.q - pr.p;
    const double t = std::clamp((x - pr.p).dot(pq) / pq.squaredNorm(), 0.0, 1.0);
    return (x - (pr.p + t * pq)).normalized();
  }
  return (x - pr.center).normalized();
}

}  // namespace

double bone_sdf(const Skeleton& skel, const CapsuleBody& body, const Pose& pose,
                int n, const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const Primitive& pr : body_primitives(skel, body, pose)) {
    if (pr.bone != n) continue;
    best = std::min(best, primitive_sdf(pr, x));
  }
  return best;
}

double body_sdf(const Skeleton& skel, const CapsuleBody& body, const Pose& pose,
                const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const Primitive& pr : body_primitives(skel, body, pose))
    best = std::min(best, primitive_sdf(pr, x));
  return best;
}

Vec3 body_sdf_grad(const Skeleton& skel, const CapsuleBody& body, const Pose& pose,
                   const Vec3& x) {
  const auto prims = body_primitives(skel, body, pose);
  double best = std::numeric_limits<double>::infinity();
  int arg = 0;
  for (int i = 0; i < int(prims.size()); ++i) {
    const double d = primitive_sdf(prims[i], x);
    if (d < best) {
      best = d;
      arg = i;
    }
  }
  return primitive_grad(prims[arg], x);
}

SurfaceSamples sample_body_surface(const Skeleton& skel, const CapsuleBody& body,
                                   const Pose& pose, int count, uint64_t seed,
                                   int only_bone) {
  const auto prims = body_primitives(skel, body, pose);
  std::vector<const Primitive*> candidates;
  double total_area = 0.0;
  for (const Primitive& pr : prims) {
    if (only_bone >= 0 && pr.bone != only_bone) continue;
    candidates.push_back(&pr);
    total_area += pr.area;
  }
  if (candidates.empty()) throw InvalidInput("no primitives to sample");

  Rng rng(seed);
  SurfaceSamples out;
  out.points.resize(3, count);
  out.normals.resize(3, count);
  out.source_bone.resize(count);
  int kept = 0;
  long attempts = 0;
  const long max_attempts = 10000L * count + 10000L;
  while (kept < count) {
    if (++attempts > max_attempts)
      throw InvalidInput("surface sampling rejected too many points");
    // Pick a primitive proportionally to area.
    double pick = rng.uniform(0.0, total_area);
    const Primitive* pr = candidates.back();
    for (const Primitive* c : candidates) {
      pick -= c->area;
      if (pick <= 0.0) {
        pr = c;
        break;
      }
    }
    // Uniform point on the primitive surface.
    Vec3 x, nrm;
    if (pr->is_capsule) {
      const Vec3 axis = pr->q - pr->p;
      const double len = axis.norm();
      const Vec3 dir = axis / len;
      const double lateral = 2.0 * M_PI * pr->radius * len;
      if (rng.uniform(0.0, pr->area) < lateral) {
        const double t = rng.uniform(0.0, 1.0);
        const double ph = rng.uniform(0.0, 2.0 * M_PI);
        Vec3 e1 = dir.cross(Vec3(0, 0, 1));
        if (e1.norm() < 1e-6) e1 = dir.cross(Vec3(1, 0, 0));
        e1.normalize();
        const Vec3 e2 = dir.cross(e1);
        nrm = std::cos(ph) * e1 + std::sin(ph) * e2;
        x = pr->p + t * axis + pr->radius * nrm;
      } else {
        // Both hemispherical caps together form one full sphere.
        Vec3 d(rng.normal(), rng.normal(), rng.normal());
        while (d.norm() < 1e-9) d = Vec3(rng.normal(), rng.normal(), rng.normal());
        d.normalize();
        nrm = d;
        x = (d.dot(dir) >= 0.0 ? pr->q : pr->p) + pr->radius * d;
      }
    } else {
      Vec3 d(rng.normal(), rng.normal(), rng.normal());
      while (d.norm() < 1e-9) d = Vec3(rng.normal(), rng.normal(), rng.normal());
      d.normalize();
      nrm = d;
      x = pr->center + pr->radius * d;
    }
    // Keep only the visible outer surface of the whole body.
    double union_sdf = std::numeric_limits<double>::infinity();
    for (const Primitive& other : prims)
      union_sdf = std::min(union_sdf, primitive_sdf(other, x));
    if (union_sdf < -1e-6) continue;
    out.points.col(kept) = x;
    out.normals.col(kept) = nrm;
    out.source_bone[kept] = pr->bone;
    ++kept;
  }
  return out;
}

ScanFrame generate_frame(const Skeleton& skel, const CapsuleBody& body,
                         const Pose& pose, int points_per_frame, uint64_t seed,
                         int frame_id) {
  validate_pose(skel, pose);
  if (points_per_frame < 1) throw InvalidInput("points_per_frame must be >= 1");
  SurfaceSamples s = sample_body_surface(skel, body, pose, points_per_frame, seed);
  ScanFrame f;
  f.points = std::move(s.points);
  f.normals = std::move(s.normals);
  f.pose = pose;
  f.frame_id = frame_id;
  return f;
}

PoseSchedule PoseSchedule::parse(const std::string& spec) {
  PoseSchedule s;
  std::vector<std::string> tok;
  std::stringstream ss(spec);
  std::string t;
  while (std::getline(ss, t, ':')) tok.push_back(t);
  if (tok.empty()) throw InvalidInput("empty schedule spec");
  const auto parse_axis = [](const std::string& a) {
    if (a == "x") return Vec3(1, 0, 0);
    if (a == "y") return Vec3(0, 1, 0);
    if (a == "z") return Vec3(0, 0, 1);
    throw InvalidInput("schedule axis must be x, y or z, got: " + a);
  };
  try {
    if (tok[0] == "static") {
      if (tok.size() != 1) throw InvalidInput("static schedule takes no arguments");
      s.kind = Kind::kStatic;
    } else if (tok[0] == "sweep") {
      if (tok.size() < 4 || tok.size() > 5)
        throw InvalidInput("sweep schedule is sweep:<joint>:<deg0>:<deg1>[:<axis>]");
      s.kind = Kind::kSweep;
      s.joint = tok[1];
      s.deg0 = std::stod(tok[2]);
      s.deg1 = std::stod(tok[3]);
      if (tok.size() == 5) s.axis = parse_axis(tok[4]);
    } else if (tok[0] == "walk") {
      if (tok.size() < 3 || tok.size() > 4)
        throw InvalidInput("walk schedule is walk:<maxdeg>:<stepdeg>[:<axis>]");
      s.kind = Kind::kWalk;
      s.max_deg = std::stod(tok[1]);
      s.step_deg = std::stod(tok[2]);
      if (tok.size() == 4) s.axis = parse_axis(tok[3]);
    } else {
      throw InvalidInput("unknown schedule kind: " + tok[0]);
    }
  } catch (const std::invalid_argument&) {
    throw InvalidInput("bad number in schedule spec: " + spec);
  }
  return s;
}

std::string PoseSchedule::str() const {
  const auto axis_name = [this] {
    if ((axis - Vec3(1, 0, 0)).norm() < 1e-12) return std::string("x");
    if ((axis - Vec3(0, 1, 0)).norm() < 1e-12) return std::string("y");
    return std::string("z");
  };
  std::ostringstream ss;
  switch (kind) {
    case Kind::kStatic: ss << "static"; break;
    case Kind::kSweep:
      ss << "sweep:" << joint << ":" << deg0 << ":" << deg1 << ":" << axis_name();
      break;
    case Kind::kWalk:
      ss << "walk:" << max_deg << ":" << step_deg << ":" << axis_name();
      break;
  }
  return ss.str();
}

std::vector<Pose> schedule_poses(const Skeleton& skel, const PoseSchedule& schedule,
                                 int frames, uint64_t seed) {
  if (frames < 1) throw InvalidInput("frames must be >= 1");
  const Pose rest = rest_pose(skel);
  std::vector<Pose> poses;
  poses.reserve(frames);
  switch (schedule.kind) {
    case PoseSchedule::Kind::kStatic: {
      poses.assign(frames, rest);
      break;
    }
    case PoseSchedule::Kind::kSweep: {
      const int joint = skel.joint_index(schedule.joint);
      for (int f = 0; f < frames; ++f) {
        const double s = frames == 1 ? 0.0 : double(f) / (frames - 1);
        const double deg = schedule.deg0 + (schedule.deg1 - schedule.deg0) * s;
        poses.push_back(
            posed_by_rotation(skel, rest, joint, schedule.axis, deg * M_PI / 180.0));
      }
      break;
    }
    case PoseSchedule::Kind::kWalk: {
      // Internal joints: tail of one bone and head of at least one other.
      std::vector<int> internal;
      for (int j = 0; j < skel.joint_count(); ++j) {
        if (!skel.bone_of_joint(j)) continue;
        for (int n = 0; n < skel.part_count(); ++n) {
          if (skel.bone(n).head == j) {
            internal.push_back(j);
            break;
          }
        }
      }
      std::vector<double> angle(internal.size(), 0.0);
      const double maxr = schedule.max_deg * M_PI / 180.0;
      const double step = schedule.step_deg * M_PI / 180.0;
      for (int f = 0; f < frames; ++f) {
        Rng rng(mix_seed(seed, 0xa11cedull, uint64_t(f)));
        Pose p = rest;
        for (size_t k = 0; k < internal.size(); ++k) {
          angle[k] = std::clamp(angle[k] + step * rng.normal(), -maxr, maxr);
          p = posed_by_rotation(skel, p, internal[k], schedule.axis, angle[k]);
        }
        poses.push_back(p);
      }
      break;
    }
  }
  return poses;
}

std::vector<ScanFrame> generate_sequence(const Skeleton& skel, const CapsuleBody& body,
                                         const PoseSchedule& schedule, int frames,
                                         int points_per_frame, uint64_t seed) {
  const std::vector<Pose> poses = schedule_poses(skel, schedule, frames, seed);
  std::vector<ScanFrame> out;
  out.reserve(frames);
  for (int f = 0; f < frames; ++f) {
    out.push_back(generate_frame(skel, body, poses[f], points_per_frame,
                                 mix_seed(seed, 0xf4a3e5ull, uint64_t(f)), f));
  }
  return out;
}

DatasetSplits make_splits(int frame_count) {
  DatasetSplits s;
  const int cut = int(std::ceil(0.8 * frame_count));
  for (int i = 0; i < frame_count; ++i) {
    if (i < cut) {
      if (i % 10 == 0) s.train.push_back(i);
      else if (i % 10 == 5) s.interp.push_back(i);
    } else if ((i - cut) % 10 == 0) {
      s.extrap.push_back(i);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// PLY scan frames
// ---------------------------------------------------------------------------

namespace {
std::string pose_sidecar(const std::string& ply_path) {
  std::string out = ply_path;
  const size_t dot = out.rfind(".ply");
  if (dot != std::string::npos) out = out.substr(0, dot);
  return out + ".pose.json";
}
}  // namespace

void save_frame(const Skeleton& /*unused*/, const ScanFrame& frame, const std::string& ply_path) {
  std::ofstream out(ply_path, std::ios::binary);
  if (!out) throw IoError("cannot write frame file: " + ply_path);
  const int M = frame.count();
  out << "ply\n"
      << "format binary_little_endian 1.0\n"
      << "comment unif scan frame " << frame.frame_id << "\n"
      << "element vertex " << M << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property double nx\nproperty double ny\nproperty double nz\n"
      << "end_header\n";
  std::vector<double> row(6);
  for (int i = 0; i < M; ++i) {
    for (int k = 0; k < 3; ++k) row[k] = frame.points(k, i);
    for (int k = 0; k < 3; ++k) row[3 + k] = frame.normals(k, i);
    out.write(reinterpret_cast<const char*>(row.data()), 6 * sizeof(double));
  }
  if (!out) throw IoError("short write: " + ply_path);
  save_poses({frame.pose}, pose_sidecar(ply_path));
}

ScanFrame load_frame(const Skeleton& skel, const std::string& ply_path) {
  std::ifstream in(ply_path, std::ios::binary);
  if (!in) throw IoError("cannot open frame file: " + ply_path);
  std::string line;
  int line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line))
      throw IoError(ply_path + ": unexpected end of header at line " +
                    std::to_string(line_no));
    ++line_no;
  };
  next_line();
  if (line != "ply") throw IoError(ply_path + ":1: not a ply file");
  next_line();
  if (line != "format binary_little_endian 1.0")
    throw IoError(ply_path + ":2: expected binary_little_endian 1.0");
  long count = -1;
  std::vector<std::string> props;
  while (true) {
    next_line();
    if (line == "end_header") break;
    std::stringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "comment") continue;
    if (word == "element") {
      std::string what;
      ss >> what >> count;
      if (what != "vertex")
        throw IoError(ply_path + ":" + std::to_string(line_no) +
                      ": unsupported element " + what);
    } else if (word == "property") {
      std::string type, name;
      ss >> type >> name;
      if (type != "double")
        throw IoError(ply_path + ":" + std::to_string(line_no) +
                      ": scan frames use double properties, got " + type);
      props.push_back(name);
    } else {
      throw IoError(ply_path + ":" + std::to_string(line_no) +
                    ": unexpected header line: " + line);
    }
  }
  if (count < 1)
    throw IoError(ply_path + ": vertex count missing or not positive");
  const std::vector<std::string> needed = {"x", "y", "z", "nx", "ny", "nz"};
  std::vector<int> idx(needed.size(), -1);
  for (size_t k = 0; k < needed.size(); ++k) {
    for (size_t p = 0; p < props.size(); ++p) {
      if (props[p] == needed[k]) idx[k] = int(p);
    }
    if (idx[k] < 0)
      throw IoError(ply_path + ": missing vertex property " + needed[k]);
  }

  ScanFrame f;
  f.points.resize(3, count);
  f.normals.resize(3, count);
  std::vector<double> row(props.size());
  for (long i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(row.data()),
            std::streamsize(props.size() * sizeof(double)));
    if (!in)
      throw IoError(ply_path + ": truncated payload at vertex " + std::to_string(i) +
                    " (byte offset " + std::to_string(in.tellg()) + ")");
    for (int k = 0; k < 3; ++k) f.points(k, i) = row[idx[k]];
    for (int k = 0; k < 3; ++k) f.normals(k, i) = row[idx[3 + k]];
  }
  const std::vector<Pose> poses = load_poses(pose_sidecar(ply_path), skel);
  f.pose = poses[0];
  return f;
}

// ---------------------------------------------------------------------------
// Dataset directories
// ---------------------------------------------------------------------------

namespace {
std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d.ply", i);
  return buf;
}
}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "frames");
  save_skeleton(ds.skel, (fs::path(dir) / "skeleton.json").string());
  for (size_t i = 0; i < ds.frames.size(); ++i) {
    save_frame(ds.skel, ds.frames[i],
               (fs::path(dir) / "frames" / frame_name(int(i))).string());
  }
  json j;
  j["seed"] = ds.seed;
  j["schedule"] = ds.schedule;
  j["frame_count"] = ds.frames.size();
  j["points_per_frame"] = ds.points_per_frame;
  j["body"]["radii"] = ds.body.radii;
  j["body"]["bulge"] = ds.body.bulge;
  j["body"]["bulge_spheres"] = ds.body.bulge_spheres;
  j["splits"]["train"] = ds.splits.train;
  j["splits"]["interp"] = ds.splits.interp;
  j["splits"]["extrap"] = ds.splits.extrap;
  std::ofstream out(fs::path(dir) / "dataset.json");
  if (!out) throw IoError("cannot write dataset.json in " + dir);
  out << j.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "dataset.json");
  if (!in) throw IoError("cannot open dataset.json in " + dir);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(std::string("dataset.json parse error: ") + e.what());
  }
  Dataset ds{load_skeleton((fs::path(dir) / "skeleton.json").string())};
  try {
    ds.seed = j.at("seed").get<uint64_t>();
    ds.schedule = j.at("schedule").get<std::string>();
    ds.points_per_frame = j.at("points_per_frame").get<int>();
    ds.body.radii = j.at("body").at("radii").get<std::vector<double>>();
    ds.body.bulge = j.at("body").at("bulge").get<std::vector<double>>();
    ds.body.bulge_spheres = j.at("body").at("bulge_spheres").get<int>();
    ds.splits.train = j.at("splits").at("train").get<std::vector<int>>();
    ds.splits.interp = j.at("splits").at("interp").get<std::vector<int>>();
    ds.splits.extrap = j.at("splits").at("extrap").get<std::vector<int>>();
    const int frames = j.at("frame_count").get<int>();
    for (int i = 0; i < frames; ++i) {
      ds.frames.push_back(
          load_frame(ds.skel, (fs::path(dir) / "frames" / frame_name(i)).string()));
      ds.frames.back().frame_id = i;
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("dataset.json schema error: ") + e.what());
  }
  return ds;
}

Skeleton make_skeleton(const std::string& name_or_path) {
  if (name_or_path == "arm2") {
    return Skeleton({{"shoulder", -1, Vec3(0, 0, 0)},
                     {"elbow", 0, Vec3(0, 0.35, 0)},
                     {"wrist", 1, Vec3(0, 0.65, 0)}},
                    {{0, 1}, {1, 2}});
  }
  if (name_or_path == "chain3") {
    return Skeleton({{"j0", -1, Vec3(0, 0, 0)},
                     {"j1", 0, Vec3(0, 0.3, 0)},
                     {"j2", 1, Vec3(0, 0.55, 0)},
                     {"j3", 2, Vec3(0, 0.75, 0)}},
                    {{0, 1}, {1, 2}, {2, 3}});
  }
  if (name_or_path == "star3") {
    return Skeleton({{"hub", -1, Vec3(0, 0, 0)},
                     {"a", 0, Vec3(0, 0.3, 0)},
                     {"b", 0, Vec3(0.28, -0.1, 0)},
                     {"c", 0, Vec3(-0.28, -0.1, 0)}},
                    {{0, 1}, {0, 2}, {0, 3}});
  }
  return load_skeleton(name_or_path);
}

}  // namespace unif
