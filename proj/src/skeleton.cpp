#include "unif/skeleton.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace unif {

Skeleton::Skeleton(std::vector<Joint> joints, std::vector<Bone> bones)
    : joints_(std::move(joints)), bones_(std::move(bones)) {
  const int J = int(joints_.size());
  const int N = int(bones_.size());
  if (J < 2 || N < 1) throw InvalidInput("skeleton needs at least two joints and one bone");

  // Parent relation must be a tree with a single root.
  int roots = 0;
  for (int j = 0; j < J; ++j) {
    const int p = joints_[j].parent;
    if (p == -1) {
      ++roots;
    } else if (p < 0 || p >= J || p == j) {
      throw InvalidInput("joint " + joints_[j].name + " has invalid parent");
    }
  }
  if (roots != 1) throw InvalidInput("skeleton must have exactly one root joint");
  for (int j = 0; j < J; ++j) {  // acyclicity
    int hops = 0;
    for (int p = joints_[j].parent; p != -1; p = joints_[p].parent) {
      if (++hops > J) throw InvalidInput("parent relation contains a cycle");
    }
  }

  bone_of_joint_.assign(J, -1);
  bone_lengths_.resize(N);
  std::set<std::pair<int, int>> seen;
  for (int n = 0; n < N; ++n) {
    const Bone& b = bones_[n];
    if (b.head < 0 || b.head >= J || b.tail < 0 || b.tail >= J || b.head == b.tail)
      throw InvalidInput("bone " + std::to_string(n) + " has invalid joints");
    if (joints_[b.tail].parent != b.head)
      throw InvalidInput("bone " + std::to_string(n) + " must connect a joint to its parent");
    if (!seen.insert({b.head, b.tail}).second)
      throw InvalidInput("duplicate bone " + std::to_string(n));
    if (bone_of_joint_[b.tail] != -1)
      throw InvalidInput("joint " + joints_[b.tail].name + " belongs to two bones");
    bone_of_joint_[b.tail] = n;
    bone_lengths_[n] = (joints_[b.head].rest_pos - joints_[b.tail].rest_pos).norm();
    if (bone_lengths_[n] <= 0.0)
      throw InvalidInput("bone " + std::to_string(n) + " has zero length");
  }
  for (int j = 0; j < J; ++j) {
    if (joints_[j].parent != -1 && bone_of_joint_[j] == -1)
      throw InvalidInput("non-root joint " + joints_[j].name + " belongs to no bone");
  }

  neighbors_.resize(N);
  for (int n = 0; n < N; ++n) {
    for (int m = 0; m < N; ++m) {
      if (m == n) continue;
      for (int jn : {bones_[n].head, bones_[n].tail}) {
        if (jn == bones_[m].head || jn == bones_[m].tail) {
          neighbors_[n].push_back({m, jn});
        }
      }
    }
  }
}

int Skeleton::joint_index(const std::string& name) const {
  for (int j = 0; j < joint_count(); ++j) {
    if (joints_[j].name == name) return j;
  }
  throw InvalidInput("unknown joint name: " + name);
}

std::vector<int> Skeleton::descendants(int j) const {
  std::vector<int> out;
  for (int k = 0; k < joint_count(); ++k) {
    if (k == j) continue;
    for (int p = joints_[k].parent; p != -1; p = joints_[p].parent) {
      if (p == j) {
        out.push_back(k);
        break;
      }
    }
  }
  return out;
}

Frame frame_from_endpoints(const Vec3& head, const Vec3& tail) {
  const Vec3 d = tail - head;
  const double len = d.norm();
  if (len <= 1e-12) throw InvalidInput("degenerate bone: endpoints coincide");
  Frame f;
  const Vec3 a1 = d / len;
  const Vec3 up(0, 0, 1);
  Vec3 ref = (std::abs(a1.dot(up)) > 0.99) ? Vec3(1, 0, 0) : up;
  Vec3 a2 = ref.cross(a1);
  a2.normalize();
  const Vec3 a3 = a1.cross(a2);
  f.R.col(0) = a1;
  f.R.col(1) = a2;
  f.R.col(2) = a3;
  f.t = 0.5 * (head + tail);
  return f;
}

Pose rest_pose(const Skeleton& skel) {
  Pose p;
  p.frames.reserve(skel.part_count());
  for (int n = 0; n < skel.part_count(); ++n) {
    p.frames.push_back(frame_from_endpoints(skel.rest_head(n), skel.rest_tail(n)));
  }
  return p;
}

Pose posed_by_rotation(const Skeleton& skel, const Pose& base, int pivot_joint,
                       const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const Mat3 R = Eigen::AngleAxisd(angle, a).toRotationMatrix();
  // Pivot position in the base pose, taken through the pivot's own bone when
  // it has one, otherwise through any incident bone.
  Vec3 pivot;
  if (auto bn = skel.bone_of_joint(pivot_joint)) {
    pivot = posed_joint(skel, base, *bn, pivot_joint);
  } else {
    int incident = -1;
    for (int n = 0; n < skel.part_count(); ++n) {
      if (skel.bone(n).head == pivot_joint || skel.bone(n).tail == pivot_joint) {
        incident = n;
        break;
      }
    }
    if (incident < 0) throw InvalidInput("pivot joint touches no bone");
    pivot = posed_joint(skel, base, incident, pivot_joint);
  }

  // Bones distal to the pivot: tail joint strictly below the pivot.
  std::vector<int> distal = skel.descendants(pivot_joint);
  std::set<int> distal_set(distal.begin(), distal.end());
  Pose out = base;
  for (int n = 0; n < skel.part_count(); ++n) {
    if (distal_set.count(skel.bone(n).tail)) {
      out.frames[n].R = R * base.frames[n].R;
      out.frames[n].t = R * (base.frames[n].t - pivot) + pivot;
    }
  }
  return out;
}

Vec3 posed_joint(const Skeleton& skel, const Pose& pose, int n, int joint) {
  const Frame rest = frame_from_endpoints(skel.rest_head(n), skel.rest_tail(n));
  return from_local(to_local(skel.joint(joint).rest_pos, rest), pose.frames[n]);
}

Vec3 posed_head(const Skeleton& skel, const Pose& pose, int n) {
  return posed_joint(skel, pose, n, skel.bone(n).head);
}

Vec3 posed_tail(const Skeleton& skel, const Pose& pose, int n) {
  return posed_joint(skel, pose, n, skel.bone(n).tail);
}

VecX pose_condition(const Skeleton& skel, const Pose& pose, int n) {
  const int N = skel.part_count();
  if (pose.part_count() != N) throw InvalidInput("pose/skeleton part count mismatch");
  VecX z(12 * N);
  const Mat3 RnT = pose.frames[n].R.transpose();
  const Vec3 tn = pose.frames[n].t;
  for (int j = 0; j < N; ++j) {
    const Mat3 Rrel = RnT * pose.frames[j].R;
    const Vec3 trel = RnT * (pose.frames[j].t - tn);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) z[12 * j + 3 * r + c] = Rrel(r, c);
    for (int k = 0; k < 3; ++k) z[12 * j + 9 + k] = trel[k];
  }
  return z;
}

void rotation_to_axis_angle(const Mat3& R, Vec3& axis, double& angle) {
  Vec3 v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  v *= 0.5;
  const double s = v.norm();
  const double c = std::min(1.0, std::max(-1.0, 0.5 * (R.trace() - 1.0)));
  angle = std::atan2(s, c);
  if (s > 1e-9) {
    axis = v / s;
    return;
  }
  if (c > 0.0) {
    axis = Vec3(0, 0, 1);  // identity: any axis works, fixed for determinism
    angle = 0.0;
    return;
  }
  // Angle near pi: recover the axis from the symmetric part.
  Mat3 B = 0.5 * (R + Mat3::Identity());
  int i = 0;
  if (B(1, 1) > B(i, i)) i = 1;
  if (B(2, 2) > B(i, i)) i = 2;
  Vec3 a;
  a[i] = std::sqrt(std::max(0.0, B(i, i)));
  const double inv = 1.0 / (2.0 * a[i]);
  a[(i + 1) % 3] = (B(i, (i + 1) % 3) + B((i + 1) % 3, i)) * inv;
  a[(i + 2) % 3] = (B(i, (i + 2) % 3) + B((i + 2) % 3, i)) * inv;
  axis = a.normalized();
}

DeltaRotation relative_delta_rotation(const Skeleton& skel, const Pose& rest,
                                      const Pose& pose, int n, int neighbor_bone) {
  int shared = -1;
  for (const NeighborRef& nb : skel.neighbors(n)) {
    if (nb.bone == neighbor_bone) {
      shared = nb.joint;
      break;
    }
  }
  if (shared < 0) throw InvalidInput("bones are not adjacent");

  const Mat3 rel = pose.frames[n].R.transpose() * pose.frames[neighbor_bone].R;
  const Mat3 rel_rest = rest.frames[n].R.transpose() * rest.frames[neighbor_bone].R;
  const Mat3 delta = rel * rel_rest.transpose();

  DeltaRotation out;
  rotation_to_axis_angle(delta, out.axis, out.angle);
  out.center = to_local(posed_joint(skel, pose, n, shared), pose.frames[n]);
  return out;
}

void validate_pose(const Skeleton& skel, const Pose& pose) {
  if (pose.part_count() != skel.part_count())
    throw InvalidInput("pose has " + std::to_string(pose.part_count()) +
                       " frames, skeleton has " + std::to_string(skel.part_count()) +
                       " bones");
  for (const Frame& f : pose.frames) {
    const Mat3 err = f.R.transpose() * f.R - Mat3::Identity();
    if (err.cwiseAbs().maxCoeff() >= 1e-9 || f.R.determinant() < 0.0)
      throw InvalidInput("pose frame is not a proper rotation");
    if (!f.t.allFinite()) throw InvalidInput("pose translation is not finite");
  }
}

// ---------------------------------------------------------------------------
// JSON I/O
// ---------------------------------------------------------------------------

using nlohmann::json;

std::string skeleton_to_json(const Skeleton& skel) {
  json j;
  j["joints"] = json::array();
  for (const Joint& jt : skel.joints()) {
    json e;
    e["name"] = jt.name;
    if (jt.parent < 0) e["parent"] = nullptr;
    else e["parent"] = jt.parent;
    e["rest_pos"] = {jt.rest_pos.x(), jt.rest_pos.y(), jt.rest_pos.z()};
    j["joints"].push_back(e);
  }
  j["bones"] = json::array();
  for (const Bone& b : skel.bones()) j["bones"].push_back({b.head, b.tail});
  return j.dump(2);
}

Skeleton skeleton_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("skeleton json parse error: ") + e.what());
  }
  try {
    std::vector<Joint> joints;
    for (const auto& e : j.at("joints")) {
      Joint jt;
      jt.name = e.at("name").get<std::string>();
      jt.parent = e.at("parent").is_null() ? -1 : e.at("parent").get<int>();
      const auto& p = e.at("rest_pos");
      jt.rest_pos = Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
      joints.push_back(jt);
    }
    std::vector<Bone> bones;
    for (const auto& e : j.at("bones")) bones.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
    return Skeleton(std::move(joints), std::move(bones));
  } catch (const json::exception& e) {
    throw IoError(std::string("skeleton json schema error: ") + e.what());
  }
}

Skeleton load_skeleton(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open skeleton file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return skeleton_from_json(ss.str());
}

void save_skeleton(const Skeleton& skel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write skeleton file: " + path);
  out << skeleton_to_json(skel) << "\n";
}

std::vector<Pose> load_poses(const std::string& path, const Skeleton& skel) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pose file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("pose json parse error in " + path + ": " + e.what());
  }
  std::vector<Pose> poses;
  try {
    for (const auto& fr : j.at("frames")) {
      Pose p;
      const auto& Rs = fr.at("R");
      const auto& ts = fr.at("t");
      for (size_t n = 0; n < Rs.size(); ++n) {
        Frame f;
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) f.R(r, c) = Rs.at(n).at(3 * r + c).get<double>();
        for (int k = 0; k < 3; ++k) f.t[k] = ts.at(n).at(k).get<double>();
        p.frames.push_back(f);
      }
      validate_pose(skel, p);
      poses.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw IoError("pose json schema error in " + path + ": " + e.what());
  }
  if (poses.empty()) throw IoError("pose file has no frames: " + path);
  return poses;
}

void save_poses(const std::vector<Pose>& poses, const std::string& path) {
  json j;
  j["frames"] = json::array();
  for (const Pose& p : poses) {
    json fr;
    fr["R"] = json::array();
    fr["t"] = json::array();
    for (const Frame& f : p.frames) {
      json R = json::array();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) R.push_back(f.R(r, c));
      fr["R"].push_back(R);
      fr["t"].push_back({f.t.x(), f.t.y(), f.t.z()});
    }
    j["frames"].push_back(fr);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pose file: " + path);
  out << j.dump() << "\n";
}

}  // namespace unif
