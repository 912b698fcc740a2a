#pragma once

// Skeleton topology, per-bone local coordinate frames, pose-relative
// quantities and the pose condition vector.

#include <optional>
#include <string>
#include <vector>

#include "unif/types.hpp"

namespace unif {

struct Joint {
  std::string name;
  int parent = -1;  // -1 for the root
  Vec3 rest_pos = Vec3::Zero();
};

struct Bone {
  int head = -1;  // joint index (parent side)
  int tail = -1;  // joint index (child side)
};

/// A bone adjacent to another bone, together with the joint they share.
struct NeighborRef {
  int bone = -1;
  int joint = -1;
};

class Skeleton {
 public:
  Skeleton(std::vector<Joint> joints, std::vector<Bone> bones);

  int joint_count() const { return int(joints_.size()); }
  int part_count() const { return int(bones_.size()); }
  const Joint& joint(int j) const { return joints_[j]; }
  const Bone& bone(int n) const { return bones_[n]; }
  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<Bone>& bones() const { return bones_; }

  double bone_length(int n) const { return bone_lengths_[n]; }
  Vec3 rest_head(int n) const { return joints_[bones_[n].head].rest_pos; }
  Vec3 rest_tail(int n) const { return joints_[bones_[n].tail].rest_pos; }
  Vec3 rest_center(int n) const { return 0.5 * (rest_head(n) + rest_tail(n)); }

  /// Bone owning a joint: the bone whose tail is this joint (none for root).
  std::optional<int> bone_of_joint(int j) const {
    return bone_of_joint_[j] < 0 ? std::nullopt : std::optional<int>(bone_of_joint_[j]);
  }

  /// Adjacent bones of bone n with the shared joint (the set B^(n)).
  const std::vector<NeighborRef>& neighbors(int n) const { return neighbors_[n]; }

  int joint_index(const std::string& name) const;

  /// Joints that are distal to joint j (j itself excluded), i.e. everything
  /// whose path to the root passes through j.
  std::vector<int> descendants(int j) const;

 private:
  std::vector<Joint> joints_;
  std::vector<Bone> bones_;
  std::vector<double> bone_lengths_;
  std::vector<int> bone_of_joint_;
  std::vector<std::vector<NeighborRef>> neighbors_;
};

/// A rigid local coordinate frame: columns of R are the frame axes.
struct Frame {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

/// Per-bone frames. The frames ARE the pose; files carry them directly.
struct Pose {
  std::vector<Frame> frames;

  int part_count() const { return int(frames.size()); }
  const Frame& frame(int n) const { return frames[n]; }
};

/// Builds a bone-centered frame from two endpoint positions: origin at the
/// midpoint, first axis along the bone. The remaining axes follow a fixed
/// completion rule (world-up cross product, world-x fallback) so that frames
/// are reproducible.
Frame frame_from_endpoints(const Vec3& head, const Vec3& tail);

/// Frame of bone n in the given pose.
inline const Frame& bone_frame(const Skeleton&, const Pose& pose, int n) {
  return pose.frames[n];
}

/// Rest pose: bone-centered frames built from the rest joint positions.
Pose rest_pose(const Skeleton& skel);

/// Applies per-bone rigid motions on top of a base pose.
Pose posed_by_rotation(const Skeleton& skel, const Pose& base, int pivot_joint,
                       const Vec3& axis, double angle);

inline Vec3 to_local(const Vec3& x, const Frame& f) { return f.R.transpose() * (x - f.t); }
inline Vec3 from_local(const Vec3& x, const Frame& f) { return f.R * x + f.t; }

/// Posed position of a joint, mapped through the rigid motion of bone n.
Vec3 posed_joint(const Skeleton& skel, const Pose& pose, int n, int joint);

/// Posed endpoints of bone n.
Vec3 posed_head(const Skeleton& skel, const Pose& pose, int n);
Vec3 posed_tail(const Skeleton& skel, const Pose& pose, int n);

/// Pose condition vector z^(n): for every bone j the 9 entries of Rn^T Rj
/// (row-major) followed by the 3 entries of Rn^T (tj - tn). Length 12*N.
VecX pose_condition(const Skeleton& skel, const Pose& pose, int n);

struct DeltaRotation {
  Vec3 axis = Vec3(0, 0, 1);  // unit, expressed in part-n local coordinates
  double angle = 0.0;         // in [0, pi]
  Vec3 center = Vec3::Zero(); // shared joint in part-n local coordinates
};

/// Rotation of neighbor bone b relative to part n, measured against the rest
/// pose: delta = (Rn^T Rb) (Rn_rest^T Rb_rest)^T, returned as axis-angle with
/// the shared joint mapped into part n's frame.
DeltaRotation relative_delta_rotation(const Skeleton& skel, const Pose& rest,
                                      const Pose& pose, int n, int neighbor_bone);

/// Axis-angle extraction with angle in [0, pi]; axis (0,0,1) for identity.
void rotation_to_axis_angle(const Mat3& R, Vec3& axis, double& angle);

void validate_pose(const Skeleton& skel, const Pose& pose);

// JSON file formats. Skeleton: {"joints":[{name,parent,rest_pos}],
// "bones":[[head,tail],...]}. Poses: {"frames":[{"R":[N][9],"t":[N][3]}]}.
Skeleton load_skeleton(const std::string& path);
void save_skeleton(const Skeleton& skel, const std::string& path);
std::vector<Pose> load_poses(const std::string& path, const Skeleton& skel);
void save_poses(const std::vector<Pose>& poses, const std::string& path);

std::string skeleton_to_json(const Skeleton& skel);
Skeleton skeleton_from_json(const std::string& text);

}  // namespace unif
