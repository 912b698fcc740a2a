#pragma once

// Synthetic articulated-scan generation (capsule bodies) and scan-sequence
// file I/O. The capsule union doubles as an exact ground-truth SDF oracle.

#include <string>
#include <vector>

#include "unif/skeleton.hpp"
#include "unif/types.hpp"

namespace unif {

struct ScanFrame {
  MatX points;   // 3 x M
  MatX normals;  // 3 x M, unit length
  Pose pose;
  int frame_id = 0;

  int count() const { return int(points.cols()); }
};

struct CapsuleBody {
  std::vector<double> radii;          // per bone, meters
  std::vector<double> bulge;          // per bone, radial modulation amplitude
  int bulge_spheres = 8;              // stations per bone when bulge > 0

  static CapsuleBody uniform(int part_count, double radius, double bulge_amp = 0.0) {
    CapsuleBody b;
    b.radii.assign(part_count, radius);
    b.bulge.assign(part_count, bulge_amp);
    return b;
  }
};

/// Signed distance to a capsule around segment [p, q] with radius r.
double capsule_sdf(const Vec3& x, const Vec3& p, const Vec3& q, double r);

/// Exact signed distance of the posed capsule body (minimum over all bone
/// primitives). Also the ground-truth oracle used by tests and metrics.
double body_sdf(const Skeleton& skel, const CapsuleBody& body, const Pose& pose,
                const Vec3& x);
Vec3 body_sdf_grad(const Skeleton& skel, const CapsuleBody& body, const Pose& pose,
                   const Vec3& x);

/// Distance of x to the surface of bone n's primitives alone.
double bone_sdf(const Skeleton& skel, const CapsuleBody& body, const Pose& pose,
                int n, const Vec3& x);

struct SurfaceSamples {
  MatX points;
  MatX normals;
  std::vector<int> source_bone;
};

/// Uniform area sampling of the visible body surface. Points whose union SDF
/// is below -1e-6 sit inside another primitive (hidden inter-part surface)
/// and are rejected, mimicking what a real scanner sees. `only_bone` limits
/// the candidate surface to one bone's primitives (still rejecting points
/// hidden inside the rest of the body).
SurfaceSamples sample_body_surface(const Skeleton& skel, const CapsuleBody& body,
                                   const Pose& pose, int count, uint64_t seed,
                                   int only_bone = -1);

ScanFrame generate_frame(const Skeleton& skel, const CapsuleBody& body,
                         const Pose& pose, int points_per_frame, uint64_t seed,
                         int frame_id = 0);

/// Pose schedule specs: "static", "sweep:<joint>:<deg0>:<deg1>[:<axis>]",
/// "walk:<maxdeg>:<stepdeg>[:<axis>]" with axis one of x, y, z.
struct PoseSchedule {
  enum class Kind { kStatic, kSweep, kWalk } kind = Kind::kStatic;
  std::string joint;
  double deg0 = 0.0, deg1 = 0.0;
  double max_deg = 0.0, step_deg = 0.0;
  Vec3 axis = Vec3(0, 0, 1);

  static PoseSchedule parse(const std::string& spec);
  std::string str() const;
};

std::vector<Pose> schedule_poses(const Skeleton& skel, const PoseSchedule& schedule,
                                 int frames, uint64_t seed);

std::vector<ScanFrame> generate_sequence(const Skeleton& skel, const CapsuleBody& body,
                                         const PoseSchedule& schedule, int frames,
                                         int points_per_frame, uint64_t seed);

/// Frame index splits following the scan-sequence protocol: within the first
/// 80% of frames, every 10th frame trains (offset 0) and every 10th frame
/// with offset 5 is the interpolation test; the held-out tail is the
/// extrapolation test (stride 10).
struct DatasetSplits {
  std::vector<int> train, interp, extrap;
};
DatasetSplits make_splits(int frame_count);

void save_frame(const Skeleton& skel, const ScanFrame& frame, const std::string& ply_path);
ScanFrame load_frame(const Skeleton& skel, const std::string& ply_path);

struct Dataset {
  Skeleton skel;
  CapsuleBody body;
  std::vector<ScanFrame> frames;
  DatasetSplits splits;
  uint64_t seed = 0;
  std::string schedule;
  int points_per_frame = 0;
};

/// Directory layout: frames/NNNN.ply (+ NNNN.pose.json), skeleton.json,
/// dataset.json with the splits, the seed and the schedule.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Built-in synthetic skeletons: "arm2" (two-bone elbow), "chain3" (three
/// bones in a chain), "star3" (three bones radiating from one joint). Any
/// other name is treated as a path to a skeleton json file.
Skeleton make_skeleton(const std::string& name_or_path);

}  // namespace unif
