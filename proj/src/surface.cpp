#include "unif/surface.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>

namespace unif {

#include "mc_tables.inc"

namespace {

// Cube corner offsets and the corner pairs of the twelve edges, matching the
// table's convention: corners 0-3 ring the lower z face counterclockwise,
// 4-7 the upper face.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

Box pose_bounds(const Skeleton& skel, const Pose& pose, double margin) {
  Box b;
  b.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  b.hi = -b.lo;
  for (int n = 0; n < skel.part_count(); ++n) {
    for (const Vec3& p : {posed_head(skel, pose, n), posed_tail(skel, pose, n)}) {
      b.lo = b.lo.cwiseMin(p);
      b.hi = b.hi.cwiseMax(p);
    }
  }
  b.lo.array() -= margin;
  b.hi.array() += margin;
  return b;
}

namespace {

GridField make_grid(const Box& bbox, int resolution) {
  if (resolution < 8) throw InvalidInput("grid resolution must be at least 8");
  if (((bbox.hi - bbox.lo).array() <= 0.0).any())
    throw InvalidInput("grid bounding box is empty");
  GridField g;
  g.origin = bbox.lo;
  g.nx = g.ny = g.nz = resolution + 1;
  g.spacing = (bbox.hi - bbox.lo) / double(resolution);
  g.values.resize(size_t(g.nx) * g.ny * g.nz);
  return g;
}

/// Evaluates grid nodes in chunks through a per-part batch functor.
void fill_grid(GridField& g, bool with_part,
               const std::function<void(const MatX&, MatX&)>& eval_parts_values) {
  constexpr int kChunk = 4096;
  const size_t total = g.values.size();
  if (with_part) g.part.resize(total);
  MatX pts(3, kChunk);
  MatX d;
  size_t at = 0;
  while (at < total) {
    const int len = int(std::min<size_t>(kChunk, total - at));
    for (int c = 0; c < len; ++c) {
      const size_t idx = at + c;
      const int i = int(idx % g.nx);
      const int j = int((idx / g.nx) % g.ny);
      const int k = int(idx / (size_t(g.nx) * g.ny));
      pts.col(c) = g.position(i, j, k);
    }
    eval_parts_values(pts.leftCols(len), d);
    for (int c = 0; c < len; ++c) {
      int arg = 0;
      double best = d(0, c);
      for (int n = 1; n < d.rows(); ++n) {
        if (d(n, c) < best) {
          best = d(n, c);
          arg = n;
        }
      }
      g.values[at + c] = best;
      if (with_part) g.part[at + c] = arg;
    }
    at += len;
  }
}

}  // namespace

GridField eval_grid(const PoseEval& pe, const Box& bbox, int resolution) {
  GridField g = make_grid(bbox, resolution);
  fill_grid(g, true, [&](const MatX& pts, MatX& d) { pe.eval_parts(pts, false, d, nullptr); });
  return g;
}

GridField eval_part_grid(const PoseEval& pe, int part, const Box& bbox, int resolution) {
  GridField g = make_grid(bbox, resolution);
  fill_grid(g, false, [&](const MatX& pts, MatX& d) {
    MatX all;
    pe.eval_parts(pts, false, all, nullptr);
    d = all.row(part);
  });
  return g;
}

GridField eval_fn_grid(const std::function<double(const Vec3&)>& f, const Box& bbox,
                       int resolution) {
  GridField g = make_grid(bbox, resolution);
  fill_grid(g, false, [&](const MatX& pts, MatX& d) {
    d.resize(1, pts.cols());
    for (int c = 0; c < pts.cols(); ++c) d(0, c) = f(pts.col(c));
  });
  return g;
}

Mesh marching_cubes(const GridField& grid, double iso) {
  double vmax = 0.0;
  for (double v : grid.values) {
    if (!std::isfinite(v)) throw InvalidInput("marching_cubes: grid has non-finite values");
    vmax = std::max(vmax, std::abs(v));
  }
  // Symbolic perturbation: values exactly at the isolevel would put vertices
  // on grid nodes, where several edges collapse onto one point and the weld
  // map tears. Nudging them off keeps the triangulation watertight.
  const double bump = 1e-12 * (vmax + 1.0);
  Mesh mesh;
  std::vector<Vec3> verts;
  std::unordered_map<uint64_t, int> edge_vertex;
  // Unique edge key: 3 * node_linear_index + axis of the edge direction.
  const auto edge_key = [&](int i, int j, int k, int edge) {
    const int* c0 = kCorner[kEdge[edge][0]];
    const int* c1 = kCorner[kEdge[edge][1]];
    int a0[3] = {i + c0[0], j + c0[1], k + c0[2]};
    int a1[3] = {i + c1[0], j + c1[1], k + c1[2]};
    int axis = 0;
    for (int t = 0; t < 3; ++t) {
      if (a0[t] != a1[t]) axis = t;
      if (a0[t] > a1[t]) std::swap(a0[t], a1[t]);  // canonical low endpoint
    }
    const uint64_t node = uint64_t(grid.index(a0[0], a0[1], a0[2]));
    return 3 * node + uint64_t(axis);
  };

  double corner_val[8];
  for (int k = 0; k + 1 < grid.nz; ++k) {
    for (int j = 0; j + 1 < grid.ny; ++j) {
      for (int i = 0; i + 1 < grid.nx; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          double v = grid.at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
          if (v == iso) v = iso + bump;
          corner_val[c] = v;
          if (v < iso) cube |= 1 << c;
        }
        if (cube == 0 || cube == 255) continue;
        const int8_t* row = kTriTable[cube];
        for (int t = 0; row[t] != -1; t += 3) {
          int tri[3];
          for (int e = 0; e < 3; ++e) {
            const int edge = row[t + e];
            const uint64_t key = edge_key(i, j, k, edge);
            auto it = edge_vertex.find(key);
            if (it == edge_vertex.end()) {
              const int* c0 = kCorner[kEdge[edge][0]];
              const int* c1 = kCorner[kEdge[edge][1]];
              const double v0 = corner_val[kEdge[edge][0]];
              const double v1 = corner_val[kEdge[edge][1]];
              const double tt = (iso - v0) / (v1 - v0);
              const Vec3 p0 = grid.position(i + c0[0], j + c0[1], k + c0[2]);
              const Vec3 p1 = grid.position(i + c1[0], j + c1[1], k + c1[2]);
              it = edge_vertex.emplace(key, int(verts.size())).first;
              verts.push_back(p0 + tt * (p1 - p0));
            }
            tri[e] = it->second;
          }
          if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
          const Vec3 ab = verts[tri[1]] - verts[tri[0]];
          const Vec3 ac = verts[tri[2]] - verts[tri[0]];
          if (ab.cross(ac).norm() == 0.0) continue;  // exactly degenerate
          mesh.triangles.push_back({tri[0], tri[1], tri[2]});
        }
      }
    }
  }
  mesh.vertices.resize(3, verts.size());
  for (size_t v = 0; v < verts.size(); ++v) mesh.vertices.col(int(v)) = verts[v];
  return mesh;
}

Mesh extract_union(const UnifModel& model, const Pose& pose, const Box& bbox,
                   int resolution, bool with_labels) {
  PoseEval pe(model, pose);
  const GridField grid = eval_grid(pe, bbox, resolution);
  Mesh mesh = marching_cubes(grid, 0.0);
  if (with_labels && mesh.vertex_count() > 0) {
    MatX d;
    pe.eval_parts(mesh.vertices, false, d, nullptr);
    mesh.part_id.resize(mesh.vertex_count());
    for (int v = 0; v < mesh.vertex_count(); ++v) {
      int arg = 0;
      for (int n = 1; n < d.rows(); ++n) {
        if (d(n, v) < d(arg, v)) arg = n;
      }
      mesh.part_id[v] = arg;
    }
  }
  return mesh;
}

Mesh extract_part(const UnifModel& model, const Pose& pose, int n, const Box& bbox,
                  int resolution) {
  if (n < 0 || n >= model.part_count()) throw InvalidInput("extract_part: bad part index");
  PoseEval pe(model, pose);
  const GridField grid = eval_part_grid(pe, n, bbox, resolution);
  Mesh mesh = marching_cubes(grid, 0.0);
  mesh.part_id.assign(mesh.vertex_count(), n);
  return mesh;
}

// ---------------------------------------------------------------------------
// Mesh files
// ---------------------------------------------------------------------------

void export_mesh(const Mesh& mesh, const std::string& path, MeshFormat format) {
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      if (t[e] < 0 || t[e] >= mesh.vertex_count())
        throw InvalidInput("export_mesh: triangle index out of range");
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write mesh file: " + path);
  if (format == MeshFormat::kObj) {
    char buf[128];
    for (int v = 0; v < mesh.vertex_count(); ++v) {
      std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", mesh.vertices(0, v),
                    mesh.vertices(1, v), mesh.vertices(2, v));
      out << buf;
    }
    for (const auto& t : mesh.triangles) {
      out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
    }
  } else {
    const bool labels = !mesh.part_id.empty();
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << mesh.vertex_count() << "\n"
        << "property double x\nproperty double y\nproperty double z\n";
    if (labels) out << "property int part_id\n";
    out << "element face " << mesh.triangle_count() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    for (int v = 0; v < mesh.vertex_count(); ++v) {
      double xyz[3] = {mesh.vertices(0, v), mesh.vertices(1, v), mesh.vertices(2, v)};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
      if (labels) {
        const int32_t id = mesh.part_id[v];
        out.write(reinterpret_cast<const char*>(&id), sizeof(id));
      }
    }
    for (const auto& t : mesh.triangles) {
      const uint8_t n = 3;
      out.write(reinterpret_cast<const char*>(&n), 1);
      const int32_t idx[3] = {t[0], t[1], t[2]};
      out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
    }
  }
  if (!out) throw IoError("short write: " + path);
}

namespace {

Mesh load_obj(std::ifstream& in, const std::string& path) {
  Mesh mesh;
  std::vector<Vec3> verts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 v;
      ss >> v.x() >> v.y() >> v.z();
      if (ss.fail())
        throw IoError(path + ":" + std::to_string(line_no) + ": bad vertex line");
      verts.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> tri;
      for (int e = 0; e < 3; ++e) {
        std::string word;
        ss >> word;
        if (word.empty())
          throw IoError(path + ":" + std::to_string(line_no) + ": bad face line");
        tri[e] = std::stoi(word.substr(0, word.find('/'))) - 1;
        if (tri[e] < 0 || tri[e] >= int(verts.size()))
          throw IoError(path + ":" + std::to_string(line_no) + ": face index out of range");
      }
      mesh.triangles.push_back(tri);
    }
  }
  mesh.vertices.resize(3, verts.size());
  for (size_t v = 0; v < verts.size(); ++v) mesh.vertices.col(int(v)) = verts[v];
  return mesh;
}

Mesh load_ply_mesh(std::ifstream& in, const std::string& path) {
  std::string line;
  long vcount = -1, fcount = -1;
  bool has_label = false;
  int line_no = 1;  // "ply" already consumed
  if (!std::getline(in, line) || line != "format binary_little_endian 1.0")
    throw IoError(path + ": expected binary_little_endian 1.0");
  std::string element;
  std::vector<std::string> vertex_props;
  while (std::getline(in, line)) {
    ++line_no;
    if (line == "end_header") break;
    std::stringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "comment") continue;
    if (word == "element") {
      std::string what;
      long n;
      ss >> what >> n;
      element = what;
      if (what == "vertex") vcount = n;
      else if (what == "face") fcount = n;
      else throw IoError(path + ": unsupported element " + what);
    } else if (word == "property") {
      if (element == "vertex") {
        std::string type, name;
        ss >> type >> name;
        if (name == "part_id") has_label = true;
        else vertex_props.push_back(type);
      }
    }
  }
  if (vcount < 0 || fcount < 0) throw IoError(path + ": missing element counts");
  if (vertex_props.size() != 3)
    throw IoError(path + ": expected x, y, z double vertex properties");
  Mesh mesh;
  mesh.vertices.resize(3, vcount);
  if (has_label) mesh.part_id.resize(vcount);
  for (long v = 0; v < vcount; ++v) {
    double xyz[3];
    in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    if (has_label) {
      int32_t id;
      in.read(reinterpret_cast<char*>(&id), sizeof(id));
      mesh.part_id[v] = id;
    }
    if (!in) throw IoError(path + ": truncated vertex payload");
    for (int k = 0; k < 3; ++k) mesh.vertices(k, v) = xyz[k];
  }
  for (long f = 0; f < fcount; ++f) {
    uint8_t n;
    in.read(reinterpret_cast<char*>(&n), 1);
    if (!in || n != 3) throw IoError(path + ": only triangle faces are supported");
    int32_t idx[3];
    in.read(reinterpret_cast<char*>(idx), sizeof(idx));
    if (!in) throw IoError(path + ": truncated face payload");
    mesh.triangles.push_back({idx[0], idx[1], idx[2]});
  }
  return mesh;
}

}  // namespace

Mesh load_mesh(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mesh file: " + path);
  std::string first;
  if (!std::getline(in, first)) {
    Mesh empty;  // a zero-element obj file is a valid empty mesh
    empty.vertices.resize(3, 0);
    return empty;
  }
  if (first == "ply") return load_ply_mesh(in, path);
  in.clear();
  in.seekg(0);
  return load_obj(in, path);
}

void save_grid(const GridField& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write grid file: " + path);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "unifgrid %d %d %d %.17g %.17g %.17g %.17g %.17g %.17g\n",
                grid.nx, grid.ny, grid.nz, grid.origin.x(), grid.origin.y(),
                grid.origin.z(), grid.spacing.x(), grid.spacing.y(), grid.spacing.z());
  out << buf;
  std::vector<float> vals(grid.values.begin(), grid.values.end());
  out.write(reinterpret_cast<const char*>(vals.data()),
            std::streamsize(vals.size() * sizeof(float)));
  if (!out) throw IoError("short write: " + path);
}

}  // namespace unif
