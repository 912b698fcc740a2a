#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "test_util.hpp"
#include "unif/cli.hpp"
#include "unif/dataio.hpp"
#include "unif/metrics.hpp"
#include "unif/model_io.hpp"
#include "unif/surface.hpp"

using namespace unif;
namespace fs = std::filesystem;

namespace {

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"unif"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(int(argv.size()), argv.data());
}

std::string tmpdir(const std::string& name) {
  const std::string dir = "/tmp/unif_cli_" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int count_lines(const std::string& path) {
  std::ifstream in(path);
  int n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("cli generate") {
  const std::string dir = tmpdir("gen");
  CHECK(cli({"generate", "--skeleton", "arm2", "--frames", "6", "--schedule",
             "sweep:elbow:0:90", "--seed", "7", "--points", "200", "--out",
             dir + "/ds"}) == 0);
  CHECK(fs::exists(dir + "/ds/skeleton.json"));
  CHECK(fs::exists(dir + "/ds/dataset.json"));
  for (int i = 0; i < 6; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%04d.ply", i);
    CHECK(fs::exists(dir + "/ds/frames/" + name));
  }
  const Dataset ds = load_dataset(dir + "/ds");
  CHECK(ds.frames.size() == 6);
  CHECK(ds.frames[0].count() == 200);

  SUBCASE("same seed reproduces identical files") {
    CHECK(cli({"generate", "--skeleton", "arm2", "--frames", "6", "--schedule",
               "sweep:elbow:0:90", "--seed", "7", "--points", "200", "--out",
               dir + "/ds2"}) == 0);
    for (const char* rel : {"frames/0000.ply", "frames/0003.pose.json", "skeleton.json",
                            "dataset.json"}) {
      CHECK(testutil::fnv1a_file(dir + "/ds/" + rel) ==
            testutil::fnv1a_file(dir + "/ds2/" + rel));
    }
  }

  SUBCASE("user errors exit with 1") {
    CHECK(cli({"generate", "--skeleton", "arm2", "--schedule", "orbit:1", "--out",
               dir + "/bad"}) == 1);
    CHECK(cli({"generate", "--no-such-flag"}) == 1);
  }
}

TEST_CASE("cli train, reconstruct, animate, eval pipeline") {
  const std::string dir = tmpdir("pipe");
  REQUIRE(cli({"generate", "--skeleton", "arm2", "--frames", "8", "--schedule",
               "sweep:elbow:0:80", "--seed", "3", "--points", "400", "--out",
               dir + "/ds"}) == 0);

  // Small smoke training; must stay far below the timing budget.
  const auto t0 = std::chrono::steady_clock::now();
  REQUIRE(cli({"train", "--dataset", dir + "/ds", "--out", dir + "/run",
               "--epochs", "400", "--seed", "5", "--lr", "3e-3",
               "--surface-points", "128", "--local-points", "96",
               "--global-points", "96", "--all-frames", "--decay-epochs", "250",
               "--decay-epochs", "340"}) == 0);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 300.0);  // the smoke budget; typical runs take a few seconds
  CHECK(fs::exists(dir + "/run/model.unif"));

  // Log: fixed 8-column format, one row per epoch.
  {
    std::ifstream log(dir + "/run/train_log.csv");
    std::string header;
    REQUIRE(std::getline(log, header));
    CHECK(header == "epoch,recon,unit,lim,sec,perim,total,lr");
    std::string row;
    REQUIRE(std::getline(log, row));
    CHECK(std::count(row.begin(), row.end(), ',') == 7);
    CHECK(count_lines(dir + "/run/train_log.csv") == 401);
  }

  // Reconstruct: union mesh, per-part meshes, grid dump, smooth-union flag.
  REQUIRE(cli({"reconstruct", "--model", dir + "/run/model.unif", "--out",
               dir + "/rec", "--res", "48", "--parts", "--dump-grid"}) == 0);
  const Mesh uni = load_mesh(dir + "/rec/mesh.obj");
  CHECK(uni.vertex_count() > 0);
  const Mesh part0 = load_mesh(dir + "/rec/mesh_part0.ply");
  REQUIRE(part0.vertex_count() > 0);
  REQUIRE(part0.part_id.size() == size_t(part0.vertex_count()));
  CHECK(part0.part_id.front() == 0);
  CHECK(fs::exists(dir + "/rec/mesh_grid.bin"));
  REQUIRE(cli({"reconstruct", "--model", dir + "/run/model.unif", "--out",
               dir + "/rec_smooth", "--res", "32", "--union", "smooth",
               "--format", "ply"}) == 0);
  const Mesh smooth = load_mesh(dir + "/rec_smooth/mesh.ply");
  CHECK(smooth.vertex_count() > 0);
  CHECK(smooth.part_id.size() == size_t(smooth.vertex_count()));

  // The rest-pose reconstruction matches the theta=0 scan of the dataset.
  const Skeleton skel = load_skeleton(dir + "/ds/skeleton.json");
  {
    const ScanFrame scan0 = load_frame(skel, dir + "/ds/frames/0000.ply");
    const double dist = p2s(scan0.points, uni);
    CHECK(dist < 20.0);  // smoke-level tolerance in millimeters
  }

  // Animate: one obj per pose.
  {
    std::vector<Pose> poses;
    for (int i = 0; i < 3; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "%04d.pose.json", i);
      poses.push_back(load_poses(dir + "/ds/frames/" + name, skel)[0]);
    }
    save_poses(poses, dir + "/anim_poses.json");
    REQUIRE(cli({"animate", "--model", dir + "/run/model.unif", "--poses",
                 dir + "/anim_poses.json", "--out", dir + "/anim", "--res", "32"}) == 0);
    for (int i = 0; i < 3; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%04d.obj", i);
      CHECK(fs::exists(dir + "/anim/" + std::string(name)));
    }
  }

  // Self evaluation: a scan drawn from the mesh itself scores f1 ~ 100.
  {
    ScanFrame frame;
    frame.points = sample_mesh(uni, 20000, 9);
    frame.normals = MatX::Zero(3, 20000);
    frame.normals.row(0).setOnes();
    frame.pose = rest_pose(skel);
    save_frame(skel, frame, dir + "/self_scan.ply");
    REQUIRE(cli({"eval", "--skeleton", dir + "/ds/skeleton.json", "--pair",
                 dir + "/rec/mesh.obj," + dir + "/self_scan.ply,interp", "--points",
                 "20000", "--seed", "9", "--csv", dir + "/metrics.csv"}) == 0);
    std::ifstream csv(dir + "/metrics.csv");
    std::string header, row, mean;
    REQUIRE(std::getline(csv, header));
    REQUIRE(std::getline(csv, row));
    REQUIRE(std::getline(csv, mean));
    CHECK(mean.substr(0, 5) == "mean,");
    std::stringstream ss(row);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 8);
    CHECK(std::stod(fields[7]) > 99.9);  // f1
    CHECK(std::stod(fields[4]) < 1e-6);  // chamfer (same seed and count)
  }

  // Eval user errors exit with code 1.
  CHECK(cli({"eval", "--skeleton", "arm2", "--pair", "only_one_field"}) == 1);
  CHECK(cli({"eval", "--skeleton", "arm2", "--pair", "a.obj,b.ply"}) == 1);
}

TEST_CASE("cli ablation: no-perim run logs a larger final perim metric") {
  const std::string dir = tmpdir("ablate");
  REQUIRE(cli({"generate", "--skeleton", "arm2", "--frames", "4", "--schedule",
               "sweep:elbow:0:70", "--seed", "11", "--points", "300", "--out",
               dir + "/ds"}) == 0);
  const std::vector<std::string> base = {
      "train", "--dataset", dir + "/ds", "--out", "", "--epochs", "150",
      "--seed", "13", "--surface-points", "96", "--local-points", "64",
      "--global-points", "64", "--all-frames"};
  auto run = [&](const std::string& out, bool no_perim) {
    std::vector<std::string> args = base;
    args[4] = out;
    if (no_perim) args.push_back("--no-perim");
    REQUIRE(cli(args) == 0);
    std::ifstream log(out + "/train_log.csv");
    std::string line, last;
    while (std::getline(log, line)) last = line;
    std::stringstream ss(last);
    std::string field;
    std::vector<double> row;
    while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
    return row[5];  // perim column
  };
  const double with_perim = run(dir + "/full", false);
  const double without = run(dir + "/noperim", true);
  CHECK(without > with_perim);
}

TEST_CASE("cli train accepts a config file with flag overrides") {
  const std::string dir = tmpdir("cfg");
  REQUIRE(cli({"generate", "--skeleton", "arm2", "--frames", "2", "--schedule",
               "static", "--seed", "2", "--points", "150", "--out", dir + "/ds"}) == 0);
  {
    std::ofstream cfg(dir + "/train.cfg");
    cfg << "epochs=5\nsurface-points=32\nlocal-points=16\nglobal-points=16\n"
        << "seed=4\nall-frames=true\n";
  }
  REQUIRE(cli({"train", "--dataset", dir + "/ds", "--out", dir + "/run",
               "--config", dir + "/train.cfg", "--epochs", "3"}) == 0);
  // The flag wins over the config file.
  CHECK(count_lines(dir + "/run/train_log.csv") == 4);
}
