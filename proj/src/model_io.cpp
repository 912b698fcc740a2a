#include "unif/model_io.hpp"

#include <fstream>

#include <json.hpp>

namespace unif {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "UNIF-1";

json config_to_json(const ModelConfig& c) {
  json j;
  j["aps"] = c.deform.aps;
  j["q_ratio_self_over_neighbor"] = c.deform.q_ratio_self_over_neighbor;
  j["rigidness_rest_geometry"] = c.deform.rigidness_rest_geometry;
  j["init_radius"] = c.init_radius;
  j["union_beta"] = c.union_beta;
  j["train_union"] = c.train_union == UnionMode::kSmooth ? "smooth" : "min";
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.deform.aps = j.at("aps").get<bool>();
  c.deform.q_ratio_self_over_neighbor = j.at("q_ratio_self_over_neighbor").get<bool>();
  c.deform.rigidness_rest_geometry = j.at("rigidness_rest_geometry").get<bool>();
  c.init_radius = j.at("init_radius").get<double>();
  c.union_beta = j.at("union_beta").get<double>();
  c.train_union = j.at("train_union").get<std::string>() == "min" ? UnionMode::kMin
                                                                  : UnionMode::kSmooth;
  return c;
}

void write_doubles(std::ofstream& out, const double* data, size_t n) {
  out.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, size_t n, const std::string& path) {
  in.read(reinterpret_cast<char*>(data), std::streamsize(n * sizeof(double)));
  if (!in) throw IoError("truncated model file: " + path);
}

void save_impl(const UnifModel& model, const AdamState* adam, int epoch,
               const std::string& path, const std::string& echo_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file: " + path);
  json j;
  j["parts"] = model.part_count();
  j["width"] = model.spec().width;
  j["zdim"] = model.spec().zdim;
  j["param_count"] = model.param_count();
  j["trunk_layers"] = json::array();
  for (int l = 0; l < 5; ++l)
    j["trunk_layers"].push_back({model.spec().layer_out(l), model.spec().layer_in(l)});
  j["head_layers"] = {{model.spec().width, model.spec().zdim},
                      {model.spec().width, model.spec().width}};
  j["config"] = config_to_json(model.config());
  j["skeleton"] = json::parse(skeleton_to_json(model.skeleton()));
  try {
    j["echo"] = json::parse(echo_json);
  } catch (const json::exception&) {
    j["echo"] = echo_json;
  }
  if (adam) {
    j["adam"] = {{"beta1", adam->beta1}, {"beta2", adam->beta2},
                 {"eps", adam->eps},     {"step", adam->step}};
    j["epoch"] = epoch;
  }
  out << kMagic << "\n" << j.dump() << "\n";
  write_doubles(out, model.params().data(), size_t(model.param_count()));
  for (const Frame& f : model.rest().frames) {
    double buf[12];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) buf[3 * r + c] = f.R(r, c);
    for (int k = 0; k < 3; ++k) buf[9 + k] = f.t[k];
    write_doubles(out, buf, 12);
  }
  if (adam) {
    write_doubles(out, adam->m.data(), size_t(adam->m.size()));
    write_doubles(out, adam->v.data(), size_t(adam->v.size()));
  }
  if (!out) throw IoError("short write: " + path);
}

std::pair<UnifModel, json> load_impl(const std::string& path, std::ifstream& in) {
  in.open(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file: " + path);
  std::string magic;
  if (!std::getline(in, magic) || magic != kMagic)
    throw IoError(path + ": not a UNIF-1 model file");
  std::string header_line;
  if (!std::getline(in, header_line)) throw IoError(path + ": missing header");
  json j;
  try {
    j = json::parse(header_line);
  } catch (const json::exception& e) {
    throw IoError(path + ": bad header json: " + e.what());
  }
  try {
    const Skeleton skel = skeleton_from_json(j.at("skeleton").dump());
    const ModelConfig config = config_from_json(j.at("config"));
    const int width = j.at("width").get<int>();
    UnifModel model(skel, config, width, 0);
    if (model.param_count() != j.at("param_count").get<int>())
      throw IoError(path + ": parameter count does not match the architecture");
    VecX params(model.param_count());
    read_doubles(in, params.data(), size_t(params.size()), path);
    Pose rest;
    rest.frames.resize(skel.part_count());
    for (Frame& f : rest.frames) {
      double buf[12];
      read_doubles(in, buf, 12, path);
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) f.R(r, c) = buf[3 * r + c];
      for (int k = 0; k < 3; ++k) f.t[k] = buf[9 + k];
    }
    model.load_state(params, rest);
    return {std::move(model), std::move(j)};
  } catch (const json::exception& e) {
    throw IoError(path + ": bad header schema: " + e.what());
  }
}

}  // namespace

void save_model(const UnifModel& model, const std::string& path,
                const std::string& echo_json) {
  save_impl(model, nullptr, 0, path, echo_json);
}

UnifModel load_model(const std::string& path) {
  std::ifstream in;
  auto [model, header] = load_impl(path, in);
  return std::move(model);
}

void save_checkpoint(const UnifModel& model, const AdamState& adam, int epoch,
                     const std::string& path, const std::string& echo_json) {
  save_impl(model, &adam, epoch, path, echo_json);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in;
  auto [model, header] = load_impl(path, in);
  if (!header.contains("adam"))
    throw IoError(path + ": not a checkpoint (no optimizer state)");
  Checkpoint ck{std::move(model), AdamState(0), 0};
  try {
    ck.adam = AdamState(ck.model.param_count());
    ck.adam.beta1 = header["adam"].at("beta1").get<double>();
    ck.adam.beta2 = header["adam"].at("beta2").get<double>();
    ck.adam.eps = header["adam"].at("eps").get<double>();
    ck.adam.step = header["adam"].at("step").get<long>();
    ck.epoch = header.at("epoch").get<int>();
  } catch (const json::exception& e) {
    throw IoError(path + ": bad checkpoint header: " + e.what());
  }
  read_doubles(in, ck.adam.m.data(), size_t(ck.adam.m.size()), path);
  read_doubles(in, ck.adam.v.data(), size_t(ck.adam.v.size()), path);
  return ck;
}

}  // namespace unif
