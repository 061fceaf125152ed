#include "hadnet/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "hadnet/errors.hpp"

namespace hadnet::io {

namespace {

void reject_unknown(const ordered_json& j, std::initializer_list<std::string_view> keys,
                    std::string_view where) {
  if (!j.is_object()) throw Error(ErrorCode::Parse, std::string(where) + " must be an object");
  const std::set<std::string_view> known(keys);
  for (const auto& item : j.items())
    if (!known.count(item.key()))
      throw Error(ErrorCode::Parse, "unknown key '" + item.key() + "' in " + std::string(where));
}

template <typename T>
void read_opt(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ordered_json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from(const ordered_json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw Error(ErrorCode::Parse, "matrix data length differs from shape");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

std::size_t channel_index(std::string_view name) {
  for (std::size_t c = 0; c < kChannelCount; ++c)
    if (kChannelNames[c] == name) return c;
  throw Error(ErrorCode::Parse, "unknown channel '" + std::string(name) + "'");
}

template <typename F>
auto parsing(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
}

}  // namespace

ordered_json to_json(const model::ModelConfig& c) {
  ordered_json j;
  j["graph"] = ordered_json::parse(gdpm::serialize_graph(c.graph));
  j["d"] = c.d;
  j["w"] = c.w;
  j["h"] = c.h;
  j["dt_minutes"] = c.dt_minutes;
  j["a0"] = c.a0;
  auto ex = ordered_json::array();
  for (const auto& l : c.exogenous) ex.push_back({{"channel", kChannelNames.at(l.channel)}, {"node", l.node}});
  j["exogenous"] = ex;
  j["clamping"] = c.clamping;
  j["drain"] = c.drain == gdpm::DrainMode::Literal ? "literal" : "conserving";
  j["bn_eps"] = c.bn_eps;
  j["bn_momentum"] = c.bn_momentum;
  return j;
}

model::ModelConfig model_config_from_json(const ordered_json& j) {
  return parsing([&] {
    reject_unknown(j, {"graph", "graph_file", "d", "w", "h", "dt_minutes", "a0", "exogenous", "clamping",
                       "drain", "bn_eps", "bn_momentum"},
                   "model");
    model::ModelConfig c;
    if (j.contains("graph")) c.graph = gdpm::parse_graph(j["graph"].dump());
    if (j.contains("graph_file")) c.graph = gdpm::load_graph_file(j["graph_file"].get<std::string>());
    read_opt(j, "d", c.d);
    read_opt(j, "w", c.w);
    read_opt(j, "h", c.h);
    read_opt(j, "dt_minutes", c.dt_minutes);
    read_opt(j, "a0", c.a0);
    if (j.contains("exogenous")) {
      c.exogenous.clear();
      for (const auto& l : j["exogenous"])
        c.exogenous.push_back({channel_index(l.at("channel").get<std::string>()), l.at("node").get<std::string>()});
    }
    read_opt(j, "clamping", c.clamping);
    if (j.contains("drain")) {
      const auto d = j["drain"].get<std::string>();
      if (d == "literal") c.drain = gdpm::DrainMode::Literal;
      else if (d == "conserving") c.drain = gdpm::DrainMode::Conserving;
      else throw Error(ErrorCode::Parse, "drain must be literal or conserving");
    }
    read_opt(j, "bn_eps", c.bn_eps);
    read_opt(j, "bn_momentum", c.bn_momentum);
    c.validate();
    return c;
  });
}

ordered_json to_json(const training::TrainConfig& c) {
  ordered_json j;
  j["model"] = to_json(c.model);
  auto bounds = ordered_json::array();
  for (const auto& b : c.loss.bounds)
    bounds.push_back({{"target", b.target}, {"source", b.source}, {"lo", b.lo}, {"hi", b.hi}});
  j["loss"] = {{"alpha_eps", c.loss.alpha_eps}, {"alpha_nr", c.loss.alpha_nr}, {"bounds", bounds}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["train_stride"] = c.train_stride;
  j["split_ratio"] = c.split_ratio;
  j["recalibrate_batch_norm"] = c.recalibrate_batch_norm;
  return j;
}

training::TrainConfig train_config_from_json(const ordered_json& j) {
  return parsing([&] {
    reject_unknown(j, {"model", "loss", "optimizer", "batch_size", "epochs", "train_stride", "split_ratio",
                       "recalibrate_batch_norm"},
                   "train config");
    training::TrainConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j["model"]);
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      reject_unknown(l, {"alpha_eps", "alpha_nr", "bounds"}, "loss");
      read_opt(l, "alpha_eps", c.loss.alpha_eps);
      read_opt(l, "alpha_nr", c.loss.alpha_nr);
      if (l.contains("bounds")) {
        c.loss.bounds.clear();
        for (const auto& b : l["bounds"])
          c.loss.bounds.push_back({b.at("target").get<std::string>(), b.at("source").get<std::string>(),
                                   b.at("lo").get<double>(), b.at("hi").get<double>()});
      }
    }
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      reject_unknown(o, {"lr", "beta1", "beta2", "eps", "weight_decay"}, "optimizer");
      read_opt(o, "lr", c.optimizer.lr);
      read_opt(o, "beta1", c.optimizer.beta1);
      read_opt(o, "beta2", c.optimizer.beta2);
      read_opt(o, "eps", c.optimizer.eps);
      read_opt(o, "weight_decay", c.optimizer.weight_decay);
    }
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "train_stride", c.train_stride);
    read_opt(j, "split_ratio", c.split_ratio);
    read_opt(j, "recalibrate_batch_norm", c.recalibrate_batch_norm);
    c.validate();
    return c;
  });
}

training::TrainConfig load_train_config(const std::filesystem::path& path) {
  return train_config_from_json(read_json(path));
}

ordered_json to_json(const model::ModelParams& p) {
  ordered_json j;
  j["h0"] = matrix_json(p.h0);
  for (auto [name, maps] : {std::pair{"query", &p.query}, std::pair{"key", &p.key}, std::pair{"value", &p.value}})
    j[name] = {{"weight", matrix_json(maps->weight)}, {"bias", matrix_json(maps->bias)}};
  j["bn_gamma"] = matrix_json(p.bn_gamma);
  j["bn_beta"] = matrix_json(p.bn_beta);
  auto means = ordered_json::array(), vars = ordered_json::array();
  for (const auto& s : p.bn_stats) {
    means.push_back(matrix_json(s.running_mean));
    vars.push_back(matrix_json(s.running_var));
  }
  j["bn_running_mean"] = std::move(means);
  j["bn_running_var"] = std::move(vars);
  j["norm"] = {{"offset", p.norm.offset}, {"scale", p.norm.scale}};
  return j;
}

model::ModelParams model_params_from_json(const ordered_json& j) {
  return parsing([&] {
    model::ModelParams p;
    p.h0 = matrix_from(j.at("h0"));
    for (auto [name, maps] : {std::pair{"query", &p.query}, std::pair{"key", &p.key}, std::pair{"value", &p.value}}) {
      maps->weight = matrix_from(j.at(name).at("weight"));
      maps->bias = matrix_from(j.at(name).at("bias"));
    }
    p.bn_gamma = matrix_from(j.at("bn_gamma"));
    p.bn_beta = matrix_from(j.at("bn_beta"));
    const auto& means = j.at("bn_running_mean");
    const auto& vars = j.at("bn_running_var");
    if (means.size() != vars.size()) throw Error(ErrorCode::Parse, "batch-norm statistics differ in length");
    for (std::size_t t = 0; t < means.size(); ++t)
      p.bn_stats.push_back({matrix_from(means[t]), matrix_from(vars[t])});
    p.norm.offset = j.at("norm").at("offset").get<std::vector<double>>();
    p.norm.scale = j.at("norm").at("scale").get<std::vector<double>>();
    return p;
  });
}

namespace {

void check_shapes(const model::ModelConfig& c, const model::ModelParams& p) {
  const std::size_t k = c.node_count(), d = c.d;
  auto same = [](const Matrix& m, std::size_t r, std::size_t cc) { return m.rows() == r && m.cols() == cc; };
  bool ok = same(p.h0, k, d - 1) && same(p.bn_gamma, 1, k * (d - 1)) && same(p.bn_beta, 1, k * (d - 1)) &&
            p.bn_stats.size() == c.w + c.h &&
            p.norm.offset.size() == k && p.norm.scale.size() == k;
  for (const auto& s : p.bn_stats)
    ok = ok && same(s.running_mean, 1, k * (d - 1)) && same(s.running_var, 1, k * (d - 1));
  for (const auto* m : {&p.query, &p.key, &p.value}) ok = ok && same(m->weight, k * d, d) && same(m->bias, k, d);
  if (!ok) throw Error(ErrorCode::InvalidArgument, "checkpoint parameters do not match its configuration");
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  check_shapes(ck.config, ck.params);
  ordered_json j;
  j["format"] = "hadnet-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = ck.seed;
  j["parameter_count"] = ck.params.learned_count();
  j["config"] = to_json(ck.config);
  j["params"] = to_json(ck.params);
  write_text(path, j.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto j = read_json(path);
  return parsing([&] {
    if (j.value("format", "") != "hadnet-checkpoint")
      throw Error(ErrorCode::Parse, path.string() + " is not a checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw Error(ErrorCode::InvalidArgument, "unsupported checkpoint version");
    Checkpoint ck;
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.config = model_config_from_json(j.at("config"));
    ck.params = model_params_from_json(j.at("params"));
    check_shapes(ck.config, ck.params);
    return ck;
  });
}

ordered_json to_json(const physio::PhysioParams& p) {
  ordered_json j;
  const auto a = p.to_array();
  for (std::size_t i = 0; i < a.size(); ++i) j[std::string(physio::kParamNames[i])] = a[i];
  return j;
}

physio::PhysioParams physio_params_from_json(const ordered_json& j) {
  return parsing([&] {
    std::array<double, physio::PhysioParams::kCount> a{};
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = j.at(std::string(physio::kParamNames[i])).get<double>();
    return physio::PhysioParams::from_array(a);
  });
}

void save_patient_truth(const PatientTruth& t, const std::filesystem::path& path) {
  ordered_json j;
  j["patient_id"] = t.patient_id;
  j["gamma"] = to_json(t.profile.gamma);
  j["basal_u_per_hour"] = t.profile.basal_u_per_hour;
  j["icr"] = t.profile.icr;
  write_text(path, j.dump(2) + "\n");
}

PatientTruth load_patient_truth(const std::filesystem::path& path) {
  const auto j = read_json(path);
  return parsing([&] {
    PatientTruth t;
    t.patient_id = j.at("patient_id").get<std::string>();
    t.profile.gamma = physio_params_from_json(j.at("gamma"));
    t.profile.basal_u_per_hour = j.at("basal_u_per_hour").get<double>();
    t.profile.icr = j.at("icr").get<double>();
    return t;
  });
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

ordered_json read_json(const std::filesystem::path& path) {
  const auto text = read_text(path);
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

}  // namespace hadnet::io
