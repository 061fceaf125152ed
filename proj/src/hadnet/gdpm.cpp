#include "hadnet/gdpm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "hadnet/errors.hpp"
#include "json.hpp"

namespace hadnet::gdpm {

using nlohmann::json;

Graph Graph::build(std::vector<std::string> nodes, std::span<const Edge> edges,
                   std::optional<ErrorNodes> error_nodes) {
  if (nodes.empty()) throw Error(ErrorCode::InvalidArgument, "graph needs at least one node");
  std::set<std::string> seen;
  for (const auto& n : nodes) {
    if (n.empty()) throw Error(ErrorCode::InvalidArgument, "empty node label");
    if (!seen.insert(n).second) throw Error(ErrorCode::DuplicateNode, n);
  }

  Graph g;
  g.names_ = std::move(nodes);
  const std::size_t k = g.names_.size();
  g.adjacency_ = Matrix(k, k);

  for (const auto& e : edges) {
    const std::size_t i = g.index_of(e.target);
    const std::size_t j = g.index_of(e.source);
    if (i == j) throw Error(ErrorCode::InvalidArgument, "self edge on " + e.target);
    if (g.adjacency_(i, j) != 0.0)
      throw Error(ErrorCode::DuplicateEdge, e.source + " -> " + e.target);
    if (g.adjacency_(j, i) != 0.0)
      throw Error(ErrorCode::BidirectionalEdge, e.source + " <-> " + e.target);
    g.adjacency_(i, j) = static_cast<double>(static_cast<int>(e.sign));
  }

  if (error_nodes) {
    g.error_pos_ = g.index_of(error_nodes->positive);
    g.error_neg_ = g.index_of(error_nodes->negative);
    if (*g.error_pos_ == 0 || *g.error_neg_ == 0 || *g.error_pos_ == *g.error_neg_)
      throw Error(ErrorCode::InvalidArgument, "error nodes must be distinct non-glucose nodes");
  }
  return g;
}

std::optional<std::size_t> Graph::find(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t Graph::index_of(std::string_view name) const {
  if (auto idx = find(name)) return *idx;
  throw Error(ErrorCode::UnknownNode, std::string(name));
}

std::vector<Edge> Graph::edges() const {
  std::vector<Edge> out;
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < size(); ++j)
      if (adjacency_(i, j) != 0.0)
        out.push_back({names_[i], names_[j], adjacency_(i, j) > 0 ? Sign::Positive : Sign::Negative});
  return out;
}

Graph default_graph() {
  const std::vector<Edge> edges = {
      {"G", "R", Sign::Negative},       {"G", "q_gut", Sign::Positive},
      {"G", "eps_pos", Sign::Positive}, {"G", "eps_neg", Sign::Negative},
      {"R", "I", Sign::Positive},       {"R", "eps_neg", Sign::Positive},
      {"q_gut", "q_sto", Sign::Positive}, {"q_gut", "eps_pos", Sign::Positive},
  };
  return Graph::build({"G", "I", "R", "q_sto", "q_gut", "eps_pos", "eps_neg"}, edges,
                      ErrorNodes{"eps_pos", "eps_neg"});
}

Graph parse_graph(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("graph file: ") + e.what());
  }
  try {
    auto nodes = doc.at("nodes").get<std::vector<std::string>>();
    std::vector<Edge> edges;
    for (const auto& e : doc.at("edges")) {
      const auto sign = e.at("sign").get<std::string>();
      if (sign != "+" && sign != "-")
        throw Error(ErrorCode::Parse, "edge sign must be \"+\" or \"-\"");
      edges.push_back({e.at("target").get<std::string>(), e.at("source").get<std::string>(),
                       sign == "+" ? Sign::Positive : Sign::Negative});
    }
    std::optional<ErrorNodes> errs;
    if (doc.contains("error_nodes")) {
      const auto& en = doc["error_nodes"];
      errs = ErrorNodes{en.at("positive").get<std::string>(), en.at("negative").get<std::string>()};
    }
    return Graph::build(std::move(nodes), edges, errs);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("graph file: ") + e.what());
  }
}

std::string serialize_graph(const Graph& graph) {
  json doc;
  doc["nodes"] = graph.node_names();
  json edges = json::array();
  for (const auto& e : graph.edges())
    edges.push_back({{"target", e.target}, {"source", e.source},
                     {"sign", e.sign == Sign::Positive ? "+" : "-"}});
  doc["edges"] = edges;
  if (graph.error_pos_index() && graph.error_neg_index())
    doc["error_nodes"] = {{"positive", graph.node_names()[*graph.error_pos_index()]},
                          {"negative", graph.node_names()[*graph.error_neg_index()]}};
  return doc.dump(2);
}

Graph load_graph_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open graph file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_graph(ss.str());
}

Matrix assemble_dynamics(const Matrix& adjacency, const Matrix& magnitudes, DrainMode mode) {
  const std::size_t k = adjacency.rows();
  if (adjacency.cols() != k || !magnitudes.same_shape(adjacency))
    throw Error(ErrorCode::ShapeMismatch, "adjacency and magnitudes must both be KxK");

  Matrix m(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    double drain = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      m(i, j) = adjacency(i, j) * magnitudes(i, j);
      const double f = mode == DrainMode::Literal ? magnitudes(i, j) : magnitudes(j, i);
      drain += std::abs(adjacency(j, i)) * f;
    }
    m(i, i) -= drain;
  }
  return m;
}

std::vector<double> euler_update(std::span<const double> v, const Matrix& dynamics, bool clamp) {
  auto dv = matvec(dynamics, v);
  for (std::size_t i = 0; i < dv.size(); ++i) {
    dv[i] += v[i];
    if (clamp) dv[i] = std::max(dv[i], 0.0);
  }
  return dv;
}

ValidationReport validate_spec(const PhysioModelSpec& spec,
                               std::span<const PvTrajectory> trajectories) {
  if (trajectories.empty()) throw Error(ErrorCode::EmptyTrajectory, "no trajectories supplied");
  const std::size_t k = spec.nodes.size();
  for (const auto& tr : trajectories) {
    if (tr.states.empty()) throw Error(ErrorCode::EmptyTrajectory, "trajectory has no samples");
    for (const auto& s : tr.states)
      if (s.size() != k) throw Error(ErrorCode::ShapeMismatch, "state width differs from node count");
  }
  auto scale = [&](std::size_t i) { return spec.scale.empty() ? 1.0 : spec.scale.at(i); };

  ValidationReport report;

  // (1) positivity: report the first negative sample.
  for (std::size_t ti = 0; ti < trajectories.size() && report.positivity.passed; ++ti) {
    const auto& states = trajectories[ti].states;
    for (std::size_t t = 0; t < states.size() && report.positivity.passed; ++t)
      for (std::size_t n = 0; n < k; ++n)
        if (states[t][n] < 0.0) {
          report.positivity = {false, "negative value of " + spec.nodes[n], ti, t, n};
          break;
        }
  }

  // (2) structure first, then sign consistency along the samples.
  auto& dec = report.decomposition;
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& term : spec.terms) {
    if (term.target >= k || term.source >= k) {
      dec = {false, "term " + term.label + " references an unknown node"};
      break;
    }
    if (!pairs.insert({term.target, term.source}).second) {
      dec = {false, "pair appears in more than one term: " + term.label};
      dec.target = term.target;
      dec.source = term.source;
      break;
    }
    if (term.target != term.source && pairs.count({term.source, term.target})) {
      dec = {false, "bidirectional diffusion: " + term.label};
      dec.target = term.target;
      dec.source = term.source;
      break;
    }
  }
  for (std::size_t ti = 0; ti < trajectories.size() && dec.passed; ++ti) {
    const auto& tr = trajectories[ti];
    for (std::size_t t = 0; t < tr.states.size() && dec.passed; ++t) {
      for (const auto& term : spec.terms) {
        const double h = term.rate(tr.states[t], static_cast<double>(t) * tr.dt_minutes);
        const double signed_h = h * static_cast<int>(term.sign);
        if (signed_h < -1e-12) {
          dec = {false, "term " + term.label + " changes sign", ti, t};
          dec.target = term.target;
          dec.source = term.source;
          break;
        }
      }
    }
  }

  // (3) magnitude bound with Δt folded into the per-step magnitude.
  auto& mag = report.magnitude;
  if (dec.passed) {
    for (std::size_t ti = 0; ti < trajectories.size(); ++ti) {
      const auto& tr = trajectories[ti];
      for (std::size_t t = 0; t < tr.states.size(); ++t) {
        for (const auto& term : spec.terms) {
          const double p = tr.states[t][term.source] * scale(term.source);
          if (p <= 1e-12) continue;
          const double h = term.rate(tr.states[t], static_cast<double>(t) * tr.dt_minutes);
          const double ratio = std::abs(h) * scale(term.target) * tr.dt_minutes / p;
          if (ratio > mag.max_ratio) {
            mag.max_ratio = ratio;
            if (ratio > 1.0 && mag.passed) {
              mag.passed = false;
              mag.detail = "magnitude above 1 for term " + term.label;
              mag.trajectory = ti;
              mag.step = t;
              mag.target = term.target;
              mag.source = term.source;
            }
          }
        }
      }
    }
  } else {
    mag = {false, "skipped: decomposition failed"};
  }
  if (mag.passed) {
    std::ostringstream os;
    os << "max ratio " << mag.max_ratio;
    mag.detail = os.str();
  }
  return report;
}

}  // namespace hadnet::gdpm
