#pragma once

// Graph diffusion physiological models: a signed adjacency A over K
// physiological variables (PVs) plus a magnitude matrix F give the linear
// per-step operator M used for the diffusion update v' = v + M v.
//
// Index convention throughout the library: A(i, j) is the signed effect of
// SOURCE node j on TARGET node i, so A(G, R) = -1 reads "remote insulin
// lowers glucose".

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hadnet/matrix.hpp"

namespace hadnet::gdpm {

enum class Sign : int { Negative = -1, Positive = 1 };

struct Edge {
  std::string target;
  std::string source;
  Sign sign = Sign::Positive;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct ErrorNodes {
  std::string positive;
  std::string negative;
};

class Graph {
 public:
  Graph() = default;

  /// Builds a graph from unique node labels and (target, source, sign) edges.
  /// Node 0 is the glucose node. Throws DuplicateNode, UnknownNode,
  /// DuplicateEdge or BidirectionalEdge.
  static Graph build(std::vector<std::string> nodes, std::span<const Edge> edges,
                     std::optional<ErrorNodes> error_nodes = std::nullopt);

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& node_names() const noexcept { return names_; }
  const Matrix& adjacency() const noexcept { return adjacency_; }
  int sign(std::size_t target, std::size_t source) const {
    return static_cast<int>(adjacency_(target, source));
  }

  std::size_t glucose_index() const noexcept { return 0; }
  std::optional<std::size_t> error_pos_index() const noexcept { return error_pos_; }
  std::optional<std::size_t> error_neg_index() const noexcept { return error_neg_; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  /// Edges in row-major order of A.
  std::vector<Edge> edges() const;

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  std::vector<std::string> names_;
  Matrix adjacency_;
  std::optional<std::size_t> error_pos_;
  std::optional<std::size_t> error_neg_;
};

/// The 7-node glucose/insulin/carbs graph with error compartments
/// (G, I, R, q_sto, q_gut, eps_pos, eps_neg).
Graph default_graph();

Graph parse_graph(std::string_view json_text);
std::string serialize_graph(const Graph& graph);
Graph load_graph_file(const std::filesystem::path& path);

enum class DrainMode {
  Literal,     // drain_i = sum_j |A(j,i)| F(i,j)
  Conserving,  // drain_i = sum_j |A(j,i)| F(j,i); column sums vanish on constructive graphs
};

/// M = A.*F - Diag(drain). Throws ShapeMismatch.
Matrix assemble_dynamics(const Matrix& adjacency, const Matrix& magnitudes,
                         DrainMode mode = DrainMode::Literal);

/// v' = v + M v, optionally clamped at zero.
std::vector<double> euler_update(std::span<const double> v, const Matrix& dynamics,
                                 bool clamp = true);

// Requirement validation of a physiological model against sampled trajectories.

struct Term {
  std::size_t target = 0;
  std::size_t source = 0;  // source == target marks a clearance term
  Sign sign = Sign::Positive;
  /// Signed contribution to d(target)/dt, in natural units per minute.
  std::function<double(std::span<const double> pv, double minute)> rate;
  std::string label;
};

struct PhysioModelSpec {
  std::vector<std::string> nodes;
  std::vector<Term> terms;
  /// Per-node rescaling applied before the magnitude check; empty means 1.
  std::vector<double> scale;
};

struct PvTrajectory {
  double dt_minutes = 5.0;
  std::vector<std::vector<double>> states;  // states[step][node], natural units
};

struct RequirementCheck {
  bool passed = true;
  std::string detail;
  std::optional<std::size_t> trajectory;
  std::optional<std::size_t> step;
  std::optional<std::size_t> node;
  std::optional<std::size_t> target;
  std::optional<std::size_t> source;
  double max_ratio = 0.0;
};

struct ValidationReport {
  RequirementCheck positivity;
  RequirementCheck decomposition;
  RequirementCheck magnitude;

  bool all_passed() const noexcept {
    return positivity.passed && decomposition.passed && magnitude.passed;
  }
};

/// Checks PV positivity, sign-consistent pairwise decomposition and the
/// per-step magnitude bound |h_ij| dt / p_source <= 1 along the trajectories.
/// Throws EmptyTrajectory.
ValidationReport validate_spec(const PhysioModelSpec& spec,
                               std::span<const PvTrajectory> trajectories);

}  // namespace hadnet::gdpm
