#pragma once

// Batched, differentiable form of the HAD-Net forward pass. Each tensor row
// is one window of the batch; per-node quantities are laid out in contiguous
// column blocks (node k of a width-c tensor owns columns [k c, (k + 1) c)).

#include <cstddef>
#include <vector>

#include "hadnet/autodiff.hpp"
#include "hadnet/model.hpp"

namespace hadnet::model {

struct ParamTensors {
  ad::Tensor h0;  // 1 x K(d - 1)
  ad::Tensor query_weight, query_bias;
  ad::Tensor key_weight, key_bias;
  ad::Tensor value_weight, value_bias;
  ad::Tensor bn_gamma, bn_beta;

  /// Same order as parameter_slots().
  std::vector<ad::Tensor> all() const;
};

/// Mutable views of every learned matrix, in a fixed order shared with
/// ParamTensors::all(). h0 is exposed with its K x (d - 1) layout; the tensor
/// form is its row-major flattening.
std::vector<Matrix*> parameter_slots(ModelParams& params);

ParamTensors bind_params(ad::Tape& tape, const ModelParams& params, bool requires_grad);

// Model-specific fused primitives.

/// e: B x (K d); weight: (K d) x d; bias: K x d.
ad::Tensor k_linear(const ad::Tensor& e, const ad::Tensor& weight, const ad::Tensor& bias,
                    std::size_t k, std::size_t d);
/// F(b, i K + j) = sigmoid(a0 + <q_i, key_j> / d).
ad::Tensor attention_magnitudes(const ad::Tensor& q, const ad::Tensor& keys, std::size_t k,
                                std::size_t d, double a0);
/// M(b, :) = assemble_dynamics(A, F(b, :)) flattened row-major.
ad::Tensor assemble_dynamics(const ad::Tensor& f, const Matrix& adjacency, gdpm::DrainMode mode);
/// Y_i = sum_j M_ij X_j for blocks of `width` columns.
ad::Tensor mix(const ad::Tensor& m, const ad::Tensor& x, std::size_t k, std::size_t width);
/// [ (v - offset) / scale | H ] interleaved per node.
ad::Tensor embed(const ad::Tensor& v, const ad::Tensor& h, const Normalization& norm, std::size_t d);
/// First `keep` columns of every width-d block.
ad::Tensor take_blocks(const ad::Tensor& x, std::size_t k, std::size_t d, std::size_t keep);
/// |M(t, s)| / -M(s, s): change of the target per unit of source drained; NaN when nothing drains.
ad::Tensor edge_gain(const ad::Tensor& m, std::size_t k, std::size_t target, std::size_t source);

struct BatchInputs {
  std::vector<Matrix> steps;  // w matrices of B x kChannelCount
};

struct GraphOutputs {
  ad::Tensor forecast;                 // B x h
  ad::Tensor eps_pos;                  // B x 1 routed-residual sums (invalid without error nodes)
  ad::Tensor eps_neg;
  std::vector<ad::Tensor> dynamics;    // w + h tensors of B x K^2
  std::vector<ad::Tensor> states;      // v after each of the w + h steps, B x K
};

/// Training mode uses batch statistics and updates params.bn_stats; evaluation
/// mode reads them.
GraphOutputs forward_batch(ad::Tape& tape, const ParamTensors& bound, ModelParams& params,
                           const ModelConfig& config, const BatchInputs& inputs, bool training);

}  // namespace hadnet::model
