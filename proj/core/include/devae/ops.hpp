#pragma once

#include <span>
#include <vector>

#include "devae/tape.hpp"

namespace devae::nn {

// Differentiable primitives. Batched tensors carry the batch on axis 0.

/// y[b,o] = sum_i x[b,i] W[i,o] + bias[o]. x: [B,in], W: [in,out], bias: [out].
Var affine(Tape& tape, Var x, Var weights, Var bias);
/// y = x W without bias.
Var matmul(Tape& tape, Var x, Var weights);

struct ConvGeometry {
  std::size_t stride = 2;
  std::size_t pad = 1;
};

/// Zero-padded cross-correlation. x: [B,C,H,W], kernel: [OC,C,KH,KW], bias: [OC].
Var conv2d(Tape& tape, Var x, Var kernel, Var bias, ConvGeometry geom = {});
/// Transposed convolution, the adjoint of conv2d with the same kernel tensor.
/// x: [B,IC,H,W], kernel: [IC,OC,KH,KW], bias: [OC].
Var deconv2d(Tape& tape, Var x, Var kernel, Var bias, ConvGeometry geom = {});

Var relu(Tape& tape, Var x);
Var exp(Tape& tape, Var x);
Var scale(Tape& tape, Var x, double factor);
Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
/// x[b,j] + row[j] and x[b,j] * row[j] for x: [B,d], row: [d].
Var add_row(Tape& tape, Var x, Var row);
Var mul_row(Tape& tape, Var x, Var row);

Var reshape(Tape& tape, Var x, Shape shape);
/// Columns [begin, begin+count) of a 2-D tensor.
Var slice_cols(Tape& tape, Var x, std::size_t begin, std::size_t count);
Var concat_cols(Tape& tape, Var a, Var b);

/// sum_k weights[k] * terms[k] over scalar nodes.
Var weighted_sum(Tape& tape, std::span<const Var> terms, std::span<const double> weights);

/// Sum over non-batch elements of max(l,0) - l t + log1p(exp(-|l|)), averaged over
/// the batch. Throws DataError when a target lies outside [0,1].
Var bce_with_logits(Tape& tape, Var logits, Var targets);
/// Sum over non-batch elements of (r - t)^2, averaged over the batch.
Var squared_error(Tape& tape, Var recon, Var target);
/// KL(N(mean, exp(logvar)) || N(0, I)) summed over dimensions, averaged over batch.
Var gaussian_kl(Tape& tape, Var mean, Var logvar);

// Value-level forms used outside the tape.
double bce_with_logits_value(std::span<const double> logits, std::span<const double> targets, std::size_t batch);
double squared_error_value(std::span<const double> recon, std::span<const double> target, std::size_t batch);
double sigmoid(double x);

}  // namespace devae::nn
