#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "poselift/tape.hpp"

namespace poselift::ad {

enum class Padding { valid, replicate };
enum class Activation { relu, sigmoid };
enum class BnMode { train, eval };

// Per-channel running statistics for batch_norm eval mode.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    explicit BatchNormState(int channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Dilated 1-D temporal convolution.
//   input  (B, C_in, T), kernel (C_out, C_in, K), bias (C_out) or nullptr.
//   valid:     T_out = T - (K-1)*dilation, requires T_out >= 1
//   replicate: T_out = T, edges padded by repeating the boundary frames
Var conv1d_dilated(Tape& tape, Var input, Parameter& kernel, Parameter* bias, int dilation,
                   Padding padding);

// Normalizes per channel over (batch, time). Train mode uses batch statistics
// and updates `state`; eval mode reads `state` and leaves it untouched.
Var batch_norm(Tape& tape, Var input, Parameter& gamma, Parameter& beta, BatchNormState& state,
               BnMode mode, double eps = 1e-5, double momentum = 0.1);

// Elementwise. Sigmoid output is kept strictly inside (0, 1).
Var activation(Tape& tape, Var input, Activation kind);

// Elementwise product of two same-shape tensors.
Var hadamard(Tape& tape, Var a, Var b);

// Elementwise sum (residual connections).
Var add(Tape& tape, Var a, Var b);

// y[b,c,t] = x[b,c,start+t] for t in [0, len).
Var slice_time(Tape& tape, Var input, int start, int len);

// Re-centers a (B, 3*N, T) pose tensor so the root joint sits at the origin:
// y[b,3j+d,t] = x[b,3j+d,t] - x[b,3*root+d,t].
Var center_root(Tape& tape, Var input, int root_joint);

// Pose regression loss: channels = 3*N_jt triplets, every (batch, time)
// position is one sample; returns mean over samples of
// (1/N_jt) * sum_i ||pred_i - target_i||^2 as a scalar node.
Var mse_loss(Tape& tape, Var pred, const Tensor3& target);

// ---------------------------------------------------------------------------
// Gradient verification against central finite differences.

struct GradCheckOptions {
    double tolerance = 1e-4;
    double step = 1e-5;
    // Parameters with more entries than this are checked on a seeded random
    // subsample of this many entries.
    int max_entries_per_param = 200;
    std::uint64_t seed = 0;
    // Relative error denominator is max(abs_floor, |analytic|, |numeric|).
    double abs_floor = 1e-2;
};

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<GradCheckEntry> offending;
    bool pass = true;
};

// loss_fn(with_grad): runs a forward pass and returns the scalar loss; when
// with_grad is true it must also run backward so parameter gradients are
// populated. grad_check zeroes the gradients itself before that call. The
// function must be deterministic in the parameter values (fixed inputs, fixed
// RNG state).
GradCheckReport grad_check(const std::vector<Parameter*>& params,
                           const std::function<double(bool with_grad)>& loss_fn,
                           const GradCheckOptions& opts = {});

}  // namespace poselift::ad
