#include "poselift/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "poselift/rng.hpp"

namespace poselift::ad {

namespace {

// Copies one (b, c) input row into a buffer padded with `pad_left`/`pad_right`
// replicated edge values. Valid mode passes zero pad amounts, so the conv
// inner loops stay branch-free and contiguous for both modes.
void fill_padded_row(const Tensor3& in, int b, int c, int pad_left, int pad_right,
                     std::vector<double>& buf) {
    const double* src = in.row(b, c);
    const int t_in = in.time;
    buf.resize(static_cast<std::size_t>(t_in + pad_left + pad_right));
    for (int i = 0; i < pad_left; ++i) buf[i] = src[0];
    std::copy(src, src + t_in, buf.begin() + pad_left);
    for (int i = 0; i < pad_right; ++i) buf[pad_left + t_in + i] = src[t_in - 1];
}

}  // namespace

Var conv1d_dilated(Tape& tape, Var input, Parameter& kernel, Parameter* bias, int dilation,
                   Padding padding) {
    const Tensor3& in = tape.value(input);
    if (kernel.shape.size() != 3)
        raise(ErrorKind::dimension, "conv1d: kernel must be (out_ch, in_ch, k)");
    const int out_ch = kernel.shape[0];
    const int in_ch = kernel.shape[1];
    const int k = kernel.shape[2];
    if (in.channels != in_ch)
        raise(ErrorKind::dimension, "conv1d: input has " + std::to_string(in.channels) +
                                        " channels, kernel expects " + std::to_string(in_ch));
    if (bias && (bias->shape.size() != 1 || bias->shape[0] != out_ch))
        raise(ErrorKind::dimension, "conv1d: bias shape must be (out_ch)");
    if (dilation < 1) raise(ErrorKind::config, "conv1d: dilation must be >= 1");

    const int span = (k - 1) * dilation;
    int t_out, pad_left, pad_right;
    if (padding == Padding::valid) {
        t_out = in.time - span;
        if (t_out < 1)
            raise(ErrorKind::window, "conv1d: time " + std::to_string(in.time) +
                                         " too short for kernel span " + std::to_string(span + 1));
        pad_left = pad_right = 0;
    } else {
        t_out = in.time;
        pad_left = span / 2;
        pad_right = span - pad_left;
    }

    Tensor3 out(in.batch, out_ch, t_out);
    std::vector<double> padded;
    for (int b = 0; b < in.batch; ++b) {
        for (int ic = 0; ic < in_ch; ++ic) {
            fill_padded_row(in, b, ic, pad_left, pad_right, padded);
            for (int oc = 0; oc < out_ch; ++oc) {
                double* dst = out.row(b, oc);
                const double* w =
                    kernel.value.data() + (static_cast<std::size_t>(oc) * in_ch + ic) * k;
                for (int kk = 0; kk < k; ++kk) {
                    const double wv = w[kk];
                    const double* src = padded.data() + kk * dilation;
                    for (int t = 0; t < t_out; ++t) dst[t] += wv * src[t];
                }
            }
        }
        if (bias) {
            for (int oc = 0; oc < out_ch; ++oc) {
                double* dst = out.row(b, oc);
                const double bv = bias->value[oc];
                for (int t = 0; t < t_out; ++t) dst[t] += bv;
            }
        }
    }

    Parameter* kp = &kernel;
    return tape.record(
        std::move(out),
        [input, kp, bias, dilation, k, in_ch, out_ch, t_out, pad_left, pad_right](Tape& tp,
                                                                                  Var self) {
            const Tensor3& gout = tp.grad(self);
            const Tensor3& in_v = tp.value(input);
            Tensor3& gin = tp.grad(input);
            const int t_in = in_v.time;
            const int padded_len = t_in + pad_left + pad_right;
            std::vector<double> padded(padded_len);
            std::vector<double> gpadded(padded_len);
            for (int b = 0; b < in_v.batch; ++b) {
                for (int ic = 0; ic < in_ch; ++ic) {
                    fill_padded_row(in_v, b, ic, pad_left, pad_right, padded);
                    std::fill(gpadded.begin(), gpadded.end(), 0.0);
                    for (int oc = 0; oc < out_ch; ++oc) {
                        const double* go = gout.row(b, oc);
                        const std::size_t wbase = (static_cast<std::size_t>(oc) * in_ch + ic) * k;
                        for (int kk = 0; kk < k; ++kk) {
                            const double wv = kp->value[wbase + kk];
                            double* gp = gpadded.data() + kk * dilation;
                            const double* src = padded.data() + kk * dilation;
                            double wsum = 0.0;
                            for (int t = 0; t < t_out; ++t) {
                                gp[t] += wv * go[t];
                                wsum += src[t] * go[t];
                            }
                            if (kp->requires_grad) kp->grad[wbase + kk] += wsum;
                        }
                    }
                    // Fold padded-region gradients back onto the edge frames
                    // (adjoint of the replicate padding).
                    double* gi = gin.row(b, ic);
                    for (int i = 0; i < pad_left; ++i) gi[0] += gpadded[i];
                    for (int t = 0; t < t_in; ++t) gi[t] += gpadded[pad_left + t];
                    for (int i = 0; i < pad_right; ++i) gi[t_in - 1] += gpadded[pad_left + t_in + i];
                }
                if (bias && bias->requires_grad) {
                    for (int oc = 0; oc < out_ch; ++oc) {
                        const double* go = gout.row(b, oc);
                        double s = 0.0;
                        for (int t = 0; t < t_out; ++t) s += go[t];
                        bias->grad[oc] += s;
                    }
                }
            }
        });
}

Var batch_norm(Tape& tape, Var input, Parameter& gamma, Parameter& beta, BatchNormState& state,
               BnMode mode, double eps, double momentum) {
    const Tensor3& in = tape.value(input);
    const int ch = in.channels;
    if (static_cast<int>(gamma.value.size()) != ch || static_cast<int>(beta.value.size()) != ch)
        raise(ErrorKind::dimension, "batch_norm: gamma/beta length must equal channel count");
    if (static_cast<int>(state.running_mean.size()) != ch)
        raise(ErrorKind::dimension, "batch_norm: running stats length must equal channel count");
    if (eps <= 0.0) raise(ErrorKind::config, "batch_norm: eps must be > 0");
    const std::size_t n = static_cast<std::size_t>(in.batch) * in.time;
    if (n == 0) raise(ErrorKind::empty_input, "batch_norm: empty batch");

    std::vector<double> mean(ch, 0.0), invstd(ch, 0.0);
    if (mode == BnMode::train) {
        for (int c = 0; c < ch; ++c) {
            double sum = 0.0;
            for (int b = 0; b < in.batch; ++b) {
                const double* src = in.row(b, c);
                for (int t = 0; t < in.time; ++t) sum += src[t];
            }
            const double mu = sum / static_cast<double>(n);
            double sq = 0.0;
            for (int b = 0; b < in.batch; ++b) {
                const double* src = in.row(b, c);
                for (int t = 0; t < in.time; ++t) {
                    const double d = src[t] - mu;
                    sq += d * d;
                }
            }
            const double var = sq / static_cast<double>(n);
            mean[c] = mu;
            invstd[c] = 1.0 / std::sqrt(var + eps);
            const double var_unbiased =
                n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1) : var;
            state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mu;
            state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * var_unbiased;
        }
    } else {
        for (int c = 0; c < ch; ++c) {
            mean[c] = state.running_mean[c];
            invstd[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
        }
    }

    Tensor3 out(in.batch, ch, in.time);
    for (int b = 0; b < in.batch; ++b) {
        for (int c = 0; c < ch; ++c) {
            const double* src = in.row(b, c);
            double* dst = out.row(b, c);
            const double g = gamma.value[c], bt = beta.value[c], mu = mean[c], is = invstd[c];
            for (int t = 0; t < in.time; ++t) dst[t] = g * (src[t] - mu) * is + bt;
        }
    }

    Parameter* gp = &gamma;
    Parameter* bp = &beta;
    return tape.record(std::move(out), [input, gp, bp, mode, mean = std::move(mean),
                                        invstd = std::move(invstd)](Tape& tp, Var self) {
        const Tensor3& gout = tp.grad(self);
        const Tensor3& in_v = tp.value(input);
        Tensor3& gin = tp.grad(input);
        const int ch = in_v.channels;
        const double n = static_cast<double>(in_v.batch) * in_v.time;
        for (int c = 0; c < ch; ++c) {
            const double mu = mean[c], is = invstd[c], g = gp->value[c];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int b = 0; b < in_v.batch; ++b) {
                const double* x = in_v.row(b, c);
                const double* dy = gout.row(b, c);
                for (int t = 0; t < in_v.time; ++t) {
                    sum_dy += dy[t];
                    sum_dy_xhat += dy[t] * (x[t] - mu) * is;
                }
            }
            if (gp->requires_grad) gp->grad[c] += sum_dy_xhat;
            if (bp->requires_grad) bp->grad[c] += sum_dy;
            if (mode == BnMode::train) {
                const double m_dy = sum_dy / n;
                const double m_dy_xhat = sum_dy_xhat / n;
                for (int b = 0; b < in_v.batch; ++b) {
                    const double* x = in_v.row(b, c);
                    const double* dy = gout.row(b, c);
                    double* gi = gin.row(b, c);
                    for (int t = 0; t < in_v.time; ++t) {
                        const double xhat = (x[t] - mu) * is;
                        gi[t] += g * is * (dy[t] - m_dy - xhat * m_dy_xhat);
                    }
                }
            } else {
                // Eval mode: running stats are constants.
                for (int b = 0; b < in_v.batch; ++b) {
                    const double* dy = gout.row(b, c);
                    double* gi = gin.row(b, c);
                    for (int t = 0; t < in_v.time; ++t) gi[t] += g * is * dy[t];
                }
            }
        }
    });
}

namespace {

double stable_sigmoid(double x) {
    double s;
    if (x >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        s = e / (1.0 + e);
    }
    // Keep the output strictly inside (0, 1); the true value is never exactly
    // 0 or 1, only the rounded double can be.
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
    if (s >= 1.0) s = hi;
    if (s <= 0.0) s = std::numeric_limits<double>::denorm_min();
    return s;
}

}  // namespace

Var activation(Tape& tape, Var input, Activation kind) {
    const Tensor3& in = tape.value(input);
    Tensor3 out(in.batch, in.channels, in.time);
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < in.size(); ++i)
            out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
    } else {
        for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = stable_sigmoid(in.data[i]);
    }
    return tape.record(std::move(out), [input, kind](Tape& tp, Var self) {
        const Tensor3& gout = tp.grad(self);
        const Tensor3& out_v = tp.value(self);
        const Tensor3& in_v = tp.value(input);
        Tensor3& gin = tp.grad(input);
        if (kind == Activation::relu) {
            for (std::size_t i = 0; i < in_v.size(); ++i)
                if (in_v.data[i] > 0.0) gin.data[i] += gout.data[i];
        } else {
            for (std::size_t i = 0; i < in_v.size(); ++i) {
                const double s = out_v.data[i];
                gin.data[i] += gout.data[i] * s * (1.0 - s);
            }
        }
    });
}

Var hadamard(Tape& tape, Var a, Var b) {
    const Tensor3& av = tape.value(a);
    const Tensor3& bv = tape.value(b);
    require_same_shape(av, bv, "hadamard");
    Tensor3 out(av.batch, av.channels, av.time);
    for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
    return tape.record(std::move(out), [a, b](Tape& tp, Var self) {
        const Tensor3& gout = tp.grad(self);
        const Tensor3& av = tp.value(a);
        const Tensor3& bv = tp.value(b);
        Tensor3& ga = tp.grad(a);
        Tensor3& gb = tp.grad(b);
        for (std::size_t i = 0; i < av.size(); ++i) {
            ga.data[i] += gout.data[i] * bv.data[i];
            gb.data[i] += gout.data[i] * av.data[i];
        }
    });
}

Var add(Tape& tape, Var a, Var b) {
    const Tensor3& av = tape.value(a);
    const Tensor3& bv = tape.value(b);
    require_same_shape(av, bv, "add");
    Tensor3 out(av.batch, av.channels, av.time);
    for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    return tape.record(std::move(out), [a, b](Tape& tp, Var self) {
        const Tensor3& gout = tp.grad(self);
        Tensor3& ga = tp.grad(a);
        Tensor3& gb = tp.grad(b);
        for (std::size_t i = 0; i < gout.size(); ++i) {
            ga.data[i] += gout.data[i];
            gb.data[i] += gout.data[i];
        }
    });
}

Var slice_time(Tape& tape, Var input, int start, int len) {
    const Tensor3& in = tape.value(input);
    if (start < 0 || len < 1 || start + len > in.time)
        raise(ErrorKind::dimension, "slice_time: range [" + std::to_string(start) + "," +
                                        std::to_string(start + len) + ") outside time " +
                                        std::to_string(in.time));
    Tensor3 out(in.batch, in.channels, len);
    for (int b = 0; b < in.batch; ++b)
        for (int c = 0; c < in.channels; ++c)
            std::copy(in.row(b, c) + start, in.row(b, c) + start + len, out.row(b, c));
    return tape.record(std::move(out), [input, start, len](Tape& tp, Var self) {
        const Tensor3& gout = tp.grad(self);
        Tensor3& gin = tp.grad(input);
        for (int b = 0; b < gout.batch; ++b)
            for (int c = 0; c < gout.channels; ++c) {
                const double* go = gout.row(b, c);
                double* gi = gin.row(b, c) + start;
                for (int t = 0; t < len; ++t) gi[t] += go[t];
            }
    });
}

Var center_root(Tape& tape, Var input, int root_joint) {
    const Tensor3& in = tape.value(input);
    if (in.channels % 3 != 0)
        raise(ErrorKind::dimension, "center_root: channels must be a multiple of 3");
    const int n_joints = in.channels / 3;
    if (root_joint < 0 || root_joint >= n_joints)
        raise(ErrorKind::dimension, "center_root: root joint out of range");
    Tensor3 out(in.batch, in.channels, in.time);
    for (int b = 0; b < in.batch; ++b)
        for (int j = 0; j < n_joints; ++j)
            for (int d = 0; d < 3; ++d) {
                const double* src = in.row(b, 3 * j + d);
                const double* root = in.row(b, 3 * root_joint + d);
                double* dst = out.row(b, 3 * j + d);
                for (int t = 0; t < in.time; ++t) dst[t] = src[t] - root[t];
            }
    return tape.record(std::move(out), [input, root_joint](Tape& tp, Var self) {
        const Tensor3& gout = tp.grad(self);
        Tensor3& gin = tp.grad(input);
        const int n_joints = gout.channels / 3;
        for (int b = 0; b < gout.batch; ++b)
            for (int d = 0; d < 3; ++d) {
                double* groot = gin.row(b, 3 * root_joint + d);
                for (int j = 0; j < n_joints; ++j) {
                    const double* go = gout.row(b, 3 * j + d);
                    double* gi = gin.row(b, 3 * j + d);
                    for (int t = 0; t < gout.time; ++t) {
                        gi[t] += go[t];
                        groot[t] -= go[t];
                    }
                }
            }
    });
}

Var mse_loss(Tape& tape, Var pred, const Tensor3& target) {
    const Tensor3& p = tape.value(pred);
    require_same_shape(p, target, "mse_loss");
    if (p.channels % 3 != 0)
        raise(ErrorKind::dimension, "mse_loss: channels must be 3 * n_joints");
    const double n_joints = p.channels / 3.0;
    const double n_samples = static_cast<double>(p.batch) * p.time;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p.data[i] - target.data[i];
        acc += d * d;
    }
    Tensor3 out(1, 1, 1);
    out.data[0] = acc / (n_joints * n_samples);
    const double scale = 2.0 / (n_joints * n_samples);
    // Target is captured by value: the loss is the last node, the copy is tiny
    // relative to the activations already on the tape.
    return tape.record(std::move(out), [pred, target, scale](Tape& tp, Var self) {
        const double g = tp.grad(self).data[0];
        const Tensor3& p = tp.value(pred);
        Tensor3& gp = tp.grad(pred);
        for (std::size_t i = 0; i < p.size(); ++i)
            gp.data[i] += g * scale * (p.data[i] - target.data[i]);
    });
}

GradCheckReport grad_check(const std::vector<Parameter*>& params,
                           const std::function<double(bool with_grad)>& loss_fn,
                           const GradCheckOptions& opts) {
    for (Parameter* p : params) p->zero_grad();
    loss_fn(true);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);

    GradCheckReport report;
    Rng rng(opts.seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        if (!p.requires_grad) continue;
        std::vector<std::size_t> idx;
        if (static_cast<int>(p.size()) <= opts.max_entries_per_param) {
            idx.resize(p.size());
            for (std::size_t i = 0; i < p.size(); ++i) idx[i] = i;
        } else {
            // Seeded subsample without replacement.
            std::vector<std::size_t> all(p.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            for (int i = 0; i < opts.max_entries_per_param; ++i) {
                const std::size_t j = i + static_cast<std::size_t>(rng.below(all.size() - i));
                std::swap(all[i], all[j]);
            }
            idx.assign(all.begin(), all.begin() + opts.max_entries_per_param);
        }
        bool flagged = false;
        GradCheckEntry worst;
        for (std::size_t i : idx) {
            const double saved = p.value[i];
            p.value[i] = saved + opts.step;
            const double lp = loss_fn(false);
            p.value[i] = saved - opts.step;
            const double lm = loss_fn(false);
            p.value[i] = saved;
            const double numeric = (lp - lm) / (2.0 * opts.step);
            const double an = analytic[pi][i];
            const double denom = std::max({opts.abs_floor, std::abs(numeric), std::abs(an)});
            const double rel = std::abs(numeric - an) / denom;
            if (rel > report.max_rel_err) report.max_rel_err = rel;
            if (rel > opts.tolerance && (!flagged || rel > worst.rel_err)) {
                flagged = true;
                worst = GradCheckEntry{p.name, i, an, numeric, rel};
            }
        }
        if (flagged) {
            report.pass = false;
            report.offending.push_back(worst);
        }
    }
    return report;
}

}  // namespace poselift::ad
