// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "avvad/error.hpp"
#include "avvad/rng.hpp"
#include "avvad/tensor.hpp"

namespace avvad {
namespace nn {

enum class Mode { Train, Eval };

// Visits (name, value, grad) for every trainable tensor.
using ParamVisitor = std::function<void(const std::string&, Tensor&, Tensor&)>;
// Visits (name, value) for non-trainable buffers (normalization statistics).
using BufferVisitor = std::function<void(const std::string&, Tensor&)>;

namespace blas {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

// C (+)= A[M,K] * B[K,N]
inline void mm_nn(double* c, const double* a, const double* b, long m, long k, long n,
                  bool accumulate) {
    Map C(c, m, n);
    CMap A(a, m, k);
    CMap B(b, k, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

// C (+)= A[M,K] * B[N,K]^T
inline void mm_nt(double* c, const double* a, const double* b, long m, long k, long n,
                  bool accumulate) {
    Map C(c, m, n);
    CMap A(a, m, k);
    CMap B(b, n, k);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

// C (+)= A[K,M]^T * B[K,N]
inline void mm_tn(double* c, const double* a, const double* b, long m, long k, long n,
                  bool accumulate) {
    Map C(c, m, n);
    CMap A(a, k, m);
    CMap B(b, k, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

}  // namespace blas

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void glorot_init(Tensor& w, long fan_in, long fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w.data) v = rng.uniform(-a, a);
}

// 2-D convolution over [B, H, W, Cin] maps, channels fastest. Weights are
// stored [Cout, kh*kw*Cin] so forward is one im2col + GEMM.
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(std::string name, int cin, int cout, int kh, int kw, int sh, int sw, int ph, int pw)
        : name_(std::move(name)), cin_(cin), cout_(cout), kh_(kh), kw_(kw), sh_(sh), sw_(sw),
          ph_(ph), pw_(pw) {
        w_.resize({cout, static_cast<long>(kh) * kw * cin});
        b_.resize({cout});
        gw_.resize(w_.shape);
        gb_.resize(b_.shape);
    }

    void init(std::uint64_t seed) {
        Rng rng(mix_seed(seed, hash64(name_)));
        glorot_init(w_, static_cast<long>(kh_) * kw_ * cin_, cout_, rng);
        b_.fill(0.0);
    }

    static long out_extent(long in, int k, int s, int p) { return (in + 2L * p - k) / s + 1; }

    Tensor forward(const Tensor& x) {
        if (x.shape.size() != 4 || x.dim(3) != cin_)
            throw UsageError(name_ + ": expected [B,H,W," + std::to_string(cin_) + "] input");
        x_ = x;
        const long B = x.dim(0), H = x.dim(1), W = x.dim(2);
        const long Ho = out_extent(H, kh_, sh_, ph_);
        const long Wo = out_extent(W, kw_, sw_, pw_);
        if (Ho < 1 || Wo < 1) throw UsageError(name_ + ": input too small for kernel");

        im2col(x, cols_);
        Tensor y({B, Ho, Wo, cout_});
        blas::mm_nt(y.ptr(), cols_.ptr(), w_.ptr(), B * Ho * Wo, w_.dim(1), cout_, false);
        double* p = y.ptr();
        for (long r = 0; r < B * Ho * Wo; ++r)
            for (int c = 0; c < cout_; ++c) p[r * cout_ + c] += b_.data[c];
        return y;
    }

    // Relies on cols_ still holding this layer's most recent forward pass.
    Tensor backward(const Tensor& dy) {
        const long B = x_.dim(0), H = x_.dim(1), W = x_.dim(2);
        const long Ho = dy.dim(1), Wo = dy.dim(2);
        const long rows = B * Ho * Wo;
        const long k = w_.dim(1);

        blas::mm_tn(gw_.ptr(), dy.ptr(), cols_.ptr(), cout_, rows, k, true);
        const double* dp = dy.ptr();
        for (long r = 0; r < rows; ++r)
            for (int c = 0; c < cout_; ++c) gb_.data[c] += dp[r * cout_ + c];

        dcols_.resize({rows, k});
        blas::mm_nn(dcols_.ptr(), dy.ptr(), w_.ptr(), rows, cout_, k, false);

        Tensor dx({B, H, W, cin_});
        col2im(dcols_, dx, Ho, Wo);
        return dx;
    }

    void visit(const ParamVisitor& f) {
        f(name_ + ".w", w_, gw_);
        f(name_ + ".b", b_, gb_);
    }

    Tensor& weight() { return w_; }
    Tensor& bias() { return b_; }
    Tensor& weight_grad() { return gw_; }
    const std::string& name() const { return name_; }

  private:
    void im2col(const Tensor& x, Tensor& cols) const {
        const long B = x.dim(0), H = x.dim(1), W = x.dim(2);
        const long Ho = out_extent(H, kh_, sh_, ph_);
        const long Wo = out_extent(W, kw_, sw_, pw_);
        cols.resize({B * Ho * Wo, static_cast<long>(kh_) * kw_ * cin_});
        double* out = cols.ptr();
        const double* in = x.ptr();
        for (long b = 0; b < B; ++b)
            for (long ho = 0; ho < Ho; ++ho)
                for (long wo = 0; wo < Wo; ++wo) {
                    for (int i = 0; i < kh_; ++i) {
                        const long h = ho * sh_ - ph_ + i;
                        for (int j = 0; j < kw_; ++j) {
                            const long w = wo * sw_ - pw_ + j;
                            if (h >= 0 && h < H && w >= 0 && w < W) {
                                const double* src = in + ((b * H + h) * W + w) * cin_;
                                for (int c = 0; c < cin_; ++c) out[c] = src[c];
                            } else {
                                for (int c = 0; c < cin_; ++c) out[c] = 0.0;
                            }
                            out += cin_;
                        }
                    }
                }
    }

    void col2im(const Tensor& dcols, Tensor& dx, long Ho, long Wo) const {
        const long B = dx.dim(0), H = dx.dim(1), W = dx.dim(2);
        const double* in = dcols.ptr();
        double* out = dx.ptr();
        for (long b = 0; b < B; ++b)
            for (long ho = 0; ho < Ho; ++ho)
                for (long wo = 0; wo < Wo; ++wo) {
                    for (int i = 0; i < kh_; ++i) {
                        const long h = ho * sh_ - ph_ + i;
                        for (int j = 0; j < kw_; ++j) {
                            const long w = wo * sw_ - pw_ + j;
                            if (h >= 0 && h < H && w >= 0 && w < W) {
                                double* dst = out + ((b * H + h) * W + w) * cin_;
                                for (int c = 0; c < cin_; ++c) dst[c] += in[c];
                            }
                            in += cin_;
                        }
                    }
                }
    }

    std::string name_;
    int cin_ = 0, cout_ = 0, kh_ = 0, kw_ = 0, sh_ = 1, sw_ = 1, ph_ = 0, pw_ = 0;
    Tensor w_, b_, gw_, gb_;
    Tensor x_, cols_, dcols_;
};

// Per-channel batch normalization over all leading dimensions.
class BatchNorm {
  public:
    BatchNorm() = default;
    explicit BatchNorm(std::string name, int channels, double momentum = 0.1, double eps = 1e-5)
        : name_(std::move(name)), c_(channels), momentum_(momentum), eps_(eps) {
        gamma_.resize({channels});
        beta_.resize({channels});
        ggamma_.resize({channels});
        gbeta_.resize({channels});
        running_mean_.resize({channels});
        running_var_.resize({channels});
        gamma_.fill(1.0);
        running_var_.fill(1.0);
    }

    Tensor forward(const Tensor& x, Mode mode) {
        const long n = x.numel() / c_;
        Tensor y(x.shape);
        if (mode == Mode::Train) {
            mean_.assign(c_, 0.0);
            var_.assign(c_, 0.0);
            const double* p = x.ptr();
            for (long r = 0; r < n; ++r)
                for (int c = 0; c < c_; ++c) mean_[c] += p[r * c_ + c];
            for (int c = 0; c < c_; ++c) mean_[c] /= static_cast<double>(n);
            for (long r = 0; r < n; ++r)
                for (int c = 0; c < c_; ++c) {
                    const double d = p[r * c_ + c] - mean_[c];
                    var_[c] += d * d;
                }
            for (int c = 0; c < c_; ++c) var_[c] /= static_cast<double>(n);
            for (int c = 0; c < c_; ++c) {
                running_mean_.data[c] =
                    (1.0 - momentum_) * running_mean_.data[c] + momentum_ * mean_[c];
                running_var_.data[c] =
                    (1.0 - momentum_) * running_var_.data[c] + momentum_ * var_[c];
            }
            xhat_.resize(x.shape);
            double* xh = xhat_.ptr();
            double* yp = y.ptr();
            for (long r = 0; r < n; ++r)
                for (int c = 0; c < c_; ++c) {
                    const double inv = 1.0 / std::sqrt(var_[c] + eps_);
                    const double v = (p[r * c_ + c] - mean_[c]) * inv;
                    xh[r * c_ + c] = v;
                    yp[r * c_ + c] = gamma_.data[c] * v + beta_.data[c];
                }
            trained_batch_ = true;
        } else {
            const double* p = x.ptr();
            double* yp = y.ptr();
            for (long r = 0; r < n; ++r)
                for (int c = 0; c < c_; ++c) {
                    const double inv = 1.0 / std::sqrt(running_var_.data[c] + eps_);
                    yp[r * c_ + c] =
                        gamma_.data[c] * (p[r * c_ + c] - running_mean_.data[c]) * inv +
                        beta_.data[c];
                }
        }
        return y;
    }

    Tensor backward(const Tensor& dy) {
        if (!trained_batch_) throw NumericError(name_ + ": backward without train forward");
        const long n = dy.numel() / c_;
        const double inv_n = 1.0 / static_cast<double>(n);
        std::vector<double> sum_dy(c_, 0.0), sum_dy_xhat(c_, 0.0);
        const double* dp = dy.ptr();
        const double* xh = xhat_.ptr();
        for (long r = 0; r < n; ++r)
            for (int c = 0; c < c_; ++c) {
                sum_dy[c] += dp[r * c_ + c];
                sum_dy_xhat[c] += dp[r * c_ + c] * xh[r * c_ + c];
            }
        for (int c = 0; c < c_; ++c) {
            gbeta_.data[c] += sum_dy[c];
            ggamma_.data[c] += sum_dy_xhat[c];
        }
        Tensor dx(dy.shape);
        double* dxp = dx.ptr();
        for (long r = 0; r < n; ++r)
            for (int c = 0; c < c_; ++c) {
                const double inv_std = 1.0 / std::sqrt(var_[c] + eps_);
                dxp[r * c_ + c] = gamma_.data[c] * inv_std *
                                  (dp[r * c_ + c] - inv_n * sum_dy[c] -
                                   xh[r * c_ + c] * inv_n * sum_dy_xhat[c]);
            }
        return dx;
    }

    void visit(const ParamVisitor& f) {
        f(name_ + ".gamma", gamma_, ggamma_);
        f(name_ + ".beta", beta_, gbeta_);
    }

    void visit_buffers(const BufferVisitor& f) {
        f(name_ + ".running_mean", running_mean_);
        f(name_ + ".running_var", running_var_);
    }

  private:
    std::string name_;
    int c_ = 0;
    double momentum_ = 0.1, eps_ = 1e-5;
    Tensor gamma_, beta_, ggamma_, gbeta_;
    Tensor running_mean_, running_var_;
    std::vector<double> mean_, var_;
    Tensor xhat_;
    bool trained_batch_ = false;
};

// Inverted dropout; identity in eval mode.
class Dropout {
  public:
    Dropout() = default;
    explicit Dropout(double rate) : rate_(rate) {}

    Tensor forward(const Tensor& x, Mode mode, Rng* rng) {
        if (mode == Mode::Eval || rate_ <= 0.0) {
            active_ = false;
            return x;
        }
        if (rng == nullptr) throw UsageError("dropout: training forward needs an rng");
        active_ = true;
        mask_.resize(x.shape);
        Tensor y(x.shape);
        const double keep = 1.0 - rate_;
        for (long i = 0; i < x.numel(); ++i) {
            const double m = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
            mask_.data[i] = m;
            y.data[i] = x.data[i] * m;
        }
        return y;
    }

    Tensor backward(const Tensor& dy) const {
        if (!active_) return dy;
        Tensor dx(dy.shape);
        for (long i = 0; i < dy.numel(); ++i) dx.data[i] = dy.data[i] * mask_.data[i];
        return dx;
    }

    double rate() const { return rate_; }

  private:
    double rate_ = 0.0;
    bool active_ = false;
    Tensor mask_;
};

// Fully connected layer over the trailing dimension.
class Dense {
  public:
    Dense() = default;
    Dense(std::string name, int in, int out) : name_(std::move(name)), in_(in), out_(out) {
        w_.resize({out, in});
        b_.resize({out});
        gw_.resize(w_.shape);
        gb_.resize(b_.shape);
    }

    void init(std::uint64_t seed) {
        Rng rng(mix_seed(seed, hash64(name_)));
        glorot_init(w_, in_, out_, rng);
        b_.fill(0.0);
    }

    // x: [N, in] -> [N, out]
    Tensor forward(const Tensor& x) {
        if (x.shape.back() != in_) throw UsageError(name_ + ": input width mismatch");
        x_ = x;
        const long n = x.numel() / in_;
        std::vector<long> out_shape = x.shape;
        out_shape.back() = out_;
        Tensor y(out_shape);
        blas::mm_nt(y.ptr(), x.ptr(), w_.ptr(), n, in_, out_, false);
        double* p = y.ptr();
        for (long r = 0; r < n; ++r)
            for (int c = 0; c < out_; ++c) p[r * out_ + c] += b_.data[c];
        return y;
    }

    Tensor backward(const Tensor& dy) {
        const long n = dy.numel() / out_;
        blas::mm_tn(gw_.ptr(), dy.ptr(), x_.ptr(), out_, n, in_, true);
        const double* dp = dy.ptr();
        for (long r = 0; r < n; ++r)
            for (int c = 0; c < out_; ++c) gb_.data[c] += dp[r * out_ + c];
        Tensor dx(x_.shape);
        blas::mm_nn(dx.ptr(), dy.ptr(), w_.ptr(), n, out_, in_, false);
        return dx;
    }

    void visit(const ParamVisitor& f) {
        f(name_ + ".w", w_, gw_);
        f(name_ + ".b", b_, gb_);
    }

    Tensor& weight() { return w_; }
    Tensor& bias() { return b_; }
    int in_dim() const { return in_; }
    int out_dim() const { return out_; }

  private:
    std::string name_;
    int in_ = 0, out_ = 0;
    Tensor w_, b_, gw_, gb_;
    Tensor x_;
};

// Single-layer GRU, batch-first [B, T, I] -> [B, T, H]. Gate layout follows
// the common (reset, update, candidate) convention with the reset gate
// applied to the recurrent candidate term.
class Gru {
  public:
    Gru() = default;
    Gru(std::string name, int input, int hidden)
        : name_(std::move(name)), in_(input), h_(hidden) {
        w_ih_.resize({3L * hidden, input});
        w_hh_.resize({3L * hidden, hidden});
        b_ih_.resize({3L * hidden});
        b_hh_.resize({3L * hidden});
        gw_ih_.resize(w_ih_.shape);
        gw_hh_.resize(w_hh_.shape);
        gb_ih_.resize(b_ih_.shape);
        gb_hh_.resize(b_hh_.shape);
    }

    void init(std::uint64_t seed) {
        Rng rng(mix_seed(seed, hash64(name_)));
        glorot_init(w_ih_, in_, h_, rng);
        glorot_init(w_hh_, h_, h_, rng);
        b_ih_.fill(0.0);
        b_hh_.fill(0.0);
    }

    Tensor forward(const Tensor& x) {
        if (x.shape.size() != 3 || x.dim(2) != in_)
            throw UsageError(name_ + ": expected [B,T," + std::to_string(in_) + "]");
        x_ = x;
        const long B = x.dim(0), T = x.dim(1);
        const long rows = B * T;

        // Input projections for all gates in one GEMM.
        gates_in_.resize({rows, 3L * h_});
        blas::mm_nt(gates_in_.ptr(), x.ptr(), w_ih_.ptr(), rows, in_, 3L * h_, false);

        r_.resize({B, T, h_});
        z_.resize({B, T, h_});
        nc_.resize({B, T, h_});
        hlin_.resize({B, T, h_});
        Tensor h({B, T, h_});

        std::vector<double> hprev(h_), rec(3 * h_);
        for (long b = 0; b < B; ++b) {
            std::fill(hprev.begin(), hprev.end(), 0.0);
            for (long t = 0; t < T; ++t) {
                const long row = b * T + t;
                blas::mm_nt(rec.data(), hprev.data(), w_hh_.ptr(), 1, h_, 3L * h_, false);
                const double* gi = gates_in_.ptr() + row * 3 * h_;
                double* rp = r_.ptr() + row * h_;
                double* zp = z_.ptr() + row * h_;
                double* np = nc_.ptr() + row * h_;
                double* hl = hlin_.ptr() + row * h_;
                double* hp = h.ptr() + row * h_;
                for (int i = 0; i < h_; ++i) {
                    rp[i] = sigmoid(gi[i] + b_ih_.data[i] + rec[i] + b_hh_.data[i]);
                    zp[i] = sigmoid(gi[h_ + i] + b_ih_.data[h_ + i] + rec[h_ + i] +
                                    b_hh_.data[h_ + i]);
                    hl[i] = rec[2 * h_ + i] + b_hh_.data[2 * h_ + i];
                    np[i] = std::tanh(gi[2 * h_ + i] + b_ih_.data[2 * h_ + i] + rp[i] * hl[i]);
                    hp[i] = (1.0 - zp[i]) * np[i] + zp[i] * hprev[i];
                }
                std::copy(hp, hp + h_, hprev.begin());
            }
        }
        h_out_ = h;
        return h;
    }

    Tensor backward(const Tensor& dh_out) {
        const long B = x_.dim(0), T = x_.dim(1);
        Tensor dgates_in({B * T, 3L * h_});  // grads w.r.t. the pre-activation input projections
        std::vector<double> dh(h_), dhprev(h_), dgates(3 * h_), hprev(h_);

        for (long b = 0; b < B; ++b) {
            std::fill(dhprev.begin(), dhprev.end(), 0.0);
            for (long t = T - 1; t >= 0; --t) {
                const long row = b * T + t;
                const double* rp = r_.ptr() + row * h_;
                const double* zp = z_.ptr() + row * h_;
                const double* np = nc_.ptr() + row * h_;
                const double* hl = hlin_.ptr() + row * h_;
                if (t > 0)
                    std::copy(h_out_.ptr() + (row - 1) * h_, h_out_.ptr() + row * h_,
                              hprev.begin());
                else
                    std::fill(hprev.begin(), hprev.end(), 0.0);

                const double* dout = dh_out.ptr() + row * h_;
                for (int i = 0; i < h_; ++i) dh[i] = dout[i] + dhprev[i];

                double* dgi = dgates.data();
                std::vector<double> dhlin(h_);
                for (int i = 0; i < h_; ++i) {
                    const double dz = dh[i] * (hprev[i] - np[i]);
                    const double dn = dh[i] * (1.0 - zp[i]);
                    const double dn_pre = dn * (1.0 - np[i] * np[i]);
                    const double dr = dn_pre * hl[i];
                    dhlin[i] = dn_pre * rp[i];
                    dgi[i] = dr * rp[i] * (1.0 - rp[i]);
                    dgi[h_ + i] = dz * zp[i] * (1.0 - zp[i]);
                    dgi[2 * h_ + i] = dn_pre;
                    dhprev[i] = dh[i] * zp[i];
                }

                // Recurrent pre-activations: (r, z) rows take dgi, the
                // candidate row takes dhlin.
                std::vector<double> drec(3 * h_);
                for (int i = 0; i < h_; ++i) {
                    drec[i] = dgi[i];
                    drec[h_ + i] = dgi[h_ + i];
                    drec[2 * h_ + i] = dhlin[i];
                }

                double* dgin = dgates_in.ptr() + row * 3 * h_;
                for (int i = 0; i < 3 * h_; ++i) {
                    dgin[i] = dgi[i];
                    gb_ih_.data[i] += dgi[i];
                    gb_hh_.data[i] += drec[i];
                }
                // Candidate input projection gradient equals dgi, but the
                // recurrent weight path uses drec; adjust the n-block since
                // dgi[2h..] already equals dn_pre (the input share).
                blas::mm_tn(gw_hh_.ptr(), drec.data(), hprev.data(), 3L * h_, 1, h_, true);
                blas::mm_nn(dhprev.data(), drec.data(), w_hh_.ptr(), 1, 3L * h_, h_, true);
            }
        }

        blas::mm_tn(gw_ih_.ptr(), dgates_in.ptr(), x_.ptr(), 3L * h_, B * T, in_, true);
        Tensor dx(x_.shape);
        blas::mm_nn(dx.ptr(), dgates_in.ptr(), w_ih_.ptr(), B * T, 3L * h_, in_, false);
        return dx;
    }

    void visit(const ParamVisitor& f) {
        f(name_ + ".w_ih", w_ih_, gw_ih_);
        f(name_ + ".w_hh", w_hh_, gw_hh_);
        f(name_ + ".b_ih", b_ih_, gb_ih_);
        f(name_ + ".b_hh", b_hh_, gb_hh_);
    }

    int hidden() const { return h_; }

  private:
    std::string name_;
    int in_ = 0, h_ = 0;
    Tensor w_ih_, w_hh_, b_ih_, b_hh_;
    Tensor gw_ih_, gw_hh_, gb_ih_, gb_hh_;
    Tensor x_, gates_in_, r_, z_, nc_, hlin_, h_out_;
};

// Tanh activation (smooth everywhere, which keeps finite-difference gradient
// probes honest).
class Tanh {
  public:
    Tensor forward(const Tensor& x) {
        y_.resize(x.shape);
        for (long i = 0; i < x.numel(); ++i) y_.data[i] = std::tanh(x.data[i]);
        return y_;
    }
    Tensor backward(const Tensor& dy) const {
        Tensor dx(dy.shape);
        for (long i = 0; i < dy.numel(); ++i)
            dx.data[i] = dy.data[i] * (1.0 - y_.data[i] * y_.data[i]);
        return dx;
    }

  private:
    Tensor y_;
};

}  // namespace nn
}  // namespace avvad
