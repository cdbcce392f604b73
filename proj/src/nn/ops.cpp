#include "def/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace def::nn {

namespace {

constexpr std::size_t kBlock = 128;

inline int wrap(int i, int n)
{
    i %= n;
    return i < 0 ? i + n : i;
}

// Source column (within a channel row) for every kernel tap of a block of
// output columns.
void tap_offsets(const Tensor& x, int k, std::size_t q0, std::size_t nb, std::vector<std::size_t>& offs)
{
    const int r = k / 2;
    const std::size_t hw = x.pixels();
    offs.resize(static_cast<std::size_t>(k) * k * nb);
    for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t q = q0 + b;
        const std::size_t n = q / hw;
        const int pix = static_cast<int>(q % hw);
        const int i = pix / x.width;
        const int j = pix % x.width;
        for (int di = 0; di < k; ++di) {
            const int ii = wrap(i + di - r, x.height);
            for (int dj = 0; dj < k; ++dj) {
                const int jj = wrap(j + dj - r, x.width);
                offs[(di * k + dj) * nb + b] = n * hw + static_cast<std::size_t>(ii) * x.width + jj;
            }
        }
    }
}

void gather_columns(const Tensor& x, int k, std::size_t nb, const std::vector<std::size_t>& offs,
                    std::vector<double>& cols)
{
    const int kk = k * k;
    cols.resize(static_cast<std::size_t>(x.channels) * kk * nb);
    for (int c = 0; c < x.channels; ++c) {
        const double* xr = x.row(c);
        for (int d = 0; d < kk; ++d) {
            double* cr = cols.data() + (static_cast<std::size_t>(c) * kk + d) * nb;
            const std::size_t* o = offs.data() + d * nb;
            for (std::size_t b = 0; b < nb; ++b) cr[b] = xr[o[b]];
        }
    }
}

void require(bool ok, const std::string& msg)
{
    if (!ok) throw std::invalid_argument(msg);
}

using v4d = double __attribute__((vector_size(32)));

inline v4d load4(const double* p)
{
    v4d v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store4(double* p, v4d v)
{
    std::memcpy(p, &v, sizeof v);
}

inline v4d splat(double x)
{
    return v4d{x, x, x, x};
}

// C (M x nb, row stride ldc) = row_init[m] + A (M x K, row stride lda) * B (K x nb, row stride ldb).
// Every output element accumulates its K terms in ascending order, so a
// column's value never depends on how the columns were blocked.
void gemm(const double* A, std::size_t lda, std::size_t M, std::size_t K, const double* B, std::size_t ldb,
          std::size_t nb, double* C, std::size_t ldc, const double* row_init)
{
    auto init = [&](std::size_t m) { return row_init ? row_init[m] : 0.0; };
    std::size_t m = 0;
    for (; m + 4 <= M; m += 4) {
        const double* a = A + m * lda;
        std::size_t b = 0;
        for (; b + 16 <= nb; b += 16) {
            v4d c[4][4];
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) c[i][j] = splat(init(m + i));
            for (std::size_t r = 0; r < K; ++r) {
                const double* br = B + r * ldb + b;
                const v4d b0 = load4(br), b1 = load4(br + 4), b2 = load4(br + 8), b3 = load4(br + 12);
                for (int i = 0; i < 4; ++i) {
                    const double x = a[i * lda + r];
                    c[i][0] += x * b0;
                    c[i][1] += x * b1;
                    c[i][2] += x * b2;
                    c[i][3] += x * b3;
                }
            }
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) store4(C + (m + i) * ldc + b + 4 * j, c[i][j]);
        }
        for (; b + 4 <= nb; b += 4) {
            v4d c[4];
            for (int i = 0; i < 4; ++i) c[i] = splat(init(m + i));
            for (std::size_t r = 0; r < K; ++r) {
                const v4d b0 = load4(B + r * ldb + b);
                for (int i = 0; i < 4; ++i) c[i] += a[i * lda + r] * b0;
            }
            for (int i = 0; i < 4; ++i) store4(C + (m + i) * ldc + b, c[i]);
        }
        for (; b < nb; ++b)
            for (int i = 0; i < 4; ++i) {
                double acc = init(m + i);
                for (std::size_t r = 0; r < K; ++r) acc += a[i * lda + r] * B[r * ldb + b];
                C[(m + i) * ldc + b] = acc;
            }
    }
    for (; m < M; ++m) {
        const double* a = A + m * lda;
        std::size_t b = 0;
        for (; b + 4 <= nb; b += 4) {
            v4d c = splat(init(m));
            for (std::size_t r = 0; r < K; ++r) c += a[r] * load4(B + r * ldb + b);
            store4(C + m * ldc + b, c);
        }
        for (; b < nb; ++b) {
            double acc = init(m);
            for (std::size_t r = 0; r < K; ++r) acc += a[r] * B[r * ldb + b];
            C[m * ldc + b] = acc;
        }
    }
}

// C (M x N) += A (M x nb) * B (N x nb)^T, reducing over the shared columns.
void gemm_nt_acc(const double* A, std::size_t lda, std::size_t M, const double* B, std::size_t ldb,
                 std::size_t N, std::size_t nb, double* C, std::size_t ldc)
{
    const std::size_t nb4 = nb - nb % 4;
    auto hsum = [](v4d v) { return (v[0] + v[1]) + (v[2] + v[3]); };
    for (std::size_t m = 0; m < M; ++m) {
        const double* a = A + m * lda;
        std::size_t n = 0;
        for (; n + 4 <= N; n += 4) {
            v4d s[4] = {splat(0.0), splat(0.0), splat(0.0), splat(0.0)};
            for (std::size_t b = 0; b < nb4; b += 4) {
                const v4d av = load4(a + b);
                for (int i = 0; i < 4; ++i) s[i] += av * load4(B + (n + i) * ldb + b);
            }
            for (int i = 0; i < 4; ++i) {
                double t = hsum(s[i]);
                for (std::size_t b = nb4; b < nb; ++b) t += a[b] * B[(n + i) * ldb + b];
                C[m * ldc + n + i] += t;
            }
        }
        for (; n < N; ++n) {
            v4d s = splat(0.0);
            for (std::size_t b = 0; b < nb4; b += 4) s += load4(a + b) * load4(B + n * ldb + b);
            double t = hsum(s);
            for (std::size_t b = nb4; b < nb; ++b) t += a[b] * B[n * ldb + b];
            C[m * ldc + n] += t;
        }
    }
}

}  // namespace

ConvLayer ConvLayer::create(ParamStore& store, const std::string& name, int in, int out, int kernel,
                            bool with_bias)
{
    require(in > 0 && out > 0, "ConvLayer: channel counts must be positive");
    require(kernel > 0 && kernel % 2 == 1, "ConvLayer: kernel must be odd");
    ConvLayer layer;
    layer.in = in;
    layer.out = out;
    layer.kernel = kernel;
    layer.weight = store.add(name + ".weight", static_cast<std::size_t>(out) * in * kernel * kernel);
    if (with_bias) layer.bias = store.add(name + ".bias", static_cast<std::size_t>(out));
    return layer;
}

void ConvLayer::init(ParamStore& store, std::mt19937_64& rng, double gain) const
{
    const double fan_in = static_cast<double>(in) * kernel * kernel;
    const double a = gain * std::sqrt(3.0 / fan_in);
    std::uniform_real_distribution<double> dist(-a, a);
    for (double& w : store.value(weight)) w = dist(rng);
    if (bias)
        for (double& b : store.value(*bias)) b = 0.0;
}

void ConvLayer::zero(ParamStore& store) const
{
    for (double& w : store.value(weight)) w = 0.0;
    if (bias)
        for (double& b : store.value(*bias)) b = 0.0;
}

Var conv2d(Graph& g, const ParamStore& params, const ConvLayer& layer, const Var& xv)
{
    const Tensor& x = xv->value;
    require(x.channels == layer.in, "conv2d: expected " + std::to_string(layer.in) +
                                        " input channels, got " + std::to_string(x.channels));
    const int k = layer.kernel;
    const std::size_t K = static_cast<std::size_t>(layer.in) * k * k;
    const std::size_t ncols = x.columns();
    const double* W = params.value(layer.weight).data();
    const double* bias = layer.bias ? params.value(*layer.bias).data() : nullptr;

    Tensor y(layer.out, x.batch, x.height, x.width);
    std::vector<std::size_t> offs;
    std::vector<double> cols;
    for (std::size_t q0 = 0; q0 < ncols; q0 += kBlock) {
        const std::size_t nb = std::min(kBlock, ncols - q0);
        tap_offsets(x, k, q0, nb, offs);
        gather_columns(x, k, nb, offs, cols);
        gemm(W, K, layer.out, K, cols.data(), nb, nb, y.data.data() + q0, ncols, bias);
    }

    const ParamStore* store = &params;
    ParamStore* sink = g.sink();
    return g.make(std::move(y), {xv}, true, [layer, store, sink](Node& self) {
        const Tensor& x = self.parents[0]->value;
        const Tensor& dy = self.grad;
        const int k = layer.kernel;
        const std::size_t K = static_cast<std::size_t>(layer.in) * k * k;
        const std::size_t ncols = x.columns();
        const double* W = store->value(layer.weight).data();
        double* dW = sink->grad(layer.weight).data();
        double* db = layer.bias ? sink->grad(*layer.bias).data() : nullptr;
        Node& xn = *self.parents[0];
        Tensor* dx = xn.needs_grad ? &xn.grad_buffer() : nullptr;

        std::vector<double> wt;
        if (dx) {
            // W^T, K x out.
            wt.resize(K * layer.out);
            for (int o = 0; o < layer.out; ++o)
                for (std::size_t r = 0; r < K; ++r) wt[r * layer.out + o] = W[o * K + r];
        }
        if (db)
            for (int o = 0; o < layer.out; ++o) {
                const double* d = dy.row(o);
                double s = 0.0;
                for (std::size_t b = 0; b < ncols; ++b) s += d[b];
                db[o] += s;
            }

        std::vector<std::size_t> offs;
        std::vector<double> cols;
        std::vector<double> dcols;
        const int kk = k * k;
        for (std::size_t q0 = 0; q0 < ncols; q0 += kBlock) {
            const std::size_t nb = std::min(kBlock, ncols - q0);
            tap_offsets(x, k, q0, nb, offs);
            gather_columns(x, k, nb, offs, cols);
            gemm_nt_acc(dy.data.data() + q0, ncols, layer.out, cols.data(), nb, K, nb, dW, K);
            if (!dx) continue;
            dcols.resize(K * nb);
            gemm(wt.data(), layer.out, K, layer.out, dy.data.data() + q0, ncols, nb, dcols.data(), nb, nullptr);
            for (int c = 0; c < layer.in; ++c) {
                double* dxr = dx->row(c);
                for (int t = 0; t < kk; ++t) {
                    const double* dc = dcols.data() + (static_cast<std::size_t>(c) * kk + t) * nb;
                    const std::size_t* o = offs.data() + t * nb;
                    for (std::size_t b = 0; b < nb; ++b) dxr[o[b]] += dc[b];
                }
            }
        }
    });
}

Var silu(Graph& g, const Var& xv)
{
    const Tensor& x = xv->value;
    Tensor y(x.channels, x.batch, x.height, x.width);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x.data[i]));
        y.data[i] = x.data[i] * s;
    }
    return g.make(std::move(y), {xv}, false, [](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.needs_grad) return;
        Tensor& dx = xn.grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double x = xn.value.data[i];
            const double s = 1.0 / (1.0 + std::exp(-x));
            dx.data[i] += self.grad.data[i] * s * (1.0 + x * (1.0 - s));
        }
    });
}

Var tanh_act(Graph& g, const Var& xv)
{
    const Tensor& x = xv->value;
    Tensor y(x.channels, x.batch, x.height, x.width);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = std::tanh(x.data[i]);
    return g.make(std::move(y), {xv}, false, [](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.needs_grad) return;
        Tensor& dx = xn.grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double t = self.value.data[i];
            dx.data[i] += self.grad.data[i] * (1.0 - t * t);
        }
    });
}

Var add(Graph& g, const Var& av, const Var& bv)
{
    require(av->value.same_shape(bv->value), "add: shape mismatch " + av->value.shape_str() +
                                                 " vs " + bv->value.shape_str());
    Tensor y = av->value;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bv->value.data[i];
    return g.make(std::move(y), {av, bv}, false, [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->needs_grad) continue;
            Tensor& d = p->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += self.grad.data[i];
        }
    });
}

Var add_broadcast(Graph& g, const Var& xv, const Var& ev)
{
    const Tensor& x = xv->value;
    const Tensor& e = ev->value;
    require(e.channels == x.channels && e.batch == x.batch && e.height == 1 && e.width == 1,
            "add_broadcast: expected (" + std::to_string(x.channels) + "," +
                std::to_string(x.batch) + ",1,1), got " + e.shape_str());
    Tensor y = x;
    const std::size_t hw = x.pixels();
    for (int c = 0; c < x.channels; ++c)
        for (int n = 0; n < x.batch; ++n) {
            const double v = e.data[static_cast<std::size_t>(c) * x.batch + n];
            double* p = y.plane(c, n);
            for (std::size_t i = 0; i < hw; ++i) p[i] += v;
        }
    return g.make(std::move(y), {xv, ev}, false, [](Node& self) {
        Node& xn = *self.parents[0];
        Node& en = *self.parents[1];
        const Tensor& dy = self.grad;
        if (xn.needs_grad) {
            Tensor& dx = xn.grad_buffer();
            for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dy.data[i];
        }
        if (en.needs_grad) {
            Tensor& de = en.grad_buffer();
            const std::size_t hw = dy.pixels();
            for (int c = 0; c < dy.channels; ++c)
                for (int n = 0; n < dy.batch; ++n) {
                    const double* p = dy.plane(c, n);
                    double s = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) s += p[i];
                    de.data[static_cast<std::size_t>(c) * dy.batch + n] += s;
                }
        }
    });
}

Var scale_shift(Graph& g, const Var& xv, const Var& sv, const Var& bv)
{
    const Tensor& x = xv->value;
    for (const Var* e : {&sv, &bv})
        require((*e)->value.channels == x.channels && (*e)->value.batch == x.batch && (*e)->value.height == 1 &&
                    (*e)->value.width == 1,
                "scale_shift: expected (" + std::to_string(x.channels) + "," + std::to_string(x.batch) +
                    ",1,1), got " + (*e)->value.shape_str());
    Tensor y = x;
    const std::size_t hw = x.pixels();
    for (int c = 0; c < x.channels; ++c)
        for (int n = 0; n < x.batch; ++n) {
            const std::size_t e = static_cast<std::size_t>(c) * x.batch + n;
            const double a = 1.0 + sv->value.data[e];
            const double b = bv->value.data[e];
            double* p = y.plane(c, n);
            for (std::size_t i = 0; i < hw; ++i) p[i] = a * p[i] + b;
        }
    return g.make(std::move(y), {xv, sv, bv}, false, [](Node& self) {
        Node& xn = *self.parents[0];
        Node& sn = *self.parents[1];
        Node& bn = *self.parents[2];
        const Tensor& dy = self.grad;
        const Tensor& x = xn.value;
        const std::size_t hw = dy.pixels();
        for (int c = 0; c < dy.channels; ++c)
            for (int n = 0; n < dy.batch; ++n) {
                const std::size_t e = static_cast<std::size_t>(c) * dy.batch + n;
                const double* d = dy.plane(c, n);
                const double* xp = x.plane(c, n);
                if (xn.needs_grad) {
                    const double a = 1.0 + sn.value.data[e];
                    double* dx = xn.grad_buffer().plane(c, n);
                    for (std::size_t i = 0; i < hw; ++i) dx[i] += a * d[i];
                }
                if (sn.needs_grad) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) s += d[i] * xp[i];
                    sn.grad_buffer().data[e] += s;
                }
                if (bn.needs_grad) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) s += d[i];
                    bn.grad_buffer().data[e] += s;
                }
            }
    });
}

Var avg_pool2(Graph& g, const Var& xv)
{
    const Tensor& x = xv->value;
    require(x.height % 2 == 0 && x.width % 2 == 0, "avg_pool2: grid " + x.shape_str() + " is not even");
    const int H = x.height / 2;
    const int W = x.width / 2;
    Tensor y(x.channels, x.batch, H, W);
    for (int c = 0; c < x.channels; ++c)
        for (int n = 0; n < x.batch; ++n) {
            const double* src = x.plane(c, n);
            double* dst = y.plane(c, n);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const int a = 2 * i * x.width + 2 * j;
                    dst[i * W + j] =
                        0.25 * (src[a] + src[a + 1] + src[a + x.width] + src[a + x.width + 1]);
                }
        }
    return g.make(std::move(y), {xv}, false, [](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.needs_grad) return;
        Tensor& dx = xn.grad_buffer();
        const Tensor& dy = self.grad;
        for (int c = 0; c < dy.channels; ++c)
            for (int n = 0; n < dy.batch; ++n) {
                const double* src = dy.plane(c, n);
                double* dst = dx.plane(c, n);
                for (int i = 0; i < dy.height; ++i)
                    for (int j = 0; j < dy.width; ++j) {
                        const double v = 0.25 * src[i * dy.width + j];
                        const int a = 2 * i * dx.width + 2 * j;
                        dst[a] += v;
                        dst[a + 1] += v;
                        dst[a + dx.width] += v;
                        dst[a + dx.width + 1] += v;
                    }
            }
    });
}

Var upsample2(Graph& g, const Var& xv)
{
    const Tensor& x = xv->value;
    const int H = x.height * 2;
    const int W = x.width * 2;
    Tensor y(x.channels, x.batch, H, W);
    for (int c = 0; c < x.channels; ++c)
        for (int n = 0; n < x.batch; ++n) {
            const double* src = x.plane(c, n);
            double* dst = y.plane(c, n);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) dst[i * W + j] = src[(i / 2) * x.width + j / 2];
        }
    return g.make(std::move(y), {xv}, false, [](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.needs_grad) return;
        Tensor& dx = xn.grad_buffer();
        const Tensor& dy = self.grad;
        for (int c = 0; c < dy.channels; ++c)
            for (int n = 0; n < dy.batch; ++n) {
                const double* src = dy.plane(c, n);
                double* dst = dx.plane(c, n);
                for (int i = 0; i < dy.height; ++i)
                    for (int j = 0; j < dy.width; ++j)
                        dst[(i / 2) * dx.width + j / 2] += src[i * dy.width + j];
            }
    });
}

Var concat(Graph& g, const Var& av, const Var& bv)
{
    const Tensor& a = av->value;
    const Tensor& b = bv->value;
    require(a.batch == b.batch && a.height == b.height && a.width == b.width,
            "concat: incompatible " + a.shape_str() + " and " + b.shape_str());
    Tensor y(a.channels + b.channels, a.batch, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.size());
    return g.make(std::move(y), {av, bv}, false, [](Node& self) {
        Node& an = *self.parents[0];
        Node& bn = *self.parents[1];
        const std::size_t split = an.value.size();
        if (an.needs_grad) {
            Tensor& d = an.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += self.grad.data[i];
        }
        if (bn.needs_grad) {
            Tensor& d = bn.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += self.grad.data[split + i];
        }
    });
}

Var attention(Graph& g, const Var& qv, const Var& kv, const Var& vv)
{
    const Tensor& q = qv->value;
    const Tensor& k = kv->value;
    const Tensor& v = vv->value;
    require(q.same_shape(k) && q.same_shape(v), "attention: q, k, v shapes differ");
    const int C = q.channels;
    const int N = q.batch;
    const std::size_t P = q.pixels();
    const std::size_t stride = q.columns();
    const double scale = 1.0 / std::sqrt(static_cast<double>(C));

    // Attention weights per sample, kept for the backward pass.
    auto weights = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * P * P);
    Tensor y(C, N, q.height, q.width);
    std::vector<double> row(P);
    for (int n = 0; n < N; ++n) {
        const std::size_t base = n * P;
        double* A = weights->data() + static_cast<std::size_t>(n) * P * P;
        for (std::size_t i = 0; i < P; ++i) {
            double mx = -INFINITY;
            for (std::size_t j = 0; j < P; ++j) {
                double s = 0.0;
                for (int c = 0; c < C; ++c) s += q.data[c * stride + base + i] * k.data[c * stride + base + j];
                row[j] = s * scale;
                mx = std::max(mx, row[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < P; ++j) {
                row[j] = std::exp(row[j] - mx);
                z += row[j];
            }
            for (std::size_t j = 0; j < P; ++j) A[i * P + j] = row[j] / z;
        }
        for (int c = 0; c < C; ++c)
            for (std::size_t i = 0; i < P; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < P; ++j) s += A[i * P + j] * v.data[c * stride + base + j];
                y.data[c * stride + base + i] = s;
            }
    }

    return g.make(std::move(y), {qv, kv, vv}, false, [weights, scale](Node& self) {
        const Tensor& q = self.parents[0]->value;
        const Tensor& k = self.parents[1]->value;
        const Tensor& v = self.parents[2]->value;
        const Tensor& dy = self.grad;
        const int C = q.channels;
        const std::size_t P = q.pixels();
        const std::size_t stride = q.columns();
        Node& qn = *self.parents[0];
        Node& kn = *self.parents[1];
        Node& vn = *self.parents[2];
        Tensor* dq = qn.needs_grad ? &qn.grad_buffer() : nullptr;
        Tensor* dk = kn.needs_grad ? &kn.grad_buffer() : nullptr;
        Tensor* dv = vn.needs_grad ? &vn.grad_buffer() : nullptr;

        std::vector<double> dA(P * P);
        for (int n = 0; n < q.batch; ++n) {
            const std::size_t base = n * P;
            const double* A = weights->data() + static_cast<std::size_t>(n) * P * P;
            if (dv)
                for (int c = 0; c < C; ++c)
                    for (std::size_t j = 0; j < P; ++j) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < P; ++i) s += dy.data[c * stride + base + i] * A[i * P + j];
                        dv->data[c * stride + base + j] += s;
                    }
            if (!dq && !dk) continue;
            for (std::size_t i = 0; i < P; ++i)
                for (std::size_t j = 0; j < P; ++j) {
                    double s = 0.0;
                    for (int c = 0; c < C; ++c) s += dy.data[c * stride + base + i] * v.data[c * stride + base + j];
                    dA[i * P + j] = s;
                }
            // Softmax Jacobian, then the 1/sqrt(C) score scaling.
            for (std::size_t i = 0; i < P; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < P; ++j) dot += A[i * P + j] * dA[i * P + j];
                for (std::size_t j = 0; j < P; ++j) dA[i * P + j] = A[i * P + j] * (dA[i * P + j] - dot) * scale;
            }
            for (int c = 0; c < C; ++c) {
                if (dq)
                    for (std::size_t i = 0; i < P; ++i) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < P; ++j) s += dA[i * P + j] * k.data[c * stride + base + j];
                        dq->data[c * stride + base + i] += s;
                    }
                if (dk)
                    for (std::size_t j = 0; j < P; ++j) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < P; ++i) s += dA[i * P + j] * q.data[c * stride + base + i];
                        dk->data[c * stride + base + j] += s;
                    }
            }
        }
    });
}

Var mse(Graph& g, const Var& pv, const Tensor& target)
{
    const Tensor& p = pv->value;
    require(p.same_shape(target), "mse: prediction " + p.shape_str() + " vs target " + target.shape_str());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p.data[i] - target.data[i];
        s += d * d;
    }
    const double count = static_cast<double>(p.size());
    Tensor y(1, 1, 1, 1, s / count);
    auto tgt = std::make_shared<Tensor>(target);
    return g.make(std::move(y), {pv}, false, [tgt, count](Node& self) {
        Node& pn = *self.parents[0];
        if (!pn.needs_grad) return;
        Tensor& dp = pn.grad_buffer();
        const double up = self.grad.data[0];
        for (std::size_t i = 0; i < dp.size(); ++i)
            dp.data[i] += up * 2.0 * (pn.value.data[i] - tgt->data[i]) / count;
    });
}

}  // namespace def::nn
