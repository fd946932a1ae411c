#include "latentfair/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace latentfair::ops {

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

template <typename Fwd, typename Dfdx>
Var unary(const Var& a, Fwd fwd, Dfdx dfdx) {
    Tensor out(a.shape());
    const auto in = a.value().data();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    return Var::make(std::move(out), {a}, [dfdx](Node& self) {
        Node& x = input(self, 0);
        auto& g = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(x.value[i], self.value[i]);
    });
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& x = input(self, k);
            if (!x.requires_grad) continue;
            auto& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        const double sign[2] = {1.0, -1.0};
        for (std::size_t k = 0; k < 2; ++k) {
            Node& x = input(self, k);
            if (!x.requires_grad) continue;
            auto& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        Node& x = input(self, 0);
        Node& y = input(self, 1);
        if (x.requires_grad) {
            auto& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
        }
        if (y.requires_grad) {
            auto& g = y.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= s;
    return Var::make(std::move(out), {a}, [s](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

Var affine(const Var& a, double s, double shift) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = s * v + shift;
    return Var::make(std::move(out), {a}, [s](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

Var sum(const Var& a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    return Var::make(Tensor::scalar(total), {a}, [](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        const double up = self.grad[0];
        for (auto& v : g.data()) v += up;
    });
}

Var mean(const Var& a) {
    if (a.value().empty()) throw ShapeError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
    double total = 0.0;
    std::vector<Var> inputs;
    std::vector<double> weights;
    for (const auto& [w, v] : terms) {
        if (v.value().size() != 1) throw ShapeError("weighted_sum expects scalar terms");
        if (w == 0.0) continue;
        total += w * v.value()[0];
        inputs.push_back(v);
        weights.push_back(w);
    }
    return Var::make(Tensor::scalar(total), inputs, [weights](Node& self) {
        for (std::size_t k = 0; k < weights.size(); ++k) {
            Node& x = input(self, k);
            if (x.requires_grad) x.grad_buffer()[0] += weights[k] * self.grad[0];
        }
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return Var::make(std::move(out), {a}, [](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var flatten(const Var& a) {
    if (a.value().rank() < 1) throw ShapeError("flatten of a scalar");
    const std::size_t n = a.shape()[0];
    return reshape(a, {n, n == 0 ? 0 : a.value().size() / n});
}

Var relu(const Var& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var silu(const Var& a) {
    return unary(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    if (x.value().rank() != 2 || weight.value().rank() != 2 || x.shape()[1] != weight.shape()[1]) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    const std::size_t n = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
    if (bias.defined()) require_shape(bias.value(), {out_dim}, "linear bias");
    Tensor out({n, out_dim});
    MapRow o(out.raw(), n, out_dim);
    o.noalias() = CMapRow(x.value().raw(), n, in) * CMapRow(weight.value().raw(), out_dim, in).transpose();
    if (bias.defined())
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) o(i, j) += bias.value()[j];
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return Var::make(std::move(out), inputs, [n, in, out_dim](Node& self) {
        Node& xn = input(self, 0);
        Node& wn = input(self, 1);
        CMapRow go(self.grad.raw(), n, out_dim);
        if (xn.requires_grad)
            MapRow(xn.grad_buffer().raw(), n, in).noalias() += go * CMapRow(wn.value.raw(), out_dim, in);
        if (wn.requires_grad)
            MapRow(wn.grad_buffer().raw(), out_dim, in).noalias() += go.transpose() * CMapRow(xn.value.raw(), n, in);
        if (self.inputs.size() > 2 && input(self, 2).requires_grad) {
            double* gb = input(self, 2).grad_buffer().raw();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < out_dim; ++j) gb[j] += go(i, j);
        }
    });
}

namespace {

struct ConvGeometry {
    std::size_t n, c, h, w, cout, k, ho, wo, stride, pad, groups, cin_g, cout_g;

    // Output index range [lo, hi) for which input coordinate o*stride - pad + kk is inside [0, extent).
    std::pair<std::size_t, std::size_t> valid(std::size_t kk, std::size_t extent, std::size_t out_extent) const {
        const long s = static_cast<long>(stride);
        const long off = static_cast<long>(kk) - static_cast<long>(pad);
        long lo = off >= 0 ? 0 : (-off + s - 1) / s;
        long hi = (static_cast<long>(extent) - 1 - off) >= 0 ? (static_cast<long>(extent) - 1 - off) / s + 1 : 0;
        hi = std::min<long>(hi, static_cast<long>(out_extent));
        lo = std::min(lo, hi);
        return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
    }
};

// Unfolds x into cols[(ci*k + ky)*k + kx][b*P + oy*wo + ox], zero where the window hits padding.
void im2col(const ConvGeometry& geo, const double* x, double* cols) {
    const std::size_t plane_out = geo.ho * geo.wo, np = geo.n * plane_out;
    std::fill(cols, cols + geo.c * geo.k * geo.k * np, 0.0);
    for (std::size_t ci = 0; ci < geo.c; ++ci)
        for (std::size_t ky = 0; ky < geo.k; ++ky) {
            const auto [oy0, oy1] = geo.valid(ky, geo.h, geo.ho);
            for (std::size_t kx = 0; kx < geo.k; ++kx) {
                const auto [ox0, ox1] = geo.valid(kx, geo.w, geo.wo);
                double* row = cols + ((ci * geo.k + ky) * geo.k + kx) * np;
                for (std::size_t b = 0; b < geo.n; ++b) {
                    const double* ip = x + (b * geo.c + ci) * geo.h * geo.w;
                    double* rb = row + b * plane_out;
                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                        const double* irow = ip + (oy * geo.stride + ky - geo.pad) * geo.w;
                        for (std::size_t ox = ox0; ox < ox1; ++ox)
                            rb[oy * geo.wo + ox] = irow[ox * geo.stride + kx - geo.pad];
                    }
                }
            }
        }
}

void col2im_add(const ConvGeometry& geo, const double* cols, double* gx) {
    const std::size_t plane_out = geo.ho * geo.wo, np = geo.n * plane_out;
    for (std::size_t ci = 0; ci < geo.c; ++ci)
        for (std::size_t ky = 0; ky < geo.k; ++ky) {
            const auto [oy0, oy1] = geo.valid(ky, geo.h, geo.ho);
            for (std::size_t kx = 0; kx < geo.k; ++kx) {
                const auto [ox0, ox1] = geo.valid(kx, geo.w, geo.wo);
                const double* row = cols + ((ci * geo.k + ky) * geo.k + kx) * np;
                for (std::size_t b = 0; b < geo.n; ++b) {
                    double* gp = gx + (b * geo.c + ci) * geo.h * geo.w;
                    const double* rb = row + b * plane_out;
                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                        double* grow = gp + (oy * geo.stride + ky - geo.pad) * geo.w;
                        for (std::size_t ox = ox0; ox < ox1; ++ox)
                            grow[ox * geo.stride + kx - geo.pad] += rb[oy * geo.wo + ox];
                    }
                }
            }
        }
}

// Dense (groups == 1) convolution as a single GEMM over the unfolded batch.
Var conv2d_dense(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& geo) {
    const std::size_t plane_out = geo.ho * geo.wo, np = geo.n * plane_out, kk = geo.c * geo.k * geo.k;
    std::vector<double> cols(kk * np);
    im2col(geo, x.value().raw(), cols.data());
    RowMat prod = CMapRow(weight.value().raw(), geo.cout, kk) * CMapRow(cols.data(), kk, np);
    Tensor out({geo.n, geo.cout, geo.ho, geo.wo});
    for (std::size_t b = 0; b < geo.n; ++b)
        for (std::size_t co = 0; co < geo.cout; ++co) {
            const double b0 = bias.defined() ? bias.value()[co] : 0.0;
            const double* src = prod.data() + co * np + b * plane_out;
            double* dst = out.raw() + (b * geo.cout + co) * plane_out;
            for (std::size_t p = 0; p < plane_out; ++p) dst[p] = src[p] + b0;
        }

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return Var::make(std::move(out), inputs, [geo](Node& self) {
        Node& xn = input(self, 0);
        Node& wn = input(self, 1);
        const std::size_t plane_out = geo.ho * geo.wo, np = geo.n * plane_out, kk = geo.c * geo.k * geo.k;
        // gradient rearranged to [cout, N*P]
        RowMat gout(geo.cout, np);
        for (std::size_t b = 0; b < geo.n; ++b)
            for (std::size_t co = 0; co < geo.cout; ++co)
                std::copy_n(self.grad.raw() + (b * geo.cout + co) * plane_out, plane_out,
                            gout.data() + co * np + b * plane_out);
        if (wn.requires_grad) {
            std::vector<double> cols(kk * np);
            im2col(geo, xn.value.raw(), cols.data());
            MapRow(wn.grad_buffer().raw(), geo.cout, kk).noalias() += gout * CMapRow(cols.data(), kk, np).transpose();
        }
        if (xn.requires_grad) {
            RowMat gcols = CMapRow(wn.value.raw(), geo.cout, kk).transpose() * gout;
            col2im_add(geo, gcols.data(), xn.grad_buffer().raw());
        }
        if (self.inputs.size() > 2 && input(self, 2).requires_grad) {
            double* gb = input(self, 2).grad_buffer().raw();
            for (std::size_t co = 0; co < geo.cout; ++co) gb[co] += gout.row(co).sum();
        }
    });
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt) {
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    if (xs.size() != 4 || ws.size() != 4) throw ShapeError("conv2d expects 4-d input and weight");
    if (opt.groups == 0 || opt.stride == 0) throw std::invalid_argument("conv2d: stride and groups must be positive");
    ConvGeometry geo{};
    geo.n = xs[0];
    geo.c = xs[1];
    geo.h = xs[2];
    geo.w = xs[3];
    geo.cout = ws[0];
    geo.k = ws[2];
    geo.stride = opt.stride;
    geo.pad = opt.padding;
    geo.groups = opt.groups;
    if (ws[3] != geo.k) throw ShapeError("conv2d: kernel must be square");
    if (geo.c % geo.groups != 0 || geo.cout % geo.groups != 0 || ws[1] != geo.c / geo.groups) {
        throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws) +
                         " for groups=" + std::to_string(geo.groups));
    }
    if (geo.h + 2 * geo.pad < geo.k || geo.w + 2 * geo.pad < geo.k) throw ShapeError("conv2d: kernel larger than input");
    if (bias.defined()) require_shape(bias.value(), {geo.cout}, "conv2d bias");
    geo.cin_g = geo.c / geo.groups;
    geo.cout_g = geo.cout / geo.groups;
    geo.ho = (geo.h + 2 * geo.pad - geo.k) / geo.stride + 1;
    geo.wo = (geo.w + 2 * geo.pad - geo.k) / geo.stride + 1;
    if (geo.groups == 1) return conv2d_dense(x, weight, bias, geo);

    Tensor out({geo.n, geo.cout, geo.ho, geo.wo});
    const double* xv = x.value().raw();
    const double* wv = weight.value().raw();
    double* ov = out.raw();
    const std::size_t plane_in = geo.h * geo.w, plane_out = geo.ho * geo.wo;
    for (std::size_t b = 0; b < geo.n; ++b) {
        for (std::size_t co = 0; co < geo.cout; ++co) {
            double* op = ov + (b * geo.cout + co) * plane_out;
            const double b0 = bias.defined() ? bias.value()[co] : 0.0;
            std::fill(op, op + plane_out, b0);
            const std::size_t g = co / geo.cout_g;
            for (std::size_t cg = 0; cg < geo.cin_g; ++cg) {
                const std::size_t ci = g * geo.cin_g + cg;
                const double* ip = xv + (b * geo.c + ci) * plane_in;
                const double* wk = wv + (co * geo.cin_g + cg) * geo.k * geo.k;
                for (std::size_t ky = 0; ky < geo.k; ++ky) {
                    const auto [oy0, oy1] = geo.valid(ky, geo.h, geo.ho);
                    for (std::size_t kx = 0; kx < geo.k; ++kx) {
                        const auto [ox0, ox1] = geo.valid(kx, geo.w, geo.wo);
                        const double wk_v = wk[ky * geo.k + kx];
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const double* irow = ip + (oy * geo.stride + ky - geo.pad) * geo.w;
                            double* orow = op + oy * geo.wo;
                            for (std::size_t ox = ox0; ox < ox1; ++ox) {
                                orow[ox] += wk_v * irow[ox * geo.stride + kx - geo.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return Var::make(std::move(out), inputs, [geo](Node& self) {
        Node& xn = input(self, 0);
        Node& wn = input(self, 1);
        const double* go = self.grad.raw();
        const double* xv = xn.value.raw();
        const double* wv = wn.value.raw();
        double* gx = xn.requires_grad ? xn.grad_buffer().raw() : nullptr;
        double* gw = wn.requires_grad ? wn.grad_buffer().raw() : nullptr;
        const std::size_t plane_in = geo.h * geo.w, plane_out = geo.ho * geo.wo;
        for (std::size_t b = 0; b < geo.n; ++b) {
            for (std::size_t co = 0; co < geo.cout; ++co) {
                const double* gp = go + (b * geo.cout + co) * plane_out;
                const std::size_t g = co / geo.cout_g;
                for (std::size_t cg = 0; cg < geo.cin_g; ++cg) {
                    const std::size_t ci = g * geo.cin_g + cg;
                    const std::size_t in_off = (b * geo.c + ci) * plane_in;
                    const std::size_t w_off = (co * geo.cin_g + cg) * geo.k * geo.k;
                    for (std::size_t ky = 0; ky < geo.k; ++ky) {
                        const auto [oy0, oy1] = geo.valid(ky, geo.h, geo.ho);
                        for (std::size_t kx = 0; kx < geo.k; ++kx) {
                            const auto [ox0, ox1] = geo.valid(kx, geo.w, geo.wo);
                            const double wk_v = wv[w_off + ky * geo.k + kx];
                            double acc = 0.0;
                            for (std::size_t oy = oy0; oy < oy1; ++oy) {
                                const std::size_t row = in_off + (oy * geo.stride + ky - geo.pad) * geo.w;
                                const double* grow = gp + oy * geo.wo;
                                for (std::size_t ox = ox0; ox < ox1; ++ox) {
                                    const std::size_t idx = row + ox * geo.stride + kx - geo.pad;
                                    if (gx) gx[idx] += wk_v * grow[ox];
                                    acc += grow[ox] * xv[idx];
                                }
                            }
                            if (gw) gw[w_off + ky * geo.k + kx] += acc;
                        }
                    }
                }
            }
        }
        if (self.inputs.size() > 2 && input(self, 2).requires_grad) {
            double* gb = input(self, 2).grad_buffer().raw();
            for (std::size_t b = 0; b < geo.n; ++b)
                for (std::size_t co = 0; co < geo.cout; ++co) {
                    const double* gp = go + (b * geo.cout + co) * plane_out;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane_out; ++i) acc += gp[i];
                    gb[co] += acc;
                }
        }
    });
}

Var upsample2x(const Var& x) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("upsample2x expects NCHW input");
    const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
    Tensor out({s[0], s[1], 2 * h, 2 * w});
    const double* xv = x.value().raw();
    double* ov = out.raw();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                ov[(p * 2 * h + y) * 2 * w + xx] = xv[(p * h + y / 2) * w + xx / 2];
    return Var::make(std::move(out), {x}, [planes, h, w](Node& self) {
        double* g = input(self, 0).grad_buffer().raw();
        const double* go = self.grad.raw();
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t xx = 0; xx < 2 * w; ++xx)
                    g[(p * h + y / 2) * w + xx / 2] += go[(p * 2 * h + y) * 2 * w + xx];
    });
}

Var global_avg_pool(const Var& x) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("global_avg_pool expects NCHW input");
    const std::size_t planes = s[0] * s[1], area = s[2] * s[3];
    Tensor out({s[0], s[1]});
    const double* xv = x.value().raw();
    for (std::size_t p = 0; p < planes; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < area; ++i) acc += xv[p * area + i];
        out[p] = acc / static_cast<double>(area);
    }
    return Var::make(std::move(out), {x}, [planes, area](Node& self) {
        double* g = input(self, 0).grad_buffer().raw();
        for (std::size_t p = 0; p < planes; ++p) {
            const double v = self.grad[p] / static_cast<double>(area);
            for (std::size_t i = 0; i < area; ++i) g[p * area + i] += v;
        }
    });
}

Var channel_gate(const Var& x, const Var& gate) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("channel_gate expects NCHW input");
    require_shape(gate.value(), {s[0], s[1]}, "channel_gate gate");
    const std::size_t planes = s[0] * s[1], area = s[2] * s[3];
    Tensor out = x.value();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < area; ++i) out[p * area + i] *= gate.value()[p];
    return Var::make(std::move(out), {x, gate}, [planes, area](Node& self) {
        Node& xn = input(self, 0);
        Node& gn = input(self, 1);
        for (std::size_t p = 0; p < planes; ++p) {
            if (xn.requires_grad) {
                auto& gx = xn.grad_buffer();
                for (std::size_t i = 0; i < area; ++i) gx[p * area + i] += self.grad[p * area + i] * gn.value[p];
            }
            if (gn.requires_grad) {
                double acc = 0.0;
                for (std::size_t i = 0; i < area; ++i) acc += self.grad[p * area + i] * xn.value[p * area + i];
                gn.grad_buffer()[p] += acc;
            }
        }
    });
}

}  // namespace latentfair::ops
