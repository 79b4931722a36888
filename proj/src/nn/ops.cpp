#include "shapeformer/nn/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "shapeformer/errors.hpp"

namespace shapeformer::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

MapMat as_mat(std::vector<double>& v, int rows, int cols) { return MapMat(v.data(), rows, cols); }
CMapMat as_cmat(const std::vector<double>& v, int rows, int cols) {
    return CMapMat(v.data(), rows, cols);
}

// Eigen chooses vectorised reduction orders from pointer alignment, so
// products over raw std::vector storage can differ in the last bit between
// runs. Products therefore run on Eigen-owned (aligned) copies.
RowMat load(const std::vector<double>& v, int rows, int cols) { return as_cmat(v, rows, cols); }

void store(std::vector<double>& dst, const RowMat& m) { std::copy_n(m.data(), m.size(), dst.data()); }

void accumulate(std::vector<double>& dst, const RowMat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) dst[static_cast<std::size_t>(i)] += m.data()[i];
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

template <typename F>
Tensor unary(const Tensor& a, F f, std::function<void(Node&)> bwd) {
    std::vector<double> out(a.numel());
    auto v = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(v[i]);
    return make_result(a.shape(), std::move(out), {a}, std::move(bwd));
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dims disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    store(out, RowMat(load(a.node()->value, m, k) * load(b.node()->value, k, n)));
    return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        const RowMat dc = load(self.grad, m, n);
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) accumulate(pa.grad, RowMat(dc * load(pb.value, k, n).transpose()));
        if (pb.requires_grad) accumulate(pb.grad, RowMat(load(pa.value, m, k).transpose() * dc));
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.numel());
    as_mat(out, n, m) = as_cmat(a.node()->value, m, n).transpose();
    return make_result({n, m}, std::move(out), {a}, [m, n](Node& self) {
        as_mat(parent(self, 0).grad, m, n) += as_cmat(self.grad, n, m).transpose();
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            Node& par = parent(self, p);
            if (!par.requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) par.grad[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i];
            if (pb.requires_grad) pb.grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
            if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x * s; }, [s](Node& self) {
        Node& pa = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += s * self.grad[i];
    });
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
    require_rank(a, 2, "add_row_bias");
    const int m = a.dim(0), n = a.dim(1);
    if (bias.numel() != static_cast<std::size_t>(n)) throw ShapeError("add_row_bias: bias length");
    std::vector<double> out(a.numel());
    for (int r = 0; r < m; ++r) {
        for (int c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] + bias[c];
    }
    return make_result(a.shape(), std::move(out), {a, bias}, [m, n](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        for (int r = 0; r < m; ++r) {
            for (int c = 0; c < n; ++c) {
                const double g = self.grad[r * n + c];
                if (pa.requires_grad) pa.grad[r * n + c] += g;
                if (pb.requires_grad) pb.grad[c] += g;
            }
        }
    });
}

Tensor add_constant(const Tensor& a, std::span<const double> c) {
    if (c.size() != a.numel()) throw ShapeError("add_constant: size mismatch");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + c[i];
    return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
        Node& pa = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> gate(a.numel());
    auto v = a.values();
    for (std::size_t i = 0; i < gate.size(); ++i) gate[i] = v[i] > 0.0 ? 1.0 : 0.0;
    gate = frozen(std::move(gate));
    std::vector<double> out(gate.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gate[i] != 0.0 ? v[i] : 0.0;
    return make_result(a.shape(), std::move(out), {a}, [gate = std::move(gate)](Node& self) {
        Node& pa = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (gate[i] != 0.0) pa.grad[i] += self.grad[i];
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    return unary(a, [](double x) {
        // Split on sign so exp never overflows.
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    }, [](Node& self) {
        Node& pa = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            pa.grad[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor softmax_rows(const Tensor& a) {
    require_rank(a, 2, "softmax_rows");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.numel());
    for (int r = 0; r < m; ++r) {
        const double* in = a.values().data() + static_cast<std::size_t>(r) * n;
        double* o = out.data() + static_cast<std::size_t>(r) * n;
        const double mx = *std::max_element(in, in + n);
        double total = 0.0;
        for (int c = 0; c < n; ++c) total += (o[c] = std::exp(in[c] - mx));
        for (int c = 0; c < n; ++c) o[c] /= total;
    }
    return make_result(a.shape(), std::move(out), {a}, [m, n](Node& self) {
        Node& pa = parent(self, 0);
        for (int r = 0; r < m; ++r) {
            const std::size_t base = static_cast<std::size_t>(r) * n;
            double dot = 0.0;
            for (int c = 0; c < n; ++c) dot += self.grad[base + c] * self.value[base + c];
            for (int c = 0; c < n; ++c) {
                pa.grad[base + c] += self.value[base + c] * (self.grad[base + c] - dot);
            }
        }
    });
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(a, 2, "layer_norm_rows");
    const int m = a.dim(0), n = a.dim(1);
    if (gamma.numel() != static_cast<std::size_t>(n) || beta.numel() != static_cast<std::size_t>(n)) {
        throw ShapeError("layer_norm_rows: affine parameter length");
    }
    std::vector<double> out(a.numel());
    std::vector<double> xhat(a.numel());
    std::vector<double> inv_std(m);
    for (int r = 0; r < m; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * n;
        double mu = 0.0;
        for (int c = 0; c < n; ++c) mu += a[base + c];
        mu /= n;
        double var = 0.0;
        for (int c = 0; c < n; ++c) var += (a[base + c] - mu) * (a[base + c] - mu);
        var /= n;
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < n; ++c) {
            xhat[base + c] = (a[base + c] - mu) * inv_std[r];
            out[base + c] = gamma[c] * xhat[base + c] + beta[c];
        }
    }
    return make_result(a.shape(), std::move(out), {a, gamma, beta},
                       [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = parent(self, 0);
        Node& pg = parent(self, 1);
        Node& pb = parent(self, 2);
        for (int r = 0; r < m; ++r) {
            const std::size_t base = static_cast<std::size_t>(r) * n;
            double sum_d = 0.0, sum_dx = 0.0;
            for (int c = 0; c < n; ++c) {
                const double g = self.grad[base + c];
                const double dxhat = g * pg.value[c];
                sum_d += dxhat;
                sum_dx += dxhat * xhat[base + c];
                if (pg.requires_grad) pg.grad[c] += g * xhat[base + c];
                if (pb.requires_grad) pb.grad[c] += g;
            }
            if (!px.requires_grad) continue;
            for (int c = 0; c < n; ++c) {
                const double dxhat = self.grad[base + c] * pg.value[c];
                px.grad[base + c] +=
                    inv_std[r] / n * (n * dxhat - sum_d - xhat[base + c] * sum_dx);
            }
        }
    });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return make_result(shape, std::move(out), {a}, [](Node& self) {
        Node& pa = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int n = parts[0].dim(1);
    int rows = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_rows");
        if (p.dim(1) != n) throw ShapeError("concat_rows: column mismatch");
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rows) * n);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return make_result({rows, n}, std::move(out), parts, [](Node& self) {
        std::size_t offset = 0;
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += self.grad[offset + i];
            }
            offset += p->value.size();
        }
    });
}

Tensor slice_rows(const Tensor& a, int begin, int end) {
    require_rank(a, 2, "slice_rows");
    if (begin < 0 || end > a.dim(0) || begin >= end) throw ShapeError("slice_rows: bad range");
    const int n = a.dim(1);
    const auto first = a.values().begin() + static_cast<std::ptrdiff_t>(begin) * n;
    std::vector<double> out(first, first + static_cast<std::ptrdiff_t>(end - begin) * n);
    return make_result({end - begin, n}, std::move(out), {a}, [begin, n](Node& self) {
        Node& pa = parent(self, 0);
        const std::size_t offset = static_cast<std::size_t>(begin) * n;
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[offset + i] += self.grad[i];
    });
}

Tensor gather_rows(const Tensor& table, std::span<const int> indices) {
    require_rank(table, 2, "gather_rows");
    const int k = table.dim(0), v = table.dim(1);
    std::vector<int> idx(indices.begin(), indices.end());
    std::vector<double> out;
    out.reserve(idx.size() * static_cast<std::size_t>(v));
    for (int i : idx) {
        if (i < 0 || i >= k) throw ShapeError("gather_rows: index out of range");
        const auto row = table.values().begin() + static_cast<std::ptrdiff_t>(i) * v;
        out.insert(out.end(), row, row + v);
    }
    const int n = static_cast<int>(idx.size());
    return make_result({n, v}, std::move(out), {table},
                       [idx = std::move(idx), v](Node& self) {
        Node& pt = parent(self, 0);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (int c = 0; c < v; ++c) pt.grad[idx[r] * v + c] += self.grad[r * v + c];
        }
    });
}

Tensor detach(const Tensor& a) {
    std::vector<double> copy(a.values().begin(), a.values().end());
    return Tensor::constant(a.shape(), frozen(std::move(copy)));
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    return make_result({1}, {total}, {a}, [](Node& self) {
        Node& pa = parent(self, 0);
        for (auto& g : pa.grad) g += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

namespace {

// cols[(c*k + ky)*k + kx, oy*wo + ox] = x[c, oy*s + ky - p, ox*s + kx - p]
void im2col(const double* x, int c, int h, int w, int k, int s, int p, int ho, int wo, double* cols) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + (static_cast<std::size_t>(ci * k + ky) * k + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s + ky - p;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s + kx - p;
                        row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                                ? x[(static_cast<std::size_t>(ci) * h + iy) * w + ix]
                                                : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, int c, int h, int w, int k, int s, int p, int ho, int wo, double* x) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + (static_cast<std::size_t>(ci * k + ky) * k + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s + ky - p;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s + kx - p;
                        if (ix < 0 || ix >= w) continue;
                        x[(static_cast<std::size_t>(ci) * h + iy) * w + ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
    require_rank(x, 3, "conv2d");
    require_rank(weight, 4, "conv2d weight");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int o = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != c || weight.dim(3) != k) {
        throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " vs input " +
                         shape_str(x.shape()));
    }
    if (bias.numel() != static_cast<std::size_t>(o)) throw ShapeError("conv2d: bias length");
    if (stride < 1 || h + 2 * padding < k || w + 2 * padding < k) throw ShapeError("conv2d: geometry");
    const int ho = (h + 2 * padding - k) / stride + 1;
    const int wo = (w + 2 * padding - k) / stride + 1;
    const int ckk = c * k * k;
    const int hw = ho * wo;

    std::vector<double> cols(static_cast<std::size_t>(ckk) * hw);
    im2col(x.values().data(), c, h, w, k, stride, padding, ho, wo, cols.data());
    std::vector<double> out(static_cast<std::size_t>(o) * hw);
    store(out, RowMat(load(weight.node()->value, o, ckk) * load(cols, ckk, hw)));
    for (int oc = 0; oc < o; ++oc) {
        for (int i = 0; i < hw; ++i) out[static_cast<std::size_t>(oc) * hw + i] += bias[oc];
    }

    return make_result({o, ho, wo}, std::move(out), {x, weight, bias},
                       [=, cols = std::move(cols)](Node& self) {
        const RowMat dout = load(self.grad, o, hw);
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        Node& pb = parent(self, 2);
        if (pw.requires_grad) accumulate(pw.grad, RowMat(dout * load(cols, ckk, hw).transpose()));
        if (pb.requires_grad) {
            for (int oc = 0; oc < o; ++oc) {
                double s = 0.0;
                for (int i = 0; i < hw; ++i) s += self.grad[static_cast<std::size_t>(oc) * hw + i];
                pb.grad[oc] += s;
            }
        }
        if (px.requires_grad) {
            std::vector<double> dcols(static_cast<std::size_t>(ckk) * hw);
            store(dcols, RowMat(load(pw.value, o, ckk).transpose() * dout));
            col2im(dcols.data(), c, h, w, k, stride, padding, ho, wo, px.grad.data());
        }
    });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
    require_rank(x, 3, "conv_transpose2d");
    require_rank(weight, 4, "conv_transpose2d weight");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int o = weight.dim(1), k = weight.dim(2);
    if (weight.dim(0) != c || weight.dim(3) != k) {
        throw ShapeError("conv_transpose2d: weight " + shape_str(weight.shape()) + " vs input " +
                         shape_str(x.shape()));
    }
    if (bias.numel() != static_cast<std::size_t>(o)) throw ShapeError("conv_transpose2d: bias length");
    if (stride < 1) throw ShapeError("conv_transpose2d: stride");
    const int ho = (h - 1) * stride + k;
    const int wo = (w - 1) * stride + k;
    const int okk = o * k * k;
    const int hw = h * w;

    std::vector<double> cols(static_cast<std::size_t>(okk) * hw);
    store(cols, RowMat(load(weight.node()->value, c, okk).transpose() * load(x.node()->value, c, hw)));
    std::vector<double> out(static_cast<std::size_t>(o) * ho * wo);
    for (int oc = 0; oc < o; ++oc) {
        double* plane = out.data() + static_cast<std::size_t>(oc) * ho * wo;
        std::fill(plane, plane + ho * wo, bias[oc]);
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols.data() + (static_cast<std::size_t>(oc * k + ky) * k + kx) * hw;
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) {
                        plane[(y * stride + ky) * wo + xx * stride + kx] += row[y * w + xx];
                    }
                }
            }
        }
    }

    return make_result({o, ho, wo}, std::move(out), {x, weight, bias}, [=](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        Node& pb = parent(self, 2);
        std::vector<double> dcols(static_cast<std::size_t>(okk) * hw);
        for (int oc = 0; oc < o; ++oc) {
            const double* plane = self.grad.data() + static_cast<std::size_t>(oc) * ho * wo;
            if (pb.requires_grad) {
                double s = 0.0;
                for (int i = 0; i < ho * wo; ++i) s += plane[i];
                pb.grad[oc] += s;
            }
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    double* row = dcols.data() + (static_cast<std::size_t>(oc * k + ky) * k + kx) * hw;
                    for (int y = 0; y < h; ++y) {
                        for (int xx = 0; xx < w; ++xx) {
                            row[y * w + xx] = plane[(y * stride + ky) * wo + xx * stride + kx];
                        }
                    }
                }
            }
        }
        const RowMat dc = load(dcols, okk, hw);
        if (px.requires_grad) accumulate(px.grad, RowMat(load(pw.value, c, okk) * dc));
        if (pw.requires_grad) accumulate(pw.grad, RowMat(load(px.value, c, hw) * dc.transpose()));
    });
}

Tensor roi_align(const Tensor& fmap, const RoiBox& box, double spatial_scale, int out_h, int out_w) {
    require_rank(fmap, 3, "roi_align");
    const int c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
    if (out_h <= 0 || out_w <= 0) throw ShapeError("roi_align: output size");
    struct Tap {
        int y0, y1, x0, x1;
        double wy, wx;
    };
    std::vector<Tap> taps(static_cast<std::size_t>(out_h) * out_w);
    const double bin_h = (box.y1 - box.y0) / out_h;
    const double bin_w = (box.x1 - box.x0) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double sy = (box.y0 + (i + 0.5) * bin_h) * spatial_scale - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
        const int y0 = static_cast<int>(std::floor(sy));
        const int y1 = std::min(y0 + 1, h - 1);
        for (int j = 0; j < out_w; ++j) {
            double sx = (box.x0 + (j + 0.5) * bin_w) * spatial_scale - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            const int x0 = static_cast<int>(std::floor(sx));
            const int x1 = std::min(x0 + 1, w - 1);
            taps[i * out_w + j] = {y0, y1, x0, x1, sy - y0, sx - x0};
        }
    }
    const int plane = h * w;
    const int out_plane = out_h * out_w;
    std::vector<double> out(static_cast<std::size_t>(c) * out_plane);
    auto v = fmap.values();
    for (int ch = 0; ch < c; ++ch) {
        const double* f = v.data() + static_cast<std::size_t>(ch) * plane;
        for (int t = 0; t < out_plane; ++t) {
            const Tap& tp = taps[t];
            const double top = (1 - tp.wx) * f[tp.y0 * w + tp.x0] + tp.wx * f[tp.y0 * w + tp.x1];
            const double bot = (1 - tp.wx) * f[tp.y1 * w + tp.x0] + tp.wx * f[tp.y1 * w + tp.x1];
            out[static_cast<std::size_t>(ch) * out_plane + t] = (1 - tp.wy) * top + tp.wy * bot;
        }
    }
    return make_result({c, out_h, out_w}, std::move(out), {fmap},
                       [=, taps = std::move(taps)](Node& self) {
        Node& pf = parent(self, 0);
        for (int ch = 0; ch < c; ++ch) {
            double* g = pf.grad.data() + static_cast<std::size_t>(ch) * plane;
            for (int t = 0; t < out_plane; ++t) {
                const Tap& tp = taps[t];
                const double d = self.grad[static_cast<std::size_t>(ch) * out_plane + t];
                g[tp.y0 * w + tp.x0] += d * (1 - tp.wy) * (1 - tp.wx);
                g[tp.y0 * w + tp.x1] += d * (1 - tp.wy) * tp.wx;
                g[tp.y1 * w + tp.x0] += d * tp.wy * (1 - tp.wx);
                g[tp.y1 * w + tp.x1] += d * tp.wy * tp.wx;
            }
        }
    });
}

Tensor bce_mean(const Tensor& probs, std::span<const double> targets) {
    if (targets.size() != probs.numel()) throw ShapeError("bce_mean: target size");
    const std::size_t n = probs.numel();
    std::vector<double> t(targets.begin(), targets.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(probs[i], kBceClamp, 1.0 - kBceClamp);
        total -= t[i] * std::log(p) + (1.0 - t[i]) * std::log(1.0 - p);
    }
    return make_result({1}, {total / static_cast<double>(n)}, {probs}, [n, t = std::move(t)](Node& self) {
        Node& pp = parent(self, 0);
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double p = pp.value[i];
            if (p < kBceClamp || p > 1.0 - kBceClamp) continue;
            pp.grad[i] += g * (-t[i] / p + (1.0 - t[i]) / (1.0 - p));
        }
    });
}

Tensor cross_entropy(const Tensor& probs, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= probs.numel()) {
        throw ShapeError("cross_entropy: label out of range");
    }
    const double p = probs[label];
    const double pc = std::clamp(p, kBceClamp, 1.0);
    return make_result({1}, {-std::log(pc)}, {probs}, [label](Node& self) {
        Node& pp = parent(self, 0);
        const double p = pp.value[label];
        if (p >= kBceClamp) pp.grad[label] -= self.grad[0] / p;
    });
}

Tensor mse_mean(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse_mean");
    const Tensor d = sub(a, b);
    return mean(mul(d, d));
}

Tensor mse_mean(const Tensor& a, std::span<const double> target) {
    if (target.size() != a.numel()) throw ShapeError("mse_mean: target size");
    std::vector<double> neg(target.size());
    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -target[i];
    const Tensor d = add_constant(a, neg);
    return mean(mul(d, d));
}

} // namespace shapeformer::nn
