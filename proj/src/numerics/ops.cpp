#include "lpal/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace lpal {
namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <typename T>
Graph<T>& same_graph(std::initializer_list<BasicVar<T>> vars) {
    Graph<T>* g = vars.begin()->graph;
    if (g == nullptr) throw std::invalid_argument("op on an unbound variable");
    for (const auto& v : vars) {
        if (v.graph != g) throw std::invalid_argument("op inputs belong to different graphs");
    }
    return *g;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

template <typename T>
void im2col(const T* img, int channels, int height, int width, int kh, int kw, int stride, int pad,
            int out_h, int out_w, T* col) {
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                T* dst = col + static_cast<std::size_t>((c * kh + i) * kw + j) * plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + i;
                    T* row = dst + oy * out_w;
                    if (iy < 0 || iy >= height) {
                        std::fill(row, row + out_w, T{0});
                        continue;
                    }
                    const T* src = img + (static_cast<std::size_t>(c) * height + iy) * width;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + j;
                        row[ox] = (ix >= 0 && ix < width) ? src[ix] : T{0};
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, int channels, int height, int width, int kh, int kw, int stride, int pad,
            int out_h, int out_w, T* img) {
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const T* src = col + static_cast<std::size_t>((c * kh + i) * kw + j) * plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + i;
                    if (iy < 0 || iy >= height) continue;
                    T* dst = img + (static_cast<std::size_t>(c) * height + iy) * width;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + j;
                        if (ix >= 0 && ix < width) dst[ix] += src[oy * out_w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
BasicVar<T> conv2d(BasicVar<T> input, BasicVar<T> kernel, BasicVar<T> bias, int stride, int pad) {
    Graph<T>& g = same_graph({input, kernel, bias});
    const BasicTensor<T>& x = input.value();
    const BasicTensor<T>& w = kernel.value();
    const BasicTensor<T>& b = bias.value();
    require(x.rank() == 4, "conv2d input must be [N,C,H,W], got " + shape_str(x.shape()));
    require(w.rank() == 4, "conv2d kernel must be [K,C,kh,kw], got " + shape_str(w.shape()));
    require(stride > 0 && pad >= 0, "conv2d needs stride > 0 and pad >= 0");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    require(w.dim(1) == c, "conv2d channel mismatch: input " + shape_str(x.shape()) + " kernel " +
                               shape_str(w.shape()));
    require(b.size() == static_cast<std::size_t>(k), "conv2d bias must have " + std::to_string(k) + " entries");
    require(kh <= h + 2 * pad && kw <= wd + 2 * pad, "conv2d kernel larger than padded input");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    const int rows = c * kh * kw;
    const int plane = oh * ow;

    auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * rows * plane);
    BasicTensor<T> out(Shape{n, k, oh, ow});
    CMapRM<T> wm(w.ptr(), k, rows);
    for (int s = 0; s < n; ++s) {
        T* col = cols->data() + static_cast<std::size_t>(s) * rows * plane;
        im2col(x.ptr() + static_cast<std::size_t>(s) * c * h * wd, c, h, wd, kh, kw, stride, pad, oh, ow, col);
        MapRM<T> om(out.ptr() + static_cast<std::size_t>(s) * k * plane, k, plane);
        om.noalias() = wm * CMapRM<T>(col, rows, plane);
        for (int kk = 0; kk < k; ++kk) om.row(kk).array() += b[static_cast<std::size_t>(kk)];
    }

    return g.record(std::move(out), {input.id, kernel.id, bias.id},
                    [=](Graph<T>& gr, std::size_t self) {
                        const BasicTensor<T>& gy = gr.grad(self);
                        const BasicTensor<T>& wv = gr.value(kernel.id);
                        CMapRM<T> wmat(wv.ptr(), k, rows);
                        MatRM<T> dcol(rows, plane);
                        for (int s = 0; s < n; ++s) {
                            CMapRM<T> gys(gy.ptr() + static_cast<std::size_t>(s) * k * plane, k, plane);
                            const T* col = cols->data() + static_cast<std::size_t>(s) * rows * plane;
                            if (gr.requires_grad(kernel.id)) {
                                MapRM<T> dw(gr.grad_buffer(kernel.id).ptr(), k, rows);
                                dw.noalias() += gys * CMapRM<T>(col, rows, plane).transpose();
                            }
                            if (gr.requires_grad(bias.id)) {
                                BasicTensor<T>& db = gr.grad_buffer(bias.id);
                                for (int kk = 0; kk < k; ++kk) {
                                    double acc = 0;
                                    for (int p = 0; p < plane; ++p) acc += gys(kk, p);
                                    db[static_cast<std::size_t>(kk)] += static_cast<T>(acc);
                                }
                            }
                            if (gr.requires_grad(input.id)) {
                                dcol.noalias() = wmat.transpose() * gys;
                                T* dx = gr.grad_buffer(input.id).ptr() + static_cast<std::size_t>(s) * c * h * wd;
                                col2im(dcol.data(), c, h, wd, kh, kw, stride, pad, oh, ow, dx);
                            }
                        }
                    });
}

template <typename T>
BasicVar<T> relu(BasicVar<T> x) {
    Graph<T>& g = same_graph({x});
    const BasicTensor<T>& xv = x.value();
    BasicTensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
    return g.record(std::move(out), {x.id}, [x](Graph<T>& gr, std::size_t self) {
        const BasicTensor<T>& gy = gr.grad(self);
        const BasicTensor<T>& xv2 = gr.value(x.id);
        BasicTensor<T>& dx = gr.grad_buffer(x.id);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            if (xv2[i] > T{0}) dx[i] += gy[i];
        }
    });
}

template <typename T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
    Graph<T>& g = same_graph({a, b});
    const BasicTensor<T>& av = a.value();
    const BasicTensor<T>& bv = b.value();
    require(av.shape() == bv.shape(), "add shape mismatch: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    BasicTensor<T> out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return g.record(std::move(out), {a.id, b.id}, [a, b](Graph<T>& gr, std::size_t self) {
        const BasicTensor<T>& gy = gr.grad(self);
        gr.accumulate(a.id, gy.data());
        gr.accumulate(b.id, gy.data());
    });
}

template <typename T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
    Graph<T>& g = same_graph({a, b});
    const BasicTensor<T>& av = a.value();
    const BasicTensor<T>& bv = b.value();
    require(av.shape() == bv.shape(), "mul shape mismatch: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    BasicTensor<T> out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return g.record(std::move(out), {a.id, b.id}, [a, b](Graph<T>& gr, std::size_t self) {
        const BasicTensor<T>& gy = gr.grad(self);
        const BasicTensor<T>& av2 = gr.value(a.id);
        const BasicTensor<T>& bv2 = gr.value(b.id);
        if (gr.requires_grad(a.id)) {
            BasicTensor<T>& da = gr.grad_buffer(a.id);
            for (std::size_t i = 0; i < gy.size(); ++i) da[i] += gy[i] * bv2[i];
        }
        if (gr.requires_grad(b.id)) {
            BasicTensor<T>& db = gr.grad_buffer(b.id);
            for (std::size_t i = 0; i < gy.size(); ++i) db[i] += gy[i] * av2[i];
        }
    });
}

template <typename T>
BasicVar<T> scale(BasicVar<T> x, double factor) {
    Graph<T>& g = same_graph({x});
    const BasicTensor<T>& xv = x.value();
    BasicTensor<T> out(xv.shape());
    const T f = static_cast<T>(factor);
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * f;
    return g.record(std::move(out), {x.id}, [x, f](Graph<T>& gr, std::size_t self) {
        const BasicTensor<T>& gy = gr.grad(self);
        BasicTensor<T>& dx = gr.grad_buffer(x.id);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * f;
    });
}

template <typename T>
BasicVar<T> global_avg_pool(BasicVar<T> x) {
    Graph<T>& g = same_graph({x});
    const BasicTensor<T>& xv = x.value();
    require(xv.rank() == 4, "global_avg_pool expects [N,C,H,W], got " + shape_str(xv.shape()));
    const int n = xv.dim(0), c = xv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    BasicTensor<T> out(Shape{n, c});
    for (std::size_t r = 0; r < static_cast<std::size_t>(n) * c; ++r) {
        double acc = 0;
        const T* p = xv.ptr() + r * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        out[r] = static_cast<T>(acc / static_cast<double>(plane));
    }
    return g.record(std::move(out), {x.id}, [x, plane](Graph<T>& gr, std::size_t self) {
        const BasicTensor<T>& gy = gr.grad(self);
        BasicTensor<T>& dx = gr.grad_buffer(x.id);
        const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
        for (std::size_t r = 0; r < gy.size(); ++r) {
            const T v = gy[r] * inv;
            T* p = dx.ptr() + r * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] += v;
        }
    });
}

template <typename T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b) {
    Graph<T>& g = same_graph({a, b});
    const BasicTensor<T>& av = a.value();
    const BasicTensor<T>& bv = b.value();
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
            "matmul shape mismatch: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    const int m = av.dim(0), kdim = av.dim(1), p = bv.dim(1);
    BasicTensor<T> out(Shape{m, p});
    MapRM<T>(out.ptr(), m, p).noalias() = CMapRM<T>(av.ptr(), m, kdim) * CMapRM<T>(bv.ptr(), kdim, p);
    return g.record(std::move(out), {a.id, b.id}, [=](Graph<T>& gr, std::size_t self) {
        CMapRM<T> gy(gr.grad(self).ptr(), m, p);
        if (gr.requires_grad(a.id)) {
            MapRM<T>(gr.grad_buffer(a.id).ptr(), m, kdim).noalias() +=
                gy * CMapRM<T>(gr.value(b.id).ptr(), kdim, p).transpose();
        }
        if (gr.requires_grad(b.id)) {
            MapRM<T>(gr.grad_buffer(b.id).ptr(), kdim, p).noalias() +=
                CMapRM<T>(gr.value(a.id).ptr(), m, kdim).transpose() * gy;
        }
    });
}

template <typename T>
BasicVar<T> linear(BasicVar<T> x, BasicVar<T> weight, BasicVar<T> bias) {
    Graph<T>& g = same_graph({x, weight, bias});
    const BasicTensor<T>& xv = x.value();
    const BasicTensor<T>& wv = weight.value();
    const BasicTensor<T>& bv = bias.value();
    require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1),
            "linear shape mismatch: x " + shape_str(xv.shape()) + " weight " + shape_str(wv.shape()));
    const int n = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(0);
    require(bv.size() == static_cast<std::size_t>(out_dim), "linear bias must have " + std::to_string(out_dim) + " entries");
    BasicTensor<T> out(Shape{n, out_dim});
    MapRM<T> om(out.ptr(), n, out_dim);
    om.noalias() = CMapRM<T>(xv.ptr(), n, in) * CMapRM<T>(wv.ptr(), out_dim, in).transpose();
    for (int r = 0; r < n; ++r) {
        for (int o = 0; o < out_dim; ++o) om(r, o) += bv[static_cast<std::size_t>(o)];
    }
    return g.record(std::move(out), {x.id, weight.id, bias.id}, [=](Graph<T>& gr, std::size_t self) {
        CMapRM<T> gy(gr.grad(self).ptr(), n, out_dim);
        if (gr.requires_grad(x.id)) {
            MapRM<T>(gr.grad_buffer(x.id).ptr(), n, in).noalias() +=
                gy * CMapRM<T>(gr.value(weight.id).ptr(), out_dim, in);
        }
        if (gr.requires_grad(weight.id)) {
            MapRM<T>(gr.grad_buffer(weight.id).ptr(), out_dim, in).noalias() +=
                gy.transpose() * CMapRM<T>(gr.value(x.id).ptr(), n, in);
        }
        if (gr.requires_grad(bias.id)) {
            BasicTensor<T>& db = gr.grad_buffer(bias.id);
            for (int o = 0; o < out_dim; ++o) {
                double acc = 0;
                for (int r = 0; r < n; ++r) acc += gy(r, o);
                db[static_cast<std::size_t>(o)] += static_cast<T>(acc);
            }
        }
    });
}

template <typename T>
BasicVar<T> concat(const std::vector<BasicVar<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    Graph<T>* gp = parts.front().graph;
    for (const auto& p : parts) {
        if (p.graph != gp || gp == nullptr) throw std::invalid_argument("concat inputs belong to different graphs");
    }
    Graph<T>& g = *gp;
    const Shape& first = parts.front().shape();
    require(axis >= 0 && axis < static_cast<int>(first.size()), "concat axis out of range");
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(first[i]);
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= static_cast<std::size_t>(first[i]);
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        require(s.size() == first.size(), "concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (static_cast<int>(i) != axis) {
                require(s[i] == first[i], "concat shape mismatch: " + shape_str(s) + " vs " + shape_str(first));
            }
        }
        out_shape[axis] += s[axis];
        widths.push_back(static_cast<std::size_t>(s[axis]) * inner);
        ids.push_back(p.id);
    }
    BasicTensor<T> out(out_shape);
    const std::size_t row = static_cast<std::size_t>(out_shape[axis]) * inner;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const BasicTensor<T>& v = parts[k].value();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(v.ptr() + o * widths[k], widths[k], out.ptr() + o * row + offset);
        }
        offset += widths[k];
    }
    return g.record(std::move(out), ids, [=](Graph<T>& gr, std::size_t self) {
        const BasicTensor<T>& gy = gr.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (gr.requires_grad(ids[k])) {
                BasicTensor<T>& d = gr.grad_buffer(ids[k]);
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = gy.ptr() + o * row + off;
                    T* dst = d.ptr() + o * widths[k];
                    for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
                }
            }
            off += widths[k];
        }
    });
}

template <typename T>
BasicVar<T> reshape(BasicVar<T> x, Shape shape) {
    Graph<T>& g = same_graph({x});
    return g.record(x.value().reshaped(std::move(shape)), {x.id}, [x](Graph<T>& gr, std::size_t self) {
        gr.accumulate(x.id, gr.grad(self).data());
    });
}

template <typename T>
BasicVar<T> sum(BasicVar<T> x) {
    Graph<T>& g = same_graph({x});
    double acc = 0;
    for (T v : x.value().data()) acc += v;
    return g.record(BasicTensor<T>::scalar(static_cast<T>(acc)), {x.id}, [x](Graph<T>& gr, std::size_t self) {
        const T gy = gr.grad(self)[0];
        BasicTensor<T>& dx = gr.grad_buffer(x.id);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gy;
    });
}

template <typename T>
BasicVar<T> mean(BasicVar<T> x) {
    Graph<T>& g = same_graph({x});
    double acc = 0;
    const std::size_t n = x.value().size();
    for (T v : x.value().data()) acc += v;
    return g.record(BasicTensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {x.id},
                    [x, n](Graph<T>& gr, std::size_t self) {
                        const T gy = static_cast<T>(gr.grad(self)[0] / static_cast<double>(n));
                        BasicTensor<T>& dx = gr.grad_buffer(x.id);
                        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gy;
                    });
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits) {
    require(logits.rank() == 2, "softmax expects [N,C], got " + shape_str(logits.shape()));
    const int n = logits.dim(0), c = logits.dim(1);
    BasicTensor<T> out(logits.shape());
    for (int r = 0; r < n; ++r) {
        const T* row = logits.ptr() + static_cast<std::size_t>(r) * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0;
        for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        for (int j = 0; j < c; ++j) {
            out[static_cast<std::size_t>(r) * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / z);
        }
    }
    return out;
}

template <typename T>
BasicVar<T> cross_entropy_per_sample(BasicVar<T> logits, std::span<const int> targets) {
    Graph<T>& g = same_graph({logits});
    const BasicTensor<T>& lv = logits.value();
    require(lv.rank() == 2, "cross entropy expects logits [N,C], got " + shape_str(lv.shape()));
    const int n = lv.dim(0), c = lv.dim(1);
    if (targets.size() != static_cast<std::size_t>(n)) {
        throw ShapeError("cross entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
    }
    for (int t : targets) {
        if (t < 0 || t >= c) throw std::out_of_range("cross entropy target " + std::to_string(t) + " outside [0," + std::to_string(c) + ")");
    }
    BasicTensor<T> probs(lv.shape());
    BasicTensor<T> out(Shape{n});
    for (int r = 0; r < n; ++r) {
        const T* row = lv.ptr() + static_cast<std::size_t>(r) * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0;
        for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        const double lse = mx + std::log(z);
        for (int j = 0; j < c; ++j) {
            probs[static_cast<std::size_t>(r) * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
        }
        out[static_cast<std::size_t>(r)] = static_cast<T>(lse - static_cast<double>(row[targets[r]]));
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    return g.record(std::move(out), {logits.id},
                    [logits, probs = std::move(probs), tgt = std::move(tgt), c](Graph<T>& gr, std::size_t self) {
                        const BasicTensor<T>& gy = gr.grad(self);
                        BasicTensor<T>& dx = gr.grad_buffer(logits.id);
                        for (std::size_t r = 0; r < tgt.size(); ++r) {
                            for (int j = 0; j < c; ++j) {
                                const std::size_t idx = r * c + j;
                                const T ind = j == tgt[r] ? T{1} : T{0};
                                dx[idx] += gy[r] * (probs[idx] - ind);
                            }
                        }
                    });
}

template <typename T>
BasicVar<T> softmax_cross_entropy(BasicVar<T> logits, std::span<const int> targets) {
    return mean(cross_entropy_per_sample(logits, targets));
}

template <typename T>
BasicVar<T> margin_ranking_loss(BasicVar<T> pred, const BasicTensor<T>& target,
                                std::span<const std::pair<int, int>> pairs, double margin) {
    Graph<T>& g = same_graph({pred});
    const BasicTensor<T>& pv = pred.value();
    require(pv.size() == target.size(), "ranking loss: prediction and target lengths differ");
    require(!pairs.empty(), "ranking loss needs at least one pair");
    const int n = static_cast<int>(pv.size());
    std::vector<std::pair<int, int>> active;
    std::vector<double> signs;
    double acc = 0;
    for (const auto& [i, j] : pairs) {
        if (i < 0 || j < 0 || i >= n || j >= n) throw std::out_of_range("ranking pair index out of range");
        const double dt = static_cast<double>(target[i]) - static_cast<double>(target[j]);
        const double s = dt > 0 ? 1.0 : (dt < 0 ? -1.0 : 0.0);
        const double v = -s * (static_cast<double>(pv[i]) - static_cast<double>(pv[j])) + margin;
        if (v > 0) {
            acc += v;
            active.emplace_back(i, j);
            signs.push_back(s);
        }
    }
    const double count = static_cast<double>(pairs.size());
    return g.record(BasicTensor<T>::scalar(static_cast<T>(acc / count)), {pred.id},
                    [pred, active = std::move(active), signs = std::move(signs), count](Graph<T>& gr, std::size_t self) {
                        const double gy = gr.grad(self)[0] / count;
                        BasicTensor<T>& dp = gr.grad_buffer(pred.id);
                        for (std::size_t k = 0; k < active.size(); ++k) {
                            dp[active[k].first] += static_cast<T>(-signs[k] * gy);
                            dp[active[k].second] += static_cast<T>(signs[k] * gy);
                        }
                    });
}

template <typename T>
BasicVar<T> mse_loss(BasicVar<T> pred, const BasicTensor<T>& target) {
    Graph<T>& g = same_graph({pred});
    const BasicTensor<T>& pv = pred.value();
    require(pv.size() == target.size(), "mse: prediction and target lengths differ");
    require(!target.empty(), "mse of empty vectors");
    const std::size_t n = pv.size();
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pv[i]) - static_cast<double>(target[i]);
        acc += d * d;
    }
    return g.record(BasicTensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {pred.id},
                    [pred, target, n](Graph<T>& gr, std::size_t self) {
                        const double gy = gr.grad(self)[0];
                        const BasicTensor<T>& pv2 = gr.value(pred.id);
                        BasicTensor<T>& dp = gr.grad_buffer(pred.id);
                        for (std::size_t i = 0; i < n; ++i) {
                            const double d = static_cast<double>(pv2[i]) - static_cast<double>(target[i]);
                            dp[i] += static_cast<T>(2.0 * d * gy / static_cast<double>(n));
                        }
                    });
}

#define LPAL_INSTANTIATE_OPS(T)                                                                          \
    template BasicVar<T> conv2d(BasicVar<T>, BasicVar<T>, BasicVar<T>, int, int);                       \
    template BasicVar<T> relu(BasicVar<T>);                                                              \
    template BasicVar<T> add(BasicVar<T>, BasicVar<T>);                                                  \
    template BasicVar<T> mul(BasicVar<T>, BasicVar<T>);                                                  \
    template BasicVar<T> scale(BasicVar<T>, double);                                                     \
    template BasicVar<T> global_avg_pool(BasicVar<T>);                                                   \
    template BasicVar<T> matmul(BasicVar<T>, BasicVar<T>);                                               \
    template BasicVar<T> linear(BasicVar<T>, BasicVar<T>, BasicVar<T>);                                  \
    template BasicVar<T> concat(const std::vector<BasicVar<T>>&, int);                                   \
    template BasicVar<T> reshape(BasicVar<T>, Shape);                                                    \
    template BasicVar<T> sum(BasicVar<T>);                                                               \
    template BasicVar<T> mean(BasicVar<T>);                                                              \
    template BasicVar<T> cross_entropy_per_sample(BasicVar<T>, std::span<const int>);                    \
    template BasicVar<T> softmax_cross_entropy(BasicVar<T>, std::span<const int>);                       \
    template BasicVar<T> margin_ranking_loss(BasicVar<T>, const BasicTensor<T>&,                         \
                                             std::span<const std::pair<int, int>>, double);              \
    template BasicVar<T> mse_loss(BasicVar<T>, const BasicTensor<T>&);                                   \
    template BasicTensor<T> softmax_rows(const BasicTensor<T>&);

LPAL_INSTANTIATE_OPS(float)
LPAL_INSTANTIATE_OPS(double)

}  // namespace lpal
