#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "wid/common.hpp"

namespace wid {

// Dense float64 tensor, contiguous row-major storage.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(count(shape), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
        if (v.size() != count(shape)) throw DimensionError("Tensor: value count does not match shape");
    }

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 1) throw DimensionError("Tensor: dimensions must be >= 1");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t size() const { return v.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

enum class Activation { kRelu, kIdentity };

// Trainable parameter with gradient and Adam state.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    std::vector<double> adam_m, adam_v;

    Param() = default;
    Param(std::string n, Tensor t) : name(std::move(n)), value(std::move(t)), grad(value.shape) {}

    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0); }
};

// Reverse-mode tape. Nodes are tensor-granular ops recorded in creation
// order; backward() walks the record in reverse. Parameter leaves accumulate
// into Param::grad, so evaluating the same parameter several times in one
// tape (the siamese branches) sums the contributions naturally.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;            // allocated during backward
        Param* param = nullptr; // set on parameter leaves
        bool needs_grad = false;
        std::vector<Node*> parents;
        std::function<void(Node&)> backprop;
    };

    Node* input(Tensor t) {
        Node* n = fresh();
        n->value = std::move(t);
        return n;
    }

    Node* leaf(Param& p) {
        Node* n = fresh();
        n->value = p.value; // snapshot; updates apply between tapes
        n->param = &p;
        n->needs_grad = true;
        n->backprop = [](Node& self) {
            for (std::size_t i = 0; i < self.grad.v.size(); ++i)
                self.param->grad.v[i] += self.grad.v[i];
        };
        return n;
    }

    // out = act(x (*) w + b); x (C,H,W), w (OC,C,KH,KW), b (OC).
    // Lowered to im2col + matmul so the hot loops run over contiguous rows;
    // the patch matrix is rebuilt in backward instead of being retained.
    Node* conv2d(Node* x, Node* w, Node* b, int stride, int pad, Activation act) {
        const Tensor& xv = x->value;
        const Tensor& wv = w->value;
        if (xv.shape.size() != 3 || wv.shape.size() != 4)
            throw DimensionError("conv2d: expects (C,H,W) input and (OC,C,KH,KW) kernels");
        const int ic = xv.dim(0), ih = xv.dim(1), iw = xv.dim(2);
        const int oc = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
        if (wv.dim(1) != ic) throw DimensionError("conv2d: channel mismatch");
        if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("conv2d: kernel sides must be odd");
        if (b->value.size() != static_cast<std::size_t>(oc))
            throw DimensionError("conv2d: bias length mismatch");
        if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
        const int oh = (ih + 2 * pad - kh) / stride + 1;
        const int ow = (iw + 2 * pad - kw) / stride + 1;
        if (oh < 1 || ow < 1) throw DimensionError("conv2d: output would be empty");

        const int kdim = ic * kh * kw;
        const int pdim = oh * ow;

        Node* n = fresh();
        n->value = Tensor({oc, oh, ow});
        {
            std::vector<double> cols;
            detail_im2col(xv.v.data(), ic, ih, iw, kh, kw, stride, pad, oh, ow, cols);
            const double* wd = wv.v.data();
            const double* bd = b->value.v.data();
            double* od = n->value.v.data();
            for (int c = 0; c < oc; ++c) {
                double* orow = od + static_cast<std::size_t>(c) * pdim;
                std::fill(orow, orow + pdim, bd[c]);
                const double* wrow = wd + static_cast<std::size_t>(c) * kdim;
                for (int k = 0; k < kdim; ++k) {
                    const double a = wrow[k];
                    if (a == 0.0) continue;
                    const double* brow = cols.data() + static_cast<std::size_t>(k) * pdim;
                    for (int p = 0; p < pdim; ++p) orow[p] += a * brow[p];
                }
                if (act == Activation::kRelu)
                    for (int p = 0; p < pdim; ++p) orow[p] = orow[p] < 0.0 ? 0.0 : orow[p];
            }
        }

        n->parents = {x, w, b};
        n->needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
        if (n->needs_grad) {
            n->backprop = [stride, pad, act, ic, ih, iw, oc, kh, kw, oh, ow, kdim, pdim](Node& self) {
                Node* x = self.parents[0];
                Node* w = self.parents[1];
                Node* b = self.parents[2];
                const double* od = self.value.v.data();
                const double* gd = self.grad.v.data();

                // relu gate folded into a local copy of the output gradient
                std::vector<double> gpre(self.grad.v.size());
                for (std::size_t i = 0; i < gpre.size(); ++i)
                    gpre[i] = (act == Activation::kRelu && od[i] <= 0.0) ? 0.0 : gd[i];

                if (b->needs_grad) {
                    for (int c = 0; c < oc; ++c) {
                        double acc = 0.0;
                        const double* grow = gpre.data() + static_cast<std::size_t>(c) * pdim;
                        for (int p = 0; p < pdim; ++p) acc += grow[p];
                        b->grad.v[static_cast<std::size_t>(c)] += acc;
                    }
                }
                if (w->needs_grad) {
                    std::vector<double> cols;
                    detail_im2col(x->value.v.data(), ic, ih, iw, kh, kw, stride, pad, oh, ow, cols);
                    for (int c = 0; c < oc; ++c) {
                        const double* grow = gpre.data() + static_cast<std::size_t>(c) * pdim;
                        double* gwrow = w->grad.v.data() + static_cast<std::size_t>(c) * kdim;
                        for (int k = 0; k < kdim; ++k) {
                            const double* brow = cols.data() + static_cast<std::size_t>(k) * pdim;
                            double acc = 0.0;
                            for (int p = 0; p < pdim; ++p) acc += grow[p] * brow[p];
                            gwrow[k] += acc;
                        }
                    }
                }
                if (x->needs_grad) {
                    std::vector<double> gcols(static_cast<std::size_t>(kdim) * pdim, 0.0);
                    const double* wd = w->value.v.data();
                    for (int c = 0; c < oc; ++c) {
                        const double* grow = gpre.data() + static_cast<std::size_t>(c) * pdim;
                        const double* wrow = wd + static_cast<std::size_t>(c) * kdim;
                        for (int k = 0; k < kdim; ++k) {
                            const double a = wrow[k];
                            if (a == 0.0) continue;
                            double* brow = gcols.data() + static_cast<std::size_t>(k) * pdim;
                            for (int p = 0; p < pdim; ++p) brow[p] += a * grow[p];
                        }
                    }
                    detail_col2im(gcols.data(), ic, ih, iw, kh, kw, stride, pad, oh, ow,
                                  x->grad.v.data());
                }
            };
        }
        return n;
    }

    Node* add(Node* a, Node* b) {
        if (!a->value.same_shape(b->value)) throw DimensionError("add: shape mismatch");
        Node* n = fresh();
        n->value = a->value;
        for (std::size_t i = 0; i < n->value.v.size(); ++i) n->value.v[i] += b->value.v[i];
        n->parents = {a, b};
        n->needs_grad = a->needs_grad || b->needs_grad;
        if (n->needs_grad) {
            n->backprop = [](Node& self) {
                for (Node* p : self.parents)
                    if (p->needs_grad)
                        for (std::size_t i = 0; i < self.grad.v.size(); ++i) p->grad.v[i] += self.grad.v[i];
            };
        }
        return n;
    }

    Node* sub(Node* a, Node* b) {
        if (!a->value.same_shape(b->value)) throw DimensionError("sub: shape mismatch");
        Node* n = fresh();
        n->value = a->value;
        for (std::size_t i = 0; i < n->value.v.size(); ++i) n->value.v[i] -= b->value.v[i];
        n->parents = {a, b};
        n->needs_grad = a->needs_grad || b->needs_grad;
        if (n->needs_grad) {
            n->backprop = [](Node& self) {
                Node* a = self.parents[0];
                Node* b = self.parents[1];
                for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
                    if (a->needs_grad) a->grad.v[i] += self.grad.v[i];
                    if (b->needs_grad) b->grad.v[i] -= self.grad.v[i];
                }
            };
        }
        return n;
    }

    Node* relu(Node* a) {
        Node* n = fresh();
        n->value = a->value;
        for (double& x : n->value.v) x = x < 0.0 ? 0.0 : x;
        n->parents = {a};
        n->needs_grad = a->needs_grad;
        if (n->needs_grad) {
            n->backprop = [](Node& self) {
                Node* a = self.parents[0];
                for (std::size_t i = 0; i < self.grad.v.size(); ++i)
                    if (self.value.v[i] > 0.0) a->grad.v[i] += self.grad.v[i];
            };
        }
        return n;
    }

    Node* square(Node* a) {
        Node* n = fresh();
        n->value = a->value;
        for (double& x : n->value.v) x *= x;
        n->parents = {a};
        n->needs_grad = a->needs_grad;
        if (n->needs_grad) {
            n->backprop = [](Node& self) {
                Node* a = self.parents[0];
                for (std::size_t i = 0; i < self.grad.v.size(); ++i)
                    a->grad.v[i] += 2.0 * a->value.v[i] * self.grad.v[i];
            };
        }
        return n;
    }

    Node* scale(Node* a, double k) {
        Node* n = fresh();
        n->value = a->value;
        for (double& x : n->value.v) x *= k;
        n->parents = {a};
        n->needs_grad = a->needs_grad;
        if (n->needs_grad) {
            n->backprop = [k](Node& self) {
                Node* a = self.parents[0];
                for (std::size_t i = 0; i < self.grad.v.size(); ++i) a->grad.v[i] += k * self.grad.v[i];
            };
        }
        return n;
    }

    Node* add_scalar(Node* a, double k) {
        Node* n = fresh();
        n->value = a->value;
        for (double& x : n->value.v) x += k;
        n->parents = {a};
        n->needs_grad = a->needs_grad;
        if (n->needs_grad) {
            n->backprop = [](Node& self) {
                Node* a = self.parents[0];
                for (std::size_t i = 0; i < self.grad.v.size(); ++i) a->grad.v[i] += self.grad.v[i];
            };
        }
        return n;
    }

    // (C,H,W) -> (C) spatial mean
    Node* global_avg_pool(Node* x) {
        if (x->value.shape.size() != 3) throw DimensionError("global_avg_pool: expects (C,H,W)");
        const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
        Node* n = fresh();
        n->value = Tensor({c});
        const double inv = 1.0 / (static_cast<double>(h) * w);
        for (int i = 0; i < c; ++i) {
            double acc = 0.0;
            const double* p = x->value.v.data() + static_cast<std::size_t>(i) * h * w;
            for (int j = 0; j < h * w; ++j) acc += p[j];
            n->value.v[static_cast<std::size_t>(i)] = acc * inv;
        }
        n->parents = {x};
        n->needs_grad = x->needs_grad;
        if (n->needs_grad) {
            n->backprop = [c, h, w, inv](Node& self) {
                Node* x = self.parents[0];
                for (int i = 0; i < c; ++i) {
                    const double g = self.grad.v[static_cast<std::size_t>(i)] * inv;
                    double* p = x->grad.v.data() + static_cast<std::size_t>(i) * h * w;
                    for (int j = 0; j < h * w; ++j) p[j] += g;
                }
            };
        }
        return n;
    }

    // y = W x + b; x (C), W (D,C), b (D)
    Node* dense(Node* x, Node* w, Node* b) {
        if (x->value.shape.size() != 1 || w->value.shape.size() != 2)
            throw DimensionError("dense: expects vector input and (D,C) weights");
        const int c = x->value.dim(0), d = w->value.dim(0);
        if (w->value.dim(1) != c || b->value.size() != static_cast<std::size_t>(d))
            throw DimensionError("dense: shape mismatch");
        Node* n = fresh();
        n->value = Tensor({d});
        for (int i = 0; i < d; ++i) {
            double acc = b->value.v[static_cast<std::size_t>(i)];
            const double* row = w->value.v.data() + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) acc += row[j] * x->value.v[static_cast<std::size_t>(j)];
            n->value.v[static_cast<std::size_t>(i)] = acc;
        }
        n->parents = {x, w, b};
        n->needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
        if (n->needs_grad) {
            n->backprop = [c, d](Node& self) {
                Node* x = self.parents[0];
                Node* w = self.parents[1];
                Node* b = self.parents[2];
                for (int i = 0; i < d; ++i) {
                    const double g = self.grad.v[static_cast<std::size_t>(i)];
                    if (g == 0.0) continue;
                    if (b->needs_grad) b->grad.v[static_cast<std::size_t>(i)] += g;
                    const double* wrow = w->value.v.data() + static_cast<std::size_t>(i) * c;
                    double* gwrow = w->needs_grad ? w->grad.v.data() + static_cast<std::size_t>(i) * c : nullptr;
                    for (int j = 0; j < c; ++j) {
                        if (gwrow) gwrow[j] += g * x->value.v[static_cast<std::size_t>(j)];
                        if (x->needs_grad) x->grad.v[static_cast<std::size_t>(j)] += g * wrow[j];
                    }
                }
            };
        }
        return n;
    }

    Node* sum(Node* a) {
        Node* n = fresh();
        n->value = Tensor({1});
        n->value.v[0] = std::accumulate(a->value.v.begin(), a->value.v.end(), 0.0);
        n->parents = {a};
        n->needs_grad = a->needs_grad;
        if (n->needs_grad) {
            n->backprop = [](Node& self) {
                Node* a = self.parents[0];
                const double g = self.grad.v[0];
                for (double& x : a->grad.v) x += g;
            };
        }
        return n;
    }

    // squared Euclidean distance between two equal-length vectors -> scalar
    Node* sqdist(Node* a, Node* b) {
        if (!a->value.same_shape(b->value)) throw DimensionError("sqdist: length mismatch");
        Node* n = fresh();
        n->value = Tensor({1});
        double acc = 0.0;
        for (std::size_t i = 0; i < a->value.v.size(); ++i) {
            const double d = a->value.v[i] - b->value.v[i];
            acc += d * d;
        }
        n->value.v[0] = acc;
        n->parents = {a, b};
        n->needs_grad = a->needs_grad || b->needs_grad;
        if (n->needs_grad) {
            n->backprop = [](Node& self) {
                Node* a = self.parents[0];
                Node* b = self.parents[1];
                const double g = self.grad.v[0];
                for (std::size_t i = 0; i < a->value.v.size(); ++i) {
                    const double d = 2.0 * (a->value.v[i] - b->value.v[i]) * g;
                    if (a->needs_grad) a->grad.v[i] += d;
                    if (b->needs_grad) b->grad.v[i] -= d;
                }
            };
        }
        return n;
    }

    // Euclidean distance (subgradient 0 at coincident points)
    Node* l2dist(Node* a, Node* b) {
        Node* sq = sqdist(a, b);
        Node* n = fresh();
        n->value = Tensor({1});
        n->value.v[0] = std::sqrt(sq->value.v[0]);
        n->parents = {sq};
        n->needs_grad = sq->needs_grad;
        if (n->needs_grad) {
            n->backprop = [](Node& self) {
                Node* sq = self.parents[0];
                const double d = self.value.v[0];
                if (d > 0.0) sq->grad.v[0] += self.grad.v[0] * 0.5 / d;
            };
        }
        return n;
    }

    Node* mean(const std::vector<Node*>& scalars) {
        if (scalars.empty()) throw ParameterError("mean: no inputs");
        Node* n = fresh();
        n->value = Tensor({1});
        double acc = 0.0;
        bool any = false;
        for (Node* s : scalars) {
            acc += s->value.v[0];
            any = any || s->needs_grad;
        }
        n->value.v[0] = acc / static_cast<double>(scalars.size());
        n->parents = scalars;
        n->needs_grad = any;
        if (any) {
            const double inv = 1.0 / static_cast<double>(scalars.size());
            n->backprop = [inv](Node& self) {
                for (Node* p : self.parents)
                    if (p->needs_grad) p->grad.v[0] += self.grad.v[0] * inv;
            };
        }
        return n;
    }

    // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse. Requires a
    // recorded forward pass on this tape.
    void backward(Node* loss) {
        if (nodes_.empty()) throw UsageError("backward: no forward pass recorded");
        if (loss->value.size() != 1) throw DimensionError("backward: loss must be scalar");
        bool found = false;
        for (Node& n : nodes_)
            if (&n == loss) found = true;
        if (!found) throw UsageError("backward: loss node not on this tape");
        for (Node& n : nodes_)
            if (n.needs_grad) n.grad = Tensor(n.value.shape);
        loss->grad.v[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if (it->needs_grad && it->backprop) it->backprop(*it);
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    Node* fresh() {
        nodes_.emplace_back();
        return &nodes_.back();
    }

    // patch matrix: row (i*kh+ky)*kw+kx, column oy*ow+ox; padding reads as 0
    static void detail_im2col(const double* x, int ic, int ih, int iw, int kh, int kw, int stride,
                              int pad, int oh, int ow, std::vector<double>& cols) {
        const std::size_t pdim = static_cast<std::size_t>(oh) * ow;
        cols.assign(static_cast<std::size_t>(ic) * kh * kw * pdim, 0.0);
        for (int i = 0; i < ic; ++i) {
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    double* dst =
                        cols.data() + ((static_cast<std::size_t>(i) * kh + ky) * kw + kx) * pdim;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= ih) continue;
                        const double* src = x + (static_cast<std::size_t>(i) * ih + iy) * iw;
                        double* drow = dst + static_cast<std::size_t>(oy) * ow;
                        const int x_off = kx - pad;
                        int ox0 = 0;
                        while (ox0 * stride + x_off < 0) ++ox0;
                        int ox1 = ow;
                        while (ox1 > ox0 && (ox1 - 1) * stride + x_off >= iw) --ox1;
                        if (stride == 1) {
                            for (int ox = ox0; ox < ox1; ++ox) drow[ox] = src[ox + x_off];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox) drow[ox] = src[ox * stride + x_off];
                        }
                    }
                }
            }
        }
    }

    // scatter-add the patch-matrix gradient back onto the input gradient
    static void detail_col2im(const double* cols, int ic, int ih, int iw, int kh, int kw, int stride,
                              int pad, int oh, int ow, double* gx) {
        const std::size_t pdim = static_cast<std::size_t>(oh) * ow;
        for (int i = 0; i < ic; ++i) {
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double* src =
                        cols + ((static_cast<std::size_t>(i) * kh + ky) * kw + kx) * pdim;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= ih) continue;
                        double* dst = gx + (static_cast<std::size_t>(i) * ih + iy) * iw;
                        const double* srow = src + static_cast<std::size_t>(oy) * ow;
                        const int x_off = kx - pad;
                        int ox0 = 0;
                        while (ox0 * stride + x_off < 0) ++ox0;
                        int ox1 = ow;
                        while (ox1 > ox0 && (ox1 - 1) * stride + x_off >= iw) --ox1;
                        for (int ox = ox0; ox < ox1; ++ox) dst[ox * stride + x_off] += srow[ox];
                    }
                }
            }
        }
    }

    std::deque<Node> nodes_;
};

// Adam with bias correction; a zero learning rate leaves parameters intact.
struct Adam {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;

    void step(const std::vector<Param*>& params) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (Param* p : params) {
            if (p->adam_m.size() != p->value.size()) {
                p->adam_m.assign(p->value.size(), 0.0);
                p->adam_v.assign(p->value.size(), 0.0);
            }
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double g = p->grad.v[i];
                p->adam_m[i] = beta1 * p->adam_m[i] + (1.0 - beta1) * g;
                p->adam_v[i] = beta2 * p->adam_v[i] + (1.0 - beta2) * g * g;
                const double mhat = p->adam_m[i] / c1;
                const double vhat = p->adam_v[i] / c2;
                p->value.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

} // namespace wid
