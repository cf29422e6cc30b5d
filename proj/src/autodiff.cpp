#include "ict/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "ict/errors.hpp"

namespace ict::ad {

namespace {

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ContractError(std::string(op) + ": shape mismatch " + a.shape_str() +
                        " vs " + b.shape_str());
}

void require_2d(const char* op, const Tensor& t) {
    if (t.shape.size() != 2)
        throw ContractError(std::string(op) + ": expected rank-2 tensor, got " +
                            t.shape_str());
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

void Node::accumulate(const Tensor& g) {
    if (!g.same_shape(value)) shape_fail("grad accumulate", value, g);
    ensure_grad();
    for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
}

Tensor& Node::ensure_grad() {
    if (!grad_alloc) {
        grad = Tensor::zeros(value.shape);
        grad_alloc = true;
    }
    return grad;
}

Var Tape::alloc(Tensor value) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.tape = this;
    n.id = nodes_.size() - 1;
    return &n;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Var n = alloc(std::move(value));
    n->requires_grad = requires_grad;
    return n;
}

Var Tape::param(const std::string& name, const Tensor& value) {
    Var n = alloc(value);
    n->requires_grad = true;
    n->param_name = name;
    param_nodes_.emplace_back(name, n);
    return n;
}

std::vector<Var> Tape::params(const ParamStore& store) {
    std::vector<Var> out;
    out.reserve(store.entries.size());
    for (const auto& [name, t] : store.entries) out.push_back(param(name, t));
    return out;
}

void Tape::backward(Var loss) {
    if (backward_done_)
        throw ContractError("Tape::backward called twice without reset");
    if (!loss || loss->tape != this)
        throw ContractError("Tape::backward: loss not on this tape");
    if (loss->value.numel() != 1)
        throw ContractError("Tape::backward: loss must be scalar, got shape " +
                            loss->value.shape_str());
    backward_done_ = true;
    loss->ensure_grad().data[0] = 1.0;
    for (size_t i = loss->id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.grad_alloc && n.backprop) n.backprop(n);
    }
}

GradStore Tape::collect_grads(const ParamStore& store) const {
    GradStore out;
    out.reserve(store.entries.size());
    std::unordered_map<std::string, size_t> slot;
    for (const auto& [name, t] : store.entries) {
        slot[name] = out.size();
        out.emplace_back(name, Tensor::zeros(t.shape));
    }
    for (const auto& [name, node] : param_nodes_) {
        auto it = slot.find(name);
        if (it == slot.end() || !node->grad_alloc) continue;
        auto& acc = out[it->second].second.data;
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += node->grad.data[i];
    }
    return out;
}

void Tape::reset() {
    nodes_.clear();
    param_nodes_.clear();
    backward_done_ = false;
}

// ---- elementwise -----------------------------------------------------

Var add(Var a, Var b) {
    if (!a->value.same_shape(b->value)) shape_fail("add", a->value, b->value);
    Tensor out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad || b->requires_grad;
    n->backprop = [a, b](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (b->requires_grad) b->accumulate(self.grad);
    };
    return n;
}

Var sub(Var a, Var b) {
    if (!a->value.same_shape(b->value)) shape_fail("sub", a->value, b->value);
    Tensor out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad || b->requires_grad;
    n->backprop = [a, b](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (b->requires_grad) {
            Tensor g = self.grad;
            for (double& v : g.data) v = -v;
            b->accumulate(g);
        }
    };
    return n;
}

Var mul(Var a, Var b) {
    if (!a->value.same_shape(b->value)) shape_fail("mul", a->value, b->value);
    Tensor out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad || b->requires_grad;
    n->backprop = [a, b](Node& self) {
        if (a->requires_grad) {
            Tensor g = self.grad;
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= b->value.data[i];
            a->accumulate(g);
        }
        if (b->requires_grad) {
            Tensor g = self.grad;
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= a->value.data[i];
            b->accumulate(g);
        }
    };
    return n;
}

Var scale(Var a, double c) {
    Tensor out = a->value;
    for (double& v : out.data) v *= c;
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad;
    n->backprop = [a, c](Node& self) {
        if (!a->requires_grad) return;
        Tensor g = self.grad;
        for (double& v : g.data) v *= c;
        a->accumulate(g);
    };
    return n;
}

Var add_rowvec(Var a, Var bias) {
    require_2d("add_rowvec", a->value);
    if (bias->value.shape.size() != 1 || bias->value.shape[0] != a->value.shape[1])
        shape_fail("add_rowvec", a->value, bias->value);
    int64_t R = a->value.rows(), C = a->value.cols();
    Tensor out = a->value;
    for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) out.at(r, c) += bias->value.data[size_t(c)];
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad || bias->requires_grad;
    n->backprop = [a, bias, R, C](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (bias->requires_grad) {
            Tensor g = Tensor::zeros(bias->value.shape);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) g.data[size_t(c)] += self.grad.at(r, c);
            bias->accumulate(g);
        }
    };
    return n;
}

Var add_const(Var a, const Tensor& c) {
    Var k = a->tape->leaf(c, false);
    return add(a, k);
}

// ---- linear algebra --------------------------------------------------

Var matmul(Var a, Var b) {
    require_2d("matmul", a->value);
    require_2d("matmul", b->value);
    if (a->value.shape[1] != b->value.shape[0]) shape_fail("matmul", a->value, b->value);
    int64_t R = a->value.shape[0], K = a->value.shape[1], C = b->value.shape[1];
    Tensor out = Tensor::zeros({R, C});
    const double* A = a->value.data.data();
    const double* B = b->value.data.data();
    double* O = out.data.data();
    for (int64_t r = 0; r < R; ++r)
        for (int64_t k = 0; k < K; ++k) {
            double av = A[r * K + k];
            if (av == 0.0) continue;
            const double* brow = B + k * C;
            double* orow = O + r * C;
            for (int64_t c = 0; c < C; ++c) orow[c] += av * brow[c];
        }
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad || b->requires_grad;
    n->backprop = [a, b, R, K, C](Node& self) {
        const double* G = self.grad.data.data();
        if (a->requires_grad) {
            // dA = G * B^T
            Tensor ga = Tensor::zeros({R, K});
            const double* B = b->value.data.data();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) {
                    double gv = G[r * C + c];
                    if (gv == 0.0) continue;
                    for (int64_t k = 0; k < K; ++k)
                        ga.data[size_t(r * K + k)] += gv * B[k * C + c];
                }
            a->accumulate(ga);
        }
        if (b->requires_grad) {
            // dB = A^T * G
            Tensor gb = Tensor::zeros({K, C});
            const double* A = a->value.data.data();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t k = 0; k < K; ++k) {
                    double av = A[r * K + k];
                    if (av == 0.0) continue;
                    const double* grow = G + r * C;
                    double* brow = gb.data.data() + k * C;
                    for (int64_t c = 0; c < C; ++c) brow[c] += av * grow[c];
                }
            b->accumulate(gb);
        }
    };
    return n;
}

Var transpose(Var a) {
    require_2d("transpose", a->value);
    int64_t R = a->value.shape[0], C = a->value.shape[1];
    Tensor out = Tensor::zeros({C, R});
    for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) out.at(c, r) = a->value.at(r, c);
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad;
    n->backprop = [a, R, C](Node& self) {
        if (!a->requires_grad) return;
        Tensor g = Tensor::zeros({R, C});
        for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < C; ++c) g.at(r, c) = self.grad.at(c, r);
        a->accumulate(g);
    };
    return n;
}

// ---- nonlinearities --------------------------------------------------

Var tanh_op(Var a) {
    Tensor out = a->value;
    for (double& v : out.data) v = std::tanh(v);
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad;
    n->backprop = [a](Node& self) {
        if (!a->requires_grad) return;
        Tensor g = self.grad;
        for (size_t i = 0; i < g.data.size(); ++i) {
            double t = self.value.data[i];
            g.data[i] *= 1.0 - t * t;
        }
        a->accumulate(g);
    };
    return n;
}

Var gelu(Var a) {
    // tanh approximation of GELU
    Tensor out = a->value;
    for (double& v : out.data) {
        double u = kGeluC * (v + kGeluA * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad;
    n->backprop = [a](Node& self) {
        if (!a->requires_grad) return;
        Tensor g = self.grad;
        for (size_t i = 0; i < g.data.size(); ++i) {
            double x = a->value.data[i];
            double u = kGeluC * (x + kGeluA * x * x * x);
            double t = std::tanh(u);
            double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
            double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
            g.data[i] *= d;
        }
        a->accumulate(g);
    };
    return n;
}

Var softmax_rows(Var a) {
    require_2d("softmax_rows", a->value);
    int64_t R = a->value.rows(), C = a->value.cols();
    Tensor out = Tensor::zeros({R, C});
    for (int64_t r = 0; r < R; ++r) {
        double m = a->value.at(r, 0);
        for (int64_t c = 1; c < C; ++c) m = std::max(m, a->value.at(r, c));
        double z = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            double e = std::exp(a->value.at(r, c) - m);
            out.at(r, c) = e;
            z += e;
        }
        for (int64_t c = 0; c < C; ++c) out.at(r, c) /= z;
    }
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad;
    n->backprop = [a, R, C](Node& self) {
        if (!a->requires_grad) return;
        Tensor g = Tensor::zeros({R, C});
        for (int64_t r = 0; r < R; ++r) {
            double dot = 0.0;
            for (int64_t c = 0; c < C; ++c) dot += self.grad.at(r, c) * self.value.at(r, c);
            for (int64_t c = 0; c < C; ++c)
                g.at(r, c) = self.value.at(r, c) * (self.grad.at(r, c) - dot);
        }
        a->accumulate(g);
    };
    return n;
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
    require_2d("layer_norm", a->value);
    int64_t R = a->value.rows(), C = a->value.cols();
    if (gain->value.shape.size() != 1 || gain->value.shape[0] != C)
        shape_fail("layer_norm gain", a->value, gain->value);
    if (bias->value.shape.size() != 1 || bias->value.shape[0] != C)
        shape_fail("layer_norm bias", a->value, bias->value);
    Tensor out = Tensor::zeros({R, C});
    Tensor xhat = Tensor::zeros({R, C});
    std::vector<double> inv_sigma(static_cast<size_t>(R));
    for (int64_t r = 0; r < R; ++r) {
        double mean = 0.0;
        for (int64_t c = 0; c < C; ++c) mean += a->value.at(r, c);
        mean /= double(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            double d = a->value.at(r, c) - mean;
            var += d * d;
        }
        var /= double(C);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[size_t(r)] = is;
        for (int64_t c = 0; c < C; ++c) {
            double xh = (a->value.at(r, c) - mean) * is;
            xhat.at(r, c) = xh;
            out.at(r, c) = gain->value.data[size_t(c)] * xh + bias->value.data[size_t(c)];
        }
    }
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad || gain->requires_grad || bias->requires_grad;
    n->backprop = [a, gain, bias, R, C, xhat = std::move(xhat),
                   inv_sigma = std::move(inv_sigma)](Node& self) {
        if (gain->requires_grad) {
            Tensor gg = Tensor::zeros(gain->value.shape);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c)
                    gg.data[size_t(c)] += self.grad.at(r, c) * xhat.at(r, c);
            gain->accumulate(gg);
        }
        if (bias->requires_grad) {
            Tensor gb = Tensor::zeros(bias->value.shape);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) gb.data[size_t(c)] += self.grad.at(r, c);
            bias->accumulate(gb);
        }
        if (a->requires_grad) {
            Tensor ga = Tensor::zeros({R, C});
            for (int64_t r = 0; r < R; ++r) {
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (int64_t c = 0; c < C; ++c) {
                    double dxh = self.grad.at(r, c) * gain->value.data[size_t(c)];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xhat.at(r, c);
                }
                mean_dxhat /= double(C);
                mean_dxhat_xhat /= double(C);
                for (int64_t c = 0; c < C; ++c) {
                    double dxh = self.grad.at(r, c) * gain->value.data[size_t(c)];
                    ga.at(r, c) = inv_sigma[size_t(r)] *
                                  (dxh - mean_dxhat - xhat.at(r, c) * mean_dxhat_xhat);
                }
            }
            a->accumulate(ga);
        }
    };
    return n;
}

// ---- gather / slice --------------------------------------------------

Var embedding(Var table, const std::vector<int64_t>& ids) {
    require_2d("embedding", table->value);
    int64_t V = table->value.shape[0], D = table->value.shape[1];
    int64_t L = int64_t(ids.size());
    for (int64_t id : ids)
        if (id < 0 || id >= V)
            throw ContractError("embedding: id " + std::to_string(id) +
                                " out of range [0," + std::to_string(V) + ")");
    Tensor out = Tensor::zeros({L, D});
    for (int64_t i = 0; i < L; ++i)
        for (int64_t d = 0; d < D; ++d) out.at(i, d) = table->value.at(ids[size_t(i)], d);
    Var n = table->tape->alloc(std::move(out));
    n->requires_grad = table->requires_grad;
    n->backprop = [table, ids, D](Node& self) {
        if (!table->requires_grad) return;
        Tensor g = Tensor::zeros(table->value.shape);
        for (size_t i = 0; i < ids.size(); ++i)
            for (int64_t d = 0; d < D; ++d)
                g.at(ids[i], d) += self.grad.at(int64_t(i), d);
        table->accumulate(g);
    };
    return n;
}

Var slice_cols(Var a, int64_t start, int64_t len) {
    require_2d("slice_cols", a->value);
    int64_t R = a->value.shape[0], C = a->value.shape[1];
    if (start < 0 || len <= 0 || start + len > C)
        throw ContractError("slice_cols: range [" + std::to_string(start) + "," +
                            std::to_string(start + len) + ") out of " + a->value.shape_str());
    Tensor out = Tensor::zeros({R, len});
    for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < len; ++c) out.at(r, c) = a->value.at(r, start + c);
    Var n = a->tape->alloc(std::move(out));
    n->requires_grad = a->requires_grad;
    n->backprop = [a, start, len, R](Node& self) {
        if (!a->requires_grad) return;
        Tensor g = Tensor::zeros(a->value.shape);
        for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < len; ++c) g.at(r, start + c) = self.grad.at(r, c);
        a->accumulate(g);
    };
    return n;
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty part list");
    int64_t R = parts[0]->value.rows();
    int64_t C = 0;
    bool rg = false;
    for (Var p : parts) {
        require_2d("concat_cols", p->value);
        if (p->value.shape[0] != R) shape_fail("concat_cols", parts[0]->value, p->value);
        C += p->value.shape[1];
        rg = rg || p->requires_grad;
    }
    Tensor out = Tensor::zeros({R, C});
    int64_t off = 0;
    for (Var p : parts) {
        int64_t pc = p->value.shape[1];
        for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < pc; ++c) out.at(r, off + c) = p->value.at(r, c);
        off += pc;
    }
    Var n = parts[0]->tape->alloc(std::move(out));
    n->requires_grad = rg;
    n->backprop = [parts, R](Node& self) {
        int64_t off = 0;
        for (Var p : parts) {
            int64_t pc = p->value.shape[1];
            if (p->requires_grad) {
                Tensor g = Tensor::zeros(p->value.shape);
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t c = 0; c < pc; ++c) g.at(r, c) = self.grad.at(r, off + c);
                p->accumulate(g);
            }
            off += pc;
        }
    };
    return n;
}

// ---- reductions ------------------------------------------------------

Var sum_all(Var a) {
    double s = 0.0;
    for (double v : a->value.data) s += v;
    Var n = a->tape->alloc(Tensor::scalar(s));
    n->requires_grad = a->requires_grad;
    n->backprop = [a](Node& self) {
        if (!a->requires_grad) return;
        a->accumulate(Tensor::full(a->value.shape, self.grad.data[0]));
    };
    return n;
}

Var mean_all(Var a) {
    return scale(sum_all(a), 1.0 / double(a->value.numel()));
}

Var dropout(Var a, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0,1)");
    if (p == 0.0) return a;
    Tensor mask = Tensor::zeros(a->value.shape);
    double keep = 1.0 - p;
    for (double& v : mask.data) v = (rng.real01() < keep) ? 1.0 / keep : 0.0;
    Var m = a->tape->leaf(std::move(mask), false);
    return mul(a, m);
}

std::vector<double> log_softmax_row(const double* row, int64_t n) {
    double m = row[0];
    for (int64_t i = 1; i < n; ++i) m = std::max(m, row[i]);
    double z = 0.0;
    for (int64_t i = 0; i < n; ++i) z += std::exp(row[i] - m);
    double lz = m + std::log(z);
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[size_t(i)] = row[i] - lz;
    return out;
}

Var cross_entropy_sum(Var logits,
                      const std::vector<std::pair<int64_t, int64_t>>& row_labels) {
    require_2d("cross_entropy_sum", logits->value);
    if (row_labels.empty()) throw ContractError("cross_entropy_sum: no targets");
    int64_t R = logits->value.shape[0], V = logits->value.shape[1];
    double loss = 0.0;
    for (auto [r, l] : row_labels) {
        if (r < 0 || r >= R || l < 0 || l >= V)
            throw ContractError("cross_entropy_sum: target (" + std::to_string(r) +
                                "," + std::to_string(l) + ") out of " +
                                logits->value.shape_str());
        auto ls = log_softmax_row(logits->value.data.data() + r * V, V);
        loss -= ls[size_t(l)];
    }
    Var n = logits->tape->alloc(Tensor::scalar(loss));
    n->requires_grad = logits->requires_grad;
    n->backprop = [logits, row_labels, V](Node& self) {
        if (!logits->requires_grad) return;
        double g = self.grad.data[0];
        Tensor gl = Tensor::zeros(logits->value.shape);
        for (auto [r, l] : row_labels) {
            auto ls = log_softmax_row(logits->value.data.data() + r * V, V);
            for (int64_t c = 0; c < V; ++c) gl.at(r, c) += g * std::exp(ls[size_t(c)]);
            gl.at(r, l) -= g;
        }
        logits->accumulate(gl);
    };
    return n;
}

}  // namespace ict::ad
