#include "hada/tape.hpp"

#include <algorithm>
#include <cmath>

namespace hada {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
}

}  // namespace

NodeId Tape::push(Tensor value, std::function<void()> back) {
    Tensor grad = Tensor::zeros(value.shape);
    nodes_.push_back(Node{std::move(value), std::move(grad), std::move(back)});
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::constant(Tensor t) { return push(std::move(t)); }
NodeId Tape::param(Tensor t) { return push(std::move(t)); }

NodeId Tape::add(NodeId a, NodeId b) {
    check_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += value(b).data[i];
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, b, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) {
            grad_mut(a).data[i] += g.data[i];
            grad_mut(b).data[i] += g.data[i];
        }
    };
    return o;
}

NodeId Tape::add_rowvec(NodeId m, NodeId v) {
    const Tensor& M = value(m);
    const Tensor& V = value(v);
    if (M.rank() != 2 || V.rank() != 1 || V.shape[0] != M.cols()) {
        throw ShapeError("add_rowvec: incompatible shapes " + shape_str(M.shape) + " + " +
                         shape_str(V.shape));
    }
    std::size_t r = M.rows(), c = M.cols();
    Tensor out = M;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += V.data[j];
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, m, v, o, r, c] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                grad_mut(m).data[i * c + j] += g.data[i * c + j];
                grad_mut(v).data[j] += g.data[i * c + j];
            }
    };
    return o;
}

NodeId Tape::sub(NodeId a, NodeId b) {
    check_same_shape(value(a), value(b), "sub");
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= value(b).data[i];
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, b, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) {
            grad_mut(a).data[i] += g.data[i];
            grad_mut(b).data[i] -= g.data[i];
        }
    };
    return o;
}

NodeId Tape::mul(NodeId a, NodeId b) {
    check_same_shape(value(a), value(b), "mul");
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= value(b).data[i];
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, b, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) {
            grad_mut(a).data[i] += g.data[i] * value(b).data[i];
            grad_mut(b).data[i] += g.data[i] * value(a).data[i];
        }
    };
    return o;
}

NodeId Tape::scale(NodeId a, double c) {
    Tensor out = value(a);
    for (double& v : out.data) v *= c;
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, c, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) grad_mut(a).data[i] += g.data[i] * c;
    };
    return o;
}

NodeId Tape::add_const(NodeId a, double c) {
    Tensor out = value(a);
    for (double& v : out.data) v += c;
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) grad_mut(a).data[i] += g.data[i];
    };
    return o;
}

NodeId Tape::leaky_relu(NodeId a, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) {
        throw ConfigError("leaky_relu: slope must be in (0,1), got " + std::to_string(slope));
    }
    Tensor out = value(a);
    for (double& v : out.data) v = v >= 0.0 ? v : slope * v;
    NodeId o = push(std::move(out));
    // subgradient at 0 taken as 1
    nodes_[o].back = [this, a, slope, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double f = value(a).data[i] >= 0.0 ? 1.0 : slope;
            grad_mut(a).data[i] += g.data[i] * f;
        }
    };
    return o;
}

NodeId Tape::elu(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data) v = v > 0.0 ? v : std::expm1(v);
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double x = value(a).data[i];
            double f = x > 0.0 ? 1.0 : std::exp(x);
            grad_mut(a).data[i] += g.data[i] * f;
        }
    };
    return o;
}

NodeId Tape::sigmoid(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double y = value(o).data[i];
            grad_mut(a).data[i] += g.data[i] * y * (1.0 - y);
        }
    };
    return o;
}

NodeId Tape::log(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::log(v);
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) {
            grad_mut(a).data[i] += g.data[i] / value(a).data[i];
        }
    };
    return o;
}

NodeId Tape::abs(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::fabs(v);
    NodeId o = push(std::move(out));
    // sign(0) taken as 0
    nodes_[o].back = [this, a, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double x = value(a).data[i];
            double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
            grad_mut(a).data[i] += g.data[i] * s;
        }
    };
    return o;
}

NodeId Tape::clamp(NodeId a, double lo, double hi) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::min(std::max(v, lo), hi);
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, lo, hi, o] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double x = value(a).data[i];
            if (x > lo && x < hi) grad_mut(a).data[i] += g.data[i];
        }
    };
    return o;
}

NodeId Tape::mul_scalar(NodeId t, NodeId s) {
    if (value(s).size() != 1) {
        throw ShapeError("mul_scalar: scalar operand has shape " + shape_str(value(s).shape));
    }
    double sv = value(s).data[0];
    Tensor out = value(t);
    for (double& v : out.data) v *= sv;
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, t, s, o] {
        const Tensor& g = grad(o);
        double sv2 = value(s).data[0];
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            grad_mut(t).data[i] += g.data[i] * sv2;
            acc += g.data[i] * value(t).data[i];
        }
        grad_mut(s).data[0] += acc;
    };
    return o;
}

NodeId Tape::div_scalar(NodeId t, NodeId s) {
    if (value(s).size() != 1) {
        throw ShapeError("div_scalar: scalar operand has shape " + shape_str(value(s).shape));
    }
    double sv = value(s).data[0];
    Tensor out = value(t);
    for (double& v : out.data) v /= sv;
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, t, s, o] {
        const Tensor& g = grad(o);
        double sv2 = value(s).data[0];
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            grad_mut(t).data[i] += g.data[i] / sv2;
            acc += g.data[i] * value(t).data[i];
        }
        grad_mut(s).data[0] -= acc / (sv2 * sv2);
    };
    return o;
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape) + " x " +
                         shape_str(B.shape));
    }
    std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double av = A.data[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += av * B.data[p * n + j];
        }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, b, o, m, k, n] {
        const Tensor& G = grad(o);
        const Tensor& A2 = value(a);
        const Tensor& B2 = value(b);
        // dA += G * B^T ; dB += A^T * G
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double gv = G.data[i * n + j];
                if (gv == 0.0) continue;
                for (std::size_t p = 0; p < k; ++p) {
                    grad_mut(a).data[i * k + p] += gv * B2.data[p * n + j];
                    grad_mut(b).data[p * n + j] += gv * A2.data[i * k + p];
                }
            }
    };
    return o;
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) {
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(A.shape) + " x " +
                         shape_str(B.shape) + "^T");
    }
    std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += A.data[i * k + p] * B.data[j * k + p];
            out.data[i * n + j] = acc;
        }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, b, o, m, k, n] {
        const Tensor& G = grad(o);
        const Tensor& A2 = value(a);
        const Tensor& B2 = value(b);
        // out = A * B^T ; dA += G * B ; dB += G^T * A
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double gv = G.data[i * n + j];
                if (gv == 0.0) continue;
                for (std::size_t p = 0; p < k; ++p) {
                    grad_mut(a).data[i * k + p] += gv * B2.data[j * k + p];
                    grad_mut(b).data[j * k + p] += gv * A2.data[i * k + p];
                }
            }
    };
    return o;
}

NodeId Tape::matvec(NodeId m, NodeId v) {
    const Tensor& M = value(m);
    const Tensor& V = value(v);
    if (M.rank() != 2 || V.rank() != 1 || M.cols() != V.shape[0]) {
        throw ShapeError("matvec: incompatible shapes " + shape_str(M.shape) + " x " +
                         shape_str(V.shape));
    }
    std::size_t r = M.rows(), c = M.cols();
    Tensor out = Tensor::zeros({r});
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += M.data[i * c + j] * V.data[j];
        out.data[i] = acc;
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, m, v, o, r, c] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < r; ++i) {
            double gv = g.data[i];
            if (gv == 0.0) continue;
            for (std::size_t j = 0; j < c; ++j) {
                grad_mut(m).data[i * c + j] += gv * value(v).data[j];
                grad_mut(v).data[j] += gv * value(m).data[i * c + j];
            }
        }
    };
    return o;
}

NodeId Tape::transpose(NodeId a) {
    const Tensor& A = value(a);
    if (A.rank() != 2) throw ShapeError("transpose: rank-2 tensor required");
    std::size_t r = A.rows(), c = A.cols();
    Tensor out = Tensor::zeros({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = A.data[i * c + j];
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o, r, c] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) grad_mut(a).data[i * c + j] += g.data[j * r + i];
    };
    return o;
}

NodeId Tape::dot(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 1 || B.rank() != 1 || A.size() != B.size()) {
        throw ShapeError("dot: incompatible shapes " + shape_str(A.shape) + " . " +
                         shape_str(B.shape));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) acc += A.data[i] * B.data[i];
    NodeId o = push(Tensor::scalar(acc));
    nodes_[o].back = [this, a, b, o] {
        double g = grad(o).data[0];
        for (std::size_t i = 0; i < value(a).size(); ++i) {
            grad_mut(a).data[i] += g * value(b).data[i];
            grad_mut(b).data[i] += g * value(a).data[i];
        }
    };
    return o;
}

NodeId Tape::concat_rows(const std::vector<NodeId>& mats) {
    if (mats.empty()) throw ShapeError("concat_rows: empty input");
    std::size_t c = value(mats[0]).cols();
    std::size_t total = 0;
    for (NodeId m : mats) {
        if (value(m).cols() != c) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(value(m).shape));
        }
        total += value(m).rows();
    }
    Tensor out = Tensor::zeros({total, c});
    std::size_t off = 0;
    for (NodeId m : mats) {
        const Tensor& M = value(m);
        std::copy(M.data.begin(), M.data.end(), out.data.begin() + static_cast<long>(off));
        off += M.size();
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, mats, o] {
        const Tensor& g = grad(o);
        std::size_t off2 = 0;
        for (NodeId m : mats) {
            Tensor& gm = grad_mut(m);
            for (std::size_t i = 0; i < gm.size(); ++i) gm.data[i] += g.data[off2 + i];
            off2 += gm.size();
        }
    };
    return o;
}

NodeId Tape::concat_cols(const std::vector<NodeId>& mats) {
    if (mats.empty()) throw ShapeError("concat_cols: empty input");
    std::size_t r = value(mats[0]).rows();
    std::size_t total = 0;
    for (NodeId m : mats) {
        if (value(m).rows() != r) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(value(m).shape));
        }
        total += value(m).cols();
    }
    Tensor out = Tensor::zeros({r, total});
    std::size_t coff = 0;
    for (NodeId m : mats) {
        const Tensor& M = value(m);
        std::size_t mc = M.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < mc; ++j) out.data[i * total + coff + j] = M.data[i * mc + j];
        coff += mc;
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, mats, o, r, total] {
        const Tensor& g = grad(o);
        std::size_t coff2 = 0;
        for (NodeId m : mats) {
            std::size_t mc = value(m).cols();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < mc; ++j)
                    grad_mut(m).data[i * mc + j] += g.data[i * total + coff2 + j];
            coff2 += mc;
        }
    };
    return o;
}

NodeId Tape::gather_rows(NodeId m, std::vector<std::size_t> idx) {
    const Tensor& M = value(m);
    if (M.rank() != 2) throw ShapeError("gather_rows: rank-2 tensor required");
    std::size_t c = M.cols();
    Tensor out = Tensor::zeros({idx.size(), c});
    for (std::size_t e = 0; e < idx.size(); ++e) {
        if (idx[e] >= M.rows()) throw ShapeError("gather_rows: index out of range");
        std::copy_n(M.data.begin() + static_cast<long>(idx[e] * c), c,
                    out.data.begin() + static_cast<long>(e * c));
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, m, idx = std::move(idx), o, c] {
        const Tensor& g = grad(o);
        for (std::size_t e = 0; e < idx.size(); ++e)
            for (std::size_t j = 0; j < c; ++j)
                grad_mut(m).data[idx[e] * c + j] += g.data[e * c + j];
    };
    return o;
}

NodeId Tape::scale_rows(NodeId m, NodeId w) {
    const Tensor& M = value(m);
    const Tensor& W = value(w);
    if (M.rank() != 2 || W.rank() != 1 || W.shape[0] != M.rows()) {
        throw ShapeError("scale_rows: incompatible shapes " + shape_str(M.shape) + " vs " +
                         shape_str(W.shape));
    }
    std::size_t r = M.rows(), c = M.cols();
    Tensor out = M;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] *= W.data[i];
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, m, w, o, r, c] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < r; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                grad_mut(m).data[i * c + j] += g.data[i * c + j] * value(w).data[i];
                acc += g.data[i * c + j] * value(m).data[i * c + j];
            }
            grad_mut(w).data[i] += acc;
        }
    };
    return o;
}

NodeId Tape::segment_sum(NodeId m, std::vector<std::size_t> seg, std::size_t n_seg) {
    const Tensor& M = value(m);
    if (M.rank() != 2 || seg.size() != M.rows()) {
        throw ShapeError("segment_sum: need one segment id per row");
    }
    std::size_t c = M.cols();
    Tensor out = Tensor::zeros({n_seg, c});
    for (std::size_t e = 0; e < seg.size(); ++e) {
        if (seg[e] >= n_seg) throw ShapeError("segment_sum: segment id out of range");
        for (std::size_t j = 0; j < c; ++j) out.data[seg[e] * c + j] += M.data[e * c + j];
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, m, seg = std::move(seg), o, c] {
        const Tensor& g = grad(o);
        for (std::size_t e = 0; e < seg.size(); ++e)
            for (std::size_t j = 0; j < c; ++j)
                grad_mut(m).data[e * c + j] += g.data[seg[e] * c + j];
    };
    return o;
}

NodeId Tape::diag(NodeId m) {
    const Tensor& M = value(m);
    if (M.rank() != 2 || M.rows() != M.cols()) {
        throw ShapeError("diag: square matrix required, got " + shape_str(M.shape));
    }
    std::size_t n = M.rows();
    Tensor out = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) out.data[i] = M.data[i * n + i];
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, m, o, n] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < n; ++i) grad_mut(m).data[i * n + i] += g.data[i];
    };
    return o;
}

NodeId Tape::sum(NodeId a) {
    double acc = 0.0;
    for (double v : value(a).data) acc += v;
    NodeId o = push(Tensor::scalar(acc));
    nodes_[o].back = [this, a, o] {
        double g = grad(o).data[0];
        for (double& gv : grad_mut(a).data) gv += g;
    };
    return o;
}

NodeId Tape::mean(NodeId a) { return scale(sum(a), 1.0 / static_cast<double>(value(a).size())); }

NodeId Tape::row_logsumexp(NodeId m) {
    const Tensor& M = value(m);
    if (M.rank() != 2) throw ShapeError("row_logsumexp: rank-2 tensor required");
    std::size_t r = M.rows(), c = M.cols();
    Tensor out = Tensor::zeros({r});
    for (std::size_t i = 0; i < r; ++i) {
        double mx = M.data[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, M.data[i * c + j]);
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += std::exp(M.data[i * c + j] - mx);
        out.data[i] = mx + std::log(acc);
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, m, o, r, c] {
        const Tensor& g = grad(o);
        for (std::size_t i = 0; i < r; ++i) {
            double lse = value(o).data[i];
            for (std::size_t j = 0; j < c; ++j) {
                double p = std::exp(value(m).data[i * c + j] - lse);
                grad_mut(m).data[i * c + j] += g.data[i] * p;
            }
        }
    };
    return o;
}

NodeId Tape::segment_softmax(NodeId scores, std::vector<std::size_t> seg, std::size_t n_seg) {
    const Tensor& S = value(scores);
    if (S.rank() != 1 || seg.size() != S.size()) {
        throw ShapeError("segment_softmax: need one segment id per score");
    }
    std::vector<double> seg_max(n_seg, -std::numeric_limits<double>::infinity());
    std::vector<std::size_t> seg_count(n_seg, 0);
    for (std::size_t e = 0; e < seg.size(); ++e) {
        if (seg[e] >= n_seg) throw ShapeError("segment_softmax: segment id out of range");
        seg_max[seg[e]] = std::max(seg_max[seg[e]], S.data[e]);
        seg_count[seg[e]]++;
    }
    for (std::size_t s = 0; s < n_seg; ++s) {
        if (seg_count[s] == 0) {
            throw ShapeError("segment_softmax: segment " + std::to_string(s) + " is empty");
        }
    }
    std::vector<double> seg_sum(n_seg, 0.0);
    Tensor out = Tensor::zeros({S.size()});
    for (std::size_t e = 0; e < seg.size(); ++e) {
        out.data[e] = std::exp(S.data[e] - seg_max[seg[e]]);
        seg_sum[seg[e]] += out.data[e];
    }
    for (std::size_t e = 0; e < seg.size(); ++e) out.data[e] /= seg_sum[seg[e]];
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, scores, seg = std::move(seg), n_seg, o] {
        const Tensor& g = grad(o);
        const Tensor& y = value(o);
        // d/ds_e = y_e * (g_e - sum_{e' in seg} g_e' y_e')
        std::vector<double> inner(n_seg, 0.0);
        for (std::size_t e = 0; e < seg.size(); ++e) inner[seg[e]] += g.data[e] * y.data[e];
        for (std::size_t e = 0; e < seg.size(); ++e)
            grad_mut(scores).data[e] += y.data[e] * (g.data[e] - inner[seg[e]]);
    };
    return o;
}

NodeId Tape::l2_normalize(NodeId a) {
    const Tensor& A = value(a);
    std::size_t r, c;
    if (A.rank() == 1) {
        r = 1;
        c = A.shape[0];
    } else if (A.rank() == 2) {
        r = A.rows();
        c = A.cols();
    } else {
        throw ShapeError("l2_normalize: rank-1 or rank-2 tensor required");
    }
    Tensor out = A;
    std::vector<double> norms(r);
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += A.data[i * c + j] * A.data[i * c + j];
        double nrm = std::sqrt(acc);
        if (nrm == 0.0) throw NumericError("l2_normalize: zero vector at row " + std::to_string(i));
        norms[i] = nrm;
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] /= nrm;
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o, r, c, norms = std::move(norms)] {
        const Tensor& g = grad(o);
        const Tensor& y = value(o);
        // dx = (g - y <g,y>) / ||x||, per row
        for (std::size_t i = 0; i < r; ++i) {
            double gy = 0.0;
            for (std::size_t j = 0; j < c; ++j) gy += g.data[i * c + j] * y.data[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                grad_mut(a).data[i * c + j] += (g.data[i * c + j] - y.data[i * c + j] * gy) / norms[i];
        }
    };
    return o;
}

void Tape::backward(NodeId root) {
    if (value(root).size() != 1) {
        throw ShapeError("backward: root must be scalar, got " + shape_str(value(root).shape));
    }
    grad_mut(root).data[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i].back) nodes_[i].back();
    }
}

}  // namespace hada
