#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vispflow/errors.hpp"
#include "vispflow/tensor.hpp"

namespace vispflow {

// Named model parameters, addressable by path. Frozen entries are saved and
// loaded like any other but are never touched by an optimizer step.
struct ParamSet {
    struct Entry {
        Tensor value;
        bool trainable{true};
    };
    std::map<std::string, Entry> entries;

    void add(const std::string& path, Tensor value, bool trainable = true) {
        if (entries.count(path)) throw contract_error("duplicate parameter path: " + path);
        entries.emplace(path, Entry{std::move(value), trainable});
    }
    Tensor& at(const std::string& path) {
        auto it = entries.find(path);
        if (it == entries.end()) throw contract_error("unknown parameter path: " + path);
        return it->second.value;
    }
    const Tensor& at(const std::string& path) const {
        auto it = entries.find(path);
        if (it == entries.end()) throw contract_error("unknown parameter path: " + path);
        return it->second.value;
    }
    bool trainable(const std::string& path) const {
        auto it = entries.find(path);
        if (it == entries.end()) throw contract_error("unknown parameter path: " + path);
        return it->second.trainable;
    }
    std::size_t size() const { return entries.size(); }
};

using GradMap = std::map<std::string, Tensor>;

// Handle to a node on a Tape.
struct Var {
    int id{-1};
};

// Recorded reverse-mode tape over a fixed op vocabulary. One tape is one
// forward pass; not shareable across threads.
class Tape {
public:
    const Tensor& val(Var v) const { return nodes_[check(v)].value; }
    const Tensor& grad(Var v) const { return nodes_[check(v)].grad; }

    Var leaf(Tensor value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, {});
    }
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Creates one leaf per parameter and returns the path -> Var map.
    // Frozen parameters become constants so no gradient work is spent on them.
    std::map<std::string, Var> leaves(const ParamSet& params) {
        std::map<std::string, Var> out;
        for (const auto& [path, e] : params.entries) out.emplace(path, leaf(e.value, e.trainable));
        return out;
    }

    // ---------------------------------------------------------------- ops

    Var add(Var a, Var b) {
        check_same_shape(val(a), val(b), "add");
        Tensor out = val(a);
        const Tensor& vb = val(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
        return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Tensor& g) {
            t.accum(a, g);
            t.accum(b, g);
        });
    }

    Var sub(Var a, Var b) {
        check_same_shape(val(a), val(b), "sub");
        Tensor out = val(a);
        const Tensor& vb = val(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
        return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Tensor& g) {
            t.accum(a, g);
            Tensor neg = g;
            for (double& v : neg.data) v = -v;
            t.accum(b, neg);
        });
    }

    Var mul(Var a, Var b) {
        check_same_shape(val(a), val(b), "mul");
        Tensor out = val(a);
        const Tensor& vb = val(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
        return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Tensor& g) {
            Tensor ga = g, gb = g;
            const Tensor& va = t.val(a);
            const Tensor& vb2 = t.val(b);
            for (std::size_t i = 0; i < g.numel(); ++i) {
                ga.data[i] *= vb2.data[i];
                gb.data[i] *= va.data[i];
            }
            t.accum(a, ga);
            t.accum(b, gb);
        });
    }

    Var scale(Var a, double c) {
        Tensor out = val(a);
        for (double& v : out.data) v *= c;
        return push(std::move(out), needs(a), [a, c](Tape& t, const Tensor& g) {
            Tensor ga = g;
            for (double& v : ga.data) v *= c;
            t.accum(a, ga);
        });
    }

    Var add_scalar(Var a, double c) {
        Tensor out = val(a);
        for (double& v : out.data) v += c;
        return push(std::move(out), needs(a), [a](Tape& t, const Tensor& g) { t.accum(a, g); });
    }

    // X (R x C) + v broadcast across rows; v is [C] or [1 x C].
    Var add_rowvec(Var x, Var v) {
        const Tensor& vx = val(x);
        const Tensor& vv = val(v);
        const int c = vx.cols();
        if (static_cast<int>(vv.numel()) != c)
            throw dim_error("add_rowvec: vector length does not match columns");
        Tensor out = vx;
        const std::size_t rows = vx.numel() / static_cast<std::size_t>(c);
        for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j) out.data[r * c + j] += vv.data[static_cast<std::size_t>(j)];
        return push(std::move(out), needs(x) || needs(v), [x, v, c](Tape& t, const Tensor& g) {
            t.accum(x, g);
            Tensor gv = Tensor::zeros(t.val(v).shape);
            const std::size_t rows = g.numel() / static_cast<std::size_t>(c);
            for (std::size_t r = 0; r < rows; ++r)
                for (int j = 0; j < c; ++j) gv.data[static_cast<std::size_t>(j)] += g.data[r * c + j];
            t.accum(v, gv);
        });
    }

    Var matmul(Var a, Var b) {
        Tensor out = vispflow::matmul(val(a), val(b));
        const bool na = needs(a), nb = needs(b);
        return push(std::move(out), na || nb, [a, b, na, nb](Tape& t, const Tensor& g) {
            const Tensor& va = t.val(a);
            const Tensor& vb = t.val(b);
            // dA = G * B^T, dB = A^T * G, batched like the forward pass.
            const int m = va.rows(), k = va.cols(), n = vb.cols();
            const std::size_t ab = va.batches(), bbatch = vb.batches();
            Tensor ga = na ? Tensor::zeros(va.shape) : Tensor();
            Tensor gb = nb ? Tensor::zeros(vb.shape) : Tensor();
            const std::size_t a_stride = static_cast<std::size_t>(m) * k;
            const std::size_t b_stride = bbatch == 1 ? 0 : static_cast<std::size_t>(k) * n;
            const std::size_t g_stride = static_cast<std::size_t>(m) * n;
            for (std::size_t batch = 0; batch < ab; ++batch) {
                const double* pa = va.data.data() + batch * a_stride;
                const double* pb = vb.data.data() + batch * b_stride;
                const double* pg = g.data.data() + batch * g_stride;
                for (int i = 0; i < m; ++i) {
                    const double* grow = pg + static_cast<std::size_t>(i) * n;
                    const double* arow = pa + static_cast<std::size_t>(i) * k;
                    if (na) {
                        double* garow = ga.data.data() + batch * a_stride + static_cast<std::size_t>(i) * k;
                        for (int kk = 0; kk < k; ++kk) {
                            const double* brow = pb + static_cast<std::size_t>(kk) * n;
                            double acc = 0.0;
                            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            garow[kk] += acc;
                        }
                    }
                    if (nb) {
                        double* pgb = gb.data.data() + batch * b_stride;
                        for (int kk = 0; kk < k; ++kk) {
                            const double av = arow[kk];
                            double* gbrow = pgb + static_cast<std::size_t>(kk) * n;
                            for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
            }
            if (na) t.accum(a, ga);
            if (nb) t.accum(b, gb);
        });
    }

    Var transpose(Var a) {
        Tensor out = transpose2d(val(a));
        return push(std::move(out), needs(a), [a](Tape& t, const Tensor& g) {
            t.accum(a, transpose2d(g));
        });
    }

    Var softmax_lastdim(Var x) {
        Tensor out = vispflow::softmax_lastdim(val(x));
        Var y = push(std::move(out), needs(x), {});
        nodes_[static_cast<std::size_t>(y.id)].backward = [x, y](Tape& t, const Tensor& g) {
            const Tensor& sy = t.val(y);
            const int c = sy.cols();
            Tensor gx = g;
            const std::size_t rows = sy.numel() / static_cast<std::size_t>(c);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = sy.data.data() + r * c;
                double* gr = gx.data.data() + r * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
                for (int j = 0; j < c; ++j) gr[j] = yr[j] * (gr[j] - dot);
            }
            t.accum(x, gx);
        };
        return y;
    }

    // Row-wise log(sum(exp(x))) -> (rows x 1).
    Var logsumexp_lastdim(Var x) {
        const Tensor& vx = val(x);
        const int c = vx.cols();
        const int r = static_cast<int>(vx.numel() / static_cast<std::size_t>(c));
        Tensor out = Tensor::zeros({r, 1});
        for (int i = 0; i < r; ++i) {
            const double* row = vx.data.data() + static_cast<std::size_t>(i) * c;
            double mx = row[0];
            for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            double s = 0.0;
            for (int j = 0; j < c; ++j) s += std::exp(row[j] - mx);
            out.data[static_cast<std::size_t>(i)] = mx + std::log(s);
        }
        return push(std::move(out), needs(x), [x, c, r](Tape& t, const Tensor& g) {
            Tensor gx = vispflow::softmax_lastdim(t.val(x));
            for (int i = 0; i < r; ++i) {
                const double gi = g.data[static_cast<std::size_t>(i)];
                double* row = gx.data.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) row[j] *= gi;
            }
            t.accum(x, gx);
        });
    }

    // Diagonal of a square matrix -> (n x 1).
    Var take_diag(Var x) {
        const Tensor& vx = val(x);
        if (vx.ndim() != 2 || vx.rows() != vx.cols()) throw dim_error("take_diag: expected square matrix");
        const int n = vx.rows();
        Tensor out = Tensor::zeros({n, 1});
        for (int i = 0; i < n; ++i) out.data[static_cast<std::size_t>(i)] = vx.at(i, i);
        return push(std::move(out), needs(x), [x, n](Tape& t, const Tensor& g) {
            Tensor gx = Tensor::zeros(t.val(x).shape);
            for (int i = 0; i < n; ++i) gx.at(i, i) = g.data[static_cast<std::size_t>(i)];
            t.accum(x, gx);
        });
    }

    static constexpr double kLayerNormEps = 1e-5;

    // Per-row layer norm over the last dim with learnable gain and bias.
    Var layer_norm(Var x, Var gain, Var bias) {
        const Tensor& vx = val(x);
        const int c = vx.cols();
        if (static_cast<int>(val(gain).numel()) != c || static_cast<int>(val(bias).numel()) != c)
            throw dim_error("layer_norm: gain/bias length must equal last dim");
        Tensor out = vx;
        const std::size_t rows = vx.numel() / static_cast<std::size_t>(c);
        const double* pg = val(gain).data.data();
        const double* pb = val(bias).data.data();
        for (std::size_t r = 0; r < rows; ++r) {
            double* row = out.data.data() + r * c;
            double mu = 0.0;
            for (int j = 0; j < c; ++j) mu += row[j];
            mu /= c;
            double var = 0.0;
            for (int j = 0; j < c; ++j) {
                const double d = row[j] - mu;
                var += d * d;
            }
            var /= c;
            const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            for (int j = 0; j < c; ++j) row[j] = (row[j] - mu) * inv * pg[j] + pb[j];
        }
        return push(std::move(out), needs(x) || needs(gain) || needs(bias),
                    [x, gain, bias, c](Tape& t, const Tensor& g) {
            const Tensor& vx2 = t.val(x);
            const double* pgain = t.val(gain).data.data();
            Tensor gx = Tensor::zeros(vx2.shape);
            Tensor ggain = Tensor::zeros(t.val(gain).shape);
            Tensor gbias = Tensor::zeros(t.val(bias).shape);
            const std::size_t rows = vx2.numel() / static_cast<std::size_t>(c);
            std::vector<double> xhat(static_cast<std::size_t>(c));
            for (std::size_t r = 0; r < rows; ++r) {
                const double* row = vx2.data.data() + r * c;
                const double* grow = g.data.data() + r * c;
                double mu = 0.0;
                for (int j = 0; j < c; ++j) mu += row[j];
                mu /= c;
                double var = 0.0;
                for (int j = 0; j < c; ++j) {
                    const double d = row[j] - mu;
                    var += d * d;
                }
                var /= c;
                const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
                double mean_gy = 0.0, mean_gyx = 0.0;
                for (int j = 0; j < c; ++j) {
                    xhat[static_cast<std::size_t>(j)] = (row[j] - mu) * inv;
                    const double gy = grow[j] * pgain[j];
                    mean_gy += gy;
                    mean_gyx += gy * xhat[static_cast<std::size_t>(j)];
                }
                mean_gy /= c;
                mean_gyx /= c;
                double* gxr = gx.data.data() + r * c;
                for (int j = 0; j < c; ++j) {
                    const double gy = grow[j] * pgain[j];
                    gxr[j] = (gy - mean_gy - xhat[static_cast<std::size_t>(j)] * mean_gyx) * inv;
                    ggain.data[static_cast<std::size_t>(j)] += grow[j] * xhat[static_cast<std::size_t>(j)];
                    gbias.data[static_cast<std::size_t>(j)] += grow[j];
                }
            }
            t.accum(x, gx);
            t.accum(gain, ggain);
            t.accum(bias, gbias);
        });
    }

    Var sigmoid(Var x) {
        Tensor out = val(x);
        for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
        Var y = push(std::move(out), needs(x), {});
        nodes_[static_cast<std::size_t>(y.id)].backward = [x, y](Tape& t, const Tensor& g) {
            Tensor gx = g;
            const Tensor& vy = t.val(y);
            for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] *= vy.data[i] * (1.0 - vy.data[i]);
            t.accum(x, gx);
        };
        return y;
    }

    Var gelu(Var x) {
        Tensor out = val(x);
        for (double& v : out.data) v = v * 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
        return push(std::move(out), needs(x), [x](Tape& t, const Tensor& g) {
            Tensor gx = g;
            const Tensor& vx = t.val(x);
            for (std::size_t i = 0; i < gx.numel(); ++i) {
                const double v = vx.data[i];
                const double phi = 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
                const double pdf = std::exp(-0.5 * v * v) * 0.39894228040143267794;
                gx.data[i] *= phi + v * pdf;
            }
            t.accum(x, gx);
        });
    }

    Var exp(Var x) {
        Tensor out = val(x);
        for (double& v : out.data) v = std::exp(v);
        Var y = push(std::move(out), needs(x), {});
        nodes_[static_cast<std::size_t>(y.id)].backward = [x, y](Tape& t, const Tensor& g) {
            Tensor gx = g;
            const Tensor& vy = t.val(y);
            for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] *= vy.data[i];
            t.accum(x, gx);
        };
        return y;
    }

    Var log(Var x) {
        Tensor out = val(x);
        for (double& v : out.data) v = std::log(v);
        return push(std::move(out), needs(x), [x](Tape& t, const Tensor& g) {
            Tensor gx = g;
            const Tensor& vx = t.val(x);
            for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] /= vx.data[i];
            t.accum(x, gx);
        });
    }

    // x^p elementwise for x > 0.
    Var powc(Var x, double p) {
        Tensor out = val(x);
        for (double& v : out.data) v = std::pow(v, p);
        return push(std::move(out), needs(x), [x, p](Tape& t, const Tensor& g) {
            Tensor gx = g;
            const Tensor& vx = t.val(x);
            for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] *= p * std::pow(vx.data[i], p - 1.0);
            t.accum(x, gx);
        });
    }

    Var reshape(Var x, Shape s) {
        if (shape_numel(s) != val(x).numel()) throw dim_error("reshape: element count mismatch");
        Tensor out(std::move(s), val(x).data);
        return push(std::move(out), needs(x), [x](Tape& t, const Tensor& g) {
            Tensor gx(t.val(x).shape, g.data);
            t.accum(x, gx);
        });
    }

    // Concatenate two matrices along the column axis.
    Var concat_cols(Var a, Var b) {
        const Tensor& va = val(a);
        const Tensor& vb = val(b);
        if (va.ndim() != 2 || vb.ndim() != 2 || va.rows() != vb.rows())
            throw dim_error("concat_cols: need 2D operands with equal rows");
        const int r = va.rows(), ca = va.cols(), cb = vb.cols();
        Tensor out = Tensor::zeros({r, ca + cb});
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < ca; ++j) out.at(i, j) = va.at(i, j);
            for (int j = 0; j < cb; ++j) out.at(i, ca + j) = vb.at(i, j);
        }
        return push(std::move(out), needs(a) || needs(b), [a, b, r, ca, cb](Tape& t, const Tensor& g) {
            Tensor ga = Tensor::zeros(t.val(a).shape);
            Tensor gb = Tensor::zeros(t.val(b).shape);
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < ca; ++j) ga.at(i, j) = g.at(i, j);
                for (int j = 0; j < cb; ++j) gb.at(i, j) = g.at(i, ca + j);
            }
            t.accum(a, ga);
            t.accum(b, gb);
        });
    }

    // Columns [j0, j1) of a matrix.
    Var slice_cols(Var x, int j0, int j1) {
        const Tensor& vx = val(x);
        if (vx.ndim() != 2 || j0 < 0 || j1 > vx.cols() || j0 >= j1)
            throw dim_error("slice_cols: bad column range");
        const int r = vx.rows(), w = j1 - j0;
        Tensor out = Tensor::zeros({r, w});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j) out.at(i, j) = vx.at(i, j0 + j);
        return push(std::move(out), needs(x), [x, j0, r, w](Tape& t, const Tensor& g) {
            Tensor gx = Tensor::zeros(t.val(x).shape);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < w; ++j) gx.at(i, j0 + j) = g.at(i, j);
            t.accum(x, gx);
        });
    }

    // Rows selected by index (with repetition allowed).
    Var gather_rows(Var x, std::vector<int> idx) {
        const Tensor& vx = val(x);
        if (vx.ndim() != 2) throw dim_error("gather_rows: expected 2D tensor");
        const int c = vx.cols();
        Tensor out = Tensor::zeros({static_cast<int>(idx.size()), c});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] < 0 || idx[i] >= vx.rows()) throw dim_error("gather_rows: index out of range");
            for (int j = 0; j < c; ++j) out.at(static_cast<int>(i), j) = vx.at(idx[i], j);
        }
        return push(std::move(out), needs(x), [x, idx = std::move(idx), c](Tape& t, const Tensor& g) {
            Tensor gx = Tensor::zeros(t.val(x).shape);
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (int j = 0; j < c; ++j) gx.at(idx[i], j) += g.at(static_cast<int>(i), j);
            t.accum(x, gx);
        });
    }

    // Stack row vectors (each 1 x C or C) into a (B x C) matrix.
    Var stack_rows(const std::vector<Var>& rows) {
        if (rows.empty()) throw contract_error("stack_rows: need at least one row");
        const int c = static_cast<int>(val(rows[0]).numel());
        Tensor out = Tensor::zeros({static_cast<int>(rows.size()), c});
        bool any = false;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const Tensor& v = val(rows[i]);
            if (static_cast<int>(v.numel()) != c) throw dim_error("stack_rows: row length mismatch");
            for (int j = 0; j < c; ++j) out.data[i * static_cast<std::size_t>(c) + j] = v.data[static_cast<std::size_t>(j)];
            any = any || needs(rows[i]);
        }
        return push(std::move(out), any, [rows, c](Tape& t, const Tensor& g) {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                Tensor gr = Tensor::zeros(t.val(rows[i]).shape);
                for (int j = 0; j < c; ++j) gr.data[static_cast<std::size_t>(j)] = g.data[i * static_cast<std::size_t>(c) + j];
                t.accum(rows[i], gr);
            }
        });
    }

    // Sum over the last dim -> (rows x 1).
    Var rowsum_lastdim(Var x) {
        const Tensor& vx = val(x);
        const int c = vx.cols();
        const int r = static_cast<int>(vx.numel() / static_cast<std::size_t>(c));
        Tensor out = Tensor::zeros({r, 1});
        for (int i = 0; i < r; ++i) {
            double s = 0.0;
            const double* row = vx.data.data() + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) s += row[j];
            out.data[static_cast<std::size_t>(i)] = s;
        }
        return push(std::move(out), needs(x), [x, c, r](Tape& t, const Tensor& g) {
            Tensor gx = Tensor::zeros(t.val(x).shape);
            for (int i = 0; i < r; ++i) {
                const double gi = g.data[static_cast<std::size_t>(i)];
                double* row = gx.data.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) row[j] = gi;
            }
            t.accum(x, gx);
        });
    }

    // X (R x C) scaled per row by a column vector (R x 1).
    Var rowwise_scale(Var x, Var s) {
        const Tensor& vx = val(x);
        const Tensor& vs = val(s);
        const int c = vx.cols();
        const int r = static_cast<int>(vx.numel() / static_cast<std::size_t>(c));
        if (static_cast<int>(vs.numel()) != r) throw dim_error("rowwise_scale: scale length must equal rows");
        Tensor out = vx;
        for (int i = 0; i < r; ++i) {
            const double si = vs.data[static_cast<std::size_t>(i)];
            double* row = out.data.data() + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) row[j] *= si;
        }
        return push(std::move(out), needs(x) || needs(s), [x, s, c, r](Tape& t, const Tensor& g) {
            const Tensor& vx2 = t.val(x);
            const Tensor& vs2 = t.val(s);
            Tensor gx = g;
            Tensor gs = Tensor::zeros(vs2.shape);
            for (int i = 0; i < r; ++i) {
                const double si = vs2.data[static_cast<std::size_t>(i)];
                const double* xr = vx2.data.data() + static_cast<std::size_t>(i) * c;
                const double* gr = g.data.data() + static_cast<std::size_t>(i) * c;
                double* gxr = gx.data.data() + static_cast<std::size_t>(i) * c;
                double acc = 0.0;
                for (int j = 0; j < c; ++j) {
                    acc += gr[j] * xr[j];
                    gxr[j] = gr[j] * si;
                }
                gs.data[static_cast<std::size_t>(i)] = acc;
            }
            t.accum(x, gx);
            t.accum(s, gs);
        });
    }

    // X / tau where tau is a learnable 1-element tensor.
    Var scale_by_recip(Var x, Var tau) {
        if (val(tau).numel() != 1) throw dim_error("scale_by_recip: tau must be a scalar tensor");
        const double tv = val(tau).data[0];
        Tensor out = val(x);
        for (double& v : out.data) v /= tv;
        return push(std::move(out), needs(x) || needs(tau), [x, tau, tv](Tape& t, const Tensor& g) {
            Tensor gx = g;
            for (double& v : gx.data) v /= tv;
            t.accum(x, gx);
            const Tensor& vx = t.val(x);
            double acc = 0.0;
            for (std::size_t i = 0; i < g.numel(); ++i) acc += g.data[i] * vx.data[i];
            t.accum(tau, Tensor::scalar(-acc / (tv * tv)));
        });
    }

    Var mean_all(Var x) {
        const Tensor& vx = val(x);
        const double n = static_cast<double>(vx.numel());
        double s = 0.0;
        for (double v : vx.data) s += v;
        return push(Tensor::scalar(s / n), needs(x), [x, n](Tape& t, const Tensor& g) {
            Tensor gx = Tensor::full(t.val(x).shape, g.data[0] / n);
            t.accum(x, gx);
        });
    }

    Var sum_all(Var x) {
        const Tensor& vx = val(x);
        double s = 0.0;
        for (double v : vx.data) s += v;
        return push(Tensor::scalar(s), needs(x), [x](Tape& t, const Tensor& g) {
            Tensor gx = Tensor::full(t.val(x).shape, g.data[0]);
            t.accum(x, gx);
        });
    }

    // Mean of squared differences; the flow-matching regression loss shape.
    Var mse(Var a, Var b) { return mean_all(mul(sub(a, b), sub(a, b))); }

    // ---------------------------------------------------------- backward

    void backward(Var loss) {
        if (val(loss).numel() != 1) throw contract_error("backward: loss must be scalar");
        for (auto& n : nodes_) n.grad = Tensor();
        nodes_[check(loss)].grad = Tensor::scalar(1.0);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.requires_grad || !n.backward || n.grad.numel() == 0) continue;
            n.backward(*this, n.grad);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad{false};
        std::function<void(Tape&, const Tensor&)> backward;
    };
    std::vector<Node> nodes_;

    std::size_t check(Var v) const {
        if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw contract_error("invalid tape handle");
        return static_cast<std::size_t>(v.id);
    }
    bool needs(Var v) const { return nodes_[check(v)].requires_grad; }

    Var push(Tensor value, bool requires_grad, std::function<void(Tape&, const Tensor&)> bw) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void accum(Var v, const Tensor& g) {
        Node& n = nodes_[check(v)];
        if (!n.requires_grad) return;
        if (n.grad.numel() == 0) {
            n.grad = g;
        } else {
            for (std::size_t i = 0; i < g.numel(); ++i) n.grad.data[i] += g.data[i];
        }
    }
};

// Scalar-valued function of a parameter set, built from tape ops.
using LossFn = std::function<Var(Tape&, const std::map<std::string, Var>&)>;

// Analytic gradient of loss_fn for every trainable parameter.
inline GradMap grad(const LossFn& loss_fn, const ParamSet& params) {
    Tape tape;
    auto leaves = tape.leaves(params);
    Var loss = loss_fn(tape, leaves);
    if (tape.val(loss).numel() != 1) throw contract_error("grad: loss_fn must return a scalar");
    tape.backward(loss);
    GradMap out;
    for (const auto& [path, e] : params.entries) {
        if (!e.trainable) continue;
        const Tensor& g = tape.grad(leaves.at(path));
        out.emplace(path, g.numel() ? g : Tensor::zeros(e.value.shape));
    }
    return out;
}

struct FiniteDiffReport {
    struct Item {
        std::string path;
        double max_rel_err;
    };
    std::vector<Item> per_param;
    double max_rel_err{0.0};
    bool pass{false};
};

// Central-difference oracle for the analytic gradients. Relative error is
// |a - n| / max(1e-8, |a| + |n|).
inline FiniteDiffReport finite_diff_check(const LossFn& loss_fn, ParamSet params, double epsilon,
                                          double tolerance) {
    if (epsilon <= 0.0) throw contract_error("finite_diff_check: epsilon must be > 0");
    const auto eval = [&](const ParamSet& p) {
        Tape tape;
        auto leaves = tape.leaves(p);
        Var loss = loss_fn(tape, leaves);
        return tape.val(loss).data[0];
    };
    GradMap analytic = grad(loss_fn, params);
    FiniteDiffReport report;
    for (auto& [path, e] : params.entries) {
        if (!e.trainable) continue;
        const Tensor& a = analytic.at(path);
        double worst = 0.0;
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
            const double orig = e.value.data[i];
            e.value.data[i] = orig + epsilon;
            const double fp = eval(params);
            e.value.data[i] = orig - epsilon;
            const double fm = eval(params);
            e.value.data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double av = a.data[i];
            const double rel = std::abs(av - numeric) / std::max(1e-8, std::abs(av) + std::abs(numeric));
            worst = std::max(worst, rel);
        }
        report.per_param.push_back({path, worst});
        report.max_rel_err = std::max(report.max_rel_err, worst);
    }
    report.pass = report.max_rel_err <= tolerance;
    return report;
}

}  // namespace vispflow
