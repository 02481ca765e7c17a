#include "risloc/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace risloc::ad {

namespace {
constexpr double kNormEps = kUnitModulusEps;

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace

Tensor Tape::emplace(Matrix value, bool requires_grad,
                     std::function<void(Tape&, const Matrix&)> pull) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Tensor{static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::input(Matrix value) { return emplace(std::move(value), true, nullptr); }

Tensor Tape::constant(Matrix value) { return emplace(std::move(value), false, nullptr); }

Matrix Tape::grad(Tensor t) const {
  const Node& n = nodes_[t.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Tensor loss) {
  if (rows(loss) != 1 || cols(loss) != 1)
    throw std::invalid_argument("backward: loss must be a 1x1 tensor");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id].grad = Matrix::Constant(1, 1, 1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.pull) continue;
    n.pull(*this, n.grad);
  }
}

// Helper used by op definitions below.
struct OpAccess {
  static Tensor make(Tape& tp, Matrix value, const std::vector<Tensor>& parents,
                     std::function<void(Tape&, const Matrix&)> pull) {
    bool req = false;
    for (const Tensor p : parents) req = req || tp.tracked(p);
    return tp.emplace(std::move(value), req, req ? std::move(pull) : nullptr);
  }
  static void acc(Tape& tp, Tensor t, const Matrix& g) { tp.accumulate(t.id, g); }
  static void set_pull(Tape& tp, Tensor t, std::function<void(Tape&, const Matrix&)> pull) {
    tp.nodes_[t.id].pull = std::move(pull);
  }
  static bool tracked(Tape& tp, Tensor t) { return tp.tracked(t); }
};

Tensor add(Tape& tp, Tensor a, Tensor b) {
  check_same_shape(tp.value(a), tp.value(b), "add");
  return OpAccess::make(tp, tp.value(a) + tp.value(b), {a, b},
                        [a, b](Tape& t, const Matrix& g) {
                          OpAccess::acc(t, a, g);
                          OpAccess::acc(t, b, g);
                        });
}

Tensor add_bias(Tape& tp, Tensor a, Tensor bias) {
  if (tp.rows(a) != tp.rows(bias) || tp.cols(bias) != 1)
    throw std::invalid_argument("add_bias: bias must be rows(a) x 1");
  Matrix out = tp.value(a);
  out.colwise() += Eigen::VectorXd(tp.value(bias).col(0));
  return OpAccess::make(tp, std::move(out), {a, bias},
                        [a, bias](Tape& t, const Matrix& g) {
                          OpAccess::acc(t, a, g);
                          OpAccess::acc(t, bias, g.rowwise().sum());
                        });
}

Tensor sub(Tape& tp, Tensor a, Tensor b) {
  check_same_shape(tp.value(a), tp.value(b), "sub");
  return OpAccess::make(tp, tp.value(a) - tp.value(b), {a, b},
                        [a, b](Tape& t, const Matrix& g) {
                          OpAccess::acc(t, a, g);
                          OpAccess::acc(t, b, -g);
                        });
}

Tensor mul(Tape& tp, Tensor a, Tensor b) {
  check_same_shape(tp.value(a), tp.value(b), "mul");
  return OpAccess::make(tp, tp.value(a).cwiseProduct(tp.value(b)), {a, b},
                        [a, b](Tape& t, const Matrix& g) {
                          OpAccess::acc(t, a, g.cwiseProduct(t.value(b)));
                          OpAccess::acc(t, b, g.cwiseProduct(t.value(a)));
                        });
}

Tensor matmul(Tape& tp, Tensor a, Tensor b) {
  if (tp.cols(a) != tp.rows(b)) throw std::invalid_argument("matmul: inner dimensions disagree");
  return OpAccess::make(tp, tp.value(a) * tp.value(b), {a, b},
                        [a, b](Tape& t, const Matrix& g) {
                          OpAccess::acc(t, a, g * t.value(b).transpose());
                          OpAccess::acc(t, b, t.value(a).transpose() * g);
                        });
}

Tensor tanh(Tape& tp, Tensor x) {
  Matrix y = tp.value(x).array().tanh().matrix();
  Tensor out = OpAccess::make(tp, std::move(y), {x}, nullptr);
  if (OpAccess::tracked(tp, x)) {
    // reuse the forward value through the node handle
    const Tensor self = out;
    OpAccess::set_pull(tp, out, [x, self](Tape& t, const Matrix& g) {
      OpAccess::acc(t, x, (g.array() * (1.0 - t.value(self).array().square())).matrix());
    });
  }
  return out;
}

Tensor sigmoid(Tape& tp, Tensor x) {
  Matrix y = (1.0 / (1.0 + (-tp.value(x).array()).exp())).matrix();
  Tensor out = OpAccess::make(tp, std::move(y), {x}, nullptr);
  if (OpAccess::tracked(tp, x)) {
    const Tensor self = out;
    OpAccess::set_pull(tp, out, [x, self](Tape& t, const Matrix& g) {
      const auto y_ = t.value(self).array();
      OpAccess::acc(t, x, (g.array() * y_ * (1.0 - y_)).matrix());
    });
  }
  return out;
}

Tensor relu(Tape& tp, Tensor x) {
  return OpAccess::make(tp, tp.value(x).cwiseMax(0.0), {x},
                        [x](Tape& t, const Matrix& g) {
                          const Matrix mask =
                              (t.value(x).array() > 0.0).cast<double>().matrix();
                          OpAccess::acc(t, x, g.cwiseProduct(mask));
                        });
}

Tensor square(Tape& tp, Tensor x) {
  return OpAccess::make(tp, tp.value(x).array().square().matrix(), {x},
                        [x](Tape& t, const Matrix& g) {
                          OpAccess::acc(t, x, (2.0 * g.array() * t.value(x).array()).matrix());
                        });
}

Tensor scale(Tape& tp, Tensor x, double c) {
  return OpAccess::make(tp, c * tp.value(x), {x},
                        [x, c](Tape& t, const Matrix& g) { OpAccess::acc(t, x, c * g); });
}

Tensor sum(Tape& tp, Tensor x) {
  return OpAccess::make(tp, Matrix::Constant(1, 1, tp.value(x).sum()), {x},
                        [x](Tape& t, const Matrix& g) {
                          OpAccess::acc(t, x,
                                        Matrix::Constant(t.rows(x), t.cols(x), g(0, 0)));
                        });
}

Tensor colwise_sum(Tape& tp, Tensor x) {
  return OpAccess::make(tp, tp.value(x).colwise().sum(), {x},
                        [x](Tape& t, const Matrix& g) {
                          OpAccess::acc(t, x, Matrix::Ones(t.rows(x), 1) * g);
                        });
}

Tensor concat_rows(Tape& tp, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index total = 0;
  const Eigen::Index c = tp.cols(parts.front());
  for (const Tensor p : parts) {
    if (tp.cols(p) != c) throw std::invalid_argument("concat_rows: column counts disagree");
    total += tp.rows(p);
  }
  Matrix out(total, c);
  Eigen::Index r = 0;
  for (const Tensor p : parts) {
    out.middleRows(r, tp.rows(p)) = tp.value(p);
    r += tp.rows(p);
  }
  return OpAccess::make(tp, std::move(out), parts,
                        [parts](Tape& t, const Matrix& g) {
                          Eigen::Index r = 0;
                          for (const Tensor p : parts) {
                            OpAccess::acc(t, p, g.middleRows(r, t.rows(p)));
                            r += t.rows(p);
                          }
                        });
}

Tensor slice_rows(Tape& tp, Tensor x, Eigen::Index row0, Eigen::Index nrows) {
  if (row0 < 0 || nrows < 0 || row0 + nrows > tp.rows(x))
    throw std::invalid_argument("slice_rows: block out of range");
  return OpAccess::make(tp, tp.value(x).middleRows(row0, nrows), {x},
                        [x, row0, nrows](Tape& t, const Matrix& g) {
                          Matrix gx = Matrix::Zero(t.rows(x), t.cols(x));
                          gx.middleRows(row0, nrows) = g;
                          OpAccess::acc(t, x, gx);
                        });
}

Tensor normalize_pairs(Tape& tp, Tensor x) {
  const Eigen::Index rows = tp.rows(x);
  if (rows % 2 != 0) throw std::invalid_argument("normalize_pairs: row count must be even");
  const Eigen::Index m = rows / 2;
  const auto re = tp.value(x).topRows(m).array();
  const auto im = tp.value(x).bottomRows(m).array();
  const Eigen::ArrayXXd r = (re.square() + im.square() + kNormEps).sqrt();
  Matrix out(rows, tp.cols(x));
  out.topRows(m) = (re / r).matrix();
  out.bottomRows(m) = (im / r).matrix();
  return OpAccess::make(
      tp, std::move(out), {x}, [x, m](Tape& t, const Matrix& g) {
        const auto a = t.value(x).topRows(m).array();
        const auto b = t.value(x).bottomRows(m).array();
        const Eigen::ArrayXXd r2 = a.square() + b.square() + kNormEps;
        const Eigen::ArrayXXd r3 = r2 * r2.sqrt();
        const auto ga = g.topRows(m).array();
        const auto gb = g.bottomRows(m).array();
        Matrix gx(t.rows(x), t.cols(x));
        gx.topRows(m) = ((ga * (b.square() + kNormEps) - gb * a * b) / r3).matrix();
        gx.bottomRows(m) = ((gb * (a.square() + kNormEps) - ga * a * b) / r3).matrix();
        OpAccess::acc(t, x, gx);
      });
}

void AdamOptimizer::step(const std::vector<Matrix*>& params,
                         const std::vector<Matrix>& grads, double lr_override) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size())
    throw std::invalid_argument("adam: parameter list changed size");

  ++step_;
  const double lr = lr_override > 0.0 ? lr_override : cfg_.lr;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Matrix m_hat = m_[i] / bc1;
    const Matrix v_hat = v_[i] / bc2;
    params[i]->array() -= lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps);
  }
}

}  // namespace risloc::ad
