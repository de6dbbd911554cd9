#include "missbgm/tape.hpp"

#include <cmath>

namespace missbgm {

namespace {

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void throw_shape(const char* op, const Matrix& a,
                              const Matrix& b) {
  throw ShapeError(op, std::string(op) + ": shapes " + shape_of(a) + " and " +
                           shape_of(b) + " do not conform");
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw std::out_of_range("Tape: node id out of range");
  }
}

int Tape::input(Matrix v) {
  Node n;
  n.value = std::move(v);
  return push(std::move(n));
}

int Tape::constant(Matrix v) { return input(std::move(v)); }

int Tape::matmul(int a, int b) {
  check(a);
  check(b);
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (va.cols() != vb.rows()) throw_shape("matmul", va, vb);
  Node n;
  n.op = Op::kMatMul;
  n.a = a;
  n.b = b;
  n.value = va * vb;
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  check(a);
  check(b);
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw_shape("add", va, vb);
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.value = va + vb;
  return push(std::move(n));
}

int Tape::add_rowvec(int a, int b) {
  check(a);
  check(b);
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (vb.rows() != 1 || va.cols() != vb.cols())
    throw_shape("add_rowvec", va, vb);
  Node n;
  n.op = Op::kAddRowVec;
  n.a = a;
  n.b = b;
  n.value = va.rowwise() + vb.row(0);
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  check(a);
  check(b);
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw_shape("sub", va, vb);
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.value = va - vb;
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  check(a);
  check(b);
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw_shape("mul", va, vb);
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.value = va.cwiseProduct(vb);
  return push(std::move(n));
}

int Tape::div(int a, int b) {
  check(a);
  check(b);
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw_shape("div", va, vb);
  Node n;
  n.op = Op::kDiv;
  n.a = a;
  n.b = b;
  n.value = va.cwiseQuotient(vb);
  return push(std::move(n));
}

int Tape::scale(int a, double c) {
  check(a);
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.aux = c;
  n.value = c * nodes_[a].value;
  return push(std::move(n));
}

int Tape::add_scalar(int a, double c) {
  check(a);
  Node n;
  n.op = Op::kAddScalar;
  n.a = a;
  n.aux = c;
  n.value = nodes_[a].value.array() + c;
  return push(std::move(n));
}

int Tape::square(int a) {
  check(a);
  Node n;
  n.op = Op::kSquare;
  n.a = a;
  n.value = nodes_[a].value.array().square();
  return push(std::move(n));
}

int Tape::log(int a) {
  check(a);
  Node n;
  n.op = Op::kLog;
  n.a = a;
  n.value = nodes_[a].value.array().log();
  return push(std::move(n));
}

int Tape::exp(int a) {
  check(a);
  Node n;
  n.op = Op::kExp;
  n.a = a;
  n.value = nodes_[a].value.array().exp();
  return push(std::move(n));
}

int Tape::tanh(int a) {
  check(a);
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  n.value = nodes_[a].value.array().tanh();
  return push(std::move(n));
}

int Tape::sigmoid(int a) {
  check(a);
  Node n;
  n.op = Op::kSigmoid;
  n.a = a;
  n.value = nodes_[a].value.unaryExpr([](double x) {
    return stable_sigmoid(x);
  });
  return push(std::move(n));
}

int Tape::softplus(int a) {
  check(a);
  Node n;
  n.op = Op::kSoftplus;
  n.a = a;
  n.value = nodes_[a].value.unaryExpr([](double x) {
    return stable_softplus(x);
  });
  return push(std::move(n));
}

int Tape::leaky_relu(int a, double slope) {
  check(a);
  Node n;
  n.op = Op::kLeakyRelu;
  n.a = a;
  n.aux = slope;
  n.value = nodes_[a].value.unaryExpr([slope](double x) {
    return x > 0.0 ? x : slope * x;
  });
  return push(std::move(n));
}

int Tape::sum(int a) {
  check(a);
  Node n;
  n.op = Op::kSum;
  n.a = a;
  n.value = Matrix::Constant(1, 1, nodes_[a].value.sum());
  return push(std::move(n));
}

int Tape::mean(int a) {
  check(a);
  Node n;
  n.op = Op::kMean;
  n.a = a;
  n.value = Matrix::Constant(1, 1, nodes_[a].value.mean());
  return push(std::move(n));
}

int Tape::slice(int a, int row0, int col0, int rows, int cols) {
  check(a);
  const Matrix& va = nodes_[a].value;
  if (row0 < 0 || col0 < 0 || rows < 0 || cols < 0 ||
      row0 + rows > va.rows() || col0 + cols > va.cols()) {
    throw ShapeError("slice", "slice: block (" + std::to_string(row0) + "," +
                                  std::to_string(col0) + "," +
                                  std::to_string(rows) + "," +
                                  std::to_string(cols) +
                                  ") out of bounds for " + shape_of(va));
  }
  Node n;
  n.op = Op::kSlice;
  n.a = a;
  n.row0 = row0;
  n.col0 = col0;
  n.value = va.block(row0, col0, rows, cols);
  return push(std::move(n));
}

int Tape::hconcat(int a, int b) {
  check(a);
  check(b);
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (va.rows() != vb.rows()) throw_shape("hconcat", va, vb);
  Node n;
  n.op = Op::kHConcat;
  n.a = a;
  n.b = b;
  n.value.resize(va.rows(), va.cols() + vb.cols());
  n.value << va, vb;
  return push(std::move(n));
}

int Tape::vconcat(int a, int b) {
  check(a);
  check(b);
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (va.cols() != vb.cols()) throw_shape("vconcat", va, vb);
  Node n;
  n.op = Op::kVConcat;
  n.a = a;
  n.b = b;
  n.value.resize(va.rows() + vb.rows(), va.cols());
  n.value << va, vb;
  return push(std::move(n));
}

const Matrix& Tape::grad(int id) const {
  check(id);
  if (!backward_done_) {
    throw std::logic_error("Tape::grad: backward() has not run");
  }
  return nodes_[id].adjoint;
}

void Tape::backward(int output) {
  check(output);
  if (backward_done_) {
    throw std::logic_error("Tape::backward: tape already differentiated");
  }
  const Matrix& out = nodes_[output].value;
  if (out.rows() != 1 || out.cols() != 1) {
    throw std::invalid_argument("Tape::backward: output must be scalar, got " +
                                shape_of(out));
  }
  for (Node& n : nodes_) {
    n.adjoint = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  nodes_[output].adjoint(0, 0) = 1.0;

  for (int id = output; id >= 0; --id) {
    Node& n = nodes_[id];
    const Matrix& g = n.adjoint;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul:
        nodes_[n.a].adjoint.noalias() += g * nodes_[n.b].value.transpose();
        nodes_[n.b].adjoint.noalias() += nodes_[n.a].value.transpose() * g;
        break;
      case Op::kAdd:
        nodes_[n.a].adjoint += g;
        nodes_[n.b].adjoint += g;
        break;
      case Op::kAddRowVec:
        nodes_[n.a].adjoint += g;
        nodes_[n.b].adjoint.row(0) += g.colwise().sum();
        break;
      case Op::kSub:
        nodes_[n.a].adjoint += g;
        nodes_[n.b].adjoint -= g;
        break;
      case Op::kMul:
        nodes_[n.a].adjoint += g.cwiseProduct(nodes_[n.b].value);
        nodes_[n.b].adjoint += g.cwiseProduct(nodes_[n.a].value);
        break;
      case Op::kDiv:
        nodes_[n.a].adjoint += g.cwiseQuotient(nodes_[n.b].value);
        nodes_[n.b].adjoint -=
            g.cwiseProduct(n.value).cwiseQuotient(nodes_[n.b].value);
        break;
      case Op::kScale:
        nodes_[n.a].adjoint += n.aux * g;
        break;
      case Op::kAddScalar:
        nodes_[n.a].adjoint += g;
        break;
      case Op::kSquare:
        nodes_[n.a].adjoint += 2.0 * g.cwiseProduct(nodes_[n.a].value);
        break;
      case Op::kLog:
        nodes_[n.a].adjoint += g.cwiseQuotient(nodes_[n.a].value);
        break;
      case Op::kExp:
        nodes_[n.a].adjoint += g.cwiseProduct(n.value);
        break;
      case Op::kTanh:
        nodes_[n.a].adjoint.array() +=
            g.array() * (1.0 - n.value.array().square());
        break;
      case Op::kSigmoid:
        nodes_[n.a].adjoint.array() +=
            g.array() * n.value.array() * (1.0 - n.value.array());
        break;
      case Op::kSoftplus:
        nodes_[n.a].adjoint.array() +=
            g.array() * nodes_[n.a].value.unaryExpr([](double x) {
                          return stable_sigmoid(x);
                        }).array();
        break;
      case Op::kLeakyRelu:
        nodes_[n.a].adjoint.array() +=
            g.array() * nodes_[n.a].value.unaryExpr([slope = n.aux](double x) {
                          return x > 0.0 ? 1.0 : slope;
                        }).array();
        break;
      case Op::kSum:
        nodes_[n.a].adjoint.array() += g(0, 0);
        break;
      case Op::kMean:
        nodes_[n.a].adjoint.array() +=
            g(0, 0) / static_cast<double>(nodes_[n.a].value.size());
        break;
      case Op::kSlice:
        nodes_[n.a]
            .adjoint.block(n.row0, n.col0, n.value.rows(), n.value.cols()) +=
            g;
        break;
      case Op::kHConcat: {
        const auto ca = nodes_[n.a].value.cols();
        nodes_[n.a].adjoint += g.leftCols(ca);
        nodes_[n.b].adjoint += g.rightCols(g.cols() - ca);
        break;
      }
      case Op::kVConcat: {
        const auto ra = nodes_[n.a].value.rows();
        nodes_[n.a].adjoint += g.topRows(ra);
        nodes_[n.b].adjoint += g.bottomRows(g.rows() - ra);
        break;
      }
    }
  }
  backward_done_ = true;
}

double grad_check(const std::function<int(Tape&, int)>& build, const Matrix& x,
                  double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be > 0");

  Tape tape;
  const int in = tape.input(x);
  const int out = build(tape, in);
  if (!tape.value(out).allFinite()) {
    throw std::runtime_error("grad_check: non-finite function value");
  }
  tape.backward(out);
  const Matrix analytic = tape.grad(in);
  if (!analytic.allFinite()) {
    throw std::runtime_error("grad_check: non-finite analytic gradient");
  }

  auto eval = [&](const Matrix& point) {
    Tape t;
    const double v = t.value(build(t, t.input(point)))(0, 0);
    if (!std::isfinite(v)) {
      throw std::runtime_error("grad_check: non-finite intermediate value");
    }
    return v;
  };

  double worst = 0.0;
  Matrix probe = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double orig = probe(i, j);
      probe(i, j) = orig + h;
      const double up = eval(probe);
      probe(i, j) = orig - h;
      const double down = eval(probe);
      probe(i, j) = orig;
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic(i, j);
      const double rel =
          std::abs(a - fd) / (std::abs(a) + std::abs(fd) + 1e-12);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace missbgm
