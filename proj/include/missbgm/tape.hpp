#ifndef MISSBGM_TAPE_HPP
#define MISSBGM_TAPE_HPP

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace missbgm {

using Matrix = Eigen::MatrixXd;

// Thrown when operand shapes do not conform; carries the offending op name.
struct ShapeError : std::invalid_argument {
  ShapeError(std::string op_name, const std::string& what)
      : std::invalid_argument(what), op(std::move(op_name)) {}
  std::string op;
};

// Reverse-mode tape over dense f64 matrices. Nodes are appended in
// evaluation order, so reverse index order is a reverse topological order
// and backward() visits each node exactly once. A tape is built per
// objective evaluation and discarded; it is single-threaded, but distinct
// tapes are independent.
class Tape {
 public:
  // Leaves. Both record a node; the distinction is only documentation
  // (adjoints are available for any node after backward()).
  int input(Matrix v);
  int constant(Matrix v);

  int matmul(int a, int b);
  int add(int a, int b);
  int add_rowvec(int a, int b);  // (n x m) + (1 x m), bias broadcast
  int sub(int a, int b);
  int mul(int a, int b);  // elementwise
  int div(int a, int b);  // elementwise
  int scale(int a, double c);
  int add_scalar(int a, double c);
  int square(int a);
  int log(int a);
  int exp(int a);
  int tanh(int a);
  int sigmoid(int a);
  int softplus(int a);
  int leaky_relu(int a, double slope);
  int sum(int a);   // -> 1x1
  int mean(int a);  // -> 1x1
  int slice(int a, int row0, int col0, int rows, int cols);
  int hconcat(int a, int b);
  int vconcat(int a, int b);

  // matmul + bias broadcast, the dense-layer affine map.
  int affine(int x, int w, int b) { return add_rowvec(matmul(x, w), b); }

  // Seeds d(output)/d(output) = 1 and accumulates adjoints for every node.
  // output must be 1x1. A second call on the same tape is rejected.
  void backward(int output);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const;
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  enum class Op {
    kLeaf,
    kMatMul,
    kAdd,
    kAddRowVec,
    kSub,
    kMul,
    kDiv,
    kScale,
    kAddScalar,
    kSquare,
    kLog,
    kExp,
    kTanh,
    kSigmoid,
    kSoftplus,
    kLeakyRelu,
    kSum,
    kMean,
    kSlice,
    kHConcat,
    kVConcat,
  };

  struct Node {
    Op op = Op::kLeaf;
    int a = -1;
    int b = -1;
    double aux = 0.0;  // scalar constant or leaky slope
    int row0 = 0, col0 = 0;
    Matrix value;
    Matrix adjoint;
  };

  int push(Node n);
  void check(int id) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Max over coordinates of |analytic - central difference| relative error for
// a scalar function built on a tape from a single input matrix.
// Throws std::runtime_error on non-finite intermediates.
double grad_check(const std::function<int(Tape&, int)>& build, const Matrix& x,
                  double h);

}  // namespace missbgm

#endif  // MISSBGM_TAPE_HPP
