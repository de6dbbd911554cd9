#include "missbgm/nets.hpp"

#include <cmath>
#include <string>

#include "missbgm/errors.hpp"

namespace missbgm {

namespace {

double softplus_scalar(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

void apply_activation(Matrix& h, Activation act) {
  switch (act) {
    case Activation::kLeakyRelu:
      h = h.unaryExpr([](double x) { return x > 0.0 ? x : kLeakySlope * x; });
      break;
    case Activation::kTanh:
      h = h.array().tanh();
      break;
    case Activation::kIdentity:
      break;
  }
}

int activation_on_tape(Tape& t, int h, Activation act) {
  switch (act) {
    case Activation::kLeakyRelu:
      return t.leaky_relu(h, kLeakySlope);
    case Activation::kTanh:
      return t.tanh(h);
    case Activation::kIdentity:
      return h;
  }
  return h;
}

void check_layer_finite(const Matrix& h, const char* net, int layer_index) {
  if (!h.allFinite()) {
    throw NumericError(std::string(net) + ": non-finite output of layer " +
                       std::to_string(layer_index));
  }
}

// KL(N(mu, softplus(raw)^2) || N(0, s^2)) summed over one block, on a tape.
int kl_block_on_tape(Tape& t, int mu, int raw, double prior_scale) {
  const double s2 = prior_scale * prior_scale;
  const int sig2 = t.square(t.softplus(raw));
  const int ratio = t.scale(sig2, 1.0 / s2);
  const int mu_term = t.scale(t.square(mu), 1.0 / s2);
  const int log_term = t.add_scalar(t.log(sig2), -std::log(s2));
  const int inner =
      t.add_scalar(t.sub(t.add(ratio, mu_term), log_term), -1.0);
  return t.scale(t.sum(inner), 0.5);
}

double kl_block(const Matrix& mu, const Matrix& raw, double prior_scale) {
  const double s2 = prior_scale * prior_scale;
  double kl = 0.0;
  for (Eigen::Index j = 0; j < mu.cols(); ++j) {
    for (Eigen::Index i = 0; i < mu.rows(); ++i) {
      const double sig = softplus_scalar(raw(i, j));
      const double sig2 = sig * sig;
      kl += 0.5 * (sig2 / s2 + mu(i, j) * mu(i, j) / s2 - 1.0 -
                   std::log(sig2 / s2));
    }
  }
  return kl;
}

}  // namespace

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      m(i, j) = rng.normal();
    }
  }
  return m;
}

DenseLayer init_dense(int in, int out, Activation act, Rng& rng) {
  DenseLayer l;
  const double limit = std::sqrt(6.0 / (in + out));
  l.W.resize(in, out);
  for (Eigen::Index j = 0; j < out; ++j) {
    for (Eigen::Index i = 0; i < in; ++i) {
      l.W(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
    }
  }
  l.b = Matrix::Zero(1, out);
  l.act = act;
  return l;
}

VariationalDense init_variational(int in, int out, Activation act,
                                  double prior_scale, Rng& rng) {
  const DenseLayer base = init_dense(in, out, act, rng);
  // softplus(raw) = 0.05 initial posterior scale
  const double raw0 = std::log(std::expm1(0.05));
  VariationalDense v;
  v.w_mean = base.W;
  v.b_mean = base.b;
  v.w_raw = Matrix::Constant(in, out, raw0);
  v.b_raw = Matrix::Constant(1, out, raw0);
  v.act = act;
  v.prior_scale = prior_scale;
  return v;
}

Mlp make_mlp(int in, const std::vector<int>& hidden, int out, Rng& rng) {
  Mlp net;
  int prev = in;
  for (int width : hidden) {
    net.layers.push_back(init_dense(prev, width, Activation::kLeakyRelu, rng));
    prev = width;
  }
  net.layers.push_back(init_dense(prev, out, Activation::kIdentity, rng));
  return net;
}

GeneratorNet make_generator(int z_dim, int p, const std::vector<int>& units,
                            double var_floor, Rng& rng) {
  GeneratorNet gen;
  int prev = z_dim;
  for (int width : units) {
    gen.trunk.layers.push_back(
        init_dense(prev, width, Activation::kLeakyRelu, rng));
    prev = width;
  }
  gen.mean_head = init_dense(prev, p, Activation::kIdentity, rng);
  gen.var_head = init_dense(prev, p, Activation::kIdentity, rng);
  gen.var_floor = var_floor;
  return gen;
}

MissingnessNet make_missingness(int p, const std::vector<int>& units,
                                Rng& rng) {
  MissingnessNet net;
  int prev = p;
  for (int width : units) {
    net.trunk.layers.push_back(
        init_dense(prev, width, Activation::kLeakyRelu, rng));
    prev = width;
  }
  net.logit_head = init_dense(prev, p, Activation::kIdentity, rng);
  return net;
}

BnnGenerator make_bnn_generator(int z_dim, int p, const std::vector<int>& units,
                                double var_floor, double prior_scale,
                                Rng& rng) {
  BnnGenerator gen;
  int prev = z_dim;
  for (int width : units) {
    gen.trunk.push_back(init_variational(prev, width, Activation::kLeakyRelu,
                                         prior_scale, rng));
    prev = width;
  }
  gen.mean_head =
      init_variational(prev, p, Activation::kIdentity, prior_scale, rng);
  gen.var_head =
      init_variational(prev, p, Activation::kIdentity, prior_scale, rng);
  gen.var_floor = var_floor;
  return gen;
}

BnnMissingness make_bnn_missingness(int p, const std::vector<int>& units,
                                    double prior_scale, Rng& rng) {
  BnnMissingness net;
  int prev = p;
  for (int width : units) {
    net.trunk.push_back(init_variational(prev, width, Activation::kLeakyRelu,
                                         prior_scale, rng));
    prev = width;
  }
  net.logit_head =
      init_variational(prev, p, Activation::kIdentity, prior_scale, rng);
  return net;
}

Matrix dense_forward(const Matrix& x, const DenseLayer& layer) {
  if (x.cols() != layer.W.rows()) {
    throw ShapeError("dense_forward",
                     "dense_forward: input width " + std::to_string(x.cols()) +
                         " != layer fan-in " + std::to_string(layer.W.rows()));
  }
  Matrix h(x.rows(), layer.W.cols());
  // Row-at-a-time products keep batched results coordinatewise identical to
  // single-sample calls.
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    h.row(i).noalias() = x.row(i) * layer.W;
  }
  h.rowwise() += layer.b.row(0);
  apply_activation(h, layer.act);
  return h;
}

Matrix mlp_forward(const Matrix& x, const Mlp& net) {
  Matrix h = x;
  int index = 0;
  for (const DenseLayer& layer : net.layers) {
    h = dense_forward(h, layer);
    check_layer_finite(h, "mlp", index++);
  }
  return h;
}

std::pair<Matrix, Matrix> generator_forward(const Matrix& z,
                                            const GeneratorNet& gen) {
  Matrix h = z;
  int index = 0;
  for (const DenseLayer& layer : gen.trunk.layers) {
    h = dense_forward(h, layer);
    check_layer_finite(h, "generator", index++);
  }
  Matrix mean = dense_forward(h, gen.mean_head);
  check_layer_finite(mean, "generator mean head", index);
  Matrix var = dense_forward(h, gen.var_head);
  var = var.unaryExpr([floor = gen.var_floor](double s) {
    return softplus_scalar(s) + floor;
  });
  check_layer_finite(var, "generator var head", index);
  return {std::move(mean), std::move(var)};
}

Matrix missingness_forward(const Matrix& x, const MissingnessNet& net) {
  Matrix h = x;
  int index = 0;
  for (const DenseLayer& layer : net.trunk.layers) {
    h = dense_forward(h, layer);
    check_layer_finite(h, "missingness", index++);
  }
  Matrix logits = dense_forward(h, net.logit_head);
  check_layer_finite(logits, "missingness logit head", index);
  return logits;
}

int dense_on_tape(Tape& t, int x, int w, int b, Activation act) {
  return activation_on_tape(t, t.affine(x, w, b), act);
}

int mlp_on_tape(Tape& t, int x, const Mlp& net, std::vector<int>* param_ids) {
  int h = x;
  for (const DenseLayer& layer : net.layers) {
    const int w = t.input(layer.W);
    const int b = t.input(layer.b);
    if (param_ids != nullptr) {
      param_ids->push_back(w);
      param_ids->push_back(b);
    }
    h = dense_on_tape(t, h, w, b, layer.act);
  }
  return h;
}

GenOnTape generator_on_tape(Tape& t, int z, const GeneratorNet& gen) {
  GenOnTape out;
  int h = z;
  for (const DenseLayer& layer : gen.trunk.layers) {
    const int w = t.input(layer.W);
    const int b = t.input(layer.b);
    out.param_ids.push_back(w);
    out.param_ids.push_back(b);
    h = dense_on_tape(t, h, w, b, layer.act);
  }
  const int wm = t.input(gen.mean_head.W);
  const int bm = t.input(gen.mean_head.b);
  out.param_ids.push_back(wm);
  out.param_ids.push_back(bm);
  out.mean = t.affine(h, wm, bm);

  const int wv = t.input(gen.var_head.W);
  const int bv = t.input(gen.var_head.b);
  out.param_ids.push_back(wv);
  out.param_ids.push_back(bv);
  out.var = t.add_scalar(t.softplus(t.affine(h, wv, bv)), gen.var_floor);
  return out;
}

MissOnTape missingness_on_tape(Tape& t, int x, const MissingnessNet& net) {
  MissOnTape out;
  int h = x;
  for (const DenseLayer& layer : net.trunk.layers) {
    const int w = t.input(layer.W);
    const int b = t.input(layer.b);
    out.param_ids.push_back(w);
    out.param_ids.push_back(b);
    h = dense_on_tape(t, h, w, b, layer.act);
  }
  const int w = t.input(net.logit_head.W);
  const int b = t.input(net.logit_head.b);
  out.param_ids.push_back(w);
  out.param_ids.push_back(b);
  out.logits = t.affine(h, w, b);
  return out;
}

namespace {

// Sampled weight node pair for one variational layer, recording param ids
// and accumulating the KL node.
struct SampledLayer {
  int w = -1;
  int b = -1;
};

SampledLayer variational_layer_on_tape(Tape& t, const VariationalDense& layer,
                                       Rng& rng, bool with_kl,
                                       std::vector<int>& param_ids, int& kl) {
  const int wm = t.input(layer.w_mean);
  const int wr = t.input(layer.w_raw);
  const int bm = t.input(layer.b_mean);
  const int br = t.input(layer.b_raw);
  param_ids.insert(param_ids.end(), {wm, wr, bm, br});

  const int eps_w =
      t.constant(normal_matrix(layer.w_mean.rows(), layer.w_mean.cols(), rng));
  const int eps_b =
      t.constant(normal_matrix(1, layer.b_mean.cols(), rng));

  SampledLayer s;
  s.w = t.add(wm, t.mul(t.softplus(wr), eps_w));
  s.b = t.add(bm, t.mul(t.softplus(br), eps_b));
  if (with_kl) {
    const int kl_w = kl_block_on_tape(t, wm, wr, layer.prior_scale);
    const int kl_b = kl_block_on_tape(t, bm, br, layer.prior_scale);
    const int kl_layer = t.add(kl_w, kl_b);
    kl = kl < 0 ? kl_layer : t.add(kl, kl_layer);
  }
  return s;
}

}  // namespace

BnnGenOnTape bnn_generator_on_tape(Tape& t, int z, const BnnGenerator& gen,
                                   Rng& rng, bool with_kl) {
  BnnGenOnTape out;
  int h = z;
  for (const VariationalDense& layer : gen.trunk) {
    const SampledLayer s =
        variational_layer_on_tape(t, layer, rng, with_kl, out.param_ids, out.kl);
    h = dense_on_tape(t, h, s.w, s.b, layer.act);
  }
  const SampledLayer sm = variational_layer_on_tape(t, gen.mean_head, rng,
                                                    with_kl, out.param_ids,
                                                    out.kl);
  out.mean = t.affine(h, sm.w, sm.b);
  const SampledLayer sv = variational_layer_on_tape(t, gen.var_head, rng,
                                                    with_kl, out.param_ids,
                                                    out.kl);
  out.var = t.add_scalar(t.softplus(t.affine(h, sv.w, sv.b)), gen.var_floor);
  return out;
}

BnnMissOnTape bnn_missingness_on_tape(Tape& t, int x, const BnnMissingness& net,
                                      Rng& rng, bool with_kl) {
  BnnMissOnTape out;
  int h = x;
  for (const VariationalDense& layer : net.trunk) {
    const SampledLayer s =
        variational_layer_on_tape(t, layer, rng, with_kl, out.param_ids, out.kl);
    h = dense_on_tape(t, h, s.w, s.b, layer.act);
  }
  const SampledLayer sl = variational_layer_on_tape(t, net.logit_head, rng,
                                                    with_kl, out.param_ids,
                                                    out.kl);
  out.logits = t.affine(h, sl.w, sl.b);
  return out;
}

DenseLayer bnn_sample(const VariationalDense& layer, Rng& rng) {
  DenseLayer l;
  l.W = layer.w_mean +
        layer.w_raw.unaryExpr([](double r) { return softplus_scalar(r); })
            .cwiseProduct(
                normal_matrix(layer.w_mean.rows(), layer.w_mean.cols(), rng));
  l.b = layer.b_mean +
        layer.b_raw.unaryExpr([](double r) { return softplus_scalar(r); })
            .cwiseProduct(normal_matrix(1, layer.b_mean.cols(), rng));
  l.act = layer.act;
  return l;
}

double bnn_kl(const VariationalDense& layer) {
  return kl_block(layer.w_mean, layer.w_raw, layer.prior_scale) +
         kl_block(layer.b_mean, layer.b_raw, layer.prior_scale);
}

GeneratorNet bnn_sample(const BnnGenerator& gen, Rng& rng) {
  GeneratorNet g;
  for (const VariationalDense& layer : gen.trunk) {
    g.trunk.layers.push_back(bnn_sample(layer, rng));
  }
  g.mean_head = bnn_sample(gen.mean_head, rng);
  g.var_head = bnn_sample(gen.var_head, rng);
  g.var_floor = gen.var_floor;
  return g;
}

MissingnessNet bnn_sample(const BnnMissingness& net, Rng& rng) {
  MissingnessNet m;
  for (const VariationalDense& layer : net.trunk) {
    m.trunk.layers.push_back(bnn_sample(layer, rng));
  }
  m.logit_head = bnn_sample(net.logit_head, rng);
  return m;
}

double bnn_kl(const BnnGenerator& gen) {
  double kl = 0.0;
  for (const VariationalDense& layer : gen.trunk) kl += bnn_kl(layer);
  return kl + bnn_kl(gen.mean_head) + bnn_kl(gen.var_head);
}

double bnn_kl(const BnnMissingness& net) {
  double kl = 0.0;
  for (const VariationalDense& layer : net.trunk) kl += bnn_kl(layer);
  return kl + bnn_kl(net.logit_head);
}

GeneratorNet bnn_mean_net(const BnnGenerator& gen) {
  GeneratorNet g;
  for (const VariationalDense& layer : gen.trunk) {
    g.trunk.layers.push_back({layer.w_mean, layer.b_mean, layer.act});
  }
  g.mean_head = {gen.mean_head.w_mean, gen.mean_head.b_mean,
                 gen.mean_head.act};
  g.var_head = {gen.var_head.w_mean, gen.var_head.b_mean, gen.var_head.act};
  g.var_floor = gen.var_floor;
  return g;
}

MissingnessNet bnn_mean_net(const BnnMissingness& net) {
  MissingnessNet m;
  for (const VariationalDense& layer : net.trunk) {
    m.trunk.layers.push_back({layer.w_mean, layer.b_mean, layer.act});
  }
  m.logit_head = {net.logit_head.w_mean, net.logit_head.b_mean,
                  net.logit_head.act};
  return m;
}

std::vector<Matrix*> params_of(Mlp& net) {
  std::vector<Matrix*> out;
  for (DenseLayer& layer : net.layers) {
    out.push_back(&layer.W);
    out.push_back(&layer.b);
  }
  return out;
}

std::vector<Matrix*> params_of(GeneratorNet& gen) {
  std::vector<Matrix*> out;
  for (DenseLayer& layer : gen.trunk.layers) {
    out.push_back(&layer.W);
    out.push_back(&layer.b);
  }
  out.push_back(&gen.mean_head.W);
  out.push_back(&gen.mean_head.b);
  out.push_back(&gen.var_head.W);
  out.push_back(&gen.var_head.b);
  return out;
}

std::vector<Matrix*> params_of(MissingnessNet& net) {
  std::vector<Matrix*> out;
  for (DenseLayer& layer : net.trunk.layers) {
    out.push_back(&layer.W);
    out.push_back(&layer.b);
  }
  out.push_back(&net.logit_head.W);
  out.push_back(&net.logit_head.b);
  return out;
}

namespace {
void push_variational(std::vector<Matrix*>& out, VariationalDense& v) {
  out.push_back(&v.w_mean);
  out.push_back(&v.w_raw);
  out.push_back(&v.b_mean);
  out.push_back(&v.b_raw);
}
}  // namespace

std::vector<Matrix*> params_of(BnnGenerator& gen) {
  std::vector<Matrix*> out;
  for (VariationalDense& layer : gen.trunk) push_variational(out, layer);
  push_variational(out, gen.mean_head);
  push_variational(out, gen.var_head);
  return out;
}

std::vector<Matrix*> params_of(BnnMissingness& net) {
  std::vector<Matrix*> out;
  for (VariationalDense& layer : net.trunk) push_variational(out, layer);
  push_variational(out, net.logit_head);
  return out;
}

std::vector<const Matrix*> params_of(const GeneratorNet& gen) {
  const std::vector<Matrix*> mut = params_of(const_cast<GeneratorNet&>(gen));
  return {mut.begin(), mut.end()};
}

std::vector<const Matrix*> params_of(const MissingnessNet& net) {
  const std::vector<Matrix*> mut = params_of(const_cast<MissingnessNet&>(net));
  return {mut.begin(), mut.end()};
}

double squared_param_norm(const std::vector<Matrix*>& params) {
  double s = 0.0;
  for (const Matrix* m : params) s += m->squaredNorm();
  return s;
}

double squared_param_norm(const std::vector<const Matrix*>& params) {
  double s = 0.0;
  for (const Matrix* m : params) s += m->squaredNorm();
  return s;
}

}  // namespace missbgm
