#include "missbgm/checkpoint.hpp"

#include <fstream>

#include "missbgm/text_io.hpp"

namespace missbgm {

namespace {

const char* act_name(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu:
      return "leaky";
    case Activation::kTanh:
      return "tanh";
    case Activation::kIdentity:
      return "identity";
  }
  return "identity";
}

Activation act_from(const std::string& s, const std::string& path) {
  if (s == "leaky") return Activation::kLeakyRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw DataError(path + ": unknown activation '" + s + "'");
}

void write_matrix(std::ofstream& out, const Matrix& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ' ';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

Matrix read_matrix(std::ifstream& in, const std::string& path) {
  Eigen::Index r = 0, c = 0;
  if (!(in >> r >> c) || r < 0 || c < 0) {
    throw DataError(path + ": bad matrix header");
  }
  Matrix m(r, c);
  std::string tok;
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      if (!(in >> tok)) throw DataError(path + ": truncated matrix");
      double v;
      if (!parse_double(tok, v)) {
        throw DataError(path + ": bad value '" + tok + "'");
      }
      m(i, j) = v;
    }
  }
  return m;
}

void write_dense(std::ofstream& out, const DenseLayer& l) {
  out << "layer " << act_name(l.act) << '\n';
  write_matrix(out, l.W);
  write_matrix(out, l.b);
}

DenseLayer read_dense(std::ifstream& in, const std::string& path) {
  std::string tag, act;
  if (!(in >> tag >> act) || tag != "layer") {
    throw DataError(path + ": expected layer record");
  }
  DenseLayer l;
  l.act = act_from(act, path);
  l.W = read_matrix(in, path);
  l.b = read_matrix(in, path);
  return l;
}

void write_variational(std::ofstream& out, const VariationalDense& l) {
  out << "vlayer " << act_name(l.act) << ' ' << format_double(l.prior_scale)
      << '\n';
  write_matrix(out, l.w_mean);
  write_matrix(out, l.w_raw);
  write_matrix(out, l.b_mean);
  write_matrix(out, l.b_raw);
}

VariationalDense read_variational(std::ifstream& in, const std::string& path) {
  std::string tag, act, scale;
  if (!(in >> tag >> act >> scale) || tag != "vlayer") {
    throw DataError(path + ": expected vlayer record");
  }
  VariationalDense l;
  l.act = act_from(act, path);
  if (!parse_double(scale, l.prior_scale)) {
    throw DataError(path + ": bad prior scale");
  }
  l.w_mean = read_matrix(in, path);
  l.w_raw = read_matrix(in, path);
  l.b_mean = read_matrix(in, path);
  l.b_raw = read_matrix(in, path);
  return l;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "missbgm-checkpoint v1\n";
  out << "z_dim " << ck.z_dim << '\n';
  out << "beta " << format_double(ck.beta) << '\n';
  out << "var_floor " << format_double(ck.gen.var_floor) << '\n';
  out << "use_bnn " << (ck.bnn_gen.has_value() ? 1 : 0) << '\n';
  out << "scaler " << (ck.scaler.identity() ? 0 : 1) << '\n';
  if (!ck.scaler.identity()) {
    write_matrix(out, ck.scaler.mean);
    write_matrix(out, ck.scaler.std);
  }

  out << "generator " << ck.gen.trunk.layers.size() << '\n';
  for (const DenseLayer& l : ck.gen.trunk.layers) write_dense(out, l);
  write_dense(out, ck.gen.mean_head);
  write_dense(out, ck.gen.var_head);

  out << "missingness " << ck.miss.trunk.layers.size() << '\n';
  for (const DenseLayer& l : ck.miss.trunk.layers) write_dense(out, l);
  write_dense(out, ck.miss.logit_head);

  if (ck.bnn_gen.has_value()) {
    out << "bnn_generator " << ck.bnn_gen->trunk.size() << '\n';
    for (const VariationalDense& l : ck.bnn_gen->trunk) {
      write_variational(out, l);
    }
    write_variational(out, ck.bnn_gen->mean_head);
    write_variational(out, ck.bnn_gen->var_head);
    out << "bnn_missingness " << ck.bnn_miss->trunk.size() << '\n';
    for (const VariationalDense& l : ck.bnn_miss->trunk) {
      write_variational(out, l);
    }
    write_variational(out, ck.bnn_miss->logit_head);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open for reading: " + path);
  std::string line;
  std::getline(in, line);
  if (trim(line) != "missbgm-checkpoint v1") {
    throw DataError(path + ": not a checkpoint file");
  }
  Checkpoint ck;
  std::string key;
  int use_bnn = 0, has_scaler = 0;
  double var_floor = 1e-4;
  in >> key >> ck.z_dim;
  in >> key >> line;
  parse_double(line, ck.beta);
  in >> key >> line;
  parse_double(line, var_floor);
  in >> key >> use_bnn;
  in >> key >> has_scaler;
  if (has_scaler != 0) {
    const Matrix mean = read_matrix(in, path);
    const Matrix sd = read_matrix(in, path);
    ck.scaler.mean = mean.row(0);
    ck.scaler.std = sd.row(0);
  }

  std::size_t n_trunk = 0;
  in >> key >> n_trunk;
  if (key != "generator") throw DataError(path + ": expected generator");
  for (std::size_t l = 0; l < n_trunk; ++l) {
    ck.gen.trunk.layers.push_back(read_dense(in, path));
  }
  ck.gen.mean_head = read_dense(in, path);
  ck.gen.var_head = read_dense(in, path);
  ck.gen.var_floor = var_floor;

  in >> key >> n_trunk;
  if (key != "missingness") throw DataError(path + ": expected missingness");
  for (std::size_t l = 0; l < n_trunk; ++l) {
    ck.miss.trunk.layers.push_back(read_dense(in, path));
  }
  ck.miss.logit_head = read_dense(in, path);

  if (use_bnn != 0) {
    BnnGenerator bg;
    in >> key >> n_trunk;
    if (key != "bnn_generator") throw DataError(path + ": expected bnn_generator");
    for (std::size_t l = 0; l < n_trunk; ++l) {
      bg.trunk.push_back(read_variational(in, path));
    }
    bg.mean_head = read_variational(in, path);
    bg.var_head = read_variational(in, path);
    bg.var_floor = var_floor;
    ck.bnn_gen = std::move(bg);

    BnnMissingness bm;
    in >> key >> n_trunk;
    if (key != "bnn_missingness") {
      throw DataError(path + ": expected bnn_missingness");
    }
    for (std::size_t l = 0; l < n_trunk; ++l) {
      bm.trunk.push_back(read_variational(in, path));
    }
    bm.logit_head = read_variational(in, path);
    ck.bnn_miss = std::move(bm);
  }
  return ck;
}

}  // namespace missbgm
