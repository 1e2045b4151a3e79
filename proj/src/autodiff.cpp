#include "pcnet/autodiff.hpp"

#include <cmath>

#include "pcnet/numeric.hpp"

namespace pcnet {

double GradientBundle::norm() const {
  double sq = 0.0;
  for (const auto& [id, g] : grads)
    for (double v : g) sq += v * v;
  return std::sqrt(sq);
}

GradientBundle& GradientBundle::operator*=(double c) {
  for (auto& [id, g] : grads)
    for (double& v : g) v *= c;
  return *this;
}

GradientBundle& GradientBundle::operator+=(const GradientBundle& other) {
  for (const auto& [id, g] : other.grads) {
    auto& mine = grads[id];
    if (mine.empty()) mine.assign(g.size(), 0.0);
    if (mine.size() != g.size()) throw Error("gradient shape mismatch for " + id);
    for (std::size_t i = 0; i < g.size(); ++i) mine[i] += g[i];
  }
  return *this;
}

GradientBundle clip_global_norm(GradientBundle g, double max_norm) {
  if (!(max_norm > 0.0)) throw Error("clip_global_norm: max_norm must be positive");
  const double n = g.norm();
  if (n > max_norm) g *= max_norm / n;
  return g;
}

const char* to_string(Primitive p) {
  switch (p) {
    case Primitive::kConstant: return "constant";
    case Primitive::kParameter: return "parameter";
    case Primitive::kMatVec: return "matvec";
    case Primitive::kAdd: return "add";
    case Primitive::kSub: return "sub";
    case Primitive::kMul: return "mul";
    case Primitive::kScale: return "scale";
    case Primitive::kAddScalar: return "add_scalar";
    case Primitive::kRelu: return "relu";
    case Primitive::kSigmoid: return "sigmoid";
    case Primitive::kSoftplus: return "softplus";
    case Primitive::kGather: return "gather";
    case Primitive::kLogSoftmaxRows: return "log_softmax_rows";
    case Primitive::kGaussianLogPdf: return "gaussian_log_pdf";
    case Primitive::kLaplaceLogPdf: return "laplace_log_pdf";
    case Primitive::kStudentTLogNorm: return "student_t_log_norm";
    case Primitive::kStudentTLogPdf: return "student_t_log_pdf";
    case Primitive::kStackColumns: return "stack_columns";
    case Primitive::kLogSumExpRows: return "logsumexp_rows";
    case Primitive::kCircuitPass: return "circuit_pass";
    case Primitive::kSum: return "sum";
  }
  return "unknown";
}

Slot Tape::record(Op op, std::vector<double> value) {
  op.out = values_.size();
  values_.push_back(std::move(value));
  ops_.push_back(std::move(op));
  return ops_.back().out;
}

const std::vector<double>& Tape::checked(Slot s) const {
  if (s >= values_.size()) throw Error("tape slot " + std::to_string(s) + " has not been written");
  return values_[s];
}

void Tape::require_same_size(Slot a, Slot b, const char* what) const {
  if (checked(a).size() != checked(b).size())
    throw Error(std::string(what) + ": operand sizes differ (" + std::to_string(values_[a].size()) + " vs " +
                std::to_string(values_[b].size()) + ")");
}

double Tape::scalar(Slot s) const {
  const auto& v = checked(s);
  if (v.size() != 1) throw Error("slot " + std::to_string(s) + " is not a scalar");
  return v[0];
}

Slot Tape::constant(std::vector<double> value) { return record({Primitive::kConstant, {}}, std::move(value)); }

Slot Tape::parameter(const std::string& id, std::span<const double> value) {
  if (auto it = parameters_.find(id); it != parameters_.end()) return it->second;
  const Slot s = record({Primitive::kParameter, {}}, std::vector<double>(value.begin(), value.end()));
  parameters_.emplace(id, s);
  return s;
}

Slot Tape::matvec(Slot matrix, std::size_t rows, std::size_t cols, Slot x) {
  const auto& w = checked(matrix);
  const auto& xv = checked(x);
  if (w.size() != rows * cols || xv.size() != cols) throw Error("matvec: shape mismatch");
  std::vector<double> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * xv[c];
    y[r] = acc;
  }
  Op op{Primitive::kMatVec, {matrix, x}};
  op.rows = rows;
  op.cols = cols;
  return record(std::move(op), std::move(y));
}

Slot Tape::add(Slot a, Slot b) {
  require_same_size(a, b, "add");
  std::vector<double> y = values_[a];
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += values_[b][i];
  return record({Primitive::kAdd, {a, b}}, std::move(y));
}

Slot Tape::sub(Slot a, Slot b) {
  require_same_size(a, b, "sub");
  std::vector<double> y = values_[a];
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= values_[b][i];
  return record({Primitive::kSub, {a, b}}, std::move(y));
}

Slot Tape::mul(Slot a, Slot b) {
  require_same_size(a, b, "mul");
  std::vector<double> y = values_[a];
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= values_[b][i];
  return record({Primitive::kMul, {a, b}}, std::move(y));
}

Slot Tape::scale(Slot x, double c) {
  std::vector<double> y = checked(x);
  for (double& v : y) v *= c;
  Op op{Primitive::kScale, {x}};
  op.c = c;
  return record(std::move(op), std::move(y));
}

Slot Tape::add_scalar(Slot x, double c) {
  std::vector<double> y = checked(x);
  for (double& v : y) v += c;
  Op op{Primitive::kAddScalar, {x}};
  op.c = c;
  return record(std::move(op), std::move(y));
}

Slot Tape::relu(Slot x) {
  std::vector<double> y = checked(x);
  for (double& v : y) v = v > 0.0 ? v : 0.0;
  return record({Primitive::kRelu, {x}}, std::move(y));
}

Slot Tape::sigmoid(Slot x) {
  std::vector<double> y = checked(x);
  for (double& v : y) v = pcnet::sigmoid(v);
  return record({Primitive::kSigmoid, {x}}, std::move(y));
}

Slot Tape::softplus(Slot x) {
  std::vector<double> y = checked(x);
  for (double& v : y) v = pcnet::softplus(v);
  return record({Primitive::kSoftplus, {x}}, std::move(y));
}

Slot Tape::gather(Slot x, std::shared_ptr<const std::vector<std::size_t>> index) {
  const auto& xv = checked(x);
  std::vector<double> y(index->size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv.at((*index)[i]);
  Op op{Primitive::kGather, {x}};
  op.index = std::move(index);
  return record(std::move(op), std::move(y));
}

Slot Tape::log_softmax_rows(Slot x, std::size_t cols) {
  std::vector<double> y = checked(x);
  if (cols == 0 || y.size() % cols != 0) throw Error("log_softmax_rows: size is not a multiple of cols");
  for (std::size_t r = 0; r < y.size() / cols; ++r) {
    std::span<double> row(y.data() + r * cols, cols);
    const double norm = logsumexp(row);
    for (double& v : row) v -= norm;
  }
  Op op{Primitive::kLogSoftmaxRows, {x}};
  op.cols = cols;
  return record(std::move(op), std::move(y));
}

Slot Tape::gaussian_log_pdf(Slot z, Slot loc, Slot log_scale) {
  require_same_size(z, loc, "gaussian_log_pdf");
  require_same_size(z, log_scale, "gaussian_log_pdf");
  const auto& zv = values_[z];
  const auto& mv = values_[loc];
  const auto& lv = values_[log_scale];
  std::vector<double> y(zv.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = (zv[i] - mv[i]) * std::exp(-lv[i]);
    y[i] = -0.5 * kLogTwoPi - lv[i] - 0.5 * r * r;
  }
  return record({Primitive::kGaussianLogPdf, {z, loc, log_scale}}, std::move(y));
}

Slot Tape::laplace_log_pdf(Slot z, Slot loc, Slot log_scale) {
  require_same_size(z, loc, "laplace_log_pdf");
  require_same_size(z, log_scale, "laplace_log_pdf");
  const auto& zv = values_[z];
  const auto& mv = values_[loc];
  const auto& lv = values_[log_scale];
  std::vector<double> y(zv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = -kLogTwo - lv[i] - std::abs(zv[i] - mv[i]) * std::exp(-lv[i]);
  return record({Primitive::kLaplaceLogPdf, {z, loc, log_scale}}, std::move(y));
}

Slot Tape::student_t_log_norm(Slot dof) {
  std::vector<double> y = checked(dof);
  for (double& v : y) v = std::lgamma(0.5 * (v + 1.0)) - std::lgamma(0.5 * v) - 0.5 * (std::log(v) + kLogPi);
  return record({Primitive::kStudentTLogNorm, {dof}}, std::move(y));
}

Slot Tape::student_t_log_pdf(Slot z, Slot loc, Slot log_scale, Slot dof, Slot log_norm) {
  for (Slot s : {loc, log_scale, dof, log_norm}) require_same_size(z, s, "student_t_log_pdf");
  const auto& zv = values_[z];
  const auto& mv = values_[loc];
  const auto& lv = values_[log_scale];
  const auto& nu = values_[dof];
  const auto& cv = values_[log_norm];
  std::vector<double> y(zv.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = (zv[i] - mv[i]) * std::exp(-lv[i]);
    y[i] = cv[i] - lv[i] - 0.5 * (nu[i] + 1.0) * std::log1p(r * r / nu[i]);
  }
  return record({Primitive::kStudentTLogPdf, {z, loc, log_scale, dof, log_norm}}, std::move(y));
}

Slot Tape::stack_columns(std::vector<Slot> columns) {
  if (columns.empty()) throw Error("stack_columns: no columns");
  for (Slot s : columns) require_same_size(columns.front(), s, "stack_columns");
  const std::size_t n = values_[columns.front()].size();
  const std::size_t k = columns.size();
  std::vector<double> y(n * k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < n; ++i) y[i * k + j] = values_[columns[j]][i];
  Op op{Primitive::kStackColumns, std::move(columns)};
  op.cols = k;
  return record(std::move(op), std::move(y));
}

Slot Tape::logsumexp_rows(Slot x, std::size_t cols) {
  const auto& xv = checked(x);
  if (cols == 0 || xv.size() % cols != 0) throw Error("logsumexp_rows: size is not a multiple of cols");
  std::vector<double> y(xv.size() / cols);
  for (std::size_t r = 0; r < y.size(); ++r) y[r] = logsumexp(std::span<const double>(xv.data() + r * cols, cols));
  Op op{Primitive::kLogSumExpRows, {x}};
  op.cols = cols;
  return record(std::move(op), std::move(y));
}

Slot Tape::circuit_pass(Slot leaf_values, Slot sum_log_weights, std::shared_ptr<const CircuitLayout> layout) {
  const auto& leaves = checked(leaf_values);
  const auto& weights = checked(sum_log_weights);
  if (leaves.size() != layout->leaf_dims.size() || weights.size() != layout->num_sum_weights)
    throw Error("circuit_pass: inputs do not match the circuit layout");
  const std::size_t n = layout->kinds.size();
  std::vector<double> node(n);
  std::vector<double> scratch;
  for (std::size_t id = 0; id < n; ++id) {
    const auto& ch = layout->children[id];
    switch (layout->kinds[id]) {
      case NodeKind::kLeaf:
        node[id] = leaves[layout->slot[id]];
        break;
      case NodeKind::kSum:
        scratch.resize(ch.size());
        for (std::size_t c = 0; c < ch.size(); ++c) scratch[c] = weights[layout->slot[id] + c] + node[ch[c]];
        node[id] = logsumexp(scratch);
        break;
      case NodeKind::kProduct: {
        double acc = 0.0;
        for (std::size_t c : ch) acc += node[c];
        node[id] = acc;
        break;
      }
    }
  }
  const double root = node[layout->root];
  Op op{Primitive::kCircuitPass, {leaf_values, sum_log_weights}};
  op.layout = std::move(layout);
  op.saved = std::move(node);
  return record(std::move(op), {root});
}

Slot Tape::sum(std::vector<Slot> inputs) {
  double acc = 0.0;
  for (Slot s : inputs)
    for (double v : checked(s)) acc += v;
  return record({Primitive::kSum, std::move(inputs)}, {acc});
}

GradientBundle Tape::backward(Slot loss) const {
  if (checked(loss).size() != 1) throw Error("backward: loss slot is not a scalar");
  std::vector<std::vector<double>> adj(values_.size());
  auto grad = [&](Slot s) -> std::vector<double>& {
    if (adj[s].empty()) adj[s].assign(values_[s].size(), 0.0);
    return adj[s];
  };
  grad(loss)[0] = 1.0;

  for (std::size_t k = ops_.size(); k-- > 0;) {
    const Op& op = ops_[k];
    if (adj[op.out].empty()) continue;
    const std::vector<double>& g = adj[op.out];
    const std::vector<double>& y = values_[op.out];
    switch (op.prim) {
      case Primitive::kConstant:
      case Primitive::kParameter:
        break;
      case Primitive::kMatVec: {
        const auto& w = values_[op.in[0]];
        const auto& x = values_[op.in[1]];
        auto& dw = grad(op.in[0]);
        auto& dx = grad(op.in[1]);
        for (std::size_t r = 0; r < op.rows; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          const double* row = w.data() + r * op.cols;
          double* drow = dw.data() + r * op.cols;
          for (std::size_t c = 0; c < op.cols; ++c) {
            drow[c] += gr * x[c];
            dx[c] += gr * row[c];
          }
        }
        break;
      }
      case Primitive::kAdd: {
        auto& da = grad(op.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        auto& db = grad(op.in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        break;
      }
      case Primitive::kSub: {
        auto& da = grad(op.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        auto& db = grad(op.in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
        break;
      }
      case Primitive::kMul: {
        const auto& a = values_[op.in[0]];
        const auto& b = values_[op.in[1]];
        auto& da = grad(op.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b[i];
        auto& db = grad(op.in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
        break;
      }
      case Primitive::kScale: {
        auto& dx = grad(op.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += op.c * g[i];
        break;
      }
      case Primitive::kAddScalar: {
        auto& dx = grad(op.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        break;
      }
      case Primitive::kRelu: {
        // Subgradient 0 at the kink.
        const auto& x = values_[op.in[0]];
        auto& dx = grad(op.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0) dx[i] += g[i];
        break;
      }
      case Primitive::kSigmoid: {
        auto& dx = grad(op.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Primitive::kSoftplus: {
        const auto& x = values_[op.in[0]];
        auto& dx = grad(op.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * pcnet::sigmoid(x[i]);
        break;
      }
      case Primitive::kGather: {
        auto& dx = grad(op.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dx[(*op.index)[i]] += g[i];
        break;
      }
      case Primitive::kLogSoftmaxRows: {
        auto& dx = grad(op.in[0]);
        for (std::size_t r = 0; r < g.size() / op.cols; ++r) {
          double gsum = 0.0;
          for (std::size_t c = 0; c < op.cols; ++c) gsum += g[r * op.cols + c];
          for (std::size_t c = 0; c < op.cols; ++c) {
            const std::size_t i = r * op.cols + c;
            if (y[i] == -kInf) continue;
            dx[i] += g[i] - std::exp(y[i]) * gsum;
          }
        }
        break;
      }
      case Primitive::kGaussianLogPdf: {
        const auto& z = values_[op.in[0]];
        const auto& m = values_[op.in[1]];
        const auto& l = values_[op.in[2]];
        auto& dz = grad(op.in[0]);
        auto& dm = grad(op.in[1]);
        auto& dl = grad(op.in[2]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double inv_s = std::exp(-l[i]);
          const double r = (z[i] - m[i]) * inv_s;
          dz[i] -= g[i] * r * inv_s;
          dm[i] += g[i] * r * inv_s;
          dl[i] += g[i] * (r * r - 1.0);
        }
        break;
      }
      case Primitive::kLaplaceLogPdf: {
        const auto& z = values_[op.in[0]];
        const auto& m = values_[op.in[1]];
        const auto& l = values_[op.in[2]];
        auto& dz = grad(op.in[0]);
        auto& dm = grad(op.in[1]);
        auto& dl = grad(op.in[2]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double inv_s = std::exp(-l[i]);
          const double d = z[i] - m[i];
          const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
          dz[i] -= g[i] * sign * inv_s;
          dm[i] += g[i] * sign * inv_s;
          dl[i] += g[i] * (std::abs(d) * inv_s - 1.0);
        }
        break;
      }
      case Primitive::kStudentTLogNorm: {
        const auto& nu = values_[op.in[0]];
        auto& dnu = grad(op.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
          dnu[i] += g[i] * (0.5 * digamma(0.5 * (nu[i] + 1.0)) - 0.5 * digamma(0.5 * nu[i]) - 0.5 / nu[i]);
        break;
      }
      case Primitive::kStudentTLogPdf: {
        const auto& z = values_[op.in[0]];
        const auto& m = values_[op.in[1]];
        const auto& l = values_[op.in[2]];
        const auto& nu = values_[op.in[3]];
        auto& dz = grad(op.in[0]);
        auto& dm = grad(op.in[1]);
        auto& dl = grad(op.in[2]);
        auto& dnu = grad(op.in[3]);
        auto& dc = grad(op.in[4]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double inv_s = std::exp(-l[i]);
          const double r = (z[i] - m[i]) * inv_s;
          const double r2 = r * r;
          const double denom = nu[i] + r2;
          const double d_r = -(nu[i] + 1.0) * r / denom;
          dz[i] += g[i] * d_r * inv_s;
          dm[i] -= g[i] * d_r * inv_s;
          dl[i] += g[i] * ((nu[i] + 1.0) * r2 / denom - 1.0);
          dnu[i] += g[i] * (-0.5 * std::log1p(r2 / nu[i]) + 0.5 * (nu[i] + 1.0) * r2 / (nu[i] * denom));
          dc[i] += g[i];
        }
        break;
      }
      case Primitive::kStackColumns: {
        const std::size_t k_cols = op.in.size();
        for (std::size_t j = 0; j < k_cols; ++j) {
          auto& dcol = grad(op.in[j]);
          for (std::size_t i = 0; i < dcol.size(); ++i) dcol[i] += g[i * k_cols + j];
        }
        break;
      }
      case Primitive::kLogSumExpRows: {
        const auto& x = values_[op.in[0]];
        auto& dx = grad(op.in[0]);
        for (std::size_t r = 0; r < g.size(); ++r) {
          if (y[r] == -kInf) continue;
          for (std::size_t c = 0; c < op.cols; ++c) {
            const std::size_t i = r * op.cols + c;
            dx[i] += g[r] * std::exp(x[i] - y[r]);
          }
        }
        break;
      }
      case Primitive::kCircuitPass: {
        const CircuitLayout& layout = *op.layout;
        const auto& node = op.saved;
        const auto& weights = values_[op.in[1]];
        auto& dleaf = grad(op.in[0]);
        auto& dw = grad(op.in[1]);
        std::vector<double> nadj(node.size(), 0.0);
        nadj[layout.root] = g[0];
        for (std::size_t id = layout.root + 1; id-- > 0;) {
          const double a = nadj[id];
          if (a == 0.0) continue;
          const auto& ch = layout.children[id];
          switch (layout.kinds[id]) {
            case NodeKind::kLeaf:
              dleaf[layout.slot[id]] += a;
              break;
            case NodeKind::kSum:
              if (node[id] == -kInf) break;
              for (std::size_t c = 0; c < ch.size(); ++c) {
                const double p = std::exp(weights[layout.slot[id] + c] + node[ch[c]] - node[id]);
                nadj[ch[c]] += a * p;
                dw[layout.slot[id] + c] += a * p;
              }
              break;
            case NodeKind::kProduct:
              for (std::size_t c : ch) nadj[c] += a;
              break;
          }
        }
        break;
      }
      case Primitive::kSum: {
        for (Slot s : op.in) {
          auto& dx = grad(s);
          for (double& v : dx) v += g[0];
        }
        break;
      }
    }
    for (Slot s : op.in) {
      if (adj[s].empty()) continue;
      for (double v : adj[s])
        if (std::isnan(v)) throw Error(std::string("NaN gradient in backward rule of ") + to_string(op.prim));
    }
  }

  GradientBundle out;
  for (const auto& [id, slot] : parameters_) {
    if (adj[slot].empty())
      out.grads[id].assign(values_[slot].size(), 0.0);
    else
      out.grads[id] = adj[slot];
  }
  return out;
}

}  // namespace pcnet
