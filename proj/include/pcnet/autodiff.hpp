#ifndef PCNET_AUTODIFF_HPP
#define PCNET_AUTODIFF_HPP

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pcnet/circuit.hpp"

namespace pcnet {

/// Gradients keyed by parameter id, each shaped like its parameter.
struct GradientBundle {
  std::map<std::string, std::vector<double>> grads;

  double norm() const;
  GradientBundle& operator*=(double c);
  GradientBundle& operator+=(const GradientBundle& other);
};

/// Rescales every gradient by max_norm / ||g|| when ||g|| > max_norm.
GradientBundle clip_global_norm(GradientBundle g, double max_norm);

using Slot = std::size_t;

enum class Primitive {
  kConstant,
  kParameter,
  kMatVec,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kRelu,
  kSigmoid,
  kSoftplus,
  kGather,
  kLogSoftmaxRows,
  kGaussianLogPdf,
  kLaplaceLogPdf,
  kStudentTLogNorm,
  kStudentTLogPdf,
  kStackColumns,
  kLogSumExpRows,
  kCircuitPass,
  kSum,
};

const char* to_string(Primitive p);

/// Flat reverse-mode tape over vector-valued primitives.
///
/// Every slot holds a dense vector (scalars are length 1). Operations are
/// evaluated eagerly when recorded and only read slots that already exist,
/// so the recording order is a topological order and backward() walks it in
/// reverse.
class Tape {
 public:
  Slot constant(std::vector<double> value);
  /// Binds a named parameter. Repeated binds of the same id return the
  /// first slot.
  Slot parameter(const std::string& id, std::span<const double> value);

  /// y = W x with W row-major (rows x cols).
  Slot matvec(Slot matrix, std::size_t rows, std::size_t cols, Slot x);
  Slot add(Slot a, Slot b);
  Slot sub(Slot a, Slot b);
  Slot mul(Slot a, Slot b);
  Slot scale(Slot x, double c);
  Slot add_scalar(Slot x, double c);
  Slot relu(Slot x);
  Slot sigmoid(Slot x);
  Slot softplus(Slot x);
  /// y[i] = x[index[i]].
  Slot gather(Slot x, std::shared_ptr<const std::vector<std::size_t>> index);
  Slot log_softmax_rows(Slot x, std::size_t cols);
  Slot gaussian_log_pdf(Slot z, Slot loc, Slot log_scale);
  Slot laplace_log_pdf(Slot z, Slot loc, Slot log_scale);
  /// lgamma((v+1)/2) - lgamma(v/2) - log(v*pi)/2, elementwise in dof.
  Slot student_t_log_norm(Slot dof);
  Slot student_t_log_pdf(Slot z, Slot loc, Slot log_scale, Slot dof, Slot log_norm);
  /// Interleaves equal-length columns into a row-major (n x columns) matrix.
  Slot stack_columns(std::vector<Slot> columns);
  Slot logsumexp_rows(Slot x, std::size_t cols);
  /// Root log-value of a circuit given per-leaf log-values and the flat
  /// sum-node log-weights.
  Slot circuit_pass(Slot leaf_values, Slot sum_log_weights, std::shared_ptr<const CircuitLayout> layout);
  /// Scalar sum of every entry of every input.
  Slot sum(std::vector<Slot> inputs);

  const std::vector<double>& value(Slot s) const { return values_.at(s); }
  double scalar(Slot s) const;
  std::size_t num_ops() const { return ops_.size(); }

  /// Reverse pass from a scalar slot. Parameters the loss does not reach get
  /// zero gradients.
  GradientBundle backward(Slot loss) const;

 private:
  struct Op {
    Primitive prim;
    std::vector<Slot> in;
    Slot out = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    double c = 0.0;
    std::shared_ptr<const std::vector<std::size_t>> index;
    std::shared_ptr<const CircuitLayout> layout;
    std::vector<double> saved;
  };

  Slot record(Op op, std::vector<double> value);
  const std::vector<double>& checked(Slot s) const;
  void require_same_size(Slot a, Slot b, const char* what) const;

  std::vector<std::vector<double>> values_;
  std::vector<Op> ops_;
  std::map<std::string, Slot> parameters_;
};

}  // namespace pcnet

#endif  // PCNET_AUTODIFF_HPP
