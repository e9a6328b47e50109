#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "pba/errors.hpp"

namespace pba {

// IRLS weight of the Huber rho': 1 inside the quadratic region, delta/||r||
// outside.
double huber_weight(double residual_norm, double delta);

// Robust loss attached to a residual block. The block cost is
// weight * q(||r||) with
//   kNone      q(t) = t^2
//   kHuber     q(t) = t^2 for t <= delta, 2*delta*t - delta^2 above
//   kHuberFit  q(t) = t^2 for t <= delta, delta^2 (1 + 2 ln(t/delta)) above;
//              its IRLS weight is the square of the Huber weight, i.e. the
//              Huber loss composed with an extra residual-fit reweighting.
struct RobustLoss {
  enum Kind { kNone, kHuber, kHuberFit };
  Kind kind = kNone;
  double delta = 1.0;

  static RobustLoss none() { return {kNone, 1.0}; }
  static RobustLoss huber(double delta) { return {kHuber, delta}; }
  static RobustLoss huber_fit(double delta) { return {kHuberFit, delta}; }

  double cost(double t) const;
  double irls_weight(double t) const;
};

struct IterationRecord {
  double cost = 0.0;       // cost after the attempt (tentative cost if rejected)
  double grad_norm = 0.0;  // inf-norm of G = 2 J^T W r at the linearization point
  double step_norm = 0.0;
  double damping = 0.0;
  bool accepted = false;
};

struct SolveReport {
  enum Termination { kConverged, kMaxIter, kStalled };
  std::vector<IterationRecord> iterations;
  Termination termination = kConverged;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int accepted_steps = 0;
};

struct SolveOptions {
  int max_iter = 50;
  double cost_tol = 1e-12;   // relative cost drop per accepted step
  double grad_tol = 1e-14;   // inf-norm of G
  double step_tol = 1e-14;   // relative step norm per accepted step
  double initial_damping = 1e-4;  // mu0 = initial_damping * max diag(H)
};

// Writes "iteration,cost,grad_norm" rows for convergence plots.
void write_report_csv(const SolveReport& report, const std::string& path);

struct HessianEval {
  Eigen::MatrixXd H;   // J^T W J over all blocks, insertion order, no damping
  Eigen::VectorXd G;   // 2 J^T W r (Gauss-Newton step is -H^{-1} G / 2)
  double F0 = 0.0;     // robust cost at the current state
  std::vector<int> block_offsets;  // offset of each block, insertion order
};

// Nonlinear least-squares problem over parameter blocks. Residual callbacks
// receive the current block values and fill the residual and (optionally)
// one Jacobian per referenced block; they return false to flag an evaluation
// that is invalid at the probed state (the solver then rejects the step).
class Problem {
 public:
  using EvalFn = std::function<bool(const std::vector<const Eigen::VectorXd*>& params,
                                    Eigen::VectorXd& residual,
                                    std::vector<Eigen::MatrixXd>* jacobians)>;
  // Called after every accepted step; folds local increments into external
  // state (e.g. rotation bases) and resets the block values accordingly.
  using RebaseFn = std::function<void(Eigen::VectorXd& values)>;

  int add_block(int dim, const Eigen::VectorXd& initial);
  void set_constant(int block_id, bool constant = true);
  // Freezes individual coordinates of a block (e.g. the scale entry of a
  // similarity block used as gauge).
  void set_constant_coords(int block_id, const std::vector<int>& coords);
  void set_rebase(int block_id, RebaseFn fn);

  const Eigen::VectorXd& values(int block_id) const;
  void set_values(int block_id, const Eigen::VectorXd& v);
  int block_dim(int block_id) const;
  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  int num_residual_blocks() const { return static_cast<int>(residuals_.size()); }

  int add_residual(const std::vector<int>& block_ids, int residual_dim, EvalFn fn,
                   RobustLoss loss = RobustLoss::none(), double weight = 1.0);
  void set_residual_weight(int residual_id, double weight);

  // Robust cost at the current state. Throws what the callbacks throw.
  double evaluate_cost() const;
  // Per-block residual norms at the current state (for adaptive loss scales).
  std::vector<double> residual_block_norms() const;

  friend HessianEval evaluate_hessian(const Problem& p);
  friend SolveReport solve(Problem& p, const SolveOptions& opts);

 private:
  struct Block {
    Eigen::VectorXd values;
    bool constant = false;
    std::vector<uint8_t> frozen;  // per-coordinate
    RebaseFn rebase;
  };
  struct Residual {
    std::vector<int> blocks;
    int dim = 0;
    EvalFn fn;
    RobustLoss loss;
    double weight = 1.0;
  };

  std::vector<Block> blocks_;
  std::vector<Residual> residuals_;
};

// Gauss-Newton normal equations at the current state (dense, all blocks).
HessianEval evaluate_hessian(const Problem& p);

// Levenberg-Marquardt with additive damping mu * I on the free coordinates.
// Throws NumericalFailure when a free coordinate is structurally
// unconstrained (zero Gauss-Newton diagonal): the gauge must be fixed or
// priored by the caller.
SolveReport solve(Problem& p, const SolveOptions& opts = {});

}  // namespace pba
