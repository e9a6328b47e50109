#include "pba/solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

namespace pba {

double huber_weight(double residual_norm, double delta) {
  if (!(delta > 0.0)) throw ValidationError("huber_weight: delta must be positive");
  return residual_norm <= delta ? 1.0 : delta / residual_norm;
}

double RobustLoss::cost(double t) const {
  switch (kind) {
    case kNone:
      return t * t;
    case kHuber:
      return t <= delta ? t * t : 2.0 * delta * t - delta * delta;
    case kHuberFit:
      return t <= delta ? t * t : delta * delta * (1.0 + 2.0 * std::log(t / delta));
  }
  return t * t;
}

double RobustLoss::irls_weight(double t) const {
  switch (kind) {
    case kNone:
      return 1.0;
    case kHuber:
      return huber_weight(t, delta);
    case kHuberFit: {
      const double w = huber_weight(t, delta);
      return w * w;
    }
  }
  return 1.0;
}

void write_report_csv(const SolveReport& report, const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ValidationError("write_report_csv: cannot open " + path);
  std::fprintf(f, "iteration,cost,grad_norm\n");
  int i = 0;
  for (const auto& it : report.iterations) {
    std::fprintf(f, "%d,%.17g,%.17g\n", i++, it.cost, it.grad_norm);
  }
  std::fclose(f);
}

int Problem::add_block(int dim, const Eigen::VectorXd& initial) {
  if (dim <= 0 || initial.size() != dim) {
    throw ValidationError("Problem::add_block: dimension mismatch");
  }
  Block b;
  b.values = initial;
  b.frozen.assign(dim, 0);
  blocks_.push_back(std::move(b));
  return static_cast<int>(blocks_.size()) - 1;
}

void Problem::set_constant(int block_id, bool constant) {
  blocks_.at(block_id).constant = constant;
}

void Problem::set_constant_coords(int block_id, const std::vector<int>& coords) {
  auto& b = blocks_.at(block_id);
  for (int c : coords) {
    if (c < 0 || c >= b.values.size()) {
      throw ValidationError("Problem::set_constant_coords: index out of range");
    }
    b.frozen[c] = 1;
  }
}

void Problem::set_rebase(int block_id, RebaseFn fn) { blocks_.at(block_id).rebase = std::move(fn); }

const Eigen::VectorXd& Problem::values(int block_id) const { return blocks_.at(block_id).values; }

void Problem::set_values(int block_id, const Eigen::VectorXd& v) {
  auto& b = blocks_.at(block_id);
  if (v.size() != b.values.size()) throw ValidationError("Problem::set_values: dimension mismatch");
  b.values = v;
}

int Problem::block_dim(int block_id) const {
  return static_cast<int>(blocks_.at(block_id).values.size());
}

int Problem::add_residual(const std::vector<int>& block_ids, int residual_dim, EvalFn fn,
                          RobustLoss loss, double weight) {
  if (block_ids.empty() || residual_dim <= 0) {
    throw ValidationError("Problem::add_residual: empty block list or bad dimension");
  }
  for (size_t i = 0; i < block_ids.size(); ++i) {
    if (block_ids[i] < 0 || block_ids[i] >= static_cast<int>(blocks_.size())) {
      throw ValidationError("Problem::add_residual: unknown parameter block");
    }
    for (size_t j = 0; j < i; ++j) {
      if (block_ids[i] == block_ids[j]) {
        throw ValidationError("Problem::add_residual: duplicate parameter block");
      }
    }
  }
  if (loss.kind != RobustLoss::kNone && !(loss.delta > 0.0)) {
    throw ValidationError("Problem::add_residual: robust loss needs delta > 0");
  }
  Residual r;
  r.blocks = block_ids;
  r.dim = residual_dim;
  r.fn = std::move(fn);
  r.loss = loss;
  r.weight = weight;
  residuals_.push_back(std::move(r));
  return static_cast<int>(residuals_.size()) - 1;
}

void Problem::set_residual_weight(int residual_id, double weight) {
  residuals_.at(residual_id).weight = weight;
}

namespace {

// Per-residual scratch reused across evaluations.
struct ResidualScratch {
  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> jac;
  std::vector<const Eigen::VectorXd*> params;
};

bool eval_residual(const Problem::EvalFn& fn, ResidualScratch& s, bool with_jacobians) {
  bool ok = false;
  try {
    ok = fn(s.params, s.r, with_jacobians ? &s.jac : nullptr);
  } catch (const NumericalError&) {
    ok = false;  // domain failure at the probed state; step gets rejected
  }
  if (ok && !s.r.allFinite()) ok = false;
  return ok;
}

}  // namespace

double Problem::evaluate_cost() const {
  double cost = 0.0;
  ResidualScratch s;
  for (const auto& res : residuals_) {
    s.params.clear();
    for (int id : res.blocks) s.params.push_back(&blocks_[id].values);
    s.r.resize(res.dim);
    if (!eval_residual(res.fn, s, false)) {
      throw NumericalFailure("Problem::evaluate_cost: residual invalid at current state");
    }
    cost += res.weight * res.loss.cost(s.r.norm());
  }
  return cost;
}

std::vector<double> Problem::residual_block_norms() const {
  std::vector<double> norms;
  norms.reserve(residuals_.size());
  ResidualScratch s;
  for (const auto& res : residuals_) {
    s.params.clear();
    for (int id : res.blocks) s.params.push_back(&blocks_[id].values);
    s.r.resize(res.dim);
    if (!eval_residual(res.fn, s, false)) {
      throw NumericalFailure("Problem::residual_block_norms: residual invalid at current state");
    }
    norms.push_back(s.r.norm());
  }
  return norms;
}

HessianEval evaluate_hessian(const Problem& p) {
  HessianEval out;
  int total = 0;
  out.block_offsets.reserve(p.blocks_.size());
  for (const auto& b : p.blocks_) {
    out.block_offsets.push_back(total);
    total += static_cast<int>(b.values.size());
  }
  out.H = Eigen::MatrixXd::Zero(total, total);
  out.G = Eigen::VectorXd::Zero(total);
  out.F0 = 0.0;

  ResidualScratch s;
  for (const auto& res : p.residuals_) {
    s.params.clear();
    s.jac.clear();
    for (int id : res.blocks) {
      s.params.push_back(&p.blocks_[id].values);
      s.jac.emplace_back(Eigen::MatrixXd::Zero(res.dim, p.blocks_[id].values.size()));
    }
    s.r.resize(res.dim);
    if (!eval_residual(res.fn, s, true)) {
      throw NumericalFailure("evaluate_hessian: residual invalid at current state");
    }
    const double t = s.r.norm();
    const double w = res.weight * res.loss.irls_weight(t);
    out.F0 += res.weight * res.loss.cost(t);
    for (size_t i = 0; i < res.blocks.size(); ++i) {
      const int oi = out.block_offsets[res.blocks[i]];
      const int di = static_cast<int>(p.blocks_[res.blocks[i]].values.size());
      out.G.segment(oi, di) += 2.0 * w * s.jac[i].transpose() * s.r;
      for (size_t j = 0; j < res.blocks.size(); ++j) {
        const int oj = out.block_offsets[res.blocks[j]];
        const int dj = static_cast<int>(p.blocks_[res.blocks[j]].values.size());
        out.H.block(oi, oj, di, dj) += w * s.jac[i].transpose() * s.jac[j];
      }
    }
  }
  // Symmetrize away accumulation round-off.
  out.H = 0.5 * (out.H + out.H.transpose()).eval();
  return out;
}

namespace {

// Free-coordinate bookkeeping for the LM loop.
struct FreeIndex {
  std::vector<std::vector<int>> coord_to_free;  // per block, -1 if fixed
  std::vector<int> free_to_block;               // per free coord
  int total = 0;
};

FreeIndex build_free_index(const std::vector<int>& dims, const std::vector<uint8_t>& block_const,
                           const std::vector<std::vector<uint8_t>>& frozen) {
  FreeIndex fi;
  fi.coord_to_free.resize(dims.size());
  for (size_t b = 0; b < dims.size(); ++b) {
    fi.coord_to_free[b].assign(dims[b], -1);
    if (block_const[b]) continue;
    for (int c = 0; c < dims[b]; ++c) {
      if (frozen[b][c]) continue;
      fi.coord_to_free[b][c] = fi.total++;
      fi.free_to_block.push_back(static_cast<int>(b));
    }
  }
  return fi;
}

}  // namespace

SolveReport solve(Problem& p, const SolveOptions& opts) {
  if (p.residuals_.empty()) throw ValidationError("solve: problem has no residual blocks");

  const int nb = static_cast<int>(p.blocks_.size());
  std::vector<int> dims(nb);
  std::vector<uint8_t> block_const(nb);
  std::vector<std::vector<uint8_t>> frozen(nb);
  for (int b = 0; b < nb; ++b) {
    dims[b] = static_cast<int>(p.blocks_[b].values.size());
    block_const[b] = p.blocks_[b].constant ? 1 : 0;
    frozen[b] = p.blocks_[b].frozen;
  }
  const FreeIndex fi = build_free_index(dims, block_const, frozen);
  if (fi.total == 0) throw ValidationError("solve: no free parameters");
  const bool dense = fi.total < 200;

  // Symbolic structure: one dense storage per touched block pair (bi <= bj).
  std::map<std::pair<int, int>, int> pair_index;
  struct ResPair {
    size_t i, j;  // indices into the residual's block list, blocks[i] <= blocks[j]
    int storage;
  };
  std::vector<std::vector<ResPair>> res_pairs(p.residuals_.size());
  for (size_t ri = 0; ri < p.residuals_.size(); ++ri) {
    const auto& res = p.residuals_[ri];
    for (size_t i = 0; i < res.blocks.size(); ++i) {
      if (block_const[res.blocks[i]]) continue;
      for (size_t j = i; j < res.blocks.size(); ++j) {
        if (block_const[res.blocks[j]]) continue;
        int bi = res.blocks[i], bj = res.blocks[j];
        size_t ii = i, jj = j;
        if (bi > bj) {
          std::swap(bi, bj);
          std::swap(ii, jj);
        }
        auto [it, inserted] =
            pair_index.emplace(std::make_pair(bi, bj), static_cast<int>(pair_index.size()));
        res_pairs[ri].push_back({ii, jj, it->second});
      }
    }
  }
  std::vector<Eigen::MatrixXd> pair_storage(pair_index.size());
  for (const auto& [key, idx] : pair_index) {
    pair_storage[idx] = Eigen::MatrixXd::Zero(dims[key.first], dims[key.second]);
  }

  ResidualScratch s;
  auto eval_cost = [&](bool* ok) -> double {
    double cost = 0.0;
    *ok = true;
    for (const auto& res : p.residuals_) {
      s.params.clear();
      for (int id : res.blocks) s.params.push_back(&p.blocks_[id].values);
      s.r.resize(res.dim);
      if (!eval_residual(res.fn, s, false)) {
        *ok = false;
        return 0.0;
      }
      cost += res.weight * res.loss.cost(s.r.norm());
    }
    return cost;
  };

  Eigen::VectorXd grad(fi.total);
  auto linearize = [&](bool* ok) -> double {
    for (auto& m : pair_storage) m.setZero();
    grad.setZero();
    double cost = 0.0;
    *ok = true;
    for (size_t ri = 0; ri < p.residuals_.size(); ++ri) {
      const auto& res = p.residuals_[ri];
      s.params.clear();
      s.jac.assign(res.blocks.size(), Eigen::MatrixXd());
      for (size_t i = 0; i < res.blocks.size(); ++i) {
        s.params.push_back(&p.blocks_[res.blocks[i]].values);
        s.jac[i] = Eigen::MatrixXd::Zero(res.dim, dims[res.blocks[i]]);
      }
      s.r.resize(res.dim);
      if (!eval_residual(res.fn, s, true)) {
        *ok = false;
        return 0.0;
      }
      const double t = s.r.norm();
      const double w = res.weight * res.loss.irls_weight(t);
      cost += res.weight * res.loss.cost(t);
      for (size_t i = 0; i < res.blocks.size(); ++i) {
        const int b = res.blocks[i];
        if (block_const[b]) continue;
        const Eigen::VectorXd gi = w * s.jac[i].transpose() * s.r;
        for (int c = 0; c < dims[b]; ++c) {
          const int f = fi.coord_to_free[b][c];
          if (f >= 0) grad[f] += gi[c];
        }
      }
      for (const auto& rp : res_pairs[ri]) {
        pair_storage[rp.storage] += w * s.jac[rp.i].transpose() * s.jac[rp.j];
      }
    }
    return cost;
  };

  // Scatter the block-pair storages into the damped normal matrix and solve.
  auto solve_step = [&](double mu, Eigen::VectorXd* step) -> bool {
    if (dense) {
      Eigen::MatrixXd H = Eigen::MatrixXd::Zero(fi.total, fi.total);
      for (const auto& [key, idx] : pair_index) {
        const auto& m = pair_storage[idx];
        const bool off_diag_pair = key.first != key.second;
        for (int a = 0; a < dims[key.first]; ++a) {
          const int fa = fi.coord_to_free[key.first][a];
          if (fa < 0) continue;
          for (int b = 0; b < dims[key.second]; ++b) {
            const int fb = fi.coord_to_free[key.second][b];
            if (fb < 0) continue;
            H(fa, fb) += m(a, b);
            if (off_diag_pair) H(fb, fa) += m(a, b);
          }
        }
      }
      H.diagonal().array() += mu;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
      if (ldlt.info() != Eigen::Success) return false;
      *step = ldlt.solve(-grad);
      return step->allFinite();
    }
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(pair_index.size() * 72 + fi.total);
    for (const auto& [key, idx] : pair_index) {
      const auto& m = pair_storage[idx];
      const bool off_diag_pair = key.first != key.second;
      for (int a = 0; a < dims[key.first]; ++a) {
        const int fa = fi.coord_to_free[key.first][a];
        if (fa < 0) continue;
        for (int b = 0; b < dims[key.second]; ++b) {
          const int fb = fi.coord_to_free[key.second][b];
          if (fb < 0) continue;
          trip.emplace_back(fa, fb, m(a, b));
          if (off_diag_pair) trip.emplace_back(fb, fa, m(a, b));
        }
      }
    }
    for (int f = 0; f < fi.total; ++f) trip.emplace_back(f, f, mu);
    Eigen::SparseMatrix<double> H(fi.total, fi.total);
    H.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(H);
    if (ldlt.info() != Eigen::Success) return false;
    *step = ldlt.solve(-grad);
    return step->allFinite();
  };

  auto apply_step = [&](const Eigen::VectorXd& step) {
    for (int b = 0; b < nb; ++b) {
      if (block_const[b]) continue;
      auto& v = p.blocks_[b].values;
      for (int c = 0; c < dims[b]; ++c) {
        const int f = fi.coord_to_free[b][c];
        if (f >= 0) v[c] += step[f];
      }
    }
  };

  SolveReport report;
  bool ok = false;
  double cost = linearize(&ok);
  if (!ok) throw NumericalFailure("solve: residuals invalid at the initial state");
  report.initial_cost = cost;

  // Unconstrained free coordinate: zero Gauss-Newton diagonal.
  {
    std::vector<double> diag(fi.total, 0.0);
    for (const auto& [key, idx] : pair_index) {
      if (key.first != key.second) continue;
      const auto& m = pair_storage[idx];
      for (int a = 0; a < dims[key.first]; ++a) {
        const int fa = fi.coord_to_free[key.first][a];
        if (fa >= 0) diag[fa] += m(a, a);
      }
    }
    for (int f = 0; f < fi.total; ++f) {
      if (!(diag[f] > 1e-300)) {
        throw NumericalFailure(
            "solve: parameter coordinate has zero curvature (unfixed gauge?); add a prior or "
            "hold it constant");
      }
    }
  }

  double max_diag = 0.0;
  for (const auto& [key, idx] : pair_index) {
    if (key.first != key.second) continue;
    max_diag = std::max(max_diag, pair_storage[idx].diagonal().maxCoeff());
  }
  double mu = opts.initial_damping * std::max(max_diag, 1e-300);
  int consecutive_rejects = 0;

  std::vector<Eigen::VectorXd> saved(nb);
  Eigen::VectorXd step;
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    const double grad_inf = 2.0 * grad.lpNorm<Eigen::Infinity>();
    if (grad_inf < opts.grad_tol || cost == 0.0) {
      report.termination = SolveReport::kConverged;
      report.final_cost = cost;
      return report;
    }

    bool accepted = false;
    double new_cost = cost;
    for (int attempt = 0; attempt < 32 && !accepted; ++attempt) {
      IterationRecord rec;
      rec.grad_norm = grad_inf;
      rec.damping = mu;
      if (!solve_step(mu, &step)) {
        mu *= 2.0;
        ++consecutive_rejects;
        if (consecutive_rejects > 25 || mu > 1e32 * std::max(max_diag, 1.0)) {
          report.termination = SolveReport::kStalled;
          report.final_cost = cost;
          return report;
        }
        continue;
      }
      rec.step_norm = step.norm();
      for (int b = 0; b < nb; ++b) saved[b] = p.blocks_[b].values;
      apply_step(step);
      bool cost_ok = false;
      new_cost = eval_cost(&cost_ok);
      if (cost_ok && new_cost < cost) {
        accepted = true;
        rec.accepted = true;
        rec.cost = new_cost;
        report.iterations.push_back(rec);
        ++report.accepted_steps;
        consecutive_rejects = 0;
        mu = std::max(mu * 0.5, 1e-300);
        for (int b = 0; b < nb; ++b) {
          if (p.blocks_[b].rebase && !block_const[b]) p.blocks_[b].rebase(p.blocks_[b].values);
        }
      } else {
        rec.accepted = false;
        rec.cost = cost_ok ? new_cost : std::numeric_limits<double>::infinity();
        report.iterations.push_back(rec);
        for (int b = 0; b < nb; ++b) p.blocks_[b].values = saved[b];
        mu *= 2.0;
        ++consecutive_rejects;
        if (consecutive_rejects > 25) {
          report.termination = SolveReport::kStalled;
          report.final_cost = cost;
          return report;
        }
      }
    }
    if (!accepted) {
      report.termination = SolveReport::kStalled;
      report.final_cost = cost;
      return report;
    }

    double param_norm2 = 0.0;
    for (int b = 0; b < nb; ++b) param_norm2 += p.blocks_[b].values.squaredNorm();
    const double drop = cost - new_cost;
    const bool converged =
        drop <= opts.cost_tol * std::max(cost, 1e-300) ||
        report.iterations.back().step_norm <=
            opts.step_tol * (std::sqrt(param_norm2) + opts.step_tol);
    cost = linearize(&ok);
    if (!ok) {
      // Rebase landed on an invalid state; report what we had.
      report.termination = SolveReport::kStalled;
      report.final_cost = new_cost;
      return report;
    }
    if (converged) {
      report.termination = SolveReport::kConverged;
      report.final_cost = cost;
      return report;
    }
  }
  report.termination = SolveReport::kMaxIter;
  report.final_cost = cost;
  return report;
}

}  // namespace pba
