#include "nlh/torus_operator.hpp"

#include <cmath>

namespace nlh {

KernelStencil make_stencil(const Kernel& kernel, const TorusGrid& grid) {
  KernelStencil st;
  st.h = grid.h;
  st.m_min = static_cast<int>(std::ceil(kernel.support_min() / grid.h - 1e-9));
  st.m_max = static_cast<int>(std::floor(kernel.support_max() / grid.h + 1e-9));
  if (st.m_max - st.m_min < 4)
    throw ResolutionError("kernel support spans fewer than four torus cells; increase torus.points");
  double mass = 0.0;
  for (int m = st.m_min; m <= st.m_max; ++m) {
    double z = m * grid.h;
    // Snap nodes that land on the support edge so the jump convention applies.
    if (std::abs(z - kernel.support_max()) < 1e-12) z = kernel.support_max();
    if (std::abs(z - kernel.support_min()) < 1e-12) z = kernel.support_min();
    const double v = grid.h * kernel(z);
    if (v < 0.0) throw ValidationError("kernel stencil: negative weight");
    st.w.push_back(v);
    mass += v;
  }
  if (!(mass > 0.0)) throw ResolutionError("kernel stencil has zero mass on the torus grid");
  for (double& v : st.w) v /= mass;
  return st;
}

PeriodizedKernel periodize_kernel(const Kernel& kernel, const TorusGrid& grid, double tol,
                                  int max_shifts) {
  (void)tol;  // supports are compact, so the lattice sum is finite and exact
  const KernelStencil st = make_stencil(kernel, grid);
  PeriodizedKernel out;
  out.values.assign(grid.n, 0.0);
  for (int m = st.m_min; m <= st.m_max; ++m) {
    const int r = ((m % grid.n) + grid.n) % grid.n;
    out.values[r] += st.weight(m) / grid.h;
  }
  out.shifts = (st.size() + grid.n - 1) / grid.n;
  if (out.shifts > max_shifts)
    throw ResolutionError("periodize_kernel: lattice shift budget exceeded");
  return out;
}

GeneratorMatrix::GeneratorMatrix(const EnvironmentModel& env)
    : n_(env.torus_points()),
      stencil_(make_stencil(env.kernel(), TorusGrid(n_))),
      per_(periodize_kernel(env.kernel(), TorusGrid(n_))) {
  const double h = 1.0 / n_;
  const int s = stencil_.size();
  for (int k = 0; k < env.states(); ++k) {
    const Eigen::MatrixXd& b = env.field(k);
    Eigen::MatrixXd w(n_, n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) w(i, j) = h * per_.values[((i - j) % n_ + n_) % n_] * b(i, j);
    d_.push_back(w.rowwise().sum());
    c_.push_back(w.colwise().sum().transpose());
    w_.push_back(std::move(w));

    Eigen::MatrixXd band(n_, s);
    std::array<Eigen::VectorXd, 3> mom;
    for (auto& v : mom) v = Eigen::VectorXd::Zero(n_);
    for (int i = 0; i < n_; ++i)
      for (int m = stencil_.m_min; m <= stencil_.m_max; ++m) {
        const int j = ((i - m) % n_ + n_) % n_;
        const double c = stencil_.weight(m) * b(i, j);
        band(i, m - stencil_.m_min) = c;
        const double z = stencil_.z(m);
        mom[0](i) += c * z;
        mom[1](i) += c * z * z;
        mom[2](i) += c * z * z * z;
      }
    band_.push_back(std::move(band));
    mom_.push_back(std::move(mom));
  }
}

double GeneratorMatrix::max_row_sum() const {
  double m = 0.0;
  for (const auto& d : d_) m = std::max(m, d.maxCoeff());
  return m;
}

void GeneratorMatrix::apply(int k, std::span<const double> phi, std::span<double> out) const {
  // Difference form Σ_j W_ij (φ_j - φ_i): constants are annihilated exactly.
  const Eigen::MatrixXd& w = w_[k];
  for (int i = 0; i < n_; ++i) out[i] = 0.0;
  for (int j = 0; j < n_; ++j) {
    const double* col = w.col(j).data();
    const double pj = phi[j];
    for (int i = 0; i < n_; ++i) out[i] += col[i] * (pj - phi[i]);
  }
}

void GeneratorMatrix::apply_adjoint(int k, std::span<const double> p, std::span<double> out) const {
  Eigen::Map<const Eigen::VectorXd> x(p.data(), n_);
  Eigen::Map<Eigen::VectorXd> y(out.data(), n_);
  y.noalias() = w_[k].transpose() * x;
  y.array() -= d_[k].array() * x.array();
}

RescaledOperator::RescaledOperator(const GeneratorMatrix& gen, double eps, std::size_t nodes)
    : gen_(&gen),
      eps_(eps),
      nodes_(nodes),
      n_t_(gen.points()),
      m_min_(gen.stencil().m_min),
      m_max_(gen.stencil().m_max) {
  if (!(eps > 0.0)) throw DomainError("rescaled operator: eps must be positive");
  if (nodes % static_cast<std::size_t>(n_t_) != 0)
    throw DomainError("rescaled operator: node count must be a multiple of torus.points");
  const int s = gen.stencil().size();
  if (static_cast<std::size_t>(s) > nodes)
    throw DomainError("rescaled operator: kernel band wider than the physical grid");
  const double inv = 1.0 / (eps * eps);
  for (int k = 0; k < gen.states(); ++k) {
    std::vector<double> rev(static_cast<std::size_t>(n_t_) * s);
    for (int r = 0; r < n_t_; ++r)
      for (int j = 0; j < s; ++j) rev[static_cast<std::size_t>(r) * s + j] = inv * gen.coefficient(k, r, m_max_ - j);
    rev_.push_back(std::move(rev));
  }
  ext_.resize(nodes + static_cast<std::size_t>(s - 1));
}

void RescaledOperator::apply(int k, std::span<const double> u, std::span<double> out) const {
  const std::size_t n = nodes_;
  const int s = m_max_ - m_min_ + 1;
  // ext[t] = u[(t - m_max) mod n]
  const long nl = static_cast<long>(n);
  std::size_t idx = static_cast<std::size_t>(((-static_cast<long>(m_max_)) % nl + nl) % nl);
  for (std::size_t t = 0; t < ext_.size(); ++t) {
    ext_[t] = u[idx];
    if (++idx == n) idx = 0;
  }
  const double* rev = rev_[k].data();
  const double* e = ext_.data();
  int r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* c = rev + static_cast<std::size_t>(r) * s;
    const double* x = e + i;
    const double ui = u[i];
    double acc = 0.0;
    for (int j = 0; j < s; ++j) acc += c[j] * (x[j] - ui);
    out[i] = acc;
    if (++r == n_t_) r = 0;
  }
}

void rescaled_apply_reference(const EnvironmentModel& env, int k, double eps,
                              std::span<const double> u, std::span<double> out) {
  const int nt = env.torus_points();
  const std::size_t n = u.size();
  const double dx = eps / nt;
  const Kernel& a = env.kernel();
  // Kernel mass on the node lattice, so that the reference shares the stencil normalization.
  double mass = 0.0;
  for (long m = -static_cast<long>(n); m <= static_cast<long>(n); ++m) {
    double z = m * (1.0 / nt);
    if (std::abs(z - a.support_max()) < 1e-12) z = a.support_max();
    if (std::abs(z - a.support_min()) < 1e-12) z = a.support_min();
    mass += a(z) / nt;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (long m = -static_cast<long>(n) / 2; m < static_cast<long>(n) / 2; ++m) {
      double z = static_cast<double>(m) * dx / eps;
      if (std::abs(z - a.support_max()) < 1e-12) z = a.support_max();
      if (std::abs(z - a.support_min()) < 1e-12) z = a.support_min();
      const double av = a(z);
      if (av == 0.0) continue;
      const std::size_t j = static_cast<std::size_t>(((static_cast<long>(i) - m) % static_cast<long>(n) + static_cast<long>(n)) % static_cast<long>(n));
      const double lam = env.field(k, static_cast<int>(i % nt), static_cast<int>(j % nt));
      acc += dx / eps * av / mass * lam * (u[j] - u[i]);
    }
    out[i] = acc / (eps * eps);
  }
}

}  // namespace nlh
