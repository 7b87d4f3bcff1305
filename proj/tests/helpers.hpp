#pragma once

#include <cmath>
#include <vector>

#include "nlh/environment.hpp"

namespace nlh::test {

inline MarkovDriver frozen() { return MarkovDriver(Eigen::MatrixXd::Zero(1, 1)); }

inline MarkovDriver chain3(double q = 1.0) {
  Eigen::MatrixXd m(3, 3);
  m << -2 * q, q, q, q, -2 * q, q, q, q, -2 * q;
  return MarkovDriver(m);
}

inline std::vector<FieldCoefficients> default_fields() {
  return {{0.85, 0.15, 0.12, 0.0, 0.0, 0.0}, {1.0, -0.1, 0.15, 0.0, 0.15, 0.0}, {1.15, 0.1, -0.1, 0.0, 0.35, 0.0}};
}

inline EnvironmentModel constant_env(int n = 32) {
  return EnvironmentModel::from_coefficients(Kernel::uniform(1.0), frozen(), n, {FieldCoefficients{}}, 0.5, 1.5);
}

inline EnvironmentModel default_env(int n = 32) {
  return EnvironmentModel::from_coefficients(Kernel::uniform(1.0), chain3(), n, default_fields(), 0.5, 1.5);
}

inline EnvironmentModel nonsymmetric_env(int n = 32) {
  auto f = default_fields();
  f[0].delta = 0.2;
  f[1].delta = -0.15;
  f[2].delta = 0.1;
  f[0].source = 0.1;
  f[1].source = -0.1;
  f[2].source = 0.05;
  return EnvironmentModel::from_coefficients(Kernel::uniform(1.0), chain3(), n, f, 0.5, 1.5);
}

inline EnvironmentModel frozen_nonsymmetric_env(int n = 32) {
  return EnvironmentModel::from_coefficients(Kernel::uniform(1.0), frozen(), n,
                                             {FieldCoefficients{0.95, 0.1, 0.05, 0.2, 0.0, 0.1}}, 0.5, 1.5);
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace nlh::test
