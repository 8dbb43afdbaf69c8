#include "multitrans/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace multitrans {

namespace {

constexpr double kCoordinateFloor = 1e-8;
// Below this norm a central difference at the default step is mostly
// rounding noise, so a zero gradient is compared in absolute terms.
constexpr double kTensorFloor = 1e-6;

}  // namespace

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> inputs, const GradCheckOptions& options) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  {
    Tape<double> tape;
    if (!options.fault_op.empty()) tape.inject_fault(options.fault_op, options.fault_factor);
    Tape<double>::Scope scope(tape);
    tape.backward(f());
  }

  GradCheckReport report;
  report.norm = options.norm;
  NoGradScope<double> no_grad;
  const double h = options.step;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& x = inputs[t];
    const std::vector<double> analytic = x.has_grad()
                                             ? std::vector<double>(x.grad().begin(), x.grad().end())
                                             : std::vector<double>(x.numel(), 0.0);
    auto values = x.mutable_data();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = f().item();
      values[i] = saved - h;
      const double minus = f().item();
      values[i] = saved;
      CoordinateCheck c;
      c.input = t;
      c.index = i;
      c.analytic = analytic[i];
      c.numeric = (plus - minus) / (2.0 * h);
      c.rel_error = relative_error(c.analytic, c.numeric, kCoordinateFloor);
      c.pass = c.rel_error < options.tolerance;
      report.max_coordinate_error = std::max(report.max_coordinate_error, c.rel_error);
      diff2 += (c.analytic - c.numeric) * (c.analytic - c.numeric);
      a2 += c.analytic * c.analytic;
      n2 += c.numeric * c.numeric;
      if (options.norm == ErrorNorm::coordinate) {
        report.max_rel_error = std::max(report.max_rel_error, c.rel_error);
        ++report.checked;
        if (!c.pass) ++report.failed;
      }
      report.coordinates.push_back(c);
    }
    TensorCheck tc;
    tc.input = t;
    tc.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), kTensorFloor});
    tc.pass = tc.rel_error < options.tolerance;
    if (options.norm == ErrorNorm::tensor) {
      report.max_rel_error = std::max(report.max_rel_error, tc.rel_error);
      ++report.checked;
      if (!tc.pass) ++report.failed;
    }
    report.tensors.push_back(tc);
  }
  return report;
}

}  // namespace multitrans
