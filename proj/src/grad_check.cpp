#include "ascm/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace ascm {

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor<double>& x, double h) {
  Tensor<double> analytic;
  {
    Tape<double> tape;
    const Var in = tape.leaf(x);
    tape.backward(f(tape, in));
    analytic = tape.grad(in);
  }
  auto eval = [&](const Tensor<double>& at) {
    Tape<double> tape(false);
    return tape.value(f(tape, tape.constant(at)))[0];
  };
  double worst = 0;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval(probe);
    probe[i] = x[i] - h;
    const double down = eval(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
  }
  return worst;
}

ParameterGradError grad_check_parameters(const std::function<Var(Tape<double>&)>& loss,
                                         std::span<Parameter<double>* const> params, double h,
                                         double tolerance) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape<double> tape(false);
    return tape.value(loss(tape))[0];
  };
  ParameterGradError result;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      auto central = [&](double step) {
        p->value[i] = saved + step;
        const double up = eval();
        p->value[i] = saved - step;
        const double down = eval();
        p->value[i] = saved;
        return relative_error(p->grad[i], (up - down) / (2 * step));
      };
      double err = central(h);
      result.max_rel_error_at_h = std::max(result.max_rel_error_at_h, err);
      if (err > tolerance) {
        ++result.refined;
        err = central(h / 100);
      }
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_parameter = p->name;
      }
    }
  }
  return result;
}

}  // namespace ascm
