#include "acn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "acn/error.hpp"

namespace acn {

namespace {

double evaluate(const LossBuilder& loss) {
  Tape tape;
  double v = 0.0;
  try {
    v = loss(tape).value().item();
  } catch (const NumericError& e) {
    throw NumericError(std::string("finite_diff_check: loss evaluation failed: ") + e.what());
  }
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite loss");
  return v;
}

}  // namespace

double finite_diff_check(const LossBuilder& loss, std::span<Parameter* const> params,
                         double h) {
  if (!(h > 0.0)) throw InputError("finite_diff_check: step must be positive");
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var l = loss(tape);
    if (!std::isfinite(l.value().item()))
      throw NumericError("finite_diff_check: non-finite loss");
    tape.backward(l);
  }

  double worst = 0.0;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = evaluate(loss);
      p->value[i] = saved - h;
      const double down = evaluate(loss);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradFloor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    p->zero_grad();
  }
  return worst;
}

}  // namespace acn
