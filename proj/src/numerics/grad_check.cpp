#include "userllm/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace userllm {

namespace {

template <typename Scalar>
double evaluate(const std::function<Var<Scalar>(Graph<Scalar>&)>& loss_fn) {
  Graph<Scalar> graph(false);
  const double value = static_cast<double>(loss_fn(graph).item());
  if (!std::isfinite(value)) throw std::domain_error("grad_check: loss is not finite");
  return value;
}

}  // namespace

template <typename Scalar>
GradCheckReport grad_check(const std::function<Var<Scalar>(Graph<Scalar>&)>& loss_fn,
                           const std::vector<TensorPtr<Scalar>>& params, double eps, double tol,
                           const GradCheckOptions& options) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");

  std::vector<Matrix<Scalar>> analytic;
  {
    Graph<Scalar> graph(true);
    Var<Scalar> loss = loss_fn(graph);
    if (!std::isfinite(static_cast<double>(loss.item()))) throw std::domain_error("grad_check: loss is not finite");
    graph.backward(loss);
    for (const auto& p : params) analytic.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
    graph.for_each_parameter_gradient([&](Tensor<Scalar>& tensor, const Matrix<Scalar>& grad) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].get() == &tensor) analytic[i] = grad;
      }
    });
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& tensor = *params[p];
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(tensor.size()));
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (Eigen::Index c : coords) {
      Scalar& slot = tensor.data.data()[c];
      const Scalar saved = slot;
      slot = saved + static_cast<Scalar>(eps);
      const double plus = evaluate(loss_fn);
      slot = saved - static_cast<Scalar>(eps);
      const double minus = evaluate(loss_fn);
      slot = saved;
      const double numeric = (plus - minus) / (2 * eps);
      const double a = static_cast<double>(analytic[p].data()[c]);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (rel >= report.max_rel_err) {
        report.max_rel_err = rel;
        std::ostringstream os;
        os << p << "[" << c / tensor.cols() << "," << c % tensor.cols() << "] analytic=" << a
           << " numeric=" << numeric;
        report.worst = os.str();
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

template GradCheckReport grad_check<float>(const std::function<Var<float>(Graph<float>&)>&,
                                           const std::vector<TensorPtr<float>>&, double, double,
                                           const GradCheckOptions&);
template GradCheckReport grad_check<double>(const std::function<Var<double>(Graph<double>&)>&,
                                            const std::vector<TensorPtr<double>>&, double, double,
                                            const GradCheckOptions&);

}  // namespace userllm
