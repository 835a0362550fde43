#include "evlcal/nelder_mead.hpp"

#include <algorithm>
#include <stdexcept>

namespace evlcal {

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const std::vector<Eigen::VectorXd>& initial_simplex,
                             const NelderMeadOptions& opts) {
  const int n = initial_simplex.empty() ? 0 : static_cast<int>(initial_simplex[0].size());
  if (static_cast<int>(initial_simplex.size()) != n + 1) {
    throw std::invalid_argument("nelder_mead: simplex needs n+1 vertices");
  }

  struct Vertex {
    Eigen::VectorXd x;
    double fx;
  };
  std::vector<Vertex> simplex;
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    return f(x);
  };
  for (const Eigen::VectorXd& x : initial_simplex) simplex.push_back({x, eval(x)});

  auto order = [&]() {
    std::stable_sort(simplex.begin(), simplex.end(),
                     [](const Vertex& a, const Vertex& b) { return a.fx < b.fx; });
  };
  order();

  while (evals < opts.max_evals && simplex.back().fx - simplex.front().fx > opts.spread_tol) {
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += simplex[i].x;
    centroid /= static_cast<double>(n);

    const Vertex& worst = simplex[n];
    const Eigen::VectorXd xr = centroid + opts.reflection * (centroid - worst.x);
    const double fr = eval(xr);

    if (fr < simplex[0].fx) {
      const Eigen::VectorXd xe = centroid + opts.expansion * (xr - centroid);
      const double fe = eval(xe);
      simplex[n] = fe < fr ? Vertex{xe, fe} : Vertex{xr, fr};
    } else if (fr < simplex[n - 1].fx) {
      simplex[n] = {xr, fr};
    } else {
      const bool outside = fr < worst.fx;
      const Eigen::VectorXd xc =
          outside ? Eigen::VectorXd(centroid + opts.contraction * (xr - centroid))
                  : Eigen::VectorXd(centroid - opts.contraction * (centroid - worst.x));
      const double fc = eval(xc);
      if (fc < std::min(fr, worst.fx)) {
        simplex[n] = {xc, fc};
      } else {
        for (int i = 1; i <= n; ++i) {
          simplex[i].x = simplex[0].x + opts.shrink * (simplex[i].x - simplex[0].x);
          simplex[i].fx = eval(simplex[i].x);
        }
      }
    }
    order();
  }

  return {simplex.front().x, simplex.front().fx, evals};
}

}  // namespace evlcal
