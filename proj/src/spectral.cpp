#include "ddp/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "ddp/csv.hpp"
#include "ddp/log.hpp"

namespace ddp {
namespace {

Eigen::Index dominant_entry(const Eigen::Ref<const Eigen::VectorXd>& col) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < col.size(); ++i)
    if (std::abs(col(i)) > std::abs(col(best))) best = i;
  return best;
}

void require_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (!m.allFinite()) throw Error(ErrorKind::InvalidInput, "matrix has non-finite entries");
}

}  // namespace

void apply_sign_convention(SvdFactors& f) {
  const Eigen::Index paired = f.s.size();
  for (Eigen::Index j = 0; j < f.v.cols(); ++j) {
    if (f.v(dominant_entry(f.v.col(j)), j) < 0) {
      f.v.col(j) *= -1;
      if (j < paired) f.u.col(j) *= -1;
    }
  }
  for (Eigen::Index j = paired; j < f.u.cols(); ++j)
    if (f.u(dominant_entry(f.u.col(j)), j) < 0) f.u.col(j) *= -1;
}

SvdFactors svd(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (m.rows() < 1 || m.cols() < 1) throw Error(ErrorKind::InvalidInput, "empty matrix");
  require_finite(m);
  Eigen::BDCSVD<Eigen::MatrixXd> solver(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (solver.info() != Eigen::Success)
    throw Error(ErrorKind::NumericalFailure, "SVD did not converge");
  SvdFactors f{solver.matrixU(), solver.singularValues(), solver.matrixV()};
  apply_sign_convention(f);

  const double s0 = f.s.size() ? f.s(0) : 0.0;
  for (Eigen::Index i = 0; i + 1 < f.s.size(); ++i) {
    if (f.s(i + 1) <= rank_tolerance(m.rows(), m.cols(), s0)) break;
    if (std::abs(f.s(i) - f.s(i + 1)) <= 1e-9 * s0) {
      log().warn("near-duplicate singular values at {} and {} ({}); singular vectors are not unique",
                 i, i + 1, f.s(i));
      break;
    }
  }
  return f;
}

SvdFactors svd(const DenseTensor& m) {
  const Eigen::MatrixXd dense = m.matrix();
  return svd(dense);
}

double rank_tolerance(std::size_t rows, std::size_t cols, double s0) {
  return static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * s0;
}

Eigen::MatrixXd LayerSvd::reconstruct() const {
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(u.cols(), v.cols());
  for (Eigen::Index i = 0; i < s.size(); ++i) sigma(i, i) = s(i);
  return u * sigma * v.transpose();
}

LayerSvd layer_svd(const DenseTensor& unfolded, std::string layer_id) {
  auto f = svd(unfolded);
  LayerSvd out;
  out.layer_id = std::move(layer_id);
  out.u = std::move(f.u);
  out.s = std::move(f.s);
  out.v = std::move(f.v);
  out.tolerance = rank_tolerance(unfolded.extent(0), unfolded.extent(1), out.s.size() ? out.s(0) : 0.0);
  out.rank = 0;
  while (out.rank < static_cast<std::size_t>(out.s.size()) && out.s(out.rank) > out.tolerance) ++out.rank;
  return out;
}

LayerSvd layer_singular_values(const DenseTensor& unfolded, std::string layer_id) {
  const Eigen::MatrixXd m = unfolded.matrix();
  require_finite(m);
  Eigen::BDCSVD<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::NumericalFailure, "SVD did not converge");
  LayerSvd out;
  out.layer_id = std::move(layer_id);
  out.s = solver.singularValues();
  out.tolerance = rank_tolerance(unfolded.extent(0), unfolded.extent(1), out.s.size() ? out.s(0) : 0.0);
  while (out.rank < static_cast<std::size_t>(out.s.size()) && out.s(out.rank) > out.tolerance) ++out.rank;
  return out;
}

Eigen::VectorXd gram_eigenvalues(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (m.rows() < 1 || m.cols() < 1) throw Error(ErrorKind::InvalidInput, "empty matrix");
  require_finite(m);
  // The nonzero spectrum of MMᵀ equals that of MᵀM; decompose the smaller one.
  const Eigen::MatrixXd gram =
      m.rows() <= m.cols() ? Eigen::MatrixXd(m * m.transpose()) : Eigen::MatrixXd(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success)
    throw Error(ErrorKind::NumericalFailure, "Gram eigen-decomposition did not converge");
  const Eigen::VectorXd& ascending = solver.eigenvalues();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m.rows());
  for (Eigen::Index i = 0; i < ascending.size(); ++i)
    out(i) = std::max(0.0, ascending(ascending.size() - 1 - i));
  return out;
}

Eigen::VectorXd gram_eigenvalues(const DenseTensor& m) {
  const Eigen::MatrixXd dense = m.matrix();
  return gram_eigenvalues(dense);
}

PowerLawFit fit_power_law_fixed_xmin(std::span<const double> samples, double xmin) {
  if (!(xmin > 0)) throw Error(ErrorKind::InvalidInput, "xmin must be positive");
  std::vector<double> tail;
  for (double x : samples) {
    if (!(x > 0) || !std::isfinite(x)) throw Error(ErrorKind::InvalidInput, "samples must be positive and finite");
    if (x >= xmin) tail.push_back(x);
  }
  if (tail.empty()) throw Error(ErrorKind::InsufficientSamples, "no samples at or above xmin");
  std::sort(tail.begin(), tail.end());
  double log_sum = 0;
  for (double x : tail) log_sum += std::log(x / xmin);
  if (!(log_sum > 0)) throw Error(ErrorKind::InsufficientSamples, "degenerate tail: all samples equal xmin");
  const double n = static_cast<double>(tail.size());
  const double alpha = 1.0 + n / log_sum;
  double ks = 0;
  for (std::size_t i = 0; i < tail.size(); ++i) {
    const double model = 1.0 - std::pow(tail[i] / xmin, 1.0 - alpha);
    ks = std::max({ks, std::abs(model - static_cast<double>(i) / n),
                   std::abs(static_cast<double>(i + 1) / n - model)});
  }
  return {alpha, xmin, ks, tail.size()};
}

PowerLawFit fit_power_law(std::span<const double> samples) {
  std::vector<double> x(samples.begin(), samples.end());
  for (double v : x)
    if (!(v > 0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidInput, "samples must be positive and finite");
  if (x.size() < kMinTailSamples)
    throw Error(ErrorKind::InsufficientSamples, std::to_string(x.size()) + " samples, need " +
                                                    std::to_string(kMinTailSamples));
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  std::vector<double> ln(n);
  for (std::size_t i = 0; i < n; ++i) ln[i] = std::log(x[i]);
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + ln[i];

  PowerLawFit best;
  bool found = false;
  for (std::size_t j = 0; n - j >= kMinTailSamples; ++j) {
    if (j > 0 && x[j] == x[j - 1]) continue;
    if (x[j] == x[n - 1]) break;
    const std::size_t nt = n - j;
    const double log_sum = suffix[j] - static_cast<double>(nt) * ln[j];
    if (!(log_sum > 0)) continue;
    const double alpha = 1.0 + static_cast<double>(nt) / log_sum;
    const double inv_nt = 1.0 / static_cast<double>(nt);
    double ks = 0;
    for (std::size_t i = 0; i < nt; ++i) {
      const double model = 1.0 - std::exp((1.0 - alpha) * (ln[j + i] - ln[j]));
      ks = std::max({ks, std::abs(model - static_cast<double>(i) * inv_nt),
                     std::abs(static_cast<double>(i + 1) * inv_nt - model)});
      if (found && ks >= best.ks_distance) break;
    }
    if (!found || ks < best.ks_distance) {
      best = {alpha, x[j], ks, nt};
      found = true;
    }
  }
  if (!found)
    throw Error(ErrorKind::InsufficientSamples,
                "no candidate xmin leaves a non-degenerate tail of " + std::to_string(kMinTailSamples) + " samples");
  return best;
}

LayerAlpha layer_alpha(const LayerSvd& layer) {
  if (layer.rank < kMinTailSamples)
    throw Error(ErrorKind::InsufficientSamples, "layer " + layer.layer_id + " has " +
                                                    std::to_string(layer.rank) + " nonzero eigenvalues, need " +
                                                    std::to_string(kMinTailSamples));
  std::vector<double> eig(layer.rank);
  for (std::size_t i = 0; i < layer.rank; ++i) eig[i] = layer.s(i) * layer.s(i);
  LayerAlpha out;
  out.fit = fit_power_law(eig);
  out.alpha = out.fit.alpha;
  out.lambda_max = eig.front();
  return out;
}

CapacityReport capacity_metric(std::vector<CapacityEntry> layers, bool averaged) {
  double total = 0;
  for (const auto& e : layers) {
    if (!(e.lambda_max > 0) || !std::isfinite(e.lambda_max))
      throw Error(ErrorKind::InvalidInput, "lambda_max must be positive for layer " + e.layer_id);
    total += e.alpha * std::log(e.lambda_max);
  }
  CapacityReport report;
  report.averaged = averaged;
  report.alpha_hat = (averaged && !layers.empty()) ? total / static_cast<double>(layers.size()) : total;
  report.per_layer = std::move(layers);
  return report;
}

EsdHistogram esd_histogram(std::span<const double> eigenvalues, std::size_t bins) {
  if (eigenvalues.empty()) throw Error(ErrorKind::InvalidInput, "no eigenvalues to histogram");
  if (bins < 1) throw Error(ErrorKind::InvalidParameter, "bins must be at least 1");
  EsdHistogram h;
  h.sorted_values.assign(eigenvalues.begin(), eigenvalues.end());
  std::sort(h.sorted_values.begin(), h.sorted_values.end());
  if (!(h.sorted_values.front() > 0) || !std::isfinite(h.sorted_values.back()))
    throw Error(ErrorKind::InvalidInput, "log-spaced histogram needs positive finite eigenvalues");

  const double lo = std::log10(h.sorted_values.front());
  const double hi = std::log10(h.sorted_values.back());
  std::vector<double> edges(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b)
    edges[b] = std::pow(10.0, lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins));
  edges.front() = h.sorted_values.front();
  edges.back() = h.sorted_values.back();

  h.bins.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) h.bins[b] = {edges[b], edges[b + 1], 0};
  for (double v : h.sorted_values) {
    // First edge strictly greater than v closes v's bin; values equal to the
    // top edge land in the final bin.
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    std::size_t b = static_cast<std::size_t>(it - edges.begin());
    b = (b == 0) ? 0 : std::min(b - 1, bins - 1);
    ++h.bins[b].count;
  }
  return h;
}

void write_esd_csv(std::ostream& os, const EsdHistogram& h) {
  os << "bin_lo,bin_hi,count\n";
  for (const auto& b : h.bins) os << format_double(b.lo) << ',' << format_double(b.hi) << ',' << b.count << '\n';
}

}  // namespace ddp
