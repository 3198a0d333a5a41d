#pragma once

// Matrix SVD with a deterministic sign convention, Gram spectra, power-law
// tail fitting and the alpha-hat capacity metric.

#include <Eigen/Core>

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ddp/tensor.hpp"

namespace ddp {

/// Full SVD M = U diag(s) Vᵀ. u is rows×rows, v is cols×cols and s holds
/// min(rows, cols) values in descending order.
struct SvdFactors {
  Eigen::MatrixXd u;
  Eigen::VectorXd s;
  Eigen::MatrixXd v;
};

/// Flips each column of V so its largest-magnitude entry (lowest index on
/// ties) is nonnegative and flips the paired column of U with it. Columns of
/// U beyond min(rows, cols) follow the same rule on their own entries.
void apply_sign_convention(SvdFactors& f);

SvdFactors svd(const Eigen::Ref<const Eigen::MatrixXd>& m);
SvdFactors svd(const DenseTensor& m);

/// Threshold under which a singular value counts as zero:
/// max(rows, cols) · ε · s₀.
double rank_tolerance(std::size_t rows, std::size_t cols, double s0);

/// SVD of one layer's unfolded weight matrix.
struct LayerSvd {
  std::string layer_id;
  Eigen::MatrixXd u;
  Eigen::VectorXd s;
  Eigen::MatrixXd v;
  double tolerance = 0;
  std::size_t rank = 0;  // singular values above tolerance

  std::size_t rows() const { return static_cast<std::size_t>(u.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(v.rows()); }
  Eigen::MatrixXd reconstruct() const;
};

LayerSvd layer_svd(const DenseTensor& unfolded, std::string layer_id = {});

/// Singular values and rank only; u and v are left empty.
LayerSvd layer_singular_values(const DenseTensor& unfolded, std::string layer_id = {});

/// Eigenvalues of M·Mᵀ (length rows), descending.
Eigen::VectorXd gram_eigenvalues(const Eigen::Ref<const Eigen::MatrixXd>& m);
Eigen::VectorXd gram_eigenvalues(const DenseTensor& m);

inline constexpr std::size_t kMinTailSamples = 50;

struct PowerLawFit {
  double alpha = 0;
  double xmin = 0;
  double ks_distance = 0;
  std::size_t n_tail = 0;
};

/// Continuous maximum-likelihood exponent with xmin chosen among the sample
/// values to minimise the Kolmogorov–Smirnov distance of the tail.
PowerLawFit fit_power_law(std::span<const double> samples);

/// Exponent 1 + n / Σ ln(x/xmin) over the samples ≥ xmin; no tail-size floor.
PowerLawFit fit_power_law_fixed_xmin(std::span<const double> samples, double xmin);

struct LayerAlpha {
  double alpha = 0;
  double lambda_max = 0;
  PowerLawFit fit;
};

/// Power-law fit of the nonzero Gram eigenvalues s_i² of one layer.
LayerAlpha layer_alpha(const LayerSvd& layer);

struct CapacityEntry {
  std::string layer_id;
  double alpha = 0;
  double lambda_max = 0;
};

struct CapacityReport {
  std::vector<CapacityEntry> per_layer;
  double alpha_hat = 0;
  bool averaged = false;
};

/// α̂ = Σ α_L · ln λ_L^max, divided by the layer count when `averaged`.
CapacityReport capacity_metric(std::vector<CapacityEntry> layers, bool averaged);

struct HistogramBin {
  double lo = 0;
  double hi = 0;
  std::size_t count = 0;
};

struct EsdHistogram {
  std::vector<HistogramBin> bins;
  std::vector<double> sorted_values;
};

/// Log10-spaced histogram over [min, max]; bins are left-closed and
/// right-open except the last, which is closed. Values must be positive.
EsdHistogram esd_histogram(std::span<const double> eigenvalues, std::size_t bins);

void write_esd_csv(std::ostream& os, const EsdHistogram& h);

}  // namespace ddp
