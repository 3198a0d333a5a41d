#pragma once

// Deterministic synthetic models and datasets: the small MNIST-architecture
// network with seven-segment digit images, a conv-only VGG-16 shape, and
// layers with planted power-law spectra.

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "ddp/inference.hpp"
#include "ddp/profiler.hpp"

namespace ddp::fixtures {

/// conv1 (32,1,3,3), ReLU, conv2 (16,32,3,3), ReLU, MaxPool 2/2,
/// fc1 (64, 2304), ReLU, fc2 (10, 64), Softmax on a (1,28,28) input. fc1
/// reads the pooled (16,12,12) tensor in row-major order.
ModelSpec mnist_model(std::uint64_t seed = 0);

/// Seven-segment renderings of the digits 0–9 with jitter and noise,
/// `per_class` images per digit; ids are "d<digit>_<nn>".
std::vector<ProfileImage> synthetic_digits(std::size_t per_class, std::uint64_t seed = 0);

/// Writes <dir>/model/manifest.json (+ tensors) and <dir>/data/*.ddpt with
/// labels.csv.
void write_mnist_fixture(const std::filesystem::path& dir, std::size_t per_class = 10, std::uint64_t seed = 0);

/// The 13 conv layers of VGG-16 (3×3, pad 1) with ReLU and 2×2 pooling on a
/// (3,224,224) input, random weights.
ModelSpec vgg16_conv_model(std::uint64_t seed = 0);

/// Draws from the continuous power law with density ∝ x^{-alpha}, x ≥ xmin.
std::vector<double> pareto_samples(double alpha, double xmin, std::size_t n, std::mt19937_64& rng);

struct PlantedLayer {
  double alpha = 2.0;
  double lambda_max = 1.0;
  std::size_t size = 512;
};

/// fc layers of shape (size, size) whose Gram eigenvalues are power-law
/// samples rescaled so the largest equals lambda_max; hidden ReLUs between.
ModelSpec planted_spectrum_model(const std::vector<PlantedLayer>& layers, std::uint64_t seed = 0);

/// Random orthogonal n×n matrix (QR of a Gaussian matrix, sign-fixed).
Eigen::MatrixXd random_orthogonal(std::size_t n, std::mt19937_64& rng);

}  // namespace ddp::fixtures
