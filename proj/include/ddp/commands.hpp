#pragma once

// Subcommand implementations shared by the CLI and the integration tests.
// Every command writes its artifacts under RunConfig::out.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ddp/inference.hpp"
#include "ddp/spectral.hpp"

namespace ddp {

struct RunConfig {
  std::filesystem::path model;
  std::filesystem::path data;
  std::filesystem::path out = ".";
  std::filesystem::path profile;  // defaults to <out>/profile.csv
  std::vector<std::string> layers;  // empty: every linear layer
  std::string matrization = "w1";
  std::vector<double> quantiles = {0.85, 0.95};
  std::vector<double> percentiles = {75.0};
  std::size_t topk = 5;
  std::string weights;  // "i:w,j:w" or "i,j" (unit weights)
  std::string image;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
  std::optional<std::size_t> sample;  // images pooled for thresholds
  std::size_t bins = 50;
  std::size_t toeplitz_budget = 100'000'000;
  bool mean = false;
  bool check = false;
  bool dump_matrix = false;

  /// Throws InvalidParameter for out-of-range settings.
  void validate() const;
};

/// Parses "3:0.5,7:1" or "3,7" into index → weight.
std::map<std::size_t, double> parse_vector_weights(const std::string& spec);

struct SpectrumRow {
  std::string layer_id;
  std::string matrization;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t n_svals = 0;     // min(rows, cols), counted with multiplicity
  std::size_t n_nonzero = 0;   // 0 when the spectrum was not computed
  bool computed = false;       // false when W̄2 exceeded the element budget
  std::optional<PowerLawFit> fit;
  std::string fit_error;
  double lambda_max = 0;
  std::vector<double> eigenvalues;  // nonzero Gram eigenvalues, descending
  std::optional<double> block_deviation;  // W̄2 only: max |block − W̄1W̄1ᵀ|
};

std::vector<SpectrumRow> spectrum_rows(const ModelSpec& model, const std::vector<std::string>& layers,
                                       const std::string& matrization, std::size_t toeplitz_budget);

std::vector<std::string> selected_layers(const ModelSpec& model, const RunConfig& cfg);

void cmd_decompose(const RunConfig& cfg);
void cmd_decompose(const RunConfig& cfg, const ModelSpec& model);
void cmd_spectrum(const RunConfig& cfg);
void cmd_spectrum(const RunConfig& cfg, const ModelSpec& model);
CapacityReport cmd_alpha(const RunConfig& cfg);
CapacityReport cmd_alpha(const RunConfig& cfg, const ModelSpec& model);
void cmd_profile(const RunConfig& cfg);
void cmd_hypergraph(const RunConfig& cfg);
void cmd_exemplars(const RunConfig& cfg);
/// Returns false when --check found a stage identity violation.
bool cmd_decompose_image(const RunConfig& cfg);

}  // namespace ddp
