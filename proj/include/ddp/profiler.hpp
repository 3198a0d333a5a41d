#pragma once

// Signal vectors, significance, class hypergraphs, the semantic hierarchy of
// singular-vector equivalence classes, and exemplar ranking.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddp/inference.hpp"
#include "ddp/spectral.hpp"

namespace ddp {

/// σ[i] = mean over the columns v of Ψ of s_i·⟨v, v_i⟩, for i below the
/// layer's numerical rank. Columns are accumulated in order.
std::vector<double> signal_vector(const LayerSvd& svd, const ReceptiveFieldMatrix<double>& psi);
std::vector<double> signal_vector(const Layer& layer, const LayerSvd& svd, const DenseTensor& x_latent);

struct LayerSignals {
  std::size_t rank = 0;
  std::size_t positions = 1;  // receptive fields per image (n1·n2)
  std::vector<std::vector<double>> sigma;  // indexed like SignalProfile::image_ids
};

struct SignalProfile {
  std::vector<std::string> image_ids;
  std::vector<std::string> class_labels;
  std::vector<std::string> layer_order;
  std::map<std::string, LayerSignals> layers;

  const LayerSignals& layer(const std::string& layer_id) const;
  /// Distinct class labels, sorted.
  std::vector<std::string> classes() const;
};

struct ProfileImage {
  std::string image_id;
  std::string class_label;
  DenseTensor tensor;
};

/// Forward passes every image and records σ for each requested linear layer.
/// Per-image work runs on `threads` workers; the result is independent of
/// the thread count.
SignalProfile profile_dataset(const ModelSpec& model, const std::vector<std::string>& layer_ids,
                              const std::vector<ProfileImage>& images, std::size_t threads = 1);

/// Lower-side quantile: the sorted sample at index ⌊quantile·(n−1)⌋.
double quantile_threshold(std::span<const double> samples, double quantile);

/// All σ entries of one layer, optionally restricted to a seeded subsample
/// of images.
std::vector<double> pooled_signals(const SignalProfile& profile, const std::string& layer_id,
                                   std::optional<std::size_t> sample_size = {}, std::uint64_t seed = 0);

/// { i : σ[i] > q }
std::vector<std::size_t> significant_for_image(std::span<const double> sigma, double q);

struct ClassHypergraph {
  std::string layer_id;
  double q = 0;
  double p = 0;
  std::map<std::string, std::vector<std::size_t>> hyperedges;  // class → sorted node indices
  std::vector<std::size_t> nodes;                              // sorted union of hyperedges

  bool empty() const { return hyperedges.empty(); }
};

/// Node i joins hyperedge C when at least p% of C's images have σ[i] > q.
/// Requires 50 < p ≤ 100 and q > 0.
ClassHypergraph build_hypergraph(const SignalProfile& profile, const std::string& layer_id, double q, double p);

std::vector<ClassHypergraph> hypergraph_family(const SignalProfile& profile, const std::string& layer_id,
                                               std::span<const double> q_list, std::span<const double> p_list);

struct EquivalenceClass {
  std::vector<std::size_t> members;  // sorted
  std::vector<std::string> classes;  // shared hyperedge set, sorted

  std::size_t representative() const { return members.front(); }
};

struct SemanticHierarchy {
  std::vector<EquivalenceClass> classes;  // ordered by representative
  /// (general, specific) pairs indexing `classes`: the transitive reduction
  /// of strict superset order on the hyperedge sets.
  std::vector<std::pair<std::size_t, std::size_t>> hasse_edges;
};

SemanticHierarchy semantic_hierarchy(const ClassHypergraph& h);

struct ScoredImage {
  std::string image_id;
  double score = 0;
};

/// Ranks images by Σ_i w_i·σ[i]·positions, descending, ties by image id.
std::vector<ScoredImage> exemplars(const SignalProfile& profile, const std::string& layer_id,
                                   const std::map<std::size_t, double>& weights, std::size_t k);

// Serialization.

void write_profile_csv(std::ostream& os, const SignalProfile& profile);
/// Layer metadata (layer_id,rank,positions) that profile.csv cannot carry.
void write_profile_layers_csv(std::ostream& os, const SignalProfile& profile);
SignalProfile read_profile(const std::filesystem::path& profile_csv,
                           const std::filesystem::path& layers_csv = {});

std::string hypergraph_json(const ClassHypergraph& h);
void write_hierarchy_dot(std::ostream& os, const SemanticHierarchy& hierarchy, const std::string& graph_name);

}  // namespace ddp
