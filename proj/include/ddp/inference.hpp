#pragma once

// Deterministic forward passes over a small layer vocabulary, the view of
// conv/fc layers as unfolded matrices, and the per-layer SVD decomposition
// pipeline used for heatmaps.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ddp/spectral.hpp"
#include "ddp/tensor.hpp"

namespace ddp {

enum class LayerKind { Conv, Fc, Relu, MaxPool, Flatten, Softmax };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct Layer {
  std::string id;
  LayerKind kind = LayerKind::Relu;
  // conv: out = d, in = c, kernel = k; fc: out, in; maxpool: kernel, stride
  std::size_t out = 0, in = 0, kernel = 0, stride = 1, pad = 0;
  DenseTensor weights;  // conv (d,c,k,k), fc (out,in)
  DenseTensor bias;     // (d) or (out)
  std::filesystem::path weights_path, bias_path;
  std::optional<Shape> input_shape, output_shape;  // filled in by validate_model

  bool is_linear() const { return kind == LayerKind::Conv || kind == LayerKind::Fc; }
};

struct ModelSpec {
  std::string name;
  Shape input_shape;
  std::vector<Layer> layers;

  const Layer& layer(const std::string& id) const;
  std::size_t index_of(const std::string& id) const;
  std::vector<std::string> linear_layer_ids() const;
  std::vector<std::string> layer_ids() const;
};

/// Propagates shapes through the layer list, fills every layer's input and
/// output shape and checks weights against declared parameters.
/// Throws ManifestInvalid on any inconsistency.
void validate_model(ModelSpec& model);

/// Reads a JSON manifest; tensor paths are relative to the manifest.
ModelSpec load_model(const std::filesystem::path& manifest);

/// Writes the manifest plus one DDPT file per weight and bias next to it.
void save_model(const ModelSpec& model, const std::filesystem::path& manifest);

struct LayerActivation {
  DenseTensor input;
  DenseTensor output;
};

struct ActivationTrace {
  std::string image_id;
  std::map<std::string, LayerActivation> layers;
  DenseTensor output;  // output of the last layer

  const LayerActivation& at(const std::string& layer_id) const;
};

ActivationTrace forward(const ModelSpec& model, const DenseTensor& x, std::string image_id = {});

/// Forward pass that stops once `layer_id` has received its input.
DenseTensor latent_input(const ModelSpec& model, const DenseTensor& x, const std::string& layer_id);

// Linear layers as matrices. A conv layer unfolds to (d, c·k²) and sees its
// zero-padded input through the receptive-field matrix; an fc layer is a
// conv whose single receptive field is the whole input vector.

DenseTensor unfolded_weights(const Layer& layer);
ConvGeometry layer_geometry(const Layer& layer);
ReceptiveFieldMatrix<double> layer_receptive_fields(const Layer& layer, const DenseTensor& x_latent);
LayerSvd layer_svd(const Layer& layer);

/// Stage tensors of one conv layer on one input. Every stage is a matrix
/// whose rows reshape to (n1, n2) heatmaps.
struct LayerDecomposition {
  std::string layer_id;
  std::size_t n1 = 0, n2 = 0, rank = 0;
  std::vector<double> singular_values;
  DenseTensor psi;        // Ψ(X)                (ck², n²)
  DenseTensor vt_psi;     // VᵀΨ(X)              (ck², n²)
  DenseTensor s_vt_psi;   // SVᵀΨ(X)             (d, n²)
  DenseTensor y_bar;      // U·SVᵀΨ(X)           (d, n²)
  DenseTensor relu;       // ReLU(Ȳ + B)         (d, n²)
  DenseTensor ut_relu;    // U_rᵀ ReLU(Ȳ + B)    (rank, n²)
};

LayerDecomposition decompose_layer(const Layer& layer, const LayerSvd& svd, const DenseTensor& x_latent);
LayerDecomposition decompose_layer(const ModelSpec& model, const std::string& layer_id, const DenseTensor& x);

/// Writes <dir>/<stage>/row_<i>.csv and .svg for every stage row.
void export_heatmaps(const LayerDecomposition& decomp, const std::filesystem::path& dir);

struct DatasetEntry {
  std::string image_id;
  std::string class_label;
  std::filesystem::path path;
};

/// Reads <dir>/labels.csv (image_id,class_label); images live at
/// <dir>/<image_id>.ddpt.
std::vector<DatasetEntry> read_dataset_index(const std::filesystem::path& dir);

}  // namespace ddp
