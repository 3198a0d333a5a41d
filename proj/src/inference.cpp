#include "ddp/inference.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "ddp/csv.hpp"
#include "ddp/ddpt_io.hpp"

namespace ddp {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Fc: return "fc";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto k : {LayerKind::Conv, LayerKind::Fc, LayerKind::Relu, LayerKind::MaxPool, LayerKind::Flatten,
                 LayerKind::Softmax})
    if (to_string(k) == name) return k;
  throw Error(ErrorKind::ManifestInvalid, "unknown layer kind '" + std::string(name) + "'");
}

const Layer& ModelSpec::layer(const std::string& id) const { return layers[index_of(id)]; }

std::size_t ModelSpec::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].id == id) return i;
  std::string known;
  for (const auto& l : layers) known += (known.empty() ? "" : ", ") + l.id;
  throw Error(ErrorKind::InvalidInput, "unknown layer '" + id + "'; available: " + known);
}

std::vector<std::string> ModelSpec::linear_layer_ids() const {
  std::vector<std::string> ids;
  for (const auto& l : layers)
    if (l.is_linear()) ids.push_back(l.id);
  return ids;
}

std::vector<std::string> ModelSpec::layer_ids() const {
  std::vector<std::string> ids;
  for (const auto& l : layers) ids.push_back(l.id);
  return ids;
}

const LayerActivation& ActivationTrace::at(const std::string& layer_id) const {
  const auto it = layers.find(layer_id);
  if (it == layers.end()) throw Error(ErrorKind::InvalidInput, "trace has no layer '" + layer_id + "'");
  return it->second;
}

namespace {

[[noreturn]] void invalid(const Layer& l, const std::string& what) {
  throw Error(ErrorKind::ManifestInvalid, "layer '" + l.id + "' (" + std::string(to_string(l.kind)) + "): " + what);
}

void require_tensor_shape(const Layer& l, const DenseTensor& t, const Shape& expected, const char* what) {
  if (!(t.shape() == expected))
    invalid(l, std::string(what) + " has shape " + t.shape().str() + ", expected " + expected.str());
}

Shape infer_output(Layer& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::Conv: {
      if (in.rank() != 3) invalid(l, "expects a (c,m,m) input, got " + in.str());
      if (l.out == 0 || l.kernel == 0 || l.stride == 0) invalid(l, "d, k and stride must be positive");
      if (in[0] != l.in) invalid(l, "declares c=" + std::to_string(l.in) + " but receives " + in.str());
      const std::size_t m1 = in[1] + 2 * l.pad, m2 = in[2] + 2 * l.pad;
      if (l.kernel > m1 || l.kernel > m2) invalid(l, "kernel larger than padded input " + in.str());
      require_tensor_shape(l, l.weights, Shape{l.out, l.in, l.kernel, l.kernel}, "weights");
      require_tensor_shape(l, l.bias, Shape{l.out}, "bias");
      return Shape{l.out, (m1 - l.kernel) / l.stride + 1, (m2 - l.kernel) / l.stride + 1};
    }
    case LayerKind::Fc:
      // Inputs of any order are read in row-major order.
      if (in.count() != l.in) invalid(l, "declares in=" + std::to_string(l.in) + " but receives " + in.str());
      if (l.out == 0) invalid(l, "out must be positive");
      require_tensor_shape(l, l.weights, Shape{l.out, l.in}, "weights");
      require_tensor_shape(l, l.bias, Shape{l.out}, "bias");
      return Shape{l.out};
    case LayerKind::MaxPool:
      if (in.rank() != 3) invalid(l, "expects a (c,m,m) input, got " + in.str());
      if (l.kernel == 0 || l.stride == 0) invalid(l, "k and stride must be positive");
      if (l.kernel > in[1] || l.kernel > in[2]) invalid(l, "window larger than input " + in.str());
      return Shape{in[0], (in[1] - l.kernel) / l.stride + 1, (in[2] - l.kernel) / l.stride + 1};
    case LayerKind::Flatten:
      return Shape{in.count()};
    case LayerKind::Relu:
    case LayerKind::Softmax:
      return in;
  }
  invalid(l, "unhandled kind");
}

std::size_t get_size(const json& params, const Layer& l, const char* key, std::optional<std::size_t> fallback = {}) {
  if (!params.contains(key)) {
    if (fallback) return *fallback;
    invalid(l, std::string("missing parameter '") + key + "'");
  }
  const auto& v = params.at(key);
  if (!v.is_number_unsigned()) invalid(l, std::string("parameter '") + key + "' must be a nonnegative integer");
  return v.get<std::size_t>();
}

}  // namespace

void validate_model(ModelSpec& model) {
  if (model.layers.empty()) throw Error(ErrorKind::ManifestInvalid, "model '" + model.name + "' has no layers");
  std::vector<std::string> seen;
  Shape current = model.input_shape;
  for (auto& l : model.layers) {
    if (l.id.empty()) throw Error(ErrorKind::ManifestInvalid, "layer without id");
    if (std::find(seen.begin(), seen.end(), l.id) != seen.end())
      throw Error(ErrorKind::ManifestInvalid, "duplicate layer id '" + l.id + "'");
    seen.push_back(l.id);
    l.input_shape = current;
    current = infer_output(l, current);
    l.output_shape = current;
  }
}

ModelSpec load_model(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorKind::IoError, "cannot open manifest " + manifest.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ManifestInvalid, manifest.string() + ": " + e.what());
  }
  const fs::path base = manifest.parent_path();
  ModelSpec model;
  try {
    model.name = doc.value("name", "");
    if (!doc.contains("input_shape")) throw Error(ErrorKind::ManifestInvalid, "manifest lacks input_shape");
    model.input_shape = Shape(doc.at("input_shape").get<std::vector<std::size_t>>());
    if (!doc.contains("layers") || !doc.at("layers").is_array())
      throw Error(ErrorKind::ManifestInvalid, "manifest lacks a layers array");
    for (const auto& entry : doc.at("layers")) {
      Layer l;
      l.id = entry.at("id").get<std::string>();
      l.kind = parse_layer_kind(entry.at("kind").get<std::string>());
      const json params = entry.value("params", json::object());
      switch (l.kind) {
        case LayerKind::Conv:
          l.out = get_size(params, l, "d");
          l.in = get_size(params, l, "c");
          l.kernel = get_size(params, l, "k");
          l.stride = get_size(params, l, "stride", 1);
          l.pad = get_size(params, l, "pad", 0);
          break;
        case LayerKind::Fc:
          l.out = get_size(params, l, "out");
          l.in = get_size(params, l, "in");
          break;
        case LayerKind::MaxPool:
          l.kernel = get_size(params, l, "k");
          l.stride = get_size(params, l, "stride", l.kernel);
          break;
        default:
          break;
      }
      if (l.is_linear()) {
        if (!entry.contains("weights")) invalid(l, "missing weights reference");
        l.weights_path = entry.at("weights").get<std::string>();
        l.weights = read_ddpt(base / l.weights_path);
        if (entry.contains("bias")) {
          l.bias_path = entry.at("bias").get<std::string>();
          l.bias = read_ddpt(base / l.bias_path);
        } else {
          l.bias = DenseTensor(Shape{l.out});
        }
      }
      model.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ManifestInvalid, manifest.string() + ": " + e.what());
  }
  validate_model(model);
  return model;
}

void save_model(const ModelSpec& model, const fs::path& manifest) {
  const fs::path base = manifest.parent_path();
  if (!base.empty()) fs::create_directories(base);
  json doc;
  doc["name"] = model.name;
  doc["input_shape"] = model.input_shape.dims();
  doc["layers"] = json::array();
  for (const auto& l : model.layers) {
    json entry;
    entry["id"] = l.id;
    entry["kind"] = std::string(to_string(l.kind));
    json params = json::object();
    switch (l.kind) {
      case LayerKind::Conv:
        params = {{"d", l.out}, {"c", l.in}, {"k", l.kernel}, {"stride", l.stride}, {"pad", l.pad}};
        break;
      case LayerKind::Fc:
        params = {{"out", l.out}, {"in", l.in}};
        break;
      case LayerKind::MaxPool:
        params = {{"k", l.kernel}, {"stride", l.stride}};
        break;
      default:
        break;
    }
    entry["params"] = params;
    if (l.is_linear()) {
      const fs::path wp = l.weights_path.empty() ? fs::path(l.id + ".weight.ddpt") : l.weights_path;
      const fs::path bp = l.bias_path.empty() ? fs::path(l.id + ".bias.ddpt") : l.bias_path;
      if (!wp.parent_path().empty()) fs::create_directories(base / wp.parent_path());
      write_ddpt(base / wp, l.weights);
      write_ddpt(base / bp, l.bias);
      entry["weights"] = wp.generic_string();
      entry["bias"] = bp.generic_string();
    }
    doc["layers"].push_back(entry);
  }
  std::ofstream out(manifest);
  if (!out) throw Error(ErrorKind::IoError, "cannot write manifest " + manifest.string());
  out << doc.dump(2) << '\n';
}

namespace {

DenseTensor apply_layer(const Layer& l, const DenseTensor& x) {
  switch (l.kind) {
    case LayerKind::Conv: {
      auto y = cross_correlate(l.weights, zero_pad(x, l.pad), l.stride);
      const std::size_t plane = y.extent(1) * y.extent(2);
      for (std::size_t h = 0; h < y.extent(0); ++h)
        for (std::size_t p = 0; p < plane; ++p) y[h * plane + p] += l.bias[h];
      return y;
    }
    case LayerKind::Fc: {
      DenseTensor y(Shape{l.out});
      for (std::size_t o = 0; o < l.out; ++o) {
        double acc = 0;
        for (std::size_t i = 0; i < l.in; ++i) acc += l.weights[o * l.in + i] * x[i];
        y[o] = acc + l.bias[o];
      }
      return y;
    }
    case LayerKind::Relu: {
      DenseTensor y = x;
      for (auto& v : y.data()) v = std::max(v, 0.0);
      return y;
    }
    case LayerKind::MaxPool: {
      const std::size_t c = x.extent(0), m1 = x.extent(1), m2 = x.extent(2);
      const std::size_t n1 = output_extent(m1, l.kernel, l.stride), n2 = output_extent(m2, l.kernel, l.stride);
      DenseTensor y(Shape{c, n1, n2});
      for (std::size_t r = 0; r < c; ++r)
        for (std::size_t i = 0; i < n1; ++i)
          for (std::size_t j = 0; j < n2; ++j) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t s = 0; s < l.kernel; ++s)
              for (std::size_t t = 0; t < l.kernel; ++t)
                best = std::max(best, x[(r * m1 + i * l.stride + s) * m2 + j * l.stride + t]);
            y[(r * n1 + i) * n2 + j] = best;
          }
      return y;
    }
    case LayerKind::Flatten:
      return flatten(x);
    case LayerKind::Softmax: {
      DenseTensor y = x;
      const double peak = *std::max_element(y.data().begin(), y.data().end());
      double total = 0;
      for (auto& v : y.data()) total += (v = std::exp(v - peak));
      for (auto& v : y.data()) v /= total;
      return y;
    }
  }
  return x;
}

void require_model_input(const ModelSpec& model, const DenseTensor& x) {
  if (!(x.shape() == model.input_shape))
    throw Error(ErrorKind::ShapeMismatch, "model '" + model.name + "' expects input " + model.input_shape.str() +
                                              ", got " + x.shape().str());
}

}  // namespace

ActivationTrace forward(const ModelSpec& model, const DenseTensor& x, std::string image_id) {
  require_model_input(model, x);
  ActivationTrace trace;
  trace.image_id = std::move(image_id);
  DenseTensor current = x;
  for (const auto& l : model.layers) {
    DenseTensor next = apply_layer(l, current);
    trace.layers[l.id] = {std::move(current), next};
    current = std::move(next);
  }
  trace.output = std::move(current);
  return trace;
}

DenseTensor latent_input(const ModelSpec& model, const DenseTensor& x, const std::string& layer_id) {
  require_model_input(model, x);
  const std::size_t stop = model.index_of(layer_id);
  DenseTensor current = x;
  for (std::size_t i = 0; i < stop; ++i) current = apply_layer(model.layers[i], current);
  return current;
}

DenseTensor unfolded_weights(const Layer& layer) {
  switch (layer.kind) {
    case LayerKind::Conv:
      return reshape(layer.weights, Shape{layer.out, layer.in * layer.kernel * layer.kernel});
    case LayerKind::Fc:
      return layer.weights;
    default:
      throw Error(ErrorKind::InvalidLayerKind, "layer '" + layer.id + "' is not linear");
  }
}

ConvGeometry layer_geometry(const Layer& layer) {
  if (!layer.input_shape) throw Error(ErrorKind::InvalidInput, "layer '" + layer.id + "' has not been validated");
  const Shape& in = *layer.input_shape;
  switch (layer.kind) {
    case LayerKind::Conv:
      return ConvGeometry::make(in[0], in[1] + 2 * layer.pad, in[2] + 2 * layer.pad, layer.kernel, layer.kernel,
                                layer.stride);
    case LayerKind::Fc:
      return ConvGeometry::make(layer.in, 1, 1, 1, 1, 1);
    default:
      throw Error(ErrorKind::InvalidLayerKind, "layer '" + layer.id + "' is not linear");
  }
}

ReceptiveFieldMatrix<double> layer_receptive_fields(const Layer& layer, const DenseTensor& x_latent) {
  switch (layer.kind) {
    case LayerKind::Conv:
      if (x_latent.rank() != 3 || x_latent.extent(0) != layer.in)
        throw Error(ErrorKind::ShapeMismatch, "layer '" + layer.id + "' cannot read input " + x_latent.shape().str());
      return build_receptive_field_matrix(zero_pad(x_latent, layer.pad), layer.kernel, layer.kernel, layer.stride);
    case LayerKind::Fc:
      if (x_latent.size() != layer.in)
        throw Error(ErrorKind::ShapeMismatch, "layer '" + layer.id + "' cannot read input " + x_latent.shape().str());
      return build_receptive_field_matrix(reshape(x_latent, Shape{layer.in, 1, 1}), 1, 1, 1);
    default:
      throw Error(ErrorKind::InvalidLayerKind, "layer '" + layer.id + "' is not linear");
  }
}

LayerSvd layer_svd(const Layer& layer) { return layer_svd(unfolded_weights(layer), layer.id); }

LayerDecomposition decompose_layer(const Layer& layer, const LayerSvd& svd, const DenseTensor& x_latent) {
  if (layer.kind != LayerKind::Conv)
    throw Error(ErrorKind::InvalidLayerKind, "layer '" + layer.id + "' is " + std::string(to_string(layer.kind)) +
                                                 ", decomposition needs a conv layer");
  const auto psi = layer_receptive_fields(layer, x_latent);
  const auto& Psi = psi.matrix.matrix();
  const Eigen::Index d = svd.u.rows(), positions = Psi.cols();

  LayerDecomposition out;
  out.layer_id = layer.id;
  out.n1 = psi.geometry.n1;
  out.n2 = psi.geometry.n2;
  out.rank = svd.rank;
  out.singular_values.assign(svd.s.data(), svd.s.data() + svd.s.size());
  out.psi = psi.matrix;

  const RowMatrix<double> vt_psi = svd.v.transpose() * Psi;
  RowMatrix<double> s_vt_psi = RowMatrix<double>::Zero(d, positions);
  for (Eigen::Index i = 0; i < svd.s.size(); ++i) s_vt_psi.row(i) = svd.s(i) * vt_psi.row(i);
  const RowMatrix<double> y_bar = svd.u * s_vt_psi;
  RowMatrix<double> relu = y_bar;
  for (Eigen::Index h = 0; h < d; ++h)
    relu.row(h) = (relu.row(h).array() + layer.bias[static_cast<std::size_t>(h)]).cwiseMax(0.0);
  const auto r = static_cast<Eigen::Index>(svd.rank);
  const RowMatrix<double> ut_relu = svd.u.leftCols(r).transpose() * relu;

  out.vt_psi = from_matrix(vt_psi);
  out.s_vt_psi = from_matrix(s_vt_psi);
  out.y_bar = from_matrix(y_bar);
  out.relu = from_matrix(relu);
  out.ut_relu = r > 0 ? from_matrix(ut_relu) : DenseTensor();
  return out;
}

LayerDecomposition decompose_layer(const ModelSpec& model, const std::string& layer_id, const DenseTensor& x) {
  const Layer& layer = model.layer(layer_id);
  if (layer.kind != LayerKind::Conv)
    throw Error(ErrorKind::InvalidLayerKind, "layer '" + layer_id + "' is not a conv layer");
  return decompose_layer(layer, layer_svd(layer), latent_input(model, x, layer_id));
}

std::vector<DatasetEntry> read_dataset_index(const fs::path& dir) {
  const fs::path labels = dir / "labels.csv";
  std::ifstream in(labels);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + labels.string());
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"image_id", "class_label"})
    throw Error(ErrorKind::InvalidInput, labels.string() + ": expected header image_id,class_label");
  std::vector<DatasetEntry> entries;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 2 || fields[0].empty())
      throw Error(ErrorKind::InvalidInput, labels.string() + ": malformed row '" + line + "'");
    entries.push_back({fields[0], fields[1], dir / (fields[0] + ".ddpt")});
  }
  return entries;
}

}  // namespace ddp
