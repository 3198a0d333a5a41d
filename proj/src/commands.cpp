#include "ddp/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "ddp/conv_algebra.hpp"
#include "ddp/csv.hpp"
#include "ddp/ddpt_io.hpp"
#include "ddp/log.hpp"
#include "ddp/profiler.hpp"

namespace ddp {
namespace fs = std::filesystem;
namespace {

constexpr double kBlockTolerance = 1e-10;
constexpr double kStageTolerance = 1e-9;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  return out;
}

std::string fmt_or_nan(const std::optional<double>& v) { return v ? format_double(*v) : "nan"; }

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// "0.85" → "85", "0.995" → "99.5"
std::string percent_tag(double fraction_or_percent, bool is_fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", is_fraction ? fraction_or_percent * 100.0 : fraction_or_percent);
  return buf;
}

/// Weight tensor of a linear layer in (d, c, k1, k2) form.
DenseTensor filter_bank(const Layer& layer) {
  if (layer.kind == LayerKind::Fc) return reshape(layer.weights, Shape{layer.out, layer.in, 1, 1});
  return layer.weights;
}

std::size_t count_nonzero(const Eigen::VectorXd& eig, std::size_t rows, std::size_t cols) {
  if (eig.size() == 0 || !(eig(0) > 0)) return 0;
  const double tol = static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * eig(0);
  std::size_t n = 0;
  while (n < static_cast<std::size_t>(eig.size()) && eig(static_cast<Eigen::Index>(n)) > tol) ++n;
  return n;
}

void fill_fit(SpectrumRow& row) {
  if (row.eigenvalues.empty()) {
    row.fit_error = "InsufficientSamples: no nonzero eigenvalues";
    return;
  }
  row.lambda_max = row.eigenvalues.front();
  try {
    row.fit = fit_power_law(row.eigenvalues);
  } catch (const Error& e) {
    row.fit_error = e.what();
  }
}

}  // namespace

void RunConfig::validate() const {
  if (matrization != "w1" && matrization != "w2")
    throw Error(ErrorKind::InvalidParameter, "matrization must be w1 or w2, got '" + matrization + "'");
  for (double q : quantiles)
    if (!(q > 0 && q < 1)) throw Error(ErrorKind::InvalidParameter, "quantiles must lie in (0,1)");
  for (double p : percentiles)
    if (!(p > 50 && p <= 100)) throw Error(ErrorKind::InvalidParameter, "percentiles must lie in (50,100]");
  if (threads < 1) throw Error(ErrorKind::InvalidParameter, "threads must be at least 1");
  if (topk < 1) throw Error(ErrorKind::InvalidParameter, "topk must be at least 1");
  if (bins < 1) throw Error(ErrorKind::InvalidParameter, "bins must be at least 1");
}

std::map<std::size_t, double> parse_vector_weights(const std::string& spec) {
  std::map<std::size_t, double> weights;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    const std::size_t index = parse_index(item.substr(0, colon));
    const double w = colon == std::string::npos ? 1.0 : parse_double(item.substr(colon + 1));
    weights[index] = w;
  }
  return weights;
}

std::vector<std::string> selected_layers(const ModelSpec& model, const RunConfig& cfg) {
  if (cfg.layers.empty()) return model.linear_layer_ids();
  for (const auto& id : cfg.layers)
    if (!model.layer(id).is_linear())
      throw Error(ErrorKind::InvalidLayerKind, "layer '" + id + "' is not a conv or fc layer");
  return cfg.layers;
}

std::vector<SpectrumRow> spectrum_rows(const ModelSpec& model, const std::vector<std::string>& layers,
                                       const std::string& matrization, std::size_t toeplitz_budget) {
  std::vector<SpectrumRow> rows;
  for (const auto& id : layers) {
    const Layer& layer = model.layer(id);
    SpectrumRow row;
    row.layer_id = id;
    row.matrization = matrization;
    const DenseTensor w1 = unfolded_weights(layer);
    if (matrization == "w1") {
      row.rows = w1.extent(0);
      row.cols = w1.extent(1);
      row.n_svals = std::min(row.rows, row.cols);
      const auto eig = gram_eigenvalues(w1);
      row.n_nonzero = count_nonzero(eig, row.rows, row.cols);
      row.eigenvalues.assign(eig.data(), eig.data() + row.n_nonzero);
      row.computed = true;
    } else {
      const auto g = layer_geometry(layer);
      const auto wt = toeplitz_weights(filter_bank(layer), g.m1, g.m2, g.stride, toeplitz_budget);
      row.rows = wt.rows();
      row.cols = wt.cols();
      row.n_svals = std::min(row.rows, row.cols);
      if (wt.materialized()) {
        const auto eig = gram_eigenvalues(wt.matrix());
        row.n_nonzero = count_nonzero(eig, row.rows, row.cols);
        row.eigenvalues.assign(eig.data(), eig.data() + row.n_nonzero);
        row.computed = true;
        const RowMatrix<double> gram1 = w1.matrix() * w1.matrix().transpose();
        double worst = 0;
        for (const auto& block : w2_gram_diagonal_blocks(wt))
          worst = std::max(worst, (block.matrix() - gram1).cwiseAbs().maxCoeff());
        row.block_deviation = worst;
      } else {
        log().warn("layer {}: W2 has {}x{} entries, above the budget of {}; only counts reported", id, row.rows,
                   row.cols, toeplitz_budget);
      }
    }
    if (row.computed) fill_fit(row);
    if (!row.fit_error.empty()) log().warn("layer {} ({}): {}", id, matrization, row.fit_error);
    rows.push_back(std::move(row));
  }
  return rows;
}

void cmd_decompose(const RunConfig& cfg) { cmd_decompose(cfg, load_model(cfg.model)); }

void cmd_decompose(const RunConfig& cfg, const ModelSpec& model) {
  cfg.validate();
  ensure_dir(cfg.out);
  auto summary = open_out(cfg.out / "svd_summary.csv");
  summary << "layer_id,d,ck2,n_svals,s0,s_min_nonzero\n";
  for (const auto& id : selected_layers(model, cfg)) {
    const Layer& layer = model.layer(id);
    const DenseTensor w1 = unfolded_weights(layer);
    const LayerSvd ls = layer_svd(w1, id);
    if (layer.kind == LayerKind::Fc) log().info("layer {} is fully connected; decomposed as a k=m conv", id);
    write_ddpt(cfg.out / (id + "_U.ddpt"), from_matrix(RowMatrix<double>(ls.u)));
    write_ddpt(cfg.out / (id + "_S.ddpt"), from_vector(ls.s));
    write_ddpt(cfg.out / (id + "_V.ddpt"), from_matrix(RowMatrix<double>(ls.v)));
    summary << id << ',' << w1.extent(0) << ',' << w1.extent(1) << ',' << ls.rank << ','
            << format_double(ls.s.size() ? ls.s(0) : 0.0) << ','
            << format_double(ls.rank ? ls.s(static_cast<Eigen::Index>(ls.rank - 1)) : 0.0) << '\n';
    if (cfg.dump_matrix) {
      write_ddpt(cfg.out / (id + "_W1.ddpt"), w1);
      if (cfg.matrization == "w2") {
        const auto g = layer_geometry(layer);
        const auto wt = toeplitz_weights(filter_bank(layer), g.m1, g.m2, g.stride, cfg.toeplitz_budget);
        if (wt.materialized())
          write_ddpt(cfg.out / (id + "_W2.ddpt"), wt.matrix());
        else
          log().warn("layer {}: W2 exceeds the element budget, not dumped", id);
      }
    }
  }
}

void cmd_spectrum(const RunConfig& cfg) { cmd_spectrum(cfg, load_model(cfg.model)); }

void cmd_spectrum(const RunConfig& cfg, const ModelSpec& model) {
  cfg.validate();
  ensure_dir(cfg.out / "esd");
  const auto rows = spectrum_rows(model, selected_layers(model, cfg), cfg.matrization, cfg.toeplitz_budget);
  const std::string& m = cfg.matrization;

  auto report = open_out(cfg.out / ("spectrum_" + m + ".csv"));
  report << "layer_id,n_svals,alpha,xmin,ks,lambda_max\n";
  auto counts = open_out(cfg.out / ("counts_" + m + ".csv"));
  counts << "layer_id,rows,cols,n_svals,n_nonzero,spectrum_computed\n";
  for (const auto& r : rows) {
    report << r.layer_id << ',' << r.n_svals << ',' << fmt_or_nan(r.fit ? std::optional(r.fit->alpha) : std::nullopt)
           << ',' << fmt_or_nan(r.fit ? std::optional(r.fit->xmin) : std::nullopt) << ','
           << fmt_or_nan(r.fit ? std::optional(r.fit->ks_distance) : std::nullopt) << ','
           << fmt_or_nan(r.computed ? std::optional(r.lambda_max) : std::nullopt) << '\n';
    counts << r.layer_id << ',' << r.rows << ',' << r.cols << ',' << r.n_svals << ',' << r.n_nonzero << ','
           << (r.computed ? "yes" : "no") << '\n';
    if (!r.eigenvalues.empty()) {
      auto esd = open_out(cfg.out / "esd" / (r.layer_id + "_" + m + ".csv"));
      write_esd_csv(esd, esd_histogram(r.eigenvalues, cfg.bins));
      auto values = open_out(cfg.out / "esd" / (r.layer_id + "_" + m + "_values.csv"));
      values << "eigenvalue\n";
      for (auto it = r.eigenvalues.rbegin(); it != r.eigenvalues.rend(); ++it) values << format_double(*it) << '\n';
    }
  }
  if (m == "w2") {
    auto check = open_out(cfg.out / "w2_block_check.csv");
    check << "layer_id,blocks,max_abs_deviation,status\n";
    for (const auto& r : rows) {
      const Layer& layer = model.layer(r.layer_id);
      const std::size_t blocks = layer_geometry(layer).positions();
      check << r.layer_id << ',' << blocks << ',' << fmt_or_nan(r.block_deviation) << ','
            << (!r.block_deviation ? "skipped" : (*r.block_deviation <= kBlockTolerance ? "pass" : "fail")) << '\n';
    }
  }
}

CapacityReport cmd_alpha(const RunConfig& cfg) { return cmd_alpha(cfg, load_model(cfg.model)); }

CapacityReport cmd_alpha(const RunConfig& cfg, const ModelSpec& model) {
  cfg.validate();
  ensure_dir(cfg.out);
  std::vector<CapacityEntry> entries;
  auto layers_csv = open_out(cfg.out / "capacity.csv");
  layers_csv << "layer_id,alpha,xmin,ks,n_tail,lambda_max\n";
  for (const auto& id : selected_layers(model, cfg)) {
    const auto ls = layer_singular_values(unfolded_weights(model.layer(id)), id);
    try {
      const auto la = layer_alpha(ls);
      entries.push_back({id, la.alpha, la.lambda_max});
      layers_csv << id << ',' << format_double(la.alpha) << ',' << format_double(la.fit.xmin) << ','
                 << format_double(la.fit.ks_distance) << ',' << la.fit.n_tail << ',' << format_double(la.lambda_max)
                 << '\n';
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::InsufficientSamples) throw;
      log().warn("layer {} skipped: {}", id, e.what());
    }
  }
  if (entries.empty()) log().warn("no layer has enough nonzero eigenvalues for a power-law fit; report is empty");
  const auto summed = capacity_metric(entries, false);
  const auto averaged = capacity_metric(entries, true);
  auto summary = open_out(cfg.out / "capacity_summary.csv");
  summary << "variant,alpha_hat,alpha_hat_sum,alpha_hat_mean,n_layers,log\n";
  summary << (cfg.mean ? "mean" : "sum") << ',' << format_double(cfg.mean ? averaged.alpha_hat : summed.alpha_hat)
          << ',' << format_double(summed.alpha_hat) << ',' << format_double(averaged.alpha_hat) << ','
          << entries.size() << ",natural\n";
  return cfg.mean ? averaged : summed;
}

void cmd_profile(const RunConfig& cfg) {
  cfg.validate();
  const ModelSpec model = load_model(cfg.model);
  ensure_dir(cfg.out);
  const auto layers = selected_layers(model, cfg);
  auto run_log = open_out(cfg.out / "run.log");

  std::vector<ProfileImage> images;
  for (const auto& entry : read_dataset_index(cfg.data)) {
    try {
      auto tensor = read_ddpt(entry.path);
      if (!(tensor.shape() == model.input_shape))
        throw Error(ErrorKind::ShapeMismatch, "image shape " + tensor.shape().str() + " does not match model input " +
                                                  model.input_shape.str());
      images.push_back({entry.image_id, entry.class_label, std::move(tensor)});
    } catch (const Error& e) {
      log().warn("skipping image {}: {}", entry.image_id, e.what());
      run_log << "skipped " << entry.image_id << ": " << e.what() << '\n';
    }
  }
  run_log << "profiled " << images.size() << " images over " << layers.size() << " layers\n";

  const auto profile = profile_dataset(model, layers, images, cfg.threads);
  auto csv = open_out(cfg.out / "profile.csv");
  write_profile_csv(csv, profile);
  auto meta = open_out(cfg.out / "profile_layers.csv");
  write_profile_layers_csv(meta, profile);

  auto qcsv = open_out(cfg.out / "quantiles.csv");
  qcsv << "layer_id,quantile,q,scope,images_pooled\n";
  for (const auto& id : layers) {
    if (images.empty()) break;
    const auto pooled = pooled_signals(profile, id, cfg.sample, cfg.seed);
    if (pooled.empty()) continue;
    const std::size_t pooled_images = cfg.sample ? std::min(*cfg.sample, images.size()) : images.size();
    for (double quantile : cfg.quantiles)
      qcsv << id << ',' << short_num(quantile) << ',' << format_double(quantile_threshold(pooled, quantile))
           << ",per_layer," << pooled_images << '\n';
  }
}

namespace {

SignalProfile load_profile(const RunConfig& cfg) {
  const fs::path csv = cfg.profile.empty() ? cfg.out / "profile.csv" : cfg.profile;
  const fs::path meta = csv.parent_path() / "profile_layers.csv";
  return read_profile(csv, fs::exists(meta) ? meta : fs::path{});
}

}  // namespace

void cmd_hypergraph(const RunConfig& cfg) {
  cfg.validate();
  const auto profile = load_profile(cfg);
  ensure_dir(cfg.out);
  const auto layers = cfg.layers.empty() ? profile.layer_order : cfg.layers;
  auto index = open_out(cfg.out / "hypergraphs.csv");
  index << "layer_id,quantile,q,p,n_nodes,n_hyperedges,n_equivalence_classes,json,dot\n";
  for (const auto& id : layers) {
    const auto pooled = pooled_signals(profile, id, cfg.sample, cfg.seed);
    if (pooled.empty()) throw Error(ErrorKind::InvalidInput, "profile has no signals for layer '" + id + "'");
    for (double quantile : cfg.quantiles) {
      const double q = quantile_threshold(pooled, quantile);
      for (double p : cfg.percentiles) {
        const auto h = build_hypergraph(profile, id, q, p);
        const auto hierarchy = semantic_hierarchy(h);
        const std::string stem = id + "_q" + percent_tag(quantile, true) + "_p" + percent_tag(p, false);
        auto json = open_out(cfg.out / ("hypergraph_" + stem + ".json"));
        json << hypergraph_json(h) << '\n';
        auto dot = open_out(cfg.out / ("hierarchy_" + stem + ".dot"));
        write_hierarchy_dot(dot, hierarchy, stem);
        index << id << ',' << short_num(quantile) << ',' << format_double(q) << ',' << short_num(p) << ','
              << h.nodes.size() << ',' << h.hyperedges.size() << ',' << hierarchy.classes.size() << ",hypergraph_"
              << stem << ".json,hierarchy_" << stem << ".dot\n";
        if (h.empty()) log().info("layer {} q={} p={}: empty hypergraph", id, q, p);
      }
    }
  }
}

void cmd_exemplars(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.layers.size() != 1) throw Error(ErrorKind::InvalidParameter, "exemplars needs exactly one layer in --layers");
  const auto weights = parse_vector_weights(cfg.weights);
  if (weights.empty()) throw Error(ErrorKind::InvalidParameter, "exemplars needs --weights (e.g. 3,7 or 3:0.5,7:1)");
  const auto profile = load_profile(cfg);
  const auto ranked = exemplars(profile, cfg.layers.front(), weights, cfg.topk);
  ensure_dir(cfg.out);
  auto csv = open_out(cfg.out / "exemplars.csv");
  csv << "rank,image_id,score\n";
  for (std::size_t r = 0; r < ranked.size(); ++r)
    csv << r + 1 << ',' << ranked[r].image_id << ',' << format_double(ranked[r].score) << '\n';
  if (!cfg.data.empty()) {
    ensure_dir(cfg.out / "exemplars");
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const fs::path src = cfg.data / (ranked[r].image_id + ".ddpt");
      const fs::path dst = cfg.out / "exemplars" / (std::to_string(r + 1) + "_" + ranked[r].image_id + ".ddpt");
      std::error_code ec;
      fs::copy_file(src, dst, fs::copy_options::overwrite_existing, ec);
      if (ec) throw Error(ErrorKind::IoError, "cannot copy " + src.string() + ": " + ec.message());
    }
  }
}

bool cmd_decompose_image(const RunConfig& cfg) {
  cfg.validate();
  const ModelSpec model = load_model(cfg.model);
  std::string layer_id;
  if (!cfg.layers.empty()) {
    layer_id = cfg.layers.front();
  } else {
    for (const auto& l : model.layers)
      if (l.kind == LayerKind::Conv) {
        layer_id = l.id;
        break;
      }
    if (layer_id.empty()) throw Error(ErrorKind::InvalidLayerKind, "model has no conv layer");
  }
  const Layer& layer = model.layer(layer_id);
  if (layer.kind != LayerKind::Conv)
    throw Error(ErrorKind::InvalidLayerKind, "layer '" + layer_id + "' is not a conv layer");
  if (cfg.image.empty()) throw Error(ErrorKind::InvalidParameter, "decompose-image needs --image");

  fs::path image_path = cfg.image;
  if (!fs::exists(image_path)) image_path = cfg.data / (cfg.image + ".ddpt");
  const DenseTensor x = read_ddpt(image_path);
  const DenseTensor latent = latent_input(model, x, layer_id);
  const LayerSvd ls = layer_svd(layer);
  const auto decomp = decompose_layer(layer, ls, latent);
  const fs::path dir = cfg.out / "heatmaps" / layer_id / image_path.stem();
  export_heatmaps(decomp, dir);

  auto stages = open_out(dir / "stages.csv");
  stages << "stage,rows,cols,frobenius\n";
  const std::pair<const char*, const DenseTensor*> all[] = {{"psi", &decomp.psi},       {"vt_psi", &decomp.vt_psi},
                                                            {"s_vt_psi", &decomp.s_vt_psi}, {"y_bar", &decomp.y_bar},
                                                            {"relu", &decomp.relu},     {"ut_relu", &decomp.ut_relu}};
  for (const auto& [name, t] : all) {
    if (t->size() == 0) continue;
    stages << name << ',' << t->extent(0) << ',' << t->extent(1) << ',' << format_double(t->vec().norm()) << '\n';
  }

  if (!cfg.check) return true;
  // Independent routes to Ȳ: the unfolded product W̄·Ψ and direct cross-correlation.
  const RowMatrix<double> product = unfolded_weights(layer).matrix() * decomp.psi.matrix();
  const double dev_product = (decomp.y_bar.matrix() - product).cwiseAbs().maxCoeff();
  const DenseTensor direct = cross_correlate(layer.weights, zero_pad(latent, layer.pad), layer.stride);
  const double dev_direct = max_abs_diff(flatten(decomp.y_bar), flatten(direct));
  RowMatrix<double> shifted = decomp.y_bar.matrix();
  for (Eigen::Index h = 0; h < shifted.rows(); ++h) shifted.row(h).array() += layer.bias[static_cast<std::size_t>(h)];
  const double relu_gap = decomp.relu.vec().norm() - shifted.norm();
  const double proj_gap = (decomp.ut_relu.size() ? decomp.ut_relu.vec().norm() : 0.0) - shifted.norm();

  auto check = open_out(dir / "check.csv");
  check << "check,value,tolerance,status\n";
  bool ok = true;
  auto emit = [&](const char* name, double value, double tol) {
    const bool pass = value <= tol;
    ok = ok && pass;
    check << name << ',' << format_double(value) << ',' << format_double(tol) << ',' << (pass ? "pass" : "fail")
          << '\n';
  };
  emit("y_bar_vs_unfolded_product", dev_product, kStageTolerance);
  emit("y_bar_vs_cross_correlate", dev_direct, kStageTolerance);
  emit("relu_frobenius_excess", relu_gap, 0.0);
  emit("projection_frobenius_excess", proj_gap, kStageTolerance);
  if (!ok) log().error("stage identity check failed for layer {} on {}", layer_id, image_path.string());
  return ok;
}

}  // namespace ddp
