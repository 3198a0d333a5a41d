#include "ddp/profiler.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include "ddp/csv.hpp"
#include "ddp/parallel.hpp"

namespace ddp {
namespace fs = std::filesystem;

std::vector<double> signal_vector(const LayerSvd& svd, const ReceptiveFieldMatrix<double>& psi) {
  if (psi.matrix.extent(0) != svd.cols())
    throw Error(ErrorKind::ShapeMismatch, "receptive fields of length " + std::to_string(psi.matrix.extent(0)) +
                                              " do not match singular vectors of length " +
                                              std::to_string(svd.cols()));
  // Column-major copy so each receptive field is contiguous.
  const Eigen::MatrixXd fields = psi.matrix.matrix();
  const Eigen::Index len = fields.rows(), positions = fields.cols();
  std::vector<double> sigma(svd.rank);
  for (std::size_t i = 0; i < svd.rank; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double* vi = svd.v.col(ii).data();
    double total = 0;
    for (Eigen::Index col = 0; col < positions; ++col) {
      const double* field = fields.col(col).data();
      double dot = 0;
      for (Eigen::Index r = 0; r < len; ++r) dot += field[r] * vi[r];
      total += svd.s(ii) * dot;
    }
    sigma[i] = total / static_cast<double>(positions);
  }
  return sigma;
}

std::vector<double> signal_vector(const Layer& layer, const LayerSvd& svd, const DenseTensor& x_latent) {
  return signal_vector(svd, layer_receptive_fields(layer, x_latent));
}

const LayerSignals& SignalProfile::layer(const std::string& layer_id) const {
  const auto it = layers.find(layer_id);
  if (it == layers.end()) throw Error(ErrorKind::InvalidInput, "profile has no layer '" + layer_id + "'");
  return it->second;
}

std::vector<std::string> SignalProfile::classes() const {
  std::set<std::string> unique(class_labels.begin(), class_labels.end());
  return {unique.begin(), unique.end()};
}

SignalProfile profile_dataset(const ModelSpec& model, const std::vector<std::string>& layer_ids,
                              const std::vector<ProfileImage>& images, std::size_t threads) {
  std::vector<const Layer*> layers;
  std::vector<LayerSvd> svds;
  for (const auto& id : layer_ids) {
    const Layer& l = model.layer(id);
    if (!l.is_linear()) throw Error(ErrorKind::InvalidLayerKind, "layer '" + id + "' is not linear");
    layers.push_back(&l);
  }
  svds.resize(layers.size());
  parallel_for(layers.size(), threads, [&](std::size_t i) { svds[i] = layer_svd(*layers[i]); });

  SignalProfile profile;
  profile.layer_order = layer_ids;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& ls = profile.layers[layer_ids[i]];
    ls.rank = svds[i].rank;
    ls.positions = layer_geometry(*layers[i]).positions();
    ls.sigma.resize(images.size());
  }
  for (const auto& img : images) {
    profile.image_ids.push_back(img.image_id);
    profile.class_labels.push_back(img.class_label);
  }

  std::vector<LayerSignals*> slots;
  for (const auto& id : layer_ids) slots.push_back(&profile.layers.at(id));
  parallel_for(images.size(), threads, [&](std::size_t n) {
    const auto trace = forward(model, images[n].tensor, images[n].image_id);
    for (std::size_t i = 0; i < layers.size(); ++i)
      slots[i]->sigma[n] = signal_vector(*layers[i], svds[i], trace.at(layer_ids[i]).input);
  });
  return profile;
}

double quantile_threshold(std::span<const double> samples, double quantile) {
  if (samples.empty()) throw Error(ErrorKind::InvalidInput, "no samples for quantile");
  if (!(quantile > 0 && quantile < 1)) throw Error(ErrorKind::InvalidParameter, "quantile must lie in (0,1)");
  std::vector<double> sorted(samples.begin(), samples.end());
  const auto idx = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(sorted.size() - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(idx), sorted.end());
  return sorted[idx];
}

std::vector<double> pooled_signals(const SignalProfile& profile, const std::string& layer_id,
                                   std::optional<std::size_t> sample_size, std::uint64_t seed) {
  const auto& ls = profile.layer(layer_id);
  std::vector<std::size_t> order(ls.sigma.size());
  std::iota(order.begin(), order.end(), 0);
  if (sample_size && *sample_size < order.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(*sample_size);
    std::sort(order.begin(), order.end());
  }
  std::vector<double> pooled;
  for (std::size_t n : order) pooled.insert(pooled.end(), ls.sigma[n].begin(), ls.sigma[n].end());
  return pooled;
}

std::vector<std::size_t> significant_for_image(std::span<const double> sigma, double q) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sigma.size(); ++i)
    if (sigma[i] > q) out.push_back(i);
  return out;
}

ClassHypergraph build_hypergraph(const SignalProfile& profile, const std::string& layer_id, double q, double p) {
  if (!(p > 50 && p <= 100)) throw Error(ErrorKind::InvalidParameter, "percentile p must lie in (50,100]");
  if (!(q > 0) || !std::isfinite(q))
    throw Error(ErrorKind::InvalidParameter, "threshold q must be positive (only positive signals are significant)");
  const auto& ls = profile.layer(layer_id);

  std::map<std::string, std::vector<std::size_t>> hits;   // class → per-node count
  std::map<std::string, std::size_t> class_size;
  for (std::size_t n = 0; n < profile.image_ids.size(); ++n) {
    const auto& label = profile.class_labels[n];
    auto& counts = hits[label];
    counts.resize(ls.rank, 0);
    ++class_size[label];
    for (std::size_t i : significant_for_image(ls.sigma[n], q)) ++counts[i];
  }

  ClassHypergraph h;
  h.layer_id = layer_id;
  h.q = q;
  h.p = p;
  std::set<std::size_t> nodes;
  for (const auto& [label, counts] : hits) {
    // count ≥ ⌈p·|C|/100⌉  ⇔  100·count ≥ p·|C| for integer counts
    const double needed = p * static_cast<double>(class_size[label]);
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < counts.size(); ++i)
      if (100.0 * static_cast<double>(counts[i]) >= needed) members.push_back(i);
    if (members.empty()) continue;
    nodes.insert(members.begin(), members.end());
    h.hyperedges.emplace(label, std::move(members));
  }
  h.nodes.assign(nodes.begin(), nodes.end());
  return h;
}

std::vector<ClassHypergraph> hypergraph_family(const SignalProfile& profile, const std::string& layer_id,
                                               std::span<const double> q_list, std::span<const double> p_list) {
  if (q_list.empty() || p_list.empty()) throw Error(ErrorKind::InvalidParameter, "empty (q, p) parameter list");
  std::vector<ClassHypergraph> family;
  for (double q : q_list)
    for (double p : p_list) family.push_back(build_hypergraph(profile, layer_id, q, p));
  return family;
}

SemanticHierarchy semantic_hierarchy(const ClassHypergraph& h) {
  std::map<std::size_t, std::vector<std::string>> membership;
  for (const auto& [label, members] : h.hyperedges)
    for (std::size_t v : members) membership[v].push_back(label);  // labels arrive sorted

  std::map<std::vector<std::string>, std::vector<std::size_t>> grouped;
  for (const auto& [v, labels] : membership) grouped[labels].push_back(v);

  SemanticHierarchy out;
  for (auto& [labels, members] : grouped) out.classes.push_back({members, labels});
  std::sort(out.classes.begin(), out.classes.end(),
            [](const auto& a, const auto& b) { return a.representative() < b.representative(); });

  const auto strict_superset = [&](std::size_t a, std::size_t b) {
    const auto& A = out.classes[a].classes;
    const auto& B = out.classes[b].classes;
    return A.size() > B.size() && std::includes(A.begin(), A.end(), B.begin(), B.end());
  };
  const std::size_t k = out.classes.size();
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      if (!strict_superset(a, b)) continue;
      bool covered = true;
      for (std::size_t c = 0; c < k && covered; ++c)
        if (strict_superset(a, c) && strict_superset(c, b)) covered = false;
      if (covered) out.hasse_edges.emplace_back(a, b);
    }
  return out;
}

std::vector<ScoredImage> exemplars(const SignalProfile& profile, const std::string& layer_id,
                                   const std::map<std::size_t, double>& weights, std::size_t k) {
  if (k < 1) throw Error(ErrorKind::InvalidParameter, "k must be at least 1");
  if (weights.empty()) throw Error(ErrorKind::InvalidParameter, "no singular vectors selected");
  const auto& ls = profile.layer(layer_id);
  for (const auto& [i, w] : weights)
    if (i >= ls.rank)
      throw Error(ErrorKind::InvalidInput, "vector index " + std::to_string(i) + " outside layer '" + layer_id +
                                               "' with rank " + std::to_string(ls.rank));
  std::vector<ScoredImage> scored;
  for (std::size_t n = 0; n < profile.image_ids.size(); ++n) {
    double score = 0;
    for (const auto& [i, w] : weights) score += w * ls.sigma[n][i] * static_cast<double>(ls.positions);
    scored.push_back({profile.image_ids[n], score});
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.image_id < b.image_id;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

void write_profile_csv(std::ostream& os, const SignalProfile& profile) {
  os << "image_id,class_label,layer_id,vector_index,signal\n";
  for (std::size_t n = 0; n < profile.image_ids.size(); ++n)
    for (const auto& layer_id : profile.layer_order) {
      const auto& sigma = profile.layer(layer_id).sigma[n];
      for (std::size_t i = 0; i < sigma.size(); ++i)
        os << profile.image_ids[n] << ',' << profile.class_labels[n] << ',' << layer_id << ',' << i << ','
           << format_double(sigma[i]) << '\n';
    }
}

void write_profile_layers_csv(std::ostream& os, const SignalProfile& profile) {
  os << "layer_id,rank,positions\n";
  for (const auto& layer_id : profile.layer_order) {
    const auto& ls = profile.layer(layer_id);
    os << layer_id << ',' << ls.rank << ',' << ls.positions << '\n';
  }
}

SignalProfile read_profile(const fs::path& profile_csv, const fs::path& layers_csv) {
  std::ifstream in(profile_csv);
  if (!in) throw Error(ErrorKind::IoError, "cannot open profile " + profile_csv.string());
  std::string line;
  if (!std::getline(in, line) ||
      split_csv_line(line) !=
          std::vector<std::string>{"image_id", "class_label", "layer_id", "vector_index", "signal"})
    throw Error(ErrorKind::InvalidInput, profile_csv.string() + ": unexpected header");

  SignalProfile p;
  std::map<std::string, std::size_t> image_index;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw Error(ErrorKind::InvalidInput, profile_csv.string() + ": malformed row '" + line + "'");
    auto [it, inserted] = image_index.emplace(f[0], p.image_ids.size());
    if (inserted) {
      p.image_ids.push_back(f[0]);
      p.class_labels.push_back(f[1]);
    }
    if (std::find(p.layer_order.begin(), p.layer_order.end(), f[2]) == p.layer_order.end())
      p.layer_order.push_back(f[2]);
    auto& ls = p.layers[f[2]];
    if (ls.sigma.size() <= it->second) ls.sigma.resize(it->second + 1);
    auto& sigma = ls.sigma[it->second];
    const std::size_t idx = parse_index(f[3]);
    if (idx != sigma.size())
      throw Error(ErrorKind::InvalidInput, profile_csv.string() + ": vector indices out of order at '" + line + "'");
    sigma.push_back(parse_double(f[4]));
  }
  for (auto& [layer_id, ls] : p.layers) {
    ls.sigma.resize(p.image_ids.size());
    ls.rank = ls.sigma.empty() ? 0 : ls.sigma.front().size();
    for (const auto& s : ls.sigma)
      if (s.size() != ls.rank)
        throw Error(ErrorKind::InvalidInput, "profile layer '" + layer_id + "' has ragged signal vectors");
  }

  if (!layers_csv.empty()) {
    std::ifstream lin(layers_csv);
    if (!lin) throw Error(ErrorKind::IoError, "cannot open " + layers_csv.string());
    std::getline(lin, line);
    while (std::getline(lin, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() != 3) throw Error(ErrorKind::InvalidInput, layers_csv.string() + ": malformed row");
      auto& ls = p.layers[f[0]];
      if (std::find(p.layer_order.begin(), p.layer_order.end(), f[0]) == p.layer_order.end()) {
        p.layer_order.push_back(f[0]);
        ls.sigma.assign(p.image_ids.size(), {});
      }
      ls.rank = parse_index(f[1]);
      ls.positions = parse_index(f[2]);
    }
  }
  return p;
}

std::string hypergraph_json(const ClassHypergraph& h) {
  nlohmann::ordered_json doc;
  doc["layer"] = h.layer_id;
  doc["q"] = h.q;
  doc["p"] = h.p;
  doc["empty"] = h.empty();
  doc["hyperedges"] = nlohmann::ordered_json::object();
  for (const auto& [label, members] : h.hyperedges) doc["hyperedges"][label] = members;
  return doc.dump(2);
}

void write_hierarchy_dot(std::ostream& os, const SemanticHierarchy& hierarchy, const std::string& graph_name) {
  os << "digraph \"" << graph_name << "\" {\n";
  for (std::size_t c = 0; c < hierarchy.classes.size(); ++c) {
    const auto& ec = hierarchy.classes[c];
    std::string labels;
    for (const auto& l : ec.classes) labels += (labels.empty() ? "" : ",") + l;
    os << "  c" << c << " [label=\"rep=" << ec.representative() << ", size=" << ec.members.size() << ", classes={"
       << labels << "}\"];\n";
  }
  for (const auto& [general, specific] : hierarchy.hasse_edges)
    os << "  c" << general << " -> c" << specific << ";\n";
  os << "}\n";
}

}  // namespace ddp
