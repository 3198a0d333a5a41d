#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>

#include "ddp/commands.hpp"
#include "ddp/fixtures.hpp"
#include "ddp/log.hpp"

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch == '\n' ? ' ' : ch;
  }
  return out;
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << "error kind=" << kind << " message=\"" << escape(message) << "\"\n";
  return 1;
}

void add_common(CLI::App* cmd, ddp::RunConfig& cfg) {
  cmd->add_option("--model", cfg.model, "Model manifest (JSON)");
  cmd->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  cmd->add_option("--layers", cfg.layers, "Layer ids (default: every conv/fc layer)")->delimiter(',');
  cmd->add_option("--threads", cfg.threads, "Worker threads")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "Seed for all randomness")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer decomposition, spectral analysis and dataset profiling for CNNs"};
  app.require_subcommand(1);
  ddp::RunConfig cfg;

  auto* decompose = app.add_subcommand("decompose", "SVD of unfolded layer weights");
  add_common(decompose, cfg);
  decompose->add_option("--matrization", cfg.matrization, "w1 or w2 (w2 only affects --dump-matrix)");
  decompose->add_flag("--dump-matrix", cfg.dump_matrix, "Also write the unfolded matrices as DDPT");

  auto* spectrum = app.add_subcommand("spectrum", "Eigenvalue histograms and power-law fits");
  add_common(spectrum, cfg);
  spectrum->add_option("--matrization", cfg.matrization, "w1 or w2")->capture_default_str();
  spectrum->add_option("--bins", cfg.bins, "Histogram bins")->capture_default_str();
  spectrum->add_option("--toeplitz-budget", cfg.toeplitz_budget, "Max W2 elements to materialize")
      ->capture_default_str();

  auto* alpha = app.add_subcommand("alpha", "Capacity metric over layers");
  add_common(alpha, cfg);
  alpha->add_flag("--mean", cfg.mean, "Report the layer-averaged variant as primary");

  auto* profile = app.add_subcommand("profile", "Per-image signal vectors over a dataset");
  add_common(profile, cfg);
  profile->add_option("--data", cfg.data, "Dataset directory with labels.csv")->required();
  profile->add_option("--quantiles", cfg.quantiles, "Threshold quantiles")->delimiter(',')->capture_default_str();
  profile->add_option("--sample", cfg.sample, "Images pooled for thresholds (default: all)");

  auto* hypergraph = app.add_subcommand("hypergraph", "Class hypergraphs and semantic hierarchies");
  add_common(hypergraph, cfg);
  hypergraph->add_option("--profile", cfg.profile, "profile.csv (default: <out>/profile.csv)");
  hypergraph->add_option("--quantiles", cfg.quantiles, "Threshold quantiles")->delimiter(',')->capture_default_str();
  hypergraph->add_option("--percentiles", cfg.percentiles, "Class percentages p")->delimiter(',')
      ->capture_default_str();
  hypergraph->add_option("--sample", cfg.sample, "Images pooled for thresholds (default: all)");

  auto* exemplar = app.add_subcommand("exemplars", "Images maximizing weighted signals");
  add_common(exemplar, cfg);
  exemplar->add_option("--profile", cfg.profile, "profile.csv (default: <out>/profile.csv)");
  exemplar->add_option("--data", cfg.data, "Dataset directory to copy exemplar tensors from");
  exemplar->add_option("--weights", cfg.weights, "Singular vectors, e.g. 3,7 or 3:0.5,7:1")->required();
  exemplar->add_option("--topk", cfg.topk, "Number of exemplars")->capture_default_str();

  auto* image = app.add_subcommand("decompose-image", "Stage heatmaps for one image through one conv layer");
  add_common(image, cfg);
  image->add_option("--data", cfg.data, "Dataset directory (when --image is an id)");
  image->add_option("--image", cfg.image, "DDPT path or image id")->required();
  image->add_flag("--check", cfg.check, "Verify stage identities and write check.csv");

  std::string fixture_kind;
  std::size_t per_class = 10;
  auto* fixture = app.add_subcommand("fixture", "Write a synthetic model (and dataset)");
  fixture->add_option("kind", fixture_kind, "mnist | vgg16 | planted")
      ->required()
      ->check(CLI::IsMember({"mnist", "vgg16", "planted"}));
  fixture->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  fixture->add_option("--seed", cfg.seed, "Generator seed")->capture_default_str();
  fixture->add_option("--per-class", per_class, "mnist: images per digit")->capture_default_str();

  for (auto* cmd : {decompose, spectrum, alpha, profile, hypergraph, exemplar, image})
    cmd->callback([&cfg, cmd] {
      if (cfg.model.empty() && cmd->get_name() != "hypergraph" && cmd->get_name() != "exemplars")
        throw ddp::Error(ddp::ErrorKind::InvalidParameter, "--model is required");
    });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("InvalidParameter", e.what());
  } catch (const ddp::Error& e) {
    return fail(std::string(ddp::to_string(e.kind())), e.what());
  }

  try {
    if (*decompose) ddp::cmd_decompose(cfg);
    if (*spectrum) ddp::cmd_spectrum(cfg);
    if (*alpha) {
      const auto report = ddp::cmd_alpha(cfg);
      std::printf("alpha_hat=%.17g layers=%zu variant=%s\n", report.alpha_hat, report.per_layer.size(),
                  report.averaged ? "mean" : "sum");
    }
    if (*profile) ddp::cmd_profile(cfg);
    if (*hypergraph) ddp::cmd_hypergraph(cfg);
    if (*exemplar) ddp::cmd_exemplars(cfg);
    if (*image && !ddp::cmd_decompose_image(cfg))
      return fail("NumericalFailure", "stage identity check failed; see check.csv");
    if (*fixture) {
      if (fixture_kind == "mnist") {
        ddp::fixtures::write_mnist_fixture(cfg.out, per_class, cfg.seed);
      } else if (fixture_kind == "vgg16") {
        ddp::save_model(ddp::fixtures::vgg16_conv_model(cfg.seed), cfg.out / "manifest.json");
      } else {
        const std::vector<ddp::fixtures::PlantedLayer> planted = {{2.0, std::exp(1.0), 512},
                                                                   {3.0, std::exp(2.0), 512}};
        ddp::save_model(ddp::fixtures::planted_spectrum_model(planted, cfg.seed), cfg.out / "manifest.json");
      }
    }
  } catch (const ddp::Error& e) {
    return fail(std::string(ddp::to_string(e.kind())), e.what());
  } catch (const std::exception& e) {
    return fail("IoError", e.what());
  }
  return 0;
}
