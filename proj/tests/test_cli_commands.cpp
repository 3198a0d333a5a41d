#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ddp/commands.hpp"
#include "ddp/conv_algebra.hpp"
#include "ddp/csv.hpp"
#include "ddp/ddpt_io.hpp"
#include "ddp/fixtures.hpp"
#include "oracles.hpp"

using namespace ddp;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = DDP_FIXTURE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ddp_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in.good()) << p;
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) rows.push_back(split_csv_line(line));
  return rows;
}

RunConfig fixture_config(const fs::path& out) {
  RunConfig cfg;
  cfg.model = kFixture / "model" / "manifest.json";
  cfg.data = kFixture / "data";
  cfg.out = out;
  return cfg;
}

struct Shell {
  int status;
  std::string output;
};

Shell run_cli(const std::string& args) {
  const std::string cmd = std::string(DDP_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[512];
  while (pipe && fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pipe ? pclose(pipe) : -1;
  return {status, out};
}

}  // namespace

TEST(Decompose, MnistConv1Summary) {
  const auto out = scratch("decompose");
  auto cfg = fixture_config(out);
  cfg.dump_matrix = true;
  cmd_decompose(cfg);
  const auto rows = csv_rows(out / "svd_summary.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"layer_id", "d", "ck2", "n_svals", "s0", "s_min_nonzero"}));
  EXPECT_EQ(rows[1][0], "conv1");
  EXPECT_EQ(rows[1][1], "32");
  EXPECT_EQ(rows[1][2], "9");
  EXPECT_EQ(rows[1][3], "9");
  EXPECT_EQ(rows[3][0], "fc1");  // fully connected layers ride the same path
  EXPECT_EQ(rows[3][2], "2304");

  const auto u = read_ddpt(out / "conv1_U.ddpt");
  const auto s = read_ddpt(out / "conv1_S.ddpt");
  const auto v = read_ddpt(out / "conv1_V.ddpt");
  EXPECT_EQ(u.shape(), (Shape{32, 32}));
  EXPECT_EQ(s.shape(), (Shape{9}));
  EXPECT_EQ(v.shape(), (Shape{9, 9}));
  EXPECT_EQ(read_ddpt(out / "conv1_W1.ddpt").shape(), (Shape{32, 9}));
}

TEST(Decompose, UnknownLayerListsAvailableIds) {
  auto cfg = fixture_config(scratch("unknown"));
  cfg.layers = {"conv9"};
  try {
    cmd_decompose(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
    EXPECT_NE(std::string(e.what()).find("conv1, relu1, conv2"), std::string::npos) << e.what();
  }
}

TEST(Spectrum, Vgg16SingularValueCounts) {
  const auto model = fixtures::vgg16_conv_model();
  std::vector<std::string> convs;
  for (int i = 1; i <= 13; ++i) convs.push_back("conv" + std::to_string(i));
  const auto w1 = spectrum_rows(model, convs, "w1", kDefaultToeplitzBudget);
  const std::vector<std::size_t> expected = {64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};
  for (std::size_t i = 1; i < 13; ++i) EXPECT_EQ(w1[i].n_svals, expected[i - 1]) << convs[i];

  const auto w2 = spectrum_rows(model, convs, "w2", kDefaultToeplitzBudget);
  for (std::size_t i = 0; i < 13; ++i) {
    const Layer& l = model.layer(convs[i]);
    const std::size_t n = (*l.output_shape)[1];
    EXPECT_EQ(w2[i].rows, l.out * n * n);
    EXPECT_FALSE(w2[i].computed);
  }
}

TEST(Spectrum, SingleFilterLayerReportsCountWithoutFit) {
  ModelSpec m;
  m.input_shape = Shape{2, 5, 5};
  Layer l;
  l.id = "tiny";
  l.kind = LayerKind::Conv;
  l.out = 1;
  l.in = 2;
  l.kernel = 3;
  std::mt19937_64 rng(1);
  l.weights = oracle::random_tensor(Shape{1, 2, 3, 3}, rng);
  l.bias = DenseTensor(Shape{1});
  m.layers.push_back(l);
  validate_model(m);

  const auto out = scratch("tiny");
  RunConfig cfg;
  cfg.out = out;
  cmd_spectrum(cfg, m);
  const auto rows = csv_rows(out / "spectrum_w1.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][1], "1");
  EXPECT_EQ(rows[1][2], "nan");

  cfg.matrization = "w2";
  cmd_spectrum(cfg, m);
  const auto check = csv_rows(out / "w2_block_check.csv");
  ASSERT_EQ(check.size(), 2u);
  EXPECT_EQ(check[1][1], "9");
  EXPECT_EQ(check[1][3], "pass");
  const auto counts = csv_rows(out / "counts_w2.csv");
  EXPECT_EQ(counts[1][1], "9");   // d·n² rows
  EXPECT_EQ(counts[1][2], "50");  // c·m² columns
}

TEST(Spectrum, MnistBlockCheckPassesAndEsdIsWritten) {
  const auto out = scratch("w2");
  auto cfg = fixture_config(out);
  cfg.matrization = "w2";
  cfg.layers = {"conv1", "fc2"};
  cmd_spectrum(cfg);
  for (const auto& row : csv_rows(out / "w2_block_check.csv"))
    if (row[0] != "layer_id") EXPECT_EQ(row[3], "pass") << row[0];
  EXPECT_TRUE(fs::exists(out / "esd" / "conv1_w2.csv"));
  const auto counts = csv_rows(out / "counts_w2.csv");
  EXPECT_EQ(counts[1][1], std::to_string(32 * 26 * 26));
}

TEST(Alpha, PlantedSpectraApproximateClosedForm) {
  const auto model = fixtures::planted_spectrum_model({{2.0, std::exp(1.0), 512}, {3.0, std::exp(2.0), 512}}, 0);
  RunConfig cfg;
  cfg.out = scratch("alpha");
  const auto report = cmd_alpha(cfg, model);
  ASSERT_EQ(report.per_layer.size(), 2u);
  EXPECT_NEAR(report.per_layer[0].lambda_max, std::exp(1.0), 1e-9);
  EXPECT_NEAR(report.per_layer[1].lambda_max, std::exp(2.0), 1e-9);
  EXPECT_NEAR(report.alpha_hat, 8.0, 0.6);
  const auto summary = csv_rows(cfg.out / "capacity_summary.csv");
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_NEAR(parse_double(summary[1][3]), parse_double(summary[1][2]) / 2.0, 1e-12);

  cfg.mean = true;
  EXPECT_NEAR(cmd_alpha(cfg, model).alpha_hat, report.alpha_hat / 2.0, 1e-12);
}

TEST(Alpha, UnitLambdaGivesZero) {
  const auto model = fixtures::planted_spectrum_model({{2.5, 1.0, 256}}, 3);
  RunConfig cfg;
  cfg.out = scratch("alpha_unit");
  EXPECT_NEAR(cmd_alpha(cfg, model).alpha_hat, 0.0, 1e-12);
}

TEST(Alpha, NoEligibleLayerGivesEmptyReport) {
  RunConfig cfg = fixture_config(scratch("alpha_empty"));
  cfg.layers = {"conv1", "fc2"};
  const auto report = cmd_alpha(cfg);
  EXPECT_TRUE(report.per_layer.empty());
  EXPECT_EQ(report.alpha_hat, 0.0);
  EXPECT_EQ(csv_rows(cfg.out / "capacity.csv").size(), 1u);
}

TEST(Profile, RowCountsDeterminismAndSkips) {
  const auto data = scratch("profile_data");
  const auto images = fixtures::synthetic_digits(1, 9);
  {
    std::ofstream labels(data / "labels.csv");
    labels << "image_id,class_label\n";
    for (const auto& img : images) {
      write_ddpt(data / (img.image_id + ".ddpt"), img.tensor);
      labels << img.image_id << ',' << img.class_label << '\n';
    }
    labels << "broken,3\n";
    std::ofstream(data / "broken.ddpt") << "not a tensor";
  }
  auto cfg = fixture_config(scratch("profile_1"));
  cfg.data = data;
  cmd_profile(cfg);
  auto cfg8 = cfg;
  cfg8.out = scratch("profile_8");
  cfg8.threads = 8;
  cmd_profile(cfg8);
  EXPECT_EQ(slurp(cfg.out / "profile.csv"), slurp(cfg8.out / "profile.csv"));
  EXPECT_NE(slurp(cfg.out / "run.log").find("skipped broken"), std::string::npos);

  const auto layers = csv_rows(cfg.out / "profile_layers.csv");
  std::size_t per_image = 0;
  for (std::size_t i = 1; i < layers.size(); ++i) per_image += parse_index(layers[i][1]);
  EXPECT_EQ(csv_rows(cfg.out / "profile.csv").size(), 1 + images.size() * per_image);
  EXPECT_EQ(csv_rows(cfg.out / "quantiles.csv").size(), 1 + 4 * 2u);

  // Idempotent over identical inputs.
  cmd_profile(cfg8);
  EXPECT_EQ(slurp(cfg.out / "profile.csv"), slurp(cfg8.out / "profile.csv"));
}

TEST(Hypergraph, JsonMatchesBruteForce) {
  std::mt19937_64 rng(5);
  const auto profile = oracle::synthetic_profile(rng, 4, 6, 10, "L");
  const auto out = scratch("hypergraph");
  {
    std::ofstream csv(out / "profile.csv");
    write_profile_csv(csv, profile);
    std::ofstream meta(out / "profile_layers.csv");
    write_profile_layers_csv(meta, profile);
  }
  RunConfig cfg;
  cfg.out = out;
  cfg.quantiles = {0.85};
  cmd_hypergraph(cfg);
  EXPECT_EQ(cfg.percentiles, (std::vector<double>{75.0}));
  const auto q = quantile_threshold(pooled_signals(profile, "L"), 0.85);
  const auto doc = nlohmann::json::parse(slurp(out / "hypergraph_L_q85_p75.json"));
  EXPECT_EQ(doc.at("q").get<double>(), q);
  std::map<std::string, std::vector<std::size_t>> got;
  for (const auto& [label, nodes] : doc.at("hyperedges").items()) got[label] = nodes.get<std::vector<std::size_t>>();
  EXPECT_EQ(got, oracle::hyperedges(profile, "L", q, 75));
  EXPECT_TRUE(fs::exists(out / "hierarchy_L_q85_p75.dot"));
}

TEST(Hypergraph, ThresholdAboveAllSignalsIsMarkedEmpty) {
  SignalProfile p;
  p.layer_order = {"L"};
  p.image_ids = {"a", "b"};
  p.class_labels = {"x", "y"};
  p.layers["L"] = {2, 1, {{0.5, 0.5}, {0.5, 0.5}}};
  const auto out = scratch("hypergraph_empty");
  {
    std::ofstream csv(out / "profile.csv");
    write_profile_csv(csv, p);
  }
  RunConfig cfg;
  cfg.out = out;
  cfg.quantiles = {0.9};
  cmd_hypergraph(cfg);
  // Every signal equals q, and significance is strict.
  const auto doc = nlohmann::json::parse(slurp(out / "hypergraph_L_q90_p75.json"));
  EXPECT_TRUE(doc.at("empty").get<bool>());
}

TEST(Hypergraph, RejectsMajorityAtOrBelowHalf) {
  RunConfig cfg;
  cfg.percentiles = {50};
  try {
    cmd_hypergraph(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidParameter);
  }
}

TEST(Exemplars, RanksAndCopiesTensors) {
  SignalProfile p;
  p.layer_order = {"L"};
  p.image_ids = {"img1", "img2", "img3"};
  p.class_labels = {"a", "a", "b"};
  p.layers["L"] = {1, 1, {{1}, {5}, {3}}};
  const auto out = scratch("exemplars");
  const auto data = scratch("exemplar_data");
  for (const auto& id : p.image_ids) write_ddpt(data / (id + ".ddpt"), DenseTensor(Shape{1}, {1}));
  {
    std::ofstream csv(out / "profile.csv");
    write_profile_csv(csv, p);
  }
  RunConfig cfg;
  cfg.out = out;
  cfg.data = data;
  cfg.layers = {"L"};
  cfg.weights = "0";
  cfg.topk = 2;
  cmd_exemplars(cfg);
  const auto rows = csv_rows(out / "exemplars.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][1], "img2");
  EXPECT_EQ(rows[2][1], "img3");
  EXPECT_TRUE(fs::exists(out / "exemplars" / "1_img2.ddpt"));

  cfg.weights = "3:1";
  EXPECT_THROW(cmd_exemplars(cfg), Error);
}

TEST(Exemplars, WeightSpecParsing) {
  EXPECT_EQ(parse_vector_weights("3,7"), (std::map<std::size_t, double>{{3, 1.0}, {7, 1.0}}));
  EXPECT_EQ(parse_vector_weights("3:0.5,7:2"), (std::map<std::size_t, double>{{3, 0.5}, {7, 2.0}}));
  EXPECT_THROW(parse_vector_weights("x:1"), Error);
}

TEST(DecomposeImage, MnistConv1GridsAndCheck) {
  auto cfg = fixture_config(scratch("decompose_image"));
  cfg.image = "d3_00";
  cfg.check = true;
  EXPECT_TRUE(cmd_decompose_image(cfg));
  const fs::path dir = cfg.out / "heatmaps" / "conv1" / "d3_00";
  for (const auto& row : csv_rows(dir / "check.csv"))
    if (row[0] != "check") EXPECT_EQ(row[3], "pass") << row[0];
  std::size_t grids = 0;
  for (const auto& e : fs::directory_iterator(dir / "vt_psi")) grids += e.path().extension() == ".csv";
  EXPECT_EQ(grids, 9u);
  const auto grid = csv_rows(dir / "vt_psi" / "row_008.csv");
  ASSERT_EQ(grid.size(), 26u);
  EXPECT_EQ(grid[0].size(), 26u);
}

TEST(DecomposeImage, ZeroImageAndLayerKindGuard) {
  const auto out = scratch("decompose_zero");
  write_ddpt(out / "zero.ddpt", DenseTensor(Shape{1, 28, 28}));
  auto cfg = fixture_config(out);
  cfg.image = (out / "zero.ddpt").string();
  cfg.layers = {"conv1"};
  EXPECT_TRUE(cmd_decompose_image(cfg));
  for (const char* stage : {"psi", "vt_psi", "s_vt_psi", "y_bar"})
    for (const auto& row : csv_rows(out / "heatmaps" / "conv1" / "zero" / stage / "row_000.csv"))
      for (const auto& v : row) EXPECT_EQ(std::abs(parse_double(v)), 0.0);

  cfg.layers = {"fc1"};
  try {
    cmd_decompose_image(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidLayerKind);
  }
}

TEST(Config, RejectsOutOfRangeSettings) {
  RunConfig cfg;
  cfg.quantiles = {1.0};
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.matrization = "w3";
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.seed, 0u);
}

TEST(Binary, SuccessAndMachineReadableErrors) {
  const auto out = scratch("binary");
  const auto ok = run_cli("decompose --model " + (kFixture / "model" / "manifest.json").string() + " --layers conv1 --out " +
                          out.string());
  EXPECT_EQ(ok.status, 0) << ok.output;
  EXPECT_TRUE(fs::exists(out / "svd_summary.csv"));

  const auto bad = run_cli("decompose --model " + (kFixture / "model" / "manifest.json").string() +
                           " --layers nope --out " + out.string());
  EXPECT_NE(bad.status, 0);
  EXPECT_NE(bad.output.find("error kind=InvalidInput message=\""), std::string::npos) << bad.output;

  const auto kind = run_cli("decompose-image --model " + (kFixture / "model" / "manifest.json").string() +
                            " --layers relu1 --image d0_00 --data " + (kFixture / "data").string() + " --out " +
                            out.string());
  EXPECT_NE(kind.status, 0);
  EXPECT_NE(kind.output.find("error kind=InvalidLayerKind"), std::string::npos) << kind.output;

  const auto p = run_cli("hypergraph --percentiles 40 --out " + out.string());
  EXPECT_NE(p.status, 0);
  EXPECT_NE(p.output.find("error kind=InvalidParameter"), std::string::npos) << p.output;
}
