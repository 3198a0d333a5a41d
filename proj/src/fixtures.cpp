#include "ddp/fixtures.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ddp/ddpt_io.hpp"

namespace ddp::fixtures {
namespace fs = std::filesystem;
namespace {

DenseTensor uniform_tensor(Shape shape, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  DenseTensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Layer conv(std::string id, std::size_t d, std::size_t c, std::size_t k, std::size_t pad, std::mt19937_64& rng) {
  Layer l;
  l.id = std::move(id);
  l.kind = LayerKind::Conv;
  l.out = d;
  l.in = c;
  l.kernel = k;
  l.pad = pad;
  const double scale = std::sqrt(3.0 / static_cast<double>(c * k * k));
  l.weights = uniform_tensor(Shape{d, c, k, k}, scale, rng);
  l.bias = uniform_tensor(Shape{d}, 0.1, rng);
  return l;
}

Layer fc(std::string id, std::size_t out, std::size_t in, std::mt19937_64& rng) {
  Layer l;
  l.id = std::move(id);
  l.kind = LayerKind::Fc;
  l.out = out;
  l.in = in;
  l.weights = uniform_tensor(Shape{out, in}, std::sqrt(3.0 / static_cast<double>(in)), rng);
  l.bias = uniform_tensor(Shape{out}, 0.1, rng);
  return l;
}

Layer simple(std::string id, LayerKind kind, std::size_t k = 0, std::size_t stride = 1) {
  Layer l;
  l.id = std::move(id);
  l.kind = kind;
  l.kernel = k;
  l.stride = stride;
  return l;
}

// Segments a..g: top, upper right, lower right, bottom, lower left, upper left, middle.
constexpr std::array<const char*, 10> kDigitSegments = {"abcdef", "bc",     "abdeg", "abcdg", "bcfg",
                                                         "acdfg",  "acdefg", "abc",   "abcdefg", "abcdfg"};

DenseTensor render_digit(int digit, std::mt19937_64& rng) {
  constexpr int kSide = 28;
  std::uniform_int_distribution<int> jitter(-2, 2);
  std::uniform_real_distribution<double> ink(0.8, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  const int dx = jitter(rng), dy = jitter(rng);
  const int left = 9 + dx, right = 18 + dx, top = 5 + dy, mid = 13 + dy, bottom = 21 + dy;
  const double level = ink(rng);

  DenseTensor img(Shape{1, kSide, kSide});
  auto paint = [&](int x0, int y0, int x1, int y1) {
    for (int y = y0; y <= y1 + 1; ++y)
      for (int x = x0; x <= x1 + 1; ++x)
        if (x >= 0 && x < kSide && y >= 0 && y < kSide) img(0, y, x) = level;
  };
  for (const char* s = kDigitSegments[static_cast<std::size_t>(digit)]; *s; ++s) {
    switch (*s) {
      case 'a': paint(left, top, right, top); break;
      case 'b': paint(right, top, right, mid); break;
      case 'c': paint(right, mid, right, bottom); break;
      case 'd': paint(left, bottom, right, bottom); break;
      case 'e': paint(left, mid, left, bottom); break;
      case 'f': paint(left, top, left, mid); break;
      case 'g': paint(left, mid, right, mid); break;
    }
  }
  for (auto& v : img.data()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return img;
}

}  // namespace

ModelSpec mnist_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelSpec m;
  m.name = "mnist-fixture";
  m.input_shape = Shape{1, 28, 28};
  m.layers.push_back(conv("conv1", 32, 1, 3, 0, rng));
  m.layers.push_back(simple("relu1", LayerKind::Relu));
  m.layers.push_back(conv("conv2", 16, 32, 3, 0, rng));
  m.layers.push_back(simple("relu2", LayerKind::Relu));
  m.layers.push_back(simple("pool", LayerKind::MaxPool, 2, 2));
  m.layers.push_back(fc("fc1", 64, 16 * 12 * 12, rng));
  m.layers.push_back(simple("relu3", LayerKind::Relu));
  m.layers.push_back(fc("fc2", 10, 64, rng));
  m.layers.push_back(simple("softmax", LayerKind::Softmax));
  validate_model(m);
  return m;
}

std::vector<ProfileImage> synthetic_digits(std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<ProfileImage> images;
  for (int digit = 0; digit < 10; ++digit)
    for (std::size_t n = 0; n < per_class; ++n) {
      char id[32];
      std::snprintf(id, sizeof id, "d%d_%02zu", digit, n);
      images.push_back({id, std::to_string(digit), render_digit(digit, rng)});
    }
  return images;
}

void write_mnist_fixture(const fs::path& dir, std::size_t per_class, std::uint64_t seed) {
  save_model(mnist_model(seed), dir / "model" / "manifest.json");
  const fs::path data = dir / "data";
  fs::create_directories(data);
  std::ofstream labels(data / "labels.csv");
  if (!labels) throw Error(ErrorKind::IoError, "cannot write " + (data / "labels.csv").string());
  labels << "image_id,class_label\n";
  for (const auto& img : synthetic_digits(per_class, seed)) {
    write_ddpt(data / (img.image_id + ".ddpt"), img.tensor);
    labels << img.image_id << ',' << img.class_label << '\n';
  }
}

ModelSpec vgg16_conv_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelSpec m;
  m.name = "vgg16-conv";
  m.input_shape = Shape{3, 224, 224};
  constexpr int kPool = 0;
  const std::vector<int> plan = {64, 64, kPool, 128, 128, kPool, 256, 256, 256, kPool,
                                 512, 512, 512, kPool, 512, 512, 512, kPool};
  std::size_t channels = 3;
  int conv_index = 0, pool_index = 0;
  for (int width : plan) {
    if (width == kPool) {
      m.layers.push_back(simple("pool" + std::to_string(++pool_index), LayerKind::MaxPool, 2, 2));
      continue;
    }
    ++conv_index;
    m.layers.push_back(conv("conv" + std::to_string(conv_index), static_cast<std::size_t>(width), channels, 3, 1, rng));
    m.layers.push_back(simple("relu" + std::to_string(conv_index), LayerKind::Relu));
    channels = static_cast<std::size_t>(width);
  }
  validate_model(m);
  return m;
}

std::vector<double> pareto_samples(double alpha, double xmin, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(n);
  // Inverse CDF: F(x) = 1 − (x/xmin)^{1−alpha}.
  for (auto& x : out) x = xmin * std::pow(1.0 - u(rng), -1.0 / (alpha - 1.0));
  return out;
}

Eigen::MatrixXd random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    if (r(j, j) < 0) q.col(j) *= -1;
  return q;
}

ModelSpec planted_spectrum_model(const std::vector<PlantedLayer>& layers, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelSpec m;
  m.name = "planted-spectrum";
  if (layers.empty()) throw Error(ErrorKind::InvalidParameter, "no planted layers");
  m.input_shape = Shape{layers.front().size};
  std::size_t width = layers.front().size;
  for (std::size_t n = 0; n < layers.size(); ++n) {
    const auto& spec = layers[n];
    auto eig = pareto_samples(spec.alpha, 1.0, spec.size, rng);
    const double peak = *std::max_element(eig.begin(), eig.end());
    Eigen::VectorXd sv(static_cast<Eigen::Index>(spec.size));
    for (std::size_t i = 0; i < spec.size; ++i) sv(static_cast<Eigen::Index>(i)) = std::sqrt(eig[i] * spec.lambda_max / peak);
    const Eigen::MatrixXd w = random_orthogonal(spec.size, rng) * sv.asDiagonal() * random_orthogonal(width, rng).transpose();

    Layer l;
    l.id = "fc" + std::to_string(n + 1);
    l.kind = LayerKind::Fc;
    l.out = spec.size;
    l.in = width;
    l.weights = from_matrix(RowMatrix<double>(w));
    l.bias = DenseTensor(Shape{spec.size});
    m.layers.push_back(std::move(l));
    if (n + 1 < layers.size()) {
      m.layers.push_back(simple("relu" + std::to_string(n + 1), LayerKind::Relu));
      if (layers[n + 1].size != spec.size)
        throw Error(ErrorKind::InvalidParameter, "planted layers must share one size");
    }
    width = spec.size;
  }
  validate_model(m);
  return m;
}

}  // namespace ddp::fixtures
