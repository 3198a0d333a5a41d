#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ddp/csv.hpp"
#include "ddp/inference.hpp"

namespace ddp {
namespace fs = std::filesystem;
namespace {

constexpr int kCellPx = 8;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  return out;
}

/// Diverging blue-white-red colour for v in [-1, 1].
std::string diverging_colour(double v) {
  v = std::clamp(v, -1.0, 1.0);
  int r = 255, g = 255, b = 255;
  if (v > 0) {
    g = b = static_cast<int>(std::lround(255.0 * (1.0 - v)));
  } else if (v < 0) {
    r = g = static_cast<int>(std::lround(255.0 * (1.0 + v)));
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

void write_stage(const DenseTensor& stage, const std::string& name, std::size_t n1, std::size_t n2,
                 const fs::path& dir) {
  if (stage.size() == 0) return;
  const fs::path stage_dir = dir / name;
  std::error_code ec;
  fs::create_directories(stage_dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + stage_dir.string() + ": " + ec.message());
  const auto m = stage.matrix();
  const double scale = m.cwiseAbs().maxCoeff();
  for (Eigen::Index row = 0; row < m.rows(); ++row) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "row_%03ld", static_cast<long>(row));

    auto csv = open_out(stage_dir / (std::string(stem) + ".csv"));
    for (std::size_t i = 0; i < n1; ++i) {
      for (std::size_t j = 0; j < n2; ++j)
        csv << (j ? "," : "") << format_double(m(row, static_cast<Eigen::Index>(i * n2 + j)));
      csv << '\n';
    }

    auto svg = open_out(stage_dir / (std::string(stem) + ".svg"));
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << n2 * kCellPx << "\" height=\"" << n1 * kCellPx
        << "\" shape-rendering=\"crispEdges\">\n";
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t j = 0; j < n2; ++j) {
        const double v = m(row, static_cast<Eigen::Index>(i * n2 + j));
        svg << "<rect x=\"" << j * kCellPx << "\" y=\"" << i * kCellPx << "\" width=\"" << kCellPx
            << "\" height=\"" << kCellPx << "\" fill=\"" << diverging_colour(scale > 0 ? v / scale : 0.0)
            << "\"/>\n";
      }
    svg << "</svg>\n";
  }
}

}  // namespace

void export_heatmaps(const LayerDecomposition& decomp, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  write_stage(decomp.psi, "psi", decomp.n1, decomp.n2, dir);
  write_stage(decomp.vt_psi, "vt_psi", decomp.n1, decomp.n2, dir);
  write_stage(decomp.s_vt_psi, "s_vt_psi", decomp.n1, decomp.n2, dir);
  write_stage(decomp.y_bar, "y_bar", decomp.n1, decomp.n2, dir);
  write_stage(decomp.relu, "relu", decomp.n1, decomp.n2, dir);
  write_stage(decomp.ut_relu, "ut_relu", decomp.n1, decomp.n2, dir);
}

}  // namespace ddp
