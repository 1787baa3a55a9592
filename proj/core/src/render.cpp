#include "cytonet/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace cytonet {

ImageU8 render_attribution(const ImageU8& original, const Tensor<double>& attributions,
                           RenderMode mode, bool* was_all_zero) {
  if (attributions.ndim() != 3 || attributions.dim(0) != 3 ||
      attributions.dim(1) != original.height || attributions.dim(2) != original.width) {
    throw ShapeError("render_attribution: attribution shape " + shape_str(attributions.shape()) +
                     " not aligned to image " + std::to_string(original.width) + "x" +
                     std::to_string(original.height));
  }
  const int H = original.height, W = original.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  std::vector<double> magnitude(plane, 0.0);
  for (int c = 0; c < 3; ++c) {
    const double* p = attributions.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) magnitude[i] += std::abs(p[i]);
  }

  // nearest-rank 99th percentile, clipped; max as fallback for sparse maps
  std::vector<double> sorted = magnitude;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t rank =
      std::min(plane - 1, static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(plane))) - 1);
  double norm = sorted[rank];
  if (norm <= 0) norm = sorted.back();  // percentile zero: fall back to the max
  const bool all_zero = norm <= 0;
  if (was_all_zero) *was_all_zero = all_zero;

  ImageU8 out;
  out.width = W;
  out.height = H;
  out.pixels.resize(plane * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      const double h = all_zero ? 0.0 : std::min(1.0, magnitude[i] / norm);
      const double gray = (0.299 * original.at(y, x, 0) + 0.587 * original.at(y, x, 1) +
                           0.114 * original.at(y, x, 2)) / 255.0;
      double r, g, b;
      if (mode == RenderMode::overlay) {
        const double keep = 1.0 - 0.6 * h;
        r = gray * keep;
        g = gray * keep + 0.6 * h;
        b = gray * keep;
      } else {
        r = 0;
        g = h;
        b = 0;
      }
      out.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(std::min(1.0, r) * 255.0));
      out.at(y, x, 1) = static_cast<std::uint8_t>(std::lround(std::min(1.0, g) * 255.0));
      out.at(y, x, 2) = static_cast<std::uint8_t>(std::lround(std::min(1.0, b) * 255.0));
    }
  }
  return out;
}

std::string format_attribution_report(const AttributionMap& map, int predicted_class,
                                      const std::string& source_id) {
  std::ostringstream os;
  char buf[128];
  os << "source=" << source_id << "\n";
  os << "target_class=" << map.target_class << "\n";
  os << "predicted_class=" << predicted_class << "\n";
  os << "steps=" << map.steps << "\n";
  os << "baseline=" << map.baseline_desc << "\n";
  std::snprintf(buf, sizeof(buf), "logit_at_input=%.9g\n", map.output_at_input);
  os << buf;
  std::snprintf(buf, sizeof(buf), "logit_at_baseline=%.9g\n", map.output_at_baseline);
  os << buf;
  std::snprintf(buf, sizeof(buf), "attribution_sum=%.9g\n", map.attribution_sum());
  os << buf;
  std::snprintf(buf, sizeof(buf), "completeness_gap=%.9g\n", map.completeness_gap);
  os << buf;
  return os.str();
}

}  // namespace cytonet
