#pragma once

#include "cytonet/explain.hpp"
#include "cytonet/image.hpp"

namespace cytonet {

enum class RenderMode { overlay, raw };

/// Heatmap rendering of an attribution map. Per-pixel magnitude is the sum of
/// absolute channel attributions, normalized to [0,1] by the 99th percentile
/// (clipped; falls back to the maximum when the percentile is zero). Overlay
/// mode alpha-blends (0.6) a green-intensity layer over the grayscale image;
/// raw mode renders the heatmap alone. All-zero attributions render the plain
/// grayscale image (a warning flag is reported through `was_all_zero`).
ImageU8 render_attribution(const ImageU8& original, const Tensor<double>& attributions,
                           RenderMode mode, bool* was_all_zero = nullptr);

}  // namespace cytonet
