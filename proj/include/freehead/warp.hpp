#pragma once

#include "freehead/ops.hpp"

#include <vector>

namespace freehead {

// Flow fields are (N, 2, H, W) backward displacements (dx, dy) in pixels of
// the grid they are defined on. Attention logits are (N, 1, H, W).

/// out[y, x] = bilinear(x_in, x + dx, y + dy); zero outside the grid.
template <typename T>
Var<T> backward_warp(const Var<T>& x, const Var<T>& flow);

/// Bilinear resize of a flow field with displacements rescaled to the new grid.
template <typename T>
Var<T> resize_flow(const Var<T>& flow, int height, int width);

/// Per-pixel softmax over the logits of M sources, (N, M, H, W).
template <typename T>
Var<T> attention_weights(const std::vector<Var<T>>& logits);

/// Softmax-weighted mean of M items; logits are resized to the item grid when
/// their resolution differs.
template <typename T>
Var<T> attention_blend(const std::vector<Var<T>>& items, const std::vector<Var<T>>& logits);

/// Flow visualisation: direction as hue, magnitude (relative to max_magnitude,
/// or to the field's own maximum when <= 0) as value. Returns (3, H, W) in [0, 1].
Tensor<float> flow_to_color(const Tensor<float>& flow, float max_magnitude = 0.0f);

}  // namespace freehead
