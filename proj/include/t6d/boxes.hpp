#pragma once

// Normalized (cx, cy, w, h) boxes and the box regression loss terms.

#include <algorithm>
#include <array>
#include <cmath>

#include "t6d/errors.hpp"

namespace t6d {

/// Axis-aligned box, center/size normalized to the image.
struct BBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 1.0;
  double h = 1.0;

  std::array<double, 4> to_array() const { return {cx, cy, w, h}; }
  double operator[](int i) const { return to_array()[i]; }
  bool operator==(const BBox&) const = default;

  bool is_valid_ground_truth() const {
    return cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0;
  }
};

inline constexpr double kMinBoxExtent = 1e-6;

struct BoxLossGrad {
  double value = 0.0;
  std::array<double, 4> d_pred{};  // d value / d (cx, cy, w, h) of the prediction
};

namespace detail {

inline void check_box(const BBox& b) {
  if (!std::isfinite(b.cx) || !std::isfinite(b.cy) || !(b.w > 0.0) || !(b.h > 0.0) || !std::isfinite(b.w) ||
      !std::isfinite(b.h))
    throw DegenerateBox("box has non-positive or non-finite extent");
}

}  // namespace detail

/// 1 - GIoU together with its gradient with respect to the second (predicted) box.
inline BoxLossGrad giou_loss_with_grad(const BBox& gt, const BBox& pred) {
  detail::check_box(gt);
  detail::check_box(pred);
  const double gw = std::max(gt.w, kMinBoxExtent), gh = std::max(gt.h, kMinBoxExtent);
  const double pw = std::max(pred.w, kMinBoxExtent), ph = std::max(pred.h, kMinBoxExtent);
  const bool pw_clamped = pred.w < kMinBoxExtent, ph_clamped = pred.h < kMinBoxExtent;

  const double ax1 = gt.cx - gw / 2, ax2 = gt.cx + gw / 2, ay1 = gt.cy - gh / 2, ay2 = gt.cy + gh / 2;
  const double bx1 = pred.cx - pw / 2, bx2 = pred.cx + pw / 2, by1 = pred.cy - ph / 2, by2 = pred.cy + ph / 2;

  const double area_a = gw * gh, area_b = pw * ph;
  const double ix_r = std::min(ax2, bx2), ix_l = std::max(ax1, bx1);
  const double iy_r = std::min(ay2, by2), iy_l = std::max(ay1, by1);
  const double iw = std::max(0.0, ix_r - ix_l), ih = std::max(0.0, iy_r - iy_l);
  const double inter = iw * ih;
  const double uni = area_a + area_b - inter;
  const double iou = inter / uni;
  const double ew = std::max(ax2, bx2) - std::min(ax1, bx1);
  const double eh = std::max(ay2, by2) - std::min(ay1, by1);
  const double enc = ew * eh;

  BoxLossGrad out;
  out.value = 2.0 - iou - uni / enc;

  // Reverse pass, adjoints accumulate into the predicted corners.
  double g_iou = -1.0;
  double g_uni = -1.0 / enc + g_iou * (-inter / (uni * uni));
  double g_enc = uni / (enc * enc);
  double g_inter = g_iou / uni - g_uni;
  double g_area_b = g_uni;

  double g_bx1 = 0, g_bx2 = 0, g_by1 = 0, g_by2 = 0;
  // area_b = pw * ph
  double g_pw = g_area_b * ph, g_ph = g_area_b * pw;
  // inter = iw * ih
  const double g_iw = g_inter * ih, g_ih = g_inter * iw;
  if (ix_r - ix_l > 0.0) {
    if (bx2 < ax2) g_bx2 += g_iw;
    if (bx1 > ax1) g_bx1 -= g_iw;
  }
  if (iy_r - iy_l > 0.0) {
    if (by2 < ay2) g_by2 += g_ih;
    if (by1 > ay1) g_by1 -= g_ih;
  }
  // enc = ew * eh
  const double g_ew = g_enc * eh, g_eh = g_enc * ew;
  if (bx2 > ax2) g_bx2 += g_ew;
  if (bx1 < ax1) g_bx1 -= g_ew;
  if (by2 > ay2) g_by2 += g_eh;
  if (by1 < ay1) g_by1 -= g_eh;

  out.d_pred[0] = g_bx1 + g_bx2;
  out.d_pred[1] = g_by1 + g_by2;
  g_pw += 0.5 * (g_bx2 - g_bx1);
  g_ph += 0.5 * (g_by2 - g_by1);
  out.d_pred[2] = pw_clamped ? 0.0 : g_pw;
  out.d_pred[3] = ph_clamped ? 0.0 : g_ph;
  return out;
}

/// 1 - generalized IoU; lies in [0, 2].
inline double giou_loss(const BBox& gt, const BBox& pred) { return giou_loss_with_grad(gt, pred).value; }

/// Plain intersection over union.
inline double iou(const BBox& a, const BBox& b) {
  detail::check_box(a);
  detail::check_box(b);
  const double iw = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2));
  const double ih = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2));
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

/// giou_weight * (1 - GIoU) + l1_weight * |b - b_hat|_1, with gradient wrt the prediction.
inline BoxLossGrad box_loss_with_grad(const BBox& gt, const BBox& pred, double giou_weight, double l1_weight) {
  BoxLossGrad g = giou_loss_with_grad(gt, pred);
  BoxLossGrad out;
  out.value = giou_weight * g.value;
  const auto a = gt.to_array();
  const auto b = pred.to_array();
  for (int i = 0; i < 4; ++i) {
    const double diff = b[i] - a[i];
    out.value += l1_weight * std::abs(diff);
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    out.d_pred[i] = giou_weight * g.d_pred[i] + l1_weight * sign;
  }
  return out;
}

inline double box_loss(const BBox& gt, const BBox& pred, double giou_weight, double l1_weight) {
  return box_loss_with_grad(gt, pred, giou_weight, l1_weight).value;
}

}  // namespace t6d
