// Copyright 2026 The px2graph Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Procedural shape-world generator. Scenes are sets of colored shapes whose
// directed relations are derived exhaustively from geometric rules, so the
// ground-truth graph is exact by construction. Categories are shape x color;
// predicates are geometric.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "px2graph/common.hpp"
#include "px2graph/rng.hpp"
#include "px2graph/tensor.hpp"

namespace px2graph::scene {

// Shape and color vocabularies; category = shape * n_colors + color.
enum Shape : int { kSquare = 0, kCircle = 1, kTriangle = 2 };

enum Predicate : int {
  kLeftOf = 0,      // x-intervals disjoint (a left), y-intervals overlap
  kAbove = 1,       // y-intervals disjoint (a above), x-intervals overlap
  kInside = 2,      // a strictly contained in b
  kOverlapping = 3, // boxes intersect, neither contains the other
  kLargerThan = 4,  // area(a) >= ratio * area(b)
  kSameColorAs = 5, // equal color, distinct objects
};

inline const char* predicate_name(int p) {
  static constexpr std::array<const char*, 6> names = {
      "left-of", "above", "inside", "overlapping", "larger-than", "same-color-as"};
  return (p >= 0 && p < 6) ? names[static_cast<size_t>(p)] : "?";
}

struct WorldConfig {
  int image_size = 128;
  int stride = 4;
  int min_objects = 2;
  int max_objects = 6;
  int max_edges = 8;
  int s_o = 3;  // per-pixel vertex capacity, enforced by rejection
  int s_r = 6;  // per-pixel edge capacity
  int n_shapes = 3;
  int n_colors = 3;
  double min_side = 14.0;
  double max_side = 26.0;
  double big_min_side = 36.0;
  double big_max_side = 44.0;
  double p_big = 0.4;       // chance one object is drawn from the big range
  double p_nested = 0.3;    // chance of staging a strict containment pair
  double p_overlap = 0.25;  // chance of staging a partial overlap pair
  double larger_ratio = 4.0;
  double self_loop_fraction = 0.0;
  int max_attempts = 64;

  int categories() const { return n_shapes * n_colors; }
  int predicates() const { return 6; }
  int output_size() const { return image_size / stride; }
};

struct VertexGT {
  int category = 0;
  Box box;
  Pixel grounding;  // box center at output resolution

  int shape(const WorldConfig& cfg) const { return category / cfg.n_colors; }
  int color(const WorldConfig& cfg) const { return category % cfg.n_colors; }
};

struct EdgeGT {
  int source = 0;
  int target = 0;
  int predicate = 0;
  Pixel grounding;  // floor midpoint of the endpoint groundings
};

struct SceneGraph {
  std::vector<VertexGT> vertices;
  std::vector<EdgeGT> edges;
  int width = 0;
  int height = 0;
};

/// Float RGB raster, [H,W,3] row-major, values in [0,1].
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  float* px(int x, int y) { return data.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const float* px(int x, int y) const {
    return data.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
};

// ---------------------------------------------------------------------------
// Predicate rules
// ---------------------------------------------------------------------------

inline bool rule_left_of(const Box& a, const Box& b) {
  return a.x1 < b.x0 && std::min(a.y1, b.y1) - std::max(a.y0, b.y0) > 0.0;
}

inline bool rule_above(const Box& a, const Box& b) {
  return a.y1 < b.y0 && std::min(a.x1, b.x1) - std::max(a.x0, b.x0) > 0.0;
}

inline bool rule_inside(const Box& a, const Box& b) {
  return a.x0 > b.x0 && a.x1 < b.x1 && a.y0 > b.y0 && a.y1 < b.y1;
}

inline bool rule_overlapping(const Box& a, const Box& b) {
  return intersection_area(a, b) > 0.0 && !rule_inside(a, b) && !rule_inside(b, a);
}

/// Directed edge set: the closure of the geometric rules over all ordered
/// pairs, with groundings recomputed from the vertex groundings.
inline std::vector<EdgeGT> derive_edges(const std::vector<VertexGT>& vs, const WorldConfig& cfg) {
  std::vector<EdgeGT> edges;
  const int n = static_cast<int>(vs.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const Box &a = vs[i].box, &b = vs[j].box;
      auto emit = [&](int pred) {
        edges.push_back(EdgeGT{i, j, pred, ground_edge(vs[i].grounding, vs[j].grounding)});
      };
      if (rule_left_of(a, b)) emit(kLeftOf);
      if (rule_above(a, b)) emit(kAbove);
      if (rule_inside(a, b)) emit(kInside);
      if (rule_overlapping(a, b)) emit(kOverlapping);
      if (a.area() >= cfg.larger_ratio * b.area()) emit(kLargerThan);
      if (vs[i].category % cfg.n_colors == vs[j].category % cfg.n_colors) emit(kSameColorAs);
    }
  }
  return edges;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline std::array<float, 3> background_color() { return {0.07f, 0.07f, 0.09f}; }

inline std::array<float, 3> color_rgb(int color) {
  switch (color) {
    case 0: return {0.85f, 0.16f, 0.16f};
    case 1: return {0.18f, 0.78f, 0.22f};
    default: return {0.24f, 0.40f, 0.88f};
  }
}

namespace detail {

inline bool point_in_shape(int shape, const Box& b, double x, double y) {
  switch (shape) {
    case kSquare:
      return x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1;
    case kCircle: {
      const double rx = 0.5 * b.width(), ry = 0.5 * b.height();
      const double dx = (x - b.cx()) / rx, dy = (y - b.cy()) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    default: {  // isoceles triangle, apex at top-center
      const double ax = b.cx(), ay = b.y0;
      const double bx = b.x0, by = b.y1;
      const double cx = b.x1, cy = b.y1;
      auto cross = [](double ox, double oy, double px, double py, double qx, double qy) {
        return (px - ox) * (qy - oy) - (py - oy) * (qx - ox);
      };
      const double d1 = cross(ax, ay, bx, by, x, y);
      const double d2 = cross(bx, by, cx, cy, x, y);
      const double d3 = cross(cx, cy, ax, ay, x, y);
      const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
      const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
      return !(has_neg && has_pos);
    }
  }
}

inline Box erode(const Box& b, double e) {
  return Box{b.x0 + e, b.y0 + e, b.x1 - e, b.y1 - e};
}

}  // namespace detail

/// Rasterize objects largest-first so nested and overlapping shapes stay
/// visible; a darker rim separates same-colored neighbors.
inline RasterImage render(const std::vector<VertexGT>& vs, const WorldConfig& cfg) {
  RasterImage img;
  img.width = cfg.image_size;
  img.height = cfg.image_size;
  img.data.assign(static_cast<size_t>(img.width) * img.height * 3, 0.0f);
  const auto bg = background_color();
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      float* p = img.px(x, y);
      p[0] = bg[0];
      p[1] = bg[1];
      p[2] = bg[2];
    }
  }
  std::vector<int> order(vs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return vs[a].box.area() > vs[b].box.area(); });
  for (int idx : order) {
    const auto& v = vs[idx];
    const int shape = v.shape(cfg);
    const auto fill = color_rgb(v.color(cfg));
    const std::array<float, 3> rim = {fill[0] * 0.45f, fill[1] * 0.45f, fill[2] * 0.45f};
    const Box inner = detail::erode(v.box, 1.5);
    const int x0 = std::max(0, static_cast<int>(std::floor(v.box.x0)));
    const int y0 = std::max(0, static_cast<int>(std::floor(v.box.y0)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(v.box.x1)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(v.box.y1)));
    for (int py = y0; py <= y1; ++py) {
      for (int px = x0; px <= x1; ++px) {
        const double cx = px + 0.5, cy = py + 0.5;
        if (!detail::point_in_shape(shape, v.box, cx, cy)) continue;
        const bool core = inner.well_formed() && detail::point_in_shape(shape, inner, cx, cy);
        const auto& c = core ? fill : rim;
        float* p = img.px(px, py);
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
      }
    }
  }
  return img;
}

inline std::vector<uint8_t> to_bytes(const RasterImage& img) {
  std::vector<uint8_t> out(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    const float v = std::clamp(img.data[i], 0.0f, 1.0f);
    out[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

inline RasterImage from_bytes(int width, int height, const std::vector<uint8_t>& rgb) {
  RasterImage img;
  img.width = width;
  img.height = height;
  img.data.resize(rgb.size());
  for (size_t i = 0; i < rgb.size(); ++i) img.data[i] = static_cast<float>(rgb[i]) / 255.0f;
  return img;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace detail {

inline bool slot_capacity_ok(const SceneGraph& g, int s_o, int s_r) {
  std::map<Pixel, int> vcount, ecount;
  for (const auto& v : g.vertices) {
    if (++vcount[v.grounding] > s_o) return false;
  }
  for (const auto& e : g.edges) {
    if (++ecount[e.grounding] > s_r) return false;
  }
  return true;
}

inline Box place_box(Rng& rng, double side_min, double side_max, int canvas) {
  const double w = rng.uniform(side_min, side_max);
  const double h = rng.uniform(side_min, side_max);
  const double x0 = rng.uniform(1.0, canvas - 1.0 - w);
  const double y0 = rng.uniform(1.0, canvas - 1.0 - h);
  return Box{x0, y0, x0 + w, y0 + h};
}

}  // namespace detail

/// Deterministic in (seed, config). Throws after bounded rejection attempts
/// when the configured world cannot satisfy the edge and slot-capacity bounds.
inline std::pair<RasterImage, SceneGraph> generate_scene(uint64_t seed, const WorldConfig& cfg) {
  Rng rng(mix_seed(seed, 0x5ce9e5u));
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const int n = rng.uniform_int(cfg.min_objects, cfg.max_objects);
    std::vector<VertexGT> vs(static_cast<size_t>(n));

    // Loose 3x3 grid with jitter keeps spatial relations sparse; row and
    // column neighbors are the ones that end up axis-aligned.
    std::vector<int> cells = rng.sample_without_replacement(9, n);
    const double cell = (cfg.image_size - 2.0) / 3.0;
    const int big_idx = rng.uniform() < cfg.p_big ? rng.uniform_int(0, n - 1) : -1;
    // First n_colors objects draw distinct colors; later ones draw freely,
    // which keeps same-color-as pairs present but inside the edge budget.
    std::vector<int> palette(static_cast<size_t>(cfg.n_colors));
    for (int c = 0; c < cfg.n_colors; ++c) palette[static_cast<size_t>(c)] = c;
    rng.shuffle(palette);
    for (int i = 0; i < n; ++i) {
      const double lo = i == big_idx ? cfg.big_min_side : cfg.min_side;
      const double hi = i == big_idx ? cfg.big_max_side : cfg.max_side;
      const double w = rng.uniform(lo, hi);
      const double h = rng.uniform(lo, hi);
      const int cxg = cells[i] % 3, cyg = cells[i] / 3;
      double cx = 1.0 + (cxg + 0.5) * cell + rng.uniform(-0.3, 0.3) * cell;
      double cy = 1.0 + (cyg + 0.5) * cell + rng.uniform(-0.3, 0.3) * cell;
      cx = std::clamp(cx, 1.0 + w / 2, cfg.image_size - 1.0 - w / 2);
      cy = std::clamp(cy, 1.0 + h / 2, cfg.image_size - 1.0 - h / 2);
      vs[i].box = Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
      const int shape = rng.uniform_int(0, cfg.n_shapes - 1);
      const int color = i < cfg.n_colors ? palette[static_cast<size_t>(i)]
                                         : rng.uniform_int(0, cfg.n_colors - 1);
      vs[i].category = shape * cfg.n_colors + color;
    }

    // Optionally stage a containment or partial-overlap pair.
    if (n >= 2) {
      const double r = rng.uniform();
      if (r < cfg.p_nested) {
        const int host = rng.uniform_int(0, n - 1);
        int inner = rng.uniform_int(0, n - 2);
        if (inner >= host) ++inner;
        double hw = rng.uniform(cfg.big_min_side, cfg.big_max_side);
        double hh = rng.uniform(cfg.big_min_side, cfg.big_max_side);
        double hx = std::clamp(vs[host].box.cx(), 1.0 + hw / 2, cfg.image_size - 1.0 - hw / 2);
        double hy = std::clamp(vs[host].box.cy(), 1.0 + hh / 2, cfg.image_size - 1.0 - hh / 2);
        vs[host].box = Box{hx - hw / 2, hy - hh / 2, hx + hw / 2, hy + hh / 2};
        const double iw = rng.uniform(8.0, 14.0);
        const double ih = rng.uniform(8.0, 14.0);
        const double ix0 = rng.uniform(vs[host].box.x0 + 2.0, vs[host].box.x1 - 2.0 - iw);
        const double iy0 = rng.uniform(vs[host].box.y0 + 2.0, vs[host].box.y1 - 2.0 - ih);
        vs[inner].box = Box{ix0, iy0, ix0 + iw, iy0 + ih};
      } else if (r < cfg.p_nested + cfg.p_overlap) {
        const int a = rng.uniform_int(0, n - 1);
        int b = rng.uniform_int(0, n - 2);
        if (b >= a) ++b;
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        const double reach = 0.5 * (vs[a].box.width() + vs[b].box.width());
        const double dist = rng.uniform(0.45, 0.85) * reach;
        const double w = vs[b].box.width(), h = vs[b].box.height();
        double cx = vs[a].box.cx() + dist * std::cos(theta);
        double cy = vs[a].box.cy() + dist * std::sin(theta);
        cx = std::clamp(cx, 1.0 + w / 2, cfg.image_size - 1.0 - w / 2);
        cy = std::clamp(cy, 1.0 + h / 2, cfg.image_size - 1.0 - h / 2);
        vs[b].box = Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
      }
    }

    for (auto& v : vs) v.grounding = ground_box_center(v.box, cfg.stride);

    SceneGraph g;
    g.vertices = vs;
    g.width = cfg.image_size;
    g.height = cfg.image_size;
    g.edges = derive_edges(vs, cfg);
    if (cfg.self_loop_fraction > 0.0) {
      for (int i = 0; i < n; ++i) {
        if (rng.uniform() < cfg.self_loop_fraction) {
          g.edges.push_back(
              EdgeGT{i, i, kSameColorAs, ground_edge(vs[i].grounding, vs[i].grounding)});
        }
      }
    }

    if (static_cast<int>(g.edges.size()) > cfg.max_edges) continue;
    if (!detail::slot_capacity_ok(g, cfg.s_o, cfg.s_r)) continue;
    return {render(vs, cfg), g};
  }
  fail("generate_scene: no admissible scene after " + std::to_string(cfg.max_attempts) +
       " attempts (seed " + std::to_string(seed) + ")");
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentParams {
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

struct AugmentConfig {
  bool enabled = true;
  double scale_min = 0.85;
  double scale_max = 1.15;
  double max_translate = 10.0;
};

inline AugmentParams sample_augment(Rng& rng, const AugmentConfig& cfg) {
  if (!cfg.enabled) return {};
  AugmentParams p;
  p.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  p.tx = rng.uniform(-cfg.max_translate, cfg.max_translate);
  p.ty = rng.uniform(-cfg.max_translate, cfg.max_translate);
  return p;
}

/// Applies p -> scale * p + t to the image (nearest-neighbor) and to every
/// box. Vertices whose transformed box center leaves the canvas are dropped
/// together with their incident edges; the surviving edges are regrounded
/// from the transformed vertex groundings.
inline std::pair<RasterImage, SceneGraph> augment(const RasterImage& img, const SceneGraph& g,
                                                  const AugmentParams& p, int stride) {
  RasterImage out;
  out.width = img.width;
  out.height = img.height;
  out.data.assign(img.data.size(), 0.0f);
  const auto bg = background_color();
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const int sx = static_cast<int>(std::floor((x + 0.5 - p.tx) / p.scale));
      const int sy = static_cast<int>(std::floor((y + 0.5 - p.ty) / p.scale));
      float* d = out.px(x, y);
      if (sx >= 0 && sx < img.width && sy >= 0 && sy < img.height) {
        const float* s = img.px(sx, sy);
        d[0] = s[0];
        d[1] = s[1];
        d[2] = s[2];
      } else {
        d[0] = bg[0];
        d[1] = bg[1];
        d[2] = bg[2];
      }
    }
  }

  SceneGraph gg;
  gg.width = g.width;
  gg.height = g.height;
  std::vector<int> remap(g.vertices.size(), -1);
  for (size_t i = 0; i < g.vertices.size(); ++i) {
    VertexGT v = g.vertices[i];
    v.box = Box{v.box.x0 * p.scale + p.tx, v.box.y0 * p.scale + p.ty,
                v.box.x1 * p.scale + p.tx, v.box.y1 * p.scale + p.ty};
    const double cx = v.box.cx(), cy = v.box.cy();
    if (cx < 0.0 || cx >= g.width || cy < 0.0 || cy >= g.height) continue;
    v.grounding = ground_box_center(v.box, stride);
    remap[i] = static_cast<int>(gg.vertices.size());
    gg.vertices.push_back(v);
  }
  for (const auto& e : g.edges) {
    const int s = remap[static_cast<size_t>(e.source)];
    const int t = remap[static_cast<size_t>(e.target)];
    if (s < 0 || t < 0) continue;
    gg.edges.push_back(EdgeGT{
        s, t, e.predicate, ground_edge(gg.vertices[s].grounding, gg.vertices[t].grounding)});
  }
  return {std::move(out), std::move(gg)};
}

// ---------------------------------------------------------------------------
// Prior-detection input encoding
// ---------------------------------------------------------------------------

/// Best anchor for a box by centered-shape IoU; ties take the lowest index.
inline int best_anchor(double w, double h, const std::vector<std::pair<double, double>>& anchors) {
  int best = 0;
  double best_iou = -1.0;
  for (size_t a = 0; a < anchors.size(); ++a) {
    const auto [aw, ah] = anchors[a];
    const double inter = std::min(w, aw) * std::min(h, ah);
    const double iou = inter / (w * h + aw * ah - inter);
    if (iou > best_iou) {
      best_iou = iou;
      best = static_cast<int>(a);
    }
  }
  return best;
}

struct PriorBox {
  Box box;
  int category = -1;  // -1 when no class information is available
};

struct PriorLayout {
  int out_size = 32;
  int stride = 4;
  int categories = 9;
  std::vector<std::pair<double, double>> anchors;

  /// Channel layout: per-category pairs first, per-anchor pairs after.
  /// Within a pair, channel 0 holds box-center activations, channel 1 the
  /// union of box masks.
  int channels() const { return 2 * categories + 2 * static_cast<int>(anchors.size()); }
};

/// Two channels per group at output resolution (centers, mask union). Boxes
/// carrying class labels fill the per-category block; unlabeled boxes are
/// grouped by bounding-box anchor instead.
template <typename T>
ad::Tensor<T> encode_prior_detections(const std::vector<PriorBox>& boxes,
                                      const PriorLayout& layout) {
  const int s = layout.out_size;
  auto t = ad::Tensor<T>::zeros({s, s, layout.channels()});
  const int ch = layout.channels();
  auto at = [&](int x, int y, int c) -> T& {
    return t[(static_cast<size_t>(y) * s + x) * ch + c];
  };
  for (const auto& pb : boxes) {
    if (!pb.box.well_formed()) fail("encode_prior_detections: malformed box");
    int group;
    if (pb.category >= 0) {
      if (pb.category >= layout.categories) fail("encode_prior_detections: category out of range");
      group = 2 * pb.category;
    } else {
      group = 2 * layout.categories + 2 * best_anchor(pb.box.width(), pb.box.height(),
                                                      layout.anchors);
    }
    const Pixel c = ground_box_center(pb.box, layout.stride);
    const int cx = std::clamp(c.x, 0, s - 1), cy = std::clamp(c.y, 0, s - 1);
    at(cx, cy, group) = T(1);
    at(cx, cy, group + 1) = T(1);
    for (int py = 0; py < s; ++py) {
      for (int px = 0; px < s; ++px) {
        const double ix = (px + 0.5) * layout.stride;
        const double iy = (py + 0.5) * layout.stride;
        if (ix >= pb.box.x0 && ix <= pb.box.x1 && iy >= pb.box.y0 && iy <= pb.box.y1) {
          at(px, py, group + 1) = T(1);
        }
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Scene serialization (groundings are derived, never stored)
// ---------------------------------------------------------------------------

inline nlohmann::json scene_to_json(const SceneGraph& g, const std::string& image_file) {
  nlohmann::json j;
  j["image"] = image_file;
  j["width"] = g.width;
  j["height"] = g.height;
  j["vertices"] = nlohmann::json::array();
  for (const auto& v : g.vertices) {
    j["vertices"].push_back(
        {{"category", v.category}, {"box", {v.box.x0, v.box.y0, v.box.x1, v.box.y1}}});
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges) {
    j["edges"].push_back({{"src", e.source}, {"tgt", e.target}, {"predicate", e.predicate}});
  }
  return j;
}

inline SceneGraph scene_from_json(const nlohmann::json& j, int stride) {
  SceneGraph g;
  g.width = j.at("width").get<int>();
  g.height = j.at("height").get<int>();
  for (const auto& vj : j.at("vertices")) {
    VertexGT v;
    v.category = vj.at("category").get<int>();
    const auto& b = vj.at("box");
    v.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                b.at(3).get<double>()};
    v.grounding = ground_box_center(v.box, stride);
    g.vertices.push_back(v);
  }
  for (const auto& ej : j.at("edges")) {
    EdgeGT e;
    e.source = ej.at("src").get<int>();
    e.target = ej.at("tgt").get<int>();
    e.predicate = ej.at("predicate").get<int>();
    if (e.source < 0 || e.source >= static_cast<int>(g.vertices.size()) || e.target < 0 ||
        e.target >= static_cast<int>(g.vertices.size())) {
      fail("scene_from_json: edge endpoint out of range");
    }
    e.grounding = ground_edge(g.vertices[static_cast<size_t>(e.source)].grounding,
                              g.vertices[static_cast<size_t>(e.target)].grounding);
    g.edges.push_back(e);
  }
  return g;
}

}  // namespace px2graph::scene
