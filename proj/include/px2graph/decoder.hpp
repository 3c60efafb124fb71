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

// Decoding: heatmap / slot-score thresholding into detections, anchor-based
// box decoding, and graph assembly by matching edge reference embeddings to
// the nearest detected vertex embedding.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "px2graph/common.hpp"
#include "px2graph/model.hpp"

namespace px2graph::decode {

struct DecodeConfig {
  double heatmap_t = 0.3;
  double slot_t = 0.3;
  enum class TupleScore { product, edge_only };
  TupleScore tuple_score = TupleScore::product;
  bool dedup = false;       // optional same-category IoU dedup (ablation)
  double dedup_iou = 0.9;
};

template <typename T>
struct DetectedVertex {
  Pixel pixel;
  int slot = 0;
  int category = 0;
  Box box;
  std::vector<T> embedding;
  double score = 0.0;
};

template <typename T>
struct DetectedEdge {
  Pixel pixel;
  int slot = 0;
  int predicate = 0;
  std::vector<T> source_ref, target_ref;
  int resolved_source = -1, resolved_target = -1;
  double score = 0.0;
};

/// Subject-predicate-object proposal; indices refer to the vertex list.
struct RankedTuple {
  int source = -1, target = -1;
  int predicate = 0;
  double score = 0.0;
  Pixel pixel;  // provenance of the edge detection, for deterministic ties
  int slot = 0;
};

template <typename T>
struct PredictedGraph {
  std::vector<DetectedVertex<T>> vertices;
  std::vector<DetectedEdge<T>> edges;
  std::vector<RankedTuple> ranking;  // sorted by non-increasing score
  int dropped_edges = 0;             // edges discarded because no vertex existed
};

namespace detail {

template <typename T>
int argmax(const T* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline double plain_iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace detail

/// Candidate pixels clear the heatmap threshold; each slot clearing the slot
/// threshold yields one detection. Scan order and argmax ties are fixed, so
/// decoding is deterministic.
template <typename T>
std::pair<std::vector<DetectedVertex<T>>, std::vector<DetectedEdge<T>>> detect_elements(
    const model::ModelOutputs<T>& out, const model::ModelConfig& cfg, const DecodeConfig& dcfg) {
  if (!(dcfg.heatmap_t > 0.0 && dcfg.heatmap_t < 1.0 && dcfg.slot_t > 0.0 && dcfg.slot_t < 1.0)) {
    fail("detect_elements: thresholds must lie in (0,1)");
  }
  const int s = cfg.output_size;
  std::vector<DetectedVertex<T>> vertices;
  std::vector<DetectedEdge<T>> edges;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const size_t flat = static_cast<size_t>(y) * s + x;
      if (static_cast<double>(out.vertex_heatmap[flat]) >= dcfg.heatmap_t) {
        for (int j = 0; j < cfg.s_o; ++j) {
          const double score = static_cast<double>(out.object_score[j][flat]);
          if (score < dcfg.slot_t) continue;
          DetectedVertex<T> v;
          v.pixel = Pixel{x, y};
          v.slot = j;
          v.score = score;
          const T* cls = out.class_logits[j].ptr() + flat * cfg.C;
          v.category = detail::argmax(cls, cfg.C);
          const T* anc = out.anchor_logits[j].ptr() + flat * cfg.A;
          const int a = detail::argmax(anc, cfg.A);
          const T* off = out.box_offsets[j].ptr() + flat * 4;
          Box b = model::offsets_to_box(
              {static_cast<double>(off[0]), static_cast<double>(off[1]),
               static_cast<double>(off[2]), static_cast<double>(off[3])},
              v.pixel, cfg.stride, cfg.anchor_shapes[static_cast<size_t>(a)]);
          b.x0 = std::clamp(b.x0, 0.0, static_cast<double>(cfg.input_size));
          b.y0 = std::clamp(b.y0, 0.0, static_cast<double>(cfg.input_size));
          b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(cfg.input_size));
          b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(cfg.input_size));
          v.box = b;
          const T* emb = out.embedding[j].ptr() + flat * cfg.d;
          v.embedding.assign(emb, emb + cfg.d);
          vertices.push_back(std::move(v));
        }
      }
      if (static_cast<double>(out.edge_heatmap[flat]) >= dcfg.heatmap_t) {
        for (int k = 0; k < cfg.s_r; ++k) {
          const double score = static_cast<double>(out.relation_score[k][flat]);
          if (score < dcfg.slot_t) continue;
          DetectedEdge<T> e;
          e.pixel = Pixel{x, y};
          e.slot = k;
          e.score = score;
          const T* prd = out.predicate_logits[k].ptr() + flat * cfg.P;
          e.predicate = detail::argmax(prd, cfg.P);
          const T* se = out.source_embedding[k].ptr() + flat * cfg.d;
          const T* te = out.target_embedding[k].ptr() + flat * cfg.d;
          e.source_ref.assign(se, se + cfg.d);
          e.target_ref.assign(te, te + cfg.d);
          edges.push_back(std::move(e));
        }
      }
    }
  }
  return {std::move(vertices), std::move(edges)};
}

/// Each edge reference resolves independently to the vertex at minimum
/// Euclidean embedding distance (ties to the lower index). Tuple scores are
/// the product of the three detection scores by default. Edges with no
/// vertices to bind to are dropped and counted.
template <typename T>
PredictedGraph<T> assemble_graph(std::vector<DetectedVertex<T>> vertices,
                                 std::vector<DetectedEdge<T>> edges, const DecodeConfig& dcfg) {
  PredictedGraph<T> g;
  g.vertices = std::move(vertices);

  auto nearest = [&](const std::vector<T>& ref) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < g.vertices.size(); ++i) {
      double d = 0.0;
      for (size_t j = 0; j < ref.size(); ++j) {
        const double diff = static_cast<double>(ref[j]) -
                            static_cast<double>(g.vertices[i].embedding[j]);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    return best;
  };

  for (auto& e : edges) {
    if (g.vertices.empty()) {
      ++g.dropped_edges;
      continue;
    }
    e.resolved_source = nearest(e.source_ref);
    e.resolved_target = nearest(e.target_ref);
    g.edges.push_back(std::move(e));
  }

  for (const auto& e : g.edges) {
    RankedTuple t;
    t.source = e.resolved_source;
    t.target = e.resolved_target;
    t.predicate = e.predicate;
    t.pixel = e.pixel;
    t.slot = e.slot;
    if (dcfg.tuple_score == DecodeConfig::TupleScore::product) {
      t.score = e.score * g.vertices[static_cast<size_t>(e.resolved_source)].score *
                g.vertices[static_cast<size_t>(e.resolved_target)].score;
    } else {
      t.score = e.score;
    }
    g.ranking.push_back(t);
  }
  std::stable_sort(g.ranking.begin(), g.ranking.end(), [](const RankedTuple& a,
                                                          const RankedTuple& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.pixel.y != b.pixel.y) return a.pixel.y < b.pixel.y;
    if (a.pixel.x != b.pixel.x) return a.pixel.x < b.pixel.x;
    return a.slot < b.slot;
  });
  return g;
}

/// Optional same-category near-duplicate suppression (off by default).
template <typename T>
std::vector<DetectedVertex<T>> dedup_vertices(std::vector<DetectedVertex<T>> vertices,
                                              double iou_t) {
  std::vector<char> keep(vertices.size(), 1);
  for (size_t i = 0; i < vertices.size(); ++i) {
    if (!keep[i]) continue;
    for (size_t j = i + 1; j < vertices.size(); ++j) {
      if (!keep[j] || vertices[i].category != vertices[j].category) continue;
      if (detail::plain_iou(vertices[i].box, vertices[j].box) >= iou_t) {
        if (vertices[j].score > vertices[i].score) {
          keep[i] = 0;
          break;
        }
        keep[j] = 0;
      }
    }
  }
  std::vector<DetectedVertex<T>> out;
  for (size_t i = 0; i < vertices.size(); ++i) {
    if (keep[i]) out.push_back(std::move(vertices[i]));
  }
  return out;
}

template <typename T>
PredictedGraph<T> decode_graph(const model::ModelOutputs<T>& out, const model::ModelConfig& cfg,
                               const DecodeConfig& dcfg) {
  auto [vertices, edges] = detect_elements(out, cfg, dcfg);
  if (dcfg.dedup) vertices = dedup_vertices(std::move(vertices), dcfg.dedup_iou);
  return assemble_graph(std::move(vertices), std::move(edges), dcfg);
}

template <typename T>
nlohmann::json predicted_graph_to_json(const PredictedGraph<T>& g) {
  nlohmann::json j;
  j["vertices"] = nlohmann::json::array();
  for (const auto& v : g.vertices) {
    j["vertices"].push_back({{"category", v.category},
                             {"box", {v.box.x0, v.box.y0, v.box.x1, v.box.y1}},
                             {"score", v.score},
                             {"pixel", {v.pixel.x, v.pixel.y}},
                             {"slot", v.slot}});
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges) {
    j["edges"].push_back({{"src", e.resolved_source},
                          {"tgt", e.resolved_target},
                          {"predicate", e.predicate},
                          {"score", e.score},
                          {"pixel", {e.pixel.x, e.pixel.y}},
                          {"slot", e.slot}});
  }
  j["ranking"] = nlohmann::json::array();
  for (const auto& t : g.ranking) {
    j["ranking"].push_back({{"src", t.source},
                            {"tgt", t.target},
                            {"predicate", t.predicate},
                            {"score", t.score}});
  }
  j["dropped_edges"] = g.dropped_edges;
  return j;
}

}  // namespace px2graph::decode
