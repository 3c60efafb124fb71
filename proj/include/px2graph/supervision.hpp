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

// Training supervision: sampled-negative heatmap BCE, pull/push associative
// embedding losses, Hungarian assignment of ground truth to unordered output
// slots, and the per-slot classification / regression / score losses. All
// loss components are weighted equally; the bundle total is their plain sum.

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "px2graph/autodiff.hpp"
#include "px2graph/common.hpp"
#include "px2graph/model.hpp"
#include "px2graph/rng.hpp"
#include "px2graph/scenegen.hpp"

namespace px2graph::sup {

// ---------------------------------------------------------------------------
// Hungarian assignment (min-cost, rows <= cols, every row assigned)
// ---------------------------------------------------------------------------

/// Shortest-augmenting-path assignment with potentials. `cost` is row-major
/// n_rows x n_cols. Returns the column assigned to each row. Ties resolve
/// deterministically toward lower column indices (ascending scans).
inline std::vector<int> hungarian(const std::vector<double>& cost, int n_rows, int n_cols) {
  if (n_rows > n_cols) {
    fail("hungarian: " + std::to_string(n_rows) + " rows exceed " + std::to_string(n_cols) +
         " columns");
  }
  if (static_cast<int>(cost.size()) != n_rows * n_cols) fail("hungarian: cost size mismatch");
  for (double c : cost) {
    if (!std::isfinite(c)) fail("hungarian: non-finite cost");
  }
  if (n_rows == 0) return {};

  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n_rows) + 1, 0.0);
  std::vector<double> v(static_cast<size_t>(n_cols) + 1, 0.0);
  std::vector<int> match(static_cast<size_t>(n_cols) + 1, 0);  // col -> row (1-based)
  std::vector<int> way(static_cast<size_t>(n_cols) + 1, 0);
  for (int i = 1; i <= n_rows; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n_cols) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(n_cols) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = match[static_cast<size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n_cols; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur =
            cost[static_cast<size_t>(i0 - 1) * n_cols + (j - 1)] - u[static_cast<size_t>(i0)] -
            v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n_cols; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assign(static_cast<size_t>(n_rows), -1);
  for (int j = 1; j <= n_cols; ++j) {
    if (match[static_cast<size_t>(j)] > 0) assign[static_cast<size_t>(match[j]) - 1] = j - 1;
  }
  return assign;
}

// ---------------------------------------------------------------------------
// Reference vectors and matching costs
// ---------------------------------------------------------------------------

/// Ground-truth descriptor compared against slot outputs during matching.
/// Objects: one-hot category + one-hot anchor. Relations: one-hot predicate
/// followed by the current source and target vertex embeddings.
struct ReferenceVector {
  enum class Kind { object, relation };
  Kind kind = Kind::object;
  std::vector<double> values;
};

inline ReferenceVector object_reference(int category, int anchor, int C, int A) {
  ReferenceVector r;
  r.kind = ReferenceVector::Kind::object;
  r.values.assign(static_cast<size_t>(C + A), 0.0);
  r.values[static_cast<size_t>(category)] = 1.0;
  r.values[static_cast<size_t>(C + anchor)] = 1.0;
  return r;
}

inline ReferenceVector relation_reference(int predicate, const std::vector<double>& h_src,
                                          const std::vector<double>& h_tgt, int P) {
  ReferenceVector r;
  r.kind = ReferenceVector::Kind::relation;
  r.values.assign(static_cast<size_t>(P) + h_src.size() + h_tgt.size(), 0.0);
  r.values[static_cast<size_t>(predicate)] = 1.0;
  std::copy(h_src.begin(), h_src.end(), r.values.begin() + P);
  std::copy(h_tgt.begin(), h_tgt.end(), r.values.begin() + P + h_src.size());
  return r;
}

struct ObjectSlotDesc {
  std::vector<double> class_dist, anchor_dist;
};

struct RelationSlotDesc {
  std::vector<double> predicate_dist, src_emb, tgt_emb;
};

/// Negative inner product between the reference one-hots and the slot's
/// predicted distributions.
inline double match_cost(const ReferenceVector& ref, const ObjectSlotDesc& slot) {
  const int c = static_cast<int>(slot.class_dist.size());
  const int a = static_cast<int>(slot.anchor_dist.size());
  double dot = 0.0;
  for (int i = 0; i < c; ++i) dot += ref.values[static_cast<size_t>(i)] * slot.class_dist[i];
  for (int i = 0; i < a; ++i) dot += ref.values[static_cast<size_t>(c + i)] * slot.anchor_dist[i];
  return -dot;
}

/// Distribution term as above plus squared distances on the embedding blocks.
inline double match_cost(const ReferenceVector& ref, const RelationSlotDesc& slot) {
  const int p = static_cast<int>(slot.predicate_dist.size());
  const size_t d = slot.src_emb.size();
  double dot = 0.0;
  for (int i = 0; i < p; ++i) dot += ref.values[static_cast<size_t>(i)] * slot.predicate_dist[i];
  double dist = 0.0;
  for (size_t i = 0; i < d; ++i) {
    const double ds = ref.values[p + i] - slot.src_emb[i];
    const double dt = ref.values[p + d + i] - slot.tgt_emb[i];
    dist += ds * ds + dt * dt;
  }
  return -dot + dist;
}

/// Injective assignment of the ground-truth elements grounded at one pixel to
/// output slots.
struct SlotAssignment {
  Pixel pixel;
  std::vector<std::pair<int, int>> pairs;  // (ground-truth index, slot index)
  std::vector<int> unmatched_slots;
};

namespace detail {

inline SlotAssignment assign_slots(Pixel pixel, const std::vector<double>& cost, int n_gt,
                                   int n_slots) {
  SlotAssignment sa;
  sa.pixel = pixel;
  const std::vector<int> cols = hungarian(cost, n_gt, n_slots);
  std::vector<char> taken(static_cast<size_t>(n_slots), 0);
  for (int g = 0; g < n_gt; ++g) {
    const int s = cols[static_cast<size_t>(g)];
    if (s < 0 || taken[static_cast<size_t>(s)]) fail("match_slots: assignment not injective");
    taken[static_cast<size_t>(s)] = 1;
    sa.pairs.emplace_back(g, s);
  }
  for (int s = 0; s < n_slots; ++s) {
    if (!taken[static_cast<size_t>(s)]) sa.unmatched_slots.push_back(s);
  }
  return sa;
}

}  // namespace detail

inline SlotAssignment match_object_slots(Pixel pixel, const std::vector<ReferenceVector>& refs,
                                         const std::vector<ObjectSlotDesc>& slots) {
  const int n_gt = static_cast<int>(refs.size());
  const int n_slots = static_cast<int>(slots.size());
  std::vector<double> cost(static_cast<size_t>(n_gt) * n_slots);
  for (int g = 0; g < n_gt; ++g) {
    for (int s = 0; s < n_slots; ++s) {
      cost[static_cast<size_t>(g) * n_slots + s] = match_cost(refs[static_cast<size_t>(g)],
                                                              slots[static_cast<size_t>(s)]);
    }
  }
  return detail::assign_slots(pixel, cost, n_gt, n_slots);
}

inline SlotAssignment match_relation_slots(Pixel pixel, const std::vector<ReferenceVector>& refs,
                                           const std::vector<RelationSlotDesc>& slots) {
  const int n_gt = static_cast<int>(refs.size());
  const int n_slots = static_cast<int>(slots.size());
  std::vector<double> cost(static_cast<size_t>(n_gt) * n_slots);
  for (int g = 0; g < n_gt; ++g) {
    for (int s = 0; s < n_slots; ++s) {
      cost[static_cast<size_t>(g) * n_slots + s] = match_cost(refs[static_cast<size_t>(g)],
                                                              slots[static_cast<size_t>(s)]);
    }
  }
  return detail::assign_slots(pixel, cost, n_gt, n_slots);
}

// ---------------------------------------------------------------------------
// Heatmap loss
// ---------------------------------------------------------------------------

/// BCE averaged over the positive pixels plus ceil(neg_ratio * |positives|)
/// negatives sampled uniformly without replacement from the rest of the map;
/// with no positives, a fixed configured count of negatives is used.
template <typename T>
ad::Var<T> heatmap_loss(ad::Tape<T>& tape, ad::Var<T> logits_map,
                        const std::vector<Pixel>& positives, double neg_ratio,
                        int empty_negatives, Rng& rng) {
  const auto& v = tape.val(logits_map);
  if (v.rank() != 3 || v.dim(2) != 1) fail("heatmap_loss: expected [H,W,1] logits");
  const int h = v.dim(0), w = v.dim(1);

  std::vector<char> is_pos(static_cast<size_t>(h) * w, 0);
  std::vector<Pixel> pos;
  for (const auto& p : positives) {
    if (p.x < 0 || p.x >= w || p.y < 0 || p.y >= h) fail("heatmap_loss: positive out of bounds");
    char& flag = is_pos[static_cast<size_t>(p.y) * w + p.x];
    if (!flag) {
      flag = 1;
      pos.push_back(p);
    }
  }
  std::vector<int> candidates;
  candidates.reserve(static_cast<size_t>(h) * w - pos.size());
  for (int i = 0; i < h * w; ++i) {
    if (!is_pos[static_cast<size_t>(i)]) candidates.push_back(i);
  }
  const int want = pos.empty()
                       ? empty_negatives
                       : static_cast<int>(std::ceil(neg_ratio * static_cast<double>(pos.size())));
  const int n_neg = std::min<int>(want, static_cast<int>(candidates.size()));
  std::vector<int> chosen = rng.sample_without_replacement(static_cast<int>(candidates.size()),
                                                           n_neg);

  std::vector<Pixel> pixels = pos;
  for (int idx : chosen) {
    const int flat = candidates[static_cast<size_t>(idx)];
    pixels.push_back(Pixel{flat % w, flat / w});
  }
  const int n = static_cast<int>(pixels.size());
  auto targets = ad::Tensor<T>::zeros({n, 1});
  for (size_t i = 0; i < pos.size(); ++i) targets[i] = T(1);
  auto logits = gather_pixels(logits_map, pixels);
  return mean_all(bce_logits(logits, targets));
}

// ---------------------------------------------------------------------------
// Associative-embedding losses
// ---------------------------------------------------------------------------

/// Mean over all vertex references of the squared Euclidean distance between
/// the vertex embedding and the referring embedding. Gradients reach both
/// sides. Zero references yields a constant zero.
template <typename T>
ad::Var<T> pull_loss(ad::Tape<T>& tape, const std::vector<ad::Var<T>>& vertex_emb,
                     const std::vector<std::vector<ad::Var<T>>>& references) {
  if (vertex_emb.size() != references.size()) fail("pull_loss: size mismatch");
  size_t total_refs = 0;
  ad::Var<T> acc{};
  for (size_t i = 0; i < vertex_emb.size(); ++i) {
    for (const auto& ref : references[i]) {
      auto diff = sub(vertex_emb[i], ref);
      auto term = sum_all(mul(diff, diff));
      acc = acc.valid() ? add(acc, term) : term;
      ++total_refs;
    }
  }
  if (total_refs == 0) return tape.constant(ad::Tensor<T>::scalar(T(0)));
  return mul_scalar(acc, 1.0 / static_cast<double>(total_refs));
}

/// Hinge penalty max(0, m - ||h_i - h_j||) summed over unordered vertex
/// pairs. The distance subgradient at coincident embeddings is zero.
template <typename T>
ad::Var<T> push_loss(ad::Tape<T>& tape, const std::vector<ad::Var<T>>& vertex_emb, double margin) {
  ad::Var<T> acc{};
  for (size_t i = 0; i + 1 < vertex_emb.size(); ++i) {
    for (size_t j = i + 1; j < vertex_emb.size(); ++j) {
      auto diff = sub(vertex_emb[i], vertex_emb[j]);
      auto dist = sqrt_op(sum_all(mul(diff, diff)));
      auto hinge = relu(add_scalar(mul_scalar(dist, -1.0), margin));
      acc = acc.valid() ? add(acc, hinge) : hinge;
    }
  }
  if (!acc.valid()) return tape.constant(ad::Tensor<T>::scalar(T(0)));
  return acc;
}

// ---------------------------------------------------------------------------
// Image-level loss assembly
// ---------------------------------------------------------------------------

struct LossBundle {
  double heatmap_v = 0, heatmap_e = 0, pull = 0, push = 0;
  double class_obj = 0, anchor = 0, box_offset = 0, predicate = 0;
  double score_obj = 0, score_rel = 0;
  double total = 0;
};

struct SupervisionConfig {
  double neg_ratio = 3.0;
  int empty_negatives = 12;
  bool pull_grad_to_vertex = true;  // gradient flow from pull terms into h_i
};

/// Per-slot head outputs over a shared row set (one row per occupied pixel).
template <typename T>
struct ObjectSlotMats {
  ad::Var<T> class_logits;   // [n,C]
  ad::Var<T> anchor_logits;  // [n,A]
  ad::Var<T> box_offsets;    // [n,4]
  ad::Var<T> embedding;      // [n,d]
  ad::Var<T> score_logits;   // [n,1]
};

template <typename T>
struct RelationSlotMats {
  ad::Var<T> predicate_logits;  // [n,P]
  ad::Var<T> source_embedding;  // [n,d]
  ad::Var<T> target_embedding;  // [n,d]
  ad::Var<T> score_logits;      // [n,1]
};

template <typename T>
struct ImageLoss {
  ad::Var<T> total;
  LossBundle bundle;
  std::vector<SlotAssignment> object_assignments;
  std::vector<SlotAssignment> relation_assignments;
};

struct ObjectTargets {
  int category = 0;
  int anchor = 0;
  std::array<double, 4> offsets{};
};

inline ObjectTargets object_targets(const scene::VertexGT& v, const model::ModelConfig& cfg) {
  ObjectTargets t;
  t.category = v.category;
  t.anchor = scene::best_anchor(v.box.width(), v.box.height(), cfg.anchor_shapes);
  t.offsets = model::box_to_offsets(v.box, v.grounding, cfg.stride,
                                    cfg.anchor_shapes[static_cast<size_t>(t.anchor)]);
  return t;
}

namespace detail {

template <typename T>
std::vector<double> row_values(const ad::Tape<T>& tape, ad::Var<T> mat, int row) {
  const auto& v = tape.val(mat);
  const int c = v.dim(1);
  std::vector<double> out(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i) {
    out[static_cast<size_t>(i)] = static_cast<double>(v[static_cast<size_t>(row) * c + i]);
  }
  return out;
}

inline std::vector<double> softmax_values(std::vector<double> z) {
  double zmax = z[0];
  for (double x : z) zmax = std::max(zmax, x);
  double denom = 0.0;
  for (auto& x : z) {
    x = std::exp(x - zmax);
    denom += x;
  }
  for (auto& x : z) x /= denom;
  return z;
}

template <typename T>
ad::Var<T> ce_single(ad::Var<T> mat, int row, int label) {
  auto logits = reshape(select_row(mat, row), {1, mat.tape->val(mat).dim(1)});
  return cross_entropy_rows(logits, std::vector<int>{label});
}

template <typename T>
ad::Var<T> zero_scalar(ad::Tape<T>& tape) {
  return tape.constant(ad::Tensor<T>::scalar(T(0)));
}

}  // namespace detail

/// Builds every loss component for one image. Object slots are matched per
/// occupied vertex pixel first (reference = one-hot class + one-hot anchor);
/// the matched embeddings then enter the relation references (as constants:
/// matching itself is non-differentiable). Matched slots receive class,
/// anchor, offset and score-1 supervision; unmatched slots only score-0.
template <typename T>
ImageLoss<T> build_losses(ad::Tape<T>& tape, ad::Var<T> vertex_logit_map,
                          ad::Var<T> edge_logit_map,
                          const std::vector<ObjectSlotMats<T>>& obj_slots,
                          const std::vector<RelationSlotMats<T>>& rel_slots,
                          const std::vector<Pixel>& vertex_pixels,
                          const std::vector<Pixel>& edge_pixels,
                          const std::map<Pixel, std::vector<int>>& vertices_at,
                          const std::map<Pixel, std::vector<int>>& edges_at,
                          const scene::SceneGraph& graph, const model::ModelConfig& mcfg,
                          const SupervisionConfig& scfg, Rng& rng) {
  ImageLoss<T> result;
  const int s_o = static_cast<int>(obj_slots.size());
  const int s_r = static_cast<int>(rel_slots.size());

  std::map<Pixel, int> vrow, erow;
  for (size_t i = 0; i < vertex_pixels.size(); ++i) vrow[vertex_pixels[i]] = static_cast<int>(i);
  for (size_t i = 0; i < edge_pixels.size(); ++i) erow[edge_pixels[i]] = static_cast<int>(i);

  // --- object matching and per-slot losses ---
  std::vector<ad::Var<T>> vertex_embedding(graph.vertices.size());
  ad::Var<T> class_acc{}, anchor_acc{}, box_acc{};
  int n_matched_obj = 0;
  std::vector<std::vector<char>> obj_slot_full(
      static_cast<size_t>(s_o), std::vector<char>(vertex_pixels.size(), 0));

  for (const auto& [pixel, vidx] : vertices_at) {
    const int row = vrow.at(pixel);
    if (static_cast<int>(vidx.size()) > s_o) {
      fail("build_losses: " + std::to_string(vidx.size()) + " vertices at one pixel exceed s_o");
    }
    std::vector<ReferenceVector> refs;
    std::vector<ObjectTargets> targets;
    for (int vi : vidx) {
      const auto t = object_targets(graph.vertices[static_cast<size_t>(vi)], mcfg);
      targets.push_back(t);
      refs.push_back(object_reference(t.category, t.anchor, mcfg.C, mcfg.A));
    }
    std::vector<ObjectSlotDesc> descs(static_cast<size_t>(s_o));
    for (int j = 0; j < s_o; ++j) {
      descs[static_cast<size_t>(j)].class_dist =
          detail::softmax_values(detail::row_values(tape, obj_slots[j].class_logits, row));
      descs[static_cast<size_t>(j)].anchor_dist =
          detail::softmax_values(detail::row_values(tape, obj_slots[j].anchor_logits, row));
    }
    SlotAssignment sa = match_object_slots(pixel, refs, descs);
    result.object_assignments.push_back(sa);

    for (const auto& [g, slot] : sa.pairs) {
      obj_slot_full[static_cast<size_t>(slot)][static_cast<size_t>(row)] = 1;
      const auto& tgt = targets[static_cast<size_t>(g)];
      auto cls = detail::ce_single(obj_slots[slot].class_logits, row, tgt.category);
      auto anc = detail::ce_single(obj_slots[slot].anchor_logits, row, tgt.anchor);
      class_acc = class_acc.valid() ? add(class_acc, sum_all(cls)) : sum_all(cls);
      anchor_acc = anchor_acc.valid() ? add(anchor_acc, sum_all(anc)) : sum_all(anc);
      auto off = select_row(obj_slots[slot].box_offsets, row);
      auto off_tgt = ad::Tensor<T>::from(
          {4}, {static_cast<T>(tgt.offsets[0]), static_cast<T>(tgt.offsets[1]),
                static_cast<T>(tgt.offsets[2]), static_cast<T>(tgt.offsets[3])});
      auto box_term = sum_all(smooth_l1(sub(off, tape.constant(off_tgt))));
      box_acc = box_acc.valid() ? add(box_acc, box_term) : box_term;
      vertex_embedding[static_cast<size_t>(vidx[static_cast<size_t>(g)])] =
          select_row(obj_slots[slot].embedding, row);
      ++n_matched_obj;
    }
  }

  // --- object slot scores (full = 1, empty = 0 at occupied pixels) ---
  ad::Var<T> score_obj_acc{};
  if (!vertex_pixels.empty()) {
    for (int j = 0; j < s_o; ++j) {
      auto targets = ad::Tensor<T>::zeros({static_cast<int>(vertex_pixels.size()), 1});
      for (size_t r = 0; r < vertex_pixels.size(); ++r) {
        if (obj_slot_full[static_cast<size_t>(j)][r]) targets[r] = T(1);
      }
      auto term = sum_all(bce_logits(obj_slots[j].score_logits, targets));
      score_obj_acc = score_obj_acc.valid() ? add(score_obj_acc, term) : term;
    }
  }

  // --- relation matching ---
  ad::Var<T> pred_acc{};
  int n_matched_rel = 0;
  std::vector<std::vector<char>> rel_slot_full(
      static_cast<size_t>(s_r), std::vector<char>(edge_pixels.size(), 0));
  std::vector<std::vector<ad::Var<T>>> references(graph.vertices.size());

  for (const auto& [pixel, eidx] : edges_at) {
    const int row = erow.at(pixel);
    if (static_cast<int>(eidx.size()) > s_r) {
      fail("build_losses: " + std::to_string(eidx.size()) + " edges at one pixel exceed s_r");
    }
    std::vector<ReferenceVector> refs;
    for (int ei : eidx) {
      const auto& e = graph.edges[static_cast<size_t>(ei)];
      const auto& hs = vertex_embedding[static_cast<size_t>(e.source)];
      const auto& ht = vertex_embedding[static_cast<size_t>(e.target)];
      if (!hs.valid() || !ht.valid()) fail("build_losses: edge endpoint missing embedding");
      std::vector<double> hs_val(static_cast<size_t>(mcfg.d)), ht_val(static_cast<size_t>(mcfg.d));
      for (int i = 0; i < mcfg.d; ++i) {
        hs_val[static_cast<size_t>(i)] = static_cast<double>(tape.val(hs)[static_cast<size_t>(i)]);
        ht_val[static_cast<size_t>(i)] = static_cast<double>(tape.val(ht)[static_cast<size_t>(i)]);
      }
      refs.push_back(relation_reference(e.predicate, hs_val, ht_val, mcfg.P));
    }
    std::vector<RelationSlotDesc> descs(static_cast<size_t>(s_r));
    for (int k = 0; k < s_r; ++k) {
      descs[static_cast<size_t>(k)].predicate_dist =
          detail::softmax_values(detail::row_values(tape, rel_slots[k].predicate_logits, row));
      descs[static_cast<size_t>(k)].src_emb =
          detail::row_values(tape, rel_slots[k].source_embedding, row);
      descs[static_cast<size_t>(k)].tgt_emb =
          detail::row_values(tape, rel_slots[k].target_embedding, row);
    }
    SlotAssignment sa = match_relation_slots(pixel, refs, descs);
    result.relation_assignments.push_back(sa);

    for (const auto& [g, slot] : sa.pairs) {
      rel_slot_full[static_cast<size_t>(slot)][static_cast<size_t>(row)] = 1;
      const auto& e = graph.edges[static_cast<size_t>(eidx[static_cast<size_t>(g)])];
      auto prd = detail::ce_single(rel_slots[slot].predicate_logits, row, e.predicate);
      pred_acc = pred_acc.valid() ? add(pred_acc, sum_all(prd)) : sum_all(prd);
      references[static_cast<size_t>(e.source)].push_back(
          select_row(rel_slots[slot].source_embedding, row));
      references[static_cast<size_t>(e.target)].push_back(
          select_row(rel_slots[slot].target_embedding, row));
      ++n_matched_rel;
    }
  }

  // --- relation slot scores ---
  ad::Var<T> score_rel_acc{};
  if (!edge_pixels.empty()) {
    for (int k = 0; k < s_r; ++k) {
      auto targets = ad::Tensor<T>::zeros({static_cast<int>(edge_pixels.size()), 1});
      for (size_t r = 0; r < edge_pixels.size(); ++r) {
        if (rel_slot_full[static_cast<size_t>(k)][r]) targets[r] = T(1);
      }
      auto term = sum_all(bce_logits(rel_slots[k].score_logits, targets));
      score_rel_acc = score_rel_acc.valid() ? add(score_rel_acc, term) : term;
    }
  }

  // --- associative embedding losses over all ground-truth vertices ---
  std::vector<ad::Var<T>> embeddings;
  std::vector<std::vector<ad::Var<T>>> refs_per_vertex;
  for (size_t i = 0; i < graph.vertices.size(); ++i) {
    if (!vertex_embedding[i].valid()) fail("build_losses: vertex missing matched embedding");
    embeddings.push_back(vertex_embedding[i]);
    refs_per_vertex.push_back(references[i]);
  }
  std::vector<ad::Var<T>> pull_side = embeddings;
  if (!scfg.pull_grad_to_vertex) {
    for (auto& h : pull_side) h = tape.constant(tape.val(h));
  }
  auto pull = pull_loss(tape, pull_side, refs_per_vertex);
  auto push = push_loss(tape, embeddings, mcfg.m);

  // --- heatmaps ---
  auto heat_v = heatmap_loss(tape, vertex_logit_map, vertex_pixels, scfg.neg_ratio,
                             scfg.empty_negatives, rng);
  auto heat_e = heatmap_loss(tape, edge_logit_map, edge_pixels, scfg.neg_ratio,
                             scfg.empty_negatives, rng);

  // --- normalize and combine (all components weighted equally) ---
  auto zero = detail::zero_scalar(tape);
  auto mean_or_zero = [&](ad::Var<T> acc, int count) {
    return (acc.valid() && count > 0) ? mul_scalar(acc, 1.0 / count) : zero;
  };
  auto class_obj = mean_or_zero(class_acc, n_matched_obj);
  auto anchor = mean_or_zero(anchor_acc, n_matched_obj);
  auto box_offset = mean_or_zero(box_acc, n_matched_obj);
  auto predicate = mean_or_zero(pred_acc, n_matched_rel);
  auto score_obj = mean_or_zero(score_obj_acc, s_o * static_cast<int>(vertex_pixels.size()));
  auto score_rel = mean_or_zero(score_rel_acc, s_r * static_cast<int>(edge_pixels.size()));

  auto total = heat_v;
  for (auto v : {heat_e, pull, push, class_obj, anchor, box_offset, predicate, score_obj,
                 score_rel}) {
    total = add(total, v);
  }
  result.total = total;

  auto scalar_of = [&](ad::Var<T> v) { return static_cast<double>(tape.val(v)[0]); };
  result.bundle.heatmap_v = scalar_of(heat_v);
  result.bundle.heatmap_e = scalar_of(heat_e);
  result.bundle.pull = scalar_of(pull);
  result.bundle.push = scalar_of(push);
  result.bundle.class_obj = scalar_of(class_obj);
  result.bundle.anchor = scalar_of(anchor);
  result.bundle.box_offset = scalar_of(box_offset);
  result.bundle.predicate = scalar_of(predicate);
  result.bundle.score_obj = scalar_of(score_obj);
  result.bundle.score_rel = scalar_of(score_rel);
  result.bundle.total = scalar_of(total);
  return result;
}

/// Occupied-pixel maps for a scene graph.
inline void group_by_pixel(const scene::SceneGraph& g, std::map<Pixel, std::vector<int>>* v_at,
                           std::map<Pixel, std::vector<int>>* e_at) {
  for (size_t i = 0; i < g.vertices.size(); ++i) {
    (*v_at)[g.vertices[i].grounding].push_back(static_cast<int>(i));
  }
  for (size_t i = 0; i < g.edges.size(); ++i) {
    (*e_at)[g.edges[i].grounding].push_back(static_cast<int>(i));
  }
}

/// Convenience wrapper: gathers features at the occupied pixels, runs every
/// slot head there, and delegates to build_losses.
template <typename T>
ImageLoss<T> build_image_loss(ad::Tape<T>& tape, model::Model<T>& mdl,
                              typename model::Model<T>::Trunk& trunk,
                              const scene::SceneGraph& graph, const SupervisionConfig& scfg,
                              Rng& rng, bool record_grads) {
  std::map<Pixel, std::vector<int>> vertices_at, edges_at;
  group_by_pixel(graph, &vertices_at, &edges_at);
  std::vector<Pixel> vertex_pixels, edge_pixels;
  for (const auto& [p, _] : vertices_at) vertex_pixels.push_back(p);
  for (const auto& [p, _] : edges_at) edge_pixels.push_back(p);

  std::vector<ObjectSlotMats<T>> obj_slots;
  std::vector<RelationSlotMats<T>> rel_slots;
  if (!vertex_pixels.empty()) {
    auto rows = gather_pixels(trunk.feat, vertex_pixels);
    for (int j = 0; j < mdl.cfg.s_o; ++j) {
      auto h = mdl.object_head(tape, rows, j, record_grads);
      obj_slots.push_back(ObjectSlotMats<T>{h.class_logits, h.anchor_logits, h.box_offsets,
                                            h.embedding, h.score_logits});
    }
  }
  if (!edge_pixels.empty()) {
    auto rows = gather_pixels(trunk.feat, edge_pixels);
    for (int k = 0; k < mdl.cfg.s_r; ++k) {
      auto h = mdl.relation_head(tape, rows, k, record_grads);
      rel_slots.push_back(RelationSlotMats<T>{h.predicate_logits, h.source_embedding,
                                              h.target_embedding, h.score_logits});
    }
  }
  return build_losses(tape, trunk.vertex_logits, trunk.edge_logits, obj_slots, rel_slots,
                      vertex_pixels, edge_pixels, vertices_at, edges_at, graph, mdl.cfg, scfg,
                      rng);
}

}  // namespace px2graph::sup
