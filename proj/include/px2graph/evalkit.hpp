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

// Evaluation protocol: Recall@k over subject-predicate-object tuples with
// 0.5 IoU box matching, the SGGen / SGCls / PredCls task settings, the
// per-predicate recall breakdown, and the relation slot-usage histogram.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "px2graph/common.hpp"
#include "px2graph/decoder.hpp"
#include "px2graph/model.hpp"
#include "px2graph/scenegen.hpp"

namespace px2graph::eval {

/// Intersection over union; degenerate boxes count as a warning and score 0.
inline double iou(const Box& a, const Box& b, long* zero_area_warnings = nullptr) {
  if (a.area() <= 0.0 || b.area() <= 0.0) {
    if (zero_area_warnings) ++(*zero_area_warnings);
    return 0.0;
  }
  const double inter = intersection_area(a, b);
  return inter / (a.area() + b.area() - inter);
}

enum class TaskSetting { SGGen, SGCls, PredCls };

inline const char* setting_name(TaskSetting s) {
  switch (s) {
    case TaskSetting::SGGen: return "sggen";
    case TaskSetting::SGCls: return "sgcls";
    default: return "predcls";
  }
}

inline TaskSetting setting_from_name(const std::string& s) {
  if (s == "sggen") return TaskSetting::SGGen;
  if (s == "sgcls") return TaskSetting::SGCls;
  if (s == "predcls") return TaskSetting::PredCls;
  fail("unknown task setting '" + s + "' (expected sggen|sgcls|predcls)");
}

struct GtTuple {
  int src_cat = 0;
  Box src_box;
  int predicate = 0;
  int tgt_cat = 0;
  Box tgt_box;
};

struct TupleProposal {
  int src_cat = 0;
  Box src_box;
  int predicate = 0;
  int tgt_cat = 0;
  Box tgt_box;
  double score = 0.0;
};

inline std::vector<GtTuple> gt_tuples(const scene::SceneGraph& g) {
  std::vector<GtTuple> out;
  for (const auto& e : g.edges) {
    const auto& s = g.vertices[static_cast<size_t>(e.source)];
    const auto& t = g.vertices[static_cast<size_t>(e.target)];
    out.push_back(GtTuple{s.category, s.box, e.predicate, t.category, t.box});
  }
  return out;
}

/// Greedy matching in rank order over the top-k proposals. A proposal matches
/// the first still-unconsumed ground-truth tuple whose three labels are equal
/// and whose boxes both clear the IoU threshold. Returns per-gt matched flags.
inline std::vector<char> match_tuples(const std::vector<TupleProposal>& ranked,
                                      const std::vector<GtTuple>& gt, double iou_t, int k,
                                      long* zero_area_warnings = nullptr) {
  std::vector<char> matched(gt.size(), 0);
  const int limit = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int r = 0; r < limit; ++r) {
    const auto& p = ranked[static_cast<size_t>(r)];
    for (size_t g = 0; g < gt.size(); ++g) {
      if (matched[g]) continue;
      const auto& t = gt[g];
      if (p.src_cat != t.src_cat || p.tgt_cat != t.tgt_cat || p.predicate != t.predicate) {
        continue;
      }
      if (iou(p.src_box, t.src_box, zero_area_warnings) < iou_t) continue;
      if (iou(p.tgt_box, t.tgt_box, zero_area_warnings) < iou_t) continue;
      matched[g] = 1;
      break;
    }
  }
  return matched;
}

inline int matched_count(const std::vector<char>& flags) {
  int n = 0;
  for (char f : flags) n += f ? 1 : 0;
  return n;
}

struct PerImageResult {
  int index = 0;
  int gt = 0;
  std::map<int, int> matched_at_k;
};

/// Dataset recall: total matched at k over total ground truth. Undefined
/// (absent) when the set carries no ground-truth tuples.
inline std::optional<double> recall_at_k(const std::vector<PerImageResult>& results, int k) {
  long total_gt = 0, total_matched = 0;
  for (const auto& r : results) {
    total_gt += r.gt;
    auto it = r.matched_at_k.find(k);
    if (it != r.matched_at_k.end()) total_matched += it->second;
  }
  if (total_gt == 0) return std::nullopt;
  return static_cast<double>(total_matched) / static_cast<double>(total_gt);
}

struct EvalReport {
  std::string setting;
  std::vector<int> ks;
  std::map<int, std::optional<double>> recall;      // k -> recall
  int per_predicate_k = 0;                          // k used for the breakdown
  std::map<int, std::pair<long, long>> per_predicate;  // predicate -> (matched, gt)
  std::vector<std::vector<long>> slot_histogram;    // [predicate][slot]
  long images = 0, gt_tuples = 0, proposals = 0;
  long dropped_edges = 0, zero_area_warnings = 0;
  long linking_eligible = 0, linking_correct = 0;
  std::vector<PerImageResult> per_image;
  nlohmann::json metadata;
};

// ---------------------------------------------------------------------------
// Task settings
// ---------------------------------------------------------------------------

/// Prior input for a setting: SGGen feeds nothing, SGCls the ground-truth
/// boxes grouped by anchor, PredCls the boxes grouped by class.
template <typename T>
std::optional<ad::Tensor<T>> setting_prior(TaskSetting setting, const scene::SceneGraph& g,
                                           const scene::PriorLayout& layout) {
  if (setting == TaskSetting::SGGen) return std::nullopt;
  std::vector<scene::PriorBox> boxes;
  for (const auto& v : g.vertices) {
    boxes.push_back(scene::PriorBox{v.box, setting == TaskSetting::PredCls ? v.category : -1});
  }
  return scene::encode_prior_detections<T>(boxes, layout);
}

/// SGCls/PredCls decode override: every detected vertex adopts the provided
/// box with the highest IoU against its decoded box (and that box's class,
/// for PredCls). Ties and all-zero overlaps resolve to the lowest index.
template <typename T>
void override_vertices(decode::PredictedGraph<T>* graph, const scene::SceneGraph& gt,
                       TaskSetting setting) {
  if (setting == TaskSetting::SGGen || gt.vertices.empty()) return;
  for (auto& v : graph->vertices) {
    int best = 0;
    double best_iou = -1.0;
    for (size_t i = 0; i < gt.vertices.size(); ++i) {
      const double o = iou(v.box, gt.vertices[i].box);
      if (o > best_iou) {
        best_iou = o;
        best = static_cast<int>(i);
      }
    }
    v.box = gt.vertices[static_cast<size_t>(best)].box;
    if (setting == TaskSetting::PredCls) {
      v.category = gt.vertices[static_cast<size_t>(best)].category;
    }
  }
}

template <typename T>
std::vector<TupleProposal> ranked_proposals(const decode::PredictedGraph<T>& g) {
  std::vector<TupleProposal> out;
  for (const auto& t : g.ranking) {
    const auto& s = g.vertices[static_cast<size_t>(t.source)];
    const auto& o = g.vertices[static_cast<size_t>(t.target)];
    out.push_back(TupleProposal{s.category, s.box, t.predicate, o.category, o.box, t.score});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full protocol
// ---------------------------------------------------------------------------

struct EvalItem {
  scene::RasterImage image;
  scene::SceneGraph graph;
};

/// Everything one image contributes to the report; reduced in index order.
struct ImageEval {
  PerImageResult pr;
  std::vector<std::vector<long>> slot_histogram;
  std::map<int, std::pair<long, long>> per_predicate;
  long proposals = 0, dropped_edges = 0, zero_area_warnings = 0;
  long linking_eligible = 0, linking_correct = 0;
};

template <typename T>
ImageEval evaluate_image(model::Model<T>& mdl, const EvalItem& item, TaskSetting setting,
                         const std::vector<int>& ks, const decode::DecodeConfig& dcfg,
                         const scene::PriorLayout& layout, int index) {
  ImageEval ev;
  ev.slot_histogram.assign(static_cast<size_t>(mdl.cfg.P),
                           std::vector<long>(static_cast<size_t>(mdl.cfg.s_r), 0));
  auto image = ad::Tensor<T>::from({item.image.height, item.image.width, 3},
                                   std::vector<T>(item.image.data.begin(), item.image.data.end()));
  auto prior = setting_prior<T>(setting, item.graph, layout);
  auto outputs = mdl.forward(image, prior ? &*prior : nullptr);
  auto graph = decode::decode_graph(outputs, mdl.cfg, dcfg);
  ev.dropped_edges = graph.dropped_edges;

  // Slot-usage histogram over every decoded relation detection.
  for (const auto& e : graph.edges) {
    ++ev.slot_histogram[static_cast<size_t>(e.predicate)][static_cast<size_t>(e.slot)];
  }

  // Embedding-linking audit against ground truth at matching pixels.
  for (const auto& e : graph.edges) {
    bool eligible = false, correct = false;
    for (const auto& ge : item.graph.edges) {
      if (ge.grounding != e.pixel || ge.predicate != e.predicate) continue;
      eligible = true;
      const auto& src = graph.vertices[static_cast<size_t>(e.resolved_source)];
      const auto& tgt = graph.vertices[static_cast<size_t>(e.resolved_target)];
      if (src.pixel == item.graph.vertices[static_cast<size_t>(ge.source)].grounding &&
          tgt.pixel == item.graph.vertices[static_cast<size_t>(ge.target)].grounding) {
        correct = true;
        break;
      }
    }
    if (eligible) {
      ++ev.linking_eligible;
      if (correct) ++ev.linking_correct;
    }
  }

  override_vertices(&graph, item.graph, setting);
  const auto proposals = ranked_proposals(graph);
  const auto gts = gt_tuples(item.graph);
  ev.proposals = static_cast<long>(proposals.size());

  ev.pr.index = index;
  ev.pr.gt = static_cast<int>(gts.size());
  const int kmax = ks.back();
  for (int k : ks) {
    const auto flags = match_tuples(proposals, gts, 0.5, k, &ev.zero_area_warnings);
    ev.pr.matched_at_k[k] = matched_count(flags);
    if (k == kmax) {
      for (size_t g = 0; g < gts.size(); ++g) {
        auto& [m, n] = ev.per_predicate[gts[g].predicate];
        ++n;
        if (flags[g]) ++m;
      }
    }
  }
  return ev;
}

template <typename T>
EvalReport run_setting(model::Model<T>& mdl, const std::vector<EvalItem>& dataset,
                       TaskSetting setting, std::vector<int> ks,
                       const decode::DecodeConfig& dcfg, int threads = 1) {
  if (ks.empty()) fail("run_setting: no k values");
  std::sort(ks.begin(), ks.end());
  scene::PriorLayout layout;
  layout.out_size = mdl.cfg.output_size;
  layout.stride = mdl.cfg.stride;
  layout.categories = mdl.cfg.C;
  layout.anchors = mdl.cfg.anchor_shapes;

  EvalReport rep;
  rep.setting = setting_name(setting);
  rep.ks = ks;
  rep.per_predicate_k = ks.back();
  rep.slot_histogram.assign(static_cast<size_t>(mdl.cfg.P),
                            std::vector<long>(static_cast<size_t>(mdl.cfg.s_r), 0));
  std::map<int, std::pair<long, long>> per_pred;
  for (int p = 0; p < mdl.cfg.P; ++p) per_pred[p] = {0, 0};

  // Per-image evaluation is pure; fan out, then reduce in index order.
  std::vector<ImageEval> evals(dataset.size());
  parallel_for(static_cast<int>(dataset.size()), threads, [&](int i) {
    evals[static_cast<size_t>(i)] = evaluate_image(mdl, dataset[static_cast<size_t>(i)], setting,
                                                   ks, dcfg, layout, i);
  });

  for (const auto& ev : evals) {
    rep.per_image.push_back(ev.pr);
    rep.gt_tuples += ev.pr.gt;
    rep.proposals += ev.proposals;
    rep.dropped_edges += ev.dropped_edges;
    rep.zero_area_warnings += ev.zero_area_warnings;
    rep.linking_eligible += ev.linking_eligible;
    rep.linking_correct += ev.linking_correct;
    for (size_t p = 0; p < ev.slot_histogram.size(); ++p) {
      for (size_t s = 0; s < ev.slot_histogram[p].size(); ++s) {
        rep.slot_histogram[p][s] += ev.slot_histogram[p][s];
      }
    }
    for (const auto& [p, mn] : ev.per_predicate) {
      per_pred[p].first += mn.first;
      per_pred[p].second += mn.second;
    }
  }
  rep.images = static_cast<long>(dataset.size());

  rep.per_predicate = per_pred;
  for (int k : ks) rep.recall[k] = recall_at_k(rep.per_image, k);
  rep.metadata = {{"heatmap_t", dcfg.heatmap_t},
                  {"slot_t", dcfg.slot_t},
                  {"tuple_score", dcfg.tuple_score == decode::DecodeConfig::TupleScore::product
                                      ? "product"
                                      : "edge_only"},
                  {"iou_threshold", 0.5},
                  {"override_rule",
                   setting == TaskSetting::SGGen
                       ? "none"
                       : (setting == TaskSetting::SGCls ? "iou-best provided box"
                                                        : "iou-best provided box and class")}};
  return rep;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["setting"] = r.setting;
  j["k"] = r.ks;
  j["recall"] = nlohmann::json::object();
  for (const auto& [k, v] : r.recall) {
    if (v) {
      j["recall"][std::to_string(k)] = *v;
    } else {
      j["recall"][std::to_string(k)] = nullptr;
    }
  }
  j["per_predicate_k"] = r.per_predicate_k;
  j["per_predicate"] = nlohmann::json::object();
  for (const auto& [p, mn] : r.per_predicate) {
    const auto& [m, n] = mn;
    nlohmann::json e = {{"matched", m}, {"gt", n}};
    if (n > 0) {
      e["recall"] = static_cast<double>(m) / static_cast<double>(n);
    } else {
      e["recall"] = nullptr;
    }
    j["per_predicate"][scene::predicate_name(p)] = e;
  }
  j["slot_histogram"] = r.slot_histogram;
  j["counts"] = {{"images", r.images},
                 {"gt_tuples", r.gt_tuples},
                 {"proposals", r.proposals},
                 {"dropped_edges", r.dropped_edges},
                 {"zero_area_warnings", r.zero_area_warnings}};
  j["linking"] = {{"eligible", r.linking_eligible},
                  {"correct", r.linking_correct},
                  {"rate", r.linking_eligible > 0
                               ? nlohmann::json(static_cast<double>(r.linking_correct) /
                                                static_cast<double>(r.linking_eligible))
                               : nlohmann::json(nullptr)}};
  j["per_image"] = nlohmann::json::array();
  for (const auto& pr : r.per_image) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [k, c] : pr.matched_at_k) m[std::to_string(k)] = c;
    j["per_image"].push_back({{"index", pr.index}, {"gt", pr.gt}, {"matched", m}});
  }
  j["metadata"] = r.metadata;
  return j;
}

inline std::string report_to_text(const EvalReport& r) {
  std::ostringstream os;
  os << "setting: " << r.setting << "   images: " << r.images << "   gt tuples: " << r.gt_tuples
     << "\n";
  os << std::fixed << std::setprecision(4);
  for (int k : r.ks) {
    os << "  R@" << k << ": ";
    const auto& v = r.recall.at(k);
    if (v) {
      os << *v;
    } else {
      os << "n/a";
    }
    os << "\n";
  }
  os << "per-predicate recall (R@" << r.per_predicate_k << "):\n";
  for (const auto& [p, mn] : r.per_predicate) {
    const auto& [m, n] = mn;
    os << "  " << std::setw(14) << std::left << scene::predicate_name(p) << std::right << " ";
    if (n > 0) {
      os << std::setw(8) << static_cast<double>(m) / static_cast<double>(n) << "  (" << m << "/"
         << n << ")";
    } else {
      os << "     n/a  (0 gt)";
    }
    os << "\n";
  }
  os << "relation slot usage (rows: predicates):\n";
  for (size_t p = 0; p < r.slot_histogram.size(); ++p) {
    os << "  " << std::setw(14) << std::left << scene::predicate_name(static_cast<int>(p))
       << std::right;
    for (long c : r.slot_histogram[p]) os << " " << std::setw(6) << c;
    os << "\n";
  }
  if (r.linking_eligible > 0) {
    os << "edge linking: " << r.linking_correct << "/" << r.linking_eligible << " = "
       << static_cast<double>(r.linking_correct) / static_cast<double>(r.linking_eligible) << "\n";
  }
  return os.str();
}

inline std::string slot_histogram_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "predicate,slot,count\n";
  for (size_t p = 0; p < r.slot_histogram.size(); ++p) {
    for (size_t s = 0; s < r.slot_histogram[p].size(); ++s) {
      os << scene::predicate_name(static_cast<int>(p)) << "," << s << ","
         << r.slot_histogram[p][s] << "\n";
    }
  }
  return os.str();
}

}  // namespace px2graph::eval
