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

// Hourglass-style encoder-decoder over the input image producing a per-pixel
// feature map at output resolution, heatmap heads for vertices and edges, and
// independent per-slot property heads (one hidden layer of f units each, no
// weight sharing across slots).

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "px2graph/autodiff.hpp"
#include "px2graph/common.hpp"
#include "px2graph/io.hpp"
#include "px2graph/rng.hpp"

namespace px2graph::model {

struct ModelConfig {
  int input_size = 128;
  int output_size = 32;
  int stride = 4;
  int f = 64;  // per-pixel feature length
  int d = 8;   // embedding dimension
  double m = 8.0;  // push-loss margin
  int s_o = 3;
  int s_r = 6;
  int C = 9;  // object categories
  int P = 6;  // predicates
  int A = 5;  // anchors
  std::vector<std::pair<double, double>> anchor_shapes = {
      {10, 10}, {16, 16}, {22, 22}, {30, 30}, {42, 42}};
  int hourglass_depth = 3;
  int prior_input_channels = 0;  // 0 disables the prior-detection input path

  int stem_stages() const {
    int s = stride, n = 0;
    while (s > 1) {
      s /= 2;
      ++n;
    }
    return n;
  }

  void validate() const {
    if (output_size * stride != input_size) fail("ModelConfig: output_size*stride != input_size");
    if ((stride & (stride - 1)) != 0 || stride < 2) fail("ModelConfig: stride must be a power of 2");
    if (d < 1 || m <= 0 || s_o < 1 || s_r < 1) fail("ModelConfig: d>=1, m>0, s_o>=1, s_r>=1");
    if (f % 4 != 0) fail("ModelConfig: f must divide by 4");
    if (static_cast<int>(anchor_shapes.size()) != A) fail("ModelConfig: anchor_shapes size != A");
    if (hourglass_depth < 1 || output_size % (1 << hourglass_depth) != 0) {
      fail("ModelConfig: output_size must divide by 2^hourglass_depth");
    }
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["input_size"] = c.input_size;
  j["output_size"] = c.output_size;
  j["stride"] = c.stride;
  j["f"] = c.f;
  j["d"] = c.d;
  j["m"] = c.m;
  j["s_o"] = c.s_o;
  j["s_r"] = c.s_r;
  j["C"] = c.C;
  j["P"] = c.P;
  j["A"] = c.A;
  j["anchor_shapes"] = nlohmann::json::array();
  for (const auto& [w, h] : c.anchor_shapes) j["anchor_shapes"].push_back({w, h});
  j["hourglass_depth"] = c.hourglass_depth;
  j["prior_input_channels"] = c.prior_input_channels;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_size = j.at("input_size").get<int>();
  c.output_size = j.at("output_size").get<int>();
  c.stride = j.at("stride").get<int>();
  c.f = j.at("f").get<int>();
  c.d = j.at("d").get<int>();
  c.m = j.at("m").get<double>();
  c.s_o = j.at("s_o").get<int>();
  c.s_r = j.at("s_r").get<int>();
  c.C = j.at("C").get<int>();
  c.P = j.at("P").get<int>();
  c.A = j.at("A").get<int>();
  c.anchor_shapes.clear();
  for (const auto& a : j.at("anchor_shapes")) {
    c.anchor_shapes.emplace_back(a.at(0).get<double>(), a.at(1).get<double>());
  }
  c.hourglass_depth = j.at("hourglass_depth").get<int>();
  c.prior_input_channels = j.at("prior_input_channels").get<int>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Anchor-relative box parameterization
// ---------------------------------------------------------------------------

/// (t_x, t_y): center offset from the cell center in cell units;
/// (t_w, t_h): log size ratio against the anchor shape.
inline std::array<double, 4> box_to_offsets(const Box& b, Pixel g, int stride,
                                            std::pair<double, double> anchor) {
  return {b.cx() / stride - g.x - 0.5, b.cy() / stride - g.y - 0.5,
          std::log(b.width() / anchor.first), std::log(b.height() / anchor.second)};
}

inline Box offsets_to_box(const std::array<double, 4>& t, Pixel g, int stride,
                          std::pair<double, double> anchor) {
  const double cx = (g.x + 0.5 + t[0]) * stride;
  const double cy = (g.y + 0.5 + t[1]) * stride;
  const double w = anchor.first * std::exp(t[2]);
  const double h = anchor.second * std::exp(t[3]);
  return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

// ---------------------------------------------------------------------------
// Dense outputs
// ---------------------------------------------------------------------------

template <typename T>
struct ModelOutputs {
  ad::Tensor<T> vertex_heatmap;  // [S,S], sigmoid
  ad::Tensor<T> edge_heatmap;    // [S,S], sigmoid
  std::vector<ad::Tensor<T>> class_logits;    // s_o x [S,S,C]
  std::vector<ad::Tensor<T>> anchor_logits;   // s_o x [S,S,A]
  std::vector<ad::Tensor<T>> box_offsets;     // s_o x [S,S,4]
  std::vector<ad::Tensor<T>> embedding;       // s_o x [S,S,d]
  std::vector<ad::Tensor<T>> object_score;    // s_o x [S,S], sigmoid
  std::vector<ad::Tensor<T>> predicate_logits;   // s_r x [S,S,P]
  std::vector<ad::Tensor<T>> source_embedding;   // s_r x [S,S,d]
  std::vector<ad::Tensor<T>> target_embedding;   // s_r x [S,S,d]
  std::vector<ad::Tensor<T>> relation_score;     // s_r x [S,S], sigmoid
};

/// Softmaxed per-slot predictions at one pixel.
template <typename T>
struct ObjectSlotPrediction {
  std::vector<T> class_dist, anchor_dist, offsets, embedding;
  T score = T(0);
};

template <typename T>
struct RelationSlotPrediction {
  std::vector<T> predicate_dist, source_embedding, target_embedding;
  T score = T(0);
};

template <typename T>
struct PixelBundle {
  std::vector<ObjectSlotPrediction<T>> objects;
  std::vector<RelationSlotPrediction<T>> relations;
};

namespace detail {

template <typename T>
std::vector<T> softmax_vec(const T* z, int n) {
  std::vector<T> y(static_cast<size_t>(n));
  T zmax = z[0];
  for (int i = 1; i < n; ++i) zmax = std::max(zmax, z[i]);
  T denom = T(0);
  for (int i = 0; i < n; ++i) {
    y[static_cast<size_t>(i)] = std::exp(z[i] - zmax);
    denom += y[static_cast<size_t>(i)];
  }
  for (int i = 0; i < n; ++i) y[static_cast<size_t>(i)] /= denom;
  return y;
}

template <typename T>
std::vector<T> slice_pixel(const ad::Tensor<T>& t, int x, int y) {
  const int c = t.rank() == 3 ? t.dim(2) : 1;
  const int w = t.dim(1);
  std::vector<T> out(static_cast<size_t>(c));
  const T* src = t.ptr() + (static_cast<size_t>(y) * w + x) * c;
  std::copy_n(src, c, out.begin());
  return out;
}

}  // namespace detail

template <typename T>
PixelBundle<T> extract_slot_predictions(const ModelOutputs<T>& out, const ModelConfig& cfg, int x,
                                        int y) {
  if (x < 0 || x >= cfg.output_size || y < 0 || y >= cfg.output_size) {
    fail("extract_slot_predictions: pixel (" + std::to_string(x) + "," + std::to_string(y) +
         ") outside output resolution");
  }
  PixelBundle<T> b;
  for (int j = 0; j < cfg.s_o; ++j) {
    ObjectSlotPrediction<T> o;
    auto cls = detail::slice_pixel(out.class_logits[j], x, y);
    auto anc = detail::slice_pixel(out.anchor_logits[j], x, y);
    o.class_dist = detail::softmax_vec(cls.data(), cfg.C);
    o.anchor_dist = detail::softmax_vec(anc.data(), cfg.A);
    o.offsets = detail::slice_pixel(out.box_offsets[j], x, y);
    o.embedding = detail::slice_pixel(out.embedding[j], x, y);
    o.score = detail::slice_pixel(out.object_score[j], x, y)[0];
    b.objects.push_back(std::move(o));
  }
  for (int k = 0; k < cfg.s_r; ++k) {
    RelationSlotPrediction<T> r;
    auto prd = detail::slice_pixel(out.predicate_logits[k], x, y);
    r.predicate_dist = detail::softmax_vec(prd.data(), cfg.P);
    r.source_embedding = detail::slice_pixel(out.source_embedding[k], x, y);
    r.target_embedding = detail::slice_pixel(out.target_embedding[k], x, y);
    r.score = detail::slice_pixel(out.relation_score[k], x, y)[0];
    b.relations.push_back(std::move(r));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
class Model {
 public:
  ModelConfig cfg;
  ad::ParamStore<T> params;

  static Model build(ModelConfig config, uint64_t seed) {
    config.validate();
    Model mdl;
    mdl.cfg = config;
    Rng rng(mix_seed(seed, 0x90de1u));
    const auto& c = mdl.cfg;

    auto conv_init = [&](const std::string& name, int kh, int kw, int cin, int cout,
                         double gain) {
      auto w = ad::Tensor<T>::zeros({kh, kw, cin, cout});
      const double stddev = std::sqrt(gain / (kh * kw * cin));
      for (size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, stddev));
      mdl.params.add(name + ".w", w);
      mdl.params.add(name + ".b", ad::Tensor<T>::zeros({cout}));
    };
    auto linear_init = [&](const std::string& name, int k, int m, double gain) {
      auto w = ad::Tensor<T>::zeros({k, m});
      const double stddev = std::sqrt(gain / k);
      for (size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, stddev));
      mdl.params.add(name + ".w", w);
      mdl.params.add(name + ".b", ad::Tensor<T>::zeros({m}));
    };
    auto head_init = [&](const std::string& name, int out_dim) {
      linear_init(name + ".h", c.f, c.f, 2.0);
      linear_init(name + ".out", c.f, out_dim, 1.0);
    };

    int ch = 3;
    for (int s = 1; s <= c.stem_stages(); ++s) {
      const int next = c.f >> (c.stem_stages() - s + 1);
      conv_init("stem.down" + std::to_string(s), 3, 3, ch, next, 2.0);
      ch = next;
    }
    conv_init("stem.out", 3, 3, ch, c.f, 2.0);

    if (c.prior_input_channels > 0) {
      conv_init("prior.remap1", 1, 1, c.prior_input_channels, c.f, 2.0);
      // Zeroed at build so an absent or empty prior input is a no-op.
      mdl.params.add("prior.remap2.w", ad::Tensor<T>::zeros({1, 1, c.f, c.f}));
      mdl.params.add("prior.remap2.b", ad::Tensor<T>::zeros({c.f}));
    }

    for (int l = 1; l <= c.hourglass_depth; ++l) {
      conv_init("hg.down" + std::to_string(l), 3, 3, c.f, c.f, 2.0);
    }
    conv_init("hg.bottom1", 3, 3, c.f, c.f, 2.0);
    conv_init("hg.bottom2", 3, 3, c.f, c.f, 2.0);
    for (int l = c.hourglass_depth; l >= 1; --l) {
      conv_init("hg.up" + std::to_string(l), 3, 3, c.f, c.f, 2.0);
    }

    conv_init("heat.vertex", 1, 1, c.f, 1, 1.0);
    conv_init("heat.edge", 1, 1, c.f, 1, 1.0);

    for (int j = 0; j < c.s_o; ++j) {
      const std::string base = "obj" + std::to_string(j);
      head_init(base + ".class", c.C);
      head_init(base + ".anchor", c.A);
      head_init(base + ".box", 4);
      head_init(base + ".embed", c.d);
      head_init(base + ".score", 1);
    }
    for (int k = 0; k < c.s_r; ++k) {
      const std::string base = "rel" + std::to_string(k);
      head_init(base + ".pred", c.P);
      head_init(base + ".src", c.d);
      head_init(base + ".tgt", c.d);
      head_init(base + ".score", 1);
    }
    return mdl;
  }

  struct Trunk {
    ad::Var<T> feat;           // [S,S,f]
    ad::Var<T> vertex_logits;  // [S,S,1]
    ad::Var<T> edge_logits;    // [S,S,1]
  };

  /// Records the trunk on the tape. `record_grads` binds parameters so that
  /// backward() accumulates; otherwise parameters enter as constants.
  Trunk trunk(ad::Tape<T>& tape, const ad::Tensor<T>& image, const ad::Tensor<T>* prior,
              bool record_grads) {
    if (image.rank() != 3 || image.dim(0) != cfg.input_size || image.dim(1) != cfg.input_size ||
        image.dim(2) != 3) {
      fail("model: image shape " + ad::shape_str(image.shape) + " does not match config input " +
           std::to_string(cfg.input_size));
    }
    auto P = [&](const std::string& name) {
      return record_grads ? tape.param(params.get(name)) : tape.constant(params.get(name).value);
    };
    auto conv_block = [&](ad::Var<T> x, const std::string& name, int stride, int pad) {
      return relu(conv2d(x, P(name + ".w"), P(name + ".b"), stride, pad));
    };

    ad::Var<T> x = tape.constant(image);
    for (int s = 1; s <= cfg.stem_stages(); ++s) {
      x = conv_block(x, "stem.down" + std::to_string(s), 2, 1);
    }
    x = conv_block(x, "stem.out", 1, 1);

    if (cfg.prior_input_channels > 0) {
      ad::Tensor<T> prior_in = prior
          ? *prior
          : ad::Tensor<T>::zeros({cfg.output_size, cfg.output_size, cfg.prior_input_channels});
      if (prior_in.rank() != 3 || prior_in.dim(0) != cfg.output_size ||
          prior_in.dim(1) != cfg.output_size || prior_in.dim(2) != cfg.prior_input_channels) {
        fail("model: prior shape " + ad::shape_str(prior_in.shape) + " does not match config");
      }
      auto p = conv_block(tape.constant(prior_in), "prior.remap1", 1, 0);
      auto remapped = conv2d(p, P("prior.remap2.w"), P("prior.remap2.b"), 1, 0);
      x = add(x, remapped);
    } else if (prior) {
      fail("model: prior input given but prior_input_channels == 0");
    }

    std::vector<ad::Var<T>> skips;
    for (int l = 1; l <= cfg.hourglass_depth; ++l) {
      x = conv_block(x, "hg.down" + std::to_string(l), 1, 1);
      skips.push_back(x);
      x = maxpool2(x);
    }
    x = conv_block(x, "hg.bottom1", 1, 1);
    x = conv_block(x, "hg.bottom2", 1, 1);
    for (int l = cfg.hourglass_depth; l >= 1; --l) {
      x = add(upsample2(x), skips[static_cast<size_t>(l - 1)]);
      x = conv_block(x, "hg.up" + std::to_string(l), 1, 1);
    }

    Trunk t;
    t.feat = x;
    t.vertex_logits = conv2d(x, P("heat.vertex.w"), P("heat.vertex.b"), 1, 0);
    t.edge_logits = conv2d(x, P("heat.edge.w"), P("heat.edge.b"), 1, 0);
    return t;
  }

  struct ObjectSlotVars {
    ad::Var<T> class_logits;   // [n,C]
    ad::Var<T> anchor_logits;  // [n,A]
    ad::Var<T> box_offsets;    // [n,4]
    ad::Var<T> embedding;      // [n,d]
    ad::Var<T> score_logits;   // [n,1]
  };

  struct RelationSlotVars {
    ad::Var<T> predicate_logits;  // [n,P]
    ad::Var<T> source_embedding;  // [n,d]
    ad::Var<T> target_embedding;  // [n,d]
    ad::Var<T> score_logits;      // [n,1]
  };

  ObjectSlotVars object_head(ad::Tape<T>& tape, ad::Var<T> rows, int slot, bool record_grads) {
    const std::string base = "obj" + std::to_string(slot);
    ObjectSlotVars v;
    v.class_logits = head(tape, rows, base + ".class", record_grads);
    v.anchor_logits = head(tape, rows, base + ".anchor", record_grads);
    v.box_offsets = head(tape, rows, base + ".box", record_grads);
    v.embedding = head(tape, rows, base + ".embed", record_grads);
    v.score_logits = head(tape, rows, base + ".score", record_grads);
    return v;
  }

  RelationSlotVars relation_head(ad::Tape<T>& tape, ad::Var<T> rows, int slot,
                                 bool record_grads) {
    const std::string base = "rel" + std::to_string(slot);
    RelationSlotVars v;
    v.predicate_logits = head(tape, rows, base + ".pred", record_grads);
    v.source_embedding = head(tape, rows, base + ".src", record_grads);
    v.target_embedding = head(tape, rows, base + ".tgt", record_grads);
    v.score_logits = head(tape, rows, base + ".score", record_grads);
    return v;
  }

  /// Full dense outputs for decoding and evaluation; nothing is recorded for
  /// gradients.
  ModelOutputs<T> forward(const ad::Tensor<T>& image, const ad::Tensor<T>* prior) {
    ad::Tape<T> tape;
    const int s = cfg.output_size;
    auto tk = trunk(tape, image, prior, /*record_grads=*/false);
    auto rows = reshape(tk.feat, {s * s, cfg.f});

    ModelOutputs<T> out;
    out.vertex_heatmap = tape.val(sigmoid(tk.vertex_logits)).clone().reshaped({s, s});
    out.edge_heatmap = tape.val(sigmoid(tk.edge_logits)).clone().reshaped({s, s});
    for (int j = 0; j < cfg.s_o; ++j) {
      auto v = object_head(tape, rows, j, false);
      out.class_logits.push_back(tape.val(v.class_logits).clone().reshaped({s, s, cfg.C}));
      out.anchor_logits.push_back(tape.val(v.anchor_logits).clone().reshaped({s, s, cfg.A}));
      out.box_offsets.push_back(tape.val(v.box_offsets).clone().reshaped({s, s, 4}));
      out.embedding.push_back(tape.val(v.embedding).clone().reshaped({s, s, cfg.d}));
      out.object_score.push_back(tape.val(sigmoid(v.score_logits)).clone().reshaped({s, s}));
    }
    for (int k = 0; k < cfg.s_r; ++k) {
      auto v = relation_head(tape, rows, k, false);
      out.predicate_logits.push_back(tape.val(v.predicate_logits).clone().reshaped({s, s, cfg.P}));
      out.source_embedding.push_back(tape.val(v.source_embedding).clone().reshaped({s, s, cfg.d}));
      out.target_embedding.push_back(tape.val(v.target_embedding).clone().reshaped({s, s, cfg.d}));
      out.relation_score.push_back(tape.val(sigmoid(v.score_logits)).clone().reshaped({s, s}));
    }
    return out;
  }

  void save(const std::string& path) const {
    std::vector<ad::Tensor<float>> storage;
    storage.reserve(params.size());
    std::vector<std::pair<std::string, const ad::Tensor<float>*>> refs;
    for (size_t i = 0; i < params.size(); ++i) {
      storage.push_back(params.at(i).value.template cast<float>());
    }
    for (size_t i = 0; i < params.size(); ++i) {
      refs.emplace_back(params.at(i).name, &storage[i]);
    }
    io::write_archive(path, model_config_to_json(cfg), refs);
  }

  static Model load(const std::string& path) {
    io::Archive a = io::read_archive(path);
    Model mdl = build(model_config_from_json(a.meta), /*seed=*/0);
    if (a.tensors.size() != mdl.params.size()) {
      fail("checkpoint: parameter count mismatch in '" + path + "'");
    }
    for (auto& [name, tensor] : a.tensors) {
      auto& p = mdl.params.get(name);
      if (p.value.shape != tensor.shape) {
        fail("checkpoint: shape audit failed for '" + name + "'");
      }
      auto cast = tensor.template cast<T>();
      std::copy(cast.data->begin(), cast.data->end(), p.value.data->begin());
    }
    return mdl;
  }

 private:
  ad::Var<T> head(ad::Tape<T>& tape, ad::Var<T> rows, const std::string& name,
                  bool record_grads) {
    auto P = [&](const std::string& n) {
      return record_grads ? tape.param(params.get(n)) : tape.constant(params.get(n).value);
    };
    auto h = relu(linear(rows, P(name + ".h.w"), P(name + ".h.b")));
    return linear(h, P(name + ".out.w"), P(name + ".out.b"));
  }
};

}  // namespace px2graph::model
