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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace px2graph {

/// Axis-aligned box in input-pixel units, (x0, y0) top-left exclusive of (x1, y1).
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool well_formed() const { return x0 < x1 && y0 < y1; }
};

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

/// Integer pixel coordinate at output (heatmap) resolution.
struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Vertex grounding: box center mapped to output resolution by floor division.
inline Pixel ground_box_center(const Box& b, int stride) {
  return Pixel{static_cast<int>(std::floor(b.cx() / stride)),
               static_cast<int>(std::floor(b.cy() / stride))};
}

/// Edge grounding: floor midpoint of the two endpoint groundings.
inline Pixel ground_edge(const Pixel& src, const Pixel& tgt) {
  return Pixel{(src.x + tgt.x) / 2, (src.y + tgt.y) / 2};
}

[[noreturn]] inline void fail(const std::string& what) {
  throw std::runtime_error(what);
}

/// Fan-out parallelism cap from PX2GRAPH_THREADS; defaults to 1 so runs are
/// reproducible unless explicitly widened.
inline int env_threads() {
  const char* s = std::getenv("PX2GRAPH_THREADS");
  if (!s) return 1;
  const int n = std::atoi(s);
  return n > 0 ? n : 1;
}

/// Index-parallel map. Results must be written by index so that the caller's
/// later reduction is order-independent of the thread schedule.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (;;) {
          const int i = next.fetch_add(1);
          if (i >= n) return;
          fn(i);
        }
      } catch (...) {
        errors[static_cast<size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace px2graph
