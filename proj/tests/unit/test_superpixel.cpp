#include <doctest.h>

#include <array>
#include <queue>

#include "densemp/errors.hpp"
#include "densemp/fewshot.hpp"
#include "densemp/superpixel.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace densemp;
using namespace densemp::testing;

namespace {

bool segments_connected(const SuperpixelMap& sp) {
  const int h = sp.labels.height(), w = sp.labels.width();
  std::vector<int> seen(sp.n_segments, 0);
  Grid<std::uint8_t> visited(h, w, 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (visited(r, c)) continue;
      const int label = sp.labels(r, c);
      if (seen[label]++) return false;  // a second component with the same label
      std::queue<std::pair<int, int>> q;
      q.push({r, c});
      visited(r, c) = 1;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        const std::array<std::pair<int, int>, 4> nb{{{y + 1, x}, {y - 1, x}, {y, x + 1}, {y, x - 1}}};
        for (auto [ny, nx] : nb)
          if (ny >= 0 && ny < h && nx >= 0 && nx < w && !visited(ny, nx) && sp.labels(ny, nx) == label) {
            visited(ny, nx) = 1;
            q.push({ny, nx});
          }
      }
    }
  return true;
}

Grid<double> quantized_image(int h, int w, Rng& rng) {
  Grid<double> img(h, w);
  for (auto& v : img.values()) v = static_cast<double>(rng.index(4)) / 3.0;
  return img;
}

}  // namespace

TEST_SUITE("felzenszwalb") {
  TEST_CASE("constant image is one segment") {
    for (double k : {0.001, 0.1, 10.0}) CHECK(felzenszwalb_segment(Grid<double>(12, 9, 0.3), {k, 0.8, 1}).n_segments == 1);
  }

  TEST_CASE("two constant halves split at the boundary column") {
    Grid<double> img(10, 10, 0.2);
    for (int r = 0; r < 10; ++r)
      for (int c = 5; c < 10; ++c) img(r, c) = 0.7;
    const auto sp = felzenszwalb_segment(img, {0.01, 0.0, 1});
    REQUIRE(sp.n_segments == 2);
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 10; ++c) CHECK(sp.labels(r, c) == (c < 5 ? 0 : 1));
  }

  TEST_CASE("matches the naive edge-by-edge simulation on random 8x8 images") {
    Rng rng(2);
    for (int n = 0; n < 300; ++n) {
      const auto img = quantized_image(8, 8, rng);
      const FelzParams p{rng.uniform(0.05, 3.0), rng.bernoulli(0.5) ? 0.0 : 0.8, 1 + static_cast<int>(rng.index(6))};
      const auto got = felzenszwalb_segment(img, p);
      const auto want = oracle::canonical(oracle::felzenszwalb_naive(gaussian_smooth(img, p.sigma), p.k_scale, p.min_size));
      REQUIRE(std::vector<int>(got.labels.values().begin(), got.labels.values().end()) == want);
    }
  }

  TEST_CASE("partition, contiguity, connectivity and min size") {
    Rng rng(3);
    for (int n = 0; n < 100; ++n) {
      const auto img = random_image(16, 16, rng.next_u64());
      const FelzParams p{0.1, 0.8, 1 + static_cast<int>(rng.index(10))};
      const auto sp = felzenszwalb_segment(img, p);
      const auto sizes = sp.segment_sizes();
      REQUIRE(static_cast<int>(sizes.size()) == sp.n_segments);
      std::int64_t total = 0;
      for (auto s : sizes) {
        CHECK(s >= p.min_size);
        total += s;
      }
      CHECK(total == 256);
      CHECK(segments_connected(sp));
      // Contiguous labels numbered by first appearance.
      int next = 0;
      for (auto l : sp.labels.values()) {
        CHECK(l <= next);
        if (l == next) ++next;
      }
    }
  }

  TEST_CASE("edges sort by weight then row, col, dir") {
    Grid<double> img(2, 2, 0.0);
    const auto edges = sorted_grid_edges(img);
    REQUIRE(edges.size() == 4);
    CHECK((edges[0].row == 0 && edges[0].col == 0 && edges[0].dir == 0));
    CHECK((edges[1].row == 0 && edges[1].col == 0 && edges[1].dir == 1));
    CHECK((edges[2].row == 0 && edges[2].col == 1 && edges[2].dir == 1));
    CHECK((edges[3].row == 1 && edges[3].col == 0 && edges[3].dir == 0));
  }

  TEST_CASE("invalid params are rejected") {
    CHECK_THROWS_AS((FelzParams{0.0, 0.8, 1}.validate()), ArgumentError);
    CHECK_THROWS_AS((FelzParams{0.1, -1.0, 1}.validate()), ArgumentError);
    CHECK_THROWS_AS((FelzParams{0.1, 0.8, 0}.validate()), ArgumentError);
  }

  TEST_CASE("default parameters give tens of segments on a 32x32 phantom-like image") {
    Grid<double> img(32, 32, 0.1);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) img(r, c) += 0.05 * std::sin(r * 0.9) * std::cos(c * 0.7) + ((r / 8 + c / 8) % 2) * 0.3;
    const auto n = felzenszwalb_segment(img, FelzParams{}).n_segments;
    CHECK(n >= 5);
    CHECK(n <= 150);
  }
}

TEST_SUITE("select_pseudo_label") {
  SuperpixelMap three_segments() {
    std::vector<int> comp(30);
    for (int i = 0; i < 30; ++i) comp[i] = i / 10;
    return relabel_contiguous(comp, 3, 10);
  }

  TEST_CASE("the default min_fg is the area-scaled value") {
    CHECK(Stage2Config{}.min_fg == 6);
    CHECK(400.0 * (32.0 / 256.0) * (32.0 / 256.0) == doctest::Approx(6.25));
  }

  TEST_CASE("a single segment is always chosen") {
    const auto sp = relabel_contiguous(std::vector<int>(16, 4), 4, 4);
    for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(foreground_count(select_pseudo_label(sp, 6, seed)) == 16);
  }

  TEST_CASE("no eligible segment is selection-exhausted") {
    std::vector<int> comp(12);
    for (int i = 0; i < 12; ++i) comp[i] = i / 3;
    CHECK_THROWS_AS(select_pseudo_label(relabel_contiguous(comp, 3, 4), 6, 1), SelectionExhaustedError);
  }

  TEST_CASE("uniform over eligible segments") {
    auto sp = three_segments();
    // A fourth, ineligible segment.
    sp.labels(0, 0) = 3;
    sp.n_segments = 4;
    std::array<int, 4> hits{};
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
      const auto m = select_pseudo_label(sp, 6, seed);
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) {
          ++hits[sp.labels[i]];
          break;
        }
    }
    CHECK(hits[3] == 0);
    for (int s = 0; s < 3; ++s) {
      CAPTURE(s);
      CHECK(std::abs(hits[s] - 3333) <= 150);
    }
  }
}

TEST_SUITE("build_episode") {
  Mask blob(int size) {
    Mask m(size, size);
    for (int r = size / 4; r < 3 * size / 4; ++r)
      for (int c = size / 3; c < 2 * size / 3; ++c) m(r, c) = 1;
    return m;
  }

  TEST_CASE("identity transform: support and query identical") {
    const auto img = random_slice(16, 1);
    const auto ep = build_episode(img, blob(16), TransformSpec::identity(), 4);
    CHECK(ep.query_image.pixels == ep.support_image.pixels);
    CHECK(ep.query_mask == ep.support_mask);
    CHECK(ep.n_ways == 1);
    CHECK(ep.n_shots == 1);
  }

  TEST_CASE("right-angle rotation preserves the foreground count") {
    TransformSpec spec;
    spec.rotation_deg = {90.0, 90.0};
    const auto ep = build_episode(random_slice(16, 2), blob(16), spec, 4);
    CHECK(foreground_count(ep.query_mask) == foreground_count(ep.support_mask));
  }

  TEST_CASE("standard transform: inverse-warped query mask overlaps the support") {
    const auto ep = build_episode(random_slice(32, 3), blob(32), TransformSpec::standard(), 2024);
    const auto back = warp_mask(ep.query_mask, ep.transform.geometric.inverse());
    CHECK(dice(back, ep.support_mask) >= 0.9);
  }

  TEST_CASE("a transform that always empties the foreground fails after 10 attempts") {
    TransformSpec spec;
    spec.translation = {2.0, 2.0};
    CHECK_THROWS_AS(build_episode(random_slice(16, 4), blob(16), spec, 1), EpisodeConstructionError);
  }

  TEST_CASE("episode invariants are validated") {
    auto ep = build_episode(random_slice(8, 5), blob(8), TransformSpec::identity(), 0);
    CHECK_NOTHROW(ep.validate());
    ep.support_mask = Mask(8, 8, 0);
    CHECK_THROWS_AS(ep.validate(), ArgumentError);
  }
}
