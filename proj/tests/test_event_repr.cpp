#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "evlcal/errors.hpp"
#include "evlcal/event_repr.hpp"
#include "evlcal/rng.hpp"

using namespace evlcal;

namespace {

EventStream random_stream(Rng& rng, int count, const SensorGeometry& geom,
                          std::int64_t t_lo, std::int64_t t_hi) {
  EventStream s;
  s.geom = geom;
  for (int i = 0; i < count; ++i) {
    Event e;
    e.t_us = t_lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(t_hi - t_lo)));
    e.x = static_cast<std::uint16_t>(rng.below(geom.width));
    e.y = static_cast<std::uint16_t>(rng.below(geom.height));
    e.polarity = rng.below(2) ? 1 : -1;
    s.events.push_back(e);
  }
  std::sort(s.events.begin(), s.events.end(),
            [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
  return s;
}

}  // namespace

TEST_CASE("synchronize boundary semantics") {
  EventStream s;
  s.geom = {640, 480};
  for (std::int64_t t : {10000, 60000, 110000}) s.events.push_back({t, 1, 1, 1});

  // window (60ms, 110ms]: the event at exactly 60ms is excluded
  const auto slice = synchronize(s, 110000, 50000);
  REQUIRE(slice.size() == 1);
  CHECK(slice[0].t_us == 110000);

  CHECK(synchronize({}, 100, 50).empty());

  const auto all = synchronize(s, 110000, 1000000);
  CHECK(all.size() == 3);

  std::swap(s.events[0], s.events[2]);
  CHECK_THROWS_AS((void)synchronize(s, 110000, 50000), UnsortedStreamError);
}

TEST_CASE("synchronize matches naive filter on random streams") {
  Rng rng(11);
  const SensorGeometry geom{64, 48};
  for (int trial = 0; trial < 100; ++trial) {
    const EventStream s = random_stream(rng, 300, geom, 0, 200000);
    const std::int64_t t_scan = 50000 + static_cast<std::int64_t>(rng.below(150000));
    const std::int64_t dur = 1 + static_cast<std::int64_t>(rng.below(80000));
    const auto got = synchronize(s, t_scan, dur);

    std::vector<Event> naive;
    for (const Event& e : s.events) {
      if (e.t_us > t_scan - dur && e.t_us <= t_scan) naive.push_back(e);
    }
    REQUIRE(got.size() == naive.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].t_us == naive[i].t_us);
      CHECK(got[i].x == naive[i].x);
    }
  }
}

TEST_CASE("event frame counting and normalization") {
  const SensorGeometry geom{16, 16};
  CHECK(build_event_frame({}, geom).data ==
        std::vector<float>(static_cast<std::size_t>(16) * 16, 0.0f));

  std::vector<Event> slice;
  for (int i = 0; i < 3; ++i) slice.push_back({100 + i, 5, 7, 1});
  slice.push_back({50, 2, 2, -1});
  const Representation r = build_event_frame(slice, geom);
  CHECK(r.at(0, 7, 5) == 1.0f);  // clipped to 1
  CHECK(r.at(0, 7, 5) >= r.at(0, 2, 2));
  for (float v : r.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  std::vector<Event> bad{{0, 20, 3, 1}};
  CHECK_THROWS_AS((void)build_event_frame(bad, geom), OutOfBoundsError);
}

TEST_CASE("event frame counts match naive increment oracle") {
  Rng rng(77);
  const SensorGeometry geom{32, 24};
  const EventStream s = random_stream(rng, 1000, geom, 0, 1000);
  const Representation counts = event_frame_counts(s.events, geom);

  std::vector<int> naive(static_cast<std::size_t>(geom.width) * geom.height, 0);
  for (const Event& e : s.events) naive[static_cast<std::size_t>(e.y) * geom.width + e.x]++;
  for (std::size_t i = 0; i < naive.size(); ++i) {
    CHECK(counts.data[i] == static_cast<float>(naive[i]));
  }
}

TEST_CASE("voxel grid binning") {
  const SensorGeometry geom{8, 8};
  const AccumulationWindow window{100000, 50000};

  // B=1 equals the event frame counts
  Rng rng(5);
  const EventStream s = random_stream(rng, 400, geom, 50001, 100001);
  const Representation v1 = voxel_grid_counts(s.events, geom, window, 1);
  const Representation frame = event_frame_counts(s.events, geom);
  CHECK(v1.data == frame.data);

  // midpoint event goes into the second of two bins
  std::vector<Event> mid{{75000, 3, 3, 1}};
  const Representation v2 = voxel_grid_counts(mid, geom, window, 2);
  CHECK(v2.at(0, 3, 3) == 0.0f);
  CHECK(v2.at(1, 3, 3) == 1.0f);

  // conservation: bin sums equal frame counts cell-wise, any B
  for (int bins : {2, 3, 5, 7}) {
    const Representation v = voxel_grid_counts(s.events, geom, window, bins);
    for (int y = 0; y < geom.height; ++y) {
      for (int x = 0; x < geom.width; ++x) {
        float sum = 0.0f;
        for (int b = 0; b < bins; ++b) sum += v.at(b, y, x);
        CHECK(sum == frame.at(0, y, x));
      }
    }
  }
}

TEST_CASE("time surface recency values") {
  const SensorGeometry geom{8, 8};
  const AccumulationWindow window{100000, 50000};

  CHECK(build_time_surface({}, geom, window).data ==
        std::vector<float>(static_cast<std::size_t>(8) * 8, 0.0f));

  std::vector<Event> slice{{60000, 4, 4, 1}, {90000, 4, 4, -1}};
  const Representation r = build_time_surface(slice, geom, window);
  CHECK(r.at(0, 4, 4) == doctest::Approx(0.8));

  std::vector<Event> at_end{{100000, 2, 2, 1}};
  CHECK(build_time_surface(at_end, geom, window).at(0, 2, 2) == doctest::Approx(1.0));
}

TEST_CASE("determinism and monotonicity") {
  Rng rng(123);
  const SensorGeometry geom{32, 32};
  const AccumulationWindow window{100000, 50000};
  EventStream s = random_stream(rng, 500, geom, 50001, 100001);

  const Representation a = build_voxel_grid(s.events, geom, window, 5);
  const Representation b = build_voxel_grid(s.events, geom, window, 5);
  CHECK(a.data == b.data);

  // appending an event never decreases any count
  const Representation before = event_frame_counts(s.events, geom);
  auto extended = s.events;
  extended.push_back({100001, 9, 9, 1});
  const Representation after = event_frame_counts(extended, geom);
  for (std::size_t i = 0; i < before.data.size(); ++i) {
    CHECK(after.data[i] >= before.data[i]);
  }
}
