#include "evtrack/event_io.hpp"
#include "evtrack/events.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace evtrack;

namespace {

EventStream stream_of(int w, int h, std::vector<Event> ev) {
  EventStream s;
  s.width = w;
  s.height = h;
  s.events = std::move(ev);
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("evtrack_unit_" + name);
}

}  // namespace

TEST(Threshold, ValueAtContrastIsHalf) {
  const auto tp = ThresholdParams::for_contrast(10.0 / 255.0);
  EXPECT_DOUBLE_EQ(smooth_threshold(tp.C, tp), 0.5);
}

TEST(Threshold, ValueAtZero) {
  const auto tp = ThresholdParams::for_contrast(10.0 / 255.0);
  EXPECT_NEAR(smooth_threshold(0.0, tp), 1.0 / (1.0 + std::exp(tp.w * tp.C)), 1e-15);
}

TEST(Threshold, NearlyOdd) {
  const auto tp = ThresholdParams::for_contrast(10.0 / 255.0);
  for (int i = 1; i <= 1000; ++i) {
    const double x = 0.5 * i / 1000.0;
    EXPECT_LE(std::abs(smooth_threshold(x, tp) + smooth_threshold(-x, tp)), 2.0 * tp.eps / (x + tp.eps) + 1e-15);
  }
}

TEST(Threshold, MonotoneForPositiveInput) {
  const auto tp = ThresholdParams::for_contrast(10.0 / 255.0);
  double last = smooth_threshold(0.0, tp);
  for (int i = 1; i <= 1000; ++i) {
    const double g = smooth_threshold(i * 1e-3, tp);
    EXPECT_GE(g, last);
    last = g;
  }
}

TEST(Threshold, DerivativeMatchesDifferences) {
  const auto tp = ThresholdParams::for_contrast(10.0 / 255.0);
  for (double x : {-0.2, -0.05, -0.03, -0.001, 0.002, 0.03, 0.04, 0.3}) {
    const double h = 1e-7;
    const double fd = (smooth_threshold(x + h, tp) - smooth_threshold(x - h, tp)) / (2 * h);
    EXPECT_NEAR(smooth_threshold_derivative(x, tp), fd, 1e-5 * std::max(1.0, std::abs(fd))) << "x=" << x;
  }
}

TEST(Threshold, RejectsNonPositiveParameters) {
  ThresholdParams tp;
  tp.eps = 0.0;
  EXPECT_THROW(tp.validate(), InvalidInputError);
}

TEST(Accumulate, SingleEvent) {
  const auto s = stream_of(4, 4, {{5, 1, 2, 1}});
  const auto f = accumulate(s, 0, 1);
  EXPECT_EQ(f.at(1, 2), 1.0);
  double sum = 0;
  for (double v : f.values) sum += std::abs(v);
  EXPECT_EQ(sum, 1.0);
  EXPECT_EQ(f.t_first, 5u);
  EXPECT_EQ(f.t_last, 5u);
}

TEST(Accumulate, OppositePolaritiesCancel) {
  const auto s = stream_of(4, 4, {{1, 0, 0, 1}, {2, 0, 0, -1}});
  const auto f = accumulate(s, 0, 2);
  for (double v : f.values) EXPECT_EQ(v, 0.0);
}

TEST(Accumulate, NormalizedByPeak) {
  const auto s = stream_of(4, 1, {{1, 0, 0, 1}, {1, 0, 0, 1}, {1, 0, 0, 1}, {2, 1, 0, -1}, {3, 2, 0, 1}});
  const auto f = accumulate(s, 0, 5);
  EXPECT_EQ(f.at(0, 0), 1.0);
  EXPECT_EQ(f.at(1, 0), -1.0 / 3.0);
  EXPECT_EQ(f.at(2, 0), 1.0 / 3.0);
  EXPECT_EQ(f.at(3, 0), 0.0);
}

TEST(Accumulate, WindowErrors) {
  const auto s = stream_of(2, 2, {{1, 0, 0, 1}});
  EXPECT_THROW(accumulate(s, 0, 0), InvalidInputError);
  EXPECT_THROW(accumulate(s, 0, 2), InvalidInputError);
}

TEST(Accumulate, SplitDropsPartialWindow) {
  std::vector<Event> ev;
  for (int i = 0; i < 7; ++i) ev.push_back({static_cast<std::uint64_t>(i), 0, 0, 1});
  const auto frames = split_frames(stream_of(2, 2, ev), 3);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[1].t_first, 3u);
  EXPECT_EQ(frames[1].t_last, 5u);
}

TEST(EventStream, ValidateCatchesBadInput) {
  EXPECT_THROW(stream_of(2, 2, {{1, 2, 0, 1}}).validate(), InvalidInputError);
  EXPECT_THROW(stream_of(2, 2, {{1, 0, 0, 0}}).validate(), InvalidInputError);
  EXPECT_THROW(stream_of(2, 2, {{2, 0, 0, 1}, {1, 0, 0, 1}}).validate(), InvalidInputError);
}

TEST(NoiseFilter, IsolatedPixelRemoved) {
  EventFrame f;
  f.width = f.height = 10;
  f.values.assign(100, 0.0);
  f.values[0] = 1.0;        // isolated
  f.values[5 * 10 + 5] = 1.0;  // cluster of three
  f.values[5 * 10 + 6] = 1.0;
  f.values[6 * 10 + 5] = -1.0;
  const auto kept = filter_noise(f, 3);
  EXPECT_EQ(kept, (std::vector<int>{55, 56, 65}));
}

TEST(NoiseFilter, BorderNeighborhoodClipped) {
  EventFrame f;
  f.width = f.height = 6;
  f.values.assign(36, 0.0);
  f.values[0] = f.values[1] = f.values[6] = 1.0;
  EXPECT_EQ(filter_noise(f, 3).size(), 3u);
  EXPECT_TRUE(filter_noise(f, 4).empty());
}

TEST(SynthEvents, ThresholdAndRowMajorOrder) {
  GrayImage a(3, 2, 0.0), b(3, 2, 0.0);
  const double c = 10.0 / 255.0;
  a.at(0, 1) = 2 * c;
  b.at(2, 0) = c;          // exactly at threshold fires
  b.at(1, 1) = 0.5 * c;    // below threshold
  const auto ev = synth_events_from_images(a, b, c, 42);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0], (Event{42, 2, 0, 1}));
  EXPECT_EQ(ev[1], (Event{42, 0, 1, -1}));
}

TEST(SynthEvents, IdenticalImagesGiveNothing) {
  GrayImage a(8, 8, 0.3);
  EXPECT_TRUE(synth_events_from_images(a, a, 0.04, 1).empty());
}

TEST(SynthEvents, RejectsContrastOnWrongScale) {
  GrayImage a(2, 2);
  EXPECT_THROW(synth_events_from_images(a, a, 10.0, 1), InvalidInputError);
  EXPECT_THROW(synth_events_from_images(a, GrayImage(3, 2), 0.1, 1), ShapeError);
}

TEST(Adaptive, StepFromPeakRate) {
  GrayImage d(2, 2, 0.0);
  d.at(1, 1) = -0.08;
  // rate 0.08 / 100 us; lambda C = 2 * 0.04 -> 100 us
  const auto s = adaptive_next_timestamp(d, 200, 100, 2.0, 0.04);
  EXPECT_FALSE(s.fallback);
  EXPECT_EQ(s.t_next, 300u);
}

TEST(Adaptive, ZeroDifferenceDoublesInterval) {
  const auto s = adaptive_next_timestamp(GrayImage(2, 2, 0.0), 150, 100, 2.0, 0.04);
  EXPECT_TRUE(s.fallback);
  EXPECT_EQ(s.t_next, 250u);
  EXPECT_THROW(adaptive_next_timestamp(GrayImage(2, 2), 100, 100, 2.0, 0.04), InvalidInputError);
}

class EventIoRoundTrip : public ::testing::TestWithParam<EventFormat> {};

TEST_P(EventIoRoundTrip, Lossless) {
  std::mt19937_64 rng(3);
  EventStream s;
  s.width = 640;
  s.height = 480;
  std::uint64_t t = 0;
  for (int i = 0; i < 5000; ++i) {
    t += rng() % 3;
    s.events.push_back({t, static_cast<std::uint16_t>(rng() % 640), static_cast<std::uint16_t>(rng() % 480),
                        static_cast<std::int8_t>(rng() % 2 ? 1 : -1)});
  }
  s.events.push_back({std::uint64_t{1} << 40, 639, 479, -1});
  const auto path = temp_file(GetParam() == EventFormat::kText ? "rt.txt" : "rt.bin");
  write_events(path, s, GetParam());
  const auto back = read_events(path, GetParam());
  EXPECT_EQ(back.width, s.width);
  EXPECT_EQ(back.height, s.height);
  EXPECT_EQ(back.events, s.events);
  std::filesystem::remove(path);
}

INSTANTIATE_TEST_SUITE_P(Formats, EventIoRoundTrip, ::testing::Values(EventFormat::kText, EventFormat::kBinary));

TEST(EventIo, EmptyStreamKeepsHeader) {
  const auto path = temp_file("empty.txt");
  write_events(path, stream_of(5, 7, {}), EventFormat::kText);
  const auto back = read_events(path, EventFormat::kText);
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.height, 7);
  EXPECT_TRUE(back.events.empty());
  std::filesystem::remove(path);
}

TEST(EventIo, MalformedInputs) {
  const auto path = temp_file("bad.txt");
  {
    std::ofstream(path) << "# 4 4\n1 2 3\n";
  }
  EXPECT_THROW(read_events(path, EventFormat::kText), IoError);
  {
    std::ofstream(path) << "1 2 3 1\n";
  }
  EXPECT_THROW(read_events(path, EventFormat::kText), IoError);
  {
    std::ofstream(path) << "# 4 4\n1 9 0 1\n";  // outside the sensor
  }
  EXPECT_THROW(read_events(path, EventFormat::kText), InvalidInputError);
  {
    std::ofstream(path, std::ios::binary) << "# 4 4\n" << std::string(12, '\0');
  }
  EXPECT_THROW(read_events(path, EventFormat::kBinary), IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_events(temp_file("missing.txt"), EventFormat::kText), IoError);
}

TEST(EventIo, CommentsAndBlankLinesSkipped) {
  const auto path = temp_file("comments.txt");
  {
    std::ofstream(path) << "# 4 4\n\n# note\n3 1 1 -1\n";
  }
  const auto s = read_events(path, EventFormat::kText);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.events[0], (Event{3, 1, 1, -1}));
  std::filesystem::remove(path);
}

TEST(EventIo, FormatFromExtension) {
  EXPECT_EQ(format_for("a/events.bin"), EventFormat::kBinary);
  EXPECT_EQ(format_for("a/events.txt"), EventFormat::kText);
}

// ------------------------------------------------------------ worked examples

TEST(Accumulate, MixedPolaritySums) {
  const auto s = stream_of(3, 3, {{1, 0, 0, 1}, {2, 0, 0, 1}, {3, 1, 1, -1}});
  const auto f = accumulate(s, 0, 3);
  EXPECT_EQ(f.at(0, 0), 1.0);
  EXPECT_EQ(f.at(1, 1), -0.5);
  EXPECT_EQ(f.at(2, 2), 0.0);
}

TEST(Threshold, UnitSlopeExample) {
  const ThresholdParams tp{10.0, 1.0, 1e-3};
  EXPECT_NEAR(smooth_threshold(20.0, tp), 1.0 / (1.0 + std::exp(-10.0)), 1e-12);
  EXPECT_NEAR(smooth_threshold(20.0, tp), 0.9999546, 1e-7);
}

TEST(NoiseFilter, WorkedExamples) {
  EventFrame f;
  f.width = f.height = 12;
  f.values.assign(144, 0.0);
  f.values[0] = 1.0;
  for (int y = 5; y < 8; ++y)
    for (int x = 5; x < 8; ++x) f.values[y * 12 + x] = -1.0;
  const auto kept2 = filter_noise(f, 2);
  EXPECT_EQ(kept2.size(), 9u);  // isolated corner dropped
  EXPECT_EQ(filter_noise(f, 5).size(), 9u);
  EXPECT_EQ(filter_noise(f, 1).size(), 10u);
  EXPECT_THROW(filter_noise(f, 0), InvalidInputError);
}

TEST(Adaptive, WorkedExample) {
  GrayImage d(4, 4, 0.0);
  d.at(2, 3) = 20.0;
  EXPECT_EQ(adaptive_next_timestamp(d, 2000, 1000, 2.0, 10.0).t_next, 3000u);
  d.at(2, 3) = 40.0;  // twice the rate, half the step
  EXPECT_EQ(adaptive_next_timestamp(d, 2000, 1000, 2.0, 10.0).t_next, 2500u);
  EXPECT_THROW(adaptive_next_timestamp(d, 2000, 1000, 0.0, 10.0), InvalidInputError);
}
