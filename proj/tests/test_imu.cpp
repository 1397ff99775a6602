#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "shottrack/imu.hpp"

using namespace shottrack;

namespace {

ImuSequence ramp(std::size_t n, double rate = kSampleRate) {
  ImuSequence s;
  s.rate = rate;
  for (std::size_t i = 0; i < n; ++i) {
    ImuSample x;
    x.t = static_cast<double>(i) / rate;
    for (std::size_t c = 0; c < kNumChannels; ++c) x.channel(c) = static_cast<double>(i) + 0.1 * c;
    s.samples.push_back(x);
  }
  return s;
}

ImuSequence random_sequence(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> a(0.0, 5.0), g(0.0, 100.0);
  ImuSequence s;
  for (std::size_t i = 0; i < n; ++i) {
    ImuSample x;
    x.t = static_cast<double>(i) / kSampleRate;
    for (auto& v : x.accel) v = a(rng);
    for (auto& v : x.gyro) v = g(rng);
    s.samples.push_back(x);
  }
  return s;
}

}  // namespace

TEST_CASE("parse_csv reads a well-formed file") {
  const auto s = parse_csv("t,ax,ay,az,gx,gy,gz\n0,1,2,3,4,5,6\n0.01,1,2,3,4,5,6\n0.02,1,2,3,4,5,6\n");
  CHECK(s.size() == 3);
  CHECK(s.samples[0].accel[1] == 2.0);
  CHECK(s.samples[2].gyro[2] == 6.0);
  CHECK(s.rate == doctest::Approx(100.0));
}

TEST_CASE("parse_csv accepts columns in any order") {
  const auto s = parse_csv("gz,gy,gx,az,ay,ax,t\n6,5,4,3,2,1,0\n6,5,4,3,2,1,0.5\n");
  CHECK(s.samples[0].accel == std::array<double, 3>{1, 2, 3});
  CHECK(s.samples[0].gyro == std::array<double, 3>{4, 5, 6});
}

TEST_CASE("shuffled rows parse to the sorted file") {
  std::mt19937_64 rng(3);
  const auto seq = random_sequence(rng, 50);
  std::vector<std::string> rows;
  for (const auto& x : seq.samples) {
    std::ostringstream o;
    o.precision(17);
    o << x.t << "," << x.accel[0] << "," << x.accel[1] << "," << x.accel[2] << "," << x.gyro[0] << ","
      << x.gyro[1] << "," << x.gyro[2] << "\n";
    rows.push_back(o.str());
  }
  std::string sorted = "t,ax,ay,az,gx,gy,gz\n";
  for (const auto& r : rows) sorted += r;
  std::shuffle(rows.begin(), rows.end(), rng);
  std::string shuffled = "t,ax,ay,az,gx,gy,gz\n";
  for (const auto& r : rows) shuffled += r;
  CHECK(parse_csv(shuffled) == parse_csv(sorted));
}

TEST_CASE("parse errors name the line") {
  CHECK_THROWS_AS(parse_csv("t,ax,ay,az,gx,gy\n0,1,2,3,4,5\n"), ParseError);
  try {
    parse_csv("t,ax,ay,az,gx,gy,gz\n0,1,2,3,4,5,6\n0.1,1,2,x,4,5,6\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_csv("t,ax,ay,az,gx,gy,gz\n0,1,2,3,4,5,6\n0,1,2,3,4,5,6\n"), ParseError);
  CHECK_THROWS_AS(parse_csv("t,ax,ay,az,gx,gy,gz\n0,1,2,3,4,5\n"), ParseError);
}

TEST_CASE("parse_jsonl matches parse_csv") {
  const auto a = parse_csv("t,ax,ay,az,gx,gy,gz\n0,1,2,3,4,5,6\n0.5,-1,2.5,3,4,5,7\n");
  const auto b = parse_jsonl(
      "{\"t\":0,\"ax\":1,\"ay\":2,\"az\":3,\"gx\":4,\"gy\":5,\"gz\":6}\n"
      "{\"t\":0.5,\"ax\":-1,\"ay\":2.5,\"az\":3,\"gx\":4,\"gy\":5,\"gz\":7}\n");
  CHECK(a == b);
}

TEST_CASE("save_csv then load_sequence round trips exactly") {
  std::mt19937_64 rng(5);
  auto seq = random_sequence(rng, 40);
  const auto dir = std::filesystem::temp_directory_path() / "shottrack_test_imu";
  std::filesystem::create_directories(dir);
  save_csv(seq, dir / "r.csv");
  const auto back = load_sequence(dir / "r.csv", SequenceFormat::csv);
  CHECK(back.samples == seq.samples);
  CHECK_THROWS(load_sequence(dir / "missing.csv", SequenceFormat::csv));
}

TEST_CASE("mirror_handedness flips ay, gx, gz") {
  ImuSequence s;
  s.subject.handedness = Handedness::left;
  ImuSample x;
  x.accel = {1, 2, 3};
  x.gyro = {4, 5, 6};
  s.samples = {x, ImuSample{}};
  const auto m = mirror_handedness(s);
  CHECK(m.samples[0].accel == std::array<double, 3>{1, -2, 3});
  CHECK(m.samples[0].gyro == std::array<double, 3>{-4, 5, -6});
  CHECK(m.samples[1] == ImuSample{});
  CHECK(m.subject.handedness == Handedness::right);
  CHECK(mirror_handedness(m) == s);
}

TEST_CASE("mirror preserves accel magnitude on random data") {
  std::mt19937_64 rng(7);
  const auto s = random_sequence(rng, 200);
  const auto m = mirror_handedness(s);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& a = s.samples[i].accel;
    const auto& b = m.samples[i].accel;
    CHECK(a[0] * a[0] + a[1] * a[1] + a[2] * a[2] == b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  }
}

TEST_CASE("resample") {
  SUBCASE("constant at 100 Hz stays constant at 120 Hz") {
    ImuSequence s;
    s.rate = 100.0;
    for (int i = 0; i < 100; ++i) {
      ImuSample x;
      x.t = i / 100.0;
      x.accel = {1.5, -2.0, 9.81};
      x.gyro = {3, 4, 5};
      s.samples.push_back(x);
    }
    const auto r = resample(s, 120.0);
    CHECK(r.rate == 120.0);
    for (const auto& x : r.samples) {
      CHECK(x.accel[0] == doctest::Approx(1.5).epsilon(1e-12));
      CHECK(x.gyro[2] == doctest::Approx(5.0).epsilon(1e-12));
    }
  }
  SUBCASE("linear ramp is reproduced exactly") {
    ImuSequence s;
    s.rate = 50.0;
    for (int i = 0; i < 60; ++i) {
      ImuSample x;
      x.t = i / 50.0;
      for (std::size_t c = 0; c < 6; ++c) x.channel(c) = 2.0 * x.t + static_cast<double>(c);
      s.samples.push_back(x);
    }
    const auto r = resample(s, 120.0);
    CHECK(r.samples.front() == s.samples.front());
    CHECK(r.samples.back().t <= s.samples.back().t + 1e-12);
    for (const auto& x : r.samples)
      for (std::size_t c = 0; c < 6; ++c) CHECK(x.channel(c) == doctest::Approx(2.0 * x.t + c).epsilon(1e-12));
  }
  SUBCASE("3 Hz sine at 120 Hz down to 60 Hz matches the analytic sine") {
    ImuSequence s;
    for (int i = 0; i < 240; ++i) {
      ImuSample x;
      x.t = i / 120.0;
      x.accel[0] = std::sin(2 * M_PI * 3.0 * x.t);
      s.samples.push_back(x);
    }
    const auto r = resample(s, 60.0);
    for (const auto& x : r.samples) CHECK(std::abs(x.accel[0] - std::sin(2 * M_PI * 3.0 * x.t)) < 2e-2);
  }
  SUBCASE("same rate is the identity") {
    std::mt19937_64 rng(9);
    const auto s = random_sequence(rng, 100);
    const auto r = resample(s, kSampleRate);
    REQUIRE(r.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t c = 0; c < 6; ++c)
        CHECK(std::abs(r.samples[i].channel(c) - s.samples[i].channel(c)) <= 1e-12);
  }
  SUBCASE("single sample is an error") {
    ImuSequence s;
    s.samples.resize(1);
    CHECK_THROWS(resample(s, 60.0));
  }
}

TEST_CASE("fit_scaler") {
  ImuSequence s;
  for (int i = 0; i <= 10; ++i) {
    ImuSample x;
    x.t = i;
    x.accel = {double(i), double(i) / 2, 0.0};
    x.gyro = {-double(i), 1.0, 2.0};
    s.samples.push_back(x);
  }
  const auto sc = fit_scaler(std::vector{s});
  CHECK(sc.accel_min == 0.0);
  CHECK(sc.accel_max == 10.0);
  CHECK(sc.gyro_min == -10.0);
  CHECK(sc.gyro_max == 2.0);
  CHECK(sc.scale(kAx, 5.0) == doctest::Approx(0.5));
  CHECK(sc.scale(kAx, 12.0) == doctest::Approx(1.2));
  CHECK(sc.unscale(kGy, sc.scale(kGy, 0.37)) == doctest::Approx(0.37).epsilon(1e-12));
  CHECK_THROWS(fit_scaler(std::vector<ImuSequence>{}));
  ImuSequence flat;
  flat.samples.resize(4);
  CHECK_THROWS(fit_scaler(std::vector{flat}));
}

TEST_CASE("fit_scaler matches a brute-force scan and scaled training data lies in [0,1]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ImuSequence> seqs;
    for (int k = 0; k < 3; ++k) seqs.push_back(random_sequence(rng, 10 + rng() % 50));
    double amin = 1e300, amax = -1e300, gmin = 1e300, gmax = -1e300;
    for (const auto& s : seqs)
      for (const auto& x : s.samples) {
        for (double v : x.accel) amin = std::min(amin, v), amax = std::max(amax, v);
        for (double v : x.gyro) gmin = std::min(gmin, v), gmax = std::max(gmax, v);
      }
    const auto sc = fit_scaler(seqs);
    CHECK(sc.accel_min == amin);
    CHECK(sc.accel_max == amax);
    CHECK(sc.gyro_min == gmin);
    CHECK(sc.gyro_max == gmax);
    const auto two = fit_scaler(std::vector{seqs[0], seqs[1]});
    ImuSequence cat = seqs[0];
    for (auto x : seqs[1].samples) {
      x.t += 1000.0;
      cat.samples.push_back(x);
    }
    CHECK(fit_scaler(std::vector{cat}) == two);
    for (const auto& s : seqs) {
      const auto n = apply_scaler(s, sc);
      for (const auto& x : n.samples)
        for (std::size_t c = 0; c < 6; ++c) {
          CHECK(x.channel(c) >= 0.0);
          CHECK(x.channel(c) <= 1.0);
        }
    }
  }
}

TEST_CASE("extract_window") {
  const auto s = ramp(180);
  const auto w = extract_window(s, 120);
  CHECK(w.length() == 180);
  CHECK(w.impact_index == 120);
  CHECK(w.frames[0][0] == 0.0);
  CHECK(w.frames[179][0] == 179.0);
  CHECK_THROWS(extract_window(s, 119));
  CHECK_THROWS(extract_window(s, 121));
  const auto long_ramp = ramp(1000);
  const auto w2 = extract_window(long_ramp, 500);
  CHECK(w2.frames[0][0] == long_ramp.samples[380].accel[0]);
  CHECK(w2.frames.size() == 180);
  CHECK_THROWS(extract_window(ramp(400, 60.0), 200));
}

TEST_CASE("label files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "shottrack_test_labels";
  std::filesystem::create_directories(dir);
  FrameLabels fl;
  fl.labels = {0, 0, 1, 1, 1, 0};
  write_frame_labels(fl, dir / "a.labels.txt");
  CHECK(read_frame_labels(dir / "a.labels.txt") == fl);
  std::vector<ShotLabel> shots = {{240, ShotClass::Smash}, {480, ShotClass::BackhandVolley}};
  write_shot_labels(shots, dir / "a.shots.csv");
  CHECK(read_shot_labels(dir / "a.shots.csv") == shots);
  std::ofstream(dir / "bad.labels.txt") << "0\n2\n";
  CHECK_THROWS_AS(read_frame_labels(dir / "bad.labels.txt"), ParseError);
}

TEST_CASE("class names") {
  CHECK(kAllClasses.size() == 6);
  for (auto c : kAllClasses) CHECK(class_from_name(class_name(c)) == c);
  CHECK_THROWS(class_from_name("Lob"));
}
