#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "graphocog/telemetry.hpp"

using namespace graphocog;
using namespace graphocog::telemetry;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() / ("gc_telemetry_" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

Recording make_recording(const std::vector<PenSample>& samples) {
  Recording rec;
  rec.subject_id = "S001";
  rec.group = Group::CTL;
  rec.task = Task::PointRight;
  rec.samples = samples;
  return rec;
}

Recording random_walk(uint64_t seed, size_t n) {
  Rng rng(seed);
  std::vector<PenSample> samples;
  double x = rng.uniform(0, 10);
  double y = rng.uniform(0, 10);
  for (size_t i = 0; i < n; ++i) {
    samples.push_back({static_cast<double>(i) * 0.004, x, y, rng.uniform(0, 1)});
    x += rng.normal(0, 0.5);
    y += rng.normal(0, 0.5);
  }
  return make_recording(samples);
}

ErrorCode catch_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::ParseError;
}

}  // namespace

TEST_CASE("group and task enums parse and reject") {
  CHECK(parse_group("CTL") == Group::CTL);
  CHECK(parse_group("PDM") == Group::PDM);
  CHECK(parse_task("SpiralPataka") == Task::SpiralPataka);
  CHECK(parse_task("CopyImageMemory") == Task::CopyImageMemory);
  CHECK(all_tasks().size() == 14);
  CHECK(catch_code([] { parse_group("HD"); }) == ErrorCode::UnknownGroup);
  CHECK(catch_code([] { parse_task("pointright"); }) == ErrorCode::UnknownTask);  // case-sensitive
}

TEST_CASE("load_manifest accepts valid lines and maps enums") {
  const fs::path dir = temp_dir();
  write_file(dir / "a.csv", "t,x,y,p\n0.0,1,1,0.5\n0.004,2,1,0.5\n");
  write_file(dir / "b.csv", "t,x,y,p\n0.0,1,1,0.5\n0.004,2,1,0.5\n");
  write_file(dir / "m.jsonl",
             R"({"subject_id":"S1","group":"CTL","task":"PointRight","path":"a.csv"})"
             "\n"
             R"({"subject_id":"S1","group":"CTL","task":"CopyText","path":"a.csv"})"
             "\n"
             R"({"subject_id":"S2","group":"AD","task":"PointRight","path":"b.csv"})"
             "\n");
  const Manifest m = load_manifest(dir / "m.jsonl");
  REQUIRE(m.entries.size() == 3);
  CHECK(m.entries[0].group == Group::CTL);
  CHECK(m.entries[2].group == Group::AD);
  CHECK(m.entries[1].task == Task::CopyText);
  CHECK(fs::equivalent(m.entries[0].data_path, dir / "a.csv"));
}

TEST_CASE("load_manifest rejects unknown group naming the line") {
  const fs::path dir = temp_dir();
  write_file(dir / "a.csv", "t,x,y,p\n0.0,1,1,0.5\n0.004,2,1,0.5\n");
  write_file(dir / "m.jsonl",
             R"({"subject_id":"S1","group":"CTL","task":"PointRight","path":"a.csv"})"
             "\n"
             R"({"subject_id":"S2","group":"HD","task":"PointRight","path":"a.csv"})"
             "\n");
  try {
    load_manifest(dir / "m.jsonl");
    FAIL("expected UnknownGroup");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownGroup);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("load_manifest rejects duplicates and missing files") {
  const fs::path dir = temp_dir();
  write_file(dir / "a.csv", "t,x,y,p\n0.0,1,1,0.5\n0.004,2,1,0.5\n");
  write_file(dir / "dup.jsonl",
             R"({"subject_id":"S1","group":"CTL","task":"PointRight","path":"a.csv"})"
             "\n"
             R"({"subject_id":"S1","group":"CTL","task":"PointRight","path":"a.csv"})"
             "\n");
  CHECK(catch_code([&] { load_manifest(dir / "dup.jsonl"); }) == ErrorCode::ParseError);

  write_file(dir / "missing.jsonl",
             R"({"subject_id":"S1","group":"CTL","task":"PointRight","path":"absent.csv"})"
             "\n");
  CHECK(catch_code([&] { load_manifest(dir / "missing.jsonl"); }) == ErrorCode::MissingFile);
}

TEST_CASE("load_recording parses rows in order") {
  const fs::path dir = temp_dir();
  write_file(dir / "r.csv", "t,x,y,p\n0.000,10,10,0.5\n0.004,11,10,0.5\n");
  ManifestEntry meta{"S1", Group::PD, Task::CopyText, dir / "r.csv"};
  const Recording rec = load_recording(dir / "r.csv", meta);
  REQUIRE(rec.samples.size() == 2);
  CHECK(rec.samples[0].x == 10.0);
  CHECK(rec.samples[1].x == 11.0);
  CHECK(rec.group == Group::PD);
  CHECK(rec.sample_rate_hz == 250.0);
}

TEST_CASE("load_recording accepts CRLF line endings") {
  const fs::path dir = temp_dir();
  write_file(dir / "r.csv", "t,x,y,p\r\n0.000,1,2,0.5\r\n0.004,2,2,0.5\r\n");
  ManifestEntry meta{"S1", Group::CTL, Task::CopyText, dir / "r.csv"};
  const Recording rec = load_recording(dir / "r.csv", meta);
  REQUIRE(rec.samples.size() == 2);
  CHECK(rec.samples[1].y == 2.0);
}

TEST_CASE("load_recording error paths") {
  const fs::path dir = temp_dir();
  ManifestEntry meta{"S1", Group::CTL, Task::CopyText, ""};

  write_file(dir / "short.csv", "t,x,y,p\n0.0,1,1,0.5\n");
  CHECK(catch_code([&] { load_recording(dir / "short.csv", meta); }) == ErrorCode::TooShort);

  write_file(dir / "nan.csv", "t,x,y,p\n0.000,1,1,0.5\n0.004,NaN,1,0.5\n0.008,2,1,0.5\n");
  try {
    load_recording(dir / "nan.csv", meta);
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }

  write_file(dir / "header.csv", "time,x,y,p\n0.0,1,1,0.5\n");
  CHECK(catch_code([&] { load_recording(dir / "header.csv", meta); }) == ErrorCode::ParseError);

  write_file(dir / "negp.csv", "t,x,y,p\n0.0,1,1,-0.5\n0.004,2,1,0.5\n");
  CHECK(catch_code([&] { load_recording(dir / "negp.csv", meta); }) == ErrorCode::ParseError);

  write_file(dir / "badt.csv", "t,x,y,p\n0.004,1,1,0.5\n0.000,2,1,0.5\n");
  CHECK(catch_code([&] { load_recording(dir / "badt.csv", meta); }) == ErrorCode::NonMonotoneTime);
}

TEST_CASE("derive_channels constant-velocity case") {
  std::vector<PenSample> samples;
  for (int i = 0; i < 10; ++i) {
    samples.push_back({i * 0.004, i * 4.0, 7.0, 0.5});
  }
  const ChannelSet ch = derive_channels(make_recording(samples));
  REQUIRE(ch.length() == 9);
  for (size_t j = 0; j < ch.length(); ++j) {
    CHECK(ch.vx[j] == doctest::Approx(1000.0).epsilon(1e-9));
    CHECK(ch.vy[j] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ch.speed[j] == doctest::Approx(1000.0).epsilon(1e-9));
    CHECK(ch.acc[j] == doctest::Approx(0.0).scale(1000.0).epsilon(1e-6));
    CHECK(ch.traj[j] == doctest::Approx(4.0 * (j + 1)).epsilon(1e-9));
  }
  CHECK(ch.dt == doctest::Approx(0.004).epsilon(1e-9));
}

TEST_CASE("derive_channels stationary pen") {
  std::vector<PenSample> samples;
  for (int i = 0; i < 8; ++i) {
    samples.push_back({i * 0.004, 3.0, 4.0, 0.2});
  }
  const ChannelSet ch = derive_channels(make_recording(samples));
  for (size_t j = 0; j < ch.length(); ++j) {
    CHECK(ch.vx[j] == 0.0);
    CHECK(ch.vy[j] == 0.0);
    CHECK(ch.speed[j] == 0.0);
    CHECK(ch.acc[j] == 0.0);
    CHECK(ch.traj[j] == 0.0);
  }
}

TEST_CASE("derive_channels trajectory matches brute-force oracle") {
  const Recording rec = random_walk(11, 10);
  const ChannelSet ch = derive_channels(rec);
  REQUIRE(ch.length() == 9);
  // Independent cumulative-sum oracle straight from the samples.
  double cum = 0.0;
  for (size_t i = 1; i < rec.samples.size(); ++i) {
    const double dx = rec.samples[i].x - rec.samples[i - 1].x;
    const double dy = rec.samples[i].y - rec.samples[i - 1].y;
    cum += std::sqrt(dx * dx + dy * dy);
    CHECK(ch.traj[i - 1] == doctest::Approx(cum).epsilon(1e-12));
  }
}

TEST_CASE("derive_channels collapses duplicate timestamps keeping the first") {
  std::vector<PenSample> samples = {
      {0.000, 0.0, 0.0, 0.1},
      {0.004, 1.0, 0.0, 0.1},
      {0.004, 99.0, 99.0, 0.9},  // duplicate timestamp, dropped
      {0.008, 2.0, 0.0, 0.1},
  };
  const ChannelSet ch = derive_channels(make_recording(samples));
  REQUIRE(ch.length() == 2);
  CHECK(ch.x[0] == 1.0);
  CHECK(ch.x[1] == 2.0);
  CHECK(ch.vx[0] == doctest::Approx(250.0).epsilon(1e-9));
  CHECK(ch.vx[1] == doctest::Approx(250.0).epsilon(1e-9));
}

TEST_CASE("derive_channels degenerate cases") {
  CHECK_THROWS_AS(derive_channels(make_recording({{0, 0, 0, 0}})), Error);
  std::vector<PenSample> all_equal = {{0.1, 1, 1, 0}, {0.1, 2, 2, 0}, {0.1, 3, 3, 0}};
  try {
    derive_channels(make_recording(all_equal));
    FAIL("expected DegenerateTime");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateTime);
  }
}

TEST_CASE("channel invariants hold on random recordings") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    const Recording rec = random_walk(seed, 40);
    const ChannelSet ch = derive_channels(rec);
    const size_t n = ch.length();
    REQUIRE(n == 39);
    CHECK(ch.x.size() == n);
    CHECK(ch.y.size() == n);
    CHECK(ch.p.size() == n);
    CHECK(ch.vx.size() == n);
    CHECK(ch.vy.size() == n);
    CHECK(ch.speed.size() == n);
    CHECK(ch.traj.size() == n);
    CHECK(ch.acc.size() == n);

    for (size_t j = 0; j < n; ++j) {
      const double lhs = ch.speed[j] * ch.speed[j];
      const double rhs = ch.vx[j] * ch.vx[j] + ch.vy[j] * ch.vy[j];
      CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(rhs)));
      if (j > 0) CHECK(ch.traj[j] >= ch.traj[j - 1]);
    }

    const double straight = std::hypot(rec.samples.back().x - rec.samples.front().x,
                                       rec.samples.back().y - rec.samples.front().y);
    CHECK(ch.traj.back() >= straight - 1e-9);
  }
}

TEST_CASE("translation leaves derived channels unchanged") {
  const Recording rec = random_walk(5, 30);
  Recording shifted = rec;
  for (PenSample& s : shifted.samples) {
    s.x += 64.0;
    s.y += 128.0;
  }
  const ChannelSet a = derive_channels(rec);
  const ChannelSet b = derive_channels(shifted);
  for (size_t j = 0; j < a.length(); ++j) {
    CHECK(b.vx[j] == doctest::Approx(a.vx[j]).epsilon(1e-9));
    CHECK(b.vy[j] == doctest::Approx(a.vy[j]).epsilon(1e-9));
    CHECK(b.speed[j] == doctest::Approx(a.speed[j]).epsilon(1e-9));
    CHECK(std::abs(b.traj[j] - a.traj[j]) <= 1e-9 * std::max(1.0, a.traj[j]));
    CHECK(std::abs(b.acc[j] - a.acc[j]) <= 1e-6 * std::max(1.0, a.acc[j]));
  }
}

TEST_CASE("time reversal reverses the |vx| sequence on a uniform grid") {
  const Recording rec = random_walk(9, 25);
  const size_t n = rec.samples.size();
  Recording reversed = rec;
  const double t_last = rec.samples.back().t;
  for (size_t i = 0; i < n; ++i) {
    reversed.samples[i] = rec.samples[n - 1 - i];
    reversed.samples[i].t = t_last - rec.samples[n - 1 - i].t;
  }
  const ChannelSet fwd = derive_channels(rec);
  const ChannelSet bwd = derive_channels(reversed);
  REQUIRE(fwd.length() == bwd.length());
  const size_t m = fwd.length();
  for (size_t j = 0; j < m; ++j) {
    CHECK(std::abs(bwd.vx[j]) == doctest::Approx(std::abs(fwd.vx[m - 1 - j])).epsilon(1e-9));
  }
}

TEST_CASE("ChannelSet::find resolves names") {
  const ChannelSet ch = derive_channels(random_walk(3, 10));
  CHECK(ch.find("speed") == &ch.speed);
  CHECK(ch.find("traj") == &ch.traj);
  CHECK(ch.find("foo") == nullptr);
  CHECK(channel_names().size() == 8);
}
