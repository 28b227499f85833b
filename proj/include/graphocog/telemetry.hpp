#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "graphocog/common.hpp"

namespace graphocog::telemetry {

enum class Group { CTL, PD, PDM, AD };

enum class Task {
  PointRight,
  PointLeft,
  PointSustained,
  SpiralRight,
  SpiralLeft,
  SpiralPataka,
  CopyText,
  CopyReadText,
  FreeWrite,
  Numbers,
  CopyImage,
  CopyImageMemory,
  DrawClock,
  CopyCube,
};

inline constexpr int kTaskCount = 14;

std::string_view group_name(Group g);
std::string_view task_name(Task t);
Group parse_group(std::string_view s);  // throws UnknownGroup
Task parse_task(std::string_view s);    // throws UnknownTask
std::vector<Task> all_tasks();

// One digitizer sample: timestamp (s), tablet position, pressure (device units).
struct PenSample {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double p = 0.0;
};

// One task performance by one subject.
struct Recording {
  std::string subject_id;
  Group group = Group::CTL;
  Task task = Task::PointRight;
  double sample_rate_hz = 250.0;
  std::vector<PenSample> samples;
};

// Derived kinematic channels, all aligned on the same n-1 grid (the first
// sample is consumed by differencing). dt is the median sampling interval of
// the retained samples.
struct ChannelSet {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> p;
  std::vector<double> vx;
  std::vector<double> vy;
  std::vector<double> speed;
  std::vector<double> traj;
  std::vector<double> acc;
  double dt = 0.0;

  size_t length() const { return x.size(); }

  // Returns nullptr for names outside {x,y,p,vx,vy,speed,traj,acc}.
  const std::vector<double>* find(std::string_view name) const;
};

std::vector<std::string> channel_names();

struct ManifestEntry {
  std::string subject_id;
  Group group = Group::CTL;
  Task task = Task::PointRight;
  std::filesystem::path data_path;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
};

// Reads a line-delimited manifest (one JSON object per line with keys
// subject_id, group, task, path). Relative data paths are resolved against
// the manifest's directory. Validates enums, duplicate
// (subject_id, task, path) triples, and file existence.
Manifest load_manifest(const std::filesystem::path& path);

// Reads one recording CSV (header `t,x,y,p`). Rejects files with fewer than
// two rows, non-finite values (NonFinite, reporting the 0-based data row),
// negative pressure, and decreasing timestamps.
Recording load_recording(const std::filesystem::path& path, const ManifestEntry& meta);

// Derives vx, vy, speed, traj, acc from a recording and aligns x, y, p on the
// same grid. Duplicate timestamps (dt == 0) are collapsed by keeping the
// first sample. acc uses a backward difference of velocity; the first value
// is copied from the second so all channels share one length.
ChannelSet derive_channels(const Recording& rec);

}  // namespace graphocog::telemetry
