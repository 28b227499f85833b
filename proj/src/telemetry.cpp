#include "graphocog/telemetry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace graphocog::telemetry {

namespace {

constexpr std::array<std::string_view, 4> kGroupNames = {"CTL", "PD", "PDM", "AD"};

constexpr std::array<std::string_view, kTaskCount> kTaskNames = {
    "PointRight",  "PointLeft", "PointSustained", "SpiralRight", "SpiralLeft",
    "SpiralPataka", "CopyText",  "CopyReadText",   "FreeWrite",   "Numbers",
    "CopyImage",    "CopyImageMemory", "DrawClock", "CopyCube",
};

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

double parse_field(const std::string& field, size_t row, const char* name) {
  try {
    size_t pos = 0;
    const double v = std::stod(field, &pos);
    while (pos < field.size() && (field[pos] == ' ' || field[pos] == '\t')) ++pos;
    if (pos != field.size()) {
      throw Error(ErrorCode::ParseError,
                  "trailing characters in " + std::string(name) + " at row " + std::to_string(row));
    }
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError,
                "cannot parse " + std::string(name) + " value '" + field + "' at row " +
                    std::to_string(row));
  }
}

}  // namespace

std::string_view group_name(Group g) { return kGroupNames[static_cast<size_t>(g)]; }

std::string_view task_name(Task t) { return kTaskNames[static_cast<size_t>(t)]; }

Group parse_group(std::string_view s) {
  for (size_t i = 0; i < kGroupNames.size(); ++i) {
    if (s == kGroupNames[i]) return static_cast<Group>(i);
  }
  throw Error(ErrorCode::UnknownGroup, "unknown group '" + std::string(s) + "'");
}

Task parse_task(std::string_view s) {
  for (size_t i = 0; i < kTaskNames.size(); ++i) {
    if (s == kTaskNames[i]) return static_cast<Task>(i);
  }
  throw Error(ErrorCode::UnknownTask, "unknown task '" + std::string(s) + "'");
}

std::vector<Task> all_tasks() {
  std::vector<Task> tasks;
  tasks.reserve(kTaskCount);
  for (int i = 0; i < kTaskCount; ++i) tasks.push_back(static_cast<Task>(i));
  return tasks;
}

const std::vector<double>* ChannelSet::find(std::string_view name) const {
  if (name == "x") return &x;
  if (name == "y") return &y;
  if (name == "p") return &p;
  if (name == "vx") return &vx;
  if (name == "vy") return &vy;
  if (name == "speed") return &speed;
  if (name == "traj") return &traj;
  if (name == "acc") return &acc;
  return nullptr;
}

std::vector<std::string> channel_names() {
  return {"x", "y", "p", "vx", "vy", "speed", "traj", "acc"};
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open manifest '" + path.string() + "'");
  }
  const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";

  Manifest manifest;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;

    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError,
                  "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("subject_id") || !obj.contains("group") ||
        !obj.contains("task") || !obj.contains("path")) {
      throw Error(ErrorCode::ParseError,
                  "manifest line " + std::to_string(line_no) +
                      ": expected keys subject_id, group, task, path");
    }

    ManifestEntry entry;
    try {
      entry.subject_id = obj.at("subject_id").get<std::string>();
      entry.group = parse_group(obj.at("group").get<std::string>());
      entry.task = parse_task(obj.at("task").get<std::string>());
      std::filesystem::path rel = obj.at("path").get<std::string>();
      entry.data_path = rel.is_absolute() ? rel : base / rel;
    } catch (const Error& e) {
      throw Error(e.code(), std::string(e.what()) + " (manifest line " + std::to_string(line_no) + ")");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError,
                  "manifest line " + std::to_string(line_no) + ": " + e.what());
    }

    const auto key = std::make_tuple(entry.subject_id, std::string(task_name(entry.task)),
                                     entry.data_path.string());
    if (!seen.insert(key).second) {
      throw Error(ErrorCode::ParseError,
                  "duplicate (subject, task, path) triple at manifest line " +
                      std::to_string(line_no));
    }
    if (!std::filesystem::exists(entry.data_path)) {
      throw Error(ErrorCode::MissingFile,
                  "manifest line " + std::to_string(line_no) + " references missing file '" +
                      entry.data_path.string() + "'");
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

Recording load_recording(const std::filesystem::path& path, const ManifestEntry& meta) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open recording '" + path.string() + "'");
  }

  std::string header;
  if (!std::getline(in, header)) {
    throw Error(ErrorCode::ParseError, "empty recording file '" + path.string() + "'");
  }
  header = strip_cr(header);
  if (header != "t,x,y,p") {
    throw Error(ErrorCode::ParseError,
                "bad header '" + header + "' in '" + path.string() + "' (expected t,x,y,p)");
  }

  Recording rec;
  rec.subject_id = meta.subject_id;
  rec.group = meta.group;
  rec.task = meta.task;

  std::string line;
  size_t row = 0;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    std::array<std::string, 4> fields;
    size_t start = 0;
    size_t n_fields = 0;
    for (size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        if (n_fields >= 4) {
          throw Error(ErrorCode::ParseError,
                      "too many fields at row " + std::to_string(row) + " of '" + path.string() + "'");
        }
        fields[n_fields++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    if (n_fields != 4) {
      throw Error(ErrorCode::ParseError,
                  "expected 4 fields at row " + std::to_string(row) + " of '" + path.string() + "'");
    }

    PenSample s;
    s.t = parse_field(fields[0], row, "t");
    s.x = parse_field(fields[1], row, "x");
    s.y = parse_field(fields[2], row, "y");
    s.p = parse_field(fields[3], row, "p");
    if (!std::isfinite(s.t) || !std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.p)) {
      throw Error(ErrorCode::NonFinite,
                  "non-finite value at row " + std::to_string(row) + " of '" + path.string() + "'");
    }
    if (s.p < 0.0) {
      throw Error(ErrorCode::ParseError,
                  "negative pressure at row " + std::to_string(row) + " of '" + path.string() + "'");
    }
    if (!rec.samples.empty() && s.t < rec.samples.back().t) {
      throw Error(ErrorCode::NonMonotoneTime,
                  "decreasing timestamp at row " + std::to_string(row) + " of '" + path.string() + "'");
    }
    rec.samples.push_back(s);
    ++row;
  }

  if (rec.samples.size() < 2) {
    throw Error(ErrorCode::TooShort,
                "recording '" + path.string() + "' has " + std::to_string(rec.samples.size()) +
                    " samples; need at least 2");
  }
  return rec;
}

ChannelSet derive_channels(const Recording& rec) {
  if (rec.samples.size() < 2) {
    throw Error(ErrorCode::TooShort, "need at least 2 samples to derive channels");
  }

  // Collapse duplicate timestamps, keeping the first sample of each run.
  std::vector<PenSample> kept;
  kept.reserve(rec.samples.size());
  kept.push_back(rec.samples.front());
  for (size_t i = 1; i < rec.samples.size(); ++i) {
    if (rec.samples[i].t > kept.back().t) kept.push_back(rec.samples[i]);
  }
  if (kept.size() < 2) {
    throw Error(ErrorCode::DegenerateTime, "all timestamps equal after duplicate collapse");
  }

  const size_t n_out = kept.size() - 1;
  ChannelSet ch;
  ch.x.resize(n_out);
  ch.y.resize(n_out);
  ch.p.resize(n_out);
  ch.vx.resize(n_out);
  ch.vy.resize(n_out);
  ch.speed.resize(n_out);
  ch.traj.resize(n_out);
  ch.acc.resize(n_out);

  std::vector<double> dts(n_out);
  double cum = 0.0;
  for (size_t i = 1; i < kept.size(); ++i) {
    const size_t j = i - 1;
    const double dt = kept[i].t - kept[i - 1].t;
    const double dx = kept[i].x - kept[i - 1].x;
    const double dy = kept[i].y - kept[i - 1].y;
    dts[j] = dt;
    ch.x[j] = kept[i].x;
    ch.y[j] = kept[i].y;
    ch.p[j] = kept[i].p;
    ch.vx[j] = dx / dt;
    ch.vy[j] = dy / dt;
    ch.speed[j] = std::sqrt(ch.vx[j] * ch.vx[j] + ch.vy[j] * ch.vy[j]);
    cum += std::sqrt(dx * dx + dy * dy);
    ch.traj[j] = cum;
  }

  for (size_t j = 1; j < n_out; ++j) {
    const double dvx = (ch.vx[j] - ch.vx[j - 1]) / dts[j];
    const double dvy = (ch.vy[j] - ch.vy[j - 1]) / dts[j];
    ch.acc[j] = std::sqrt(dvx * dvx + dvy * dvy);
  }
  ch.acc[0] = n_out > 1 ? ch.acc[1] : 0.0;

  std::vector<double> sorted_dt = dts;
  std::sort(sorted_dt.begin(), sorted_dt.end());
  ch.dt = sorted_dt[sorted_dt.size() / 2];
  return ch;
}

}  // namespace graphocog::telemetry
