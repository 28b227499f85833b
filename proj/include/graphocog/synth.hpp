#pragma once

#include <filesystem>
#include <vector>

#include "graphocog/common.hpp"
#include "graphocog/telemetry.hpp"

namespace graphocog::synth {

// Class-conditional signal signatures. These are deliberately simple,
// physiologically flavored markers used to verify the pipeline end to end;
// they are not a model of clinical handwriting.
struct ClassSignature {
  double pd_tremor_amp = 1.2;       // velocity-space tremor, 4-6 Hz
  double pdm_tremor_amp = 1.2;      // velocity-space tremor, 2-4 Hz
  double ad_pressure_sigma = 0.08;  // stationary scale of the pressure wander
  double ad_speed_factor = 0.6;     // AD mean-speed multiplier (1 = none)
};

struct CohortSpec {
  int ctl_subjects = 42;
  int pd_subjects = 35;
  int pdm_subjects = 15;
  int ad_subjects = 21;
  std::vector<telemetry::Task> tasks = telemetry::all_tasks();
  double duration_lo_s = 10.0;
  double duration_hi_s = 60.0;
  double sample_rate_hz = 250.0;
  // Global scale on all signatures. At 0 every group draws from the same
  // distribution, which is what the chance-level checks rely on.
  double amplitude = 1.0;
  ClassSignature signature;
  uint64_t seed = 1;
};

// Writes one CSV per (subject, task) under out_dir/data plus
// out_dir/manifest.jsonl, and returns the manifest path. Output bytes are a
// pure function of the spec. Tremor is injected in velocity space and
// integrated to positions so the derived-channel path recovers it.
std::filesystem::path generate_cohort(const CohortSpec& spec,
                                      const std::filesystem::path& out_dir);

// Model-free contrast between two groups: the largest standardized
// mean difference over a small set of band-energy and pressure features.
// Grows monotonically with signature amplitude and sits at sampling noise
// when the groups are identically distributed.
double separability_probe(const telemetry::Manifest& manifest, telemetry::Group positive,
                          telemetry::Group negative);

}  // namespace graphocog::synth
