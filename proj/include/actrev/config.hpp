#pragma once

#include <cstdint>
#include <string>

#include "actrev/probes.hpp"
#include "actrev/sites.hpp"
#include "actrev/synthdata.hpp"
#include "actrev/transformer.hpp"
#include "actrev/viz.hpp"

#include <json.hpp>

namespace actrev {

// One flat JSON document, one object per module section. Every key is
// optional; unknown keys are rejected with their path.
struct Config {
  struct Run {
    std::uint64_t seed = 1;
    std::size_t jobs = 1;
    std::string out_dir = "out";
  } run;

  struct Data {
    int n_a_safe = 400, n_a_unsafe = 400, n_b_safe = 400, n_b_unsafe = 400;
    int heldout_per_cell = 200;
    int pair_count = 200;
    int min_content_len = 4, max_content_len = 8, b_prefix_len = 3;
    BUnsafeTarget b_unsafe_target = BUnsafeTarget::Omit;
    BUnsafeChannel b_unsafe_channel = BUnsafeChannel::Image;
  } data;

  ModelConfig model;

  struct Train {
    int steps = 1200;
    int batch_size = 16;
    float lr = 3e-3f;
    int warmup_steps = 50;
    float grad_clip = 1.0f;
    float init_std = 0.08f;
    float modality_b_shift = 2.5f;
    bool tie_modality_b = true;
    bool enforce_gates = true;
  } train;

  ProbeOptions probe;

  struct Revision {
    PlanKind kind = PlanKind::Head;
    int layer = 2;
    float alpha = 64.0f;
    double ratio = 0.7;
    ExtractionMethod method = ExtractionMethod::MMS;
    PairStrategy strategy = PairStrategy::MultiResponse;
    bool negate = false;
  } revision;

  struct Eval {
    double lambda = 3.0;
    std::size_t max_new = 3;
  } eval;

  struct Sweep {
    std::string grid = "default-head";
    // Multipliers on the reference strength rows.
    float head_strength_scale = 32.0f;
    float layer_strength_scale = 4.0f;
  } sweep;

  struct Viz {
    ProjectionMethod method = ProjectionMethod::PCA;
    TsneParams tsne;
  } viz;

  struct Transfer {
    // Model B trains on corpus seed run.seed + offset from model A's init.
    std::uint64_t target_seed_offset = 1;
  } transfer;

  nlohmann::json to_json() const;
};

// Schema check + defaults; throws ErrorKind::Config naming the field path.
Config config_from_json(const nlohmann::json& j);
// Empty (or whitespace-only) file means all defaults.
Config load_config(const std::string& path);
Config validate_config(const std::string& path);


}  // namespace actrev
