#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "actrev/capture.hpp"
#include "actrev/pipeline.hpp"
#include "actrev/rng.hpp"

namespace testutil {

inline std::vector<float> randvec(actrev::Rng& rng, std::size_t n, double scale = 1.0, double shift = 0.0) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(shift + scale * rng.normal());
  return v;
}

// Two Gaussian blobs in `width` dims, positive centred at +sep/2 on axis 0.
inline actrev::LabeledActivationSet blobs(std::size_t n_per, std::size_t width, double sep, std::uint64_t seed) {
  actrev::Rng rng(seed, 7);
  actrev::LabeledActivationSet s;
  s.site = actrev::HookSite::layer_residual(0);
  s.width = width;
  for (std::size_t i = 0; i < n_per; ++i) {
    for (int lab : {1, 0}) {
      auto v = randvec(rng, width);
      v[0] += static_cast<float>(lab ? sep / 2 : -sep / 2);
      s.add(std::move(v), static_cast<std::uint8_t>(lab));
    }
  }
  return s;
}

inline std::string tmp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "actrev_unit";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

// Default config trained once per process (about 15 s).
struct Toy {
  actrev::Config cfg;
  actrev::Corpora corpora;
  actrev::TrainResult trained;
};

inline const Toy& toy() {
  static const Toy t = [] {
    Toy x;
    x.corpora = actrev::make_corpora(x.cfg, x.cfg.run.seed);
    x.trained = actrev::train_model(x.cfg, x.corpora, x.cfg.run.seed);
    return x;
  }();
  return t;
}

}  // namespace testutil
