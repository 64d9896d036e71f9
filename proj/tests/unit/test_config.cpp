#include <doctest.h>

#include <fstream>

#include "actrev/config.hpp"
#include "actrev/error.hpp"
#include "helpers.hpp"

using namespace actrev;

namespace {

std::string write(const std::string& name, const std::string& body) {
  const std::string p = testutil::tmp_path(name);
  std::ofstream(p) << body;
  return p;
}

std::string config_error(const std::string& body) {
  try {
    load_config(write("bad.json", body));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty config gives defaults") {
  const Config c = load_config(write("empty.json", "  \n"));
  CHECK(c.to_json() == Config{}.to_json());
  CHECK(c.eval.lambda == 3.0);
  CHECK(c.revision.ratio == 0.7);
}

TEST_CASE("omitted lambda defaults to 3") {
  const Config c = load_config(write("partial.json", R"({"eval": {"max_new": 3}, "run": {"seed": 9}})"));
  CHECK(c.eval.lambda == 3.0);
  CHECK(c.run.seed == 9);
}

TEST_CASE("schema errors name the field") {
  CHECK(config_error(R"({"revision": {"ratio": -0.5}})").find("revision.ratio") != std::string::npos);
  CHECK(config_error(R"({"revision": {"ratoi": 0.5}})").find("revision.ratoi") != std::string::npos);
  CHECK(config_error(R"({"nosuch": {}})").find("nosuch") != std::string::npos);
  CHECK(config_error(R"({"eval": {"lambda": "three"}})").find("eval.lambda") != std::string::npos);
  CHECK(config_error("{not json").size() > 0);
}

TEST_CASE("config snapshot round-trips") {
  Config c;
  c.run.seed = 5;
  c.revision.kind = PlanKind::Layer;
  c.revision.method = ExtractionMethod::PWD;
  c.viz.method = ProjectionMethod::TSNE;
  CHECK(config_from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("shipped default config matches the built-in defaults") {
  CHECK(load_config(std::string(ACTREV_SOURCE_DIR) + "/configs/default.json").to_json() == Config{}.to_json());
}
