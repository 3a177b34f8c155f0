#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "doctest.h"
#include "lmp/errors.hpp"
#include "lmp/io.hpp"
#include "test_support.hpp"

using namespace lmp;
using namespace lmp::testing;
using doctest::Approx;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "lmp_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string error_of(const io::Json& j) {
  try {
    io::config_from_json(j);
  } catch (const InvalidParameter& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("parse_p and parse_m") {
  CHECK(io::parse_p("1.3") == 1.3);
  CHECK(io::parse_p("inf") == kInfinity);
  CHECK(io::parse_p("INF") == kInfinity);
  CHECK_THROWS_AS(io::parse_p("0.5"), InvalidParameter);
  CHECK_THROWS_AS(io::parse_p("abc"), InvalidParameter);
  const auto frac = io::parse_m("25%");
  CHECK(frac.is_fraction());
  CHECK(frac.value() == 0.25);
  const auto abs = io::parse_m("25");
  CHECK_FALSE(abs.is_fraction());
  CHECK(abs.value() == 25.0);
  CHECK(io::format_m(frac) == "25%");
  CHECK(io::format_p(kInfinity) == "inf");
  CHECK_THROWS_AS(io::parse_m("x%"), InvalidParameter);
}

TEST_CASE("parse_losses") {
  CHECK(io::parse_losses("2\n4\n") == std::vector<double>{2.0, 4.0});
  CHECK(io::parse_losses("loss\n0.5\n1.5") == std::vector<double>{0.5, 1.5});
  CHECK(io::parse_losses("  [1, 2.5, 3e-1] ") == std::vector<double>{1.0, 2.5, 0.3});
  CHECK(io::parse_losses("1.0,ignored\r\n2.0\n") == std::vector<double>{1.0, 2.0});
  CHECK_THROWS_AS(io::parse_losses("-1\n"), InvalidInput);
  CHECK_THROWS_AS(io::parse_losses("1\nabc\n"), InvalidInput);
  CHECK_THROWS_AS(io::parse_losses("[1, \"a\"]"), InvalidInput);
  CHECK_THROWS_AS(io::parse_losses("[1, 2"), InvalidInput);
  CHECK_THROWS_AS(io::parse_losses(""), InvalidInput);
  CHECK_THROWS_AS(io::parse_losses("nan\n"), InvalidInput);
}

TEST_CASE("number formatting") {
  CHECK(io::format_human(3.0) == "3.00000000");
  CHECK(io::format_human(2.2360679774997897) == "2.23606798");
  const double x = 0.1 + 0.2;
  CHECK(std::stod(io::format_exact(x)) == x);
}

TEST_CASE("weights JSON reproduces the pooled loss") {
  for (const auto& inst : random_instances(77, 50)) {
    const auto out = solve_pool(inst.losses, inst.config);
    const auto text = io::outcome_to_json(out).dump();
    const auto back = io::Json::parse(text);
    const auto w = back.at("weights").get<std::vector<double>>();
    CHECK(std::fabs(dot(w, inst.losses) - back.at("pooled_loss").get<double>()) <=
          1e-9 * std::max(1.0, out.pooled_loss));
    CHECK(back.at("pooled_loss").get<double>() == out.pooled_loss);
  }
  const auto j = io::outcome_to_json(solve_pool(std::vector<double>{1.0, 2.0}, {1.0, PoolingSize::absolute(1.0)}));
  CHECK(j.at("params").at("q") == "inf");
}

TEST_CASE("config JSON") {
  SUBCASE("round trip") {
    TrainConfig c;
    c.loss_mode = LossMode::kLmp;
    c.pooling = {kInfinity, PoolingSize::absolute(7)};
    c.sampler = SamplerConfig{0.3, 0.02, 9};
    c.crop_height = 5;
    const auto back = io::config_from_json(io::config_to_json(c));
    CHECK(io::config_to_json(back) == io::config_to_json(c));
    CHECK(back.pooling.p == kInfinity);
    CHECK(back.sampler->blend == 0.3);
  }
  SUBCASE("merging over a base") {
    TrainConfig base;
    base.iterations = 7;
    const auto c = io::config_from_json(io::Json{{"lr0", 0.2}, {"m", "50%"}}, base);
    CHECK(c.iterations == 7);
    CHECK(c.lr0 == 0.2);
    CHECK(c.pooling.m.value() == 0.5);
  }
  SUBCASE("errors name the key") {
    CHECK(error_of(io::Json{{"lr00", 0.1}}).find("lr00") != std::string::npos);
    CHECK(error_of(io::Json{{"iterations", "many"}}).find("iterations") != std::string::npos);
    CHECK(error_of(io::Json{{"crop_size", {1, 2, 3}}}).find("crop_size") != std::string::npos);
    CHECK(error_of(io::Json{{"sampler", {{"blnd", 0.1}}}}).find("blnd") != std::string::npos);
    CHECK(error_of(io::Json{{"p", true}}).find("'p'") != std::string::npos);
    CHECK_THROWS_AS(io::spec_from_json(io::Json{{"shape_kind", "rings"}}), InvalidParameter);
  }
}

TEST_CASE("dataset and spec JSON round trip") {
  SyntheticDatasetSpec s;
  s.images = 4;
  s.height = 6;
  s.width = 5;
  s.class_pixel_fractions = {0.6, 0.3, 0.1};
  s.shape = ShapeKind::kStripes;
  const auto ds = generate_dataset(s);
  const auto back = io::dataset_from_json(io::Json::parse(io::dataset_to_json(ds).dump()));
  CHECK(io::spec_to_json(back.spec) == io::spec_to_json(s));
  REQUIRE(back.images.size() == ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    CHECK(back.images[i].labels == ds.images[i].labels);
    CHECK(back.images[i].features == ds.images[i].features);
  }
  CHECK(back.eval == ds.eval);
}

TEST_CASE("model binary round trip") {
  LinearModel m = LinearModel::zeros(3, 4);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d;
  for (Eigen::Index k = 0; k < m.weights.size(); ++k) m.weights.data()[k] = d(rng);
  for (Eigen::Index k = 0; k < m.bias.size(); ++k) m.bias[k] = d(rng);
  TrainConfig c;
  c.seed = 11;
  const auto path = scratch("model.bin");
  io::write_model(path, m, c);
  io::Json header;
  const auto back = io::read_model(path, &header);
  CHECK(back.weights == m.weights);
  CHECK(back.bias == m.bias);
  CHECK(header.at("seed") == 11);
  CHECK(header.at("shape").at("classes") == 3);
  CHECK(std::filesystem::file_size(path) == 8 + 8 + header.dump().size() + 8 * (12 + 3));

  io::write_text(scratch("bogus.bin"), "NOTMODEL");
  CHECK_THROWS_AS(io::read_model(scratch("bogus.bin")), InvalidInput);
  CHECK_THROWS_AS(io::read_model(scratch("missing.bin")), InvalidInput);
}

TEST_CASE("config hash is stable and sensitive") {
  TrainConfig a;
  TrainConfig b;
  b.lr0 = 0.06;
  CHECK(io::config_hash(io::config_to_json(a)) == io::config_hash(io::config_to_json(a)));
  CHECK(io::config_hash(io::config_to_json(a)) != io::config_hash(io::config_to_json(b)));
}
