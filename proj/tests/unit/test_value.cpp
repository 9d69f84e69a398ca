#include <cmath>
#include <filesystem>
#include <memory>

#include "doctest.h"
#include "lmpc/value.hpp"

using namespace lmpc;

namespace {

GoalRegion origin_goal() {
  GoalRegion g;
  g.id = "G0";
  g.center = {0.0, 0.0};
  g.radius = 1.0;
  g.state_dim = 4;
  return g;
}

// Prediction given by a fixed function of the state.
class FnModel final : public CostToGoModel {
 public:
  explicit FnModel(std::function<double(std::span<const double>)> f) : f_(std::move(f)) {}
  double predict(std::span<const double> x) const override { return f_(x); }
  ValueKind kind() const override { return ValueKind::Nonparametric; }
  nlohmann::json save(const std::filesystem::path&, const std::string&) const override {
    return {};
  }

 private:
  std::function<double(std::span<const double>)> f_;
};

Trajectory approach(double x0, int n, const GoalRegion& g) {
  Trajectory t;
  for (int i = 0; i <= n; ++i) {
    const double x = std::min(0.0, x0 + 2.0 * i);
    t.states.push_back(StateVec{x, 0.0, 0.0, 0.0});
    if (i < n) {
      t.controls.push_back(ControlVec{0.0, 0.0});
      t.disturbances.push_back(DisturbanceVec{0.0, 0.0});
    }
  }
  relabel(t, g);
  return t;
}

}  // namespace

TEST_CASE("bank minimum over iterations") {
  ValueFunctionBank bank(50.0);
  const auto g = origin_goal();
  bank.set_goal(g);
  bank.add("G0", 0, std::make_shared<FnModel>([](auto) { return 10.0; }));
  bank.add("G0", 1, std::make_shared<FnModel>([](auto) { return 6.0; }));
  const std::vector<double> x{-20.0, 0.0, 0.0, 0.0};
  CHECK(bank.evaluate_V("G0", x, 1) == 6.0);
  CHECK(bank.evaluate_V("G0", x, 0) == 10.0);
  CHECK(bank.evaluate_V("G0", std::vector<double>{0.0, 0.0, 0.0, 0.0}, 1) == 0.0);
  // predictions are clamped to [0, T]
  bank.add("G0", 2, std::make_shared<FnModel>([](auto) { return -4.0; }));
  CHECK(bank.evaluate_V("G0", x, 2) == 0.0);
  CHECK_THROWS(bank.evaluate_V("nope", x, 0));
}

TEST_CASE("bank outside the safe set is undefined") {
  auto env = std::make_shared<PointMassEnv>();
  SafeSetStore store(env);
  std::vector<StateVec> s{StateVec{-50.0, 0.0, 0.0, 0.0}};
  store.add_states("G0", 0, s);
  const auto g = origin_goal();
  ValueFunctionBank bank(50.0);
  bank.set_goal(g);
  bank.set_density("G0", std::make_shared<DensityModel>(store, "G0", 0, 2.0, g));
  bank.add("G0", 0, std::make_shared<FnModel>([](auto) { return 3.0; }));
  CHECK(bank.evaluate_V("G0", s[0].span(), 0) == 3.0);
  CHECK(bank.evaluate_V("G0", std::vector<double>{-60.0, 0.0, 0.0, 0.0}, 0) == kOutOfSet);
}

TEST_CASE("bank of three models equals a per-model minimum") {
  ValueFunctionBank bank(50.0);
  bank.set_goal(origin_goal());
  std::vector<std::function<double(std::span<const double>)>> fs = {
      [](auto x) { return std::fabs(x[0]); },
      [](auto x) { return 5.0 + std::sin(x[1]) * 4.0; },
      [](auto x) { return 0.5 * (x[0] * x[0] + x[1] * x[1]); }};
  for (int k = 0; k < 3; ++k) bank.add("G0", k, std::make_shared<FnModel>(fs[k]));
  RngStream rng(8, "bank");
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> x{-30 + 25 * rng.uniform(), 10 * rng.uniform() - 5, 0.0, 0.0};
    for (int up = 0; up < 3; ++up) {
      double want = 1e300;
      for (int k = 0; k <= up; ++k) want = std::min(want, fs[k](x));
      want = std::clamp(want, 0.0, 50.0);
      CHECK(bank.evaluate_V("G0", x, up) == want);
      if (up > 0) CHECK(bank.evaluate_V("G0", x, up) <= bank.evaluate_V("G0", x, up - 1));
    }
  }
}

TEST_CASE("nonparametric value averages labels within alpha") {
  auto env = std::make_shared<PointMassEnv>();
  std::vector<StateVec> s{StateVec{0, 0, 0, 0}, StateVec{1, 0, 0, 0}, StateVec{10, 0, 0, 0}};
  NearestNeighborValue v(env, s, {2.0, 4.0, 9.0}, 2.0);
  CHECK(v.predict(std::vector<double>{0.5, 0, 0, 0}) == 3.0);
  CHECK(v.predict(std::vector<double>{10, 1, 0, 0}) == 9.0);
  CHECK(v.predict(std::vector<double>{5, 0, 0, 0}) == kOutOfSet);
}

TEST_CASE("collect_labels uses suffix sums") {
  const auto g = origin_goal();
  std::vector<Trajectory> t{approach(-10.0, 8, g)};
  const auto d = collect_labels(t, g);
  REQUIRE(d.states.size() == 9);
  // x = -10, -8, ..., 0 reaches the goal at step 5
  for (int i = 0; i < 9; ++i) CHECK(d.labels[i] == std::max(5 - i, 0));
}

TEST_CASE("ensemble fits a constant") {
  auto env = std::make_shared<PointMassEnv>();
  RngStream rng(12, "const");
  LabelledStates data;
  for (int i = 0; i < 200; ++i) {
    data.states.push_back(StateVec{-40 + 40 * rng.uniform(), 10 * rng.uniform(), 0.0, 0.0});
    data.labels.push_back(7.0);
  }
  ValueMemberSpec spec;
  spec.ensemble_size = 2;
  spec.hidden = {32, 32};
  spec.epochs = 20;
  auto ens = fit_ensemble(env, data, spec, rng);
  for (int i = 0; i < 200; i += 10) {
    CHECK(ens->predict(data.states[i].span()) == doctest::Approx(7.0).epsilon(0.5 / 7.0));
  }
}

TEST_CASE("ensemble beats the mean predictor on trajectory labels") {
  auto env = std::make_shared<PointMassEnv>();
  const auto g = origin_goal();
  std::vector<Trajectory> trajs;
  for (int k = 0; k < 10; ++k) trajs.push_back(approach(-30.0 + k, 20, g));
  const auto data = collect_labels(trajs, g);
  ValueMemberSpec spec;
  spec.ensemble_size = 2;
  spec.hidden = {64, 64};
  spec.epochs = 60;
  RngStream rng(13, "fit");
  auto ens = fit_ensemble(env, data, spec, rng);
  double mean = 0.0;
  for (double y : data.labels) mean += y;
  mean /= static_cast<double>(data.labels.size());
  double var = 0.0, mse = 0.0;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    var += (data.labels[i] - mean) * (data.labels[i] - mean);
    const double e = ens->predict(data.states[i].span()) - data.labels[i];
    mse += e * e;
  }
  CHECK(mse < var);
  for (const auto& losses : ens->training_losses) CHECK(losses.back() < losses.front());
}

TEST_CASE("saved models reload with identical predictions") {
  auto env = std::make_shared<PointMassEnv>();
  const auto g = origin_goal();
  std::vector<Trajectory> trajs{approach(-20.0, 15, g), approach(-17.0, 15, g)};
  const auto dir = std::filesystem::temp_directory_path() / "lmpc_value_roundtrip";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  for (auto kind : {ValueKind::Nonparametric, ValueKind::Ensemble}) {
    ValueConfig cfg;
    cfg.kind = kind;
    cfg.member.ensemble_size = 2;
    cfg.member.hidden = {16};
    cfg.member.epochs = 3;
    RngStream rng(14, "save");
    auto model = fit_iteration_value(env, trajs, g, cfg, rng);
    const auto entry = model->save(dir, kind == ValueKind::Ensemble ? "e" : "n");
    auto back = load_value_model(env, dir, entry);
    for (const auto& s : trajs[0].states) CHECK(back->predict(s.span()) == model->predict(s.span()));
  }
  std::filesystem::remove_all(dir);
}
