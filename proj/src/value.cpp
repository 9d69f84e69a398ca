#include "lmpc/value.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace lmpc {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::MatrixXd swish(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Eigen::MatrixXd swish_grad(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s + v * s * (1.0 - s);
  });
}

std::string kind_name(ValueKind k) {
  return k == ValueKind::Ensemble ? "ensemble" : "nonparametric";
}

ValueKind kind_from_name(const std::string& s) {
  if (s == "ensemble") return ValueKind::Ensemble;
  if (s == "nonparametric") return ValueKind::Nonparametric;
  throw ConfigError("unknown value kind '" + s + "'");
}

void write_numbers(std::ostream& os, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (i) os << ' ';
    os << format_double(data[i]);
  }
  os << '\n';
}

std::vector<double> read_numbers(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("tensor dump truncated");
  std::vector<double> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc()) throw ConfigError("bad number in tensor dump");
    out.push_back(v);
  }
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const ValueConfig& c) {
  j = {{"kind", kind_name(c.kind)},
       {"alpha", c.alpha},
       {"ensemble_size", c.member.ensemble_size},
       {"hidden", c.member.hidden},
       {"learning_rate", c.member.learning_rate},
       {"epochs", c.member.epochs},
       {"batch_size", c.member.batch_size},
       {"min_logvar", c.member.min_logvar},
       {"max_logvar", c.member.max_logvar}};
}

void from_json(const nlohmann::json& j, ValueConfig& c) {
  c = ValueConfig{};
  c.kind = kind_from_name(j.value("kind", std::string("ensemble")));
  c.alpha = j.value("alpha", c.alpha);
  c.member.ensemble_size = j.value("ensemble_size", c.member.ensemble_size);
  c.member.hidden = j.value("hidden", c.member.hidden);
  c.member.learning_rate = j.value("learning_rate", c.member.learning_rate);
  c.member.epochs = j.value("epochs", c.member.epochs);
  c.member.batch_size = j.value("batch_size", c.member.batch_size);
  c.member.min_logvar = j.value("min_logvar", c.member.min_logvar);
  c.member.max_logvar = j.value("max_logvar", c.member.max_logvar);
}

// ---------------------------------------------------------------- GaussianMlp

GaussianMlp::GaussianMlp(std::size_t in, const std::vector<std::size_t>& hidden,
                         double min_logvar, double max_logvar, RngStream& rng)
    : min_logvar_(min_logvar), max_logvar_(max_logvar) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(sizes[l]);
    const auto fan_out = static_cast<Eigen::Index>(sizes[l + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
    }
    w_.push_back(std::move(w));
    b_.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  for (std::size_t l = 0; l < w_.size(); ++l) {
    mw_.push_back(Eigen::MatrixXd::Zero(w_[l].rows(), w_[l].cols()));
    vw_.push_back(Eigen::MatrixXd::Zero(w_[l].rows(), w_[l].cols()));
    mb_.push_back(Eigen::VectorXd::Zero(b_[l].size()));
    vb_.push_back(Eigen::VectorXd::Zero(b_[l].size()));
  }
}

std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> GaussianMlp::forward(
    const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    Eigen::MatrixXd z = (w_[l] * a).colwise() + b_[l];
    a = (l + 1 < w_.size()) ? swish(z) : z;
  }
  Eigen::RowVectorXd mean = a.row(0);
  Eigen::RowVectorXd lv = a.row(1).unaryExpr([&](double raw) {
    const double upper = max_logvar_ - softplus(max_logvar_ - raw);
    return min_logvar_ + softplus(upper - min_logvar_);
  });
  return {mean, lv};
}

double GaussianMlp::loss(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y) const {
  auto [mean, lv] = forward(x);
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double r = y(i) - mean(i);
    s += 0.5 * (r * r * std::exp(-lv(i)) + lv(i));
  }
  return s / static_cast<double>(y.size());
}

double GaussianMlp::train_step(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y, double lr) {
  const std::size_t L = w_.size();
  const double n = static_cast<double>(y.size());
  std::vector<Eigen::MatrixXd> acts{x};
  std::vector<Eigen::MatrixXd> pre;
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = (w_[l] * acts.back()).colwise() + b_[l];
    pre.push_back(z);
    acts.push_back(l + 1 < L ? swish(z) : z);
  }
  const Eigen::MatrixXd& out = acts.back();
  Eigen::MatrixXd delta(2, y.size());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double mu = out(0, i);
    const double raw = out(1, i);
    const double upper = max_logvar_ - softplus(max_logvar_ - raw);
    const double lv = min_logvar_ + softplus(upper - min_logvar_);
    const double inv_var = std::exp(-lv);
    const double r = y(i) - mu;
    loss += 0.5 * (r * r * inv_var + lv);
    delta(0, i) = -r * inv_var / n;
    const double dlv = 0.5 * (1.0 - r * r * inv_var) / n;
    delta(1, i) = dlv * sigmoid(upper - min_logvar_) * sigmoid(max_logvar_ - raw);
  }
  loss /= n;

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++adam_t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
  for (std::size_t l = L; l-- > 0;) {
    Eigen::MatrixXd gw = delta * acts[l].transpose();
    Eigen::VectorXd gb = delta.rowwise().sum();
    if (l > 0) delta = (w_[l].transpose() * delta).cwiseProduct(swish_grad(pre[l - 1]));
    mw_[l] = beta1 * mw_[l] + (1.0 - beta1) * gw;
    vw_[l] = beta2 * vw_[l] + (1.0 - beta2) * gw.cwiseProduct(gw);
    mb_[l] = beta1 * mb_[l] + (1.0 - beta1) * gb;
    vb_[l] = beta2 * vb_[l] + (1.0 - beta2) * gb.cwiseProduct(gb);
    w_[l].array() -= lr * (mw_[l].array() / c1) / ((vw_[l].array() / c2).sqrt() + eps);
    b_[l].array() -= lr * (mb_[l].array() / c1) / ((vb_[l].array() / c2).sqrt() + eps);
  }
  return loss;
}

// ------------------------------------------------------ ProbabilisticEnsemble

ProbabilisticEnsemble::ProbabilisticEnsemble(std::shared_ptr<const Environment> env,
                                             std::vector<GaussianMlp> members,
                                             Eigen::VectorXd in_mean, Eigen::VectorXd in_std,
                                             double out_mean, double out_std, std::uint64_t seed)
    : env_(std::move(env)),
      members_(std::move(members)),
      in_mean_(std::move(in_mean)),
      in_std_(std::move(in_std)),
      out_mean_(out_mean),
      out_std_(out_std),
      seed_(seed) {}

GaussianPrediction ProbabilisticEnsemble::predict_distribution(std::span<const double> x) const {
  const auto f = env_->value_features(x);
  Eigen::MatrixXd in(static_cast<Eigen::Index>(f.size()), 1);
  for (std::size_t i = 0; i < f.size(); ++i) {
    in(static_cast<Eigen::Index>(i), 0) = (f[i] - in_mean_(static_cast<Eigen::Index>(i))) /
                                          in_std_(static_cast<Eigen::Index>(i));
  }
  double sum_mean = 0.0, sum_second = 0.0;
  for (const auto& m : members_) {
    auto [mean, lv] = m.forward(in);
    const double mu = out_mean_ + out_std_ * mean(0);
    const double var = out_std_ * out_std_ * std::exp(lv(0));
    sum_mean += mu;
    sum_second += var + mu * mu;
  }
  const double k = static_cast<double>(members_.size());
  const double mean = sum_mean / k;
  return {mean, std::max(sum_second / k - mean * mean, 0.0) + 1e-300};
}

double ProbabilisticEnsemble::predict(std::span<const double> x) const {
  return predict_distribution(x).mean;
}

nlohmann::json ProbabilisticEnsemble::save(const std::filesystem::path& dir,
                                           const std::string& stem) const {
  const std::string file = stem + ".tensors";
  std::ofstream os(dir / file);
  if (!os) throw ConfigError("cannot write " + (dir / file).string());
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& m : members_) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < m.weights().size(); ++l) {
      const auto& w = m.weights()[l];
      layers.push_back({w.rows(), w.cols()});
      write_numbers(os, w.data(), static_cast<std::size_t>(w.size()));
      write_numbers(os, m.biases()[l].data(), static_cast<std::size_t>(m.biases()[l].size()));
    }
    shapes.push_back(layers);
  }
  write_numbers(os, in_mean_.data(), static_cast<std::size_t>(in_mean_.size()));
  write_numbers(os, in_std_.data(), static_cast<std::size_t>(in_std_.size()));
  nlohmann::json j = {{"kind", "ensemble"},
                      {"file", file},
                      {"seed", seed_},
                      {"layer_shapes", shapes},
                      {"out_mean", out_mean_},
                      {"out_std", out_std_},
                      {"min_logvar", members_.empty() ? 0.0 : members_[0].min_logvar()},
                      {"max_logvar", members_.empty() ? 0.0 : members_[0].max_logvar()}};
  return j;
}

std::shared_ptr<ProbabilisticEnsemble> ProbabilisticEnsemble::load(
    std::shared_ptr<const Environment> env, const std::filesystem::path& dir,
    const nlohmann::json& manifest) {
  std::ifstream is(dir / manifest.at("file").get<std::string>());
  if (!is) throw ConfigError("cannot read tensor dump");
  std::vector<GaussianMlp> members;
  for (const auto& layers : manifest.at("layer_shapes")) {
    GaussianMlp m;
    m.set_logvar_bounds(manifest.at("min_logvar"), manifest.at("max_logvar"));
    for (const auto& shape : layers) {
      const Eigen::Index rows = shape[0], cols = shape[1];
      auto wv = read_numbers(is);
      auto bv = read_numbers(is);
      if (static_cast<Eigen::Index>(wv.size()) != rows * cols ||
          static_cast<Eigen::Index>(bv.size()) != rows) {
        throw ConfigError("tensor dump does not match manifest shapes");
      }
      m.weights().push_back(Eigen::Map<Eigen::MatrixXd>(wv.data(), rows, cols));
      m.biases().push_back(Eigen::Map<Eigen::VectorXd>(bv.data(), rows));
    }
    members.push_back(std::move(m));
  }
  auto mean = read_numbers(is);
  auto stdv = read_numbers(is);
  return std::make_shared<ProbabilisticEnsemble>(
      std::move(env), std::move(members),
      Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
      Eigen::Map<Eigen::VectorXd>(stdv.data(), static_cast<Eigen::Index>(stdv.size())),
      manifest.at("out_mean").get<double>(), manifest.at("out_std").get<double>(),
      manifest.at("seed").get<std::uint64_t>());
}

// ------------------------------------------------------- NearestNeighborValue

NearestNeighborValue::NearestNeighborValue(std::shared_ptr<const Environment> env,
                                           std::vector<StateVec> states,
                                           std::vector<double> labels, double alpha)
    : index_(std::move(env), std::move(states)), labels_(std::move(labels)), alpha_(alpha) {
  if (labels_.size() != index_.size()) throw ContractViolation("one label per state required");
  if (!(alpha_ > 0.0)) throw ConfigError("nonparametric value radius must be positive");
}

double NearestNeighborValue::predict(std::span<const double> x) const {
  double sum = 0.0;
  std::size_t n = 0;
  index_.for_each_within(x, alpha_, [&](std::size_t i) {
    sum += labels_[i];
    ++n;
  });
  return n ? sum / static_cast<double>(n) : kOutOfSet;
}

nlohmann::json NearestNeighborValue::save(const std::filesystem::path& dir,
                                          const std::string& stem) const {
  const std::string file = stem + ".csv";
  std::ofstream os(dir / file);
  if (!os) throw ConfigError("cannot write " + (dir / file).string());
  for (std::size_t i = 0; i < index_.size(); ++i) {
    os << format_double(labels_[i]);
    for (double v : index_.point(i)) os << ',' << format_double(v);
    os << '\n';
  }
  return {{"kind", "nonparametric"}, {"file", file}, {"alpha", alpha_}, {"size", index_.size()}};
}

std::shared_ptr<NearestNeighborValue> NearestNeighborValue::load(
    std::shared_ptr<const Environment> env, const std::filesystem::path& dir,
    const nlohmann::json& manifest) {
  std::ifstream is(dir / manifest.at("file").get<std::string>());
  if (!is) throw ConfigError("cannot read nonparametric value data");
  std::vector<StateVec> states;
  std::vector<double> labels;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    auto nums = read_numbers(ss);
    if (nums.size() != env->state_dim() + 1) throw ConfigError("bad nonparametric row");
    labels.push_back(nums[0]);
    states.emplace_back(std::vector<double>(nums.begin() + 1, nums.end()));
  }
  return std::make_shared<NearestNeighborValue>(std::move(env), std::move(states),
                                                std::move(labels),
                                                manifest.at("alpha").get<double>());
}

// -------------------------------------------------------------------- fitting

LabelledStates collect_labels(std::span<const Trajectory> trajs, const GoalRegion& goal) {
  LabelledStates out;
  for (const auto& t : trajs) {
    const auto labels = cost_to_go_labels(t, goal);
    for (std::size_t i = 0; i < t.states.size(); ++i) {
      out.states.push_back(t.states[i]);
      out.labels.push_back(labels[i]);
    }
  }
  return out;
}

std::shared_ptr<ProbabilisticEnsemble> fit_ensemble(std::shared_ptr<const Environment> env,
                                                    const LabelledStates& data,
                                                    const ValueMemberSpec& spec, RngStream& rng) {
  const std::size_t n = data.states.size();
  if (n == 0) throw ConfigError("value fit: no training pairs");
  if (spec.ensemble_size == 0) throw ConfigError("value fit: empty ensemble");
  const auto f0 = env->value_features(data.states[0]);
  const auto in_dim = static_cast<Eigen::Index>(f0.size());
  Eigen::MatrixXd x(in_dim, static_cast<Eigen::Index>(n));
  Eigen::RowVectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = env->value_features(data.states[i]);
    for (Eigen::Index d = 0; d < in_dim; ++d) x(d, static_cast<Eigen::Index>(i)) = f[d];
    y(static_cast<Eigen::Index>(i)) = data.labels[i];
  }
  Eigen::VectorXd in_mean = x.rowwise().mean();
  Eigen::VectorXd in_std =
      ((x.colwise() - in_mean).array().square().rowwise().mean()).sqrt().matrix();
  for (Eigen::Index d = 0; d < in_dim; ++d) {
    if (in_std(d) < 1e-8) in_std(d) = 1.0;
  }
  const double out_mean = y.mean();
  double out_std = std::sqrt((y.array() - out_mean).square().mean());
  if (out_std < 1e-8) out_std = 1.0;
  const Eigen::MatrixXd xn = (x.colwise() - in_mean).array().colwise() / in_std.array();
  const Eigen::RowVectorXd yn = (y.array() - out_mean) / out_std;

  const std::uint64_t seed = rng.next_u64();
  std::vector<GaussianMlp> members;
  std::vector<std::vector<double>> losses;
  for (std::size_t k = 0; k < spec.ensemble_size; ++k) {
    RngStream mrng(seed, "member/" + std::to_string(k));
    GaussianMlp net(static_cast<std::size_t>(in_dim), spec.hidden, spec.min_logvar,
                    spec.max_logvar, mrng);
    std::vector<Eigen::Index> boot(n);
    for (auto& b : boot) b = static_cast<Eigen::Index>(mrng.index(n));
    Eigen::MatrixXd bx(in_dim, static_cast<Eigen::Index>(n));
    Eigen::RowVectorXd by(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      bx.col(static_cast<Eigen::Index>(i)) = xn.col(boot[i]);
      by(static_cast<Eigen::Index>(i)) = yn(boot[i]);
    }
    std::vector<double> member_losses{net.loss(bx, by)};
    std::vector<std::size_t> order(n);
    const std::size_t batch = std::max<std::size_t>(1, spec.batch_size);
    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[mrng.index(i)]);
      for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t len = std::min(batch, n - start);
        Eigen::MatrixXd mx(in_dim, static_cast<Eigen::Index>(len));
        Eigen::RowVectorXd my(static_cast<Eigen::Index>(len));
        for (std::size_t i = 0; i < len; ++i) {
          mx.col(static_cast<Eigen::Index>(i)) = bx.col(static_cast<Eigen::Index>(order[start + i]));
          my(static_cast<Eigen::Index>(i)) = by(static_cast<Eigen::Index>(order[start + i]));
        }
        net.train_step(mx, my, spec.learning_rate);
      }
      member_losses.push_back(net.loss(bx, by));
    }
    losses.push_back(std::move(member_losses));
    members.push_back(std::move(net));
  }
  auto ens = std::make_shared<ProbabilisticEnsemble>(std::move(env), std::move(members), in_mean,
                                                     in_std, out_mean, out_std, seed);
  ens->training_losses = std::move(losses);
  return ens;
}

std::shared_ptr<const CostToGoModel> fit_iteration_value(std::shared_ptr<const Environment> env,
                                                         std::span<const Trajectory> trajs,
                                                         const GoalRegion& goal,
                                                         const ValueConfig& config,
                                                         RngStream& rng) {
  auto data = collect_labels(trajs, goal);
  if (data.states.empty()) throw ConfigError("value fit: no training pairs");
  if (config.kind == ValueKind::Nonparametric) {
    return std::make_shared<NearestNeighborValue>(std::move(env), std::move(data.states),
                                                  std::move(data.labels), config.alpha);
  }
  return fit_ensemble(std::move(env), data, config.member, rng);
}

std::shared_ptr<const CostToGoModel> load_value_model(std::shared_ptr<const Environment> env,
                                                      const std::filesystem::path& dir,
                                                      const nlohmann::json& entry) {
  const auto kind = kind_from_name(entry.at("kind").get<std::string>());
  if (kind == ValueKind::Ensemble) return ProbabilisticEnsemble::load(std::move(env), dir, entry);
  return NearestNeighborValue::load(std::move(env), dir, entry);
}

// ----------------------------------------------------------- ValueFunctionBank

void ValueFunctionBank::set_goal(const GoalRegion& goal) {
  goal.validate();
  goals_[goal.id] = goal;
}

void ValueFunctionBank::set_density(const GoalId& goal_id,
                                    std::shared_ptr<const DensityModel> density) {
  densities_[goal_id] = std::move(density);
}

void ValueFunctionBank::add(const GoalId& goal_id, int iteration,
                            std::shared_ptr<const CostToGoModel> model) {
  if (!model) throw ContractViolation("ValueFunctionBank::add: null model");
  models_[goal_id][iteration] = std::move(model);
}

const GoalRegion& ValueFunctionBank::goal(const GoalId& goal_id) const {
  auto it = goals_.find(goal_id);
  if (it == goals_.end()) throw ConfigError("value bank has no goal '" + goal_id + "'");
  return it->second;
}

std::size_t ValueFunctionBank::model_count(const GoalId& goal_id) const {
  auto it = models_.find(goal_id);
  return it == models_.end() ? 0 : it->second.size();
}

const std::map<int, std::shared_ptr<const CostToGoModel>>& ValueFunctionBank::models(
    const GoalId& goal_id) const {
  static const std::map<int, std::shared_ptr<const CostToGoModel>> empty;
  auto it = models_.find(goal_id);
  return it == models_.end() ? empty : it->second;
}

double ValueFunctionBank::min_prediction(const GoalId& goal_id, std::span<const double> x,
                                         int up_to_iteration) const {
  auto it = models_.find(goal_id);
  if (it == models_.end()) return kOutOfSet;
  double best = kOutOfSet;
  for (const auto& [k, model] : it->second) {
    if (k > up_to_iteration) break;
    best = std::min(best, model->predict(x));
  }
  if (best == kOutOfSet) return kOutOfSet;
  return std::clamp(best, 0.0, horizon_);
}

double ValueFunctionBank::evaluate_V(const GoalId& goal_id, std::span<const double> x,
                                     int up_to_iteration) const {
  if (goal_contains(goal(goal_id), x)) return 0.0;
  auto d = densities_.find(goal_id);
  if (d != densities_.end() && d->second && !d->second->is_safe(x)) return kOutOfSet;
  return min_prediction(goal_id, x, up_to_iteration);
}

void ValueFunctionBank::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [goal_id, models] : models_) {
    for (const auto& [k, model] : models) {
      const std::string stem = "value_" + goal_id + "_it" + std::to_string(k);
      nlohmann::json entry = model->save(dir, stem);
      entry["goal_id"] = goal_id;
      entry["iteration"] = k;
      manifest.push_back(std::move(entry));
    }
  }
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
}

}  // namespace lmpc
