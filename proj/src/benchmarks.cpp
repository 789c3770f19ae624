#include "flowvi/benchmarks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#ifndef FLOWVI_DEFAULT_DATA_DIR
#define FLOWVI_DEFAULT_DATA_DIR "data"
#endif

namespace flowvi {

std::string data_dir() {
  if (const char* env = std::getenv("FLOWVI_DATA_DIR"); env && *env) return env;
  return FLOWVI_DEFAULT_DATA_DIR;
}

// ---------------------------------------------------------------------------
// Delimited text

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t\r"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Dataset load_dataset(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open dataset file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ModelError("dataset '" + path + "': no rows");
  const std::vector<std::string> header = split_csv_line(line);

  std::vector<std::size_t> col_index;
  for (const ColumnSpec& spec : schema) {
    auto it = std::find(header.begin(), header.end(), spec.name);
    if (it == header.end()) {
      throw ModelError("dataset '" + path + "': missing column '" + spec.name + "'");
    }
    col_index.push_back(static_cast<std::size_t>(it - header.begin()));
  }

  Dataset data;
  data.name = path;
  for (const ColumnSpec& spec : schema) data.columns[spec.name];
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    const std::vector<std::string> cells = split_csv_line(line);
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const std::string where = "dataset '" + path + "' row " + std::to_string(row) + " column '" +
                                schema[c].name + "'";
      if (col_index[c] >= cells.size()) throw ModelError(where + ": missing cell");
      const std::string& cell = cells[col_index[c]];
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (cell.empty() || used != cell.size() || !std::isfinite(v)) {
        throw ModelError(where + ": cannot parse '" + cell + "'");
      }
      if (schema[c].type == ColumnType::Integer && v != std::floor(v)) {
        throw ModelError(where + ": expected an integer, got '" + cell + "'");
      }
      data.columns[schema[c].name].push_back(v);
    }
  }
  if (row == 0) throw ModelError("dataset '" + path + "': no rows");
  return data;
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot write dataset file '" + path + "'");
  out << std::setprecision(17);
  bool first = true;
  for (const auto& [name, col] : data.columns) {
    out << (first ? "" : ",") << name;
    first = false;
  }
  out << "\n";
  for (std::size_t r = 0; r < data.rows(); ++r) {
    first = true;
    for (const auto& [name, col] : data.columns) {
      out << (first ? "" : ",") << col[r];
      first = false;
    }
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Model construction helpers

namespace {

LatentSite normal_site(std::string name, double mean, double sd) {
  LatentSite s;
  s.name = std::move(name);
  s.mean = ScalarFn::constant(mean);
  s.log_scale = ScalarFn::constant(std::log(sd));
  s.affine = true;
  return s;
}

// N(parent_mean, exp(parent_log_scale)) with both moments read straight off parents.
LatentSite child_site(std::string name, std::size_t mean_parent, std::size_t log_scale_parent) {
  LatentSite s;
  s.name = std::move(name);
  s.parents = {mean_parent, log_scale_parent};
  s.mean = ScalarFn::from([](auto pa) { return pa[0]; });
  s.log_scale = ScalarFn::from([](auto pa) { return pa[1]; });
  s.affine = true;
  return s;
}

// N(0, exp(log_scale_parent))
LatentSite zero_mean_site(std::string name, std::size_t log_scale_parent) {
  LatentSite s;
  s.name = std::move(name);
  s.parents = {log_scale_parent};
  s.mean = ScalarFn::constant(0.0);
  s.log_scale = ScalarFn::from([](auto pa) { return pa[0]; });
  s.affine = true;
  return s;
}

template <class T>
T bernoulli_logit(double y, const T& eta) {
  return y > 0.5 ? T(log_sigmoid(eta)) : T(log_sigmoid(-eta));
}

std::vector<std::size_t> range_indices(std::size_t begin, std::size_t count) {
  std::vector<std::size_t> v(count);
  for (std::size_t k = 0; k < count; ++k) v[k] = begin + k;
  return v;
}

std::size_t count_prefixed(const Dataset& data, const std::string& prefix) {
  std::size_t n = 0;
  while (data.columns.count(prefix + std::to_string(n + 1))) ++n;
  return n;
}

std::vector<std::vector<double>> feature_rows(const Dataset& data, const std::string& prefix,
                                              std::size_t count) {
  std::vector<std::vector<double>> rows(data.rows(), std::vector<double>(count));
  for (std::size_t k = 0; k < count; ++k) {
    const auto& col = data.column(prefix + std::to_string(k + 1));
    for (std::size_t r = 0; r < rows.size(); ++r) rows[r][k] = col[r];
  }
  return rows;
}

std::size_t max_index(const std::vector<double>& col) {
  double m = -1;
  for (double v : col) {
    if (v < 0) throw ModelError("negative index in data");
    m = std::max(m, v);
  }
  return static_cast<std::size_t>(m) + 1;
}

void require_rows(const Dataset& data, const std::string& model) {
  if (data.rows() == 0) throw ModelError(model + ": data set has no rows");
}

// --- individual models -----------------------------------------------------

ModelGraph eight_schools(std::shared_ptr<const Dataset> data) {
  require_rows(*data, "8schools");
  const auto& y = data->column("y");
  const auto& sigma = data->column("sigma");
  ModelGraph g;
  g.name = "8schools";
  g.sites.push_back(normal_site("mu", 0.0, 5.0));
  g.sites.push_back(normal_site("log_tau", 0.0, 5.0));
  for (std::size_t i = 0; i < y.size(); ++i) {
    g.sites.push_back(child_site("theta[" + std::to_string(i + 1) + "]", 0, 1));
    if (!(sigma[i] > 0)) throw ModelError("8schools: sigma must be positive");
    const double yi = y[i], log_si = std::log(sigma[i]);
    g.likelihoods.push_back({"y[" + std::to_string(i + 1) + "]",
                             {2 + i},
                             ScalarFn::from([yi, log_si](auto pa) {
                               using T = std::decay_t<decltype(pa[0])>;
                               return normal_logpdf_logscale(T(yi), pa[0], T(log_si));
                             })});
  }
  return g;
}

ModelGraph credit(std::shared_ptr<const Dataset> data) {
  require_rows(*data, "credit");
  const std::size_t k_feat = count_prefixed(*data, "x");
  if (k_feat == 0) throw ModelError("credit: no feature columns x1..xK");
  ModelGraph g;
  g.name = "credit";
  g.sites.push_back(normal_site("log_tau0", 0.0, 10.0));
  for (std::size_t k = 0; k < k_feat; ++k) {
    LatentSite s;
    s.name = "log_tau[" + std::to_string(k + 1) + "]";
    s.parents = {0};
    s.mean = ScalarFn::from([](auto pa) { return pa[0]; });
    s.log_scale = ScalarFn::constant(0.0);
    s.affine = true;
    g.sites.push_back(std::move(s));
  }
  for (std::size_t k = 0; k < k_feat; ++k) {
    g.sites.push_back(zero_mean_site("beta[" + std::to_string(k + 1) + "]", 1 + k));
  }
  const auto rows = feature_rows(*data, "x", k_feat);
  const auto& y = data->column("y");
  const auto betas = range_indices(1 + k_feat, k_feat);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    const std::vector<double>& xn = rows[n];
    const double yn = y[n];
    g.likelihoods.push_back({"y[" + std::to_string(n + 1) + "]", betas,
                             ScalarFn::from([xn, yn](auto pa) {
                               return bernoulli_logit(yn, dot(0.0, std::span<const double>(xn), pa));
                             })});
  }
  return g;
}

ModelGraph radon(std::shared_ptr<const Dataset> data) {
  require_rows(*data, "radon");
  const auto& county = data->column("county");
  const auto& floor = data->column("floor");
  const auto& uranium = data->column("uranium");
  const auto& log_radon = data->column("log_radon");
  const std::size_t n_c = max_index(county);
  std::vector<double> u(n_c, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < county.size(); ++j) u[static_cast<std::size_t>(county[j])] = uranium[j];
  for (std::size_t k = 0; k < n_c; ++k) {
    if (std::isnan(u[k])) throw ModelError("radon: county " + std::to_string(k) + " has no homes");
  }
  ModelGraph g;
  g.name = "radon";
  g.sites.push_back(normal_site("mu0", 0.0, 1.0));
  g.sites.push_back(normal_site("a", 0.0, 1.0));
  g.sites.push_back(normal_site("b", 0.0, 1.0));
  for (std::size_t k = 0; k < n_c; ++k) {
    g.sites.push_back(normal_site("log_sigma_m[" + std::to_string(k + 1) + "]", 0.0, 10.0));
  }
  const std::size_t log_sigma_y = g.sites.size();
  g.sites.push_back(normal_site("log_sigma_y", 0.0, 10.0));
  const std::size_t m0 = g.sites.size();
  for (std::size_t k = 0; k < n_c; ++k) {
    LatentSite s;
    s.name = "m[" + std::to_string(k + 1) + "]";
    s.parents = {0, 1, 3 + k};
    const double uk = u[k];
    s.mean = ScalarFn::from([uk](auto pa) { return pa[0] + uk * pa[1]; });
    s.log_scale = ScalarFn::from([](auto pa) { return pa[2]; });
    s.affine = true;
    g.sites.push_back(std::move(s));
  }
  for (std::size_t j = 0; j < county.size(); ++j) {
    const double xj = floor[j], yj = log_radon[j];
    g.likelihoods.push_back({"log_r[" + std::to_string(j + 1) + "]",
                             {m0 + static_cast<std::size_t>(county[j]), 2, log_sigma_y},
                             ScalarFn::from([xj, yj](auto pa) {
                               using T = std::decay_t<decltype(pa[0])>;
                               return normal_logpdf_logscale(T(yj), pa[0] + xj * pa[1], pa[2]);
                             })});
  }
  return g;
}

ModelGraph movielens(std::shared_ptr<const Dataset> data) {
  require_rows(*data, "movielens");
  const std::size_t n_attr = count_prefixed(*data, "x");
  if (n_attr == 0) throw ModelError("movielens: no attribute columns x1..xD");
  const auto& user = data->column("user");
  const auto& y = data->column("y");
  const std::size_t n_users = max_index(user);
  ModelGraph g;
  g.name = "movielens";
  for (std::size_t j = 0; j < n_attr; ++j) g.sites.push_back(normal_site("mu[" + std::to_string(j + 1) + "]", 0, 1));
  for (std::size_t j = 0; j < n_attr; ++j) {
    g.sites.push_back(normal_site("lambda[" + std::to_string(j + 1) + "]", 0, 1));
  }
  const std::size_t z0 = g.sites.size();
  for (std::size_t m = 0; m < n_users; ++m) {
    for (std::size_t j = 0; j < n_attr; ++j) {
      g.sites.push_back(child_site("Z[" + std::to_string(m + 1) + "," + std::to_string(j + 1) + "]",
                                   j, n_attr + j));
    }
  }
  const auto rows = feature_rows(*data, "x", n_attr);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    const std::vector<double>& xn = rows[n];
    const double yn = y[n];
    g.likelihoods.push_back({"y[" + std::to_string(n + 1) + "]",
                             range_indices(z0 + static_cast<std::size_t>(user[n]) * n_attr, n_attr),
                             ScalarFn::from([xn, yn](auto pa) {
                               return bernoulli_logit(yn, dot(0.0, std::span<const double>(xn), pa));
                             })});
  }
  return g;
}

ModelGraph irt(std::shared_ptr<const Dataset> data) {
  require_rows(*data, "irt");
  const auto& student = data->column("student");
  const auto& question = data->column("question");
  const auto& y = data->column("y");
  const std::size_t n_s = max_index(student), n_q = max_index(question);
  ModelGraph g;
  g.name = "irt";
  for (std::size_t s = 0; s < n_s; ++s) g.sites.push_back(normal_site("alpha[" + std::to_string(s + 1) + "]", 0, 1));
  const std::size_t mu_b = g.sites.size();
  g.sites.push_back(normal_site("mu_beta", 0, 1));
  g.sites.push_back(normal_site("log_sigma_beta", 0, 1));
  g.sites.push_back(normal_site("log_sigma_gamma", 0, 1));
  const std::size_t beta0 = g.sites.size();
  for (std::size_t q = 0; q < n_q; ++q) g.sites.push_back(child_site("beta[" + std::to_string(q + 1) + "]", mu_b, mu_b + 1));
  const std::size_t gamma0 = g.sites.size();
  for (std::size_t q = 0; q < n_q; ++q) {
    g.sites.push_back(zero_mean_site("log_gamma[" + std::to_string(q + 1) + "]", mu_b + 2));
  }
  for (std::size_t r = 0; r < y.size(); ++r) {
    const auto s = static_cast<std::size_t>(student[r]);
    const auto q = static_cast<std::size_t>(question[r]);
    const double yr = y[r];
    g.likelihoods.push_back({"y[" + std::to_string(r + 1) + "]",
                             {s, beta0 + q, gamma0 + q},
                             ScalarFn::from([yr](auto pa) {
                               using std::exp;
                               using ad::exp;
                               return bernoulli_logit(yr, exp(pa[2]) * pa[0] + pa[1]);
                             })});
  }
  return g;
}

ModelGraph seeds(std::shared_ptr<const Dataset> data) {
  require_rows(*data, "seeds");
  const auto& r = data->column("r");
  const auto& n = data->column("n");
  const auto& x1 = data->column("x1");
  const auto& x2 = data->column("x2");
  ModelGraph g;
  g.name = "seeds";
  // tau ~ Gamma(0.01, 0.01) carried as log tau, density includes the log-Jacobian.
  LatentSite tau;
  tau.name = "log_tau";
  tau.mean = ScalarFn::constant(0.0);
  tau.log_scale = ScalarFn::constant(0.0);
  tau.affine = true;
  constexpr double shape = 0.01, rate = 0.01;
  const double norm = shape * std::log(rate) - std::lgamma(shape);
  tau.custom_log_prior = ScalarFn::from([norm](auto v) {
    using std::exp;
    using ad::exp;
    return norm + shape * v[0] - rate * exp(v[0]);
  });
  g.sites.push_back(std::move(tau));
  for (const char* nm : {"a0", "a1", "a2", "a12"}) g.sites.push_back(normal_site(nm, 0.0, 10.0));
  for (std::size_t i = 0; i < r.size(); ++i) {
    LatentSite b;
    b.name = "b[" + std::to_string(i + 1) + "]";
    b.parents = {0};
    b.mean = ScalarFn::constant(0.0);
    // sd = 1/sqrt(tau)
    b.log_scale = ScalarFn::from([](auto pa) { return -0.5 * pa[0]; });
    b.affine = true;
    g.sites.push_back(std::move(b));
  }
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double ri = r[i], ni = n[i], a = x1[i], c = x2[i];
    if (ri < 0 || ri > ni) throw ModelError("seeds: need 0 <= r <= n");
    const double log_choose = std::lgamma(ni + 1) - std::lgamma(ri + 1) - std::lgamma(ni - ri + 1);
    const double coef[5] = {1.0, a, c, a * c, 1.0};
    g.likelihoods.push_back({"r[" + std::to_string(i + 1) + "]",
                             {1, 2, 3, 4, 5 + i},
                             ScalarFn::from([=](auto pa) {
                               const auto eta = dot(0.0, std::span<const double>(coef, 5), pa);
                               return log_choose + ri * log_sigmoid(eta) + (ni - ri) * log_sigmoid(-eta);
                             })});
  }
  return g;
}

constexpr double kLogisticPriorSd = 1.0;

ModelGraph logistic_regression(const std::string& name, std::shared_ptr<const Dataset> data) {
  require_rows(*data, name);
  const std::size_t d = count_prefixed(*data, "x");
  if (d == 0) throw ModelError(name + ": no feature columns x1..xD");
  ModelGraph g;
  g.name = name;
  for (std::size_t k = 0; k < d; ++k) {
    g.sites.push_back(normal_site("x[" + std::to_string(k + 1) + "]", 0.0, kLogisticPriorSd));
  }
  const auto rows = feature_rows(*data, "x", d);
  const auto& y = data->column("y");
  const auto all = range_indices(0, d);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    const std::vector<double>& un = rows[n];
    const double yn = y[n];
    g.likelihoods.push_back({"y[" + std::to_string(n + 1) + "]", all,
                             ScalarFn::from([un, yn](auto pa) {
                               return bernoulli_logit(yn, dot(0.0, std::span<const double>(un), pa));
                             })});
  }
  return g;
}

Schema prefixed_schema(const std::string& prefix, std::size_t count) {
  Schema s;
  for (std::size_t k = 0; k < count; ++k) s.push_back({prefix + std::to_string(k + 1), ColumnType::Real});
  return s;
}

std::size_t header_count(const Dataset* hint, const std::string& prefix, std::size_t fallback) {
  if (!hint) return fallback;
  const std::size_t n = count_prefixed(*hint, prefix);
  return n ? n : fallback;
}

}  // namespace

// ---------------------------------------------------------------------------

const std::vector<std::string>& benchmark_names() {
  static const std::vector<std::string> names = {"8schools", "credit", "funnel", "radon", "movielens",
                                                 "irt",      "seeds",  "sonar",  "ionosphere"};
  return names;
}

std::size_t SynthTemplate::size(const std::string& key) const {
  auto it = sizes.find(key);
  if (it == sizes.end()) throw ModelError("synthetic template '" + model + "' has no size '" + key + "'");
  return it->second;
}

SynthTemplate default_template(const std::string& model) {
  if (model == "8schools") return {model, {{"schools", 8}}};
  if (model == "credit") return {model, {{"features", 8}, {"obs", 200}}};
  if (model == "radon") return {model, {{"counties", 8}, {"homes", 120}}};
  if (model == "movielens") return {model, {{"users", 2}, {"attributes", 18}, {"ratings", 200}}};
  if (model == "irt") return {model, {{"students", 20}, {"questions", 5}, {"responses", 100}}};
  if (model == "seeds") return {model, {{"groups", 21}}};
  if (model == "sonar") return {model, {{"features", 61}, {"obs", 208}}};
  if (model == "ionosphere") return {model, {{"features", 35}, {"obs", 351}}};
  throw ModelError("no synthetic template for model '" + model + "'");
}

Dataset synth_data(const SynthTemplate& tmpl, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto bern = [&](double p) { return std::bernoulli_distribution(p)(rng) ? 1.0 : 0.0; };
  auto logistic = [](double eta) { return 1.0 / (1.0 + std::exp(-eta)); };
  Dataset d;
  d.name = "synthetic:" + tmpl.model + ":" + std::to_string(seed);
  const std::string& m = tmpl.model;

  // True parameters are drawn from unit-scale versions of the priors so the
  // generated data stay in a well-conditioned range.
  if (m == "8schools") {
    const std::size_t n = tmpl.size("schools");
    const double mu = 5.0 * normal(rng), tau = std::exp(normal(rng) + 1.0);
    auto& y = d.columns["y"];
    auto& s = d.columns["sigma"];
    for (std::size_t i = 0; i < n; ++i) {
      const double sigma = 9.0 + 9.0 * std::uniform_real_distribution<double>(0, 1)(rng);
      const double theta = mu + tau * normal(rng);
      s.push_back(sigma);
      y.push_back(theta + sigma * normal(rng));
    }
  } else if (m == "credit" || m == "sonar" || m == "ionosphere") {
    const std::size_t k = tmpl.size("features"), n = tmpl.size("obs");
    std::vector<double> beta(k);
    for (double& b : beta) b = (m == "credit" ? std::exp(normal(rng) - 1.0) : 0.5) * normal(rng);
    std::vector<std::vector<double>> x(k, std::vector<double>(n));
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t r = 0; r < n; ++r) {
        // sonar / ionosphere carry an intercept column first
        x[j][r] = (m != "credit" && j == 0) ? 1.0 : normal(rng);
      }
    }
    auto& y = d.columns["y"];
    for (std::size_t r = 0; r < n; ++r) {
      double eta = 0.0;
      for (std::size_t j = 0; j < k; ++j) eta += beta[j] * x[j][r];
      y.push_back(bern(logistic(eta)));
    }
    for (std::size_t j = 0; j < k; ++j) d.columns["x" + std::to_string(j + 1)] = std::move(x[j]);
  } else if (m == "radon") {
    const std::size_t nc = tmpl.size("counties"), nh = tmpl.size("homes");
    if (nh < nc) throw ModelError("radon template: need at least one home per county");
    const double mu0 = normal(rng), a = normal(rng), b = normal(rng);
    const double sigma_y = std::exp(0.3 * normal(rng) - 0.5);
    std::vector<double> u(nc), mk(nc);
    for (std::size_t k = 0; k < nc; ++k) {
      u[k] = normal(rng);
      mk[k] = mu0 + a * u[k] + std::exp(0.3 * normal(rng) - 1.0) * normal(rng);
    }
    for (std::size_t j = 0; j < nh; ++j) {
      const std::size_t c = j < nc ? j : std::uniform_int_distribution<std::size_t>(0, nc - 1)(rng);
      const double x = bern(0.3);
      d.columns["county"].push_back(static_cast<double>(c));
      d.columns["floor"].push_back(x);
      d.columns["uranium"].push_back(u[c]);
      d.columns["log_radon"].push_back(mk[c] + b * x + sigma_y * normal(rng));
    }
  } else if (m == "movielens") {
    const std::size_t nu = tmpl.size("users"), na = tmpl.size("attributes"), nr = tmpl.size("ratings");
    std::vector<double> mu(na), lam(na);
    for (std::size_t j = 0; j < na; ++j) {
      mu[j] = normal(rng);
      lam[j] = normal(rng);
    }
    std::vector<std::vector<double>> z(nu, std::vector<double>(na));
    for (auto& row : z) {
      for (std::size_t j = 0; j < na; ++j) row[j] = mu[j] + std::exp(lam[j]) * normal(rng);
    }
    std::vector<std::vector<double>> x(na);
    for (std::size_t r = 0; r < nr; ++r) {
      const std::size_t user = r % nu;
      double eta = 0.0;
      for (std::size_t j = 0; j < na; ++j) {
        const double xj = bern(0.15);
        x[j].push_back(xj);
        eta += xj * z[user][j];
      }
      d.columns["user"].push_back(static_cast<double>(user));
      d.columns["y"].push_back(bern(logistic(eta)));
    }
    for (std::size_t j = 0; j < na; ++j) d.columns["x" + std::to_string(j + 1)] = std::move(x[j]);
  } else if (m == "irt") {
    const std::size_t ns = tmpl.size("students"), nq = tmpl.size("questions"), nr = tmpl.size("responses");
    std::vector<double> alpha(ns), beta(nq), gamma(nq);
    for (double& v : alpha) v = normal(rng);
    const double mu_b = normal(rng), sd_b = std::exp(0.5 * normal(rng)), sd_g = std::exp(0.5 * normal(rng) - 1.0);
    for (std::size_t q = 0; q < nq; ++q) {
      beta[q] = mu_b + sd_b * normal(rng);
      gamma[q] = std::exp(sd_g * normal(rng));
    }
    for (std::size_t r = 0; r < nr; ++r) {
      const std::size_t s = r % ns;
      const std::size_t q = std::uniform_int_distribution<std::size_t>(0, nq - 1)(rng);
      d.columns["student"].push_back(static_cast<double>(s));
      d.columns["question"].push_back(static_cast<double>(q));
      d.columns["y"].push_back(bern(logistic(gamma[q] * alpha[s] + beta[q])));
    }
  } else if (m == "seeds") {
    const std::size_t ng = tmpl.size("groups");
    const double a0 = -0.5 + 0.3 * normal(rng), a1 = 0.3 * normal(rng), a2 = 1.0 + 0.3 * normal(rng);
    const double a12 = -0.8 + 0.3 * normal(rng), sd_b = 0.3;
    for (std::size_t i = 0; i < ng; ++i) {
      const double x1 = (i * 2 >= ng) ? 1.0 : 0.0;
      const double x2 = (i % 2 == 1) ? 1.0 : 0.0;
      const int n = std::uniform_int_distribution<int>(5, 80)(rng);
      const double p = logistic(a0 + a1 * x1 + a2 * x2 + a12 * x1 * x2 + sd_b * normal(rng));
      d.columns["x1"].push_back(x1);
      d.columns["x2"].push_back(x2);
      d.columns["n"].push_back(n);
      d.columns["r"].push_back(static_cast<double>(std::binomial_distribution<int>(n, p)(rng)));
    }
  } else {
    throw ModelError("no synthetic template for model '" + m + "'");
  }
  return d;
}

Schema model_schema(const std::string& name, const Dataset* hint) {
  if (name == "8schools") return {{"y"}, {"sigma"}};
  if (name == "seeds") return {{"r", ColumnType::Integer}, {"n", ColumnType::Integer}, {"x1"}, {"x2"}};
  if (name == "radon") {
    return {{"county", ColumnType::Integer}, {"floor"}, {"uranium"}, {"log_radon"}};
  }
  if (name == "irt") {
    return {{"student", ColumnType::Integer}, {"question", ColumnType::Integer}, {"y", ColumnType::Integer}};
  }
  if (name == "credit" || name == "sonar" || name == "ionosphere" || name == "movielens") {
    const std::size_t fallback = name == "credit" ? 8 : name == "sonar" ? 61 : name == "ionosphere" ? 35 : 18;
    Schema s = prefixed_schema("x", header_count(hint, "x", fallback));
    s.push_back({"y", ColumnType::Integer});
    if (name == "movielens") s.push_back({"user", ColumnType::Integer});
    return s;
  }
  throw ModelError("unknown benchmark '" + name + "'");
}

ModelGraph make_model(const std::string& name, std::shared_ptr<const Dataset> data) {
  if (name == "funnel") return make_funnel(10);
  if (!data) throw ModelError(name + ": requires a data set");
  if (name == "8schools") return eight_schools(data);
  if (name == "credit") return credit(data);
  if (name == "radon") return radon(data);
  if (name == "movielens") return movielens(data);
  if (name == "irt") return irt(data);
  if (name == "seeds") return seeds(data);
  if (name == "sonar" || name == "ionosphere") return logistic_regression(name, data);
  throw ModelError("unknown benchmark '" + name + "'");
}

namespace {

// Reads the header row only, so prefixed column families can be sized.
Dataset header_of(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open dataset file '" + path + "'");
  std::string line;
  std::getline(in, line);
  Dataset d;
  for (const std::string& h : split_csv_line(line)) d.columns[h];
  return d;
}

}  // namespace

Benchmark build_benchmark(const std::string& name, const DataSource& source) {
  const auto& names = benchmark_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw ModelError("unknown benchmark '" + name + "'");
  }
  Benchmark b;
  if (name == "funnel") {
    b.graph = make_funnel(10);
    return b;
  }
  std::optional<std::string> path = source.path;
  if (!path && !source.synth_seed) {
    if (name == "8schools") path = data_dir() + "/eight_schools.csv";
    if (name == "seeds") path = data_dir() + "/seeds.csv";
  }
  if (path) {
    const Dataset hint = header_of(*path);
    b.data = std::make_shared<const Dataset>(load_dataset(*path, model_schema(name, &hint)));
  } else {
    b.data = std::make_shared<const Dataset>(synth_data(default_template(name), source.synth_seed.value_or(1)));
    b.synthetic = true;
  }
  b.graph = make_model(name, b.data);
  return b;
}

// ---------------------------------------------------------------------------

ModelGraph make_funnel(std::size_t dim) {
  if (dim < 1) throw ModelError("funnel: dimension must be >= 1");
  ModelGraph g;
  g.name = dim == 10 ? "funnel" : "funnel" + std::to_string(dim);
  g.sites.push_back(normal_site("x1", 0.0, 3.0));
  for (std::size_t k = 1; k < dim; ++k) {
    LatentSite s;
    s.name = "x" + std::to_string(k + 1);
    s.parents = {0};
    s.mean = ScalarFn::constant(0.0);
    s.log_scale = ScalarFn::from([](auto pa) { return 0.5 * pa[0]; });
    s.affine = true;
    g.sites.push_back(std::move(s));
  }
  g.log_normalizer = 0.0;
  return g;
}

ModelGraph make_standard_normal(std::size_t dim) {
  ModelGraph g;
  g.name = "std_normal" + std::to_string(dim);
  for (std::size_t k = 0; k < dim; ++k) g.sites.push_back(normal_site("z" + std::to_string(k + 1), 0.0, 1.0));
  g.log_normalizer = 0.0;
  return g;
}

namespace {

ModelGraph random_chain(std::size_t dim, std::uint64_t seed, bool affine) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ModelGraph g;
  g.name = std::string(affine ? "affine_chain" : "nonlinear_chain") + std::to_string(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    LatentSite s;
    s.name = "z" + std::to_string(i + 1);
    if (i > 0) s.parents.push_back(std::uniform_int_distribution<std::size_t>(0, i - 1)(rng));
    if (i > 1) {
      std::size_t p = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
      if (p != s.parents[0]) s.parents.push_back(p);
    }
    const double a = normal(rng), c = 0.3 * normal(rng);
    double b[2] = {0.5 * normal(rng), 0.5 * normal(rng)};
    double e[2] = {0.2 * normal(rng), 0.2 * normal(rng)};
    const std::size_t np = s.parents.size();
    if (affine) {
      s.mean = ScalarFn::from([=](auto pa) {
        return dot(a, std::span<const double>(b, np), pa);
      });
      s.log_scale = ScalarFn::from([=](auto pa) {
        return dot(c, std::span<const double>(e, np), pa);
      });
    } else {
      s.mean = ScalarFn::from([=](auto pa) {
        using T = std::decay_t<decltype(pa[0])>;
        T acc = T(a);
        for (std::size_t k = 0; k < np; ++k) acc = acc + b[k] * pa[k] + 0.1 * square(pa[k]);
        return acc;
      });
      s.log_scale = ScalarFn::from([=](auto pa) {
        using T = std::decay_t<decltype(pa[0])>;
        T acc = T(c);
        for (std::size_t k = 0; k < np; ++k) acc = acc + 0.8 * sigmoid(e[k] * 5.0 * pa[k]) - 0.4;
        return acc;
      });
    }
    s.affine = affine;
    g.sites.push_back(std::move(s));
  }
  return g;
}

}  // namespace

ModelGraph make_affine_chain(std::size_t dim, std::uint64_t seed) { return random_chain(dim, seed, true); }
ModelGraph make_nonlinear_chain(std::size_t dim, std::uint64_t seed) { return random_chain(dim, seed, false); }

}  // namespace flowvi
