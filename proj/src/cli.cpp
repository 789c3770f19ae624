#include "flowvi/cli.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

namespace flowvi::cli {

namespace fs = std::filesystem;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
void get_opt(const json& j, const std::string& key, T& out, const std::string& where) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

const std::set<std::string> kFamilies{"MF", "FR", "MF-VIP", "FR-VIP", "FAF", "IAF", "GFAF", "MIF"};

// nlohmann cannot hold inf/nan
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num_or(const json& j, double fallback) { return j.is_null() ? fallback : j.get<double>(); }

}  // namespace

TrainConfig parse_train_config(const json& j, TrainConfig c) {
  const std::string w = "train";
  reject_unknown(j, {"iterations", "mc_samples", "learning_rates", "seed", "eval_samples", "adam", "init_std",
                     "clip_norm", "divergence_window", "trace_points"},
                 w);
  get_opt(j, "iterations", c.iterations, w);
  get_opt(j, "mc_samples", c.mc_samples, w);
  get_opt(j, "learning_rates", c.learning_rates, w);
  get_opt(j, "seed", c.seed, w);
  get_opt(j, "eval_samples", c.eval_samples, w);
  get_opt(j, "init_std", c.init_std, w);
  get_opt(j, "clip_norm", c.clip_norm, w);
  get_opt(j, "divergence_window", c.divergence_window, w);
  get_opt(j, "trace_points", c.trace_points, w);
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    reject_unknown(a, {"beta1", "beta2", "epsilon"}, "train.adam");
    get_opt(a, "beta1", c.adam.beta1, "train.adam");
    get_opt(a, "beta2", c.adam.beta2, "train.adam");
    get_opt(a, "epsilon", c.adam.epsilon, "train.adam");
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"mc_samples", c.mc_samples},
          {"learning_rates", c.learning_rates},
          {"seed", c.seed},
          {"eval_samples", c.eval_samples},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
          {"init_std", c.init_std},
          {"clip_norm", c.clip_norm},
          {"divergence_window", c.divergence_window},
          {"trace_points", c.trace_points}};
}

namespace {

json flags_json(const MifFlags& f) {
  return {{"use_translation", f.use_translation},
          {"use_prior_inputs", f.use_prior_inputs},
          {"respect_order", f.respect_order},
          {"eps_conditioning", f.eps_conditioning}};
}

MifFlags flags_from_json(const json& j, const std::string& w) {
  reject_unknown(j, {"use_translation", "use_prior_inputs", "respect_order", "eps_conditioning"}, w);
  MifFlags f;
  get_opt(j, "use_translation", f.use_translation, w);
  get_opt(j, "use_prior_inputs", f.use_prior_inputs, w);
  get_opt(j, "respect_order", f.respect_order, w);
  get_opt(j, "eps_conditioning", f.eps_conditioning, w);
  return f;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  const std::string w = "config";
  reject_unknown(j, {"schema_version", "model", "family", "mif_flags", "hidden", "train", "output", "data"}, w);
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  const int ver = get<int>(j, "schema_version", w);
  if (ver != kSchemaVersion) {
    throw ConfigError("config: schema_version " + std::to_string(ver) + " is not supported (expected " +
                      std::to_string(kSchemaVersion) + ")");
  }
  RunConfig c;
  c.model = get<std::string>(j, "model", w);
  const auto& names = benchmark_names();
  if (std::find(names.begin(), names.end(), c.model) == names.end()) {
    throw ConfigError("config.model: unknown model '" + c.model + "'");
  }
  c.family = get<std::string>(j, "family", w);
  if (!kFamilies.count(c.family)) throw ConfigError("config.family: unknown family '" + c.family + "'");
  if (j.contains("mif_flags")) {
    if (c.family != "MIF") throw ConfigError("config.mif_flags: only valid with family MIF");
    c.mif = flags_from_json(j.at("mif_flags"), "config.mif_flags");
  } else if (c.family == "MIF") {
    c.mif = MifFlags{};
  }
  get_opt(j, "hidden", c.hidden, w);
  if (c.hidden && (c.family == "MF" || c.family == "FR" || c.family == "MF-VIP" || c.family == "FR-VIP")) {
    throw ConfigError("config.hidden: only autoregressive families have conditioners");
  }
  if (j.contains("train")) c.train = parse_train_config(j.at("train"));
  get_opt(j, "output", c.output, w);
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"path", "synth_seed"}, "config.data");
    if (d.contains("path")) c.data_path = get<std::string>(d, "path", "config.data");
    if (d.contains("synth_seed")) c.synth_seed = get<std::uint64_t>(d, "synth_seed", "config.data");
    if (c.data_path && c.synth_seed) throw ConfigError("config.data: give either path or synth_seed, not both");
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  json j{{"schema_version", kSchemaVersion},
         {"model", c.model},
         {"family", c.family},
         {"hidden", c.hidden},
         {"train", to_json(c.train)},
         {"output", c.output}};
  if (c.mif) j["mif_flags"] = flags_json(*c.mif);
  if (c.data_path || c.synth_seed) {
    json d = json::object();
    if (c.data_path) d["path"] = *c.data_path;
    if (c.synth_seed) d["synth_seed"] = *c.synth_seed;
    j["data"] = d;
  }
  return j;
}

void apply_quick(TrainConfig& c) {
  c.iterations = 20000;
  c.mc_samples = 64;
  c.eval_samples = 100000;
  c.learning_rates = {1e-2, 1e-3, 1e-4};
}

FlowSpec make_spec(const RunConfig& c, std::size_t dim) {
  if (c.family == "MIF") return FlowSpec::make_mif(dim, c.mif.value_or(MifFlags{}), c.hidden);
  return parse_family(c.family, dim, c.hidden);
}

Benchmark load_benchmark(const RunConfig& c) {
  DataSource src;
  src.path = c.data_path;
  src.synth_seed = c.synth_seed;
  return build_benchmark(c.model, src);
}

std::string fingerprint(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

json to_json(const FlowSpec& s) {
  json j{{"family", family_name(s.family)}, {"dim", s.dim}, {"hidden", s.hidden}, {"vip", s.vip},
         {"label", s.label()}};
  if (s.mif) j["mif_flags"] = flags_json(*s.mif);
  return j;
}

FlowSpec flow_spec_from_json(const json& j) {
  const std::string fam = j.at("family").get<std::string>();
  const auto dim = j.at("dim").get<std::size_t>();
  const auto hidden = j.at("hidden").get<std::size_t>();
  FlowSpec s;
  if (fam == "MIF") {
    s = FlowSpec::make_mif(dim, flags_from_json(j.at("mif_flags"), "spec.mif_flags"), hidden);
  } else {
    s = parse_family(fam, dim, hidden);
    if (j.at("vip").get<bool>()) s = parse_family(fam + "-VIP", dim);
  }
  return s;
}

json to_json(const RunResult& r) {
  json trace = json::array();
  for (const auto& [it, v] : r.trace) trace.push_back({it, v});
  json sweep = json::array();
  for (const SweepEntry& e : r.sweep) {
    sweep.push_back({{"learning_rate", e.learning_rate},
                     {"seed", e.seed},
                     {"failed", e.failed},
                     {"failure", e.failure},
                     {"final_elbo", num(e.final_elbo)},
                     {"final_se", e.final_se}});
  }
  return {{"model", r.model},
          {"spec", to_json(r.spec)},
          {"learning_rate", r.learning_rate},
          {"seed", r.seed},
          {"failed", r.failed},
          {"failure", r.failure},
          {"final_elbo", num(r.final_elbo)},
          {"final_se", r.final_se},
          {"neg_elbo", num(r.neg_elbo())},
          {"trace", trace},
          {"lambda", r.lambda},
          {"params", r.params},
          {"clip_events", r.clip_events},
          {"clamp_events", r.clamp_events},
          {"skipped_draws", r.skipped_draws},
          {"sweep", sweep}};
}

RunResult run_result_from_json(const json& j) {
  RunResult r;
  r.model = j.at("model").get<std::string>();
  r.spec = flow_spec_from_json(j.at("spec"));
  r.learning_rate = j.at("learning_rate").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.failed = j.at("failed").get<bool>();
  r.failure = j.at("failure").get<std::string>();
  r.final_elbo = num_or(j.at("final_elbo"), -std::numeric_limits<double>::infinity());
  r.final_se = j.at("final_se").get<double>();
  for (const json& t : j.at("trace")) r.trace.emplace_back(t.at(0).get<std::size_t>(), t.at(1).get<double>());
  r.lambda = j.at("lambda").get<std::vector<double>>();
  r.params = j.at("params").get<std::vector<double>>();
  r.clip_events = j.at("clip_events").get<std::size_t>();
  r.clamp_events = j.at("clamp_events").get<std::size_t>();
  r.skipped_draws = j.at("skipped_draws").get<std::size_t>();
  for (const json& e : j.at("sweep")) {
    r.sweep.push_back({e.at("learning_rate").get<double>(), e.at("seed").get<std::uint64_t>(),
                       e.at("failed").get<bool>(), e.at("failure").get<std::string>(),
                       num_or(e.at("final_elbo"), -std::numeric_limits<double>::infinity()),
                       e.at("final_se").get<double>()});
  }
  return r;
}

json payload_json(const ResultRecord& r) {
  return {{"schema_version", kSchemaVersion},
          {"artifact_version", r.artifact_version},
          {"fingerprint", r.fingerprint},
          {"config", to_json(r.config)},
          {"result", to_json(r.result)},
          {"note", r.note}};
}

json to_json(const ResultRecord& r) {
  json j = payload_json(r);
  j["provenance"] = {{"started_at", r.started_at},
                     {"finished_at", r.finished_at},
                     {"wall_seconds", r.result.wall_seconds}};
  return j;
}

ResultRecord record_from_json(const json& j) {
  ResultRecord r;
  try {
    r.config = parse_run_config(j.at("config"));
    r.result = run_result_from_json(j.at("result"));
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.artifact_version = j.at("artifact_version").get<std::string>();
    r.note = j.value("note", "");
    if (j.contains("provenance")) {
      const json& p = j.at("provenance");
      r.started_at = p.value("started_at", "");
      r.finished_at = p.value("finished_at", "");
      r.result.wall_seconds = p.value("wall_seconds", 0.0);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed result record: ") + e.what());
  }
  return r;
}

json to_json(const EquivReport& r) {
  json fails = json::array();
  for (const auto& f : r.failures) fails.push_back({{"trial", f.trial}, {"coordinate", f.coordinate}, {"error", num(f.error)}});
  return {{"check", r.check},
          {"model", r.model},
          {"trials", r.trials},
          {"tolerance", r.tolerance},
          {"max_z_error", num(r.max_z_error)},
          {"max_logdet_error", num(r.max_logdet_error)},
          {"out_of_domain", r.out_of_domain},
          {"failures", fails},
          {"passed", r.passed}};
}

EquivReport equiv_report_from_json(const json& j) {
  const double inf = std::numeric_limits<double>::infinity();
  EquivReport r;
  r.check = j.at("check").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.trials = j.at("trials").get<std::uint64_t>();
  r.tolerance = j.at("tolerance").get<double>();
  r.max_z_error = num_or(j.at("max_z_error"), inf);
  r.max_logdet_error = num_or(j.at("max_logdet_error"), inf);
  r.out_of_domain = j.value("out_of_domain", std::uint64_t{0});
  for (const json& f : j.at("failures")) {
    r.failures.push_back({f.at("trial").get<std::uint64_t>(), f.at("coordinate").get<std::size_t>(),
                          num_or(f.at("error"), inf)});
  }
  r.passed = j.at("passed").get<bool>();
  return r;
}

void write_json(const std::string& path, const json& j) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, p);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

std::string ledger_header() {
  return "fingerprint,model,family,label,hidden,seed,learning_rate,neg_elbo,se,failed,note";
}

std::string ledger_row(const ResultRecord& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << r.fingerprint << ',' << r.config.model << ',' << r.config.family << ',' << '"' << r.result.spec.label()
     << '"' << ',' << r.config.hidden << ',' << r.result.seed << ',' << r.result.learning_rate << ',';
  if (r.result.failed) {
    os << ",,1,";
  } else {
    os << r.result.neg_elbo() << ',' << r.result.final_se << ",0,";
  }
  os << '"' << r.note << '"';
  return os.str();
}

void append_ledger(const std::string& path, const ResultRecord& r) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("cannot open ledger '" + path + "'");
  if (::flock(fd, LOCK_EX) != 0) {
    ::close(fd);
    throw std::runtime_error("cannot lock ledger '" + path + "'");
  }
  std::string text;
  if (::lseek(fd, 0, SEEK_END) == 0) text = ledger_header() + "\n";
  text += ledger_row(r) + "\n";
  const char* data = text.data();
  std::size_t left = text.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, data, left);
    if (n <= 0) break;
    data += n;
    left -= static_cast<std::size_t>(n);
  }
  ::flock(fd, LOCK_UN);
  ::close(fd);
  if (left) throw std::runtime_error("short write to ledger '" + path + "'");
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// --- subcommands --------------------------------------------------------

namespace {

std::string ledger_path_for(const std::string& record_path) {
  const fs::path p(record_path);
  return (p.has_parent_path() ? p.parent_path() / "results.csv" : fs::path("results.csv")).string();
}

TrainConfig effective_train(TrainConfig t, const CommonOptions& opt) {
  if (opt.quick) apply_quick(t);
  if (opt.seed) t.seed = *opt.seed;
  t.jobs = std::max(1u, opt.jobs);
  return t;
}

std::string fmt(double v, int prec = 4) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace

int cmd_run(const std::string& config_path, const CommonOptions& opt) {
  RunConfig cfg;
  Benchmark bench;
  FlowSpec spec;
  try {
    cfg = load_run_config(config_path);
    cfg.train = effective_train(cfg.train, opt);
    bench = load_benchmark(cfg);
    spec = make_spec(cfg, bench.graph.dim());
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  const std::string out = !opt.out.empty() ? opt.out
                          : !cfg.output.empty() ? cfg.output
                                                : "flowvi_run_" + fingerprint(cfg) + ".json";
  for (const std::string& w : flow_warnings(spec, bench.graph)) std::cerr << "warning: " << w << "\n";

  ResultRecord rec;
  rec.config = cfg;
  rec.config.train.jobs = 1;
  rec.fingerprint = fingerprint(rec.config);
  rec.started_at = utc_now();
  try {
    rec.result = lr_sweep(bench.graph, spec, cfg.train);
  } catch (const EstimationError& e) {
    std::cerr << "training failed (" << cfg.model << ", " << spec.label() << "): " << e.what() << "\n";
    return kTrainingFailure;
  }
  rec.finished_at = utc_now();
  if (bench.synthetic) rec.note = "synthetic data";
  write_json(out, to_json(rec));
  append_ledger(ledger_path_for(out), rec);
  std::cout << cfg.model << " " << spec.label() << ": -ELBO = " << fmt(rec.result.neg_elbo()) << " +- "
            << fmt(rec.result.final_se) << " (lr " << rec.result.learning_rate << ") -> " << out << "\n";
  return kOk;
}

RunResult best_eps_cond(const ModelGraph& model, const TrainConfig& train, std::size_t hidden, std::string& note) {
  const std::size_t d = model.dim();
  MifFlags with_prior{.eps_conditioning = true};
  MifFlags no_prior{.use_prior_inputs = false, .eps_conditioning = true};
  std::optional<RunResult> a, b;
  std::string err;
  try {
    a = lr_sweep(model, FlowSpec::make_mif(d, with_prior, hidden), train);
  } catch (const EstimationError& e) {
    err = e.what();
  }
  try {
    b = lr_sweep(model, FlowSpec::make_mif(d, no_prior, hidden), train);
  } catch (const EstimationError& e) {
    err += e.what();
  }
  if (!a && !b) throw EstimationError("eps-cond: both sub-variants failed: " + err);
  const bool pick_a = a && (!b || a->final_elbo >= b->final_elbo);
  note = std::string("eps-cond sub-variant: ") + (pick_a ? "with prior inputs" : "without prior inputs");
  if (a && b) {
    note += " (with " + fmt(a->neg_elbo()) + ", without " + fmt(b->neg_elbo()) + ")";
  }
  return pick_a ? *a : *b;
}

std::vector<AblationRow> run_ablation(const Benchmark& bench, const TrainConfig& train, std::size_t hidden) {
  const ModelGraph& g = bench.graph;
  const std::size_t d = g.dim();
  struct Variant {
    std::string name;
    std::optional<FlowSpec> spec;  // empty = eps-cond (best of two)
  };
  std::vector<Variant> variants{
      {"MIF", FlowSpec::make_mif(d, {}, hidden)},
      {"MIF(eps-cond)", std::nullopt},
      {"MIF(w/o t)", FlowSpec::make_mif(d, {.use_translation = false}, hidden)},
      {"MIF(w/o Prior)", FlowSpec::make_mif(d, {.use_prior_inputs = false}, hidden)},
      {"MIF(w/o Order)", FlowSpec::make_mif(d, {.respect_order = false}, hidden)},
      {"IAF", FlowSpec::make(FamilyTag::IAF, d, hidden)},
      {"FR-VIP", FlowSpec::make_vip(FamilyTag::FR, d)},
  };
  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    AblationRow row;
    row.variant = v.name;
    try {
      RunResult r;
      if (v.spec) {
        row.label = v.spec->label();
        for (const std::string& w : flow_warnings(*v.spec, g)) row.note += w;
        r = lr_sweep(g, *v.spec, train);
      } else {
        r = best_eps_cond(g, train, hidden, row.note);
        row.label = r.spec.label();
      }
      row.neg_elbo = r.neg_elbo();
      row.se = r.final_se;
      row.learning_rate = r.learning_rate;
    } catch (const std::exception& e) {
      row.failed = true;
      row.failure = e.what();
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<CapacityRow> run_capacity_sweep(const Benchmark& bench, const TrainConfig& train,
                                            const std::vector<std::size_t>& widths) {
  if (!std::is_sorted(widths.begin(), widths.end())) throw ConfigError("capacity sweep: widths must be ascending");
  std::vector<CapacityRow> rows;
  const std::size_t d = bench.graph.dim();
  for (std::size_t h : widths) {
    for (const std::string variant : {"MIF", "eps-cond"}) {
      CapacityRow row;
      row.hidden = h;
      row.variant = variant;
      try {
        const RunResult r = variant == "MIF" ? lr_sweep(bench.graph, FlowSpec::make_mif(d, {}, h), train)
                                             : best_eps_cond(bench.graph, train, h, row.note);
        row.neg_elbo = r.neg_elbo();
        row.se = r.final_se;
      } catch (const std::exception& e) {
        row.failed = true;
        row.note = e.what();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

namespace {

struct BaseInputs {
  TrainConfig train;
  std::optional<std::string> data_path;
  std::optional<std::uint64_t> synth_seed;
};

// Base config: a full run config (family ignored) or just {"schema_version", "train"}.
BaseInputs load_base(const std::string& path) {
  BaseInputs b;
  if (path.empty()) return b;
  const json j = read_json(path);
  if (j.contains("model")) {
    const RunConfig c = parse_run_config(j);
    b.train = c.train;
    b.data_path = c.data_path;
    b.synth_seed = c.synth_seed;
    return b;
  }
  reject_unknown(j, {"schema_version", "train"}, "base config");
  if (j.value("schema_version", 0) != kSchemaVersion) throw ConfigError("base config: bad schema_version");
  if (j.contains("train")) b.train = parse_train_config(j.at("train"));
  return b;
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

}  // namespace

int cmd_ablation(const std::string& model, const std::string& base_config, const CommonOptions& opt) {
  BaseInputs base;
  Benchmark bench;
  try {
    base = load_base(base_config);
    base.train = effective_train(base.train, opt);
    bench = build_benchmark(model, {base.data_path, base.synth_seed});
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  const std::vector<AblationRow> rows = run_ablation(bench, base.train);
  std::ostringstream csv;
  csv << "model,variant,label,neg_elbo,se,learning_rate,failed,note\n" << std::setprecision(10);
  for (const AblationRow& r : rows) {
    csv << model << ",\"" << r.variant << "\",\"" << r.label << "\",";
    if (r.failed) {
      csv << ",,," << 1 << ",\"" << r.failure << "\"\n";
    } else {
      csv << r.neg_elbo << ',' << r.se << ',' << r.learning_rate << ",0,\"" << r.note << "\"\n";
    }
    std::cout << std::left << std::setw(16) << r.variant << " "
              << (r.failed ? "FAILED: " + r.failure : fmt(r.neg_elbo) + " +- " + fmt(r.se)) << "\n";
  }
  const std::string out = opt.out.empty() ? "ablation_" + model + ".csv" : opt.out;
  write_text(out, csv.str());
  return kOk;
}

int cmd_capacity_sweep(const std::string& model, const std::vector<std::size_t>& widths,
                       const std::string& base_config, const CommonOptions& opt) {
  BaseInputs base;
  Benchmark bench;
  try {
    base = load_base(base_config);
    base.train = effective_train(base.train, opt);
    bench = build_benchmark(model, {base.data_path, base.synth_seed});
    if (widths.empty() || !std::is_sorted(widths.begin(), widths.end())) {
      throw ConfigError("widths must be a non-empty ascending list");
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  const std::vector<CapacityRow> rows = run_capacity_sweep(bench, base.train, widths);
  std::ostringstream csv;
  csv << "model,hidden,variant,neg_elbo,se,failed,note\n" << std::setprecision(10);
  bool any_failed = false;
  for (const CapacityRow& r : rows) {
    any_failed |= r.failed;
    csv << model << ',' << r.hidden << ',' << r.variant << ',';
    if (r.failed) {
      csv << ",,1,\"" << r.note << "\"\n";
    } else {
      csv << r.neg_elbo << ',' << r.se << ",0,\"" << r.note << "\"\n";
    }
    std::cout << "h=" << r.hidden << " " << r.variant << ": " << (r.failed ? "FAILED" : fmt(r.neg_elbo)) << "\n";
  }
  const std::string out = opt.out.empty() ? "capacity_" + model + ".csv" : opt.out;
  write_text(out, csv.str());
  return any_failed ? kTrainingFailure : kOk;
}

std::vector<EquivReport> run_certification(const CertifyOptions& c, std::uint64_t seed) {
  auto tol = [&](double dflt) { return c.tolerance.value_or(dflt); };
  const ModelGraph funnel = build_benchmark("funnel").graph;
  const ModelGraph schools = build_benchmark("8schools").graph;
  const ModelGraph chain = make_affine_chain(8, seed);
  const ModelGraph nonlin = make_nonlinear_chain(8, seed);
  const Theorem1Mutation mut = c.mutate ? Theorem1Mutation::DropOneMinusLambda : Theorem1Mutation::None;

  std::vector<EquivReport> out;
  out.push_back(check_lemma1(c.trials, 5, tol(1e-10), seed));
  for (const ModelGraph* g : {&funnel, &schools, &chain, &nonlin}) {
    out.push_back(check_theorem1(*g, c.trials, tol(1e-8), seed, mut));
  }
  for (const ModelGraph* g : {&funnel, &schools, &chain}) out.push_back(check_corollary1(*g, c.probes, tol(1e-10), seed));
  for (const ModelGraph* g : {&funnel, &schools, &chain}) out.push_back(check_kl_identity(*g, c.trials, tol(1e-9), seed));
  return out;
}

int cmd_certify(const CertifyOptions& c, const CommonOptions& opt) {
  const std::uint64_t seed = opt.seed.value_or(1);
  std::vector<EquivReport> reports;
  try {
    if (c.tolerance && !(*c.tolerance >= 0)) throw ConfigError("tolerance must be >= 0");
    reports = run_certification(c, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  json sections = json::object();
  bool all = true;
  for (const EquivReport& r : reports) {
    all &= r.passed;
    sections[r.check].push_back(to_json(r));
    std::cout << (r.passed ? "passed " : "FAILED ") << r.check << " [" << r.model << "] max z err "
              << r.max_z_error << ", max logdet err " << r.max_logdet_error << " (tol " << r.tolerance
              << ")\n";
  }
  json doc{{"schema_version", kSchemaVersion},
           {"artifact_version", kArtifactVersion},
           {"seed", seed},
           {"mutated", c.mutate},
           {"passed", all},
           {"checks", sections}};
  const std::string out = opt.out.empty() ? "certify.json" : opt.out;
  write_json(out, doc);
  return all ? kOk : kCertificationFailure;
}

std::vector<std::vector<double>> draw_samples(const ModelGraph& model, const FlowSpec& spec,
                                              std::span<const double> params, std::size_t n, std::uint64_t seed) {
  const ParamLayout layout(spec);
  std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5A3Du};
  std::mt19937_64 rng(ss);
  std::normal_distribution<double> n01;
  std::vector<double> eps(spec.dim);
  std::vector<std::vector<double>> out;
  out.reserve(n);
  while (out.size() < n) {
    for (double& e : eps) e = n01(rng);
    try {
      out.push_back(sample_family<double>(spec, layout, model, params, eps).z);
    } catch (const ad::NumericDomainError&) {
    }
  }
  return out;
}

int cmd_emit_samples(const std::string& params_file, std::size_t n, const CommonOptions& opt,
                     std::size_t kl_samples) {
  ResultRecord rec;
  Benchmark bench;
  try {
    if (!fs::exists(params_file)) throw ConfigError("params file '" + params_file + "' does not exist");
    rec = record_from_json(read_json(params_file));
    if (rec.result.failed) throw ConfigError("params file holds a failed run");
    bench = load_benchmark(rec.config);
    if (ParamLayout(rec.result.spec).size() != rec.result.params.size()) {
      throw ConfigError("params file: parameter count does not match the family");
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  const std::uint64_t seed = opt.seed.value_or(1);
  const auto rows = draw_samples(bench.graph, rec.result.spec, rec.result.params, n, seed);
  std::ostringstream csv;
  csv << std::setprecision(17);
  for (std::size_t i = 0; i < bench.graph.dim(); ++i) csv << (i ? "," : "") << "z" << i + 1;
  csv << "\n";
  for (const auto& z : rows) {
    for (std::size_t i = 0; i < z.size(); ++i) csv << (i ? "," : "") << z[i];
    csv << "\n";
  }
  const std::string out = opt.out.empty() ? "samples.csv" : opt.out;
  write_text(out, csv.str());
  if (kl_samples > 0) {
    const ElboEstimate e = final_eval(bench.graph, rec.result.spec, rec.result.params, kl_samples, seed);
    const double log_z = bench.graph.log_normalizer.value_or(std::numeric_limits<double>::quiet_NaN());
    std::cout << rec.result.spec.label() << ": " << n << " samples -> " << out;
    if (std::isfinite(log_z)) std::cout << "; KL estimate " << fmt(log_z - e.elbo) << " +- " << fmt(e.se);
    std::cout << "\n";
  }
  return kOk;
}

}  // namespace flowvi::cli
