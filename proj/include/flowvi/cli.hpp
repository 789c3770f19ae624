#pragma once

// Config-driven harness: run configs, result records, the CSV ledger and the
// subcommands behind tools/flowvi.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowvi/benchmarks.hpp"
#include "flowvi/elbo.hpp"
#include "flowvi/equivalence.hpp"

namespace flowvi::cli {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kArtifactVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kConfigError = 2, kTrainingFailure = 3, kCertificationFailure = 4 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string model;
  std::string family;            // MF, FR, MF-VIP, FR-VIP, FAF, IAF, GFAF, MIF
  std::optional<MifFlags> mif;   // MIF only; defaults to all-on
  std::size_t hidden = 0;
  TrainConfig train;
  std::string output;            // record path; empty = none
  std::optional<std::string> data_path;
  std::optional<std::uint64_t> synth_seed;
  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_run_config(const json& j);  // throws ConfigError
RunConfig load_run_config(const std::string& path);
json to_json(const RunConfig& c);
json to_json(const TrainConfig& c);
TrainConfig parse_train_config(const json& j, TrainConfig base = {});

// Desk budget: 20k iterations, 64 draws, 1e5 eval draws, rates {1e-2, 1e-3, 1e-4}.
void apply_quick(TrainConfig& c);

FlowSpec make_spec(const RunConfig& c, std::size_t dim);
Benchmark load_benchmark(const RunConfig& c);

// FNV-1a over the canonical config JSON (output path excluded).
std::string fingerprint(const RunConfig& c);

struct ResultRecord {
  RunConfig config;
  RunResult result;
  std::string fingerprint;
  std::string artifact_version = kArtifactVersion;
  std::string note;          // e.g. which eps-cond sub-variant won
  // provenance: excluded from the payload
  std::string started_at;
  std::string finished_at;
};

json payload_json(const ResultRecord& r);  // deterministic part
json to_json(const ResultRecord& r);       // payload + provenance
ResultRecord record_from_json(const json& j);
json to_json(const RunResult& r);
RunResult run_result_from_json(const json& j);
json to_json(const FlowSpec& s);
FlowSpec flow_spec_from_json(const json& j);
json to_json(const EquivReport& r);
EquivReport equiv_report_from_json(const json& j);

void write_json(const std::string& path, const json& j);
json read_json(const std::string& path);

// One CSV row per record, appended under an exclusive file lock.
void append_ledger(const std::string& path, const ResultRecord& r);
std::string ledger_header();
std::string ledger_row(const ResultRecord& r);

std::string utc_now();

// --- subcommands --------------------------------------------------------

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  bool quick = false;
  std::string out;  // overrides config output / default directory
};

int cmd_run(const std::string& config_path, const CommonOptions& opt);

struct AblationRow {
  std::string variant;
  std::string label;
  bool failed = false;
  std::string failure;
  double neg_elbo = 0.0;
  double se = 0.0;
  double learning_rate = 0.0;
  std::string note;
};

// MIF, MIF(eps-cond), MIF(w/o t), MIF(w/o Prior), MIF(w/o Order), IAF, FR-VIP.
std::vector<AblationRow> run_ablation(const Benchmark& bench, const TrainConfig& train, std::size_t hidden = 0);

struct CapacityRow {
  std::size_t hidden = 0;
  std::string variant;  // "MIF" or "eps-cond"
  bool failed = false;
  double neg_elbo = 0.0;
  double se = 0.0;
  std::string note;
};
std::vector<CapacityRow> run_capacity_sweep(const Benchmark& bench, const TrainConfig& train,
                                            const std::vector<std::size_t>& widths);

// eps-cond with and without prior inputs; returns the better run and names it.
RunResult best_eps_cond(const ModelGraph& model, const TrainConfig& train, std::size_t hidden, std::string& note);

int cmd_ablation(const std::string& model, const std::string& base_config, const CommonOptions& opt);
int cmd_capacity_sweep(const std::string& model, const std::vector<std::size_t>& widths,
                       const std::string& base_config, const CommonOptions& opt);

struct CertifyOptions {
  std::optional<double> tolerance;  // overrides every check's tolerance
  bool mutate = false;              // certify against a deliberately broken composition
  std::uint64_t trials = 1000;
  std::uint64_t probes = 500;
};
std::vector<EquivReport> run_certification(const CertifyOptions& c, std::uint64_t seed);
int cmd_certify(const CertifyOptions& c, const CommonOptions& opt);

// Draws n samples from a trained record; writes z1..zD with a header row.
// Returns the -ELBO (= KL for the funnel) over `kl_samples` fresh draws.
int cmd_emit_samples(const std::string& params_file, std::size_t n, const CommonOptions& opt,
                     std::size_t kl_samples = 100000);
std::vector<std::vector<double>> draw_samples(const ModelGraph& model, const FlowSpec& spec,
                                              std::span<const double> params, std::size_t n, std::uint64_t seed);

}  // namespace flowvi::cli
