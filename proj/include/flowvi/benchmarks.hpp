#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowvi/model.hpp"

namespace flowvi {

enum class ColumnType { Real, Integer };

struct ColumnSpec {
  std::string name;
  ColumnType type = ColumnType::Real;
};
using Schema = std::vector<ColumnSpec>;

// Comma-separated text with a header row. Only the schema's columns are kept;
// extra columns are ignored.
Dataset load_dataset(const std::string& path, const Schema& schema);
void save_dataset(const std::string& path, const Dataset& data);

// Shape of a synthetic data set; sizes are keyed by name (e.g. "features").
struct SynthTemplate {
  std::string model;
  std::map<std::string, std::size_t> sizes;
  std::size_t size(const std::string& key) const;
};

SynthTemplate default_template(const std::string& model);

// Ancestral sampling from the model's generative process. Deterministic per seed.
Dataset synth_data(const SynthTemplate& tmpl, std::uint64_t seed);

struct DataSource {
  std::optional<std::string> path;          // explicit data file
  std::optional<std::uint64_t> synth_seed;  // force synthetic data
};

struct Benchmark {
  ModelGraph graph;
  std::shared_ptr<const Dataset> data;  // null for data-free models
  bool synthetic = false;
};

const std::vector<std::string>& benchmark_names();

// Builds one of: 8schools, credit, funnel, radon, movielens, irt, seeds, sonar,
// ionosphere. Without a DataSource, 8schools and seeds read the bundled files
// and the rest use synthetic data with seed 1.
Benchmark build_benchmark(const std::string& name, const DataSource& source = {});

// Builders for a given data set (columns must match the model's schema).
ModelGraph make_model(const std::string& name, std::shared_ptr<const Dataset> data);
Schema model_schema(const std::string& name, const Dataset* header_hint = nullptr);

// Small models used by tests and certification.
ModelGraph make_funnel(std::size_t dim);
ModelGraph make_standard_normal(std::size_t dim);
// Random chain whose f_i and log g_i are affine in up to two earlier sites.
ModelGraph make_affine_chain(std::size_t dim, std::uint64_t seed);
// Same graph shape with smooth non-affine f_i and log g_i.
ModelGraph make_nonlinear_chain(std::size_t dim, std::uint64_t seed);

// Root directory for bundled data: $FLOWVI_DATA_DIR or the source tree's data/.
std::string data_dir();

}  // namespace flowvi
