#include "flowvi/model.hpp"

#include <numeric>

namespace flowvi {

const std::vector<double>& Dataset::column(const std::string& key) const {
  auto it = columns.find(key);
  if (it == columns.end()) throw ModelError("dataset '" + name + "' has no column '" + key + "'");
  return it->second;
}

namespace {

// First (child, parent) pair with parent >= child, if any.
std::optional<std::pair<std::size_t, std::size_t>> first_violation(const ModelGraph& model) {
  for (std::size_t i = 0; i < model.sites.size(); ++i) {
    for (std::size_t p : model.sites[i].parents) {
      if (p >= i) return std::pair{i, p};
    }
  }
  return std::nullopt;
}

}  // namespace

bool is_topological(const ModelGraph& model) { return !first_violation(model).has_value(); }

std::vector<std::size_t> topological_order(const ModelGraph& model) {
  if (auto bad = first_violation(model)) {
    const auto [child, parent] = *bad;
    std::string msg = "topological order violated by edge (" + std::to_string(parent + 1) + "->" +
                      std::to_string(child + 1) + ")";
    if (parent < model.sites.size()) {
      msg += ": '" + model.sites[parent].name + "' is a parent of '" + model.sites[child].name +
             "' but does not precede it";
    } else {
      msg += ": parent index out of range";
    }
    throw ModelError(msg);
  }
  std::vector<std::size_t> order(model.sites.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return order;
}

ModelGraph reorder_sites(const ModelGraph& model, std::span<const std::size_t> perm) {
  const std::size_t d = model.dim();
  if (perm.size() != d) throw ModelError("reorder_sites: permutation has wrong length");
  std::vector<std::size_t> new_pos(d, d);
  for (std::size_t k = 0; k < d; ++k) {
    if (perm[k] >= d || new_pos[perm[k]] != d) throw ModelError("reorder_sites: not a permutation");
    new_pos[perm[k]] = k;
  }
  ModelGraph out = model;
  for (std::size_t k = 0; k < d; ++k) {
    out.sites[k] = model.sites[perm[k]];
    for (std::size_t& p : out.sites[k].parents) p = new_pos[p];
  }
  for (LikelihoodTerm& lt : out.likelihoods) {
    for (std::size_t& p : lt.parents) p = new_pos[p];
  }
  return out;
}

}  // namespace flowvi
