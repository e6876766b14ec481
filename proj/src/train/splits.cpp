#include "stan/train/splits.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <stdexcept>

namespace stan {

std::string to_string(SplitKind kind) { return kind == SplitKind::KFold ? "kfold" : "logo"; }

SplitKind parse_split_kind(const std::string& name) {
  if (name == "kfold") return SplitKind::KFold;
  if (name == "logo" || name == "leave-one-group-out") return SplitKind::LeaveOneGroupOut;
  throw std::invalid_argument("unknown split '" + name + "' (expected kfold|logo)");
}

std::vector<std::size_t> SplitPlan::test_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> SplitPlan::train_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] != fold) out.push_back(i);
  return out;
}

nlohmann::json SplitPlan::to_json() const {
  return {{"kind", to_string(kind)}, {"folds", folds}, {"fold_of", fold_of}, {"fold_group", fold_group}};
}

SplitPlan kfold(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold: k must be >= 2");
  if (manifest.clips.size() < k) throw std::invalid_argument("kfold: fewer clips than folds");
  std::vector<std::vector<std::size_t>> by_class(manifest.num_classes);
  for (std::size_t i = 0; i < manifest.clips.size(); ++i) by_class.at(manifest.clips[i].label).push_back(i);
  std::mt19937_64 rng(seed);
  SplitPlan plan;
  plan.kind = SplitKind::KFold;
  plan.folds = k;
  plan.fold_of.assign(manifest.clips.size(), 0);
  std::size_t dealt = 0;
  for (auto& members : by_class) {
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng() % i]);
    for (auto idx : members) plan.fold_of[idx] = dealt++ % k;
  }
  return plan;
}

SplitPlan leave_one_group_out(const DatasetManifest& manifest) {
  std::map<std::size_t, std::size_t> fold_for_group;
  for (const auto& c : manifest.clips) fold_for_group.emplace(c.group, 0);
  if (fold_for_group.size() < 2) throw std::invalid_argument("leave_one_group_out: need at least two groups");
  SplitPlan plan;
  plan.kind = SplitKind::LeaveOneGroupOut;
  for (auto& [group, fold] : fold_for_group) {
    fold = plan.folds++;
    plan.fold_group.push_back(group);
  }
  for (const auto& c : manifest.clips) plan.fold_of.push_back(fold_for_group.at(c.group));
  return plan;
}

}  // namespace stan
