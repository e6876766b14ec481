#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stan/data/manifest.hpp"
#include "json.hpp"

namespace stan {

enum class SplitKind { KFold, LeaveOneGroupOut };

std::string to_string(SplitKind kind);
SplitKind parse_split_kind(const std::string& name);

struct SplitPlan {
  SplitKind kind = SplitKind::KFold;
  std::size_t folds = 0;
  std::vector<std::size_t> fold_of;  // per clip, manifest order
  std::vector<std::size_t> fold_group;  // leave-one-group-out: group held out by each fold

  std::vector<std::size_t> test_indices(std::size_t fold) const;
  std::vector<std::size_t> train_indices(std::size_t fold) const;
  nlohmann::json to_json() const;
};

// Stratified by class; clips of each class are shuffled with `seed` and dealt
// round-robin so fold sizes differ by at most one.
SplitPlan kfold(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed);
// One fold per distinct group id, in ascending group order.
SplitPlan leave_one_group_out(const DatasetManifest& manifest);

}  // namespace stan
