#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace protoecg {

enum class Branch { Rhythm = 0, Morphology = 1, Global = 2 };

inline constexpr std::array<Branch, 3> kAllBranches = {Branch::Rhythm, Branch::Morphology,
                                                      Branch::Global};

std::string_view branch_name(Branch b);
// Accepts "rhythm", "morph"/"morphology", "global".
Branch parse_branch(std::string_view name);

// The 71 diagnostic codes partitioned into the three reasoning branches. Code order is
// rhythm codes, then morphology codes, then global codes; a code's position in that
// order is its label index.
class LabelTaxonomy {
 public:
  static constexpr int kNumCodes = 71;

  static const LabelTaxonomy& standard();

  const std::vector<std::string>& codes() const { return codes_; }
  int size() const { return static_cast<int>(codes_.size()); }
  const std::string& code(int index) const { return codes_.at(index); }
  Branch branch_of(int index) const { return branch_of_.at(index); }
  Branch branch_of(std::string_view code) const;

  std::optional<int> find(std::string_view code) const;
  // Throws TaxonomyError for unknown codes.
  int index_of(std::string_view code) const;

  // Taxonomy indices belonging to a branch, in taxonomy order.
  const std::vector<int>& branch_indices(Branch b) const {
    return by_branch_[static_cast<int>(b)];
  }

  std::string description(int index) const { return descriptions_.at(index); }

 private:
  LabelTaxonomy();

  std::vector<std::string> codes_;
  std::vector<std::string> descriptions_;
  std::vector<Branch> branch_of_;
  std::array<std::vector<int>, 3> by_branch_;
};

}  // namespace protoecg
