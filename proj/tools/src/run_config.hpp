#pragma once

#include "mixpinn/graph.hpp"
#include "mixpinn/mesh.hpp"
#include "mixpinn/model.hpp"
#include "mixpinn/oracle.hpp"
#include "mixpinn/train.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mixpinn::cli {

/// Flat key = value configuration. Every key has a default; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  /// Applies `key = value` lines; '#' starts a comment.
  void merge_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return values_.contains(key); }

  /// Sorted `key = value` lines.
  std::string dump() const;

  /// Parses every typed section so bad values fail before any command runs.
  void validate() const;

  std::uint64_t seed() const;
  int jobs() const;
  std::filesystem::path workdir() const;
  std::filesystem::path artifact(const std::string& name) const { return workdir() / name; }

  PhantomConfig phantom() const;
  SweepConfig sweep() const;
  std::array<double, 3> split_ratios() const;
  std::uint64_t split_seed() const;
  ExperimentConfig experiment(int rigid_count) const;

  int integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mixpinn::cli
