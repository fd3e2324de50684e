#pragma once

#include "mixpinn/mesh.hpp"
#include "mixpinn/oracle.hpp"

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

namespace testing {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mixpinn_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// 6x4x4 cells of 10 mm, 175 nodes, two 8-node rigid cubes.
inline mixpinn::PhantomConfig small_phantom_config() {
  mixpinn::PhantomConfig c;
  c.dimensions = mixpinn::Vec3(60, 40, 40);
  c.cells = {6, 4, 4};
  c.inclusions = {{mixpinn::Vec3(5, 5, 5), mixpinn::Vec3(25, 25, 25)},
                  {mixpinn::Vec3(35, 15, 15), mixpinn::Vec3(55, 35, 35)}};
  return c;
}

inline mixpinn::Mesh small_phantom() { return mixpinn::center_mesh(mixpinn::generate_phantom(small_phantom_config())); }

inline mixpinn::SweepConfig small_sweep() {
  mixpinn::SweepConfig s;
  s.probe.positions_x = 2;
  s.probe.positions_y = 2;
  s.probe.grid_spacing = 10.0;
  s.probe.half_long = 10.0;
  s.probe.half_short = 5.0;
  s.probe.depth_steps = 3;
  s.probe.step_depth = 1.0;
  return s;
}

}  // namespace testing
