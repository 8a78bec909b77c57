#pragma once

#include <optional>
#include <string>
#include <vector>

#include "opnet/geometry.hpp"

namespace opnet {

// Point cloud with species labels and an optional periodic lattice
// (rows are lattice vectors). Periodic positions are kept reduced to the
// unit cell.
struct Structure {
  std::vector<Vec3> positions;
  std::vector<int> species;
  std::vector<std::string> species_names;
  std::optional<Mat3> lattice;

  int size() const { return static_cast<int>(positions.size()); }

  // Wraps positions into the unit cell; no-op for finite clusters.
  void reduce_to_cell();
  // Fractional coordinates of a cartesian point (periodic only).
  Vec3 to_fractional(const Vec3& cartesian) const;
  Vec3 to_cartesian(const Vec3& fractional) const;
  // Shortest displacement from a to b under the minimum-image convention.
  Vec3 min_image(const Vec3& from, const Vec3& to) const;

  void validate() const;
};

}  // namespace opnet
