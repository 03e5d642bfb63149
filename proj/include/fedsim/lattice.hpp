#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "fedsim/core.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Quantization lattice with unit-covolume generator. L=1 is the integer
// lattice; L=2 is the hexagonal lattice, which has the smallest normalized
// second moment of any 2-D lattice.
//
// cell_second_moment is E||e||^2 for e uniform over the Voronoi cell (the
// full L-dimensional second moment, not per coordinate):
//   Z lattice:   1/12
//   hexagonal:   2 * 5/(36*sqrt(3)) = 5/(18*sqrt(3))
struct Lattice {
  int dim = 1;
  std::array<std::array<double, 2>, 2> gen{};  // row-major basis columns g0,g1
  std::array<std::array<double, 2>, 2> inv{};
  double cell_second_moment = 1.0 / 12.0;

  // Nearest lattice point; exact for the two built-in (reduced) bases via a
  // +-1 search around the rounded basis coordinates.
  std::array<long, 2> nearest(const std::array<double, 2>& x) const {
    if (dim == 1) {
      return {static_cast<long>(std::llround(x[0])), 0};
    }
    const double c0 = inv[0][0] * x[0] + inv[0][1] * x[1];
    const double c1 = inv[1][0] * x[0] + inv[1][1] * x[1];
    const long r0 = static_cast<long>(std::llround(c0));
    const long r1 = static_cast<long>(std::llround(c1));
    std::array<long, 2> best{r0, r1};
    double best_d2 = -1.0;
    for (long a = r0 - 1; a <= r0 + 1; ++a) {
      for (long b = r1 - 1; b <= r1 + 1; ++b) {
        const auto p = point({a, b});
        const double dx = x[0] - p[0];
        const double dy = x[1] - p[1];
        const double d2 = dx * dx + dy * dy;
        if (best_d2 < 0.0 || d2 < best_d2) {
          best_d2 = d2;
          best = {a, b};
        }
      }
    }
    return best;
  }

  std::array<double, 2> point(const std::array<long, 2>& k) const {
    if (dim == 1) return {static_cast<double>(k[0]), 0.0};
    return {gen[0][0] * k[0] + gen[0][1] * k[1],
            gen[1][0] * k[0] + gen[1][1] * k[1]};
  }

  // Uniform sample over the fundamental parallelepiped G*[-1/2,1/2)^L. Any
  // fundamental cell works as a subtractive dither: the reconstruction error
  // ends up uniform over the Voronoi cell regardless.
  std::array<double, 2> dither(Rng& rng) const {
    const double u0 = rng.uniform01() - 0.5;
    if (dim == 1) return {u0, 0.0};
    const double u1 = rng.uniform01() - 0.5;
    return {gen[0][0] * u0 + gen[0][1] * u1, gen[1][0] * u0 + gen[1][1] * u1};
  }
};

inline Lattice make_lattice(int dim) {
  check(dim == 1 || dim == 2, "make_lattice: only L in {1,2} supported");
  Lattice lat;
  lat.dim = dim;
  if (dim == 1) {
    lat.gen[0][0] = 1.0;
    lat.inv[0][0] = 1.0;
    lat.cell_second_moment = 1.0 / 12.0;
    return lat;
  }
  // Hexagonal basis (1,0),(1/2,sqrt(3)/2), rescaled to unit cell area.
  const double s = 1.0 / std::sqrt(std::sqrt(3.0) / 2.0);
  lat.gen[0][0] = s;
  lat.gen[0][1] = s * 0.5;
  lat.gen[1][0] = 0.0;
  lat.gen[1][1] = s * std::sqrt(3.0) / 2.0;
  const double det = lat.gen[0][0] * lat.gen[1][1] - lat.gen[0][1] * lat.gen[1][0];
  lat.inv[0][0] = lat.gen[1][1] / det;
  lat.inv[0][1] = -lat.gen[0][1] / det;
  lat.inv[1][0] = -lat.gen[1][0] / det;
  lat.inv[1][1] = lat.gen[0][0] / det;
  lat.cell_second_moment = 5.0 / (18.0 * std::sqrt(3.0));
  return lat;
}

// Lattice quantizer configuration: L, the basic lattice, and the update
// normalization scale zeta (updates are scaled by 1/(zeta*||u||) before
// quantization).
struct LatticeSpec {
  int dimension = 1;
  double zeta = 2.0;
  Lattice lattice = make_lattice(1);

  long subvectors(long d) const {
    return (d + dimension - 1) / dimension;  // ceil(d / L)
  }
};

inline LatticeSpec make_lattice_spec(int dim, double zeta) {
  check(zeta > 0.0, "lattice spec: zeta must be positive");
  LatticeSpec spec;
  spec.dimension = dim;
  spec.zeta = zeta;
  spec.lattice = make_lattice(dim);
  return spec;
}

}  // namespace fedsim
