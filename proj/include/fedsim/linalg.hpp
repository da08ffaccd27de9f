#ifndef FEDSIM_LINALG_HPP
#define FEDSIM_LINALG_HPP

#include <span>
#include <vector>

namespace fedsim {

// Flat vector of model parameters, updates, or momenta. Layer structure, when
// needed, is carried separately by a LayerLayout (see model.hpp).
using ParamVector = std::vector<double>;

double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

// Clamped to [-1, 1]; throws DimensionError when either norm is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// arccos(cosine_similarity) in degrees, in [0, 180].
double angle_degrees(std::span<const double> a, std::span<const double> b);

// Coordinate-wise arithmetic mean over a non-empty set of equal-length vectors.
ParamVector index_mean(const std::vector<ParamVector>& vs);

// Coordinate-wise population standard deviation (divide by n). Requires n >= 2.
ParamVector index_std(const std::vector<ParamVector>& vs);

bool all_finite(std::span<const double> v);

} // namespace fedsim

#endif
