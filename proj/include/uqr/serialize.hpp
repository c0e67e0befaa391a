#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "uqr/tensor.hpp"

namespace uqr {

// Text tensor format: a header line `shape: d1 d2 ...` followed by the
// row-major values, written at full double precision.
void write_tensor(std::ostream& os, const Shape& shape, const std::vector<double>& data);
void read_tensor(std::istream& is, Shape& shape, std::vector<double>& data);

void save_tensor(const std::string& path, const Shape& shape, const std::vector<double>& data);
std::pair<Shape, std::vector<double>> load_tensor(const std::string& path);

// Full-precision, locale-independent double formatting (round-trips exactly).
std::string format_double(double v);

} // namespace uqr
