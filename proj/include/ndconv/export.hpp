#pragma once

#include <string>

#include <json.hpp>

#include "ndconv/geometry.hpp"
#include "ndconv/nd_loss.hpp"
#include "ndconv/tensor.hpp"

namespace ndconv {

// Absolute sampling positions of a single-image offset field (n == 1), one
// record per grid location: position k is (x, y) + base point k + offset k.
// grid_step subsamples the output locations (1 keeps every pixel).
nlohmann::json offset_positions_json(const Tensor& offsets, const GridGeometry& geom,
                                     std::int64_t grid_step);

nlohmann::json uniformity_json(const UniformityReport& report);

// 16-bit binary PGM (maxval 65535, most significant byte first). The map is
// affinely quantized; the header comments record the inverse:
//   # scale S
//   # offset O
// reconstructs density = value / S + O. Expects a (1, 1, h, w) tensor.
void write_pgm16(const std::string& path, const Tensor& density);

// Reads a file written by write_pgm16 and undoes the quantization.
Tensor read_pgm16(const std::string& path);

}  // namespace ndconv
