#pragma once

// Minimal .npy v1.0 reader/writer (little-endian, C-order). Used as the
// container for datasets and checkpoint arrays.

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

namespace jbot::npy {

static_assert(std::endian::native == std::endian::little, "npy io assumes a little-endian host");

struct Header {
  std::string descr;            // e.g. "<f8"
  std::vector<long> shape;
  bool fortran_order = false;
};

void save_raw(const std::string& path, const std::string& descr, const std::vector<long>& shape,
              const void* data, std::size_t elem_size);

/// Reads header + payload; payload bytes are returned untouched.
Header load_raw(const std::string& path, std::vector<unsigned char>& payload);

void save_f64(const std::string& path, const std::vector<long>& shape, const double* data);
void save_f32(const std::string& path, const std::vector<long>& shape, const float* data);
void save_i64(const std::string& path, const std::vector<long>& shape, const std::int64_t* data);

/// Accepts <f4 and <f8, widening to double.
std::vector<double> load_f64(const std::string& path, std::vector<long>& shape);
/// Accepts <f4 only (strict dtype match for float checkpoints).
std::vector<float> load_f32(const std::string& path, std::vector<long>& shape);
/// Accepts signed/unsigned integers up to 8 bytes.
std::vector<std::int64_t> load_i64(const std::string& path, std::vector<long>& shape);

}  // namespace jbot::npy
