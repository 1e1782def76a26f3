#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "sparse_infer/sparse.hpp"
#include "sparse_infer/tensor.hpp"

namespace sparse_infer {

// The stream ended before a complete record was read.
class TruncatedInput : public FormatError {
 public:
  using FormatError::FormatError;
};

namespace io {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

template <typename T>
void write_le(std::ostream& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const char* what) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) {
    throw TruncatedInput(std::string("truncated input while reading ") + what);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void write_magic(std::ostream& out, const char (&magic)[5]);
// Throws FormatError naming both magics on mismatch.
void expect_magic(std::istream& in, const char (&magic)[5]);

}  // namespace io

// "FSCT": u8 order tag, u32 C/H/W, u64 node count, (i32 index, f32 value) pairs,
// then the matrix and segment offset tables, each as u64 count + u64 entries.
void write_sparse_tensor3(std::ostream& out, const SparseTensor3& t);
SparseTensor3 read_sparse_tensor3(std::istream& in);

// "FDT3": u32 C/H/W then the raw f32 payload in channel-innermost layout.
void write_dense_tensor3(std::ostream& out, const DenseTensor3& t);
DenseTensor3 read_dense_tensor3(std::istream& in);

}  // namespace sparse_infer
