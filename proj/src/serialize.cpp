#include "sparse_infer/serialize.hpp"

#include <limits>
#include <vector>

namespace sparse_infer {

namespace io {

void write_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

void expect_magic(std::istream& in, const char (&magic)[5]) {
  char got[4];
  if (!in.read(got, 4)) throw TruncatedInput(std::string("truncated input while reading magic ") + magic);
  if (std::string(got, 4) != std::string(magic, 4)) {
    throw FormatError("bad magic: expected \"" + std::string(magic, 4) + "\", found \"" + std::string(got, 4) + "\"");
  }
}

}  // namespace io

namespace {

Dims3 read_dims(std::istream& in) {
  Dims3 d;
  const auto c = io::read_le<std::uint32_t>(in, "dims");
  const auto h = io::read_le<std::uint32_t>(in, "dims");
  const auto w = io::read_le<std::uint32_t>(in, "dims");
  constexpr auto limit = static_cast<std::uint32_t>(std::numeric_limits<Index>::max());
  if (c > limit || h > limit || w > limit) throw FormatError("tensor extent exceeds 2^31-1");
  d.c = static_cast<Index>(c);
  d.h = static_cast<Index>(h);
  d.w = static_cast<Index>(w);
  return d;
}

void write_dims(std::ostream& out, const Dims3& d) {
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.c));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.h));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.w));
}

void write_offsets(std::ostream& out, std::span<const std::size_t> offsets) {
  io::write_le<std::uint64_t>(out, offsets.size());
  for (std::size_t o : offsets) io::write_le<std::uint64_t>(out, o);
}

std::vector<std::size_t> read_offsets(std::istream& in, std::size_t expected) {
  const auto n = io::read_le<std::uint64_t>(in, "offset table size");
  if (n != expected) {
    throw FormatError("offset table has " + std::to_string(n) + " entries, expected " + std::to_string(expected));
  }
  std::vector<std::size_t> offsets(expected);
  for (auto& o : offsets) o = io::read_le<std::uint64_t>(in, "offset table");
  return offsets;
}

}  // namespace

void write_sparse_tensor3(std::ostream& out, const SparseTensor3& t) {
  io::write_magic(out, "FSCT");
  io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.order()));
  write_dims(out, t.dims());
  io::write_le<std::uint64_t>(out, t.nodes().size());
  for (const Node& n : t.nodes()) {
    io::write_le<std::int32_t>(out, n.index);
    io::write_le<float>(out, n.value);
  }
  write_offsets(out, t.matrix_offsets());
  write_offsets(out, t.segment_offsets());
}

SparseTensor3 read_sparse_tensor3(std::istream& in) {
  io::expect_magic(in, "FSCT");
  const auto tag = io::read_le<std::uint8_t>(in, "order tag");
  const auto order = order3_from_tag(tag);
  if (!order) throw FormatError("unsupported axis order tag " + std::to_string(tag));
  const Dims3 dims = read_dims(in);
  const AxisTriple ax = axes_of(*order);
  const auto n_outer = static_cast<std::size_t>(extent(dims, ax.outer));
  const std::size_t n_segments = static_cast<std::size_t>(extent(dims, ax.middle)) * n_outer;
  const auto node_count = io::read_le<std::uint64_t>(in, "node count");
  if (node_count > dims.size() + n_segments) {
    throw FormatError("node count " + std::to_string(node_count) + " exceeds what the extents allow");
  }
  std::vector<Node> nodes(node_count);
  for (Node& n : nodes) {
    n.index = io::read_le<std::int32_t>(in, "node index");
    n.value = io::read_le<float>(in, "node value");
  }
  auto matrix_offsets = read_offsets(in, n_outer);
  auto segment_offsets = read_offsets(in, n_segments);
  return SparseTensor3::from_parts(*order, dims, std::move(nodes), std::move(matrix_offsets),
                                   std::move(segment_offsets));
}

void write_dense_tensor3(std::ostream& out, const DenseTensor3& t) {
  io::write_magic(out, "FDT3");
  write_dims(out, t.dims());
  for (float v : t.data()) io::write_le<float>(out, v);
}

DenseTensor3 read_dense_tensor3(std::istream& in) {
  io::expect_magic(in, "FDT3");
  const Dims3 dims = read_dims(in);
  std::vector<float> data(dims.size());
  auto* bytes = reinterpret_cast<char*>(data.data());
  const auto n_bytes = static_cast<std::streamsize>(data.size() * sizeof(float));
  if (!in.read(bytes, n_bytes)) throw TruncatedInput("truncated input while reading dense tensor payload");
  return DenseTensor3(dims, std::move(data));
}

}  // namespace sparse_infer
