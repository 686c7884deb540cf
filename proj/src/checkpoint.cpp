#include "capsprobe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace capsprobe {

namespace {

constexpr char kMagic[8] = {'C', 'P', 'R', 'B', '0', '0', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kMagic, 8);
  for (const auto& [name, t] : tensors) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, t.rank());
    for (std::size_t e : t.shape()) write_u64(os, e);
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  std::vector<NamedTensor> out;
  while (true) {
    std::uint64_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), 8);
    if (is.eof()) break;
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    std::uint64_t rank = read_u64(is);
    Shape shape(rank);
    for (auto& e : shape) e = read_u64(is);
    std::vector<double> data(shape_numel(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated payload");
    out.push_back({std::move(name),
                   Tensor::from_data(std::move(shape), std::move(data))});
  }
  return out;
}

void restore_parameters(const std::vector<NamedTensor>& stored,
                        const std::vector<NamedTensor>& dst) {
  for (const auto& d : dst) {
    const NamedTensor* found = nullptr;
    for (const auto& s : stored) {
      if (s.name == d.name) {
        found = &s;
        break;
      }
    }
    if (!found) {
      throw std::runtime_error("checkpoint: missing tensor " + d.name);
    }
    if (found->tensor.shape() != d.tensor.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + d.name +
                               ": stored " + shape_str(found->tensor.shape()) +
                               " vs model " + shape_str(d.tensor.shape()));
    }
    d.tensor.node()->value = found->tensor.data();
  }
}

}  // namespace capsprobe
