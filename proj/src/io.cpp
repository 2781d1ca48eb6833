#include "moevit/io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace moevit {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back((uint8_t)(v & 0xff));
  out.push_back((uint8_t)((v >> 8) & 0xff));
  out.push_back((uint8_t)((v >> 16) & 0xff));
  out.push_back((uint8_t)((v >> 24) & 0xff));
}

uint32_t get_u32(const std::vector<uint8_t>& b, size_t off) {
  return (uint32_t)b[off] | ((uint32_t)b[off + 1] << 8) |
         ((uint32_t)b[off + 2] << 16) | ((uint32_t)b[off + 3] << 24);
}

}  // namespace

std::vector<uint8_t> encode_mct1(const Tensor& t) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'M', 'C', 'T', '1'});
  put_u32(out, (uint32_t)t.shape().size());
  for (size_t e : t.shape()) put_u32(out, (uint32_t)e);
  const size_t payload = t.size() * sizeof(double);
  const size_t base = out.size();
  out.resize(base + payload);
  static_assert(std::endian::native == std::endian::little,
                "MCT1 writer assumes a little-endian host");
  std::memcpy(out.data() + base, t.data().data(), payload);
  return out;
}

Tensor decode_mct1(const std::vector<uint8_t>& bytes, bool requires_grad) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "MCT1", 4) != 0)
    throw contract_error("not an MCT1 container");
  const uint32_t rank = get_u32(bytes, 4);
  if (bytes.size() < 8 + 4 * (size_t)rank)
    throw contract_error("truncated MCT1 header");
  std::vector<size_t> shape(rank);
  size_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(bytes, 8 + 4 * i);
    numel *= shape[i];
  }
  const size_t base = 8 + 4 * (size_t)rank;
  if (bytes.size() != base + numel * sizeof(double))
    throw contract_error("MCT1 payload size mismatch");
  std::vector<double> data(numel);
  std::memcpy(data.data(), bytes.data() + base, numel * sizeof(double));
  return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

void write_mct1(const std::string& path, const Tensor& t) {
  const auto bytes = encode_mct1(t);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw contract_error("cannot open for write: " + path);
  f.write((const char*)bytes.data(), (std::streamsize)bytes.size());
}

Tensor read_mct1(const std::string& path, bool requires_grad) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw contract_error("cannot open for read: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return decode_mct1(bytes, requires_grad);
}

void write_manifest(const std::string& dir,
                    const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::filesystem::create_directories(dir);
  std::ofstream m(dir + "/manifest.txt");
  if (!m) throw contract_error("cannot open for write: " + dir + "/manifest.txt");
  for (const auto& [name, t] : tensors) {
    const std::string file = name + ".mct1";
    write_mct1(dir + "/" + file, t);
    m << name << " " << file;
    for (size_t e : t.shape()) m << " " << e;
    m << "\n";
  }
}

std::vector<std::pair<std::string, Tensor>> read_manifest(
    const std::string& dir, bool requires_grad) {
  std::ifstream m(dir + "/manifest.txt");
  if (!m) throw contract_error("cannot open for read: " + dir + "/manifest.txt");
  std::vector<std::pair<std::string, Tensor>> out;
  std::string line;
  while (std::getline(m, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name, file;
    ss >> name >> file;
    Tensor t = read_mct1(dir + "/" + file, requires_grad);
    std::vector<size_t> shape;
    size_t e;
    while (ss >> e) shape.push_back(e);
    if (shape != t.shape())
      throw contract_error("manifest shape mismatch for " + name);
    out.emplace_back(name, std::move(t));
  }
  return out;
}

}  // namespace moevit
