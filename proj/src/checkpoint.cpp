#include "densecap/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace densecap {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'P', '1'};

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const std::string& path) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("truncated checkpoint " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f.write(kMagic, 4);
  const std::string cfg = ckpt.config.dump();
  write_pod<uint64_t>(f, cfg.size());
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_pod<uint64_t>(f, ckpt.tensors.size());
  for (const auto& [name, m] : ckpt.tensors) {
    write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint64_t>(f, static_cast<uint64_t>(m.rows()));
    write_pod<uint64_t>(f, static_cast<uint64_t>(m.cols()));
    f.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  if (!f) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  Checkpoint ckpt;
  const uint64_t cfg_len = read_pod<uint64_t>(f, path);
  std::string cfg(cfg_len, '\0');
  f.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
  if (!f) throw std::runtime_error("truncated checkpoint " + path);
  ckpt.config = nlohmann::json::parse(cfg);

  const uint64_t count = read_pod<uint64_t>(f, path);
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const uint64_t rows = read_pod<uint64_t>(f, path);
    const uint64_t cols = read_pod<uint64_t>(f, path);
    ad::Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    f.read(reinterpret_cast<char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!f) throw std::runtime_error("truncated checkpoint " + path);
    ckpt.tensors.emplace(std::move(name), std::move(m));
  }
  return ckpt;
}

}  // namespace densecap
