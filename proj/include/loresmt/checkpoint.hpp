#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "loresmt/transformer.hpp"

namespace loresmt::model {

struct BadCheckpoint : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Container layout:
//   bytes 0..7   magic "LRSMTCKP"
//   bytes 8..15  header length, u64 little-endian
//   header       UTF-8 JSON: {"config": ..., "tensors": [[name,rows,cols]...],
//                "meta": ...}
//   payload      tensors in index order, row-major float32 little-endian
inline constexpr char kCheckpointMagic[8] = {'L', 'R', 'S', 'M',
                                             'T', 'C', 'K', 'P'};

template <class S>
struct Checkpoint {
  ModelConfig config;
  Params<S> params;
  nlohmann::json meta;
};

namespace detail {

inline void write_u64le(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline std::uint64_t read_u64le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

template <class S>
void save_checkpoint(const std::filesystem::path& path,
                     const ModelConfig& config, const Params<S>& params,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json tensors = nlohmann::json::array();
  params.for_each_tensor([&](const std::string& name, const Mat<S>& m) {
    tensors.push_back({name, m.rows(), m.cols()});
  });
  nlohmann::json header{
      {"config", config.to_json()}, {"tensors", tensors}, {"meta", meta}};
  const std::string h = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw BadCheckpoint("cannot open for writing: " + path.string());
  out.write(kCheckpointMagic, 8);
  detail::write_u64le(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  params.for_each_tensor([&](const std::string&, const Mat<S>& m) {
    Mat<float> tmp = m.template cast<float>();
    if (tmp.size() > 0)
      out.write(reinterpret_cast<const char*>(tmp.data()),
                static_cast<std::streamsize>(sizeof(float) * tmp.size()));
  });
  if (!out) throw BadCheckpoint("write failed: " + path.string());
}

template <class S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BadCheckpoint("cannot open: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
    throw BadCheckpoint("bad magic: " + path.string());
  const std::uint64_t hlen = detail::read_u64le(in);
  if (!in) throw BadCheckpoint("truncated header length: " + path.string());
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw BadCheckpoint("truncated header: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw BadCheckpoint("header is not valid JSON: " + std::string(e.what()));
  }

  Checkpoint<S> ckpt;
  ckpt.config = ModelConfig::from_json(header.at("config"));
  ckpt.meta = header.value("meta", nlohmann::json::object());
  const auto& tensors = header.at("tensors");

  ckpt.params.enc.resize(static_cast<std::size_t>(ckpt.config.enc_layers));
  ckpt.params.dec.resize(static_cast<std::size_t>(ckpt.config.dec_layers));
  std::size_t ti = 0;
  ckpt.params.for_each_tensor([&](const std::string& name, Mat<S>& m) {
    if (ti >= tensors.size())
      throw BadCheckpoint("tensor index too short at " + name);
    const auto& entry = tensors.at(ti++);
    if (entry.at(0).get<std::string>() != name)
      throw BadCheckpoint("tensor order mismatch: expected " + name + ", got " +
                          entry.at(0).get<std::string>());
    const auto rows = entry.at(1).get<Eigen::Index>();
    const auto cols = entry.at(2).get<Eigen::Index>();
    Mat<float> tmp(rows, cols);
    if (tmp.size() > 0) {
      in.read(reinterpret_cast<char*>(tmp.data()),
              static_cast<std::streamsize>(sizeof(float) * tmp.size()));
      if (!in) throw BadCheckpoint("truncated payload at " + name);
    }
    m = tmp.template cast<S>();
  });
  if (ti != tensors.size())
    throw BadCheckpoint("tensor index has extra entries");
  return ckpt;
}

}  // namespace loresmt::model
