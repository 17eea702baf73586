#include "molspec/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace molspec::pipeline {

using nlohmann::json;

namespace {

constexpr char kMagic[5] = {'M', 'S', 'P', 'C', '1'};

std::string u64_hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_u64_hex(const std::string& s) {
  return std::strtoull(s.c_str(), nullptr, 16);
}

}  // namespace

const numerics::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json manifest;
  manifest["version"] = ckpt.version;
  manifest["stage"] = ckpt.stage;
  manifest["step"] = ckpt.step;
  manifest["global_step"] = ckpt.global_step;
  manifest["rng"] = {{"scheme", "counter"}, {"seed", u64_hex(ckpt.seed)}};
  manifest["config"] =
      ckpt.config_json.empty() ? json::object() : json::parse(ckpt.config_json);

  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    tensors.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"count", t.size()}});
    offset += t.size() * sizeof(double);
  }
  manifest["tensors"] = std::move(tensors);

  const std::string m = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t mlen = m.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((mlen >> (8 * i)) & 0xff);
  out.write(lenbuf, 8);
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out.good()) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5 || std::memcmp(magic, kMagic, 5) != 0) {
    throw std::runtime_error(path + " is not a checkpoint file (bad magic)");
  }
  char lenbuf[8];
  in.read(lenbuf, 8);
  if (in.gcount() != 8) throw std::runtime_error("truncated checkpoint header");
  std::uint64_t mlen = 0;
  for (int i = 0; i < 8; ++i) {
    mlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
  }
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (static_cast<std::uint64_t>(in.gcount()) != mlen) {
    throw std::runtime_error("truncated checkpoint manifest");
  }
  json manifest = json::parse(mstr);

  Checkpoint ckpt;
  ckpt.version = manifest.at("version").get<std::uint32_t>();
  if (ckpt.version != 1) {
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(ckpt.version));
  }
  ckpt.stage = manifest.at("stage").get<int>();
  ckpt.step = manifest.at("step").get<std::uint64_t>();
  ckpt.global_step = manifest.at("global_step").get<std::uint64_t>();
  ckpt.seed = parse_u64_hex(manifest.at("rng").at("seed").get<std::string>());
  ckpt.config_json = manifest.at("config").dump();

  const std::streampos blob_start = in.tellg();
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t count = entry.at("count").get<std::uint64_t>();
    std::vector<double> data(count);
    in.seekg(blob_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<std::uint64_t>(in.gcount()) != count * sizeof(double)) {
      throw std::runtime_error("truncated checkpoint: tensor " + name +
                               " is incomplete");
    }
    ckpt.tensors.emplace_back(
        name, numerics::Tensor::from_data(shape, std::move(data), true));
  }
  return ckpt;
}

}  // namespace molspec::pipeline
