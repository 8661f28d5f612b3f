#include "streamgate/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "streamgate/binary_io.hpp"
#include "streamgate/config.hpp"
#include "streamgate/errors.hpp"

namespace streamgate {
namespace {

constexpr char kMagic[9] = "SGCKPT01";
constexpr std::uint32_t kVersion = 1;

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["model"] = to_json(ckpt.params.config);
  nlohmann::json tensors = nlohmann::json::array();
  const auto params = ckpt.params.all();
  for (const Parameter* p : params)
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  manifest["tensors"] = tensors;

  binio::put_magic(os, kMagic);
  binio::put<std::uint32_t>(os, kVersion);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.stage_complete));
  binio::put<std::uint64_t>(os, ckpt.config_hash);
  binio::put_string(os, manifest.dump());
  for (const Parameter* p : params) binio::put_doubles(os, p->value);
  if (!os) throw DataError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
  binio::expect_magic(is, kMagic, "checkpoint");
  if (binio::get<std::uint32_t>(is) != kVersion) throw DataError("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.stage_complete = static_cast<int>(binio::get<std::uint32_t>(is));
  ckpt.config_hash = binio::get<std::uint64_t>(is);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(binio::get_string(is));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint manifest: ") + e.what());
  }
  const ModelConfig cfg = model_config_from_json(manifest.at("model"));
  ckpt.params = ModelParams::init(cfg, 0);
  auto params = ckpt.params.all();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size()) throw DataError("checkpoint manifest does not match the model layout");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    if (t.at("name").get<std::string>() != params[i]->name || t.at("rows").get<std::size_t>() != params[i]->value.rows() ||
        t.at("cols").get<std::size_t>() != params[i]->value.cols())
      throw DataError("checkpoint tensor " + t.at("name").get<std::string>() + " has an unexpected name or shape");
    binio::get_doubles(is, params[i]->value);
    params[i]->zero_grad();
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  return read_checkpoint(is);
}

std::uint64_t parameter_checksum(std::span<const Parameter* const> params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const Parameter* p : params) {
    mix(p->name.data(), p->name.size());
    const std::size_t shape[2] = {p->value.rows(), p->value.cols()};
    mix(shape, sizeof(shape));
    mix(p->value.data(), p->value.size() * sizeof(double));
  }
  return h;
}

}  // namespace streamgate
