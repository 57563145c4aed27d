#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "orchmoe/config.hpp"
#include "orchmoe/errors.hpp"
#include "orchmoe/model.hpp"

namespace orchmoe {

// On-disk layout: "OMCK" | u32 version | u64 header length | header JSON |
// concatenated float64 blobs. The header carries the config echo, the step
// counter and one {name, rows, cols, offset} record per tensor (offsets are
// doubles-from-blob-start). Everything is little-endian.
inline constexpr char kCheckpointMagic[4] = {'O', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

struct LoadedCheckpoint {
  RunConfig config;
  std::uint64_t step = 0;
  Model model;
};

inline void save_checkpoint(const std::string& path, Model& model, const RunConfig& config,
                            std::uint64_t step) {
  std::vector<std::pair<std::string, Tensor>> named = model_named_params(model);
  nlohmann::ordered_json header;
  header["config"] = config_to_json(config);
  header["step"] = step;
  header["params"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : named) {
    nlohmann::ordered_json p;
    p["name"] = name;
    p["rows"] = tensor.rows();
    p["cols"] = tensor.cols();
    p["offset"] = offset;
    header["params"].push_back(std::move(p));
    offset += tensor.size();
  }
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 4);
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t header_len = header_str.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, tensor] : named)
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  if (!out.good()) throw IoError("write failed: " + path);
}

namespace detail {

inline void read_exact(std::ifstream& in, char* dst, std::size_t n, const std::string& path) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    const std::streamoff pos = in.tellg() < 0 ? std::streamoff{0} : std::streamoff{in.tellg()};
    throw IoError("checkpoint " + path + ": unexpected end at byte " + std::to_string(pos));
  }
}

}  // namespace detail

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path);

  char magic[4];
  detail::read_exact(in, magic, 4, path);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("checkpoint " + path + ": bad magic at byte 0");
  std::uint32_t version = 0;
  detail::read_exact(in, reinterpret_cast<char*>(&version), sizeof(version), path);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint " + path + ": unsupported format version " +
                  std::to_string(version));
  std::uint64_t header_len = 0;
  detail::read_exact(in, reinterpret_cast<char*>(&header_len), sizeof(header_len), path);
  std::string header_str(header_len, '\0');
  detail::read_exact(in, header_str.data(), header_len, path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("checkpoint " + path + ": corrupt header at byte 16: " + e.what());
  }

  LoadedCheckpoint loaded;
  loaded.config = parse_run_config(header.at("config"));
  loaded.step = header.at("step").get<std::uint64_t>();

  // Rebuild the skeleton exactly as training would, then overwrite every
  // tensor (bases included) from the blobs.
  std::vector<Tensor> zero_bases;
  for (std::size_t slot = 0; slot < kSlotsPerBlock * loaded.config.depth; ++slot)
    zero_bases.push_back(Tensor::zeros(loaded.config.d, loaded.config.d));
  loaded.model = init_model(parse_architecture(loaded.config.architecture), zero_bases,
                            loaded.config.depth, loaded.config.T, loaded.config.S,
                            loaded.config.r, loaded.config.k, loaded.config.T_real,
                            hash_combine(loaded.config.seed, 0x6d6f6465));

  std::vector<std::pair<std::string, Tensor>> named = model_named_params(loaded.model);
  const nlohmann::json& params = header.at("params");
  if (params.size() != named.size())
    throw IoError("checkpoint " + path + ": header lists " + std::to_string(params.size()) +
                  " tensors, model has " + std::to_string(named.size()));
  const std::streampos blob_start = in.tellg();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const nlohmann::json& p = params[i];
    auto& [name, tensor] = named[i];
    if (p.at("name").get<std::string>() != name)
      throw IoError("checkpoint " + path + ": parameter " + std::to_string(i) + " is '" +
                    p.at("name").get<std::string>() + "', model expects '" + name + "'");
    if (p.at("rows").get<std::size_t>() != tensor.rows() ||
        p.at("cols").get<std::size_t>() != tensor.cols())
      throw IoError("checkpoint " + path + ": shape mismatch for '" + name + "'");
    in.seekg(blob_start + static_cast<std::streamoff>(p.at("offset").get<std::uint64_t>() *
                                                      sizeof(double)));
    detail::read_exact(in, reinterpret_cast<char*>(tensor.data().data()),
                       tensor.size() * sizeof(double), path);
  }
  return loaded;
}

}  // namespace orchmoe
