#include "grpolab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "grpolab/util.hpp"

namespace grpolab::model {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

constexpr char kMagic[4] = {'G', 'L', 'C', 'K'};

template <typename T>
void write_raw(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ConfigError("checkpoint: truncated file");
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const Policy& policy, uint64_t rng_seed) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  write_raw<uint32_t>(out, kCheckpointVersion);
  write_raw<uint32_t>(out, static_cast<uint32_t>(policy.cfg.vocab_size));
  write_raw<uint32_t>(out, static_cast<uint32_t>(policy.cfg.context_window));
  write_raw<uint32_t>(out, static_cast<uint32_t>(policy.cfg.d_model));
  write_raw<uint32_t>(out, static_cast<uint32_t>(policy.cfg.n_head));
  write_raw<uint32_t>(out, static_cast<uint32_t>(policy.cfg.n_layer));
  write_raw<uint64_t>(out, rng_seed);
  write_raw<uint32_t>(out, static_cast<uint32_t>(policy.layout.blocks.size()));
  for (const auto& b : policy.layout.blocks) {
    write_raw<uint32_t>(out, static_cast<uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    write_raw<uint64_t>(out, b.offset);
    write_raw<uint64_t>(out, b.rows);
    write_raw<uint64_t>(out, b.cols);
  }
  write_raw<uint64_t>(out, policy.values.size());
  out.write(reinterpret_cast<const char*>(policy.values.data()),
            static_cast<std::streamsize>(policy.values.size() * sizeof(double)));
  if (!out) throw ConfigError("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ConfigError("checkpoint: bad magic in '" + path + "'");
  const auto version = read_raw<uint32_t>(in);
  if (version != kCheckpointVersion)
    throw ConfigError("checkpoint: unsupported version " + std::to_string(version));

  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(read_raw<uint32_t>(in));
  cfg.context_window = static_cast<int>(read_raw<uint32_t>(in));
  cfg.d_model = static_cast<int>(read_raw<uint32_t>(in));
  cfg.n_head = static_cast<int>(read_raw<uint32_t>(in));
  cfg.n_layer = static_cast<int>(read_raw<uint32_t>(in));
  const uint64_t rng_seed = read_raw<uint64_t>(in);

  Checkpoint ckpt;
  ckpt.rng_seed = rng_seed;
  ckpt.policy = Policy::zeros(cfg);

  const auto n_blocks = read_raw<uint32_t>(in);
  if (n_blocks != ckpt.policy.layout.blocks.size())
    throw ConfigError("checkpoint: block table does not match header dimensions");
  for (const auto& expected : ckpt.policy.layout.blocks) {
    const auto name_len = read_raw<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto offset = read_raw<uint64_t>(in);
    const auto rows = read_raw<uint64_t>(in);
    const auto cols = read_raw<uint64_t>(in);
    if (!in || name != expected.name || offset != expected.offset || rows != expected.rows ||
        cols != expected.cols)
      throw ConfigError("checkpoint: block '" + name + "' does not match expected layout");
  }
  const auto n_values = read_raw<uint64_t>(in);
  if (n_values != ckpt.policy.layout.total)
    throw ConfigError("checkpoint: value count does not match layout");
  in.read(reinterpret_cast<char*>(ckpt.policy.values.data()),
          static_cast<std::streamsize>(n_values * sizeof(double)));
  if (!in) throw ConfigError("checkpoint: truncated parameter vector");
  return ckpt;
}

}  // namespace grpolab::model
