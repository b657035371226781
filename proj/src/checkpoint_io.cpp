#include "panda/checkpoint_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace panda {

namespace {

constexpr char kMagic[4] = {'P', 'N', 'D', 'A'};

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error(path + ": truncated checkpoint file");
  return value;
}

void write_header(std::ostream& os, const Checkpoint& ckpt) {
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kCheckpointVersion);
  const ModelConfig& c = ckpt.config;
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.dim));
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.n_heads));
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.n_layers));
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.vocab_size));
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.max_seq_len));
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.ffn_hidden));
  write_pod<float>(os, c.norm_eps);
  write_pod<float>(os, c.rope_base);
  write_pod<uint64_t>(os, ckpt.step);
}

}  // namespace

Digest checkpoint_fingerprint(const Checkpoint& ckpt) {
  Sha256 hasher;
  for (const TensorSpec& spec : checkpoint_schema(ckpt.config)) {
    const Tensor& t = ckpt.tensor(spec.name);
    hasher.update(t.data().data(), t.data().size() * sizeof(float));
  }
  return hasher.finish();
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ckpt.config.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");

  write_header(os, ckpt);
  Sha256 hasher;
  for (const TensorSpec& spec : checkpoint_schema(ckpt.config)) {
    const Tensor& t = ckpt.tensor(spec.name);
    if (t.shape() != spec.shape) {
      throw std::runtime_error("checkpoint tensor '" + spec.name + "' has shape " +
                               shape_str(t.shape()) + ", schema expects " + shape_str(spec.shape));
    }
    write_pod<uint32_t>(os, static_cast<uint32_t>(spec.name.size()));
    os.write(spec.name.data(), static_cast<std::streamsize>(spec.name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(spec.shape.size()));
    for (int64_t extent : spec.shape) write_pod<uint64_t>(os, static_cast<uint64_t>(extent));
    const auto& v = t.data();
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
    hasher.update(v.data(), v.size() * sizeof(float));
  }
  Digest digest = hasher.finish();
  os.write(reinterpret_cast<const char*>(digest.data()),
           static_cast<std::streamsize>(digest.size()));
  if (!os) throw std::runtime_error(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path + ": cannot open");

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(path + ": not a checkpoint file (bad magic)");
  }
  const uint32_t version = read_pod<uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint ckpt;
  ModelConfig& c = ckpt.config;
  c.dim = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.n_heads = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.n_layers = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.vocab_size = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.max_seq_len = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.ffn_hidden = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.norm_eps = read_pod<float>(is, path);
  c.rope_base = read_pod<float>(is, path);
  ckpt.step = read_pod<uint64_t>(is, path);
  c.validate();

  Sha256 hasher;
  for (const TensorSpec& spec : checkpoint_schema(c)) {
    const uint32_t name_len = read_pod<uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != spec.name) {
      throw std::runtime_error(path + ": expected tensor '" + spec.name + "', found '" + name + "'");
    }
    const uint32_t rank = read_pod<uint32_t>(is, path);
    if (rank != spec.shape.size()) {
      throw std::runtime_error(path + ": tensor '" + name + "' has rank " + std::to_string(rank) +
                               ", schema expects " + std::to_string(spec.shape.size()));
    }
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(read_pod<uint64_t>(is, path));
    if (shape != spec.shape) {
      throw std::runtime_error(path + ": tensor '" + name + "' has shape " + shape_str(shape) +
                               ", schema expects " + shape_str(spec.shape));
    }
    std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!is) throw std::runtime_error(path + ": truncated checkpoint file");
    hasher.update(v.data(), v.size() * sizeof(float));
    ckpt.tensors.emplace(spec.name, Tensor::from_data(spec.shape, std::move(v)));
  }

  Digest stored;
  is.read(reinterpret_cast<char*>(stored.data()), static_cast<std::streamsize>(stored.size()));
  if (!is) throw std::runtime_error(path + ": truncated checkpoint file");
  if (stored != hasher.finish()) {
    throw std::runtime_error(path + ": fingerprint mismatch, payload corrupted");
  }
  return ckpt;
}

}  // namespace panda
