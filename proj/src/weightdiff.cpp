#include "panda/weightdiff.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "panda/checkpoint_io.hpp"

static_assert(std::endian::native == std::endian::little,
              "diff serialization assumes a little-endian host");

namespace panda {

namespace {

constexpr char kDiffMagic[4] = {'P', 'N', 'D', 'D'};
constexpr uint32_t kDiffVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error(path + ": truncated diff file");
  return value;
}

void check_same_schema(const Checkpoint& base, const Checkpoint& trained) {
  std::vector<std::string> complaints;
  if (!(base.config == trained.config)) {
    complaints.push_back("model configs differ");
  } else {
    for (const TensorSpec& spec : checkpoint_schema(base.config)) {
      const bool in_base = base.tensors.count(spec.name) > 0;
      const bool in_trained = trained.tensors.count(spec.name) > 0;
      if (!in_base || !in_trained) {
        complaints.push_back("'" + spec.name + "' missing from " +
                             (in_base ? "trained" : "base"));
        continue;
      }
      if (base.tensor(spec.name).shape() != trained.tensor(spec.name).shape()) {
        complaints.push_back("'" + spec.name + "' shapes differ");
      }
    }
  }
  if (!complaints.empty()) {
    std::ostringstream msg;
    msg << "checkpoint schemas do not match:";
    for (const std::string& c : complaints) msg << ' ' << c << ';';
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

WeightDiff make_diff(const Checkpoint& base, const Checkpoint& trained) {
  check_same_schema(base, trained);

  WeightDiff diff;
  diff.config = base.config;
  diff.trained_step = trained.step;
  diff.base_fingerprint = checkpoint_fingerprint(base);
  diff.trained_fingerprint = checkpoint_fingerprint(trained);
  for (const TensorSpec& spec : checkpoint_schema(base.config)) {
    const std::vector<float>& b = base.tensor(spec.name).data();
    const std::vector<float>& t = trained.tensor(spec.name).data();
    std::vector<uint32_t> words(b.size());
    for (size_t i = 0; i < b.size(); ++i) {
      words[i] = std::bit_cast<uint32_t>(t[i]) - std::bit_cast<uint32_t>(b[i]);
    }
    diff.deltas.emplace(spec.name, std::move(words));
  }
  return diff;
}

Checkpoint apply_diff(const Checkpoint& base, const WeightDiff& diff) {
  if (!(base.config == diff.config)) {
    throw std::invalid_argument("diff was taken against a different model config");
  }
  const Digest base_fp = checkpoint_fingerprint(base);
  if (base_fp != diff.base_fingerprint) {
    throw std::runtime_error("base checkpoint fingerprint " + hex_digest(base_fp) +
                             " does not match the diff's recorded base " +
                             hex_digest(diff.base_fingerprint));
  }

  Checkpoint out;
  out.config = diff.config;
  out.step = diff.trained_step;
  for (const TensorSpec& spec : checkpoint_schema(diff.config)) {
    auto it = diff.deltas.find(spec.name);
    if (it == diff.deltas.end()) {
      throw std::runtime_error("diff is missing deltas for tensor '" + spec.name + "'");
    }
    const std::vector<float>& b = base.tensor(spec.name).data();
    const std::vector<uint32_t>& words = it->second;
    if (words.size() != b.size()) {
      throw std::runtime_error("diff for '" + spec.name + "' has the wrong element count");
    }
    std::vector<float> v(b.size());
    for (size_t i = 0; i < b.size(); ++i) {
      v[i] = std::bit_cast<float>(std::bit_cast<uint32_t>(b[i]) + words[i]);
    }
    out.tensors.emplace(spec.name, Tensor::from_data(spec.shape, std::move(v)));
  }

  const Digest got = checkpoint_fingerprint(out);
  if (got != diff.trained_fingerprint) {
    throw std::runtime_error("reconstructed checkpoint fingerprint " + hex_digest(got) +
                             " does not match the diff's recorded result " +
                             hex_digest(diff.trained_fingerprint) + "; the diff is corrupted");
  }
  return out;
}

void save_diff(const WeightDiff& diff, const std::string& path) {
  diff.config.validate();
  // Everything before the footer goes through this buffer so the footer
  // digest covers the header and record metadata, not just the delta words.
  std::ostringstream os(std::ios::binary);

  os.write(kDiffMagic, 4);
  write_pod<uint32_t>(os, kDiffVersion);
  const ModelConfig& c = diff.config;
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.dim));
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.n_heads));
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.n_layers));
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.vocab_size));
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.max_seq_len));
  write_pod<uint64_t>(os, static_cast<uint64_t>(c.ffn_hidden));
  write_pod<float>(os, c.norm_eps);
  write_pod<float>(os, c.rope_base);
  write_pod<uint64_t>(os, diff.trained_step);
  os.write(reinterpret_cast<const char*>(diff.base_fingerprint.data()),
           static_cast<std::streamsize>(diff.base_fingerprint.size()));
  os.write(reinterpret_cast<const char*>(diff.trained_fingerprint.data()),
           static_cast<std::streamsize>(diff.trained_fingerprint.size()));

  for (const TensorSpec& spec : checkpoint_schema(diff.config)) {
    auto it = diff.deltas.find(spec.name);
    if (it == diff.deltas.end() ||
        it->second.size() != static_cast<size_t>(shape_numel(spec.shape))) {
      throw std::runtime_error("diff for '" + spec.name + "' is absent or mis-sized");
    }
    write_pod<uint32_t>(os, static_cast<uint32_t>(spec.name.size()));
    os.write(spec.name.data(), static_cast<std::streamsize>(spec.name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(spec.shape.size()));
    for (int64_t extent : spec.shape) write_pod<uint64_t>(os, static_cast<uint64_t>(extent));
    const auto& words = it->second;
    os.write(reinterpret_cast<const char*>(words.data()),
             static_cast<std::streamsize>(words.size() * sizeof(uint32_t)));
  }

  const std::string body = os.str();
  Sha256 hasher;
  hasher.update(body.data(), body.size());
  const Digest digest = hasher.finish();

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error(path + ": cannot open for writing");
  file.write(body.data(), static_cast<std::streamsize>(body.size()));
  file.write(reinterpret_cast<const char*>(digest.data()),
             static_cast<std::streamsize>(digest.size()));
  if (!file) throw std::runtime_error(path + ": write failed");
}

WeightDiff load_diff(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error(path + ": cannot open");
  std::ostringstream slurp(std::ios::binary);
  slurp << file.rdbuf();
  const std::string bytes = slurp.str();
  if (bytes.size() < sizeof(Digest)) throw std::runtime_error(path + ": truncated diff file");

  // Footer check first: any flipped bit ahead of it is caught before the
  // contents are trusted.
  const size_t body_size = bytes.size() - sizeof(Digest);
  Sha256 hasher;
  hasher.update(bytes.data(), body_size);
  Digest stored;
  std::memcpy(stored.data(), bytes.data() + body_size, sizeof(Digest));
  if (stored != hasher.finish()) {
    throw std::runtime_error(path + ": fingerprint mismatch, diff payload corrupted");
  }

  std::istringstream is(bytes.substr(0, body_size), std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kDiffMagic, 4) != 0) {
    throw std::runtime_error(path + ": not a weight diff file (bad magic)");
  }
  const uint32_t version = read_pod<uint32_t>(is, path);
  if (version != kDiffVersion) {
    throw std::runtime_error(path + ": unsupported diff version " + std::to_string(version));
  }

  WeightDiff diff;
  ModelConfig& c = diff.config;
  c.dim = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.n_heads = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.n_layers = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.vocab_size = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.max_seq_len = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.ffn_hidden = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  c.norm_eps = read_pod<float>(is, path);
  c.rope_base = read_pod<float>(is, path);
  diff.trained_step = read_pod<uint64_t>(is, path);
  c.validate();
  is.read(reinterpret_cast<char*>(diff.base_fingerprint.data()),
          static_cast<std::streamsize>(diff.base_fingerprint.size()));
  is.read(reinterpret_cast<char*>(diff.trained_fingerprint.data()),
          static_cast<std::streamsize>(diff.trained_fingerprint.size()));
  if (!is) throw std::runtime_error(path + ": truncated diff file");

  for (const TensorSpec& spec : checkpoint_schema(c)) {
    const uint32_t name_len = read_pod<uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != spec.name) {
      throw std::runtime_error(path + ": expected tensor '" + spec.name + "', found '" + name +
                               "'");
    }
    const uint32_t rank = read_pod<uint32_t>(is, path);
    if (rank != spec.shape.size()) {
      throw std::runtime_error(path + ": tensor '" + name + "' has rank " + std::to_string(rank) +
                               ", schema expects " + std::to_string(spec.shape.size()));
    }
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int64_t>(read_pod<uint64_t>(is, path));
    }
    if (shape != spec.shape) {
      throw std::runtime_error(path + ": tensor '" + name + "' has shape " + shape_str(shape) +
                               ", schema expects " + shape_str(spec.shape));
    }
    std::vector<uint32_t> words(static_cast<size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(uint32_t)));
    if (!is) throw std::runtime_error(path + ": truncated diff file");
    diff.deltas.emplace(spec.name, std::move(words));
  }
  return diff;
}

}  // namespace panda
