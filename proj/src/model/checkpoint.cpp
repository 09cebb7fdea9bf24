#include "alm/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "alm/core/errors.hpp"
#include "alm/model/model.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace alm::model {

namespace {

constexpr char kMagic[4] = {'A', 'Q', 'C', 'P'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void read(void* dst, std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) throw CheckpointError(path_ + ": truncated while reading " + what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    read(&v, 4, what);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    os.write(kMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      put_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(os, static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
      os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    const std::string trailer = ckpt.trailer.dump();
    put_u32(os, static_cast<std::uint32_t>(trailer.size()));
    os.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
    if (!os) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(is), {}), path.string());
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(path.string() + ": bad magic, expected AQCP");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u32("name length");
    if (name_len > r.remaining()) throw CheckpointError(path.string() + ": truncated tensor name");
    std::string name(name_len, '\0');
    r.read(name.data(), name_len, "tensor name");
    const auto rank = r.u32("rank");
    if (rank > 8) throw CheckpointError(path.string() + ": tensor '" + name + "' has implausible rank");
    core::Shape shape(rank);
    for (auto& d : shape) d = r.u32("dims");
    const std::size_t n = core::shape_size(shape);
    if (n * sizeof(float) > r.remaining()) throw CheckpointError(path.string() + ": truncated payload of " + name);
    core::ArrayF t(shape);
    r.read(t.data.data(), n * sizeof(float), "payload");
    if (!ckpt.tensors.emplace(name, std::move(t)).second) {
      throw CheckpointError(path.string() + ": duplicate tensor '" + name + "'");
    }
  }
  const auto trailer_len = r.u32("trailer length");
  if (trailer_len != r.remaining()) throw CheckpointError(path.string() + ": trailer length mismatch");
  std::string trailer(trailer_len, '\0');
  r.read(trailer.data(), trailer_len, "trailer");
  try {
    ckpt.trailer = nlohmann::json::parse(trailer);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": trailer is not valid JSON (" + e.what() + ")");
  }
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m;
  if (!ckpt.trailer.contains("model")) throw CheckpointError("checkpoint trailer lacks a model configuration");
  try {
    m.config = ckpt.trailer.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed model configuration: ") + e.what());
  }
  m.config.validate();
  m.trailer = ckpt.trailer;
  m.params = core::ParameterStore<float>(ckpt.trailer.value("seed", std::uint64_t{0}));
  for (const auto& [name, shape] : parameter_shapes(m.config)) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape != shape) {
      throw CheckpointError("tensor '" + name + "' has shape " + core::shape_str(it->second.shape) + ", expected " +
                            core::shape_str(shape));
    }
    m.params.add(name, it->second);
  }
  return m;
}

Model load_model(const std::filesystem::path& path) { return model_from_checkpoint(load_checkpoint(path)); }

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [_, shape] : parameter_shapes(cfg)) n += core::shape_size(shape);
  return n;
}

}  // namespace alm::model
