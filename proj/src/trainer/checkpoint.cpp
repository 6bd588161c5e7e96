#include "mmfuse/trainer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mmfuse/features/container.hpp"

namespace mmfuse::trainer {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

constexpr std::size_t kDigestChars = 64;

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

struct Bytes {
  std::vector<std::uint8_t> data;

  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    data.insert(data.end(), p, p + sizeof(V));
  }
  template <typename V>
  void put_array(std::span<const V> v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    data.insert(data.end(), p, p + v.size_bytes());
  }
};

class Cursor {
 public:
  Cursor(std::span<const std::uint8_t> bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

  template <typename V>
  V get() {
    V v;
    std::memcpy(&v, take(sizeof(V)), sizeof(V));
    return v;
  }
  template <typename V>
  std::vector<V> get_array(std::size_t n) {
    std::vector<V> out(n);
    if (n) std::memcpy(out.data(), take(n * sizeof(V)), n * sizeof(V));
    return out;
  }
  std::string get_string(std::size_t n) {
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (remaining() < n) throw CheckpointError(path_.string() + ": truncated checkpoint");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::span<const std::uint8_t> bytes_;
  fs::path path_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// Verifies magic, version and digest; returns the header and leaves the
// cursor at the first parameter byte.
json open_checkpoint(const std::vector<std::uint8_t>& bytes, Cursor& cur, const fs::path& path) {
  if (bytes.size() < kDigestChars + 10) throw CheckpointError(path.string() + ": truncated checkpoint");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  }
  const std::size_t body = bytes.size() - kDigestChars;
  const std::string digest(reinterpret_cast<const char*>(bytes.data() + body), kDigestChars);
  if (features::sha256_hex(std::span(bytes.data(), body)) != digest) {
    throw CheckpointError(path.string() + ": checksum mismatch");
  }
  cur.get_string(4);
  const auto version = cur.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = cur.get<std::uint32_t>();
  try {
    return json::parse(cur.get_string(header_len));
  } catch (const json::parse_error& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
}

std::string shape_text(const json& shape) { return shape.dump(); }

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& path, const Model<T>& model, const Madgrad<T>& opt,
                     const CheckpointMeta& meta) {
  const auto& params = model.store().params();
  json header{{"config", meta.config},
              {"epoch", meta.epoch},
              {"state", meta.state},
              {"datasets", meta.datasets},
              {"dtype", dtype_name<T>()},
              {"params", json::array()}};
  for (const auto& p : params) {
    header["params"].push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  const std::string text = header.dump();

  Bytes out;
  out.put_array(std::span<const char>(kCheckpointMagic, 4));
  out.put(kCheckpointVersion);
  out.put(std::uint32_t(text.size()));
  out.put_array(std::span<const char>(text.data(), text.size()));
  for (const auto& p : params) out.put_array(p.tensor.data());
  out.put(std::uint64_t(opt.steps()));
  for (const auto& slot : opt.slots()) {
    const bool init = !slot.x0.empty();
    out.put(std::uint8_t(init));
    if (!init) continue;
    out.put_array(std::span<const double>(slot.s));
    out.put_array(std::span<const double>(slot.nu));
    out.put_array(std::span<const double>(slot.x0));
  }
  const std::string digest = features::sha256_hex(out.data);
  out.put_array(std::span<const char>(digest.data(), digest.size()));

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(out.data.data()), std::streamsize(out.data.size()));
    if (!f) throw CheckpointError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
  const auto bytes = read_all(path);
  Cursor cur(bytes, path);
  const json header = open_checkpoint(bytes, cur, path);
  CheckpointMeta meta;
  meta.config = header.at("config");
  meta.epoch = header.at("epoch").get<std::size_t>();
  meta.state = header.at("state");
  meta.datasets = header.at("datasets");
  return meta;
}

template <typename T>
CheckpointMeta load_checkpoint(const fs::path& path, Model<T>& model, Madgrad<T>* opt) {
  const auto bytes = read_all(path);
  Cursor cur(bytes, path);
  const json header = open_checkpoint(bytes, cur, path);
  if (header.at("dtype") != dtype_name<T>()) {
    throw CheckpointError(path.string() + ": stored as " + header.at("dtype").get<std::string>() +
                          ", model uses " + dtype_name<T>());
  }
  auto& params = model.store().params();
  const json& listed = header.at("params");
  if (listed.size() != params.size()) {
    throw CheckpointError(path.string() + ": holds " + std::to_string(listed.size()) +
                          " parameters, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = listed[i].at("name");
    if (name != params[i].name) {
      throw CheckpointError(path.string() + ": parameter " + std::to_string(i) + " is '" + name +
                            "', model expects '" + params[i].name + "'");
    }
    const json model_shape = params[i].tensor.shape();
    if (listed[i].at("shape") != model_shape) {
      throw CheckpointError(path.string() + ": shape mismatch for " + name + ": checkpoint " +
                            shape_text(listed[i].at("shape")) + ", model " + shape_text(model_shape));
    }
  }
  for (auto& p : params) {
    const auto values = cur.get_array<T>(p.tensor.numel());
    std::copy(values.begin(), values.end(), p.tensor.mutable_data().begin());
    p.tensor.zero_grad();
  }
  const auto k = cur.get<std::uint64_t>();
  std::vector<MadgradSlot> slots(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (cur.get<std::uint8_t>() == 0) continue;
    const std::size_t n = params[i].tensor.numel();
    slots[i].s = cur.get_array<double>(n);
    slots[i].nu = cur.get_array<double>(n);
    slots[i].x0 = cur.get_array<double>(n);
  }
  if (cur.remaining() != kDigestChars) throw CheckpointError(path.string() + ": trailing bytes");
  if (opt) opt->restore(std::move(slots), std::size_t(k));

  CheckpointMeta meta;
  meta.config = header.at("config");
  meta.epoch = header.at("epoch").get<std::size_t>();
  meta.state = header.at("state");
  meta.datasets = header.at("datasets");
  return meta;
}

template void save_checkpoint<float>(const fs::path&, const Model<float>&, const Madgrad<float>&,
                                     const CheckpointMeta&);
template void save_checkpoint<double>(const fs::path&, const Model<double>&, const Madgrad<double>&,
                                      const CheckpointMeta&);
template CheckpointMeta load_checkpoint<float>(const fs::path&, Model<float>&, Madgrad<float>*);
template CheckpointMeta load_checkpoint<double>(const fs::path&, Model<double>&, Madgrad<double>*);

}  // namespace mmfuse::trainer
