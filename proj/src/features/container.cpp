#include "mmfuse/features/container.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mmfuse::features {

static_assert(std::endian::native == std::endian::little,
              "the container codec assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename V>
  void put(V value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  template <typename V>
  void put_array(std::span<const V> values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename V>
  V get() {
    V value;
    std::memcpy(&value, take(sizeof(V)), sizeof(V));
    return value;
  }
  template <typename V>
  std::vector<V> get_array(std::size_t n) {
    std::vector<V> out(n);
    if (n) std::memcpy(out.data(), take(n * sizeof(V)), n * sizeof(V));
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (remaining() < n) {
      throw FeatureStoreError(ErrorCode::Truncated,
                              "records.bin ends at byte " + std::to_string(bytes_.size()) +
                                  ", needed " + std::to_string(n) + " more at " +
                                  std::to_string(pos_));
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureStoreError(ErrorCode::Io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FeatureStoreError(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FeatureStoreError(ErrorCode::Io, "short write to " + path.string());
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw FeatureStoreError(ErrorCode::Io, "sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

nlohmann::json dataset_spec_to_json(const DatasetSpec& spec) {
  nlohmann::json tracks = nlohmann::json::array();
  for (const auto& t : spec.tracks) {
    tracks.push_back({{"name", t.name},
                      {"kind", std::string(to_string(t.kind))},
                      {"dim", t.dim},
                      {"max_len", t.max_len},
                      {"has_logits", t.has_logits},
                      {"logit_classes", t.logit_classes},
                      {"no_object_index", t.no_object_index}});
  }
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& task : spec.tasks) tasks.push_back({{"name", task.name}, {"labels", task.labels}});
  return {{"dataset", spec.name}, {"label_names", spec.label_names}, {"tasks", tasks},
          {"tracks", tracks}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  try {
    DatasetSpec spec;
    spec.name = j.at("dataset").get<std::string>();
    spec.label_names = j.at("label_names").get<std::vector<std::string>>();
    for (const auto& t : j.at("tracks")) {
      TrackSpec ts;
      ts.name = t.at("name").get<std::string>();
      ts.kind = track_kind_from_string(t.at("kind").get<std::string>());
      ts.dim = t.at("dim").get<std::size_t>();
      ts.max_len = t.at("max_len").get<std::size_t>();
      ts.has_logits = t.value("has_logits", false);
      ts.logit_classes = t.value("logit_classes", std::size_t{0});
      ts.no_object_index = t.value("no_object_index", std::size_t{0});
      spec.tracks.push_back(ts);
    }
    if (j.contains("tasks")) {
      for (const auto& t : j.at("tasks")) {
        spec.tasks.push_back(
            {t.at("name").get<std::string>(), t.at("labels").get<std::vector<std::string>>()});
      }
    } else {
      spec.tasks.push_back({spec.name, spec.label_names});
    }
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FeatureStoreError(ErrorCode::Inconsistent, std::string("manifest: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_records(const DatasetSpec& spec,
                                         std::span<const FeatureRecord> records) {
  Writer w;
  w.put_array<char>(std::span<const char>(kContainerMagic, 4));
  w.put<std::uint16_t>(kContainerVersion);
  for (const auto& r : records) {
    validate_record(spec, r);
    w.put<std::uint64_t>(r.id);
    w.put_array<std::uint8_t>(r.labels);
    for (std::size_t t = 0; t < spec.tracks.size(); ++t) {
      const auto& td = r.tracks[t];
      if (td.seq_len > 0xFFFF) {
        throw FeatureStoreError(ErrorCode::Inconsistent, "seq_len does not fit in u16");
      }
      w.put<std::uint16_t>(static_cast<std::uint16_t>(td.seq_len));
      w.put_array<float>(td.tokens);
      w.put_array<std::uint8_t>(td.mask);
      if (spec.tracks[t].has_logits) w.put_array<float>(td.logits);
    }
  }
  return w.take();
}

std::vector<FeatureRecord> decode_records(const DatasetSpec& spec,
                                          std::span<const std::uint8_t> bytes,
                                          std::size_t record_count) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0) {
    throw FeatureStoreError(ErrorCode::BadMagic, "records.bin does not start with MMFS");
  }
  Reader r(bytes.subspan(4));
  const auto version = r.get<std::uint16_t>();
  if (version != kContainerVersion) {
    throw FeatureStoreError(ErrorCode::BadVersion,
                            "records.bin version " + std::to_string(version) + ", expected " +
                                std::to_string(kContainerVersion));
  }
  std::vector<FeatureRecord> records;
  records.reserve(record_count);
  for (std::size_t i = 0; i < record_count; ++i) {
    FeatureRecord rec;
    rec.id = r.get<std::uint64_t>();
    rec.labels = r.get_array<std::uint8_t>(spec.label_names.size());
    for (const auto& ts : spec.tracks) {
      TrackData td;
      td.seq_len = r.get<std::uint16_t>();
      if (td.seq_len > ts.max_len) {
        throw FeatureStoreError(ErrorCode::Inconsistent,
                                "record " + std::to_string(rec.id) + " track '" + ts.name +
                                    "': seq_len " + std::to_string(td.seq_len) +
                                    " exceeds max_len " + std::to_string(ts.max_len));
      }
      td.tokens = r.get_array<float>(td.seq_len * ts.dim);
      td.mask = r.get_array<std::uint8_t>(td.seq_len);
      if (ts.has_logits) td.logits = r.get_array<float>(td.seq_len * ts.logit_classes);
      rec.tracks.push_back(std::move(td));
    }
    records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw FeatureStoreError(ErrorCode::Inconsistent,
                            std::to_string(r.remaining()) + " trailing bytes after " +
                                std::to_string(record_count) + " records");
  }
  for (const auto& rec : records) validate_record(spec, rec);
  return records;
}

void write_features(const std::filesystem::path& dir, const DatasetSpec& spec,
                    std::span<const FeatureRecord> records) {
  spec.validate();
  auto bytes = encode_records(spec, records);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FeatureStoreError(ErrorCode::Io, "cannot create " + dir.string());
  write_file(dir / kRecordsFile, bytes);
  nlohmann::json manifest = dataset_spec_to_json(spec);
  manifest["record_count"] = records.size();
  manifest["checksum"] = sha256_hex(bytes);
  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / kManifestFile,
             std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                           text.size()));
}

FeatureSet read_features(const std::filesystem::path& dir) {
  const auto manifest_bytes = read_file(dir / kManifestFile);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FeatureStoreError(ErrorCode::Inconsistent, std::string("manifest.json: ") + e.what());
  }
  FeatureSet set;
  set.spec = dataset_spec_from_json(manifest);
  std::size_t count = 0;
  std::string checksum;
  try {
    count = manifest.at("record_count").get<std::size_t>();
    checksum = manifest.at("checksum").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FeatureStoreError(ErrorCode::Inconsistent, std::string("manifest.json: ") + e.what());
  }
  const auto bytes = read_file(dir / kRecordsFile);
  set.records = decode_records(set.spec, bytes, count);
  if (sha256_hex(bytes) != checksum) {
    throw FeatureStoreError(ErrorCode::ChecksumMismatch, "records.bin does not match manifest");
  }
  return set;
}

}  // namespace mmfuse::features
