#include "dualpol/checkpoint.hpp"

#include "dualpol/fsio.hpp"

namespace dualpol::ckpt {

namespace {
constexpr char kMagic[4] = {'D', 'P', 'C', 'K'};
}

std::string serialize_bundle(const Bundle& b) {
  fsio::Writer w;
  w.bytes(kMagic, 4);
  w.u16(kBundleVersion);
  w.str(b.kind);
  w.str(b.config_text);
  w.str(b.schedule_kind);
  w.u32(b.schedule_timesteps);
  w.u16(b.codec_bins);
  w.u16(b.codec_dims);
  w.u32(uint32_t(b.arrays.size()));
  for (const auto& [name, t] : b.arrays) {
    w.str(name);
    w.u32(uint32_t(t.rows));
    w.u32(uint32_t(t.cols));
    w.bytes(t.data(), size_t(t.size()) * sizeof(float));
  }
  w.u32(fsio::crc32(w.buf.data(), w.buf.size()));
  return std::move(w.buf);
}

Bundle parse_bundle(const std::string& bytes) {
  if (bytes.size() < 10 || bytes.compare(0, 4, kMagic, 4) != 0)
    throw CorruptionError("not a checkpoint bundle (bad magic)");
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= uint32_t(uint8_t(bytes[bytes.size() - 4 + size_t(i)])) << (8 * i);
  if (fsio::crc32(bytes.data(), bytes.size() - 4) != stored_crc)
    throw CorruptionError("checkpoint checksum mismatch (truncated or corrupt file)");

  try {
    fsio::Reader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    uint16_t version = r.u16();
    if (version != kBundleVersion)
      throw VersionError("unsupported checkpoint version " + std::to_string(version) +
                         " (expected " + std::to_string(kBundleVersion) + ")");
    Bundle b;
    b.kind = r.str();
    b.config_text = r.str();
    b.schedule_kind = r.str();
    b.schedule_timesteps = r.u32();
    b.codec_bins = r.u16();
    b.codec_dims = r.u16();
    uint32_t n = r.u32();
    b.arrays.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
      std::string name = r.str();
      int rows = int(r.u32()), cols = int(r.u32());
      Tensor<float> t(rows, cols);
      r.bytes(t.data(), size_t(t.size()) * sizeof(float));
      b.arrays.emplace_back(std::move(name), std::move(t));
    }
    return b;
  } catch (const VersionError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw CorruptionError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_bundle(const Bundle& b, const std::string& path) {
  fsio::atomic_write(path, serialize_bundle(b));
}

Bundle load_bundle(const std::string& path, const std::string& expect_kind) {
  Bundle b = parse_bundle(fsio::read_file(path));
  if (!expect_kind.empty() && b.kind != expect_kind)
    throw KindError("checkpoint kind is '" + b.kind + "', expected '" + expect_kind + "'");
  return b;
}

}  // namespace dualpol::ckpt
