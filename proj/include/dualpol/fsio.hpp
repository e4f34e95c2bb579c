#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Small file helpers shared by dataset, checkpoint and config code.
// Writes are atomic (temp file + rename).

namespace dualpol::fsio {

void atomic_write(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);
uint64_t fnv1a64(const void* data, size_t len);

// Little-endian buffer builder / reader for binary records.
struct Writer {
  std::string buf;
  void u8(uint8_t v) { buf.push_back(char(v)); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
  }
  void f32(float v);
  void f64(double v);
  void bytes(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
  void str(const std::string& s) {
    u32(uint32_t(s.size()));
    buf.append(s);
  }
};

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const;
  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  double f64();
  void bytes(void* p, size_t n);
  std::string str();
  bool eof() const { return pos >= buf.size(); }
};

}  // namespace dualpol::fsio
