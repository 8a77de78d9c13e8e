#include <cstring>
#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "betaprune/experiment.hpp"

namespace betaprune {

namespace {

constexpr char kMagic[4] = {'B', 'P', 'R', 'N'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const uint8_t* p;
  const uint8_t* end;
  std::string path;

  void need(size_t n) const {
    if (static_cast<size_t>(end - p) < n) {
      throw Error(ErrorKind::data, path + ": truncated model file");
    }
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
                 (uint32_t(p[3]) << 24);
    p += 4;
    return v;
  }
  uint8_t u8() {
    need(1);
    return *p++;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

bool prunable_by_convention(const std::string& name) {
  auto ends_with = [&name](const char* suffix) {
    const size_t n = std::strlen(suffix);
    return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
  };
  return ends_with(".kernel") || ends_with(".weight");
}

}  // namespace

int64_t serialize_model(const ModelParams& params, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& e : params) {
    if (e.name.size() > 0xffff) {
      throw Error(ErrorKind::config, "serialize_model: name too long: " + e.name);
    }
    put_u16(out, static_cast<uint16_t>(e.name.size()));
    out.append(e.name);
    const auto& shape = e.tensor.shape();
    out.push_back(static_cast<char>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
    for (float v : e.tensor.data()) put_f32(out, v);
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::data, "serialize_model: cannot write " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error(ErrorKind::data, "serialize_model: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
  return static_cast<int64_t>(out.size());
}

ModelParams load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::data, "load_model: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{reinterpret_cast<const uint8_t*>(bytes.data()),
           reinterpret_cast<const uint8_t*>(bytes.data()) + bytes.size(), path};
  r.need(4);
  if (std::memcmp(r.p, kMagic, 4) != 0) {
    throw Error(ErrorKind::data, path + ": bad model magic");
  }
  r.p += 4;
  const uint16_t version = r.u16();
  if (version != kVersion) {
    throw Error(ErrorKind::data, path + ": unsupported model version " + std::to_string(version));
  }
  const uint32_t count = r.u32();
  ModelParams params;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    r.need(name_len);
    std::string name(reinterpret_cast<const char*>(r.p), name_len);
    r.p += name_len;
    const uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : data) v = r.f32();
    params.add(name, Tensor::from(std::move(shape), std::move(data), true),
               prunable_by_convention(name));
  }
  if (r.p != r.end) {
    throw Error(ErrorKind::data, path + ": trailing bytes after last tensor");
  }
  return params;
}

int64_t measure_compression(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::data, "measure_compression: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  z_stream strm{};
  // windowBits 15+16 selects a gzip container; default compression level.
  if (deflateInit2(&strm, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) !=
      Z_OK) {
    throw Error(ErrorKind::data, "measure_compression: deflateInit2 failed");
  }
  strm.next_in = reinterpret_cast<Bytef*>(bytes.data());
  strm.avail_in = static_cast<uInt>(bytes.size());
  int64_t compressed = 0;
  std::vector<unsigned char> buf(1 << 16);
  int ret = Z_OK;
  do {
    strm.next_out = buf.data();
    strm.avail_out = static_cast<uInt>(buf.size());
    ret = deflate(&strm, Z_FINISH);
    if (ret == Z_STREAM_ERROR) {
      deflateEnd(&strm);
      throw Error(ErrorKind::data, "measure_compression: deflate failed");
    }
    compressed += static_cast<int64_t>(buf.size() - strm.avail_out);
  } while (ret != Z_STREAM_END);
  deflateEnd(&strm);
  return compressed;
}

}  // namespace betaprune
