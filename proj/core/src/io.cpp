#include "dim3d/io.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace dim3d::io {

namespace {

constexpr char kCloudMagic[4] = {'P', 'C', 'B', '1'};
constexpr char kCkptMagic[8] = {'D', 'I', 'M', '3', 'C', 'K', 'P', 'T'};

void append_u32(std::string& buf, uint32_t v) {
  buf.append(reinterpret_cast<const char*>(&v), 4);
}

void append_f64(std::string& buf, double v) {
  buf.append(reinterpret_cast<const char*>(&v), 8);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string what;

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw IoError(IoError::Code::Truncated, what + ": truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  float f32() {
    need(4);
    float v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoError::Code::Io, "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoError::Code::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoError::Code::Io, "short write to " + path);
}

}  // namespace

void write_point_cloud(const std::string& path, const PointCloud& cloud) {
  if (cloud.size() < 1)
    throw IoError(IoError::Code::BadValue,
                  "refusing to write an empty point cloud to " + path);
  std::string buf;
  buf.append(kCloudMagic, 4);
  append_u32(buf, static_cast<uint32_t>(cloud.size()));
  append_u32(buf, 3);
  const auto d = cloud.points.data();
  for (int64_t i = 0; i < cloud.points.numel(); ++i) {
    const float f = static_cast<float>(d[i]);
    buf.append(reinterpret_cast<const char*>(&f), 4);
  }
  write_file(path, buf);
}

void write_point_cloud_text(const std::string& path, const PointCloud& cloud) {
  if (cloud.size() < 1)
    throw IoError(IoError::Code::BadValue,
                  "refusing to write an empty point cloud to " + path);
  std::string buf;
  char line[80];
  const auto d = cloud.points.data();
  for (int64_t i = 0; i < cloud.size(); ++i) {
    // Values round through float32 so both formats carry equal precision.
    std::snprintf(line, sizeof line, "%.9g %.9g %.9g\n",
                  static_cast<double>(static_cast<float>(d[i * 3])),
                  static_cast<double>(static_cast<float>(d[i * 3 + 1])),
                  static_cast<double>(static_cast<float>(d[i * 3 + 2])));
    buf += line;
  }
  write_file(path, buf);
}

PointCloud read_point_cloud(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() >= 4 && std::memcmp(buf.data(), kCloudMagic, 4) == 0) {
    Reader r{buf, 4, path};
    const uint32_t count = r.u32();
    const uint32_t dim = r.u32();
    if (dim != 3)
      throw IoError(IoError::Code::BadDim,
                    path + ": dimension " + std::to_string(dim) +
                        " unsupported (expected 3)");
    if (count == 0)
      throw IoError(IoError::Code::BadValue, path + ": empty point cloud");
    std::vector<double> pts(static_cast<size_t>(count) * 3);
    for (auto& v : pts) v = static_cast<double>(r.f32());
    PointCloud c;
    c.points = Tensor::from({static_cast<int64_t>(count), 3}, std::move(pts));
    return c;
  }
  // Text fallback: one "x y z" per line.
  if (buf.size() >= 4 &&
      static_cast<unsigned char>(buf[0]) > 0x7f)
    throw IoError(IoError::Code::BadMagic, path + ": unrecognized magic");
  std::istringstream in(buf);
  std::vector<double> pts;
  double x, y, z;
  while (in >> x >> y >> z) {
    pts.push_back(x);
    pts.push_back(y);
    pts.push_back(z);
  }
  if (!in.eof() && in.fail()) {
    in.clear();
    std::string tail;
    in >> tail;
    if (!tail.empty())
      throw IoError(IoError::Code::BadMagic,
                    path + ": neither PCB1 nor x-y-z text");
  }
  if (pts.empty())
    throw IoError(IoError::Code::BadValue, path + ": empty point cloud");
  PointCloud c;
  c.points =
      Tensor::from({static_cast<int64_t>(pts.size() / 3), 3}, std::move(pts));
  return c;
}

std::map<std::string, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  auto trim = [](std::string s) {
    const char* ws = " \t\r";
    const size_t b = s.find_first_not_of(ws);
    if (b == std::string::npos) return std::string();
    const size_t e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
  };
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError(IoError::Code::BadValue,
                    "config line " + std::to_string(lineno) +
                        " is not key=value: " + line);
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  return parse_config(read_file(path));
}

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::string buf;
  buf.append(kCkptMagic, 8);
  append_u32(buf, 1);  // version
  std::string cfg;
  for (const auto& [k, v] : data.config) cfg += k + "=" + v + "\n";
  append_u32(buf, static_cast<uint32_t>(cfg.size()));
  buf += cfg;
  append_u32(buf, static_cast<uint32_t>(data.tensors.size()));
  for (const auto& [name, t] : data.tensors) {
    append_u32(buf, static_cast<uint32_t>(name.size()));
    buf += name;
    append_u32(buf, static_cast<uint32_t>(t.rank()));
    for (size_t i = 0; i < t.rank(); ++i)
      append_u32(buf, static_cast<uint32_t>(t.dim(i)));
    for (double v : t.data()) append_f64(buf, v);
  }
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
            static_cast<uInt>(buf.size())));
  append_u32(buf, crc);
  write_file(path, buf);
}

CheckpointData load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 8 || std::memcmp(buf.data(), kCkptMagic, 8) != 0)
    throw IoError(IoError::Code::BadMagic, path + ": not a DIM3CKPT file");
  if (buf.size() < 12 + 4)
    throw IoError(IoError::Code::Truncated, path + ": truncated file");
  const uint32_t stored_crc = [&] {
    uint32_t v;
    std::memcpy(&v, buf.data() + buf.size() - 4, 4);
    return v;
  }();
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
            static_cast<uInt>(buf.size() - 4)));
  if (crc != stored_crc)
    throw IoError(IoError::Code::BadCrc, path + ": checksum mismatch");

  Reader r{buf, 8, path};
  const uint32_t version = r.u32();
  if (version != 1)
    throw IoError(IoError::Code::BadValue,
                  path + ": unsupported version " + std::to_string(version));
  CheckpointData data;
  const uint32_t cfg_len = r.u32();
  data.config = parse_config(r.bytes(cfg_len));
  const uint32_t count = r.u32();
  data.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    const uint32_t rank = r.u32();
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int64_t>(r.u32());
      numel *= shape[d];
    }
    std::vector<double> payload(numel);
    for (auto& v : payload) v = r.f64();
    data.tensors.emplace_back(std::move(name),
                              Tensor::from(std::move(shape),
                                           std::move(payload)));
  }
  return data;
}

}  // namespace dim3d::io
