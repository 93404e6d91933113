#include "sfnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "sfnet/pnm.hpp"

namespace sfnet {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'F', 'A', 'L'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  bool done() const { return pos_ == bytes_.size(); }

  void take(void* dst, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw IoError(origin_ + ": truncated while reading " + what + " at byte " +
                    std::to_string(pos_));
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32(const char* what) {
    std::uint8_t b[4];
    take(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  [[noreturn]] void fail(const std::string& what) const { throw IoError(origin_ + ": " + what); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, tensor] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const Shape& s = tensor.shape();
    put_u32(out, 4);
    for (int d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
    std::span<const double> data = tensor.data();
    const std::size_t at = out.size();
    out.resize(at + data.size_bytes());
    std::memcpy(out.data() + at, data.data(), data.size_bytes());
  }
  return out;
}

ParamStore decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader in(bytes, origin);
  char magic[4];
  in.take(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) in.fail("not an SFAL checkpoint (bad magic)");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    in.fail("unsupported checkpoint version " + std::to_string(version));
  }
  ParamStore params;
  while (!in.done()) {
    const std::uint32_t len = in.u32("name length");
    if (len == 0 || len > 4096) in.fail("implausible name length " + std::to_string(len));
    std::string name(len, '\0');
    in.take(name.data(), len, "name");
    const std::uint32_t ndims = in.u32("rank");
    if (ndims != 4) in.fail("parameter " + name + " has rank " + std::to_string(ndims));
    std::uint32_t dims[4];
    for (auto& d : dims) d = in.u32("dims");
    const Shape shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                      static_cast<int>(dims[2]), static_cast<int>(dims[3])};
    if (shape.numel() > (std::size_t{1} << 28)) in.fail("parameter " + name + " is implausibly large");
    std::vector<double> data(shape.numel());
    in.take(data.data(), data.size() * sizeof(double), "payload");
    if (params.contains(name)) in.fail("duplicate parameter " + name);
    params.add(name, Tensor::from_data(shape, std::move(data)));
  }
  return params;
}

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(params));
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

void assign_params(ParamStore& target, const ParamStore& source) {
  for (const auto& [name, tensor] : target) {
    if (!source.contains(name)) throw ShapeError("parameter " + name + " missing from source");
    const Tensor& src = source.get(name);
    if (!(src.shape() == tensor.shape())) {
      throw ShapeError("parameter " + name + " has shape " + src.shape().str() + ", expected " +
                       tensor.shape().str());
    }
  }
  for (const auto& name : source.names()) {
    if (!target.contains(name)) throw ShapeError("unexpected parameter " + name + " in source");
  }
  for (auto& [name, tensor] : target) {
    std::span<const double> src = source.get(name).data();
    std::span<double> dst = tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace sfnet
