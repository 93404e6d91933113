#include "sfnet/pnm.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "sfnet/tensor.hpp"

namespace sfnet {

namespace {

std::vector<std::uint8_t> encode(const char* magic, int w, int h,
                                 const std::vector<std::uint8_t>& payload) {
  const std::string header =
      std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

class HeaderParser {
 public:
  HeaderParser(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  void expect_magic(const char* magic) {
    if (bytes_.size() < 2 || bytes_[0] != magic[0] || bytes_[1] != magic[1]) {
      fail(std::string("missing ") + magic + " magic");
    }
    pos_ = 2;
  }

  int next_int() {
    skip_space();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("malformed header");
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (value > (1L << 24)) fail("header value out of range");
    }
    return static_cast<int>(value);
  }

  // Exactly one whitespace byte separates maxval from the payload.
  std::size_t payload_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("malformed header");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(path_.string() + ": " + what);
  }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

template <class Image>
Image decode(const std::filesystem::path& path, const char* magic, int channels) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  HeaderParser parser(bytes, path);
  parser.expect_magic(magic);
  Image image;
  image.width = parser.next_int();
  image.height = parser.next_int();
  const int maxval = parser.next_int();
  if (image.width < 1 || image.height < 1) parser.fail("empty image");
  if (maxval != 255) parser.fail("only maxval 255 is supported, got " + std::to_string(maxval));
  const std::size_t start = parser.payload_start();
  const std::size_t need = static_cast<std::size_t>(image.width) * image.height * channels;
  if (bytes.size() - start < need) {
    parser.fail("truncated payload: expected " + std::to_string(need) + " bytes, found " +
                std::to_string(bytes.size() - start));
  }
  if (bytes.size() - start > need) parser.fail("trailing bytes after payload");
  image.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  return image;
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path.string() + ": read failed");
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

std::vector<std::uint8_t> encode_ppm(const RasterImage& image) {
  return encode("P6", image.width, image.height, image.pixels);
}

void write_ppm(const RasterImage& image, const std::filesystem::path& path) {
  write_file(path, encode_ppm(image));
}

RasterImage read_ppm(const std::filesystem::path& path) {
  return decode<RasterImage>(path, "P6", 3);
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  return encode("P5", image.width, image.height, image.pixels);
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  write_file(path, encode_pgm(image));
}

GrayImage read_pgm(const std::filesystem::path& path) { return decode<GrayImage>(path, "P5", 1); }

}  // namespace sfnet
