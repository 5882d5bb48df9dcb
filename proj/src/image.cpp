#include "aog/image.hpp"

#include <cctype>
#include <fstream>

namespace aog {

namespace {

// Reads the next PNM header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  while (ch != EOF && !std::isspace(ch)) {
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  return tok;
}

int parse_dim(const std::string& tok, const std::string& what) {
  if (tok.empty()) throw FormatError("truncated header: missing " + what);
  int value = 0;
  for (char c : tok) {
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw FormatError("bad " + what + " '" + tok + "'");
    value = value * 10 + (c - '0');
    if (value > 1 << 20) throw FormatError(what + " out of range");
  }
  return value;
}

}  // namespace

Image load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  const std::string magic = next_token(in);
  if (magic == "P5" || magic == "P6") {
    Image img;
    img.channels = magic == "P5" ? 1 : 3;
    img.width = parse_dim(next_token(in), "width");
    img.height = parse_dim(next_token(in), "height");
    const int maxval = parse_dim(next_token(in), "maxval");
    if (img.width <= 0 || img.height <= 0)
      throw FormatError("degenerate image size in " + path);
    if (maxval <= 0 || maxval > 255)
      throw FormatError("unsupported maxval " + std::to_string(maxval));
    const std::size_t count =
        std::size_t(img.width) * img.height * img.channels;
    img.data.resize(count);
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count)
      throw FormatError("truncated pixel data in " + path);
    return img;
  }
  if (magic.size() >= 2 && magic[0] == '\x89' && magic[1] == 'P')
    throw FormatError("PNG input is not supported; convert to PGM/PPM");
  throw FormatError("not a P5/P6 file: " + path);
}

void save_image(const Image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << (image.channels == 3 ? "P6" : "P5") << "\n"
      << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace aog
