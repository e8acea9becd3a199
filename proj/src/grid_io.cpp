#include "omenn/grid_io.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "omenn/model_format.hpp"

namespace omenn {
namespace {

/// Whitespace tokenizer that remembers line numbers and skips comments.
class Tokens {
 public:
  Tokens(const std::string& text, std::string source) : text_(text), source_(std::move(source)) {}

  bool next(std::string_view& tok) {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '\n') {
        ++line_;
        ++pos_;
      } else if (c == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= text_.size()) return false;
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
           text_[pos_] != '#') {
      ++pos_;
    }
    tok = std::string_view(text_).substr(start, pos_ - start);
    return true;
  }

  std::string_view expect(const char* what) {
    std::string_view tok;
    if (!next(tok)) error(std::string("unexpected end of input, expected ") + what);
    return tok;
  }

  std::size_t size(const char* what) {
    const auto tok = expect(what);
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) {
      error(std::string("expected ") + what + ", got '" + std::string(tok) + "'");
    }
    return v;
  }

  double real() {
    const auto tok = expect("a value");
    // strtod accepts inf/nan spellings; reject them along with junk.
    const std::string s(tok);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v)) {
      error("invalid value '" + s + "'");
    }
    return v;
  }

  /// True when only the line holding the last token remains.
  bool at_line_end() {
    while (pos_ < text_.size() && text_[pos_] != '\n') {
      if (text_[pos_] == '#') return true;
      if (!std::isspace(static_cast<unsigned char>(text_[pos_]))) return false;
      ++pos_;
    }
    return true;
  }

  [[noreturn]] void error(const std::string& msg) const {
    fail(ErrorCode::Parse, source_ + ":" + std::to_string(line_) + ": " + msg);
  }

 private:
  const std::string& text_;
  std::string source_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = format::read_file(path);
  return {bytes.begin(), bytes.end()};
}

bool is_pnm(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6');
}

}  // namespace

Grid parse_grid(const std::string& text, const std::string& source) {
  Tokens toks(text, source);
  if (toks.expect("the 'omenn-grid' header") != "omenn-grid") toks.error("missing 'omenn-grid' header");
  if (toks.size("a version") != 1) toks.error("unsupported grid version");
  Grid g;
  const std::size_t rows = toks.size("a row count");
  const std::size_t cols = toks.size("a column count");
  if (rows == 0 || cols == 0) toks.error("grid dimensions must be positive");
  if (!toks.at_line_end()) {
    g.height = toks.size("a height");
    g.width = toks.size("a width");
    if (g.height * g.width != rows) toks.error("height * width must equal the row count");
  }
  g.values = Tensor({rows, cols});
  for (double& v : g.values.storage()) v = toks.real();
  std::string_view extra;
  if (toks.next(extra)) toks.error("trailing data '" + std::string(extra) + "'");
  return g;
}

Grid read_grid(const std::filesystem::path& path) {
  return parse_grid(read_text(path), path.string());
}

std::string format_grid(const Tensor& values, std::size_t height, std::size_t width) {
  if (values.rank() != 2) fail(ErrorCode::Shape, "format_grid: rank-2 tensor required");
  std::string out = "omenn-grid 1\n" + std::to_string(values.rows()) + " " +
                    std::to_string(values.cols());
  if (height != 0 && width != 0) {
    if (height * width != values.rows()) fail(ErrorCode::Shape, "format_grid: bad height/width");
    out += " " + std::to_string(height) + " " + std::to_string(width);
  }
  out += "\n";
  char buf[32];
  for (std::size_t i = 0; i < values.rows(); ++i) {
    for (std::size_t j = 0; j < values.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", values(i, j));
      out += buf;
      out += j + 1 < values.cols() ? ' ' : '\n';
    }
  }
  return out;
}

void write_grid(const std::filesystem::path& path, const Tensor& values, std::size_t height,
                std::size_t width) {
  const std::string text = format_grid(values, height, width);
  format::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                     text.size()));
}

Image read_pnm(const std::filesystem::path& path) {
  const auto bytes = format::read_file(path);
  if (!is_pnm(bytes)) fail(ErrorCode::Parse, path.string() + ": not a binary PGM/PPM file");
  // Header: magic, width, height, maxval, then exactly one whitespace byte.
  std::size_t pos = 2;
  auto header_int = [&](const char* what) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t v = 0;
    const char* first = reinterpret_cast<const char*>(bytes.data()) + pos;
    const char* last = reinterpret_cast<const char*>(bytes.data()) + bytes.size();
    const auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || p == first) {
      fail(ErrorCode::Parse, path.string() + ": bad " + what + " at byte offset " +
                                 std::to_string(pos));
    }
    pos += static_cast<std::size_t>(p - first);
    return v;
  };
  Image img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  img.width = header_int("width");
  img.height = header_int("height");
  const std::size_t maxval = header_int("maxval");
  if (img.width == 0 || img.height == 0) fail(ErrorCode::Parse, path.string() + ": empty image");
  if (maxval != 255) fail(ErrorCode::Parse, path.string() + ": only 8-bit images (maxval 255)");
  ++pos;
  const std::size_t n = img.width * img.height * img.channels;
  if (bytes.size() - std::min(pos, bytes.size()) != n) {
    fail(ErrorCode::Parse, path.string() + ": expected " + std::to_string(n) +
                               " pixel bytes from offset " + std::to_string(pos));
  }
  img.pixels.assign(bytes.begin() + static_cast<long>(pos), bytes.end());
  return img;
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != height * width) fail(ErrorCode::Shape, "write_pgm: pixel count mismatch");
  const std::string header =
      "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  format::write_file(path, bytes);
}

std::vector<std::uint8_t> heatmap_pixels(const Tensor& map) {
  double top = 0.0;
  for (double v : map.data()) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      fail(ErrorCode::Parameter, "heatmap values must be finite and nonnegative");
    }
    top = std::max(top, v);
  }
  std::vector<std::uint8_t> px(map.size(), 0);
  if (top == 0.0) return px;
  for (std::size_t i = 0; i < map.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(std::lround(255.0 * map[i] / top));
  }
  return px;
}

Tensor load_input(const std::filesystem::path& path, const Shape2D& expected) {
  const auto bytes = format::read_file(path);
  Tensor x;
  if (is_pnm(bytes)) {
    const Image img = read_pnm(path);
    if (expected.spatial() && (img.height != expected.height || img.width != expected.width)) {
      fail(ErrorCode::Shape, path.string() + ": image is " + std::to_string(img.height) + "x" +
                                 std::to_string(img.width) + ", model expects " +
                                 std::to_string(expected.height) + "x" +
                                 std::to_string(expected.width));
    }
    x = Tensor({img.height * img.width, img.channels});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) x[i] = img.pixels[i] / 255.0;
  } else {
    x = parse_grid(std::string(bytes.begin(), bytes.end()), path.string()).values;
  }
  if (x.rows() != expected.tokens || x.cols() != expected.channels) {
    fail(ErrorCode::Shape, path.string() + ": input is " + std::to_string(x.rows()) + "x" +
                               std::to_string(x.cols()) + ", model expects " +
                               std::to_string(expected.tokens) + "x" +
                               std::to_string(expected.channels));
  }
  return x;
}

}  // namespace omenn
