#pragma once

// Event files. Both variants start with the ASCII line `# width height`.
//   text:   one event per line, `t_us x y p`, p in {-1, 1}
//   binary: packed little-endian records u64 t, u16 x, u16 y, i8 p (13 bytes)

#include "evtrack/errors.hpp"
#include "evtrack/events.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

namespace evtrack {

enum class EventFormat { kText, kBinary };

inline constexpr std::size_t kBinaryRecordSize = 13;

namespace detail {

inline void write_header(std::ostream& out, const EventStream& s) {
  out << "# " << s.width << ' ' << s.height << '\n';
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Parses the header line; returns the offset just past it.
inline std::size_t parse_header(std::string_view buf, EventStream& s, const std::filesystem::path& path) {
  const std::size_t nl = buf.find('\n');
  if (buf.empty() || buf[0] != '#' || nl == std::string_view::npos)
    throw IoError(path.string() + ": missing '# width height' header");
  std::string_view line = buf.substr(1, nl - 1);
  auto skip = [&] {
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
  };
  skip();
  auto r1 = std::from_chars(line.data(), line.data() + line.size(), s.width);
  line.remove_prefix(static_cast<std::size_t>(r1.ptr - line.data()));
  skip();
  auto r2 = std::from_chars(line.data(), line.data() + line.size(), s.height);
  if (r1.ec != std::errc() || r2.ec != std::errc() || s.width <= 0 || s.height <= 0)
    throw IoError(path.string() + ": malformed header");
  return nl + 1;
}

template <typename U>
void put_le(char* dst, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
}

template <typename U>
U get_le(const char* src) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(src[i])) << (8 * i);
  return static_cast<U>(v);
}

}  // namespace detail

inline void write_events(const std::filesystem::path& path, const EventStream& s, EventFormat fmt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  detail::write_header(out, s);
  if (fmt == EventFormat::kText) {
    std::string buf;
    buf.reserve(s.size() * 24);
    char line[64];
    char* const end = line + sizeof line;
    for (const Event& e : s.events) {
      // u64 + 2 x u16 + sign fits comfortably in 64 bytes
      char* p = std::to_chars(line, end, e.t).ptr;
      buf.append(line, p);
      buf.push_back(' ');
      buf.append(line, std::to_chars(line, end, e.x).ptr);
      buf.push_back(' ');
      buf.append(line, std::to_chars(line, end, e.y).ptr);
      buf.push_back(' ');
      buf.append(line, std::to_chars(line, end, static_cast<int>(e.p)).ptr);
      buf.push_back('\n');
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  } else {
    std::string buf(s.size() * kBinaryRecordSize, '\0');
    char* dst = buf.data();
    for (const Event& e : s.events) {
      detail::put_le<std::uint64_t>(dst, e.t);
      detail::put_le<std::uint16_t>(dst + 8, e.x);
      detail::put_le<std::uint16_t>(dst + 10, e.y);
      dst[12] = static_cast<char>(e.p);
      dst += kBinaryRecordSize;
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline EventStream read_events(const std::filesystem::path& path, EventFormat fmt) {
  const std::string buf = detail::read_file(path);
  EventStream s;
  std::size_t pos = detail::parse_header(buf, s, path);
  if (fmt == EventFormat::kBinary) {
    const std::size_t bytes = buf.size() - pos;
    if (bytes % kBinaryRecordSize != 0) throw IoError(path.string() + ": truncated binary record");
    s.events.resize(bytes / kBinaryRecordSize);
    const char* src = buf.data() + pos;
    for (Event& e : s.events) {
      e.t = detail::get_le<std::uint64_t>(src);
      e.x = detail::get_le<std::uint16_t>(src + 8);
      e.y = detail::get_le<std::uint16_t>(src + 10);
      e.p = static_cast<std::int8_t>(src[12]);
      src += kBinaryRecordSize;
    }
  } else {
    const char* p = buf.data() + pos;
    const char* end = buf.data() + buf.size();
    std::size_t lineno = 1;
    auto skip_ws = [&] {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    };
    while (p < end) {
      ++lineno;
      skip_ws();
      if (p < end && (*p == '\n' || *p == '#')) {
        while (p < end && *p != '\n') ++p;
        ++p;
        continue;
      }
      if (p >= end) break;
      Event e;
      int x = 0, y = 0, pol = 0;
      auto r = std::from_chars(p, end, e.t);
      bool ok = r.ec == std::errc();
      p = r.ptr;
      skip_ws();
      r = std::from_chars(p, end, x);
      ok = ok && r.ec == std::errc();
      p = r.ptr;
      skip_ws();
      r = std::from_chars(p, end, y);
      ok = ok && r.ec == std::errc();
      p = r.ptr;
      skip_ws();
      r = std::from_chars(p, end, pol);
      ok = ok && r.ec == std::errc();
      p = r.ptr;
      skip_ws();
      if (!ok || x < 0 || y < 0 || x > 0xffff || y > 0xffff || (p < end && *p != '\n'))
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed event line");
      e.x = static_cast<std::uint16_t>(x);
      e.y = static_cast<std::uint16_t>(y);
      e.p = static_cast<std::int8_t>(pol);
      s.events.push_back(e);
      if (p < end) ++p;
    }
  }
  s.validate();
  return s;
}

/// Picks the format from the extension: `.bin` is binary, anything else text.
inline EventFormat format_for(const std::filesystem::path& path) {
  return path.extension() == ".bin" ? EventFormat::kBinary : EventFormat::kText;
}

}  // namespace evtrack
