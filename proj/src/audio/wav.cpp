#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "alm/audio/audio.hpp"
#include "alm/core/errors.hpp"

namespace alm::audio {
namespace {

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in '" + path.string() + "'";

  if (bytes.size() < 12) throw UnsupportedFormat("truncated header (RIFF)" + where);
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0) throw UnsupportedFormat("missing RIFF magic" + where);
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) throw UnsupportedFormat("RIFF form type is not WAVE" + where);

  bool have_fmt = false;
  std::uint32_t sample_rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > bytes.size()) throw UnsupportedFormat("truncated header (fmt chunk)" + where);
      const std::uint16_t format = read_u16(bytes.data() + body);
      const std::uint16_t channels = read_u16(bytes.data() + body + 2);
      sample_rate = read_u32(bytes.data() + body + 4);
      const std::uint16_t bits = read_u16(bytes.data() + body + 14);
      if (format != 1) throw UnsupportedFormat("audio_format " + std::to_string(format) + " is not PCM (1)" + where);
      if (channels != 1) throw UnsupportedFormat("channels " + std::to_string(channels) + " is not mono (1)" + where);
      if (bits != 16) throw UnsupportedFormat("bits_per_sample " + std::to_string(bits) + " is not 16" + where);
      if (sample_rate == 0) throw UnsupportedFormat("sample_rate is 0" + where);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw UnsupportedFormat("data chunk before fmt chunk" + where);
      if (body + size > bytes.size()) throw UnsupportedFormat("truncated data chunk" + where);
      if (size % 2 != 0) throw UnsupportedFormat("data chunk size " + std::to_string(size) + " is not a whole number of samples" + where);
      AudioClip clip;
      clip.sample_rate = static_cast<int>(sample_rate);
      clip.samples.resize(size / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * i));
        clip.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return clip;
    }
    pos = body + size + (size & 1);
  }
  throw UnsupportedFormat(std::string(have_fmt ? "missing data chunk" : "truncated header (no fmt chunk)") + where);
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  validate(clip);
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (float s : clip.samples) {
    const long q = std::clamp(std::lround(static_cast<double>(s) * 32768.0), -32768L, 32767L);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace alm::audio
