#include "cospa/wav.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cospa::wav {

namespace {

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const std::vector<char>& buf, std::size_t pos) {
  if (pos + sizeof(T) > buf.size()) throw std::runtime_error("wav: truncated header");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

}  // namespace

void write(const std::string& path, const Audio& audio) {
  const std::size_t C = audio.num_channels(), N = audio.num_samples();
  if (C == 0) throw std::invalid_argument("wav::write: no channels");
  for (const auto& ch : audio.channels) {
    if (ch.size() != N) throw std::invalid_argument("wav::write: channel length mismatch");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("wav::write: cannot open " + path);
  const auto data_bytes = std::uint32_t(C * N * 4);
  const auto rate = std::uint32_t(audio.sample_rate);
  os.write("RIFF", 4);
  put<std::uint32_t>(os, 4 + 8 + 16 + 8 + data_bytes);
  os.write("WAVEfmt ", 8);
  put<std::uint32_t>(os, 16);
  put<std::uint16_t>(os, 3);
  put<std::uint16_t>(os, std::uint16_t(C));
  put<std::uint32_t>(os, rate);
  put<std::uint32_t>(os, rate * std::uint32_t(C) * 4);
  put<std::uint16_t>(os, std::uint16_t(C * 4));
  put<std::uint16_t>(os, 32);
  os.write("data", 4);
  put<std::uint32_t>(os, data_bytes);
  std::vector<float> inter(C * N);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < C; ++c) inter[i * C + c] = float(audio.channels[c][i]);
  }
  os.write(reinterpret_cast<const char*>(inter.data()), std::streamsize(inter.size() * sizeof(float)));
  if (!os) throw std::runtime_error("wav::write: write failed for " + path);
}

void write_mono(const std::string& path, const std::vector<double>& samples, double sample_rate) {
  write(path, Audio{sample_rate, {samples}});
}

Audio read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("wav::read: cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error("wav::read: not a RIFF/WAVE file: " + path);
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_pos = 0, data_len = 0;
  bool have_fmt = false;
  for (std::size_t pos = 12; pos + 8 <= buf.size();) {
    const std::string id(buf.data() + pos, 4);
    const auto len = get<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      format = get<std::uint16_t>(buf, body);
      channels = get<std::uint16_t>(buf, body + 2);
      rate = get<std::uint32_t>(buf, body + 4);
      bits = get<std::uint16_t>(buf, body + 14);
      if (format == 0xFFFE && len >= 40) format = get<std::uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      data_pos = body;
      data_len = std::min<std::size_t>(len, buf.size() - body);
      break;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt || data_pos == 0) throw std::runtime_error("wav::read: missing fmt or data chunk in " + path);
  if (channels == 0) throw std::runtime_error("wav::read: zero channels in " + path);
  const bool is_float = format == 3 && bits == 32;
  const bool is_pcm16 = format == 1 && bits == 16;
  if (!is_float && !is_pcm16) {
    throw std::runtime_error("wav::read: unsupported encoding (format " + std::to_string(format) + ", " +
                             std::to_string(bits) + " bits) in " + path);
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  Audio a;
  a.sample_rate = rate;
  a.channels.assign(channels, std::vector<double>(frames));
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t p = data_pos + (i * channels + c) * width;
      a.channels[c][i] = is_float ? double(get<float>(buf, p)) : double(get<std::int16_t>(buf, p)) / 32768.0;
    }
  }
  return a;
}

}  // namespace cospa::wav
