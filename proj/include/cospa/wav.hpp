#pragma once

#include <string>
#include <vector>

namespace cospa::wav {

struct Audio {
  double sample_rate = 16000.0;
  std::vector<std::vector<double>> channels;  // [channel][sample]

  std::size_t num_channels() const noexcept { return channels.size(); }
  std::size_t num_samples() const noexcept { return channels.empty() ? 0 : channels.front().size(); }
};

/// Writes IEEE float32 PCM (format tag 3), interleaved channels.
void write(const std::string& path, const Audio& audio);
void write_mono(const std::string& path, const std::vector<double>& samples, double sample_rate);

/// Reads float32 or 16-bit PCM WAV (including WAVE_FORMAT_EXTENSIBLE).
Audio read(const std::string& path);

}  // namespace cospa::wav
