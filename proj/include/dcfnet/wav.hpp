// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dcfnet/tensor.hpp"

namespace dcfnet {

// Mono audio at a fixed sample rate. Samples are kept in double regardless
// of the network precision; metric code depends on it.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 8000;

  size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  double energy() const {
    double e = 0.0;
    for (double s : samples) e += s * s;
    return e;
  }

  double peak() const {
    double p = 0.0;
    for (double s : samples) p = std::max(p, std::abs(s));
    return p;
  }

  // length >= 1, all samples finite, |sample| <= 4 (headroom guard).
  void validate() const {
    check(!samples.empty(), "waveform: empty");
    for (double s : samples)
      if (!std::isfinite(s)) throw ValueError("waveform: non-finite sample");
    if (peak() > 4.0) throw ValueError("waveform: sample exceeds +-4.0 headroom");
  }
};

namespace detail {

inline void put_u32(std::string& s, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  s.append(b, 4);
}
inline void put_u16(std::string& s, uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  s.append(b, 2);
}
inline uint32_t get_u32(const char* p) {
  return uint32_t(uint8_t(p[0])) | uint32_t(uint8_t(p[1])) << 8 | uint32_t(uint8_t(p[2])) << 16 |
         uint32_t(uint8_t(p[3])) << 24;
}
inline uint16_t get_u16(const char* p) {
  return uint16_t(uint8_t(p[0])) | uint16_t(uint8_t(p[1])) << 8;
}

}  // namespace detail

// Writes mono 32-bit IEEE float WAV.
inline void write_wav(const std::string& path, const Waveform& w) {
  w.validate();
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_bytes = n * 4;
  std::string out;
  out.reserve(58 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 4 + 26 + 12 + 8 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  detail::put_u32(out, 18);
  detail::put_u16(out, 3);  // IEEE float
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<uint32_t>(w.sample_rate) * 4);
  detail::put_u16(out, 4);
  detail::put_u16(out, 32);
  detail::put_u16(out, 0);  // cbSize
  out += "fact";
  detail::put_u32(out, 4);
  detail::put_u32(out, n);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (double s : w.samples) {
    const float f = static_cast<float>(s);
    char b[4];
    std::memcpy(b, &f, 4);
    out.append(b, 4);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

// Reads mono WAV; accepts 16-bit PCM and 32-bit IEEE float.
inline Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 44 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0)
    throw IoError("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  size_t data_off = 0, data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id = buf.substr(pos, 4);
    const uint32_t len = detail::get_u32(buf.data() + pos + 4);
    const size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || body + len > buf.size()) throw IoError("bad fmt chunk: " + path);
      format = detail::get_u16(buf.data() + body);
      channels = detail::get_u16(buf.data() + body + 2);
      rate = detail::get_u32(buf.data() + body + 4);
      bits = detail::get_u16(buf.data() + body + 14);
    } else if (id == "data") {
      data_off = body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }
  if (data_off == 0 || data_off + data_len > buf.size())
    throw IoError("missing or truncated data chunk: " + path);
  if (channels != 1) throw IoError("expected mono audio: " + path);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const size_t n = data_len / 2;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      int16_t v;
      std::memcpy(&v, buf.data() + data_off + i * 2, 2);
      w.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const size_t n = data_len / 4;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, buf.data() + data_off + i * 4, 4);
      w.samples[i] = static_cast<double>(v);
    }
  } else {
    throw IoError("unsupported WAV encoding (want PCM16 or float32): " + path);
  }
  w.validate();
  return w;
}

template <typename T>
Tensor<T> to_tensor(const Waveform& w) {
  std::vector<T> v(w.samples.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(w.samples[i]);
  return Tensor<T>::from({v.size()}, std::move(v));
}

template <typename T>
Waveform to_waveform(const Tensor<T>& t, int sample_rate = 8000) {
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(t.data().begin(), t.data().end());
  return w;
}

}  // namespace dcfnet
