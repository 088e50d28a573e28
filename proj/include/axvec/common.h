// include/axvec/common.h

// Copyright 2026  The axvec Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

namespace axvec {

/// Every recoverable failure in the toolkit is reported with this type; the
/// message is meant to be printed as a one-line diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// splitmix64 finalizer; used to derive independent seeds for sub-streams.
inline uint64_t DeriveSeed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// mt19937_64 with distributions written out explicitly.  The standard
/// library distributions are implementation-defined, which would break
/// byte-identical corpora across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double Normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = Uniform();
    } while (u1 <= 0.0);
    const double u2 = Uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, n), unbiased by rejection.
  uint64_t Below(uint64_t n) {
    if (n == 0) throw Error("Rng::Below: empty range");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = 0;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform integer in [lo, hi].
  int64_t Between(int64_t lo, int64_t hi) {
    if (hi < lo) throw Error("Rng::Between: hi < lo");
    return lo + static_cast<int64_t>(Below(static_cast<uint64_t>(hi - lo) + 1));
  }

  template <typename T>
  void Shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(Below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Little-endian binary helpers.  Values are assembled byte by byte so the
// layout does not depend on the host.

inline void WriteU32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline void WriteU64(std::ostream& os, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline void WriteF32(std::ostream& os, float v) {
  WriteU32(os, std::bit_cast<uint32_t>(v));
}

inline void WriteF64(std::ostream& os, double v) {
  WriteU64(os, std::bit_cast<uint64_t>(v));
}

inline void ReadExact(std::istream& is, char* dst, size_t n, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw Error(std::string("truncated input while reading ") + what);
}

inline uint32_t ReadU32(std::istream& is, const char* what) {
  unsigned char b[4];
  ReadExact(is, reinterpret_cast<char*>(b), 4, what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline uint64_t ReadU64(std::istream& is, const char* what) {
  unsigned char b[8];
  ReadExact(is, reinterpret_cast<char*>(b), 8, what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline float ReadF32(std::istream& is, const char* what) {
  return std::bit_cast<float>(ReadU32(is, what));
}

inline double ReadF64(std::istream& is, const char* what) {
  return std::bit_cast<double>(ReadU64(is, what));
}

inline void WriteString(std::ostream& os, const std::string& s) {
  WriteU32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string ReadString(std::istream& is, const char* what) {
  const uint32_t n = ReadU32(is, what);
  if (n > (1u << 28)) throw Error(std::string("implausible string length in ") + what);
  std::string s(n, '\0');
  if (n > 0) ReadExact(is, s.data(), n, what);
  return s;
}

/// Writes `path` through a temporary sibling and renames it into place, so a
/// failed writer never leaves a partial file behind.
inline void AtomicWrite(const std::filesystem::path& path,
                        const std::function<void(std::ostream&)>& writer,
                        bool binary = true) {
  namespace fs = std::filesystem;
  if (path.has_parent_path() && !fs::exists(path.parent_path())) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw Error("cannot create directory " + path.parent_path().string());
  }
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  try {
    {
      std::ofstream os(tmp, binary ? std::ios::binary | std::ios::trunc
                                   : std::ios::trunc);
      if (!os) throw Error("cannot open " + path.string() + " for writing");
      writer(os);
      os.flush();
      if (!os) throw Error("write failed for " + path.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error("cannot rename into " + path.string() + ": " + ec.message());
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

inline std::ifstream OpenInput(const std::filesystem::path& path, bool binary = true) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw Error("cannot open " + path.string());
  return is;
}

/// Splits on runs of whitespace.
inline std::vector<std::string> SplitFields(const std::string& line) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace axvec
