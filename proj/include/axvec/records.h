// include/axvec/records.h

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

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "axvec/common.h"

namespace axvec {

/// One named tensor in a record file: shape plus 64-bit little-endian values.
struct Record {
  std::string name;
  std::vector<uint64_t> shape;
  std::vector<double> values;
};

inline void WriteRecord(std::ostream& os, const std::string& name,
                        const std::vector<uint64_t>& shape, const double* data, size_t size) {
  uint64_t expected = 1;
  for (uint64_t d : shape) expected *= d;
  if (expected != size) throw Error("record " + name + ": shape does not match value count");
  WriteString(os, name);
  WriteU32(os, static_cast<uint32_t>(shape.size()));
  for (uint64_t d : shape) WriteU64(os, d);
  for (size_t i = 0; i < size; ++i) WriteF64(os, data[i]);
}

inline Record ReadRecord(std::istream& is) {
  Record r;
  r.name = ReadString(is, "record name");
  const uint32_t ndim = ReadU32(is, "record rank");
  if (ndim > 8) throw Error("record " + r.name + ": implausible rank");
  uint64_t count = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    r.shape.push_back(ReadU64(is, "record shape"));
    count *= r.shape.back();
  }
  if (count > (uint64_t{1} << 32)) throw Error("record " + r.name + ": implausible size");
  r.values.resize(count);
  for (uint64_t i = 0; i < count; ++i) r.values[i] = ReadF64(is, "record values");
  return r;
}

/// File preamble shared by every record container: 4-byte magic, u32
/// version, a free-form header string (JSON config), u32 record count.
inline void WriteRecordHeader(std::ostream& os, const char magic[4], uint32_t version,
                              const std::string& header, uint32_t count) {
  os.write(magic, 4);
  WriteU32(os, version);
  WriteString(os, header);
  WriteU32(os, count);
}

struct RecordHeader {
  uint32_t version = 0;
  std::string header;
  uint32_t count = 0;
};

inline RecordHeader ReadRecordHeader(std::istream& is, const char magic[4],
                                     uint32_t max_version) {
  char got[4];
  ReadExact(is, got, 4, "magic");
  if (std::string(got, 4) != std::string(magic, 4))
    throw Error("bad magic: expected " + std::string(magic, 4));
  RecordHeader h;
  h.version = ReadU32(is, "version");
  if (h.version == 0 || h.version > max_version)
    throw Error("unsupported format version " + std::to_string(h.version));
  h.header = ReadString(is, "header");
  h.count = ReadU32(is, "record count");
  return h;
}

}  // namespace axvec
