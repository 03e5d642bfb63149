#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "fedsim/core.hpp"
#include "fedsim/encoding.hpp"

namespace fedsim {

namespace iodetail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(is.good(), "encoded-update record: truncated input");
  return v;
}

}  // namespace iodetail

// Self-describing binary record: kind tag, metadata, lengths, payload.
// Little-endian, fixed-width fields.
inline void write_encoded_update(std::ostream& os, const EncodedUpdate& e) {
  using iodetail::put;
  std::uint8_t kind = 255;
  if (std::holds_alternative<DensePayload>(e.payload)) kind = 0;
  if (std::holds_alternative<SparsePayload>(e.payload)) kind = 1;
  if (std::holds_alternative<LatticePayload>(e.payload)) kind = 2;
  if (std::holds_alternative<NoisedPayload>(e.payload)) kind = 3;
  check(kind != 255, "write_encoded_update: unknown payload kind");
  put<std::uint8_t>(os, kind);
  put<std::int32_t>(os, e.dim);
  put<std::int64_t>(os, e.bit_cost);
  put<std::int32_t>(os, e.user_id);
  put<std::int64_t>(os, e.round);
  put<std::int64_t>(os, e.n_samples);
  switch (kind) {
    case 0: {
      const auto& p = std::get<DensePayload>(e.payload);
      put<std::uint64_t>(os, p.values.size());
      for (double v : p.values) put<double>(os, v);
      break;
    }
    case 1: {
      const auto& p = std::get<SparsePayload>(e.payload);
      put<std::uint64_t>(os, p.entries.size());
      for (const auto& [idx, val] : p.entries) {
        put<std::int32_t>(os, idx);
        put<double>(os, val);
      }
      break;
    }
    case 2: {
      const auto& p = std::get<LatticePayload>(e.payload);
      put<double>(os, p.input_norm);
      put<std::uint8_t>(os, static_cast<std::uint8_t>((p.zero ? 1 : 0) | (p.dithered ? 2 : 0)));
      put<std::uint64_t>(os, p.dither_key);
      put<std::uint64_t>(os, p.coords.size());
      for (long k : p.coords) put<std::int64_t>(os, k);
      break;
    }
    case 3: {
      const auto& p = std::get<NoisedPayload>(e.payload);
      put<double>(os, p.sigma);
      put<std::uint64_t>(os, p.values.size());
      for (double v : p.values) put<double>(os, v);
      break;
    }
  }
}

inline EncodedUpdate read_encoded_update(std::istream& is) {
  using iodetail::take;
  EncodedUpdate e;
  const auto kind = take<std::uint8_t>(is);
  e.dim = take<std::int32_t>(is);
  e.bit_cost = take<std::int64_t>(is);
  e.user_id = take<std::int32_t>(is);
  e.round = take<std::int64_t>(is);
  e.n_samples = take<std::int64_t>(is);
  switch (kind) {
    case 0: {
      DensePayload p;
      p.values.resize(take<std::uint64_t>(is));
      for (double& v : p.values) v = take<double>(is);
      e.payload = std::move(p);
      break;
    }
    case 1: {
      SparsePayload p;
      const auto n = take<std::uint64_t>(is);
      int prev = -1;
      for (std::uint64_t i = 0; i < n; ++i) {
        const int idx = take<std::int32_t>(is);
        const double val = take<double>(is);
        check(idx > prev && idx < e.dim,
              "encoded-update record: sparse indices must be strictly increasing in [0,d)");
        prev = idx;
        p.entries.emplace_back(idx, val);
      }
      e.payload = std::move(p);
      break;
    }
    case 2: {
      LatticePayload p;
      p.input_norm = take<double>(is);
      const auto flags = take<std::uint8_t>(is);
      p.zero = (flags & 1) != 0;
      p.dithered = (flags & 2) != 0;
      p.dither_key = take<std::uint64_t>(is);
      p.coords.resize(take<std::uint64_t>(is));
      for (long& k : p.coords) k = static_cast<long>(take<std::int64_t>(is));
      check(p.input_norm >= 0.0, "encoded-update record: negative norm");
      e.payload = std::move(p);
      break;
    }
    case 3: {
      NoisedPayload p;
      p.sigma = take<double>(is);
      p.values.resize(take<std::uint64_t>(is));
      for (double& v : p.values) v = take<double>(is);
      e.payload = std::move(p);
      break;
    }
    default:
      throw Error("encoded-update record: unknown kind tag " + std::to_string(kind));
  }
  return e;
}

// Final-model artifact: "FSIM" magic, format version, model count, then one
// flat double vector per model.
inline void write_model_file(std::ostream& os, const std::vector<ParamVector>& models) {
  using iodetail::put;
  os.write("FSIM", 4);
  put<std::uint32_t>(os, 1);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(models.size()));
  for (const auto& m : models) {
    put<std::uint64_t>(os, m.size());
    for (double v : m) put<double>(os, v);
  }
}

inline std::vector<ParamVector> read_model_file(std::istream& is) {
  using iodetail::take;
  char magic[4];
  is.read(magic, 4);
  check(is.good() && std::memcmp(magic, "FSIM", 4) == 0, "model file: bad magic");
  const auto version = take<std::uint32_t>(is);
  check(version == 1, "model file: unsupported version");
  std::vector<ParamVector> models(take<std::uint32_t>(is));
  for (auto& m : models) {
    m.resize(take<std::uint64_t>(is));
    for (double& v : m) v = take<double>(is);
  }
  return models;
}

}  // namespace fedsim
