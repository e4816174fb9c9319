#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "missfuse/errors.hpp"

namespace missfuse {

// Per-sample bit vector of observed modalities; bit m set means modality m
// was acquired.
struct ModalityMask {
  std::vector<uint8_t> bits;

  static ModalityMask from_bits(uint32_t packed, int num_modalities) {
    ModalityMask m;
    m.bits.resize(num_modalities);
    for (int i = 0; i < num_modalities; ++i) m.bits[i] = (packed >> i) & 1u;
    return m;
  }

  static ModalityMask all_observed(int num_modalities) {
    ModalityMask m;
    m.bits.assign(num_modalities, 1);
    return m;
  }

  bool observed(int m) const { return bits.at(m) != 0; }

  int count() const {
    int c = 0;
    for (auto b : bits) c += b != 0;
    return c;
  }

  bool any() const { return count() > 0; }

  uint32_t to_bits() const {
    uint32_t packed = 0;
    for (size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) packed |= 1u << i;
    }
    return packed;
  }

  // Modality 0 is the leftmost character.
  std::string to_string() const {
    std::string s;
    for (auto b : bits) s.push_back(b ? '1' : '0');
    return s;
  }

  bool operator==(const ModalityMask&) const = default;
};

struct Sample {
  std::vector<std::vector<float>> features;  // empty vector where missing
  ModalityMask mask;
  int label = 0;

  bool operator==(const Sample&) const = default;
};

// Drops features of modalities outside `mask`; used by the evaluation
// protocol to re-mask fully observed test samples.
inline Sample remask(const Sample& s, const ModalityMask& mask) {
  Sample out;
  out.label = s.label;
  out.mask = mask;
  out.features.resize(s.features.size());
  for (size_t m = 0; m < s.features.size(); ++m) {
    if (mask.observed(static_cast<int>(m))) {
      if (s.features[m].empty()) {
        throw DataError("remask: modality " + std::to_string(m) +
                        " requested but absent in source sample");
      }
      out.features[m] = s.features[m];
    }
  }
  return out;
}

}  // namespace missfuse
