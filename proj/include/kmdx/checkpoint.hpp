#pragma once

#include <string>

#include "kmdx/trainer.hpp"

namespace kmdx {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// Binary container: magic "KMDXCKPT", u32 format version, u64 JSON header
// length, the JSON header (configs, vocab, counters, record index), then
// the raw little-endian payloads in index order. Parameter records are
// float32 (parameters live on the float32 grid); optimizer moments, EMA
// shadows, queue rows, banks and prototypes are float64 state.
void save_checkpoint(const std::string& path, const Trainer& trainer);

// Rebuilds the model and full training state; training continues
// bit-identically given the same seed stream.
Trainer load_checkpoint(const std::string& path);

// Prototype tensors only (M_K / M_V per layer and head), same container
// format, for offline inspection.
void dump_prototypes(const std::string& path, const MemoryStack& memory);

}  // namespace kmdx
