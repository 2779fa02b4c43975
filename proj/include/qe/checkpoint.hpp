#pragma once

#include <filesystem>

#include "qe/model.hpp"

namespace qe {

// Single-file checkpoint, the transfer-learning currency.
//
// Byte layout:
//   bytes 0..3    magic "QEF1"
//   bytes 4..11   uint64 little-endian byte length J of the metadata block
//   bytes 12..    UTF-8 JSON metadata: format_version, architecture,
//                 encoder_config, pooling, label_scaler, embedded
//                 vocabulary, tensor manifest (name, shape, byte offset),
//                 training metadata
//   rest          weight blob: little-endian float32, flat row-major,
//                 tensors at their manifest offsets
//
// load(save(model)) reproduces bit-identical predictions.
void save_checkpoint(const QEModel& model, const std::filesystem::path& path);
QEModel load_checkpoint(const std::filesystem::path& path);

}  // namespace qe
