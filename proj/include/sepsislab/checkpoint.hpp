#pragma once

#include <filesystem>

#include "sepsislab/model.hpp"
#include "sepsislab/training.hpp"
#include "sepsislab/vocabulary.hpp"

namespace sepsislab {

// Layout: the 8-byte magic "SLCKPT1\n", a little-endian uint64 header length, a
// JSON header (shape, vocabulary hash, tensor table with names, shapes and
// offsets), then every tensor as raw little-endian float64 in column-major order.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);

// Throws ConfigError when the stored vocabulary hash differs from `vocab`.
ModelParams load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab);

// No vocabulary check.
ModelParams load_checkpoint_unchecked(const std::filesystem::path& path);

// Companion files written next to a checkpoint.
std::filesystem::path imputation_path_for(const std::filesystem::path& checkpoint);
std::filesystem::path logistic_path_for(const std::filesystem::path& checkpoint);
std::filesystem::path report_path_for(const std::filesystem::path& checkpoint);
std::filesystem::path vocabulary_path_for(const std::filesystem::path& checkpoint);

// Training report as JSON (epochs, best epoch, split ids).
void save_train_report(const TrainReport& report, const std::filesystem::path& path);
TrainReport load_train_report(const std::filesystem::path& path);

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);

}  // namespace sepsislab
