#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qe/data.hpp"

namespace qe {

enum class SynthTask { hter, da };

// Recipe for a synthetic QE corpus. Source sentences come from a toy grammar
// over a shared pseudo-word inventory; the reference translation applies a
// per-language-pair bijective word mapping; the emitted target corrupts the
// reference with substitutions, deletions and insertions at a per-record
// noise rate. HTER labels are the TER of the emitted target against the
// discarded reference; DA labels are 100*(1 - noise_rate), optionally
// z-scored.
struct SynthSpec {
    std::size_t vocab_size = 60;  // source inventory size, 20..4900
    std::size_t n_records = 0;
    double noise_lo = 0.0;
    double noise_hi = 0.0;
    std::uint64_t seed = 0;
    SynthTask task = SynthTask::hter;
    bool zscore_da = false;
    // Size of the shared corruption-token pool. Small pools make corruption
    // easy to spot from few examples; large pools make the task hard in the
    // low-resource regime.
    std::size_t noise_inventory = 24;

    // Flat key=value file: vocab_size, n_records, noise_lo, noise_hi, seed,
    // task (hter|da), zscore_da (0|1), noise_inventory.
    static SynthSpec from_file(const std::filesystem::path& path);
};

// Deterministic per (spec.seed, lang_pair). The word mapping and target
// inventory depend only on the tag and vocab_size, so corpora generated with
// different seeds for the same pair describe the same translation task.
QEDataset generate_synthetic_corpus(const SynthSpec& spec,
                                    const std::string& lang_pair);

namespace synth_detail {
// Exposed for tests: the inventories behind the generator.
std::string source_word(std::size_t index);
std::string target_word(const std::string& target_lang, std::size_t index);
std::string noise_word(std::size_t index);
}  // namespace synth_detail

}  // namespace qe
