#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qe {

struct SentencePairRecord {
    std::string source;
    std::string target;
    double label = 0.0;
    std::string lang_pair;  // "xx-yy"
};

enum class LabelKind { hter, da_raw, da_z };

std::string label_kind_name(LabelKind kind);
LabelKind label_kind_from_name(const std::string& name);

struct QEDataset {
    std::vector<SentencePairRecord> records;
    LabelKind label_kind = LabelKind::hter;
    std::string provenance;

    std::size_t size() const { return records.size(); }
    std::vector<double> labels() const;
};

struct ColumnMap {
    std::string source = "src";
    std::string target = "tgt";
    std::string label = "score";
};

struct LoadOptions {
    ColumnMap columns;
    // Overrides any lang_pair column in the file; required when the file has
    // none.
    std::string lang_pair;
    LabelKind label_kind = LabelKind::hter;
    // Lenient mode skips rows with unparseable labels instead of failing.
    bool lenient = false;
};

struct LoadStats {
    std::size_t skipped_rows = 0;
    std::size_t empty_sided_rows = 0;  // rows with an empty source or target
};

QEDataset load_tsv(const std::filesystem::path& path, const LoadOptions& options,
                   LoadStats* stats = nullptr);

// Native 3+1 column layout: src, tgt, score, lang_pair. Tabs and newlines in
// text fields are rejected.
void export_tsv(const QEDataset& dataset, const std::filesystem::path& path);

struct ZScoreResult {
    std::vector<double> z;
    double mean = 0.0;
    double stddev = 0.0;  // population
};

ZScoreResult zscore_standardize(std::span<const double> labels);

// Word-level edit distance (insert/delete/substitute, unit costs) divided by
// reference length. A shift-free TER surrogate; can exceed 1.
double ter(std::span<const std::string> hypothesis,
           std::span<const std::string> reference);

struct LangPair {
    std::string source;
    std::string target;
};

LangPair parse_lang_pair(const std::string& tag);

struct DirectionalGroups {
    std::vector<std::string> en_source;  // En-*
    std::vector<std::string> en_target;  // *-En
};

// Partition of pair tags by which side is English; any pair with English on
// neither side is rejected.
DirectionalGroups group_directional(const std::vector<std::string>& tags);

}  // namespace qe
