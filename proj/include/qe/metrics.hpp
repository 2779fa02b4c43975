#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qe/data.hpp"
#include "qe/model.hpp"

namespace qe {

// Two-pass Pearson correlation with double accumulation. Zero variance in
// either vector is an error, never a silent 0.
double pearson(std::span<const double> x, std::span<const double> y);

struct EvalResult {
    std::string lang_pair;
    std::size_t n = 0;
    double pearson_r = 0.0;
    double mse = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
};

struct EvalReport {
    EvalResult overall;                 // lang_pair "all"
    std::vector<EvalResult> per_pair;   // populated when tags differ, sorted
};

// Predicts every record and scores against the gold labels. Prediction
// failures carry the record index.
EvalReport evaluate(const QEModel& model, const QEDataset& test);

EvalResult score_predictions(const std::string& lang_pair,
                             std::span<const double> predictions,
                             std::span<const double> labels);

// "lang_pair \t n \t pearson \t mse \t mae \t rmse" rows, 6 decimals.
std::string results_tsv(const std::vector<EvalResult>& results);
void write_results_tsv(const std::vector<EvalResult>& results,
                       const std::filesystem::path& path);

struct ResultsTable {
    std::string text;  // aligned, best pearson per pair marked with '*'
    std::string tsv;
};

// Per-pair comparison of one method against an optional baseline, ordered
// by pair tag.
ResultsTable results_table(const std::vector<EvalResult>& results,
                           const std::vector<EvalResult>* baseline = nullptr,
                           const std::string& results_name = "model",
                           const std::string& baseline_name = "baseline");

}  // namespace qe
