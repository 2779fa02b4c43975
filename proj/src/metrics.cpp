#include "qe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "qe/errors.hpp"

namespace qe {

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw ContractError("pearson: length mismatch " + std::to_string(x.size()) +
                            " vs " + std::to_string(y.size()));
    if (x.size() < 2)
        throw ContractError("pearson: need at least 2 points");
    const std::size_t n = x.size();
    // A constant vector has zero variance even when the rounded moment sums
    // would not be exactly zero.
    bool x_constant = true, y_constant = true;
    for (std::size_t i = 1; i < n; ++i) {
        if (x[i] != x[0]) x_constant = false;
        if (y[i] != y[0]) y_constant = false;
    }
    if (x_constant || y_constant)
        throw DegenerateInputError(
            "pearson: undefined correlation, zero variance in " +
            std::string(x_constant ? "x" : "y"));
    double mean_x = 0.0, mean_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_x += x[i];
        mean_y += y[i];
    }
    mean_x /= static_cast<double>(n);
    mean_y /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mean_x;
        const double dy = y[i] - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DegenerateInputError(
            "pearson: undefined correlation, zero variance in " +
            std::string(sxx == 0.0 ? "x" : "y"));
    return sxy / std::sqrt(sxx * syy);
}

EvalResult score_predictions(const std::string& lang_pair,
                             std::span<const double> predictions,
                             std::span<const double> labels) {
    if (predictions.size() != labels.size() || predictions.empty())
        throw ContractError("score_predictions: bad input sizes");
    EvalResult result;
    result.lang_pair = lang_pair;
    result.n = predictions.size();
    result.pearson_r = pearson(predictions, labels);
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = predictions[i] - labels[i];
        se += d * d;
        ae += std::abs(d);
    }
    result.mse = se / static_cast<double>(predictions.size());
    result.mae = ae / static_cast<double>(predictions.size());
    result.rmse = std::sqrt(result.mse);
    return result;
}

EvalReport evaluate(const QEModel& model, const QEDataset& test) {
    if (test.records.empty()) throw ContractError("evaluate: empty test set");

    std::vector<double> predictions;
    try {
        predictions = model.predict_batch(test);
    } catch (const Error&) {
        // Re-run record by record to name the failing index.
        for (std::size_t i = 0; i < test.records.size(); ++i) {
            try {
                model.predict(test.records[i].source, test.records[i].target);
            } catch (const Error& e) {
                throw Error(e.category(), "evaluate: record " + std::to_string(i) +
                                              ": " + e.what());
            }
        }
        throw;
    }
    const std::vector<double> labels = test.labels();

    EvalReport report;
    report.overall = score_predictions("all", predictions, labels);

    std::map<std::string, std::vector<std::size_t>> by_pair;
    for (std::size_t i = 0; i < test.records.size(); ++i)
        by_pair[test.records[i].lang_pair].push_back(i);
    if (by_pair.size() == 1) {
        report.overall.lang_pair = by_pair.begin()->first;
        return report;
    }
    for (const auto& [tag, indices] : by_pair) {
        std::vector<double> p, l;
        p.reserve(indices.size());
        l.reserve(indices.size());
        for (std::size_t ix : indices) {
            p.push_back(predictions[ix]);
            l.push_back(labels[ix]);
        }
        report.per_pair.push_back(score_predictions(tag, p, l));
    }
    return report;
}

namespace {

std::string fixed6(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(6) << v;
    return out.str();
}

}  // namespace

std::string results_tsv(const std::vector<EvalResult>& results) {
    std::ostringstream out;
    out << "lang_pair\tn\tpearson\tmse\tmae\trmse\n";
    for (const auto& r : results)
        out << r.lang_pair << '\t' << r.n << '\t' << fixed6(r.pearson_r) << '\t'
            << fixed6(r.mse) << '\t' << fixed6(r.mae) << '\t' << fixed6(r.rmse)
            << '\n';
    return out.str();
}

void write_results_tsv(const std::vector<EvalResult>& results,
                       const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << results_tsv(results);
}

ResultsTable results_table(const std::vector<EvalResult>& results,
                           const std::vector<EvalResult>* baseline,
                           const std::string& results_name,
                           const std::string& baseline_name) {
    std::map<std::string, std::pair<std::optional<double>, std::optional<double>>>
        rows;
    for (const auto& r : results) rows[r.lang_pair].first = r.pearson_r;
    if (baseline)
        for (const auto& r : *baseline) rows[r.lang_pair].second = r.pearson_r;

    const bool two_columns = baseline != nullptr;
    std::size_t tag_width = std::string("lang_pair").size();
    for (const auto& [tag, cells] : rows) tag_width = std::max(tag_width, tag.size());
    const std::size_t col_width =
        std::max({results_name.size(), baseline_name.size(),
                  std::string("-1.000000*").size()});

    auto cell = [&](const std::optional<double>& value, bool best) {
        if (!value) return std::string("-");
        return fixed6(*value) + (best ? "*" : "");
    };

    std::ostringstream text, tsv;
    text << std::left << std::setw(static_cast<int>(tag_width)) << "lang_pair"
         << "  " << std::setw(static_cast<int>(col_width)) << results_name;
    tsv << "lang_pair\t" << results_name;
    if (two_columns) {
        text << "  " << std::setw(static_cast<int>(col_width)) << baseline_name;
        tsv << '\t' << baseline_name;
    }
    text << '\n';
    tsv << '\n';

    for (const auto& [tag, cells] : rows) {
        bool first_best = false, second_best = false;
        if (two_columns && cells.first && cells.second) {
            first_best = *cells.first >= *cells.second;
            second_best = *cells.second >= *cells.first;
        }
        text << std::left << std::setw(static_cast<int>(tag_width)) << tag << "  "
             << std::setw(static_cast<int>(col_width))
             << cell(cells.first, first_best);
        tsv << tag << '\t' << cell(cells.first, first_best);
        if (two_columns) {
            text << "  " << std::setw(static_cast<int>(col_width))
                 << cell(cells.second, second_best);
            tsv << '\t' << cell(cells.second, second_best);
        }
        text << '\n';
        tsv << '\n';
    }
    return {text.str(), tsv.str()};
}

}  // namespace qe
