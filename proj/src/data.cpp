#include "qe/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "qe/errors.hpp"

namespace qe {

std::string label_kind_name(LabelKind kind) {
    switch (kind) {
        case LabelKind::hter: return "hter";
        case LabelKind::da_raw: return "da_raw";
        case LabelKind::da_z: return "da_z";
    }
    return "hter";
}

LabelKind label_kind_from_name(const std::string& name) {
    if (name == "hter") return LabelKind::hter;
    if (name == "da_raw") return LabelKind::da_raw;
    if (name == "da_z") return LabelKind::da_z;
    throw DataError("unknown label kind '" + name + "'");
}

std::vector<double> QEDataset::labels() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.label);
    return out;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

// Standard table-driven UTF-8 well-formedness scan.
bool valid_utf8(const std::string& text) {
    std::size_t i = 0;
    const auto* bytes = reinterpret_cast<const unsigned char*>(text.data());
    while (i < text.size()) {
        const unsigned char b = bytes[i];
        std::size_t len;
        unsigned long cp;
        if (b < 0x80) {
            ++i;
            continue;
        } else if ((b & 0xe0) == 0xc0) {
            len = 2;
            cp = b & 0x1f;
        } else if ((b & 0xf0) == 0xe0) {
            len = 3;
            cp = b & 0x0f;
        } else if ((b & 0xf8) == 0xf0) {
            len = 4;
            cp = b & 0x07;
        } else {
            return false;
        }
        if (i + len > text.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            if ((bytes[i + k] & 0xc0) != 0x80) return false;
            cp = (cp << 6) | (bytes[i + k] & 0x3f);
        }
        if (len == 2 && cp < 0x80) return false;
        if (len == 3 && cp < 0x800) return false;
        if (len == 4 && cp < 0x10000) return false;
        if (cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return false;
        i += len;
    }
    return true;
}

bool parse_double(const std::string& text, double& out) {
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace

QEDataset load_tsv(const std::filesystem::path& path, const LoadOptions& options,
                   LoadStats* stats) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());

    std::string header_line;
    if (!std::getline(in, header_line))
        throw DataError("empty file: " + path.string());
    if (!header_line.empty() && header_line.back() == '\r')
        header_line.pop_back();
    if (!valid_utf8(header_line))
        throw DataError("malformed UTF-8 in " + path.string() + " line 1");

    const std::vector<std::string> header = split_tabs(header_line);
    std::unordered_map<std::string, std::size_t> column_index;
    for (std::size_t i = 0; i < header.size(); ++i) column_index[header[i]] = i;

    auto require_column = [&](const std::string& name) {
        auto it = column_index.find(name);
        if (it == column_index.end())
            throw DataError("missing column '" + name + "' in " + path.string());
        return it->second;
    };
    const std::size_t src_ix = require_column(options.columns.source);
    const std::size_t tgt_ix = require_column(options.columns.target);
    const std::size_t label_ix = require_column(options.columns.label);
    std::optional<std::size_t> pair_ix;
    if (auto it = column_index.find("lang_pair"); it != column_index.end())
        pair_ix = it->second;
    if (options.lang_pair.empty() && !pair_ix)
        throw DataError("no lang_pair column in " + path.string() +
                        " and no tag supplied");

    QEDataset dataset;
    dataset.label_kind = options.label_kind;
    dataset.provenance = path.string();

    LoadStats local;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
        if (!valid_utf8(line))
            throw DataError("malformed UTF-8 in " + path.string() + " line " +
                            std::to_string(line_no));
        const std::vector<std::string> fields = split_tabs(line);
        if (fields.size() != header.size())
            throw DataError(path.string() + " line " + std::to_string(line_no) +
                            ": expected " + std::to_string(header.size()) +
                            " fields, got " + std::to_string(fields.size()));
        double label;
        if (!parse_double(fields[label_ix], label)) {
            if (options.lenient) {
                ++local.skipped_rows;
                continue;
            }
            throw DataError(path.string() + " line " + std::to_string(line_no) +
                            ": unparseable label '" + fields[label_ix] + "'");
        }
        SentencePairRecord record;
        record.source = fields[src_ix];
        record.target = fields[tgt_ix];
        record.label = label;
        record.lang_pair =
            !options.lang_pair.empty() ? options.lang_pair : fields[*pair_ix];
        if (record.source.empty() || record.target.empty())
            ++local.empty_sided_rows;
        dataset.records.push_back(std::move(record));
    }
    if (stats) *stats = local;
    return dataset;
}

void export_tsv(const QEDataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "src\ttgt\tscore\tlang_pair\n";
    std::ostringstream number;
    for (const auto& r : dataset.records) {
        if (r.source.find_first_of("\t\n") != std::string::npos ||
            r.target.find_first_of("\t\n") != std::string::npos ||
            r.lang_pair.find_first_of("\t\n") != std::string::npos)
            throw DataError("tab or newline in text field; cannot export TSV");
        number.str("");
        number.precision(17);
        number << r.label;
        out << r.source << '\t' << r.target << '\t' << number.str() << '\t'
            << r.lang_pair << '\n';
    }
}

ZScoreResult zscore_standardize(std::span<const double> labels) {
    if (labels.size() < 2)
        throw ContractError("zscore: need at least 2 labels, got " +
                            std::to_string(labels.size()));
    double mean = 0.0;
    for (double y : labels) mean += y;
    mean /= static_cast<double>(labels.size());
    double var = 0.0;
    for (double y : labels) var += (y - mean) * (y - mean);
    var /= static_cast<double>(labels.size());
    if (var == 0.0)
        throw DegenerateInputError("zscore: labels have zero variance");
    const double stddev = std::sqrt(var);

    ZScoreResult result;
    result.mean = mean;
    result.stddev = stddev;
    result.z.reserve(labels.size());
    for (double y : labels) result.z.push_back((y - mean) / stddev);
    return result;
}

double ter(std::span<const std::string> hypothesis,
           std::span<const std::string> reference) {
    if (reference.empty())
        throw ContractError("ter: reference must be nonempty");
    const std::size_t h = hypothesis.size(), r = reference.size();
    std::vector<std::size_t> prev(r + 1), curr(r + 1);
    for (std::size_t j = 0; j <= r; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= h; ++i) {
        curr[0] = i;
        for (std::size_t j = 1; j <= r; ++j) {
            const std::size_t sub_cost =
                hypothesis[i - 1] == reference[j - 1] ? 0 : 1;
            curr[j] = std::min({prev[j] + 1,             // delete from hyp
                                curr[j - 1] + 1,         // insert into hyp
                                prev[j - 1] + sub_cost});  // substitute/match
        }
        std::swap(prev, curr);
    }
    return static_cast<double>(prev[r]) / static_cast<double>(r);
}

LangPair parse_lang_pair(const std::string& tag) {
    const std::size_t dash = tag.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 >= tag.size())
        throw DataError("malformed language-pair tag '" + tag +
                        "', expected xx-yy");
    return {tag.substr(0, dash), tag.substr(dash + 1)};
}

DirectionalGroups group_directional(const std::vector<std::string>& tags) {
    DirectionalGroups groups;
    for (const auto& tag : tags) {
        const LangPair pair = parse_lang_pair(tag);
        if (pair.source == "en")
            groups.en_source.push_back(tag);
        else if (pair.target == "en")
            groups.en_target.push_back(tag);
        else
            throw ContractError("directional grouping is defined only for "
                                "English-involved pairs, got '" + tag + "'");
    }
    std::sort(groups.en_source.begin(), groups.en_source.end());
    std::sort(groups.en_target.begin(), groups.en_target.end());
    return groups;
}

}  // namespace qe
