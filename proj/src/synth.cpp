#include "qe/synth.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "qe/errors.hpp"
#include "qe/rng.hpp"

namespace qe {

namespace synth_detail {

namespace {

constexpr char kConsonants[] = {'b', 'd', 'f', 'g', 'k', 'l', 'm',
                                'n', 'p', 'r', 's', 't', 'v', 'z'};
constexpr std::size_t kNumConsonants = sizeof(kConsonants);
constexpr char kVowels[] = {'a', 'e', 'i', 'o', 'u'};
constexpr std::size_t kNumVowels = sizeof(kVowels);
constexpr std::size_t kSyllables = kNumConsonants * kNumVowels;  // 70

std::string syllable(std::size_t index) {
    return {kConsonants[index / kNumVowels], kVowels[index % kNumVowels]};
}

std::string two_syllable_word(std::size_t index) {
    return syllable(index % kSyllables) + syllable((index / kSyllables) % kSyllables);
}

}  // namespace

std::string source_word(std::size_t index) { return two_syllable_word(index); }

std::string target_word(const std::string& target_lang, std::size_t index) {
    return target_lang + "_" + two_syllable_word(index);
}

std::string noise_word(std::size_t index) {
    return "ug" + two_syllable_word(index);
}

}  // namespace synth_detail

namespace {

// Word classes over the source inventory: ids 0-2 determiners, 3 the
// conjunction, then 40% nouns, 30% verbs, rest adjectives.
struct WordClasses {
    std::size_t nouns_begin = 4, nouns_end = 0;
    std::size_t verbs_end = 0;
    std::size_t adjs_end = 0;

    explicit WordClasses(std::size_t vocab_size) {
        const std::size_t rest = vocab_size - 4;
        nouns_end = nouns_begin + (rest * 2 + 4) / 5;
        verbs_end = nouns_end + (rest * 3 + 9) / 10;
        adjs_end = vocab_size;
    }
};

std::size_t pick(Rng& rng, std::size_t begin, std::size_t end) {
    return begin + static_cast<std::size_t>(rng.below(end - begin));
}

void append_noun_phrase(Rng& rng, const WordClasses& classes,
                        std::vector<std::size_t>& out) {
    switch (rng.below(3)) {
        case 0:
            out.push_back(pick(rng, classes.nouns_begin, classes.nouns_end));
            break;
        case 1:
            out.push_back(pick(rng, 0, 3));
            out.push_back(pick(rng, classes.nouns_begin, classes.nouns_end));
            break;
        default:
            out.push_back(pick(rng, 0, 3));
            out.push_back(pick(rng, classes.verbs_end, classes.adjs_end));
            out.push_back(pick(rng, classes.nouns_begin, classes.nouns_end));
            break;
    }
}

void append_clause(Rng& rng, const WordClasses& classes,
                   std::vector<std::size_t>& out) {
    append_noun_phrase(rng, classes, out);
    out.push_back(pick(rng, classes.nouns_end, classes.verbs_end));
    if (rng.below(2) == 1) append_noun_phrase(rng, classes, out);
}

std::vector<std::size_t> sample_sentence(Rng& rng, const WordClasses& classes) {
    std::vector<std::size_t> ids;
    append_clause(rng, classes, ids);
    if (rng.next_unit() < 0.3) {
        ids.push_back(3);  // conjunction
        append_clause(rng, classes, ids);
    }
    return ids;
}

std::string join(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

}  // namespace

SynthSpec SynthSpec::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open synth spec " + path.string());
    SynthSpec spec;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError(path.string() + " line " + std::to_string(line_no) +
                            ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "vocab_size")
                spec.vocab_size = std::stoul(value);
            else if (key == "n_records")
                spec.n_records = std::stoul(value);
            else if (key == "noise_lo")
                spec.noise_lo = std::stod(value);
            else if (key == "noise_hi")
                spec.noise_hi = std::stod(value);
            else if (key == "seed")
                spec.seed = std::stoull(value);
            else if (key == "task")
                spec.task = value == "da" ? SynthTask::da : SynthTask::hter;
            else if (key == "zscore_da")
                spec.zscore_da = value == "1" || value == "true";
            else if (key == "noise_inventory")
                spec.noise_inventory = std::stoul(value);
            else
                throw DataError(path.string() + ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw DataError(path.string() + " line " + std::to_string(line_no) +
                            ": bad value '" + value + "'");
        }
    }
    return spec;
}

QEDataset generate_synthetic_corpus(const SynthSpec& spec,
                                    const std::string& lang_pair) {
    if (spec.vocab_size < 20 || spec.vocab_size > 4900)
        throw ContractError("synth: vocab_size must be in [20, 4900]");
    if (spec.n_records < 1)
        throw ContractError("synth: n_records must be >= 1");
    if (spec.noise_lo < 0.0 || spec.noise_hi < spec.noise_lo)
        throw ContractError("synth: noise range must satisfy 0 <= lo <= hi");
    if (spec.noise_inventory < 1 || spec.noise_inventory > 4900)
        throw ContractError("synth: noise_inventory must be in [1, 4900]");
    const LangPair pair = parse_lang_pair(lang_pair);

    // The source->target bijection is a fixed property of the language pair,
    // not of this corpus: train and test sets generated with different seeds
    // must describe the same task.
    std::vector<std::size_t> mapping(spec.vocab_size);
    std::iota(mapping.begin(), mapping.end(), 0);
    Rng mapping_rng(derive_seed(fnv1a(lang_pair), spec.vocab_size));
    mapping_rng.shuffle(mapping);

    const WordClasses classes(spec.vocab_size);
    Rng rng(derive_seed(spec.seed, fnv1a(lang_pair)));

    QEDataset dataset;
    dataset.label_kind =
        spec.task == SynthTask::hter ? LabelKind::hter : LabelKind::da_raw;
    dataset.provenance = "synth:" + lang_pair;
    dataset.records.reserve(spec.n_records);

    for (std::size_t r = 0; r < spec.n_records; ++r) {
        const std::vector<std::size_t> source_ids = sample_sentence(rng, classes);
        std::vector<std::string> source;
        std::vector<std::string> reference;
        source.reserve(source_ids.size());
        reference.reserve(source_ids.size());
        for (std::size_t id : source_ids) {
            source.push_back(synth_detail::source_word(id));
            reference.push_back(
                synth_detail::target_word(pair.target, mapping[id]));
        }

        const double noise_rate = rng.uniform(spec.noise_lo, spec.noise_hi);
        std::vector<std::string> target;
        target.reserve(reference.size() + 2);
        for (const auto& token : reference) {
            if (rng.next_unit() < noise_rate) {
                switch (rng.below(3)) {
                    case 0:  // substitute with a shared noise token
                        target.push_back(synth_detail::noise_word(
                            static_cast<std::size_t>(rng.below(spec.noise_inventory))));
                        break;
                    case 1:  // delete
                        break;
                    default:  // keep and insert a noise token after
                        target.push_back(token);
                        target.push_back(synth_detail::noise_word(
                            static_cast<std::size_t>(rng.below(spec.noise_inventory))));
                        break;
                }
            } else {
                target.push_back(token);
            }
        }

        SentencePairRecord record;
        record.source = join(source);
        record.target = join(target);
        record.lang_pair = lang_pair;
        record.label = spec.task == SynthTask::hter
                           ? ter(target, reference)
                           : 100.0 * (1.0 - noise_rate);
        dataset.records.push_back(std::move(record));
    }

    if (spec.task == SynthTask::da && spec.zscore_da) {
        const ZScoreResult z = zscore_standardize(dataset.labels());
        for (std::size_t i = 0; i < dataset.records.size(); ++i)
            dataset.records[i].label = z.z[i];
        dataset.label_kind = LabelKind::da_z;
    }
    return dataset;
}

}  // namespace qe
