// qe: sentence-level machine translation quality estimation.
//
// Subcommands: build-vocab, synth, train, predict, evaluate, multipair,
// transfer, learning-curve. Every run writes a resolved run.json into the
// output directory before doing any work. Exit codes: 0 success, 1 usage
// error, 2 data error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qe/checkpoint.hpp"
#include "qe/data.hpp"
#include "qe/errors.hpp"
#include "qe/metrics.hpp"
#include "qe/model.hpp"
#include "qe/synth.hpp"
#include "qe/trainer.hpp"
#include "qe/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct GlobalOptions {
    std::uint64_t seed = 42;
    std::string preset = "desk";
    fs::path out_dir = ".";
};

struct EncoderFlags {
    std::size_t layers = 4;
    std::size_t d_model = 128;
    std::size_t heads = 4;
    std::size_t d_ff = 512;
    std::size_t max_seq_len = 128;

    qe::EncoderConfig config(std::size_t vocab_size) const {
        qe::EncoderConfig cfg;
        cfg.vocab_size = vocab_size;
        cfg.d_model = d_model;
        cfg.n_heads = heads;
        cfg.n_layers = layers;
        cfg.d_ff = d_ff;
        cfg.max_seq_len = max_seq_len;
        return cfg;
    }

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--layers", layers, "Encoder layers");
        cmd->add_option("--d-model", d_model, "Model width");
        cmd->add_option("--heads", heads, "Attention heads");
        cmd->add_option("--d-ff", d_ff, "Feed-forward width");
        cmd->add_option("--max-seq-len", max_seq_len, "Maximum sequence length");
    }

    ordered_json json() const {
        return {{"layers", layers},
                {"d_model", d_model},
                {"heads", heads},
                {"d_ff", d_ff},
                {"max_seq_len", max_seq_len}};
    }
};

struct TrainingFlags {
    CLI::App* cmd = nullptr;
    double lr = 0.0;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    double warmup = 0.0;
    std::size_t eval_every = 0;
    std::size_t patience = 0;
    double holdout = 0.0;

    void add_flags(CLI::App* command) {
        cmd = command;
        cmd->add_option("--lr", lr, "Learning rate (overrides preset)");
        cmd->add_option("--epochs", epochs, "Training epochs (overrides preset)");
        cmd->add_option("--batch-size", batch_size, "Batch size");
        cmd->add_option("--warmup", warmup, "Warmup fraction of total steps");
        cmd->add_option("--eval-every", eval_every, "Steps between evaluations");
        cmd->add_option("--patience", patience,
                        "Non-improving evaluations before early stop");
        cmd->add_option("--holdout", holdout, "Eval holdout fraction");
    }

    qe::TrainingConfig resolve(const GlobalOptions& global) const {
        qe::TrainingConfig cfg = global.preset == "paper"
                                     ? qe::TrainingConfig::paper_preset()
                                     : qe::TrainingConfig::desk_preset();
        cfg.seed = global.seed;
        if (cmd->count("--lr")) cfg.learning_rate = lr;
        if (cmd->count("--epochs")) cfg.epochs = epochs;
        if (cmd->count("--batch-size")) cfg.batch_size = batch_size;
        if (cmd->count("--warmup")) cfg.warmup_fraction = warmup;
        if (cmd->count("--eval-every")) cfg.eval_every_n_steps = eval_every;
        if (cmd->count("--patience")) cfg.early_stop_patience = patience;
        if (cmd->count("--holdout")) cfg.eval_holdout_fraction = holdout;
        cfg.validate();
        return cfg;
    }

    static ordered_json json(const qe::TrainingConfig& cfg) {
        return {{"preset", cfg.preset_name},
                {"learning_rate", cfg.learning_rate},
                {"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"warmup_fraction", cfg.warmup_fraction},
                {"eval_every_n_steps", cfg.eval_every_n_steps},
                {"early_stop_patience", cfg.early_stop_patience},
                {"eval_holdout_fraction", cfg.eval_holdout_fraction},
                {"refit_label_scaler", cfg.refit_label_scaler}};
    }
};

struct ColumnFlags {
    std::string src = "src";
    std::string tgt = "tgt";
    std::string label = "score";
    std::string lang_pair;
    std::string label_kind = "hter";
    bool lenient = false;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--src-col", src, "Source column name");
        cmd->add_option("--tgt-col", tgt, "Target column name");
        cmd->add_option("--label-col", label, "Label column name");
        cmd->add_option("--lang-pair", lang_pair,
                        "Language-pair tag (overrides any lang_pair column)");
        cmd->add_option("--label-kind", label_kind, "hter | da_raw | da_z");
        cmd->add_flag("--lenient", lenient,
                      "Skip rows with unparseable labels instead of failing");
    }

    qe::LoadOptions load_options() const {
        qe::LoadOptions options;
        options.columns.source = src;
        options.columns.target = tgt;
        options.columns.label = label;
        options.lang_pair = lang_pair;
        options.label_kind = qe::label_kind_from_name(label_kind);
        options.lenient = lenient;
        return options;
    }
};

void write_run_json(const GlobalOptions& global, const std::string& command,
                    ordered_json params) {
    fs::create_directories(global.out_dir);
    ordered_json doc;
    doc["tool"] = "qe";
    doc["version"] = kToolVersion;
    doc["command"] = command;
    doc["seed"] = global.seed;
    doc["preset"] = global.preset;
    doc["out_dir"] = global.out_dir.string();
    doc["formats"] = {{"checkpoint", 1}, {"vocabulary", 1}};
    doc["params"] = std::move(params);
    std::ofstream out(global.out_dir / "run.json", std::ios::binary);
    if (!out)
        throw qe::DataError("cannot write " + (global.out_dir / "run.json").string());
    out << doc.dump(2) << '\n';
}

std::string fixed6(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(6) << v;
    return out.str();
}

std::vector<qe::EvalResult> report_rows(const qe::EvalReport& report) {
    std::vector<qe::EvalResult> rows = report.per_pair;
    rows.push_back(report.overall);
    return rows;
}

void print_training_summary(const qe::TrainResult& result) {
    std::cout << "[train] " << result.report.preset_note << "\n";
    std::cout << "[train] steps=" << result.report.total_steps_run
              << " evaluations=" << result.report.history.size() << " stop="
              << (result.report.stop_reason == qe::StopReason::completed
                      ? "completed"
                      : "early_stopped")
              << " best_step=" << result.report.best_step
              << " best_eval_loss=" << result.report.best_eval_loss << "\n";
}

void write_reports(const qe::TrainingReport& report, const fs::path& out_dir,
                   const std::string& stem = "report") {
    qe::write_report_jsonl(report, out_dir / (stem + ".jsonl"));
    qe::write_report_summary(report, out_dir / (stem + ".json"));
}

// tag=path arguments for multipair datasets.
std::pair<std::string, fs::path> parse_tagged_path(const std::string& arg) {
    const std::size_t eq = arg.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= arg.size())
        throw CLI::ValidationError("expected tag=path, got '" + arg + "'");
    return {arg.substr(0, eq), fs::path(arg.substr(eq + 1))};
}

// ---------------------------------------------------------------------------
// Subcommand handlers
// ---------------------------------------------------------------------------

int cmd_build_vocab(const GlobalOptions& global,
                    const std::vector<fs::path>& inputs, std::size_t min_freq,
                    bool plain_text, fs::path out) {
    if (out.empty()) out = global.out_dir / "vocab.json";
    ordered_json params;
    params["inputs"] = ordered_json::array();
    for (const auto& p : inputs) params["inputs"].push_back(p.string());
    params["min_freq"] = min_freq;
    params["plain_text"] = plain_text;
    params["out"] = out.string();
    write_run_json(global, "build-vocab", std::move(params));

    std::vector<std::string> corpus;
    for (const auto& input : inputs) {
        if (plain_text) {
            std::ifstream in(input, std::ios::binary);
            if (!in) throw qe::DataError("cannot open " + input.string());
            std::string line;
            while (std::getline(in, line)) corpus.push_back(line);
        } else {
            qe::LoadOptions options;
            options.lang_pair = "xx-yy";  // tags are irrelevant here
            const qe::QEDataset data = qe::load_tsv(input, options);
            for (const auto& r : data.records) {
                corpus.push_back(r.source);
                corpus.push_back(r.target);
            }
        }
    }
    const qe::Vocabulary vocab = qe::Vocabulary::build(corpus, min_freq);
    vocab.save(out);
    std::cout << "[build-vocab] " << vocab.size() << " tokens -> " << out.string()
              << "\n";
    return 0;
}

int cmd_synth(const GlobalOptions& global, qe::SynthSpec spec,
              const std::string& lang_pair, fs::path out) {
    spec.seed = global.seed;
    if (out.empty())
        out = global.out_dir / ("synth_" + lang_pair + ".tsv");
    ordered_json params;
    params["lang_pair"] = lang_pair;
    params["vocab_size"] = spec.vocab_size;
    params["n_records"] = spec.n_records;
    params["noise_lo"] = spec.noise_lo;
    params["noise_hi"] = spec.noise_hi;
    params["noise_inventory"] = spec.noise_inventory;
    params["task"] = spec.task == qe::SynthTask::hter ? "hter" : "da";
    params["zscore_da"] = spec.zscore_da;
    params["out"] = out.string();
    write_run_json(global, "synth", std::move(params));

    const qe::QEDataset data = qe::generate_synthetic_corpus(spec, lang_pair);
    qe::export_tsv(data, out);
    std::cout << "[synth] " << data.size() << " records (" +
                     qe::label_kind_name(data.label_kind) + ") -> "
              << out.string() << "\n";
    return 0;
}

int cmd_train(const GlobalOptions& global, const fs::path& train_path,
              const fs::path& vocab_path, const std::string& arch_name,
              const std::string& pooling_name_opt, const EncoderFlags& encoder,
              const TrainingFlags& training, const ColumnFlags& columns) {
    const qe::TrainingConfig cfg = training.resolve(global);
    ordered_json params;
    params["train"] = train_path.string();
    params["vocab"] = vocab_path.string();
    params["arch"] = arch_name;
    params["pooling"] = pooling_name_opt.empty() ? "default" : pooling_name_opt;
    params["encoder"] = encoder.json();
    params["training"] = TrainingFlags::json(cfg);
    params["columns"] = {{"src", columns.src},
                         {"tgt", columns.tgt},
                         {"label", columns.label},
                         {"lang_pair", columns.lang_pair},
                         {"label_kind", columns.label_kind}};
    write_run_json(global, "train", std::move(params));

    const qe::Vocabulary vocab = qe::Vocabulary::load(vocab_path);
    qe::LoadStats stats;
    const qe::QEDataset data =
        qe::load_tsv(train_path, columns.load_options(), &stats);
    if (stats.skipped_rows)
        std::cout << "[train] skipped " << stats.skipped_rows
                  << " rows with bad labels\n";

    const qe::Architecture arch = qe::architecture_from_name(arch_name);
    std::optional<qe::Pooling> pooling;
    if (!pooling_name_opt.empty())
        pooling = qe::pooling_from_name(pooling_name_opt);
    qe::QEModel model = qe::QEModel::make(
        arch, encoder.config(vocab.size()), vocab, pooling, global.seed);

    const qe::TrainResult result = qe::train(model, data, cfg);
    print_training_summary(result);
    qe::save_checkpoint(result.model, global.out_dir / "model.ckpt");
    write_reports(result.report, global.out_dir);
    std::cout << "[train] checkpoint -> "
              << (global.out_dir / "model.ckpt").string() << "\n";
    return 0;
}

int cmd_predict(const GlobalOptions& global, const fs::path& model_path,
                const fs::path& input_path, fs::path out,
                const ColumnFlags& columns) {
    if (out.empty()) out = global.out_dir / "predictions.tsv";
    ordered_json params;
    params["model"] = model_path.string();
    params["input"] = input_path.string();
    params["out"] = out.string();
    write_run_json(global, "predict", std::move(params));

    const qe::QEModel model = qe::load_checkpoint(model_path);

    // Pass the input through untouched, appending one prediction column.
    std::ifstream in(input_path, std::ios::binary);
    if (!in) throw qe::DataError("cannot open " + input_path.string());
    std::string header;
    if (!std::getline(in, header))
        throw qe::DataError("empty file: " + input_path.string());
    if (!header.empty() && header.back() == '\r') header.pop_back();

    std::vector<std::string> names;
    {
        std::istringstream hs(header);
        std::string field;
        while (std::getline(hs, field, '\t')) names.push_back(field);
    }
    auto find_col = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw qe::DataError("missing column '" + name + "' in " +
                            input_path.string());
    };
    const std::size_t src_ix = find_col(columns.src);
    const std::size_t tgt_ix = find_col(columns.tgt);

    std::ofstream out_stream(out, std::ios::binary);
    if (!out_stream) throw qe::DataError("cannot write " + out.string());
    out_stream << header << "\tprediction\n";

    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, '\t')) fields.push_back(field);
        while (fields.size() < names.size()) fields.emplace_back();
        if (fields.size() != names.size())
            throw qe::DataError(input_path.string() + " row " +
                                std::to_string(row + 1) + ": field count " +
                                std::to_string(fields.size()) + " != header " +
                                std::to_string(names.size()));
        double prediction;
        try {
            prediction = model.predict(fields[src_ix], fields[tgt_ix]);
        } catch (const qe::Error& e) {
            throw qe::Error(e.category(), "prediction failed at row " +
                                              std::to_string(row + 1) + ": " +
                                              e.what());
        }
        out_stream << line << '\t' << fixed6(prediction) << '\n';
        ++row;
    }
    std::cout << "[predict] " << row << " rows -> " << out.string() << "\n";
    return 0;
}

int cmd_evaluate(const GlobalOptions& global, const fs::path& model_path,
                 const fs::path& test_path, fs::path out,
                 const ColumnFlags& columns) {
    if (out.empty()) out = global.out_dir / "results.tsv";
    ordered_json params;
    params["model"] = model_path.string();
    params["test"] = test_path.string();
    params["out"] = out.string();
    write_run_json(global, "evaluate", std::move(params));

    const qe::QEModel model = qe::load_checkpoint(model_path);
    const qe::QEDataset test =
        qe::load_tsv(test_path, columns.load_options());
    const qe::EvalReport report = qe::evaluate(model, test);
    const std::vector<qe::EvalResult> rows = report_rows(report);
    qe::write_results_tsv(rows, out);
    std::cout << qe::results_tsv(rows);
    return 0;
}

int cmd_multipair(const GlobalOptions& global,
                  const std::vector<std::string>& train_args,
                  const std::vector<std::string>& test_args,
                  const std::string& grouping_name, const fs::path& vocab_path,
                  const std::string& arch_name, const std::string& pooling_opt,
                  const EncoderFlags& encoder, const TrainingFlags& training,
                  const ColumnFlags& columns) {
    const qe::TrainingConfig cfg = training.resolve(global);
    ordered_json params;
    params["train"] = train_args;
    params["test"] = test_args;
    params["grouping"] = grouping_name;
    params["vocab"] = vocab_path.string();
    params["arch"] = arch_name;
    params["encoder"] = encoder.json();
    params["training"] = TrainingFlags::json(cfg);
    write_run_json(global, "multipair", std::move(params));

    const qe::Vocabulary vocab = qe::Vocabulary::load(vocab_path);
    std::map<std::string, qe::QEDataset> train_sets;
    for (const auto& arg : train_args) {
        auto [tag, path] = parse_tagged_path(arg);
        qe::LoadOptions options = columns.load_options();
        options.lang_pair = tag;
        train_sets[tag] = qe::load_tsv(path, options);
    }
    std::map<std::string, qe::QEDataset> test_sets;
    for (const auto& arg : test_args) {
        auto [tag, path] = parse_tagged_path(arg);
        qe::LoadOptions options = columns.load_options();
        options.lang_pair = tag;
        test_sets[tag] = qe::load_tsv(path, options);
    }

    const qe::Architecture arch = qe::architecture_from_name(arch_name);
    std::optional<qe::Pooling> pooling;
    if (!pooling_opt.empty()) pooling = qe::pooling_from_name(pooling_opt);
    const qe::QEModel prototype = qe::QEModel::make(
        arch, encoder.config(vocab.size()), vocab, pooling, global.seed);

    const auto runs = qe::train_multipair(
        prototype, train_sets, qe::grouping_from_name(grouping_name), cfg);

    std::vector<qe::EvalResult> rows;
    for (const auto& run : runs) {
        const fs::path ckpt = global.out_dir / ("model_" + run.name + ".ckpt");
        qe::save_checkpoint(run.result.model, ckpt);
        write_reports(run.result.report, global.out_dir, "report_" + run.name);
        std::cout << "[multipair] group " << run.name << " ("
                  << run.members.size() << " pairs) -> " << ckpt.string() << "\n";
        for (const auto& tag : run.members) {
            auto it = test_sets.find(tag);
            if (it == test_sets.end()) continue;
            const qe::EvalReport report = qe::evaluate(run.result.model, it->second);
            rows.push_back(report.overall);
        }
    }
    if (!rows.empty()) {
        qe::write_results_tsv(rows, global.out_dir / "results.tsv");
        const qe::ResultsTable table = qe::results_table(rows);
        std::cout << table.text;
    }
    return 0;
}

int cmd_transfer(const GlobalOptions& global, const fs::path& base_path,
                 const fs::path& train_path, const fs::path& test_path,
                 const TrainingFlags& training, const ColumnFlags& columns) {
    const qe::TrainingConfig cfg = training.resolve(global);
    ordered_json params;
    params["base"] = base_path.string();
    params["train"] = train_path.string();
    params["test"] = test_path.string();
    params["training"] = TrainingFlags::json(cfg);
    write_run_json(global, "transfer", std::move(params));

    const qe::QEModel base = qe::load_checkpoint(base_path);
    qe::QEDataset data;
    if (!train_path.empty())
        data = qe::load_tsv(train_path, columns.load_options());

    const qe::TrainResult result = qe::train_transfer(base, data, cfg);
    if (data.records.empty())
        std::cout << "[transfer] zero-shot: base model reused unchanged\n";
    else
        print_training_summary(result);
    qe::save_checkpoint(result.model, global.out_dir / "model.ckpt");
    write_reports(result.report, global.out_dir);

    if (!test_path.empty()) {
        const qe::QEDataset test = qe::load_tsv(test_path, columns.load_options());
        const qe::EvalReport report = qe::evaluate(result.model, test);
        const std::vector<qe::EvalResult> rows = report_rows(report);
        qe::write_results_tsv(rows, global.out_dir / "results.tsv");
        std::cout << qe::results_tsv(rows);
    }
    return 0;
}

int cmd_learning_curve(const GlobalOptions& global, const fs::path& base_path,
                       const fs::path& train_path, const fs::path& test_path,
                       const std::string& sizes_arg,
                       const TrainingFlags& training,
                       const ColumnFlags& columns) {
    const qe::TrainingConfig cfg = training.resolve(global);

    std::vector<std::size_t> sizes;
    {
        std::istringstream in(sizes_arg);
        std::string token;
        while (std::getline(in, token, ',')) {
            try {
                sizes.push_back(std::stoul(token));
            } catch (const std::exception&) {
                throw CLI::ValidationError("bad size '" + token + "'");
            }
        }
    }
    if (sizes.empty()) throw CLI::ValidationError("--sizes is empty");
    for (std::size_t i = 1; i < sizes.size(); ++i)
        if (sizes[i] <= sizes[i - 1])
            throw CLI::ValidationError("--sizes must be strictly ascending");

    ordered_json params;
    params["base"] = base_path.string();
    params["train"] = train_path.string();
    params["test"] = test_path.string();
    params["sizes"] = sizes;
    params["training"] = TrainingFlags::json(cfg);
    write_run_json(global, "learning-curve", std::move(params));

    const qe::QEModel base = qe::load_checkpoint(base_path);
    const qe::QEDataset train_data =
        qe::load_tsv(train_path, columns.load_options());
    const qe::QEDataset test_data =
        qe::load_tsv(test_path, columns.load_options());
    if (sizes.back() > train_data.size())
        throw qe::ContractError("size " + std::to_string(sizes.back()) +
                                " exceeds training data (" +
                                std::to_string(train_data.size()) + " rows)");

    // One seeded shuffle; size subsets are nested prefixes of it.
    std::vector<std::size_t> order(train_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    qe::Rng rng(qe::derive_seed(global.seed, qe::fnv1a("learning-curve")));
    rng.shuffle(order);

    std::ostringstream curve;
    curve << "size\tmode\tpearson\n";
    for (std::size_t size : sizes) {
        qe::QEDataset subset;
        subset.label_kind = train_data.label_kind;
        subset.provenance = train_data.provenance;
        for (std::size_t i = 0; i < size; ++i)
            subset.records.push_back(train_data.records[order[i]]);

        qe::TrainResult tl = qe::train_transfer(base, subset, cfg);
        const double r_tl = qe::evaluate(tl.model, test_data).overall.pearson_r;
        curve << size << "\ttl\t" << fixed6(r_tl) << "\n";
        std::cout << "[learning-curve] size " << size << " tl r=" << fixed6(r_tl)
                  << "\n";

        if (size == 0) continue;  // zero-shot has no scratch counterpart
        const qe::QEModel scratch_proto =
            qe::QEModel::make(base.architecture(), base.config(),
                              base.vocabulary(), base.pooling(), global.seed);
        const qe::TrainResult scratch = qe::train(scratch_proto, subset, cfg);
        const double r_scratch =
            qe::evaluate(scratch.model, test_data).overall.pearson_r;
        curve << size << "\tscratch\t" << fixed6(r_scratch) << "\n";
        std::cout << "[learning-curve] size " << size
                  << " scratch r=" << fixed6(r_scratch) << "\n";
    }
    const fs::path out = global.out_dir / "curve.tsv";
    std::ofstream out_stream(out, std::ios::binary);
    if (!out_stream) throw qe::DataError("cannot write " + out.string());
    out_stream << curve.str();
    std::cout << "[learning-curve] -> " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qe: sentence-level machine translation quality estimation"};
    app.require_subcommand(1);
    app.set_config("--config");

    GlobalOptions global;
    app.add_option("--seed", global.seed, "Global random seed")
        ->capture_default_str();
    app.add_option("--preset", global.preset, "Config preset: desk | paper")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->capture_default_str();
    app.add_option("--out-dir", global.out_dir, "Artifact output directory")
        ->capture_default_str();

    // build-vocab
    auto* build_vocab = app.add_subcommand(
        "build-vocab", "Build a shared vocabulary from data files");
    std::vector<fs::path> bv_inputs;
    std::size_t bv_min_freq = 1;
    bool bv_plain = false;
    fs::path bv_out;
    build_vocab->add_option("--input", bv_inputs, "Input files (repeatable)")
        ->required();
    build_vocab->add_option("--min-freq", bv_min_freq, "Minimum token count");
    build_vocab->add_flag("--plain", bv_plain,
                          "Inputs are plain text, one sentence per line");
    build_vocab->add_option("--out", bv_out, "Vocabulary output path");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic QE corpus");
    qe::SynthSpec synth_spec;
    std::string synth_pair;
    std::string synth_task = "hter";
    fs::path synth_out, synth_spec_file;
    synth->add_option("--lang-pair", synth_pair, "Language pair tag xx-yy")
        ->required();
    synth->add_option("--n", synth_spec.n_records, "Number of records")
        ->required();
    synth->add_option("--noise-lo", synth_spec.noise_lo, "Noise rate lower bound");
    synth->add_option("--noise-hi", synth_spec.noise_hi, "Noise rate upper bound");
    synth->add_option("--vocab-size", synth_spec.vocab_size,
                      "Source inventory size");
    synth->add_option("--noise-inventory", synth_spec.noise_inventory,
                      "Corruption token pool size");
    synth->add_option("--task", synth_task, "hter | da")
        ->check(CLI::IsMember({"hter", "da"}));
    synth->add_flag("--zscore", synth_spec.zscore_da,
                    "z-score DA labels across the corpus");
    synth->add_option("--spec", synth_spec_file,
                      "key=value spec file (flags override)");
    synth->add_option("--out", synth_out, "Output TSV path");

    // train
    auto* train = app.add_subcommand("train", "Train a QE model");
    fs::path train_train, train_vocab;
    std::string train_arch = "mono", train_pooling;
    EncoderFlags train_encoder;
    TrainingFlags train_training;
    ColumnFlags train_columns;
    train->add_option("--train", train_train, "Training TSV")->required();
    train->add_option("--vocab", train_vocab, "Vocabulary JSON")->required();
    train->add_option("--arch", train_arch, "mono | siamese")
        ->check(CLI::IsMember({"mono", "siamese"}));
    train->add_option("--pooling", train_pooling, "cls | mean | max")
        ->check(CLI::IsMember({"cls", "mean", "max"}));
    train_encoder.add_flags(train);
    train_training.add_flags(train);
    train_columns.add_flags(train);

    // predict
    auto* predict = app.add_subcommand("predict", "Score sentence pairs");
    fs::path predict_model, predict_input, predict_out;
    ColumnFlags predict_columns;
    predict->add_option("--model", predict_model, "Checkpoint")->required();
    predict->add_option("--input", predict_input, "Input TSV")->required();
    predict->add_option("--out", predict_out, "Output TSV");
    predict_columns.add_flags(predict);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate against gold labels");
    fs::path eval_model, eval_test, eval_out;
    ColumnFlags eval_columns;
    evaluate->add_option("--model", eval_model, "Checkpoint")->required();
    evaluate->add_option("--test", eval_test, "Test TSV with gold labels")
        ->required();
    evaluate->add_option("--out", eval_out, "Results TSV path");
    eval_columns.add_flags(evaluate);

    // multipair
    auto* multipair =
        app.add_subcommand("multipair", "Multi-language-pair training");
    std::vector<std::string> mp_train, mp_test;
    std::string mp_grouping = "all";
    fs::path mp_vocab;
    std::string mp_arch = "mono", mp_pooling;
    EncoderFlags mp_encoder;
    TrainingFlags mp_training;
    ColumnFlags mp_columns;
    multipair->add_option("--train", mp_train, "tag=path (repeatable)")
        ->required();
    multipair->add_option("--test", mp_test, "tag=path (repeatable)");
    multipair->add_option("--grouping", mp_grouping, "directional | all")
        ->check(CLI::IsMember({"directional", "all"}));
    multipair->add_option("--vocab", mp_vocab, "Shared vocabulary JSON")
        ->required();
    multipair->add_option("--arch", mp_arch, "mono | siamese")
        ->check(CLI::IsMember({"mono", "siamese"}));
    multipair->add_option("--pooling", mp_pooling, "cls | mean | max")
        ->check(CLI::IsMember({"cls", "mean", "max"}));
    mp_encoder.add_flags(multipair);
    mp_training.add_flags(multipair);
    mp_columns.add_flags(multipair);

    // transfer
    auto* transfer =
        app.add_subcommand("transfer", "Fine-tune from a base checkpoint");
    fs::path tr_base, tr_train, tr_test;
    TrainingFlags tr_training;
    ColumnFlags tr_columns;
    transfer->add_option("--base", tr_base, "Base checkpoint")->required();
    transfer->add_option("--train", tr_train,
                         "Fine-tuning TSV (omit for zero-shot)");
    transfer->add_option("--test", tr_test, "Optional test TSV to evaluate");
    tr_training.add_flags(transfer);
    tr_columns.add_flags(transfer);

    // learning-curve
    auto* curve = app.add_subcommand(
        "learning-curve", "Transfer vs scratch across training sizes");
    fs::path lc_base, lc_train, lc_test;
    std::string lc_sizes;
    TrainingFlags lc_training;
    ColumnFlags lc_columns;
    curve->add_option("--base", lc_base, "Base checkpoint")->required();
    curve->add_option("--train", lc_train, "Training TSV")->required();
    curve->add_option("--test", lc_test, "Test TSV")->required();
    curve->add_option("--sizes", lc_sizes, "Comma-separated ascending sizes")
        ->required();
    lc_training.add_flags(curve);
    lc_columns.add_flags(curve);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (build_vocab->parsed())
            return cmd_build_vocab(global, bv_inputs, bv_min_freq, bv_plain, bv_out);
        if (synth->parsed()) {
            qe::SynthSpec spec = synth_spec;
            if (!synth_spec_file.empty()) {
                spec = qe::SynthSpec::from_file(synth_spec_file);
                // explicit flags win over the spec file
                if (synth->count("--n")) spec.n_records = synth_spec.n_records;
                if (synth->count("--noise-lo")) spec.noise_lo = synth_spec.noise_lo;
                if (synth->count("--noise-hi")) spec.noise_hi = synth_spec.noise_hi;
                if (synth->count("--vocab-size"))
                    spec.vocab_size = synth_spec.vocab_size;
                if (synth->count("--noise-inventory"))
                    spec.noise_inventory = synth_spec.noise_inventory;
                if (synth->count("--task"))
                    spec.task = synth_task == "da" ? qe::SynthTask::da
                                                   : qe::SynthTask::hter;
                if (synth->count("--zscore")) spec.zscore_da = synth_spec.zscore_da;
            } else {
                spec.task = synth_task == "da" ? qe::SynthTask::da
                                               : qe::SynthTask::hter;
            }
            return cmd_synth(global, spec, synth_pair, synth_out);
        }
        if (train->parsed())
            return cmd_train(global, train_train, train_vocab, train_arch,
                             train_pooling, train_encoder, train_training,
                             train_columns);
        if (predict->parsed())
            return cmd_predict(global, predict_model, predict_input, predict_out,
                               predict_columns);
        if (evaluate->parsed())
            return cmd_evaluate(global, eval_model, eval_test, eval_out,
                                eval_columns);
        if (multipair->parsed())
            return cmd_multipair(global, mp_train, mp_test, mp_grouping, mp_vocab,
                                 mp_arch, mp_pooling, mp_encoder, mp_training,
                                 mp_columns);
        if (transfer->parsed())
            return cmd_transfer(global, tr_base, tr_train, tr_test, tr_training,
                                tr_columns);
        if (curve->parsed())
            return cmd_learning_curve(global, lc_base, lc_train, lc_test, lc_sizes,
                                      lc_training, lc_columns);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const qe::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
