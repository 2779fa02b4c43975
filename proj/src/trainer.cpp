#include "qe/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "qe/errors.hpp"
#include "qe/rng.hpp"

namespace qe {

namespace {

// Sub-stream tags for seed derivation.
constexpr std::uint64_t kSplitStream = 0x73706c6974;
constexpr std::uint64_t kEpochStreamBase = 0x65706f6368;

}  // namespace

void TrainingConfig::validate() const {
    if (batch_size == 0) throw ContractError("training: batch_size must be > 0");
    if (learning_rate < 0.0)
        throw ContractError("training: learning_rate must be >= 0");
    if (epochs == 0) throw ContractError("training: epochs must be > 0");
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
        throw ContractError("training: warmup_fraction must be in (0, 1)");
    if (eval_holdout_fraction <= 0.0 || eval_holdout_fraction >= 0.5)
        throw ContractError("training: eval_holdout_fraction must be in (0, 0.5)");
    if (early_stop_patience < 1)
        throw ContractError("training: early_stop_patience must be >= 1");
    if (eval_every_n_steps == 0)
        throw ContractError("training: eval_every_n_steps must be > 0");
}

TrainingConfig TrainingConfig::desk_preset() {
    TrainingConfig cfg;
    cfg.learning_rate = 5e-4;
    cfg.epochs = 6;
    cfg.preset_name = "desk";
    return cfg;
}

TrainingConfig TrainingConfig::paper_preset() {
    TrainingConfig cfg;
    cfg.learning_rate = 2e-5;
    cfg.epochs = 3;
    cfg.preset_name = "paper";
    return cfg;
}

void adam_step(AdamState& state, std::vector<Tensor>& params, double lr) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v[i].assign(params[i].numel(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw ContractError("adam: parameter count changed from " +
                            std::to_string(state.m.size()) + " to " +
                            std::to_string(params.size()));

    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& param = params[i];
        if (state.m[i].size() != param.numel())
            throw ContractError("adam: shape mismatch on parameter " +
                                std::to_string(i) + ": state has " +
                                std::to_string(state.m[i].size()) +
                                " entries, parameter has " +
                                std::to_string(param.numel()));
        auto& values = param.mutable_data();
        const bool has_grad = param.has_grad();
        const std::vector<float>* grad = has_grad ? &param.grad() : nullptr;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = has_grad ? static_cast<double>((*grad)[j]) : 0.0;
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            values[j] = static_cast<float>(
                static_cast<double>(values[j]) -
                lr * m_hat / (std::sqrt(v_hat) + state.eps));
        }
        param.zero_grad();
    }
}

double lr_at(std::size_t step, std::size_t total_steps,
             const TrainingConfig& cfg) {
    if (total_steps == 0) return cfg.learning_rate;
    const auto warmup_steps = static_cast<std::size_t>(std::ceil(
        cfg.warmup_fraction * static_cast<double>(total_steps)));
    if (warmup_steps == 0 || step >= warmup_steps) return cfg.learning_rate;
    return cfg.learning_rate * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
}

std::pair<QEDataset, QEDataset> split_train_eval(const QEDataset& data,
                                                 const TrainingConfig& cfg) {
    cfg.validate();
    if (data.records.size() < 5)
        throw ContractError("split: need at least 5 records, got " +
                            std::to_string(data.records.size()));
    std::vector<std::size_t> order(data.records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, kSplitStream));
    rng.shuffle(order);

    std::size_t eval_n = static_cast<std::size_t>(std::floor(
        cfg.eval_holdout_fraction * static_cast<double>(order.size())));
    eval_n = std::max<std::size_t>(eval_n, 1);

    QEDataset train_set, eval_set;
    train_set.label_kind = eval_set.label_kind = data.label_kind;
    train_set.provenance = data.provenance + ":train";
    eval_set.provenance = data.provenance + ":eval";
    const std::size_t train_n = order.size() - eval_n;
    for (std::size_t i = 0; i < train_n; ++i)
        train_set.records.push_back(data.records[order[i]]);
    for (std::size_t i = train_n; i < order.size(); ++i)
        eval_set.records.push_back(data.records[order[i]]);
    return {std::move(train_set), std::move(eval_set)};
}

namespace {

struct PreparedExample {
    const SentencePairRecord* record;
    double scaled_label;
};

double eval_mse(const QEModel& model, const std::vector<PreparedExample>& examples) {
    NoGradGuard no_grad;
    double acc = 0.0;
    for (const auto& ex : examples) {
        const double raw = static_cast<double>(
            model.forward_raw(ex.record->source, ex.record->target).item());
        const double d = raw - ex.scaled_label;
        acc += d * d;
    }
    return acc / static_cast<double>(examples.size());
}

std::vector<std::vector<float>> snapshot_weights(QEModel& model) {
    std::vector<std::vector<float>> snap;
    model.for_each_parameter([&](const std::string&, Tensor& t) {
        snap.push_back(t.data());
    });
    return snap;
}

void restore_weights(QEModel& model, const std::vector<std::vector<float>>& snap) {
    std::size_t i = 0;
    model.for_each_parameter([&](const std::string&, Tensor& t) {
        t.mutable_data() = snap[i++];
    });
}

std::vector<std::string> distinct_tags(const QEDataset& data) {
    std::vector<std::string> tags;
    for (const auto& r : data.records) tags.push_back(r.lang_pair);
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    return tags;
}

}  // namespace

TrainResult train(const QEModel& model, const QEDataset& data,
                  const TrainingConfig& cfg) {
    cfg.validate();
    if (data.records.empty()) throw ContractError("train: empty dataset");
    const auto started = std::chrono::steady_clock::now();

    auto [train_set, eval_set] = split_train_eval(data, cfg);

    TrainResult out{model.clone(), {}};
    QEModel& m = out.model;

    if (m.architecture() == Architecture::siamese && cfg.refit_label_scaler) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (const auto& r : train_set.records) {
            lo = std::min(lo, r.label);
            hi = std::max(hi, r.label);
        }
        m.label_scaler() = LabelScaler::fit_range(lo, hi);
    }

    auto prepare = [&](const QEDataset& set) {
        std::vector<PreparedExample> examples;
        examples.reserve(set.records.size());
        for (const auto& r : set.records)
            examples.push_back({&r, m.label_scaler().apply(r.label)});
        return examples;
    };
    const std::vector<PreparedExample> train_examples = prepare(train_set);
    const std::vector<PreparedExample> eval_examples = prepare(eval_set);

    std::vector<Tensor> params;
    m.for_each_parameter([&](const std::string&, Tensor& t) {
        t.set_requires_grad(true);
        t.zero_grad();
        params.push_back(t);
    });
    AdamState adam;

    const std::size_t steps_per_epoch =
        (train_examples.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * steps_per_epoch;

    TrainingReport& report = out.report;
    report.preset_note =
        "preset=" + cfg.preset_name + " lr=" + std::to_string(cfg.learning_rate) +
        " epochs=" + std::to_string(cfg.epochs) +
        (cfg.preset_name == "paper"
             ? ""
             : " (lr/epochs retuned for from-scratch training; the 'paper' "
               "preset keeps the reference values)");

    double best_eval = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_snapshot = snapshot_weights(m);
    std::size_t best_step = 0;
    std::size_t stale_evals = 0;
    std::size_t global_step = 0;
    double loss_since_eval = 0.0;
    std::size_t batches_since_eval = 0;
    bool stop = false;

    std::vector<std::size_t> order(train_examples.size());
    std::iota(order.begin(), order.end(), 0);

    auto run_eval = [&]() {
        const double eval_loss = eval_mse(m, eval_examples);
        EvalPoint point;
        point.step = global_step;
        point.train_loss =
            batches_since_eval ? loss_since_eval / static_cast<double>(batches_since_eval)
                               : 0.0;
        point.eval_loss = eval_loss;
        point.lr = lr_at(global_step, total_steps, cfg);
        report.history.push_back(point);
        loss_since_eval = 0.0;
        batches_since_eval = 0;
        if (eval_loss < best_eval) {
            best_eval = eval_loss;
            best_snapshot = snapshot_weights(m);
            best_step = global_step;
            stale_evals = 0;
        } else if (++stale_evals >= cfg.early_stop_patience) {
            report.stop_reason = StopReason::early_stopped;
            stop = true;
        }
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        Rng epoch_rng(derive_seed(cfg.seed, kEpochStreamBase + epoch));
        epoch_rng.shuffle(order);
        for (std::size_t batch_start = 0;
             batch_start < order.size() && !stop;
             batch_start += cfg.batch_size) {
            const std::size_t batch_end =
                std::min(batch_start + cfg.batch_size, order.size());

            std::vector<Tensor> raw_scores;
            std::vector<float> labels;
            raw_scores.reserve(batch_end - batch_start);
            labels.reserve(batch_end - batch_start);
            for (std::size_t i = batch_start; i < batch_end; ++i) {
                const PreparedExample& ex = train_examples[order[i]];
                raw_scores.push_back(m.forward_raw(ex.record->source,
                                                   ex.record->target));
                labels.push_back(static_cast<float>(ex.scaled_label));
            }
            const Shape label_shape = {labels.size()};
            const Tensor loss = mse_loss(
                stack_scalars(raw_scores),
                Tensor::from_data(label_shape, std::move(labels)));
            const double loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value))
                throw NumericError(
                    "non-finite loss at step " + std::to_string(global_step) +
                    " (lr=" + std::to_string(lr_at(global_step, total_steps, cfg)) +
                    ", batch index " + std::to_string(batch_start / cfg.batch_size) +
                    ")");
            loss.backward();
            adam_step(adam, params, lr_at(global_step, total_steps, cfg));
            ++global_step;
            loss_since_eval += loss_value;
            ++batches_since_eval;

            if (global_step % cfg.eval_every_n_steps == 0) run_eval();
        }
    }
    if (!stop && batches_since_eval > 0) run_eval();

    restore_weights(m, best_snapshot);
    report.best_step = best_step;
    report.best_eval_loss = best_eval;
    report.total_steps_run = global_step;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();

    m.meta().seed = cfg.seed;
    m.meta().steps_completed = global_step;
    m.meta().best_eval_loss = best_eval;
    m.meta().lang_pairs = distinct_tags(data);
    return out;
}

Grouping grouping_from_name(const std::string& name) {
    if (name == "directional") return Grouping::directional;
    if (name == "all") return Grouping::all;
    throw ContractError("unknown grouping '" + name + "'");
}

std::vector<GroupRun> train_multipair(
    const QEModel& prototype, const std::map<std::string, QEDataset>& datasets,
    Grouping grouping, const TrainingConfig& cfg) {
    if (datasets.empty()) throw ContractError("multipair: no datasets");

    std::vector<std::pair<std::string, std::vector<std::string>>> groups;
    if (grouping == Grouping::all) {
        std::vector<std::string> members;
        for (const auto& [tag, unused] : datasets) members.push_back(tag);
        groups.emplace_back("all", std::move(members));
    } else {
        std::vector<std::string> tags;
        for (const auto& [tag, unused] : datasets) tags.push_back(tag);
        const DirectionalGroups directional = group_directional(tags);
        if (!directional.en_source.empty())
            groups.emplace_back("en_source", directional.en_source);
        if (!directional.en_target.empty())
            groups.emplace_back("en_target", directional.en_target);
    }

    std::vector<GroupRun> runs;
    for (auto& [name, members] : groups) {
        QEDataset concatenated;
        concatenated.provenance = "multipair:" + name;
        concatenated.label_kind = datasets.begin()->second.label_kind;
        for (const auto& tag : members) {
            const QEDataset& part = datasets.at(tag);
            concatenated.records.insert(concatenated.records.end(),
                                        part.records.begin(), part.records.end());
        }
        GroupRun run;
        run.name = name;
        run.members = members;
        run.result = train(prototype, concatenated, cfg);
        runs.push_back(std::move(run));
    }
    return runs;
}

TrainResult train_transfer(const QEModel& base, const QEDataset& data,
                           TrainingConfig cfg) {
    if (data.records.empty()) {
        // Zero-shot: the base model evaluated as-is.
        TrainResult out{base.clone(), {}};
        out.report.preset_note = "zero-shot (no fine-tuning data)";
        out.report.stop_reason = StopReason::completed;
        return out;
    }
    cfg.refit_label_scaler = false;  // the base scaler travels with the weights
    return train(base, data, cfg);
}

void write_report_jsonl(const TrainingReport& report,
                        const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& point : report.history) {
        nlohmann::ordered_json line;
        line["step"] = point.step;
        line["train_loss"] = point.train_loss;
        line["eval_loss"] = point.eval_loss;
        line["lr"] = point.lr;
        out << line.dump() << '\n';
    }
}

void write_report_summary(const TrainingReport& report,
                          const std::filesystem::path& path) {
    nlohmann::ordered_json doc;
    doc["preset_note"] = report.preset_note;
    doc["stop_reason"] = report.stop_reason == StopReason::completed
                             ? "completed"
                             : "early_stopped";
    doc["best_step"] = report.best_step;
    doc["best_eval_loss"] = report.best_eval_loss;
    doc["evaluations"] = report.history.size();
    doc["total_steps_run"] = report.total_steps_run;
    doc["wall_seconds"] = report.wall_seconds;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

}  // namespace qe
