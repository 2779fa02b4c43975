#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "qe/errors.hpp"
#include "qe/metrics.hpp"
#include "qe/model.hpp"
#include "qe/synth.hpp"
#include "qe/trainer.hpp"
#include "support/oracles.hpp"

using qe::Architecture;
using qe::EncoderConfig;
using qe::QEDataset;
using qe::QEModel;
using qe::Tensor;
using qe::TrainingConfig;
using qe::Vocabulary;

namespace {

EncoderConfig micro_config(std::size_t vocab_size) {
    EncoderConfig cfg;
    cfg.vocab_size = vocab_size;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.d_ff = 16;
    cfg.max_seq_len = 24;
    return cfg;
}

QEDataset synth_corpus(const std::string& pair, std::size_t n,
                       std::uint64_t seed, double noise_hi = 0.6) {
    qe::SynthSpec spec;
    spec.vocab_size = 40;
    spec.n_records = n;
    spec.noise_lo = 0.0;
    spec.noise_hi = noise_hi;
    spec.seed = seed;
    return qe::generate_synthetic_corpus(spec, pair);
}

Vocabulary vocab_of(std::initializer_list<const QEDataset*> sets) {
    std::vector<std::string> corpus;
    for (const QEDataset* set : sets)
        for (const auto& r : set->records) {
            corpus.push_back(r.source);
            corpus.push_back(r.target);
        }
    return Vocabulary::build(corpus, 1);
}

std::vector<std::vector<float>> all_weights(QEModel& model) {
    std::vector<std::vector<float>> out;
    model.for_each_parameter(
        [&](const std::string&, Tensor& t) { out.push_back(t.data()); });
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("adam leaves parameters untouched under zero gradients") {
    std::vector<Tensor> params = {
        Tensor::from_data({3}, {1.0f, -2.0f, 0.5f}, true)};
    const std::vector<float> before = params[0].data();
    qe::AdamState state;
    for (int i = 0; i < 10; ++i) qe::adam_step(state, params, 0.1);
    CHECK(params[0].data() == before);
}

TEST_CASE("adam first step is the bias-corrected unit update") {
    std::vector<Tensor> params = {Tensor::from_data({1}, {0.7f}, true)};
    qe::sum(params[0]).backward();  // gradient 1
    qe::AdamState state;
    qe::adam_step(state, params, 0.1);
    // theta - lr * 1 / (1 + eps), within float32 resolution
    CHECK(params[0].data()[0] ==
          doctest::Approx(0.7 - 0.1 / (1.0 + 1e-8)).epsilon(1e-6));
}

TEST_CASE("adam on a quadratic bowl tracks the scalar oracle") {
    std::vector<Tensor> params = {Tensor::from_data({1}, {1.0f}, true)};
    qe::AdamState state;
    oracles::ScalarAdam oracle;
    float theta_oracle = 1.0f;
    double previous_f = 1.0;
    for (int step = 0; step < 10; ++step) {
        const Tensor loss = qe::dot(params[0], params[0]);
        loss.backward();
        qe::adam_step(state, params, 0.1);
        theta_oracle = oracle.step(theta_oracle,
                                   2.0 * static_cast<double>(theta_oracle), 0.1);
        CHECK(std::abs(static_cast<double>(params[0].data()[0]) -
                       static_cast<double>(theta_oracle)) <= 1e-10);
        const double f = static_cast<double>(params[0].data()[0]) *
                         static_cast<double>(params[0].data()[0]);
        CHECK(f < previous_f);
        previous_f = f;
    }
}

TEST_CASE("adam two-parameter trajectory matches the oracle to 1e-10") {
    oracles::for_cases(200, 77, [](qe::Rng& rng, std::size_t) {
        const float t1 = static_cast<float>(rng.uniform(-1, 1));
        const float t2 = static_cast<float>(rng.uniform(-1, 1));
        std::vector<Tensor> params = {Tensor::from_data(
            {2}, {static_cast<float>(rng.uniform(-2, 2)),
                  static_cast<float>(rng.uniform(-2, 2))}, true)};
        const Tensor target = Tensor::from_data({2}, {t1, t2});
        qe::AdamState state;
        oracles::ScalarAdam oracle1, oracle2;
        float o1 = params[0].data()[0];
        float o2 = params[0].data()[1];
        const double lr = rng.uniform(0.01, 0.2);
        for (int step = 0; step < 6; ++step) {
            const Tensor d = qe::sub(params[0], target);
            qe::dot(d, d).backward();
            qe::adam_step(state, params, lr);
            // residuals are float quantities, as in the graph
            const float r1 = o1 - t1;
            const float r2 = o2 - t2;
            o1 = oracle1.step(o1, 2.0 * static_cast<double>(r1), lr);
            o2 = oracle2.step(o2, 2.0 * static_cast<double>(r2), lr);
            CHECK(std::abs(params[0].data()[0] - o1) <= 1e-10);
            CHECK(std::abs(params[0].data()[1] - o2) <= 1e-10);
        }
    });
}

TEST_CASE("adam rejects a changed parameter count") {
    std::vector<Tensor> params = {Tensor::from_data({2}, {1.0f, 2.0f}, true)};
    qe::AdamState state;
    qe::adam_step(state, params, 0.1);
    params.push_back(Tensor::from_data({1}, {3.0f}, true));
    CHECK_THROWS_AS(qe::adam_step(state, params, 0.1), qe::ContractError);
}

TEST_CASE("learning rate schedule: warmup then constant") {
    TrainingConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.warmup_fraction = 0.1;
    CHECK(qe::lr_at(0, 1000, cfg) == 0.0);
    CHECK(qe::lr_at(100, 1000, cfg) == cfg.learning_rate);  // warmup endpoint
    CHECK(qe::lr_at(50, 1000, cfg) ==
          doctest::Approx(0.5 * cfg.learning_rate).epsilon(1e-12));
    CHECK(qe::lr_at(999, 1000, cfg) == cfg.learning_rate);

    oracles::for_cases(200, 21, [](qe::Rng& rng, std::size_t) {
        TrainingConfig c;
        c.learning_rate = rng.uniform(1e-5, 1e-2);
        c.warmup_fraction = rng.uniform(0.01, 0.9);
        const std::size_t total = 2 + rng.below(5000);
        const auto warmup = static_cast<std::size_t>(
            std::ceil(c.warmup_fraction * static_cast<double>(total)));
        double max_seen = 0.0;
        for (std::size_t s = 0; s <= total; ++s) {
            const double lr = qe::lr_at(s, total, c);
            CHECK(lr >= 0.0);
            CHECK(lr <= c.learning_rate * (1 + 1e-12));
            max_seen = std::max(max_seen, lr);
            if (s > 0) {
                const double step_change =
                    std::abs(lr - qe::lr_at(s - 1, total, c));
                CHECK(step_change <=
                      c.learning_rate / static_cast<double>(warmup) + 1e-15);
            }
        }
        CHECK(max_seen == c.learning_rate);
    });
}

TEST_CASE("train/eval split sizes and partition property") {
    TrainingConfig cfg;
    QEDataset hundred = synth_corpus("en-de", 100, 1);
    auto [train100, eval100] = qe::split_train_eval(hundred, cfg);
    CHECK(train100.size() == 80);
    CHECK(eval100.size() == 20);

    QEDataset wmt = synth_corpus("en-de", 7000, 2);
    auto [train7k, eval7k] = qe::split_train_eval(wmt, cfg);
    CHECK(train7k.size() == 5600);
    CHECK(eval7k.size() == 1400);

    QEDataset tiny = synth_corpus("en-de", 4, 3);
    CHECK_THROWS_AS(qe::split_train_eval(tiny, cfg), qe::ContractError);

    oracles::for_cases(200, 23, [](qe::Rng& rng, std::size_t) {
        TrainingConfig c;
        c.seed = rng.next_u64();
        c.eval_holdout_fraction = rng.uniform(0.05, 0.45);
        QEDataset data = synth_corpus("en-de", 5 + rng.below(200), rng.next_u64());
        auto [train_set, eval_set] = qe::split_train_eval(data, c);
        CHECK(train_set.size() + eval_set.size() == data.size());
        CHECK(eval_set.size() >= 1);
        auto key = [](const qe::SentencePairRecord& r) {
            return r.source + "\t" + r.target + "\t" + std::to_string(r.label);
        };
        std::multiset<std::string> original, recombined;
        for (const auto& r : data.records) original.insert(key(r));
        for (const auto& r : train_set.records) recombined.insert(key(r));
        for (const auto& r : eval_set.records) recombined.insert(key(r));
        CHECK(original == recombined);

        auto [train_again, eval_again] = qe::split_train_eval(data, c);
        CHECK(train_again.size() == train_set.size());
        for (std::size_t i = 0; i < train_set.size(); ++i)
            CHECK(train_again.records[i].source == train_set.records[i].source);
    });
}

TEST_CASE("training fits constant labels") {
    QEDataset data = synth_corpus("en-de", 40, 4);
    for (auto& r : data.records) r.label = 0.5;
    Vocabulary vocab = vocab_of({&data});
    QEModel model = QEModel::make(Architecture::mono, micro_config(vocab.size()),
                                  vocab, std::nullopt, 9);
    TrainingConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 100;
    cfg.eval_every_n_steps = 10;
    cfg.early_stop_patience = 30;
    const qe::TrainResult result = qe::train(model, data, cfg);
    CHECK(result.report.best_eval_loss < 1e-3);
    for (int i = 0; i < 5; ++i) {
        const auto& r = data.records[static_cast<std::size_t>(i)];
        CHECK(std::abs(result.model.predict(r.source, r.target) - 0.5) < 0.05);
    }
}

TEST_CASE("pure-noise labels trigger early stopping in most seeds") {
    int early_stops = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        QEDataset data = synth_corpus("en-de", 80, 100 + seed);
        qe::Rng label_rng(seed);
        for (auto& r : data.records) r.label = label_rng.next_unit();
        Vocabulary vocab = vocab_of({&data});
        QEModel model = QEModel::make(
            Architecture::mono, micro_config(vocab.size()), vocab, std::nullopt,
            seed);
        TrainingConfig cfg;
        cfg.seed = seed;
        cfg.learning_rate = 5e-3;
        cfg.epochs = 60;
        cfg.eval_every_n_steps = 2;
        const qe::TrainResult result = qe::train(model, data, cfg);
        if (result.report.stop_reason == qe::StopReason::early_stopped)
            ++early_stops;
        // best snapshot is never worse than any recorded evaluation
        double min_eval = result.report.history.front().eval_loss;
        for (const auto& p : result.report.history)
            min_eval = std::min(min_eval, p.eval_loss);
        CHECK(result.report.best_eval_loss == min_eval);
    }
    CHECK(early_stops >= 8);
}

TEST_CASE("a learnable task improves eval loss at least tenfold") {
    QEDataset data = synth_corpus("en-de", 320, 5);
    Vocabulary vocab = vocab_of({&data});
    EncoderConfig cfg = micro_config(vocab.size());
    cfg.d_model = 32;
    cfg.n_heads = 2;
    cfg.d_ff = 128;
    QEModel model =
        QEModel::make(Architecture::mono, cfg, vocab, std::nullopt, 10);

    TrainingConfig tc;
    tc.learning_rate = 2e-3;
    tc.epochs = 12;
    tc.eval_every_n_steps = 20;

    // Evaluation loss of the untrained model on the internal holdout,
    // recomputed through the same deterministic split.
    auto [train_side, eval_side] = qe::split_train_eval(data, tc);
    double initial = 0.0;
    for (const auto& r : eval_side.records) {
        const double d = model.predict(r.source, r.target) - r.label;
        initial += d * d;
    }
    initial /= static_cast<double>(eval_side.size());

    const qe::TrainResult result = qe::train(model, data, tc);
    CHECK(result.report.best_eval_loss * 10.0 <= initial);
}

TEST_CASE("training is bitwise deterministic in seed, data and config") {
    QEDataset data = synth_corpus("en-de", 60, 6);
    Vocabulary vocab = vocab_of({&data});
    QEModel model = QEModel::make(Architecture::mono, micro_config(vocab.size()),
                                  vocab, std::nullopt, 11);
    TrainingConfig cfg;
    cfg.epochs = 3;
    cfg.eval_every_n_steps = 5;

    qe::TrainResult a = qe::train(model, data, cfg);
    qe::TrainResult b = qe::train(model, data, cfg);
    CHECK(all_weights(a.model) == all_weights(b.model));
    REQUIRE(a.report.history.size() == b.report.history.size());
    for (std::size_t i = 0; i < a.report.history.size(); ++i) {
        CHECK(a.report.history[i].step == b.report.history[i].step);
        CHECK(a.report.history[i].train_loss == b.report.history[i].train_loss);
        CHECK(a.report.history[i].eval_loss == b.report.history[i].eval_loss);
        CHECK(a.report.history[i].lr == b.report.history[i].lr);
    }

    TrainingConfig other = cfg;
    other.seed = cfg.seed + 1;
    qe::TrainResult c = qe::train(model, data, other);
    CHECK(all_weights(a.model) != all_weights(c.model));
}

TEST_CASE("non-finite loss aborts with step context") {
    QEDataset data = synth_corpus("en-de", 16, 7);
    for (auto& r : data.records) r.label = 1e38;
    Vocabulary vocab = vocab_of({&data});
    QEModel model = QEModel::make(Architecture::mono, micro_config(vocab.size()),
                                  vocab, std::nullopt, 12);
    TrainingConfig cfg;
    CHECK_THROWS_AS(qe::train(model, data, cfg), qe::NumericError);
}

TEST_CASE("multipair with one dataset equals plain training") {
    QEDataset data = synth_corpus("en-de", 60, 8);
    Vocabulary vocab = vocab_of({&data});
    QEModel proto = QEModel::make(Architecture::mono, micro_config(vocab.size()),
                                  vocab, std::nullopt, 14);
    TrainingConfig cfg;
    cfg.epochs = 2;
    cfg.eval_every_n_steps = 5;

    std::map<std::string, QEDataset> datasets;
    datasets["en-de"] = data;
    for (auto grouping : {qe::Grouping::all, qe::Grouping::directional}) {
        auto runs = qe::train_multipair(proto, datasets, grouping, cfg);
        REQUIRE(runs.size() == 1);
        qe::TrainResult plain = qe::train(proto, data, cfg);
        CHECK(all_weights(runs[0].result.model) == all_weights(plain.model));
    }
}

TEST_CASE("directional grouping trains one model per direction") {
    std::map<std::string, QEDataset> datasets;
    datasets["en-de"] = synth_corpus("en-de", 30, 9);
    datasets["en-zh"] = synth_corpus("en-zh", 30, 10);
    datasets["ro-en"] = synth_corpus("ro-en", 30, 11);
    Vocabulary vocab = vocab_of(
        {&datasets["en-de"], &datasets["en-zh"], &datasets["ro-en"]});
    QEModel proto = QEModel::make(Architecture::mono, micro_config(vocab.size()),
                                  vocab, std::nullopt, 15);
    TrainingConfig cfg;
    cfg.epochs = 1;
    cfg.eval_every_n_steps = 50;

    auto runs = qe::train_multipair(proto, datasets, qe::Grouping::directional, cfg);
    REQUIRE(runs.size() == 2);
    CHECK(runs[0].name == "en_source");
    CHECK(runs[0].members == std::vector<std::string>{"en-de", "en-zh"});
    CHECK(runs[1].name == "en_target");
    CHECK(runs[1].members == std::vector<std::string>{"ro-en"});

    auto all = qe::train_multipair(proto, datasets, qe::Grouping::all, cfg);
    REQUIRE(all.size() == 1);
    CHECK(all[0].members ==
          std::vector<std::string>{"en-de", "en-zh", "ro-en"});

    datasets["de-fr"] = synth_corpus("de-fr", 30, 12);
    CHECK_THROWS_AS(
        qe::train_multipair(proto, datasets, qe::Grouping::directional, cfg),
        qe::ContractError);
}

TEST_CASE("zero-shot transfer returns the base unchanged") {
    QEDataset base_data = synth_corpus("en-de", 60, 13);
    Vocabulary vocab = vocab_of({&base_data});
    QEModel proto = QEModel::make(Architecture::siamese,
                                  micro_config(vocab.size()), vocab,
                                  std::nullopt, 16);
    TrainingConfig cfg;
    cfg.epochs = 1;
    cfg.eval_every_n_steps = 4;
    qe::TrainResult base = qe::train(proto, base_data, cfg);

    QEDataset empty;
    qe::TrainResult zero = qe::train_transfer(base.model, empty, cfg);
    CHECK(zero.report.history.empty());
    CHECK(all_weights(zero.model) == all_weights(base.model));
    const auto& r = base_data.records[0];
    CHECK(zero.model.predict(r.source, r.target) ==
          base.model.predict(r.source, r.target));
}

TEST_CASE("transfer keeps the base label scaler") {
    QEDataset base_data = synth_corpus("en-de", 60, 17, 0.4);
    Vocabulary vocab = vocab_of({&base_data});
    QEModel proto = QEModel::make(Architecture::siamese,
                                  micro_config(vocab.size()), vocab,
                                  std::nullopt, 18);
    TrainingConfig cfg;
    cfg.epochs = 1;
    cfg.eval_every_n_steps = 4;
    qe::TrainResult base = qe::train(proto, base_data, cfg);
    const double base_a = base.model.label_scaler().a;
    const double base_b = base.model.label_scaler().b;
    CHECK(base.model.label_scaler().kind == qe::LabelScaler::Kind::affine);

    // Fine-tuning data with a very different label range.
    QEDataset finetune = synth_corpus("en-de", 40, 19, 0.9);
    qe::TrainResult transferred = qe::train_transfer(base.model, finetune, cfg);
    CHECK(transferred.model.label_scaler().a == base_a);
    CHECK(transferred.model.label_scaler().b == base_b);
    CHECK(all_weights(transferred.model) != all_weights(base.model));
}

TEST_CASE("scratch training on 100 hard-task instances stays near zero") {
    // Hard variant: wide corruption inventory, so 100 examples are not
    // enough to learn the noise tokens from scratch.
    qe::SynthSpec spec;
    spec.vocab_size = 120;
    spec.n_records = 100;
    spec.noise_lo = 0.0;
    spec.noise_hi = 0.6;
    spec.seed = 3;
    spec.noise_inventory = 160;
    const QEDataset subset = qe::generate_synthetic_corpus(spec, "en-cc");
    spec.n_records = 300;
    spec.seed = 4;
    const QEDataset test = qe::generate_synthetic_corpus(spec, "en-cc");
    // Shared vocabulary covering the whole task inventory, as a transfer
    // setting would have.
    spec.n_records = 800;
    spec.seed = 5;
    const QEDataset coverage = qe::generate_synthetic_corpus(spec, "en-cc");
    Vocabulary vocab = vocab_of({&coverage, &subset});

    TrainingConfig cell = qe::TrainingConfig::desk_preset();
    cell.epochs = 12;
    cell.eval_every_n_steps = 10;
    QEModel proto = QEModel::make(Architecture::mono,
                                  qe::desk_encoder_config(vocab.size()), vocab,
                                  std::nullopt, 7);
    const qe::TrainResult scratch = qe::train(proto, subset, cell);
    double r = 0.0;  // degenerate predictions count as no signal
    try {
        r = qe::evaluate(scratch.model, test).overall.pearson_r;
    } catch (const qe::DegenerateInputError&) {
    }
    CHECK(r < 0.3);
}

TEST_CASE("report bookkeeping matches the run") {
    QEDataset data = synth_corpus("en-de", 50, 20);
    Vocabulary vocab = vocab_of({&data});
    QEModel model = QEModel::make(Architecture::mono, micro_config(vocab.size()),
                                  vocab, std::nullopt, 21);
    TrainingConfig cfg;
    cfg.epochs = 2;
    cfg.eval_every_n_steps = 3;
    const qe::TrainResult result = qe::train(model, data, cfg);
    // 40 train records -> 5 steps per epoch, 10 total; evals at 3, 6, 9 and
    // the final partial segment.
    CHECK(result.report.total_steps_run == 10);
    CHECK(result.report.history.size() == 4);
    CHECK(result.report.history.back().step == 10);
    CHECK(result.report.stop_reason == qe::StopReason::completed);
    CHECK(result.model.meta().steps_completed == 10);
    CHECK(result.model.meta().lang_pairs == std::vector<std::string>{"en-de"});
}

TEST_SUITE_END();
