// Black-box tests for the qe command-line tool: exit codes, artifact
// determinism, file formats, cross-command consistency.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return QE_CLI_PATH; }

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

RunResult run(const fs::path& dir, const std::string& args) {
    const fs::path out_file = dir / "_stdout.txt";
    const fs::path err_file = dir / "_stderr.txt";
    const std::string command = std::string(cli_path()) + " " + args + " > " +
                                out_file.string() + " 2> " + err_file.string();
    const int status = std::system(command.c_str());
    RunResult result;
    result.exit_code = WEXITSTATUS(status);
    result.out = slurp(out_file);
    result.err = slurp(err_file);
    return result;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "qe_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::vector<std::string>> parse_tsv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, '\t')) fields.push_back(field);
        rows.push_back(fields);
    }
    return rows;
}

// Shared tiny-model flags: micro encoder, quick training.
const std::string kTinyModel =
    " --layers 2 --d-model 16 --heads 2 --d-ff 32 --max-seq-len 32";

}  // namespace

TEST_CASE("synth is deterministic and honors the noiseless contract") {
    const fs::path dir = fresh_dir("synth");
    const std::string synth_args = "--seed 5 --out-dir " + dir.string() +
                                   " synth --lang-pair en-de --n 50 --out " +
                                   (dir / "a.tsv").string();
    CHECK(run(dir, synth_args + " --noise-lo 0 --noise-hi 0").exit_code == 0);

    // all-zero HTER labels without noise
    const auto rows = parse_tsv(slurp(dir / "a.tsv"));
    REQUIRE(rows.size() == 51);
    CHECK(rows[0] == std::vector<std::string>{"src", "tgt", "score", "lang_pair"});
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i][2] == "0");
        CHECK(rows[i][3] == "en-de");
    }

    const std::string again = "--seed 5 --out-dir " + dir.string() +
                              " synth --lang-pair en-de --n 50 --out " +
                              (dir / "b.tsv").string() +
                              " --noise-lo 0 --noise-hi 0";
    CHECK(run(dir, again).exit_code == 0);
    CHECK(slurp(dir / "a.tsv") == slurp(dir / "b.tsv"));

    // da task with zscore
    const std::string da = "--seed 6 --out-dir " + dir.string() +
                           " synth --lang-pair en-de --n 80 --noise-lo 0 "
                           "--noise-hi 0.6 --task da --zscore --out " +
                           (dir / "da.tsv").string();
    CHECK(run(dir, da).exit_code == 0);
    const auto da_rows = parse_tsv(slurp(dir / "da.tsv"));
    double mean = 0.0;
    for (std::size_t i = 1; i < da_rows.size(); ++i)
        mean += std::stod(da_rows[i][2]);
    CHECK(std::abs(mean / 80.0) < 1e-9);
}

TEST_CASE("build-vocab determinism, unions and failure modes") {
    const fs::path dir = fresh_dir("vocab");
    run(dir, "--seed 1 --out-dir " + dir.string() +
                 " synth --lang-pair en-de --n 30 --noise-lo 0 --noise-hi 0.5 "
                 "--out " + (dir / "one.tsv").string());
    run(dir, "--seed 2 --out-dir " + dir.string() +
                 " synth --lang-pair en-zh --n 30 --noise-lo 0 --noise-hi 0.5 "
                 "--out " + (dir / "two.tsv").string());

    const std::string build1 = "--out-dir " + dir.string() +
                               " build-vocab --input " + (dir / "one.tsv").string() +
                               " --out " + (dir / "v1.json").string();
    CHECK(run(dir, build1).exit_code == 0);
    const std::string build_union =
        "--out-dir " + dir.string() + " build-vocab --input " +
        (dir / "one.tsv").string() + " --input " + (dir / "two.tsv").string() +
        " --out " + (dir / "vu.json").string();
    CHECK(run(dir, build_union).exit_code == 0);
    CHECK(fs::file_size(dir / "vu.json") > fs::file_size(dir / "v1.json"));

    // rebuild is byte-identical
    const std::string rebuild = "--out-dir " + dir.string() +
                                " build-vocab --input " +
                                (dir / "one.tsv").string() + " --out " +
                                (dir / "v1b.json").string();
    CHECK(run(dir, rebuild).exit_code == 0);
    CHECK(slurp(dir / "v1.json") == slurp(dir / "v1b.json"));

    // missing input: nonzero exit, message on stderr
    const RunResult missing =
        run(dir, "--out-dir " + dir.string() + " build-vocab --input " +
                     (dir / "absent.tsv").string() + " --out " +
                     (dir / "nope.json").string());
    CHECK(missing.exit_code == 2);
    CHECK(missing.err.find("absent.tsv") != std::string::npos);
}

TEST_CASE("exit codes follow the usage/data/numeric contract") {
    const fs::path dir = fresh_dir("exit_codes");
    CHECK(run(dir, "no-such-command").exit_code == 1);
    CHECK(run(dir, "synth --lang-pair en-de").exit_code == 1);  // missing --n
    CHECK(run(dir, "--out-dir " + dir.string() +
                       " evaluate --model nope.ckpt --test nope.tsv")
              .exit_code == 2);
}

TEST_CASE("train writes its artifacts and is byte-deterministic") {
    const fs::path dir = fresh_dir("train");
    run(dir, "--seed 11 --out-dir " + dir.string() +
                 " synth --lang-pair en-de --n 60 --noise-lo 0 --noise-hi 0.6 "
                 "--out " + (dir / "train.tsv").string());
    run(dir, "--out-dir " + dir.string() + " build-vocab --input " +
                 (dir / "train.tsv").string() + " --out " +
                 (dir / "vocab.json").string());

    const fs::path run_a = dir / "a";
    const fs::path run_b = dir / "b";
    const std::string train_args =
        " train --train " + (dir / "train.tsv").string() + " --vocab " +
        (dir / "vocab.json").string() + kTinyModel +
        " --epochs 2 --eval-every 3";
    const RunResult first =
        run(dir, "--seed 9 --out-dir " + run_a.string() + train_args);
    CHECK(first.exit_code == 0);
    CHECK(first.out.find("preset=desk") != std::string::npos);
    CHECK(fs::exists(run_a / "model.ckpt"));
    CHECK(fs::exists(run_a / "report.jsonl"));
    CHECK(fs::exists(run_a / "report.json"));
    CHECK(fs::exists(run_a / "run.json"));

    CHECK(run(dir, "--seed 9 --out-dir " + run_b.string() + train_args)
              .exit_code == 0);
    CHECK(slurp(run_a / "model.ckpt") == slurp(run_b / "model.ckpt"));
    CHECK(slurp(run_a / "report.jsonl") == slurp(run_b / "report.jsonl"));

    // identical flags including --out-dir: run.json is byte-stable too
    const std::string snapshot = slurp(run_a / "run.json");
    CHECK(run(dir, "--seed 9 --out-dir " + run_a.string() + train_args)
              .exit_code == 0);
    CHECK(slurp(run_a / "run.json") == snapshot);

    // all three pooling strategies train on both architectures
    for (const std::string arch : {"mono", "siamese"}) {
        for (const std::string pooling : {"cls", "mean", "max"}) {
            const fs::path pool_dir = dir / (arch + "_" + pooling);
            const RunResult result = run(
                dir, "--seed 3 --out-dir " + pool_dir.string() + " train --train " +
                         (dir / "train.tsv").string() + " --vocab " +
                         (dir / "vocab.json").string() + kTinyModel +
                         " --arch " + arch + " --pooling " + pooling +
                         " --epochs 1 --eval-every 5");
            CHECK_MESSAGE(result.exit_code == 0, arch << "/" << pooling << ": "
                                                      << result.err);
        }
    }
}

TEST_CASE("a failed run still leaves its resolved run.json") {
    const fs::path dir = fresh_dir("crashed");
    const RunResult result =
        run(dir, "--out-dir " + dir.string() + " train --train " +
                     (dir / "missing.tsv").string() + " --vocab " +
                     (dir / "missing.json").string());
    CHECK(result.exit_code == 2);
    CHECK(fs::exists(dir / "run.json"));
    CHECK(slurp(dir / "run.json").find("\"command\": \"train\"") !=
          std::string::npos);
}

TEST_CASE("predict preserves rows and is deterministic") {
    const fs::path dir = fresh_dir("predict");
    run(dir, "--seed 21 --out-dir " + dir.string() +
                 " synth --lang-pair en-de --n 40 --noise-lo 0 --noise-hi 0.6 "
                 "--out " + (dir / "data.tsv").string());
    run(dir, "--out-dir " + dir.string() + " build-vocab --input " +
                 (dir / "data.tsv").string() + " --out " +
                 (dir / "vocab.json").string());
    run(dir, "--seed 22 --out-dir " + dir.string() + " train --train " +
                 (dir / "data.tsv").string() + " --vocab " +
                 (dir / "vocab.json").string() + kTinyModel +
                 " --epochs 1 --eval-every 5");

    const std::string predict_args =
        "--out-dir " + dir.string() + " predict --model " +
        (dir / "model.ckpt").string() + " --input " + (dir / "data.tsv").string();
    CHECK(run(dir, predict_args + " --out " + (dir / "p1.tsv").string())
              .exit_code == 0);
    const auto input_rows = parse_tsv(slurp(dir / "data.tsv"));
    const auto output_rows = parse_tsv(slurp(dir / "p1.tsv"));
    REQUIRE(output_rows.size() == input_rows.size());
    CHECK(output_rows[0].back() == "prediction");
    for (std::size_t i = 1; i < output_rows.size(); ++i) {
        REQUIRE(output_rows[i].size() == input_rows[i].size() + 1);
        for (std::size_t c = 0; c < input_rows[i].size(); ++c)
            CHECK(output_rows[i][c] == input_rows[i][c]);
    }

    CHECK(run(dir, predict_args + " --out " + (dir / "p2.tsv").string())
              .exit_code == 0);
    CHECK(slurp(dir / "p1.tsv") == slurp(dir / "p2.tsv"));

    // header-only input -> header-only output
    std::ofstream(dir / "empty.tsv") << "src\ttgt\tscore\tlang_pair\n";
    CHECK(run(dir, "--out-dir " + dir.string() + " predict --model " +
                       (dir / "model.ckpt").string() + " --input " +
                       (dir / "empty.tsv").string() + " --out " +
                       (dir / "pe.tsv").string())
              .exit_code == 0);
    CHECK(slurp(dir / "pe.tsv") == "src\ttgt\tscore\tlang_pair\tprediction\n");
}

TEST_CASE("evaluate surfaces degenerate correlations and scores perfection") {
    const fs::path dir = fresh_dir("evaluate");
    run(dir, "--seed 31 --out-dir " + dir.string() +
                 " synth --lang-pair en-de --n 40 --noise-lo 0 --noise-hi 0.6 "
                 "--out " + (dir / "data.tsv").string());
    run(dir, "--out-dir " + dir.string() + " build-vocab --input " +
                 (dir / "data.tsv").string() + " --out " +
                 (dir / "vocab.json").string());
    run(dir, "--seed 32 --out-dir " + dir.string() + " train --train " +
                 (dir / "data.tsv").string() + " --vocab " +
                 (dir / "vocab.json").string() + kTinyModel +
                 " --epochs 1 --eval-every 5");

    // gold := model's own predictions -> r = 1
    run(dir, "--out-dir " + dir.string() + " predict --model " +
                 (dir / "model.ckpt").string() + " --input " +
                 (dir / "data.tsv").string() + " --out " +
                 (dir / "pred.tsv").string());
    const auto pred_rows = parse_tsv(slurp(dir / "pred.tsv"));
    std::ofstream gold(dir / "gold.tsv", std::ios::binary);
    gold << "src\ttgt\tscore\tlang_pair\n";
    for (std::size_t i = 1; i < pred_rows.size(); ++i)
        gold << pred_rows[i][0] << '\t' << pred_rows[i][1] << '\t'
             << pred_rows[i][4] << '\t' << pred_rows[i][3] << '\n';
    gold.close();
    const RunResult perfect =
        run(dir, "--out-dir " + dir.string() + " evaluate --model " +
                     (dir / "model.ckpt").string() + " --test " +
                     (dir / "gold.tsv").string() + " --out " +
                     (dir / "results.tsv").string());
    CHECK(perfect.exit_code == 0);
    const auto result_rows = parse_tsv(slurp(dir / "results.tsv"));
    REQUIRE(result_rows.size() >= 2);
    CHECK(std::stod(result_rows[1][2]) == doctest::Approx(1.0).epsilon(1e-4));

    // constant predictions (siamese on identical sides) -> clean degenerate
    // error
    run(dir, "--seed 33 --out-dir " + (dir / "siam").string() + " train --train " +
                 (dir / "data.tsv").string() + " --vocab " +
                 (dir / "vocab.json").string() + kTinyModel +
                 " --arch siamese --epochs 1 --eval-every 5");
    std::ofstream same(dir / "same.tsv", std::ios::binary);
    same << "src\ttgt\tscore\tlang_pair\n";
    const auto data_rows = parse_tsv(slurp(dir / "data.tsv"));
    for (std::size_t i = 1; i < data_rows.size(); ++i)
        same << data_rows[i][0] << '\t' << data_rows[i][0] << '\t'
             << data_rows[i][2] << "\ten-de\n";
    same.close();
    const RunResult degenerate =
        run(dir, "--out-dir " + dir.string() + " evaluate --model " +
                     (dir / "siam" / "model.ckpt").string() + " --test " +
                     (dir / "same.tsv").string());
    CHECK(degenerate.exit_code == 2);
    CHECK(degenerate.err.find("variance") != std::string::npos);
}

TEST_CASE("multipair grouping writes one checkpoint per group") {
    const fs::path dir = fresh_dir("multipair");
    for (const std::string pair : {"en-aa", "bb-en"}) {
        run(dir, "--seed 41 --out-dir " + dir.string() + " synth --lang-pair " +
                     pair + " --n 40 --noise-lo 0 --noise-hi 0.6 --out " +
                     (dir / (pair + ".tsv")).string());
        run(dir, "--seed 42 --out-dir " + dir.string() + " synth --lang-pair " +
                     pair + " --n 24 --noise-lo 0 --noise-hi 0.6 --out " +
                     (dir / (pair + "_test.tsv")).string());
    }
    run(dir, "--out-dir " + dir.string() + " build-vocab --input " +
                 (dir / "en-aa.tsv").string() + " --input " +
                 (dir / "bb-en.tsv").string() + " --out " +
                 (dir / "vocab.json").string());

    const std::string shared_args =
        std::string(" multipair --train en-aa=") + (dir / "en-aa.tsv").string() +
        " --train bb-en=" + (dir / "bb-en.tsv").string() +
        " --test en-aa=" + (dir / "en-aa_test.tsv").string() +
        " --test bb-en=" + (dir / "bb-en_test.tsv").string() + " --vocab " +
        (dir / "vocab.json").string() + kTinyModel + " --epochs 1 --eval-every 5";

    const fs::path all_dir = dir / "all";
    CHECK(run(dir, "--seed 43 --out-dir " + all_dir.string() + shared_args +
                       " --grouping all")
              .exit_code == 0);
    CHECK(fs::exists(all_dir / "model_all.ckpt"));
    CHECK(!fs::exists(all_dir / "model_en_source.ckpt"));

    const fs::path dir_dir = dir / "directional";
    CHECK(run(dir, "--seed 43 --out-dir " + dir_dir.string() + shared_args +
                       " --grouping directional")
              .exit_code == 0);
    CHECK(fs::exists(dir_dir / "model_en_source.ckpt"));
    CHECK(fs::exists(dir_dir / "model_en_target.ckpt"));

    // per-pair results agree with a separate evaluate invocation
    const auto table = parse_tsv(slurp(dir_dir / "results.tsv"));
    REQUIRE(table.size() == 3);  // header + 2 pairs
    fs::create_directories(dir / "sep");
    const RunResult separate =
        run(dir, "--out-dir " + (dir / "sep").string() + " evaluate --model " +
                     (dir_dir / "model_en_source.ckpt").string() + " --test " +
                     (dir / "en-aa_test.tsv").string() + " --out " +
                     (dir / "sep" / "results.tsv").string());
    CHECK(separate.exit_code == 0);
    const auto separate_rows = parse_tsv(slurp(dir / "sep" / "results.tsv"));
    bool found = false;
    for (std::size_t i = 1; i < table.size(); ++i)
        if (table[i][0] == "en-aa") {
            CHECK(table[i][2] == separate_rows[1][2]);
            found = true;
        }
    CHECK(found);
}

TEST_CASE("transfer zero-shot reuses the base checkpoint byte for byte") {
    const fs::path dir = fresh_dir("transfer");
    run(dir, "--seed 51 --out-dir " + dir.string() +
                 " synth --lang-pair en-de --n 40 --noise-lo 0 --noise-hi 0.6 "
                 "--out " + (dir / "base.tsv").string());
    run(dir, "--seed 52 --out-dir " + dir.string() +
                 " synth --lang-pair en-cc --n 30 --noise-lo 0 --noise-hi 0.6 "
                 "--out " + (dir / "low.tsv").string());
    run(dir, "--out-dir " + dir.string() + " build-vocab --input " +
                 (dir / "base.tsv").string() + " --input " +
                 (dir / "low.tsv").string() + " --out " +
                 (dir / "vocab.json").string());
    run(dir, "--seed 53 --out-dir " + dir.string() + " train --train " +
                 (dir / "base.tsv").string() + " --vocab " +
                 (dir / "vocab.json").string() + kTinyModel +
                 " --epochs 1 --eval-every 5");

    const fs::path zs_dir = dir / "zero_shot";
    const RunResult zero_shot =
        run(dir, "--out-dir " + zs_dir.string() + " transfer --base " +
                     (dir / "model.ckpt").string() + " --test " +
                     (dir / "low.tsv").string());
    CHECK(zero_shot.exit_code == 0);
    CHECK(zero_shot.out.find("zero-shot") != std::string::npos);
    CHECK(slurp(zs_dir / "model.ckpt") == slurp(dir / "model.ckpt"));
    CHECK(fs::exists(zs_dir / "results.tsv"));

    const fs::path ft_dir = dir / "fine_tuned";
    CHECK(run(dir, "--seed 54 --out-dir " + ft_dir.string() + " transfer --base " +
                       (dir / "model.ckpt").string() + " --train " +
                       (dir / "low.tsv").string() + " --epochs 1 --eval-every 4")
              .exit_code == 0);
    CHECK(slurp(ft_dir / "model.ckpt") != slurp(dir / "model.ckpt"));
}

TEST_CASE("learning-curve emits nested tl/scratch rows") {
    const fs::path dir = fresh_dir("curve");
    run(dir, "--seed 61 --out-dir " + dir.string() +
                 " synth --lang-pair en-de --n 60 --noise-lo 0 --noise-hi 0.6 "
                 "--out " + (dir / "train.tsv").string());
    run(dir, "--seed 62 --out-dir " + dir.string() +
                 " synth --lang-pair en-de --n 30 --noise-lo 0 --noise-hi 0.6 "
                 "--out " + (dir / "test.tsv").string());
    run(dir, "--out-dir " + dir.string() + " build-vocab --input " +
                 (dir / "train.tsv").string() + " --out " +
                 (dir / "vocab.json").string());
    run(dir, "--seed 63 --out-dir " + dir.string() + " train --train " +
                 (dir / "train.tsv").string() + " --vocab " +
                 (dir / "vocab.json").string() + kTinyModel +
                 " --epochs 1 --eval-every 5");

    const RunResult curve =
        run(dir, "--seed 64 --out-dir " + dir.string() + " learning-curve --base " +
                     (dir / "model.ckpt").string() + " --train " +
                     (dir / "train.tsv").string() + " --test " +
                     (dir / "test.tsv").string() +
                     " --sizes 0,16,32 --epochs 1 --eval-every 4");
    CHECK_MESSAGE(curve.exit_code == 0, curve.err);
    const auto rows = parse_tsv(slurp(dir / "curve.tsv"));
    REQUIRE(rows.size() == 6);  // header + (0 tl) + 2x(tl + scratch)
    CHECK(rows[0] == std::vector<std::string>{"size", "mode", "pearson"});
    CHECK(rows[1][0] == "0");
    CHECK(rows[1][1] == "tl");
    CHECK(rows[2][1] == "tl");
    CHECK(rows[3][1] == "scratch");

    // size exceeding the data is rejected
    const RunResult too_big =
        run(dir, "--out-dir " + dir.string() + " learning-curve --base " +
                     (dir / "model.ckpt").string() + " --train " +
                     (dir / "train.tsv").string() + " --test " +
                     (dir / "test.tsv").string() + " --sizes 10,99999");
    CHECK(too_big.exit_code == 1);
}
