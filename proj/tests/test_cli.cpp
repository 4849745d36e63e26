#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "stepfit/dataset.hpp"

using namespace stepfit;

namespace {

const std::string kCli = STEPFIT_CLI_PATH;
const std::string kTmp = STEPFIT_TEST_TMPDIR;

int run(const std::string& args) {
    const std::string command = kCli + " " + args + " >" + kTmp + "/cli_stdout.txt 2>" + kTmp +
                                "/cli_stderr.txt";
    const int status = std::system(command.c_str());
    return WEXITSTATUS(status);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string captured_stdout() { return read_file(kTmp + "/cli_stdout.txt"); }

void write_toy_csvs() {
    // Tiny two-class binary dataset with a gaussian outcome.
    std::ofstream mm(kTmp + "/toy_mm.csv");
    mm << "y1,y2,y3\n";
    std::ofstream sm(kTmp + "/toy_sm.csv");
    sm << "z\n";
    for (int i = 0; i < 40; ++i) {
        const bool first = i < 20;
        mm << (first ? "1,1,1\n" : "0,0,0\n");
        sm << (first ? "-1.0\n" : "1.5\n");
    }
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("--help exits zero and documents the subcommands") {
    CHECK(run("--help") == 0);
    const std::string text = captured_stdout();
    for (const char* name : {"fit", "predict", "score", "bootstrap", "sample", "simulate", "study"})
        CHECK(text.find(name) != std::string::npos);
    CHECK(run("fit --help") == 0);
    const std::string fit_text = captured_stdout();
    for (const char* flag : {"--data", "--n-components", "--n-steps", "--seed", "--abs-tol"})
        CHECK(fit_text.find(flag) != std::string::npos);
}

TEST_CASE("fit writes parseable model JSON and a report") {
    write_toy_csvs();
    const int code = run("fit --data " + kTmp + "/toy_mm.csv --structural " + kTmp +
                         "/toy_sm.csv --measurement binary --structural-model gaussian_unit "
                         "--n-components 2 --seed 3 --output " + kTmp + "/toy_model.json");
    CHECK(code == 0);
    const auto parsed = nlohmann::json::parse(read_file(kTmp + "/toy_model.json"));
    CHECK(parsed["schema_version"] == 1);
    CHECK(parsed["n_components"] == 2);
    CHECK(captured_stdout().find("average log-likelihood") != std::string::npos);
}

TEST_CASE("correction flags require three steps") {
    write_toy_csvs();
    const int code = run("fit --data " + kTmp + "/toy_mm.csv --structural " + kTmp +
                         "/toy_sm.csv --measurement binary --structural-model gaussian_unit "
                         "--n-components 2 --n-steps 2 --correction bch");
    CHECK(code == 1);
}

TEST_CASE("fitting an empty csv fails cleanly") {
    std::ofstream empty(kTmp + "/empty.csv");
    empty << "a\n";
    empty.close();
    const int code =
        run("fit --data " + kTmp + "/empty.csv --measurement binary --n-components 2");
    CHECK(code == 1);
}

TEST_CASE("predict writes one row per input unit") {
    write_toy_csvs();
    REQUIRE(run("fit --data " + kTmp + "/toy_mm.csv --structural " + kTmp +
                "/toy_sm.csv --measurement binary --structural-model gaussian_unit "
                "--n-components 2 --seed 3 --output " + kTmp + "/toy_model.json") == 0);
    CHECK(run("predict --model " + kTmp + "/toy_model.json --data " + kTmp +
              "/toy_mm.csv --structural " + kTmp + "/toy_sm.csv --output " + kTmp +
              "/pred.csv") == 0);
    std::ifstream pred(kTmp + "/pred.csv");
    std::string line;
    int rows = -1;  // header
    while (std::getline(pred, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 40);
}

TEST_CASE("score prints the average log-likelihood") {
    write_toy_csvs();
    REQUIRE(run("fit --data " + kTmp + "/toy_mm.csv --structural " + kTmp +
                "/toy_sm.csv --measurement binary --structural-model gaussian_unit "
                "--n-components 2 --seed 3 --output " + kTmp + "/toy_model.json") == 0);
    CHECK(run("score --model " + kTmp + "/toy_model.json --data " + kTmp +
              "/toy_mm.csv --structural " + kTmp + "/toy_sm.csv") == 0);
    const double value = std::stod(captured_stdout());
    CHECK(std::isfinite(value));
    CHECK(value < 0.0);
}

TEST_CASE("sampling a covariate model fails with an explanation") {
    const int sim = run("simulate bakk-covariate --n 120 --seed 9 --output-prefix " + kTmp + "/cov");
    REQUIRE(sim == 0);
    REQUIRE(run("fit --data " + kTmp + "/cov_mm.csv --structural " + kTmp +
                "/cov_sm.csv --measurement binary --structural-model covariate "
                "--n-components 3 --seed 4 --abs-tol 1e-6 --output " + kTmp +
                "/cov_model.json") == 0);
    const int code = run("sample --model " + kTmp + "/cov_model.json --n 10 --output " + kTmp +
                         "/cov_samples.csv");
    CHECK(code == 1);
    CHECK(read_file(kTmp + "/cli_stderr.txt").find("marginal") != std::string::npos);
}

TEST_CASE("sample draws from a generative model") {
    write_toy_csvs();
    REQUIRE(run("fit --data " + kTmp + "/toy_mm.csv --structural " + kTmp +
                "/toy_sm.csv --measurement binary --structural-model gaussian_unit "
                "--n-components 2 --seed 3 --output " + kTmp + "/toy_model.json") == 0);
    CHECK(run("sample --model " + kTmp + "/toy_model.json --n 25 --seed 11 --output " + kTmp +
              "/samples.csv") == 0);
    const Dataset samples = load_csv(kTmp + "/samples.csv");
    CHECK(samples.n_rows() == 25);
    CHECK(samples.n_cols() == 5);  // class, three indicators, outcome
}

TEST_CASE("simulate is deterministic in the seed and writes n rows") {
    const std::string args = "simulate bakk-response --n 500 --sep 0.8 --seed 1 --output-prefix ";
    REQUIRE(run(args + kTmp + "/rep_a") == 0);
    REQUIRE(run(args + kTmp + "/rep_b") == 0);
    CHECK(read_file(kTmp + "/rep_a_mm.csv") == read_file(kTmp + "/rep_b_mm.csv"));
    CHECK(read_file(kTmp + "/rep_a_sm.csv") == read_file(kTmp + "/rep_b_sm.csv"));
    CHECK(read_file(kTmp + "/rep_a_classes.csv") == read_file(kTmp + "/rep_b_classes.csv"));
    CHECK(load_csv(kTmp + "/rep_a_mm.csv").n_rows() == 500);
    CHECK(load_csv(kTmp + "/rep_a_sm.csv").n_rows() == 500);
}

TEST_CASE("study emits a table satisfying the RMSE inequality") {
    const int code = run("study response --n 200 --sep 0.9 --reps 5 --seed 12 --jobs 2 "
                         "--abs-tol 1e-7 --estimators 1-step,3-step-naive --output " +
                         kTmp + "/study.csv");
    REQUIRE(code == 0);
    std::ifstream table(kTmp + "/study.csv");
    std::string header, row;
    REQUIRE(std::getline(table, header));
    REQUIRE(std::getline(table, row));
    std::vector<std::string> head_cells, row_cells;
    std::stringstream hs(header), rs(row);
    std::string cell;
    while (std::getline(hs, cell, ',')) head_cells.push_back(cell);
    while (std::getline(rs, cell, ',')) row_cells.push_back(cell);
    REQUIRE(head_cells.size() == row_cells.size());
    double bias = 0.0, rmse = 0.0;
    for (std::size_t i = 0; i < head_cells.size(); ++i) {
        if (head_cells[i] == "bias_1-step") bias = std::stod(row_cells[i]);
        if (head_cells[i] == "rmse_1-step") rmse = std::stod(row_cells[i]);
    }
    CHECK(rmse >= std::abs(bias) - 1e-12);
}

TEST_CASE("bootstrap writes the long-form samples") {
    write_toy_csvs();
    const int code = run("bootstrap --data " + kTmp + "/toy_mm.csv --structural " + kTmp +
                         "/toy_sm.csv --measurement binary --structural-model gaussian_unit "
                         "--n-components 2 --seed 3 --n-repetitions 4 --jobs 2 "
                         "--output-samples " + kTmp + "/boot_samples.csv --output-summary " +
                         kTmp + "/boot_summary.csv");
    REQUIRE(code == 0);
    std::ifstream samples(kTmp + "/boot_samples.csv");
    std::string line;
    REQUIRE(std::getline(samples, line));
    CHECK(line == "rep,module,block,param,class,dim,value");
    int rows = 0;
    while (std::getline(samples, line))
        if (!line.empty()) ++rows;
    // parameters per repetition: 2 class weights + 6 binary + 2 means
    CHECK(rows == 4 * 10);
    CHECK(read_file(kTmp + "/boot_summary.csv").find("module,block,param") == 0);
}

}  // TEST_SUITE
