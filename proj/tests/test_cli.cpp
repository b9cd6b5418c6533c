#include <gtest/gtest.h>
#include <sys/wait.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "patchcert/io.hpp"
#include "patchcert/score_map.hpp"

namespace fs = std::filesystem;

namespace {

const std::string quick =
    " --set data.n_per_class=40 --set model.width=8 --set train.epochs=2 --set train.warmup=1"
    " --set train.batch=16";

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "patchcert_test_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(const std::string& args, const fs::path& dir) {
    const auto out = dir / "stdout.txt";
    const auto err = dir / "stderr.txt";
    const std::string cmd = std::string(PATCHCERT_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, patchcert::read_file(out), patchcert::read_file(err)};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(patchcert::read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

std::string drop_column(const fs::path& csv, std::size_t column) {
    std::string out;
    for (auto row : read_csv(csv)) {
        if (column < row.size()) row.erase(row.begin() + static_cast<long>(column));
        for (const auto& c : row) out += c + ",";
        out += "\n";
    }
    return out;
}

// Trains one quick model shared by the certify and attack tests.
const fs::path& trained_dir() {
    static const fs::path dir = [] {
        auto d = scratch("shared");
        const auto r = run("train --out " + d.string() + quick + " --set train.epochs=4", d);
        EXPECT_EQ(r.code, 0) << r.err;
        return d;
    }();
    return dir;
}

}  // namespace

TEST(CliTrain, QuickStartWritesCheckpointMetricsAndManifest) {
    const auto dir = scratch("train");
    const auto r = run("train --out " + dir.string() + quick, dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "checkpoint.pckp"));
    const auto rows = read_csv(dir / "metrics.csv");
    ASSERT_GE(rows.size(), 2u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "clean_acc", "cert32_acc", "cert33_acc", "loss", "lr", "seconds"}));
    const auto m = nlohmann::json::parse(patchcert::read_file(dir / "manifest.json"));
    EXPECT_EQ(m["subcommand"], "train");
    EXPECT_EQ(m["seed"], 0);
    EXPECT_TRUE(m.contains("version"));
    EXPECT_EQ(m["manifest_format_version"], 1);
    EXPECT_EQ(m["csv_schema_version"], 1);
    EXPECT_EQ(m["config"]["train"]["epochs"], "2");
    EXPECT_TRUE(fs::exists(dir / "resolved.ini"));
}

TEST(CliTrain, MissingDatasetPathExitsOne) {
    const auto dir = scratch("missing");
    const auto r = run("train --out " + dir.string() + " --set data.source=cifar10 --set data.path=/no/such/cifar", dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("/no/such/cifar"), std::string::npos) << r.err;
}

TEST(CliTrain, ConfigErrorsExitOne) {
    const auto dir = scratch("config_errors");
    EXPECT_EQ(run("train --out " + dir.string() + " --set no.such=1", dir).code, 1);
    EXPECT_EQ(run("train --out " + dir.string() + " --set train.margin=0", dir).code, 1);
    EXPECT_EQ(run("train --out " + dir.string() + " --set train.epochs=abc", dir).code, 1);
    EXPECT_EQ(run("train --out " + dir.string() + " --config " + (dir / "absent.ini").string(), dir).code, 1);
    EXPECT_EQ(run("frobnicate", dir).code, 1);
}

TEST(CliTrain, RerunFromResolvedConfigIsIdentical) {
    const auto a = scratch("rerun_a");
    const auto b = scratch("rerun_b");
    ASSERT_EQ(run("train --out " + a.string() + quick + " --seed 3", a).code, 0);
    ASSERT_EQ(run("train --out " + b.string() + " --config " + (a / "resolved.ini").string(), b).code, 0);
    // every column except wall-clock seconds
    EXPECT_EQ(drop_column(a / "metrics.csv", 6), drop_column(b / "metrics.csv", 6));
    EXPECT_EQ(patchcert::read_file(a / "checkpoint.pckp"), patchcert::read_file(b / "checkpoint.pckp"));
}

TEST(CliTrain, PrecedenceCliOverFileOverDefaults) {
    const auto dir = scratch("precedence");
    patchcert::write_file_atomic(dir / "cfg.ini", "[train]\nepochs = 3\nlr = 0.002\n[data]\nn_per_class = 20\n");
    const auto r = run("train --out " + dir.string() + " --config " + (dir / "cfg.ini").string() +
                           " --set train.epochs=2 --set train.warmup=1 --set model.width=4 --seed 7",
                       dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto m = nlohmann::json::parse(patchcert::read_file(dir / "manifest.json"));
    EXPECT_EQ(m["config"]["train"]["epochs"], "2");
    EXPECT_EQ(m["config"]["train"]["lr"], "0.002");
    EXPECT_EQ(m["config"]["train"]["batch"], "32");
    EXPECT_EQ(m["seed"], 7);
    EXPECT_EQ(read_csv(dir / "metrics.csv").size(), 3u);
}

TEST(CliCertify, SweepSchemaAndNesting) {
    const auto& model = trained_dir();
    const auto dir = scratch("certify");
    const auto r = run("certify --out " + dir.string() + quick + " --set certify.checkpoint=" +
                           (model / "checkpoint.pckp").string() + " --set certify.patches=1x1,2x2,3x3,4x1",
                       dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("nesting check passed"), std::string::npos);
    const auto rows = read_csv(dir / "certify_sweep.csv");
    ASSERT_EQ(rows.size(), 1u + 4 * 3);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"patch_h", "patch_w", "condition", "n", "n_certified", "cert_acc"}));
    for (std::size_t i = 1; i < rows.size(); i += 3) {
        EXPECT_EQ(rows[i][2], "1");
        EXPECT_EQ(rows[i + 1][2], "2");
        EXPECT_EQ(rows[i + 2][2], "3");
        EXPECT_GE(std::stoi(rows[i][4]), std::stoi(rows[i + 1][4]));
        EXPECT_GE(std::stoi(rows[i + 1][4]), std::stoi(rows[i + 2][4]));
    }
    const auto detail = read_csv(dir / "certify_detail.csv");
    EXPECT_EQ(detail[0].size(), 11u);
    EXPECT_EQ(detail.size(), 1u + 4 * std::stoul(rows[1][3]));
}

TEST(CliCertify, ZeroExampleSplitExitsOne) {
    const auto& model = trained_dir();
    const auto dir = scratch("certify_empty");
    const auto r = run("certify --out " + dir.string() + quick + " --set data.limit=0 --set certify.checkpoint=" +
                           (model / "checkpoint.pckp").string(),
                       dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(run("certify --out " + dir.string() + quick + " --set certify.checkpoint=" +
                      (dir / "none.pckp").string(),
                  dir)
                  .code,
              1);
}

TEST(CliAttack, OrderingAndDeterminism) {
    const auto& model = trained_dir();
    const auto a = scratch("attack_a");
    const auto b = scratch("attack_b");
    const std::string args = quick + " --set data.limit=6 --set attack.steps=10 --set attack.checkpoint=" +
                             (model / "checkpoint.pckp").string();
    const auto r = run("attack --out " + a.string() + args, a);
    ASSERT_EQ(r.code, 0) << r.err;
    ASSERT_EQ(run("attack --out " + b.string() + args, b).code, 0);
    EXPECT_EQ(patchcert::read_file(a / "attack.csv"), patchcert::read_file(b / "attack.csv"));
    const auto rows = read_csv(a / "attack.csv");
    ASSERT_EQ(rows.size(), 7u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"index", "true_label", "target", "l_top", "l_left", "success",
                                                  "clean_pred", "adv_pred", "steps_used"}));
    const auto m = nlohmann::json::parse(patchcert::read_file(a / "manifest.json"));
    const double clean = m["aggregate"]["clean_acc"];
    const double adv = m["aggregate"]["adversarial_acc"];
    const double cert = m["aggregate"]["certified_acc"];
    EXPECT_LE(cert, adv);
    EXPECT_LE(adv, clean);
    EXPECT_NE(r.out.find("adversarial_acc"), std::string::npos);
}

TEST(CliBench, RunsAndRejectsZeroReps) {
    const auto dir = scratch("bench");
    EXPECT_EQ(run("bench --out " + dir.string() + " --set bench.reps=0", dir).code, 1);
    const auto r = run("bench --out " + dir.string() + " --set bench.maps=200 --set bench.reps=1", dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_csv(dir / "bench.csv");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[1][0], "2");
    EXPECT_EQ(rows[1][2], "784");
    EXPECT_EQ(rows[2][0], "3");
    EXPECT_EQ(run("bench --out " + dir.string() + " --set bench.blob=" + (dir / "none.bin").string(), dir).code, 1);
}

TEST(CliBench, ReadsScoreMapBlob) {
    const auto dir = scratch("bench_blob");
    {
        std::ofstream out(dir / "maps.bin", std::ios::binary);
        for (int k = 0; k < 5; ++k) {
            patchcert::ScoreMap s(16, 16, 3);
            for (int i = 0; i < 16; ++i)
                for (int j = 0; j < 16; ++j) s.set(i, j, k % 3, 1);
            patchcert::write_score_map(out, s);
        }
    }
    const auto r = run("bench --out " + dir.string() + " --set bench.blob=" + (dir / "maps.bin").string() +
                           " --set bench.patch=2x2 --set bench.reps=1",
                       dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_csv(dir / "bench.csv");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[1][1], "5");
    EXPECT_EQ(rows[1][4], "5");
}
