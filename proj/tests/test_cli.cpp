#include "featdistill/augment.hpp"
#include "featdistill/cli.hpp"
#include "featdistill/embedstore.hpp"
#include "featdistill/fileio.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace featdistill;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        root = fs::temp_directory_path() / ("featdistill_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root);
        fs::create_directories(root);
    }
    void TearDown() override { fs::remove_all(root); }

    std::string p(const std::string& rel) const { return (root / rel).string(); }

    // Two correlated embedding CSVs keyed by the given ids.
    void write_pair_csv(const std::vector<std::string>& ids, const std::string& bag = "") {
        Rng rng(3);
        std::ofstream s(root / "student.csv"), t(root / "teacher.csv");
        s << "sample_id,bag_id,label,center_id,tissue_class,v0,v1,v2,v3\n";
        t << "sample_id,bag_id,label,center_id,tissue_class,v0,v1,v2\n";
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const int label = static_cast<int>(i % 2);
            double v[4];
            for (double& x : v) x = rng.uniform(-1, 1) + 3.0 * label;
            s << ids[i] << ',' << bag << ',' << label << ",c" << i % 3 << ',' << label;
            for (const double x : v) s << ',' << x;
            s << '\n';
            t << ids[i] << ',' << bag << ',' << label << ",c" << i % 3 << ',' << label << ',' << v[0] + v[1] << ','
              << v[2] - v[3] << ',' << 2 * v[0] << '\n';
        }
    }

    fs::path root;
};

json load(const fs::path& path) { return json::parse(read_file(path)); }

std::string checksum_of(const json& manifest, const char* list, const std::string& role) {
    for (const auto& a : manifest.at(list)) {
        if (a.at("role") == role) return a.at("checksum");
    }
    return {};
}

}  // namespace

TEST_F(CliTest, HelpListsSubcommands) {
    const Outcome r = run({"--help"});
    EXPECT_EQ(r.code, cli::kExitOk);
    for (const char* sub : {"ingest", "tile", "distill", "eval-knn", "cka", "robustness"}) {
        EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
    }
}

TEST_F(CliTest, UsageErrors) {
    const Outcome unknown = run({"frobnicate"});
    EXPECT_EQ(unknown.code, cli::kExitUsage);
    EXPECT_FALSE(unknown.err.empty());
    const Outcome flag = run({"cka", "--x", "a", "--y", "b", "--out", p("o"), "--bogus", "1"});
    EXPECT_EQ(flag.code, cli::kExitUsage);
    EXPECT_NE(flag.err.find("bogus"), std::string::npos) << flag.err;
    EXPECT_EQ(run({"eval-knn", "--out", p("o")}).code, cli::kExitUsage);  // --set missing
    EXPECT_EQ(run({}).code, cli::kExitUsage);
}

TEST_F(CliTest, MissingInputIsDataError) {
    const std::string missing = p("no_such_set");
    const Outcome r = run({"eval-knn", "--set", missing, "--out", p("o")});
    EXPECT_EQ(r.code, cli::kExitData);
    EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(root / "o" / "run.json"));
}

TEST_F(CliTest, InvalidConfigValueIsUsageError) {
    write_pair_csv({"a", "b", "c", "d"});
    ASSERT_EQ(run({"ingest", "--csv", p("student.csv"), "--out", p("S")}).code, 0);
    const Outcome r = run({"eval-knn", "--set", p("S"), "--out", p("E"), "--train-fraction", "1.5"});
    EXPECT_EQ(r.code, cli::kExitUsage);
}

TEST_F(CliTest, NumericalFailureExitCode) {
    std::vector<std::string> ids;
    for (int i = 0; i < 8; ++i) ids.push_back("s" + std::to_string(i));
    write_pair_csv(ids);
    ASSERT_EQ(run({"ingest", "--csv", p("student.csv"), "--out", p("S")}).code, 0);
    ASSERT_EQ(run({"ingest", "--csv", p("teacher.csv"), "--out", p("T")}).code, 0);
    const Outcome r = run({"distill", "--student", p("S"), "--teacher", p("T"), "--out", p("D"), "--alpha", "400",
                       "--lr-start", "1e10", "--lr-end", "1e10", "--total-steps", "50"});
    EXPECT_EQ(r.code, cli::kExitNumerical) << r.err;
}

TEST_F(CliTest, PipelineChainsChecksums) {
    // Raster with a saturated left part: two 32px tiles survive.
    RasterImage img(96, 32, 250);
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 64; ++x) {
            img.at(x, y, 1) = 40;
        }
    }
    write_image(img, root / "slide.png");
    ASSERT_EQ(run({"tile", "--input", p("slide.png"), "--out", p("tiles"), "--tile", "32", "--augment", "--crop", "24"}).code, 0);
    const json tiles = load(root / "tiles" / "tiles.json");
    ASSERT_EQ(tiles.at("tiles").size(), 2u);
    for (const auto& t : tiles.at("tiles")) EXPECT_TRUE(fs::exists(root / "tiles" / t.at("file").get<std::string>()));

    std::vector<std::string> ids;
    for (const auto& t : tiles.at("tiles")) ids.push_back(t.at("id"));
    // Pad with more ids so training has batches; extra rows are not tiles.
    write_pair_csv(ids);
    ASSERT_EQ(run({"ingest", "--csv", p("student.csv"), "--out", p("S"), "--tiles", p("tiles/tiles.json")}).code, 0);
    EXPECT_EQ(read_embedding_set(p("S")).meta[0].bag_id, "slide");
    ASSERT_EQ(run({"ingest", "--csv", p("teacher.csv"), "--out", p("T")}).code, 0);
    ASSERT_EQ(run({"distill", "--student", p("S"), "--teacher", p("T"), "--out", p("D"), "--batch-size", "2",
                   "--total-steps", "20"}).code, 0);
    ASSERT_EQ(run({"cka", "--x", p("D/projected"), "--y", p("T"), "--out", p("C"), "--n-subsamples", "2"}).code, 0);

    const json ingest_run = load(root / "S" / "run.json");
    const json distill_run = load(root / "D" / "run.json");
    const json cka_run = load(root / "C" / "run.json");
    EXPECT_EQ(checksum_of(ingest_run, "inputs", "tiles"), checksum_of(load(root / "tiles" / "run.json"), "outputs", "tiles"));
    EXPECT_EQ(checksum_of(ingest_run, "outputs", "embedding_set"), checksum_of(distill_run, "inputs", "student"));
    EXPECT_EQ(checksum_of(distill_run, "outputs", "projected"), checksum_of(cka_run, "inputs", "x"));
    EXPECT_EQ(distill_run.at("subcommand"), "distill");
    EXPECT_EQ(distill_run.at("config").at("batch-size"), "2");
    EXPECT_TRUE(distill_run.contains("duration_seconds"));
    EXPECT_EQ(distill_run.at("tool_version"), cli::kToolVersion);

    // The trace has one JSON object per step.
    std::istringstream trace(read_file(root / "D" / "trace.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(trace, line)) {
        const json j = json::parse(line);
        EXPECT_TRUE(j.contains("loss") && j.contains("lr") && j.contains("wd") && j.contains("violations"));
        ++lines;
    }
    EXPECT_EQ(lines, 20);
}

TEST_F(CliTest, IngestRejectsIdsMissingFromTiles) {
    write_file_atomic(root / "tiles.json", R"({"tiles": [{"id": "a", "source": "s"}]})");
    write_pair_csv({"a", "b"});
    EXPECT_EQ(run({"ingest", "--csv", p("student.csv"), "--out", p("S"), "--tiles", p("tiles.json")}).code, cli::kExitData);
}

TEST_F(CliTest, RerunsAreByteIdenticalAndManifestReplays) {
    std::vector<std::string> ids;
    for (int i = 0; i < 40; ++i) ids.push_back("s" + std::to_string(i));
    write_pair_csv(ids);
    ASSERT_EQ(run({"ingest", "--csv", p("student.csv"), "--out", p("S")}).code, 0);
    ASSERT_EQ(run({"ingest", "--csv", p("teacher.csv"), "--out", p("T")}).code, 0);
    const std::vector<std::string> distill{"distill", "--student", p("S"), "--teacher", p("T"), "--seed", "9",
                                           "--student-arch", "mlp:6", "--batch-size", "8"};
    auto with_out = [](std::vector<std::string> args, const std::string& out) {
        args.push_back("--out");
        args.push_back(out);
        return args;
    };
    ASSERT_EQ(run(with_out(distill, p("D1"))).code, 0);
    ASSERT_EQ(run(with_out(distill, p("D2"))).code, 0);
    for (const char* f : {"model.json", "trace.jsonl", "report.json", "projected/emb.bin", "projected/manifest.json"}) {
        EXPECT_EQ(read_file(root / "D1" / f), read_file(root / "D2" / f)) << f;
    }
    ASSERT_EQ(run({"distill", "--config", p("D1/run.json"), "--out", p("D3")}).code, 0);
    EXPECT_EQ(read_file(root / "D1" / "model.json"), read_file(root / "D3" / "model.json"));

    struct Case {
        std::vector<std::string> inputs;  // subcommand and input paths
        std::vector<std::string> params;
    };
    const std::vector<Case> cases{
        {{"eval-knn", "--set", p("S")}, {"--k", "3", "--n-components", "2"}},
        {{"cka", "--x", p("S"), "--y", p("T")}, {"--subsample-size", "10", "--seed", "4"}},
        {{"robustness", "--set", p("S")}, {"--per-class", "10", "--k-neighbors", "3"}}};
    for (const Case& c : cases) {
        std::vector<std::string> args = c.inputs;
        args.insert(args.end(), c.params.begin(), c.params.end());
        ASSERT_EQ(run(with_out(args, p("A"))).code, 0) << args[0];
        ASSERT_EQ(run(with_out(args, p("B"))).code, 0) << args[0];
        EXPECT_EQ(read_file(root / "A" / "report.json"), read_file(root / "B" / "report.json")) << args[0];
        // The report is accepted by the config loader and carries the parameters.
        std::vector<std::string> replay = c.inputs;
        replay.insert(replay.end(), {"--config", p("A/report.json"), "--out", p("R")});
        ASSERT_EQ(run(replay).code, 0) << args[0];
        EXPECT_EQ(read_file(root / "A" / "report.json"), read_file(root / "R" / "report.json")) << args[0];
    }
}

TEST_F(CliTest, ConfigPrecedence) {
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i) ids.push_back("s" + std::to_string(i));
    write_pair_csv(ids);
    ASSERT_EQ(run({"ingest", "--csv", p("student.csv"), "--out", p("S")}).code, 0);
    write_file_atomic(root / "cfg.json", R"({"k": 3, "n_repeats": 4, "eval-knn": {"train-fraction": 0.5}})");
    ASSERT_EQ(run({"eval-knn", "--config", p("cfg.json"), "--set", p("S"), "--out", p("E"), "--k", "5"}).code, 0);
    const json report = load(root / "E" / "report.json");
    EXPECT_EQ(report.at("k"), 5);            // flag beats file
    EXPECT_EQ(report.at("n_repeats"), 4);    // file beats default
    EXPECT_EQ(report.at("train_fraction"), 0.5);
    EXPECT_EQ(report.at("n_components"), 50);  // default
    write_file_atomic(root / "bad.json", "{not json");
    EXPECT_EQ(run({"eval-knn", "--config", p("bad.json"), "--set", p("S"), "--out", p("E")}).code, cli::kExitUsage);
}
