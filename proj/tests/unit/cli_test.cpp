#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "commands.hpp"
#include "loraseg/adapters.hpp"
#include "loraseg/checkpoint.hpp"
#include "loraseg/data.hpp"

namespace loraseg {
namespace {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("loraseg_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path &path() const { return path_; }
    std::string operator/(const std::string &s) const { return (path_ / s).string(); }

private:
    fs::path path_;
};

struct CliRun {
    int code = 0;
    std::string out, err;
};

CliRun run(std::vector<std::string> args) {
    args.insert(args.begin(), "loraseg");
    std::vector<const char *> argv;
    for (const auto &a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run_cli(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

double value_after(const std::string &text, const std::string &key) {
    const auto at = text.find(key + " ");
    if (at == std::string::npos) throw std::runtime_error("no '" + key + "' in output:\n" + text);
    return std::stod(text.substr(at + key.size() + 1));
}

int csv_rows(const fs::path &p) {
    std::ifstream in(p);
    std::string line;
    int n = -1;
    while (std::getline(in, line)) ++n;
    return n;
}

// Small synthetic runs on the default backbone.
const std::vector<std::string> kQuick{"--size", "64", "--n", "2", "--steps", "2", "--warmup", "1", "--batch", "2"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string> &b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

TEST(Cli, GenerateIsDeterministic) {
    TempDir d;
    const CliRun a = run({"generate", "--task", "disc", "--n", "3", "--size", "64", "--seed", "4", "--out", d / "a"});
    const CliRun b = run({"generate", "--task", "disc", "--n", "3", "--size", "64", "--seed", "4", "--out", d / "b"});
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(b.code, 0) << b.err;
    for (const char *sub : {"images/disc_0000.png", "masks/disc_0002.png"})
        EXPECT_EQ(slurp(d.path() / "a" / sub), slurp(d.path() / "b" / sub)) << sub;
    EXPECT_TRUE(fs::exists(d.path() / "a" / "config.json"));
    const auto loaded = load_dataset(d.path() / "a", Split::train, Task::disc);
    EXPECT_EQ(loaded.samples.size() + load_dataset(d.path() / "a", Split::test, Task::disc).samples.size(), 3u);
}

TEST(Cli, UsageErrorsExitNonZero) {
    TempDir d;
    EXPECT_NE(run({"generate", "--n", "2"}).code, 0);
    EXPECT_NE(run({"frobnicate"}).code, 0);
    EXPECT_NE(run({"eval"}).code, 0);
    EXPECT_NE(run({"train", "--rank", "0", "--out", d / "t"}).code, 0);
    EXPECT_NE(run({"train", "--ablation", "abl-9", "--out", d / "t2"}).code, 0);

    ASSERT_EQ(run({"generate", "--task", "vessel", "--n", "1", "--size", "64", "--out", d / "g"}).code, 0);
    const CliRun again = run({"generate", "--task", "vessel", "--n", "1", "--size", "64", "--out", d / "g"});
    EXPECT_EQ(again.code, 2);
    EXPECT_NE(again.err.find("--force"), std::string::npos) << again.err;
    EXPECT_EQ(run({"generate", "--task", "vessel", "--n", "1", "--size", "64", "--out", d / "g", "--force"}).code, 0);
}

TEST(Cli, UnknownConfigKeyIsRejectedByName) {
    TempDir d;
    std::ofstream(d.path() / "c.json") << R"({"train": {"lr": 0.001, "learning_rate": 1}})";
    const CliRun r = run({"--config", d / "c.json", "train", "--out", d / "t"});
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
}

TEST(Cli, FlagsOverrideConfigFile) {
    TempDir d;
    std::ofstream(d.path() / "c.json") << R"({"lora": {"rank": 4}, "train": {"lr": 0.5}, "n_samples": 7})";
    const CliRun r = run(with({"--config", d / "c.json", "train", "--rank", "8", "--out", d / "t"}, kQuick));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto cfg = nlohmann::json::parse(slurp(d.path() / "t" / "config.json"));
    EXPECT_EQ(cfg["lora"]["rank"], 8);
    EXPECT_EQ(cfg["n_samples"], 2);
    EXPECT_EQ(cfg["train"]["total_steps"], 2);
    // Not given on the command line, so the file wins over the default.
    EXPECT_EQ(cfg["train"]["lr"], 0.5);
}

TEST(Cli, TrainEvalMergeRoundTrip) {
    TempDir d;
    const CliRun t = run(with({"train", "--rank", "8", "--out", d / "t"}, kQuick));
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_LT(value_after(t.out, "trainable_fraction"), 0.05);
    EXPECT_EQ(csv_rows(d.path() / "t" / "steps.csv"), 2);

    const CliRun e = run({"eval", "--checkpoint", d / "t/adapters.sl2l", "--size", "64", "--n", "2", "--out",
                       d / "e/report.csv", "--dump-overlays"});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_EQ(csv_rows(d.path() / "e" / "report.csv"), 7);
    std::size_t pngs = 0;
    for (const auto &f : fs::recursive_directory_iterator(d.path() / "e" / "overlays"))
        pngs += f.path().extension() == ".png";
    EXPECT_EQ(pngs, 14u);

    const CliRun m = run({"merge", "--checkpoint", d / "t/adapters.sl2l", "--out", d / "merged.sl2l"});
    ASSERT_EQ(m.code, 0) << m.err;
    EXPECT_LT(value_after(m.out, "max_abs_output_diff"), 1e-4);
    EXPECT_TRUE(fs::exists(d.path() / "merged.sl2l"));
}

TEST(Cli, DecoderOnlyCheckpointHoldsOnlyDecoderAdapters) {
    TempDir d;
    const CliRun t = run(with({"train", "--ablation", "abl-5", "--rank", "4", "--out", d / "t"}, kQuick));
    ASSERT_EQ(t.code, 0) << t.err;
    std::size_t tensors = 0;
    for (const auto &e : read_checkpoint(d.path() / "t" / "adapters.sl2l")) {
        if (e.kind != CheckpointEntry::Kind::f32) continue;
        ++tensors;
        EXPECT_EQ(e.name.rfind("decoder.", 0), 0u) << e.name;
    }
    EXPECT_GT(tensors, 0u);
}

TEST(Cli, NonFiniteTrainingKeepsLastGoodCheckpoint) {
    TempDir d;
    const CliRun r = run({"train", "--size", "64", "--n", "2", "--batch", "2", "--steps", "20", "--warmup", "0", "--lr",
                       "1e30", "--checkpoint-every", "1", "--no-augment", "--out", d / "t"});
    EXPECT_EQ(r.code, 3) << r.out << r.err;
    EXPECT_NE(r.err.find("non-finite"), std::string::npos) << r.err;
    // The first update already overflows, so only its snapshot survives.
    EXPECT_NE(r.err.find("last good checkpoint (1 completed steps)"), std::string::npos) << r.err;
    const AdapterCheckpoint ck = read_adapter_header(d.path() / "t" / "adapters.sl2l");
    EXPECT_EQ(ck.lora.rank, 16);
}

TEST(Cli, SweepEvaluatesGridAndReloads) {
    TempDir d;
    const std::vector<std::string> args{"sweep", "--task", "disc", "--size", "64", "--n", "2", "--steps", "2",
                                        "--warmup", "1", "--batch", "2", "--ranks", "2", "--ablations", "abl-0",
                                        "abl-5", "--prompt-modes", "eval-0", "eval-5", "--checkpoints", d / "ck",
                                        "--out", d / "s", "--train-missing"};
    const CliRun a = run(args);
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(csv_rows(d.path() / "s" / "report.csv"), 4);
    const std::string first = slurp(d.path() / "s" / "report.csv");

    std::vector<std::string> reload = args;
    reload.pop_back();
    reload[reload.size() - 1] = d / "s2";
    const CliRun b = run(reload);
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_NE(b.out.find("trained 0 cell(s), loaded 2"), std::string::npos) << b.out;
    EXPECT_EQ(slurp(d.path() / "s2" / "report.csv"), first);

    fs::remove_all(d.path() / "ck");
    const CliRun c = run(reload);
    EXPECT_NE(c.code, 0);
    EXPECT_NE(c.err.find("missing checkpoint"), std::string::npos) << c.err;
}

} // namespace
} // namespace loraseg
