#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "seqtrans/cli.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"seqtrans"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return seqtrans::cli::run(static_cast<int>(argv.size()), argv.data());
}

struct WorkDir {
    fs::path root;
    WorkDir() {
        root = fs::temp_directory_path() / ("seqtrans_cli_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~WorkDir() { fs::remove_all(root); }
    std::string sub(const std::string& name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("cli end-to-end flow") {
    WorkDir wd;

    // synth
    CHECK(run_cli({"synth", "--det-cycle", "--K", "4", "--M", "4", "--T", "6", "--users", "12",
                   "--seed", "4", "--negatives", "3", "--out", wd.sub("synth")}) == 0);
    CHECK(fs::exists(wd.sub("synth") + "/data.tsv"));
    CHECK(fs::exists(wd.sub("synth") + "/spec.txt"));
    CHECK(fs::exists(wd.sub("synth") + "/oracle.json"));
    CHECK(fs::exists(wd.sub("synth") + "/config.resolved"));

    // prepare
    CHECK(run_cli({"prepare", "--input", wd.sub("synth") + "/data.tsv", "--item-min", "0",
                   "--user-min", "0", "--out", wd.sub("prep")}) == 0);
    CHECK(fs::exists(wd.sub("prep") + "/split.cache"));
    CHECK(fs::exists(wd.sub("prep") + "/stats.json"));

    // train
    CHECK(run_cli({"train", "--data", wd.sub("prep") + "/split.cache", "--variant", "ci", "--d",
                   "4", "--L", "3", "--batch-size", "8", "--max-epochs", "2", "--patience", "2",
                   "--negatives", "2", "--cutoffs", "1,5", "--seed", "3", "--out",
                   wd.sub("run")}) == 0);
    CHECK(fs::exists(wd.sub("run") + "/checkpoint.bin"));
    CHECK(fs::exists(wd.sub("run") + "/history.csv"));
    CHECK(fs::exists(wd.sub("run") + "/config.resolved"));

    // evaluate
    CHECK(run_cli({"evaluate", "--data", wd.sub("prep") + "/split.cache", "--checkpoint",
                   wd.sub("run") + "/checkpoint.bin", "--split", "test", "--categories", "--out",
                   wd.sub("eval")}) == 0);
    CHECK(fs::exists(wd.sub("eval") + "/metrics.csv"));
    CHECK(fs::exists(wd.sub("eval") + "/metrics.json"));
    CHECK(fs::exists(wd.sub("eval") + "/category_metrics.json"));

    // wrong expected variant is refused
    CHECK(run_cli({"evaluate", "--data", wd.sub("prep") + "/split.cache", "--checkpoint",
                   wd.sub("run") + "/checkpoint.bin", "--expect-variant", "lstm", "--out",
                   wd.sub("eval2")}) == 2);

    // sweep over two lambda values
    CHECK(run_cli({"sweep", "--param", "lambda", "--values", "0,1", "--data",
                   wd.sub("prep") + "/split.cache", "--variant", "ivaec", "--d", "4", "--L", "3",
                   "--batch-size", "8", "--max-epochs", "1", "--patience", "1", "--negatives",
                   "2", "--cutoffs", "1,5", "--out", wd.sub("sweep")}) == 0);
    std::ifstream sweep(wd.sub("sweep") + "/sweep.csv");
    std::string line;
    int lines = 0;
    while (std::getline(sweep, line)) ++lines;
    CHECK(lines == 3);  // header + one row per value
}

TEST_CASE("cli error paths") {
    WorkDir wd;
    CHECK(run_cli({"prepare", "--input", wd.sub("missing.tsv"), "--out", wd.sub("p")}) == 2);
    CHECK(run_cli({"train"}) == 2);           // missing required flags
    CHECK(run_cli({"definitely-not-a-command"}) == 2);
    CHECK(run_cli({"--help"}) == 0);
}

TEST_CASE("cli config files obey override and unknown-key rules") {
    WorkDir wd;
    const std::string events = wd.sub("events.tsv");
    {
        std::ofstream out(events);
        for (int u = 0; u < 3; ++u)
            for (int t = 0; t < 4; ++t)
                out << "u" << u << "\ti" << (u + t) << "\tc" << (t % 2) << "\t" << t << "\n";
    }

    const std::string good_cfg = wd.sub("good.cfg");
    {
        std::ofstream out(good_cfg);
        out << "# prepare settings\n";
        out << "input = " << events << "\n";
        out << "item-min = 0\n";
        out << "user-min = 0\n";
        out << "out = " << wd.sub("from_config") << "\n";
    }
    CHECK(run_cli({"prepare", "--config", good_cfg}) == 0);
    CHECK(fs::exists(wd.sub("from_config") + "/split.cache"));

    // command line wins over the file
    CHECK(run_cli({"prepare", "--config", good_cfg, "--out", wd.sub("cli_wins")}) == 0);
    CHECK(fs::exists(wd.sub("cli_wins") + "/split.cache"));

    const std::string bad_cfg = wd.sub("bad.cfg");
    {
        std::ofstream out(bad_cfg);
        out << "input = " << events << "\n";
        out << "out = " << wd.sub("never") << "\n";
        out << "definitely-unknown-key = 1\n";
    }
    CHECK(run_cli({"prepare", "--config", bad_cfg}) == 2);
}

TEST_CASE("cli gradcheck wiring") {
    CHECK(run_cli({"gradcheck", "--variant", "lstm"}) == 0);
    CHECK(run_cli({"gradcheck", "--variant", "not-a-variant"}) == 2);
}
