// Drives the amif binary end to end on a tiny synthetic dataset and checks
// outputs and exit codes.
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "amif/amif.hpp"

namespace fs = std::filesystem;
using namespace amif;

namespace {

struct CmdResult {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);)
        if (!l.empty()) out.push_back(l);
    return out;
}

class CliTest : public ::testing::Test {
protected:
    static inline fs::path root;

    static void SetUpTestSuite() {
        root = fs::temp_directory_path() / ("amif_cli_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
        auto r = run("fixture --out " + (root / "data").string() + " --pairs 4 --val 1 --test 2 --size 64 --seed 3");
        ASSERT_EQ(r.code, 0) << r.err;

        train::TrainConfig cfg;
        cfg.model = ModelConfig::desk(64);
        cfg.data_root = (root / "data").string();
        cfg.out_dir = (root / "run").string();
        cfg.max_steps = 2;
        cfg.epochs = 10;
        cfg.seed = 5;
        std::ofstream(root / "train.json") << nlohmann::json(cfg).dump(2);
        r = run("train --config " + (root / "train.json").string());
        ASSERT_EQ(r.code, 0) << r.err;
    }
    static void TearDownTestSuite() { fs::remove_all(root); }

    static CmdResult run(const std::string& args) {
        static int counter = 0;
        const auto out = fs::temp_directory_path() / ("amif_cli_out_" + std::to_string(::getpid()) + "_" + std::to_string(counter));
        const auto err = fs::temp_directory_path() / ("amif_cli_err_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        const std::string cmd = std::string(AMIF_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
        const int status = std::system(cmd.c_str());
        CmdResult r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        fs::remove(out);
        fs::remove(err);
        return r;
    }

    static fs::path ckpt() { return root / "run" / "model.ckpt"; }
    static fs::path a(const std::string& stem) { return root / "data" / "modal_a" / (stem + ".png"); }
    static fs::path b(const std::string& stem) { return root / "data" / "modal_b" / (stem + ".png"); }
    static std::string test_stem(int i) { return train::open_dataset(root / "data", 64).test.at(i); }

    static CmdResult fuse(const std::string& stem, const fs::path& out, const fs::path& key, const std::string& extra = "") {
        return run("fuse --modal-a " + a(stem).string() + " --modal-b " + b(stem).string() + " --ckpt " +
                   ckpt().string() + " --out " + out.string() + " --key-out " + key.string() + " " + extra);
    }
};

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
    EXPECT_EQ(run("--help").code, 0);
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("bogus").code, 1);
    EXPECT_EQ(run("fuse --modal-a x.png").code, 1);
}

TEST_F(CliTest, TrainWritesLossLogAndCheckpoint) {
    auto csv = lines(slurp(root / "run" / "loss.csv"));
    ASSERT_EQ(csv.size(), 3u);
    EXPECT_EQ(csv[0] + "\n", train::csv_header());
    EXPECT_EQ(csv[1].substr(0, 2), "1,");
    EXPECT_EQ(csv[2].substr(0, 2), "2,");
    EXPECT_TRUE(fs::exists(ckpt()));
    EXPECT_NO_THROW(load_model(ckpt()));
}

TEST_F(CliTest, ResumeAppendsToTheLog) {
    fs::copy(root / "run", root / "resumed", fs::copy_options::recursive);
    auto cfg = train::load_config(root / "train.json");
    cfg.out_dir = (root / "resumed").string();
    cfg.max_steps = 3;
    std::ofstream(root / "resume.json") << nlohmann::json(cfg).dump(2);
    auto r = run("train --resume --config " + (root / "resume.json").string());
    ASSERT_EQ(r.code, 0) << r.err;
    auto csv = lines(slurp(root / "resumed" / "loss.csv"));
    ASSERT_EQ(csv.size(), 4u);
    EXPECT_EQ(csv[3].substr(0, 2), "3,");
}

TEST_F(CliTest, TrainRejectsBadInputs) {
    auto cfg = train::load_config(root / "train.json");
    cfg.data_root = (root / "no_such_dir").string();
    std::ofstream(root / "missing.json") << nlohmann::json(cfg).dump(2);
    auto r = run("train --config " + (root / "missing.json").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("no_such_dir"), std::string::npos) << r.err;

    std::ofstream(root / "bad.json") << R"({"lr": -1})";
    EXPECT_EQ(run("train --config " + (root / "bad.json").string()).code, 1);
    std::ofstream(root / "garbled.json") << "{ not json";
    EXPECT_EQ(run("train --config " + (root / "garbled.json").string()).code, 1);
    EXPECT_EQ(run("train --config " + (root / "absent.json").string()).code, 1);
}

TEST_F(CliTest, FuseThenRecover) {
    const auto stem = test_stem(0);
    const auto dir = root / "fuse1";
    auto r = fuse(stem, dir / "wm.png", dir / "wm.key");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "wm.png"));
    EXPECT_TRUE(fs::exists(dir / "wm.key"));

    auto manifest = lines(slurp(dir / "manifest.jsonl"));
    ASSERT_EQ(manifest.size(), 1u);
    auto row = nlohmann::json::parse(manifest[0]);
    EXPECT_EQ(row.at("fingerprint"), to_hex(load_model(ckpt())->fingerprint()));
    EXPECT_NE(row.at("image").get<std::string>().find("wm.png"), std::string::npos);
    EXPECT_NE(row.at("key").get<std::string>().find("wm.key"), std::string::npos);
    EXPECT_EQ(row.at("timestamp").get<std::string>().back(), 'Z');

    // Outputs are never silently replaced.
    EXPECT_EQ(fuse(stem, dir / "wm.png", dir / "other.key").code, 1);
    EXPECT_FALSE(fs::exists(dir / "other.key"));
    r = fuse(stem, dir / "wm.png", dir / "wm.key", "--force");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(slurp(dir / "manifest.jsonl")).size(), 2u);

    // The CLI's recovery matches the in-process one on the saved image.
    r = run("recover --in " + (dir / "wm.png").string() + " --key " + (dir / "wm.key").string() + " --ckpt " +
            ckpt().string() + " --out " + (dir / "clean.png").string());
    ASSERT_EQ(r.code, 0) << r.err;
    auto model = load_model(ckpt());
    torch::NoGradGuard ng;
    auto expect = model->recover_authorized(image::load(dir / "wm.png").luma, KeyArtifact::load(dir / "wm.key"));
    auto got = image::load(dir / "clean.png").luma;
    EXPECT_LE((got - expect.clean_image.clamp(0, 1)).abs().max().item<double>(), 1.0 / 255 + 1e-6);
}

TEST_F(CliTest, RecoverRejectsBadKeys) {
    const auto stem = test_stem(1);
    const auto dir = root / "fuse2";
    ASSERT_EQ(fuse(stem, dir / "wm.png", dir / "wm.key").code, 0);

    // corrupted key file → authentication failure
    auto bytes = slurp(dir / "wm.key");
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream(dir / "corrupt.key", std::ios::binary) << bytes;
    auto r = run("recover --in " + (dir / "wm.png").string() + " --key " + (dir / "corrupt.key").string() +
                 " --ckpt " + ckpt().string() + " --out " + (dir / "x.png").string());
    EXPECT_EQ(r.code, 2) << r.err;
    EXPECT_FALSE(fs::exists(dir / "x.png"));

    // key issued by a different checkpoint → incompatibility naming both
    torch::manual_seed(99);
    AmifModel other(ModelConfig::desk(64));
    save_model(dir / "other.ckpt", other);
    r = run("recover --in " + (dir / "wm.png").string() + " --key " + (dir / "wm.key").string() + " --ckpt " +
            (dir / "other.ckpt").string() + " --out " + (dir / "y.png").string());
    EXPECT_EQ(r.code, 2) << r.err;
    EXPECT_NE(r.err.find(to_hex(other->fingerprint())), std::string::npos) << r.err;
    EXPECT_NE(r.err.find(to_hex(load_model(ckpt())->fingerprint())), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(dir / "y.png"));
}

TEST_F(CliTest, FuseRejectsMismatchedSizes) {
    const auto stem = test_stem(0);
    const auto dir = root / "fuse3";
    fs::create_directories(dir);
    cv::Mat m(96, 80, CV_8UC1, cv::Scalar(128));
    cv::imwrite((dir / "b.png").string(), m);
    auto r = run("fuse --modal-a " + a(stem).string() + " --modal-b " + (dir / "b.png").string() + " --ckpt " +
                 ckpt().string() + " --out " + (dir / "wm.png").string() + " --key-out " + (dir / "wm.key").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(fs::exists(dir / "wm.png"));
    EXPECT_FALSE(fs::exists(dir / "wm.key"));
}

TEST_F(CliTest, EvalScoresMatchedTriples) {
    const auto dir = root / "eval";
    fs::create_directories(dir / "pred");
    fs::create_directories(dir / "a");
    fs::create_directories(dir / "b");
    const auto s0 = test_stem(0), s1 = test_stem(1);
    for (const auto& s : {s0, s1}) {
        fs::copy_file(a(s), dir / "a" / (s + ".png"));
        fs::copy_file(b(s), dir / "b" / (s + ".png"));
    }
    // a plain average as the "fused" image, plus one prediction with no sources
    auto fused = (image::load(a(s0)).luma + image::load(b(s0)).luma) / 2;
    image::save_png(dir / "pred" / (s0 + ".png"), fused);
    image::save_png(dir / "pred" / "stray.png", fused);

    auto r = run("eval --pred-dir " + (dir / "pred").string() + " --src-a-dir " + (dir / "a").string() +
                 " --src-b-dir " + (dir / "b").string() + " --out-csv " + (dir / "m.csv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("stray"), std::string::npos);
    auto csv = lines(slurp(dir / "m.csv"));
    ASSERT_EQ(csv.size(), 3u);
    EXPECT_EQ(csv[0], "name,sf,mi,vif,qabf,ssim");
    EXPECT_EQ(csv[1].substr(0, s0.size() + 1), s0 + ",");
    EXPECT_EQ(csv[2].substr(0, 5), "mean,");

    // the row matches the library on the same files
    auto m = metrics::evaluate(image::load(dir / "pred" / (s0 + ".png")).luma, image::load(a(s0)).luma,
                               image::load(b(s0)).luma);
    std::istringstream is(csv[1]);
    std::string cell;
    std::getline(is, cell, ',');
    std::vector<double> vals;
    while (std::getline(is, cell, ',')) vals.push_back(std::stod(cell));
    ASSERT_EQ(vals.size(), 5u);
    EXPECT_NEAR(vals[0], m.sf, 1e-5 * std::max(1.0, std::abs(m.sf)));
    EXPECT_NEAR(vals[1], m.mi, 1e-5 * std::max(1.0, std::abs(m.mi)));
    EXPECT_NEAR(vals[4], m.ssim, 1e-5);

    fs::create_directories(dir / "empty");
    r = run("eval --pred-dir " + (dir / "empty").string() + " --src-a-dir " + (dir / "a").string() +
            " --src-b-dir " + (dir / "b").string() + " --out-csv " + (dir / "n.csv").string());
    EXPECT_EQ(r.code, 1);
}
