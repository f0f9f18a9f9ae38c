#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "msca/dataset.hpp"
#include "msca/tensor_io.hpp"

using namespace msca;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(MSCA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("msca_cli_" + std::to_string(::getpid()) + "_" +
                                            ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string at(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpAndUnknownOptions) {
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run("train --bogus"), 1);
}

TEST_F(Cli, SynthDataWritesLoadableManifest) {
    ASSERT_EQ(run("synth-data --seed 4 --n 9 --size 32 --out " + at("d")), 0);
    const auto m = load_manifest(at("d"));
    EXPECT_EQ(m.train.size(), 6u);
    EXPECT_EQ(m.val.size() + m.test.size(), 3u);
    EXPECT_EQ(run("synth-data --seed 4 --n 9 --size 40 --out " + at("e")), 1);
}

TEST_F(Cli, MissingInputIsAnIoError) {
    EXPECT_EQ(run("eval --checkpoint " + at("nope.ckpt") + " --split test --out-csv " + at("x.csv")), 3);
    EXPECT_EQ(run("preprocess --modality ct --in " + at("nope.raw") + " --out " + at("o.raw")), 3);
}

TEST_F(Cli, MalformedFilesAreFormatErrors) {
    std::ofstream(at("bad.ckpt")) << "not a checkpoint\n";
    EXPECT_EQ(run("eval --checkpoint " + at("bad.ckpt") + " --split test --out-csv " + at("x.csv")), 3);
    std::ofstream(at("bad.raw")) << "TNSR";
    EXPECT_EQ(run("preprocess --modality mri --in " + at("bad.raw") + " --out " + at("o.raw")), 3);
}

TEST_F(Cli, InvalidConfigurationExitsOne) {
    ASSERT_EQ(run("synth-data --seed 1 --n 6 --size 32 --out " + at("d")), 0);
    std::ofstream(at("bad.txt")) << "width=7\n";
    EXPECT_EQ(run("train --config " + at("bad.txt") + " --data " + at("d") + " --out " + at("r")), 1);
    std::ofstream(at("typo.txt")) << "widht=8\n";
    EXPECT_EQ(run("train --config " + at("typo.txt") + " --data " + at("d") + " --out " + at("r")), 1);
    std::ofstream(at("ok.txt")) << "image_size=32\n";
    EXPECT_EQ(run("train --config " + at("ok.txt") + " --data " + at("d") + " --out " + at("r") +
                  " --train-fraction 1.5"),
              1);
    EXPECT_EQ(run("preprocess --modality ct --window-width 0 --in x --out y"), 1);
    EXPECT_EQ(run("preprocess --modality ct --window-width 400 --p-lo 1 --in x --out y"), 1);
    EXPECT_EQ(run("gradcheck --module nosuch"), 1);
}

TEST_F(Cli, ImpossibleGradcheckToleranceIsNumerical) {
    EXPECT_EQ(run("gradcheck --module primitives --seeds 1 --tol 1e-30"), 2);
    EXPECT_EQ(run("gradcheck --module adapter --seeds 2"), 0);
}

TEST_F(Cli, PreprocessWritesNormalizedSlices) {
    Tensor vol({2, 8, 8});
    for (std::int64_t i = 0; i < vol.numel(); ++i) vol.data()[i] = -1000.0 + 20.0 * static_cast<double>(i);
    save_tensor(at("v.raw"), vol);
    ASSERT_EQ(run("preprocess --modality ct --size 16 --in " + at("v.raw") + " --out " + at("o.raw") +
                  " --pgm-dir " + at("pgm")),
              0);
    const Tensor out = load_tensor(at("o.raw"));
    EXPECT_EQ(out.shape(), (Shape{2, 16, 16}));
    for (double v : out.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 255.0);
    }
    EXPECT_EQ(std::distance(fs::directory_iterator(at("pgm")), fs::directory_iterator()), 2);
}

TEST_F(Cli, TrainThenEvaluate) {
    ASSERT_EQ(run("synth-data --seed 2 --n 9 --size 32 --out " + at("d")), 0);
    std::ofstream(at("c.txt")) << "image_size=32\nwidth=8\nembed_dim=16\ndepth=1\nheads=2\nepochs=1\nbatch_size=4\n";
    ASSERT_EQ(run("train --config " + at("c.txt") + " --data " + at("d") + " --out " + at("r")), 0);
    EXPECT_TRUE(fs::exists(at("r/best.ckpt")));
    EXPECT_TRUE(fs::exists(at("r/train_log.txt")));
    ASSERT_EQ(run("eval --checkpoint " + at("r/best.ckpt") + " --split test --out-csv " + at("t.csv")), 0);
    std::ifstream csv(at("t.csv"));
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "image_id,dice,iou,acc,hd95");
    EXPECT_EQ(run("eval --checkpoint " + at("r/best.ckpt") + " --split holdout --out-csv " + at("t.csv")), 1);
}
