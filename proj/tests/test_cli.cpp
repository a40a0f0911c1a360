#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mgcap/commands.hpp"

using namespace mgcap;
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& p) {
  const auto b = read_all(p);
  return {b.begin(), b.end()};
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidArgument;
}

// Small enough that a full train run takes well under a second.
RunConfig tiny_config() {
  RunConfig cfg;
  apply_config_text(cfg, R"(
    feature_channels = 4
    transforms = 2
    granularity = 1.0, 0.5
    crop_size = 24
    input_size = 8
    batch_size = 4
    epochs_stage1 = 2
    epochs_stage2 = 2
    synth_classes = 3
    synth_samples = 6
    synth_size = 32
  )");
  return cfg;
}

class Workdir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mgcap_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST(Config, DefaultsFollowTheReferenceSettings) {
  const RunConfig c;
  EXPECT_EQ(c.lambda, 1e-4);
  EXPECT_EQ(c.eps_lo, 1e-5);
  EXPECT_EQ(c.eps_hi, 1e5);
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 5e-4);
  EXPECT_EQ(c.batch_size, 12u);
  EXPECT_EQ(c.transforms, 12u);
  EXPECT_EQ(c.granularity_ratios.size(), 3u);
  EXPECT_EQ(c.normalization, NormalizationMode::SqrtE);
  EXPECT_EQ(c.feature_channels, 32u);
  EXPECT_EQ(c.epochs_stage1 + c.epochs_stage2, 30);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesKeyValueTextWithComments) {
  RunConfig c;
  apply_config_text(c, "# comment\n  transforms = 4  # trailing\n\nnormalization=log_e\ngranularity = 1, 0.75\n"
                       "epochs-stage1 = 3\nuse_gaussian = false\n");
  EXPECT_EQ(c.transforms, 4u);
  EXPECT_EQ(c.normalization, NormalizationMode::LogE);
  EXPECT_EQ(c.granularity_ratios, (std::vector<double>{1.0, 0.75}));
  EXPECT_EQ(c.epochs_stage1, 3);
  EXPECT_FALSE(c.use_gaussian);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  RunConfig c;
  try {
    apply_config_text(c, "seed = 1\ntransfroms = 4\n", "run.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("transfroms"), std::string::npos);
  }
  EXPECT_EQ(kind_of([&] { c.set("transforms", "four"); }), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([&] { c.set("transforms", "4x"); }), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([&] { c.set("normalization", "sqrt"); }), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([&] { c.set("hflip", "maybe"); }), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([&] { apply_config_text(c, "just a line\n"); }), ErrorKind::ConfigError);
  RunConfig bad;
  bad.granularity_ratios = {1.0, 1.0};
  EXPECT_EQ(kind_of([&] { bad.validate(); }), ErrorKind::ConfigError);
  bad = RunConfig{};
  bad.input_size = 30;
  EXPECT_EQ(kind_of([&] { bad.validate(); }), ErrorKind::ConfigError);
}

TEST(Config, OverridesWinAndTextRoundTrips) {
  RunConfig c;
  apply_config_text(c, "transforms = 4\nlr_stage2 = 0.002\n");
  apply_overrides(c, {{"transforms", "12"}, {"lr-stage2", "0.0005"}});
  EXPECT_EQ(c.transforms, 12u);
  EXPECT_EQ(c.lr_stage2, 0.0005);

  c.granularity_ratios = {1.0, 0.75};
  c.lambda = 0.1 + 0.2;  // not exactly representable in short decimal form
  RunConfig back;
  apply_config_text(back, c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.lambda, c.lambda);
}

TEST(Checkpoint, Crc32KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(detail::crc32_of(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size())),
            0xCBF43926u);
}

// Byte layout written out by hand for a single 1x2 record.
TEST(Checkpoint, ByteLayout) {
  const std::vector<CheckpointRecord> recs{{"w", {1, 2}, {1.0f, -2.0f}}};
  const auto bytes = encode_checkpoint(recs);
  std::vector<unsigned char> want{'M', 'G', 'C', 'A', 'P', '1', 1, 0, 0, 0, 'w', 1, 2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0};
  for (float f : {1.0f, -2.0f}) {
    unsigned char b[4];
    std::memcpy(b, &f, 4);
    want.insert(want.end(), b, b + 4);
  }
  const std::uint32_t crc = detail::crc32_of(want);
  for (int k = 0; k < 4; ++k) want.push_back(static_cast<unsigned char>(crc >> (8 * k)));
  EXPECT_EQ(bytes, want);
}

TEST_F(Workdir, CheckpointRoundTripIsByteIdentical) {
  Model model(tiny_config().model(3, 1), 5);
  OptimizerState opt;
  opt.init_like(model.parameters());
  const auto recs = training_records(model, opt, 4);
  save_checkpoint(dir_ / "a.mgcap", recs);
  save_checkpoint(dir_ / "b.mgcap", load_checkpoint(dir_ / "a.mgcap"));
  EXPECT_EQ(read_all(dir_ / "a.mgcap"), read_all(dir_ / "b.mgcap"));
  EXPECT_FALSE(fs::exists(dir_ / "a.mgcap.tmp"));

  Model other(tiny_config().model(3, 1), 6);
  OptimizerState opt2;
  opt2.init_like(other.parameters());
  EXPECT_EQ(restore_training(load_checkpoint(dir_ / "a.mgcap"), other, opt2), 4);
  const auto pa = model.parameters(), pb = other.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k)
    for (std::size_t i = 0; i < pa[k].tensor->size(); ++i)
      EXPECT_EQ(pb[k].tensor->values[i], static_cast<double>(static_cast<float>(pa[k].tensor->values[i])));
}

TEST_F(Workdir, CheckpointCorruptionAndMismatch) {
  Model model(tiny_config().model(3, 1), 5);
  OptimizerState opt;
  opt.init_like(model.parameters());
  save_checkpoint(dir_ / "c.mgcap", training_records(model, opt, 1));
  auto bytes = read_all(dir_ / "c.mgcap");

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  EXPECT_EQ(kind_of([&] { decode_checkpoint(flipped); }), ErrorKind::CorruptCheckpoint);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  EXPECT_EQ(kind_of([&] { decode_checkpoint(truncated); }), ErrorKind::CorruptCheckpoint);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(kind_of([&] { decode_checkpoint(magic); }), ErrorKind::CorruptCheckpoint);

  RunConfig wider = tiny_config();
  wider.feature_channels = 5;
  Model other(wider.model(3, 1), 5);
  EXPECT_EQ(kind_of([&] { restore_parameters(load_checkpoint(dir_ / "c.mgcap"), other.parameters()); }),
            ErrorKind::CheckpointMismatch);
  RunConfig fewer = tiny_config();
  fewer.granularity_ratios = {1.0};
  Model shallow(fewer.model(3, 1), 5);
  EXPECT_EQ(kind_of([&] { restore_parameters(load_checkpoint(dir_ / "c.mgcap"), shallow.parameters()); }),
            ErrorKind::CheckpointMismatch);
  EXPECT_EQ(kind_of([&] { load_model(tiny_config(), 3, 1, dir_ / "missing.mgcap"); }), ErrorKind::IoError);
}

TEST_F(Workdir, TrainWritesMetricsCheckpointAndConfusion) {
  std::ostringstream log;
  ASSERT_EQ(cmd_train({tiny_config(), dir_ / "run", false, 1}, log), 0);
  const auto rows = lines_of(read_text(dir_ / "run" / "metrics.csv"));
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[0], "epoch,stage,split,loss,top1");
  // 4 epochs x (train, test) + two final rows
  EXPECT_EQ(rows.size(), 1u + 8 + 2);
  EXPECT_EQ(rows[1].rfind("1,1,train,", 0), 0u) << rows[1];
  EXPECT_EQ(rows[5].rfind("3,2,train,", 0), 0u) << rows[5];
  EXPECT_EQ(rows[9].rfind("4,final,train,", 0), 0u) << rows[9];
  EXPECT_TRUE(fs::exists(dir_ / "run" / "checkpoint.mgcap"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "run.cfg"));
  EXPECT_FALSE(fs::exists(dir_ / "run" / "metrics.csv.tmp"));

  // confusion rows sum to the per-class test counts (3 per class with ratio 0.5 of 6)
  const auto conf = lines_of(read_text(dir_ / "run" / "confusion.csv"));
  ASSERT_EQ(conf.size(), 4u);
  EXPECT_EQ(conf[0], "true\\pred,stripes_wide,stripes_medium,stripes_fine");
  for (std::size_t r = 1; r < 4; ++r) {
    std::stringstream ss(conf[r]);
    std::string cell;
    std::getline(ss, cell, ',');
    int sum = 0;
    while (std::getline(ss, cell, ',')) sum += std::stoi(cell);
    EXPECT_EQ(sum, 3) << conf[r];
  }
}

TEST_F(Workdir, SameSeedGivesIdenticalOutputs) {
  std::ostringstream log;
  cmd_train({tiny_config(), dir_ / "a", false, 1}, log);
  cmd_train({tiny_config(), dir_ / "b", false, 1}, log);
  EXPECT_EQ(read_all(dir_ / "a" / "metrics.csv"), read_all(dir_ / "b" / "metrics.csv"));
  EXPECT_EQ(read_all(dir_ / "a" / "checkpoint.mgcap"), read_all(dir_ / "b" / "checkpoint.mgcap"));
}

// Stopping after epoch 3 and resuming reproduces the uninterrupted run byte for byte.
TEST_F(Workdir, ResumeMatchesUninterruptedRun) {
  std::ostringstream log;
  cmd_train({tiny_config(), dir_ / "full", false, 1}, log);
  RunConfig partial = tiny_config();
  partial.epochs_stage2 = 1;
  cmd_train({partial, dir_ / "resumed", false, 1}, log);
  cmd_train({tiny_config(), dir_ / "resumed", true, 1}, log);
  EXPECT_EQ(read_all(dir_ / "full" / "checkpoint.mgcap"), read_all(dir_ / "resumed" / "checkpoint.mgcap"));
  EXPECT_EQ(read_text(dir_ / "full" / "metrics.csv"), read_text(dir_ / "resumed" / "metrics.csv"));
}

TEST_F(Workdir, HeadOnlyWhenStageTwoIsEmpty) {
  RunConfig cfg = tiny_config();
  cfg.epochs_stage2 = 0;
  std::ostringstream log;
  cmd_train({cfg, dir_ / "h", false, 0}, log);
  const Model init(cfg.model(3, 1), cfg.seed);
  const Model trained = load_model(cfg, 3, 1, dir_ / "h" / "checkpoint.mgcap");
  auto a = const_cast<Model&>(init).parameters();
  auto b = const_cast<Model&>(trained).parameters();
  for (std::size_t k = 0; k < trained.head_param_offset(); ++k)
    for (std::size_t i = 0; i < a[k].tensor->size(); ++i)
      ASSERT_EQ(b[k].tensor->values[i], static_cast<double>(static_cast<float>(a[k].tensor->values[i]))) << a[k].name;
  EXPECT_NE(*a.back().tensor, *b.back().tensor);
  // eval_every 0: only the last epoch is evaluated on the test split
  const auto rows = lines_of(read_text(dir_ / "h" / "metrics.csv"));
  EXPECT_EQ(rows.size(), 1u + 3 + 2);
}

TEST_F(Workdir, EvalOnTrainSplitReproducesFinalTrainRow) {
  std::ostringstream log;
  cmd_train({tiny_config(), dir_ / "e", false, 1}, log);
  const auto rows = lines_of(read_text(dir_ / "e" / "metrics.csv"));
  const std::string final_train = rows[rows.size() - 2];
  const double logged = std::stod(final_train.substr(final_train.rfind(',') + 1));

  std::ostringstream out;
  const RunConfig cfg = config_for_checkpoint(dir_ / "e" / "checkpoint.mgcap", "");
  ASSERT_EQ(cmd_eval({cfg, dir_ / "e" / "checkpoint.mgcap", "train", dir_ / "conf_train.csv"}, out), 0);
  const std::string text = out.str();
  const auto pos = text.find("top1 ");
  ASSERT_NE(pos, std::string::npos) << text;
  EXPECT_NEAR(std::stod(text.substr(pos + 5)), logged, 1e-3);
  EXPECT_TRUE(fs::exists(dir_ / "conf_train.csv"));
}

TEST_F(Workdir, SynthWritesSplitManifest) {
  RunConfig cfg = tiny_config();
  cfg.synth_samples = 4;
  std::ostringstream out;
  cmd_synth({cfg, dir_ / "syn"}, out);
  const DatasetManifest m = read_manifest(dir_ / "syn" / "manifest.csv");
  EXPECT_EQ(m.records.size(), 12u);
  EXPECT_EQ(m.count(Split::Train), 6u);
  EXPECT_EQ(m.class_names.size(), 3u);
  for (const auto& r : m.records) EXPECT_TRUE(fs::exists(dir_ / "syn" / r.path)) << r.path;

  // the on-disk set trains through the manifest path too
  cfg.manifest = (dir_ / "syn" / "manifest.csv").string();
  cfg.epochs_stage2 = 0;
  EXPECT_EQ(cmd_train({cfg, dir_ / "from_disk", false, 0}, out), 0);
}

TEST_F(Workdir, InspectReport) {
  RunConfig cfg = tiny_config();
  cfg.transforms = 1;
  cfg.epochs_stage1 = 1;
  cfg.epochs_stage2 = 0;
  std::ostringstream log;
  cmd_train({cfg, dir_ / "i", false, 0}, log);
  save_ppm(render_synthetic(cfg.synthetic(), 1, 0), dir_ / "img.pgm");

  std::ostringstream out;
  ASSERT_EQ(cmd_inspect({cfg, dir_ / "i" / "checkpoint.mgcap", dir_ / "img.pgm", {}}, out), 0);
  const auto lines = lines_of(out.str());
  double psum = 0;
  std::size_t k = 1;
  for (; k < lines.size() && lines[k].rfind("  ", 0) == 0; ++k) psum += std::stod(lines[k].substr(lines[k].rfind(' ')));
  EXPECT_NEAR(psum, 1.0, 1e-5);
  EXPECT_EQ(lines[k].rfind("predicted: ", 0), 0u);
  // a single transform is always its own canonical pose
  for (const auto& l : lines)
    if (l.rfind("granularity", 0) == 0) {
      EXPECT_NE(l.find("canonical angle 0 deg"), std::string::npos) << l;
    }

  // with sqrt_e the normalized spectrum is the square root of the rectified one
  std::size_t checked = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].rfind("spectrum", 0) != 0) continue;
    for (std::size_t j = i + 1; j < lines.size(); ++j, ++checked) {
      std::istringstream ss(lines[j]);
      double idx, eig, rect, norm;
      ss >> idx >> eig >> rect >> norm;
      EXPECT_NEAR(norm, std::sqrt(rect), 1e-5 * std::sqrt(rect) + 1e-12) << lines[j];
    }
  }
  EXPECT_EQ(checked, cfg.feature_channels + 1);
}

TEST(Gradcheck, CommandAndScopeErrors) {
  std::ostringstream out;
  EXPECT_EQ(cmd_gradcheck({"spectral_sqrt", 20, 7, false}, out), 0);
  EXPECT_NE(out.str().find("PASS"), std::string::npos);
  std::ostringstream deg;
  EXPECT_EQ(cmd_gradcheck({"spectral_sqrt", 10, 7, true}, deg), 0);
  EXPECT_NE(deg.str().find("finite yes"), std::string::npos) << deg.str();
  try {
    cmd_gradcheck({"spectral", 1, 7, false}, out);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
    for (const auto& s : gradcheck_scopes()) EXPECT_NE(std::string(e.what()).find(s), std::string::npos) << s;
  }
}
