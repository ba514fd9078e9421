#include <filesystem>

#include "core/toy_model.hpp"
#include "helpers.hpp"

using namespace semcomm;
using semcomm::test::error_of;

namespace {

ToyTrainConfig quick_config() {
  ToyTrainConfig c;
  c.epochs = 30;
  c.batch_size = 32;
  c.learning_rate = 1e-3;
  return c;
}

}  // namespace

TEST_SUITE("toy_score_model") {

TEST_CASE("checkpoint round trip is byte exact") {
  const NoiseSchedule s{0.1, 20.0, 100};
  RngStream rng(1, 1);
  const ToyScoreModel m(64, 10, s, rng);
  const auto bytes = m.serialize();
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SCM1");
  const auto back = ToyScoreModel::deserialize(bytes);
  CHECK(back.same_weights(m));
  CHECK(back.serialize() == bytes);

  const auto path = std::filesystem::temp_directory_path() / "semcomm_toy_test.scm";
  m.save(path);
  CHECK(ToyScoreModel::load(path).serialize() == bytes);
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK(error_of([&] { ToyScoreModel::deserialize(bad); }) == "invalid-input");
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
  CHECK(error_of([&] { ToyScoreModel::deserialize(cut); }) == "invalid-input");
  auto longer = bytes;
  longer.push_back(0);
  CHECK(error_of([&] { ToyScoreModel::deserialize(longer); }) == "invalid-input");
}

TEST_CASE("score is the predicted noise scaled by -1/sqrt(1-abar)") {
  const NoiseSchedule s{0.1, 20.0, 100};
  RngStream rng(2, 2);
  const ToyScoreModel m(8, 0, s, rng);
  const std::vector<double> x{0.1, -0.2, 0.3, 0.0, 0.5, -0.5, 0.9, -0.9};
  std::vector<double> eps(8), score(8);
  m.predict_eps(x, 0.4, {}, eps);
  m.score(x, 0.4, {}, score);
  for (std::size_t i = 0; i < 8; ++i) CHECK(score[i] == doctest::Approx(-eps[i] / std::sqrt(1.0 - s.alpha_bar(0.4))));
  CHECK(error_of([&] { m.predict_eps(std::vector<double>(7, 0.0), 0.4, {}, eps); }) == "invalid-input");
}

TEST_CASE("fresh adapters leave every output bit unchanged") {
  const NoiseSchedule s{0.1, 20.0, 100};
  RngStream rng(3, 3);
  ToyScoreModel m(64, 8, s, rng);
  m.quantize_layers();
  RngStream xr(4, 4);
  const auto x = gaussian_sample(xr, 64, 0.0, 1.0);
  const auto c = gaussian_sample(xr, 8, 0.0, 1.0);
  std::vector<double> before(64), after(64);
  m.predict_eps(x, 0.3, c, before);
  RngStream ar(5, 5);
  m.attach_adapters(4, ar);
  m.predict_eps(x, 0.3, c, after);
  CHECK(before == after);
}

TEST_CASE("training oracles on the two-cluster patch set") {
  const NoiseSchedule s{0.1, 20.0, 100};
  RngStream data_rng(6, 6);
  const auto set = synthetic_patch_set(800, 8, data_rng);
  REQUIRE(set.patches.size() == 800);

  RngStream cond_rng(7, 7), uncond_rng(7, 7);
  const auto cond = train_score_toy(set.patches, set.conds, s, quick_config(), cond_rng);
  const auto uncond = train_score_toy(set.patches, {}, s, quick_config(), uncond_rng);

  SUBCASE("loss decreases by at least 30%") {
    REQUIRE(cond.epoch_losses.size() == 30);
    CHECK(cond.train_loss <= 0.7 * cond.epoch_losses.front());
    CHECK(uncond.train_loss <= 0.7 * uncond.epoch_losses.front());
  }
  SUBCASE("validation loss within twice the training loss") {
    CHECK(cond.val_loss <= 2.0 * cond.train_loss);
    CHECK(uncond.val_loss <= 2.0 * uncond.train_loss);
  }
  SUBCASE("conditioning on the cluster id lowers the validation loss") {
    CHECK(cond.val_loss < uncond.val_loss);
  }
  SUBCASE("training is reproducible") {
    RngStream again(7, 7);
    const auto rerun = train_score_toy(set.patches, set.conds, s, quick_config(), again);
    CHECK(rerun.epoch_losses == cond.epoch_losses);
    CHECK(rerun.model.same_weights(cond.model));
  }
}

TEST_CASE("training input validation") {
  const NoiseSchedule s{0.1, 20.0, 100};
  RngStream rng(8, 8);
  const auto set = synthetic_patch_set(63, 4, rng);
  CHECK(error_of([&] { train_score_toy(set.patches, set.conds, s, quick_config(), rng); }) == "invalid-input");
  const auto ok = synthetic_patch_set(64, 4, rng);
  auto bad_cfg = quick_config();
  bad_cfg.epochs = 0;
  CHECK(error_of([&] { train_score_toy(ok.patches, ok.conds, s, bad_cfg, rng); }) == "invalid-config");
  auto poisoned = ok.patches;
  poisoned[5][7] = std::nan("");
  auto short_run = quick_config();
  short_run.epochs = 2;
  CHECK(error_of([&] { train_score_toy(poisoned, ok.conds, s, short_run, rng); }) == "training-diverged");
  CHECK(error_of([&] { synthetic_patch_set(10, 1, rng); }) == "invalid-parameter");
}

}  // TEST_SUITE
