#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include <unistd.h>

#include "darc/darc.hpp"
#include "oracles.hpp"

namespace {

darc::FormatErrorKind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    darc::decode_bundle(bytes);
  } catch (const darc::FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return darc::FormatErrorKind::kIo;
}

darc::EmbeddingBundle handmade_bundle() {
  darc::EmbeddingBundle b;
  b.n_samples = 3;
  b.img_tokens = 1;
  b.img_dim = 2;
  b.txt_tokens = 2;
  b.txt_dim = 1;
  b.tasks = {{"hate", 2}, {"stance", 3}};
  b.image = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f};
  b.text = {-1.0f, -2.0f, -3.0f, -4.0f, -5.0f, -6.0f};
  b.labels = {0, 2, 1, darc::kMissingLabel, 1, 0};
  return b;
}

darc::EmbeddingBundle labeled_bundle(const std::vector<int>& labels, std::uint32_t n_classes) {
  darc::EmbeddingBundle b;
  b.n_samples = static_cast<std::uint32_t>(labels.size());
  b.img_dim = b.txt_dim = 1;
  b.tasks = {{"task", n_classes}};
  b.image.assign(labels.size(), 0.0f);
  b.text.assign(labels.size(), 0.0f);
  b.labels.assign(labels.begin(), labels.end());
  return b;
}

void append_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

}  // namespace

TEST(Bundle, EmptyBundleRoundTrips) {
  darc::EmbeddingBundle b;
  b.img_dim = b.txt_dim = 768;
  b.tasks = {{"hate", 2}};
  const auto bytes = darc::encode_bundle(b);
  EXPECT_EQ(darc::decode_bundle(bytes), b);
  EXPECT_EQ(darc::encode_bundle(darc::decode_bundle(bytes)), bytes);
}

TEST(Bundle, HandmadeBundleMatchesConstructionAndLayout) {
  const auto b = handmade_bundle();
  const auto bytes = darc::encode_bundle(b);
  const auto back = darc::decode_bundle(bytes);
  EXPECT_EQ(back.n_samples, 3u);
  EXPECT_EQ(back.tasks[1].name, "stance");
  EXPECT_EQ(back.label(1, 1), darc::kMissingLabel);
  EXPECT_EQ(back.label(2, 1), 0);
  EXPECT_EQ(back.text[5], -6.0f);
  EXPECT_EQ(back, b);

  std::vector<std::uint8_t> expected{'D', 'E', 'B', '1', 1, 0};
  for (std::uint32_t v : {3u, 1u, 2u, 2u, 1u, 2u}) append_u32(expected, v);
  for (auto [name, k] : {std::pair<std::string, std::uint32_t>{"hate", 2}, {"stance", 3}}) {
    expected.push_back(static_cast<std::uint8_t>(name.size()));
    expected.push_back(0);
    expected.insert(expected.end(), name.begin(), name.end());
    append_u32(expected, k);
  }
  for (float f : b.image) append_u32(expected, std::bit_cast<std::uint32_t>(f));
  for (float f : b.text) append_u32(expected, std::bit_cast<std::uint32_t>(f));
  for (auto y : b.labels) append_u32(expected, static_cast<std::uint32_t>(y));
  EXPECT_EQ(bytes, expected);
}

TEST(Bundle, LargeRandomBundleIsByteIdenticalAfterRoundTrip) {
  darc::SynthParams p;
  p.n_samples = 1000;
  p.img_dim = 32;
  p.txt_dim = 24;
  p.tokens = 2;
  p.seed = 17;
  const auto b = darc::synth_generate(p);
  const auto path = std::filesystem::temp_directory_path() / ("darc_bundle_" + std::to_string(::getpid()) + ".deb");
  darc::write_bundle(b, path.string());
  const auto bytes = darc::io::read_file(path.string());
  const auto back = darc::read_bundle(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back, b);
  EXPECT_EQ(darc::encode_bundle(back), bytes);
}

TEST(Bundle, BadMagicTruncationAndLabelRangeAreDistinct) {
  const auto good = darc::encode_bundle(handmade_bundle());
  using K = darc::FormatErrorKind;
  auto magic = good;
  magic[3] = '2';
  EXPECT_EQ(decode_kind(magic), K::kBadMagic);
  for (std::size_t cut : {std::size_t{0}, std::size_t{2}, std::size_t{10}, good.size() - 1}) {
    auto t = good;
    t.resize(cut);
    EXPECT_EQ(decode_kind(t), K::kTruncated) << "cut at " << cut;
  }
  auto label = good;
  label[label.size() - 4] = 5;  // last label of the stance task becomes 5
  EXPECT_EQ(decode_kind(label), K::kLabelOutOfRange);
  auto trailing = good;
  trailing.push_back(1);
  EXPECT_EQ(decode_kind(trailing), K::kTrailingBytes);
  auto version = good;
  version[4] = 2;
  EXPECT_EQ(decode_kind(version), K::kUnsupportedVersion);
}

TEST(Bundle, EncodingRejectsInconsistentArrays) {
  auto b = handmade_bundle();
  b.image.pop_back();
  EXPECT_THROW(darc::encode_bundle(b), darc::FormatError);
  b = handmade_bundle();
  b.text[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(darc::encode_bundle(b), darc::FormatError);
}

TEST(Bundle, TaskLookupByNameOrIndex) {
  const auto b = handmade_bundle();
  EXPECT_EQ(b.task_index("STANCE"), 1u);
  EXPECT_EQ(b.task_index("0"), 0u);
  EXPECT_THROW(b.task_index("humor"), darc::ConfigError);
}

TEST(Split, ExactDivisibilityGivesFiveOfEachClass) {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i % 2);
  const auto b = labeled_bundle(labels, 2);
  const double fr[] = {0.9, 0.1};
  const auto plan = darc::stratified_split(b, 0, fr, 1);
  ASSERT_EQ(plan.val.size(), 10u);
  int ones = 0;
  for (auto i : plan.val) ones += labels[i];
  EXPECT_EQ(ones, 5);
  EXPECT_EQ(plan.train.size(), 90u);
}

TEST(Split, SingleClassDatasetIsRejected) {
  const auto b = labeled_bundle(std::vector<int>(20, 0), 2);
  const double fr[] = {0.9, 0.1};
  EXPECT_THROW(darc::stratified_split(b, 0, fr, 0), darc::ConfigError);
}

TEST(Split, FractionsMustSumToOne) {
  const auto b = labeled_bundle({0, 1, 0, 1}, 2);
  const double fr[] = {0.5, 0.6};
  EXPECT_THROW(darc::stratified_split(b, 0, fr, 0), darc::ConfigError);
}

TEST(Split, HateCountsKeepClassProportionsWithinOneSample) {
  std::vector<int> labels(2313, 0);
  labels.insert(labels.end(), 2243, 1);
  std::mt19937_64 rng(5);
  std::shuffle(labels.begin(), labels.end(), rng);
  const auto b = labeled_bundle(labels, 2);
  const double fr[] = {0.9, 0.1};
  const auto plan = darc::stratified_split(b, 0, fr, 42);
  const double counts[2] = {2313, 2243};
  for (const auto* split : {&plan.train, &plan.val}) {
    const double frac = split == &plan.train ? 0.9 : 0.1;
    double per[2] = {0, 0};
    for (auto i : *split) per[labels[i]] += 1;
    for (int c = 0; c < 2; ++c) EXPECT_LE(std::abs(per[c] - frac * counts[c]), 1.0);
  }
}

TEST(Split, PropertiesOverRandomDatasets) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint32_t k = 2 + rng() % 3;
    const std::size_t n = 30 + rng() % 300;
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i < 3 * k ? static_cast<int>(i % k) : static_cast<int>(rng() % (k + 1)) - 1;
    const auto b = labeled_bundle(labels, k);
    const double a = 0.5 + 0.4 * std::uniform_real_distribution<double>(0, 1)(rng);
    const double fr[] = {a, (1 - a) / 2, (1 - a) / 2};
    const auto seed = rng();
    const auto plan = darc::stratified_split(b, 0, fr, seed);
    const auto again = darc::stratified_split(b, 0, fr, seed);
    EXPECT_EQ(plan.train, again.train);
    EXPECT_EQ(plan.val, again.val);
    EXPECT_EQ(plan.test, again.test);

    std::set<std::size_t> seen;
    for (const auto* s : {&plan.train, &plan.val, &plan.test})
      for (auto i : *s) EXPECT_TRUE(seen.insert(i).second) << "index in two splits";
    std::size_t labeled = 0;
    for (int y : labels) labeled += y != darc::kMissingLabel;
    EXPECT_EQ(seen.size(), labeled);
    for (auto i : seen) EXPECT_NE(labels[i], darc::kMissingLabel);

    for (std::uint32_t c = 0; c < k; ++c) {
      double total = 0;
      for (int y : labels) total += y == static_cast<int>(c);
      const std::vector<std::size_t>* splits[3] = {&plan.train, &plan.val, &plan.test};
      for (int s = 0; s < 3; ++s) {
        double per = 0;
        for (auto i : *splits[s]) per += labels[i] == static_cast<int>(c);
        EXPECT_LE(std::abs(per - fr[s] * total), 1.0);
      }
    }
  }
}

TEST(Synth, IsDeterministicPerSeed) {
  darc::SynthParams p;
  p.n_samples = 200;
  p.img_dim = p.txt_dim = 16;
  p.seed = 99;
  EXPECT_EQ(darc::encode_bundle(darc::synth_generate(p)), darc::encode_bundle(darc::synth_generate(p)));
  auto q = p;
  q.seed = 100;
  EXPECT_NE(darc::encode_bundle(darc::synth_generate(p)), darc::encode_bundle(darc::synth_generate(q)));
}

TEST(Synth, HatePriorsWithinTwoPercent) {
  darc::SynthParams p;
  p.n_samples = 1000;
  p.img_dim = p.txt_dim = 8;
  const auto b = darc::synth_generate(p);
  double hate = 0;
  for (auto y : b.labels) hate += y;
  EXPECT_NEAR(1.0 - hate / 1000.0, 0.4923, 0.02);
  EXPECT_NEAR(hate / 1000.0, 0.5077, 0.02);
}

TEST(Synth, HumorPriorsMatchTablePercentages) {
  const auto priors = darc::find_task_spec("humor").priors();
  EXPECT_NEAR(priors[0], 0.3172, 5e-5);
  EXPECT_NEAR(priors[1], 0.6828, 5e-5);
  darc::SynthParams p;
  p.task_name = "humor";
  p.n_samples = 4656;
  p.img_dim = p.txt_dim = 4;
  const auto b = darc::synth_generate(p);
  double humor = 0;
  for (auto y : b.labels) humor += y;
  EXPECT_EQ(humor, 3179);
}

TEST(Synth, PriorFidelityPassesChiSquare) {
  const double chi2_crit[] = {0, 6.635, 9.210, 11.345};
  std::mt19937_64 rng(77);
  for (const auto& task : darc::reference_tasks()) {
    for (int trial = 0; trial < 5; ++trial) {
      darc::SynthParams p;
      p.task_name = task.name;
      p.n_samples = 1000 + rng() % 2000;
      p.img_dim = p.txt_dim = 2;
      p.seed = rng();
      const auto b = darc::synth_generate(p);
      const auto priors = task.priors();
      std::vector<double> counts(priors.size(), 0.0);
      for (auto y : b.labels) counts[static_cast<std::size_t>(y)] += 1;
      double chi2 = 0;
      for (std::size_t c = 0; c < priors.size(); ++c) {
        const double e = priors[c] * p.n_samples;
        chi2 += (counts[c] - e) * (counts[c] - e) / e;
      }
      EXPECT_LT(chi2, chi2_crit[priors.size() - 1]) << task.name;
    }
  }
}

TEST(Synth, SeparationFiveIsLinearlySeparable) {
  darc::SynthParams p;
  p.n_samples = 2000;
  p.separation = 5.0;
  p.seed = 3;
  const auto b = darc::synth_generate(p);
  const double fr[] = {0.5, 0.5};
  const auto plan = darc::stratified_split(b, 0, fr, 1);
  const auto scores = oracle::logistic_probe(b, plan.train, plan.val, 0);
  std::vector<int> y;
  for (auto i : plan.val) y.push_back(b.label(i, 0));
  EXPECT_GE(oracle::pair_count_auroc(scores, y), 0.99);
}

TEST(Synth, SeparationZeroClassesShareOneDistribution) {
  darc::SynthParams p;
  p.n_samples = 4000;
  p.img_dim = p.txt_dim = 4;
  p.separation = 0.0;
  p.seed = 12;
  const auto b = darc::synth_generate(p);
  double mean[2][4] = {}, n[2] = {};
  for (std::size_t i = 0; i < b.n_samples; ++i) {
    const int y = b.label(i, 0);
    n[y] += 1;
    for (int j = 0; j < 4; ++j) mean[y][j] += b.image[i * 4 + j];
  }
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(mean[0][j] / n[0] - mean[1][j] / n[1], 0.0, 0.15);
}

TEST(Synth, RejectsBadPriorsAndNegativeSeparation) {
  darc::SynthParams p;
  p.img_dim = p.txt_dim = 4;
  p.class_priors = {0.5, 0.6};
  EXPECT_THROW(darc::synth_generate(p), darc::ConfigError);
  p.class_priors = {0.5, 0.5 + 1e-12};
  EXPECT_NO_THROW(darc::synth_generate(p));
  p.class_priors = {1.0};
  EXPECT_THROW(darc::synth_generate(p), darc::ConfigError);
  p.class_priors.clear();
  p.separation = -1.0;
  EXPECT_THROW(darc::synth_generate(p), darc::ConfigError);
}
