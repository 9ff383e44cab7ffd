#include <doctest.h>

#include <filesystem>
#include <random>

#include "spontts/acoustic.hpp"
#include "spontts/pipeline.hpp"
#include "spontts/util.hpp"

using namespace spontts;
namespace fs = std::filesystem;
using nn::Mat;

namespace {

Mat randn(long r, long c, std::mt19937_64& g) {
  Mat m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = rng_normal(g);
  return m;
}

acoustic::ModelConfig tiny_config() {
  acoustic::ModelConfig mc;
  mc.dim = 8;
  mc.heads = 2;
  mc.encoder_blocks = 1;
  mc.decoder_blocks = 1;
  mc.ff_dim = 12;
  mc.vp_filter = 6;
  mc.history_hidden = 4;
  mc.history_len = 2;
  return mc;
}

acoustic::PhonemeVocab tiny_vocab() {
  acoustic::PhonemeVocab v;
  v.ids["p1"] = 3;
  v.ids["p2"] = 4;
  return v;
}

acoustic::ForwardInput tiny_input(std::mt19937_64& g) {
  acoustic::ForwardInput in;
  in.phoneme_ids = {3, 4, 3};
  in.phoneme_mask = {true, true, true};
  in.history = randn(3, embedding::kDim, g) * 0.1;
  in.conv_ids = {1, 3, 4, 2, 3, 4, 3, 2};
  in.conv_mask.assign(in.conv_ids.size(), true);
  return in;
}

}  // namespace

TEST_SUITE("acoustic") {

TEST_CASE("phoneme vocab reserves CLS/SEP and rejects unknowns") {
  auto v = tiny_vocab();
  CHECK(acoustic::PhonemeVocab::kCls == 1);
  CHECK(acoustic::PhonemeVocab::kSep == 2);
  CHECK(v.id_of("p1") == 3);
  CHECK(v.size() == 5);
  CHECK_THROWS_AS(v.id_of("nope"), ValidationError);
}

TEST_CASE("length regulation repeats rows for their durations") {
  std::mt19937_64 g(1);
  for (int it = 0; it < 1000; ++it) {
    const int n = 1 + static_cast<int>(rng_index(g, 8));
    Mat h = randn(n, 4, g);
    features::DurationSeq d(n);
    long total = 0;
    for (int i = 0; i < n; ++i) {
      d[i] = static_cast<int>(rng_index(g, 5));
      total += d[i];
    }
    Mat out = acoustic::length_regulate(h, d);
    REQUIRE(out.rows() == total);
    long cursor = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d[i]; ++j)
        CHECK((out.row(cursor++) - h.row(i)).norm() == 0.0);
  }
  CHECK_THROWS_AS(acoustic::length_regulate(Mat::Zero(2, 3), {1}),
                  ValidationError);
}

TEST_CASE("conversation sequence is CLS + per-utterance phonemes + SEP") {
  auto v = tiny_vocab();
  corpus::Utterance a, b;
  a.phonemes = {"p1", "p2"};
  b.phonemes = {"p2"};
  std::vector<const corpus::Utterance*> window{nullptr, &a, &b};
  auto [ids, mask] = acoustic::build_conversation_sequence(window, v);
  CHECK(ids == std::vector<int>{1, 3, 4, 2, 4, 2});
  CHECK(mask == std::vector<bool>(6, true));
}

TEST_CASE("conversation encoder demands the CLS slot") {
  acoustic::AcousticModel m(tiny_config(), tiny_vocab(), 3);
  CHECK_THROWS_AS(m.encode_conversation({3, 4}, {true, true}),
                  ValidationError);
}

TEST_CASE("cross attention ignores CLS keys and collapses to a single key") {
  std::mt19937_64 g(5);
  acoustic::AcousticModel m(tiny_config(), tiny_vocab(), 7);
  Mat h_u = randn(4, 8, g);
  Mat h_c = randn(5, 8, g);

  // exactly one non-CLS key unmasked: every query sees the same context
  std::vector<bool> mask{true, false, true, false, false};
  Mat out = m.linguistic_attend(h_u, h_c, mask);
  for (long i = 1; i < out.rows(); ++i)
    CHECK((out.row(i) - out.row(0)).norm() < 1e-12);
  for (const Mat& head : m.last_cross_attention()) {
    for (long i = 0; i < head.rows(); ++i) {
      CHECK(head(i, 0) == 0.0);  // CLS is summed in, never attended
      CHECK(head(i, 2) == 1.0);
      CHECK(head.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  // all keys open: rows still normalized, CLS still exactly zero
  std::vector<bool> open(5, true);
  m.linguistic_attend(h_u, h_c, open);
  for (const Mat& head : m.last_cross_attention())
    for (long i = 0; i < head.rows(); ++i) {
      CHECK(head(i, 0) == 0.0);
      CHECK(head.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("history encoder validates the window shape") {
  acoustic::AcousticModel m(tiny_config(), tiny_vocab(), 9);
  std::mt19937_64 g(6);
  CHECK_THROWS_AS(m.encode_history(randn(2, embedding::kDim, g)),
                  ValidationError);
  auto vec = m.encode_history(randn(3, embedding::kDim, g));
  CHECK(vec.size() == 8);
}

TEST_CASE("full training step passes a finite-difference check") {
  CHECK(pipeline::gradient_check("acoustic_total") < 1e-4);
}

TEST_CASE("per-head toy gradient checks") {
  CHECK(pipeline::gradient_check("linear") < 1e-8);
  CHECK(pipeline::gradient_check("label_mse") < 1e-4);
  CHECK(pipeline::gradient_check("mel_l1") < 1e-4);
}

TEST_CASE("duration and label decoding helpers") {
  CHECK(acoustic::AcousticModel::duration_frames_from_log(std::log(4.3)) == 4);
  CHECK(acoustic::AcousticModel::duration_frames_from_log(-3.0) == 1);
  CHECK(acoustic::AcousticModel::label_class_from_estimate(-0.7) == 0);
  CHECK(acoustic::AcousticModel::label_class_from_estimate(1.4) == 1);
  CHECK(acoustic::AcousticModel::label_class_from_estimate(7.2) == 3);
}

TEST_CASE("synthesize honors explicit labels and reports predicted ones") {
  std::mt19937_64 g(8);
  acoustic::AcousticModel m(tiny_config(), tiny_vocab(), 21);
  auto in = tiny_input(g);

  labels::PhonemeLabelSeq forced{0, 2, 1};
  auto res = m.synthesize(in, forced);
  CHECK(!res.labels_predicted);
  CHECK(res.applied_labels == forced);
  REQUIRE(res.durations.size() == 3);
  long total = 0;
  for (int d : res.durations) {
    CHECK(d >= 1);
    total += d;
  }
  CHECK(res.mel.rows() == total);
  CHECK(res.mel.cols() == features::kMelBins);

  auto pred = m.synthesize(in, std::nullopt);
  CHECK(pred.labels_predicted);
  CHECK(pred.applied_labels.size() == 3);

  labels::PhonemeLabelSeq wrong{0, 1};
  CHECK_THROWS_AS(m.synthesize(in, wrong), ValidationError);
}

TEST_CASE("explicit labels change the synthesized mel") {
  std::mt19937_64 g(9);
  acoustic::AcousticModel m(tiny_config(), tiny_vocab(), 23);
  auto in = tiny_input(g);
  auto a = m.synthesize(in, labels::PhonemeLabelSeq{0, 0, 0});
  auto b = m.synthesize(in, labels::PhonemeLabelSeq{0, 0, 3});
  const long shared = std::min(a.mel.rows(), b.mel.rows());
  CHECK((a.mel.topRows(shared) - b.mel.topRows(shared)).cwiseAbs().maxCoeff() >
        1e-8);
}

TEST_CASE("checkpoints round-trip parameters and metadata") {
  acoustic::AcousticModel m(tiny_config(), tiny_vocab(), 31);
  m.pitch_mean = 150.5;
  m.pitch_std = 40.25;
  m.energy_mean = 0.125;
  m.energy_std = 0.0625;
  m.step = 77;
  fs::path p = fs::temp_directory_path() / "spontts_acoustic_test.ckpt";
  acoustic::save_checkpoint(m, p);
  auto loaded = acoustic::load_checkpoint(p);
  CHECK(loaded->step == 77);
  CHECK(loaded->pitch_mean == 150.5);
  CHECK(loaded->energy_std == 0.0625);
  CHECK(loaded->vocab().ids == tiny_vocab().ids);

  auto pa = m.all_params();
  auto pb = loaded->all_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK((pa[i]->value - pb[i]->value).norm() == 0.0);
  }

  // same inputs, same outputs after reload
  std::mt19937_64 g(11);
  auto in = tiny_input(g);
  auto r1 = m.synthesize(in, std::nullopt);
  auto r2 = loaded->synthesize(in, std::nullopt);
  CHECK((r1.mel - r2.mel).norm() == 0.0);
}

TEST_CASE("corrupted checkpoints are rejected") {
  fs::path p = fs::temp_directory_path() / "spontts_acoustic_bad.ckpt";
  write_file_atomic(p, "definitely not a checkpoint");
  CHECK_THROWS_AS(acoustic::load_checkpoint(p), ValidationError);
}

TEST_CASE("decoder reset touches only the decoder group") {
  acoustic::AcousticModel m(tiny_config(), tiny_vocab(), 41);
  fs::path p = fs::temp_directory_path() / "spontts_acoustic_reset.ckpt";
  acoustic::save_checkpoint(m, p);
  auto fresh = acoustic::load_checkpoint(p);
  fresh->reset_decoder(999);

  auto ga = m.param_groups();
  auto gb = fresh->param_groups();
  REQUIRE(ga.size() == gb.size());
  REQUIRE(ga.size() == acoustic::group_names().size());
  bool decoder_differs = false;
  for (std::size_t gi = 0; gi < ga.size(); ++gi) {
    CHECK(ga[gi].name == acoustic::group_names()[gi]);
    REQUIRE(ga[gi].params.size() == gb[gi].params.size());
    for (std::size_t pi = 0; pi < ga[gi].params.size(); ++pi) {
      double diff =
          (ga[gi].params[pi]->value - gb[gi].params[pi]->value).norm();
      if (ga[gi].name == "decoder") {
        if (diff != 0.0) decoder_differs = true;
      } else {
        CHECK(diff == 0.0);
      }
    }
  }
  CHECK(decoder_differs);
}

TEST_CASE("forward_train validates target shapes") {
  std::mt19937_64 g(14);
  acoustic::AcousticModel m(tiny_config(), tiny_vocab(), 51);
  auto in = tiny_input(g);
  acoustic::TrainTargets t;
  t.durations = {1, 1};  // wrong length
  t.pitch = {0, 0};
  t.energy = {0, 0};
  t.phoneme_labels = {0, 0};
  t.mel = Mat::Zero(2, features::kMelBins);
  CHECK_THROWS_AS(m.forward_train(in, t), ValidationError);
}

}  // TEST_SUITE
