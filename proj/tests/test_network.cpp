#include <doctest.h>

#include <cmath>
#include <fstream>

#include "bevtrack/error.hpp"
#include "bevtrack/nn/network.hpp"
#include "bevtrack/nn/train.hpp"
#include "support/finite_diff.hpp"
#include "support/generators.hpp"
#include "support/scenes.hpp"
#include "support/temp_dir.hpp"

using namespace bevtrack;
using namespace bevtrack::nn;
using namespace bevtrack::testing;

namespace {

ModelConfig toy_config(int width, int height) {
  ModelConfig c;
  c.input_width = width;
  c.input_height = height;
  c.channels = {4, 8, 8};
  c.head_width = 6;
  return c;
}

Image random_image(Rng& rng, int w, int h) {
  Image img(w, h);
  for (auto& v : img.pixels.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return img;
}

// A bright rectangle on a dark background.
Image square_image(int w, int h, int x0, int y0, int size) {
  Image img(w, h, 0.1f);
  for (int c = 0; c < 3; ++c)
    for (int r = y0; r < y0 + size; ++r)
      for (int x = x0; x < x0 + size; ++x) img(c, r, x) = 0.9f;
  return img;
}

// One-object training sample on a w x h frame.
TrainingSample toy_sample(const Network& net, Rng& rng, int w, int h) {
  const auto& cfg = net.config();
  const Frame prev = blank_frame(w, h, {make_box(6, 5, 18, 21, 0, 1)}, 0);
  const Frame cur = blank_frame(w, h, {make_box(9, 6, 21, 22, 0, 1), make_box(22, 2, 30, 10, 1, 2)}, 1);
  SparseDepthMap depth_prev = full_depth(w, h, cfg.scale, 11.0);
  SparseDepthMap depth(cfg.output_rows(), cfg.output_cols(), cfg.scale);
  for (int r = 0; r < depth.rows(); ++r)
    for (int c = 0; c < depth.cols(); ++c)
      if (rng.coin(0.7)) {
        depth.values.at(r, c) = rng.uniform(5.0, 40.0);
        depth.valid.at(r, c) = 1;
      }
  TrainingSample s;
  s.targets = encode_targets(cur, prev, depth, &depth_prev, cfg.scale, cfg.num_classes);
  const std::vector<PriorObject> prior{{12, 13, 6, 8, 11.0, 1.0}};
  s.input = build_input(cfg, random_image(rng, w, h), random_image(rng, w, h),
                        render_prior_map(prior, cfg.output_rows(), cfg.output_cols(), cfg.scale));
  return s;
}

}  // namespace

TEST_CASE("forward contract") {
  SUBCASE("full-resolution default config") {
    const Model model = Model::build_toy_backbone(ModelConfig{}, 1);
    const Image zero(1280, 384);
    const NetworkOutputs out = model.forward(zero, zero, {});
    CHECK(out.heatmap.channels() == 2);
    CHECK(out.heatmap.rows() == 96);
    CHECK(out.heatmap.cols() == 320);
    CHECK(out.depth.rows() == 96);
    CHECK(out.depth.cols() == 320);
    CHECK(model.network().parameter_count() < 200000);
    for (const GridD* g : {&out.heatmap, &out.size, &out.offset, &out.displacement, &out.depth}) {
      CHECK(g->rows() == 96);
      CHECK(g->cols() == 320);
      for (double v : g->data()) REQUIRE(std::isfinite(v));
    }
    for (double v : out.heatmap.data()) REQUIRE((v >= kHeatmapClamp && v <= 1.0 - kHeatmapClamp));
    for (double v : out.depth.data()) REQUIRE(v > 0.0);
  }
  SUBCASE("toy size and determinism") {
    Rng rng(4);
    const ModelConfig cfg = toy_config(128, 96);
    const Model a = Model::build_toy_backbone(cfg, 9);
    const Model b = Model::build_toy_backbone(cfg, 9);
    CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin(), b.parameters().end()));
    const Model c = Model::build_toy_backbone(cfg, 10);
    CHECK_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
    const Image cur = random_image(rng, 128, 96), prev = random_image(rng, 128, 96);
    const NetworkOutputs o1 = a.forward(cur, prev, {});
    const NetworkOutputs o2 = a.forward(cur, prev, {});
    CHECK(o1.heatmap.rows() == 24);
    CHECK(o1.heatmap.cols() == 32);
    CHECK(o1.heatmap == o2.heatmap);
    CHECK(o1.depth == o2.depth);
    CHECK(o1.displacement == o2.displacement);
  }
  SUBCASE("head shapes for any valid size") {
    Rng rng(8);
    for (int i = 0; i < 10; ++i) {
      ModelConfig cfg = toy_config(4 * rng.integer(1, 24), 4 * rng.integer(1, 16));
      const Model m = Model::build_toy_backbone(cfg, 1);
      const Image img(cfg.input_width, cfg.input_height);
      const NetworkOutputs out = m.forward(img, img, {});
      for (const GridD* g : {&out.heatmap, &out.size, &out.offset, &out.displacement, &out.depth}) {
        CHECK(g->rows() == cfg.input_height / 4);
        CHECK(g->cols() == cfg.input_width / 4);
      }
    }
  }
  SUBCASE("contract errors name the tensor") {
    const Model m = Model::build_toy_backbone(toy_config(64, 32), 1);
    try {
      m.forward(Image(64, 32), Image(60, 32), {});
      FAIL("expected a contract error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("image_prev") != std::string::npos);
    }
    PriorMaps bad{GridD(1, 3, 3), GridD()};
    try {
      m.forward(Image(64, 32), Image(64, 32), bad);
      FAIL("expected a contract error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("prior_maps.heatmap") != std::string::npos);
    }
  }
  SUBCASE("configuration errors") {
    CHECK_THROWS_AS(Network{toy_config(66, 32)}, ConfigError);
    ModelConfig c = toy_config(64, 32);
    c.channels.clear();
    CHECK_THROWS_AS(Network{c}, ConfigError);
    c = toy_config(64, 32);
    c.scale = 3;
    CHECK_THROWS_AS(Network{c}, ConfigError);
  }
}

TEST_CASE("translation by R shifts the heatmap by one cell") {
  const ModelConfig cfg = toy_config(192, 128);
  const Model m = Model::build_toy_backbone(cfg, 21);
  const int margin = 10;  // cells, beyond the receptive field radius
  for (int shift_x : {0, 1})
    for (int shift_y : {0, 1}) {
      const Image a = square_image(192, 128, 88, 56, 12);
      const Image b = square_image(192, 128, 88 + 4 * shift_x, 56 + 4 * shift_y, 12);
      const NetworkOutputs oa = m.forward(a, a, {});
      const NetworkOutputs ob = m.forward(b, b, {});
      int best_r = -1, best_c = -1;
      double best = -1.0;
      for (int r = margin; r < oa.heatmap.rows() - margin - 1; ++r)
        for (int c = margin; c < oa.heatmap.cols() - margin - 1; ++c) {
          CHECK(ob.heatmap(0, r + shift_y, c + shift_x) == oa.heatmap(0, r, c));
          if (oa.heatmap(0, r, c) > best) {
            best = oa.heatmap(0, r, c);
            best_r = r;
            best_c = c;
          }
        }
      int arg_r = -1, arg_c = -1;
      best = -1.0;
      for (int r = margin + shift_y; r < ob.heatmap.rows() - margin - 1 + shift_y; ++r)
        for (int c = margin + shift_x; c < ob.heatmap.cols() - margin - 1 + shift_x; ++c)
          if (ob.heatmap(0, r, c) > best) {
            best = ob.heatmap(0, r, c);
            arg_r = r;
            arg_c = c;
          }
      CHECK(arg_r == best_r + shift_y);
      CHECK(arg_c == best_c + shift_x);
    }
}

TEST_CASE("parameter gradients match finite differences") {
  Rng rng(55);
  const ModelConfig cfg = toy_config(32, 32);  // 8 x 8 output cells
  const Network net(cfg);
  const TrainingSample sample = toy_sample(net, rng, 32, 32);
  TrainOptions options;
  options.weights = {1.0, 0.7, 0.3};
  const std::vector<double> params = net.initial_parameters(3);

  const ForwardTrace trace = net.forward_trace(params, sample.input);
  OutputGradients grads;
  evaluate_loss(trace.outputs, sample.targets, options, &grads);
  std::vector<double> analytic(params.size(), 0.0);
  net.backward(params, trace, grads, analytic);

  auto loss = [&](const std::vector<double>& p) {
    return evaluate_loss(net.forward(p, sample.input), sample.targets, options).total;
  };
  // A difference quotient over [x - h, x + h] only estimates the derivative
  // when no ReLU or L1 kink lies inside the interval.
  auto pattern = [&](const std::vector<double>& p) {
    const ForwardTrace t = net.forward_trace(p, sample.input);
    std::vector<bool> bits;
    for (const auto* branch : {&t.trunk, &t.detection, &t.depth})
      for (std::size_t k = 1; k < branch->size(); ++k)
        for (double v : (*branch)[k].data()) bits.push_back(v > 0.0);
    const auto& tg = sample.targets;
    for (int r = 0; r < tg.rows(); ++r)
      for (int c = 0; c < tg.cols(); ++c) {
        if (tg.center_mask.at(r, c))
          for (int k = 0; k < 2; ++k) {
            bits.push_back(t.outputs.size(k, r, c) > tg.size(k, r, c));
            bits.push_back(t.outputs.offset(k, r, c) > tg.subpixel_offset(k, r, c));
          }
        if (tg.displacement_mask.at(r, c))
          for (int k = 0; k < 3; ++k) bits.push_back(t.outputs.displacement(k, r, c) > tg.displacement(k, r, c));
        if (tg.depth.is_valid(r, c)) bits.push_back(t.outputs.depth.at(r, c) > tg.depth.depth(r, c));
      }
    return bits;
  };

  const double wide = 1e-3, narrow = 1e-6;
  double worst = 0.0;
  int smooth = 0, kinked = 0;
  std::vector<double> x = params;
  for (std::size_t i = 0; i < params.size(); i += 1 + static_cast<std::size_t>(rng.integer(0, 4))) {
    std::vector<double> lo = x, hi = x;
    lo[i] -= wide;
    hi[i] += wide;
    const bool flat = pattern(lo) == pattern(hi);
    const double numeric = central_difference(loss, x, i, flat ? wide : narrow);
    (flat ? smooth : kinked)++;
    const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
  }
  CAPTURE(smooth);
  CAPTURE(kinked);
  CHECK(smooth > 100);
  CHECK(worst < 1e-4);
}

TEST_CASE("training") {
  Rng rng(12);
  const ModelConfig cfg = toy_config(32, 32);
  const Network net(cfg);
  std::vector<TrainingSample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(toy_sample(net, rng, 32, 32));

  SUBCASE("learning rate 0 leaves parameters unchanged") {
    TrainOptions options;
    options.base_learning_rate = 0.0;
    TrainState state = TrainState::initial(net, 1, options);
    const auto before = state.params;
    train_step(net, state, batch, options);
    CHECK(state.params == before);
    CHECK(state.step == 1);
  }
  SUBCASE("exponential decay per epoch") {
    TrainOptions options;
    options.lr_decay = 0.9;
    options.steps_per_epoch = 5;
    CHECK(learning_rate_at(options, 0) == 1.25e-4);
    CHECK(learning_rate_at(options, 4) == 1.25e-4);
    CHECK(learning_rate_at(options, 5) == doctest::Approx(1.25e-4 * 0.9).epsilon(1e-14));
    CHECK(learning_rate_at(options, 37) == doctest::Approx(1.25e-4 * std::pow(0.9, 7)).epsilon(1e-14));
    TrainState state = TrainState::initial(net, 1, options);
    for (int i = 0; i < 5; ++i) train_step(net, state, std::span(batch).first(1), options);
    CHECK(state.learning_rate == doctest::Approx(1.25e-4 * 0.9).epsilon(1e-14));
  }
  SUBCASE("200 steps on a fixed batch lower the loss") {
    TrainOptions options;
    options.base_learning_rate = 1e-3;
    TrainState state = TrainState::initial(net, 2, options);
    const double initial = dataset_loss(net, state.params, batch, options).total;
    for (int i = 0; i < 200; ++i) train_step(net, state, batch, options);
    const double final_loss = dataset_loss(net, state.params, batch, options).total;
    CHECK(final_loss < initial);
    for (double p : state.params) REQUIRE(std::isfinite(p));
  }
  SUBCASE("non-finite loss names the component") {
    TrainOptions options;
    TrainState state = TrainState::initial(net, 1, options);
    std::vector<TrainingSample> broken = {batch[0]};
    broken[0].targets.depth.values.data()[0] = std::numeric_limits<double>::infinity();
    broken[0].targets.depth.valid.data()[0] = 1;
    try {
      train_step(net, state, broken, options);
      FAIL("expected a training error");
    } catch (const TrainingError& e) {
      CHECK(std::string(e.what()).find("L_depth") != std::string::npos);
    }
    CHECK_THROWS_AS(train_step(net, state, std::span<const TrainingSample>(), options), TrainingError);
  }
  SUBCASE("invalid options") {
    TrainOptions options;
    options.lr_decay = 0.0;
    CHECK_THROWS_AS(options.validate(), ConfigError);
    options = {};
    options.base_learning_rate = -1.0;
    CHECK_THROWS_AS(options.validate(), ConfigError);
  }
  SUBCASE("training is deterministic") {
    TrainOptions options;
    TrainState a = TrainState::initial(net, 4, options), b = TrainState::initial(net, 4, options);
    run_training(net, a, batch, options, 2, 6);
    run_training(net, b, batch, options, 2, 6);
    CHECK(a.params == b.params);
    CHECK(a.adam_v == b.adam_v);
  }
}

TEST_CASE("checkpoints") {
  TempDir dir("ckpt");
  ModelConfig cfg = toy_config(64, 32);
  cfg.prior_depth_input = true;
  cfg.context_layers = 2;
  const Network net(cfg);
  TrainOptions options;
  Rng rng(1);
  TrainState state = TrainState::initial(net, 77, options);
  for (auto& v : state.adam_m) v = rng.uniform(-1, 1);
  for (auto& v : state.adam_v) v = rng.uniform(0, 1);
  state.step = 123;
  state.learning_rate = 3.5e-5;

  const auto path = dir / "model.ckpt";
  save_checkpoint(path, cfg, state);
  const auto [cfg2, state2] = load_checkpoint(path);
  CHECK(cfg2 == cfg);
  CHECK(state2.params == state.params);
  CHECK(state2.adam_m == state.adam_m);
  CHECK(state2.adam_v == state.adam_v);
  CHECK(state2.step == 123);
  CHECK(state2.learning_rate == 3.5e-5);
  CHECK(state2.seed == 77);

  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  CHECK(bytes.substr(0, 8) == "BVTKCKPT");
  auto write = [&](const std::string& content) {
    std::ofstream os(dir / "bad.ckpt", std::ios::binary);
    os << content;
  };
  std::string wrong_version = bytes;
  wrong_version[8] = 2;
  write(wrong_version);
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), ConfigError);
  write(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), ParseError);
  write("not a checkpoint at all");
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), ParseError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}
