#include "bevtrack/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"

namespace bevtrack::nn {

void TrainOptions::validate() const {
  if (!(base_learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
  weights.validate();
  focal.validate();
}

TrainState TrainState::initial(const Network& network, std::uint64_t seed, const TrainOptions& options) {
  TrainState s;
  s.params = network.initial_parameters(seed);
  s.adam_m.assign(s.params.size(), 0.0);
  s.adam_v.assign(s.params.size(), 0.0);
  s.seed = seed;
  s.learning_rate = options.base_learning_rate;
  return s;
}

double learning_rate_at(const TrainOptions& options, std::uint64_t step) {
  const auto epoch = static_cast<double>(step / static_cast<std::uint64_t>(options.steps_per_epoch));
  return options.base_learning_rate * std::pow(options.lr_decay, epoch);
}

LossBreakdown evaluate_loss(const NetworkOutputs& out, const TargetMaps& t, const TrainOptions& options,
                            OutputGradients* grads) {
  GridD g_focal, g_size, g_offset, g_disp, g_depth;
  const bool want = grads != nullptr;
  const double focal = focal_loss(out.heatmap, t.heatmap, options.focal, want ? &g_focal : nullptr);
  const double size = masked_l1_loss(out.size, t.size, t.center_mask, want ? &g_size : nullptr);
  const double offset = masked_l1_loss(out.offset, t.subpixel_offset, t.center_mask, want ? &g_offset : nullptr);
  const double disp = displacement_loss(out.displacement, t, want ? &g_disp : nullptr, options.displacement_z_weight);
  const double depth = depth_loss(out.depth, t.depth, want ? &g_depth : nullptr);

  const double objectness = focal + options.size_weight * size + options.offset_weight * offset;
  const LossBreakdown loss = total_loss(objectness, disp, depth, options.weights);

  if (grads) {
    const auto& w = options.weights;
    auto scaled = [](GridD g, double f) {
      for (auto& v : g.data()) v *= f;
      return g;
    };
    grads->heatmap = scaled(std::move(g_focal), w.alpha1);
    grads->size = scaled(std::move(g_size), w.alpha1 * options.size_weight);
    grads->offset = scaled(std::move(g_offset), w.alpha1 * options.offset_weight);
    grads->displacement = scaled(std::move(g_disp), w.alpha2);
    grads->depth = scaled(std::move(g_depth), w.alpha3);
  }
  return loss;
}

namespace {

void check_finite(const LossBreakdown& l) {
  if (!std::isfinite(l.objectness)) throw TrainingError("non-finite loss component L_obj");
  if (!std::isfinite(l.displacement)) throw TrainingError("non-finite loss component L_disp");
  if (!std::isfinite(l.depth)) throw TrainingError("non-finite loss component L_depth");
  if (!std::isfinite(l.total)) throw TrainingError("non-finite loss component L_total");
}

void accumulate(LossBreakdown& acc, const LossBreakdown& l, double f) {
  acc.objectness += f * l.objectness;
  acc.displacement += f * l.displacement;
  acc.depth += f * l.depth;
  acc.total += f * l.total;
}

}  // namespace

LossBreakdown train_step(const Network& network, TrainState& state, std::span<const TrainingSample> batch,
                         const TrainOptions& options) {
  if (batch.empty()) throw TrainingError("empty batch");
  const std::size_t n = network.parameter_count();
  if (state.params.size() != n || state.adam_m.size() != n || state.adam_v.size() != n)
    throw ContractError("train state does not match the network");

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  std::vector<double> grad(n, 0.0);
  LossBreakdown mean;
  for (const auto& sample : batch) {
    const ForwardTrace trace = network.forward_trace(state.params, sample.input);
    OutputGradients g;
    const LossBreakdown l = evaluate_loss(trace.outputs, sample.targets, options, &g);
    check_finite(l);
    accumulate(mean, l, inv_batch);
    for (GridD* grid : {&g.heatmap, &g.size, &g.offset, &g.displacement, &g.depth})
      for (auto& v : grid->data()) v *= inv_batch;
    network.backward(state.params, trace, g, grad);
  }

  const double lr = learning_rate_at(options, state.step);
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grad[i])) throw TrainingError("non-finite gradient at parameter " + std::to_string(i));
    state.adam_m[i] = options.beta1 * state.adam_m[i] + (1.0 - options.beta1) * grad[i];
    state.adam_v[i] = options.beta2 * state.adam_v[i] + (1.0 - options.beta2) * grad[i] * grad[i];
    if (lr == 0.0) continue;
    const double m_hat = state.adam_m[i] / c1;
    const double v_hat = state.adam_v[i] / c2;
    state.params[i] -= lr * m_hat / (std::sqrt(v_hat) + options.epsilon);
  }
  ++state.step;
  state.learning_rate = learning_rate_at(options, state.step);
  return mean;
}

LossBreakdown dataset_loss(const Network& network, std::span<const double> params,
                           std::span<const TrainingSample> samples, const TrainOptions& options) {
  LossBreakdown mean;
  if (samples.empty()) return mean;
  const double f = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) accumulate(mean, evaluate_loss(network.forward(params, s.input), s.targets, options), f);
  return mean;
}

void run_training(const Network& network, TrainState& state, std::span<const TrainingSample> samples,
                  const TrainOptions& options, int batch_size, int steps, const StepCallback& on_step) {
  options.validate();
  if (samples.empty()) throw TrainingError("no training samples");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const std::size_t b = std::min<std::size_t>(batch_size, samples.size());

  std::vector<std::size_t> order(samples.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  std::vector<TrainingSample> batch;
  for (int i = 0; i < steps; ++i) {
    batch.clear();
    while (batch.size() < b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(state.seed * 1000003ULL + epoch++);
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(samples[order[cursor++]]);
    }
    const LossBreakdown l = train_step(network, state, batch, options);
    if (on_step) on_step(state.step, l);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'B', 'V', 'T', 'K', 'C', 'K', 'P', 'T'};

void write_config(std::ostream& os, const ModelConfig& c) {
  write_le<std::int32_t>(os, c.input_width);
  write_le<std::int32_t>(os, c.input_height);
  write_le<std::int32_t>(os, c.scale);
  write_le<std::int32_t>(os, c.num_classes);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.channels.size()));
  for (int ch : c.channels) write_le<std::int32_t>(os, ch);
  write_le<std::int32_t>(os, c.context_layers);
  write_le<std::int32_t>(os, c.head_width);
  write_le<std::uint8_t>(os, c.use_prior_channels);
  write_le<std::uint8_t>(os, c.prior_track_depth);
  write_le<std::uint8_t>(os, c.prior_depth_input);
  write_le<std::uint8_t>(os, c.use_subpixel_offset);
  write_le<double>(os, c.init_depth);
  write_le<double>(os, c.init_half_extent);
}

template <typename T>
T take(std::istream& is, const char* field) {
  T v{};
  if (!read_le(is, v)) throw ParseError(std::string("checkpoint truncated at ") + field);
  return v;
}

ModelConfig read_config(std::istream& is) {
  ModelConfig c;
  c.input_width = take<std::int32_t>(is, "input_width");
  c.input_height = take<std::int32_t>(is, "input_height");
  c.scale = take<std::int32_t>(is, "scale");
  c.num_classes = take<std::int32_t>(is, "num_classes");
  const auto n = take<std::uint32_t>(is, "channels");
  if (n > 64) throw ParseError("checkpoint channel list is implausibly long");
  c.channels.resize(n);
  for (auto& ch : c.channels) ch = take<std::int32_t>(is, "channels");
  c.context_layers = take<std::int32_t>(is, "context_layers");
  c.head_width = take<std::int32_t>(is, "head_width");
  c.use_prior_channels = take<std::uint8_t>(is, "use_prior_channels") != 0;
  c.prior_track_depth = take<std::uint8_t>(is, "prior_track_depth") != 0;
  c.prior_depth_input = take<std::uint8_t>(is, "prior_depth_input") != 0;
  c.use_subpixel_offset = take<std::uint8_t>(is, "use_subpixel_offset") != 0;
  c.init_depth = take<double>(is, "init_depth");
  c.init_half_extent = take<double>(is, "init_half_extent");
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const TrainState& state) {
  AtomicFile out(path);
  {
    std::ofstream os(out.temp_path(), std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof kMagic);
    write_le<std::uint32_t>(os, kCheckpointVersion);
    write_config(os, config);
    write_le<std::uint64_t>(os, state.step);
    write_le<double>(os, state.learning_rate);
    write_le<std::uint64_t>(os, state.seed);
    write_le<std::uint64_t>(os, state.params.size());
    for (const auto* vec : {&state.params, &state.adam_m, &state.adam_v})
      for (double v : *vec) write_le<double>(os, v);
    if (!os) throw IoError("failed writing checkpoint " + path.string());
  }
  out.commit();
}

std::pair<ModelConfig, TrainState> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMagic))
    throw ParseError("not a checkpoint file: " + path.string());
  const auto version = take<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw ConfigError("incompatible checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  ModelConfig config = read_config(is);
  config.validate();
  TrainState state;
  state.step = take<std::uint64_t>(is, "step");
  state.learning_rate = take<double>(is, "learning_rate");
  state.seed = take<std::uint64_t>(is, "seed");
  const auto n = take<std::uint64_t>(is, "parameter_count");
  const Network net(config);
  if (n != net.parameter_count())
    throw ParseError("checkpoint parameter count " + std::to_string(n) + " does not match its architecture");
  for (auto* vec : {&state.params, &state.adam_m, &state.adam_v}) {
    vec->resize(n);
    for (auto& v : *vec) v = take<double>(is, "parameters");
  }
  return {config, state};
}

}  // namespace bevtrack::nn
