// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small MLPs built from the layer types in layers.hpp, trained end to end with
// any of the optimizer methods. The whole pipeline is templated on the compute
// type so F32 runs exercise the same code.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "gnlorp/data.hpp"
#include "gnlorp/errors.hpp"
#include "gnlorp/layers.hpp"
#include "gnlorp/linalg.hpp"
#include "gnlorp/memory_model.hpp"
#include "gnlorp/projection_optimizer.hpp"

namespace gnlorp {

enum class Nonlinearity { ReLU, Tanh, Identity };
enum class Head { SquaredError, Softmax };

inline std::string_view to_string(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::ReLU: return "ReLU";
    case Nonlinearity::Tanh: return "Tanh";
    case Nonlinearity::Identity: return "Identity";
  }
  return "?";
}

inline std::string_view to_string(Head h) { return h == Head::SquaredError ? "SquaredError" : "Softmax"; }

inline Nonlinearity parse_nonlinearity(std::string_view s) {
  for (auto n : {Nonlinearity::ReLU, Nonlinearity::Tanh, Nonlinearity::Identity})
    if (s == to_string(n)) return n;
  throw ConfigError("unknown nonlinearity '" + std::string(s) + "'");
}

inline Head parse_head(std::string_view s) {
  if (s == "SquaredError") return Head::SquaredError;
  if (s == "Softmax") return Head::Softmax;
  throw ConfigError("unknown head '" + std::string(s) + "'");
}

struct LayerDims {
  std::size_t in = 0;
  std::size_t out = 0;
  bool operator==(const LayerDims&) const = default;
};

struct ModelConfig {
  std::vector<LayerDims> layer_dims;  // 0 for the first `in` or last `out` means "from the data"
  Nonlinearity nonlinearity = Nonlinearity::Tanh;
  Head head = Head::SquaredError;
  std::size_t adapter_rank = 4;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::int64_t steps = 2000;
  std::int64_t record_every = 1;
  std::size_t batch_size = 0;  // 0 is full batch
};

inline void validate(const ModelConfig& c) {
  if (c.layer_dims.empty()) throw ConfigError("model.layer_dims needs at least one layer");
  for (std::size_t i = 0; i < c.layer_dims.size(); ++i) {
    const auto& d = c.layer_dims[i];
    if (d.in < 1 || d.out < 1) throw ConfigError("model.layer_dims[" + std::to_string(i) + "] has a zero dimension");
    if (i > 0 && c.layer_dims[i - 1].out != d.in) {
      throw ConfigError("model.layer_dims[" + std::to_string(i) + "].in = " + std::to_string(d.in) +
                        " does not match the previous out = " + std::to_string(c.layer_dims[i - 1].out));
    }
    if (c.adapter_rank < 1 || c.adapter_rank > std::min(d.in, d.out)) {
      throw ConfigError("model.adapter_rank " + std::to_string(c.adapter_rank) + " outside [1, " +
                        std::to_string(std::min(d.in, d.out)) + "] for layer " + std::to_string(i));
    }
  }
}

inline void validate(const RunConfig& r) {
  if (r.steps < 1) throw ConfigError("run.steps must be >= 1");
  if (r.record_every < 1) throw ConfigError("run.record_every must be >= 1");
}

/// Fills 0 placeholders in the first input and last output from the dataset.
inline ModelConfig resolve_dims(ModelConfig c, const Dataset& d) {
  if (c.layer_dims.empty()) return c;
  if (c.layer_dims.front().in == 0) c.layer_dims.front().in = d.input_dim();
  if (c.layer_dims.back().out == 0) c.layer_dims.back().out = d.output_dim();
  return c;
}

inline void require_head_matches(Head h, DatasetKind k) {
  const bool want_softmax = k != DatasetKind::SyntheticRegression;
  if (want_softmax != (h == Head::Softmax)) {
    throw ConfigError("model.head " + std::string(to_string(h)) + " does not fit data.kind " +
                      std::string(to_string(k)));
  }
}

// ---------------------------------------------------------------------------
// Model

template <std::floating_point T>
using AnyLayer = std::variant<DenseLinear<T>, LowRankLinear<T>, NormalizedLowRankLinear<T>>;

template <std::floating_point T>
using AnyGradients = std::variant<DenseGradients<T>, LowRankGradients<T>, LayerGradients<T>>;

template <std::floating_point T>
struct Model {
  ModelConfig cfg;
  Method method = Method::GradNormLoRP;
  std::vector<AnyLayer<T>> layers;
};

/// Frozen base weights are Gaussian with std 1/√in, drawn per layer from one
/// seeded stream; adapter seeds come from the same stream.
template <std::floating_point T>
Model<T> build_model(const ModelConfig& cfg, Method method = Method::GradNormLoRP, bool detach_norm = false) {
  validate(cfg);
  Model<T> model{cfg, method, {}};
  Rng rng(cfg.seed);
  for (const auto& d : cfg.layer_dims) {
    const BasicMatrix<T> w0 = gaussian_matrix<double>(d.out, d.in, 1.0 / std::sqrt(double(d.in)), rng).cast<T>();
    const std::uint64_t adapter_seed = rng();
    switch (method) {
      case Method::FullAdam:
      case Method::GaloreAdam: model.layers.emplace_back(DenseLinear<T>{w0}); break;
      case Method::LoraAdam: model.layers.emplace_back(init_lora_layer(w0, cfg.adapter_rank, adapter_seed)); break;
      case Method::DoraAdam:
      case Method::GradNormLoRP:
        model.layers.emplace_back(init_layer(w0, cfg.adapter_rank, adapter_seed, detach_norm));
        break;
    }
  }
  return model;
}

namespace detail {

template <typename T>
BasicMatrix<T> activate(BasicMatrix<T> z, Nonlinearity n) {
  switch (n) {
    case Nonlinearity::ReLU:
      for (auto& v : z.data()) v = std::max(v, T{0});
      break;
    case Nonlinearity::Tanh:
      for (auto& v : z.data()) v = std::tanh(v);
      break;
    case Nonlinearity::Identity: break;
  }
  return z;
}

/// dL/dz from dL/dh for h = φ(z).
template <typename T>
void activation_backward(BasicMatrix<T>& dh, const BasicMatrix<T>& z, Nonlinearity n) {
  auto g = dh.data();
  auto zz = z.data();
  switch (n) {
    case Nonlinearity::ReLU:
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(zz[i] > T{0})) g[i] = T{0};
      break;
    case Nonlinearity::Tanh:
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T t = std::tanh(zz[i]);
        g[i] *= T{1} - t * t;
      }
      break;
    case Nonlinearity::Identity: break;
  }
}

}  // namespace detail

template <std::floating_point T>
struct ForwardPass {
  std::vector<BasicMatrix<T>> inputs;  // ψ fed to each layer
  std::vector<BasicMatrix<T>> pre;     // layer outputs before the nonlinearity
  BasicMatrix<T> output;

  /// Elements held in cached layer outputs.
  std::size_t cached_elements() const noexcept {
    std::size_t n = 0;
    for (const auto& z : pre) n += z.size();
    return n;
  }
};

/// The nonlinearity follows every layer except the last; the head acts on the
/// last layer's raw output.
template <std::floating_point T>
ForwardPass<T> forward_pass(const Model<T>& model, const BasicMatrix<T>& x) {
  ForwardPass<T> fp;
  BasicMatrix<T> h = x;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    BasicMatrix<T> z = std::visit([&](const auto& l) { return forward(l, h); }, model.layers[i]);
    fp.inputs.push_back(std::move(h));
    h = i + 1 < model.layers.size() ? detail::activate(z, model.cfg.nonlinearity) : z;
    fp.pre.push_back(std::move(z));
  }
  fp.output = std::move(h);
  return fp;
}

template <std::floating_point T>
BasicMatrix<T> predict(const Model<T>& model, const BasicMatrix<T>& x) {
  return forward_pass(model, x).output;
}

template <std::floating_point T>
struct LossAndGrad {
  double loss = 0.0;
  BasicMatrix<T> dy;
};

/// Mean over the batch: ½‖y − t‖² per example, or softmax cross-entropy.
template <std::floating_point T>
LossAndGrad<T> loss_and_grad(Head head, const BasicMatrix<T>& y, const Dataset& d) {
  const std::size_t n = y.cols();
  LossAndGrad<T> out;
  out.dy = BasicMatrix<T>(y.rows(), n);
  const T inv_n = T(1) / T(n);
  double total = 0.0;
  if (head == Head::SquaredError) {
    if (d.targets.rows() != y.rows() || d.targets.cols() != n) throw ShapeError("loss: target shape");
    for (std::size_t i = 0; i < y.rows(); ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const T r = y(i, j) - T(d.targets(i, j));
        total += 0.5 * double(r) * double(r);
        out.dy(i, j) = r * inv_n;
      }
    }
  } else {
    if (d.labels.size() != n || d.classes != y.rows()) throw ShapeError("loss: label shape");
    for (std::size_t j = 0; j < n; ++j) {
      T mx = y(0, j);
      for (std::size_t i = 1; i < y.rows(); ++i) mx = std::max(mx, y(i, j));
      double z = 0.0;
      for (std::size_t i = 0; i < y.rows(); ++i) z += std::exp(double(y(i, j) - mx));
      const double log_z = std::log(z) + double(mx);
      total += log_z - double(y(d.labels[j], j));
      for (std::size_t i = 0; i < y.rows(); ++i) {
        const double p = std::exp(double(y(i, j)) - log_z);
        out.dy(i, j) = T((p - (i == d.labels[j] ? 1.0 : 0.0))) * inv_n;
      }
    }
  }
  out.loss = total / double(n);
  return out;
}

template <std::floating_point T>
std::vector<AnyGradients<T>> backward_pass(const Model<T>& model, const ForwardPass<T>& fp, BasicMatrix<T> dy) {
  std::vector<AnyGradients<T>> grads(model.layers.size());
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    if (i + 1 < model.layers.size()) detail::activation_backward(dy, fp.pre[i], model.cfg.nonlinearity);
    grads[i] = std::visit(
        [&](const auto& l) -> AnyGradients<T> { return backward(l, fp.inputs[i], dy); }, model.layers[i]);
    dy = std::visit([](const auto& g) { return g.d_input; }, grads[i]);
  }
  return grads;
}

struct Metrics {
  double loss = 0.0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double perplexity = std::numeric_limits<double>::quiet_NaN();
};

template <std::floating_point T>
Metrics evaluate(const Model<T>& model, const Dataset& data) {
  require_head_matches(model.cfg.head, data.kind);
  const BasicMatrix<T> y = predict(model, data.inputs.cast<T>());
  Metrics m;
  m.loss = loss_and_grad(model.cfg.head, y, data).loss;
  if (data.is_classification()) {
    std::size_t hits = 0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < y.rows(); ++i)
        if (y(i, j) > y(best, j)) best = i;
      hits += best == data.labels[j];
    }
    m.accuracy = double(hits) / double(y.cols());
  }
  if (data.kind == DatasetKind::CharLM) m.perplexity = std::exp(m.loss);
  return m;
}

/// Same network with every layer folded into one dense weight.
template <std::floating_point T>
Model<T> merged_model(const Model<T>& model) {
  Model<T> out{model.cfg, Method::FullAdam, {}};
  for (const auto& l : model.layers)
    out.layers.emplace_back(DenseLinear<T>{std::visit([](const auto& x) { return effective_weight(x); }, l)});
  return out;
}

template <std::floating_point T>
std::size_t parameter_count(const Model<T>& model) {
  std::size_t n = 0;
  for (const auto& l : model.layers) {
    n += std::visit(
        [](const auto& x) -> std::size_t {
          using L = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<L, DenseLinear<T>>) return x.w.size();
          else if constexpr (std::is_same_v<L, LowRankLinear<T>>) return x.w0.size() + x.i_adapter.size() + x.j_adapter.size();
          else return x.w0.size() + x.trainable_count();
        },
        l);
  }
  return n;
}

inline ArchSpec arch_of(const ModelConfig& cfg, const OptimizerConfig& opt) {
  ArchSpec a;
  for (const auto& d : cfg.layer_dims) a.layers.push_back({d.out, d.in});
  a.adapter_rank = cfg.adapter_rank;
  a.proj_rank = opt.proj_rank;
  a.mode = opt.mode;
  return a;
}

template <std::floating_point T>
constexpr Dtype dtype_of() {
  return sizeof(T) >= 8 ? Dtype::F64 : Dtype::F32;
}

// ---------------------------------------------------------------------------
// Training

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double grad_norm_i = 0.0;  // dense methods log ‖∂L/∂W‖ here
  double grad_norm_j = std::numeric_limits<double>::quiet_NaN();
  double stable_rank_zi = std::numeric_limits<double>::quiet_NaN();  // NaN when the gradient is zero
  double stable_rank_hj = std::numeric_limits<double>::quiet_NaN();
  bool refresh = false;
  std::size_t mem_bytes_est = 0;
};

struct RunReport {
  Method method = Method::GradNormLoRP;
  std::vector<StepRecord> records;
  Metrics final_metrics;
  double initial_loss = 0.0;
  double loss_delta_std = 0.0;  // std of per-step loss differences
  std::vector<std::int64_t> refresh_steps;
  double max_orthonormality_error = 0.0;
  std::size_t optimizer_state_elements = 0;
  std::size_t estimated_state_elements = 0;
  std::size_t projector_elements = 0;
  std::size_t estimated_projector_elements = 0;
  std::size_t optimizer_state_bytes = 0;
  std::size_t estimated_state_bytes = 0;
  std::size_t peak_cached_activations = 0;
  std::size_t estimated_activation_bytes = 0;
  std::size_t parameter_count = 0;
  double wall_seconds = 0.0;
};

template <std::floating_point T>
using AnyOptimizer = std::variant<DenseLayerOptimizer<T>, LowRankLayerOptimizer<T>, NormalizedLayerOptimizer<T>>;

template <std::floating_point T>
std::vector<AnyOptimizer<T>> make_optimizers(const Model<T>& model, const OptimizerConfig& cfg) {
  std::vector<AnyOptimizer<T>> out;
  OptimizerConfig c = cfg;
  c.method = model.method;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, DenseLinear<T>>) out.emplace_back(DenseLayerOptimizer<T>(l, c, model.cfg.adapter_rank, i));
          else if constexpr (std::is_same_v<L, LowRankLinear<T>>) out.emplace_back(LowRankLayerOptimizer<T>(l, c));
          else out.emplace_back(NormalizedLayerOptimizer<T>(l, c, i));
        },
        model.layers[i]);
  }
  return out;
}

namespace detail {

template <typename T>
double stable_rank_or_nan(const BasicMatrix<T>& g) {
  if (is_all_zero(g)) return std::numeric_limits<double>::quiet_NaN();
  return double(stable_rank(g.template cast<double>()));
}

template <typename T>
void fill_gradient_stats(StepRecord& r, const AnyGradients<T>& g) {
  std::visit(
      [&](const auto& x) {
        using G = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<G, DenseGradients<T>>) {
          r.grad_norm_i = double(frobenius_norm(x.d_w));
          r.stable_rank_zi = stable_rank_or_nan(x.d_w);
        } else {
          r.grad_norm_i = double(frobenius_norm(x.d_i));
          r.grad_norm_j = double(frobenius_norm(x.d_j));
          r.stable_rank_zi = stable_rank_or_nan(x.d_i);
          r.stable_rank_hj = stable_rank_or_nan(x.d_j);
        }
      },
      g);
}

template <typename T>
void apply_step(AnyOptimizer<T>& opt, AnyLayer<T>& layer, const AnyGradients<T>& g, std::int64_t t) {
  if (auto* o = std::get_if<NormalizedLayerOptimizer<T>>(&opt)) {
    o->step(std::get<NormalizedLowRankLinear<T>>(layer), std::get<LayerGradients<T>>(g), t);
  } else if (auto* o = std::get_if<DenseLayerOptimizer<T>>(&opt)) {
    o->step(std::get<DenseLinear<T>>(layer), std::get<DenseGradients<T>>(g), t);
  } else {
    std::get<LowRankLayerOptimizer<T>>(opt).step(std::get<LowRankLinear<T>>(layer), std::get<LowRankGradients<T>>(g), t);
  }
}

template <typename T>
std::vector<const AdamSlot<T>*> projected_slots(const AnyOptimizer<T>& opt) {
  std::vector<const AdamSlot<T>*> out;
  if (auto* o = std::get_if<NormalizedLayerOptimizer<T>>(&opt)) {
    if (o->i_slot().projected()) out = {&o->i_slot(), &o->j_slot()};
  } else if (auto* o = std::get_if<DenseLayerOptimizer<T>>(&opt)) {
    if (o->w_slot().projected()) out = {&o->w_slot()};
  }
  return out;
}

inline double stddev_of_deltas(const std::vector<double>& xs) {
  if (xs.size() < 3) return 0.0;
  std::vector<double> d(xs.size() - 1);
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) d[i] = xs[i + 1] - xs[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / double(d.size());
  double s = 0.0;
  for (double v : d) s += (v - mean) * (v - mean);
  return std::sqrt(s / double(d.size()));
}

}  // namespace detail

template <std::floating_point T>
struct TrainResult {
  Model<T> model;
  RunReport report;
};

/// Trains `model` in place. `t` runs over 0 … steps−1; a record is kept for
/// every t with t mod record_every == 0 and for the last step; each record
/// holds the loss and gradients observed before that step's update.
template <std::floating_point T>
RunReport train_model(Model<T>& model, const Dataset& data, const OptimizerConfig& opt_cfg, const RunConfig& run) {
  validate(run);
  validate(opt_cfg);
  validate(data);
  require_head_matches(model.cfg.head, data.kind);
  const auto clock0 = std::chrono::steady_clock::now();

  auto opts = make_optimizers(model, opt_cfg);
  const std::size_t n = data.size();
  const std::size_t batch = run.batch_size == 0 || run.batch_size >= n ? n : run.batch_size;

  RunReport rep;
  rep.method = model.method;
  rep.parameter_count = parameter_count(model);
  const ArchSpec arch = arch_of(model.cfg, opt_cfg);
  const auto est = estimate_memory(arch, model.method, dtype_of<T>(), opt_cfg.quantize);
  rep.estimated_state_elements = est.counts.optimizer;
  rep.estimated_state_bytes = est.optimizer_bytes;
  rep.estimated_projector_elements = est.counts.projector;
  rep.estimated_activation_bytes = activation_estimate(arch, batch, arch.layers.size(), dtype_of<T>());
  for (const auto& o : opts) {
    std::visit(
        [&](const auto& x) {
          rep.optimizer_state_elements += x.state_elements();
          rep.optimizer_state_bytes += x.state_bytes();
          rep.projector_elements += x.projector_elements();
        },
        o);
  }
  const std::size_t mem_est = est.total_bytes + rep.estimated_activation_bytes;

  // Full batch reuses one cast of the data; mini-batches walk a seeded
  // permutation, reshuffled at every epoch.
  const BasicMatrix<T> full_x = data.inputs.cast<T>();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(opt_cfg.seed ^ 0x5bd1e995ULL);
  std::size_t cursor = n;

  std::vector<double> losses;
  losses.reserve(std::size_t(run.steps));
  for (std::int64_t t = 0; t < run.steps; ++t) {
    Dataset batch_data;
    const Dataset* cur = &data;
    BasicMatrix<T> xb;
    if (batch < n) {
      if (cursor + batch > n) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      batch_data = select_columns(data, {order.begin() + std::ptrdiff_t(cursor), order.begin() + std::ptrdiff_t(cursor + batch)});
      cursor += batch;
      cur = &batch_data;
      xb = batch_data.inputs.cast<T>();
    }
    const BasicMatrix<T>& x = batch < n ? xb : full_x;

    std::vector<AnyGradients<T>> grads;
    double loss = 0.0;
    try {
      const ForwardPass<T> fp = forward_pass(model, x);
      rep.peak_cached_activations = std::max(rep.peak_cached_activations, fp.cached_elements());
      LossAndGrad<T> lg = loss_and_grad(model.cfg.head, fp.output, *cur);
      loss = lg.loss;
      if (!std::isfinite(loss)) throw DivergenceError("training loss is not finite", t);
      grads = backward_pass(model, fp, std::move(lg.dy));
      bool refreshed = false;
      for (std::size_t i = 0; i < model.layers.size(); ++i) {
        detail::apply_step(opts[i], model.layers[i], grads[i], t);
        for (const auto* s : detail::projected_slots(opts[i])) refreshed = refreshed || s->refreshed_last_step();
      }
      if (refreshed) rep.refresh_steps.push_back(t);
      if (t % run.record_every == 0 || t + 1 == run.steps) {
        StepRecord r;
        r.step = t;
        r.loss = loss;
        detail::fill_gradient_stats(r, grads.front());
        r.refresh = refreshed;
        r.mem_bytes_est = mem_est;
        rep.records.push_back(r);
      }
    } catch (const DomainError& e) {
      throw DivergenceError(std::string("non-finite values during training (") + e.what() + ")", t);
    }
    losses.push_back(loss);
  }
  for (const auto& o : opts)
    for (const auto* s : detail::projected_slots(o))
      for (const auto& ev : s->refresh_log()) rep.max_orthonormality_error = std::max(rep.max_orthonormality_error, ev.orthonormality_error);

  rep.initial_loss = losses.front();
  rep.loss_delta_std = detail::stddev_of_deltas(losses);
  rep.final_metrics = evaluate(model, data);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock0).count();
  return rep;
}

/// Builds the model for `model_cfg` (dims resolved against the data), trains
/// it and returns both.
template <std::floating_point T>
TrainResult<T> train(const ModelConfig& model_cfg, const Dataset& data, const OptimizerConfig& opt_cfg,
                     const RunConfig& run) {
  TrainResult<T> r{build_model<T>(resolve_dims(model_cfg, data), opt_cfg.method, opt_cfg.detach_norm), {}};
  r.report = train_model(r.model, data, opt_cfg, run);
  return r;
}

}  // namespace gnlorp
