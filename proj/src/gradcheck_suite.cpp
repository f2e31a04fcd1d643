// SPDX-License-Identifier: Apache-2.0
#include "hindsight/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <memory>

#include "hindsight/pretext.hpp"

namespace hindsight {

namespace {

using TapeD = ad::Tape<double>;
using VarD = ad::Var<double>;

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Parameter<double>& random_param(ParameterStore<double>& store, const std::string& name, Shape shape, Rng& rng,
                                double lo = -1.0, double hi = 1.0) {
  Parameter<double>& p = store.add(name, shape);
  p.value = random_tensor(shape, rng, lo, hi);
  return p;
}

std::vector<Parameter<double>*> pointers(ParameterStore<double>& store) {
  std::vector<Parameter<double>*> out;
  for (auto& p : store) out.push_back(p.get());
  return out;
}

std::vector<Parameter<double>*> with_prefix(ParameterStore<double>& store, const std::string& prefix) {
  std::vector<Parameter<double>*> out;
  for (auto& p : store) {
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
  }
  return out;
}

/// Smooth waves plus pixel noise: no flat regions, so no two conv windows
/// see identical inputs.
ImageBuffer texture_image(std::size_t side, Rng& rng) {
  ImageBuffer img(side, side);
  for (std::size_t c = 0; c < 3; ++c) {
    const double fx = rng.uniform(0.05, 0.4), fy = rng.uniform(0.05, 0.4), phase = rng.uniform(0.0, 6.3);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double wave = 0.5 + 0.3 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
        img.at(c, y, x) = static_cast<float>(wave + rng.uniform(-0.2, 0.2));
      }
    }
  }
  return img;
}

/// One candidate: the probe, the elements it is checked against, and the
/// objects both refer to.
struct Fixture {
  Fixture(ScalarFn f, std::vector<Parameter<double>*> p, std::shared_ptr<void> s)
      : fn(std::move(f)), params(std::move(p)), state(std::move(s)) {}

  ScalarFn fn;
  std::vector<Parameter<double>*> params;
  std::shared_ptr<void> state;
  std::string rejection;  // non-empty when a structural screen discards it
  std::string note;       // reported with the row, does not discard
};

using FixtureBuilder = std::function<Fixture(Rng&)>;

/// Desk model with every parameter jittered by `rng`.
std::shared_ptr<HindSight<double>> jittered_model(const SuiteOptions& options, Rng& rng) {
  auto model = std::make_shared<HindSight<double>>(options.model);
  model->init(options.seed);
  jitter_parameters(model->parameters(), rng);
  return model;
}

/// Empty when every query-path weight of the aggregator reaches at least
/// one mixed gate unit (active for some but not all feature vectors of a
/// patch) in the evaluations below; otherwise names an inert weight.
/// `queries` holds one [P x d] query per aggregate call, or nullptr for
/// the zero query.
std::string gate_coverage(const AggregatorWeights<double>& w, const Tensor<double>& mfv, std::size_t k,
                          const std::vector<const Tensor<double>*>& queries) {
  const std::size_t d = w.w1->value.dim(0), dh = w.b2->value.size(), P = mfv.dim(0) / k;
  std::vector<char> unit_mixed(dh, 0), live(d, 0), covered(dh * d, 0);
  std::vector<double> eta(d);
  for (const Tensor<double>* q : queries) {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t c = 0; c < d; ++c) {
        double z = w.b1->value[c];
        if (q) {
          for (std::size_t t = 0; t < d; ++t) z += w.w1->value[c * d + t] * (*q)[p * d + t];
        }
        eta[c] = z > 0.0 ? z : 0.0;
        if (eta[c] > 0.0) live[c] = 1;
      }
      for (std::size_t i = 0; i < dh; ++i) {
        double shared = w.b2->value[i];
        for (std::size_t c = 0; c < d; ++c) shared += w.w2_gq->value[i * d + c] * eta[c];
        std::size_t active = 0;
        for (std::size_t j = 0; j < k; ++j) {
          double z = shared;
          for (std::size_t t = 0; t < d; ++t) z += w.w2_fv->value[i * d + t] * mfv[(p * k + j) * d + t];
          active += z > 0.0 ? 1 : 0;
        }
        if (active == 0 || active == k) continue;
        unit_mixed[i] = 1;
        for (std::size_t c = 0; c < d; ++c) {
          if (eta[c] > 0.0) covered[i * d + c] = 1;
        }
      }
    }
  }
  for (std::size_t i = 0; i < dh; ++i) {
    if (!unit_mixed[i]) return "gate unit " + std::to_string(i) + " is never mixed";
    for (std::size_t c = 0; c < d; ++c) {
      if (live[c] && !covered[i * d + c]) {
        return "query weight (" + std::to_string(i) + ", " + std::to_string(c) + ") only meets unmixed gate units";
      }
    }
  }
  return {};
}

/// gate_coverage over every aggregate call made by `model.encode`.
std::string encode_gate_coverage(const HindSight<double>& model, const PatchSet& patches) {
  TapeD tape(false);
  const EncodeResult<double> r = model.encode(tape, patches);
  const FeatureAggregator<double>& agg = model.aggregator();
  std::vector<Tensor<double>> queries;
  VarD nodes = ad::add(agg.aggregate(r.mfv, std::nullopt).afv, model.pos_encoder().encode(tape, patches.meta));
  for (std::size_t i = 0; i < model.config().N; ++i) {
    const GraphLayerWeights<double>& w = model.graph().layer(i);
    if (w.use_aggregator) queries.push_back(w.norm1.apply(ad::add(nodes, mha(nodes, w.attn))).value());
    nodes = graph_layer(nodes, r.mfv, w, &agg);
  }
  std::vector<const Tensor<double>*> q{nullptr};
  for (const Tensor<double>& t : queries) q.push_back(&t);
  return gate_coverage(agg.weights(), r.mfv.value(), agg.k(), q);
}

SuiteRow run_row(const std::string& name, double tolerance, const FixtureBuilder& build, const Rng& stream,
                 const SuiteOptions& options, const GradCheckOptions& gc) {
  SuiteRow row;
  row.component = name;
  row.tolerance = tolerance;
  for (std::size_t c = 0; c < options.max_fixtures; ++c) {
    Rng rng = stream.fork(c);
    Fixture fx = build(rng);
    row.fixture = c;
    if (!fx.rejection.empty()) {
      ++row.fixtures_rejected;
      row.rejection = fx.rejection;
      continue;
    }
    row.result = grad_check(fx.fn, fx.params, gc);
    row.note = fx.note;
    if (row.result.finite && row.result.decision_flips > 0) {
      ++row.fixtures_rejected;
      row.rejection = "perturbing " + row.result.first_flip_param + "[" +
                      std::to_string(row.result.first_flip_index) + "] crosses a ReLU or max-pool boundary";
      continue;
    }
    return row;
  }
  row.fixture_found = false;
  return row;
}

}  // namespace

ModelConfig desk_model_config() {
  ModelConfig c;
  c.mode = GridMode::Static;
  c.k = 2;
  c.H = 8;
  c.d_model = 16;
  c.channels = 4;
  c.N = 1;
  c.heads = 2;
  c.d_ff = 32;
  c.agg_period = 1;
  c.decoder_layers = 1;
  return c;
}

void jitter_parameters(ParameterStore<double>& store, Rng& rng, double amplitude) {
  for (auto& p : store) {
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] += rng.uniform(-amplitude, amplitude);
  }
}

std::vector<SuiteRow> run_gradcheck_suite(const SuiteOptions& options) {
  GradCheckOptions gc;
  gc.step = options.step;
  gc.corrupt_analytic = options.corrupt_analytic;
  const Rng root(options.seed);
  const ModelConfig& mc = options.model;
  const std::size_t d = mc.d_model, k = static_cast<std::size_t>(mc.k);

  std::vector<SuiteRow> rows;
  std::uint64_t stream = 0;
  auto add = [&](const std::string& name, double tol, const FixtureBuilder& build) {
    rows.push_back(run_row(name, tol, build, root.fork(++stream), options, gc));
  };

  add("matmul", kOpTolerance, [](Rng& rng) {
    auto s = std::make_shared<ParameterStore<double>>();
    auto& a = random_param(*s, "a", {3, 4}, rng);
    auto& b = random_param(*s, "b", {4, 5}, rng);
    auto target = std::make_shared<Tensor<double>>(random_tensor({3, 5}, rng));
    return Fixture{[&a, &b, target](TapeD& t) { return ad::mse(ad::matmul(t.parameter(a), t.parameter(b)), *target); },
                   pointers(*s), s};
  });
  add("linear+relu", kOpTolerance, [](Rng& rng) {
    auto s = std::make_shared<ParameterStore<double>>();
    auto& x = random_param(*s, "x", {4, 5}, rng);
    auto& w = random_param(*s, "w", {3, 5}, rng);
    auto& b = random_param(*s, "b", {3}, rng);
    auto target = std::make_shared<Tensor<double>>(random_tensor({4, 3}, rng));
    return Fixture{[&x, &w, &b, target](TapeD& t) {
                     return ad::mse(ad::relu(ad::linear(t.parameter(x), t.parameter(w), VarD(t.parameter(b)))),
                                    *target);
                   },
                   pointers(*s), s};
  });
  add("conv2d_valid", kOpTolerance, [](Rng& rng) {
    auto s = std::make_shared<ParameterStore<double>>();
    auto& in = random_param(*s, "input", {2, 7, 7}, rng);
    auto& kern = random_param(*s, "kernels", {3, 2, 3, 3}, rng);
    auto& b = random_param(*s, "bias", {3}, rng);
    auto target = std::make_shared<Tensor<double>>(random_tensor({3, 5, 5}, rng));
    return Fixture{[&in, &kern, &b, target](TapeD& t) {
                     return ad::mse(ad::conv2d_valid(t.parameter(in), t.parameter(kern), t.parameter(b)), *target);
                   },
                   pointers(*s), s};
  });
  add("maxpool2", kOpTolerance, [](Rng& rng) {
    auto s = std::make_shared<ParameterStore<double>>();
    auto& in = random_param(*s, "input", {2, 6, 6}, rng);
    auto target = std::make_shared<Tensor<double>>(random_tensor({2, 3, 3}, rng));
    return Fixture{[&in, target](TapeD& t) { return ad::mse(ad::maxpool2(t.parameter(in)), *target); }, pointers(*s),
                   s};
  });
  add("softmax_rows", kOpTolerance, [](Rng& rng) {
    auto s = std::make_shared<ParameterStore<double>>();
    auto& x = random_param(*s, "x", {3, 5}, rng, -2.0, 2.0);
    auto target = std::make_shared<Tensor<double>>(random_tensor({3, 5}, rng, 0.0, 1.0));
    return Fixture{[&x, target](TapeD& t) { return ad::mse(ad::softmax_rows(t.parameter(x)), *target); },
                   pointers(*s), s};
  });
  add("layer_norm_rows", kOpTolerance, [](Rng& rng) {
    auto s = std::make_shared<ParameterStore<double>>();
    auto& x = random_param(*s, "x", {3, 6}, rng);
    auto& g = random_param(*s, "gain", {6}, rng, 0.5, 1.5);
    auto& b = random_param(*s, "shift", {6}, rng);
    auto target = std::make_shared<Tensor<double>>(random_tensor({3, 6}, rng));
    return Fixture{[&x, &g, &b, target](TapeD& t) {
                     return ad::mse(ad::layer_norm_rows(t.parameter(x), t.parameter(g), t.parameter(b)), *target);
                   },
                   pointers(*s), s};
  });

  add("attention", kCompositeTolerance, [&](Rng& rng) {
    struct State {
      std::shared_ptr<HindSight<double>> model;
      ParameterStore<double> inputs;
      Tensor<double> target;
    };
    auto st = std::make_shared<State>();
    st->model = jittered_model(options, rng);
    auto& nodes = random_param(st->inputs, "nodes", {5, d}, rng);
    st->target = random_tensor({5, d}, rng);
    const auto& w = st->model->graph().layer(0).attn;
    std::vector<Parameter<double>*> params = pointers(st->inputs);
    for (auto* p : {w.wq, w.bq, w.wk, w.wv, w.bv, w.wo, w.bo}) params.push_back(p);
    State* raw = st.get();
    return Fixture{[raw, &nodes, &w](TapeD& t) { return ad::mse(mha(t.parameter(nodes), w), raw->target); }, params,
                   st};
  });
  add("extractor", kCompositeTolerance, [&](Rng& rng) {
    struct State {
      std::shared_ptr<HindSight<double>> model;
      std::vector<Tensor<double>> patches;
      Tensor<double> target;
    };
    auto st = std::make_shared<State>();
    st->model = jittered_model(options, rng);
    for (int i = 0; i < 2; ++i) st->patches.push_back(random_tensor({3, mc.H, mc.H}, rng, 0.0, 1.0));
    st->target = random_tensor({2 * k, d}, rng);
    State* raw = st.get();
    return Fixture{[raw](TapeD& t) { return ad::mse(raw->model->extractor().extract_mfv(t, raw->patches), raw->target); },
                   with_prefix(st->model->parameters(), "extractor."), st};
  });
  add("aggregator", kCompositeTolerance, [&](Rng& rng) {
    constexpr std::size_t kPatches = 64;
    struct State {
      std::shared_ptr<HindSight<double>> model;
      Tensor<double> mfv, gq;
    };
    auto st = std::make_shared<State>();
    st->model = jittered_model(options, rng);
    st->mfv = random_tensor({kPatches * k, d}, rng);
    st->gq = random_tensor({kPatches, d}, rng);
    State* raw = st.get();
    Fixture fx{[raw](TapeD& t) {
                 const FeatureAggregator<double>& agg = raw->model->aggregator();
                 const VarD m = t.constant(raw->mfv);
                 AggregateResult<double> initial = agg.aggregate(m, std::nullopt);
                 AggregateResult<double> queried = agg.aggregate(m, t.constant(raw->gq));
                 return ad::add(ad::add(*initial.divergence, ad::sum(initial.afv)), ad::sum(queried.afv));
               },
               with_prefix(st->model->parameters(), "aggregator."), st};
    fx.rejection = gate_coverage(st->model->aggregator().weights(), st->mfv, k, {nullptr, &st->gq});
    return fx;
  });
  for (EncodingVariant v : {EncodingVariant::Trainable, EncodingVariant::TrainablePeriodic}) {
    add("pos_encoder." + to_string(v), kOpTolerance, [&, v](Rng& rng) {
      struct State {
        ParameterStore<double> store;
        std::unique_ptr<PosScaleEncoder<double>> encoder;
        std::vector<PatchMeta> meta;
        Tensor<double> target;
      };
      auto st = std::make_shared<State>();
      st->encoder = std::make_unique<PosScaleEncoder<double>>(EncoderConfig{v, d, 1.0}, st->store);
      st->encoder->init(rng);
      jitter_parameters(st->store, rng);
      const StaticGrid grid(64, 64, 3);
      for (int level = 1; level <= 3; ++level) {
        for (std::size_t r = 0; r < StaticGrid::cells_per_side(level); ++r) {
          for (std::size_t c = 0; c < StaticGrid::cells_per_side(level); ++c) st->meta.push_back(grid.meta(level, r, c));
        }
      }
      st->target = random_tensor({st->meta.size(), d}, rng);
      State* raw = st.get();
      return Fixture{[raw](TapeD& t) { return ad::mse(raw->encoder->encode(t, raw->meta), raw->target); },
                     pointers(st->store), st};
    });
  }
  add("graph_layer", kCompositeTolerance, [&](Rng& rng) {
    struct State {
      std::shared_ptr<HindSight<double>> model;
      ParameterStore<double> inputs;
      Tensor<double> mfv, target;
      GraphLayerWeights<double> weights;
    };
    auto st = std::make_shared<State>();
    st->model = jittered_model(options, rng);
    auto& nodes = random_param(st->inputs, "nodes", {4, d}, rng);
    st->mfv = random_tensor({4 * k, d}, rng);
    st->target = random_tensor({4, d}, rng);
    st->weights = st->model->graph().layer(0);
    st->weights.use_aggregator = true;
    std::vector<Parameter<double>*> params = pointers(st->inputs);
    for (auto* p : with_prefix(st->model->parameters(), "graph.0.")) params.push_back(p);
    State* raw = st.get();
    return Fixture{[raw, &nodes](TapeD& t) {
                     return ad::mse(graph_layer(t.parameter(nodes), t.constant(raw->mfv), raw->weights,
                                                &raw->model->aggregator()),
                                    raw->target);
                   },
                   params, st};
  });
  add("encode", kCompositeTolerance, [&](Rng& rng) {
    struct State {
      std::shared_ptr<HindSight<double>> model;
      PatchSet patches;
    };
    auto st = std::make_shared<State>();
    st->model = jittered_model(options, rng);
    st->patches = generate_patches(texture_image(options.image_side, rng), mc.grid());
    std::vector<Parameter<double>*> params;
    for (auto& p : st->model->parameters()) {
      if (p->name.rfind("decoder.", 0) != 0) params.push_back(p.get());
    }
    State* raw = st.get();
    Fixture fx{[raw](TapeD& t) { return ad::sum(raw->model->encode(t, raw->patches).nodes); }, params, st};
    fx.note = encode_gate_coverage(*st->model, st->patches);
    return fx;
  });
  add("pretext_step", kEndToEndTolerance, [&](Rng& rng) {
    struct State {
      std::shared_ptr<HindSight<double>> model;
      PretextSample sample;
    };
    auto st = std::make_shared<State>();
    st->model = jittered_model(options, rng);
    st->sample = prepare_sample(mc, texture_image(options.image_side, rng), 0.25, rng);
    State* raw = st.get();
    Fixture fx{[raw](TapeD& t) { return pretext_loss(t, *raw->model, raw->sample, 0.1); },
               pointers(st->model->parameters()), st};
    fx.note = encode_gate_coverage(*st->model, st->sample.patches);
    return fx;
  });
  return rows;
}

}  // namespace hindsight
