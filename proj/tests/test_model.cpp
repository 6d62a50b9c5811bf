#include <doctest.h>

#include <cmath>
#include <random>

#include "fd_oracle.hpp"
#include "pinnsformer/model.hpp"

using namespace pinnsformer;
using pinnsformer::testing::relative_error;

namespace {

Values random_values(Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Values v(n);
  for (Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

ModelSpec small_pinnsformer(int k = 5) {
  ModelSpec spec = ModelSpec::defaults(Architecture::pinnsformer);
  spec.k = k;
  spec.embed_dim = 8;
  spec.feedforward_width = 16;
  spec.output_widths = {16};
  return spec;
}

struct Built {
  ParamStore store;
  std::unique_ptr<Network> net;
};

Built build(const ModelSpec& spec, std::uint64_t seed, Graph* graph = nullptr) {
  Built b{init_parameters(spec, seed), nullptr};
  ParamBinder binder(b.store, graph);
  b.net = build_network(spec, binder);
  return b;
}

}  // namespace

TEST_CASE("pseudo sequence: worked example") {
  const DiffTensor p({1, 2}, Values{{0.5, 0.1}});
  const PseudoSequenceBatch seq = generate_pseudo_sequence(p, 3, 0.01);
  const DiffTensor s = seq.stacked();
  REQUIRE(s.shape() == Shape{1, 3, 2});
  for (Index j = 0; j < 3; ++j) CHECK(s.at({0, j, 0}) == 0.5);
  CHECK(s.at({0, 0, 1}) == 0.1);
  CHECK(s.at({0, 1, 1}) == doctest::Approx(0.11).epsilon(1e-15));
  CHECK(s.at({0, 2, 1}) == doctest::Approx(0.12).epsilon(1e-15));
}

TEST_CASE("pseudo sequence: k = 1 and random-batch invariants") {
  std::mt19937_64 rng(1);
  const DiffTensor p({2, 3}, random_values(6, rng));
  const DiffTensor one = generate_pseudo_sequence(p, 1, 0.1).stacked();
  CHECK(one.shape() == Shape{2, 1, 3});
  CHECK((one.values() == p.values()).all());

  const DiffTensor p2({7, 3}, random_values(21, rng));
  const double dt = 1e-3;
  const DiffTensor s = generate_pseudo_sequence(p2, 6, dt).stacked();
  for (Index b = 0; b < 7; ++b) {
    for (Index c = 0; c < 3; ++c) CHECK(s.at({b, 0, c}) == p2.at({b, c}));
    for (Index j = 1; j < 6; ++j) {
      CHECK(s.at({b, j, 0}) == p2.at({b, 0}));
      CHECK(s.at({b, j, 1}) == p2.at({b, 1}));
      CHECK(s.at({b, j, 2}) - s.at({b, j - 1, 2}) == doctest::Approx(dt).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(generate_pseudo_sequence(p, 0, 0.1), InvalidK);
  CHECK_THROWS_AS(generate_pseudo_sequence(p, 3, 0.0), InvalidStep);
  CHECK_THROWS_AS(generate_pseudo_sequence(p, 3, -1e-3), InvalidStep);
}

TEST_CASE("mixer: identity pass-through, shape and per-step loop") {
  LinearLayer id;
  id.weight = DiffTensor({2, 2}, Values{{1, 0, 0, 1}});
  id.bias = DiffTensor::zeros({2});
  std::mt19937_64 rng(2);
  const DiffTensor p({4, 2}, random_values(8, rng));
  const PseudoSequenceBatch seq = generate_pseudo_sequence(p, 5, 0.01);
  CHECK((mixer_forward(id, seq).values() == seq.stacked().values()).all());

  ParamStore store;
  ParamInitializer init(store, 3);
  const LinearLayer mixer = LinearLayer::create(init, "mixer", 2, 32);
  const DiffTensor out = mixer_forward(mixer, seq);
  REQUIRE(out.shape() == Shape{4, 5, 32});
  double worst = 0.0;
  const DiffTensor stacked = seq.stacked();
  for (Index j = 0; j < 5; ++j) {
    const DiffTensor step = reshape(slice(stacked, 1, j, 1), {4, 2});
    const DiffTensor expected = linear_forward(mixer, step);
    for (Index b = 0; b < 4; ++b) {
      for (Index c = 0; c < 32; ++c) worst = std::max(worst, std::abs(out.at({b, j, c}) - expected.at({b, c})));
    }
  }
  CHECK(worst == 0.0);

  const PseudoSequenceBatch wrong = generate_pseudo_sequence(DiffTensor::zeros({4, 3}), 5, 0.01);
  CHECK_THROWS_AS(mixer_forward(mixer, wrong), IncompatibleShapes);
}

TEST_CASE("pinnsformer_forward: shape, determinism, extract_solution") {
  const ModelSpec spec = small_pinnsformer(4);
  const Built a = build(spec, 7);
  const auto& model = dynamic_cast<const PinnsFormer&>(*a.net);
  std::mt19937_64 rng(4);
  const DiffTensor p({6, 2}, random_values(12, rng));
  const DiffTensor out = pinnsformer_forward(model, p);
  REQUIRE(out.shape() == Shape{6, 4, 1});
  const Built b = build(spec, 7);
  CHECK((pinnsformer_forward(dynamic_cast<const PinnsFormer&>(*b.net), p).values() == out.values()).all());

  const DiffTensor u = extract_solution(out);
  REQUIRE(u.shape() == Shape{6, 1});
  for (Index i = 0; i < 6; ++i) CHECK(u.at({i, 0}) == out.at({i, 0, 0}));

  // Evaluating one point alone gives the same step-0 value as in the batch.
  const DiffTensor single = extract_solution(pinnsformer_forward(model, slice(p, 0, 3, 1)));
  CHECK(single.item() == doctest::Approx(u.at({3, 0})).epsilon(1e-14));

  const DiffTensor seq({1, 3, 1}, Values{{1, 2, 3}});
  CHECK(extract_solution(seq).item() == 1.0);
  const DiffTensor k1({2, 1, 1}, Values{{4, 5}});
  CHECK((extract_solution(k1).values() == k1.values()).all());
}

// Attention mixes the steps, so the derivative with respect to the time leaf
// of step j is that of the whole sequence sum.
TEST_CASE("pinnsformer: per-step time derivative matches finite differences") {
  const ModelSpec spec = small_pinnsformer(3);
  Graph graph;
  const Built m = build(spec, 8);
  std::mt19937_64 rng(5);
  const DiffTensor p({4, 2}, random_values(8, rng));
  const PseudoSequenceBatch seq = generate_pseudo_sequence(p, spec.k, spec.dt, &graph);
  const DiffTensor out = m.net->forward(seq.coordinates);
  const std::vector<DiffTensor> g = grad(sum(out), seq.coordinates, true);
  REQUIRE(g[1].shape() == Shape{4, 3, 1});

  const double h = 1e-5;
  for (Index b = 0; b < 4; ++b) {
    for (Index j = 0; j < 3; ++j) {
      auto eval = [&](double shift) {
        Values t = seq.coordinates[1].values();
        t[b * 3 + j] += shift;
        const DiffTensor o = m.net->forward({seq.coordinates[0].detach(), DiffTensor({4, 3, 1}, t)});
        double total = 0.0;
        for (Index i = 0; i < 3; ++i) total += o.at({b, i, 0});
        return total;
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      CHECK(relative_error(g[1].at({b, j, 0}), fd) <= 1e-4);
      CHECK(g[0].at({b, j, 0}) != 0.0);
      CHECK(g[1].at({b, j, 0}) != 0.0);
    }
  }
}

TEST_CASE("baselines: zero weights, first-layer sine, errors") {
  ModelSpec spec = ModelSpec::defaults(Architecture::pinn_mlp);
  spec.hidden_width = 16;
  ParamStore store = init_parameters(spec, 1);
  store.assign(Eigen::VectorXd::Zero(store.total_size()));
  {
    ParamBinder binder(store, nullptr);
    const auto net = build_network(spec, binder);
    std::mt19937_64 rng(6);
    CHECK((baseline_forward(*net, DiffTensor({5, 2}, random_values(10, rng))).values() == 0.0).all());
  }

  // FLS with zero first-layer bias at x = 0: the sine layer outputs zeros, so
  // the network output is the same as feeding zeros into layer two.
  ModelSpec fls = ModelSpec::defaults(Architecture::fls);
  fls.hidden_width = 16;
  ParamStore fstore = init_parameters(fls, 2);
  ParamBinder fbinder(fstore, nullptr);
  const auto fnet = build_network(fls, fbinder);
  const DiffTensor out = baseline_forward(*fnet, DiffTensor::zeros({1, 2}));
  LinearLayer second;
  second.weight = DiffTensor(fstore.at("mlp.linear1.weight").shape, fstore.at("mlp.linear1.weight").values.array());
  second.bias = DiffTensor(fstore.at("mlp.linear1.bias").shape, fstore.at("mlp.linear1.bias").values.array());
  LinearLayer third;
  third.weight = DiffTensor(fstore.at("mlp.linear2.weight").shape, fstore.at("mlp.linear2.weight").values.array());
  third.bias = DiffTensor(fstore.at("mlp.linear2.bias").shape, fstore.at("mlp.linear2.bias").values.array());
  LinearLayer last;
  last.weight = DiffTensor(fstore.at("mlp.linear3.weight").shape, fstore.at("mlp.linear3.weight").values.array());
  last.bias = DiffTensor(fstore.at("mlp.linear3.bias").shape, fstore.at("mlp.linear3.bias").values.array());
  const DiffTensor h = tanh(linear_forward(third, tanh(linear_forward(second, DiffTensor::zeros({1, 16})))));
  CHECK(out.item() == linear_forward(last, h).item());

  CHECK_THROWS_AS(parse_architecture("lstm"), UnknownArchitecture);
  CHECK(parse_architecture("qres") == Architecture::qres);
  const Built pf = build(small_pinnsformer(), 1);
  CHECK_THROWS_AS(baseline_forward(*pf.net, DiffTensor::zeros({1, 2})), UnknownArchitecture);
}

TEST_CASE("qres block against a hand computation") {
  ModelSpec spec = ModelSpec::defaults(Architecture::qres);
  spec.hidden_width = 3;
  spec.hidden_layers = 1;
  const ParamStore store = init_parameters(spec, 4);
  ParamBinder binder(store, nullptr);
  const auto net = build_network(spec, binder);
  const double x = 0.3, t = -0.7;
  const Eigen::VectorXd w1 = store.at("qres.block0.first.weight").values;
  const Eigen::VectorXd w2 = store.at("qres.block0.second.weight").values;
  const Eigen::VectorXd wo = store.at("qres.out.weight").values;
  double expected = store.at("qres.out.bias").values[0];
  for (int r = 0; r < 3; ++r) {
    const double a = w1[2 * r] * x + w1[2 * r + 1] * t;
    const double b = w2[2 * r] * x + w2[2 * r + 1] * t;
    expected += wo[r] / (1.0 + std::exp(-(a * b + a)));
  }
  CHECK(baseline_forward(*net, DiffTensor({1, 2}, Values{{x, t}})).item() == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("parameter counts match the reference budgets within 10%") {
  struct Case {
    Architecture arch;
    double reference;
  };
  for (const Case c : {Case{Architecture::pinnsformer, 454e3}, Case{Architecture::pinn_mlp, 527e3},
                       Case{Architecture::fls, 527e3}, Case{Architecture::qres, 397e3}}) {
    const Index n = init_parameters(ModelSpec::defaults(c.arch), 0).total_size();
    INFO(to_string(c.arch), " has ", n, " parameters");
    CHECK(std::abs(static_cast<double>(n) - c.reference) <= 0.1 * c.reference);
  }
}

TEST_CASE("model spec validation") {
  ModelSpec spec = small_pinnsformer();
  spec.k = 0;
  CHECK_THROWS_AS(spec.validate(), InvalidK);
  spec = small_pinnsformer();
  spec.dt = 0;
  CHECK_THROWS_AS(spec.validate(), InvalidStep);
  spec = small_pinnsformer();
  spec.heads = 3;
  CHECK_THROWS_AS(spec.validate(), ModelError);
}
