#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "odimo/dataset.hpp"
#include "odimo/ops.hpp"
#include "odimo/optim.hpp"
#include "odimo/search.hpp"
#include "test_util.hpp"

using namespace odimo;
namespace ot = odimo::testing;

namespace {

SearchOptions quick_opts(double lambda, Objective obj = Objective::Latency) {
  SearchOptions o;
  o.lambda = lambda;
  o.objective = obj;
  o.train.epochs = 3;
  o.train.patience = 10;
  o.train.batch_size = 16;
  o.train.lr_w = 0.02;
  o.train.lr_alpha = 0.05;
  return o;
}

}  // namespace

TEST_CASE("effective weights limit cases") {
  Rng rng(10);
  Tensor w0 = Tensor::randn({4, 3, 1, 1}, rng);
  Tensor w1 = Tensor::randn({4, 3, 1, 1}, rng);

  // one-hot rows pick one copy exactly
  Tensor onehot = Tensor::from_data({4, 2}, {1, 0, 0, 1, 1, 0, 0, 1});
  Tensor eff = effective_weights({w0, w1}, onehot);
  for (int64_t c = 0; c < 4; ++c) {
    const Tensor& src = (c % 2 == 0) ? w0 : w1;
    for (int64_t i = 0; i < 3; ++i)
      CHECK(eff.data()[static_cast<size_t>(c * 3 + i)] ==
            src.data()[static_cast<size_t>(c * 3 + i)]);
  }

  // uniform rows give the elementwise mean
  Tensor uni = Tensor::full({4, 2}, 0.5f);
  Tensor eff2 = effective_weights({w0, w1}, uni);
  for (size_t i = 0; i < eff2.data().size(); ++i)
    CHECK(eff2.data()[i] ==
          doctest::Approx(0.5 * (w0.data()[i] + w1.data()[i])).epsilon(1e-6));

  CHECK_THROWS_AS(effective_weights({w0, Tensor::randn({5, 3, 1, 1}, rng)}, uni), Error);
}

TEST_CASE("alpha gradient through effective weights matches finite differences") {
  Rng rng(11);
  Tensor w0 = Tensor::randn({3, 2, 1, 1}, rng);
  Tensor w1 = Tensor::randn({3, 2, 1, 1}, rng);
  Tensor alpha = Tensor::randn({3, 2}, rng, 0.0, 0.5, true);
  Tensor probe = Tensor::randn({3, 2, 1, 1}, rng);
  auto loss = [&]() {
    Tensor eff = effective_weights({w0, w1}, softmax_temp(alpha, 1.0));
    return sum(mul(eff, probe));
  };
  CHECK(ot::grad_check(loss, alpha, 1e-3, 1e-4, 1e-3).ok);
}

TEST_CASE("search loss at lambda=0 reduces to the task loss") {
  Rng rng(12);
  Dataset ds = gen_synthetic(3, 20, 8, rng);
  Network net = Network::build(ot::two_layer_cnn_desc(3), rng);
  SearchState st = init_search(std::move(net), ot::diana_accels(), quick_opts(0.0));
  st.model.calibrated = true;  // keep ranges at e^0 for this functional check

  auto [x, labels] = make_batch(ds, {0, 1, 2, 3});
  SearchLoss out = search_loss(st, x, labels);
  CHECK(out.loss.item() == doctest::Approx(out.task_loss.item()));

  // alpha gets gradient only through the task loss: the regularizer path
  // is scaled by lambda = 0
  for (auto& a : st.alpha) a.zero_grad();
  out.loss.backward();
  std::vector<real> g_task(st.alpha[0].grad());

  for (auto& a : st.alpha) a.zero_grad();
  SearchLoss out2 = search_loss(st, x, labels);
  out2.task_loss.backward();
  for (size_t i = 0; i < g_task.size(); ++i)
    CHECK(g_task[i] == doctest::Approx(st.alpha[0].grad()[i]).epsilon(1e-5));
}

TEST_CASE("channel conservation holds during search") {
  Rng rng(13);
  Network net = Network::build(ot::two_layer_cnn_desc(3), rng);
  SearchState st = init_search(std::move(net), ot::diana_accels(), quick_opts(1e-4));
  // perturb alphas, rows must still sum to C_out
  for (auto& a : st.alpha)
    for (auto& v : a.data()) v = static_cast<real>(rng.uniform(-2.0, 2.0));
  for (size_t l = 0; l < st.alpha.size(); ++l) {
    Tensor abar = softmax_temp(add(st.alpha[l], st.alpha_mask[l]), st.tau);
    Tensor counts = expected_channels(abar);
    double s = 0.0;
    for (real v : counts.data()) s += v;
    CHECK(std::abs(s - static_cast<double>(st.alpha[l].dim(0))) < 1e-4);
  }
}

TEST_CASE("masked accelerators get no mass, no gradient, never selected") {
  Rng rng(14);
  // depthwise layer: aimc masked
  NetworkDesc desc = ot::tiny_cnn_desc(2, 4);
  NodeDesc dw;
  dw.kind = NodeKind::Conv;
  dw.name = "dw";
  dw.inputs = {"conv1"};
  dw.out_channels = 4;
  dw.kernel = 3;
  dw.padding = 1;
  dw.depthwise = true;
  desc.nodes.insert(desc.nodes.begin() + 1, dw);
  desc.nodes[2].inputs = {"dw"};

  Network net = Network::build(desc, rng);
  SearchState st = init_search(std::move(net), ot::diana_accels(), quick_opts(1e-3));
  st.model.calibrated = true;

  // give the masked entry the numerically largest alpha
  Tensor& a_dw = st.alpha[1];
  for (int64_t c = 0; c < 4; ++c) a_dw.data()[static_cast<size_t>(c * 2 + 1)] = 50.0f;

  Tensor abar = softmax_temp(add(a_dw, st.alpha_mask[1]), st.tau);
  for (int64_t c = 0; c < 4; ++c)
    CHECK(abar.data()[static_cast<size_t>(c * 2 + 1)] == 0.0f);

  Dataset ds = gen_synthetic(2, 10, 8, rng);
  auto [x, labels] = make_batch(ds, {0, 1, 2, 3});
  SearchLoss out = search_loss(st, x, labels);
  for (auto& a : st.alpha) a.zero_grad();
  out.loss.backward();
  for (int64_t c = 0; c < 4; ++c)
    CHECK(a_dw.grad()[static_cast<size_t>(c * 2 + 1)] == 0.0f);

  MappingDecision d = discretize(st);
  for (int v : d.assignments[1]) CHECK(v == 0);  // digital despite larger alpha
}

TEST_CASE("discretize argmax and tie-breaking") {
  Rng rng(15);
  Network net = Network::build(ot::tiny_cnn_desc(2, 3), rng);
  SearchState st = init_search(std::move(net), ot::diana_accels(), quick_opts(0.0));
  Tensor& a = st.alpha[0];
  // rows: clear winner 0, clear winner 1, exact tie -> lower index
  a.data() = {2.0f, -1.0f, -0.5f, 0.5f, 0.25f, 0.25f};
  MappingDecision d = discretize(st);
  CHECK(d.assignments[0] == std::vector<int>{0, 1, 0});

  // argmax is invariant to shifting a whole row
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 2; ++i) a.data()[static_cast<size_t>(c * 2 + i)] += 7.5f;
  MappingDecision d2 = discretize(st);
  CHECK(d2.assignments == d.assignments);
}

TEST_CASE("regularizer gradient pushes channels toward the cheaper accelerator") {
  Rng rng(16);
  // single 1x1 conv layer, C_in=8, 4x4 output, 4 channels: all-digital
  // costs 64 cycles, any aimc use pays the 80-cycle aimc floor
  NetworkDesc d;
  d.name = "one";
  d.in_channels = 8;
  d.in_h = d.in_w = 4;
  d.num_classes = 4;
  d.nodes.push_back(ot::conv_node("conv1", "input", 4, 1));
  d.nodes.push_back(ot::simple_node(NodeKind::Gap, "pool", {"conv1"}));
  d.nodes.push_back(ot::simple_node(NodeKind::Fc, "fc", {"pool"}, 4));

  Network net = Network::build(d, rng);
  SearchState st = init_search(std::move(net), ot::diana_accels(), quick_opts(1.0));
  st.model.calibrated = true;

  Tensor x = Tensor::rand_uniform({2, 8, 4, 4}, rng, 0.0, 1.0);
  SearchLoss out = search_loss(st, x, {0, 1});
  for (auto& a : st.alpha) a.zero_grad();
  out.reg.backward();

  // at uniform alpha the aimc side is the bottleneck for conv1; gradient
  // ascent on alpha_digital relative to alpha_aimc lowers the cost
  const Tensor& a = st.alpha[0];
  for (int64_t c = 0; c < 4; ++c) {
    const real g_dig = a.grad()[static_cast<size_t>(c * 2 + 0)];
    const real g_aimc = a.grad()[static_cast<size_t>(c * 2 + 1)];
    CHECK(g_aimc > g_dig);  // descent moves mass off aimc, toward digital
  }
}

TEST_CASE("identical seeds give bitwise-identical alpha trajectories") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Dataset ds = gen_synthetic(3, 30, 8, rng);
    Rng init_rng = rng.child(1);
    Network net = Network::build(ot::two_layer_cnn_desc(3), init_rng);
    SearchState st = init_search(std::move(net), ot::diana_accels(), quick_opts(1e-4));
    Rng train_rng = rng.child(2);
    run_search(st, ds, train_rng);
    std::vector<std::vector<real>> alphas;
    for (auto& a : st.alpha) alphas.push_back(a.data());
    return alphas;
  };
  auto a1 = run(42);
  auto a2 = run(42);
  CHECK(a1 == a2);
  auto a3 = run(43);
  CHECK(a1 != a3);
}

TEST_CASE("search aborts with a diagnostic on divergence") {
  Rng rng(17);
  Dataset ds = gen_synthetic(2, 15, 8, rng);
  Network net = Network::build(ot::tiny_cnn_desc(2, 4), rng);
  SearchOptions o = quick_opts(0.0);
  // quantizers saturate weight blow-ups, so detonate the scale instead:
  // one Adam step sends e^s to inf and the next forward to NaN
  o.train.lr_w = 1e9;
  o.train.lr_scale = 1e12;
  o.train.epochs = 6;
  SearchState st = init_search(std::move(net), ot::diana_accels(), o);
  Rng train_rng(1);
  CHECK_THROWS_WITH_AS(run_search(st, ds, train_rng), doctest::Contains("diverged"), Error);
}

TEST_CASE("with one accelerator and lambda=0 the search is plain QAT") {
  const uint64_t seed = 33;
  AcceleratorSpec digital = ot::diana_accels()[0];

  // search path
  Rng rng_a(seed);
  Dataset ds_a = gen_synthetic(2, 40, 8, rng_a);
  Rng init_a = rng_a.child(1);
  Network net_a = Network::build(ot::tiny_cnn_desc(2, 4), init_a);
  SearchOptions opts = quick_opts(0.0);
  opts.train.epochs = 3;
  SearchState st = init_search(std::move(net_a), {digital}, opts);
  Rng train_a = rng_a.child(2);
  run_search(st, ds_a, train_a);

  // reference QAT: same seed stream, same primitives, independent loop
  Rng rng_b(seed);
  Dataset ds_b = gen_synthetic(2, 40, 8, rng_b);
  Rng init_b = rng_b.child(1);
  Network net_b = Network::build(ot::tiny_cnn_desc(2, 4), init_b);
  QuantizedModel qm = make_quantized(std::move(net_b), {digital});

  ForwardHooks hooks;
  hooks.layer_op = [&](int idx, const Tensor& x) {
    const auto& q = qm.net.quantizable();
    const int l = static_cast<int>(std::find(q.begin(), q.end(), idx) - q.begin());
    const auto& ns = qm.net.state(idx);
    const NodeDesc& nd = qm.net.desc().nodes[static_cast<size_t>(idx)];
    Tensor wq = fake_quantize_weights(ns.weight, qm.weight_quant[static_cast<size_t>(l)][0]);
    return nd.kind == NodeKind::Fc ? linear(x, wq, ns.bias)
                                   : conv2d(x, wq, ns.bias, nd.stride, nd.padding);
  };
  hooks.output_quant = [&](int idx, const Tensor& t) {
    return qm.act_quant[static_cast<size_t>(idx + 1)].apply(t, 8);
  };

  std::vector<Tensor> wparams;
  for (int idx : qm.net.quantizable()) {
    wparams.push_back(qm.net.state(idx).weight);
    wparams.push_back(qm.net.state(idx).bias);
  }
  Sgd sgd(wparams, opts.train.lr_w, opts.train.momentum);
  Adam adam_scale(qm.quant_params(), opts.train.lr_scale);
  // alpha is a single column of ones; its Adam never moves, but it must
  // consume no randomness either (it does not)
  std::vector<double> ref_losses;
  Rng train_b = rng_b.child(2);
  for (int epoch = 0; epoch < opts.train.epochs; ++epoch) {
    if (epoch == 0)
      for (auto& aq : qm.act_quant) aq.begin_calibration();
    std::vector<double> losses;
    for (const auto& batch : epoch_batches(ds_b, opts.train.batch_size, train_b)) {
      auto [x, labels] = make_batch(ds_b, batch);
      sgd.zero_grad();
      adam_scale.zero_grad();
      Tensor loss = cross_entropy(qm.net.forward(x, false, &hooks), labels);
      loss.backward();
      sgd.step();
      adam_scale.step();
      losses.push_back(loss.item());
    }
    if (epoch == 0) {
      for (auto& aq : qm.act_quant) aq.end_calibration();
      qm.calibrated = true;
    }
    double s = 0.0;
    for (double v : losses) s += v;
    ref_losses.push_back(s / static_cast<double>(losses.size()));
  }

  REQUIRE(st.fit.epoch_loss.size() >= ref_losses.size());
  for (size_t e = 0; e < ref_losses.size(); ++e) {
    const double rel = std::abs(st.fit.epoch_loss[e] - ref_losses[e]) /
                       std::max(1.0, std::abs(ref_losses[e]));
    CHECK(rel <= 1e-4);
  }
}

TEST_CASE("search space log-cardinality") {
  Rng rng(18);
  Network net = Network::build(ot::tiny_cnn_desc(2, 6), rng);
  // 6 conv channels + 2 fc channels, two accelerators -> 8*log10(2)
  CHECK(search_space_log10(net, ot::diana_accels()) ==
        doctest::Approx(8.0 * std::log10(2.0)));
}

TEST_CASE("search state round trips through its checkpoint") {
  namespace fs = std::filesystem;
  Rng rng(19);
  NetworkDesc desc = ot::two_layer_cnn_desc(3);
  Network net = Network::build(desc, rng);
  SearchState st = init_search(std::move(net), ot::diana_accels(), quick_opts(1e-4));
  for (auto& a : st.alpha)
    for (auto& v : a.data()) v = static_cast<real>(rng.uniform(-1.0, 1.0));
  st.model.calibrated = true;

  const auto dir = fs::temp_directory_path() / "odimo_search_test";
  fs::create_directories(dir);
  save_search_state(st, (dir / "s.odc").string());
  SearchState back = load_search_state((dir / "s.odc").string(), desc, ot::diana_accels(),
                                       quick_opts(1e-4));
  CHECK(back.model.calibrated);
  for (size_t l = 0; l < st.alpha.size(); ++l)
    CHECK(back.alpha[l].data() == st.alpha[l].data());
  CHECK(back.model.net.state(0).weight.data() == st.model.net.state(0).weight.data());
  fs::remove_all(dir);
}
