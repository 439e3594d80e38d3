#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "odimo/ops.hpp"
#include "odimo/optim.hpp"
#include "odimo/rng.hpp"
#include "odimo/tensor.hpp"
#include "odimo/tensor_io.hpp"
#include "test_util.hpp"

using namespace odimo;
namespace ot = odimo::testing;

namespace {

Tensor randt(Shape shape, Rng& rng, bool rg = false) {
  return Tensor::randn(std::move(shape), rng, 0.0, 1.0, rg);
}

std::vector<double> as_double(const Tensor& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

}  // namespace

TEST_CASE("conv2d matches hand values") {
  // all-ones 3x3 against all-ones 3x3 kernel collapses to a sum of nine ones
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0));

  // identity 1x1 kernel passes the input through
  Rng rng(42);
  Tensor xr = randt({2, 1, 4, 4}, rng);
  Tensor wid = Tensor::full({1, 1, 1, 1}, 1.0f);
  Tensor y2 = conv2d(xr, wid, Tensor::zeros({1}), 1, 0);
  for (size_t i = 0; i < xr.data().size(); ++i)
    CHECK(y2.data()[i] == doctest::Approx(xr.data()[i]));
}

TEST_CASE("conv2d matches six-nested-loop reference") {
  Rng rng(7);
  Tensor x = randt({2, 3, 5, 5}, rng);
  Tensor w = randt({4, 3, 3, 3}, rng);
  Tensor b = randt({4}, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tensor y = conv2d(x, w, b, stride, pad);
      auto ref = ot::conv2d_reference(as_double(x), 2, 3, 5, 5, as_double(w), 4, 3, 3,
                                      as_double(b), stride, pad);
      REQUIRE(y.data().size() == ref.size());
      for (size_t i = 0; i < ref.size(); ++i) {
        const double rel = std::abs(y.data()[i] - ref[i]) /
                           std::max(1.0, std::abs(ref[i]));
        CHECK(rel < 1e-5);
      }
    }
  }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  Tensor x = Tensor::zeros({1, 3, 5, 5});
  Tensor w = Tensor::zeros({4, 2, 3, 3});  // C_in 2 != 3
  CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor(), 1, 0),
                       doctest::Contains("C_in"), Error);
  Tensor wb = Tensor::zeros({4, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, wb, Tensor::zeros({5}), 1, 0), Error);
}

TEST_CASE("depthwise conv groups") {
  Rng rng(3);
  Tensor x = randt({1, 4, 5, 5}, rng);
  Tensor w = randt({4, 1, 3, 3}, rng);
  Tensor y = conv2d(x, w, Tensor(), 1, 1, /*groups=*/4);
  CHECK(y.shape() == Shape{1, 4, 5, 5});
  // channel c of the output only depends on channel c of the input
  Tensor x2 = x.clone();
  for (int64_t i = 0; i < 25; ++i) x2.data()[static_cast<size_t>(3 * 25 + i)] += 1.0f;
  Tensor y2 = conv2d(x2, w, Tensor(), 1, 1, 4);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 25; ++i)
      CHECK(y2.data()[static_cast<size_t>(c * 25 + i)] ==
            y.data()[static_cast<size_t>(c * 25 + i)]);
}

TEST_CASE("linear matches hand values and reference") {
  // identity weight, zero bias
  Tensor x = Tensor::from_data({1, 2}, {1.0f, 1.0f});
  Tensor wid = Tensor::from_data({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  Tensor y = linear(x, wid, Tensor::zeros({2}));
  CHECK(y.data()[0] == doctest::Approx(1.0));
  CHECK(y.data()[1] == doctest::Approx(1.0));

  // rows (1,1) and (1,-1) on input (1,1) give (2, 0)
  Tensor w2 = Tensor::from_data({2, 2}, {1.0f, 1.0f, 1.0f, -1.0f});
  Tensor y2 = linear(x, w2, Tensor::zeros({2}));
  CHECK(y2.data()[0] == doctest::Approx(2.0));
  CHECK(y2.data()[1] == doctest::Approx(0.0));

  Rng rng(11);
  Tensor xr = randt({3, 7}, rng);
  Tensor wr = randt({5, 7}, rng);
  Tensor br = randt({5}, rng);
  Tensor yr = linear(xr, wr, br);
  auto ref = ot::linear_reference(as_double(xr), 3, 7, as_double(wr), 5, as_double(br));
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(std::abs(yr.data()[i] - ref[i]) / std::max(1.0, std::abs(ref[i])) < 1e-6);
}

TEST_CASE("softmax_temp values and properties") {
  Tensor x = Tensor::from_data({2}, {3.5f, 3.5f});
  Tensor p = softmax_temp(x, 0.7);
  CHECK(p.data()[0] == doctest::Approx(0.5));
  CHECK(p.data()[1] == doctest::Approx(0.5));

  Tensor x2 = Tensor::from_data({2}, {0.0f, std::log(3.0f)});
  Tensor p2 = softmax_temp(x2, 1.0);
  CHECK(p2.data()[0] == doctest::Approx(0.25).epsilon(1e-5));
  CHECK(p2.data()[1] == doctest::Approx(0.75).epsilon(1e-5));

  // small temperature approaches the argmax indicator
  Tensor x3 = Tensor::from_data({2}, {0.0f, 1.0f});
  Tensor p3 = softmax_temp(x3, 0.01);
  CHECK(std::abs(p3.data()[0] - 0.0) < 1e-4);
  CHECK(std::abs(p3.data()[1] - 1.0) < 1e-4);

  CHECK_THROWS_AS(softmax_temp(x3, 0.0), Error);
  CHECK_THROWS_AS(softmax_temp(x3, -1.0), Error);

  // rows are probability vectors on random inputs
  Rng rng(5);
  for (int it = 0; it < 20; ++it) {
    Tensor xr = Tensor::randn({4, 6}, rng, 0.0, 3.0);
    Tensor pr = softmax_temp(xr, rng.uniform(0.1, 5.0));
    for (int64_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (int64_t c = 0; c < 6; ++c) {
        const real v = pr.data()[static_cast<size_t>(r * 6 + c)];
        CHECK(v >= 0.0f);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("smooth_max values and bounds") {
  auto sm = [](std::vector<real> vals, double beta) {
    std::vector<Tensor> ts;
    for (real v : vals) ts.push_back(Tensor::scalar(v));
    return smooth_max(ts, beta).item();
  };
  CHECK(sm({0.0f, 0.0f}, 1.0) == doctest::Approx(std::log(2.0)));
  CHECK(sm({5.0f}, 0.3) == doctest::Approx(5.0));
  CHECK(std::abs(sm({0.0f, 10.0f}, 0.1) - 10.0) < 1e-6);

  CHECK_THROWS_AS(smooth_max({}, 1.0), Error);
  CHECK_THROWS_AS(sm({1.0f}, 0.0), Error);

  // max(v) <= smooth_max(v, beta) <= max(v) + beta*ln(n)
  Rng rng(17);
  for (int it = 0; it < 50; ++it) {
    const int n = static_cast<int>(rng.randint(1, 6));
    std::vector<real> vals;
    real mx = -1e30f;
    for (int i = 0; i < n; ++i) {
      vals.push_back(static_cast<real>(rng.uniform(-20.0, 20.0)));
      mx = std::max(mx, vals.back());
    }
    const double beta = rng.uniform(0.01, 2.0);
    const double v = sm(vals, beta);
    CHECK(v >= mx - 1e-5);
    CHECK(v <= mx + beta * std::log(static_cast<double>(n)) + 1e-5);
  }
}

TEST_CASE("backward on simple graphs") {
  // d(x*x)/dx = 2x
  Tensor x = Tensor::scalar(3.0f, true);
  Tensor loss = mul(x, x);
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  // accumulation sums over all paths: d(x + x)/dx = 2
  Tensor x2 = Tensor::scalar(1.5f, true);
  Tensor loss2 = add(x2, x2);
  loss2.backward();
  CHECK(x2.grad()[0] == doctest::Approx(2.0));

  // non-scalar losses are rejected
  Tensor v = Tensor::zeros({3}, true);
  CHECK_THROWS_AS(v.backward(), Error);
}

TEST_CASE("backward determinism with zeroed grads") {
  Rng rng(23);
  Tensor x = randt({2, 3, 6, 6}, rng, true);
  Tensor w = randt({4, 3, 3, 3}, rng, true);
  auto run = [&]() {
    x.zero_grad();
    w.zero_grad();
    Tensor loss = mean(relu(conv2d(x, w, Tensor(), 1, 1)));
    loss.backward();
    return std::make_pair(std::vector<real>(x.grad()), std::vector<real>(w.grad()));
  };
  auto [gx1, gw1] = run();
  auto [gx2, gw2] = run();
  CHECK(gx1 == gx2);
  CHECK(gw1 == gw2);
}

TEST_CASE("gradients match finite differences") {
  Rng rng(31);
  const double h = ot::grad_h(), atol = ot::grad_atol(), rtol = ot::grad_rtol();

  SUBCASE("softmax_temp then dot with constant") {
    Tensor x = randt({6}, rng, true);
    Tensor c = randt({6}, rng);
    auto loss = [&]() { return sum(mul(softmax_temp(x, 0.8), c)); };
    auto res = ot::grad_check(loss, x, h, 1e-4, 1e-4);
    CHECK(res.ok);
  }

  SUBCASE("conv -> relu -> mean") {
    Tensor x = randt({2, 2, 5, 5}, rng, true);
    Tensor w = randt({3, 2, 3, 3}, rng, true);
    Tensor b = randt({3}, rng, true);
    auto loss = [&]() { return mean(relu(conv2d(x, w, b, 1, 1))); };
    for (Tensor p : {x, w, b}) CHECK(ot::grad_check(loss, p, h, atol, rtol).ok);
  }

  SUBCASE("linear -> cross entropy") {
    Tensor x = randt({4, 5}, rng, true);
    Tensor w = randt({3, 5}, rng, true);
    std::vector<int> labels = {0, 2, 1, 2};
    auto loss = [&]() { return cross_entropy(linear(x, w, Tensor()), labels); };
    CHECK(ot::grad_check(loss, x, h, atol, rtol).ok);
    CHECK(ot::grad_check(loss, w, h, atol, rtol).ok);
  }

  SUBCASE("pooling ops") {
    Tensor x = randt({2, 3, 4, 4}, rng, true);
    Tensor c = randt({2, 3}, rng);
    auto loss1 = [&]() { return sum(mul(global_avg_pool(x), c)); };
    CHECK(ot::grad_check(loss1, x, h, atol, rtol).ok);
    auto loss2 = [&]() { return mean(max_pool2d(x, 2, 2)); };
    CHECK(ot::grad_check(loss2, x, h, atol, rtol).ok);
  }

  SUBCASE("smooth_max") {
    std::vector<Tensor> vals;
    for (int i = 0; i < 4; ++i)
      vals.push_back(Tensor::scalar(static_cast<real>(rng.uniform(-2.0, 2.0)), true));
    auto loss = [&]() { return smooth_max(vals, 0.5); };
    for (auto& v : vals) CHECK(ot::grad_check(loss, v, h, atol, rtol).ok);
  }

  SUBCASE("channel broadcast ops") {
    Tensor x = randt({2, 3, 3, 3}, rng, true);
    Tensor g = randt({3}, rng, true);
    Tensor bsh = randt({3}, rng, true);
    auto loss = [&]() {
      Tensor y = shift_channels(scale_channels(x, g), bsh);
      return mean(mul(y, y));
    };
    for (Tensor p : {x, g, bsh}) CHECK(ot::grad_check(loss, p, h, atol, rtol).ok);
  }

  SUBCASE("exp log rsqrt col_sum scale_rows") {
    Tensor m = randt({4, 3}, rng, true);
    Tensor coeffs = randt({4}, rng, true);
    Tensor pos = Tensor::from_data({3}, {0.5f, 1.5f, 2.5f}, true);
    auto loss = [&]() {
      Tensor sm = col_sum(scale_rows(m, coeffs));
      Tensor t = add(add(odimo::exp(index_scalar(sm, 0)),
                         odimo::log(add_scalar(mul(index_scalar(sm, 1), index_scalar(sm, 1)), 1.0))),
                     sum(rsqrt(pos, 0.1)));
      return t;
    };
    for (Tensor p : {m, coeffs, pos}) CHECK(ot::grad_check(loss, p, h, atol, rtol).ok);
  }

  SUBCASE("gather and scatter") {
    Tensor x = randt({2, 4, 3, 3}, rng, true);
    Tensor w = randt({6, 4, 1, 1}, rng, true);
    auto loss = [&]() {
      Tensor wa = gather_rows(w, {0, 2, 4});
      Tensor wb = gather_rows(w, {1, 3, 5});
      Tensor ya = conv2d(x, wa, Tensor(), 1, 0);
      Tensor yb = conv2d(x, wb, Tensor(), 1, 0);
      Tensor y = scatter_channels({ya, yb}, {{0, 2, 4}, {1, 3, 5}}, 6);
      return mean(mul(y, y));
    };
    CHECK(ot::grad_check(loss, x, h, atol, rtol).ok);
    CHECK(ot::grad_check(loss, w, h, atol, rtol).ok);
  }
}

TEST_CASE("ceil_ste forward is exact ceil, backward is identity") {
  Tensor x = Tensor::from_data({4}, {0.2f, 1.0f, -0.3f, 2.7f}, true);
  Tensor y = ceil_ste(x);
  CHECK(y.data()[0] == doctest::Approx(1.0));
  CHECK(y.data()[1] == doctest::Approx(1.0));
  CHECK(y.data()[2] == doctest::Approx(0.0));
  CHECK(y.data()[3] == doctest::Approx(3.0));
  Tensor c = Tensor::from_data({4}, {1.0f, 2.0f, 3.0f, 4.0f});
  Tensor loss = sum(mul(y, c));
  loss.backward();
  for (int i = 0; i < 4; ++i) CHECK(x.grad()[static_cast<size_t>(i)] == c.data()[static_cast<size_t>(i)]);
}

TEST_CASE("optimizers take deterministic steps") {
  Tensor w = Tensor::from_data({2}, {1.0f, -2.0f}, true);
  Sgd sgd({w}, 0.1, 0.9);
  w.grad() = {1.0f, 1.0f};
  sgd.step();
  CHECK(w.data()[0] == doctest::Approx(0.9));
  sgd.zero_grad();
  CHECK(w.grad()[0] == 0.0f);

  Tensor w2 = Tensor::from_data({1}, {1.0f}, true);
  Adam adam({w2}, 0.1);
  w2.grad() = {0.5f};
  adam.step();
  // first Adam step moves by ~lr regardless of gradient scale
  CHECK(w2.data()[0] == doctest::Approx(0.9).epsilon(1e-3));
}

TEST_CASE("tensor container round trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "odimo_io_test";
  fs::create_directories(dir);
  Rng rng(13);
  Tensor t = randt({3, 4, 2}, rng);
  const auto path = (dir / "t.odt").string();
  save_tensor(path, t);
  Tensor back = load_tensor(path);
  CHECK(back.shape() == t.shape());
  CHECK(back.data() == t.data());

  // truncated file fails loudly, no partial tensor
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> all((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out((dir / "trunc.odt").string(), std::ios::binary);
    out.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  CHECK_THROWS_AS(load_tensor((dir / "trunc.odt").string()), Error);

  Checkpoint ckpt;
  ckpt.put_tensor("w", t);
  ckpt.put_string("__meta__", "{\"k\":1}");
  const auto cpath = (dir / "c.odc").string();
  ckpt.save(cpath);
  Checkpoint loaded = Checkpoint::load(cpath);
  CHECK(loaded.has("w"));
  CHECK(loaded.get_tensor("w").data() == t.data());
  CHECK(loaded.get_string("__meta__") == "{\"k\":1}");
  fs::remove_all(dir);
}
