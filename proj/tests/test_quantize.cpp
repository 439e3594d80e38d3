#include <cmath>

#include "doctest.h"
#include "odimo/ops.hpp"
#include "odimo/quantize.hpp"
#include "odimo/rng.hpp"
#include "test_util.hpp"

using namespace odimo;

namespace {

WeightQuantizer make_wq(int bits, real log_scale = 0.0f, bool trainable = true) {
  return WeightQuantizer{bits, Tensor::scalar(log_scale, trainable)};
}

}  // namespace

TEST_CASE("ternary quantizer hits the three-value grid") {
  auto q = make_wq(2);
  Tensor x = Tensor::from_data({4}, {0.7f, 0.3f, -2.0f, 0.0f});
  Tensor y = fake_quantize_weights(x, q);
  CHECK(y.data()[0] == doctest::Approx(1.0));
  CHECK(y.data()[1] == doctest::Approx(0.0));
  CHECK(y.data()[2] == doctest::Approx(-1.0));
  CHECK(y.data()[3] == 0.0f);

  // with a non-unit scale the grid is {-e^s, 0, e^s}
  auto q2 = make_wq(2, std::log(0.5f));
  Tensor y2 = fake_quantize_weights(Tensor::from_data({2}, {0.4f, -0.1f}), q2);
  CHECK(y2.data()[0] == doctest::Approx(0.5));
  CHECK(y2.data()[1] == doctest::Approx(0.0));
}

TEST_CASE("8-bit quantizer grid and worked value") {
  auto q = make_wq(8);
  Tensor y = fake_quantize_weights(Tensor::from_data({1}, {0.5f}), q);
  CHECK(y.item() == doctest::Approx(64.0 / 127.0).epsilon(1e-6));
  CHECK(fake_quantize_weights(Tensor::from_data({1}, {0.0f}), q).item() == 0.0f);
}

TEST_CASE("quantizer grid membership and exact idempotence") {
  Rng rng(99);
  for (int bits : {2, 4, 8}) {
    auto q = make_wq(bits, static_cast<real>(rng.uniform(-1.0, 1.0)));
    Tensor x = Tensor::randn({64}, rng, 0.0, 1.0);
    Tensor y = fake_quantize_weights(x, q);
    const double scale = q.scale();
    const double levels = static_cast<double>(q.levels());
    for (real v : y.data()) {
      const double k = std::round(static_cast<double>(v) * levels / scale);
      CHECK(std::abs(k) <= levels);
      CHECK(v == static_cast<real>((scale / levels) * k));  // exactly on grid
    }
    Tensor yy = fake_quantize_weights(y, q);
    CHECK(yy.data() == y.data());  // idempotent bit-for-bit
  }
  CHECK_THROWS_AS(fake_quantize_weights(Tensor::scalar(1.0f), make_wq(1)), Error);
}

TEST_CASE("weight quantizer straight-through gradient") {
  // declared backward rule: dQ/dx = 1 strictly inside the clip range, 0 outside
  auto q = make_wq(8, std::log(2.0f));
  Tensor x = Tensor::from_data({4}, {0.5f, -1.5f, 2.5f, -2.5f}, true);
  Tensor y = fake_quantize_weights(x, q);
  sum(y).backward();
  CHECK(x.grad()[0] == 1.0f);  // |0.5/2| < 1
  CHECK(x.grad()[1] == 1.0f);
  CHECK(x.grad()[2] == 0.0f);  // |2.5/2| > 1
  CHECK(x.grad()[3] == 0.0f);

  // scale gradient: clipped elements pull the range with dQ/ds = +-e^s
  auto q2 = make_wq(2);
  Tensor x2 = Tensor::from_data({1}, {3.0f});
  Tensor y2 = fake_quantize_weights(x2, q2);
  y2.backward();
  CHECK(q2.log_scale.grad()[0] == doctest::Approx(1.0));  // e^0 = 1
}

TEST_CASE("activation quantizer values") {
  Tensor range1 = Tensor::scalar(0.0f);  // e^0 = 1
  CHECK(fake_quantize_act(Tensor::scalar(0.0f), 7, range1).item() == 0.0f);
  CHECK(fake_quantize_act(Tensor::scalar(0.5f), 7, range1).item() ==
        doctest::Approx(64.0 / 127.0).epsilon(1e-6));
  // negative inputs clamp to zero
  CHECK(fake_quantize_act(Tensor::scalar(-0.3f), 7, range1).item() == 0.0f);
}

TEST_CASE("8-bit quantize then LSB truncation equals direct 7-bit on the grid") {
  Tensor range1 = Tensor::scalar(0.0f);
  for (int m = 0; m <= 255; ++m) {
    const real v = static_cast<real>(static_cast<double>(m) / 255.0);
    Tensor direct = fake_quantize_act(Tensor::scalar(v), 7, range1);
    Tensor trunc = truncate_lsb(Tensor::scalar(v), 1.0);
    CHECK(trunc.item() == doctest::Approx(direct.item()).epsilon(1e-6));
  }
}

TEST_CASE("truncate_lsb code arithmetic") {
  auto trunc_code = [](int code) {
    const real v = static_cast<real>(static_cast<double>(code) / 255.0);
    const double out = truncate_lsb(Tensor::scalar(v), 1.0).item();
    return static_cast<int>(std::lround(out * 127.0));
  };
  CHECK(trunc_code(255) == 127);
  CHECK(trunc_code(0) == 0);
  CHECK(trunc_code(129) == 64);

  // off-grid input rejected in checked mode
  CHECK_THROWS_AS(truncate_lsb(Tensor::scalar(0.1234f), 1.0, true), Error);
  CHECK_NOTHROW(truncate_lsb(Tensor::scalar(0.1234f), 1.0, false));

  // straight-through gradient
  Tensor x = Tensor::from_data({1}, {static_cast<real>(128.0 / 255.0)}, true);
  truncate_lsb(x, 1.0).backward();
  CHECK(x.grad()[0] == 1.0f);
}

TEST_CASE("activation range calibration then training") {
  ActQuantizer aq;
  aq.begin_calibration();
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    Tensor x = Tensor::rand_uniform({32}, rng, 0.0, 4.0);
    aq.apply(x, 7);
  }
  aq.end_calibration();
  CHECK(aq.current_range() == doctest::Approx(4.0).epsilon(0.25));
  CHECK(aq.log_range().requires_grad());
}

TEST_CASE("fold_bn identity and scaling") {
  Rng rng(8);
  Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
  Tensor b = Tensor::randn({4}, rng);

  BnParams identity{Tensor::full({4}, 1.0f), Tensor::zeros({4}), Tensor::zeros({4}),
                    Tensor::full({4}, 1.0f), 0.0};
  auto [w1, b1] = fold_bn(w, b, identity);
  CHECK(w1.data() == w.data());
  CHECK(b1.data() == b.data());

  BnParams doubling{Tensor::full({4}, 2.0f), Tensor::zeros({4}), Tensor::zeros({4}),
                    Tensor::full({4}, 1.0f), 0.0};
  auto [w2, b2] = fold_bn(w, b, doubling);
  for (size_t i = 0; i < w.data().size(); ++i)
    CHECK(w2.data()[i] == doctest::Approx(2.0 * w.data()[i]));

  BnParams bad{Tensor::full({4}, 1.0f), Tensor::zeros({4}), Tensor::zeros({4}),
               Tensor::full({4}, -2.0f), 1.0};
  CHECK_THROWS_AS(fold_bn(w, b, bad), Error);
}

TEST_CASE("fold_bn preserves the layer function") {
  Rng rng(21);
  Tensor x = Tensor::randn({2, 3, 6, 6}, rng);
  Tensor w = Tensor::randn({5, 3, 3, 3}, rng);
  Tensor b = Tensor::randn({5}, rng);
  BnParams bn{Tensor::randn({5}, rng, 1.0, 0.3), Tensor::randn({5}, rng),
              Tensor::randn({5}, rng, 0.0, 0.5),
              Tensor::rand_uniform({5}, rng, 0.2, 2.0), 1e-5};

  // unfolded: conv then inference-mode BN
  Tensor y = conv2d(x, w, b, 1, 1);
  Tensor inv;
  {
    std::vector<real> s(5), o(5);
    for (int i = 0; i < 5; ++i) {
      const double f = bn.gamma.data()[static_cast<size_t>(i)] /
                       std::sqrt(static_cast<double>(bn.var.data()[static_cast<size_t>(i)]) + bn.eps);
      s[static_cast<size_t>(i)] = static_cast<real>(f);
      o[static_cast<size_t>(i)] = static_cast<real>(
          bn.beta.data()[static_cast<size_t>(i)] -
          f * bn.mean.data()[static_cast<size_t>(i)]);
    }
    inv = shift_channels(scale_channels(y, Tensor::from_data({5}, s)),
                         Tensor::from_data({5}, o));
  }

  auto [wf, bf] = fold_bn(w, b, bn);
  Tensor folded = conv2d(x, wf, bf, 1, 1);
  for (size_t i = 0; i < folded.data().size(); ++i)
    CHECK(std::abs(folded.data()[i] - inv.data()[i]) < 1e-5);
}
