#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "odimo/dataset.hpp"
#include "odimo/network.hpp"
#include "odimo/ops.hpp"
#include "odimo/search.hpp"
#include "test_util.hpp"

using namespace odimo;
namespace ot = odimo::testing;

TEST_CASE("network config parsing and shape inference") {
  const std::string text = R"(
[network]
name = toy
input = 1x8x8
classes = 4

[layer conv1]
type = conv
from = input
out = 8
kernel = 3
pad = 1
bn = true

[layer pool1]
type = maxpool
from = conv1
window = 2

[layer conv2]
type = conv
from = pool1
out = 12
stride = 1

[layer gap]
type = gap
from = conv2

[layer fc]
type = fc
from = gap
out = 4
)";
  NetworkDesc desc = load_network(parse_config_text(text, "inline"));
  CHECK(desc.num_classes == 4);
  CHECK(desc.nodes.size() == 5);
  CHECK(desc.nodes[0].batch_norm);

  Rng rng(1);
  Network net = Network::build(desc, rng);
  CHECK(net.shapes()[0].h == 8);
  CHECK(net.shapes()[1].h == 4);   // maxpool halves
  CHECK(net.shapes()[2].c == 12);
  CHECK(net.shapes()[3].flat);
  CHECK(net.quantizable().size() == 3);

  Tensor x = Tensor::rand_uniform({2, 1, 8, 8}, rng, 0.0, 1.0);
  Tensor logits = net.forward(x, false);
  CHECK(logits.shape() == Shape{2, 4});

  // bad references and unknown keys are rejected
  CHECK_THROWS_AS(load_network(parse_config_text(
                      "[network]\ninput = 1x4x4\nclasses = 2\n"
                      "[layer a]\ntype = conv\nfrom = nope\nout = 2\n",
                      "inline")),
                  Error);
  CHECK_THROWS_WITH_AS(load_network(parse_config_text(
                           "[network]\ninput = 1x4x4\nclasses = 2\n"
                           "[layer a]\ntype = conv\nfrom = input\nout = 2\nwat = 1\n",
                           "inline")),
                       doctest::Contains("unknown key"), Error);
}

TEST_CASE("layer specs for the cost models") {
  Rng rng(2);
  Network net = Network::build(ot::resnet_toy_desc(10), rng);
  // conv2 is strided: 16 channels on a 4x4 output
  LayerSpec s = net.layer_spec(net.quantizable()[1]);
  CHECK(s.c_in == 8);
  CHECK(s.c_out == 16);
  CHECK(s.o_x == 4);
  CHECK(s.kind == LayerKind::Conv);
  // fc is a 1x1 conv with unit output
  LayerSpec f = net.layer_spec(net.quantizable().back());
  CHECK(f.kind == LayerKind::Fc);
  CHECK(f.f_x == 1);
  CHECK(f.o_x == 1);
  CHECK(f.c_in == 16);
}

TEST_CASE("residual forward matches a manual composition") {
  Rng rng(3);
  NetworkDesc desc = ot::resnet_toy_desc(5);
  Network net = Network::build(desc, rng);
  Tensor x = Tensor::rand_uniform({2, 1, 8, 8}, rng, 0.0, 1.0);
  Tensor logits = net.forward(x, false);

  auto& c1 = net.state(0);
  auto& c2 = net.state(1);
  auto& c3 = net.state(2);
  auto& c4 = net.state(3);
  auto& fc = net.state(6);
  Tensor h1 = relu(conv2d(x, c1.weight, c1.bias, 1, 1));
  Tensor h2 = relu(conv2d(h1, c2.weight, c2.bias, 2, 1));
  Tensor h3 = relu(conv2d(h2, c3.weight, c3.bias, 1, 1));
  Tensor h4 = relu(conv2d(h3, c4.weight, c4.bias, 1, 1));
  Tensor expect = linear(global_avg_pool(add(h2, h4)), fc.weight, fc.bias);
  REQUIRE(expect.size() == logits.size());
  for (size_t i = 0; i < expect.data().size(); ++i)
    CHECK(logits.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-6));
}

TEST_CASE("batch-norm folding preserves the network function") {
  Rng rng(4);
  NetworkDesc desc = ot::resnet_toy_desc(4, /*bn=*/true);
  Network net = Network::build(desc, rng);

  // a few training steps so running stats move away from init
  Dataset ds = gen_synthetic(4, 30, 8, rng);
  TrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 16;
  opts.lr_w = 0.02;
  pretrain(net, ds, opts, rng);

  Tensor x = Tensor::rand_uniform({4, 1, 8, 8}, rng, 0.0, 1.0);
  Tensor before = net.forward(x, false);
  Network folded = net.clone();
  folded.fold_batch_norm();
  CHECK_FALSE(folded.has_batch_norm());
  Tensor after = folded.forward(x, false);
  for (size_t i = 0; i < before.data().size(); ++i)
    CHECK(std::abs(before.data()[i] - after.data()[i]) < 1e-4);
}

TEST_CASE("network parameters round trip through a checkpoint") {
  namespace fs = std::filesystem;
  Rng rng(5);
  Network net = Network::build(ot::tiny_cnn_desc(3), rng);
  const auto dir = fs::temp_directory_path() / "odimo_net_test";
  fs::create_directories(dir);
  Checkpoint ckpt;
  net.save_params(ckpt);
  ckpt.save((dir / "net.odc").string());

  Rng rng2(777);  // different init, then overwritten by the checkpoint
  Network other = Network::build(ot::tiny_cnn_desc(3), rng2);
  other.load_params(Checkpoint::load((dir / "net.odc").string()));
  for (int idx : net.quantizable())
    CHECK(other.state(idx).weight.data() == net.state(idx).weight.data());
  fs::remove_all(dir);
}

TEST_CASE("pretraining separates the synthetic blobs") {
  Rng rng(6);
  Dataset ds = gen_synthetic(2, 120, 8, rng);
  Network net = Network::build(ot::tiny_cnn_desc(2, 8), rng);
  TrainOptions opts;
  opts.epochs = 15;
  opts.patience = 15;
  opts.batch_size = 32;
  opts.lr_w = 0.05;
  FitResult fit = pretrain(net, ds, opts, rng);
  CHECK(fit.best_val_acc >= 95.0);
}
