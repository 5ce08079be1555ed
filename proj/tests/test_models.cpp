#include <cmath>

#include "doctest.h"
#include "facemix/common.hpp"
#include "facemix/models.hpp"
#include "test_util.hpp"

using namespace facemix;
using ad::Tensor;

namespace {

template <class T>
ModelInput<T> random_input(const NetworkSpec& s, int B, Rng& rng) {
  ModelInput<T> in;
  if (s.uses_image()) {
    std::vector<T> v(static_cast<std::size_t>(B) * s.image_size * s.image_size);
    for (auto& x : v) x = static_cast<T>(rng.uniform());
    in.image = Tensor<T>::from({B, 1, s.image_size, s.image_size}, std::move(v));
  }
  if (s.uses_features()) {
    std::vector<T> v(static_cast<std::size_t>(B) * s.feature_dim);
    for (auto& x : v) x = static_cast<T>(rng.normal());
    in.features = Tensor<T>::from({B, s.feature_dim}, std::move(v));
  }
  return in;
}

NetworkSpec tiny(NetKind kind) {
  NetworkSpec s;
  s.kind = kind;
  s.image_size = 16;
  s.conv_channels = {2, 2, 2};
  s.feature_dim = 5;
  s.hidden = 6;
  s.K = 3;
  return s;
}

}  // namespace

TEST_CASE("architecture arithmetic") {
  NetworkSpec s;
  s.feature_dim = 100;
  s.K = 7;
  const auto mlp = build_mlp(s, 1);
  CHECK(mlp.parameter_count() == 100 * 512 + 512 + 512 * 7 + 7);
  CHECK(mlp.parameter_count() == 55303);
  CHECK(mlp.spec().latent_width() == 512);

  NetworkSpec c;
  c.image_size = 32;
  c.K = 7;
  CHECK(build_cnn(c, 1).spec().flatten_width() == 512);
  c.image_size = 256;
  c.kind = NetKind::cnn;
  CHECK(c.flatten_width() == 32 * 32 * 32);
  CHECK(c.latent_width() == 512);

  NetworkSpec f;
  f.image_size = 16;
  f.feature_dim = 4;
  f.conv_channels = {2, 2, 2};
  f.K = 5;
  const auto fusion = build_fusion(f, 1);
  CHECK(fusion.spec().latent_width() == 1024);
  CHECK(fusion.classifier_parameter_count() == 1024 * 5 + 5);
}

TEST_CASE("construction errors") {
  NetworkSpec s;
  s.feature_dim = 0;
  CHECK_THROWS_AS(build_mlp(s, 1), ShapeError);
  NetworkSpec c;
  c.image_size = 20;
  CHECK_THROWS_AS(build_cnn(c, 1), ShapeError);
  c.image_size = 16;
  c.feature_dim = 0;
  CHECK_THROWS_AS(build_fusion(c, 1), ShapeError);
}

TEST_CASE("initialization bounds and determinism") {
  NetworkSpec s = tiny(NetKind::fusion);
  const auto a = build_network(s, 9), b = build_network(s, 9), c = build_network(s, 10);
  CHECK(a.param("H.fc.W").values() == b.param("H.fc.W").values());
  CHECK(a.param("H.fc.W").values() != c.param("H.fc.W").values());
  const double bound = std::sqrt(6.0 / (5 + 6));
  for (float v : a.param("H.fc.W").values()) CHECK(std::abs(v) <= bound);
  for (float v : a.param("H.fc.b").values()) CHECK(v == 0.0f);
}

TEST_CASE("forward properties") {
  Rng rng(1);
  for (NetKind k : {NetKind::mlp, NetKind::cnn, NetKind::fusion}) {
    const auto net = build_network(tiny(k), 3);
    const auto in = random_input<float>(net.spec(), 4, rng);
    const auto logits = net.predict_logits(in);
    CHECK(logits.shape() == ad::Shape{4, 3});
    const auto p = ad::softmax_rows(logits);
    for (int r = 0; r < 4; ++r) {
      double s = 0;
      for (int c = 0; c < 3; ++c) {
        CHECK(p[r * 3 + c] > 0.0f);
        CHECK(p[r * 3 + c] < 1.0f);
        s += p[r * 3 + c];
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
    // Eval mode is deterministic and f = C o M exactly.
    Rng r1(5), r2(6);
    CHECK(net.forward_logits(in, false, r1).values() == logits.values());
    CHECK(net.classify(net.forward_latent(in, false, r2)).values() == logits.values());
    // Training mode draws dropout masks.
    Rng t1(5), t2(5), t3(6);
    const auto a = net.forward_logits(in, true, t1).values();
    CHECK(a == net.forward_logits(in, true, t2).values());
    CHECK(a != net.forward_logits(in, true, t3).values());
  }
}

TEST_CASE("fusion latent is the concatenation of the branches") {
  Rng rng(2);
  auto net = build_fusion(tiny(NetKind::fusion), 4);
  const auto in = random_input<float>(net.spec(), 3, rng);
  Rng r(0);
  const auto z = net.forward_latent(in, false, r);
  const auto g = net.image_branch(in.image, false, r);
  const auto h = net.feature_branch(in.features, false, r);
  const int H = net.spec().hidden;
  CHECK(z.shape() == ad::Shape{3, 2 * H});
  for (int b = 0; b < 3; ++b) {
    for (int i = 0; i < H; ++i) {
      CHECK(z.values()[b * 2 * H + i] == g.values()[b * H + i]);
      CHECK(z.values()[b * 2 * H + H + i] == h.values()[b * H + i]);
    }
  }
  // Zeroing the feature branch makes logits independent of the features.
  for (auto& v : net.param("H.fc.W").values()) v = 0;
  auto other = in;
  auto feats = random_input<float>(net.spec(), 3, rng).features;
  other.features = feats;
  CHECK(net.predict_logits(in).values() == net.predict_logits(other).values());
}

TEST_CASE("input shape errors") {
  Rng rng(3);
  const auto net = build_cnn(tiny(NetKind::cnn), 1);
  ModelInput<float> bad;
  bad.image = Tensor<float>::zeros({2, 1, 8, 8});
  CHECK_THROWS_AS(net.predict_logits(bad), ShapeError);
  const auto mlp = build_mlp(tiny(NetKind::mlp), 1);
  ModelInput<float> f;
  f.features = Tensor<float>::zeros({2, 4});
  CHECK_THROWS_AS(mlp.predict_logits(f), ShapeError);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  testing::TempDir dir("models");
  Rng rng(7);
  for (NetKind k : {NetKind::mlp, NetKind::cnn, NetKind::fusion}) {
    const auto net = build_network(tiny(k), 11);
    const auto in = random_input<float>(net.spec(), 2, rng);
    save_checkpoint(dir.path() / to_string(k), net, {{"note", "x"}});
    const auto back = load_checkpoint(dir.path() / to_string(k));
    CHECK(back.names() == net.names());
    CHECK(back.predict_logits(in).values() == net.predict_logits(in).values());
    CHECK(checkpoint_extra(dir.path() / to_string(k))["note"] == "x");
  }
  std::filesystem::resize_file(dir.path() / "mlp" / "weights.bin", 8);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "mlp"), ParseError);
}

TEST_CASE("reinit_classifier touches only C") {
  auto net = build_fusion(tiny(NetKind::fusion), 1);
  const auto g = net.param("G.conv1").values();
  const auto c = net.param("C.W").values();
  net.reinit_classifier(99);
  CHECK(net.param("G.conv1").values() == g);
  CHECK(net.param("C.W").values() != c);
}

TEST_CASE("end-to-end gradient check on tiny architectures") {
  for (NetKind k : {NetKind::mlp, NetKind::cnn, NetKind::fusion}) {
    CAPTURE(to_string(k));
    Rng rng(21);
    auto net = build_network(tiny(k), 5).cast<double>();
    auto in = random_input<double>(net.spec(), 3, rng);
    const std::vector<int> labels = {0, 2, 1};
    std::vector<Tensor<double>> inputs = net.parameters();
    if (in.image.defined()) {
      in.image.set_requires_grad(true);
      inputs.push_back(in.image);
    }
    if (in.features.defined()) {
      in.features.set_requires_grad(true);
      inputs.push_back(in.features);
    }
    const double err = ad::grad_check(
        [&](const auto&) {
          Rng r(0);
          return ad::softmax_cross_entropy<double>(net.forward_logits(in, false, r), labels);
        },
        inputs, 1);
    CHECK(err <= 1e-3);
  }
}
