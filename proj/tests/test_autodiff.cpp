#include <cmath>
#include <cstdio>
#include <cstring>

#include "bodynerf/checkpoint.hpp"
#include "bodynerf/optim.hpp"
#include "bodynerf/rng.hpp"
#include "bodynerf/tensor.hpp"
#include "doctest.h"

using namespace bodynerf;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from_values(std::move(shape), std::move(v));
}

// Max relative FD error of a scalar-valued builder over one leaf parameter.
double fd_check(Parameter& p, const std::function<Tensor()>& f,
                double step = 1e-6) {
  Parameter* arr[1] = {&p};
  return grad_check(f, std::span<Parameter* const>(arr, 1), step);
}

}  // namespace

TEST_CASE("softmax of a constant row is uniform") {
  Tensor x = Tensor::from_values({1, 3}, {0.0, 0.0, 0.0});
  Tensor y = softmax_last(x);
  for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("softmax rows live on the probability simplex") {
  Rng rng(7);
  Tensor x = random_tensor({50, 9}, rng, 30.0);  // large logits included
  Tensor y = softmax_last(x);
  for (int r = 0; r < 50; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 9; ++c) {
      CHECK(y[r * 9 + c] >= 0.0);
      sum += y[r * 9 + c];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("matmul by the identity is the identity") {
  Tensor eye = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(3);
  Tensor a = random_tensor({3, 5}, rng);
  Tensor out = matmul(eye, a);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(out[i] == a[i]);
}

TEST_CASE("bilinear sample at an exact grid node returns the node") {
  Rng rng(11);
  Tensor fmap = random_tensor({4, 5, 3}, rng);
  Tensor pts = Tensor::from_values({1, 2}, {2.0, 3.0});  // x=2, y=3
  Tensor out = bilinear_sample(fmap, pts);
  for (int c = 0; c < 3; ++c) CHECK(out[c] == fmap.at({3, 2, c}));
}

TEST_CASE("trilinear sample at a node and midpoint") {
  Rng rng(12);
  Tensor vol = random_tensor({3, 4, 5, 2}, rng);
  Tensor pts = Tensor::from_values({2, 3}, {1.0, 2.0, 2.0,    // node
                                            0.5, 0.0, 0.0});  // x-midpoint
  Tensor out = trilinear_sample(vol, pts);
  for (int c = 0; c < 2; ++c) {
    CHECK(out[c] == vol.at({2, 2, 1, c}));
    CHECK(out[2 + c] ==
          doctest::Approx(0.5 * (vol.at({0, 0, 0, c}) + vol.at({0, 0, 1, c}))));
  }
}

TEST_CASE("backward of sum of squares") {
  Parameter theta("theta", Tensor::from_values({2}, {1.0, 2.0}));
  Tensor loss = sum_all(mul(theta.tensor, theta.tensor));
  loss.backward();
  CHECK(theta.tensor.grad()[0] == doctest::Approx(2.0));
  CHECK(theta.tensor.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("parameters the loss never touches hold no gradient") {
  Parameter used("used", Tensor::from_values({1}, {2.0}));
  Parameter unused("unused", Tensor::from_values({1}, {5.0}));
  Tensor loss = mul(used.tensor, used.tensor);
  loss.backward();
  CHECK(used.tensor.has_grad());
  CHECK_FALSE(unused.tensor.has_grad());
}

TEST_CASE("softmax cross-term gradients match finite differences") {
  Rng rng(21);
  Parameter theta("theta", random_tensor({4, 6}, rng));
  Tensor weights = random_tensor({4, 6}, rng);
  auto f = [&]() { return sum_all(mul(softmax_last(theta.tensor), weights)); };
  CHECK(fd_check(theta, f, 1e-5) < 1e-6);
}

TEST_CASE("backward twice on the same tape is rejected") {
  Parameter theta("theta", Tensor::from_values({1}, {1.5}));
  Tensor loss = mul(theta.tensor, theta.tensor);
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), Error);
}

TEST_CASE("shape mismatch reports the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected a throw");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(4,5)") != std::string::npos);
  }
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
  Rng rng(31);
  // Each entry: name, builder over a (4,3) parameter.
  Parameter theta("theta", random_tensor({4, 3}, rng));
  Tensor mixer = random_tensor({4, 3}, rng);

  auto check = [&](const std::function<Tensor()>& f, double tol = 1e-5) {
    CAPTURE(tol);
    CHECK(fd_check(theta, f) < tol);
  };

  check([&] { return sum_all(mul(add(theta.tensor, mixer), theta.tensor)); });
  check([&] { return sum_all(mul(sub(theta.tensor, mixer), mixer)); });
  check([&] { return sum_all(div(mixer, add_scalar(mul(theta.tensor, theta.tensor), 1.0))); });
  check([&] { return sum_all(mul(relu(theta.tensor), mixer)); });
  check([&] { return sum_all(mul(exp(scale(theta.tensor, 0.3)), mixer)); });
  check([&] { return sum_all(mul(log(add_scalar(mul(theta.tensor, theta.tensor), 1.5)), mixer)); });
  check([&] { return sum_all(mul(sin(theta.tensor), mixer)); });
  check([&] { return sum_all(mul(cos(theta.tensor), mixer)); });
  check([&] { return sum_all(mul(sigmoid(theta.tensor), mixer)); });
  check([&] { return sum_all(mul(softplus(theta.tensor), mixer)); });
  check([&] { return mean_all(mul(theta.tensor, theta.tensor)); });
  check([&] { return sum_all(mul(sum_axis(mul(theta.tensor, mixer), 0),
                                 Tensor::from_values({3}, {0.3, -0.7, 1.1}))); });
  check([&] { return sum_all(mul(reshape(theta.tensor, {2, 6}),
                                 reshape(mixer, {2, 6}))); });
  check([&] { return sum_all(neg(mul(theta.tensor, theta.tensor))); });
}

TEST_CASE("broadcasting add/mul/div gradients match finite differences") {
  Rng rng(32);
  Parameter a("a", random_tensor({2, 3, 4}, rng));
  Parameter b("b", random_tensor({3, 1}, rng, 0.5));
  Parameter* ps[2] = {&a, &b};
  auto f = [&]() {
    Tensor x = mul(a.tensor, b.tensor);                    // (2,3,4)*(3,1)
    Tensor y = add(x, b.tensor);                           // broadcast add
    Tensor z = div(y, add_scalar(mul(b.tensor, b.tensor), 2.0));
    return sum_all(z);
  };
  CHECK(grad_check(f, std::span<Parameter* const>(ps, 2), 1e-6) < 1e-5);
}

TEST_CASE("matmul/concat/gather/scatter gradients match finite differences") {
  Rng rng(33);
  Parameter a("a", random_tensor({3, 4}, rng));
  Parameter b("b", random_tensor({4, 2}, rng));
  Parameter* ps[2] = {&a, &b};

  auto f1 = [&]() { return sum_all(mul(matmul(a.tensor, b.tensor),
                                       matmul(a.tensor, b.tensor))); };
  CHECK(grad_check(f1, std::span<Parameter* const>(ps, 2), 1e-6) < 1e-5);

  Tensor mixer = random_tensor({7, 4}, rng);
  auto f2 = [&]() {
    Tensor cat = concat({a.tensor, gather_rows(a.tensor, {2, 0, 1, 1})}, 0);
    return sum_all(mul(cat, mixer));
  };
  CHECK(fd_check(a, f2) < 1e-5);

  Tensor mixer2 = random_tensor({5, 4}, rng);
  auto f3 = [&]() {
    Tensor sc = scatter_add_rows(a.tensor, {4, 0, 4}, 5);
    return sum_all(mul(sc, mixer2));
  };
  CHECK(fd_check(a, f3) < 1e-5);
}

TEST_CASE("conv2d forward matches a hand-computed case") {
  // 1x1x3x3 input, 1x1x2x2 kernel, stride 1, no padding.
  Tensor x = Tensor::from_values({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w = Tensor::from_values({1, 1, 2, 2}, {1, 0, 0, -1});
  Tensor b = Tensor::from_values({1}, {0.5});
  Tensor y = conv2d(x, w, b, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y[0] == doctest::Approx(1 - 5 + 0.5));
  CHECK(y[1] == doctest::Approx(2 - 6 + 0.5));
  CHECK(y[2] == doctest::Approx(4 - 8 + 0.5));
  CHECK(y[3] == doctest::Approx(5 - 9 + 0.5));
}

TEST_CASE("spatial op gradients match finite differences") {
  Rng rng(34);
  Parameter x("x", random_tensor({1, 2, 6, 6}, rng));
  Parameter w("w", random_tensor({3, 2, 3, 3}, rng, 0.5));
  Parameter b("b", random_tensor({3}, rng, 0.1));
  Parameter* ps[3] = {&x, &w, &b};
  Tensor mixer = random_tensor({1, 3, 3, 3}, rng);
  auto f = [&]() {
    return sum_all(mul(conv2d(x.tensor, w.tensor, b.tensor, 2, 1), mixer));
  };
  CHECK(grad_check(f, std::span<Parameter* const>(ps, 3), 1e-6) < 1e-5);

  Tensor mixer2 = random_tensor({1, 2, 3, 3}, rng);
  auto fpool = [&]() {
    return sum_all(mul(maxpool2d(x.tensor, 2, 2), mixer2));
  };
  CHECK(fd_check(x, fpool) < 1e-5);

  Tensor mixer3 = random_tensor({1, 2, 12, 12}, rng);
  auto fup = [&]() {
    return sum_all(mul(upsample_nearest2d(x.tensor, 2), mixer3));
  };
  CHECK(fd_check(x, fup) < 1e-5);

  Parameter chw("chw", random_tensor({3, 4, 5}, rng));
  Tensor mixer4 = random_tensor({4, 5, 3}, rng);
  auto fperm = [&]() { return sum_all(mul(chw_to_hwc(chw.tensor), mixer4)); };
  CHECK(fd_check(chw, fperm) < 1e-5);
}

TEST_CASE("sampler op gradients match finite differences, including coords") {
  Rng rng(35);
  Parameter fmap("fmap", random_tensor({5, 6, 3}, rng));
  Parameter pts("pts", Tensor::from_values({3, 2}, {1.3, 2.6, 0.4, 0.2, 4.1, 3.7}));
  Parameter* ps[2] = {&fmap, &pts};
  Tensor mixer = random_tensor({3, 3}, rng);
  auto f = [&]() {
    return sum_all(mul(bilinear_sample(fmap.tensor, pts.tensor), mixer));
  };
  CHECK(grad_check(f, std::span<Parameter* const>(ps, 2), 1e-6) < 1e-5);

  Parameter vol("vol", random_tensor({4, 4, 4, 2}, rng));
  Parameter p3("p3", Tensor::from_values({2, 3}, {1.2, 2.3, 0.7, 2.9, 0.4, 1.5}));
  Parameter* ps3[2] = {&vol, &p3};
  Tensor mixer3 = random_tensor({2, 2}, rng);
  auto f3 = [&]() {
    return sum_all(mul(trilinear_sample(vol.tensor, p3.tensor), mixer3));
  };
  CHECK(grad_check(f3, std::span<Parameter* const>(ps3, 2), 1e-6) < 1e-5);
}

TEST_CASE("segment_cumsum_exclusive forward and backward") {
  Tensor x = Tensor::from_values({6, 1}, {1, 2, 3, 4, 5, 6});
  Tensor y = segment_cumsum_exclusive(x, {0, 0, 0, 1, 1, 2});
  const std::vector<double> expect = {0, 1, 3, 0, 4, 0};
  for (int i = 0; i < 6; ++i) CHECK(y[i] == doctest::Approx(expect[i]));

  Rng rng(36);
  Parameter p("p", random_tensor({6, 1}, rng));
  Tensor mixer = random_tensor({6, 1}, rng);
  auto f = [&]() {
    return sum_all(
        mul(segment_cumsum_exclusive(p.tensor, {0, 0, 0, 1, 1, 2}), mixer));
  };
  CHECK(fd_check(p, f) < 1e-5);
}

TEST_CASE("tape replay is deterministic bit for bit") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor({8, 8}, rng);
    Tensor b = random_tensor({8, 8}, rng);
    Tensor y = softmax_last(matmul(relu(a), sigmoid(b)));
    return y.values();
  };
  const auto v1 = run(99);
  const auto v2 = run(99);
  REQUIRE(v1.size() == v2.size());
  CHECK(std::memcmp(v1.data(), v2.data(), v1.size() * sizeof(double)) == 0);
}

TEST_CASE("adam first step moves by about lr against the gradient sign") {
  Parameter theta("theta", Tensor::from_values({1}, {0.0}));
  theta.tensor.accumulate_grad({1.0});
  AdamOptions opt;
  opt.lr = 0.1;
  Parameter* ps[1] = {&theta};
  adam_step(std::span<Parameter* const>(ps, 1), opt);
  // Bias correction makes mhat = vhat^0.5 = 1, so the step is lr/(1+eps).
  CHECK(theta.tensor.values()[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK_FALSE(theta.tensor.has_grad());  // gradients cleared
  CHECK(theta.step == 1);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Parameter theta("theta", Tensor::from_values({1}, {0.7}));
  theta.tensor.accumulate_grad({0.0});
  AdamOptions opt;
  Parameter* ps[1] = {&theta};
  adam_step(std::span<Parameter* const>(ps, 1), opt);
  CHECK(theta.tensor.values()[0] == 0.7);

  // No gradient buffer at all: a complete no-op, step untouched.
  Parameter frozen("frozen", Tensor::from_values({1}, {1.0}));
  Parameter* ps2[1] = {&frozen};
  adam_step(std::span<Parameter* const>(ps2, 1), opt);
  CHECK(frozen.tensor.values()[0] == 1.0);
  CHECK(frozen.step == 0);
}

TEST_CASE("adam two constant-gradient steps match the scalar recurrence") {
  const double g = 0.37, lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  // Hand recurrence in plain scalars.
  double m = 0, v = 0, x = 0.2;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
  }

  Parameter theta("theta", Tensor::from_values({1}, {0.2}));
  AdamOptions opt;
  opt.lr = lr;
  Parameter* ps[1] = {&theta};
  for (int t = 0; t < 2; ++t) {
    theta.tensor.accumulate_grad({g});
    adam_step(std::span<Parameter* const>(ps, 1), opt);
  }
  CHECK(theta.tensor.values()[0] == doctest::Approx(x).epsilon(1e-12));
}

TEST_CASE("grad_check on closed forms") {
  Parameter theta("theta", Tensor::from_values({1}, {3.0}));
  Parameter* ps[1] = {&theta};
  auto f = [&]() { return mul(theta.tensor, theta.tensor); };
  CHECK(grad_check(f, std::span<Parameter* const>(ps, 1), 1e-5) < 1e-8);

  auto constant = [&]() { return Tensor::scalar(4.0); };
  CHECK(grad_check(constant, std::span<Parameter* const>(ps, 1), 1e-5) == 0.0);
}

TEST_CASE("checkpoint round-trips parameters, optimizer state and metadata") {
  Rng rng(41);
  Parameter a("layer.w", random_tensor({3, 4}, rng));
  Parameter b("layer.b", random_tensor({4}, rng));
  a.tensor.accumulate_grad(std::vector<double>(12, 0.25));
  b.tensor.accumulate_grad(std::vector<double>(4, -0.5));
  AdamOptions opt;
  Parameter* ps[2] = {&a, &b};
  adam_step(std::span<Parameter* const>(ps, 2), opt);

  const auto saved_a = a.tensor.values();
  const auto saved_m = a.m;

  Checkpoint ckpt = Checkpoint::snapshot(std::span<Parameter* const>(ps, 2),
                                         {{"note", "round trip"}});
  const std::string path = "/tmp/bodynerf_test_ckpt.bin";
  save_checkpoint(path, ckpt);
  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.meta_at("note") == "round trip");

  Parameter a2("layer.w", Tensor::zeros({3, 4}));
  Parameter b2("layer.b", Tensor::zeros({4}));
  Parameter* ps2[2] = {&a2, &b2};
  loaded.restore(std::span<Parameter* const>(ps2, 2));
  CHECK(a2.tensor.values() == saved_a);
  CHECK(a2.m == saved_m);
  CHECK(a2.step == 1);

  // Shape mismatch reports the parameter and both shapes.
  Parameter bad("layer.w", Tensor::zeros({4, 3}));
  Parameter* psb[1] = {&bad};
  CHECK_THROWS_AS(loaded.restore(std::span<Parameter* const>(psb, 1)), Error);
  std::remove(path.c_str());
}

TEST_CASE("non-scalar backward is fatal") {
  Parameter theta("theta", Tensor::from_values({2}, {1.0, 2.0}));
  Tensor y = mul(theta.tensor, theta.tensor);
  CHECK_THROWS_AS(y.backward(), Error);
}
