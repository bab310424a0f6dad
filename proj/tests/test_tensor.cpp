#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "hgg/rng.hpp"
#include "hgg/tensor.hpp"

using namespace hgg;

namespace {

Tensor rand_tensor(Rng& rng, std::vector<std::size_t> shape, bool requires_grad,
                   double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.mutable_value()) v = rng.uniform(lo, hi);
  return t;
}

// values in [-1, -margin] u [margin, 1], for kernels with a kink or pole at 0
Tensor rand_tensor_away_from_zero(Rng& rng, std::vector<std::size_t> shape, bool requires_grad,
                                  double margin = 0.05) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.mutable_value()) {
    const double mag = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

double max_fd_err(const std::function<Tensor(Tape&)>& f, const std::vector<Tensor>& params) {
  return finite_diff_check(f, params, 1e-5).max_rel_err;
}

}  // namespace

TEST_CASE("matmul identity") {
  Rng rng(1);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.mutable_value()[i * 3 + i] = 1.0;
  Tensor x = rand_tensor(rng, {3, 5}, false);
  Tape tape;
  Tensor y = tape.matmul(eye, x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("matmul shape mismatch names kernel and shapes") {
  Tape tape;
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), "matmul: incompatible shapes (2, 3) x (2, 3)",
                       std::invalid_argument);
}

TEST_CASE("softmax of a symmetric pair is uniform") {
  Tape tape;
  Tensor y = tape.softmax(Tensor::vec({0.0, 0.0}));
  CHECK(y.value()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y.value()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = rand_tensor(rng, {7, 11}, false, -30.0, 30.0);
    Tape tape;
    Tensor y = tape.softmax(x);
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 11; ++c) s += y.value()[r * 11 + c];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax rejects empty reduced axis") {
  Tape tape;
  Tensor x = Tensor::zeros({3, 0});
  CHECK_THROWS_AS(tape.softmax(x), std::invalid_argument);
}

TEST_CASE("scatter_mean worked example and zero-target rows") {
  Tape tape;
  Tensor values = Tensor::from({3, 1}, {2.0, 4.0, 10.0});
  Tensor out = tape.scatter_mean(values, {0, 0, 1}, 3);
  CHECK(out.value()[0] == 3.0);
  CHECK(out.value()[1] == 10.0);
  CHECK(out.value()[2] == 0.0);
}

TEST_CASE("neighbor_mean matches scatter_mean over gathered rows") {
  Rng rng(3);
  Tensor x = rand_tensor(rng, {9, 4}, false);
  std::vector<std::size_t> src, dst;
  for (int e = 0; e < 25; ++e) {
    src.push_back(rng.below(9));
    dst.push_back(rng.below(6));
  }
  Tape tape;
  Tensor fused = tape.neighbor_mean(x, src, dst, 6);
  Tensor reference = tape.scatter_mean(tape.gather_rows(x, src), dst, 6);
  for (std::size_t i = 0; i < fused.numel(); ++i)
    CHECK(fused.value()[i] == doctest::Approx(reference.value()[i]).epsilon(1e-15));
}

TEST_CASE("layer_norm normalizes per row before scale and shift") {
  Rng rng(4);
  Tensor x = rand_tensor(rng, {6, 64}, false);
  Tensor gamma = Tensor::full({64}, 1.0);
  Tensor beta = Tensor::zeros({64});
  Tape tape;
  Tensor y = tape.layer_norm(x, gamma, beta);
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < 64; ++c) mu += y.value()[r * 64 + c];
    mu /= 64.0;
    double var = 0.0;
    for (std::size_t c = 0; c < 64; ++c) {
      const double d = y.value()[r * 64 + c] - mu;
      var += d * d;
    }
    var /= 64.0;
    CHECK(std::abs(mu) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-8);
  }
}

TEST_CASE("backward: sum of squares") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor loss = tape.sum_all(tape.mul(x, x));
  GradTable g = tape.backward(loss);
  const auto gx = g.get(x);
  CHECK(gx[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(gx[1] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("backward: mean gradient is 1/n") {
  Tensor x = Tensor::from({4}, {3.0, -1.0, 2.0, 7.0}, true);
  Tape tape;
  Tensor loss = tape.mean_all(x);
  GradTable g = tape.backward(loss);
  for (double v : g.get(x)) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward: unused parameter gets a zero gradient of its shape") {
  Tensor used = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor unused = Tensor::from({3}, {5.0, 5.0, 5.0}, true);
  Tape tape;
  Tensor loss = tape.sum_all(used);
  GradTable g = tape.backward(loss);
  const auto gu = g.get(unused);
  REQUIRE(gu.size() == 3);
  for (double v : gu) CHECK(v == 0.0);
}

TEST_CASE("backward through a tensor consumed twice sums both contributions") {
  Rng rng(5);
  Tensor x = Tensor::from({3}, {0.3, -0.7, 1.1}, true);
  Tensor x1 = Tensor::from({3}, x.value(), true);
  Tensor x2 = Tensor::from({3}, x.value(), true);
  Tensor c = rand_tensor(rng, {3}, false);

  // f(x) = sum(x * x) + sum(c * x), consuming x twice
  Tape tape;
  Tensor loss = tape.add(tape.sum_all(tape.mul(x, x)), tape.sum_all(tape.mul(c, x)));
  GradTable g = tape.backward(loss);

  // duplicated subgraph: same function with each consumer on its own copy
  Tape tape2;
  Tensor loss2 = tape2.add(tape2.sum_all(tape2.mul(x1, x2)), tape2.sum_all(tape2.mul(c, x1)));
  GradTable g2 = tape2.backward(loss2);

  const auto gx = g.get(x);
  const auto g1 = g2.get(x1);
  const auto gb = g2.get(x2);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(gx[i] == doctest::Approx(g1[i] + gb[i]).epsilon(1e-14));
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor y = tape.mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("broadcasting add over leading dimensions and scalars") {
  Tape tape;
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::vec({10, 20, 30});
  Tensor y = tape.add(a, row);
  CHECK(y.value() == std::vector<double>{11, 22, 33, 14, 25, 36});
  Tensor s = Tensor::scalar(100.0);
  Tensor z = tape.mul(a, s);
  CHECK(z.value()[5] == 600.0);
  Tensor bad = Tensor::vec({1, 2});
  CHECK_THROWS_AS(tape.add(a, bad), std::invalid_argument);
}

TEST_CASE("forward kernels keep finite inputs finite") {
  Rng rng(6);
  Tensor a = rand_tensor(rng, {5, 8}, false, -3.0, 3.0);
  Tensor b = rand_tensor(rng, {8, 4}, false, -3.0, 3.0);
  Tensor g = Tensor::full({8}, 1.0);
  Tensor bias = rand_tensor(rng, {8}, false);
  Tape tape;
  std::vector<Tensor> outs;
  outs.push_back(tape.matmul(a, b));
  outs.push_back(tape.softmax(a));
  outs.push_back(tape.layer_norm(a, g, bias));
  outs.push_back(tape.relu(a));
  outs.push_back(tape.exp(a));
  outs.push_back(tape.mean(a, 0));
  outs.push_back(tape.mean(a, 1));
  for (const Tensor& t : outs)
    for (double v : t.value()) CHECK(std::isfinite(v));
}

// --- gradient checks per kernel ---------------------------------------------

TEST_CASE("gradcheck: products") {
  Rng rng(7);
  Tensor a = rand_tensor(rng, {4, 6}, true);
  Tensor b = rand_tensor(rng, {6, 3}, true);
  Tensor bt = rand_tensor(rng, {3, 6}, true);
  Tensor bias = rand_tensor(rng, {3}, true);
  Tensor c = rand_tensor(rng, {4, 3}, false);
  CHECK(max_fd_err(
            [&](Tape& t) { return t.sum_all(t.mul(t.matmul(a, b), c)); },
            {a, b}) < 1e-4);
  CHECK(max_fd_err(
            [&](Tape& t) { return t.sum_all(t.mul(t.matmul_nt(a, bt), c)); },
            {a, bt}) < 1e-4);
  CHECK(max_fd_err(
            [&](Tape& t) { return t.sum_all(t.mul(t.linear(a, bt, bias), c)); },
            {a, bt, bias}) < 1e-4);
}

TEST_CASE("gradcheck: elementwise") {
  Rng rng(8);
  Tensor a = rand_tensor(rng, {3, 5}, true);
  Tensor b = rand_tensor(rng, {3, 5}, true);
  Tensor row = rand_tensor(rng, {5}, true);
  Tensor s = rand_tensor(rng, {1}, true);
  Tensor c = rand_tensor(rng, {3, 5}, false);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.add(a, b), c)); }, {a, b}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.sub(a, b), c)); }, {a, b}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.mul(a, b), c)); }, {a, b}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.add(a, row), c)); }, {a, row}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.mul(a, s), c)); }, {a, s}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.affine(a, -1.7, 0.4), c)); }, {a}) <
        1e-4);
}

TEST_CASE("gradcheck: nonlinearities") {
  Rng rng(9);
  Tensor a = rand_tensor_away_from_zero(rng, {4, 6}, true);
  Tensor pos = rand_tensor(rng, {4, 6}, true, 0.5, 2.0);
  Tensor c = rand_tensor(rng, {4, 6}, false);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.relu(a), c)); }, {a}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.exp(a), c)); }, {a}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.log(pos), c)); }, {pos}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.softmax(a), c)); }, {a}) < 1e-4);
}

TEST_CASE("gradcheck: layer_norm") {
  Rng rng(10);
  Tensor x = rand_tensor(rng, {3, 8}, true);
  Tensor gamma = rand_tensor(rng, {8}, true, 0.5, 1.5);
  Tensor beta = rand_tensor(rng, {8}, true);
  Tensor c = rand_tensor(rng, {3, 8}, false);
  CHECK(max_fd_err(
            [&](Tape& t) { return t.sum_all(t.mul(t.layer_norm(x, gamma, beta), c)); },
            {x, gamma, beta}) < 1e-4);
}

TEST_CASE("gradcheck: reductions and structure") {
  Rng rng(11);
  Tensor x = rand_tensor(rng, {5, 4}, true);
  Tensor y = rand_tensor(rng, {2, 4}, true);
  Tensor z = rand_tensor(rng, {5, 3}, true);
  Tensor c40 = rand_tensor(rng, {4}, false);
  Tensor c5 = rand_tensor(rng, {5}, false);
  Tensor c54 = rand_tensor(rng, {5, 4}, false);
  Tensor c45 = rand_tensor(rng, {4, 5}, false);
  Tensor c74 = rand_tensor(rng, {7, 4}, false);
  Tensor c57 = rand_tensor(rng, {5, 7}, false);
  std::vector<std::size_t> gather_idx{0, 2, 2, 4, 1};
  std::vector<std::size_t> src{0, 1, 2, 3, 4, 0};
  std::vector<std::size_t> dst{1, 1, 0, 2, 2, 2};
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.mean(x, 0), c40)); }, {x}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.mul(t.mean(x, 1), c5)); }, {x}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.mean_all(x); }, {x}) < 1e-4);
  CHECK(max_fd_err(
            [&](Tape& t) { return t.sum_all(t.mul(t.concat({x, y}, 0), c74)); },
            {x, y}) < 1e-4);
  CHECK(max_fd_err(
            [&](Tape& t) { return t.sum_all(t.mul(t.concat({x, z}, 1), c57)); },
            {x, z}) < 1e-4);
  CHECK(max_fd_err(
            [&](Tape& t) { return t.sum_all(t.mul(t.gather_rows(x, gather_idx), c54)); },
            {x}) < 1e-4);
  CHECK(max_fd_err(
            [&](Tape& t) { return t.sum_all(t.scatter_mean(x, {0, 0, 1, 2, 1}, 4)); },
            {x}) < 1e-4);
  CHECK(max_fd_err(
            [&](Tape& t) { return t.sum_all(t.neighbor_mean(x, src, dst, 3)); }, {x}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.slice_rows(x, 1, 3)); }, {x}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.sum_all(t.slice_cols(x, 1, 2)); }, {x}) < 1e-4);
  CHECK(max_fd_err(
            [&](Tape& t) { return t.sum_all(t.mul(t.reshape(x, {4, 5}), c45)); }, {x}) < 1e-4);
  CHECK(max_fd_err([&](Tape& t) { return t.pick(x, 7); }, {x}) < 1e-4);
}

TEST_CASE("finite_diff_check on a quadratic is exact to rounding") {
  Tensor w = Tensor::from({1}, {3.0}, true).set_name("w");
  auto f = [&](Tape& t) { return t.mul(w, w); };
  FdReport r = finite_diff_check(f, {w}, 1e-5);
  CHECK(r.max_rel_err < 1e-8);
  CHECK(r.entries_checked == 1);
}

TEST_CASE("finite_diff_check of a constant function reports zero error") {
  Tensor w = Tensor::from({2}, {1.0, -2.0}, true).set_name("w");
  Tensor c = Tensor::scalar(5.0);
  auto f = [&](Tape& t) { return t.affine(c, 1.0, 0.0); };
  FdReport r = finite_diff_check(f, {w}, 1e-5);
  CHECK(r.max_rel_err == 0.0);
}

TEST_CASE("finite_diff_check samples entries deterministically when capped") {
  Rng rng(12);
  Tensor w = rand_tensor(rng, {10, 10}, true).set_name("w");
  Tensor c = rand_tensor(rng, {10, 10}, false);
  auto f = [&](Tape& t) { return t.sum_all(t.mul(t.relu(w), c)); };
  FdReport r = finite_diff_check(f, {w}, 1e-5, 7);
  CHECK(r.entries_checked == 7);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("gradient of a doubly consumed intermediate via duplicated subgraph") {
  Rng rng(13);
  Tensor w = rand_tensor(rng, {3, 3}, true);
  Tensor x = rand_tensor(rng, {3, 3}, false);
  // h = w x used by two heads; grad must match the analytic sum
  CHECK(max_fd_err(
            [&](Tape& t) {
              Tensor h = t.matmul(w, x);
              return t.add(t.sum_all(t.mul(h, h)), t.mean_all(h));
            },
            {w}) < 1e-4);
}
