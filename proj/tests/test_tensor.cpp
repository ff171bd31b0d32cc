#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "layoutlab/rng.hpp"
#include "layoutlab/tensor.hpp"
#include "layoutlab/util.hpp"

using namespace layoutlab;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scatter = 1.0) {
  size_t n = 1;
  for (int d : shape) {
    n *= static_cast<size_t>(d);
  }
  std::vector<double> data(n);
  for (auto& x : data) {
    x = rng.gauss() * scatter;
  }
  return Tensor::from(std::move(shape), std::move(data), true);
}

}  // namespace

TEST_CASE("rng: identical seeds replay identical streams") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 64; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
}

TEST_CASE("rng: forked stream is independent of parent consumption") {
  Rng a(99);
  Rng b(99);
  (void)a.next_u64();
  (void)a.next_u64();
  Rng fa = a.fork(7);
  Rng fb = b.fork(7);
  for (int i = 0; i < 16; ++i) {
    CHECK(fa.next_u64() == fb.next_u64());
  }
}

TEST_CASE("rng: uniform_int stays inside the inclusive range") {
  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    int v = r.uniform_int(3, 7);
    CHECK(v >= 3);
    CHECK(v <= 7);
  }
}

TEST_CASE("rng: bernoulli rate is close to p over many draws") {
  Rng r(17);
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    hits += r.bernoulli(0.3) ? 1 : 0;
  }
  const double rate = static_cast<double>(hits) / n;
  CHECK(rate == doctest::Approx(0.3).epsilon(0.02));
}

TEST_CASE("rng: gauss moments") {
  Rng r(23);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.gauss();
    s += x;
    s2 += x * x;
  }
  CHECK(s / n == doctest::Approx(0.0).epsilon(1).scale(0.02));
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("tensor: factories and accessors") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.size() == 6);
  CHECK(z.at(1, 2) == 0.0);
  Tensor f = Tensor::full({4}, 2.5);
  CHECK(f.at(3) == 2.5);
  Tensor s = Tensor::scalar(-1.0);
  CHECK(s.value() == -1.0);
  CHECK_THROWS_AS((void)Tensor::from({2, 2}, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS((void)f.value(), std::invalid_argument);
}

TEST_CASE("backward: squared scalar has gradient 2x") {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward: rejects non-scalar losses") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(backward(add(x, x)), std::invalid_argument);
}

TEST_CASE("backward: gradients accumulate across calls") {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor loss = mul(x, x);
  backward(loss);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("backward: diamond-shaped graphs sum both paths") {
  // loss = x*x + x  ->  dloss/dx = 2x + 1
  Tensor x = Tensor::scalar(5.0, true);
  Tensor loss = add(mul(x, x), x);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(11.0));
}

TEST_CASE("detach: blocks gradient flow, keeps values") {
  Tensor a = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  Tensor b = Tensor::from({3}, {4.0, 5.0, 6.0}, true);
  Tensor loss = sum(mul(detach(a), b));
  CHECK(loss.value() == doctest::Approx(32.0));
  backward(loss);
  for (double g : a.grad()) {
    CHECK(g == 0.0);
  }
  CHECK(b.grad()[0] == doctest::Approx(1.0));
  CHECK(b.grad()[2] == doctest::Approx(3.0));
}

TEST_CASE("softmax: two equal logits split evenly") {
  Tensor x = Tensor::from({2}, {0.0, 0.0});
  Tensor y = softmax(x, -1);
  CHECK(y.at(0) == doctest::Approx(0.5));
  CHECK(y.at(1) == doctest::Approx(0.5));
}

TEST_CASE("softmax: rows sum to one and large logits stay finite") {
  Tensor x = Tensor::from({2, 3}, {1000.0, 999.0, 998.0, -5.0, 0.0, 5.0});
  Tensor y = softmax(x, -1);
  for (int i = 0; i < 2; ++i) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) {
      CHECK(std::isfinite(y.at(i, j)));
      s += y.at(i, j);
    }
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("cross_entropy: uniform logits cost ln(V)") {
  Tensor x = Tensor::from({4}, {0.7, 0.7, 0.7, 0.7});
  CHECK(cross_entropy(x, 2).value() == doctest::Approx(std::log(4.0)));
}

TEST_CASE("cross_entropy: rejects out-of-range targets") {
  Tensor x = Tensor::from({3}, {0.0, 0.0, 0.0});
  CHECK_THROWS_AS((void)cross_entropy(x, 3), std::invalid_argument);
  CHECK_THROWS_AS((void)cross_entropy(x, -1), std::invalid_argument);
}

TEST_CASE("cross_entropy: batched mean matches per-row average") {
  Rng rng(41);
  Tensor logits = random_tensor({3, 5}, rng);
  std::vector<int> targets = {1, 4, 0};
  Tensor batched = cross_entropy(logits, targets);
  double manual = 0.0;
  for (int i = 0; i < 3; ++i) {
    Tensor row = Tensor::from({5}, {logits.at(i, 0), logits.at(i, 1), logits.at(i, 2),
                                    logits.at(i, 3), logits.at(i, 4)});
    manual += cross_entropy(row, targets[static_cast<size_t>(i)]).value();
  }
  CHECK(batched.value() == doctest::Approx(manual / 3.0));
}

TEST_CASE("cosine_sim: vector with itself is exactly one") {
  Tensor u = Tensor::from({3}, {0.3, -1.2, 2.0});
  CHECK(cosine_sim(u, u).value() == doctest::Approx(1.0));
}

TEST_CASE("cosine_sim: orthogonal vectors score zero, opposite score minus one") {
  Tensor u = Tensor::from({2}, {1.0, 0.0});
  Tensor v = Tensor::from({2}, {0.0, 2.0});
  CHECK(cosine_sim(u, v).value() == doctest::Approx(0.0));
  Tensor w = Tensor::from({2}, {-3.0, 0.0});
  CHECK(cosine_sim(u, w).value() == doctest::Approx(-1.0));
}

TEST_CASE("cosine_sim: rejects zero-norm inputs") {
  Tensor u = Tensor::from({2}, {0.0, 0.0});
  Tensor v = Tensor::from({2}, {1.0, 1.0});
  CHECK_THROWS_AS((void)cosine_sim(u, v), std::invalid_argument);
}

TEST_CASE("matmul: 2x2 known product and shape checks") {
  Tensor a = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b = Tensor::from({2, 2}, {5.0, 6.0, 7.0, 8.0});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == doctest::Approx(19.0));
  CHECK(c.at(0, 1) == doctest::Approx(22.0));
  CHECK(c.at(1, 0) == doctest::Approx(43.0));
  CHECK(c.at(1, 1) == doctest::Approx(50.0));
  Tensor bad = Tensor::zeros({3, 2});
  CHECK_THROWS_AS((void)matmul(a, bad), std::invalid_argument);
}

TEST_CASE("layer_norm: output rows have zero mean and unit variance") {
  Rng rng(7);
  Tensor x = random_tensor({4, 8}, rng, 3.0);
  Tensor y = layer_norm(x, -1, 1e-5);
  for (int i = 0; i < 4; ++i) {
    double m = 0.0, v = 0.0;
    for (int j = 0; j < 8; ++j) {
      m += y.at(i, j);
    }
    m /= 8;
    for (int j = 0; j < 8; ++j) {
      v += (y.at(i, j) - m) * (y.at(i, j) - m);
    }
    v /= 8;
    CHECK(m == doctest::Approx(0.0).epsilon(1).scale(1e-9));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("gelu: fixed points") {
  Tensor x = Tensor::from({3}, {0.0, 10.0, -10.0});
  Tensor y = gelu(x);
  CHECK(y.at(0) == doctest::Approx(0.0));
  CHECK(y.at(1) == doctest::Approx(10.0));
  CHECK(y.at(2) == doctest::Approx(0.0).epsilon(1).scale(1e-6));
}

TEST_CASE("relu: clamps negatives") {
  Tensor x = Tensor::from({4}, {-2.0, -0.5, 0.5, 2.0});
  Tensor y = relu(x);
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 0.0);
  CHECK(y.at(2) == 0.5);
  CHECK(y.at(3) == 2.0);
}

TEST_CASE("embedding_lookup: duplicate ids accumulate gradient") {
  Tensor table = Tensor::from({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}, true);
  Tensor rows = embedding_lookup(table, {1, 1, 2});
  CHECK(rows.at(0, 0) == 3.0);
  CHECK(rows.at(2, 1) == 6.0);
  backward(sum(rows));
  CHECK(table.grad()[2] == doctest::Approx(2.0));  // row 1 hit twice
  CHECK(table.grad()[4] == doctest::Approx(1.0));
  CHECK(table.grad()[0] == 0.0);
  CHECK_THROWS_AS((void)embedding_lookup(table, {3}), std::invalid_argument);
}

TEST_CASE("mean_pool: averages selected rows") {
  Tensor x = Tensor::from({3, 2}, {0.0, 0.0, 2.0, 4.0, 4.0, 8.0}, true);
  Tensor v = mean_pool(x, {1, 2});
  CHECK(v.at(0) == doctest::Approx(3.0));
  CHECK(v.at(1) == doctest::Approx(6.0));
  backward(sum(v));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[2] == doctest::Approx(0.5));
  CHECK(x.grad()[5] == doctest::Approx(0.5));
  CHECK_THROWS_AS((void)mean_pool(x, {}), std::invalid_argument);
  CHECK_THROWS_AS((void)mean_pool(x, {3}), std::invalid_argument);
}

TEST_CASE("concat and slice: round trip along both axes") {
  Tensor a = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b = Tensor::from({2, 3}, {5.0, 6.0, 7.0, 8.0, 9.0, 10.0});
  Tensor c = concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 5});
  CHECK(c.at(0, 2) == 5.0);
  CHECK(c.at(1, 4) == 10.0);
  Tensor back = slice(c, 1, 0, 2);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      CHECK(back.at(i, j) == a.at(i, j));
    }
  }
  Tensor r = concat({a, a}, 0);
  CHECK(r.shape() == Shape{4, 2});
  CHECK(slice(r, 0, 2, 4).at(1, 1) == 4.0);
  CHECK_THROWS_AS((void)slice(a, 1, 1, 1), std::invalid_argument);
}

TEST_CASE("broadcast add/mul: vector applied to each row") {
  Tensor a = Tensor::from({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  Tensor b = Tensor::from({3}, {10.0, 20.0, 30.0});
  Tensor s = add(a, b);
  CHECK(s.at(0, 0) == 11.0);
  CHECK(s.at(1, 2) == 36.0);
  Tensor p = mul(a, b);
  CHECK(p.at(0, 1) == 40.0);
  CHECK(p.at(1, 0) == 40.0);
  CHECK_THROWS_AS((void)add(a, Tensor::zeros({2})), std::invalid_argument);
}

TEST_CASE("dropout: p=0 is identity, p=0.5 zeroes or rescales") {
  Rng rng(3);
  Tensor x = Tensor::from({100}, std::vector<double>(100, 1.0), true);
  Tensor same = dropout(x, 0.0, rng);
  CHECK(same.impl() == x.impl());
  Tensor y = dropout(x, 0.5, rng);
  int zeros = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    CHECK((v == 0.0 || v == doctest::Approx(2.0)));
    zeros += v == 0.0 ? 1 : 0;
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);
}

TEST_CASE("gradients: finite differences agree for every primitive") {
  Rng rng(2024);
  const double tol = 1e-4;

  SUBCASE("add, sub, mul, scale elementwise") {
    auto f = [](const std::vector<Tensor>& in) {
      return sum(scale(mul(add(in[0], in[1]), sub(in[0], in[1])), 0.7));
    };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f, {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}) < tol);
    }
  }

  SUBCASE("broadcast add and mul") {
    auto f = [](const std::vector<Tensor>& in) {
      return sum(mul(add(in[0], in[1]), in[2]));
    };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f, {random_tensor({3, 4}, rng), random_tensor({4}, rng),
                           random_tensor({4}, rng)}) < tol);
    }
  }

  SUBCASE("matmul chain with transpose") {
    auto f = [](const std::vector<Tensor>& in) {
      return sum(matmul(in[0], transpose(in[1])));
    };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f, {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)}) < tol);
    }
  }

  SUBCASE("relu away from the kink") {
    auto f = [](const std::vector<Tensor>& in) { return sum(relu(in[0])); };
    for (int t = 0; t < 5; ++t) {
      Tensor x = random_tensor({3, 3}, rng);
      for (auto& v : x.data()) {
        if (std::abs(v) < 0.05) {
          v += 0.2;
        }
      }
      CHECK(grad_check(f, {x}) < tol);
    }
  }

  SUBCASE("gelu") {
    auto f = [](const std::vector<Tensor>& in) { return sum(gelu(in[0])); };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f, {random_tensor({2, 5}, rng)}) < tol);
    }
  }

  SUBCASE("softmax weighted by constants") {
    Tensor w = random_tensor({3, 4}, rng);
    auto f = [&w](const std::vector<Tensor>& in) {
      return sum(mul(softmax(in[0], -1), detach(w)));
    };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f, {random_tensor({3, 4}, rng)}) < tol);
    }
  }

  SUBCASE("layer_norm weighted by constants") {
    Tensor w = random_tensor({3, 6}, rng);
    auto f = [&w](const std::vector<Tensor>& in) {
      return sum(mul(layer_norm(in[0], -1, 1e-5), detach(w)));
    };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f, {random_tensor({3, 6}, rng, 2.0)}) < tol);
    }
  }

  SUBCASE("embedding_lookup with repeated ids") {
    std::vector<int> ids = {0, 2, 2, 1};
    Tensor w = random_tensor({4, 3}, rng);
    auto f = [&](const std::vector<Tensor>& in) {
      return sum(mul(embedding_lookup(in[0], ids), detach(w)));
    };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f, {random_tensor({3, 3}, rng)}) < tol);
    }
  }

  SUBCASE("gather_rows and mean_pool") {
    std::vector<int> rows = {1, 1, 0};
    auto f = [&](const std::vector<Tensor>& in) {
      return sum(add(mean_pool(in[0], {0, 2}), mean_pool(gather_rows(in[0], rows), {0, 1})));
    };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f, {random_tensor({3, 4}, rng)}) < tol);
    }
  }

  SUBCASE("cross_entropy single and batched") {
    auto f1 = [](const std::vector<Tensor>& in) { return cross_entropy(in[0], 1); };
    std::vector<int> targets = {2, 0, 1};
    auto f2 = [&targets](const std::vector<Tensor>& in) {
      return cross_entropy(in[0], targets);
    };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f1, {random_tensor({4}, rng)}) < tol);
      CHECK(grad_check(f2, {random_tensor({3, 4}, rng)}) < tol);
    }
  }

  SUBCASE("cosine_sim both sides") {
    auto f = [](const std::vector<Tensor>& in) { return cosine_sim(in[0], in[1]); };
    for (int t = 0; t < 5; ++t) {
      Tensor u = random_tensor({5}, rng);
      Tensor v = random_tensor({5}, rng);
      CHECK(grad_check(f, {u, v}) < tol);
    }
  }

  SUBCASE("concat and slice") {
    auto f = [](const std::vector<Tensor>& in) {
      Tensor c = concat({in[0], in[1]}, 1);
      return sum(mul(slice(c, 1, 1, 4), slice(c, 1, 0, 3)));
    };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f, {random_tensor({2, 2}, rng), random_tensor({2, 3}, rng)}) < tol);
    }
  }

  SUBCASE("add_n of several terms") {
    auto f = [](const std::vector<Tensor>& in) {
      return sum(add_n({in[0], in[1], in[0]}));
    };
    for (int t = 0; t < 5; ++t) {
      CHECK(grad_check(f, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}) < tol);
    }
  }

  SUBCASE("composite attention-like block") {
    auto f = [](const std::vector<Tensor>& in) {
      Tensor q = matmul(in[0], in[1]);
      Tensor k = matmul(in[0], in[2]);
      Tensor scores = softmax(scale(matmul(q, transpose(k)), 0.5), -1);
      Tensor mixed = matmul(scores, in[0]);
      return sum(gelu(layer_norm(mixed, -1, 1e-5)));
    };
    for (int t = 0; t < 3; ++t) {
      CHECK(grad_check(f, {random_tensor({3, 4}, rng), random_tensor({4, 4}, rng),
                           random_tensor({4, 4}, rng)}) < tol);
    }
  }
}

TEST_CASE("adamw: first step matches the hand-computed update") {
  // one parameter p=1, grad=1, lr=0.1, no decay:
  //   m = 0.1, v = 0.001, mhat = 1, vhat = 1  ->  p = 1 - 0.1*1/(1+eps)
  Tensor p = Tensor::scalar(1.0, true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt({p}, cfg);
  p.grad()[0] = 1.0;
  opt.step();
  CHECK(p.value() == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw: weight decay is decoupled from the gradient path") {
  // zero gradient -> moments stay zero -> only the decay term moves p
  Tensor p = Tensor::scalar(2.0, true);
  AdamWConfig cfg;
  cfg.lr = 0.5;
  cfg.weight_decay = 0.1;
  AdamW opt({p}, cfg);
  p.grad()[0] = 0.0;
  opt.step();
  CHECK(p.value() == doctest::Approx(2.0 * (1.0 - 0.5 * 0.1)));
}

TEST_CASE("adamw: lr_scale rescales the whole step") {
  Tensor p1 = Tensor::scalar(1.0, true);
  Tensor p2 = Tensor::scalar(1.0, true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW o1({p1}, cfg), o2({p2}, cfg);
  p1.grad()[0] = 1.0;
  p2.grad()[0] = 1.0;
  o1.step(1.0);
  o2.step(0.5);
  CHECK((1.0 - p2.value()) == doctest::Approx(0.5 * (1.0 - p1.value())));
}

TEST_CASE("adamw: refuses parameters that cannot carry grads") {
  Tensor frozen = Tensor::scalar(1.0, false);
  CHECK_THROWS_AS(AdamW({frozen}, AdamWConfig{}), std::invalid_argument);
}

TEST_CASE("adamw: drives a quadratic toward its minimum") {
  Tensor x = Tensor::scalar(4.0, true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt({x}, cfg);
  for (int i = 0; i < 300; ++i) {
    opt.zero_grad();
    Tensor loss = mul(x, x);
    backward(loss);
    opt.step();
  }
  CHECK(std::abs(x.value()) < 0.05);
}

TEST_CASE("checkpoint: round trip preserves names, shapes, payloads, meta") {
  Rng rng(77);
  std::vector<NamedTensor> tensors;
  tensors.push_back({"alpha", random_tensor({3, 4}, rng)});
  tensors.push_back({"beta", Tensor::from({2}, {1e-300, -0.0})});
  nlohmann::json meta = {{"config_hash", "deadbeef"}, {"step", 42}};
  const std::string path =
      (std::filesystem::temp_directory_path() / "layoutlab_ckpt_test.bin").string();
  save_checkpoint(path, tensors, meta);
  Checkpoint ck = load_checkpoint(path);
  REQUIRE(ck.tensors.size() == 2);
  CHECK(ck.meta["config_hash"] == "deadbeef");
  CHECK(ck.meta["step"] == 42);
  CHECK(ck.tensors[0].name == "alpha");
  CHECK(ck.tensors[0].tensor.shape() == Shape{3, 4});
  for (size_t i = 0; i < tensors[0].tensor.size(); ++i) {
    CHECK(ck.tensors[0].tensor.data()[i] == tensors[0].tensor.data()[i]);
  }
  CHECK(ck.tensors[1].tensor.data()[0] == 1e-300);
  std::filesystem::remove(path);
  CHECK_THROWS_AS((void)load_checkpoint(path), std::invalid_argument);
}

TEST_CASE("hashing: fnv1a64 fixed vectors and hex rendering") {
  CHECK(fnv1a64("") == 14695981039346656037ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(to_hex(0) == "0000000000000000");
  CHECK(to_hex(0xdeadbeefull) == "00000000deadbeef");
}
