#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "grad_suite.hpp"
#include "hcl/contrast.hpp"
#include "oracles.hpp"

using namespace hcl;
using namespace hcl::contrast;
using testsupport::random_tensor;
using D = double;

namespace {

VecX<D> random_unit(Rng& rng, int dim) {
  VecX<D> v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  v.normalize();
  return v;
}

}  // namespace

TEST_CASE("similarity basics") {
  VecX<D> a(3), b(3);
  a << 1, 0, 0;
  b << 0, 1, 0;
  CHECK(similarity<D>(a, a, 1.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
  CHECK(similarity<D>(a, b, 0.37) == 1.0);

  // concatenated embeddings with two identical unit blocks: inner product 2
  VecX<D> cat(6);
  cat << 1, 0, 0, 0, 1, 0;
  CHECK(similarity<D>(cat, cat, 0.2) == doctest::Approx(std::exp(10.0)).epsilon(1e-12));

  VecX<D> c(4);
  CHECK_THROWS_AS(similarity<D>(a, c, 1.0), ShapeError);
  CHECK_THROWS_AS(similarity<D>(a, a, 0.0), ShapeError);
}

TEST_CASE("info_nce_loss: empty gallery and equal similarities") {
  Rng rng(1);
  Tape<D> t = Tape<D>::inference();
  auto q = Tensor<D>::from({4}, random_unit(rng, 4));
  auto k = Tensor<D>::from({4}, random_unit(rng, 4));

  MemoryQueue<D> empty(8, 4);
  CHECK(info_nce_loss(t, q, k, empty, 0.2).value() == 0.0);

  // all rows equal to the key -> all similarities equal -> loss = ln(N+1)
  for (int n : {1, 3, 7}) {
    MemoryQueue<D> queue(8, 4);
    for (int i = 0; i < n; ++i) queue.push(k.values());
    const double loss = info_nce_loss(t, q, k, queue, 0.2).value();
    CHECK(std::abs(loss - std::log(double(n + 1))) < 1e-12);
  }
}

TEST_CASE("info_nce_loss matches the brute-force formula") {
  Rng rng(2);
  Tape<D> t = Tape<D>::inference();
  for (int trial = 0; trial < 200; ++trial) {
    const int dim = int(rng.uniform_int(2, 8));
    const int n = int(rng.uniform_int(0, 6));
    const double temp = std::vector<double>{0.07, 0.2, 1.0}[size_t(rng.uniform_int(0, 2))];
    auto q = Tensor<D>::from({dim}, random_unit(rng, dim));
    auto k = Tensor<D>::from({dim}, random_unit(rng, dim));
    MemoryQueue<D> queue(8, dim);
    std::vector<VecX<D>> rows;
    for (int i = 0; i < n; ++i) {
      rows.push_back(random_unit(rng, dim));
      queue.push(rows.back());
    }
    const double got = info_nce_loss(t, q, k, queue, temp).value();
    const double want = testsupport::info_nce_ref(q.values(), k.values(), rows, temp);
    CHECK(std::abs(got - want) < 1e-10);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("info_nce_loss input validation") {
  Tape<D> t = Tape<D>::inference();
  auto q = Tensor<D>::from({3}, VecX<D>::Ones(3));
  auto k4 = Tensor<D>::from({4}, VecX<D>::Ones(4));
  MemoryQueue<D> queue(4, 3);
  CHECK_THROWS_AS(info_nce_loss(t, q, k4, queue, 0.2), ShapeError);
  auto empty = Tensor<D>::zeros({0});
  CHECK_THROWS_AS(info_nce_loss(t, empty, empty, queue, 0.2), ShapeError);
}

TEST_CASE("adding a distractor never decreases the loss") {
  Rng rng(3);
  Tape<D> t = Tape<D>::inference();
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 6;
    auto q = Tensor<D>::from({dim}, random_unit(rng, dim));
    auto k = Tensor<D>::from({dim}, random_unit(rng, dim));
    MemoryQueue<D> queue(16, dim);
    const int n = int(rng.uniform_int(0, 8));
    for (int i = 0; i < n; ++i) queue.push(random_unit(rng, dim));
    const double before = info_nce_loss(t, q, k, queue, 0.2).value();
    queue.push(random_unit(rng, dim));
    const double after = info_nce_loss(t, q, k, queue, 0.2).value();
    CHECK(after >= before);
  }
}

TEST_CASE("info_nce_loss gradient matches finite differences") {
  Rng rng(4);
  testsupport::SuiteResult res;
  for (int trial = 0; trial < 10; ++trial) {
    const int dim = int(rng.uniform_int(3, 8));
    auto q = Tensor<D>::from({dim}, random_unit(rng, dim), true);
    auto k = Tensor<D>::from({dim}, random_unit(rng, dim), true);
    auto queue = std::make_shared<MemoryQueue<D>>(8, dim);
    const int n = int(rng.uniform_int(0, 6));
    for (int i = 0; i < n; ++i) queue->push(random_unit(rng, dim));
    testsupport::GradInstance gi;
    gi.params = {q, k};
    gi.run = [=](bool bp) {
      Tape<D> t;
      auto loss = info_nce_loss(t, q, k, *queue, 0.2);
      if (bp) t.backward(loss);
      return loss.value();
    };
    testsupport::FdOptions opt;
    testsupport::check_instance(gi, 40 + trial, opt, res);
  }
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("a gradient step pulls q towards the positive key") {
  // Small instances with k and the gallery rows mutually orthonormal: the
  // scores are linear in q, so after one step every gallery score must drop
  // by eta*p_i while the positive score rises by eta*(1-p_pos).
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int dim = 16, n_rows = 5;
    MatX<D> basis(dim, n_rows + 1);
    for (int c = 0; c <= n_rows; ++c) basis.col(c) = random_unit(rng, dim);
    Eigen::HouseholderQR<MatX<D>> qr(basis);
    MatX<D> ortho = qr.householderQ() * MatX<D>::Identity(dim, n_rows + 1);

    auto q = Tensor<D>::from({dim}, random_unit(rng, dim), true);
    auto k = Tensor<D>::from({dim}, VecX<D>(ortho.col(0)));
    MemoryQueue<D> queue(8, dim);
    std::vector<VecX<D>> rows;
    double max_gal_before = -1e30;
    for (int i = 0; i < n_rows; ++i) {
      rows.push_back(ortho.col(i + 1));
      queue.push(rows.back());
      max_gal_before = std::max(max_gal_before, q.values().dot(rows.back()));
    }
    const double pos_before = q.values().dot(k.values());

    Tape<D> t;
    auto loss = info_nce_loss(t, q, k, queue, 0.2);
    t.backward(loss);
    VecX<D> q_new = q.values() - 0.05 * q.grad();

    const double pos_after = q_new.dot(k.values());
    double max_gal_after = -1e30;
    for (const auto& r : rows) max_gal_after = std::max(max_gal_after, q_new.dot(r));
    CHECK(pos_after > pos_before);
    CHECK(max_gal_after <= max_gal_before + 1e-12);
  }
}

TEST_CASE("queue FIFO semantics") {
  MemoryQueue<D> q(4, 2);
  auto row = [](double a, double b) {
    VecX<D> v(2);
    v << a, b;
    return v;
  };
  MatX<D> first(2, 2), second(2, 2), third(2, 2);
  first << 1, 1, 2, 2;
  second << 3, 3, 4, 4;
  third << 5, 5, 6, 6;
  q.push_batch(first);
  CHECK(q.filled() == 2);
  q.push_batch(second);
  q.push_batch(third);
  CHECK(q.filled() == 4);
  CHECK(q.row_by_age(0) == row(3, 3));  // 1,1 and 2,2 evicted
  CHECK(q.row_by_age(1) == row(4, 4));
  CHECK(q.row_by_age(2) == row(5, 5));
  CHECK(q.row_by_age(3) == row(6, 6));

  CHECK_THROWS_AS(q.push(VecX<D>::Ones(3)), ShapeError);
  MatX<D> big(5, 2);
  big.setZero();
  CHECK_THROWS_AS(q.push_batch(big), ShapeError);
}

TEST_CASE("queue matches a reference ring buffer over random batches") {
  Rng rng(6);
  MemoryQueue<D> q(16, 3);
  testsupport::RingBufferRef ref(16);
  for (int step = 0; step < 50; ++step) {
    const int batch = int(rng.uniform_int(1, 9));
    MatX<D> rows(batch, 3);
    for (int r = 0; r < batch; ++r)
      for (int c = 0; c < 3; ++c) rows(r, c) = rng.normal();
    q.push_batch(rows);
    for (int r = 0; r < batch; ++r) ref.push(rows.row(r).transpose());
    REQUIRE(size_t(q.filled()) == ref.rows().size());
    for (Index i = 0; i < q.filled(); ++i)
      CHECK(q.row_by_age(i) == ref.rows()[size_t(i)]);
  }
}

TEST_CASE("momentum update endpoints and midpoint") {
  using models::ParamSet;
  auto make = [](double v, bool rg) {
    ParamSet<D> ps;
    ps.add("a", Tensor<D>::full({3}, v, rg));
    ps.add("b", Tensor<D>::full({2, 2}, v * 2, rg));
    return ps;
  };
  auto q = make(4.0, true);

  auto k1 = make(2.0, false);
  momentum_update(k1, q, 1.0);
  CHECK(k1.at("a").values()[0] == 2.0);

  auto k0 = make(2.0, false);
  momentum_update(k0, q, 0.0);
  CHECK(k0.at("a").values() == q.at("a").values());
  CHECK(k0.at("b").values() == q.at("b").values());

  auto kh = make(2.0, false);
  momentum_update(kh, q, 0.5);
  CHECK(kh.at("a").values()[0] == 3.0);

  // structural mismatch rejected
  ParamSet<D> other;
  other.add("a", Tensor<D>::full({4}, 1.0));
  other.add("b", Tensor<D>::full({2, 2}, 1.0));
  CHECK_THROWS_AS(momentum_update(other, q, 0.5), ShapeError);

  // key parameters never hold gradient buffers
  for (const auto& [name, t] : k1.items()) CHECK(!t.has_grad_buffer());
}
