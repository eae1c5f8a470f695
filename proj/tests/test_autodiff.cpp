#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <vector>

#include "semnav/autodiff.hpp"
#include "semnav/rng.hpp"

using namespace semnav;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.next_gaussian();
  return m;
}

using Builder =
    std::function<TensorRef(Tape&, const std::vector<TensorRef>&)>;

double eval_loss(const std::vector<Eigen::MatrixXd>& inputs,
                 const Builder& build) {
  Tape tape;
  std::vector<TensorRef> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.constant(m));
  return tape.scalar(build(tape, leaves));
}

// Central finite differences on every entry of every input against the
// tape's analytic gradients.
void check_gradients(std::vector<Eigen::MatrixXd> inputs,
                     const Builder& build) {
  std::vector<Eigen::MatrixXd> grads;
  for (const auto& m : inputs)
    grads.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));

  Tape tape;
  std::vector<TensorRef> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    leaves.push_back(tape.leaf(inputs[i], &grads[i]));
  tape.backward(build(tape, leaves));

  const double h = 1e-5;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (int r = 0; r < inputs[i].rows(); ++r) {
      for (int c = 0; c < inputs[i].cols(); ++c) {
        const double saved = inputs[i](r, c);
        inputs[i](r, c) = saved + h;
        const double up = eval_loss(inputs, build);
        inputs[i](r, c) = saved - h;
        const double down = eval_loss(inputs, build);
        inputs[i](r, c) = saved;
        const double fd = (up - down) / (2.0 * h);
        const double an = grads[i](r, c);
        const double err =
            std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
        CHECK(err < 1e-6);
      }
    }
  }
}

}  // namespace

TEST_CASE("elementwise ops differentiate correctly") {
  Rng rng(1);
  check_gradients(
      {random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)},
      [](Tape& t, const std::vector<TensorRef>& in) {
        TensorRef x = add(t, in[0], in[1]);
        x = sub(t, x, hadamard(t, in[0], in[1]));
        x = scale(t, x, 1.7);
        x = add_scalar(t, x, -0.3);
        return sum_all(t, x);
      });
}

TEST_CASE("matrix products differentiate correctly") {
  Rng rng(2);
  const Eigen::MatrixXd w = random_matrix(rng, 3, 5);
  check_gradients({random_matrix(rng, 3, 4), random_matrix(rng, 4, 5),
                   random_matrix(rng, 3, 5)},
                  [w](Tape& t, const std::vector<TensorRef>& in) {
                    TensorRef ab = matmul(t, in[0], in[1]);
                    TensorRef ant = matmul_nt(t, ab, in[2]);  // (3x5)(3x5)^T
                    TensorRef mixed = matmul(t, ant, in[2]);
                    return weighted_sum(t, mixed, w);
                  });
}

TEST_CASE("row broadcast add differentiates correctly") {
  Rng rng(3);
  check_gradients({random_matrix(rng, 4, 6), random_matrix(rng, 1, 6)},
                  [](Tape& t, const std::vector<TensorRef>& in) {
                    return sum_all(t, gelu(t, add_rowvec(t, in[0], in[1])));
                  });
}

TEST_CASE("gather accumulates gradients through duplicate rows") {
  Rng rng(4);
  const Eigen::MatrixXd w = random_matrix(rng, 4, 3);
  check_gradients({random_matrix(rng, 5, 3)},
                  [w](Tape& t, const std::vector<TensorRef>& in) {
                    TensorRef g = gather_rows(t, in[0], {0, 2, 2, 4});
                    return weighted_sum(t, g, w);
                  });
}

TEST_CASE("replace_rows zeroes replaced gradients and feeds the row value") {
  Rng rng(5);
  const Eigen::MatrixXd w = random_matrix(rng, 5, 3);
  check_gradients({random_matrix(rng, 5, 3), random_matrix(rng, 1, 3)},
                  [w](Tape& t, const std::vector<TensorRef>& in) {
                    TensorRef r = replace_rows(t, in[0], {1, 3}, in[1]);
                    return weighted_sum(t, gelu(t, r), w);
                  });
}

TEST_CASE("slices and concatenations differentiate correctly") {
  Rng rng(6);
  const Eigen::MatrixXd w = random_matrix(rng, 6, 4);
  check_gradients(
      {random_matrix(rng, 4, 4), random_matrix(rng, 2, 4)},
      [w](Tape& t, const std::vector<TensorRef>& in) {
        const TensorRef parts[] = {in[0], in[1]};
        TensorRef stacked = concat_rows(t, parts);      // 6x4
        TensorRef left = slice_cols(t, stacked, 0, 2);  // 6x2
        TensorRef right = slice_cols(t, stacked, 2, 2);
        const TensorRef halves[] = {right, left};
        TensorRef swapped = concat_cols(t, halves);     // 6x4
        TensorRef head = slice_rows(t, swapped, 1, 4);
        TensorRef tail = slice_rows(t, swapped, 0, 2);
        const TensorRef out[] = {head, tail};
        return weighted_sum(t, concat_rows(t, out), w);
      });
}

TEST_CASE("layer normalization differentiates correctly") {
  Rng rng(7);
  const Eigen::MatrixXd w = random_matrix(rng, 5, 8);
  check_gradients({random_matrix(rng, 5, 8), random_matrix(rng, 1, 8),
                   random_matrix(rng, 1, 8)},
                  [w](Tape& t, const std::vector<TensorRef>& in) {
                    TensorRef y =
                        layer_norm_rows(t, in[0], in[1], in[2], 1e-5);
                    return weighted_sum(t, y, w);
                  });
}

TEST_CASE("softmax and log-softmax differentiate correctly") {
  Rng rng(8);
  const Eigen::MatrixXd w = random_matrix(rng, 3, 7);
  check_gradients({random_matrix(rng, 3, 7)},
                  [w](Tape& t, const std::vector<TensorRef>& in) {
                    return weighted_sum(t, softmax_rows(t, in[0]), w);
                  });
  check_gradients({random_matrix(rng, 3, 7)},
                  [w](Tape& t, const std::vector<TensorRef>& in) {
                    return weighted_sum(t, log_softmax_rows(t, in[0]), w);
                  });
  // Forward agreement: log_softmax == log(softmax).
  Tape tape;
  const Eigen::MatrixXd x = random_matrix(rng, 4, 9);
  TensorRef c = tape.constant(x);
  const Eigen::MatrixXd p = tape.value(softmax_rows(tape, c));
  const Eigen::MatrixXd lp = tape.value(log_softmax_rows(tape, c));
  CHECK((p.array().log() - lp.array()).abs().maxCoeff() < 1e-12);
  for (int r = 0; r < p.rows(); ++r)
    CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("reductions and stop_gradient behave as specified") {
  Rng rng(9);
  check_gradients({random_matrix(rng, 3, 3)},
                  [](Tape& t, const std::vector<TensorRef>& in) {
                    return mean_all(t, hadamard(t, in[0], in[0]));
                  });

  // stop_gradient blocks the flow entirely.
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(2, 2);
  Tape tape;
  TensorRef x = tape.leaf(random_matrix(rng, 2, 2), &grad);
  TensorRef frozen = stop_gradient(tape, x);
  tape.backward(sum_all(tape, hadamard(tape, frozen, frozen)));
  CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a zero loss produces zero gradients") {
  Rng rng(10);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(3, 3);
  Tape tape;
  TensorRef x = tape.leaf(random_matrix(rng, 3, 3), &grad);
  tape.backward(scale(tape, sum_all(tape, x), 0.0));
  CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward error handling") {
  Tape empty;
  CHECK_THROWS_AS(empty.backward(TensorRef{}), std::logic_error);

  Tape tape;
  TensorRef m = tape.constant(Eigen::MatrixXd::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(m), std::invalid_argument);  // not 1x1

  Tape tape2;
  TensorRef s = sum_all(tape2, tape2.constant(Eigen::MatrixXd::Ones(2, 2)));
  tape2.backward(s);
  CHECK_THROWS_AS(tape2.backward(s), std::logic_error);  // already swept
}

TEST_CASE("corrupted gelu adjoint is visible to finite differences") {
  Rng rng(11);
  const Eigen::MatrixXd x = random_matrix(rng, 2, 3);
  Eigen::MatrixXd analytic = Eigen::MatrixXd::Zero(2, 3);
  Tape tape;
  tape.corrupt_gelu_backward(true);
  TensorRef leaf = tape.leaf(x, &analytic);
  tape.backward(sum_all(tape, gelu(tape, leaf)));

  // Reference adjoint from an honest tape.
  Eigen::MatrixXd honest = Eigen::MatrixXd::Zero(2, 3);
  Tape clean;
  TensorRef leaf2 = clean.leaf(x, &honest);
  clean.backward(sum_all(clean, gelu(clean, leaf2)));

  CHECK((analytic - honest).cwiseAbs().maxCoeff() > 1e-4);
  CHECK((analytic - 1.01 * honest).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward values are deterministic across identical tapes") {
  Rng rng(12);
  const Eigen::MatrixXd a = random_matrix(rng, 4, 4);
  const Eigen::MatrixXd b = random_matrix(rng, 4, 4);
  auto run = [&]() {
    Tape t;
    TensorRef x = t.constant(a);
    TensorRef y = t.constant(b);
    TensorRef z = softmax_rows(t, matmul(t, gelu(t, x), y));
    return Eigen::MatrixXd(t.value(z));
  };
  CHECK(run() == run());
}
