#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedhca/toy_models.hpp"
#include "fedhca/verify.hpp"

using namespace fedhca;

namespace {

ArchSpec small_arch() {
  ArchSpec arch;
  arch.input_dim = 3;
  arch.encoder_widths = {4, 3};
  arch.decoder_widths = {3};
  return arch;
}

std::vector<TaskSpec> two_tasks() {
  return {{"reg", TaskKind::regression, 1}, {"cls", TaskKind::binary_classification, 1}};
}

Batch make_batch(const ArchSpec& arch, const std::vector<TaskSpec>& tasks, std::size_t n,
                 std::uint64_t seed) {
  auto rng = make_rng(seed, "test/batch");
  return fedhca::detail::random_batch(arch, tasks, n, rng);
}

}  // namespace

TEST_CASE("init_model is deterministic in the seed") {
  auto a = init_model(small_arch(), two_tasks(), 42);
  auto b = init_model(small_arch(), two_tasks(), 42);
  CHECK(tree_equal(a.encoder, b.encoder));
  CHECK(tree_equal(a.decoders.at("reg"), b.decoders.at("reg")));
  CHECK(tree_equal(a.heads.at("cls"), b.heads.at("cls")));

  auto c = init_model(small_arch(), two_tasks(), 43);
  CHECK_FALSE(tree_equal(a.encoder, c.encoder));
}

TEST_CASE("init_model draws weights within the fan-in bound") {
  ArchSpec arch;
  arch.input_dim = 4;
  arch.encoder_widths = {6};
  arch.decoder_widths = {4};
  auto model = init_model(arch, {{"r", TaskKind::regression, 1}}, 7);
  const auto& w = model.encoder.layers[0];  // fan_in = 4, bound 0.5
  for (double v : w.data) CHECK(std::abs(v) <= 0.5);
  for (double v : model.encoder.layers[1].data) CHECK(v == 0.0);  // biases zero
}

TEST_CASE("init_model rejects degenerate architectures") {
  ArchSpec arch = small_arch();
  arch.encoder_widths = {4, 0};
  CHECK_THROWS_AS(init_model(arch, two_tasks(), 1), std::invalid_argument);
  CHECK_THROWS_AS(init_model(small_arch(), {}, 1), std::invalid_argument);
}

TEST_CASE("zero-weight head on zero targets has zero head gradient") {
  ArchSpec arch = small_arch();
  std::vector<TaskSpec> tasks = {{"reg", TaskKind::regression, 1}};
  auto model = init_model(arch, tasks, 5);
  auto& head = model.heads.at("reg");
  for (auto& l : head.layers) std::fill(l.data.begin(), l.data.end(), 0.0);

  Batch batch = make_batch(arch, tasks, 6, 9);
  std::fill(batch.labels.at("reg").values.begin(), batch.labels.at("reg").values.end(), 0.0);

  auto lg = loss_and_grad(model, batch, tasks);
  for (const auto& l : lg.grad.heads.at("reg").layers) {
    for (double v : l.data) CHECK(v == 0.0);
  }
  // a zero head also blocks everything upstream
  for (const auto& l : lg.grad.encoder.layers) {
    for (double v : l.data) CHECK(v == 0.0);
  }
}

TEST_CASE("encoder gradient under one task equals that task's backprop alone") {
  auto model = init_model(small_arch(), two_tasks(), 11);
  Batch batch = make_batch(small_arch(), model.tasks, 8, 21);

  auto both = loss_and_grad(model, batch, model.tasks);
  auto only_reg = loss_and_grad(model, batch, {model.task("reg")});
  auto only_cls = loss_and_grad(model, batch, {model.task("cls")});

  // single task: the encoder gradient is that task's contribution
  CHECK(only_reg.task_loss.at("reg") == both.task_loss.at("reg"));

  // additivity: grad under {reg, cls} == grad under {reg} + grad under {cls}
  ParamTree summed = tree_add_scaled(only_reg.grad.encoder, 1.0, only_cls.grad.encoder);
  CHECK(tree_max_abs_diff(summed, both.grad.encoder) <= 1e-12);
}

TEST_CASE("analytic gradients match central finite differences") {
  auto result = verify_gradients(4, 77);
  INFO(result.detail);
  CHECK(result.passed);
}

TEST_CASE("loss_and_grad aborts on a non-finite forward pass") {
  auto model = init_model(small_arch(), two_tasks(), 3);
  Batch batch = make_batch(small_arch(), model.tasks, 4, 33);
  batch.features[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH(loss_and_grad(model, batch, model.tasks),
                    Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("sgd_step basics") {
  auto model = init_model(small_arch(), two_tasks(), 13);
  Batch batch = make_batch(small_arch(), model.tasks, 8, 31);
  auto lg = loss_and_grad(model, batch, model.tasks);

  SECTION("lr = 0 leaves the model unchanged") {
    auto stepped = sgd_step(model, lg.grad, 0.0);
    CHECK(tree_equal(stepped.encoder, model.encoder));
    CHECK(tree_equal(stepped.heads.at("cls"), model.heads.at("cls")));
  }
  SECTION("zero gradient leaves the model unchanged") {
    ModelGrad zero;
    zero.encoder = tree_zeros_like(model.encoder);
    for (const auto& [t, d] : model.decoders) zero.decoders.emplace(t, tree_zeros_like(d));
    for (const auto& [t, h] : model.heads) zero.heads.emplace(t, tree_zeros_like(h));
    auto stepped = sgd_step(model, zero, 0.5);
    CHECK(tree_equal(stepped.encoder, model.encoder));
  }
  SECTION("scalar arithmetic: 1 - 0.1*2 = 0.8") {
    ClientModel scalar = model;
    scalar.encoder.layers[0].data[0] = 1.0;
    ModelGrad g;
    g.encoder = tree_zeros_like(scalar.encoder);
    g.encoder.layers[0].data[0] = 2.0;
    auto stepped = sgd_step(scalar, g, 0.1);
    CHECK(stepped.encoder.layers[0].data[0] == Catch::Approx(0.8));
  }
  SECTION("heads are updated too") {
    auto stepped = sgd_step(model, lg.grad, 0.1);
    CHECK_FALSE(tree_equal(stepped.heads.at("reg"), model.heads.at("reg")));
  }
}

TEST_CASE("evaluate computes RMSE and accuracy with direction flags") {
  auto model = init_model(small_arch(), two_tasks(), 17);
  Batch data = make_batch(small_arch(), model.tasks, 32, 41);

  SECTION("a perfect predictor scores RMSE 0 and accuracy 1") {
    auto reg_pred = predict(model, data, "reg");
    data.labels.at("reg").values = reg_pred;
    auto cls_pred = predict(model, data, "cls");
    auto& cls_labels = data.labels.at("cls").values;
    for (std::size_t i = 0; i < cls_pred.size(); ++i) cls_labels[i] = cls_pred[i] > 0.0 ? 1.0 : 0.0;

    auto metrics = evaluate(model, data, model.tasks);
    CHECK(metrics.at("reg").value == 0.0);
    CHECK(metrics.at("cls").value == 1.0);
  }

  SECTION("a constant-zero predictor has RMSE = sqrt(mean of squared targets)") {
    ClientModel zero = model;
    for (auto& l : zero.heads.at("reg").layers) std::fill(l.data.begin(), l.data.end(), 0.0);
    double sq = 0.0;
    for (double y : data.labels.at("reg").values) sq += y * y;
    double expected = std::sqrt(sq / static_cast<double>(data.size));
    auto metrics = evaluate(zero, data, model.tasks);
    CHECK(metrics.at("reg").value == Catch::Approx(expected));
  }

  SECTION("direction flags: rmse has l=1, accuracy l=0") {
    auto metrics = evaluate(model, data, model.tasks);
    CHECK(direction_flag(metrics.at("reg").direction) == 1);
    CHECK(direction_flag(metrics.at("cls").direction) == 0);
  }
}
