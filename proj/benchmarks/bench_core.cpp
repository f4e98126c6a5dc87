#include "spcagan/augment.hpp"
#include "spcagan/detect.hpp"
#include "spcagan/gan.hpp"
#include "spcagan/linmetrics.hpp"

#include <benchmark/benchmark.h>

using namespace spcagan;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd;
  return Matrix::NullaryExpr(rows, cols, [&] { return nd(rng); });
}

features::FeatureMatrix labelled(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  features::FeatureMatrix fm;
  fm.values = random_matrix(rows, cols, seed);
  for (Eigen::Index i = 0; i < rows; ++i) fm.labels.push_back(i % 10 == 0 ? 1 : 0);
  for (Eigen::Index j = 0; j < cols; ++j) fm.feature_names.push_back("f" + std::to_string(j));
  return fm;
}

void BM_Spca(benchmark::State& state) {
  const auto n = state.range(0);
  const Matrix a = random_matrix(n, 40, 1), b = random_matrix(n, 40, 2);
  for (auto _ : state) benchmark::DoNotOptimize(linmetrics::spca(a, b, 5));
}
BENCHMARK(BM_Spca)->Arg(128)->Arg(1024);

void BM_SpcaRegularizer(benchmark::State& state) {
  const Matrix a = random_matrix(128, 40, 3), b = random_matrix(128, 40, 4);
  for (auto _ : state) benchmark::DoNotOptimize(gan::spca_regularizer(a, b, 2));
}
BENCHMARK(BM_SpcaRegularizer);

void BM_Smote(benchmark::State& state) {
  const auto fm = labelled(state.range(0), 40, 5);
  augment::AugmentPlan plan;
  plan.method = augment::Method::SMOTE;
  plan.per_class_target = augment::balance_targets(fm);
  for (auto _ : state) benchmark::DoNotOptimize(augment::smote(fm, plan));
}
BENCHMARK(BM_Smote)->Arg(500)->Arg(2000);

void BM_GanStep(benchmark::State& state) {
  const auto fm = labelled(1000, 40, 6);
  gan::GanConfig cfg;
  cfg.mode = static_cast<gan::Mode>(state.range(0));
  cfg.feature_dim = 40;
  cfg.gen_hidden = {32, 64, 128};
  gan::GanTrainer trainer(fm.values, fm.labels, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
  state.SetLabel(gan::to_string(cfg.mode));
}
BENCHMARK(BM_GanStep)->DenseRange(0, 3);

void BM_DetectorPredict(benchmark::State& state) {
  const auto fm = labelled(512, 40, 7);
  detect::DetectorConfig cfg;
  cfg.kind = static_cast<detect::Kind>(state.range(0));
  cfg.feature_dim = 40;
  cfg.epochs = 1;
  auto det = detect::Detector::build(cfg);
  det.fit(fm);
  for (auto _ : state) benchmark::DoNotOptimize(det.predict(fm.values));
  state.SetLabel(detect::to_string(cfg.kind));
}
BENCHMARK(BM_DetectorPredict)->DenseRange(0, 4);

}  // namespace

BENCHMARK_MAIN();
