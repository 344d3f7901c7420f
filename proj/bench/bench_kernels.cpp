#include <benchmark/benchmark.h>

#include "poisonrec/detect.hpp"
#include "poisonrec/kernels.hpp"
#include "poisonrec/neumf.hpp"

using namespace poisonrec;

namespace {

// ML-100K shape.
constexpr std::size_t kUsers = 943;
constexpr std::size_t kItems = 1682;

const NeumfModel& model() {
  static const NeumfModel m = NeumfModel::initialized(kUsers, kItems, NeumfConfig{}, 1);
  return m;
}

const InteractionMatrix& ratings() {
  static const InteractionMatrix m = [] {
    auto rng = make_rng(1, 2);
    std::vector<Triplet> t;
    for (std::size_t u = 0; u < kUsers; ++u) {
      for (std::size_t i = 0; i < kItems; ++i) {
        if (uniform_real(rng) < 0.063) {
          t.push_back({static_cast<Index>(u), static_cast<Index>(i), 1.0 + static_cast<double>(uniform_index(rng, 5)),
                       kNoTimestamp});
        }
      }
    }
    return InteractionMatrix::from_triplets(kUsers, kItems, 5.0, DatasetKind::explicit_ratings, t);
  }();
  return m;
}

const ScoreMatrix& scores() {
  static const ScoreMatrix s = predict_matrix(model());
  return s;
}

void BM_PredictMatrix(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(predict_matrix(model()));
}
BENCHMARK(BM_PredictMatrix)->Unit(benchmark::kMillisecond);

void BM_PredictMatrixSerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(predict_matrix_serial(model()));
}
BENCHMARK(BM_PredictMatrixSerial)->Unit(benchmark::kMillisecond);

void BM_TopKAll(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(top_k_all(scores(), ratings(), kUsers, 10));
}
BENCHMARK(BM_TopKAll)->Unit(benchmark::kMillisecond);

void BM_TopKAllSerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(top_k_all_serial(scores(), ratings(), kUsers, 10));
}
BENCHMARK(BM_TopKAllSerial)->Unit(benchmark::kMillisecond);

void BM_Features(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(extract_all_features(ratings()));
}
BENCHMARK(BM_Features)->Unit(benchmark::kMillisecond);

void BM_FeaturesSerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(extract_all_features_serial(ratings()));
}
BENCHMARK(BM_FeaturesSerial)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
