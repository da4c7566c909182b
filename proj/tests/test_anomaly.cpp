#include <doctest.h>

#include <jbot/anomaly.hpp>

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace jbot;

namespace {

ReferenceSet vectors_only(const Mat<double>& rows) {
  ReferenceSet ref;
  ref.vectors = rows;
  return ref;
}

Mat<double> random_rows(std::uint64_t seed, long n, long d, bool unit) {
  Rng rng = Rng::stream(seed, "datagen");
  Mat<double> x(n, d);
  for (long i = 0; i < n; ++i) {
    for (long c = 0; c < d; ++c) x(i, c) = rng.normal();
    if (unit) x.row(i) /= x.row(i).norm();
  }
  return x;
}

EmbeddingSet normalized_blobs(std::uint64_t seed, int per_class, long d) {
  Rng rng = Rng::stream(seed, "datagen");
  EmbeddingSet e;
  e.vectors = Mat<double>(2 * per_class, d);
  for (int i = 0; i < 2 * per_class; ++i) {
    int cls = i < per_class ? 0 : 1;
    for (long c = 0; c < d; ++c) e.vectors(i, c) = rng.normal() * 0.3;
    e.vectors(i, 0) += cls == 0 ? 1.0 : -1.0;
    e.labels.push_back(cls);
  }
  l2_normalize(e);
  return e;
}

}  // namespace

TEST_CASE("knn distance score") {
  Mat<double> two(2, 2);
  two << 0, 0, 0, 3;
  ReferenceSet ref = vectors_only(two);
  Eigen::RowVectorXd z(2);
  z << 0, 1;
  CHECK(score_knn(z, ref, 1) == 1.0);
  CHECK(score_knn(z, ref, 2) == doctest::Approx(1.5).epsilon(1e-12));

  Eigen::RowVectorXd member = two.row(1);
  CHECK(score_knn(member, ref, 1) == 0.0);

  // brute force on random points
  Mat<double> cloud = random_rows(71, 50, 4, false);
  ReferenceSet big = vectors_only(cloud);
  Eigen::RowVectorXd q(4);
  q << 0.3, -0.2, 0.8, 0.1;
  std::vector<double> d;
  for (long i = 0; i < 50; ++i) d.push_back((cloud.row(i) - q).norm());
  std::sort(d.begin(), d.end());
  for (int k : {1, 5, 30}) {
    double want = std::accumulate(d.begin(), d.begin() + k, 0.0) / k;
    CHECK(score_knn(q, big, k) == doctest::Approx(want).epsilon(1e-12));
  }

  CHECK_THROWS_AS(score_knn(z, ref, 0), AnomalyError);
  CHECK_THROWS_AS(score_knn(z, ref, 3), AnomalyError);
  ReferenceSet empty;
  empty.vectors = Mat<double>(0, 2);
  CHECK_THROWS_AS(score_knn(z, empty, 1), AnomalyError);
}

TEST_CASE("temperature-scaled cosine score") {
  Mat<double> basis(2, 3);
  basis << 1, 0, 0, 0, 1, 0;
  ReferenceSet ref = vectors_only(basis);
  Eigen::RowVectorXd e1(3), e3(3);
  e1 << 1, 0, 0;
  e3 << 0, 0, 1;
  CHECK(score_cosine(e1, ref, 1, 0.05) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(score_cosine(e3, ref, 1, 0.05) == doctest::Approx(0.0).epsilon(1e-12));
  // a perfect match scores lower (less anomalous) than an orthogonal probe
  CHECK(score_cosine(e1, ref, 2, 0.05) < score_cosine(e3, ref, 2, 0.05));

  // log-sum-exp oracle over the top-k similarities
  Mat<double> cloud = random_rows(72, 12, 5, true);
  ReferenceSet big = vectors_only(cloud);
  Eigen::RowVectorXd q = random_rows(73, 1, 5, true).row(0);
  std::vector<double> sims;
  for (long i = 0; i < 12; ++i) sims.push_back(cloud.row(i).dot(q));
  std::sort(sims.begin(), sims.end(), std::greater<double>());
  const double tau = 0.05;
  for (int k : {1, 3, 12}) {
    double acc = 0;
    for (int i = 0; i < k; ++i) acc += std::exp(sims[static_cast<std::size_t>(i)] / tau);
    double want = -tau * std::log(acc / k);
    CHECK(score_cosine(q, big, k, tau) == doctest::Approx(want).epsilon(1e-9));
  }

  CHECK_THROWS_AS(score_cosine(e1, ref, 1, 0.0), AnomalyError);
  CHECK_THROWS_AS(score_cosine(e1, ref, 5, 0.05), AnomalyError);
}

TEST_CASE("class-conditional mahalanobis") {
  ReferenceSet ref;
  ref.class_means[0] = Eigen::Vector3d(1, 0, 0);
  ref.class_means[1] = Eigen::Vector3d(0, 4, 0);
  ref.tied_cov_inv = Eigen::MatrixXd::Identity(3, 3);

  Eigen::RowVectorXd at_mean(3);
  at_mean << 1, 0, 0;
  CHECK(score_mahalanobis(at_mean, ref) == 0.0);

  Eigen::RowVectorXd unit_off(3);
  unit_off << 1, 0, 1;
  CHECK(score_mahalanobis(unit_off, ref) == doctest::Approx(1.0).epsilon(1e-12));

  // the nearer class wins the min
  Eigen::RowVectorXd near_b(3);
  near_b << 0, 3.5, 0;
  CHECK(score_mahalanobis(near_b, ref) == doctest::Approx(0.25).epsilon(1e-12));

  // explicit-inverse oracle with a dense covariance
  Rng rng = Rng::stream(74, "datagen");
  Eigen::MatrixXd a(3, 3);
  for (long r = 0; r < 3; ++r)
    for (long c = 0; c < 3; ++c) a(r, c) = rng.normal();
  Eigen::MatrixXd cov = a.transpose() * a + 0.5 * Eigen::MatrixXd::Identity(3, 3);
  ReferenceSet dense;
  dense.class_means[0] = Eigen::Vector3d(0.2, -0.5, 0.9);
  dense.tied_cov_inv = cov.inverse();
  Eigen::RowVectorXd zq(3);
  zq << 1.1, 0.3, -0.7;
  Eigen::VectorXd diff = zq.transpose() - dense.class_means[0];
  double want = 0;
  for (long r = 0; r < 3; ++r)
    for (long c = 0; c < 3; ++c) want += diff(r) * dense.tied_cov_inv(r, c) * diff(c);
  CHECK(score_mahalanobis(zq, dense) == doctest::Approx(want).epsilon(1e-8));

  ReferenceSet unfitted;
  CHECK_THROWS_AS(score_mahalanobis(at_mean, unfitted), AnomalyError);
}

TEST_CASE("gmm negative log-likelihood") {
  ReferenceSet ref;
  ref.gmm.weights = {1.0};
  ref.gmm.means = {Eigen::Vector2d(0.3, -0.4)};
  ref.gmm.covs = {Eigen::MatrixXd::Identity(2, 2)};

  Eigen::RowVectorXd at_mean(2);
  at_mean << 0.3, -0.4;
  CHECK(score_gmm(at_mean, ref) == doctest::Approx(std::log(2.0 * M_PI)).epsilon(1e-12));

  Eigen::RowVectorXd off(2);
  off << 1.3, -0.4;  // one sigma out costs exactly 1/2
  CHECK(score_gmm(off, ref) == doctest::Approx(std::log(2.0 * M_PI) + 0.5).epsilon(1e-12));

  // splitting a component in two identical halves changes nothing
  ReferenceSet split;
  split.gmm.weights = {0.5, 0.5};
  split.gmm.means = {ref.gmm.means[0], ref.gmm.means[0]};
  split.gmm.covs = {ref.gmm.covs[0], ref.gmm.covs[0]};
  Mat<double> probes = random_rows(75, 10, 2, false);
  for (long i = 0; i < probes.rows(); ++i) {
    Eigen::RowVectorXd z = probes.row(i);
    CHECK(score_gmm(z, split) == doctest::Approx(score_gmm(z, ref)).epsilon(1e-12));
  }

  ReferenceSet unfitted;
  CHECK_THROWS_AS(score_gmm(at_mean, unfitted), AnomalyError);
}

TEST_CASE("em recovers well-separated clusters") {
  Rng rng = Rng::stream(76, "datagen");
  Mat<double> x(48, 2);
  for (long i = 0; i < 48; ++i) {
    double cx = i < 24 ? -3.0 : 3.0;
    x(i, 0) = cx + rng.normal() * 0.4;
    x(i, 1) = rng.normal() * 0.4;
  }
  ReferenceOptions opt;
  opt.gmm_components = 2;
  Gmm g = fit_gmm(x, 2, opt);

  REQUIRE(g.ll_trace.size() >= 2);
  for (std::size_t i = 1; i < g.ll_trace.size(); ++i)
    CHECK(g.ll_trace[i] >= g.ll_trace[i - 1] - 1e-9);

  std::vector<double> mx = {g.means[0](0), g.means[1](0)};
  std::sort(mx.begin(), mx.end());
  CHECK(mx[0] == doctest::Approx(-3.0).epsilon(0.15));
  CHECK(mx[1] == doctest::Approx(3.0).epsilon(0.15));
  CHECK(g.weights[0] == doctest::Approx(0.5).epsilon(0.15));

  Gmm again = fit_gmm(x, 2, opt);
  REQUIRE(again.ll_trace.size() == g.ll_trace.size());
  CHECK(again.ll_trace.back() == g.ll_trace.back());

  CHECK_THROWS_AS(fit_gmm(x.topRows(1), 2, opt), AnomalyError);
}

TEST_CASE("degenerate covariance demands regularization") {
  Mat<double> collapsed(20, 2);
  for (long i = 0; i < 20; ++i) collapsed.row(i) << 1.0, 2.0;  // a single repeated point
  ReferenceOptions opt;
  opt.gmm_components = 1;
  opt.cov_regularization = 0.0;
  CHECK_THROWS_WITH_AS(fit_gmm(collapsed, 1, opt),
                       doctest::Contains("enable regularization"), AnomalyError);

  opt.cov_regularization = 1e-6;  // the default escape hatch works
  Gmm g = fit_gmm(collapsed, 1, opt);
  CHECK(g.weights[0] == doctest::Approx(1.0));
}

TEST_CASE("reference fitting from embeddings") {
  EmbeddingSet bg = normalized_blobs(77, 30, 4);
  ReferenceOptions opt;
  opt.gmm_components = 2;

  EmbeddingSet raw = bg;
  raw.normalized = false;
  CHECK_THROWS_AS(fit_reference(raw, opt), AnomalyError);

  ReferenceSet ref = fit_reference(bg, opt);
  REQUIRE(ref.class_means.size() == 2);
  for (int cls : {0, 1}) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(4);
    long n = 0;
    for (long i = 0; i < bg.vectors.rows(); ++i)
      if (bg.labels[static_cast<std::size_t>(i)] == cls) {
        mu += bg.vectors.row(i).transpose();
        ++n;
      }
    mu /= static_cast<double>(n);
    CHECK((ref.class_means[cls] - mu).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK((ref.tied_cov - ref.tied_cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  // members score as unremarkable, a far-off probe as anomalous
  Eigen::RowVectorXd insider = bg.vectors.row(3);
  Eigen::RowVectorXd outsider(4);
  outsider << 0, 0, 0, 1;
  CHECK(score_knn(insider, ref, 5) < score_knn(outsider, ref, 5));
  CHECK(score_cosine(insider, ref, 5, 0.05) < score_cosine(outsider, ref, 5, 0.05));
  CHECK(score_mahalanobis(insider, ref) < score_mahalanobis(outsider, ref));
  CHECK(score_gmm(insider, ref) < score_gmm(outsider, ref));

  // reference row order is irrelevant to the neighbor scores
  ReferenceSet shuffled = ref;
  std::vector<long> perm(static_cast<std::size_t>(ref.vectors.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  Rng prng = Rng::stream(78, "datagen");
  prng.shuffle(perm);
  for (std::size_t i = 0; i < perm.size(); ++i)
    shuffled.vectors.row(static_cast<long>(i)) = ref.vectors.row(perm[i]);
  for (int probe = 0; probe < 4; ++probe) {
    Eigen::RowVectorXd z = random_rows(80 + static_cast<std::uint64_t>(probe), 1, 4, true).row(0);
    CHECK(score_knn(z, shuffled, 7) == doctest::Approx(score_knn(z, ref, 7)).epsilon(1e-12));
    CHECK(score_cosine(z, shuffled, 7, 0.05) ==
          doctest::Approx(score_cosine(z, ref, 7, 0.05)).epsilon(1e-12));
  }

  // tiny input perturbations move every score only slightly
  Eigen::RowVectorXd z0 = random_rows(90, 1, 4, true).row(0);
  Eigen::RowVectorXd dz = Eigen::RowVectorXd::Constant(4, 1e-4 / 2.0);
  Eigen::RowVectorXd z1 = z0 + dz;
  CHECK(std::abs(score_knn(z1, ref, 5) - score_knn(z0, ref, 5)) < 1e-2);
  CHECK(std::abs(score_cosine(z1, ref, 5, 0.05) - score_cosine(z0, ref, 5, 0.05)) < 1e-2);
  CHECK(std::abs(score_mahalanobis(z1, ref) - score_mahalanobis(z0, ref)) < 1e-1);
  CHECK(std::abs(score_gmm(z1, ref) - score_gmm(z0, ref)) < 1e-1);
}

TEST_CASE("anomaly report pools signals") {
  std::vector<double> bg = {0.1, 0.2, 0.3};
  std::map<int, std::vector<double>> sig;
  sig[2] = {1.0, 1.1};
  sig[5] = {2.0, 2.1};
  AnomalyReport rep = evaluate_anomaly(bg, sig);
  REQUIRE(rep.per_signal.size() == 2);
  CHECK(rep.per_signal.at(2).auc == 1.0);
  CHECK(rep.per_signal.at(5).auc == 1.0);
  CHECK(rep.combined.auc == 1.0);

  // equal-size signals: the pooled auc is exactly the per-signal mean
  Rng rng = Rng::stream(79, "datagen");
  std::vector<double> bg2;
  for (int i = 0; i < 400; ++i) bg2.push_back(rng.uniform());
  std::map<int, std::vector<double>> sig2;
  for (int i = 0; i < 200; ++i) sig2[0].push_back(rng.uniform() - 0.2);
  for (int i = 0; i < 200; ++i) sig2[1].push_back(rng.uniform() + 2.0);
  AnomalyReport rep2 = evaluate_anomaly(bg2, sig2);
  double a0 = rep2.per_signal.at(0).auc, a1 = rep2.per_signal.at(1).auc;
  CHECK(a0 < 0.5);
  CHECK(a1 == 1.0);
  CHECK(rep2.combined.auc == doctest::Approx(0.5 * (a0 + a1)).epsilon(1e-12));

  // scores drawn from the same law are indistinguishable
  std::vector<double> null_bg;
  std::map<int, std::vector<double>> null_sig;
  for (int i = 0; i < 2000; ++i) null_bg.push_back(rng.normal());
  for (int i = 0; i < 2000; ++i) null_sig[0].push_back(rng.normal());
  CHECK(evaluate_anomaly(null_bg, null_sig).combined.auc == doctest::Approx(0.5).epsilon(0.06));

  CHECK_THROWS_AS(evaluate_anomaly({}, sig), AnomalyError);
  std::map<int, std::vector<double>> holed = sig;
  holed[7] = {};
  CHECK_THROWS_AS(evaluate_anomaly(bg, holed), AnomalyError);
  CHECK_THROWS_AS(evaluate_anomaly(bg, {}), AnomalyError);
}
