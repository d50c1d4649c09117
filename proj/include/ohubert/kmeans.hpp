#pragma once

// Lloyd's k-means with k-means++ seeding, plus frame-label assignment.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ohubert/features.hpp"
#include "ohubert/rng.hpp"

namespace ohubert {

struct Codebook {
  Eigen::MatrixXd centroids;  // C x d
  int size() const { return static_cast<int>(centroids.rows()); }
};

struct FrameLabels {
  std::vector<int> labels;  // in [0, C)
  std::string source_id;
};

namespace kmeans_detail {

// Nearest centroid; equidistant ties go to the lowest index.
inline int nearest(const Eigen::MatrixXd& centroids, const Eigen::RowVectorXd& x,
                   double* dist_out = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist_out) *dist_out = best_d;
  return best;
}

}  // namespace kmeans_detail

struct KMeansResult {
  Codebook codebook;
  std::vector<double> inertia_per_iter;
  int iters_run = 0;
};

inline KMeansResult kmeans_fit(const Eigen::MatrixXd& X, int C, int iters,
                               uint64_t seed) {
  const int N = static_cast<int>(X.rows());
  if (N < C) {
    throw std::invalid_argument("kmeans_fit: fewer vectors (" + std::to_string(N) +
                                ") than clusters (" + std::to_string(C) + ")");
  }
  if (C < 1) throw std::invalid_argument("kmeans_fit: C must be >= 1");
  Rng rng(seed);

  // k-means++ initialization
  Eigen::MatrixXd centroids(C, X.cols());
  std::vector<double> d2(N, std::numeric_limits<double>::infinity());
  centroids.row(0) = X.row(static_cast<Eigen::Index>(rng.uniform_int(N)));
  for (int c = 1; c < C; ++c) {
    double total = 0.0;
    for (int i = 0; i < N; ++i) {
      const double d = (X.row(i) - centroids.row(c - 1)).squaredNorm();
      d2[i] = std::min(d2[i], d);
      total += d2[i];
    }
    int pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      for (int i = 0; i < N; ++i) {
        acc += d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<int>(rng.uniform_int(N));
    }
    centroids.row(c) = X.row(pick);
  }

  KMeansResult res;
  std::vector<int> assign(N, -1), prev_assign(N, -2);
  for (int it = 0; it < iters; ++it) {
    double inertia = 0.0;
    for (int i = 0; i < N; ++i) {
      double d;
      assign[i] = kmeans_detail::nearest(centroids, X.row(i), &d);
      inertia += d;
    }
    res.inertia_per_iter.push_back(inertia);
    res.iters_run = it + 1;
    if (assign == prev_assign) break;
    prev_assign = assign;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(C, X.cols());
    std::vector<int> counts(C, 0);
    for (int i = 0; i < N; ++i) {
      sums.row(assign[i]) += X.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < C; ++c) {
      if (counts[c] > 0) {
        centroids.row(c) = sums.row(c) / counts[c];
      } else {
        // reseed an empty cluster to the point farthest from its centroid
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < N; ++i) {
          const double d = (X.row(i) - centroids.row(assign[i])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids.row(c) = X.row(far);
      }
    }
  }
  res.codebook.centroids = std::move(centroids);
  return res;
}

// Nearest-centroid labels, then nearest-neighbor resampling along time to
// exactly encoder_frame_count entries.
inline FrameLabels assign_labels(const FeatureFrames& features, const Codebook& cb,
                                 int encoder_frame_count) {
  if (features.frames.cols() != cb.centroids.cols()) {
    throw std::invalid_argument("assign_labels: dimension mismatch");
  }
  if (encoder_frame_count < 1) {
    throw std::invalid_argument("assign_labels: encoder_frame_count must be >= 1");
  }
  const int T = static_cast<int>(features.frames.rows());
  if (T < 1) throw std::invalid_argument("assign_labels: no feature frames");

  std::vector<int> raw(T);
  for (int i = 0; i < T; ++i) {
    raw[i] = kmeans_detail::nearest(cb.centroids, features.frames.row(i));
  }
  FrameLabels out;
  out.source_id = features.source_id;
  out.labels.resize(encoder_frame_count);
  for (int j = 0; j < encoder_frame_count; ++j) {
    const int src =
        encoder_frame_count == 1
            ? 0
            : static_cast<int>(std::llround(static_cast<double>(j) * (T - 1) /
                                            (encoder_frame_count - 1)));
    out.labels[j] = raw[std::min(src, T - 1)];
  }
  return out;
}

}  // namespace ohubert
