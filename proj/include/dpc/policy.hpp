#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include <nlohmann/json.hpp>

#include "dpc/errors.hpp"
#include "dpc/experts.hpp"
#include "dpc/interact.hpp"
#include "dpc/pose.hpp"
#include "dpc/render.hpp"
#include "dpc/rng.hpp"

namespace dpc {

using ordered_json = nlohmann::ordered_json;

// Network shape. The image enters as 64x64x3 mean-pooled 2x2 to 32x32x3; the
// trunk is two affine+tanh layers; each pose head emits 100 logits and the
// failure head rides the same feature.
struct PolicyDims {
  int d = 256;      // trunk feature width
  int img = 3072;   // pooled image vector, 3 * 32 * 32
  int emb = 16;     // task embedding width
  int cond = 344;   // conditioning vector width
  int n_cat = 12;
  int n_heads = 9;
  int n_bins = 100;
  int n_fail = 5;   // four failure classes + success
  int rank = 4;     // adapter rank

  int input() const { return img + emb + cond; }
  int head_rows() const { return n_heads * n_bins; }

  bool operator==(const PolicyDims&) const = default;
};

// Low-rank additive deltas on the pose heads: head h gets B_h * A_h + bias_h,
// with A rows [h*rank, (h+1)*rank) and B rows [h*n_bins, (h+1)*n_bins).
struct AdapterParams {
  Eigen::MatrixXd A;     // (n_heads*rank) x d
  Eigen::MatrixXd B;     // head_rows x rank
  Eigen::VectorXd bias;  // head_rows
};

struct PolicyParams {
  int version = 1;
  PolicyDims dims;
  Eigen::MatrixXd W1;  // d x input
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;  // d x d
  Eigen::VectorXd b2;
  Eigen::MatrixXd head_W;    // head_rows x d
  Eigen::VectorXd head_b;    // head_rows
  Eigen::MatrixXd detect_W;  // n_fail x d
  Eigen::VectorXd detect_b;  // n_fail
  Eigen::MatrixXd task_emb;  // n_cat x emb
  AdapterParams adapters;
  std::vector<std::uint8_t> seen;  // per category; unseen ones use the mean embedding
  std::uint64_t rng_seed = 0;
};

inline PolicyParams init_policy(const PolicyDims& dims, const std::vector<std::uint8_t>& seen,
                                std::uint64_t seed) {
  if (static_cast<int>(seen.size()) != dims.n_cat)
    throw ShapeMismatch("seen mask size does not match category count");
  PolicyParams p;
  p.dims = dims;
  p.seen = seen;
  p.rng_seed = seed;
  Rng rng(Rng::derive(seed, "policy-init"));
  auto fill = [&rng](Eigen::MatrixXd& m, int rows, int cols, double scale) {
    m.resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = rng.normal() * scale;
  };
  fill(p.W1, dims.d, dims.input(), 1.0 / std::sqrt(static_cast<double>(dims.input())));
  p.b1 = Eigen::VectorXd::Zero(dims.d);
  fill(p.W2, dims.d, dims.d, 1.0 / std::sqrt(static_cast<double>(dims.d)));
  p.b2 = Eigen::VectorXd::Zero(dims.d);
  fill(p.head_W, dims.head_rows(), dims.d, 1.0 / std::sqrt(static_cast<double>(dims.d)));
  p.head_b = Eigen::VectorXd::Zero(dims.head_rows());
  // zero until trained; an all-zero failure head marks the detector untrained
  p.detect_W = Eigen::MatrixXd::Zero(dims.n_fail, dims.d);
  p.detect_b = Eigen::VectorXd::Zero(dims.n_fail);
  fill(p.task_emb, dims.n_cat, dims.emb, 0.1);
  fill(p.adapters.A, dims.n_heads * dims.rank, dims.d, 0.01);
  p.adapters.B = Eigen::MatrixXd::Zero(dims.head_rows(), dims.rank);
  p.adapters.bias = Eigen::VectorXd::Zero(dims.head_rows());
  return p;
}

// pose heads with the adapter deltas folded in
inline Eigen::MatrixXd effective_head_W(const PolicyParams& p) {
  Eigen::MatrixXd w = p.head_W;
  for (int h = 0; h < p.dims.n_heads; ++h)
    w.middleRows(h * p.dims.n_bins, p.dims.n_bins) +=
        p.adapters.B.middleRows(h * p.dims.n_bins, p.dims.n_bins) *
        p.adapters.A.middleRows(h * p.dims.rank, p.dims.rank);
  return w;
}

inline Eigen::VectorXd effective_head_b(const PolicyParams& p) {
  return p.head_b + p.adapters.bias;
}

// 2x2 mean pooling of the three observation channels into one vector,
// channel-major (occupancy, depth, movable mask)
inline Eigen::VectorXd featurize(const Observation& obs) {
  if (obs.width % 2 != 0 || obs.height % 2 != 0)
    throw ShapeMismatch("observation raster is not poolable");
  const int pw = obs.width / 2, ph = obs.height / 2;
  Eigen::VectorXd x(3 * pw * ph);
  int k = 0;
  for (int r = 0; r < ph; ++r)
    for (int c = 0; c < pw; ++c) {
      double o = 0;
      for (int dr = 0; dr < 2; ++dr)
        for (int dc = 0; dc < 2; ++dc) o += obs.occupied(2 * r + dr, 2 * c + dc) ? 1.0 : 0.0;
      x(k++) = o / 4.0;
    }
  for (int r = 0; r < ph; ++r)
    for (int c = 0; c < pw; ++c) {
      double d = 0;
      for (int dr = 0; dr < 2; ++dr)
        for (int dc = 0; dc < 2; ++dc) d += obs.depth_at(2 * r + dr, 2 * c + dc);
      x(k++) = d / 4.0;
    }
  for (int r = 0; r < ph; ++r)
    for (int c = 0; c < pw; ++c) {
      double m = 0;
      for (int dr = 0; dr < 2; ++dr)
        for (int dc = 0; dc < 2; ++dc) m += obs.movable(2 * r + dr, 2 * c + dc) ? 1.0 : 0.0;
      x(k++) = m / 4.0;
    }
  return x;
}

// Correction context fed back into the trunk. An empty instance encodes to the
// zero vector, which is the fast-system mode.
struct ConditioningVector {
  struct Point {
    double row01 = 0, col01 = 0;  // pixel coords over raster size
    double score = 0;
    Vec3 world;
  };
  struct Dir {
    Vec3 up, forward;
    double confidence = 0;
  };

  std::optional<FailureType> failure;
  std::optional<DiscretePose> prev;
  std::vector<Point> points;  // up to 3
  std::vector<Dir> dirs;      // up to 3

  static constexpr int kMaxPoints = 3;
  static constexpr int kMaxDirs = 3;
  // radial-basis grid over [-1, 1], one bump per cell. Raw scalars alone make
  // the classifier heads resolve 1% differences through the trunk; the grid
  // hands them a localized basis instead. Applied to the previous pose's
  // position bins, the top candidate's coordinates, and the primary frame.
  static constexpr int kPlaceBins = 24;

  static void place_code(Eigen::VectorXd& v, int& k, double x, bool present) {
    const double step = 2.0 / (kPlaceBins - 1);
    if (present)
      for (int j = 0; j < kPlaceBins; ++j) {
        const double r = (x - (-1.0 + j * step)) / step;
        v(k + j) = std::exp(-r * r);
      }
    k += kPlaceBins;
  }

  bool empty() const { return !failure && !prev && points.empty() && dirs.empty(); }

  Eigen::VectorXd encode(const PolicyDims& dims) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dims.cond);
    int k = 0;
    if (failure) v(k + static_cast<int>(*failure)) = 1.0;
    k += 4;
    if (prev)
      for (int i = 0; i < 9; ++i) v(k + i) = prev->bins[i] / 50.0;
    k += 9;
    for (int i = 0; i < 3; ++i)
      place_code(v, k, prev ? prev->bins[i] / 50.0 : 0.0, prev.has_value());
    for (int i = 0; i < kMaxPoints; ++i) {
      if (i < static_cast<int>(points.size())) {
        const auto& pt = points[i];
        v(k) = pt.row01;
        v(k + 1) = pt.col01;
        v(k + 2) = pt.score;
        v(k + 3) = pt.world.x;
        v(k + 4) = pt.world.y;
        v(k + 5) = pt.world.z;
      }
      k += 6;
    }
    const Vec3 w = points.empty() ? Vec3{} : points.front().world;
    place_code(v, k, w.x, !points.empty());
    place_code(v, k, w.y, !points.empty());
    place_code(v, k, w.z, !points.empty());
    for (int i = 0; i < kMaxDirs; ++i) {
      if (i < static_cast<int>(dirs.size())) {
        const auto& d = dirs[i];
        v(k) = d.up.x;
        v(k + 1) = d.up.y;
        v(k + 2) = d.up.z;
        v(k + 3) = d.forward.x;
        v(k + 4) = d.forward.y;
        v(k + 5) = d.forward.z;
        v(k + 6) = d.confidence;
      }
      k += 7;
    }
    const Dir d0 = dirs.empty() ? Dir{} : dirs.front();
    place_code(v, k, d0.up.x, !dirs.empty());
    place_code(v, k, d0.up.y, !dirs.empty());
    place_code(v, k, d0.up.z, !dirs.empty());
    place_code(v, k, d0.forward.x, !dirs.empty());
    place_code(v, k, d0.forward.y, !dirs.empty());
    place_code(v, k, d0.forward.z, !dirs.empty());
    v(k++) = failure ? 1.0 : 0.0;
    v(k++) = prev ? 1.0 : 0.0;
    v(k++) = points.size() / static_cast<double>(kMaxPoints);
    v(k++) = dirs.size() / static_cast<double>(kMaxDirs);
    if (k != dims.cond) throw ShapeMismatch("conditioning layout does not fill its width");
    return v;
  }

  static ConditioningVector from_feedback(FailureType failure, const DiscretePose& prev,
                                          const std::vector<CandidatePoint>& points,
                                          const std::vector<CandidateRotation>& dirs,
                                          const Observation& obs) {
    ConditioningVector cv;
    cv.failure = failure;
    cv.prev = prev;
    for (const auto& p : points) {
      if (static_cast<int>(cv.points.size()) >= kMaxPoints) break;
      cv.points.push_back({p.row / static_cast<double>(obs.height),
                           p.col / static_cast<double>(obs.width), p.score, p.world_point});
    }
    for (const auto& d : dirs) {
      if (static_cast<int>(cv.dirs.size()) >= kMaxDirs) break;
      cv.dirs.push_back({d.up, d.forward, d.confidence});
    }
    return cv;
  }
};

// task embedding row; unseen categories fall back to the mean of seen rows
inline Eigen::VectorXd embedding_for(const PolicyParams& p, int category_id) {
  if (category_id < 0 || category_id >= p.dims.n_cat)
    throw UnknownCategory("category id out of range");
  if (p.seen[category_id]) return p.task_emb.row(category_id).transpose();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p.dims.emb);
  int n = 0;
  for (int c = 0; c < p.dims.n_cat; ++c)
    if (p.seen[c]) {
      mean += p.task_emb.row(c).transpose();
      ++n;
    }
  if (n == 0) throw EmptyClass("no seen categories to average");
  return mean / n;
}

inline Eigen::VectorXd assemble_input(const PolicyParams& p, const Eigen::VectorXd& img,
                                      int category_id, const Eigen::VectorXd& cond) {
  if (img.size() != p.dims.img) throw ShapeMismatch("image feature width mismatch");
  if (cond.size() != p.dims.cond) throw ShapeMismatch("conditioning width mismatch");
  Eigen::VectorXd x(p.dims.input());
  x << img, embedding_for(p, category_id), cond;
  return x;
}

struct ForwardPass {
  Eigen::VectorXd a1, a2;           // trunk activations
  Eigen::VectorXd pose_logits;      // head_rows
  Eigen::VectorXd detect_logits;    // n_fail
};

inline ForwardPass forward_input(const PolicyParams& p, const Eigen::VectorXd& x) {
  if (x.size() != p.dims.input()) throw ShapeMismatch("trunk input width mismatch");
  ForwardPass f;
  f.a1 = (p.W1 * x + p.b1).array().tanh();
  f.a2 = (p.W2 * f.a1 + p.b2).array().tanh();
  f.pose_logits = effective_head_W(p) * f.a2 + effective_head_b(p);
  f.detect_logits = p.detect_W * f.a2 + p.detect_b;
  return f;
}

using PoseLogits = std::array<std::array<double, 100>, 9>;

inline PoseLogits split_pose_logits(const PolicyParams& p, const Eigen::VectorXd& flat) {
  PoseLogits out;
  for (int h = 0; h < p.dims.n_heads; ++h)
    for (int b = 0; b < p.dims.n_bins; ++b) out[h][b] = flat(h * p.dims.n_bins + b);
  return out;
}

// argmax per head, ties toward the smaller bin index
inline DiscretePose decode_logits(const PoseLogits& logits) {
  DiscretePose dp;
  for (int h = 0; h < 9; ++h) {
    int best = 0;
    for (int b = 1; b < 100; ++b)
      if (logits[h][b] > logits[h][best]) best = b;
    dp.bins[h] = best + kBinLo;
  }
  return dp;
}

struct Prediction {
  DiscretePose pose;
  PoseLogits logits;
};

inline Prediction predict(const PolicyParams& p, const Observation& obs, int category_id,
                          const ConditioningVector& cond = {}) {
  const auto f = forward_input(p, assemble_input(p, featurize(obs), category_id,
                                                 cond.encode(p.dims)));
  Prediction pred;
  pred.logits = split_pose_logits(p, f.pose_logits);
  pred.pose = decode_logits(pred.logits);
  return pred;
}

// stable per-head softmax
inline std::array<double, 100> softmax_head(const std::array<double, 100>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::array<double, 100> p{};
  double z = 0;
  for (int i = 0; i < 100; ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

// summed Shannon entropy of the nine head distributions, in nats
inline double prediction_entropy(const PoseLogits& logits) {
  double total = 0;
  for (int h = 0; h < 9; ++h) {
    const auto p = softmax_head(logits[h]);
    for (double v : p)
      if (v > 0) total -= v * std::log(v);
  }
  return total;
}

struct TrainSample {
  Eigen::VectorXd img;
  int category = 0;
  Eigen::VectorXd cond;
  std::array<int, 9> target = {};  // bin indices 0..99
  bool has_pose = false;
  int failure_label = -1;  // 0..n_fail-1, or -1 when absent
};

inline TrainSample make_train_sample(const PolicyParams& p, const Observation& obs,
                                     int category_id, const ConditioningVector& cond,
                                     const DiscretePose& target) {
  TrainSample s;
  s.img = featurize(obs);
  s.category = category_id;
  s.cond = cond.encode(p.dims);
  for (int h = 0; h < 9; ++h) s.target[h] = target.bins[h] - kBinLo;
  s.has_pose = true;
  return s;
}

struct TrainConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  int epochs = 1;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool adapter_only = false;
};

struct TrainResult {
  PolicyParams params;
  double final_loss = 0;  // mean per-sample summed cross-entropy, last epoch
  int steps = 0;
};

namespace detail {

struct Momentum {
  Eigen::MatrixXd W1, W2, head_W, detect_W, task_emb, A, B;
  Eigen::VectorXd b1, b2, head_b, detect_b, bias;

  explicit Momentum(const PolicyParams& p) {
    W1 = Eigen::MatrixXd::Zero(p.W1.rows(), p.W1.cols());
    W2 = Eigen::MatrixXd::Zero(p.W2.rows(), p.W2.cols());
    head_W = Eigen::MatrixXd::Zero(p.head_W.rows(), p.head_W.cols());
    detect_W = Eigen::MatrixXd::Zero(p.detect_W.rows(), p.detect_W.cols());
    task_emb = Eigen::MatrixXd::Zero(p.task_emb.rows(), p.task_emb.cols());
    A = Eigen::MatrixXd::Zero(p.adapters.A.rows(), p.adapters.A.cols());
    B = Eigen::MatrixXd::Zero(p.adapters.B.rows(), p.adapters.B.cols());
    b1 = Eigen::VectorXd::Zero(p.b1.size());
    b2 = Eigen::VectorXd::Zero(p.b2.size());
    head_b = Eigen::VectorXd::Zero(p.head_b.size());
    detect_b = Eigen::VectorXd::Zero(p.detect_b.size());
    bias = Eigen::VectorXd::Zero(p.adapters.bias.size());
  }
};

template <typename M>
void sgd_step(M& param, M& vel, const M& grad, double lr, double mu) {
  vel = mu * vel - lr * grad;
  param += vel;
}

}  // namespace detail

// Gradients of the mean batch loss for one batch, as a parameter-shaped bundle.
// Exposed so the finite-difference tests can compare against it directly.
struct Gradients {
  Eigen::MatrixXd W1, W2, head_W, detect_W, task_emb, A, B;
  Eigen::VectorXd b1, b2, head_b, detect_b, bias;
  double loss = 0;  // mean per-sample loss over the batch
};

inline Gradients batch_gradients(const PolicyParams& p, const std::vector<TrainSample>& batch,
                                 bool adapter_only) {
  const auto& dims = p.dims;
  const int nb = static_cast<int>(batch.size());
  if (nb == 0) throw ShapeMismatch("empty batch");

  Eigen::MatrixXd X(dims.input(), nb);
  for (int i = 0; i < nb; ++i)
    X.col(i) = assemble_input(p, batch[i].img, batch[i].category, batch[i].cond);

  const Eigen::MatrixXd Wh = effective_head_W(p);
  const Eigen::VectorXd bh = effective_head_b(p);

  Eigen::MatrixXd A1 = ((p.W1 * X).colwise() + p.b1).array().tanh();
  Eigen::MatrixXd A2 = ((p.W2 * A1).colwise() + p.b2).array().tanh();
  Eigen::MatrixXd P = (Wh * A2).colwise() + bh;        // pose logits
  Eigen::MatrixXd D = (p.detect_W * A2).colwise() + p.detect_b;

  double loss = 0;
  // dP, dD become softmax - onehot, scaled by 1/nb
  Eigen::MatrixXd dP = Eigen::MatrixXd::Zero(P.rows(), nb);
  Eigen::MatrixXd dD = Eigen::MatrixXd::Zero(D.rows(), nb);
  for (int i = 0; i < nb; ++i) {
    if (batch[i].has_pose) {
      for (int h = 0; h < dims.n_heads; ++h) {
        auto seg = P.col(i).segment(h * dims.n_bins, dims.n_bins);
        const double mx = seg.maxCoeff();
        Eigen::VectorXd e = (seg.array() - mx).exp();
        const double z = e.sum();
        const int t = batch[i].target[h];
        loss += std::log(z) + mx - seg(t);
        dP.col(i).segment(h * dims.n_bins, dims.n_bins) = e / z;
        dP(h * dims.n_bins + t, i) -= 1.0;
      }
    }
    if (batch[i].failure_label >= 0) {
      auto seg = D.col(i);
      const double mx = seg.maxCoeff();
      Eigen::VectorXd e = (seg.array() - mx).exp();
      const double z = e.sum();
      loss += std::log(z) + mx - seg(batch[i].failure_label);
      dD.col(i) = e / z;
      dD(batch[i].failure_label, i) -= 1.0;
    }
  }
  loss /= nb;
  if (!std::isfinite(loss)) throw NonFiniteLoss("batch loss is not finite");
  dP /= nb;
  dD /= nb;

  Gradients g;
  g.loss = loss;
  g.head_b = dP.rowwise().sum();
  g.detect_b = dD.rowwise().sum();
  const Eigen::MatrixXd dWh = dP * A2.transpose();  // grad wrt effective head
  g.detect_W = dD * A2.transpose();

  if (adapter_only) {
    g.A = Eigen::MatrixXd::Zero(p.adapters.A.rows(), p.adapters.A.cols());
    g.B = Eigen::MatrixXd::Zero(p.adapters.B.rows(), p.adapters.B.cols());
    for (int h = 0; h < dims.n_heads; ++h) {
      const auto dWh_h = dWh.middleRows(h * dims.n_bins, dims.n_bins);
      const auto A_h = p.adapters.A.middleRows(h * dims.rank, dims.rank);
      const auto B_h = p.adapters.B.middleRows(h * dims.n_bins, dims.n_bins);
      g.B.middleRows(h * dims.n_bins, dims.n_bins) = dWh_h * A_h.transpose();
      g.A.middleRows(h * dims.rank, dims.rank) = B_h.transpose() * dWh_h;
    }
    g.bias = g.head_b;
    // base stays frozen
    g.W1 = Eigen::MatrixXd::Zero(p.W1.rows(), p.W1.cols());
    g.W2 = Eigen::MatrixXd::Zero(p.W2.rows(), p.W2.cols());
    g.head_W = Eigen::MatrixXd::Zero(p.head_W.rows(), p.head_W.cols());
    g.detect_W.setZero();
    g.detect_b.setZero();
    g.head_b.setZero();
    g.task_emb = Eigen::MatrixXd::Zero(p.task_emb.rows(), p.task_emb.cols());
    g.b1 = Eigen::VectorXd::Zero(p.b1.size());
    g.b2 = Eigen::VectorXd::Zero(p.b2.size());
    return g;
  }

  g.head_W = dWh;
  g.A = Eigen::MatrixXd::Zero(p.adapters.A.rows(), p.adapters.A.cols());
  g.B = Eigen::MatrixXd::Zero(p.adapters.B.rows(), p.adapters.B.cols());
  g.bias = Eigen::VectorXd::Zero(p.adapters.bias.size());

  Eigen::MatrixXd dA2 = Wh.transpose() * dP + p.detect_W.transpose() * dD;
  Eigen::MatrixXd dZ2 = dA2.array() * (1.0 - A2.array().square());
  g.W2 = dZ2 * A1.transpose();
  g.b2 = dZ2.rowwise().sum();
  Eigen::MatrixXd dA1 = p.W2.transpose() * dZ2;
  Eigen::MatrixXd dZ1 = dA1.array() * (1.0 - A1.array().square());
  g.W1 = dZ1 * X.transpose();
  g.b1 = dZ1.rowwise().sum();

  // embedding rows receive the trunk gradient through their input columns;
  // unseen-category samples ran on the mean of seen rows, so their gradient
  // spreads evenly across those rows
  g.task_emb = Eigen::MatrixXd::Zero(p.task_emb.rows(), p.task_emb.cols());
  const Eigen::MatrixXd dX_emb =
      p.W1.middleCols(dims.img, dims.emb).transpose() * dZ1;  // emb x nb
  int n_seen = 0;
  for (int c = 0; c < dims.n_cat; ++c) n_seen += p.seen[c] ? 1 : 0;
  for (int i = 0; i < nb; ++i) {
    const int c = batch[i].category;
    if (p.seen[c]) {
      g.task_emb.row(c) += dX_emb.col(i).transpose();
    } else if (n_seen > 0) {
      for (int r = 0; r < dims.n_cat; ++r)
        if (p.seen[r]) g.task_emb.row(r) += dX_emb.col(i).transpose() / n_seen;
    }
  }
  return g;
}

inline TrainResult train(PolicyParams params, const std::vector<TrainSample>& dataset,
                         const TrainConfig& cfg) {
  if (dataset.empty()) throw ShapeMismatch("empty training set");
  if (cfg.learning_rate < 0) throw ShapeMismatch("negative learning rate");
  if (cfg.epochs < 1) throw ShapeMismatch("epochs must be at least 1");

  detail::Momentum vel(params);
  Rng rng(Rng::derive(cfg.seed, "train"));
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);
    double epoch_loss = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<TrainSample> b;
      b.reserve(end - start);
      for (size_t j = start; j < end; ++j) b.push_back(dataset[order[j]]);
      const Gradients g = batch_gradients(params, b, cfg.adapter_only);
      epoch_loss += g.loss * static_cast<double>(b.size());
      ++batches;
      ++out.steps;
      const double lr = cfg.learning_rate, mu = cfg.momentum;
      if (cfg.adapter_only) {
        detail::sgd_step(params.adapters.A, vel.A, g.A, lr, mu);
        detail::sgd_step(params.adapters.B, vel.B, g.B, lr, mu);
        detail::sgd_step(params.adapters.bias, vel.bias, g.bias, lr, mu);
      } else {
        detail::sgd_step(params.W1, vel.W1, g.W1, lr, mu);
        detail::sgd_step(params.b1, vel.b1, g.b1, lr, mu);
        detail::sgd_step(params.W2, vel.W2, g.W2, lr, mu);
        detail::sgd_step(params.b2, vel.b2, g.b2, lr, mu);
        detail::sgd_step(params.head_W, vel.head_W, g.head_W, lr, mu);
        detail::sgd_step(params.head_b, vel.head_b, g.head_b, lr, mu);
        detail::sgd_step(params.detect_W, vel.detect_W, g.detect_W, lr, mu);
        detail::sgd_step(params.detect_b, vel.detect_b, g.detect_b, lr, mu);
        detail::sgd_step(params.task_emb, vel.task_emb, g.task_emb, lr, mu);
      }
    }
    out.final_loss = epoch_loss / static_cast<double>(dataset.size());
  }
  out.params = std::move(params);
  return out;
}

// ---- checkpoint serialization ----

namespace detail {

inline ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const ordered_json& j) {
  const auto rows = j.size();
  const auto cols = rows ? j[0].size() : 0;
  Eigen::MatrixXd m(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) throw ShapeMismatch("ragged checkpoint matrix");
    for (size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline ordered_json vector_to_json(const Eigen::VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Eigen::VectorXd vector_from_json(const ordered_json& j) {
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

}  // namespace detail

inline ordered_json policy_to_json(const PolicyParams& p) {
  ordered_json j;
  j["version"] = p.version;
  j["dims"] = {{"d", p.dims.d},           {"img", p.dims.img},       {"emb", p.dims.emb},
               {"cond", p.dims.cond},     {"n_cat", p.dims.n_cat},   {"n_heads", p.dims.n_heads},
               {"n_bins", p.dims.n_bins}, {"n_fail", p.dims.n_fail}, {"rank", p.dims.rank}};
  j["trunk"] = {{"W1", detail::matrix_to_json(p.W1)},
                {"b1", detail::vector_to_json(p.b1)},
                {"W2", detail::matrix_to_json(p.W2)},
                {"b2", detail::vector_to_json(p.b2)}};
  j["heads"] = {{"W", detail::matrix_to_json(p.head_W)}, {"b", detail::vector_to_json(p.head_b)}};
  j["detect"] = {{"W", detail::matrix_to_json(p.detect_W)},
                 {"b", detail::vector_to_json(p.detect_b)}};
  j["adapters"] = {{"A", detail::matrix_to_json(p.adapters.A)},
                   {"B", detail::matrix_to_json(p.adapters.B)},
                   {"bias", detail::vector_to_json(p.adapters.bias)}};
  j["task_embeddings"] = detail::matrix_to_json(p.task_emb);
  j["seen"] = p.seen;
  j["rng_seed"] = p.rng_seed;
  return j;
}

inline PolicyParams policy_from_json(const ordered_json& j) {
  PolicyParams p;
  p.version = j.at("version").get<int>();
  const auto& d = j.at("dims");
  p.dims.d = d.at("d").get<int>();
  p.dims.img = d.at("img").get<int>();
  p.dims.emb = d.at("emb").get<int>();
  p.dims.cond = d.at("cond").get<int>();
  p.dims.n_cat = d.at("n_cat").get<int>();
  p.dims.n_heads = d.at("n_heads").get<int>();
  p.dims.n_bins = d.at("n_bins").get<int>();
  p.dims.n_fail = d.at("n_fail").get<int>();
  p.dims.rank = d.at("rank").get<int>();
  p.W1 = detail::matrix_from_json(j.at("trunk").at("W1"));
  p.b1 = detail::vector_from_json(j.at("trunk").at("b1"));
  p.W2 = detail::matrix_from_json(j.at("trunk").at("W2"));
  p.b2 = detail::vector_from_json(j.at("trunk").at("b2"));
  p.head_W = detail::matrix_from_json(j.at("heads").at("W"));
  p.head_b = detail::vector_from_json(j.at("heads").at("b"));
  p.detect_W = detail::matrix_from_json(j.at("detect").at("W"));
  p.detect_b = detail::vector_from_json(j.at("detect").at("b"));
  p.adapters.A = detail::matrix_from_json(j.at("adapters").at("A"));
  p.adapters.B = detail::matrix_from_json(j.at("adapters").at("B"));
  p.adapters.bias = detail::vector_from_json(j.at("adapters").at("bias"));
  p.task_emb = detail::matrix_from_json(j.at("task_embeddings"));
  p.seen = j.at("seen").get<std::vector<std::uint8_t>>();
  p.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return p;
}

inline void save_policy(const PolicyParams& p, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open checkpoint for writing: " + path);
  f << policy_to_json(p).dump();
  f << "\n";
}

inline PolicyParams load_policy(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open checkpoint: " + path);
  ordered_json j;
  f >> j;
  return policy_from_json(j);
}

// exact parameter equality, used by the adapter-freeze and replay tests
inline bool base_params_equal(const PolicyParams& a, const PolicyParams& b) {
  return a.W1 == b.W1 && a.b1 == b.b1 && a.W2 == b.W2 && a.b2 == b.b2 && a.head_W == b.head_W &&
         a.head_b == b.head_b && a.detect_W == b.detect_W && a.detect_b == b.detect_b &&
         a.task_emb == b.task_emb;
}

inline bool params_equal(const PolicyParams& a, const PolicyParams& b) {
  return base_params_equal(a, b) && a.adapters.A == b.adapters.A && a.adapters.B == b.adapters.B &&
         a.adapters.bias == b.adapters.bias && a.seen == b.seen && a.dims == b.dims;
}

}  // namespace dpc
