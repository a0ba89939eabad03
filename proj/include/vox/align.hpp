// Monotonic alignment search between text states and spectrogram frames.
// The training loop adds decaying Gaussian noise to the log-likelihoods to
// keep the search exploring alternative alignments early on.
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace vox {

// path(s, t) = 1 iff frame t is assigned to text state s.
struct AlignmentPath {
  Eigen::MatrixXi path;  // T_text x T_spec, binary

  double score(const Eigen::MatrixXf& ll) const {
    double s = 0.0;
    for (int i = 0; i < path.rows(); ++i)
      for (int j = 0; j < path.cols(); ++j)
        if (path(i, j)) s += ll(i, j);
    return s;
  }
};

struct NoiseSchedule {
  float initial_scale = 0.01f;
  float decay_per_step = 2e-6f;

  float scale(std::int64_t step) const {
    const float s = initial_scale - decay_per_step * static_cast<float>(step);
    return s > 0.0f ? s : 0.0f;
  }
};

// Viterbi-style DP over monotonic full-coverage paths; O(T_text * T_spec).
// Ties break toward staying on the current text state.
inline AlignmentPath mas(const Eigen::MatrixXf& ll) {
  const int S = static_cast<int>(ll.rows());
  const int T = static_cast<int>(ll.cols());
  if (S < 1 || T < S)
    throw std::invalid_argument("mas requires 1 <= T_text <= T_spec");

  const float neg_inf = -std::numeric_limits<float>::infinity();
  Eigen::MatrixXf q = Eigen::MatrixXf::Constant(S, T, neg_inf);
  q(0, 0) = ll(0, 0);
  for (int t = 1; t < T; ++t) {
    const int lo = std::max(0, S - (T - t));  // must still be able to reach the last state
    const int hi = std::min(S - 1, t);
    for (int s = lo; s <= hi; ++s) {
      float stay = q(s, t - 1);
      float advance = s > 0 ? q(s - 1, t - 1) : neg_inf;
      q(s, t) = ll(s, t) + std::max(stay, advance);
    }
  }

  AlignmentPath out;
  out.path = Eigen::MatrixXi::Zero(S, T);
  int s = S - 1;
  for (int t = T - 1; t >= 0; --t) {
    out.path(s, t) = 1;
    if (t > 0 && s > 0 && !(q(s, t - 1) >= q(s - 1, t - 1))) --s;
  }
  return out;
}

// Exhaustive enumeration over all valid monotonic paths; test oracle only.
inline AlignmentPath mas_bruteforce(const Eigen::MatrixXf& ll) {
  const int S = static_cast<int>(ll.rows());
  const int T = static_cast<int>(ll.cols());
  if (S < 1 || T < S)
    throw std::invalid_argument("mas_bruteforce requires 1 <= T_text <= T_spec");
  if (S > 8 || T > 20)
    throw std::invalid_argument("mas_bruteforce limited to T_text <= 8, T_spec <= 20");

  std::vector<int> assign(T), best_assign;
  double best = -std::numeric_limits<double>::infinity();
  // Frame 0 is state 0; each following frame either stays or advances by one.
  std::function<void(int, int, double)> go = [&](int t, int s, double acc) {
    if (S - 1 - s > T - 1 - t) return;  // cannot reach the last state anymore
    acc += ll(s, t);
    assign[t] = s;
    if (t == T - 1) {
      if (s == S - 1 && acc > best) {
        best = acc;
        best_assign = assign;
      }
      return;
    }
    go(t + 1, s, acc);
    if (s + 1 < S) go(t + 1, s + 1, acc);
  };
  go(0, 0, 0.0);

  AlignmentPath out;
  out.path = Eigen::MatrixXi::Zero(S, T);
  for (int t = 0; t < T; ++t) out.path(best_assign[t], t) = 1;
  return out;
}

// mas on ll + scale(step) * G, G ~ iid standard normal from the seeded
// generator. Identical to mas(ll) once the schedule has decayed to zero.
inline AlignmentPath noisy_mas(const Eigen::MatrixXf& ll, const NoiseSchedule& schedule,
                               std::int64_t step, std::uint64_t rng_seed) {
  const float scale = schedule.scale(step);
  if (scale == 0.0f) return mas(ll);
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  Eigen::MatrixXf noisy = ll;
  for (int i = 0; i < noisy.rows(); ++i)
    for (int j = 0; j < noisy.cols(); ++j) noisy(i, j) += scale * gauss(rng);
  return mas(noisy);
}

// duration[s] = number of frames assigned to text state s; sums to T_spec.
inline std::vector<int> path_to_durations(const AlignmentPath& p) {
  std::vector<int> out(p.path.rows());
  for (int s = 0; s < p.path.rows(); ++s) out[s] = p.path.row(s).sum();
  return out;
}

}  // namespace vox
