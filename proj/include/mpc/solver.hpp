#pragma once

// RRR and ADMM iterations over a Cartesian product of matrices.

#include <mpc/matrix.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mpc {

struct ComponentShape {
  std::string name;
  Index rows = 0;
  Index cols = 0;
};

/// Fixed list of named matrix shapes packed into one flat vector.
class SplitLayout {
 public:
  explicit SplitLayout(std::vector<ComponentShape> shapes) : shapes_(std::move(shapes)) {
    offsets_.reserve(shapes_.size());
    for (const auto& s : shapes_) {
      if (s.rows < 0 || s.cols < 0) throw Error(ErrorKind::InvalidInput, "SplitLayout: negative shape");
      offsets_.push_back(size_);
      size_ += s.rows * s.cols;
    }
  }

  Index size() const { return size_; }
  std::size_t count() const { return shapes_.size(); }
  const ComponentShape& shape(std::size_t i) const { return shapes_.at(i); }
  Index offset(std::size_t i) const { return offsets_.at(i); }
  const std::vector<ComponentShape>& shapes() const { return shapes_; }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < shapes_.size(); ++i)
      if (shapes_[i].name == name) return i;
    throw Error(ErrorKind::InvalidInput, "SplitLayout: no component named " + std::string(name));
  }

 private:
  std::vector<ComponentShape> shapes_;
  std::vector<Index> offsets_;
  Index size_ = 0;
};

class SplitVariables {
 public:
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  SplitVariables() = default;
  explicit SplitVariables(std::shared_ptr<const SplitLayout> layout)
      : layout_(std::move(layout)), data_(Vector::Zero(layout_->size())) {}
  SplitVariables(std::shared_ptr<const SplitLayout> layout, Vector data)
      : layout_(std::move(layout)), data_(std::move(data)) {
    if (data_.size() != layout_->size()) throw Error(ErrorKind::InvalidInput, "SplitVariables: size mismatch");
  }

  const SplitLayout& layout() const { return *layout_; }
  const std::shared_ptr<const SplitLayout>& layout_ptr() const { return layout_; }
  Index size() const { return data_.size(); }

  Vector& flat() { return data_; }
  const Vector& flat() const { return data_; }

  MatrixMap operator[](std::size_t i) {
    const auto& s = layout_->shape(i);
    return MatrixMap(data_.data() + layout_->offset(i), s.rows, s.cols);
  }
  ConstMatrixMap operator[](std::size_t i) const {
    const auto& s = layout_->shape(i);
    return ConstMatrixMap(data_.data() + layout_->offset(i), s.rows, s.cols);
  }
  MatrixMap operator[](std::string_view name) { return (*this)[layout_->index_of(name)]; }
  ConstMatrixMap operator[](std::string_view name) const { return (*this)[layout_->index_of(name)]; }

  /// Same layout, new values.
  SplitVariables with(Vector data) const { return SplitVariables(layout_, std::move(data)); }

 private:
  std::shared_ptr<const SplitLayout> layout_;
  Vector data_;
};

/// Root-mean-square gap between two points of the same layout.
inline double discrepancy(const SplitVariables& a, const SplitVariables& b) {
  if (a.size() == 0) return 0.0;
  return (a.flat() - b.flat()).norm() / std::sqrt(static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// Configuration and outcome

enum class Algorithm { rrr, admm };
enum class SolveStatus { solved, max_iter, failed };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::solved: return "solved";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::failed: return "failed";
  }
  return "unknown";
}

inline const char* to_string(Algorithm a) { return a == Algorithm::rrr ? "rrr" : "admm"; }

struct SolveConfig {
  Algorithm algorithm = Algorithm::rrr;
  double beta = 0.5;
  double alpha = 1.0;
  int T = 10;
  double g = 1.0;
  double h = 1.0;
  long long max_iter = 100000;
  double delta_tol = 1e-10;
  std::uint64_t seed = 1;
  bool swap_projections = false;
  /// 0 selects every iteration up to 1e5 iterations and every 10th beyond.
  long long trace_every = 0;
  /// Reseeded restart when delta barely moves over this many iterations
  /// without solving; 0 disables.
  long long stall_window = 0;
  double stall_variance = 1e-6;

  long long effective_trace_every() const {
    if (trace_every > 0) return trace_every;
    return max_iter <= 100000 ? 1 : 10;
  }

  void validate() const {
    if (algorithm == Algorithm::rrr && !(beta > 0.0 && beta < 2.0))
      throw Error(ErrorKind::InvalidInput, "SolveConfig: beta must lie in (0, 2)");
    if (algorithm == Algorithm::admm && !(alpha > 0.0))
      throw Error(ErrorKind::InvalidInput, "SolveConfig: alpha must be positive");
    if (max_iter < 0) throw Error(ErrorKind::InvalidInput, "SolveConfig: max_iter must be non-negative");
    if (T < 0) throw Error(ErrorKind::InvalidInput, "SolveConfig: T must be non-negative");
    if (!(g > 0.0) || !(h > 0.0)) throw Error(ErrorKind::InvalidInput, "SolveConfig: g and h must be positive");
    if (delta_tol < 0.0) throw Error(ErrorKind::InvalidInput, "SolveConfig: delta_tol must be non-negative");
  }
};

/// Name of the generator behind init_random and trial seeds.
inline constexpr const char* kPrngId = "std::mt19937_64";

struct TraceRecord {
  long long iter = 0;
  double delta = 0.0;
};

struct SolveOutcome {
  SolveStatus status = SolveStatus::max_iter;
  long long iterations = 0;
  double final_delta = 0.0;
  SplitVariables solution;
  SplitVariables state;
  std::vector<TraceRecord> trace;
  long long restarts = 0;
  std::string message;
};

// ---------------------------------------------------------------------------
// Single updates

struct StepResult {
  SplitVariables next;
  SplitVariables x1;
  SplitVariables x2;
  double delta = 0.0;
};

/// x1 = P1(x); x2 = P2(2 x1 - x); x' = x + beta (x2 - x1).
template <typename P1, typename P2>
StepResult rrr_step(const SplitVariables& x, P1&& p1, P2&& p2, double beta) {
  StepResult r;
  r.x1 = p1(x);
  r.x2 = p2(x.with(2.0 * r.x1.flat() - x.flat()));
  r.delta = discrepancy(r.x1, r.x2);
  r.next = x.with(x.flat() + beta * (r.x2.flat() - r.x1.flat()));
  return r;
}

/// x1 = P1(x2 + x); x2' = P2(x1 - x); x' = x + alpha (x2' - x1).
/// `x2` of the result is the carried x2'.
template <typename P1, typename P2>
StepResult admm_step(const SplitVariables& x, const SplitVariables& x2_prev, P1&& p1, P2&& p2, double alpha) {
  StepResult r;
  r.x1 = p1(x.with(x2_prev.flat() + x.flat()));
  r.x2 = p2(x.with(r.x1.flat() - x.flat()));
  r.delta = discrepancy(r.x1, r.x2);
  r.next = x.with(x.flat() + alpha * (r.x2.flat() - r.x1.flat()));
  return r;
}

// ---------------------------------------------------------------------------
// Seeded initialization

struct Sampler {
  enum class Kind { uniform01, uniform_range, gaussian } kind = Kind::uniform01;
  double lo = 0.0;
  double hi = 1.0;

  static Sampler uniform01() { return {}; }
  static Sampler uniform_range(double lo, double hi) { return {Kind::uniform_range, lo, hi}; }
  static Sampler gaussian(double mean = 0.0, double sd = 1.0) { return {Kind::gaussian, mean, sd}; }
};

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double draw(Rng& rng, const Sampler& s) {
  switch (s.kind) {
    case Sampler::Kind::uniform01: return uniform01(rng);
    case Sampler::Kind::uniform_range: return s.lo + (s.hi - s.lo) * uniform01(rng);
    case Sampler::Kind::gaussian: return std::normal_distribution<double>(s.lo, s.hi)(rng);
  }
  return 0.0;
}

inline std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t trial) { return seed ^ trial; }

/// Components are filled in layout order, row-major within each component.
inline SplitVariables init_random(std::shared_ptr<const SplitLayout> layout, std::uint64_t seed, const Sampler& sampler) {
  SplitVariables x(std::move(layout));
  Rng rng(seed);
  for (std::size_t c = 0; c < x.layout().count(); ++c) {
    auto m = x[c];
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = draw(rng, sampler);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Driver

using Projection = std::function<SplitVariables(const SplitVariables&)>;
/// Returns the verified solution when a candidate pair is accepted.
using Acceptor = std::function<std::optional<SplitVariables>(const SplitVariables& x1, const SplitVariables& x2)>;
/// Produces a fresh starting point for the given restart number.
using Reinitializer = std::function<SplitVariables(long long restart)>;

struct SolveHooks {
  Acceptor accept;
  Reinitializer reinit;
};

inline SolveOutcome solve(const Projection& proj1, const Projection& proj2, const SplitVariables& x0,
                          const SolveConfig& cfg, const SolveHooks& hooks = {}) {
  cfg.validate();
  const Projection& p1 = cfg.swap_projections ? proj2 : proj1;
  const Projection& p2 = cfg.swap_projections ? proj1 : proj2;
  const long long every = cfg.effective_trace_every();

  SolveOutcome out;
  SplitVariables x = x0;
  // ADMM carries x2 and starts its accumulator at zero.
  SplitVariables x2 = x0;
  if (cfg.algorithm == Algorithm::admm) x = x0.with(Vector::Zero(x0.size()));

  std::vector<double> window;
  long long since_restart = 0;

  for (long long i = 0;; ++i) {
    StepResult st;
    try {
      st = cfg.algorithm == Algorithm::rrr ? rrr_step(x, p1, p2, cfg.beta) : admm_step(x, x2, p1, p2, cfg.alpha);
    } catch (const Error& e) {
      out.status = SolveStatus::failed;
      out.iterations = i;
      out.state = x;
      out.message = "iteration " + std::to_string(i) + ": " + e.what();
      if (!out.trace.empty()) out.final_delta = out.trace.back().delta;
      return out;
    }

    std::optional<SplitVariables> accepted;
    // The acceptor sees the images in the caller's order, even when swapped.
    if (hooks.accept)
      accepted = cfg.swap_projections ? hooks.accept(st.x2, st.x1) : hooks.accept(st.x1, st.x2);
    const bool converged = st.delta <= cfg.delta_tol;
    if (accepted || converged || i == cfg.max_iter) {
      out.status = (accepted || converged) ? SolveStatus::solved : SolveStatus::max_iter;
      out.iterations = i;
      out.final_delta = st.delta;
      out.solution = accepted ? std::move(*accepted) : st.x1;
      out.state = x;
      out.trace.push_back({i, st.delta});
      return out;
    }
    if (i % every == 0) out.trace.push_back({i, st.delta});

    x = std::move(st.next);
    if (cfg.algorithm == Algorithm::admm) x2 = std::move(st.x2);

    if (cfg.stall_window > 0 && hooks.reinit) {
      window.push_back(st.delta);
      if (static_cast<long long>(window.size()) > cfg.stall_window) window.erase(window.begin());
      if (++since_restart >= cfg.stall_window) {
        const double n = static_cast<double>(window.size());
        double mean = 0.0, var = 0.0;
        for (double d : window) mean += d;
        mean /= n;
        for (double d : window) var += (d - mean) * (d - mean);
        var /= n;
        if (var < cfg.stall_variance) {
          ++out.restarts;
          SplitVariables fresh = hooks.reinit(out.restarts);
          x = cfg.algorithm == Algorithm::admm ? fresh.with(Vector::Zero(fresh.size())) : fresh;
          x2 = fresh;
          window.clear();
          since_restart = 0;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Flow field of RRR in the plane: P1(2 P2(p) - p) - P2(p).

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct FlowSample {
  double x = 0.0, y = 0.0, vx = 0.0, vy = 0.0;
  bool degenerate = false;
};

struct Grid2 {
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0, step = 1.0;
};

/// Samples are ordered row by row: y outer, x inner.
template <typename P1, typename P2>
std::vector<FlowSample> flow_field(P1&& p1, P2&& p2, const Grid2& grid) {
  if (!(grid.step > 0.0)) throw Error(ErrorKind::InvalidInput, "flow_field: step must be positive");
  if (grid.xmax < grid.xmin || grid.ymax < grid.ymin) throw Error(ErrorKind::InvalidInput, "flow_field: empty grid");
  const auto nx = static_cast<long long>(std::floor((grid.xmax - grid.xmin) / grid.step + 1e-9)) + 1;
  const auto ny = static_cast<long long>(std::floor((grid.ymax - grid.ymin) / grid.step + 1e-9)) + 1;
  std::vector<FlowSample> out;
  out.reserve(static_cast<std::size_t>(nx * ny));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (long long j = 0; j < ny; ++j)
    for (long long i = 0; i < nx; ++i) {
      FlowSample s;
      s.x = grid.xmin + static_cast<double>(i) * grid.step;
      s.y = grid.ymin + static_cast<double>(j) * grid.step;
      try {
        const Point2 q = p2(Point2{s.x, s.y});
        const Point2 r = p1(Point2{2.0 * q.x - s.x, 2.0 * q.y - s.y});
        s.vx = r.x - q.x;
        s.vy = r.y - q.y;
      } catch (const Error&) {
        s.vx = s.vy = nan;
        s.degenerate = true;
      }
      out.push_back(s);
    }
  return out;
}

}  // namespace mpc
