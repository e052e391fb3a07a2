#pragma once

// Monte Carlo estimators for the limit quantities: the length coefficient
// eta(u), vacant/weighted volume fractions, geodesic concentration, cluster
// diameter tails, the percolation threshold, coupled monotonicity, and the
// convergence experiments (distortion, measure, surjectivity).
//
// Reproducibility contract: every estimator derives replica r's randomness
// from RngStream(seed, r), evaluates replicas in any order across worker
// threads, and merges results keyed by replica index with compensated
// summation. The same (inputs, seed) therefore produce bit-identical records
// for any job count. Scale sweeps reuse stream r at every R (common random
// numbers), which is what makes paired cross-R comparisons sharp.

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "defect_fpp/geometry.hpp"
#include "defect_fpp/intensity.hpp"
#include "defect_fpp/limits.hpp"
#include "defect_fpp/rng.hpp"

namespace dfpp {

// A pathwise invariant failed; indicates a bug, not statistical noise.
class HardFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Not enough samples landed in the analysis window.
class InsufficientData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EstimateRecord {
    std::string name;
    std::string params;     // human-readable echo of the inputs
    std::int64_t n = 0;     // replica count
    double mean = 0.0;
    double err = 0.0;       // stderr = sample sd / sqrt(n); 0 when n < 2
    bool has_quantiles = false;
    double q05 = 0.0, q50 = 0.0, q95 = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> per_replica;      // raw values in replica order
    std::map<std::string, double> extras; // operation-specific scalars

    std::string to_json() const; // {"schema":1, ...}
};

// Compensated mean/stderr/quantiles of per-replica values (in replica order;
// callers that merged out-of-order must restore that order first, which makes
// the reduction associative by construction).
EstimateRecord summarize(std::string name, std::string params, std::uint64_t seed,
                         std::vector<double> per_replica, bool quantiles = true);

// Evaluates fn(replica, stream) for replica = 0..replicas-1 on up to `jobs`
// threads; stream r is RngStream(seed, stream_base + r). Results land at index
// r, so the output is independent of scheduling.
template <class T>
std::vector<T> run_replicated(int replicas, int jobs, std::uint64_t seed,
                              std::uint64_t stream_base,
                              const std::function<T(int, RngStream&)>& fn);

struct EtaEstimate {
    std::vector<EstimateRecord> per_R; // dist(0, R e1)/R samples, one record per R
    double eta_hat = 1.0;              // mean at the largest R
    double eta_err = 0.0;
    double fit_a = 0.0, fit_b = 0.0;   // least-squares eta(R) ~ a + b/R diagnostic
    double upper_bound = 1.0;          // closed-form bound at (u, xi, d)
    bool bound_violated = false;       // eta_hat > upper_bound + 3 stderr
    double tail_eps = 0.05;            // deviation threshold for the tail diagnostic
    std::vector<double> tail_prob;     // per R: fraction with |ratio - mean| > eps
};

// Samples dist(0, R e1)/R on fresh boxes with margin margin_factor*log(1+R).
// Requires u < params.u_star (the distance degenerates past the threshold).
// xi > 0 uses the refinable graph bound at refinement K.
EtaEstimate estimate_eta(double u, const SimParams& params,
                         const std::vector<double>& R_list, int replicas,
                         std::uint64_t seed, int jobs = 1,
                         double margin_factor = 10.0, int K = 32);

// Weighted volume fraction of [0, side]^d: probe weight 1 on vacant space and
// xi^d inside defects, so the mean estimates sigma(u)^d (the vacant fraction
// when xi = 0). Stratified probes; extras carry the closed-form target.
EstimateRecord estimate_volume_fraction(double u, const SimParams& params,
                                        double box_side, int replicas,
                                        std::int64_t probes, std::uint64_t seed,
                                        int jobs = 1);

// Two-sided Hausdorff distance between a dim-strided polyline and the segment
// [a, b], both densified at `step`. Exposed so handcrafted geodesics can be
// checked directly; geodesic_deviation divides this by |a - b|.
double polyline_segment_deviation(std::span<const double> polyline, int dim,
                                  std::span<const double> a,
                                  std::span<const double> b, double step);

// Hausdorff deviation of the geodesic from the straight segment, normalized:
// d_H(geodesic, [0, L e1]) / L, sampled at polyline step radius/4. xi must
// be 0 (the geodesic polyline is exact there). One record per length.
std::vector<EstimateRecord> geodesic_deviation(double u, const SimParams& params,
                                               const std::vector<double>& lengths,
                                               int replicas, std::uint64_t seed,
                                               int jobs = 1,
                                               double margin_factor = 10.0);

struct TailEstimate {
    std::vector<double> diameters;  // all cluster diameters, ascending
    std::int64_t clusters = 0;
    double slope = 0.0;             // log-survival slope over the fit band
    double intercept = 0.0;
    double r2 = 0.0;
    std::vector<double> band_t;     // diameters used in the fit
    std::vector<double> band_log_s; // log survival at those diameters
    std::vector<double> cluster_counts; // clusters per replica, replica order
};

// Empirical survival of cluster diameters, fitted where survival lies in
// [1e-3, 1e-1]. Throws InsufficientData when fewer than three distinct
// diameters land in the band.
TailEstimate cluster_tail(double u, const SimParams& params, double box_side,
                          int replicas, std::uint64_t seed, int jobs = 1);

struct ThresholdScan {
    std::vector<double> u_grid;
    std::vector<double> sides;
    std::vector<std::vector<double>> crossing_prob; // [side][u]
    std::vector<std::vector<double>> prob_err;      // binomial stderr
    std::vector<double> u_star;                     // 0.5-crossing per side (NaN if none)
    std::vector<std::vector<std::vector<double>>> indicators; // [side][u][replica]
};

// Probability that a defect cluster joins the two opposite faces of the box
// along axis 0 (a ball touches a face when its closed ball meets it).
ThresholdScan threshold_scan(const std::vector<double>& u_grid,
                             const SimParams& params,
                             const std::vector<double>& box_sides, int replicas,
                             std::uint64_t seed, int jobs = 1);

struct CoupledResult {
    EstimateRecord low, high; // dist(0, L e1) at the two coupled levels
    int replicas = 0;
};

// One marked sample per replica, restricted at both levels; the high-level
// distance must be <= the low-level distance pathwise in every replica.
// Throws HardFailure on any violation.
CoupledResult coupled_monotonicity(double u_low, double u_high,
                                   const SimParams& params, double L,
                                   int replicas, std::uint64_t seed, int jobs = 1,
                                   double margin_factor = 10.0);

// Sup over an epsilon-net of |conformal target - rescaled empirical distance|,
// one record per R. The conformal side uses rho(x) = table.lookup(field(x))
// once; the empirical side uses the intrinsic distance on the scaled domain.
// conformal_spacing 0 picks net_spacing/10.
std::vector<EstimateRecord> distortion_experiment(
    const IntensityField& field, const Domain& domain, const SimParams& params,
    const std::vector<double>& R_list, double net_spacing, const EtaTable& table,
    int replicas, std::uint64_t seed, int jobs = 1, std::size_t pair_cap = 10000,
    double conformal_spacing = 0.0);

struct TestFunction {
    std::string name;
    std::function<double(std::span<const double>)> f; // |f| <= 1, Lip(f) <= 1
};

// |MC estimate of the weighted empirical volume integral - quadrature of
// f * sigma(u(x))^d|, one record per (R, f), R-major order.
std::vector<EstimateRecord> measure_experiment(
    const IntensityField& field, const Domain& domain, const SimParams& params,
    const std::vector<double>& R_list, const std::vector<TestFunction>& fs,
    int replicas, std::int64_t probes, std::uint64_t seed, int jobs = 1,
    int quadrature_cells = 256);

// Max over a probe grid of the rescaled covering depth: 0 at vacant probes,
// else the distance to the covering cluster's nearest ball surface, divided
// by R. xi must be 0. One record per R.
std::vector<EstimateRecord> surjectivity_experiment(
    const Domain& domain, const IntensityField& field, const SimParams& params,
    const std::vector<double>& R_list, double probe_spacing, int replicas,
    std::uint64_t seed, int jobs = 1);

template <class T>
std::vector<T> run_replicated(int replicas, int jobs, std::uint64_t seed,
                              std::uint64_t stream_base,
                              const std::function<T(int, RngStream&)>& fn) {
    if (replicas < 0) throw std::invalid_argument("replicas must be nonnegative");
    std::vector<T> out(static_cast<std::size_t>(replicas));
    if (replicas == 0) return out;
    int workers = jobs < 1 ? 1 : jobs;
    if (workers > replicas) workers = replicas;
    if (workers == 1) {
        for (int r = 0; r < replicas; ++r) {
            RngStream rng(seed, stream_base + static_cast<std::uint64_t>(r));
            out[static_cast<std::size_t>(r)] = fn(r, rng);
        }
        return out;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            int r = next.fetch_add(1, std::memory_order_relaxed);
            if (r >= replicas) return;
            try {
                RngStream rng(seed, stream_base + static_cast<std::uint64_t>(r));
                out[static_cast<std::size_t>(r)] = fn(r, rng);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int j = 0; j < workers; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

} // namespace dfpp
