#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flatbill/billiard_map.hpp"
#include "flatbill/fit.hpp"
#include "flatbill/parallel.hpp"
#include "flatbill/sampling.hpp"

namespace flatbill {

struct EstimatorOptions {
    std::uint64_t seed = 1;
    int threads = 0;                  // 0: all cores
    std::int64_t batch_size = 1 << 16;
    std::int64_t trap_cap = 100000;   // induced-map cap; longer orbits are censored
};

// Weighted per-bin sums of an importance-sampled indicator. Sums are kept in
// fixed point so merging is exact and order independent.
class BinAccumulator {
public:
    BinAccumulator() = default;
    explicit BinAccumulator(std::size_t bins) { resize(bins); }
    void resize(std::size_t bins);
    std::size_t bins() const { return hits_.size(); }

    void add_sample(double w) {
        ++samples_;
        sum_w_.add(w);
        sum_w2_.add(w * w);
    }
    void add(std::size_t bin, double w) {
        ++hits_[bin];
        w_[bin].add(w);
        w2_[bin].add(w * w);
    }
    void merge(const BinAccumulator& o);
    bool operator==(const BinAccumulator& o) const;

    std::int64_t samples() const { return samples_; }
    std::int64_t hits(std::size_t bin) const { return hits_[bin]; }
    double mean(std::size_t bin) const;    // E_q[w 1_bin]
    double stderr_of(std::size_t bin) const;
    double weight_sum(std::size_t bin) const { return w_[bin].value(); }
    double effective_samples() const;       // Kish

private:
    std::int64_t samples_ = 0;
    FixedSum sum_w_, sum_w2_;
    std::vector<std::int64_t> hits_;
    std::vector<FixedSum> w_, w2_;
};

struct TailEstimate {
    std::vector<std::int64_t> thresholds;
    std::vector<double> survival;
    std::vector<double> stderr_;
    std::vector<std::int64_t> hits;
    LineFit fit;
    std::int64_t fit_lo = 0, fit_hi = 0;
    std::int64_t sample_count = 0;
    double effective_samples = 0.0;
    std::int64_t censored = 0;
    double exponent() const { return fit.slope; }
    double ci_halfwidth() const { return fit.ci_halfwidth(); }
};

// Log-log fit of the survival over [lo, hi]; throws InsufficientCounts when a
// threshold in the window has fewer than min_hits.
void fit_tail(TailEstimate& t, std::int64_t lo, std::int64_t hi, std::int64_t min_hits = 25);

std::pair<double, double> wilson_interval(double p, double n, double z = 1.96);

enum class CellSampling { Direct, Tangential };

struct CellProfile {
    std::vector<std::int64_t> n;
    std::vector<double> mu, stderr_, wilson_lo, wilson_hi;
    std::vector<std::int64_t> hits;
    LineFit density_fit;          // log mu(M_n) against log n
    std::int64_t fit_lo = 8, fit_hi = 64;
    TailEstimate survival;        // sum_{m >= n} mu(M_m)
    std::int64_t sample_count = 0;
    double effective_samples = 0.0;
    std::int64_t overflow = 0;    // flights beyond max_flight_cells
};

CellProfile cell_measure_profile(const Table& t, std::int64_t n_max, std::int64_t samples,
                                 const EstimatorOptions& opt = {},
                                 CellSampling how = CellSampling::Tangential, std::int64_t fit_lo = 8);

enum class ReturnKind { R, Rtilde };

struct ReturnTail {
    TailEstimate tail;
    // For R: share of mu(R = n) coming from returns after a single flight.
    std::vector<double> single_flight_fraction;
};

// R: first return of the rectangle map to M, sampled from mu on the whole
// boundary (walls included). Rtilde: first return of the scatterer map,
// measured under the scatterer measure through the window sampler.
// fit_hi <= 0 picks the last threshold with at least 100 hits.
ReturnTail return_tail(const Table& t, ReturnKind which, std::int64_t samples, std::int64_t n_max,
                       const EstimatorOptions& opt = {}, std::int64_t fit_lo = 8,
                       std::int64_t fit_hi = 0);

// Trap cells C_{m,k}: x in M with cell index m whose image enters its window
// and stays there for k collisions. k is binned on a geometric grid.
struct TrapTable {
    std::int64_t m_max = 0;
    std::vector<std::int64_t> k_edges;  // bin b holds k in [k_edges[b], k_edges[b+1])
    BinAccumulator acc;                 // (m, b) at m * nbins + b; m = 0 collects m > m_max
    std::int64_t censored = 0;
    std::size_t nbins() const { return k_edges.size() - 1; }
    double mass(std::int64_t m, std::size_t b) const;
    double density(std::int64_t m, std::size_t b) const;  // per unit k
    double k_center(std::size_t b) const;
    double mass_k_at_least(std::int64_t m, std::int64_t k) const;  // k on an edge
    void merge(const TrapTable& o);
};

std::vector<std::int64_t> geometric_k_edges(std::int64_t k_max);

TrapTable trap_scan(const Table& t, std::int64_t m_max, std::int64_t k_max, std::int64_t samples,
                    const EstimatorOptions& opt = {});

struct TrapFits {
    LineFit k_fit;   // density in k, m pooled over [m_lo, m_hi]
    LineFit m_fit;   // mass per m at fixed small k bin
    LineFit sum_fit; // sum over k >= 1 per m
    std::int64_t m_lo = 3, m_hi = 8, k_lo = 4, k_hi = 128, k_small = 2;
    std::int64_t m_fit_lo = 3, m_fit_hi = 32;
};
TrapFits trap_fits(const TrapTable& tt, const TrapFits& windows = {});

struct ConditionalBin {
    std::int64_t n = 0;
    std::int64_t hits = 0;
    double mass = 0.0;
    double mean_return = 0.0;  // E[R(Fx) | x in M_n]
    double stderr_ = 0.0;
    std::array<double, 3> d_fraction{};  // a = 0, 1/(2 beta), 1/beta
};
struct ReturnTrapBin {
    std::int64_t m = 0;
    std::int64_t hits = 0;
    double fraction_low_cells = 0.0;  // all of the next b ln m returns below m^(1-1/(2 beta))
};
struct ConditionalReturn {
    std::vector<ConditionalBin> bins;
    LineFit mean_fit;
    std::array<LineFit, 3> d_fit;
    std::array<double, 3> a_values{};
    std::vector<ReturnTrapBin> return_bins;
    std::int64_t sample_count = 0;
};

ConditionalReturn conditional_return(const Table& t, std::int64_t n_lo, std::int64_t n_hi,
                                     std::int64_t samples, const EstimatorOptions& opt = {},
                                     double b_log = 1.0);

enum class Observable { Constant, SinR, Phi, Bump };
std::string to_string(Observable o);
Observable observable_from_string(const std::string& s);

// Bump in (r, phi) centred on the diagonal point of the first octant at
// normal incidence; its support lies on the scatterer clear of every window.
struct BumpSpec {
    double r_center = 0.0, r_half = 0.0, phi_half = 0.0;
};
BumpSpec default_bump(const Table& t);
double observe(const Table& t, Observable o, const PhasePoint& x);

enum class OrbitMap { FullMap, ScattererMap };

struct CorrelationSeries {
    std::vector<std::int64_t> lags;
    std::vector<double> c_n, stderr_;
    Observable f = Observable::Constant, g = Observable::Constant;
    double mean_f = 0.0, mean_g = 0.0;
    std::int64_t orbit_len = 0;
    std::int64_t chains = 0;
    // Mean of c_n over [lo, hi] and its batch standard error.
    std::pair<double, double> window_mean(std::int64_t lo, std::int64_t hi) const;
};

// Birkhoff estimator over independent chains (one chain per batch), each a
// long orbit after burn-in. Standard errors come from the spread across chains.
CorrelationSeries correlation(const Table& t, OrbitMap map, Observable f, Observable g,
                              std::int64_t n_max, std::int64_t orbit_len,
                              const EstimatorOptions& opt = {}, std::int64_t chains = 32);

struct OneStepTrial {
    PhasePoint center;
    double sum = 0.0;     // sum |W_i| / |F W_i|
    int pieces = 0;
};
struct OneStepResult {
    double delta = 0.0;
    std::vector<OneStepTrial> trials;
    std::int64_t attempts = 0;
    double max_sum() const;
    double mean_sum() const;
};

// Unstable curves of length delta through seeds from the tangential sampler,
// pushed by the scatterer induced map. With require_crossing only curves
// that split into at least two pieces are kept.
OneStepResult one_step_expansion(const Table& t, double delta, int trials,
                                 const EstimatorOptions& opt = {}, bool require_crossing = true,
                                 int points = 1000, std::int64_t max_attempts = 1000000);
// Same seeds (trial centres) at another length.
OneStepResult one_step_expansion_at(const Table& t, double delta,
                                    const std::vector<PhasePoint>& centers, int points = 1000);

// Distance from x to the nearest change of the first-flight lattice
// displacement (or to phi = +-pi/2) along the four axis directions; +inf
// beyond d_max.
double singularity_proxy_distance(const Table& t, const PhasePoint& x, double d_max,
                                  double d_min = 1e-9);

struct NeighborhoodEstimate {
    std::vector<double> deltas;
    std::vector<double> measure, stderr_;
    std::vector<std::int64_t> hits;
    LineFit fit;
    std::int64_t sample_count = 0;
};
NeighborhoodEstimate singularity_neighborhood(const Table& t, const std::vector<double>& deltas,
                                              std::int64_t samples, const EstimatorOptions& opt = {});

}  // namespace flatbill
