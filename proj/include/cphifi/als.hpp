#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cphifi/aligned.hpp"
#include "cphifi/kernel.hpp"
#include "cphifi/observations.hpp"
#include "cphifi/tensor.hpp"
#include "cphifi/unaligned.hpp"

namespace cphifi {

enum class SolverKind {
    AlignedDirect,
    AlignedDecoupled,
    AlignedPcg,
    UnalignedDirectNonsym,
    UnalignedPcg,
};

inline bool is_aligned_solver(SolverKind s) {
    return s == SolverKind::AlignedDirect || s == SolverKind::AlignedDecoupled ||
           s == SolverKind::AlignedPcg;
}

struct CpHifiConfig {
    Eigen::Index rank = 1;
    std::vector<ModeKind> mode_kinds;
    SolverKind solver = SolverKind::AlignedDecoupled;
    double rho = 1e-6;
    int max_outer = 50;
    double outer_tol = 1e-6;
    PcgConfig inner;
    int restarts = 3;
    std::uint64_t seed = 0;
    bool warm_start = false;
};

struct FitIteration {
    double rel_error = 0.0;
    double objective = 0.0;
    double wall_time_s = 0.0;
    std::vector<SolveReport> mode_reports;
};

struct FitTrace {
    int restart_index = 0;
    std::vector<FitIteration> iterations;
    bool failed = false;
    std::string note;

    double final_error() const {
        return iterations.empty() ? std::numeric_limits<double>::quiet_NaN()
                                  : iterations.back().rel_error;
    }
    int outer_iterations() const {
        return static_cast<int>(iterations.size()) - 1;  // entry 0 is the init
    }
};

struct CpHifiResult {
    KruskalModel model;
    std::vector<std::optional<Matrix>> weights;  // W_k for infinite modes
    FitTrace trace;                              // best restart
    std::vector<FitTrace> all_traces;
};

/// One ALS run over either a dense (aligned) tensor or an observation set.
class AlsState {
  public:
    AlsState(const DenseTensor& data, const CpHifiConfig& cfg)
        : dense_(&data), obs_(nullptr), cfg_(cfg) {
        validate(data.shape());
        data_norm_ = data.norm();
    }

    AlsState(const ObservationSet& data, const CpHifiConfig& cfg)
        : dense_(nullptr), obs_(&data), cfg_(cfg) {
        validate(data.shape());
        data_norm_ = omega_norm(data);
    }

    /// Random init: factor entries i.i.d. uniform(0,1); for infinite modes
    /// the weight matrix is chosen so K W reproduces the random factor
    /// (ridge inverse through the cached eigendecomposition), keeping the
    /// initial factor scale comparable across mode kinds.
    void initialize(std::uint64_t stream_seed) {
        std::mt19937_64 rng(stream_seed);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        const auto& shape = data_shape();
        std::vector<Matrix> factors;
        weights_.assign(order(), std::nullopt);
        for (int k = 0; k < order(); ++k) {
            Matrix a(shape[k], cfg_.rank);
            for (Eigen::Index j = 0; j < a.cols(); ++j)
                for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = unif(rng);
            if (is_infinite(cfg_.mode_kinds[k])) {
                const auto& m = rkhs(cfg_.mode_kinds[k]);
                const SymEig& e = m->eig();
                const double tau = 1e-8 * std::max(e.d.maxCoeff(), 1e-300);
                Matrix w = e.u * ((e.d.array() + tau).inverse().matrix().asDiagonal() *
                                  (e.u.transpose() * a));
                a = m->kernel() * w;
                weights_[k] = std::move(w);
            }
            factors.push_back(std::move(a));
        }
        model_ = KruskalModel(std::move(factors));
    }

    int order() const { return static_cast<int>(cfg_.mode_kinds.size()); }
    bool aligned() const { return dense_ != nullptr; }
    const KruskalModel& model() const { return model_; }
    KruskalModel& model() { return model_; }
    const std::vector<std::optional<Matrix>>& weights() const { return weights_; }

    const std::vector<Eigen::Index>& data_shape() const {
        return aligned() ? dense_->shape() : obs_->shape();
    }

    /// Updates factor k in place; returns the subproblem solve report for
    /// infinite modes.
    SolveReport update_mode(int k) {
        return is_infinite(cfg_.mode_kinds[k]) ? update_infinite_mode(k)
                                               : update_finite_mode(k);
    }

    SolveReport update_finite_mode(int k) {
        const auto t0 = std::chrono::steady_clock::now();
        if (aligned()) {
            Matrix b = mttkrp(*dense_, model_, k);
            Matrix v = gram_khatri_rao(model_, k);
            // minimum-norm solution A = B V^+
            Eigen::CompleteOrthogonalDecomposition<Matrix> cod(v);
            model_.factors[k] = cod.solve(b.transpose()).transpose();
        } else {
            Matrix zhat = build_zhat(model_, k, *obs_);
            const auto& values = obs_->values();
            Matrix a = Matrix::Zero(data_shape()[k], cfg_.rank);
            for (Eigen::Index i = 0; i < a.rows(); ++i) {
                const auto& bucket = obs_->bucket(k, i);
                if (bucket.empty()) continue;  // no data for this row
                Matrix zi(bucket.size(), cfg_.rank);
                Vector ti(bucket.size());
                for (std::size_t t = 0; t < bucket.size(); ++t) {
                    zi.row(static_cast<Eigen::Index>(t)) = zhat.row(bucket[t]);
                    ti(static_cast<Eigen::Index>(t)) = values[bucket[t]];
                }
                Eigen::CompleteOrthogonalDecomposition<Matrix> cod(zi);
                a.row(i) = cod.solve(ti).transpose();
            }
            model_.factors[k] = std::move(a);
        }
        SolveReport rep;
        rep.converged = true;
        rep.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return rep;
    }

    SolveReport update_infinite_mode(int k) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto& mode = rkhs(cfg_.mode_kinds[k]);
        SolveReport rep;
        Matrix w;
        const Matrix* ws =
            (cfg_.warm_start && weights_[k]) ? &weights_[k].value() : nullptr;
        if (aligned()) {
            AlignedSubproblem p{mttkrp(*dense_, model_, k), gram_khatri_rao(model_, k),
                                mode};
            switch (cfg_.solver) {
                case SolverKind::AlignedDirect:
                    w = solve_aligned_direct(p);
                    rep.converged = true;
                    rep.iterations = 1;
                    break;
                case SolverKind::AlignedDecoupled:
                    w = solve_aligned_decoupled(p);
                    rep.converged = true;
                    rep.iterations = 1;
                    break;
                case SolverKind::AlignedPcg:
                    w = solve_aligned_pcg(p, cfg_.inner, &rep, ws);
                    break;
                default:
                    throw std::invalid_argument("aligned data requires an aligned solver");
            }
            rep.relative_residual = aligned_residual(p, w);
        } else {
            UnalignedSubproblem p =
                make_unaligned_subproblem(*obs_, model_, k, mode, cfg_.rho);
            switch (cfg_.solver) {
                case SolverKind::UnalignedDirectNonsym:
                    w = solve_unaligned_direct_nonsym(p, &rep);
                    break;
                case SolverKind::UnalignedPcg:
                    w = solve_unaligned_pcg(p, cfg_.inner, &rep, ws);
                    break;
                default:
                    throw std::invalid_argument(
                        "unaligned data requires an unaligned solver");
            }
        }
        weights_[k] = w;
        model_.factors[k] = mode->kernel() * w;
        rep.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return rep;
    }

    /// Fit-only relative error: aligned uses the Frobenius norm of the full
    /// residual; unaligned restricts to the observed entries.
    double relative_error() const {
        if (data_norm_ == 0.0) throw std::runtime_error("relative_error: zero data norm");
        if (aligned()) {
            DenseTensor full = kruskal_full(model_);
            return (dense_->vec() - full.vec()).norm() / data_norm_;
        }
        Matrix zhat = build_zhat(model_, 0, *obs_);
        std::vector<double> fitted = gather_rows(model_.factors[0], zhat, *obs_, 0);
        double s = 0.0;
        const auto& values = obs_->values();
        for (std::size_t l = 0; l < fitted.size(); ++l) {
            const double e = values[l] - fitted[l];
            s += e * e;
        }
        return std::sqrt(s) / data_norm_;
    }

    /// Fit term squared plus sum of lambda * trace(W' K W) over infinite modes.
    double objective() const { return objective_from_error(relative_error()); }

    /// Same, reusing an already computed relative error.
    double objective_from_error(double rel_error) const {
        double fit = rel_error * data_norm_;
        double obj = fit * fit;
        for (int k = 0; k < order(); ++k) {
            if (!is_infinite(cfg_.mode_kinds[k]) || !weights_[k]) continue;
            const auto& m = rkhs(cfg_.mode_kinds[k]);
            const Matrix& w = *weights_[k];
            obj += m->lambda() * (w.transpose() * m->kernel() * w).trace();
        }
        return obj;
    }

  private:
    void validate(const std::vector<Eigen::Index>& shape) {
        if (cfg_.mode_kinds.size() != shape.size())
            throw std::invalid_argument("cp_hifi: mode_kinds arity mismatch");
        if (cfg_.rank < 1) throw std::invalid_argument("cp_hifi: rank must be positive");
        if (aligned() != is_aligned_solver(cfg_.solver) && dense_ != nullptr)
            throw std::invalid_argument("cp_hifi: solver does not match data alignment");
        for (std::size_t k = 0; k < shape.size(); ++k)
            if (is_infinite(cfg_.mode_kinds[k]) &&
                rkhs(cfg_.mode_kinds[k])->size() != shape[k])
                throw std::invalid_argument("cp_hifi: kernel size does not match mode");
    }

    const DenseTensor* dense_;
    const ObservationSet* obs_;
    CpHifiConfig cfg_;
    KruskalModel model_;
    std::vector<std::optional<Matrix>> weights_;
    double data_norm_ = 0.0;
};

namespace detail {

inline std::uint64_t restart_seed(std::uint64_t seed, int restart) {
    // splitmix64 step over (seed, restart)
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(restart) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

template <typename Data>
CpHifiResult run_cp_hifi(const Data& data, const CpHifiConfig& cfg) {
    if (cfg.restarts < 1) throw std::invalid_argument("cp_hifi: restarts must be >= 1");
    CpHifiResult best;
    double best_err = std::numeric_limits<double>::infinity();
    bool have_best = false;
    for (int restart = 0; restart < cfg.restarts; ++restart) {
        FitTrace trace;
        trace.restart_index = restart;
        AlsState state(data, cfg);
        try {
            state.initialize(restart_seed(cfg.seed, restart));
            FitIteration init;
            init.rel_error = state.relative_error();
            init.objective = state.objective_from_error(init.rel_error);
            trace.iterations.push_back(std::move(init));
            double prev_err = trace.iterations.back().rel_error;
            for (int outer = 0; outer < cfg.max_outer; ++outer) {
                const auto t0 = std::chrono::steady_clock::now();
                FitIteration it;
                for (int k = 0; k < state.order(); ++k)
                    it.mode_reports.push_back(state.update_mode(k));
                it.rel_error = state.relative_error();
                it.objective = state.objective_from_error(it.rel_error);
                it.wall_time_s = std::chrono::duration<double>(
                                     std::chrono::steady_clock::now() - t0)
                                     .count();
                trace.iterations.push_back(std::move(it));
                const double err = trace.iterations.back().rel_error;
                if (std::abs(err - prev_err) <= cfg.outer_tol) break;
                prev_err = err;
            }
        } catch (const std::exception& e) {
            trace.failed = true;
            trace.note = e.what();
        }
        const double err = trace.final_error();
        const bool usable = !trace.failed && std::isfinite(err);
        if (usable && err < best_err) {
            best_err = err;
            best.model = state.model();
            best.weights = state.weights();
            best.trace = trace;
            have_best = true;
        }
        best.all_traces.push_back(std::move(trace));
    }
    if (!have_best) throw std::runtime_error("cp_hifi: all restarts failed");
    return best;
}

}  // namespace detail

inline CpHifiResult cp_hifi(const DenseTensor& data, const CpHifiConfig& cfg) {
    if (!is_aligned_solver(cfg.solver))
        throw std::invalid_argument("cp_hifi: dense tensor requires an aligned solver");
    return detail::run_cp_hifi(data, cfg);
}

inline CpHifiResult cp_hifi(const ObservationSet& data, const CpHifiConfig& cfg) {
    if (is_aligned_solver(cfg.solver))
        throw std::invalid_argument("cp_hifi: observation set requires an unaligned solver");
    return detail::run_cp_hifi(data, cfg);
}

}  // namespace cphifi
