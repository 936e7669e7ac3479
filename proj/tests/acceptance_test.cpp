// End-to-end acceptance suite. Each test prints a single pass/fail line for
// its criterion; tolerances and problem sizes are fixed here on purpose.
#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cphifi/als.hpp"
#include "cphifi/synth.hpp"
#include "test_util.hpp"

using namespace cphifi;
using testutil::random_matrix;
using testutil::random_model;
using testutil::random_spd;
using testutil::random_tensor;

namespace {

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

/// Thread CPU time: the scaling measurements must not absorb scheduler or
/// CPU-quota noise from the host.
double cpu_now_s() {
    timespec ts;
    clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
    return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::ostringstream line;
    line << "[criterion " << id << "] " << (pass ? "PASS" : "FAIL") << " " << name
         << " (" << detail << ")";
    std::cout << line.str() << std::endl;
    EXPECT_TRUE(pass) << line.str();
}

std::shared_ptr<RkhsMode> grid_mode(Eigen::Index n, double sigma, double lambda) {
    return std::make_shared<RkhsMode>(RkhsMode::regular_grid(n, sigma, lambda));
}

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double m = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

/// Per-call CPU time: best of `batches` timed batches of `reps` calls each.
double min_batch_time(const std::function<void()>& f, int reps, int batches) {
    double best = std::numeric_limits<double>::infinity();
    for (int b = 0; b < batches; ++b) {
        const double t0 = cpu_now_s();
        for (int i = 0; i < reps; ++i) f();
        best = std::min(best, (cpu_now_s() - t0) / reps);
    }
    return best;
}

double total_time(const FitTrace& trace) {
    double t = 0.0;
    for (const auto& it : trace.iterations) t += it.wall_time_s;
    return t;
}

struct UnalignedInstance {
    DenseTensor tensor;
    std::shared_ptr<ObservationSet> obs;
    KruskalModel model;
    UnalignedSubproblem prob;
};

UnalignedInstance make_unaligned_instance(const std::vector<Eigen::Index>& shape,
                                          Eigen::Index r, Eigen::Index q, double sigma,
                                          double lambda, double rho,
                                          std::mt19937_64& rng) {
    UnalignedInstance inst{random_tensor(shape, rng), nullptr,
                           random_model(shape, r, rng), UnalignedSubproblem{}};
    inst.obs = std::make_shared<ObservationSet>(
        sample_uniform(inst.tensor, q, rng()));
    inst.prob = make_unaligned_subproblem(*inst.obs, inst.model, 0,
                                          grid_mode(shape[0], sigma, lambda), rho);
    return inst;
}

Matrix dense_unaligned_operator(const UnalignedSubproblem& p) {
    Matrix f = build_F(p);
    Matrix sys = f.transpose() * f;
    sys += p.lambda() * kronecker(Matrix::Identity(p.r(), p.r()), p.mode->kernel());
    sys.diagonal().array() += p.rho;
    return sys;
}

}  // namespace

TEST(Acceptance, Criterion1AlignedSolverEquivalence) {
    const double t0 = now_s();
    std::mt19937_64 rng(101);
    double worst_dec = 0.0, worst_pcg = 0.0;
    int instances = 0;
    std::vector<std::tuple<Eigen::Index, Eigen::Index, double>> grid;
    for (Eigen::Index n : {10, 20, 40})
        for (Eigen::Index r : {2, 5, 8})
            for (double lambda : {0.1, 1.0}) grid.emplace_back(n, r, lambda);
    grid.emplace_back(30, 6, 0.1);  // pad the 18 grid combinations to 20
    grid.emplace_back(25, 4, 1.0);
    for (const auto& [n, r, lambda] : grid) {
        ++instances;
        AlignedSubproblem p;
        p.b = random_matrix(n, r, rng);
        p.v = random_spd(r, rng);
        p.mode = grid_mode(n, 2.0, lambda);
        Matrix wd = solve_aligned_direct(p);
        Matrix wdec = solve_aligned_decoupled(p);
        Matrix wp = solve_aligned_pcg(p, PcgConfig{1e-6, 75});
        worst_dec = std::max(worst_dec, (wd - wdec).norm() / wd.norm());
        worst_pcg = std::max(worst_pcg, (wd - wp).norm() / wd.norm());
    }
    const double elapsed = now_s() - t0;
    std::ostringstream d;
    d << instances << " instances, decoupled vs direct " << worst_dec
      << " <= 1e-8, pcg vs direct " << worst_pcg << " <= 1e-4, " << elapsed << "s < 10s";
    report(1, "aligned solver equivalence",
           instances == 20 && worst_dec <= 1e-8 && worst_pcg <= 1e-4 && elapsed < 10.0,
           d.str());
}

TEST(Acceptance, Criterion2UnalignedMatvecOracle) {
    const double t0 = now_s();
    std::mt19937_64 rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Index n = 3 + static_cast<Eigen::Index>(rng() % 8);   // <= 10
        const Eigen::Index r = 1 + static_cast<Eigen::Index>(rng() % 4);   // <= 4
        const Eigen::Index total = n * n * n;
        const Eigen::Index q =
            1 + static_cast<Eigen::Index>(rng() % std::min<Eigen::Index>(60, total));
        UnalignedInstance inst = make_unaligned_instance(
            {n, n, n}, r, q, 1.0 + 0.1 * static_cast<double>(trial % 5), 0.1, 1e-6, rng);
        Matrix dense = dense_unaligned_operator(inst.prob);
        Vector x = random_matrix(n * r, 1, rng);
        Vector y = unaligned_matvec(inst.prob, x);
        Vector y_ref = dense * x;
        worst = std::max(worst, (y - y_ref).norm() / y_ref.norm());
    }
    const double elapsed = now_s() - t0;
    std::ostringstream d;
    d << "50 instances, worst rel deviation " << worst << " <= 1e-10, " << elapsed
      << "s < 5s";
    report(2, "unaligned matvec oracle", worst <= 1e-10 && elapsed < 5.0, d.str());
}

TEST(Acceptance, Criterion3PreconditionerOracle) {
    const double t0 = now_s();
    std::mt19937_64 rng(303);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 4 + static_cast<Eigen::Index>(rng() % 8);
        const Eigen::Index r = 1 + static_cast<Eigen::Index>(rng() % 4);
        const Eigen::Index total = n * n * n;
        const Eigen::Index q =
            1 + static_cast<Eigen::Index>(rng() % std::min<Eigen::Index>(120, total));
        UnalignedInstance inst =
            make_unaligned_instance({n, n, n}, r, q, 1.2, 0.1, 1e-4, rng);
        const UnalignedSubproblem& p = inst.prob;
        const Matrix& k = p.mode->kernel();
        Matrix m = p.density() * kronecker(p.v, Matrix(k * k));
        m += p.lambda() * kronecker(Matrix::Identity(r, r), k);
        m.diagonal().array() += p.rho;
        LinearOperator m_inv = build_preconditioner(p);
        Vector x = random_matrix(n * r, 1, rng);
        Vector y_ref = lu_solve(m, x);
        worst = std::max(worst, (m_inv.apply(x) - y_ref).norm() / y_ref.norm());
    }

    // at full density gamma = 1 the preconditioner equals the operator
    int worst_iters = 0;
    for (double lambda : {0.05, 0.5}) {
        for (double rho : {1e-6, 1e-2}) {
            DenseTensor t = random_tensor({6, 5, 5}, rng);
            ObservationSet obs = full_observations(t);
            KruskalModel model = random_model({6, 5, 5}, 3, rng);
            UnalignedSubproblem p = make_unaligned_subproblem(
                obs, model, 0, grid_mode(6, 1.5, lambda), rho);
            SolveReport rep;
            solve_unaligned_pcg(p, PcgConfig{1e-10, 75}, &rep);
            worst_iters = std::max(worst_iters, rep.iterations);
        }
    }
    const double elapsed = now_s() - t0;
    std::ostringstream d;
    d << "20 instances, worst apply deviation " << worst
      << " <= 1e-8; full-density pcg iterations " << worst_iters << " <= 2, " << elapsed
      << "s < 5s";
    report(3, "preconditioner oracle", worst <= 1e-8 && worst_iters <= 2 && elapsed < 5.0,
           d.str());
}

TEST(Acceptance, Criterion4UnalignedSolverAgreement) {
    const double t0 = now_s();
    std::mt19937_64 rng(404);

    // subproblem-level: pcg vs nonsymmetric direct on n=20, r=4, q=400
    double worst_w = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        UnalignedInstance inst =
            make_unaligned_instance({20, 20, 20}, 4, 400, 0.5, 0.1, 1e-6, rng);
        Matrix wd = solve_unaligned_direct_nonsym(inst.prob);
        Matrix wp = solve_unaligned_pcg(inst.prob, PcgConfig{1e-9, 400});
        worst_w = std::max(worst_w, (wd - wp).norm() / wd.norm());
    }

    // end-to-end: 30^3 synthetic, q = 5% of N, both solver paths
    DenseTensor t = synth_smooth_tensor({30, 30, 30}, 3, 4.5, 0.01, 41);
    ObservationSet obs = sample_uniform(t, 1350, 42);
    CpHifiConfig cfg;
    cfg.rank = 3;
    for (int k = 0; k < 3; ++k) cfg.mode_kinds.push_back(grid_mode(30, 3.0, 0.1));
    cfg.rho = 1e-6;
    cfg.max_outer = 20;
    cfg.restarts = 1;
    cfg.seed = 17;
    cfg.solver = SolverKind::UnalignedPcg;
    CpHifiResult res_pcg = cp_hifi(obs, cfg);
    cfg.solver = SolverKind::UnalignedDirectNonsym;
    CpHifiResult res_dir = cp_hifi(obs, cfg);
    const double err_gap =
        std::abs(res_pcg.trace.final_error() - res_dir.trace.final_error());

    const double elapsed = now_s() - t0;
    std::ostringstream d;
    d << "subproblem W deviation " << worst_w << " <= 1e-3; ALS final error gap "
      << err_gap << " <= 5e-3, " << elapsed << "s < 60s";
    report(4, "unaligned solver agreement",
           worst_w <= 1e-3 && err_gap <= 5e-3 && elapsed < 60.0, d.str());
}

TEST(Acceptance, Criterion5SpeedupDirection) {
    const double t0 = now_s();

    // aligned: 48^3 at r=16, decoupled vs direct over a fixed outer budget
    DenseTensor t = synth_smooth_tensor({48, 48, 48}, 16, 7.0, 0.01, 51);
    CpHifiConfig cfg;
    cfg.rank = 16;
    for (int k = 0; k < 3; ++k) cfg.mode_kinds.push_back(grid_mode(48, 3.0, 0.1));
    cfg.max_outer = 5;
    cfg.outer_tol = 0.0;
    cfg.restarts = 1;
    cfg.seed = 5;
    cfg.solver = SolverKind::AlignedDirect;
    const double time_direct = total_time(cp_hifi(t, cfg).trace);
    cfg.solver = SolverKind::AlignedDecoupled;
    const double time_dec = total_time(cp_hifi(t, cfg).trace);

    // unaligned: q = 20000 samples, pcg vs nonsymmetric direct
    ObservationSet obs = sample_uniform(t, 20000, 52);
    cfg.max_outer = 2;
    cfg.solver = SolverKind::UnalignedDirectNonsym;
    const double time_udir = total_time(cp_hifi(obs, cfg).trace);
    cfg.solver = SolverKind::UnalignedPcg;
    const double time_upcg = total_time(cp_hifi(obs, cfg).trace);

    const double elapsed = now_s() - t0;
    std::ostringstream d;
    d << "aligned decoupled/direct " << time_dec << "s/" << time_direct << "s = "
      << time_dec / time_direct << " <= 0.1; unaligned pcg/direct " << time_upcg << "s/"
      << time_udir << "s = " << time_upcg / time_udir << " <= 0.2, " << elapsed
      << "s < 600s";
    report(5, "speedup direction",
           time_dec <= 0.1 * time_direct && time_upcg <= 0.2 * time_udir &&
               elapsed < 600.0,
           d.str());
}

TEST(Acceptance, Criterion6ComplexityScaling) {
    const double t0 = now_s();
    std::mt19937_64 rng(606);

    // decoupled solve time vs n at fixed r
    std::vector<double> ns, tns;
    for (Eigen::Index n : {64, 128, 256, 512}) {
        AlignedSubproblem p;
        p.b = random_matrix(n, 8, rng);
        p.v = random_spd(8, rng);
        p.mode = grid_mode(n, 3.0, 0.1);
        p.mode->eig();  // one-time cost, excluded from the per-solve timing
        const int reps = std::max(3, static_cast<int>(40000000 / (n * n * 8)));
        const double per_solve = min_batch_time(
            [&] { solve_aligned_decoupled(p); }, reps, 3);
        ns.push_back(static_cast<double>(n));
        tns.push_back(per_solve);
    }
    const double slope_n = loglog_slope(ns, tns);

    // unaligned matvec time vs q at fixed (small) mode size and rank
    const std::vector<Eigen::Index> shape = {32, 32, 32, 32};  // N = 2^20
    DenseTensor big = random_tensor(shape, rng);
    KruskalModel model = random_model(shape, 4, rng);
    auto mode = grid_mode(32, 2.0, 0.1);
    // interleaved rounds with a min per size, so a transient load spike on
    // the host cannot inflate a single sample size
    const std::vector<Eigen::Index> qsizes = {10000, 30000, 100000, 300000, 1000000};
    std::vector<ObservationSet> qsets;
    for (Eigen::Index q : qsizes) qsets.push_back(sample_uniform(big, q, rng()));
    std::vector<UnalignedSubproblem> qprobs;
    for (const auto& o : qsets)
        qprobs.push_back(make_unaligned_subproblem(o, model, 0, mode, 1e-6));
    Vector xq = random_matrix(32 * 4, 1, rng);
    for (auto& p : qprobs) unaligned_matvec(p, xq);  // touch all pages
    std::vector<double> qs, tqs(qsizes.size(), std::numeric_limits<double>::infinity());
    for (Eigen::Index q : qsizes) qs.push_back(static_cast<double>(q));
    for (int round = 0; round < 10; ++round) {
        for (std::size_t i = 0; i < qprobs.size(); ++i) {
            const int reps = std::max(3, static_cast<int>(3000000 / qsizes[i]));
            const double t0 = cpu_now_s();
            for (int r = 0; r < reps; ++r) unaligned_matvec(qprobs[i], xq);
            tqs[i] = std::min(tqs[i], (cpu_now_s() - t0) / reps);
        }
    }
    const double slope_q = loglog_slope(qs, tqs);

    const double elapsed = now_s() - t0;
    std::ostringstream d;
    d << "decoupled solve slope in n " << slope_n << " <= 2.3; matvec slope in q "
      << slope_q << " in [0.8, 1.2], " << elapsed << "s < 300s";
    report(6, "complexity scaling",
           slope_n <= 2.3 && slope_q >= 0.8 && slope_q <= 1.2 && elapsed < 300.0,
           d.str());
}

TEST(Acceptance, Criterion7MonotoneDescent) {
    DenseTensor t = synth_smooth_tensor({10, 10, 10}, 3, 1.5, 0.05, 71);
    ObservationSet obs = sample_uniform(t, 500, 72);

    auto max_rel_increase = [](const FitTrace& trace) {
        double worst = 0.0;
        for (std::size_t i = 1; i < trace.iterations.size(); ++i) {
            const double prev = trace.iterations[i - 1].objective;
            const double cur = trace.iterations[i].objective;
            worst = std::max(worst, (cur - prev) / std::abs(prev));
        }
        return worst;
    };

    CpHifiConfig cfg;
    cfg.rank = 2;
    for (int k = 0; k < 3; ++k) cfg.mode_kinds.push_back(grid_mode(10, 1.0, 0.1));
    cfg.max_outer = 50;
    cfg.outer_tol = 0.0;  // force the full 50 sweeps
    cfg.restarts = 1;
    cfg.seed = 7;

    bool pass = true;
    std::ostringstream d;
    const std::vector<std::pair<SolverKind, double>> runs = {
        {SolverKind::AlignedDirect, 1e-10},
        {SolverKind::AlignedDecoupled, 1e-10},
        {SolverKind::AlignedPcg, 1e-6},
        {SolverKind::UnalignedDirectNonsym, 1e-10},
        {SolverKind::UnalignedPcg, 1e-6},
    };
    for (const auto& [solver, slack] : runs) {
        cfg.solver = solver;
        CpHifiResult res = is_aligned_solver(solver) ? cp_hifi(t, cfg) : cp_hifi(obs, cfg);
        const double worst = max_rel_increase(res.trace);
        d << "solver " << static_cast<int>(solver) << " worst increase " << worst
          << " <= " << slack << "; ";
        pass = pass && worst <= slack &&
               res.trace.outer_iterations() == cfg.max_outer;
    }
    report(7, "monotone descent over 50 sweeps", pass, d.str());
}

TEST(Acceptance, Criterion8IdentitySuite) {
    const double t0 = now_s();
    std::mt19937_64 rng(808);
    double worst = 0.0;
    auto track = [&worst](double v) { worst = std::max(worst, v); };

    // Kronecker identities
    for (int trial = 0; trial < 5; ++trial) {
        Matrix a = random_matrix(3, 4, rng), b = random_matrix(2, 5, rng);
        Matrix c = random_matrix(4, 3, rng), e = random_matrix(5, 2, rng);
        track((kronecker(a, b).transpose() - kronecker(a.transpose(), b.transpose()))
                  .cwiseAbs()
                  .maxCoeff());
        track((kronecker(a, b) * kronecker(c, e) - kronecker(a * c, b * e))
                  .cwiseAbs()
                  .maxCoeff());
        // vec identity: vec(B X A') = (A kron B) vec(X)
        Matrix x = random_matrix(5, 4, rng);
        Matrix y = b * x * a.transpose();
        Vector lhs = Eigen::Map<Vector>(y.data(), y.size());
        Vector rhs = kronecker(a, b) * Eigen::Map<Vector>(x.data(), x.size());
        track((lhs - rhs).cwiseAbs().maxCoeff());
    }

    // perfect shuffle: K(A kron B)L' = B kron A for commutation matrices K, L
    {
        Matrix a = random_matrix(3, 2, rng), b = random_matrix(4, 5, rng);
        auto commutation = [](Eigen::Index m, Eigen::Index n) {
            Matrix s = Matrix::Zero(m * n, m * n);
            for (Eigen::Index i = 0; i < m; ++i)
                for (Eigen::Index j = 0; j < n; ++j) s(j + n * i, i + m * j) = 1.0;
            return s;
        };
        Matrix lhs = commutation(4, 3) * kronecker(a, b) * commutation(2, 5);
        track((lhs - kronecker(b, a)).cwiseAbs().maxCoeff());
    }

    // MTTKRP and Gram dense-oracle equivalence on shapes up to 5^4
    const std::vector<std::vector<Eigen::Index>> shapes = {
        {3, 4}, {4, 3, 2}, {5, 5, 5}, {5, 5, 5, 5}, {2, 3, 4, 5}};
    for (const auto& shape : shapes) {
        for (Eigen::Index r : {1, 3}) {
            DenseTensor t = random_tensor(shape, rng);
            KruskalModel model = random_model(shape, r, rng);
            for (int k = 0; k < static_cast<int>(shape.size()); ++k) {
                Matrix z = khatri_rao_excluding(model, k);
                Matrix b_ref = unfold(t, k) * z;
                track((mttkrp(t, model, k) - b_ref).cwiseAbs().maxCoeff() /
                      std::max(1.0, b_ref.cwiseAbs().maxCoeff()));
                Matrix v_ref = z.transpose() * z;
                track((gram_khatri_rao(model, k) - v_ref).cwiseAbs().maxCoeff() /
                      std::max(1.0, v_ref.cwiseAbs().maxCoeff()));
            }
        }
    }
    const double elapsed = now_s() - t0;
    std::ostringstream d;
    d << "worst identity deviation " << worst << " <= 1e-12, " << elapsed << "s < 5s";
    report(8, "Kronecker and MTTKRP identity suite", worst <= 1e-12 && elapsed < 5.0,
           d.str());
}

TEST(Acceptance, Criterion9PlantedRecovery) {
    const double t0 = now_s();
    DenseTensor t = synth_smooth_tensor({20, 20, 20}, 3, 3.0, 0.0, 91);

    CpHifiConfig cfg;
    cfg.rank = 3;
    for (int k = 0; k < 3; ++k) cfg.mode_kinds.push_back(grid_mode(20, 1.2, 1e-8));
    cfg.rho = 1e-9;
    cfg.max_outer = 300;
    cfg.outer_tol = 1e-8;
    cfg.restarts = 3;
    cfg.seed = 9;
    cfg.inner = PcgConfig{1e-9, 300};

    ObservationSet obs = sample_uniform(t, 2400, 92);  // 30% of N

    bool pass = true;
    std::ostringstream d;
    const std::vector<SolverKind> solvers = {
        SolverKind::AlignedDirect,      SolverKind::AlignedDecoupled,
        SolverKind::AlignedPcg,         SolverKind::UnalignedDirectNonsym,
        SolverKind::UnalignedPcg,
    };
    for (SolverKind solver : solvers) {
        cfg.solver = solver;
        CpHifiResult res = is_aligned_solver(solver) ? cp_hifi(t, cfg) : cp_hifi(obs, cfg);
        const double err = res.trace.final_error();
        d << "solver " << static_cast<int>(solver) << " error " << err << "; ";
        pass = pass && err <= 1e-3;
    }
    const double elapsed = now_s() - t0;
    d << elapsed << "s < 60s";
    report(9, "planted recovery on all solver paths", pass && elapsed < 60.0, d.str());
}
