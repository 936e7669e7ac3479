#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "cphifi/als.hpp"
#include "cphifi/io.hpp"
#include "cphifi/synth.hpp"

using namespace cphifi;

namespace {

struct SolverOption {
    std::string name;
    SolverKind kind;
};

const std::vector<SolverOption> kSolvers = {
    {"aligned-direct", SolverKind::AlignedDirect},
    {"aligned-decoupled", SolverKind::AlignedDecoupled},
    {"aligned-pcg", SolverKind::AlignedPcg},
    {"unaligned-direct", SolverKind::UnalignedDirectNonsym},
    {"unaligned-pcg", SolverKind::UnalignedPcg},
};

SolverKind parse_solver(const std::string& name) {
    for (const auto& s : kSolvers)
        if (s.name == name) return s.kind;
    std::string valid;
    for (const auto& s : kSolvers) valid += " " + s.name;
    throw CLI::ValidationError("--method", "unknown method '" + name + "'; one of:" + valid);
}

bool is_direct_baseline(SolverKind k) {
    return k == SolverKind::AlignedDirect || k == SolverKind::UnalignedDirectNonsym;
}

/// Shared fit options for decompose and bench.
struct FitOptions {
    std::string tensor_path;
    std::string obs_path;
    std::vector<std::string> sigma_specs;   // "v" or "k=v", 1-based mode
    std::vector<std::string> points_specs;  // "k=path"
    std::vector<int> finite_modes;          // 1-based
    double lambda = 0.1;
    double rho = 1e-6;
    int max_outer = 50;
    double outer_tol = 1e-6;
    int max_inner = 75;
    double inner_tol = 1e-6;
    int restarts = 3;
    std::uint64_t seed = 0;
    bool warm_start = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--tensor", tensor_path, "dense tensor file (aligned run)");
        cmd->add_option("--obs", obs_path, "observation file (unaligned run)");
        cmd->add_option("--sigma", sigma_specs,
                        "kernel bandwidth, either a single value for all modes or "
                        "k=v with 1-based mode k (repeatable)");
        cmd->add_option("--points", points_specs,
                        "design point file per mode as k=path, 1-based (repeatable)");
        cmd->add_option("--finite", finite_modes,
                        "treat mode k (1-based) as a plain finite mode (repeatable)");
        cmd->add_option("--lambda", lambda, "RKHS regularization weight");
        cmd->add_option("--rho", rho, "identity shift for the unaligned system");
        cmd->add_option("--max-outer", max_outer, "outer ALS iteration cap");
        cmd->add_option("--outer-tol", outer_tol, "outer stagnation tolerance");
        cmd->add_option("--max-inner", max_inner, "inner PCG iteration cap");
        cmd->add_option("--inner-tol", inner_tol, "inner PCG relative tolerance");
        cmd->add_option("--restarts", restarts, "number of random restarts");
        cmd->add_option("--seed", seed, "base RNG seed");
        cmd->add_flag("--warm-start", warm_start,
                      "warm-start inner PCG solves from the previous sweep");
    }
};

struct LoadedData {
    std::optional<DenseTensor> tensor;
    std::optional<ObservationSet> obs;

    const std::vector<Eigen::Index>& shape() const {
        return tensor ? tensor->shape() : obs->shape();
    }
    bool aligned() const { return tensor.has_value(); }
};

LoadedData load_data(const FitOptions& opt) {
    if (opt.tensor_path.empty() == opt.obs_path.empty())
        throw CLI::ValidationError("--tensor/--obs", "provide exactly one input");
    LoadedData d;
    if (!opt.tensor_path.empty())
        d.tensor = read_tensor(opt.tensor_path);
    else
        d.obs = read_observations(opt.obs_path);
    return d;
}

std::map<int, std::string> parse_keyed(const std::vector<std::string>& specs,
                                       const char* flag, int order,
                                       std::string* global) {
    std::map<int, std::string> out;
    for (const auto& s : specs) {
        auto eq = s.find('=');
        if (eq == std::string::npos) {
            if (!global) throw CLI::ValidationError(flag, "expected k=value");
            *global = s;
            continue;
        }
        int k = std::stoi(s.substr(0, eq));
        if (k < 1 || k > order)
            throw CLI::ValidationError(flag, "mode index out of range: " + s);
        out[k] = s.substr(eq + 1);
    }
    return out;
}

std::vector<ModeKind> build_mode_kinds(const FitOptions& opt,
                                       const std::vector<Eigen::Index>& shape) {
    const int order = static_cast<int>(shape.size());
    std::string global_sigma;
    auto sigma_by_mode = parse_keyed(opt.sigma_specs, "--sigma", order, &global_sigma);
    auto points_by_mode = parse_keyed(opt.points_specs, "--points", order, nullptr);
    double default_sigma = global_sigma.empty() ? 1.0 : std::stod(global_sigma);

    std::vector<ModeKind> kinds;
    for (int k = 1; k <= order; ++k) {
        if (std::find(opt.finite_modes.begin(), opt.finite_modes.end(), k) !=
            opt.finite_modes.end()) {
            kinds.emplace_back(FiniteMode{});
            continue;
        }
        double sigma = default_sigma;
        if (auto it = sigma_by_mode.find(k); it != sigma_by_mode.end())
            sigma = std::stod(it->second);
        if (auto it = points_by_mode.find(k); it != points_by_mode.end()) {
            std::vector<double> pts = read_design_points(it->second);
            if (static_cast<Eigen::Index>(pts.size()) != shape[k - 1])
                throw CLI::ValidationError("--points",
                                           "point count does not match mode size");
            kinds.emplace_back(std::make_shared<RkhsMode>(pts, sigma, opt.lambda));
        } else {
            kinds.emplace_back(std::make_shared<RkhsMode>(
                RkhsMode::regular_grid(shape[k - 1], sigma, opt.lambda)));
        }
    }
    return kinds;
}

CpHifiConfig build_config(const FitOptions& opt, const std::vector<Eigen::Index>& shape,
                          Eigen::Index rank, SolverKind solver) {
    CpHifiConfig cfg;
    cfg.rank = rank;
    cfg.mode_kinds = build_mode_kinds(opt, shape);
    cfg.solver = solver;
    cfg.rho = opt.rho;
    cfg.max_outer = opt.max_outer;
    cfg.outer_tol = opt.outer_tol;
    cfg.inner.max_iter = opt.max_inner;
    cfg.inner.tol = opt.inner_tol;
    cfg.restarts = opt.restarts;
    cfg.seed = opt.seed;
    cfg.warm_start = opt.warm_start;
    return cfg;
}

CpHifiResult run_fit(const LoadedData& data, const CpHifiConfig& cfg) {
    return data.aligned() ? cp_hifi(*data.tensor, cfg) : cp_hifi(*data.obs, cfg);
}

double total_time(const FitTrace& trace) {
    double t = 0.0;
    for (const auto& it : trace.iterations) t += it.wall_time_s;
    return t;
}

double mean_inner_iters(const FitTrace& trace) {
    long iters = 0, solves = 0;
    for (const auto& it : trace.iterations) {
        for (const auto& rep : it.mode_reports) {
            if (rep.iterations == 0) continue;
            iters += rep.iterations;
            ++solves;
        }
    }
    return solves == 0 ? 0.0 : static_cast<double>(iters) / static_cast<double>(solves);
}

void write_trace_csv(const std::string& path, const FitTrace& trace) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out.precision(17);
    out << "iter,rel_error,objective,time_s\n";
    for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
        const auto& it = trace.iterations[i];
        out << i << ',' << it.rel_error << ',' << it.objective << ','
            << it.wall_time_s << '\n';
    }
}

int run_synth(const std::string& out_path, std::vector<Eigen::Index> shape,
              Eigen::Index rank, double bump_width, double noise, std::uint64_t seed) {
    DenseTensor t = synth_smooth_tensor(shape, rank, bump_width, noise, seed);
    write_tensor(out_path, t);
    std::cout << "wrote " << out_path << " (" << t.size() << " entries)\n";
    return 0;
}

int run_sample(const std::string& tensor_path, const std::string& out_path,
               Eigen::Index q, std::uint64_t seed) {
    DenseTensor t = read_tensor(tensor_path);
    ObservationSet obs = sample_uniform(t, q, seed);
    write_observations(out_path, obs);
    std::cout << "wrote " << out_path << " (" << obs.num_obs() << " of " << t.size()
              << " entries)\n";
    return 0;
}

int run_decompose(const FitOptions& opt, Eigen::Index rank, const std::string& method,
                  const std::string& out_dir) {
    LoadedData data = load_data(opt);
    SolverKind solver = parse_solver(method);
    CpHifiConfig cfg = build_config(opt, data.shape(), rank, solver);
    CpHifiResult res = run_fit(data, cfg);

    std::filesystem::create_directories(out_dir);
    const auto dir = std::filesystem::path(out_dir);
    for (std::size_t k = 0; k < res.model.factors.size(); ++k) {
        write_matrix((dir / ("factor_" + std::to_string(k) + ".tns")).string(),
                     res.model.factors[k]);
        if (res.weights[k])
            write_matrix((dir / ("weights_" + std::to_string(k) + ".tns")).string(),
                         *res.weights[k]);
    }
    write_trace_csv((dir / "trace.csv").string(), res.trace);

    std::cout.precision(10);
    std::cout << "method=" << method << " rank=" << rank
              << " rel_error=" << res.trace.final_error()
              << " outer_iters=" << res.trace.outer_iterations()
              << " time_s=" << total_time(res.trace) << '\n';
    return 0;
}

struct BenchCell {
    Eigen::Index rank;
    SolverKind solver;
    std::string solver_name;
    double rel_error = std::numeric_limits<double>::quiet_NaN();
    double total_time_s = std::numeric_limits<double>::quiet_NaN();
    int outer_iters = 0;
    double inner_iters = 0.0;
    std::string note;
    bool failed = false;
};

int run_bench(const FitOptions& opt, std::vector<Eigen::Index> ranks,
              std::vector<std::string> methods, const std::string& out_path, int jobs) {
    LoadedData data = load_data(opt);
    if (ranks.empty()) throw CLI::ValidationError("--ranks", "need at least one rank");
    if (methods.empty()) throw CLI::ValidationError("--methods", "need at least one method");

    std::vector<BenchCell> cells;
    for (auto r : ranks) {
        for (const auto& m : methods) {
            BenchCell c;
            c.rank = r;
            c.solver = parse_solver(m);
            c.solver_name = m;
            cells.push_back(std::move(c));
        }
    }

    if (const char* det = std::getenv("CPHIFI_DETERMINISTIC"); det && det[0] == '1')
        jobs = 1;
    jobs = std::max(1, jobs);

    std::mutex mu;
    std::size_t next = 0;
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= cells.size()) return;
                i = next++;
            }
            BenchCell& c = cells[i];
            try {
                CpHifiConfig cfg = build_config(opt, data.shape(), c.rank, c.solver);
                CpHifiResult res = run_fit(data, cfg);
                c.rel_error = res.trace.final_error();
                c.total_time_s = total_time(res.trace);
                c.outer_iters = res.trace.outer_iterations();
                c.inner_iters = mean_inner_iters(res.trace);
            } catch (const std::exception& e) {
                c.failed = true;
                c.note = e.what();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // baseline per rank: the direct solver of the matching alignment, if present
    std::map<Eigen::Index, double> direct_time;
    for (const auto& c : cells)
        if (!c.failed && is_direct_baseline(c.solver)) direct_time[c.rank] = c.total_time_s;

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open " + out_path);
    out.precision(17);
    out << "# jobs=" << jobs << "; timing columns comparable only at equal jobs\n";
    out << "rank,solver,rel_error,total_time_s,outer_iters,mean_inner_iters,"
           "speedup_vs_direct,note\n";
    for (const auto& c : cells) {
        double speedup = std::numeric_limits<double>::quiet_NaN();
        if (auto it = direct_time.find(c.rank); it != direct_time.end() && !c.failed)
            speedup = it->second / c.total_time_s;
        out << c.rank << ',' << c.solver_name << ',' << c.rel_error << ','
            << c.total_time_s << ',' << c.outer_iters << ',' << c.inner_iters << ','
            << speedup << ',' << c.note << '\n';
    }
    std::cout << "wrote " << out_path << " (" << cells.size() << " rows)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CP-HIFI: CP decomposition with kernel-represented modes"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic smooth low-rank tensor");
    std::vector<Eigen::Index> synth_shape;
    Eigen::Index synth_rank = 3;
    double bump_width = 0.0, noise = 0.0;
    std::uint64_t synth_seed = 0;
    std::string synth_out = "tensor.tns";
    synth->add_option("--shape", synth_shape, "mode sizes")->required()->expected(-1);
    synth->add_option("--rank", synth_rank, "planted rank");
    synth->add_option("--bump-width", bump_width,
                      "profile width (default: 15% of the mode size)");
    synth->add_option("--noise", noise, "additive Gaussian noise level");
    synth->add_option("--seed", synth_seed, "RNG seed");
    synth->add_option("--out", synth_out, "output tensor file");

    // sample
    auto* sample = app.add_subcommand("sample", "sample scattered entries from a tensor");
    std::string sample_tensor, sample_out = "obs.txt";
    Eigen::Index sample_q = 0;
    std::uint64_t sample_seed = 0;
    sample->add_option("--tensor", sample_tensor, "dense tensor file")->required();
    sample->add_option("--q", sample_q, "number of entries to keep")->required();
    sample->add_option("--seed", sample_seed, "RNG seed");
    sample->add_option("--out", sample_out, "output observation file");

    // decompose
    auto* dec = app.add_subcommand("decompose", "fit one model and write factors + trace");
    FitOptions dec_opt;
    dec_opt.attach(dec);
    Eigen::Index dec_rank = 1;
    std::string dec_method = "aligned-decoupled";
    std::string dec_out = ".";
    dec->add_option("--rank", dec_rank, "CP rank")->required();
    dec->add_option("--method", dec_method, "subproblem solver");
    dec->add_option("--out", dec_out, "output directory");

    // bench
    auto* bench = app.add_subcommand("bench", "rank/solver sweep, writes a CSV");
    FitOptions bench_opt;
    bench_opt.attach(bench);
    std::vector<Eigen::Index> bench_ranks;
    std::vector<std::string> bench_methods;
    std::string bench_out = "bench.csv";
    int bench_jobs = 1;
    bench->add_option("--ranks", bench_ranks, "CP ranks to sweep")->required()->expected(-1);
    bench->add_option("--methods", bench_methods, "solvers to sweep")
        ->required()
        ->expected(-1);
    bench->add_option("--out", bench_out, "output CSV file");
    bench->add_option("--jobs", bench_jobs, "concurrent sweep cells");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            if (bump_width <= 0.0) {
                Eigen::Index nmax = *std::max_element(synth_shape.begin(), synth_shape.end());
                bump_width = 0.15 * static_cast<double>(nmax);
            }
            return run_synth(synth_out, synth_shape, synth_rank, bump_width, noise,
                             synth_seed);
        }
        if (sample->parsed()) return run_sample(sample_tensor, sample_out, sample_q,
                                                sample_seed);
        if (dec->parsed()) return run_decompose(dec_opt, dec_rank, dec_method, dec_out);
        if (bench->parsed())
            return run_bench(bench_opt, bench_ranks, bench_methods, bench_out, bench_jobs);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
