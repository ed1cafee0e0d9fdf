// mpc: generate, solve, bench, flowfield, verify.

#include <mpc/mpc.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kRejected = 1, kInvalid = 2, kMaxIter = 3, kFailed = 4 };

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct SolveFlags {
  std::string manifest;
  std::string out = "out";
  std::uint64_t seed = 1;
  double beta = 0, alpha = 1, g = 1, h = 1, tol = 1e-10;
  int T = 10;
  long long max_iter = 100000, trace_every = 0, stall_window = 0, k = 0;
  std::string method, algorithm = "rrr", init;
  bool swap = false, lattice = false;

  CLI::Option *o_beta = nullptr, *o_g = nullptr, *o_h = nullptr, *o_T = nullptr;

  void add(CLI::App* app) {
    app->add_option("--manifest", manifest, "Instance manifest JSON")->required()->check(CLI::ExistingFile);
    app->add_option("--out", out, "Output directory")->capture_default_str();
    app->add_option("--seed", seed, "Seed for the random start")->capture_default_str();
    o_beta = app->add_option("--beta", beta, "RRR step (family default)");
    app->add_option("--alpha", alpha, "ADMM step")->capture_default_str();
    o_g = app->add_option("--g", g, "Left metric parameter (family default)");
    o_h = app->add_option("--h", h, "Right metric parameter (family default)");
    o_T = app->add_option("--T", T, "Tangent refinement cycles (family default)");
    app->add_option("--max-iter", max_iter, "Iteration cap")->capture_default_str();
    app->add_option("--tol", tol, "Stop when delta falls to this value")->capture_default_str();
    app->add_option("--trace-every", trace_every, "Trace sampling period, 0 = auto")->capture_default_str();
    app->add_option("--method", method, "gram|cyclic|rank_limited|rank_excessive|rank1 (family default)")
        ->check(CLI::IsMember({"gram", "cyclic", "rank_limited", "rank_excessive", "rank1"}));
    app->add_option("--algorithm", algorithm, "rrr|admm")->check(CLI::IsMember({"rrr", "admm"}))->capture_default_str();
    app->add_flag("--swap-projections", swap, "Exchange the roles of P1 and P2");
    app->add_option("--init", init, "random|special (family default)")->check(CLI::IsMember({"random", "special"}));
    app->add_option("--k", k, "Inner dimension, 0 = instance value")->capture_default_str();
    app->add_flag("--lattice", lattice, "rank1: integer lattice instead of the simplex");
    app->add_option("--stall-window", stall_window, "Restart window for stalled runs, 0 = off")->capture_default_str();
  }

  mpc::SolveConfig config(mpc::Family fam) const {
    mpc::SolveConfig c = mpc::default_config(fam);
    if (o_beta->count()) c.beta = beta;
    if (o_g->count()) c.g = g;
    if (o_h->count()) c.h = h;
    if (o_T->count()) c.T = T;
    c.alpha = alpha;
    c.algorithm = algorithm == "admm" ? mpc::Algorithm::admm : mpc::Algorithm::rrr;
    c.max_iter = max_iter;
    c.delta_tol = tol;
    c.seed = seed;
    c.swap_projections = swap;
    c.trace_every = trace_every;
    c.stall_window = stall_window;
    return c;
  }

  mpc::RunOptions run_options(mpc::Family fam) const {
    mpc::RunOptions r;
    if (!method.empty()) r.method = mpc::parse_method(method);
    r.special_init = init.empty() ? mpc::default_special_init(fam) : init == "special";
    r.lattice = lattice;
    r.k = k;
    return r;
  }
};

json config_json(const mpc::SolveConfig& c, const mpc::RunOptions& ro, mpc::Method m) {
  return {{"algorithm", mpc::to_string(c.algorithm)},
          {"beta", c.beta},
          {"alpha", c.alpha},
          {"T", c.T},
          {"g", c.g},
          {"h", c.h},
          {"max_iter", c.max_iter},
          {"tol", c.delta_tol},
          {"seed", c.seed},
          {"swap_projections", c.swap_projections},
          {"trace_every", c.effective_trace_every()},
          {"stall_window", c.stall_window},
          {"method", mpc::to_string(m)},
          {"init", ro.special_init ? "special" : "random"},
          {"k", ro.k},
          {"lattice", ro.lattice}};
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p);
  if (!os) throw mpc::Error(mpc::ErrorKind::InvalidInput, "cannot write " + p.string());
  os << s;
}

int exit_for(mpc::SolveStatus s) {
  switch (s) {
    case mpc::SolveStatus::solved: return kOk;
    case mpc::SolveStatus::max_iter: return kMaxIter;
    case mpc::SolveStatus::failed: return kFailed;
  }
  return kFailed;
}

// --- generate --------------------------------------------------------------

struct GenerateFlags {
  std::string family, preset, out = "instance";
  long long m = 0, n = 0, k = 0, d = 0;
  double f = -1, c = 0;
  std::uint64_t seed = 1;
};

int cmd_generate(const GenerateFlags& g) {
  mpc::ProblemInstance inst;
  if (g.preset == "maxdet15") {
    inst = mpc::maxdet_candidate_15();
  } else if (g.preset == "c23") {
    inst = mpc::c23_instance();
  } else {
    switch (mpc::parse_family(g.family)) {
      case mpc::Family::gram: inst = mpc::gen_gram(g.m, g.k > 0 ? g.k : g.m, g.seed); break;
      case mpc::Family::hadamard: inst = mpc::gen_hadamard(g.m); break;
      case mpc::Family::cyclic: inst = mpc::gen_cyclic(g.m, g.seed); break;
      case mpc::Family::nmf_designed: {
        const long long n = g.n > 0 ? g.n : g.m;
        const double f = g.f >= 0 ? g.f : (g.m > 0 ? static_cast<double>(g.k) / static_cast<double>(g.m) : 0.0);
        inst = mpc::gen_nmf_designed(g.m, n, g.k, f, g.seed);
        break;
      }
      case mpc::Family::udisj: inst = mpc::udisj(g.d); break;
      case mpc::Family::edm:
        inst = mpc::edm(g.m);
        inst.params.k = g.k;
        break;
      case mpc::Family::int2d: inst = mpc::int2d(g.c); break;
    }
  }
  const fs::path manifest = mpc::save_instance(g.out, inst);
  json summary = {{"manifest", manifest.string()},
                  {"family", mpc::to_string(inst.family)},
                  {"rows", inst.C.rows()},
                  {"cols", inst.C.cols()},
                  {"seed", inst.params.seed}};
  if (inst.family != mpc::Family::cyclic) summary["rank"] = mpc::svd(inst.C).rank();
  if (inst.hidden_X) summary["hidden_X"] = {inst.hidden_X->rows(), inst.hidden_X->cols()};
  if (inst.hidden_Y) summary["hidden_Y"] = {inst.hidden_Y->rows(), inst.hidden_Y->cols()};
  std::cout << summary.dump() << '\n';
  return kOk;
}

// --- solve -----------------------------------------------------------------

int cmd_solve(const SolveFlags& sf) {
  const mpc::ProblemInstance inst = mpc::load_instance(sf.manifest);
  const mpc::SolveConfig cfg = sf.config(inst.family);
  const mpc::RunOptions ro = sf.run_options(inst.family);
  const mpc::RunResult r = mpc::run(inst, ro, cfg);
  if (!r.warning.empty()) std::cerr << "warning: " << r.warning << '\n';

  const fs::path out(sf.out);
  fs::create_directories(out);
  const auto& o = r.outcome;
  json res = {{"status", mpc::to_string(o.status)},
              {"iterations", o.iterations},
              {"final_delta", o.final_delta},
              {"restarts", o.restarts},
              {"config", config_json(cfg, ro, r.method)},
              {"seed", cfg.seed},
              {"prng_id", mpc::kPrngId},
              {"family", mpc::to_string(inst.family)},
              {"manifest", sf.manifest}};
  if (!o.message.empty()) res["message"] = o.message;
  if (o.status == mpc::SolveStatus::solved) {
    res["verified"] = bool(mpc::verify(inst, r.candidate));
    mpc::save_matrix(out / "X.txt", r.candidate.X);
    if (r.candidate.Y.size()) mpc::save_matrix(out / "Y.txt", r.candidate.Y);
  }
  write_text(out / "result.json", res.dump(2) + "\n");

  std::string trace = "iter,delta\n";
  for (const auto& t : o.trace) trace += std::to_string(t.iter) + "," + fmt(t.delta) + "\n";
  write_text(out / "trace.csv", trace);

  std::cout << mpc::to_string(o.status) << " iterations=" << o.iterations << " final_delta=" << fmt(o.final_delta)
            << '\n';
  if (!o.message.empty()) std::cerr << o.message << '\n';
  return exit_for(o.status);
}

// --- bench -----------------------------------------------------------------

int cmd_bench(const SolveFlags& sf, long long trials, unsigned jobs) {
  if (trials < 1) throw mpc::Error(mpc::ErrorKind::InvalidInput, "bench: --trials must be at least 1");
  const mpc::ProblemInstance inst = mpc::load_instance(sf.manifest);
  const mpc::SolveConfig base = sf.config(inst.family);
  const mpc::RunOptions ro = sf.run_options(inst.family);
  base.validate();

  std::vector<mpc::RunResult> results(static_cast<std::size_t>(trials));
  std::vector<std::string> errors(results.size());
  std::atomic<long long> next{0};
  auto worker = [&]() {
    for (long long t; (t = next++) < trials;) {
      mpc::SolveConfig cfg = base;
      cfg.seed = mpc::trial_seed(base.seed, static_cast<std::uint64_t>(t));
      try {
        results[static_cast<std::size_t>(t)] = mpc::run(inst, ro, cfg);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(t)] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < std::max(1u, jobs); ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (!e.empty()) throw mpc::Error(mpc::ErrorKind::InvalidInput, e);

  json table = json::array();
  std::vector<long long> solved;
  long long total_iters = 0;
  for (long long t = 0; t < trials; ++t) {
    const auto& o = results[static_cast<std::size_t>(t)].outcome;
    table.push_back({{"trial", t},
                     {"seed", mpc::trial_seed(base.seed, static_cast<std::uint64_t>(t))},
                     {"status", mpc::to_string(o.status)},
                     {"iterations", o.iterations},
                     {"final_delta", o.final_delta},
                     {"restarts", o.restarts}});
    total_iters += o.iterations;
    if (o.status == mpc::SolveStatus::solved) solved.push_back(o.iterations);
  }
  std::sort(solved.begin(), solved.end());
  json agg = {{"trials", trials}, {"successes", solved.size()},
              {"success_rate", static_cast<double>(solved.size()) / static_cast<double>(trials)}};
  if (!solved.empty()) {
    const auto n = solved.size();
    agg["mean_iters"] = static_cast<double>(std::accumulate(solved.begin(), solved.end(), 0LL)) / static_cast<double>(n);
    agg["median_iters"] = n % 2 ? static_cast<double>(solved[n / 2])
                                : 0.5 * static_cast<double>(solved[n / 2 - 1] + solved[n / 2]);
    agg["min"] = solved.front();
    agg["max"] = solved.back();
    // Censored exponential fit: unsolved trials contribute their cap.
    agg["exp_rate"] = static_cast<double>(n) / static_cast<double>(std::max(1LL, total_iters));
  }
  const mpc::Method method = results.front().method;
  json doc = {{"aggregate", agg},
              {"trials", table},
              {"config", config_json(base, ro, method)},
              {"prng_id", mpc::kPrngId},
              {"manifest", sf.manifest}};
  fs::create_directories(sf.out);
  write_text(fs::path(sf.out) / "bench.json", doc.dump(2) + "\n");
  std::cout << agg.dump() << '\n';
  return kOk;
}

// --- flowfield -------------------------------------------------------------

struct FlowFlags {
  double c = 15, xmin = 2, xmax = 6, ymin = 2, ymax = 6, step = 0.05;
  int T = 10;
  std::string out = "flow.csv";
};

int cmd_flowfield(const FlowFlags& ff) {
  const double c = ff.c;
  const int T = ff.T;
  auto hyperbola = [c, T](mpc::Point2 p) {
    mpc::ScalarPair s = mpc::proj_scalar_product(c, {p.x, p.y}, T);
    return mpc::Point2{s.x.real(), s.y.real()};
  };
  auto lattice = [](mpc::Point2 p) { return mpc::Point2{std::round(p.x), std::round(p.y)}; };
  const auto samples = mpc::flow_field(hyperbola, lattice, {ff.xmin, ff.xmax, ff.ymin, ff.ymax, ff.step});
  std::string csv = "x,y,vx,vy\n";
  long long nan_nodes = 0;
  for (const auto& s : samples) {
    nan_nodes += s.degenerate;
    csv += fmt(s.x) + "," + fmt(s.y) + "," + fmt(s.vx) + "," + fmt(s.vy) + "\n";
  }
  const fs::path out(ff.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, csv);
  json meta = {{"nodes", samples.size()}, {"nan_nodes", nan_nodes}, {"c", c}, {"T", T}};
  write_text(fs::path(out.string() + ".meta.json"), meta.dump(2) + "\n");
  std::cout << meta.dump() << '\n';
  return kOk;
}

// --- verify ----------------------------------------------------------------

int cmd_verify(const std::string& manifest, const std::string& xfile, const std::string& yfile, double tol) {
  const mpc::ProblemInstance inst = mpc::load_instance(manifest);
  mpc::Candidate cand{mpc::load_matrix(xfile), yfile.empty() ? mpc::Matrix() : mpc::load_matrix(yfile)};
  const mpc::VerifyResult v = mpc::verify(inst, cand, tol);
  if (!v) {
    std::cerr << "rejected: " << v.reason << '\n';
    return kRejected;
  }
  std::cout << "accepted\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured matrix factorization by alternating projections"};
  app.require_subcommand(1);
  // -h is taken by the right metric parameter.
  app.set_help_flag("--help", "Print this help message and exit");

  GenerateFlags gf;
  auto* gen = app.add_subcommand("generate", "Write an instance manifest and its matrices");
  gen->add_option("--family", gf.family, "gram|hadamard|cyclic|nmf_designed|udisj|edm|int2d")
      ->check(CLI::IsMember({"gram", "hadamard", "cyclic", "nmf_designed", "udisj", "edm", "int2d"}));
  gen->add_option("--preset", gf.preset, "maxdet15|c23")->check(CLI::IsMember({"maxdet15", "c23"}));
  gen->add_option("--m", gf.m, "Rows")->capture_default_str();
  gen->add_option("--n", gf.n, "Columns, 0 = m")->capture_default_str();
  gen->add_option("--k", gf.k, "Inner dimension")->capture_default_str();
  gen->add_option("--d", gf.d, "udisj level")->capture_default_str();
  gen->add_option("--f", gf.f, "Zero fraction, negative = k/m")->capture_default_str();
  gen->add_option("--c", gf.c, "int2d product")->capture_default_str();
  gen->add_option("--seed", gf.seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gf.out, "Output directory")->capture_default_str();

  SolveFlags sf;
  auto* sol = app.add_subcommand("solve", "Run one solve and write result.json, trace.csv and the factors");
  sf.add(sol);

  SolveFlags bf;
  long long trials = 20;
  unsigned jobs = 1;
  auto* bench = app.add_subcommand("bench", "Independent trials with seeds seed^t and aggregate statistics");
  bf.add(bench);
  bench->add_option("--trials", trials, "Number of trials")->capture_default_str();
  bench->add_option("--jobs", jobs, "Worker threads")->capture_default_str();

  FlowFlags ff;
  auto* flow = app.add_subcommand("flowfield", "RRR flow field of the integer product toy as CSV");
  flow->add_option("--c", ff.c, "Product")->capture_default_str();
  flow->add_option("--xmin", ff.xmin)->capture_default_str();
  flow->add_option("--xmax", ff.xmax)->capture_default_str();
  flow->add_option("--ymin", ff.ymin)->capture_default_str();
  flow->add_option("--ymax", ff.ymax)->capture_default_str();
  flow->add_option("--step", ff.step)->capture_default_str();
  flow->add_option("--T", ff.T, "Tangent refinement cycles")->capture_default_str();
  flow->add_option("--out", ff.out, "CSV path")->capture_default_str();

  std::string vmanifest, vx, vy;
  double vtol = 1e-8;
  auto* ver = app.add_subcommand("verify", "Check candidate factors against an instance");
  ver->add_option("--manifest", vmanifest, "Instance manifest JSON")->required()->check(CLI::ExistingFile);
  ver->add_option("--X", vx, "Left factor (or x for cyclic)")->required()->check(CLI::ExistingFile);
  ver->add_option("--Y", vy, "Right factor (or y for cyclic)")->check(CLI::ExistingFile);
  ver->add_option("--tol", vtol, "Tolerance for continuous families")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalid;
  }

  try {
    if (*gen) {
      if (gf.family.empty() && gf.preset.empty()) throw mpc::Error(mpc::ErrorKind::InvalidInput, "--family or --preset is required");
      return cmd_generate(gf);
    }
    if (*sol) return cmd_solve(sf);
    if (*bench) return cmd_bench(bf, trials, jobs);
    if (*flow) return cmd_flowfield(ff);
    if (*ver) return cmd_verify(vmanifest, vx, vy, vtol);
  } catch (const mpc::Error& e) {
    std::cerr << "error (" << mpc::to_string(e.kind()) << "): " << e.what() << '\n';
    if (e.kind() == mpc::ErrorKind::InvalidInput || e.kind() == mpc::ErrorKind::Unsupported ||
        e.kind() == mpc::ErrorKind::ResourceLimit || e.kind() == mpc::ErrorKind::NotPSD)
      return kInvalid;
    return kFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  }
  return kInvalid;
}
