#pragma once

// Experiment commands behind the atlas executable. Each command is a pure
// function of its request and returns the files it wants written; the caller
// commits them to the output directory in one rename.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "atlas/closed_loop.hpp"
#include "atlas/dynamics.hpp"
#include "atlas/hamiltonian.hpp"
#include "atlas/json_io.hpp"
#include "atlas/linear_system.hpp"
#include "atlas/riccati.hpp"
#include "atlas/tabular.hpp"
#include "atlas/value_learn.hpp"

namespace atlas::cli {

namespace fs = std::filesystem;
using io::json;

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_validation = 2, exit_cap = 3, exit_checkpoint = 4 };

inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::enumeration_cap: return exit_cap;
    case ErrorKind::checkpoint_mismatch: return exit_checkpoint;
    case ErrorKind::dimension_mismatch:
    case ErrorKind::not_psd:
    case ErrorKind::not_pd:
    case ErrorKind::singular_a:
    case ErrorKind::wrong_mode:
    case ErrorKind::invalid_config:
    case ErrorKind::io: return exit_validation;
    default: return exit_failure;
    }
}

/// File name -> contents. Ordered so listings are stable.
using FileSet = std::map<std::string, std::string>;

struct Request {
    json config = json::object();
    std::optional<std::string> config_text;
    fs::path base_dir = ".";
    std::vector<std::uint64_t> seeds;
    std::optional<std::string> system_path;
    std::optional<int> family_samples;
    std::optional<std::string> model;
    std::optional<std::string> kind;
    std::optional<std::string> thrust_limit;
    std::optional<std::string> checkpoints;
    int threads = 1;
};

/// ATLAS_THREADS if set and positive, else the hardware concurrency.
inline int thread_budget() {
    if (const char* env = std::getenv("ATLAS_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(i) for i in [0, count) on up to `threads` workers. The first
/// failure by index is rethrown after all workers finish.
template <class F>
void parallel_for(std::size_t count, int threads, F&& f) {
    std::vector<std::exception_ptr> errors(count);
    auto guarded = [&](std::size_t i) {
        try {
            f(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) guarded(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) guarded(i);
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

namespace detail {

[[noreturn]] inline void invalid(const std::string& what) { throw Error(ErrorKind::invalid_config, what); }

inline void expect_keys(const json& j, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) invalid("config must be a JSON object");
    for (const auto& [key, v] : j.items())
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            invalid("unknown config key '" + key + "'");
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key) || j[key].is_null()) return fallback;
    try {
        return j[key].get<T>();
    } catch (const json::exception& e) {
        invalid(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline std::vector<std::uint64_t> seeds(const Request& req) {
    if (!req.seeds.empty()) return req.seeds;
    const auto& c = req.config;
    if (c.contains("seeds")) {
        const auto s = get_or<std::vector<std::uint64_t>>(c, "seeds", {});
        if (s.empty()) invalid("seeds must be a non-empty list");
        return s;
    }
    if (c.contains("seed")) return {get_or<std::uint64_t>(c, "seed", 0)};
    return {0};
}

inline fs::path resolve(const Request& req, const std::string& path) {
    const fs::path p(path);
    return p.is_absolute() ? p : req.base_dir / p;
}

inline LinearSystem system_from(const Request& req, const json& spec) {
    try {
        if (spec.is_string()) return io::load_system(resolve(req, spec.get<std::string>()).string());
        if (spec.is_object()) return io::system_from_json(spec);
    } catch (const json::exception& e) {
        invalid(std::string("bad system: ") + e.what());
    }
    invalid("system must be a path or an object");
}

inline LinearSystem toy_system() {
    LinearSystem sys;
    sys.A = sys.B = sys.Q = sys.R = Matrix::Identity(2, 2);
    return sys;
}

/// Everything that determines a trained network besides its seed.
struct ModelSetup {
    std::string spec;
    ControlAffineModel model;
    std::optional<LinearSystem> linear;
    json identity;
};

inline ModelSetup model_setup(const Request& req) {
    const auto& c = req.config;
    ModelSetup s;
    s.spec = req.model ? *req.model : get_or<std::string>(c, "model", "");
    if (s.spec.empty()) invalid("model is required (cartpole, drone2d or linear:<path>)");
    s.identity["model"] = s.spec;
    if (s.spec == "cartpole") {
        s.model = cartpole();
    } else if (s.spec == "drone2d") {
        DroneParams d;
        const std::string limit = req.thrust_limit ? *req.thrust_limit : get_or<std::string>(c, "thrust_limit", "per_propeller");
        if (limit == "per_propeller" || limit == "per") d.limit = ThrustLimit::per_propeller;
        else if (limit == "total") d.limit = ThrustLimit::total;
        else invalid("thrust_limit must be per_propeller or total");
        d.cost_about_hover = get_or<bool>(c, "cost_about_hover", true);
        s.identity["thrust_limit"] = d.limit == ThrustLimit::total ? "total" : "per_propeller";
        s.identity["cost_about_hover"] = d.cost_about_hover;
        s.model = drone2d(d);
    } else if (s.spec.rfind("linear:", 0) == 0) {
        s.linear = validate(system_from(req, json(s.spec.substr(7))));
        s.identity["system"] = io::to_json(*s.linear);
        s.model = from_linear(*s.linear);
    } else {
        invalid("unknown model '" + s.spec + "'");
    }
    return s;
}

inline TrainConfig train_config(const Request& req, TrainConfig base) {
    const json settings = req.config.contains("train") ? req.config["train"] : json::object();
    TrainConfig cfg = io::train_config_from_json(settings, std::move(base));
    if (req.kind) cfg.kind = network_kind_from(*req.kind);
    cfg.check();
    return cfg;
}

/// Defaults of the train command: Table-style hyperparameters with a bounded
/// replay dataset so an epoch costs the same throughout training.
inline TrainConfig train_defaults() {
    TrainConfig cfg;
    cfg.dataset_capacity = 20000;
    cfg.batches_per_epoch = 16;
    cfg.eval_every = 10;
    return cfg;
}

/// Defaults of the failure-mode command: the toy protocol with a generic MLP.
inline TrainConfig failure_mode_defaults() {
    TrainConfig cfg;
    cfg.kind = NetworkKind::generic;
    cfg.widths = {128, 128, 128};
    cfg.data = DataRegime::uniform;
    cfg.uniform_samples = 10000;
    cfg.loss = LossKind::mse;
    cfg.epochs = 1000;
    cfg.eval_rollouts = 10;
    cfg.eval_steps = 1000;
    cfg.eval_every = 0;
    return cfg;
}

inline std::string config_hash(const ModelSetup& setup, const TrainConfig& cfg) {
    json j = setup.identity;
    j["train"] = io::to_json(cfg);
    return atlas::config_hash(j);
}

struct Reference {
    bool available = false;
    EvalResult lqr;
    std::optional<double> exact;
};

/// LQR at the linearization, rolled out with the same integrator, horizon and
/// control box as the learned policy. For linear models the infinite-horizon
/// cost x0'P x0 is reported as well.
inline Reference reference(const ModelSetup& setup, const std::vector<Vector>& starts, const TrainConfig& cfg) {
    Reference ref;
    const LinearSystem sys = setup.linear ? *setup.linear : linearize(setup.model);
    SolutionFamily fam;
    try {
        fam = solve_all(sys, {0, 0});
    } catch (const Error&) {
        return ref;
    }
    const int k = fam.stable_index();
    if (k < 0) return ref;
    const Matrix p = fam.isolated[static_cast<std::size_t>(k)].P;
    const Matrix gain = feedback_gain(sys, p);
    const ControlAffineModel& model = setup.model;
    const Policy lqr = [&](const Vector& x) { return model.clip(model.u_eq - gain * (x - model.x_eq)); };
    ref.available = true;
    ref.lqr = evaluate(lqr, model, starts, cfg.eval_steps, {cfg.dt, cfg.policy_at_stages});
    if (setup.linear && !starts.empty()) {
        double sum = 0.0;
        for (const auto& x : starts) sum += exact_cost(p, x);
        ref.exact = sum / static_cast<double>(starts.size());
    }
    return ref;
}

inline std::string opt_fmt(const std::optional<double>& v) { return v ? io::fmt(*v) : std::string(); }

inline std::string rollouts_csv(const std::vector<Vector>& starts, const EvalResult& ev) {
    std::ostringstream os;
    os << "rollout";
    if (!starts.empty())
        for (Eigen::Index i = 0; i < starts.front().size(); ++i) os << ",x0_" << (i + 1);
    os << ",cost,diverged\n";
    for (std::size_t r = 0; r < starts.size(); ++r) {
        os << r;
        for (Eigen::Index i = 0; i < starts[r].size(); ++i) os << ',' << io::fmt(starts[r](i));
        os << ',' << io::fmt(ev.costs[r]) << ',' << (ev.diverged[r] ? 1 : 0) << '\n';
    }
    return os.str();
}

inline std::string complex_text(const Complex& c) {
    std::string s = io::fmt(c.real());
    if (c.imag() != 0.0) s += (c.imag() < 0.0 ? "-" : "+") + io::fmt(std::abs(c.imag())) + "i";
    return s;
}

inline std::string matrix_text(const Matrix& m) {
    std::string s = "[";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (i) s += "; ";
        for (Eigen::Index j = 0; j < m.cols(); ++j) s += (j ? " " : "") + io::fmt(m(i, j));
    }
    return s + "]";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// enumerate

inline FileSet run_enumerate(const Request& req) {
    using namespace detail;
    const auto& c = req.config;
    expect_keys(c, {"system", "family_samples", "seed", "seeds"});
    LinearSystem sys;
    if (req.system_path) sys = system_from(Request{.base_dir = "."}, json(*req.system_path));
    else if (c.contains("system")) sys = system_from(req, c["system"]);
    else invalid("enumerate needs a system (--system or config 'system')");

    EnumerateOptions opt;
    opt.family_samples = req.family_samples ? *req.family_samples : get_or<int>(c, "family_samples", 16);
    if (opt.family_samples < 0) invalid("family_samples must be non-negative");
    opt.seed = seeds(req).front();

    const LinearSystem valid = validate(sys);
    if (valid.n() > kMaxEnumerationDim)
        throw Error(ErrorKind::enumeration_cap, "refusing to enumerate n = " + std::to_string(valid.n()) + " > " +
                                                    std::to_string(kMaxEnumerationDim));
    const auto diag = diagnose(valid);
    const auto spec = spectrum(build(valid));
    const auto fam = enumerate(spec, valid, opt);

    json out = io::to_json(fam);
    out["system"] = io::to_json(valid);
    out["spectrum"] = io::to_json(spec);
    out["seed"] = opt.seed;
    out["diagnostics"] = {{"controllable", diag.controllable}, {"observable", diag.observable}};

    std::ostringstream s;
    s << "mode: " << to_string(valid.mode) << "\n";
    s << "n: " << valid.n() << "\nm: " << valid.m() << "\n";
    s << "discount: " << (valid.discount ? io::fmt(*valid.discount) : std::string("none")) << "\n";
    s << "controllable: " << (diag.controllable ? "yes" : "no") << "\n";
    s << "observable: " << (diag.observable ? "yes" : "no") << "\n";
    s << "isolated solutions: " << fam.count_discrete() << "\n";
    s << "stable index: " << fam.stable_index() << "\n";
    s << "continuum: " << (fam.has_continuum ? "yes" : "no") << "\n";
    s << "family samples: " << fam.samples.size() << "\n";
    s << "selections tried: " << fam.selections_tried << "\n";
    s << "singular selections: " << fam.singular_selections << "\n";
    if (fam.stable_index() >= 0) s << "stable P: " << matrix_text(fam.isolated[static_cast<std::size_t>(fam.stable_index())].P) << "\n";
    s << "\nhamiltonian eigenvalues\nindex,value,stable,group\n";
    for (std::size_t i = 0; i < spec.eigenvalues.size(); ++i)
        s << i << ',' << complex_text(spec.eigenvalues[i]) << ',' << (spec.stable_mask[i] ? "yes" : "no") << ','
          << spec.group_of[i] << '\n';
    s << "\nsolutions\nindex,stable,are_residual,symmetry_defect,multiplicity,closed_loop_eigenvalues\n";
    for (std::size_t i = 0; i < fam.isolated.size(); ++i) {
        const auto& sol = fam.isolated[i];
        s << i << ',' << (sol.stable ? "yes" : "no") << ',' << io::fmt(sol.are_residual) << ','
          << io::fmt(sol.symmetry_defect) << ',' << sol.multiplicity << ',';
        for (std::size_t k = 0; k < sol.closed_loop_eigs.size(); ++k) s << (k ? " " : "") << complex_text(sol.closed_loop_eigs[k]);
        s << '\n';
    }
    for (const auto& w : fam.warnings) s << "warning: " << w << '\n';

    return {{"solutions.json", io::dump(out)}, {"summary.txt", s.str()}};
}

// ---------------------------------------------------------------------------
// failure-mode

inline FileSet run_failure_mode(const Request& req) {
    using namespace detail;
    const auto& c = req.config;
    expect_keys(c, {"system", "seeds", "seed", "initializers", "train", "family_samples", "grid", "half_width"});
    const LinearSystem sys = validate(c.contains("system") ? system_from(req, c["system"]) : toy_system());
    if (sys.n() != 2) invalid("failure-mode classification needs a two-dimensional system");
    const ControlAffineModel model = from_linear(sys);
    const TrainConfig base = train_config(req, failure_mode_defaults());
    const int family_samples = get_or<int>(c, "family_samples", 1024);
    const int grid = get_or<int>(c, "grid", 41);
    const double half_width = get_or<double>(c, "half_width", 2.0);
    if (family_samples < 0 || grid < 3 || !(half_width > 0.0)) invalid("bad classification settings");
    const auto family = solve_all(sys, {family_samples, 0});
    const int stable = family.stable_index();

    std::vector<Initializer> inits;
    for (const auto& name : get_or<std::vector<std::string>>(c, "initializers", {"lecun_normal"}))
        inits.push_back(initializer_from(name));
    if (inits.empty()) invalid("initializers must not be empty");
    const auto seed_list = seeds(req);

    struct Job {
        Initializer init;
        std::uint64_t seed;
        std::string status = "ok";
        std::string message;
        std::optional<TrainResult> result;
        Classification cls;
    };
    std::vector<Job> jobs;
    for (auto init : inits)
        for (auto seed : seed_list) jobs.push_back({init, seed});

    parallel_for(jobs.size(), req.threads, [&](std::size_t i) {
        Job& job = jobs[i];
        TrainConfig cfg = base;
        cfg.initializer = job.init;
        cfg.seed = job.seed;
        try {
            job.result = train(model, cfg);
            job.cls = classify_learned_solution(job.result->net, family, half_width, grid);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::training_diverged) throw;
            job.status = "training_diverged";
            job.message = e.what();
        }
    });

    FileSet files;
    std::ostringstream csv;
    csv << "initializer,seed,status,epochs,mse,weighted_loss,label,nearest_index,nearest_isolated,nearest_stable,"
           "distance,relative_rms,p11,p12,p22,offset,divergence_fraction\n";
    json records = json::array();
    std::map<std::string, std::map<std::string, int>> counts;
    for (const auto& job : jobs) {
        const std::string init = to_string(job.init);
        const std::string tag = init + "_seed" + std::to_string(job.seed);
        json r{{"initializer", init}, {"seed", job.seed}, {"status", job.status}};
        if (!job.result) {
            csv << init << ',' << job.seed << ',' << job.status << ",,,,,,,,,,,,,,\n";
            r["message"] = job.message;
            ++counts[init]["training_diverged"];
            records.push_back(r);
            continue;
        }
        const auto& res = *job.result;
        const auto& last = res.history.back();
        const auto& cl = job.cls;
        const auto& ev = res.final_eval;
        ++counts[init][cl.label];
        if (cl.nearest_stable == false && ev.divergence_fraction > 0.0) ++counts[init]["non_stable_and_diverging"];
        csv << init << ',' << job.seed << ',' << job.status << ',' << last.epoch << ',' << io::fmt(last.mse) << ','
            << io::fmt(last.weighted_loss) << ',' << cl.label << ',' << cl.nearest_index << ','
            << (cl.nearest_isolated ? 1 : 0) << ',' << (cl.nearest_stable ? 1 : 0) << ',' << io::fmt(cl.distance) << ','
            << io::fmt(cl.relative_rms) << ',' << io::fmt(cl.P_hat(0, 0)) << ',' << io::fmt(cl.P_hat(0, 1)) << ','
            << io::fmt(cl.P_hat(1, 1)) << ',' << io::fmt(cl.offset) << ',' << io::fmt(ev.divergence_fraction) << '\n';
        r["epochs"] = last.epoch;
        r["mse"] = last.mse;
        r["weighted_loss"] = last.weighted_loss;
        r["label"] = cl.label;
        r["quadratic"] = cl.quadratic;
        r["relative_rms"] = cl.relative_rms;
        r["P_hat"] = io::to_json(cl.P_hat);
        r["offset"] = cl.offset;
        r["nearest"] = {{"index", cl.nearest_index}, {"isolated", cl.nearest_isolated}, {"stable", cl.nearest_stable},
                        {"distance", cl.distance}, {"P", io::to_json(cl.nearest_P)}};
        r["eval"] = {{"mean_cost", ev.mean_cost}, {"divergence_fraction", ev.divergence_fraction},
                     {"diverged", ev.diverged}, {"costs", ev.costs}};
        records.push_back(r);

        files["history_" + tag + ".csv"] = history_csv(res.history);
        files["rollouts_" + tag + ".csv"] = rollouts_csv(res.eval_starts, ev);
        std::ostringstream surf;
        surf << "x1,x2,learned,fitted,stable\n";
        for (int a = 0; a < grid; ++a)
            for (int b = 0; b < grid; ++b) {
                Vector x(2);
                x << -half_width + 2.0 * half_width * a / (grid - 1), -half_width + 2.0 * half_width * b / (grid - 1);
                surf << io::fmt(x(0)) << ',' << io::fmt(x(1)) << ',' << io::fmt(res.net.value(x)) << ','
                     << io::fmt(x.dot(cl.P_hat * x) + cl.offset) << ','
                     << (stable >= 0 ? io::fmt(x.dot(family.isolated[static_cast<std::size_t>(stable)].P * x)) : std::string())
                     << '\n';
            }
        files["surface_" + tag + ".csv"] = surf.str();
    }

    std::ostringstream s;
    s << "runs: " << jobs.size() << "\n";
    s << "family: " << family.count_discrete() << " isolated, " << family.samples.size() << " sampled, continuum "
      << (family.has_continuum ? "yes" : "no") << "\n\n";
    s << "initializer,stable,unstable_isolated,unstable_family,not_quadratic,training_diverged,non_stable_and_diverging\n";
    for (auto init : inits) {
        auto& k = counts[to_string(init)];
        s << to_string(init) << ',' << k["stable"] << ',' << k["unstable_isolated"] << ',' << k["unstable_family"] << ','
          << k["not_quadratic"] << ',' << k["training_diverged"] << ',' << k["non_stable_and_diverging"] << '\n';
    }
    json summary = json::object();
    for (const auto& [init, k] : counts) summary[init] = k;

    files["classification.csv"] = csv.str();
    files["classification.json"] = io::dump(json{{"train", io::to_json(base)}, {"runs", records}, {"counts", summary}});
    files["summary.txt"] = s.str();
    return files;
}

// ---------------------------------------------------------------------------
// train / eval

namespace detail {

inline std::string results_header() {
    return "seed,status,epochs,weighted_loss,mse,mean_cost,divergence_fraction,lqr_cost,lqr_divergence_fraction,"
           "exact_cost\n";
}

inline void results_row(std::ostringstream& os, std::uint64_t seed, const std::string& status,
                        const std::optional<EpochRecord>& last, const EvalResult* ev, const Reference& ref) {
    os << seed << ',' << status << ',';
    if (last) os << last->epoch << ',' << io::fmt(last->weighted_loss) << ',' << io::fmt(last->mse);
    else os << ",,";
    os << ',';
    if (ev) os << io::fmt(ev->mean_cost) << ',' << io::fmt(ev->divergence_fraction);
    else os << ',';
    os << ',';
    if (ref.available) os << io::fmt(ref.lqr.mean_cost) << ',' << io::fmt(ref.lqr.divergence_fraction);
    else os << ',';
    os << ',' << opt_fmt(ref.exact) << '\n';
}

inline json reference_json(const Reference& ref) {
    if (!ref.available) return nullptr;
    json j{{"lqr_cost", ref.lqr.mean_cost}, {"lqr_divergence_fraction", ref.lqr.divergence_fraction}};
    j["exact_cost"] = ref.exact ? json(*ref.exact) : json(nullptr);
    return j;
}

}  // namespace detail

inline FileSet run_train(const Request& req) {
    using namespace detail;
    expect_keys(req.config, {"model", "seeds", "seed", "train", "thrust_limit", "cost_about_hover"});
    const ModelSetup setup = model_setup(req);
    const TrainConfig base = train_config(req, train_defaults());
    const std::string hash = config_hash(setup, base);
    const auto seed_list = seeds(req);

    struct Job {
        std::uint64_t seed;
        std::string status = "ok";
        std::string message;
        std::optional<TrainResult> result;
        Reference ref;
    };
    std::vector<Job> jobs;
    for (auto s : seed_list) jobs.push_back({s});
    parallel_for(jobs.size(), req.threads, [&](std::size_t i) {
        Job& job = jobs[i];
        TrainConfig cfg = base;
        cfg.seed = job.seed;
        job.ref = reference(setup, draw_starts(setup.model, cfg.eval_rollouts, stream_seed(cfg.seed, 4)), cfg);
        try {
            job.result = train(setup.model, cfg);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::training_diverged) throw;
            job.status = "training_diverged";
            job.message = e.what();
        }
    });

    FileSet files;
    std::ostringstream csv;
    csv << results_header();
    json records = json::array();
    for (const auto& job : jobs) {
        json r{{"seed", job.seed}, {"status", job.status}, {"reference", reference_json(job.ref)}};
        if (!job.result) {
            r["message"] = job.message;
            results_row(csv, job.seed, job.status, std::nullopt, nullptr, job.ref);
            records.push_back(r);
            continue;
        }
        const auto& res = *job.result;
        const std::string tag = "seed" + std::to_string(job.seed);
        results_row(csv, job.seed, job.status, res.history.back(), &res.final_eval, job.ref);
        r["epochs"] = res.history.back().epoch;
        r["weighted_loss"] = res.history.back().weighted_loss;
        r["mse"] = res.history.back().mse;
        r["mean_cost"] = res.final_eval.mean_cost;
        r["divergence_fraction"] = res.final_eval.divergence_fraction;
        r["costs"] = res.final_eval.costs;
        r["diverged"] = res.final_eval.diverged;
        records.push_back(r);
        files["checkpoint_" + tag + ".json"] = io::dump(checkpoint_json(res.net, job.seed, hash));
        files["history_" + tag + ".csv"] = history_csv(res.history);
        files["rollouts_" + tag + ".csv"] = rollouts_csv(res.eval_starts, res.final_eval);
    }
    files["results.csv"] = csv.str();
    files["results.json"] =
        io::dump(json{{"model", setup.spec}, {"config_hash", hash}, {"train", io::to_json(base)}, {"runs", records}});
    return files;
}

inline FileSet run_eval(const Request& req) {
    using namespace detail;
    const auto& c = req.config;
    expect_keys(c, {"model", "seeds", "seed", "train", "thrust_limit", "cost_about_hover", "checkpoints", "eval"});
    const ModelSetup setup = model_setup(req);
    const TrainConfig base = train_config(req, train_defaults());
    const std::string hash = config_hash(setup, base);
    const json ev_cfg = c.contains("eval") ? c["eval"] : json::object();
    expect_keys(ev_cfg, {"rollouts", "steps"});
    TrainConfig cfg = base;
    cfg.eval_rollouts = get_or<int>(ev_cfg, "rollouts", base.eval_rollouts);
    cfg.eval_steps = get_or<int>(ev_cfg, "steps", base.eval_steps);
    if (cfg.eval_rollouts <= 0 || cfg.eval_steps <= 0) invalid("eval rollouts and steps must be positive");

    fs::path dir;
    if (req.checkpoints) dir = *req.checkpoints;
    else if (c.contains("checkpoints")) dir = resolve(req, get_or<std::string>(c, "checkpoints", ""));
    else invalid("eval needs a checkpoint directory (--checkpoints or config 'checkpoints')");

    const auto seed_list = seeds(req);
    std::vector<Checkpoint> cps;
    for (auto seed : seed_list) {
        const fs::path file = dir / ("checkpoint_seed" + std::to_string(seed) + ".json");
        Checkpoint cp = checkpoint_from_json(io::read_json_file(file.string()));
        if (cp.config_hash != hash)
            throw Error(ErrorKind::checkpoint_mismatch, file.string() + " was trained with config " + cp.config_hash +
                                                            ", this config hashes to " + hash);
        if (cp.seed != seed) throw Error(ErrorKind::checkpoint_mismatch, file.string() + " holds another seed");
        if (cp.net.input_dim() != setup.model.n)
            throw Error(ErrorKind::checkpoint_mismatch, file.string() + " does not match the model dimension");
        cps.push_back(std::move(cp));
    }

    struct Job {
        std::vector<Vector> starts;
        EvalResult ev;
        Reference ref;
    };
    std::vector<Job> jobs(seed_list.size());
    parallel_for(jobs.size(), req.threads, [&](std::size_t i) {
        Job& job = jobs[i];
        job.starts = draw_starts(setup.model, cfg.eval_rollouts, stream_seed(seed_list[i], 4));
        job.ev = evaluate(cps[i].net, setup.model, job.starts, cfg.eval_steps, {cfg.dt, cfg.policy_at_stages});
        job.ref = reference(setup, job.starts, cfg);
    });

    FileSet files;
    std::ostringstream csv;
    csv << "seed,mean_cost,divergence_fraction,lqr_cost,lqr_divergence_fraction,exact_cost\n";
    json records = json::array();
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const auto& job = jobs[i];
        csv << seed_list[i] << ',' << io::fmt(job.ev.mean_cost) << ',' << io::fmt(job.ev.divergence_fraction) << ',';
        if (job.ref.available) csv << io::fmt(job.ref.lqr.mean_cost) << ',' << io::fmt(job.ref.lqr.divergence_fraction);
        else csv << ',';
        csv << ',' << opt_fmt(job.ref.exact) << '\n';
        records.push_back({{"seed", seed_list[i]},
                           {"mean_cost", job.ev.mean_cost},
                           {"divergence_fraction", job.ev.divergence_fraction},
                           {"costs", job.ev.costs},
                           {"diverged", job.ev.diverged},
                           {"reference", reference_json(job.ref)}});
        files["rollouts_seed" + std::to_string(seed_list[i]) + ".csv"] = rollouts_csv(job.starts, job.ev);
    }
    files["results.csv"] = csv.str();
    files["results.json"] = io::dump(json{{"model", setup.spec},
                                          {"config_hash", hash},
                                          {"rollouts", cfg.eval_rollouts},
                                          {"steps", cfg.eval_steps},
                                          {"runs", records}});
    return files;
}

// ---------------------------------------------------------------------------
// tabular

inline FileSet run_tabular(const Request& req) {
    using namespace detail;
    const auto& c = req.config;
    expect_keys(c, {"seeds", "seed", "mdp", "mdps", "max_states", "max_actions", "gamma", "inits", "init_scale", "tol"});
    const int count = get_or<int>(c, "mdps", 50);
    const int max_states = get_or<int>(c, "max_states", 64);
    const int max_actions = get_or<int>(c, "max_actions", 8);
    const double gamma = get_or<double>(c, "gamma", 0.9);
    const int inits = get_or<int>(c, "inits", 20);
    const double scale = get_or<double>(c, "init_scale", 10.0);
    const double tol = get_or<double>(c, "tol", 1e-10);
    if (count <= 0 || max_states <= 0 || max_actions <= 0 || inits <= 0 || !(scale >= 0.0))
        invalid("tabular sizes must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) invalid("gamma must lie in (0, 1)");
    std::optional<TabularMDP> fixed;
    if (c.contains("mdp")) {
        const json& m = c["mdp"];
        fixed = io::mdp_from_json(m.is_string() ? io::read_json_file(resolve(req, m.get<std::string>()).string()) : m);
    }

    struct Case {
        std::uint64_t seed;
        int index;
        TabularMDP mdp;
        std::vector<ValueIterationResult> runs;
        double spread = 0.0;
    };
    std::vector<Case> cases;
    const auto seed_list = seeds(req);
    for (auto seed : seed_list) {
        std::mt19937_64 rng(stream_seed(seed, 5));
        std::uniform_int_distribution<int> states(1, max_states), actions(1, max_actions);
        if (fixed) {
            cases.push_back({seed, 0, *fixed});
            continue;
        }
        for (int k = 0; k < count; ++k) {
            const int s = states(rng), a = actions(rng);
            cases.push_back({seed, k, random_mdp(s, a, gamma, rng)});
        }
    }
    parallel_for(cases.size(), req.threads, [&](std::size_t i) {
        Case& cs = cases[i];
        std::mt19937_64 rng(stream_seed(cs.seed, 6 + static_cast<std::uint64_t>(cs.index)));
        std::normal_distribution<double> init(0.0, scale);
        for (int r = 0; r < inits; ++r) {
            Vector w0(cs.mdp.num_states);
            for (Eigen::Index s = 0; s < w0.size(); ++s) w0(s) = r == 0 ? 0.0 : init(rng);
            cs.runs.push_back(value_iteration(cs.mdp, w0, tol));
            cs.runs.back().iterates.clear();
            cs.spread = std::max(cs.spread, (cs.runs.back().V - cs.runs.front().V).lpNorm<Eigen::Infinity>());
        }
    });

    std::ostringstream ratios, points;
    ratios << "seed,mdp,init,sweep,ratio\n";
    points << "seed,mdp,states,actions,gamma,max_iterations,max_ratio,fixed_point_spread\n";
    double worst = 0.0, widest = 0.0;
    std::size_t sweeps = 0;
    for (const auto& cs : cases) {
        double case_worst = 0.0;
        int iters = 0;
        for (std::size_t r = 0; r < cs.runs.size(); ++r) {
            const auto& run = cs.runs[r];
            iters = std::max(iters, run.iterations);
            for (std::size_t k = 0; k < run.contraction_ratios.size(); ++k) {
                ratios << cs.seed << ',' << cs.index << ',' << r << ',' << k << ',' << io::fmt(run.contraction_ratios[k]) << '\n';
                case_worst = std::max(case_worst, run.contraction_ratios[k]);
                ++sweeps;
            }
        }
        worst = std::max(worst, case_worst);
        widest = std::max(widest, cs.spread);
        points << cs.seed << ',' << cs.index << ',' << cs.mdp.num_states << ',' << cs.mdp.num_actions << ','
               << io::fmt(cs.mdp.gamma) << ',' << iters << ',' << io::fmt(case_worst) << ',' << io::fmt(cs.spread) << '\n';
    }
    const double g = fixed ? fixed->gamma : gamma;
    std::ostringstream s;
    s << "mdps: " << cases.size() << "\n";
    s << "initializations per mdp: " << inits << "\n";
    s << "gamma: " << io::fmt(g) << "\n";
    s << "recorded sweeps: " << sweeps << "\n";
    s << "max contraction ratio: " << io::fmt(worst) << "\n";
    s << "ratio bound holds: " << (worst <= g + 1e-12 ? "yes" : "no") << "\n";
    s << "max fixed point spread: " << io::fmt(widest) << "\n";
    return {{"ratios.csv", ratios.str()}, {"fixed_points.csv", points.str()}, {"summary.txt", s.str()}};
}

// ---------------------------------------------------------------------------
// dispatch and output

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"enumerate", "failure-mode", "train", "eval", "tabular"};
    return names;
}

inline FileSet run_command(const std::string& name, const Request& req) {
    if (name == "enumerate") return run_enumerate(req);
    if (name == "failure-mode") return run_failure_mode(req);
    if (name == "train") return run_train(req);
    if (name == "eval") return run_eval(req);
    if (name == "tabular") return run_tabular(req);
    throw Error(ErrorKind::invalid_config, "unknown command '" + name + "'");
}

inline std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Writes the files into a sibling temporary directory and renames it into
/// place. An existing output directory is replaced only if it is empty or a
/// previous atlas output (it has a meta.json).
inline void commit(const fs::path& out, const FileSet& files) {
    const fs::path target = fs::absolute(out).lexically_normal();
    const fs::path parent = target.parent_path();
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (fs::exists(target)) {
        if (!fs::is_directory(target)) throw Error(ErrorKind::io, target.string() + " exists and is not a directory");
        if (!fs::is_empty(target) && !fs::exists(target / "meta.json"))
            throw Error(ErrorKind::io, target.string() + " is not empty and was not written by atlas");
    }
    fs::path tmp;
    for (int k = 0;; ++k) {
        tmp = parent / ("." + target.filename().string() + ".tmp" + std::to_string(k));
        if (fs::create_directory(tmp, ec)) break;
        if (k > 1000) throw Error(ErrorKind::io, "cannot create a temporary directory next to " + target.string());
    }
    try {
        for (const auto& [name, text] : files) io::write_text_file((tmp / name).string(), text);
        if (fs::exists(target)) fs::remove_all(target);
        fs::rename(tmp, target);
    } catch (...) {
        fs::remove_all(tmp, ec);
        throw;
    }
}

inline json meta_json(const std::string& command, const std::string& started, int threads) {
    return json{{"command", command}, {"started_utc", started}, {"finished_utc", utc_now()}, {"threads", threads}};
}

}  // namespace atlas::cli
