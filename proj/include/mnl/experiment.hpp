#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "mnl/config.hpp"
#include "mnl/dynamics/kolmogorov.hpp"
#include "mnl/dynamics/linear_gaussian.hpp"
#include "mnl/dynamics/trajectory.hpp"
#include "mnl/dynamics/trajectory_io.hpp"
#include "mnl/error.hpp"
#include "mnl/grid_field.hpp"
#include "mnl/metrics/spectrum.hpp"
#include "mnl/metrics/temporal.hpp"
#include "mnl/nn/checkpoint.hpp"
#include "mnl/nn/dataset.hpp"
#include "mnl/nn/surrogate.hpp"
#include "mnl/nn/train.hpp"
#include "mnl/plot.hpp"
#include "mnl/rollout/engine.hpp"
#include "mnl/rollout/reverse.hpp"

// Pipeline stages shared by the command-line tool and the acceptance binaries:
// data generation, training, rollouts and evaluation reports.

namespace mnl::experiment {

namespace fs = std::filesystem;

/// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first exception.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(jobs, static_cast<int>(n))));
    if (workers <= 1) {
        for (std::size_t k = 0; k < n; ++k) fn(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t k = next++; k < n; k = next++) {
                try {
                    fn(k);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline std::string config_hash(const ExperimentConfig& cfg) { return hex64(fnv1a(nlohmann::json(cfg).dump())); }

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigurationError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigurationError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw ConfigurationError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------------------------
// Data

/// One trajectory of the configured system. Kolmogorov runs start from band-limited random
/// vorticity; OU runs start at the origin. Both burn in before the first recorded frame.
inline Trajectory simulate(const DynamicsSection& d, std::uint64_t seed) {
    if (d.system == "ou") {
        dynamics::LinearGaussianProcess proc(d.ou);
        GridField x0(static_cast<std::size_t>(d.ou.dim()), 1, 1);
        return dynamics::generate_trajectory(proc, x0, d.frames, d.burn_in, d.subsample, seed);
    }
    const auto& k = d.kolmogorov;
    dynamics::KolmogorovSolver solver(k);
    auto w = solver.to_spectral(dynamics::random_vorticity(k.resolution, seed, d.initial_max_wavenumber));
    Trajectory traj;
    traj.dt_physical = k.solver_dt * static_cast<double>(d.subsample);
    traj.subsample = d.subsample;
    traj.seed = seed;
    traj.system_tag = "kolmogorov";
    traj.system_config = k;
    traj.frames.reserve(static_cast<std::size_t>(d.frames));
    std::int64_t step = 0;
    auto record = [&] {
        auto f = solver.to_physical(w);
        f.grid_spacing = solver.grid_spacing();
        if (!f.all_finite()) {
            throw DivergenceError("Kolmogorov solver produced a non-finite frame",
                                  static_cast<std::int64_t>(traj.frames.size()));
        }
        traj.frames.push_back(std::move(f));
    };
    for (; step < d.burn_in; ++step) solver.step_spectral(w, step);
    record();
    for (std::int64_t frame = 1; frame < d.frames; ++frame) {
        for (std::int64_t s = 0; s < d.subsample; ++s, ++step) solver.step_spectral(w, step);
        record();
    }
    return traj;
}

/// Per-component mean and variance of pooled OU frames against the stationary law, with
/// batch-means standard errors (20 batches per trajectory).
inline nlohmann::json ou_stationarity(std::span<const Trajectory> trajs, const dynamics::LinearGaussianSystem& sys) {
    const Eigen::MatrixXd sigma = dynamics::stationary_covariance(sys);
    const auto d = static_cast<std::size_t>(sys.dim());
    constexpr std::size_t kBatches = 20;
    nlohmann::json comps = nlohmann::json::array();
    bool pass = true, enough = true;
    for (std::size_t c = 0; c < d; ++c) {
        std::vector<double> bm, bv;
        for (const auto& t : trajs) {
            const std::size_t len = t.size() / kBatches;
            if (len < 2) {
                enough = false;
                continue;
            }
            for (std::size_t b = 0; b < kBatches; ++b) {
                double m = 0.0, v = 0.0;
                for (std::size_t i = b * len; i < (b + 1) * len; ++i) {
                    const double x = t.frames[i].values[c];
                    m += x;
                    v += x * x;
                }
                bm.push_back(m / static_cast<double>(len));
                bv.push_back(v / static_cast<double>(len));
            }
        }
        if (bm.size() < 10) {
            enough = false;
            comps.push_back({{"component", c}, {"status", "insufficient frames"}});
            continue;
        }
        auto mean_se = [](const std::vector<double>& v) {
            double m = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double s = 0.0;
            for (double x : v) s += (x - m) * (x - m);
            return std::pair{m, std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
        };
        const auto [mean, mean_se_v] = mean_se(bm);
        const auto [second, second_se] = mean_se(bv);  // E[x²]; the mean is zero in the stationary law
        const double target = sigma(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
        const bool ok = std::abs(mean) <= 3.0 * mean_se_v && std::abs(second - target) <= 3.0 * second_se;
        pass = pass && ok;
        comps.push_back({{"component", c},
                         {"mean", mean},
                         {"mean_se", mean_se_v},
                         {"second_moment", second},
                         {"second_moment_se", second_se},
                         {"stationary_variance", target},
                         {"pass", ok}});
    }
    return {{"components", comps}, {"pass", pass && enough}, {"sufficient", enough}, {"tolerance_se", 3.0}};
}

inline std::string trajectory_stem(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "traj_%03zu", k);
    return buf;
}

/// Writes trajectories and manifest.json to `dir`; returns the manifest. Trajectory k uses
/// seed step_seed(cfg.seed, k), so a rerun with the same config reproduces every byte.
inline nlohmann::json generate_dataset(const ExperimentConfig& cfg, const fs::path& dir, int jobs = 1) {
    cfg.validate();
    try {
        fs::create_directories(dir);
    } catch (const fs::filesystem_error& e) {
        throw ConfigurationError("gen-data: cannot create " + dir.string() + ": " + e.what());
    }
    const auto n = static_cast<std::size_t>(cfg.dynamics.trajectories);
    std::vector<Trajectory> trajs(n);
    parallel_for(n, jobs, [&](std::size_t k) {
        trajs[k] = simulate(cfg.dynamics, nn::step_seed(cfg.seed, static_cast<std::int64_t>(k)));
    });
    const auto norm = fit_normalization(trajs);
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t k = 0; k < n; ++k) {
        trajs[k].normalization = norm;
        dynamics::write_trajectory(trajs[k], dir / trajectory_stem(k));
        files.push_back(trajectory_stem(k));
    }
    const auto& f0 = trajs.front().frames.front();
    nlohmann::json m = {{"format", "mnl-dataset"},
                        {"version", 1},
                        {"system", cfg.dynamics.system},
                        {"trajectories", n},
                        {"frames_per_trajectory", cfg.dynamics.frames},
                        {"total_frames", n * static_cast<std::size_t>(cfg.dynamics.frames)},
                        {"frame_shape", {f0.channels, f0.height, f0.width}},
                        {"dt_physical", trajs.front().dt_physical},
                        {"normalization", norm},
                        {"config_hash", config_hash(cfg)},
                        {"config", cfg},
                        {"schedule", cfg.schedule},
                        {"seed", cfg.seed},
                        {"files", files}};
    if (cfg.dynamics.system == "ou") m["stationarity"] = ou_stationarity(trajs, cfg.dynamics.ou);
    write_json(dir / "manifest.json", m);
    return m;
}

struct Dataset {
    fs::path dir;
    nlohmann::json manifest;
    Normalization normalization;
    std::vector<Trajectory> trajectories;
};

inline Dataset load_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json")) {
        throw ConfigurationError("dataset: no manifest.json in " + dir.string() + " (run gen-data first)");
    }
    Dataset ds;
    ds.dir = dir;
    ds.manifest = read_json(dir / "manifest.json");
    if (ds.manifest.value("format", "") != "mnl-dataset") throw ConfigurationError("dataset: unknown manifest format");
    ds.normalization = ds.manifest.at("normalization").get<Normalization>();
    for (const auto& stem : ds.manifest.at("files")) {
        ds.trajectories.push_back(dynamics::read_trajectory(dir / stem.get<std::string>()));
    }
    if (ds.trajectories.empty()) throw ConfigurationError("dataset: manifest lists no trajectories");
    return ds;
}

inline void check_schedule(const Dataset& ds, const ExperimentConfig& cfg) {
    if (!ds.manifest.contains("schedule")) return;
    const auto recorded = ds.manifest.at("schedule").get<ScheduleSection>();
    if (recorded.type != cfg.schedule.type || recorded.S != cfg.schedule.S) {
        throw ConfigurationError("schedule mismatch: dataset was generated for " + recorded.type + "/S=" +
                                 std::to_string(recorded.S) + ", config has " + cfg.schedule.type +
                                 "/S=" + std::to_string(cfg.schedule.S));
    }
}

inline bool same_normalization(const Normalization& a, const Normalization& b, double tol = 1e-9) {
    if (a.mean.size() != b.mean.size() || a.std.size() != b.std.size()) return false;
    for (std::size_t c = 0; c < a.mean.size(); ++c) {
        if (std::abs(a.mean[c] - b.mean[c]) > tol * std::max(1.0, std::abs(b.mean[c]))) return false;
        if (std::abs(a.std[c] - b.std[c]) > tol * std::max(1.0, std::abs(b.std[c]))) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------------------------
// Training

struct TrainRequest {
    bool resume = false;
    std::int64_t heldout_batches = 8;
    std::function<void(const nn::TrainLogRow&)> on_log;
};

namespace detail {

/// Config keys that may change between a run and its resumption.
inline nlohmann::json architecture_of(nlohmann::json cfg) {
    for (const char* k : {"steps", "log_every", "eval_every", "lambda_current"}) cfg.erase(k);
    return cfg;
}

inline nlohmann::json provenance(const Dataset& ds) {
    return {{"dataset", ds.dir.string()}, {"dataset_config_hash", ds.manifest.value("config_hash", "")}};
}

}  // namespace detail

/// Trains (or resumes) the SNS denoiser; checkpoints to `dir` after every eval interval.
/// Returns held-out metrics of the final model.
inline nlohmann::json train_denoiser(const ExperimentConfig& cfg, const Dataset& ds, const fs::path& dir,
                                     const TrainRequest& req = {}) {
    cfg.validate();
    check_schedule(ds, cfg);
    const auto sched = cfg.schedule.build();
    const auto all = nn::SequenceDataset::from_trajectories(ds.trajectories, ds.normalization);
    const auto [train, heldout] = all.split(cfg.dynamics.heldout_fraction);

    nn::SnsTrainState st;
    if (req.resume && fs::exists(dir / "manifest.json")) {
        auto loaded = nn::load_sns_checkpoint(dir);
        if (detail::architecture_of(loaded.manifest.config) != detail::architecture_of(nlohmann::json(cfg.denoiser))) {
            throw ConfigurationError("resume: checkpoint denoiser config differs from the current config");
        }
        if (!same_normalization(loaded.manifest.normalization, ds.normalization)) {
            throw ConfigurationError("resume: checkpoint normalization differs from the dataset");
        }
        st = std::move(loaded.state);
        st.config.steps = cfg.denoiser.steps;
        st.config.log_every = cfg.denoiser.log_every;
        st.config.eval_every = cfg.denoiser.eval_every;
    } else {
        st = nn::init_sns_training(cfg.denoiser, train.shape);
    }
    nn::TrainOptions opts;
    opts.heldout = &heldout;
    opts.heldout_batches = req.heldout_batches;
    opts.on_log = req.on_log;
    auto metrics = [&] {
        const auto m = nn::evaluate_sns(*st.model, heldout, sched, req.heldout_batches, cfg.denoiser.batch_size,
                                        cfg.denoiser.seed ^ 0x5EEDULL);
        nlohmann::json j = {{"heldout_eps", m.eps}, {"heldout_ce", m.ce}};
        if (!st.model->level_conditioned()) {
            j["level_mae_s1"] = m.level_mae_s1;
            j["level_mae_s2"] = m.level_mae_s2;
        }
        return j;
    };
    while (st.step < st.config.steps) {
        opts.stop_at = std::min(st.config.steps, (st.step / st.config.eval_every + 1) * st.config.eval_every);
        nn::train_sns(st, train, sched, opts);
        if (st.step < st.config.steps) nn::save_sns_checkpoint(dir, st, sched, ds.normalization, {}, detail::provenance(ds));
    }
    const auto final_metrics = metrics();
    nn::save_sns_checkpoint(dir, st, sched, ds.normalization, final_metrics, detail::provenance(ds));
    return final_metrics;
}

inline nlohmann::json train_surrogate(const ExperimentConfig& cfg, const Dataset& ds, const fs::path& dir,
                                      const TrainRequest& req = {}) {
    cfg.validate();
    const auto all = nn::SequenceDataset::from_trajectories(ds.trajectories, ds.normalization);
    const auto [train, heldout] = all.split(cfg.dynamics.heldout_fraction);

    nn::SurrogateTrainState st;
    if (req.resume && fs::exists(dir / "manifest.json")) {
        auto loaded = nn::load_surrogate_checkpoint(dir);
        if (detail::architecture_of(loaded.manifest.config) !=
            detail::architecture_of(nlohmann::json(cfg.surrogate))) {
            throw ConfigurationError("resume: checkpoint surrogate config differs from the current config");
        }
        if (!same_normalization(loaded.manifest.normalization, ds.normalization)) {
            throw ConfigurationError("resume: checkpoint normalization differs from the dataset");
        }
        st = std::move(loaded.state);
        st.config.steps = cfg.surrogate.steps;
        st.config.log_every = cfg.surrogate.log_every;
        st.config.eval_every = cfg.surrogate.eval_every;
    } else {
        st = nn::init_surrogate_training(cfg.surrogate, train.shape);
    }
    nn::TrainOptions opts;
    opts.heldout = &heldout;
    opts.heldout_batches = req.heldout_batches;
    opts.on_log = req.on_log;
    while (st.step < st.config.steps) {
        opts.stop_at = std::min(st.config.steps, (st.step / st.config.eval_every + 1) * st.config.eval_every);
        nn::train_gaussian_surrogate(st, train, opts);
        if (st.step < st.config.steps) nn::save_surrogate_checkpoint(dir, st, ds.normalization, {}, detail::provenance(ds));
    }
    const double loss = nn::evaluate_surrogate(*st.model, heldout, st.config.rollout_horizon, req.heldout_batches,
                                               st.config.batch_size, st.config.seed ^ 0x5EEDULL);
    const nlohmann::json m = {{"heldout_multistep_loss", loss}};
    nn::save_surrogate_checkpoint(dir, st, ds.normalization, m, detail::provenance(ds));
    return m;
}

// ---------------------------------------------------------------------------------------------
// Rollouts

struct RolloutRequest {
    std::string strategy = "sns_refine";  // a rollout strategy name, or "bare" for the surrogate alone
    int seeds = 1;
    int jobs = 1;
    std::optional<int> horizon;
    std::optional<int> threshold;
    std::string nan_policy = "propagate";  // applies to "bare"
    std::string tag;                        // output name prefix; defaults to the strategy
};

struct RolloutOutput {
    Trajectory trajectory;
    nlohmann::json sidecar;
    fs::path stem;
};

struct Models {
    std::optional<nn::LoadedSurrogate> surrogate;
    std::optional<nn::LoadedSns> sns;
    Normalization normalization;
    std::optional<NoiseSchedule> schedule;
};

/// Loads the checkpoints a strategy needs; mismatched normalizations are a configuration error.
inline Models load_models(const std::string& strategy, const fs::path& surrogate_dir, const fs::path& sns_dir) {
    Models m;
    const bool need_surrogate = strategy != "sns_generate";
    const bool need_sns = strategy != "bare";
    if (need_surrogate) {
        if (!fs::exists(surrogate_dir / "manifest.json")) {
            throw ConfigurationError("rollout: no surrogate checkpoint in " + surrogate_dir.string());
        }
        m.surrogate = nn::load_surrogate_checkpoint(surrogate_dir);
        m.normalization = m.surrogate->manifest.normalization;
    }
    if (need_sns) {
        if (!fs::exists(sns_dir / "manifest.json")) {
            throw ConfigurationError("rollout: no SNS checkpoint in " + sns_dir.string());
        }
        m.sns = nn::load_sns_checkpoint(sns_dir);
        m.schedule = m.sns->schedule;
        if (m.surrogate && !same_normalization(m.surrogate->manifest.normalization, m.sns->manifest.normalization)) {
            throw ConfigurationError("rollout: surrogate and SNS checkpoints use different normalizations");
        }
        if (m.surrogate && !(m.surrogate->manifest.frame_shape == m.sns->manifest.frame_shape)) {
            throw ConfigurationError("rollout: surrogate and SNS checkpoints use different frame shapes");
        }
        m.normalization = m.sns->manifest.normalization;
    }
    return m;
}

/// Initial condition for seed k: frame 0 of test trajectory k mod n, advancing 10% of the
/// trajectory for every wrap-around.
inline const GridField& initial_condition(const Dataset& test, int k) {
    const auto n = test.trajectories.size();
    const auto& t = test.trajectories[static_cast<std::size_t>(k) % n];
    const auto stride = std::max<std::size_t>(1, t.size() / 10);
    return t.frames[(static_cast<std::size_t>(k) / n * stride) % t.size()];
}

inline std::string rollout_stem(const std::string& tag, int k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "_seed%03d", k);
    return tag + buf;
}

/// Runs `req.seeds` rollouts (seed cfg.rollout.seed + k) from the test dataset and writes
/// trajectory + sidecar files to `out_dir` when it is non-empty.
inline std::vector<RolloutOutput> run_rollouts(const ExperimentConfig& cfg, Models& models, const Dataset& test,
                                               const fs::path& out_dir, const RolloutRequest& req) {
    if (req.seeds < 1) throw ConfigurationError("rollout: --seeds must be >= 1");
    const bool bare = req.strategy == "bare";
    auto rcfg = cfg.rollout;
    if (!bare) rcfg.strategy = req.strategy;
    if (req.horizon) rcfg.horizon = *req.horizon;
    if (req.threshold) rcfg.activation_threshold = *req.threshold;
    if (bare) rcfg.nan_policy = req.nan_policy;
    const int S = models.schedule ? models.schedule->S : cfg.schedule.S;
    rcfg.validate(S);
    const auto tag = req.tag.empty() ? req.strategy : req.tag;
    const double dt = test.trajectories.front().dt_physical;
    const auto shape = nn::FrameShape::of(test.trajectories.front().frames.front());
    if (models.surrogate && !(models.surrogate->manifest.frame_shape == shape)) {
        throw ConfigurationError("rollout: checkpoint frame shape differs from the test dataset");
    }

    std::unique_ptr<rollout::NetworkEpsilon> eps;
    rollout::LevelEstimator estimate;
    if (models.sns) {
        eps = std::make_unique<rollout::NetworkEpsilon>(models.sns->state.model);
        if (!models.sns->state.model->level_conditioned()) {
            estimate = rollout::network_level_estimator(models.sns->state.model);
        } else if (!bare) {
            throw ConfigurationError("rollout: the SNS model has no noise-level head");
        }
    }
    const double sigma = models.surrogate && models.surrogate->state.config.inference_noise
                             ? models.surrogate->state.config.sigma
                             : 0.0;

    std::vector<RolloutOutput> out(static_cast<std::size_t>(req.seeds));
    parallel_for(out.size(), req.jobs, [&](std::size_t k) {
        auto c = rcfg;
        c.seed = rcfg.seed + k;
        const auto x0 = nn::to_tensor(std::vector<GridField>{models.normalization.apply(
            initial_condition(test, static_cast<int>(k)))});
        rollout::RolloutResult r;
        if (bare) {
            r = rollout::bare_rollout(*models.surrogate->state.model, x0, c, sigma);
        } else if (c.strategy == "sns_generate") {
            r = rollout::sns_generate_rollout(*eps, estimate, x0, c, *models.schedule);
        } else {
            rollout::RefineInputs in{models.surrogate->state.model.get(), eps.get(), estimate, sigma};
            r = rollout::sns_refine_rollout(in, x0, c, *models.schedule);
        }
        auto& o = out[k];
        o.trajectory = rollout::to_trajectory(r, models.normalization, dt, tag);
        o.sidecar = r.sidecar();
        if (bare) o.sidecar["strategy"] = "bare";
        o.sidecar["initial_condition"] = {{"trajectory", k % test.trajectories.size()}};
        o.sidecar["config_hash"] = config_hash(cfg);
        if (!out_dir.empty()) {
            o.stem = out_dir / rollout_stem(tag, static_cast<int>(k));
            dynamics::write_trajectory(o.trajectory, o.stem);
            write_json(fs::path(o.stem.string() + ".sidecar.json"), o.sidecar);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------------------------
// Evaluation

inline double finite_mean(std::span<const double> v, std::size_t begin = 0, std::size_t end = SIZE_MAX) {
    end = std::min(end, v.size());
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t k = begin; k < end; ++k) {
        if (!std::isfinite(v[k])) continue;
        acc += v[k];
        ++n;
    }
    return n ? acc / static_cast<double>(n) : std::nan("");
}

inline nlohmann::json nan_to_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

inline nlohmann::json series_json(std::span<const double> v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(nan_to_null(x));
    return a;
}

struct EvalOptions {
    std::vector<int> lags = {0, 1, 2, 5, 10, 20, 50, 100};
    double window_fraction = 0.1;  // early/late windows of the spectrum-distance curve
    double growth_factor = 1.5;    // "grows": late-window mean above this multiple of the early window
};

/// Mean of per-trajectory time-mean spectra.
inline metrics::SpectrumResult ensemble_spectrum(std::span<const Trajectory> trajs) {
    std::vector<metrics::SpectrumResult> s;
    for (const auto& t : trajs) {
        Trajectory finite = t;
        finite.frames.clear();
        for (const auto& f : t.frames) {
            if (f.all_finite()) finite.frames.push_back(f);
        }
        if (!finite.frames.empty()) s.push_back(metrics::reference_spectrum(finite));
    }
    if (s.empty()) throw NumericalError("ensemble_spectrum: no finite frames");
    return metrics::mean_spectrum(s);
}

inline double spectrum_l2(const metrics::SpectrumResult& a, const metrics::SpectrumResult& b) {
    if (a.wavenumbers != b.wavenumbers) throw ArgumentError("spectrum_l2: binning mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < a.energy.size(); ++k) acc += (a.energy[k] - b.energy[k]) * (a.energy[k] - b.energy[k]);
    return std::sqrt(acc);
}

/// Metrics of each rollout against the reference ensemble. Spectral entries are present for
/// square grids larger than one cell.
inline nlohmann::json evaluate(std::span<const Trajectory> rollouts, std::span<const Trajectory> reference,
                               const EvalOptions& opt = {}) {
    if (reference.empty()) throw ConfigurationError("eval: no reference trajectories");
    if (rollouts.empty()) throw ConfigurationError("eval: no trajectories to evaluate");
    const auto& f0 = reference.front().frames.front();
    const bool spectral = f0.height == f0.width && f0.height > 1;
    nlohmann::json report;
    std::optional<metrics::SpectrumResult> ref_spec;
    double baseline = std::nan("");
    if (spectral) {
        ref_spec = ensemble_spectrum(reference);
        double acc = 0.0;
        for (const auto& t : reference) {
            const auto d = metrics::spectrum_distance(t, *ref_spec);
            acc += finite_mean(d);
        }
        baseline = acc / static_cast<double>(reference.size());
        report["reference"] = {{"trajectories", reference.size()},
                               {"self_distance", baseline},
                               {"wavenumbers", ref_spec->wavenumbers},
                               {"spectrum", ref_spec->energy}};
    } else {
        report["reference"] = {{"trajectories", reference.size()}};
    }

    nlohmann::json items = nlohmann::json::array();
    for (const auto& t : rollouts) {
        nlohmann::json j;
        j["frames"] = t.size();
        j["system_tag"] = t.system_tag;
        j["seed"] = t.seed;
        std::size_t finite_prefix = t.size();
        for (std::size_t k = 0; k < t.size(); ++k) {
            if (!t.frames[k].all_finite()) {
                finite_prefix = k;
                break;
            }
        }
        j["first_non_finite_frame"] = finite_prefix == t.size() ? -1 : static_cast<long>(finite_prefix);
        j["diverged"] = finite_prefix != t.size();
        Trajectory head = t;
        head.frames.resize(finite_prefix);
        if (spectral) {
            const auto d = metrics::spectrum_distance(t, *ref_spec);
            const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(opt.window_fraction * d.size()));
            const double early = finite_mean(d, 0, w);
            const double late = finite_mean(d, d.size() - std::min(w, d.size()), d.size());
            j["spectrum_distance"] = series_json(d);
            j["time_mean_distance"] = j["diverged"].get<bool>() ? nlohmann::json() : nan_to_null(finite_mean(d));
            j["early_window_distance"] = nan_to_null(early);
            j["late_window_distance"] = nan_to_null(late);
            j["grows"] = j["diverged"].get<bool>() || late > opt.growth_factor * early;
            if (!head.frames.empty()) {
                const auto s = ensemble_spectrum(std::span<const Trajectory>(&head, 1));
                j["time_mean_spectrum"] = s.energy;
                j["spectrum_l2_to_reference"] = spectrum_l2(s, *ref_spec);
            }
        }
        nlohmann::json corr = nlohmann::json::object();
        for (int lag : opt.lags) {
            if (static_cast<std::size_t>(lag) < head.size()) {
                try {
                    corr[std::to_string(lag)] = metrics::spatiotemporal_correlation(head, static_cast<std::size_t>(lag));
                } catch (const NumericalError&) {
                    corr[std::to_string(lag)] = nullptr;
                }
            }
        }
        j["correlation"] = corr;
        if (t.size() >= 2) j["rate_of_change"] = series_json(metrics::rate_of_change(t));
        items.push_back(std::move(j));
    }
    report["trajectories"] = items;

    nlohmann::json summary = {{"count", rollouts.size()}};
    std::size_t diverged = 0, grows = 0;
    double tm = 0.0;
    std::size_t tm_n = 0;
    for (const auto& j : items) {
        diverged += j["diverged"].get<bool>();
        if (spectral) {
            grows += j["grows"].get<bool>();
            if (!j["time_mean_distance"].is_null()) {
                tm += j["time_mean_distance"].get<double>();
                ++tm_n;
            }
        }
    }
    summary["diverged"] = diverged;
    if (spectral) {
        summary["grows"] = grows;
        summary["mean_time_mean_distance"] = tm_n ? nlohmann::json(tm / static_cast<double>(tm_n)) : nlohmann::json();
        summary["self_distance"] = baseline;
    }
    report["summary"] = summary;
    return report;
}

// ---------------------------------------------------------------------------------------------
// Figures

namespace detail {

inline std::vector<double> doubles(const nlohmann::json& a) {
    std::vector<double> out;
    for (const auto& v : a) out.push_back(v.is_number() ? v.get<double>() : std::nan(""));
    return out;
}

inline std::vector<double> iota(std::size_t n, double start = 0.0) {
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = start + static_cast<double>(k);
    return out;
}

inline std::string label_of(const nlohmann::json& item, std::size_t k) {
    return item.value("source", "trajectory " + std::to_string(k));
}

}  // namespace detail

/// Renders an eval report (and optional rollout sidecars) as SVG files in `dir`; returns the paths.
inline std::vector<fs::path> render_plots(const nlohmann::json& report, const std::vector<nlohmann::json>& sidecars,
                                          const std::vector<std::string>& sidecar_names, const fs::path& dir) {
    std::vector<fs::path> written;
    auto emit = [&](const std::string& name, const std::string& svg) {
        plot::write(dir / name, svg);
        written.push_back(dir / name);
    };
    const auto& items = report.at("trajectories");
    std::vector<plot::Series> dist, corr, rate, spec;
    const bool spectral = report.at("reference").contains("spectrum");
    if (spectral) {
        const auto k = detail::doubles(report["reference"]["wavenumbers"]);
        spec.push_back({"reference", k, detail::doubles(report["reference"]["spectrum"])});
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& it = items[i];
        const auto label = detail::label_of(it, i);
        if (it.contains("spectrum_distance")) {
            const auto y = detail::doubles(it["spectrum_distance"]);
            dist.push_back({label, detail::iota(y.size()), y});
        }
        if (it.contains("time_mean_spectrum")) {
            const auto& ref = report["reference"]["wavenumbers"];
            spec.push_back({label, detail::doubles(ref), detail::doubles(it["time_mean_spectrum"])});
        }
        plot::Series c{label, {}, {}};
        for (const auto& [lag, v] : it.at("correlation").items()) {
            c.x.push_back(std::stod(lag));
            c.y.push_back(v.is_number() ? v.get<double>() : std::nan(""));
        }
        std::vector<std::size_t> order(c.x.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return c.x[a] < c.x[b]; });
        plot::Series sorted{label, {}, {}};
        for (auto k : order) {
            sorted.x.push_back(c.x[k]);
            sorted.y.push_back(c.y[k]);
        }
        corr.push_back(std::move(sorted));
        if (it.contains("rate_of_change")) {
            const auto y = detail::doubles(it["rate_of_change"]);
            rate.push_back({label, detail::iota(y.size()), y});
        }
    }
    if (spectral) {
        const double base = report["reference"]["self_distance"].get<double>();
        if (!dist.empty()) {
            const auto n = dist.front().x.size();
            dist.push_back({"truth self-distance", {0.0, static_cast<double>(n > 0 ? n - 1 : 1)}, {base, base}});
        }
        emit("spectrum_distance.svg",
             plot::line_chart({"Spectrum distance over time", "step", "L2 distance to reference spectrum", true}, dist));
        emit("spectrum.svg", plot::line_chart({"Time-mean energy spectrum", "wavenumber k", "E(k)", true}, spec));
    }
    emit("correlation.svg", plot::line_chart({"Spatiotemporal correlation", "lag", "C(lag)", false}, corr));
    emit("rate_of_change.svg", plot::line_chart({"Rate of change", "step", "R(t)", true}, rate));
    for (std::size_t k = 0; k < sidecars.size(); ++k) {
        if (sidecars[k].value("strategy", "") == "bare") continue;
        const auto& h = sidecars[k].at("level_histogram");
        for (const char* slot : {"s1", "s2"}) {
            std::vector<double> v;
            for (const auto& c : h.at(slot)) v.push_back(c.get<double>());
            emit("levels_" + sidecar_names[k] + "_" + slot + ".svg",
                 plot::bar_chart({"Estimated noise levels (" + std::string(slot) + "), " + sidecar_names[k], "level",
                                  "count"},
                                 v));
        }
    }
    return written;
}

}  // namespace mnl::experiment
