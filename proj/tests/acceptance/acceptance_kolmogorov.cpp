// Desk-scale Kolmogorov acceptance: noise-level head accuracy and drift mitigation over long rollouts.
// Every stage (datasets, checkpoints, rollouts) is cached under --cache and reused when its inputs
// are unchanged, so a rerun after a completed run only re-evaluates. Interrupted training resumes.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "mnl/config.hpp"
#include "mnl/experiment.hpp"
#include "mnl/nn/checkpoint.hpp"
#include "mnl/nn/train.hpp"

using namespace mnl;
namespace ex = mnl::experiment;

namespace {

namespace tol {
constexpr double kLevelMaeFraction = 0.1;  // of S
constexpr double kLevelLo = 0.2;
constexpr double kLevelHi = 0.8;
constexpr std::int64_t kLevelBatches = 64;
constexpr std::int64_t kLevelBatchSize = 32;

constexpr int kSeeds = 5;
constexpr int kHorizon = 2000;
constexpr double kSelfDistanceMultiple = 3.0;
}  // namespace tol

// Held-out truth: an independent draw of the same dynamics, long enough to cover a full rollout.
constexpr std::uint64_t kTestSeed = 7;

void note(const std::string& msg) {
    std::fprintf(stderr, "[kolmogorov] %s\n", msg.c_str());
    std::fflush(stderr);
}

class Stamps {
public:
    explicit Stamps(fs::path path) : path_(std::move(path)) {
        if (fs::exists(path_)) j_ = ex::read_json(path_);
    }
    bool matches(const std::string& stage, const nlohmann::json& inputs) const {
        return j_.contains(stage) && j_[stage] == inputs;
    }
    void set(const std::string& stage, const nlohmann::json& inputs) {
        j_[stage] = inputs;
        ex::write_json(path_, j_);
    }
    void clear(const std::string& stage) {
        j_.erase(stage);
        ex::write_json(path_, j_);
    }

private:
    fs::path path_;
    nlohmann::json j_ = nlohmann::json::object();
};

ExperimentConfig test_config(const ExperimentConfig& cfg) {
    auto t = cfg;
    t.seed = kTestSeed;
    t.dynamics.trajectories = tol::kSeeds;
    t.dynamics.frames = tol::kHorizon + 1;
    return t;
}

nlohmann::json data_inputs(const ExperimentConfig& c) {
    return {{"dynamics", c.dynamics}, {"seed", c.seed}, {"schedule", c.schedule}};
}

ex::Dataset ensure_dataset(Stamps& stamps, const std::string& stage, const ExperimentConfig& c, const fs::path& dir) {
    const auto inputs = data_inputs(c);
    if (!stamps.matches(stage, inputs) || !fs::exists(dir / "manifest.json")) {
        note("generating " + stage + " dataset in " + dir.string());
        stamps.clear(stage);
        fs::remove_all(dir);
        ex::generate_dataset(c, dir);
        stamps.set(stage, inputs);
    }
    return ex::load_dataset(dir);
}

template <class Train>
void ensure_checkpoint(Stamps& stamps, const std::string& stage, nlohmann::json inputs, std::int64_t steps,
                       const fs::path& dir, Train train) {
    const bool same = stamps.matches(stage, inputs);
    const bool have = fs::exists(dir / "manifest.json");
    if (same && have && nn::read_manifest(dir).step >= steps) return;
    ex::TrainRequest req;
    req.resume = same && have;
    req.on_log = [stage](const nn::TrainLogRow& r) {
        if (std::isfinite(r.heldout)) {
            note(stage + " step " + std::to_string(r.step) + " loss " + std::to_string(r.loss) + " heldout " +
                 std::to_string(r.heldout));
        }
    };
    if (!req.resume) {
        fs::remove_all(dir);
        stamps.set(stage, inputs);
    }
    note(std::string(req.resume ? "resuming " : "training ") + stage + " to step " + std::to_string(steps));
    const auto metrics = train(req);
    note(stage + " done: " + metrics.dump());
}

std::vector<Trajectory> ensure_rollouts(Stamps& stamps, const ExperimentConfig& cfg, const ex::Dataset& test,
                                        const fs::path& ckpt, const fs::path& dir, const std::string& strategy,
                                        const nlohmann::json& upstream) {
    const nlohmann::json inputs = {{"rollout", cfg.rollout}, {"strategy", strategy}, {"upstream", upstream}};
    const auto stage = "rollouts_" + strategy;
    std::vector<fs::path> stems;
    for (int k = 0; k < tol::kSeeds; ++k) stems.push_back(dir / ex::rollout_stem(strategy, k));
    bool have = stamps.matches(stage, inputs);
    for (const auto& s : stems) have = have && fs::exists(fs::path(s.string() + ".json"));
    if (!have) {
        note("rolling out " + strategy + " for " + std::to_string(tol::kSeeds) + " seeds x " +
             std::to_string(tol::kHorizon) + " steps");
        stamps.clear(stage);
        auto models = ex::load_models(strategy, ckpt / "surrogate", ckpt / "sns");
        ex::RolloutRequest req;
        req.strategy = strategy;
        req.seeds = tol::kSeeds;
        req.horizon = tol::kHorizon;
        req.nan_policy = "propagate";
        ex::run_rollouts(cfg, models, test, dir, req);
        stamps.set(stage, inputs);
    }
    std::vector<Trajectory> out;
    for (const auto& s : stems) out.push_back(dynamics::read_trajectory(s));
    return out;
}

struct Verdict {
    bool pass;
    std::string detail;
};

Verdict level_head(const ExperimentConfig& cfg, const ex::Dataset& test, const fs::path& sns_dir) {
    auto loaded = nn::load_sns_checkpoint(sns_dir);
    const auto sched = cfg.schedule.build();
    const auto data = nn::SequenceDataset::from_trajectories(test.trajectories, loaded.manifest.normalization);
    const int S = sched.S;
    const int lo = static_cast<int>(std::lround(tol::kLevelLo * S));
    const int hi = static_cast<int>(std::lround(tol::kLevelHi * S));
    const auto m = nn::evaluate_sns(*loaded.state.model, data, sched, tol::kLevelBatches, tol::kLevelBatchSize, 0xACCE,
                                    lo, hi);
    const double mae = 0.5 * (m.level_mae_s1 + m.level_mae_s2);
    char buf[256];
    std::snprintf(buf, sizeof buf, "mean |s_hat - s| = %.3f levels (s1 %.3f, s2 %.3f) on [%d, %d], limit %.1f", mae,
                  m.level_mae_s1, m.level_mae_s2, lo, hi, tol::kLevelMaeFraction * S);
    return {mae < tol::kLevelMaeFraction * S, buf};
}

Verdict drift(const nlohmann::json& bare, const nlohmann::json& sns) {
    const double base = sns["reference"]["self_distance"].get<double>();
    bool bare_ok = true, sns_ok = true;
    std::string detail;
    char buf[256];
    for (const auto& t : bare["trajectories"]) {
        const bool ok = t["grows"].get<bool>() || t["diverged"].get<bool>();
        bare_ok = bare_ok && ok;
        std::snprintf(buf, sizeof buf, "%s(early %.3g late %.3g nan@%ld) ", ok ? "drift" : "stable",
                      t["early_window_distance"].is_null() ? NAN : t["early_window_distance"].get<double>(),
                      t["late_window_distance"].is_null() ? NAN : t["late_window_distance"].get<double>(),
                      t["first_non_finite_frame"].get<long>());
        detail += buf;
    }
    detail += "| sns: ";
    for (const auto& t : sns["trajectories"]) {
        const bool finite = !t["diverged"].get<bool>();
        const double d = t["time_mean_distance"].is_null() ? NAN : t["time_mean_distance"].get<double>();
        const bool ok = finite && d <= tol::kSelfDistanceMultiple * base;
        sns_ok = sns_ok && ok;
        std::snprintf(buf, sizeof buf, "%.3g%s ", d, ok ? "" : "(!)");
        detail += buf;
    }
    std::snprintf(buf, sizeof buf, "| truth self-distance %.3g, limit %.3g", base, tol::kSelfDistanceMultiple * base);
    detail += buf;
    return {bare_ok && sns_ok, "bare: " + detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale Kolmogorov acceptance run"};
    std::string config_path, cache;
    app.add_option("--config", config_path, "experiment config")->required()->check(CLI::ExistingFile);
    app.add_option("--cache", cache, "artifact cache directory (relative paths resolve against MNL_OUTPUT_ROOT)")
        ->required();
    CLI11_PARSE(app, argc, argv);

    int failures = 0;
    auto report = [&](int id, const char* name, const Verdict& v) {
        failures += v.pass ? 0 : 1;
        std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
        std::fflush(stdout);
    };
    try {
        torch::set_num_threads(1);
        const auto cfg = load_config(config_path);
        const auto root = resolve_path(cache);
        fs::create_directories(root);
        Stamps stamps(root / "stamps.json");

        const auto train = ensure_dataset(stamps, "train_data", cfg, root / "data");
        const auto test = ensure_dataset(stamps, "test_data", test_config(cfg), root / "test");
        const auto ckpt = root / "checkpoints";
        const nlohmann::json data_stamp = data_inputs(cfg);
        const nlohmann::json sns_inputs = {{"denoiser", ex::detail::architecture_of(nlohmann::json(cfg.denoiser))},
                                           {"heldout_fraction", cfg.dynamics.heldout_fraction},
                                           {"data", data_stamp}};
        const nlohmann::json sur_inputs = {{"surrogate", ex::detail::architecture_of(nlohmann::json(cfg.surrogate))},
                                           {"heldout_fraction", cfg.dynamics.heldout_fraction},
                                           {"data", data_stamp}};
        ensure_checkpoint(stamps, "sns", sns_inputs, cfg.denoiser.steps, ckpt / "sns", [&](const ex::TrainRequest& r) {
            return ex::train_denoiser(cfg, train, ckpt / "sns", r);
        });
        ensure_checkpoint(stamps, "surrogate", sur_inputs, cfg.surrogate.steps, ckpt / "surrogate",
                          [&](const ex::TrainRequest& r) { return ex::train_surrogate(cfg, train, ckpt / "surrogate", r); });

        report(6, "noise-level head", level_head(cfg, test, ckpt / "sns"));

        const nlohmann::json upstream = {{"sns", sns_inputs},
                                         {"sns_steps", cfg.denoiser.steps},
                                         {"surrogate", sur_inputs},
                                         {"surrogate_steps", cfg.surrogate.steps},
                                         {"test", data_inputs(test_config(cfg))}};
        const auto bare = ensure_rollouts(stamps, cfg, test, ckpt, root / "rollouts", "bare", upstream);
        const auto sns = ensure_rollouts(stamps, cfg, test, ckpt, root / "rollouts", "sns_refine", upstream);
        ex::EvalOptions opt;
        opt.lags = cfg.metrics.correlation_lags;
        const auto bare_report = ex::evaluate(bare, test.trajectories, opt);
        const auto sns_report = ex::evaluate(sns, test.trajectories, opt);
        ex::write_json(root / "eval_bare.json", bare_report);
        ex::write_json(root / "eval_sns_refine.json", sns_report);
        report(7, "drift mitigation", drift(bare_report, sns_report));
    } catch (const std::exception& e) {
        std::printf("FAIL kolmogorov acceptance aborted: %s\n", e.what());
        return 1;
    }
    return failures == 0 ? 0 : 1;
}
