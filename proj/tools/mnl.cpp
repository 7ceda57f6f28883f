// mnl: data generation, training, rollouts, evaluation and oracle checks.
//
// Exit codes: 0 success, 1 runtime divergence (or a failed oracle check), 2 configuration error.
// Relative paths resolve against $MNL_OUTPUT_ROOT (default: the working directory).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "mnl/config.hpp"
#include "mnl/error.hpp"
#include "mnl/experiment.hpp"
#include "mnl/oracle_suite.hpp"
#include "mnl/version.hpp"

namespace fs = std::filesystem;
using namespace mnl;

namespace {

constexpr int kOk = 0;
constexpr int kDiverged = 1;
constexpr int kConfigError = 2;

struct Common {
    std::string config;
    std::vector<std::string> set;
    int jobs = 1;
};

ExperimentConfig load(const Common& c, std::vector<std::string> extra = {}) {
    auto overrides = c.set;
    overrides.insert(overrides.end(), extra.begin(), extra.end());
    return load_config(c.config, overrides);
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
    return given.empty() ? fallback : resolve_path(given);
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << std::endl; }

void log_row(const nn::TrainLogRow& r) {
    std::fprintf(stderr, "step %lld  loss %.5f  eps %.5f  ce %.5f", static_cast<long long>(r.step), r.loss, r.eps,
                 r.ce);
    if (std::isfinite(r.heldout)) std::fprintf(stderr, "  heldout %.5f", r.heldout);
    std::fprintf(stderr, "\n");
}

/// Trajectory headers in `p` (a directory or a single header/stem), skipping sidecars and manifests.
std::vector<fs::path> trajectory_files(const fs::path& p) {
    std::vector<fs::path> out;
    if (fs::is_directory(p)) {
        for (const auto& e : fs::directory_iterator(p)) {
            const auto name = e.path().filename().string();
            if (e.path().extension() != ".json" || name == "manifest.json") continue;
            if (name.size() > 13 && name.ends_with(".sidecar.json")) continue;
            out.push_back(e.path());
        }
        std::sort(out.begin(), out.end());
    } else if (fs::exists(p) || fs::exists(fs::path(p.string() + ".json"))) {
        out.push_back(p);
    }
    if (out.empty()) throw ConfigurationError("no trajectories found at " + p.string());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mnl: multi-noise-level denoising for autoregressive simulation"};
    app.set_version_flag("--version", std::string(mnl::kVersion));
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--config", common.config, "experiment config file (JSON)");
    app.add_option("--set", common.set, "override a config entry, e.g. --set denoiser.steps=200")->take_all();
    app.add_option("--jobs", common.jobs, "parallel workers over trajectories / seeds")->check(CLI::PositiveNumber);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "simulate trajectories and write a dataset");
    std::optional<std::string> g_system;
    std::optional<int> g_resolution, g_trajectories;
    std::optional<std::int64_t> g_frames, g_burn_in, g_subsample;
    std::optional<std::uint64_t> g_seed;
    std::string g_out;
    gen->add_option("--system", g_system)->check(CLI::IsMember({"kolmogorov", "ou"}));
    gen->add_option("--resolution", g_resolution);
    gen->add_option("--frames", g_frames);
    gen->add_option("--burn-in", g_burn_in, "solver steps discarded before the first frame");
    gen->add_option("--subsample", g_subsample, "solver steps per recorded frame");
    gen->add_option("--trajectories", g_trajectories);
    gen->add_option("--seed", g_seed);
    gen->add_option("--out", g_out, "dataset directory (default: paths.data)");

    // train / train-surrogate
    std::string t_data, t_out;
    std::optional<std::int64_t> t_steps;
    bool t_resume = false;
    auto* train = app.add_subcommand("train", "train the SNS denoiser");
    auto* train_s = app.add_subcommand("train-surrogate", "train the Gaussian surrogate");
    for (auto* sc : {train, train_s}) {
        sc->add_option("--data", t_data, "dataset directory (default: paths.data)");
        sc->add_option("--out", t_out, "checkpoint directory");
        sc->add_option("--steps", t_steps);
        sc->add_flag("--resume", t_resume, "continue from the checkpoint in --out");
    }

    // rollout
    auto* roll = app.add_subcommand("rollout", "autoregressive rollouts from test initial conditions");
    std::string r_strategy = "sns_refine", r_sns, r_surrogate, r_data, r_out, r_nan = "propagate";
    int r_seeds = 1;
    std::optional<int> r_horizon, r_threshold;
    std::vector<std::string> strategies = rollout::strategy_names();
    strategies.push_back("bare");
    roll->add_option("--strategy", r_strategy)->check(CLI::IsMember(strategies));
    roll->add_option("--sns", r_sns, "SNS checkpoint (default: <checkpoints>/sns)");
    roll->add_option("--surrogate", r_surrogate, "surrogate checkpoint (default: <checkpoints>/surrogate)");
    roll->add_option("--data", r_data, "dataset providing initial conditions (default: paths.data)");
    roll->add_option("--out", r_out, "output directory (default: <outputs>/rollouts)");
    roll->add_option("--seeds", r_seeds)->check(CLI::PositiveNumber);
    roll->add_option("--horizon", r_horizon);
    roll->add_option("--threshold", r_threshold, "activation threshold in [0, S + 1]");
    roll->add_option("--nan-policy", r_nan, "bare rollouts: abort or propagate")
        ->check(CLI::IsMember({"abort", "propagate"}));

    // eval
    auto* ev = app.add_subcommand("eval", "metric report of trajectories against reference statistics");
    std::string e_reference, e_out, e_plots;
    std::vector<std::string> e_inputs;
    ev->add_option("--reference", e_reference, "reference dataset directory")->required();
    ev->add_option("inputs", e_inputs, "trajectory files or directories")->required();
    ev->add_option("--out", e_out, "report path (default: <outputs>/eval.json)");
    ev->add_option("--plots", e_plots, "also render figures into this directory");

    // plot
    auto* pl = app.add_subcommand("plot", "render figures from an eval report");
    std::string p_report, p_sidecars, p_out;
    pl->add_option("--report", p_report, "eval report")->required();
    pl->add_option("--sidecars", p_sidecars, "directory of rollout sidecars for level histograms");
    pl->add_option("--out", p_out, "figure directory (default: <outputs>/figures)");

    // oracle-check
    auto* oc = app.add_subcommand("oracle-check", "closed-form vs Monte-Carlo oracle property suite");
    std::optional<int> o_S;
    std::int64_t o_samples = 100000;
    std::uint64_t o_seed = 0;
    bool o_fault = false;
    std::string o_out;
    oc->add_option("--S", o_S, "number of noise levels (default: schedule.S)");
    oc->add_option("--samples", o_samples, "Monte-Carlo samples per grid point");
    oc->add_option("--seed", o_seed);
    oc->add_flag("--inject-fault", o_fault, "corrupt the cross-covariance on the conditional route");
    oc->add_option("--out", o_out, "also write the report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (*gen) {
            std::vector<std::string> o;
            if (g_system) o.push_back("dynamics.system=\"" + *g_system + "\"");
            if (g_resolution) o.push_back("dynamics.kolmogorov.resolution=" + std::to_string(*g_resolution));
            if (g_frames) o.push_back("dynamics.frames=" + std::to_string(*g_frames));
            if (g_burn_in) o.push_back("dynamics.burn_in=" + std::to_string(*g_burn_in));
            if (g_subsample) o.push_back("dynamics.subsample=" + std::to_string(*g_subsample));
            if (g_trajectories) o.push_back("dynamics.trajectories=" + std::to_string(*g_trajectories));
            if (g_seed) o.push_back("seed=" + std::to_string(*g_seed));
            const auto cfg = load(common, o);
            const auto dir = or_default(g_out, resolve_path(cfg.paths.data));
            auto m = experiment::generate_dataset(cfg, dir, common.jobs);
            m.erase("config");
            m["path"] = dir.string();
            print(m);
            return kOk;
        }
        if (*train || *train_s) {
            std::vector<std::string> o;
            const char* section = *train ? "denoiser" : "surrogate";
            if (t_steps) o.push_back(std::string(section) + ".steps=" + std::to_string(*t_steps));
            const auto cfg = load(common, o);
            const auto data = experiment::load_dataset(or_default(t_data, resolve_path(cfg.paths.data)));
            const auto dir =
                or_default(t_out, resolve_path(cfg.paths.checkpoints) / (*train ? "sns" : "surrogate"));
            experiment::TrainRequest req{t_resume, 8, log_row};
            const auto metrics = *train ? experiment::train_denoiser(cfg, data, dir, req)
                                        : experiment::train_surrogate(cfg, data, dir, req);
            print({{"checkpoint", dir.string()}, {"metrics", metrics}});
            return kOk;
        }
        if (*roll) {
            const auto cfg = load(common);
            const auto ckpt = resolve_path(cfg.paths.checkpoints);
            auto models = experiment::load_models(r_strategy, or_default(r_surrogate, ckpt / "surrogate"),
                                                  or_default(r_sns, ckpt / "sns"));
            const auto test = experiment::load_dataset(or_default(r_data, resolve_path(cfg.paths.data)));
            const auto out = or_default(r_out, resolve_path(cfg.paths.outputs) / "rollouts");
            experiment::RolloutRequest req;
            req.strategy = r_strategy;
            req.seeds = r_seeds;
            req.jobs = common.jobs;
            req.horizon = r_horizon;
            req.threshold = r_threshold;
            req.nan_policy = r_nan;
            const auto results = experiment::run_rollouts(cfg, models, test, out, req);
            nlohmann::json summary = nlohmann::json::array();
            for (const auto& r : results) {
                summary.push_back({{"trajectory", r.stem.string() + ".json"},
                                   {"first_non_finite_frame", r.sidecar["first_non_finite_frame"]},
                                   {"refined_steps", r.sidecar["refined_steps"]},
                                   {"divergence_events", r.sidecar["divergence_events"].size()}});
            }
            print({{"strategy", r_strategy}, {"rollouts", summary}});
            return kOk;
        }
        if (*ev) {
            const auto cfg = load(common);
            const auto ref = experiment::load_dataset(resolve_path(e_reference));
            std::vector<Trajectory> trajs;
            std::vector<std::string> names;
            for (const auto& in : e_inputs) {
                for (const auto& f : trajectory_files(resolve_path(in))) {
                    trajs.push_back(dynamics::read_trajectory(f));
                    names.push_back(f.stem().string());
                }
            }
            experiment::EvalOptions opt;
            opt.lags = cfg.metrics.correlation_lags;
            auto report = experiment::evaluate(trajs, ref.trajectories, opt);
            for (std::size_t k = 0; k < names.size(); ++k) report["trajectories"][k]["source"] = names[k];
            report["reference"]["path"] = ref.dir.string();
            const auto out = or_default(e_out, resolve_path(cfg.paths.outputs) / "eval.json");
            experiment::write_json(out, report);
            if (!e_plots.empty()) experiment::render_plots(report, {}, {}, resolve_path(e_plots));
            print({{"report", out.string()}, {"summary", report["summary"]}});
            return kOk;
        }
        if (*pl) {
            const auto cfg = load(common);
            const auto report = experiment::read_json(resolve_path(p_report));
            std::vector<nlohmann::json> sidecars;
            std::vector<std::string> names;
            if (!p_sidecars.empty()) {
                const auto dir = resolve_path(p_sidecars);
                if (!fs::is_directory(dir)) throw ConfigurationError("plot: no sidecar directory " + dir.string());
                std::vector<fs::path> files;
                for (const auto& e : fs::directory_iterator(dir)) {
                    if (e.path().filename().string().ends_with(".sidecar.json")) files.push_back(e.path());
                }
                std::sort(files.begin(), files.end());
                for (const auto& f : files) {
                    sidecars.push_back(experiment::read_json(f));
                    auto n = f.filename().string();
                    names.push_back(n.substr(0, n.size() - std::string(".sidecar.json").size()));
                }
            }
            const auto out = or_default(p_out, resolve_path(cfg.paths.outputs) / "figures");
            const auto files = experiment::render_plots(report, sidecars, names, out);
            nlohmann::json list = nlohmann::json::array();
            for (const auto& f : files) list.push_back(f.string());
            print({{"figures", list}});
            return kOk;
        }
        if (*oc) {
            const auto cfg = load(common);
            oracle::SuiteOptions opt;
            opt.S = o_S.value_or(cfg.schedule.S);
            opt.mc_samples = o_samples;
            opt.seed = o_seed;
            opt.inject_fault = o_fault;
            const auto report = oracle::run_suite(cfg.dynamics.ou, opt);
            if (!o_out.empty()) experiment::write_json(resolve_path(o_out), report);
            print(report);
            return report["pass"].get<bool>() ? kOk : kDiverged;
        }
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDiverged;
    } catch (const ConfigurationError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ArgumentError& e) {
        std::cerr << "argument error: " << e.what() << '\n';
        return kConfigError;
    } catch (const StructuralError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kConfigError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "filesystem error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDiverged;
    }
    return kConfigError;
}
