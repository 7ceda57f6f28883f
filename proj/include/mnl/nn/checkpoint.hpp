#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "mnl/error.hpp"
#include "mnl/grid_field.hpp"
#include "mnl/nn/denoiser.hpp"
#include "mnl/nn/surrogate.hpp"
#include "mnl/nn/train.hpp"
#include "mnl/schedule.hpp"
#include "mnl/version.hpp"

// Checkpoint directory layout: manifest.json, model.pt, optimizer.pt, train_log.csv.
// Readers ignore manifest keys they do not know.

namespace mnl::nn {

namespace fs = std::filesystem;

struct CheckpointManifest {
    std::string kind;  // "sns" or "surrogate"
    std::string version = kVersion;
    nlohmann::json config = nlohmann::json::object();
    std::optional<NoiseSchedule> schedule;
    Normalization normalization;
    std::uint64_t seed = 0;
    FrameShape frame_shape;
    std::int64_t step = 0;
    std::int64_t parameters = 0;
    nlohmann::json metrics = nlohmann::json::object();
    nlohmann::json extra = nlohmann::json::object();  // e.g. dataset provenance
};

inline nlohmann::json manifest_json(const CheckpointManifest& m) {
    nlohmann::json j = {{"kind", m.kind},
                        {"version", m.version},
                        {"config", m.config},
                        {"schedule", m.schedule ? nlohmann::json(*m.schedule) : nlohmann::json(nullptr)},
                        {"normalization", m.normalization.empty() ? nlohmann::json(nullptr) : nlohmann::json(m.normalization)},
                        {"seed", m.seed},
                        {"frame_shape", m.frame_shape},
                        {"step", m.step},
                        {"parameters", m.parameters},
                        {"metrics", m.metrics}};
    for (const auto& [k, v] : m.extra.items()) j[k] = v;
    return j;
}

inline CheckpointManifest read_manifest(const fs::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw ConfigurationError("checkpoint: cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError("checkpoint: malformed manifest " + path.string() + ": " + e.what());
    }
    CheckpointManifest m;
    try {
        m.kind = j.at("kind").get<std::string>();
        m.version = j.value("version", std::string("unknown"));
        m.config = j.value("config", nlohmann::json::object());
        if (j.contains("schedule") && !j["schedule"].is_null()) m.schedule = j["schedule"].get<NoiseSchedule>();
        if (j.contains("normalization") && !j["normalization"].is_null()) {
            m.normalization = j["normalization"].get<Normalization>();
        }
        m.seed = j.value("seed", std::uint64_t{0});
        m.frame_shape = j.at("frame_shape").get<FrameShape>();
        m.step = j.value("step", std::int64_t{0});
        m.parameters = j.value("parameters", std::int64_t{0});
        m.metrics = j.value("metrics", nlohmann::json::object());
        const auto known = manifest_json(CheckpointManifest{});
        for (const auto& [k, v] : j.items()) {
            if (!known.contains(k)) m.extra[k] = v;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError("checkpoint: invalid manifest " + path.string() + ": " + e.what());
    }
    return m;
}

inline void write_train_log(const fs::path& path, const std::vector<TrainLogRow>& log) {
    std::ofstream out(path);
    if (!out) throw ConfigurationError("checkpoint: cannot write " + path.string());
    out << "step,loss,eps,ce,lambda,heldout\n";
    out.precision(10);
    for (const auto& r : log) {
        out << r.step << ',' << r.loss << ',' << r.eps << ',' << r.ce << ',' << r.lambda << ',';
        if (std::isfinite(r.heldout)) out << r.heldout;
        out << '\n';
    }
}

inline std::vector<TrainLogRow> read_train_log(const fs::path& path) {
    std::vector<TrainLogRow> log;
    std::ifstream in(path);
    if (!in) return log;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t pos = 0;
        while (true) {
            const auto next = line.find(',', pos);
            cells.push_back(line.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        if (cells.size() < 6) throw ConfigurationError("checkpoint: malformed row in " + path.string());
        TrainLogRow r;
        r.step = std::stoll(cells[0]);
        r.loss = std::stod(cells[1]);
        r.eps = std::stod(cells[2]);
        r.ce = std::stod(cells[3]);
        r.lambda = std::stod(cells[4]);
        r.heldout = cells[5].empty() ? std::nan("") : std::stod(cells[5]);
        log.push_back(r);
    }
    return log;
}

namespace detail {

inline void save_module(torch::nn::Module& m, const fs::path& path) {
    torch::serialize::OutputArchive ar;
    m.save(ar);
    ar.save_to(path.string());
}

inline void load_module(torch::nn::Module& m, const fs::path& path) {
    if (!fs::exists(path)) throw ConfigurationError("checkpoint: missing " + path.string());
    torch::serialize::InputArchive ar;
    ar.load_from(path.string());
    m.load(ar);
}

inline void write_manifest(const fs::path& dir, const CheckpointManifest& m) {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw ConfigurationError("checkpoint: cannot write manifest in " + dir.string());
    out << manifest_json(m).dump(2) << '\n';
}

}  // namespace detail

inline void save_sns_checkpoint(const fs::path& dir, const SnsTrainState& st, const NoiseSchedule& sched,
                                const Normalization& norm, const nlohmann::json& metrics = nlohmann::json::object(),
                                const nlohmann::json& extra = nlohmann::json::object()) {
    fs::create_directories(dir);
    CheckpointManifest m;
    m.kind = "sns";
    nlohmann::json cfg = st.config;
    cfg["lambda_current"] = st.lambda;
    m.config = cfg;
    m.schedule = sched;
    m.normalization = norm;
    m.seed = st.config.seed;
    m.frame_shape = st.model->frame_shape();
    m.step = st.step;
    m.parameters = parameter_count(*st.model);
    m.metrics = metrics;
    m.extra = extra;
    detail::save_module(*st.model, dir / "model.pt");
    torch::save(*st.optimizer, (dir / "optimizer.pt").string());
    write_train_log(dir / "train_log.csv", st.log);
    detail::write_manifest(dir, m);
}

struct LoadedSns {
    CheckpointManifest manifest;
    SnsTrainState state;
    NoiseSchedule schedule;
};

inline LoadedSns load_sns_checkpoint(const fs::path& dir) {
    LoadedSns out;
    out.manifest = read_manifest(dir);
    if (out.manifest.kind != "sns") throw ConfigurationError("checkpoint: " + dir.string() + " is not an SNS model");
    if (!out.manifest.schedule) throw ConfigurationError("checkpoint: SNS manifest lacks a schedule");
    out.schedule = *out.manifest.schedule;
    DenoiserConfig cfg;
    try {
        cfg = out.manifest.config.get<DenoiserConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError(std::string("checkpoint: invalid denoiser config: ") + e.what());
    }
    out.state = init_sns_training(cfg, out.manifest.frame_shape);
    out.state.lambda = out.manifest.config.value("lambda_current", cfg.lambda);
    detail::load_module(*out.state.model, dir / "model.pt");
    if (fs::exists(dir / "optimizer.pt")) torch::load(*out.state.optimizer, (dir / "optimizer.pt").string());
    out.state.step = out.manifest.step;
    out.state.log = read_train_log(dir / "train_log.csv");
    out.state.model->eval();
    return out;
}

inline void save_surrogate_checkpoint(const fs::path& dir, const SurrogateTrainState& st, const Normalization& norm,
                                      const nlohmann::json& metrics = nlohmann::json::object(),
                                      const nlohmann::json& extra = nlohmann::json::object()) {
    fs::create_directories(dir);
    CheckpointManifest m;
    m.kind = "surrogate";
    m.config = st.config;
    m.normalization = norm;
    m.seed = st.config.seed;
    m.frame_shape = st.model->frame_shape();
    m.step = st.step;
    m.parameters = parameter_count(*st.model);
    m.metrics = metrics;
    m.extra = extra;
    detail::save_module(*st.model, dir / "model.pt");
    torch::save(*st.optimizer, (dir / "optimizer.pt").string());
    write_train_log(dir / "train_log.csv", st.log);
    detail::write_manifest(dir, m);
}

struct LoadedSurrogate {
    CheckpointManifest manifest;
    SurrogateTrainState state;
};

inline LoadedSurrogate load_surrogate_checkpoint(const fs::path& dir) {
    LoadedSurrogate out;
    out.manifest = read_manifest(dir);
    if (out.manifest.kind != "surrogate") {
        throw ConfigurationError("checkpoint: " + dir.string() + " is not a surrogate model");
    }
    SurrogateConfig cfg;
    try {
        cfg = out.manifest.config.get<SurrogateConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError(std::string("checkpoint: invalid surrogate config: ") + e.what());
    }
    out.state = init_surrogate_training(cfg, out.manifest.frame_shape);
    detail::load_module(*out.state.model, dir / "model.pt");
    if (fs::exists(dir / "optimizer.pt")) torch::load(*out.state.optimizer, (dir / "optimizer.pt").string());
    out.state.step = out.manifest.step;
    out.state.log = read_train_log(dir / "train_log.csv");
    out.state.model->eval();
    return out;
}

}  // namespace mnl::nn
