#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mnl/error.hpp"

// Monotone routes through the (s1, s2) phase space of diffusion levels.
// s1 is the level of the current frame x_t, s2 that of the condition x_{t-1}.

namespace mnl::rollout {

struct LevelPoint {
    int s1 = 0;
    int s2 = 0;
    bool operator==(const LevelPoint&) const = default;
};

inline void to_json(nlohmann::json& j, const LevelPoint& p) { j = {p.s1, p.s2}; }
inline void from_json(const nlohmann::json& j, LevelPoint& p) {
    p.s1 = j.at(0).get<int>();
    p.s2 = j.at(1).get<int>();
}

struct TraversalPath {
    std::vector<LevelPoint> points;
    // Condition slot ignored: the score is queried with the condition replaced by pure noise at level S,
    // which yields the marginal score of the current slot. Only s1 moves along such a path.
    bool marginal = false;

    std::size_t size() const noexcept { return points.size(); }
    const LevelPoint& front() const { return points.front(); }

    /// Throws ArgumentError unless the path is non-empty, ends at (0, 0), and every step lowers
    /// one or both coordinates by exactly 1 without raising the other.
    void validate() const {
        if (points.empty()) throw ArgumentError("TraversalPath: empty");
        if (!(points.back() == LevelPoint{0, 0})) throw ArgumentError("TraversalPath: must end at (0, 0)");
        for (const auto& p : points) {
            if (p.s1 < 0 || p.s2 < 0) throw ArgumentError("TraversalPath: negative level");
        }
        for (std::size_t k = 1; k < points.size(); ++k) {
            const int d1 = points[k - 1].s1 - points[k].s1;
            const int d2 = points[k - 1].s2 - points[k].s2;
            if (d1 < 0 || d2 < 0 || d1 > 1 || d2 > 1 || d1 + d2 == 0) {
                throw ArgumentError("TraversalPath: step " + std::to_string(k) + " is not a unit decrement");
            }
            if (marginal && d2 != 0) throw ArgumentError("TraversalPath: marginal path must keep s2 fixed");
        }
    }
};

inline void to_json(nlohmann::json& j, const TraversalPath& p) { j = {{"points", p.points}, {"marginal", p.marginal}}; }

namespace detail {

inline void append_s2_descent(std::vector<LevelPoint>& pts) {
    while (pts.back().s2 > 0) pts.push_back({pts.back().s1, pts.back().s2 - 1});
}
inline void append_s1_descent(std::vector<LevelPoint>& pts) {
    while (pts.back().s1 > 0) pts.push_back({pts.back().s1 - 1, pts.back().s2});
}

}  // namespace detail

/// Path kinds: "path_a" (condition to 0, then current; the SNS default), "diagonal" (both together,
/// joint-diffusion analog), "current_first", "clean_conditioning" (s2 ≡ 0 from the start) and
/// "marginal_projection" (s1-only descent with the condition ignored).
inline TraversalPath make_path(const std::string& kind, int s1_init, int s2_init, int S) {
    if (s1_init < 0 || s2_init < 0 || s1_init > S || s2_init > S) {
        throw ArgumentError("make_path: initial levels must lie in [0, S]");
    }
    TraversalPath path;
    auto& pts = path.points;
    if (kind == "path_a" || kind == "sns") {
        pts.push_back({s1_init, s2_init});
        detail::append_s2_descent(pts);
        detail::append_s1_descent(pts);
    } else if (kind == "current_first") {
        pts.push_back({s1_init, s2_init});
        detail::append_s1_descent(pts);
        detail::append_s2_descent(pts);
    } else if (kind == "diagonal" || kind == "joint_diffusion") {
        pts.push_back({s1_init, s2_init});
        while (pts.back().s1 > 0 || pts.back().s2 > 0) {
            const auto& b = pts.back();
            pts.push_back({std::max(b.s1 - 1, 0), std::max(b.s2 - 1, 0)});
        }
    } else if (kind == "clean_conditioning") {
        pts.push_back({s1_init, 0});
        detail::append_s1_descent(pts);
    } else if (kind == "marginal_projection") {
        path.marginal = true;
        pts.push_back({s1_init, 0});
        detail::append_s1_descent(pts);
    } else {
        throw ArgumentError("make_path: unknown strategy '" + kind + "'");
    }
    path.validate();
    return path;
}

}  // namespace mnl::rollout
