#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "mnl/error.hpp"
#include "mnl/grid_field.hpp"

namespace mnl::dynamics {

/// x_{t+1} = A x_t + chol(Q) z,  z ~ N(0, I).
struct LinearGaussianSystem {
    Eigen::MatrixXd A;
    Eigen::MatrixXd Q;

    Eigen::Index dim() const noexcept { return A.rows(); }

    static LinearGaussianSystem scalar(double a, double q) {
        return {Eigen::MatrixXd::Constant(1, 1, a), Eigen::MatrixXd::Constant(1, 1, q)};
    }

    /// Scalar AR(1) with unit stationary variance: q = 1 − a².
    static LinearGaussianSystem unit_variance_ar1(double a) { return scalar(a, 1.0 - a * a); }

    double spectral_radius() const {
        Eigen::EigenSolver<Eigen::MatrixXd> es(A, /*computeEigenvectors=*/false);
        return es.eigenvalues().cwiseAbs().maxCoeff();
    }

    /// Throws ConfigurationError on shape mismatch, non-contractive A or indefinite Q.
    void validate() const {
        if (A.rows() == 0 || A.rows() != A.cols() || Q.rows() != A.rows() || Q.cols() != A.cols()) {
            throw ConfigurationError("LinearGaussianSystem: A and Q must be square of equal size");
        }
        if (!(spectral_radius() < 1.0)) {
            throw ConfigurationError("LinearGaussianSystem: spectral radius of A must be < 1");
        }
        noise_factor();
    }

    /// Lower-triangular Cholesky factor of Q; falls back to a symmetric square root when Q is
    /// PSD but singular.
    Eigen::MatrixXd noise_factor() const {
        if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, Q.cwiseAbs().maxCoeff())) {
            throw ConfigurationError("LinearGaussianSystem: Q must be symmetric");
        }
        Eigen::LLT<Eigen::MatrixXd> llt(Q);
        if (llt.info() == Eigen::Success) return llt.matrixL();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
        const double tol = 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
        if (es.eigenvalues().minCoeff() < -tol) {
            throw ConfigurationError("LinearGaussianSystem: Q is not positive semi-definite");
        }
        const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
    }
};

inline void to_json(nlohmann::json& j, const LinearGaussianSystem& s) {
    auto mat = [](const Eigen::MatrixXd& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            nlohmann::json r = nlohmann::json::array();
            for (Eigen::Index k = 0; k < m.cols(); ++k) r.push_back(m(i, k));
            rows.push_back(r);
        }
        return rows;
    };
    j = {{"A", mat(s.A)}, {"Q", mat(s.Q)}};
}

inline void from_json(const nlohmann::json& j, LinearGaussianSystem& s) {
    auto mat = [](const nlohmann::json& rows) {
        const auto n = static_cast<Eigen::Index>(rows.size());
        const auto m = n == 0 ? 0 : static_cast<Eigen::Index>(rows.at(0).size());
        Eigen::MatrixXd out(n, m);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (static_cast<Eigen::Index>(rows.at(i).size()) != m) {
                throw ConfigurationError("LinearGaussianSystem: ragged matrix");
            }
            for (Eigen::Index k = 0; k < m; ++k) out(i, k) = rows.at(i).at(k).get<double>();
        }
        return out;
    };
    s.A = mat(j.at("A"));
    s.Q = mat(j.at("Q"));
}

/// Returns A·x + chol(Q)·noise.
inline Eigen::VectorXd linear_gaussian_step(const LinearGaussianSystem& sys, const Eigen::VectorXd& x,
                                            const Eigen::VectorXd& noise) {
    if (x.size() != sys.dim() || noise.size() != sys.dim()) {
        throw ArgumentError("linear_gaussian_step: dimension mismatch");
    }
    return sys.A * x + sys.noise_factor() * noise;
}

/// Solves Σ = AΣAᵀ + Q (vectorised Kronecker system, one refinement sweep).
inline Eigen::MatrixXd stationary_covariance(const LinearGaussianSystem& sys) {
    sys.validate();
    const Eigen::Index d = sys.dim();
    Eigen::MatrixXd kron(d * d, d * d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) kron.block(i * d, j * d, d, d) = sys.A(i, j) * sys.A;
    }
    // vec(AΣAᵀ) = (A ⊗ A) vec(Σ) with column-major vec.
    const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(d * d, d * d) - kron;
    const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(sys.Q.data(), d * d);
    auto lu = lhs.partialPivLu();
    Eigen::VectorXd vec = lu.solve(rhs);
    vec += lu.solve(rhs - lhs * vec);
    Eigen::MatrixXd sigma = Eigen::Map<Eigen::MatrixXd>(vec.data(), d, d);
    return 0.5 * (sigma + sigma.transpose());
}

/// Stateful adaptor for generate_trajectory; the frame is a GridField with C = d, H = W = 1.
class LinearGaussianProcess {
public:
    explicit LinearGaussianProcess(LinearGaussianSystem sys)
        : sys_((sys.validate(), std::move(sys))), factor_(sys_.noise_factor()) {}

    template <class Rng>
    void step(GridField& state, Rng& rng, std::int64_t /*step_index*/) {
        const Eigen::Index d = sys_.dim();
        if (static_cast<Eigen::Index>(state.size()) != d) throw ArgumentError("LinearGaussianProcess: state dim");
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::VectorXd z(d);
        for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(rng);
        const Eigen::Map<const Eigen::VectorXd> x(state.values.data(), d);
        const Eigen::VectorXd next = sys_.A * x + factor_ * z;
        for (Eigen::Index i = 0; i < d; ++i) state.values[static_cast<std::size_t>(i)] = next[i];
    }

    const LinearGaussianSystem& system() const noexcept { return sys_; }
    static constexpr double dt() { return 1.0; }
    static constexpr const char* tag() { return "ou"; }
    nlohmann::json config_json() const { return sys_; }

private:
    LinearGaussianSystem sys_;
    Eigen::MatrixXd factor_;
};

}  // namespace mnl::dynamics
