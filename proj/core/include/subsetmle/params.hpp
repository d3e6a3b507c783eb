#pragma once

#include <Eigen/Core>
#include <string>

namespace subsetmle {

enum class Model { Lmm, Mglmm, Toy };

std::string model_name(Model m);
Model model_from_name(const std::string& name);

/**
 * Parameters of the longitudinal linear mixed model with crossed random
 * effects and AR(1) within-subject dependence:
 *
 *   Y_{ijt} = theta1 + theta2 * 1{t <= T/2} + U1_i + U2_j + V_{ijt} + e_{ijt}
 *
 * with U1_i ~ N(0, theta4), U2_j ~ N(0, theta5), V_{ij.} ~ N(0, theta6 * Psi)
 * an AR(1) process with correlation theta7, and e ~ N(0, theta3).
 *
 * The admissible set is R x R x (0,inf)^4 x (-1,1); all operations require
 * interior points and reject boundary values.
 */
struct LmmParams {
    double theta1 = 0.0;  // baseline mean
    double theta2 = 0.0;  // treatment effect (first half of the time range)
    double theta3 = 1.0;  // residual variance
    double theta4 = 1.0;  // row random-effect variance
    double theta5 = 1.0;  // column random-effect variance
    double theta6 = 1.0;  // within-subject AR process variance
    double theta7 = 0.0;  // AR(1) correlation

    static constexpr int kDim = 7;

    [[nodiscard]] Eigen::VectorXd to_vector() const;
    static LmmParams from_vector(const Eigen::Ref<const Eigen::VectorXd>& v);

    /// Throws DomainError naming the offending component if not interior.
    void validate() const;
    [[nodiscard]] bool is_interior() const;
};

/**
 * Parameters of the bivariate logit-normal mixed model: a normal and a
 * Bernoulli response per subject (i, j), sharing two crossed random effects
 * with common variance theta_d.
 *
 *   eta_{ijk} = x_{ij}' beta_k + U1_i + U2_j,   k = 1 (normal), 2 (binary)
 *
 * Parameter order in vector form is [beta1, beta2, theta_d], dimension 2p+1.
 */
struct MglmmParams {
    Eigen::VectorXd beta1;  // coefficients of the normal response
    Eigen::VectorXd beta2;  // coefficients of the binary response
    double theta_d = 1.0;   // shared random-effect variance

    [[nodiscard]] int p() const { return static_cast<int>(beta1.size()); }
    [[nodiscard]] int dim() const { return 2 * p() + 1; }

    [[nodiscard]] Eigen::VectorXd to_vector() const;
    static MglmmParams from_vector(const Eigen::Ref<const Eigen::VectorXd>& v);

    void validate() const;
    [[nodiscard]] bool is_interior() const;
};

/// Dimension of the parameter vector for a model (p is the predictor
/// dimension, used only by the MGLMM).
int param_dim(Model model, int p);

/// Interior test on plain vectors, used by grid and optimizer code.
bool is_interior_vector(Model model, const Eigen::Ref<const Eigen::VectorXd>& v);

/// Throwing version of is_interior_vector; names the offending component.
void validate_interior_vector(Model model, const Eigen::Ref<const Eigen::VectorXd>& v);

}  // namespace subsetmle
