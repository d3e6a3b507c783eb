#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <vector>

#include "subsetmle/params.hpp"

namespace subsetmle {

/**
 * Deterministic delta-cover of the sphere of radius epsilon around theta0.
 * Points come from a Kronecker low-discrepancy sequence pushed through the
 * inverse normal map and projected to the sphere; the point count is grown
 * until a seeded probe test certifies the mesh (every random sphere point
 * within delta of the grid). Every point is checked to be interior for the
 * model's parameter constraints.
 */
struct SphereGrid {
    Model model = Model::Lmm;
    Eigen::VectorXd center;
    double radius = 0.0;  // epsilon
    double mesh = 0.0;    // delta
    std::vector<Eigen::VectorXd> points;

    [[nodiscard]] int dim() const { return static_cast<int>(center.size()); }
    [[nodiscard]] std::size_t size() const { return points.size(); }
};

SphereGrid sphere_grid(Model model, const Eigen::VectorXd& theta0, double epsilon, double delta,
                       std::uint64_t probe_seed = 0x53504852, int probe_count = 10000);

/// Dimension-generic variant without the model interiority requirement;
/// `admissible` (when set) must accept every generated point.
SphereGrid sphere_grid_points(const Eigen::VectorXd& center, double epsilon, double delta,
                              const std::function<bool(const Eigen::VectorXd&)>& admissible,
                              std::uint64_t probe_seed = 0x53504852, int probe_count = 10000);

/// Fixed low-discrepancy sample of `count` interior points of the ball
/// B_epsilon(theta0) (radius capped at 0.95 epsilon so everything stays
/// interior with margin).
std::vector<Eigen::VectorXd> ball_sample(Model model, const Eigen::VectorXd& theta0,
                                         double epsilon, int count);

/// `count` deterministic points on the sphere of radius epsilon (no mesh
/// certification); used to pick probe parameters for spot checks.
std::vector<Eigen::VectorXd> sphere_sample(Model model, const Eigen::VectorXd& theta0,
                                           double epsilon, int count);

enum class SubsetKind { A1, A2 };

SubsetKind subset_from_name(const std::string& name);
std::string subset_name(SubsetKind which);

/**
 * The two parameter subsets whose union covers the sphere, each identified by
 * the like-numbered subcollection.
 *
 * LMM (split at the coordinate blocks the subcollections pin down):
 *   A1 = { ||(theta1,theta2) - center|| >= epsilon/2 }   (mean block, W1)
 *   A2 = { ||(theta3..theta7) - center|| >= epsilon/2 }  (covariance block, W2)
 *
 * MGLMM (the zeta construction):
 *   A2 = { |theta_d - theta_d^0| <= zeta and ||beta2 - beta2^0|| >= epsilon/2 }
 *   A1 = closure of the complement within the sphere
 *      = { |theta_d - theta_d^0| >= zeta } union { ||beta2 - beta2^0|| <= epsilon/2 }
 *
 * zeta <= 0 selects the default epsilon/4.
 */
struct SubsetSpec {
    Model model = Model::Lmm;
    SubsetKind which = SubsetKind::A1;
    double epsilon = 0.5;
    double zeta = 0.0;

    [[nodiscard]] double effective_zeta() const { return zeta > 0.0 ? zeta : epsilon / 4.0; }
    [[nodiscard]] bool contains(const Eigen::VectorXd& theta,
                                const Eigen::VectorXd& theta0) const;
};

/// Indices of grid points belonging to the subset. Throws ConfigError when
/// the restriction is empty.
std::vector<std::size_t> restrict_grid(const SphereGrid& grid, const SubsetSpec& spec);

/// Verify that every grid point lies in A1 or A2 (sphere coverage).
bool subsets_cover_grid(const SphereGrid& grid, double zeta = 0.0);

/// Acklam-style inverse standard normal CDF (relative error ~1e-9).
double inverse_normal_cdf(double u);

}  // namespace subsetmle
