#include "subsetmle/sphere.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "subsetmle/errors.hpp"
#include "subsetmle/rng.hpp"

namespace subsetmle {

double inverse_normal_cdf(double u) {
    if (!(u > 0.0 && u < 1.0)) throw ContractError("inverse_normal_cdf: u must be in (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double low = 0.02425, high = 1.0 - low;
    double q, r, x;
    if (u < low) {
        q = std::sqrt(-2.0 * std::log(u));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (u <= high) {
        q = u - 0.5;
        r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        q = std::sqrt(-2.0 * std::log(1.0 - u));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    return x;
}

namespace {

// Kronecker sequence with the generalized golden-ratio increments: the i-th
// point in [0,1)^d is frac(1/2 + i * alpha), alpha_k = phi_d^{-(k+1)} where
// phi_d solves x^{d+1} = x + 1.
Eigen::VectorXd kronecker_alpha(int dim) {
    double phi = 1.5;
    for (int iter = 0; iter < 64; ++iter) {
        phi = std::pow(1.0 + phi, 1.0 / (dim + 1));
    }
    Eigen::VectorXd alpha(dim);
    double value = 1.0;
    for (int k = 0; k < dim; ++k) {
        value /= phi;
        alpha[k] = value;
    }
    return alpha;
}

Eigen::VectorXd kronecker_point(const Eigen::VectorXd& alpha, std::int64_t index) {
    Eigen::VectorXd u(alpha.size());
    for (int k = 0; k < alpha.size(); ++k) {
        const double v = 0.5 + (index + 1) * alpha[k];
        u[k] = v - std::floor(v);
    }
    return u;
}

Eigen::VectorXd unit_direction(const Eigen::VectorXd& u) {
    Eigen::VectorXd z(u.size());
    for (int k = 0; k < u.size(); ++k) {
        // keep away from the exact 0/1 corners of the map
        const double clipped = std::min(1.0 - 1e-12, std::max(1e-12, u[k]));
        z[k] = inverse_normal_cdf(clipped);
    }
    const double norm = z.norm();
    if (norm < 1e-12) {
        z.setZero();
        z[0] = 1.0;
        return z;
    }
    return z / norm;
}

void require_interior(Model model, const Eigen::VectorXd& theta, const char* what) {
    if (!is_interior_vector(model, theta)) {
        throw DomainError(std::string(what) +
                          ": a generated point violates the interior constraints; "
                          "shrink epsilon");
    }
}

// Largest distance from a random probe to the grid, estimated with `probes`
// seeded sphere directions.
double probe_covering_radius(const std::vector<Eigen::VectorXd>& points,
                             const Eigen::VectorXd& center, double radius, std::uint64_t seed,
                             int probes) {
    const int dim = static_cast<int>(center.size());
    SplitRng rng(seed);
    double worst = 0.0;
    Eigen::VectorXd z(dim);
    for (int p = 0; p < probes; ++p) {
        for (int k = 0; k < dim; ++k) z[k] = rng.normal();
        const Eigen::VectorXd probe = center + (radius / z.norm()) * z;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& point : points) {
            best = std::min(best, (point - probe).squaredNorm());
            if (best == 0.0) break;
        }
        worst = std::max(worst, std::sqrt(best));
    }
    return worst;
}

}  // namespace

SphereGrid sphere_grid(Model model, const Eigen::VectorXd& theta0, double epsilon, double delta,
                       std::uint64_t probe_seed, int probe_count) {
    validate_interior_vector(model, theta0);
    SphereGrid grid = sphere_grid_points(
        theta0, epsilon, delta,
        [model](const Eigen::VectorXd& point) { return is_interior_vector(model, point); },
        probe_seed, probe_count);
    grid.model = model;
    return grid;
}

SphereGrid sphere_grid_points(const Eigen::VectorXd& theta0, double epsilon, double delta,
                              const std::function<bool(const Eigen::VectorXd&)>& admissible,
                              std::uint64_t probe_seed, int probe_count) {
    if (!(epsilon > 0.0) || !(delta > 0.0)) {
        throw ConfigError("sphere_grid: epsilon and delta must be positive");
    }
    const int dim = static_cast<int>(theta0.size());
    const Eigen::VectorXd alpha = kronecker_alpha(dim);

    SphereGrid grid;
    grid.center = theta0;
    grid.radius = epsilon;
    grid.mesh = delta;

    const auto make_points = [&](std::size_t count) {
        std::vector<Eigen::VectorXd> points;
        points.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            points.push_back(theta0 + epsilon * unit_direction(kronecker_point(alpha, i)));
        }
        return points;
    };
    const int coarse_probes = std::min(probe_count, 2000);
    const auto passes_coarse = [&](std::size_t count) {
        const auto points = make_points(count);
        return probe_covering_radius(points, theta0, epsilon, probe_seed, coarse_probes) <= delta;
    };

    // Grow from the covering-number scaling until the probe test passes, then
    // bisect back to (near) the minimal certified count so the growth law in
    // the mesh is measurable.
    std::size_t hi = std::max<std::size_t>(
        2 * dim, static_cast<std::size_t>(std::ceil(std::pow(epsilon / delta, dim - 1))));
    const std::size_t hard_cap = 4000000;
    std::size_t lo = 1;
    while (!passes_coarse(hi)) {
        if (hi >= hard_cap) {
            throw ConfigError("sphere_grid: probe test still failing at " + std::to_string(hi) +
                              " points");
        }
        lo = hi;
        hi = static_cast<std::size_t>(std::ceil(hi * 1.3)) + 1;
    }
    while (hi > lo + 1 && hi - lo > hi / 50) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (passes_coarse(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Final certification with the full probe budget and a fresh seed.
    grid.points = make_points(hi);
    while (probe_covering_radius(grid.points, theta0, epsilon, probe_seed + 1, probe_count) >
           delta) {
        if (hi >= hard_cap) {
            throw ConfigError("sphere_grid: probe test still failing at " + std::to_string(hi) +
                              " points");
        }
        hi = static_cast<std::size_t>(std::ceil(hi * 1.05)) + 1;
        grid.points = make_points(hi);
    }
    if (admissible) {
        for (const auto& point : grid.points) {
            if (!admissible(point)) {
                throw DomainError(
                    "sphere_grid: a generated point violates the interior constraints; "
                    "shrink epsilon");
            }
        }
    }
    return grid;
}

std::vector<Eigen::VectorXd> ball_sample(Model model, const Eigen::VectorXd& theta0,
                                         double epsilon, int count) {
    validate_interior_vector(model, theta0);
    const int dim = static_cast<int>(theta0.size());
    const Eigen::VectorXd alpha = kronecker_alpha(dim + 1);
    std::vector<Eigen::VectorXd> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        const Eigen::VectorXd u = kronecker_point(alpha, i);
        const Eigen::VectorXd direction = unit_direction(u.head(dim));
        const double radius = 0.95 * epsilon * std::pow(u[dim], 1.0 / dim);
        Eigen::VectorXd point = theta0 + radius * direction;
        require_interior(model, point, "ball_sample");
        out.push_back(std::move(point));
    }
    return out;
}

std::vector<Eigen::VectorXd> sphere_sample(Model model, const Eigen::VectorXd& theta0,
                                           double epsilon, int count) {
    validate_interior_vector(model, theta0);
    const int dim = static_cast<int>(theta0.size());
    const Eigen::VectorXd alpha = kronecker_alpha(dim);
    std::vector<Eigen::VectorXd> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        const Eigen::VectorXd direction = unit_direction(kronecker_point(alpha, i));
        Eigen::VectorXd point = theta0 + epsilon * direction;
        require_interior(model, point, "sphere_sample");
        out.push_back(std::move(point));
    }
    return out;
}

SubsetKind subset_from_name(const std::string& name) {
    if (name == "A1" || name == "a1") return SubsetKind::A1;
    if (name == "A2" || name == "a2") return SubsetKind::A2;
    throw ConfigError("unknown subset '" + name + "' (expected A1 or A2)");
}

std::string subset_name(SubsetKind which) { return which == SubsetKind::A1 ? "A1" : "A2"; }

bool SubsetSpec::contains(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0) const {
    const double half = epsilon / 2.0;
    if (model == Model::Lmm) {
        if (theta.size() != LmmParams::kDim || theta0.size() != LmmParams::kDim) {
            throw ContractError("SubsetSpec(lmm): expected 7-dimensional parameters");
        }
        if (which == SubsetKind::A1) {
            return (theta.head(2) - theta0.head(2)).norm() >= half;
        }
        return (theta.tail(5) - theta0.tail(5)).norm() >= half;
    }
    if (model == Model::Mglmm) {
        const int p = static_cast<int>((theta.size() - 1) / 2);
        const double dvar = std::abs(theta[2 * p] - theta0[2 * p]);
        const double dbeta2 = (theta.segment(p, p) - theta0.segment(p, p)).norm();
        const double z = effective_zeta();
        if (which == SubsetKind::A2) return dvar <= z && dbeta2 >= half;
        return dvar >= z || dbeta2 <= half;
    }
    throw ConfigError("SubsetSpec: subsets are defined for lmm and mglmm only");
}

std::vector<std::size_t> restrict_grid(const SphereGrid& grid, const SubsetSpec& spec) {
    std::vector<std::size_t> indices;
    for (std::size_t k = 0; k < grid.points.size(); ++k) {
        if (spec.contains(grid.points[k], grid.center)) indices.push_back(k);
    }
    if (indices.empty()) {
        throw ConfigError("restrict_grid: no grid point lies in " + subset_name(spec.which));
    }
    return indices;
}

bool subsets_cover_grid(const SphereGrid& grid, double zeta) {
    SubsetSpec a1{grid.model, SubsetKind::A1, grid.radius, zeta};
    SubsetSpec a2{grid.model, SubsetKind::A2, grid.radius, zeta};
    for (const auto& point : grid.points) {
        if (!a1.contains(point, grid.center) && !a2.contains(point, grid.center)) return false;
    }
    return true;
}

}  // namespace subsetmle
