#include "subsetmle/params.hpp"

#include <cmath>

#include "subsetmle/errors.hpp"

namespace subsetmle {

std::string model_name(Model m) {
    switch (m) {
        case Model::Lmm: return "lmm";
        case Model::Mglmm: return "mglmm";
        case Model::Toy: return "toy";
    }
    return "unknown";
}

Model model_from_name(const std::string& name) {
    if (name == "lmm") return Model::Lmm;
    if (name == "mglmm") return Model::Mglmm;
    if (name == "toy") return Model::Toy;
    throw ConfigError("unknown model '" + name + "' (expected lmm, mglmm or toy)");
}

Eigen::VectorXd LmmParams::to_vector() const {
    Eigen::VectorXd v(kDim);
    v << theta1, theta2, theta3, theta4, theta5, theta6, theta7;
    return v;
}

LmmParams LmmParams::from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() != kDim) {
        throw ContractError("LmmParams::from_vector: expected 7 components, got " +
                            std::to_string(v.size()));
    }
    return LmmParams{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

void LmmParams::validate() const {
    const double vars[] = {theta3, theta4, theta5, theta6};
    const char* names[] = {"theta3", "theta4", "theta5", "theta6"};
    for (int k = 0; k < 4; ++k) {
        if (!(vars[k] > 0.0) || !std::isfinite(vars[k])) {
            throw DomainError(std::string(names[k]) + " must be strictly positive, got " +
                              std::to_string(vars[k]));
        }
    }
    if (!(std::abs(theta7) < 1.0)) {
        throw DomainError("theta7 must lie in (-1, 1), got " + std::to_string(theta7));
    }
    if (!std::isfinite(theta1) || !std::isfinite(theta2)) {
        throw DomainError("theta1/theta2 must be finite");
    }
}

bool LmmParams::is_interior() const {
    return theta3 > 0.0 && theta4 > 0.0 && theta5 > 0.0 && theta6 > 0.0 &&
           std::abs(theta7) < 1.0 && std::isfinite(theta1) && std::isfinite(theta2) &&
           std::isfinite(theta3) && std::isfinite(theta4) && std::isfinite(theta5) &&
           std::isfinite(theta6);
}

Eigen::VectorXd MglmmParams::to_vector() const {
    Eigen::VectorXd v(dim());
    v.head(p()) = beta1;
    v.segment(p(), p()) = beta2;
    v[dim() - 1] = theta_d;
    return v;
}

MglmmParams MglmmParams::from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() < 3 || v.size() % 2 == 0) {
        throw ContractError("MglmmParams::from_vector: length must be odd and >= 3, got " +
                            std::to_string(v.size()));
    }
    const int p = static_cast<int>((v.size() - 1) / 2);
    MglmmParams out;
    out.beta1 = v.head(p);
    out.beta2 = v.segment(p, p);
    out.theta_d = v[v.size() - 1];
    return out;
}

void MglmmParams::validate() const {
    if (beta1.size() != beta2.size() || beta1.size() == 0) {
        throw ContractError("beta1 and beta2 must have equal, positive length");
    }
    if (!(theta_d > 0.0) || !std::isfinite(theta_d)) {
        throw DomainError("theta_d must be strictly positive, got " + std::to_string(theta_d));
    }
    if (!beta1.allFinite() || !beta2.allFinite()) {
        throw DomainError("beta coefficients must be finite");
    }
}

bool MglmmParams::is_interior() const {
    return beta1.size() == beta2.size() && beta1.size() > 0 && theta_d > 0.0 &&
           std::isfinite(theta_d) && beta1.allFinite() && beta2.allFinite();
}

int param_dim(Model model, int p) {
    switch (model) {
        case Model::Lmm: return LmmParams::kDim;
        case Model::Mglmm: return 2 * p + 1;
        case Model::Toy: return 1;
    }
    return 0;
}

bool is_interior_vector(Model model, const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (!v.allFinite()) return false;
    switch (model) {
        case Model::Lmm:
            return v.size() == LmmParams::kDim && LmmParams::from_vector(v).is_interior();
        case Model::Mglmm:
            return v.size() >= 3 && v.size() % 2 == 1 && v[v.size() - 1] > 0.0;
        case Model::Toy:
            return v.size() == 1;
    }
    return false;
}

void validate_interior_vector(Model model, const Eigen::Ref<const Eigen::VectorXd>& v) {
    switch (model) {
        case Model::Lmm:
            LmmParams::from_vector(v).validate();
            return;
        case Model::Mglmm:
            MglmmParams::from_vector(v).validate();
            return;
        case Model::Toy:
            if (v.size() != 1 || !v.allFinite()) throw DomainError("toy mean must be finite scalar");
            return;
    }
}

}  // namespace subsetmle
