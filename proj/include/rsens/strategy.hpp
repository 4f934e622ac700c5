#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rsens/market_model.hpp"

namespace rsens {

enum class StrategyFamily { constant, piecewise, feedback };

std::string to_string(StrategyFamily f);
StrategyFamily strategy_family_from_string(const std::string& s);

// Feature map used by the feedback family: {1, x, s_i, s_i s_j (i <= j)}.
std::size_t feedback_basis_size(std::size_t d);
void feedback_basis(double x, std::span<const double> s, std::span<double> out);

class Strategy {
public:
    Strategy() = default;

    static Strategy constant(std::vector<double> value, ConstraintSet constraint, double horizon = 1.0);
    // One vector per time cell; theta is cells x d.
    static Strategy piecewise(std::size_t cells, std::vector<double> theta, ConstraintSet constraint,
                              double horizon);
    // Per time cell, h_i = sum_j theta[cell][j][i] phi_j(x, s).
    static Strategy feedback(std::size_t cells, std::vector<double> theta, ConstraintSet constraint,
                             double horizon);

    StrategyFamily family() const { return family_; }
    std::size_t dim() const { return constraint_.dim; }
    std::size_t cells() const { return cells_; }
    double horizon() const { return horizon_; }
    const std::vector<double>& theta() const { return theta_; }
    const ConstraintSet& constraint() const { return constraint_; }
    std::string id() const;

    Strategy with_theta(std::vector<double> theta) const;
    // Same policy with constant and piecewise parameters projected onto a
    // constant constraint set; other strategies are returned unchanged.
    Strategy canonical() const;

    // Unprojected value.
    void raw(double t, double x, std::span<const double> s, std::span<double> out) const;
    // Projected value; returns true when the projection was active.
    bool evaluate(double t, double x, std::span<const double> s, std::span<double> out) const;
    std::vector<double> evaluate(double t, double x, std::span<const double> s) const;

private:
    std::size_t cell_of(double t) const;

    StrategyFamily family_ = StrategyFamily::constant;
    std::size_t cells_ = 1;
    double horizon_ = 1.0;
    std::vector<double> theta_;
    ConstraintSet constraint_;
};

Strategy perturb_parameters(const Strategy& strategy, std::span<const double> direction, double step);

}  // namespace rsens
