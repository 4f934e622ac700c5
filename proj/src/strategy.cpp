#include "rsens/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rsens {

std::string to_string(StrategyFamily f) {
    switch (f) {
        case StrategyFamily::constant: return "constant";
        case StrategyFamily::piecewise: return "piecewise";
        case StrategyFamily::feedback: return "feedback";
    }
    return "constant";
}

StrategyFamily strategy_family_from_string(const std::string& s) {
    if (s == "constant") return StrategyFamily::constant;
    if (s == "piecewise") return StrategyFamily::piecewise;
    if (s == "feedback") return StrategyFamily::feedback;
    throw ConfigError("unknown strategy family '" + s + "'");
}

std::size_t feedback_basis_size(std::size_t d) { return 2 + d + d * (d + 1) / 2; }

void feedback_basis(double x, std::span<const double> s, std::span<double> out) {
    const std::size_t d = s.size();
    std::size_t j = 0;
    out[j++] = 1.0;
    out[j++] = x;
    for (std::size_t i = 0; i < d; ++i) out[j++] = s[i];
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t l = i; l < d; ++l) out[j++] = s[i] * s[l];
}

namespace {

std::size_t expected_size(StrategyFamily f, std::size_t cells, std::size_t d) {
    switch (f) {
        case StrategyFamily::constant: return d;
        case StrategyFamily::piecewise: return cells * d;
        case StrategyFamily::feedback: return cells * feedback_basis_size(d) * d;
    }
    return d;
}

}  // namespace

Strategy Strategy::constant(std::vector<double> value, ConstraintSet constraint, double horizon) {
    if (value.size() != constraint.dim) throw ShapeError("constant strategy has the wrong dimension");
    Strategy s;
    s.family_ = StrategyFamily::constant;
    s.cells_ = 1;
    s.horizon_ = horizon;
    s.theta_ = std::move(value);
    s.constraint_ = std::move(constraint);
    return s;
}

Strategy Strategy::piecewise(std::size_t cells, std::vector<double> theta, ConstraintSet constraint, double horizon) {
    if (cells == 0) throw ConfigError("piecewise strategy needs at least one cell");
    if (theta.size() != expected_size(StrategyFamily::piecewise, cells, constraint.dim))
        throw ShapeError("piecewise strategy theta has the wrong size");
    Strategy s;
    s.family_ = StrategyFamily::piecewise;
    s.cells_ = cells;
    s.horizon_ = horizon;
    s.theta_ = std::move(theta);
    s.constraint_ = std::move(constraint);
    return s;
}

Strategy Strategy::feedback(std::size_t cells, std::vector<double> theta, ConstraintSet constraint, double horizon) {
    if (cells == 0) throw ConfigError("feedback strategy needs at least one cell");
    if (theta.size() != expected_size(StrategyFamily::feedback, cells, constraint.dim))
        throw ShapeError("feedback strategy theta has the wrong size");
    Strategy s;
    s.family_ = StrategyFamily::feedback;
    s.cells_ = cells;
    s.horizon_ = horizon;
    s.theta_ = std::move(theta);
    s.constraint_ = std::move(constraint);
    return s;
}

std::string Strategy::id() const {
    std::ostringstream os;
    os.precision(17);
    os << to_string(family_) << '[';
    for (std::size_t i = 0; i < theta_.size(); ++i) os << (i ? "," : "") << theta_[i];
    os << ']';
    return os.str();
}

Strategy Strategy::with_theta(std::vector<double> theta) const {
    if (theta.size() != theta_.size()) throw ShapeError("parameter vector has the wrong size");
    Strategy s = *this;
    s.theta_ = std::move(theta);
    return s;
}

Strategy Strategy::canonical() const {
    if (family_ == StrategyFamily::feedback || !constraint_.constant) return *this;
    Strategy s = *this;
    const std::size_t d = dim();
    const std::vector<double> origin(d, 0.0);
    for (std::size_t c = 0; c < cells_; ++c)
        constraint_.project(0.0, 0.0, origin, {s.theta_.data() + c * d, d});
    return s;
}

std::size_t Strategy::cell_of(double t) const {
    if (cells_ == 1) return 0;
    const double u = t / horizon_ * static_cast<double>(cells_);
    const auto c = static_cast<std::size_t>(std::max(0.0, std::floor(u + 1e-12)));
    return std::min(c, cells_ - 1);
}

void Strategy::raw(double t, double x, std::span<const double> s, std::span<double> out) const {
    const std::size_t d = dim();
    switch (family_) {
        case StrategyFamily::constant:
            std::copy(theta_.begin(), theta_.end(), out.begin());
            return;
        case StrategyFamily::piecewise: {
            const std::size_t c = cell_of(t);
            std::copy(theta_.begin() + c * d, theta_.begin() + (c + 1) * d, out.begin());
            return;
        }
        case StrategyFamily::feedback: {
            const std::size_t m = feedback_basis_size(d);
            double phi[2 + 16 + 136];
            feedback_basis(x, s, {phi, m});
            const double* th = theta_.data() + cell_of(t) * m * d;
            for (std::size_t i = 0; i < d; ++i) out[i] = 0.0;
            for (std::size_t j = 0; j < m; ++j)
                for (std::size_t i = 0; i < d; ++i) out[i] += th[j * d + i] * phi[j];
            return;
        }
    }
}

bool Strategy::evaluate(double t, double x, std::span<const double> s, std::span<double> out) const {
    raw(t, x, s, out);
    return constraint_.project(t, x, s, out);
}

std::vector<double> Strategy::evaluate(double t, double x, std::span<const double> s) const {
    std::vector<double> h(dim());
    evaluate(t, x, s, h);
    return h;
}

Strategy perturb_parameters(const Strategy& strategy, std::span<const double> direction, double step) {
    if (direction.size() != strategy.theta().size()) throw ShapeError("direction has the wrong dimension");
    std::vector<double> theta = strategy.theta();
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += step * direction[i];
    return strategy.with_theta(std::move(theta));
}

}  // namespace rsens
