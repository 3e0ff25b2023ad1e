#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace swe4dvar {

enum class Variable { H = 0, U = 1, V = 2 };

inline constexpr std::array<Variable, 3> kAllVariables{Variable::H, Variable::U, Variable::V};

std::string_view variable_name(Variable var);
Variable parse_variable(std::string_view name);

/// Square, periodic, cell-centered grid on [domain_min, domain_max]^2.
class Grid {
public:
    Grid() = default;

    std::size_t q() const noexcept { return q_; }
    double domain_min() const noexcept { return domain_min_; }
    double domain_max() const noexcept { return domain_max_; }
    double dx() const noexcept { return dx_; }
    double dy() const noexcept { return dx_; }

    std::size_t cell_count() const noexcept { return q_ * q_; }
    /// Number of state variables, 3 q^2.
    std::size_t state_size() const noexcept { return 3 * q_ * q_; }

    /// Cell-center coordinate along x of column i (and along y of row j, same formula).
    double center(std::size_t i) const noexcept {
        return domain_min_ + (static_cast<double>(i) + 0.5) * dx_;
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    friend Grid make_grid(std::size_t q, double domain_min, double domain_max);

    std::size_t q_ = 0;
    double domain_min_ = 0.0;
    double domain_max_ = 0.0;
    double dx_ = 0.0;
};

/// Throws InvalidDimensionError for q < 3 or an empty domain.
Grid make_grid(std::size_t q, double domain_min, double domain_max);

/// Flat index of (variable, i, j): variable-major, row-major within a field (i along x, j along y).
std::size_t state_index(const Grid& grid, Variable var, std::size_t i, std::size_t j);

struct CellIndex {
    Variable variable;
    std::size_t i;
    std::size_t j;
};

/// Inverse of state_index.
CellIndex decode_index(const Grid& grid, std::size_t flat);

/// Mutable q x q view of one variable inside a StateVector.
template <typename Scalar>
class BasicFieldSlice {
public:
    BasicFieldSlice(Variable var, std::size_t q, std::span<Scalar> data) : var_(var), q_(q), data_(data) {}

    Variable variable() const noexcept { return var_; }
    std::size_t q() const noexcept { return q_; }
    Scalar& operator()(std::size_t i, std::size_t j) const { return data_[i * q_ + j]; }
    std::span<Scalar> data() const noexcept { return data_; }

private:
    Variable var_;
    std::size_t q_;
    std::span<Scalar> data_;
};

using FieldSlice = BasicFieldSlice<double>;
using ConstFieldSlice = BasicFieldSlice<const double>;

/// Flattened (h, u, v) model state on a grid.
class StateVector {
public:
    StateVector() = default;
    /// Zero state on the grid.
    explicit StateVector(const Grid& grid);
    /// Throws ShapeMismatchError if values.size() != 3 q^2.
    StateVector(const Grid& grid, Eigen::VectorXd values);

    const Grid& grid() const noexcept { return grid_; }
    const Eigen::VectorXd& values() const noexcept { return values_; }
    Eigen::VectorXd& values() noexcept { return values_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }

    double operator[](std::size_t k) const { return values_[static_cast<Eigen::Index>(k)]; }
    double& operator[](std::size_t k) { return values_[static_cast<Eigen::Index>(k)]; }

    double at(Variable var, std::size_t i, std::size_t j) const;
    double& at(Variable var, std::size_t i, std::size_t j);

    FieldSlice field(Variable var);
    ConstFieldSlice field(Variable var) const;

    bool all_finite() const;

private:
    Grid grid_;
    Eigen::VectorXd values_;
};

/// Uniform state h = height, u = v = 0.
StateVector make_rest_state(const Grid& grid, double height);

/// Serializes as "x,y,h,u,v" rows, one per cell, 17 significant digits, LF line endings.
std::string encode_field_csv(const StateVector& state);

/// Inverse of encode_field_csv; the grid is recovered from the coordinate columns.
/// Throws ParseError with the row/column of the first malformed token.
StateVector decode_field_csv(std::string_view text);

}  // namespace swe4dvar
