#include "swe4dvar/grid_state.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "swe4dvar/errors.hpp"

namespace swe4dvar {

std::string_view variable_name(Variable var) {
    switch (var) {
        case Variable::H: return "h";
        case Variable::U: return "u";
        case Variable::V: return "v";
    }
    return "?";
}

Variable parse_variable(std::string_view name) {
    if (name == "h") return Variable::H;
    if (name == "u") return Variable::U;
    if (name == "v") return Variable::V;
    throw ConfigError("unknown variable '" + std::string(name) + "'");
}

Grid make_grid(std::size_t q, double domain_min, double domain_max) {
    if (q < 3) {
        throw InvalidDimensionError("grid needs at least 3 points per axis, got " + std::to_string(q));
    }
    if (!std::isfinite(domain_min) || !std::isfinite(domain_max) || !(domain_max > domain_min)) {
        throw InvalidDimensionError("empty or non-finite domain");
    }
    Grid grid;
    grid.q_ = q;
    grid.domain_min_ = domain_min;
    grid.domain_max_ = domain_max;
    grid.dx_ = (domain_max - domain_min) / static_cast<double>(q);
    return grid;
}

std::size_t state_index(const Grid& grid, Variable var, std::size_t i, std::size_t j) {
    const std::size_t q = grid.q();
    if (i >= q || j >= q) {
        throw IndexOutOfRangeError("cell (" + std::to_string(i) + ", " + std::to_string(j) +
                                   ") outside a " + std::to_string(q) + "x" + std::to_string(q) + " grid");
    }
    return static_cast<std::size_t>(var) * q * q + i * q + j;
}

CellIndex decode_index(const Grid& grid, std::size_t flat) {
    const std::size_t q = grid.q();
    if (flat >= grid.state_size()) {
        throw IndexOutOfRangeError("flat index " + std::to_string(flat) + " outside state of size " +
                                   std::to_string(grid.state_size()));
    }
    const std::size_t cell = flat % (q * q);
    return {static_cast<Variable>(flat / (q * q)), cell / q, cell % q};
}

StateVector::StateVector(const Grid& grid)
    : grid_(grid), values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.state_size()))) {}

StateVector::StateVector(const Grid& grid, Eigen::VectorXd values) : grid_(grid), values_(std::move(values)) {
    if (static_cast<std::size_t>(values_.size()) != grid_.state_size()) {
        throw ShapeMismatchError("state has " + std::to_string(values_.size()) + " entries, grid expects " +
                                 std::to_string(grid_.state_size()));
    }
}

double StateVector::at(Variable var, std::size_t i, std::size_t j) const {
    return values_[static_cast<Eigen::Index>(state_index(grid_, var, i, j))];
}

double& StateVector::at(Variable var, std::size_t i, std::size_t j) {
    return values_[static_cast<Eigen::Index>(state_index(grid_, var, i, j))];
}

FieldSlice StateVector::field(Variable var) {
    const std::size_t n = grid_.cell_count();
    return FieldSlice(var, grid_.q(), std::span<double>(values_.data() + static_cast<std::size_t>(var) * n, n));
}

ConstFieldSlice StateVector::field(Variable var) const {
    const std::size_t n = grid_.cell_count();
    return ConstFieldSlice(var, grid_.q(),
                           std::span<const double>(values_.data() + static_cast<std::size_t>(var) * n, n));
}

bool StateVector::all_finite() const { return values_.allFinite(); }

StateVector make_rest_state(const Grid& grid, double height) {
    StateVector state(grid);
    for (double& h : state.field(Variable::H).data()) h = height;
    return state;
}

namespace {

void append_real(std::string& out, double value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
    out.append(buf, res.ptr);
}

constexpr std::string_view kHeader = "x,y,h,u,v";

struct ParsedRow {
    std::array<double, 5> values;
};

// Candidate domain bounds around an estimate: the value rounded to 15 significant
// digits first, then neighbouring doubles.
std::vector<double> bound_candidates(double estimate) {
    std::vector<double> out;
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), estimate, std::chars_format::general, 15);
    double rounded = estimate;
    std::from_chars(buf, res.ptr, rounded);
    out.push_back(rounded);
    out.push_back(estimate);
    double lo = estimate;
    double hi = estimate;
    for (int k = 0; k < 8; ++k) {
        lo = std::nextafter(lo, -std::numeric_limits<double>::infinity());
        hi = std::nextafter(hi, std::numeric_limits<double>::infinity());
        out.push_back(lo);
        out.push_back(hi);
    }
    return out;
}

bool coordinates_match(const Grid& grid, const std::vector<ParsedRow>& rows) {
    const std::size_t q = grid.q();
    for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            const auto& r = rows[i * q + j].values;
            if (r[0] != grid.center(i) || r[1] != grid.center(j)) return false;
        }
    }
    return true;
}

std::optional<Grid> recover_grid(std::size_t q, const std::vector<ParsedRow>& rows) {
    const double first = rows.front().values[0];
    const double last = rows.back().values[0];
    const double spacing = (last - first) / static_cast<double>(q - 1);
    if (!(spacing > 0.0)) return std::nullopt;
    const double lo_est = first - 0.5 * spacing;
    const double hi_est = last + 0.5 * spacing;
    for (double lo : bound_candidates(lo_est)) {
        for (double hi : bound_candidates(hi_est)) {
            if (!(hi > lo)) continue;
            Grid grid = make_grid(q, lo, hi);
            if (coordinates_match(grid, rows)) return grid;
        }
    }
    return std::nullopt;
}

}  // namespace

std::string encode_field_csv(const StateVector& state) {
    const Grid& grid = state.grid();
    const std::size_t q = grid.q();
    std::string out;
    out.reserve(grid.cell_count() * 5 * 26 + 16);
    out.append(kHeader);
    out.push_back('\n');
    for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            append_real(out, grid.center(i));
            out.push_back(',');
            append_real(out, grid.center(j));
            for (Variable var : kAllVariables) {
                out.push_back(',');
                append_real(out, state.at(var, i, j));
            }
            out.push_back('\n');
        }
    }
    return out;
}

StateVector decode_field_csv(std::string_view text) {
    std::vector<ParsedRow> rows;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!header_seen) {
            if (line != kHeader) throw ParseError("expected header '" + std::string(kHeader) + "'", line_no, 1);
            header_seen = true;
            continue;
        }
        if (line.empty()) {
            if (pos >= text.size()) break;
            throw ParseError("empty data row", line_no, 1);
        }
        ParsedRow row{};
        std::size_t start = 0;
        for (std::size_t field = 0; field < 5; ++field) {
            std::size_t comma = line.find(',', start);
            const bool last_field = field == 4;
            if (last_field != (comma == std::string_view::npos)) {
                throw ParseError(last_field ? "too many columns" : "too few columns", line_no, start + 1);
            }
            if (comma == std::string_view::npos) comma = line.size();
            std::string_view token = line.substr(start, comma - start);
            double value = 0.0;
            auto res = std::from_chars(token.data(), token.data() + token.size(), value);
            if (token.empty() || res.ec != std::errc() || res.ptr != token.data() + token.size() ||
                !std::isfinite(value)) {
                throw ParseError("malformed number '" + std::string(token) + "'", line_no, start + 1);
            }
            row.values[field] = value;
            start = comma + 1;
        }
        rows.push_back(row);
    }
    if (!header_seen) throw ParseError("missing header", 1, 1);

    const auto q = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(rows.size()))));
    if (q < 3 || q * q != rows.size()) {
        throw ParseError("row count " + std::to_string(rows.size()) + " is not a square grid of side >= 3",
                         line_no, 1);
    }
    std::optional<Grid> grid = recover_grid(q, rows);
    if (!grid) throw ParseError("coordinates do not describe a uniform cell-centered grid", 2, 1);

    StateVector state(*grid);
    for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            const auto& r = rows[i * q + j].values;
            state.at(Variable::H, i, j) = r[2];
            state.at(Variable::U, i, j) = r[3];
            state.at(Variable::V, i, j) = r[4];
        }
    }
    return state;
}

}  // namespace swe4dvar
