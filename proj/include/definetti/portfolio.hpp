#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "definetti/common.hpp"
#include "definetti/empirical.hpp"
#include "definetti/rng.hpp"

namespace definetti {

/// m x n nonnegative loss samples with atom weights: the empirical law of the
/// risk vector X. Column i is risk i.
struct SampleMatrix {
    Matrix data;                  // losses, m x n
    std::vector<double> weights;  // m, nonnegative, sums to 1

    std::size_t samples() const { return data.rows; }
    std::size_t risks() const { return data.cols; }

    static SampleMatrix uniform(Matrix m) {
        SampleMatrix x;
        x.weights.assign(m.rows, 1.0 / static_cast<double>(m.rows));
        x.data = std::move(m);
        return x;
    }

    void validate() const {
        if (data.rows == 0 || data.cols == 0)
            throw data_error("sample matrix must have at least one sample and one risk");
        if (weights.size() != data.rows)
            throw data_error("sample matrix: weight count does not match sample count");
        for (double x : data.data) {
            if (!(x >= 0.0)) throw data_error("sample matrix: negative or non-finite loss");
        }
        NeumaierSum total;
        for (double w : weights) {
            if (!(w >= 0.0)) throw data_error("sample matrix: negative weight");
            total.add(w);
        }
        if (std::abs(total.value() - 1.0) > 1e-12)
            throw data_error("sample matrix: weights do not sum to 1");
    }

    /// Column i as a weighted empirical variable.
    EmpiricalVariable risk_column(std::size_t i) const {
        EmpiricalVariable v;
        v.values.resize(data.rows);
        for (std::size_t s = 0; s < data.rows; ++s) v.values[s] = data(s, i);
        v.weights = weights;
        return v;
    }

    /// Per-sample total loss S as a weighted empirical variable.
    EmpiricalVariable total_loss() const {
        EmpiricalVariable v;
        v.values.resize(data.rows);
        for (std::size_t s = 0; s < data.rows; ++s) {
            NeumaierSum row;
            for (std::size_t i = 0; i < data.cols; ++i) row.add(data(s, i));
            v.values[s] = row.value();
        }
        v.weights = weights;
        return v;
    }
};

struct GammaSpec {
    double shape = 1.0;
    double rate = 1.0;
};

struct ShiftedParetoSpec {
    double threshold = 1.0;
    double tail_exponent = 2.0;
};

using DistributionSpec = std::variant<GammaSpec, ShiftedParetoSpec>;

/// Portfolio definition: loadings, confidence level, and the sample source
/// (parametric risk list or an external CSV).
struct PortfolioSpec {
    std::vector<double> loadings;
    double alpha = 0.0;  // required only for cvar/var measures
    std::vector<DistributionSpec> risks;
    std::string sample_file;  // used instead of `risks` when nonempty
    std::uint64_t seed = 0;
    std::size_t sample_count = 0;

    void validate() const {
        if (loadings.empty()) throw config_error("portfolio needs at least one loading");
        for (double b : loadings) {
            if (!(b > 0.0))
                throw config_error(
                    "loadings must be strictly positive: with a zero loading, full cession "
                    "of that risk is optimal and the problem degenerates");
        }
        const bool parametric = !risks.empty();
        const bool from_file = !sample_file.empty();
        if (parametric == from_file)
            throw config_error("portfolio needs exactly one sample source (risks or file)");
        if (parametric) {
            if (risks.size() != loadings.size())
                throw config_error("one distribution per loading is required");
            if (sample_count == 0) throw config_error("sample_count must be positive");
            for (const auto& r : risks) {
                if (const auto* g = std::get_if<GammaSpec>(&r)) {
                    if (!(g->shape > 0.0) || !(g->rate > 0.0))
                        throw config_error("gamma parameters must be positive");
                } else if (const auto* p = std::get_if<ShiftedParetoSpec>(&r)) {
                    if (!(p->threshold > 0.0))
                        throw config_error("pareto threshold must be positive");
                    if (!(p->tail_exponent > 1.0))
                        throw config_error("pareto tail exponent must exceed 1 (finite mean)");
                }
            }
        }
    }
};

/// m i.i.d. Gamma(shape, rate) draws from the stream keyed by `seed`.
inline std::vector<double> sample_gamma(double shape, double rate, std::size_t m,
                                        std::uint64_t seed) {
    if (!(shape > 0.0) || !(rate > 0.0))
        throw config_error("gamma parameters must be positive");
    RandomStream stream(seed);
    std::vector<double> out(m);
    for (double& x : out) x = stream.gamma(shape, rate);
    return out;
}

/// m i.i.d. shifted-Pareto draws (density h t^h (x+t)^{-(h+1)}, x >= 0).
inline std::vector<double> sample_shifted_pareto(double threshold, double tail_exponent,
                                                 std::size_t m, std::uint64_t seed) {
    if (!(threshold > 0.0)) throw config_error("pareto threshold must be positive");
    if (!(tail_exponent > 1.0))
        throw config_error("pareto tail exponent must exceed 1: the mean is infinite otherwise");
    RandomStream stream(seed);
    std::vector<double> out(m);
    for (double& x : out) x = stream.shifted_pareto(threshold, tail_exponent);
    return out;
}

namespace detail {

inline double parse_double(const std::string& field, std::size_t line_no) {
    double out = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    const auto res = std::from_chars(first, last, out);
    if (res.ec != std::errc{} || res.ptr != last)
        throw data_error("sample file: malformed number '" + field + "' on line " +
                         std::to_string(line_no));
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace detail

/// Reads a sample CSV: header `X1,...,Xn` with an optional trailing `weight`
/// column, one sample per row. Weights are renormalized to sum to 1.
inline SampleMatrix load_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open sample file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw data_error("sample file is empty: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = detail::split_csv_line(line);
    if (header.empty()) throw data_error("sample file has an empty header: " + path);
    bool has_weight = header.back() == "weight";
    const std::size_t n = header.size() - (has_weight ? 1 : 0);
    if (n == 0) throw data_error("sample file has no risk columns: " + path);
    for (std::size_t i = 0; i < n; ++i) {
        if (header[i] != "X" + std::to_string(i + 1))
            throw data_error("sample file header must be X1,...,Xn[,weight]; got '" +
                             header[i] + "'");
    }

    std::vector<double> flat;
    std::vector<double> weights;
    std::size_t m = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw data_error("sample file: ragged row on line " + std::to_string(line_no));
        for (std::size_t i = 0; i < n; ++i) {
            const double x = detail::parse_double(fields[i], line_no);
            if (!(x >= 0.0))
                throw data_error("sample file: negative loss on line " + std::to_string(line_no));
            flat.push_back(x);
        }
        if (has_weight) {
            const double w = detail::parse_double(fields[n], line_no);
            if (!(w >= 0.0))
                throw data_error("sample file: negative weight on line " +
                                 std::to_string(line_no));
            weights.push_back(w);
        }
        ++m;
    }
    if (m == 0) throw data_error("sample file has no data rows: " + path);

    SampleMatrix x;
    x.data.rows = m;
    x.data.cols = n;
    x.data.data = std::move(flat);
    if (has_weight) {
        NeumaierSum total;
        for (double w : weights) total.add(w);
        if (!(total.value() > 0.0)) throw data_error("sample file: weights sum to zero");
        for (double& w : weights) w /= total.value();
        x.weights = std::move(weights);
    } else {
        x.weights.assign(m, 1.0 / static_cast<double>(m));
    }
    x.validate();
    return x;
}

/// Writes a sample CSV in the load_samples format. The weight column is
/// emitted only for non-uniform weights.
inline void save_samples(const std::string& path, const SampleMatrix& x) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write sample file: " + path);
    bool uniform = true;
    for (double w : x.weights) uniform = uniform && w == x.weights[0];

    for (std::size_t i = 0; i < x.risks(); ++i) out << (i ? "," : "") << "X" << (i + 1);
    if (!uniform) out << ",weight";
    out << "\n";

    char buf[32];
    for (std::size_t s = 0; s < x.samples(); ++s) {
        for (std::size_t i = 0; i < x.risks(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", x.data(s, i));
            out << (i ? "," : "") << buf;
        }
        if (!uniform) {
            std::snprintf(buf, sizeof(buf), "%.17g", x.weights[s]);
            out << "," << buf;
        }
        out << "\n";
    }
    if (!out) throw data_error("failed writing sample file: " + path);
}

/// Materializes the portfolio's sample matrix: column i is drawn from risk
/// i's distribution on substream i of the master seed, or the whole matrix is
/// read from the configured file.
inline SampleMatrix build_portfolio(const PortfolioSpec& spec) {
    spec.validate();
    if (!spec.sample_file.empty()) {
        SampleMatrix x = load_samples(spec.sample_file);
        if (x.risks() != spec.loadings.size())
            throw config_error("sample file risk count does not match loadings");
        return x;
    }

    const std::size_t m = spec.sample_count;
    const std::size_t n = spec.risks.size();
    Matrix data(m, n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t col_seed = substream_seed(spec.seed, i);
        std::vector<double> col;
        if (const auto* g = std::get_if<GammaSpec>(&spec.risks[i])) {
            col = sample_gamma(g->shape, g->rate, m, col_seed);
        } else {
            const auto& p = std::get<ShiftedParetoSpec>(spec.risks[i]);
            col = sample_shifted_pareto(p.threshold, p.tail_exponent, m, col_seed);
        }
        for (std::size_t s = 0; s < m; ++s) data(s, i) = col[s];
    }
    return SampleMatrix::uniform(std::move(data));
}

}  // namespace definetti
