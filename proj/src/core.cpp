#include "ctxattr/core.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ctxattr {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::EntryOutOfRange: return "EntryOutOfRange";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::CoalitionBudgetExceeded: return "CoalitionBudgetExceeded";
        case ErrorCode::BackendFailure: return "BackendFailure";
        case ErrorCode::SingularSystem: return "SingularSystem";
        case ErrorCode::DegenerateBase: return "DegenerateBase";
        case ErrorCode::InsufficientQueries: return "InsufficientQueries";
        case ErrorCode::TooFewSolutions: return "TooFewSolutions";
        case ErrorCode::EmptyQuestion: return "EmptyQuestion";
        case ErrorCode::EmptyIndex: return "EmptyIndex";
        case ErrorCode::Unparseable: return "Unparseable";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::IoFailure: return "IoFailure";
    }
    return "UnknownError";
}

namespace {

// Clamp dust within kUnitSlack of [0, 1]; reject anything further out.
Matrix clamp_unit_interval(const Matrix& values, const char* what) {
    Matrix out = values;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            double v = out(i, j);
            if (!std::isfinite(v) || v < -kUnitSlack || v > 1.0 + kUnitSlack) {
                std::ostringstream msg;
                msg << what << " entry (" << i << "," << j << ") = " << v
                    << " outside [0,1]";
                raise(ErrorCode::EntryOutOfRange, msg.str());
            }
            out(i, j) = std::min(1.0, std::max(0.0, v));
        }
    }
    return out;
}

}  // namespace

ProbabilityMatrix::ProbabilityMatrix(Matrix values, std::vector<std::string> row_labels,
                                     std::vector<std::string> query_ids)
    : values_(clamp_unit_interval(values, "probability matrix")),
      row_labels_(std::move(row_labels)),
      query_ids_(std::move(query_ids)) {
    if (static_cast<Eigen::Index>(row_labels_.size()) != values_.rows()) {
        raise(ErrorCode::ShapeMismatch,
              "row label count " + std::to_string(row_labels_.size()) + " vs " +
                  std::to_string(values_.rows()) + " rows");
    }
    if (static_cast<Eigen::Index>(query_ids_.size()) != values_.cols()) {
        raise(ErrorCode::ShapeMismatch,
              "query id count " + std::to_string(query_ids_.size()) + " vs " +
                  std::to_string(values_.cols()) + " columns");
    }
    if (values_.rows() < 1 || values_.cols() < 1) {
        raise(ErrorCode::ShapeMismatch, "matrix must have at least one row and one column");
    }
}

ProbabilityMatrix validate_probability_matrix(const Matrix& values,
                                              const std::vector<std::string>& row_labels,
                                              const std::vector<std::string>& query_ids) {
    return ProbabilityMatrix(values, row_labels, query_ids);
}

MixtureWeights::MixtureWeights(Vector pi) : pi_(std::move(pi)) {
    if (pi_.size() < 1) raise(ErrorCode::ShapeMismatch, "mixture weights cannot be empty");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pi_.size(); ++i) {
        if (!std::isfinite(pi_[i])) raise(ErrorCode::NonFiniteInput, "mixture weight not finite");
        if (pi_[i] < -kUnitSlack) {
            raise(ErrorCode::EntryOutOfRange,
                  "mixture weight " + std::to_string(pi_[i]) + " is negative");
        }
        pi_[i] = std::max(0.0, pi_[i]);
        sum += pi_[i];
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        raise(ErrorCode::EntryOutOfRange, "mixture weights sum to " + std::to_string(sum));
    }
}

MixtureWeights MixtureWeights::uniform(int k_plus_one) {
    return MixtureWeights(Vector::Constant(k_plus_one, 1.0 / k_plus_one));
}

LatentMatrix::LatentMatrix(Matrix values)
    : values_(clamp_unit_interval(values, "latent matrix")) {}

Coalition Coalition::of(std::initializer_list<int> members) {
    return of(std::vector<int>(members));
}

Coalition Coalition::of(const std::vector<int>& members) {
    std::uint32_t mask = 0;
    for (int k : members) {
        if (k < 1 || k > 32) raise(ErrorCode::OutOfRange, "dataset index " + std::to_string(k));
        mask |= 1u << (k - 1);
    }
    return Coalition(mask);
}

Coalition Coalition::with(int k) const {
    if (k < 1 || k > 32) raise(ErrorCode::OutOfRange, "dataset index " + std::to_string(k));
    return Coalition(mask_ | (1u << (k - 1)));
}

Coalition Coalition::without(int k) const {
    if (k < 1 || k > 32) raise(ErrorCode::OutOfRange, "dataset index " + std::to_string(k));
    return Coalition(mask_ & ~(1u << (k - 1)));
}

int Coalition::size() const { return std::popcount(mask_); }

std::vector<int> Coalition::members() const {
    std::vector<int> out;
    for (int k = 1; k <= 32; ++k) {
        if (contains(k)) out.push_back(k);
    }
    return out;
}

std::string Coalition::key() const {
    std::string out;
    for (int k : members()) {
        if (!out.empty()) out += ',';
        out += std::to_string(k);
    }
    return out;
}

Coalition Coalition::parse_key(const std::string& key) {
    if (key.empty()) return Coalition();
    std::vector<int> members;
    std::stringstream ss(key);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        int k = 0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), k);
        if (ec != std::errc() || ptr != tok.data() + tok.size()) {
            raise(ErrorCode::Unparseable, "bad coalition key '" + key + "'");
        }
        members.push_back(k);
    }
    return of(members);
}

CoalitionScoreTable::CoalitionScoreTable(std::map<Coalition, double> entries)
    : entries_(std::move(entries)) {
    if (entries_.count(Coalition()) == 0) {
        raise(ErrorCode::ShapeMismatch, "score table missing the empty coalition");
    }
    for (const auto& [coalition, score] : entries_) {
        if (!std::isfinite(score) || score < -kUnitSlack || score > 1.0 + kUnitSlack) {
            raise(ErrorCode::EntryOutOfRange,
                  "score " + std::to_string(score) + " for coalition '" + coalition.key() + "'");
        }
    }
}

double CoalitionScoreTable::score(const Coalition& s) const {
    auto it = entries_.find(s);
    if (it == entries_.end()) {
        raise(ErrorCode::OutOfRange, "no score for coalition '" + s.key() + "'");
    }
    return it->second;
}

void AttributionReport::validate() const {
    if (ci_lower.size() != scores.size() || ci_upper.size() != scores.size()) {
        raise(ErrorCode::ShapeMismatch, "CI vectors must match scores length");
    }
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        if (ci_lower[i] > scores[i] || scores[i] > ci_upper[i]) {
            raise(ErrorCode::EntryOutOfRange,
                  "score " + std::to_string(scores[i]) + " outside its CI at index " +
                      std::to_string(i));
        }
    }
    if (method == AttributionMethod::CMF) {
        MixtureWeights check{scores};  // throws if not on the simplex
    }
}

Vector simplex_project(const Vector& v) {
    const Eigen::Index n = v.size();
    if (n == 0) raise(ErrorCode::ShapeMismatch, "cannot project an empty vector");
    double sum = 0.0;
    bool nonneg = true;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(v[i])) raise(ErrorCode::NonFiniteInput, "projection input not finite");
        sum += v[i];
        nonneg = nonneg && v[i] >= 0.0;
    }
    // Feasible points are fixed points; returning them unchanged makes the
    // projection exactly idempotent.
    if (nonneg && std::abs(sum - 1.0) <= 1e-12) return v;

    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double cumsum = 0.0;
    double theta = 0.0;
    int support = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
        cumsum += u[j];
        double t = (cumsum - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) {
            theta = t;
            support = static_cast<int>(j + 1);
        }
    }
    (void)support;
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = std::max(v[i] - theta, 0.0);
    return out;
}

Matrix box_clamp(const Matrix& m, double lo, double hi) {
    if (!(lo < hi)) raise(ErrorCode::InvalidConfig, "box_clamp requires lo < hi");
    return m.cwiseMax(lo).cwiseMin(hi);
}

double entropy(const MixtureWeights& pi) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < pi.size(); ++i) {
        double p = pi[i];
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) raise(ErrorCode::IoFailure, "double formatting failed");
    return std::string(buf, ptr);
}

void write_probability_matrix_csv(const ProbabilityMatrix& p, std::ostream& out) {
    out << "query_id";
    for (const auto& q : p.query_ids()) out << ',' << q;
    out << '\n';
    for (Eigen::Index i = 0; i < p.values().rows(); ++i) {
        out << p.row_labels()[i];
        for (Eigen::Index j = 0; j < p.values().cols(); ++j) {
            out << ',' << format_double(p.values()(i, j));
        }
        out << '\n';
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

}  // namespace

ProbabilityMatrix read_probability_matrix_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) raise(ErrorCode::IoFailure, "empty CSV input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv_line(line);
    if (header.empty() || header[0] != "query_id") {
        raise(ErrorCode::Unparseable, "CSV header must start with 'query_id'");
    }
    std::vector<std::string> query_ids(header.begin() + 1, header.end());

    std::vector<std::string> labels;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != query_ids.size() + 1) {
            raise(ErrorCode::ShapeMismatch,
                  "CSV row '" + fields[0] + "' has " + std::to_string(fields.size() - 1) +
                      " values, expected " + std::to_string(query_ids.size()));
        }
        labels.push_back(fields[0]);
        std::vector<double> row;
        for (std::size_t i = 1; i < fields.size(); ++i) {
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), v);
            if (ec != std::errc() || ptr != fields[i].data() + fields[i].size()) {
                raise(ErrorCode::Unparseable, "bad CSV value '" + fields[i] + "'");
            }
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) raise(ErrorCode::ShapeMismatch, "CSV has no data rows");
    Matrix values(rows.size(), query_ids.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < query_ids.size(); ++j) values(i, j) = rows[i][j];
    }
    return validate_probability_matrix(values, labels, query_ids);
}

void save_probability_matrix_csv(const ProbabilityMatrix& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoFailure, "cannot open '" + path + "' for writing");
    write_probability_matrix_csv(p, out);
}

ProbabilityMatrix load_probability_matrix_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoFailure, "cannot open '" + path + "'");
    return read_probability_matrix_csv(in);
}

}  // namespace ctxattr
