#pragma once

#include <Eigen/Dense>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctxattr/error.hpp"

namespace ctxattr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Values this far outside [0, 1] are clamped silently during validation;
/// anything further out is an error.
inline constexpr double kUnitSlack = 1e-12;

/// Observed answer-probability matrix P, shape (K+1) x m. Row 0 is the
/// no-context run, row k the run with context from dataset k; columns are
/// queries. Immutable after construction.
class ProbabilityMatrix {
  public:
    ProbabilityMatrix(Matrix values, std::vector<std::string> row_labels,
                      std::vector<std::string> query_ids);

    const Matrix& values() const { return values_; }
    const std::vector<std::string>& row_labels() const { return row_labels_; }
    const std::vector<std::string>& query_ids() const { return query_ids_; }

    /// Number of candidate datasets K (= rows - 1).
    int num_sources() const { return static_cast<int>(values_.rows()) - 1; }
    int num_queries() const { return static_cast<int>(values_.cols()); }

  private:
    Matrix values_;
    std::vector<std::string> row_labels_;
    std::vector<std::string> query_ids_;
};

ProbabilityMatrix validate_probability_matrix(const Matrix& values,
                                              const std::vector<std::string>& row_labels,
                                              const std::vector<std::string>& query_ids);

/// Mixture weights pi on the probability simplex; pi[0] is the base-model
/// share, pi[k] dataset k's share. Nonnegative, sums to 1 within 1e-9.
class MixtureWeights {
  public:
    explicit MixtureWeights(Vector pi);

    const Vector& pi() const { return pi_; }
    double operator[](Eigen::Index i) const { return pi_[i]; }
    Eigen::Index size() const { return pi_.size(); }
    double base() const { return pi_[0]; }
    int num_sources() const { return static_cast<int>(pi_.size()) - 1; }

    static MixtureWeights uniform(int k_plus_one);

  private:
    Vector pi_;
};

/// Latent per-source answer probabilities, entries in [0, 1]. Row 0 is the
/// base model, row k the model specialized on dataset k.
class LatentMatrix {
  public:
    explicit LatentMatrix(Matrix values);

    const Matrix& values() const { return values_; }

  private:
    Matrix values_;
};

/// Subset of the K datasets, members drawn from {1..K}. Bitmask-backed; bit
/// k-1 encodes dataset k, which keeps 2^K enumeration cheap.
class Coalition {
  public:
    Coalition() = default;

    static Coalition of(std::initializer_list<int> members);
    static Coalition of(const std::vector<int>& members);
    static Coalition from_mask(std::uint32_t mask) { return Coalition(mask); }
    static Coalition full(int k) { return Coalition(k >= 32 ? 0xFFFFFFFFu : ((1u << k) - 1u)); }

    bool contains(int k) const { return (mask_ >> (k - 1)) & 1u; }
    Coalition with(int k) const;
    Coalition without(int k) const;
    bool empty() const { return mask_ == 0; }
    int size() const;
    std::uint32_t mask() const { return mask_; }
    std::vector<int> members() const;

    /// Sorted comma-joined member indices; "" for the empty coalition.
    std::string key() const;
    static Coalition parse_key(const std::string& key);

    auto operator<=>(const Coalition&) const = default;

  private:
    explicit Coalition(std::uint32_t mask) : mask_(mask) {}

    std::uint32_t mask_ = 0;
};

/// Map from coalition to similarity score s_S in [0, 1]. Always contains the
/// empty coalition.
class CoalitionScoreTable {
  public:
    explicit CoalitionScoreTable(std::map<Coalition, double> entries);

    double score(const Coalition& s) const;
    bool has(const Coalition& s) const { return entries_.count(s) > 0; }
    const std::map<Coalition, double>& entries() const { return entries_; }

  private:
    std::map<Coalition, double> entries_;
};

enum class AttributionMethod { SCM, CMF };

struct Diagnostics {
    std::vector<double> objective_trace;
    int restarts = 0;
    bool converged = true;
};

/// Final per-dataset attribution: phi for SCM (length K), pi for CMF
/// (length K+1), with bootstrap CIs and solver diagnostics.
struct AttributionReport {
    AttributionMethod method = AttributionMethod::SCM;
    Vector scores;
    Vector ci_lower;
    Vector ci_upper;
    /// CMF only: pi_k / (1 - pi_0) per dataset, the column comparable with phi.
    std::optional<std::vector<double>> normalized_contributions;
    /// CMF only: that ratio for the highest-weight dataset.
    std::optional<double> top_source_ratio;
    Diagnostics diagnostics;

    void validate() const;
};

// ---- Operations ------------------------------------------------------------

/// Euclidean projection onto the probability simplex (sort-based threshold
/// construction). Output is nonnegative and sums to 1 within 1e-12. Inputs
/// already feasible to that tolerance are returned unchanged, which makes the
/// projection exactly idempotent.
Vector simplex_project(const Vector& v);

/// Elementwise clamp into [lo, hi]. Requires lo < hi.
Matrix box_clamp(const Matrix& m, double lo, double hi);

/// Shannon entropy -sum pi_i ln pi_i, with 0 ln 0 = 0. Natural log.
double entropy(const MixtureWeights& pi);

// ---- CSV I/O ---------------------------------------------------------------

/// Shortest round-trip decimal representation of v.
std::string format_double(double v);

/// Header row "query_id,<q1>,...,<qm>"; one row per context labeled in
/// column 1.
void write_probability_matrix_csv(const ProbabilityMatrix& p, std::ostream& out);
ProbabilityMatrix read_probability_matrix_csv(std::istream& in);

void save_probability_matrix_csv(const ProbabilityMatrix& p, const std::string& path);
ProbabilityMatrix load_probability_matrix_csv(const std::string& path);

}  // namespace ctxattr
