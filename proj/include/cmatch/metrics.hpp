#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cmatch {

/// R[i][j]: test accuracy (fraction) on task j after training task i.
/// Indices are 0-based; every entry is written at most once.
class ResultsMatrix {
public:
    explicit ResultsMatrix(std::size_t n_tasks);

    std::size_t size() const { return n_; }
    void record(std::size_t i, std::size_t j, double accuracy);
    bool filled(std::size_t i, std::size_t j) const;
    std::optional<double> get(std::size_t i, std::size_t j) const;
    /// Throws when the entry is unfilled.
    double at(std::size_t i, std::size_t j) const;

    /// N rows of N comma-separated fields; unfilled entries are blank.
    void write_csv(std::ostream& out) const;

private:
    std::size_t n_;
    std::vector<std::optional<double>> cells_;
};

/// Mean of the last row.
double accuracy(const ResultsMatrix& r);

/// Average change of each task's accuracy from when it was learned to every
/// later evaluation, over the N(N-1)/2 lower-triangle entries. Returns 0 for
/// a single task, where it is undefined.
double bwt(const ResultsMatrix& r);
inline bool bwt_defined(const ResultsMatrix& r) { return r.size() >= 2; }

enum class MemoryMethod {
    ewc,           // N x P
    oewc,          // P
    rehearsal,     // I x M x N   (M samples per task)
    emr,           // (D + I) x M x N
    cm_til,        // E x T
    cm_cil,        // E x T + I x M   (M total stored samples)
    replay_fixed,  // I x M         (M total stored samples)
    none,          // 0
};

std::string to_string(MemoryMethod m);
MemoryMethod parse_memory_method(std::string_view name);

/// Inputs to the extra-memory formulas. Only the fields a method's formula
/// uses need to be set.
struct MemoryLedger {
    MemoryMethod method = MemoryMethod::none;
    std::optional<std::uint64_t> n_tasks;        // N
    std::optional<std::uint64_t> parameters;     // P
    std::optional<std::uint64_t> input_dim;      // I
    std::optional<std::uint64_t> samples;        // M
    std::optional<std::uint64_t> feature_dim;    // D
    std::optional<std::uint64_t> embedding_dim;  // E
    std::optional<std::uint64_t> total_classes;  // T
};

/// Number of extra scalars kept between tasks. Throws std::invalid_argument
/// naming the first field the formula needs but the ledger lacks.
std::uint64_t memory_footprint(const MemoryLedger& ledger);

/// Wall-clock seconds per task; one entry per task id.
class RuntimeLog {
public:
    void record(int task_id, double seconds);
    double total() const;
    const std::vector<std::pair<int, double>>& entries() const { return entries_; }

private:
    std::vector<std::pair<int, double>> entries_;
};

}  // namespace cmatch
