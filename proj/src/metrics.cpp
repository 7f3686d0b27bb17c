#include "cmatch/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace cmatch {

ResultsMatrix::ResultsMatrix(std::size_t n_tasks) : n_(n_tasks), cells_(n_tasks * n_tasks) {
    if (n_tasks == 0) throw std::invalid_argument("results matrix needs at least one task");
}

void ResultsMatrix::record(std::size_t i, std::size_t j, double value) {
    if (i >= n_ || j >= n_) {
        throw std::out_of_range("entry (" + std::to_string(i) + "," + std::to_string(j) + ") outside a " +
                                std::to_string(n_) + "x" + std::to_string(n_) + " matrix");
    }
    if (j > i) throw std::invalid_argument("task " + std::to_string(j) + " is evaluated before it is trained");
    if (!(value >= 0.0 && value <= 1.0)) {
        throw std::invalid_argument("accuracy " + std::to_string(value) + " is outside [0, 1]");
    }
    auto& cell = cells_[i * n_ + j];
    if (cell) throw std::logic_error("entry (" + std::to_string(i) + "," + std::to_string(j) + ") already recorded");
    cell = value;
}

bool ResultsMatrix::filled(std::size_t i, std::size_t j) const { return i < n_ && j < n_ && cells_[i * n_ + j]; }

std::optional<double> ResultsMatrix::get(std::size_t i, std::size_t j) const {
    if (i >= n_ || j >= n_) return std::nullopt;
    return cells_[i * n_ + j];
}

double ResultsMatrix::at(std::size_t i, std::size_t j) const {
    auto v = get(i, j);
    if (!v) throw std::logic_error("entry (" + std::to_string(i) + "," + std::to_string(j) + ") is not filled");
    return *v;
}

void ResultsMatrix::write_csv(std::ostream& out) const {
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < n_; ++i) {
        for (std::size_t j = 0; j < n_; ++j) {
            if (j) out << ',';
            if (auto v = get(i, j)) out << *v;
        }
        out << '\n';
    }
}

double accuracy(const ResultsMatrix& r) {
    const std::size_t n = r.size();
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += r.at(n - 1, j);
    return total / static_cast<double>(n);
}

double bwt(const ResultsMatrix& r) {
    const std::size_t n = r.size();
    if (n < 2) return 0.0;
    double total = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) total += r.at(i, j) - r.at(j, j);
    }
    return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

// ---------------------------------------------------------------------------

std::string to_string(MemoryMethod m) {
    switch (m) {
        case MemoryMethod::ewc: return "ewc";
        case MemoryMethod::oewc: return "oewc";
        case MemoryMethod::rehearsal: return "rehearsal";
        case MemoryMethod::emr: return "emr";
        case MemoryMethod::cm_til: return "cm_til";
        case MemoryMethod::cm_cil: return "cm_cil";
        case MemoryMethod::replay_fixed: return "replay_fixed";
        case MemoryMethod::none: return "none";
    }
    return "unknown";
}

MemoryMethod parse_memory_method(std::string_view name) {
    for (auto m : {MemoryMethod::ewc, MemoryMethod::oewc, MemoryMethod::rehearsal, MemoryMethod::emr,
                   MemoryMethod::cm_til, MemoryMethod::cm_cil, MemoryMethod::replay_fixed, MemoryMethod::none}) {
        if (name == to_string(m)) return m;
    }
    throw std::invalid_argument("unknown memory method '" + std::string(name) + "'");
}

namespace {

std::uint64_t need(const std::optional<std::uint64_t>& field, const char* name, MemoryMethod m) {
    if (!field) throw std::invalid_argument(to_string(m) + " memory formula needs field " + name);
    return *field;
}

}  // namespace

std::uint64_t memory_footprint(const MemoryLedger& l) {
    const auto m = l.method;
    switch (m) {
        case MemoryMethod::ewc: return need(l.n_tasks, "N", m) * need(l.parameters, "P", m);
        case MemoryMethod::oewc: return need(l.parameters, "P", m);
        case MemoryMethod::rehearsal:
            return need(l.input_dim, "I", m) * need(l.samples, "M", m) * need(l.n_tasks, "N", m);
        case MemoryMethod::emr:
            return (need(l.feature_dim, "D", m) + need(l.input_dim, "I", m)) * need(l.samples, "M", m) *
                   need(l.n_tasks, "N", m);
        case MemoryMethod::cm_til: return need(l.embedding_dim, "E", m) * need(l.total_classes, "T", m);
        case MemoryMethod::cm_cil:
            return need(l.embedding_dim, "E", m) * need(l.total_classes, "T", m) +
                   need(l.input_dim, "I", m) * need(l.samples, "M", m);
        case MemoryMethod::replay_fixed: return need(l.input_dim, "I", m) * need(l.samples, "M", m);
        case MemoryMethod::none: return 0;
    }
    return 0;
}

void RuntimeLog::record(int task_id, double seconds) {
    if (!(seconds >= 0.0) || !std::isfinite(seconds)) throw std::invalid_argument("runtime must be a finite value >= 0");
    for (const auto& [id, _] : entries_) {
        if (id == task_id) throw std::logic_error("runtime of task " + std::to_string(task_id) + " already recorded");
    }
    entries_.emplace_back(task_id, seconds);
}

double RuntimeLog::total() const {
    double t = 0.0;
    for (const auto& [_, s] : entries_) t += s;
    return t;
}

}  // namespace cmatch
