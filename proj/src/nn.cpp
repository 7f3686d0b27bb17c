#include "cmatch/nn.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace cmatch {

std::string to_string(MergeVariant variant) {
    switch (variant) {
        case MergeVariant::scale_translate: return "scale_translate";
        case MergeVariant::linear: return "linear";
        case MergeVariant::offset: return "offset";
        case MergeVariant::none: return "none";
    }
    return "unknown";
}

MergeVariant parse_merge_variant(std::string_view name) {
    if (name == "scale_translate") return MergeVariant::scale_translate;
    if (name == "linear") return MergeVariant::linear;
    if (name == "offset") return MergeVariant::offset;
    if (name == "none") return MergeVariant::none;
    throw std::invalid_argument("unknown merging variant '" + std::string(name) +
                                "' (expected scale_translate, linear, offset or none)");
}

Tensor stack_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
    const std::size_t d = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * d);
    for (const auto& r : rows) {
        if (r.size() != d) throw std::invalid_argument("stack_rows: ragged rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), d}, std::move(flat));
}

// ---------------------------------------------------------------------------

Linear Linear::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(in * out), b(out);
    for (auto& v : w) v = dist(rng);
    for (auto& v : b) v = dist(rng);
    return Linear{Tensor(Shape{in, out}, std::move(w), true), Tensor(Shape{out}, std::move(b), true)};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
    return Linear{Tensor::zeros(Shape{in, out}, true), Tensor::zeros(Shape{out}, true)};
}

Tensor Linear::forward(Tape& tape, const Tensor& x) const { return tape.add(tape.matmul(x, weight), bias); }

TwoLayerNet TwoLayerNet::init(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
    auto first = Linear::init(in, hidden, rng);
    auto second = Linear::init(hidden, out, rng);
    return TwoLayerNet{std::move(first), std::move(second)};
}

TwoLayerNet TwoLayerNet::zeros(std::size_t in, std::size_t hidden, std::size_t out) {
    return TwoLayerNet{Linear::zeros(in, hidden), Linear::zeros(hidden, out)};
}

Tensor TwoLayerNet::forward(Tape& tape, const Tensor& x) const {
    return second.forward(tape, tape.relu(first.forward(tape, x)));
}

// ---------------------------------------------------------------------------

Standardizer::Standardizer(std::size_t dim) : stats_{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)} {}

void Standardizer::update(const Tensor& batch) {
    const std::size_t d = stats_.mean.size();
    if (batch.rank() != 2 || batch.cols() != d) {
        throw std::invalid_argument("standardizer expects [n," + std::to_string(d) + "], got " +
                                    shape_to_string(batch.shape()));
    }
    const std::size_t n = batch.rows();
    auto v = batch.values();
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += v[i * d + j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (v[i * d + j] - mean) * (v[i * d + j] - mean);
        var /= static_cast<double>(n > 1 ? n - 1 : 1);
        stats_.mean[j] = (1.0 - momentum) * stats_.mean[j] + momentum * mean;
        stats_.variance[j] = (1.0 - momentum) * stats_.variance[j] + momentum * var;
    }
}

Tensor Standardizer::forward(Tape& tape, const Tensor& x) const { return forward(tape, x, stats_); }

Tensor Standardizer::forward(Tape& tape, const Tensor& x, const NormStats& stats) {
    const std::size_t d = stats.mean.size();
    std::vector<double> w(d * d, 0.0), b(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double inv = 1.0 / std::sqrt(stats.variance[j] + epsilon);
        w[j * d + j] = inv;
        b[j] = -stats.mean[j] * inv;
    }
    return tape.add(tape.matmul(x, Tensor(Shape{d, d}, std::move(w))), Tensor(Shape{d}, std::move(b)));
}

void Standardizer::load(const NormStats& stats) {
    if (stats.mean.size() != stats_.mean.size() || stats.variance.size() != stats_.variance.size()) {
        throw std::invalid_argument("normalization statistics have the wrong dimension");
    }
    for (double v : stats.variance) {
        if (!(v >= 0.0)) throw std::invalid_argument("normalization variance must be nonnegative");
    }
    stats_ = stats;
}

Tensor Backbone::forward(Tape& tape, const Tensor& x, const NormStats* stats) const {
    Tensor h = x;
    if (norm) h = stats ? Standardizer::forward(tape, x, *stats) : norm->forward(tape, x);
    h = tape.relu(first.forward(tape, h));
    return tape.relu(second.forward(tape, h));
}

// ---------------------------------------------------------------------------

Projection Projection::init(MergeVariant variant, std::size_t dim, std::size_t hidden, std::mt19937_64& rng) {
    Projection p;
    p.variant = variant;
    switch (variant) {
        case MergeVariant::scale_translate:
            p.scale = TwoLayerNet::init(dim, hidden, dim, rng);
            p.translate = TwoLayerNet::init(dim, hidden, dim, rng);
            break;
        case MergeVariant::linear:
        case MergeVariant::offset: p.affine = Linear::init(dim, dim, rng); break;
        case MergeVariant::none: break;
    }
    return p;
}

Tensor Projection::forward(Tape& tape, const Tensor& v, MergeVariant requested) const {
    if (requested == MergeVariant::none) return v;
    if (requested != variant) {
        throw std::invalid_argument("projection was built for variant " + to_string(variant) + ", not " +
                                    to_string(requested));
    }
    switch (requested) {
        case MergeVariant::scale_translate: {
            auto gate = tape.sigmoid(scale->forward(tape, v));
            return tape.add(tape.multiply(v, gate), translate->forward(tape, v));
        }
        case MergeVariant::linear: return affine->forward(tape, v);
        case MergeVariant::offset: return tape.add(v, affine->forward(tape, v));
        case MergeVariant::none: break;
    }
    return v;
}

// ---------------------------------------------------------------------------

MultiHeadModel::MultiHeadModel(ModelConfig config, std::uint64_t seed) : config_(config), rng_(seed) {
    if (config.input_dim == 0 || config.backbone_hidden == 0 || config.feature_dim == 0 || config.head_hidden == 0 ||
        config.embedding_dim == 0 || config.projection_hidden == 0) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (config.normalization) backbone_.norm.emplace(config.input_dim);
    backbone_.first = Linear::init(config.input_dim, config.backbone_hidden, rng_);
    backbone_.second = Linear::init(config.backbone_hidden, config.feature_dim, rng_);
}

namespace {

Linear clone_linear(const Linear& l) { return Linear{l.weight.clone(), l.bias.clone()}; }

TwoLayerNet clone_net(const TwoLayerNet& n) { return TwoLayerNet{clone_linear(n.first), clone_linear(n.second)}; }

Projection clone_projection(const Projection& p) {
    Projection c;
    c.variant = p.variant;
    if (p.scale) c.scale = clone_net(*p.scale);
    if (p.translate) c.translate = clone_net(*p.translate);
    if (p.affine) c.affine = clone_linear(*p.affine);
    return c;
}

void push_linear(std::vector<Tensor>& out, const Linear& l) {
    out.push_back(l.weight);
    out.push_back(l.bias);
}

void push_net(std::vector<Tensor>& out, const TwoLayerNet& n) {
    push_linear(out, n.first);
    push_linear(out, n.second);
}

void push_projection(std::vector<Tensor>& out, const Projection& p) {
    if (p.scale) push_net(out, *p.scale);
    if (p.translate) push_net(out, *p.translate);
    if (p.affine) push_linear(out, *p.affine);
}

void name_projection(std::vector<std::string>& out, const Projection& p, const std::string& prefix) {
    static const char* const kLayer[] = {"first.weight", "first.bias", "second.weight", "second.bias"};
    if (p.scale) {
        for (auto* l : kLayer) out.push_back(prefix + ".scale." + l);
    }
    if (p.translate) {
        for (auto* l : kLayer) out.push_back(prefix + ".translate." + l);
    }
    if (p.affine) {
        out.push_back(prefix + ".affine.weight");
        out.push_back(prefix + ".affine.bias");
    }
}

}  // namespace

MultiHeadModel MultiHeadModel::clone() const {
    MultiHeadModel copy(config_, 0);
    copy.rng_ = rng_;
    copy.backbone_.norm = backbone_.norm;
    copy.backbone_.first = clone_linear(backbone_.first);
    copy.backbone_.second = clone_linear(backbone_.second);
    for (const auto& t : tasks_) {
        TaskModules m{Head{clone_net(t.head.net)}, clone_projection(t.projection), std::nullopt};
        if (t.centroid_projection) m.centroid_projection = clone_projection(*t.centroid_projection);
        copy.tasks_.push_back(std::move(m));
    }
    copy.norm_records_ = norm_records_;
    return copy;
}

int MultiHeadModel::add_task() {
    const auto e = config_.embedding_dim;
    TaskModules m{Head{TwoLayerNet::init(config_.feature_dim, config_.head_hidden, e, rng_)},
                  Projection::init(config_.merging, e, config_.projection_hidden, rng_), std::nullopt};
    if (!config_.share_projection) m.centroid_projection = Projection::init(config_.merging, e, config_.projection_hidden, rng_);
    tasks_.push_back(std::move(m));
    return static_cast<int>(tasks_.size()) - 1;
}

bool MultiHeadModel::has_task(int task_id) const {
    return task_id >= 0 && static_cast<std::size_t>(task_id) < tasks_.size();
}

const MultiHeadModel::TaskModules& MultiHeadModel::task(int task_id) const {
    if (!has_task(task_id)) {
        throw std::out_of_range("unknown task id " + std::to_string(task_id) + " (model has " +
                                std::to_string(tasks_.size()) + " heads)");
    }
    return tasks_[static_cast<std::size_t>(task_id)];
}

Head& MultiHeadModel::head_module(int task_id) { return const_cast<TaskModules&>(task(task_id)).head; }

Projection& MultiHeadModel::projection_module(int task_id, ProjectionSide side) {
    auto& t = const_cast<TaskModules&>(task(task_id));
    if (side == ProjectionSide::centroid && t.centroid_projection) return *t.centroid_projection;
    return t.projection;
}

Tensor MultiHeadModel::features(Tape& tape, const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != config_.input_dim) {
        throw std::invalid_argument("model input must be [n," + std::to_string(config_.input_dim) + "], got " +
                                    shape_to_string(x.shape()));
    }
    return backbone_.forward(tape, x);
}

Tensor MultiHeadModel::task_features(Tape& tape, const Tensor& x, int task_id) const {
    if (x.rank() != 2 || x.cols() != config_.input_dim) {
        throw std::invalid_argument("model input must be [n," + std::to_string(config_.input_dim) + "], got " +
                                    shape_to_string(x.shape()));
    }
    auto it = norm_records_.find(task_id);
    return backbone_.forward(tape, x, it == norm_records_.end() ? nullptr : &it->second);
}

Tensor MultiHeadModel::head(Tape& tape, const Tensor& features, int task_id) const {
    return task(task_id).head.forward(tape, features);
}

Tensor MultiHeadModel::embed(Tape& tape, const Tensor& x, int task_id) const {
    const auto& t = task(task_id);
    return t.head.forward(tape, features(tape, x));
}

Tensor MultiHeadModel::project(Tape& tape, const Tensor& v, int task_id, MergeVariant variant,
                               ProjectionSide side) const {
    const auto& t = task(task_id);
    if (v.rank() != 2 || v.cols() != config_.embedding_dim) {
        throw std::invalid_argument("projection input must be [n," + std::to_string(config_.embedding_dim) + "], got " +
                                    shape_to_string(v.shape()));
    }
    const auto& p = side == ProjectionSide::centroid && t.centroid_projection ? *t.centroid_projection : t.projection;
    return p.forward(tape, v, variant);
}

void MultiHeadModel::update_norm_stats(const Tensor& x) {
    if (backbone_.norm) backbone_.norm->update(x);
}

void MultiHeadModel::capture_norm_stats(int task_id) {
    if (!backbone_.norm) return;
    task(task_id);
    norm_records_[task_id] = backbone_.norm->stats();
}

void MultiHeadModel::apply_norm_stats(int task_id) {
    if (!backbone_.norm) return;
    auto it = norm_records_.find(task_id);
    if (it == norm_records_.end()) {
        throw std::out_of_range("no normalization statistics recorded for task " + std::to_string(task_id));
    }
    backbone_.norm->load(it->second);
}

bool MultiHeadModel::has_norm_stats(int task_id) const {
    return !backbone_.norm || norm_records_.count(task_id) > 0;
}

std::optional<NormStats> MultiHeadModel::current_norm_stats() const {
    if (!backbone_.norm) return std::nullopt;
    return backbone_.norm->stats();
}

void MultiHeadModel::set_current_norm_stats(const NormStats& stats) {
    if (backbone_.norm) backbone_.norm->load(stats);
}

NormStatsScope::NormStatsScope(MultiHeadModel& model, int task_id)
    : model_(model), saved_(model.current_norm_stats()) {
    model_.apply_norm_stats(task_id);
}

NormStatsScope::~NormStatsScope() {
    if (saved_) model_.set_current_norm_stats(*saved_);
}

std::optional<NormStats> MultiHeadModel::norm_stats(int task_id) const {
    auto it = norm_records_.find(task_id);
    if (it == norm_records_.end()) return std::nullopt;
    return it->second;
}

std::vector<Tensor> MultiHeadModel::backbone_parameters() const {
    std::vector<Tensor> out;
    push_linear(out, backbone_.first);
    push_linear(out, backbone_.second);
    return out;
}

std::vector<Tensor> MultiHeadModel::head_parameters(int task_id) const {
    std::vector<Tensor> out;
    push_net(out, task(task_id).head.net);
    return out;
}

std::vector<Tensor> MultiHeadModel::parameters() const {
    auto out = backbone_parameters();
    for (const auto& t : tasks_) {
        push_net(out, t.head.net);
        push_projection(out, t.projection);
        if (t.centroid_projection) push_projection(out, *t.centroid_projection);
    }
    return out;
}

std::vector<std::string> MultiHeadModel::parameter_names() const {
    std::vector<std::string> out = {"backbone.first.weight", "backbone.first.bias", "backbone.second.weight",
                                    "backbone.second.bias"};
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        const auto prefix = "task" + std::to_string(i);
        for (auto* l : {"first.weight", "first.bias", "second.weight", "second.bias"}) {
            out.push_back(prefix + ".head." + l);
        }
        name_projection(out, tasks_[i].projection, prefix + ".projection");
        if (tasks_[i].centroid_projection) {
            name_projection(out, *tasks_[i].centroid_projection, prefix + ".centroid_projection");
        }
    }
    return out;
}

std::size_t MultiHeadModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
}

ModelSnapshot MultiHeadModel::snapshot() const {
    if (tasks_.empty()) throw std::logic_error("cannot snapshot a model without heads");
    auto copy = std::make_shared<MultiHeadModel>(clone());
    for (auto& p : copy->parameters()) p.set_requires_grad(false);
    return ModelSnapshot(std::move(copy));
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian host order):
//   "CMATCHMD" | u32 version | u64 dims[6] | u8 flags[2] | u8 merging |
//   u64 task_count | norm block | u64 block_count | blocks
// norm block: u8 present [ | current stats | u64 records | (u64 task, stats)... ]
// stats: u64 dim | f64 mean[dim] | f64 variance[dim]
// block: u64 rank | u64 extents[rank] | f64 values (row-major)

namespace {

constexpr char kMagic[8] = {'C', 'M', 'A', 'T', 'C', 'H', 'M', 'D'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint truncated");
    return value;
}

void write_doubles(std::ostream& out, std::span<const double> values) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in, std::size_t n) {
    std::vector<double> values(n);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated");
    return values;
}

void write_stats(std::ostream& out, const NormStats& s) {
    write_pod<std::uint64_t>(out, s.mean.size());
    write_doubles(out, s.mean);
    write_doubles(out, s.variance);
}

NormStats read_stats(std::istream& in) {
    const auto dim = read_pod<std::uint64_t>(in);
    if (dim > (1u << 24)) throw std::runtime_error("checkpoint: implausible normalization dimension");
    NormStats s;
    s.mean = read_doubles(in, dim);
    s.variance = read_doubles(in, dim);
    return s;
}

}  // namespace

void MultiHeadModel::save(std::ostream& out) const {
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    for (auto d : {config_.input_dim, config_.backbone_hidden, config_.feature_dim, config_.head_hidden,
                   config_.embedding_dim, config_.projection_hidden}) {
        write_pod<std::uint64_t>(out, d);
    }
    write_pod<std::uint8_t>(out, config_.normalization ? 1 : 0);
    write_pod<std::uint8_t>(out, config_.share_projection ? 1 : 0);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(config_.merging));
    write_pod<std::uint64_t>(out, tasks_.size());

    write_pod<std::uint8_t>(out, backbone_.norm ? 1 : 0);
    if (backbone_.norm) {
        write_stats(out, backbone_.norm->stats());
        write_pod<std::uint64_t>(out, norm_records_.size());
        for (const auto& [task_id, stats] : norm_records_) {
            write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(task_id));
            write_stats(out, stats);
        }
    }

    const auto params = parameters();
    write_pod<std::uint64_t>(out, params.size());
    for (const auto& p : params) {
        write_pod<std::uint64_t>(out, p.rank());
        for (auto e : p.shape()) write_pod<std::uint64_t>(out, e);
        write_doubles(out, p.values());
    }
    if (!out) throw std::runtime_error("failed to write checkpoint");
}

MultiHeadModel MultiHeadModel::load(std::istream& in) {
    char magic[sizeof(kMagic)] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("not a model checkpoint");
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

    ModelConfig config;
    config.input_dim = read_pod<std::uint64_t>(in);
    config.backbone_hidden = read_pod<std::uint64_t>(in);
    config.feature_dim = read_pod<std::uint64_t>(in);
    config.head_hidden = read_pod<std::uint64_t>(in);
    config.embedding_dim = read_pod<std::uint64_t>(in);
    config.projection_hidden = read_pod<std::uint64_t>(in);
    config.normalization = read_pod<std::uint8_t>(in) != 0;
    config.share_projection = read_pod<std::uint8_t>(in) != 0;
    const auto merging = read_pod<std::uint8_t>(in);
    if (merging > static_cast<std::uint8_t>(MergeVariant::none)) throw std::runtime_error("checkpoint: bad merging variant");
    config.merging = static_cast<MergeVariant>(merging);
    const auto task_count = read_pod<std::uint64_t>(in);

    MultiHeadModel model(config, 0);
    for (std::uint64_t i = 0; i < task_count; ++i) model.add_task();

    const bool has_norm = read_pod<std::uint8_t>(in) != 0;
    if (has_norm != config.normalization) throw std::runtime_error("checkpoint: inconsistent normalization flag");
    if (has_norm) {
        model.backbone_.norm->load(read_stats(in));
        const auto records = read_pod<std::uint64_t>(in);
        for (std::uint64_t i = 0; i < records; ++i) {
            const auto task_id = static_cast<int>(read_pod<std::uint64_t>(in));
            model.norm_records_[task_id] = read_stats(in);
        }
    }

    auto params = model.parameters();
    const auto blocks = read_pod<std::uint64_t>(in);
    if (blocks != params.size()) {
        throw std::runtime_error("checkpoint has " + std::to_string(blocks) + " parameter blocks, expected " +
                                 std::to_string(params.size()));
    }
    for (auto& p : params) {
        const auto rank = read_pod<std::uint64_t>(in);
        Shape shape;
        for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(read_pod<std::uint64_t>(in));
        if (shape != p.shape()) {
            throw std::runtime_error("checkpoint block shape " + shape_to_string(shape) + " does not match " +
                                     shape_to_string(p.shape()));
        }
        auto values = read_doubles(in, p.size());
        std::copy(values.begin(), values.end(), p.mutable_values().begin());
    }
    return model;
}

// ---------------------------------------------------------------------------

ModelSnapshot::ModelSnapshot(std::shared_ptr<const MultiHeadModel> model) : model_(std::move(model)) {}

Tensor ModelSnapshot::embed(Tape& tape, const Tensor& x, int task_id) const { return model_->embed(tape, x, task_id); }

Tensor ModelSnapshot::features(Tape& tape, const Tensor& x) const { return model_->features(tape, x); }

Tensor ModelSnapshot::task_features(Tape& tape, const Tensor& x, int task_id) const {
    return model_->task_features(tape, x, task_id);
}

Tensor ModelSnapshot::head(Tape& tape, const Tensor& features, int task_id) const {
    return model_->head(tape, features, task_id);
}

}  // namespace cmatch
