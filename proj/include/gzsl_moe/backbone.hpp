#pragma once

// Stage 1: per-point geometric descriptor + MLP feature extractor, trained
// jointly with a throwaway MoE classifier head on seen-class points only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <unordered_map>
#include <utility>
#include <vector>

#include "data.hpp"
#include "network.hpp"

namespace gzsl {

enum class Provenance : std::uint8_t { real = 0, fake = 1 };

/// Fixed-width feature rows with labels and a real/fake flag per row.
struct FeatureBatch {
    Matrix features;  // N x F
    std::vector<ClassId> labels;
    std::vector<Provenance> provenance;

    FeatureBatch() = default;
    explicit FeatureBatch(std::size_t dim) : features(0, dim) {}

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return features.cols(); }
    [[nodiscard]] bool empty() const noexcept { return labels.empty(); }

    void push(std::span<const double> row, ClassId label, Provenance p) {
        features.append_row(row);
        labels.push_back(label);
        provenance.push_back(p);
    }

    void append(const FeatureBatch& other) {
        for (std::size_t i = 0; i < other.size(); ++i)
            push(other.features.row(i), other.labels[i], other.provenance[i]);
    }

    void validate() const {
        require(features.rows() == labels.size() && labels.size() == provenance.size(),
                "feature batch: inconsistent row counts");
        require(features.all_finite(), "feature batch: non-finite feature");
    }

    [[nodiscard]] std::map<ClassId, std::vector<std::size_t>> rows_by_class() const {
        std::map<ClassId, std::vector<std::size_t>> out;
        for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Descriptors

inline constexpr std::size_t kDescriptorDim = 9;

/// Exact k-nearest-neighbour search over a uniform voxel grid. Neighbours
/// are ordered by (distance, index); the query point itself is excluded.
class KnnGrid {
public:
    KnnGrid(std::span<const Point3> points, std::size_t k) : points_(points), k_(k) {
        if (points.empty()) return;
        lo_ = hi_ = points[0];
        for (const auto& p : points)
            for (int a = 0; a < 3; ++a) {
                lo_[a] = std::min(lo_[a], p[a]);
                hi_[a] = std::max(hi_[a], p[a]);
            }
        double volume = 1.0;
        int live_axes = 0;
        for (int a = 0; a < 3; ++a) {
            const double ext = hi_[a] - lo_[a];
            if (ext > 0) {
                volume *= ext;
                ++live_axes;
            }
        }
        // Aim for about max(k, 4) points per occupied cell.
        const double per_cell = static_cast<double>(std::max<std::size_t>(k, 4));
        const double cells = std::max(1.0, static_cast<double>(points.size()) / per_cell);
        cell_ = live_axes == 0 ? 1.0 : std::pow(volume / cells, 1.0 / live_axes);
        if (!(cell_ > 0) || !std::isfinite(cell_)) cell_ = 1.0;
        for (int a = 0; a < 3; ++a)
            dims_[a] = std::max<long>(1, static_cast<long>(std::floor((hi_[a] - lo_[a]) / cell_)) + 1);
        dims_[0] = std::min<long>(dims_[0], 1 << 20);
        dims_[1] = std::min<long>(dims_[1], 1 << 20);
        dims_[2] = std::min<long>(dims_[2], 1 << 20);
        for (std::size_t i = 0; i < points.size(); ++i) cells_[key(cell_of(points[i]))].push_back(i);
    }

    [[nodiscard]] std::vector<std::size_t> neighbours(std::size_t query) const {
        const Point3& q = points_[query];
        const auto c = cell_of(q);
        std::vector<std::pair<double, std::size_t>> cand;
        const long max_ring = std::max({dims_[0], dims_[1], dims_[2]});
        for (long r = 0; r <= max_ring; ++r) {
            for (long i = c[0] - r; i <= c[0] + r; ++i)
                for (long j = c[1] - r; j <= c[1] + r; ++j)
                    for (long l = c[2] - r; l <= c[2] + r; ++l) {
                        if (std::max({std::abs(i - c[0]), std::abs(j - c[1]), std::abs(l - c[2])}) != r) continue;
                        if (i < 0 || j < 0 || l < 0 || i >= dims_[0] || j >= dims_[1] || l >= dims_[2]) continue;
                        auto it = cells_.find(key({i, j, l}));
                        if (it == cells_.end()) continue;
                        for (std::size_t idx : it->second) {
                            if (idx == query) continue;
                            cand.emplace_back(squared_distance(q, points_[idx]), idx);
                        }
                    }
            if (cand.size() >= k_) {
                std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k_ - 1), cand.end());
                const double kth = cand[k_ - 1].first;
                const double reach = static_cast<double>(r) * cell_;
                // Anything outside the scanned block is at least `reach` away.
                if (kth < reach * reach) break;
            }
        }
        std::sort(cand.begin(), cand.end());
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < std::min(k_, cand.size()); ++i) out.push_back(cand[i].second);
        return out;
    }

private:
    using Cell = std::array<long, 3>;

    [[nodiscard]] Cell cell_of(const Point3& p) const {
        Cell c{};
        for (int a = 0; a < 3; ++a)
            c[a] = std::clamp<long>(static_cast<long>(std::floor((p[a] - lo_[a]) / cell_)), 0, dims_[a] - 1);
        return c;
    }
    [[nodiscard]] std::uint64_t key(const Cell& c) const {
        return (static_cast<std::uint64_t>(c[0]) << 42) | (static_cast<std::uint64_t>(c[1]) << 21) |
               static_cast<std::uint64_t>(c[2]);
    }

    std::span<const Point3> points_;
    std::size_t k_;
    Point3 lo_{}, hi_{};
    double cell_ = 1.0;
    std::array<long, 3> dims_{1, 1, 1};
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

inline Vector descriptor_from_neighbours(const PointFrame& frame, std::size_t index,
                                         std::span<const std::size_t> nbrs) {
    const Point3& p = frame.points[index];
    Vector d(kDescriptorDim, 0.0);
    d[0] = p[0];
    d[1] = p[1];
    d[2] = p[2];
    const double k = static_cast<double>(nbrs.size());
    for (std::size_t n : nbrs)
        for (int a = 0; a < 3; ++a) d[3 + a] += frame.points[n][a] - p[a];
    for (int a = 0; a < 3; ++a) d[3 + a] /= k;
    for (std::size_t n : nbrs)
        for (int a = 0; a < 3; ++a) {
            const double dev = frame.points[n][a] - p[a] - d[3 + a];
            d[6 + a] += dev * dev;
        }
    for (int a = 0; a < 3; ++a) d[6 + a] = std::sqrt(d[6 + a] / k);
    return d;
}

/// xyz, mean neighbour offset, per-axis std of neighbour offsets.
inline Vector point_descriptor(const PointFrame& frame, std::size_t index, std::size_t k) {
    require(k >= 1, "point_descriptor: k must be at least 1");
    require(frame.size() >= k + 1, "point_descriptor: frame has " + std::to_string(frame.size()) +
                                       " points, need at least k+1 = " + std::to_string(k + 1));
    require(index < frame.size(), "point_descriptor: index out of range");
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(frame.size() - 1);
    for (std::size_t j = 0; j < frame.size(); ++j)
        if (j != index) d.emplace_back(squared_distance(frame.points[index], frame.points[j]), j);
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::vector<std::size_t> nbrs;
    for (std::size_t i = 0; i < k; ++i) nbrs.push_back(d[i].second);
    return descriptor_from_neighbours(frame, index, nbrs);
}

/// Descriptors for every point of a frame (N x 9).
inline Matrix frame_descriptors(const PointFrame& frame, std::size_t k) {
    Matrix out(0, kDescriptorDim);
    if (frame.size() == 0) return out;
    require(frame.size() >= k + 1, "point_descriptor: frame has " + std::to_string(frame.size()) +
                                       " points, need at least k+1 = " + std::to_string(k + 1));
    KnnGrid grid(frame.points, k);
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const auto nbrs = grid.neighbours(i);
        out.append_row(descriptor_from_neighbours(frame, i, nbrs));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameters

struct BackboneConfig {
    std::size_t feature_dim = 32;
    std::size_t neighbours = 16;
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    std::size_t num_experts = 8;
    std::size_t top_k = 2;
    std::size_t expert_hidden_mult = 4;
    bool class_weights = false;
    double importance_coef = 0.0;

    void validate() const {
        require(feature_dim >= 2, "backbone: feature dim must be at least 2", ErrorKind::config);
        require(neighbours >= 1, "backbone: k must be at least 1", ErrorKind::config);
        require(batch_size >= 1, "backbone: batch size must be at least 1", ErrorKind::config);
        require(top_k >= 1 && top_k <= num_experts, "backbone: need M >= K >= 1", ErrorKind::config);
        require(expert_hidden_mult >= 1, "backbone: expert hidden multiplier must be at least 1", ErrorKind::config);
    }
};

struct BackboneParams {
    std::size_t neighbours = 16;
    Matrix input_mean;   // 1 x 9, fixed after initialization
    Matrix input_scale;  // 1 x 9
    Sequential mlp;      // 9 -> ... -> F

    [[nodiscard]] std::size_t feature_dim() const { return mlp.out_dim(); }

    friend bool operator==(const BackboneParams&, const BackboneParams&) = default;
};

inline BackboneParams init_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    BackboneParams p;
    p.neighbours = cfg.neighbours;
    p.input_mean = Matrix(1, kDescriptorDim, 0.0);
    p.input_scale = Matrix(1, kDescriptorDim, 1.0);
    std::size_t in = kDescriptorDim;
    for (std::size_t w : cfg.hidden) {
        p.mlp.layers.emplace_back(Linear(in, w));
        p.mlp.layers.emplace_back(GeluLayer{});
        in = w;
    }
    p.mlp.layers.emplace_back(Linear(in, cfg.feature_dim));
    Rng rng(seed);
    glorot_init(p.mlp, rng);
    return p;
}

/// Standardizes descriptor columns using statistics of `descriptors`.
inline void fit_input_normalization(BackboneParams& p, const Matrix& descriptors) {
    if (descriptors.rows() == 0) return;
    const double n = static_cast<double>(descriptors.rows());
    for (std::size_t c = 0; c < kDescriptorDim; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < descriptors.rows(); ++r) mean += descriptors(r, c);
        mean /= n;
        double var = 0.0;
        for (std::size_t r = 0; r < descriptors.rows(); ++r) var += (descriptors(r, c) - mean) * (descriptors(r, c) - mean);
        const double sd = std::sqrt(var / n);
        p.input_mean(0, c) = mean;
        p.input_scale(0, c) = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
}

inline Vector normalize_descriptor(const BackboneParams& p, std::span<const double> d) {
    Vector x(kDescriptorDim);
    for (std::size_t c = 0; c < kDescriptorDim; ++c) x[c] = (d[c] - p.input_mean(0, c)) * p.input_scale(0, c);
    return x;
}

inline FeatureBatch features_from_descriptors(const BackboneParams& p, const Matrix& descriptors,
                                              std::span<const ClassId> labels) {
    FeatureBatch fb(p.feature_dim());
    for (std::size_t i = 0; i < descriptors.rows(); ++i)
        fb.push(forward(p.mlp, normalize_descriptor(p, descriptors.row(i))), labels[i], Provenance::real);
    return fb;
}

/// Real features for every point of `frame`.
inline FeatureBatch extract_features(const BackboneParams& p, const PointFrame& frame) {
    return features_from_descriptors(p, frame_descriptors(frame, p.neighbours), frame.labels);
}

// ---------------------------------------------------------------------------
// Training

struct BackboneTrainResult {
    BackboneParams params;
    std::vector<double> loss_history;  // mean cross-entropy per epoch
};

/// Called with the label of every training point, before any use of it.
using PointObserver = std::function<void(ClassId)>;

inline Sequential make_classifier1(const BackboneConfig& cfg, std::size_t num_seen) {
    Sequential head;
    head.layers.emplace_back(MoeLayer(cfg.feature_dim, cfg.expert_hidden_mult * cfg.feature_dim, cfg.feature_dim,
                                      cfg.num_experts, cfg.top_k));
    head.layers.emplace_back(Linear(cfg.feature_dim, num_seen));
    return head;
}

inline void check_loss(double loss, const std::string& stage, std::size_t epoch) {
    require(std::isfinite(loss), "divergence: " + stage + " loss is not finite at epoch " + std::to_string(epoch),
            ErrorKind::divergence);
}

inline BackboneTrainResult train_backbone(std::span<const PointFrame> frames, const SplitConfig& split,
                                          const BackboneConfig& cfg, const AdamConfig& opt, std::uint64_t seed,
                                          const PointObserver& observe = {}) {
    cfg.validate();
    const PartitionedFrames part = split_frames(frames, split, SplitMode::backbone_training);
    require(part.seen_points > 0, "no seen points", ErrorKind::config);

    std::map<ClassId, std::size_t> class_index;
    for (ClassId c : split.seen) class_index.emplace(c, class_index.size());

    Matrix descriptors(0, kDescriptorDim);
    std::vector<ClassId> labels;
    for (const auto& f : part.frames) {
        if (f.size() == 0) continue;
        for (ClassId l : f.labels)
            if (observe) observe(l);
        const Matrix d = frame_descriptors(f, cfg.neighbours);
        for (std::size_t i = 0; i < d.rows(); ++i) descriptors.append_row(d.row(i));
        labels.insert(labels.end(), f.labels.begin(), f.labels.end());
    }

    BackboneTrainResult result{init_backbone(cfg, derive_seed(seed, "backbone-init")), {}};
    BackboneParams& p = result.params;
    fit_input_normalization(p, descriptors);
    if (cfg.epochs == 0) return result;

    Sequential head = make_classifier1(cfg, split.seen.size());
    {
        Rng rng(derive_seed(seed, "classifier1-init"));
        glorot_init(head, rng);
    }
    Matrix inputs(0, kDescriptorDim);
    for (std::size_t i = 0; i < descriptors.rows(); ++i) inputs.append_row(normalize_descriptor(p, descriptors.row(i)));

    Sequential g_mlp = zeros_like(p.mlp), g_head = zeros_like(head);
    std::vector<Matrix*> params = param_list(p.mlp);
    for (Matrix* m : param_list(head)) params.push_back(m);
    std::vector<const Matrix*> grads = param_list(std::as_const(g_mlp));
    for (const Matrix* m : param_list(std::as_const(g_head))) grads.push_back(m);
    Adam adam(opt);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches =
            make_batches(labels, cfg.batch_size, derive_seed(seed, "backbone-epoch-" + std::to_string(epoch)),
                         cfg.class_weights);
        double epoch_loss = 0.0;
        for (const auto& b : batches) {
            zero_params(g_mlp);
            zero_params(g_head);
            const double inv = 1.0 / static_cast<double>(b.indices.size());
            Matrix x(0, kDescriptorDim);
            for (std::size_t r : b.indices) x.append_row(inputs.row(r));
            const BatchTrace body = forward_batch(p.mlp, x);
            const BatchTrace top = forward_batch(head, body.output);
            std::vector<Vector> gate_grads;
            if (cfg.importance_coef > 0.0)
                gate_grads.push_back(
                    importance_loss(top.decisions().front(), cfg.num_experts, cfg.importance_coef).weight_grad);
            Matrix dz(x.rows(), top.output.cols());
            for (std::size_t s = 0; s < b.indices.size(); ++s) {
                const std::size_t target = class_index.at(labels[b.indices[s]]);
                const Vector prob = softmax(top.output.row(s));
                epoch_loss += cross_entropy(prob, target);
                const Vector g = softmax_cross_entropy_grad(prob, target);
                for (std::size_t j = 0; j < g.size(); ++j) dz(s, j) = g[j] * b.weights[s] * inv;
            }
            const Matrix dfeat = backward_batch(head, top, dz, g_head, gate_grads.empty() ? nullptr : &gate_grads);
            backward_batch(p.mlp, body, dfeat, g_mlp);
            adam.step(params, grads);
        }
        epoch_loss /= static_cast<double>(labels.size());
        check_loss(epoch_loss, "backbone", epoch);
        result.loss_history.push_back(epoch_loss);
    }
    require(params_finite(p.mlp), "divergence: backbone parameters became non-finite", ErrorKind::divergence);
    return result;
}

}  // namespace gzsl
