#pragma once

// Labeled point frames: synthetic scene generation, native text and ASCII
// PCD I/O, seen/unseen partitioning and minibatching.
//
// Native frame file:
//   GZSL-PF v1 <N>
//   x y z label          (N lines, reals printed with 17 significant digits)

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "prototypes.hpp"

namespace gzsl {

using Point3 = std::array<double, 3>;

/// COVERED class ids. 0 marks unlabeled points.
namespace covered {
inline constexpr ClassId kUnlabeled = 0;
inline constexpr ClassId kFloor = 1;
inline constexpr ClassId kWall = 2;
inline constexpr ClassId kCobot = 3;
inline constexpr ClassId kHuman = 4;
inline constexpr ClassId kAgv = 5;
inline constexpr int kNumClasses = 5;

inline std::vector<std::pair<ClassId, std::string>> class_names() {
    return {{kFloor, "floor"}, {kWall, "wall"}, {kCobot, "cobot"}, {kHuman, "human"}, {kAgv, "agv"}};
}

inline SplitConfig default_split() { return {{kWall, kCobot, kHuman}, {kFloor, kAgv}}; }
}  // namespace covered

struct PointFrame {
    std::string frame_id;
    std::vector<Point3> points;
    std::vector<ClassId> labels;

    [[nodiscard]] std::size_t size() const noexcept { return points.size(); }

    void validate() const {
        require(points.size() == labels.size(), "frame '" + frame_id + "': label count does not match point count");
        for (ClassId l : labels)
            require(l >= 0 && l <= covered::kNumClasses,
                    "frame '" + frame_id + "': label " + std::to_string(l) + " outside the class set");
    }

    void push(const Point3& p, ClassId label) {
        points.push_back(p);
        labels.push_back(label);
    }

    friend bool operator==(const PointFrame&, const PointFrame&) = default;
};

inline std::map<ClassId, std::size_t> class_counts(const PointFrame& f) {
    std::map<ClassId, std::size_t> out;
    for (ClassId l : f.labels) ++out[l];
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SceneSpec {
    std::map<ClassId, std::size_t> counts = {{covered::kFloor, 10000},
                                             {covered::kWall, 13400},
                                             {covered::kCobot, 1800},
                                             {covered::kHuman, 2800},
                                             {covered::kAgv, 1200}};
    Point3 room = {10.0, 8.0, 3.0};  // meters
    double noise_sigma = 0.01;       // meters
    std::uint64_t seed = 0;

    void validate() const {
        std::size_t total = 0;
        for (const auto& [c, n] : counts) {
            require(c >= 1 && c <= covered::kNumClasses, "scene: unknown class " + std::to_string(c),
                    ErrorKind::config);
            total += n;
        }
        require(total <= 100'000'000, "scene too large", ErrorKind::config);
        require(room[0] > 0 && room[1] > 0 && room[2] > 0, "scene: room extents must be positive", ErrorKind::config);
        require(noise_sigma >= 0.0, "scene: noise sigma must be nonnegative", ErrorKind::config);
    }

    /// Counts multiplied by `factor`, rounded to nearest.
    [[nodiscard]] SceneSpec scaled(double factor) const {
        SceneSpec s = *this;
        for (auto& [c, n] : s.counts) n = static_cast<std::size_t>(std::llround(static_cast<double>(n) * factor));
        return s;
    }
};

namespace detail {

struct Box {
    Point3 lo;
    Point3 hi;
};

inline Point3 sample_box_surface(const Box& b, Rng& rng, bool include_bottom) {
    const double dx = b.hi[0] - b.lo[0], dy = b.hi[1] - b.lo[1], dz = b.hi[2] - b.lo[2];
    // faces: +-x, +-y, top, bottom
    const std::array<double, 6> area = {dy * dz, dy * dz, dx * dz, dx * dz, dx * dy, include_bottom ? dx * dy : 0.0};
    const double total = std::accumulate(area.begin(), area.end(), 0.0);
    double r = uniform(rng, 0.0, total);
    std::size_t face = 0;
    while (face < 5 && r >= area[face]) r -= area[face++];
    const double u = uniform(rng, 0.0, 1.0), v = uniform(rng, 0.0, 1.0);
    switch (face) {
        case 0: return {b.lo[0], b.lo[1] + u * dy, b.lo[2] + v * dz};
        case 1: return {b.hi[0], b.lo[1] + u * dy, b.lo[2] + v * dz};
        case 2: return {b.lo[0] + u * dx, b.lo[1], b.lo[2] + v * dz};
        case 3: return {b.lo[0] + u * dx, b.hi[1], b.lo[2] + v * dz};
        case 4: return {b.lo[0] + u * dx, b.lo[1] + v * dy, b.hi[2]};
        default: return {b.lo[0] + u * dx, b.lo[1] + v * dy, b.lo[2]};
    }
}

inline Point3 sample_ellipsoid_surface(const Point3& center, const Point3& radii, Rng& rng) {
    Point3 d{standard_normal(rng), standard_normal(rng), standard_normal(rng)};
    double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (n == 0.0) {
        d = {0.0, 0.0, 1.0};
        n = 1.0;
    }
    return {center[0] + radii[0] * d[0] / n, center[1] + radii[1] * d[1] / n, center[2] + radii[2] * d[2] / n};
}

/// Picks a random index weighted by `areas`.
inline std::size_t pick_weighted(std::span<const double> areas, Rng& rng) {
    const double total = std::accumulate(areas.begin(), areas.end(), 0.0);
    double r = uniform(rng, 0.0, total);
    for (std::size_t i = 0; i + 1 < areas.size(); ++i) {
        if (r < areas[i]) return i;
        r -= areas[i];
    }
    return areas.size() - 1;
}

}  // namespace detail

/// Floor plane, four walls, a cobot (pedestal plus arm boxes), a human
/// (torso and head ellipsoids) and a low AGV box. Object placement and all
/// samples are drawn from `spec.seed`.
inline PointFrame generate_scene(const SceneSpec& spec) {
    spec.validate();
    using detail::Box;
    Rng rng(derive_seed(spec.seed, "scene"));
    const double lx = spec.room[0], ly = spec.room[1], lz = spec.room[2];

    // Object layout: cobot in the left third, human in the middle, AGV in the right third.
    const Point3 cobot_at = {uniform(rng, 0.20, 0.30) * lx, uniform(rng, 0.3, 0.7) * ly, 0.0};
    const Point3 human_at = {uniform(rng, 0.45, 0.55) * lx, uniform(rng, 0.3, 0.7) * ly, 0.0};
    const Point3 agv_at = {uniform(rng, 0.70, 0.80) * lx, uniform(rng, 0.3, 0.7) * ly, 0.0};
    const double arm_yaw = uniform(rng, -1.0, 1.0);

    const std::vector<Box> cobot_boxes = {
        {{cobot_at[0] - 0.25, cobot_at[1] - 0.25, 0.0}, {cobot_at[0] + 0.25, cobot_at[1] + 0.25, 0.7}},    // pedestal
        {{cobot_at[0] - 0.08, cobot_at[1] - 0.08, 0.7}, {cobot_at[0] + 0.08, cobot_at[1] + 0.08, 1.2}},    // upper arm
        {{cobot_at[0] - 0.06 + 0.3 * std::cos(arm_yaw), cobot_at[1] - 0.06 + 0.3 * std::sin(arm_yaw), 1.1},
         {cobot_at[0] + 0.06 + 0.3 * std::cos(arm_yaw), cobot_at[1] + 0.06 + 0.3 * std::sin(arm_yaw), 1.25}},  // forearm
    };
    const Box agv_box = {{agv_at[0] - 0.6, agv_at[1] - 0.4, 0.05}, {agv_at[0] + 0.6, agv_at[1] + 0.4, 0.35}};

    PointFrame f;
    f.frame_id = "scene-" + std::to_string(spec.seed);
    std::size_t total = 0;
    for (const auto& [c, n] : spec.counts) total += n;
    f.points.reserve(total);
    f.labels.reserve(total);

    auto jitter = [&](Point3 p) {
        if (spec.noise_sigma > 0.0)
            for (double& v : p) v += spec.noise_sigma * standard_normal(rng);
        return p;
    };
    auto count = [&](ClassId c) {
        auto it = spec.counts.find(c);
        return it == spec.counts.end() ? std::size_t{0} : it->second;
    };

    for (std::size_t i = 0; i < count(covered::kFloor); ++i)
        f.push(jitter({uniform(rng, 0.0, lx), uniform(rng, 0.0, ly), 0.0}), covered::kFloor);

    {
        const std::array<double, 4> walls = {lx, lx, ly, ly};
        for (std::size_t i = 0; i < count(covered::kWall); ++i) {
            const std::size_t w = detail::pick_weighted(walls, rng);
            const double u = uniform(rng, 0.0, 1.0), z = uniform(rng, 0.0, lz);
            Point3 p = w == 0 ? Point3{u * lx, 0.0, z} : w == 1 ? Point3{u * lx, ly, z} : w == 2 ? Point3{0.0, u * ly, z}
                                                                                               : Point3{lx, u * ly, z};
            f.push(jitter(p), covered::kWall);
        }
    }

    {
        std::vector<double> areas;
        for (const auto& b : cobot_boxes) {
            const double dx = b.hi[0] - b.lo[0], dy = b.hi[1] - b.lo[1], dz = b.hi[2] - b.lo[2];
            areas.push_back(2 * (dx * dz + dy * dz) + 2 * dx * dy);
        }
        for (std::size_t i = 0; i < count(covered::kCobot); ++i) {
            const std::size_t b = detail::pick_weighted(areas, rng);
            f.push(jitter(detail::sample_box_surface(cobot_boxes[b], rng, b != 0)), covered::kCobot);
        }
    }

    {
        const Point3 torso_c = {human_at[0], human_at[1], 1.0}, torso_r = {0.22, 0.15, 0.55};
        const Point3 head_c = {human_at[0], human_at[1], 1.68}, head_r = {0.10, 0.10, 0.12};
        const std::array<double, 2> areas = {torso_r[0] * torso_r[2] + torso_r[1] * torso_r[2],
                                             head_r[0] * head_r[2] + head_r[1] * head_r[2]};
        for (std::size_t i = 0; i < count(covered::kHuman); ++i) {
            const bool head = detail::pick_weighted(areas, rng) == 1;
            f.push(jitter(head ? detail::sample_ellipsoid_surface(head_c, head_r, rng)
                               : detail::sample_ellipsoid_surface(torso_c, torso_r, rng)),
                   covered::kHuman);
        }
    }

    for (std::size_t i = 0; i < count(covered::kAgv); ++i)
        f.push(jitter(detail::sample_box_surface(agv_box, rng, false)), covered::kAgv);

    return f;
}

// ---------------------------------------------------------------------------
// I/O

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <class T>
T parse_number(std::string_view tok, const std::string& where) {
    T v{};
    const char* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, v);
    require(ec == std::errc{} && ptr == end, where + ": non-numeric token '" + std::string(tok) + "'",
            ErrorKind::format);
    return v;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline void write_frame(const PointFrame& f, std::ostream& out) {
    f.validate();
    out << "GZSL-PF v1 " << f.size() << '\n';
    for (std::size_t i = 0; i < f.size(); ++i) {
        const auto& p = f.points[i];
        out << detail::format_double(p[0]) << ' ' << detail::format_double(p[1]) << ' '
            << detail::format_double(p[2]) << ' ' << f.labels[i] << '\n';
    }
}

inline void write_frame(const PointFrame& f, const std::filesystem::path& path) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "cannot write frame file " + path.string(), ErrorKind::io);
    write_frame(f, out);
    out.flush();
    require(static_cast<bool>(out), "failed writing frame file " + path.string(), ErrorKind::io);
}

inline PointFrame parse_native_frame(std::istream& in, const std::string& name) {
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), name + ": empty file", ErrorKind::format);
    const auto head = detail::split_ws(line);
    require(head.size() == 3 && head[0] == "GZSL-PF" && head[1] == "v1", name + ": malformed header",
            ErrorKind::format);
    const auto n = detail::parse_number<std::size_t>(head[2], name + " header");
    PointFrame f;
    f.frame_id = name;
    f.points.reserve(n);
    f.labels.reserve(n);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        const auto tok = detail::split_ws(line);
        if (tok.empty()) continue;
        const std::string where = name + " line " + std::to_string(lineno);
        require(tok.size() == 4, where + ": expected 'x y z label'", ErrorKind::format);
        require(f.size() < n, "point count mismatch: header says " + std::to_string(n) + ", file has more rows",
                ErrorKind::format);
        f.push({detail::parse_number<double>(tok[0], where), detail::parse_number<double>(tok[1], where),
                detail::parse_number<double>(tok[2], where)},
               detail::parse_number<ClassId>(tok[3], where));
    }
    require(f.size() == n, "point count mismatch: header says " + std::to_string(n) + ", file has " +
                               std::to_string(f.size()) + " rows",
            ErrorKind::format);
    f.validate();
    return f;
}

/// ASCII PCD with x, y, z and a `label` or `class` field.
inline PointFrame parse_pcd_frame(std::istream& in, const std::string& name) {
    std::string line;
    std::vector<std::string> fields;
    std::size_t points = 0;
    bool have_points = false, have_data = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto tok = detail::split_ws(line);
        if (tok.empty() || tok[0].starts_with("#")) continue;
        if (tok[0] == "FIELDS") {
            fields.assign(tok.begin() + 1, tok.end());
        } else if (tok[0] == "POINTS") {
            require(tok.size() == 2, name + ": malformed header (POINTS)", ErrorKind::format);
            points = detail::parse_number<std::size_t>(tok[1], name + " POINTS");
            have_points = true;
        } else if (tok[0] == "DATA") {
            require(tok.size() == 2 && tok[1] == "ascii", name + ": only DATA ascii is supported", ErrorKind::format);
            have_data = true;
            break;
        }
    }
    require(have_data && have_points && !fields.empty(), name + ": malformed header", ErrorKind::format);
    auto col = [&](std::initializer_list<std::string_view> names) -> std::ptrdiff_t {
        for (std::size_t i = 0; i < fields.size(); ++i)
            for (auto n : names)
                if (fields[i] == n) return static_cast<std::ptrdiff_t>(i);
        return -1;
    };
    const auto cx = col({"x"}), cy = col({"y"}), cz = col({"z"}), cl = col({"label", "class"});
    require(cx >= 0 && cy >= 0 && cz >= 0 && cl >= 0, name + ": malformed header (FIELDS needs x y z label)",
            ErrorKind::format);
    PointFrame f;
    f.frame_id = name;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto tok = detail::split_ws(line);
        if (tok.empty()) continue;
        const std::string where = name + " data row " + std::to_string(lineno);
        require(tok.size() == fields.size(), where + ": wrong number of values", ErrorKind::format);
        require(f.size() < points, "point count mismatch: POINTS " + std::to_string(points) + ", file has more rows",
                ErrorKind::format);
        const auto label = detail::parse_number<double>(tok[static_cast<std::size_t>(cl)], where);
        require(label == std::floor(label), where + ": label is not an integer", ErrorKind::format);
        f.push({detail::parse_number<double>(tok[static_cast<std::size_t>(cx)], where),
                detail::parse_number<double>(tok[static_cast<std::size_t>(cy)], where),
                detail::parse_number<double>(tok[static_cast<std::size_t>(cz)], where)},
               static_cast<ClassId>(label));
    }
    require(f.size() == points, "point count mismatch: POINTS " + std::to_string(points) + ", file has " +
                                    std::to_string(f.size()) + " rows",
            ErrorKind::format);
    f.validate();
    return f;
}

inline void write_pcd_frame(const PointFrame& f, const std::filesystem::path& path) {
    f.validate();
    std::ofstream out(path);
    require(static_cast<bool>(out), "cannot write frame file " + path.string(), ErrorKind::io);
    out << "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS x y z label\nSIZE 8 8 8 4\n"
        << "TYPE F F F U\nCOUNT 1 1 1 1\nWIDTH " << f.size() << "\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS "
        << f.size() << "\nDATA ascii\n";
    for (std::size_t i = 0; i < f.size(); ++i) {
        const auto& p = f.points[i];
        out << detail::format_double(p[0]) << ' ' << detail::format_double(p[1]) << ' '
            << detail::format_double(p[2]) << ' ' << f.labels[i] << '\n';
    }
    require(static_cast<bool>(out), "failed writing frame file " + path.string(), ErrorKind::io);
}

/// Reads a native frame, or ASCII PCD when the extension is `.pcd`.
inline PointFrame load_frame(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open frame file " + path.string(), ErrorKind::io);
    const std::string name = path.stem().string();
    if (path.extension() == ".pcd") return parse_pcd_frame(in, name);
    return parse_native_frame(in, name);
}

/// All frame files (native `.pf` / `.txt`, or `.pcd`) in a directory, sorted by name; or the single file.
inline std::vector<PointFrame> load_frames(const std::filesystem::path& path) {
    std::vector<PointFrame> frames;
    if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(path)) {
            const auto ext = e.path().extension();
            if (e.is_regular_file() && (ext == ".pf" || ext == ".pcd" || ext == ".txt")) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) frames.push_back(load_frame(f));
    } else {
        require(std::filesystem::exists(path), "cannot open frame file " + path.string(), ErrorKind::io);
        frames.push_back(load_frame(path));
    }
    return frames;
}

// ---------------------------------------------------------------------------
// Partitioning and batching

enum class SplitMode { backbone_training, gzsl_eval };

/// Frames restricted to the points a stage may see. In backbone-training
/// mode only seen-class points survive; in gzsl-eval mode every labeled
/// point survives and `is_seen` tags it.
struct PartitionedFrames {
    std::vector<PointFrame> frames;
    std::vector<std::vector<bool>> is_seen;
    std::size_t seen_points = 0;
    std::size_t unseen_points = 0;
};

inline PartitionedFrames split_frames(std::span<const PointFrame> frames, const SplitConfig& split, SplitMode mode) {
    split.validate();
    PartitionedFrames out;
    for (const auto& f : frames) {
        PointFrame g;
        g.frame_id = f.frame_id;
        std::vector<bool> tags;
        for (std::size_t i = 0; i < f.size(); ++i) {
            const ClassId l = f.labels[i];
            const bool seen = split.is_seen(l);
            const bool keep = mode == SplitMode::backbone_training ? seen : (seen || split.is_unseen(l));
            if (!keep) continue;
            g.push(f.points[i], l);
            tags.push_back(seen);
            ++(seen ? out.seen_points : out.unseen_points);
        }
        out.frames.push_back(std::move(g));
        out.is_seen.push_back(std::move(tags));
    }
    return out;
}

struct Batch {
    std::vector<std::size_t> indices;
    std::vector<double> weights;  // per-sample loss weights; all 1 unless class weighting is on
};

/// Inverse-frequency weights, normalized so the per-sample mean is 1.
inline std::map<ClassId, double> inverse_frequency_weights(std::span<const ClassId> labels) {
    std::map<ClassId, std::size_t> counts;
    for (ClassId l : labels) ++counts[l];
    std::map<ClassId, double> w;
    const double n = static_cast<double>(labels.size());
    const double c = static_cast<double>(counts.size());
    for (const auto& [cls, k] : counts) w[cls] = n / (c * static_cast<double>(k));
    return w;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    // Fisher-Yates with explicit draws (std::shuffle's algorithm is unspecified).
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

/// Seeded shuffle into batches; the last batch may be short.
inline std::vector<Batch> make_batches(std::span<const ClassId> labels, std::size_t batch_size, std::uint64_t seed,
                                       bool class_weights = false) {
    require(batch_size >= 1, "make_batches: batch size must be at least 1");
    const auto order = shuffled_indices(labels.size(), seed);
    std::map<ClassId, double> w;
    if (class_weights) w = inverse_frequency_weights(labels);
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        Batch b;
        const std::size_t end = std::min(order.size(), start + batch_size);
        for (std::size_t i = start; i < end; ++i) {
            b.indices.push_back(order[i]);
            b.weights.push_back(class_weights ? w.at(labels[order[i]]) : 1.0);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace gzsl
