#pragma once

// Class prototype vectors conditioning the feature generator.
//
// File format (UTF-8 text):
//   GZSL-PROTO v1
//   <class_id> <class_name> <v1> ... <vD>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "numerics.hpp"

namespace gzsl {

using ClassId = int;

/// Disjoint seen / unseen label sets.
struct SplitConfig {
    std::set<ClassId> seen;
    std::set<ClassId> unseen;

    void validate() const {
        for (ClassId c : seen)
            require(!unseen.contains(c), "split: class " + std::to_string(c) + " is both seen and unseen",
                    ErrorKind::config);
    }
    [[nodiscard]] std::set<ClassId> all() const {
        std::set<ClassId> u = seen;
        u.insert(unseen.begin(), unseen.end());
        return u;
    }
    [[nodiscard]] bool is_seen(ClassId c) const { return seen.contains(c); }
    [[nodiscard]] bool is_unseen(ClassId c) const { return unseen.contains(c); }

    friend bool operator==(const SplitConfig&, const SplitConfig&) = default;
};

struct ClassPrototypeTable {
    std::size_t dim = 0;
    std::map<ClassId, Vector> vectors;
    std::map<ClassId, std::string> names;
    SplitConfig split;

    [[nodiscard]] const Vector& at(ClassId c) const {
        auto it = vectors.find(c);
        require(it != vectors.end(), "missing prototype for class " + std::to_string(c));
        return it->second;
    }
    [[nodiscard]] bool contains(ClassId c) const { return vectors.contains(c); }
};

inline void normalize_in_place(Vector& v) {
    const double n = l2_norm(v);
    require(n > 0.0, "prototype has zero norm");
    for (double& x : v) x /= n;
}

inline void check_split_coverage(const ClassPrototypeTable& t) {
    t.split.validate();
    for (ClassId c : t.split.all())
        require(t.vectors.contains(c), "missing prototype for class " + std::to_string(c));
}

inline ClassPrototypeTable parse_prototypes(std::istream& in, const SplitConfig& split) {
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "prototype file is empty", ErrorKind::format);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    require(line == "GZSL-PROTO v1", "prototype file: bad header '" + line + "'", ErrorKind::format);
    ClassPrototypeTable t;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        ClassId id = 0;
        std::string name;
        if (!(ls >> id)) {
            std::string rest;
            std::istringstream probe(line);
            if (!(probe >> rest)) continue;  // blank line
            throw Error(ErrorKind::format, "prototype file line " + std::to_string(lineno) + ": bad class id");
        }
        require(static_cast<bool>(ls >> name), "prototype file line " + std::to_string(lineno) + ": missing name",
                ErrorKind::format);
        Vector v;
        std::string tok;
        while (ls >> tok) {
            std::size_t used = 0;
            double x = 0.0;
            try {
                x = std::stod(tok, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            require(used == tok.size() && std::isfinite(x),
                    "prototype file line " + std::to_string(lineno) + ": non-numeric token '" + tok + "'",
                    ErrorKind::format);
            v.push_back(x);
        }
        require(!v.empty(), "prototype file line " + std::to_string(lineno) + ": no values", ErrorKind::format);
        if (t.dim == 0) t.dim = v.size();
        require(v.size() == t.dim, "dimension mismatch: line " + std::to_string(lineno) + " has " +
                                       std::to_string(v.size()) + " values, expected " + std::to_string(t.dim),
                ErrorKind::format);
        require(!t.vectors.contains(id), "duplicate class id " + std::to_string(id), ErrorKind::format);
        normalize_in_place(v);
        t.vectors.emplace(id, std::move(v));
        t.names.emplace(id, name);
    }
    t.split = split;
    check_split_coverage(t);
    return t;
}

inline ClassPrototypeTable load_prototypes(const std::filesystem::path& path, const SplitConfig& split) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open prototype file " + path.string(), ErrorKind::io);
    return parse_prototypes(in, split);
}

inline void write_prototypes(const ClassPrototypeTable& t, const std::filesystem::path& path) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "cannot write prototype file " + path.string(), ErrorKind::io);
    out << "GZSL-PROTO v1\n";
    out.precision(17);
    for (const auto& [id, v] : t.vectors) {
        auto it = t.names.find(id);
        out << id << ' ' << (it == t.names.end() ? "class" + std::to_string(id) : it->second);
        for (double x : v) out << ' ' << x;
        out << '\n';
    }
    require(static_cast<bool>(out), "failed writing prototype file " + path.string(), ErrorKind::io);
}

/// Deterministic unit-norm prototype for one class name.
inline Vector synthesize_prototype(const std::string& name, std::size_t dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "prototype:" + name));
    Vector v = normal_vector(rng, dim);
    normalize_in_place(v);
    return v;
}

/// One prototype per (id, name) pair; vectors depend only on (name, dim, seed).
inline ClassPrototypeTable synthesize_prototypes(const std::vector<std::pair<ClassId, std::string>>& classes,
                                                 std::size_t dim, std::uint64_t seed, const SplitConfig& split) {
    require(dim >= 2, "synthesize_prototypes: D must be at least 2", ErrorKind::config);
    ClassPrototypeTable t;
    t.dim = dim;
    std::set<std::string> seen_names;
    for (const auto& [id, name] : classes) {
        require(seen_names.insert(name).second, "synthesize_prototypes: duplicate class name '" + name + "'");
        require(!t.vectors.contains(id), "synthesize_prototypes: duplicate class id " + std::to_string(id));
        t.vectors.emplace(id, synthesize_prototype(name, dim, seed));
        t.names.emplace(id, name);
    }
    t.split = split;
    check_split_coverage(t);
    return t;
}

}  // namespace gzsl
