#pragma once

// Knowledge graph storage, construction (subgraph extraction, cleaning,
// fusion) and metapath-guided skip-gram node embeddings.
//
// Entity ids are tokens such as "harbor" or "harbor/2"; the label is the
// part before the first '/', with '_' read as a space. Two ids with the same
// label are duplicates of one concept.

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "cogsc/tensor.hpp"

namespace cogsc::knowledge {

struct Entity {
    std::string id;
    std::string label;
    std::string kind;  // "category" or "concept"

    bool operator==(const Entity&) const = default;
};

struct Triple {
    std::string head, relation, tail;

    auto operator<=>(const Triple&) const = default;
};

inline std::string label_of(const std::string& id) {
    std::string label = id.substr(0, id.find('/'));
    std::replace(label.begin(), label.end(), '_', ' ');
    return label;
}

class KnowledgeGraph {
public:
    void add_entity(const std::string& id, const std::string& kind = "concept") {
        if (id.empty()) throw std::invalid_argument("entity id must be non-empty");
        auto [it, inserted] = entities_.try_emplace(id, Entity{id, label_of(id), kind});
        if (!inserted && kind == "category") it->second.kind = kind;
    }

    void add_entity(Entity e) { entities_[e.id] = std::move(e); }

    void add_relation(const std::string& r) { relations_.insert(r); }

    void add_triple(const Triple& t) {
        if (!entities_.count(t.head)) throw std::invalid_argument("triple head '" + t.head + "' is not an entity");
        if (!entities_.count(t.tail)) throw std::invalid_argument("triple tail '" + t.tail + "' is not an entity");
        if (!relations_.count(t.relation))
            throw std::invalid_argument("triple relation '" + t.relation + "' is not declared");
        triples_.insert(t);
    }

    /// Maps a detection category onto an existing entity (marked as a category node).
    void set_category(const std::string& category, const std::string& entity_id) {
        auto it = entities_.find(entity_id);
        if (it == entities_.end())
            throw std::invalid_argument("category '" + category + "' maps to unknown entity '" + entity_id + "'");
        for (const auto& [c, id] : categories_)
            if (id == entity_id && c != category)
                throw std::invalid_argument("categories '" + c + "' and '" + category + "' share entity '" +
                                            entity_id + "'");
        it->second.kind = "category";
        categories_[category] = entity_id;
    }

    const std::map<std::string, Entity>& entities() const { return entities_; }
    const std::set<std::string>& relations() const { return relations_; }
    const std::set<Triple>& triples() const { return triples_; }
    const std::map<std::string, std::string>& category_nodes() const { return categories_; }

    bool has_entity(const std::string& id) const { return entities_.count(id) != 0; }
    const Entity& entity(const std::string& id) const { return entities_.at(id); }

    bool is_category_node(const std::string& id) const {
        for (const auto& [_, e] : categories_)
            if (e == id) return true;
        return false;
    }

    std::size_t degree(const std::string& id) const {
        std::size_t d = 0;
        for (const auto& t : triples_) d += (t.head == id) + (t.tail == id);
        return d;
    }

    std::map<std::string, std::size_t> degrees() const {
        std::map<std::string, std::size_t> d;
        for (const auto& [id, _] : entities_) d[id] = 0;
        for (const auto& t : triples_) {
            ++d[t.head];
            ++d[t.tail];
        }
        return d;
    }

    /// Undirected adjacency: neighbour id and relation per incident triple.
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> adjacency() const {
        std::map<std::string, std::vector<std::pair<std::string, std::string>>> adj;
        for (const auto& [id, _] : entities_) adj[id];
        for (const auto& t : triples_) {
            adj[t.head].emplace_back(t.tail, t.relation);
            if (t.head != t.tail) adj[t.tail].emplace_back(t.head, t.relation);
        }
        return adj;
    }

    /// Resolves a category name to the entity whose label matches it.
    std::string resolve(const std::string& name) const {
        if (entities_.count(name)) return name;
        const std::string want = label_of(name);
        for (const auto& [id, e] : entities_)
            if (e.label == want) return id;
        throw std::invalid_argument("cannot resolve '" + name + "' to a knowledge-graph entity");
    }

    void validate() const {
        for (const auto& t : triples_) {
            if (!entities_.count(t.head) || !entities_.count(t.tail) || !relations_.count(t.relation))
                throw std::logic_error("dangling triple " + t.head + " " + t.relation + " " + t.tail);
        }
        std::set<std::string> used;
        for (const auto& [c, id] : categories_) {
            if (!entities_.count(id)) throw std::logic_error("category '" + c + "' maps to missing entity");
            if (!used.insert(id).second) throw std::logic_error("category mapping is not injective");
        }
    }

    bool operator==(const KnowledgeGraph&) const = default;

private:
    std::map<std::string, Entity> entities_;
    std::set<std::string> relations_;
    std::set<Triple> triples_;
    std::map<std::string, std::string> categories_;
};

// ---------------------------------------------------------------------------
// TSV I/O

/// Reads `head<TAB>relation<TAB>tail` lines; '#' starts a comment.
/// Canonical files may also carry `#entity<TAB>id<TAB>kind[<TAB>label]` and
/// `#category<TAB>name<TAB>id` directives.
inline KnowledgeGraph parse_triples(std::istream& in) {
    KnowledgeGraph g;
    std::vector<std::pair<std::string, std::string>> cats;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
        if (cols[0] == "#entity" && (cols.size() == 3 || cols.size() == 4)) {
            g.add_entity(Entity{cols[1], cols.size() == 4 ? cols[3] : label_of(cols[1]), cols[2]});
            continue;
        }
        if (cols[0] == "#category" && cols.size() == 3) {
            cats.emplace_back(cols[1], cols[2]);
            continue;
        }
        if (line[0] == '#') continue;
        if (cols.size() != 3)
            throw std::invalid_argument("triple file line " + std::to_string(lineno) + ": expected 3 tab-separated columns");
        g.add_entity(cols[0]);
        g.add_entity(cols[2]);
        g.add_relation(cols[1]);
        g.add_triple({cols[0], cols[1], cols[2]});
    }
    for (const auto& [c, id] : cats) g.set_category(c, id);
    return g;
}

inline KnowledgeGraph load_triples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open triple file '" + path + "'");
    return parse_triples(in);
}

/// Canonical form: entity and category directives, then sorted triples.
inline void write_graph(std::ostream& out, const KnowledgeGraph& g) {
    for (const auto& [id, e] : g.entities())
        out << "#entity\t" << id << '\t' << e.kind << '\t' << e.label << '\n';
    for (const auto& [c, id] : g.category_nodes()) out << "#category\t" << c << '\t' << id << '\n';
    for (const auto& t : g.triples()) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
}

/// `label<TAB>canonical` per line.
inline std::map<std::string, std::string> parse_synonyms(std::istream& in) {
    std::map<std::string, std::string> table;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::invalid_argument("synonym line without tab: " + line);
        table[label_of(line.substr(0, tab))] = label_of(line.substr(tab + 1));
    }
    return table;
}

// ---------------------------------------------------------------------------
// Construction stages

/// Breadth-first closure of the seed categories up to max_hops. A triple is kept
/// when it was traversed, i.e. both ends are in the closure and one end lies
/// strictly inside the radius.
inline KnowledgeGraph extract_subgraph(const KnowledgeGraph& source, const std::vector<std::string>& seeds,
                                       std::size_t max_hops) {
    std::map<std::string, std::size_t> depth;
    std::deque<std::string> queue;
    std::vector<std::pair<std::string, std::string>> seed_ids;
    for (const auto& s : seeds) {
        std::string id;
        auto it = source.category_nodes().find(s);
        if (it != source.category_nodes().end()) {
            id = it->second;
        } else {
            try {
                id = source.resolve(s);
            } catch (const std::invalid_argument&) {
                throw std::invalid_argument("seed '" + s + "' does not resolve to any entity");
            }
        }
        seed_ids.emplace_back(s, id);
        if (depth.emplace(id, 0).second) queue.push_back(id);
    }
    auto adj = source.adjacency();
    while (!queue.empty()) {
        auto id = queue.front();
        queue.pop_front();
        if (depth[id] >= max_hops) continue;
        for (const auto& [nb, _] : adj[id])
            if (depth.emplace(nb, depth[id] + 1).second) queue.push_back(nb);
    }
    KnowledgeGraph out;
    for (const auto& [id, _] : depth) out.add_entity(source.entity(id));
    for (const auto& t : source.triples()) {
        auto h = depth.find(t.head), tl = depth.find(t.tail);
        if (h == depth.end() || tl == depth.end()) continue;
        if (std::min(h->second, tl->second) >= max_hops) continue;
        out.add_relation(t.relation);
        out.add_triple(t);
    }
    for (const auto& [name, id] : seed_ids) out.set_category(name, id);
    return out;
}

namespace detail {

/// Rebuilds g with ids rewritten through `rep`; drops self-loops and duplicates.
inline KnowledgeGraph remap(const KnowledgeGraph& g, const std::map<std::string, std::string>& rep,
                            const std::map<std::string, std::string>& new_labels = {}) {
    KnowledgeGraph out;
    auto target = [&](const std::string& id) {
        auto it = rep.find(id);
        return it == rep.end() ? id : it->second;
    };
    for (const auto& [id, e] : g.entities()) {
        if (target(id) != id) continue;
        Entity copy = e;
        if (auto it = new_labels.find(id); it != new_labels.end()) copy.label = it->second;
        out.add_entity(copy);
    }
    for (const auto& r : g.relations()) out.add_relation(r);
    for (const auto& t : g.triples()) {
        Triple nt{target(t.head), t.relation, target(t.tail)};
        if (nt.head == nt.tail) continue;
        out.add_triple(nt);
    }
    for (const auto& [c, id] : g.category_nodes()) out.set_category(c, target(id));
    return out;
}

/// Representative of a merge group: an entity already carrying the group label, else the smallest id.
inline std::string representative(const KnowledgeGraph& g, const std::vector<std::string>& group,
                                  const std::string& key) {
    for (const auto& id : group)
        if (g.entity(id).label == key) return id;
    return *std::min_element(group.begin(), group.end());
}

/// Merges groups of ids keyed by `key`; at most one category node per merged group.
template <class KeyFn>
KnowledgeGraph merge_by(const KnowledgeGraph& g, KeyFn key, bool relabel) {
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& [id, e] : g.entities()) groups[key(e)].push_back(id);
    std::map<std::string, std::string> rep, labels;
    for (const auto& [k, ids] : groups) {
        if (ids.size() < 2) {
            if (relabel && !g.is_category_node(ids[0]) && g.entity(ids[0]).label != k) labels[ids[0]] = k;
            continue;
        }
        // Category nodes never merge into each other.
        std::vector<std::string> cats, rest;
        for (const auto& id : ids) (g.is_category_node(id) ? cats : rest).push_back(id);
        std::string r = cats.empty() ? representative(g, rest, k) : cats.front();
        for (const auto& id : rest) rep[id] = r;
        if (relabel && cats.empty()) labels[r] = k;
    }
    return remap(g, rep, labels);
}

}  // namespace detail

/// Merges duplicate labels, then iteratively drops non-category nodes with
/// degree < min_degree. Category nodes are always retained.
inline KnowledgeGraph clean(const KnowledgeGraph& g, std::size_t min_degree) {
    if (min_degree < 1) throw std::invalid_argument("clean: min_degree must be >= 1");
    KnowledgeGraph cur = detail::merge_by(g, [](const Entity& e) { return e.label; }, false);
    for (;;) {
        auto deg = cur.degrees();
        KnowledgeGraph next;
        bool removed = false;
        for (const auto& [id, e] : cur.entities()) {
            if (!cur.is_category_node(id) && deg[id] < min_degree) {
                removed = true;
                continue;
            }
            next.add_entity(e);
        }
        if (!removed) return cur;
        for (const auto& r : cur.relations()) next.add_relation(r);
        for (const auto& t : cur.triples())
            if (next.has_entity(t.head) && next.has_entity(t.tail)) next.add_triple(t);
        for (const auto& [c, id] : cur.category_nodes()) next.set_category(c, id);
        cur = std::move(next);
    }
}

/// Resolves synonym chains to their canonical label. Cycles are rejected.
inline std::map<std::string, std::string> canonicalize_synonyms(const std::map<std::string, std::string>& table) {
    std::map<std::string, std::string> out;
    for (const auto& [from, _] : table) {
        std::set<std::string> seen{from};
        std::string cur = from;
        for (auto it = table.find(cur); it != table.end() && it->second != cur; it = table.find(cur)) {
            cur = it->second;
            if (!seen.insert(cur).second) throw std::invalid_argument("synonym cycle through '" + cur + "'");
        }
        out[from] = cur;
    }
    return out;
}

/// Merges entities whose labels share a canonical synonym; drops resulting self-loops.
inline KnowledgeGraph fuse(const KnowledgeGraph& g, const std::map<std::string, std::string>& synonyms) {
    if (synonyms.empty()) return g;
    auto canon = canonicalize_synonyms(synonyms);
    return detail::merge_by(
        g,
        [&](const Entity& e) {
            auto it = canon.find(e.label);
            return it == canon.end() ? e.label : it->second;
        },
        true);
}

struct BuildOptions {
    std::size_t max_hops = 2;
    std::size_t min_degree = 2;
};

/// extract -> clean -> fuse, with a final cleaning pass because fusion can lower degrees.
inline KnowledgeGraph build_graph(const KnowledgeGraph& source, const std::vector<std::string>& categories,
                                  const std::map<std::string, std::string>& synonyms, const BuildOptions& opt) {
    auto g = extract_subgraph(source, categories, opt.max_hops);
    g = clean(g, opt.min_degree);
    g = fuse(g, synonyms);
    g = clean(g, opt.min_degree);
    g.validate();
    return g;
}

// ---------------------------------------------------------------------------
// Embeddings

inline double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (!(nu > 0) || !(nv > 0)) throw std::invalid_argument("cosine: zero vector");
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

struct WalkConfig {
    std::size_t walks_per_node = 10;
    std::size_t walk_length = 20;
    std::size_t window = 3;
    std::size_t negatives = 5;
    std::size_t epochs = 50;
    double learning_rate = 0.025;
};

struct NodeEmbeddings {
    Tensor table;  // [K x N]
    std::map<std::string, std::size_t> node_index;

    std::span<const double> row(const std::string& id) const {
        const std::size_t n = table.dim(1);
        return table.data().subspan(node_index.at(id) * n, n);
    }
};

/// Random walks that cycle through relation types (round-robin from a per-walk
/// offset), falling back to a uniform neighbour when the scheduled relation is absent.
inline std::vector<std::vector<std::size_t>> metapath_walks(const KnowledgeGraph& g, const WalkConfig& cfg,
                                                            std::mt19937_64& rng) {
    std::vector<std::string> ids;
    std::map<std::string, std::size_t> index;
    for (const auto& [id, _] : g.entities()) {
        index[id] = ids.size();
        ids.push_back(id);
    }
    std::vector<std::string> rels(g.relations().begin(), g.relations().end());
    auto adj = g.adjacency();
    std::vector<std::vector<std::size_t>> walks;
    for (std::size_t w = 0; w < cfg.walks_per_node; ++w) {
        for (std::size_t start = 0; start < ids.size(); ++start) {
            std::vector<std::size_t> walk{start};
            std::size_t offset = rels.empty() ? 0 : std::uniform_int_distribution<std::size_t>(0, rels.size() - 1)(rng);
            std::string cur = ids[start];
            for (std::size_t step = 1; step < cfg.walk_length; ++step) {
                const auto& nbs = adj[cur];
                if (nbs.empty()) break;
                std::vector<std::size_t> pool;
                if (!rels.empty()) {
                    const auto& want = rels[(offset + step - 1) % rels.size()];
                    for (std::size_t i = 0; i < nbs.size(); ++i)
                        if (nbs[i].second == want) pool.push_back(i);
                }
                if (pool.empty()) {
                    pool.resize(nbs.size());
                    std::iota(pool.begin(), pool.end(), std::size_t{0});
                }
                auto pick = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
                cur = nbs[pick].first;
                walk.push_back(index[cur]);
            }
            walks.push_back(std::move(walk));
        }
    }
    return walks;
}

/// Skip-gram with negative sampling over metapath walks.
inline NodeEmbeddings embed_nodes(const KnowledgeGraph& g, std::size_t dim, const WalkConfig& cfg,
                                  std::mt19937_64& rng) {
    if (dim == 0) throw std::invalid_argument("embed_nodes: dimension must be positive");
    const std::size_t k = g.entities().size();
    if (k == 0) throw std::invalid_argument("embed_nodes: empty graph");
    auto walks = metapath_walks(g, cfg, rng);

    std::vector<std::size_t> freq(k, 0);
    std::vector<bool> has_context(k, false);
    for (const auto& w : walks) {
        for (auto n : w) ++freq[n];
        if (w.size() > 1)
            for (auto n : w) has_context[n] = true;
    }
    std::vector<std::string> ids;
    for (const auto& [id, _] : g.entities()) ids.push_back(id);
    std::string missing;
    for (std::size_t i = 0; i < k; ++i)
        if (!has_context[i]) missing += (missing.empty() ? "" : ", ") + ids[i];
    if (!missing.empty()) throw std::invalid_argument("embed_nodes: nodes never visited by a walk: " + missing);

    std::vector<double> weights(k);
    for (std::size_t i = 0; i < k; ++i) weights[i] = std::pow(static_cast<double>(freq[i]), 0.75);
    std::discrete_distribution<std::size_t> negative(weights.begin(), weights.end());

    std::uniform_real_distribution<double> init(-0.5 / static_cast<double>(dim), 0.5 / static_cast<double>(dim));
    std::vector<double> in(k * dim), out(k * dim, 0.0);
    for (auto& v : in) v = init(rng);

    auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-std::clamp(x, -30.0, 30.0))); };
    std::vector<double> buf(dim);
    auto update = [&](std::size_t center, std::size_t target, double label, double lr) {
        double* u = &in[center * dim];
        double* v = &out[target * dim];
        double dot = 0;
        for (std::size_t d = 0; d < dim; ++d) dot += u[d] * v[d];
        const double gcoef = lr * (label - sigmoid(dot));
        for (std::size_t d = 0; d < dim; ++d) {
            buf[d] += gcoef * v[d];
            v[d] += gcoef * u[d];
        }
    };
    const double total = static_cast<double>(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = std::max(cfg.learning_rate * (1.0 - static_cast<double>(epoch) / total), cfg.learning_rate * 1e-3);
        for (const auto& walk : walks) {
            for (std::size_t i = 0; i < walk.size(); ++i) {
                const std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
                const std::size_t hi = std::min(walk.size(), i + cfg.window + 1);
                for (std::size_t j = lo; j < hi; ++j) {
                    if (j == i) continue;
                    std::fill(buf.begin(), buf.end(), 0.0);
                    update(walk[i], walk[j], 1.0, lr);
                    for (std::size_t n = 0; n < cfg.negatives; ++n) {
                        auto neg = negative(rng);
                        if (neg == walk[j]) continue;
                        update(walk[i], neg, 0.0, lr);
                    }
                    double* u = &in[walk[i] * dim];
                    for (std::size_t d = 0; d < dim; ++d) u[d] += buf[d];
                }
            }
        }
    }
    NodeEmbeddings e;
    e.table = Tensor({k, dim}, std::move(in));
    for (std::size_t i = 0; i < k; ++i) e.node_index[ids[i]] = i;
    return e;
}

inline void write_embeddings(std::ostream& os, const NodeEmbeddings& e) {
    const std::size_t k = e.table.dim(0), n = e.table.dim(1);
    os << k << ' ' << n << '\n';
    std::vector<std::string> order(k);
    for (const auto& [id, row] : e.node_index) order[row] = id;
    os << std::setprecision(17);
    for (std::size_t i = 0; i < k; ++i) {
        os << order[i];
        for (std::size_t d = 0; d < n; ++d) os << ' ' << e.table[i * n + d];
        os << '\n';
    }
}

inline NodeEmbeddings read_embeddings(std::istream& is) {
    std::size_t k = 0, n = 0;
    if (!(is >> k >> n) || k == 0 || n == 0) throw std::runtime_error("embeddings: bad header");
    NodeEmbeddings e;
    std::vector<double> v(k * n);
    for (std::size_t i = 0; i < k; ++i) {
        std::string id;
        if (!(is >> id)) throw std::runtime_error("embeddings: truncated");
        e.node_index[id] = i;
        for (std::size_t d = 0; d < n; ++d)
            if (!(is >> v[i * n + d])) throw std::runtime_error("embeddings: truncated row " + id);
    }
    e.table = Tensor({k, n}, std::move(v));
    return e;
}

}  // namespace cogsc::knowledge
