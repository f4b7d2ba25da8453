#include "ehr/embed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace ehr::embed {

const char* aggr_name(Aggr a) {
    switch (a) {
        case Aggr::Min: return "min";
        case Aggr::Mean: return "mean";
        case Aggr::Max: return "max";
    }
    return "?";
}

Aggr aggr_from_name(const std::string& name) {
    if (name == "min") return Aggr::Min;
    if (name == "mean") return Aggr::Mean;
    if (name == "max") return Aggr::Max;
    throw ConfigError("unknown aggregator: " + name);
}

void GloveConfig::validate() const {
    if (dim < 1) throw ConfigError("glove dim must be >= 1");
    if (window < 1) throw ConfigError("glove window must be >= 1");
    if (window > 40) throw ConfigError("glove window above 40 is unsupported");
    if (iterations < 0) throw ConfigError("glove iterations must be >= 0");
    if (repetitions < 1) throw ConfigError("glove repetitions must be >= 1");
    if (alpha <= 0.0 || alpha > 1.0) throw ConfigError("glove alpha must be in (0,1]");
    if (x_max <= 0.0) throw ConfigError("glove x_max must be > 0");
    if (learning_rate <= 0.0) throw ConfigError("glove learning_rate must be > 0");
}

double CooccurrenceTable::lookup(uint32_t a, uint32_t b) const {
    const uint32_t i = std::min(a, b), j = std::max(a, b);
    auto it = std::lower_bound(entries.begin(), entries.end(), std::make_pair(i, j),
                               [](const Entry& e, const std::pair<uint32_t, uint32_t>& key) {
                                   return std::make_pair(e.i, e.j) < key;
                               });
    if (it == entries.end() || it->i != i || it->j != j) return 0.0;
    return it->x;
}

size_t EmbeddingMatrix::coverage_count() const {
    size_t n = 0;
    for (uint8_t c : covered) n += (c != 0);
    return n;
}

ShuffledCorpus build_shuffled_corpus(std::span<const corpus::EraView> eras, size_t vocab_size,
                                     int repetitions, uint64_t seed) {
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
    ShuffledCorpus out;
    out.offsets.push_back(0);
    Rng rng(derive_seed(seed, "shuffle-corpus"));
    std::vector<uint32_t> scratch;
    for (const auto& era : eras) {
        for (const auto& note : era.notes) {
            scratch.clear();
            for (const auto& [id, count] : note.bag.items) {
                if (id >= vocab_size) throw ConfigError("bag word id outside vocabulary");
                for (uint32_t c = 0; c < count; ++c) scratch.push_back(id);
            }
            if (scratch.empty()) continue;
            for (int r = 0; r < repetitions; ++r) {
                std::vector<uint32_t> perm = scratch;
                rng.shuffle(perm);
                out.tokens.insert(out.tokens.end(), perm.begin(), perm.end());
                out.offsets.push_back(out.tokens.size());
            }
        }
    }
    return out;
}

namespace {

int64_t lcm_upto(int w) {
    int64_t l = 1;
    for (int k = 2; k <= w; ++k) l = std::lcm(l, static_cast<int64_t>(k));
    return l;
}

using PairKey = uint64_t;
inline PairKey pair_key(uint32_t i, uint32_t j) {
    return (static_cast<uint64_t>(i) << 32) | j;
}

}  // namespace

CooccurrenceTable count_cooccurrences(const ShuffledCorpus& corpus, int window, int n_shards) {
    if (window < 1) throw ConfigError("window must be >= 1");
    if (window > 40) throw ConfigError("window above 40 is unsupported");
    if (n_shards < 1) throw ConfigError("n_shards must be >= 1");

    const int64_t denom = lcm_upto(window);
    std::vector<int64_t> unit(window + 1, 0);
    for (int k = 1; k <= window; ++k) unit[k] = denom / k;

    // Integer accumulation makes the merge exact regardless of shard count.
    std::unordered_map<PairKey, int64_t> merged;
    for (int shard = 0; shard < n_shards; ++shard) {
        std::unordered_map<PairKey, int64_t> local;
        for (size_t s = shard; s < corpus.n_segments(); s += static_cast<size_t>(n_shards)) {
            const auto seg = corpus.segment(s);
            const size_t n = seg.size();
            for (size_t a = 0; a < n; ++a) {
                const size_t hi = std::min(n, a + 1 + static_cast<size_t>(window));
                for (size_t b = a + 1; b < hi; ++b) {
                    const uint32_t i = std::min(seg[a], seg[b]);
                    const uint32_t j = std::max(seg[a], seg[b]);
                    local[pair_key(i, j)] += unit[b - a];
                }
            }
        }
        for (const auto& [key, num] : local) merged[key] += num;
    }

    uint32_t max_id = 0;
    for (uint32_t t : corpus.tokens) max_id = std::max(max_id, t);

    CooccurrenceTable table;
    table.n_words = corpus.tokens.empty() ? 0 : max_id + 1;
    table.entries.reserve(merged.size());
    for (const auto& [key, num] : merged) {
        CooccurrenceTable::Entry e;
        e.i = static_cast<uint32_t>(key >> 32);
        e.j = static_cast<uint32_t>(key & 0xffffffffu);
        e.x = static_cast<double>(num) / static_cast<double>(denom);
        table.entries.push_back(e);
    }
    std::sort(table.entries.begin(), table.entries.end(),
              [](const auto& a, const auto& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
    for (const auto& e : table.entries) table.total_mass += (e.i == e.j ? 1.0 : 2.0) * e.x;
    return table;
}

void save_cooccurrences(const CooccurrenceTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    char buf[64];
    for (const auto& e : table.entries) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.x);
        out << e.i << "\t" << e.j << "\t" << buf << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

GloveTrainResult train_glove(const CooccurrenceTable& table, const GloveConfig& config) {
    config.validate();
    if (table.entries.empty()) throw ConfigError("train_glove: empty co-occurrence table");

    const int v = static_cast<int>(table.n_words);
    const int d = config.dim;

    // Directed training entries: each off-diagonal cell is visited in both
    // roles, matching symmetric co-occurrence counts.
    struct Directed {
        uint32_t main;
        uint32_t ctx;
        double log_x;
        double fx;
    };
    std::vector<Directed> work;
    work.reserve(table.entries.size() * 2);
    for (const auto& e : table.entries) {
        const double fx = std::min(1.0, std::pow(e.x / config.x_max, config.alpha));
        const double lx = std::log(e.x);
        work.push_back({e.i, e.j, lx, fx});
        if (e.i != e.j) work.push_back({e.j, e.i, lx, fx});
    }

    Rng rng(derive_seed(config.seed, "glove"));
    RowMatrixXd w_main(v, d), w_ctx(v, d);
    Eigen::VectorXd b_main(v), b_ctx(v);
    const double init = 0.5 / d;
    for (int i = 0; i < v; ++i) {
        for (int k = 0; k < d; ++k) {
            w_main(i, k) = (rng.uniform() * 2.0 - 1.0) * init;
            w_ctx(i, k) = (rng.uniform() * 2.0 - 1.0) * init;
        }
        b_main(i) = (rng.uniform() * 2.0 - 1.0) * init;
        b_ctx(i) = (rng.uniform() * 2.0 - 1.0) * init;
    }

    RowMatrixXd g_main = RowMatrixXd::Ones(v, d), g_ctx = RowMatrixXd::Ones(v, d);
    Eigen::VectorXd gb_main = Eigen::VectorXd::Ones(v), gb_ctx = Eigen::VectorXd::Ones(v);

    auto objective = [&]() {
        double total = 0.0;
        for (const auto& e : work) {
            const double diff = w_main.row(e.main).dot(w_ctx.row(e.ctx)) + b_main(e.main) +
                                b_ctx(e.ctx) - e.log_x;
            total += 0.5 * e.fx * diff * diff;
        }
        return total;
    };

    GloveTrainResult result;
    const double lr = config.learning_rate;
    std::vector<size_t> order(work.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.iterations; ++epoch) {
        result.epoch_objective.push_back(objective());
        rng.shuffle(order);
        for (size_t idx : order) {
            const Directed& e = work[idx];
            auto wm = w_main.row(e.main);
            auto wc = w_ctx.row(e.ctx);
            const double diff = wm.dot(wc) + b_main(e.main) + b_ctx(e.ctx) - e.log_x;
            const double g = e.fx * diff;
            if (!std::isfinite(g))
                throw NumericError("glove: non-finite update at epoch " + std::to_string(epoch));
            for (int k = 0; k < d; ++k) {
                const double gm = g * wc(k);
                const double gc = g * wm(k);
                wm(k) -= lr * gm / std::sqrt(g_main(e.main, k));
                wc(k) -= lr * gc / std::sqrt(g_ctx(e.ctx, k));
                g_main(e.main, k) += gm * gm;
                g_ctx(e.ctx, k) += gc * gc;
            }
            b_main(e.main) -= lr * g / std::sqrt(gb_main(e.main));
            b_ctx(e.ctx) -= lr * g / std::sqrt(gb_ctx(e.ctx));
            gb_main(e.main) += g * g;
            gb_ctx(e.ctx) += g * g;
        }
    }
    result.epoch_objective.push_back(objective());
    if (!std::isfinite(result.epoch_objective.back()))
        throw NumericError("glove: non-finite objective after training");

    EmbeddingMatrix emb;
    emb.dim = d;
    emb.vectors = w_main + w_ctx;
    emb.covered.assign(v, 0);
    for (const auto& e : table.entries) {
        emb.covered[e.i] = 1;
        emb.covered[e.j] = 1;
    }
    // Words never seen in the table keep zero rows and stay uncovered.
    for (int i = 0; i < v; ++i)
        if (!emb.covered[i]) emb.vectors.row(i).setZero();
    emb.source = "glove";
    emb.bias_main = b_main;
    emb.bias_context = b_ctx;
    result.embeddings = std::move(emb);
    return result;
}

EmbeddingMatrix import_embeddings(const std::string& path, const corpus::Vocabulary& vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);

    EmbeddingMatrix emb;
    emb.source = "imported";
    emb.covered.assign(vocab.size(), 0);

    std::string line;
    size_t line_no = 0;
    std::vector<std::pair<uint32_t, std::vector<double>>> rows;
    int dim = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string token;
        if (!(ss >> token))
            throw IoError("malformed embedding line " + std::to_string(line_no) + " in " + path);
        std::vector<double> values;
        double x;
        while (ss >> x) values.push_back(x);
        if (!ss.eof())
            throw IoError("malformed embedding line " + std::to_string(line_no) + " in " + path);
        if (values.empty())
            throw IoError("malformed embedding line " + std::to_string(line_no) + " in " + path);
        if (dim < 0) dim = static_cast<int>(values.size());
        if (static_cast<int>(values.size()) != dim)
            throw IoError("inconsistent embedding dimension at line " + std::to_string(line_no) +
                          " in " + path);
        if (auto id = vocab.lookup(token)) rows.emplace_back(*id, std::move(values));
    }
    if (dim < 0) throw IoError("empty embedding file: " + path);

    emb.dim = dim;
    emb.vectors = RowMatrixXd::Zero(static_cast<Eigen::Index>(vocab.size()), dim);
    for (const auto& [id, values] : rows) {
        for (int k = 0; k < dim; ++k) emb.vectors(id, k) = values[k];
        emb.covered[id] = 1;
    }
    return emb;
}

void export_embeddings(const EmbeddingMatrix& emb, const corpus::Vocabulary& vocab,
                       const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    char buf[64];
    for (size_t id = 0; id < emb.covered.size() && id < vocab.size(); ++id) {
        if (!emb.covered[id]) continue;
        out << vocab.tokens[id];
        for (int k = 0; k < emb.dim; ++k) {
            std::snprintf(buf, sizeof(buf), "%.17g", emb.vectors(static_cast<Eigen::Index>(id), k));
            out << " " << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

std::optional<Eigen::VectorXd> pool_words(const corpus::BagOfWords& bag,
                                          const EmbeddingMatrix& emb, Aggr aggr,
                                          bool count_weighted) {
    Eigen::VectorXd acc(emb.dim);
    double weight_sum = 0.0;
    bool first = true;
    for (const auto& [id, count] : bag.items) {
        if (!emb.is_covered(id)) continue;  // skipped, never zero-filled
        const auto row = emb.vectors.row(static_cast<Eigen::Index>(id)).transpose();
        const double w = count_weighted ? static_cast<double>(count) : 1.0;
        if (first) {
            acc = aggr == Aggr::Mean ? (w * row).eval() : row.eval();
            weight_sum = w;
            first = false;
            continue;
        }
        switch (aggr) {
            case Aggr::Min: acc = acc.cwiseMin(row); break;
            case Aggr::Max: acc = acc.cwiseMax(row); break;
            case Aggr::Mean:
                acc += w * row;
                weight_sum += w;
                break;
        }
    }
    if (first) return std::nullopt;
    if (aggr == Aggr::Mean) acc /= weight_sum;
    return acc;
}

Eigen::VectorXd pool_notes(const std::vector<Eigen::VectorXd>& note_vectors, Aggr aggr) {
    if (note_vectors.empty()) throw ConfigError("pool_notes: empty note list");
    Eigen::VectorXd acc = note_vectors.front();
    for (size_t i = 1; i < note_vectors.size(); ++i) {
        switch (aggr) {
            case Aggr::Min: acc = acc.cwiseMin(note_vectors[i]); break;
            case Aggr::Max: acc = acc.cwiseMax(note_vectors[i]); break;
            case Aggr::Mean: acc += note_vectors[i]; break;
        }
    }
    if (aggr == Aggr::Mean) acc /= static_cast<double>(note_vectors.size());
    return acc;
}

std::optional<PatientRepresentation> represent_patient(
    const corpus::EraView& era, std::span<const EmbeddingMatrix* const> sources,
    std::span<const Aggr> recipe, bool count_weighted) {
    if (recipe.empty()) throw ConfigError("represent_patient: empty recipe");
    if (sources.empty()) throw ConfigError("represent_patient: no embedding source");

    PatientRepresentation rep;
    std::string desc;
    for (const EmbeddingMatrix* src : sources) {
        if (!desc.empty()) desc += "+";
        desc += src->source + std::to_string(src->dim) + "(";
        for (size_t a = 0; a < recipe.size(); ++a)
            desc += std::string(a ? "," : "") + aggr_name(recipe[a]);
        desc += ")";
        for (Aggr aggr : recipe) {
            std::vector<Eigen::VectorXd> note_vecs;
            for (const auto& note : era.notes) {
                if (auto v = pool_words(note.bag, *src, aggr, count_weighted))
                    note_vecs.push_back(std::move(*v));
            }
            if (note_vecs.empty()) return std::nullopt;  // uncovered patient under this source
            Eigen::VectorXd pooled = pool_notes(note_vecs, aggr);
            rep.values.insert(rep.values.end(), pooled.data(), pooled.data() + pooled.size());
        }
    }
    rep.method = "ea[" + desc + "]";
    return rep;
}

}  // namespace ehr::embed
