#include "ehr/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ehr::baselines {

namespace {

corpus::BagOfWords summed_patient_bag(const corpus::EraView& era) {
    corpus::BagOfWords bag;
    for (const auto& note : era.notes) bag = corpus::merge_bags(bag, note.bag);
    return bag;
}

}  // namespace

std::vector<uint32_t> select_top_words(std::span<const corpus::EraView> eras, int cap) {
    if (cap < 1) throw ConfigError("vocab cap must be >= 1");
    std::unordered_map<uint32_t, int64_t> freq;
    for (const auto& era : eras)
        for (const auto& note : era.notes)
            for (const auto& [id, c] : note.bag.items) freq[id] += c;

    std::vector<std::pair<uint32_t, int64_t>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (items.size() > static_cast<size_t>(cap)) items.resize(cap);

    std::vector<uint32_t> words;
    words.reserve(items.size());
    for (const auto& [id, _] : items) words.push_back(id);
    std::sort(words.begin(), words.end());
    return words;
}

TermPatientMatrix build_term_patient_matrix(std::span<const corpus::EraView> eras,
                                            const std::vector<uint32_t>& row_words) {
    TermPatientMatrix m;
    m.row_words = row_words;
    std::unordered_map<uint32_t, uint32_t> row_of;
    for (uint32_t r = 0; r < row_words.size(); ++r) row_of[row_words[r]] = r;

    for (const auto& era : eras) {
        corpus::BagOfWords bag = summed_patient_bag(era);
        std::vector<std::pair<uint32_t, double>> col;
        for (const auto& [id, c] : bag.items) {
            auto it = row_of.find(id);
            if (it != row_of.end()) col.emplace_back(it->second, static_cast<double>(c));
        }
        m.col_patients.push_back(era.patient_id);
        m.cols.push_back(std::move(col));
    }
    return m;
}

TfidfResult tfidf_represent(std::span<const corpus::EraView> train_eras,
                            std::span<const corpus::EraView> all_eras, int vocab_cap) {
    if (train_eras.empty()) throw ConfigError("tfidf_represent: empty training set");

    TfidfResult result;
    result.selected = select_top_words(train_eras, vocab_cap);
    std::unordered_map<uint32_t, uint32_t> col_of;
    for (uint32_t k = 0; k < result.selected.size(); ++k) col_of[result.selected[k]] = k;

    // Document frequency over training notes.
    std::vector<int64_t> df(result.selected.size(), 0);
    int64_t n_docs = 0;
    for (const auto& era : train_eras) {
        for (const auto& note : era.notes) {
            ++n_docs;
            for (const auto& [id, _] : note.bag.items) {
                auto it = col_of.find(id);
                if (it != col_of.end()) ++df[it->second];
            }
        }
    }
    result.idf.resize(result.selected.size());
    for (size_t k = 0; k < df.size(); ++k)
        result.idf[k] = df[k] > 0
                            ? std::log(static_cast<double>(n_docs) / static_cast<double>(df[k]))
                            : 0.0;  // df=0 at scoring time just zeroes the feature

    for (const auto& era : all_eras) {
        PatientRepresentation rep;
        rep.method = "tfidf" + std::to_string(result.selected.size());
        rep.values.assign(result.selected.size(), 0.0);
        corpus::BagOfWords bag = summed_patient_bag(era);
        for (const auto& [id, c] : bag.items) {
            auto it = col_of.find(id);
            if (it != col_of.end())
                rep.values[it->second] = static_cast<double>(c) * result.idf[it->second];
        }
        result.reps[era.patient_id] = std::move(rep);
    }
    return result;
}

namespace {

// y = A x over the sparse column storage (A is n_rows x n_cols).
MatrixXd mat_times(const TermPatientMatrix& a, const MatrixXd& x) {
    MatrixXd y = MatrixXd::Zero(a.n_rows(), x.cols());
    for (int c = 0; c < a.n_cols(); ++c)
        for (const auto& [r, v] : a.cols[c]) y.row(r) += v * x.row(c);
    return y;
}

MatrixXd mat_transpose_times(const TermPatientMatrix& a, const MatrixXd& x) {
    MatrixXd y = MatrixXd::Zero(a.n_cols(), x.cols());
    for (int c = 0; c < a.n_cols(); ++c)
        for (const auto& [r, v] : a.cols[c]) y.row(c) += v * x.row(r);
    return y;
}

double frobenius_sq(const TermPatientMatrix& a) {
    double f = 0.0;
    for (const auto& col : a.cols)
        for (const auto& [_, v] : col) f += v * v;
    return f;
}

}  // namespace

LsaModel truncated_svd(const TermPatientMatrix& matrix, int k, uint64_t seed, int max_iterations,
                       double tol) {
    const int rows = matrix.n_rows();
    const int cols = matrix.n_cols();
    if (k < 1) throw ConfigError("truncated_svd: k must be >= 1");
    if (k > std::min(rows, cols))
        throw ConfigError("truncated_svd: k exceeds matrix dimensions");

    const int block = std::min(std::min(rows, cols), k + 8);

    // Block power iteration on A^T A with QR re-orthonormalization; the
    // iterate lives in the (smaller) patient dimension of A^T.
    Rng rng(derive_seed(seed, "svd"));
    MatrixXd q(cols, block);
    for (int c = 0; c < block; ++c)
        for (int r = 0; r < cols; ++r) q(r, c) = rng.normal();
    q = Eigen::HouseholderQR<MatrixXd>(q).householderQ() * MatrixXd::Identity(cols, block);

    VectorXd prev_sv = VectorXd::Zero(block);
    for (int it = 0; it < max_iterations; ++it) {
        MatrixXd z = mat_transpose_times(matrix, mat_times(matrix, q));  // (A^T A) Q
        Eigen::HouseholderQR<MatrixXd> qr(z);
        q = qr.householderQ() * MatrixXd::Identity(cols, block);

        MatrixXd aq = mat_times(matrix, q);
        VectorXd sv = aq.colwise().norm();
        std::sort(sv.data(), sv.data() + sv.size(), std::greater<double>());
        const double denom = std::max(1e-300, sv.cwiseAbs().maxCoeff());
        if (it > 1 && (sv - prev_sv).cwiseAbs().maxCoeff() / denom < tol) break;
        prev_sv = sv;
    }

    // Rayleigh-Ritz finish: thin SVD of A Q, rotate back.
    MatrixXd aq = mat_times(matrix, q);
    Eigen::JacobiSVD<MatrixXd> svd(aq, Eigen::ComputeThinU | Eigen::ComputeThinV);

    LsaModel model;
    model.k = k;
    model.row_words = matrix.row_words;
    model.projection = svd.matrixU().leftCols(k);
    model.singular_values = svd.singularValues().head(k);

    const double total = frobenius_sq(matrix);
    const double captured = model.singular_values.squaredNorm();
    model.relative_residual =
        total > 0.0 ? std::sqrt(std::max(0.0, total - captured) / total) : 0.0;
    return model;
}

PatientRepresentation lsa_represent(const LsaModel& model, const corpus::BagOfWords& patient_bag) {
    VectorXd x = VectorXd::Zero(model.projection.rows());
    std::unordered_map<uint32_t, uint32_t> row_of;
    for (uint32_t r = 0; r < model.row_words.size(); ++r) row_of[model.row_words[r]] = r;
    for (const auto& [id, c] : patient_bag.items) {
        auto it = row_of.find(id);
        if (it != row_of.end()) x(it->second) = static_cast<double>(c);
    }
    VectorXd proj = model.projection.transpose() * x;
    PatientRepresentation rep;
    rep.values.assign(proj.data(), proj.data() + proj.size());
    rep.method = "lsa" + std::to_string(model.k);
    return rep;
}

void save_lsa(const LsaModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "lsa " << model.projection.rows() << " " << model.k << "\n";
    char buf[64];
    for (size_t r = 0; r < model.row_words.size(); ++r)
        out << (r ? " " : "") << model.row_words[r];
    out << "\n";
    for (Eigen::Index k = 0; k < model.singular_values.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g", model.singular_values(k));
        out << (k ? " " : "") << buf;
    }
    out << "\n";
    for (Eigen::Index r = 0; r < model.projection.rows(); ++r) {
        for (Eigen::Index c = 0; c < model.projection.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", model.projection(r, c));
            out << (c ? " " : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

LsaModel load_lsa(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string tag;
    Eigen::Index rows;
    int k;
    if (!(in >> tag >> rows >> k) || tag != "lsa") throw IoError("not an LSA model: " + path);
    LsaModel model;
    model.k = k;
    model.row_words.resize(rows);
    for (auto& w : model.row_words)
        if (!(in >> w)) throw IoError("truncated LSA model: " + path);
    model.singular_values.resize(k);
    for (int i = 0; i < k; ++i)
        if (!(in >> model.singular_values(i))) throw IoError("truncated LSA model: " + path);
    model.projection.resize(rows, k);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (int c = 0; c < k; ++c)
            if (!(in >> model.projection(r, c))) throw IoError("truncated LSA model: " + path);
    return model;
}

namespace {

int sample_categorical(Rng& rng, const VectorXd& weights) {
    const double total = weights.sum();
    double u = rng.uniform() * total;
    for (Eigen::Index k = 0; k < weights.size(); ++k) {
        u -= weights(k);
        if (u <= 0.0) return static_cast<int>(k);
    }
    return static_cast<int>(weights.size() - 1);
}

}  // namespace

LdaModel fit_lda(std::span<const corpus::BagOfWords> train_notes, int n_topics, int iterations,
                 double alpha, double beta, uint64_t seed) {
    if (n_topics < 2) throw ConfigError("fit_lda: n_topics must be >= 2");
    if (iterations < 1) throw ConfigError("fit_lda: iterations must be >= 1");

    std::vector<uint32_t> words;
    for (const auto& bag : train_notes)
        for (const auto& [id, _] : bag.items) words.push_back(id);
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    if (words.empty()) throw ConfigError("fit_lda: empty corpus");
    std::unordered_map<uint32_t, uint32_t> row_of;
    for (uint32_t r = 0; r < words.size(); ++r) row_of[words[r]] = r;

    const int v = static_cast<int>(words.size());
    const int n_docs = static_cast<int>(train_notes.size());

    std::vector<std::vector<uint32_t>> doc_tokens(n_docs);
    std::vector<std::vector<int>> assignment(n_docs);
    MatrixXd n_kw = MatrixXd::Zero(n_topics, v);
    VectorXd n_k = VectorXd::Zero(n_topics);
    MatrixXd n_dk = MatrixXd::Zero(n_docs, n_topics);

    Rng rng(derive_seed(seed, "lda-fit"));
    for (int d = 0; d < n_docs; ++d) {
        for (const auto& [id, count] : train_notes[d].items) {
            const uint32_t r = row_of.at(id);
            for (uint32_t c = 0; c < count; ++c) doc_tokens[d].push_back(r);
        }
        assignment[d].resize(doc_tokens[d].size());
        for (size_t i = 0; i < doc_tokens[d].size(); ++i) {
            const int z = static_cast<int>(rng.below(n_topics));
            assignment[d][i] = z;
            n_kw(z, doc_tokens[d][i]) += 1.0;
            n_k(z) += 1.0;
            n_dk(d, z) += 1.0;
        }
    }

    VectorXd weights(n_topics);
    for (int sweep = 0; sweep < iterations; ++sweep) {
        for (int d = 0; d < n_docs; ++d) {
            for (size_t i = 0; i < doc_tokens[d].size(); ++i) {
                const uint32_t w = doc_tokens[d][i];
                const int old_z = assignment[d][i];
                n_kw(old_z, w) -= 1.0;
                n_k(old_z) -= 1.0;
                n_dk(d, old_z) -= 1.0;
                for (int k = 0; k < n_topics; ++k)
                    weights(k) =
                        (n_dk(d, k) + alpha) * (n_kw(k, w) + beta) / (n_k(k) + v * beta);
                const int z = sample_categorical(rng, weights);
                assignment[d][i] = z;
                n_kw(z, w) += 1.0;
                n_k(z) += 1.0;
                n_dk(d, z) += 1.0;
            }
        }
    }

    LdaModel model;
    model.n_topics = n_topics;
    model.alpha = alpha;
    model.beta = beta;
    model.seed = seed;
    model.row_words = words;
    model.topic_word.resize(n_topics, v);
    for (int k = 0; k < n_topics; ++k)
        for (int w = 0; w < v; ++w)
            model.topic_word(k, w) = (n_kw(k, w) + beta) / (n_k(k) + v * beta);
    return model;
}

VectorXd lda_note_posterior(const LdaModel& model, const corpus::BagOfWords& bag, uint64_t seed) {
    constexpr int kSweeps = 25;
    const int k_topics = model.n_topics;

    std::unordered_map<uint32_t, uint32_t> row_of;
    for (uint32_t r = 0; r < model.row_words.size(); ++r) row_of[model.row_words[r]] = r;

    std::vector<uint32_t> tokens;
    for (const auto& [id, count] : bag.items) {
        auto it = row_of.find(id);
        if (it == row_of.end()) continue;
        for (uint32_t c = 0; c < count; ++c) tokens.push_back(it->second);
    }
    if (tokens.empty()) return VectorXd::Constant(k_topics, 1.0 / k_topics);

    Rng rng(derive_seed(seed, "lda-infer"));
    VectorXd n_dk = VectorXd::Zero(k_topics);
    std::vector<int> assignment(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) {
        assignment[i] = static_cast<int>(rng.below(k_topics));
        n_dk(assignment[i]) += 1.0;
    }
    VectorXd weights(k_topics);
    for (int sweep = 0; sweep < kSweeps; ++sweep) {
        for (size_t i = 0; i < tokens.size(); ++i) {
            const int old_z = assignment[i];
            n_dk(old_z) -= 1.0;
            for (int k = 0; k < k_topics; ++k)
                weights(k) = (n_dk(k) + model.alpha) * model.topic_word(k, tokens[i]);
            const int z = sample_categorical(rng, weights);
            assignment[i] = z;
            n_dk(z) += 1.0;
        }
    }
    const double denom = static_cast<double>(tokens.size()) + k_topics * model.alpha;
    return (n_dk.array() + model.alpha).matrix() / denom;
}

PatientRepresentation lda_represent(const LdaModel& model, const corpus::EraView& era,
                                    LdaPooling pooling) {
    std::vector<VectorXd> posteriors;
    for (size_t i = 0; i < era.notes.size(); ++i) {
        const uint64_t note_seed = derive_seed(
            model.seed, "lda-note", (static_cast<uint64_t>(era.patient_id) << 20) ^ i);
        posteriors.push_back(lda_note_posterior(model, era.notes[i].bag, note_seed));
    }
    PatientRepresentation rep;
    rep.method = std::string("lda") + std::to_string(model.n_topics) +
                 (pooling == LdaPooling::Mean ? "-mean" : "-max");
    if (posteriors.empty()) {
        rep.values.assign(model.n_topics, 1.0 / model.n_topics);
        return rep;
    }
    VectorXd acc = posteriors[0];
    for (size_t i = 1; i < posteriors.size(); ++i) {
        if (pooling == LdaPooling::Mean)
            acc += posteriors[i];
        else
            acc = acc.cwiseMax(posteriors[i]);
    }
    if (pooling == LdaPooling::Mean) acc /= static_cast<double>(posteriors.size());
    rep.values.assign(acc.data(), acc.data() + acc.size());
    return rep;
}

void save_lda(const LdaModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    char buf[64];
    out << "lda " << model.n_topics << " " << model.topic_word.cols() << " ";
    std::snprintf(buf, sizeof(buf), "%.17g", model.alpha);
    out << buf << " ";
    std::snprintf(buf, sizeof(buf), "%.17g", model.beta);
    out << buf << " " << model.seed << "\n";
    for (size_t r = 0; r < model.row_words.size(); ++r)
        out << (r ? " " : "") << model.row_words[r];
    out << "\n";
    for (Eigen::Index k = 0; k < model.topic_word.rows(); ++k) {
        for (Eigen::Index w = 0; w < model.topic_word.cols(); ++w) {
            std::snprintf(buf, sizeof(buf), "%.17g", model.topic_word(k, w));
            out << (w ? " " : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

LdaModel load_lda(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string tag;
    int k;
    Eigen::Index v;
    LdaModel model;
    if (!(in >> tag >> k >> v >> model.alpha >> model.beta >> model.seed) || tag != "lda")
        throw IoError("not an LDA model: " + path);
    model.n_topics = k;
    model.row_words.resize(v);
    for (auto& w : model.row_words)
        if (!(in >> w)) throw IoError("truncated LDA model: " + path);
    model.topic_word.resize(k, v);
    for (int r = 0; r < k; ++r)
        for (Eigen::Index c = 0; c < v; ++c)
            if (!(in >> model.topic_word(r, c))) throw IoError("truncated LDA model: " + path);
    return model;
}

}  // namespace ehr::baselines
