#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ehr/corpus.hpp"

namespace ehr::embed {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Aggr { Min, Mean, Max };
const char* aggr_name(Aggr a);
Aggr aggr_from_name(const std::string& name);

// Flat token stream; segments never share context windows. Each note
// repetition is its own segment.
struct ShuffledCorpus {
    std::vector<uint32_t> tokens;
    std::vector<size_t> offsets;  // segment k = tokens[offsets[k], offsets[k+1])

    size_t n_segments() const { return offsets.empty() ? 0 : offsets.size() - 1; }
    std::span<const uint32_t> segment(size_t k) const {
        return {tokens.data() + offsets[k], tokens.data() + offsets[k + 1]};
    }
};

// Symmetric sparse co-occurrence weights. Entries are stored once with
// i <= j; X(a,b) == X(b,a) by construction. Weights are accumulated as
// integer multiples of 1/lcm(1..W), so shard merge order never changes a bit.
struct CooccurrenceTable {
    struct Entry {
        uint32_t i = 0;
        uint32_t j = 0;  // i <= j
        double x = 0.0;
    };
    std::vector<Entry> entries;  // sorted by (i, j)
    uint32_t n_words = 0;
    double total_mass = 0.0;

    double lookup(uint32_t a, uint32_t b) const;
};

struct EmbeddingMatrix {
    int dim = 0;
    RowMatrixXd vectors;            // V x dim; uncovered rows are zero
    std::vector<uint8_t> covered;   // per word id
    std::string source;             // glove | imported | rnn | flat | random
    Eigen::VectorXd bias_main;      // optional, size 0 when absent
    Eigen::VectorXd bias_context;

    size_t n_words() const { return covered.size(); }
    bool is_covered(uint32_t id) const { return id < covered.size() && covered[id] != 0; }
    size_t coverage_count() const;
};

struct GloveConfig {
    int dim = 64;
    int window = 10;
    int iterations = 25;
    int repetitions = 2;
    double x_max = 10.0;
    double alpha = 0.75;
    double learning_rate = 0.05;
    uint64_t seed = 1;

    void validate() const;
};

struct GloveTrainResult {
    EmbeddingMatrix embeddings;
    std::vector<double> epoch_objective;  // weighted objective at frozen params, per epoch
};

struct PatientRepresentation {
    std::vector<double> values;
    std::string method;

    int dim() const { return static_cast<int>(values.size()); }
};

// Every observation-era note expands to `repetitions` independent uniform
// permutations of its token multiset, emitted as separate segments.
ShuffledCorpus build_shuffled_corpus(std::span<const corpus::EraView> eras, size_t vocab_size,
                                     int repetitions, uint64_t seed);

// 1/distance weighting within a window, windows never cross segment
// boundaries. n_shards > 1 splits segments round-robin and merges by
// addition; the result is identical for any shard count.
CooccurrenceTable count_cooccurrences(const ShuffledCorpus& corpus, int window, int n_shards = 1);

void save_cooccurrences(const CooccurrenceTable& table, const std::string& path);

// AdaGrad on the weighted least-squares GloVe objective; emitted vectors are
// main + context summed, biases retained.
GloveTrainResult train_glove(const CooccurrenceTable& table, const GloveConfig& config);

// Text format: one line per word, `token v1 v2 ... vd`.
EmbeddingMatrix import_embeddings(const std::string& path, const corpus::Vocabulary& vocab);
void export_embeddings(const EmbeddingMatrix& emb, const corpus::Vocabulary& vocab,
                       const std::string& path);

// Element-wise aggregate over the distinct covered words of a bag. Mean
// weights each distinct word equally unless count_weighted is set.
// nullopt when no word of the bag is covered.
std::optional<Eigen::VectorXd> pool_words(const corpus::BagOfWords& bag,
                                          const EmbeddingMatrix& emb, Aggr aggr,
                                          bool count_weighted = false);

Eigen::VectorXd pool_notes(const std::vector<Eigen::VectorXd>& note_vectors, Aggr aggr);

// Two-level pooling per (source, aggregator) pair, concatenated
// source-major. nullopt when some source covers none of the patient's notes.
std::optional<PatientRepresentation> represent_patient(
    const corpus::EraView& era, std::span<const EmbeddingMatrix* const> sources,
    std::span<const Aggr> recipe, bool count_weighted = false);

}  // namespace ehr::embed
