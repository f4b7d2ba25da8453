#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ehr/corpus.hpp"
#include "ehr/embed.hpp"

namespace ehr::baselines {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using embed::PatientRepresentation;
using embed::RowMatrixXd;

// Sparse term-by-patient count matrix over a capped vocabulary.
struct TermPatientMatrix {
    std::vector<uint32_t> row_words;     // selected vocab ids, ascending
    std::vector<int64_t> col_patients;
    std::vector<std::vector<std::pair<uint32_t, double>>> cols;  // (row index, count)

    int n_rows() const { return static_cast<int>(row_words.size()); }
    int n_cols() const { return static_cast<int>(col_patients.size()); }
};

// Summed observation-era counts per patient, restricted to a capped
// vocabulary chosen by training-subsample frequency.
TermPatientMatrix build_term_patient_matrix(std::span<const corpus::EraView> eras,
                                            const std::vector<uint32_t>& row_words);

// Top-cap vocab ids by total count over the given eras; ties to lower id.
std::vector<uint32_t> select_top_words(std::span<const corpus::EraView> eras, int cap);

struct TfidfResult {
    std::vector<uint32_t> selected;  // ascending vocab ids
    std::vector<double> idf;         // aligned with selected
    std::map<int64_t, PatientRepresentation> reps;
};

// Vocabulary and document frequencies come from the training eras only;
// every era is then projected onto that vocabulary/idf table.
TfidfResult tfidf_represent(std::span<const corpus::EraView> train_eras,
                            std::span<const corpus::EraView> all_eras, int vocab_cap);

struct LsaModel {
    RowMatrixXd projection;     // V' x K, orthonormal columns
    VectorXd singular_values;   // descending
    int k = 0;
    std::vector<uint32_t> row_words;
    double relative_residual = 0.0;  // ||A - A_k||_F / ||A||_F of the fit matrix
};

// Top-K singular triplets by block power iteration with per-step
// orthonormalization and a Rayleigh-Ritz finish.
LsaModel truncated_svd(const TermPatientMatrix& matrix, int k, uint64_t seed = 7,
                       int max_iterations = 300, double tol = 1e-11);

// Projection of a patient's summed bag onto the K latent dimensions.
PatientRepresentation lsa_represent(const LsaModel& model, const corpus::BagOfWords& patient_bag);

// Model files use the plain decimal text layout of the embedding format.
void save_lsa(const LsaModel& model, const std::string& path);
LsaModel load_lsa(const std::string& path);

struct LdaModel {
    int n_topics = 0;
    RowMatrixXd topic_word;  // K x V', rows sum to 1
    double alpha = 0.0;      // document-topic smoothing
    double beta = 0.0;       // topic-word smoothing
    std::vector<uint32_t> row_words;
    uint64_t seed = 0;
};

// Collapsed Gibbs sampling over token-topic assignments; topic-word
// distributions from smoothed counts at the final sweep. Documents are notes.
LdaModel fit_lda(std::span<const corpus::BagOfWords> train_notes, int n_topics, int iterations,
                 double alpha, double beta, uint64_t seed);

enum class LdaPooling { Mean, Max };

// Per-note topic posterior by short Gibbs inference with frozen topics
// (25 sweeps), pooled element-wise across notes.
PatientRepresentation lda_represent(const LdaModel& model, const corpus::EraView& era,
                                    LdaPooling pooling);

VectorXd lda_note_posterior(const LdaModel& model, const corpus::BagOfWords& bag,
                            uint64_t seed);

void save_lda(const LdaModel& model, const std::string& path);
LdaModel load_lda(const std::string& path);

}  // namespace ehr::baselines
