#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "ehr/corpus.hpp"
#include "ehr/embed.hpp"
#include "ehr/metrics.hpp"
#include "ehr/synthgen.hpp"

namespace ehr::evalkit {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using embed::PatientRepresentation;

struct RidgeLogisticModel {
    VectorXd coef;  // in standardized feature space when standardize was on
    double intercept = 0.0;
    double lambda = 0.0;
    std::vector<double> lambda_path;
    std::vector<double> cv_deviance;  // mean validation deviance per lambda (inf = skipped)
    VectorXd feature_mean;
    VectorXd feature_scale;
    bool standardized = true;
};

struct RidgeOptions {
    int n_lambda = 50;
    double lambda_decades = 4.0;
    bool standardize = true;
    int max_newton = 60;
    double tol = 1e-8;  // sup-norm of the penalized gradient
};

// L2-penalized logistic regression along a descending lambda path, tuned by
// k-fold cross validation on mean validation deviance (lambda.min), then
// refit on all rows at the chosen lambda. Deviance per lambda is exposed on
// the model. Pass a single-element lambda_path to skip path construction.
RidgeLogisticModel fit_ridge_logistic(const MatrixXd& x, const std::vector<int>& y,
                                      std::vector<double> lambda_path, int folds, uint64_t seed,
                                      const RidgeOptions& options = {});

VectorXd predict_proba(const RidgeLogisticModel& model, const MatrixXd& x);

// Objective the fit minimizes: mean clamped binary cross-entropy plus
// (lambda/2)||beta||^2, intercept unpenalized, in the model's feature space.
double penalized_objective(const MatrixXd& x, const std::vector<int>& y, const VectorXd& coef,
                           double intercept, double lambda);

// auroc and micro_f1 live in ehr/metrics.hpp (included above).

// Exactly round(prevalence*n) positives and the complement of negatives,
// drawn uniformly without replacement.
std::vector<int64_t> stratified_subsample(std::span<const int64_t> ids,
                                          const std::unordered_map<int64_t, int>& labels, int n,
                                          double prevalence, uint64_t seed);

struct CurveCell {
    std::string method;
    std::string task;
    int n = 0;
    int repeat = 0;
    uint64_t seed = 0;
    double auroc = 0.0;
    bool ok = false;
    std::string error;
};

struct CurveSummary {
    std::string method;
    std::string task;
    int n = 0;
    double mean_auroc = 0.0;
    double sem = 0.0;
    int n_ok = 0;
};

struct LearningCurveResult {
    std::vector<CurveCell> cells;
    std::vector<CurveSummary> summaries;

    const CurveSummary& summary(const std::string& method, const std::string& task, int n) const;
};

using RepMap = std::unordered_map<int64_t, std::vector<double>>;

struct LearningCurveInput {
    std::map<std::string, RepMap> representations;  // method -> patient -> vector
    std::unordered_map<int64_t, int> labels;        // task labels for train pool + test
    std::vector<int64_t> train_pool;
    std::vector<int64_t> test_ids;
    std::string task;
};

struct CurveParams {
    std::vector<int> sizes = {125, 250, 500, 1000, 2000, 4000};
    int repeats = 20;
    double prevalence = 0.2;
    int folds = 5;
    uint64_t seed = 1;
    int workers = 1;  // 0 = hardware concurrency
    RidgeOptions ridge;
};

// For each (method, size, repeat): stratified subsample (shared across
// methods at fixed (size, repeat)), ridge fit, AUROC on the full test set at
// its natural prevalence. Fit failures become recorded missing cells.
LearningCurveResult learning_curve(const LearningCurveInput& input, const CurveParams& params);

PatientRepresentation wide_and_deep(const PatientRepresentation& a,
                                    const PatientRepresentation& b);

struct RelationSet {
    // relation name -> resolved (drug_id, indication_id) pairs
    std::map<std::string, std::vector<std::pair<uint32_t, uint32_t>>> relations;
};

// Resolve token pairs against a vocabulary and an embedding's coverage;
// pairs with an uncovered side are dropped.
RelationSet resolve_relations(
    const std::vector<std::tuple<std::string, std::string, std::string>>& triples,
    const corpus::Vocabulary& vocab, const embed::EmbeddingMatrix& emb);

std::vector<std::tuple<std::string, std::string, std::string>> load_relations_tsv(
    const std::string& path);

struct RelatednessRow {
    int queries = 0;
    int successes = 0;
    double ratio = 0.0;
};

// For each ordered pair of distinct relation pairs, query
// e_d1 - e_m1 + e_m2, rank the covered vocabulary by cosine similarity
// (excluding d1, m1, m2) and count success when a top-k neighbor w has
// (w, m2) in the relation. Relations with < 2 covered pairs are skipped.
std::map<std::string, RelatednessRow> relatedness_score(const embed::EmbeddingMatrix& emb,
                                                        const RelationSet& relations, int top_k);

enum class NoteClass : uint8_t { Present = 0, Absent = 1, Questionable = 2, Unmentioned = 3 };
inline constexpr int kNoteClasses = 4;
const char* note_class_name(NoteClass c);

struct NoteEvalSet {
    std::vector<corpus::BagOfWords> notes;
    std::vector<std::string> targets;
    std::vector<std::vector<NoteClass>> labels;  // [note][target]
    std::vector<size_t> train_idx;
    std::vector<size_t> test_idx;
};

// Phenotype-style note labels derived from the generator's condition
// lexicon: plain mention -> Present, negated-only -> Absent, mixed ->
// Questionable, no mention -> Unmentioned.
NoteEvalSet build_note_eval_set(const synthgen::CohortDataset& cohort,
                                const corpus::Vocabulary& vocab,
                                const std::vector<int>& target_conditions, size_t max_notes,
                                double train_fraction, uint64_t seed);

using NoteRepFn = std::function<std::vector<double>(const corpus::BagOfWords&)>;

struct NoteEvalRow {
    std::string target;
    int chosen_k = 0;
    double f1 = 0.0;
};

struct NoteEvalResult {
    std::vector<NoteEvalRow> per_target;
    double mean_f1 = 0.0;
};

// Cosine-distance kNN with k chosen per target by cross-validated micro-F1
// over the candidate list; test micro-F1 from class-summed counts.
NoteEvalResult knn_note_eval(const NoteEvalSet& notes, const NoteRepFn& rep_fn,
                             const std::vector<int>& k_candidates, int folds, uint64_t seed);

}  // namespace ehr::evalkit
