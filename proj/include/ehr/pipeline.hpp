#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ehr/baselines.hpp"
#include "ehr/corpus.hpp"
#include "ehr/embed.hpp"
#include "ehr/evalkit.hpp"
#include "ehr/seqmodel.hpp"
#include "ehr/synthgen.hpp"

// Thin deterministic wrappers over the module pipelines; the CLI binary and
// the test suites call these directly. Module seeds derive from the one
// global seed as hash(seed, module-name).
namespace ehr::cli {

struct RepFile {
    int dim = 0;
    std::string method;
    evalkit::RepMap reps;
};

void save_representations(const std::map<int64_t, embed::PatientRepresentation>& reps,
                          const std::string& method, const std::string& path);
RepFile load_representations(const std::string& path);

void require_artifact(const std::string& path);

struct GenerateArgs {
    synthgen::GeneratorConfig config;
    std::string out_cohort;
    std::string out_relations;
};
void run_generate(const GenerateArgs& args);

struct PreprocessArgs {
    std::string cohort_path;
    int64_t min_notes = 5;
    int64_t max_notes = 0;  // 0 = half of the corpus note count
    int observation_days = 0;  // 0 = from the cohort's generator config
    int followup_days = 0;
    std::array<double, 3> fractions = {0.6, 0.1, 0.3};
    uint64_t seed = 1;
    std::string out_vocab;
    std::string out_eras;
    std::string out_split;
};
void run_preprocess(const PreprocessArgs& args);

struct TrainGloveArgs {
    std::string eras_path;
    std::string vocab_path;
    std::string split_path;  // embeddings are learned from the train split only
    embed::GloveConfig glove;
    uint64_t seed = 1;
    std::string out_embeddings;
    std::string out_cooccurrences;  // optional
    int shards = 1;
};
void run_train_glove(const TrainGloveArgs& args);

struct TrainRnnArgs {
    std::string eras_path;
    std::string vocab_path;
    std::string split_path;
    seqmodel::SequenceModelConfig config;  // vocab_size/n_labels filled from artifacts
    std::string pretrained_embeddings;     // required when init = pretrained
    uint64_t seed = 1;
    std::string out_checkpoint;
    std::string export_embeddings;  // optional
};
void run_train_rnn(const TrainRnnArgs& args);

struct TrainFlatArgs {
    std::string eras_path;
    std::string vocab_path;
    std::string split_path;
    seqmodel::SequenceModelConfig config;
    uint64_t seed = 1;
    std::string out_checkpoint;
    std::string export_embeddings;
};
void run_train_flat(const TrainFlatArgs& args);

struct RepresentArgs {
    std::string eras_path;
    std::string method;  // ea | rnn | concat
    // ea
    std::string vocab_path;
    std::vector<std::string> embedding_paths;
    std::vector<std::string> aggregators = {"min", "mean", "max"};
    bool count_weighted_mean = false;
    // rnn
    std::string checkpoint_path;
    // concat
    std::vector<std::string> input_reps;
    std::string out_reps;
};
void run_represent(const RepresentArgs& args);

struct FitBaselineArgs {
    std::string kind;  // tfidf | lsa | lda
    std::string eras_path;
    std::string split_path;
    int vocab_cap = 15000;
    int svd_k = 600;
    int lda_topics = 20;
    int lda_iterations = 30;
    double lda_alpha = 0.0;  // 0 = 50/K
    double lda_beta = 0.01;
    std::string lda_pooling = "max";
    uint64_t seed = 1;
    std::string out_reps;
    std::string out_model;  // optional for lsa/lda
};
void run_fit_baseline(const FitBaselineArgs& args);

struct EvalCurvesArgs {
    std::string eras_path;
    std::string split_path;
    // method name -> rep file path; "a+b" concatenates two rep files
    std::map<std::string, std::string> reps;
    std::vector<std::string> tasks;  // empty = all tasks found in the eras
    evalkit::CurveParams params;
    std::string out_results;
    std::string out_summary;
};
void run_eval_curves(const EvalCurvesArgs& args);

struct EvalIntrinsicArgs {
    std::string embeddings_path;
    std::string vocab_path;
    std::string relations_path;
    int top_k = 40;
    std::string out_csv;
};
void run_eval_intrinsic(const EvalIntrinsicArgs& args);

struct EvalNotesArgs {
    std::string cohort_path;
    std::string vocab_path;
    std::string rep = "bow";  // bow | embed
    std::string embeddings_path;
    std::string aggregator = "max";
    std::vector<int> targets = {0, 1, 2};
    int max_notes = 1200;
    double train_fraction = 0.6;
    std::vector<int> k_candidates = {1, 3, 5, 7, 9};
    int folds = 5;
    uint64_t seed = 1;
    std::string out_csv;
};
void run_eval_notes(const EvalNotesArgs& args);

struct ReportArgs {
    std::string summary_path;
    std::string out_table;  // optional; always echoed to stdout
    std::string out_svg;    // optional
};
void run_report(const ReportArgs& args);

// CSV writers shared with the acceptance suite.
void write_curve_results_csv(const std::vector<evalkit::CurveCell>& cells,
                             const std::string& path);
void write_curve_summary_csv(const std::vector<evalkit::CurveSummary>& summaries,
                             const std::string& path);

}  // namespace ehr::cli
