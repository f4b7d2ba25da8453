#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ehr/common.hpp"

namespace ehr::synthgen {

// One supervised outcome: a logistic model over the latent condition
// indicator vector. The intercept is calibrated at generation time so the
// empirical prevalence lands on target_prevalence.
struct TaskSpec {
    std::string name;
    std::vector<double> weights;  // length n_latent_conditions
    double target_prevalence = 0.1;
};

struct GeneratorConfig {
    int64_t n_patients = 7400;
    int vocab_size = 600;
    int n_latent_conditions = 24;
    int words_per_condition = 20;
    int notes_per_patient_min = 6;
    int notes_per_patient_max = 20;
    int words_per_note_min = 20;
    int words_per_note_max = 60;
    double negation_rate = 0.10;
    // Share of note tokens drawn from the patient's active condition
    // lexicons; the rest is background noise.
    double signal_rate = 0.55;
    double condition_prevalence_max = 0.30;
    double condition_prevalence_min = 0.03;
    std::vector<TaskSpec> tasks;  // empty -> default_tasks()
    int observation_days = 365;
    int followup_days = 182;
    int relation_pairs = 6;   // (drug, indication) pairs per relation
    int relation_floor = 60;  // min distinct notes each pair is injected into
    uint64_t seed = 1;

    void validate() const;  // throws ConfigError
};

// Utilization tasks (mortality, admission, er_visit) plus one onset task per
// dense condition. Prevalences are desk-scale so that stratified subsampling
// at 20% stays feasible on a few thousand patients.
std::vector<TaskSpec> default_tasks(int n_conditions);

GeneratorConfig default_config();

// A note is an unordered multiset of (word, negated) occurrences.
struct TokenCount {
    uint32_t word = 0;  // index into vocabulary_universe
    bool negated = false;
    uint32_t count = 0;

    friend bool operator==(const TokenCount&, const TokenCount&) = default;
};

struct RawNote {
    int day = 0;
    std::vector<TokenCount> tokens;  // sorted by (word, negated), counts >= 1

    uint32_t total_count() const {
        uint32_t n = 0;
        for (const auto& t : tokens) n += t.count;
        return n;
    }
};

struct PatientRecord {
    int64_t patient_id = 0;
    int end_of_record = 0;
    std::optional<int> death_day;
    std::vector<RawNote> notes;                  // day non-decreasing
    std::vector<std::pair<int, int>> diagnoses;  // (day, condition id), day-sorted
    std::vector<uint8_t> latent;                 // condition indicator vector
    std::map<std::string, int> outcomes;         // task -> {0,1}
    std::map<std::string, int> outcome_events;   // task -> event day, present iff outcome=1
};

struct PlantedRelation {
    std::string relation;
    uint32_t drug = 0;
    uint32_t indication = 0;
};

struct TaskBayesInfo {
    std::string name;
    std::vector<double> weights;
    double intercept = 0.0;
};

struct CohortDataset {
    GeneratorConfig config;
    std::vector<std::string> vocabulary_universe;
    std::vector<std::vector<uint32_t>> condition_lexicon;  // condition -> word ids
    std::vector<PlantedRelation> planted_relations;
    std::vector<TaskBayesInfo> bayes_info;
    std::vector<PatientRecord> patients;

    const TaskBayesInfo& bayes_for(const std::string& task) const;
};

// Deterministic in (config, seed); per-patient RNG streams are keyed by
// (seed, patient_id) so generation order is irrelevant.
CohortDataset generate_cohort(const GeneratorConfig& config);

// True generating score of a patient for one task.
double bayes_score(const TaskBayesInfo& info, const PatientRecord& patient);

// AUROC of the true generating score against the realized labels; the
// ceiling any text-derived representation is calibrated against.
double bayes_auroc(const CohortDataset& dataset, const std::string& task);

// JSON Lines: one header line (config echo + universe + planted structure),
// then one patient per line.
void save_cohort(const CohortDataset& dataset, const std::string& path);
CohortDataset load_cohort(const std::string& path);

// TSV: relation <TAB> drug_token <TAB> indication_token
void save_relations_tsv(const CohortDataset& dataset, const std::string& path);

}  // namespace ehr::synthgen
