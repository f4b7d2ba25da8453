#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ehr/synthgen.hpp"

using namespace ehr;
using namespace ehr::synthgen;

namespace {

GeneratorConfig small_config(uint64_t seed = 11) {
    GeneratorConfig cfg;
    cfg.n_patients = 150;
    cfg.vocab_size = 320;
    cfg.n_latent_conditions = 6;
    cfg.words_per_condition = 8;
    cfg.notes_per_patient_min = 3;
    cfg.notes_per_patient_max = 8;
    cfg.words_per_note_min = 8;
    cfg.words_per_note_max = 20;
    cfg.relation_pairs = 3;
    cfg.relation_floor = 10;
    cfg.tasks = default_tasks(cfg.n_latent_conditions);
    cfg.seed = seed;
    return cfg;
}

// Fast config for Monte Carlo checks of the outcome model: notes are
// irrelevant there, so keep them minimal.
GeneratorConfig mc_config(int64_t n_patients) {
    GeneratorConfig cfg = small_config();
    cfg.n_patients = n_patients;
    cfg.notes_per_patient_min = 1;
    cfg.notes_per_patient_max = 2;
    cfg.words_per_note_min = 3;
    cfg.words_per_note_max = 6;
    cfg.relation_pairs = 0;
    return cfg;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("same seed produces byte-identical datasets") {
    GeneratorConfig cfg = small_config();
    CohortDataset a = generate_cohort(cfg);
    CohortDataset b = generate_cohort(cfg);
    save_cohort(a, "syn_det_a.jsonl");
    save_cohort(b, "syn_det_b.jsonl");
    CHECK(file_bytes("syn_det_a.jsonl") == file_bytes("syn_det_b.jsonl"));
    std::filesystem::remove("syn_det_a.jsonl");
    std::filesystem::remove("syn_det_b.jsonl");
}

TEST_CASE("negation_rate zero yields no negated tokens") {
    GeneratorConfig cfg = small_config();
    cfg.negation_rate = 0.0;
    CohortDataset ds = generate_cohort(cfg);
    for (const auto& p : ds.patients)
        for (const auto& note : p.notes)
            for (const auto& t : note.tokens) CHECK_FALSE(t.negated);
}

TEST_CASE("zero outcome weights reproduce the calibrated base rate") {
    GeneratorConfig cfg = mc_config(10000);
    cfg.tasks.clear();
    TaskSpec t;
    t.name = "null_task";
    t.weights.assign(cfg.n_latent_conditions, 0.0);
    t.target_prevalence = 0.15;
    cfg.tasks.push_back(t);
    CohortDataset ds = generate_cohort(cfg);

    double prev = 0.0;
    for (const auto& p : ds.patients) prev += p.outcomes.at("null_task");
    prev /= static_cast<double>(ds.patients.size());
    // Monte Carlo oracle: with zero weights every patient draws Bernoulli(p0)
    // with p0 = sigma(intercept) = target, so the empirical prevalence is
    // within 3 sigma of the base rate.
    const double sigma = std::sqrt(0.15 * 0.85 / 10000.0);
    CHECK(std::abs(prev - 0.15) < 3.0 * sigma);
}

TEST_CASE("bayes_auroc is chance for zero weights and monotone in signal scale") {
    GeneratorConfig cfg = mc_config(10000);
    cfg.tasks.clear();
    TaskSpec zero{"flat", std::vector<double>(cfg.n_latent_conditions, 0.0), 0.2};
    TaskSpec weak{"weak", {}, 0.2};
    TaskSpec strong{"strong", {}, 0.2};
    for (int c = 0; c < cfg.n_latent_conditions; ++c) {
        const double w = c % 2 == 0 ? 0.4 : 0.0;
        weak.weights.push_back(w);
        strong.weights.push_back(10.0 * w);
    }
    cfg.tasks = {zero, weak, strong};
    CohortDataset ds = generate_cohort(cfg);

    CHECK(bayes_auroc(ds, "flat") == doctest::Approx(0.5).epsilon(0.06));
    CHECK(std::abs(bayes_auroc(ds, "flat") - 0.5) < 0.03);
    CHECK(bayes_auroc(ds, "strong") >= bayes_auroc(ds, "weak"));
}

TEST_CASE("bayes_auroc rejects tasks without both classes") {
    GeneratorConfig cfg = mc_config(40);
    cfg.tasks.clear();
    TaskSpec t{"rare", std::vector<double>(cfg.n_latent_conditions, 0.0), 1e-4};
    cfg.tasks.push_back(t);
    CohortDataset ds = generate_cohort(cfg);
    bool single_class = true;
    for (const auto& p : ds.patients) single_class &= (p.outcomes.at("rare") == 0);
    if (single_class) CHECK_THROWS_AS(bayes_auroc(ds, "rare"), MetricError);
}

TEST_CASE("undersized vocabulary is a configuration error") {
    GeneratorConfig cfg = small_config();
    cfg.vocab_size = cfg.n_latent_conditions * cfg.words_per_condition - 1;
    CHECK_THROWS_AS(generate_cohort(cfg), ConfigError);
}

TEST_CASE("planted relation pairs co-occur in at least relation_floor notes") {
    CohortDataset ds = generate_cohort(small_config());
    REQUIRE(!ds.planted_relations.empty());
    for (const auto& rel : ds.planted_relations) {
        int together = 0;
        for (const auto& p : ds.patients) {
            for (const auto& note : p.notes) {
                bool has_drug = false, has_ind = false;
                for (const auto& t : note.tokens) {
                    has_drug |= (t.word == rel.drug);
                    has_ind |= (t.word == rel.indication);
                }
                together += (has_drug && has_ind);
            }
        }
        CHECK(together >= ds.config.relation_floor);
    }
}

TEST_CASE("outcome labels are consistent with follow-up-era events") {
    CohortDataset ds = generate_cohort(small_config());
    for (const auto& p : ds.patients) {
        const int followup_start = p.end_of_record - ds.config.followup_days;
        for (const auto& [task, y] : p.outcomes) {
            auto it = p.outcome_events.find(task);
            if (y == 1) {
                REQUIRE(it != p.outcome_events.end());
                CHECK(it->second >= followup_start);
                CHECK(it->second <= p.end_of_record);
            } else {
                CHECK(it == p.outcome_events.end());
            }
        }
    }
}

TEST_CASE("record-level invariants hold") {
    CohortDataset ds = generate_cohort(small_config());
    for (const auto& p : ds.patients) {
        int last_day = -1;
        for (const auto& note : p.notes) {
            CHECK(note.day >= last_day);  // non-decreasing timestamps
            last_day = note.day;
            CHECK(!note.tokens.empty());
            for (const auto& t : note.tokens) {
                CHECK(t.word < ds.vocabulary_universe.size());
                CHECK(t.count >= 1);
            }
        }
        if (p.death_day && !p.notes.empty()) CHECK(*p.death_day >= p.notes.back().day);
    }
}

TEST_CASE("relations TSV carries one line per planted pair") {
    CohortDataset ds = generate_cohort(small_config());
    save_relations_tsv(ds, "syn_rel.tsv");
    std::ifstream in("syn_rel.tsv");
    size_t lines = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    CHECK(lines == ds.planted_relations.size());
    std::filesystem::remove("syn_rel.tsv");
}

TEST_CASE("cohort save/load round trip preserves the dataset") {
    CohortDataset ds = generate_cohort(small_config());
    save_cohort(ds, "syn_rt.jsonl");
    CohortDataset loaded = load_cohort("syn_rt.jsonl");
    save_cohort(loaded, "syn_rt2.jsonl");
    CHECK(file_bytes("syn_rt.jsonl") == file_bytes("syn_rt2.jsonl"));
    CHECK(loaded.patients.size() == ds.patients.size());
    CHECK(loaded.vocabulary_universe == ds.vocabulary_universe);
    std::filesystem::remove("syn_rt.jsonl");
    std::filesystem::remove("syn_rt2.jsonl");
}
