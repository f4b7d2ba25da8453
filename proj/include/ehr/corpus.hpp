#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ehr/synthgen.hpp"

namespace ehr::corpus {

inline constexpr const char* kNegSuffix = "~neg";

// Token universe after negation splitting and frequency filtering. Ids are
// dense, assigned by descending note frequency with ties broken by token
// string order.
struct Vocabulary {
    std::vector<std::string> tokens;         // id -> token (negated ones carry ~neg)
    std::vector<int64_t> note_frequency;     // id -> number of notes containing the token
    std::unordered_map<std::string, uint32_t> index;

    size_t size() const { return tokens.size(); }

    std::optional<uint32_t> lookup(const std::string& token) const {
        auto it = index.find(token);
        if (it == index.end()) return std::nullopt;
        return it->second;
    }
    std::optional<uint32_t> lookup(const std::string& base, bool negated) const {
        return negated ? lookup(base + kNegSuffix) : lookup(base);
    }
};

// Sparse count vector, ids strictly increasing, counts >= 1.
struct BagOfWords {
    std::vector<std::pair<uint32_t, uint32_t>> items;

    bool empty() const { return items.empty(); }
    size_t n_distinct() const { return items.size(); }
    uint64_t total_count() const {
        uint64_t n = 0;
        for (const auto& [_, c] : items) n += c;
        return n;
    }
    uint32_t count_of(uint32_t id) const;

    friend bool operator==(const BagOfWords&, const BagOfWords&) = default;
};

BagOfWords make_bag(std::vector<std::pair<uint32_t, uint32_t>> unsorted_counts);
BagOfWords merge_bags(const BagOfWords& a, const BagOfWords& b);

struct EraNote {
    int day = 0;
    BagOfWords bag;
    std::vector<int> day_ccs;  // conditions diagnosed on this exact day
};

// One patient's observation-era view: the only data any representation may
// read, plus labels derived from the follow-up era.
struct EraView {
    int64_t patient_id = 0;
    int prediction_day = 0;
    std::vector<EraNote> notes;        // time-ordered
    std::vector<int> ccs_labels;       // sorted set, union over observation era
    std::map<std::string, int> task_labels;
};

struct DataSplit {
    std::vector<int64_t> train;
    std::vector<int64_t> validation;
    std::vector<int64_t> test;
};

// Negated occurrences become distinct `~neg` tokens before counting; words
// whose note frequency falls outside [min_notes, max_notes] are dropped.
Vocabulary build_vocabulary(const synthgen::CohortDataset& cohort, int64_t min_notes,
                            int64_t max_notes);

// Precomputed universe-id -> vocab-id tables so note encoding avoids string
// lookups in the inner loop.
class NoteEncoder {
  public:
    NoteEncoder(const std::vector<std::string>& universe, const Vocabulary& vocab);
    BagOfWords encode(const synthgen::RawNote& note) const;

  private:
    std::vector<int64_t> plain_;    // -1 = out of vocabulary
    std::vector<int64_t> negated_;
};

// Out-of-vocabulary tokens are dropped; counts are preserved. May be empty.
BagOfWords encode_note(const synthgen::RawNote& note, const std::vector<std::string>& universe,
                       const Vocabulary& vocab);

// Observation window is [prediction_day - observation_days, prediction_day),
// follow-up is [prediction_day, end_of_record]. Patients without any
// non-empty encoded observation note are removed.
std::vector<EraView> build_eras(const synthgen::CohortDataset& cohort, const Vocabulary& vocab,
                                int observation_days, int followup_days);

// Bags with equal day are summed element-wise; per-day CCS sets are unioned.
EraView merge_same_day(const EraView& era);

DataSplit split_patients(const std::vector<int64_t>& patient_ids,
                         const std::array<double, 3>& fractions, uint64_t seed);
DataSplit split_patients(const synthgen::CohortDataset& cohort,
                         const std::array<double, 3>& fractions, uint64_t seed);

// TSV: word_id <TAB> token <TAB> note_frequency
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

// JSON Lines with one header line, then one EraView per line.
void save_eras(const std::vector<EraView>& eras, int observation_days, int followup_days,
               int n_conditions, const std::string& path);
struct EraFile {
    std::vector<EraView> eras;
    int observation_days = 0;
    int followup_days = 0;
    int n_conditions = 0;
};
EraFile load_eras(const std::string& path);

void save_split(const DataSplit& split, uint64_t seed, const std::string& path);
DataSplit load_split(const std::string& path);

}  // namespace ehr::corpus
