#include "ehr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ehr::corpus {

using nlohmann::json;

uint32_t BagOfWords::count_of(uint32_t id) const {
    auto it = std::lower_bound(items.begin(), items.end(), id,
                               [](const auto& p, uint32_t v) { return p.first < v; });
    if (it == items.end() || it->first != id) return 0;
    return it->second;
}

BagOfWords make_bag(std::vector<std::pair<uint32_t, uint32_t>> counts) {
    std::sort(counts.begin(), counts.end());
    BagOfWords bag;
    for (const auto& [id, c] : counts) {
        if (c == 0) continue;
        if (!bag.items.empty() && bag.items.back().first == id)
            bag.items.back().second += c;
        else
            bag.items.emplace_back(id, c);
    }
    return bag;
}

BagOfWords merge_bags(const BagOfWords& a, const BagOfWords& b) {
    BagOfWords out;
    out.items.reserve(a.items.size() + b.items.size());
    size_t i = 0, j = 0;
    while (i < a.items.size() || j < b.items.size()) {
        if (j == b.items.size() || (i < a.items.size() && a.items[i].first < b.items[j].first)) {
            out.items.push_back(a.items[i++]);
        } else if (i == a.items.size() || b.items[j].first < a.items[i].first) {
            out.items.push_back(b.items[j++]);
        } else {
            out.items.emplace_back(a.items[i].first, a.items[i].second + b.items[j].second);
            ++i;
            ++j;
        }
    }
    return out;
}

Vocabulary build_vocabulary(const synthgen::CohortDataset& cohort, int64_t min_notes,
                            int64_t max_notes) {
    if (cohort.patients.empty()) throw ConfigError("build_vocabulary: empty cohort");
    if (min_notes < 0 || max_notes < min_notes)
        throw ConfigError("build_vocabulary: invalid note-frequency bounds");

    // Note frequency per (token, negated) entry: presence per note, not counts.
    std::map<std::string, int64_t> freq;
    for (const auto& p : cohort.patients) {
        for (const auto& note : p.notes) {
            std::set<std::string> seen;
            for (const auto& t : note.tokens) {
                std::string token = cohort.vocabulary_universe.at(t.word);
                if (t.negated) token += kNegSuffix;
                seen.insert(std::move(token));
            }
            for (const auto& token : seen) ++freq[token];
        }
    }

    std::vector<std::pair<std::string, int64_t>> kept;
    for (const auto& [token, nf] : freq)
        if (nf >= min_notes && nf <= max_notes) kept.emplace_back(token, nf);
    if (kept.empty()) throw ConfigError("build_vocabulary: no token passes the frequency filter");

    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    vocab.tokens.reserve(kept.size());
    vocab.note_frequency.reserve(kept.size());
    for (const auto& [token, nf] : kept) {
        vocab.index[token] = static_cast<uint32_t>(vocab.tokens.size());
        vocab.tokens.push_back(token);
        vocab.note_frequency.push_back(nf);
    }
    return vocab;
}

NoteEncoder::NoteEncoder(const std::vector<std::string>& universe, const Vocabulary& vocab) {
    plain_.assign(universe.size(), -1);
    negated_.assign(universe.size(), -1);
    for (size_t w = 0; w < universe.size(); ++w) {
        if (auto id = vocab.lookup(universe[w])) plain_[w] = static_cast<int64_t>(*id);
        if (auto id = vocab.lookup(universe[w] + kNegSuffix))
            negated_[w] = static_cast<int64_t>(*id);
    }
}

BagOfWords NoteEncoder::encode(const synthgen::RawNote& note) const {
    std::vector<std::pair<uint32_t, uint32_t>> counts;
    counts.reserve(note.tokens.size());
    for (const auto& t : note.tokens) {
        const auto& table = t.negated ? negated_ : plain_;
        if (t.word >= table.size()) throw ConfigError("note word id outside universe");
        const int64_t id = table[t.word];
        if (id >= 0) counts.emplace_back(static_cast<uint32_t>(id), t.count);
    }
    return make_bag(std::move(counts));
}

BagOfWords encode_note(const synthgen::RawNote& note, const std::vector<std::string>& universe,
                       const Vocabulary& vocab) {
    return NoteEncoder(universe, vocab).encode(note);
}

std::vector<EraView> build_eras(const synthgen::CohortDataset& cohort, const Vocabulary& vocab,
                                int observation_days, int followup_days) {
    if (observation_days < 1 || followup_days < 0)
        throw ConfigError("build_eras: invalid era lengths");
    NoteEncoder encoder(cohort.vocabulary_universe, vocab);

    std::vector<EraView> eras;
    for (const auto& p : cohort.patients) {
        EraView era;
        era.patient_id = p.patient_id;
        era.prediction_day = p.end_of_record - followup_days;
        const int obs_start = era.prediction_day - observation_days;

        for (const auto& note : p.notes) {
            if (note.day < obs_start || note.day >= era.prediction_day) continue;
            BagOfWords bag = encoder.encode(note);
            if (bag.empty()) continue;  // no recognized concepts
            EraNote en;
            en.day = note.day;
            en.bag = std::move(bag);
            era.notes.push_back(std::move(en));
        }
        if (era.notes.empty()) continue;

        std::set<int> ccs;
        for (const auto& [day, cond] : p.diagnoses)
            if (day >= obs_start && day < era.prediction_day) ccs.insert(cond);
        era.ccs_labels.assign(ccs.begin(), ccs.end());
        for (auto& en : era.notes) {
            for (const auto& [day, cond] : p.diagnoses)
                if (day == en.day) en.day_ccs.push_back(cond);
            std::sort(en.day_ccs.begin(), en.day_ccs.end());
            en.day_ccs.erase(std::unique(en.day_ccs.begin(), en.day_ccs.end()),
                             en.day_ccs.end());
        }
        era.task_labels = p.outcomes;
        eras.push_back(std::move(era));
    }
    return eras;
}

EraView merge_same_day(const EraView& era) {
    EraView out;
    out.patient_id = era.patient_id;
    out.prediction_day = era.prediction_day;
    out.ccs_labels = era.ccs_labels;
    out.task_labels = era.task_labels;

    for (const auto& note : era.notes) {
        if (!out.notes.empty() && out.notes.back().day == note.day) {
            EraNote& last = out.notes.back();
            last.bag = merge_bags(last.bag, note.bag);
            last.day_ccs.insert(last.day_ccs.end(), note.day_ccs.begin(), note.day_ccs.end());
            std::sort(last.day_ccs.begin(), last.day_ccs.end());
            last.day_ccs.erase(std::unique(last.day_ccs.begin(), last.day_ccs.end()),
                               last.day_ccs.end());
        } else {
            out.notes.push_back(note);
        }
    }
    return out;
}

DataSplit split_patients(const std::vector<int64_t>& patient_ids,
                         const std::array<double, 3>& fractions, uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f <= 0.0) throw ConfigError("split fractions must be > 0");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

    std::vector<int64_t> ids = patient_ids;
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(ids);

    const auto n = static_cast<double>(ids.size());
    const auto b1 = static_cast<size_t>(std::llround(fractions[0] * n));
    const auto b2 = static_cast<size_t>(std::llround((fractions[0] + fractions[1]) * n));

    DataSplit split;
    split.train.assign(ids.begin(), ids.begin() + b1);
    split.validation.assign(ids.begin() + b1, ids.begin() + b2);
    split.test.assign(ids.begin() + b2, ids.end());
    return split;
}

DataSplit split_patients(const synthgen::CohortDataset& cohort,
                         const std::array<double, 3>& fractions, uint64_t seed) {
    std::vector<int64_t> ids;
    ids.reserve(cohort.patients.size());
    for (const auto& p : cohort.patients) ids.push_back(p.patient_id);
    return split_patients(ids, fractions, seed);
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (size_t i = 0; i < vocab.tokens.size(); ++i)
        out << i << "\t" << vocab.tokens[i] << "\t" << vocab.note_frequency[i] << "\n";
    if (!out) throw IoError("write failed: " + path);
}

Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    Vocabulary vocab;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        uint32_t id;
        std::string token;
        int64_t nf;
        if (!(ss >> id >> token >> nf) || id != vocab.tokens.size())
            throw IoError("malformed vocabulary line " + std::to_string(line_no) + " in " + path);
        vocab.index[token] = id;
        vocab.tokens.push_back(token);
        vocab.note_frequency.push_back(nf);
    }
    if (vocab.tokens.empty()) throw IoError("empty vocabulary file: " + path);
    return vocab;
}

namespace {

json bag_to_json(const BagOfWords& bag) {
    json arr = json::array();
    for (const auto& [id, c] : bag.items) arr.push_back({id, c});
    return arr;
}

BagOfWords bag_from_json(const json& arr) {
    BagOfWords bag;
    for (const auto& e : arr) bag.items.emplace_back(e[0].get<uint32_t>(), e[1].get<uint32_t>());
    return bag;
}

}  // namespace

void save_eras(const std::vector<EraView>& eras, int observation_days, int followup_days,
               int n_conditions, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    json header{{"schema", "ehr.eras.v1"},
                {"observation_days", observation_days},
                {"followup_days", followup_days},
                {"n_conditions", n_conditions}};
    out << header.dump() << "\n";
    for (const auto& era : eras) {
        json notes = json::array();
        for (const auto& n : era.notes)
            notes.push_back({{"d", n.day}, {"bag", bag_to_json(n.bag)}, {"ccs", n.day_ccs}});
        json rec{{"pid", era.patient_id},
                 {"pred_day", era.prediction_day},
                 {"notes", notes},
                 {"ccs", era.ccs_labels},
                 {"y", era.task_labels}};
        out << rec.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

EraFile load_eras(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty era file: " + path);
    json header = json::parse(line);
    if (header.value("schema", "") != "ehr.eras.v1")
        throw IoError("unexpected era schema in " + path);

    EraFile file;
    file.observation_days = header.at("observation_days").get<int>();
    file.followup_days = header.at("followup_days").get<int>();
    file.n_conditions = header.at("n_conditions").get<int>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        EraView era;
        era.patient_id = rec.at("pid").get<int64_t>();
        era.prediction_day = rec.at("pred_day").get<int>();
        for (const auto& n : rec.at("notes")) {
            EraNote en;
            en.day = n.at("d").get<int>();
            en.bag = bag_from_json(n.at("bag"));
            en.day_ccs = n.at("ccs").get<std::vector<int>>();
            era.notes.push_back(std::move(en));
        }
        era.ccs_labels = rec.at("ccs").get<std::vector<int>>();
        era.task_labels = rec.at("y").get<std::map<std::string, int>>();
        file.eras.push_back(std::move(era));
    }
    return file;
}

void save_split(const DataSplit& split, uint64_t seed, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    json j{{"schema", "ehr.split.v1"},
           {"seed", seed},
           {"train", split.train},
           {"validation", split.validation},
           {"test", split.test}};
    out << j.dump() << "\n";
    if (!out) throw IoError("write failed: " + path);
}

DataSplit load_split(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    json j;
    in >> j;
    DataSplit split;
    split.train = j.at("train").get<std::vector<int64_t>>();
    split.validation = j.at("validation").get<std::vector<int64_t>>();
    split.test = j.at("test").get<std::vector<int64_t>>();
    return split;
}

}  // namespace ehr::corpus
