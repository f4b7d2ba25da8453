#include "ehr/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ehr/metrics.hpp"
#include "json.hpp"

namespace ehr::synthgen {

using nlohmann::json;

namespace {

constexpr int kContextWordsPerRelation = 5;
const char* kRelationNames[2] = {"may_treat", "may_prevent"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string fmt_token(const char* prefix, int a, int b) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%02d_%02d", prefix, a, b);
    return buf;
}

}  // namespace

void GeneratorConfig::validate() const {
    if (n_patients < 1) throw ConfigError("n_patients must be >= 1");
    if (vocab_size < 1 || n_latent_conditions < 1 || words_per_condition < 1)
        throw ConfigError("counts must be >= 1");
    if (vocab_size < n_latent_conditions * words_per_condition)
        throw ConfigError("vocab_size smaller than n_latent_conditions * words_per_condition");
    if (notes_per_patient_min < 1 || notes_per_patient_max < notes_per_patient_min)
        throw ConfigError("invalid notes_per_patient range");
    if (words_per_note_min < 1 || words_per_note_max < words_per_note_min)
        throw ConfigError("invalid words_per_note range");
    if (negation_rate < 0.0 || negation_rate > 1.0) throw ConfigError("negation_rate not in [0,1]");
    if (signal_rate < 0.0 || signal_rate > 1.0) throw ConfigError("signal_rate not in [0,1]");
    if (observation_days < 1 || followup_days < 1) throw ConfigError("era lengths must be >= 1");
    if (relation_pairs < 0 || relation_floor < 0) throw ConfigError("relation counts must be >= 0");
    if (relation_pairs > 0) {
        const int reserved = 2 * (2 * relation_pairs + kContextWordsPerRelation);
        if (vocab_size < n_latent_conditions * words_per_condition + reserved + 8)
            throw ConfigError("vocab_size too small for planted relations plus background words");
    }
    for (const auto& t : tasks) {
        if (static_cast<int>(t.weights.size()) != n_latent_conditions)
            throw ConfigError("outcome_weights length must equal n_latent_conditions: " + t.name);
        if (t.target_prevalence <= 0.0 || t.target_prevalence >= 1.0)
            throw ConfigError("target_prevalence must be in (0,1): " + t.name);
    }
}

std::vector<TaskSpec> default_tasks(int n_conditions) {
    const int c = n_conditions;
    auto make = [&](const std::string& name, double prev, auto weight_fn) {
        TaskSpec t;
        t.name = name;
        t.target_prevalence = prev;
        t.weights.resize(c);
        for (int i = 0; i < c; ++i) t.weights[i] = weight_fn(i);
        return t;
    };
    std::vector<TaskSpec> tasks;
    tasks.push_back(make("mortality", 0.22, [](int i) {
        if (i % 4 == 0) return 2.0;
        if (i % 4 == 2) return 0.5;
        return 0.0;
    }));
    tasks.push_back(make("admission", 0.30, [](int i) {
        if (i % 3 == 0) return 1.6;
        if (i % 3 == 1) return 0.4;
        return 0.0;
    }));
    tasks.push_back(make("er_visit", 0.26, [](int i) {
        if (i % 5 == 0) return 1.8;
        if (i % 5 == 2) return 0.6;
        return 0.0;
    }));
    // Onset tasks for the densest conditions (condition 0 is the densest).
    for (int d = 0; d < std::min(3, c); ++d) {
        tasks.push_back(make("disease_" + std::to_string(d), 0.12,
                             [d](int i) { return i == d ? 4.0 : 0.0; }));
    }
    return tasks;
}

GeneratorConfig default_config() {
    GeneratorConfig cfg;
    cfg.tasks = default_tasks(cfg.n_latent_conditions);
    return cfg;
}

const TaskBayesInfo& CohortDataset::bayes_for(const std::string& task) const {
    for (const auto& b : bayes_info)
        if (b.name == task) return b;
    throw ConfigError("unknown task: " + task);
}

namespace {

struct Universe {
    std::vector<std::string> tokens;
    std::vector<std::vector<uint32_t>> lexicon;  // per condition
    std::vector<PlantedRelation> relations;
    std::vector<std::vector<uint32_t>> relation_context;  // per relation name
    std::vector<uint32_t> background;                      // free noise words
};

Universe build_universe(const GeneratorConfig& cfg) {
    Universe u;
    u.tokens.reserve(cfg.vocab_size);
    u.lexicon.resize(cfg.n_latent_conditions);
    for (int c = 0; c < cfg.n_latent_conditions; ++c) {
        for (int j = 0; j < cfg.words_per_condition; ++j) {
            u.lexicon[c].push_back(static_cast<uint32_t>(u.tokens.size()));
            u.tokens.push_back(fmt_token("c", c, j));
        }
    }
    if (cfg.relation_pairs > 0) {
        u.relation_context.resize(2);
        for (int r = 0; r < 2; ++r) {
            for (int p = 0; p < cfg.relation_pairs; ++p) {
                PlantedRelation rel;
                rel.relation = kRelationNames[r];
                rel.drug = static_cast<uint32_t>(u.tokens.size());
                u.tokens.push_back(fmt_token(r == 0 ? "rx_t" : "rx_p", r, p));
                rel.indication = static_cast<uint32_t>(u.tokens.size());
                u.tokens.push_back(fmt_token(r == 0 ? "ind_t" : "ind_p", r, p));
                u.relations.push_back(rel);
            }
            for (int j = 0; j < kContextWordsPerRelation; ++j) {
                u.relation_context[r].push_back(static_cast<uint32_t>(u.tokens.size()));
                u.tokens.push_back(fmt_token("ctx", r, j));
            }
        }
    }
    int bg = 0;
    while (static_cast<int>(u.tokens.size()) < cfg.vocab_size) {
        u.background.push_back(static_cast<uint32_t>(u.tokens.size()));
        u.tokens.push_back(fmt_token("bg", bg / 100, bg % 100));
        ++bg;
    }
    return u;
}

// Multiset draws accumulated into the canonical sorted form.
void add_token(std::map<std::pair<uint32_t, bool>, uint32_t>& acc, uint32_t word, bool negated) {
    ++acc[{word, negated}];
}

RawNote freeze_note(int day, const std::map<std::pair<uint32_t, bool>, uint32_t>& acc) {
    RawNote note;
    note.day = day;
    for (const auto& [key, count] : acc)
        note.tokens.push_back(TokenCount{key.first, key.second, count});
    return note;
}

double calibrate_intercept(const std::vector<double>& scores, double target) {
    double lo = -40.0, hi = 40.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        double mean = 0.0;
        for (double s : scores) mean += sigmoid(s + mid);
        mean /= static_cast<double>(scores.size());
        (mean < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

CohortDataset generate_cohort(const GeneratorConfig& config_in) {
    GeneratorConfig cfg = config_in;
    if (cfg.tasks.empty()) cfg.tasks = default_tasks(cfg.n_latent_conditions);
    cfg.validate();

    Universe uni = build_universe(cfg);
    CohortDataset ds;
    ds.config = cfg;
    ds.vocabulary_universe = uni.tokens;
    ds.condition_lexicon = uni.lexicon;
    ds.planted_relations = uni.relations;

    const int n_cond = cfg.n_latent_conditions;
    std::vector<double> prevalence(n_cond);
    for (int c = 0; c < n_cond; ++c) {
        const double f = n_cond == 1 ? 0.0 : static_cast<double>(c) / (n_cond - 1);
        prevalence[c] = std::exp(std::log(cfg.condition_prevalence_max) +
                                 f * (std::log(cfg.condition_prevalence_min) -
                                      std::log(cfg.condition_prevalence_max)));
    }

    const int end_of_record = cfg.observation_days + cfg.followup_days;

    // Phase 1: latent state, notes, diagnoses. One RNG stream per patient.
    ds.patients.resize(cfg.n_patients);
    for (int64_t i = 0; i < cfg.n_patients; ++i) {
        Rng rng(derive_seed(cfg.seed, "patient", static_cast<uint64_t>(i)));
        PatientRecord& p = ds.patients[i];
        p.patient_id = i;
        p.end_of_record = end_of_record;
        p.latent.resize(n_cond);
        std::vector<int> active;
        for (int c = 0; c < n_cond; ++c) {
            p.latent[c] = rng.bernoulli(prevalence[c]) ? 1 : 0;
            if (p.latent[c]) active.push_back(c);
        }

        const int n_notes =
            static_cast<int>(rng.uniform_int(cfg.notes_per_patient_min, cfg.notes_per_patient_max));
        std::vector<int> days(n_notes);
        for (int& d : days) d = static_cast<int>(rng.uniform_int(0, end_of_record));
        std::sort(days.begin(), days.end());

        for (int d : days) {
            const int n_words =
                static_cast<int>(rng.uniform_int(cfg.words_per_note_min, cfg.words_per_note_max));
            std::map<std::pair<uint32_t, bool>, uint32_t> acc;
            for (int k = 0; k < n_words; ++k) {
                uint32_t w;
                if (!active.empty() && rng.bernoulli(cfg.signal_rate)) {
                    const int c = active[rng.below(active.size())];
                    const auto& lex = uni.lexicon[c];
                    w = lex[rng.below(lex.size())];
                } else if (!uni.background.empty()) {
                    w = uni.background[rng.below(uni.background.size())];
                } else {
                    w = static_cast<uint32_t>(rng.below(uni.tokens.size()));
                }
                add_token(acc, w, rng.bernoulli(cfg.negation_rate));
            }
            p.notes.push_back(freeze_note(d, acc));
        }

        for (int c : active) {
            const int n_dx = 1 + static_cast<int>(rng.below(3));
            for (int k = 0; k < n_dx; ++k)
                p.diagnoses.emplace_back(static_cast<int>(rng.uniform_int(0, end_of_record)), c);
        }
        std::sort(p.diagnoses.begin(), p.diagnoses.end());
    }

    // Phase 2: calibrate per-task intercepts against the realized latent
    // population, then store the generating model.
    for (const auto& task : cfg.tasks) {
        TaskBayesInfo info;
        info.name = task.name;
        info.weights = task.weights;
        std::vector<double> scores(ds.patients.size());
        for (size_t i = 0; i < ds.patients.size(); ++i) {
            double s = 0.0;
            for (int c = 0; c < n_cond; ++c) s += task.weights[c] * ds.patients[i].latent[c];
            scores[i] = s;
        }
        info.intercept = calibrate_intercept(scores, task.target_prevalence);
        ds.bayes_info.push_back(std::move(info));
    }

    // Phase 3: outcomes and follow-up-era events; death truncates the tail of
    // the record.
    const int followup_start = end_of_record - cfg.followup_days;
    for (int64_t i = 0; i < cfg.n_patients; ++i) {
        Rng rng(derive_seed(cfg.seed, "outcome", static_cast<uint64_t>(i)));
        PatientRecord& p = ds.patients[i];
        for (const auto& info : ds.bayes_info) {
            const double prob = sigmoid(bayes_score(info, p));
            const int y = rng.bernoulli(prob) ? 1 : 0;
            p.outcomes[info.name] = y;
            if (y) {
                const int day =
                    followup_start + static_cast<int>(rng.below(cfg.followup_days + 1));
                p.outcome_events[info.name] = day;
                if (info.name == "mortality") p.death_day = day;
            }
        }
        if (p.death_day) {
            const int dd = *p.death_day;
            std::erase_if(p.notes, [dd](const RawNote& n) { return n.day > dd; });
            std::erase_if(p.diagnoses, [dd](const auto& dx) { return dx.first > dd; });
        }
    }

    // Phase 4: plant relation co-occurrences in observation-era notes. Each
    // pair lands in relation_floor distinct notes together with a couple of
    // shared context words.
    if (!uni.relations.empty() && cfg.relation_floor > 0) {
        std::vector<std::pair<int64_t, size_t>> eligible;
        for (const auto& p : ds.patients)
            for (size_t k = 0; k < p.notes.size(); ++k)
                if (p.notes[k].day < followup_start) eligible.emplace_back(p.patient_id, k);
        if (eligible.size() < static_cast<size_t>(cfg.relation_floor))
            throw ConfigError("not enough observation-era notes to plant relations");

        Rng rng(derive_seed(cfg.seed, "relations"));
        for (size_t ri = 0; ri < uni.relations.size(); ++ri) {
            const auto& rel = uni.relations[ri];
            const auto& ctx = uni.relation_context[rel.relation == kRelationNames[0] ? 0 : 1];
            std::set<size_t> used;
            while (used.size() < static_cast<size_t>(cfg.relation_floor)) {
                const size_t slot = rng.below(eligible.size());
                if (!used.insert(slot).second) continue;
                auto [pid, note_idx] = eligible[slot];
                RawNote& note = ds.patients[pid].notes[note_idx];
                std::map<std::pair<uint32_t, bool>, uint32_t> acc;
                for (const auto& t : note.tokens) acc[{t.word, t.negated}] = t.count;
                add_token(acc, rel.drug, false);
                add_token(acc, rel.indication, false);
                add_token(acc, ctx[rng.below(ctx.size())], false);
                add_token(acc, ctx[rng.below(ctx.size())], false);
                note = freeze_note(note.day, acc);
            }
        }
    }

    return ds;
}

double bayes_score(const TaskBayesInfo& info, const PatientRecord& patient) {
    double s = info.intercept;
    for (size_t c = 0; c < info.weights.size(); ++c) s += info.weights[c] * patient.latent[c];
    return s;
}

double bayes_auroc(const CohortDataset& dataset, const std::string& task) {
    const TaskBayesInfo& info = dataset.bayes_for(task);
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(dataset.patients.size());
    for (const auto& p : dataset.patients) {
        scores.push_back(bayes_score(info, p));
        labels.push_back(p.outcomes.at(task));
    }
    return evalkit::auroc(scores, labels);
}

namespace {

json config_to_json(const GeneratorConfig& c) {
    json tasks = json::array();
    for (const auto& t : c.tasks)
        tasks.push_back({{"name", t.name},
                         {"weights", t.weights},
                         {"target_prevalence", t.target_prevalence}});
    return json{{"n_patients", c.n_patients},
                {"vocab_size", c.vocab_size},
                {"n_latent_conditions", c.n_latent_conditions},
                {"words_per_condition", c.words_per_condition},
                {"notes_per_patient", {c.notes_per_patient_min, c.notes_per_patient_max}},
                {"words_per_note", {c.words_per_note_min, c.words_per_note_max}},
                {"negation_rate", c.negation_rate},
                {"signal_rate", c.signal_rate},
                {"condition_prevalence", {c.condition_prevalence_min, c.condition_prevalence_max}},
                {"tasks", tasks},
                {"observation_days", c.observation_days},
                {"followup_days", c.followup_days},
                {"relation_pairs", c.relation_pairs},
                {"relation_floor", c.relation_floor},
                {"seed", c.seed}};
}

GeneratorConfig config_from_json(const json& j) {
    GeneratorConfig c;
    c.n_patients = j.at("n_patients").get<int64_t>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.n_latent_conditions = j.at("n_latent_conditions").get<int>();
    c.words_per_condition = j.at("words_per_condition").get<int>();
    c.notes_per_patient_min = j.at("notes_per_patient")[0].get<int>();
    c.notes_per_patient_max = j.at("notes_per_patient")[1].get<int>();
    c.words_per_note_min = j.at("words_per_note")[0].get<int>();
    c.words_per_note_max = j.at("words_per_note")[1].get<int>();
    c.negation_rate = j.at("negation_rate").get<double>();
    c.signal_rate = j.at("signal_rate").get<double>();
    c.condition_prevalence_min = j.at("condition_prevalence")[0].get<double>();
    c.condition_prevalence_max = j.at("condition_prevalence")[1].get<double>();
    for (const auto& t : j.at("tasks")) {
        TaskSpec spec;
        spec.name = t.at("name").get<std::string>();
        spec.weights = t.at("weights").get<std::vector<double>>();
        spec.target_prevalence = t.at("target_prevalence").get<double>();
        c.tasks.push_back(std::move(spec));
    }
    c.observation_days = j.at("observation_days").get<int>();
    c.followup_days = j.at("followup_days").get<int>();
    c.relation_pairs = j.at("relation_pairs").get<int>();
    c.relation_floor = j.at("relation_floor").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

}  // namespace

void save_cohort(const CohortDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);

    json header{{"schema", "ehr.cohort.v1"},
                {"config", config_to_json(ds.config)},
                {"universe", ds.vocabulary_universe},
                {"condition_lexicon", ds.condition_lexicon}};
    json rels = json::array();
    for (const auto& r : ds.planted_relations)
        rels.push_back({{"relation", r.relation}, {"drug", r.drug}, {"indication", r.indication}});
    header["planted_relations"] = rels;
    json bayes = json::array();
    for (const auto& b : ds.bayes_info)
        bayes.push_back({{"name", b.name}, {"weights", b.weights}, {"intercept", b.intercept}});
    header["bayes_info"] = bayes;
    out << header.dump() << "\n";

    for (const auto& p : ds.patients) {
        json notes = json::array();
        for (const auto& n : p.notes) {
            json toks = json::array();
            for (const auto& t : n.tokens)
                toks.push_back({t.word, t.negated ? 1 : 0, t.count});
            notes.push_back({{"d", n.day}, {"t", toks}});
        }
        json dx = json::array();
        for (const auto& [day, cond] : p.diagnoses) dx.push_back({day, cond});
        json rec{{"id", p.patient_id}, {"end", p.end_of_record},
                 {"notes", notes},     {"dx", dx},
                 {"latent", p.latent}, {"y", p.outcomes},
                 {"ev", p.outcome_events}};
        if (p.death_day) rec["death"] = *p.death_day;
        out << rec.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

CohortDataset load_cohort(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty cohort file: " + path);

    json header = json::parse(line);
    if (header.value("schema", "") != "ehr.cohort.v1")
        throw IoError("unexpected cohort schema in " + path);

    CohortDataset ds;
    ds.config = config_from_json(header.at("config"));
    ds.vocabulary_universe = header.at("universe").get<std::vector<std::string>>();
    ds.condition_lexicon =
        header.at("condition_lexicon").get<std::vector<std::vector<uint32_t>>>();
    for (const auto& r : header.at("planted_relations")) {
        PlantedRelation rel;
        rel.relation = r.at("relation").get<std::string>();
        rel.drug = r.at("drug").get<uint32_t>();
        rel.indication = r.at("indication").get<uint32_t>();
        ds.planted_relations.push_back(std::move(rel));
    }
    for (const auto& b : header.at("bayes_info")) {
        TaskBayesInfo info;
        info.name = b.at("name").get<std::string>();
        info.weights = b.at("weights").get<std::vector<double>>();
        info.intercept = b.at("intercept").get<double>();
        ds.bayes_info.push_back(std::move(info));
    }

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        PatientRecord p;
        p.patient_id = rec.at("id").get<int64_t>();
        p.end_of_record = rec.at("end").get<int>();
        if (rec.contains("death")) p.death_day = rec.at("death").get<int>();
        for (const auto& n : rec.at("notes")) {
            RawNote note;
            note.day = n.at("d").get<int>();
            for (const auto& t : n.at("t"))
                note.tokens.push_back(TokenCount{t[0].get<uint32_t>(),
                                                 t[1].get<int>() != 0,
                                                 t[2].get<uint32_t>()});
            p.notes.push_back(std::move(note));
        }
        for (const auto& d : rec.at("dx"))
            p.diagnoses.emplace_back(d[0].get<int>(), d[1].get<int>());
        p.latent = rec.at("latent").get<std::vector<uint8_t>>();
        p.outcomes = rec.at("y").get<std::map<std::string, int>>();
        p.outcome_events = rec.at("ev").get<std::map<std::string, int>>();
        ds.patients.push_back(std::move(p));
    }
    return ds;
}

void save_relations_tsv(const CohortDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& r : ds.planted_relations)
        out << r.relation << "\t" << ds.vocabulary_universe[r.drug] << "\t"
            << ds.vocabulary_universe[r.indication] << "\n";
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace ehr::synthgen
