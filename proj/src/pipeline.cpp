#include "ehr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace ehr::cli {

namespace {

std::string fmt(double v, const char* spec = "%.17g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

std::vector<corpus::EraView> filter_eras(const std::vector<corpus::EraView>& eras,
                                         const std::vector<int64_t>& ids) {
    std::unordered_set<int64_t> keep(ids.begin(), ids.end());
    std::vector<corpus::EraView> out;
    for (const auto& era : eras)
        if (keep.count(era.patient_id)) out.push_back(era);
    return out;
}

}  // namespace

void require_artifact(const std::string& path) {
    if (!std::filesystem::exists(path)) throw IoError("missing artifact: " + path);
}

void save_representations(const std::map<int64_t, embed::PatientRepresentation>& reps,
                          const std::string& method, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    int dim = 0;
    for (const auto& [_, rep] : reps) {
        dim = rep.dim();
        break;
    }
    out << "# ehr.reps.v1 dim=" << dim << " method=" << method << "\n";
    for (const auto& [pid, rep] : reps) {
        out << pid;
        for (double v : rep.values) out << " " << fmt(v);
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

RepFile load_representations(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string header;
    if (!std::getline(in, header) || header.rfind("# ehr.reps.v1", 0) != 0)
        throw IoError("not a representation file: " + path);
    RepFile file;
    {
        const auto dim_pos = header.find("dim=");
        const auto method_pos = header.find("method=");
        if (dim_pos == std::string::npos || method_pos == std::string::npos)
            throw IoError("malformed representation header: " + path);
        file.dim = std::stoi(header.substr(dim_pos + 4));
        file.method = header.substr(method_pos + 7);
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        int64_t pid;
        if (!(ss >> pid)) throw IoError("malformed representation line in " + path);
        std::vector<double> values;
        values.reserve(static_cast<size_t>(file.dim));
        double v;
        while (ss >> v) values.push_back(v);
        if (static_cast<int>(values.size()) != file.dim)
            throw IoError("representation dimension mismatch in " + path);
        file.reps[pid] = std::move(values);
    }
    return file;
}

void run_generate(const GenerateArgs& args) {
    synthgen::CohortDataset ds = synthgen::generate_cohort(args.config);
    synthgen::save_cohort(ds, args.out_cohort);
    if (!args.out_relations.empty()) synthgen::save_relations_tsv(ds, args.out_relations);
    std::cout << "generated " << ds.patients.size() << " patients, universe "
              << ds.vocabulary_universe.size() << ", tasks " << ds.bayes_info.size() << "\n";
    for (const auto& info : ds.bayes_info) {
        double prev = 0.0;
        for (const auto& p : ds.patients) prev += p.outcomes.at(info.name);
        prev /= static_cast<double>(ds.patients.size());
        std::cout << "  task " << info.name << " prevalence " << fmt(prev, "%.4f")
                  << " bayes_auroc " << fmt(synthgen::bayes_auroc(ds, info.name), "%.4f")
                  << "\n";
    }
}

void run_preprocess(const PreprocessArgs& args) {
    require_artifact(args.cohort_path);
    synthgen::CohortDataset ds = synthgen::load_cohort(args.cohort_path);

    int64_t n_notes = 0;
    for (const auto& p : ds.patients) n_notes += static_cast<int64_t>(p.notes.size());
    const int64_t max_notes = args.max_notes > 0 ? args.max_notes : n_notes / 2;

    corpus::Vocabulary vocab = corpus::build_vocabulary(ds, args.min_notes, max_notes);
    const int obs = args.observation_days > 0 ? args.observation_days
                                              : ds.config.observation_days;
    const int fup = args.followup_days > 0 ? args.followup_days : ds.config.followup_days;
    std::vector<corpus::EraView> eras = corpus::build_eras(ds, vocab, obs, fup);

    std::vector<int64_t> ids;
    ids.reserve(eras.size());
    for (const auto& era : eras) ids.push_back(era.patient_id);
    corpus::DataSplit split = corpus::split_patients(ids, args.fractions, args.seed);

    corpus::save_vocabulary(vocab, args.out_vocab);
    corpus::save_eras(eras, obs, fup, ds.config.n_latent_conditions, args.out_eras);
    corpus::save_split(split, args.seed, args.out_split);
    std::cout << "vocabulary " << vocab.size() << " tokens; " << eras.size() << " of "
              << ds.patients.size() << " patients kept; split " << split.train.size() << "/"
              << split.validation.size() << "/" << split.test.size() << "\n";
}

void run_train_glove(const TrainGloveArgs& args) {
    require_artifact(args.eras_path);
    require_artifact(args.vocab_path);
    corpus::EraFile eras = corpus::load_eras(args.eras_path);
    corpus::Vocabulary vocab = corpus::load_vocabulary(args.vocab_path);

    std::vector<corpus::EraView> train = eras.eras;
    if (!args.split_path.empty()) {
        require_artifact(args.split_path);
        train = filter_eras(eras.eras, corpus::load_split(args.split_path).train);
    }

    embed::GloveConfig cfg = args.glove;
    cfg.seed = derive_seed(args.seed, "embed");
    embed::ShuffledCorpus stream =
        embed::build_shuffled_corpus(train, vocab.size(), cfg.repetitions, cfg.seed);
    embed::CooccurrenceTable table =
        embed::count_cooccurrences(stream, cfg.window, args.shards);
    std::cout << "corpus " << stream.tokens.size() << " tokens in " << stream.n_segments()
              << " segments; " << table.entries.size() << " co-occurrence cells\n";
    if (!args.out_cooccurrences.empty()) embed::save_cooccurrences(table, args.out_cooccurrences);

    embed::GloveTrainResult result = embed::train_glove(table, cfg);
    for (size_t e = 0; e < result.epoch_objective.size(); ++e)
        if (e % 5 == 0 || e + 1 == result.epoch_objective.size())
            std::cout << "  epoch " << e << " objective " << fmt(result.epoch_objective[e], "%.6g")
                      << "\n";
    embed::export_embeddings(result.embeddings, vocab, args.out_embeddings);
}

namespace {

seqmodel::SequenceModelConfig finalize_seq_config(const seqmodel::SequenceModelConfig& in,
                                                  size_t vocab_size, int n_conditions,
                                                  uint64_t seed) {
    seqmodel::SequenceModelConfig cfg = in;
    cfg.vocab_size = static_cast<int>(vocab_size);
    cfg.n_labels = n_conditions;
    cfg.seed = derive_seed(seed, "seqmodel");
    return cfg;
}

void print_trace(const seqmodel::TrainTrace& trace) {
    for (size_t e = 0; e < trace.train_loss.size(); ++e) {
        if (e % 2 == 0 || e + 1 == trace.train_loss.size()) {
            std::cout << "  epoch " << e << " train " << fmt(trace.train_loss[e], "%.6f");
            if (!std::isnan(trace.val_loss[e]))
                std::cout << " val " << fmt(trace.val_loss[e], "%.6f");
            std::cout << "\n";
        }
    }
    std::cout << "  wall time " << fmt(trace.wall_time_sec, "%.1f") << " s\n";
}

}  // namespace

void run_train_rnn(const TrainRnnArgs& args) {
    require_artifact(args.eras_path);
    require_artifact(args.vocab_path);
    require_artifact(args.split_path);
    corpus::EraFile eras = corpus::load_eras(args.eras_path);
    corpus::Vocabulary vocab = corpus::load_vocabulary(args.vocab_path);
    corpus::DataSplit split = corpus::load_split(args.split_path);

    seqmodel::SequenceModelConfig cfg =
        finalize_seq_config(args.config, vocab.size(), eras.n_conditions, args.seed);

    embed::EmbeddingMatrix pretrained;
    const embed::EmbeddingMatrix* pre = nullptr;
    if (cfg.init == seqmodel::Init::Pretrained) {
        require_artifact(args.pretrained_embeddings);
        pretrained = embed::import_embeddings(args.pretrained_embeddings, vocab);
        pre = &pretrained;
    }

    std::vector<corpus::EraView> train = filter_eras(eras.eras, split.train);
    std::vector<corpus::EraView> val = filter_eras(eras.eras, split.validation);
    seqmodel::TrainResult result = seqmodel::train_sequence_model(train, val, cfg, pre);
    print_trace(result.trace);

    seqmodel::save_checkpoint(result.params, args.out_checkpoint);
    if (!args.export_embeddings.empty())
        embed::export_embeddings(seqmodel::embedding_matrix(result.params), vocab,
                                 args.export_embeddings);
}

void run_train_flat(const TrainFlatArgs& args) {
    require_artifact(args.eras_path);
    require_artifact(args.vocab_path);
    require_artifact(args.split_path);
    corpus::EraFile eras = corpus::load_eras(args.eras_path);
    corpus::Vocabulary vocab = corpus::load_vocabulary(args.vocab_path);
    corpus::DataSplit split = corpus::load_split(args.split_path);

    seqmodel::SequenceModelConfig cfg =
        finalize_seq_config(args.config, vocab.size(), eras.n_conditions, args.seed);

    std::vector<seqmodel::FlatNote> notes;
    for (const auto& era : filter_eras(eras.eras, split.train)) {
        for (const auto& note : era.notes) {
            seqmodel::FlatNote fn;
            fn.bag = note.bag;
            fn.labels = Eigen::VectorXd::Zero(cfg.n_labels);
            for (int c : note.day_ccs)
                if (c >= 0 && c < cfg.n_labels) fn.labels(c) = 1.0;
            notes.push_back(std::move(fn));
        }
    }
    seqmodel::FlatTrainResult result = seqmodel::train_flat_model(notes, cfg);
    print_trace(result.trace);

    seqmodel::save_checkpoint(result.params, args.out_checkpoint);
    if (!args.export_embeddings.empty())
        embed::export_embeddings(result.embeddings, vocab, args.export_embeddings);
}

void run_represent(const RepresentArgs& args) {
    require_artifact(args.eras_path);
    corpus::EraFile eras = corpus::load_eras(args.eras_path);

    std::map<int64_t, embed::PatientRepresentation> reps;
    std::string method;
    size_t excluded = 0;

    if (args.method == "ea") {
        require_artifact(args.vocab_path);
        corpus::Vocabulary vocab = corpus::load_vocabulary(args.vocab_path);
        std::vector<embed::EmbeddingMatrix> sources;
        for (const auto& path : args.embedding_paths) {
            require_artifact(path);
            sources.push_back(embed::import_embeddings(path, vocab));
            std::cout << "embeddings " << path << " cover " << sources.back().coverage_count()
                      << " of " << vocab.size() << " words\n";
        }
        if (sources.empty()) throw ConfigError("represent ea: no embeddings given");
        std::vector<const embed::EmbeddingMatrix*> srcs;
        for (const auto& s : sources) srcs.push_back(&s);
        std::vector<embed::Aggr> recipe;
        for (const auto& a : args.aggregators) recipe.push_back(embed::aggr_from_name(a));

        for (const auto& era : eras.eras) {
            auto rep = embed::represent_patient(era, srcs, recipe, args.count_weighted_mean);
            if (!rep) {
                ++excluded;
                continue;
            }
            method = rep->method;
            reps[era.patient_id] = std::move(*rep);
        }
    } else if (args.method == "rnn") {
        require_artifact(args.checkpoint_path);
        seqmodel::SequenceModelParams params = seqmodel::load_checkpoint(args.checkpoint_path);
        for (const auto& era : eras.eras) {
            auto rep = seqmodel::extract_patient_state(era, params);
            if (!rep) {
                ++excluded;
                continue;
            }
            method = rep->method;
            reps[era.patient_id] = std::move(*rep);
        }
    } else if (args.method == "concat") {
        if (args.input_reps.size() != 2)
            throw ConfigError("represent concat: exactly two input rep files required");
        RepFile a = load_representations(args.input_reps[0]);
        RepFile b = load_representations(args.input_reps[1]);
        for (const auto& [pid, va] : a.reps) {
            auto it = b.reps.find(pid);
            if (it == b.reps.end()) {
                ++excluded;
                continue;
            }
            embed::PatientRepresentation ra{va, a.method};
            embed::PatientRepresentation rb{it->second, b.method};
            embed::PatientRepresentation wd = evalkit::wide_and_deep(ra, rb);
            method = wd.method;
            reps[pid] = std::move(wd);
        }
    } else {
        throw ConfigError("unknown represent method: " + args.method);
    }

    if (reps.empty()) throw NumericError("represent: no patient could be represented");
    if (excluded > 0)
        std::cerr << "warning: " << excluded << " patients excluded (no covered notes)\n";
    save_representations(reps, method, args.out_reps);
    std::cout << "wrote " << reps.size() << " representations (dim "
              << reps.begin()->second.dim() << ", method " << method << ")\n";
}

void run_fit_baseline(const FitBaselineArgs& args) {
    require_artifact(args.eras_path);
    require_artifact(args.split_path);
    corpus::EraFile eras = corpus::load_eras(args.eras_path);
    corpus::DataSplit split = corpus::load_split(args.split_path);
    std::vector<corpus::EraView> train = filter_eras(eras.eras, split.train);
    if (train.empty()) throw ConfigError("fit-baseline: empty train split");

    std::map<int64_t, embed::PatientRepresentation> reps;
    std::string method;

    if (args.kind == "tfidf") {
        baselines::TfidfResult result = baselines::tfidf_represent(train, eras.eras,
                                                                   args.vocab_cap);
        method = "tfidf" + std::to_string(result.selected.size());
        for (auto& [pid, rep] : result.reps) reps[pid] = std::move(rep);
        if (!args.out_model.empty()) {
            std::ofstream out(args.out_model, std::ios::binary);
            if (!out) throw IoError("cannot open for writing: " + args.out_model);
            for (size_t i = 0; i < result.selected.size(); ++i)
                out << result.selected[i] << "\t" << fmt(result.idf[i]) << "\n";
        }
    } else if (args.kind == "lsa") {
        std::vector<uint32_t> words = baselines::select_top_words(train, args.vocab_cap);
        baselines::TermPatientMatrix matrix = baselines::build_term_patient_matrix(train, words);
        const int k = std::min(args.svd_k, std::min(matrix.n_rows(), matrix.n_cols()));
        baselines::LsaModel model =
            baselines::truncated_svd(matrix, k, derive_seed(args.seed, "baselines"));
        std::cout << "lsa rank " << k << " relative residual "
                  << fmt(model.relative_residual, "%.4f") << "\n";
        method = "lsa" + std::to_string(k);
        for (const auto& era : eras.eras) {
            corpus::BagOfWords bag;
            for (const auto& note : era.notes) bag = corpus::merge_bags(bag, note.bag);
            reps[era.patient_id] = baselines::lsa_represent(model, bag);
        }
        if (!args.out_model.empty()) baselines::save_lsa(model, args.out_model);
    } else if (args.kind == "lda") {
        std::vector<corpus::BagOfWords> notes;
        for (const auto& era : train)
            for (const auto& note : era.notes) notes.push_back(note.bag);
        const double alpha =
            args.lda_alpha > 0.0 ? args.lda_alpha : 50.0 / static_cast<double>(args.lda_topics);
        baselines::LdaModel model =
            baselines::fit_lda(notes, args.lda_topics, args.lda_iterations, alpha, args.lda_beta,
                               derive_seed(args.seed, "baselines"));
        const auto pooling = args.lda_pooling == "mean" ? baselines::LdaPooling::Mean
                                                        : baselines::LdaPooling::Max;
        method = "lda" + std::to_string(args.lda_topics) + "-" + args.lda_pooling;
        for (const auto& era : eras.eras)
            reps[era.patient_id] = baselines::lda_represent(model, era, pooling);
        if (!args.out_model.empty()) baselines::save_lda(model, args.out_model);
    } else {
        throw ConfigError("unknown baseline kind: " + args.kind);
    }

    save_representations(reps, method, args.out_reps);
    std::cout << "wrote " << reps.size() << " representations (method " << method << ")\n";
}

void write_curve_results_csv(const std::vector<evalkit::CurveCell>& cells,
                             const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "method,task,n,repeat,seed,auroc\n";
    for (const auto& c : cells) {
        out << c.method << "," << c.task << "," << c.n << "," << c.repeat << "," << c.seed << ",";
        if (c.ok)
            out << fmt(c.auroc, "%.10g");
        else
            out << "NA";
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

void write_curve_summary_csv(const std::vector<evalkit::CurveSummary>& summaries,
                             const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "method,task,n,mean_auroc,sem\n";
    for (const auto& s : summaries)
        out << s.method << "," << s.task << "," << s.n << "," << fmt(s.mean_auroc, "%.10g") << ","
            << fmt(s.sem, "%.10g") << "\n";
    if (!out) throw IoError("write failed: " + path);
}

void run_eval_curves(const EvalCurvesArgs& args) {
    require_artifact(args.eras_path);
    require_artifact(args.split_path);
    corpus::EraFile eras = corpus::load_eras(args.eras_path);
    corpus::DataSplit split = corpus::load_split(args.split_path);

    std::map<std::string, evalkit::RepMap> methods;
    for (const auto& [name, spec] : args.reps) {
        const auto plus = spec.find('+');
        if (plus == std::string::npos) {
            require_artifact(spec);
            methods[name] = load_representations(spec).reps;
        } else {
            const std::string pa = spec.substr(0, plus);
            const std::string pb = spec.substr(plus + 1);
            require_artifact(pa);
            require_artifact(pb);
            RepFile a = load_representations(pa);
            RepFile b = load_representations(pb);
            evalkit::RepMap merged;
            for (const auto& [pid, va] : a.reps) {
                auto it = b.reps.find(pid);
                if (it == b.reps.end()) continue;
                std::vector<double> v = va;
                v.insert(v.end(), it->second.begin(), it->second.end());
                merged[pid] = std::move(v);
            }
            methods[name] = std::move(merged);
        }
    }
    if (methods.empty()) throw ConfigError("eval-curves: no representations given");

    std::vector<std::string> tasks = args.tasks;
    if (tasks.empty() && !eras.eras.empty())
        for (const auto& [task, _] : eras.eras.front().task_labels) tasks.push_back(task);

    std::vector<evalkit::CurveCell> all_cells;
    std::vector<evalkit::CurveSummary> all_summaries;
    for (const auto& task : tasks) {
        evalkit::LearningCurveInput input;
        input.representations = methods;
        input.task = task;
        input.train_pool = split.train;
        input.test_ids = split.test;
        for (const auto& era : eras.eras) {
            auto it = era.task_labels.find(task);
            if (it == era.task_labels.end()) throw ConfigError("task not in eras: " + task);
            input.labels[era.patient_id] = it->second;
        }
        evalkit::LearningCurveResult result = evalkit::learning_curve(input, args.params);
        size_t failed = 0;
        for (const auto& c : result.cells) failed += !c.ok;
        if (failed > 0)
            std::cerr << "warning: " << failed << " cells failed for task " << task << "\n";
        all_cells.insert(all_cells.end(), result.cells.begin(), result.cells.end());
        all_summaries.insert(all_summaries.end(), result.summaries.begin(),
                             result.summaries.end());
        for (const auto& s : result.summaries)
            std::cout << task << " " << s.method << " n=" << s.n << " auroc "
                      << fmt(s.mean_auroc, "%.4f") << " +- " << fmt(s.sem, "%.4f") << "\n";
    }
    write_curve_results_csv(all_cells, args.out_results);
    write_curve_summary_csv(all_summaries, args.out_summary);
}

void run_eval_intrinsic(const EvalIntrinsicArgs& args) {
    require_artifact(args.embeddings_path);
    require_artifact(args.vocab_path);
    require_artifact(args.relations_path);
    corpus::Vocabulary vocab = corpus::load_vocabulary(args.vocab_path);
    embed::EmbeddingMatrix emb = embed::import_embeddings(args.embeddings_path, vocab);
    auto triples = evalkit::load_relations_tsv(args.relations_path);
    evalkit::RelationSet relations = evalkit::resolve_relations(triples, vocab, emb);
    auto scores = evalkit::relatedness_score(emb, relations, args.top_k);

    std::ofstream out(args.out_csv, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + args.out_csv);
    out << "relation,queries,successes,ratio\n";
    for (const auto& [name, row] : scores) {
        out << name << "," << row.queries << "," << row.successes << ","
            << fmt(row.ratio, "%.10g") << "\n";
        std::cout << name << " ratio " << fmt(row.ratio, "%.4f") << " (" << row.successes << "/"
                  << row.queries << ")\n";
    }
    if (!out) throw IoError("write failed: " + args.out_csv);
}

void run_eval_notes(const EvalNotesArgs& args) {
    require_artifact(args.cohort_path);
    require_artifact(args.vocab_path);
    synthgen::CohortDataset cohort = synthgen::load_cohort(args.cohort_path);
    corpus::Vocabulary vocab = corpus::load_vocabulary(args.vocab_path);

    evalkit::NoteEvalSet set = evalkit::build_note_eval_set(
        cohort, vocab, args.targets, static_cast<size_t>(args.max_notes), args.train_fraction,
        derive_seed(args.seed, "evalkit"));

    evalkit::NoteRepFn rep_fn;
    embed::EmbeddingMatrix emb;
    const embed::Aggr aggr = embed::aggr_from_name(args.aggregator);
    if (args.rep == "bow") {
        const size_t v = vocab.size();
        rep_fn = [v](const corpus::BagOfWords& bag) {
            std::vector<double> x(v, 0.0);
            for (const auto& [id, c] : bag.items) x[id] = static_cast<double>(c);
            return x;
        };
    } else if (args.rep == "embed") {
        require_artifact(args.embeddings_path);
        emb = embed::import_embeddings(args.embeddings_path, vocab);
        rep_fn = [&emb, aggr](const corpus::BagOfWords& bag) {
            auto pooled = embed::pool_words(bag, emb, aggr);
            if (!pooled) return std::vector<double>(static_cast<size_t>(emb.dim), 0.0);
            return std::vector<double>(pooled->data(), pooled->data() + pooled->size());
        };
    } else {
        throw ConfigError("unknown note representation: " + args.rep);
    }

    evalkit::NoteEvalResult result = evalkit::knn_note_eval(
        set, rep_fn, args.k_candidates, args.folds, derive_seed(args.seed, "evalkit"));

    std::ofstream out(args.out_csv, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + args.out_csv);
    out << "target,chosen_k,micro_f1\n";
    for (const auto& row : result.per_target) {
        out << row.target << "," << row.chosen_k << "," << fmt(row.f1, "%.10g") << "\n";
        std::cout << row.target << " k=" << row.chosen_k << " micro-F1 " << fmt(row.f1, "%.4f")
                  << "\n";
    }
    out << "mean,," << fmt(result.mean_f1, "%.10g") << "\n";
    std::cout << "mean micro-F1 " << fmt(result.mean_f1, "%.4f") << "\n";
    if (!out) throw IoError("write failed: " + args.out_csv);
}

namespace {

struct SummaryRow {
    std::string method;
    std::string task;
    int n = 0;
    double mean = 0.0;
    double sem = 0.0;
};

std::vector<SummaryRow> read_summary_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<SummaryRow> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            continue;  // header
        }
        std::istringstream ss(line);
        SummaryRow row;
        std::string field;
        std::getline(ss, row.method, ',');
        std::getline(ss, row.task, ',');
        std::getline(ss, field, ',');
        row.n = std::stoi(field);
        std::getline(ss, field, ',');
        row.mean = std::stod(field);
        std::getline(ss, field, ',');
        row.sem = std::stod(field);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_svg_plot(const std::vector<SummaryRow>& rows, const std::string& path) {
    std::set<std::string> task_set, method_set;
    for (const auto& r : rows) {
        task_set.insert(r.task);
        method_set.insert(r.method);
    }
    const std::vector<std::string> tasks(task_set.begin(), task_set.end());
    const std::vector<std::string> methods(method_set.begin(), method_set.end());
    const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                             "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

    const int panel_w = 460, panel_h = 300, margin = 58, legend_h = 26;
    const int width = panel_w + 2 * margin;
    const int height = static_cast<int>(tasks.size()) * (panel_h + margin) + legend_h + margin;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (size_t mi = 0; mi < methods.size(); ++mi) {
        const int lx = margin + static_cast<int>(mi) * 150;
        out << "<rect x=\"" << lx << "\" y=\"10\" width=\"12\" height=\"12\" fill=\""
            << palette[mi % 8] << "\"/>\n";
        out << "<text x=\"" << lx + 16 << "\" y=\"21\">" << methods[mi] << "</text>\n";
    }

    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        const int oy = legend_h + margin / 2 + static_cast<int>(ti) * (panel_h + margin);
        double lo = 1.0, hi = 0.0;
        double n_lo = 1e30, n_hi = 0.0;
        for (const auto& r : rows) {
            if (r.task != tasks[ti]) continue;
            lo = std::min(lo, r.mean - 2 * r.sem);
            hi = std::max(hi, r.mean + 2 * r.sem);
            n_lo = std::min(n_lo, static_cast<double>(r.n));
            n_hi = std::max(n_hi, static_cast<double>(r.n));
        }
        lo = std::max(0.0, lo - 0.02);
        hi = std::min(1.0, hi + 0.02);
        if (hi <= lo) hi = lo + 0.1;

        auto px = [&](double n) {
            const double f = n_hi > n_lo ? (std::log(n) - std::log(n_lo)) /
                                               (std::log(n_hi) - std::log(n_lo))
                                         : 0.5;
            return margin + f * panel_w;
        };
        auto py = [&](double v) { return oy + panel_h - (v - lo) / (hi - lo) * panel_h; };

        out << "<rect x=\"" << margin << "\" y=\"" << oy << "\" width=\"" << panel_w
            << "\" height=\"" << panel_h << "\" fill=\"none\" stroke=\"#aaa\"/>\n";
        out << "<text x=\"" << margin << "\" y=\"" << oy - 6 << "\" font-weight=\"bold\">"
            << tasks[ti] << " (AUROC vs N)</text>\n";
        for (int g = 0; g <= 4; ++g) {
            const double v = lo + (hi - lo) * g / 4.0;
            out << "<text x=\"" << margin - 44 << "\" y=\"" << py(v) + 4 << "\">"
                << fmt(v, "%.3f") << "</text>\n";
            out << "<line x1=\"" << margin << "\" y1=\"" << py(v) << "\" x2=\""
                << margin + panel_w << "\" y2=\"" << py(v) << "\" stroke=\"#eee\"/>\n";
        }

        for (size_t mi = 0; mi < methods.size(); ++mi) {
            std::vector<SummaryRow> mrows;
            for (const auto& r : rows)
                if (r.task == tasks[ti] && r.method == methods[mi]) mrows.push_back(r);
            std::sort(mrows.begin(), mrows.end(),
                      [](const auto& a, const auto& b) { return a.n < b.n; });
            if (mrows.empty()) continue;
            out << "<polyline fill=\"none\" stroke=\"" << palette[mi % 8]
                << "\" stroke-width=\"1.5\" points=\"";
            for (const auto& r : mrows)
                out << fmt(px(r.n), "%.1f") << "," << fmt(py(r.mean), "%.1f") << " ";
            out << "\"/>\n";
            for (const auto& r : mrows) {
                out << "<line x1=\"" << fmt(px(r.n), "%.1f") << "\" y1=\""
                    << fmt(py(r.mean - r.sem), "%.1f") << "\" x2=\"" << fmt(px(r.n), "%.1f")
                    << "\" y2=\"" << fmt(py(r.mean + r.sem), "%.1f") << "\" stroke=\""
                    << palette[mi % 8] << "\"/>\n";
                out << "<circle cx=\"" << fmt(px(r.n), "%.1f") << "\" cy=\""
                    << fmt(py(r.mean), "%.1f") << "\" r=\"2.5\" fill=\"" << palette[mi % 8]
                    << "\"/>\n";
                if (mi == 0)
                    out << "<text x=\"" << fmt(px(r.n) - 10, "%.1f") << "\" y=\""
                        << oy + panel_h + 16 << "\">" << r.n << "</text>\n";
            }
        }
    }
    out << "</svg>\n";
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace

void run_report(const ReportArgs& args) {
    require_artifact(args.summary_path);
    std::vector<SummaryRow> rows = read_summary_csv(args.summary_path);

    std::set<std::string> task_set, method_set;
    std::set<int> n_set;
    for (const auto& r : rows) {
        task_set.insert(r.task);
        method_set.insert(r.method);
        n_set.insert(r.n);
    }

    std::ostringstream table;
    for (const auto& task : task_set) {
        table << "== " << task << " ==\n";
        table << "      n";
        for (const auto& m : method_set) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), " %20s", m.c_str());
            table << buf;
        }
        table << "\n";
        for (int n : n_set) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%7d", n);
            table << buf;
            for (const auto& m : method_set) {
                std::string cell = "-";
                for (const auto& r : rows)
                    if (r.task == task && r.method == m && r.n == n)
                        cell = fmt(r.mean, "%.3f") + "+-" + fmt(r.sem, "%.3f");
                std::snprintf(buf, sizeof(buf), " %20s", cell.c_str());
                table << buf;
            }
            table << "\n";
        }
        table << "\n";
    }
    std::cout << table.str();
    if (!args.out_table.empty()) {
        std::ofstream out(args.out_table, std::ios::binary);
        if (!out) throw IoError("cannot open for writing: " + args.out_table);
        out << table.str();
    }
    if (!args.out_svg.empty()) write_svg_plot(rows, args.out_svg);
}

}  // namespace ehr::cli
