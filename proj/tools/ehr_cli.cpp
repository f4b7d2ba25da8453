// Command-line front end: each subcommand is a thin wrapper over one module
// pipeline. Exit codes: 0 ok, 2 usage, 3 missing artifact, 4 numeric failure.
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ehr/pipeline.hpp"

using namespace ehr;

namespace {

void print_resolved_config(const CLI::App* sub) {
    std::cout << "[" << sub->get_name() << "]\n";
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt->get_name() == "--help") continue;
        std::string value;
        if (opt->count() > 0) {
            const auto& rs = opt->results();
            for (size_t i = 0; i < rs.size(); ++i) value += (i ? "," : "") + rs[i];
        } else {
            value = opt->get_default_str();
        }
        std::cout << "  " << opt->get_name() << "=" << value << "\n";
    }
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

std::vector<std::string> parse_str_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patient representation learning from bag-of-words clinical notes"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default(true);

    const char* env_config = std::getenv("EHR_CONFIG");
    app.set_config("--config", env_config ? env_config : "",
                   "flat key=value config file with [subcommand] sections");
    app.allow_config_extras(true);

    uint64_t seed = 1;
    app.add_option("--seed", seed, "global seed; module seeds derive from it")
        ->capture_default_str();

    // generate
    auto* gen = app.add_subcommand("generate", "generate a synthetic cohort");
    cli::GenerateArgs gen_args;
    gen_args.config = synthgen::default_config();
    gen->add_option("--patients", gen_args.config.n_patients, "number of patients");
    gen->add_option("--vocab-size", gen_args.config.vocab_size, "universe size");
    gen->add_option("--conditions", gen_args.config.n_latent_conditions, "latent conditions");
    gen->add_option("--words-per-condition", gen_args.config.words_per_condition, "");
    gen->add_option("--notes-min", gen_args.config.notes_per_patient_min, "");
    gen->add_option("--notes-max", gen_args.config.notes_per_patient_max, "");
    gen->add_option("--words-min", gen_args.config.words_per_note_min, "");
    gen->add_option("--words-max", gen_args.config.words_per_note_max, "");
    gen->add_option("--negation-rate", gen_args.config.negation_rate, "");
    gen->add_option("--signal-rate", gen_args.config.signal_rate, "");
    gen->add_option("--observation-days", gen_args.config.observation_days, "");
    gen->add_option("--followup-days", gen_args.config.followup_days, "");
    gen->add_option("--relation-pairs", gen_args.config.relation_pairs, "");
    gen->add_option("--relation-floor", gen_args.config.relation_floor, "");
    gen->add_option("--out", gen_args.out_cohort, "cohort JSONL path")->required();
    gen->add_option("--out-relations", gen_args.out_relations, "relations TSV path");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "vocabulary, eras and splits");
    cli::PreprocessArgs pre_args;
    pre->add_option("--cohort", pre_args.cohort_path, "")->required();
    pre->add_option("--min-notes", pre_args.min_notes, "vocabulary floor");
    pre->add_option("--max-notes", pre_args.max_notes, "vocabulary cap (0 = half the notes)");
    pre->add_option("--observation-days", pre_args.observation_days, "0 = from cohort config");
    pre->add_option("--followup-days", pre_args.followup_days, "0 = from cohort config");
    std::vector<double> fractions = {0.6, 0.1, 0.3};
    pre->add_option("--fractions", fractions, "train/validation/test fractions")
        ->expected(3);
    pre->add_option("--out-vocab", pre_args.out_vocab, "")->required();
    pre->add_option("--out-eras", pre_args.out_eras, "")->required();
    pre->add_option("--out-split", pre_args.out_split, "")->required();

    // train-glove
    auto* tg = app.add_subcommand("train-glove", "train word embeddings on the train split");
    cli::TrainGloveArgs tg_args;
    tg->add_option("--eras", tg_args.eras_path, "")->required();
    tg->add_option("--vocab", tg_args.vocab_path, "")->required();
    tg->add_option("--split", tg_args.split_path, "train-split filter (optional)");
    tg->add_option("--dim", tg_args.glove.dim, "embedding dimension");
    tg->add_option("--window", tg_args.glove.window, "neighborhood size");
    tg->add_option("--iterations", tg_args.glove.iterations, "");
    tg->add_option("--repetitions", tg_args.glove.repetitions, "note permutations");
    tg->add_option("--x-max", tg_args.glove.x_max, "");
    tg->add_option("--alpha", tg_args.glove.alpha, "");
    tg->add_option("--learning-rate", tg_args.glove.learning_rate, "");
    tg->add_option("--shards", tg_args.shards, "co-occurrence shard count");
    tg->add_option("--out", tg_args.out_embeddings, "")->required();
    tg->add_option("--out-cooc", tg_args.out_cooccurrences, "co-occurrence TSV (optional)");

    // train-rnn / train-flat share most options
    auto add_seq_options = [](CLI::App* sub, seqmodel::SequenceModelConfig& cfg) {
        sub->add_option("--embed-dim", cfg.embed_dim, "");
        sub->add_option("--hidden-dim", cfg.hidden_dim, "");
        sub->add_option("--dropout", cfg.dropout_p, "");
        sub->add_option("--epochs", cfg.epochs, "");
        sub->add_option("--batch-size", cfg.batch_size, "");
        sub->add_option("--max-seq-len", cfg.max_seq_len, "");
        sub->add_option("--learning-rate", cfg.learning_rate, "");
        sub->add_option("--rmsprop-decay", cfg.rmsprop_decay, "");
    };

    auto* tr = app.add_subcommand("train-rnn", "train the supervised sequence model");
    cli::TrainRnnArgs tr_args;
    tr->add_option("--eras", tr_args.eras_path, "")->required();
    tr->add_option("--vocab", tr_args.vocab_path, "")->required();
    tr->add_option("--split", tr_args.split_path, "")->required();
    std::string tr_cell = "gru", tr_supervision = "final_step", tr_init = "random";
    std::string tr_encoding = "binary";
    tr->add_option("--cell", tr_cell, "gru | lstm");
    tr->add_option("--supervision", tr_supervision, "final_step | per_step");
    tr->add_option("--init", tr_init, "random | pretrained");
    tr->add_option("--input-encoding", tr_encoding, "binary | counts");
    tr->add_option("--embeddings", tr_args.pretrained_embeddings, "for --init pretrained");
    add_seq_options(tr, tr_args.config);
    tr->add_option("--out", tr_args.out_checkpoint, "")->required();
    tr->add_option("--export-embeddings", tr_args.export_embeddings,
                   "write the learned embedding layer in text format");

    auto* tf = app.add_subcommand("train-flat", "train the flat cross-channel model");
    cli::TrainFlatArgs tf_args;
    tf->add_option("--eras", tf_args.eras_path, "")->required();
    tf->add_option("--vocab", tf_args.vocab_path, "")->required();
    tf->add_option("--split", tf_args.split_path, "")->required();
    add_seq_options(tf, tf_args.config);
    tf->add_option("--out", tf_args.out_checkpoint, "")->required();
    tf->add_option("--export-embeddings", tf_args.export_embeddings, "");

    // represent
    auto* rep = app.add_subcommand("represent", "fixed-length patient representations");
    cli::RepresentArgs rep_args;
    rep->add_option("--eras", rep_args.eras_path, "")->required();
    rep->add_option("--method", rep_args.method, "ea | rnn | concat")->required();
    rep->add_option("--vocab", rep_args.vocab_path, "");
    std::string rep_embeddings, rep_aggr = "min,mean,max", rep_inputs;
    rep->add_option("--embeddings", rep_embeddings, "comma-separated embedding files (ea)");
    rep->add_option("--aggr", rep_aggr, "comma-separated aggregators (ea)");
    rep->add_flag("--count-weighted-mean", rep_args.count_weighted_mean, "");
    rep->add_option("--model", rep_args.checkpoint_path, "checkpoint (rnn)");
    rep->add_option("--inputs", rep_inputs, "two rep files (concat)");
    rep->add_option("--out", rep_args.out_reps, "")->required();

    // fit-baseline
    auto* fb = app.add_subcommand("fit-baseline", "TF-IDF / LSA / LDA baselines");
    cli::FitBaselineArgs fb_args;
    fb->add_option("--kind", fb_args.kind, "tfidf | lsa | lda")->required();
    fb->add_option("--eras", fb_args.eras_path, "")->required();
    fb->add_option("--split", fb_args.split_path, "")->required();
    fb->add_option("--vocab-cap", fb_args.vocab_cap, "most-frequent word cap");
    fb->add_option("--svd-k", fb_args.svd_k, "LSA rank (capped by data)");
    fb->add_option("--topics", fb_args.lda_topics, "");
    fb->add_option("--lda-iterations", fb_args.lda_iterations, "");
    fb->add_option("--lda-alpha", fb_args.lda_alpha, "0 = 50/K");
    fb->add_option("--lda-beta", fb_args.lda_beta, "");
    fb->add_option("--lda-pooling", fb_args.lda_pooling, "mean | max");
    fb->add_option("--out", fb_args.out_reps, "")->required();
    fb->add_option("--out-model", fb_args.out_model, "");

    // eval-curves
    auto* ec = app.add_subcommand("eval-curves", "learning curves with AUROC");
    cli::EvalCurvesArgs ec_args;
    ec->add_option("--eras", ec_args.eras_path, "")->required();
    ec->add_option("--split", ec_args.split_path, "")->required();
    std::vector<std::string> ec_reps;
    ec->add_option("--reps", ec_reps, "name=repfile (use a+b to concatenate)")
        ->required()
        ->take_all();
    std::string ec_tasks, ec_sizes = "125,250,500,1000,2000,4000";
    ec->add_option("--tasks", ec_tasks, "comma-separated (default: all in eras)");
    ec->add_option("--sizes", ec_sizes, "training set sizes");
    ec->add_option("--repeats", ec_args.params.repeats, "");
    ec->add_option("--prevalence", ec_args.params.prevalence, "");
    ec->add_option("--folds", ec_args.params.folds, "");
    ec->add_option("--workers", ec_args.params.workers, "0 = hardware concurrency");
    ec->add_option("--out", ec_args.out_results, "")->required();
    ec->add_option("--out-summary", ec_args.out_summary, "")->required();

    // eval-intrinsic
    auto* ei = app.add_subcommand("eval-intrinsic", "word analogy relatedness metric");
    cli::EvalIntrinsicArgs ei_args;
    ei->add_option("--embeddings", ei_args.embeddings_path, "")->required();
    ei->add_option("--vocab", ei_args.vocab_path, "")->required();
    ei->add_option("--relations", ei_args.relations_path, "")->required();
    ei->add_option("--top-k", ei_args.top_k, "");
    ei->add_option("--out", ei_args.out_csv, "")->required();

    // eval-notes
    auto* en = app.add_subcommand("eval-notes", "note-level kNN micro-F1");
    cli::EvalNotesArgs en_args;
    en->add_option("--cohort", en_args.cohort_path, "")->required();
    en->add_option("--vocab", en_args.vocab_path, "")->required();
    en->add_option("--rep", en_args.rep, "bow | embed");
    en->add_option("--embeddings", en_args.embeddings_path, "");
    en->add_option("--aggr", en_args.aggregator, "word pooling for embed");
    std::string en_targets = "0,1,2", en_ks = "1,3,5,7,9";
    en->add_option("--targets", en_targets, "condition ids");
    en->add_option("--max-notes", en_args.max_notes, "");
    en->add_option("--train-fraction", en_args.train_fraction, "");
    en->add_option("--k-candidates", en_ks, "");
    en->add_option("--folds", en_args.folds, "");
    en->add_option("--out", en_args.out_csv, "")->required();

    // report
    auto* rp = app.add_subcommand("report", "tables and SVG plot from a summary CSV");
    cli::ReportArgs rp_args;
    rp->add_option("--summary", rp_args.summary_path, "")->required();
    rp->add_option("--out-table", rp_args.out_table, "");
    rp->add_option("--out-svg", rp_args.out_svg, "");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    print_resolved_config(sub);

    try {
        if (sub == gen) {
            gen_args.config.seed = derive_seed(seed, "synthgen");
            gen_args.config.tasks = synthgen::default_tasks(gen_args.config.n_latent_conditions);
            cli::run_generate(gen_args);
        } else if (sub == pre) {
            pre_args.fractions = {fractions[0], fractions[1], fractions[2]};
            pre_args.seed = derive_seed(seed, "corpus");
            cli::run_preprocess(pre_args);
        } else if (sub == tg) {
            tg_args.seed = seed;
            cli::run_train_glove(tg_args);
        } else if (sub == tr) {
            tr_args.config.cell = seqmodel::cell_from_name(tr_cell);
            if (tr_args.config.cell == seqmodel::Cell::Flat)
                throw ConfigError("train-rnn: use train-flat for the flat model");
            tr_args.config.supervision = tr_supervision == "per_step"
                                             ? seqmodel::Supervision::PerStep
                                             : seqmodel::Supervision::FinalStep;
            tr_args.config.init = tr_init == "pretrained" ? seqmodel::Init::Pretrained
                                                          : seqmodel::Init::Random;
            tr_args.config.input_encoding = tr_encoding == "counts"
                                                ? seqmodel::InputEncoding::Counts
                                                : seqmodel::InputEncoding::Binary;
            tr_args.seed = seed;
            cli::run_train_rnn(tr_args);
        } else if (sub == tf) {
            tf_args.seed = seed;
            cli::run_train_flat(tf_args);
        } else if (sub == rep) {
            if (!rep_embeddings.empty()) rep_args.embedding_paths = parse_str_list(rep_embeddings);
            rep_args.aggregators = parse_str_list(rep_aggr);
            if (!rep_inputs.empty()) rep_args.input_reps = parse_str_list(rep_inputs);
            cli::run_represent(rep_args);
        } else if (sub == fb) {
            fb_args.seed = seed;
            cli::run_fit_baseline(fb_args);
        } else if (sub == ec) {
            for (const auto& spec : ec_reps) {
                const auto eq = spec.find('=');
                if (eq == std::string::npos)
                    throw ConfigError("--reps expects name=path, got: " + spec);
                ec_args.reps[spec.substr(0, eq)] = spec.substr(eq + 1);
            }
            if (!ec_tasks.empty()) ec_args.tasks = parse_str_list(ec_tasks);
            ec_args.params.sizes = parse_int_list(ec_sizes);
            ec_args.params.seed = derive_seed(seed, "evalkit");
            cli::run_eval_curves(ec_args);
        } else if (sub == ei) {
            cli::run_eval_intrinsic(ei_args);
        } else if (sub == en) {
            en_args.targets = parse_int_list(en_targets);
            en_args.k_candidates = parse_int_list(en_ks);
            en_args.seed = seed;
            cli::run_eval_notes(en_args);
        } else if (sub == rp) {
            cli::run_report(rp_args);
        }
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const MetricError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
