#include "ehr/evalkit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace ehr::evalkit {

namespace {

constexpr double kProbClamp = 1e-15;

VectorXd sigmoid_vec(const VectorXd& x) {
    return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

double clamped_bce(double p, double y) {
    p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

struct Standardizer {
    VectorXd mean;
    VectorXd scale;

    static Standardizer fit(const MatrixXd& x) {
        Standardizer s;
        s.mean = x.colwise().mean();
        s.scale.resize(x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double var = (x.col(j).array() - s.mean(j)).square().mean();
            s.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
        }
        return s;
    }
    static Standardizer identity(Eigen::Index d) {
        Standardizer s;
        s.mean = VectorXd::Zero(d);
        s.scale = VectorXd::Ones(d);
        return s;
    }
    MatrixXd apply(const MatrixXd& x) const {
        return (x.rowwise() - mean.transpose()).array().rowwise() /
               scale.transpose().array();
    }
};

double objective_for(const MatrixXd& x, const VectorXd& y, const VectorXd& beta, double b,
                     double lambda) {
    const VectorXd p = sigmoid_vec(((x * beta).array() + b).matrix());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) loss += clamped_bce(p(i), y(i));
    loss /= static_cast<double>(p.size());
    return loss + 0.5 * lambda * beta.squaredNorm();
}

struct PathFit {
    MatrixXd coefs;       // d x n_lambda
    VectorXd intercepts;  // n_lambda
    std::vector<char> converged;
};

// Warm-started Newton (IRLS with line search) along a descending lambda
// path. x is already in the space where the L2 penalty applies.
PathFit fit_path_core(const MatrixXd& x, const VectorXd& y,
                      const std::vector<double>& lambdas, const RidgeOptions& opt) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    PathFit fit;
    fit.coefs = MatrixXd::Zero(d, static_cast<Eigen::Index>(lambdas.size()));
    fit.intercepts = VectorXd::Zero(static_cast<Eigen::Index>(lambdas.size()));
    fit.converged.assign(lambdas.size(), 0);

    VectorXd beta = VectorXd::Zero(d);
    const double ybar = std::clamp(y.mean(), kProbClamp, 1.0 - kProbClamp);
    double b = std::log(ybar / (1.0 - ybar));

    MatrixXd hess(d + 1, d + 1);
    VectorXd grad(d + 1), delta(d + 1);

    for (size_t li = 0; li < lambdas.size(); ++li) {
        const double lambda = lambdas[li];
        bool done = false;
        for (int it = 0; it < opt.max_newton; ++it) {
            const VectorXd p = sigmoid_vec(((x * beta).array() + b).matrix());
            const VectorXd resid = p - y;
            grad(0) = resid.mean();
            grad.tail(d) = x.transpose() * resid / static_cast<double>(n) + lambda * beta;
            if (grad.cwiseAbs().maxCoeff() < opt.tol) {
                done = true;
                break;
            }

            const VectorXd w = (p.array() * (1.0 - p.array())).matrix();
            const VectorXd sw = w.cwiseSqrt();
            MatrixXd xw = x.array().colwise() * sw.array();
            hess.setZero();
            {
                auto block = hess.block(1, 1, d, d);
                block.selfadjointView<Eigen::Lower>().rankUpdate(
                    xw.transpose(), 1.0 / static_cast<double>(n));
                block = MatrixXd(block.selfadjointView<Eigen::Lower>());
                block.diagonal().array() += lambda;
            }
            hess(0, 0) = w.mean();
            hess.block(1, 0, d, 1) = x.transpose() * w / static_cast<double>(n);
            hess.block(0, 1, 1, d) = hess.block(1, 0, d, 1).transpose();

            delta = hess.ldlt().solve(-grad);
            const double j0 = objective_for(x, y, beta, b, lambda);
            double step = 1.0;
            VectorXd beta_new;
            double b_new = b;
            bool improved = false;
            for (int ls = 0; ls < 40; ++ls) {
                beta_new = beta + step * delta.tail(d);
                b_new = b + step * delta(0);
                if (objective_for(x, y, beta_new, b_new, lambda) <= j0 + 1e-12) {
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if (!improved) break;  // stalled; the final check decides
            beta = beta_new;
            b = b_new;
        }
        if (!done) {
            const VectorXd p = sigmoid_vec(((x * beta).array() + b).matrix());
            const VectorXd g =
                x.transpose() * (p - y) / static_cast<double>(n) + lambda * beta;
            done = std::max(g.cwiseAbs().maxCoeff(), std::abs((p - y).mean())) < opt.tol;
        }
        fit.coefs.col(static_cast<Eigen::Index>(li)) = beta;
        fit.intercepts(static_cast<Eigen::Index>(li)) = b;
        fit.converged[li] = done ? 1 : 0;
    }
    return fit;
}

// When n < d the minimizer lives in the row space of x; an economy SVD turns
// the fit into an exactly equivalent lower-dimensional problem.
struct FitSpace {
    MatrixXd z;     // n x r
    MatrixXd back;  // d x r; beta = back * gamma
    bool reduced = false;
};

FitSpace reduce_space(const MatrixXd& x) {
    FitSpace space;
    if (x.rows() >= x.cols()) {
        space.z = x;
        return space;
    }
    Eigen::BDCSVD<MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cut = sv.size() > 0 ? sv(0) * 1e-12 : 0.0;
    Eigen::Index r = 0;
    while (r < sv.size() && sv(r) > cut) ++r;
    r = std::max<Eigen::Index>(r, 1);
    space.z = svd.matrixU().leftCols(r) * sv.head(r).asDiagonal();
    space.back = svd.matrixV().leftCols(r);
    space.reduced = true;
    return space;
}

std::vector<double> make_lambda_path(const MatrixXd& x_std, const VectorXd& y,
                                     const RidgeOptions& opt) {
    const double ybar = y.mean();
    const VectorXd score = x_std.transpose() * (y.array() - ybar).matrix();
    double lambda_max = score.cwiseAbs().maxCoeff() / static_cast<double>(x_std.rows());
    lambda_max = std::max(lambda_max, 1e-6);
    std::vector<double> path(static_cast<size_t>(opt.n_lambda));
    for (int i = 0; i < opt.n_lambda; ++i) {
        const double f =
            opt.n_lambda == 1 ? 0.0 : static_cast<double>(i) / (opt.n_lambda - 1);
        path[static_cast<size_t>(i)] = lambda_max * std::pow(10.0, -opt.lambda_decades * f);
    }
    return path;
}

// Stratified fold ids so every fold sees both classes whenever possible.
std::vector<int> fold_assignment(const std::vector<int>& y, int folds, uint64_t seed) {
    std::vector<size_t> pos, neg;
    for (size_t i = 0; i < y.size(); ++i) (y[i] != 0 ? pos : neg).push_back(i);
    Rng rng(derive_seed(seed, "cv-folds"));
    rng.shuffle(pos);
    rng.shuffle(neg);
    std::vector<int> fold(y.size(), 0);
    int next = 0;
    for (size_t i : pos) fold[i] = next++ % folds;
    for (size_t i : neg) fold[i] = next++ % folds;
    return fold;
}

}  // namespace

double penalized_objective(const MatrixXd& x, const std::vector<int>& y, const VectorXd& coef,
                           double intercept, double lambda) {
    VectorXd yd(static_cast<Eigen::Index>(y.size()));
    for (size_t i = 0; i < y.size(); ++i) yd(static_cast<Eigen::Index>(i)) = y[i];
    return objective_for(x, yd, coef, intercept, lambda);
}

RidgeLogisticModel fit_ridge_logistic(const MatrixXd& x, const std::vector<int>& y,
                                      std::vector<double> lambda_path, int folds, uint64_t seed,
                                      const RidgeOptions& options) {
    const Eigen::Index n = x.rows();
    if (n != static_cast<Eigen::Index>(y.size()))
        throw ConfigError("fit_ridge_logistic: row/label mismatch");
    int n_pos = 0;
    for (int v : y) n_pos += (v != 0);
    if (n_pos == 0 || n_pos == static_cast<int>(y.size()))
        throw MetricError("fit_ridge_logistic: single-class labels");
    if (folds < 2 || n < folds) throw ConfigError("fit_ridge_logistic: need >= folds samples");

    VectorXd yd(n);
    for (Eigen::Index i = 0; i < n; ++i) yd(i) = y[static_cast<size_t>(i)];

    RidgeLogisticModel model;
    model.standardized = options.standardize;
    Standardizer full_std =
        options.standardize ? Standardizer::fit(x) : Standardizer::identity(x.cols());
    const MatrixXd x_std = full_std.apply(x);
    model.feature_mean = full_std.mean;
    model.feature_scale = full_std.scale;

    if (lambda_path.empty()) lambda_path = make_lambda_path(x_std, yd, options);
    model.lambda_path = lambda_path;
    model.cv_deviance.assign(lambda_path.size(), 0.0);

    size_t chosen = 0;
    if (lambda_path.size() > 1) {
        const std::vector<int> fold = fold_assignment(y, folds, seed);
        std::vector<double> dev_sum(lambda_path.size(), 0.0);
        std::vector<int> dev_cnt(lambda_path.size(), 0);
        std::vector<bool> lambda_ok(lambda_path.size(), true);

        for (int f = 0; f < folds; ++f) {
            std::vector<Eigen::Index> tr, va;
            for (Eigen::Index i = 0; i < n; ++i)
                (fold[static_cast<size_t>(i)] == f ? va : tr).push_back(i);
            if (va.empty() || tr.empty()) continue;

            MatrixXd x_tr(static_cast<Eigen::Index>(tr.size()), x.cols());
            MatrixXd x_va(static_cast<Eigen::Index>(va.size()), x.cols());
            VectorXd y_tr(static_cast<Eigen::Index>(tr.size()));
            VectorXd y_va(static_cast<Eigen::Index>(va.size()));
            for (size_t i = 0; i < tr.size(); ++i) {
                x_tr.row(static_cast<Eigen::Index>(i)) = x.row(tr[i]);
                y_tr(static_cast<Eigen::Index>(i)) = yd(tr[i]);
            }
            for (size_t i = 0; i < va.size(); ++i) {
                x_va.row(static_cast<Eigen::Index>(i)) = x.row(va[i]);
                y_va(static_cast<Eigen::Index>(i)) = yd(va[i]);
            }
            if (y_tr.sum() == 0.0 || y_tr.sum() == static_cast<double>(tr.size())) continue;

            Standardizer st = options.standardize ? Standardizer::fit(x_tr)
                                                  : Standardizer::identity(x.cols());
            FitSpace space = reduce_space(st.apply(x_tr));
            PathFit fit = fit_path_core(space.z, y_tr, lambda_path, options);
            const MatrixXd x_va_std = st.apply(x_va);

            for (size_t li = 0; li < lambda_path.size(); ++li) {
                if (!fit.converged[li]) {
                    std::cerr << "warning: ridge lambda " << lambda_path[li]
                              << " skipped (no convergence in fold " << f << ")\n";
                    lambda_ok[li] = false;
                    continue;
                }
                VectorXd beta = fit.coefs.col(static_cast<Eigen::Index>(li));
                if (space.reduced) beta = space.back * beta;
                const VectorXd p = sigmoid_vec(
                    ((x_va_std * beta).array() + fit.intercepts(static_cast<Eigen::Index>(li)))
                        .matrix());
                double dev = 0.0;
                for (Eigen::Index i = 0; i < p.size(); ++i)
                    dev += 2.0 * clamped_bce(p(i), y_va(i));
                dev_sum[li] += dev / static_cast<double>(p.size());
                dev_cnt[li] += 1;
            }
        }

        double best = std::numeric_limits<double>::infinity();
        bool any = false;
        for (size_t li = 0; li < lambda_path.size(); ++li) {
            const double mean_dev = lambda_ok[li] && dev_cnt[li] > 0
                                        ? dev_sum[li] / dev_cnt[li]
                                        : std::numeric_limits<double>::infinity();
            model.cv_deviance[li] = mean_dev;
            if (mean_dev < best) {
                best = mean_dev;
                chosen = li;
                any = true;
            }
        }
        if (!any) throw NumericError("fit_ridge_logistic: no lambda converged in CV");
    } else {
        model.cv_deviance[0] = std::numeric_limits<double>::quiet_NaN();
    }

    // Final refit on all rows, warm started along the path prefix.
    std::vector<double> prefix(lambda_path.begin(),
                               lambda_path.begin() + static_cast<long>(chosen) + 1);
    FitSpace space = reduce_space(x_std);
    PathFit fit = fit_path_core(space.z, yd, prefix, options);
    if (!fit.converged.back())
        throw NumericError("fit_ridge_logistic: final refit did not converge");
    VectorXd beta = fit.coefs.col(static_cast<Eigen::Index>(prefix.size()) - 1);
    if (space.reduced) beta = space.back * beta;
    model.coef = beta;
    model.intercept = fit.intercepts(static_cast<Eigen::Index>(prefix.size()) - 1);
    model.lambda = lambda_path[chosen];
    return model;
}

VectorXd predict_proba(const RidgeLogisticModel& model, const MatrixXd& x) {
    if (x.cols() != model.coef.size())
        throw ConfigError("predict_proba: feature dimension mismatch");
    MatrixXd xs = x;
    if (model.standardized)
        xs = (x.rowwise() - model.feature_mean.transpose()).array().rowwise() /
             model.feature_scale.transpose().array();
    return sigmoid_vec(((xs * model.coef).array() + model.intercept).matrix());
}

std::vector<int64_t> stratified_subsample(std::span<const int64_t> ids,
                                          const std::unordered_map<int64_t, int>& labels, int n,
                                          double prevalence, uint64_t seed) {
    if (n < 1) throw ConfigError("stratified_subsample: n must be >= 1");
    if (prevalence < 0.0 || prevalence > 1.0)
        throw ConfigError("stratified_subsample: prevalence not in [0,1]");
    const int need_pos = static_cast<int>(std::llround(prevalence * n));
    const int need_neg = n - need_pos;

    std::vector<int64_t> pos, neg;
    for (int64_t id : ids) {
        auto it = labels.find(id);
        if (it == labels.end()) throw ConfigError("stratified_subsample: missing label");
        (it->second != 0 ? pos : neg).push_back(id);
    }
    if (static_cast<int>(pos.size()) < need_pos)
        throw ConfigError("stratified_subsample: need " + std::to_string(need_pos) +
                          " positives, only " + std::to_string(pos.size()) +
                          " available (deficit " +
                          std::to_string(need_pos - static_cast<int>(pos.size())) + ")");
    if (static_cast<int>(neg.size()) < need_neg)
        throw ConfigError("stratified_subsample: need " + std::to_string(need_neg) +
                          " negatives, only " + std::to_string(neg.size()) +
                          " available (deficit " +
                          std::to_string(need_neg - static_cast<int>(neg.size())) + ")");

    Rng rng(derive_seed(seed, "stratified"));
    std::vector<int64_t> out = rng.sample(pos, static_cast<size_t>(need_pos));
    std::vector<int64_t> negs = rng.sample(neg, static_cast<size_t>(need_neg));
    out.insert(out.end(), negs.begin(), negs.end());
    std::sort(out.begin(), out.end());
    return out;
}

const CurveSummary& LearningCurveResult::summary(const std::string& method,
                                                 const std::string& task, int n) const {
    for (const auto& s : summaries)
        if (s.method == method && s.task == task && s.n == n) return s;
    throw ConfigError("no summary for " + method + "/" + task + "/" + std::to_string(n));
}

LearningCurveResult learning_curve(const LearningCurveInput& input, const CurveParams& params) {
    if (input.representations.empty()) throw ConfigError("learning_curve: no methods");

    // Methods share subsamples, so eligibility is the intersection of
    // coverage over all methods.
    auto covered_by_all = [&](int64_t id) {
        for (const auto& [_, reps] : input.representations)
            if (!reps.count(id)) return false;
        return true;
    };
    std::vector<int64_t> pool, test_ids;
    for (int64_t id : input.train_pool)
        if (covered_by_all(id) && input.labels.count(id)) pool.push_back(id);
    for (int64_t id : input.test_ids)
        if (covered_by_all(id) && input.labels.count(id)) test_ids.push_back(id);
    std::sort(pool.begin(), pool.end());
    std::sort(test_ids.begin(), test_ids.end());
    if (test_ids.empty()) throw ConfigError("learning_curve: empty covered test set");

    std::vector<int> test_labels;
    test_labels.reserve(test_ids.size());
    for (int64_t id : test_ids) test_labels.push_back(input.labels.at(id));

    // Per-method test matrices, built once.
    std::map<std::string, MatrixXd> test_x;
    for (const auto& [method, reps] : input.representations) {
        const auto d = static_cast<Eigen::Index>(reps.at(test_ids[0]).size());
        MatrixXd xt(static_cast<Eigen::Index>(test_ids.size()), d);
        for (size_t i = 0; i < test_ids.size(); ++i) {
            const auto& v = reps.at(test_ids[i]);
            if (static_cast<Eigen::Index>(v.size()) != d)
                throw ConfigError("learning_curve: ragged representation for " + method);
            xt.row(static_cast<Eigen::Index>(i)) =
                Eigen::Map<const VectorXd>(v.data(), d).transpose();
        }
        test_x[method] = std::move(xt);
    }

    // Shared subsamples per (size, repeat).
    struct Draw {
        std::vector<int64_t> ids;
        uint64_t seed = 0;
        std::string error;
    };
    std::map<std::pair<int, int>, Draw> draws;
    for (int size : params.sizes) {
        for (int rep = 0; rep < params.repeats; ++rep) {
            Draw d;
            const uint64_t key = (static_cast<uint64_t>(size) << 20) ^ static_cast<uint64_t>(rep);
            d.seed = derive_seed(params.seed, "subsample", key);
            try {
                d.ids = stratified_subsample(pool, input.labels, size, params.prevalence, d.seed);
            } catch (const std::exception& e) {
                d.error = e.what();
            }
            draws[{size, rep}] = std::move(d);
        }
    }

    LearningCurveResult result;
    for (const auto& [method, _] : input.representations)
        for (int size : params.sizes)
            for (int rep = 0; rep < params.repeats; ++rep) {
                CurveCell cell;
                cell.method = method;
                cell.task = input.task;
                cell.n = size;
                cell.repeat = rep;
                cell.seed = draws.at({size, rep}).seed;
                result.cells.push_back(std::move(cell));
            }

    std::atomic<size_t> next{0};
    auto run_cell = [&](CurveCell& cell) {
        const Draw& draw = draws.at({cell.n, cell.repeat});
        if (!draw.error.empty()) {
            cell.error = draw.error;
            return;
        }
        try {
            const RepMap& reps = input.representations.at(cell.method);
            const auto d = static_cast<Eigen::Index>(reps.at(draw.ids[0]).size());
            MatrixXd x(static_cast<Eigen::Index>(draw.ids.size()), d);
            std::vector<int> y(draw.ids.size());
            for (size_t i = 0; i < draw.ids.size(); ++i) {
                const auto& v = reps.at(draw.ids[i]);
                x.row(static_cast<Eigen::Index>(i)) =
                    Eigen::Map<const VectorXd>(v.data(), d).transpose();
                y[i] = input.labels.at(draw.ids[i]);
            }
            RidgeLogisticModel model = fit_ridge_logistic(
                x, y, {}, params.folds,
                derive_seed(params.seed, "fit",
                            (static_cast<uint64_t>(cell.n) << 20) ^
                                static_cast<uint64_t>(cell.repeat)),
                params.ridge);
            const VectorXd scores = predict_proba(model, test_x.at(cell.method));
            cell.auroc =
                auroc(std::span<const double>(scores.data(), static_cast<size_t>(scores.size())),
                      test_labels);
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    };

    int workers = params.workers;
    if (workers == 0)
        workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (auto& cell : result.cells) run_cell(cell);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < workers; ++w)
            threads.emplace_back([&] {
                for (;;) {
                    const size_t i = next.fetch_add(1);
                    if (i >= result.cells.size()) return;
                    run_cell(result.cells[i]);
                }
            });
        for (auto& t : threads) t.join();
    }

    for (const auto& [method, _] : input.representations) {
        for (int size : params.sizes) {
            CurveSummary s;
            s.method = method;
            s.task = input.task;
            s.n = size;
            std::vector<double> vals;
            for (const auto& cell : result.cells)
                if (cell.ok && cell.method == method && cell.n == size)
                    vals.push_back(cell.auroc);
            s.n_ok = static_cast<int>(vals.size());
            if (!vals.empty()) {
                s.mean_auroc = std::accumulate(vals.begin(), vals.end(), 0.0) /
                               static_cast<double>(vals.size());
                if (vals.size() > 1) {
                    double ss = 0.0;
                    for (double v : vals) ss += (v - s.mean_auroc) * (v - s.mean_auroc);
                    s.sem = std::sqrt(ss / static_cast<double>(vals.size() - 1)) /
                            std::sqrt(static_cast<double>(vals.size()));
                }
            }
            result.summaries.push_back(std::move(s));
        }
    }
    return result;
}

PatientRepresentation wide_and_deep(const PatientRepresentation& a,
                                    const PatientRepresentation& b) {
    PatientRepresentation out;
    out.values = a.values;
    out.values.insert(out.values.end(), b.values.begin(), b.values.end());
    out.method = "wd(" + a.method + "+" + b.method + ")";
    return out;
}

std::vector<std::tuple<std::string, std::string, std::string>> load_relations_tsv(
    const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<std::tuple<std::string, std::string, std::string>> triples;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string rel, drug, ind;
        if (!std::getline(ss, rel, '\t') || !std::getline(ss, drug, '\t') ||
            !std::getline(ss, ind))
            throw IoError("malformed relation line " + std::to_string(line_no) + " in " + path);
        triples.emplace_back(rel, drug, ind);
    }
    return triples;
}

RelationSet resolve_relations(
    const std::vector<std::tuple<std::string, std::string, std::string>>& triples,
    const corpus::Vocabulary& vocab, const embed::EmbeddingMatrix& emb) {
    RelationSet set;
    for (const auto& [rel, drug, ind] : triples) {
        auto d = vocab.lookup(drug);
        auto m = vocab.lookup(ind);
        if (!d || !m || !emb.is_covered(*d) || !emb.is_covered(*m)) continue;
        set.relations[rel].emplace_back(*d, *m);
    }
    return set;
}

std::map<std::string, RelatednessRow> relatedness_score(const embed::EmbeddingMatrix& emb,
                                                        const RelationSet& relations, int top_k) {
    if (top_k < 1) throw ConfigError("relatedness_score: top_k must be >= 1");

    std::vector<uint32_t> covered;
    for (uint32_t id = 0; id < emb.covered.size(); ++id)
        if (emb.covered[id]) covered.push_back(id);

    // Unit rows once; zero vectors keep cosine 0.
    embed::RowMatrixXd unit = emb.vectors;
    for (uint32_t id : covered) {
        const double norm = unit.row(id).norm();
        if (norm > 0.0) unit.row(id) /= norm;
    }

    std::map<std::string, RelatednessRow> out;
    for (const auto& [name, pairs] : relations.relations) {
        if (pairs.size() < 2) {
            std::cerr << "warning: relation " << name
                      << " has fewer than 2 covered pairs; skipped\n";
            continue;
        }
        std::set<uint64_t> members;
        for (const auto& [d, m] : pairs) members.insert((static_cast<uint64_t>(d) << 32) | m);

        RelatednessRow row;
        std::vector<std::pair<double, uint32_t>> ranked;
        for (size_t p1 = 0; p1 < pairs.size(); ++p1) {
            for (size_t p2 = 0; p2 < pairs.size(); ++p2) {
                if (p1 == p2) continue;
                const auto [d1, m1] = pairs[p1];
                const auto m2 = pairs[p2].second;
                Eigen::RowVectorXd q =
                    emb.vectors.row(d1) - emb.vectors.row(m1) + emb.vectors.row(m2);
                const double qn = q.norm();
                if (qn > 0.0) q /= qn;

                ranked.clear();
                for (uint32_t id : covered) {
                    if (id == d1 || id == m1 || id == m2) continue;
                    ranked.emplace_back(unit.row(id).dot(q), id);
                }
                const size_t k = std::min<size_t>(static_cast<size_t>(top_k), ranked.size());
                std::partial_sort(ranked.begin(), ranked.begin() + static_cast<long>(k),
                                  ranked.end(), [](const auto& a, const auto& b) {
                                      if (a.first != b.first) return a.first > b.first;
                                      return a.second < b.second;
                                  });
                ++row.queries;
                for (size_t i = 0; i < k; ++i) {
                    const uint64_t key = (static_cast<uint64_t>(ranked[i].second) << 32) | m2;
                    if (members.count(key)) {
                        ++row.successes;
                        break;
                    }
                }
            }
        }
        row.ratio = row.queries > 0
                        ? static_cast<double>(row.successes) / static_cast<double>(row.queries)
                        : 0.0;
        out[name] = row;
    }
    return out;
}

const char* note_class_name(NoteClass c) {
    switch (c) {
        case NoteClass::Present: return "present";
        case NoteClass::Absent: return "absent";
        case NoteClass::Questionable: return "questionable";
        case NoteClass::Unmentioned: return "unmentioned";
    }
    return "?";
}

NoteEvalSet build_note_eval_set(const synthgen::CohortDataset& cohort,
                                const corpus::Vocabulary& vocab,
                                const std::vector<int>& target_conditions, size_t max_notes,
                                double train_fraction, uint64_t seed) {
    if (target_conditions.empty()) throw ConfigError("build_note_eval_set: no targets");
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw ConfigError("build_note_eval_set: train_fraction must be in (0,1)");

    std::vector<std::set<uint32_t>> lexica;
    for (int c : target_conditions) {
        if (c < 0 || c >= static_cast<int>(cohort.condition_lexicon.size()))
            throw ConfigError("build_note_eval_set: unknown condition " + std::to_string(c));
        lexica.emplace_back(cohort.condition_lexicon[c].begin(),
                            cohort.condition_lexicon[c].end());
    }

    corpus::NoteEncoder encoder(cohort.vocabulary_universe, vocab);
    NoteEvalSet set;
    for (int c : target_conditions) set.targets.push_back("cond_" + std::to_string(c));

    for (const auto& p : cohort.patients) {
        for (const auto& note : p.notes) {
            corpus::BagOfWords bag = encoder.encode(note);
            if (bag.empty()) continue;
            std::vector<NoteClass> row;
            for (const auto& lex : lexica) {
                int pos = 0, neg = 0;
                for (const auto& t : note.tokens) {
                    if (!lex.count(t.word)) continue;
                    (t.negated ? neg : pos) += static_cast<int>(t.count);
                }
                NoteClass cls = NoteClass::Unmentioned;
                if (pos > 0 && neg > 0)
                    cls = NoteClass::Questionable;
                else if (pos > 0)
                    cls = NoteClass::Present;
                else if (neg > 0)
                    cls = NoteClass::Absent;
                row.push_back(cls);
            }
            set.notes.push_back(std::move(bag));
            set.labels.push_back(std::move(row));
        }
    }

    std::vector<size_t> order(set.notes.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "note-eval"));
    rng.shuffle(order);
    if (order.size() > max_notes) order.resize(max_notes);

    std::vector<corpus::BagOfWords> notes;
    std::vector<std::vector<NoteClass>> labels;
    for (size_t i : order) {
        notes.push_back(std::move(set.notes[i]));
        labels.push_back(std::move(set.labels[i]));
    }
    set.notes = std::move(notes);
    set.labels = std::move(labels);

    const size_t n_train = static_cast<size_t>(
        std::llround(train_fraction * static_cast<double>(set.notes.size())));
    for (size_t i = 0; i < set.notes.size(); ++i)
        (i < n_train ? set.train_idx : set.test_idx).push_back(i);
    return set;
}

namespace {

struct KnnIndex {
    std::vector<VectorXd> unit;  // normalized representations

    static KnnIndex build(const NoteEvalSet& set, const NoteRepFn& rep_fn) {
        KnnIndex idx;
        idx.unit.reserve(set.notes.size());
        for (const auto& bag : set.notes) {
            std::vector<double> v = rep_fn(bag);
            VectorXd e =
                Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
            const double norm = e.norm();
            if (norm > 0.0) e /= norm;
            idx.unit.push_back(std::move(e));
        }
        return idx;
    }
};

NoteClass knn_predict(const KnnIndex& idx, const std::vector<size_t>& train,
                      const std::vector<NoteClass>& train_labels, size_t query, int k) {
    std::vector<std::pair<double, size_t>> sims;
    sims.reserve(train.size());
    for (size_t t = 0; t < train.size(); ++t)
        sims.emplace_back(idx.unit[train[t]].dot(idx.unit[query]), t);
    const size_t kk = std::min<size_t>(static_cast<size_t>(k), sims.size());
    std::partial_sort(sims.begin(), sims.begin() + static_cast<long>(kk), sims.end(),
                      [&](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return train[a.second] < train[b.second];  // lower note index first
                      });
    int votes[kNoteClasses] = {0, 0, 0, 0};
    for (size_t i = 0; i < kk; ++i) votes[static_cast<int>(train_labels[sims[i].second])]++;
    int best = 0;
    for (int c = 1; c < kNoteClasses; ++c)
        if (votes[c] > votes[best]) best = c;  // ties to the lowest class index
    return static_cast<NoteClass>(best);
}

double micro_f1_of_predictions(const std::vector<NoteClass>& pred,
                               const std::vector<NoteClass>& truth) {
    PrfCounts counts;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == truth[i]) {
            ++counts.tp;
        } else {
            ++counts.fp;
            ++counts.fn;
        }
    }
    return micro_f1(counts);
}

}  // namespace

NoteEvalResult knn_note_eval(const NoteEvalSet& set, const NoteRepFn& rep_fn,
                             const std::vector<int>& k_candidates, int folds, uint64_t seed) {
    if (k_candidates.empty()) throw ConfigError("knn_note_eval: empty k candidate list");
    if (folds < 2) throw ConfigError("knn_note_eval: folds must be >= 2");
    if (set.train_idx.size() < static_cast<size_t>(folds))
        throw ConfigError("knn_note_eval: not enough training notes for the folds");

    const KnnIndex idx = KnnIndex::build(set, rep_fn);

    std::vector<size_t> order = set.train_idx;
    Rng rng(derive_seed(seed, "knn-folds"));
    rng.shuffle(order);
    std::vector<int> fold_of(order.size());
    for (size_t i = 0; i < order.size(); ++i) fold_of[i] = static_cast<int>(i % folds);

    NoteEvalResult result;
    for (size_t t = 0; t < set.targets.size(); ++t) {
        int best_k = k_candidates[0];
        double best_f1 = -1.0;
        for (int k : k_candidates) {
            std::vector<NoteClass> pred, truth;
            for (int f = 0; f < folds; ++f) {
                std::vector<size_t> tr;
                std::vector<NoteClass> tr_labels;
                std::vector<size_t> va;
                for (size_t i = 0; i < order.size(); ++i) {
                    if (fold_of[i] == f) {
                        va.push_back(order[i]);
                    } else {
                        tr.push_back(order[i]);
                        tr_labels.push_back(set.labels[order[i]][t]);
                    }
                }
                for (size_t q : va) {
                    pred.push_back(knn_predict(idx, tr, tr_labels, q, k));
                    truth.push_back(set.labels[q][t]);
                }
            }
            const double f1 = micro_f1_of_predictions(pred, truth);
            if (f1 > best_f1) {
                best_f1 = f1;
                best_k = k;
            }
        }

        std::vector<size_t> tr = set.train_idx;
        std::vector<NoteClass> tr_labels;
        for (size_t i : tr) tr_labels.push_back(set.labels[i][t]);
        std::vector<NoteClass> pred, truth;
        for (size_t q : set.test_idx) {
            pred.push_back(knn_predict(idx, tr, tr_labels, q, best_k));
            truth.push_back(set.labels[q][t]);
        }
        NoteEvalRow row;
        row.target = set.targets[t];
        row.chosen_k = best_k;
        row.f1 = micro_f1_of_predictions(pred, truth);
        result.per_target.push_back(row);
        result.mean_f1 += row.f1;
    }
    result.mean_f1 /= static_cast<double>(result.per_target.size());
    return result;
}

}  // namespace ehr::evalkit
