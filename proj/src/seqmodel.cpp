#include "ehr/seqmodel.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace ehr::seqmodel {

using nlohmann::json;

Cell cell_from_name(const std::string& name) {
    if (name == "gru") return Cell::Gru;
    if (name == "lstm") return Cell::Lstm;
    if (name == "flat") return Cell::Flat;
    throw ConfigError("unknown cell: " + name);
}

const char* cell_name(Cell c) {
    switch (c) {
        case Cell::Gru: return "gru";
        case Cell::Lstm: return "lstm";
        case Cell::Flat: return "flat";
    }
    return "?";
}

void SequenceModelConfig::validate() const {
    if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
    if (embed_dim < 1 || hidden_dim < 1 || n_labels < 1)
        throw ConfigError("model dimensions must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must be in [0,1)");
    if (epochs < 0 || batch_size < 1 || max_seq_len < 1)
        throw ConfigError("invalid training schedule");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (rmsprop_decay < 0.0 || rmsprop_decay >= 1.0)
        throw ConfigError("rmsprop_decay must be in [0,1)");
    if (cell == Cell::Flat && hidden_dim != embed_dim)
        throw ConfigError("flat cell requires hidden_dim == embed_dim");
}

ModelTensors ModelTensors::shaped(const SequenceModelConfig& cfg) {
    ModelTensors t;
    const int v = cfg.vocab_size, d = cfg.embed_dim, h = cfg.hidden_dim, l = cfg.n_labels;
    t.embedding = MatrixXd::Zero(v, d);
    if (cfg.cell == Cell::Gru) {
        for (MatrixXd* m : {&t.w_z, &t.w_r, &t.w_h}) *m = MatrixXd::Zero(h, d);
        for (MatrixXd* m : {&t.u_z, &t.u_r, &t.u_h}) *m = MatrixXd::Zero(h, h);
        for (MatrixXd* m : {&t.b_z, &t.b_r, &t.b_h}) *m = MatrixXd::Zero(h, 1);
    } else if (cfg.cell == Cell::Lstm) {
        for (MatrixXd* m : {&t.w_i, &t.w_f, &t.w_o, &t.w_g}) *m = MatrixXd::Zero(h, d);
        for (MatrixXd* m : {&t.u_i, &t.u_f, &t.u_o, &t.u_g}) *m = MatrixXd::Zero(h, h);
        for (MatrixXd* m : {&t.b_i, &t.b_f, &t.b_o, &t.b_g}) *m = MatrixXd::Zero(h, 1);
    }
    t.w_head = MatrixXd::Zero(h, l);
    t.b_head = MatrixXd::Zero(l, 1);
    return t;
}

void ModelTensors::set_zero() {
    for_each([](const char*, MatrixXd& m) { m.setZero(); });
}

namespace {

template <class T, class Fn>
void visit_tensors(T& t, Fn&& fn) {
    fn("embedding", t.embedding);
    fn("w_z", t.w_z); fn("u_z", t.u_z); fn("b_z", t.b_z);
    fn("w_r", t.w_r); fn("u_r", t.u_r); fn("b_r", t.b_r);
    fn("w_h", t.w_h); fn("u_h", t.u_h); fn("b_h", t.b_h);
    fn("w_i", t.w_i); fn("u_i", t.u_i); fn("b_i", t.b_i);
    fn("w_f", t.w_f); fn("u_f", t.u_f); fn("b_f", t.b_f);
    fn("w_o", t.w_o); fn("u_o", t.u_o); fn("b_o", t.b_o);
    fn("w_g", t.w_g); fn("u_g", t.u_g); fn("b_g", t.b_g);
    fn("w_head", t.w_head); fn("b_head", t.b_head);
}

}  // namespace

void ModelTensors::for_each(const std::function<void(const char*, MatrixXd&)>& fn) {
    visit_tensors(*this, [&](const char* name, MatrixXd& m) {
        if (m.size() > 0) fn(name, m);
    });
}

void ModelTensors::for_each(const std::function<void(const char*, const MatrixXd&)>& fn) const {
    visit_tensors(*this, [&](const char* name, const MatrixXd& m) {
        if (m.size() > 0) fn(name, m);
    });
}

size_t ModelTensors::parameter_count() const {
    size_t n = 0;
    for_each([&](const char*, const MatrixXd& m) { n += static_cast<size_t>(m.size()); });
    return n;
}

SequenceSample make_sequence(const corpus::EraView& era, const SequenceModelConfig& cfg) {
    corpus::EraView merged = corpus::merge_same_day(era);
    SequenceSample sample;
    sample.patient_id = era.patient_id;

    const size_t total = merged.notes.size();
    const size_t keep = std::min<size_t>(total, static_cast<size_t>(cfg.max_seq_len));
    const size_t start = total - keep;  // most recent notes win

    auto multi_hot = [&](const std::vector<int>& ids) {
        VectorXd y = VectorXd::Zero(cfg.n_labels);
        for (int id : ids)
            if (id >= 0 && id < cfg.n_labels) y(id) = 1.0;
        return y;
    };

    for (size_t k = start; k < total; ++k) {
        sample.steps.push_back(merged.notes[k].bag);
        sample.step_labels.push_back(multi_hot(merged.notes[k].day_ccs));
    }
    sample.final_labels = multi_hot(merged.ccs_labels);
    return sample;
}

VectorXd pooled_embed(const corpus::BagOfWords& x, const MatrixXd& embedding,
                      std::vector<uint32_t>* argmax_words) {
    if (x.empty()) throw ConfigError("pooled_embed: empty bag");
    const auto d = embedding.cols();
    VectorXd out(d);
    if (argmax_words) argmax_words->assign(static_cast<size_t>(d), 0);

    bool first = true;
    for (const auto& [id, count] : x.items) {
        (void)count;  // presence only: counts cannot change a max
        if (static_cast<Eigen::Index>(id) >= embedding.rows())
            throw ConfigError("pooled_embed: word id outside embedding matrix");
        const auto row = embedding.row(static_cast<Eigen::Index>(id));
        if (first) {
            out = row.transpose();
            if (argmax_words)
                std::fill(argmax_words->begin(), argmax_words->end(), id);
            first = false;
            continue;
        }
        for (Eigen::Index e = 0; e < d; ++e) {
            // strict > keeps the lowest word id on ties (ids ascend in a bag)
            if (row(e) > out(e)) {
                out(e) = row(e);
                if (argmax_words) (*argmax_words)[static_cast<size_t>(e)] = id;
            }
        }
    }
    return out;
}

double multitask_loss(const VectorXd& prediction, const VectorXd& labels) {
    if (prediction.size() != labels.size()) throw ConfigError("multitask_loss: shape mismatch");
    constexpr double eps = 1e-7;
    double total = 0.0;
    for (Eigen::Index k = 0; k < prediction.size(); ++k) {
        const double p = std::clamp(prediction(k), eps, 1.0 - eps);
        const double y = labels(k);
        total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    return total / static_cast<double>(prediction.size());
}

namespace {

VectorXd sigmoid_vec(const VectorXd& x) {
    return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

VectorXd draw_mask(Rng& rng, Eigen::Index n, double keep) {
    VectorXd mask(n);
    for (Eigen::Index i = 0; i < n; ++i) mask(i) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return mask;
}

}  // namespace

Forward rnn_forward(const SequenceSample& sample, const SequenceModelParams& params, Mode mode,
                    Rng* rng) {
    const SequenceModelConfig& cfg = params.config;
    const ModelTensors& t = params.t;
    const int T = static_cast<int>(sample.steps.size());
    if (T == 0) throw ConfigError("rnn_forward: empty sequence");
    const int h_dim = cfg.hidden_dim;
    const bool per_step = cfg.supervision == Supervision::PerStep;
    const bool use_dropout = mode == Mode::Train && cfg.dropout_p > 0.0;
    if (use_dropout && rng == nullptr)
        throw ConfigError("rnn_forward: train-mode dropout requires an rng");
    const double keep = 1.0 - cfg.dropout_p;

    Forward f;
    VectorXd h_prev = VectorXd::Zero(h_dim);
    VectorXd c_prev = VectorXd::Zero(h_dim);
    std::vector<VectorXd> h_masks;  // per step in per-step mode, one mask otherwise

    for (int step = 0; step < T; ++step) {
        std::vector<uint32_t> am;
        VectorXd phi = pooled_embed(sample.steps[step], t.embedding, &am);
        f.argmax.push_back(std::move(am));
        if (use_dropout) {
            VectorXd mask = draw_mask(*rng, phi.size(), keep);
            phi = phi.cwiseProduct(mask);
            f.dropout_phi.push_back(std::move(mask));
        }
        f.phi.push_back(phi);

        VectorXd h;
        switch (cfg.cell) {
            case Cell::Gru: {
                VectorXd z = sigmoid_vec(t.w_z * phi + t.u_z * h_prev + t.b_z.col(0));
                VectorXd r = sigmoid_vec(t.w_r * phi + t.u_r * h_prev + t.b_r.col(0));
                VectorXd hc = (t.w_h * phi + t.u_h * r.cwiseProduct(h_prev) + t.b_h.col(0))
                                  .array()
                                  .tanh()
                                  .matrix();
                h = (VectorXd::Ones(h_dim) - z).cwiseProduct(h_prev) + z.cwiseProduct(hc);
                f.gate_z.push_back(std::move(z));
                f.gate_r.push_back(std::move(r));
                f.cand_h.push_back(std::move(hc));
                break;
            }
            case Cell::Lstm: {
                VectorXd gi = sigmoid_vec(t.w_i * phi + t.u_i * h_prev + t.b_i.col(0));
                VectorXd gf = sigmoid_vec(t.w_f * phi + t.u_f * h_prev + t.b_f.col(0));
                VectorXd go = sigmoid_vec(t.w_o * phi + t.u_o * h_prev + t.b_o.col(0));
                VectorXd gg = (t.w_g * phi + t.u_g * h_prev + t.b_g.col(0)).array().tanh().matrix();
                VectorXd c = gf.cwiseProduct(c_prev) + gi.cwiseProduct(gg);
                h = go.cwiseProduct(c.array().tanh().matrix());
                f.gate_i.push_back(std::move(gi));
                f.gate_f.push_back(std::move(gf));
                f.gate_o.push_back(std::move(go));
                f.gate_g.push_back(std::move(gg));
                f.cell_c.push_back(c);
                c_prev = std::move(c);
                break;
            }
            case Cell::Flat: h = phi; break;
        }
        if (!h.allFinite())
            throw NumericError("rnn_forward: non-finite activation at step " +
                               std::to_string(step));
        f.hidden.push_back(h);
        h_prev = std::move(h);

        if (per_step) {
            VectorXd hd = f.hidden.back();
            if (use_dropout) {
                VectorXd mask = draw_mask(*rng, hd.size(), keep);
                hd = hd.cwiseProduct(mask);
                h_masks.push_back(std::move(mask));
            }
            f.predictions.push_back(
                sigmoid_vec(t.w_head.transpose() * hd + t.b_head.col(0)));
        }
    }

    if (!per_step) {
        VectorXd hd = f.hidden.back();
        if (use_dropout) {
            VectorXd mask = draw_mask(*rng, hd.size(), keep);
            hd = hd.cwiseProduct(mask);
            h_masks.push_back(std::move(mask));
        }
        f.predictions.push_back(sigmoid_vec(t.w_head.transpose() * hd + t.b_head.col(0)));
        f.loss = multitask_loss(f.predictions[0], sample.final_labels);
    } else {
        double total = 0.0;
        for (int step = 0; step < T; ++step)
            total += multitask_loss(f.predictions[step], sample.step_labels[step]);
        f.loss = total / T;
    }
    if (!h_masks.empty()) {
        f.dropout_hidden = h_masks.back();
        if (per_step) {
            // keep all per-step masks; reuse the phi cache layout
            f.dropout_phi.insert(f.dropout_phi.end(), h_masks.begin(), h_masks.end());
        }
    }
    return f;
}

namespace {

// Backward pass for one sample; accumulates into grads.
void backward_sample(const SequenceSample& sample, const SequenceModelParams& params,
                     const Forward& f, double scale, ModelTensors& grads) {
    const SequenceModelConfig& cfg = params.config;
    const ModelTensors& t = params.t;
    const int T = static_cast<int>(sample.steps.size());
    const int h_dim = cfg.hidden_dim;
    const int L = cfg.n_labels;
    const bool per_step = cfg.supervision == Supervision::PerStep;
    const bool dropped = !f.dropout_phi.empty();

    // per-step h masks live after the T phi masks in dropout_phi
    auto phi_mask = [&](int step) -> const VectorXd& { return f.dropout_phi[step]; };
    auto h_mask = [&](int step) -> const VectorXd& {
        return per_step ? f.dropout_phi[static_cast<size_t>(T) + step] : f.dropout_hidden;
    };

    auto h_at = [&](int step) -> VectorXd {
        return step < 0 ? VectorXd::Zero(h_dim) : f.hidden[step];
    };

    VectorXd dh_carry = VectorXd::Zero(h_dim);
    VectorXd dc_carry = VectorXd::Zero(h_dim);

    // Head gradient at the final step (FinalStep supervision).
    if (!per_step) {
        VectorXd da = (f.predictions[0] - sample.final_labels) * (scale / L);
        VectorXd hd = f.hidden[T - 1];
        if (dropped) hd = hd.cwiseProduct(f.dropout_hidden);
        grads.w_head += hd * da.transpose();
        grads.b_head.col(0) += da;
        VectorXd dh = t.w_head * da;
        if (dropped) dh = dh.cwiseProduct(f.dropout_hidden);
        dh_carry = dh;
    }

    for (int step = T - 1; step >= 0; --step) {
        VectorXd dh = dh_carry;
        if (per_step) {
            VectorXd da =
                (f.predictions[step] - sample.step_labels[step]) * (scale / (L * T));
            VectorXd hd = f.hidden[step];
            if (dropped) hd = hd.cwiseProduct(h_mask(step));
            grads.w_head += hd * da.transpose();
            grads.b_head.col(0) += da;
            VectorXd dstep = t.w_head * da;
            if (dropped) dstep = dstep.cwiseProduct(h_mask(step));
            dh += dstep;
        }

        const VectorXd& phi = f.phi[step];
        const VectorXd h_prev = h_at(step - 1);
        VectorXd dphi;
        VectorXd dh_prev = VectorXd::Zero(h_dim);

        switch (cfg.cell) {
            case Cell::Gru: {
                const VectorXd& z = f.gate_z[step];
                const VectorXd& r = f.gate_r[step];
                const VectorXd& hc = f.cand_h[step];

                VectorXd dz = dh.cwiseProduct(hc - h_prev);
                VectorXd dhc = dh.cwiseProduct(z);
                dh_prev = dh.cwiseProduct(VectorXd::Ones(h_dim) - z);

                VectorXd da_h = dhc.cwiseProduct(
                    (VectorXd::Ones(h_dim) - hc.cwiseProduct(hc)));
                grads.w_h += da_h * phi.transpose();
                grads.u_h += da_h * r.cwiseProduct(h_prev).transpose();
                grads.b_h.col(0) += da_h;
                VectorXd tmp = t.u_h.transpose() * da_h;
                VectorXd dr = tmp.cwiseProduct(h_prev);
                dh_prev += tmp.cwiseProduct(r);

                VectorXd da_z =
                    dz.cwiseProduct(z).cwiseProduct(VectorXd::Ones(h_dim) - z);
                grads.w_z += da_z * phi.transpose();
                grads.u_z += da_z * h_prev.transpose();
                grads.b_z.col(0) += da_z;
                dh_prev += t.u_z.transpose() * da_z;

                VectorXd da_r =
                    dr.cwiseProduct(r).cwiseProduct(VectorXd::Ones(h_dim) - r);
                grads.w_r += da_r * phi.transpose();
                grads.u_r += da_r * h_prev.transpose();
                grads.b_r.col(0) += da_r;
                dh_prev += t.u_r.transpose() * da_r;

                dphi = t.w_z.transpose() * da_z + t.w_r.transpose() * da_r +
                       t.w_h.transpose() * da_h;
                break;
            }
            case Cell::Lstm: {
                const VectorXd& gi = f.gate_i[step];
                const VectorXd& gf = f.gate_f[step];
                const VectorXd& go = f.gate_o[step];
                const VectorXd& gg = f.gate_g[step];
                const VectorXd& c = f.cell_c[step];
                const VectorXd c_prev =
                    step == 0 ? VectorXd::Zero(h_dim) : f.cell_c[step - 1];
                VectorXd tanh_c = c.array().tanh().matrix();

                VectorXd dc = dc_carry +
                              dh.cwiseProduct(go).cwiseProduct(
                                  VectorXd::Ones(h_dim) - tanh_c.cwiseProduct(tanh_c));
                VectorXd do_ = dh.cwiseProduct(tanh_c);
                VectorXd di = dc.cwiseProduct(gg);
                VectorXd dg = dc.cwiseProduct(gi);
                VectorXd df = dc.cwiseProduct(c_prev);
                dc_carry = dc.cwiseProduct(gf);

                VectorXd da_i = di.cwiseProduct(gi).cwiseProduct(VectorXd::Ones(h_dim) - gi);
                VectorXd da_f = df.cwiseProduct(gf).cwiseProduct(VectorXd::Ones(h_dim) - gf);
                VectorXd da_o = do_.cwiseProduct(go).cwiseProduct(VectorXd::Ones(h_dim) - go);
                VectorXd da_g = dg.cwiseProduct(VectorXd::Ones(h_dim) - gg.cwiseProduct(gg));

                grads.w_i += da_i * phi.transpose();
                grads.u_i += da_i * h_prev.transpose();
                grads.b_i.col(0) += da_i;
                grads.w_f += da_f * phi.transpose();
                grads.u_f += da_f * h_prev.transpose();
                grads.b_f.col(0) += da_f;
                grads.w_o += da_o * phi.transpose();
                grads.u_o += da_o * h_prev.transpose();
                grads.b_o.col(0) += da_o;
                grads.w_g += da_g * phi.transpose();
                grads.u_g += da_g * h_prev.transpose();
                grads.b_g.col(0) += da_g;

                dh_prev = t.u_i.transpose() * da_i + t.u_f.transpose() * da_f +
                          t.u_o.transpose() * da_o + t.u_g.transpose() * da_g;
                dphi = t.w_i.transpose() * da_i + t.w_f.transpose() * da_f +
                       t.w_o.transpose() * da_o + t.w_g.transpose() * da_g;
                break;
            }
            case Cell::Flat: {
                dphi = dh;
                break;
            }
        }

        if (dropped) dphi = dphi.cwiseProduct(phi_mask(step));
        const auto& am = f.argmax[step];
        for (Eigen::Index e = 0; e < dphi.size(); ++e)
            grads.embedding(am[static_cast<size_t>(e)], e) += dphi(e);

        dh_carry = dh_prev;
    }
}

}  // namespace

BatchGradients rnn_gradients(const std::vector<SequenceSample>& batch,
                             const SequenceModelParams& params, Rng* dropout_rng) {
    if (batch.empty()) throw ConfigError("rnn_gradients: empty batch");
    BatchGradients out;
    out.grads = ModelTensors::shaped(params.config);
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& sample : batch) {
        Forward f = rnn_forward(sample, params, Mode::Train, dropout_rng);
        out.loss += scale * f.loss;
        backward_sample(sample, params, f, scale, out.grads);
    }
    return out;
}

namespace {

void init_params(SequenceModelParams& params, const embed::EmbeddingMatrix* pretrained) {
    const SequenceModelConfig& cfg = params.config;
    Rng rng(derive_seed(cfg.seed, "seqmodel-init"));
    auto uniform_in = [&](MatrixXd& m, double limit) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                m(r, c) = (rng.uniform() * 2.0 - 1.0) * limit;
    };

    params.t.for_each([&](const char* name, MatrixXd& m) {
        const std::string n = name;
        if (n == "embedding") {
            uniform_in(m, 0.05);
        } else if (n[0] == 'b') {
            m.setZero();
        } else {
            const double fan_in = static_cast<double>(m.cols());
            const double fan_out = static_cast<double>(m.rows());
            uniform_in(m, std::sqrt(6.0 / (fan_in + fan_out)));
        }
    });

    if (cfg.init == Init::Pretrained) {
        if (pretrained == nullptr)
            throw ConfigError("init=pretrained requires an embedding source");
        if (pretrained->dim != cfg.embed_dim)
            throw ConfigError("pretrained embedding dim mismatch");
        const auto rows = std::min<Eigen::Index>(params.t.embedding.rows(),
                                                 pretrained->vectors.rows());
        for (Eigen::Index id = 0; id < rows; ++id)
            if (pretrained->is_covered(static_cast<uint32_t>(id)))
                params.t.embedding.row(id) = pretrained->vectors.row(id);
    }
}

double evaluate_loss(const std::vector<SequenceSample>& samples,
                     const SequenceModelParams& params) {
    if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    for (const auto& s : samples) total += rnn_forward(s, params, Mode::Infer).loss;
    return total / static_cast<double>(samples.size());
}

TrainResult train_core(const std::vector<SequenceSample>& train,
                       const std::vector<SequenceSample>& val,
                       const SequenceModelConfig& cfg,
                       const embed::EmbeddingMatrix* pretrained) {
    cfg.validate();
    if (train.empty()) throw ConfigError("training set is empty");

    const auto t_start = std::chrono::steady_clock::now();
    TrainResult result;
    result.params.config = cfg;
    result.params.t = ModelTensors::shaped(cfg);
    init_params(result.params, pretrained);

    ModelTensors accum = ModelTensors::shaped(cfg);
    Rng rng(derive_seed(cfg.seed, "seqmodel-train"));

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    double initial_loss = -1.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t seen = 0;
        for (size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
            std::vector<SequenceSample> batch;
            for (size_t k = pos; k < std::min(order.size(), pos + cfg.batch_size); ++k)
                batch.push_back(train[order[k]]);
            BatchGradients bg =
                rnn_gradients(batch, result.params, cfg.dropout_p > 0.0 ? &rng : nullptr);
            epoch_loss += bg.loss * static_cast<double>(batch.size());
            seen += batch.size();

            // RMSProp
            std::vector<MatrixXd*> ps, gs, as;
            result.params.t.for_each([&](const char*, MatrixXd& m) { ps.push_back(&m); });
            bg.grads.for_each([&](const char*, MatrixXd& m) { gs.push_back(&m); });
            accum.for_each([&](const char*, MatrixXd& m) { as.push_back(&m); });
            for (size_t i = 0; i < ps.size(); ++i) {
                as[i]->array() = cfg.rmsprop_decay * as[i]->array() +
                                 (1.0 - cfg.rmsprop_decay) * gs[i]->array().square();
                ps[i]->array() -=
                    cfg.learning_rate * gs[i]->array() / (as[i]->array() + 1e-8).sqrt();
            }
        }
        epoch_loss /= static_cast<double>(seen);
        result.trace.train_loss.push_back(epoch_loss);
        result.trace.val_loss.push_back(evaluate_loss(val, result.params));
        if (initial_loss < 0.0) initial_loss = epoch_loss;
        if (!std::isfinite(epoch_loss) || epoch_loss > 1e3 * initial_loss)
            throw NumericError("sequence model diverged at epoch " + std::to_string(epoch));
    }

    result.trace.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

}  // namespace

TrainResult train_sequence_model(const std::vector<corpus::EraView>& train_eras,
                                 const std::vector<corpus::EraView>& val_eras,
                                 const SequenceModelConfig& config,
                                 const embed::EmbeddingMatrix* pretrained) {
    std::vector<SequenceSample> train, val;
    train.reserve(train_eras.size());
    for (const auto& era : train_eras) train.push_back(make_sequence(era, config));
    for (const auto& era : val_eras) val.push_back(make_sequence(era, config));
    return train_core(train, val, config, pretrained);
}

std::optional<embed::PatientRepresentation> extract_patient_state(
    const corpus::EraView& era, const SequenceModelParams& params) {
    SequenceSample sample = make_sequence(era, params.config);
    if (sample.steps.empty()) return std::nullopt;
    Forward f = rnn_forward(sample, params, Mode::Infer);
    embed::PatientRepresentation rep;
    const VectorXd& h = f.hidden.back();
    rep.values.assign(h.data(), h.data() + h.size());
    rep.method = std::string(params.config.cell == Cell::Flat ? "flat-" : "rnn-") +
                 std::to_string(params.config.hidden_dim);
    return rep;
}

embed::EmbeddingMatrix embedding_matrix(const SequenceModelParams& params) {
    embed::EmbeddingMatrix emb;
    emb.dim = params.config.embed_dim;
    emb.vectors = params.t.embedding;
    emb.covered.assign(static_cast<size_t>(params.t.embedding.rows()), 1);
    emb.source = params.config.cell == Cell::Flat ? "flat" : "rnn";
    return emb;
}

FlatTrainResult train_flat_model(const std::vector<FlatNote>& notes,
                                 const SequenceModelConfig& config) {
    SequenceModelConfig cfg = config;
    cfg.cell = Cell::Flat;
    cfg.hidden_dim = cfg.embed_dim;
    cfg.max_seq_len = 1;
    cfg.supervision = Supervision::FinalStep;

    std::vector<SequenceSample> samples;
    samples.reserve(notes.size());
    for (size_t i = 0; i < notes.size(); ++i) {
        if (notes[i].bag.empty()) continue;
        SequenceSample s;
        s.patient_id = static_cast<int64_t>(i);
        s.steps.push_back(notes[i].bag);
        s.step_labels.push_back(notes[i].labels);
        s.final_labels = notes[i].labels;
        samples.push_back(std::move(s));
    }

    TrainResult core = train_core(samples, {}, cfg, nullptr);
    FlatTrainResult out;
    out.params = std::move(core.params);
    out.trace = std::move(core.trace);
    out.embeddings = embedding_matrix(out.params);
    return out;
}

namespace {

json config_to_json(const SequenceModelConfig& c) {
    return json{{"cell", cell_name(c.cell)},
                {"vocab_size", c.vocab_size},
                {"embed_dim", c.embed_dim},
                {"hidden_dim", c.hidden_dim},
                {"n_labels", c.n_labels},
                {"dropout_p", c.dropout_p},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"max_seq_len", c.max_seq_len},
                {"learning_rate", c.learning_rate},
                {"rmsprop_decay", c.rmsprop_decay},
                {"supervision", c.supervision == Supervision::PerStep ? "per_step" : "final_step"},
                {"init", c.init == Init::Pretrained ? "pretrained" : "random"},
                {"input_encoding", c.input_encoding == InputEncoding::Counts ? "counts" : "binary"},
                {"seed", c.seed}};
}

SequenceModelConfig config_from_json(const json& j) {
    SequenceModelConfig c;
    c.cell = cell_from_name(j.at("cell").get<std::string>());
    c.vocab_size = j.at("vocab_size").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.n_labels = j.at("n_labels").get<int>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.rmsprop_decay = j.at("rmsprop_decay").get<double>();
    c.supervision = j.at("supervision").get<std::string>() == "per_step" ? Supervision::PerStep
                                                                         : Supervision::FinalStep;
    c.init = j.at("init").get<std::string>() == "pretrained" ? Init::Pretrained : Init::Random;
    c.input_encoding = j.at("input_encoding").get<std::string>() == "counts"
                           ? InputEncoding::Counts
                           : InputEncoding::Binary;
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

constexpr const char* kCheckpointMagic = "EHRSEQM1";

}  // namespace

void save_checkpoint(const SequenceModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);

    json manifest = json::array();
    params.t.for_each([&](const char* name, const MatrixXd& m) {
        manifest.push_back({name, m.rows(), m.cols()});
    });
    json header{{"config", config_to_json(params.config)}, {"tensors", manifest}};
    out << kCheckpointMagic << "\n" << header.dump() << "\n";

    params.t.for_each([&](const char*, const MatrixXd& m) {
        // row-major little-endian doubles
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                const double v = m(r, c);
                out.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
    });
    if (!out) throw IoError("write failed: " + path);
}

SequenceModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string magic, header_line;
    if (!std::getline(in, magic) || magic != kCheckpointMagic)
        throw IoError("not a model checkpoint: " + path);
    if (!std::getline(in, header_line)) throw IoError("truncated checkpoint: " + path);
    json header = json::parse(header_line);

    SequenceModelParams params;
    params.config = config_from_json(header.at("config"));
    params.t = ModelTensors::shaped(params.config);

    std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> manifest;
    for (const auto& m : header.at("tensors"))
        manifest.push_back({m[0].get<std::string>(),
                            {m[1].get<Eigen::Index>(), m[2].get<Eigen::Index>()}});

    size_t idx = 0;
    bool shape_error = false;
    params.t.for_each([&](const char* name, MatrixXd& m) {
        if (idx >= manifest.size() || manifest[idx].first != name ||
            manifest[idx].second != std::make_pair(m.rows(), m.cols())) {
            shape_error = true;
            return;
        }
        ++idx;
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                double v;
                in.read(reinterpret_cast<char*>(&v), sizeof(v));
                m(r, c) = v;
            }
    });
    if (shape_error || idx != manifest.size() || !in)
        throw IoError("checkpoint manifest mismatch: " + path);
    return params;
}

}  // namespace ehr::seqmodel
