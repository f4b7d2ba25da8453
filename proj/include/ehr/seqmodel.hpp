#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ehr/corpus.hpp"
#include "ehr/embed.hpp"

namespace ehr::seqmodel {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Cell { Gru, Lstm, Flat };
enum class Supervision { FinalStep, PerStep };
enum class Init { Random, Pretrained };
enum class InputEncoding { Binary, Counts };

Cell cell_from_name(const std::string& name);
const char* cell_name(Cell c);

struct SequenceModelConfig {
    Cell cell = Cell::Gru;
    int vocab_size = 0;
    int embed_dim = 64;
    int hidden_dim = 64;
    int n_labels = 24;
    double dropout_p = 0.2;
    int epochs = 100;
    int batch_size = 32;
    int max_seq_len = 50;
    double learning_rate = 1e-3;
    double rmsprop_decay = 0.9;
    Supervision supervision = Supervision::FinalStep;
    Init init = Init::Random;
    // Counts do not change a max pool over present words; the field exists
    // so the choice is explicit in artifacts.
    InputEncoding input_encoding = InputEncoding::Binary;
    uint64_t seed = 1;

    void validate() const;
};

// One named-tensor bundle; the same shape serves parameters, gradients and
// optimizer accumulators. Biases are stored as n x 1 matrices so generic
// iteration stays uniform.
struct ModelTensors {
    MatrixXd embedding;  // V x Dx
    // GRU
    MatrixXd w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h;
    // LSTM (i=input, f=forget, o=output gate, g=candidate)
    MatrixXd w_i, u_i, b_i, w_f, u_f, b_f, w_o, u_o, b_o, w_g, u_g, b_g;
    // Output head
    MatrixXd w_head;  // H x n_labels
    MatrixXd b_head;  // n_labels x 1

    static ModelTensors shaped(const SequenceModelConfig& config);
    void set_zero();
    void for_each(const std::function<void(const char*, MatrixXd&)>& fn);
    void for_each(const std::function<void(const char*, const MatrixXd&)>& fn) const;
    size_t parameter_count() const;
};

struct SequenceModelParams {
    SequenceModelConfig config;
    ModelTensors t;
};

struct TrainTrace {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    double wall_time_sec = 0.0;
};

// Training/inference sample: merged-day bags truncated to the most recent
// max_seq_len steps, with multi-hot label vectors.
struct SequenceSample {
    int64_t patient_id = 0;
    std::vector<corpus::BagOfWords> steps;
    std::vector<VectorXd> step_labels;  // per-step CCS multi-hot (PerStep supervision)
    VectorXd final_labels;              // era-aggregated CCS multi-hot
};

SequenceSample make_sequence(const corpus::EraView& era, const SequenceModelConfig& config);

enum class Mode { Train, Infer };

// phi_L(x): element-wise max over the embedding rows of words present in x.
// argmax_words, when given, receives the winning word per dimension with
// ties resolved to the lowest word id.
VectorXd pooled_embed(const corpus::BagOfWords& x, const MatrixXd& embedding,
                      std::vector<uint32_t>* argmax_words = nullptr);

struct Forward {
    std::vector<VectorXd> hidden;       // h_1..h_T
    std::vector<VectorXd> predictions;  // final: size 1; per-step: size T
    double loss = 0.0;
    // caches for backprop follow; contents depend on the cell
    std::vector<VectorXd> phi;          // post-dropout pooled inputs
    std::vector<std::vector<uint32_t>> argmax;
    std::vector<VectorXd> gate_z, gate_r, cand_h;             // GRU
    std::vector<VectorXd> gate_i, gate_f, gate_o, gate_g, cell_c;  // LSTM
    std::vector<VectorXd> dropout_phi;  // masks (already scaled), empty in infer mode
    VectorXd dropout_hidden;
};

// Sequence forward pass. rng drives dropout and must be non-null in Train
// mode when dropout_p > 0.
Forward rnn_forward(const SequenceSample& sample, const SequenceModelParams& params, Mode mode,
                    Rng* rng = nullptr);

// Mean over tasks of the clamped binary cross-entropy.
double multitask_loss(const VectorXd& prediction, const VectorXd& labels);

// Exact gradients of the mean multitask loss over the batch, including the
// routing through the max pool. Dropout masks are redrawn from rng when
// given; pass nullptr for a deterministic dropout-free evaluation.
struct BatchGradients {
    ModelTensors grads;
    double loss = 0.0;
};
BatchGradients rnn_gradients(const std::vector<SequenceSample>& batch,
                             const SequenceModelParams& params, Rng* dropout_rng = nullptr);

struct TrainResult {
    SequenceModelParams params;
    TrainTrace trace;
};

// RMSProp over shuffled mini-batches. pretrained is consulted only when
// config.init == Pretrained.
TrainResult train_sequence_model(const std::vector<corpus::EraView>& train_eras,
                                 const std::vector<corpus::EraView>& val_eras,
                                 const SequenceModelConfig& config,
                                 const embed::EmbeddingMatrix* pretrained = nullptr);

// Inference-mode h_T with method descriptor `rnn-<H>`.
std::optional<embed::PatientRepresentation> extract_patient_state(
    const corpus::EraView& era, const SequenceModelParams& params);

// The embedding layer as a word embedding source (tag rnn or flat).
embed::EmbeddingMatrix embedding_matrix(const SequenceModelParams& params);

// Flat cross-channel model: sigma(W_head^T max-pooled-embedding + b) trained
// on per-note CCS targets. Internally this is the sequence trainer with
// Cell::Flat and T=1.
struct FlatNote {
    corpus::BagOfWords bag;
    VectorXd labels;
};
struct FlatTrainResult {
    SequenceModelParams params;
    TrainTrace trace;
    embed::EmbeddingMatrix embeddings;
};
FlatTrainResult train_flat_model(const std::vector<FlatNote>& notes,
                                 const SequenceModelConfig& config);

// Checkpoint: one magic line, one JSON line (config echo + tensor manifest),
// then raw little-endian 64-bit floats in manifest order, row-major.
void save_checkpoint(const SequenceModelParams& params, const std::string& path);
SequenceModelParams load_checkpoint(const std::string& path);

}  // namespace ehr::seqmodel
