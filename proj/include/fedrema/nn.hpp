#pragma once

// Dense-network machinery for the simulator. A model is split into a feature
// extractor (every layer but the head) and a linear classifier whose rows are
// per-class proxies. All arithmetic is double precision and deterministic.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedrema::nn {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

enum class Activation { relu, identity };

// weight is out x in; output = activation(weight * x + bias).
struct DenseLayer {
    Matrix weight;
    std::vector<double> bias;
    Activation activation = Activation::identity;

    std::size_t input_dim() const noexcept { return weight.cols(); }
    std::size_t output_dim() const noexcept { return weight.rows(); }

    bool operator==(const DenseLayer&) const = default;
};

struct FeatureExtractor {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const;
    std::size_t output_dim() const;

    bool operator==(const FeatureExtractor&) const = default;
};

// weight is C x H; row c is the proxy for class c.
struct Classifier {
    Matrix weight;
    std::vector<double> bias;

    std::size_t num_classes() const noexcept { return weight.rows(); }
    std::size_t feature_dim() const noexcept { return weight.cols(); }

    bool operator==(const Classifier&) const = default;
};

struct ModelParams {
    FeatureExtractor extractor;
    Classifier classifier;

    bool operator==(const ModelParams&) const = default;
};

// Gradients share the parameter layout.
using Gradient = ModelParams;

struct LabeledBatch {
    Matrix inputs;  // batch x input_dim
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }

    bool operator==(const LabeledBatch&) const = default;
};

struct ModelShape {
    std::size_t input_dim = 64;
    std::vector<std::size_t> hidden_dims{64};  // ReLU layers
    std::size_t feature_dim = 32;              // feature layer output, H
    std::size_t num_classes = 10;              // C
    Activation feature_activation = Activation::relu;
    // A zero classifier start leaves probe responses free of a shared random
    // class preference, so early similarities reflect local data only.
    bool zero_classifier = true;
};

// Every parameter array of a model part, in a fixed canonical order. Used by
// aggregation and by the SGD update so both walk parameters identically.
std::vector<std::span<double>> tensors(FeatureExtractor& extractor);
std::vector<std::span<const double>> tensors(const FeatureExtractor& extractor);
std::vector<std::span<double>> tensors(Classifier& classifier);
std::vector<std::span<const double>> tensors(const Classifier& classifier);

// Throws StructuralError if consecutive layers or extractor/classifier disagree.
void validate(const ModelParams& params);

// Glorot-uniform weights (classifier zero when shape.zero_classifier), zero
// biases. Same seed, same model.
ModelParams init_model(const ModelShape& shape, std::uint64_t seed);

struct ForwardResult {
    Matrix features;  // batch x H
    Matrix logits;    // batch x C, pre-softmax
};

ForwardResult forward(const ModelParams& params, const Matrix& inputs);

// Classifier head alone: logits = W * h + b.
std::vector<double> classifier_logits(const Classifier& classifier, std::span<const double> features);

// softmax(logits / temperature), with max subtraction.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

// Mean cross-entropy over the batch.
double cross_entropy(const ModelParams& params, const LabeledBatch& batch);

Gradient cross_entropy_grad(const ModelParams& params, const LabeledBatch& batch);

ModelParams sgd_step(const ModelParams& params, const LabeledBatch& batch, double lr);

struct TrainOptions {
    std::size_t epochs = 5;
    std::size_t batch_size = 100;
    double lr = 0.01;
    std::uint64_t seed = 0;
};

// Shuffled mini-batch SGD over the dataset for opts.epochs epochs.
ModelParams local_train(ModelParams params, const LabeledBatch& dataset, const TrainOptions& opts);

// Argmax of each logits row; ties go to the smallest class index.
std::vector<int> predict(const ModelParams& params, const Matrix& inputs);

// The selected rows of a batch, in the given order.
LabeledBatch gather(const LabeledBatch& batch, std::span<const std::size_t> indices);

bool all_finite(const ModelParams& params);

}  // namespace fedrema::nn
