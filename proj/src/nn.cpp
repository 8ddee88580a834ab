#include "fedrema/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "fedrema/errors.hpp"
#include "fedrema/rng.hpp"

namespace fedrema::nn {

namespace {

// Four independent partial sums break the add dependency chain; the
// combination order is fixed, so results are reproducible.
double dot(std::span<const double> a, std::span<const double> b) {
    const std::size_t n = a.size();
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y) {
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void affine(const Matrix& weight, std::span<const double> bias, const Matrix& in, Matrix& out) {
    for (std::size_t r = 0; r < in.rows(); ++r) {
        auto x = in.row(r);
        auto y = out.row(r);
        for (std::size_t o = 0; o < weight.rows(); ++o) y[o] = bias[o] + dot(weight.row(o), x);
    }
}

// Layer outputs for every extractor layer, plus the logits.
struct Trace {
    std::vector<Matrix> activations;
    Matrix logits;
};

Trace run_forward(const ModelParams& params, const Matrix& inputs) {
    validate(params);
    if (inputs.cols() != params.extractor.input_dim()) {
        throw StructuralError("forward: input has " + std::to_string(inputs.cols()) +
                              " columns, layer 0 expects " +
                              std::to_string(params.extractor.input_dim()));
    }
    Trace t;
    t.activations.reserve(params.extractor.layers.size());
    const Matrix* in = &inputs;
    for (const auto& layer : params.extractor.layers) {
        Matrix out(in->rows(), layer.output_dim());
        affine(layer.weight, layer.bias, *in, out);
        if (layer.activation == Activation::relu) {
            for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
        }
        t.activations.push_back(std::move(out));
        in = &t.activations.back();
    }
    const auto& cls = params.classifier;
    t.logits = Matrix(in->rows(), cls.num_classes());
    affine(cls.weight, cls.bias, *in, t.logits);
    return t;
}

Gradient zeros_like(const ModelParams& params) {
    Gradient g = params;
    for (auto s : tensors(g.extractor)) std::fill(s.begin(), s.end(), 0.0);
    for (auto s : tensors(g.classifier)) std::fill(s.begin(), s.end(), 0.0);
    return g;
}

void check_labels(const LabeledBatch& batch, std::size_t num_classes) {
    if (batch.inputs.rows() != batch.labels.size()) {
        throw StructuralError("batch has " + std::to_string(batch.inputs.rows()) + " inputs but " +
                              std::to_string(batch.labels.size()) + " labels");
    }
    for (int y : batch.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw StructuralError("label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
        }
    }
}

void grad_into(const ModelParams& params, const LabeledBatch& batch, Gradient& g) {
    check_labels(batch, params.classifier.num_classes());
    Trace t = run_forward(params, batch.inputs);
    const std::size_t n = batch.size();
    const std::size_t classes = params.classifier.num_classes();
    const double inv_n = 1.0 / static_cast<double>(n);

    // dL/dlogits = (softmax - onehot) / n
    Matrix delta(n, classes);
    for (std::size_t r = 0; r < n; ++r) {
        auto z = softmax(t.logits.row(r), 1.0);
        auto d = delta.row(r);
        for (std::size_t c = 0; c < classes; ++c) d[c] = z[c] * inv_n;
        d[static_cast<std::size_t>(batch.labels[r])] -= inv_n;
    }

    const auto& layers = params.extractor.layers;
    const Matrix& features = t.activations.back();
    for (std::size_t r = 0; r < n; ++r) {
        auto h = features.row(r);
        for (std::size_t c = 0; c < classes; ++c) {
            const double d = delta(r, c);
            axpy(d, h, g.classifier.weight.row(c));
            g.classifier.bias[c] += d;
        }
    }

    Matrix upstream(n, params.classifier.feature_dim());
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < classes; ++c) {
            axpy(delta(r, c), params.classifier.weight.row(c), upstream.row(r));
        }
    }

    for (std::size_t li = layers.size(); li-- > 0;) {
        const auto& layer = layers[li];
        auto& gl = g.extractor.layers[li];
        const Matrix& out = t.activations[li];
        const Matrix& in = li == 0 ? batch.inputs : t.activations[li - 1];
        if (layer.activation == Activation::relu) {
            auto u = upstream.data();
            auto o = out.data();
            for (std::size_t i = 0; i < u.size(); ++i) {
                if (!(o[i] > 0.0)) u[i] = 0.0;
            }
        }
        for (std::size_t r = 0; r < n; ++r) {
            auto x = in.row(r);
            auto u = upstream.row(r);
            for (std::size_t o = 0; o < layer.output_dim(); ++o) {
                if (u[o] == 0.0) continue;
                axpy(u[o], x, gl.weight.row(o));
                gl.bias[o] += u[o];
            }
        }
        if (li == 0) break;
        Matrix next(n, layer.input_dim());
        for (std::size_t r = 0; r < n; ++r) {
            auto u = upstream.row(r);
            for (std::size_t o = 0; o < layer.output_dim(); ++o) {
                if (u[o] == 0.0) continue;
                axpy(u[o], layer.weight.row(o), next.row(r));
            }
        }
        upstream = std::move(next);
    }
}

void apply_update(ModelParams& params, const Gradient& g, double lr) {
    auto p = tensors(params.extractor);
    auto q = tensors(g.extractor);
    for (std::size_t i = 0; i < p.size(); ++i) axpy(-lr, q[i], p[i]);
    auto pc = tensors(params.classifier);
    auto qc = tensors(g.classifier);
    for (std::size_t i = 0; i < pc.size(); ++i) axpy(-lr, qc[i], pc[i]);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw StructuralError("matrix data length " + std::to_string(data_.size()) +
                              " does not match " + std::to_string(rows_) + "x" +
                              std::to_string(cols_));
    }
}

std::size_t FeatureExtractor::input_dim() const {
    if (layers.empty()) throw StructuralError("feature extractor has no layers");
    return layers.front().input_dim();
}

std::size_t FeatureExtractor::output_dim() const {
    if (layers.empty()) throw StructuralError("feature extractor has no layers");
    return layers.back().output_dim();
}

std::vector<std::span<double>> tensors(FeatureExtractor& extractor) {
    std::vector<std::span<double>> out;
    for (auto& l : extractor.layers) {
        out.push_back(l.weight.data());
        out.push_back(l.bias);
    }
    return out;
}

std::vector<std::span<const double>> tensors(const FeatureExtractor& extractor) {
    std::vector<std::span<const double>> out;
    for (const auto& l : extractor.layers) {
        out.push_back(l.weight.data());
        out.push_back(l.bias);
    }
    return out;
}

std::vector<std::span<double>> tensors(Classifier& classifier) {
    return {classifier.weight.data(), classifier.bias};
}

std::vector<std::span<const double>> tensors(const Classifier& classifier) {
    return {classifier.weight.data(), classifier.bias};
}

void validate(const ModelParams& params) {
    const auto& layers = params.extractor.layers;
    if (layers.empty()) throw StructuralError("feature extractor has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].bias.size() != layers[i].output_dim()) {
            throw StructuralError("layer " + std::to_string(i) + ": bias length " +
                                  std::to_string(layers[i].bias.size()) + " != output dim " +
                                  std::to_string(layers[i].output_dim()));
        }
        if (i > 0 && layers[i].input_dim() != layers[i - 1].output_dim()) {
            throw StructuralError("layer " + std::to_string(i) + ": input dim " +
                                  std::to_string(layers[i].input_dim()) +
                                  " != previous output dim " +
                                  std::to_string(layers[i - 1].output_dim()));
        }
    }
    const auto& cls = params.classifier;
    if (cls.num_classes() < 2) throw StructuralError("classifier needs at least 2 classes");
    if (cls.bias.size() != cls.num_classes()) {
        throw StructuralError("classifier bias length does not match class count");
    }
    if (cls.feature_dim() != layers.back().output_dim()) {
        throw StructuralError("classifier input dim " + std::to_string(cls.feature_dim()) +
                              " != extractor output dim " +
                              std::to_string(layers.back().output_dim()));
    }
}

ModelParams init_model(const ModelShape& shape, std::uint64_t seed) {
    if (shape.input_dim == 0 || shape.feature_dim == 0) {
        throw ParameterError("model dimensions must be positive");
    }
    if (shape.num_classes < 2) throw ParameterError("model needs at least 2 classes");
    Rng rng(seed);
    auto make = [&rng](std::size_t in, std::size_t out) {
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-a, a);
        Matrix w(out, in);
        for (double& v : w.data()) v = u(rng);
        return w;
    };
    ModelParams p;
    std::size_t in = shape.input_dim;
    for (std::size_t h : shape.hidden_dims) {
        if (h == 0) throw ParameterError("hidden layer width must be positive");
        p.extractor.layers.push_back({make(in, h), std::vector<double>(h, 0.0), Activation::relu});
        in = h;
    }
    p.extractor.layers.push_back(
        {make(in, shape.feature_dim), std::vector<double>(shape.feature_dim, 0.0), shape.feature_activation});
    p.classifier.weight = make(shape.feature_dim, shape.num_classes);
    if (shape.zero_classifier) std::fill(p.classifier.weight.data().begin(), p.classifier.weight.data().end(), 0.0);
    p.classifier.bias.assign(shape.num_classes, 0.0);
    return p;
}

ForwardResult forward(const ModelParams& params, const Matrix& inputs) {
    Trace t = run_forward(params, inputs);
    return {std::move(t.activations.back()), std::move(t.logits)};
}

std::vector<double> classifier_logits(const Classifier& classifier, std::span<const double> features) {
    if (features.size() != classifier.feature_dim()) {
        throw StructuralError("classifier expects " + std::to_string(classifier.feature_dim()) +
                              " features, got " + std::to_string(features.size()));
    }
    std::vector<double> out(classifier.num_classes());
    for (std::size_t c = 0; c < out.size(); ++c) {
        out[c] = classifier.bias[c] + dot(classifier.weight.row(c), features);
    }
    return out;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) throw ParameterError("softmax temperature must be positive");
    if (logits.empty()) return {};
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - mx) / temperature);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

double cross_entropy(const ModelParams& params, const LabeledBatch& batch) {
    if (batch.empty()) throw ParameterError("cross_entropy: empty batch");
    check_labels(batch, params.classifier.num_classes());
    Trace t = run_forward(params, batch.inputs);
    double total = 0.0;
    for (std::size_t r = 0; r < batch.size(); ++r) {
        auto z = t.logits.row(r);
        const double mx = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double v : z) s += std::exp(v - mx);
        total += (mx + std::log(s)) - z[static_cast<std::size_t>(batch.labels[r])];
    }
    return total / static_cast<double>(batch.size());
}

Gradient cross_entropy_grad(const ModelParams& params, const LabeledBatch& batch) {
    if (batch.empty()) throw ParameterError("cross_entropy_grad: empty batch");
    Gradient g = zeros_like(params);
    grad_into(params, batch, g);
    return g;
}

ModelParams sgd_step(const ModelParams& params, const LabeledBatch& batch, double lr) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be >= 0");
    ModelParams out = params;
    apply_update(out, cross_entropy_grad(params, batch), lr);
    return out;
}

ModelParams local_train(ModelParams params, const LabeledBatch& dataset, const TrainOptions& opts) {
    if (dataset.empty()) throw ConfigError("local_train: empty dataset");
    if (opts.epochs == 0) throw ConfigError("local_train: epochs must be >= 1");
    if (opts.batch_size == 0) throw ConfigError("local_train: batch size must be >= 1");
    if (!(opts.lr >= 0.0) || !std::isfinite(opts.lr)) throw ParameterError("learning rate must be >= 0");

    Rng rng(opts.seed);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Gradient g = zeros_like(params);
    for (std::size_t e = 0; e < opts.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t stop = std::min(order.size(), start + opts.batch_size);
            LabeledBatch mb = gather(dataset, std::span(order).subspan(start, stop - start));
            for (auto s : tensors(g.extractor)) std::fill(s.begin(), s.end(), 0.0);
            for (auto s : tensors(g.classifier)) std::fill(s.begin(), s.end(), 0.0);
            grad_into(params, mb, g);
            apply_update(params, g, opts.lr);
        }
    }
    return params;
}

std::vector<int> predict(const ModelParams& params, const Matrix& inputs) {
    Trace t = run_forward(params, inputs);
    std::vector<int> out(inputs.rows());
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
        auto z = t.logits.row(r);
        // max_element returns the first maximum
        out[r] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    }
    return out;
}

LabeledBatch gather(const LabeledBatch& batch, std::span<const std::size_t> indices) {
    LabeledBatch out{Matrix(indices.size(), batch.inputs.cols()), std::vector<int>(indices.size())};
    for (std::size_t i = 0; i < indices.size(); ++i) {
        auto src = batch.inputs.row(indices[i]);
        std::copy(src.begin(), src.end(), out.inputs.row(i).begin());
        out.labels[i] = batch.labels[indices[i]];
    }
    return out;
}

bool all_finite(const ModelParams& params) {
    auto finite = [](std::span<const double> s) {
        return std::all_of(s.begin(), s.end(), [](double v) { return std::isfinite(v); });
    };
    for (auto s : tensors(params.extractor)) {
        if (!finite(s)) return false;
    }
    for (auto s : tensors(params.classifier)) {
        if (!finite(s)) return false;
    }
    return true;
}

}  // namespace fedrema::nn
