#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace microcep::tinyol {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Activation { Linear, Relu, Sigmoid, Softmax };
enum class Loss { Mse, CrossEntropy };

std::string_view activation_name(Activation a);
std::string_view loss_name(Loss l);

struct Layer {
    Matrix weights;  // out_dim x in_dim
    Vector bias;     // out_dim
    Activation activation = Activation::Linear;

    Eigen::Index in_dim() const { return weights.cols(); }
    Eigen::Index out_dim() const { return weights.rows(); }
};

// Dense feed-forward network. Layers [0, frozen_count) never change.
struct Model {
    std::string model_id;
    Loss loss = Loss::Mse;
    Vector mean;
    Vector std;
    std::vector<Layer> layers;
    std::size_t frozen_count = 0;
    std::uint64_t init_seed = 0;

    Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
    bool trainable() const { return frozen_count < layers.size(); }
};

struct LayerSpec {
    Eigen::Index out_dim;
    Activation activation;
};

// Builds a model with weights drawn uniformly from [-0.5, 0.5) and zero bias.
// Preprocessing defaults to identity.
Model make_model(std::string model_id, Eigen::Index input_dim, const std::vector<LayerSpec>& layers,
                 std::size_t frozen_count, Loss loss, std::uint64_t seed);

// Redraws the trainable suffix from `seed` and records it in the model.
void reinitialize_trainable(Model& m, std::uint64_t seed);

// Throws InvariantViolation describing the first broken invariant.
void validate(const Model& m);

struct Trainer {
    double learning_rate = 0.01;
    std::uint64_t step_count = 0;
};

struct Metrics {
    double running_loss_mean = 0.0;
    std::uint64_t sample_count = 0;
    double running_accuracy = 0.0;
    std::uint64_t accuracy_count = 0;

    void record(double loss, std::optional<bool> correct);
};

struct StepResult {
    Vector prediction;
    double loss = 0.0;
};

// Gradients of the loss for the trainable layers, index-aligned with
// m.layers[frozen_count..].
struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> bias;
};

Vector preprocess(const Model& m, const Vector& x);
Vector infer(const Model& m, const Vector& x);

double loss_value(const Model& m, const Vector& x, const Vector& y_true);
Gradients gradients(const Model& m, const Vector& x, const Vector& y_true);

// One inference followed by one SGD update of the trainable suffix.
// Metrics are updated before the weights. Throws DimensionMismatch or FrozenOnlyModel.
StepResult train_step(Model& m, Trainer& tr, Metrics& met, const Vector& x, const Vector& y_true);

// Mean squared reconstruction error of the preprocessed input. Throws NotAutoencoder.
double anomaly_score(const Model& m, const Vector& x);

std::string save_model(const Model& m);
// Throws FormatError (with field path) or InvariantViolation.
Model load_model(std::string_view text);

Model load_model_file(const std::filesystem::path& path);
void save_model_file(const Model& m, const std::filesystem::path& path);

// Hosted models with their optimiser state and running metrics.
class ModelPool {
public:
    struct Entry {
        Model model;
        Trainer trainer;
        Metrics metrics;
    };

    // Throws InvariantViolation on a duplicate id.
    void add(Model model, Trainer trainer = {});
    bool contains(const std::string& id) const { return entries_.count(id) != 0; }
    // Throws OutOfRange for an unknown id.
    Entry& get(const std::string& id);
    const Entry& get(const std::string& id) const;
    std::vector<std::string> ids() const;

private:
    std::map<std::string, Entry> entries_;
};

}  // namespace microcep::tinyol
