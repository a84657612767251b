#include "microcep/tinyol.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "microcep/errors.hpp"

namespace microcep::tinyol {

namespace {

using Json = nlohmann::ordered_json;

constexpr std::string_view kFormatTag = "microcep-model";
constexpr int kFormatVersion = 1;

// Portable uniform draw in [-0.5, 0.5): std::uniform_real_distribution is
// implementation-defined, which would make model files compiler-dependent.
double draw(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;
}

void fill_layer(Layer& layer, std::mt19937_64& rng) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = draw(rng);
    }
    layer.bias.setZero();
}

Vector activate(Activation a, const Vector& z) {
    switch (a) {
        case Activation::Linear: return z;
        case Activation::Relu: return z.cwiseMax(0.0);
        case Activation::Sigmoid: return (1.0 / (1.0 + (-z.array()).exp())).matrix();
        case Activation::Softmax: {
            const Vector e = (z.array() - z.maxCoeff()).exp().matrix();
            return e / e.sum();
        }
    }
    return z;
}

// Maps dL/da to dL/dz for one layer given its pre-activation z and output a.
Vector activation_backward(Activation act, const Vector& z, const Vector& a, const Vector& g) {
    switch (act) {
        case Activation::Linear: return g;
        case Activation::Relu: return (g.array() * (z.array() > 0.0).cast<double>()).matrix();
        case Activation::Sigmoid: return (g.array() * a.array() * (1.0 - a.array())).matrix();
        case Activation::Softmax: return (a.array() * (g.array() - a.dot(g))).matrix();
    }
    return g;
}

struct Forward {
    std::vector<Vector> inputs;  // inputs[l] feeds layer l; inputs.back() is the output
    std::vector<Vector> pre;     // pre-activations per layer
};

void check_input(const Model& m, const Vector& x) {
    if (x.size() != m.input_dim()) {
        throw DimensionMismatch("model " + m.model_id + " expects " + std::to_string(m.input_dim()) +
                                " inputs, got " + std::to_string(x.size()));
    }
}

void check_target(const Model& m, const Vector& y) {
    if (y.size() != m.output_dim()) {
        throw DimensionMismatch("model " + m.model_id + " produces " + std::to_string(m.output_dim()) +
                                " outputs, target has " + std::to_string(y.size()));
    }
}

Forward forward(const Model& m, const Vector& x) {
    check_input(m, x);
    Forward f;
    f.inputs.reserve(m.layers.size() + 1);
    f.pre.reserve(m.layers.size());
    f.inputs.push_back(preprocess(m, x));
    for (const Layer& layer : m.layers) {
        f.pre.push_back(layer.weights * f.inputs.back() + layer.bias);
        f.inputs.push_back(activate(layer.activation, f.pre.back()));
    }
    return f;
}

constexpr double kProbFloor = 1e-12;

double compute_loss(const Model& m, const Vector& out, const Vector& y) {
    if (m.loss == Loss::Mse) return (out - y).squaredNorm() / static_cast<double>(out.size());
    const Vector p = out.cwiseMax(kProbFloor);
    if (m.layers.back().activation == Activation::Sigmoid) {
        const Vector q = (1.0 - out.array()).cwiseMax(kProbFloor).matrix();
        return -(y.array() * p.array().log() + (1.0 - y.array()) * q.array().log()).sum();
    }
    return -(y.array() * p.array().log()).sum();
}

std::optional<bool> correctness(const Model& m, const Vector& out, const Vector& y) {
    if (m.loss == Loss::CrossEntropy && out.size() > 1) {
        Eigen::Index pi = 0;
        Eigen::Index yi = 0;
        out.maxCoeff(&pi);
        y.maxCoeff(&yi);
        return pi == yi;
    }
    if (out.size() == 1) {
        const double boundary = m.loss == Loss::CrossEntropy ? 0.5 : 0.0;
        return (out(0) > boundary) == (y(0) > boundary);
    }
    return std::nullopt;
}

Gradients backward(const Model& m, const Forward& f, const Vector& y) {
    const std::size_t n = m.layers.size();
    const std::size_t first = m.frozen_count;
    Gradients g;
    g.weights.resize(n - first);
    g.bias.resize(n - first);

    const Vector& out = f.inputs.back();
    Vector dz;
    if (m.loss == Loss::CrossEntropy) {
        dz = out - y;  // softmax or sigmoid output paired with cross entropy
    } else {
        const Vector da = 2.0 * (out - y) / static_cast<double>(out.size());
        dz = activation_backward(m.layers.back().activation, f.pre.back(), out, da);
    }
    for (std::size_t l = n; l-- > first;) {
        g.weights[l - first] = dz * f.inputs[l].transpose();
        g.bias[l - first] = dz;
        if (l == first) break;
        const Vector da = m.layers[l].weights.transpose() * dz;
        dz = activation_backward(m.layers[l - 1].activation, f.pre[l - 1], f.inputs[l], da);
    }
    return g;
}

// ---- serialization helpers ----

const Json& field(const Json& obj, const char* key, const std::string& path) {
    if (!obj.is_object()) throw FormatError(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw FormatError(path + "." + key, "missing field");
    return *it;
}

std::string get_string(const Json& obj, const char* key, const std::string& path) {
    const Json& v = field(obj, key, path);
    if (!v.is_string()) throw FormatError(path + "." + key, "expected a string");
    return v.get<std::string>();
}

std::uint64_t get_unsigned(const Json& obj, const char* key, const std::string& path) {
    const Json& v = field(obj, key, path);
    if (!v.is_number_unsigned()) throw FormatError(path + "." + key, "expected a non-negative integer");
    return v.get<std::uint64_t>();
}

std::vector<double> get_reals(const Json& obj, const char* key, const std::string& path) {
    const Json& v = field(obj, key, path);
    const std::string here = path + "." + key;
    if (!v.is_array()) throw FormatError(here, "expected an array of numbers");
    std::vector<double> out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw FormatError(here + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back(v[i].get<double>());
    }
    return out;
}

Activation parse_activation(const std::string& s, const std::string& path) {
    if (s == "linear") return Activation::Linear;
    if (s == "relu") return Activation::Relu;
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "softmax") return Activation::Softmax;
    throw FormatError(path, "unknown activation '" + s + "'");
}

Json reals(const Vector& v) {
    Json arr = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

}  // namespace

std::string_view activation_name(Activation a) {
    switch (a) {
        case Activation::Linear: return "linear";
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Softmax: return "softmax";
    }
    return "?";
}

std::string_view loss_name(Loss l) { return l == Loss::Mse ? "mse" : "cross_entropy"; }

Model make_model(std::string model_id, Eigen::Index input_dim, const std::vector<LayerSpec>& layers,
                 std::size_t frozen_count, Loss loss, std::uint64_t seed) {
    Model m;
    m.model_id = std::move(model_id);
    m.loss = loss;
    m.mean = Vector::Zero(input_dim);
    m.std = Vector::Ones(input_dim);
    m.frozen_count = frozen_count;
    m.init_seed = seed;
    std::mt19937_64 rng(seed);
    Eigen::Index in = input_dim;
    for (const LayerSpec& spec : layers) {
        Layer layer{Matrix(spec.out_dim, in), Vector(spec.out_dim), spec.activation};
        fill_layer(layer, rng);
        m.layers.push_back(std::move(layer));
        in = spec.out_dim;
    }
    validate(m);
    return m;
}

void reinitialize_trainable(Model& m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t l = m.frozen_count; l < m.layers.size(); ++l) fill_layer(m.layers[l], rng);
    m.init_seed = seed;
}

void validate(const Model& m) {
    if (m.layers.empty()) throw InvariantViolation("model has no layers");
    if (m.frozen_count > m.layers.size()) {
        throw InvariantViolation("frozen_count " + std::to_string(m.frozen_count) + " exceeds layer count " +
                                 std::to_string(m.layers.size()));
    }
    if (m.mean.size() != m.input_dim() || m.std.size() != m.input_dim()) {
        throw InvariantViolation("preprocess vectors must have the input dimension " + std::to_string(m.input_dim()));
    }
    for (Eigen::Index i = 0; i < m.std.size(); ++i) {
        if (!(m.std(i) > 0.0) || !std::isfinite(m.std(i))) {
            throw InvariantViolation("preprocess.std[" + std::to_string(i) + "] must be positive");
        }
    }
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const Layer& layer = m.layers[l];
        const std::string where = "layers[" + std::to_string(l) + "]";
        if (layer.in_dim() < 1 || layer.out_dim() < 1) throw InvariantViolation(where + " has an empty dimension");
        if (layer.bias.size() != layer.out_dim()) throw InvariantViolation(where + ".bias length differs from out_dim");
        if (l > 0 && layer.in_dim() != m.layers[l - 1].out_dim()) {
            throw InvariantViolation(where + ".in_dim does not match the previous layer's out_dim");
        }
        if (layer.activation == Activation::Softmax && l + 1 != m.layers.size()) {
            throw InvariantViolation(where + ": softmax is only allowed in the final layer");
        }
        if (!layer.weights.allFinite() || !layer.bias.allFinite()) throw InvariantViolation(where + " has non-finite values");
    }
    if (m.loss == Loss::CrossEntropy) {
        const Activation last = m.layers.back().activation;
        if (last != Activation::Softmax && last != Activation::Sigmoid) {
            throw InvariantViolation("cross_entropy loss needs a softmax or sigmoid output");
        }
    }
}

void Metrics::record(double loss, std::optional<bool> correct) {
    ++sample_count;
    running_loss_mean += (loss - running_loss_mean) / static_cast<double>(sample_count);
    if (correct) {
        ++accuracy_count;
        running_accuracy += ((*correct ? 1.0 : 0.0) - running_accuracy) / static_cast<double>(accuracy_count);
    }
}

Vector preprocess(const Model& m, const Vector& x) {
    check_input(m, x);
    return ((x - m.mean).array() / m.std.array()).matrix();
}

Vector infer(const Model& m, const Vector& x) { return forward(m, x).inputs.back(); }

double loss_value(const Model& m, const Vector& x, const Vector& y_true) {
    check_target(m, y_true);
    return compute_loss(m, infer(m, x), y_true);
}

Gradients gradients(const Model& m, const Vector& x, const Vector& y_true) {
    check_target(m, y_true);
    return backward(m, forward(m, x), y_true);
}

StepResult train_step(Model& m, Trainer& tr, Metrics& met, const Vector& x, const Vector& y_true) {
    if (!m.trainable()) throw FrozenOnlyModel(m.model_id);
    if (!(tr.learning_rate >= 0.0) || !std::isfinite(tr.learning_rate)) {
        throw InvariantViolation("learning rate must be a finite non-negative number");
    }
    check_target(m, y_true);
    const Forward f = forward(m, x);
    StepResult result{f.inputs.back(), compute_loss(m, f.inputs.back(), y_true)};
    met.record(result.loss, correctness(m, result.prediction, y_true));

    const Gradients g = backward(m, f, y_true);
    for (std::size_t i = 0; i < g.weights.size(); ++i) {
        Layer& layer = m.layers[m.frozen_count + i];
        layer.weights -= tr.learning_rate * g.weights[i];
        layer.bias -= tr.learning_rate * g.bias[i];
    }
    ++tr.step_count;
    return result;
}

double anomaly_score(const Model& m, const Vector& x) {
    if (m.output_dim() != m.input_dim()) {
        throw NotAutoencoder("model " + m.model_id + " maps " + std::to_string(m.input_dim()) + " inputs to " +
                             std::to_string(m.output_dim()) + " outputs");
    }
    const Vector xp = preprocess(m, x);
    const Vector out = infer(m, x);
    return (out - xp).squaredNorm() / static_cast<double>(xp.size());
}

std::string save_model(const Model& m) {
    Json doc;
    doc["format"] = kFormatTag;
    doc["version"] = kFormatVersion;
    doc["model_id"] = m.model_id;
    doc["loss"] = loss_name(m.loss);
    doc["init_seed"] = m.init_seed;
    doc["frozen_count"] = m.frozen_count;
    doc["preprocess"] = Json{{"mean", reals(m.mean)}, {"std", reals(m.std)}};
    Json layers = Json::array();
    for (const Layer& layer : m.layers) {
        Json weights = Json::array();
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) weights.push_back(layer.weights(r, c));
        }
        Json entry;
        entry["kind"] = "dense";
        entry["in_dim"] = layer.in_dim();
        entry["out_dim"] = layer.out_dim();
        entry["activation"] = activation_name(layer.activation);
        entry["weights"] = std::move(weights);
        entry["bias"] = reals(layer.bias);
        layers.push_back(std::move(entry));
    }
    doc["layers"] = std::move(layers);
    return doc.dump(1) + "\n";
}

Model load_model(std::string_view text) {
    Json doc;
    try {
        doc = Json::parse(text.begin(), text.end());
    } catch (const Json::parse_error& e) {
        throw FormatError("$", e.what());
    }
    const std::string root = "$";
    if (get_string(doc, "format", root) != kFormatTag) throw FormatError("$.format", "not a model document");
    if (get_unsigned(doc, "version", root) != kFormatVersion) throw FormatError("$.version", "unsupported version");

    Model m;
    m.model_id = get_string(doc, "model_id", root);
    const std::string loss = get_string(doc, "loss", root);
    if (loss == "mse") m.loss = Loss::Mse;
    else if (loss == "cross_entropy") m.loss = Loss::CrossEntropy;
    else throw FormatError("$.loss", "unknown loss '" + loss + "'");
    m.init_seed = get_unsigned(doc, "init_seed", root);
    m.frozen_count = get_unsigned(doc, "frozen_count", root);

    const Json& pre = field(doc, "preprocess", root);
    const auto mean = get_reals(pre, "mean", "$.preprocess");
    const auto std = get_reals(pre, "std", "$.preprocess");
    m.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    m.std = Eigen::Map<const Vector>(std.data(), static_cast<Eigen::Index>(std.size()));

    const Json& layers = field(doc, "layers", root);
    if (!layers.is_array()) throw FormatError("$.layers", "expected an array");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string path = "$.layers[" + std::to_string(l) + "]";
        const Json& entry = layers[l];
        if (get_string(entry, "kind", path) != "dense") throw FormatError(path + ".kind", "only dense layers are supported");
        const auto in = static_cast<Eigen::Index>(get_unsigned(entry, "in_dim", path));
        const auto out = static_cast<Eigen::Index>(get_unsigned(entry, "out_dim", path));
        Layer layer;
        layer.activation = parse_activation(get_string(entry, "activation", path), path + ".activation");
        const auto weights = get_reals(entry, "weights", path);
        const auto bias = get_reals(entry, "bias", path);
        if (static_cast<Eigen::Index>(weights.size()) != in * out) {
            throw InvariantViolation(path + ".weights has " + std::to_string(weights.size()) + " entries, expected " +
                                     std::to_string(in * out));
        }
        layer.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            weights.data(), out, in);
        layer.bias = Eigen::Map<const Vector>(bias.data(), static_cast<Eigen::Index>(bias.size()));
        m.layers.push_back(std::move(layer));
    }
    validate(m);
    return m;
}

Model load_model_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path.string(), "cannot open model file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_model(buf.str());
}

void save_model_file(const Model& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(path.string(), "cannot write model file");
    out << save_model(m);
}

void ModelPool::add(Model model, Trainer trainer) {
    validate(model);
    if (contains(model.model_id)) throw InvariantViolation("model id already hosted: " + model.model_id);
    std::string id = model.model_id;
    entries_.emplace(std::move(id), Entry{std::move(model), trainer, Metrics{}});
}

ModelPool::Entry& ModelPool::get(const std::string& id) {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw OutOfRange("no hosted model with id " + id);
    return it->second;
}

const ModelPool::Entry& ModelPool::get(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw OutOfRange("no hosted model with id " + id);
    return it->second;
}

std::vector<std::string> ModelPool::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, entry] : entries_) out.push_back(id);
    return out;
}

}  // namespace microcep::tinyol
