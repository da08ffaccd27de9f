#ifndef FEDSIM_MODEL_HPP
#define FEDSIM_MODEL_HPP

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/linalg.hpp"

namespace fedsim {

enum class SegmentKind { conv, fully_connected, bias };

// One contiguous named slice of the flat parameter vector. fan/kernel fields
// describe the layer shape for weight segments (zero for bias segments).
struct LayerSegment {
    std::string name;
    SegmentKind kind = SegmentKind::fully_connected;
    std::size_t offset = 0;
    std::size_t length = 0;
    int fan_in = 0;
    int fan_out = 0;
    int kernel_rows = 0;
    int kernel_cols = 0;

    bool is_weight() const { return kind != SegmentKind::bias; }
};

struct LayerLayout {
    std::vector<LayerSegment> segments;

    std::size_t dim() const;
    std::size_t weight_count() const;
    const LayerSegment* find(std::string_view name) const;
    void validate() const;
};

enum class Arch { mlp2, cnn2 };

struct ModelSpec {
    Arch arch = Arch::mlp2;
    int input_rows = 28;
    int input_cols = 28;
    int input_channels = 1;
    int num_classes = 10;
    int hidden = 64;           // mlp2
    int conv1_channels = 16;   // cnn2
    int conv2_channels = 32;   // cnn2
    std::uint64_t init_seed = 0;

    int input_dim() const { return input_rows * input_cols * input_channels; }
    LayerLayout make_layout() const;
    void validate() const;
};

struct Model {
    ModelSpec spec;
    LayerLayout layout;
    ParamVector params;
};

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
};

// Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases zero. Deterministic per seed.
Model init_model(const ModelSpec& spec, std::uint64_t seed);
inline Model init_model(const ModelSpec& spec) { return init_model(spec, spec.init_seed); }

// Mean softmax cross-entropy and its exact gradient over the batch.
LossGrad loss_and_grad(const Model& m, const Dataset& ds, std::span<const std::size_t> batch);

// Loss/gradient at an arbitrary parameter vector for this spec (the model's
// own parameters are not used). Backward pass skipped when want_grad is false.
LossGrad eval_at(const ModelSpec& spec, std::span<const double> params, const Dataset& ds,
                 std::span<const std::size_t> batch, bool want_grad);

// Gradient of the loss at the element-wise product mask .* params, with
// respect to the parameters. Output coordinates are not zeroed by the mask.
ParamVector grad_at_masked(const Model& m, std::span<const std::uint8_t> mask_bits,
                           const Dataset& ds, std::span<const std::size_t> batch);

// params <- params - lr * direction.
Model apply_update(const Model& m, std::span<const double> direction, double lr);

// Fraction of samples with argmax logit equal to the label; argmax ties go to
// the lowest class index.
double accuracy(const Model& m, const Dataset& ds);
double accuracy(const Model& m, const Dataset& ds, std::span<const std::size_t> subset);

// First conv weight segment (when present) plus the final fully-connected
// weight segment: the layers mask policies may force to all-ones.
std::vector<std::string> default_critical_segments(const LayerLayout& layout);

Arch arch_from_string(std::string_view s);
std::string arch_to_string(Arch a);

} // namespace fedsim

#endif
