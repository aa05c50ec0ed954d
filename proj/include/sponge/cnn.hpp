#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sponge/energy.hpp"
#include "sponge/tensor.hpp"

namespace sponge {

/// Channel-major (C x H x W) image with pixel values in [0, 1].
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), pixels(c * h * w, fill) {}
    std::size_t size() const { return pixels.size(); }
    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    bool operator==(const Image&) const = default;
};

// "sponge-image v1 <C> <H> <W>" header line followed by C*H*W values.
void write_image(std::ostream& out, const Image& img);
Image read_image(std::istream& in);

enum class LayerKind { Conv, Linear };

struct CnnLayer {
    std::string name;
    LayerKind kind = LayerKind::Linear;
    std::size_t in_channels = 0;   // conv: input channels, linear: input features
    std::size_t out_channels = 0;  // conv: filters, linear: output features
    std::size_t kernel = 1;
    std::size_t stride = 1;
    bool relu = false;
    Matrix weights;  // conv: out x (in*k*k), linear: out x in
    std::vector<double> bias;
};

/// Conv (valid padding) and linear layers. Every hidden layer is followed by
/// ReLU; the last layer produces logits.
struct CnnModel {
    std::size_t channels = 1;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t classes = 10;
    std::vector<CnnLayer> layers;

    void validate() const;
    /// Output element count of each layer.
    std::vector<std::size_t> output_sizes() const;
    std::size_t input_size() const { return channels * height * width; }

    /// 1x8x8 input, 3x3 conv with 4 filters (+ReLU), linear 144 -> 10. The
    /// filters are hand-set: a patch-mean detector, a centre detector, a
    /// top-rows detector and a filter that can never fire. The
    /// linear weights come from a fixed seed, biases are zero.
    static CnnModel reference();

    // "sponge-cnn v1", input/classes lines, then per layer a descriptor line
    // and named weight/bias arrays.
    void save(std::ostream& out) const;
    static CnnModel load(std::istream& in);
};

struct DensityReport {
    double post_relu_density = 0.0;
    double overall_density = 0.0;
    std::vector<double> per_layer;  // one entry per recorded tensor, input first
    std::optional<int> label;
};

using CnnObserver = std::function<bool(const LayerTrace&)>;

struct CnnResult {
    std::vector<double> logits;
    ActivationTrace trace;  // "input" entry (no traffic, no multiplies) then one entry per layer
    DensityReport density;
    int predicted_class = 0;
    bool aborted = false;
};

/// Throws ValidationError on a shape mismatch.
CnnResult cnn_forward(const CnnModel& model, const Image& image, const CnnObserver& observer = {});

/// Densities derived from a forward trace: overall over every recorded tensor,
/// post-ReLU over the outputs of ReLU layers.
DensityReport density_from_trace(const CnnModel& model, const ActivationTrace& trace);

/// Upper bound on every density over the input box [lo, hi]^N: a ReLU unit
/// is provably zero when its pre-activation upper bound is <= 0, any other
/// value when its interval collapses to {0}.
DensityReport ibp_max_density(const CnnModel& model, double lo = 0.0, double hi = 1.0);

/// Objective  -sum_l ||a_l||_2  over the post-activation output of every
/// layer. Writes d(objective)/d(pixel) into `grad` (sized like the image).
double activation_norm_objective(const CnnModel& model, const Image& image, std::span<double> grad);

struct LabeledImage {
    Image image;
    int label = 0;
};

struct ClassDensity {
    int label = 0;
    std::size_t count = 0;
    double mean_overall = 0.0;
    double mean_post_relu = 0.0;
    double variance_overall = 0.0;
};

/// Mean densities per class, sorted by descending mean overall density.
/// Labels with no images do not appear.
std::vector<ClassDensity> class_density_profile(const CnnModel& model, const std::vector<LabeledImage>& dataset);

/// Smoothed-blob images whose blob count, size, brightness and background
/// level depend on the class label.
Image natural_like_image(int label, std::mt19937_64& rng, std::size_t channels = 1, std::size_t height = 8,
                         std::size_t width = 8);
std::vector<LabeledImage> natural_like_dataset(std::size_t per_class, int classes, std::uint64_t seed);
Image uniform_random_image(std::mt19937_64& rng, std::size_t channels = 1, std::size_t height = 8,
                           std::size_t width = 8);

// Dataset layout: <root>/<label>/<any name>.img, one image per file.
void save_dataset(const std::filesystem::path& root, const std::vector<LabeledImage>& dataset);
std::vector<LabeledImage> load_dataset(const std::filesystem::path& root);

}  // namespace sponge
