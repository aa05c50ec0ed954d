#include "sponge/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace sponge {

void write_image(std::ostream& out, const Image& img) {
    const auto old = out.precision(17);
    out << "sponge-image v1 " << img.channels << ' ' << img.height << ' ' << img.width << '\n';
    for (std::size_t i = 0; i < img.pixels.size(); ++i) out << (i ? " " : "") << img.pixels[i];
    out << '\n';
    out.precision(old);
}

Image read_image(std::istream& in) {
    std::string magic, version;
    Image img;
    if (!(in >> magic >> version >> img.channels >> img.height >> img.width) || magic != "sponge-image")
        throw ValidationError("not a sponge-image file");
    if (version != "v1") throw ValidationError("unsupported image version " + version);
    img.pixels.resize(img.channels * img.height * img.width);
    for (auto& p : img.pixels)
        if (!(in >> p)) throw ValidationError("image data truncated");
    return img;
}

void CnnModel::validate() const {
    if (layers.empty()) throw ValidationError("cnn has no layers");
    std::size_t c = channels, h = height, w = width;
    bool spatial = true;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const bool last = i + 1 == layers.size();
        if (l.relu == last) throw ValidationError("layer '" + l.name + "': hidden layers need ReLU, the output layer none");
        if (l.kind == LayerKind::Conv) {
            if (!spatial) throw ValidationError("layer '" + l.name + "': conv after linear");
            if (l.in_channels != c || l.kernel == 0 || l.stride == 0 || l.kernel > h || l.kernel > w)
                throw ValidationError("layer '" + l.name + "': conv shape does not chain");
            if (l.weights.rows != l.out_channels || l.weights.cols != c * l.kernel * l.kernel)
                throw ValidationError("layer '" + l.name + "': weight shape mismatch");
            h = (h - l.kernel) / l.stride + 1;
            w = (w - l.kernel) / l.stride + 1;
            c = l.out_channels;
        } else {
            if (l.in_channels != c * h * w) throw ValidationError("layer '" + l.name + "': linear input size does not chain");
            if (l.weights.rows != l.out_channels || l.weights.cols != l.in_channels)
                throw ValidationError("layer '" + l.name + "': weight shape mismatch");
            spatial = false;
            c = l.out_channels;
            h = w = 1;
        }
        if (l.bias.size() != l.out_channels) throw ValidationError("layer '" + l.name + "': bias size mismatch");
    }
    if (c * h * w != classes) throw ValidationError("cnn output size does not match class count");
}

std::vector<std::size_t> CnnModel::output_sizes() const {
    std::vector<std::size_t> out;
    std::size_t h = height, w = width;
    for (const auto& l : layers) {
        if (l.kind == LayerKind::Conv) {
            h = (h - l.kernel) / l.stride + 1;
            w = (w - l.kernel) / l.stride + 1;
            out.push_back(l.out_channels * h * w);
        } else {
            h = w = 1;
            out.push_back(l.out_channels);
        }
    }
    return out;
}

CnnModel CnnModel::reference() {
    CnnModel m;
    m.channels = 1;
    m.height = 8;
    m.width = 8;
    m.classes = 10;

    CnnLayer conv;
    conv.name = "conv1";
    conv.kind = LayerKind::Conv;
    conv.in_channels = 1;
    conv.out_channels = 4;
    conv.kernel = 3;
    conv.relu = true;
    conv.weights = Matrix(4, 9);
    // Filter 0: patch mean; fires when the 3x3 sum exceeds 5.
    for (std::size_t k = 0; k < 9; ++k) conv.weights(0, k) = 0.25;
    // Filter 1: centre plus its four neighbours.
    const double centre[9] = {0.0, 0.25, 0.0, 0.25, 1.0, 0.25, 0.0, 0.25, 0.0};
    // Filter 2: bright top two rows.
    const double top[9] = {0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0};
    for (std::size_t k = 0; k < 9; ++k) {
        conv.weights(1, k) = centre[k];
        conv.weights(2, k) = top[k];
        conv.weights(3, k) = -0.125;  // never fires on [0, 1] inputs
    }
    conv.bias = {-1.25, -1.5, -1.5, -0.125};

    CnnLayer fc;
    fc.name = "fc";
    fc.kind = LayerKind::Linear;
    fc.in_channels = 144;
    fc.out_channels = 10;
    std::mt19937_64 rng(20200605);
    fc.weights = random_matrix(10, 144, 1.0 / 12.0, rng);
    fc.bias.assign(10, 0.0);

    m.layers = {std::move(conv), std::move(fc)};
    m.validate();
    return m;
}

void CnnModel::save(std::ostream& out) const {
    out << "sponge-cnn v1\n";
    out << "input " << channels << ' ' << height << ' ' << width << '\n';
    out << "classes " << classes << '\n';
    out << "layers " << layers.size() << '\n';
    for (const auto& l : layers) {
        out << "layer " << l.name << ' ' << (l.kind == LayerKind::Conv ? "conv" : "linear") << ' ' << l.in_channels
            << ' ' << l.out_channels << ' ' << l.kernel << ' ' << l.stride << ' ' << (l.relu ? 1 : 0) << '\n';
        write_array(out, l.name + ".weight", l.weights);
        Matrix b(1, l.bias.size());
        b.data = l.bias;
        write_array(out, l.name + ".bias", b);
    }
}

CnnModel CnnModel::load(std::istream& in) {
    std::string magic, version, key;
    if (!(in >> magic >> version) || magic != "sponge-cnn") throw ValidationError("not a sponge-cnn checkpoint");
    if (version != "v1") throw ValidationError("unsupported cnn checkpoint version " + version);
    CnnModel m;
    std::size_t count = 0;
    if (!(in >> key >> m.channels >> m.height >> m.width) || key != "input") throw ValidationError("cnn: expected input line");
    if (!(in >> key >> m.classes) || key != "classes") throw ValidationError("cnn: expected classes line");
    if (!(in >> key >> count) || key != "layers") throw ValidationError("cnn: expected layers line");
    for (std::size_t i = 0; i < count; ++i) {
        CnnLayer l;
        std::string kind;
        int relu = 0;
        if (!(in >> key >> l.name >> kind >> l.in_channels >> l.out_channels >> l.kernel >> l.stride >> relu) ||
            key != "layer")
            throw ValidationError("cnn: malformed layer descriptor");
        if (kind != "conv" && kind != "linear") throw ValidationError("cnn: unknown layer kind " + kind);
        l.kind = kind == "conv" ? LayerKind::Conv : LayerKind::Linear;
        l.relu = relu != 0;
        l.weights = read_array(in, l.name + ".weight");
        l.bias = read_array(in, l.name + ".bias").data;
        m.layers.push_back(std::move(l));
    }
    m.validate();
    return m;
}

namespace {

struct Geometry {
    std::size_t in_h, in_w, out_h, out_w;
};

std::vector<Geometry> geometries(const CnnModel& m) {
    std::vector<Geometry> g;
    std::size_t h = m.height, w = m.width;
    for (const auto& l : m.layers) {
        if (l.kind == LayerKind::Conv) {
            const std::size_t oh = (h - l.kernel) / l.stride + 1, ow = (w - l.kernel) / l.stride + 1;
            g.push_back({h, w, oh, ow});
            h = oh;
            w = ow;
        } else {
            g.push_back({h, w, 1, 1});
            h = w = 1;
        }
    }
    return g;
}

/// Index of the input element feeding weight column `col` at output (oy, ox).
inline std::size_t conv_input_index(const CnnLayer& l, const Geometry& g, std::size_t col, std::size_t oy,
                                    std::size_t ox) {
    const std::size_t kk = l.kernel * l.kernel;
    const std::size_t c = col / kk, ky = (col % kk) / l.kernel, kx = col % l.kernel;
    return (c * g.in_h + oy * l.stride + ky) * g.in_w + ox * l.stride + kx;
}

/// Pre-activation output of one layer; counts multiplies.
std::vector<double> affine(const CnnLayer& l, const Geometry& g, std::span<const double> in, std::uint64_t& total,
                           std::uint64_t& nonzero) {
    if (l.kind == LayerKind::Linear) {
        std::vector<double> out(l.out_channels);
        matvec(l.weights, in, l.bias, out, total, nonzero);
        return out;
    }
    const std::size_t plane = g.out_h * g.out_w;
    std::vector<double> out(l.out_channels * plane);
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            std::uint64_t nz = 0;
            for (std::size_t col = 0; col < l.weights.cols; ++col) nz += in[conv_input_index(l, g, col, oy, ox)] != 0.0;
            for (std::size_t o = 0; o < l.out_channels; ++o) {
                double s = l.bias[o];
                for (std::size_t col = 0; col < l.weights.cols; ++col) {
                    const double x = in[conv_input_index(l, g, col, oy, ox)];
                    if (x != 0.0) s += l.weights(o, col) * x;
                }
                out[o * plane + oy * g.out_w + ox] = s;
            }
            total += static_cast<std::uint64_t>(l.out_channels) * l.weights.cols;
            nonzero += nz * l.out_channels;
        }
    return out;
}

/// dL/d(input) given dL/d(pre-activation output).
std::vector<double> affine_backward(const CnnLayer& l, const Geometry& g, std::span<const double> dout,
                                    std::size_t in_size) {
    std::vector<double> din(in_size, 0.0);
    if (l.kind == LayerKind::Linear) {
        for (std::size_t r = 0; r < l.weights.rows; ++r)
            for (std::size_t c = 0; c < l.weights.cols; ++c) din[c] += l.weights(r, c) * dout[r];
        return din;
    }
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t o = 0; o < l.out_channels; ++o)
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const double d = dout[o * plane + oy * g.out_w + ox];
                if (d == 0.0) continue;
                for (std::size_t col = 0; col < l.weights.cols; ++col)
                    din[conv_input_index(l, g, col, oy, ox)] += l.weights(o, col) * d;
            }
    return din;
}

void check_input(const CnnModel& m, const Image& img) {
    if (img.channels != m.channels || img.height != m.height || img.width != m.width ||
        img.pixels.size() != m.input_size())
        throw ValidationError("image shape " + std::to_string(img.channels) + "x" + std::to_string(img.height) + "x" +
                              std::to_string(img.width) + " does not match model input " +
                              std::to_string(m.channels) + "x" + std::to_string(m.height) + "x" +
                              std::to_string(m.width));
}

}  // namespace

DensityReport density_from_trace(const CnnModel& model, const ActivationTrace& trace) {
    DensityReport r;
    std::uint64_t all_nz = 0, all_total = 0, relu_nz = 0, relu_total = 0;
    for (std::size_t i = 0; i < trace.layers.size(); ++i) {
        const auto& e = trace.layers[i];
        all_nz += e.act_nonzero;
        all_total += e.act_total;
        r.per_layer.push_back(e.act_total ? static_cast<double>(e.act_nonzero) / static_cast<double>(e.act_total) : 0.0);
        // Entry 0 is the input; entry i > 0 is layer i - 1.
        if (i > 0 && i - 1 < model.layers.size() && model.layers[i - 1].relu) {
            relu_nz += e.act_nonzero;
            relu_total += e.act_total;
        }
    }
    r.overall_density = all_total ? static_cast<double>(all_nz) / static_cast<double>(all_total) : 0.0;
    r.post_relu_density = relu_total ? static_cast<double>(relu_nz) / static_cast<double>(relu_total) : 0.0;
    return r;
}

CnnResult cnn_forward(const CnnModel& model, const Image& image, const CnnObserver& observer) {
    check_input(model, image);
    const auto geo = geometries(model);
    CnnResult result;

    LayerTrace input;
    input.name = "input";
    input.act_total = image.pixels.size();
    input.act_nonzero = count_nonzero(image.pixels);
    result.trace.layers.push_back(input);

    std::vector<double> act = image.pixels;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& l = model.layers[i];
        LayerRecorder rec(l.name);
        std::uint64_t total = 0, nonzero = 0;
        auto out = affine(l, geo[i], act, total, nonzero);
        if (l.relu)
            for (auto& v : out) v = v > 0.0 ? v : 0.0;
        rec.mults(total, nonzero);
        rec.read(act);
        rec.weights(l.weights.size() + l.bias.size());
        rec.output(out);
        result.trace.layers.push_back(rec.finish());
        act = std::move(out);
        if (observer && !observer(result.trace.layers.back())) {
            result.aborted = true;
            break;
        }
    }
    if (!result.aborted) {
        result.logits = act;
        result.predicted_class =
            static_cast<int>(std::distance(act.begin(), std::max_element(act.begin(), act.end())));
    }
    result.density = density_from_trace(model, result.trace);
    return result;
}

DensityReport ibp_max_density(const CnnModel& model, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("ibp: empty input box");
    model.validate();
    const auto geo = geometries(model);
    std::vector<double> l_in(model.input_size(), lo), h_in(model.input_size(), hi);

    DensityReport r;
    std::uint64_t all_nz = 0, all_total = 0, relu_nz = 0, relu_total = 0;
    const std::uint64_t input_nz = (lo == 0.0 && hi == 0.0) ? 0 : model.input_size();
    all_nz += input_nz;
    all_total += model.input_size();
    r.per_layer.push_back(static_cast<double>(input_nz) / static_cast<double>(model.input_size()));

    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& layer = model.layers[i];
        // Split weights by sign: lower = W+ l + W- h + b, upper = W+ h + W- l + b.
        CnnLayer pos = layer, neg = layer;
        for (auto& w : pos.weights.data) w = std::max(w, 0.0);
        for (auto& w : neg.weights.data) w = std::min(w, 0.0);
        CnnLayer pos_nb = pos, neg_nb = neg;
        std::fill(neg_nb.bias.begin(), neg_nb.bias.end(), 0.0);
        std::fill(pos_nb.bias.begin(), pos_nb.bias.end(), 0.0);
        std::uint64_t dummy_t = 0, dummy_n = 0;
        auto lower = affine(pos, geo[i], l_in, dummy_t, dummy_n);
        auto lower_neg = affine(neg_nb, geo[i], h_in, dummy_t, dummy_n);
        auto upper = affine(pos_nb, geo[i], h_in, dummy_t, dummy_n);
        auto upper_neg = affine(neg, geo[i], l_in, dummy_t, dummy_n);
        for (std::size_t k = 0; k < lower.size(); ++k) {
            lower[k] += lower_neg[k];
            upper[k] += upper_neg[k];
        }
        std::uint64_t nz = 0;
        for (std::size_t k = 0; k < lower.size(); ++k) {
            const bool zero = layer.relu ? upper[k] <= 0.0 : (lower[k] == 0.0 && upper[k] == 0.0);
            nz += !zero;
            if (layer.relu) {
                lower[k] = std::max(lower[k], 0.0);
                upper[k] = std::max(upper[k], 0.0);
            }
        }
        all_nz += nz;
        all_total += lower.size();
        if (layer.relu) {
            relu_nz += nz;
            relu_total += lower.size();
        }
        r.per_layer.push_back(static_cast<double>(nz) / static_cast<double>(lower.size()));
        l_in = std::move(lower);
        h_in = std::move(upper);
    }
    r.overall_density = static_cast<double>(all_nz) / static_cast<double>(all_total);
    r.post_relu_density = relu_total ? static_cast<double>(relu_nz) / static_cast<double>(relu_total) : 0.0;
    return r;
}

double activation_norm_objective(const CnnModel& model, const Image& image, std::span<double> grad) {
    check_input(model, image);
    if (grad.size() != image.pixels.size()) throw std::invalid_argument("gradient buffer has the wrong size");
    const auto geo = geometries(model);

    // Forward, keeping every layer's input and pre-activation.
    std::vector<std::vector<double>> inputs{image.pixels}, pre;
    std::vector<double> norms;
    double objective = 0.0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& l = model.layers[i];
        std::uint64_t t = 0, n = 0;
        auto z = affine(l, geo[i], inputs.back(), t, n);
        pre.push_back(z);
        if (l.relu)
            for (auto& v : z) v = v > 0.0 ? v : 0.0;
        double sq = 0.0;
        for (double v : z) sq += v * v;
        norms.push_back(std::sqrt(sq));
        objective -= norms.back();
        inputs.push_back(std::move(z));
    }

    // Backward. g holds d(objective)/d(a_l) for the current layer output.
    std::vector<double> g(inputs.back().size(), 0.0);
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        const auto& a = inputs[i + 1];
        if (norms[i] > 0.0)
            for (std::size_t k = 0; k < a.size(); ++k) g[k] -= a[k] / norms[i];
        if (model.layers[i].relu)
            for (std::size_t k = 0; k < g.size(); ++k)
                if (!(pre[i][k] > 0.0)) g[k] = 0.0;
        g = affine_backward(model.layers[i], geo[i], g, inputs[i].size());
    }
    std::ranges::copy(g, grad.begin());
    return objective;
}

std::vector<ClassDensity> class_density_profile(const CnnModel& model, const std::vector<LabeledImage>& dataset) {
    std::map<int, std::vector<DensityReport>> by_label;
    for (const auto& s : dataset) by_label[s.label].push_back(cnn_forward(model, s.image).density);

    std::vector<ClassDensity> out;
    for (const auto& [label, reports] : by_label) {
        ClassDensity c;
        c.label = label;
        c.count = reports.size();
        for (const auto& r : reports) {
            c.mean_overall += r.overall_density;
            c.mean_post_relu += r.post_relu_density;
        }
        c.mean_overall /= static_cast<double>(c.count);
        c.mean_post_relu /= static_cast<double>(c.count);
        for (const auto& r : reports) c.variance_overall += (r.overall_density - c.mean_overall) * (r.overall_density - c.mean_overall);
        c.variance_overall /= static_cast<double>(c.count);
        out.push_back(c);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ClassDensity& a, const ClassDensity& b) { return a.mean_overall > b.mean_overall; });
    return out;
}

Image natural_like_image(int label, std::mt19937_64& rng, std::size_t channels, std::size_t height, std::size_t width) {
    const int c = label < 0 ? -label : label;
    const int blobs = 1 + c % 3;
    const double radius = 1.2 + 0.3 * (c % 4);
    const double amplitude = 0.85 + 0.015 * (c % 10);
    const double background = 0.05 + 0.02 * (c % 5);

    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(width - 1));
    std::uniform_real_distribution<double> uy(0.0, static_cast<double>(height - 1));
    std::normal_distribution<double> noise(0.0, 0.03);

    Image img(channels, height, width, background);
    for (int b = 0; b < blobs; ++b) {
        const double cx = ux(rng), cy = uy(rng);
        for (std::size_t ch = 0; ch < channels; ++ch)
            for (std::size_t y = 0; y < height; ++y)
                for (std::size_t x = 0; x < width; ++x) {
                    const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                    img.pixels[(ch * height + y) * width + x] +=
                        amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
                }
    }
    for (auto& p : img.pixels) p = std::clamp(p + noise(rng), 0.0, 1.0);
    return img;
}

std::vector<LabeledImage> natural_like_dataset(std::size_t per_class, int classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LabeledImage> out;
    for (int c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i) out.push_back({natural_like_image(c, rng), c});
    return out;
}

Image uniform_random_image(std::mt19937_64& rng, std::size_t channels, std::size_t height, std::size_t width) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(channels, height, width);
    for (auto& p : img.pixels) p = u(rng);
    return img;
}

void save_dataset(const std::filesystem::path& root, const std::vector<LabeledImage>& dataset) {
    std::map<int, std::size_t> counters;
    for (const auto& s : dataset) {
        const auto dir = root / std::to_string(s.label);
        std::filesystem::create_directories(dir);
        std::ostringstream name;
        name << std::setw(6) << std::setfill('0') << counters[s.label]++ << ".img";
        std::ofstream f(dir / name.str());
        if (!f) throw std::runtime_error("cannot write " + (dir / name.str()).string());
        write_image(f, s.image);
    }
}

std::vector<LabeledImage> load_dataset(const std::filesystem::path& root) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root))
        if (entry.is_regular_file() && entry.path().extension() == ".img") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<LabeledImage> out;
    for (const auto& p : files) {
        const auto label_str = p.parent_path().filename().string();
        int label = 0;
        try {
            label = std::stoi(label_str);
        } catch (const std::exception&) {
            throw ValidationError("dataset directory '" + label_str + "' is not an integer class label");
        }
        std::ifstream f(p);
        out.push_back({read_image(f), label});
    }
    return out;
}

}  // namespace sponge
