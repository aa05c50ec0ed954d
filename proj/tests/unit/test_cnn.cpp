#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "sponge/cnn.hpp"

using namespace sponge;

namespace {

// One input pixel feeding a ReLU layer with the given weights, then a 1-unit
// output layer.
CnnModel one_pixel_model(const std::vector<double>& weights, double bias = 0.0) {
    CnnModel m;
    m.channels = m.height = m.width = 1;
    m.classes = 1;
    CnnLayer hidden;
    hidden.name = "hidden";
    hidden.in_channels = 1;
    hidden.out_channels = weights.size();
    hidden.relu = true;
    hidden.weights = Matrix(weights.size(), 1);
    hidden.weights.data = weights;
    hidden.bias.assign(weights.size(), bias);
    CnnLayer out;
    out.name = "out";
    out.in_channels = weights.size();
    out.out_channels = 1;
    out.weights = Matrix(1, weights.size(), 1.0);
    out.bias = {0.0};
    m.layers = {hidden, out};
    m.validate();
    return m;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        norm += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
}

}  // namespace

TEST_CASE("all-zero image with zero biases activates nothing") {
    auto m = CnnModel::reference();
    for (auto& l : m.layers) std::fill(l.bias.begin(), l.bias.end(), 0.0);
    const auto r = cnn_forward(m, Image(1, 8, 8, 0.0));
    CHECK(r.density.post_relu_density == 0.0);
    CHECK(r.density.overall_density == 0.0);
}

TEST_CASE("post-ReLU density counts positive activations") {
    const auto m = one_pixel_model({-1.0, 0.0, 2.0, 3.0});
    const auto r = cnn_forward(m, Image(1, 1, 1, 1.0));
    CHECK(r.density.post_relu_density == doctest::Approx(0.5));
    REQUIRE(r.density.per_layer.size() == 3);
    CHECK(r.density.per_layer[1] == doctest::Approx(0.5));
}

TEST_CASE("reference CNN densities on the all-ones image") {
    const auto r = cnn_forward(CnnModel::reference(), Image(1, 8, 8, 1.0));
    CHECK(r.density.per_layer[0] == 1.0);
    CHECK(r.density.per_layer[1] == doctest::Approx(0.75));
    CHECK(r.density.post_relu_density == doctest::Approx(0.75));
    CHECK(r.density.overall_density == doctest::Approx(182.0 / 218.0));
}

TEST_CASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(cnn_forward(CnnModel::reference(), Image(1, 7, 8)), ValidationError);
}

TEST_CASE("IBP bound") {
    SUBCASE("negative weights with zero bias are provably off") {
        const auto r = ibp_max_density(one_pixel_model({-1.0, -2.0}));
        CHECK(r.post_relu_density == 0.0);
    }
    SUBCASE("identity layer can be fully dense") {
        CHECK(ibp_max_density(one_pixel_model({1.0})).post_relu_density == 1.0);
    }
    SUBCASE("reference model: the never-firing filter is excluded") {
        const auto r = ibp_max_density(CnnModel::reference());
        CHECK(r.post_relu_density == doctest::Approx(0.75));
        CHECK(r.overall_density == doctest::Approx(182.0 / 218.0));
    }
    SUBCASE("bound holds on random inputs") {
        const auto model = CnnModel::reference();
        const auto bound = ibp_max_density(model);
        std::mt19937_64 rng(2);
        for (int i = 0; i < 300; ++i) {
            const auto d = cnn_forward(model, uniform_random_image(rng)).density;
            CHECK(d.overall_density <= bound.overall_density);
            CHECK(d.post_relu_density <= bound.post_relu_density);
            for (std::size_t k = 0; k < d.per_layer.size(); ++k) CHECK(d.per_layer[k] <= bound.per_layer[k]);
        }
    }
    CHECK_THROWS(ibp_max_density(CnnModel::reference(), 1.0, 0.0));
}

TEST_CASE("activation-norm gradient matches central differences") {
    const auto model = CnnModel::reference();
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        auto img = uniform_random_image(rng);
        std::vector<double> grad(img.size()), dummy(img.size());
        activation_norm_objective(model, img, grad);
        std::vector<double> fd(img.size());
        const double h = 1e-6;
        for (std::size_t i = 0; i < img.size(); ++i) {
            const double x = img.pixels[i];
            img.pixels[i] = x + h;
            const double up = activation_norm_objective(model, img, dummy);
            img.pixels[i] = x - h;
            const double down = activation_norm_objective(model, img, dummy);
            img.pixels[i] = x;
            fd[i] = (up - down) / (2 * h);
        }
        CHECK(relative_error(grad, fd) < 1e-4);
    }
}

TEST_CASE("class density profile") {
    const auto model = CnnModel::reference();
    std::mt19937_64 rng(4);
    SUBCASE("single class gives its mean") {
        std::vector<LabeledImage> ds;
        double sum = 0.0;
        for (int i = 0; i < 5; ++i) {
            ds.push_back({uniform_random_image(rng), 3});
            sum += cnn_forward(model, ds.back().image).density.overall_density;
        }
        const auto p = class_density_profile(model, ds);
        REQUIRE(p.size() == 1);
        CHECK(p[0].label == 3);
        CHECK(p[0].count == 5);
        CHECK(p[0].mean_overall == doctest::Approx(sum / 5));
    }
    SUBCASE("identical images have zero variance") {
        const auto img = uniform_random_image(rng);
        const auto p = class_density_profile(model, {{img, 1}, {img, 1}});
        CHECK(p[0].variance_overall == doctest::Approx(0.0));
    }
    SUBCASE("denser class ranks first") {
        std::vector<LabeledImage> ds;
        for (int i = 0; i < 10; ++i) {
            ds.push_back({Image(1, 8, 8, 0.02 * i), 0});
            ds.push_back({Image(1, 8, 8, 0.8 + 0.02 * i), 1});
        }
        const auto p = class_density_profile(model, ds);
        REQUIRE(p.size() == 2);
        CHECK(p[0].label == 1);
        CHECK(p[0].mean_overall > p[1].mean_overall);
    }
}

TEST_CASE("natural-like images sit between random and the bound") {
    const auto model = CnnModel::reference();
    std::mt19937_64 rng(8);
    double natural = 0.0, random = 0.0;
    const auto ds = natural_like_dataset(20, 10, 5);
    for (const auto& s : ds) {
        for (double p : s.image.pixels) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
        natural += cnn_forward(model, s.image).density.overall_density;
    }
    for (std::size_t i = 0; i < ds.size(); ++i)
        random += cnn_forward(model, uniform_random_image(rng)).density.overall_density;
    CHECK(natural > random);
}

TEST_CASE("model, image and dataset persistence") {
    const auto model = CnnModel::reference();
    std::stringstream ss;
    model.save(ss);
    const auto back = CnnModel::load(ss);
    std::mt19937_64 rng(1);
    const auto img = uniform_random_image(rng);
    CHECK(cnn_forward(back, img).logits == cnn_forward(model, img).logits);

    std::stringstream is;
    write_image(is, img);
    CHECK(read_image(is) == img);

    const auto dir = std::filesystem::temp_directory_path() / "sponge_cnn_dataset_test";
    std::filesystem::remove_all(dir);
    const auto ds = natural_like_dataset(2, 3, 9);
    save_dataset(dir, ds);
    const auto loaded = load_dataset(dir);
    CHECK(loaded.size() == ds.size());
    std::filesystem::remove_all(dir);
}
