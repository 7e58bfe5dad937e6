// Positional encoding and the three MLP fields: signed distance d(x), diffuse
// albedo, and specular (albedo, roughness). The SDF forward pass carries
// three tangent streams so that the spatial gradient is itself a node on the
// tape and parameter gradients flow through normals and the Eikonal term.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "srvol/common.hpp"
#include "srvol/tape.hpp"

namespace srvol {

enum class OutputActivation { None, Sigmoid, BoundedSoftplus };

struct MlpSpec {
    std::vector<int> hidden_widths;
    int skip_layer = -1;  // 1-based hidden layer whose input re-concatenates the encoding
    int pe_frequencies = 0;
    OutputActivation output_activation = OutputActivation::None;
    int in_dim = 3;
    int out_dim = 1;

    int encoded_dim() const { return in_dim + 2 * in_dim * pe_frequencies; }

    void validate() const {
        if (hidden_widths.empty()) throw SpecError("MlpSpec: no hidden layers");
        for (int w : hidden_widths)
            if (w <= 0) throw SpecError("MlpSpec: non-positive layer width");
        if (skip_layer == 0 || skip_layer > int(hidden_widths.size()))
            throw SpecError("MlpSpec: skip layer out of range");
        if (pe_frequencies < 0) throw SpecError("MlpSpec: negative frequency count");
    }
};

// ---------------------------------------------------------------- encoding

// concat(x, sin(2^k pi x), cos(2^k pi x)) for k = 0..L-1; length 3 + 6L.
inline std::vector<double> positional_encode(const Vec3& x, int L) {
    std::vector<double> enc = {x.x, x.y, x.z};
    enc.reserve(3 + 6 * L);
    for (int k = 0; k < L; ++k) {
        const double f = std::ldexp(kPi, k);  // 2^k * pi
        enc.push_back(std::sin(f * x.x));
        enc.push_back(std::sin(f * x.y));
        enc.push_back(std::sin(f * x.z));
        enc.push_back(std::cos(f * x.x));
        enc.push_back(std::cos(f * x.y));
        enc.push_back(std::cos(f * x.z));
    }
    return enc;
}

namespace enc_detail {

struct EncodedInput {
    ad::Value value;                 // length 3 + 6L
    std::array<ad::Value, 3> tangent;  // d(enc)/dx_j, only built when requested
    bool has_tangent = false;
};

inline EncodedInput encode_on_tape(ad::Tape& tape, ad::Value x, int L, bool with_tangent) {
    using namespace ad;
    EncodedInput res;
    Value enc = x;
    std::array<Value, 3> tan;
    if (with_tangent) {
        const double ex[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        for (int j = 0; j < 3; ++j) tan[j] = tape.constant(std::span<const double>(ex[j], 3));
    }
    for (int k = 0; k < L; ++k) {
        const double f = std::ldexp(kPi, k);
        Value scaled = x * f;
        Value s = sin(scaled);
        Value c = cos(scaled);
        enc = concat(enc, concat(s, c));
        if (with_tangent) {
            for (int j = 0; j < 3; ++j) {
                double m[3] = {0, 0, 0};
                m[j] = f;
                Value mask = tape.constant(std::span<const double>(m, 3));
                Value ds = c * mask;        // d sin(f x)/dx_j
                Value dc = -(s * mask);     // d cos(f x)/dx_j
                tan[j] = concat(tan[j], concat(ds, dc));
            }
        }
    }
    res.value = enc;
    res.tangent = tan;
    res.has_tangent = with_tangent;
    return res;
}

}  // namespace enc_detail

// ---------------------------------------------------------------- mlp

class Mlp {
public:
    Mlp() = default;

    Mlp(MlpSpec spec, std::string name, ad::ParameterStore& store, Rng& rng)
        : spec_(std::move(spec)), name_(std::move(name)) {
        spec_.validate();
        int in = spec_.encoded_dim();
        for (std::size_t l = 0; l < spec_.hidden_widths.size(); ++l) {
            if (int(l) + 1 == spec_.skip_layer) in += spec_.encoded_dim();
            add_layer(store, rng, int(l), spec_.hidden_widths[l], in);
            in = spec_.hidden_widths[l];
        }
        add_layer(store, rng, int(spec_.hidden_widths.size()), spec_.out_dim, in);
    }

    const MlpSpec& spec() const { return spec_; }
    const std::string& name() const { return name_; }
    std::size_t layer_weight_segment(int l) const { return layers_.at(l).w; }
    std::size_t layer_bias_segment(int l) const { return layers_.at(l).b; }
    int layer_count() const { return int(layers_.size()); }

    // Forward from an already-encoded input vector node.
    ad::Value forward_encoded(ad::Tape& tape, ad::Value enc) const {
        using namespace ad;
        if (tape.length_of(enc) != std::size_t(spec_.encoded_dim()))
            throw SpecError("mlp_forward: encoded input length mismatch for " + name_);
        Value h = enc;
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
            if (int(l) + 1 == spec_.skip_layer) h = concat(h, enc);
            h = softplus(tape.matvec(layers_[l].w, layers_[l].rows, layers_[l].cols, h) +
                         tape.param(layers_[l].b));
        }
        const Layer& out = layers_.back();
        Value y = tape.matvec(out.w, out.rows, out.cols, h) + tape.param(out.b);
        return activate(tape, y);
    }

    ad::Value forward(ad::Tape& tape, const Vec3& x) const {
        const double raw[3] = {x.x, x.y, x.z};
        ad::Value xin = tape.input(std::span<const double>(raw, 3));
        return forward(tape, xin);
    }

    ad::Value forward(ad::Tape& tape, ad::Value xin) const {
        auto enc = enc_detail::encode_on_tape(tape, xin, spec_.pe_frequencies, false);
        return forward_encoded(tape, enc.value);
    }

    struct ValueAndGradient {
        ad::Value value;      // scalar
        ad::Vec3v gradient;   // spatial gradient, nodes on the same tape
    };

    // Scalar-output forward that also builds the gradient w.r.t. the input
    // point, by pushing one tangent stream per spatial axis through every
    // layer. Requires out_dim == 1 and no output activation.
    ValueAndGradient forward_with_gradient(ad::Tape& tape, ad::Value xin) const {
        using namespace ad;
        if (spec_.out_dim != 1 || spec_.output_activation != OutputActivation::None)
            throw SpecError("forward_with_gradient: scalar linear output required");
        auto enc = enc_detail::encode_on_tape(tape, xin, spec_.pe_frequencies, true);
        Value h = enc.value;
        std::array<Value, 3> t = enc.tangent;
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
            if (int(l) + 1 == spec_.skip_layer) {
                h = concat(h, enc.value);
                for (int j = 0; j < 3; ++j) t[j] = concat(t[j], enc.tangent[j]);
            }
            Value pre = tape.matvec(layers_[l].w, layers_[l].rows, layers_[l].cols, h) +
                        tape.param(layers_[l].b);
            Value gate = sigmoid(pre);  // softplus' = sigmoid
            h = softplus(pre);
            for (int j = 0; j < 3; ++j)
                t[j] = gate * tape.matvec(layers_[l].w, layers_[l].rows, layers_[l].cols, t[j]);
        }
        const Layer& out = layers_.back();
        Value y = tape.matvec(out.w, out.rows, out.cols, h) + tape.param(out.b);
        Vec3v grad;
        grad.x = tape.matvec(out.w, out.rows, out.cols, t[0]);
        grad.y = tape.matvec(out.w, out.rows, out.cols, t[1]);
        grad.z = tape.matvec(out.w, out.rows, out.cols, t[2]);
        return {y, grad};
    }

private:
    struct Layer {
        std::size_t w = 0, b = 0;
        int rows = 0, cols = 0;
    };

    void add_layer(ad::ParameterStore& store, Rng& rng, int index, int rows, int cols) {
        Layer layer;
        layer.rows = rows;
        layer.cols = cols;
        layer.w = store.add_segment(name_ + "/W" + std::to_string(index), std::size_t(rows) * cols);
        layer.b = store.add_segment(name_ + "/b" + std::to_string(index), std::size_t(rows));
        const double std_dev = std::sqrt(2.0 / double(cols));
        for (double& v : store.values(layer.w)) v = std_dev * rng.normal();
        layers_.push_back(layer);
    }

    ad::Value activate(ad::Tape& tape, ad::Value y) const {
        switch (spec_.output_activation) {
            case OutputActivation::None: return y;
            case OutputActivation::Sigmoid: return sigmoid(y);
            case OutputActivation::BoundedSoftplus: return min(softplus(y), tape.constant(1.0));
        }
        return y;
    }

    MlpSpec spec_;
    std::string name_;
    std::vector<Layer> layers_;
};

// ---------------------------------------------------------------- field set

struct FieldConfig {
    MlpSpec sdf, diffuse, specular;
    double initial_beta = 0.1;
    double init_sphere_radius = 0.5;
    double roughness_floor = 0.01;

    // Small networks trainable in minutes on one CPU core.
    static FieldConfig desk_default() {
        FieldConfig c;
        c.sdf = {{48, 48, 48, 48}, 3, 6, OutputActivation::None, 3, 1};
        c.diffuse = {{48, 48, 48}, -1, 12, OutputActivation::Sigmoid, 3, 3};
        c.specular = {{32, 32}, -1, 6, OutputActivation::Sigmoid, 3, 2};
        return c;
    }

    // Full-size architecture: 5x512 SDF (skip at 4, PE 6), 4x512 diffuse
    // (PE 12), 3x256 specular (PE 6).
    static FieldConfig paper_scale() {
        FieldConfig c;
        c.sdf = {{512, 512, 512, 512, 512}, 4, 6, OutputActivation::None, 3, 1};
        c.diffuse = {{512, 512, 512, 512}, -1, 12, OutputActivation::Sigmoid, 3, 3};
        c.specular = {{256, 256, 256}, -1, 6, OutputActivation::Sigmoid, 3, 2};
        return c;
    }
};

struct SdfSample {
    ad::Value value;
    ad::Vec3v gradient;
    Vec3 normal;          // normalized primal gradient (view-independent)
    bool degenerate = false;
};

struct BrdfSample {
    ad::Vec3v diffuse;
    ad::Value specular_albedo;
    ad::Value roughness;
};

class FieldSet {
public:
    FieldSet(const FieldConfig& config, ad::ParameterStore& store, Rng& rng)
        : config_(config),
          sdf_(config.sdf, "sdf", store, rng),
          diffuse_(config.diffuse, "diffuse", store, rng),
          specular_(config.specular, "specular", store, rng),
          store_(&store) {
        alpha_raw_ = store.add_segment("density/alpha_raw", 1);
        beta_raw_ = store.add_segment("density/beta_raw", 1);
        store.values(beta_raw_)[0] = std::log(config.initial_beta);
        store.values(alpha_raw_)[0] = std::log(1.0 / config.initial_beta);
        sphere_initialize(rng);
        // Start nearly diffuse: a random specular head averages albedo ~0.5,
        // and at colocated retro-reflection that GGX lobe outshines the
        // diffuse term severalfold. The specular net trains at a tiny
        // learning rate, so an over-bright start is compensated by killing
        // density (the geometry collapses) instead. Bias the albedo output
        // low (sigmoid(-2) ~ 0.12) and let refinement grow it.
        {
            const std::size_t bias = specular_.layer_bias_segment(specular_.layer_count() - 1);
            store.values(bias)[0] = -2.0;
        }
    }

    const FieldConfig& config() const { return config_; }
    const Mlp& sdf_mlp() const { return sdf_; }
    const Mlp& diffuse_mlp() const { return diffuse_; }
    const Mlp& specular_mlp() const { return specular_; }
    std::size_t alpha_segment() const { return alpha_raw_; }
    std::size_t beta_segment() const { return beta_raw_; }
    ad::ParameterStore& store() const { return *store_; }

    double alpha() const { return std::exp(store_->values(alpha_raw_)[0]); }
    double beta() const { return std::exp(store_->values(beta_raw_)[0]); }

    SdfSample sdf(ad::Tape& tape, const Vec3& x) const {
        const double raw[3] = {x.x, x.y, x.z};
        return sdf(tape, tape.input(std::span<const double>(raw, 3)));
    }

    SdfSample sdf(ad::Tape& tape, ad::Value xin) const {
        SdfSample s;
        auto vg = sdf_.forward_with_gradient(tape, xin);
        s.value = vg.value;
        s.gradient = vg.gradient;
        const Vec3 g = {ad::value_of(vg.gradient.x), ad::value_of(vg.gradient.y),
                        ad::value_of(vg.gradient.z)};
        const double n = norm(g);
        if (n < 1e-12) {
            s.degenerate = true;
            s.normal = {0, 0, 0};
        } else {
            s.normal = g / n;
        }
        return s;
    }

    // SDF value only (no tangent streams); used where normals are not needed.
    ad::Value sdf_value(ad::Tape& tape, const Vec3& x) const { return sdf_.forward(tape, x); }

    BrdfSample brdf(ad::Tape& tape, const Vec3& x) const {
        const double raw[3] = {x.x, x.y, x.z};
        ad::Value xin = tape.input(std::span<const double>(raw, 3));
        return brdf(tape, xin, tape.input(std::span<const double>(raw, 3)));
    }

    // Separate input nodes for the two BRDF nets keep their graphs disjoint.
    BrdfSample brdf(ad::Tape& tape, ad::Value x_diffuse, ad::Value x_specular) const {
        using namespace ad;
        BrdfSample b;
        Value d3 = diffuse_.forward(tape, x_diffuse);
        b.diffuse = {slice(d3, 0, 1), slice(d3, 1, 1), slice(d3, 2, 1)};
        Value sp = specular_.forward(tape, x_specular);
        b.specular_albedo = slice(sp, 0, 1);
        const double floor = config_.roughness_floor;
        b.roughness = slice(sp, 1, 1) * (1.0 - floor) + floor;
        return b;
    }

private:
    // Fit the final SDF layer by ridge regression so that d(x) ~ |x| - r
    // before training. The first layer's positional-encoding columns are
    // zeroed so the initial field is smooth and radial-ish.
    void sphere_initialize(Rng& rng) {
        const int enc_dim = config_.sdf.encoded_dim();
        {
            // Zero the PE columns and rescale the raw-coordinate columns so
            // the first-layer units saturate within the bounding box; nearly
            // linear features cannot express |x|.
            auto w0 = store_->values(sdf_.layer_weight_segment(0));
            auto b0 = store_->values(sdf_.layer_bias_segment(0));
            const int rows = config_.sdf.hidden_widths[0];
            for (int r = 0; r < rows; ++r) {
                // hinge-like units at varied scales and offsets
                const double scale = 1.5 * std::exp(rng.uniform(0.0, 1.8));
                Vec3 dir = normalized(Vec3{rng.normal(), rng.normal(), rng.normal()});
                w0[std::size_t(r) * enc_dim + 0] = scale * dir.x;
                w0[std::size_t(r) * enc_dim + 1] = scale * dir.y;
                w0[std::size_t(r) * enc_dim + 2] = scale * dir.z;
                for (int c = 3; c < enc_dim; ++c) w0[std::size_t(r) * enc_dim + c] = 0.0;
                b0[r] = rng.uniform(-2.0, 2.0);
            }
        }
        // also zero PE columns re-injected at the skip layer
        if (config_.sdf.skip_layer > 0) {
            const int l = config_.sdf.skip_layer - 1;
            auto wl = store_->values(sdf_.layer_weight_segment(l));
            const int rows = config_.sdf.hidden_widths[l];
            const int cols = (l == 0 ? 0 : config_.sdf.hidden_widths[l - 1]) + enc_dim;
            const int base = cols - enc_dim;
            for (int r = 0; r < rows; ++r)
                for (int c = base + 3; c < cols; ++c) wl[std::size_t(r) * cols + c] = 0.0;
        }

        const int feat_dim = config_.sdf.hidden_widths.back();
        const int n_features = feat_dim + 1;  // + bias
        const int n_points = 4096;

        // features = last hidden activations; collected by re-running one graph
        ad::Tape tape(store_);
        double raw[3] = {0, 0, 0};
        ad::Value xin = tape.input(std::span<const double>(raw, 3));
        ad::Value feats = hidden_features(tape, xin);

        std::vector<double> ata(std::size_t(n_features) * n_features, 0.0);
        std::vector<double> atb(n_features, 0.0);
        for (int i = 0; i < n_points; ++i) {
            Vec3 x;
            if (i % 3 == 0) {
                do {
                    x = {rng.uniform(-1.3, 1.3), rng.uniform(-1.3, 1.3), rng.uniform(-1.3, 1.3)};
                } while (norm(x) > 1.3);
            } else if (i % 3 == 1) {
                Vec3 dir = {rng.normal(), rng.normal(), rng.normal()};
                x = normalized(dir) * (config_.init_sphere_radius + 0.25 * rng.normal());
            } else {
                Vec3 dir = {rng.normal(), rng.normal(), rng.normal()};
                x = normalized(dir) * std::abs(0.2 * rng.normal());
            }
            const double target = norm(x) - config_.init_sphere_radius;
            const double xr[3] = {x.x, x.y, x.z};
            tape.set_input(xin, std::span<const double>(xr, 3));
            tape.forward();
            auto f = tape.values_of(feats);
            std::vector<double> row(f.begin(), f.end());
            row.push_back(1.0);
            for (int a = 0; a < n_features; ++a) {
                atb[a] += row[a] * target;
                for (int b = a; b < n_features; ++b)
                    ata[std::size_t(a) * n_features + b] += row[a] * row[b];
            }
        }
        for (int a = 0; a < n_features; ++a) {
            for (int b = 0; b < a; ++b)
                ata[std::size_t(a) * n_features + b] = ata[std::size_t(b) * n_features + a];
            ata[std::size_t(a) * n_features + a] += 1e-6 * n_points;
        }
        std::vector<double> sol = solve_spd(ata, atb, n_features);

        const int out_layer = sdf_.layer_count() - 1;
        auto w = store_->values(sdf_.layer_weight_segment(out_layer));
        auto b = store_->values(sdf_.layer_bias_segment(out_layer));
        for (int c = 0; c < feat_dim; ++c) w[c] = sol[c];
        b[0] = sol[feat_dim];

        sphere_refine(rng);
    }

    // Short Adam pass fitting d(x) to the analytic sphere SDF; the ridge fit
    // above only adjusts the last layer and typically leaves ~0.07 residual.
    void sphere_refine(Rng& rng) {
        std::vector<std::size_t> segs;
        for (int l = 0; l < sdf_.layer_count(); ++l) {
            segs.push_back(sdf_.layer_weight_segment(l));
            segs.push_back(sdf_.layer_bias_segment(l));
        }
        const std::size_t n = store_->size();
        std::vector<double> m(n, 0.0), v(n, 0.0);
        const double lr = 2e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const int steps = 800, batch = 64;
        for (int step = 1; step <= steps; ++step) {
            store_->zero_grads();
            double loss = 0.0;
            for (int i = 0; i < batch; ++i) {
                Vec3 dir = normalized(Vec3{rng.normal(), rng.normal(), rng.normal()});
                double r;
                switch (i % 4) {
                    case 0: r = std::abs(0.25 * rng.normal()); break;
                    case 1: r = rng.uniform(0.0, 1.3); break;
                    default:
                        r = std::abs(config_.init_sphere_radius + 0.12 * rng.normal());
                        break;
                }
                const Vec3 x = dir * r;
                ad::Tape tape(store_);
                ad::Value d = sdf_.forward(tape, x);
                const double target = r - config_.init_sphere_radius;
                const double resid = ad::value_of(d) - target;
                loss += resid * resid;
                tape.backward(d, 2.0 * resid / batch);
            }
            const double c1 = 1.0 - std::pow(b1, step), c2 = 1.0 - std::pow(b2, step);
            for (std::size_t seg : segs) {
                const auto& s = store_->segment(seg);
                double* vals = store_->raw_values().data() + s.offset;
                double* grads = store_->raw_grads().data() + s.offset;
                for (std::size_t k = 0; k < s.size; ++k) {
                    m[s.offset + k] = b1 * m[s.offset + k] + (1 - b1) * grads[k];
                    v[s.offset + k] = b2 * v[s.offset + k] + (1 - b2) * grads[k] * grads[k];
                    vals[k] -= lr * (m[s.offset + k] / c1) /
                               (std::sqrt(v[s.offset + k] / c2) + eps);
                }
            }
            (void)loss;
        }
        store_->zero_grads();
    }

    ad::Value hidden_features(ad::Tape& tape, ad::Value xin) const {
        using namespace ad;
        auto enc = enc_detail::encode_on_tape(tape, xin, config_.sdf.pe_frequencies, false);
        Value h = enc.value;
        for (int l = 0; l + 1 < sdf_.layer_count(); ++l) {
            if (l + 1 == config_.sdf.skip_layer) h = concat(h, enc.value);
            const int rows = config_.sdf.hidden_widths[l];
            const int cols = int(tape.length_of(h));
            h = softplus(tape.matvec(sdf_.layer_weight_segment(l), rows, cols, h) +
                         tape.param(sdf_.layer_bias_segment(l)));
        }
        return h;
    }

    // Cholesky solve of a symmetric positive definite system.
    static std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, int n) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) {
                double s = a[std::size_t(i) * n + j];
                for (int k = 0; k < j; ++k) s -= a[std::size_t(i) * n + k] * a[std::size_t(j) * n + k];
                if (i == j) {
                    if (s <= 0.0) throw SpecError("sphere init: singular normal equations");
                    a[std::size_t(i) * n + j] = std::sqrt(s);
                } else {
                    a[std::size_t(i) * n + j] = s / a[std::size_t(j) * n + j];
                }
            }
        }
        for (int i = 0; i < n; ++i) {
            double s = b[i];
            for (int k = 0; k < i; ++k) s -= a[std::size_t(i) * n + k] * b[k];
            b[i] = s / a[std::size_t(i) * n + i];
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = b[i];
            for (int k = i + 1; k < n; ++k) s -= a[std::size_t(k) * n + i] * b[k];
            b[i] = s / a[std::size_t(i) * n + i];
        }
        return b;
    }

    FieldConfig config_;
    Mlp sdf_, diffuse_, specular_;
    ad::ParameterStore* store_;
    std::size_t alpha_raw_ = 0, beta_raw_ = 0;
};

}  // namespace srvol
