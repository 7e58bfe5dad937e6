// Staged optimization: Adam with an exponential learning-rate schedule, the
// three-stage pipeline (Dirac initialization, PSF super-resolution with mask
// loss, fixed-geometry BRDF refinement), silhouette derivation, binary
// checkpoints, and the metrics log.
#pragma once

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "srvol/imaging.hpp"
#include "srvol/objective.hpp"

namespace srvol {

// ---------------------------------------------------------------- config

struct TrainConfig {
    int epochs = 300;             // schedule length (paper 2000)
    double lr_main_start = 5e-4;
    double lr_main_end = 5e-5;
    double lr_specular = 1e-5;    // constant, not scheduled
    LossWeights weights{0.1, 0.1};
    int m_samples = 32;
    int n_psf = 9;
    int batch_init = 256;         // pixels per iteration, init stage (paper 2000)
    int batch_inside = 100;       // SR stage, inside the silhouette (paper 100)
    int batch_outside = 64;       // SR stage, outside (paper ~500)
    int eikonal_batch = 128;      // regularizer points (paper 1000)
    int refine_batch = 128;       // BRDF refinement (paper 700)
    std::uint64_t seed = 1;
    Vec3 background{0, 0, 0};
    double far_plane = 4.0;
    double psf_sigma = 0.5;       // LR pixels
    // The density scalars (alpha, beta) are two parameters driven by weak,
    // heavily averaged gradients; at the main learning rate beta barely moves
    // within a short schedule and the surface stays artificially soft. Their
    // learning rate is lr_main * lr_density_mult.
    double lr_density_mult = 10.0;

    void validate() const {
        weights.validate();
        if (epochs < 1 || m_samples < 2 || n_psf < 1) throw SpecError("TrainConfig: counts must be >= 1");
        if (batch_init < 1 || batch_inside < 1 || batch_outside < 1 || eikonal_batch < 1 ||
            refine_batch < 1)
            throw SpecError("TrainConfig: batch sizes must be >= 1");
        if (lr_main_start <= 0.0 || lr_main_end <= 0.0 || lr_specular <= 0.0 ||
            lr_density_mult <= 0.0)
            throw SpecError("TrainConfig: learning rates must be positive");
    }

    // FNV-1a over the textual field dump; stable across runs on one platform
    std::uint64_t hash() const {
        char buf[512];
        const int n = std::snprintf(
            buf, sizeof buf, "%d|%.17g|%.17g|%.17g|%.17g|%.17g|%d|%d|%d|%d|%d|%d|%d|%llu|%.17g|%.17g|%.17g|%.17g|%.17g|%.17g",
            epochs, lr_main_start, lr_main_end, lr_specular, weights.lambda1, weights.lambda2,
            m_samples, n_psf, batch_init, batch_inside, batch_outside, eikonal_batch,
            refine_batch, static_cast<unsigned long long>(seed), background.x, background.y,
            background.z, far_plane, psf_sigma, lr_density_mult);
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (int i = 0; i < n; ++i) {
            h ^= std::uint8_t(buf[i]);
            h *= 0x100000001b3ULL;
        }
        return h;
    }
};

// lr = lr_start * (lr_end / lr_start)^(epoch / total)
inline double lr_schedule(int epoch, int total_epochs, double lr_start, double lr_end) {
    if (total_epochs < 1) throw SpecError("lr_schedule: total_epochs must be >= 1");
    if (epoch < 0 || epoch > total_epochs) throw SpecError("lr_schedule: epoch out of range");
    if (lr_start <= 0.0 || lr_end <= 0.0) throw SpecError("lr_schedule: rates must be positive");
    return lr_start * std::pow(lr_end / lr_start, double(epoch) / double(total_epochs));
}

// ---------------------------------------------------------------- adam

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<double> m, v;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected Adam update with a per-parameter learning rate (0 freezes a
// parameter completely, moments included). Any non-finite gradient skips the
// whole step and returns false.
inline bool adam_step(ad::ParameterStore& params, AdamState& state,
                      const std::vector<double>& lr) {
    std::vector<double>& vals = params.raw_values();
    std::vector<double>& grads = params.raw_grads();
    if (state.m.size() != vals.size() || lr.size() != vals.size())
        throw SpecError("adam_step: state shape mismatch");

    for (std::size_t i = 0; i < vals.size(); ++i)
        if (lr[i] != 0.0 && !std::isfinite(grads[i])) return false;

    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, double(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (lr[i] == 0.0) continue;
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        vals[i] -= lr[i] * mhat / (std::sqrt(vhat) + state.eps);
    }
    return true;
}

// ---------------------------------------------------------------- checkpoint

inline constexpr char kCheckpointMagic[4] = {'S', 'R', 'V', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::uint64_t config_hash = 0;
    std::uint64_t epoch = 0;
    std::uint32_t stage = 0;  // last completed stage (Stage enum value)
};

namespace training_detail {

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
void get(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
}
inline void put_doubles(std::ofstream& out, const double* p, std::size_t n) {
    out.write(reinterpret_cast<const char*>(p), std::streamsize(n * sizeof(double)));
}
inline void get_doubles(std::ifstream& in, double* p, std::size_t n) {
    in.read(reinterpret_cast<char*>(p), std::streamsize(n * sizeof(double)));
}

}  // namespace training_detail

inline void save_checkpoint(const std::filesystem::path& path, const ad::ParameterStore& store,
                            const AdamState& adam, const CheckpointMeta& meta) {
    namespace td = training_detail;
    if (adam.m.size() != store.size()) throw SpecError("save_checkpoint: adam state mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kCheckpointMagic, 4);
    td::put(out, kCheckpointVersion);
    td::put(out, meta.config_hash);
    td::put(out, meta.epoch);
    td::put(out, meta.stage);
    td::put(out, adam.t);
    td::put(out, adam.beta1);
    td::put(out, adam.beta2);
    td::put(out, adam.eps);
    const std::uint64_t n_segments = store.segment_count();
    td::put(out, n_segments);
    for (std::size_t s = 0; s < n_segments; ++s) {
        const auto& seg = store.segment(s);
        const std::uint32_t name_len = std::uint32_t(seg.name.size());
        td::put(out, name_len);
        out.write(seg.name.data(), name_len);
        const std::uint64_t size = seg.size;
        td::put(out, size);
        td::put_doubles(out, store.raw_values().data() + seg.offset, seg.size);
        td::put_doubles(out, adam.m.data() + seg.offset, seg.size);
        td::put_doubles(out, adam.v.data() + seg.offset, seg.size);
    }
    if (!out) throw IoError("failed while writing " + path.string());
}

// The store must already hold identically named and sized segments (i.e. the
// same field configuration); values and optimizer moments are overwritten.
inline CheckpointMeta load_checkpoint(const std::filesystem::path& path,
                                      ad::ParameterStore& store, AdamState& adam) {
    namespace td = training_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError(path.string() + " is not a checkpoint file");
    std::uint32_t version = 0;
    td::get(in, version);
    if (version != kCheckpointVersion)
        throw IoError(path.string() + ": unsupported checkpoint version");

    CheckpointMeta meta;
    td::get(in, meta.config_hash);
    td::get(in, meta.epoch);
    td::get(in, meta.stage);
    if (adam.m.size() != store.size()) adam = AdamState(store.size());
    td::get(in, adam.t);
    td::get(in, adam.beta1);
    td::get(in, adam.beta2);
    td::get(in, adam.eps);
    std::uint64_t n_segments = 0;
    td::get(in, n_segments);
    if (n_segments != store.segment_count())
        throw IoError(path.string() + ": segment count does not match the model");
    for (std::uint64_t s = 0; s < n_segments; ++s) {
        std::uint32_t name_len = 0;
        td::get(in, name_len);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint64_t size = 0;
        td::get(in, size);
        if (!store.has_segment(name))
            throw IoError(path.string() + ": unknown segment " + name);
        const auto& seg = store.segment(store.segment_id(name));
        if (seg.size != size)
            throw IoError(path.string() + ": segment " + name + " has the wrong size");
        td::get_doubles(in, store.raw_values().data() + seg.offset, seg.size);
        td::get_doubles(in, adam.m.data() + seg.offset, seg.size);
        td::get_doubles(in, adam.v.data() + seg.offset, seg.size);
    }
    if (!in) throw IoError(path.string() + ": truncated checkpoint");
    return meta;
}

// ---------------------------------------------------------------- metrics

struct EpochLog {
    int epoch = 0;
    std::string stage;
    double rgb = 0.0, eikonal = 0.0, mask = 0.0, total = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<EpochLog>& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,stage,rgb,eikonal,mask,total,lr,wall_seconds\n";
    out.precision(12);
    for (const EpochLog& e : log)
        out << e.epoch << "," << e.stage << "," << e.rgb << "," << e.eikonal << "," << e.mask
            << "," << e.total << "," << e.lr << "," << e.wall_seconds << "\n";
    if (!out) throw IoError("failed while writing " + path.string());
}

// ---------------------------------------------------------------- dataset view

struct TrainView {
    Camera camera;   // LR intrinsics
    Image rgb;       // LR linear observation
    Image mask;      // empty until silhouettes are given or derived
    LightSpec light; // colocated by default
};

// ---------------------------------------------------------------- silhouettes

// Binary silhouettes from the current geometry: Dirac render, mask = W > t.
inline std::vector<Image> derive_silhouettes(const FieldSet& fields,
                                             const std::vector<Camera>& cameras,
                                             const TrainConfig& cfg, double threshold = 0.5) {
    RenderSettings settings;
    settings.kernel = {PsfKind::Dirac, cfg.psf_sigma};
    settings.m_samples = cfg.m_samples;
    settings.clip_to_unit_sphere = true;
    settings.background = cfg.background;
    std::vector<Image> masks;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        FrameRender frame =
            render_image(fields, cameras[i], LightSpec{}, settings, cfg.seed, 0x517F0000ULL + i);
        Image mask(cameras[i].width, cameras[i].height, 1);
        for (std::size_t j = 0; j < mask.data.size(); ++j)
            mask.data[j] = frame.weight.data[j] > threshold ? 1.0 : 0.0;
        masks.push_back(std::move(mask));
    }
    return masks;
}

// ---------------------------------------------------------------- trainer

enum class Stage : std::uint32_t { None = 0, InitDirac = 1, SrGaussian = 2, BrdfRefine = 3 };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::InitDirac: return "init_dirac";
        case Stage::SrGaussian: return "sr_gaussian";
        case Stage::BrdfRefine: return "brdf_refine";
        default: return "none";
    }
}

class Trainer {
public:
    Trainer(FieldSet& fields, const TrainConfig& cfg)
        : fields_(&fields), cfg_(cfg), adam_(fields.store().size()) {
        cfg_.validate();
    }

    const TrainConfig& config() const { return cfg_; }
    Stage completed_stage() const { return completed_; }
    int epoch() const { return epoch_; }
    AdamState& adam() { return adam_; }
    const std::vector<EpochLog>& log() const { return log_; }
    const std::vector<std::string>& incidents() const { return incidents_; }

    // Restore trainer progress from checkpoint metadata.
    void restore(const CheckpointMeta& meta) {
        completed_ = Stage(meta.stage);
        epoch_ = int(meta.epoch);
    }
    CheckpointMeta meta() const {
        return {cfg_.hash(), std::uint64_t(epoch_), std::uint32_t(completed_)};
    }

    void run_stage(Stage stage, const std::vector<TrainView>& views, int epochs,
                   bool force = false) {
        if (stage == Stage::None) throw SpecError("run_stage: no stage given");
        if (views.empty()) throw SpecError("run_stage: no training views");
        // a stage may continue where it left off (resume) or follow its predecessor
        const bool in_order = std::uint32_t(stage) == std::uint32_t(completed_) + 1 ||
                              stage == completed_;
        if (!force && !in_order)
            throw StateError(std::string("stage ordering violation: ") + stage_name(stage) +
                             " after " + stage_name(completed_));
        if (stage == Stage::SrGaussian)
            for (const TrainView& v : views)
                if (v.mask.data.empty())
                    throw StateError("sr_gaussian requires masks (given or derived)");

        for (int i = 0; i < epochs; ++i) {
            run_epoch(stage, views);
            ++epoch_;
        }
        completed_ = stage;
    }

private:
    struct PixelRef {
        int view = 0;
        int x = 0, y = 0;
    };

    RenderSettings stage_settings(Stage stage) const {
        RenderSettings s;
        s.m_samples = cfg_.m_samples;
        s.n_psf = cfg_.n_psf;
        s.background = cfg_.background;
        s.far_plane = cfg_.far_plane;
        if (stage == Stage::InitDirac) {
            s.kernel = {PsfKind::Dirac, cfg_.psf_sigma};
            s.clip_to_unit_sphere = false;  // far-plane background, no masks yet
        } else {
            s.kernel = {PsfKind::Gaussian, cfg_.psf_sigma};
            s.clip_to_unit_sphere = true;   // truncate the integral to the hull
        }
        return s;
    }

    // per-parameter learning rate for this stage and epoch
    std::vector<double> stage_lr(Stage stage, double lr_main) const {
        ad::ParameterStore& store = fields_->store();
        std::vector<double> lr(store.size(), lr_main);
        for (std::size_t s = 0; s < store.segment_count(); ++s) {
            const auto& seg = store.segment(s);
            const bool specular = seg.name.rfind("specular/", 0) == 0;
            const bool density = seg.name.rfind("density/", 0) == 0;
            const bool geometry = seg.name.rfind("sdf/", 0) == 0 || density;
            double v = specular ? cfg_.lr_specular : lr_main;
            if (density) v = lr_main * cfg_.lr_density_mult;
            if (stage == Stage::BrdfRefine && geometry) v = 0.0;  // frozen, bitwise
            for (std::size_t i = 0; i < seg.size; ++i) lr[seg.offset + i] = v;
        }
        return lr;
    }

    std::vector<PixelRef> draw_batch(const std::vector<TrainView>& views, int count, Rng& rng,
                                     int want_mask) const {
        // want_mask: -1 any pixel, 0 outside silhouette, 1 inside
        std::vector<PixelRef> batch;
        batch.reserve(count);
        int guard = count * 64;
        while (int(batch.size()) < count && guard-- > 0) {
            const int v = int(rng.uniform_int(views.size()));
            const TrainView& view = views[v];
            const int x = int(rng.uniform_int(std::uint64_t(view.camera.width)));
            const int y = int(rng.uniform_int(std::uint64_t(view.camera.height)));
            if (want_mask >= 0 && int(view.mask.at(x, y, 0) > 0.5) != want_mask) continue;
            batch.push_back({v, x, y});
        }
        return batch;  // may come up short if one class is (nearly) absent
    }

    void run_epoch(Stage stage, const std::vector<TrainView>& views) {
        using namespace ad;
        const auto t0 = std::chrono::steady_clock::now();
        ad::ParameterStore& store = fields_->store();
        const RenderSettings settings = stage_settings(stage);
        const double lr_main =
            lr_schedule(std::min(epoch_, cfg_.epochs), cfg_.epochs, cfg_.lr_main_start,
                        cfg_.lr_main_end);
        const std::vector<double> lr = stage_lr(stage, lr_main);

        std::size_t total_pixels = 0;
        for (const TrainView& v : views)
            total_pixels += std::size_t(v.camera.width) * v.camera.height;
        const int batch = stage == Stage::InitDirac   ? cfg_.batch_init
                          : stage == Stage::SrGaussian ? cfg_.batch_inside
                                                       : cfg_.refine_batch;
        const int iterations = std::max(1, int(total_pixels / std::size_t(batch)));

        double sum_rgb = 0.0, sum_eik = 0.0, sum_mask = 0.0, sum_total = 0.0;
        for (int iter = 0; iter < iterations; ++iter) {
            Tape tape(&store);
            Rng pick = Rng::substream(cfg_.seed, 0xBA7C, std::uint64_t(epoch_), std::uint64_t(iter));

            std::vector<PixelRef> batch_px = draw_batch(
                views, batch, pick, stage == Stage::SrGaussian ? 1 : -1);
            std::vector<PixelRef> outside_px;
            if (stage == Stage::SrGaussian)
                outside_px = draw_batch(views, cfg_.batch_outside, pick, 0);

            std::vector<Vec3v> rendered;
            std::vector<Vec3> observed;
            std::vector<Value> weight_sums;
            std::vector<double> mask_targets;
            std::vector<Vec3> near_surface;

            const auto render_one = [&](const PixelRef& ref) {
                const TrainView& view = views[ref.view];
                const std::uint64_t key =
                    (std::uint64_t(ref.view) << 32) |
                    (std::uint64_t(ref.y) * view.camera.width + ref.x);
                Rng rng = Rng::substream(cfg_.seed, key, 2 + std::uint64_t(iter),
                                         std::uint64_t(epoch_));
                PixelRender r = render_pixel_psf(tape, *fields_, view.camera,
                                                 {ref.x + 0.5, ref.y + 0.5}, view.light,
                                                 settings, rng);
                rendered.push_back(r.rgb);
                observed.push_back({view.rgb.at(ref.x, ref.y, 0), view.rgb.at(ref.x, ref.y, 1),
                                    view.rgb.at(ref.x, ref.y, 2)});
                weight_sums.push_back(r.weight.valid() ? r.weight : tape.constant(0.0));
                if (!view.mask.data.empty())
                    mask_targets.push_back(view.mask.at(ref.x, ref.y, 0) > 0.5 ? 1.0 : 0.0);
                if (!r.geometry.background) {
                    Ray center;
                    if (pixel_ray(view.camera, {ref.x + 0.5, ref.y + 0.5},
                                  settings.clip_to_unit_sphere, settings.far_plane, center))
                        near_surface.push_back(center.at(r.geometry.depth));
                }
            };
            for (const PixelRef& ref : batch_px) render_one(ref);
            if (rendered.empty()) continue;  // degenerate batch (no eligible pixels)
            const std::size_t n_inside = rendered.size();

            Value rgb = rgb_l1(tape, rendered, observed);

            Value eik = tape.constant(0.0);
            if (stage != Stage::BrdfRefine) {
                Rng erng = Rng::substream(cfg_.seed, 0xE1C0, std::uint64_t(epoch_),
                                          std::uint64_t(iter));
                eik = eikonal_loss(tape, *fields_,
                                   eikonal_points(cfg_.eikonal_batch, near_surface, erng));
            }

            Value msk = tape.constant(0.0);
            if (stage == Stage::SrGaussian) {
                for (const PixelRef& ref : outside_px) render_one(ref);
                if (mask_targets.size() == weight_sums.size())
                    msk = mask_bce(tape, mask_targets, weight_sums);
            }

            LossWeights w = cfg_.weights;
            if (stage == Stage::InitDirac || stage == Stage::BrdfRefine) w.lambda2 = 0.0;
            if (stage == Stage::BrdfRefine) w.lambda1 = 0.0;
            Value total = total_loss(tape, rgb, eik, msk, w);

            // the rgb term above only covered the inside batch; outside pixels
            // rendered for the mask loss still contribute color supervision
            if (stage == Stage::SrGaussian && rendered.size() > n_inside) {
                Value rgb_all = rgb_l1(tape, rendered, observed);
                total = rgb_all + w.lambda1 * eik + w.lambda2 * msk;
                rgb = rgb_all;
            }

            store.zero_grads();
            tape.backward(total, 1.0);
            if (!adam_step(store, adam_, lr))
                incidents_.push_back("non-finite gradient at epoch " + std::to_string(epoch_) +
                                     " iteration " + std::to_string(iter) + ": step skipped");

            sum_rgb += value_of(rgb);
            sum_eik += value_of(eik);
            sum_mask += value_of(msk);
            sum_total += value_of(total);
        }

        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double inv = 1.0 / double(iterations);
        log_.push_back({epoch_, stage_name(stage), sum_rgb * inv, sum_eik * inv, sum_mask * inv,
                        sum_total * inv, lr_main, secs});
    }

    FieldSet* fields_;
    TrainConfig cfg_;
    AdamState adam_;
    Stage completed_ = Stage::None;
    int epoch_ = 0;
    std::vector<EpochLog> log_;
    std::vector<std::string> incidents_;
};

}  // namespace srvol
