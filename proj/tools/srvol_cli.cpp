// srvol: single entry point for the inverse-rendering pipeline.
//
// Subcommands: gen, train, render, relight, edit, eval, mesh. Options come
// from an optional JSON config file merged with command-line flags (flags
// win); the effective configuration is echoed to <out-dir>/config.resolved.json
// so every run is reproducible from that file plus the seed.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "srvol/datagen.hpp"
#include "srvol/mesh.hpp"
#include "srvol/metrics.hpp"
#include "srvol/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace srvol;

namespace {

// ---------------------------------------------------------------- logging

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };
LogLevel g_log = LogLevel::Info;

void log_info(const std::string& msg) {
    if (g_log >= LogLevel::Info) std::cout << "[srvol] " << msg << "\n";
}
void log_debug(const std::string& msg) {
    if (g_log >= LogLevel::Debug) std::cout << "[srvol] " << msg << "\n";
}

// ---------------------------------------------------------------- options

struct GlobalOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    int threads = 1;
    std::string log_level = "info";
    json file;  // parsed config file ({} when none given)
};

void add_global_options(CLI::App& app, GlobalOpts& g) {
    app.add_option("--config", g.config_path, "JSON config file (flags override its values)");
    app.add_option("--seed", g.seed, "Master RNG seed");
    app.add_option("--threads", g.threads, "Worker fan-out bound inside modules")
        ->check(CLI::PositiveNumber);
    app.add_option("--out-dir", g.out_dir, "Output directory");
    app.add_option("--log-level", g.log_level, "quiet | info | debug")
        ->check(CLI::IsMember({"quiet", "info", "debug"}));
}

void finalize_globals(const CLI::App& app, GlobalOpts& g) {
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw IoError("cannot read config file " + g.config_path);
        try {
            in >> g.file;
        } catch (const json::exception& e) {
            throw IoError("malformed JSON in " + g.config_path + ": " + e.what());
        }
    } else {
        g.file = json::object();
    }
    const json global = g.file.contains("global") ? g.file.at("global") : json::object();
    if (!app.count("--seed") && global.contains("seed"))
        g.seed = global.at("seed").get<std::uint64_t>();
    if (!app.count("--threads") && global.contains("threads"))
        g.threads = global.at("threads").get<int>();
    if (!app.count("--out-dir") && global.contains("out_dir"))
        g.out_dir = global.at("out_dir").get<std::string>();
    if (!app.count("--log-level") && global.contains("log_level"))
        g.log_level = global.at("log_level").get<std::string>();
    g_log = g.log_level == "quiet" ? LogLevel::Quiet
            : g.log_level == "debug" ? LogLevel::Debug
                                     : LogLevel::Info;
}

// fill `var` from config section `sec[key]` unless the flag was given on the
// command line (flags always win over file values)
template <typename T>
void merge_opt(const CLI::App& sub, const std::string& flag, const json& sec,
               const std::string& key, T& var) {
    if (sub.count(flag)) return;
    if (sec.contains(key)) var = sec.at(key).get<T>();
}

// per-command options live under "commands" so they cannot collide with the
// shared "model" / "train" hyperparameter sections
json section(const GlobalOpts& g, const std::string& name) {
    if (!g.file.contains("commands")) return json::object();
    const json& c = g.file.at("commands");
    return c.contains(name) ? c.at(name) : json::object();
}

// ---------------------------------------------------------------- model cfg

FieldConfig parse_field_config(const json& file) {
    FieldConfig fc = FieldConfig::desk_default();
    if (!file.contains("model")) return fc;
    const json& m = file.at("model");
    if (m.contains("arch")) {
        const std::string arch = m.at("arch").get<std::string>();
        if (arch == "desk")
            fc = FieldConfig::desk_default();
        else if (arch == "paper")
            fc = FieldConfig::paper_scale();
        else
            throw SpecError("model.arch must be 'desk' or 'paper', got '" + arch + "'");
    }
    const auto net = [&m](const char* name, MlpSpec& s) {
        if (!m.contains(name)) return;
        const json& n = m.at(name);
        if (n.contains("hidden")) s.hidden_widths = n.at("hidden").get<std::vector<int>>();
        if (n.contains("skip")) s.skip_layer = n.at("skip").get<int>();
        if (n.contains("pe")) s.pe_frequencies = n.at("pe").get<int>();
    };
    net("sdf", fc.sdf);
    net("diffuse", fc.diffuse);
    net("specular", fc.specular);
    if (m.contains("initial_beta")) fc.initial_beta = m.at("initial_beta").get<double>();
    if (m.contains("init_sphere_radius"))
        fc.init_sphere_radius = m.at("init_sphere_radius").get<double>();
    if (m.contains("roughness_floor")) fc.roughness_floor = m.at("roughness_floor").get<double>();
    return fc;
}

json field_config_json(const FieldConfig& fc) {
    const auto net = [](const MlpSpec& s) {
        return json{{"hidden", s.hidden_widths}, {"skip", s.skip_layer}, {"pe", s.pe_frequencies}};
    };
    return json{{"sdf", net(fc.sdf)},
                {"diffuse", net(fc.diffuse)},
                {"specular", net(fc.specular)},
                {"initial_beta", fc.initial_beta},
                {"init_sphere_radius", fc.init_sphere_radius},
                {"roughness_floor", fc.roughness_floor}};
}

// ---------------------------------------------------------------- train cfg

struct StageEpochs {
    int init = 0, sr = 0, refine = 0;
};

TrainConfig parse_train_config(const json& file, std::uint64_t seed, StageEpochs& stages) {
    TrainConfig tc;
    tc.seed = seed;
    if (file.contains("train")) {
        const json& t = file.at("train");
        const auto d = [&t](const char* k, double& v) {
            if (t.contains(k)) v = t.at(k).get<double>();
        };
        const auto i = [&t](const char* k, int& v) {
            if (t.contains(k)) v = t.at(k).get<int>();
        };
        i("epochs", tc.epochs);
        d("lr_start", tc.lr_main_start);
        d("lr_end", tc.lr_main_end);
        d("lr_specular", tc.lr_specular);
        d("lambda1", tc.weights.lambda1);
        d("lambda2", tc.weights.lambda2);
        i("m_samples", tc.m_samples);
        i("n_psf", tc.n_psf);
        i("batch_init", tc.batch_init);
        i("batch_inside", tc.batch_inside);
        i("batch_outside", tc.batch_outside);
        i("eikonal_batch", tc.eikonal_batch);
        i("refine_batch", tc.refine_batch);
        d("far_plane", tc.far_plane);
        d("psf_sigma", tc.psf_sigma);
        d("lr_density_mult", tc.lr_density_mult);
        i("epochs_init", stages.init);
        i("epochs_sr", stages.sr);
        i("epochs_refine", stages.refine);
    }
    // default stage split: 40% init, 40% SR, 20% refinement
    if (stages.init <= 0) stages.init = std::max(1, tc.epochs * 2 / 5);
    if (stages.sr <= 0) stages.sr = std::max(1, tc.epochs * 2 / 5);
    if (stages.refine <= 0) stages.refine = std::max(1, tc.epochs / 5);
    return tc;
}

json train_config_json(const TrainConfig& tc, const StageEpochs& stages) {
    return json{{"epochs", tc.epochs},
                {"epochs_init", stages.init},
                {"epochs_sr", stages.sr},
                {"epochs_refine", stages.refine},
                {"lr_start", tc.lr_main_start},
                {"lr_end", tc.lr_main_end},
                {"lr_specular", tc.lr_specular},
                {"lambda1", tc.weights.lambda1},
                {"lambda2", tc.weights.lambda2},
                {"m_samples", tc.m_samples},
                {"n_psf", tc.n_psf},
                {"batch_init", tc.batch_init},
                {"batch_inside", tc.batch_inside},
                {"batch_outside", tc.batch_outside},
                {"eikonal_batch", tc.eikonal_batch},
                {"refine_batch", tc.refine_batch},
                {"far_plane", tc.far_plane},
                {"psf_sigma", tc.psf_sigma},
                {"lr_density_mult", tc.lr_density_mult}};
}

// ---------------------------------------------------------------- echo

void write_resolved_config(const GlobalOpts& g, const std::string& command, json command_section,
                           const json& model = json(), const json& train = json()) {
    fs::create_directories(g.out_dir);
    json out;
    out["schema"] = 1;
    out["command"] = command;
    out["global"] = {{"seed", g.seed},
                     {"threads", g.threads},
                     {"out_dir", g.out_dir},
                     {"log_level", g.log_level}};
    if (!model.is_null()) out["model"] = model;
    if (!train.is_null()) out["train"] = train;
    out["commands"][command] = std::move(command_section);
    const fs::path path = fs::path(g.out_dir) / "config.resolved.json";
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << out.dump(2) << "\n";
    log_debug("wrote " + path.string());
}

// ---------------------------------------------------------------- parsing

void parse_wxh(const std::string& s, int& w, int& h) {
    int tw = 0, th = 0;
    char sep = 0;
    if (std::sscanf(s.c_str(), "%d%c%d", &tw, &sep, &th) != 3 || (sep != 'x' && sep != 'X') ||
        tw < 1 || th < 1)
        throw SpecError("expected WxH (e.g. 64x64), got '" + s + "'");
    w = tw;
    h = th;
}

Vec3 parse_vec3(const std::string& s) {
    Vec3 v;
    char c1 = 0, c2 = 0;
    if (std::sscanf(s.c_str(), "%lf%c%lf%c%lf", &v.x, &c1, &v.y, &c2, &v.z) != 5 || c1 != ',' ||
        c2 != ',')
        throw SpecError("expected X,Y,Z (e.g. 1.5,-0.5,2), got '" + s + "'");
    return v;
}

// ---------------------------------------------------------------- scenes

AnalyticScene make_scene(const std::string& name) {
    AnalyticScene scene;
    if (name == "sphere") {
        scene.sdf.primitives = {{SdfPrimitive::Kind::Sphere, {0, 0, 0}, {}, 0.5, 0}};
        scene.brdf.pattern = ProceduralBrdf::Pattern::Constant;
        scene.brdf.diffuse_a = {0.6, 0.6, 0.6};
        scene.brdf.specular_albedo = 0.0;
        scene.brdf.roughness = 0.5;
    } else if (name == "sphere-glossy") {
        scene.sdf.primitives = {{SdfPrimitive::Kind::Sphere, {0, 0, 0}, {}, 0.5, 0}};
        scene.brdf.pattern = ProceduralBrdf::Pattern::Constant;
        scene.brdf.diffuse_a = {0.6, 0.3, 0.2};
        scene.brdf.specular_albedo = 0.4;
        scene.brdf.roughness = 0.3;
    } else if (name == "sphere-checker") {
        scene.sdf.primitives = {{SdfPrimitive::Kind::Sphere, {0, 0, 0}, {}, 0.5, 0}};
        scene.brdf.pattern = ProceduralBrdf::Pattern::Checker;
        scene.brdf.diffuse_a = {0.6, 0.3, 0.2};
        scene.brdf.diffuse_b = {0.15, 0.15, 0.5};
        scene.brdf.period = 0.25;
        scene.brdf.specular_albedo = 0.4;
        scene.brdf.roughness = 0.3;
    } else if (name == "union") {
        scene.sdf.primitives = {
            {SdfPrimitive::Kind::Sphere, {-0.12, 0, 0.05}, {}, 0.38, 0},
            {SdfPrimitive::Kind::Box, {0.18, 0, -0.08}, {0.22, 0.22, 0.22}, 0, 0}};
        scene.sdf.smooth_k = 0.02;
        scene.brdf.pattern = ProceduralBrdf::Pattern::Constant;
        scene.brdf.diffuse_a = {0.55, 0.45, 0.3};
        scene.brdf.specular_albedo = 0.0;
        scene.brdf.roughness = 0.5;
    } else if (name == "torus") {
        scene.sdf.primitives = {{SdfPrimitive::Kind::Torus, {0, 0, 0}, {}, 0.35, 0.13}};
        scene.brdf.pattern = ProceduralBrdf::Pattern::Stripes;
        scene.brdf.diffuse_a = {0.6, 0.25, 0.2};
        scene.brdf.diffuse_b = {0.2, 0.45, 0.6};
        scene.brdf.period = 0.2;
        scene.brdf.specular_albedo = 0.3;
        scene.brdf.roughness = 0.4;
    } else {
        throw SpecError("unknown scene '" + name +
                        "' (available: sphere, sphere-glossy, sphere-checker, union, torus)");
    }
    scene.validate();
    return scene;
}

// ---------------------------------------------------------------- model io

struct Model {
    ad::ParameterStore store;
    std::optional<FieldSet> fields;
    AdamState adam{0};
};

// Build the field set from the model config and overwrite its parameters
// with the checkpoint (segment layout must match).
CheckpointMeta load_model(Model& model, const FieldConfig& fc, const std::string& checkpoint) {
    Rng rng(0);  // initializer draws are overwritten by the checkpoint
    model.fields.emplace(fc, model.store, rng);
    model.adam = AdamState(model.store.size());
    CheckpointMeta meta = load_checkpoint(checkpoint, model.store, model.adam);
    log_debug("loaded " + checkpoint + " (epoch " + std::to_string(meta.epoch) + ", stage " +
              stage_name(Stage(meta.stage)) + ")");
    return meta;
}

SdfProbe learned_sdf_probe(const FieldSet& fields) {
    return [&fields](const Vec3& p) {
        ad::Tape scratch(&fields.store());
        return ad::value_of(fields.sdf_value(scratch, p));
    };
}

Camera scale_camera(Camera cam, int scale) {
    if (scale < 1) throw SpecError("--scale must be >= 1");
    cam.fx *= scale;
    cam.fy *= scale;
    cam.cx *= scale;
    cam.cy *= scale;
    cam.width *= scale;
    cam.height *= scale;
    return cam;
}

// Shared by render, relight, and eval so their outputs are bitwise
// comparable for identical inputs.
FrameRender render_view(const FieldSet& fields, const Camera& cam, const LightSpec& light,
                        PsfKind kind, const TrainConfig& tc, const SdfProbe* shadow = nullptr) {
    RenderSettings s;
    s.kernel = {kind, tc.psf_sigma};
    s.n_psf = tc.n_psf;
    s.m_samples = tc.m_samples;
    s.clip_to_unit_sphere = true;
    s.background = tc.background;
    s.far_plane = tc.far_plane;
    s.shadow_probe = shadow;
    return render_image(fields, cam, light, s, tc.seed, 0);
}

const ViewEntry& pick_view(const DatasetManifest& m, const std::string& split, int index) {
    int seen = 0;
    for (const ViewEntry& v : m.views)
        if (v.split == split) {
            if (seen == index) return v;
            ++seen;
        }
    throw SpecError("dataset has no view " + std::to_string(index) + " in split '" + split + "'");
}

std::vector<const ViewEntry*> split_views(const DatasetManifest& m, const std::string& split) {
    std::vector<const ViewEntry*> out;
    for (const ViewEntry& v : m.views)
        if (v.split == split) out.push_back(&v);
    if (out.empty()) throw SpecError("dataset has no views in split '" + split + "'");
    return out;
}

// ---------------------------------------------------------------- gen

struct GenOpts {
    std::string scene = "sphere";
    std::string lr_size = "64x64";
    int views = 12, test_views = 2, factor = 4;
    double rig_radius = 2.5, fx = 0.0, light_intensity = 6.0, exposure = 1.0;
};

int cmd_gen(const CLI::App& sub, GlobalOpts& g, GenOpts& o) {
    const json sec = section(g, "gen");
    merge_opt(sub, "--scene", sec, "scene", o.scene);
    merge_opt(sub, "--views", sec, "views", o.views);
    merge_opt(sub, "--test-views", sec, "test_views", o.test_views);
    merge_opt(sub, "--lr", sec, "lr", o.lr_size);
    merge_opt(sub, "--factor", sec, "factor", o.factor);
    merge_opt(sub, "--rig-radius", sec, "rig_radius", o.rig_radius);
    merge_opt(sub, "--fx", sec, "fx", o.fx);
    merge_opt(sub, "--light-intensity", sec, "light_intensity", o.light_intensity);
    merge_opt(sub, "--exposure", sec, "exposure", o.exposure);

    int lr_w = 0, lr_h = 0;
    parse_wxh(o.lr_size, lr_w, lr_h);
    const int hr_w = lr_w * o.factor, hr_h = lr_h * o.factor;
    if (o.fx <= 0.0) o.fx = 1.25 * hr_w;  // object spans roughly half the frame

    write_resolved_config(g, "gen",
                          json{{"scene", o.scene},
                               {"views", o.views},
                               {"test_views", o.test_views},
                               {"lr", o.lr_size},
                               {"factor", o.factor},
                               {"rig_radius", o.rig_radius},
                               {"fx", o.fx},
                               {"light_intensity", o.light_intensity},
                               {"exposure", o.exposure}});

    AnalyticScene scene = make_scene(o.scene);
    scene.light_intensity = o.light_intensity;
    const std::vector<Camera> train_cams =
        make_camera_rig(o.views, o.rig_radius, o.fx, hr_w, hr_h);
    // test cameras sit between the training azimuths
    const std::vector<Camera> test_cams = make_camera_rig(
        o.test_views, o.rig_radius, o.fx, hr_w, hr_h, kPi / std::max(1, o.views));

    log_info("generating '" + o.scene + "': " + std::to_string(o.views) + " train + " +
             std::to_string(o.test_views) + " test views, HR " + std::to_string(hr_w) + "x" +
             std::to_string(hr_h) + ", factor " + std::to_string(o.factor));
    DatasetManifest m =
        generate_dataset(scene, train_cams, test_cams, g.out_dir, o.factor, o.exposure);
    log_info("wrote " + std::to_string(m.views.size()) + " views to " + g.out_dir);
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainOpts {
    std::string dataset, stage = "all", init_from;
    bool derive_masks = false;
    int epochs_init = 0, epochs_sr = 0, epochs_refine = 0;
};

int cmd_train(const CLI::App& sub, GlobalOpts& g, TrainOpts& o) {
    const json sec = section(g, "train");
    merge_opt(sub, "--dataset", sec, "dataset", o.dataset);
    merge_opt(sub, "--stage", sec, "stage", o.stage);
    merge_opt(sub, "--init-from", sec, "init_from", o.init_from);
    merge_opt(sub, "--derive-masks", sec, "derive_masks", o.derive_masks);
    if (o.dataset.empty()) throw CLI::RequiredError("--dataset");

    const FieldConfig fc = parse_field_config(g.file);
    StageEpochs stages;
    TrainConfig tc = parse_train_config(g.file, g.seed, stages);
    if (o.epochs_init > 0) stages.init = o.epochs_init;
    if (o.epochs_sr > 0) stages.sr = o.epochs_sr;
    if (o.epochs_refine > 0) stages.refine = o.epochs_refine;

    DatasetManifest m = read_manifest(o.dataset);
    tc.background = m.background;
    tc.validate();

    write_resolved_config(g, "train",
                          json{{"dataset", o.dataset},
                               {"stage", o.stage},
                               {"init_from", o.init_from},
                               {"derive_masks", o.derive_masks}},
                          field_config_json(fc), train_config_json(tc, stages));

    std::vector<TrainView> views;
    for (const ViewEntry* e : split_views(m, "train")) {
        TrainView v;
        v.camera = e->camera;
        v.rgb = read_png((fs::path(o.dataset) / e->image_lr).string(), m.exposure);
        if (!o.derive_masks) v.mask = read_mask_png((fs::path(o.dataset) / e->mask).string());
        v.light = LightSpec{std::nullopt, m.light_intensity};
        views.push_back(std::move(v));
    }
    log_info("training on " + std::to_string(views.size()) + " views (" +
             std::to_string(views[0].camera.width) + "x" +
             std::to_string(views[0].camera.height) + " LR)");

    Model model;
    Rng rng(tc.seed);
    model.fields.emplace(fc, model.store, rng);
    Trainer trainer(*model.fields, tc);
    if (!o.init_from.empty()) {
        CheckpointMeta meta = load_checkpoint(o.init_from, model.store, trainer.adam());
        if (meta.config_hash != tc.hash())
            log_info("warning: checkpoint training config differs from the current one");
        trainer.restore(meta);
    }

    const auto save = [&](const char* tag) {
        const fs::path path = fs::path(g.out_dir) / (std::string("checkpoint_") + tag + ".srvl");
        save_checkpoint(path, model.store, trainer.adam(), trainer.meta());
        log_info("saved " + path.string());
    };
    const auto run = [&](Stage s, int epochs) {
        if (s == Stage::SrGaussian && o.derive_masks) {
            log_info("deriving silhouettes from the initialized geometry");
            std::vector<Camera> cams;
            for (const TrainView& v : views) cams.push_back(v.camera);
            std::vector<Image> masks = derive_silhouettes(*model.fields, cams, tc);
            for (std::size_t i = 0; i < views.size(); ++i) views[i].mask = std::move(masks[i]);
        }
        log_info(std::string("stage ") + stage_name(s) + ": " + std::to_string(epochs) +
                 " epochs");
        trainer.run_stage(s, views, epochs);
        save(stage_name(s));
    };

    if (o.stage == "init") {
        run(Stage::InitDirac, stages.init);
    } else if (o.stage == "sr") {
        run(Stage::SrGaussian, stages.sr);
    } else if (o.stage == "refine") {
        run(Stage::BrdfRefine, stages.refine);
    } else if (o.stage == "all") {
        run(Stage::InitDirac, stages.init);
        run(Stage::SrGaussian, stages.sr);
        run(Stage::BrdfRefine, stages.refine);
    } else {
        throw CLI::ValidationError("--stage", "must be init, sr, refine, or all");
    }

    save_checkpoint(fs::path(g.out_dir) / "checkpoint.srvl", model.store, trainer.adam(),
                    trainer.meta());
    write_metrics_csv(fs::path(g.out_dir) / "metrics.csv", trainer.log());
    for (const std::string& inc : trainer.incidents()) log_info("incident: " + inc);
    if (!trainer.log().empty()) {
        const EpochLog& last = trainer.log().back();
        log_info("final losses: rgb " + std::to_string(last.rgb) + ", eikonal " +
                 std::to_string(last.eikonal) + ", mask " + std::to_string(last.mask));
    }
    log_info("wrote checkpoint.srvl and metrics.csv to " + g.out_dir);
    return 0;
}

// ---------------------------------------------------------------- render / relight

struct RenderOpts {
    std::string checkpoint, dataset, split = "test", kernel = "dirac", out_path;
    std::string light_str;  // relight only
    int view = 0, scale = 1;
    bool shadows = false, aux = false;
};

int cmd_render(const CLI::App& sub, GlobalOpts& g, RenderOpts& o, bool relight) {
    const char* name = relight ? "relight" : "render";
    const json sec = section(g, name);
    merge_opt(sub, "--checkpoint", sec, "checkpoint", o.checkpoint);
    merge_opt(sub, "--dataset", sec, "dataset", o.dataset);
    merge_opt(sub, "--split", sec, "split", o.split);
    merge_opt(sub, "--view", sec, "view", o.view);
    merge_opt(sub, "--kernel", sec, "kernel", o.kernel);
    merge_opt(sub, "--scale", sec, "scale", o.scale);
    merge_opt(sub, "--out", sec, "out", o.out_path);
    merge_opt(sub, "--aux", sec, "aux", o.aux);
    if (relight) {
        merge_opt(sub, "--light", sec, "light", o.light_str);
        merge_opt(sub, "--shadows", sec, "shadows", o.shadows);
        if (o.light_str.empty()) throw CLI::RequiredError("--light");
    }
    if (o.checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
    if (o.dataset.empty()) throw CLI::RequiredError("--dataset");
    if (o.kernel != "dirac" && o.kernel != "gaussian")
        throw CLI::ValidationError("--kernel", "must be dirac or gaussian");
    if (o.out_path.empty())
        o.out_path = (fs::path(g.out_dir) / (std::string(name) + ".png")).string();

    const FieldConfig fc = parse_field_config(g.file);
    StageEpochs stages;
    TrainConfig tc = parse_train_config(g.file, g.seed, stages);
    DatasetManifest m = read_manifest(o.dataset);
    tc.background = m.background;

    json cmd_sec{{"checkpoint", o.checkpoint}, {"dataset", o.dataset}, {"split", o.split},
                 {"view", o.view},             {"kernel", o.kernel},   {"scale", o.scale},
                 {"out", o.out_path},          {"aux", o.aux}};
    if (relight) {
        cmd_sec["light"] = o.light_str;
        cmd_sec["shadows"] = o.shadows;
    }
    write_resolved_config(g, name, std::move(cmd_sec), field_config_json(fc),
                          train_config_json(tc, stages));

    Model model;
    load_model(model, fc, o.checkpoint);
    const ViewEntry& entry = pick_view(m, o.split, o.view);
    const Camera cam = scale_camera(entry.camera, o.scale);

    LightSpec light{std::nullopt, m.light_intensity};
    SdfProbe probe;
    const SdfProbe* shadow = nullptr;
    if (relight) {
        light.position = parse_vec3(o.light_str);
        if (o.shadows) {
            probe = learned_sdf_probe(*model.fields);
            shadow = &probe;
        }
    } else if (entry.light_position) {
        light.position = entry.light_position;
    }

    log_info(std::string(name) + ": view " + std::to_string(o.view) + " of split '" + o.split +
             "' at " + std::to_string(cam.width) + "x" + std::to_string(cam.height));
    FrameRender frame =
        render_view(*model.fields, cam, light,
                    o.kernel == "dirac" ? PsfKind::Dirac : PsfKind::Gaussian, tc, shadow);
    if (!fs::path(o.out_path).parent_path().empty())
        fs::create_directories(fs::path(o.out_path).parent_path());
    write_png16(o.out_path, frame.rgb, m.exposure);
    log_info("wrote " + o.out_path);
    if (o.aux) {
        const fs::path base = fs::path(o.out_path).parent_path();
        const std::string stem = fs::path(o.out_path).stem().string();
        Image nenc = frame.normals;
        for (double& v : nenc.data) v = 0.5 * (v + 1.0);
        write_png16((base / (stem + "_normals.png")).string(), nenc, 1.0);
        Image denc = frame.depth;
        for (double& v : denc.data) v /= m.depth_scale;
        write_png16((base / (stem + "_depth.png")).string(), denc, 1.0);
        write_mask_png((base / (stem + "_mask.png")).string(), frame.mask);
        log_info("wrote auxiliary normal/depth/mask maps next to the image");
    }
    return 0;
}

// ---------------------------------------------------------------- edit

// Collapse one output row of an MLP's last layer to a constant pre-activation
// value: zero its weights, set its bias, reset its optimizer moments.
void collapse_output_row(ad::ParameterStore& store, AdamState& adam, const Mlp& mlp, int row,
                         double bias) {
    const int last = mlp.layer_count() - 1;
    const std::size_t wseg = mlp.layer_weight_segment(last);
    const std::size_t bseg = mlp.layer_bias_segment(last);
    std::span<double> w = store.values(wseg);
    std::span<double> b = store.values(bseg);
    const std::size_t rows = b.size();
    const std::size_t cols = w.size() / rows;
    const auto& ws = store.segment(wseg);
    const auto& bs = store.segment(bseg);
    for (std::size_t c = 0; c < cols; ++c) {
        w[std::size_t(row) * cols + c] = 0.0;
        adam.m[ws.offset + std::size_t(row) * cols + c] = 0.0;
        adam.v[ws.offset + std::size_t(row) * cols + c] = 0.0;
    }
    b[std::size_t(row)] = bias;
    adam.m[bs.offset + std::size_t(row)] = 0.0;
    adam.v[bs.offset + std::size_t(row)] = 0.0;
}

double logit(double p) {
    p = std::clamp(p, 1e-9, 1.0 - 1e-9);
    return std::log(p / (1.0 - p));
}

struct EditOpts {
    std::string checkpoint, out_path, recolor_str;
    bool remove_specular = false;
    double scale_roughness = 0.0;
};

int cmd_edit(const CLI::App& sub, GlobalOpts& g, EditOpts& o) {
    const json sec = section(g, "edit");
    merge_opt(sub, "--checkpoint", sec, "checkpoint", o.checkpoint);
    merge_opt(sub, "--out", sec, "out", o.out_path);
    merge_opt(sub, "--remove-specular", sec, "remove_specular", o.remove_specular);
    merge_opt(sub, "--scale-roughness", sec, "scale_roughness", o.scale_roughness);
    merge_opt(sub, "--recolor", sec, "recolor", o.recolor_str);
    if (o.checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
    if (o.out_path.empty())
        o.out_path = (fs::path(g.out_dir) / "checkpoint_edited.srvl").string();
    if (!o.remove_specular && o.scale_roughness == 0.0 && o.recolor_str.empty())
        throw CLI::ValidationError(
            "edit", "give at least one of --remove-specular, --scale-roughness, --recolor");

    const FieldConfig fc = parse_field_config(g.file);
    write_resolved_config(g, "edit",
                          json{{"checkpoint", o.checkpoint},
                               {"out", o.out_path},
                               {"remove_specular", o.remove_specular},
                               {"scale_roughness", o.scale_roughness},
                               {"recolor", o.recolor_str}},
                          field_config_json(fc));

    Model model;
    CheckpointMeta meta = load_model(model, fc, o.checkpoint);
    FieldSet& fields = *model.fields;

    if (o.remove_specular) {
        // sigmoid(-40) ~ 4e-18: specular albedo is zero to machine precision
        collapse_output_row(model.store, model.adam, fields.specular_mlp(), 0, -40.0);
        log_info("removed the specular component");
    }
    if (!o.recolor_str.empty()) {
        const Vec3 rho = parse_vec3(o.recolor_str);
        const Mlp& diff = fields.diffuse_mlp();
        collapse_output_row(model.store, model.adam, diff, 0, logit(rho.x));
        collapse_output_row(model.store, model.adam, diff, 1, logit(rho.y));
        collapse_output_row(model.store, model.adam, diff, 2, logit(rho.z));
        log_info("recolored the diffuse albedo");
    }
    if (o.scale_roughness != 0.0) {
        if (o.scale_roughness < 0.0) throw SpecError("--scale-roughness must be positive");
        // Scaling a spatially varying roughness field is not expressible in
        // the last linear layer, so the field is collapsed to the scaled mean
        // of the current near-surface roughness (constant to good accuracy on
        // the recovered scenes).
        SdfProbe probe = learned_sdf_probe(fields);
        Rng rng(g.seed ^ 0xED17);
        double sum = 0.0;
        int count = 0;
        for (int i = 0; i < 8192 && count < 1024; ++i) {
            Vec3 p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            if (norm(p) > 1.0 || std::abs(probe(p)) > 0.05) continue;
            ad::Tape scratch(&model.store);
            BrdfSample b = fields.brdf(scratch, p);
            sum += ad::value_of(b.roughness);
            ++count;
        }
        if (count == 0) throw StateError("scale-roughness: no surface found in the checkpoint");
        const double mean_r = sum / count;
        const double target = std::clamp(o.scale_roughness * mean_r, 0.01, 1.0);
        const double floor = fc.roughness_floor;
        const double s = std::clamp((target - floor) / (1.0 - floor), 1e-9, 1.0 - 1e-9);
        collapse_output_row(model.store, model.adam, fields.specular_mlp(), 1, logit(s));
        log_info("roughness " + std::to_string(mean_r) + " -> " + std::to_string(target));
    }

    save_checkpoint(o.out_path, model.store, model.adam, meta);
    log_info("wrote " + o.out_path);
    return 0;
}

// ---------------------------------------------------------------- eval

// Block-average a unit-vector map by an integer factor, renormalizing.
Image downsample_normals(const Image& hr, int factor) {
    Image lr(hr.width / factor, hr.height / factor, 3);
    for (int y = 0; y < lr.height; ++y)
        for (int x = 0; x < lr.width; ++x) {
            Vec3 acc{0, 0, 0};
            for (int j = 0; j < factor; ++j)
                for (int i = 0; i < factor; ++i)
                    acc = acc + Vec3{hr.at(x * factor + i, y * factor + j, 0),
                                     hr.at(x * factor + i, y * factor + j, 1),
                                     hr.at(x * factor + i, y * factor + j, 2)};
            const double n = norm(acc);
            if (n > 1e-9) acc = acc / n;
            lr.at(x, y, 0) = acc.x;
            lr.at(x, y, 1) = acc.y;
            lr.at(x, y, 2) = acc.z;
        }
    return lr;
}

struct EvalOpts {
    std::string checkpoint, dataset, split = "test", kernel = "dirac";
    int scale = 1;
    bool dump_renders = false;
};

int cmd_eval(const CLI::App& sub, GlobalOpts& g, EvalOpts& o) {
    const json sec = section(g, "eval");
    merge_opt(sub, "--checkpoint", sec, "checkpoint", o.checkpoint);
    merge_opt(sub, "--dataset", sec, "dataset", o.dataset);
    merge_opt(sub, "--split", sec, "split", o.split);
    merge_opt(sub, "--kernel", sec, "kernel", o.kernel);
    merge_opt(sub, "--scale", sec, "scale", o.scale);
    merge_opt(sub, "--dump-renders", sec, "dump_renders", o.dump_renders);
    if (o.checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
    if (o.dataset.empty()) throw CLI::RequiredError("--dataset");
    if (o.kernel != "dirac" && o.kernel != "gaussian")
        throw CLI::ValidationError("--kernel", "must be dirac or gaussian");

    const FieldConfig fc = parse_field_config(g.file);
    StageEpochs stages;
    TrainConfig tc = parse_train_config(g.file, g.seed, stages);
    DatasetManifest m = read_manifest(o.dataset);
    tc.background = m.background;
    if (o.scale != 1 && o.scale != m.factor)
        throw SpecError("eval --scale must be 1 (LR reference) or the dataset factor " +
                        std::to_string(m.factor) + " (HR reference)");

    write_resolved_config(g, "eval",
                          json{{"checkpoint", o.checkpoint},
                               {"dataset", o.dataset},
                               {"split", o.split},
                               {"kernel", o.kernel},
                               {"scale", o.scale},
                               {"dump_renders", o.dump_renders}},
                          field_config_json(fc), train_config_json(tc, stages));

    Model model;
    load_model(model, fc, o.checkpoint);
    SdfProbe probe = learned_sdf_probe(*model.fields);

    struct Row {
        int view;
        double psnr, ssim, mae;
    };
    std::vector<Row> rows;
    const std::vector<const ViewEntry*> views = split_views(m, o.split);
    if (o.dump_renders) fs::create_directories(fs::path(g.out_dir) / "renders");

    for (std::size_t i = 0; i < views.size(); ++i) {
        const ViewEntry& e = *views[i];
        const Camera cam = scale_camera(e.camera, o.scale);
        LightSpec light{e.light_position, m.light_intensity};
        // non-colocated GT includes cast shadows; trace them against the
        // learned geometry
        const SdfProbe* shadow = e.light_position ? &probe : nullptr;
        FrameRender frame =
            render_view(*model.fields, cam, light,
                        o.kernel == "dirac" ? PsfKind::Dirac : PsfKind::Gaussian, tc, shadow);

        const std::string ref_path = o.scale == 1 ? e.image_lr : e.image_hr;
        Image ref = read_png((fs::path(o.dataset) / ref_path).string(), m.exposure);
        // compare in the quantized domain the reference went through
        Image quant = frame.rgb;
        for (double& v : quant.data)
            v = std::round(std::clamp(v * m.exposure, 0.0, 1.0) * 65535.0) / 65535.0 /
                m.exposure;

        Image gt_normals = read_png((fs::path(o.dataset) / e.gt_normals).string(), 1.0);
        for (double& v : gt_normals.data) v = 2.0 * v - 1.0;
        if (o.scale == 1) gt_normals = downsample_normals(gt_normals, m.factor);
        Image fg(gt_normals.width, gt_normals.height, 1);
        for (int y = 0; y < fg.height; ++y)
            for (int x = 0; x < fg.width; ++x) {
                const Vec3 n{gt_normals.at(x, y, 0), gt_normals.at(x, y, 1),
                             gt_normals.at(x, y, 2)};
                fg.at(x, y, 0) = norm(n) > 0.5 ? 1.0 : 0.0;
            }

        Row row;
        row.view = int(i);
        row.psnr = psnr(quant, ref);
        row.ssim = ssim(quant, ref);
        row.mae = normal_mae_degrees(frame.normals, gt_normals, &fg);
        rows.push_back(row);
        log_info("view " + std::to_string(i) + ": PSNR " + std::to_string(row.psnr) +
                 " dB, SSIM " + std::to_string(row.ssim) + ", MAE " + std::to_string(row.mae) +
                 " deg");
        if (o.dump_renders)
            write_png16((fs::path(g.out_dir) / "renders" /
                         (o.split + "_" + std::to_string(i) + ".png"))
                            .string(),
                        frame.rgb, m.exposure);
    }

    double mp = 0, ms = 0, mm = 0;
    for (const Row& r : rows) {
        mp += r.psnr;
        ms += r.ssim;
        mm += r.mae;
    }
    const double inv = 1.0 / double(rows.size());
    mp *= inv;
    ms *= inv;
    mm *= inv;
    log_info("aggregate: PSNR " + std::to_string(mp) + " dB, SSIM " + std::to_string(ms) +
             ", MAE " + std::to_string(mm) + " deg");

    json report;
    report["split"] = o.split;
    report["scale"] = o.scale;
    report["config_hash"] = tc.hash();
    report["aggregate"] = {{"psnr", mp}, {"ssim", ms}, {"mae_deg", mm}};
    report["views"] = json::array();
    for (const Row& r : rows)
        report["views"].push_back(
            {{"view", r.view}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"mae_deg", r.mae}});
    {
        std::ofstream f(fs::path(g.out_dir) / "metrics.json");
        if (!f) throw IoError("cannot write metrics.json");
        f << report.dump(2) << "\n";
    }
    {
        std::ofstream f(fs::path(g.out_dir) / "metrics_eval.csv");
        if (!f) throw IoError("cannot write metrics_eval.csv");
        f << "view,split,psnr,ssim,mae_deg\n";
        f.precision(12);
        for (const Row& r : rows)
            f << r.view << "," << o.split << "," << r.psnr << "," << r.ssim << "," << r.mae
              << "\n";
        f << "mean," << o.split << "," << mp << "," << ms << "," << mm << "\n";
    }
    log_info("wrote metrics.json and metrics_eval.csv to " + g.out_dir);
    return 0;
}

// ---------------------------------------------------------------- mesh

struct MeshOpts {
    std::string checkpoint, out_path;
    int res = 64;
};

int cmd_mesh(const CLI::App& sub, GlobalOpts& g, MeshOpts& o) {
    const json sec = section(g, "mesh");
    merge_opt(sub, "--checkpoint", sec, "checkpoint", o.checkpoint);
    merge_opt(sub, "--res", sec, "res", o.res);
    merge_opt(sub, "--out", sec, "out", o.out_path);
    if (o.checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
    if (o.out_path.empty()) o.out_path = (fs::path(g.out_dir) / "mesh.obj").string();

    const FieldConfig fc = parse_field_config(g.file);
    write_resolved_config(g, "mesh",
                          json{{"checkpoint", o.checkpoint}, {"res", o.res}, {"out", o.out_path}},
                          field_config_json(fc));

    Model model;
    load_model(model, fc, o.checkpoint);
    SdfProbe probe = learned_sdf_probe(*model.fields);
    log_info("extracting isosurface at grid " + std::to_string(o.res) + "^3");
    TriangleMesh mesh = extract_isosurface(probe, o.res);
    if (mesh.faces.empty())
        std::cerr << "warning: no zero crossing found; wrote an empty mesh\n";
    if (!fs::path(o.out_path).parent_path().empty())
        fs::create_directories(fs::path(o.out_path).parent_path());
    write_obj(o.out_path, mesh);
    log_info("wrote " + o.out_path + " (" + std::to_string(mesh.vertices.size()) +
             " vertices, " + std::to_string(mesh.faces.size()) + " faces)");
    return 0;
}

}  // namespace

// ---------------------------------------------------------------- main

int main(int argc, char** argv) {
    CLI::App app{"srvol: SDF + BRDF recovery from posed photometric images via "
                 "differentiable volume rendering with super-resolution"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may appear after the subcommand name
    GlobalOpts g;
    add_global_options(app, g);

    GenOpts go;
    CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
    gen->add_option("--scene", go.scene,
                    "Scene name (sphere, sphere-glossy, sphere-checker, union, torus)");
    gen->add_option("--views", go.views, "Number of training views");
    gen->add_option("--test-views", go.test_views, "Number of test views");
    gen->add_option("--lr", go.lr_size, "Low-resolution image size WxH");
    gen->add_option("--factor", go.factor, "Super-resolution factor (HR = LR * factor)");
    gen->add_option("--rig-radius", go.rig_radius, "Camera rig radius");
    gen->add_option("--fx", go.fx, "HR focal length in pixels (0: auto)");
    gen->add_option("--light-intensity", go.light_intensity, "Point light intensity");
    gen->add_option("--exposure", go.exposure, "PNG exposure scale");

    TrainOpts to;
    CLI::App* train = app.add_subcommand("train", "Run the staged optimization");
    train->add_option("--dataset", to.dataset, "Dataset directory (from gen)");
    train->add_option("--stage", to.stage, "init | sr | refine | all");
    train->add_option("--init-from", to.init_from, "Checkpoint to resume from");
    train->add_flag("--derive-masks", to.derive_masks,
                    "Derive silhouettes from geometry instead of dataset masks");
    train->add_option("--epochs-init", to.epochs_init, "Epochs for the init stage")
        ->check(CLI::PositiveNumber);
    train->add_option("--epochs-sr", to.epochs_sr, "Epochs for the SR stage")
        ->check(CLI::PositiveNumber);
    train->add_option("--epochs-refine", to.epochs_refine, "Epochs for the refinement stage")
        ->check(CLI::PositiveNumber);

    RenderOpts ro, lo;
    CLI::App* render = app.add_subcommand("render", "Render a dataset view from a checkpoint");
    CLI::App* relight = app.add_subcommand("relight", "Render with a moved point light");
    const auto add_render_options = [](CLI::App* sub, RenderOpts& r) {
        sub->add_option("--checkpoint", r.checkpoint, "Checkpoint file");
        sub->add_option("--dataset", r.dataset, "Dataset directory (camera source)");
        sub->add_option("--split", r.split, "View split: train | test | test_noncolocated");
        sub->add_option("--view", r.view, "View index within the split");
        sub->add_option("--kernel", r.kernel, "PSF kernel: dirac | gaussian");
        sub->add_option("--scale", r.scale, "Resolution multiplier for super-resolved output");
        sub->add_option("--out", r.out_path, "Output PNG path");
        sub->add_flag("--aux", r.aux, "Also write normal, depth, and mask maps");
    };
    add_render_options(render, ro);
    add_render_options(relight, lo);
    relight->add_option("--light", lo.light_str, "Light position X,Y,Z");
    relight->add_flag("--shadows", lo.shadows, "Trace shadows against the learned geometry");

    EditOpts eo;
    CLI::App* edit = app.add_subcommand("edit", "Apply material edits to a checkpoint");
    edit->add_option("--checkpoint", eo.checkpoint, "Input checkpoint");
    edit->add_option("--out", eo.out_path, "Output (derived) checkpoint");
    edit->add_flag("--remove-specular", eo.remove_specular, "Set the specular albedo to zero");
    edit->add_option("--scale-roughness", eo.scale_roughness,
                     "Multiply roughness (clamped to [0.01, 1])");
    edit->add_option("--recolor", eo.recolor_str,
                     "Replace the diffuse albedo with a constant R,G,B");

    EvalOpts vo;
    CLI::App* eval = app.add_subcommand("eval", "Compute PSNR / SSIM / normal MAE on a split");
    eval->add_option("--checkpoint", vo.checkpoint, "Checkpoint file");
    eval->add_option("--dataset", vo.dataset, "Dataset directory");
    eval->add_option("--split", vo.split, "View split: train | test | test_noncolocated");
    eval->add_option("--kernel", vo.kernel, "PSF kernel: dirac | gaussian");
    eval->add_option("--scale", vo.scale, "1: compare at LR; dataset factor: compare at HR");
    eval->add_flag("--dump-renders", vo.dump_renders,
                   "Write rendered views to <out-dir>/renders/");

    MeshOpts mo;
    CLI::App* mesh = app.add_subcommand("mesh", "Export the zero level set as an OBJ mesh");
    mesh->add_option("--checkpoint", mo.checkpoint, "Checkpoint file");
    mesh->add_option("--res", mo.res, "Marching-cubes grid resolution")
        ->check(CLI::PositiveNumber);
    mesh->add_option("--out", mo.out_path, "Output OBJ path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message to stderr
        return 1;
    }

    try {
        finalize_globals(app, g);
        if (gen->parsed()) return cmd_gen(*gen, g, go);
        if (train->parsed()) return cmd_train(*train, g, to);
        if (render->parsed()) return cmd_render(*render, g, ro, false);
        if (relight->parsed()) return cmd_render(*relight, g, lo, true);
        if (edit->parsed()) return cmd_edit(*edit, g, eo);
        if (eval->parsed()) return cmd_eval(*eval, g, vo);
        if (mesh->parsed()) return cmd_mesh(*mesh, g, mo);
        std::cerr << "error: no subcommand given\n";
        return 1;
    } catch (const CLI::ParseError& e) {
        // usage errors raised by the handlers (missing/invalid option values)
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
