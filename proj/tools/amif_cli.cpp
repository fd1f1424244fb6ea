// amif — command-line front end: train, fuse, recover, eval, fixture.
//
// Exit codes: 0 success, 1 validation/configuration/shape, 2 key
// authentication or compatibility, 3 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "amif/amif.hpp"

namespace fs = std::filesystem;
using namespace amif;

namespace {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void refuse_overwrite(const fs::path& p, bool force) {
    if (!force && fs::exists(p)) throw ValidationError(p.string() + " exists (use --force to overwrite)");
}

void make_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    std::string config;
    bool resume = false;
};

int cmd_train(const TrainArgs& args) {
    auto cfg = train::load_config(args.config);
    if (cfg.data_root.empty()) throw ConfigError("config: data_root is not set");
    if (cfg.out_dir.empty()) throw ConfigError("config: out_dir is not set");
    auto spec = train::open_dataset(cfg.data_root, cfg.model.encoder.image_size);
    train::LoadReport report;
    auto data = train::load_pairs(spec, "train", std::nullopt, &report);
    for (const auto& s : report.unpaired) std::cerr << "warning: skipping unpaired '" << s << "'\n";

    const fs::path out = cfg.out_dir, state = out / "state", csv = out / "loss.csv";
    fs::create_directories(out);
    torch::manual_seed(cfg.seed);
    AmifModel model(cfg.model);
    train::Trainer trainer(cfg, model);
    if (args.resume) {
        if (!fs::exists(state / "train_state.json")) throw ValidationError("--resume: no training state in " + state.string());
        trainer.load_state(state);
        std::cerr << "resuming at step " << trainer.step() << "\n";
    }
    std::ofstream log;
    if (args.resume && fs::exists(csv)) {
        log.open(csv, std::ios::app);
    } else {
        log.open(csv, std::ios::trunc);
        log << train::csv_header();
    }
    if (!log) throw ValidationError("cannot write " + csv.string());
    io::write_text_atomic(out / "config.json", nlohmann::json(cfg).dump(2) + "\n");

    trainer.run(data, [&](const train::StepLog& s) {
        log << train::csv_row(s);
        log.flush();
        if (s.step % 50 == 0) std::cerr << "step " << s.step << " total " << s.values.back() << "\n";
    }, state);
    save_model(out / "model.ckpt", model);
    std::cout << "trained " << trainer.step() << " steps; checkpoint " << (out / "model.ckpt").string()
              << " (fingerprint " << to_hex(model->fingerprint()) << ")\n";
    return 0;
}

// ------------------------------------------------------------------- fuse

struct FuseArgs {
    std::string a, b, ckpt, out, key_out, manifest;
    bool force = false;
};

int cmd_fuse(const FuseArgs& args) {
    const fs::path out = args.out, key_out = args.key_out;
    refuse_overwrite(out, args.force);
    refuse_overwrite(key_out, args.force);
    auto model = load_model(args.ckpt);
    const int size = static_cast<int>(model->cfg.encoder.image_size);
    auto ia = image::load(args.a, size), ib = image::load(args.b, size);
    if (ia.original_height != ib.original_height || ia.original_width != ib.original_width)
        throw DimensionError("modalities differ in size: " + std::to_string(ia.original_height) + "x" +
                             std::to_string(ia.original_width) + " vs " + std::to_string(ib.original_height) + "x" +
                             std::to_string(ib.original_width) + " (inputs must be registered)");
    torch::NoGradGuard ng;
    auto result = model->fuse_unauthorized(ia.luma, ib.luma);
    if (!torch::isfinite(result.watermarked_image).all().item<bool>())
        throw NumericError("fuse: non-finite output");
    // colour, when present, comes from the functional modality (b) if it has it
    const cv::Mat& chroma = !ib.chroma.empty() ? ib.chroma : ia.chroma;

    make_parent(out);
    make_parent(key_out);
    result.keys.at(0).save(key_out);
    image::save_png(out, result.watermarked_image, chroma);

    const fs::path manifest = args.manifest.empty() ? out.parent_path() / "manifest.jsonl" : fs::path(args.manifest);
    make_parent(manifest);
    std::ofstream m(manifest, std::ios::app);
    m << nlohmann::json{{"image", fs::absolute(out).string()},
                        {"key", fs::absolute(key_out).string()},
                        {"modal_a", fs::absolute(args.a).string()},
                        {"modal_b", fs::absolute(args.b).string()},
                        {"fingerprint", to_hex(model->fingerprint())},
                        {"timestamp", utc_timestamp()}}
                .dump()
      << "\n";
    std::cout << "wrote " << out.string() << " and key " << key_out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- recover

struct RecoverArgs {
    std::string in, key, ckpt, out, watermark_out;
    bool force = false;
};

int cmd_recover(const RecoverArgs& args) {
    refuse_overwrite(args.out, args.force);
    if (!args.watermark_out.empty()) refuse_overwrite(args.watermark_out, args.force);
    auto key = KeyArtifact::load(args.key);
    auto model = load_model(args.ckpt);
    auto img = image::load(args.in);
    const auto size = model->cfg.encoder.image_size;
    if (img.original_height != size || img.original_width != size)
        throw DimensionError("recover: " + args.in + " is " + std::to_string(img.original_height) + "x" +
                             std::to_string(img.original_width) + ", model works at " + std::to_string(size) + "x" +
                             std::to_string(size));
    torch::NoGradGuard ng;
    auto r = model->recover_authorized(img.luma, key);
    if (!torch::isfinite(r.clean_image).all().item<bool>()) throw NumericError("recover: non-finite output");
    make_parent(args.out);
    image::save_png(args.out, r.clean_image, img.chroma);
    if (!args.watermark_out.empty()) {
        make_parent(args.watermark_out);
        image::save_png(args.watermark_out, torch::sigmoid(r.watermark_logits));
    }
    std::cout << "wrote " << args.out << "\n";
    return 0;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
    std::string pred, src_a, src_b, out_csv;
    bool force = false;
};

std::map<std::string, fs::path> images_by_stem(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
    static const std::set<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (exts.count(ext)) out[e.path().stem().string()] = e.path();
    }
    return out;
}

int cmd_eval(const EvalArgs& args) {
    refuse_overwrite(args.out_csv, args.force);
    auto preds = images_by_stem(args.pred), as = images_by_stem(args.src_a), bs = images_by_stem(args.src_b);
    std::ostringstream csv;
    csv << "name,sf,mi,vif,qabf,ssim\n" << std::setprecision(8);
    metrics::MetricReport sum;
    int n = 0, skipped = 0;
    for (const auto& [stem, path] : preds) {
        auto ia = as.find(stem), ib = bs.find(stem);
        if (ia == as.end() || ib == bs.end()) {
            std::cerr << "unmatched: " << path.filename().string() << " (no source "
                      << (ia == as.end() ? "A" : "B") << ")\n";
            ++skipped;
            continue;
        }
        auto f = image::load(path);
        const int h = f.original_height;
        if (f.original_width != h) throw DimensionError("eval: " + path.string() + " is not square");
        auto r = metrics::evaluate(f.luma, image::load(ia->second, h).luma, image::load(ib->second, h).luma);
        csv << stem << ',' << r.sf << ',' << r.mi << ',' << r.vif << ',' << r.qabf << ',' << r.ssim << '\n';
        sum.sf += r.sf, sum.mi += r.mi, sum.vif += r.vif, sum.qabf += r.qabf, sum.ssim += r.ssim;
        ++n;
    }
    for (const auto& [stem, path] : as)
        if (!preds.count(stem)) std::cerr << "unmatched: source " << path.filename().string() << " has no prediction\n";
    if (n == 0) throw ValidationError("eval: no matched prediction/source triples");
    csv << "mean," << sum.sf / n << ',' << sum.mi / n << ',' << sum.vif / n << ',' << sum.qabf / n << ','
        << sum.ssim / n << '\n';
    make_parent(args.out_csv);
    io::write_text_atomic(args.out_csv, csv.str());
    std::cout << "evaluated " << n << " pairs (" << skipped << " skipped) -> " << args.out_csv << "\n";
    return 0;
}

// ---------------------------------------------------------------- fixture

int cmd_fixture(const std::string& out, const train::FixtureOptions& opt) {
    auto spec = train::make_synthetic_fixture(out, opt);
    std::cout << "wrote " << spec.train.size() << "/" << spec.val.size() << "/" << spec.test.size()
              << " train/val/test pairs to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Authorizable multimodal image fusion"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a model from a JSON config");
    train->add_option("--config", ta.config, "Training config (JSON)")->required();
    train->add_flag("--resume", ta.resume, "Continue from <out_dir>/state");

    FuseArgs fa;
    auto* fuse = app.add_subcommand("fuse", "Fuse a registered pair into a watermarked image and a key");
    fuse->add_option("--modal-a", fa.a, "Structural modality image")->required();
    fuse->add_option("--modal-b", fa.b, "Functional modality image")->required();
    fuse->add_option("--ckpt", fa.ckpt, "Model checkpoint")->required();
    fuse->add_option("--out", fa.out, "Watermarked output PNG")->required();
    fuse->add_option("--key-out", fa.key_out, "Key file to write")->required();
    fuse->add_option("--manifest", fa.manifest, "Manifest (JSON lines); default <out dir>/manifest.jsonl");
    fuse->add_flag("--force", fa.force, "Overwrite existing outputs");

    RecoverArgs ra;
    auto* recover = app.add_subcommand("recover", "Recover the watermark-free image with a key");
    recover->add_option("--in", ra.in, "Watermarked image")->required();
    recover->add_option("--key", ra.key, "Key file")->required();
    recover->add_option("--ckpt", ra.ckpt, "Model checkpoint")->required();
    recover->add_option("--out", ra.out, "Clean output PNG")->required();
    recover->add_option("--watermark-out", ra.watermark_out, "Also write the decoded watermark map");
    recover->add_flag("--force", ra.force, "Overwrite existing outputs");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Score fused images against their sources");
    eval->add_option("--pred-dir", ea.pred, "Fused images")->required();
    eval->add_option("--src-a-dir", ea.src_a, "Modality A sources")->required();
    eval->add_option("--src-b-dir", ea.src_b, "Modality B sources")->required();
    eval->add_option("--out-csv", ea.out_csv, "Metrics CSV")->required();
    eval->add_flag("--force", ea.force, "Overwrite an existing CSV");

    std::string fx_out;
    train::FixtureOptions fo;
    auto* fixture = app.add_subcommand("fixture", "Write a synthetic registered-pair dataset");
    fixture->add_option("--out", fx_out, "Output directory")->required();
    fixture->add_option("--pairs", fo.n_pairs, "Training pairs")->capture_default_str();
    fixture->add_option("--val", fo.n_val, "Validation pairs")->capture_default_str();
    fixture->add_option("--test", fo.n_test, "Test pairs")->capture_default_str();
    fixture->add_option("--size", fo.size, "Image side in pixels")->capture_default_str();
    fixture->add_option("--seed", fo.seed, "RNG seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*train) return cmd_train(ta);
        if (*fuse) return cmd_fuse(fa);
        if (*recover) return cmd_recover(ra);
        if (*eval) return cmd_eval(ea);
        if (*fixture) return cmd_fixture(fx_out, fo);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
