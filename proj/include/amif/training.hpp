#ifndef AMIF_TRAINING_HPP
#define AMIF_TRAINING_HPP

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "amif/image_io.hpp"
#include "amif/losses.hpp"
#include "amif/pipeline.hpp"

namespace amif::train {

namespace fs = std::filesystem;
using loss::LossBundle;
using loss::LossWeights;

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
    int64_t epochs = 200;
    int64_t batch_size = 2;
    double lr = 1e-4;
    double lr_decay = 0.5;
    int64_t decay_every_epochs = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    uint64_t seed = 0;
    double grad_clip = 10.0;
    int64_t max_steps = 0;          // > 0 caps the run below epochs * steps_per_epoch
    int64_t checkpoint_every = 0;   // steps; 0 = only at the end
    bool augment = true;
    double small_angle_deg = 0.0;   // 0 keeps rotations axis-aligned
    std::string data_root;
    std::string out_dir;
    LossWeights weights;
    ModelConfig model;

    void validate() const {
        if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (!(lr > 0)) throw ConfigError("TrainConfig: lr must be positive");
        if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("TrainConfig: lr_decay must lie in (0, 1]");
        if (decay_every_epochs < 1) throw ConfigError("TrainConfig: decay_every_epochs must be >= 1");
        if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw ConfigError("TrainConfig: betas must lie in (0, 1)");
        if (!(grad_clip > 0)) throw ConfigError("TrainConfig: grad_clip must be positive");
        if (max_steps < 0 || checkpoint_every < 0) throw ConfigError("TrainConfig: step counts must be >= 0");
        weights.validate();
        model.validate();
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"lr", c.lr},
         {"lr_decay", c.lr_decay},
         {"decay_every_epochs", c.decay_every_epochs},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"seed", c.seed},
         {"grad_clip", c.grad_clip},
         {"max_steps", c.max_steps},
         {"checkpoint_every", c.checkpoint_every},
         {"augment", c.augment},
         {"small_angle_deg", c.small_angle_deg},
         {"data_root", c.data_root},
         {"out_dir", c.out_dir},
         {"weights",
          {{"alpha1", c.weights.alpha1},
           {"alpha2", c.weights.alpha2},
           {"alpha3", c.weights.alpha3},
           {"alpha4", c.weights.alpha4},
           {"alpha5", c.weights.alpha5},
           {"eps_decomp", c.weights.eps_decomp},
           {"eps_dice", c.weights.eps_dice}}},
         {"model", c.model}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.decay_every_epochs = j.value("decay_every_epochs", c.decay_every_epochs);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.seed = j.value("seed", c.seed);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.augment = j.value("augment", c.augment);
    c.small_angle_deg = j.value("small_angle_deg", c.small_angle_deg);
    c.data_root = j.value("data_root", c.data_root);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        c.weights.alpha1 = w.value("alpha1", c.weights.alpha1);
        c.weights.alpha2 = w.value("alpha2", c.weights.alpha2);
        c.weights.alpha3 = w.value("alpha3", c.weights.alpha3);
        c.weights.alpha4 = w.value("alpha4", c.weights.alpha4);
        c.weights.alpha5 = w.value("alpha5", c.weights.alpha5);
        c.weights.eps_decomp = w.value("eps_decomp", c.weights.eps_decomp);
        c.weights.eps_dice = w.value("eps_dice", c.weights.eps_dice);
    }
    if (j.contains("model")) j.at("model").get_to(c.model);
}

inline TrainConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    TrainConfig c;
    try {
        c = nlohmann::json::parse(in).get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    }
    if (const char* s = std::getenv("AMIF_SEED")) {
        try {
            c.seed = std::stoull(s);
        } catch (const std::exception&) {
            throw ValidationError(std::string("AMIF_SEED is not an unsigned integer: ") + s);
        }
    }
    c.validate();
    return c;
}

// Step decay: lr * decay^floor(epoch / decay_every).
inline double lr_at_epoch(const TrainConfig& c, int64_t epoch) {
    return c.lr * std::pow(c.lr_decay, static_cast<double>(epoch / c.decay_every_epochs));
}

// ---------------------------------------------------------------------------
// Data

struct ImagePair {
    std::string id;
    torch::Tensor a, b;  // (1, 1, S, S) in [0, 1]
};

// Layout: <root>/modal_a/<stem>.png, <root>/modal_b/<stem>.png and one stem per
// line in <root>/{train,val,test}.txt.
struct DatasetSpec {
    fs::path root;
    std::vector<std::string> train, val, test;
    int64_t image_size = 256;

    const std::vector<std::string>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        throw ValidationError("unknown split '" + name + "'");
    }
};

inline std::vector<std::string> read_split_list(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

inline DatasetSpec open_dataset(const fs::path& root, int64_t image_size) {
    if (!fs::is_directory(root)) throw ValidationError("data root does not exist: " + root.string());
    DatasetSpec s;
    s.root = root;
    s.image_size = image_size;
    s.train = read_split_list(root / "train.txt");
    s.val = read_split_list(root / "val.txt");
    s.test = read_split_list(root / "test.txt");
    std::set<std::string> seen;
    for (const auto* list : {&s.train, &s.val, &s.test})
        for (const auto& stem : *list)
            if (!seen.insert(stem).second) throw ConfigError("dataset: pair '" + stem + "' appears in more than one split");
    return s;
}

struct LoadReport {
    std::vector<std::string> unpaired;  // stems missing one modality
};

// Loads a split in list order, or in a seeded shuffled order when a seed is
// given. Unpaired stems are skipped and listed in the report.
inline std::vector<ImagePair> load_pairs(const DatasetSpec& spec, const std::string& split,
                                         std::optional<uint64_t> seed = std::nullopt, LoadReport* report = nullptr) {
    const auto& stems = spec.split(split);
    if (stems.empty()) throw ConfigError("dataset: split '" + split + "' is empty");
    std::vector<ImagePair> out;
    for (const auto& stem : stems) {
        auto pa = spec.root / "modal_a" / (stem + ".png");
        auto pb = spec.root / "modal_b" / (stem + ".png");
        if (!fs::exists(pa) || !fs::exists(pb)) {
            if (report) report->unpaired.push_back(stem);
            continue;
        }
        const int size = static_cast<int>(spec.image_size);
        out.push_back({stem, image::load(pa, size).luma, image::load(pb, size).luma});
    }
    if (out.empty()) throw ConfigError("dataset: split '" + split + "' has no complete pairs");
    if (seed) {
        std::mt19937_64 rng(*seed);
        std::shuffle(out.begin(), out.end(), rng);
    }
    return out;
}

struct AugmentParams {
    int quarter_turns = 0;
    double angle_deg = 0.0;
};

// Rotation by quarter turns plus an optional small angle (reflect fill).
inline torch::Tensor rotate(const torch::Tensor& img, const AugmentParams& p) {
    auto out = p.quarter_turns % 4 ? torch::rot90(img, p.quarter_turns % 4, {2, 3}) : img;
    if (p.angle_deg != 0.0) {
        const double t = p.angle_deg * std::numbers::pi / 180.0;
        auto theta = torch::tensor({std::cos(t), -std::sin(t), 0.0, std::sin(t), std::cos(t), 0.0}, img.options())
                         .reshape({1, 2, 3})
                         .expand({img.size(0), 2, 3});
        namespace F = torch::nn::functional;
        auto grid = F::affine_grid(theta, img.sizes(), false);
        out = F::grid_sample(out, grid, F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kReflection).align_corners(false));
    }
    return out;
}

// One parameter draw applied to both modalities, so registration survives.
inline std::pair<ImagePair, AugmentParams> augment(const ImagePair& pair, std::mt19937_64& rng, double max_small_angle_deg = 0.0) {
    AugmentParams p;
    p.quarter_turns = static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng));
    if (max_small_angle_deg > 0.0)
        p.angle_deg = std::uniform_real_distribution<double>(-max_small_angle_deg, max_small_angle_deg)(rng);
    return {{pair.id, rotate(pair.a, p), rotate(pair.b, p)}, p};
}

// ---------------------------------------------------------------------------
// Synthetic fixture

struct FixtureOptions {
    int64_t n_pairs = 64;  // training pairs
    int64_t n_val = 8;
    int64_t n_test = 8;
    int64_t size = 64;
    uint64_t seed = 0;
};

namespace fixture_detail {

struct Blob {
    double cx, cy, sx, sy, amp;
};

inline double gauss(double x, double y, const Blob& b) {
    const double dx = (x - b.cx) / b.sx, dy = (y - b.cy) / b.sy;
    return b.amp * std::exp(-0.5 * (dx * dx + dy * dy));
}

}  // namespace fixture_detail

// Registered pseudo-structural / pseudo-functional pair. Both share the head
// outline; A carries anatomy-like texture and ventricles, B a bright skull
// ring with blurred hot spots.
inline std::pair<torch::Tensor, torch::Tensor> synth_pair(int64_t size, std::mt19937_64& rng) {
    using fixture_detail::Blob;
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double S = static_cast<double>(size);
    const double cx = S * (0.5 + 0.04 * (U(rng) - 0.5)), cy = S * (0.5 + 0.04 * (U(rng) - 0.5));
    const double rx = S * (0.34 + 0.06 * U(rng)), ry = S * (0.38 + 0.06 * U(rng));
    const double freq = 2.0 + 3.0 * U(rng), phase = 6.28318 * U(rng);

    std::vector<Blob> tissue, vents, spots;
    for (int i = 0; i < 4; ++i)
        tissue.push_back({cx + rx * 0.6 * (U(rng) - 0.5), cy + ry * 0.6 * (U(rng) - 0.5), S * (0.08 + 0.08 * U(rng)),
                          S * (0.08 + 0.08 * U(rng)), 0.15 + 0.2 * U(rng)});
    for (int i = 0; i < 2; ++i)
        vents.push_back({cx + (i ? 1 : -1) * rx * 0.2, cy - ry * 0.1 + ry * 0.2 * U(rng), S * 0.04, S * (0.08 + 0.04 * U(rng)), 0.5});
    const int n_spots = 1 + static_cast<int>(U(rng) * 3);
    for (int i = 0; i < n_spots; ++i)
        spots.push_back({cx + rx * 0.9 * (U(rng) - 0.5), cy + ry * 0.9 * (U(rng) - 0.5), S * (0.05 + 0.05 * U(rng)),
                         S * (0.05 + 0.05 * U(rng)), 0.5 + 0.4 * U(rng)});

    auto a = torch::zeros({1, 1, size, size});
    auto b = torch::zeros({1, 1, size, size});
    auto A = a.accessor<float, 4>();
    auto Bc = b.accessor<float, 4>();
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double r = std::sqrt(std::pow((px - cx) / rx, 2) + std::pow((py - cy) / ry, 2));
            double va = 0, vb = 0;
            if (r < 1.0) {
                va = 0.35 + 0.08 * std::sin(freq * 6.28318 * px / S + phase) * std::cos(freq * 6.28318 * py / S);
                for (const auto& t : tissue) va += fixture_detail::gauss(px, py, t);
                for (const auto& v : vents) va -= fixture_detail::gauss(px, py, v);
                vb = 0.08;
                for (const auto& s : spots) vb += fixture_detail::gauss(px, py, s);
            }
            // skull ring: dim in A, bright in B
            const double ring = std::exp(-std::pow((r - 1.0) / 0.05, 2));
            va += 0.15 * ring;
            vb += 0.9 * ring;
            A[0][0][y][x] = static_cast<float>(std::clamp(va, 0.0, 1.0));
            Bc[0][0][y][x] = static_cast<float>(std::clamp(vb, 0.0, 1.0));
        }
    return {a, b};
}

inline void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    io::write_text_atomic(p, text);
}

// Writes <root>/modal_{a,b}/pair_NNNN.png, split lists and watermark.png.
inline DatasetSpec make_synthetic_fixture(const fs::path& root, const FixtureOptions& opt) {
    if (opt.n_pairs < 1) throw ConfigError("fixture: n_pairs must be >= 1");
    if (opt.n_val < 0 || opt.n_test < 0) throw ConfigError("fixture: split sizes must be >= 0");
    if (opt.size < 16 || opt.size % 2) throw ConfigError("fixture: size must be even and >= 16");
    fs::create_directories(root / "modal_a");
    fs::create_directories(root / "modal_b");
    std::mt19937_64 rng(opt.seed);
    DatasetSpec spec;
    spec.root = root;
    spec.image_size = opt.size;
    const int64_t total = opt.n_pairs + opt.n_val + opt.n_test;
    for (int64_t i = 0; i < total; ++i) {
        std::ostringstream stem;
        stem << "pair_" << std::setw(4) << std::setfill('0') << i;
        auto [a, b] = synth_pair(opt.size, rng);
        image::save_png(root / "modal_a" / (stem.str() + ".png"), a);
        image::save_png(root / "modal_b" / (stem.str() + ".png"), b);
        auto& dst = i < opt.n_pairs ? spec.train : (i < opt.n_pairs + opt.n_val ? spec.val : spec.test);
        dst.push_back(stem.str());
    }
    write_lines(root / "train.txt", spec.train);
    write_lines(root / "val.txt", spec.val);
    write_lines(root / "test.txt", spec.test);
    image::save_png(root / "watermark.png", make_watermark_label(opt.size));
    return spec;
}

// ---------------------------------------------------------------------------
// Losses for one batch (both modes)

struct StepOutputs {
    UnauthorizedPass unauthorized;
    AuthorizedPass authorized;
};

inline LossBundle compute_losses(AmifModel& model, const torch::Tensor& a, const torch::Tensor& b,
                                 const torch::Tensor& label, const LossWeights& w, StepOutputs* outputs = nullptr,
                                 int64_t* degenerate = nullptr) {
    auto up = model->unauthorized(a, b);
    // Gradient routing for the authorized pass (forward values are exactly the
    // inference path):
    //  - recovery runs on I_wf and the key as given artifacts, so the recovery
    //    terms train re-encoding and the inverse without pulling the mark out of I_wf;
    //  - the clean image is decoded from the recovered feature and additionally
    //    back-propagates into the fused feature as if recovery were exact
    //    (straight-through), so intensity and gradient terms keep training the
    //    fusion network;
    //  - the watermark decode keeps the live key, so its supervision reaches the
    //    watermark memory through the key stream.
    AuthorizedPass ap;
    ap.reencoded_packed = wavelet::dwt2_packed(model->shared(up.watermarked.detach()));
    auto f_rec = model->protection->inverse_streams(ap.reencoded_packed, up.key_stream.detach()).first;
    auto w_rec = model->protection->inverse_streams(ap.reencoded_packed, up.key_stream).second;
    ap.recovered_fused = wavelet::idwt2_packed(f_rec);
    ap.recovered_watermark = wavelet::idwt2_packed(w_rec);
    ap.clean = model->decoder(ap.recovered_fused + (up.fused - up.fused.detach()));
    ap.watermark_logits = model->wm_head(ap.recovered_watermark);
    auto lab = label.to(a.options()).expand({a.size(0), 1, a.size(2), a.size(3)});

    LossBundle L;
    L.l_int = loss::intensity_loss(ap.clean, a, b);
    L.l_grad = loss::gradient_loss(ap.clean, a, b);
    L.l_decomp = loss::decomposition_loss(up.decomposed, w.eps_decomp, degenerate);
    L.l_krecov = loss::key_recovery_loss(ap.recovered_fused, up.fused);
    L.l_bce = loss::watermark_bce(ap.watermark_logits, lab);
    L.l_dice = loss::watermark_dice(ap.watermark_logits, lab, w.eps_dice);
    L.l_wm = loss::wm_pixel_loss(up.watermarked, a, b, lab);
    auto target_ll = wavelet::low_band(wavelet::dwt2_packed(model->shared(lab)));
    L.l_wmlow = loss::wm_lowfreq_loss(wavelet::low_band(up.protected_packed), wavelet::low_band(up.fused_packed), target_ll);
    L.total = loss::total_loss(L, w);
    if (outputs) *outputs = {std::move(up), std::move(ap)};
    return L;
}

inline LossBundle detached(const LossBundle& L) {
    LossBundle d = L;
    for (auto* t : {&d.l_int, &d.l_grad, &d.l_decomp, &d.l_krecov, &d.l_bce, &d.l_dice, &d.l_wm, &d.l_wmlow, &d.total})
        *t = t->detach();
    return d;
}

// ---------------------------------------------------------------------------
// Trainer

struct StepLog {
    int64_t step = 0;
    double lr = 0;
    std::array<double, 9> values{};
};

class Trainer {
public:
    Trainer(TrainConfig cfg, AmifModel model)
        : cfg_(std::move(cfg)), model_(std::move(model)),
          optimizer_(model_->parameters(), torch::optim::AdamOptions(cfg_.lr).betas({cfg_.beta1, cfg_.beta2})),
          label_(make_watermark_label(model_->cfg.encoder.image_size)) {
        cfg_.validate();
    }

    AmifModel& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    int64_t step() const { return step_; }

    void set_lr(double lr) {
        for (auto& g : optimizer_.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
    }

    // One optimizer update over both modes; returns detached losses.
    LossBundle train_step(const torch::Tensor& a, const torch::Tensor& b) {
        model_->train();
        optimizer_.zero_grad();
        int64_t degenerate = 0;
        auto L = compute_losses(model_, a, b, label_, cfg_.weights, nullptr, &degenerate);
        if (degenerate > 0) std::cerr << "warning: zero-variance features in decomposition loss (CC set to 0)\n";
        auto terms = L.terms();
        for (std::size_t i = 0; i < terms.size(); ++i)
            if (!std::isfinite(terms[i].item<double>()))
                throw NumericError("non-finite loss term " + std::string(LossBundle::kNames[i]) + " at step " + std::to_string(step_));
        L.total.backward();
        torch::nn::utils::clip_grad_norm_(model_->parameters(), cfg_.grad_clip);
        optimizer_.step();
        ++step_;
        return detached(L);
    }

    // Runs until the configured step count, resuming from the current step.
    // Batch order and augmentation are pure functions of (seed, step), so an
    // interrupted and resumed run replays the same batches.
    void run(const std::vector<ImagePair>& data, const std::function<void(const StepLog&)>& on_step = {},
             const fs::path& state_dir = {}) {
        if (data.empty()) throw ConfigError("training: no training pairs");
        const int64_t per_epoch = (static_cast<int64_t>(data.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
        const int64_t total = cfg_.max_steps > 0 ? cfg_.max_steps : cfg_.epochs * per_epoch;
        std::vector<std::size_t> order;
        int64_t order_epoch = -1;
        while (step_ < total) {
            const int64_t epoch = step_ / per_epoch;
            if (epoch != order_epoch) {
                order.resize(data.size());
                std::iota(order.begin(), order.end(), 0);
                std::mt19937_64 rng(cfg_.seed * 1000003ULL + static_cast<uint64_t>(epoch));
                std::shuffle(order.begin(), order.end(), rng);
                order_epoch = epoch;
            }
            std::vector<torch::Tensor> as, bs;
            const int64_t first = (step_ % per_epoch) * cfg_.batch_size;
            for (int64_t k = 0; k < cfg_.batch_size; ++k) {
                const auto& p = data[order[static_cast<std::size_t>((first + k) % static_cast<int64_t>(data.size()))]];
                if (cfg_.augment) {
                    std::seed_seq seq{static_cast<uint64_t>(cfg_.seed), static_cast<uint64_t>(step_), static_cast<uint64_t>(k)};
                    std::mt19937_64 rng(seq);
                    auto aug = augment(p, rng, cfg_.small_angle_deg).first;
                    as.push_back(aug.a);
                    bs.push_back(aug.b);
                } else {
                    as.push_back(p.a);
                    bs.push_back(p.b);
                }
            }
            const double lr = lr_at_epoch(cfg_, epoch);
            set_lr(lr);
            auto L = train_step(torch::cat(as, 0), torch::cat(bs, 0));
            if (on_step) on_step({step_, lr, L.values()});
            if (!state_dir.empty() && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 && step_ < total)
                save_state(state_dir);
        }
        if (!state_dir.empty()) save_state(state_dir);
    }

    // <dir>/model.ckpt, <dir>/optimizer.pt, <dir>/train_state.json
    void save_state(const fs::path& dir) const {
        fs::create_directories(dir);
        save_model(dir / "model.ckpt", model_);
        auto tmp = dir / "optimizer.pt.tmp";
        torch::save(optimizer_, tmp.string());
        fs::rename(tmp, dir / "optimizer.pt");
        io::write_text_atomic(dir / "train_state.json", nlohmann::json{{"step", step_}}.dump() + "\n");
    }

    void load_state(const fs::path& dir) {
        auto archive = checkpoint::read(dir / "model.ckpt");
        checkpoint::apply(archive, *model_);
        if (!fs::exists(dir / "optimizer.pt")) throw ValidationError("resume: missing " + (dir / "optimizer.pt").string());
        torch::load(optimizer_, (dir / "optimizer.pt").string());
        std::ifstream in(dir / "train_state.json");
        if (!in) throw ValidationError("resume: missing " + (dir / "train_state.json").string());
        step_ = nlohmann::json::parse(in).at("step").get<int64_t>();
    }

private:
    TrainConfig cfg_;
    AmifModel model_;
    torch::optim::Adam optimizer_;
    torch::Tensor label_;
    int64_t step_ = 0;
};

inline std::string csv_header() {
    std::string h = "step";
    for (auto n : LossBundle::kNames) h += "," + std::string(n);
    return h + ",lr\n";
}

inline std::string csv_row(const StepLog& s) {
    std::ostringstream os;
    os << s.step << std::setprecision(10);
    for (double v : s.values) os << ',' << v;
    os << ',' << s.lr << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Held-out probes

struct HoldoutReport {
    double residual_dice = 0;      // watermark visibility in I_wf
    double recovery_psnr = 0;      // recovered I_f vs direct clean decode, dB
    double blurred_residual_dice = 0;
    int64_t pairs = 0;
};

inline HoldoutReport evaluate_holdout(AmifModel& model, const std::vector<ImagePair>& pairs) {
    torch::NoGradGuard ng;
    model->eval();
    const auto label = make_watermark_label(model->cfg.encoder.image_size);
    HoldoutReport r;
    for (const auto& p : pairs) {
        auto up = model->unauthorized(p.a, p.b);
        auto ap = model->authorized(up.watermarked.detach(), up.key_stream.detach());
        auto direct = model->decoder(up.fused);
        r.residual_dice += residual_dice(up.watermarked, p.a, p.b, label);
        r.blurred_residual_dice += residual_dice(degrade(up.watermarked, Degradation::GaussianBlur), p.a, p.b, label);
        r.recovery_psnr += psnr(ap.clean, direct);
        ++r.pairs;
    }
    if (r.pairs) {
        r.residual_dice /= double(r.pairs);
        r.blurred_residual_dice /= double(r.pairs);
        r.recovery_psnr /= double(r.pairs);
    }
    return r;
}

}  // namespace amif::train

#endif
