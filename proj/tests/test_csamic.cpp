#include <gtest/gtest.h>

#include <filesystem>

#include "amif/csamic.hpp"
#include "gradcheck.hpp"

using namespace amif;
namespace fs = std::filesystem;

namespace {

void zero_params(nn::Module& m) {
    torch::NoGradGuard g;
    for (auto& p : m.parameters()) p.zero_();
}

// phi = mu = 0, delta = 1, alpha(eta * varphi) = 0 (to working precision).
void neutralize(CouplingBlock& b) {
    torch::NoGradGuard g;
    zero_params(*b->phi_add);
    zero_params(*b->mu);
    b->delta->fc2->weight.zero_();
    b->delta->fc2->bias.zero_();
    b->eta->conv->weight.zero_();
    b->eta->conv->bias.fill_(1.0);
    zero_params(*b->phi_mul);
    b->phi_mul->project->bias.fill_(-200.0);
}

// Turns a dense block into the identity map on its input channels.
void make_identity(DenseBlock& d, int64_t channels) {
    torch::NoGradGuard g;
    zero_params(*d);
    for (int64_t c = 0; c < channels; ++c) d->project->weight[c][c][0][0] = 1.0;
}

double max_abs(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

// Bitwise CRC-32 (reflected, polynomial 0xEDB88320), independent of zlib.
uint32_t crc32_oracle(const uint8_t* p, std::size_t n) {
    uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) {
        c ^= p[i];
        for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
    }
    return ~c;
}

fs::path temp_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("amif_test_" + name + "_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
}

struct Draw {
    double err32 = 0, err64 = 0;
};

// One random (weights, inputs) draw of an N-block stack, checked in float32
// and float64 with the same weights.
Draw round_trip(int64_t n_blocks, uint64_t seed, int64_t channels = 8, int64_t hw = 8) {
    torch::manual_seed(seed);
    CopyrightProtection p(channels, n_blocks);
    auto f = torch::randn({2, channels, hw, hw});
    auto w = torch::randn({2, channels, hw, hw});
    torch::NoGradGuard g;
    Draw d;
    {
        auto r = p->protect(f, w);
        auto [f2, w2] = p->recover(r.protected_features, r.key);
        d.err32 = std::max(max_abs(f2, f), max_abs(w2, w));
    }
    p->to(torch::kFloat64);
    {
        auto fd = f.to(torch::kFloat64), wd = w.to(torch::kFloat64);
        auto r = p->protect(fd, wd);
        auto [f2, w2] = p->recover(r.protected_features, r.key);
        d.err64 = std::max(max_abs(f2, fd), max_abs(w2, wd));
    }
    return d;
}

}  // namespace

TEST(CouplingBlock, NeutralBlockIsIdentityBothWays) {
    CouplingBlock b(8);
    neutralize(b);
    torch::manual_seed(1);
    auto f = torch::randn({1, 8, 4, 4}), w = torch::randn({1, 8, 4, 4});
    auto [f2, w2] = b(f, w);
    EXPECT_LE(max_abs(f2, f), 1e-6);
    EXPECT_LE(max_abs(w2, w), 1e-6);
    auto [f3, w3] = b->inverse(f, w);
    EXPECT_LE(max_abs(f3, f), 1e-6);
    EXPECT_LE(max_abs(w3, w), 1e-6);
}

TEST(CouplingBlock, AdditiveCase) {
    CouplingBlock b(8);
    neutralize(b);
    make_identity(b->phi_add, 8);
    torch::manual_seed(2);
    auto f = torch::randn({1, 8, 4, 4}), w = torch::randn({1, 8, 4, 4});
    auto [f2, w2] = b(f, w);
    EXPECT_LE(max_abs(f2, f + w), 1e-6);
    EXPECT_LE(max_abs(w2, w), 1e-6);
}

TEST(CouplingBlock, OutputBoundFromDeltaAndAlphaRanges) {
    torch::NoGradGuard g;
    for (int t = 0; t < 100; ++t) {
        torch::manual_seed(100 + t);
        CouplingBlock b(4);
        auto f = torch::randn({1, 4, 4, 4}) * 3, w = torch::randn({1, 4, 4, 4}) * 3;
        auto [f2, w2] = b(f, w);
        ASSERT_TRUE(torch::isfinite(w2).all().item<bool>());
        const double c = b->opt.alpha_scale;
        auto bound = w.abs() * 1.9 * std::exp(c) + b->mu(f2).abs().max();
        EXPECT_TRUE((w2.abs() <= bound + 1e-5).all().item<bool>());
    }
}

TEST(CouplingBlock, SubMapRanges) {
    torch::manual_seed(3);
    CouplingBlock b(8);
    auto x = torch::randn({2, 8, 6, 6}) * 5;
    auto d = b->delta(x);
    EXPECT_GE(d.min().item<double>(), 0.1);
    EXPECT_LE(d.max().item<double>(), 1.9);
    // delta is constant over space, eta over channels
    EXPECT_EQ(max_abs(d, d.select(2, 0).select(2, 0).unsqueeze(-1).unsqueeze(-1).expand_as(d)), 0.0);
    auto e = b->eta(x);
    EXPECT_EQ(max_abs(e, e.select(1, 0).unsqueeze(1).expand_as(e)), 0.0);
}

TEST(CouplingBlock, Validation) {
    CouplingOptions bad;
    bad.alpha_scale = 4.5;
    EXPECT_THROW(CouplingBlock(8, bad), ConfigError);
    bad.alpha_scale = 0.0;
    EXPECT_THROW(CouplingBlock(8, bad), ConfigError);
    CouplingBlock b(8);
    EXPECT_THROW(b(torch::zeros({1, 8, 4, 4}), torch::zeros({1, 8, 4, 2})), DimensionError);
    EXPECT_THROW(b(torch::zeros({1, 4, 4, 4}), torch::zeros({1, 4, 4, 4})), DimensionError);
    auto bad_in = torch::zeros({1, 8, 4, 4});
    bad_in[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(b(bad_in, torch::zeros({1, 8, 4, 4})), NumericError);
    EXPECT_THROW(CopyrightProtection(8, 0), ConfigError);
    EXPECT_THROW(CopyrightProtection(8, 9), ConfigError);
}

TEST(CouplingBlock, RoundTripFloat32AndFloat64) {
    for (int i = 0; i < 64; ++i) {
        auto d = round_trip(1 + i % 8, 1000 + i);
        EXPECT_LE(d.err32, 1e-4) << "N=" << 1 + i % 8;
        EXPECT_LE(d.err64, 1e-10) << "N=" << 1 + i % 8;
    }
}

TEST(CouplingBlock, StackErrorGrowsSublinearly) {
    double e1 = 0, e8 = 0;
    for (int t = 0; t < 50; ++t) {
        e1 += round_trip(1, 5000 + t).err32;
        e8 += round_trip(8, 5000 + t).err32;
    }
    EXPECT_LE(e8, 10.0 * e1) << "mean N=1 " << e1 / 50 << ", mean N=8 " << e8 / 50;
}

TEST(CouplingBlock, LogDetMatchesBruteForceJacobian) {
    torch::manual_seed(4);
    CouplingBlock b(4);
    b->to(torch::kFloat64);
    auto f = torch::randn({1, 4, 2, 2}, torch::kFloat64), w = torch::randn({1, 4, 2, 2}, torch::kFloat64);
    auto x = torch::cat({f, w}, 1).reshape(-1).requires_grad_();
    auto out = [&](const torch::Tensor& v) {
        auto s = v.reshape({1, 8, 2, 2});
        auto [a, c] = b(s.narrow(1, 0, 4), s.narrow(1, 4, 4));
        return torch::cat({a, c}, 1).reshape(-1);
    };
    auto y = out(x);
    std::vector<torch::Tensor> rows;
    for (int64_t i = 0; i < y.numel(); ++i) rows.push_back(torch::autograd::grad({y[i]}, {x}, {}, true)[0]);
    auto J = torch::stack(rows);
    auto [sign, logabs] = torch::slogdet(J);
    EXPECT_NEAR(logabs.item<double>(), b->log_det(f, w).item<double>(), 1e-8);
    EXPECT_GT(sign.item<double>(), 0.0);

    CopyrightProtection p(4, 3);
    p->to(torch::kFloat64);
    auto total = p->log_det(f, w);
    double sum = 0;
    auto ff = f, ww = w;
    for (auto& blk : p->blocks) {
        sum += blk->log_det(ff, ww).item<double>();
        std::tie(ff, ww) = blk(ff, ww);
    }
    EXPECT_NEAR(total.item<double>(), sum, 1e-10);
}

TEST(CouplingBlock, ParameterGradientsMatchFiniteDifferences) {
    torch::manual_seed(5);
    CouplingBlock b(4);
    b->to(torch::kFloat64);
    auto f = torch::randn({1, 4, 4, 4}, torch::kFloat64), w = torch::randn({1, 4, 4, 4}, torch::kFloat64);
    auto probe = [&] {
        auto [a, c] = b(f, w);
        return gradcheck::probe(a, 1) + gradcheck::probe(c, 2);
    };
    for (auto* sub : std::initializer_list<nn::Module*>{b->phi_add.get(), b->delta.get(), b->eta.get(), b->phi_mul.get(), b->mu.get()}) {
        auto r = gradcheck::check_module_params(*sub, probe, 10);
        EXPECT_LE(r.max_rel, 1e-3) << sub->name();
        EXPECT_GE(r.checked, 10);
    }
    auto fi = f.clone().requires_grad_();
    EXPECT_LE(gradcheck::check_grad([&] { return gradcheck::probe(b->delta(fi)) + gradcheck::probe(b->eta(fi), 3); }, fi, 10).max_rel, 1e-3);
}

TEST(Protection, IdentityStackAndShapes) {
    CopyrightProtection p(8, 1);
    neutralize(p->blocks[0]);
    torch::manual_seed(6);
    auto f = torch::randn({2, 8, 4, 4}), w = torch::randn({2, 8, 4, 4});
    auto r = p->protect(f, w);
    EXPECT_LE(max_abs(r.protected_features, f), 1e-6);
    EXPECT_LE(max_abs(r.key.payload, w), 1e-6);
    EXPECT_EQ(r.key.payload.sizes(), w.sizes());
    EXPECT_TRUE(r.key.verify());
}

TEST(Protection, WrongKeyYieldsUselessContent) {
    torch::NoGradGuard g;
    for (int t = 0; t < 20; ++t) {
        torch::manual_seed(200 + t);
        CopyrightProtection p(8, 4);
        auto f = torch::randn({1, 8, 8, 8}), w = torch::randn({1, 8, 8, 8});
        auto r = p->protect(f, w);
        KeyArtifact wrong;
        wrong.payload = torch::randn_like(r.key.payload) * r.key.payload.std();
        wrong.seal();
        auto [f2, w2] = p->recover(r.protected_features, wrong);
        EXPECT_GT(((f2 - f).norm() / f.norm()).item<double>(), 0.1);
    }
}

TEST(Protection, RecoverChecksKey) {
    torch::manual_seed(7);
    CopyrightProtection p(8, 2);
    auto f = torch::randn({1, 8, 4, 4}), w = torch::randn({1, 8, 4, 4});
    auto r = p->protect(f, w);
    auto tampered = r.key;
    tampered.payload = tampered.payload.clone();
    tampered.payload[0][0][0][0] += 1.0;
    EXPECT_THROW(p->recover(r.protected_features, tampered), AuthenticationError);
    KeyArtifact other;
    other.payload = torch::randn({1, 8, 2, 2});
    other.seal();
    EXPECT_THROW(p->recover(r.protected_features, other), KeyIncompatibleError);
}

TEST(KeyFile, ByteLayoutMatchesDocumentedFormat) {
    KeyArtifact k;
    k.payload = torch::arange(6, torch::kFloat32).reshape({1, 2, 3}) * 0.5;
    for (std::size_t i = 0; i < k.fingerprint.size(); ++i) k.fingerprint[i] = static_cast<uint8_t>(i * 7);
    k.seal();
    auto bytes = k.encode();
    ASSERT_EQ(bytes.size(), 8u + 2 + 16 + 1 + 3 * 4 + 1 + 6 * 4 + 4);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "AMIFKEY1");
    EXPECT_EQ(bytes[8], 1);
    EXPECT_EQ(bytes[9], 0);
    EXPECT_EQ(bytes[10 + 3], 21);
    EXPECT_EQ(bytes[26], 3);                       // rank
    EXPECT_EQ(bytes[27], 1);                       // dim 0, u32 LE
    EXPECT_EQ(bytes[31], 2);
    EXPECT_EQ(bytes[35], 3);
    EXPECT_EQ(bytes[39], 0);                       // dtype
    float second = 0;
    std::memcpy(&second, bytes.data() + 40 + 4, 4);
    EXPECT_EQ(second, 0.5f);
    uint32_t crc = 0;
    std::memcpy(&crc, bytes.data() + bytes.size() - 4, 4);
    EXPECT_EQ(crc, crc32_oracle(bytes.data(), bytes.size() - 4));
    EXPECT_EQ(crc, k.checksum);
}

TEST(KeyFile, RoundTripIsBitExact) {
    torch::manual_seed(8);
    KeyArtifact k;
    k.payload = torch::randn({1, 16, 5, 7});
    k.fingerprint.fill(0xAB);
    k.seal();
    auto dir = temp_dir("key");
    k.save(dir / "a.key");
    auto back = KeyArtifact::load(dir / "a.key");
    EXPECT_TRUE(torch::equal(back.payload, k.payload));
    EXPECT_EQ(back.fingerprint, k.fingerprint);
    EXPECT_EQ(back.encode(), k.encode());
    EXPECT_EQ(io::read_file(dir / "a.key"), k.encode());
    EXPECT_FALSE(fs::exists(dir / "a.key.tmp"));
    fs::remove_all(dir);
}

TEST(KeyFile, CorruptionAndIncompatibility) {
    KeyArtifact k;
    k.payload = torch::ones({1, 4, 2, 2});
    k.seal();
    auto good = k.encode();

    auto flipped = good;
    flipped[45] ^= 0x01;
    EXPECT_THROW(KeyArtifact::decode(flipped), AuthenticationError);

    auto truncated = io::Bytes(good.begin(), good.begin() + 20);
    EXPECT_THROW(KeyArtifact::decode(truncated), AuthenticationError);
    auto short_body = io::Bytes(good.begin(), good.end() - 9);
    EXPECT_THROW(KeyArtifact::decode(short_body), AuthenticationError);

    auto reseal = [](io::Bytes b) {
        b.resize(b.size() - 4);
        const auto c = crc32_oracle(b.data(), b.size());
        for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(c >> (8 * i)));
        return b;
    };
    auto v2 = good;
    v2[8] = 2;
    EXPECT_THROW(KeyArtifact::decode(reseal(v2)), KeyIncompatibleError);
    auto f64 = good;
    f64[8 + 2 + 16 + 1 + 4 * 4] = 1;
    EXPECT_THROW(KeyArtifact::decode(reseal(f64)), KeyIncompatibleError);
    auto magic = good;
    magic[0] = 'X';
    EXPECT_THROW(KeyArtifact::decode(reseal(magic)), AuthenticationError);
}
