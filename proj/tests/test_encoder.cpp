#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "uvet/checkpoint.hpp"
#include "uvet/kernels.hpp"
#include "uvet/synthetic.hpp"

using namespace uvet;

namespace {

bool params_bitwise_equal(const EncoderParams& a, const EncoderParams& b) {
    if (!bitwise_equal(a.patch_weight, b.patch_weight) || !bitwise_equal(a.patch_bias, b.patch_bias) ||
        !bitwise_equal(a.pos_embed, b.pos_embed) || !bitwise_equal(a.cls_embed, b.cls_embed)) {
        return false;
    }
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const LayerParams& x = a.layers[i];
        const LayerParams& y = b.layers[i];
        if (!bitwise_equal(x.ln1_gain, y.ln1_gain) || !bitwise_equal(x.wq, y.wq) ||
            !bitwise_equal(x.wk, y.wk) || !bitwise_equal(x.wv, y.wv) || !bitwise_equal(x.wo, y.wo) ||
            !bitwise_equal(x.w1, y.w1) || !bitwise_equal(x.w2, y.w2)) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("config validation") {
    EncoderConfig c = oracle::tiny_encoder_config();
    CHECK_NOTHROW(c.validate());
    c.patch_size = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = oracle::tiny_encoder_config();
    c.num_heads = 3;  // does not divide 16
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = oracle::tiny_encoder_config();
    c.channels = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    EncoderConfig g;
    g.image_size = 32;
    g.patch_size = 8;
    g.include_cls = false;
    CHECK(g.num_tokens() == 16);
    g.include_cls = true;
    CHECK(g.num_tokens() == 17);
}

TEST_CASE("init_params is deterministic per seed and seed-sensitive") {
    const EncoderConfig cfg = oracle::tiny_encoder_config();
    const EncoderParams a = init_params(cfg, 42);
    const EncoderParams b = init_params(cfg, 42);
    CHECK(params_bitwise_equal(a, b));

    const EncoderParams c = init_params(cfg, 43);
    CHECK(!params_bitwise_equal(a, c));

    // shape arithmetic: 32/8 grid without CLS -> 16 x d positional table
    EncoderConfig g = oracle::toy_encoder_config();
    g.include_cls = false;
    const EncoderParams p = init_params(g, 1);
    CHECK(p.pos_embed.rows() == 16);
    CHECK(p.pos_embed.cols() == g.hidden_dim);
    CHECK(p.cls_embed.size() == 0);
}

TEST_CASE("encode is pure and input-sensitive") {
    const EncoderConfig cfg = oracle::tiny_encoder_config();
    const EncoderParams params = init_params(cfg, 7);
    const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 1);

    const HiddenStates a = encode(image, params, cfg);
    const HiddenStates b = encode(image, params, cfg);
    CHECK(a.states.size() == cfg.num_layers + 1);
    CHECK(oracle::states_bitwise_equal(a, b));
    for (const Tensor& s : a.states) CHECK(s.all_finite());

    Tensor poked = Tensor::zeros({cfg.image_size, cfg.image_size, 1});
    Tensor zero = poked;
    poked.at(5) = 255.0;
    const HiddenStates hz = encode(zero, params, cfg);
    const HiddenStates hp = encode(poked, params, cfg);
    CHECK(max_abs_diff(hz.layer(1), hp.layer(1)) > 0.0);

    CHECK_THROWS_AS(encode(Tensor({8, 8, 1}), params, cfg), DimensionError);
}

TEST_CASE("permuting two input patches permutes the embedding rows") {
    EncoderConfig cfg = oracle::toy_encoder_config();
    EncoderParams params = init_params(cfg, 3);
    // null positional table so the layer-0 state is the patch embedding itself
    params.pos_embed = Tensor::zeros(params.pos_embed.shape());
    const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 2);

    // swap patch (0,0) with patch (2,1) at pixel level
    Tensor swapped = image;
    const std::size_t ps = cfg.patch_size, w = cfg.image_size;
    const std::size_t gy = 2, gx = 1;
    for (std::size_t py = 0; py < ps; ++py) {
        for (std::size_t px = 0; px < ps; ++px) {
            std::swap(swapped.at((py * w) + px), swapped.at(((gy * ps + py) * w) + gx * ps + px));
        }
    }
    const std::size_t pa = 0, pb = gy * cfg.grid() + gx;

    const HiddenStates ha = encode(image, params, cfg);
    const HiddenStates hb = encode(swapped, params, cfg);
    const std::size_t off = cfg.include_cls ? 1 : 0;
    for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
        CHECK(ha.layer(0)(off + pa, j) == hb.layer(0)(off + pb, j));
        CHECK(ha.layer(0)(off + pb, j) == hb.layer(0)(off + pa, j));
    }
    // untouched patches keep their rows bitwise
    CHECK(ha.layer(0)(off + 5, 0) == hb.layer(0)(off + 5, 0));
}

TEST_CASE("encode agrees with the naive serial reference encoder") {
    for (bool cls : {true, false}) {
        EncoderConfig cfg = oracle::tiny_encoder_config();
        cfg.include_cls = cls;
        const EncoderParams params = init_params(cfg, 11);
        const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 4);
        const HiddenStates fast = encode(image, params, cfg);
        const HiddenStates ref = oracle::ref_encode(image, params, cfg);
        CHECK(oracle::max_state_diff(fast, ref) < 1e-10);
    }
}

TEST_CASE("masked_encode contracts (Eq. 4)") {
    const EncoderConfig cfg = oracle::toy_encoder_config();
    const EncoderParams params = init_params(cfg, 19);
    const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 5);
    const HiddenStates plain = encode(image, params, cfg);
    const std::size_t n = cfg.num_tokens();

    SUBCASE("all-ones mask is bitwise identical to plain encode") {
        const HiddenStates m = masked_encode(image, params, cfg, std::vector<double>(n, 1.0),
                                             {1, cfg.num_layers});
        CHECK(oracle::states_bitwise_equal(plain, m));
    }

    SUBCASE("empty mask range is bitwise identical for any mask") {
        std::vector<double> mask(n, 0.0);
        mask[3] = 1.0;
        const HiddenStates m = masked_encode(image, params, cfg, mask, LayerRange{1, 0});
        CHECK(oracle::states_bitwise_equal(plain, m));
    }

    SUBCASE("all-zeros mask equals the hard-zeroed attention branch oracle, bitwise") {
        const LayerRange range{2, 3};
        const HiddenStates m = masked_encode(image, params, cfg, std::vector<double>(n, 0.0), range);
        const HiddenStates ref = oracle::traced_zero_attention_forward(image, params, cfg, range);
        CHECK(oracle::states_bitwise_equal(m, ref));
    }

    SUBCASE("layers before the mask range are bitwise unchanged") {
        std::vector<double> mask(n, 1.0);
        mask[5] = 0.0;  // single token masked
        const LayerRange range{3, 3};
        const HiddenStates m = masked_encode(image, params, cfg, mask, range);
        for (std::size_t l = 0; l < range.first; ++l) {
            CHECK(bitwise_equal(plain.states[l], m.states[l]));
        }
        CHECK(!bitwise_equal(plain.states[range.first], m.states[range.first]));
        for (const Tensor& s : m.states) CHECK(s.all_finite());
    }

    SUBCASE("mask length mismatch is a dimension error") {
        CHECK_THROWS_AS(masked_encode(image, params, cfg, std::vector<double>(n - 1, 1.0), {1, 1}),
                        DimensionError);
    }

    SUBCASE("fractional weights attenuate rather than zero") {
        const HiddenStates soft = masked_encode(image, params, cfg, std::vector<double>(n, 0.5),
                                                {1, cfg.num_layers});
        const HiddenStates hard = masked_encode(image, params, cfg, std::vector<double>(n, 0.0),
                                                {1, cfg.num_layers});
        CHECK(oracle::max_state_diff(plain, soft) > 0.0);
        CHECK(oracle::max_state_diff(soft, hard) > 0.0);
    }
}

TEST_CASE("mc dropout estimate") {
    const EncoderConfig cfg = oracle::tiny_encoder_config();
    const EncoderParams params = init_params(cfg, 23);
    const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 6);

    SUBCASE("p = 0 gives exactly zero variance") {
        const DropoutEstimate est = mc_dropout_encode(image, params, cfg, 0.0, 16, 9);
        for (double v : est.token_variance) CHECK(v == 0.0);
    }

    SUBCASE("same seed reproduces the estimate bitwise") {
        const DropoutEstimate a = mc_dropout_encode(image, params, cfg, 0.5, 64, 9);
        const DropoutEstimate b = mc_dropout_encode(image, params, cfg, 0.5, 64, 9);
        CHECK(a.token_variance == b.token_variance);
        for (double v : a.token_variance) CHECK(v >= 0.0);
    }

    SUBCASE("two seeds agree within 10% for most tokens at 1000 samples") {
        const DropoutEstimate a = mc_dropout_encode(image, params, cfg, 0.5, 1000, 100);
        const DropoutEstimate b = mc_dropout_encode(image, params, cfg, 0.5, 1000, 200);
        std::size_t close = 0;
        for (std::size_t i = 0; i < a.token_variance.size(); ++i) {
            const double rel = std::fabs(a.token_variance[i] - b.token_variance[i]) /
                               std::max(a.token_variance[i], 1e-300);
            if (rel < 0.10) ++close;
        }
        CHECK(close * 10 >= a.token_variance.size() * 9);
    }

    SUBCASE("argument validation") {
        CHECK_THROWS_AS(mc_dropout_encode(image, params, cfg, 1.0, 16, 9), ConfigError);
        CHECK_THROWS_AS(mc_dropout_encode(image, params, cfg, -0.1, 16, 9), ConfigError);
        CHECK_THROWS_AS(mc_dropout_encode(image, params, cfg, 0.5, 1, 9), UsageError);
    }
}

TEST_CASE("checkpoint round-trip preserves params bitwise") {
    const EncoderConfig cfg = oracle::tiny_encoder_config();
    const EncoderParams params = init_params(cfg, 31);
    const std::string path = "test_encoder_ckpt.uvet";
    save_checkpoint(path, cfg, params);
    const auto [cfg2, params2] = load_checkpoint(path);
    CHECK(cfg2 == cfg);
    CHECK(params_bitwise_equal(params, params2));
    std::remove(path.c_str());
}
