#include "uvet/encoder.hpp"

#include <cmath>
#include <string>

#include "uvet/kernels.hpp"

namespace uvet {

std::size_t EncoderConfig::mlp_hidden() const {
    const double h = mlp_ratio * static_cast<double>(hidden_dim);
    return static_cast<std::size_t>(h + 0.5);
}

void EncoderConfig::validate() const {
    if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0) {
        throw ConfigError("encoder: image_size must be a positive multiple of patch_size");
    }
    if (channels != 1 && channels != 3) throw ConfigError("encoder: channels must be 1 or 3");
    if (num_layers == 0) throw ConfigError("encoder: num_layers must be positive");
    if (hidden_dim == 0 || num_heads == 0 || hidden_dim % num_heads != 0) {
        throw ConfigError("encoder: hidden_dim must be a positive multiple of num_heads");
    }
    if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) throw ConfigError("encoder: mlp_ratio must be positive");
}

std::size_t EncoderParams::param_count() const {
    std::size_t n = patch_weight.size() + patch_bias.size() + pos_embed.size() + cls_embed.size();
    for (const LayerParams& l : layers) {
        n += l.ln1_gain.size() + l.ln1_bias.size() + l.wq.size() + l.bq.size() + l.wk.size() +
             l.bk.size() + l.wv.size() + l.bv.size() + l.wo.size() + l.bo.size() +
             l.ln2_gain.size() + l.ln2_bias.size() + l.w1.size() + l.b1.size() + l.w2.size() +
             l.b2.size();
    }
    return n;
}

namespace {

Tensor draw_normal(Rng& rng, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.normal(0.0, stddev);
    return t;
}

}  // namespace

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const std::size_t d = config.hidden_dim;
    // Patch embeddings dominate the residual stream so a token's pre-norm
    // spread tracks its patch content; weak-signal patches then amplify both
    // input perturbations and injected noise through the LN Jacobian, which
    // is what gives the toy encoder token-dependent uncertainty at all.
    const double patch_std = 1.0;
    const double pos_std = 0.05;
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));

    EncoderParams p;
    p.patch_weight = draw_normal(rng, {config.patch_dim(), d}, patch_std);
    p.patch_bias = Tensor::zeros({1, d});
    p.pos_embed = draw_normal(rng, {config.num_tokens(), d}, pos_std);
    if (config.include_cls) p.cls_embed = draw_normal(rng, {1, d}, pos_std);

    p.layers.resize(config.num_layers);
    const std::size_t mh = config.mlp_hidden();
    for (LayerParams& l : p.layers) {
        l.ln1_gain = Tensor::full({1, d}, 1.0);
        l.ln1_bias = Tensor::zeros({1, d});
        l.wq = draw_normal(rng, {d, d}, proj_std);
        l.bq = Tensor::zeros({1, d});
        l.wk = draw_normal(rng, {d, d}, proj_std);
        l.bk = Tensor::zeros({1, d});
        l.wv = draw_normal(rng, {d, d}, proj_std);
        l.bv = Tensor::zeros({1, d});
        l.wo = draw_normal(rng, {d, d}, proj_std);
        l.bo = Tensor::zeros({1, d});
        l.ln2_gain = Tensor::full({1, d}, 1.0);
        l.ln2_bias = Tensor::zeros({1, d});
        l.w1 = draw_normal(rng, {d, mh}, proj_std);
        l.b1 = Tensor::zeros({1, mh});
        l.w2 = draw_normal(rng, {mh, d}, proj_std);
        l.b2 = Tensor::zeros({1, d});
    }
    return p;
}

namespace {

// flat index map realizing patchify: row p = patch (gy, gx), column
// q = (py, px, c) row-major inside the patch
std::vector<std::size_t> patch_gather_index(const EncoderConfig& c) {
    const std::size_t g = c.grid(), ps = c.patch_size, w = c.image_size, ch = c.channels;
    std::vector<std::size_t> idx;
    idx.reserve(c.num_patches() * c.patch_dim());
    for (std::size_t gy = 0; gy < g; ++gy) {
        for (std::size_t gx = 0; gx < g; ++gx) {
            for (std::size_t py = 0; py < ps; ++py) {
                for (std::size_t px = 0; px < ps; ++px) {
                    for (std::size_t cc = 0; cc < ch; ++cc) {
                        idx.push_back(((gy * ps + py) * w + gx * ps + px) * ch + cc);
                    }
                }
            }
        }
    }
    return idx;
}

Tensor dropout_mask(Rng& rng, const Shape& shape, double p) {
    Tensor m(shape);
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.at(i) = rng.uniform() >= p ? keep_scale : 0.0;
    }
    return m;
}

}  // namespace

EncodeGraph encode_traced(const Tensor& image, const EncoderParams& params,
                          const EncoderConfig& config, const ForwardOptions& opts) {
    config.validate();
    const Shape want{config.image_size, config.image_size, config.channels};
    if (image.shape() != want) {
        throw DimensionError("encode: image shape " + shape_str(image.shape()) + ", expected " +
                             shape_str(want));
    }
    const std::size_t n_tokens = config.num_tokens();
    if (opts.token_weights && opts.token_weights->size() != n_tokens) {
        throw DimensionError("encode: mask length " + std::to_string(opts.token_weights->size()) +
                             ", expected " + std::to_string(n_tokens));
    }
    if (opts.dropout_p > 0.0 && opts.dropout_rng == nullptr) {
        throw UsageError("encode: dropout requested without an rng");
    }

    require_finite(image, "encode");

    EncodeGraph g;
    ad::Tape& tape = g.tape;
    g.input = tape.leaf(image, opts.input_requires_grad);
    g.states.reserve(config.num_layers + 1);

    // pixels 0-255 -> [0,1] at the embedding boundary
    ad::NodeId x01 = tape.scale(g.input, 1.0 / 255.0);
    ad::NodeId patches = tape.gather(x01, patch_gather_index(config),
                                     {config.num_patches(), config.patch_dim()});

    ad::NodeId patch_w = tape.leaf(params.patch_weight);
    ad::NodeId patch_b = tape.leaf(params.patch_bias);
    ad::NodeId emb = tape.add_rowvec(tape.matmul(patches, patch_w), patch_b);
    ad::NodeId tokens = emb;
    if (config.include_cls) {
        tokens = tape.concat_rows(tape.leaf(params.cls_embed), emb);
    }
    ad::NodeId x = tape.add(tokens, tape.leaf(params.pos_embed));
    g.states.push_back(x);

    const std::size_t dh = config.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (std::size_t t = 1; t <= config.num_layers; ++t) {
        const LayerParams& lp = params.layers[t - 1];

        ad::NodeId a = tape.layer_norm(x, tape.leaf(lp.ln1_gain), tape.leaf(lp.ln1_bias), kLayerNormEps);
        ad::NodeId q = tape.add_rowvec(tape.matmul(a, tape.leaf(lp.wq)), tape.leaf(lp.bq));
        ad::NodeId k = tape.add_rowvec(tape.matmul(a, tape.leaf(lp.wk)), tape.leaf(lp.bk));
        ad::NodeId v = tape.add_rowvec(tape.matmul(a, tape.leaf(lp.wv)), tape.leaf(lp.bv));

        std::vector<ad::NodeId> head_ctx;
        head_ctx.reserve(config.num_heads);
        for (std::size_t h = 0; h < config.num_heads; ++h) {
            const std::size_t c0 = h * dh, c1 = (h + 1) * dh;
            ad::NodeId qh = tape.slice_cols(q, c0, c1);
            ad::NodeId kh = tape.slice_cols(k, c0, c1);
            ad::NodeId vh = tape.slice_cols(v, c0, c1);
            ad::NodeId scores = tape.scale(tape.matmul_nt(qh, kh), attn_scale);
            ad::NodeId attn = tape.softmax_rows(scores);
            head_ctx.push_back(tape.matmul(attn, vh));
        }
        ad::NodeId ctx = tape.concat_cols(head_ctx);

        if (opts.token_weights && opts.mask_layers.contains(t)) {
            ctx = tape.row_scale(ctx, *opts.token_weights);
        }

        ad::NodeId attn_out = tape.add_rowvec(tape.matmul(ctx, tape.leaf(lp.wo)), tape.leaf(lp.bo));
        if (opts.dropout_p > 0.0) {
            attn_out = tape.mul_const(
                attn_out, dropout_mask(*opts.dropout_rng, tape.value(attn_out).shape(), opts.dropout_p));
        }
        x = tape.add(x, attn_out);

        ad::NodeId b = tape.layer_norm(x, tape.leaf(lp.ln2_gain), tape.leaf(lp.ln2_bias), kLayerNormEps);
        ad::NodeId h1 = tape.gelu(tape.add_rowvec(tape.matmul(b, tape.leaf(lp.w1)), tape.leaf(lp.b1)));
        ad::NodeId mlp = tape.add_rowvec(tape.matmul(h1, tape.leaf(lp.w2)), tape.leaf(lp.b2));
        if (opts.dropout_p > 0.0) {
            mlp = tape.mul_const(
                mlp, dropout_mask(*opts.dropout_rng, tape.value(mlp).shape(), opts.dropout_p));
        }
        x = tape.add(x, mlp);
        g.states.push_back(x);
    }
    return g;
}

namespace {

HiddenStates extract_states(const EncodeGraph& g) {
    HiddenStates hs;
    hs.states.reserve(g.states.size());
    for (ad::NodeId id : g.states) hs.states.push_back(g.tape.value(id));
    return hs;
}

}  // namespace

HiddenStates encode(const Tensor& image, const EncoderParams& params, const EncoderConfig& config) {
    return extract_states(encode_traced(image, params, config, ForwardOptions{}));
}

HiddenStates masked_encode(const Tensor& image, const EncoderParams& params,
                           const EncoderConfig& config, const std::vector<double>& mask,
                           LayerRange mask_layers) {
    ForwardOptions opts;
    opts.token_weights = &mask;
    opts.mask_layers = mask_layers;
    return extract_states(encode_traced(image, params, config, opts));
}

DropoutEstimate mc_dropout_encode(const Tensor& image, const EncoderParams& params,
                                  const EncoderConfig& config, double dropout_p,
                                  std::size_t num_samples, std::uint64_t rng_seed) {
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
        throw ConfigError("mc_dropout: dropout_p must be in [0, 1)");
    }
    if (num_samples < 2) throw UsageError("mc_dropout: need at least 2 samples");
    config.validate();

    DropoutEstimate est;
    est.num_samples = num_samples;
    est.dropout_p = dropout_p;
    est.rng_seed = rng_seed;

    const std::size_t n = config.num_tokens(), d = config.hidden_dim;
    if (dropout_p == 0.0) {
        // every pass is the clean forward; variance is identically zero
        encode(image, params, config);  // still validates the inputs
        est.token_variance.assign(n, 0.0);
        return est;
    }

    // per-sample final states; per-sample rng streams keep any schedule
    // bitwise reproducible
    std::vector<Tensor> finals(num_samples);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(num_samples); ++s) {
        Rng rng(mix_seed(rng_seed, static_cast<std::uint64_t>(s)));
        ForwardOptions opts;
        opts.dropout_p = dropout_p;
        opts.dropout_rng = &rng;
        EncodeGraph g = encode_traced(image, params, config, opts);
        finals[static_cast<std::size_t>(s)] = g.tape.value(g.final_state());
    }

    est.token_variance.assign(n, 0.0);
    Tensor mean({n, d});
    for (const Tensor& f : finals) kern::add_inplace(mean, f);
    mean = kern::scale(mean, 1.0 / static_cast<double>(num_samples));
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (const Tensor& f : finals) {
            for (std::size_t j = 0; j < d; ++j) {
                const double dv = f(i, j) - mean(i, j);
                acc += dv * dv;
            }
        }
        // mean over coordinates of the unbiased per-coordinate variance
        est.token_variance[i] =
            acc / (static_cast<double>(num_samples - 1) * static_cast<double>(d));
    }
    return est;
}

}  // namespace uvet
