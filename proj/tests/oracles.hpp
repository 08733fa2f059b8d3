#pragma once

// Test-only oracles, independent of the implementation paths they check.

#include <cmath>
#include <vector>

#include "uvet/autodiff.hpp"
#include "uvet/encoder.hpp"
#include "uvet/serial_ref.hpp"
#include "uvet/stats.hpp"

namespace oracle {

using namespace uvet;

// ---------------------------------------------------------------------------
// Naive serial reference encoder: plain loops via serial:: kernels, written
// independently of encode(). Agreement is numerical (summation orders differ),
// so compare with a tolerance.
// ---------------------------------------------------------------------------
inline Tensor ref_patchify(const Tensor& image, const EncoderConfig& c) {
    Tensor out({c.num_patches(), c.patch_dim()});
    const std::size_t g = c.grid(), ps = c.patch_size, w = c.image_size, ch = c.channels;
    for (std::size_t gy = 0; gy < g; ++gy) {
        for (std::size_t gx = 0; gx < g; ++gx) {
            std::size_t q = 0;
            for (std::size_t py = 0; py < ps; ++py) {
                for (std::size_t px = 0; px < ps; ++px) {
                    for (std::size_t cc = 0; cc < ch; ++cc) {
                        out(gy * g + gx, q++) =
                            image.at((((gy * ps + py) * w) + gx * ps + px) * ch + cc) / 255.0;
                    }
                }
            }
        }
    }
    return out;
}

inline Tensor ref_add_rowvec(const Tensor& a, const Tensor& v) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) + v.at(j);
    }
    return out;
}

// zero_attn: layers whose concatenated attention output is structurally
// replaced by zeros (empty range = plain forward)
inline HiddenStates ref_encode(const Tensor& image, const EncoderParams& p, const EncoderConfig& c,
                               LayerRange zero_attn = {1, 0}) {
    const std::size_t n = c.num_tokens(), d = c.hidden_dim, dh = c.head_dim();
    Tensor emb = ref_add_rowvec(serial::matmul(ref_patchify(image, c), p.patch_weight), p.patch_bias);
    Tensor x({n, d});
    std::size_t row0 = 0;
    if (c.include_cls) {
        for (std::size_t j = 0; j < d; ++j) x(0, j) = p.cls_embed.at(j);
        row0 = 1;
    }
    for (std::size_t i = 0; i < c.num_patches(); ++i) {
        for (std::size_t j = 0; j < d; ++j) x(row0 + i, j) = emb(i, j);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) x(i, j) += p.pos_embed(i, j);
    }

    HiddenStates hs;
    hs.states.push_back(x);
    for (std::size_t t = 1; t <= c.num_layers; ++t) {
        const LayerParams& lp = p.layers[t - 1];
        const Tensor a = serial::layer_norm(x, lp.ln1_gain, lp.ln1_bias, kLayerNormEps);
        const Tensor q = ref_add_rowvec(serial::matmul(a, lp.wq), lp.bq);
        const Tensor k = ref_add_rowvec(serial::matmul(a, lp.wk), lp.bk);
        const Tensor v = ref_add_rowvec(serial::matmul(a, lp.wv), lp.bv);

        Tensor ctx({n, d});
        if (!zero_attn.contains(t)) {
            for (std::size_t h = 0; h < c.num_heads; ++h) {
                Tensor qh({n, dh}), kh({n, dh}), vh({n, dh});
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < dh; ++j) {
                        qh(i, j) = q(i, h * dh + j);
                        kh(i, j) = k(i, h * dh + j);
                        vh(i, j) = v(i, h * dh + j);
                    }
                }
                Tensor scores({n, n});
                const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (std::size_t l = 0; l < dh; ++l) s += qh(i, l) * kh(j, l);
                        scores(i, j) = s * scale;
                    }
                }
                const Tensor attn = serial::softmax_rows(scores);
                const Tensor ch = serial::matmul(attn, vh);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < dh; ++j) ctx(i, h * dh + j) = ch(i, j);
                }
            }
        }
        const Tensor attn_out = ref_add_rowvec(serial::matmul(ctx, lp.wo), lp.bo);
        for (std::size_t i = 0; i < x.size(); ++i) x.at(i) += attn_out.at(i);

        const Tensor b = serial::layer_norm(x, lp.ln2_gain, lp.ln2_bias, kLayerNormEps);
        const Tensor h1 = serial::gelu(ref_add_rowvec(serial::matmul(b, lp.w1), lp.b1));
        const Tensor mlp = ref_add_rowvec(serial::matmul(h1, lp.w2), lp.b2);
        for (std::size_t i = 0; i < x.size(); ++i) x.at(i) += mlp.at(i);
        hs.states.push_back(x);
    }
    return hs;
}

// ---------------------------------------------------------------------------
// Tape-replica forward that hard-zeros the concatenated attention output in
// `zero_attn` layers. Mirrors the production op sequence exactly (same
// kernels, same order), so agreement with masked_encode under an all-zeros
// mask is bitwise; it never touches the row_scale masking path being checked.
// ---------------------------------------------------------------------------
inline HiddenStates traced_zero_attention_forward(const Tensor& image, const EncoderParams& p,
                                                  const EncoderConfig& c, LayerRange zero_attn) {
    ad::Tape tape;
    const ad::NodeId input = tape.leaf(image);
    const std::size_t dh = c.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<std::size_t> idx;
    {
        const std::size_t g = c.grid(), ps = c.patch_size, w = c.image_size, ch = c.channels;
        for (std::size_t gy = 0; gy < g; ++gy)
            for (std::size_t gx = 0; gx < g; ++gx)
                for (std::size_t py = 0; py < ps; ++py)
                    for (std::size_t px = 0; px < ps; ++px)
                        for (std::size_t cc = 0; cc < ch; ++cc)
                            idx.push_back(((gy * ps + py) * w + gx * ps + px) * ch + cc);
    }

    ad::NodeId x01 = tape.scale(input, 1.0 / 255.0);
    ad::NodeId patches = tape.gather(x01, idx, {c.num_patches(), c.patch_dim()});
    ad::NodeId emb = tape.add_rowvec(tape.matmul(patches, tape.leaf(p.patch_weight)),
                                     tape.leaf(p.patch_bias));
    ad::NodeId tokens = c.include_cls ? tape.concat_rows(tape.leaf(p.cls_embed), emb) : emb;
    ad::NodeId x = tape.add(tokens, tape.leaf(p.pos_embed));

    HiddenStates hs;
    hs.states.push_back(tape.value(x));
    for (std::size_t t = 1; t <= c.num_layers; ++t) {
        const LayerParams& lp = p.layers[t - 1];
        ad::NodeId a = tape.layer_norm(x, tape.leaf(lp.ln1_gain), tape.leaf(lp.ln1_bias), kLayerNormEps);
        ad::NodeId q = tape.add_rowvec(tape.matmul(a, tape.leaf(lp.wq)), tape.leaf(lp.bq));
        ad::NodeId k = tape.add_rowvec(tape.matmul(a, tape.leaf(lp.wk)), tape.leaf(lp.bk));
        ad::NodeId v = tape.add_rowvec(tape.matmul(a, tape.leaf(lp.wv)), tape.leaf(lp.bv));
        std::vector<ad::NodeId> heads;
        for (std::size_t h = 0; h < c.num_heads; ++h) {
            ad::NodeId qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
            ad::NodeId kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
            ad::NodeId vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
            ad::NodeId attn = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), attn_scale));
            heads.push_back(tape.matmul(attn, vh));
        }
        ad::NodeId ctx = tape.concat_cols(heads);
        if (zero_attn.contains(t)) {
            ctx = tape.leaf(Tensor::zeros(tape.value(ctx).shape()));  // hard-zeroed branch
        }
        ad::NodeId attn_out = tape.add_rowvec(tape.matmul(ctx, tape.leaf(lp.wo)), tape.leaf(lp.bo));
        x = tape.add(x, attn_out);
        ad::NodeId b = tape.layer_norm(x, tape.leaf(lp.ln2_gain), tape.leaf(lp.ln2_bias), kLayerNormEps);
        ad::NodeId h1 = tape.gelu(tape.add_rowvec(tape.matmul(b, tape.leaf(lp.w1)), tape.leaf(lp.b1)));
        ad::NodeId mlp = tape.add_rowvec(tape.matmul(h1, tape.leaf(lp.w2)), tape.leaf(lp.b2));
        x = tape.add(x, mlp);
        hs.states.push_back(tape.value(x));
    }
    return hs;
}

// ---------------------------------------------------------------------------
// Exhaustive 2^n Wilcoxon oracle (two-sided), same p-value convention as the
// library: 2 * min(P(W+ <= w), P(W+ >= w)) capped at 1.
// ---------------------------------------------------------------------------
inline double wilcoxon_bruteforce_two_sided(const std::vector<double>& diff) {
    const std::size_t n = diff.size();
    std::vector<double> abs_diff(n);
    for (std::size_t i = 0; i < n; ++i) abs_diff[i] = std::fabs(diff[i]);
    const std::vector<double> ranks = stats::average_ranks(abs_diff);
    double w_obs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (diff[i] > 0.0) w_obs += ranks[i];
    }
    std::size_t le = 0, ge = 0;
    const std::size_t total = std::size_t{1} << n;
    for (std::size_t mask = 0; mask < total; ++mask) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (std::size_t{1} << i)) w += ranks[i];
        }
        if (w <= w_obs + 1e-9) ++le;
        if (w >= w_obs - 1e-9) ++ge;
    }
    const double p_le = static_cast<double>(le) / static_cast<double>(total);
    const double p_ge = static_cast<double>(ge) / static_cast<double>(total);
    return std::min(1.0, 2.0 * std::min(p_le, p_ge));
}

// Eq. 2 aggregation as literally written: per-layer min-max then average.
inline std::vector<double> aggregate_bruteforce(const std::vector<std::vector<double>>& layers) {
    const std::size_t n = layers.front().size();
    std::vector<double> u(n, 0.0);
    for (const auto& l : layers) {
        double lo = l[0], hi = l[0];
        for (double v : l) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi == lo) continue;
        for (std::size_t i = 0; i < n; ++i) u[i] += (l[i] - lo) / (hi - lo);
    }
    for (double& v : u) v /= static_cast<double>(layers.size());
    return u;
}

// Eq. 3 as literally written with sign/floor; ties (sign(0)) fall to certain.
inline std::vector<double> binarize_bruteforce(const std::vector<double>& u, double sigma_th) {
    const double n = static_cast<double>(u.size());
    double mean = 0.0;
    for (double v : u) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : u) var += (v - mean) * (v - mean);
    var /= n;
    const double sigma = std::sqrt(var);
    std::vector<double> m(u.size(), 1.0);
    if (sigma == 0.0) return m;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double z = (u[i] - mean) / sigma - sigma_th;
        const double sgn = z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0);
        m[i] = 1.0 - 0.5 * std::floor(sgn + 1.0);
    }
    return m;
}

inline double max_state_diff(const HiddenStates& a, const HiddenStates& b) {
    double worst = 0.0;
    for (std::size_t l = 0; l < a.states.size(); ++l) {
        worst = std::max(worst, max_abs_diff(a.states[l], b.states[l]));
    }
    return worst;
}

inline bool states_bitwise_equal(const HiddenStates& a, const HiddenStates& b) {
    if (a.states.size() != b.states.size()) return false;
    for (std::size_t l = 0; l < a.states.size(); ++l) {
        if (!bitwise_equal(a.states[l], b.states[l])) return false;
    }
    return true;
}

inline EncoderConfig tiny_encoder_config() {
    EncoderConfig c;
    c.image_size = 16;
    c.patch_size = 8;
    c.channels = 1;
    c.num_layers = 2;
    c.hidden_dim = 16;
    c.num_heads = 2;
    c.mlp_ratio = 2.0;
    c.include_cls = true;
    return c;
}

inline EncoderConfig toy_encoder_config(std::size_t layers = 4) {
    EncoderConfig c;
    c.image_size = 32;
    c.patch_size = 8;
    c.channels = 1;
    c.num_layers = layers;
    c.hidden_dim = 32;
    c.num_heads = 4;
    c.mlp_ratio = 2.0;
    c.include_cls = true;
    return c;
}

}  // namespace oracle
