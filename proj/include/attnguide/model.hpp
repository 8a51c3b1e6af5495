#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attnguide/ops.hpp"
#include "attnguide/prompt.hpp"
#include "attnguide/tensor.hpp"

namespace attnguide {

// Per-token spatial attention, averaged over the configured blocks and heads.
// patch_token stays on the recording tape, so any scalar derived from it can
// be differentiated back to the denoiser input.
template <typename S>
struct AttentionMap {
    Tensor<S> patch_token;  // (patches, token slots); rows sum to 1 unsmoothed
    int blocks_averaged = 0;
    int heads_averaged = 0;
    bool smoothed = false;

    // Token column as a (grid, grid) spatial map; row = vertical position.
    Tensor<S> token_grid(size_t token_pos) const {
        const size_t g = static_cast<size_t>(std::lround(std::sqrt(
            static_cast<double>(patch_token.size(0)))));
        return reshape(slice_cols(patch_token, token_pos, token_pos + 1), {g, g});
    }
};

template <typename S>
struct DenoiserOutput {
    Tensor<S> eps_hat;                 // predicted noise, image-shaped
    AttentionMap<S> maps;              // mean cross-attention
    std::vector<Tensor<S>> head_maps;  // per (block, head), each (patches, tokens)
};

// Tiny pixel-space text-conditioned denoiser: patch embedding, two
// transformer blocks (self-attention, cross-attention over the prompt tokens,
// MLP; pre-layer-norm with residuals), sinusoidal timestep embedding, and a
// projection back to a noise prediction.
template <typename S>
class DenoiserModel {
public:
    static constexpr size_t kImage = 32;
    static constexpr size_t kChannels = 3;
    static constexpr size_t kPatch = 4;
    static constexpr size_t kGrid = kImage / kPatch;          // 8
    static constexpr size_t kPatches = kGrid * kGrid;         // 64
    static constexpr size_t kPatchDim = kPatch * kPatch * kChannels;  // 48
    static constexpr size_t kDim = 64;
    static constexpr size_t kHeads = 4;
    static constexpr size_t kHeadDim = kDim / kHeads;         // 16
    static constexpr size_t kBlocks = 2;
    static constexpr size_t kMlpHidden = 128;
    static constexpr size_t kTokens = vocab::kPromptLen;      // 8
    static constexpr size_t kVocab = vocab::kTableSize;       // 16

    struct Block {
        Tensor<S> ln1_g, ln1_b;
        Tensor<S> self_wq, self_bq, self_wk, self_bk, self_wv, self_bv, self_wo, self_bo;
        Tensor<S> ln2_g, ln2_b;
        Tensor<S> cross_wq, cross_bq, cross_wk, cross_bk, cross_wv, cross_bv, cross_wo, cross_bo;
        Tensor<S> ln3_g, ln3_b;
        Tensor<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };

    Tensor<S> token_emb;  // (vocab, dim)
    Tensor<S> pos_emb;    // (tokens, dim)
    Tensor<S> patch_w;    // (patch_dim, dim)
    Tensor<S> patch_b;    // (dim)
    Tensor<S> patch_pos;  // (patches, dim); patches carry no location otherwise
    std::array<Block, kBlocks> blocks;
    Tensor<S> ln_f_g, ln_f_b;
    Tensor<S> out_w;  // (dim, patch_dim)
    Tensor<S> out_b;  // (patch_dim)

    static DenoiserModel init(uint64_t seed) {
        DenoiserModel m;
        Rng rng(seed);
        const double std0 = 0.02;
        auto nrm = [&](std::vector<size_t> shape) {
            return Tensor<S>::randn(std::move(shape), rng, std0);
        };
        m.token_emb = nrm({kVocab, kDim});
        m.pos_emb = nrm({kTokens, kDim});
        m.patch_w = nrm({kPatchDim, kDim});
        m.patch_b = Tensor<S>::zeros({kDim});
        m.patch_pos = nrm({kPatches, kDim});
        for (auto& b : m.blocks) {
            b.ln1_g = Tensor<S>::ones({kDim});
            b.ln1_b = Tensor<S>::zeros({kDim});
            b.self_wq = nrm({kDim, kDim});
            b.self_bq = Tensor<S>::zeros({kDim});
            b.self_wk = nrm({kDim, kDim});
            b.self_bk = Tensor<S>::zeros({kDim});
            b.self_wv = nrm({kDim, kDim});
            b.self_bv = Tensor<S>::zeros({kDim});
            b.self_wo = nrm({kDim, kDim});
            b.self_bo = Tensor<S>::zeros({kDim});
            b.ln2_g = Tensor<S>::ones({kDim});
            b.ln2_b = Tensor<S>::zeros({kDim});
            b.cross_wq = nrm({kDim, kDim});
            b.cross_bq = Tensor<S>::zeros({kDim});
            b.cross_wk = nrm({kDim, kDim});
            b.cross_bk = Tensor<S>::zeros({kDim});
            b.cross_wv = nrm({kDim, kDim});
            b.cross_bv = Tensor<S>::zeros({kDim});
            b.cross_wo = nrm({kDim, kDim});
            b.cross_bo = Tensor<S>::zeros({kDim});
            b.ln3_g = Tensor<S>::ones({kDim});
            b.ln3_b = Tensor<S>::zeros({kDim});
            b.mlp_w1 = nrm({kDim, kMlpHidden});
            b.mlp_b1 = Tensor<S>::zeros({kMlpHidden});
            b.mlp_w2 = nrm({kMlpHidden, kDim});
            b.mlp_b2 = Tensor<S>::zeros({kDim});
        }
        m.ln_f_g = Tensor<S>::ones({kDim});
        m.ln_f_b = Tensor<S>::zeros({kDim});
        m.out_w = nrm({kDim, kPatchDim});
        m.out_b = Tensor<S>::zeros({kPatchDim});
        return m;
    }

    std::vector<std::pair<std::string, Tensor<S>*>> named_params() {
        std::vector<std::pair<std::string, Tensor<S>*>> ps;
        ps.emplace_back("token_emb", &token_emb);
        ps.emplace_back("pos_emb", &pos_emb);
        ps.emplace_back("patch_w", &patch_w);
        ps.emplace_back("patch_b", &patch_b);
        ps.emplace_back("patch_pos", &patch_pos);
        for (size_t i = 0; i < kBlocks; ++i) {
            const std::string p = "blk" + std::to_string(i) + ".";
            Block& b = blocks[i];
            ps.emplace_back(p + "ln1_g", &b.ln1_g);
            ps.emplace_back(p + "ln1_b", &b.ln1_b);
            ps.emplace_back(p + "self_wq", &b.self_wq);
            ps.emplace_back(p + "self_bq", &b.self_bq);
            ps.emplace_back(p + "self_wk", &b.self_wk);
            ps.emplace_back(p + "self_bk", &b.self_bk);
            ps.emplace_back(p + "self_wv", &b.self_wv);
            ps.emplace_back(p + "self_bv", &b.self_bv);
            ps.emplace_back(p + "self_wo", &b.self_wo);
            ps.emplace_back(p + "self_bo", &b.self_bo);
            ps.emplace_back(p + "ln2_g", &b.ln2_g);
            ps.emplace_back(p + "ln2_b", &b.ln2_b);
            ps.emplace_back(p + "cross_wq", &b.cross_wq);
            ps.emplace_back(p + "cross_bq", &b.cross_bq);
            ps.emplace_back(p + "cross_wk", &b.cross_wk);
            ps.emplace_back(p + "cross_bk", &b.cross_bk);
            ps.emplace_back(p + "cross_wv", &b.cross_wv);
            ps.emplace_back(p + "cross_bv", &b.cross_bv);
            ps.emplace_back(p + "cross_wo", &b.cross_wo);
            ps.emplace_back(p + "cross_bo", &b.cross_bo);
            ps.emplace_back(p + "ln3_g", &b.ln3_g);
            ps.emplace_back(p + "ln3_b", &b.ln3_b);
            ps.emplace_back(p + "mlp_w1", &b.mlp_w1);
            ps.emplace_back(p + "mlp_b1", &b.mlp_b1);
            ps.emplace_back(p + "mlp_w2", &b.mlp_w2);
            ps.emplace_back(p + "mlp_b2", &b.mlp_b2);
        }
        ps.emplace_back("ln_f_g", &ln_f_g);
        ps.emplace_back("ln_f_b", &ln_f_b);
        ps.emplace_back("out_w", &out_w);
        ps.emplace_back("out_b", &out_b);
        return ps;
    }

    void set_requires_grad(bool rg) {
        for (auto& [name, t] : named_params()) t->set_requires_grad(rg);
    }

    // Deep copy with fresh storage (parameters are leaves in the copy).
    DenoiserModel clone() const {
        DenoiserModel m = *this;
        for (auto& [name, t] : m.named_params()) *t = t->clone();
        return m;
    }

    template <typename T>
    DenoiserModel<T> cast() const {
        DenoiserModel<T> m;
        auto src = const_cast<DenoiserModel*>(this)->named_params();
        auto dst = m.named_params();
        for (size_t i = 0; i < src.size(); ++i) {
            std::vector<T> vals(src[i].second->numel());
            for (size_t j = 0; j < vals.size(); ++j)
                vals[j] = static_cast<T>(src[i].second->data()[j]);
            *dst[i].second = Tensor<T>(src[i].second->shape(), std::move(vals));
        }
        return m;
    }

    size_t param_count() {
        size_t n = 0;
        for (auto& [name, t] : named_params()) n += t->numel();
        return n;
    }

    // FNV-1a over the architecture description; stored in checkpoints so a
    // loader can refuse weights from a different network.
    static uint64_t arch_hash() {
        const std::string desc = "denoiser-v2|img" + std::to_string(kImage) + "|patch" +
                                 std::to_string(kPatch) + "|dim" + std::to_string(kDim) + "|heads" +
                                 std::to_string(kHeads) + "|blocks" + std::to_string(kBlocks) +
                                 "|mlp" + std::to_string(kMlpHidden) + "|vocab" +
                                 std::to_string(kVocab) + "|tokens" + std::to_string(kTokens);
        uint64_t h = 1469598103934665603ull;
        for (char c : desc) {
            h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
            h *= 1099511628211ull;
        }
        return h;
    }

    DenoiserOutput<S> forward(const Tensor<S>& z, size_t t, const PromptSpec& prompt) const;

private:
    // Broadcast a (c) vector to (rows, c) through a ones-column matmul; the
    // op set has no implicit broadcasting.
    static Tensor<S> tile_rows(const Tensor<S>& v, size_t rows) {
        Tensor<S> ones_col = Tensor<S>::ones({rows, 1});
        return matmul(ones_col, reshape(v, {1, v.numel()}));
    }

    static Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
        return add(matmul(x, w), tile_rows(b, x.size(0)));
    }

    // Multi-head attention; returns the projected output and appends each
    // head's (query rows, key rows) weight matrix to `weights_out`.
    static Tensor<S> attention(const Tensor<S>& queries_in, const Tensor<S>& keys_in,
                               const Tensor<S>& wq, const Tensor<S>& bq, const Tensor<S>& wk,
                               const Tensor<S>& bk, const Tensor<S>& wv, const Tensor<S>& bv,
                               const Tensor<S>& wo, const Tensor<S>& bo,
                               std::vector<Tensor<S>>* weights_out) {
        const Tensor<S> q = linear(queries_in, wq, bq);
        const Tensor<S> k = linear(keys_in, wk, bk);
        const Tensor<S> v = linear(keys_in, wv, bv);
        const S temp = static_cast<S>(std::sqrt(static_cast<double>(kHeadDim)));
        std::vector<Tensor<S>> head_outs;
        head_outs.reserve(kHeads);
        for (size_t h = 0; h < kHeads; ++h) {
            const size_t c0 = h * kHeadDim, c1 = (h + 1) * kHeadDim;
            Tensor<S> qh = slice_cols(q, c0, c1);
            Tensor<S> kh = slice_cols(k, c0, c1);
            Tensor<S> vh = slice_cols(v, c0, c1);
            Tensor<S> att = softmax_rows(matmul(qh, transpose(kh)), temp);
            if (weights_out) weights_out->push_back(att);
            head_outs.push_back(matmul(att, vh));
        }
        return linear(concat_cols(head_outs), wo, bo);
    }

    static Tensor<S> timestep_embedding(size_t t) {
        std::vector<S> e(kDim);
        const size_t half = kDim / 2;
        for (size_t i = 0; i < half; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
            e[i] = static_cast<S>(std::sin(static_cast<double>(t) * freq));
            e[half + i] = static_cast<S>(std::cos(static_cast<double>(t) * freq));
        }
        return Tensor<S>({kDim}, std::move(e));
    }
};

template <typename S>
DenoiserOutput<S> DenoiserModel<S>::forward(const Tensor<S>& z, size_t t,
                                            const PromptSpec& prompt) const {
    if (z.shape() != std::vector<size_t>{kImage, kImage, kChannels})
        throw DimensionError("denoiser_forward: expected " + std::to_string(kImage) + "x" +
                             std::to_string(kImage) + "x" + std::to_string(kChannels) +
                             " input, got " + shape_str(z.shape()));
    check_finite(z, "denoiser_forward input");
    prompt.validate(false);

    // (image, image, ch) -> (patches, patch_dim)
    Tensor<S> patches = reshape(
        permute(reshape(z, {kGrid, kPatch, kGrid, kPatch, kChannels}), {0, 2, 1, 3, 4}),
        {kPatches, kPatchDim});
    Tensor<S> x = add(linear(patches, patch_w, patch_b), patch_pos);
    x = add(x, tile_rows(timestep_embedding(t), kPatches));

    // Frozen prompt context shared by every block.
    Tensor<S> ctx = add(embedding(token_emb, prompt.ids()), pos_emb);

    std::vector<Tensor<S>> head_maps;
    head_maps.reserve(kBlocks * kHeads);
    for (const Block& b : blocks) {
        Tensor<S> h1 = layer_norm(x, b.ln1_g, b.ln1_b);
        x = add(x, attention(h1, h1, b.self_wq, b.self_bq, b.self_wk, b.self_bk, b.self_wv,
                             b.self_bv, b.self_wo, b.self_bo, nullptr));
        Tensor<S> h2 = layer_norm(x, b.ln2_g, b.ln2_b);
        x = add(x, attention(h2, ctx, b.cross_wq, b.cross_bq, b.cross_wk, b.cross_bk, b.cross_wv,
                             b.cross_bv, b.cross_wo, b.cross_bo, &head_maps));
        Tensor<S> h3 = layer_norm(x, b.ln3_g, b.ln3_b);
        x = add(x, linear(gelu(linear(h3, b.mlp_w1, b.mlp_b1)), b.mlp_w2, b.mlp_b2));
    }

    Tensor<S> out = linear(layer_norm(x, ln_f_g, ln_f_b), out_w, out_b);
    Tensor<S> eps_hat = reshape(
        permute(reshape(out, {kGrid, kGrid, kPatch, kPatch, kChannels}), {0, 2, 1, 3, 4}),
        {kImage, kImage, kChannels});

    // Mean over blocks and heads preserves row-stochasticity.
    Tensor<S> mean_map = head_maps[0];
    for (size_t i = 1; i < head_maps.size(); ++i) mean_map = add(mean_map, head_maps[i]);
    mean_map = scale(mean_map, static_cast<S>(1.0 / static_cast<double>(head_maps.size())));

    DenoiserOutput<S> res;
    res.eps_hat = std::move(eps_hat);
    res.maps.patch_token = std::move(mean_map);
    res.maps.blocks_averaged = static_cast<int>(kBlocks);
    res.maps.heads_averaged = static_cast<int>(kHeads);
    res.maps.smoothed = false;
    res.head_maps = std::move(head_maps);
    return res;
}

}  // namespace attnguide
