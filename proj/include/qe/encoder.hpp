#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qe/tensor.hpp"
#include "qe/vocab.hpp"

// Miniature pre-norm transformer encoder: learned token/position/segment
// embeddings, multi-head self-attention, GELU feed-forward blocks, final
// layer norm. Templated on the element type so gradient checks can run the
// whole stack in double precision.

namespace qe {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStdDev = 0.02;

struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 128;
    std::size_t n_heads = 4;
    std::size_t n_layers = 4;
    std::size_t d_ff = 512;
    std::size_t max_seq_len = 128;

    void validate() const {
        if (vocab_size == 0) throw ContractError("encoder: vocab_size must be > 0");
        if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0)
            throw ContractError("encoder: all dimensions must be positive");
        if (d_model % n_heads != 0)
            throw ContractError("encoder: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " +
                                std::to_string(n_heads));
        if (max_seq_len == 0 || max_seq_len > 512)
            throw ContractError("encoder: max_seq_len must be in [1, 512]");
    }

    bool operator==(const EncoderConfig&) const = default;
};

// Desk-scale default used by the CLI and the end-to-end tests; trains on a
// CPU in minutes.
inline EncoderConfig desk_encoder_config(std::size_t vocab_size) {
    EncoderConfig cfg;
    cfg.vocab_size = vocab_size;
    return cfg;
}

template <typename T>
struct EncoderWeightsT {
    struct Layer {
        TensorT<T> attn_norm_gain, attn_norm_bias;
        TensorT<T> wq, wk, wv, wo;
        TensorT<T> ff_norm_gain, ff_norm_bias;
        TensorT<T> ff1, ff2;
    };

    TensorT<T> token_embeddings;     // [vocab, d_model]
    TensorT<T> position_embeddings;  // [max_seq_len, d_model]
    TensorT<T> segment_embeddings;   // [2, d_model]
    std::vector<Layer> layers;
    TensorT<T> final_norm_gain, final_norm_bias;

    // Canonical traversal order; serialization, the optimizer and the
    // gradient tests all rely on it.
    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        fn("embeddings.token", token_embeddings);
        fn("embeddings.position", position_embeddings);
        fn("embeddings.segment", segment_embeddings);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string prefix = "layers." + std::to_string(i) + ".";
            auto& layer = layers[i];
            fn(prefix + "attn_norm.gain", layer.attn_norm_gain);
            fn(prefix + "attn_norm.bias", layer.attn_norm_bias);
            fn(prefix + "attn.wq", layer.wq);
            fn(prefix + "attn.wk", layer.wk);
            fn(prefix + "attn.wv", layer.wv);
            fn(prefix + "attn.wo", layer.wo);
            fn(prefix + "ff_norm.gain", layer.ff_norm_gain);
            fn(prefix + "ff_norm.bias", layer.ff_norm_bias);
            fn(prefix + "ff.w1", layer.ff1);
            fn(prefix + "ff.w2", layer.ff2);
        }
        fn("final_norm.gain", final_norm_gain);
        fn("final_norm.bias", final_norm_bias);
    }

    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        const_cast<EncoderWeightsT*>(this)->for_each_tensor(
            [&](const std::string& name, TensorT<T>& t) {
                fn(name, const_cast<const TensorT<T>&>(t));
            });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_tensor([&](const std::string&, const TensorT<T>& t) {
            n += t.numel();
        });
        return n;
    }
};

// Embeddings and projections drawn Normal(0, 0.02^2) from xoshiro256++
// seeded with `seed`; layer-norm gains 1, biases 0. Bitwise deterministic
// per seed.
template <typename T>
EncoderWeightsT<T> init_encoder_weights(const EncoderConfig& cfg,
                                        std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    auto normal = [&](Shape shape) {
        return TensorT<T>::randn(std::move(shape), rng, 0.0, kInitStdDev, true);
    };
    auto ones = [](std::size_t n) {
        return TensorT<T>::filled({n}, T(1), true);
    };
    auto zeros = [](std::size_t n) {
        return TensorT<T>::zeros({n}, true);
    };

    EncoderWeightsT<T> w;
    w.token_embeddings = normal({cfg.vocab_size, cfg.d_model});
    w.position_embeddings = normal({cfg.max_seq_len, cfg.d_model});
    w.segment_embeddings = normal({2, cfg.d_model});
    w.layers.resize(cfg.n_layers);
    for (auto& layer : w.layers) {
        layer.attn_norm_gain = ones(cfg.d_model);
        layer.attn_norm_bias = zeros(cfg.d_model);
        layer.wq = normal({cfg.d_model, cfg.d_model});
        layer.wk = normal({cfg.d_model, cfg.d_model});
        layer.wv = normal({cfg.d_model, cfg.d_model});
        layer.wo = normal({cfg.d_model, cfg.d_model});
        layer.ff_norm_gain = ones(cfg.d_model);
        layer.ff_norm_bias = zeros(cfg.d_model);
        layer.ff1 = normal({cfg.d_model, cfg.d_ff});
        layer.ff2 = normal({cfg.d_ff, cfg.d_model});
    }
    w.final_norm_gain = ones(cfg.d_model);
    w.final_norm_bias = zeros(cfg.d_model);
    return w;
}

template <typename T>
struct EncodeResult {
    TensorT<T> token_vectors;  // [seq_len, d_model], zero rows at pads
    TensorT<T> cls_vector;     // [d_model]
};

// Hidden states over the non-pad prefix only; the prediction and training
// paths pool these directly and skip materializing the padded output.
template <typename T>
struct EncodeTrimmed {
    TensorT<T> hidden;  // [n_real, d_model]
    TensorT<T> cls_vector;
    std::size_t n_real = 0;
};

// Forward pass. PAD positions (a suffix by construction) are excluded from
// the computation entirely, which is equivalent to masking their attention
// logits to -inf: they are never attended to and their output rows are zero.
template <typename T>
EncodeTrimmed<T> encode_trimmed(const EncoderConfig& cfg,
                                const EncoderWeightsT<T>& w,
                                const EncodedPair& input) {
    const std::size_t seq_len = input.ids.size();
    if (seq_len == 0 || seq_len > cfg.max_seq_len)
        throw ContractError("encode: input length " + std::to_string(seq_len) +
                            " outside [1, " + std::to_string(cfg.max_seq_len) +
                            "]");
    if (input.segment_mask.size() != seq_len ||
        input.attention_mask.size() != seq_len)
        throw ContractError("encode: mask lengths disagree with ids");

    std::size_t n_real = 0;
    while (n_real < seq_len && input.attention_mask[n_real] == 1) ++n_real;
    for (std::size_t i = n_real; i < seq_len; ++i)
        if (input.attention_mask[i] != 0)
            throw ContractError("encode: pad positions must form a suffix");
    if (n_real == 0) throw ContractError("encode: no non-pad positions");

    const std::vector<int> ids(input.ids.begin(),
                               input.ids.begin() + static_cast<long>(n_real));
    std::vector<int> position_ids(n_real);
    for (std::size_t i = 0; i < n_real; ++i)
        position_ids[i] = static_cast<int>(i);

    TensorT<T> x = add(embedding_rows(w.token_embeddings, ids),
                       embedding_rows(w.position_embeddings, position_ids));

    // Segment embeddings carry source/target side information for pair
    // encodings; single-sentence encodings (all-zero masks) add nothing.
    bool has_segments = false;
    for (std::size_t i = 0; i < n_real; ++i)
        if (input.segment_mask[i] == 1) has_segments = true;
    if (has_segments) {
        const std::vector<int> seg_ids(
            input.segment_mask.begin(),
            input.segment_mask.begin() + static_cast<long>(n_real));
        x = add(x, embedding_rows(w.segment_embeddings, seg_ids));
    }

    const std::size_t n_heads = cfg.n_heads;
    const std::size_t d_head = cfg.d_model / n_heads;
    const T attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_head)));
    const T eps = static_cast<T>(kLayerNormEps);

    for (const auto& layer : w.layers) {
        TensorT<T> h = layer_norm(x, layer.attn_norm_gain, layer.attn_norm_bias, eps);
        TensorT<T> q = matmul(h, layer.wq);
        TensorT<T> k = matmul(h, layer.wk);
        TensorT<T> v = matmul(h, layer.wv);
        std::vector<TensorT<T>> head_outputs;
        head_outputs.reserve(n_heads);
        for (std::size_t head = 0; head < n_heads; ++head) {
            const std::size_t c0 = head * d_head;
            const std::size_t c1 = c0 + d_head;
            TensorT<T> qh = slice_cols(q, c0, c1);
            TensorT<T> kh = slice_cols(k, c0, c1);
            TensorT<T> vh = slice_cols(v, c0, c1);
            TensorT<T> scores = scale(matmul(qh, transpose(kh)), attn_scale);
            TensorT<T> weights = softmax(scores, 1);
            head_outputs.push_back(matmul(weights, vh));
        }
        TensorT<T> attended = matmul(concat_axis(head_outputs, 1), layer.wo);
        x = add(x, attended);

        TensorT<T> h2 = layer_norm(x, layer.ff_norm_gain, layer.ff_norm_bias, eps);
        TensorT<T> ff = matmul(gelu(matmul(h2, layer.ff1)), layer.ff2);
        x = add(x, ff);
    }
    x = layer_norm(x, w.final_norm_gain, w.final_norm_bias, eps);

    EncodeTrimmed<T> result;
    result.cls_vector = row(x, 0);
    result.hidden = std::move(x);
    result.n_real = n_real;
    return result;
}

template <typename T>
EncodeResult<T> encode(const EncoderConfig& cfg, const EncoderWeightsT<T>& w,
                       const EncodedPair& input) {
    EncodeTrimmed<T> trimmed = encode_trimmed(cfg, w, input);
    EncodeResult<T> result;
    result.cls_vector = std::move(trimmed.cls_vector);
    result.token_vectors = pad_rows(trimmed.hidden, input.ids.size());
    return result;
}

enum class Pooling { cls, mean, max };

inline std::string pooling_name(Pooling p) {
    switch (p) {
        case Pooling::cls: return "cls";
        case Pooling::mean: return "mean";
        case Pooling::max: return "max";
    }
    return "cls";
}

inline Pooling pooling_from_name(const std::string& name) {
    if (name == "cls") return Pooling::cls;
    if (name == "mean") return Pooling::mean;
    if (name == "max") return Pooling::max;
    throw ContractError("unknown pooling strategy '" + name + "'");
}

// Reduces per-token vectors to one sentence vector. MEAN and MAX consider
// non-pad positions only.
template <typename T>
TensorT<T> pool(const TensorT<T>& token_vectors, const TensorT<T>& cls_vector,
                const std::vector<int>& attention_mask, Pooling strategy) {
    std::size_t n_real = 0;
    while (n_real < attention_mask.size() && attention_mask[n_real] == 1)
        ++n_real;
    for (std::size_t i = n_real; i < attention_mask.size(); ++i)
        if (attention_mask[i] != 0)
            throw ContractError("pool: pad positions must form a suffix");
    if (n_real == 0)
        throw DegenerateInputError("pool: attention mask has no non-pad positions");
    switch (strategy) {
        case Pooling::cls:
            return cls_vector;
        case Pooling::mean:
            return mean_axis(slice_rows(token_vectors, 0, n_real), 0);
        case Pooling::max:
            return max_axis(slice_rows(token_vectors, 0, n_real), 0);
    }
    throw ContractError("pool: invalid strategy");
}

// Pooling over an already-trimmed hidden block: every row is a real token.
template <typename T>
TensorT<T> pool_trimmed(const EncodeTrimmed<T>& enc, Pooling strategy) {
    switch (strategy) {
        case Pooling::cls:
            return enc.cls_vector;
        case Pooling::mean:
            return mean_axis(enc.hidden, 0);
        case Pooling::max:
            return max_axis(enc.hidden, 0);
    }
    throw ContractError("pool: invalid strategy");
}

}  // namespace qe
