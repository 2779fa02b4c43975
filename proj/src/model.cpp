#include "qe/model.hpp"

#include <cmath>
#include <unordered_map>

#include "qe/errors.hpp"

namespace qe {

std::string architecture_name(Architecture arch) {
    return arch == Architecture::mono ? "mono" : "siamese";
}

Architecture architecture_from_name(const std::string& name) {
    if (name == "mono") return Architecture::mono;
    if (name == "siamese") return Architecture::siamese;
    throw ContractError("unknown architecture '" + name + "'");
}

LabelScaler LabelScaler::fit_range(double min_label, double max_label) {
    LabelScaler scaler;
    scaler.kind = Kind::affine;
    const double span = max_label - min_label;
    if (span <= 0.0) {
        scaler.a = 1.0;
        scaler.b = -min_label;
        return scaler;
    }
    scaler.a = 1.8 / span;
    scaler.b = -0.9 - scaler.a * min_label;
    return scaler;
}

QEModel QEModel::make(Architecture arch, EncoderConfig config, Vocabulary vocab,
                      std::optional<Pooling> pooling, std::uint64_t seed) {
    config.validate();
    if (config.vocab_size != vocab.size())
        throw ContractError("model: config vocab_size " +
                            std::to_string(config.vocab_size) +
                            " does not match vocabulary size " +
                            std::to_string(vocab.size()));
    QEModel model;
    model.arch_ = arch;
    model.config_ = config;
    model.vocab_ = std::move(vocab);
    model.pooling_ = pooling.value_or(
        arch == Architecture::mono ? Pooling::cls : Pooling::mean);
    model.encoder_ = init_encoder_weights<float>(config, seed);
    if (arch == Architecture::mono) {
        Rng head_rng(derive_seed(seed, 0x68656164));  // distinct stream for the head
        model.head_weight_ =
            Tensor::randn({config.d_model}, head_rng, 0.0, kInitStdDev, true);
        model.head_bias_ = Tensor::zeros({}, true);
    }
    model.meta_.seed = seed;
    return model;
}

Tensor QEModel::forward_raw(const std::string& source,
                            const std::string& target) const {
    if (arch_ == Architecture::mono) {
        const EncodedPair input =
            encode_pair(vocab_, source, target, config_.max_seq_len);
        const Tensor pooled =
            pool_trimmed(encode_trimmed(config_, encoder_, input), pooling_);
        return add(dot(pooled, head_weight_), head_bias_);
    }
    return cosine_similarity(pooled_single(source), pooled_single(target));
}

TensorT<float> QEModel::pooled_single(const std::string& sentence) const {
    const EncodedPair input = encode_single(vocab_, sentence, config_.max_seq_len);
    return pool_trimmed(encode_trimmed(config_, encoder_, input), pooling_);
}

double QEModel::predict(const std::string& source,
                        const std::string& target) const {
    return arch_ == Architecture::mono ? predict_mono(source, target)
                                       : predict_siamese(source, target);
}

double QEModel::predict_mono(const std::string& source,
                             const std::string& target) const {
    if (arch_ != Architecture::mono)
        throw ContractError("predict_mono on a " + architecture_name(arch_) +
                            " model");
    NoGradGuard no_grad;
    return scaler_.invert(static_cast<double>(forward_raw(source, target).item()));
}

double QEModel::predict_siamese(const std::string& source,
                                const std::string& target) const {
    if (arch_ != Architecture::siamese)
        throw ContractError("predict_siamese on a " + architecture_name(arch_) +
                            " model");
    NoGradGuard no_grad;
    return scaler_.invert(static_cast<double>(forward_raw(source, target).item()));
}

std::vector<double> QEModel::predict_batch(const QEDataset& dataset) const {
    NoGradGuard no_grad;
    std::vector<double> out;
    out.reserve(dataset.records.size());
    if (arch_ == Architecture::mono) {
        for (const auto& record : dataset.records)
            out.push_back(scaler_.invert(
                static_cast<double>(forward_raw(record.source, record.target).item())));
        return out;
    }
    std::unordered_map<std::string, TensorT<float>> cache;
    auto pooled = [&](const std::string& sentence) -> const TensorT<float>& {
        auto it = cache.find(sentence);
        if (it == cache.end())
            it = cache.emplace(sentence, pooled_single(sentence)).first;
        return it->second;
    };
    for (const auto& record : dataset.records) {
        const Tensor cos = cosine_similarity(pooled(record.source),
                                             pooled(record.target));
        out.push_back(scaler_.invert(static_cast<double>(cos.item())));
    }
    return out;
}

std::size_t QEModel::parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

QEModel QEModel::clone() const {
    QEModel copy;
    copy.arch_ = arch_;
    copy.config_ = config_;
    copy.vocab_ = vocab_;
    copy.pooling_ = pooling_;
    copy.scaler_ = scaler_;
    copy.meta_ = meta_;
    copy.encoder_.layers.resize(encoder_.layers.size());
    auto deep = [](const Tensor& t) { return t.clone_detached(); };
    copy.encoder_.token_embeddings = deep(encoder_.token_embeddings);
    copy.encoder_.position_embeddings = deep(encoder_.position_embeddings);
    copy.encoder_.segment_embeddings = deep(encoder_.segment_embeddings);
    for (std::size_t i = 0; i < encoder_.layers.size(); ++i) {
        const auto& src = encoder_.layers[i];
        auto& dst = copy.encoder_.layers[i];
        dst.attn_norm_gain = deep(src.attn_norm_gain);
        dst.attn_norm_bias = deep(src.attn_norm_bias);
        dst.wq = deep(src.wq);
        dst.wk = deep(src.wk);
        dst.wv = deep(src.wv);
        dst.wo = deep(src.wo);
        dst.ff_norm_gain = deep(src.ff_norm_gain);
        dst.ff_norm_bias = deep(src.ff_norm_bias);
        dst.ff1 = deep(src.ff1);
        dst.ff2 = deep(src.ff2);
    }
    copy.encoder_.final_norm_gain = deep(encoder_.final_norm_gain);
    copy.encoder_.final_norm_bias = deep(encoder_.final_norm_bias);
    if (arch_ == Architecture::mono) {
        copy.head_weight_ = deep(head_weight_);
        copy.head_bias_ = deep(head_bias_);
    }
    return copy;
}

}  // namespace qe
