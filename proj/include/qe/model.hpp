#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qe/data.hpp"
#include "qe/encoder.hpp"
#include "qe/tensor.hpp"
#include "qe/vocab.hpp"

namespace qe {

enum class Architecture { mono, siamese };

std::string architecture_name(Architecture arch);
Architecture architecture_from_name(const std::string& name);

// Affine label map y -> a*y + b applied before the loss and inverted at
// prediction time. The siamese architecture uses it to move labels into the
// reachable range of a cosine; the cross-encoder trains on raw labels.
struct LabelScaler {
    enum class Kind { identity, affine };
    Kind kind = Kind::identity;
    double a = 1.0;
    double b = 0.0;

    double apply(double y) const { return kind == Kind::identity ? y : a * y + b; }
    double invert(double s) const {
        return kind == Kind::identity ? s : (s - b) / a;
    }

    // Maps [min_label, max_label] onto [-0.9, 0.9]. A degenerate range falls
    // back to a pure shift that sends the constant label to 0.
    static LabelScaler fit_range(double min_label, double max_label);
};

struct TrainingMeta {
    std::uint64_t seed = 0;
    std::size_t steps_completed = 0;
    double best_eval_loss = -1.0;  // -1 = never evaluated
    std::vector<std::string> lang_pairs;
};

// One of the two sentence-level QE architectures:
//   mono    - cross-encoder: both sentences in one input, pooled (CLS by
//             default) and mapped to a score by an affine head;
//   siamese - bi-encoder: each sentence through the same tied encoder,
//             pooled (MEAN by default), scored by cosine similarity.
class QEModel {
public:
    QEModel() = default;

    static QEModel make(Architecture arch, EncoderConfig config, Vocabulary vocab,
                        std::optional<Pooling> pooling, std::uint64_t seed);

    Architecture architecture() const { return arch_; }
    const EncoderConfig& config() const { return config_; }
    const Vocabulary& vocabulary() const { return vocab_; }
    Pooling pooling() const { return pooling_; }

    LabelScaler& label_scaler() { return scaler_; }
    const LabelScaler& label_scaler() const { return scaler_; }

    TrainingMeta& meta() { return meta_; }
    const TrainingMeta& meta() const { return meta_; }

    EncoderWeightsT<float>& encoder_weights() { return encoder_; }
    const EncoderWeightsT<float>& encoder_weights() const { return encoder_; }

    Tensor& head_weight() { return head_weight_; }
    Tensor& head_bias() { return head_bias_; }

    // Raw model output (pre scaler inversion) with graph recording; the
    // training loss compares this against scaler.apply(label).
    Tensor forward_raw(const std::string& source, const std::string& target) const;

    double predict(const std::string& source, const std::string& target) const;
    double predict_mono(const std::string& source, const std::string& target) const;
    double predict_siamese(const std::string& source,
                           const std::string& target) const;

    // Predictions for a whole dataset. For the siamese architecture each
    // distinct sentence is encoded once per call.
    std::vector<double> predict_batch(const QEDataset& dataset) const;

    // name/tensor traversal in serialization order: encoder tensors, then
    // the regression head for the cross-encoder.
    template <typename Fn>
    void for_each_parameter(Fn&& fn) {
        encoder_.for_each_tensor(fn);
        if (arch_ == Architecture::mono) {
            fn("head.weight", head_weight_);
            fn("head.bias", head_bias_);
        }
    }

    template <typename Fn>
    void for_each_parameter(Fn&& fn) const {
        const_cast<QEModel*>(this)->for_each_parameter(
            [&](const std::string& name, Tensor& t) {
                fn(name, const_cast<const Tensor&>(t));
            });
    }

    std::size_t parameter_count() const;

    // Deep copy; weights no longer shared with this model.
    QEModel clone() const;

    friend class CheckpointCodec;

private:
    Architecture arch_ = Architecture::mono;
    EncoderConfig config_;
    Vocabulary vocab_;
    EncoderWeightsT<float> encoder_;
    Pooling pooling_ = Pooling::cls;
    Tensor head_weight_;  // [d_model], mono only
    Tensor head_bias_;    // scalar, mono only
    LabelScaler scaler_;
    TrainingMeta meta_;

    TensorT<float> pooled_single(const std::string& sentence) const;
};

}  // namespace qe
