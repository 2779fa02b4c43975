#include "qe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "qe/errors.hpp"

namespace qe {

namespace {

constexpr char kMagic[4] = {'Q', 'E', 'F', '1'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blob writer assumes a little-endian host");

nlohmann::ordered_json config_json(const EncoderConfig& cfg) {
    return {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
            {"n_heads", cfg.n_heads},       {"n_layers", cfg.n_layers},
            {"d_ff", cfg.d_ff},             {"max_seq_len", cfg.max_seq_len}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
    EncoderConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.d_ff = j.at("d_ff").get<std::size_t>();
    cfg.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    return cfg;
}

}  // namespace

// Befriended by QEModel so loading can reassemble the private weight fields.
class CheckpointCodec {
public:
    static void save(const QEModel& model, const std::filesystem::path& path) {
        nlohmann::ordered_json meta;
        meta["format_version"] = kFormatVersion;
        meta["architecture"] = architecture_name(model.architecture());
        meta["encoder_config"] = config_json(model.config());
        meta["pooling"] = pooling_name(model.pooling());
        meta["label_scaler"] = {
            {"kind", model.label_scaler().kind == LabelScaler::Kind::identity
                         ? "identity"
                         : "affine"},
            {"a", model.label_scaler().a},
            {"b", model.label_scaler().b}};
        meta["vocabulary"] = {
            {"version", 1},
            {"min_frequency", model.vocabulary().min_frequency()},
            {"tokens", model.vocabulary().tokens()}};

        nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
        std::size_t offset = 0;
        std::vector<const Tensor*> tensors;
        model.for_each_parameter([&](const std::string& name, const Tensor& t) {
            manifest.push_back({{"name", name},
                                {"shape", t.shape()},
                                {"offset", offset}});
            offset += t.numel() * sizeof(float);
            tensors.push_back(&t);
        });
        meta["manifest"] = std::move(manifest);
        meta["blob_bytes"] = offset;
        meta["training"] = {
            {"seed", model.meta().seed},
            {"steps_completed", model.meta().steps_completed},
            {"best_eval_loss", model.meta().best_eval_loss},
            {"lang_pairs", model.meta().lang_pairs}};

        const std::string json_text = meta.dump();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint " + path.string());
        out.write(kMagic, sizeof(kMagic));
        const std::uint64_t json_len = json_text.size();
        out.write(reinterpret_cast<const char*>(&json_len), sizeof(json_len));
        out.write(json_text.data(), static_cast<std::streamsize>(json_text.size()));
        for (const Tensor* t : tensors)
            out.write(reinterpret_cast<const char*>(t->data().data()),
                      static_cast<std::streamsize>(t->numel() * sizeof(float)));
        if (!out) throw DataError("short write on checkpoint " + path.string());
    }

    static QEModel load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open checkpoint " + path.string());

        char magic[4];
        in.read(magic, sizeof(magic));
        if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
            throw CheckpointError(path.string() + " is not a QEF1 checkpoint");
        std::uint64_t json_len = 0;
        in.read(reinterpret_cast<char*>(&json_len), sizeof(json_len));
        if (!in) throw CheckpointTruncatedError(path.string() + ": truncated header");
        std::string json_text(json_len, '\0');
        in.read(json_text.data(), static_cast<std::streamsize>(json_len));
        if (!in)
            throw CheckpointTruncatedError(path.string() + ": truncated metadata");

        nlohmann::json meta;
        try {
            meta = nlohmann::json::parse(json_text);
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError(path.string() + ": bad metadata JSON: " + e.what());
        }
        const int version = meta.at("format_version").get<int>();
        if (version != kFormatVersion)
            throw CheckpointVersionError(path.string() + ": format version " +
                                         std::to_string(version) +
                                         " unsupported, expected " +
                                         std::to_string(kFormatVersion));

        QEModel model;
        model.arch_ = architecture_from_name(meta.at("architecture"));
        model.config_ = config_from_json(meta.at("encoder_config"));
        model.config_.validate();
        model.pooling_ = pooling_from_name(meta.at("pooling"));
        const auto& scaler = meta.at("label_scaler");
        model.scaler_.kind = scaler.at("kind") == "identity"
                                 ? LabelScaler::Kind::identity
                                 : LabelScaler::Kind::affine;
        model.scaler_.a = scaler.at("a").get<double>();
        model.scaler_.b = scaler.at("b").get<double>();
        const auto& vocab_json = meta.at("vocabulary");
        model.vocab_ = Vocabulary::from_tokens(
            vocab_json.at("tokens").get<std::vector<std::string>>(),
            vocab_json.at("min_frequency").get<std::size_t>());
        if (model.vocab_.size() != model.config_.vocab_size)
            throw CheckpointShapeError(
                path.string() + ": embedded vocabulary size " +
                std::to_string(model.vocab_.size()) +
                " disagrees with config vocab_size " +
                std::to_string(model.config_.vocab_size));
        const auto& training = meta.at("training");
        model.meta_.seed = training.at("seed").get<std::uint64_t>();
        model.meta_.steps_completed =
            training.at("steps_completed").get<std::size_t>();
        model.meta_.best_eval_loss = training.at("best_eval_loss").get<double>();
        model.meta_.lang_pairs =
            training.at("lang_pairs").get<std::vector<std::string>>();

        // Skeleton tensors with the config-implied shapes; the manifest must
        // match them exactly.
        model.encoder_ = init_skeleton(model.config_);
        if (model.arch_ == Architecture::mono) {
            model.head_weight_ = Tensor::zeros({model.config_.d_model}, true);
            model.head_bias_ = Tensor::zeros({}, true);
        }

        std::vector<std::pair<std::string, Tensor*>> expected;
        model.for_each_parameter([&](const std::string& name, Tensor& t) {
            expected.emplace_back(name, &t);
        });

        const auto& manifest = meta.at("manifest");
        if (manifest.size() != expected.size())
            throw CheckpointShapeError(
                path.string() + ": manifest lists " +
                std::to_string(manifest.size()) + " tensors, model needs " +
                std::to_string(expected.size()));

        const std::uint64_t blob_bytes = meta.at("blob_bytes").get<std::uint64_t>();
        std::uint64_t running_offset = 0;
        for (std::size_t i = 0; i < expected.size(); ++i) {
            const auto& entry = manifest.at(i);
            const std::string name = entry.at("name").get<std::string>();
            const Shape shape = entry.at("shape").get<Shape>();
            const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
            if (name != expected[i].first)
                throw CheckpointShapeError(path.string() + ": manifest tensor '" +
                                           name + "' where '" +
                                           expected[i].first + "' expected");
            if (shape != expected[i].second->shape())
                throw CheckpointShapeError(
                    path.string() + ": tensor '" + name + "' has shape " +
                    shape_str(shape) + ", expected " +
                    shape_str(expected[i].second->shape()));
            if (offset != running_offset)
                throw CheckpointShapeError(path.string() + ": tensor '" + name +
                                           "' at offset " + std::to_string(offset) +
                                           ", expected " +
                                           std::to_string(running_offset));
            running_offset += expected[i].second->numel() * sizeof(float);
        }
        if (running_offset != blob_bytes)
            throw CheckpointShapeError(path.string() +
                                       ": manifest covers " +
                                       std::to_string(running_offset) +
                                       " bytes, header says " +
                                       std::to_string(blob_bytes));

        for (auto& [name, tensor] : expected) {
            in.read(reinterpret_cast<char*>(tensor->mutable_data().data()),
                    static_cast<std::streamsize>(tensor->numel() * sizeof(float)));
            if (!in)
                throw CheckpointTruncatedError(path.string() +
                                               ": blob truncated at tensor '" +
                                               name + "'");
        }
        char extra;
        if (in.read(&extra, 1))
            throw CheckpointError(path.string() + ": trailing bytes after blob");
        return model;
    }

private:
    static EncoderWeightsT<float> init_skeleton(const EncoderConfig& cfg) {
        EncoderWeightsT<float> w;
        auto t = [](Shape shape) { return Tensor::zeros(std::move(shape), true); };
        w.token_embeddings = t({cfg.vocab_size, cfg.d_model});
        w.position_embeddings = t({cfg.max_seq_len, cfg.d_model});
        w.segment_embeddings = t({2, cfg.d_model});
        w.layers.resize(cfg.n_layers);
        for (auto& layer : w.layers) {
            layer.attn_norm_gain = t({cfg.d_model});
            layer.attn_norm_bias = t({cfg.d_model});
            layer.wq = t({cfg.d_model, cfg.d_model});
            layer.wk = t({cfg.d_model, cfg.d_model});
            layer.wv = t({cfg.d_model, cfg.d_model});
            layer.wo = t({cfg.d_model, cfg.d_model});
            layer.ff_norm_gain = t({cfg.d_model});
            layer.ff_norm_bias = t({cfg.d_model});
            layer.ff1 = t({cfg.d_model, cfg.d_ff});
            layer.ff2 = t({cfg.d_ff, cfg.d_model});
        }
        w.final_norm_gain = t({cfg.d_model});
        w.final_norm_bias = t({cfg.d_model});
        return w;
    }
};

void save_checkpoint(const QEModel& model, const std::filesystem::path& path) {
    CheckpointCodec::save(model, path);
}

QEModel load_checkpoint(const std::filesystem::path& path) {
    return CheckpointCodec::load(path);
}

}  // namespace qe
