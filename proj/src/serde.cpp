#include "kmdx/serde.hpp"

namespace kmdx {

using nlohmann::json;

json to_json(const ModelConfig& c) {
    return {{"embed_dim", c.embed_dim},
            {"heads", c.heads},
            {"encoder_layers", c.encoder_layers},
            {"decoder_layers", c.decoder_layers},
            {"kl_layers", c.kl_layers},
            {"mem_layers", c.mem_layers},
            {"volume_side", c.volume_side},
            {"patch_side", c.patch_side},
            {"vocab_size", c.vocab_size},
            {"max_text_len", c.max_text_len},
            {"num_classes", c.num_classes},
            {"ffn_mult", c.ffn_mult},
            {"proj_dim", c.proj_dim},
            {"use_positional", c.use_positional}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.heads = j.value("heads", c.heads);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.kl_layers = j.value("kl_layers", c.kl_layers);
    c.mem_layers = j.value("mem_layers", c.mem_layers);
    c.volume_side = j.value("volume_side", c.volume_side);
    c.patch_side = j.value("patch_side", c.patch_side);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_text_len = j.value("max_text_len", c.max_text_len);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.proj_dim = j.value("proj_dim", c.proj_dim);
    c.use_positional = j.value("use_positional", c.use_positional);
    c.validate();
    return c;
}

json to_json(const MemoryConfig& c) {
    return {{"window", c.window},
            {"prototypes", c.prototypes},
            {"top_k", c.top_k},
            {"normalize_weights", c.normalize_weights},
            {"kmeans_restarts", c.kmeans_restarts},
            {"kmeans_max_iters", c.kmeans_max_iters},
            {"kmeans_tol", c.kmeans_tol}};
}

MemoryConfig memory_config_from_json(const json& j) {
    MemoryConfig c;
    c.window = j.value("window", c.window);
    c.prototypes = j.value("prototypes", c.prototypes);
    c.top_k = j.value("top_k", c.top_k);
    c.normalize_weights = j.value("normalize_weights", c.normalize_weights);
    c.kmeans_restarts = j.value("kmeans_restarts", c.kmeans_restarts);
    c.kmeans_max_iters = j.value("kmeans_max_iters", c.kmeans_max_iters);
    c.kmeans_tol = j.value("kmeans_tol", c.kmeans_tol);
    return c;
}

json to_json(const Ablation& a) {
    return {{"no_knowledge", a.no_knowledge},
            {"no_memory", a.no_memory},
            {"no_kag", a.no_kag},
            {"itc_queue", a.itc_queue},
            {"mask_itc", a.mask_itc},
            {"mask_kdc", a.mask_kdc},
            {"mask_res_image", a.mask_res_image},
            {"mask_res_text", a.mask_res_text},
            {"mask_cls", a.mask_cls}};
}

Ablation ablation_from_json(const json& j) {
    Ablation a;
    a.no_knowledge = j.value("no_knowledge", a.no_knowledge);
    a.no_memory = j.value("no_memory", a.no_memory);
    a.no_kag = j.value("no_kag", a.no_kag);
    a.itc_queue = j.value("itc_queue", a.itc_queue);
    a.mask_itc = j.value("mask_itc", a.mask_itc);
    a.mask_kdc = j.value("mask_kdc", a.mask_kdc);
    a.mask_res_image = j.value("mask_res_image", a.mask_res_image);
    a.mask_res_text = j.value("mask_res_text", a.mask_res_text);
    a.mask_cls = j.value("mask_cls", a.mask_cls);
    return a;
}

json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.optimizer.lr},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps},
            {"weight_decay", c.optimizer.weight_decay},
            {"lambda_al", c.weights.lambda_al},
            {"lambda_res", c.weights.lambda_res},
            {"lambda_cls", c.weights.lambda_cls},
            {"tau", c.weights.tau},
            {"ema_coefficient", c.ema_coefficient},
            {"queue_capacity", c.queue_capacity},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.optimizer.lr = j.value("lr", c.optimizer.lr);
    c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
    c.optimizer.eps = j.value("eps", c.optimizer.eps);
    c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
    c.weights.lambda_al = j.value("lambda_al", c.weights.lambda_al);
    c.weights.lambda_res = j.value("lambda_res", c.weights.lambda_res);
    c.weights.lambda_cls = j.value("lambda_cls", c.weights.lambda_cls);
    c.weights.tau = j.value("tau", c.weights.tau);
    c.ema_coefficient = j.value("ema_coefficient", c.ema_coefficient);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.seed = j.value("seed", c.seed);
    return c;
}

}  // namespace kmdx
