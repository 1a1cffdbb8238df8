#pragma once

#include <optional>

#include "kmdx/encoders.hpp"
#include "kmdx/knowledge_injection.hpp"
#include "kmdx/memory_injection.hpp"

namespace kmdx {

struct Ablation {
    bool no_knowledge = false;  // drop encoder/KAG/KDC/knowledge slot
    bool no_memory = false;     // no memory stack, no banks allocated
    bool no_kag = false;        // additive cross-attention instead of gating
    bool itc_queue = true;      // ITC negatives also draw from queues
    // --loss-mask entries
    bool mask_itc = false;
    bool mask_kdc = false;
    bool mask_res_image = false;
    bool mask_res_text = false;
    bool mask_cls = false;
};

struct SubjectInput {
    Tensor volume;              // [S,S,S], constant
    std::vector<int> text_ids;  // textualized non-imaging record
    std::vector<int> know_ids;  // rendered knowledge for present factors
    int label = 0;
};

struct SubjectForward {
    Tensor probs;        // [1, num_classes]
    Tensor h_img_cls;    // [1, d] pre-injection encoder CLS rows
    Tensor h_txt_cls;
    Tensor h_know_cls;   // undefined under --no-knowledge
    Tensor fused_tokens; // [3, d]
    Tensor recon_image;  // defined when reconstruction was requested
    Tensor text_logits;
};

struct Model {
    ModelConfig cfg;
    MemoryConfig mcfg;
    Ablation abl;

    ImageEncoder image_enc;
    // The knowledge encoder IS this object: encode_knowledge runs the same
    // parameter tensors, so any weight mutation shows up in both paths.
    TextEncoder text_enc;
    ImageDecoder image_dec;
    TextDecoder text_dec;
    KnowledgeStack kl;
    std::optional<MemoryStack> memory;
    ClassifierHead head;
    LinearLayer proj_img, proj_txt, proj_data, proj_know;

    static Model init(const ModelConfig& cfg, const MemoryConfig& mcfg,
                      const Ablation& abl, std::uint64_t seed);

    Tensor encode_image(const Tensor& volume) const {
        return image_enc.forward(volume);
    }
    Tensor encode_text(const std::vector<int>& ids) const {
        return text_enc.forward(ids);
    }
    // Weight-shared with encode_text; factor token lists are concatenated
    // behind one CLS.
    Tensor encode_knowledge(
        const std::vector<std::vector<int>>& factor_token_ids) const;

    // Full forward for one subject. Memory key/value collection happens only
    // when `collectors` is non-null (training). Reconstruction branches run
    // only when want_reconstruction is set.
    SubjectForward forward_subject(const SubjectInput& in,
                                   std::vector<KvCollector>* collectors,
                                   bool want_reconstruction) const;

    // Stable-order registry of every trainable tensor.
    ParamRefs params();
    // The subset shadowed by momentum encoders: unimodal encoders plus the
    // four contrastive projection heads.
    ParamRefs momentum_source_params();
};

// EMA twins of the contrastive feature path, usable as drop-in encoders.
struct MomentumEncoders {
    MomentumPair pair;
    ImageEncoder image_enc;
    TextEncoder text_enc;
    LinearLayer proj_img, proj_txt, proj_data, proj_know;

    static MomentumEncoders create(Model& model, double coefficient = 0.995);
    // Re-attach module copies to the shadow tensors (after state restore).
    void rebind(Model& model);
};

}  // namespace kmdx
