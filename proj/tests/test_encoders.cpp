#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "kmdx/encoders.hpp"
#include "kmdx/gradcheck.hpp"
#include "kmdx/model.hpp"
#include "kmdx/rng.hpp"
#include "kmdx/tokenizer.hpp"

using namespace kmdx;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.embed_dim = 16;
    c.heads = 2;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.kl_layers = 1;
    c.mem_layers = 1;
    c.volume_side = 8;
    c.patch_side = 4;
    c.vocab_size = 32;
    c.max_text_len = 16;
    return c;
}

Tensor random_volume(int side, std::uint64_t seed) {
    auto rng = rng_for(seed, "vol");
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(static_cast<size_t>(side) * side * side);
    for (double& e : v) e = dist(rng);
    return Tensor::from_data({side, side, side}, std::move(v));
}

}  // namespace

TEST_CASE("image encoder output carries CLS at row 0") {
    const ModelConfig cfg = tiny_config();
    ImageEncoder enc = ImageEncoder::init(cfg, 1, "image_encoder");
    Tensor h = enc.forward(random_volume(cfg.volume_side, 2));
    CHECK(h.shape() == Shape{1 + cfg.num_patches(), cfg.embed_dim});
    // deterministic forward
    Tensor h2 = enc.forward(random_volume(cfg.volume_side, 2));
    CHECK(std::memcmp(h.data().data(), h2.data().data(),
                      h.data().size() * sizeof(double)) == 0);
}

TEST_CASE("text encoder masks padding out of live rows") {
    const ModelConfig cfg = tiny_config();
    TextEncoder enc = TextEncoder::init(cfg, 3, "text_encoder");
    const std::vector<int> ids = {5, 9, 7, 11};
    std::vector<int> padded = ids;
    padded.push_back(kPadId);
    padded.push_back(kPadId);
    Tensor h = enc.forward(ids);
    Tensor hp = enc.forward(padded);
    CHECK(h.dim(0) == 5);
    CHECK(hp.dim(0) == 7);
    // live rows (CLS + 4 tokens) unchanged by appended padding
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < cfg.embed_dim; ++c)
            CHECK(std::abs(h.data()[static_cast<size_t>(r) * cfg.embed_dim + c] -
                           hp.data()[static_cast<size_t>(r) * cfg.embed_dim + c]) <
                  1e-10);
}

TEST_CASE("text encoder rejects oversize and out-of-vocab input") {
    const ModelConfig cfg = tiny_config();
    TextEncoder enc = TextEncoder::init(cfg, 3, "text_encoder");
    std::vector<int> too_long(static_cast<size_t>(cfg.max_text_len) + 1, 5);
    CHECK_THROWS_AS(enc.forward(too_long), InputError);
    CHECK_THROWS_AS(enc.forward({cfg.vocab_size}), InputError);
}

TEST_CASE("knowledge encoding shares the text encoder parameters") {
    const ModelConfig cfg = tiny_config();
    Model m = Model::init(cfg, MemoryConfig{}, Ablation{}, 7);
    const std::vector<int> ids = {4, 8, 15, 16};

    Tensor via_text = m.encode_text(ids);
    Tensor via_knowledge = m.encode_knowledge({{4, 8}, {15, 16}});
    CHECK(via_text.shape() == via_knowledge.shape());
    CHECK(std::memcmp(via_text.data().data(), via_knowledge.data().data(),
                      via_text.data().size() * sizeof(double)) == 0);

    // n_K factors with len_k tokens each -> 1 + n_K * len_k rows
    Tensor hk = m.encode_knowledge({{4, 8, 15}, {16, 23, 4}, {8, 8, 8}});
    CHECK(hk.dim(0) == 1 + 3 * 3);

    // mutating a text-encoder weight is observable through the knowledge path
    m.text_enc.token_embed.mutable_data()[4 * cfg.embed_dim] += 0.5;
    Tensor after = m.encode_knowledge({{4, 8}, {15, 16}});
    bool changed = false;
    for (size_t i = 0; i < after.data().size(); ++i)
        changed |= after.data()[i] != via_knowledge.data()[i];
    CHECK(changed);
}

TEST_CASE("parameter identity audit finds no duplicated arrays") {
    const ModelConfig cfg = tiny_config();
    Model m = Model::init(cfg, MemoryConfig{}, Ablation{}, 7);
    ParamRefs refs = m.params();
    std::set<const Node*> seen;
    for (const auto& [name, t] : refs) {
        CHECK(seen.insert(t->node().get()).second);  // no tensor listed twice
    }
    // and no two distinct parameters alias the same buffer
    std::set<const double*> buffers;
    for (const auto& [name, t] : refs)
        CHECK(buffers.insert(t->data().data()).second);
}

TEST_CASE("decoders restore the declared shapes") {
    const ModelConfig cfg = tiny_config();
    Model m = Model::init(cfg, MemoryConfig{}, Ablation{}, 9);
    Tensor vol = random_volume(cfg.volume_side, 4);
    Tensor hi = m.encode_image(vol);
    Tensor rec = m.image_dec.forward(hi);
    CHECK(rec.shape() == Shape{cfg.volume_side, cfg.volume_side,
                               cfg.volume_side});
    const std::vector<int> ids = {4, 9, 13};
    Tensor ht = m.encode_text(ids);
    Tensor logits = m.text_dec.forward(ht);
    CHECK(logits.shape() == Shape{3, cfg.vocab_size});
}

TEST_CASE("ema decay follows the closed form") {
    // xi' = 0.995 xi + 0.005 theta
    Tensor theta = Tensor::param({3}, {0.0, 1.0, -2.0}, "theta");
    ParamRefs refs = {{"theta", &theta}};
    MomentumPair pair = make_momentum(refs, "momentum.");
    pair.shadow[0].mutable_data() = {1.0, 1.0, 1.0};

    ema_update(pair);
    CHECK(pair.shadow[0].data()[0] == doctest::Approx(0.995).epsilon(1e-12));

    // fixed point: xi == theta stays put
    pair.shadow[0].mutable_data() = theta.data();
    ema_update(pair);
    for (int i = 0; i < 3; ++i)
        CHECK(pair.shadow[0].data()[i] ==
              doctest::Approx(theta.data()[i]).epsilon(1e-15));

    // geometric decay of the gap over n updates
    pair.shadow[0].mutable_data() = {1.0, 2.0, 0.5};
    std::vector<double> gap0(3);
    for (int i = 0; i < 3; ++i)
        gap0[static_cast<size_t>(i)] =
            pair.shadow[0].data()[i] - theta.data()[i];
    const int n = 100;
    for (int step = 0; step < n; ++step) ema_update(pair);
    const double factor = std::pow(0.995, n);
    for (int i = 0; i < 3; ++i) {
        const double want = gap0[static_cast<size_t>(i)] * factor;
        const double got = pair.shadow[0].data()[i] - theta.data()[i];
        CHECK(std::abs(got - want) < 1e-9);
    }
}

TEST_CASE("momentum shadows never join a tape") {
    const ModelConfig cfg = tiny_config();
    Model m = Model::init(cfg, MemoryConfig{}, Ablation{}, 11);
    MomentumEncoders mom = MomentumEncoders::create(m);
    Tape tape;
    TapeScope scope(tape);
    Tensor h = mom.image_enc.forward(random_volume(cfg.volume_side, 5));
    CHECK(!h.needs_grad());
    CHECK(tape.size() == 0);  // nothing recorded
    for (const auto& s : mom.pair.shadow) {
        CHECK(!s.requires_grad());
        CHECK(s.grad() == std::vector<double>(s.data().size(), 0.0));
    }
}

TEST_CASE("tiny encoder stack passes finite differences") {
    ModelConfig cfg = tiny_config();
    cfg.encoder_layers = 1;
    TextEncoder enc = TextEncoder::init(cfg, 13, "text_encoder");
    const std::vector<int> ids = {4, 7, 9};
    auto loss_fn = [&] {
        Tensor h = enc.forward(ids);
        return mean_all(mul(h, h));
    };
    std::vector<std::pair<std::string, Tensor>> params = {
        {"token_embed", enc.token_embed},
        {"cls", enc.cls},
        {"wq", enc.blocks[0].attn.wq.w},
        {"ffn_in.b", enc.blocks[0].ffn_in.b},
        {"ln.gain", enc.blocks[0].ln_attn.gain},
    };
    auto report = finite_difference_check(loss_fn, params, 1e-5, 1e-4);
    CHECK(report.pass);
}

TEST_CASE("paper-scale preset validates without instantiation") {
    const ModelConfig paper = ModelConfig::paper_scale();
    paper.validate();
    CHECK(paper.embed_dim == 768);
    CHECK(paper.heads == 12);
    CHECK(paper.encoder_layers == 12);
    CHECK(paper.decoder_layers == 6);
    CHECK(paper.kl_layers == 6);
    CHECK(paper.mem_layers == 6);
    CHECK(paper.patch_side == 16);
    CHECK(paper.max_text_len == 512);
    CHECK(paper.num_patches() == 512);   // (128/16)^3
    CHECK(paper.patch_voxels() == 4096);  // 16^3
}
