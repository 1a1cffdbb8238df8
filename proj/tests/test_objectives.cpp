#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "kmdx/objectives.hpp"
#include "kmdx/ops.hpp"
#include "kmdx/rng.hpp"
#include "kmdx/tokenizer.hpp"

using namespace kmdx;

namespace {

Tensor unit_rows(int n, int d, std::uint64_t seed) {
    auto rng = rng_for(seed, "feat");
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(static_cast<size_t>(n) * d);
    for (double& e : v) e = dist(rng);
    Tensor raw = Tensor::from_data({n, d}, std::move(v));
    return normalize_rows(raw);
}

// All rows identical: every pairwise similarity is 1 (uniform logits).
Tensor constant_rows(int n, int d) {
    std::vector<double> v(static_cast<size_t>(n) * d, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * d] = 1.0;
    return Tensor::from_data({n, d}, std::move(v));
}

// Direct two-loop oracle for one InfoNCE direction.
double info_nce_oracle(const Tensor& online, const Tensor& cands, double tau) {
    const int n = online.dim(0), m = cands.dim(0), d = online.dim(1);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> logits(static_cast<size_t>(m));
        for (int j = 0; j < m; ++j) {
            double dot = 0.0;
            for (int k = 0; k < d; ++k)
                dot += online.data()[static_cast<size_t>(i) * d + k] *
                       cands.data()[static_cast<size_t>(j) * d + k];
            logits[static_cast<size_t>(j)] = dot / tau;
        }
        double mx = logits[0];
        for (double l : logits) mx = std::max(mx, l);
        double denom = 0.0;
        for (double l : logits) denom += std::exp(l - mx);
        total += std::log(denom) + mx - logits[static_cast<size_t>(i)];
    }
    return total / n;
}

}  // namespace

TEST_CASE("uniform similarities give ln(N + queue occupancy)") {
    const int n = 4, d = 8;
    Tensor a = constant_rows(n, d);
    // empty queue: ln N
    Tensor loss = itc_loss(a, a, a, a, nullptr, nullptr, 0.07);
    CHECK(std::abs(loss.item() - std::log(4.0)) < 1e-9);

    // queue filled with the same constant row
    FeatureQueue q(64);
    q.push(constant_rows(10, d));
    Tensor loss_q = itc_loss(a, a, a, a, &q, &q, 0.07);
    CHECK(std::abs(loss_q.item() - std::log(14.0)) < 1e-9);

    // kdc takes the same form
    Tensor kdc = kdc_loss(a, a, a, a, &q, &q, 0.07);
    CHECK(std::abs(kdc.item() - std::log(14.0)) < 1e-9);
}

TEST_CASE("matched orthonormal pairs drive the loss to zero as tau shrinks") {
    const int n = 4;
    std::vector<double> eye(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eye[static_cast<size_t>(i) * n + i] = 1.0;
    Tensor feats = Tensor::from_data({n, n}, std::move(eye));
    Tensor loss = itc_loss(feats, feats, feats, feats, nullptr, nullptr, 0.01);
    CHECK(loss.item() < 1e-9);
}

TEST_CASE("info_nce matches the double-loop oracle") {
    const int n = 8, d = 16;
    Tensor online = unit_rows(n, d, 1);
    Tensor momentum = unit_rows(n, d, 2);
    FeatureQueue q(32);
    q.push(unit_rows(12, d, 3));
    Tensor loss = info_nce(online, momentum, &q, 0.07);
    Tensor cands = concat_rows({momentum, q.contents()});
    CHECK(std::abs(loss.item() - info_nce_oracle(online, cands, 0.07)) <
          1e-10);

    // symmetric itc equals the mean of both directions
    Tensor o2 = unit_rows(n, d, 4);
    Tensor m2 = unit_rows(n, d, 5);
    Tensor itc = itc_loss(online, o2, momentum, m2, &q, &q, 0.07);
    Tensor c1 = concat_rows({m2, q.contents()});
    Tensor c2 = concat_rows({momentum, q.contents()});
    const double want = 0.5 * (info_nce_oracle(online, c1, 0.07) +
                               info_nce_oracle(o2, c2, 0.07));
    CHECK(std::abs(itc.item() - want) < 1e-10);
}

TEST_CASE("orthogonal queue negatives strictly increase the loss") {
    const int n = 6, d = 32;
    Tensor online = unit_rows(n, d, 6);
    Tensor momentum = unit_rows(n, d, 7);
    Tensor no_queue = info_nce(online, momentum, nullptr, 0.07);

    FeatureQueue q(128);
    // rows orthogonal to nothing in particular but still extra candidates
    q.push(unit_rows(100, d, 8));
    Tensor with_queue = info_nce(online, momentum, &q, 0.07);
    CHECK(with_queue.item() > no_queue.item());

    // oracle agreement for both variants
    CHECK(std::abs(no_queue.item() - info_nce_oracle(online, momentum, 0.07)) <
          1e-10);
}

TEST_CASE("subject-matched identical features score below the uniform bound") {
    const int n = 4, d = 8;
    // distinct per subject, identical across the pair axes
    Tensor feats = unit_rows(n, d, 9);
    Tensor loss = kdc_loss(feats, feats, feats, feats, nullptr, nullptr, 0.07);
    CHECK(loss.item() < std::log(static_cast<double>(n)));
}

TEST_CASE("loss bounds hold for unit feature rows") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const int n = 5, d = 12;
        Tensor online = unit_rows(n, d, 100 + seed);
        Tensor momentum = unit_rows(n, d, 200 + seed);
        FeatureQueue q(64);
        q.push(unit_rows(20, d, 300 + seed));
        Tensor loss = info_nce(online, momentum, &q, 0.07);
        CHECK(loss.item() >= 0.0);
        // |logits| <= 1/tau bounds the loss by ln(M) + 2/tau; the useful
        // upper bound here is the uniform-logit value plus margin
        CHECK(loss.item() <= std::log(25.0) + 2.0 / 0.07);
    }
}

TEST_CASE("queues reject taped features and non-unit rows") {
    FeatureQueue q(8);
    Tensor p = Tensor::param({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0}, "p");
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor feats = normalize_rows(p);
        CHECK_THROWS_AS(q.push(feats), ContractError);
    }
    CHECK_THROWS_AS(
        q.push(Tensor::from_data({1, 4}, {0.5, 0.5, 0.5, 0.6})),
        ContractError);
    // proper rows pass
    q.push(Tensor::from_data({1, 4}, {1.0, 0.0, 0.0, 0.0}));
    CHECK(q.size() == 1);
}

TEST_CASE("queue is a FIFO ring") {
    FeatureQueue q(3);
    auto row = [](double x, double y) {
        const double n = std::sqrt(x * x + y * y);
        return Tensor::from_data({1, 2}, {x / n, y / n});
    };
    q.push(row(1, 0));
    q.push(row(0, 1));
    q.push(row(1, 1));
    q.push(row(-1, 0));  // overwrites the oldest slot
    CHECK(q.size() == 3);
    Tensor c = q.contents();
    CHECK(c.dim(0) == 3);
    CHECK(c.data()[0] == doctest::Approx(-1.0));  // slot 0 rewritten
}

TEST_CASE("no gradient reaches queue contents") {
    const int n = 3, d = 6;
    Tensor raw = Tensor::param(
        Shape{n, d},
        [&] {
            auto rng = rng_for(10, "qgrad");
            std::uniform_real_distribution<double> dist(-1.0, 1.0);
            std::vector<double> v(static_cast<size_t>(n) * d);
            for (double& e : v) e = dist(rng);
            return v;
        }(),
        "raw");
    FeatureQueue q(16);
    q.push(unit_rows(5, d, 11));
    Tensor queue_snapshot = q.contents();
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor online = normalize_rows(raw);
        Tensor loss = info_nce(online, unit_rows(n, d, 12), &q, 0.07);
        tape.backward(loss);
    }
    // online parameters got gradients
    double gsum = 0.0;
    for (double g : raw.grad()) gsum += std::abs(g);
    CHECK(gsum > 0.0);
    // the queue tensor stayed off the tape and unchanged
    CHECK(!queue_snapshot.needs_grad());
    CHECK(queue_snapshot.grad() ==
          std::vector<double>(queue_snapshot.data().size(), 0.0));
    Tensor after = q.contents();
    CHECK(std::memcmp(after.data().data(), queue_snapshot.data().data(),
                      after.data().size() * sizeof(double)) == 0);
}

TEST_CASE("contrastive loss needs negatives") {
    Tensor single = constant_rows(1, 4);
    CHECK_THROWS_AS(info_nce(single, single, nullptr, 0.07), ContractError);
}

TEST_CASE("restoration losses: perfect, offset, all-pad") {
    auto rng = rng_for(13, "resto");
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(64);
    for (double& e : v) e = dist(rng);
    Tensor vol = Tensor::from_data({4, 4, 4}, v);
    CHECK(image_restoration_loss(vol, vol).item() == 0.0);
    Tensor shifted = affine(vol, 1.0, 0.25);
    CHECK(image_restoration_loss(shifted, vol).item() ==
          doctest::Approx(0.0625).epsilon(1e-12));

    // text: perfect one-hot logits at the targets
    std::vector<int> ids = {5, 7};
    std::vector<double> logits(2 * 10, -100.0);
    logits[5] = 100.0;
    logits[10 + 7] = 100.0;
    Tensor tl = Tensor::from_data({2, 10}, std::move(logits));
    CHECK(text_restoration_loss(tl, ids).item() < 1e-12);

    // all-pad text scores zero by convention
    Tensor any = Tensor::from_data({2, 10}, std::vector<double>(20, 0.3));
    CHECK(text_restoration_loss(any, {kPadId, kPadId}).item() == 0.0);
}

TEST_CASE("classification loss validates probability rows") {
    Tensor good = Tensor::from_data({2, 2}, {0.9, 0.1, 0.4, 0.6});
    CHECK(classification_loss(good, {0, 1}).item() ==
          doctest::Approx(-(std::log(0.9) + std::log(0.6)) / 2));
    Tensor bad = Tensor::from_data({1, 2}, {0.9, 0.3});
    CHECK_THROWS_AS(classification_loss(bad, {0}), ContractError);
}

TEST_CASE("total loss: lambdas of zero drop terms bit-exactly") {
    LossParts parts;
    parts.itc = Tensor::scalar(0.31);
    parts.kdc = Tensor::scalar(0.12);
    parts.res_image = Tensor::scalar(0.55);
    parts.res_text = Tensor::scalar(0.07);
    parts.cls = Tensor::scalar(0.83);

    LossWeights w;  // 1,1,1
    const double all = total_loss(parts, w).item();
    CHECK(all == 0.31 + 0.12 + 0.55 + 0.07 + 0.83);

    // lambda_res = 0 reproduces the cls+itc+kdc wiring bit-exactly
    LossWeights no_res = w;
    no_res.lambda_res = 0.0;
    LossParts without;
    without.itc = parts.itc;
    without.kdc = parts.kdc;
    without.cls = parts.cls;
    const double masked = total_loss(parts, no_res).item();
    const double omitted = total_loss(without, w).item();
    CHECK(std::memcmp(&masked, &omitted, sizeof(double)) == 0);

    // each lambda individually
    LossWeights no_al = w;
    no_al.lambda_al = 0.0;
    LossParts res_cls;
    res_cls.res_image = parts.res_image;
    res_cls.res_text = parts.res_text;
    res_cls.cls = parts.cls;
    const double a = total_loss(parts, no_al).item();
    const double b = total_loss(res_cls, w).item();
    CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);

    // zero parts, zero total
    CHECK(total_loss(LossParts{}, w).item() == 0.0);
}

TEST_CASE("weighted total applies the scalar weights") {
    LossParts parts;
    parts.itc = Tensor::scalar(2.0);
    parts.cls = Tensor::scalar(3.0);
    LossWeights w;
    w.lambda_al = 0.5;
    w.lambda_cls = 2.0;
    CHECK(total_loss(parts, w).item() == doctest::Approx(1.0 + 6.0));
}
