#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "mdfm/model/params.hpp"
#include "mdfm/seqdata/synth.hpp"
#include "mdfm/trainer/trainer.hpp"

using namespace mdfm;
using namespace mdfm::trainer;
using oracle::bit_equal;
using oracle::RefAdamW;

namespace {

model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.d = 8;
    c.k = 3;
    c.encoder_layers = 1;
    c.encoder_heads = 2;
    c.encoder_ff = 16;
    c.bpe_vocab = 32;
    c.n_experts = 2;
    c.segments = 2;
    c.expert_heads = 2;
    c.classifier_hidden = 4;
    c.dropout = 0.0;
    return c;
}

seqdata::Dataset tiny_data(std::size_t n) {
    seqdata::PlantedSpec s;
    s.n_pos = s.n_neg = n;
    return seqdata::synth_planted_dataset(s);
}

}  // namespace

TEST_CASE("cross-entropy examples") {
    CHECK(cross_entropy({0.0, 0.0}, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(cross_entropy({2.0, 0.0}, 0) == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-14));
    CHECK(cross_entropy({1000.0, 0.0}, 1) == doctest::Approx(1000.0));
    CHECK(std::isfinite(cross_entropy({-1000.0, 1000.0}, 0)));
    CHECK_THROWS_AS(cross_entropy({0.0}, 0), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy({0.0, 1.0}, 2), std::invalid_argument);
}

TEST_CASE("flooding loss and slope") {
    CHECK(flooding_loss(0.3, 0.1) == doctest::Approx(0.3));
    CHECK(flooding_loss(0.05, 0.1) == doctest::Approx(0.15));
    CHECK(flooding_loss(0.1, 0.1) == 0.1);
    CHECK(flooding_slope(0.3, 0.1) == 1.0);
    CHECK(flooding_slope(0.05, 0.1) == -1.0);
    CHECK(flooding_slope(0.1, 0.1) == 0.0);
    CHECK(flooding_loss(0.7, 0.0) == 0.7);

    std::mt19937_64 rng(1);
    for (int i = 0; i < 100000; ++i) {
        const double ce = testutil::uniform(rng, 0.0, 3.0), b = testutil::uniform(rng, 0.0, 1.0);
        const double f = flooding_loss(ce, b);
        CHECK(f >= b);
        if (ce >= b) CHECK(f == ce);
        else CHECK(f == doctest::Approx(2 * b - ce).epsilon(1e-14));
        CHECK(flooding_slope(ce, b) * (ce - b) >= 0.0);
    }
}

TEST_CASE("FGM perturbation norm and zero safety") {
    std::mt19937_64 rng(2);
    std::map<std::string, ad::Tensor> g;
    g.emplace("a", testutil::rand_tensor({5, 4}, rng, -1, 1));
    g.emplace("b", testutil::rand_tensor({3, 4}, rng, -1, 1));
    for (double eps : {0.01, 1.0, 3.5}) {
        const auto r = fgm_perturb(g, eps);
        for (const auto& [n, t] : r) {
            CHECK(std::abs(ad::l2_norm(t) - eps) < 1e-10);
            // Aligned with the gradient.
            double dot = 0.0;
            for (std::size_t i = 0; i < t.size(); ++i) dot += t[i] * g.at(n)[i];
            CHECK(dot > 0.0);
        }
        const auto rg = fgm_perturb(g, eps, FgmNorm::global);
        const double na = ad::l2_norm(rg.at("a")), nb = ad::l2_norm(rg.at("b"));
        CHECK(std::abs(std::sqrt(na * na + nb * nb) - eps) < 1e-10);
    }
    std::map<std::string, ad::Tensor> z;
    z.emplace("a", ad::Tensor({2, 2}, 0.0));
    const auto rz = fgm_perturb(z, 1.0);
    for (double v : rz.at("a").vec()) CHECK(v == 0.0);
    CHECK_THROWS_AS(fgm_perturb({}, 1.0), std::invalid_argument);

    // One-element example: g = [3, 4], eps = 1 gives [0.6, 0.8].
    std::map<std::string, ad::Tensor> e;
    e.emplace("x", ad::Tensor({2}, std::vector<double>{3.0, 4.0}));
    const auto r = fgm_perturb(e, 1.0).at("x");
    CHECK(r[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(r[1] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("AdamW single step and decoupled decay") {
    ad::ParamSet p;
    p.add("x", ad::Tensor({1}, std::vector<double>{1.0}));
    ad::ParamSet g = p.like(2.0);
    OptState st = OptState::zeros_like(p);
    adamw_step(p, g, st, 0.1, 0.0);
    CHECK(p.at("x")[0] == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
    CHECK(st.step == 1);

    // A zero gradient leaves only the decay.
    ad::ParamSet q;
    q.add("x", ad::Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
    OptState s2 = OptState::zeros_like(q);
    adamw_step(q, q.like(0.0), s2, 0.01, 0.1);
    CHECK(q.at("x")[0] == doctest::Approx(0.999).epsilon(1e-15));
    CHECK(q.at("x")[1] == doctest::Approx(-1.998).epsilon(1e-15));

    ad::ParamSet wrong;
    wrong.add("x", ad::Tensor({2}, 0.0));
    CHECK_THROWS_AS(adamw_step(q, wrong, s2, 0.01, 0.0), std::invalid_argument);
}

TEST_CASE("batch gradient matches finite differences of the mean loss") {
    const model::ModelConfig c = tiny_config();
    const auto data = tiny_data(4);
    const model::Tokenizers tok{c.k, seqdata::BpeVocab{}};
    const auto ex = encode_examples(data.train, tok, c);
    std::vector<const Example*> batch;
    for (const auto& e : ex) batch.push_back(&e);
    ad::ParamSet p = model::init_params(c, 3);
    TrainConfig tc;
    tc.flood = 0.05;

    for (FloodMode mode : {FloodMode::batch, FloodMode::sample}) {
        tc.flood_mode = mode;
        const BatchGrad bg = batch_gradient(batch, p, c, tc, nullptr);
        auto loss = [&]() {
            double sum = 0.0, fl = 0.0;
            for (const auto* e : batch) {
                const double ce = cross_entropy(model::model_forward(e->enc, p, c).logits, e->label);
                sum += ce;
                fl += flooding_loss(ce, tc.flood);
            }
            const double n = static_cast<double>(batch.size());
            return mode == FloodMode::batch ? flooding_loss(sum / n, tc.flood) : fl / n;
        };
        CHECK(bg.loss == doctest::Approx(loss()).epsilon(1e-12));
        std::mt19937_64 rng(5);
        for (const char* name : {"cls.l2.w", "moe.out.w", "film.l1.w", "kmer.L0.q.w", "bpe.emb_ln.g", "gate.b"}) {
            auto& t = p.at(name);
            for (int rep = 0; rep < 4; ++rep) {
                const std::size_t j = std::uniform_int_distribution<std::size_t>(0, t.size() - 1)(rng);
                const double x0 = t[j], h = 1e-5;
                t[j] = x0 + h;
                const double lp = loss();
                t[j] = x0 - h;
                const double lm = loss();
                t[j] = x0;
                const double fd = (lp - lm) / (2 * h), an = bg.grads.at(name)[j];
                CHECK(std::abs(fd - an) <= 1e-6 * std::max({1.0, std::abs(fd), std::abs(an)}));
            }
        }
    }
}

TEST_CASE("train_step without FGM follows a reference AdamW trajectory bit for bit") {
    const model::ModelConfig c = tiny_config();
    const auto data = tiny_data(8);
    const model::Tokenizers tok{c.k, seqdata::BpeVocab{}};
    const auto ex = encode_examples(data.train, tok, c);
    TrainConfig tc;
    tc.adversarial = false;
    tc.flood = 0.0;
    tc.lr = 3e-3;

    ad::ParamSet a = model::init_params(c, 11), b = a;
    OptState st = OptState::zeros_like(a);
    RefAdamW ref;
    std::mt19937_64 rng_a(1), rng_b(1);
    for (int step = 0; step < 50; ++step) {
        std::vector<const Example*> batch;
        for (std::size_t i = 0; i < 4; ++i) batch.push_back(&ex[(step * 4 + i) % ex.size()]);
        train_step(batch, a, st, c, tc, rng_a);
        const BatchGrad g = batch_gradient(batch, b, c, tc, &rng_b);
        ref.step(b, g.grads, tc.lr, tc.weight_decay);
    }
    CHECK(bit_equal(a, b));
}

TEST_CASE("train_step with FGM adds the gradient at perturbed embeddings and restores them") {
    const model::ModelConfig c = tiny_config();
    const auto data = tiny_data(3);
    const model::Tokenizers tok{c.k, seqdata::BpeVocab{}};
    const auto ex = encode_examples(data.train, tok, c);
    std::vector<const Example*> batch;
    for (const auto& e : ex) batch.push_back(&e);
    TrainConfig tc;
    tc.fgm_eps = 0.5;

    const ad::ParamSet p0 = model::init_params(c, 12);
    ad::ParamSet stepped = p0;
    OptState st = OptState::zeros_like(stepped);
    std::mt19937_64 r1(9);
    const StepMetrics sm = train_step(batch, stepped, st, c, tc, r1);
    CHECK(sm.adv_loss > 0.0);

    // Reconstruct: clean gradient, perturb the tables, second gradient, sum.
    std::mt19937_64 r2(9);
    BatchGrad clean = batch_gradient(batch, p0, c, tc, &r2);
    std::map<std::string, ad::Tensor> eg;
    for (const char* n : {model::kKmerTokenTable, model::kBpeTokenTable}) eg.emplace(n, clean.grads.at(n));
    const auto r = fgm_perturb(eg, tc.fgm_eps);
    ad::ParamSet pert = p0;
    for (const auto& [n, t] : r) pert.at(n).add_scaled(t);
    BatchGrad adv = batch_gradient(batch, pert, c, tc, &r2);
    CHECK(adv.loss == sm.adv_loss);
    ad::ParamSet total = clean.grads;
    for (std::size_t i = 0; i < total.size(); ++i) total.entry(i).second.add_scaled(adv.grads.entry(i).second);
    ad::ParamSet expect = p0;
    OptState st2 = OptState::zeros_like(expect);
    adamw_step(expect, total, st2, tc.lr, tc.weight_decay);
    CHECK(bit_equal(stepped, expect));
}

TEST_CASE("stratified folds balance classes") {
    std::vector<int> labels;
    for (int i = 0; i < 23; ++i) labels.push_back(1);
    for (int i = 0; i < 31; ++i) labels.push_back(0);
    const auto f = stratified_folds(labels, 5, 3);
    REQUIRE(f.size() == labels.size());
    std::vector<std::size_t> size(5), pos(5);
    for (std::size_t i = 0; i < f.size(); ++i) {
        REQUIRE(f[i] < 5);
        ++size[f[i]];
        pos[f[i]] += labels[i];
    }
    CHECK(*std::max_element(size.begin(), size.end()) - *std::min_element(size.begin(), size.end()) <= 1);
    CHECK(*std::max_element(pos.begin(), pos.end()) - *std::min_element(pos.begin(), pos.end()) <= 1);
    CHECK(stratified_folds(labels, 5, 3) == f);
    CHECK(stratified_folds(labels, 5, 4) != f);
    CHECK_THROWS_AS(stratified_folds({1, 1, 0}, 3, 1), std::invalid_argument);
}

TEST_CASE("cross-validation picks the best config and breaks ties canonically") {
    const model::ModelConfig c = tiny_config();
    const auto data = tiny_data(6);
    TrainConfig a;
    a.epochs = 1;
    a.batch_size = 4;
    a.adversarial = false;
    // finetune_epochs has no effect while finetune_init is off, so the two
    // runs tie exactly and the smaller canonical JSON must win.
    TrainConfig b = a;
    a.finetune_epochs = 3;
    b.finetune_epochs = 1;
    const CvResult r = cross_validate(data.train, {a, b}, c, 3, 1, 2);
    REQUIRE(r.mean_auprc.size() == 2);
    REQUIRE(r.fold_auprc[0].size() == 3);
    CHECK(r.mean_auprc[0] == r.mean_auprc[1]);
    CHECK(r.best == 1);
    const double mean = std::accumulate(r.fold_auprc[0].begin(), r.fold_auprc[0].end(), 0.0) / 3.0;
    CHECK(r.mean_auprc[0] == doctest::Approx(mean).epsilon(1e-15));

    const CvResult single = cross_validate(data.train, {a}, c, 3, 1, 1);
    CHECK(single.best == 0);
    CHECK(single.mean_auprc[0] == r.mean_auprc[0]);
}

TEST_CASE("fit is deterministic and logs every epoch") {
    const model::ModelConfig c = tiny_config();
    const auto data = tiny_data(10);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    std::ostringstream l1, l2;
    const FitResult a = fit(data.train, &data.test, c, tc, &l1, 1);
    const FitResult b = fit(data.train, &data.test, c, tc, &l2, 3);
    CHECK(bit_equal(a.params, b.params));
    CHECK(l1.str() == l2.str());
    REQUIRE(a.log.size() == 2);
    CHECK(a.log[1].has_val);
    const std::string text = l1.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    CHECK(nlohmann::json::parse(text.substr(0, text.find('\n'))).contains("epoch"));
    for (const auto& [n, t] : a.params) CHECK(t.all_finite());

    TrainConfig bad = tc;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK(TrainConfig::from_json(tc.to_json()).to_json() == tc.to_json());
}
