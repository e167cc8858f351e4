#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <string>
#include <vector>

#include "kml/kg.hpp"
#include "kml/program.hpp"
#include "kml/qa.hpp"
#include "kml/rng.hpp"
#include "kml/synthetic.hpp"
#include "kml/trainer.hpp"

using namespace kml;

namespace {

bool same_bits(const Vec& a, const Vec& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same_bits(const Mat& a, const Mat& b) {
    return a.rows == b.rows && a.cols == b.cols && same_bits(a.a, b.a);
}

bool same_module(const RelationModule& a, const RelationModule& b) {
    return same_bits(a.w1, b.w1) && same_bits(a.b1, b.b1) && same_bits(a.w2, b.w2) &&
           same_bits(a.b2, b.b2);
}

// independent straight-line loss: -log(sum_Y e^{s_y/tau} / sum_X e^{s_v/tau}),
// computed without log-sum-exp shifting (safe at these magnitudes)
double loss_oracle(const Vec& sims, const std::vector<std::size_t>& pos, double tau) {
    double denom = 0.0;
    for (double s : sims) denom += std::exp(s / tau);
    double numer = 0.0;
    for (std::size_t y : pos) numer += std::exp(sims[y] / tau);
    return -std::log(numer / denom);
}

KnowledgeGraph small_synth(std::uint64_t seed) {
    SyntheticKgSpec spec;
    spec.seed = seed;
    spec.domains = 2;
    spec.tasks = 4;
    spec.steps_per_task = 4;
    spec.actions = 6;
    spec.objects = 6;
    spec.tools = 8;
    spec.purposes = 6;
    return gen_kg(spec);
}

} // namespace

TEST_CASE("contrastive_loss: equal similarities cancel to log(|X|/|Y|)") {
    const Vec sims(10, 0.3);
    for (double tau : {0.07, 0.5, 1.0}) {
        CHECK(contrastive_loss(sims, {0, 1}, tau) ==
              doctest::Approx(std::log(5.0)).epsilon(1e-12));
        CHECK(contrastive_loss(sims, {4}, tau) ==
              doctest::Approx(std::log(10.0)).epsilon(1e-12));
    }
    // numerator equals denominator
    std::vector<std::size_t> all(10);
    for (std::size_t i = 0; i < 10; ++i) all[i] = i;
    CHECK(contrastive_loss(sims, all, 0.07) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(contrastive_loss(sims, {}, 1.0), EmptyPositiveSet);
}

TEST_CASE("contrastive_loss matches the straight-line oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Vec sims(12);
        for (double& s : sims) s = rng.uniform(-1.0, 1.0);
        std::vector<std::size_t> pos{2, 5, 9};
        for (double tau : {0.07, 1.0})
            CHECK(contrastive_loss(sims, pos, tau) ==
                  doctest::Approx(loss_oracle(sims, pos, tau)).epsilon(1e-8));
    }
}

TEST_CASE("contrastive_loss gradient matches central differences") {
    Rng rng(6);
    Vec sims(9);
    for (double& s : sims) s = rng.uniform(-1.0, 1.0);
    const std::vector<std::size_t> pos{1, 4};
    const double tau = 0.7;
    Vec d_sims;
    contrastive_loss(sims, pos, tau, d_sims);
    REQUIRE(d_sims.size() == sims.size());
    const double h = 1e-6;
    for (std::size_t i = 0; i < sims.size(); ++i) {
        Vec sp(sims), sm(sims);
        sp[i] += h;
        sm[i] -= h;
        const double fd = (contrastive_loss(sp, pos, tau) - contrastive_loss(sm, pos, tau)) /
                          (2.0 * h);
        CHECK(d_sims[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("per-head loss through a module matches the oracle on the fixture") {
    const KnowledgeGraph kg = KnowledgeGraph::toy();
    Rng erng(child_seed(3, "embeddings"));
    const EmbeddingTable emb = EmbeddingTable::random(kg.all_entity_ids(), 32, erng);
    Rng mrng(9);
    const RelationModule m = RelationModule::init("HAS_TOOL", 32, 16, mrng);

    const Vec zhat = RelationModule::normalized(m.forward(emb.unit("pour_water")));
    Vec sims(emb.size());
    for (std::size_t v = 0; v < emb.size(); ++v)
        sims[v] = dot(zhat, emb.unit(v));
    std::vector<std::size_t> pos;
    for (const auto& t : kg.tails("pour_water", "HAS_TOOL")) pos.push_back(emb.index_of(t));

    const double got = contrastive_loss(m, emb, "pour_water", "HAS_TOOL", kg, 0.07);
    CHECK(got == doctest::Approx(loss_oracle(sims, pos, 0.07)).epsilon(1e-8));
    CHECK_THROWS_AS(contrastive_loss(m, emb, "brew", "HAS_ACTION", kg, 0.07), EmptyPositiveSet);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(cfg.validate(), BadConfig);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), BadConfig);
    cfg = TrainConfig{};
    cfg.epochs = -1;
    CHECK_THROWS_AS(cfg.validate(), BadConfig);
    cfg = TrainConfig{};
    cfg.embedding_mode = EmbeddingMode::FileLoadedThenTrainable;
    CHECK_THROWS_AS(cfg.validate(), BadConfig); // needs embedding_file
    CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("train: zero epochs leaves modules at their seeded initialization") {
    const KnowledgeGraph kg = KnowledgeGraph::toy();
    TrainConfig cfg;
    cfg.dim = 16;
    cfg.hidden = 8;
    cfg.epochs = 0;
    cfg.seed = 5;
    const TrainResult res = train(kg, cfg);
    CHECK(res.modules.by_relation.size() == 19);
    for (const auto& [rel, m] : res.modules.by_relation) {
        Rng mrng(child_seed(cfg.seed, "module/" + rel));
        CHECK(same_module(m, RelationModule::init(rel, 16, 8, mrng)));
    }
    // the fixture populates 10 of the 19 relations; the rest are flagged
    CHECK(res.untrained.size() == 9);
    for (const auto& rel : res.untrained) {
        bool has_example = false;
        for (const auto& id : kg.all_entity_ids())
            has_example = has_example || !kg.tails(id, rel).empty();
        CHECK_FALSE(has_example);
    }
    // log holds only the untrained markers: epoch 0, NaN loss, 0 examples
    CHECK(res.log.size() == 9);
    for (const auto& e : res.log) {
        CHECK(e.epoch == 0);
        CHECK(std::isnan(e.mean_loss));
        CHECK(e.n_examples == 0);
    }
}

TEST_CASE("train: fully-populated graph trains every relation") {
    const KnowledgeGraph kg = small_synth(2);
    TrainConfig cfg;
    cfg.dim = 16;
    cfg.hidden = 8;
    cfg.epochs = 2;
    cfg.seed = 5;
    const TrainResult res = train(kg, cfg);
    CHECK(res.untrained.empty());
    // one log entry per relation per epoch
    CHECK(res.log.size() == 19 * 2);
    for (const auto& e : res.log) {
        CHECK(e.epoch >= 1);
        CHECK(std::isfinite(e.mean_loss));
        CHECK(e.n_examples > 0);
    }
}

TEST_CASE("train: identical seeds give bitwise-identical results") {
    const KnowledgeGraph kg = KnowledgeGraph::toy();
    TrainConfig cfg;
    cfg.dim = 16;
    cfg.hidden = 8;
    cfg.epochs = 3;
    cfg.seed = 77;
    const TrainResult a = train(kg, cfg);
    const TrainResult b = train(kg, cfg);
    for (const auto& [rel, m] : a.modules.by_relation)
        CHECK(same_module(m, b.modules.by_relation.at(rel)));
    CHECK(same_bits(a.embeddings.rows(), b.embeddings.rows()));
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        // identical to the last bit, NaN markers aside
        if (std::isnan(a.log[i].mean_loss))
            CHECK(std::isnan(b.log[i].mean_loss));
        else
            CHECK(a.log[i].mean_loss == b.log[i].mean_loss);
    }
}

TEST_CASE("train: converged fixture loss sits under the separation threshold") {
    const KnowledgeGraph kg = KnowledgeGraph::toy();
    TrainConfig cfg;
    cfg.dim = 48;
    cfg.hidden = 24;
    cfg.epochs = 200;
    cfg.seed = 7;
    const TrainResult res = train(kg, cfg);

    std::size_t max_y = 0;
    std::vector<std::string> heads;
    for (const auto& id : kg.all_entity_ids()) {
        const auto& ts = kg.tails(id, "HAS_TOOL");
        if (ts.empty()) continue;
        heads.push_back(id);
        max_y = std::max(max_y, ts.size());
    }
    REQUIRE(!heads.empty());
    const double threshold = std::log1p(1.0 / static_cast<double>(max_y));
    std::size_t under = 0;
    for (const auto& h : heads) {
        if (contrastive_loss(res.modules.at("HAS_TOOL"), res.embeddings, h, "HAS_TOOL", kg,
                             cfg.temperature) < threshold)
            ++under;
    }
    CHECK(static_cast<double>(under) >= 0.9 * static_cast<double>(heads.size()));
}

TEST_CASE("separation_report: one record per (head, relation) with tails") {
    const KnowledgeGraph kg = KnowledgeGraph::toy();
    TrainConfig cfg;
    cfg.dim = 16;
    cfg.hidden = 8;
    cfg.epochs = 0;
    cfg.seed = 3;
    const TrainResult res = train(kg, cfg);
    const auto records = separation_report(res.modules, res.embeddings, kg, 0.07);

    std::size_t expected = 0;
    for (const auto& rel : kg.schema().relation_names())
        for (const auto& id : kg.all_entity_ids())
            if (!kg.tails(id, rel).empty()) ++expected;
    CHECK(records.size() == expected);

    for (const auto& r : records) {
        CHECK(r.y_size >= 1);
        CHECK(r.bound == doctest::Approx(std::log1p(1.0 / static_cast<double>(r.y_size)))
                             .epsilon(1e-12));
        CHECK(r.bound > 0.0);
        CHECK(r.margin >= -2.0);
        CHECK(r.margin <= 2.0);
        if (r.y_size == 1) CHECK(r.bound == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(std::isfinite(r.loss_tau1));
        CHECK(std::isfinite(r.loss_train));
    }
}

TEST_CASE("separation lemmas hold even for untrained modules") {
    // the implication and the mass/extreme bounds are algebraic facts about
    // the loss, so they must hold for arbitrary parameters
    const KnowledgeGraph kg = KnowledgeGraph::toy();
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        TrainConfig cfg;
        cfg.dim = 16;
        cfg.hidden = 8;
        cfg.epochs = 0;
        cfg.seed = seed;
        const TrainResult res = train(kg, cfg);
        const auto records = separation_report(res.modules, res.embeddings, kg, 0.07);
        const SeparationCheck c = check_separation(records);
        CHECK(c.records == records.size());
        CHECK(c.theorem1_violations == 0);
        CHECK(c.mass_violations == 0);
        CHECK(c.extreme_violations == 0);
    }
}

TEST_CASE("separation check counts a fabricated violation") {
    SeparationRecord r;
    r.head = "h";
    r.relation = "R";
    r.y_size = 1;
    r.bound = std::log(2.0);
    r.loss_tau1 = 0.1;  // premise holds
    r.margin = -0.5;    // but the margin is negative: impossible for a real loss
    r.mass_pos = std::exp(0.9);
    r.mass_neg = std::exp(0.4);
    r.min_pos = 0.9;
    r.max_neg = 0.4;
    const SeparationCheck c = check_separation({r});
    CHECK(c.theorem1_violations == 1);
    CHECK(c.premise_holds == 1);
}

TEST_CASE("vqa_finetune: zero epochs is a bitwise no-op") {
    const KnowledgeGraph kg = small_synth(4);
    TrainConfig tcfg;
    tcfg.dim = 16;
    tcfg.hidden = 8;
    tcfg.epochs = 2;
    tcfg.seed = 8;
    TrainResult res = train(kg, tcfg);
    const auto before = res.modules;
    const auto qa = instantiate(template_by_id("Q1"), kg, 1, 4);
    ProgramProvider provider = [&kg](const QAInstance& inst) {
        std::vector<std::vector<std::string>> out;
        for (const auto& p :
             compile_programs(inst.tid, inst.grounding.etype, kg.schema()))
            out.push_back(p.relations);
        return out;
    };
    VqaConfig vcfg;
    vcfg.epochs = 0;
    const VqaResult vr = vqa_finetune(res.modules, res.embeddings, qa, kg, provider, vcfg);
    CHECK(vr.epoch_loss.empty());
    for (const auto& [rel, m] : res.modules.by_relation)
        CHECK(same_module(m, before.by_relation.at(rel)));
}

TEST_CASE("vqa_finetune: degenerate options give the log-5 floor") {
    const KnowledgeGraph kg = small_synth(4);
    TrainConfig tcfg;
    tcfg.dim = 16;
    tcfg.hidden = 8;
    tcfg.epochs = 1;
    tcfg.seed = 8;
    TrainResult res = train(kg, tcfg);

    auto qa = instantiate(template_by_id("Q1"), kg, 1, 1);
    REQUIRE(qa.size() == 1);
    // all five options share one embedding -> uniform softmax
    for (auto& opt : qa[0].options) opt = qa[0].options[0];
    qa[0].correct_index = 2;

    ProgramProvider provider = [](const QAInstance&) {
        return std::vector<std::vector<std::string>>{{"HAS_TOOL"}};
    };
    VqaConfig vcfg;
    vcfg.epochs = 1;
    const VqaResult vr = vqa_finetune(res.modules, res.embeddings, qa, kg, provider, vcfg);
    REQUIRE(vr.epoch_loss.size() == 1);
    CHECK(vr.epoch_loss[0] == doctest::Approx(std::log(5.0)).epsilon(1e-9));
}

TEST_CASE("vqa_finetune: single-instance loss decreases monotonically") {
    const KnowledgeGraph kg = small_synth(4);
    TrainConfig tcfg;
    tcfg.dim = 24;
    tcfg.hidden = 12;
    tcfg.epochs = 50;
    tcfg.seed = 8;
    TrainResult res = train(kg, tcfg);

    const auto qa = instantiate(template_by_id("Q1"), kg, 2, 1);
    REQUIRE(qa.size() == 1);
    const QAInstance& inst = qa[0];
    const Program prog = compile_programs("Q1", inst.grounding.etype, kg.schema())[0];

    auto prob_correct = [&]() {
        const Vec z0 = ground(inst.grounding, res.embeddings);
        const ExecutionTrace tr = execute(prog, z0, res.modules, res.embeddings, kg);
        const auto scores = option_scores(tr.z_final, inst.options, kg,
                                          template_by_id("Q1").answer_type, res.embeddings);
        return scores[static_cast<std::size_t>(inst.correct_index)];
    };

    const double before = prob_correct();
    ProgramProvider provider = [&prog](const QAInstance&) {
        return std::vector<std::vector<std::string>>{prog.relations};
    };
    VqaConfig vcfg;
    vcfg.epochs = 10;
    const VqaResult vr = vqa_finetune(res.modules, res.embeddings, qa, kg, provider, vcfg);
    REQUIRE(vr.epoch_loss.size() == 10);
    for (std::size_t i = 0; i + 1 < vr.epoch_loss.size(); ++i)
        CHECK(vr.epoch_loss[i + 1] < vr.epoch_loss[i]);
    CHECK(prob_correct() > before);
}
