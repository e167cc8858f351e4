#include "kml/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "kml/errors.hpp"
#include "kml/version.hpp"

namespace kml {

using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
    if (temperature <= 0.0) throw BadConfig("temperature must be > 0");
    if (batch_size < 1) throw BadConfig("batch_size must be >= 1");
    if (dim < 1 || hidden < 1) throw BadConfig("dim and hidden must be >= 1");
    if (epochs < 0) throw BadConfig("epochs must be >= 0");
    if (embedding_mode == EmbeddingMode::FileLoadedThenTrainable && embedding_file.empty())
        throw BadConfig("file-loaded-then-trainable requires embedding_file");
}

// ---------------------------------------------------------------------------
// loss

double contrastive_loss(const Vec& sims, const std::vector<std::size_t>& positives, double tau) {
    if (positives.empty()) throw EmptyPositiveSet("no positives for contrastive loss");
    // L = logsumexp_X(s/tau) - logsumexp_Y(s/tau)
    double mx = -std::numeric_limits<double>::infinity();
    for (double s : sims) mx = std::max(mx, s / tau);
    double denom = 0.0;
    for (double s : sims) denom += std::exp(s / tau - mx);
    double my = -std::numeric_limits<double>::infinity();
    for (std::size_t y : positives) my = std::max(my, sims[y] / tau);
    double numer = 0.0;
    for (std::size_t y : positives) numer += std::exp(sims[y] / tau - my);
    return (mx + std::log(denom)) - (my + std::log(numer));
}

double contrastive_loss(const Vec& sims, const std::vector<std::size_t>& positives, double tau,
                        Vec& d_sims) {
    if (positives.empty()) throw EmptyPositiveSet("no positives for contrastive loss");
    const double loss = contrastive_loss(sims, positives, tau);
    // dL/ds_v = (p_v - [v in Y] q_v) / tau, p = softmax_X, q = softmax_Y
    double mx = -std::numeric_limits<double>::infinity();
    for (double s : sims) mx = std::max(mx, s / tau);
    double denom = 0.0;
    for (double s : sims) denom += std::exp(s / tau - mx);
    d_sims.assign(sims.size(), 0.0);
    for (std::size_t v = 0; v < sims.size(); ++v)
        d_sims[v] = std::exp(sims[v] / tau - mx) / denom / tau;
    double my = -std::numeric_limits<double>::infinity();
    for (std::size_t y : positives) my = std::max(my, sims[y] / tau);
    double numer = 0.0;
    for (std::size_t y : positives) numer += std::exp(sims[y] / tau - my);
    for (std::size_t y : positives)
        d_sims[y] -= std::exp(sims[y] / tau - my) / numer / tau;
    return loss;
}

namespace {

// sims[v] = zhat . row_v for every entity row
Vec all_similarities(const Vec& zhat, const EmbeddingTable& emb) {
    Vec sims(emb.size(), 0.0);
    for (std::size_t v = 0; v < emb.size(); ++v)
        sims[v] = dot(zhat.data(), emb.row(v), emb.dim());
    return sims;
}

std::vector<std::size_t> positive_indices(const EmbeddingTable& emb,
                                          const std::set<std::string>& tails) {
    std::vector<std::size_t> out;
    out.reserve(tails.size());
    for (const auto& t : tails) out.push_back(emb.index_of(t));
    return out;
}

} // namespace

double contrastive_loss(const RelationModule& m, const EmbeddingTable& emb,
                        const std::string& head, const std::string& relation,
                        const KnowledgeGraph& kg, double tau) {
    const auto& tails = kg.tails(head, relation);
    if (tails.empty()) throw EmptyPositiveSet("(" + head + ", " + relation + ")");
    const Vec zhat = RelationModule::normalized(m.forward(emb.unit(head)));
    return contrastive_loss(all_similarities(zhat, emb), positive_indices(emb, tails), tau);
}

// ---------------------------------------------------------------------------
// training

namespace {

struct ModuleOpt { // AdamW state per parameter tensor of one module
    AdamwState w1, b1, w2, b2;
    explicit ModuleOpt(const RelationModule& m)
        : w1(m.w1.size()), b1(m.b1.size()), w2(m.w2.size()), b2(m.b2.size()) {}
};

} // namespace

TrainResult train(const KnowledgeGraph& kg, const TrainConfig& cfg) {
    cfg.validate();
    if (!kg.frozen()) throw FrozenGraph("train requires a frozen graph");
    if (kg.entity_count() == 0) throw EmptyGraph("no entities");

    TrainResult res;
    // embeddings
    if (cfg.embedding_mode == EmbeddingMode::FileLoadedThenTrainable) {
        res.embeddings = EmbeddingTable::load(cfg.embedding_file);
        if (res.embeddings.dim() != cfg.dim)
            throw DimensionMismatch("embedding file dim " + std::to_string(res.embeddings.dim()) +
                                    " vs config dim " + std::to_string(cfg.dim));
        for (const auto& id : kg.all_entity_ids())
            if (!res.embeddings.has(id))
                throw UnknownCategory("embedding file lacks entity '" + id + "'");
    } else {
        Rng erng(child_seed(cfg.seed, "embeddings"));
        res.embeddings = EmbeddingTable::random(kg.all_entity_ids(), cfg.dim, erng);
    }
    const bool train_emb = cfg.embedding_mode != EmbeddingMode::Frozen;

    // one module per schema relation, inverses included
    res.modules.dim = cfg.dim;
    res.modules.hidden = cfg.hidden;
    const auto& rel_names = kg.schema().relation_names();
    for (const auto& rel : rel_names) {
        Rng mrng(child_seed(cfg.seed, "module/" + rel));
        res.modules.by_relation.emplace(rel,
                                        RelationModule::init(rel, cfg.dim, cfg.hidden, mrng));
    }

    // per-relation example lists: (head index, sorted tail indices)
    struct Example {
        std::size_t head;
        std::vector<std::size_t> tails;
    };
    std::map<std::string, std::vector<Example>> examples;
    for (const auto& rel : rel_names) {
        std::vector<Example> ex;
        for (const auto& id : kg.all_entity_ids()) {
            const auto& ts = kg.tails(id, rel);
            if (ts.empty()) continue;
            ex.push_back({res.embeddings.index_of(id), positive_indices(res.embeddings, ts)});
        }
        if (ex.empty()) {
            res.untrained.push_back(rel);
            res.log.push_back({0, rel, std::numeric_limits<double>::quiet_NaN(), 0});
        } else {
            examples.emplace(rel, std::move(ex));
        }
    }

    std::map<std::string, ModuleOpt> opt;
    for (const auto& [rel, m] : res.modules.by_relation) opt.emplace(rel, ModuleOpt(m));
    AdamwState emb_opt(res.embeddings.rows().size());
    AdamwConfig mod_cfg{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    // rows are re-normalized after every step, so decaying them is pure noise
    AdamwConfig emb_cfg{cfg.lr, 0.9, 0.999, 1e-8, 0.0};

    Mat emb_grad(res.embeddings.size(), cfg.dim);
    const std::size_t n_entities = res.embeddings.size();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (auto& [rel, ex] : examples) {
            RelationModule& m = res.modules.at(rel);
            ModuleOpt& mo = opt.at(rel);
            Rng shuffle_rng(child_seed(cfg.seed, "epoch/" + std::to_string(epoch) + "/" + rel));
            std::vector<std::size_t> order(ex.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            shuffle_rng.shuffle(order);

            double epoch_loss = 0.0;
            for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
                const std::size_t take = std::min(cfg.batch_size, order.size() - off);
                RelationModule::Grads acc = m.make_grads();
                if (train_emb) emb_grad.zero();
                for (std::size_t b = 0; b < take; ++b) {
                    const Example& e = ex[order[off + b]];
                    const Vec x = res.embeddings.unit(e.head);
                    RelationModule::ForwardCache cache;
                    const Vec z = m.forward(x, &cache);
                    const Vec zhat = RelationModule::normalized(z);
                    const Vec sims = all_similarities(zhat, res.embeddings);
                    Vec d_sims;
                    epoch_loss += contrastive_loss(sims, e.tails, cfg.temperature, d_sims);
                    // dL/dzhat = sum_v d_sims[v] * row_v; embedding rows pick
                    // up d_sims[v] * zhat on the same pass
                    Vec d_zhat(cfg.dim, 0.0);
                    for (std::size_t v = 0; v < n_entities; ++v) {
                        const double g = d_sims[v];
                        if (g == 0.0) continue;
                        const double* row = res.embeddings.row(v);
                        double* grow = train_emb ? emb_grad.row(v) : nullptr;
                        for (std::size_t j = 0; j < cfg.dim; ++j) {
                            d_zhat[j] += g * row[j];
                            if (grow) grow[j] += g * zhat[j];
                        }
                    }
                    const Vec d_z = normalize_backward(z, d_zhat);
                    const RelationModule::Grads g = m.backward(cache, d_z);
                    acc.add_scaled(g, 1.0);
                    if (train_emb) { // input row also feeds the module
                        double* grow = emb_grad.row(e.head);
                        for (std::size_t j = 0; j < cfg.dim; ++j) grow[j] += g.x[j];
                    }
                }
                const double inv = 1.0 / static_cast<double>(take);
                for (double& v : acc.w1.a) v *= inv;
                for (double& v : acc.b1) v *= inv;
                for (double& v : acc.w2.a) v *= inv;
                for (double& v : acc.b2) v *= inv;
                mo.w1.step(m.w1, acc.w1, mod_cfg);
                mo.b1.step(m.b1, acc.b1, mod_cfg);
                mo.w2.step(m.w2, acc.w2, mod_cfg);
                mo.b2.step(m.b2, acc.b2, mod_cfg);
                if (train_emb) {
                    for (double& v : emb_grad.a) v *= inv;
                    emb_opt.step(res.embeddings.rows(), emb_grad, emb_cfg);
                    res.embeddings.renormalize();
                }
            }
            res.log.push_back(
                {epoch, rel, epoch_loss / static_cast<double>(ex.size()), ex.size()});
        }
    }
    return res;
}

void save_train_log(const std::string& path, const std::vector<TrainLogEntry>& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    for (const auto& e : log) {
        ordered_json j;
        j["epoch"] = e.epoch;
        j["relation"] = e.relation;
        if (std::isnan(e.mean_loss))
            j["mean_loss"] = nullptr;
        else
            j["mean_loss"] = e.mean_loss;
        j["n_examples"] = e.n_examples;
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// separation records and the theorem/lemma checks

std::vector<SeparationRecord> separation_report(const ModuleSet& modules,
                                                const EmbeddingTable& embeddings,
                                                const KnowledgeGraph& kg, double train_tau) {
    std::vector<SeparationRecord> out;
    for (const auto& rel : kg.schema().relation_names()) {
        if (!modules.has(rel)) continue;
        const RelationModule& m = modules.at(rel);
        for (const auto& head : kg.all_entity_ids()) {
            const auto& tails = kg.tails(head, rel);
            if (tails.empty()) continue;
            const Vec zhat = RelationModule::normalized(m.forward(embeddings.unit(head)));
            const Vec sims = all_similarities(zhat, embeddings);
            const auto pos = positive_indices(embeddings, tails);
            std::vector<bool> is_pos(sims.size(), false);
            for (std::size_t y : pos) is_pos[y] = true;

            SeparationRecord r;
            r.head = head;
            r.relation = rel;
            r.y_size = tails.size();
            r.loss_tau1 = contrastive_loss(sims, pos, 1.0);
            r.loss_train = contrastive_loss(sims, pos, train_tau);
            r.bound = std::log1p(1.0 / static_cast<double>(tails.size()));
            r.min_pos = 2.0;
            r.max_neg = -2.0;
            r.mass_pos = 0.0;
            r.mass_neg = 0.0;
            r.u_empty = pos.size() == sims.size();
            for (std::size_t v = 0; v < sims.size(); ++v) {
                if (is_pos[v]) {
                    r.min_pos = std::min(r.min_pos, sims[v]);
                    r.mass_pos += std::exp(sims[v]);
                } else {
                    r.max_neg = std::max(r.max_neg, sims[v]);
                    r.mass_neg += std::exp(sims[v]);
                }
            }
            r.margin = r.u_empty ? 2.0 : r.min_pos - r.max_neg;
            out.push_back(std::move(r));
        }
    }
    return out;
}

SeparationCheck check_separation(const std::vector<SeparationRecord>& records, double rel_tol) {
    SeparationCheck c;
    c.records = records.size();
    for (const auto& r : records) {
        const bool premise = r.loss_tau1 < r.bound;
        if (premise) ++c.premise_holds;
        if (r.margin > 0.0) ++c.margin_positive;
        if (premise && r.margin <= 0.0) ++c.theorem1_violations;
        // mass bound: C <= (e^L - 1) A; equality holds by algebra
        const double rhs = std::expm1(r.loss_tau1) * r.mass_pos;
        if (r.mass_neg > rhs * (1.0 + rel_tol) + 1e-12) ++c.mass_violations;
        // extreme-similarity bounds in the proof's displayed form:
        //   A >= |Y| e^{min_y}    and    C >= e^{max_u}
        const double ymin_mass = static_cast<double>(r.y_size) * std::exp(r.min_pos);
        if (ymin_mass > r.mass_pos * (1.0 + rel_tol) + 1e-12) ++c.extreme_violations;
        if (!r.u_empty && std::exp(r.max_neg) > r.mass_neg * (1.0 + rel_tol) + 1e-12)
            ++c.extreme_violations;
        // printed direction (min_y >= log A - log|Y|), informational only
        const double log_mean = std::log(r.mass_pos) - std::log(static_cast<double>(r.y_size));
        if (r.min_pos < log_mean - rel_tol * std::max(1.0, std::abs(log_mean)))
            ++c.printed_min_form_failures;
    }
    return c;
}

void save_separation_report(const std::string& path,
                            const std::vector<SeparationRecord>& records,
                            const SeparationCheck& check, double train_tau,
                            std::uint64_t seed) {
    ordered_json j;
    j["version"] = kVersion;
    j["seed"] = seed;
    j["train_tau"] = train_tau;
    j["theory_tau"] = 1.0;
    ordered_json summary;
    summary["records"] = check.records;
    summary["premise_holds"] = check.premise_holds;
    summary["margin_positive"] = check.margin_positive;
    summary["theorem1_violations"] = check.theorem1_violations;
    summary["mass_bound_violations"] = check.mass_violations;
    summary["extreme_bound_violations"] = check.extreme_violations;
    summary["printed_min_form_failures"] = check.printed_min_form_failures;
    j["summary"] = summary;
    j["records"] = ordered_json::array();
    for (const auto& r : records) {
        ordered_json jr;
        jr["head"] = r.head;
        jr["relation"] = r.relation;
        jr["y_size"] = r.y_size;
        jr["loss_tau1"] = r.loss_tau1;
        jr["loss_train"] = r.loss_train;
        jr["margin"] = r.margin;
        jr["bound"] = r.bound;
        jr["mass_pos"] = r.mass_pos;
        jr["mass_neg"] = r.mass_neg;
        jr["min_pos"] = r.min_pos;
        jr["max_neg"] = r.max_neg;
        jr["u_empty"] = r.u_empty;
        j["records"].push_back(jr);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

} // namespace kml
