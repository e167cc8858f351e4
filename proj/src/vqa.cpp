#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "kml/optimizer.hpp"
#include "kml/program.hpp"
#include "kml/trainer.hpp"

namespace kml {

namespace {

struct ModuleOpt {
    AdamwState w1, b1, w2, b2;
    explicit ModuleOpt(const RelationModule& m)
        : w1(m.w1.size()), b1(m.b1.size()), w2(m.w2.size()), b2(m.b2.size()) {}
};

struct OptionVec {
    Vec v;
    bool from_entity = false;
    std::string entity_id; // set when from_entity
};

} // namespace

VqaResult vqa_finetune(ModuleSet& modules, EmbeddingTable& embeddings,
                       const std::vector<QAInstance>& qa_set, const KnowledgeGraph& kg,
                       const ProgramProvider& provider, const VqaConfig& cfg) {
    VqaResult res;
    if (cfg.epochs <= 0 || qa_set.empty()) return res;

    EmbeddingTable sidecar;
    const bool has_sidecar = !cfg.option_embedding_file.empty();
    if (has_sidecar) sidecar = EmbeddingTable::load(cfg.option_embedding_file);

    // static per-instance plumbing: programs and option embeddings
    struct Prepared {
        std::vector<std::vector<std::string>> programs;
        std::array<OptionVec, 5> options;
        std::vector<std::pair<std::size_t, double>> ground_rows; // embedding row, weight
        int correct = 0;
    };
    std::vector<Prepared> prep;
    prep.reserve(qa_set.size());
    for (const auto& inst : qa_set) {
        Prepared p;
        p.programs = provider(inst);
        if (p.programs.empty())
            throw NoProgramAvailable(inst.tid + " grounded at '" + inst.grounding.entity_id + "'");
        for (const auto& prog : p.programs)
            for (const auto& r : prog) modules.at(r); // throws MissingModule
        const QaTemplate& t = template_by_id(inst.tid);
        bool any_entity = false, any_side = false;
        for (std::size_t i = 0; i < 5; ++i) {
            const auto id = resolve_option(kg, t.answer_type, inst.options[i]);
            if (id && embeddings.has(*id)) {
                p.options[i] = {embeddings.unit(*id), true, *id};
                any_entity = true;
            } else if (has_sidecar && sidecar.has(inst.options[i])) {
                p.options[i] = {sidecar.unit(inst.options[i]), false, {}};
                any_side = true;
            } else {
                throw MissingOptionEmbedding("'" + inst.options[i] + "'");
            }
        }
        if (any_entity && any_side)
            throw MixedOptionSources(inst.tid + ": options mix entity and sidecar embeddings");
        if (inst.grounding.scores.empty()) {
            p.ground_rows = {{embeddings.index_of(inst.grounding.entity_id), 1.0}};
        } else {
            for (const auto& [id, w] : inst.grounding.scores)
                p.ground_rows.emplace_back(embeddings.index_of(id), w);
        }
        p.correct = inst.correct_index;
        prep.push_back(std::move(p));
    }

    AdamwConfig mod_cfg;
    mod_cfg.lr = cfg.lr;
    mod_cfg.weight_decay = cfg.weight_decay;
    AdamwConfig emb_cfg;
    emb_cfg.lr = cfg.lr;
    emb_cfg.weight_decay = 0.0; // rows are renormalized after every step

    std::map<std::string, ModuleOpt> opt;
    for (const auto& [name, m] : modules.by_relation) opt.emplace(name, ModuleOpt(m));
    AdamwState emb_state(embeddings.rows().size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::map<std::string, RelationModule::Grads> grads;
        for (const auto& [name, m] : modules.by_relation) grads.emplace(name, m.make_grads());
        Mat emb_grad = embeddings.rows();
        emb_grad.zero();

        double loss_sum = 0.0;
        for (const auto& p : prep) {
            const double inst_scale =
                1.0 / (static_cast<double>(qa_set.size()) * static_cast<double>(p.programs.size()));
            for (const auto& prog : p.programs) {
                // forward with caches
                Vec zsum(embeddings.dim(), 0.0);
                for (const auto& [row, w] : p.ground_rows)
                    axpy(w, embeddings.unit(row), zsum);
                std::vector<Vec> raw(prog.size());
                std::vector<RelationModule::ForwardCache> caches(prog.size());
                Vec state = normalized(zsum);
                for (std::size_t t = 0; t < prog.size(); ++t) {
                    raw[t] = modules.at(prog[t]).forward(state, &caches[t]);
                    state = RelationModule::normalized(raw[t]);
                }
                // cross-entropy over cosine scores
                std::array<double, 5> cos{}, prob{};
                double cmax = -2.0;
                for (std::size_t i = 0; i < 5; ++i) {
                    cos[i] = dot(state, p.options[i].v);
                    cmax = std::max(cmax, cos[i]);
                }
                double denom = 0.0;
                for (double c : cos) denom += std::exp(c - cmax);
                for (std::size_t i = 0; i < 5; ++i) prob[i] = std::exp(cos[i] - cmax) / denom;
                loss_sum += -std::log(prob[static_cast<std::size_t>(p.correct)]) /
                            static_cast<double>(p.programs.size());

                // backward
                Vec d_state(embeddings.dim(), 0.0);
                for (std::size_t i = 0; i < 5; ++i) {
                    const double d_cos = prob[i] - (static_cast<int>(i) == p.correct ? 1.0 : 0.0);
                    axpy(d_cos, p.options[i].v, d_state);
                    if (cfg.include_embeddings && p.options[i].from_entity) {
                        const std::size_t row = embeddings.index_of(p.options[i].entity_id);
                        double* g = emb_grad.row(row);
                        for (std::size_t d = 0; d < embeddings.dim(); ++d)
                            g[d] += inst_scale * d_cos * state[d];
                    }
                }
                for (std::size_t t = prog.size(); t-- > 0;) {
                    const Vec d_raw = normalize_backward(raw[t], d_state);
                    RelationModule::Grads g = modules.at(prog[t]).backward(caches[t], d_raw);
                    grads.at(prog[t]).add_scaled(g, inst_scale);
                    d_state = std::move(g.x);
                }
                if (cfg.include_embeddings) {
                    const Vec d_zsum = normalize_backward(zsum, d_state);
                    for (const auto& [row, w] : p.ground_rows) {
                        double* g = emb_grad.row(row);
                        for (std::size_t d = 0; d < embeddings.dim(); ++d)
                            g[d] += w * inst_scale * d_zsum[d];
                    }
                }
            }
        }
        res.epoch_loss.push_back(loss_sum / static_cast<double>(qa_set.size()));

        for (auto& [name, m] : modules.by_relation) {
            const auto& g = grads.at(name);
            auto& o = opt.at(name);
            o.w1.step(m.w1, g.w1, mod_cfg);
            o.b1.step(m.b1, g.b1, mod_cfg);
            o.w2.step(m.w2, g.w2, mod_cfg);
            o.b2.step(m.b2, g.b2, mod_cfg);
        }
        if (cfg.include_embeddings) {
            emb_state.step(embeddings.rows(), emb_grad, emb_cfg);
            embeddings.renormalize();
            // option vectors track the rows they came from
            for (auto& p : prep)
                for (auto& ov : p.options)
                    if (ov.from_entity) ov.v = embeddings.unit(ov.entity_id);
        }
    }
    return res;
}

} // namespace kml
