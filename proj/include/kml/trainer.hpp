#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kml/embedding.hpp"
#include "kml/kg.hpp"
#include "kml/optimizer.hpp"
#include "kml/qa.hpp"
#include "kml/relation_module.hpp"

namespace kml {

struct TrainConfig {
    std::size_t dim = 512;
    std::size_t hidden = 128;
    std::size_t batch_size = 256; // heads (positive sets) per optimizer step
    int epochs = 100;
    double lr = 0.01;
    double weight_decay = 0.01;
    double temperature = 0.07; // tau > 0
    std::uint64_t seed = 0;
    EmbeddingMode embedding_mode = EmbeddingMode::Trainable;
    std::string embedding_file; // used by file-loaded-then-trainable

    void validate() const; // throws BadConfig
};

// Multi-positive contrastive loss over one head:
//   L = -log( sum_{y in Y} e^{s_y/tau} / sum_{v in X} e^{s_v/tau} )
// where sims[v] = s(zhat, x_v) over *all* entity rows v (positives included).
// Log-sum-exp stabilized; gradients w.r.t. the similarity vector on request.
double contrastive_loss(const Vec& sims, const std::vector<std::size_t>& positives, double tau);
double contrastive_loss(const Vec& sims, const std::vector<std::size_t>& positives, double tau,
                        Vec& d_sims);

// Convenience: loss for (head, relation) through a module, as trained.
double contrastive_loss(const RelationModule& m, const EmbeddingTable& emb,
                        const std::string& head, const std::string& relation,
                        const KnowledgeGraph& kg, double tau);

struct TrainLogEntry {
    int epoch = 0;
    std::string relation;
    double mean_loss = 0.0; // NaN for untrained-relation marker entries
    std::size_t n_examples = 0;
};

struct TrainResult {
    ModuleSet modules;
    EmbeddingTable embeddings;
    std::vector<TrainLogEntry> log;
    std::vector<std::string> untrained; // relations with zero triplets
};

// One module per schema relation (inverses included). Batches are grouped by
// relation and reshuffled every epoch; everything is driven by cfg.seed and
// single-threaded, so identical seeds give bitwise-identical parameters.
TrainResult train(const KnowledgeGraph& kg, const TrainConfig& cfg);

void save_train_log(const std::string& path, const std::vector<TrainLogEntry>& log);

struct SeparationRecord {
    std::string head;
    std::string relation;
    std::size_t y_size = 0;
    double loss_tau1 = 0.0;  // L(x) at tau = 1, where the theory lives
    double loss_train = 0.0; // L(x) at the training temperature
    double margin = 0.0;     // min_y s_y - max_u s_u; +2 when U(x) is empty
    double bound = 0.0;      // log(1 + 1/|Y(x)|)
    double mass_pos = 0.0;   // A = sum_Y e^{s_y}        (tau = 1)
    double mass_neg = 0.0;   // C = sum_U e^{s_u}        (tau = 1)
    double min_pos = 0.0;    // min_y s_y
    double max_neg = 0.0;    // max_u s_u; -2 placeholder when U(x) is empty
    bool u_empty = false;
};

// One record per (head, relation) with non-empty Y(x); modules may be
// trained or untrained.
std::vector<SeparationRecord> separation_report(const ModuleSet& modules,
                                                const EmbeddingTable& embeddings,
                                                const KnowledgeGraph& kg,
                                                double train_tau = 0.07);

struct SeparationCheck {
    std::size_t records = 0;
    std::size_t premise_holds = 0;      // loss_tau1 < bound
    std::size_t margin_positive = 0;    // margin > 0 (all records, informational)
    std::size_t theorem1_violations = 0; // premise holds but margin <= 0
    std::size_t mass_violations = 0;     // C > (e^L - 1) * A beyond tolerance
    std::size_t extreme_violations = 0;  // A >= |Y| e^{min_y} or C >= e^{max_u} fails
    // The separation lemma is printed with "min_y s_y >= log A - log|Y|",
    // which contradicts its own proof step A >= |Y| e^{min_y} (Jensen makes
    // the printed direction unattainable whenever positives are not exactly
    // tied). We assert the proof-form inequalities above and keep a count for
    // the printed direction purely as information.
    std::size_t printed_min_form_failures = 0;
};

SeparationCheck check_separation(const std::vector<SeparationRecord>& records,
                                 double rel_tol = 1e-6);

void save_separation_report(const std::string& path,
                            const std::vector<SeparationRecord>& records,
                            const SeparationCheck& check, double train_tau,
                            std::uint64_t seed);

struct VqaConfig {
    double lr = 0.001;
    double weight_decay = 0.01;
    int epochs = 100;
    bool include_embeddings = false; // default: fine-tune modules only
    std::string option_embedding_file; // sidecar for free-text options
};

struct VqaResult {
    std::vector<double> epoch_loss; // mean cross-entropy per epoch
};

// Supplies the executable programs for an instance; every returned program is
// executed and their losses averaged.
using ProgramProvider =
    std::function<std::vector<std::vector<std::string>>(const QAInstance&)>;

// Joint fine-tuning of the modules on a program execution path with
// cross-entropy over softmax'd option cosines. Full-batch gradient per epoch.
VqaResult vqa_finetune(ModuleSet& modules, EmbeddingTable& embeddings,
                       const std::vector<QAInstance>& qa_set,
                       const KnowledgeGraph& kg, const ProgramProvider& provider,
                       const VqaConfig& cfg);

} // namespace kml
