#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "kml/synthetic.hpp"
#include "kml/theory.hpp"
#include "kml/trainer.hpp"

namespace kml {

enum class KgSource { Toy, Synthetic, File };

// Everything run-all needs. `seed` overrides the per-stage seeds so one value
// drives the whole run; reports are then bit-identical across repeats.
struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string workdir = "run";
    KgSource kg_source = KgSource::Synthetic;
    std::string kg_file;   // KgSource::File
    SyntheticKgSpec synth; // KgSource::Synthetic

    TrainConfig train;

    std::size_t qa_per_template = 10;
    double grounding_noise = 0.0;
    int grounding_topk = 1;
    bool mean_aggregate = false;

    // Joint module fine-tuning on a separately sampled QA set before eval-qa;
    // skipped at 0 epochs. Separation, logic and bound checks always run on
    // the contrastively trained base modules.
    int vqa_epochs = 0;
    double vqa_lr = 0.001;
    double vqa_weight_decay = 0.01;
    bool vqa_include_embeddings = false;
    std::size_t vqa_per_template = 0; // 0: same as qa_per_template

    TheoryConfig theory;

    std::size_t logic_k = 10;
    bool logic_type_filtered = true;
    std::size_t logic_max_pairs = 2000;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitStageError = 1;        // an exception inside a stage
inline constexpr int kExitInvariantFailure = 2;  // a verification suite failed

// gen-kg -> train -> verify-separation -> gen-qa -> eval-qa (kml and igp) ->
// logic-eval -> verify-bounds, each stage writing its report under
// cfg.workdir, plus a final summary.json. Progress goes to `log`; stage
// errors are reported there prefixed with the failing stage's name.
int run_pipeline(const PipelineConfig& cfg, std::ostream& log);
int run_pipeline(const PipelineConfig& cfg); // logs to stdout

} // namespace kml
