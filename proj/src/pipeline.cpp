#include "kml/pipeline.hpp"

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kml/checkpoint.hpp"
#include "kml/errors.hpp"
#include "kml/logic.hpp"
#include "kml/program.hpp"
#include "kml/qa.hpp"
#include "kml/rng.hpp"
#include "kml/version.hpp"

namespace kml {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

const char* to_string(KgSource s) {
    switch (s) {
    case KgSource::Toy: return "toy";
    case KgSource::Synthetic: return "synthetic";
    case KgSource::File: return "file";
    }
    return "?";
}

} // namespace

int run_pipeline(const PipelineConfig& cfg) { return run_pipeline(cfg, std::cout); }

int run_pipeline(const PipelineConfig& cfg, std::ostream& log) {
    std::string stage = "setup";
    try {
        fs::create_directories(cfg.workdir);
        auto path = [&](const char* name) { return (fs::path(cfg.workdir) / name).string(); };

        std::vector<std::string> failures; // invariant-suite failures, human readable
        ordered_json summary;
        summary["version"] = kVersion;
        summary["seed"] = cfg.seed;

        // ---------------------------------------------------------- gen-kg
        stage = "gen-kg";
        KnowledgeGraph kg;
        switch (cfg.kg_source) {
        case KgSource::Toy:
            kg = KnowledgeGraph::toy();
            break;
        case KgSource::File:
            kg = KnowledgeGraph::load_json(cfg.kg_file);
            break;
        case KgSource::Synthetic: {
            SyntheticKgSpec spec = cfg.synth;
            spec.seed = cfg.seed;
            spec.validate();
            kg = gen_kg(spec);
            break;
        }
        }
        kg.save_json(path("kg.json"));
        log << "[run-all] gen-kg: source=" << to_string(cfg.kg_source) << " entities="
            << kg.entity_count() << " triplets=" << kg.triplet_count() << "\n";
        {
            ordered_json js;
            js["source"] = to_string(cfg.kg_source);
            js["entities"] = kg.entity_count();
            js["triplets"] = kg.triplet_count();
            js["file"] = "kg.json";
            summary["gen_kg"] = js;
        }

        // ----------------------------------------------------------- train
        stage = "train";
        TrainConfig tc = cfg.train;
        tc.seed = cfg.seed;
        tc.validate();
        TrainResult tr = train(kg, tc);
        save_checkpoint(path("ckpt"), tr.modules, tr.embeddings, cfg.seed);
        save_train_log(path("train_log.jsonl"), tr.log);
        log << "[run-all] train: modules=" << tr.modules.by_relation.size() << " untrained="
            << tr.untrained.size() << " epochs=" << tc.epochs << "\n";
        {
            ordered_json js;
            js["modules"] = tr.modules.by_relation.size();
            js["untrained_relations"] = tr.untrained;
            js["epochs"] = tc.epochs;
            js["dim"] = tc.dim;
            js["hidden"] = tc.hidden;
            js["temperature"] = tc.temperature;
            js["checkpoint"] = "ckpt";
            js["log_file"] = "train_log.jsonl";
            summary["train"] = js;
        }

        // ----------------------------------------------- verify-separation
        stage = "verify-separation";
        const auto records = separation_report(tr.modules, tr.embeddings, kg, tc.temperature);
        const auto check = check_separation(records);
        save_separation_report(path("separation.json"), records, check, tc.temperature, cfg.seed);
        log << "[run-all] verify-separation: records=" << check.records << " premise_holds="
            << check.premise_holds << " violations="
            << check.theorem1_violations + check.mass_violations + check.extreme_violations
            << "\n";
        if (check.theorem1_violations > 0)
            failures.push_back("verify-separation: " + std::to_string(check.theorem1_violations) +
                               " record(s) meet the loss premise with non-positive margin");
        if (check.mass_violations > 0)
            failures.push_back("verify-separation: " + std::to_string(check.mass_violations) +
                               " mass-bound violation(s)");
        if (check.extreme_violations > 0)
            failures.push_back("verify-separation: " + std::to_string(check.extreme_violations) +
                               " extreme-similarity bound violation(s)");
        {
            ordered_json js;
            js["records"] = check.records;
            js["premise_holds"] = check.premise_holds;
            js["margin_positive"] = check.margin_positive;
            js["theorem1_violations"] = check.theorem1_violations;
            js["mass_bound_violations"] = check.mass_violations;
            js["extreme_bound_violations"] = check.extreme_violations;
            js["file"] = "separation.json";
            summary["verify_separation"] = js;
        }

        // ---------------------------------------------------------- gen-qa
        stage = "gen-qa";
        std::vector<QAInstance> qa;
        std::map<std::string, std::size_t> qa_counts;
        std::map<std::string, std::string> qa_skips;
        for (const auto& t : all_templates()) {
            QaGenConfig qc;
            qc.seed = cfg.seed;
            qc.count = cfg.qa_per_template;
            qc.grounding_noise = cfg.grounding_noise;
            qc.grounding_topk = cfg.grounding_topk;
            try {
                auto inst = instantiate(t, kg, qc);
                qa_counts[t.tid] = inst.size();
                qa.insert(qa.end(), inst.begin(), inst.end());
            } catch (const InsufficientVocabulary& e) {
                qa_skips[t.tid] = e.what();
            } catch (const NoRealizableGrounding& e) {
                qa_skips[t.tid] = e.what();
            }
        }
        std::size_t invalid = 0;
        for (const auto& inst : qa)
            if (!validate(inst, kg)) ++invalid;
        save_qa_jsonl(path("qa.jsonl"), qa);
        log << "[run-all] gen-qa: instances=" << qa.size() << " templates_skipped="
            << qa_skips.size() << " invalid=" << invalid << "\n";
        if (invalid > 0)
            failures.push_back("gen-qa: " + std::to_string(invalid) +
                               " generated instance(s) failed validation");
        {
            ordered_json js;
            js["instances"] = qa.size();
            js["invalid"] = invalid;
            js["per_template"] = qa_counts;
            js["skipped"] = qa_skips;
            js["file"] = "qa.jsonl";
            summary["gen_qa"] = js;
        }

        // ---------------------------------------------------- vqa-finetune
        // eval-qa sees the fine-tuned weights; every verification stage keeps
        // the base ones
        ModuleSet eval_modules = tr.modules;
        EmbeddingTable eval_embeddings = tr.embeddings;
        if (cfg.vqa_epochs > 0) {
            stage = "vqa-finetune";
            QaGenConfig qc;
            qc.seed = child_seed(cfg.seed, "vqa-train");
            qc.count = cfg.vqa_per_template ? cfg.vqa_per_template : cfg.qa_per_template;
            qc.grounding_noise = cfg.grounding_noise;
            qc.grounding_topk = cfg.grounding_topk;
            std::vector<QAInstance> qa_train;
            for (const auto& t : all_templates()) {
                try {
                    auto inst = instantiate(t, kg, qc);
                    qa_train.insert(qa_train.end(), inst.begin(), inst.end());
                } catch (const InsufficientVocabulary&) {
                } catch (const NoRealizableGrounding&) {
                }
            }
            save_qa_jsonl(path("qa_train.jsonl"), qa_train);
            VqaConfig vc;
            vc.lr = cfg.vqa_lr;
            vc.weight_decay = cfg.vqa_weight_decay;
            vc.epochs = cfg.vqa_epochs;
            vc.include_embeddings = cfg.vqa_include_embeddings;
            const ProgramProvider provider = [&kg](const QAInstance& inst) {
                std::vector<std::vector<std::string>> out;
                for (const auto& p : compile_programs(inst.tid, inst.grounding.etype, kg.schema()))
                    out.push_back(p.relations);
                return out;
            };
            const VqaResult vr =
                vqa_finetune(eval_modules, eval_embeddings, qa_train, kg, provider, vc);
            save_checkpoint(path("ckpt_vqa"), eval_modules, eval_embeddings, cfg.seed);
            log << "[run-all] vqa-finetune: train_instances=" << qa_train.size() << " epochs="
                << vc.epochs << " loss_first="
                << (vr.epoch_loss.empty() ? 0.0 : vr.epoch_loss.front()) << " loss_last="
                << (vr.epoch_loss.empty() ? 0.0 : vr.epoch_loss.back()) << "\n";
            ordered_json js;
            js["train_instances"] = qa_train.size();
            js["epochs"] = vc.epochs;
            js["lr"] = vc.lr;
            js["include_embeddings"] = vc.include_embeddings;
            js["loss_first"] = vr.epoch_loss.empty() ? 0.0 : vr.epoch_loss.front();
            js["loss_last"] = vr.epoch_loss.empty() ? 0.0 : vr.epoch_loss.back();
            js["train_file"] = "qa_train.jsonl";
            js["checkpoint"] = "ckpt_vqa";
            summary["vqa_finetune"] = js;
        }

        // --------------------------------------------------------- eval-qa
        stage = "eval-qa";
        const EvalReport ek = eval_qa(qa, kg, eval_modules, eval_embeddings, EvalMethod::Kml,
                                      nullptr, cfg.mean_aggregate);
        save_eval_report(path("eval_kml.json"), ek, cfg.seed);
        const EvalReport ei = eval_qa(qa, kg, tr.modules, tr.embeddings, EvalMethod::Igp);
        save_eval_report(path("eval_igp.json"), ei, cfg.seed);
        log << "[run-all] eval-qa: kml_acc=" << ek.accuracy << " igp_acc=" << ei.accuracy
            << " n=" << ek.n << "\n";
        {
            ordered_json js;
            js["n"] = ek.n;
            js["kml_accuracy"] = ek.accuracy;
            js["kml_mAcc"] = ek.mean_template_accuracy;
            js["igp_accuracy"] = ei.accuracy;
            js["igp_mAcc"] = ei.mean_template_accuracy;
            js["kml_finetuned"] = cfg.vqa_epochs > 0;
            js["kml_ge_igp"] = ek.accuracy >= ei.accuracy;
            js["files"] = ordered_json::array({"eval_kml.json", "eval_igp.json"});
            summary["eval_qa"] = js;
        }

        // ------------------------------------------------------ logic-eval
        stage = "logic-eval";
        const LogicReport lrep = run_logic_eval(kg, tr.modules, tr.embeddings,
                                                {"and", "not", "or"}, cfg.logic_k,
                                                cfg.logic_type_filtered, cfg.logic_max_pairs);
        save_logic_report(path("logic.json"), lrep, cfg.seed);
        {
            // mean over relations that produced a value, per operator
            std::map<std::string, std::pair<double, std::size_t>> acc;
            for (const auto& [rel, ops] : lrep.table)
                for (const auto& [op, cell] : ops)
                    if (cell.mean_precision) {
                        acc[op].first += *cell.mean_precision;
                        acc[op].second += 1;
                    }
            ordered_json js;
            js["k"] = lrep.k;
            ordered_json means;
            for (const auto& [op, pr] : acc)
                means[op] = pr.second ? pr.first / static_cast<double>(pr.second) : 0.0;
            js["mean_precision_by_op"] = means;
            js["file"] = "logic.json";
            summary["logic_eval"] = js;
            log << "[run-all] logic-eval: ops=" << acc.size() << " k=" << lrep.k << "\n";
        }

        // --------------------------------------------------- verify-bounds
        stage = "verify-bounds";
        TheoryConfig th = cfg.theory;
        th.seed = cfg.seed;
        const TheoryReport trep = check_bound(kg, tr.modules, tr.embeddings, th);
        save_theory_report(path("bounds.json"), trep, cfg.seed);
        log << "[run-all] verify-bounds: programs=" << trep.n_programs << " executions="
            << trep.n_executions << " violations=" << trep.violations << " recursion_violations="
            << trep.recursion_violations << " c_star=" << trep.c_star << "\n";
        if (trep.violations > 0)
            failures.push_back("verify-bounds: " + std::to_string(trep.violations) +
                               " composition-bound violation(s) after resampling");
        if (trep.recursion_violations > 0)
            failures.push_back("verify-bounds: " + std::to_string(trep.recursion_violations) +
                               " per-hop recursion violation(s)");
        {
            ordered_json js;
            js["programs"] = trep.n_programs;
            js["executions"] = trep.n_executions;
            js["violations"] = trep.violations;
            js["recursion_violations"] = trep.recursion_violations;
            js["resampled"] = trep.resampled;
            js["c_star"] = trep.c_star;
            js["file"] = "bounds.json";
            summary["verify_bounds"] = js;
        }

        // --------------------------------------------------------- summary
        stage = "summary";
        summary["invariant_failures"] = failures;
        const int code = failures.empty() ? kExitOk : kExitInvariantFailure;
        summary["exit_code"] = code;
        {
            std::ofstream out(path("summary.json"));
            if (!out) throw IoError("cannot write '" + path("summary.json") + "'");
            out << summary.dump(2) << '\n';
        }
        if (!failures.empty()) {
            for (const auto& f : failures) log << "[run-all] FAILED " << f << "\n";
        }
        log << "[run-all] done: exit=" << code << " reports in " << cfg.workdir << "\n";
        return code;
    } catch (const std::exception& e) {
        log << "[run-all] stage=" << stage << " error: " << e.what() << "\n";
        return kExitStageError;
    }
}

} // namespace kml
