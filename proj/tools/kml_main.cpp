// command-line front end: every library feature behind one binary.
// Exit codes: 0 ok, 1 stage error, 2 verification-suite failure.

#include <array>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kml/checkpoint.hpp"
#include "kml/errors.hpp"
#include "kml/kg.hpp"
#include "kml/logic.hpp"
#include "kml/pipeline.hpp"
#include "kml/program.hpp"
#include "kml/qa.hpp"
#include "kml/synthetic.hpp"
#include "kml/theory.hpp"
#include "kml/trainer.hpp"
#include "kml/version.hpp"

namespace {

using namespace kml;
using nlohmann::ordered_json;

std::string with_commas(std::size_t n) {
    std::string s = std::to_string(n);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(i, ",");
    return s;
}

EntityType parse_etype(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    static const EntityType all[] = {EntityType::Domain, EntityType::Task,  EntityType::Step,
                                     EntityType::Action, EntityType::Object, EntityType::Tool,
                                     EntityType::Purpose, EntityType::Start, EntityType::End};
    for (EntityType t : all) {
        std::string name = to_string(t);
        for (auto& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (name == s) return t;
    }
    throw BadConfig("unknown entity type '" + s + "'");
}

// "<type>=<id>[:<weight>][,<id>[:<weight>]...]"; a single unweighted entry
// stays one-hot
Grounding parse_ground(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= s.size())
        throw BadConfig("--ground wants <type>=<id>[:<weight>][,...], got '" + s + "'");
    Grounding g;
    g.etype = parse_etype(s.substr(0, eq));
    std::vector<std::pair<std::string, double>> scores;
    std::string rest = s.substr(eq + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        auto comma = rest.find(',', pos);
        if (comma == std::string::npos) comma = rest.size();
        std::string entry = rest.substr(pos, comma - pos);
        if (entry.empty()) throw BadConfig("empty entry in --ground '" + s + "'");
        const auto colon = entry.find(':');
        if (colon == std::string::npos) {
            scores.emplace_back(entry, 1.0);
        } else {
            scores.emplace_back(entry.substr(0, colon), std::stod(entry.substr(colon + 1)));
        }
        pos = comma + 1;
        if (comma == rest.size()) break;
    }
    if (scores.empty()) throw BadConfig("--ground names no entity");
    g.entity_id = scores.front().first;
    if (scores.size() > 1 || scores.front().second != 1.0) g.scores = scores;
    return g;
}

KnowledgeGraph load_kg(const std::string& file, bool toy) {
    if (toy) return KnowledgeGraph::toy();
    if (file.empty()) throw BadConfig("need --kg <file> or --toy");
    return KnowledgeGraph::load_json(file);
}

void validate_program(const std::vector<std::string>& relations, const Schema& schema) {
    if (relations.empty()) throw BadConfig("--program names no relation");
    for (const auto& r : relations) schema.at(r);
    for (std::size_t i = 0; i + 1 < relations.size(); ++i)
        if (!schema.chainable(relations[i], relations[i + 1]))
            throw IncompatiblePath(relations[i] + " does not chain into " + relations[i + 1]);
}

void print_param_count(std::size_t relations, std::size_t d, std::size_t h) {
    const std::size_t per = module_param_count(1, d, h);
    const std::size_t total = module_param_count(relations, d, h);
    std::cout << "modules: " << relations << " (d=" << d << ", h=" << h << ")\n"
              << "parameters per module: " << with_commas(per) << "\n"
              << "total module parameters: " << with_commas(total) << "\n";
    if (relations == 16 && d == 512 && h == 128)
        std::cout << "note: the commonly cited total of " << with_commas(total + 1)
                  << " is a documented off-by-one; the exact count is " << with_commas(total)
                  << ".\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge-module engine: train relation modules on a knowledge graph, "
                 "compose them into executable programs, and verify their guarantees"};
    app.require_subcommand(0, 1);
    app.set_config("--config", "", "INI/TOML config file; command-line flags override it");

    int rc = 0;
    const auto guard = [&rc](const char* stage, const auto& body) {
        try {
            body();
        } catch (const std::exception& e) {
            std::cerr << "kml: stage=" << stage << ": " << e.what() << "\n";
            rc = 1;
        }
    };

    // ------------------------------------------------------------ top level
    bool want_param_count = false;
    std::size_t pc_relations = 16, pc_dim = 512, pc_hidden = 128;
    app.add_flag("--param-count", want_param_count, "print the module parameter count and exit");
    app.add_option("--relations", pc_relations, "module count for --param-count")
        ->capture_default_str();
    app.add_option("--dim", pc_dim, "embedding dim for --param-count")->capture_default_str();
    app.add_option("--hidden", pc_hidden, "hidden width for --param-count")
        ->capture_default_str();
    app.set_version_flag("--version", kVersion);

    // -------------------------------------------------------------- gen-kg
    auto* sc_genkg = app.add_subcommand("gen-kg", "generate a synthetic knowledge graph");
    {
        auto spec = std::make_shared<SyntheticKgSpec>();
        auto out = std::make_shared<std::string>("kg.json");
        auto toy = std::make_shared<bool>(false);
        sc_genkg->set_config("--config");
        sc_genkg->add_option("--out", *out, "output graph file")->capture_default_str();
        sc_genkg->add_flag("--toy", *toy, "emit the bundled tea/coffee fixture instead");
        sc_genkg->add_option("--seed", spec->seed, "generator seed")->envname("KML_SEED");
        sc_genkg->add_option("--domains", spec->domains)->capture_default_str();
        sc_genkg->add_option("--tasks", spec->tasks)->capture_default_str();
        sc_genkg->add_option("--steps-per-task", spec->steps_per_task)->capture_default_str();
        sc_genkg->add_option("--actions", spec->actions)->capture_default_str();
        sc_genkg->add_option("--objects", spec->objects)->capture_default_str();
        sc_genkg->add_option("--tools", spec->tools)->capture_default_str();
        sc_genkg->add_option("--purposes", spec->purposes)->capture_default_str();
        sc_genkg->add_option("--tools-per-step", spec->tools_per_step)->capture_default_str();
        sc_genkg->add_option("--purposes-per-carrier", spec->purposes_per_carrier)
            ->capture_default_str();
        sc_genkg->add_option("--branch-prob", spec->branch_prob)->capture_default_str();
        sc_genkg->add_option("--freq-max", spec->freq_max)->capture_default_str();
        sc_genkg->add_option("--similar-pairs", spec->similar_pairs)->capture_default_str();
        sc_genkg->callback([&rc, &guard, spec, out, toy]() {
            guard("gen-kg", [&]() {
                KnowledgeGraph kg;
                if (*toy) {
                    kg = KnowledgeGraph::toy();
                } else {
                    spec->validate();
                    kg = gen_kg(*spec);
                }
                kg.save_json(*out);
                std::cout << "gen-kg: wrote '" << *out << "' (" << kg.entity_count()
                          << " entities, " << kg.triplet_count() << " triplets)\n";
            });
        });
    }

    // --------------------------------------------------------------- train
    auto* sc_train = app.add_subcommand("train", "train one module per relation");
    {
        auto tc = std::make_shared<TrainConfig>();
        auto kg_file = std::make_shared<std::string>();
        auto toy = std::make_shared<bool>(false);
        auto out = std::make_shared<std::string>("ckpt");
        auto log_file = std::make_shared<std::string>();
        auto emb_mode = std::make_shared<std::string>("trainable");
        sc_train->set_config("--config");
        sc_train->add_option("--kg", *kg_file, "knowledge graph file");
        sc_train->add_flag("--toy", *toy, "use the bundled fixture");
        sc_train->add_option("--out", *out, "checkpoint directory")->capture_default_str();
        sc_train->add_option("--log", *log_file, "training log (JSON lines)");
        sc_train->add_option("--seed", tc->seed, "run seed")->envname("KML_SEED");
        sc_train->add_option("--dim", tc->dim)->capture_default_str();
        sc_train->add_option("--hidden", tc->hidden)->capture_default_str();
        sc_train->add_option("--batch-size", tc->batch_size)->capture_default_str();
        sc_train->add_option("--epochs", tc->epochs)->capture_default_str();
        sc_train->add_option("--lr", tc->lr)->capture_default_str();
        sc_train->add_option("--weight-decay", tc->weight_decay)->capture_default_str();
        sc_train->add_option("--temperature", tc->temperature)->capture_default_str();
        sc_train->add_option("--embedding-mode", *emb_mode, "frozen|trainable|file-loaded-then-trainable")
            ->capture_default_str();
        sc_train->add_option("--embedding-file", tc->embedding_file,
                             "unit rows for file-loaded mode");
        sc_train->callback([&rc, &guard, tc, kg_file, toy, out, log_file, emb_mode]() {
            guard("train", [&]() {
                tc->embedding_mode = embedding_mode_from_string(*emb_mode);
                tc->validate();
                const KnowledgeGraph kg = load_kg(*kg_file, *toy);
                const TrainResult r = train(kg, *tc);
                save_checkpoint(*out, r.modules, r.embeddings, tc->seed);
                if (!log_file->empty()) save_train_log(*log_file, r.log);
                std::cout << "train: " << r.modules.by_relation.size() << " modules -> '" << *out
                          << "'";
                if (!r.untrained.empty())
                    std::cout << " (" << r.untrained.size() << " untrained relations)";
                std::cout << "\n";
            });
        });
    }

    // -------------------------------------------------------------- gen-qa
    auto* sc_genqa = app.add_subcommand("gen-qa", "sample QA instances from templates");
    {
        auto kg_file = std::make_shared<std::string>();
        auto toy = std::make_shared<bool>(false);
        auto out = std::make_shared<std::string>("qa.jsonl");
        auto tids = std::make_shared<std::vector<std::string>>();
        auto qc = std::make_shared<QaGenConfig>();
        sc_genqa->set_config("--config");
        sc_genqa->add_option("--kg", *kg_file, "knowledge graph file");
        sc_genqa->add_flag("--toy", *toy, "use the bundled fixture");
        sc_genqa->add_option("--out", *out, "output file (JSON lines)")->capture_default_str();
        sc_genqa->add_option("--templates", *tids, "template ids, e.g. Q1,Q2 (default: all)")
            ->delimiter(',');
        sc_genqa->add_option("--per-template", qc->count, "instances per template")
            ->capture_default_str();
        sc_genqa->add_option("--seed", qc->seed, "sampling seed")->envname("KML_SEED");
        sc_genqa->add_option("--grounding-noise", qc->grounding_noise,
                             "score mass moved off the true entity")
            ->capture_default_str();
        sc_genqa->add_option("--grounding-topk", qc->grounding_topk,
                             "entities per grounding score vector")
            ->capture_default_str();
        sc_genqa->callback([&rc, &guard, kg_file, toy, out, tids, qc]() {
            guard("gen-qa", [&]() {
                const KnowledgeGraph kg = load_kg(*kg_file, *toy);
                const bool explicit_list = !tids->empty();
                std::vector<QaTemplate> wanted;
                if (explicit_list) {
                    for (const auto& tid : *tids) wanted.push_back(template_by_id(tid));
                } else {
                    wanted = all_templates();
                }
                std::vector<QAInstance> instances;
                for (const auto& t : wanted) {
                    try {
                        auto batch = instantiate(t, kg, *qc);
                        instances.insert(instances.end(), batch.begin(), batch.end());
                        std::cout << "gen-qa: " << t.tid << " x" << batch.size() << "\n";
                    } catch (const Error& e) {
                        if (explicit_list) throw;
                        std::cout << "gen-qa: " << t.tid << " skipped: " << e.what() << "\n";
                    }
                }
                save_qa_jsonl(*out, instances);
                std::cout << "gen-qa: wrote " << instances.size() << " instances -> '" << *out
                          << "'\n";
            });
        });
    }

    // ------------------------------------------------------------- eval-qa
    auto* sc_eval = app.add_subcommand("eval-qa", "answer a QA file and score it");
    {
        auto kg_file = std::make_shared<std::string>();
        auto toy = std::make_shared<bool>(false);
        auto ckpt = std::make_shared<std::string>("ckpt");
        auto qa_file = std::make_shared<std::string>("qa.jsonl");
        auto method = std::make_shared<std::string>("kml");
        auto report = std::make_shared<std::string>();
        auto sidecar = std::make_shared<std::string>();
        auto mean_agg = std::make_shared<bool>(false);
        auto seed = std::make_shared<std::uint64_t>(0);
        sc_eval->set_config("--config");
        sc_eval->add_option("--kg", *kg_file, "knowledge graph file");
        sc_eval->add_flag("--toy", *toy, "use the bundled fixture");
        sc_eval->add_option("--ckpt", *ckpt, "checkpoint directory")->capture_default_str();
        sc_eval->add_option("--qa", *qa_file, "QA file (JSON lines)")->capture_default_str();
        sc_eval->add_option("--method", *method, "kml|igp")
            ->check(CLI::IsMember({"kml", "igp"}))
            ->capture_default_str();
        sc_eval->add_option("--report", *report, "write the evaluation report here");
        sc_eval->add_option("--option-embeddings", *sidecar,
                            "embedding table for non-entity option labels");
        sc_eval->add_flag("--mean-aggregate", *mean_agg,
                          "aggregate programs by mean instead of max");
        sc_eval->add_option("--seed", *seed, "seed recorded in the report")->envname("KML_SEED");
        sc_eval->callback(
            [&rc, &guard, kg_file, toy, ckpt, qa_file, method, report, sidecar, mean_agg,
             seed]() {
                guard("eval-qa", [&]() {
                    const KnowledgeGraph kg = load_kg(*kg_file, *toy);
                    const Checkpoint ck = load_checkpoint(*ckpt);
                    const auto instances = load_qa_jsonl(*qa_file);
                    EmbeddingTable side;
                    const EmbeddingTable* side_ptr = nullptr;
                    if (!sidecar->empty()) {
                        side = EmbeddingTable::load(*sidecar);
                        side_ptr = &side;
                    }
                    const EvalReport r =
                        eval_qa(instances, kg, ck.modules, ck.embeddings,
                                eval_method_from_string(*method), side_ptr, *mean_agg);
                    if (!report->empty()) save_eval_report(*report, r, *seed);
                    std::cout << "eval-qa: method=" << r.method << " n=" << r.n
                              << " accuracy=" << r.accuracy << " mAcc="
                              << r.mean_template_accuracy << "\n";
                });
            });
    }

    // --------------------------------------------------------------- trace
    auto* sc_trace = app.add_subcommand("trace", "execute a program and print per-hop entities");
    {
        auto kg_file = std::make_shared<std::string>();
        auto toy = std::make_shared<bool>(false);
        auto ckpt = std::make_shared<std::string>("ckpt");
        auto program_csv = std::make_shared<std::vector<std::string>>();
        auto tid = std::make_shared<std::string>();
        auto ground_str = std::make_shared<std::string>();
        auto topk = std::make_shared<std::size_t>(5);
        auto report = std::make_shared<std::string>();
        sc_trace->set_config("--config");
        sc_trace->add_option("--kg", *kg_file, "knowledge graph file");
        sc_trace->add_flag("--toy", *toy, "use the bundled fixture");
        sc_trace->add_option("--ckpt", *ckpt, "checkpoint directory")->capture_default_str();
        sc_trace->add_option("--program", *program_csv, "relation names, comma separated")
            ->delimiter(',');
        sc_trace->add_option("--template", *tid, "run a template's canonical program instead");
        sc_trace->add_option("--ground", *ground_str,
                             "<type>=<id>[:<weight>][,...], e.g. step=boil_water:1.0")
            ->required();
        sc_trace->add_option("--topk", *topk, "entities listed per hop")->capture_default_str();
        sc_trace->add_option("--report", *report, "also write the trace as JSON");
        sc_trace->callback(
            [&rc, &guard, kg_file, toy, ckpt, program_csv, tid, ground_str, topk, report]() {
                guard("trace", [&]() {
                    const KnowledgeGraph kg = load_kg(*kg_file, *toy);
                    const Checkpoint ck = load_checkpoint(*ckpt);
                    const Grounding g = parse_ground(*ground_str);
                    Program prog;
                    if (!tid->empty() && !program_csv->empty())
                        throw BadConfig("--template and --program are mutually exclusive");
                    if (!tid->empty()) {
                        prog = compile_programs(*tid, g.etype, kg.schema()).front();
                    } else {
                        prog.relations = *program_csv;
                        prog.source = ProgramSource::Imported;
                        validate_program(prog.relations, kg.schema());
                    }
                    const auto heads = kg.schema().at(prog.relations.front()).head_types();
                    if (!heads.count(g.etype))
                        throw IncompatiblePath(std::string("grounding type ") +
                                               to_string(g.etype) + " cannot start relation " +
                                               prog.relations.front());
                    const Vec z0 = ground(g, ck.embeddings);
                    const ExecutionTrace t =
                        execute(prog, z0, ck.modules, ck.embeddings, kg, *topk);
                    for (std::size_t i = 0; i < t.hops.size(); ++i) {
                        std::cout << "hop " << (i + 1) << "  " << t.hops[i].relation << "\n";
                        for (const auto& [id, p] : t.hops[i].topk)
                            std::cout << "  " << std::left << std::setw(28) << id << std::fixed
                                      << std::setprecision(4) << p << "\n";
                        std::cout.unsetf(std::ios::fixed);
                        std::cout << std::setprecision(6);
                    }
                    if (!report->empty()) {
                        ordered_json j;
                        j["version"] = kVersion;
                        j["program"] = prog.relations;
                        j["source"] = to_string(prog.source);
                        ordered_json jg;
                        jg["type"] = to_string(g.etype);
                        jg["entity"] = g.entity_id;
                        if (!g.scores.empty()) {
                            ordered_json js = ordered_json::array();
                            for (const auto& [id, w] : g.scores)
                                js.push_back({{"id", id}, {"score", w}});
                            jg["scores"] = js;
                        }
                        j["ground"] = jg;
                        j["hops"] = ordered_json::array();
                        for (const auto& hop : t.hops) {
                            ordered_json jh;
                            jh["relation"] = hop.relation;
                            jh["topk"] = ordered_json::array();
                            for (const auto& [id, p] : hop.topk)
                                jh["topk"].push_back({{"id", id}, {"score", p}});
                            j["hops"].push_back(jh);
                        }
                        std::ofstream out(*report);
                        if (!out) throw IoError("cannot write '" + *report + "'");
                        out << j.dump(2) << '\n';
                        std::cout << "trace: wrote '" << *report << "'\n";
                    }
                });
            });
    }

    // ---------------------------------------------------------- logic-eval
    auto* sc_logic = app.add_subcommand("logic-eval", "precision@k of NOT/AND/OR per relation");
    {
        auto kg_file = std::make_shared<std::string>();
        auto toy = std::make_shared<bool>(false);
        auto ckpt = std::make_shared<std::string>("ckpt");
        auto ops_csv = std::make_shared<std::vector<std::string>>(
            std::vector<std::string>{"not", "and", "or"});
        auto k = std::make_shared<std::size_t>(10);
        auto report = std::make_shared<std::string>("logic.json");
        auto all_entities = std::make_shared<bool>(false);
        auto max_pairs = std::make_shared<std::size_t>(2000);
        auto seed = std::make_shared<std::uint64_t>(0);
        sc_logic->set_config("--config");
        sc_logic->add_option("--kg", *kg_file, "knowledge graph file");
        sc_logic->add_flag("--toy", *toy, "use the bundled fixture");
        sc_logic->add_option("--ckpt", *ckpt, "checkpoint directory")->capture_default_str();
        sc_logic->add_option("--ops", *ops_csv, "operators to run")->delimiter(',');
        sc_logic->add_option("--k", *k, "precision cut-off")->capture_default_str();
        sc_logic->add_option("--report", *report, "output file")->capture_default_str();
        sc_logic->add_flag("--all-entities", *all_entities,
                           "score every entity instead of the tail type only");
        sc_logic->add_option("--max-pairs", *max_pairs, "AND/OR head pairs per relation cap")
            ->capture_default_str();
        sc_logic->add_option("--seed", *seed, "seed recorded in the report")->envname("KML_SEED");
        sc_logic->callback(
            [&rc, &guard, kg_file, toy, ckpt, ops_csv, k, report, all_entities, max_pairs,
             seed]() {
                guard("logic-eval", [&]() {
                    const KnowledgeGraph kg = load_kg(*kg_file, *toy);
                    const Checkpoint ck = load_checkpoint(*ckpt);
                    const std::set<std::string> ops(ops_csv->begin(), ops_csv->end());
                    for (const auto& op : ops)
                        if (op != "not" && op != "and" && op != "or")
                            throw BadConfig("unknown operator '" + op + "'");
                    const LogicReport r = run_logic_eval(kg, ck.modules, ck.embeddings, ops, *k,
                                                         !*all_entities, *max_pairs);
                    save_logic_report(*report, r, *seed);
                    for (const auto& [rel, cells] : r.table) {
                        std::cout << std::left << std::setw(28) << rel;
                        for (const auto& [op, cell] : cells) {
                            std::cout << "  " << op << "=";
                            if (cell.mean_precision)
                                std::cout << std::fixed << std::setprecision(1)
                                          << *cell.mean_precision;
                            else
                                std::cout << "--";
                            std::cout.unsetf(std::ios::fixed);
                            std::cout << std::setprecision(6);
                        }
                        std::cout << "\n";
                    }
                    std::cout << "logic-eval: wrote '" << *report << "'\n";
                });
            });
    }

    // --------------------------------------------------- verify-separation
    auto* sc_sep = app.add_subcommand("verify-separation",
                                      "check the trained-loss separation guarantee");
    {
        auto kg_file = std::make_shared<std::string>();
        auto toy = std::make_shared<bool>(false);
        auto ckpt = std::make_shared<std::string>("ckpt");
        auto out = std::make_shared<std::string>("separation.json");
        auto tau = std::make_shared<double>(0.07);
        auto seed = std::make_shared<std::uint64_t>(0);
        sc_sep->set_config("--config");
        sc_sep->add_option("--kg", *kg_file, "knowledge graph file");
        sc_sep->add_flag("--toy", *toy, "use the bundled fixture");
        sc_sep->add_option("--ckpt", *ckpt, "checkpoint directory")->capture_default_str();
        sc_sep->add_option("--out", *out, "report file")->capture_default_str();
        sc_sep->add_option("--temperature", *tau, "training temperature to report losses at")
            ->capture_default_str();
        sc_sep->add_option("--seed", *seed, "seed recorded in the report")->envname("KML_SEED");
        sc_sep->callback([&rc, &guard, kg_file, toy, ckpt, out, tau, seed]() {
            guard("verify-separation", [&]() {
                const KnowledgeGraph kg = load_kg(*kg_file, *toy);
                const Checkpoint ck = load_checkpoint(*ckpt);
                const auto records = separation_report(ck.modules, ck.embeddings, kg, *tau);
                const auto check = check_separation(records);
                save_separation_report(*out, records, check, *tau, *seed);
                std::cout << "verify-separation: records=" << check.records
                          << " premise_holds=" << check.premise_holds
                          << " margin_positive=" << check.margin_positive
                          << " theorem1_violations=" << check.theorem1_violations
                          << " mass_violations=" << check.mass_violations
                          << " extreme_violations=" << check.extreme_violations << "\n"
                          << "verify-separation: wrote '" << *out << "'\n";
                if (check.theorem1_violations || check.mass_violations ||
                    check.extreme_violations)
                    rc = 2;
            });
        });
    }

    // ------------------------------------------------------- verify-bounds
    auto* sc_bounds = app.add_subcommand("verify-bounds",
                                         "check the composition error bound on every program");
    {
        auto kg_file = std::make_shared<std::string>();
        auto toy = std::make_shared<bool>(false);
        auto ckpt = std::make_shared<std::string>("ckpt");
        auto report = std::make_shared<std::string>("bounds.json");
        auto tc = std::make_shared<TheoryConfig>();
        sc_bounds->set_config("--config");
        sc_bounds->add_option("--kg", *kg_file, "knowledge graph file");
        sc_bounds->add_flag("--toy", *toy, "use the bundled fixture");
        sc_bounds->add_option("--ckpt", *ckpt, "checkpoint directory")->capture_default_str();
        sc_bounds->add_option("--report", *report, "report file")->capture_default_str();
        sc_bounds->add_option("--max-hops", tc->max_hops)->capture_default_str();
        sc_bounds->add_option("--n-random", tc->n_random, "random unit samples per relation")
            ->capture_default_str();
        sc_bounds->add_option("--factor", tc->factor, "one-step constant")->capture_default_str();
        sc_bounds->add_option("--resample-multiplier", tc->resample_multiplier)
            ->capture_default_str();
        sc_bounds->add_option("--seed", tc->seed, "sampling seed")->envname("KML_SEED");
        sc_bounds->callback([&rc, &guard, kg_file, toy, ckpt, report, tc]() {
            guard("verify-bounds", [&]() {
                const KnowledgeGraph kg = load_kg(*kg_file, *toy);
                const Checkpoint ck = load_checkpoint(*ckpt);
                const TheoryReport r = check_bound(kg, ck.modules, ck.embeddings, *tc);
                save_theory_report(*report, r, tc->seed);
                std::cout << "verify-bounds: programs=" << r.n_programs
                          << " executions=" << r.n_executions << " violations=" << r.violations
                          << " recursion_violations=" << r.recursion_violations
                          << " resampled=" << (r.resampled ? "yes" : "no")
                          << " c_star=" << r.c_star << "\n"
                          << "verify-bounds: wrote '" << *report << "'\n";
                if (r.violations || r.recursion_violations) rc = 2;
            });
        });
    }

    // -------------------------------------------------------------- run-all
    auto* sc_all = app.add_subcommand("run-all", "full pipeline; every report under --workdir");
    {
        auto cfg = std::make_shared<PipelineConfig>();
        auto toy = std::make_shared<bool>(false);
        auto emb_mode = std::make_shared<std::string>("trainable");
        sc_all->set_config("--config");
        sc_all->add_option("--workdir", cfg->workdir, "artifact directory")
            ->capture_default_str();
        sc_all->add_option("--seed", cfg->seed, "seed for every stage")->envname("KML_SEED");
        sc_all->add_option("--kg", cfg->kg_file, "use this graph instead of generating one");
        sc_all->add_flag("--toy", *toy, "use the bundled fixture");
        sc_all->add_option("--domains", cfg->synth.domains)->capture_default_str();
        sc_all->add_option("--tasks", cfg->synth.tasks)->capture_default_str();
        sc_all->add_option("--steps-per-task", cfg->synth.steps_per_task)->capture_default_str();
        sc_all->add_option("--actions", cfg->synth.actions)->capture_default_str();
        sc_all->add_option("--objects", cfg->synth.objects)->capture_default_str();
        sc_all->add_option("--tools", cfg->synth.tools)->capture_default_str();
        sc_all->add_option("--purposes", cfg->synth.purposes)->capture_default_str();
        sc_all->add_option("--tools-per-step", cfg->synth.tools_per_step)->capture_default_str();
        sc_all->add_option("--purposes-per-carrier", cfg->synth.purposes_per_carrier)
            ->capture_default_str();
        sc_all->add_option("--branch-prob", cfg->synth.branch_prob)->capture_default_str();
        sc_all->add_option("--freq-max", cfg->synth.freq_max)->capture_default_str();
        sc_all->add_option("--similar-pairs", cfg->synth.similar_pairs)->capture_default_str();
        sc_all->add_option("--dim", cfg->train.dim)->capture_default_str();
        sc_all->add_option("--hidden", cfg->train.hidden)->capture_default_str();
        sc_all->add_option("--batch-size", cfg->train.batch_size)->capture_default_str();
        sc_all->add_option("--epochs", cfg->train.epochs)->capture_default_str();
        sc_all->add_option("--lr", cfg->train.lr)->capture_default_str();
        sc_all->add_option("--weight-decay", cfg->train.weight_decay)->capture_default_str();
        sc_all->add_option("--temperature", cfg->train.temperature)->capture_default_str();
        sc_all->add_option("--embedding-mode", *emb_mode, "frozen|trainable|file-loaded-then-trainable")
            ->capture_default_str();
        sc_all->add_option("--embedding-file", cfg->train.embedding_file);
        sc_all->add_option("--per-template", cfg->qa_per_template)->capture_default_str();
        sc_all->add_option("--grounding-noise", cfg->grounding_noise)->capture_default_str();
        sc_all->add_option("--grounding-topk", cfg->grounding_topk)->capture_default_str();
        sc_all->add_option("--vqa-epochs", cfg->vqa_epochs,
                           "fine-tune modules on a held-out QA set before eval (0 = off)")
            ->capture_default_str();
        sc_all->add_option("--vqa-lr", cfg->vqa_lr)->capture_default_str();
        sc_all->add_option("--vqa-weight-decay", cfg->vqa_weight_decay)->capture_default_str();
        sc_all->add_flag("--vqa-include-embeddings", cfg->vqa_include_embeddings,
                         "also update entity embeddings during fine-tuning");
        sc_all->add_option("--vqa-per-template", cfg->vqa_per_template,
                           "fine-tuning instances per template (0: same as --per-template)")
            ->capture_default_str();
        sc_all->add_flag("--mean-aggregate", cfg->mean_aggregate,
                         "aggregate programs by mean instead of max");
        sc_all->add_option("--max-hops", cfg->theory.max_hops)->capture_default_str();
        sc_all->add_option("--n-random", cfg->theory.n_random)->capture_default_str();
        sc_all->add_option("--factor", cfg->theory.factor)->capture_default_str();
        sc_all->add_option("--resample-multiplier", cfg->theory.resample_multiplier)
            ->capture_default_str();
        sc_all->add_option("--logic-k", cfg->logic_k)->capture_default_str();
        sc_all->add_flag("--all-entities",
                         [cfg](std::int64_t) { cfg->logic_type_filtered = false; },
                         "logic scores over every entity instead of the tail type");
        sc_all->add_option("--max-pairs", cfg->logic_max_pairs)->capture_default_str();
        sc_all->callback([&rc, &guard, cfg, toy, emb_mode]() {
            guard("run-all", [&]() {
                cfg->train.embedding_mode = embedding_mode_from_string(*emb_mode);
                if (*toy)
                    cfg->kg_source = KgSource::Toy;
                else if (!cfg->kg_file.empty())
                    cfg->kg_source = KgSource::File;
                else
                    cfg->kg_source = KgSource::Synthetic;
                rc = run_pipeline(*cfg, std::cout);
            });
        });
    }

    CLI11_PARSE(app, argc, argv);

    if (want_param_count) {
        print_param_count(pc_relations, pc_dim, pc_hidden);
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cout << app.help() << "\n";
        return 0;
    }
    return rc;
}
