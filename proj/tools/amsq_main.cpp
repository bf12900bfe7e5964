#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "amsq/error.hpp"
#include "amsq/pipeline.hpp"
#include "amsq/units.hpp"

namespace {

using namespace amsq;

struct Common {
    std::string config_path;
    std::string input_dir;
    std::string output_dir;
    std::string backend;
    std::string annotator;
    std::vector<std::uint64_t> seeds;
    int workers = 0;
    bool json = false;
};

PipelineConfig resolve_config(const Common& c) {
    PipelineConfig cfg = c.config_path.empty() ? PipelineConfig{} : load_config_file(c.config_path);
    apply_env_overrides(cfg, process_env);
    if (!c.input_dir.empty()) cfg.input_dir = c.input_dir;
    if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
    if (!c.backend.empty()) cfg.backend.kind = c.backend;
    if (!c.annotator.empty()) cfg.annotator.kind = c.annotator;
    if (!c.seeds.empty()) cfg.seeds = c.seeds;
    if (c.workers > 0) cfg.workers = c.workers;
    validate(cfg);
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
    out << text;
}

std::string stem_of(const std::string& path) {
    const auto slash = path.find_last_of('/');
    auto name = slash == std::string::npos ? path : path.substr(slash + 1);
    const auto dot = name.find_last_of('.');
    return dot == std::string::npos ? name : name.substr(0, dot);
}

CircuitClass parse_class_arg(const std::string& text) {
    auto c = parse_circuit_class(text);
    if (!c) throw Error(ErrorCode::ConfigError, "unknown circuit class '" + text + "'");
    return *c;
}

std::vector<const PreparedCandidate*> candidates_for(const PreparedNetlist& p, CircuitClass c, const std::string& template_id) {
    std::vector<const PreparedCandidate*> out;
    for (const auto& cand : p.candidates) {
        if (cand.circuit_class == c && (template_id.empty() || cand.template_id == template_id)) out.push_back(&cand);
    }
    if (out.empty()) {
        std::string reason = "no candidate deck";
        for (const auto& [key, note] : p.notes) {
            if (key.first == c) reason = note;
        }
        throw Error(ErrorCode::PreconditionViolated, std::string(to_string(c)) + ": " + reason);
    }
    return out;
}

nlohmann::json record_json(const TrialRecord& r) {
    nlohmann::json j = r;
    return j;
}

ScoreBound parse_bound(const std::string& text, bool is_min) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "bound must look like METRIC=VALUE: " + text);
    ScoreBound b;
    b.metric = text.substr(0, eq);
    const auto v = parse_si_value(text.substr(eq + 1));
    if (!v) throw Error(ErrorCode::ConfigError, "bad bound value in " + text);
    (is_min ? b.min : b.max) = *v;
    return b;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"amsq: annotate, size, label and index analog netlists"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("-c,--config", common.config_path, "Pipeline config file (JSON)");
    app.add_flag("--json", common.json, "Print JSON instead of text");

    std::function<int()> action;

    // run
    auto* run = app.add_subcommand("run", "Run the whole pipeline over a netlist directory");
    bool quiet = false;
    run->add_option("-i,--input", common.input_dir, "Netlist directory (*.sp, *.cir)");
    run->add_option("-o,--output", common.output_dir, "Output directory");
    run->add_option("--backend", common.backend, "surrogate or spice");
    run->add_option("--annotator", common.annotator, "heuristic or http");
    run->add_option("--seed", common.seeds, "Seeds (repeatable)");
    run->add_option("-j,--workers", common.workers, "Worker count");
    run->add_flag("-q,--quiet", quiet, "No progress log");
    run->callback([&] {
        action = [&] {
            const auto cfg = resolve_config(common);
            const auto report = run_pipeline(cfg, nullptr, nullptr, quiet ? nullptr : &std::cerr);
            std::cout << (common.json ? report_to_json(report).dump(2) + "\n" : report_to_text(report));
            return report.exit_code();
        };
    });

    // annotate
    auto* annotate = app.add_subcommand("annotate", "Resolve Unknown port types and list polarity permutations");
    std::string netlist_path, out_path, strategy = "sequential";
    annotate->add_option("netlist", netlist_path, "Netlist file")->required()->check(CLI::ExistingFile);
    annotate->add_option("--annotator", common.annotator, "heuristic or http");
    annotate->add_option("--strategy", strategy, "sequential or global")->check(CLI::IsMember({"sequential", "global"}));
    annotate->add_option("-o,--output", out_path, "Write the annotated netlist here");
    annotate->callback([&] {
        action = [&] {
            const auto cfg = resolve_config(common);
            auto client = make_annotator(cfg);
            const auto parsed = parse_netlist(slurp(netlist_path));
            const auto s = strategy == "global" ? AnnotationStrategy::GlobalSinglePass : AnnotationStrategy::SequentialPortWise;
            const auto annotated = parsed.has_unknown_ports() ? annotate_ports(parsed, *client, s, cfg.workers) : parsed;
            const auto polarities = enumerate_polarities(annotated);
            if (!out_path.empty()) write_or_print(out_path, emit_netlist(annotated));
            if (common.json) {
                nlohmann::json j;
                for (const auto& p : annotated.ports) j["ports"][p.name] = std::string(to_string(p.ptype));
                j["permutations"] = nlohmann::json::array();
                for (const auto& pa : polarities) {
                    nlohmann::json m;
                    for (const auto& [port, t] : pa.mapping) m[port] = std::string(to_string(t));
                    j["permutations"].push_back({{"index", pa.permutation_index}, {"mapping", m}});
                }
                std::cout << j.dump(2) << '\n';
            } else {
                for (const auto& p : annotated.ports) std::cout << p.name << ' ' << to_string(p.ptype) << '\n';
                std::cout << polarities.size() << " polarity permutation(s)\n";
            }
            return 0;
        };
    });

    // identify / optimize share their options
    std::string class_name, template_id, records_path;
    int budget = 0;
    std::uint64_t seed = 1;
    int permutation = -1;
    auto stage_options = [&](CLI::App* cmd) {
        cmd->add_option("netlist", netlist_path, "Netlist file")->required()->check(CLI::ExistingFile);
        cmd->add_option("--class", class_name, "Circuit class")->required();
        cmd->add_option("--template", template_id, "Template id (default: every template of the class)");
        cmd->add_option("--budget", budget, "Trial budget (default from config)");
        cmd->add_option("--seed", seed, "Seed");
        cmd->add_option("--backend", common.backend, "surrogate or spice");
        cmd->add_option("-o,--records", records_path, "Write trial records (JSON lines) here");
    };

    auto* ident = app.add_subcommand("identify", "Feasibility search for one netlist and class, every polarity");
    stage_options(ident);
    ident->callback([&] {
        action = [&] {
            const auto cfg = resolve_config(common);
            const auto library = load_library(cfg);
            auto backend = make_backend(cfg);
            auto client = make_annotator(cfg);
            const auto topology = stem_of(netlist_path);
            const auto prepared = prepare_netlist(slurp(netlist_path), topology, library, *client, *backend,
                                                  cfg.annotator.strategy, cfg.workers);
            const auto cls = parse_class_arg(class_name);
            EvaluationCache cache;
            std::vector<IdentificationResult> results;
            std::string lines;
            for (const auto* cand : candidates_for(prepared, cls, template_id)) {
                const auto p = make_problem(cfg, *cand, budget > 0 ? budget : cfg.budget_identify, derive_seed(seed, topology, cls));
                results.push_back(identify(p, *backend, &cache));
                for (const auto& r : results.back().records) {
                    auto j = record_json(r);
                    j["permutation"] = cand->polarity.permutation_index;
                    lines += j.dump() + "\n";
                }
            }
            if (!records_path.empty()) write_or_print(records_path, lines);
            std::optional<PolarityAssignment> chosen;
            try {
                chosen = choose_polarity(results);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NoFeasiblePolarity) throw;
            }
            nlohmann::json j;
            j["topology"] = topology;
            j["class"] = class_name;
            j["accepted"] = chosen.has_value();
            j["chosen_permutation"] = chosen ? nlohmann::json(chosen->permutation_index) : nlohmann::json();
            for (const auto& r : results) {
                j["permutations"].push_back({{"index", r.polarity.permutation_index},
                                             {"trials", r.trials_used},
                                             {"first_feasible_trial",
                                              r.first_feasible_trial ? nlohmann::json(*r.first_feasible_trial) : nlohmann::json()}});
            }
            if (common.json) std::cout << j.dump(2) << '\n';
            else {
                std::cout << topology << ' ' << class_name << (chosen ? " accepted" : " rejected") << '\n';
                for (const auto& r : results) {
                    std::cout << "  permutation " << r.polarity.permutation_index << ": " << r.trials_used << " trials";
                    if (r.first_feasible_trial) std::cout << ", feasible at " << *r.first_feasible_trial;
                    std::cout << '\n';
                }
            }
            return 0;
        };
    });

    auto* opt = app.add_subcommand("optimize", "Multi-objective sizing of one netlist, class and polarity");
    stage_options(opt);
    opt->add_option("--permutation", permutation, "Polarity permutation (default: identify first)");
    opt->callback([&] {
        action = [&] {
            const auto cfg = resolve_config(common);
            const auto library = load_library(cfg);
            auto backend = make_backend(cfg);
            auto client = make_annotator(cfg);
            const auto topology = stem_of(netlist_path);
            const auto prepared = prepare_netlist(slurp(netlist_path), topology, library, *client, *backend,
                                                  cfg.annotator.strategy, cfg.workers);
            const auto cls = parse_class_arg(class_name);
            const auto cands = candidates_for(prepared, cls, template_id);
            EvaluationCache cache;
            if (permutation < 0) {
                std::vector<IdentificationResult> results;
                for (const auto* cand : cands)
                    results.push_back(identify(make_problem(cfg, *cand, cfg.budget_identify, derive_seed(seed, topology, cls)),
                                               *backend, &cache));
                permutation = choose_polarity(results).permutation_index;
            }
            const PreparedCandidate* cand = nullptr;
            for (const auto* c : cands) {
                if (c->polarity.permutation_index == permutation) cand = c;
            }
            if (!cand) throw Error(ErrorCode::ConfigError, "no permutation " + std::to_string(permutation));
            std::vector<TrialRecord> all;
            const auto p = make_problem(cfg, *cand, budget > 0 ? budget : cfg.budget_optimize,
                                        derive_seed(seed, topology, cls) + 1);
            const auto feasible = optimize(p, *backend, &cache, &all);
            std::string lines;
            for (const auto& r : all) lines += record_json(r).dump() + "\n";
            if (!records_path.empty()) write_or_print(records_path, lines);
            if (common.json) {
                std::cout << nlohmann::json{{"topology", topology},
                                            {"class", class_name},
                                            {"permutation", permutation},
                                            {"trials", all.size()},
                                            {"feasible", feasible.size()}}
                                 .dump(2)
                          << '\n';
            } else {
                std::cout << topology << ' ' << class_name << " permutation " << permutation << ": " << feasible.size()
                          << " feasible of " << all.size() << " trials\n";
            }
            return 0;
        };
    });

    // label
    auto* label = app.add_subcommand("label", "Cluster a score matrix and tag each cluster");
    std::string scores_path, labels_out, summary_out;
    int k = 0;
    double q = 0.0;
    label->add_option("scores", scores_path, "Score matrix (JSON lines)")->required()->check(CLI::ExistingFile);
    label->add_option("-k,--clusters", k, "Cluster count (default from config)");
    label->add_option("-q,--fraction", q, "Good/bad fraction (default from config)");
    label->add_option("--seed", seed, "Seed");
    label->add_option("-o,--labels", labels_out, "Label file to write");
    label->add_option("--summary", summary_out, "Cluster summary JSON to write");
    label->callback([&] {
        action = [&] {
            const auto cfg = resolve_config(common);
            const auto s = read_score_matrix(scores_path);
            const auto r = label_scores(s, k > 0 ? k : cfg.clusters, q > 0 ? q : cfg.fraction, seed);
            for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
            if (!labels_out.empty()) write_labels(labels_out, s, r);
            const auto summary = cluster_summary(s, r);
            if (!summary_out.empty()) write_or_print(summary_out, summary.dump(2) + "\n");
            if (common.json) std::cout << summary.dump(2) << '\n';
            else {
                for (const auto& t : r.tags)
                    std::cout << "cluster " << t.cluster + 1 << " (" << r.model.sizes[t.cluster] << "): " << t.text << '\n';
            }
            return 0;
        };
    });

    // db
    auto* db = app.add_subcommand("db", "Query the labeled database");
    db->require_subcommand(1);
    std::string db_dir = "amsq-out/db";
    std::optional<std::string> q_class, q_topology;
    std::vector<std::string> q_tags, q_min, q_max;
    auto* query = db->add_subcommand("query", "List entries matching a filter");
    query->add_option("--db", db_dir, "Database directory");
    query->add_option("--class", q_class, "Circuit class");
    query->add_option("--topology", q_topology, "Topology id");
    query->add_option("--tag", q_tags, "Tag pattern such as \"good Gain; bad Area\" (repeatable)");
    query->add_option("--min", q_min, "METRIC=SCORE lower bound (repeatable)");
    query->add_option("--max", q_max, "METRIC=SCORE upper bound (repeatable)");
    query->callback([&] {
        action = [&] {
            const auto cfg = resolve_config(common);
            Database d(db_dir, load_tables(cfg));
            QueryFilter f;
            if (q_class) f.circuit_class = parse_class_arg(*q_class);
            f.topology = q_topology;
            f.tags = q_tags;
            for (const auto& b : q_min) f.bounds.push_back(parse_bound(b, true));
            for (const auto& b : q_max) f.bounds.push_back(parse_bound(b, false));
            for (const auto& e : d.query(f)) {
                if (common.json) std::cout << nlohmann::json(e).dump() << '\n';
                else
                    std::cout << to_string(e.circuit_class) << ' ' << e.topology << ' ' << e.trial << " cluster " << e.cluster
                              << ": " << e.tag << '\n';
            }
            return 0;
        };
    });
    auto* summarize = db->add_subcommand("summarize", "Per-class topology and instance counts");
    summarize->add_option("--db", db_dir, "Database directory");
    summarize->callback([&] {
        action = [&] {
            const auto cfg = resolve_config(common);
            Database d(db_dir, load_tables(cfg));
            const auto s = d.summarize();
            std::cout << (common.json ? summary_to_json(s).dump(2) + "\n" : summary_to_text(s));
            return 0;
        };
    });

    // report
    auto* report = app.add_subcommand("report", "Evaluation reports");
    report->require_subcommand(1);
    std::string predictions_path, truth_path;
    std::vector<std::string> classes;
    auto* confusion = report->add_subcommand("confusion", "Per-class confusion counts and F1");
    confusion->add_option("predictions", predictions_path, "Predicted labels (topology,Class;Class)")->required()->check(CLI::ExistingFile);
    confusion->add_option("truth", truth_path, "Ground-truth labels")->required()->check(CLI::ExistingFile);
    confusion->add_option("--class", classes, "Restrict to these classes (repeatable)");
    confusion->callback([&] {
        action = [&] {
            const auto r = score_confusion(read_class_labels(predictions_path), read_class_labels(truth_path), classes);
            std::cout << (common.json ? confusion_to_json(r).dump(2) + "\n" : confusion_to_text(r));
            return 0;
        };
    });

    // export
    auto* exp = app.add_subcommand("export", "Data exports");
    exp->require_subcommand(1);
    auto* radar = exp->add_subcommand("radar", "Radar-chart data with the 60 and 100 reference rings");
    radar->add_option("--db", db_dir, "Database directory");
    radar->add_option("--class", q_class, "Circuit class");
    radar->add_option("--topology", q_topology, "Topology id");
    radar->add_option("-o,--output", out_path, "Output file (default stdout)");
    radar->callback([&] {
        action = [&] {
            const auto cfg = resolve_config(common);
            Database d(db_dir, load_tables(cfg));
            QueryFilter f;
            if (q_class) f.circuit_class = parse_class_arg(*q_class);
            f.topology = q_topology;
            write_or_print(out_path, radar_export(d.query(f), d).dump(2) + "\n");
            return 0;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    try {
        return action ? action() : 0;
    } catch (const Error& e) {
        std::cerr << "amsq: " << e.what() << '\n';
        return e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::IoError ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "amsq: " << e.what() << '\n';
        return 1;
    }
}
