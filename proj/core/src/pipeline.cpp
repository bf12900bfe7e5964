#include "amsq/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "amsq/error.hpp"
#include "amsq/topomod.hpp"
#include "amsq/units.hpp"

namespace amsq {

namespace fs = std::filesystem;

void validate(const PipelineConfig& c) {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::ConfigError, why); };
    if (c.budget_identify < 1) fail("budget_identify must be at least 1");
    if (c.budget_optimize <= c.budget_identify) fail("budget_optimize must exceed budget_identify");
    if (c.clusters < 1) fail("clusters must be at least 1");
    if (!(c.fraction > 0.0 && c.fraction <= 0.5)) fail("fraction must be in (0, 0.5]");
    if (c.seeds.empty()) fail("at least one seed is required");
    if (c.workers < 1) fail("workers must be at least 1");
    if (c.backend.kind != "surrogate" && c.backend.kind != "spice") fail("backend.kind must be surrogate or spice");
    if (c.annotator.kind != "heuristic" && c.annotator.kind != "http") fail("annotator.kind must be heuristic or http");
    if (c.nsga.population < 4 || c.nsga.population % 2 != 0) fail("nsga.population must be even and at least 4");
    if (!(c.scoring.below_threshold_span > 0.0)) fail("scoring.below_threshold_span must be positive");
    if (c.output_dir.empty()) fail("output_dir must not be empty");
}

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw Error(ErrorCode::ConfigError, "unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

std::string strategy_name(AnnotationStrategy s) {
    return s == AnnotationStrategy::GlobalSinglePass ? "global" : "sequential";
}

} // namespace

PipelineConfig config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        check_keys(j,
                   {"input_dir", "template_dir", "spec_tables", "backend", "annotator", "budget_identify",
                    "budget_optimize", "clusters", "fraction", "seeds", "workers", "output_dir", "nsga", "scoring"},
                   "config");
        read(j, "input_dir", c.input_dir);
        read(j, "template_dir", c.template_dir);
        read(j, "spec_tables", c.spec_tables);
        read(j, "output_dir", c.output_dir);
        read(j, "budget_identify", c.budget_identify);
        read(j, "budget_optimize", c.budget_optimize);
        read(j, "clusters", c.clusters);
        read(j, "fraction", c.fraction);
        read(j, "seeds", c.seeds);
        read(j, "workers", c.workers);
        if (j.contains("backend")) {
            const auto& b = j.at("backend");
            check_keys(b, {"kind", "spice"}, "backend");
            read(b, "kind", c.backend.kind);
            if (b.contains("spice")) {
                const auto& s = b.at("spice");
                check_keys(s, {"command", "output_glob", "profile", "timeout_s", "work_dir"}, "backend.spice");
                read(s, "command", c.backend.spice.command);
                read(s, "output_glob", c.backend.spice.output_glob);
                read(s, "profile", c.backend.spice.profile);
                read(s, "timeout_s", c.backend.spice.timeout_s);
                read(s, "work_dir", c.backend.spice.work_dir);
            }
        }
        if (j.contains("annotator")) {
            const auto& a = j.at("annotator");
            check_keys(a, {"kind", "url", "timeout_s", "retries", "strategy"}, "annotator");
            read(a, "kind", c.annotator.kind);
            read(a, "url", c.annotator.url);
            read(a, "timeout_s", c.annotator.timeout_s);
            read(a, "retries", c.annotator.retries);
            if (a.contains("strategy")) {
                const auto s = a.at("strategy").get<std::string>();
                if (s == "sequential") c.annotator.strategy = AnnotationStrategy::SequentialPortWise;
                else if (s == "global") c.annotator.strategy = AnnotationStrategy::GlobalSinglePass;
                else throw Error(ErrorCode::ConfigError, "annotator.strategy must be sequential or global");
            }
        }
        if (j.contains("nsga")) {
            const auto& n = j.at("nsga");
            check_keys(n, {"population", "sbx_eta", "sbx_probability", "mutation_eta", "mutation_probability"}, "nsga");
            read(n, "population", c.nsga.population);
            read(n, "sbx_eta", c.nsga.sbx_eta);
            read(n, "sbx_probability", c.nsga.sbx_probability);
            read(n, "mutation_eta", c.nsga.mutation_eta);
            read(n, "mutation_probability", c.nsga.mutation_probability);
        }
        if (j.contains("scoring")) {
            const auto& s = j.at("scoring");
            check_keys(s, {"below_threshold_span"}, "scoring");
            read(s, "below_threshold_span", c.scoring.below_threshold_span);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, e.what());
    }
    validate(c);
    return c;
}

nlohmann::json config_to_json(const PipelineConfig& c) {
    return {
        {"input_dir", c.input_dir},
        {"template_dir", c.template_dir},
        {"spec_tables", c.spec_tables},
        {"output_dir", c.output_dir},
        {"backend",
         {{"kind", c.backend.kind},
          {"spice",
           {{"command", c.backend.spice.command},
            {"output_glob", c.backend.spice.output_glob},
            {"profile", c.backend.spice.profile},
            {"timeout_s", c.backend.spice.timeout_s},
            {"work_dir", c.backend.spice.work_dir}}}}},
        {"annotator",
         {{"kind", c.annotator.kind},
          {"url", c.annotator.url},
          {"timeout_s", c.annotator.timeout_s},
          {"retries", c.annotator.retries},
          {"strategy", strategy_name(c.annotator.strategy)}}},
        {"budget_identify", c.budget_identify},
        {"budget_optimize", c.budget_optimize},
        {"clusters", c.clusters},
        {"fraction", c.fraction},
        {"seeds", c.seeds},
        {"workers", c.workers},
        {"nsga",
         {{"population", c.nsga.population},
          {"sbx_eta", c.nsga.sbx_eta},
          {"sbx_probability", c.nsga.sbx_probability},
          {"mutation_eta", c.nsga.mutation_eta},
          {"mutation_probability", c.nsga.mutation_probability}}},
        {"scoring", {{"below_threshold_span", c.scoring.below_threshold_span}}},
    };
}

PipelineConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, path + ": " + e.what());
    }
    auto c = config_from_json(j);
    // Relative paths are taken relative to the config file.
    const auto base = fs::path(path).parent_path();
    auto rebase = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    rebase(c.input_dir);
    rebase(c.output_dir);
    rebase(c.template_dir);
    rebase(c.spec_tables);
    if (j.contains("backend") && j["backend"].contains("spice") && j["backend"]["spice"].contains("work_dir"))
        rebase(c.backend.spice.work_dir);
    return c;
}

std::optional<std::string> process_env(const std::string& key) {
    if (const char* v = std::getenv(key.c_str()); v && *v) return std::string(v);
    return std::nullopt;
}

void apply_env_overrides(PipelineConfig& c, const EnvLookup& env) {
    auto integer = [&](const std::string& key, int& into) {
        if (auto v = env(key)) {
            try {
                std::size_t used = 0;
                into = std::stoi(*v, &used);
                if (used != v->size()) throw std::invalid_argument(key);
            } catch (const std::logic_error&) {
                throw Error(ErrorCode::ConfigError, key + " must be an integer");
            }
        }
    };
    auto number = [&](const std::string& key, double& into) {
        if (auto v = env(key)) {
            auto parsed = parse_si_value(*v);
            if (!parsed) throw Error(ErrorCode::ConfigError, key + " must be a number");
            into = *parsed;
        }
    };
    if (auto v = env("AMSQ_INPUT_DIR")) c.input_dir = *v;
    if (auto v = env("AMSQ_OUTPUT_DIR")) c.output_dir = *v;
    integer("AMSQ_BUDGET_B", c.budget_identify);
    integer("AMSQ_BUDGET_BSTAR", c.budget_optimize);
    integer("AMSQ_K", c.clusters);
    number("AMSQ_Q", c.fraction);
    integer("AMSQ_WORKERS", c.workers);
    if (auto v = env("AMSQ_SEEDS")) {
        c.seeds.clear();
        std::stringstream ss(*v);
        for (std::string item; std::getline(ss, item, ',');) {
            try {
                std::size_t used = 0;
                c.seeds.push_back(std::stoull(item, &used));
                if (used != item.size()) throw std::invalid_argument(item);
            } catch (const std::logic_error&) {
                throw Error(ErrorCode::ConfigError, "AMSQ_SEEDS must be a comma-separated list of integers");
            }
        }
    }
    if (auto v = env("AMSQ_BACKEND")) c.backend.kind = *v;
    if (auto v = env("AMSQ_SIM_COMMAND")) c.backend.spice.command = *v;
    number("AMSQ_SIM_TIMEOUT", c.backend.spice.timeout_s);
    if (auto v = env("AMSQ_ANNOTATOR")) c.annotator.kind = *v;
    if (auto v = env("AMSQ_ANNOTATOR_URL")) c.annotator.url = *v;
    validate(c);
}

std::unique_ptr<Backend> make_backend(const PipelineConfig& c) {
    if (c.backend.kind == "spice") return std::make_unique<SpiceBackend>(c.backend.spice);
    return std::make_unique<SurrogateBackend>();
}

std::unique_ptr<AnnotatorClient> make_annotator(const PipelineConfig& c) {
    if (c.annotator.kind == "http") {
        HttpAnnotatorClient::Options o;
        o.url = c.annotator.url;
        o.timeout = std::chrono::milliseconds(static_cast<long long>(c.annotator.timeout_s * 1000.0));
        o.retries = c.annotator.retries;
        return std::make_unique<HttpAnnotatorClient>(o);
    }
    return std::make_unique<HeuristicAnnotator>();
}

std::vector<SpecTable> load_tables(const PipelineConfig& c) {
    if (c.spec_tables.empty()) {
        return load_spec_tables(nlohmann::json::parse(default_spec_tables_json()));
    }
    std::ifstream in(c.spec_tables, std::ios::binary);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read spec tables '" + c.spec_tables + "'");
    try {
        return load_spec_tables(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, c.spec_tables + ": " + e.what());
    }
}

std::vector<TestbenchTemplate> load_library(const PipelineConfig& c) {
    const auto tables = load_tables(c);
    if (c.template_dir.empty()) {
        std::vector<TestbenchTemplate> out;
        for (const auto& [cls, text] : builtin_template_sources()) out.push_back(parse_template(text, tables));
        return out;
    }
    return load_template_library(c.template_dir, tables);
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& topology, CircuitClass c) {
    return seed ^ stable_hash(topology + "/" + std::string(to_string(c)));
}

std::set<std::string> NetlistOutcome::accepted_classes() const {
    std::set<std::string> out;
    for (const auto& c : candidates) {
        if (c.accepted) out.insert(std::string(to_string(c.circuit_class)));
    }
    return out;
}

bool PipelineReport::partial_failure() const {
    return std::any_of(netlists.begin(), netlists.end(), [](const NetlistOutcome& n) { return n.failed; });
}

nlohmann::json report_to_json(const PipelineReport& r) {
    nlohmann::json j;
    j["netlists"] = nlohmann::json::array();
    for (const auto& n : r.netlists) {
        nlohmann::json jn{{"topology", n.topology}, {"file", n.file}, {"failed", n.failed}, {"error", n.error}};
        jn["candidates"] = nlohmann::json::array();
        for (const auto& c : n.candidates) {
            nlohmann::json jc{{"class", std::string(to_string(c.circuit_class))},
                              {"template", c.template_id},
                              {"permutations", c.permutations},
                              {"accepted", c.accepted},
                              {"identify_trials", c.identify_trials},
                              {"optimize_trials", c.optimize_trials},
                              {"feasible_records", c.feasible_records},
                              {"note", c.note}};
            jc["chosen_permutation"] = c.chosen_permutation ? nlohmann::json(*c.chosen_permutation) : nlohmann::json();
            jc["first_feasible_trial"] = c.first_feasible_trial ? nlohmann::json(*c.first_feasible_trial) : nlohmann::json();
            jn["candidates"].push_back(jc);
        }
        j["netlists"].push_back(jn);
    }
    j["summary"] = summary_to_json(r.summary);
    j["warnings"] = r.warnings;
    j["partial_failure"] = r.partial_failure();
    j["resumed_runs"] = r.resumed_runs;
    return j;
}

std::string report_to_text(const PipelineReport& r) {
    std::ostringstream os;
    for (const auto& n : r.netlists) {
        os << n.topology << ": ";
        if (n.failed) {
            os << "FAILED " << n.error << '\n';
            continue;
        }
        const auto accepted = n.accepted_classes();
        if (accepted.empty()) os << "rejected";
        else {
            bool first = true;
            for (const auto& c : accepted) {
                os << (first ? "" : ", ") << c;
                first = false;
            }
        }
        os << '\n';
        for (const auto& c : n.candidates) {
            os << "  " << to_string(c.circuit_class) << " [" << c.template_id << "] " << (c.accepted ? "accepted" : "rejected");
            if (c.first_feasible_trial) os << " at trial " << *c.first_feasible_trial;
            if (c.chosen_permutation) os << ", permutation " << *c.chosen_permutation << " of " << c.permutations;
            if (c.accepted) os << ", " << c.feasible_records << " feasible of " << c.optimize_trials;
            if (!c.note.empty()) os << " (" << c.note << ")";
            os << '\n';
        }
    }
    for (const auto& [cls, warns] : r.warnings) {
        for (const auto& w : warns) os << "warning: " << cls << ": " << w << '\n';
    }
    os << summary_to_text(r.summary);
    return os.str();
}

namespace {

IdentificationResult result_from_records(std::vector<TrialRecord> records, const Deck& deck, int budget) {
    IdentificationResult r;
    r.circuit_class = deck.circuit_class;
    r.polarity = deck.polarity;
    r.records = std::move(records);
    r.trials_used = static_cast<int>(r.records.size());
    for (const auto& rec : r.records) {
        if (rec.feasible) {
            r.first_feasible_trial = rec.trial_index;
            break;
        }
    }
    r.accepted = r.first_feasible_trial && *r.first_feasible_trial <= budget;
    return r;
}

std::optional<std::vector<TrialRecord>> cached_records(const fs::path& path, const SizingProblem& problem) {
    std::error_code ec;
    if (!fs::exists(path, ec)) return std::nullopt;
    try {
        auto m = read_manifest(path.string());
        if (m.config_hash == config_hash(problem) && m.seed == problem.seed && m.budget == problem.budget)
            return std::move(m.records);
    } catch (const Error&) {
    }
    return std::nullopt;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read '" + p.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    const auto tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot write '" + p.string() + "'");
        out << text;
    }
    fs::rename(tmp, p);
}

// A single trial cannot be standardized; it forms its own cluster.
LabelingResult label_single(const ScoreMatrix& s, int requested) {
    LabelingResult r;
    r.requested_k = requested;
    r.model.k = 1;
    r.model.labels = {0};
    r.model.s_centers = {s.rows.front()};
    r.model.z_centers = {std::vector<double>(s.metrics.size(), 0.0)};
    r.model.mean = s.rows.front();
    r.model.sigma.assign(s.metrics.size(), 0.0);
    r.model.zero_sigma.assign(s.metrics.size(), true);
    r.model.sizes = {1};
    if (requested > 1) r.warnings.push_back("K reduced from " + std::to_string(requested) + " to 1 (1 trial)");
    r.ratings = rate_metrics(r.model, 0.5);
    r.tags = make_tags(r.model, r.ratings, s.metrics);
    return r;
}

} // namespace

PreparedNetlist prepare_netlist(std::string_view text, const std::string& topology,
                                const std::vector<TestbenchTemplate>& library, AnnotatorClient& annotator,
                                const Backend& backend, AnnotationStrategy strategy, int workers) {
    PreparedNetlist out;
    out.parsed = parse_netlist(text);
    if (out.parsed.name.empty()) out.parsed.name = topology;
    out.annotated = out.parsed.has_unknown_ports() ? annotate_ports(out.parsed, annotator, strategy, workers) : out.parsed;
    for (const auto& pa : enumerate_polarities(out.annotated)) {
        const Netlist typed = apply_polarity(out.annotated, pa);
        for (const auto& t : select_templates(typed, library)) {
            const auto key = std::make_pair(t.circuit_class, t.id);
            PreparedCandidate cand;
            cand.circuit_class = t.circuit_class;
            cand.template_id = t.id;
            cand.specs = t.specs;
            cand.polarity = pa;
            cand.modified = {typed, {}};
            const Modification* mod = nullptr;
            try {
                if (t.circuit_class == CircuitClass::FullyDiffOpAmp) {
                    cand.modified = apply_cmfb(typed);
                    mod = &cand.modified.modification;
                } else if (t.circuit_class == CircuitClass::LDO) {
                    cand.modified = apply_ldo_sever(typed);
                    mod = &cand.modified.modification;
                }
                cand.deck = instantiate(cand.modified.netlist, t, pa, mod);
            } catch (const Error& e) {
                out.notes[key] = e.what();
                continue;
            }
            if (!backend.supports(cand.deck)) {
                out.notes[key] = "backend '" + backend.name() + "' cannot evaluate this deck";
                continue;
            }
            out.candidates.push_back(std::move(cand));
        }
    }
    return out;
}

SizingProblem make_problem(const PipelineConfig& config, const PreparedCandidate& candidate, int budget,
                           std::uint64_t seed) {
    SizingProblem p;
    p.deck = candidate.deck;
    p.specs = candidate.specs;
    p.budget = budget;
    p.seed = seed;
    p.nsga = config.nsga;
    p.scoring = config.scoring;
    p.workers = config.workers;
    return p;
}

PipelineReport run_pipeline(const PipelineConfig& config, AnnotatorClient* annotator, Backend* backend, std::ostream* log) {
    validate(config);
    const auto tables = load_tables(config);
    const auto library = load_library(config);
    std::unique_ptr<AnnotatorClient> own_annotator;
    std::unique_ptr<Backend> own_backend;
    if (!annotator) {
        own_annotator = make_annotator(config);
        annotator = own_annotator.get();
    }
    if (!backend) {
        own_backend = make_backend(config);
        backend = own_backend.get();
    }

    std::error_code ec;
    if (!fs::is_directory(config.input_dir, ec))
        throw Error(ErrorCode::IoError, "input directory '" + config.input_dir + "' is not readable");
    const fs::path out_dir = config.output_dir;
    const fs::path manifest_dir = out_dir / "manifests";
    const fs::path label_dir = out_dir / "labels";
    fs::create_directories(manifest_dir);
    fs::create_directories(label_dir);
    Database db((out_dir / "db").string(), tables);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(config.input_dir)) {
        const auto ext = entry.path().extension().string();
        if (entry.is_regular_file() && (ext == ".sp" || ext == ".cir")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    PipelineReport report;
    EvaluationCache cache;
    std::map<CircuitClass, std::vector<DatabaseEntry>> pending;
    const auto seed0 = config.seeds.front();

    for (const auto& file : files) {
        NetlistOutcome outcome;
        outcome.topology = file.stem().string();
        outcome.file = file.filename().string();
        if (log) *log << "[" << outcome.topology << "] parsing\n";
        try {
            const auto prepared = prepare_netlist(read_text(file), outcome.topology, library, *annotator, *backend,
                                                  config.annotator.strategy, config.workers);
            const Netlist& parsed = prepared.parsed;
            const Netlist& annotated = prepared.annotated;
            std::map<std::pair<CircuitClass, std::string>, std::vector<const PreparedCandidate*>> groups;
            for (const auto& cand : prepared.candidates) groups[{cand.circuit_class, cand.template_id}].push_back(&cand);
            for (const auto& [key, note] : prepared.notes) {
                if (groups.count(key)) continue;
                CandidateOutcome c;
                c.circuit_class = key.first;
                c.template_id = key.second;
                c.note = note;
                outcome.candidates.push_back(std::move(c));
            }

            for (auto& [key, cands] : groups) {
                const auto cls = key.first;
                CandidateOutcome co;
                co.circuit_class = cls;
                co.template_id = key.second;
                co.permutations = static_cast<int>(cands.size());
                const std::string stem = outcome.topology + "." + std::string(to_string(cls)) + "." + key.second;

                std::vector<IdentificationResult> results;
                for (const auto* cand : cands) {
                    const auto p = make_problem(config, *cand, config.budget_identify, derive_seed(seed0, outcome.topology, cls));
                    const auto path = manifest_dir / (stem + ".identify.p" + std::to_string(cand->polarity.permutation_index) + ".jsonl");
                    if (auto cached = cached_records(path, p)) {
                        results.push_back(result_from_records(std::move(*cached), p.deck, p.budget));
                        ++report.resumed_runs;
                    } else {
                        results.push_back(identify(p, *backend, &cache));
                        write_manifest(path.string(), "identify", p, results.back().records);
                    }
                    co.identify_trials += results.back().trials_used;
                }
                PolarityAssignment chosen;
                try {
                    chosen = choose_polarity(results);
                } catch (const Error& e) {
                    co.note = "no polarity reached the gating thresholds within the budget";
                    outcome.candidates.push_back(std::move(co));
                    continue;
                }
                co.accepted = true;
                co.chosen_permutation = chosen.permutation_index;
                for (const auto& r : results) {
                    if (r.polarity.permutation_index == chosen.permutation_index) co.first_feasible_trial = r.first_feasible_trial;
                }
                const auto& cand = **std::find_if(cands.begin(), cands.end(), [&](const PreparedCandidate* c) {
                    return c->polarity.permutation_index == chosen.permutation_index;
                });
                if (log) *log << "[" << outcome.topology << "] " << to_string(cls) << " accepted, optimizing\n";

                for (std::size_t s = 0; s < config.seeds.size(); ++s) {
                    const auto p = make_problem(config, cand, config.budget_optimize,
                                                derive_seed(config.seeds[s], outcome.topology, cls) + 1);
                    const auto name = stem + ".optimize.s" + std::to_string(s) + ".jsonl";
                    const auto path = manifest_dir / name;
                    std::vector<TrialRecord> all;
                    if (auto cached = cached_records(path, p)) {
                        all = std::move(*cached);
                        ++report.resumed_runs;
                    } else {
                        optimize(p, *backend, &cache, &all);
                        write_manifest(path.string(), "optimize", p, all);
                    }
                    co.optimize_trials += static_cast<int>(all.size());
                    for (const auto& rec : all) {
                        if (!rec.feasible) continue;
                        ++co.feasible_records;
                        DatabaseEntry e;
                        e.circuit_class = cls;
                        e.topology = outcome.topology;
                        e.trial = static_cast<int>(s) * config.budget_optimize + rec.trial_index;
                        e.source = parsed.metadata;
                        e.source.erase(std::string(kDanglingKey));
                        e.source["file"] = outcome.file;
                        e.netlist = emit_netlist(annotated);
                        e.modified_netlist = emit_netlist(cand.modified.netlist);
                        e.polarity = chosen;
                        e.template_id = key.second;
                        e.params = rec.params;
                        e.raw = rec.raw;
                        e.scores = rec.scores;
                        e.manifest = (fs::path("manifests") / name).string();
                        pending[cls].push_back(std::move(e));
                    }
                }
                outcome.candidates.push_back(std::move(co));
            }
        } catch (const std::exception& e) {
            outcome.failed = true;
            outcome.error = e.what();
            for (auto& [cls, entries] : pending) {
                entries.erase(std::remove_if(entries.begin(), entries.end(),
                                             [&](const DatabaseEntry& x) { return x.topology == outcome.topology; }),
                              entries.end());
            }
            if (log) *log << "[" << outcome.topology << "] failed: " << outcome.error << '\n';
        }
        std::sort(outcome.candidates.begin(), outcome.candidates.end(), [](const CandidateOutcome& a, const CandidateOutcome& b) {
            return std::tie(a.circuit_class, a.template_id) < std::tie(b.circuit_class, b.template_id);
        });
        report.netlists.push_back(std::move(outcome));
    }

    for (auto cls : all_circuit_classes()) {
        auto& entries = pending[cls];
        std::sort(entries.begin(), entries.end(), [](const DatabaseEntry& a, const DatabaseEntry& b) {
            return std::tie(a.topology, a.trial) < std::tie(b.topology, b.trial);
        });
        const std::string cname(to_string(cls));
        if (!entries.empty()) {
            ScoreMatrix s;
            s.metrics = db.metric_names(cls);
            for (const auto& e : entries) {
                s.rows.push_back(e.scores);
                s.ids.push_back({e.topology, e.trial});
            }
            const auto result = s.rows.size() < 2 ? label_single(s, config.clusters)
                                                  : label_scores(s, config.clusters, config.fraction, seed0);
            for (std::size_t i = 0; i < entries.size(); ++i) {
                const int label = result.model.labels[i];
                entries[i].cluster = label + 1;
                entries[i].tag = result.tags[static_cast<std::size_t>(label)].text;
            }
            if (!result.warnings.empty()) report.warnings[cname] = result.warnings;
            write_score_matrix((label_dir / (cname + ".scores.jsonl")).string(), s);
            write_labels((label_dir / (cname + ".labels.jsonl")).string(), s, result);
            write_text(label_dir / (cname + ".clusters.json"), cluster_summary(s, result).dump(2) + "\n");
        }
        db.replace_class(cls, entries);
    }

    report.summary = db.summarize();
    ClassLabels predictions;
    for (const auto& n : report.netlists) predictions[n.topology] = n.accepted_classes();
    write_text(out_dir / "predictions.csv", format_class_labels(predictions));
    write_text(out_dir / "report.json", report_to_json(report).dump(2) + "\n");
    write_text(out_dir / "report.txt", report_to_text(report));
    return report;
}

// ---------------------------------------------------------------------------

double ConfusionCounts::precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp); }
double ConfusionCounts::recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }
double ConfusionCounts::f1() const {
    const int denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * tp / denom;
}

ClassLabels read_class_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read label file '" + path + "'");
    ClassLabels out;
    std::string line;
    int number = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++number;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw Error(ErrorCode::SyntaxError, path + ":" + std::to_string(number) + ": expected 'topology,classes'");
        const auto id = trim(line.substr(0, comma));
        if (id.empty()) throw Error(ErrorCode::SyntaxError, path + ":" + std::to_string(number) + ": empty topology id");
        if (out.count(id)) throw Error(ErrorCode::DuplicateKey, path + ": topology '" + id + "' listed twice");
        auto& classes = out[id];
        std::stringstream ss(line.substr(comma + 1));
        for (std::string c; std::getline(ss, c, ';');) {
            c = trim(c);
            if (!c.empty()) classes.insert(c);
        }
    }
    return out;
}

std::string format_class_labels(const ClassLabels& labels) {
    std::string out;
    for (const auto& [id, classes] : labels) {
        out += id + ",";
        bool first = true;
        for (const auto& c : classes) {
            if (!first) out += ";";
            out += c;
            first = false;
        }
        out += "\n";
    }
    return out;
}

ConfusionReport score_confusion(const ClassLabels& predictions, const ClassLabels& truth, std::vector<std::string> classes) {
    for (const auto& [id, _] : predictions) {
        if (!truth.count(id)) throw Error(ErrorCode::MisalignedIds, "topology '" + id + "' has no ground-truth label");
    }
    for (const auto& [id, _] : truth) {
        if (!predictions.count(id)) throw Error(ErrorCode::MisalignedIds, "topology '" + id + "' has no prediction");
    }
    if (classes.empty()) {
        std::set<std::string> all;
        for (const auto* side : {&predictions, &truth}) {
            for (const auto& [id, cs] : *side) all.insert(cs.begin(), cs.end());
        }
        classes.assign(all.begin(), all.end());
    }
    ConfusionReport r;
    r.topologies = static_cast<int>(truth.size());
    for (const auto& c : classes) {
        ConfusionCounts cc;
        cc.label = c;
        for (const auto& [id, actual] : truth) {
            const bool is = actual.count(c) > 0;
            const bool said = predictions.at(id).count(c) > 0;
            if (is && said) ++cc.tp;
            else if (!is && said) ++cc.fp;
            else if (is && !said) ++cc.fn;
            else ++cc.tn;
        }
        r.classes.push_back(cc);
    }
    return r;
}

nlohmann::json confusion_to_json(const ConfusionReport& report) {
    nlohmann::json j;
    j["topologies"] = report.topologies;
    j["classes"] = nlohmann::json::array();
    for (const auto& c : report.classes) {
        j["classes"].push_back({{"class", c.label},
                                {"tp", c.tp},
                                {"fp", c.fp},
                                {"fn", c.fn},
                                {"tn", c.tn},
                                {"precision", c.precision()},
                                {"recall", c.recall()},
                                {"f1", c.f1()}});
    }
    return j;
}

std::string confusion_to_text(const ConfusionReport& report) {
    std::ostringstream os;
    os << "class                 TP    FP    FN    TN  precision  recall     F1\n";
    for (const auto& c : report.classes) {
        char line[160];
        std::snprintf(line, sizeof line, "%-18s %5d %5d %5d %5d  %9.3f  %6.3f  %5.3f\n", c.label.c_str(), c.tp, c.fp, c.fn,
                      c.tn, c.precision(), c.recall(), c.f1());
        os << line;
    }
    os << report.topologies << " topologies\n";
    return os.str();
}

} // namespace amsq
