#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "amsq/database.hpp"
#include "amsq/labeling.hpp"
#include "amsq/port_annotation.hpp"
#include "amsq/sizing.hpp"
#include "amsq/testbench.hpp"
#include "amsq/topomod.hpp"

namespace amsq {

struct BackendConfig {
    std::string kind = "surrogate"; // "surrogate" or "spice"
    SpiceOptions spice;
};

struct AnnotatorConfig {
    std::string kind = "heuristic"; // "heuristic" or "http"
    std::string url = "http://127.0.0.1:8808";
    double timeout_s = 10.0;
    int retries = 2;
    AnnotationStrategy strategy = AnnotationStrategy::SequentialPortWise;
};

struct PipelineConfig {
    std::string input_dir = "netlists";
    std::string template_dir;  // empty: built-in templates
    std::string spec_tables;   // empty: built-in tables
    BackendConfig backend;
    AnnotatorConfig annotator;
    int budget_identify = 200;
    int budget_optimize = 2000;
    int clusters = 30;
    double fraction = 0.25;
    std::vector<std::uint64_t> seeds{1};
    int workers = 1;
    std::string output_dir = "amsq-out";
    NsgaConfig nsga;
    ScoreConfig scoring;
};

// Throws ConfigError on invalid values (B* <= B, K < 1, q outside (0, 0.5], ...).
void validate(const PipelineConfig& config);
PipelineConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const PipelineConfig& config);
PipelineConfig load_config_file(const std::string& path);

// AMSQ_INPUT_DIR, AMSQ_OUTPUT_DIR, AMSQ_BUDGET_B, AMSQ_BUDGET_BSTAR, AMSQ_K,
// AMSQ_Q, AMSQ_WORKERS, AMSQ_SEEDS (comma list), AMSQ_BACKEND,
// AMSQ_SIM_COMMAND, AMSQ_SIM_TIMEOUT, AMSQ_ANNOTATOR, AMSQ_ANNOTATOR_URL.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
void apply_env_overrides(PipelineConfig& config, const EnvLookup& env);
std::optional<std::string> process_env(const std::string& key);

std::unique_ptr<Backend> make_backend(const PipelineConfig& config);
std::unique_ptr<AnnotatorClient> make_annotator(const PipelineConfig& config);
std::vector<TestbenchTemplate> load_library(const PipelineConfig& config);
std::vector<SpecTable> load_tables(const PipelineConfig& config);

// One (template, polarity) pair ready for simulation.
struct PreparedCandidate {
    CircuitClass circuit_class = CircuitClass::SingleEndedOpAmp;
    std::string template_id;
    SpecTable specs;
    PolarityAssignment polarity;
    ModifiedNetlist modified;
    Deck deck;
};

struct PreparedNetlist {
    Netlist parsed;
    Netlist annotated;
    std::vector<PreparedCandidate> candidates;
    // (class, template) pairs dropped before simulation, with the reason.
    std::map<std::pair<CircuitClass, std::string>, std::string> notes;
};

// Parse, annotate Unknown ports, enumerate polarities, select templates and
// apply the class's topology modification, keeping decks `backend` supports.
PreparedNetlist prepare_netlist(std::string_view text, const std::string& topology,
                                const std::vector<TestbenchTemplate>& library, AnnotatorClient& annotator,
                                const Backend& backend, AnnotationStrategy strategy = AnnotationStrategy::SequentialPortWise,
                                int workers = 1);

SizingProblem make_problem(const PipelineConfig& config, const PreparedCandidate& candidate, int budget,
                           std::uint64_t seed);

struct CandidateOutcome {
    CircuitClass circuit_class = CircuitClass::SingleEndedOpAmp;
    std::string template_id;
    int permutations = 0;
    bool accepted = false;
    std::optional<int> chosen_permutation;
    std::optional<int> first_feasible_trial;
    int identify_trials = 0;
    int optimize_trials = 0;
    int feasible_records = 0;
    std::string note;
};

struct NetlistOutcome {
    std::string topology;
    std::string file;
    bool failed = false;
    std::string error;
    std::vector<CandidateOutcome> candidates;
    [[nodiscard]] std::set<std::string> accepted_classes() const;
};

struct PipelineReport {
    std::vector<NetlistOutcome> netlists;
    std::vector<ClassSummary> summary;
    std::map<std::string, std::vector<std::string>> warnings; // class -> labeling warnings
    int resumed_runs = 0;
    [[nodiscard]] bool partial_failure() const;
    [[nodiscard]] int exit_code() const { return partial_failure() ? 1 : 0; }
};

nlohmann::json report_to_json(const PipelineReport& report);
std::string report_to_text(const PipelineReport& report);

// Parse -> annotate -> polarities -> per class: modify, instantiate, identify,
// choose polarity, optimize -> label per class -> database. Per-netlist
// failures are recorded and do not stop the run. `annotator` and `backend`
// override the configured ones when non-null.
PipelineReport run_pipeline(const PipelineConfig& config, AnnotatorClient* annotator = nullptr,
                            Backend* backend = nullptr, std::ostream* log = nullptr);

// Seed of one (topology, class) run, derived from a configured seed.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& topology, CircuitClass c);

// ---------------------------------------------------------------------------
// Identification scoring

struct ConfusionCounts {
    std::string label;
    int tp = 0, fp = 0, fn = 0, tn = 0;
    [[nodiscard]] double precision() const;
    [[nodiscard]] double recall() const;
    // 2TP / (2TP + FP + FN); 0 when the denominator is 0.
    [[nodiscard]] double f1() const;
};

struct ConfusionReport {
    std::vector<ConfusionCounts> classes;
    int topologies = 0;
};

using ClassLabels = std::map<std::string, std::set<std::string>>;

// Label file: one "topology_id,Class1;Class2" line per topology ("#" comments,
// empty class list allowed).
ClassLabels read_class_labels(const std::string& path);
std::string format_class_labels(const ClassLabels& labels);

// Throws MisalignedIds unless both sides cover the same topology ids.
ConfusionReport score_confusion(const ClassLabels& predictions, const ClassLabels& truth,
                                std::vector<std::string> classes = {});

nlohmann::json confusion_to_json(const ConfusionReport& report);
std::string confusion_to_text(const ConfusionReport& report);

} // namespace amsq
