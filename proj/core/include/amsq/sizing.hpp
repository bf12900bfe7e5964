#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "amsq/sim.hpp"

namespace amsq {

struct ScoreConfig {
    // Below the threshold the score falls linearly from 60 and reaches 0 at a
    // distance of span * |R* - R| beyond R. 1.5 keeps the slope of the 60..100 segment.
    double below_threshold_span = 1.5;
};

// Piecewise-linear normalization onto [0, 100]: 60 at the threshold, 100 at
// the target. Throws DegenerateSpec when threshold equals target.
double score(double value, const MetricDef& spec, const ScoreConfig& config = {});

// Shortfall against the threshold in units of |R* - R| (0 when met). Non-finite
// values count as kFailedViolation.
double violation(double value, const MetricDef& spec);

inline constexpr double kFailedViolation = 1e9;

struct NsgaConfig {
    int population = 20;
    double sbx_eta = 15.0;
    double sbx_probability = 0.9;
    double mutation_eta = 20.0;
    // <= 0 means 1 / dimension.
    double mutation_probability = 0.0;
    // Parameters whose upper / lower ratio reaches this are searched in log space.
    double log_scale_ratio = 100.0;
};

// Deterministic 64-bit engine; uniform() draws 53-bit doubles in [0, 1).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

private:
    std::mt19937_64 engine_;
};

struct Individual {
    std::vector<double> genes;      // normalized to [0, 1]
    std::vector<double> objectives; // minimized
    double violation = 0.0;         // total constraint violation, 0 when feasible
    int rank = 0;
    double crowding = 0.0;
};

// Feasible beats infeasible; two infeasible compare by total violation; two
// feasible by Pareto dominance on the objectives.
bool constrained_dominates(const Individual& a, const Individual& b);
bool pareto_dominates(const std::vector<double>& a, const std::vector<double>& b);

// Fronts of indices into `pop`, best first. Sets `rank` on each individual.
std::vector<std::vector<std::size_t>> fast_nondominated_sort(std::vector<Individual>& pop);

// Crowding distance for one front (boundary points get +infinity).
std::vector<double> crowding_distance(const std::vector<Individual>& pop, const std::vector<std::size_t>& front);

// Environmental selection: best `size` of population + offspring by rank, then crowding.
std::vector<Individual> nsga2_step(const std::vector<Individual>& population, const std::vector<Individual>& offspring,
                                   const NsgaConfig& config);

// Binary tournament, SBX crossover and polynomial mutation on a ranked population.
std::vector<std::vector<double>> make_offspring(const std::vector<Individual>& parents, std::size_t count, Rng& rng,
                                                const NsgaConfig& config);

// Gene <-> parameter mapping for a space.
ParamAssignment decode(const ParameterSpace& space, const std::vector<double>& genes, const NsgaConfig& config = {});
std::vector<double> encode(const ParameterSpace& space, const ParamAssignment& params, const NsgaConfig& config = {});

struct SizingProblem {
    Deck deck;
    SpecTable specs;
    int budget = 200;
    std::uint64_t seed = 0;
    // Evaluated first, in order (e.g. a known starting point).
    std::vector<ParamAssignment> initial_points;
    NsgaConfig nsga;
    ScoreConfig scoring;
    int workers = 1;
};

struct TrialRecord {
    ParamAssignment params;
    std::map<std::string, double> raw;
    std::vector<double> violations; // per spec metric, table order
    std::vector<double> scores;     // per spec metric, table order
    bool feasible = false;
    int trial_index = 0;            // 1-based
    EvalStatus status = EvalStatus::Ok;
    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

void to_json(nlohmann::json& j, const TrialRecord& r);
void from_json(const nlohmann::json& j, TrialRecord& r);

// Scores and violations for one evaluation.
TrialRecord make_record(const Evaluation& e, const SpecTable& specs, int trial_index, const ScoreConfig& config = {});

struct IdentificationResult {
    CircuitClass circuit_class = CircuitClass::SingleEndedOpAmp;
    PolarityAssignment polarity;
    bool accepted = false;
    std::optional<int> first_feasible_trial;
    int trials_used = 0;
    std::vector<TrialRecord> records;
};

// Feasibility search: stops at the first feasible trial. Throws BackendDown
// when every trial of a generation fails.
IdentificationResult identify(const SizingProblem& problem, Backend& backend, EvaluationCache* cache = nullptr);

// Runs exactly `budget` evaluations and returns the feasible records.
// `all` receives every trial when non-null.
std::vector<TrialRecord> optimize(const SizingProblem& problem, Backend& backend, EvaluationCache* cache = nullptr,
                                  std::vector<TrialRecord>* all = nullptr);

// Smallest first feasible trial wins; ties go to the lowest permutation
// index. Throws NoFeasiblePolarity when nothing was accepted.
PolarityAssignment choose_polarity(const std::vector<IdentificationResult>& results);

// Replay manifest: header line {kind, seed, budget, config_hash} then one record per line.
std::string config_hash(const SizingProblem& problem);
void write_manifest(const std::string& path, const std::string& kind, const SizingProblem& problem,
                    const std::vector<TrialRecord>& records);
struct Manifest {
    std::string kind;
    std::uint64_t seed = 0;
    int budget = 0;
    std::string config_hash;
    std::vector<TrialRecord> records;
};
Manifest read_manifest(const std::string& path);

} // namespace amsq
