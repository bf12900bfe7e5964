#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "amsq/testbench.hpp"

namespace amsq {

using ParamAssignment = std::map<std::string, double>;

struct ParamSpec {
    std::string name;
    double lower = 0.0;
    double upper = 0.0;
    friend bool operator==(const ParamSpec&, const ParamSpec&) = default;
};
using ParameterSpace = std::vector<ParamSpec>;

enum class EvalStatus { Ok, SimFailed, NonConvergent, Timeout };
std::string_view to_string(EvalStatus status);

struct Evaluation {
    ParamAssignment params;
    std::map<std::string, double> metrics; // metric name -> raw value
    EvalStatus status = EvalStatus::Ok;
    double wall_time = 0.0;
    std::string message;
};

class Backend {
public:
    virtual ~Backend() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    // Whether this backend can evaluate the deck at all.
    [[nodiscard]] virtual bool supports(const Deck& deck) const = 0;
    // The design space the backend evaluates over. Defaults to the deck's tunables.
    [[nodiscard]] virtual ParameterSpace space(const Deck& deck) const;
    // Must be safe to call concurrently. `params` is already bounds-checked.
    virtual Evaluation run(const Deck& deck, const ParamAssignment& params) = 0;
};

// Stable 64-bit FNV-1a hash used to address cache entries and work directories.
std::uint64_t stable_hash(std::string_view text);
std::string hex_hash(std::uint64_t h);
std::string params_key(const ParamAssignment& params);

class EvaluationCache {
public:
    std::optional<Evaluation> find(const std::string& key) const;
    void store(const std::string& key, const Evaluation& e);
    [[nodiscard]] std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::map<std::string, Evaluation> entries_;
};

// Throws PreconditionViolated when `params` misses a parameter of the
// backend space, names an unknown one, or lies outside its bounds.
void check_params(const ParameterSpace& space, const ParamAssignment& params);

// Bounds-checked, cache-aware dispatch to `backend`.
Evaluation evaluate(const Deck& deck, const ParamAssignment& params, Backend& backend, EvaluationCache* cache = nullptr);

// Evaluates a batch with up to `workers` concurrent calls; output order follows input.
std::vector<Evaluation> evaluate_batch(const Deck& deck, const std::vector<ParamAssignment>& batch, Backend& backend,
                                       int workers = 1, EvaluationCache* cache = nullptr);

// ---------------------------------------------------------------------------
// Analytical surrogates

struct SurrogateModel {
    std::string name;
    CircuitClass circuit_class = CircuitClass::SingleEndedOpAmp;
    bool feasible = true;
    ParameterSpace params;
    // Raw metrics keyed by spec-table metric name.
    std::function<std::map<std::string, double>(const ParamAssignment&)> formulas;
    std::string description;
};

// ota-feasible, ota-infeasible, fdota-feasible, comp-feasible, ldo-feasible.
const std::vector<SurrogateModel>& surrogate_bank();
const SurrogateModel* find_surrogate(std::string_view name);

// Metadata keys read from the DUT.
inline constexpr std::string_view kSurrogateKey = "surrogate";
inline constexpr std::string_view kTruthInputPlusKey = "truth.InputPlus";
inline constexpr std::string_view kTruthOutputPlusKey = "truth.OutputPlus";

// Evaluates the model named by the DUT's "surrogate" metadata. A polarity
// assignment that disagrees with the recorded truth ports inverts the loop:
// amplifiers lose 180 degrees of phase margin, comparators swing negative.
class SurrogateBackend final : public Backend {
public:
    [[nodiscard]] std::string name() const override { return "surrogate"; }
    [[nodiscard]] bool supports(const Deck& deck) const override;
    [[nodiscard]] ParameterSpace space(const Deck& deck) const override;
    Evaluation run(const Deck& deck, const ParamAssignment& params) override;
};

// ---------------------------------------------------------------------------
// External simulator adapter

struct SpiceOptions {
    // Shell command; "{deck}" is replaced by the absolute deck path.
    std::string command = "ngspice -b {deck}";
    // Files in the work directory scanned for measurement lines, besides sim.log.
    std::string output_glob = "*.meas";
    // "generic" or "ngspice".
    std::string profile = "generic";
    double timeout_s = 60.0;
    std::string work_dir = "amsq-work";
};

// Parses "name = value [unit]" measurement lines of the given profile into
// measurement id -> value. Sets `nonconvergent` when the log reports it.
std::map<std::string, double> parse_measurements(std::string_view text, std::string_view profile, bool& nonconvergent);

class SpiceBackend final : public Backend {
public:
    explicit SpiceBackend(SpiceOptions options);
    [[nodiscard]] std::string name() const override { return "spice"; }
    [[nodiscard]] bool supports(const Deck& deck) const override;
    Evaluation run(const Deck& deck, const ParamAssignment& params) override;

private:
    SpiceOptions options_;
};

// ---------------------------------------------------------------------------
// Linear DC operating point

// Small-signal-linear DC solution of a netlist: MOS devices are
// voltage-controlled current sources, capacitors are open, inductors short.
// `port_drives` fixes port voltages relative to the Vss port net. Tunable
// values sit at their geometric midpoint. Returns net -> voltage.
std::map<std::string, double> dc_operating_point(const Netlist& netlist, const std::map<std::string, double>& port_drives);

} // namespace amsq
