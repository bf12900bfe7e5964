#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace amsq {

enum class CircuitClass { SingleEndedOpAmp, FullyDiffOpAmp, Comparator, LDO };

std::string_view to_string(CircuitClass c);
std::optional<CircuitClass> parse_circuit_class(std::string_view text);
const std::vector<CircuitClass>& all_circuit_classes();

enum class Direction { HigherBetter, LowerBetter, RangeTarget };
std::string_view to_string(Direction d);

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    [[nodiscard]] bool contains(double v) const { return v >= lower && v <= upper; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

struct MetricDef {
    std::string name;
    std::string unit;
    Direction direction = Direction::HigherBetter;
    // Scalar threshold R and target R* (HigherBetter / LowerBetter).
    double threshold = 0.0;
    double target = 0.0;
    // RangeTarget: target_range is nested inside threshold_range.
    Interval threshold_range;
    Interval target_range;
    // Participates in circuit identification.
    bool gating = false;
    // Simulation condition tag forwarded to the simulator (e.g. "98C").
    std::string condition;
    // Source text for supply-relative values such as "VDD/2"; empty otherwise.
    std::string threshold_text;
    std::string target_text;

    friend bool operator==(const MetricDef&, const MetricDef&) = default;
};

// Throws DegenerateSpec / InvalidTemplate when direction and values disagree.
void check_metric(const MetricDef& m);

struct SpecTable {
    // "OpAmp", "Comparator" or "LDO".
    std::string name;
    double vdd = 1.8;
    std::vector<MetricDef> metrics;

    [[nodiscard]] const MetricDef* find(std::string_view metric) const;
    [[nodiscard]] std::vector<const MetricDef*> gating() const;
    friend bool operator==(const SpecTable&, const SpecTable&) = default;
};

inline constexpr double kDefaultVdd = 1.8;

// Threshold / target table used for identification and labeling. Both OpAmp
// classes share the OpAmp table.
SpecTable default_spec_table(CircuitClass c);
std::string spec_table_name(CircuitClass c);

// Spec-table config file: {"vdd": 1.8, "tables": [{"name": "OpAmp", "metrics": [...]}]}.
// Supply-relative values ("VDD/2", "2VDD/3") are resolved against "vdd".
std::vector<SpecTable> load_spec_tables(const nlohmann::json& config);
nlohmann::json spec_tables_to_json(const std::vector<SpecTable>& tables);
std::string default_spec_tables_json();

} // namespace amsq
