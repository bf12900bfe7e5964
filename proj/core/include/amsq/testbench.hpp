#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "amsq/netlist.hpp"
#include "amsq/port_annotation.hpp"
#include "amsq/spec_table.hpp"
#include "amsq/topomod.hpp"

namespace amsq {

enum class HarnessKind { None, Cmfb, Iprobe };

struct BiasSlot {
    std::string name;
    PortType ptype = PortType::Bias;
    Tunable range;
};

// One measurement directive; `id` is the name the simulator reports it under.
struct MeasureDirective {
    std::string metric;
    std::string id;
    std::string analysis;
    std::string expression;
    double scale = 1.0;
    std::string condition;
    friend bool operator==(const MeasureDirective&, const MeasureDirective&) = default;
};

// Declarative testbench for one circuit class. Card and directive lines may
// use {PORT:<ptype>}, {BIAS:<slot>}, {MEAS:<metric>}, {CONST:<name>} and
// {HARNESS:probe|reference} placeholders; see docs/templates.md.
struct TestbenchTemplate {
    std::string id;
    CircuitClass circuit_class = CircuitClass::SingleEndedOpAmp;
    std::vector<PortType> required_ports; // multiset
    SpecTable specs;
    std::vector<MetricDef> metrics;
    std::vector<BiasSlot> bias_slots;
    HarnessKind harness = HarnessKind::None;
    std::map<std::string, std::string> constants;
    std::vector<std::string> stimulus;      // card lines, placeholders intact
    std::vector<std::string> analyses;      // ".op", ".ac dec 20 1 10g", ...
    std::vector<MeasureDirective> measurements; // expressions with placeholders intact
};

// Parses a template file. Throws InvalidTemplate on grammar errors, unknown
// metrics, or a metric without a measurement directive.
TestbenchTemplate parse_template(std::string_view text, const std::vector<SpecTable>& tables);

// Built-in template sources (one per class) and the parsed library.
const std::map<CircuitClass, std::string>& builtin_template_sources();
std::vector<TestbenchTemplate> default_template_library();
std::vector<TestbenchTemplate> load_template_library(const std::string& directory,
                                                     const std::vector<SpecTable>& tables);

// Templates whose required-port multiset is covered by the netlist's ports.
std::vector<TestbenchTemplate> select_templates(const Netlist& netlist,
                                                const std::vector<TestbenchTemplate>& library);

struct Deck {
    Netlist dut;
    std::string template_id;
    CircuitClass circuit_class = CircuitClass::SingleEndedOpAmp;
    // DUT port -> testbench cards wired to it.
    std::map<std::string, std::vector<std::string>> bindings;
    // Port type -> tunable range of the bias sources materialized for it.
    std::map<std::string, Tunable> bias_values;
    std::vector<Device> testbench;
    std::vector<std::string> analyses;
    std::vector<MeasureDirective> directives;
    std::vector<MetricDef> metrics;
    PolarityAssignment polarity;
    Modification modification;

    // "<device>.<PARAM>" -> range, over DUT and testbench devices.
    [[nodiscard]] std::map<std::string, Tunable> tunables() const;
};

// Default geometric ranges for MOS devices without declared W/L.
inline constexpr Tunable kDefaultMosWidth{120e-9, 100e-6};
inline constexpr Tunable kDefaultMosLength{28e-9, 1e-6};

// `modification` is the record from topomod for this DUT, or nullptr when no
// topology modification was attempted. Throws UnboundPort or MissingHarness.
Deck instantiate(const Netlist& netlist, const TestbenchTemplate& t, const PolarityAssignment& polarity,
                 const Modification* modification = nullptr);

// Structural deck text: SPICE-subset netlist (tunables, .port cards) followed
// by the directive block. Deterministic.
std::string emit_deck(const Deck& deck);

// Simulator-ready text with every tunable replaced by `values`
// ("<device>.<PARAM>" -> value) and ports demoted to comments.
std::string emit_simulation_deck(const Deck& deck, const std::map<std::string, double>& values);

struct ParsedDeck {
    Netlist netlist;
    std::vector<std::string> analyses;
    std::vector<MeasureDirective> directives;
};

// Splits a deck into its netlist part and directive block and parses both.
ParsedDeck parse_deck(std::string_view text);

} // namespace amsq
