#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "amsq/netlist.hpp"

namespace amsq {

enum class ModificationKind { None, CmfbInjection, CmfbHarnessActuation, LdoLoopSever };

std::string_view to_string(ModificationKind kind);
std::optional<ModificationKind> parse_modification_kind(std::string_view text);

struct SeveredTerminal {
    std::string net;       // original net the terminal sat on
    std::string device;
    std::size_t terminal = 0;
    friend bool operator==(const SeveredTerminal&, const SeveredTerminal&) = default;
};

struct Modification {
    ModificationKind kind = ModificationKind::None;
    std::vector<Device> added_devices;
    std::vector<Net> added_nets;
    std::optional<SeveredTerminal> severed;
    // LdoLoopSever: the new net between probe and amplifier input.
    // CmfbHarnessActuation: the existing node the testbench drives.
    std::optional<std::string> probe_net;
    // CmfbInjection: common-mode reference net the testbench must drive.
    std::optional<std::string> reference_net;
    // CmfbInjection: bias net the CMFB control is referenced to.
    std::optional<std::string> rewired_bias;
    // LdoLoopSever: name of the inserted zero-volt probe source.
    std::optional<std::string> probe_device;

    friend bool operator==(const Modification&, const Modification&) = default;
};

void to_json(nlohmann::json& j, const Modification& m);
void from_json(const nlohmann::json& j, Modification& m);

struct ModifiedNetlist {
    Netlist netlist;
    Modification modification;
};

enum class OutputStage { HighImpedance, ResistiveOrDivider };
std::string_view to_string(OutputStage stage);

// Metadata key recording which modification a netlist has been through.
inline constexpr std::string_view kTopomodKey = "topomod";

// Throws NotFullyDifferential unless both OutputPlus and OutputMinus exist.
OutputStage classify_output_stage(const Netlist& netlist);

// CMFB cell: two sensing resistors from the outputs to a common-mode net and
// one VCVS driving the output current-source gates relative to the bias net.
// Resistive output stages come back unchanged with kind None; without a
// usable bias port the result is CmfbHarnessActuation (no devices added).
ModifiedNetlist apply_cmfb(const Netlist& netlist);

// Splits the divider-tap -> amplifier-gate connection with a 0 V probe source.
// Throws NoPassDevice, NoFeedbackDivider or AlreadyModified.
ModifiedNetlist apply_ldo_sever(const Netlist& netlist);

} // namespace amsq
