#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace amsq {

enum class DeviceKind {
    NMOS,
    PMOS,
    Resistor,
    Capacitor,
    CurrentSource,
    VoltageSource,
    Inductor,
    // Voltage-controlled voltage source (E card). Only produced by the CMFB cell.
    Vcvs,
};

enum class PortType {
    Unknown,
    InputPlus,
    InputMinus,
    InputSingle,
    Output,
    OutputPlus,
    OutputMinus,
    Vdd,
    Vss,
    Bias,
    Feedback,
    Enable,
};

std::string_view to_string(DeviceKind kind);
std::string_view to_string(PortType type);
std::optional<PortType> parse_port_type(std::string_view text);
// Every port type except Unknown, in declaration order.
const std::vector<PortType>& port_type_vocabulary();

[[nodiscard]] constexpr bool is_mos(DeviceKind kind) {
    return kind == DeviceKind::NMOS || kind == DeviceKind::PMOS;
}

// MOS terminal order.
enum MosTerminal : std::size_t { kDrain = 0, kGate = 1, kSource = 2, kBulk = 3 };

std::size_t terminal_arity(DeviceKind kind);

struct Fixed {
    double value = 0.0;
    friend bool operator==(const Fixed&, const Fixed&) = default;
};

struct Tunable {
    double lower = 0.0;
    double upper = 0.0;
    friend bool operator==(const Tunable&, const Tunable&) = default;
};

using ParamValue = std::variant<Fixed, Tunable>;

struct Device {
    std::string name;
    DeviceKind kind = DeviceKind::Resistor;
    std::vector<std::string> terminals;
    // Keys are upper-case (W, L, R, C, DC, GAIN, ...).
    std::map<std::string, ParamValue> params;

    friend bool operator==(const Device&, const Device&) = default;
};

struct Net {
    std::string name;
    friend bool operator==(const Net&, const Net&) = default;
};

struct Port {
    std::string name;
    std::string net;
    PortType ptype = PortType::Unknown;
    friend bool operator==(const Port&, const Port&) = default;
};

struct Netlist {
    std::string name;
    std::vector<Device> devices;
    std::vector<Net> nets;
    std::vector<Port> ports;
    std::map<std::string, std::string> metadata;

    [[nodiscard]] const Device* find_device(std::string_view device) const;
    [[nodiscard]] const Port* find_port(std::string_view port) const;
    [[nodiscard]] const Port* port_on_net(std::string_view net) const;
    [[nodiscard]] bool has_net(std::string_view net) const;
    [[nodiscard]] std::vector<const Port*> ports_of_type(PortType type) const;
    [[nodiscard]] bool has_unknown_ports() const;
};

// Metadata key listing dangling nets (referenced by exactly one terminal),
// comma-separated. Recomputed on every parse, never emitted.
inline constexpr std::string_view kDanglingKey = "dangling";

// Parses the SPICE subset. Throws SyntaxError with codes SyntaxError,
// ArityError, DuplicateName or UnknownCard.
Netlist parse_netlist(std::string_view text);

// One device card, e.g. "M1 d g s b NMOS L=1e-07 W=tune(1e-06,1e-05)".
std::string format_device(const Device& device);

// Deterministic text: metadata, devices sorted by name, ports sorted by name.
std::string emit_netlist(const Netlist& netlist);

// Throws Error(SyntaxError / DuplicateName / ArityError) if an invariant is broken.
void validate(const Netlist& netlist);

// Rebuilds `nets` from device terminals and ports (first appearance order)
// and refreshes the dangling-net flag. Used after structural edits.
void rebuild_nets(Netlist& netlist);

// Same devices, terminals, params and ports, matched by name.
bool isomorphic(const Netlist& a, const Netlist& b);

// Names of nets that carry exactly one device terminal.
std::vector<std::string> dangling_nets(const Netlist& netlist);

// Number of device terminals on `net`.
int fanout(const Netlist& netlist, std::string_view net);

enum class MotifKind { DiffPair, CurrentMirror, ResistiveDivider };
std::string_view to_string(MotifKind kind);

struct Motif {
    MotifKind kind = MotifKind::DiffPair;
    // Sorted device names.
    std::vector<std::string> devices;
    // Ports at the two ends of a resistive divider (sorted); empty otherwise.
    std::vector<std::string> ports;
    friend bool operator==(const Motif&, const Motif&) = default;
    friend auto operator<=>(const Motif& a, const Motif& b) {
        if (a.kind != b.kind) return a.kind <=> b.kind;
        if (a.devices != b.devices) return a.devices <=> b.devices;
        return a.ports <=> b.ports;
    }
};

struct Signature {
    std::map<std::string, int> port_fanout;
    std::map<DeviceKind, int> kind_counts;
    std::vector<Motif> motifs; // sorted

    [[nodiscard]] std::vector<const Motif*> of_kind(MotifKind kind) const;
    friend bool operator==(const Signature&, const Signature&) = default;
};

// Canonical structural summary; independent of device order and net names.
Signature connectivity_signature(const Netlist& netlist);

} // namespace amsq
