#include "amsq/netlist.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <functional>
#include <set>
#include <sstream>
#include <unordered_map>

#include "amsq/error.hpp"
#include "amsq/units.hpp"

namespace amsq {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::ArityError: return "ArityError";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::UnknownCard: return "UnknownCard";
    case ErrorCode::AnnotatorUnavailable: return "AnnotatorUnavailable";
    case ErrorCode::AnnotatorInvalidLabel: return "AnnotatorInvalidLabel";
    case ErrorCode::DegenerateDiffPair: return "DegenerateDiffPair";
    case ErrorCode::NotFullyDifferential: return "NotFullyDifferential";
    case ErrorCode::NoBiasNodeFound: return "NoBiasNodeFound";
    case ErrorCode::NoPassDevice: return "NoPassDevice";
    case ErrorCode::NoFeedbackDivider: return "NoFeedbackDivider";
    case ErrorCode::AlreadyModified: return "AlreadyModified";
    case ErrorCode::UnboundPort: return "UnboundPort";
    case ErrorCode::MissingHarness: return "MissingHarness";
    case ErrorCode::InvalidTemplate: return "InvalidTemplate";
    case ErrorCode::PreconditionViolated: return "PreconditionViolated";
    case ErrorCode::DegenerateSpec: return "DegenerateSpec";
    case ErrorCode::BackendDown: return "BackendDown";
    case ErrorCode::NoFeasiblePolarity: return "NoFeasiblePolarity";
    case ErrorCode::DuplicateKey: return "DuplicateKey";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MisalignedIds: return "MisalignedIds";
    case ErrorCode::IoError: return "IoError";
    }
    return "Error";
}

std::string_view to_string(DeviceKind kind) {
    switch (kind) {
    case DeviceKind::NMOS: return "NMOS";
    case DeviceKind::PMOS: return "PMOS";
    case DeviceKind::Resistor: return "Resistor";
    case DeviceKind::Capacitor: return "Capacitor";
    case DeviceKind::CurrentSource: return "CurrentSource";
    case DeviceKind::VoltageSource: return "VoltageSource";
    case DeviceKind::Inductor: return "Inductor";
    case DeviceKind::Vcvs: return "Vcvs";
    }
    return "?";
}

namespace {

constexpr std::array kPortTypeNames = {
    std::pair{PortType::Unknown, std::string_view{"Unknown"}},
    std::pair{PortType::InputPlus, std::string_view{"InputPlus"}},
    std::pair{PortType::InputMinus, std::string_view{"InputMinus"}},
    std::pair{PortType::InputSingle, std::string_view{"InputSingle"}},
    std::pair{PortType::Output, std::string_view{"Output"}},
    std::pair{PortType::OutputPlus, std::string_view{"OutputPlus"}},
    std::pair{PortType::OutputMinus, std::string_view{"OutputMinus"}},
    std::pair{PortType::Vdd, std::string_view{"Vdd"}},
    std::pair{PortType::Vss, std::string_view{"Vss"}},
    std::pair{PortType::Bias, std::string_view{"Bias"}},
    std::pair{PortType::Feedback, std::string_view{"Feedback"}},
    std::pair{PortType::Enable, std::string_view{"Enable"}},
};

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    }
    return true;
}

std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

} // namespace

std::string_view to_string(PortType type) {
    for (auto [t, name] : kPortTypeNames) {
        if (t == type) return name;
    }
    return "Unknown";
}

std::optional<PortType> parse_port_type(std::string_view text) {
    for (auto [t, name] : kPortTypeNames) {
        if (iequals(name, text)) return t;
    }
    return std::nullopt;
}

const std::vector<PortType>& port_type_vocabulary() {
    static const std::vector<PortType> vocab = [] {
        std::vector<PortType> v;
        for (auto [t, name] : kPortTypeNames) {
            if (t != PortType::Unknown) v.push_back(t);
        }
        return v;
    }();
    return vocab;
}

std::size_t terminal_arity(DeviceKind kind) {
    switch (kind) {
    case DeviceKind::NMOS:
    case DeviceKind::PMOS:
    case DeviceKind::Vcvs: return 4;
    default: return 2;
    }
}

std::string_view to_string(MotifKind kind) {
    switch (kind) {
    case MotifKind::DiffPair: return "DiffPair";
    case MotifKind::CurrentMirror: return "CurrentMirror";
    case MotifKind::ResistiveDivider: return "ResistiveDivider";
    }
    return "?";
}

const Device* Netlist::find_device(std::string_view device) const {
    for (const auto& d : devices) {
        if (d.name == device) return &d;
    }
    return nullptr;
}

const Port* Netlist::find_port(std::string_view port) const {
    for (const auto& p : ports) {
        if (p.name == port) return &p;
    }
    return nullptr;
}

const Port* Netlist::port_on_net(std::string_view net) const {
    for (const auto& p : ports) {
        if (p.net == net) return &p;
    }
    return nullptr;
}

bool Netlist::has_net(std::string_view net) const {
    return std::any_of(nets.begin(), nets.end(), [&](const Net& n) { return n.name == net; });
}

std::vector<const Port*> Netlist::ports_of_type(PortType type) const {
    std::vector<const Port*> out;
    for (const auto& p : ports) {
        if (p.ptype == type) out.push_back(&p);
    }
    return out;
}

bool Netlist::has_unknown_ports() const {
    return std::any_of(ports.begin(), ports.end(), [](const Port& p) { return p.ptype == PortType::Unknown; });
}

std::vector<const Motif*> Signature::of_kind(MotifKind kind) const {
    std::vector<const Motif*> out;
    for (const auto& m : motifs) {
        if (m.kind == kind) out.push_back(&m);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

bool valid_utf8(std::string_view s, std::size_t& bad_offset) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        if (c < 0x80) len = 1;
        else if ((c >> 5) == 0x6) len = 2;
        else if ((c >> 4) == 0xE) len = 3;
        else if ((c >> 3) == 0x1E) len = 4;
        else {
            bad_offset = i;
            return false;
        }
        if (i + len > s.size()) {
            bad_offset = i;
            return false;
        }
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) {
                bad_offset = i;
                return false;
            }
        }
        i += len;
    }
    return true;
}

bool valid_identifier(std::string_view s) {
    if (s.empty()) return false;
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x20 || c == 0x7f) return false;
        switch (ch) {
        case '=': case '(': case ')': case '{': case '}': case ',': case ';': case '"': case '\'':
            return false;
        default: break;
        }
    }
    return true;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Whitespace split that keeps "tune(1u, 10u)" together.
std::vector<std::string> tokenize(std::string_view line, int lineno) {
    std::vector<std::string> tokens;
    std::string current;
    int depth = 0;
    for (char ch : line) {
        if (ch == '(') ++depth;
        if (ch == ')') {
            if (depth == 0) throw SyntaxError(ErrorCode::SyntaxError, lineno, "unbalanced ')'");
            --depth;
        }
        if (depth == 0 && std::isspace(static_cast<unsigned char>(ch))) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
            continue;
        }
        if (depth > 0 && std::isspace(static_cast<unsigned char>(ch))) continue;
        current.push_back(ch);
    }
    if (depth != 0) throw SyntaxError(ErrorCode::SyntaxError, lineno, "unbalanced '('");
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

bool is_assignment(std::string_view token) {
    const auto eq = token.find('=');
    const auto paren = token.find('(');
    return eq != std::string_view::npos && eq > 0 && (paren == std::string_view::npos || eq < paren);
}

using ParamTable = std::unordered_map<std::string, std::string>;

struct ValueResolver {
    const ParamTable& raw;           // .param name -> raw value text (upper-cased names)
    std::unordered_map<std::string, ParamValue> cache;
    std::set<std::string> active;

    ParamValue resolve(std::string_view token, int line) {
        if (token.empty()) throw SyntaxError(ErrorCode::SyntaxError, line, "empty value");
        if (token.size() > 5 && iequals(token.substr(0, 5), "tune(") && token.back() == ')') {
            const auto inner = token.substr(5, token.size() - 6);
            const auto comma = inner.find(',');
            if (comma == std::string_view::npos || inner.find(',', comma + 1) != std::string_view::npos)
                throw SyntaxError(ErrorCode::SyntaxError, line, "tune() expects two bounds");
            const double lo = scalar(inner.substr(0, comma), line);
            const double hi = scalar(inner.substr(comma + 1), line);
            if (!(lo < hi))
                throw SyntaxError(ErrorCode::SyntaxError, line, "tune() requires lower < upper");
            return Tunable{lo, hi};
        }
        if (auto v = parse_si_value(token)) return Fixed{*v};
        std::string_view name = token;
        if (name.size() >= 2 && name.front() == '{' && name.back() == '}') name = name.substr(1, name.size() - 2);
        if (!valid_identifier(name))
            throw SyntaxError(ErrorCode::SyntaxError, line, "malformed value '" + std::string(token) + "'");
        const std::string key = upper(name);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
        auto it = raw.find(key);
        if (it == raw.end())
            throw SyntaxError(ErrorCode::SyntaxError, line, "unresolved parameter '" + std::string(name) + "'");
        if (active.count(key)) throw SyntaxError(ErrorCode::SyntaxError, line, "cyclic parameter '" + key + "'");
        active.insert(key);
        ParamValue v = resolve(it->second, line);
        active.erase(key);
        cache.emplace(key, v);
        return v;
    }

    double scalar(std::string_view token, int line) {
        ParamValue v = resolve(trim(token), line);
        if (auto* f = std::get_if<Fixed>(&v)) return f->value;
        throw SyntaxError(ErrorCode::SyntaxError, line, "tune() bounds must be scalars");
    }
};

bool is_physical(DeviceKind kind, std::string_view key) {
    if (is_mos(kind)) return key == "W" || key == "L";
    switch (kind) {
    case DeviceKind::Resistor: return key == "R";
    case DeviceKind::Capacitor: return key == "C";
    case DeviceKind::Inductor: return key == "L";
    default: return false;
    }
}

std::string positional_key(DeviceKind kind) {
    switch (kind) {
    case DeviceKind::Resistor: return "R";
    case DeviceKind::Capacitor: return "C";
    case DeviceKind::Inductor: return "L";
    case DeviceKind::VoltageSource:
    case DeviceKind::CurrentSource: return "DC";
    case DeviceKind::Vcvs: return "GAIN";
    default: return "";
    }
}

void check_physical(const Device& d, int line) {
    for (const auto& [key, value] : d.params) {
        if (!is_physical(d.kind, key)) continue;
        const bool ok = std::visit(
            [](const auto& v) {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, Fixed>) return v.value > 0.0;
                else return v.lower > 0.0 && v.upper > 0.0;
            },
            value);
        if (!ok)
            throw SyntaxError(ErrorCode::SyntaxError, line,
                              "parameter " + key + " of " + d.name + " must be strictly positive");
    }
}

struct RawLine {
    int number;
    std::string_view text;
};

} // namespace

Netlist parse_netlist(std::string_view text) {
    if (std::size_t bad = 0; !valid_utf8(text, bad)) {
        const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(bad), '\n'));
        throw SyntaxError(ErrorCode::SyntaxError, line, "invalid UTF-8");
    }

    std::vector<RawLine> lines;
    {
        int number = 0;
        std::size_t start = 0;
        while (start <= text.size()) {
            auto end = text.find('\n', start);
            if (end == std::string_view::npos) end = text.size();
            ++number;
            lines.push_back({number, trim(text.substr(start, end - start))});
            if (end == text.size()) break;
            start = end + 1;
        }
    }

    // .param cards are global; collect them first so device lines may refer forward.
    ParamTable raw_params;
    for (const auto& [number, line] : lines) {
        if (line.empty() || line.front() == '*') continue;
        const auto tokens = tokenize(line, number);
        if (tokens.empty() || !iequals(tokens[0], ".param")) continue;
        if (tokens.size() < 2) throw SyntaxError(ErrorCode::SyntaxError, number, ".param without assignment");
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            if (!is_assignment(tokens[i]))
                throw SyntaxError(ErrorCode::SyntaxError, number, "expected name=value in .param");
            const auto eq = tokens[i].find('=');
            const auto name = std::string_view(tokens[i]).substr(0, eq);
            if (!valid_identifier(name)) throw SyntaxError(ErrorCode::SyntaxError, number, "bad .param name");
            if (!raw_params.emplace(upper(name), tokens[i].substr(eq + 1)).second)
                throw SyntaxError(ErrorCode::DuplicateName, number, "parameter '" + std::string(name) + "'");
        }
    }
    ValueResolver resolver{raw_params, {}, {}};

    Netlist out;
    std::set<std::string> device_names;
    std::set<std::string> port_names;
    std::set<std::string> port_nets;
    std::vector<std::string> pins;
    int pin_line = 0;
    enum class Scope { Top, InSubckt, AfterEnds } scope = Scope::Top;
    bool seen_subckt = false;
    bool seen_top_device = false;

    for (const auto& [number, line] : lines) {
        if (line.empty()) continue;
        if (line.front() == '*') {
            if (line.size() >= 6 && line.substr(0, 6) == "*@meta") {
                auto rest = trim(line.substr(6));
                const auto sp = rest.find_first_of(" \t");
                const auto key = rest.substr(0, sp);
                if (!valid_identifier(key)) throw SyntaxError(ErrorCode::SyntaxError, number, "bad metadata key");
                const auto value = sp == std::string_view::npos ? std::string_view{} : trim(rest.substr(sp));
                if (key != kDanglingKey) out.metadata[std::string(key)] = std::string(value);
            }
            continue;
        }

        const auto tokens = tokenize(line, number);
        if (tokens.empty()) continue;
        const std::string& head = tokens[0];

        if (head.front() == '.') {
            if (iequals(head, ".param")) continue;
            if (iequals(head, ".end")) break;
            if (iequals(head, ".subckt")) {
                if (seen_subckt) throw SyntaxError(ErrorCode::UnknownCard, number, "nested or repeated .subckt");
                if (seen_top_device)
                    throw SyntaxError(ErrorCode::SyntaxError, number, ".subckt after top-level devices");
                if (tokens.size() < 2 || !valid_identifier(tokens[1]))
                    throw SyntaxError(ErrorCode::SyntaxError, number, ".subckt requires a name");
                seen_subckt = true;
                scope = Scope::InSubckt;
                out.name = tokens[1];
                pin_line = number;
                for (std::size_t i = 2; i < tokens.size(); ++i) {
                    if (!valid_identifier(tokens[i]) || is_assignment(tokens[i]))
                        throw SyntaxError(ErrorCode::SyntaxError, number, "bad .subckt pin");
                    pins.push_back(tokens[i]);
                }
                continue;
            }
            if (iequals(head, ".ends")) {
                if (scope != Scope::InSubckt) throw SyntaxError(ErrorCode::SyntaxError, number, ".ends without .subckt");
                scope = Scope::AfterEnds;
                continue;
            }
            if (scope == Scope::AfterEnds)
                throw SyntaxError(ErrorCode::SyntaxError, number, "statement after .ends");
            if (iequals(head, ".port")) {
                if (tokens.size() < 3 || tokens.size() > 4)
                    throw SyntaxError(ErrorCode::SyntaxError, number, ".port expects <name> <net> [type]");
                if (!valid_identifier(tokens[1]) || !valid_identifier(tokens[2]))
                    throw SyntaxError(ErrorCode::SyntaxError, number, "bad .port name or net");
                PortType type = PortType::Unknown;
                if (tokens.size() == 4) {
                    auto parsed = parse_port_type(tokens[3]);
                    if (!parsed) throw SyntaxError(ErrorCode::SyntaxError, number, "unknown port type '" + tokens[3] + "'");
                    type = *parsed;
                }
                if (!port_names.insert(tokens[1]).second)
                    throw SyntaxError(ErrorCode::DuplicateName, number, "port '" + tokens[1] + "'");
                if (!port_nets.insert(tokens[2]).second)
                    throw SyntaxError(ErrorCode::SyntaxError, number, "net '" + tokens[2] + "' already has a port");
                out.ports.push_back({tokens[1], tokens[2], type});
                continue;
            }
            throw SyntaxError(ErrorCode::UnknownCard, number, "unsupported card '" + head + "'");
        }

        if (scope == Scope::AfterEnds) throw SyntaxError(ErrorCode::SyntaxError, number, "statement after .ends");

        DeviceKind kind;
        switch (std::toupper(static_cast<unsigned char>(head.front()))) {
        case 'M': kind = DeviceKind::NMOS; break;
        case 'R': kind = DeviceKind::Resistor; break;
        case 'C': kind = DeviceKind::Capacitor; break;
        case 'L': kind = DeviceKind::Inductor; break;
        case 'V': kind = DeviceKind::VoltageSource; break;
        case 'I': kind = DeviceKind::CurrentSource; break;
        case 'E': kind = DeviceKind::Vcvs; break;
        default: throw SyntaxError(ErrorCode::UnknownCard, number, "unsupported card '" + head + "'");
        }
        if (!valid_identifier(head)) throw SyntaxError(ErrorCode::SyntaxError, number, "bad device name");
        if (scope == Scope::Top) seen_top_device = true;

        std::vector<std::string_view> positional;
        std::vector<std::string_view> assignments;
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            if (is_assignment(tokens[i])) assignments.push_back(tokens[i]);
            else if (!assignments.empty())
                throw SyntaxError(ErrorCode::SyntaxError, number, "positional token after parameters");
            else positional.push_back(tokens[i]);
        }

        Device dev;
        dev.name = head;
        std::size_t nets = 0;
        std::optional<std::string_view> value_token;
        if (kind == DeviceKind::NMOS) {
            if (positional.size() != 5)
                throw SyntaxError(ErrorCode::ArityError, number,
                                  "device " + head + " expects 4 terminals and a model, got " +
                                      std::to_string(positional.size()) + " tokens");
            if (iequals(positional[4], "nmos")) kind = DeviceKind::NMOS;
            else if (iequals(positional[4], "pmos")) kind = DeviceKind::PMOS;
            else throw SyntaxError(ErrorCode::SyntaxError, number, "unknown MOS model '" + std::string(positional[4]) + "'");
            nets = 4;
        } else {
            nets = terminal_arity(kind);
            if (positional.size() != nets && positional.size() != nets + 1)
                throw SyntaxError(ErrorCode::ArityError, number,
                                  "device " + head + " expects " + std::to_string(nets) + " terminals");
            if (positional.size() == nets + 1) value_token = positional[nets];
        }
        dev.kind = kind;
        for (std::size_t i = 0; i < nets; ++i) {
            if (!valid_identifier(positional[i])) throw SyntaxError(ErrorCode::SyntaxError, number, "bad net name");
            dev.terminals.emplace_back(positional[i]);
        }
        if (value_token) dev.params[positional_key(kind)] = resolver.resolve(*value_token, number);
        for (auto a : assignments) {
            const auto eq = a.find('=');
            const auto key = upper(a.substr(0, eq));
            if (!valid_identifier(key)) throw SyntaxError(ErrorCode::SyntaxError, number, "bad parameter name");
            if (dev.params.count(key)) throw SyntaxError(ErrorCode::SyntaxError, number, "parameter " + key + " given twice");
            dev.params[key] = resolver.resolve(a.substr(eq + 1), number);
        }
        check_physical(dev, number);
        if (!device_names.insert(dev.name).second)
            throw SyntaxError(ErrorCode::DuplicateName, number, "device '" + dev.name + "'");
        out.devices.push_back(std::move(dev));
    }
    if (scope == Scope::InSubckt)
        throw SyntaxError(ErrorCode::SyntaxError, static_cast<int>(lines.size()), "missing .ends");

    for (const auto& pin : pins) {
        if (port_nets.count(pin)) continue;
        if (!port_names.insert(pin).second)
            throw SyntaxError(ErrorCode::DuplicateName, pin_line, "port '" + pin + "'");
        port_nets.insert(pin);
        out.ports.push_back({pin, pin, PortType::Unknown});
    }

    rebuild_nets(out);
    return out;
}

// ---------------------------------------------------------------------------

void rebuild_nets(Netlist& netlist) {
    std::set<std::string> seen;
    netlist.nets.clear();
    auto add = [&](const std::string& n) {
        if (seen.insert(n).second) netlist.nets.push_back({n});
    };
    for (const auto& d : netlist.devices) {
        for (const auto& t : d.terminals) add(t);
    }
    for (const auto& p : netlist.ports) add(p.net);

    const auto dangling = dangling_nets(netlist);
    if (dangling.empty()) {
        netlist.metadata.erase(std::string(kDanglingKey));
    } else {
        std::string joined;
        for (const auto& n : dangling) {
            if (!joined.empty()) joined += ',';
            joined += n;
        }
        netlist.metadata[std::string(kDanglingKey)] = joined;
    }
}

int fanout(const Netlist& netlist, std::string_view net) {
    int count = 0;
    for (const auto& d : netlist.devices) {
        for (const auto& t : d.terminals) {
            if (t == net) ++count;
        }
    }
    return count;
}

std::vector<std::string> dangling_nets(const Netlist& netlist) {
    std::map<std::string, int> counts;
    for (const auto& d : netlist.devices) {
        for (const auto& t : d.terminals) ++counts[t];
    }
    std::vector<std::string> out;
    for (const auto& n : netlist.nets) {
        if (auto it = counts.find(n.name); it != counts.end() && it->second == 1) out.push_back(n.name);
    }
    return out;
}

void validate(const Netlist& netlist) {
    std::set<std::string> nets;
    for (const auto& n : netlist.nets) {
        if (!nets.insert(n.name).second) throw Error(ErrorCode::DuplicateName, "net '" + n.name + "'");
    }
    std::set<std::string> names;
    for (const auto& d : netlist.devices) {
        if (!valid_identifier(d.name)) throw Error(ErrorCode::SyntaxError, "bad device name '" + d.name + "'");
        if (!names.insert(d.name).second) throw Error(ErrorCode::DuplicateName, "device '" + d.name + "'");
        if (d.terminals.size() != terminal_arity(d.kind)) throw Error(ErrorCode::ArityError, "device '" + d.name + "'");
        for (const auto& t : d.terminals) {
            if (!nets.count(t)) throw Error(ErrorCode::SyntaxError, "device '" + d.name + "' references unknown net '" + t + "'");
        }
        for (const auto& [key, value] : d.params) {
            if (const auto* t = std::get_if<Tunable>(&value); t && !(t->lower < t->upper))
                throw Error(ErrorCode::SyntaxError, "tunable " + d.name + "." + key + " has lower >= upper");
        }
        check_physical(d, 0);
    }
    std::set<std::string> port_names;
    std::set<std::string> port_nets;
    for (const auto& p : netlist.ports) {
        if (!port_names.insert(p.name).second) throw Error(ErrorCode::DuplicateName, "port '" + p.name + "'");
        if (!nets.count(p.net)) throw Error(ErrorCode::SyntaxError, "port '" + p.name + "' references unknown net");
        if (!port_nets.insert(p.net).second) throw Error(ErrorCode::SyntaxError, "net '" + p.net + "' has two ports");
    }
}

namespace {

std::string format_value(const ParamValue& v) {
    if (const auto* f = std::get_if<Fixed>(&v)) return format_number(f->value);
    const auto& t = std::get<Tunable>(v);
    return "tune(" + format_number(t.lower) + "," + format_number(t.upper) + ")";
}

std::string sanitize_meta(std::string_view value) {
    std::string out(value);
    for (auto& c : out) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return std::string(trim(out));
}

} // namespace

std::string format_device(const Device& d) {
    std::string line = d.name;
    for (const auto& t : d.terminals) line += ' ' + t;
    if (d.kind == DeviceKind::NMOS) line += " NMOS";
    if (d.kind == DeviceKind::PMOS) line += " PMOS";
    for (const auto& [key, value] : d.params) line += ' ' + key + '=' + format_value(value);
    return line;
}

std::string emit_netlist(const Netlist& netlist) {
    std::ostringstream os;
    os << "* amsq netlist\n";
    for (const auto& [key, value] : netlist.metadata) {
        if (key == kDanglingKey) continue;
        os << "*@meta " << key;
        if (auto v = sanitize_meta(value); !v.empty()) os << ' ' << v;
        os << '\n';
    }
    if (!netlist.name.empty()) os << ".subckt " << netlist.name << '\n';

    std::vector<const Device*> devices;
    for (const auto& d : netlist.devices) devices.push_back(&d);
    std::sort(devices.begin(), devices.end(), [](auto* a, auto* b) { return a->name < b->name; });
    for (const auto* d : devices) os << format_device(*d) << '\n';

    std::vector<const Port*> ports;
    for (const auto& p : netlist.ports) ports.push_back(&p);
    std::sort(ports.begin(), ports.end(), [](auto* a, auto* b) { return a->name < b->name; });
    for (const auto* p : ports) os << ".port " << p->name << ' ' << p->net << ' ' << to_string(p->ptype) << '\n';

    if (!netlist.name.empty()) os << ".ends\n";
    return os.str();
}

bool isomorphic(const Netlist& a, const Netlist& b) {
    if (a.name != b.name || a.devices.size() != b.devices.size() || a.ports.size() != b.ports.size()) return false;
    for (const auto& d : a.devices) {
        const auto* other = b.find_device(d.name);
        if (!other || !(*other == d)) return false;
    }
    for (const auto& p : a.ports) {
        const auto* other = b.find_port(p.name);
        if (!other || !(*other == p)) return false;
    }
    std::set<std::string> na, nb;
    for (const auto& n : a.nets) na.insert(n.name);
    for (const auto& n : b.nets) nb.insert(n.name);
    return na == nb;
}

// ---------------------------------------------------------------------------
// Structural motifs

Signature connectivity_signature(const Netlist& netlist) {
    Signature sig;
    for (const auto& p : netlist.ports) sig.port_fanout[p.name] = fanout(netlist, p.net);
    for (const auto& d : netlist.devices) ++sig.kind_counts[d.kind];

    std::set<Motif> motifs;
    std::vector<const Device*> mos;
    for (const auto& d : netlist.devices) {
        if (is_mos(d.kind)) mos.push_back(&d);
    }
    auto diode = [](const Device* d) { return d->terminals[kGate] == d->terminals[kDrain]; };
    auto sorted_pair = [](const Device* a, const Device* b) {
        std::vector<std::string> v{a->name, b->name};
        std::sort(v.begin(), v.end());
        return v;
    };
    for (std::size_t i = 0; i < mos.size(); ++i) {
        for (std::size_t j = i + 1; j < mos.size(); ++j) {
            const Device* a = mos[i];
            const Device* b = mos[j];
            if (a->kind != b->kind) continue;
            const auto& ta = a->terminals;
            const auto& tb = b->terminals;
            const bool diff_pair = ta[kSource] == tb[kSource] && ta[kGate] != tb[kGate] && !diode(a) && !diode(b) &&
                                   ta[kDrain] != tb[kDrain] && ta[kGate] != tb[kDrain] && tb[kGate] != ta[kDrain] &&
                                   ta[kGate] != ta[kSource] && tb[kGate] != tb[kSource];
            if (diff_pair) motifs.insert({MotifKind::DiffPair, sorted_pair(a, b), {}});
            const bool mirror = ta[kGate] == tb[kGate] && ta[kDrain] != tb[kDrain] && (diode(a) || diode(b));
            if (mirror) motifs.insert({MotifKind::CurrentMirror, sorted_pair(a, b), {}});
        }
    }

    // Resistor chains (>= 2 resistors) between two distinct port nets through
    // non-port nets.
    std::map<std::string, std::vector<std::pair<const Device*, std::string>>> adjacency;
    for (const auto& d : netlist.devices) {
        if (d.kind != DeviceKind::Resistor) continue;
        adjacency[d.terminals[0]].push_back({&d, d.terminals[1]});
        adjacency[d.terminals[1]].push_back({&d, d.terminals[0]});
    }
    std::size_t budget = 20000;
    for (const auto& start : netlist.ports) {
        std::vector<std::string> path_devices;
        std::set<std::string> visited{start.net};
        std::function<void(const std::string&)> walk = [&](const std::string& net) {
            if (budget == 0 || path_devices.size() > 16) return;
            --budget;
            auto it = adjacency.find(net);
            if (it == adjacency.end()) return;
            for (const auto& [res, next] : it->second) {
                if (visited.count(next)) continue;
                if (std::find(path_devices.begin(), path_devices.end(), res->name) != path_devices.end()) continue;
                path_devices.push_back(res->name);
                if (const Port* end = netlist.port_on_net(next)) {
                    if (path_devices.size() >= 2 && end->name != start.name) {
                        auto devs = path_devices;
                        std::sort(devs.begin(), devs.end());
                        std::vector<std::string> ends{start.name, end->name};
                        std::sort(ends.begin(), ends.end());
                        motifs.insert({MotifKind::ResistiveDivider, devs, ends});
                    }
                } else {
                    visited.insert(next);
                    walk(next);
                    visited.erase(next);
                }
                path_devices.pop_back();
            }
        };
        walk(start.net);
    }

    sig.motifs.assign(motifs.begin(), motifs.end());
    return sig;
}

} // namespace amsq
