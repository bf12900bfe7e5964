#include "amsq/testbench.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "amsq/error.hpp"
#include "amsq/units.hpp"

namespace amsq {

namespace {

#include "builtin_templates.inc"

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream is{std::string(s)};
    for (std::string tok; is >> tok;) out.push_back(tok);
    return out;
}

[[noreturn]] void bad_template(int line, const std::string& why) {
    throw Error(ErrorCode::InvalidTemplate, "line " + std::to_string(line) + ": " + why);
}

std::string measure_id(std::string_view metric) {
    std::string id;
    for (char ch : metric) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) && c < 0x80) id.push_back(static_cast<char>(std::tolower(c)));
        else if (!id.empty() && id.back() != '_') id.push_back('_');
    }
    while (!id.empty() && id.back() == '_') id.pop_back();
    return id.empty() ? "m" : id;
}

struct Placeholder {
    std::size_t begin;
    std::size_t end; // one past '}'
    std::string kind;
    std::string arg;
};

std::vector<Placeholder> placeholders(std::string_view text) {
    std::vector<Placeholder> out;
    std::size_t pos = 0;
    while ((pos = text.find('{', pos)) != std::string_view::npos) {
        const auto close = text.find('}', pos);
        if (close == std::string_view::npos) break;
        const auto body = text.substr(pos + 1, close - pos - 1);
        const auto colon = body.find(':');
        if (colon != std::string_view::npos) {
            const auto kind = body.substr(0, colon);
            if (kind == "PORT" || kind == "BIAS" || kind == "MEAS" || kind == "CONST" || kind == "HARNESS")
                out.push_back({pos, close + 1, std::string(kind), std::string(body.substr(colon + 1))});
        }
        pos = close + 1;
    }
    return out;
}

template <typename Resolve>
std::string expand(std::string_view text, Resolve&& resolve) {
    std::string out;
    std::size_t last = 0;
    for (const auto& p : placeholders(text)) {
        out.append(text.substr(last, p.begin - last));
        out += resolve(p.kind, p.arg);
        last = p.end;
    }
    out.append(text.substr(last));
    return out;
}

void check_placeholders(std::string_view text, const TestbenchTemplate& t, const std::set<std::string>& metric_names,
                        int line) {
    for (const auto& p : placeholders(text)) {
        if (p.kind == "PORT") {
            auto type = parse_port_type(p.arg);
            if (!type || *type == PortType::Unknown) bad_template(line, "unknown port type '" + p.arg + "'");
        } else if (p.kind == "CONST") {
            if (!t.constants.count(p.arg)) bad_template(line, "undefined constant '" + p.arg + "'");
        } else if (p.kind == "MEAS") {
            if (!metric_names.count(p.arg)) bad_template(line, "unknown metric '" + p.arg + "'");
        } else if (p.kind == "BIAS") {
            const bool found = std::any_of(t.bias_slots.begin(), t.bias_slots.end(),
                                           [&](const BiasSlot& s) { return s.name == p.arg; });
            if (!found) bad_template(line, "unknown bias slot '" + p.arg + "'");
        } else if (p.kind == "HARNESS") {
            if (p.arg != "probe" && p.arg != "reference") bad_template(line, "unknown harness field '" + p.arg + "'");
        }
    }
}

// meas "<metric>" <analysis> [scale=<x>] [cond=<tag>] : <expression>
MeasureDirective parse_meas(std::string_view rest, int line) {
    rest = trim(rest);
    if (rest.empty() || rest.front() != '"') bad_template(line, "meas expects a quoted metric name");
    const auto close = rest.find('"', 1);
    if (close == std::string_view::npos) bad_template(line, "unterminated metric name");
    MeasureDirective m;
    m.metric = std::string(rest.substr(1, close - 1));
    rest = rest.substr(close + 1);
    const auto colon = rest.find(" : ");
    if (colon == std::string_view::npos) bad_template(line, "meas expects ' : ' before the expression");
    m.expression = std::string(trim(rest.substr(colon + 3)));
    if (m.expression.empty()) bad_template(line, "empty measurement expression");
    const auto head = split_ws(rest.substr(0, colon));
    if (head.empty()) bad_template(line, "meas expects an analysis name");
    m.analysis = head[0];
    for (std::size_t i = 1; i < head.size(); ++i) {
        const auto& tok = head[i];
        if (tok.rfind("scale=", 0) == 0) {
            auto v = parse_si_value(tok.substr(6));
            if (!v || *v == 0.0) bad_template(line, "bad scale '" + tok + "'");
            m.scale = *v;
        } else if (tok.rfind("cond=", 0) == 0) {
            m.condition = tok.substr(5);
        } else {
            bad_template(line, "unexpected token '" + tok + "'");
        }
    }
    return m;
}

} // namespace

TestbenchTemplate parse_template(std::string_view text, const std::vector<SpecTable>& tables) {
    TestbenchTemplate t;
    bool have_id = false, have_class = false, have_spec = false, have_require = false;
    std::vector<std::pair<int, std::string>> cards;
    std::vector<std::pair<int, MeasureDirective>> meas;

    int number = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        ++number;
        const auto line = trim(text.substr(start, end - start));
        start = end + 1;
        if (line.empty() || line.front() == '#') {
            if (end == text.size()) break;
            continue;
        }
        const auto sp = line.find_first_of(" \t");
        const auto key = line.substr(0, sp);
        const auto rest = sp == std::string_view::npos ? std::string_view{} : trim(line.substr(sp));
        const auto args = split_ws(rest);

        if (key == "template") {
            if (args.size() != 1) bad_template(number, "template expects one id");
            t.id = args[0];
            have_id = true;
        } else if (key == "class") {
            auto c = args.size() == 1 ? parse_circuit_class(args[0]) : std::nullopt;
            if (!c) bad_template(number, "unknown circuit class");
            t.circuit_class = *c;
            have_class = true;
        } else if (key == "spec") {
            if (args.size() != 1) bad_template(number, "spec expects a table name");
            auto it = std::find_if(tables.begin(), tables.end(), [&](const SpecTable& s) { return s.name == args[0]; });
            if (it == tables.end()) bad_template(number, "unknown spec table '" + args[0] + "'");
            t.specs = *it;
            t.metrics = it->metrics;
            have_spec = true;
        } else if (key == "require") {
            if (args.empty()) bad_template(number, "require expects port types");
            for (const auto& a : args) {
                auto type = parse_port_type(a);
                if (!type || *type == PortType::Unknown) bad_template(number, "unknown port type '" + a + "'");
                t.required_ports.push_back(*type);
            }
            have_require = true;
        } else if (key == "bias") {
            if (args.size() != 4) bad_template(number, "bias expects <slot> <ptype> <lo> <hi>");
            BiasSlot slot;
            slot.name = args[0];
            auto type = parse_port_type(args[1]);
            if (!type || *type == PortType::Unknown) bad_template(number, "unknown port type '" + args[1] + "'");
            slot.ptype = *type;
            auto lo = parse_si_value(args[2]);
            auto hi = parse_si_value(args[3]);
            if (!lo || !hi || !(*lo < *hi)) bad_template(number, "bias range needs lo < hi");
            slot.range = {*lo, *hi};
            t.bias_slots.push_back(slot);
        } else if (key == "harness") {
            if (args.empty()) bad_template(number, "harness expects none|cmfb|iprobe");
            if (args[0] == "none") t.harness = HarnessKind::None;
            else if (args[0] == "cmfb") t.harness = HarnessKind::Cmfb;
            else if (args[0] == "iprobe") t.harness = HarnessKind::Iprobe;
            else bad_template(number, "unknown harness '" + args[0] + "'");
            if (t.harness == HarnessKind::Cmfb) {
                if (args.size() != 3) bad_template(number, "harness cmfb expects <lo> <hi>");
                auto lo = parse_si_value(args[1]);
                auto hi = parse_si_value(args[2]);
                if (!lo || !hi || !(*lo < *hi)) bad_template(number, "harness range needs lo < hi");
                t.bias_slots.push_back({"cmfb", PortType::Bias, {*lo, *hi}});
            } else if (args.size() != 1) {
                bad_template(number, "unexpected harness arguments");
            }
        } else if (key == "const") {
            if (args.size() != 2) bad_template(number, "const expects <name> <value>");
            if (!parse_si_value(args[1])) bad_template(number, "const value must be numeric");
            t.constants[args[0]] = args[1];
        } else if (key == "card") {
            if (rest.empty()) bad_template(number, "empty card");
            cards.emplace_back(number, std::string(rest));
        } else if (key == "analysis") {
            if (rest.empty() || rest.front() != '.') bad_template(number, "analysis must start with '.'");
            t.analyses.emplace_back(rest);
        } else if (key == "meas") {
            meas.emplace_back(number, parse_meas(rest, number));
        } else {
            bad_template(number, "unknown keyword '" + std::string(key) + "'");
        }
        if (end == text.size()) break;
    }

    if (!have_id || !have_class || !have_spec || !have_require)
        throw Error(ErrorCode::InvalidTemplate, "template needs template, class, spec and require lines");
    if (std::count(t.required_ports.begin(), t.required_ports.end(), PortType::Vdd) != 1 ||
        std::count(t.required_ports.begin(), t.required_ports.end(), PortType::Vss) != 1)
        throw Error(ErrorCode::InvalidTemplate, t.id + ": required ports need exactly one Vdd and one Vss");

    std::set<std::string> metric_names;
    for (const auto& m : t.metrics) metric_names.insert(m.name);
    for (const auto& [line, card] : cards) {
        check_placeholders(card, t, metric_names, line);
        t.stimulus.push_back(card);
    }
    std::set<std::string> measured;
    std::set<std::string> ids;
    for (auto& [line, m] : meas) {
        if (!metric_names.count(m.metric)) bad_template(line, "metric '" + m.metric + "' is not in table " + t.specs.name);
        check_placeholders(m.expression, t, metric_names, line);
        m.id = measure_id(m.metric);
        for (int k = 2; ids.count(m.id); ++k) m.id = measure_id(m.metric) + "_" + std::to_string(k);
        ids.insert(m.id);
        measured.insert(m.metric);
        t.measurements.push_back(m);
    }
    for (const auto& m : t.metrics) {
        if (!measured.count(m.name)) throw Error(ErrorCode::InvalidTemplate, t.id + ": no measurement for metric '" + m.name + "'");
    }
    return t;
}

const std::map<CircuitClass, std::string>& builtin_template_sources() {
    static const std::map<CircuitClass, std::string> sources{
        {CircuitClass::SingleEndedOpAmp, kSingleEndedOpAmpTemplate},
        {CircuitClass::FullyDiffOpAmp, kFullyDiffOpAmpTemplate},
        {CircuitClass::Comparator, kComparatorTemplate},
        {CircuitClass::LDO, kLdoTemplate},
    };
    return sources;
}

std::vector<TestbenchTemplate> default_template_library() {
    std::vector<SpecTable> tables;
    for (auto c : {CircuitClass::SingleEndedOpAmp, CircuitClass::Comparator, CircuitClass::LDO})
        tables.push_back(default_spec_table(c));
    std::vector<TestbenchTemplate> out;
    for (const auto& [cls, text] : builtin_template_sources()) out.push_back(parse_template(text, tables));
    return out;
}

std::vector<TestbenchTemplate> load_template_library(const std::string& directory, const std::vector<SpecTable>& tables) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(directory, ec)) throw Error(ErrorCode::ConfigError, "template directory '" + directory + "' not found");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(directory)) {
        if (entry.is_regular_file() && entry.path().extension() == ".tb") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<TestbenchTemplate> out;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        try {
            out.push_back(parse_template(ss.str(), tables));
        } catch (const Error& e) {
            throw Error(ErrorCode::InvalidTemplate, f.filename().string() + ": " + e.what());
        }
    }
    return out;
}

std::vector<TestbenchTemplate> select_templates(const Netlist& netlist, const std::vector<TestbenchTemplate>& library) {
    std::map<PortType, int> have;
    for (const auto& p : netlist.ports) ++have[p.ptype];
    std::vector<TestbenchTemplate> out;
    for (const auto& t : library) {
        std::map<PortType, int> need;
        for (auto type : t.required_ports) ++need[type];
        const bool covered = std::all_of(need.begin(), need.end(), [&](const auto& kv) { return have[kv.first] >= kv.second; });
        if (covered) out.push_back(t);
    }
    return out;
}

std::map<std::string, Tunable> Deck::tunables() const {
    std::map<std::string, Tunable> out;
    auto collect = [&](const std::vector<Device>& devices) {
        for (const auto& d : devices) {
            for (const auto& [key, value] : d.params) {
                if (const auto* t = std::get_if<Tunable>(&value)) out[d.name + "." + key] = *t;
            }
        }
    };
    collect(dut.devices);
    collect(testbench);
    return out;
}

namespace {

std::string card_name(std::string_view prefix, std::string_view port) {
    std::string out(prefix);
    for (char ch : port) {
        const auto c = static_cast<unsigned char>(ch);
        out.push_back(std::isalnum(c) && c < 0x80 ? static_cast<char>(std::tolower(c)) : '_');
    }
    return out;
}

Device parse_card(const std::string& line) {
    Netlist one;
    try {
        one = parse_netlist(line);
    } catch (const Error& e) {
        throw Error(ErrorCode::InvalidTemplate, "card '" + line + "': " + e.what());
    }
    if (one.devices.size() != 1) throw Error(ErrorCode::InvalidTemplate, "card '" + line + "' is not a single device");
    return one.devices.front();
}

bool shorted(const Device& d) {
    return d.terminals.size() == 2 && d.terminals[0] == d.terminals[1];
}

} // namespace

Deck instantiate(const Netlist& netlist, const TestbenchTemplate& t, const PolarityAssignment& polarity,
                 const Modification* modification) {
    Deck deck;
    deck.dut = apply_polarity(netlist, polarity);
    deck.template_id = t.id;
    deck.circuit_class = t.circuit_class;
    deck.polarity = polarity;
    deck.metrics = t.metrics;
    if (modification) deck.modification = *modification;

    if (deck.dut.has_unknown_ports())
        throw Error(ErrorCode::PreconditionViolated, "netlist '" + deck.dut.name + "' still has Unknown ports");

    for (auto& d : deck.dut.devices) {
        if (!is_mos(d.kind)) continue;
        d.params.try_emplace("W", kDefaultMosWidth);
        d.params.try_emplace("L", kDefaultMosLength);
    }

    // Harness requirements come from the topology-modification record.
    std::string probe, reference;
    switch (t.harness) {
    case HarnessKind::None: break;
    case HarnessKind::Iprobe:
        if (!modification || modification->kind != ModificationKind::LdoLoopSever || !modification->probe_device)
            throw Error(ErrorCode::MissingHarness, t.id + " needs an iprobe inserted by the LDO loop sever");
        probe = *modification->probe_device;
        break;
    case HarnessKind::Cmfb:
        if (!modification || modification->kind == ModificationKind::LdoLoopSever)
            throw Error(ErrorCode::MissingHarness, t.id + " needs the CMFB modification result");
        if (modification->reference_net) reference = *modification->reference_net;
        if (modification->kind == ModificationKind::CmfbHarnessActuation && modification->probe_net)
            probe = *modification->probe_net;
        break;
    }

    auto port_net = [&](const std::string& type_name) -> std::string {
        const auto type = *parse_port_type(type_name);
        const auto ports = deck.dut.ports_of_type(type);
        if (ports.empty()) throw Error(ErrorCode::UnboundPort, "template " + t.id + " needs a " + type_name + " port");
        if (ports.size() > 1)
            throw Error(ErrorCode::UnboundPort, "template " + t.id + " cannot choose among " + std::to_string(ports.size()) +
                                                    " " + type_name + " ports");
        return ports.front()->net;
    };
    auto measure_ref = [&](const std::string& metric) {
        for (const auto& m : t.measurements) {
            if (m.metric == metric) return m.id;
        }
        return measure_id(metric);
    };
    std::map<std::string, std::string> bias_source; // slot -> first source card
    auto resolve = [&](const std::string& kind, const std::string& arg) -> std::string {
        if (kind == "PORT") return port_net(arg);
        if (kind == "CONST") return t.constants.at(arg);
        if (kind == "MEAS") return measure_ref(arg);
        if (kind == "BIAS") {
            auto it = bias_source.find(arg);
            if (it == bias_source.end()) throw Error(ErrorCode::UnboundPort, "bias slot '" + arg + "' has no port to drive");
            return it->second;
        }
        if (arg == "probe") {
            if (probe.empty()) throw Error(ErrorCode::MissingHarness, t.id + " references a probe that was not inserted");
            return probe;
        }
        if (reference.empty()) throw Error(ErrorCode::MissingHarness, t.id + " references a CMFB reference net that does not exist");
        return reference;
    };

    const std::string vss = port_net("Vss");
    std::set<std::string> names;
    for (const auto& d : deck.dut.devices) names.insert(d.name);
    auto add_card = [&](Device d) {
        if (shorted(d)) return;
        if (!names.insert(d.name).second)
            throw Error(ErrorCode::DuplicateName, "testbench card '" + d.name + "' collides with an existing device");
        deck.testbench.push_back(std::move(d));
    };

    for (const auto& slot : t.bias_slots) {
        if (slot.name == "cmfb") continue;
        for (const auto* p : deck.dut.ports_of_type(slot.ptype)) {
            Device src;
            src.name = card_name("Vtb_" + slot.name + "_", p->name);
            src.kind = DeviceKind::VoltageSource;
            src.terminals = {p->net, vss};
            src.params["DC"] = slot.range;
            bias_source.try_emplace(slot.name, src.name);
            deck.bias_values[std::string(to_string(slot.ptype))] = slot.range;
            add_card(std::move(src));
        }
    }
    if (t.harness == HarnessKind::Cmfb) {
        const auto slot = std::find_if(t.bias_slots.begin(), t.bias_slots.end(), [](const BiasSlot& s) { return s.name == "cmfb"; });
        const std::string& driven = !reference.empty() ? reference : probe;
        if (!driven.empty() && slot != t.bias_slots.end()) {
            Device src;
            src.name = reference.empty() ? "Vtb_cmact" : "Vtb_cmref";
            src.kind = DeviceKind::VoltageSource;
            src.terminals = {driven, vss};
            src.params["DC"] = slot->range;
            bias_source.try_emplace("cmfb", src.name);
            add_card(std::move(src));
        }
    }
    for (const auto& line : t.stimulus) add_card(parse_card(expand(line, resolve)));

    for (const auto& d : deck.testbench) {
        for (const auto& net : d.terminals) {
            if (const auto* p = deck.dut.port_on_net(net)) {
                auto& bound = deck.bindings[p->name];
                if (std::find(bound.begin(), bound.end(), d.name) == bound.end()) bound.push_back(d.name);
            }
        }
    }
    for (const auto& p : deck.dut.ports) {
        if (!deck.bindings.count(p.name))
            throw Error(ErrorCode::UnboundPort, "port '" + p.name + "' (" + std::string(to_string(p.ptype)) +
                                                    ") is not wired by template " + t.id);
    }

    deck.analyses = t.analyses;
    for (const auto& m : t.measurements) {
        MeasureDirective d = m;
        d.expression = expand(m.expression, resolve);
        deck.directives.push_back(std::move(d));
    }
    return deck;
}

namespace {

Netlist combined_netlist(const Deck& deck) {
    Netlist n = deck.dut;
    for (const auto& d : deck.testbench) n.devices.push_back(d);
    n.metadata["deck.template"] = deck.template_id;
    n.metadata["deck.class"] = std::string(to_string(deck.circuit_class));
    n.metadata["deck.polarity"] = std::to_string(deck.polarity.permutation_index);
    rebuild_nets(n);
    return n;
}

void emit_directives(std::ostringstream& os, const Deck& deck) {
    os << "* directives\n";
    for (const auto& a : deck.analyses) os << a << '\n';
    for (const auto& m : deck.directives) {
        os << "*@meas id=" << m.id << " analysis=" << m.analysis << " scale=" << format_number(m.scale);
        if (!m.condition.empty()) os << " cond=" << m.condition;
        os << " metric=" << m.metric << '\n';
        os << ".meas " << m.analysis << ' ' << m.id << ' ' << m.expression << '\n';
    }
    os << ".end\n";
}

bool is_directive(std::string_view line) {
    static const std::set<std::string, std::less<>> cards{".op", ".ac", ".dc", ".tran", ".noise", ".meas",
                                                          ".measure", ".temp", ".options", ".end"};
    if (line.rfind("*@meas", 0) == 0) return true;
    if (line.empty() || line.front() != '.') return false;
    const auto head = line.substr(0, line.find_first_of(" \t"));
    std::string lower;
    for (char c : head) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return cards.count(lower) > 0;
}

} // namespace

std::string emit_deck(const Deck& deck) {
    std::ostringstream os;
    os << emit_netlist(combined_netlist(deck));
    emit_directives(os, deck);
    return os.str();
}

std::string emit_simulation_deck(const Deck& deck, const std::map<std::string, double>& values) {
    std::ostringstream os;
    os << "* " << deck.dut.name << " / " << deck.template_id << '\n';
    std::vector<Device> devices = deck.dut.devices;
    devices.insert(devices.end(), deck.testbench.begin(), deck.testbench.end());
    std::sort(devices.begin(), devices.end(), [](const Device& a, const Device& b) { return a.name < b.name; });
    for (auto& d : devices) {
        for (auto& [key, value] : d.params) {
            if (!std::holds_alternative<Tunable>(value)) continue;
            const auto it = values.find(d.name + "." + key);
            if (it == values.end())
                throw Error(ErrorCode::PreconditionViolated, "no value for tunable " + d.name + "." + key);
            value = Fixed{it->second};
        }
        os << format_device(d) << '\n';
    }
    std::vector<Port> ports = deck.dut.ports;
    std::sort(ports.begin(), ports.end(), [](const Port& a, const Port& b) { return a.name < b.name; });
    for (const auto& p : ports) os << "*@port " << p.name << ' ' << p.net << ' ' << to_string(p.ptype) << '\n';
    emit_directives(os, deck);
    return os.str();
}

ParsedDeck parse_deck(std::string_view text) {
    ParsedDeck out;
    std::string netlist_part;
    std::vector<std::string> directive_lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const auto line = trim(text.substr(start, end - start));
        start = end + 1;
        if (is_directive(line)) directive_lines.emplace_back(line);
        else {
            netlist_part.append(line);
            netlist_part.push_back('\n');
        }
    }
    out.netlist = parse_netlist(netlist_part);

    std::optional<MeasureDirective> pending;
    for (const auto& line : directive_lines) {
        if (line.rfind("*@meas", 0) == 0) {
            MeasureDirective m;
            const auto metric_pos = line.find(" metric=");
            if (metric_pos == std::string::npos) throw Error(ErrorCode::SyntaxError, "*@meas without metric: " + line);
            m.metric = line.substr(metric_pos + 8);
            for (const auto& tok : split_ws(std::string_view(line).substr(6, metric_pos - 6))) {
                const auto eq = tok.find('=');
                if (eq == std::string::npos) throw Error(ErrorCode::SyntaxError, "bad *@meas field '" + tok + "'");
                const auto key = tok.substr(0, eq);
                const auto value = tok.substr(eq + 1);
                if (key == "id") m.id = value;
                else if (key == "analysis") m.analysis = value;
                else if (key == "cond") m.condition = value;
                else if (key == "scale") {
                    auto v = parse_si_value(value);
                    if (!v) throw Error(ErrorCode::SyntaxError, "bad scale '" + value + "'");
                    m.scale = *v;
                } else throw Error(ErrorCode::SyntaxError, "unknown *@meas field '" + key + "'");
            }
            pending = m;
            continue;
        }
        const auto head = split_ws(line);
        std::string lower = head.front();
        for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (lower == ".meas" || lower == ".measure") {
            if (!pending) throw Error(ErrorCode::SyntaxError, ".meas without *@meas header: " + line);
            if (head.size() < 4 || head[1] != pending->analysis || head[2] != pending->id)
                throw Error(ErrorCode::SyntaxError, ".meas does not match its header: " + line);
            const auto pos = line.find(head[2], line.find(head[1]) + head[1].size()) + head[2].size();
            pending->expression = std::string(trim(std::string_view(line).substr(pos)));
            out.directives.push_back(*pending);
            pending.reset();
        } else if (lower != ".end") {
            out.analyses.push_back(line);
        }
    }
    if (pending) throw Error(ErrorCode::SyntaxError, "*@meas header without .meas line");
    return out;
}

} // namespace amsq
