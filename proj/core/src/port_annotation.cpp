#include "amsq/port_annotation.hpp"

#include <algorithm>
#include <cctype>
#include <future>
#include <regex>
#include <set>

#include <nlohmann/json.hpp>

#include "amsq/error.hpp"
#include "httplib.h"

namespace amsq {

namespace {

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

struct NameRule {
    std::regex pattern;
    PortType type;
};

const std::vector<NameRule>& name_rules() {
    static const std::vector<NameRule> rules = [] {
        const auto flags = std::regex::ECMAScript | std::regex::icase;
        return std::vector<NameRule>{
            {std::regex("vdd|vcc", flags), PortType::Vdd},
            {std::regex("gnd|vss|^0$", flags), PortType::Vss},
            {std::regex("bias|^vb", flags), PortType::Bias},
            {std::regex("^v?in|[^a-z]in", flags), PortType::InputSingle},
            {std::regex("out", flags), PortType::Output},
            {std::regex("fb", flags), PortType::Feedback},
            {std::regex("^en|[^a-z]en($|[^a-z])|enable", flags), PortType::Enable},
        };
    }();
    return rules;
}

bool is_output(PortType t) {
    return t == PortType::Output || t == PortType::OutputPlus || t == PortType::OutputMinus;
}

PortType checked_label(const std::string& port, const std::string& raw) {
    auto parsed = parse_port_type(raw);
    if (!parsed || *parsed == PortType::Unknown)
        throw Error(ErrorCode::AnnotatorInvalidLabel, "port '" + port + "' got label '" + raw + "'");
    return *parsed;
}

} // namespace

Netlist heuristic_annotate(const Netlist& netlist) {
    Netlist out = netlist;
    std::set<std::string> unresolved;

    for (auto& port : out.ports) {
        if (port.ptype != PortType::Unknown) continue;
        const auto name = lowercase(port.name);
        for (const auto& rule : name_rules()) {
            if (std::regex_search(name, rule.pattern)) {
                port.ptype = rule.type;
                break;
            }
        }
        if (port.ptype == PortType::Unknown) unresolved.insert(port.name);
    }
    if (unresolved.empty()) return out;

    // Connectivity tie-breaks.
    std::set<std::string> nmos_bulks, pmos_bulks;
    for (const auto& d : out.devices) {
        if (d.kind == DeviceKind::NMOS) nmos_bulks.insert(d.terminals[kBulk]);
        if (d.kind == DeviceKind::PMOS) pmos_bulks.insert(d.terminals[kBulk]);
    }
    std::set<std::string> diff_gates;
    const auto sig = connectivity_signature(out);
    for (const auto* motif : sig.of_kind(MotifKind::DiffPair)) {
        for (const auto& name : motif->devices) diff_gates.insert(out.find_device(name)->terminals[kGate]);
    }
    for (auto& port : out.ports) {
        if (!unresolved.count(port.name)) continue;
        if (nmos_bulks.size() == 1 && *nmos_bulks.begin() == port.net) port.ptype = PortType::Vss;
        else if (pmos_bulks.size() == 1 && *pmos_bulks.begin() == port.net) port.ptype = PortType::Vdd;
        else if (diff_gates.count(port.net)) port.ptype = PortType::InputSingle;
        if (port.ptype != PortType::Unknown) unresolved.erase(port.name);
    }

    const bool has_output = std::any_of(out.ports.begin(), out.ports.end(), [](const Port& p) { return is_output(p.ptype); });
    if (!has_output && !unresolved.empty()) {
        std::map<std::string, int> non_gate;
        int best = 0;
        for (const auto& port : out.ports) {
            if (!unresolved.count(port.name)) continue;
            int count = 0;
            for (const auto& d : out.devices) {
                for (std::size_t t = 0; t < d.terminals.size(); ++t) {
                    if (d.terminals[t] != port.net) continue;
                    if (is_mos(d.kind) && t == kGate) continue;
                    ++count;
                }
            }
            non_gate[port.name] = count;
            best = std::max(best, count);
        }
        if (best > 0) {
            for (auto& port : out.ports) {
                if (unresolved.count(port.name) && non_gate[port.name] == best) {
                    port.ptype = PortType::Output;
                    unresolved.erase(port.name);
                }
            }
        }
    }
    for (auto& port : out.ports) {
        if (port.ptype == PortType::Unknown) port.ptype = PortType::Bias;
    }
    return out;
}

AnnotationResponse HeuristicAnnotator::annotate(const AnnotationRequest& request) {
    const Netlist resolved = heuristic_annotate(request.netlist);
    AnnotationResponse response;
    if (request.strategy == AnnotationStrategy::GlobalSinglePass) {
        for (const auto& p : request.netlist.ports) {
            if (p.ptype == PortType::Unknown)
                response.labels[p.name] = std::string(to_string(resolved.find_port(p.name)->ptype));
        }
        return response;
    }
    const Port* port = resolved.find_port(request.port_name);
    if (!port) throw Error(ErrorCode::PreconditionViolated, "no port '" + request.port_name + "'");
    response.port = port->name;
    response.label = std::string(to_string(port->ptype));
    response.confidence = 0.5;
    return response;
}

HttpAnnotatorClient::HttpAnnotatorClient(Options options) : options_(std::move(options)) {}

AnnotationResponse HttpAnnotatorClient::annotate(const AnnotationRequest& request) {
    nlohmann::json body;
    body["netlist"] = emit_netlist(request.netlist);
    body["port"] = request.port_name;
    nlohmann::json vocab = nlohmann::json::array();
    for (auto t : port_type_vocabulary()) vocab.push_back(std::string(to_string(t)));
    body["vocabulary"] = vocab;
    const std::string payload = body.dump();

    httplib::Client client(options_.url);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    std::string last_error = "no attempt";
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
        auto result = client.Post("/annotate", payload, "application/json");
        if (!result) {
            last_error = httplib::to_string(result.error());
            continue;
        }
        if (result->status != 200) {
            last_error = "HTTP " + std::to_string(result->status);
            continue;
        }
        nlohmann::json reply = nlohmann::json::parse(result->body, nullptr, false);
        if (reply.is_discarded() || !reply.is_object()) {
            last_error = "malformed JSON response";
            continue;
        }
        AnnotationResponse response;
        response.port = reply.value("port", std::string{});
        response.label = reply.value("label", std::string{});
        if (auto it = reply.find("confidence"); it != reply.end() && it->is_number()) response.confidence = it->get<double>();
        if (auto it = reply.find("labels"); it != reply.end() && it->is_object()) {
            for (const auto& [k, v] : it->items()) {
                if (v.is_string()) response.labels[k] = v.get<std::string>();
            }
        }
        return response;
    }
    throw Error(ErrorCode::AnnotatorUnavailable, options_.url + ": " + last_error);
}

Netlist annotate_ports(const Netlist& netlist, AnnotatorClient& client, AnnotationStrategy strategy, int workers) {
    std::vector<std::string> unknown;
    for (const auto& p : netlist.ports) {
        if (p.ptype == PortType::Unknown) unknown.push_back(p.name);
    }
    Netlist out = netlist;
    if (unknown.empty()) return out;

    std::map<std::string, PortType> labels;
    if (strategy == AnnotationStrategy::GlobalSinglePass) {
        AnnotationResponse response = client.annotate({netlist, "", strategy});
        for (const auto& name : unknown) {
            auto it = response.labels.find(name);
            if (it == response.labels.end())
                throw Error(ErrorCode::AnnotatorInvalidLabel, "port '" + name + "' missing from global response");
            labels[name] = checked_label(name, it->second);
        }
    } else {
        auto ask = [&](const std::string& name) {
            AnnotationResponse response = client.annotate({netlist, name, strategy});
            if (response.port != name)
                throw Error(ErrorCode::AnnotatorInvalidLabel,
                            "asked for port '" + name + "', response keyed '" + response.port + "'");
            return checked_label(name, response.label);
        };
        if (workers <= 1) {
            for (const auto& name : unknown) labels[name] = ask(name);
        } else {
            // Responses are keyed by port, so completion order does not matter.
            for (std::size_t start = 0; start < unknown.size(); start += static_cast<std::size_t>(workers)) {
                const auto end = std::min(unknown.size(), start + static_cast<std::size_t>(workers));
                std::vector<std::future<PortType>> futures;
                for (auto i = start; i < end; ++i) futures.push_back(std::async(std::launch::async, ask, unknown[i]));
                for (auto i = start; i < end; ++i) labels[unknown[i]] = futures[i - start].get();
            }
        }
    }
    for (auto& p : out.ports) {
        if (auto it = labels.find(p.name); it != labels.end()) p.ptype = it->second;
    }
    return out;
}

std::vector<PolarityAssignment> enumerate_polarities(const Netlist& netlist) {
    auto is_input = [](PortType t) {
        return t == PortType::InputSingle || t == PortType::InputPlus || t == PortType::InputMinus;
    };

    for (std::size_t i = 0; i < netlist.devices.size(); ++i) {
        const auto& a = netlist.devices[i];
        if (!is_mos(a.kind)) continue;
        for (std::size_t j = i + 1; j < netlist.devices.size(); ++j) {
            const auto& b = netlist.devices[j];
            if (b.kind != a.kind || a.terminals[kSource] != b.terminals[kSource]) continue;
            if (a.terminals[kGate] != b.terminals[kGate]) continue;
            const Port* p = netlist.port_on_net(a.terminals[kGate]);
            if (p && is_input(p->ptype))
                throw Error(ErrorCode::DegenerateDiffPair,
                            a.name + " and " + b.name + " share gate net '" + a.terminals[kGate] + "'");
        }
    }

    // Structural input pair: a diff-pair motif with both gates on InputSingle ports.
    std::vector<std::string> input_pair;
    const auto sig = connectivity_signature(netlist);
    for (const auto* motif : sig.of_kind(MotifKind::DiffPair)) {
        const Port* pa = netlist.port_on_net(netlist.find_device(motif->devices[0])->terminals[kGate]);
        const Port* pb = netlist.port_on_net(netlist.find_device(motif->devices[1])->terminals[kGate]);
        if (pa && pb && pa->ptype == PortType::InputSingle && pb->ptype == PortType::InputSingle) {
            input_pair = {pa->name, pb->name};
            std::sort(input_pair.begin(), input_pair.end());
            break;
        }
    }
    std::vector<std::string> output_pair;
    if (auto outs = netlist.ports_of_type(PortType::Output); outs.size() == 2) {
        output_pair = {outs[0]->name, outs[1]->name};
        std::sort(output_pair.begin(), output_pair.end());
    }

    struct Choice {
        const std::vector<std::string>* ports;
        PortType plus;
        PortType minus;
    };
    std::vector<Choice> choices;
    if (!input_pair.empty()) choices.push_back({&input_pair, PortType::InputPlus, PortType::InputMinus});
    if (!output_pair.empty()) choices.push_back({&output_pair, PortType::OutputPlus, PortType::OutputMinus});

    std::vector<PolarityAssignment> out;
    const int count = 1 << choices.size();
    for (int index = 0; index < count; ++index) {
        PolarityAssignment pa;
        pa.permutation_index = index;
        for (std::size_t c = 0; c < choices.size(); ++c) {
            const bool swapped = ((index >> c) & 1) != 0;
            const auto& ports = *choices[c].ports;
            pa.mapping[ports[0]] = swapped ? choices[c].minus : choices[c].plus;
            pa.mapping[ports[1]] = swapped ? choices[c].plus : choices[c].minus;
        }
        out.push_back(std::move(pa));
    }
    return out;
}

Netlist apply_polarity(const Netlist& netlist, const PolarityAssignment& assignment) {
    Netlist out = netlist;
    for (const auto& [name, type] : assignment.mapping) {
        auto it = std::find_if(out.ports.begin(), out.ports.end(), [&](const Port& p) { return p.name == name; });
        if (it == out.ports.end())
            throw Error(ErrorCode::PreconditionViolated, "polarity assignment names unknown port '" + name + "'");
        it->ptype = type;
    }
    return out;
}

} // namespace amsq
