#include "amsq/spec_table.hpp"

#include <cctype>
#include <cmath>

#include <nlohmann/json.hpp>

#include "amsq/error.hpp"

namespace amsq {

std::string_view to_string(CircuitClass c) {
    switch (c) {
    case CircuitClass::SingleEndedOpAmp: return "SingleEndedOpAmp";
    case CircuitClass::FullyDiffOpAmp: return "FullyDiffOpAmp";
    case CircuitClass::Comparator: return "Comparator";
    case CircuitClass::LDO: return "LDO";
    }
    return "?";
}

const std::vector<CircuitClass>& all_circuit_classes() {
    static const std::vector<CircuitClass> all{CircuitClass::SingleEndedOpAmp, CircuitClass::FullyDiffOpAmp,
                                               CircuitClass::Comparator, CircuitClass::LDO};
    return all;
}

std::optional<CircuitClass> parse_circuit_class(std::string_view text) {
    for (auto c : all_circuit_classes()) {
        if (to_string(c) == text) return c;
    }
    return std::nullopt;
}

std::string_view to_string(Direction d) {
    switch (d) {
    case Direction::HigherBetter: return "HigherBetter";
    case Direction::LowerBetter: return "LowerBetter";
    case Direction::RangeTarget: return "RangeTarget";
    }
    return "?";
}

const MetricDef* SpecTable::find(std::string_view metric) const {
    for (const auto& m : metrics) {
        if (m.name == metric) return &m;
    }
    return nullptr;
}

std::vector<const MetricDef*> SpecTable::gating() const {
    std::vector<const MetricDef*> out;
    for (const auto& m : metrics) {
        if (m.gating) out.push_back(&m);
    }
    return out;
}

void check_metric(const MetricDef& m) {
    switch (m.direction) {
    case Direction::HigherBetter:
        if (!(m.target > m.threshold))
            throw Error(ErrorCode::DegenerateSpec, m.name + ": HigherBetter needs target > threshold");
        break;
    case Direction::LowerBetter:
        if (!(m.target < m.threshold))
            throw Error(ErrorCode::DegenerateSpec, m.name + ": LowerBetter needs target < threshold");
        break;
    case Direction::RangeTarget: {
        const auto& t = m.threshold_range;
        const auto& g = m.target_range;
        if (!(t.lower < g.lower && g.lower <= g.upper && g.upper < t.upper))
            throw Error(ErrorCode::DegenerateSpec, m.name + ": target interval must nest strictly inside threshold");
        break;
    }
    }
}

std::string spec_table_name(CircuitClass c) {
    switch (c) {
    case CircuitClass::SingleEndedOpAmp:
    case CircuitClass::FullyDiffOpAmp: return "OpAmp";
    case CircuitClass::Comparator: return "Comparator";
    case CircuitClass::LDO: return "LDO";
    }
    return "";
}

namespace {

// Threshold (score 60) and target (score 100) per metric; gating metrics
// decide identification.
constexpr const char* kDefaultTables = R"json({
  "vdd": 1.8,
  "tables": [
    {
      "name": "OpAmp",
      "metrics": [
        {"name": "Power",        "unit": "uW",    "threshold": 4.5, "target": 0.5,   "gating": false},
        {"name": "Gain",         "unit": "dB",    "threshold": 40,  "target": 80,    "gating": true},
        {"name": "GBW",          "unit": "kHz",   "threshold": 100, "target": 10000, "gating": true},
        {"name": "Phase Margin", "unit": "deg",   "threshold": 30,  "target": 45,    "gating": true},
        {"name": "Slew Rate",    "unit": "V/us",  "threshold": 0.1, "target": 8000,  "gating": false},
        {"name": "CMRR",         "unit": "dB",    "threshold": 40,  "target": 90,    "gating": false},
        {"name": "PSRR",         "unit": "dB",    "threshold": -40, "target": -60,   "gating": false},
        {"name": "Area",         "unit": "um^2",  "threshold": 8,   "target": 1,     "gating": false}
      ]
    },
    {
      "name": "Comparator",
      "metrics": [
        {"name": "Power",                     "unit": "uW",   "threshold": 100,     "target": 20,       "gating": false},
        {"name": "Output Swing Voltage",      "unit": "V",    "threshold": "VDD/2", "target": "2VDD/3", "gating": true},
        {"name": "Slew Rate",                 "unit": "V/us", "threshold": 100,     "target": 2000,     "gating": false},
        {"name": "Propagation delay",         "unit": "ns",   "threshold": 0.8,     "target": 0.2,      "gating": false},
        {"name": "Input Offset Voltage (3σ)", "unit": "mV",   "threshold": 10,      "target": 1,        "gating": false, "condition": "3sigma"},
        {"name": "Area",                      "unit": "um^2", "threshold": 4,       "target": 1,        "gating": false}
      ]
    },
    {
      "name": "LDO",
      "metrics": [
        {"name": "Power",                      "unit": "uW",   "threshold": 14.4,             "target": 10.8,             "gating": false, "condition": "98C"},
        {"name": "VO",                         "unit": "V",    "threshold": [1.5975, 1.6025], "target": [1.5985, 1.6015], "gating": true},
        {"name": "Current Capa. (1mA load)",   "unit": "mV",   "threshold": 0.9,              "target": 1,                "gating": true},
        {"name": "Current Capa. (4mA load)",   "unit": "mV",   "threshold": 3.6,              "target": 4,                "gating": true},
        {"name": "Load Regulation (1uA load)", "unit": "mV",   "threshold": 0.9,              "target": 1,                "gating": true},
        {"name": "Load Regulation (4mA load)", "unit": "mV",   "threshold": 27,               "target": 30,               "gating": true},
        {"name": "Gain",                       "unit": "dB",   "threshold": 40,               "target": 45,               "gating": false},
        {"name": "GBW",                        "unit": "kHz",  "threshold": 90,               "target": 180,              "gating": false},
        {"name": "Phase Margin",               "unit": "deg",  "threshold": 30,               "target": 45,               "gating": false},
        {"name": "CMRR",                       "unit": "dB",   "threshold": 55,               "target": 60,               "gating": false, "condition": "98C"},
        {"name": "PSRR",                       "unit": "dB",   "threshold": -36,              "target": -40,              "gating": false, "condition": "98C"},
        {"name": "Startup Time",               "unit": "us",   "threshold": 30,               "target": 20,               "gating": false},
        {"name": "Recovery Time",              "unit": "ns",   "threshold": 2000,             "target": 800,              "gating": false},
        {"name": "Area",                       "unit": "um^2", "threshold": 60,               "target": 20,               "gating": false}
      ]
    }
  ]
}
)json";

// "VDD", "VDD/2", "2VDD/3", "0.5VDD"
double supply_relative(const std::string& text, double vdd) {
    std::string compact;
    for (char c : text) {
        if (!std::isspace(static_cast<unsigned char>(c))) compact.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    const auto pos = compact.find("VDD");
    if (pos == std::string::npos) throw Error(ErrorCode::ConfigError, "cannot resolve spec value '" + text + "'");
    double coef = 1.0;
    double div = 1.0;
    try {
        if (pos > 0) coef = std::stod(compact.substr(0, pos));
        const auto rest = compact.substr(pos + 3);
        if (!rest.empty()) {
            if (rest.front() != '/') throw Error(ErrorCode::ConfigError, "cannot resolve spec value '" + text + "'");
            div = std::stod(rest.substr(1));
        }
    } catch (const std::logic_error&) {
        throw Error(ErrorCode::ConfigError, "cannot resolve spec value '" + text + "'");
    }
    if (div == 0.0) throw Error(ErrorCode::ConfigError, "division by zero in '" + text + "'");
    return coef * vdd / div;
}

MetricDef metric_from_json(const nlohmann::json& j, double vdd) {
    MetricDef m;
    m.name = j.at("name").get<std::string>();
    m.unit = j.value("unit", std::string{});
    m.gating = j.value("gating", false);
    m.condition = j.value("condition", std::string{});
    const auto& th = j.at("threshold");
    const auto& tg = j.at("target");
    if (th.is_array() != tg.is_array())
        throw Error(ErrorCode::ConfigError, m.name + ": threshold and target must both be intervals or scalars");
    if (th.is_array()) {
        if (th.size() != 2 || tg.size() != 2) throw Error(ErrorCode::ConfigError, m.name + ": intervals need two values");
        m.direction = Direction::RangeTarget;
        m.threshold_range = {th[0].get<double>(), th[1].get<double>()};
        m.target_range = {tg[0].get<double>(), tg[1].get<double>()};
    } else {
        auto scalar = [&](const nlohmann::json& v, std::string& text) {
            if (v.is_string()) {
                text = v.get<std::string>();
                return supply_relative(text, vdd);
            }
            return v.get<double>();
        };
        m.threshold = scalar(th, m.threshold_text);
        m.target = scalar(tg, m.target_text);
        if (j.contains("direction")) {
            const auto d = j.at("direction").get<std::string>();
            if (d == "HigherBetter") m.direction = Direction::HigherBetter;
            else if (d == "LowerBetter") m.direction = Direction::LowerBetter;
            else throw Error(ErrorCode::ConfigError, m.name + ": unknown direction '" + d + "'");
        } else {
            if (m.target == m.threshold) throw Error(ErrorCode::DegenerateSpec, m.name + ": threshold equals target");
            m.direction = m.target > m.threshold ? Direction::HigherBetter : Direction::LowerBetter;
        }
    }
    check_metric(m);
    return m;
}

nlohmann::json metric_to_json(const MetricDef& m) {
    nlohmann::json j;
    j["name"] = m.name;
    j["unit"] = m.unit;
    if (m.direction == Direction::RangeTarget) {
        j["threshold"] = {m.threshold_range.lower, m.threshold_range.upper};
        j["target"] = {m.target_range.lower, m.target_range.upper};
    } else {
        j["threshold"] = m.threshold_text.empty() ? nlohmann::json(m.threshold) : nlohmann::json(m.threshold_text);
        j["target"] = m.target_text.empty() ? nlohmann::json(m.target) : nlohmann::json(m.target_text);
        j["direction"] = std::string(to_string(m.direction));
    }
    j["gating"] = m.gating;
    if (!m.condition.empty()) j["condition"] = m.condition;
    return j;
}

} // namespace

std::vector<SpecTable> load_spec_tables(const nlohmann::json& config) {
    if (!config.is_object() || !config.contains("tables"))
        throw Error(ErrorCode::ConfigError, "spec table config needs a 'tables' array");
    const double vdd = config.value("vdd", kDefaultVdd);
    std::vector<SpecTable> out;
    try {
        for (const auto& t : config.at("tables")) {
            SpecTable table;
            table.name = t.at("name").get<std::string>();
            table.vdd = vdd;
            for (const auto& m : t.at("metrics")) table.metrics.push_back(metric_from_json(m, vdd));
            out.push_back(std::move(table));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("spec table config: ") + e.what());
    }
    return out;
}

nlohmann::json spec_tables_to_json(const std::vector<SpecTable>& tables) {
    nlohmann::json j;
    j["vdd"] = tables.empty() ? kDefaultVdd : tables.front().vdd;
    j["tables"] = nlohmann::json::array();
    for (const auto& t : tables) {
        nlohmann::json jt;
        jt["name"] = t.name;
        jt["metrics"] = nlohmann::json::array();
        for (const auto& m : t.metrics) jt["metrics"].push_back(metric_to_json(m));
        j["tables"].push_back(jt);
    }
    return j;
}

std::string default_spec_tables_json() { return kDefaultTables; }

SpecTable default_spec_table(CircuitClass c) {
    static const std::vector<SpecTable> tables = load_spec_tables(nlohmann::json::parse(kDefaultTables));
    const auto name = spec_table_name(c);
    for (const auto& t : tables) {
        if (t.name == name) return t;
    }
    throw Error(ErrorCode::ConfigError, "no spec table for " + name);
}

} // namespace amsq
