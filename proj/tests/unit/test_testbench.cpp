#include <gtest/gtest.h>

#include <algorithm>

#include "amsq/error.hpp"
#include "amsq/testbench.hpp"
#include "support.hpp"

using namespace amsq;
using amsq::testing::data_path;
using amsq::testing::read_file;

namespace {

Netlist annotated(const std::string& name) { return heuristic_annotate(parse_netlist(read_file(data_path(name)))); }

const TestbenchTemplate& by_class(const std::vector<TestbenchTemplate>& lib, CircuitClass c) {
    return *std::find_if(lib.begin(), lib.end(), [&](const TestbenchTemplate& t) { return t.circuit_class == c; });
}

std::vector<SpecTable> tables() {
    std::vector<SpecTable> out;
    for (auto c : {CircuitClass::SingleEndedOpAmp, CircuitClass::Comparator, CircuitClass::LDO}) out.push_back(default_spec_table(c));
    return out;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error";
    return ErrorCode::IoError;
}

const std::string kMinimal = "template T\nclass Comparator\nspec Comparator\nrequire InputPlus InputMinus Output Vdd Vss\n";

std::string with_all_meas(const std::string& head) {
    std::string s = head;
    for (const auto& m : default_spec_table(CircuitClass::Comparator).metrics) s += "meas \"" + m.name + "\" op : v(x)\n";
    return s;
}

} // namespace

TEST(Templates, FilesMatchBuiltIns) {
    const std::map<CircuitClass, std::string> files{{CircuitClass::SingleEndedOpAmp, "single_ended_opamp.tb"},
                                                    {CircuitClass::FullyDiffOpAmp, "fully_diff_opamp.tb"},
                                                    {CircuitClass::Comparator, "comparator.tb"},
                                                    {CircuitClass::LDO, "ldo.tb"}};
    ASSERT_EQ(builtin_template_sources().size(), 4u);
    for (const auto& [c, file] : files)
        EXPECT_EQ(builtin_template_sources().at(c), read_file(std::string(AMSQ_SOURCE_DIR) + "/data/templates/" + file));
    const auto from_dir = load_template_library(std::string(AMSQ_SOURCE_DIR) + "/data/templates", tables());
    ASSERT_EQ(from_dir.size(), 4u);
    const auto builtin = default_template_library();
    for (const auto& t : from_dir) {
        const auto& b = by_class(builtin, t.circuit_class);
        EXPECT_EQ(t.id, b.id);
        EXPECT_EQ(t.measurements, b.measurements);
        EXPECT_EQ(t.required_ports, b.required_ports);
    }
}

TEST(Templates, LibraryShape) {
    const auto lib = default_template_library();
    ASSERT_EQ(lib.size(), 4u);
    const auto& fd = by_class(lib, CircuitClass::FullyDiffOpAmp);
    EXPECT_EQ(fd.harness, HarnessKind::Cmfb);
    EXPECT_EQ(fd.specs.name, "OpAmp");
    EXPECT_EQ(by_class(lib, CircuitClass::LDO).harness, HarnessKind::Iprobe);
    EXPECT_EQ(by_class(lib, CircuitClass::SingleEndedOpAmp).harness, HarnessKind::None);
    for (const auto& t : lib) {
        for (const auto& m : t.metrics)
            EXPECT_TRUE(std::any_of(t.measurements.begin(), t.measurements.end(),
                                    [&](const MeasureDirective& d) { return d.metric == m.name; }))
                << t.id << " " << m.name;
    }
}

TEST(Templates, GrammarErrors) {
    const auto tabs = tables();
    auto err = [&](const std::string& text) { return code_of([&] { parse_template(text, tabs); }); };
    EXPECT_NO_THROW(parse_template(with_all_meas(kMinimal), tabs));
    EXPECT_EQ(err(kMinimal), ErrorCode::InvalidTemplate); // metrics without measurements
    EXPECT_EQ(err(with_all_meas(kMinimal + "frobnicate 1\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas("template T\nclass Comparator\nspec Nope\nrequire Vdd Vss\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas("template T\nclass Mixer\nspec Comparator\nrequire Vdd Vss\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas("template T\nclass Comparator\nspec Comparator\nrequire Vdd Vdd Vss\n")),
              ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas("class Comparator\nspec Comparator\nrequire Vdd Vss\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas(kMinimal + "card V1 {PORT:Sideways} 0 DC=1\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas(kMinimal + "card V1 {CONST:NOPE} 0 DC=1\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas(kMinimal + "card V1 {BIAS:nope} 0 DC=1\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas(kMinimal + "bias b Bias 2 1\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas(kMinimal + "harness cmfb\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas(kMinimal + "analysis op\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas(kMinimal + "meas \"Bogus\" op : v(x)\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas(kMinimal + "meas \"Power\" op v(x)\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(err(with_all_meas(kMinimal + "meas \"Power\" op scale=0 : v(x)\n")), ErrorCode::InvalidTemplate);
    EXPECT_EQ(code_of([] { load_template_library("/nonexistent/templates", tables()); }), ErrorCode::ConfigError);
}

TEST(Templates, SelectionByPortMultiset) {
    const auto lib = default_template_library();
    auto ids = [&](const Netlist& n) {
        std::set<CircuitClass> out;
        for (const auto& t : select_templates(n, lib)) out.insert(t.circuit_class);
        return out;
    };
    auto se = annotated("corpus/ota5t.sp");
    se = apply_polarity(se, enumerate_polarities(se).front());
    EXPECT_EQ(ids(se), (std::set<CircuitClass>{CircuitClass::SingleEndedOpAmp, CircuitClass::Comparator}));
    auto fd = annotated("corpus/fd_telescopic.sp");
    fd = apply_polarity(fd, enumerate_polarities(fd).front());
    EXPECT_EQ(ids(fd), (std::set<CircuitClass>{CircuitClass::FullyDiffOpAmp}));
    EXPECT_EQ(ids(annotated("corpus/ldo_pmos.sp")), (std::set<CircuitClass>{CircuitClass::LDO}));
}

TEST(Instantiate, BindsEveryPort) {
    const auto n = annotated("corpus/ota5t.sp");
    const auto pol = enumerate_polarities(n).front();
    const auto deck = instantiate(n, by_class(default_template_library(), CircuitClass::SingleEndedOpAmp), pol);
    EXPECT_EQ(deck.dut.find_port("inn")->ptype, PortType::InputPlus);
    for (const auto& p : deck.dut.ports) EXPECT_TRUE(deck.bindings.count(p.name)) << p.name;
    const auto ac = std::find_if(deck.testbench.begin(), deck.testbench.end(), [](const Device& d) { return d.name == "Vtb_ac"; });
    ASSERT_NE(ac, deck.testbench.end());
    EXPECT_EQ(ac->terminals, (std::vector<std::string>{"inn", "inp"}));
    EXPECT_EQ(deck.bias_values.at("Bias"), (Tunable{0.2, 1.2}));
    EXPECT_TRUE(deck.tunables().count("Vtb_vbias_vbias.DC"));
    EXPECT_TRUE(deck.tunables().count("M1.W"));
    EXPECT_EQ(deck.directives.size(), 8u);
    for (const auto& d : deck.directives) EXPECT_EQ(d.expression.find('{'), std::string::npos) << d.expression;
}

TEST(Instantiate, DefaultMosGeometry) {
    const auto n = annotated("extra/ota_anon.sp");
    auto bare = n;
    bare.devices[0].params.clear();
    const auto deck = instantiate(bare, by_class(default_template_library(), CircuitClass::SingleEndedOpAmp),
                                  enumerate_polarities(bare).front());
    EXPECT_EQ(deck.tunables().at("M1.W"), kDefaultMosWidth);
    EXPECT_EQ(deck.tunables().at("M1.L"), kDefaultMosLength);
}

TEST(Instantiate, UnboundPorts) {
    const auto lib = default_template_library();
    const auto& se = by_class(lib, CircuitClass::SingleEndedOpAmp);
    const auto n = annotated("corpus/ota5t.sp");
    EXPECT_EQ(code_of([&] { instantiate(n, se, PolarityAssignment{}); }), ErrorCode::UnboundPort);
    auto extra = n;
    extra.ports.push_back({"en", "x", PortType::Enable});
    EXPECT_EQ(code_of([&] { instantiate(extra, se, enumerate_polarities(n).front()); }), ErrorCode::UnboundPort);
    auto unknown = parse_netlist(read_file(data_path("corpus/ota5t.sp")));
    EXPECT_EQ(code_of([&] { instantiate(unknown, se, PolarityAssignment{}); }), ErrorCode::PreconditionViolated);
}

TEST(Instantiate, HarnessNeedsModification) {
    const auto lib = default_template_library();
    const auto fd = annotated("corpus/fd_telescopic.sp");
    const auto pol = enumerate_polarities(fd).front();
    const auto& fdt = by_class(lib, CircuitClass::FullyDiffOpAmp);
    EXPECT_EQ(code_of([&] { instantiate(fd, fdt, pol); }), ErrorCode::MissingHarness);
    const auto m = apply_cmfb(apply_polarity(fd, pol));
    const auto deck = instantiate(m.netlist, fdt, pol, &m.modification);
    EXPECT_EQ(deck.modification.kind, ModificationKind::CmfbInjection);
    EXPECT_TRUE(std::any_of(deck.testbench.begin(), deck.testbench.end(), [](const Device& d) {
        return d.name == "Vtb_cmref" && d.terminals[0] == "cmfb_ref";
    }));
    EXPECT_EQ(deck.tunables().at("Vtb_cmref.DC"), (Tunable{0.3, 1.5}));

    const auto ldo = annotated("corpus/ldo_pmos.sp");
    const auto& ldot = by_class(lib, CircuitClass::LDO);
    EXPECT_EQ(code_of([&] { instantiate(ldo, ldot, PolarityAssignment{}); }), ErrorCode::MissingHarness);
    EXPECT_EQ(code_of([&] { instantiate(ldo, ldot, PolarityAssignment{}, &m.modification); }), ErrorCode::MissingHarness);
    const auto sev = apply_ldo_sever(ldo);
    const auto ldeck = instantiate(sev.netlist, ldot, PolarityAssignment{}, &sev.modification);
    const bool probed = std::any_of(ldeck.directives.begin(), ldeck.directives.end(),
                                    [](const MeasureDirective& d) { return d.expression.find("VPROBE") != std::string::npos; });
    EXPECT_TRUE(probed);
}

TEST(Deck, EmitParsesBack) {
    const auto n = annotated("corpus/fd_telescopic.sp");
    const auto pol = enumerate_polarities(n).at(2);
    const auto m = apply_cmfb(apply_polarity(n, pol));
    const auto deck = instantiate(m.netlist, by_class(default_template_library(), CircuitClass::FullyDiffOpAmp), pol, &m.modification);
    const auto text = emit_deck(deck);
    EXPECT_EQ(emit_deck(deck), text);
    const auto parsed = parse_deck(text);
    EXPECT_EQ(parsed.analyses, deck.analyses);
    EXPECT_EQ(parsed.directives, deck.directives);
    EXPECT_EQ(parsed.netlist.devices.size(), deck.dut.devices.size() + deck.testbench.size());
    EXPECT_EQ(parsed.netlist.metadata.at("deck.polarity"), "2");
    EXPECT_EQ(parsed.netlist.ports, [&] {
        auto p = deck.dut.ports;
        std::sort(p.begin(), p.end(), [](const Port& a, const Port& b) { return a.name < b.name; });
        return p;
    }());
}

TEST(Deck, SimulationDeckNeedsEveryValue) {
    const auto n = annotated("corpus/ota5t.sp");
    const auto deck = instantiate(n, by_class(default_template_library(), CircuitClass::SingleEndedOpAmp),
                                  enumerate_polarities(n).front());
    std::map<std::string, double> values;
    for (const auto& [key, range] : deck.tunables()) values[key] = range.lower;
    const auto text = emit_simulation_deck(deck, values);
    EXPECT_EQ(text.find("tune("), std::string::npos);
    EXPECT_NE(text.find("*@port inp inp"), std::string::npos);
    EXPECT_NE(text.find(".meas"), std::string::npos);
    values.erase(values.begin());
    EXPECT_EQ(code_of([&] { emit_simulation_deck(deck, values); }), ErrorCode::PreconditionViolated);
}

TEST(Deck, ParseDeckRejectsOrphans) {
    EXPECT_THROW(parse_deck("R1 a b 1k\n.meas ac gain find v(a) at=1\n"), Error);
    EXPECT_THROW(parse_deck("R1 a b 1k\n*@meas id=gain analysis=ac scale=1 metric=Gain\n"), Error);
    EXPECT_THROW(parse_deck("R1 a b 1k\n*@meas id=gain analysis=ac scale=1 metric=Gain\n.meas ac other v(a)\n"), Error);
}
