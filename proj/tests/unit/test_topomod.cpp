#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "amsq/error.hpp"
#include "amsq/port_annotation.hpp"
#include "amsq/topomod.hpp"
#include "support.hpp"

using namespace amsq;
using amsq::testing::data_path;
using amsq::testing::read_file;

namespace {

Netlist annotated(const std::string& name, int permutation = 0) {
    const auto n = heuristic_annotate(parse_netlist(read_file(data_path(name))));
    return apply_polarity(n, enumerate_polarities(n).at(static_cast<std::size_t>(permutation)));
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

// Removes added devices and undoes gate rewires; must give back the original.
Netlist undo(const ModifiedNetlist& m) {
    Netlist n = m.netlist;
    std::erase_if(n.devices, [&](const Device& d) {
        return std::any_of(m.modification.added_devices.begin(), m.modification.added_devices.end(),
                           [&](const Device& a) { return a.name == d.name; });
    });
    for (auto& d : n.devices) {
        if (m.modification.rewired_bias && d.terminals[kGate] == "cmfb_ctl") d.terminals[kGate] = *m.modification.rewired_bias;
        if (m.modification.severed && d.name == m.modification.severed->device)
            d.terminals[m.modification.severed->terminal] = m.modification.severed->net;
    }
    n.metadata.erase(std::string(kTopomodKey));
    for (auto it = n.metadata.begin(); it != n.metadata.end();) {
        it = it->first.rfind("topomod.", 0) == 0 ? n.metadata.erase(it) : std::next(it);
    }
    rebuild_nets(n);
    return n;
}

} // namespace

TEST(Cmfb, ClassifiesOutputStage) {
    EXPECT_EQ(classify_output_stage(annotated("corpus/fd_telescopic.sp")), OutputStage::HighImpedance);
    EXPECT_EQ(classify_output_stage(annotated("extra/fd_resistive.sp")), OutputStage::ResistiveOrDivider);
    EXPECT_EQ(code_of([] { classify_output_stage(annotated("corpus/ota5t.sp")); }), ErrorCode::NotFullyDifferential);
}

TEST(Cmfb, InjectsSenseAndControl) {
    const auto base = annotated("corpus/fd_telescopic.sp");
    const auto m = apply_cmfb(base);
    EXPECT_EQ(m.modification.kind, ModificationKind::CmfbInjection);
    EXPECT_EQ(m.modification.rewired_bias, "vbp");
    EXPECT_EQ(m.modification.reference_net, "cmfb_ref");
    ASSERT_EQ(m.modification.added_devices.size(), 3u);
    const auto* e = m.netlist.find_device("ECMFB");
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->kind, DeviceKind::Vcvs);
    EXPECT_EQ(e->terminals, (std::vector<std::string>{"cmfb_ctl", "vbp", "cmfb_cm", "cmfb_ref"}));
    EXPECT_EQ(m.netlist.find_device("RCMFB_P")->terminals, (std::vector<std::string>{"voutn", "cmfb_cm"}));
    EXPECT_EQ(m.netlist.find_device("M3")->terminals[kGate], "cmfb_ctl");
    EXPECT_EQ(m.netlist.find_device("M4")->terminals[kGate], "cmfb_ctl");
    EXPECT_EQ(m.netlist.find_device("M5")->terminals[kGate], "vbn");
    EXPECT_EQ(m.netlist.metadata.at(std::string(kTopomodKey)), "CmfbInjection");
    EXPECT_EQ(m.netlist.ports, base.ports);
    validate(m.netlist);
    EXPECT_TRUE(isomorphic(undo(m), base));
}

TEST(Cmfb, ResistiveLoadsUnchanged) {
    const auto base = annotated("extra/fd_resistive.sp");
    const auto m = apply_cmfb(base);
    EXPECT_EQ(m.modification.kind, ModificationKind::None);
    EXPECT_TRUE(m.modification.added_devices.empty());
    EXPECT_TRUE(isomorphic(m.netlist, base));
}

TEST(Cmfb, NoBiasPortActuatesLoadGate) {
    const auto base = annotated("extra/fd_nobias.sp");
    const auto m = apply_cmfb(base);
    EXPECT_EQ(m.modification.kind, ModificationKind::CmfbHarnessActuation);
    EXPECT_EQ(m.modification.probe_net, "g");
    EXPECT_TRUE(m.modification.added_devices.empty());
    EXPECT_EQ(m.netlist.devices, base.devices);
}

TEST(Cmfb, RejectsRepeatAndSingleEnded) {
    const auto m = apply_cmfb(annotated("corpus/fd_telescopic.sp"));
    EXPECT_EQ(code_of([&] { apply_cmfb(m.netlist); }), ErrorCode::AlreadyModified);
    EXPECT_EQ(code_of([] { apply_cmfb(annotated("corpus/ota5t.sp")); }), ErrorCode::NotFullyDifferential);
    auto stripped = m.netlist;
    stripped.metadata.erase(std::string(kTopomodKey));
    EXPECT_EQ(code_of([&] { apply_cmfb(stripped); }), ErrorCode::AlreadyModified);
}

TEST(LdoSever, InsertsProbe) {
    const auto base = annotated("corpus/ldo_pmos.sp");
    const auto m = apply_ldo_sever(base);
    EXPECT_EQ(m.modification.kind, ModificationKind::LdoLoopSever);
    ASSERT_TRUE(m.modification.severed.has_value());
    EXPECT_EQ(m.modification.severed->device, "M2");
    EXPECT_EQ(m.modification.severed->net, "fb");
    EXPECT_EQ(m.modification.severed->terminal, kGate);
    EXPECT_EQ(m.modification.probe_net, "fb_iprobe");
    const auto* probe = m.netlist.find_device("VPROBE");
    ASSERT_NE(probe, nullptr);
    EXPECT_EQ(probe->terminals, (std::vector<std::string>{"fb", "fb_iprobe"}));
    EXPECT_EQ(std::get<Fixed>(probe->params.at("DC")).value, 0.0);
    EXPECT_EQ(m.netlist.find_device("M2")->terminals[kGate], "fb_iprobe");
    EXPECT_EQ(m.netlist.find_device("MP")->terminals, base.find_device("MP")->terminals);
    EXPECT_TRUE(isomorphic(undo(m), base));
    EXPECT_EQ(code_of([&] { apply_ldo_sever(m.netlist); }), ErrorCode::AlreadyModified);
}

TEST(LdoSever, StructuralErrors) {
    const std::string header = ".subckt l vref vout vdd vss\n"
                               "M1 n1 vref tail vss nmos\nM2 n2 fb tail vss nmos\nM5 tail vss vss vss nmos\n"
                               "R3 n1 vdd 10k\nR4 n2 vdd 10k\n";
    auto build = [&](const std::string& body) {
        return heuristic_annotate(parse_netlist(header + body + ".ends\n"));
    };
    EXPECT_EQ(code_of([&] { apply_ldo_sever(build("R1 vout fb 1k\nR2 fb vss 1k\n")); }), ErrorCode::NoPassDevice);
    EXPECT_EQ(code_of([&] { apply_ldo_sever(build("MP vout n2 vdd vdd pmos W=5u L=1u\nMQ vout n2 vdd vdd pmos W=5u L=1u\n"
                                                  "R1 vout fb 1k\nR2 fb vss 1k\n")); }),
              ErrorCode::NoPassDevice);
    EXPECT_EQ(code_of([&] { apply_ldo_sever(build("MP vout n2 vdd vdd pmos W=50u L=1u\nR1 vout fb 1k\nR9 fb x 1k\n")); }),
              ErrorCode::NoFeedbackDivider);
    EXPECT_EQ(code_of([&] { apply_ldo_sever(build("MP vout n2 vdd vdd pmos W=50u L=1u\nR1 vout vss 1k\nR2 fb vss 1k\n")); }),
              ErrorCode::NoFeedbackDivider);
    const auto ok = apply_ldo_sever(build("MP vout n2 vdd vdd pmos W=50u L=1u\nMQ vout n2 vdd vdd pmos W=5u L=1u\n"
                                          "R1 vout fb 1k\nR2 fb vss 1k\n"));
    EXPECT_EQ(ok.modification.severed->device, "M2");
}

TEST(Modification, JsonRoundTrip) {
    for (const auto& m : {apply_cmfb(annotated("corpus/fd_telescopic.sp")).modification,
                          apply_ldo_sever(annotated("corpus/ldo_pmos.sp")).modification,
                          apply_cmfb(annotated("extra/fd_nobias.sp")).modification, Modification{}}) {
        const nlohmann::json j = m;
        EXPECT_EQ(j.get<Modification>(), m) << j.dump();
    }
    EXPECT_THROW(nlohmann::json({{"kind", "Bogus"}}).get<Modification>(), Error);
}
