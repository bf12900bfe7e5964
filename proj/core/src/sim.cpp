#include "amsq/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <future>
#include <numbers>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <Eigen/Dense>
#include <fcntl.h>
#include <fnmatch.h>
#include <sys/wait.h>
#include <unistd.h>

#include "amsq/error.hpp"
#include "amsq/units.hpp"

namespace amsq {

std::string_view to_string(EvalStatus status) {
    switch (status) {
    case EvalStatus::Ok: return "Ok";
    case EvalStatus::SimFailed: return "SimFailed";
    case EvalStatus::NonConvergent: return "NonConvergent";
    case EvalStatus::Timeout: return "Timeout";
    }
    return "?";
}

ParameterSpace Backend::space(const Deck& deck) const {
    ParameterSpace out;
    for (const auto& [name, t] : deck.tunables()) out.push_back({name, t.lower, t.upper});
    return out;
}

std::uint64_t stable_hash(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex_hash(std::uint64_t h) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

std::string params_key(const ParamAssignment& params) {
    std::string key;
    for (const auto& [name, value] : params) {
        key += name;
        key += '=';
        key += format_number(value);
        key += ';';
    }
    return key;
}

std::optional<Evaluation> EvaluationCache::find(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void EvaluationCache::store(const std::string& key, const Evaluation& e) {
    std::lock_guard lock(mu_);
    entries_.insert_or_assign(key, e);
}

std::size_t EvaluationCache::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

void check_params(const ParameterSpace& space, const ParamAssignment& params) {
    for (const auto& p : space) {
        auto it = params.find(p.name);
        if (it == params.end()) throw Error(ErrorCode::PreconditionViolated, "missing parameter '" + p.name + "'");
        const double v = it->second;
        if (!std::isfinite(v) || v < p.lower || v > p.upper)
            throw Error(ErrorCode::PreconditionViolated, "parameter '" + p.name + "' = " + format_number(v) +
                                                             " outside [" + format_number(p.lower) + ", " +
                                                             format_number(p.upper) + "]");
    }
    if (params.size() != space.size()) {
        for (const auto& [name, value] : params) {
            const bool known = std::any_of(space.begin(), space.end(), [&](const ParamSpec& p) { return p.name == name; });
            if (!known) throw Error(ErrorCode::PreconditionViolated, "unknown parameter '" + name + "'");
        }
    }
}

Evaluation evaluate(const Deck& deck, const ParamAssignment& params, Backend& backend, EvaluationCache* cache) {
    check_params(backend.space(deck), params);
    std::string key;
    if (cache) {
        key = backend.name() + ":" + hex_hash(stable_hash(emit_deck(deck))) + ":" + hex_hash(stable_hash(params_key(params)));
        if (auto hit = cache->find(key)) return *hit;
    }
    const auto start = std::chrono::steady_clock::now();
    Evaluation e = backend.run(deck, params);
    e.params = params;
    e.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (e.status == EvalStatus::Ok) {
        for (const auto& m : deck.metrics) {
            auto it = e.metrics.find(m.name);
            if (it == e.metrics.end() || !std::isfinite(it->second)) {
                e.status = EvalStatus::SimFailed;
                e.message = "ParseError: " + m.name;
                break;
            }
        }
    }
    if (cache) cache->store(key, e);
    return e;
}

std::vector<Evaluation> evaluate_batch(const Deck& deck, const std::vector<ParamAssignment>& batch, Backend& backend,
                                       int workers, EvaluationCache* cache) {
    std::vector<Evaluation> out(batch.size());
    if (workers <= 1 || batch.size() <= 1) {
        for (std::size_t i = 0; i < batch.size(); ++i) out[i] = evaluate(deck, batch[i], backend, cache);
        return out;
    }
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(workers), batch.size());
    std::vector<std::future<void>> tasks;
    for (std::size_t w = 0; w < n; ++w) {
        tasks.push_back(std::async(std::launch::async, [&, w] {
            for (std::size_t i = w; i < batch.size(); i += n) out[i] = evaluate(deck, batch[i], backend, cache);
        }));
    }
    for (auto& t : tasks) t.get();
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kPi = std::numbers::pi;

std::map<std::string, double> opamp_metrics(double gm, double ro, double ibias, double gain_cap, double area_per_ua) {
    const double gain = std::min(20.0 * std::log10(gm * ro), gain_cap);
    return {
        {"Power", 1.8 * ibias * 1e6},
        {"Gain", gain},
        {"GBW", gm / (2.0 * kPi * 1e-12) / 1e3},
        {"Phase Margin", 60.0},
        {"Slew Rate", ibias / 1e-12 * 1e-6},
        {"CMRR", gain + 20.0},
        {"PSRR", -gain},
        {"Area", ibias * 1e6 * area_per_ua},
    };
}

std::vector<SurrogateModel> make_bank() {
    std::vector<SurrogateModel> bank;
    const ParameterSpace ota_space{{"gm", 1e-4, 1e-2}, {"ro", 1e4, 1e7}, {"Ibias", 1e-6, 1e-4}};

    bank.push_back({"ota-feasible", CircuitClass::SingleEndedOpAmp, true, ota_space,
                    [](const ParamAssignment& p) {
                        return opamp_metrics(p.at("gm"), p.at("ro"), p.at("Ibias"), INFINITY, 0.05);
                    },
                    "Gain=20log10(gm*ro) dB, GBW=gm/(2pi*1pF), PM=60 deg, Power=1.8V*Ibias, SR=Ibias/1pF, "
                    "CMRR=Gain+20, PSRR=-Gain, Area=0.05 um^2 per uA"});

    bank.push_back({"ota-infeasible", CircuitClass::SingleEndedOpAmp, false, ota_space,
                    [](const ParamAssignment& p) {
                        return opamp_metrics(p.at("gm"), p.at("ro"), p.at("Ibias"), 30.0, 0.05);
                    },
                    "as ota-feasible with Gain capped at 30 dB"});

    auto fd_space = ota_space;
    fd_space.push_back({"vcm", 0.3, 1.5});
    bank.push_back({"fdota-feasible", CircuitClass::FullyDiffOpAmp, true, fd_space,
                    [](const ParamAssignment& p) {
                        auto m = opamp_metrics(p.at("gm"), p.at("ro"), p.at("Ibias"), INFINITY, 0.1);
                        const double vcm = p.at("vcm");
                        if (vcm < 0.6 || vcm > 1.2) {
                            m["Gain"] -= 40.0;
                            m["CMRR"] -= 40.0;
                            m["PSRR"] += 40.0;
                        }
                        return m;
                    },
                    "as ota-feasible; Gain loses 40 dB when the output common mode vcm leaves [0.6, 1.2] V; "
                    "Area=0.1 um^2 per uA"});

    bank.push_back({"comp-feasible", CircuitClass::Comparator, true,
                    {{"gm", 1e-4, 1e-2}, {"Ibias", 1e-6, 1e-4}, {"W", 1e-6, 1e-4}},
                    [](const ParamAssignment& p) {
                        const double gm = p.at("gm");
                        const double ibias = p.at("Ibias");
                        const double w_um = p.at("W") * 1e6;
                        const double vov = 2.0 * ibias / gm;
                        return std::map<std::string, double>{
                            {"Power", 1.8 * ibias * 1e6},
                            {"Output Swing Voltage", std::max(0.0, 1.8 - 2.0 * vov)},
                            {"Slew Rate", ibias / 50e-15 * 1e-6},
                            {"Propagation delay", 50e-15 * 0.9 / ibias * 1e9},
                            {"Input Offset Voltage (3σ)", 3.0 * 1.5 / std::sqrt(w_um * 0.1)},
                            {"Area", 0.4 * w_um},
                        };
                    },
                    "Swing=max(0, VDD-4*Ibias/gm), SR=Ibias/50fF, delay=50fF*0.9V/Ibias, "
                    "offset(3 sigma)=4.5mV/sqrt(0.1*W/um), Area=0.4*W/um"});

    bank.push_back({"ldo-feasible", CircuitClass::LDO, true,
                    {{"vref", 0.79, 0.81}, {"ratio", 0.95, 1.05}, {"A", 100.0, 1e4}, {"Wpass", 1e-5, 1e-3},
                     {"Ibias", 1e-6, 1e-5}},
                    [](const ParamAssignment& p) {
                        const double vref = p.at("vref");
                        const double ratio = p.at("ratio");
                        const double loop = p.at("A") / (1.0 + ratio);
                        const double wpass = p.at("Wpass");
                        const double ib_ua = p.at("Ibias") * 1e6;
                        const double imax = 40.0 * wpass;
                        const double gain = 20.0 * std::log10(loop);
                        const double gbw = loop * ib_ua * 0.5;
                        const double f2 = 200.0 * (1e-4 / wpass);
                        const double reg = 1.0 - 10.0 / loop;
                        return std::map<std::string, double>{
                            {"Power", 1.8 * 2.0 * ib_ua},
                            {"VO", vref * (1.0 + ratio) * loop / (1.0 + loop)},
                            {"Current Capa. (1mA load)", std::min(1e-3, imax) * 1e3},
                            {"Current Capa. (4mA load)", std::min(4e-3, imax) * 1e3},
                            {"Load Regulation (1uA load)", reg},
                            {"Load Regulation (4mA load)", 30.0 * reg * std::min(1.0, imax / 4e-3)},
                            {"Gain", gain},
                            {"GBW", gbw},
                            {"Phase Margin", 90.0 - std::atan(gbw / f2) * 180.0 / kPi},
                            {"CMRR", gain + 15.0},
                            {"PSRR", -(gain - 2.0)},
                            {"Startup Time", 5.0 + 200.0 / ib_ua},
                            {"Recovery Time", 100.0 + 5000.0 / ib_ua},
                            {"Area", wpass * 1e6 * 0.05 + p.at("A") / 500.0},
                        };
                    },
                    "loop=A/(1+ratio), VO=vref(1+ratio)loop/(1+loop), Imax=40 A/m*Wpass, "
                    "Current Capa.=min(I, Imax) across a 1 ohm sense, Load Regulation=1-10/loop"});
    return bank;
}

// +1 when the assigned polarity matches the recorded truth, -1 when inverted.
double polarity_sign(const Deck& deck) {
    double sign = 1.0;
    auto check = [&](std::string_view key, PortType plus, PortType minus) {
        auto it = deck.dut.metadata.find(std::string(key));
        if (it == deck.dut.metadata.end()) return;
        const auto* p = deck.dut.find_port(it->second);
        if (!p) return;
        if (p->ptype == minus) sign = -sign;
        else if (p->ptype != plus) sign = -sign;
    };
    check(kTruthInputPlusKey, PortType::InputPlus, PortType::InputMinus);
    if (deck.circuit_class == CircuitClass::FullyDiffOpAmp)
        check(kTruthOutputPlusKey, PortType::OutputPlus, PortType::OutputMinus);
    return sign;
}

const SurrogateModel* model_for(const Deck& deck) {
    auto it = deck.dut.metadata.find(std::string(kSurrogateKey));
    if (it == deck.dut.metadata.end()) return nullptr;
    return find_surrogate(it->second);
}

} // namespace

const std::vector<SurrogateModel>& surrogate_bank() {
    static const std::vector<SurrogateModel> bank = make_bank();
    return bank;
}

const SurrogateModel* find_surrogate(std::string_view name) {
    for (const auto& m : surrogate_bank()) {
        if (m.name == name) return &m;
    }
    return nullptr;
}

bool SurrogateBackend::supports(const Deck& deck) const {
    const auto* model = model_for(deck);
    return model && model->circuit_class == deck.circuit_class;
}

ParameterSpace SurrogateBackend::space(const Deck& deck) const {
    const auto* model = model_for(deck);
    if (!model) throw Error(ErrorCode::PreconditionViolated, "deck '" + deck.dut.name + "' names no surrogate model");
    return model->params;
}

Evaluation SurrogateBackend::run(const Deck& deck, const ParamAssignment& params) {
    Evaluation e;
    const auto* model = model_for(deck);
    if (!model || model->circuit_class != deck.circuit_class) {
        e.status = EvalStatus::SimFailed;
        e.message = "no surrogate for " + std::string(to_string(deck.circuit_class));
        return e;
    }
    e.metrics = model->formulas(params);
    if (polarity_sign(deck) < 0) {
        if (auto it = e.metrics.find("Phase Margin"); it != e.metrics.end()) it->second -= 180.0;
        if (auto it = e.metrics.find("Output Swing Voltage"); it != e.metrics.end()) it->second = -it->second;
    }
    return e;
}

// ---------------------------------------------------------------------------

std::map<std::string, double> parse_measurements(std::string_view text, std::string_view profile, bool& nonconvergent) {
    if (profile != "generic" && profile != "ngspice")
        throw Error(ErrorCode::ConfigError, "unknown simulator profile '" + std::string(profile) + "'");
    static const std::regex line_re(R"(^\s*([A-Za-z_][A-Za-z0-9_.]*)\s*=\s*(\S+))");
    std::map<std::string, double> out;
    nonconvergent = false;
    std::istringstream is{std::string(text)};
    for (std::string line; std::getline(is, line);) {
        std::string lower = line;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
        if (profile == "generic" && lower.find("nonconvergent") != std::string::npos) nonconvergent = true;
        if (profile == "ngspice" &&
            (lower.find("timestep too small") != std::string::npos || lower.find("no convergence") != std::string::npos ||
             lower.find("singular matrix") != std::string::npos || lower.find("solution failed") != std::string::npos))
            nonconvergent = true;
        std::smatch m;
        if (!std::regex_search(line, m, line_re)) continue;
        auto v = parse_si_value(m[2].str());
        if (!v) continue;
        std::string name = m[1].str();
        std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
        out.try_emplace(name, *v);
    }
    return out;
}

SpiceBackend::SpiceBackend(SpiceOptions options) : options_(std::move(options)) {
    if (options_.command.find("{deck}") == std::string::npos)
        throw Error(ErrorCode::ConfigError, "simulator command needs a {deck} placeholder");
    if (!(options_.timeout_s > 0)) throw Error(ErrorCode::ConfigError, "simulator timeout must be positive");
}

bool SpiceBackend::supports(const Deck&) const { return true; }

namespace {

struct ProcessResult {
    bool timed_out = false;
    int exit_code = -1;
};

ProcessResult run_process(const std::string& command, const std::filesystem::path& cwd, double timeout_s) {
    const auto log = (cwd / "sim.log").string();
    const pid_t pid = fork();
    if (pid < 0) throw Error(ErrorCode::IoError, "fork failed");
    if (pid == 0) {
        setpgid(0, 0);
        if (chdir(cwd.c_str()) != 0) _exit(126);
        const int fd = open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd >= 0) {
            dup2(fd, STDOUT_FILENO);
            dup2(fd, STDERR_FILENO);
            close(fd);
        }
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    ProcessResult r;
    for (;;) {
        int status = 0;
        const pid_t done = waitpid(pid, &status, WNOHANG);
        if (done == pid) {
            r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
            return r;
        }
        if (std::chrono::steady_clock::now() >= deadline) {
            kill(-pid, SIGKILL);
            kill(pid, SIGKILL);
            waitpid(pid, &status, 0);
            r.timed_out = true;
            return r;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double geometry_value(const Deck& deck, const ParamAssignment& params, const std::string& expression) {
    if (expression != "sum(W*L)")
        throw Error(ErrorCode::InvalidTemplate, "unsupported geometry expression '" + expression + "'");
    double total = 0.0;
    for (const auto& d : deck.dut.devices) {
        if (!is_mos(d.kind)) continue;
        auto value = [&](const std::string& key) {
            const auto& v = d.params.at(key);
            if (const auto* f = std::get_if<Fixed>(&v)) return f->value;
            return params.at(d.name + "." + key);
        };
        total += value("W") * value("L");
    }
    return total;
}

} // namespace

Evaluation SpiceBackend::run(const Deck& deck, const ParamAssignment& params) {
    namespace fs = std::filesystem;
    Evaluation e;
    const std::string text = emit_simulation_deck(deck, params);
    const auto dir = fs::absolute(fs::path(options_.work_dir) /
                                  (hex_hash(stable_hash(emit_deck(deck))) + "-" + hex_hash(stable_hash(params_key(params)))));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        e.status = EvalStatus::SimFailed;
        e.message = "cannot create " + dir.string();
        return e;
    }
    const auto deck_path = dir / "deck.sp";
    {
        std::ofstream out(deck_path, std::ios::binary | std::ios::trunc);
        out << text;
    }
    std::string command = options_.command;
    for (auto pos = command.find("{deck}"); pos != std::string::npos; pos = command.find("{deck}", pos))
        command.replace(pos, 6, deck_path.string());

    const auto result = run_process(command, dir, options_.timeout_s);
    if (result.timed_out) {
        e.status = EvalStatus::Timeout;
        e.message = "simulator exceeded " + format_number(options_.timeout_s) + " s";
        return e;
    }
    std::string output = read_file(dir / "sim.log");
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto fname = entry.path().filename().string();
        if (fname == "sim.log" || fname == "deck.sp") continue;
        if (fnmatch(options_.output_glob.c_str(), fname.c_str(), 0) == 0) output += "\n" + read_file(entry.path());
    }
    bool nonconvergent = false;
    const auto measured = parse_measurements(output, options_.profile, nonconvergent);
    if (nonconvergent) {
        e.status = EvalStatus::NonConvergent;
        e.message = "simulator reported non-convergence";
        return e;
    }
    if (result.exit_code != 0) {
        e.status = EvalStatus::SimFailed;
        e.message = "simulator exited with status " + std::to_string(result.exit_code);
        return e;
    }
    for (const auto& d : deck.directives) {
        if (d.analysis == "geometry") {
            e.metrics[d.metric] = geometry_value(deck, params, d.expression) * d.scale;
            continue;
        }
        auto it = measured.find(d.id);
        if (it == measured.end()) {
            e.status = EvalStatus::SimFailed;
            e.message = "ParseError: " + d.id;
            e.metrics.clear();
            return e;
        }
        e.metrics[d.metric] = it->second * d.scale;
    }
    return e;
}

// ---------------------------------------------------------------------------

namespace {

double param_or(const Device& d, const std::string& key, double fallback) {
    auto it = d.params.find(key);
    if (it == d.params.end()) return fallback;
    if (const auto* f = std::get_if<Fixed>(&it->second)) return f->value;
    const auto& t = std::get<Tunable>(it->second);
    return std::sqrt(t.lower * t.upper);
}

} // namespace

std::map<std::string, double> dc_operating_point(const Netlist& netlist, const std::map<std::string, double>& port_drives) {
    std::string ref = "0";
    if (auto vss = netlist.ports_of_type(PortType::Vss); !vss.empty()) ref = vss.front()->net;

    std::map<std::string, int> index;
    std::set<std::string> conductive;
    auto node = [&](const std::string& net) {
        if (net == ref) return -1;
        auto [it, inserted] = index.try_emplace(net, static_cast<int>(index.size()));
        return it->second;
    };
    for (const auto& n : netlist.nets) node(n.name);

    struct Branch {
        int plus, minus;
        double value;
        int ctrl_plus = -1, ctrl_minus = -1;
        bool vcvs = false;
    };
    std::vector<Branch> branches;
    for (const auto& d : netlist.devices) {
        switch (d.kind) {
        case DeviceKind::Resistor:
        case DeviceKind::Inductor:
        case DeviceKind::VoltageSource:
            conductive.insert(d.terminals[0]);
            conductive.insert(d.terminals[1]);
            break;
        case DeviceKind::Vcvs:
            conductive.insert(d.terminals[0]);
            conductive.insert(d.terminals[1]);
            break;
        case DeviceKind::NMOS:
        case DeviceKind::PMOS:
            conductive.insert(d.terminals[kDrain]);
            conductive.insert(d.terminals[kSource]);
            break;
        default: break;
        }
    }
    for (const auto& [port, volts] : port_drives) {
        const auto* p = netlist.find_port(port);
        if (!p) throw Error(ErrorCode::PreconditionViolated, "no port '" + port + "' to drive");
        if (p->net == ref) continue;
        conductive.insert(p->net);
    }

    const int n_nodes = static_cast<int>(index.size());
    int n_branch = 0;
    for (const auto& d : netlist.devices) {
        if (d.kind == DeviceKind::VoltageSource || d.kind == DeviceKind::Inductor || d.kind == DeviceKind::Vcvs) ++n_branch;
    }
    for (const auto& [port, volts] : port_drives) {
        if (netlist.find_port(port)->net != ref) ++n_branch;
    }
    const int size = n_nodes + n_branch;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(size, size);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(size);

    auto stamp_g = [&](int p, int m, double g) {
        if (p >= 0) a(p, p) += g;
        if (m >= 0) a(m, m) += g;
        if (p >= 0 && m >= 0) {
            a(p, m) -= g;
            a(m, p) -= g;
        }
    };
    // Current g*(V(cp)-V(cm)) flowing from node p to node m through the device.
    auto stamp_vccs = [&](int p, int m, int cp, int cm, double g) {
        auto add = [&](int r, int c, double v) {
            if (r >= 0 && c >= 0) a(r, c) += v;
        };
        add(p, cp, g);
        add(p, cm, -g);
        add(m, cp, -g);
        add(m, cm, g);
    };
    int branch = n_nodes;
    auto stamp_vsource = [&](int p, int m, double volts) {
        if (p >= 0) {
            a(p, branch) += 1.0;
            a(branch, p) += 1.0;
        }
        if (m >= 0) {
            a(m, branch) -= 1.0;
            a(branch, m) -= 1.0;
        }
        b(branch) += volts;
        return branch++;
    };

    for (const auto& d : netlist.devices) {
        const auto& t = d.terminals;
        switch (d.kind) {
        case DeviceKind::Resistor: stamp_g(node(t[0]), node(t[1]), 1.0 / param_or(d, "R", 1e3)); break;
        case DeviceKind::Capacitor: break;
        case DeviceKind::Inductor: stamp_vsource(node(t[0]), node(t[1]), 0.0); break;
        case DeviceKind::VoltageSource: stamp_vsource(node(t[0]), node(t[1]), param_or(d, "DC", 0.0)); break;
        case DeviceKind::CurrentSource: {
            const double i = param_or(d, "DC", 0.0);
            if (const int p = node(t[0]); p >= 0) b(p) -= i;
            if (const int m = node(t[1]); m >= 0) b(m) += i;
            break;
        }
        case DeviceKind::Vcvs: {
            const int row = stamp_vsource(node(t[0]), node(t[1]), 0.0);
            const double gain = param_or(d, "GAIN", 1.0);
            if (const int cp = node(t[2]); cp >= 0) a(row, cp) -= gain;
            if (const int cm = node(t[3]); cm >= 0) a(row, cm) += gain;
            break;
        }
        case DeviceKind::NMOS:
        case DeviceKind::PMOS: {
            const double w = param_or(d, "W", std::sqrt(kDefaultMosWidth.lower * kDefaultMosWidth.upper));
            const double l = param_or(d, "L", std::sqrt(kDefaultMosLength.lower * kDefaultMosLength.upper));
            const double gm = 2e-4 * w / l;
            const double gds = gm / 50.0;
            const int dn = node(t[kDrain]);
            const int sn = node(t[kSource]);
            stamp_vccs(dn, sn, node(t[kGate]), sn, gm);
            stamp_g(dn, sn, gds);
            break;
        }
        }
    }
    for (const auto& [port, volts] : port_drives) {
        const auto& net = netlist.find_port(port)->net;
        if (net != ref) stamp_vsource(node(net), -1, volts);
    }
    for (const auto& [net, i] : index) {
        if (!conductive.count(net)) a(i, i) += 1e-12;
    }

    const Eigen::VectorXd x = a.fullPivLu().solve(b);
    if (!x.allFinite() || (a * x - b).norm() > 1e-8 * (1.0 + b.norm()))
        throw Error(ErrorCode::PreconditionViolated, "DC system of '" + netlist.name + "' is singular");
    std::map<std::string, double> out;
    out[ref] = 0.0;
    for (const auto& [net, i] : index) out[net] = x(i);
    return out;
}

} // namespace amsq
