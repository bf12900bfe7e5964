#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include <unistd.h>

namespace amsq::testing {

namespace fs = std::filesystem;

std::string data_path(const std::string& relative) { return std::string(AMSQ_TEST_DATA_DIR) + "/" + relative; }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string scratch_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto dir = fs::temp_directory_path() /
                     ("amsq-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

namespace {

double magnitude(Rng& rng, double lo_exp, double hi_exp) {
    const double e = lo_exp + (hi_exp - lo_exp) * rng.uniform();
    return std::pow(10.0, e) * (1.0 + rng.uniform());
}

ParamValue physical(Rng& rng, double lo_exp, double hi_exp) {
    if (rng.uniform() < 0.3) {
        const double a = magnitude(rng, lo_exp, hi_exp);
        return Tunable{a, a * (2.0 + 10.0 * rng.uniform())};
    }
    return Fixed{magnitude(rng, lo_exp, hi_exp)};
}

} // namespace

Netlist random_netlist(Rng& rng, int max_devices) {
    Netlist n;
    n.name = "cell" + std::to_string(rng.below(1000));
    const int net_count = 3 + static_cast<int>(rng.below(10));
    auto net = [&] { return "n" + std::to_string(rng.below(static_cast<std::size_t>(net_count))); };
    const int devices = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(max_devices)));
    const char* prefixes = "MRCLVIE";
    for (int i = 0; i < devices; ++i) {
        Device d;
        const char p = prefixes[rng.below(7)];
        d.name = std::string(1, p) + std::to_string(i);
        switch (p) {
        case 'M':
            d.kind = rng.uniform() < 0.5 ? DeviceKind::NMOS : DeviceKind::PMOS;
            d.terminals = {net(), net(), net(), net()};
            if (rng.uniform() < 0.8) d.params["W"] = physical(rng, -7, -4);
            if (rng.uniform() < 0.8) d.params["L"] = physical(rng, -8, -6);
            break;
        case 'R': d.kind = DeviceKind::Resistor; d.params["R"] = physical(rng, 1, 6); break;
        case 'C': d.kind = DeviceKind::Capacitor; d.params["C"] = physical(rng, -15, -10); break;
        case 'L': d.kind = DeviceKind::Inductor; d.params["L"] = physical(rng, -9, -3); break;
        case 'V': d.kind = DeviceKind::VoltageSource; d.params["DC"] = Fixed{std::round(rng.uniform() * 3600.0) / 1000.0 - 1.8}; break;
        case 'I': d.kind = DeviceKind::CurrentSource; d.params["DC"] = Fixed{magnitude(rng, -7, -3)}; break;
        default:
            d.kind = DeviceKind::Vcvs;
            d.terminals = {net(), net(), net(), net()};
            d.params["GAIN"] = Fixed{magnitude(rng, 0, 3)};
            break;
        }
        if (d.terminals.empty()) d.terminals = {net(), net()};
        n.devices.push_back(std::move(d));
    }
    const auto& vocab = port_type_vocabulary();
    std::vector<std::string> used;
    for (const auto& d : n.devices) used.insert(used.end(), d.terminals.begin(), d.terminals.end());
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());
    for (std::size_t i = 0; i < used.size(); ++i) {
        if (rng.uniform() < 0.5) continue;
        Port port;
        port.name = "p" + std::to_string(i);
        port.net = used[i];
        port.ptype = rng.uniform() < 0.3 ? PortType::Unknown : vocab[rng.below(vocab.size())];
        n.ports.push_back(port);
    }
    if (rng.uniform() < 0.5) n.metadata["origin"] = "gen" + std::to_string(rng.below(100));
    rebuild_nets(n);
    n.metadata.erase(std::string(kDanglingKey));
    return n;
}

std::string mutate(const std::string& text, Rng& rng) {
    static const std::string alphabet = "MRCLVIEXmnpux0123456789.=(){},;*@+-_ \t\n\"'\\\xff\xc3";
    static const std::vector<std::string> tokens = {".subckt", ".ends", ".end", ".port", ".param", "tune(", ")", "=",
                                                    "*@meta", "NMOS", "PMOS", "1e400", "-1", "nan", "W=", "{x}",
                                                    "meg", "\n", "tune(1u,1n)", "tune(2,3,4)"};
    std::string s = text;
    const int edits = 1 + static_cast<int>(rng.below(6));
    for (int i = 0; i < edits; ++i) {
        const std::size_t pos = s.empty() ? 0 : rng.below(s.size() + 1);
        switch (rng.below(7)) {
        case 0: s.insert(pos, 1, alphabet[rng.below(alphabet.size())]); break;
        case 1: if (pos < s.size()) s.erase(pos, 1 + rng.below(8)); break;
        case 2: if (pos < s.size()) s[pos] = alphabet[rng.below(alphabet.size())]; break;
        case 3: s.insert(pos, tokens[rng.below(tokens.size())]); break;
        case 4: {
            const auto b = s.rfind('\n', pos);
            const auto e = s.find('\n', pos);
            if (b != std::string::npos && e != std::string::npos) s.insert(e, s.substr(b, e - b));
            break;
        }
        case 5: s = s.substr(0, pos); break;
        default: {
            const std::size_t other = s.empty() ? 0 : rng.below(s.size());
            if (pos < s.size()) std::swap(s[pos], s[other]);
            break;
        }
        }
    }
    return s;
}

double brute_force_kmeans(const Matrix& x, int k) {
    const int m = static_cast<int>(x.size());
    const std::size_t d = x.empty() ? 0 : x.front().size();
    std::vector<int> label(static_cast<std::size_t>(m), 0);
    double best = std::numeric_limits<double>::infinity();
    // Restricted growth strings enumerate each set partition once.
    std::function<void(int, int)> rec = [&](int i, int used) {
        if (m - i < k - used) return;
        if (i == m) {
            if (used != k) return;
            std::vector<std::vector<double>> sum(static_cast<std::size_t>(k), std::vector<double>(d, 0.0));
            std::vector<int> count(static_cast<std::size_t>(k), 0);
            for (int r = 0; r < m; ++r) {
                ++count[label[r]];
                for (std::size_t c = 0; c < d; ++c) sum[label[r]][c] += x[r][c];
            }
            double sse = 0.0;
            for (int r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    const double diff = x[r][c] - sum[label[r]][c] / count[label[r]];
                    sse += diff * diff;
                }
            }
            best = std::min(best, sse);
            return;
        }
        for (int c = 0; c <= std::min(used, k - 1); ++c) {
            label[i] = c;
            rec(i + 1, std::max(used, c + 1));
        }
    };
    rec(0, 0);
    return best;
}

bool reference_dominates(const Individual& a, const Individual& b) {
    const bool fa = a.violation <= 0.0;
    const bool fb = b.violation <= 0.0;
    if (fa != fb) return fa;
    if (!fa) return a.violation < b.violation;
    bool strictly = false;
    for (std::size_t i = 0; i < a.objectives.size(); ++i) {
        if (a.objectives[i] > b.objectives[i]) return false;
        if (a.objectives[i] < b.objectives[i]) strictly = true;
    }
    return strictly;
}

std::vector<std::vector<std::size_t>> brute_force_fronts(const std::vector<Individual>& pop) {
    std::vector<std::vector<std::size_t>> fronts;
    std::vector<bool> taken(pop.size(), false);
    std::size_t remaining = pop.size();
    while (remaining > 0) {
        std::vector<std::size_t> front;
        for (std::size_t i = 0; i < pop.size(); ++i) {
            if (taken[i]) continue;
            bool dominated = false;
            for (std::size_t j = 0; j < pop.size() && !dominated; ++j) {
                if (j != i && !taken[j] && reference_dominates(pop[j], pop[i])) dominated = true;
            }
            if (!dominated) front.push_back(i);
        }
        for (auto i : front) taken[i] = true;
        remaining -= front.size();
        fronts.push_back(front);
    }
    return fronts;
}

Matrix random_matrix(Rng& rng, int rows, int cols) {
    Matrix m(static_cast<std::size_t>(rows), std::vector<double>(static_cast<std::size_t>(cols)));
    for (auto& row : m) {
        for (auto& v : row) v = 100.0 * rng.uniform();
    }
    return m;
}

PreparedNetlist prepare_fixture(const std::string& relative) {
    HeuristicAnnotator annotator;
    SurrogateBackend backend;
    const auto path = std::filesystem::path(relative);
    return prepare_netlist(read_file(data_path(relative)), path.stem().string(), default_template_library(), annotator, backend);
}

const PreparedCandidate& candidate(const PreparedNetlist& prepared, CircuitClass c, int permutation) {
    for (const auto& cand : prepared.candidates) {
        if (cand.circuit_class == c && cand.polarity.permutation_index == permutation) return cand;
    }
    throw std::runtime_error("no candidate for " + std::string(to_string(c)) + " permutation " + std::to_string(permutation));
}

} // namespace amsq::testing
