#include "amsq/database.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "amsq/error.hpp"

namespace amsq {

namespace fs = std::filesystem;

namespace {

constexpr int kSchemaVersion = 1;
constexpr const char* kSchemaName = "amsq-db";

std::vector<std::vector<std::string>> tag_parts(const std::string& text) {
    std::vector<std::vector<std::string>> parts;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ';');) {
        std::vector<std::string> tokens;
        std::istringstream ts(part);
        for (std::string tok; ts >> tok;) {
            std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
            tokens.push_back(tok);
        }
        if (!tokens.empty()) parts.push_back(std::move(tokens));
    }
    return parts;
}

class FileLock {
public:
    explicit FileLock(const std::string& path) {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
        if (fd_ < 0) throw Error(ErrorCode::IoError, "cannot open lock file '" + path + "'");
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            throw Error(ErrorCode::IoError, "cannot lock '" + path + "'");
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot write '" + tmp + "'");
        out << content;
        out.flush();
        if (!out) throw Error(ErrorCode::IoError, "short write to '" + tmp + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot rename '" + tmp + "': " + ec.message());
}

} // namespace

bool tag_matches(const std::string& tag, const std::string& pattern) {
    const auto have = tag_parts(tag);
    for (const auto& want : tag_parts(pattern)) {
        if (std::find(have.begin(), have.end(), want) == have.end()) return false;
    }
    return true;
}

void to_json(nlohmann::json& j, const DatabaseEntry& e) {
    nlohmann::json mapping = nlohmann::json::object();
    for (const auto& [port, type] : e.polarity.mapping) mapping[port] = std::string(to_string(type));
    j = nlohmann::json{{"class", std::string(to_string(e.circuit_class))},
                       {"topology", e.topology},
                       {"trial", e.trial},
                       {"source", e.source},
                       {"netlist", e.netlist},
                       {"modified_netlist", e.modified_netlist},
                       {"polarity", {{"index", e.polarity.permutation_index}, {"mapping", mapping}}},
                       {"template", e.template_id},
                       {"params", e.params},
                       {"raw", e.raw},
                       {"scores", e.scores},
                       {"cluster", e.cluster},
                       {"tag", e.tag},
                       {"manifest", e.manifest}};
}

void from_json(const nlohmann::json& j, DatabaseEntry& e) {
    auto c = parse_circuit_class(j.at("class").get<std::string>());
    if (!c) throw Error(ErrorCode::SchemaMismatch, "unknown class in entry");
    e.circuit_class = *c;
    e.topology = j.at("topology").get<std::string>();
    e.trial = j.at("trial").get<int>();
    e.source = j.at("source").get<std::map<std::string, std::string>>();
    e.netlist = j.at("netlist").get<std::string>();
    e.modified_netlist = j.at("modified_netlist").get<std::string>();
    const auto& pol = j.at("polarity");
    e.polarity.permutation_index = pol.at("index").get<int>();
    e.polarity.mapping.clear();
    for (const auto& [port, type] : pol.at("mapping").items()) {
        auto t = parse_port_type(type.get<std::string>());
        if (!t) throw Error(ErrorCode::SchemaMismatch, "unknown port type in entry");
        e.polarity.mapping[port] = *t;
    }
    e.template_id = j.at("template").get<std::string>();
    e.params = j.at("params").get<ParamAssignment>();
    e.raw = j.at("raw").get<std::map<std::string, double>>();
    e.scores = j.at("scores").get<std::vector<double>>();
    e.cluster = j.at("cluster").get<int>();
    e.tag = j.at("tag").get<std::string>();
    e.manifest = j.at("manifest").get<std::string>();
}

Database::Database(std::string directory, std::vector<SpecTable> tables)
    : directory_(std::move(directory)), tables_(std::move(tables)) {
    if (tables_.empty()) {
        for (auto c : {CircuitClass::SingleEndedOpAmp, CircuitClass::Comparator, CircuitClass::LDO})
            tables_.push_back(default_spec_table(c));
    }
    std::error_code ec;
    fs::create_directories(directory_, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create database directory '" + directory_ + "'");
}

std::vector<std::string> Database::metric_names(CircuitClass c) const {
    const auto name = spec_table_name(c);
    for (const auto& t : tables_) {
        if (t.name != name) continue;
        std::vector<std::string> out;
        for (const auto& m : t.metrics) out.push_back(m.name);
        return out;
    }
    throw Error(ErrorCode::ConfigError, "no spec table for " + name);
}

std::string Database::class_path(CircuitClass c) const {
    return (fs::path(directory_) / (std::string(to_string(c)) + ".jsonl")).string();
}

std::string Database::index_path(CircuitClass c) const {
    return (fs::path(directory_) / (std::string(to_string(c)) + ".idx")).string();
}

void Database::check_entry(const DatabaseEntry& e) const {
    const auto names = metric_names(e.circuit_class);
    if (e.scores.size() != names.size())
        throw Error(ErrorCode::SchemaMismatch, e.topology + "#" + std::to_string(e.trial) + ": " +
                                                   std::to_string(e.scores.size()) + " scores for " +
                                                   std::to_string(names.size()) + " metrics");
}

std::vector<DatabaseEntry> Database::entries(CircuitClass c) const {
    const auto path = class_path(c);
    std::ifstream in(path, std::ios::binary);
    if (!in) return {};
    std::vector<DatabaseEntry> out;
    std::string line;
    int number = 0;
    try {
        while (std::getline(in, line)) {
            ++number;
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (number == 1) {
                if (j.value("schema", std::string{}) != kSchemaName || j.value("version", 0) != kSchemaVersion)
                    throw Error(ErrorCode::SchemaMismatch, path + ": unsupported schema header");
                if (j.at("class").get<std::string>() != to_string(c))
                    throw Error(ErrorCode::SchemaMismatch, path + ": header names another class");
                if (j.at("metrics").get<std::vector<std::string>>() != metric_names(c))
                    throw Error(ErrorCode::SchemaMismatch, path + ": metric list differs from the spec table");
                continue;
            }
            out.push_back(j.get<DatabaseEntry>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, path + ":" + std::to_string(number) + ": " + e.what());
    }
    return out;
}

void Database::write_class(CircuitClass c, const std::vector<DatabaseEntry>& entries) {
    std::string body;
    std::string index;
    const nlohmann::json header{{"schema", kSchemaName}, {"version", kSchemaVersion},
                                {"class", std::string(to_string(c))}, {"metrics", metric_names(c)}};
    body = header.dump() + '\n';
    for (const auto& e : entries) {
        const std::string line = nlohmann::json(e).dump() + '\n';
        index += e.topology + '\t' + std::to_string(e.trial) + '\t' + std::to_string(body.size()) + '\t' +
                 std::to_string(line.size()) + '\n';
        body += line;
    }
    write_atomic(class_path(c), body);
    write_atomic(index_path(c), index);
}

std::size_t Database::ingest(const std::vector<DatabaseEntry>& entries) {
    std::lock_guard guard(mu_);
    FileLock lock((fs::path(directory_) / ".lock").string());
    std::map<CircuitClass, std::vector<DatabaseEntry>> by_class;
    for (const auto& e : entries) {
        check_entry(e);
        by_class[e.circuit_class].push_back(e);
    }
    std::map<CircuitClass, std::vector<DatabaseEntry>> merged;
    for (auto& [c, fresh] : by_class) {
        auto existing = this->entries(c);
        std::set<std::pair<std::string, int>> keys;
        for (const auto& e : existing) keys.emplace(e.topology, e.trial);
        for (const auto& e : fresh) {
            if (!keys.emplace(e.topology, e.trial).second)
                throw Error(ErrorCode::DuplicateKey, std::string(to_string(c)) + ": (" + e.topology + ", " +
                                                         std::to_string(e.trial) + ") already stored");
        }
        existing.insert(existing.end(), fresh.begin(), fresh.end());
        merged[c] = std::move(existing);
    }
    for (const auto& [c, all] : merged) write_class(c, all);
    return entries.size();
}

void Database::replace_class(CircuitClass c, const std::vector<DatabaseEntry>& entries) {
    std::lock_guard guard(mu_);
    FileLock lock((fs::path(directory_) / ".lock").string());
    std::set<std::pair<std::string, int>> keys;
    for (const auto& e : entries) {
        if (e.circuit_class != c) throw Error(ErrorCode::SchemaMismatch, "entry of another class in replace_class");
        check_entry(e);
        if (!keys.emplace(e.topology, e.trial).second)
            throw Error(ErrorCode::DuplicateKey, e.topology + "#" + std::to_string(e.trial));
    }
    write_class(c, entries);
}

std::vector<DatabaseEntry> Database::all() const {
    std::vector<DatabaseEntry> out;
    for (auto c : all_circuit_classes()) {
        auto part = entries(c);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

bool matches(const DatabaseEntry& e, const QueryFilter& filter, const std::vector<std::string>& metric_names) {
    if (filter.circuit_class && e.circuit_class != *filter.circuit_class) return false;
    if (filter.topology && e.topology != *filter.topology) return false;
    for (const auto& t : filter.tags) {
        if (!tag_matches(e.tag, t)) return false;
    }
    for (const auto& b : filter.bounds) {
        auto it = std::find(metric_names.begin(), metric_names.end(), b.metric);
        if (it == metric_names.end()) return false;
        const double s = e.scores[static_cast<std::size_t>(it - metric_names.begin())];
        if (b.min && s < *b.min) return false;
        if (b.max && s > *b.max) return false;
    }
    return true;
}

std::vector<DatabaseEntry> Database::query(const QueryFilter& filter) const {
    std::vector<DatabaseEntry> out;
    for (auto c : all_circuit_classes()) {
        if (filter.circuit_class && c != *filter.circuit_class) continue;
        const auto names = metric_names(c);
        for (auto& e : entries(c)) {
            if (matches(e, filter, names)) out.push_back(std::move(e));
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const DatabaseEntry& a, const DatabaseEntry& b) {
        if (a.topology != b.topology) return a.topology < b.topology;
        if (a.trial != b.trial) return a.trial < b.trial;
        return a.circuit_class < b.circuit_class;
    });
    return out;
}

std::vector<ClassSummary> Database::summarize() const {
    std::vector<ClassSummary> out;
    for (auto c : all_circuit_classes()) {
        ClassSummary s;
        s.circuit_class = c;
        std::set<std::string> topologies;
        for (const auto& e : entries(c)) {
            topologies.insert(e.topology);
            ++s.instances;
            ++s.cluster_histogram[e.cluster];
        }
        s.topologies = static_cast<int>(topologies.size());
        out.push_back(std::move(s));
    }
    return out;
}

nlohmann::json summary_to_json(const std::vector<ClassSummary>& summary) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : summary) {
        nlohmann::json hist = nlohmann::json::object();
        for (const auto& [k, n] : s.cluster_histogram) hist[std::to_string(k)] = n;
        j.push_back({{"class", std::string(to_string(s.circuit_class))},
                     {"topologies", s.topologies},
                     {"instances", s.instances},
                     {"clusters", hist}});
    }
    return j;
}

std::string summary_to_text(const std::vector<ClassSummary>& summary) {
    std::ostringstream os;
    int topologies = 0, instances = 0;
    for (const auto& s : summary) {
        os << to_string(s.circuit_class) << ": " << s.topologies << " topologies, " << s.instances << " instances, "
           << s.cluster_histogram.size() << " clusters\n";
        topologies += s.topologies;
        instances += s.instances;
    }
    os << "total: " << topologies << " topologies, " << instances << " instances\n";
    return os.str();
}

nlohmann::json radar_export(const std::vector<DatabaseEntry>& entries, const Database& db) {
    nlohmann::json j;
    j["rings"] = {{"threshold", 60}, {"target", 100}};
    j["classes"] = nlohmann::json::object();
    for (auto c : all_circuit_classes()) j["classes"][std::string(to_string(c))] = db.metric_names(c);
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries) {
        j["entries"].push_back({{"class", std::string(to_string(e.circuit_class))},
                                {"topology", e.topology},
                                {"trial", e.trial},
                                {"cluster", e.cluster},
                                {"tag", e.tag},
                                {"scores", e.scores}});
    }
    return j;
}

} // namespace amsq
