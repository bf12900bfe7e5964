#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "amsq/port_annotation.hpp"
#include "amsq/sim.hpp"
#include "amsq/spec_table.hpp"

namespace amsq {

struct DatabaseEntry {
    CircuitClass circuit_class = CircuitClass::SingleEndedOpAmp;
    std::string topology;
    int trial = 0;
    std::map<std::string, std::string> source;
    std::string netlist;          // original, as emitted after annotation
    std::string modified_netlist; // after topology modification
    PolarityAssignment polarity;
    std::string template_id;
    ParamAssignment params;
    std::map<std::string, double> raw;
    std::vector<double> scores;   // spec-table metric order
    int cluster = 0;              // 1-based; 0 when unlabeled
    std::string tag;
    std::string manifest;         // path of the run manifest, relative to the output dir

    friend bool operator==(const DatabaseEntry&, const DatabaseEntry&) = default;
};

void to_json(nlohmann::json& j, const DatabaseEntry& e);
void from_json(const nlohmann::json& j, DatabaseEntry& e);

struct ScoreBound {
    std::string metric;
    std::optional<double> min;
    std::optional<double> max;
};

struct QueryFilter {
    std::optional<CircuitClass> circuit_class;
    std::optional<std::string> topology;
    // Each string is one or more "; "-separated tag parts that must all occur.
    std::vector<std::string> tags;
    std::vector<ScoreBound> bounds;
};

struct ClassSummary {
    CircuitClass circuit_class = CircuitClass::SingleEndedOpAmp;
    int topologies = 0;
    int instances = 0;
    std::map<int, int> cluster_histogram;
    friend bool operator==(const ClassSummary&, const ClassSummary&) = default;
};

// Whether `tag` contains every part of `pattern`, comparing case-insensitive
// whitespace tokens part by part.
bool tag_matches(const std::string& tag, const std::string& pattern);

// db/<class>.jsonl (header line then one entry per line) plus db/<class>.idx
// (topology, trial, byte offset, byte length). Writes go through a temp file
// and rename under an exclusive lock file.
class Database {
public:
    explicit Database(std::string directory, std::vector<SpecTable> tables = {});

    // Throws DuplicateKey for a (topology, trial) already stored or repeated
    // within `entries`, SchemaMismatch for a score vector of the wrong length.
    std::size_t ingest(const std::vector<DatabaseEntry>& entries);
    // Replaces the whole class file.
    void replace_class(CircuitClass c, const std::vector<DatabaseEntry>& entries);

    [[nodiscard]] std::vector<DatabaseEntry> entries(CircuitClass c) const;
    [[nodiscard]] std::vector<DatabaseEntry> all() const;
    [[nodiscard]] std::vector<DatabaseEntry> query(const QueryFilter& filter) const;
    [[nodiscard]] std::vector<ClassSummary> summarize() const;

    [[nodiscard]] std::vector<std::string> metric_names(CircuitClass c) const;
    [[nodiscard]] std::string class_path(CircuitClass c) const;
    [[nodiscard]] std::string index_path(CircuitClass c) const;
    [[nodiscard]] const std::string& directory() const { return directory_; }

private:
    void write_class(CircuitClass c, const std::vector<DatabaseEntry>& entries);
    void check_entry(const DatabaseEntry& e) const;

    std::string directory_;
    std::vector<SpecTable> tables_;
    mutable std::mutex mu_;
};

bool matches(const DatabaseEntry& e, const QueryFilter& filter, const std::vector<std::string>& metric_names);

nlohmann::json summary_to_json(const std::vector<ClassSummary>& summary);
std::string summary_to_text(const std::vector<ClassSummary>& summary);

// Per-entry score vectors with the 60 (threshold) and 100 (target) reference rings.
nlohmann::json radar_export(const std::vector<DatabaseEntry>& entries, const Database& db);

} // namespace amsq
