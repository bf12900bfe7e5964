#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amsq/labeling.hpp"
#include "amsq/netlist.hpp"
#include "amsq/pipeline.hpp"
#include "amsq/sizing.hpp"

namespace amsq::testing {

// Absolute path of a file under tests/data.
std::string data_path(const std::string& relative);
std::string read_file(const std::string& path);
// Fresh empty directory under the system temp dir.
std::string scratch_dir(const std::string& tag);

// Random valid netlist with up to `max_devices` devices of every kind.
Netlist random_netlist(Rng& rng, int max_devices = 24);

// Byte- and token-level corruption of a netlist text.
std::string mutate(const std::string& text, Rng& rng);

// Exhaustive minimum of the k-means objective over all partitions of the rows
// into exactly k non-empty clusters (k <= rows, rows <= 12).
double brute_force_kmeans(const Matrix& x, int k);

// Fronts by repeated extraction of the non-dominated set, each front sorted.
std::vector<std::vector<std::size_t>> brute_force_fronts(const std::vector<Individual>& pop);

// Reference dominance: feasibility first, then lower violation, then Pareto.
bool reference_dominates(const Individual& a, const Individual& b);

Matrix random_matrix(Rng& rng, int rows, int cols);

// tests/data/<relative> through parse, heuristic annotation, polarities and
// topology modification, against the surrogate backend.
PreparedNetlist prepare_fixture(const std::string& relative);
// The candidate for (class, permutation); fails the test when absent.
const PreparedCandidate& candidate(const PreparedNetlist& prepared, CircuitClass c, int permutation = 0);

} // namespace amsq::testing
