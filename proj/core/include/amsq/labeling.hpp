#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace amsq {

using Matrix = std::vector<std::vector<double>>;

struct RowId {
    std::string topology;
    int trial = 0;
    friend bool operator==(const RowId&, const RowId&) = default;
    friend auto operator<=>(const RowId&, const RowId&) = default;
};

// Stacked trial scores for one circuit class: rows = trials, columns = metrics.
struct ScoreMatrix {
    std::vector<std::string> metrics;
    Matrix rows;
    std::vector<RowId> ids;
};

struct Standardized {
    Matrix z;
    std::vector<double> mean;
    std::vector<double> sigma;      // population standard deviation
    std::vector<bool> zero_sigma;   // column was constant; its z column is all zeros
};

// Throws PreconditionViolated for fewer than 2 rows or ragged input.
Standardized standardize(const Matrix& s);
Matrix truncate_nonneg(const Matrix& z);

struct KMeansOptions {
    int n_init = 10;
    int max_iter = 300;
    double tolerance = 1e-6; // on the largest center shift
};

struct KMeansResult {
    std::vector<int> labels; // 0-based
    Matrix centers;
    double inertia = 0.0;
    int iterations = 0;
    // Inertia after each assignment step of the winning restart.
    std::vector<double> inertia_trace;
};

// Lloyd iterations from k-means++ seeds, best of n_init restarts.
KMeansResult kmeans(const Matrix& x, int k, std::uint64_t seed, const KMeansOptions& options = {});

double inertia(const Matrix& x, const std::vector<int>& labels, const Matrix& centers);

struct ClusterModel {
    int k = 0;
    std::vector<int> labels; // 0-based; files carry label + 1
    Matrix z_centers;        // standardized space
    Matrix s_centers;        // score space
    std::vector<double> mean;
    std::vector<double> sigma;
    std::vector<bool> zero_sigma;
    std::vector<int> sizes;
    double inertia = 0.0;
};

// standardize -> truncate -> kmeans on Z+, centers recomputed from S and Z.
ClusterModel fit_clusters(const Matrix& s, int k, std::uint64_t seed, const KMeansOptions& options = {});

enum class Rating { Good, Moderate, Bad };
std::string_view to_string(Rating r);

// ratings[k][j]: top ceil(q K) clusters by score-space center are good, the
// bottom ceil(q K) bad, the rest moderate. Equal values share the better rating.
std::vector<std::vector<Rating>> rate_metrics(const ClusterModel& model, double fraction);

struct TagPart {
    Rating rating = Rating::Moderate;
    std::string metric;
    double magnitude = 0.0; // |z center|
};

struct Tag {
    int cluster = 0; // 0-based
    std::vector<TagPart> parts;
    std::string text; // "good Gain; bad Area; moderate Power"
};

// Top 3 metrics by |z center| (index breaks ties), plus a 4th when its |z| >= 0.5.
std::vector<Tag> make_tags(const ClusterModel& model, const std::vector<std::vector<Rating>>& ratings,
                           const std::vector<std::string>& metric_names);

struct LabelingResult {
    ClusterModel model;
    std::vector<std::vector<Rating>> ratings;
    std::vector<Tag> tags;
    int requested_k = 0;
    std::vector<std::string> warnings;
};

// Full unsupervised labeling of a score matrix. K is reduced to the number of
// distinct rows when fewer (with a warning).
LabelingResult label_scores(const ScoreMatrix& s, int k, double fraction, std::uint64_t seed,
                            const KMeansOptions& options = {});

// Score-matrix JSON lines: {"topology", "trial", "scores"}; metric names in a
// leading {"metrics": [...]} line.
ScoreMatrix read_score_matrix(const std::string& path);
void write_score_matrix(const std::string& path, const ScoreMatrix& s);
// Label file lines: {"topology", "trial", "cluster" (1-based), "tag"}.
void write_labels(const std::string& path, const ScoreMatrix& s, const LabelingResult& r);
// Cluster summary: centers, ratings and tags per cluster.
nlohmann::json cluster_summary(const ScoreMatrix& s, const LabelingResult& r);

} // namespace amsq
