#include "amsq/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "amsq/error.hpp"
#include "amsq/sizing.hpp"

namespace amsq {

namespace {

void check_rect(const Matrix& m) {
    if (m.empty()) return;
    const auto d = m.front().size();
    for (const auto& row : m) {
        if (row.size() != d) throw Error(ErrorCode::PreconditionViolated, "ragged matrix");
    }
}

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace

Standardized standardize(const Matrix& s) {
    if (s.size() < 2) throw Error(ErrorCode::PreconditionViolated, "standardize needs at least 2 rows");
    check_rect(s);
    const std::size_t m = s.size();
    const std::size_t d = s.front().size();
    Standardized out;
    out.mean.assign(d, 0.0);
    out.sigma.assign(d, 0.0);
    out.zero_sigma.assign(d, false);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (const auto& row : s) mean += row[j];
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (const auto& row : s) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(m);
        out.mean[j] = mean;
        out.sigma[j] = std::sqrt(var);
        // Relative test so float noise in a constant column is not blown up.
        out.zero_sigma[j] = !(out.sigma[j] > 1e-12 * std::max(1.0, std::abs(mean)));
    }
    out.z.assign(m, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            if (!out.zero_sigma[j]) out.z[i][j] = (s[i][j] - out.mean[j]) / out.sigma[j];
        }
    }
    return out;
}

Matrix truncate_nonneg(const Matrix& z) {
    Matrix out = z;
    for (auto& row : out) {
        for (auto& v : row) v = std::max(v, 0.0);
    }
    return out;
}

double inertia(const Matrix& x, const std::vector<int>& labels, const Matrix& centers) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) total += sqdist(x[i], centers[static_cast<std::size_t>(labels[i])]);
    return total;
}

namespace {

// Greedy k-means++: each new center is the best of 2 + ln(k) D^2-weighted draws.
Matrix plus_plus_seeds(const Matrix& x, int k, Rng& rng) {
    const std::size_t m = x.size();
    const int trials = 2 + static_cast<int>(std::log(static_cast<double>(k)));
    Matrix centers;
    centers.push_back(x[rng.below(m)]);
    std::vector<double> d2(m);
    for (std::size_t i = 0; i < m; ++i) d2[i] = sqdist(x[i], centers[0]);
    auto draw = [&](double total) {
        const double r = rng.uniform() * total;
        double acc = 0.0;
        std::size_t pick = m - 1;
        for (std::size_t i = 0; i < m; ++i) {
            acc += d2[i];
            if (r < acc && d2[i] > 0.0) {
                pick = i;
                break;
            }
        }
        while (d2[pick] <= 0.0 && pick > 0) --pick;
        return pick;
    };
    while (static_cast<int>(centers.size()) < k) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        if (total <= 0.0) {
            centers.push_back(x[rng.below(m)]);
            continue;
        }
        std::size_t best = m;
        double best_potential = 0.0;
        std::vector<double> best_d2;
        for (int t = 0; t < trials; ++t) {
            const std::size_t pick = draw(total);
            std::vector<double> next(m);
            double potential = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                next[i] = std::min(d2[i], sqdist(x[i], x[pick]));
                potential += next[i];
            }
            if (best == m || potential < best_potential) {
                best = pick;
                best_potential = potential;
                best_d2 = std::move(next);
            }
        }
        centers.push_back(x[best]);
        d2 = std::move(best_d2);
    }
    return centers;
}

KMeansResult lloyd(const Matrix& x, Matrix centers, const KMeansOptions& options) {
    const std::size_t m = x.size();
    const std::size_t k = centers.size();
    const std::size_t d = x.front().size();
    KMeansResult r;
    r.labels.assign(m, 0);
    for (int it = 0; it < options.max_iter; ++it) {
        for (std::size_t i = 0; i < m; ++i) {
            int best = 0;
            double best_d = sqdist(x[i], centers[0]);
            for (std::size_t c = 1; c < k; ++c) {
                const double dc = sqdist(x[i], centers[c]);
                if (dc < best_d) {
                    best_d = dc;
                    best = static_cast<int>(c);
                }
            }
            r.labels[i] = best;
        }
        // An empty cluster takes over the point lying farthest from its own center.
        for (std::size_t c = 0; c < k; ++c) {
            if (std::find(r.labels.begin(), r.labels.end(), static_cast<int>(c)) != r.labels.end()) continue;
            std::vector<int> sizes(k, 0);
            for (int l : r.labels) ++sizes[static_cast<std::size_t>(l)];
            std::size_t far = m;
            double far_d = -1.0;
            for (std::size_t i = 0; i < m; ++i) {
                if (sizes[static_cast<std::size_t>(r.labels[i])] < 2) continue;
                const double di = sqdist(x[i], centers[static_cast<std::size_t>(r.labels[i])]);
                if (di > far_d) {
                    far_d = di;
                    far = i;
                }
            }
            if (far == m) break;
            r.labels[far] = static_cast<int>(c);
            centers[c] = x[far];
        }
        r.inertia_trace.push_back(inertia(x, r.labels, centers));

        Matrix next(k, std::vector<double>(d, 0.0));
        std::vector<int> count(k, 0);
        for (std::size_t i = 0; i < m; ++i) {
            const auto c = static_cast<std::size_t>(r.labels[i]);
            ++count[c];
            for (std::size_t j = 0; j < d; ++j) next[c][j] += x[i][j];
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (count[c] == 0) {
                next[c] = centers[c];
                continue;
            }
            for (auto& v : next[c]) v /= count[c];
            shift = std::max(shift, std::sqrt(sqdist(next[c], centers[c])));
        }
        centers = std::move(next);
        r.iterations = it + 1;
        if (shift < options.tolerance) break;
    }
    r.centers = std::move(centers);
    r.inertia = inertia(x, r.labels, r.centers);
    return r;
}

} // namespace

KMeansResult kmeans(const Matrix& x, int k, std::uint64_t seed, const KMeansOptions& options) {
    if (x.empty() || k < 1 || static_cast<std::size_t>(k) > x.size())
        throw Error(ErrorCode::PreconditionViolated, "kmeans needs 1 <= K <= M");
    check_rect(x);
    Rng rng(seed);
    KMeansResult best;
    bool have = false;
    for (int run = 0; run < std::max(1, options.n_init); ++run) {
        auto r = lloyd(x, plus_plus_seeds(x, k, rng), options);
        if (!have || r.inertia < best.inertia) {
            best = std::move(r);
            have = true;
        }
    }
    return best;
}

ClusterModel fit_clusters(const Matrix& s, int k, std::uint64_t seed, const KMeansOptions& options) {
    const auto st = standardize(s);
    const auto km = kmeans(truncate_nonneg(st.z), k, seed, options);
    ClusterModel model;
    model.k = k;
    model.labels = km.labels;
    model.mean = st.mean;
    model.sigma = st.sigma;
    model.zero_sigma = st.zero_sigma;
    model.inertia = km.inertia;
    const std::size_t d = s.front().size();
    model.s_centers.assign(static_cast<std::size_t>(k), std::vector<double>(d, 0.0));
    model.z_centers.assign(static_cast<std::size_t>(k), std::vector<double>(d, 0.0));
    model.sizes.assign(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto c = static_cast<std::size_t>(km.labels[i]);
        ++model.sizes[c];
        for (std::size_t j = 0; j < d; ++j) model.s_centers[c][j] += s[i][j];
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
        if (model.sizes[c] == 0) continue;
        for (std::size_t j = 0; j < d; ++j) {
            model.s_centers[c][j] /= model.sizes[c];
            model.z_centers[c][j] = st.zero_sigma[j] ? 0.0 : (model.s_centers[c][j] - st.mean[j]) / st.sigma[j];
        }
    }
    return model;
}

std::string_view to_string(Rating r) {
    switch (r) {
    case Rating::Good: return "good";
    case Rating::Moderate: return "moderate";
    case Rating::Bad: return "bad";
    }
    return "?";
}

std::vector<std::vector<Rating>> rate_metrics(const ClusterModel& model, double fraction) {
    if (!(fraction > 0.0 && fraction <= 0.5)) throw Error(ErrorCode::PreconditionViolated, "fraction must be in (0, 0.5]");
    const int k = model.k;
    const int g = static_cast<int>(std::ceil(fraction * k - 1e-12));
    const std::size_t d = model.s_centers.empty() ? 0 : model.s_centers.front().size();
    std::vector<std::vector<Rating>> out(static_cast<std::size_t>(k), std::vector<Rating>(d, Rating::Moderate));
    for (std::size_t j = 0; j < d; ++j) {
        for (int c = 0; c < k; ++c) {
            const double v = model.s_centers[static_cast<std::size_t>(c)][j];
            // Position of the first cluster holding this exact value.
            int pos = 0;
            for (int o = 0; o < k; ++o) {
                if (model.s_centers[static_cast<std::size_t>(o)][j] > v) ++pos;
            }
            Rating r = Rating::Moderate;
            if (pos < g) r = Rating::Good;
            else if (pos >= k - g) r = Rating::Bad;
            out[static_cast<std::size_t>(c)][j] = r;
        }
    }
    return out;
}

std::vector<Tag> make_tags(const ClusterModel& model, const std::vector<std::vector<Rating>>& ratings,
                           const std::vector<std::string>& metric_names) {
    std::vector<Tag> tags;
    for (int c = 0; c < model.k; ++c) {
        const auto& z = model.z_centers[static_cast<std::size_t>(c)];
        std::vector<std::size_t> order(z.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(z[a]) > std::abs(z[b]); });
        std::size_t take = std::min<std::size_t>(3, order.size());
        if (order.size() >= 4 && std::abs(z[order[3]]) >= 0.5) take = 4;
        Tag tag;
        tag.cluster = c;
        for (std::size_t i = 0; i < take; ++i) {
            const auto j = order[i];
            tag.parts.push_back({ratings[static_cast<std::size_t>(c)][j], metric_names[j], std::abs(z[j])});
            if (i) tag.text += "; ";
            tag.text += std::string(to_string(tag.parts.back().rating)) + " " + metric_names[j];
        }
        tags.push_back(std::move(tag));
    }
    return tags;
}

LabelingResult label_scores(const ScoreMatrix& s, int k, double fraction, std::uint64_t seed, const KMeansOptions& options) {
    if (k < 1) throw Error(ErrorCode::PreconditionViolated, "K must be at least 1");
    if (s.rows.size() < 2) throw Error(ErrorCode::PreconditionViolated, "labeling needs at least 2 trials");
    for (const auto& row : s.rows) {
        if (row.size() != s.metrics.size()) throw Error(ErrorCode::SchemaMismatch, "score row length differs from metric count");
    }
    LabelingResult r;
    r.requested_k = k;
    std::set<std::vector<double>> distinct(s.rows.begin(), s.rows.end());
    const int limit = static_cast<int>(std::min(s.rows.size(), distinct.size()));
    int effective = k;
    if (effective > limit) {
        r.warnings.push_back("K reduced from " + std::to_string(k) + " to " + std::to_string(limit) + " (" +
                             std::to_string(s.rows.size()) + " trials, " + std::to_string(distinct.size()) + " distinct)");
        effective = limit;
    }
    r.model = fit_clusters(s.rows, effective, seed, options);
    r.ratings = rate_metrics(r.model, fraction);
    r.tags = make_tags(r.model, r.ratings, s.metrics);
    return r;
}

ScoreMatrix read_score_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read score matrix '" + path + "'");
    ScoreMatrix s;
    std::string line;
    int number = 0;
    try {
        while (std::getline(in, line)) {
            ++number;
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (j.contains("metrics")) {
                s.metrics = j.at("metrics").get<std::vector<std::string>>();
                continue;
            }
            s.ids.push_back({j.at("topology").get<std::string>(), j.at("trial").get<int>()});
            s.rows.push_back(j.at("scores").get<std::vector<double>>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, path + ":" + std::to_string(number) + ": " + e.what());
    }
    if (s.metrics.empty() && !s.rows.empty()) {
        for (std::size_t j = 0; j < s.rows.front().size(); ++j) s.metrics.push_back("m" + std::to_string(j + 1));
    }
    return s;
}

void write_score_matrix(const std::string& path, const ScoreMatrix& s) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
    out << nlohmann::json{{"metrics", s.metrics}}.dump() << '\n';
    for (std::size_t i = 0; i < s.rows.size(); ++i)
        out << nlohmann::json{{"topology", s.ids[i].topology}, {"trial", s.ids[i].trial}, {"scores", s.rows[i]}}.dump() << '\n';
}

void write_labels(const std::string& path, const ScoreMatrix& s, const LabelingResult& r) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
        const int label = r.model.labels[i];
        out << nlohmann::json{{"topology", s.ids[i].topology},
                              {"trial", s.ids[i].trial},
                              {"cluster", label + 1},
                              {"tag", r.tags[static_cast<std::size_t>(label)].text}}
                   .dump()
            << '\n';
    }
}

nlohmann::json cluster_summary(const ScoreMatrix& s, const LabelingResult& r) {
    nlohmann::json j;
    j["k"] = r.model.k;
    j["requested_k"] = r.requested_k;
    j["metrics"] = s.metrics;
    j["mean"] = r.model.mean;
    j["sigma"] = r.model.sigma;
    j["zero_sigma"] = r.model.zero_sigma;
    j["inertia"] = r.model.inertia;
    j["warnings"] = r.warnings;
    j["clusters"] = nlohmann::json::array();
    for (int c = 0; c < r.model.k; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        nlohmann::json jc;
        jc["cluster"] = c + 1;
        jc["size"] = r.model.sizes[cu];
        jc["score_center"] = r.model.s_centers[cu];
        jc["z_center"] = r.model.z_centers[cu];
        std::vector<std::string> ratings;
        for (auto rt : r.ratings[cu]) ratings.emplace_back(to_string(rt));
        jc["ratings"] = ratings;
        jc["tag"] = r.tags[cu].text;
        j["clusters"].push_back(jc);
    }
    return j;
}

} // namespace amsq
