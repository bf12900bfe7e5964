#include "amsq/sizing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "amsq/error.hpp"

namespace amsq {

double score(double value, const MetricDef& spec, const ScoreConfig& config) {
    const double span = config.below_threshold_span;
    double s = 0.0;
    switch (spec.direction) {
    case Direction::HigherBetter:
    case Direction::LowerBetter: {
        const double r = spec.threshold;
        const double rstar = spec.target;
        if (r == rstar) throw Error(ErrorCode::DegenerateSpec, spec.name + ": threshold equals target");
        // Progress from threshold toward target, in units of |R* - R|.
        const double t = spec.direction == Direction::HigherBetter ? (value - r) / (rstar - r) : (r - value) / (r - rstar);
        if (t >= 0.0) s = 60.0 + 40.0 * t;
        else s = 60.0 * (1.0 + t / span);
        break;
    }
    case Direction::RangeTarget: {
        const auto& th = spec.threshold_range;
        const auto& tg = spec.target_range;
        if (th.lower >= tg.lower || th.upper <= tg.upper)
            throw Error(ErrorCode::DegenerateSpec, spec.name + ": target interval must nest inside threshold");
        if (tg.contains(value)) {
            s = 100.0;
        } else {
            const bool low = value < tg.lower;
            const double band = low ? tg.lower - th.lower : th.upper - tg.upper;
            const double inside = low ? value - th.lower : th.upper - value; // >= 0 within threshold
            if (inside >= 0.0) s = 60.0 + 40.0 * inside / band;
            else s = 60.0 * (1.0 + inside / (span * band));
        }
        break;
    }
    }
    if (std::isnan(s)) return 0.0;
    return std::clamp(s, 0.0, 100.0);
}

double violation(double value, const MetricDef& spec) {
    if (!std::isfinite(value)) return kFailedViolation;
    switch (spec.direction) {
    case Direction::HigherBetter: return std::max(0.0, spec.threshold - value) / std::abs(spec.target - spec.threshold);
    case Direction::LowerBetter: return std::max(0.0, value - spec.threshold) / std::abs(spec.threshold - spec.target);
    case Direction::RangeTarget: {
        const auto& th = spec.threshold_range;
        const auto& tg = spec.target_range;
        if (value < th.lower) return (th.lower - value) / (tg.lower - th.lower);
        if (value > th.upper) return (value - th.upper) / (th.upper - tg.upper);
        return 0.0;
    }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------

bool pareto_dominates(const std::vector<double>& a, const std::vector<double>& b) {
    bool strictly = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) return false;
        if (a[i] < b[i]) strictly = true;
    }
    return strictly;
}

bool constrained_dominates(const Individual& a, const Individual& b) {
    const bool fa = a.violation <= 0.0;
    const bool fb = b.violation <= 0.0;
    if (fa && !fb) return true;
    if (!fa && fb) return false;
    if (!fa && !fb) return a.violation < b.violation;
    return pareto_dominates(a.objectives, b.objectives);
}

std::vector<std::vector<std::size_t>> fast_nondominated_sort(std::vector<Individual>& pop) {
    const std::size_t n = pop.size();
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<int> count(n, 0);
    std::vector<std::vector<std::size_t>> fronts(1);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = p + 1; q < n; ++q) {
            if (constrained_dominates(pop[p], pop[q])) {
                dominated[p].push_back(q);
                ++count[q];
            } else if (constrained_dominates(pop[q], pop[p])) {
                dominated[q].push_back(p);
                ++count[p];
            }
        }
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (count[p] == 0) {
            pop[p].rank = 0;
            fronts[0].push_back(p);
        }
    }
    for (std::size_t i = 0; i < fronts.size() && !fronts[i].empty(); ++i) {
        std::vector<std::size_t> next;
        for (auto p : fronts[i]) {
            for (auto q : dominated[p]) {
                if (--count[q] == 0) {
                    pop[q].rank = static_cast<int>(i + 1);
                    next.push_back(q);
                }
            }
        }
        std::sort(next.begin(), next.end());
        if (next.empty()) break;
        fronts.push_back(std::move(next));
    }
    if (fronts.back().empty()) fronts.pop_back();
    return fronts;
}

std::vector<double> crowding_distance(const std::vector<Individual>& pop, const std::vector<std::size_t>& front) {
    const std::size_t n = front.size();
    std::vector<double> dist(n, 0.0);
    if (n == 0) return dist;
    if (n <= 2) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        return dist;
    }
    const std::size_t m = pop[front[0]].objectives.size();
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < m; ++k) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return pop[front[a]].objectives[k] < pop[front[b]].objectives[k];
        });
        const double lo = pop[front[order.front()]].objectives[k];
        const double hi = pop[front[order.back()]].objectives[k];
        dist[order.front()] = std::numeric_limits<double>::infinity();
        dist[order.back()] = std::numeric_limits<double>::infinity();
        if (!(hi > lo)) continue;
        for (std::size_t i = 1; i + 1 < n; ++i) {
            dist[order[i]] += (pop[front[order[i + 1]]].objectives[k] - pop[front[order[i - 1]]].objectives[k]) / (hi - lo);
        }
    }
    return dist;
}

std::vector<Individual> nsga2_step(const std::vector<Individual>& population, const std::vector<Individual>& offspring,
                                   const NsgaConfig& config) {
    std::vector<Individual> merged = population;
    merged.insert(merged.end(), offspring.begin(), offspring.end());
    const auto size = static_cast<std::size_t>(config.population);
    const auto fronts = fast_nondominated_sort(merged);
    std::vector<Individual> next;
    for (const auto& front : fronts) {
        const auto dist = crowding_distance(merged, front);
        for (std::size_t i = 0; i < front.size(); ++i) merged[front[i]].crowding = dist[i];
        if (next.size() + front.size() <= size) {
            for (auto i : front) next.push_back(merged[i]);
            if (next.size() == size) break;
            continue;
        }
        std::vector<std::size_t> order(front.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
        for (std::size_t i = 0; next.size() < size; ++i) next.push_back(merged[front[order[i]]]);
        break;
    }
    return next;
}

namespace {

std::size_t tournament(const std::vector<Individual>& pop, Rng& rng) {
    const std::size_t a = rng.below(pop.size());
    const std::size_t b = rng.below(pop.size());
    if (pop[a].rank != pop[b].rank) return pop[a].rank < pop[b].rank ? a : b;
    if (pop[a].crowding != pop[b].crowding) return pop[a].crowding > pop[b].crowding ? a : b;
    return std::min(a, b);
}

void sbx(std::vector<double>& c1, std::vector<double>& c2, Rng& rng, const NsgaConfig& config) {
    if (rng.uniform() > config.sbx_probability) return;
    const double eta = config.sbx_eta;
    for (std::size_t i = 0; i < c1.size(); ++i) {
        if (rng.uniform() > 0.5) continue;
        if (std::abs(c1[i] - c2[i]) <= 1e-14) continue;
        const double y1 = std::min(c1[i], c2[i]);
        const double y2 = std::max(c1[i], c2[i]);
        const double r = rng.uniform();
        auto betaq = [&](double beta) {
            const double alpha = 2.0 - std::pow(beta, -(eta + 1.0));
            return r <= 1.0 / alpha ? std::pow(r * alpha, 1.0 / (eta + 1.0))
                                    : std::pow(1.0 / (2.0 - r * alpha), 1.0 / (eta + 1.0));
        };
        const double b1 = betaq(1.0 + 2.0 * y1 / (y2 - y1));
        const double b2 = betaq(1.0 + 2.0 * (1.0 - y2) / (y2 - y1));
        double v1 = std::clamp(0.5 * ((y1 + y2) - b1 * (y2 - y1)), 0.0, 1.0);
        double v2 = std::clamp(0.5 * ((y1 + y2) + b2 * (y2 - y1)), 0.0, 1.0);
        if (rng.uniform() <= 0.5) std::swap(v1, v2);
        c1[i] = v1;
        c2[i] = v2;
    }
}

void mutate(std::vector<double>& c, Rng& rng, const NsgaConfig& config) {
    const double pm = config.mutation_probability > 0 ? config.mutation_probability : 1.0 / static_cast<double>(c.size());
    const double eta = config.mutation_eta;
    const double pow_ = 1.0 / (eta + 1.0);
    for (auto& y : c) {
        if (rng.uniform() > pm) continue;
        const double r = rng.uniform();
        double dq;
        if (r < 0.5) {
            const double xy = 1.0 - y;
            const double val = 2.0 * r + (1.0 - 2.0 * r) * std::pow(xy, eta + 1.0);
            dq = std::pow(val, pow_) - 1.0;
        } else {
            const double xy = y;
            const double val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * std::pow(xy, eta + 1.0);
            dq = 1.0 - std::pow(val, pow_);
        }
        y = std::clamp(y + dq, 0.0, 1.0);
    }
}

} // namespace

std::vector<std::vector<double>> make_offspring(const std::vector<Individual>& parents, std::size_t count, Rng& rng,
                                                const NsgaConfig& config) {
    std::vector<std::vector<double>> children;
    while (children.size() < count) {
        auto c1 = parents[tournament(parents, rng)].genes;
        auto c2 = parents[tournament(parents, rng)].genes;
        sbx(c1, c2, rng, config);
        mutate(c1, rng, config);
        mutate(c2, rng, config);
        children.push_back(std::move(c1));
        if (children.size() < count) children.push_back(std::move(c2));
    }
    return children;
}

namespace {

bool log_scaled(const ParamSpec& p, const NsgaConfig& config) {
    return p.lower > 0.0 && p.upper / p.lower >= config.log_scale_ratio;
}

} // namespace

ParamAssignment decode(const ParameterSpace& space, const std::vector<double>& genes, const NsgaConfig& config) {
    ParamAssignment out;
    for (std::size_t i = 0; i < space.size(); ++i) {
        const auto& p = space[i];
        const double u = std::clamp(genes[i], 0.0, 1.0);
        double x;
        if (log_scaled(p, config)) x = std::exp(std::log(p.lower) + u * (std::log(p.upper) - std::log(p.lower)));
        else x = p.lower + u * (p.upper - p.lower);
        out[p.name] = std::clamp(x, p.lower, p.upper);
    }
    return out;
}

std::vector<double> encode(const ParameterSpace& space, const ParamAssignment& params, const NsgaConfig& config) {
    std::vector<double> genes;
    for (const auto& p : space) {
        auto it = params.find(p.name);
        if (it == params.end()) throw Error(ErrorCode::PreconditionViolated, "initial point misses '" + p.name + "'");
        const double x = it->second;
        double u;
        if (log_scaled(p, config)) u = (std::log(x) - std::log(p.lower)) / (std::log(p.upper) - std::log(p.lower));
        else u = (x - p.lower) / (p.upper - p.lower);
        genes.push_back(std::clamp(u, 0.0, 1.0));
    }
    return genes;
}

// ---------------------------------------------------------------------------

TrialRecord make_record(const Evaluation& e, const SpecTable& specs, int trial_index, const ScoreConfig& config) {
    TrialRecord r;
    r.params = e.params;
    r.trial_index = trial_index;
    r.status = e.status;
    const bool ok = e.status == EvalStatus::Ok;
    if (ok) r.raw = e.metrics;
    r.feasible = ok;
    for (const auto& m : specs.metrics) {
        auto it = e.metrics.find(m.name);
        if (!ok || it == e.metrics.end() || !std::isfinite(it->second)) {
            r.violations.push_back(kFailedViolation);
            r.scores.push_back(0.0);
            if (m.gating) r.feasible = false;
            continue;
        }
        const double v = violation(it->second, m);
        r.violations.push_back(v);
        r.scores.push_back(score(it->second, m, config));
        if (m.gating && v > 0.0) r.feasible = false;
    }
    return r;
}

namespace {

void rank_population(std::vector<Individual>& pop) {
    for (const auto& front : fast_nondominated_sort(pop)) {
        const auto dist = crowding_distance(pop, front);
        for (std::size_t i = 0; i < front.size(); ++i) pop[front[i]].crowding = dist[i];
    }
}

double total_violation(const TrialRecord& r, const SpecTable& specs) {
    double total = 0.0;
    for (std::size_t i = 0; i < specs.metrics.size(); ++i) {
        if (specs.metrics[i].gating) total += r.violations[i];
    }
    if (r.status != EvalStatus::Ok) total = std::max(total, kFailedViolation);
    return total;
}

std::vector<TrialRecord> run_engine(const SizingProblem& problem, Backend& backend, EvaluationCache* cache,
                                    bool stop_at_feasible) {
    if (problem.budget < 1) throw Error(ErrorCode::PreconditionViolated, "budget must be at least 1");
    const auto& cfg = problem.nsga;
    if (cfg.population < 4 || cfg.population % 2 != 0)
        throw Error(ErrorCode::PreconditionViolated, "population size must be even and at least 4");
    const ParameterSpace space = backend.space(problem.deck);
    if (space.empty()) throw Error(ErrorCode::PreconditionViolated, "empty design space");
    for (const auto& m : problem.specs.metrics) {
        const bool measured = std::any_of(problem.deck.metrics.begin(), problem.deck.metrics.end(),
                                          [&](const MetricDef& d) { return d.name == m.name; });
        if (!measured) throw Error(ErrorCode::PreconditionViolated, "deck does not measure '" + m.name + "'");
    }

    Rng rng(problem.seed);
    std::vector<TrialRecord> records;
    bool found = false;

    auto evaluate_genes = [&](const std::vector<std::vector<double>>& genes) {
        std::vector<ParamAssignment> batch;
        for (const auto& g : genes) batch.push_back(decode(space, g, cfg));
        const auto evals = evaluate_batch(problem.deck, batch, backend, problem.workers, cache);
        std::vector<Individual> out;
        bool any_ok = false;
        for (std::size_t i = 0; i < evals.size(); ++i) {
            if (found) break;
            auto rec = make_record(evals[i], problem.specs, static_cast<int>(records.size()) + 1, problem.scoring);
            any_ok = any_ok || rec.status == EvalStatus::Ok;
            Individual ind;
            ind.genes = genes[i];
            for (double s : rec.scores) ind.objectives.push_back(-s);
            ind.violation = total_violation(rec, problem.specs);
            if (rec.feasible && stop_at_feasible) found = true;
            records.push_back(std::move(rec));
            out.push_back(std::move(ind));
        }
        if (!any_ok && !found)
            throw Error(ErrorCode::BackendDown, "every trial of a generation failed: " + evals.front().message);
        return out;
    };

    const auto n = static_cast<std::size_t>(cfg.population);
    std::vector<std::vector<double>> initial;
    for (const auto& p : problem.initial_points) {
        if (initial.size() >= static_cast<std::size_t>(problem.budget)) break;
        initial.push_back(encode(space, p, cfg));
    }
    while (initial.size() < std::min<std::size_t>(n, static_cast<std::size_t>(problem.budget))) {
        std::vector<double> g(space.size());
        for (auto& x : g) x = rng.uniform();
        initial.push_back(std::move(g));
    }
    std::vector<Individual> pop = evaluate_genes(initial);
    if (found) return records;
    rank_population(pop);

    while (static_cast<int>(records.size()) < problem.budget) {
        const std::size_t count = std::min<std::size_t>(n, static_cast<std::size_t>(problem.budget) - records.size());
        const auto children = make_offspring(pop, count, rng, cfg);
        auto offspring = evaluate_genes(children);
        if (found) break;
        pop = nsga2_step(pop, offspring, cfg);
    }
    return records;
}

} // namespace

IdentificationResult identify(const SizingProblem& problem, Backend& backend, EvaluationCache* cache) {
    IdentificationResult result;
    result.circuit_class = problem.deck.circuit_class;
    result.polarity = problem.deck.polarity;
    result.records = run_engine(problem, backend, cache, true);
    result.trials_used = static_cast<int>(result.records.size());
    for (const auto& r : result.records) {
        if (r.feasible) {
            result.first_feasible_trial = r.trial_index;
            break;
        }
    }
    result.accepted = result.first_feasible_trial.has_value() && *result.first_feasible_trial <= problem.budget;
    return result;
}

std::vector<TrialRecord> optimize(const SizingProblem& problem, Backend& backend, EvaluationCache* cache,
                                  std::vector<TrialRecord>* all) {
    auto records = run_engine(problem, backend, cache, false);
    std::vector<TrialRecord> feasible;
    for (const auto& r : records) {
        if (r.feasible) feasible.push_back(r);
    }
    if (all) *all = std::move(records);
    return feasible;
}

PolarityAssignment choose_polarity(const std::vector<IdentificationResult>& results) {
    const IdentificationResult* best = nullptr;
    for (const auto& r : results) {
        if (!r.accepted || !r.first_feasible_trial) continue;
        if (!best || *r.first_feasible_trial < *best->first_feasible_trial ||
            (*r.first_feasible_trial == *best->first_feasible_trial &&
             r.polarity.permutation_index < best->polarity.permutation_index))
            best = &r;
    }
    if (!best) throw Error(ErrorCode::NoFeasiblePolarity, "no polarity assignment reached feasibility");
    return best->polarity;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const TrialRecord& r) {
    j = nlohmann::json{{"trial", r.trial_index},
                       {"status", std::string(to_string(r.status))},
                       {"feasible", r.feasible},
                       {"params", r.params},
                       {"raw", r.raw},
                       {"violations", r.violations},
                       {"scores", r.scores}};
}

void from_json(const nlohmann::json& j, TrialRecord& r) {
    r.trial_index = j.at("trial").get<int>();
    const auto status = j.at("status").get<std::string>();
    r.status = EvalStatus::SimFailed;
    for (auto s : {EvalStatus::Ok, EvalStatus::SimFailed, EvalStatus::NonConvergent, EvalStatus::Timeout}) {
        if (to_string(s) == status) r.status = s;
    }
    r.feasible = j.at("feasible").get<bool>();
    r.params = j.at("params").get<ParamAssignment>();
    r.raw = j.at("raw").get<std::map<std::string, double>>();
    r.violations = j.at("violations").get<std::vector<double>>();
    r.scores = j.at("scores").get<std::vector<double>>();
}

std::string config_hash(const SizingProblem& problem) {
    nlohmann::json j;
    const auto& c = problem.nsga;
    j["nsga"] = {c.population, c.sbx_eta, c.sbx_probability, c.mutation_eta, c.mutation_probability, c.log_scale_ratio};
    j["span"] = problem.scoring.below_threshold_span;
    j["budget"] = problem.budget;
    j["seed"] = problem.seed;
    j["deck"] = emit_deck(problem.deck);
    j["specs"] = spec_tables_to_json({problem.specs});
    j["initial"] = problem.initial_points;
    return hex_hash(stable_hash(j.dump()));
}

void write_manifest(const std::string& path, const std::string& kind, const SizingProblem& problem,
                    const std::vector<TrialRecord>& records) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot write manifest '" + path + "'");
        nlohmann::json header{{"kind", kind}, {"seed", problem.seed}, {"budget", problem.budget},
                              {"config_hash", config_hash(problem)}};
        out << header.dump() << '\n';
        for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
        if (!out) throw Error(ErrorCode::IoError, "short write to manifest '" + path + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error(ErrorCode::IoError, "cannot move manifest into place: " + path);
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read manifest '" + path + "'");
    Manifest m;
    std::string line;
    try {
        if (!std::getline(in, line)) throw Error(ErrorCode::SchemaMismatch, "empty manifest '" + path + "'");
        const auto header = nlohmann::json::parse(line);
        m.kind = header.at("kind").get<std::string>();
        m.seed = header.at("seed").get<std::uint64_t>();
        m.budget = header.at("budget").get<int>();
        m.config_hash = header.at("config_hash").get<std::string>();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            m.records.push_back(nlohmann::json::parse(line).get<TrialRecord>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, "manifest '" + path + "': " + e.what());
    }
    return m;
}

} // namespace amsq
