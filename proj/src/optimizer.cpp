#include "surfopt/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "surfopt/errors.hpp"
#include "surfopt/log.hpp"

namespace surfopt::optimizer {

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

bool near_any(const Eigen::VectorXd& z, std::span<const Eigen::VectorXd> pts) {
    for (const auto& p : pts) {
        if ((p - z).norm() < kDuplicateDistance) return true;
    }
    return false;
}

// indices sorted best first; equal scores keep index order
std::vector<std::size_t> order_by(const std::vector<Score>& s) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return better(s[a], s[b]); });
    return idx;
}

std::vector<Score> score_all(const ScoreFn& score, std::span<const Eigen::VectorXd> pts, int jobs) {
    std::vector<Score> out(pts.size());
    uncertainty::parallel_for(static_cast<int>(pts.size()), jobs,
                              [&](int i) { out[static_cast<std::size_t>(i)] = score(pts[static_cast<std::size_t>(i)]); });
    return out;
}

}  // namespace

std::string_view to_string(Direction d) { return d == Direction::maximize ? "maximize" : "minimize"; }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double expected_improvement(double mu, double sigma, const AcquisitionParams& params) {
    if (!(sigma >= 0.0)) throw ConfigError("EI needs sigma >= 0");
    const double d = sign(params.direction) * mu - params.best_value - params.epsilon;
    if (sigma == 0.0) return std::max(d, 0.0);
    const double z = d / sigma;
    return std::max(d * normal_cdf(z) + sigma * normal_pdf(z), 0.0);
}

double LatentModel::mean_gradient(const Eigen::VectorXd&, Eigen::VectorXd&) const {
    throw ConfigError("this predictor has no gradient");
}

PredictorModel::PredictorModel(uncertainty::UncertainPredictor predictor, std::shared_ptr<const Parameterizer> param)
    : predictor_(std::move(predictor)), param_(std::move(param)) {
    if (!param_) throw ConfigError("surrogate predictors need a shape parameterizer");
}

double PredictorModel::mean(const Eigen::VectorXd& z) const {
    const std::vector<double> est = predictor_.estimates(param_->mesh(z));
    double sum = 0.0;
    for (double e : est) sum += e;
    return sum / static_cast<double>(est.size());
}

Prediction PredictorModel::stats(const Eigen::VectorXd& z) const {
    const std::vector<double> est = predictor_.estimates(param_->mesh(z));
    const uncertainty::Stats s = uncertainty::estimate_stats(est);
    return {s.mu, s.sigma2};
}

double PredictorModel::mean_gradient(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const {
    return predictor_.mean_gradient(z, *param_, grad);
}

bool better(const Score& a, const Score& b) {
    if (a.primary != b.primary) return a.primary > b.primary;
    return a.secondary > b.secondary;
}

// ---------------------------------------------------------------------------
// sampling

std::vector<Eigen::VectorXd> latin_hypercube(int n, const Bounds& bounds, std::mt19937_64& rng) {
    check_bounds(bounds);
    if (n < 0) throw ConfigError("sample count must be >= 0");
    const auto d = static_cast<Eigen::Index>(bounds.size());
    std::vector<Eigen::VectorXd> out(static_cast<std::size_t>(n), Eigen::VectorXd(d));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < d; ++k) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const Bound& b = bounds[static_cast<std::size_t>(k)];
        for (int i = 0; i < n; ++i) {
            const double u = (perm[static_cast<std::size_t>(i)] + unif(rng)) / n;
            out[static_cast<std::size_t>(i)][k] = std::min(b.hi, b.lo + u * b.width());
        }
    }
    return out;
}

std::vector<Eigen::VectorXd> uniform_samples(int n, const Bounds& bounds, std::mt19937_64& rng) {
    check_bounds(bounds);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Eigen::VectorXd> out;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd z(static_cast<Eigen::Index>(bounds.size()));
        for (std::size_t k = 0; k < bounds.size(); ++k) {
            z[static_cast<Eigen::Index>(k)] = std::min(bounds[k].hi, bounds[k].lo + unif(rng) * bounds[k].width());
        }
        out.push_back(std::move(z));
    }
    return out;
}

// ---------------------------------------------------------------------------
// GA

void GaConfig::validate() const {
    if (population < 2) throw ConfigError("GA population must be >= 2");
    if (generations < 0) throw ConfigError("GA generations must be >= 0");
    if (tournament_size < 1) throw ConfigError("tournament size must be >= 1");
    if (!(mutation_sigma >= 0.0)) throw ConfigError("mutation sigma must be >= 0");
    if (!(blend_alpha >= 0.0)) throw ConfigError("blend alpha must be >= 0");
}

std::vector<Eigen::VectorXd> ga_propose(const ScoreFn& score, const Bounds& bounds, const GaConfig& cfg, int count,
                                        std::span<const Eigen::VectorXd> initial,
                                        std::span<const Eigen::VectorXd> exclude, int jobs) {
    cfg.validate();
    check_bounds(bounds);
    if (count < 1) throw ConfigError("GA must propose at least one candidate");
    if (cfg.population < count) throw ConfigError("GA population must be >= the number of proposals");
    std::mt19937_64 rng(cfg.seed);
    const auto d = static_cast<Eigen::Index>(bounds.size());

    std::vector<Eigen::VectorXd> pop;
    for (const auto& z : initial) {
        if (static_cast<int>(pop.size()) >= cfg.population) break;
        pop.push_back(clip_to_bounds(z, bounds));
    }
    for (auto& z : latin_hypercube(cfg.population - static_cast<int>(pop.size()), bounds, rng)) pop.push_back(std::move(z));
    std::vector<Score> fit = score_all(score, pop, jobs);

    std::vector<Eigen::VectorXd> archive = pop;
    std::vector<Score> archive_fit = fit;
    std::uniform_int_distribution<std::size_t> pick(0, pop.size() - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto tournament = [&]() -> const Eigen::VectorXd& {
        std::size_t best = pick(rng);
        for (int t = 1; t < cfg.tournament_size; ++t) {
            const std::size_t c = pick(rng);
            if (better(fit[c], fit[best]) || (!better(fit[best], fit[c]) && c < best)) best = c;
        }
        return pop[best];
    };

    for (int gen = 0; gen < cfg.generations; ++gen) {
        std::vector<Eigen::VectorXd> kids;
        kids.reserve(pop.size());
        for (std::size_t i = 0; i < pop.size(); ++i) {
            const Eigen::VectorXd& a = tournament();
            const Eigen::VectorXd& b = tournament();
            Eigen::VectorXd child(d);
            for (Eigen::Index k = 0; k < d; ++k) {
                const double lo = std::min(a[k], b[k]);
                const double hi = std::max(a[k], b[k]);
                const double span = hi - lo;
                const double width = bounds[static_cast<std::size_t>(k)].width();
                child[k] = lo - cfg.blend_alpha * span + unif(rng) * (1.0 + 2.0 * cfg.blend_alpha) * span +
                           cfg.mutation_sigma * width * gauss(rng);
            }
            kids.push_back(clip_to_bounds(std::move(child), bounds));
        }
        const std::vector<Score> kid_fit = score_all(score, kids, jobs);
        archive.insert(archive.end(), kids.begin(), kids.end());
        archive_fit.insert(archive_fit.end(), kid_fit.begin(), kid_fit.end());

        std::vector<Eigen::VectorXd> merged = pop;
        merged.insert(merged.end(), kids.begin(), kids.end());
        std::vector<Score> merged_fit = fit;
        merged_fit.insert(merged_fit.end(), kid_fit.begin(), kid_fit.end());
        const std::vector<std::size_t> idx = order_by(merged_fit);
        std::vector<Eigen::VectorXd> next;
        std::vector<Score> next_fit;
        for (std::size_t i = 0; i < pop.size(); ++i) {
            next.push_back(merged[idx[i]]);
            next_fit.push_back(merged_fit[idx[i]]);
        }
        pop = std::move(next);
        fit = std::move(next_fit);
    }

    // best unique individuals: final population first, then the archive
    std::vector<Eigen::VectorXd> out;
    auto take = [&](const std::vector<Eigen::VectorXd>& pts, const std::vector<Score>& s) {
        for (std::size_t i : order_by(s)) {
            if (static_cast<int>(out.size()) >= count) return;
            if (near_any(pts[i], exclude) || near_any(pts[i], out)) continue;
            out.push_back(pts[i]);
        }
    };
    take(pop, fit);
    take(archive, archive_fit);
    return out;
}

// ---------------------------------------------------------------------------
// gradient proposals

Eigen::VectorXd gradient_propose(const Eigen::VectorXd& z0, const LatentModel& model, Direction dir,
                                 const Bounds& bounds, int steps, double step_size, double lambda,
                                 std::span<const Eigen::VectorXd> training_z, int k, double max_step) {
    check_in_bounds(z0, bounds);
    if (!(lambda >= 0.0)) throw ConfigError("r_aux weight must be >= 0");
    if (steps < 0 || !(step_size > 0.0) || !(max_step > 0.0)) throw ConfigError("invalid descent settings");
    const auto d = z0.size();
    Eigen::VectorXd width(d);
    for (Eigen::Index i = 0; i < d; ++i) width[i] = bounds[static_cast<std::size_t>(i)].width();
    Eigen::VectorXd z = z0;
    Eigen::VectorXd g;
    for (int s = 0; s < steps; ++s) {
        model.mean_gradient(z, g);
        Eigen::VectorXd gz = -sign(dir) * g;
        if (lambda > 0.0) gz += lambda * physics::r_aux_gradient(z, training_z, k);
        Eigen::VectorXd step = step_size * gz.cwiseProduct(width);  // unit-box coordinates
        if (!step.allFinite()) break;
        const double len = step.norm();
        if (len == 0.0) break;
        if (len > max_step) step *= max_step / len;
        z = clip_to_bounds(z - step.cwiseProduct(width), bounds);
    }
    return z;
}

// ---------------------------------------------------------------------------
// loop

void BOConfig::validate() const {
    if (init_size < 1 || proposals < 1 || retained < 1) throw ConfigError("BO counts must be >= 1");
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (retained > proposals) throw ConfigError("retained must not exceed proposals");
    if (!(lambda >= 0.0)) throw ConfigError("r_aux weight must be >= 0");
    if (k_aux < 1) throw ConfigError("k_aux must be >= 1");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (gradient.enabled && (gradient.steps < 0 || !(gradient.step_size > 0.0) || gradient.starts < 0)) {
        throw ConfigError("invalid gradient proposal settings");
    }
    ga.validate();
    if (ga.population < proposals) throw ConfigError("GA population must be >= proposals");
}

std::vector<std::size_t> rank_candidates(std::span<const Eigen::VectorXd> candidates, const LatentModel& model,
                                         bool use_ei, const AcquisitionParams& params, std::vector<Score>* scores,
                                         int jobs) {
    const ScoreFn fn = [&](const Eigen::VectorXd& z) {
        if (!use_ei) {
            const double m = sign(params.direction) * model.mean(z);
            return Score{m, m};
        }
        const Prediction p = model.stats(z);
        return Score{expected_improvement(p.mean, std::sqrt(std::max(p.sigma2, 0.0)), params),
                     sign(params.direction) * p.mean};
    };
    std::vector<Score> s = score_all(fn, candidates, jobs);
    std::vector<std::size_t> idx = order_by(s);
    if (scores != nullptr) *scores = std::move(s);
    return idx;
}

namespace {

struct Simulated {
    bool ok = false;
    FieldSample sample;
    std::string error;
};

void simulate_into(RunHistory& h, const Problem& problem, const std::vector<Eigen::VectorXd>& zs, int iteration,
                   int jobs, IterationRecord& rec) {
    std::vector<Simulated> results(zs.size());
    uncertainty::parallel_for(static_cast<int>(zs.size()), jobs, [&](int i) {
        auto& out = results[static_cast<std::size_t>(i)];
        try {
            out.sample = problem.simulate(zs[static_cast<std::size_t>(i)]);
            if (!std::isfinite(out.sample.performance)) throw SolverError("non-finite performance");
            out.ok = true;
        } catch (const std::exception& e) {
            out.error = e.what();
        }
    });
    const double sg = sign(problem.direction);
    for (std::size_t i = 0; i < zs.size(); ++i) {
        rec.retained_z.push_back(zs[i]);
        if (!results[i].ok) {
            log::info("iteration " + std::to_string(iteration) + ": simulation failed: " + results[i].error);
            h.failures.push_back({iteration, zs[i], results[i].error});
            rec.retained_r.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const double r = results[i].sample.performance;
        rec.retained_r.push_back(r);
        if (h.r.empty() || sg * r > sg * h.best_r) {
            h.best_r = r;
            h.best_z = zs[i];
        }
        h.z.push_back(zs[i]);
        h.r.push_back(r);
        h.samples.push_back(std::move(results[i].sample));
    }
    rec.sim_calls = h.sim_calls();
    rec.best_r = h.best_r;
}

}  // namespace

RunHistory run_loop(const BOConfig& cfg, const Problem& problem, const Strategy& strategy) {
    cfg.validate();
    check_bounds(problem.bounds);
    if (!problem.simulate) throw ConfigError("problem has no simulator");
    const bool random = !strategy.fit;
    RunHistory h;
    h.method = strategy.method;
    h.direction = problem.direction;
    const double sg = sign(problem.direction);
    std::mt19937_64 rng(mix(cfg.seed));
    using clock = std::chrono::steady_clock;

    {
        const auto t0 = clock::now();
        IterationRecord rec;
        rec.iteration = 0;
        const auto init = random ? uniform_samples(cfg.init_size, problem.bounds, rng)
                                 : latin_hypercube(cfg.init_size, problem.bounds, rng);
        simulate_into(h, problem, init, 0, cfg.jobs, rec);
        if (h.r.empty()) throw SolverError("every simulation of the initial design failed");
        rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        log::info(h.method + " iteration 0: " + std::to_string(rec.sim_calls) + " sims, best " + std::to_string(h.best_r));
        h.records.push_back(std::move(rec));
    }

    for (int it = 1; it <= cfg.iterations; ++it) {
        if (cfg.target && sg * h.best_r >= sg * *cfg.target) break;
        const auto t0 = clock::now();
        IterationRecord rec;
        rec.iteration = it;
        std::vector<Eigen::VectorXd> chosen;

        if (random) {
            chosen = uniform_samples(cfg.retained, problem.bounds, rng);
            rec.acquisition.assign(chosen.size(), 0.0);
        } else {
            const std::unique_ptr<LatentModel> model = strategy.fit(h, it);
            const auto [lo, hi] = std::minmax_element(h.r.begin(), h.r.end());
            AcquisitionParams params;
            params.direction = problem.direction;
            params.best_value = sg * h.best_r;
            params.epsilon = cfg.epsilon >= 0.0 ? cfg.epsilon : 0.01 * (*hi - *lo);
            const ScoreFn score = [&](const Eigen::VectorXd& z) {
                if (!strategy.use_ei) {
                    const double m = sg * model->mean(z);
                    return Score{m, m};
                }
                const Prediction p = model->stats(z);
                return Score{expected_improvement(p.mean, std::sqrt(std::max(p.sigma2, 0.0)), params), sg * p.mean};
            };

            // incumbents seed the GA
            std::vector<std::size_t> by_r(h.r.size());
            std::iota(by_r.begin(), by_r.end(), std::size_t{0});
            std::stable_sort(by_r.begin(), by_r.end(), [&](std::size_t a, std::size_t b) { return sg * h.r[a] > sg * h.r[b]; });
            std::vector<Eigen::VectorXd> seeds;
            for (std::size_t i = 0; i < std::min<std::size_t>(5, by_r.size()); ++i) seeds.push_back(h.z[by_r[i]]);

            GaConfig ga = cfg.ga;
            ga.seed = mix(cfg.ga.seed ^ mix(cfg.seed) ^ static_cast<std::uint64_t>(it));
            std::vector<Eigen::VectorXd> pool = ga_propose(score, problem.bounds, ga, cfg.proposals, seeds, h.z, cfg.jobs);

            if (cfg.gradient.enabled && model->has_gradient()) {
                const auto starts = std::min<std::size_t>(static_cast<std::size_t>(cfg.gradient.starts), pool.size());
                std::vector<Eigen::VectorXd> refined(starts);
                const bool aux = cfg.lambda > 0.0 && static_cast<int>(h.z.size()) >= cfg.k_aux;
                uncertainty::parallel_for(static_cast<int>(starts), cfg.jobs, [&](int i) {
                    refined[static_cast<std::size_t>(i)] =
                        gradient_propose(pool[static_cast<std::size_t>(i)], *model, problem.direction, problem.bounds,
                                         cfg.gradient.steps, cfg.gradient.step_size, aux ? cfg.lambda : 0.0, h.z,
                                         cfg.k_aux);
                });
                for (auto& z : refined) {
                    if (!near_any(z, h.z) && !near_any(z, pool)) pool.push_back(std::move(z));
                }
            }

            std::vector<Score> scores;
            const std::vector<std::size_t> idx = rank_candidates(pool, *model, strategy.use_ei, params, &scores, cfg.jobs);
            for (std::size_t i = 0; i < idx.size() && static_cast<int>(chosen.size()) < cfg.retained; ++i) {
                chosen.push_back(pool[idx[i]]);
                rec.acquisition.push_back(scores[idx[i]].primary);
            }
        }

        simulate_into(h, problem, chosen, it, cfg.jobs, rec);
        rec.mean_acquisition = rec.acquisition.empty()
                                   ? 0.0
                                   : std::accumulate(rec.acquisition.begin(), rec.acquisition.end(), 0.0) /
                                         static_cast<double>(rec.acquisition.size());
        rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        log::info(h.method + " iteration " + std::to_string(it) + ": " + std::to_string(rec.sim_calls) +
                  " sims, best " + std::to_string(h.best_r));
        h.records.push_back(std::move(rec));
    }
    return h;
}

RunHistory bo_run(const BOConfig& cfg, const Problem& problem) {
    if (!problem.param) throw ConfigError("surrogate BO needs a shape parameterizer");
    uncertainty::PredictorConfig pc = cfg.predictor;
    pc.task = problem.task;
    pc.jobs = cfg.jobs;
    pc.validate();
    Strategy s;
    s.method = pc.mode == uncertainty::Mode::ensemble ? "ens" : "mcd";
    s.fit = [pc, param = problem.param](const RunHistory& data, int) -> std::unique_ptr<LatentModel> {
        return std::make_unique<PredictorModel>(uncertainty::fit(data.samples, pc), param);
    };
    return run_loop(cfg, problem, s);
}

}  // namespace surfopt::optimizer
