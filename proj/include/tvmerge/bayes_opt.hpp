#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace tvmerge {

// 1-D Bayesian optimization of the merge weight lambda: a squared-exponential
// GP surrogate with expected-improvement acquisition, evaluated on a dense
// deterministic candidate grid. Ten evaluations over [0,1] by default.
struct OptimizerConfig {
    double lower = 0.0;
    double upper = 1.0;
    int budget = 10;
    int init_points = 3;
    std::uint64_t seed = 0;
    double noise_floor = 1e-6;
    double kernel_lengthscale = 0.2;
    double kernel_variance = 1.0;

    void validate() const {
        if (!(lower < upper)) throw std::runtime_error("degenerate optimizer bounds");
        if (budget < 1 || init_points < 1)
            throw std::runtime_error("budget and init_points must be positive");
        if (noise_floor <= 0 || kernel_lengthscale <= 0 || kernel_variance <= 0)
            throw std::runtime_error("kernel parameters must be positive");
    }
};

struct Trial {
    double lambda = 0.0;
    double score = 0.0;  // WER: lower is better
};

struct TrialLog {
    std::vector<Trial> trials;
    double best_lambda = 0.0;
    double best_score = 0.0;

    void record(double lambda, double score) {
        trials.push_back({lambda, score});
        if (trials.size() == 1 || score < best_score ||
            (score == best_score && lambda < best_lambda)) {
            best_lambda = lambda;
            best_score = score;
        }
    }
};

// Thrown when the objective returns a non-finite value; carries the log of
// the evaluations that did complete.
struct OptimizeAborted : std::runtime_error {
    TrialLog partial;
    OptimizeAborted(std::string msg, TrialLog log)
        : std::runtime_error(std::move(msg)), partial(std::move(log)) {}
};

namespace detail {

struct GpModel {
    const OptimizerConfig* cfg;
    std::vector<double> xs;
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::VectorXd alpha;  // (K + sigma^2 I)^-1 y

    double kernel(double a, double b) const {
        const double d = (a - b) / cfg->kernel_lengthscale;
        return cfg->kernel_variance * std::exp(-0.5 * d * d);
    }

    void fit(const TrialLog& log, const OptimizerConfig& config) {
        cfg = &config;
        const auto n = static_cast<Eigen::Index>(log.trials.size());
        xs.resize(log.trials.size());
        Eigen::MatrixXd K(n, n);
        Eigen::VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            xs[i] = log.trials[i].lambda;
            y[i] = log.trials[i].score;
        }
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) K(i, j) = kernel(xs[i], xs[j]);
        K.diagonal().array() += config.noise_floor;
        llt.compute(K);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("singular GP kernel matrix");
        alpha = llt.solve(y);
    }

    std::pair<double, double> posterior(double query) const {
        const auto n = static_cast<Eigen::Index>(xs.size());
        Eigen::VectorXd kstar(n);
        for (Eigen::Index i = 0; i < n; ++i) kstar[i] = kernel(query, xs[i]);
        const double mean = kstar.dot(alpha);
        const double var = kernel(query, query) - kstar.dot(llt.solve(kstar));
        return {mean, std::sqrt(std::max(var, 0.0))};
    }
};

inline double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

inline std::pair<double, double> gp_posterior(const TrialLog& trials, double query,
                                              const OptimizerConfig& config = {}) {
    if (trials.trials.empty()) throw std::runtime_error("gp_posterior needs at least one trial");
    detail::GpModel gp;
    gp.fit(trials, config);
    return gp.posterior(query);
}

// Expected improvement for minimization.
inline double expected_improvement(double mean, double stddev, double best_so_far) {
    if (stddev < 0) throw std::runtime_error("negative stddev");
    const double gap = best_so_far - mean;
    if (stddev == 0.0) return std::max(gap, 0.0);
    const double z = gap / stddev;
    return gap * detail::norm_cdf(z) + stddev * detail::norm_pdf(z);
}

inline TrialLog optimize(const std::function<double(double)>& objective,
                         const OptimizerConfig& config) {
    config.validate();
    TrialLog log;
    auto evaluate = [&](double lambda) {
        const double score = objective(lambda);
        if (!std::isfinite(score))
            throw OptimizeAborted("objective returned non-finite value at lambda=" +
                                      std::to_string(lambda),
                                  log);
        log.record(lambda, score);
    };

    // Initial design: evenly spaced including both endpoints (midpoint when
    // only one initial point is allowed). The budget caps the design, so a
    // budget of 1 evaluates just the lower end.
    const double span = config.upper - config.lower;
    if (config.init_points == 1) {
        evaluate(config.lower + 0.5 * span);
    } else {
        for (int i = 0; i < config.init_points &&
                        static_cast<int>(log.trials.size()) < config.budget;
             ++i)
            evaluate(config.lower + span * i / (config.init_points - 1));
    }

    while (static_cast<int>(log.trials.size()) < config.budget) {
        detail::GpModel gp;
        gp.fit(log, config);

        // Deterministic acquisition: dense grid plus midpoints of adjacent
        // evaluated points; ties resolve toward the smaller lambda.
        std::vector<double> candidates;
        candidates.reserve(512 + log.trials.size());
        for (int i = 0; i < 512; ++i)
            candidates.push_back(config.lower + span * i / 511.0);
        std::vector<double> seen;
        for (const Trial& t : log.trials) seen.push_back(t.lambda);
        std::sort(seen.begin(), seen.end());
        for (std::size_t i = 0; i + 1 < seen.size(); ++i)
            candidates.push_back(0.5 * (seen[i] + seen[i + 1]));
        std::sort(candidates.begin(), candidates.end());

        double best_ei = -1.0;
        double best_x = config.lower;
        for (double x : candidates) {
            const auto [mean, stddev] = gp.posterior(x);
            const double ei = expected_improvement(mean, stddev, log.best_score);
            if (ei > best_ei) {
                best_ei = ei;
                best_x = x;
            }
        }
        evaluate(best_x);
    }
    return log;
}

// JSON lines: one trial per line, then a summary line.
inline void write_trial_log(const TrialLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t i = 0; i < log.trials.size(); ++i) {
        nlohmann::json line = {{"lambda", log.trials[i].lambda},
                               {"wer", log.trials[i].score},
                               {"index", i}};
        out << line.dump() << "\n";
    }
    nlohmann::json summary = {{"best_lambda", log.best_lambda}, {"best_wer", log.best_score}};
    out << summary.dump() << "\n";
}

inline TrialLog read_trial_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    TrialLog log;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        if (j.contains("lambda")) log.record(j.at("lambda"), j.at("wer"));
    }
    return log;
}

}  // namespace tvmerge
