// tvmerge: checkpoint-level model merging for cross-lingual ASR transfer.
// Subcommands wire the library into the working pipeline:
//   diff -> merge -> tune -> report (wer / sim / corr), plus prep and langs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tvmerge/bayes_opt.hpp"
#include "tvmerge/checkpoint_io.hpp"
#include "tvmerge/dataprep.hpp"
#include "tvmerge/evaluator.hpp"
#include "tvmerge/lang_table.hpp"
#include "tvmerge/lora.hpp"
#include "tvmerge/metrics.hpp"
#include "tvmerge/task_vector.hpp"
#include "tvmerge/tsv.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tvmerge;

namespace {

int g_log_level = 1;  // 0 quiet, 1 info, 2 debug

void log_info(const std::string& msg) {
    if (g_log_level >= 1) std::cerr << "[tvmerge] " << msg << "\n";
}

// Subcommand parameters resolved from the JSON config file plus flag
// overrides; echoed (as reparseable JSON) before execution.
struct RunConfig {
    OptimizerConfig optimizer;
    MergeSpec merge;
    std::string eval_template;
    double eval_timeout_s = 600.0;
    std::vector<std::string> env_allowlist = {"PATH", "HOME", "TMPDIR"};
    std::string rules_path;
    std::size_t cap = 100000;

    json to_json() const {
        return {{"optimizer",
                 {{"bounds", {optimizer.lower, optimizer.upper}},
                  {"budget", optimizer.budget},
                  {"init_points", optimizer.init_points},
                  {"seed", optimizer.seed},
                  {"noise_floor", optimizer.noise_floor},
                  {"kernel_lengthscale", optimizer.kernel_lengthscale},
                  {"kernel_variance", optimizer.kernel_variance}}},
                {"merge",
                 {{"lambda", merge.lambda},
                  {"mode", merge.mode == LoraMergeMode::PER_MATRIX ? "PER_MATRIX" : "DELTA_SPACE"},
                  {"name_policy",
                   merge.name_policy == NamePolicy::STRICT ? "STRICT" : "INTERSECTION"}}},
                {"evaluator",
                 {{"template", eval_template},
                  {"timeout_s", eval_timeout_s},
                  {"env_allowlist", env_allowlist}}},
                {"rules", rules_path},
                {"cap", cap}};
    }

    void apply_json(const json& j) {
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            if (o.contains("bounds")) {
                optimizer.lower = o.at("bounds").at(0);
                optimizer.upper = o.at("bounds").at(1);
            }
            optimizer.budget = o.value("budget", optimizer.budget);
            optimizer.init_points = o.value("init_points", optimizer.init_points);
            optimizer.seed = o.value("seed", optimizer.seed);
            optimizer.noise_floor = o.value("noise_floor", optimizer.noise_floor);
            optimizer.kernel_lengthscale =
                o.value("kernel_lengthscale", optimizer.kernel_lengthscale);
            optimizer.kernel_variance = o.value("kernel_variance", optimizer.kernel_variance);
        }
        if (j.contains("merge")) {
            const auto& m = j.at("merge");
            merge.lambda = m.value("lambda", merge.lambda);
            if (m.contains("mode")) {
                const std::string mode = m.at("mode");
                if (mode == "PER_MATRIX")
                    merge.mode = LoraMergeMode::PER_MATRIX;
                else if (mode == "DELTA_SPACE")
                    merge.mode = LoraMergeMode::DELTA_SPACE;
                else
                    throw std::runtime_error("unknown merge mode " + mode);
            }
            if (m.contains("name_policy")) {
                const std::string p = m.at("name_policy");
                if (p == "STRICT")
                    merge.name_policy = NamePolicy::STRICT;
                else if (p == "INTERSECTION")
                    merge.name_policy = NamePolicy::INTERSECTION;
                else
                    throw std::runtime_error("unknown name policy " + p);
            }
        }
        if (j.contains("evaluator")) {
            const auto& e = j.at("evaluator");
            eval_template = e.value("template", eval_template);
            eval_timeout_s = e.value("timeout_s", eval_timeout_s);
            if (e.contains("env_allowlist"))
                env_allowlist = e.at("env_allowlist").get<std::vector<std::string>>();
        }
        rules_path = j.value("rules", rules_path);
        cap = j.value("cap", cap);
    }
};

RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config " + path);
        json j;
        in >> j;
        cfg.apply_json(j);
    }
    return cfg;
}

std::vector<CleanRule> resolve_rules(const RunConfig& cfg) {
    if (cfg.rules_path.empty()) return default_clean_rules();
    return load_clean_rules(cfg.rules_path);
}

MockObjective parse_mock_spec(const std::string& spec) {
    // "optimum=0.25,floor=0.1,curvature=1"
    MockObjective obj;
    std::size_t pos = 0;
    while (pos < spec.size()) {
        std::size_t comma = spec.find(',', pos);
        if (comma == std::string::npos) comma = spec.size();
        const std::string item = spec.substr(pos, comma - pos);
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos) throw std::runtime_error("bad mock spec item: " + item);
        const std::string key = item.substr(0, eq);
        const double value = std::stod(item.substr(eq + 1));
        if (key == "optimum")
            obj.optimum = value;
        else if (key == "floor")
            obj.floor = value;
        else if (key == "curvature")
            obj.curvature = value;
        else
            throw std::runtime_error("unknown mock spec key: " + key);
        pos = comma + 1;
    }
    return obj;
}

int run_diff(const std::string& base, const std::string& finetuned, const std::string& out) {
    const TensorMap theta_base = read_checkpoint(base);
    const TensorMap theta_ft = read_checkpoint(finetuned);
    const TaskVector tv = compute_task_vector(theta_ft, theta_base);
    write_task_vector(tv, out);
    json report = {{"tensors", tv.deltas.size()}, {"l2_norm", l2_norm(tv)}};
    std::cout << report.dump() << "\n";
    return 0;
}

int run_merge(const RunConfig& cfg, const std::string& target, const std::string& tv_path,
              const std::string& support_adapter_path, const std::string& base_path,
              const std::string& out) {
    if (tv_path.empty() == support_adapter_path.empty())
        throw std::runtime_error("give exactly one of --task-vector / --support-adapter");
    if (!tv_path.empty()) {
        const TensorMap theta_target = read_checkpoint(target);
        const TaskVector tv = read_task_vector(tv_path);
        const TensorMap merged =
            apply_task_vector(theta_target, tv, cfg.merge.lambda, cfg.merge.name_policy);
        write_checkpoint(merged, out);
        log_info("merged checkpoint written, lambda=" + std::to_string(cfg.merge.lambda) +
                 " base_fingerprint=" + tv.base_fingerprint);
        return 0;
    }
    const LoraAdapter adapter_T = read_adapter(target);
    const LoraAdapter adapter_S = read_adapter(support_adapter_path);
    if (cfg.merge.mode == LoraMergeMode::PER_MATRIX && base_path.empty()) {
        write_adapter(merge_lora(adapter_T, adapter_S, cfg.merge), out);
        log_info("merged adapter written, lambda=" + std::to_string(cfg.merge.lambda));
    } else {
        if (base_path.empty())
            throw std::runtime_error("DELTA_SPACE merges need --base to materialize against");
        const TensorMap base = read_checkpoint(base_path);
        write_checkpoint(materialize_merged(adapter_T, adapter_S, cfg.merge, base), out);
        log_info("materialized merged checkpoint written, lambda=" +
                 std::to_string(cfg.merge.lambda) + " mode=" +
                 (cfg.merge.mode == LoraMergeMode::PER_MATRIX ? "PER_MATRIX" : "DELTA_SPACE"));
    }
    return 0;
}

int run_tune(const RunConfig& cfg, const std::string& target, const std::string& tv_path,
             const std::string& manifest, const std::string& lang, const std::string& mock_spec,
             const std::string& trial_log_path, const std::string& out) {
    const TensorMap theta_target = read_checkpoint(target);
    const TaskVector tv = read_task_vector(tv_path);

    EvalBackend backend;
    if (!mock_spec.empty()) {
        backend = make_mock_backend(parse_mock_spec(mock_spec));
    } else {
        if (cfg.eval_template.empty())
            throw std::runtime_error("no evaluator: give --mock or an evaluator template");
        if (manifest.empty()) throw std::runtime_error("external evaluation needs --manifest");
        ExternalEvalOptions opts;
        opts.timeout_s = cfg.eval_timeout_s;
        opts.env_allowlist = cfg.env_allowlist;
        opts.clean_rules = resolve_rules(cfg);
        EvalRequest req;
        req.manifest_path = manifest;
        req.proxy_language = lang;
        req.output_path = fs::temp_directory_path() / "tvmerge-hyps.tsv";
        backend = make_external_backend(cfg.eval_template, req, opts);
    }

    const fs::path workdir = fs::temp_directory_path() / ("tvmerge-tune-" + std::to_string(::getpid()));
    fs::create_directories(workdir);
    std::map<double, double> cache;  // exact-hit WER cache within this run
    auto objective = [&](double lambda) {
        auto hit = cache.find(lambda);
        if (hit != cache.end()) return hit->second;
        const fs::path ckpt = workdir / "candidate.ckpt";
        write_checkpoint(apply_task_vector(theta_target, tv, lambda, cfg.merge.name_policy),
                         ckpt);
        const double score = backend(ckpt, lambda);
        cache.emplace(lambda, score);
        return score;
    };

    TrialLog log;
    try {
        log = optimize(objective, cfg.optimizer);
    } catch (const OptimizeAborted& e) {
        if (!trial_log_path.empty()) write_trial_log(e.partial, trial_log_path);
        fs::remove_all(workdir);
        throw std::runtime_error(std::string("tuning aborted: ") + e.what() +
                                 " (partial trial log preserved)");
    }
    if (!trial_log_path.empty()) write_trial_log(log, trial_log_path);
    if (!out.empty())
        write_checkpoint(
            apply_task_vector(theta_target, tv, log.best_lambda, cfg.merge.name_policy), out);

    const double wer_target_only = objective(0.0);
    fs::remove_all(workdir);
    json report = {{"best_lambda", log.best_lambda},
                   {"best_wer", log.best_score},
                   {"delta_wer", log.best_score - wer_target_only},
                   {"trials", log.trials.size()}};
    std::cout << report.dump() << "\n";
    return 0;
}

int run_wer(const std::string& refs_path, const std::string& hyps_path) {
    const WerReport report = wer(read_utterance_tsv(refs_path), read_utterance_tsv(hyps_path));
    std::cout << report.to_json().dump() << "\n";
    return 0;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(strip_cr(line));
    return lines;
}

int run_sim(const std::string& corpus_a, const std::string& corpus_b) {
    const auto [u, v] = token_count_pair(read_lines(corpus_a), read_lines(corpus_b));
    json report = {{"cosine_similarity", cosine_similarity(u, v)}};
    std::cout << report.dump() << "\n";
    return 0;
}

int run_corr(const std::string& table_path) {
    // two-column TSV of (similarity, delta_wer); a header row is skipped
    std::vector<double> xs, ys;
    for (const auto& line : read_lines(table_path)) {
        if (line.empty()) continue;
        const auto fields = split_tsv_line(line);
        if (fields.size() < 2) throw std::runtime_error("corr table rows need two columns");
        try {
            const double x = std::stod(fields[0]);
            const double y = std::stod(fields[1]);
            xs.push_back(x);
            ys.push_back(y);
        } catch (const std::invalid_argument&) {
            if (!xs.empty()) throw std::runtime_error("non-numeric row in corr table: " + line);
        }
    }
    const Correlation pr = pearson(xs, ys);
    const Correlation sp = spearman(xs, ys);
    json report = {{"n", xs.size()},
                   {"pearson", {{"r", pr.r}, {"p", pr.p}}},
                   {"spearman", {{"rho", sp.r}, {"p", sp.p}}}};
    std::cout << report.dump() << "\n";
    return 0;
}

int run_prep(const RunConfig& cfg, const std::string& manifest_path, std::uint64_t seed,
             const std::string& out) {
    const auto rules = resolve_rules(cfg);
    Manifest m = load_manifest(manifest_path);
    json summary;
    summary["input"] = m.records.size();

    m = filter_samples(m);
    summary["after_filter"] = m.records.size();
    for (auto& r : m.records) r.transcript = clean_transcript(r.transcript, rules);
    m = flag_truncation(m);
    m = upsample(m);
    summary["after_upsample"] = m.records.size();
    m = cap_manifest(m, cfg.cap, seed);
    summary["after_cap"] = m.records.size();

    if (out.empty() || out == "-")
        write_manifest_jsonl(m, std::cout);
    else
        write_manifest_jsonl(m, fs::path(out));
    std::cout << summary.dump() << "\n";
    return 0;
}

int run_langs() {
    for (const auto& row : language_table()) std::cout << mapping_to_json(row).dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"task-vector and LoRA merging toolkit for cross-lingual ASR transfer"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string log_level = "info";
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "global RNG seed")->each([&](const std::string&) {
        seed_given = true;
    });
    app.add_option("--log-level", log_level, "quiet|info|debug");

    // diff
    auto* diff = app.add_subcommand("diff", "compute a task vector from two checkpoints");
    std::string d_base, d_ft, d_out;
    diff->add_option("base", d_base, "base checkpoint")->required();
    diff->add_option("finetuned", d_ft, "fine-tuned checkpoint")->required();
    diff->add_option("-o,--out", d_out, "output task-vector file")->required();

    // merge
    auto* merge = app.add_subcommand("merge", "apply a scaled task vector or merge adapters");
    std::string m_target, m_tv, m_adapter, m_base, m_out, m_mode;
    std::optional<double> m_lambda;
    merge->add_option("target", m_target, "target checkpoint or adapter")->required();
    merge->add_option("--task-vector", m_tv, "task-vector file");
    merge->add_option("--support-adapter", m_adapter, "support adapter file");
    merge->add_option("--base", m_base, "base checkpoint (adapter materialization)");
    merge->add_option("--lambda", m_lambda, "merge weight");
    merge->add_option("--mode", m_mode, "PER_MATRIX|DELTA_SPACE");
    merge->add_option("-o,--out", m_out, "output file")->required();

    // tune
    auto* tune = app.add_subcommand("tune", "Bayesian-optimize lambda against a WER evaluator");
    std::string t_target, t_tv, t_manifest, t_lang, t_mock, t_log, t_out, t_template;
    std::optional<int> t_budget;
    tune->add_option("target", t_target, "target checkpoint")->required();
    tune->add_option("--task-vector", t_tv, "support task-vector file")->required();
    tune->add_option("--manifest", t_manifest, "dev-set manifest (references)");
    tune->add_option("--lang", t_lang, "Whisper proxy language token");
    tune->add_option("--eval-template", t_template,
                     "command template with {checkpoint} {manifest} {lang} {out}");
    tune->add_option("--mock", t_mock, "mock evaluator, e.g. optimum=0.25,floor=0.1,curvature=1");
    tune->add_option("--budget", t_budget, "evaluation budget");
    tune->add_option("--trial-log", t_log, "trial log output (JSON lines)");
    tune->add_option("-o,--out", t_out, "best merged checkpoint output");

    // wer / sim / corr
    auto* werc = app.add_subcommand("wer", "score hypotheses against references (TSV id<TAB>text)");
    std::string w_refs, w_hyps;
    werc->add_option("refs", w_refs)->required();
    werc->add_option("hyps", w_hyps)->required();

    auto* sim = app.add_subcommand("sim", "cosine similarity of two corpora's token counts");
    std::string s_a, s_b;
    sim->add_option("corpus_a", s_a)->required();
    sim->add_option("corpus_b", s_b)->required();

    auto* corr = app.add_subcommand("corr", "pearson/spearman over a (similarity, delta_wer) table");
    std::string c_table;
    corr->add_option("table", c_table)->required();

    // prep
    auto* prep = app.add_subcommand("prep", "filter, clean, upsample, and cap a manifest");
    std::string p_manifest, p_rules, p_out;
    std::optional<std::size_t> p_cap;
    prep->add_option("manifest", p_manifest, "raw manifest (TSV or JSON lines)")->required();
    prep->add_option("--rules", p_rules, "cleaning ruleset (JSON)");
    prep->add_option("--cap", p_cap, "sample cap");
    prep->add_option("-o,--out", p_out, "output manifest (JSON lines; default stdout)");

    auto* langs = app.add_subcommand("langs", "print the target/support/proxy language table");

    CLI11_PARSE(app, argc, argv);

    if (log_level == "quiet")
        g_log_level = 0;
    else if (log_level == "debug")
        g_log_level = 2;

    try {
        RunConfig cfg = load_config(config_path);
        // flag overrides
        if (m_lambda) cfg.merge.lambda = *m_lambda;
        if (!m_mode.empty()) {
            if (m_mode == "PER_MATRIX")
                cfg.merge.mode = LoraMergeMode::PER_MATRIX;
            else if (m_mode == "DELTA_SPACE")
                cfg.merge.mode = LoraMergeMode::DELTA_SPACE;
            else
                throw std::runtime_error("unknown merge mode " + m_mode);
        }
        if (t_budget) cfg.optimizer.budget = *t_budget;
        if (!t_template.empty()) cfg.eval_template = t_template;
        if (!p_rules.empty()) cfg.rules_path = p_rules;
        if (p_cap) cfg.cap = *p_cap;
        if (seed_given) cfg.optimizer.seed = seed;

        log_info("resolved config: " + cfg.to_json().dump());

        if (*diff) return run_diff(d_base, d_ft, d_out);
        if (*merge) return run_merge(cfg, m_target, m_tv, m_adapter, m_base, m_out);
        if (*tune) return run_tune(cfg, t_target, t_tv, t_manifest, t_lang, t_mock, t_log, t_out);
        if (*werc) return run_wer(w_refs, w_hyps);
        if (*sim) return run_sim(s_a, s_b);
        if (*corr) return run_corr(c_table);
        if (*prep) return run_prep(cfg, p_manifest, seed, p_out);
        if (*langs) return run_langs();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
