#pragma once

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "tvmerge/dataprep.hpp"
#include "tvmerge/lora.hpp"
#include "tvmerge/metrics.hpp"
#include "tvmerge/task_vector.hpp"
#include "tvmerge/tsv.hpp"

namespace tvmerge {

// ASR inference lives outside this toolkit. An evaluation is a subprocess
// launched from a command template; it reads a checkpoint and a manifest and
// writes hypotheses as "id<TAB>text", which we score against the manifest's
// transcripts.
struct EvalRequest {
    std::filesystem::path checkpoint_path;
    std::filesystem::path manifest_path;
    std::string proxy_language;  // decoding language token, transported verbatim
    std::filesystem::path output_path;
};

inline std::string substitute_template(const std::string& tmpl, const EvalRequest& req) {
    const std::vector<std::pair<std::string, std::string>> subs = {
        {"{checkpoint}", req.checkpoint_path.string()},
        {"{manifest}", req.manifest_path.string()},
        {"{lang}", req.proxy_language},
        {"{out}", req.output_path.string()},
    };
    std::string cmd = tmpl;
    for (const auto& [key, value] : subs) {
        if (cmd.find(key) == std::string::npos)
            throw std::runtime_error("command template missing placeholder " + key);
        std::size_t pos = 0;
        while ((pos = cmd.find(key, pos)) != std::string::npos) {
            cmd.replace(pos, key.size(), value);
            pos += value.size();
        }
    }
    return cmd;
}

namespace detail {

struct CommandResult {
    int exit_code = -1;
    std::string stderr_text;
};

// Run `sh -c cmd` with a clean environment (plus an allowlist of inherited
// variables), capturing stderr, killing the child on timeout.
inline CommandResult run_command(const std::string& cmd, double timeout_s,
                                 const std::vector<std::string>& env_allowlist) {
    int err_pipe[2];
    if (pipe(err_pipe) != 0) throw std::runtime_error("pipe() failed");

    std::vector<std::string> env_store;
    for (const auto& name : env_allowlist)
        if (const char* v = ::getenv(name.c_str())) env_store.push_back(name + "=" + v);
    std::vector<char*> envp;
    for (auto& s : env_store) envp.push_back(s.data());
    envp.push_back(nullptr);

    const pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork() failed");
    if (pid == 0) {
        close(err_pipe[0]);
        dup2(err_pipe[1], 2);
        close(err_pipe[1]);
        execle("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr), envp.data());
        _exit(127);
    }
    close(err_pipe[1]);

    CommandResult result;
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(timeout_s));
    bool timed_out = false;
    char buf[4096];
    while (true) {
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   deadline - std::chrono::steady_clock::now())
                                   .count();
        if (remaining <= 0) {
            timed_out = true;
            break;
        }
        pollfd pfd{err_pipe[0], POLLIN, 0};
        const int rc = poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining, 1000)));
        if (rc < 0 && errno != EINTR) break;
        if (rc > 0) {
            const ssize_t n = read(err_pipe[0], buf, sizeof buf);
            if (n <= 0) break;  // EOF: child closed stderr
            result.stderr_text.append(buf, static_cast<std::size_t>(n));
        }
    }
    close(err_pipe[0]);
    if (timed_out) {
        kill(pid, SIGKILL);
        waitpid(pid, nullptr, 0);
        throw std::runtime_error("external evaluator timed out after " +
                                 std::to_string(timeout_s) + "s");
    }
    int status = 0;
    waitpid(pid, &status, 0);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -WTERMSIG(status);
    return result;
}

}  // namespace detail

struct ExternalEvalOptions {
    double timeout_s = 600.0;
    std::vector<std::string> env_allowlist = {"PATH", "HOME", "TMPDIR"};
    std::vector<CleanRule> clean_rules = default_clean_rules();
};

inline WerReport run_external_eval(const std::string& cmd_template, const EvalRequest& req,
                                   const ExternalEvalOptions& opts = {}) {
    namespace fs = std::filesystem;
    if (!fs::exists(req.checkpoint_path))
        throw std::runtime_error("checkpoint not found: " + req.checkpoint_path.string());
    if (!fs::exists(req.manifest_path))
        throw std::runtime_error("manifest not found: " + req.manifest_path.string());

    const std::string cmd = substitute_template(cmd_template, req);
    const auto result = detail::run_command(cmd, opts.timeout_s, opts.env_allowlist);
    if (result.exit_code != 0)
        throw std::runtime_error("evaluator exited with code " +
                                 std::to_string(result.exit_code) + ": " + result.stderr_text);
    if (!fs::exists(req.output_path))
        throw std::runtime_error("evaluator produced no hypothesis file at " +
                                 req.output_path.string());

    const Manifest manifest = load_manifest(req.manifest_path);
    UtteranceList refs, hyps;
    for (const auto& r : manifest.records)
        refs.emplace_back(r.id, clean_transcript(r.transcript, opts.clean_rules));
    for (auto& [id, text] : read_utterance_tsv(req.output_path))
        hyps.emplace_back(id, clean_transcript(text, opts.clean_rules));
    return wer(refs, hyps);
}

// Deterministic stand-in for the external evaluator: an exact quadratic in
// lambda, used to close the optimization loop in tests.
struct MockObjective {
    double optimum = 0.25;
    double floor = 0.0;
    double curvature = 1.0;
    std::uint64_t seed = 0;
};

inline double mock_eval(const MockObjective& obj, double lambda) {
    return obj.floor + obj.curvature * (lambda - obj.optimum) * (lambda - obj.optimum);
}

// Maps a materialized checkpoint (plus the lambda that produced it) to a WER.
using EvalBackend = std::function<double(const std::filesystem::path& checkpoint, double lambda)>;

inline EvalBackend make_mock_backend(const MockObjective& obj) {
    return [obj](const std::filesystem::path&, double lambda) { return mock_eval(obj, lambda); };
}

inline EvalBackend make_external_backend(const std::string& cmd_template, EvalRequest req,
                                         const ExternalEvalOptions& opts = {}) {
    return [=](const std::filesystem::path& checkpoint, double) {
        EvalRequest r = req;
        r.checkpoint_path = checkpoint;
        return run_external_eval(cmd_template, r, opts).wer;
    };
}

namespace detail {

inline std::filesystem::path make_temp_dir() {
    namespace fs = std::filesystem;
    static std::mt19937_64 rng(std::random_device{}());
    for (int attempt = 0; attempt < 16; ++attempt) {
        char name[32];
        std::snprintf(name, sizeof name, "tvmerge-%016llx",
                      static_cast<unsigned long long>(rng()));
        const fs::path dir = fs::temp_directory_path() / name;
        if (fs::create_directory(dir)) return dir;
    }
    throw std::runtime_error("cannot create temporary directory");
}

}  // namespace detail

// Materialize the merge at the given lambda, score it and the target-only
// model through the same backend, and report the WER delta. Temporary
// checkpoints are removed on success.
inline ComparisonReport evaluate_merge(const TensorMap& theta_target, const TaskVector& tv,
                                       double lambda, const EvalBackend& backend,
                                       NamePolicy policy = NamePolicy::STRICT) {
    namespace fs = std::filesystem;
    const fs::path dir = detail::make_temp_dir();
    const fs::path target_path = dir / "target.ckpt";
    const fs::path merged_path = dir / "merged.ckpt";
    write_checkpoint(theta_target, target_path);
    write_checkpoint(apply_task_vector(theta_target, tv, lambda, policy), merged_path);

    ComparisonReport report;
    report.wer_target_only = backend(target_path, 0.0);
    report.wer_merged = backend(merged_path, lambda);
    report.delta_wer = report.wer_merged - report.wer_target_only;
    fs::remove_all(dir);
    return report;
}

inline ComparisonReport evaluate_merge(const TensorMap& theta_base, const LoraAdapter& adapter_T,
                                       const LoraAdapter& adapter_S, MergeSpec spec,
                                       const EvalBackend& backend) {
    namespace fs = std::filesystem;
    const fs::path dir = detail::make_temp_dir();
    const fs::path target_path = dir / "target.ckpt";
    const fs::path merged_path = dir / "merged.ckpt";
    write_checkpoint(materialize_lora(adapter_T, theta_base), target_path);
    write_checkpoint(materialize_merged(adapter_T, adapter_S, spec, theta_base), merged_path);

    ComparisonReport report;
    report.wer_target_only = backend(target_path, 0.0);
    report.wer_merged = backend(merged_path, spec.lambda);
    report.delta_wer = report.wer_merged - report.wer_target_only;
    fs::remove_all(dir);
    return report;
}

}  // namespace tvmerge
