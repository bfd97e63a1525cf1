#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tvmerge/checkpoint_io.hpp"
#include "tvmerge/task_vector.hpp"

using namespace tvmerge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string stdout_text;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(TVMERGE_CLI_PATH) + " --log-level quiet " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult result;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0)
        result.stdout_text.append(buf.data(), n);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

struct TestDir {
    fs::path dir;
    TestDir() {
        dir = fs::temp_directory_path() / ("tvmerge_clitest_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~TestDir() { fs::remove_all(dir); }
    std::string file(const std::string& name) const { return (dir / name).string(); }
};

json first_line(const std::string& text) {
    return json::parse(text.substr(0, text.find('\n')));
}

}  // namespace

TEST_CASE("langs emits the full mapping table as JSON lines") {
    const CliResult r = run_cli("langs");
    REQUIRE(r.exit_code == 0);
    std::istringstream in(r.stdout_text);
    std::string line;
    int rows = 0, test_only = 0;
    while (std::getline(in, line)) {
        const json j = json::parse(line);
        ++rows;
        if (j.at("test_only").get<bool>()) ++test_only;
        if (j.at("target") == "qxp") CHECK(j.at("supports").size() == 13);
        if (j.at("target") == "sco") CHECK(j.at("supports").empty());
    }
    CHECK(rows == 26);
    CHECK(test_only == 5);
}

TEST_CASE("diff writes a task vector and reports count and norm") {
    TestDir td;
    // the 2-tensor toy pair: deltas {w:[2,3]} -> norm sqrt(13)
    TensorMap base, ft;
    base.entries["w"] = Tensor{Dtype::F32, {2}, {1.0, 2.0}};
    ft.entries["w"] = Tensor{Dtype::F32, {2}, {3.0, 5.0}};
    write_checkpoint(base, td.file("base.ckpt"));
    write_checkpoint(ft, td.file("ft.ckpt"));

    const CliResult r =
        run_cli("diff " + td.file("base.ckpt") + " " + td.file("ft.ckpt") + " -o " + td.file("tv.ckpt"));
    REQUIRE(r.exit_code == 0);
    const json report = first_line(r.stdout_text);
    CHECK(report.at("tensors") == 1);
    CHECK_THAT(report.at("l2_norm").get<double>(),
               Catch::Matchers::WithinRel(std::sqrt(13.0), 1e-6));

    SECTION("identical files give a zero-norm task vector") {
        const CliResult z = run_cli("diff " + td.file("base.ckpt") + " " + td.file("base.ckpt") +
                                    " -o " + td.file("zero.ckpt"));
        REQUIRE(z.exit_code == 0);
        CHECK(first_line(z.stdout_text).at("l2_norm") == 0.0);
    }
    SECTION("merge with lambda=0 reproduces the target values") {
        const CliResult m = run_cli("merge " + td.file("base.ckpt") + " --task-vector " +
                                    td.file("tv.ckpt") + " --lambda 0 -o " + td.file("out.ckpt"));
        REQUIRE(m.exit_code == 0);
        CHECK(read_checkpoint(td.file("out.ckpt")).entries.at("w").values ==
              base.entries.at("w").values);
    }
    SECTION("merge with lambda=1 reconstructs the fine-tuned checkpoint") {
        const CliResult m = run_cli("merge " + td.file("base.ckpt") + " --task-vector " +
                                    td.file("tv.ckpt") + " --lambda 1 -o " + td.file("rec.ckpt"));
        REQUIRE(m.exit_code == 0);
        const auto got = read_checkpoint(td.file("rec.ckpt")).entries.at("w").values;
        CHECK_THAT(got[0], Catch::Matchers::WithinRel(3.0, 1e-12));
        CHECK_THAT(got[1], Catch::Matchers::WithinRel(5.0, 1e-12));
    }
}

TEST_CASE("diff rejects shape mismatches with a diagnostic") {
    TestDir td;
    TensorMap a, b;
    a.entries["w"] = Tensor{Dtype::F32, {2}, {1.0, 2.0}};
    b.entries["w"] = Tensor{Dtype::F32, {1, 2}, {1.0, 2.0}};
    write_checkpoint(a, td.file("a.ckpt"));
    write_checkpoint(b, td.file("b.ckpt"));
    const CliResult r =
        run_cli("diff " + td.file("a.ckpt") + " " + td.file("b.ckpt") + " -o " + td.file("tv.ckpt"));
    CHECK(r.exit_code != 0);
}

TEST_CASE("tune against the mock evaluator") {
    TestDir td;
    TensorMap base, ft;
    base.entries["w"] = Tensor{Dtype::F32, {2}, {1.0, 2.0}};
    ft.entries["w"] = Tensor{Dtype::F32, {2}, {3.0, 5.0}};
    write_checkpoint(base, td.file("base.ckpt"));
    write_checkpoint(ft, td.file("ft.ckpt"));
    REQUIRE(run_cli("diff " + td.file("base.ckpt") + " " + td.file("ft.ckpt") + " -o " +
                    td.file("tv.ckpt"))
                .exit_code == 0);

    SECTION("optimum recovered within tolerance") {
        const CliResult r = run_cli("tune " + td.file("base.ckpt") + " --task-vector " +
                                    td.file("tv.ckpt") + " --mock optimum=0.25,floor=0.1 " +
                                    "--trial-log " + td.file("trials.jsonl") + " -o " +
                                    td.file("best.ckpt"));
        REQUIRE(r.exit_code == 0);
        const json report = first_line(r.stdout_text);
        CHECK(std::abs(report.at("best_lambda").get<double>() - 0.25) <= 0.05);
        CHECK(report.at("trials") == 10);
        CHECK(fs::exists(td.file("best.ckpt")));
        CHECK(fs::exists(td.file("trials.jsonl")));
    }
    SECTION("budget 1 gives exactly one trial") {
        const CliResult r = run_cli("tune " + td.file("base.ckpt") + " --task-vector " +
                                    td.file("tv.ckpt") + " --mock optimum=0.25 --budget 1");
        REQUIRE(r.exit_code == 0);
        CHECK(first_line(r.stdout_text).at("trials") == 1);
    }
    SECTION("budget 4 gives exactly four trials") {
        const CliResult r = run_cli("tune " + td.file("base.ckpt") + " --task-vector " +
                                    td.file("tv.ckpt") + " --mock optimum=0.25 --budget 4 " +
                                    "--trial-log " + td.file("t4.jsonl"));
        REQUIRE(r.exit_code == 0);
        CHECK(first_line(r.stdout_text).at("trials") == 4);
    }
    SECTION("constant objective ties toward the smallest lambda") {
        const CliResult r = run_cli("tune " + td.file("base.ckpt") + " --task-vector " +
                                    td.file("tv.ckpt") + " --mock optimum=0,curvature=0,floor=0");
        REQUIRE(r.exit_code == 0);
        CHECK(first_line(r.stdout_text).at("best_lambda") == 0.0);
    }
}

TEST_CASE("wer subcommand") {
    TestDir td;
    std::ofstream(td.file("refs.tsv")) << "u1\tthe cat sat\n";
    std::ofstream(td.file("hyps.tsv")) << "u1\tthe cat\n";
    const CliResult r = run_cli("wer " + td.file("refs.tsv") + " " + td.file("hyps.tsv"));
    REQUIRE(r.exit_code == 0);
    CHECK_THAT(first_line(r.stdout_text).at("wer").get<double>(),
               Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-9));

    const CliResult same = run_cli("wer " + td.file("refs.tsv") + " " + td.file("refs.tsv"));
    CHECK(first_line(same.stdout_text).at("wer") == 0.0);
}

TEST_CASE("sim and corr subcommands") {
    TestDir td;
    std::ofstream(td.file("a.txt")) << "a b\n";
    std::ofstream(td.file("b.txt")) << "a\n";
    const CliResult s = run_cli("sim " + td.file("a.txt") + " " + td.file("b.txt"));
    REQUIRE(s.exit_code == 0);
    CHECK_THAT(first_line(s.stdout_text).at("cosine_similarity").get<double>(),
               Catch::Matchers::WithinAbs(1.0 / std::sqrt(2.0), 1e-9));

    std::ofstream(td.file("table.tsv"))
        << "similarity\tdelta_wer\n0.1\t-0.01\n0.2\t-0.02\n0.3\t-0.03\n0.4\t-0.04\n";
    const CliResult c = run_cli("corr " + td.file("table.tsv"));
    REQUIRE(c.exit_code == 0);
    const json report = first_line(c.stdout_text);
    CHECK_THAT(report.at("pearson").at("r").get<double>(),
               Catch::Matchers::WithinAbs(-1.0, 1e-9));
    CHECK_THAT(report.at("spearman").at("rho").get<double>(),
               Catch::Matchers::WithinAbs(-1.0, 1e-9));
}

TEST_CASE("prep pipeline") {
    TestDir td;
    std::ofstream(td.file("raw.tsv")) << "id\tpath\tduration\tsentence\tup_votes\tdown_votes\n"
                                      << "u1\ta\t5\thello\t0\t0\n"
                                      << "u2\tb\t5\tworld\t1\t0\n"
                                      << "u3\tc\t5\tagain\t2\t0\n";
    SECTION("votes 0,1,2 give six output records") {
        const CliResult r = run_cli("prep " + td.file("raw.tsv") + " -o " + td.file("out.jsonl"));
        REQUIRE(r.exit_code == 0);
        CHECK(first_line(r.stdout_text).at("after_upsample") == 6);
        std::ifstream in(td.file("out.jsonl"));
        std::string line;
        int rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 6);
    }
    SECTION("all records flagged gives an empty output and exit 0") {
        std::ofstream(td.file("flagged.tsv"))
            << "id\tpath\tduration\tsentence\tup_votes\tdown_votes\tflags\n"
            << "u1\ta\t5\thello\t0\t0\t1\n";
        const CliResult r =
            run_cli("prep " + td.file("flagged.tsv") + " -o " + td.file("out2.jsonl"));
        REQUIRE(r.exit_code == 0);
        const json summary = first_line(r.stdout_text);
        CHECK(summary.at("input") == 1);
        CHECK(summary.at("after_filter") == 0);
        CHECK(summary.at("after_cap") == 0);
    }
    SECTION("default cap is inert on small inputs") {
        const CliResult r = run_cli("prep " + td.file("raw.tsv") + " -o " + td.file("out3.jsonl"));
        const json summary = first_line(r.stdout_text);
        CHECK(summary.at("after_cap") == summary.at("after_upsample"));
    }
    SECTION("cap applies to the upsampled set, deterministically by seed") {
        const CliResult a = run_cli("--seed 5 prep " + td.file("raw.tsv") + " --cap 4 -o " +
                                    td.file("c1.jsonl"));
        const CliResult b = run_cli("--seed 5 prep " + td.file("raw.tsv") + " --cap 4 -o " +
                                    td.file("c2.jsonl"));
        REQUIRE(a.exit_code == 0);
        CHECK(first_line(a.stdout_text).at("after_cap") == 4);
        std::ifstream f1(td.file("c1.jsonl")), f2(td.file("c2.jsonl"));
        const std::string s1((std::istreambuf_iterator<char>(f1)),
                             std::istreambuf_iterator<char>());
        const std::string s2((std::istreambuf_iterator<char>(f2)),
                             std::istreambuf_iterator<char>());
        CHECK(s1 == s2);
    }
}

TEST_CASE("config file values are applied and overridden by flags") {
    TestDir td;
    std::ofstream(td.file("cfg.json")) << R"({"optimizer": {"budget": 5}})";
    TensorMap base, ft;
    base.entries["w"] = Tensor{Dtype::F32, {1}, {0.0}};
    ft.entries["w"] = Tensor{Dtype::F32, {1}, {1.0}};
    write_checkpoint(base, td.file("base.ckpt"));
    write_checkpoint(ft, td.file("ft.ckpt"));
    run_cli("diff " + td.file("base.ckpt") + " " + td.file("ft.ckpt") + " -o " + td.file("tv.ckpt"));

    const CliResult from_file = run_cli("--config " + td.file("cfg.json") + " tune " +
                                        td.file("base.ckpt") + " --task-vector " +
                                        td.file("tv.ckpt") + " --mock optimum=0.5");
    REQUIRE(from_file.exit_code == 0);
    CHECK(first_line(from_file.stdout_text).at("trials") == 5);

    const CliResult overridden = run_cli("--config " + td.file("cfg.json") + " tune " +
                                         td.file("base.ckpt") + " --task-vector " +
                                         td.file("tv.ckpt") + " --mock optimum=0.5 --budget 7");
    REQUIRE(overridden.exit_code == 0);
    CHECK(first_line(overridden.stdout_text).at("trials") == 7);
}
