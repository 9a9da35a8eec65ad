// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "ssom/cli.hpp"
#include "ssom/run_config.hpp"
#include "test_util.hpp"

using namespace ssom;
using test::TempDir;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result ssom_run(std::vector<std::string> args) {
    args.insert(args.begin(), "ssom");
    std::ostringstream out, err;
    Result r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
}

std::vector<std::string> split_lines(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::string tree_bytes(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(std::filesystem::relative(e.path(), dir));
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) all += f.string() + '\n' + test::file_bytes(dir / f);
    return all;
}

const char* kSmallConfig =
    "# small run\n"
    "encoder.image_size = 16\n"
    "encoder.patch_size = 4\n"
    "encoder.embed_dim = 16\n"
    "encoder.num_blocks = 2\n"
    "encoder.num_heads = 2\n"
    "encoder.adapter_rank = 2\n"
    "train.epochs = 2\n"
    "train.batch_size = 4\n"
    "train.base_lr = 0.01   # faster than the default\n";

}  // namespace

TEST_CASE("gen-data is deterministic and lists every sample") {
    TempDir d("cli_gen");
    REQUIRE(ssom_run({"gen-data", "--out", (d / "a").string(), "--n", "5", "--size", "16", "--seed", "3"}).code == 0);
    REQUIRE(ssom_run({"gen-data", "--out", (d / "b").string(), "--n", "5", "--size", "16", "--seed", "3"}).code == 0);
    CHECK(tree_bytes(d / "a") == tree_bytes(d / "b"));
    const auto manifest = split_lines(test::file_bytes(d / "a" / "manifest.tsv"));
    std::size_t records = 0;
    for (const auto& l : manifest)
        if (!l.empty() && l[0] != '#') ++records;
    CHECK(records == 5);
    CHECK(ssom_run({"gen-data", "--out", (d / "c").string(), "--n", "0", "--size", "16", "--seed", "3"}).code == 2);
}

TEST_CASE("config parsing") {
    const cli::RunConfig c = cli::parse_run_config(kSmallConfig);
    CHECK(c.encoder.image_size == 16);
    CHECK(c.train.base_lr == 0.01);
    CHECK(c.train.epochs == 2);
    CHECK(c.train.seed == 0);
    CHECK_THROWS_AS(cli::parse_run_config("encoder.bogus = 1\n"), UsageError);
    CHECK_THROWS_WITH(cli::parse_run_config("\ntrain.epochs = x\n", "f.cfg"), doctest::Contains("f.cfg:2:"));
    CHECK_THROWS_AS(cli::parse_run_config("train.epochs = 1\ntrain.epochs = 2\n"), UsageError);
    CHECK_THROWS_AS(cli::parse_run_config("train.epochs\n"), UsageError);
    CHECK_THROWS_AS(cli::parse_run_config("train.optimizer = rmsprop\n"), UsageError);
    cli::RunConfig o = c;
    cli::apply_overrides(o, {"train.lambda_reg=0.5", "train.schedule.b_target=3"});
    CHECK(o.train.lambda_reg == 0.5);
    CHECK(o.train.schedule.b_target == std::size_t{3});
    CHECK_THROWS_AS(cli::apply_overrides(o, {"nokey"}), UsageError);
    cli::RunConfig bad = c;
    cli::apply_setting(bad, "encoder.image_size", "30");
    CHECK_THROWS_AS(bad.validate(), UsageError);
    for (const auto& k : cli::config_schema()) {
        INFO(k.key);
        CHECK(cli::config_reference_markdown().find("`" + k.key + "`") != std::string::npos);
    }
}

TEST_CASE("end-to-end pipeline") {
    TempDir d("cli_e2e");
    const std::string cfg = (d / "run.cfg").string();
    write_text(cfg, kSmallConfig);
    REQUIRE(ssom_run({"gen-data", "--out", (d / "train").string(), "--n", "8", "--size", "16", "--seed", "1"}).code ==
            0);
    REQUIRE(ssom_run({"gen-data", "--out", (d / "test").string(), "--n", "4", "--size", "16", "--seed", "1",
                      "--split", "test"})
                .code == 0);
    const Result base = ssom_run({"init-base", "--config", cfg, "--out", (d / "base.ckpt").string()});
    REQUIRE(base.code == 0);

    const Result tr = ssom_run({"train", "--config", cfg, "--base", (d / "base.ckpt").string(), "--data",
                                (d / "train").string(), "--out", (d / "run").string()});
    INFO(tr.err);
    REQUIRE(tr.code == 0);
    CHECK(tr.out.find("(unchanged)") != std::string::npos);
    CHECK(tr.out.find("epoch 2 step 4") != std::string::npos);
    const std::string ckpt = (d / "run" / "final.ckpt").string();
    REQUIRE(std::filesystem::exists(ckpt));

    SUBCASE("eval on ground-truth maps is perfect") {
        const Result r = ssom_run({"eval", "--maps", (d / "test" / "masks").string(), "--data",
                                   (d / "test").string(), "--report", (d / "gt.csv").string()});
        REQUIRE(r.code == 0);
        CHECK(r.out.find("f_beta=1.000000 mae=0.000000") != std::string::npos);
        const auto rows = split_lines(test::file_bytes(d / "gt.csv"));
        CHECK(rows.front() == "id,f_beta,mae");
        CHECK(rows.size() == 6);
    }
    SUBCASE("eval of a checkpoint is reproducible") {
        const Result a = ssom_run({"eval", "--ckpt", ckpt, "--data", (d / "test").string(), "--report",
                                   (d / "a.csv").string(), "--predictions", (d / "maps").string()});
        const Result b = ssom_run({"eval", "--ckpt", ckpt, "--data", (d / "test").string(), "--report",
                                   (d / "b.csv").string()});
        REQUIRE(a.code == 0);
        CHECK(a.out == b.out);
        CHECK(test::file_bytes(d / "a.csv") == test::file_bytes(d / "b.csv"));
        // scoring the written maps reproduces the report up to 8-bit quantisation
        CHECK(ssom_run({"eval", "--maps", (d / "maps").string(), "--data", (d / "test").string(), "--report",
                        (d / "c.csv").string()})
                  .code == 0);
        CHECK(ssom_run({"eval", "--ckpt", ckpt, "--maps", (d / "maps").string(), "--data", (d / "test").string(),
                        "--report", (d / "x.csv").string()})
                  .code == 2);
        CHECK(ssom_run({"eval", "--ckpt", ckpt, "--data", (d / "test").string(), "--report",
                        (d / "x.csv").string(), "--threshold", "1.5"})
                  .code == 2);
    }
    SUBCASE("predict writes a binary mask") {
        const std::string mask = (d / "mask.pgm").string();
        const Result r = ssom_run({"predict", "--ckpt", ckpt, "--image",
                                   (d / "test" / "images" / "test_0000.ppm").string(), "--out", mask});
        REQUIRE(r.code == 0);
        CHECK(r.out.find("threshold 0.500000") != std::string::npos);
        const Tensor m = netpbm::read_mask(mask);
        CHECK(m.shape() == Shape{16, 16});
        ssom_run({"predict", "--ckpt", ckpt, "--image",
                                       (d / "test" / "images" / "test_0000.ppm").string(), "--out",
                                       (d / "mask2.pgm").string()});
        CHECK(test::file_bytes(mask) == test::file_bytes(d / "mask2.pgm"));
    }
    SUBCASE("inspect-ranks agrees with the training log") {
        const Result r = ssom_run({"inspect-ranks", "--trace", (d / "run" / "rank_trace.tsv").string()});
        REQUIRE(r.code == 0);
        std::map<std::size_t, std::size_t> totals;
        for (const auto& l : split_lines(r.out)) {
            if (l.empty() || l[0] == '#' || l.rfind("step", 0) == 0) continue;
            std::istringstream in(l);
            std::size_t step = 0, total = 0;
            in >> step >> total;
            totals[step] = total;
        }
        const auto log = split_lines(test::file_bytes(d / "run" / "log.csv"));
        REQUIRE(log.size() == 5);
        REQUIRE(totals.size() == 4);
        for (std::size_t i = 1; i < log.size(); ++i) {
            std::vector<std::string> cols;
            std::istringstream in(log[i]);
            for (std::string c; std::getline(in, c, ',');) cols.push_back(c);
            CHECK(totals.at(std::stoul(cols[0])) == std::stoul(cols[7]));
        }
        const Result at = ssom_run({"inspect-ranks", "--trace", (d / "run" / "rank_trace.tsv").string(),
                                    "--step", "4"});
        REQUIRE(at.code == 0);
        CHECK(at.out.rfind("triplet\tretained\tcapacity\n", 0) == 0);
        CHECK(at.out.find("\ntotal\t") != std::string::npos);
        CHECK(ssom_run({"inspect-ranks", "--trace", (d / "run" / "rank_trace.tsv").string(), "--step", "99"})
                  .code != 0);
    }
    SUBCASE("resume from the final checkpoint is a no-op run") {
        const Result r = ssom_run({"train", "--config", cfg, "--base", (d / "base.ckpt").string(), "--data",
                                   (d / "train").string(), "--out", (d / "run").string(), "--resume", ckpt});
        CHECK(r.code == 0);
        CHECK(r.out.find("starting at 4") != std::string::npos);
    }
}

TEST_CASE("size mismatches are caught at train time") {
    TempDir d("cli_size");
    const std::string cfg = (d / "run.cfg").string();
    write_text(cfg, kSmallConfig);
    CHECK(ssom_run({"gen-data", "--out", (d / "odd").string(), "--n", "2", "--size", "18", "--seed", "1"}).code == 0);
    REQUIRE(ssom_run({"init-base", "--config", cfg, "--out", (d / "base.ckpt").string()}).code == 0);
    const Result r = ssom_run({"train", "--config", cfg, "--base", (d / "base.ckpt").string(), "--data",
                               (d / "odd").string(), "--out", (d / "run").string()});
    CHECK(r.code == 3);
    CHECK(r.err.rfind("error[data]:", 0) == 0);
    const Result bad = ssom_run({"train", "--config", cfg, "--set", "encoder.image_size=18", "--base",
                                 (d / "base.ckpt").string(), "--data", (d / "odd").string(), "--out",
                                 (d / "run").string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.rfind("error[usage]:", 0) == 0);
}

TEST_CASE("usage and data errors map to exit codes") {
    TempDir d("cli_err");
    CHECK(ssom_run({}).code == 2);
    CHECK(ssom_run({"frobnicate"}).code == 2);
    CHECK(ssom_run({"gen-data", "--out", (d / "x").string()}).code == 2);
    CHECK(ssom_run({"eval", "--maps", (d / "nope").string(), "--data", (d / "nope").string(), "--report", "r"})
              .code == 2);
    write_text(d / "unknown.cfg", "encoder.depth = 3\n");
    const Result unknown = ssom_run({"init-base", "--config", (d / "unknown.cfg").string(), "--out",
                                     (d / "b.ckpt").string()});
    CHECK(unknown.code == 2);
    CHECK(unknown.err.find("encoder.depth") != std::string::npos);
    write_text(d / "junk.ckpt", "SSOM\x01");
    write_text(d / "img.ppm", "P6\n16 16\n255\n");
    CHECK(ssom_run({"predict", "--ckpt", (d / "junk.ckpt").string(), "--image", (d / "img.ppm").string(), "--out",
                    (d / "m.pgm").string()})
              .code == 3);
    write_text(d / "trace.tsv", "1\tkept:[0.0\tpruned:[]\n");
    CHECK(ssom_run({"inspect-ranks", "--trace", (d / "trace.tsv").string()}).code == 3);
    CHECK(cli::exit_code(ErrorKind::Numeric) == 4);
    CHECK(cli::exit_code(ErrorKind::Contract) == 2);
}

TEST_CASE("grad-check succeeds") {
    const Result r = ssom_run({"grad-check"});
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
    CHECK(r.out.find("full_graph") != std::string::npos);
}

TEST_CASE("reference page covers commands and keys") {
    const std::string page = cli::reference_page();
    for (const char* cmd : {"gen-data", "init-base", "train", "eval", "predict", "inspect-ranks", "grad-check"})
        CHECK(page.find(std::string("### ") + cmd) != std::string::npos);
    CHECK(page.find("`train.base_lr`") != std::string::npos);
    TempDir d("cli_ref");
    CHECK(ssom_run({"config-reference", "--out", (d / "ref.md").string()}).code == 0);
    CHECK(test::file_bytes(d / "ref.md") == page);
}

TEST_CASE("installed binary reports exit codes") {
    const char* bin = std::getenv("SSOM_CLI");
    if (!bin) {
        MESSAGE("SSOM_CLI not set; skipping process checks");
        return;
    }
    auto status = [&](const std::string& args) {
        const int raw = std::system((std::string(bin) + " " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    CHECK(status("--help") == 0);
    CHECK(status("bogus") == 2);
    CHECK(status("inspect-ranks --trace /nonexistent/trace.tsv") == 2);
    CHECK(status("config-reference") == 0);
}
