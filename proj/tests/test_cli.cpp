#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string kBin = POSEMINE_BIN;
const fs::path kScratch = POSEMINE_SCRATCH;

struct RunOutcome {
    int exit_code = -1;
    std::string output;  // stdout and stderr combined
};

// Runs the CLI with POSEMINE_OUT_ROOT pointed at the scratch directory so
// relative output paths never escape the build tree.
RunOutcome run_cli(const std::string& args, const std::string& tag) {
    const fs::path log = kScratch / (tag + ".log");
    std::ostringstream cmd;
    cmd << "POSEMINE_OUT_ROOT='" << kScratch.string() << "' " << kBin << " " << args << " > '"
        << log.string() << "' 2>&1";
    const int status = std::system(cmd.str().c_str());
    RunOutcome out;
    out.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::ostringstream ss;
    ss << in.rdbuf();
    out.output = ss.str();
    return out;
}

std::string write_config(const std::string& name, int iters, uint64_t seed,
                         const std::string& out_dir) {
    nlohmann::json doc;
    doc["seed"] = seed;
    doc["k_total"] = 8;
    doc["heads"] = 2;
    doc["layers"] = 2;
    doc["channels"] = 16;
    doc["samples"] = 2;
    doc["image_size"] = 32;
    doc["pyramid_strides"] = {4, 8};
    doc["base_classes"] = 3;
    doc["novel_classes"] = 2;
    doc["instances_per_class"] = 8;
    doc["min_keypoints"] = 5;
    doc["max_keypoints"] = 7;
    doc["train_iters"] = iters;
    doc["lr"] = 1e-3;
    doc["log_interval"] = 10;
    doc["eval_interval"] = 0;
    doc["eval_episodes"] = 4;
    doc["shots"] = 1;
    doc["out_dir"] = out_dir;
    const fs::path path = kScratch / name;
    std::ofstream(path) << doc.dump(2);
    return path.string();
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// The smoke checkpoint most CLI cases reuse; trained once on demand.
std::string trained_checkpoint() {
    static std::string ckpt;
    if (ckpt.empty()) {
        const std::string cfg = write_config("train_main.json", 40, 11, "cli_main");
        const RunOutcome r = run_cli("train --config '" + cfg + "'", "train_main");
        REQUIRE(r.exit_code == 0);
        ckpt = (kScratch / "cli_main" / "checkpoint.bin").string();
        REQUIRE(fs::exists(ckpt));
    }
    return ckpt;
}

std::string main_config() {
    trained_checkpoint();
    return (kScratch / "train_main.json").string();
}

}  // namespace

TEST_CASE("scratch directory is usable") {
    fs::create_directories(kScratch);
    REQUIRE(fs::exists(kScratch));
    REQUIRE(fs::exists(kBin));
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cli("", "no_subcommand").exit_code == 2);
    CHECK(run_cli("frobnicate", "bad_subcommand").exit_code == 2);
    CHECK(run_cli("train", "train_missing_flag").exit_code == 2);
}

TEST_CASE("a missing config file fails with the path in the message") {
    const RunOutcome r = run_cli("train --config /no/such/config.json", "missing_config");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("/no/such/config.json") != std::string::npos);
}

TEST_CASE("an invalid config value names the offending field") {
    nlohmann::json doc;
    doc["k_total"] = 4;
    doc["max_keypoints"] = 12;  // cannot pad 12 raw keypoints into 4 slots
    const fs::path path = kScratch / "bad_field.json";
    std::ofstream(path) << doc.dump();
    const RunOutcome r = run_cli("train --config '" + path.string() + "'", "bad_field");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("k_total") != std::string::npos);

    nlohmann::json unknown;
    unknown["not_a_real_knob"] = 1;
    std::ofstream(kScratch / "unknown_key.json") << unknown.dump();
    const RunOutcome u =
        run_cli("train --config '" + (kScratch / "unknown_key.json").string() + "'", "unknown_key");
    CHECK(u.exit_code == 2);
    CHECK(u.output.find("not_a_real_knob") != std::string::npos);
}

TEST_CASE("training produces a checkpoint and reproducible metrics") {
    const std::string ckpt = trained_checkpoint();
    CHECK(fs::exists(kScratch / "cli_main" / "metrics.jsonl"));
    CHECK(fs::exists(kScratch / "cli_main" / "config.json"));

    // Same seed into another directory: byte-identical log.
    const std::string cfg2 = write_config("train_twin.json", 40, 11, "cli_twin");
    const RunOutcome r2 = run_cli("train --config '" + cfg2 + "'", "train_twin");
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(kScratch / "cli_main" / "metrics.jsonl") ==
          slurp(kScratch / "cli_twin" / "metrics.jsonl"));
    CHECK(slurp(kScratch / "cli_main" / "checkpoint.bin") ==
          slurp(kScratch / "cli_twin" / "checkpoint.bin"));
}

TEST_CASE("evaluation runs at one and five shots and writes a report") {
    const std::string ckpt = trained_checkpoint();
    const std::string cfg = main_config();
    const RunOutcome one = run_cli(
        "eval --ckpt '" + ckpt + "' --config '" + cfg + "' --shots 1 --episodes 6", "eval_1shot");
    CHECK(one.exit_code == 0);
    CHECK(one.output.find("mpck") != std::string::npos);

    const RunOutcome five = run_cli(
        "eval --ckpt '" + ckpt + "' --config '" + cfg + "' --shots 5 --episodes 4", "eval_5shot");
    CHECK(five.exit_code == 0);

    // The report lands next to the checkpoint, named by flag and shots.
    CHECK(fs::exists(kScratch / "cli_main" / "eval-none-1shot.json"));
    const auto rep = nlohmann::json::parse(slurp(kScratch / "cli_main" / "eval-none-1shot.json"));
    CHECK(rep.contains("mpck"));
    CHECK(rep.at("episodes").get<int>() == 6);
}

TEST_CASE("the oracle predictor scores a perfect run") {
    const std::string ckpt = trained_checkpoint();
    const RunOutcome r = run_cli("eval --ckpt '" + ckpt + "' --config '" + main_config() +
                                     "' --shots 1 --episodes 4 --oracle",
                                 "eval_oracle");
    CHECK(r.exit_code == 0);
    const auto rep = nlohmann::json::parse(slurp(kScratch / "cli_main" / "eval-none-1shot-oracle.json"));
    CHECK(rep.at("mpck").get<double>() == 1.0);
}

TEST_CASE("unknown ablation flags are rejected with the valid list") {
    const std::string ckpt = trained_checkpoint();
    const RunOutcome r = run_cli("eval --ckpt '" + ckpt + "' --config '" + main_config() +
                                     "' --shots 1 --ablate not-a-flag",
                                 "eval_bad_flag");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("identical-reference-points") != std::string::npos);

    const RunOutcome ok = run_cli("eval --ckpt '" + ckpt + "' --config '" + main_config() +
                                      "' --shots 1 --episodes 4 --ablate zero-test-padding",
                                  "eval_zero_pad");
    CHECK(ok.exit_code == 0);
}

TEST_CASE("checkpoints are validated against the configured geometry") {
    const std::string ckpt = trained_checkpoint();
    // Same data knobs, different channel width: the checkpoint must not load.
    nlohmann::json doc = nlohmann::json::parse(slurp(main_config()));
    doc["channels"] = 8;
    const fs::path other = kScratch / "other_geometry.json";
    std::ofstream(other) << doc.dump();
    const RunOutcome r = run_cli(
        "eval --ckpt '" + ckpt + "' --config '" + other.string() + "' --shots 1", "eval_mismatch");
    CHECK(r.exit_code == 2);
}

TEST_CASE("verify passes clean and fails under an injected fault") {
    const RunOutcome clean = run_cli("verify", "verify_clean");
    CHECK(clean.exit_code == 0);
    CHECK(clean.output.find("PASS") != std::string::npos);
    CHECK(clean.output.find("FAIL") == std::string::npos);

    const RunOutcome faulty = run_cli("verify --inject-fault mul", "verify_fault");
    CHECK(faulty.exit_code == 1);
    CHECK(faulty.output.find("FAIL") != std::string::npos);
    CHECK(faulty.output.find("mul") != std::string::npos);
}

TEST_CASE("padding visualization is deterministic and drawn to scale") {
    const RunOutcome a = run_cli("viz --mode padding --seed 4 --out pad_a.svg", "viz_pad_a");
    REQUIRE(a.exit_code == 0);
    const RunOutcome b = run_cli("viz --mode padding --seed 4 --out pad_b.svg", "viz_pad_b");
    REQUIRE(b.exit_code == 0);
    const std::string svg_a = slurp(kScratch / "pad_a.svg");
    CHECK(svg_a == slurp(kScratch / "pad_b.svg"));
    CHECK(svg_a.find("<svg") != std::string::npos);
    CHECK(svg_a.find("version=\"1.1\"") != std::string::npos);

    // Raw keypoints render as filled markers, padded ones as outlined ones;
    // with the default config all 16 slots are drawn.
    std::size_t kp = 0, pad = 0, pos = 0;
    while ((pos = svg_a.find("class=\"kp\"", pos)) != std::string::npos) ++kp, pos += 1;
    pos = 0;
    while ((pos = svg_a.find("class=\"pad\"", pos)) != std::string::npos) ++pad, pos += 1;
    CHECK(kp >= 5);
    CHECK(kp + pad == 16);
}

TEST_CASE("attention and prediction visualizations need a checkpoint") {
    const RunOutcome missing =
        run_cli("viz --mode attention --seed 4 --out att_missing.svg", "viz_att_missing");
    CHECK(missing.exit_code == 2);

    const std::string ckpt = trained_checkpoint();
    const std::string cfg = main_config();
    const RunOutcome att = run_cli("viz --mode attention --seed 4 --ckpt '" + ckpt +
                                       "' --config '" + cfg + "' --out att.svg",
                                   "viz_att");
    REQUIRE(att.exit_code == 0);
    const std::string svg = slurp(kScratch / "att.svg");
    CHECK(svg.find("class=\"sample\"") != std::string::npos);
    CHECK(svg.find("class=\"refcross\"") != std::string::npos);

    // Head weight sums live in the metadata block and each add up to one.
    const std::size_t open = svg.find("<metadata id=\"attention-weight-sums\">");
    REQUIRE(open != std::string::npos);
    const std::size_t start = svg.find('{', open);
    const std::size_t close = svg.find("</metadata>", open);
    REQUIRE(close != std::string::npos);
    const auto sums = nlohmann::json::parse(svg.substr(start, close - start));
    REQUIRE(sums.at("per_head_weight_sums").size() > 0);
    for (const auto& [key, value] : sums.at("per_head_weight_sums").items())
        CHECK(std::abs(value.get<double>() - 1.0) < 1e-9);

    const RunOutcome pred = run_cli("viz --mode prediction --seed 4 --ckpt '" + ckpt +
                                        "' --config '" + cfg + "' --out pred.svg",
                                    "viz_pred");
    REQUIRE(pred.exit_code == 0);
    const std::string psvg = slurp(kScratch / "pred.svg");
    CHECK(psvg.find("class=\"gt\"") != std::string::npos);
    CHECK(psvg.find("class=\"pred\"") != std::string::npos);
    CHECK(psvg.find("class=\"dev\"") != std::string::npos);

    const RunOutcome badmode =
        run_cli("viz --mode scribble --seed 4 --out x.svg", "viz_bad_mode");
    CHECK(badmode.exit_code == 2);
}
