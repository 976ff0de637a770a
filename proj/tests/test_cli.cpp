#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "dsadapt/data.hpp"

using namespace dsadapt;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    std::string cmd = std::string(DSADAPT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("usage surface") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("tile --help") == 0);
    CHECK(run_cli("") == 1);                        // missing subcommand
    CHECK(run_cli("synth --bogus-flag x") == 1);    // unknown flag
    CHECK(run_cli("train --config missing.cfg") == 1);  // missing required flags
}

TEST_CASE("synth then train, eval and inspect round trip") {
    TempDir tmp("dsadapt_cli_e2e");
    std::string data = (tmp.path / "data").string();
    REQUIRE(run_cli("synth --seed 3 --out " + data +
                    " --shift permute:1,2,0 --tiles 1 --tile-size 64 --patch-size 32 "
                    "--stride 32") == 0);
    CHECK(fs::exists(fs::path(data) / "source" / "manifest.json"));
    CHECK(fs::exists(fs::path(data) / "target" / "manifest.json"));
    CHECK(fs::exists(fs::path(data) / "synth_params.txt"));

    // training config sized for a smoke run
    std::string cfg_path = (tmp.path / "train.cfg").string();
    {
        std::ofstream cfg(cfg_path);
        cfg << "feature_channels = 6\nbackbone_width = 6\ndownsample = 2\n"
               "patch_size = 32\nbatch_size = 1\nmax_iters = 2\nseed = 1\n";
    }
    std::string out = (tmp.path / "run").string();
    REQUIRE(run_cli("train --config " + cfg_path + " --source " + data + "/source --target " +
                    data + "/target --out " + out) == 0);
    CHECK(fs::exists(fs::path(out) / "checkpoint.ckpt"));
    CHECK(fs::exists(fs::path(out) / "config_snapshot.cfg"));
    {
        std::ifstream log(fs::path(out) / "train_log.ndjson");
        int lines = 0;
        std::string line;
        while (std::getline(log, line))
            if (!line.empty()) ++lines;
        CHECK(lines == 2);
    }

    std::string report = (tmp.path / "report.json").string();
    CHECK(run_cli("eval --checkpoint " + out + "/checkpoint.ckpt --data " + data +
                  "/target --report " + report) == 0);
    CHECK(fs::exists(report));

    std::string dump = (tmp.path / "features").string();
    std::string any_image;
    for (const auto& e : fs::directory_iterator(fs::path(data) / "target" / "images")) {
        any_image = e.path().string();
        break;
    }
    REQUIRE_FALSE(any_image.empty());
    CHECK(run_cli("inspect --checkpoint " + out + "/checkpoint.ckpt --image " + any_image +
                  " --dump-features " + dump) == 0);
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(dump))
        if (e.path().extension() == ".png") ++pngs;
    CHECK(pngs == 4);
}

TEST_CASE("tile subcommand and data-error exit codes") {
    TempDir tmp("dsadapt_cli_tile");

    SUBCASE("empty input dir exits with the data-error code") {
        fs::create_directories(tmp.path / "empty" / "images");
        DatasetMeta meta;
        meta.class_names = synth_class_names();
        meta.palette = synth_palette();
        save_meta(meta, (tmp.path / "empty" / "meta.json").string());
        CHECK(run_cli("tile --input-dir " + (tmp.path / "empty").string() + " --output-dir " +
                      (tmp.path / "out").string() + " --patch-size 32 --stride 32") == 2);
    }

    SUBCASE("tiles crop to the expected manifest") {
        fs::create_directories(tmp.path / "in" / "images");
        fs::create_directories(tmp.path / "in" / "labels");
        DatasetMeta meta;
        meta.class_names = synth_class_names();
        meta.palette = synth_palette();
        save_meta(meta, (tmp.path / "in" / "meta.json").string());
        RawTile tile = synth_tile(4, 0, 96);
        write_image((tmp.path / "in" / "images" / "t0.png").string(), tile.pixels);
        write_image((tmp.path / "in" / "labels" / "t0.png").string(),
                    decode_label(*tile.label, meta.palette));
        CHECK(run_cli("tile --input-dir " + (tmp.path / "in").string() + " --output-dir " +
                      (tmp.path / "out").string() + " --patch-size 32 --stride 32") == 0);
        DatasetManifest m = load_manifest((tmp.path / "out" / "manifest.json").string());
        CHECK(m.patches.size() == 9);

        SUBCASE("mismatched label shape names the offending tile") {
            RawTile bad = synth_tile(4, 1, 96);
            Image8 short_label(1, 64, 96);
            write_image((tmp.path / "in" / "images" / "t1.png").string(), bad.pixels);
            write_image((tmp.path / "in" / "labels" / "t1.png").string(),
                        decode_label(short_label, meta.palette));
            CHECK(run_cli("tile --input-dir " + (tmp.path / "in").string() + " --output-dir " +
                          (tmp.path / "out2").string() + " --patch-size 32 --stride 32") == 2);
        }
    }
}
