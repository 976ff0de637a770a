// Command-line front end: tile / synth / train / eval / inspect.
// Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dsadapt/checkpoint.hpp"
#include "dsadapt/data.hpp"
#include "dsadapt/train.hpp"

namespace fs = std::filesystem;
using namespace dsadapt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

// channel-wise average of a feature map, min-max scaled into a gray PNG
void dump_feature_image(const Tensor& features, const std::string& path) {
    int h = features.dim(1), w = features.dim(2);
    Tensor mean({h, w});
    for (int c = 0; c < features.dim(0); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) mean.at(y, x) += features.at(c, y, x);
    double lo = mean[0], hi = mean[0];
    for (std::size_t i = 0; i < mean.numel(); ++i) {
        lo = std::min(lo, mean[i]);
        hi = std::max(hi, mean[i]);
    }
    double range = hi > lo ? hi - lo : 1.0;
    Image8 img(1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.at(0, y, x) =
                static_cast<std::uint8_t>(std::lround(255.0 * (mean.at(y, x) - lo) / range));
    write_image(path, img);
}

int cmd_tile(const std::string& input_dir, const std::string& output_dir, int patch_size,
             int stride, const std::string& palette_path) {
    DatasetManifest manifest =
        tile_directory(input_dir, output_dir, patch_size, stride, palette_path);
    std::map<std::string, std::size_t> per_tile;
    for (const auto& p : manifest.patches) ++per_tile[p.tile_id];
    std::cout << "tiled " << per_tile.size() << " tiles into " << manifest.patches.size()
              << " patches (patch " << patch_size << ", stride " << stride << ")\n";
    for (const auto& [tile, count] : per_tile)
        std::cout << "  " << tile << ": " << count << " patches\n";
    return kExitOk;
}

int cmd_synth(std::uint64_t seed, const std::string& out_dir, const std::string& shift,
              int tiles, int tile_size, int patch_size, int stride) {
    SynthConfig cfg;
    cfg.n_tiles = tiles;
    cfg.tile_size = tile_size;
    cfg.patch_size = patch_size;
    cfg.stride = stride;
    cfg.shift = ShiftSpec::parse(shift);
    synth_to_dir(seed, cfg, out_dir);

    // run parameters beside the outputs
    std::ofstream snap(fs::path(out_dir) / "synth_params.txt");
    snap << "seed = " << seed << "\nshift = " << cfg.shift.str() << "\ntiles = " << tiles
         << "\ntile_size = " << tile_size << "\npatch_size = " << patch_size
         << "\nstride = " << stride << "\n";
    std::cout << "wrote synthetic source/target datasets under " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& source_dir,
              const std::string& target_dir, const std::string& out_dir) {
    TrainConfig config = load_config(config_path);
    Dataset source = open_dataset(source_dir);
    Dataset target = open_dataset(target_dir);
    fit(config, source, target, out_dir);
    std::cout << "trained " << config.max_iters << " steps; checkpoint at "
              << (fs::path(out_dir) / "checkpoint.ckpt").string() << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& report_path) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    Dataset data = open_dataset(data_dir);
    auto predictor = make_predictor(ckpt);
    EvalReport report = evaluate(*predictor, data, ckpt.config.normalization);
    std::cout << report_to_table(report);
    if (!report_path.empty()) {
        fs::path parent = fs::path(report_path).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        std::ofstream out(report_path);
        out << report_to_json(report) << "\n";
        save_config(ckpt.config, report_path + ".config_snapshot.cfg");
    }
    return kExitOk;
}

int cmd_inspect(const std::string& checkpoint_path, const std::string& image_path,
                const std::string& dump_dir) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    auto ensemble = ensemble_from_checkpoint(ckpt);
    Image8 raw = read_image_rgb(image_path);
    Tensor image = normalize_image(raw, ckpt.config.normalization);

    NoGradGuard ng;
    Var x = constant(image);
    Var f_s = ensemble->backbone_s->forward(x);
    Var f_t = ensemble->backbone_t->forward(x);
    auto [fp_s, fp_t] = ddm_forward(f_s, f_t, ensemble->ddm);

    fs::create_directories(dump_dir);
    std::string stem = fs::path(image_path).stem().string();
    dump_feature_image(f_s->value, (fs::path(dump_dir) / (stem + "_f_src_style.png")).string());
    dump_feature_image(f_t->value, (fs::path(dump_dir) / (stem + "_f_tgt_style.png")).string());
    dump_feature_image(fp_s->value,
                       (fs::path(dump_dir) / (stem + "_f_src_style_ddm.png")).string());
    dump_feature_image(fp_t->value,
                       (fs::path(dump_dir) / (stem + "_f_tgt_style_ddm.png")).string());
    save_config(ckpt.config, (fs::path(dump_dir) / "config_snapshot.cfg").string());
    std::cout << "wrote 4 channel-average feature images under " << dump_dir << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-domain segmentation adaptation toolkit"};
    app.require_subcommand(1);

    auto* tile = app.add_subcommand("tile", "crop a tile dataset into patches");
    std::string tile_in, tile_out, tile_palette;
    int tile_patch = 512, tile_stride = 512;
    tile->add_option("--input-dir", tile_in, "tile dataset root (images/, labels/, meta.json)")
        ->required();
    tile->add_option("--output-dir", tile_out, "patch dataset output root")->required();
    tile->add_option("--patch-size", tile_patch, "square patch size in pixels");
    tile->add_option("--stride", tile_stride, "cropping stride in pixels");
    tile->add_option("--palette", tile_palette, "palette/meta JSON overriding <input>/meta.json");

    auto* synth = app.add_subcommand("synth", "generate a synthetic cross-domain dataset pair");
    std::uint64_t synth_seed = 0;
    std::string synth_out, synth_shift = "identity";
    int synth_tiles = 8, synth_tile_size = 256, synth_patch = 64, synth_stride = 64;
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output root (source/ and target/ created inside)")
        ->required();
    synth->add_option("--shift", synth_shift,
                      "domain shift, e.g. identity | permute:1,2,0 | permute:1,2,0;rescale:1.5");
    synth->add_option("--tiles", synth_tiles, "tiles per domain");
    synth->add_option("--tile-size", synth_tile_size, "tile side length");
    synth->add_option("--patch-size", synth_patch, "patch side length");
    synth->add_option("--stride", synth_stride, "cropping stride");

    auto* train = app.add_subcommand("train", "run the adaptation training loop");
    std::string train_config, train_source, train_target, train_out;
    train->add_option("--config", train_config, "training config file")->required();
    train->add_option("--source", train_source, "labeled source patch dataset")->required();
    train->add_option("--target", train_target, "unlabeled target patch dataset")->required();
    train->add_option("--out", train_out, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a labeled dataset");
    std::string eval_ckpt, eval_data, eval_report;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "labeled patch dataset")->required();
    eval->add_option("--report", eval_report, "write the JSON report here");

    auto* inspect = app.add_subcommand("inspect", "dump channel-average feature maps");
    std::string ins_ckpt, ins_image, ins_dump;
    inspect->add_option("--checkpoint", ins_ckpt, "checkpoint file")->required();
    inspect->add_option("--image", ins_image, "input image (png/tif)")->required();
    inspect->add_option("--dump-features", ins_dump, "output directory for feature images")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (tile->parsed())
            return cmd_tile(tile_in, tile_out, tile_patch, tile_stride, tile_palette);
        if (synth->parsed())
            return cmd_synth(synth_seed, synth_out, synth_shift, synth_tiles, synth_tile_size,
                             synth_patch, synth_stride);
        if (train->parsed()) return cmd_train(train_config, train_source, train_target, train_out);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_report);
        if (inspect->parsed()) return cmd_inspect(ins_ckpt, ins_image, ins_dump);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
