#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "dsadapt/data.hpp"

namespace fs = std::filesystem;

namespace dsadapt {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// class ids: 0 impervious background, 1 building, 2 low vegetation, 3 tree, 4 clutter
const std::vector<std::string> kClassNames = {"impervious", "building", "low_vegetation", "tree",
                                              "clutter"};
const Palette kPalette = {{{255, 255, 255}, {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 0, 0}}};

// appearance (image) colors, distinct from the label palette
constexpr int kAppearance[5][3] = {
    {190, 190, 190},  // impervious: gray
    {200, 70, 60},    // building: brick red
    {90, 200, 90},    // low vegetation: light green
    {40, 130, 60},    // tree: dark green
    {60, 80, 200},    // clutter: blue
};

struct TilePainter {
    Image8& label;
    std::mt19937_64& rng;
    int size;

    int irand(int lo, int hi) {
        return static_cast<int>(std::uniform_int_distribution<int>(lo, hi)(rng));
    }

    void rect(int cls) {
        int w = irand(size / 14, size / 5), h = irand(size / 14, size / 5);
        int y0 = irand(0, size - h - 1), x0 = irand(0, size - w - 1);
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) label.at(0, y, x) = static_cast<std::uint8_t>(cls);
    }

    void ellipse(int cls, int rmin, int rmax) {
        int ry = irand(rmin, rmax), rx = irand(rmin, rmax);
        int cy = irand(ry, size - ry - 1), cx = irand(rx, size - rx - 1);
        for (int y = cy - ry; y <= cy + ry; ++y)
            for (int x = cx - rx; x <= cx + rx; ++x) {
                double dy = (y - cy) / static_cast<double>(ry);
                double dx = (x - cx) / static_cast<double>(rx);
                if (dy * dy + dx * dx <= 1.0) label.at(0, y, x) = static_cast<std::uint8_t>(cls);
            }
    }
};

}  // namespace

const std::vector<std::string>& synth_class_names() { return kClassNames; }
const Palette& synth_palette() { return kPalette; }

RawTile synth_tile(std::uint64_t seed, int tile_index, int tile_size) {
    if (tile_size < 32) throw std::invalid_argument("synth_tile: tile_size too small");
    std::mt19937_64 rng(splitmix64(seed * 0x100000001ULL + static_cast<std::uint64_t>(tile_index)));

    RawTile tile;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "tile%04d", tile_index);
    tile.tile_id = buf;
    tile.label = Image8(1, tile_size, tile_size);
    TilePainter paint{*tile.label, rng, tile_size};

    // layered regions over the impervious background; later classes overwrite
    int veg = paint.irand(5, 8);
    for (int i = 0; i < veg; ++i) paint.ellipse(2, tile_size / 12, tile_size / 5);
    int trees = paint.irand(9, 15);
    for (int i = 0; i < trees; ++i) paint.ellipse(3, tile_size / 28, tile_size / 11);
    int buildings = paint.irand(6, 10);
    for (int i = 0; i < buildings; ++i) paint.rect(1);
    int clutter = paint.irand(3, 5);
    for (int i = 0; i < clutter; ++i) paint.ellipse(4, tile_size / 24, tile_size / 12);

    // render: class color + class texture + low-frequency illumination + noise.
    // Textures are luminance-only, so they survive channel permutations the
    // way real structures survive a sensor swap.
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    double phase_x = unif(rng) * M_PI, phase_y = unif(rng) * M_PI;
    std::uniform_int_distribution<int> noise(-12, 12);
    std::uniform_int_distribution<int> speckle(-45, 45);
    tile.pixels = Image8(3, tile_size, tile_size);
    for (int y = 0; y < tile_size; ++y)
        for (int x = 0; x < tile_size; ++x) {
            int cls = tile.label->at(0, y, x);
            double ill = 8.0 * std::sin(2.0 * M_PI * x / tile_size + phase_x) +
                         8.0 * std::cos(2.0 * M_PI * y / tile_size + phase_y);
            int texture = 0;
            switch (cls) {
                case 1: texture = (y / 3) % 2 ? 55 : -55; break;        // roof stripes
                case 3: texture = speckle(rng); break;                  // canopy speckle
                case 4: texture = ((x + y) / 4) % 2 ? 45 : -45; break;  // diagonal clutter
                default: break;                                         // smooth surfaces
            }
            for (int c = 0; c < 3; ++c) {
                int v = kAppearance[cls][c] + texture + static_cast<int>(ill) + noise(rng);
                tile.pixels.at(c, y, x) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
            }
        }
    return tile;
}

ShiftSpec ShiftSpec::parse(const std::string& text) {
    ShiftSpec spec;
    if (text.empty() || text == "identity") return spec;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ';')) {
        auto colon = part.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("bad shift component: " + part);
        std::string name = part.substr(0, colon), args = part.substr(colon + 1);
        if (name == "permute") {
            std::array<int, 3> perm{};
            if (std::sscanf(args.c_str(), "%d,%d,%d", &perm[0], &perm[1], &perm[2]) != 3)
                throw std::invalid_argument("bad permutation: " + args);
            std::array<int, 3> sorted = perm;
            std::sort(sorted.begin(), sorted.end());
            if (sorted != std::array<int, 3>{0, 1, 2})
                throw std::invalid_argument("not a channel permutation: " + args);
            spec.channel_perm = perm;
        } else if (name == "rescale") {
            spec.rescale = std::stod(args);
            if (spec.rescale < 1.0 || spec.rescale > 4.0)
                throw std::invalid_argument("rescale must be in [1,4]: " + args);
        } else {
            throw std::invalid_argument("unknown shift component: " + name);
        }
    }
    return spec;
}

std::string ShiftSpec::str() const {
    if (is_identity()) return "identity";
    std::string s;
    if (channel_perm != std::array<int, 3>{0, 1, 2})
        s = "permute:" + std::to_string(channel_perm[0]) + "," + std::to_string(channel_perm[1]) +
            "," + std::to_string(channel_perm[2]);
    if (rescale != 1.0) {
        if (!s.empty()) s += ";";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "rescale:%g", rescale);
        s += buf;
    }
    return s;
}

RawTile apply_shift(const RawTile& tile, const ShiftSpec& shift) {
    RawTile out = tile;
    if (shift.channel_perm != std::array<int, 3>{0, 1, 2}) {
        for (int c = 0; c < 3; ++c) {
            int src = shift.channel_perm[c];
            std::copy(tile.pixels.data.begin() + static_cast<std::size_t>(src) * tile.pixels.h * tile.pixels.w,
                      tile.pixels.data.begin() + static_cast<std::size_t>(src + 1) * tile.pixels.h * tile.pixels.w,
                      out.pixels.data.begin() + static_cast<std::size_t>(c) * tile.pixels.h * tile.pixels.w);
        }
    }
    if (shift.rescale != 1.0) {
        // zoom into the center crop of size/f, back up to the original size:
        // bilinear for pixels, nearest for the label
        const Image8& src = out.pixels;
        int h = src.h, w = src.w;
        double f = shift.rescale;
        double crop_h = h / f, crop_w = w / f;
        double y_off = (h - crop_h) / 2.0, x_off = (w - crop_w) / 2.0;
        Image8 zoom(3, h, w);
        Image8 zoom_label(1, h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double sy = y_off + (y + 0.5) * crop_h / h - 0.5;
                double sx = x_off + (x + 0.5) * crop_w / w - 0.5;
                int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, h - 1);
                int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, w - 1);
                int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                double wy = std::clamp(sy - y0, 0.0, 1.0), wx = std::clamp(sx - x0, 0.0, 1.0);
                for (int c = 0; c < 3; ++c) {
                    double v = (1 - wy) * ((1 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1)) +
                               wy * ((1 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1));
                    zoom.at(c, y, x) = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
                }
                if (out.label) {
                    int yn = std::clamp(static_cast<int>(std::lround(sy)), 0, h - 1);
                    int xn = std::clamp(static_cast<int>(std::lround(sx)), 0, w - 1);
                    zoom_label.at(0, y, x) = out.label->at(0, yn, xn);
                }
            }
        out.pixels = std::move(zoom);
        if (out.label) out.label = std::move(zoom_label);
    }
    out.domain = Domain::target;
    return out;
}

namespace {

std::string patch_id(const std::string& tile_id, int row, int col) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_r%05d_c%05d", row, col);
    return tile_id + buf;
}

Dataset build_domain(const std::vector<RawTile>& tiles, const SynthConfig& cfg, bool eval_only) {
    auto store = std::make_shared<MemoryPatchStore>();
    DatasetManifest manifest;
    manifest.patch_size = cfg.patch_size;
    manifest.stride = cfg.stride;
    manifest.class_names = kClassNames;
    manifest.palette = kPalette;
    manifest.labels_eval_only = eval_only;
    for (const auto& tile : tiles) {
        for (auto& patch : crop_tile_raw(tile, cfg.patch_size, cfg.stride)) {
            PatchRecord rec;
            rec.id = patch_id(tile.tile_id, patch.origin.row, patch.origin.col);
            rec.tile_id = tile.tile_id;
            rec.row = patch.origin.row;
            rec.col = patch.origin.col;
            rec.has_label = patch.label.has_value();
            store->add(rec.id, std::move(patch.image), std::move(patch.label));
            manifest.patches.push_back(std::move(rec));
        }
    }
    return {std::move(manifest), store};
}

}  // namespace

SynthDataset synth_dataset(std::uint64_t seed, const SynthConfig& cfg) {
    if (cfg.n_tiles < 1) throw std::invalid_argument("synth_dataset: n_tiles must be >= 1");
    std::vector<RawTile> source_tiles, target_tiles;
    for (int i = 0; i < cfg.n_tiles; ++i) {
        RawTile tile = synth_tile(seed, i, cfg.tile_size);
        target_tiles.push_back(apply_shift(tile, cfg.shift));
        source_tiles.push_back(std::move(tile));
    }
    SynthDataset out;
    out.source = build_domain(source_tiles, cfg, false);
    out.target = build_domain(target_tiles, cfg, true);
    return out;
}

namespace {

void write_patch_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "labels");
    DatasetManifest manifest = ds.manifest;
    for (auto& rec : manifest.patches) {
        rec.image_path = "images/" + rec.id + ".png";
        write_image((fs::path(dir) / rec.image_path).string(), ds.store->load_image(rec));
        PatchRecord mem_rec = rec;
        mem_rec.image_path.clear();
        if (rec.has_label) {
            rec.label_path = "labels/" + rec.id + ".png";
            auto label = ds.store->load_label(mem_rec);
            write_image((fs::path(dir) / rec.label_path).string(),
                        decode_label(*label, manifest.palette));
        }
    }
    save_manifest(manifest, (fs::path(dir) / "manifest.json").string());
}

}  // namespace

void synth_to_dir(std::uint64_t seed, const SynthConfig& cfg, const std::string& out_dir) {
    SynthDataset ds = synth_dataset(seed, cfg);
    write_patch_dataset(ds.source, (fs::path(out_dir) / "source").string());
    write_patch_dataset(ds.target, (fs::path(out_dir) / "target").string());
}

}  // namespace dsadapt
