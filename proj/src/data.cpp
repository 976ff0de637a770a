#include "dsadapt/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace fs = std::filesystem;

namespace dsadapt {

int Palette::lookup(int r, int g, int b) const {
    for (std::size_t i = 0; i < colors.size(); ++i)
        if (colors[i][0] == r && colors[i][1] == g && colors[i][2] == b)
            return static_cast<int>(i);
    return -1;
}

Tensor normalize_image(const Image8& img, const Normalization& norm) {
    if (img.channels != 3) throw std::invalid_argument("normalize_image: 3 channels required");
    Tensor out({3, img.h, img.w});
    for (int c = 0; c < 3; ++c) {
        double mean = norm.mean[c], inv_std = 1.0 / norm.std[c];
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                out.at(c, y, x) = (img.at(c, y, x) / 255.0 - mean) * inv_std;
    }
    return out;
}

Tensor label_to_tensor(const Image8& label) {
    if (label.channels != 1) throw std::invalid_argument("label_to_tensor: 1 channel required");
    Tensor out({label.h, label.w});
    for (int y = 0; y < label.h; ++y)
        for (int x = 0; x < label.w; ++x) out.at(y, x) = label.at(0, y, x);
    return out;
}

std::vector<std::pair<int, int>> tile_grid(int h_tile, int w_tile, int patch_size, int stride) {
    if (patch_size < 1) throw std::invalid_argument("tile_grid: patch_size must be >= 1");
    if (stride < 1) throw std::invalid_argument("tile_grid: stride must be >= 1");
    if (patch_size > h_tile || patch_size > w_tile)
        throw std::invalid_argument("tile_grid: patch_size " + std::to_string(patch_size) +
                                    " exceeds tile dimensions " + std::to_string(h_tile) + "x" +
                                    std::to_string(w_tile));
    std::vector<std::pair<int, int>> offsets;
    for (int r = 0; r + patch_size <= h_tile; r += stride)
        for (int c = 0; c + patch_size <= w_tile; c += stride) offsets.emplace_back(r, c);
    return offsets;
}

namespace {

Image8 crop_image(const Image8& img, int r0, int c0, int size) {
    Image8 out(img.channels, size, size);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, r0 + y, c0 + x);
    return out;
}

}  // namespace

std::vector<RawPatch> crop_tile_raw(const RawTile& tile, int patch_size, int stride) {
    if (tile.label) {
        if (tile.label->h != tile.pixels.h || tile.label->w != tile.pixels.w)
            throw DataError("tile '" + tile.tile_id + "': label shape " +
                            std::to_string(tile.label->h) + "x" + std::to_string(tile.label->w) +
                            " does not match image " + std::to_string(tile.pixels.h) + "x" +
                            std::to_string(tile.pixels.w));
    }
    auto offsets = tile_grid(tile.pixels.h, tile.pixels.w, patch_size, stride);
    std::vector<RawPatch> patches;
    patches.reserve(offsets.size());
    for (auto [r, c] : offsets) {
        RawPatch p;
        p.image = crop_image(tile.pixels, r, c, patch_size);
        if (tile.label) p.label = crop_image(*tile.label, r, c, patch_size);
        p.origin = {tile.tile_id, r, c};
        patches.push_back(std::move(p));
    }
    return patches;
}

PatchSet crop_tile(const RawTile& tile, int patch_size, int stride, const Normalization& norm) {
    PatchSet set;
    for (auto& raw : crop_tile_raw(tile, patch_size, stride)) {
        if (raw.label) {
            set.labeled.push_back(
                {normalize_image(raw.image, norm), label_to_tensor(*raw.label), raw.origin});
        } else {
            set.unlabeled.push_back({normalize_image(raw.image, norm), raw.origin});
        }
    }
    return set;
}

EncodedLabel encode_label(const Image8& rgb_label, const Palette& palette) {
    if (rgb_label.channels != 3)
        throw std::invalid_argument("encode_label: color label image required");
    std::unordered_map<int, int> lut;
    for (std::size_t i = 0; i < palette.colors.size(); ++i) {
        const auto& c = palette.colors[i];
        lut[(c[0] << 16) | (c[1] << 8) | c[2]] = static_cast<int>(i);
    }
    EncodedLabel out;
    out.map = Image8(1, rgb_label.h, rgb_label.w);
    for (int y = 0; y < rgb_label.h; ++y)
        for (int x = 0; x < rgb_label.w; ++x) {
            int key = (rgb_label.at(0, y, x) << 16) | (rgb_label.at(1, y, x) << 8) |
                      rgb_label.at(2, y, x);
            auto it = lut.find(key);
            if (it == lut.end()) {
                out.map.at(0, y, x) = kIgnoreIndex;
                ++out.unknown_pixels;
            } else {
                out.map.at(0, y, x) = static_cast<std::uint8_t>(it->second);
            }
        }
    return out;
}

Image8 decode_label(const Image8& label_map, const Palette& palette) {
    if (label_map.channels != 1)
        throw std::invalid_argument("decode_label: index map required");
    Image8 out(3, label_map.h, label_map.w);
    for (int y = 0; y < label_map.h; ++y)
        for (int x = 0; x < label_map.w; ++x) {
            int idx = label_map.at(0, y, x);
            if (idx == kIgnoreIndex) continue;  // ignore renders as black
            if (idx < 0 || idx >= palette.num_classes())
                throw std::invalid_argument("decode_label: class id " + std::to_string(idx) +
                                            " outside palette");
            out.at(0, y, x) = static_cast<std::uint8_t>(palette.colors[idx][0]);
            out.at(1, y, x) = static_cast<std::uint8_t>(palette.colors[idx][1]);
            out.at(2, y, x) = static_cast<std::uint8_t>(palette.colors[idx][2]);
        }
    return out;
}

// --- stores ---

void MemoryPatchStore::add(const std::string& id, Image8 image, std::optional<Image8> label) {
    index_[id] = images_.size();
    images_.push_back(std::move(image));
    labels_.push_back(std::move(label));
}

std::size_t MemoryPatchStore::index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("patch id not in store: " + id);
    return it->second;
}

Image8 MemoryPatchStore::load_image(const PatchRecord& rec) const {
    return images_[index_of(rec.id)];
}

std::optional<Image8> MemoryPatchStore::load_label(const PatchRecord& rec) const {
    return labels_[index_of(rec.id)];
}

Image8 DiskPatchStore::load_image(const PatchRecord& rec) const {
    return read_image_rgb((fs::path(root_) / rec.image_path).string());
}

std::optional<Image8> DiskPatchStore::load_label(const PatchRecord& rec) const {
    if (!rec.has_label || rec.label_path.empty()) return std::nullopt;
    Image8 color = read_image_rgb((fs::path(root_) / rec.label_path).string());
    return encode_label(color, palette_).map;
}

LabeledPatch Dataset::load_labeled(std::size_t idx, const Normalization& norm) const {
    const PatchRecord& rec = manifest.patches.at(idx);
    auto label = store->load_label(rec);
    if (!label) throw DataError("patch '" + rec.id + "' has no label");
    return {normalize_image(store->load_image(rec), norm), label_to_tensor(*label),
            {rec.tile_id, rec.row, rec.col}};
}

UnlabeledPatch Dataset::load_unlabeled(std::size_t idx, const Normalization& norm) const {
    const PatchRecord& rec = manifest.patches.at(idx);
    return {normalize_image(store->load_image(rec), norm), {rec.tile_id, rec.row, rec.col}};
}

// --- manifest JSON ---

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json palette_to_json(const Palette& p) {
    ordered_json arr = ordered_json::array();
    for (const auto& c : p.colors) arr.push_back({c[0], c[1], c[2]});
    return arr;
}

Palette palette_from_json(const ordered_json& arr) {
    Palette p;
    for (const auto& c : arr) p.colors.push_back({c.at(0), c.at(1), c.at(2)});
    return p;
}

}  // namespace

std::string manifest_to_json(const DatasetManifest& m) {
    ordered_json j;
    j["format"] = "dsadapt-manifest";
    j["version"] = 1;
    j["patch_size"] = m.patch_size;
    j["stride"] = m.stride;
    j["class_names"] = m.class_names;
    j["palette"] = palette_to_json(m.palette);
    j["labels_eval_only"] = m.labels_eval_only;
    ordered_json patches = ordered_json::array();
    for (const auto& p : m.patches) {
        ordered_json rec;
        rec["id"] = p.id;
        rec["tile_id"] = p.tile_id;
        rec["row"] = p.row;
        rec["col"] = p.col;
        rec["image"] = p.image_path;
        if (p.has_label) rec["label"] = p.label_path;
        else rec["label"] = nullptr;
        patches.push_back(std::move(rec));
    }
    j["patches"] = std::move(patches);
    return j.dump(2);
}

DatasetManifest manifest_from_json(const std::string& text) {
    ordered_json j = ordered_json::parse(text);
    if (j.value("format", "") != "dsadapt-manifest")
        throw DataError("not a dsadapt manifest");
    DatasetManifest m;
    m.patch_size = j.at("patch_size");
    m.stride = j.at("stride");
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.palette = palette_from_json(j.at("palette"));
    m.labels_eval_only = j.value("labels_eval_only", false);
    for (const auto& rec : j.at("patches")) {
        PatchRecord p;
        p.id = rec.at("id");
        p.tile_id = rec.at("tile_id");
        p.row = rec.at("row");
        p.col = rec.at("col");
        p.image_path = rec.at("image");
        if (!rec.at("label").is_null()) {
            p.label_path = rec.at("label");
            p.has_label = true;
        }
        m.patches.push_back(std::move(p));
    }
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << manifest_to_json(m) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return manifest_from_json(ss.str());
}

Dataset open_dataset(const std::string& dir) {
    DatasetManifest m = load_manifest((fs::path(dir) / "manifest.json").string());
    return {m, std::make_shared<DiskPatchStore>(dir, m.palette)};
}

// --- tile directories ---

DatasetMeta load_meta(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read meta: " + path);
    ordered_json j = ordered_json::parse(in);
    DatasetMeta meta;
    meta.class_names = j.at("class_names").get<std::vector<std::string>>();
    meta.palette = palette_from_json(j.at("palette"));
    if (j.contains("splits"))
        for (auto& [name, list] : j.at("splits").items())
            meta.splits[name] = list.get<std::vector<std::string>>();
    return meta;
}

void save_meta(const DatasetMeta& meta, const std::string& path) {
    ordered_json j;
    j["class_names"] = meta.class_names;
    j["palette"] = palette_to_json(meta.palette);
    ordered_json splits;
    for (const auto& [name, list] : meta.splits) splits[name] = list;
    j["splits"] = std::move(splits);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write meta: " + path);
    out << j.dump(2) << "\n";
}

std::vector<TileEntry> scan_tile_dir(const std::string& dir) {
    fs::path images = fs::path(dir) / "images";
    fs::path labels = fs::path(dir) / "labels";
    if (!fs::is_directory(images)) throw DataError("no images/ directory under " + dir);
    std::vector<TileEntry> entries;
    for (const auto& e : fs::directory_iterator(images)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext != ".png" && ext != ".tif" && ext != ".tiff") continue;
        TileEntry t;
        t.tile_id = e.path().stem().string();
        t.image_path = e.path().string();
        fs::path lbl = labels / (t.tile_id + ".png");
        if (fs::exists(lbl)) t.label_path = lbl.string();
        entries.push_back(std::move(t));
    }
    std::sort(entries.begin(), entries.end(),
              [](const TileEntry& a, const TileEntry& b) { return a.tile_id < b.tile_id; });
    return entries;
}

RawTile load_tile(const TileEntry& entry, const Palette& palette, long* unknown_pixels) {
    RawTile tile;
    tile.tile_id = entry.tile_id;
    tile.pixels = read_image_rgb(entry.image_path);
    if (!entry.label_path.empty()) {
        Image8 color = read_image_rgb(entry.label_path);
        if (color.h != tile.pixels.h || color.w != tile.pixels.w)
            throw DataError("tile '" + entry.tile_id + "': label file " + entry.label_path +
                            " has shape " + std::to_string(color.h) + "x" +
                            std::to_string(color.w) + " but image is " +
                            std::to_string(tile.pixels.h) + "x" + std::to_string(tile.pixels.w));
        EncodedLabel enc = encode_label(color, palette);
        if (unknown_pixels) *unknown_pixels += enc.unknown_pixels;
        tile.label = std::move(enc.map);
    }
    return tile;
}

namespace {

std::string patch_stem(const std::string& tile_id, int row, int col) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_r%05d_c%05d", row, col);
    return tile_id + buf;
}

}  // namespace

DatasetManifest tile_directory(const std::string& input_dir, const std::string& output_dir,
                               int patch_size, int stride,
                               const std::string& palette_override_path) {
    std::string meta_path = palette_override_path.empty()
                                ? (fs::path(input_dir) / "meta.json").string()
                                : palette_override_path;
    DatasetMeta meta = load_meta(meta_path);

    auto entries = scan_tile_dir(input_dir);
    if (entries.empty()) throw DataError("no tiles found under " + input_dir);

    fs::create_directories(fs::path(output_dir) / "images");
    fs::create_directories(fs::path(output_dir) / "labels");

    DatasetManifest manifest;
    manifest.patch_size = patch_size;
    manifest.stride = stride;
    manifest.class_names = meta.class_names;
    manifest.palette = meta.palette;

    for (const auto& entry : entries) {
        RawTile tile = load_tile(entry, meta.palette);
        for (auto& patch : crop_tile_raw(tile, patch_size, stride)) {
            std::string stem = patch_stem(tile.tile_id, patch.origin.row, patch.origin.col);
            PatchRecord rec;
            rec.id = stem;
            rec.tile_id = tile.tile_id;
            rec.row = patch.origin.row;
            rec.col = patch.origin.col;
            rec.image_path = "images/" + stem + ".png";
            write_image((fs::path(output_dir) / rec.image_path).string(), patch.image);
            if (patch.label) {
                rec.has_label = true;
                rec.label_path = "labels/" + stem + ".png";
                write_image((fs::path(output_dir) / rec.label_path).string(),
                            decode_label(*patch.label, meta.palette));
            }
            manifest.patches.push_back(std::move(rec));
        }
    }
    save_manifest(manifest, (fs::path(output_dir) / "manifest.json").string());
    return manifest;
}

}  // namespace dsadapt
