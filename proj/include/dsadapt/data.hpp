#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsadapt/image_io.hpp"
#include "dsadapt/tensor.hpp"

namespace dsadapt {

// Bad inputs on the dataset surface (missing files, shape mismatches,
// malformed manifests). The CLI maps these to its data-error exit code.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Label sentinel excluded from losses and metrics.
constexpr int kIgnoreIndex = 255;

struct Palette {
    std::vector<std::array<int, 3>> colors;  // class index -> RGB

    int num_classes() const { return static_cast<int>(colors.size()); }
    // -1 when the color is not in the palette
    int lookup(int r, int g, int b) const;
};

enum class Domain { source, target };

struct RawTile {
    Image8 pixels;               // [3, H_tile, W_tile]
    std::optional<Image8> label; // [1, H_tile, W_tile] class indices, may contain kIgnoreIndex
    std::string tile_id;
    Domain domain = Domain::source;
};

struct PatchOrigin {
    std::string tile_id;
    int row = 0, col = 0;
};

struct LabeledPatch {
    Tensor image;  // [3,P,P], normalized
    Tensor label;  // [P,P] class indices as doubles
    PatchOrigin origin;
};

struct UnlabeledPatch {
    Tensor image;
    PatchOrigin origin;
};

struct RawPatch {
    Image8 image;
    std::optional<Image8> label;
    PatchOrigin origin;
};

// Per-channel (v/255 - mean) / std.
struct Normalization {
    std::array<double, 3> mean = {0.5, 0.5, 0.5};
    std::array<double, 3> std = {0.5, 0.5, 0.5};
};

Tensor normalize_image(const Image8& img, const Normalization& norm);
Tensor label_to_tensor(const Image8& label);

// --- tiling ---

// Row-major offsets of every fully-inside patch. Trailing pixels beyond the
// last full stride are dropped.
std::vector<std::pair<int, int>> tile_grid(int h_tile, int w_tile, int patch_size, int stride);

std::vector<RawPatch> crop_tile_raw(const RawTile& tile, int patch_size, int stride);

struct PatchSet {
    std::vector<LabeledPatch> labeled;
    std::vector<UnlabeledPatch> unlabeled;
};
PatchSet crop_tile(const RawTile& tile, int patch_size, int stride, const Normalization& norm);

// --- label codec ---

struct EncodedLabel {
    Image8 map;  // [1,H,W]
    long unknown_pixels = 0;
};
// RGB color image -> index map; off-palette colors become kIgnoreIndex and
// are counted.
EncodedLabel encode_label(const Image8& rgb_label, const Palette& palette);
Image8 decode_label(const Image8& label_map, const Palette& palette);

// --- dataset manifests ---

struct PatchRecord {
    std::string id;
    std::string tile_id;
    int row = 0, col = 0;
    bool has_label = false;
    std::string image_path;  // relative to the dataset root; empty for in-memory sets
    std::string label_path;
};

struct DatasetManifest {
    int patch_size = 0, stride = 0;
    std::vector<std::string> class_names;
    Palette palette;
    bool labels_eval_only = false;
    std::vector<PatchRecord> patches;

    int num_classes() const { return static_cast<int>(class_names.size()); }
};

class PatchStore {
public:
    virtual ~PatchStore() = default;
    virtual Image8 load_image(const PatchRecord& rec) const = 0;
    virtual std::optional<Image8> load_label(const PatchRecord& rec) const = 0;
};

class MemoryPatchStore final : public PatchStore {
public:
    void add(const std::string& id, Image8 image, std::optional<Image8> label);
    Image8 load_image(const PatchRecord& rec) const override;
    std::optional<Image8> load_label(const PatchRecord& rec) const override;

private:
    std::size_t index_of(const std::string& id) const;
    std::map<std::string, std::size_t> index_;
    std::vector<Image8> images_;
    std::vector<std::optional<Image8>> labels_;
};

class DiskPatchStore final : public PatchStore {
public:
    DiskPatchStore(std::string root, Palette palette) : root_(std::move(root)), palette_(std::move(palette)) {}
    Image8 load_image(const PatchRecord& rec) const override;
    std::optional<Image8> load_label(const PatchRecord& rec) const override;

private:
    std::string root_;
    Palette palette_;
};

struct Dataset {
    DatasetManifest manifest;
    std::shared_ptr<const PatchStore> store;

    LabeledPatch load_labeled(std::size_t idx, const Normalization& norm) const;
    UnlabeledPatch load_unlabeled(std::size_t idx, const Normalization& norm) const;
    std::size_t size() const { return manifest.patches.size(); }
};

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);
void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);
// Opens <dir>/manifest.json with a disk-backed store.
Dataset open_dataset(const std::string& dir);

// --- tile-directory datasets (<root>/images, <root>/labels, <root>/meta.json) ---

struct DatasetMeta {
    std::vector<std::string> class_names;
    Palette palette;
    std::map<std::string, std::vector<std::string>> splits;
};
DatasetMeta load_meta(const std::string& path);
void save_meta(const DatasetMeta& meta, const std::string& path);

// Sorted tile image paths under <dir>/images (png/tif); label paths resolved
// under <dir>/labels when present.
struct TileEntry {
    std::string tile_id;
    std::string image_path;
    std::string label_path;  // empty when absent
};
std::vector<TileEntry> scan_tile_dir(const std::string& dir);
RawTile load_tile(const TileEntry& entry, const Palette& palette, long* unknown_pixels = nullptr);

// Crops every tile in a tile directory into a patch dataset on disk
// (images/, labels/, manifest.json). Returns the manifest.
DatasetManifest tile_directory(const std::string& input_dir, const std::string& output_dir,
                               int patch_size, int stride,
                               const std::string& palette_override_path = "");

// --- synthetic cross-domain generator ---

struct ShiftSpec {
    std::array<int, 3> channel_perm = {0, 1, 2};
    double rescale = 1.0;  // >1 zooms in (coarser ground sampling distance)

    bool is_identity() const { return channel_perm == std::array<int, 3>{0, 1, 2} && rescale == 1.0; }
    static ShiftSpec parse(const std::string& text);
    std::string str() const;
};

struct SynthConfig {
    int n_tiles = 8;
    int tile_size = 256;
    int patch_size = 64;
    int stride = 64;
    ShiftSpec shift;
};

struct SynthDataset {
    Dataset source;
    Dataset target;
};

// Deterministic paired-domain generator: target tiles are the shifted source
// tiles, so identity shift yields bit-identical pixel data. Target labels are
// kept but flagged eval-only.
SynthDataset synth_dataset(std::uint64_t seed, const SynthConfig& config);

// Same generation, written out as two on-disk patch datasets
// (<out>/source, <out>/target).
void synth_to_dir(std::uint64_t seed, const SynthConfig& config, const std::string& out_dir);

// The generator's class set (five aerial-imagery land-cover classes) and palette.
const std::vector<std::string>& synth_class_names();
const Palette& synth_palette();

RawTile synth_tile(std::uint64_t seed, int tile_index, int tile_size);
RawTile apply_shift(const RawTile& tile, const ShiftSpec& shift);

}  // namespace dsadapt
