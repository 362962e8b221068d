#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace glioplan {

// Canonical in-plane / depth working geometry. 2D classifiers consume axial
// slices of this grid; 3D models consume full volumes.
inline constexpr int kCanonicalX = 64;
inline constexpr int kCanonicalY = 64;
inline constexpr int kCanonicalZ = 32;

struct VolumeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// C-channel 3D voxel grid. Buffer layout is channel-major with X fastest:
// index(c,x,y,z) = ((c*Z + z)*Y + y)*X + x. The MVOL file format stores
// voxels in exactly this order, so serialization is a flat copy.
class Volume {
public:
    Volume() = default;
    Volume(int channels, int x, int y, int z, double fill = 0.0);

    int channels() const { return c_; }
    int xdim() const { return x_; }
    int ydim() const { return y_; }
    int zdim() const { return z_; }
    std::size_t voxels_per_channel() const { return static_cast<std::size_t>(x_) * y_ * z_; }
    std::size_t size() const { return data_.size(); }

    double spacing_x = 1.0, spacing_y = 1.0, spacing_z = 1.0;

    double& at(int c, int x, int y, int z) { return data_[index(c, x, y, z)]; }
    double at(int c, int x, int y, int z) const { return data_[index(c, x, y, z)]; }

    std::size_t index(int c, int x, int y, int z) const {
        return ((static_cast<std::size_t>(c) * z_ + z) * y_ + y) * x_ + x;
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_dims(const Volume& o) const {
        return c_ == o.c_ && x_ == o.x_ && y_ == o.y_ && z_ == o.z_;
    }
    bool all_finite() const;

    // Single-channel view copy.
    Volume channel(int c) const;
    // Channel concatenation (dims must match).
    static Volume concat_channels(const std::vector<const Volume*>& parts);

private:
    int c_ = 0, x_ = 0, y_ = 0, z_ = 0;
    std::vector<double> data_;
};

// Three binary channels over (X,Y,Z): edema, enhancing tumor, tumor core.
struct SegMask {
    static constexpr int kEdema = 0;
    static constexpr int kEnhancing = 1;
    static constexpr int kCore = 2;

    Volume channels; // 3-channel volume with values in {0,1}

    SegMask() = default;
    explicit SegMask(int x, int y, int z) : channels(3, x, y, z, 0.0) {}

    bool empty() const;
    std::size_t region_count(int region) const;
    void validate() const; // values in {0,1}
};

enum class TumorType { GBM, Meningioma, Schwannoma, Neurocytoma, Other };

std::string to_string(TumorType t);
TumorType tumor_type_from_string(const std::string& s);

struct GroundTruth {
    bool has_mass = false;
    bool is_tumor = false;
    bool malignant = false;
    std::optional<TumorType> type;         // defined only when is_tumor
    std::optional<double> survival_days;   // > 0 when present
};

struct PatientCase {
    std::string id;
    Volume volume;
    double age = 0.0; // years, > 0
    std::optional<SegMask> mask;
    std::optional<GroundTruth> truth;
    // Doctor-entered radiomic features; when present the cascade uses these
    // instead of running extraction (exactly 30 values).
    std::optional<std::vector<double>> radiomics_override;
};

// Plan-search action: resection geometry plus therapy schedule.
struct TreatmentAction {
    double cx = 0.5, cy = 0.5, cz = 0.5; // resection center, normalized [0,1]^3
    double radius = 0.0;                 // fraction of in-plane extent, [0, 0.5]
    int radiotherapy_weeks = 1;          // [1, 8]
    int chemo_cycles = 0;                // [0, 6]

    void validate() const;
    // Clamp every field into its stated bounds.
    static TreatmentAction clamped(double cx, double cy, double cz, double radius,
                                   int weeks, int cycles);
};

// Ordered per-week 5-channel volumes, shape (W, 5, 64, 64, 32).
struct WeeklySequence {
    std::vector<Volume> weeks;

    int num_weeks() const { return static_cast<int>(weeks.size()); }
    void validate() const; // all weeks share dims, 5 channels
};

// ---- MVOL binary format ----
// magic "MVOL", u32 version=1, u32 C, u32 X, u32 Y, u32 Z, then C*X*Y*Z
// little-endian 32-bit floats in canonical voxel order.
void write_mvol(const std::string& path, const Volume& v);
Volume read_mvol(const std::string& path);

void write_mask_mvol(const std::string& path, const SegMask& m);
SegMask read_mask_mvol(const std::string& path);

// ---- Case manifest (JSON lines) ----
// One JSON object per line: id, volume_path, age, optional mask_path,
// optional truth{has_mass, is_tumor, malignant, type, survival_days},
// optional radiomics (array of 30 numbers). Paths are relative to the
// manifest's directory.
struct ManifestEntry {
    std::string id;
    std::string volume_path;
    double age = 0.0;
    std::optional<std::string> mask_path;
    std::optional<GroundTruth> truth;
    std::optional<std::vector<double>> radiomics_override;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Loads the referenced volume (and mask, when present) for an entry.
PatientCase load_case(const std::string& manifest_dir, const ManifestEntry& entry);

} // namespace glioplan
