#include "glioplan/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace glioplan {

using nlohmann::json;

Volume::Volume(int channels, int x, int y, int z, double fill)
    : c_(channels), x_(x), y_(y), z_(z),
      data_(static_cast<std::size_t>(channels) * x * y * z, fill) {
    if (channels < 1 || x < 1 || y < 1 || z < 1)
        throw VolumeError("volume dims must be >= 1");
}

bool Volume::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Volume Volume::channel(int c) const {
    Volume out(1, x_, y_, z_);
    std::size_t n = voxels_per_channel();
    std::copy(data_.begin() + c * n, data_.begin() + (c + 1) * n, out.data_.begin());
    return out;
}

Volume Volume::concat_channels(const std::vector<const Volume*>& parts) {
    if (parts.empty()) throw VolumeError("concat_channels: no inputs");
    int total = 0;
    for (const Volume* p : parts) {
        if (p->xdim() != parts[0]->xdim() || p->ydim() != parts[0]->ydim() ||
            p->zdim() != parts[0]->zdim())
            throw VolumeError("concat_channels: dim mismatch");
        total += p->channels();
    }
    Volume out(total, parts[0]->xdim(), parts[0]->ydim(), parts[0]->zdim());
    std::size_t off = 0;
    for (const Volume* p : parts) {
        std::copy(p->data().begin(), p->data().end(), out.data_.begin() + off);
        off += p->data().size();
    }
    return out;
}

bool SegMask::empty() const {
    for (double v : channels.data())
        if (v != 0.0) return false;
    return true;
}

std::size_t SegMask::region_count(int region) const {
    std::size_t n = channels.voxels_per_channel();
    std::size_t count = 0;
    const double* p = channels.data().data() + region * n;
    for (std::size_t i = 0; i < n; ++i)
        if (p[i] != 0.0) ++count;
    return count;
}

void SegMask::validate() const {
    if (channels.channels() != 3) throw VolumeError("mask must have 3 channels");
    for (double v : channels.data())
        if (v != 0.0 && v != 1.0) throw VolumeError("mask values must be 0 or 1");
}

std::string to_string(TumorType t) {
    switch (t) {
        case TumorType::GBM: return "GBM";
        case TumorType::Meningioma: return "Meningioma";
        case TumorType::Schwannoma: return "Schwannoma";
        case TumorType::Neurocytoma: return "Neurocytoma";
        case TumorType::Other: return "Other";
    }
    throw VolumeError("bad tumor type");
}

TumorType tumor_type_from_string(const std::string& s) {
    if (s == "GBM") return TumorType::GBM;
    if (s == "Meningioma") return TumorType::Meningioma;
    if (s == "Schwannoma") return TumorType::Schwannoma;
    if (s == "Neurocytoma") return TumorType::Neurocytoma;
    if (s == "Other") return TumorType::Other;
    throw VolumeError("unknown tumor type: " + s);
}

void TreatmentAction::validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(cx) || !in01(cy) || !in01(cz))
        throw VolumeError("resection center out of [0,1]^3");
    if (radius < 0.0 || radius > 0.5) throw VolumeError("resection radius out of [0,0.5]");
    if (radiotherapy_weeks < 1 || radiotherapy_weeks > 8)
        throw VolumeError("radiotherapy weeks out of [1,8]");
    if (chemo_cycles < 0 || chemo_cycles > 6) throw VolumeError("chemo cycles out of [0,6]");
}

TreatmentAction TreatmentAction::clamped(double cx, double cy, double cz, double radius,
                                         int weeks, int cycles) {
    auto clamp = [](double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); };
    TreatmentAction a;
    a.cx = clamp(cx, 0.0, 1.0);
    a.cy = clamp(cy, 0.0, 1.0);
    a.cz = clamp(cz, 0.0, 1.0);
    a.radius = clamp(radius, 0.0, 0.5);
    a.radiotherapy_weeks = weeks < 1 ? 1 : (weeks > 8 ? 8 : weeks);
    a.chemo_cycles = cycles < 0 ? 0 : (cycles > 6 ? 6 : cycles);
    return a;
}

void WeeklySequence::validate() const {
    if (weeks.empty()) throw VolumeError("weekly sequence must have W >= 1");
    for (const Volume& w : weeks) {
        if (w.channels() != 5) throw VolumeError("weekly volume must have 5 channels");
        if (!w.same_dims(weeks[0])) throw VolumeError("weekly volumes must share dims");
    }
}

// ---- MVOL ----

namespace {

static_assert(std::endian::native == std::endian::little,
              "MVOL writer assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

} // namespace

void write_mvol(const std::string& path, const Volume& v) {
    if (!v.all_finite()) throw VolumeError("refusing to write non-finite volume: " + path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw VolumeError("cannot open for write: " + path);
    os.write("MVOL", 4);
    put_u32(os, 1u);
    put_u32(os, static_cast<std::uint32_t>(v.channels()));
    put_u32(os, static_cast<std::uint32_t>(v.xdim()));
    put_u32(os, static_cast<std::uint32_t>(v.ydim()));
    put_u32(os, static_cast<std::uint32_t>(v.zdim()));
    std::vector<float> buf(v.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<float>(v.data()[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!os) throw VolumeError("short write: " + path);
}

Volume read_mvol(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw VolumeError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MVOL", 4) != 0)
        throw VolumeError("bad MVOL magic: " + path);
    std::uint32_t version = get_u32(is);
    if (version != 1) throw VolumeError("unsupported MVOL version");
    std::uint32_t c = get_u32(is), x = get_u32(is), y = get_u32(is), z = get_u32(is);
    if (!is || c < 1 || x < 1 || y < 1 || z < 1) throw VolumeError("bad MVOL header: " + path);
    Volume v(static_cast<int>(c), static_cast<int>(x), static_cast<int>(y), static_cast<int>(z));
    std::vector<float> buf(v.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw VolumeError("truncated MVOL: " + path);
    for (std::size_t i = 0; i < buf.size(); ++i)
        v.data()[i] = static_cast<double>(buf[i]);
    return v;
}

void write_mask_mvol(const std::string& path, const SegMask& m) {
    m.validate();
    write_mvol(path, m.channels);
}

SegMask read_mask_mvol(const std::string& path) {
    SegMask m;
    m.channels = read_mvol(path);
    m.validate();
    return m;
}

// ---- manifest ----

namespace {

json truth_to_json(const GroundTruth& t) {
    json j;
    j["has_mass"] = t.has_mass;
    j["is_tumor"] = t.is_tumor;
    j["malignant"] = t.malignant;
    if (t.type) j["type"] = to_string(*t.type);
    if (t.survival_days) j["survival_days"] = *t.survival_days;
    return j;
}

GroundTruth truth_from_json(const json& j) {
    GroundTruth t;
    t.has_mass = j.at("has_mass").get<bool>();
    t.is_tumor = j.at("is_tumor").get<bool>();
    t.malignant = j.value("malignant", false);
    if (j.contains("type")) t.type = tumor_type_from_string(j.at("type").get<std::string>());
    if (j.contains("survival_days")) {
        double d = j.at("survival_days").get<double>();
        if (d <= 0.0) throw VolumeError("survival_days must be > 0");
        t.survival_days = d;
    }
    if (t.type && !t.is_tumor) throw VolumeError("truth.type defined only when is_tumor");
    return t;
}

} // namespace

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw VolumeError("cannot open manifest: " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ManifestEntry e;
        e.id = j.at("id").get<std::string>();
        e.volume_path = j.at("volume_path").get<std::string>();
        e.age = j.at("age").get<double>();
        if (e.age <= 0.0) throw VolumeError("age must be > 0 in manifest entry " + e.id);
        if (j.contains("mask_path")) e.mask_path = j.at("mask_path").get<std::string>();
        if (j.contains("truth")) e.truth = truth_from_json(j.at("truth"));
        if (j.contains("radiomics")) {
            auto v = j.at("radiomics").get<std::vector<double>>();
            if (v.size() != 30)
                throw VolumeError("radiomics override must have exactly 30 values");
            e.radiomics_override = std::move(v);
        }
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path);
    if (!os) throw VolumeError("cannot open manifest for write: " + path);
    for (const ManifestEntry& e : entries) {
        json j;
        j["id"] = e.id;
        j["volume_path"] = e.volume_path;
        j["age"] = e.age;
        if (e.mask_path) j["mask_path"] = *e.mask_path;
        if (e.truth) j["truth"] = truth_to_json(*e.truth);
        if (e.radiomics_override) j["radiomics"] = *e.radiomics_override;
        os << j.dump() << "\n";
    }
}

PatientCase load_case(const std::string& manifest_dir, const ManifestEntry& entry) {
    namespace fs = std::filesystem;
    PatientCase c;
    c.id = entry.id;
    c.age = entry.age;
    c.volume = read_mvol((fs::path(manifest_dir) / entry.volume_path).string());
    if (entry.mask_path)
        c.mask = read_mask_mvol((fs::path(manifest_dir) / *entry.mask_path).string());
    c.truth = entry.truth;
    c.radiomics_override = entry.radiomics_override;
    return c;
}

} // namespace glioplan
