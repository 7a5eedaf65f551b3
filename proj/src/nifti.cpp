// Minimal NIfTI-1 single-file IO (.nii and .nii.gz), little-endian only.
// Images round-trip exactly (written as float64); labels, when present in a
// companion file, are written as int32 by the callers that need them.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "diffcl/volume.hpp"

namespace diffcl {

namespace {

#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_INT32 = 8;
constexpr std::int16_t DT_FLOAT32 = 16;
constexpr std::int16_t DT_FLOAT64 = 64;

bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

std::vector<char> read_all_bytes(const std::string& path) {
    if (has_suffix(path, ".gz")) {
        gzFile f = gzopen(path.c_str(), "rb");
        if (!f) throw IoError("cannot open " + path);
        std::vector<char> out;
        char buf[1 << 16];
        int n;
        while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
        const bool bad = n < 0;
        gzclose(f);
        if (bad) throw IoError("gzip read error in " + path);
        return out;
    }
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_all_bytes(const std::string& path, const std::vector<char>& bytes) {
    if (has_suffix(path, ".gz")) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw IoError("cannot open " + path + " for writing");
        std::size_t off = 0;
        while (off < bytes.size()) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - off, 1u << 20));
            if (gzwrite(f, bytes.data() + off, chunk) != static_cast<int>(chunk)) {
                gzclose(f);
                throw IoError("gzip write error in " + path);
            }
            off += chunk;
        }
        gzclose(f);
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write error in " + path);
}

}  // namespace

VolumeSample load_volume(const std::string& path) {
    const auto bytes = read_all_bytes(path);
    if (bytes.size() < sizeof(Nifti1Header)) throw FormatError("truncated NIfTI file: " + path);
    Nifti1Header hdr;
    std::memcpy(&hdr, bytes.data(), sizeof(hdr));
    if (hdr.sizeof_hdr != 348 || std::strncmp(hdr.magic, "n+1", 3) != 0) {
        throw FormatError("not a little-endian single-file NIfTI-1: " + path);
    }
    int nd = hdr.dim[0];
    // accept trailing singleton dims
    while (nd > 3 && hdr.dim[nd] <= 1) --nd;
    if (nd != 3) {
        throw FormatError("expected 3D payload in " + path + ", got dim[0]=" +
                          std::to_string(hdr.dim[0]));
    }
    const int h = hdr.dim[1], l = hdr.dim[2], d = hdr.dim[3];
    if (h <= 0 || l <= 0 || d <= 0) throw FormatError("bad dimensions in " + path);
    const std::size_t n = static_cast<std::size_t>(h) * l * d;
    const std::size_t off = static_cast<std::size_t>(hdr.vox_offset);
    const double slope = hdr.scl_slope == 0.0f ? 1.0 : static_cast<double>(hdr.scl_slope);
    const double inter = static_cast<double>(hdr.scl_inter);

    // NIfTI stores the fastest-varying axis first; our grids are [H,L,D]
    // row-major with D fastest, so we read in file order into that layout.
    Tensor img({h, l, d});
    auto need = [&](std::size_t want) {
        if (bytes.size() < off + want) throw FormatError("truncated voxel data in " + path);
    };
    switch (hdr.datatype) {
        case DT_UINT8: {
            need(n);
            const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data() + off);
            for (std::size_t i = 0; i < n; ++i) img.data[i] = slope * p[i] + inter;
            break;
        }
        case DT_INT16: {
            need(n * 2);
            const auto* p = reinterpret_cast<const std::int16_t*>(bytes.data() + off);
            for (std::size_t i = 0; i < n; ++i) img.data[i] = slope * p[i] + inter;
            break;
        }
        case DT_INT32: {
            need(n * 4);
            const auto* p = reinterpret_cast<const std::int32_t*>(bytes.data() + off);
            for (std::size_t i = 0; i < n; ++i) img.data[i] = slope * p[i] + inter;
            break;
        }
        case DT_FLOAT32: {
            need(n * 4);
            const auto* p = reinterpret_cast<const float*>(bytes.data() + off);
            for (std::size_t i = 0; i < n; ++i) img.data[i] = slope * static_cast<double>(p[i]) + inter;
            break;
        }
        case DT_FLOAT64: {
            need(n * 8);
            const auto* p = reinterpret_cast<const double*>(bytes.data() + off);
            for (std::size_t i = 0; i < n; ++i) img.data[i] = slope * p[i] + inter;
            break;
        }
        default:
            throw FormatError("unsupported NIfTI datatype " + std::to_string(hdr.datatype) +
                              " in " + path);
    }

    VolumeSample out;
    out.image = std::move(img);
    out.spacing = {static_cast<double>(hdr.pixdim[1]), static_cast<double>(hdr.pixdim[2]),
                   static_cast<double>(hdr.pixdim[3])};
    // derive id from filename stem
    std::string stem = path;
    const auto slash = stem.find_last_of('/');
    if (slash != std::string::npos) stem = stem.substr(slash + 1);
    for (const char* suf : {".nii.gz", ".nii"}) {
        if (has_suffix(stem, suf)) {
            stem = stem.substr(0, stem.size() - std::strlen(suf));
            break;
        }
    }
    out.id = stem;
    return out;
}

void save_volume(const VolumeSample& sample, const std::string& path) {
    Nifti1Header hdr;
    std::memset(&hdr, 0, sizeof(hdr));
    hdr.sizeof_hdr = 348;
    hdr.regular = 'r';
    hdr.dim[0] = 3;
    hdr.dim[1] = static_cast<std::int16_t>(sample.image.dim(0));
    hdr.dim[2] = static_cast<std::int16_t>(sample.image.dim(1));
    hdr.dim[3] = static_cast<std::int16_t>(sample.image.dim(2));
    for (int i = 4; i < 8; ++i) hdr.dim[i] = 1;
    hdr.datatype = DT_FLOAT64;
    hdr.bitpix = 64;
    hdr.pixdim[0] = 1.0f;
    hdr.pixdim[1] = static_cast<float>(sample.spacing[0]);
    hdr.pixdim[2] = static_cast<float>(sample.spacing[1]);
    hdr.pixdim[3] = static_cast<float>(sample.spacing[2]);
    hdr.vox_offset = 352.0f;
    hdr.scl_slope = 1.0f;
    hdr.scl_inter = 0.0f;
    hdr.xyzt_units = 2;  // millimetres
    hdr.sform_code = 0;
    hdr.qform_code = 0;
    std::memcpy(hdr.magic, "n+1", 4);

    std::vector<char> bytes(352 + sample.image.numel() * sizeof(double), 0);
    std::memcpy(bytes.data(), &hdr, sizeof(hdr));
    std::memcpy(bytes.data() + 352, sample.image.data.data(),
                sample.image.numel() * sizeof(double));
    write_all_bytes(path, bytes);
}

}  // namespace diffcl
