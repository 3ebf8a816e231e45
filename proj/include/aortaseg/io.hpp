#ifndef AORTASEG_IO_HPP_
#define AORTASEG_IO_HPP_

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "aortaseg/volume.hpp"

namespace aortaseg
{

static_assert(std::endian::native == std::endian::little,
  "volume containers are little-endian; big-endian hosts are not supported");

namespace fs = std::filesystem;

namespace detail
{

inline bool ends_with(const std::string & s, const std::string & suffix)
{
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Whole-file read through zlib; plain files pass through unchanged.
inline std::vector<unsigned char> read_all(const fs::path & path)
{
  if (!fs::exists(path)) {
    throw IoError("no such file: " + path.string());
  }
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) {throw IoError("cannot open " + path.string());}
  std::vector<unsigned char> buf;
  unsigned char chunk[1 << 16];
  for (;;) {
    const int n = gzread(f, chunk, sizeof(chunk));
    if (n < 0) {
      gzclose(f);
      throw IoError("read error in " + path.string());
    }
    if (n == 0) {break;}
    buf.insert(buf.end(), chunk, chunk + n);
  }
  gzclose(f);
  return buf;
}

/// Writes to a temporary sibling then renames, so readers never see partial files.
inline void write_all(const fs::path & path, const std::vector<unsigned char> & bytes, bool gzip)
{
  if (path.has_parent_path()) {fs::create_directories(path.parent_path());}
  const fs::path tmp = path.string() + ".tmp";
  if (gzip) {
    gzFile f = gzopen(tmp.string().c_str(), "wb6");
    if (!f) {throw IoError("cannot open " + tmp.string() + " for writing");}
    std::size_t off = 0;
    while (off < bytes.size()) {
      const unsigned n = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - off, 1u << 24));
      if (gzwrite(f, bytes.data() + off, n) != static_cast<int>(n)) {
        gzclose(f);
        throw IoError("write error in " + tmp.string());
      }
      off += n;
    }
    if (gzclose(f) != Z_OK) {throw IoError("close failed for " + tmp.string());}
  } else {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {throw IoError("cannot open " + tmp.string() + " for writing");}
    os.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) {throw IoError("write error in " + tmp.string());}
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());}
}

template<typename T>
void put(std::vector<unsigned char> & buf, std::size_t offset, T value)
{
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

template<typename T>
T get(const std::vector<unsigned char> & buf, std::size_t offset)
{
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return v;
}

template<typename T>
void append(std::vector<unsigned char> & buf, T value)
{
  const auto off = buf.size();
  buf.resize(off + sizeof(T));
  std::memcpy(buf.data() + off, &value, sizeof(T));
}

// ---------------------------------------------------------------------------
// Plain container: u32[3] shape, f64[3] spacing, f64[3] origin, u8 kind,
// then f32 data in row-major (x, y, z) order.

constexpr std::size_t kRawHeaderBytes = 3 * 4 + 3 * 8 + 3 * 8 + 1;

inline std::vector<unsigned char> encode_raw(const Volume & v)
{
  std::vector<unsigned char> buf;
  buf.reserve(kRawHeaderBytes + 4 * static_cast<std::size_t>(v.size()));
  for (Index n : v.shape()) {append<std::uint32_t>(buf, static_cast<std::uint32_t>(n));}
  for (double s : v.spacing()) {append<double>(buf, s);}
  for (double o : v.origin()) {append<double>(buf, o);}
  append<std::uint8_t>(buf, static_cast<std::uint8_t>(v.kind()));
  const auto off = buf.size();
  buf.resize(off + 4 * static_cast<std::size_t>(v.size()));
  std::memcpy(buf.data() + off, v.values().data(), 4 * static_cast<std::size_t>(v.size()));
  return buf;
}

inline Volume decode_raw(const std::vector<unsigned char> & buf, const std::string & name)
{
  if (buf.size() < kRawHeaderBytes) {
    throw IoError(name + ": truncated header (" + std::to_string(buf.size()) + " bytes)");
  }
  Shape3 shape{};
  Vec3 spacing{};
  Vec3 origin{};
  std::size_t off = 0;
  for (auto & n : shape) {n = get<std::uint32_t>(buf, off); off += 4;}
  for (auto & s : spacing) {s = get<double>(buf, off); off += 8;}
  for (auto & o : origin) {o = get<double>(buf, off); off += 8;}
  const auto kind_byte = get<std::uint8_t>(buf, off);
  off += 1;
  if (kind_byte > 1) {throw IoError(name + ": unknown volume kind byte " + std::to_string(kind_byte));}
  for (int a = 0; a < 3; ++a) {
    if (shape[a] < 1) {throw IoError(name + ": zero extent on axis " + std::to_string(a));}
    if (!(std::isfinite(spacing[a]) && spacing[a] > 0.0)) {
      throw IoError(name + ": spacing absent or non-positive on axis " + std::to_string(a));
    }
  }
  const std::size_t count = static_cast<std::size_t>(product(shape));
  if (buf.size() != off + 4 * count) {
    throw IoError(name + ": expected " + std::to_string(4 * count) + " data bytes, found " +
            std::to_string(buf.size() - off));
  }
  std::vector<float> data(count);
  std::memcpy(data.data(), buf.data() + off, 4 * count);
  try {
    return Volume(shape, spacing, origin, static_cast<VolumeKind>(kind_byte), std::move(data));
  } catch (const std::exception & e) {
    throw IoError(name + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// NIfTI-1 single file, axis-aligned affines only.

constexpr std::size_t kNiftiHeaderBytes = 348;
constexpr std::size_t kNiftiDataOffset = 352;
constexpr std::int16_t kNiftiIntentLabel = 1002;

enum NiftiType : std::int16_t
{
  nifti_uint8 = 2,
  nifti_int16 = 4,
  nifti_int32 = 8,
  nifti_float32 = 16,
  nifti_float64 = 64,
  nifti_int8 = 256,
  nifti_uint16 = 512,
  nifti_uint32 = 768,
};

inline std::vector<unsigned char> encode_nifti(const Volume & v)
{
  const bool label = v.kind() == VolumeKind::label;
  float max_label = 0.0f;
  if (label) {
    for (float x : v.values()) {max_label = std::max(max_label, x);}
  }
  const std::int16_t dtype = !label ? nifti_float32 : (max_label < 256.0f ? nifti_uint8 : nifti_int32);
  const std::int16_t bitpix = dtype == nifti_uint8 ? 8 : 32;
  const std::size_t count = static_cast<std::size_t>(v.size());

  std::vector<unsigned char> buf(kNiftiDataOffset + count * (bitpix / 8), 0);
  put<std::int32_t>(buf, 0, 348);
  put<char>(buf, 38, 'r');
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(v.shape()[0]),
    static_cast<std::int16_t>(v.shape()[1]), static_cast<std::int16_t>(v.shape()[2]), 1, 1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    if (v.shape()[a] > 32767) {throw IoError("NIfTI-1 cannot store extents above 32767");}
  }
  for (int i = 0; i < 8; ++i) {put<std::int16_t>(buf, 40 + 2 * i, dims[i]);}
  put<std::int16_t>(buf, 68, label ? kNiftiIntentLabel : 0);
  put<std::int16_t>(buf, 70, dtype);
  put<std::int16_t>(buf, 72, bitpix);
  const float pixdim[8] = {1.0f, static_cast<float>(v.spacing()[0]),
    static_cast<float>(v.spacing()[1]), static_cast<float>(v.spacing()[2]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) {put<float>(buf, 76 + 4 * i, pixdim[i]);}
  put<float>(buf, 108, static_cast<float>(kNiftiDataOffset));
  put<float>(buf, 112, 1.0f);
  put<float>(buf, 116, 0.0f);
  put<char>(buf, 123, 2);  // mm
  std::strncpy(reinterpret_cast<char *>(buf.data() + 148), "aortaseg", 79);
  put<std::int16_t>(buf, 252, 1);
  put<std::int16_t>(buf, 254, 1);
  for (int a = 0; a < 3; ++a) {
    put<float>(buf, 268 + 4 * a, static_cast<float>(v.origin()[a]));
    for (int c = 0; c < 4; ++c) {
      float val = 0.0f;
      if (c == a) {val = static_cast<float>(v.spacing()[a]);}
      if (c == 3) {val = static_cast<float>(v.origin()[a]);}
      put<float>(buf, 280 + 16 * a + 4 * c, val);
    }
  }
  std::memcpy(buf.data() + 344, "n+1\0", 4);

  // NIfTI stores x fastest; our storage has z fastest.
  const auto & s = v.shape();
  std::size_t o = kNiftiDataOffset;
  for (Index k = 0; k < s[2]; ++k) {
    for (Index j = 0; j < s[1]; ++j) {
      for (Index i = 0; i < s[0]; ++i) {
        const float x = v.at(i, j, k);
        if (dtype == nifti_float32) {
          put<float>(buf, o, x);
          o += 4;
        } else if (dtype == nifti_uint8) {
          put<std::uint8_t>(buf, o, static_cast<std::uint8_t>(x));
          o += 1;
        } else {
          put<std::int32_t>(buf, o, static_cast<std::int32_t>(x));
          o += 4;
        }
      }
    }
  }
  return buf;
}

inline Volume decode_nifti(
  const std::vector<unsigned char> & buf, const std::string & name,
  std::optional<VolumeKind> kind_hint)
{
  if (buf.size() < kNiftiHeaderBytes) {throw IoError(name + ": truncated NIfTI header");}
  if (get<std::int32_t>(buf, 0) != 348) {
    throw IoError(name + ": sizeof_hdr is not 348 (byte-swapped or not NIfTI-1)");
  }
  if (std::memcmp(buf.data() + 344, "n+1", 3) != 0) {
    throw IoError(name + ": magic is not n+1 (only single-file NIfTI-1 is supported)");
  }
  const auto ndim = get<std::int16_t>(buf, 40);
  if (ndim < 1 || ndim > 7) {throw IoError(name + ": invalid dim[0]");}
  Shape3 shape{1, 1, 1};
  for (int a = 0; a < std::min<int>(ndim, 3); ++a) {
    shape[a] = get<std::int16_t>(buf, 42 + 2 * a);
    if (shape[a] < 1) {throw IoError(name + ": non-positive extent on axis " + std::to_string(a));}
  }
  for (int a = 3; a < ndim; ++a) {
    if (get<std::int16_t>(buf, 42 + 2 * a) > 1) {throw IoError(name + ": volumes above 3D are not supported");}
  }
  Vec3 spacing{};
  for (int a = 0; a < 3; ++a) {
    spacing[a] = std::abs(static_cast<double>(get<float>(buf, 80 + 4 * a)));
    if (!(std::isfinite(spacing[a]) && spacing[a] > 0.0)) {
      throw IoError(name + ": spacing (pixdim) absent or zero on axis " + std::to_string(a));
    }
  }
  Vec3 origin{};
  const auto sform = get<std::int16_t>(buf, 254);
  const auto qform = get<std::int16_t>(buf, 252);
  if (sform > 0) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (c != r && get<float>(buf, 280 + 16 * r + 4 * c) != 0.0f) {
          throw IoError(name + ": oblique affine is not supported");
        }
      }
      origin[r] = get<float>(buf, 280 + 16 * r + 12);
    }
  } else if (qform > 0) {
    for (int q = 0; q < 3; ++q) {
      const float b = get<float>(buf, 256 + 4 * q);
      if (b != 0.0f) {throw IoError(name + ": rotated qform is not supported");}
      origin[q] = get<float>(buf, 268 + 4 * q);
    }
  }

  const auto dtype = get<std::int16_t>(buf, 70);
  const auto vox_offset = static_cast<std::size_t>(get<float>(buf, 108));
  float slope = get<float>(buf, 112);
  float inter = get<float>(buf, 116);
  if (slope == 0.0f || !std::isfinite(slope)) {
    slope = 1.0f;
    inter = 0.0f;
  }
  std::size_t bytes = 0;
  switch (dtype) {
    case nifti_uint8: case nifti_int8: bytes = 1; break;
    case nifti_int16: case nifti_uint16: bytes = 2; break;
    case nifti_int32: case nifti_uint32: case nifti_float32: bytes = 4; break;
    case nifti_float64: bytes = 8; break;
    default: throw IoError(name + ": unsupported NIfTI datatype " + std::to_string(dtype));
  }
  const std::size_t count = static_cast<std::size_t>(product(shape));
  if (vox_offset < kNiftiHeaderBytes || buf.size() < vox_offset + count * bytes) {
    throw IoError(name + ": data section truncated");
  }
  auto read_voxel = [&](std::size_t n) -> double {
      const std::size_t off = vox_offset + n * bytes;
      switch (dtype) {
        case nifti_uint8: return get<std::uint8_t>(buf, off);
        case nifti_int8: return get<std::int8_t>(buf, off);
        case nifti_int16: return get<std::int16_t>(buf, off);
        case nifti_uint16: return get<std::uint16_t>(buf, off);
        case nifti_int32: return get<std::int32_t>(buf, off);
        case nifti_uint32: return get<std::uint32_t>(buf, off);
        case nifti_float32: return get<float>(buf, off);
        default: return get<double>(buf, off);
      }
    };

  VolumeKind kind = get<std::int16_t>(buf, 68) == kNiftiIntentLabel ?
    VolumeKind::label : VolumeKind::image;
  if (kind_hint) {kind = *kind_hint;}
  std::vector<float> data(count);
  std::size_t n = 0;
  for (Index k = 0; k < shape[2]; ++k) {
    for (Index j = 0; j < shape[1]; ++j) {
      for (Index i = 0; i < shape[0]; ++i, ++n) {
        double x = read_voxel(n);
        if (kind == VolumeKind::image) {x = x * slope + inter;}
        data[(i * shape[1] + j) * shape[2] + k] = static_cast<float>(x);
      }
    }
  }
  try {
    return Volume(shape, spacing, origin, kind, std::move(data));
  } catch (const std::exception & e) {
    throw IoError(name + ": " + e.what());
  }
}

enum class VolumeFormat
{
  raw,
  nifti,
  nifti_gz,
};

inline VolumeFormat format_for(const fs::path & path)
{
  const auto s = path.string();
  if (ends_with(s, ".nii.gz")) {return VolumeFormat::nifti_gz;}
  if (ends_with(s, ".nii")) {return VolumeFormat::nifti;}
  if (ends_with(s, ".vol")) {return VolumeFormat::raw;}
  throw IoError("unrecognised volume extension for " + s + " (expected .nii, .nii.gz or .vol)");
}

}  // namespace detail

/**
 * @brief Read a volume from .nii / .nii.gz (NIfTI-1) or .vol (plain container).
 *
 * NIfTI carries no image/label distinction beyond the label intent code;
 * @p kind_hint overrides whatever the file says.
 */
inline Volume load_volume(const fs::path & path, std::optional<VolumeKind> kind_hint = std::nullopt)
{
  const auto fmt = detail::format_for(path);
  const auto buf = detail::read_all(path);
  if (fmt == detail::VolumeFormat::raw) {
    auto v = detail::decode_raw(buf, path.string());
    if (kind_hint && *kind_hint != v.kind()) {
      return v.with_data(std::vector<float>(v.values()), *kind_hint);
    }
    return v;
  }
  return detail::decode_nifti(buf, path.string(), kind_hint);
}

inline void save_volume(const Volume & vol, const fs::path & path)
{
  const auto fmt = detail::format_for(path);
  switch (fmt) {
    case detail::VolumeFormat::raw:
      detail::write_all(path, detail::encode_raw(vol), false);
      break;
    case detail::VolumeFormat::nifti:
      detail::write_all(path, detail::encode_nifti(vol), false);
      break;
    case detail::VolumeFormat::nifti_gz:
      detail::write_all(path, detail::encode_nifti(vol), true);
      break;
  }
}

}  // namespace aortaseg

#endif  // AORTASEG_IO_HPP_
