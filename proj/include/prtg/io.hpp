// SPDX-License-Identifier: Apache-2.0
//
// Serialization: PFM and PNG images, the binary .prtg model format, JSON
// scene/camera/dataset descriptions and fit reports.
#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "prtg/camera.hpp"
#include "prtg/error.hpp"
#include "prtg/fit.hpp"
#include "prtg/gaussian.hpp"
#include "prtg/image.hpp"
#include "prtg/olat.hpp"
#include "prtg/scene_spec.hpp"

namespace prtg {

using Json = nlohmann::json;

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f32(std::vector<unsigned char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::string vec_string(const Eigen::Vector3d& v) {
    std::ostringstream s;
    s << v.x() << "," << v.y() << "," << v.z();
    return s.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

[[nodiscard]] inline std::vector<unsigned char> encode_pfm(const Image& img) {
    const std::string header = "PF\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n-1.0\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(out.size() + img.values().size() * 4);
    for (int y = img.height() - 1; y >= 0; --y) {
        const float* row = img.pixel(0, y);
        for (int i = 0; i < img.width() * 3; ++i) {
            if (!std::isfinite(row[i])) throw InputError("write_pfm: image contains non-finite values");
            detail::put_f32(out, row[i]);
        }
    }
    return out;
}

[[nodiscard]] inline Image decode_pfm(const std::vector<unsigned char>& bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
        if (start == pos) throw FormatError("PFM header truncated", start);
        return std::string(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(pos));
    };
    const std::string magic = token();
    if (magic != "PF" && magic != "Pf") throw FormatError("PFM: bad magic '" + magic + "'", 0);
    const int channels = magic == "PF" ? 3 : 1;
    int w = 0, h = 0;
    double scale = 0.0;
    try {
        const std::size_t at = pos;
        w = std::stoi(token());
        h = std::stoi(token());
        scale = std::stod(token());
        if (w < 1 || h < 1 || scale == 0.0) throw FormatError("PFM: invalid dimensions or scale", at);
    } catch (const std::logic_error&) {
        throw FormatError("PFM: malformed header", pos);
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("PFM: header not terminated", pos);
    ++pos;  // the single whitespace byte before the raster
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels * 4;
    if (bytes.size() - pos < need) throw FormatError("PFM: raster truncated", bytes.size());
    if (bytes.size() - pos > need) throw FormatError("PFM: trailing bytes after raster", pos + need);
    const bool big_endian = scale > 0.0;
    Image img(w, h);
    const unsigned char* p = bytes.data() + pos;
    for (int y = h - 1; y >= 0; --y) {
        float* row = img.pixel(0, y);
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                std::array<unsigned char, 4> b{p[0], p[1], p[2], p[3]};
                if (big_endian) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
                const float v = detail::get_f32(b.data());
                p += 4;
                if (channels == 3) {
                    row[x * 3 + c] = v;
                } else {
                    row[x * 3] = row[x * 3 + 1] = row[x * 3 + 2] = v;
                }
            }
        }
    }
    return img;
}

inline void write_pfm(const Image& img, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_pfm(img));
}

[[nodiscard]] inline Image read_pfm(const std::filesystem::path& path) {
    try {
        return decode_pfm(detail::read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.message(), e.offset());
    }
}

// ---------------------------------------------------------------------------
// PNG (8-bit sRGB)
// ---------------------------------------------------------------------------

[[nodiscard]] inline double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

[[nodiscard]] inline double linear_to_srgb(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

[[nodiscard]] inline Image read_png(const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw IoError("cannot read PNG '" + path.string() + "': " + msg);
    }
    png.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
    }
    Image img(static_cast<int>(png.width), static_cast<int>(png.height));
    auto v = img.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(srgb_to_linear(buf[i] / 255.0));
    return img;
}

/// Linear values are clamped to [0, 1] and sRGB encoded.
inline void write_png(const Image& img, const std::filesystem::path& path) {
    if (img.empty()) throw InputError("write_png: image is empty");
    std::vector<unsigned char> buf(img.values().size());
    const auto v = img.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        buf[i] = static_cast<unsigned char>(std::lround(linear_to_srgb(v[i]) * 255.0));
    }
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width());
    png.height = static_cast<png_uint_32>(img.height());
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw IoError("cannot write PNG '" + path.string() + "': " + msg);
    }
}

/// Reads .pfm or .png by extension.
[[nodiscard]] inline Image read_image(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".pfm") return read_pfm(path);
    if (ext == ".png") return read_png(path);
    throw InputError("unsupported image extension '" + ext + "' (expected .pfm or .png)");
}

inline void write_image(const Image& img, const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png") {
        write_png(img, path);
    } else {
        write_pfm(img, path);
    }
}

// ---------------------------------------------------------------------------
// .prtg model files
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kPrtgVersion = 1;
inline constexpr std::size_t kPrtgHeaderBytes = 28;

[[nodiscard]] inline std::size_t prtg_file_size(std::size_t count, int order) {
    return kPrtgHeaderBytes + count * (14 + static_cast<std::size_t>(sh_count(order))) * 4;
}

/// Layout (little-endian): "PRTG", u32 version, u32 count, u32 sh_order, f32 background
/// rgb, then per Gaussian f32 position(3), rotation(4: w x y z), scale(3, linear),
/// opacity(1), albedo(3), transfer(order^2).
[[nodiscard]] inline std::vector<unsigned char> encode_model(const GaussianModel& model) {
    model.validate();
    std::vector<unsigned char> out{'P', 'R', 'T', 'G'};
    out.reserve(prtg_file_size(model.size(), model.sh_order));
    detail::put_u32(out, kPrtgVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(model.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(model.sh_order));
    for (int c = 0; c < 3; ++c) detail::put_f32(out, static_cast<float>(model.background[c]));
    for (const Gaussian& g : model.gaussians) {
        for (int a = 0; a < 3; ++a) detail::put_f32(out, static_cast<float>(g.position[a]));
        detail::put_f32(out, static_cast<float>(g.rotation.w()));
        detail::put_f32(out, static_cast<float>(g.rotation.x()));
        detail::put_f32(out, static_cast<float>(g.rotation.y()));
        detail::put_f32(out, static_cast<float>(g.rotation.z()));
        const Eigen::Vector3d s = g.scale();
        for (int a = 0; a < 3; ++a) detail::put_f32(out, static_cast<float>(s[a]));
        detail::put_f32(out, static_cast<float>(g.opacity()));
        const Eigen::Vector3d rho = g.albedo();
        for (int c = 0; c < 3; ++c) detail::put_f32(out, static_cast<float>(rho[c]));
        for (Eigen::Index j = 0; j < g.transfer.size(); ++j) detail::put_f32(out, static_cast<float>(g.transfer[j]));
    }
    return out;
}

[[nodiscard]] inline GaussianModel decode_model(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < kPrtgHeaderBytes) throw FormatError("prtg: header truncated", bytes.size());
    if (std::memcmp(bytes.data(), "PRTG", 4) != 0) throw FormatError("prtg: bad magic", 0);
    const std::uint32_t version = detail::get_u32(bytes.data() + 4);
    if (version != kPrtgVersion) {
        throw FormatError("prtg: unsupported version " + std::to_string(version), 4);
    }
    const std::uint32_t count = detail::get_u32(bytes.data() + 8);
    const std::uint32_t order = detail::get_u32(bytes.data() + 12);
    if (order < 1 || order > static_cast<std::uint32_t>(kMaxShOrder)) {
        throw FormatError("prtg: SH order " + std::to_string(order) + " out of range", 12);
    }
    const std::size_t expected = prtg_file_size(count, static_cast<int>(order));
    if (bytes.size() < expected) {
        throw FormatError("prtg: file truncated (expected " + std::to_string(expected) + " bytes, got " +
                              std::to_string(bytes.size()) + ")",
                          bytes.size());
    }
    if (bytes.size() > expected) {
        throw FormatError("prtg: size mismatch (expected " + std::to_string(expected) + " bytes, got " +
                              std::to_string(bytes.size()) + ")",
                          expected);
    }
    GaussianModel model;
    model.sh_order = static_cast<int>(order);
    for (int c = 0; c < 3; ++c) model.background[c] = detail::get_f32(bytes.data() + 16 + 4 * c);
    const int n = sh_count(model.sh_order);
    model.gaussians.resize(count);
    std::size_t off = kPrtgHeaderBytes;
    auto next = [&]() {
        const float v = detail::get_f32(bytes.data() + off);
        if (!std::isfinite(v)) throw FormatError("prtg: non-finite value", off);
        off += 4;
        return static_cast<double>(v);
    };
    for (Gaussian& g : model.gaussians) {
        for (int a = 0; a < 3; ++a) g.position[a] = next();
        const std::size_t q_off = off;
        const double w = next(), x = next(), y = next(), z = next();
        g.rotation = Eigen::Quaterniond(w, x, y, z);
        if (g.rotation.norm() < 1e-6) throw FormatError("prtg: zero rotation quaternion", q_off);
        for (int a = 0; a < 3; ++a) {
            const std::size_t at = off;
            const double s = next();
            if (!(s > 0.0)) throw FormatError("prtg: scale must be positive", at);
            g.log_scale[a] = std::log(s);
        }
        {
            const std::size_t at = off;
            const double o = next();
            if (!(o >= 0.0 && o <= 1.0)) throw FormatError("prtg: opacity outside [0, 1]", at);
            g.opacity_logit = logit(o);
        }
        for (int c = 0; c < 3; ++c) {
            const std::size_t at = off;
            const double r = next();
            if (!(r >= 0.0 && r <= 1.0)) throw FormatError("prtg: albedo outside [0, 1]", at);
            g.albedo_logit[c] = logit(r);
        }
        g.transfer.resize(n);
        for (int j = 0; j < n; ++j) g.transfer[j] = next();
    }
    return model;
}

inline void export_model(const GaussianModel& model, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_model(model));
}

[[nodiscard]] inline GaussianModel import_model(const std::filesystem::path& path) {
    try {
        return decode_model(detail::read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.message(), e.offset());
    }
}

/// Round-trips the model through the f32 file representation.
[[nodiscard]] inline GaussianModel quantize_model(const GaussianModel& model) {
    return decode_model(encode_model(model));
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::Vector3d json_vec3(const Json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) throw InputError(std::string(what) + ": expected an array of 3 numbers");
    Eigen::Vector3d v;
    for (int i = 0; i < 3; ++i) {
        if (!j[static_cast<std::size_t>(i)].is_number()) throw InputError(std::string(what) + ": expected numbers");
        v[i] = j[static_cast<std::size_t>(i)].get<double>();
    }
    return v;
}

inline Json vec3_json(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

template <class T>
T json_get(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw InputError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw InputError(std::string("field '") + key + "' has the wrong type");
    }
}

}  // namespace detail

/// {"primitives": [{"type": "sphere", "center": [..], "radius": r, "albedo": [..]},
///                 {"type": "plane", "point": [..], "normal": [..], "half_extent": h, ...},
///                 {"type": "box", "center": [..], "half_extents": [..], "rotation": [w, x, y, z], ...}]}
[[nodiscard]] inline Json scene_to_json(const SceneSpec& scene) {
    Json prims = Json::array();
    for (const auto& p : scene.primitives) {
        Json j;
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, Sphere>) {
                    j["type"] = "sphere";
                    j["center"] = detail::vec3_json(s.center);
                    j["radius"] = s.radius;
                } else if constexpr (std::is_same_v<T, Plane>) {
                    j["type"] = "plane";
                    j["point"] = detail::vec3_json(s.point);
                    j["normal"] = detail::vec3_json(s.normal);
                    j["half_extent"] = s.half_extent;
                } else {
                    j["type"] = "box";
                    j["center"] = detail::vec3_json(s.center);
                    j["half_extents"] = detail::vec3_json(s.half_extents);
                    j["rotation"] = Json::array({s.rotation.w(), s.rotation.x(), s.rotation.y(), s.rotation.z()});
                }
            },
            p.shape);
        j["albedo"] = detail::vec3_json(p.albedo);
        prims.push_back(std::move(j));
    }
    return Json{{"primitives", prims}};
}

[[nodiscard]] inline SceneSpec scene_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("primitives") || !j["primitives"].is_array()) {
        throw InputError("scene: expected an object with a 'primitives' array");
    }
    SceneSpec scene;
    for (const auto& pj : j["primitives"]) {
        const auto type = detail::json_get<std::string>(pj, "type");
        Primitive prim;
        if (pj.contains("albedo")) prim.albedo = detail::json_vec3(pj["albedo"], "albedo");
        if (type == "sphere") {
            prim.shape = Sphere{detail::json_vec3(pj.at("center"), "center"), detail::json_get<double>(pj, "radius")};
        } else if (type == "plane") {
            if (!pj.contains("point") || !pj.contains("normal")) throw InputError("plane needs 'point' and 'normal'");
            prim.shape = Plane{detail::json_vec3(pj["point"], "point"), detail::json_vec3(pj["normal"], "normal").normalized(),
                               detail::json_get<double>(pj, "half_extent")};
        } else if (type == "box") {
            if (!pj.contains("center") || !pj.contains("half_extents")) throw InputError("box needs 'center' and 'half_extents'");
            Box b{detail::json_vec3(pj["center"], "center"), detail::json_vec3(pj["half_extents"], "half_extents"),
                  Eigen::Quaterniond::Identity()};
            if (pj.contains("rotation")) {
                const auto& r = pj["rotation"];
                if (!r.is_array() || r.size() != 4) throw InputError("box rotation must be [w, x, y, z]");
                b.rotation = Eigen::Quaterniond(r[0].get<double>(), r[1].get<double>(), r[2].get<double>(),
                                                r[3].get<double>()).normalized();
            }
            prim.shape = b;
        } else {
            throw InputError("scene: unknown primitive type '" + type + "'");
        }
        scene.primitives.push_back(prim);
    }
    scene.validate();
    return scene;
}

[[nodiscard]] inline Json camera_to_json(const Camera& cam) {
    const Eigen::Matrix4d m = cam.world_to_camera();
    Json w2c = Json::array();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) w2c.push_back(m(r, c));
    return Json{{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy}, {"world_to_camera", w2c},
                {"near", cam.near}, {"far", cam.far}, {"width", cam.width}, {"height", cam.height}};
}

/// Accepts either the explicit form written by camera_to_json or a look-at form
/// {"eye", "target", "up"?, "width", "height", "focal"}. `fallback_size` supplies
/// width/height when the object omits them.
[[nodiscard]] inline Camera camera_from_json(const Json& j, std::optional<std::pair<int, int>> fallback_size = {}) {
    if (!j.is_object()) throw InputError("camera: expected a JSON object");
    auto size_field = [&](const char* key, int idx) {
        if (j.contains(key)) return detail::json_get<int>(j, key);
        if (fallback_size) return idx == 0 ? fallback_size->first : fallback_size->second;
        throw InputError(std::string("camera: missing field '") + key + "'");
    };
    Camera cam;
    if (j.contains("eye")) {
        const Eigen::Vector3d up = j.contains("up") ? detail::json_vec3(j["up"], "up") : Eigen::Vector3d::UnitZ();
        cam = Camera::look_at(detail::json_vec3(j["eye"], "eye"), detail::json_vec3(j.at("target"), "target"), up,
                              size_field("width", 0), size_field("height", 1), detail::json_get<double>(j, "focal"));
        if (j.contains("near")) cam.near = detail::json_get<double>(j, "near");
        if (j.contains("far")) cam.far = detail::json_get<double>(j, "far");
    } else {
        cam.fx = detail::json_get<double>(j, "fx");
        cam.fy = detail::json_get<double>(j, "fy");
        cam.cx = detail::json_get<double>(j, "cx");
        cam.cy = detail::json_get<double>(j, "cy");
        const auto w2c = detail::json_get<std::vector<double>>(j, "world_to_camera");
        if (w2c.size() != 16) throw InputError("camera: world_to_camera must have 16 entries (row-major 4x4)");
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) cam.rotation(r, c) = w2c[static_cast<std::size_t>(r * 4 + c)];
            cam.translation[r] = w2c[static_cast<std::size_t>(r * 4 + 3)];
        }
        if ((cam.rotation * cam.rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-4) {
            throw InputError("camera: world_to_camera rotation is not orthonormal");
        }
        cam.near = j.value("near", cam.near);
        cam.far = j.value("far", cam.far);
        cam.width = size_field("width", 0);
        cam.height = size_field("height", 1);
    }
    cam.validate();
    return cam;
}

[[nodiscard]] inline Json light_to_json(const DirectionalLight& l) {
    return Json{{"dir", detail::vec3_json(l.direction)}, {"intensity", detail::vec3_json(l.intensity)}};
}

// ---------------------------------------------------------------------------
// Dataset directories: meta.json + img_{cam:03}_{light:03}.pfm
// ---------------------------------------------------------------------------

[[nodiscard]] inline std::string dataset_image_name(std::size_t cam, std::size_t light) {
    std::ostringstream s;
    s << "img_" << std::setw(3) << std::setfill('0') << cam << "_" << std::setw(3) << std::setfill('0') << light
      << ".pfm";
    return s.str();
}

[[nodiscard]] inline Json dataset_meta(const OlatDataset& ds) {
    const int w = ds.cameras.empty() ? 0 : ds.cameras[0].width;
    const int h = ds.cameras.empty() ? 0 : ds.cameras[0].height;
    Json cams = Json::array(), lights = Json::array();
    for (const auto& c : ds.cameras) cams.push_back(camera_to_json(c));
    for (const auto& l : ds.lights) lights.push_back(light_to_json(l));
    return Json{{"resolution", {w, h}},
                {"cameras", cams},
                {"lights", lights},
                {"scene", ds.scene ? scene_to_json(*ds.scene) : Json(nullptr)}};
}

inline void save_dataset(const OlatDataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);
    {
        std::ofstream meta(dir / "meta.json", std::ios::trunc);
        if (!meta) throw IoError("cannot write '" + (dir / "meta.json").string() + "'");
        meta << dataset_meta(ds).dump(2) << "\n";
    }
    for (std::size_t c = 0; c < ds.cameras.size(); ++c)
        for (std::size_t l = 0; l < ds.lights.size(); ++l) write_pfm(ds.image(c, l), dir / dataset_image_name(c, l));
}

[[nodiscard]] inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what(), e.byte);
    }
}

inline void write_json_file(const Json& j, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

/// Reads meta.json and, unless `meta_only`, every image of the grid.
[[nodiscard]] inline OlatDataset load_dataset(const std::filesystem::path& dir, bool meta_only = false) {
    const Json meta = read_json_file(dir / "meta.json");
    const auto res = detail::json_get<std::vector<int>>(meta, "resolution");
    if (res.size() != 2) throw InputError("meta.json: resolution must be [w, h]");
    OlatDataset ds;
    for (const auto& cj : detail::json_get<Json>(meta, "cameras")) ds.cameras.push_back(camera_from_json(cj, std::pair{res[0], res[1]}));
    for (const auto& lj : detail::json_get<Json>(meta, "lights")) {
        DirectionalLight l;
        l.direction = detail::json_vec3(lj.at("dir"), "dir");
        l.intensity = lj.contains("intensity") ? detail::json_vec3(lj["intensity"], "intensity") : Eigen::Vector3d::Ones();
        if (!((l.intensity.array() >= 0.0).all())) throw InputError("meta.json: light intensity must be non-negative");
        ds.lights.push_back(l);
    }
    if (meta.contains("scene") && !meta["scene"].is_null()) ds.scene = scene_from_json(meta["scene"]);
    if (ds.cameras.empty() || ds.lights.empty()) throw InputError("meta.json: cameras and lights must be non-empty");
    if (meta_only) return ds;
    ds.images.resize(ds.cameras.size() * ds.lights.size());
    for (std::size_t c = 0; c < ds.cameras.size(); ++c)
        for (std::size_t l = 0; l < ds.lights.size(); ++l) ds.image(c, l) = read_pfm(dir / dataset_image_name(c, l));
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Fit reports
// ---------------------------------------------------------------------------

[[nodiscard]] inline const char* backend_name(Backend b) {
    return b == Backend::gradient ? "gradient" : "lstsq";
}

/// Everything except "timing" is deterministic for fixed inputs and seed.
[[nodiscard]] inline Json report_to_json(const FitReport& r) {
    const FitConfig& c = r.config;
    Json curve = Json::array();
    for (std::size_t i = 0; i < r.loss_curve.size(); ++i) {
        curve.push_back({{"iteration", i}, {"loss", detail::number_or_null(r.loss_curve[i])},
                         {"psnr", i < r.psnr_curve.size() ? detail::number_or_null(r.psnr_curve[i]) : Json(nullptr)}});
    }
    return Json{
        {"config",
         {{"backend", backend_name(c.backend)}, {"sh_order", c.sh_order}, {"lambda", c.lambda},
          {"iterations", c.iterations}, {"seed", c.seed},
          {"learning_rates", {{"transfer", c.lr_transfer}, {"albedo", c.lr_albedo}, {"opacity", c.lr_opacity},
                              {"scale", c.lr_scale}}},
          {"batch", {{"cameras", c.batch_cameras}, {"lights", c.batch_lights}}},
          {"adam", {{"beta1", 0.9}, {"beta2", 0.999}}},
          {"heldout_fraction", c.heldout_fraction}, {"refine_geometry", c.refine_geometry},
          {"tikhonov", c.tikhonov}}},
        {"split",
         {{"train_cameras", r.split.train_cameras}, {"heldout_cameras", r.split.heldout_cameras},
          {"train_lights", r.split.train_lights}, {"heldout_lights", r.split.heldout_lights}}},
        {"train", {{"psnr", detail::number_or_null(r.train_psnr)}, {"ssim", detail::number_or_null(r.train_ssim)}}},
        {"heldout",
         {{"psnr", detail::number_or_null(r.heldout_psnr)}, {"ssim", detail::number_or_null(r.heldout_ssim)},
          {"pairs", r.heldout_pairs}}},
        {"gaussian_count", r.gaussian_count},
        {"gauge_flagged", r.gauge_flagged},
        {"loss_curve", curve},
        {"timing", {{"duration_seconds", r.duration_seconds}}}};
}

[[nodiscard]] inline std::string loss_curve_csv(const FitReport& r) {
    std::ostringstream s;
    s << std::setprecision(17) << "iteration,loss,psnr\n";
    for (std::size_t i = 0; i < r.loss_curve.size(); ++i) {
        s << i << "," << r.loss_curve[i] << "," << (i < r.psnr_curve.size() ? r.psnr_curve[i] : 0.0) << "\n";
    }
    return s.str();
}

}  // namespace prtg
