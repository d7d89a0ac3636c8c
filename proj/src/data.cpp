// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include "vipformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vipformer/errors.hpp"

namespace vip {

namespace {

constexpr double kPi = 3.141592653589793238462643383280;

struct Vec3 {
    double x, y, z;
};

double dot2(double a, double b) { return a * a + b * b; }

double sd_box(double x, double y, double z, double a, double b, double c) {
    const double qx = std::abs(x) - a, qy = std::abs(y) - b, qz = std::abs(z) - c;
    const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0), oz = std::max(qz, 0.0);
    return std::sqrt(ox * ox + oy * oy + oz * oz) + std::min(std::max(qx, std::max(qy, qz)), 0.0);
}

double sd_cylinder(double x, double y, double z, double r, double hh) {
    const double dr = std::hypot(x, y) - r, dz = std::abs(z) - hh;
    const double orr = std::max(dr, 0.0), oz = std::max(dz, 0.0);
    return std::min(std::max(dr, dz), 0.0) + std::sqrt(orr * orr + oz * oz);
}

// Capped cone on the z axis: radius r at z = -hh, apex at z = +hh.
double sd_cone(double x, double y, double z, double r, double hh) {
    const double qx = std::hypot(x, y), qy = z;
    const double r1 = r, r2 = 0.0, h = hh;
    const double k1x = r2, k1y = h;
    const double k2x = r2 - r1, k2y = 2.0 * h;
    const double cax = qx - std::min(qx, (qy < 0.0) ? r1 : r2);
    const double cay = std::abs(qy) - h;
    const double t = std::clamp(((k1x - qx) * k2x + (k1y - qy) * k2y) / dot2(k2x, k2y), 0.0, 1.0);
    const double cbx = qx - k1x + k2x * t;
    const double cby = qy - k1y + k2y * t;
    const double s = (cbx < 0.0 && cay < 0.0) ? -1.0 : 1.0;
    return s * std::sqrt(std::min(dot2(cax, cay), dot2(cbx, cby)));
}

double sd_torus(double x, double y, double z, double big_r, double small_r) {
    const double q = std::hypot(x, y) - big_r;
    return std::hypot(q, z) - small_r;
}

// Convex pyramid via its five face planes: exact inside, a lower bound near
// edges outside (safe for sphere tracing).
double sd_pyramid(double x, double y, double z, double a, double hh) {
    const double inv_len = 1.0 / std::sqrt(4.0 * hh * hh + a * a);
    const double side = (2.0 * hh * std::max(std::abs(x), std::abs(y)) + a * z - a * hh) * inv_len;
    const double bottom = -z - hh;
    return std::max(side, bottom);
}

double sd_capsule(double x, double y, double z, double r, double hh) {
    const double cz = z - std::clamp(z, -hh, hh);
    return std::sqrt(x * x + y * y + cz * cz) - r;
}

double sd_cross(double x, double y, double z, double w) {
    return std::min({sd_box(x, y, z, 1.0, w, w), sd_box(x, y, z, w, 1.0, w), sd_box(x, y, z, w, w, 1.0)});
}

Vec3 unit_gaussian_dir(RngStream& rng) {
    double x, y, z, n;
    do {
        x = rng.normal();
        y = rng.normal();
        z = rng.normal();
        n = std::sqrt(x * x + y * y + z * z);
    } while (n < 1e-12);
    return {x / n, y / n, z / n};
}

Vec3 sample_box_face(double a, double b, double c, RngStream& rng) {
    const double areas[3] = {b * c, a * c, a * b};  // proportional face weights
    const double total = areas[0] + areas[1] + areas[2];
    const double pick = rng.uniform() * total;
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
    if (pick < areas[0]) return {sign * a, u * b, v * c};
    if (pick < areas[0] + areas[1]) return {u * a, sign * b, v * c};
    return {u * a, v * b, sign * c};
}

Vec3 sample_triangle(const Vec3& a, const Vec3& b, const Vec3& c, RngStream& rng) {
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    return {a.x + u * (b.x - a.x) + v * (c.x - a.x), a.y + u * (b.y - a.y) + v * (c.y - a.y),
            a.z + u * (b.z - a.z) + v * (c.z - a.z)};
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    const double ux = b.x - a.x, uy = b.y - a.y, uz = b.z - a.z;
    const double vx = c.x - a.x, vy = c.y - a.y, vz = c.z - a.z;
    const double cx = uy * vz - uz * vy, cy = uz * vx - ux * vz, cz = ux * vy - uy * vx;
    return 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
}

Vec3 sample_one(const ShapeSpec& s, RngStream& rng) {
    switch (s.family) {
        case ShapeFamily::Sphere: {
            return unit_gaussian_dir(rng);
        }
        case ShapeFamily::Cube: {
            return sample_box_face(s.p0, s.p1, s.p2, rng);
        }
        case ShapeFamily::Cylinder: {
            const double r = s.p0, hh = s.p1;
            const double side = 2.0 * kPi * r * 2.0 * hh, caps = 2.0 * kPi * r * r;
            if (rng.uniform() * (side + caps) < side) {
                const double th = rng.uniform(0.0, 2.0 * kPi);
                return {r * std::cos(th), r * std::sin(th), rng.uniform(-hh, hh)};
            }
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            const double rho = r * std::sqrt(rng.uniform());
            const double th = rng.uniform(0.0, 2.0 * kPi);
            return {rho * std::cos(th), rho * std::sin(th), sign * hh};
        }
        case ShapeFamily::Cone: {
            const double r = s.p0, hh = s.p1, height = 2.0 * hh;
            const double slant = std::sqrt(r * r + height * height);
            const double lateral = kPi * r * slant, base = kPi * r * r;
            if (rng.uniform() * (lateral + base) < lateral) {
                const double frac = std::sqrt(rng.uniform());  // area-uniform from the apex
                const double th = rng.uniform(0.0, 2.0 * kPi);
                return {frac * r * std::cos(th), frac * r * std::sin(th), hh - frac * height};
            }
            const double rho = r * std::sqrt(rng.uniform());
            const double th = rng.uniform(0.0, 2.0 * kPi);
            return {rho * std::cos(th), rho * std::sin(th), -hh};
        }
        case ShapeFamily::Torus: {
            const double big_r = s.p0, small_r = s.p1;
            const double th = rng.uniform(0.0, 2.0 * kPi);
            double phi;
            for (;;) {
                phi = rng.uniform(0.0, 2.0 * kPi);
                if (rng.uniform() * (big_r + small_r) <= big_r + small_r * std::cos(phi)) break;
            }
            const double ring = big_r + small_r * std::cos(phi);
            return {ring * std::cos(th), ring * std::sin(th), small_r * std::sin(phi)};
        }
        case ShapeFamily::Pyramid: {
            const double a = s.p0, hh = s.p1;
            const Vec3 apex{0, 0, hh};
            const Vec3 corners[4] = {{a, a, -hh}, {-a, a, -hh}, {-a, -a, -hh}, {a, -a, -hh}};
            const double side_area = triangle_area(apex, corners[0], corners[1]);
            const double base_area = 4.0 * a * a;
            const double pick = rng.uniform() * (4.0 * side_area + base_area);
            if (pick < 4.0 * side_area) {
                const int face = std::min(3, static_cast<int>(pick / side_area));
                return sample_triangle(apex, corners[face], corners[(face + 1) % 4], rng);
            }
            return {rng.uniform(-a, a), rng.uniform(-a, a), -hh};
        }
        case ShapeFamily::Capsule: {
            const double r = s.p0, hh = s.p1;
            const double side = 2.0 * kPi * r * 2.0 * hh, sphere = 4.0 * kPi * r * r;
            if (rng.uniform() * (side + sphere) < side) {
                const double th = rng.uniform(0.0, 2.0 * kPi);
                return {r * std::cos(th), r * std::sin(th), rng.uniform(-hh, hh)};
            }
            const Vec3 d = unit_gaussian_dir(rng);
            return {r * d.x, r * d.y, r * d.z + (d.z >= 0 ? hh : -hh)};
        }
        case ShapeFamily::Cross: {
            const double w = s.p0;
            const double half[3][3] = {{1.0, w, w}, {w, 1.0, w}, {w, w, 1.0}};
            for (int tries = 0; tries < 1000; ++tries) {
                const std::size_t arm = rng.uniform_index(3);
                const Vec3 p = sample_box_face(half[arm][0], half[arm][1], half[arm][2], rng);
                bool interior = false;
                for (std::size_t other = 0; other < 3 && !interior; ++other)
                    if (other != arm &&
                        sd_box(p.x, p.y, p.z, half[other][0], half[other][1], half[other][2]) < -1e-9)
                        interior = true;
                if (!interior) return p;
            }
            return {1.0, 0.0, 0.0};  // unreachable for valid widths
        }
    }
    throw ParamError("sample_one: unknown shape family");
}

}  // namespace

const char* shape_family_name(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::Sphere: return "sphere";
        case ShapeFamily::Cube: return "cube";
        case ShapeFamily::Cylinder: return "cylinder";
        case ShapeFamily::Cone: return "cone";
        case ShapeFamily::Torus: return "torus";
        case ShapeFamily::Pyramid: return "pyramid";
        case ShapeFamily::Capsule: return "capsule";
        case ShapeFamily::Cross: return "cross";
    }
    throw ParamError("unknown shape family");
}

ShapeFamily shape_family_from_index(int i) {
    if (i < 0 || i >= kShapeFamilyCount) throw ParamError("shape family index out of range: " + std::to_string(i));
    return static_cast<ShapeFamily>(i);
}

ShapeSpec make_shape_spec(ShapeFamily family, RngStream& rng) {
    ShapeSpec s;
    s.family = family;
    switch (family) {
        case ShapeFamily::Sphere:  // exactly the unit sphere
            s.p0 = s.p1 = s.p2 = 1.0;
            break;
        case ShapeFamily::Cube:
            s.p0 = rng.uniform(0.5, 1.0);
            s.p1 = rng.uniform(0.5, 1.0);
            s.p2 = rng.uniform(0.5, 1.0);
            break;
        case ShapeFamily::Cylinder:
            s.p0 = rng.uniform(0.4, 0.9);
            s.p1 = rng.uniform(0.5, 1.0);
            break;
        case ShapeFamily::Cone:
            s.p0 = rng.uniform(0.5, 1.0);
            s.p1 = rng.uniform(0.5, 1.0);
            break;
        case ShapeFamily::Torus:
            s.p0 = rng.uniform(0.6, 1.0);
            s.p1 = s.p0 * rng.uniform(0.2, 0.45);
            break;
        case ShapeFamily::Pyramid:
            s.p0 = rng.uniform(0.5, 1.0);
            s.p1 = rng.uniform(0.4, 0.9);
            break;
        case ShapeFamily::Capsule:
            s.p0 = rng.uniform(0.3, 0.6);
            s.p1 = rng.uniform(0.4, 1.0);
            break;
        case ShapeFamily::Cross:
            s.p0 = rng.uniform(0.15, 0.35);
            break;
    }
    return s;
}

std::vector<std::array<double, 3>> sample_surface_points(const ShapeSpec& spec, std::size_t n, RngStream& rng) {
    std::vector<std::array<double, 3>> pts(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 p = sample_one(spec, rng);
        pts[i] = {p.x, p.y, p.z};
    }
    return pts;
}

double shape_sdf(const ShapeSpec& s, double x, double y, double z) {
    switch (s.family) {
        case ShapeFamily::Sphere: return std::sqrt(x * x + y * y + z * z) - 1.0;
        case ShapeFamily::Cube: return sd_box(x, y, z, s.p0, s.p1, s.p2);
        case ShapeFamily::Cylinder: return sd_cylinder(x, y, z, s.p0, s.p1);
        case ShapeFamily::Cone: return sd_cone(x, y, z, s.p0, s.p1);
        case ShapeFamily::Torus: return sd_torus(x, y, z, s.p0, s.p1);
        case ShapeFamily::Pyramid: return sd_pyramid(x, y, z, s.p0, s.p1);
        case ShapeFamily::Capsule: return sd_capsule(x, y, z, s.p0, s.p1);
        case ShapeFamily::Cross: return sd_cross(x, y, z, s.p0);
    }
    throw ParamError("shape_sdf: unknown shape family");
}

std::vector<std::uint8_t> render_silhouette(const ShapeSpec& spec, const std::array<double, 3>& center,
                                            double scale, double azimuth, int size) {
    if (size < 2) throw ParamError("render_silhouette: image size too small");
    if (scale <= 0) throw ParamError("render_silhouette: scale must be positive");
    std::vector<std::uint8_t> img(static_cast<std::size_t>(size) * static_cast<std::size_t>(size), 0);
    const double dx = std::cos(azimuth), dy = std::sin(azimuth);
    const double rx = -std::sin(azimuth), ry = std::cos(azimuth);

#pragma omp parallel for schedule(static)
    for (int row = 0; row < size; ++row) {
        const double v = (1.0 - 2.0 * (row + 0.5) / size) * kViewHalfExtent;
        for (int col = 0; col < size; ++col) {
            const double u = (2.0 * (col + 0.5) / size - 1.0) * kViewHalfExtent;
            // Ray in normalized space: origin 2 units behind the center.
            double ox = -2.0 * dx + u * rx;
            double oy = -2.0 * dy + u * ry;
            double oz = v;
            double t = 0.0;
            bool hit = false;
            for (int step = 0; step < 128 && t < 4.2; ++step) {
                const double px = ox + t * dx, py = oy + t * dy, pz = oz;
                const double d =
                    shape_sdf(spec, px * scale + center[0], py * scale + center[1], pz * scale + center[2]) / scale;
                if (d < 1e-4) {
                    hit = true;
                    break;
                }
                t += std::max(d, 5e-4);
            }
            if (hit) {
                const double depth = std::clamp((t - 2.0 + kViewHalfExtent) / (2.0 * kViewHalfExtent), 0.0, 1.0);
                const double shade = kShadeNear - (kShadeNear - kShadeFar) * depth;
                img[static_cast<std::size_t>(row) * size + col] =
                    static_cast<std::uint8_t>(std::lround(shade * 255.0));
            }
        }
    }
    return img;
}

// --------------------------------------------------------------------------
// Point files
// --------------------------------------------------------------------------

namespace {

float get_f32_le(const std::uint8_t* p) {
    std::uint32_t v = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

void put_f32_le(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

}  // namespace

std::vector<std::array<float, 3>> read_points_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open points file '" + path.string() + "'");
    std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    if (raw.size() >= 4 && std::memcmp(raw.data(), "VPTS", 4) == 0) {
        if (raw.size() < 8) throw FormatError("'" + path.string() + "': truncated at offset 4 (missing count)");
        const std::uint32_t n = static_cast<std::uint32_t>(raw[4]) | (static_cast<std::uint32_t>(raw[5]) << 8) |
                                (static_cast<std::uint32_t>(raw[6]) << 16) |
                                (static_cast<std::uint32_t>(raw[7]) << 24);
        const std::size_t need = 8 + static_cast<std::size_t>(n) * 12;
        if (raw.size() < need)
            throw FormatError("'" + path.string() + "': payload short, have " + std::to_string(raw.size()) +
                              " bytes, need " + std::to_string(need));
        std::vector<std::array<float, 3>> pts(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::uint8_t* p = raw.data() + 8 + static_cast<std::size_t>(i) * 12;
            pts[i] = {get_f32_le(p), get_f32_le(p + 4), get_f32_le(p + 8)};
        }
        return pts;
    }

    // Text: one "x y z" triple per line, blank lines allowed.
    std::vector<std::array<float, 3>> pts;
    std::string text(raw.begin(), raw.end());
    std::istringstream stream(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        double x, y, z;
        if (!(ls >> x >> y >> z))
            throw FormatError("'" + path.string() + "' line " + std::to_string(line_no) +
                              ": expected three numbers, got '" + line + "'");
        std::string rest;
        if (ls >> rest)
            throw FormatError("'" + path.string() + "' line " + std::to_string(line_no) +
                              ": trailing content '" + rest + "'");
        pts.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)});
    }
    if (pts.empty()) throw FormatError("'" + path.string() + "': no points parsed");
    return pts;
}

void write_points_binary(const std::filesystem::path& path, const std::vector<std::array<float, 3>>& pts) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + pts.size() * 12);
    out.insert(out.end(), {'V', 'P', 'T', 'S'});
    const std::uint32_t n = static_cast<std::uint32_t>(pts.size());
    out.push_back(static_cast<std::uint8_t>(n));
    out.push_back(static_cast<std::uint8_t>(n >> 8));
    out.push_back(static_cast<std::uint8_t>(n >> 16));
    out.push_back(static_cast<std::uint8_t>(n >> 24));
    for (const auto& p : pts)
        for (float f : p) put_f32_le(out, f);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw FormatError("failed writing '" + path.string() + "'");
}

void write_points_text(const std::filesystem::path& path, const std::vector<std::array<float, 3>>& pts) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os.precision(9);
    for (const auto& p : pts) os << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
    if (!os) throw FormatError("failed writing '" + path.string() + "'");
}

// --------------------------------------------------------------------------
// PPM
// --------------------------------------------------------------------------

PpmImage read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open image '" + path.string() + "'");
    std::string magic;
    is >> magic;
    if (magic != "P6") throw FormatError("'" + path.string() + "': not a binary PPM (magic '" + magic + "')");
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w <= 0 || h <= 0 || maxval != 255)
        throw FormatError("'" + path.string() + "': bad PPM header (need positive dims, maxval 255)");
    is.get();  // single whitespace after maxval
    PpmImage img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (static_cast<std::size_t>(is.gcount()) != img.rgb.size())
        throw FormatError("'" + path.string() + "': pixel payload truncated after " +
                          std::to_string(is.gcount()) + " bytes");
    return img;
}

void write_ppm_gray(const std::filesystem::path& path, int size, const std::vector<std::uint8_t>& gray) {
    if (gray.size() != static_cast<std::size_t>(size) * static_cast<std::size_t>(size))
        throw ShapeError("write_ppm_gray: buffer does not match size " + std::to_string(size));
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os << "P6\n" << size << ' ' << size << "\n255\n";
    std::vector<std::uint8_t> rgb(gray.size() * 3);
    for (std::size_t i = 0; i < gray.size(); ++i) rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = gray[i];
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!os) throw FormatError("failed writing '" + path.string() + "'");
}

void normalize_cloud(std::vector<std::array<float, 3>>& pts) {
    if (pts.empty()) throw DataError("normalize_cloud: empty cloud");
    double cx = 0, cy = 0, cz = 0;
    for (const auto& p : pts) {
        cx += p[0];
        cy += p[1];
        cz += p[2];
    }
    cx /= static_cast<double>(pts.size());
    cy /= static_cast<double>(pts.size());
    cz /= static_cast<double>(pts.size());
    double max_norm = 0;
    for (const auto& p : pts)
        max_norm = std::max(max_norm, std::sqrt((p[0] - cx) * (p[0] - cx) + (p[1] - cy) * (p[1] - cy) +
                                                (p[2] - cz) * (p[2] - cz)));
    // Fixed point: inputs already centered and unit-scaled pass through.
    if (std::abs(cx) <= 1e-6 && std::abs(cy) <= 1e-6 && std::abs(cz) <= 1e-6 && std::abs(max_norm - 1.0) <= 1e-6)
        return;
    const double inv = max_norm > 1e-12 ? 1.0 / max_norm : 1.0;
    for (auto& p : pts) {
        p[0] = static_cast<float>((p[0] - cx) * inv);
        p[1] = static_cast<float>((p[1] - cy) * inv);
        p[2] = static_cast<float>((p[2] - cz) * inv);
    }
}

// --------------------------------------------------------------------------
// Manifest
// --------------------------------------------------------------------------

std::vector<std::size_t> DatasetManifest::split_indices(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == split) out.push_back(i);
    return out;
}

void DatasetManifest::save() const {
    nlohmann::json j;
    j["format"] = "vipdata1";
    j["classes"] = class_names;
    j["image_size"] = image_size;
    j["points_per_cloud"] = points_per_cloud;
    j["views"] = views;
    nlohmann::json ents = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json je;
        je["id"] = e.id;
        je["class"] = e.class_id;
        je["split"] = e.split;
        je["points"] = e.points_file;
        je["images"] = e.image_files;
        ents.push_back(std::move(je));
    }
    j["entries"] = std::move(ents);
    std::ofstream os(root / "manifest.json", std::ios::trunc);
    if (!os) throw FormatError("cannot write manifest under '" + root.string() + "'");
    os << j.dump(1) << '\n';
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& root) {
    std::ifstream is(root / "manifest.json");
    if (!is) throw FormatError("no manifest.json under '" + root.string() + "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest.json is not valid JSON: " + std::string(e.what()));
    }
    if (j.value("format", "") != "vipdata1")
        throw FormatError("manifest format '" + j.value("format", "") + "' unsupported (expected vipdata1)");
    DatasetManifest m;
    m.root = root;
    m.class_names = j.at("classes").get<std::vector<std::string>>();
    m.image_size = j.at("image_size").get<int>();
    m.points_per_cloud = j.at("points_per_cloud").get<int>();
    m.views = j.at("views").get<int>();
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.id = je.at("id").get<std::string>();
        e.class_id = je.at("class").get<int>();
        e.split = je.at("split").get<std::string>();
        e.points_file = je.at("points").get<std::string>();
        e.image_files = je.at("images").get<std::vector<std::string>>();
        if (e.class_id < 0 || e.class_id >= static_cast<int>(m.class_names.size()))
            throw DataError("manifest entry '" + e.id + "' has class " + std::to_string(e.class_id) +
                            " outside [0, " + std::to_string(m.class_names.size()) + ")");
        if (!std::filesystem::exists(root / e.points_file))
            throw DataError("manifest entry '" + e.id + "' references missing file " + e.points_file);
        for (const auto& f : e.image_files)
            if (!std::filesystem::exists(root / f))
                throw DataError("manifest entry '" + e.id + "' references missing file " + f);
        m.entries.push_back(std::move(e));
    }
    return m;
}

// --------------------------------------------------------------------------
// Generator
// --------------------------------------------------------------------------

DatasetManifest generate_synthetic(const std::filesystem::path& root, const GenerateOptions& opt) {
    if (opt.class_count < 1 || opt.class_count > kShapeFamilyCount)
        throw ParamError("generate_synthetic: class count must be in [1, " + std::to_string(kShapeFamilyCount) +
                         "]");
    if (opt.per_class < 1 || opt.n_points < 8 || opt.views < 1)
        throw ParamError("generate_synthetic: need per_class >= 1, n_points >= 8, views >= 1");

    std::filesystem::create_directories(root / "points");
    std::filesystem::create_directories(root / "images");

    DatasetManifest m;
    m.root = root;
    m.image_size = opt.image_size;
    m.points_per_cloud = opt.n_points;
    m.views = opt.views;
    for (int c = 0; c < opt.class_count; ++c) m.class_names.push_back(shape_family_name(shape_family_from_index(c)));

    const RngStream base = RngStream(opt.seed).fork(RngPurpose::Data);
    const int n_val = opt.per_class >= 3 ? std::max(1, opt.per_class * 15 / 100) : 0;
    const int n_test = n_val;

    for (int c = 0; c < opt.class_count; ++c) {
        const ShapeFamily family = shape_family_from_index(c);
        for (int i = 0; i < opt.per_class; ++i) {
            RngStream srng = base.fork(static_cast<std::uint64_t>(c)).fork(static_cast<std::uint64_t>(i));
            RngStream spec_rng = srng.fork(0);
            RngStream point_rng = srng.fork(1);
            RngStream view_rng = srng.fork(2);
            const ShapeSpec spec = make_shape_spec(family, spec_rng);

            auto raw = sample_surface_points(spec, static_cast<std::size_t>(opt.n_points), point_rng);
            double cx = 0, cy = 0, cz = 0;
            for (const auto& p : raw) {
                cx += p[0];
                cy += p[1];
                cz += p[2];
            }
            cx /= static_cast<double>(raw.size());
            cy /= static_cast<double>(raw.size());
            cz /= static_cast<double>(raw.size());
            double max_norm = 0;
            for (const auto& p : raw)
                max_norm = std::max(max_norm, std::sqrt((p[0] - cx) * (p[0] - cx) + (p[1] - cy) * (p[1] - cy) +
                                                        (p[2] - cz) * (p[2] - cz)));
            std::vector<std::array<float, 3>> pts(raw.size());
            for (std::size_t k = 0; k < raw.size(); ++k)
                pts[k] = {static_cast<float>((raw[k][0] - cx) / max_norm),
                          static_cast<float>((raw[k][1] - cy) / max_norm),
                          static_cast<float>((raw[k][2] - cz) / max_norm)};

            char idbuf[64];
            std::snprintf(idbuf, sizeof(idbuf), "%s_%03d", shape_family_name(family), i);
            ManifestEntry e;
            e.id = idbuf;
            e.class_id = c;
            e.split = i < opt.per_class - n_val - n_test ? "train" : (i < opt.per_class - n_test ? "val" : "test");
            e.points_file = "points/" + e.id + ".vpts";
            write_points_binary(root / e.points_file, pts);

            for (int v = 0; v < opt.views; ++v) {
                const double azimuth = view_rng.fork(static_cast<std::uint64_t>(v)).uniform(0.0, 2.0 * kPi);
                auto gray = render_silhouette(spec, {cx, cy, cz}, max_norm, azimuth, opt.image_size);
                const std::string img_file = "images/" + e.id + "_v" + std::to_string(v) + ".ppm";
                write_ppm_gray(root / img_file, opt.image_size, gray);
                e.image_files.push_back(img_file);
            }
            m.entries.push_back(std::move(e));
        }
    }
    m.save();
    return m;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size, bool drop_last,
                                                    RngStream rng) {
    if (count == 0) throw ContractError("epoch_batches: empty split");
    if (batch_size == 0) throw ParamError("epoch_batches: batch size must be positive");
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < count; start += batch_size) {
        const std::size_t end = std::min(count, start + batch_size);
        if (drop_last && end - start < batch_size) break;
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace vip
