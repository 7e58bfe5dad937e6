// Isosurface extraction from a signed-distance probe (marching cubes over a
// regular grid), SDF-gradient vertex normals, and Wavefront OBJ export.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "srvol/common.hpp"
#include "srvol/mc_tables.hpp"
#include "srvol/shading.hpp"  // SdfProbe

namespace srvol {

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Vec3> normals;  // per-vertex, unit length
    std::vector<std::array<int, 3>> faces;  // CCW when viewed from outside
};

namespace mc_detail {

// cube corner offsets in the order the tables expect
inline constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                      {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
// the two corners each of the 12 edges connects
inline constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

inline Vec3 interp(const Vec3& pa, const Vec3& pb, double va, double vb) {
    // endpoints are never both on the surface: the caller only asks for edges
    // whose corner signs differ
    const double denom = vb - va;
    double mu = std::abs(denom) < 1e-30 ? 0.5 : (0.0 - va) / denom;
    mu = std::clamp(mu, 0.0, 1.0);
    return pa + (pb - pa) * mu;
}

}  // namespace mc_detail

// Extract the zero level set of the probe on a res^3 vertex grid spanning
// [lo, hi]^3. Vertices on shared cube edges are merged by grid-edge key.
inline TriangleMesh extract_isosurface(const SdfProbe& sdf, int res, double lo = -1.0,
                                       double hi = 1.0, double normal_step = 1e-5) {
    if (!sdf) throw SpecError("extract_isosurface: no sdf probe");
    if (res < 2) throw SpecError("extract_isosurface: resolution must be >= 2");
    if (!(lo < hi)) throw SpecError("extract_isosurface: empty bounds");

    const double cell = (hi - lo) / (res - 1);
    const auto grid_pos = [&](int x, int y, int z) {
        return Vec3{lo + x * cell, lo + y * cell, lo + z * cell};
    };

    // sample the full grid once; res is small enough that this dominates cost
    std::vector<double> values(std::size_t(res) * res * res);
    const auto vidx = [res](int x, int y, int z) {
        return std::size_t(x) + std::size_t(y) * res + std::size_t(z) * res * res;
    };
    for (int z = 0; z < res; ++z)
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) values[vidx(x, y, z)] = sdf(grid_pos(x, y, z));

    TriangleMesh mesh;
    // key: (grid corner a, grid corner b) with a < b, both flattened
    std::map<std::pair<std::size_t, std::size_t>, int> edge_vertex;

    const auto edge_vertex_index = [&](int cx, int cy, int cz, int e) {
        const int* ca = mc_detail::kCorner[mc_detail::kEdge[e][0]];
        const int* cb = mc_detail::kCorner[mc_detail::kEdge[e][1]];
        const int ax = cx + ca[0], ay = cy + ca[1], az = cz + ca[2];
        const int bx = cx + cb[0], by = cy + cb[1], bz = cz + cb[2];
        std::size_t ka = vidx(ax, ay, az), kb = vidx(bx, by, bz);
        if (ka > kb) std::swap(ka, kb);
        auto it = edge_vertex.find({ka, kb});
        if (it != edge_vertex.end()) return it->second;
        const Vec3 v = mc_detail::interp(grid_pos(ax, ay, az), grid_pos(bx, by, bz),
                                         values[vidx(ax, ay, az)], values[vidx(bx, by, bz)]);
        const int index = int(mesh.vertices.size());
        mesh.vertices.push_back(v);
        edge_vertex.emplace(std::make_pair(ka, kb), index);
        return index;
    };

    for (int z = 0; z + 1 < res; ++z)
        for (int y = 0; y + 1 < res; ++y)
            for (int x = 0; x + 1 < res; ++x) {
                int config = 0;
                for (int c = 0; c < 8; ++c) {
                    const int* o = mc_detail::kCorner[c];
                    if (values[vidx(x + o[0], y + o[1], z + o[2])] < 0.0) config |= 1 << c;
                }
                if (mc_detail::kEdgeTable[config] == 0) continue;
                const int* tris = mc_detail::kTriTable[config];
                for (int i = 0; tris[i] != -1; i += 3) {
                    const int a = edge_vertex_index(x, y, z, tris[i]);
                    const int b = edge_vertex_index(x, y, z, tris[i + 1]);
                    const int c = edge_vertex_index(x, y, z, tris[i + 2]);
                    if (a == b || b == c || a == c) continue;  // degenerate sliver
                    // the tables are wound for "inside < isolevel"; emit CCW
                    // as seen from outside (normal along the SDF gradient)
                    mesh.faces.push_back({a, c, b});
                }
            }

    // normals from the SDF gradient: exact for the field, independent of mesh
    mesh.normals.reserve(mesh.vertices.size());
    for (const Vec3& p : mesh.vertices) {
        const Vec3 g{
            (sdf({p.x + normal_step, p.y, p.z}) - sdf({p.x - normal_step, p.y, p.z})),
            (sdf({p.x, p.y + normal_step, p.z}) - sdf({p.x, p.y - normal_step, p.z})),
            (sdf({p.x, p.y, p.z + normal_step}) - sdf({p.x, p.y, p.z - normal_step}))};
        const double len = norm(g);
        mesh.normals.push_back(len > 1e-18 ? g / len : Vec3{0, 0, 1});
    }
    return mesh;
}

// Orientation check: fraction of faces whose geometric normal agrees with the
// mean vertex normal (dot > 0). Used by tests and the mesh tool's sanity log.
inline double face_orientation_agreement(const TriangleMesh& mesh) {
    if (mesh.faces.empty()) return 1.0;
    int good = 0;
    for (const auto& f : mesh.faces) {
        const Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
        const Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
        const Vec3 fn = cross(e1, e2);
        const Vec3 vn = mesh.normals[f[0]] + mesh.normals[f[1]] + mesh.normals[f[2]];
        if (dot(fn, vn) > 0.0) ++good;
    }
    return double(good) / double(mesh.faces.size());
}

inline void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
    if (mesh.normals.size() != mesh.vertices.size())
        throw SpecError("write_obj: normals must match vertices");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(9);
    for (const Vec3& v : mesh.vertices) out << "v " << v.x << " " << v.y << " " << v.z << "\n";
    for (const Vec3& n : mesh.normals) out << "vn " << n.x << " " << n.y << " " << n.z << "\n";
    for (const auto& f : mesh.faces) {
        // OBJ indices are 1-based; reuse the vertex index for its normal
        out << "f " << f[0] + 1 << "//" << f[0] + 1 << " " << f[1] + 1 << "//" << f[1] + 1
            << " " << f[2] + 1 << "//" << f[2] + 1 << "\n";
    }
    if (!out) throw IoError("failed while writing " + path.string());
}

inline TriangleMesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    TriangleMesh mesh;
    std::string tag;
    while (in >> tag) {
        if (tag == "v") {
            Vec3 v;
            in >> v.x >> v.y >> v.z;
            mesh.vertices.push_back(v);
        } else if (tag == "vn") {
            Vec3 n;
            in >> n.x >> n.y >> n.z;
            mesh.normals.push_back(n);
        } else if (tag == "f") {
            std::array<int, 3> f{};
            for (int i = 0; i < 3; ++i) {
                std::string tok;
                in >> tok;
                f[i] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
            }
            mesh.faces.push_back(f);
        } else {
            std::string rest;
            std::getline(in, rest);
        }
    }
    return mesh;
}

}  // namespace srvol
