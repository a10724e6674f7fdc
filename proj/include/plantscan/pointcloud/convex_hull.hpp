#pragma once

#include <plantscan/core/error.hpp>
#include <plantscan/pointcloud/point_cloud.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

namespace plantscan {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  Vec3 triangle_normal(std::size_t t) const {
    const auto& tri = triangles[t];
    return (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).normalized();
  }

  double triangle_area(std::size_t t) const {
    const auto& tri = triangles[t];
    return 0.5 * (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).norm();
  }

  /// Signed volume by the divergence theorem; positive for outward orientation.
  double volume() const {
    double v = 0;
    for (const auto& t : triangles)
      v += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]]));
    return v / 6.0;
  }
};

namespace detail {

class QuickHull {
 public:
  explicit QuickHull(std::span<const Vec3> pts) : pts_(pts) {}

  TriangleMesh run() {
    require(pts_.size() >= 4, Errc::DegenerateHull, "convex hull needs at least 4 points");
    double scale = 0;
    Vec3 lo = pts_[0], hi = pts_[0];
    for (const auto& p : pts_) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    for (int a = 0; a < 3; ++a) scale = std::max({scale, std::abs(lo[a]), std::abs(hi[a])});
    const double diag = (hi - lo).norm();
    eps_ = std::max(1e-12, 1e-10 * std::max(diag, scale));

    seed_simplex();
    std::vector<int> stack;
    for (int f = 0; f < static_cast<int>(faces_.size()); ++f) stack.push_back(f);
    while (!stack.empty()) {
      const int f = stack.back();
      stack.pop_back();
      if (!faces_[f].alive || faces_[f].outside.empty()) continue;
      for (int nf : add_point(f)) stack.push_back(nf);
    }
    return collect();
  }

 private:
  struct Face {
    std::array<int, 3> v;
    std::array<int, 3> nbr;  // nbr[i] shares edge v[i] -> v[(i+1)%3]
    Vec3 n;
    double d;
    bool alive = true;
    std::vector<int> outside;
  };

  double dist(const Face& f, int p) const { return f.n.dot(pts_[p]) - f.d; }

  int make_face(int a, int b, int c) {
    Face f;
    f.v = {a, b, c};
    f.nbr = {-1, -1, -1};
    const Vec3 n = (pts_[b] - pts_[a]).cross(pts_[c] - pts_[a]);
    f.n = n.normalized();
    f.d = f.n.dot(pts_[a]);
    faces_.push_back(std::move(f));
    return static_cast<int>(faces_.size()) - 1;
  }

  void seed_simplex() {
    const int n = static_cast<int>(pts_.size());
    // Farthest pair among the axis extremes.
    std::array<int, 6> ext{0, 0, 0, 0, 0, 0};
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) {
        if (pts_[i][a] < pts_[ext[2 * a]][a]) ext[2 * a] = i;
        if (pts_[i][a] > pts_[ext[2 * a + 1]][a]) ext[2 * a + 1] = i;
      }
    int i0 = ext[0], i1 = ext[1];
    double best = -1;
    for (int a : ext)
      for (int b : ext)
        if (double d = (pts_[a] - pts_[b]).squaredNorm(); d > best) {
          best = d;
          i0 = a;
          i1 = b;
        }
    require(std::sqrt(best) > 1e-9, Errc::DegenerateHull, "all points coincide");

    const Vec3 dir = (pts_[i1] - pts_[i0]).normalized();
    int i2 = -1;
    best = 0;
    for (int i = 0; i < n; ++i) {
      const Vec3 w = pts_[i] - pts_[i0];
      if (double d = (w - w.dot(dir) * dir).norm(); d > best) {
        best = d;
        i2 = i;
      }
    }
    require(i2 >= 0 && best > 1e-9, Errc::DegenerateHull, "points are collinear");

    const Vec3 pn = (pts_[i1] - pts_[i0]).cross(pts_[i2] - pts_[i0]).normalized();
    int i3 = -1;
    best = 0;
    for (int i = 0; i < n; ++i)
      if (double d = std::abs(pn.dot(pts_[i] - pts_[i0])); d > best) {
        best = d;
        i3 = i;
      }
    require(i3 >= 0 && best > 1e-9, Errc::DegenerateHull, "points are coplanar");

    interior_ = 0.25 * (pts_[i0] + pts_[i1] + pts_[i2] + pts_[i3]);
    // Orient so every face normal points away from the interior.
    if (pn.dot(pts_[i3] - pts_[i0]) > 0) std::swap(i1, i2);
    const int f0 = make_face(i0, i1, i2);
    const int f1 = make_face(i0, i3, i1);
    const int f2 = make_face(i1, i3, i2);
    const int f3 = make_face(i2, i3, i0);
    link_all({f0, f1, f2, f3});

    for (int i = 0; i < n; ++i) {
      if (i == i0 || i == i1 || i == i2 || i == i3) continue;
      for (int f : {f0, f1, f2, f3})
        if (dist(faces_[f], i) > eps_) {
          faces_[f].outside.push_back(i);
          break;
        }
    }
  }

  // Rebuild adjacency among a small set of faces via shared directed edges.
  void link_all(const std::vector<int>& ids) {
    for (int a : ids)
      for (int ea = 0; ea < 3; ++ea)
        for (int b : ids) {
          if (a == b) continue;
          for (int eb = 0; eb < 3; ++eb)
            if (faces_[a].v[ea] == faces_[b].v[(eb + 1) % 3] && faces_[a].v[(ea + 1) % 3] == faces_[b].v[eb])
              faces_[a].nbr[ea] = b;
        }
  }

  std::vector<int> add_point(int seed_face) {
    Face& sf = faces_[seed_face];
    int eye = sf.outside.front();
    double far = dist(sf, eye);
    for (int p : sf.outside)
      if (double d = dist(sf, p); d > far) {
        far = d;
        eye = p;
      }

    // Visible region by flood fill from the seed face.
    std::vector<int> visible{seed_face};
    std::vector<char> mark(faces_.size(), 0);
    mark[seed_face] = 1;
    for (std::size_t k = 0; k < visible.size(); ++k) {
      const Face& f = faces_[visible[k]];
      for (int nb : f.nbr) {
        if (nb < 0 || mark[nb]) continue;
        if (dist(faces_[nb], eye) > eps_) {
          mark[nb] = 1;
          visible.push_back(nb);
        } else {
          mark[nb] = 2;
        }
      }
    }

    struct HorizonEdge {
      int a, b, across;
    };
    std::vector<HorizonEdge> horizon;
    for (int fi : visible) {
      const Face& f = faces_[fi];
      for (int e = 0; e < 3; ++e)
        if (f.nbr[e] < 0 || mark[f.nbr[e]] != 1) horizon.push_back({f.v[e], f.v[(e + 1) % 3], f.nbr[e]});
    }

    std::vector<int> orphans;
    for (int fi : visible) {
      faces_[fi].alive = false;
      for (int p : faces_[fi].outside)
        if (p != eye) orphans.push_back(p);
      faces_[fi].outside.clear();
    }

    std::unordered_map<int, int> by_start, by_end;
    std::vector<int> created;
    created.reserve(horizon.size());
    for (const auto& h : horizon) {
      const int nf = make_face(h.a, h.b, eye);
      faces_[nf].nbr[0] = h.across;
      if (h.across >= 0) {
        Face& g = faces_[h.across];
        for (int e = 0; e < 3; ++e)
          if (g.v[e] == h.b && g.v[(e + 1) % 3] == h.a) g.nbr[e] = nf;
      }
      by_start[h.a] = nf;
      by_end[h.b] = nf;
      created.push_back(nf);
    }
    for (int nf : created) {
      Face& f = faces_[nf];
      if (auto it = by_start.find(f.v[1]); it != by_start.end()) f.nbr[1] = it->second;
      if (auto it = by_end.find(f.v[0]); it != by_end.end()) f.nbr[2] = it->second;
    }

    for (int p : orphans) {
      int best_face = -1;
      double best = eps_;
      for (int nf : created)
        if (double d = dist(faces_[nf], p); d > best) {
          best = d;
          best_face = nf;
        }
      if (best_face >= 0) faces_[best_face].outside.push_back(p);
    }
    return created;
  }

  TriangleMesh collect() const {
    TriangleMesh mesh;
    std::vector<int> remap(pts_.size(), -1);
    for (const auto& f : faces_) {
      if (!f.alive) continue;
      std::array<int, 3> tri{};
      for (int k = 0; k < 3; ++k) {
        if (remap[f.v[k]] < 0) {
          remap[f.v[k]] = static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(pts_[f.v[k]]);
        }
        tri[k] = remap[f.v[k]];
      }
      mesh.triangles.push_back(tri);
    }
    return mesh;
  }

  std::span<const Vec3> pts_;
  std::vector<Face> faces_;
  Vec3 interior_ = Vec3::Zero();
  double eps_ = 1e-12;
};

}  // namespace detail

/// Convex hull by quickhull. Throws DegenerateHull for fewer than four
/// affinely independent points.
inline TriangleMesh convex_hull(std::span<const Vec3> points) { return detail::QuickHull(points).run(); }

inline TriangleMesh convex_hull(const PointCloud& cloud) { return convex_hull(cloud.points); }

/// Groups hull triangles into planar polygons: edge-adjacent triangles whose
/// planes agree within `tol` meters share a polygon.
inline std::vector<std::vector<std::size_t>> hull_polygons(const TriangleMesh& mesh, double tol = 1e-9) {
  const std::size_t nt = mesh.triangles.size();
  std::vector<Vec3> normals(nt);
  for (std::size_t t = 0; t < nt; ++t) normals[t] = mesh.triangle_normal(t);

  std::unordered_map<std::uint64_t, std::vector<std::size_t>> edges;
  auto edge_key = [](int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
  };
  for (std::size_t t = 0; t < nt; ++t)
    for (int e = 0; e < 3; ++e) edges[edge_key(mesh.triangles[t][e], mesh.triangles[t][(e + 1) % 3])].push_back(t);

  auto coplanar = [&](std::size_t a, std::size_t b) {
    const Vec3& n = normals[a];
    const double d = n.dot(mesh.vertices[mesh.triangles[a][0]]);
    for (int k = 0; k < 3; ++k)
      if (std::abs(n.dot(mesh.vertices[mesh.triangles[b][k]]) - d) > tol) return false;
    return n.dot(normals[b]) > 0;
  };

  std::vector<int> group(nt, -1);
  std::vector<std::vector<std::size_t>> polys;
  for (std::size_t s = 0; s < nt; ++s) {
    if (group[s] >= 0) continue;
    const int gid = static_cast<int>(polys.size());
    polys.push_back({s});
    group[s] = gid;
    for (std::size_t k = 0; k < polys.back().size(); ++k) {
      const std::size_t t = polys.back()[k];
      for (int e = 0; e < 3; ++e)
        for (std::size_t u : edges[edge_key(mesh.triangles[t][e], mesh.triangles[t][(e + 1) % 3])])
          if (group[u] < 0 && coplanar(s, u)) {
            group[u] = gid;
            polys[gid].push_back(u);
          }
    }
  }
  return polys;
}

}  // namespace plantscan
