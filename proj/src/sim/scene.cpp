#include "icd/sim/scene.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace icd::sim {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Vec3 Primitive::to_local(const Vec3& x) const {
  double c = std::cos(yaw), s = std::sin(yaw);
  Vec3 d = x - center;
  return Vec3(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
}

Vec3 Primitive::to_world_dir(const Vec3& v) const {
  double c = std::cos(yaw), s = std::sin(yaw);
  return Vec3(c * v.x() - s * v.y(), s * v.x() + c * v.y(), v.z());
}

double Primitive::surface_area() const {
  switch (kind) {
    case PrimitiveKind::box:
      return 8.0 * (dims.x() * dims.y() + dims.y() * dims.z() + dims.z() * dims.x());
    case PrimitiveKind::capsule:
      return 2.0 * kPi * dims.y() * (2.0 * dims.x()) + 4.0 * kPi * dims.y() * dims.y();
    case PrimitiveKind::cylinder:
      return 2.0 * kPi * dims.x() * (2.0 * dims.y()) + 2.0 * kPi * dims.x() * dims.x();
  }
  return 0.0;
}

double primitive_sdf(const Primitive& p, const Vec3& x) {
  Vec3 l = p.to_local(x);
  switch (p.kind) {
    case PrimitiveKind::box: {
      Vec3 q = l.cwiseAbs() - p.dims;
      double outside = q.cwiseMax(0.0).norm();
      double inside = std::min(q.maxCoeff(), 0.0);
      return outside + inside;
    }
    case PrimitiveKind::capsule: {
      double t = std::clamp(l.x(), -p.dims.x(), p.dims.x());
      return (l - Vec3(t, 0, 0)).norm() - p.dims.y();
    }
    case PrimitiveKind::cylinder: {
      double dr = std::hypot(l.x(), l.y()) - p.dims.x();
      double dz = std::abs(l.z()) - p.dims.y();
      double outside = std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
      double inside = std::min(std::max(dr, dz), 0.0);
      return outside + inside;
    }
  }
  return 0.0;
}

Vec3 primitive_sdf_gradient(const Primitive& p, const Vec3& x) {
  Vec3 l = p.to_local(x);
  Vec3 g = Vec3::Zero();
  switch (p.kind) {
    case PrimitiveKind::box: {
      Vec3 q = l.cwiseAbs() - p.dims;
      if ((q.array() > 0.0).any()) {
        Vec3 o = q.cwiseMax(0.0);
        double n = o.norm();
        for (int i = 0; i < 3; ++i)
          g(i) = (q(i) > 0.0) ? (l(i) > 0 ? 1.0 : -1.0) * o(i) / n : 0.0;
      } else {
        // inside: toward the nearest face, lowest axis wins ties
        int ax = 0;
        for (int i = 1; i < 3; ++i)
          if (q(i) > q(ax)) ax = i;
        g(ax) = l(ax) >= 0 ? 1.0 : -1.0;
      }
      break;
    }
    case PrimitiveKind::capsule: {
      double t = std::clamp(l.x(), -p.dims.x(), p.dims.x());
      Vec3 d = l - Vec3(t, 0, 0);
      double n = d.norm();
      g = n > 1e-12 ? Vec3(d / n) : Vec3(0, 0, 1);
      break;
    }
    case PrimitiveKind::cylinder: {
      double rho = std::hypot(l.x(), l.y());
      double dr = rho - p.dims.x();
      double dz = std::abs(l.z()) - p.dims.y();
      Vec3 radial = rho > 1e-12 ? Vec3(l.x() / rho, l.y() / rho, 0.0) : Vec3(1, 0, 0);
      Vec3 axial(0, 0, l.z() >= 0 ? 1.0 : -1.0);
      if (dr > 0.0 && dz > 0.0) {
        double n = std::hypot(dr, dz);
        g = (dr / n) * radial + (dz / n) * axial;
      } else if (dr >= dz) {
        g = radial;
      } else {
        g = axial;
      }
      break;
    }
  }
  Vec3 w = p.to_world_dir(g);
  double n = w.norm();
  return n > 1e-12 ? Vec3(w / n) : Vec3(0, 0, 1);
}

double scene_sdf(const SceneSpec& scene, const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : scene.primitives) best = std::min(best, primitive_sdf(p, x));
  return best;
}

Vec3 scene_sdf_gradient(const SceneSpec& scene, const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  int arg = 0;
  for (size_t i = 0; i < scene.primitives.size(); ++i) {
    double d = primitive_sdf(scene.primitives[i], x);
    if (d < best) {  // strict: ties go to the lowest index
      best = d;
      arg = int(i);
    }
  }
  return primitive_sdf_gradient(scene.primitives[size_t(arg)], x);
}

Vec3 sample_on_primitive(const Primitive& p, icd::Rng& rng) {
  Vec3 l = Vec3::Zero();
  switch (p.kind) {
    case PrimitiveKind::box: {
      const Vec3& h = p.dims;
      double ax = h.y() * h.z(), ay = h.x() * h.z(), az = h.x() * h.y();
      double u = rng.uniform() * (ax + ay + az);
      double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
      if (u < ax)
        l = Vec3(sgn * h.x(), rng.uniform(-h.y(), h.y()), rng.uniform(-h.z(), h.z()));
      else if (u < ax + ay)
        l = Vec3(rng.uniform(-h.x(), h.x()), sgn * h.y(), rng.uniform(-h.z(), h.z()));
      else
        l = Vec3(rng.uniform(-h.x(), h.x()), rng.uniform(-h.y(), h.y()), sgn * h.z());
      break;
    }
    case PrimitiveKind::capsule: {
      double hl = p.dims.x(), r = p.dims.y();
      double side = 2.0 * kPi * r * 2.0 * hl;
      double caps = 4.0 * kPi * r * r;
      double a = rng.uniform(0.0, 2.0 * kPi);
      if (rng.uniform() * (side + caps) < side) {
        l = Vec3(rng.uniform(-hl, hl), r * std::cos(a), r * std::sin(a));
      } else {
        // uniform on unit sphere, shifted to the matching cap
        double z = rng.uniform(-1.0, 1.0);
        double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        Vec3 s(z, rho * std::cos(a), rho * std::sin(a));
        l = Vec3((s.x() >= 0 ? hl : -hl), 0, 0) + r * s;
      }
      break;
    }
    case PrimitiveKind::cylinder: {
      double r = p.dims.x(), hh = p.dims.y();
      double side = 2.0 * kPi * r * 2.0 * hh;
      double disks = 2.0 * kPi * r * r;
      double a = rng.uniform(0.0, 2.0 * kPi);
      if (rng.uniform() * (side + disks) < side) {
        l = Vec3(r * std::cos(a), r * std::sin(a), rng.uniform(-hh, hh));
      } else {
        double rr = r * std::sqrt(rng.uniform());
        double z = rng.uniform() < 0.5 ? -hh : hh;
        l = Vec3(rr * std::cos(a), rr * std::sin(a), z);
      }
      break;
    }
  }
  return p.center + p.to_world_dir(l);
}

Points sample_scene_point_cloud(const SceneSpec& scene, int n, icd::Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_scene_point_cloud: n must be >= 1");
  scene.validate();
  std::vector<double> cum;
  double total = 0.0;
  for (const auto& p : scene.primitives) {
    total += p.surface_area();
    cum.push_back(total);
  }
  auto accepted = [&scene](const Vec3& x) {
    return scene.workspace.contains(x) && scene_sdf(scene, x) > -1e-9;
  };
  // every primitive must expose some surface
  for (size_t i = 0; i < scene.primitives.size(); ++i) {
    icd::Rng probe = rng.fork(1000 + i);
    bool ok = false;
    for (int k = 0; k < 4000 && !ok; ++k)
      ok = accepted(sample_on_primitive(scene.primitives[i], probe));
    if (!ok)
      throw std::runtime_error("primitive " + std::to_string(i) +
                               " has no exposed surface inside the workspace");
  }
  Points out(n, 3);
  long attempts = 0, limit = 20000L * n;
  for (int i = 0; i < n;) {
    if (++attempts > limit)
      throw std::runtime_error("surface sampling failed to converge");
    double u = rng.uniform() * total;
    size_t pi = size_t(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    if (pi >= scene.primitives.size()) pi = scene.primitives.size() - 1;
    Vec3 x = sample_on_primitive(scene.primitives[pi], rng);
    if (!accepted(x)) continue;
    out.row(i++) = x;
  }
  return out;
}

void SceneSpec::validate() const {
  if (primitives.empty()) throw std::invalid_argument("scene has no primitives");
  for (size_t i = 0; i < primitives.size(); ++i) {
    const auto& p = primitives[i];
    int ndims = p.kind == PrimitiveKind::box ? 3 : 2;
    for (int k = 0; k < ndims; ++k)
      if (!(p.dims(k) > 0.0))
        throw std::invalid_argument("primitive " + std::to_string(i) +
                                    " has non-positive dimension");
    // conservative intersection check via the primitive's bounding sphere
    double radius = p.dims.norm();
    Vec3 clamped = p.center.cwiseMax(workspace.lo).cwiseMin(workspace.hi);
    if ((p.center - clamped).norm() > radius)
      throw std::invalid_argument("primitive " + std::to_string(i) +
                                  " does not intersect the workspace");
  }
  bool cable = task_tag == TaskTag::cable_routing;
  if (cable && fixture_ids.empty())
    throw std::invalid_argument("cable_routing scene requires fixture_ids");
  if (!cable && !fixture_ids.empty())
    throw std::invalid_argument("fixture_ids only valid for cable_routing");
  for (int id : fixture_ids)
    if (id < 0 || id >= int(primitives.size()))
      throw std::invalid_argument("fixture id out of range");
}

std::string primitive_kind_name(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::box: return "box";
    case PrimitiveKind::capsule: return "capsule";
    case PrimitiveKind::cylinder: return "cylinder";
  }
  return "box";
}

PrimitiveKind primitive_kind_from_name(const std::string& s) {
  if (s == "box") return PrimitiveKind::box;
  if (s == "capsule") return PrimitiveKind::capsule;
  if (s == "cylinder") return PrimitiveKind::cylinder;
  throw std::invalid_argument("unknown primitive kind: " + s);
}

std::string task_tag_name(TaskTag t) {
  return t == TaskTag::cable_routing ? "cable_routing" : "notebook_folding";
}

TaskTag task_tag_from_name(const std::string& s) {
  if (s == "cable_routing") return TaskTag::cable_routing;
  if (s == "notebook_folding") return TaskTag::notebook_folding;
  throw std::invalid_argument("unknown task tag: " + s);
}

namespace {
std::string fmt_d(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string format_primitive(const Primitive& p) {
  std::ostringstream os;
  os << primitive_kind_name(p.kind);
  for (int i = 0; i < 3; ++i) os << ' ' << fmt_d(p.center(i));
  os << ' ' << fmt_d(p.yaw);
  for (int i = 0; i < 3; ++i) os << ' ' << fmt_d(p.dims(i));
  return os.str();
}

Primitive parse_primitive(const std::string& line) {
  std::istringstream is(line);
  std::string kind;
  Primitive p;
  is >> kind;
  p.kind = primitive_kind_from_name(kind);
  is >> p.center.x() >> p.center.y() >> p.center.z() >> p.yaw >> p.dims.x() >>
      p.dims.y() >> p.dims.z();
  if (!is) throw std::invalid_argument("malformed primitive line: " + line);
  return p;
}

std::string format_scene(const SceneSpec& s) {
  std::ostringstream os;
  os << "  task " << task_tag_name(s.task_tag) << "\n";
  os << "  workspace";
  for (int i = 0; i < 3; ++i) os << ' ' << fmt_d(s.workspace.lo(i));
  for (int i = 0; i < 3; ++i) os << ' ' << fmt_d(s.workspace.hi(i));
  os << "\n";
  os << "  fixture_gap " << fmt_d(s.fixture_gap) << "\n";
  os << "  rope_anchor";
  for (int i = 0; i < 3; ++i) os << ' ' << fmt_d(s.rope_anchor(i));
  os << "\n";
  os << "  fixtures";
  for (int id : s.fixture_ids) os << ' ' << id;
  os << "\n";
  for (const auto& p : s.primitives) os << "  primitive " << format_primitive(p) << "\n";
  return os.str();
}

SceneSpec parse_scene(const std::string& block) {
  SceneSpec s;
  s.fixture_ids.clear();
  s.primitives.clear();
  std::istringstream is(block);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "task") {
      std::string t;
      ls >> t;
      s.task_tag = task_tag_from_name(t);
    } else if (key == "workspace") {
      for (int i = 0; i < 3; ++i) ls >> s.workspace.lo(i);
      for (int i = 0; i < 3; ++i) ls >> s.workspace.hi(i);
    } else if (key == "fixture_gap") {
      ls >> s.fixture_gap;
    } else if (key == "rope_anchor") {
      for (int i = 0; i < 3; ++i) ls >> s.rope_anchor(i);
    } else if (key == "fixtures") {
      int id;
      while (ls >> id) s.fixture_ids.push_back(id);
    } else if (key == "primitive") {
      std::string rest;
      std::getline(ls, rest);
      s.primitives.push_back(parse_primitive(rest));
    } else if (!key.empty()) {
      throw std::invalid_argument("unknown scene key: " + key);
    }
  }
  return s;
}

}  // namespace icd::sim
