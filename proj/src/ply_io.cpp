#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "dsl/surfel_map.hpp"

namespace dsl {

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
};

struct PlyHeader {
  bool binary_le = false;
  size_t vertex_count = 0;
  std::vector<PlyProperty> properties;
  double voxel_size = 0.0;
  size_t header_lines = 0;
};

size_t type_size(const std::string& t) {
  if (t == "float" || t == "float32" || t == "int" || t == "int32" || t == "uint" || t == "uint32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  throw std::runtime_error("ply: unsupported property type " + t);
}

PlyHeader parse_header(std::istream& in, const std::string& path) {
  PlyHeader h;
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply")
    throw std::runtime_error("ply: missing magic in " + path);
  h.header_lines = 1;
  bool in_vertex_element = false;
  while (std::getline(in, line)) {
    ++h.header_lines;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") h.binary_le = true;
      else if (fmt == "ascii") h.binary_le = false;
      else throw std::runtime_error("ply: unsupported format " + fmt + " in " + path);
    } else if (word == "comment") {
      std::string key;
      ls >> key;
      if (key == "voxel_size") ls >> h.voxel_size;
    } else if (word == "element") {
      std::string name;
      size_t count;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) h.vertex_count = count;
    } else if (word == "property" && in_vertex_element) {
      PlyProperty p;
      ls >> p.type >> p.name;
      if (p.type == "list")
        throw std::runtime_error("ply: list properties not supported (line " +
                                 std::to_string(h.header_lines) + ") in " + path);
      h.properties.push_back(p);
    } else if (word == "end_header") {
      return h;
    }
  }
  throw std::runtime_error("ply: unterminated header in " + path);
}

double read_binary_value(const char* buf, const std::string& type) {
  if (type == "float" || type == "float32") {
    float v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  if (type == "double" || type == "float64") {
    double v;
    std::memcpy(&v, buf, 8);
    return v;
  }
  if (type == "int" || type == "int32") {
    int32_t v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  if (type == "uint" || type == "uint32") {
    uint32_t v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  if (type == "uchar" || type == "uint8") return static_cast<uint8_t>(buf[0]);
  if (type == "char" || type == "int8") return static_cast<int8_t>(buf[0]);
  if (type == "short" || type == "int16") {
    int16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (type == "ushort" || type == "uint16") {
    uint16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  throw std::runtime_error("ply: unsupported property type " + type);
}

// Reads all vertex records as doubles, row per vertex, column per property.
std::vector<std::vector<double>> read_vertices(std::istream& in, const PlyHeader& h,
                                               const std::string& path) {
  std::vector<std::vector<double>> rows(h.vertex_count,
                                        std::vector<double>(h.properties.size(), 0.0));
  if (h.binary_le) {
    size_t record_size = 0;
    for (const auto& p : h.properties) record_size += type_size(p.type);
    std::vector<char> buf(record_size);
    for (size_t i = 0; i < h.vertex_count; ++i) {
      in.read(buf.data(), static_cast<std::streamsize>(record_size));
      if (static_cast<size_t>(in.gcount()) != record_size)
        throw std::runtime_error("ply: truncated file at record " + std::to_string(i) + " in " +
                                 path);
      size_t off = 0;
      for (size_t c = 0; c < h.properties.size(); ++c) {
        rows[i][c] = read_binary_value(buf.data() + off, h.properties[c].type);
        off += type_size(h.properties[c].type);
      }
    }
  } else {
    for (size_t i = 0; i < h.vertex_count; ++i) {
      for (size_t c = 0; c < h.properties.size(); ++c) {
        if (!(in >> rows[i][c]))
          throw std::runtime_error("ply: truncated or malformed record " + std::to_string(i) +
                                   " in " + path);
      }
    }
  }
  return rows;
}

int find_property(const PlyHeader& h, const std::string& name) {
  for (size_t i = 0; i < h.properties.size(); ++i)
    if (h.properties[i].name == name) return static_cast<int>(i);
  return -1;
}

}  // namespace

void save_map(const SurfelMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_map: cannot open " + path);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "comment voxel_size " << map.voxel_size << "\n";
  out << "element vertex " << map.surfels.size() << "\n";
  for (const char* p : {"x", "y", "z", "nx", "ny", "nz", "radius"})
    out << "property float " << p << "\n";
  out << "end_header\n";
  for (const Surfel& s : map.surfels) {
    const float rec[7] = {static_cast<float>(s.position.x()), static_cast<float>(s.position.y()),
                          static_cast<float>(s.position.z()), static_cast<float>(s.normal.x()),
                          static_cast<float>(s.normal.y()),   static_cast<float>(s.normal.z()),
                          static_cast<float>(s.radius)};
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
  if (!out) throw std::runtime_error("save_map: write failed for " + path);
}

SurfelMap load_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_map: cannot open " + path);
  const PlyHeader h = parse_header(in, path);
  const int ix = find_property(h, "x"), iy = find_property(h, "y"), iz = find_property(h, "z");
  const int inx = find_property(h, "nx"), iny = find_property(h, "ny"), inz = find_property(h, "nz");
  const int ir = find_property(h, "radius");
  if (ix < 0 || iy < 0 || iz < 0 || inx < 0 || iny < 0 || inz < 0)
    throw std::runtime_error("load_map: missing position or normal properties in " + path);
  if (ir < 0 && h.voxel_size <= 0)
    throw std::runtime_error("load_map: no radius property and no voxel_size comment in " + path);
  const auto rows = read_vertices(in, h, path);
  SurfelMap map;
  map.voxel_size = h.voxel_size;
  const double default_radius = h.voxel_size * std::sqrt(2.0) / 2.0;
  map.surfels.reserve(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    Surfel s;
    s.position = Vec3(r[ix], r[iy], r[iz]);
    s.normal = Vec3(r[inx], r[iny], r[inz]);
    const double len = s.normal.norm();
    if (len < 1e-6)
      throw std::runtime_error("load_map: zero normal at record " + std::to_string(i) + " in " +
                               path);
    s.normal /= len;
    s.radius = ir >= 0 ? r[ir] : default_radius;
    if (s.radius <= 0)
      throw std::runtime_error("load_map: non-positive radius at record " + std::to_string(i) +
                               " in " + path);
    map.surfels.push_back(s);
  }
  return map;
}

std::vector<Vec3> load_point_cloud_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_point_cloud_ply: cannot open " + path);
  const PlyHeader h = parse_header(in, path);
  const int ix = find_property(h, "x"), iy = find_property(h, "y"), iz = find_property(h, "z");
  if (ix < 0 || iy < 0 || iz < 0)
    throw std::runtime_error("load_point_cloud_ply: missing x/y/z in " + path);
  const auto rows = read_vertices(in, h, path);
  std::vector<Vec3> pts;
  pts.reserve(rows.size());
  for (const auto& r : rows) pts.emplace_back(r[ix], r[iy], r[iz]);
  return pts;
}

void save_point_cloud_ply(const std::vector<Vec3>& points, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_point_cloud_ply: cannot open " + path);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << points.size() << "\n";
  for (const char* p : {"x", "y", "z"}) out << "property float " << p << "\n";
  out << "end_header\n";
  for (const Vec3& v : points) {
    const float rec[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()),
                          static_cast<float>(v.z())};
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
  if (!out) throw std::runtime_error("save_point_cloud_ply: write failed for " + path);
}

}  // namespace dsl
