#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "compact_sdf/error.hpp"
#include "compact_sdf/geometry.hpp"
#include "compact_sdf/io.hpp"

namespace csdf {
namespace {

std::string lowercase_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

struct RawMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
};

// ---------------------------------------------------------------- OBJ

RawMesh parse_obj(const std::string& text, const std::string& name) {
  RawMesh mesh;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<long> face;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kParse, name + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) fail("malformed vertex record");
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      face.clear();
      std::string token;
      while (ls >> token) {
        const std::string index = token.substr(0, token.find('/'));
        long value = 0;
        auto [ptr, ec] = std::from_chars(index.data(), index.data() + index.size(), value);
        if (ec != std::errc() || ptr != index.data() + index.size() || value == 0)
          fail("malformed face index '" + token + "'");
        const long n = static_cast<long>(mesh.vertices.size());
        const long resolved = value > 0 ? value - 1 : n + value;
        if (resolved < 0 || resolved >= n) fail("face index out of range");
        face.push_back(resolved);
      }
      if (face.size() < 3) fail("face with fewer than three vertices");
      for (std::size_t k = 1; k + 1 < face.size(); ++k)
        mesh.triangles.push_back({static_cast<std::uint32_t>(face[0]),
                                  static_cast<std::uint32_t>(face[k]),
                                  static_cast<std::uint32_t>(face[k + 1])});
    }
  }
  return mesh;
}

// ---------------------------------------------------------------- PLY

enum class PlyType { kInt8, kUInt8, kInt16, kUInt16, kInt32, kUInt32, kFloat32, kFloat64 };

PlyType parse_ply_type(const std::string& s) {
  if (s == "char" || s == "int8") return PlyType::kInt8;
  if (s == "uchar" || s == "uint8") return PlyType::kUInt8;
  if (s == "short" || s == "int16") return PlyType::kInt16;
  if (s == "ushort" || s == "uint16") return PlyType::kUInt16;
  if (s == "int" || s == "int32") return PlyType::kInt32;
  if (s == "uint" || s == "uint32") return PlyType::kUInt32;
  if (s == "float" || s == "float32") return PlyType::kFloat32;
  if (s == "double" || s == "float64") return PlyType::kFloat64;
  throw Error(ErrorCode::kParse, "unknown PLY property type '" + s + "'");
}

struct PlyProperty {
  std::string name;
  PlyType type;
  bool is_list = false;
  PlyType count_type = PlyType::kUInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

double read_binary_scalar(detail::ByteReader& reader, PlyType type) {
  switch (type) {
    case PlyType::kInt8: return reader.get<std::int8_t>();
    case PlyType::kUInt8: return reader.get<std::uint8_t>();
    case PlyType::kInt16: return reader.get<std::int16_t>();
    case PlyType::kUInt16: return reader.get<std::uint16_t>();
    case PlyType::kInt32: return reader.get<std::int32_t>();
    case PlyType::kUInt32: return reader.get<std::uint32_t>();
    case PlyType::kFloat32: return reader.get<float>();
    case PlyType::kFloat64: return reader.get<double>();
  }
  return 0.0;
}

RawMesh parse_ply(const std::string& data, const std::string& name) {
  const std::size_t header_end = data.find("end_header");
  if (data.compare(0, 3, "ply") != 0 || header_end == std::string::npos)
    throw Error(ErrorCode::kParse, name + ": not a PLY file");
  std::size_t body = data.find('\n', header_end);
  if (body == std::string::npos) throw Error(ErrorCode::kParse, name + ": truncated PLY header");
  ++body;

  std::istringstream header(data.substr(0, header_end));
  std::string line, format;
  std::vector<PlyElement> elements;
  while (std::getline(header, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      ls >> format;
    } else if (tag == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) throw Error(ErrorCode::kParse, name + ": property before element");
      std::string type;
      ls >> type;
      PlyProperty p;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> p.name;
        p.is_list = true;
        p.count_type = parse_ply_type(count_type);
        p.type = parse_ply_type(item_type);
      } else {
        p.type = parse_ply_type(type);
        ls >> p.name;
      }
      elements.back().properties.push_back(p);
    }
  }
  const bool ascii = format == "ascii";
  if (!ascii && format != "binary_little_endian")
    throw Error(ErrorCode::kParse, name + ": unsupported PLY format '" + format + "'");

  RawMesh mesh;
  detail::ByteReader reader(std::string_view(data).substr(body), name);
  std::istringstream text(ascii ? data.substr(body) : std::string());
  auto next_value = [&](PlyType type) -> double {
    if (!ascii) return read_binary_scalar(reader, type);
    double v;
    if (!(text >> v)) throw Error(ErrorCode::kParse, name + ": truncated PLY body");
    return v;
  };

  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    int ix = -1, iy = -1, iz = -1, iface = -1;
    for (int k = 0; k < static_cast<int>(e.properties.size()); ++k) {
      const auto& p = e.properties[k];
      if (p.name == "x") ix = k;
      if (p.name == "y") iy = k;
      if (p.name == "z") iz = k;
      if (p.is_list && (p.name == "vertex_indices" || p.name == "vertex_index")) iface = k;
    }
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0))
      throw Error(ErrorCode::kParse, name + ": PLY vertex element lacks x/y/z");
    std::vector<double> scalars(e.properties.size());
    std::vector<long> list;
    for (std::size_t r = 0; r < e.count; ++r) {
      for (int k = 0; k < static_cast<int>(e.properties.size()); ++k) {
        const auto& p = e.properties[k];
        if (!p.is_list) {
          scalars[k] = next_value(p.type);
          continue;
        }
        const auto n = static_cast<long>(next_value(p.count_type));
        if (n < 0) throw Error(ErrorCode::kParse, name + ": negative list length");
        const bool keep = is_face && k == iface;
        if (keep) list.clear();
        for (long i = 0; i < n; ++i) {
          const double v = next_value(p.type);
          if (keep) list.push_back(static_cast<long>(v));
        }
      }
      if (is_vertex) mesh.vertices.emplace_back(scalars[ix], scalars[iy], scalars[iz]);
      if (is_face && iface >= 0) {
        if (list.size() < 3) throw Error(ErrorCode::kParse, name + ": face with < 3 vertices");
        for (long idx : list)
          if (idx < 0 || static_cast<std::size_t>(idx) >= mesh.vertices.size())
            throw Error(ErrorCode::kParse, name + ": face index out of range");
        for (std::size_t k = 1; k + 1 < list.size(); ++k)
          mesh.triangles.push_back({static_cast<std::uint32_t>(list[0]),
                                    static_cast<std::uint32_t>(list[k]),
                                    static_cast<std::uint32_t>(list[k + 1])});
      }
    }
  }
  return mesh;
}

RawMesh parse_any(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  const std::string ext = lowercase_extension(path);
  if (ext == ".obj") return parse_obj(data, path.string());
  if (ext == ".ply") return parse_ply(data, path.string());
  throw Error(ErrorCode::kParse, path.string() + ": unsupported mesh format (expected .obj or .ply)");
}

}  // namespace

TriangleMesh read_mesh(const std::filesystem::path& path) {
  RawMesh raw = parse_any(path);
  return TriangleMesh{std::move(raw.vertices), std::move(raw.triangles)};
}

TriangleMesh load_mesh(const std::filesystem::path& path) {
  TriangleMesh mesh = read_mesh(path);
  validate_mesh(mesh);
  return mesh;
}

std::vector<Vec3> load_points(const std::filesystem::path& path) {
  RawMesh raw = parse_any(path);
  if (raw.vertices.empty()) throw Error(ErrorCode::kEmpty, path.string() + ": no vertices");
  return std::move(raw.vertices);
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path,
               const std::vector<std::string>& header) {
  std::string out;
  out.reserve(mesh.vertices.size() * 40 + mesh.triangles.size() * 24);
  for (const auto& line : header) out += "# " + line + "\n";
  char buf[128];
  for (const auto& v : mesh.vertices) {
    const int n = std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out.append(buf, static_cast<std::size_t>(n));
  }
  for (const auto& t : mesh.triangles) {
    const int n = std::snprintf(buf, sizeof(buf), "f %u %u %u\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out.append(buf, static_cast<std::size_t>(n));
  }
  atomic_write_file(path, out);
}

void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path) {
  detail::ByteWriter w;
  std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex " +
                       std::to_string(mesh.vertices.size()) +
                       "\nproperty float x\nproperty float y\nproperty float z\n";
  if (!mesh.triangles.empty())
    header += "element face " + std::to_string(mesh.triangles.size()) +
              "\nproperty list uchar int vertex_indices\n";
  header += "end_header\n";
  w.put_bytes(header);
  for (const auto& v : mesh.vertices) {
    w.put(static_cast<float>(v.x()));
    w.put(static_cast<float>(v.y()));
    w.put(static_cast<float>(v.z()));
  }
  for (const auto& t : mesh.triangles) {
    w.put(static_cast<std::uint8_t>(3));
    for (auto idx : t) w.put(static_cast<std::int32_t>(idx));
  }
  atomic_write_file(path, w.bytes());
}

}  // namespace csdf
