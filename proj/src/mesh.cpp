#include "neurocad/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

namespace neurocad {

namespace {

constexpr std::size_t kStlHeaderBytes = 80;
constexpr std::size_t kStlPrologueBytes = 84;
constexpr std::size_t kStlFacetBytes = 50;

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

Vec3 round_to_float(Vec3 v) { return {round_to_float(v.x), round_to_float(v.y), round_to_float(v.z)}; }

std::uint32_t read_u32_le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float read_f32_le(const std::uint8_t* p) { return std::bit_cast<float>(read_u32_le(p)); }

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32_le(std::vector<std::uint8_t>& out, double v) {
    put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

// STL triangles carry their stored normal unless it is zero; zero normals are
// recomputed from the winding and rounded to float so that a binary round trip
// reproduces the triangle exactly.
Triangle stl_triangle(Vec3 stored_normal, Vec3 a, Vec3 b, Vec3 c) {
    Triangle t = make_triangle(a, b, c);
    if (stored_normal == Vec3{}) {
        t.normal = round_to_float(t.normal);
    } else {
        t.normal = stored_normal;
    }
    return t;
}

TriangleMesh parse_stl_binary(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kStlPrologueBytes) {
        throw ParseError("binary STL truncated at byte " + std::to_string(bytes.size()) +
                             " (header needs 84 bytes)",
                         bytes.size(), ParseError::Unit::byte);
    }
    const std::uint64_t count = read_u32_le(bytes.data() + kStlHeaderBytes);
    const std::uint64_t needed = kStlPrologueBytes + count * kStlFacetBytes;
    if (bytes.size() < needed) {
        const std::uint64_t complete = (bytes.size() - kStlPrologueBytes) / kStlFacetBytes;
        throw ParseError("binary STL truncated at byte " + std::to_string(bytes.size()) + " (facet " +
                             std::to_string(complete) + " of " + std::to_string(count) +
                             " incomplete)",
                         bytes.size(), ParseError::Unit::byte);
    }
    if (bytes.size() > needed) {
        throw ParseError("binary STL triangle count mismatch: header declares " + std::to_string(count) +
                             " facets (" + std::to_string(needed) + " bytes) but file has " +
                             std::to_string(bytes.size()) + " bytes",
                         needed, ParseError::Unit::byte);
    }
    if (count == 0) {
        throw ParseError("binary STL contains zero triangles", kStlHeaderBytes, ParseError::Unit::byte);
    }

    TriangleMesh mesh;
    mesh.source_format = SourceFormat::stl_binary;
    mesh.triangles.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t offset = kStlPrologueBytes + i * kStlFacetBytes;
        const std::uint8_t* p = bytes.data() + offset;
        Vec3 v[4];
        for (int k = 0; k < 4; ++k) {
            v[k] = {read_f32_le(p + 12 * k), read_f32_le(p + 12 * k + 4), read_f32_le(p + 12 * k + 8)};
            if (!v[k].finite()) {
                throw ParseError("binary STL non-finite coordinate at byte " + std::to_string(offset + 12 * k),
                                 offset + 12 * k, ParseError::Unit::byte);
            }
        }
        mesh.triangles.push_back(stl_triangle(v[0], v[1], v[2], v[3]));
    }
    return mesh;
}

struct Token {
    std::string_view text;
    std::size_t line;
};

class AsciiStlParser {
public:
    explicit AsciiStlParser(std::string_view text) : text_(text) {}

    TriangleMesh parse() {
        TriangleMesh mesh;
        mesh.source_format = SourceFormat::stl_ascii;
        expect_keyword("solid");
        skip_rest_of_line();
        for (;;) {
            Token t = next();
            if (t.text == "facet") {
                mesh.triangles.push_back(parse_facet());
            } else if (t.text == "endsolid") {
                skip_rest_of_line();
                Token after = next();
                if (after.text.empty()) break;
                if (after.text != "solid") fail("expected end of file or 'solid'", after);
                skip_rest_of_line();
            } else {
                fail(t.text.empty() ? "unexpected end of file, expected 'facet' or 'endsolid'"
                                    : "expected 'facet' or 'endsolid'",
                     t);
            }
        }
        if (mesh.triangles.empty()) {
            throw ParseError("ASCII STL contains zero triangles", line_, ParseError::Unit::line);
        }
        return mesh;
    }

private:
    Triangle parse_facet() {
        expect_keyword("normal");
        const Vec3 n = parse_vec3();
        expect_keyword("outer");
        expect_keyword("loop");
        Vec3 v[3];
        for (auto& vertex : v) {
            expect_keyword("vertex");
            vertex = parse_vec3();
        }
        expect_keyword("endloop");
        expect_keyword("endfacet");
        return stl_triangle(n, v[0], v[1], v[2]);
    }

    Vec3 parse_vec3() {
        Vec3 v;
        for (int axis = 0; axis < 3; ++axis) {
            Token t = next();
            double value = 0.0;
            const char* first = t.text.data();
            const char* last = first + t.text.size();
            auto [ptr, ec] = std::from_chars(first, last, value);
            if (t.text.empty() || ec != std::errc{} || ptr != last) fail("expected a number", t);
            value = round_to_float(value);
            if (!std::isfinite(value)) fail("non-finite coordinate", t);
            v[axis] = value;
        }
        return v;
    }

    void expect_keyword(std::string_view keyword) {
        Token t = next();
        if (t.text != keyword) fail("expected '" + std::string(keyword) + "'", t);
    }

    Token next() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            if (text_[pos_] == '\n') ++line_;
            ++pos_;
        }
        const std::size_t start = pos_;
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        return {text_.substr(start, pos_ - start), line_};
    }

    void skip_rest_of_line() {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    }

    [[noreturn]] void fail(const std::string& message, const Token& at) const {
        std::string found = at.text.empty() ? std::string("end of file") : "'" + std::string(at.text.substr(0, 32)) + "'";
        throw ParseError("ASCII STL line " + std::to_string(at.line) + ": " + message + ", found " + found,
                         at.line, ParseError::Unit::line);
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
};

bool starts_with_solid(std::span<const std::uint8_t> bytes) {
    std::size_t i = 0;
    while (i < bytes.size() && std::isspace(bytes[i])) ++i;
    return bytes.size() - i >= 5 && std::memcmp(bytes.data() + i, "solid", 5) == 0;
}

std::string format_float(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, static_cast<float>(v));
    (void)ec;
    return std::string(buf, ptr);
}

std::string lowercase_extension(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return {};
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace

Triangle make_triangle(Vec3 v0, Vec3 v1, Vec3 v2) {
    Triangle t{v0, v1, v2, {}, false};
    const Vec3 c = cross(v1 - v0, v2 - v0);
    const double len = norm(c);
    const double longest = std::max({dot(v1 - v0, v1 - v0), dot(v2 - v1, v2 - v1), dot(v0 - v2, v0 - v2)});
    if (!(len > 1e-12 * longest) || longest == 0.0) {
        t.degenerate = true;
        return t;
    }
    t.normal = c * (1.0 / len);
    return t;
}

std::size_t TriangleMesh::degenerate_count() const {
    return static_cast<std::size_t>(
        std::count_if(triangles.begin(), triangles.end(), [](const Triangle& t) { return t.degenerate; }));
}

TriangleMesh parse_stl(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw ParseError("empty STL input", 0, ParseError::Unit::byte);
    if (!starts_with_solid(bytes)) return parse_stl_binary(bytes);

    const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    try {
        return AsciiStlParser(text).parse();
    } catch (const ParseError& ascii_error) {
        // Some exporters write binary files whose header starts with "solid".
        if (bytes.size() >= kStlPrologueBytes &&
            bytes.size() == kStlPrologueBytes + std::uint64_t{read_u32_le(bytes.data() + kStlHeaderBytes)} * kStlFacetBytes) {
            return parse_stl_binary(bytes);
        }
        throw;
    }
}

TriangleMesh parse_obj(std::string_view text) {
    if (text.empty()) throw ParseError("empty OBJ input", 0, ParseError::Unit::line);

    TriangleMesh mesh;
    mesh.source_format = SourceFormat::obj;
    std::vector<Vec3> vertices;
    std::size_t line_no = 0;
    std::size_t pos = 0;

    auto fail = [&](const std::string& message) -> void {
        throw ParseError("OBJ line " + std::to_string(line_no) + ": " + message, line_no, ParseError::Unit::line);
    };

    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);

        std::vector<std::string_view> tokens;
        for (std::size_t i = 0; i < line.size();) {
            while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            const std::size_t start = i;
            while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            if (i > start) tokens.push_back(line.substr(start, i - start));
        }
        if (tokens.empty()) continue;

        if (tokens[0] == "v") {
            if (tokens.size() < 4) fail("vertex needs 3 coordinates");
            Vec3 v;
            for (int axis = 0; axis < 3; ++axis) {
                const auto tok = tokens[1 + axis];
                double value = 0.0;
                auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
                if (ec != std::errc{} || ptr != tok.data() + tok.size()) fail("bad coordinate '" + std::string(tok) + "'");
                if (!std::isfinite(value)) fail("non-finite coordinate");
                v[axis] = value;
            }
            vertices.push_back(v);
        } else if (tokens[0] == "f") {
            if (tokens.size() < 4) fail("face with fewer than 3 vertices");
            std::vector<std::size_t> face;
            for (std::size_t k = 1; k < tokens.size(); ++k) {
                const auto tok = tokens[k].substr(0, tokens[k].find('/'));
                long long index = 0;
                auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), index);
                if (tok.empty() || ec != std::errc{} || ptr != tok.data() + tok.size()) {
                    fail("bad face index '" + std::string(tokens[k]) + "'");
                }
                const long long count = static_cast<long long>(vertices.size());
                const long long resolved = index < 0 ? count + index : index - 1;
                if (index == 0 || resolved < 0 || resolved >= count) {
                    fail("index " + std::string(tok) + " out of range (" + std::to_string(count) + " vertices defined)");
                }
                face.push_back(static_cast<std::size_t>(resolved));
            }
            for (std::size_t k = 1; k + 1 < face.size(); ++k) {
                mesh.triangles.push_back(make_triangle(vertices[face[0]], vertices[face[k]], vertices[face[k + 1]]));
            }
        }
    }
    if (mesh.triangles.empty()) throw ParseError("OBJ contains no faces", line_no, ParseError::Unit::line);
    return mesh;
}

std::vector<std::uint8_t> write_stl(const TriangleMesh& mesh, StlFlavor flavor) {
    std::vector<std::uint8_t> out;
    if (flavor == StlFlavor::binary) {
        out.reserve(kStlPrologueBytes + mesh.triangles.size() * kStlFacetBytes);
        out.resize(kStlHeaderBytes, 0);
        const char tag[] = "neurocad binary stl";
        std::memcpy(out.data(), tag, sizeof tag - 1);
        put_u32_le(out, static_cast<std::uint32_t>(mesh.triangles.size()));
        for (const auto& t : mesh.triangles) {
            for (const Vec3& v : {t.normal, t.v0, t.v1, t.v2}) {
                put_f32_le(out, v.x);
                put_f32_le(out, v.y);
                put_f32_le(out, v.z);
            }
            out.push_back(0);
            out.push_back(0);
        }
        return out;
    }

    std::string text = "solid neurocad\n";
    auto vec = [](Vec3 v) { return format_float(v.x) + " " + format_float(v.y) + " " + format_float(v.z); };
    for (const auto& t : mesh.triangles) {
        text += "  facet normal " + vec(t.normal) + "\n    outer loop\n";
        for (const Vec3& v : {t.v0, t.v1, t.v2}) text += "      vertex " + vec(v) + "\n";
        text += "    endloop\n  endfacet\n";
    }
    text += "endsolid neurocad\n";
    out.assign(text.begin(), text.end());
    return out;
}

BoundingBox bounding_box(const TriangleMesh& mesh) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    BoundingBox box{{inf, inf, inf}, {-inf, -inf, -inf}};
    for (const auto& t : mesh.triangles) {
        for (const Vec3& v : {t.v0, t.v1, t.v2}) {
            for (int a = 0; a < 3; ++a) {
                box.min[a] = std::min(box.min[a], v[a]);
                box.max[a] = std::max(box.max[a], v[a]);
            }
        }
    }
    return box;
}

std::string_view to_string(SourceFormat format) {
    switch (format) {
        case SourceFormat::stl_binary: return "stl_binary";
        case SourceFormat::stl_ascii: return "stl_ascii";
        case SourceFormat::obj: return "obj";
    }
    return "unknown";
}

TriangleMesh parse_mesh(std::span<const std::uint8_t> bytes, SourceFormat hint) {
    if (hint == SourceFormat::obj) {
        return parse_obj(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    }
    return parse_stl(bytes);
}

std::optional<SourceFormat> format_from_filename(std::string_view filename) {
    const std::string ext = lowercase_extension(std::string(filename));
    if (ext == "stl") return SourceFormat::stl_binary;
    if (ext == "obj") return SourceFormat::obj;
    return std::nullopt;
}

TriangleMesh load_mesh_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open mesh file '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_mesh(bytes, lowercase_extension(path) == "obj" ? SourceFormat::obj : SourceFormat::stl_binary);
}

}  // namespace neurocad
