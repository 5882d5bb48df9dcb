#include "aog/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace aog {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

// ------------------------- little-endian writer -------------------------

struct Writer {
  std::vector<std::uint8_t> bytes;

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back((v >> (8 * i)) & 0xff);
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back((v >> (8 * i)) & 0xff);
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void vec(const Vec& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
};

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t count) const {
    if (pos + count > bytes.size())
      throw CorruptModel("truncated model stream");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  Vec vec() {
    const std::uint32_t len = u32();
    if (len > (1u << 26)) throw CorruptModel("implausible vector length");
    Vec v(len);
    for (std::uint32_t i = 0; i < len; ++i) v[i] = f64();
    return v;
  }
  std::string str() {
    const std::uint32_t len = u32();
    if (len > (1u << 20)) throw CorruptModel("implausible string length");
    need(len);
    std::string s(bytes.begin() + pos, bytes.begin() + pos + len);
    pos += len;
    return s;
  }
  std::string tag() {
    need(4);
    std::string t(bytes.begin() + pos, bytes.begin() + pos + 4);
    pos += 4;
    return t;
  }
};

}  // namespace

std::vector<std::uint8_t> serialize(const AndOrGraph& g) {
  // Section payloads first, header afterwards once sizes are known.
  Writer meta;
  meta.u32(static_cast<std::uint32_t>(g.m()));
  meta.u32(static_cast<std::uint32_t>(g.n()));
  meta.u32(static_cast<std::uint32_t>(g.cell_dims));

  Writer ands;
  for (const AndNode& a : g.and_nodes) {
    ands.u32(a.id);
    ands.str(a.label);
    ands.i32(a.category);
    ands.i32(a.view);
    ands.u32(a.root_shape.rows);
    ands.u32(a.root_shape.cols);
    ands.vec(a.weights);
    ands.f64(a.bias);
    for (int j : a.or_children) ands.u32(j);
  }

  Writer ors;
  for (const OrNode& o : g.or_nodes) {
    ors.u32(o.id);
    ors.u32(o.owner);
    ors.u32(o.part_slot);
    ors.f64(o.anchor_drow);
    ors.f64(o.anchor_dcol);
    ors.u32(static_cast<std::uint32_t>(o.children.size()));
    for (int i : o.children) ors.u32(i);
    for (int k = 0; k < 4; ++k) ors.f64(o.deform[k]);
  }

  Writer leaves;
  for (const LeafNode& l : g.leaf_nodes) {
    leaves.u32(l.id);
    leaves.u32(l.part_slot);
    leaves.u32(l.shape.rows);
    leaves.u32(l.shape.cols);
    leaves.vec(l.weights);
  }

  Writer edges;
  edges.u32(static_cast<std::uint32_t>(g.edges.leaf_edges.size()));
  for (const auto& [key, w] : g.edges.leaf_edges) {
    edges.u32(key.first);
    edges.u32(key.second);
    for (int k = 0; k < 4; ++k) edges.f64(w[k]);
  }
  edges.u32(static_cast<std::uint32_t>(g.edges.and_edges.size()));
  for (const auto& [key, w] : g.edges.and_edges) {
    edges.u32(key.first);
    edges.u32(key.second);
    for (int k = 0; k < 6; ++k) edges.f64(w[k]);
  }

  const std::pair<const char*, const Writer*> sections[] = {
      {"META", &meta}, {"ANDS", &ands}, {"ORNS", &ors},
      {"LEAF", &leaves}, {"EDGE", &edges}};

  Writer out;
  out.bytes.insert(out.bytes.end(), {'A', 'O', 'G', 'M'});
  out.u32(kFormatVersion);
  out.u32(static_cast<std::uint32_t>(std::size(sections)));
  // Table entries are (tag, offset-from-stream-start, size).
  std::size_t offset = out.bytes.size() + std::size(sections) * 20;
  for (const auto& [tag, w] : sections) {
    out.bytes.insert(out.bytes.end(), tag, tag + 4);
    out.u64(offset);
    out.u64(w->bytes.size());
    offset += w->bytes.size();
  }
  for (const auto& [tag, w] : sections)
    out.bytes.insert(out.bytes.end(), w->bytes.begin(), w->bytes.end());
  return out.bytes;
}

AndOrGraph deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader top{bytes};
  if (top.tag() != "AOGM") throw CorruptModel("missing AOGM magic");
  const std::uint32_t version = top.u32();
  if (version != kFormatVersion)
    throw VersionError("unknown model format version " +
                       std::to_string(version));
  const std::uint32_t n_sections = top.u32();
  if (n_sections > 64) throw CorruptModel("implausible section count");

  struct Section {
    std::uint64_t offset, size;
  };
  std::map<std::string, Section> table;
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    const std::string tag = top.tag();
    const std::uint64_t off = top.u64();
    const std::uint64_t size = top.u64();
    if (off + size > bytes.size() || off + size < off)
      throw CorruptModel("section " + tag + " exceeds stream");
    table[tag] = {off, size};
  }
  auto reader_for = [&](const char* tag) {
    auto it = table.find(tag);
    if (it == table.end())
      throw CorruptModel(std::string("missing section ") + tag);
    Reader r{bytes};
    r.pos = static_cast<std::size_t>(it->second.offset);
    return r;
  };

  AndOrGraph g;
  Reader meta = reader_for("META");
  const std::uint32_t m = meta.u32();
  const std::uint32_t n = meta.u32();
  g.cell_dims = static_cast<int>(meta.u32());
  if (m > 4096 || n > (1u << 20) || g.cell_dims < 1 || g.cell_dims > 4096)
    throw CorruptModel("implausible model counts");

  Reader ands = reader_for("ANDS");
  g.and_nodes.resize(m);
  for (std::uint32_t r = 0; r < m; ++r) {
    AndNode& a = g.and_nodes[r];
    a.id = static_cast<int>(ands.u32());
    a.label = ands.str();
    a.category = ands.i32();
    a.view = ands.i32();
    a.root_shape.rows = static_cast<int>(ands.u32());
    a.root_shape.cols = static_cast<int>(ands.u32());
    a.weights = ands.vec();
    a.bias = ands.f64();
    for (int& j : a.or_children) j = static_cast<int>(ands.u32());
  }

  Reader ors = reader_for("ORNS");
  g.or_nodes.resize(std::size_t(9) * m);
  for (OrNode& o : g.or_nodes) {
    o.id = static_cast<int>(ors.u32());
    o.owner = static_cast<int>(ors.u32());
    o.part_slot = static_cast<int>(ors.u32());
    o.anchor_drow = ors.f64();
    o.anchor_dcol = ors.f64();
    const std::uint32_t nc = ors.u32();
    if (nc > n) throw CorruptModel("or-node child count exceeds leaf count");
    o.children.resize(nc);
    for (int& i : o.children) i = static_cast<int>(ors.u32());
    for (int k = 0; k < 4; ++k) o.deform[k] = ors.f64();
  }

  Reader leaves = reader_for("LEAF");
  g.leaf_nodes.resize(n);
  for (LeafNode& l : g.leaf_nodes) {
    l.id = static_cast<int>(leaves.u32());
    l.part_slot = static_cast<int>(leaves.u32());
    l.shape.rows = static_cast<int>(leaves.u32());
    l.shape.cols = static_cast<int>(leaves.u32());
    l.weights = leaves.vec();
  }

  Reader edges = reader_for("EDGE");
  const std::uint32_t n_leaf_edges = edges.u32();
  if (n_leaf_edges > (1u << 24)) throw CorruptModel("implausible edge count");
  for (std::uint32_t e = 0; e < n_leaf_edges; ++e) {
    const int i = static_cast<int>(edges.u32());
    const int ip = static_cast<int>(edges.u32());
    Vec4 w;
    for (int k = 0; k < 4; ++k) w[k] = edges.f64();
    g.edges.leaf_edges[{i, ip}] = w;
  }
  const std::uint32_t n_and_edges = edges.u32();
  if (n_and_edges > (1u << 24)) throw CorruptModel("implausible edge count");
  for (std::uint32_t e = 0; e < n_and_edges; ++e) {
    const int r = static_cast<int>(edges.u32());
    const int rp = static_cast<int>(edges.u32());
    Vec6 w;
    for (int k = 0; k < 6; ++k) w[k] = edges.f64();
    g.edges.and_edges[{r, rp}] = w;
  }

  const std::vector<std::string> report = validate(g);
  if (!report.empty())
    throw CorruptModel("deserialized model is invalid: " + report.front());
  return g;
}

void save_model(const AndOrGraph& g, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize(g);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

AndOrGraph load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace aog
