#include "crackseg/archive.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace crackseg {

namespace {

constexpr const char* kMagic = "crackseg-archive v1";

void put_f32_le(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float get_f32_le(const unsigned char* p) {
  const uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                        (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string shape_token(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s.empty() ? "1" : s;
}

Shape parse_shape_token(const std::string& token) {
  Shape shape;
  std::size_t pos = 0;
  while (pos < token.size()) {
    std::size_t next = token.find('x', pos);
    if (next == std::string::npos) next = token.size();
    shape.push_back(std::stoi(token.substr(pos, next - pos)));
    pos = next + 1;
  }
  return shape;
}

}  // namespace

void save_archive(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                  const std::map<std::string, std::string>& meta) {
  std::ostringstream header;
  header << kMagic << "\n";
  for (const auto& [key, value] : meta) header << "meta " << key << " = " << value << "\n";
  std::string blob;
  int64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    const int64_t bytes = tensor->numel() * 4;
    header << "tensor " << name << " f32 " << shape_token(tensor->shape) << " " << offset << " "
           << bytes << "\n";
    for (float v : tensor->data) put_f32_le(blob, v);
    offset += bytes;
  }
  header << "end\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write archive " + path);
  const std::string head = header.str();
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("failed writing archive " + path);
}

Archive load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw IoError("not a crackseg archive: " + path);

  Archive archive;
  struct Pending {
    std::string name;
    Shape shape;
    int64_t offset;
    int64_t bytes;
  };
  std::vector<Pending> pending;
  while (std::getline(in, line)) {
    if (line == "end") break;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key, eq;
      ls >> key >> eq;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      archive.meta[key] = value;
    } else if (tag == "tensor") {
      Pending p;
      std::string dtype, shape_tok;
      ls >> p.name >> dtype >> shape_tok >> p.offset >> p.bytes;
      if (dtype != "f32") throw IoError("unsupported dtype in archive: " + dtype);
      p.shape = parse_shape_token(shape_tok);
      pending.push_back(std::move(p));
    } else {
      throw IoError("malformed archive header line: " + line);
    }
  }
  const std::streampos blob_start = in.tellg();
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  (void)blob_start;
  int64_t expected_end = 0;
  for (const Pending& p : pending) {
    const int64_t count = shape_numel(p.shape);
    if (p.bytes != count * 4 || p.offset < 0 ||
        p.offset + p.bytes > static_cast<int64_t>(blob.size()) || p.offset < expected_end)
      throw IoError("archive entry out of bounds or overlapping: " + p.name);
    expected_end = p.offset + p.bytes;
    Archive::Entry e;
    e.name = p.name;
    e.shape = p.shape;
    e.data.resize(static_cast<std::size_t>(count));
    for (int64_t i = 0; i < count; ++i)
      e.data[static_cast<std::size_t>(i)] = get_f32_le(blob.data() + p.offset + i * 4);
    archive.tensors.push_back(std::move(e));
  }
  return archive;
}

void save_model_archive(const Model& model, const std::string& path, SaveSet set,
                        const std::map<std::string, std::string>& meta) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& entry : model.params->entries()) {
    if (set == SaveSet::TunableOnly && !entry.value->tunable) continue;
    tensors.emplace_back(entry.name, entry.value.get());
  }
  save_archive(path, tensors, meta);
}

void load_model_archive(const std::string& path, Model& model) {
  Archive archive = load_archive(path);
  for (const auto& entry : archive.tensors) {
    if (!model.params->contains(entry.name))
      throw IoError("archive tensor not in model: " + entry.name);
    const ParamEntry& target = model.params->at(entry.name);
    if (target.value->shape != entry.shape)
      throw IoError("archive shape mismatch for " + entry.name + ": archive " +
                    shape_str(entry.shape) + " vs model " + shape_str(target.value->shape));
    target.value->data = entry.data;
  }
}

}  // namespace crackseg
