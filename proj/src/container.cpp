#include "embsurg/container.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace embsurg {
namespace {

using nlohmann::json;

void append_bytes(std::string& out, const void* data, std::size_t n) {
  out.append(static_cast<const char*>(data), n);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open container file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

void Container::add(const std::string& name, const MatF& data,
                    std::vector<std::int64_t> shape) {
  if (shape.empty()) shape = {data.rows(), data.cols()};
  std::int64_t count = 1;
  for (auto d : shape) count *= d;
  if (count != data.size()) {
    throw ShapeError("container array '" + name + "': shape does not match " +
                     std::to_string(data.size()) + " elements");
  }
  if (float_arrays.count(name) == 0 && int_arrays.count(name) == 0) {
    array_order.push_back(name);
  }
  float_arrays[name] = data;
  shapes[name] = std::move(shape);
}

void Container::add(const std::string& name, const VecI& data) {
  if (float_arrays.count(name) == 0 && int_arrays.count(name) == 0) {
    array_order.push_back(name);
  }
  int_arrays[name] = data;
  shapes[name] = {data.size()};
}

bool Container::has(const std::string& name) const {
  return float_arrays.count(name) > 0 || int_arrays.count(name) > 0;
}

const MatF& Container::floats(const std::string& name) const {
  auto it = float_arrays.find(name);
  if (it == float_arrays.end())
    throw IntegrityError("container missing float array '" + name + "'");
  return it->second;
}

const VecI& Container::ints(const std::string& name) const {
  auto it = int_arrays.find(name);
  if (it == int_arrays.end())
    throw IntegrityError("container missing int array '" + name + "'");
  return it->second;
}

const std::vector<std::int64_t>& Container::shape(
    const std::string& name) const {
  auto it = shapes.find(name);
  if (it == shapes.end())
    throw IntegrityError("container missing array '" + name + "'");
  return it->second;
}

void save_container(const std::string& path, const Container& c) {
  json header;
  header["version"] = kContainerVersion;
  header["type"] = c.type;
  header["seed"] = c.seed;
  header["provenance"] = c.provenance;
  json arrays = json::array();
  for (const auto& name : c.array_order) {
    json a;
    a["name"] = name;
    a["dtype"] = c.float_arrays.count(name) ? "f32" : "i64";
    a["shape"] = c.shapes.at(name);
    arrays.push_back(a);
  }
  header["arrays"] = arrays;
  const std::string header_str = header.dump();

  std::string bytes;
  append_bytes(bytes, kContainerMagic, sizeof(kContainerMagic));
  const auto hlen = static_cast<std::uint32_t>(header_str.size());
  append_bytes(bytes, &hlen, sizeof(hlen));
  bytes += header_str;
  for (const auto& name : c.array_order) {
    if (auto it = c.float_arrays.find(name); it != c.float_arrays.end()) {
      append_bytes(bytes, it->second.data(),
                   sizeof(float) * static_cast<std::size_t>(it->second.size()));
    } else {
      const VecI& v = c.int_arrays.at(name);
      append_bytes(bytes, v.data(),
                   sizeof(std::int64_t) * static_cast<std::size_t>(v.size()));
    }
  }
  const std::uint64_t sum = fnv1a64(bytes.data(), bytes.size());
  append_bytes(bytes, &sum, sizeof(sum));

  // Write via a temp file then rename so a crash cannot leave a truncated
  // artifact under the final name.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError("cannot write container file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IntegrityError("short write to container file: " + path);
  }
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IntegrityError("cannot move container file into place: " + path);
  }
}

namespace {

json parse_header(const std::string& bytes, const std::string& path,
                  std::size_t* payload_offset) {
  if (bytes.size() < sizeof(kContainerMagic) + sizeof(std::uint32_t)) {
    throw IntegrityError("container too short: " + path);
  }
  if (std::memcmp(bytes.data(), kContainerMagic, sizeof(kContainerMagic)) !=
      0) {
    throw IntegrityError("bad container magic: " + path);
  }
  std::uint32_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + sizeof(kContainerMagic), sizeof(hlen));
  const std::size_t header_start = sizeof(kContainerMagic) + sizeof(hlen);
  if (bytes.size() < header_start + hlen) {
    throw IntegrityError("truncated container header: " + path);
  }
  json header;
  try {
    header = json::parse(bytes.substr(header_start, hlen));
  } catch (const json::exception& e) {
    throw IntegrityError("corrupt container header in " + path + ": " +
                         e.what());
  }
  const int version = header.value("version", -1);
  if (version != kContainerVersion) {
    throw IntegrityError("unsupported container version " +
                         std::to_string(version) + " in " + path +
                         " (supported: " + std::to_string(kContainerVersion) +
                         ")");
  }
  if (payload_offset) *payload_offset = header_start + hlen;
  return header;
}

}  // namespace

Container load_container(const std::string& path) {
  const std::string bytes = read_file(path);
  std::size_t offset = 0;
  const json header = parse_header(bytes, path, &offset);

  if (bytes.size() < offset + sizeof(std::uint64_t)) {
    throw IntegrityError("truncated container payload: " + path);
  }
  const std::size_t payload_end = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + payload_end, sizeof(stored));
  if (fnv1a64(bytes.data(), payload_end) != stored) {
    throw IntegrityError("container checksum mismatch: " + path);
  }

  Container c;
  c.type = header.value("type", "");
  c.seed = header.value("seed", std::uint64_t{0});
  c.provenance = header.value("provenance", json::object());

  std::size_t pos = offset;
  for (const auto& a : header.at("arrays")) {
    const std::string name = a.at("name");
    const std::string dtype = a.at("dtype");
    std::vector<std::int64_t> shape =
        a.at("shape").get<std::vector<std::int64_t>>();
    std::int64_t count = 1;
    for (auto d : shape) count *= d;
    const std::size_t elem = dtype == "f32" ? 4 : 8;
    const std::size_t nbytes = static_cast<std::size_t>(count) * elem;
    if (pos + nbytes > payload_end) {
      throw IntegrityError("container array '" + name +
                           "' exceeds payload: " + path);
    }
    c.array_order.push_back(name);
    c.shapes[name] = shape;
    if (dtype == "f32") {
      // 2-D shapes load with their stated dimensions, anything else as a
      // single column; callers reshape via shape().
      Eigen::Index rows, cols;
      if (shape.size() == 2) {
        rows = shape[0];
        cols = shape[1];
      } else {
        rows = count;
        cols = count > 0 ? 1 : 0;
      }
      MatF m(rows, cols);
      std::memcpy(m.data(), bytes.data() + pos, nbytes);
      c.float_arrays[name] = std::move(m);
    } else if (dtype == "i64") {
      VecI v(count);
      std::memcpy(v.data(), bytes.data() + pos, nbytes);
      c.int_arrays[name] = std::move(v);
    } else {
      throw IntegrityError("unknown dtype '" + dtype + "' in " + path);
    }
    pos += nbytes;
  }
  if (pos != payload_end) {
    throw IntegrityError("container has trailing bytes: " + path);
  }
  return c;
}

nlohmann::json peek_header(const std::string& path) {
  return parse_header(read_file(path), path, nullptr);
}

}  // namespace embsurg
