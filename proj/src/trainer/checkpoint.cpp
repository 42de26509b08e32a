#include "tie/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tie {

namespace {

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    value |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return value;
}

std::uint32_t crc32_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

const NamedTensor& CheckpointFile::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw CheckpointError("checkpoint has no tensor " + name);
}

bool CheckpointFile::contains(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

std::string serialize_checkpoint(const CheckpointFile& file) {
  nlohmann::json header = file.header;
  nlohmann::json manifest = nlohmann::json::array();
  std::string payload;
  for (const auto& t : file.tensors) {
    if (element_count(t.dims) != t.value.size())
      throw CheckpointError("tensor " + t.name + " dims do not match its values");
    manifest.push_back({{"name", t.name}, {"dtype", "f64"}, {"dims", t.dims}, {"offset", payload.size()}});
    for (Index i = 0; i < t.value.size(); ++i) put(payload, std::bit_cast<std::uint64_t>(t.value.data()[i]));
  }
  header["tensors"] = manifest;
  const std::string text = header.dump();

  std::string out = "TIE1";
  put(out, checkpoint_version);
  put(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  out += payload;
  put(out, crc32_of(payload.data(), payload.size()));
  return out;
}

CheckpointFile parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "TIE1") != 0) throw CheckpointError("not a checkpoint (bad magic)");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != checkpoint_version)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto header_size = take<std::uint64_t>(bytes, pos);
  if (header_size > bytes.size() - pos) throw CheckpointError("checkpoint truncated");
  CheckpointFile file;
  try {
    file.header = nlohmann::json::parse(bytes.substr(pos, header_size));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += header_size;
  if (bytes.size() < pos + 4) throw CheckpointError("checkpoint truncated");
  const std::size_t payload_size = bytes.size() - pos - 4;
  std::size_t crc_pos = pos + payload_size;
  const auto stored = take<std::uint32_t>(bytes, crc_pos);
  if (stored != crc32_of(bytes.data() + pos, payload_size)) throw CheckpointError("checkpoint CRC mismatch");

  const nlohmann::json manifest = file.header.at("tensors");
  file.header.erase("tensors");
  for (const auto& entry : manifest) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    if (entry.at("dtype") != "f64") throw CheckpointError("tensor " + t.name + " has unsupported dtype");
    t.dims = entry.at("dims").get<Shape>();
    const auto count = element_count(t.dims);
    const Index cols = t.dims.empty() ? 1 : t.dims.back();
    std::size_t at = pos + entry.at("offset").get<std::size_t>();
    if (at + static_cast<std::size_t>(count) * 8 > pos + payload_size)
      throw CheckpointError("tensor " + t.name + " lies outside the payload");
    t.value.resize(cols == 0 ? 0 : count / cols, cols);
    for (Index i = 0; i < count; ++i) t.value.data()[i] = std::bit_cast<double>(take<std::uint64_t>(bytes, at));
    file.tensors.push_back(std::move(t));
  }
  return file;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  const std::string bytes = serialize_checkpoint(file);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint not found: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_checkpoint(buffer.str());
}

}  // namespace tie
