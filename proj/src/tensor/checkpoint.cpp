#include "uda/tensor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace uda {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }

  std::string str(std::size_t n) {
    need(n, "parameter name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (shape_numel(e.shape) != e.values.size()) throw CheckpointError("entry " + e.name + ": shape/payload mismatch");
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto extent : e.shape) put_u64(out, extent);
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError("not a checkpoint: bad magic");
  }
  std::vector<std::uint8_t> rest(bytes.begin() + sizeof(kCheckpointMagic), bytes.end());
  Reader r(rest);
  const auto version = r.uint(4, "version");
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.uint(4, "count");
  std::vector<CheckpointEntry> entries;
  for (std::uint64_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    e.name = r.str(r.uint(4, "name length"));
    const auto rank = r.uint(4, "rank");
    for (std::uint64_t d = 0; d < rank; ++d) e.shape.push_back(r.uint(8, "extent"));
    const auto n = shape_numel(e.shape);
    if (r.remaining() / 4 < n) throw CheckpointError("truncated payload for " + e.name);
    e.values.resize(n);
    for (auto& v : e.values) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4, "payload")));
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return entries;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  const auto bytes = encode_checkpoint(entries);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("write failed: " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template <typename T>
std::vector<CheckpointEntry> to_entries(const ParameterSet<T>& params) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : params.items()) {
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return out;
}

template <typename T>
void load_into(ParameterSet<T>& params, const std::vector<CheckpointEntry>& entries) {
  for (const auto& p : params.items()) {
    const CheckpointEntry* match = nullptr;
    for (const auto& e : entries) {
      if (e.name == p.name) match = &e;
    }
    if (!match) throw CheckpointError("checkpoint is missing parameter " + p.name);
    if (match->shape != p.tensor.shape()) {
      throw CheckpointError("shape mismatch for " + p.name + ": checkpoint " + shape_str(match->shape) + ", model " +
                            shape_str(p.tensor.shape()));
    }
    auto t = p.tensor;
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(match->values[i]);
  }
}

template std::vector<CheckpointEntry> to_entries(const ParameterSet<float>&);
template std::vector<CheckpointEntry> to_entries(const ParameterSet<double>&);
template void load_into(ParameterSet<float>&, const std::vector<CheckpointEntry>&);
template void load_into(ParameterSet<double>&, const std::vector<CheckpointEntry>&);

}  // namespace uda
