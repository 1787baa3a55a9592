#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "cytonet/models.hpp"

namespace cytonet {

// Checkpoint layout (all integers little-endian):
//   magic "CYTN" | u32 version | u8 scalar size | u64 config hash |
//   u32 config length | canonical config text | u32 entry count |
//   entries (kind u8, name u16+bytes, shape u8+i32s, payload u64+bytes) |
//   trailer "DNE."
// Entries appear in declaration order: parameters, then per-layer buffers and
// counters interleaved exactly as visit() emits them.

namespace ckpt_detail {

inline void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }
inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_i32(std::vector<std::uint8_t>& b, std::int32_t v) {
  put_u32(b, static_cast<std::uint32_t>(v));
}

struct Cursor {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t off = 0;

  void need(std::size_t k) const {
    if (off + k > n) throw IoError("truncated checkpoint stream");
  }
  std::uint8_t u8() {
    need(1);
    return p[off++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[off] | (p[off + 1] << 8));
    off += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[off + static_cast<std::size_t>(i)]) << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[off + static_cast<std::size_t>(i)]) << (8 * i);
    off += 8;
    return v;
  }
  std::string bytes(std::size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p + off), k);
    off += k;
    return s;
  }
};

template <typename T>
void put_scalar(std::vector<std::uint8_t>& b, T v) {
  if constexpr (sizeof(T) == 4) {
    put_u32(b, std::bit_cast<std::uint32_t>(v));
  } else {
    put_u64(b, std::bit_cast<std::uint64_t>(v));
  }
}

template <typename T>
T get_scalar(Cursor& c) {
  if constexpr (sizeof(T) == 4) {
    return std::bit_cast<T>(c.u32());
  } else {
    return std::bit_cast<T>(c.u64());
  }
}

enum : std::uint8_t { kParam = 0, kBuffer = 1, kCounter = 2 };

struct Entry {
  std::uint8_t kind;
  std::string name;
  Shape shape;
  std::vector<double> data;  // counters store one value
};

template <typename T>
void put_entry(std::vector<std::uint8_t>& out, std::uint8_t kind, const std::string& name,
               const Tensor<T>& t) {
  put_u8(out, kind);
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  for (char ch : name) out.push_back(static_cast<std::uint8_t>(ch));
  put_u8(out, static_cast<std::uint8_t>(t.ndim()));
  for (int d = 0; d < t.ndim(); ++d) put_i32(out, t.dim(d));
  put_u64(out, static_cast<std::uint64_t>(t.size() * sizeof(T)));
  for (std::size_t i = 0; i < t.size(); ++i) put_scalar<T>(out, t[i]);
}

}  // namespace ckpt_detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Serializes parameters, running statistics and the full config.
/// Round-trips bit-exactly.
template <typename T>
std::vector<std::uint8_t> checkpoint_save(NetworkGraph<T>& model) {
  using namespace ckpt_detail;
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'C', 'Y', 'T', 'N'});
  put_u32(out, kCheckpointVersion);
  put_u8(out, static_cast<std::uint8_t>(sizeof(T)));
  const std::string cfg = model.config().canonical_text();
  put_u64(out, model.config().hash());
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  for (char ch : cfg) out.push_back(static_cast<std::uint8_t>(ch));

  std::uint32_t count = 0;
  {
    ModelVisitor<T> v;
    v.param = [&count](const std::string&, Param<T>&) { ++count; };
    v.buffer = [&count](const std::string&, Tensor<T>&) { ++count; };
    v.counter = [&count](const std::string&, std::int64_t&) { ++count; };
    model.visit(v);
  }
  put_u32(out, count);

  ModelVisitor<T> v;
  v.param = [&out](const std::string& name, Param<T>& p) {
    put_entry<T>(out, kParam, name, p.value);
  };
  v.buffer = [&out](const std::string& name, Tensor<T>& b) { put_entry<T>(out, kBuffer, name, b); };
  v.counter = [&out](const std::string& name, std::int64_t& c) {
    put_u8(out, kCounter);
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    for (char ch : name) out.push_back(static_cast<std::uint8_t>(ch));
    put_u8(out, 0);
    put_u64(out, 8);
    put_u64(out, static_cast<std::uint64_t>(c));
  };
  model.visit(v);
  out.insert(out.end(), {'D', 'N', 'E', '.'});
  return out;
}

namespace ckpt_detail {

template <typename T>
struct Parsed {
  ModelConfig config;
  std::uint64_t stored_hash = 0;
  std::vector<Entry> entries;
  std::vector<std::vector<T>> payloads;
};

template <typename T>
Parsed<T> parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Cursor c{bytes.data(), bytes.size()};
  if (c.bytes(4) != "CYTN") throw IoError("not a checkpoint stream (bad magic)");
  const std::uint32_t version = c.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint8_t scalar = c.u8();
  if (scalar != sizeof(T)) {
    throw IoError("checkpoint scalar width " + std::to_string(scalar) +
                  " does not match model precision " + std::to_string(sizeof(T)));
  }
  Parsed<T> out;
  out.stored_hash = c.u64();
  const std::uint32_t cfg_len = c.u32();
  if (cfg_len > bytes.size()) throw IoError("corrupt checkpoint: config length exceeds stream");
  const std::string cfg_text = c.bytes(cfg_len);
  out.config = parse_model_config_text(cfg_text);
  if (out.config.hash() != out.stored_hash) {
    throw IoError("corrupt checkpoint: stored config hash does not match config text");
  }
  const std::uint32_t n = c.u32();
  out.entries.reserve(n);
  out.payloads.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Entry e;
    e.kind = c.u8();
    if (e.kind > kCounter) throw IoError("corrupt checkpoint: unknown entry kind");
    const std::uint16_t name_len = c.u16();
    e.name = c.bytes(name_len);
    const std::uint8_t ndim = c.u8();
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const std::int32_t ext = static_cast<std::int32_t>(c.u32());
      if (ext < 1) throw IoError("corrupt checkpoint: extent < 1 in entry '" + e.name + "'");
      e.shape.push_back(ext);
      numel *= static_cast<std::size_t>(ext);
    }
    const std::uint64_t payload = c.u64();
    if (e.kind == kCounter) {
      if (payload != 8) throw IoError("corrupt checkpoint: counter payload length");
      e.data.push_back(static_cast<double>(static_cast<std::int64_t>(c.u64())));
      out.payloads.emplace_back();
    } else {
      if (payload != numel * sizeof(T)) {
        throw IoError("corrupt checkpoint: length field of entry '" + e.name +
                      "' disagrees with its shape");
      }
      std::vector<T> vals(numel);
      for (std::size_t k = 0; k < numel; ++k) vals[k] = get_scalar<T>(c);
      out.payloads.push_back(std::move(vals));
    }
    out.entries.push_back(std::move(e));
  }
  if (c.bytes(4) != "DNE.") throw IoError("truncated checkpoint stream (missing trailer)");
  return out;
}

/// Applies fully parsed entries to a constructed model; names and shapes must
/// match the model's declaration order exactly.
template <typename T>
void apply_entries(NetworkGraph<T>& model, Parsed<T>& parsed) {
  std::size_t next = 0;
  auto take = [&](std::uint8_t kind, const std::string& name) -> std::size_t {
    if (next >= parsed.entries.size()) {
      throw IoError("checkpoint ends before state '" + name + "'");
    }
    const Entry& e = parsed.entries[next];
    if (e.kind != kind || e.name != name) {
      throw IoError("checkpoint entry '" + e.name + "' does not match expected state '" + name +
                    "'");
    }
    return next++;
  };
  ModelVisitor<T> v;
  v.param = [&](const std::string& name, Param<T>& p) {
    const std::size_t i = take(kParam, name);
    if (parsed.entries[i].shape != p.value.shape()) {
      throw IoError("checkpoint parameter '" + name + "' has shape " +
                    shape_str(parsed.entries[i].shape) + ", model expects " +
                    shape_str(p.value.shape()));
    }
    p.value = Tensor<T>(p.value.shape(), std::move(parsed.payloads[i]));
  };
  v.buffer = [&](const std::string& name, Tensor<T>& b) {
    const std::size_t i = take(kBuffer, name);
    if (parsed.entries[i].shape != b.shape()) {
      throw IoError("checkpoint buffer '" + name + "' shape mismatch");
    }
    b = Tensor<T>(b.shape(), std::move(parsed.payloads[i]));
  };
  v.counter = [&](const std::string& name, std::int64_t& cval) {
    const std::size_t i = take(kCounter, name);
    cval = static_cast<std::int64_t>(parsed.entries[i].data[0]);
  };
  model.visit(v);
  if (next != parsed.entries.size()) {
    throw IoError("checkpoint carries " + std::to_string(parsed.entries.size() - next) +
                  " extra entries");
  }
}

}  // namespace ckpt_detail

/// Reconstructs the model recorded in the stream (config included).
template <typename T>
std::unique_ptr<NetworkGraph<T>> checkpoint_load(const std::vector<std::uint8_t>& bytes) {
  auto parsed = ckpt_detail::parse_checkpoint<T>(bytes);
  auto model = build_model<T>(parsed.config);
  ckpt_detail::apply_entries(*model, parsed);
  return model;
}

/// Loads into an existing model; the stored config hash must match the
/// target's. The stream is parsed in full before any state is touched.
template <typename T>
void checkpoint_load_into(NetworkGraph<T>& model, const std::vector<std::uint8_t>& bytes) {
  auto parsed = ckpt_detail::parse_checkpoint<T>(bytes);
  const std::uint64_t want = model.config().hash();
  if (parsed.stored_hash != want) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%016llx, model expects %016llx",
                  static_cast<unsigned long long>(parsed.stored_hash),
                  static_cast<unsigned long long>(want));
    throw IoError(std::string("checkpoint config hash ") + buf);
  }
  ckpt_detail::apply_entries(model, parsed);
}

}  // namespace cytonet
