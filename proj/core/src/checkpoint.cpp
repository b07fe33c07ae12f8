#include "egosag/checkpoint.hpp"

#include <cstring>

#include "egosag/errors.hpp"
#include "egosag/io.hpp"

namespace egosag {
namespace {

void append_u32(std::string& out, uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void append_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

struct Reader {
  const std::string& bytes;
  const std::string& path;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > bytes.size()) {
      throw DataError(DataError::Kind::Corrupt,
                      path + ": truncated checkpoint at offset " +
                          std::to_string(pos));
    }
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + pos, 8);
    pos += 8;
    return v;
  }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out.append("EGCP", 4);
  append_u32(out, kCheckpointVersion);
  append_u64(out, ckpt.config_hash);
  append_u64(out, ckpt.step);
  append_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, mat] : ckpt.tensors) {  // map order: sorted names
    append_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    append_u32(out, static_cast<uint32_t>(mat.rows()));
    append_u32(out, static_cast<uint32_t>(mat.cols()));
    for (Eigen::Index r = 0; r < mat.rows(); ++r) {
      for (Eigen::Index c = 0; c < mat.cols(); ++c) {
        const float f = static_cast<float>(mat(r, c));
        char buf[4];
        std::memcpy(buf, &f, 4);
        out.append(buf, 4);
      }
    }
  }
  io::write_file_bytes(path, out);
}

Checkpoint load_checkpoint(const std::string& path,
                           std::uint64_t expected_hash) {
  const std::string bytes = io::read_file_bytes(path);
  Reader r{bytes, path};
  {
    r.need(4);
    char magic[4];
    std::memcpy(magic, bytes.data(), 4);
    r.pos = 4;
    if (std::memcmp(magic, "EGCP", 4) != 0) {
      throw DataError(DataError::Kind::VersionMismatch,
                      path + ": not a checkpoint file (bad magic bytes)");
    }
  }
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(DataError::Kind::VersionMismatch,
                    path + ": unsupported checkpoint version " +
                        std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.config_hash = r.u64();
  ckpt.step = r.u64();
  if (expected_hash != 0 && ckpt.config_hash != expected_hash) {
    throw DataError(DataError::Kind::ConfigHashMismatch,
                    path + ": checkpoint was produced by an incompatible "
                           "model configuration (architecture hash " +
                        std::to_string(ckpt.config_hash) + ", this run needs " +
                        std::to_string(expected_hash) + ")");
  }
  const uint32_t n_tensors = r.u32();
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const uint32_t name_len = r.u32();
    r.need(name_len);
    std::string name = bytes.substr(r.pos, name_len);
    r.pos += name_len;
    const auto rows = static_cast<Eigen::Index>(r.u32());
    const auto cols = static_cast<Eigen::Index>(r.u32());
    if (rows <= 0 || cols <= 0) {
      throw DataError(DataError::Kind::Corrupt,
                      path + ": tensor \"" + name +
                          "\" has non-positive dimensions");
    }
    r.need(static_cast<size_t>(rows) * static_cast<size_t>(cols) * 4);
    ad::Mat mat(rows, cols);
    for (Eigen::Index row = 0; row < rows; ++row) {
      for (Eigen::Index col = 0; col < cols; ++col) {
        float f;
        std::memcpy(&f, bytes.data() + r.pos, 4);
        r.pos += 4;
        mat(row, col) = static_cast<double>(f);
      }
    }
    if (ckpt.tensors.count(name)) {
      throw DataError(DataError::Kind::Corrupt,
                      path + ": duplicate tensor \"" + name + "\"");
    }
    ckpt.tensors.emplace(std::move(name), std::move(mat));
  }
  if (r.pos != bytes.size()) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": trailing bytes after tensor payload");
  }
  return ckpt;
}

Checkpoint capture_params(const ParamRegistry& reg, std::uint64_t config_hash,
                          std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash;
  ckpt.step = step;
  for (const auto& [name, tensor] : reg.entries()) {
    ckpt.tensors.emplace(name, tensor.val());
  }
  return ckpt;
}

void restore_params(ParamRegistry& reg, const Checkpoint& ckpt) {
  for (const std::string& name : reg.names()) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      throw DataError(DataError::Kind::Corrupt,
                      "checkpoint lacks parameter \"" + name + "\"");
    }
    ad::Tensor& param = reg.at(name);
    if (it->second.rows() != param.rows() ||
        it->second.cols() != param.cols()) {
      throw DataError(DataError::Kind::Corrupt,
                      "checkpoint parameter \"" + name +
                          "\" has mismatched shape");
    }
    param.mutable_val() = it->second;
  }
}

}  // namespace egosag
